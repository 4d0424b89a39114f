use rand::Rng;

use super::{Hop, MixNode};
use crate::crypto::{derive_seed, RsaKeyPair};
use crate::error::{Error, Result};

/// A rows × cols grid of mixes. A path takes one node from each column.
#[derive(Debug)]
pub struct MixMatrix {
    rows: usize,
    cols: usize,
    /// Column-major: `grid[col][row]`.
    grid: Vec<Vec<MixNode>>,
}

impl MixMatrix {
    /// Node `(row, col)` gets id `M<row>.<col>` and a key derived from `seed`.
    pub fn generate(rows: usize, cols: usize, key_bits: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("mix matrix must be non-empty"));
        }
        let grid = (0..cols)
            .map(|c| {
                (0..rows)
                    .map(|r| {
                        let id = format!("M{r}.{c}");
                        let keys = RsaKeyPair::generate(key_bits, derive_seed(seed, &id))?;
                        Ok(MixNode::new(id, keys))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, cols, grid })
    }

    pub fn from_columns(grid: Vec<Vec<MixNode>>) -> Result<Self> {
        let cols = grid.len();
        let rows = grid.first().map_or(0, Vec::len);
        if cols == 0 || rows == 0 || grid.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("mix matrix must be a non-empty rectangle"));
        }
        Ok(Self { rows, cols, grid })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn node(&self, row: usize, col: usize) -> &MixNode {
        &self.grid[col][row]
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut MixNode> {
        self.grid.iter_mut().flatten().find(|m| m.id == id)
    }

    /// Uniform, independent row choice for every column.
    pub fn choose_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        self.choose_rows(rng)
            .into_iter()
            .enumerate()
            .map(|(c, r)| self.grid[c][r].id.clone())
            .collect()
    }

    pub fn choose_rows<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.cols).map(|_| rng.gen_range(0..self.rows)).collect()
    }

    pub fn hops(&self, ids: &[String]) -> Result<Vec<Hop>> {
        ids.iter()
            .map(|id| {
                self.grid
                    .iter()
                    .flatten()
                    .find(|m| &m.id == id)
                    .map(MixNode::hop)
                    .ok_or_else(|| Error::invalid(format!("no mix `{id}` in matrix")))
            })
            .collect()
    }
}
