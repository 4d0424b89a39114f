use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paysec::crypto::{derive_seed, CertificateAuthority, RsaKeyPair, MIN_KEY_BITS};
use paysec::demo::{run_demo, DEMOS};
use paysec::simnet::{self, load_scenario, shipped, Transcript};
use paysec::Error;

const EXIT_REJECTED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "paysec", version, about = "Payment-security simulator and protocol demos")]
struct Cli {
    /// Print transcripts and extra detail.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an RSA key pair, and optionally a certificate for it.
    Keygen {
        #[arg(long, default_value_t = 2048)]
        bits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write `<out>.cert`, issued by a CA derived from the same seed.
        #[arg(long)]
        subject: Option<String>,
    },
    /// Run a scenario file (or the name of a shipped scenario).
    Run {
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the transcript.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Happy path plus one attack for a protocol.
    Demo {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(DEMOS))]
        protocol: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Summarize a transcript file.
    Inspect { transcript: PathBuf },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Keygen {
            bits,
            seed,
            out,
            subject,
        } => keygen(bits, seed, &out, subject.as_deref()),
        Command::Run { scenario, seed, out } => run(&scenario, seed, out.as_deref(), cli.verbose),
        Command::Demo { protocol, seed } => demo(&protocol, seed),
        Command::Inspect { transcript } => inspect(&transcript, cli.verbose),
    }
}

fn keygen(bits: usize, seed: u64, out: &Path, subject: Option<&str>) -> ExitCode {
    if bits < MIN_KEY_BITS {
        return usage(format!("--bits must be at least {MIN_KEY_BITS}"));
    }
    let keys = match RsaKeyPair::generate(bits, seed) {
        Ok(k) => k,
        Err(e) => return usage(e),
    };
    if let Err(e) = fs::write(out, keys.to_key_file()) {
        return usage(format!("cannot write {}: {e}", out.display()));
    }
    println!(
        "wrote {} ({bits} bits, fingerprint {})",
        out.display(),
        keys.public().fingerprint().to_hex()
    );
    if let Some(subject) = subject {
        let ca_keys = match RsaKeyPair::generate(bits, derive_seed(seed, "ca")) {
            Ok(k) => k,
            Err(e) => return usage(e),
        };
        let cert = CertificateAuthority::new("ca", ca_keys).issue(subject, &keys.public());
        let mut path = out.as_os_str().to_owned();
        path.push(".cert");
        let path = PathBuf::from(path);
        if let Err(e) = fs::write(&path, cert.to_cert_file()) {
            return usage(format!("cannot write {}: {e}", path.display()));
        }
        println!("wrote {} (subject {subject})", path.display());
    }
    ExitCode::SUCCESS
}

fn run(scenario: &str, seed: Option<u64>, out: Option<&Path>, verbose: bool) -> ExitCode {
    let text = match fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => match shipped(scenario) {
            Some(t) => t.to_string(),
            None => return usage(format!("cannot read scenario {scenario}: {e}")),
        },
    };
    let transcript = match load_scenario(&text, seed).and_then(simnet::run) {
        Ok(t) => t,
        Err(e @ Error::Parse { .. }) => return usage(format!("{scenario}: {e}")),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_REJECTED);
        }
    };
    if let Some(out) = out {
        if let Err(e) = fs::write(out, transcript.to_text()) {
            return usage(format!("cannot write {}: {e}", out.display()));
        }
    }
    if verbose {
        print!("{}", transcript.to_text());
    }
    report(&transcript)
}

fn report(transcript: &Transcript) -> ExitCode {
    let summary = transcript.summary();
    println!("{summary}");
    if summary.total_rejects() > 0 {
        ExitCode::from(EXIT_REJECTED)
    } else {
        ExitCode::SUCCESS
    }
}

fn demo(protocol: &str, seed: u64) -> ExitCode {
    match run_demo(protocol, seed) {
        Ok(r) => {
            println!("{r}");
            ExitCode::SUCCESS
        }
        Err(e) => usage(e),
    }
}

fn inspect(path: &Path, verbose: bool) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", path.display())),
    };
    let transcript = match Transcript::parse(&text) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", path.display())),
    };
    if transcript.to_text() != text {
        return usage(format!("{} is not in canonical transcript form", path.display()));
    }
    println!("records: {}", transcript.len());
    for ((from, to), blocks) in transcript.link_totals() {
        println!("link {from}->{to}: {blocks} blocks");
    }
    if verbose {
        print!("{}", transcript.to_text());
    }
    report(&transcript)
}
