use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use growamq::harness::{self, RunReport, RunSpec, Variant};
use growamq::{Backend, Error};

#[derive(Parser)]
#[command(name = "growamq", version, about = "Measure and verify growable approximate membership filters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// False-positive rate on fresh negative queries, per trial and pooled
    Fpr(Opts),
    /// Space at each power-of-two checkpoint
    Space(Opts),
    /// Timed query run (single-threaded)
    Bench(Opts),
    /// Replay a stream and check for false negatives against an exact set
    Verify(Opts),
}

#[derive(Args)]
struct Opts {
    /// chain, grow, grow-bucketed, grow-deamortized or grow-deletions
    #[arg(long, default_value = "grow", value_parser = parse_variant)]
    variant: Variant,
    /// Target false-positive rate, as a decimal or a fraction like 1/64
    #[arg(long, default_value = "1/64", value_parser = parse_epsilon)]
    epsilon: f64,
    #[arg(long = "universe-bits", default_value_t = 32)]
    universe_bits: u32,
    #[arg(long, default_value_t = 1 << 16)]
    inserts: u64,
    #[arg(long, default_value_t = 1_000_000)]
    queries: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First level of the growable variants
    #[arg(long, default_value_t = growamq::growable_filter::DEFAULT_I0)]
    i0: u32,
    /// Overall failure budget
    #[arg(long, default_value_t = growamq::growable_filter::DEFAULT_DELTA)]
    delta: f64,
    /// Backend for chain links: sigset or bloom
    #[arg(long, default_value = "sigset", value_parser = parse_backend)]
    backend: Backend,
    /// Interleave deletions (generated streams) and enable the deletion layer
    #[arg(long)]
    deletions: bool,
    /// Stream file: one lowercase hex key per line, `-` prefix for deletes
    #[arg(long)]
    input: Option<PathBuf>,
    /// CSV destination (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("not a number: `{s}`"))?,
    };
    Ok(v)
}

impl Opts {
    fn spec(&self) -> RunSpec {
        RunSpec {
            queries: self.queries,
            trials: self.trials,
            seed: self.seed,
            i0: self.i0,
            delta: self.delta,
            backend: self.backend,
            deletions: self.deletions,
            input: self.input.clone(),
            inject_fault: self.inject_fault,
            ..RunSpec::new(self.variant, self.epsilon, self.universe_bits, self.inserts)
        }
    }
}

fn emit(report: &RunReport, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(p) => report.write_csv(p),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(report.to_csv().as_bytes())?;
            so.flush()?;
            Ok(())
        }
    }
}

fn run(cmd: &Cmd) -> Result<bool, Error> {
    let (opts, f): (&Opts, fn(&RunSpec) -> growamq::Result<RunReport>) = match cmd {
        Cmd::Fpr(o) => (o, harness::run_fpr),
        Cmd::Space(o) => (o, harness::run_space),
        Cmd::Bench(o) => (o, harness::run_bench),
        Cmd::Verify(o) => (o, harness::run_verify),
    };
    let report = f(&opts.spec())?;
    emit(&report, opts.out.as_ref())?;
    for fail in &report.failures {
        eprintln!("verify failed: {fail}");
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 3 } else { 2 })
        }
    }
}
