//! Command-line front end: run a scenario, audit a trace, generate
//! scenario files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::IntoDeserializer;
use serde::Deserialize;

use crate::adversary::{Behavior, ScheduleError};
use crate::crypto::NodeId;
use crate::engine::report::RunReport;
use crate::engine::scenario::{ConfigError, CorruptSpec, Mode, Scenario, SetupError};
use crate::engine::trace::{audit, AuditError};
use crate::engine::{run, EngineError};

pub const EXIT_OK: u8 = 0;
/// Unreadable input or unwritable output.
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CONFORMING: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "slidesim", version, about = "Deterministic simulator for Slide routing and its authenticated extension")]
pub struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the protocol mode: slide or auth.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario; writes report.json, and trace.ndjson with --trace.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Replay a trace and re-check buffer invariants and potential accounting.
    Audit { trace: PathBuf },
    /// Print a validated scenario file.
    Gen {
        kind: GenKind,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        transmissions: u64,
        /// Churn flip probability per edge and round.
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        /// Behavior of the corrupt node in an attack scenario.
        #[arg(long, value_parser = parse_behavior, default_value = "deleter")]
        behavior: Behavior,
        /// Corrupt node in an attack scenario.
        #[arg(long, default_value_t = 1)]
        node: NodeId,
        /// Churn backbone as comma-separated node ids.
        #[arg(long, value_delimiter = ',')]
        backbone: Option<Vec<NodeId>>,
        /// Extra corruption as NODE:BEHAVIOR, repeatable.
        #[arg(long, value_parser = parse_corrupt)]
        corrupt: Vec<CorruptSpec>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Honest,
    Churn,
    Attack,
    Mixed,
}

pub fn parse_behavior(s: &str) -> Result<Behavior, String> {
    Behavior::deserialize(s.into_deserializer()).map_err(|e: serde::de::value::Error| e.to_string())
}

fn parse_corrupt(s: &str) -> Result<CorruptSpec, String> {
    let (node, behavior) = s.split_once(':').ok_or_else(|| format!("expected NODE:BEHAVIOR, got {s:?}"))?;
    let node = node.parse().map_err(|_| format!("bad node id {node:?}"))?;
    Ok(CorruptSpec { node, behavior: parse_behavior(behavior)?, round: 1 })
}

/// Exit code for a scenario that cannot run.
pub fn setup_exit(e: &SetupError) -> u8 {
    match e {
        SetupError::Conforming(_) | SetupError::Config(ConfigError::Schedule(ScheduleError::CorruptBackbone(_))) => EXIT_CONFORMING,
        SetupError::Config(ConfigError::Io(_)) => EXIT_IO,
        SetupError::Config(_) => EXIT_CONFIG,
    }
}

/// Exit code for a finished run.
pub fn report_exit(r: &RunReport) -> u8 {
    if r.violations.is_empty() && r.output_prefix_ok {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}

fn apply_overrides(s: &mut Scenario, seed: Option<u64>, mode: Option<Mode>) {
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(mode) = mode {
        s.mode = mode;
    }
}

pub fn summary(r: &RunReport) -> String {
    let mut out = format!(
        "{} [{}] n={} D={} rounds={} delivered={}/{} prefix={}\n",
        r.name,
        r.mode,
        r.n,
        r.d,
        r.rounds,
        r.delivered,
        r.transmissions.len(),
        if r.output_prefix_ok { "ok" } else { "MISMATCH" },
    );
    for t in r.transmissions.iter().filter(|t| t.outcome != "decoded") {
        let reason = t.reason.map(|x| format!(" {x:?}")).unwrap_or_default();
        out.push_str(&format!("  tx {} message {}: {}{}\n", t.tx, t.message, t.outcome, reason));
    }
    for e in &r.eliminations {
        out.push_str(&format!("  eliminated node {} at round {} (tx {}): {}\n", e.node, e.g, e.tx, e.verdict.inequality));
    }
    for v in r.violations.iter().take(10) {
        out.push_str(&format!("  violation at round {}: {}\n", v.g, v.what));
    }
    if r.violations.len() > 10 {
        out.push_str(&format!("  ... {} violations in total\n", r.violations.len()));
    }
    out
}

fn cmd_run(path: &Path, out: &Path, trace: bool, seed: Option<u64>, mode: Option<Mode>) -> u8 {
    let mut s = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return setup_exit(&SetupError::Config(e));
        }
    };
    apply_overrides(&mut s, seed, mode);
    let res = match s.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return setup_exit(&e);
        }
    };
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_IO;
    }
    let result = if trace {
        File::create(out.join("trace.ndjson")).map_err(EngineError::from).and_then(|f| {
            let mut w = BufWriter::new(f);
            let r = run(&res, Some(&mut w))?;
            w.flush()?;
            Ok(r)
        })
    } else {
        run(&res, None)
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    if let Err(e) = fs::write(out.join("report.json"), report.to_json() + "\n") {
        eprintln!("error: cannot write report: {e}");
        return EXIT_IO;
    }
    print!("{}", summary(&report));
    report_exit(&report)
}

fn cmd_audit(path: &Path) -> u8 {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", path.display());
            return EXIT_IO;
        }
    };
    match audit(BufReader::new(f)) {
        Ok(s) => {
            println!("audited {} rounds over {} transmissions", s.rounds, s.transmissions);
            for f in &s.findings {
                println!("  round {}: {}", f.g, f.what);
            }
            if s.findings.is_empty() {
                println!("all checks passed");
                EXIT_OK
            } else {
                EXIT_INVARIANT
            }
        }
        Err(AuditError::Io(e)) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Build a scenario for `gen`. Validation is left to the caller.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    kind: GenKind,
    n: usize,
    transmissions: u64,
    p: f64,
    behavior: Behavior,
    node: NodeId,
    backbone: Option<Vec<NodeId>>,
    corrupt: Vec<CorruptSpec>,
    seed: u64,
    mode: Option<Mode>,
) -> Scenario {
    let mut s = match kind {
        GenKind::Honest => Scenario::honest(n, mode.unwrap_or_default(), transmissions, seed),
        GenKind::Churn => Scenario::churn(n, mode.unwrap_or_default(), p, transmissions, seed, backbone),
        GenKind::Attack => Scenario::attack(n, behavior, node, transmissions, seed),
        GenKind::Mixed => Scenario::mixed(n, transmissions, seed),
    };
    if !corrupt.is_empty() {
        s.mode = Mode::Auth;
        s.corrupt.extend(corrupt);
    }
    if let Some(m) = mode {
        s.mode = m;
    }
    s
}

pub fn main_with(cli: Cli) -> u8 {
    match cli.command {
        Command::Run { scenario, out, trace } => cmd_run(&scenario, &out, trace, cli.seed, cli.mode),
        Command::Audit { trace } => cmd_audit(&trace),
        Command::Gen { kind, n, transmissions, p, behavior, node, backbone, corrupt, out } => {
            let s = generate(kind, n, transmissions, p, behavior, node, backbone, corrupt, cli.seed.unwrap_or(1), cli.mode);
            if let Err(e) = s.resolve() {
                eprintln!("error: refusing to emit scenario: {e}");
                return setup_exit(&e);
            }
            let text = s.to_toml();
            match out {
                Some(path) => {
                    if let Err(e) = fs::write(&path, text) {
                        eprintln!("error: cannot write {}: {e}", path.display());
                        return EXIT_IO;
                    }
                }
                None => print!("{text}"),
            }
            EXIT_OK
        }
    }
}
