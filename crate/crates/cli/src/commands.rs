//! The `simulate`, `explore` and `check` subcommands. Each writes its
//! human-readable summary to `out` and returns the process exit status.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use lgs_core::config::{ModelConfig, Mutant};
use lgs_core::explorer::{self, counterexample_trace, minimize, Counterexample, ExploreConfig, ExploreReport};
use lgs_core::model::{ModuleId, Preset};
use lgs_core::monitor::{Requirement, Verdict};
use lgs_core::plant::{FaultMode, FaultSpec};
use lgs_core::scenario::{self, Scenario};
use lgs_core::trace::{audit, CycleResult, CycleStatus, Trace};
use serde::Serialize;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Violation = 1,
    Parse = 2,
    Internal = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed input file or contradictory flags.
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Input(_) => Exit::Parse,
            CliError::Io { .. } => Exit::Internal,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    // An unreadable input is the caller's mistake, like a malformed one.
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn out_err(source: io::Error) -> CliError {
    CliError::Io { path: PathBuf::from("<stdout>"), source }
}

fn parse_mutant(s: &str) -> Result<Mutant, String> {
    s.parse::<Mutant>().map_err(|e| e.to_string())
}

fn parse_module(s: &str) -> Result<ModuleId, String> {
    s.parse::<u8>().ok().and_then(ModuleId::new).ok_or_else(|| format!("module must be 1 or 2, got `{s}`"))
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse::<Preset>().map_err(|e| e.to_string())
}

/// Reconciles a mutant named in a file with the `--mutant` flag: mutants
/// only run when asked for explicitly on the command line.
fn gate_mutant(from_file: Option<Mutant>, flag: Option<Mutant>) -> Result<Option<Mutant>, CliError> {
    match (from_file, flag) {
        (Some(m), None) => {
            Err(CliError::Input(format!("configuration enables mutant `{m}`; pass --mutant {m} to run it")))
        }
        (Some(a), Some(b)) if a != b => {
            Err(CliError::Input(format!("configuration enables mutant `{a}` but --mutant is `{b}`")))
        }
        (_, flag) => Ok(flag),
    }
}

fn print_cycles(out: &mut dyn Write, cycles: &[CycleResult]) -> io::Result<()> {
    for c in cycles {
        let end = c.requirement.markers().map_or("?", |(_, end, _)| end.as_str());
        match c.status {
            CycleStatus::Holds => writeln!(out, "step {}: {end} stamped, {} holds", c.step, c.requirement)?,
            CycleStatus::Fails => {
                writeln!(out, "step {}: {end} stamped, {} FAILS {:?}", c.step, c.requirement, c.witness)?
            }
            CycleStatus::Aborted => {
                writeln!(out, "step {}: {} cycle aborted by a handle inversion", c.step, c.requirement)?
            }
            CycleStatus::Incomplete => {
                writeln!(out, "step {}: {} cycle incomplete when the run ended", c.step, c.requirement)?
            }
        }
    }
    Ok(())
}

fn print_violations(out: &mut dyn Write, violations: &[Verdict]) -> io::Result<()> {
    for v in violations {
        writeln!(out, "VIOLATION {} at step {}", v.requirement, v.position.unwrap_or(0))?;
    }
    Ok(())
}

fn verdict_exit(violations: &[Verdict], cycles: &[CycleResult]) -> Exit {
    if violations.is_empty() && cycles.iter().all(|c| c.status != CycleStatus::Fails) {
        Exit::Ok
    } else {
        Exit::Violation
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the micro-step budget.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Trace output (JSON lines); defaults to `<scenario name>.trace.jsonl`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Run with a seeded defect; the trace is watermarked.
    #[arg(long, value_parser = parse_mutant)]
    pub mutant: Option<Mutant>,
}

pub fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let text = read(&args.scenario)?;
    let mut sc = Scenario::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.scenario.display())))?;
    sc.config.mutant = gate_mutant(sc.config.mutant, args.mutant)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(steps) = args.steps {
        if steps == 0 {
            return Err(CliError::Input("--steps must be positive".into()));
        }
        sc.max_steps = steps;
    }
    let r = scenario::run(&sc).map_err(|e| CliError::Input(format!("{}: {e}", args.scenario.display())))?;
    let trace_path =
        args.trace.clone().unwrap_or_else(|| PathBuf::from(format!("{}.trace.jsonl", file_stem(&sc.name))));
    write(&trace_path, &r.trace.to_jsonl())?;

    (|| -> io::Result<()> {
        if let Some(w) = &r.trace.header.watermark {
            writeln!(out, "{w}")?;
        }
        writeln!(out, "scenario {}: {} steps, stopped: {:?}", sc.name, r.trace.records.len(), r.stop_reason)?;
        print_cycles(out, &r.cycles)?;
        print_violations(out, &r.violations)?;
        if r.final_state.outputs.anomaly {
            writeln!(out, "anomaly latched: red light on, orders frozen")?;
        }
        writeln!(out, "trace: {}", trace_path.display())
    })()
    .map_err(out_err)?;
    Ok(verdict_exit(&r.violations, &r.cycles))
}

fn file_stem(name: &str) -> String {
    let s: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "run".into()
    } else {
        s
    }
}

/// Faults the explorer may combine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultEnvelope(pub Vec<FaultSpec>);

/// `none`, `all` (every channel stuck wrong), `all:<mode>`, or a
/// comma-separated list of fault specs.
pub fn parse_fault_envelope(s: &str) -> Result<FaultEnvelope, String> {
    parse_faults(s).map(FaultEnvelope)
}

fn parse_faults(s: &str) -> Result<Vec<FaultSpec>, String> {
    match s.trim() {
        "" | "none" => Ok(Vec::new()),
        "all" => Ok(FaultSpec::all_channels(FaultMode::StuckWrong)),
        other => {
            if let Some(mode) = other.strip_prefix("all:") {
                let mode: FaultMode = mode.parse().map_err(|e: lgs_core::model::UnknownName| e.to_string())?;
                return Ok(FaultSpec::all_channels(mode));
            }
            other.split(',').map(|f| f.trim().parse::<FaultSpec>().map_err(|e| format!("`{f}`: {e}"))).collect()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    /// Depth bound in events; unbounded by default.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Handle moves allowed along a path.
    #[arg(long, default_value_t = 2)]
    pub pilot_budget: u8,
    /// Fault envelope: `none`, `all`, `all:<mode>` or `sensor/ch[/dev]/mode,...`.
    #[arg(long, default_value = "none", value_parser = parse_fault_envelope)]
    pub faults: FaultEnvelope,
    /// Largest fault subset tried; defaults to 1 when an envelope is given.
    #[arg(long)]
    pub f_max: Option<usize>,
    /// Explore a seeded defect; the report is watermarked.
    #[arg(long, value_parser = parse_mutant)]
    pub mutant: Option<Mutant>,
    /// Force a computing module silent from the start.
    #[arg(long, value_parser = parse_module)]
    pub silent_module: Option<ModuleId>,
    #[arg(long, default_value = "ground", value_parser = parse_preset)]
    pub preset: Preset,
    /// Stop after this many distinct states (coverage is then partial).
    #[arg(long, default_value_t = 5_000_000)]
    pub max_states: usize,
    /// Expand every path, without state deduplication.
    #[arg(long)]
    pub no_dedupe: bool,
    /// Report output (JSON).
    #[arg(long, default_value = "explore-report.json")]
    pub report: PathBuf,
    /// Also write each minimized counterexample as a trace file here.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizedCounterexample {
    pub requirement: Requirement,
    pub depth: u32,
    pub fingerprint: String,
    pub events: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreFile {
    pub schema: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub watermark: Option<String>,
    pub verdict: &'static str,
    pub config: ExploreConfig,
    pub report: ExploreReport,
    pub minimized: Vec<MinimizedCounterexample>,
}

impl ExploreArgs {
    pub fn config(&self) -> Result<ExploreConfig, CliError> {
        let f_max = self.f_max.unwrap_or(usize::from(!self.faults.0.is_empty()));
        Ok(ExploreConfig {
            max_depth: self.depth,
            pilot_budget: self.pilot_budget,
            fault_envelope: self.faults.0.clone(),
            f_max,
            model: ModelConfig { mutant: self.mutant, ..Default::default() },
            silent_module: self.silent_module,
            preset: self.preset,
            prefix: Vec::new(),
            dedupe: !self.no_dedupe,
            max_states: self.max_states,
            parallel: true,
        })
    }
}

fn coverage(r: &ExploreReport, depth: Option<u32>) -> String {
    if r.budget_exceeded {
        "state budget exceeded: coverage is partial".into()
    } else if r.depth_bound_hit {
        format!("frontier exhausted within depth {}", depth.unwrap_or(0))
    } else {
        "frontier exhausted".into()
    }
}

pub fn explore(args: &ExploreArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let cfg = args.config()?;
    let report = explorer::explore(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(dir) = &args.traces {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    }
    let mut minimized = Vec::new();
    for c in &report.violations {
        // Minimization replays strictly; a failure here is a kernel bug.
        let m: Counterexample = minimize(&cfg.model, cfg.preset, c).unwrap_or_else(|_| c.clone());
        let trace = match &args.traces {
            Some(dir) => {
                let path = dir.join(format!("counterexample-{}.trace.jsonl", m.requirement));
                let t = counterexample_trace(&cfg.model, cfg.preset, &m)
                    .map_err(|e| CliError::Io { path: path.clone(), source: io::Error::other(e.to_string()) })?;
                write(&path, &t.to_jsonl())?;
                Some(path)
            }
            None => None,
        };
        minimized.push(MinimizedCounterexample {
            requirement: m.requirement,
            depth: m.depth,
            fingerprint: m.fingerprint.clone(),
            events: m.events.iter().map(|(e, p)| format!("{p}:{e}")).collect(),
            trace,
        });
    }
    let exit = if report.ok() { Exit::Ok } else { Exit::Violation };
    let file = ExploreFile {
        schema: REPORT_SCHEMA,
        watermark: cfg.model.mutant.map(|m| format!("MUTANT {m}: not nominal evidence")),
        verdict: if exit == Exit::Ok { "ok" } else { "violation" },
        config: cfg.clone(),
        report,
        minimized,
    };
    write(&args.report, &serde_json::to_string_pretty(&file).expect("report serializes"))?;

    (|| -> io::Result<()> {
        if let Some(w) = &file.watermark {
            writeln!(out, "{w}")?;
        }
        let r = &file.report;
        writeln!(
            out,
            "{} states, {} edges, depth {}, {} quiescent, {} stalled cycles",
            r.states_visited, r.edges_fired, r.max_depth_reached, r.quiescent_states, r.stalled_cycles
        )?;
        writeln!(out, "{}", coverage(r, args.depth))?;
        for m in &file.minimized {
            writeln!(out, "VIOLATION {} (counterexample of {} events)", m.requirement, m.depth)?;
        }
        writeln!(out, "report: {}", args.report.display())
    })()
    .map_err(out_err)?;
    Ok(exit)
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Trace file to replay and monitor.
    #[arg(long)]
    pub trace: PathBuf,
}

pub fn check(args: &CheckArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let text = read(&args.trace)?;
    let trace = Trace::from_jsonl(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.trace.display())))?;
    let wrote = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(out_err);
    if let Some(w) = &trace.header.watermark {
        wrote(out, w.clone())?;
    }
    let a = match audit(&trace) {
        Ok(a) => a,
        Err(e) => {
            wrote(out, format!("REPLAY FAILED: {e}"))?;
            return Ok(Exit::Violation);
        }
    };
    wrote(out, format!("replayed {} steps: fingerprints match", a.steps))?;
    print_cycles(out, &a.cycles).map_err(out_err)?;
    print_violations(out, &a.violations).map_err(out_err)?;
    if let Some(f) = &trace.footer {
        if f.violations != a.violations || f.cycles != a.cycles {
            wrote(out, "FOOTER MISMATCH: recorded verdicts differ from the replayed ones".into())?;
            return Ok(Exit::Violation);
        }
    }
    Ok(verdict_exit(&a.violations, &a.cycles))
}
