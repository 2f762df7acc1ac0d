//! Scenario files and the scripted runner.
//!
//! Scripted actions bind to macro-cycle numbers: an action for cycle `n` is
//! applied at the start of the `n`-th sense phase. When the system goes
//! quiescent before that, the runner jumps straight to the next scripted
//! cycle.

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::config::ModelConfig;
use crate::kernel::{advance_phase, ChoicePolicy, Chooser, EventId, Kernel, KernelError, Step};
use crate::model::{fingerprint, preset_state, ModuleId, Phase, Preset, SystemState};
use crate::monitor::{fp_hex, Verdict};
use crate::plant::FaultSpec;
use crate::trace::{
    canonical_record, delta, CycleResult, Observer, StopReason, Trace, TraceFooter, TraceHeader, TraceRecord,
};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    HandleUp,
    HandleDown,
    InjectFault { fault: FaultSpec },
    ClearFaults,
    ForceSilent { module: ModuleId },
}

impl Action {
    pub fn event(&self) -> EventId {
        match self {
            Action::HandleUp => EventId::HandleUp,
            Action::HandleDown => EventId::HandleDown,
            Action::InjectFault { fault } => EventId::InjectFault(fault.clone()),
            Action::ClearFaults => EventId::ClearFaults,
            Action::ForceSilent { module } => EventId::ForceSilent(*module),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub cycle: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Random,
    Interactive,
}

fn default_preset() -> Preset {
    Preset::Ground
}
fn default_max_steps() -> u64 {
    2000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_true")]
    pub stop_on_violation: bool,
    #[serde(default)]
    pub config: ModelConfig,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Faults activated at the cycle given by their `from_step`.
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported scenario schema {0} (expected {SCENARIO_SCHEMA})")]
    Schema(u32),
    #[error("field `max_steps`: must be positive")]
    ZeroSteps,
    #[error("field `script[{index}].cycle`: cycles must be nondecreasing")]
    Unordered { index: usize },
}

impl Scenario {
    pub fn new(name: impl Into<String>) -> Self {
        Scenario {
            schema: SCENARIO_SCHEMA,
            name: name.into(),
            preset: Preset::Ground,
            policy: PolicyKind::Random,
            seed: 0,
            max_steps: default_max_steps(),
            stop_on_violation: true,
            config: ModelConfig::default(),
            script: Vec::new(),
            faults: Vec::new(),
        }
    }

    pub fn at(mut self, cycle: u64, action: Action) -> Self {
        self.script.push(ScriptEntry { cycle, action });
        self
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(self.schema));
        }
        if self.max_steps == 0 {
            return Err(ScenarioError::ZeroSteps);
        }
        if let Some(i) = self.script.windows(2).position(|w| w[1].cycle < w[0].cycle) {
            return Err(ScenarioError::Unordered { index: i + 1 });
        }
        Ok(())
    }

    pub fn choice_policy(&self) -> ChoicePolicy {
        match self.policy {
            PolicyKind::Random => ChoicePolicy::SeededRandom { seed: self.seed },
            PolicyKind::Interactive => ChoicePolicy::Interactive,
        }
    }

    /// Script and fault activations merged into one schedule; stable, so
    /// entries of the same cycle keep file order (faults first).
    pub fn schedule(&self) -> Vec<(u64, EventId)> {
        let mut out: Vec<(u64, EventId)> = self
            .faults
            .iter()
            .map(|f| (u64::from(f.from_step), EventId::InjectFault(f.clone())))
            .chain(self.script.iter().map(|e| (e.cycle, e.action.event())))
            .collect();
        out.sort_by_key(|(c, _)| *c);
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("scripted action `{event}` at cycle {cycle}: {source}")]
    Action { event: EventId, cycle: u64, source: KernelError },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_steps: u64,
    pub stop_on_violation: bool,
    /// Record per-step variable deltas in the trace (costly on long runs).
    pub record_deltas: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub final_state: SystemState,
    pub stop_reason: StopReason,
    pub violations: Vec<Verdict>,
    pub cycles: Vec<CycleResult>,
}

impl RunResult {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Run<'a> {
    kernel: &'a Kernel,
    opts: &'a RunOptions,
    s: SystemState,
    step: u64,
    cycle: u64,
    records: Vec<TraceRecord>,
    observer: Observer,
    prev: Option<Map<String, serde_json::Value>>,
    violated: bool,
}

impl Run<'_> {
    fn record(&mut self, event: EventId, phase: Phase, boundary: bool, next: SystemState) {
        self.step += 1;
        let failed = self.observer.observe(self.step, &self.s, &event, &next);
        self.violated |= !failed.is_empty();
        let delta = match self.prev.as_mut() {
            Some(p) => {
                let now = canonical_record(&next);
                let d = delta(p, &now);
                *p = now;
                d
            }
            None => Map::new(),
        };
        self.records.push(TraceRecord {
            step: self.step,
            cycle: self.cycle,
            phase,
            event,
            boundary,
            llc: next.llc,
            fp: fp_hex(fingerprint(&next)),
            delta,
        });
        self.s = next;
    }

    /// Applies every scheduled action due by the current cycle.
    fn apply_due(
        &mut self,
        schedule: &mut std::iter::Peekable<std::vec::IntoIter<(u64, EventId)>>,
    ) -> Result<(), RunError> {
        while let Some((_, ev)) = schedule.next_if(|(c, _)| *c <= self.cycle) {
            let next = self.kernel.apply_external(&self.s, &ev).map_err(|source| RunError::Action {
                event: ev.clone(),
                cycle: self.cycle,
                source,
            })?;
            let phase = self.s.phase;
            self.record(ev, phase, true, next);
        }
        Ok(())
    }
}

/// Runs a schedule of external actions from `initial`, letting `chooser`
/// resolve the nondeterminism inside each phase.
pub fn run_schedule(
    kernel: &Kernel,
    header: TraceHeader,
    initial: SystemState,
    schedule: Vec<(u64, EventId)>,
    chooser: &mut Chooser,
    opts: &RunOptions,
) -> Result<RunResult, RunError> {
    let mut schedule = schedule.into_iter().peekable();
    let mut run = Run {
        kernel,
        opts,
        prev: opts.record_deltas.then(|| canonical_record(&initial)),
        s: initial,
        step: 0,
        cycle: 0,
        records: Vec::new(),
        observer: Observer::default(),
        violated: false,
    };
    run.apply_due(&mut schedule)?;
    let stop_reason = loop {
        if run.violated && run.opts.stop_on_violation {
            break StopReason::Violation;
        }
        if run.step >= run.opts.max_steps {
            break StopReason::StepBudgetExceeded;
        }
        if run.kernel.phase_exhausted(&run.s) {
            if run.kernel.is_quiescent(&run.s) {
                let Some((next_cycle, _)) = schedule.peek() else {
                    break StopReason::Quiescent;
                };
                run.cycle = (*next_cycle).max(run.cycle + 1);
                while !(run.s.phase == Phase::Sense && run.s.fired == 0) {
                    run.s = advance_phase(&run.s);
                }
            } else {
                let wraps = run.s.phase == Phase::Order;
                run.s = advance_phase(&run.s);
                if !wraps {
                    continue;
                }
                run.cycle += 1;
            }
            run.apply_due(&mut schedule)?;
            continue;
        }
        match run.kernel.step(&run.s, chooser) {
            Step::Fired { state, event, phase } => run.record(event, phase, false, state),
            Step::Quiescent => unreachable!("phase has enabled events"),
        }
    };
    let mut observer = run.observer;
    observer.finish(run.step, &run.s);
    let footer = TraceFooter {
        final_fp: fp_hex(fingerprint(&run.s)),
        stop_reason,
        steps: run.step,
        violations: observer.violations.clone(),
        cycles: observer.cycles.clone(),
    };
    Ok(RunResult {
        trace: Trace { header, records: run.records, footer: Some(footer) },
        final_state: run.s,
        stop_reason,
        violations: observer.violations,
        cycles: observer.cycles,
    })
}

/// Runs a scenario as written.
pub fn run(scenario: &Scenario) -> Result<RunResult, RunError> {
    let opts = RunOptions {
        max_steps: scenario.max_steps,
        stop_on_violation: scenario.stop_on_violation,
        record_deltas: true,
    };
    run_with(scenario, &opts)
}

pub fn run_with(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult, RunError> {
    let kernel = Kernel::new(scenario.config.clone());
    let seed = matches!(scenario.policy, PolicyKind::Random).then_some(scenario.seed);
    let header = TraceHeader::new(&scenario.name, seed, scenario.preset, &scenario.config);
    let mut chooser = Chooser::new(scenario.choice_policy());
    run_schedule(&kernel, header, preset_state(scenario.preset), scenario.schedule(), &mut chooser, opts)
}
