//! One interactive session: a kernel, its current state and the command
//! queue semantics of the serve protocol. Transport-agnostic.

use lgs_core::config::ModelConfig;
use lgs_core::kernel::{advance_phase, ChoicePolicy, Chooser, EventId, Kernel, KernelError, Step};
use lgs_core::model::{fingerprint, preset_state, Phase, Preset, SystemState};
use lgs_core::monitor::{self, fp_hex, Verdict};
use lgs_core::plant::FaultSpec;
use lgs_core::trace::{canonical_record, CycleResult, Observer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command {
        cmd: String,
        #[serde(default)]
        args: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub safety: Vec<Verdict>,
    pub cycles: Vec<CycleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub paused: bool,
    pub quiescent: bool,
    pub cycle: u64,
    pub policy: ChoicePolicy,
    pub fp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        snapshot: serde_json::Map<String, Value>,
        verdicts: Verdicts,
        enabled_events: Vec<String>,
        llc: u64,
        status: Status,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a JSON command message.
    BadMessage,
    /// Unknown `cmd`.
    BadCommand,
    /// Missing or malformed `args`.
    BadArgs,
    /// Handle moved to the position it already holds.
    NoopHandleMove,
    /// The kernel refused the action.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{detail}")]
pub struct CommandError {
    pub code: ErrorCode,
    pub detail: String,
}

impl CommandError {
    fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        CommandError { code, detail: detail.into() }
    }

    pub fn into_message(self) -> ServerMessage {
        ServerMessage::Error { code: self.code, detail: self.detail }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultArgs {
    fault: Value,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetArgs {
    #[serde(default)]
    preset: Option<Preset>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepArgs {
    /// Fire a single micro-step instead of a whole macro-cycle.
    #[serde(default)]
    micro: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
enum PolicyArgs {
    Interactive,
    Random { seed: u64 },
}

pub struct Session {
    kernel: Kernel,
    preset: Preset,
    state: SystemState,
    chooser: Chooser,
    observer: Observer,
    step: u64,
    cycle: u64,
    pub paused: bool,
}

impl Session {
    pub fn new(preset: Preset, cfg: ModelConfig) -> Self {
        Session {
            kernel: Kernel::new(cfg),
            preset,
            state: preset_state(preset),
            chooser: Chooser::new(ChoicePolicy::Interactive),
            observer: Observer::default(),
            step: 0,
            cycle: 0,
            paused: false,
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn is_quiescent(&self) -> bool {
        self.kernel.is_quiescent(&self.state)
    }

    fn fire(&mut self, event: EventId, next: SystemState) {
        self.step += 1;
        self.observer.observe(self.step, &self.state, &event, &next);
        self.state = next;
    }

    /// Fires one micro-step, crossing exhausted phases. Returns false when
    /// nothing is enabled anywhere.
    pub fn step_micro(&mut self) -> bool {
        let wraps_before = self.state.phase;
        match self.kernel.step(&self.state, &mut self.chooser) {
            Step::Fired { state, event, phase } => {
                if phase_pos(phase) < phase_pos(wraps_before) {
                    self.cycle += 1;
                }
                self.fire(event, state);
                true
            }
            Step::Quiescent => false,
        }
    }

    /// Runs the rest of the current macro-cycle; the state ends on a fresh
    /// sense phase. Returns the number of events fired.
    pub fn run_cycle(&mut self) -> usize {
        if self.is_quiescent() {
            return 0;
        }
        let mut fired = 0;
        loop {
            if self.kernel.phase_exhausted(&self.state) {
                let wraps = self.state.phase == Phase::Order;
                self.state = advance_phase(&self.state);
                if wraps {
                    self.cycle += 1;
                    return fired;
                }
                continue;
            }
            match self.kernel.step(&self.state, &mut self.chooser) {
                Step::Fired { state, event, .. } => {
                    self.fire(event, state);
                    fired += 1;
                }
                Step::Quiescent => return fired,
            }
        }
    }

    /// Brings a state left mid-cycle by micro-steps back to a boundary.
    fn align(&mut self) {
        if self.state.phase == Phase::Sense && self.state.fired == 0 {
            return;
        }
        self.run_cycle();
        while !(self.state.phase == Phase::Sense && self.state.fired == 0) {
            self.state = advance_phase(&self.state);
        }
    }

    fn external(&mut self, event: EventId) -> Result<(), CommandError> {
        self.align();
        let next = self.kernel.apply_external(&self.state, &event).map_err(|e| match e {
            KernelError::Handle(h) => CommandError::new(ErrorCode::NoopHandleMove, h.to_string()),
            other => CommandError::new(ErrorCode::Rejected, other.to_string()),
        })?;
        self.fire(event, next);
        Ok(())
    }

    /// Applies one protocol command. Commands are scripted actions: they
    /// land on a macro-cycle boundary.
    pub fn command(&mut self, cmd: &str, args: &Value) -> Result<(), CommandError> {
        match cmd {
            "handle_up" => self.external(EventId::HandleUp),
            "handle_down" => self.external(EventId::HandleDown),
            "inject_fault" => {
                let a: FaultArgs = parse_args(args)?;
                let fault = match a.fault {
                    Value::String(s) => s.parse::<FaultSpec>().map_err(|e| bad_args(e.to_string()))?,
                    v => serde_json::from_value::<FaultSpec>(v).map_err(|e| bad_args(e.to_string()))?,
                };
                self.external(EventId::InjectFault(fault))
            }
            "clear_faults" => self.external(EventId::ClearFaults),
            "pause" => {
                self.paused = true;
                Ok(())
            }
            "resume" => {
                self.paused = false;
                Ok(())
            }
            "step_once" => {
                let a: StepArgs = parse_args(args)?;
                if a.micro {
                    self.step_micro();
                } else {
                    self.run_cycle();
                }
                Ok(())
            }
            "reset" => {
                let a: ResetArgs = parse_args(args)?;
                let preset = a.preset.unwrap_or(self.preset);
                *self = Session {
                    paused: self.paused,
                    chooser: Chooser::new(self.chooser.policy().clone()),
                    ..Session::new(preset, self.kernel.cfg.clone())
                };
                Ok(())
            }
            "set_policy" => {
                let policy = match parse_args::<PolicyArgs>(args)? {
                    PolicyArgs::Interactive => ChoicePolicy::Interactive,
                    PolicyArgs::Random { seed } => ChoicePolicy::SeededRandom { seed },
                };
                self.chooser = Chooser::new(policy);
                Ok(())
            }
            other => Err(CommandError::new(ErrorCode::BadCommand, format!("unknown command `{other}`"))),
        }
    }

    /// Decodes and applies a raw client message.
    pub fn handle_text(&mut self, text: &str) -> Result<(), CommandError> {
        let msg: ClientMessage =
            serde_json::from_str(text).map_err(|e| CommandError::new(ErrorCode::BadMessage, e.to_string()))?;
        let ClientMessage::Command { cmd, args } = msg;
        self.command(&cmd, &args)
    }

    /// Events the next micro-step could fire, plus the legal pilot move.
    pub fn enabled_events(&self) -> Vec<String> {
        let mut t = self.state.clone();
        let mut out = Vec::new();
        for _ in 0..4 {
            let evs = self.kernel.enabled_events(&t, t.phase);
            if !evs.is_empty() {
                out.extend(evs.iter().map(ToString::to_string));
                break;
            }
            t = advance_phase(&t);
        }
        out.push(EventId::handle(self.state.internals.order.opposite()).to_string());
        out
    }

    pub fn push(&self) -> ServerMessage {
        ServerMessage::State {
            snapshot: canonical_record(&self.state),
            verdicts: Verdicts { safety: monitor::check_safety(&self.state), cycles: self.observer.cycles.clone() },
            enabled_events: self.enabled_events(),
            llc: self.state.llc,
            status: Status {
                paused: self.paused,
                quiescent: self.is_quiescent(),
                cycle: self.cycle,
                policy: self.chooser.policy().clone(),
                fp: fp_hex(fingerprint(&self.state)),
            },
        }
    }
}

fn phase_pos(p: Phase) -> usize {
    Phase::ALL.iter().position(|q| *q == p).unwrap_or(0)
}

fn bad_args(detail: String) -> CommandError {
    CommandError::new(ErrorCode::BadArgs, detail)
}

fn parse_args<T: serde::de::DeserializeOwned>(args: &Value) -> Result<T, CommandError> {
    let v = if args.is_null() { json!({}) } else { args.clone() };
    serde_json::from_value(v).map_err(|e| bad_args(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lgs_core::model::HandleState;

    #[test]
    fn handle_up_shows_retraction_step_one() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        s.command("handle_up", &Value::Null).unwrap();
        assert_eq!(s.state().internals.order, HandleState::Up);
        assert_eq!(s.state().internals.seq.next_rt_seq, 1);
    }

    #[test]
    fn repeated_handle_move_is_an_error() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        let err = s.command("handle_down", &Value::Null).unwrap_err();
        assert_eq!(err.code, ErrorCode::NoopHandleMove);
    }

    #[test]
    fn duplicate_fault_is_idempotent() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        let args = json!({"fault": "gear_extended/1/FG/StuckWrong"});
        s.command("inject_fault", &args).unwrap();
        let once = s.state().plant.faults.clone();
        s.command("inject_fault", &args).unwrap();
        assert_eq!(s.state().plant.faults, once);
        assert_eq!(once.len(), 1);
    }

    #[test]
    fn unknown_command_and_garbage() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        assert_eq!(s.handle_text(r#"{"type":"command","cmd":"fly"}"#).unwrap_err().code, ErrorCode::BadCommand);
        assert_eq!(s.handle_text("not json").unwrap_err().code, ErrorCode::BadMessage);
        assert_eq!(
            s.handle_text(r#"{"type":"command","cmd":"inject_fault","args":{"fault":"nope"}}"#).unwrap_err().code,
            ErrorCode::BadArgs
        );
    }

    #[test]
    fn cycles_run_to_completion() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        s.command("handle_up", &Value::Null).unwrap();
        let mut guard = 0;
        while !s.is_quiescent() {
            s.run_cycle();
            guard += 1;
            assert!(guard < 100);
        }
        assert_eq!(s.observer.cycles.len(), 1);
        assert!(s.observer.violations.is_empty());
    }

    #[test]
    fn micro_steps_then_command_realigns() {
        let mut s = Session::new(Preset::Ground, ModelConfig::default());
        s.command("handle_up", &Value::Null).unwrap();
        s.command("step_once", &json!({"micro": true})).unwrap();
        s.command("step_once", &json!({"micro": true})).unwrap();
        s.command("handle_down", &Value::Null).unwrap();
        assert_eq!(s.state().internals.order, HandleState::Down);
    }
}
