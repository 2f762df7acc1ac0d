//! Canonical flat state record, line-delimited traces, and replay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{ModelConfig, CATALOG_VERSION};
use crate::kernel::{EventId, Kernel, KernelError};
use crate::model::{
    fingerprint, preset_state, ChannelId, DoorId, GearId, HandleState, ModuleId, ObsEvent, OrderOutputs, Phase, Preset,
    SensedInputs, SensorName, StateOutputs, SystemState,
};
use crate::monitor::{self, fp_hex, ObservationLog, Requirement, Verdict, Witness};

pub const TRACE_SCHEMA: u32 = 1;

fn push_inputs(m: &mut Map<String, Value>, prefix: &str, inputs: &SensedInputs) {
    for c in ChannelId::ALL {
        m.insert(format!("{prefix}handle.{c}"), json!(inputs.handle[c.index()]));
    }
    for c in ChannelId::ALL {
        m.insert(format!("{prefix}analogical_switch.{c}"), json!(inputs.analogical_switch[c.index()]));
    }
    for &sensor in &SensorName::ALL[2..] {
        let map = inputs.device_map(sensor).expect("per-device sensor");
        for c in ChannelId::ALL {
            for dev in sensor.devices() {
                m.insert(format!("{prefix}{sensor}.{c}.{dev}"), json!(map[c.index()][dev.index()]));
            }
        }
    }
}

fn push_orders(m: &mut Map<String, Value>, prefix: &str, o: &OrderOutputs) {
    m.insert(format!("{prefix}general_EV"), json!(o.general_ev));
    m.insert(format!("{prefix}open_EV"), json!(o.open_ev));
    m.insert(format!("{prefix}close_EV"), json!(o.close_ev));
    m.insert(format!("{prefix}extend_EV"), json!(o.extend_ev));
    m.insert(format!("{prefix}retract_EV"), json!(o.retract_ev));
}

fn push_outputs(m: &mut Map<String, Value>, prefix: &str, o: &StateOutputs) {
    m.insert(format!("{prefix}gears_locked_down"), json!(o.gears_locked_down));
    m.insert(format!("{prefix}gears_maneuvering"), json!(o.gears_maneuvering));
    m.insert(format!("{prefix}anomaly"), json!(o.anomaly));
    m.insert(format!("{prefix}greenLight"), json!(o.green_light));
    m.insert(format!("{prefix}orangeLight"), json!(o.orange_light));
    m.insert(format!("{prefix}redLight"), json!(o.red_light));
}

/// The single flat record used by traces and the wire protocol.
///
/// Field order is fixed: kernel bookkeeping, plant, sensed inputs,
/// controller internals, global outputs, per-module copies (`k<m>.` prefix),
/// then the observation log. Booleans are JSON booleans and enums use their
/// model names.
pub fn canonical_record(s: &SystemState) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("phase".into(), json!(s.phase));
    m.insert("fired".into(), json!(s.fired));
    m.insert("llc".into(), json!(s.llc));

    for &d in DoorId::ALL {
        m.insert(format!("doorState.{d}"), json!(s.plant.door_state[d.index()]));
    }
    for &g in GearId::ALL {
        m.insert(format!("gearState.{g}"), json!(s.plant.gear_state[g.index()]));
    }
    m.insert("switch".into(), json!(s.plant.switch));
    m.insert("pilot_handle".into(), json!(s.plant.pilot_handle));
    let faults: Vec<String> = s.plant.faults.iter().map(ToString::to_string).collect();
    m.insert("faults".into(), json!(faults));

    push_inputs(&mut m, "", &s.inputs);

    let i = &s.internals;
    m.insert("order".into(), json!(i.order));
    m.insert("nextOGseq".into(), json!(i.seq.next_og_seq));
    m.insert("nextRTseq".into(), json!(i.seq.next_rt_seq));
    m.insert("endCycle".into(), json!(i.seq.end_cycle));
    for &sensor in SensorName::ALL {
        for c in ChannelId::ALL {
            m.insert(format!("channel_valid.{sensor}.{c}"), json!(i.channel_valid[sensor.index()][c.index()]));
        }
    }
    for &sensor in SensorName::ALL {
        for c in ChannelId::ALL {
            m.insert(format!("disagree_count.{sensor}.{c}"), json!(i.disagree_count[sensor.index()][c.index()]));
        }
    }
    m.insert("anomaly_armed".into(), json!(i.anomaly_armed));
    m.insert("spawn_pending".into(), json!(i.spawn_pending));
    m.insert("health_pending".into(), json!(i.health_pending));
    m.insert("merge_pending".into(), json!(i.merge_pending));

    push_orders(&mut m, "", &s.orders);
    push_outputs(&mut m, "", &s.outputs);

    for mid in ModuleId::ALL {
        let k = mid.index();
        let prefix = format!("k{mid}.");
        m.insert(format!("{prefix}silent"), json!(s.silent[k]));
        push_inputs(&mut m, &prefix, &s.kstate.k_inputs[k]);
        push_orders(&mut m, &prefix, &s.kstate.k_orders[k]);
        push_outputs(&mut m, &prefix, &s.kstate.k_state_outputs[k]);
        m.insert(format!("{prefix}nextOGseq"), json!(s.kstate.k_seq[k].next_og_seq));
        m.insert(format!("{prefix}nextRTseq"), json!(s.kstate.k_seq[k].next_rt_seq));
        m.insert(format!("{prefix}endCycle"), json!(s.kstate.k_seq[k].end_cycle));
    }

    for &obs in ObsEvent::ALL {
        m.insert(format!("ldate.{obs}"), json!(s.ldate.get(&obs)));
    }
    m
}

/// Fields of `after` that differ from `before`.
pub fn delta(before: &Map<String, Value>, after: &Map<String, Value>) -> Map<String, Value> {
    after.iter().filter(|(k, v)| before.get(*k) != Some(*v)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: u32,
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub preset: Preset,
    pub config: ModelConfig,
    pub config_hash: String,
    pub catalog_version: u32,
    /// Present on every trace produced with a mutant, so such traces cannot
    /// pass for nominal evidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watermark: Option<String>,
}

impl TraceHeader {
    pub fn new(scenario: impl Into<String>, seed: Option<u64>, preset: Preset, config: &ModelConfig) -> Self {
        TraceHeader {
            schema: TRACE_SCHEMA,
            scenario: scenario.into(),
            seed,
            preset,
            config: config.clone(),
            config_hash: fp_hex(config.hash()),
            catalog_version: CATALOG_VERSION,
            watermark: config.mutant.map(|m| format!("MUTANT {m}: not nominal evidence")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    /// Macro-cycle the event fired in.
    pub cycle: u64,
    pub phase: Phase,
    pub event: EventId,
    /// Applied at a macro-cycle boundary: the kernel first rotates to a
    /// fresh sense phase.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub boundary: bool,
    pub llc: u64,
    pub fp: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub delta: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Quiescent,
    StepBudgetExceeded,
    Violation,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Holds,
    Fails,
    /// A handle move started a new cycle before this one ended.
    Aborted,
    /// The trace ended before the cycle did; a warning, not a violation.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleResult {
    pub requirement: Requirement,
    pub status: CycleStatus,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub final_fp: String,
    pub stop_reason: StopReason,
    pub steps: u64,
    pub violations: Vec<Verdict>,
    pub cycles: Vec<CycleResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Step(TraceRecord),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub footer: Option<TraceFooter>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {msg}")]
    Layout { line: usize, msg: &'static str },
    #[error("empty trace file")]
    Empty,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: Line| {
            out.push_str(&serde_json::to_string(&line).expect("trace lines serialize"));
            out.push('\n');
        };
        push(Line::Header(self.header.clone()));
        for r in &self.records {
            push(Line::Step(r.clone()));
        }
        if let Some(f) = &self.footer {
            push(Line::Footer(f.clone()));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut footer = None;
        for (n, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line = n + 1;
            let parsed: Line = serde_json::from_str(raw).map_err(|source| TraceError::Json { line, source })?;
            match parsed {
                Line::Header(h) if header.is_none() && line == 1 => header = Some(h),
                Line::Header(_) => return Err(TraceError::Layout { line, msg: "header must be the first line" }),
                _ if header.is_none() => return Err(TraceError::Layout { line, msg: "missing header" }),
                _ if footer.is_some() => return Err(TraceError::Layout { line, msg: "content after footer" }),
                Line::Step(r) => {
                    if records.last().is_some_and(|p: &TraceRecord| p.step >= r.step) {
                        return Err(TraceError::Layout { line, msg: "step numbers must increase" });
                    }
                    records.push(r)
                }
                Line::Footer(f) => footer = Some(f),
            }
        }
        Ok(Trace { header: header.ok_or(TraceError::Empty)?, records, footer })
    }

    pub fn events(&self) -> Vec<EventId> {
        self.records.iter().map(|r| r.event.clone()).collect()
    }
}

/// Watches a run: state predicates after every event, cycle predicates at
/// every cycle-end stamp. Keeps the first violation of each requirement.
#[derive(Debug, Clone, Default)]
pub struct Observer {
    pub violations: Vec<Verdict>,
    pub cycles: Vec<CycleResult>,
    seen: BTreeMap<Requirement, u64>,
}

impl Observer {
    /// Records the verdicts for the state reached at `step` by `event`;
    /// returns the requirements violated in that state.
    pub fn observe(&mut self, step: u64, before: &SystemState, event: &EventId, s: &SystemState) -> Vec<Requirement> {
        let mut failed = Vec::new();
        if matches!(event, EventId::HandleUp | EventId::HandleDown) {
            if let Some(req) = open_cycle(before) {
                self.cycles.push(CycleResult { requirement: req, status: CycleStatus::Aborted, step, witness: None });
            }
        }
        for v in monitor::check_safety(s).into_iter().filter(|v| !v.holds) {
            failed.push(v.requirement);
            self.note(v.at(step));
        }
        if let EventId::StampCycleEnd(_) = event {
            let req = Requirement::cycle_for(s.internals.order);
            let (status, witness) = match monitor::check_r1(&ObservationLog::of(s), req) {
                Ok(v) if v.holds => (CycleStatus::Holds, None),
                Ok(v) => {
                    failed.push(req);
                    let w = v.witness.clone();
                    self.note(v.at(step));
                    (CycleStatus::Fails, w)
                }
                Err(_) => (CycleStatus::Incomplete, None),
            };
            self.cycles.push(CycleResult { requirement: req, status, step, witness });
        }
        failed
    }

    fn note(&mut self, v: Verdict) {
        if let std::collections::btree_map::Entry::Vacant(e) = self.seen.entry(v.requirement) {
            e.insert(v.position.unwrap_or(0));
            self.violations.push(v);
        }
    }

    /// Flags a cycle still open at the end of the run.
    pub fn finish(&mut self, step: u64, s: &SystemState) {
        if let Some(req) = open_cycle(s) {
            self.cycles.push(CycleResult { requirement: req, status: CycleStatus::Incomplete, step, witness: None });
        }
    }
}

/// The cycle predicate of a started cycle whose end marker is not stamped.
fn open_cycle(s: &SystemState) -> Option<Requirement> {
    let req = Requirement::cycle_for(s.internals.order);
    let (start, end, _) = req.markers()?;
    (s.ldate.contains_key(&start) && !s.ldate.contains_key(&end)).then_some(req)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("trace recorded with catalog version {found}, this build has {expected}")]
    CatalogMismatch { expected: u32, found: u32 },
    #[error("trace configuration hash {found} does not match its configuration ({expected})")]
    ConfigMismatch { expected: String, found: String },
    #[error("step {step}: {source}")]
    NotReproducible { step: u64, source: KernelError },
    #[error("fingerprint diverges at step {step}")]
    FingerprintDivergence { step: u64 },
}

#[derive(Debug, Clone)]
pub struct Audit {
    pub final_state: SystemState,
    pub steps: u64,
    pub violations: Vec<Verdict>,
    pub cycles: Vec<CycleResult>,
}

/// Re-fires the recorded events from the preset state, checking every
/// fingerprint and re-running the monitor on every state reached.
pub fn audit(trace: &Trace) -> Result<Audit, ReplayError> {
    let h = &trace.header;
    if h.catalog_version != CATALOG_VERSION {
        return Err(ReplayError::CatalogMismatch { expected: CATALOG_VERSION, found: h.catalog_version });
    }
    let expected = fp_hex(h.config.hash());
    if h.config_hash != expected {
        return Err(ReplayError::ConfigMismatch { expected, found: h.config_hash.clone() });
    }
    let kernel = Kernel::new(h.config.clone());
    let mut s = preset_state(h.preset);
    let mut observer = Observer::default();
    for r in &trace.records {
        let next = kernel
            .fire_aligned(&s, &r.event, r.phase, r.boundary)
            .map_err(|source| ReplayError::NotReproducible { step: r.step, source })?;
        if fp_hex(fingerprint(&next)) != r.fp {
            return Err(ReplayError::FingerprintDivergence { step: r.step });
        }
        observer.observe(r.step, &s, &r.event, &next);
        s = next;
    }
    if let Some(f) = &trace.footer {
        if f.final_fp != fp_hex(fingerprint(&s)) {
            return Err(ReplayError::FingerprintDivergence { step: trace.records.last().map_or(0, |r| r.step) });
        }
    }
    let steps = trace.records.last().map_or(0, |r| r.step);
    observer.finish(steps, &s);
    Ok(Audit { final_state: s, steps, violations: observer.violations, cycles: observer.cycles })
}

/// Replay verdict: `Ok` iff every recorded fingerprint is reproduced.
pub fn replay(trace: &Trace) -> Result<SystemState, ReplayError> {
    audit(trace).map(|a| a.final_state)
}

/// Builds a trace from an event list by firing it from the preset state.
/// Used for explorer counterexamples.
pub fn trace_from_events(
    header: TraceHeader,
    events: &[(EventId, Phase)],
    with_deltas: bool,
) -> Result<(Trace, SystemState), ReplayError> {
    let kernel = Kernel::new(header.config.clone());
    let mut s = preset_state(header.preset);
    let mut records = Vec::with_capacity(events.len());
    let mut prev = with_deltas.then(|| canonical_record(&s));
    let mut cycle = 0;
    for (n, (ev, phase)) in events.iter().enumerate() {
        let step = n as u64 + 1;
        let next = kernel
            .fire_aligned(&s, ev, *phase, false)
            .map_err(|source| ReplayError::NotReproducible { step, source })?;
        cycle += cycles_between(&s, *phase);
        let delta = match prev.as_mut() {
            Some(p) => {
                let now = canonical_record(&next);
                let d = delta(p, &now);
                *p = now;
                d
            }
            None => Map::new(),
        };
        records.push(TraceRecord {
            step,
            cycle,
            phase: *phase,
            event: ev.clone(),
            boundary: false,
            llc: next.llc,
            fp: fp_hex(fingerprint(&next)),
            delta,
        });
        s = next;
    }
    Ok((Trace { header, records, footer: None }, s))
}

/// Number of sense-phase wraps when moving from the state's phase to
/// `target` (0 or 1).
fn cycles_between(s: &SystemState, target: Phase) -> u64 {
    let pos = |p: Phase| Phase::ALL.iter().position(|q| *q == p).unwrap_or(0);
    u64::from(pos(target) < pos(s.phase))
}

/// Handle direction named by a pilot event, if any.
pub fn pilot_direction(ev: &EventId) -> Option<HandleState> {
    match ev {
        EventId::HandleUp => Some(HandleState::Up),
        EventId::HandleDown => Some(HandleState::Down),
        _ => None,
    }
}
