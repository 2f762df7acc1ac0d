//! Bounded breadth-first exploration of the reachable state space.
//!
//! Branching comes from three sources: the choice of event inside a phase,
//! pilot handle moves (budgeted, allowed whenever the current phase is
//! exhausted), and the set of faulty channels, fixed per branch at step 0.
//! Every reached state is checked against the state predicates and every
//! cycle-end stamp against the cycle predicates.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Mutant};
use crate::kernel::{advance_phase, EventId, Kernel};
use crate::model::{preset_state, state_fingerprint, FingerprintMode, ModuleId, Phase, Preset, SystemState};
use crate::monitor::{self, fp_hex, ObservationLog, Requirement};
use crate::plant::FaultSpec;
use crate::trace::{trace_from_events, ReplayError, Trace, TraceHeader};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    /// Events from the root after which nodes are no longer expanded.
    pub max_depth: Option<u32>,
    /// Maximum number of pilot handle moves along a path.
    pub pilot_budget: u8,
    pub fault_envelope: Vec<FaultSpec>,
    /// Largest fault subset tried.
    pub f_max: usize,
    pub model: ModelConfig,
    /// Module forced silent at step 0.
    pub silent_module: Option<ModuleId>,
    pub preset: Preset,
    /// External actions applied at step 0, after the faults.
    pub prefix: Vec<EventId>,
    pub dedupe: bool,
    /// Distinct states after which exploration stops with partial coverage.
    pub max_states: usize,
    pub parallel: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_depth: None,
            pilot_budget: 2,
            fault_envelope: Vec::new(),
            f_max: 0,
            model: ModelConfig::default(),
            silent_module: None,
            preset: Preset::Ground,
            prefix: Vec::new(),
            dedupe: true,
            max_states: 5_000_000,
            parallel: true,
        }
    }
}

impl ExploreConfig {
    pub fn with_mutant(mutant: Mutant) -> Self {
        ExploreConfig { model: ModelConfig::with_mutant(mutant), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExploreError {
    #[error("f_max {f_max} exceeds the fault envelope size {envelope}")]
    FaultBudget { f_max: usize, envelope: usize },
    #[error("start action `{event}` cannot be applied: {reason}")]
    Prefix { event: EventId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub requirement: Requirement,
    /// Events fired from the root state.
    pub depth: u32,
    pub fingerprint: String,
    /// Path from the preset state, start actions included.
    pub events: Vec<(EventId, Phase)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub states_visited: u64,
    pub edges_fired: u64,
    pub max_depth_reached: u32,
    pub quiescent_states: u64,
    /// Quiescent states in which a started cycle never ends.
    pub stalled_cycles: u64,
    /// Every reachable state was expanded: no depth or state bound cut the
    /// search short.
    pub frontier_exhausted: bool,
    /// Stopped at `max_states`: coverage is partial.
    pub budget_exceeded: bool,
    /// Some node sat at the depth bound unexpanded.
    pub depth_bound_hit: bool,
    /// Violating states found, per requirement.
    pub violation_counts: Vec<(Requirement, u64)>,
    /// Shallowest counterexample per requirement, sorted by
    /// (requirement, depth, fingerprint).
    pub violations: Vec<Counterexample>,
}

impl ExploreReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && !self.budget_exceeded
    }

    pub fn violated(&self) -> Vec<Requirement> {
        self.violations.iter().map(|c| c.requirement).collect()
    }
}

struct Node {
    parent: Option<usize>,
    event: Option<(EventId, Phase)>,
    depth: u32,
}

struct Frontier {
    node: usize,
    state: SystemState,
    pilot: u8,
}

struct Child {
    event: EventId,
    phase: Phase,
    state: SystemState,
    pilot: u8,
    violated: Vec<Requirement>,
}

struct Expansion {
    children: Vec<Child>,
    quiescent: bool,
    stalled: bool,
}

fn cycle_open(s: &SystemState) -> bool {
    let req = Requirement::cycle_for(s.internals.order);
    req.markers().is_some_and(|(start, end, _)| s.ldate.contains_key(&start) && !s.ldate.contains_key(&end))
}

fn violations_after(event: &EventId, s: &SystemState) -> Vec<Requirement> {
    let mut v = monitor::violations(s);
    if let EventId::StampCycleEnd(_) = event {
        let req = Requirement::cycle_for(s.internals.order);
        if monitor::check_r1(&ObservationLog::of(s), req).is_ok_and(|v| !v.holds) {
            v.push(req);
        }
    }
    v
}

fn expand(kernel: &Kernel, budget: u8, f: &Frontier) -> Expansion {
    let mut children = Vec::new();
    let mut boundaries = Vec::new();
    let mut t = f.state.clone();
    let mut quiescent = true;
    for _ in 0..4 {
        let succ = kernel.successors(&t);
        if !succ.is_empty() {
            for (event, state) in succ {
                let violated = violations_after(&event, &state);
                children.push(Child { event, phase: t.phase, state, pilot: f.pilot, violated });
            }
            quiescent = false;
            break;
        }
        boundaries.push(t.clone());
        t = advance_phase(&t);
    }
    if quiescent {
        // Every phase looks the same from here; one boundary is enough.
        boundaries.truncate(1);
    }
    if f.pilot < budget {
        for b in &boundaries {
            let event = EventId::handle(b.internals.order.opposite());
            let state = kernel.apply_external(b, &event).expect("opposite handle move is always legal");
            let violated = violations_after(&event, &state);
            children.push(Child { event, phase: b.phase, state, pilot: f.pilot + 1, violated });
        }
    }
    Expansion { stalled: quiescent && cycle_open(&f.state), children, quiescent }
}

fn subsets(items: &[FaultSpec], k_max: usize) -> Vec<Vec<FaultSpec>> {
    let mut out = vec![Vec::new()];
    for item in items {
        let grown: Vec<Vec<FaultSpec>> = out
            .iter()
            .filter(|s| s.len() < k_max)
            .map(|s| {
                let mut s = s.clone();
                s.push(item.clone());
                s
            })
            .collect();
        out.extend(grown);
    }
    out.sort_by_key(Vec::len);
    out
}

/// Explores the reachable states of the configured envelope.
pub fn explore(cfg: &ExploreConfig) -> Result<ExploreReport, ExploreError> {
    if cfg.f_max > cfg.fault_envelope.len() {
        return Err(ExploreError::FaultBudget { f_max: cfg.f_max, envelope: cfg.fault_envelope.len() });
    }
    let kernel = Kernel::new(cfg.model.clone());
    let key = |s: &SystemState, pilot: u8| (state_fingerprint(s, FingerprintMode::Explorer), pilot);

    let mut nodes: Vec<Node> = Vec::new();
    let mut visited: HashSet<(u64, u8)> = HashSet::new();
    let mut frontier: Vec<Frontier> = Vec::new();
    let mut best: Vec<Option<(u32, u64, usize)>> = vec![None; Requirement::ALL.len()];
    let mut counts = vec![0u64; Requirement::ALL.len()];
    let mut report = ExploreReport {
        states_visited: 0,
        edges_fired: 0,
        max_depth_reached: 0,
        quiescent_states: 0,
        stalled_cycles: 0,
        frontier_exhausted: false,
        budget_exceeded: false,
        depth_bound_hit: false,
        violation_counts: Vec::new(),
        violations: Vec::new(),
    };

    let mut note = |nodes: &Vec<Node>, node: usize, state: &SystemState, violated: &[Requirement]| {
        for &req in violated {
            let r = req as usize;
            counts[r] += 1;
            let cand = (nodes[node].depth, state_fingerprint(state, FingerprintMode::Explorer), node);
            if best[r].is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                best[r] = Some(cand);
            }
        }
    };

    // Roots: one per fault subset, reached by start actions.
    for faults in subsets(&cfg.fault_envelope, cfg.f_max) {
        let mut s = preset_state(cfg.preset);
        let mut parent = None;
        let start: Vec<EventId> = faults
            .into_iter()
            .map(EventId::InjectFault)
            .chain(cfg.silent_module.map(EventId::ForceSilent))
            .chain(cfg.prefix.iter().cloned())
            .collect();
        for ev in start {
            s = kernel
                .apply_external(&s, &ev)
                .map_err(|e| ExploreError::Prefix { event: ev.clone(), reason: e.to_string() })?;
            nodes.push(Node { parent, event: Some((ev, s.phase)), depth: 0 });
            parent = Some(nodes.len() - 1);
        }
        let pilot = 0;
        if cfg.dedupe && !visited.insert(key(&s, pilot)) {
            continue;
        }
        let node = match parent {
            Some(p) => p,
            None => {
                nodes.push(Node { parent: None, event: None, depth: 0 });
                nodes.len() - 1
            }
        };
        let violated = monitor::violations(&s);
        note(&nodes, node, &s, &violated);
        report.states_visited += 1;
        frontier.push(Frontier { node, state: s, pilot });
    }

    let mut depth = 0u32;
    'levels: while !frontier.is_empty() {
        if cfg.max_depth.is_some_and(|d| depth >= d) {
            report.depth_bound_hit = true;
            break;
        }
        let expansions: Vec<Expansion> = if cfg.parallel {
            frontier.par_iter().map(|f| expand(&kernel, cfg.pilot_budget, f)).collect()
        } else {
            frontier.iter().map(|f| expand(&kernel, cfg.pilot_budget, f)).collect()
        };
        let mut next = Vec::new();
        for (f, exp) in frontier.iter().zip(expansions) {
            report.quiescent_states += u64::from(exp.quiescent);
            report.stalled_cycles += u64::from(exp.stalled);
            for child in exp.children {
                report.edges_fired += 1;
                if cfg.dedupe && !visited.insert(key(&child.state, child.pilot)) {
                    continue;
                }
                nodes.push(Node { parent: Some(f.node), event: Some((child.event, child.phase)), depth: depth + 1 });
                let node = nodes.len() - 1;
                note(&nodes, node, &child.state, &child.violated);
                report.states_visited += 1;
                report.max_depth_reached = depth + 1;
                next.push(Frontier { node, state: child.state, pilot: child.pilot });
                if report.states_visited as usize >= cfg.max_states {
                    report.budget_exceeded = true;
                    break 'levels;
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    report.frontier_exhausted = !report.budget_exceeded && !report.depth_bound_hit;

    for req in Requirement::ALL {
        let r = *req as usize;
        if counts[r] > 0 {
            report.violation_counts.push((*req, counts[r]));
        }
        if let Some((depth, fp, node)) = best[r] {
            report.violations.push(Counterexample {
                requirement: *req,
                depth,
                fingerprint: fp_hex(fp),
                events: path(&nodes, node),
            });
        }
    }
    report
        .violations
        .sort_by(|a, b| (a.requirement, a.depth, &a.fingerprint).cmp(&(b.requirement, b.depth, &b.fingerprint)));
    Ok(report)
}

fn path(nodes: &[Node], mut node: usize) -> Vec<(EventId, Phase)> {
    let mut out = Vec::new();
    loop {
        let n = &nodes[node];
        if let Some(ev) = &n.event {
            out.push(ev.clone());
        }
        match n.parent {
            Some(p) => node = p,
            None => break,
        }
    }
    out.reverse();
    out
}

/// Replays `events` strictly from the preset state and returns the number
/// of events after which `req` is first violated.
pub fn first_violation(
    model: &ModelConfig,
    preset: Preset,
    events: &[(EventId, Phase)],
    req: Requirement,
) -> Option<usize> {
    let kernel = Kernel::new(model.clone());
    let mut s = preset_state(preset);
    if monitor::violations(&s).contains(&req) {
        return Some(0);
    }
    for (i, (ev, phase)) in events.iter().enumerate() {
        s = kernel.fire_aligned(&s, ev, *phase, false).ok()?;
        if violations_after(ev, &s).contains(&req) {
            return Some(i + 1);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MinimizeError {
    #[error("counterexample does not reproduce {0}")]
    NotReproducible(Requirement),
}

/// Shrinks a counterexample by greedy event deletion, keeping only
/// candidates that still replay strictly to a violation of the same
/// requirement; the result is cut right after the violation.
pub fn minimize(model: &ModelConfig, preset: Preset, c: &Counterexample) -> Result<Counterexample, MinimizeError> {
    let end = first_violation(model, preset, &c.events, c.requirement)
        .ok_or(MinimizeError::NotReproducible(c.requirement))?;
    let mut events = c.events[..end].to_vec();
    let mut changed = true;
    while changed {
        changed = false;
        let mut i = 0;
        while i < events.len() {
            let mut candidate = events.clone();
            candidate.remove(i);
            if let Some(end) = first_violation(model, preset, &candidate, c.requirement) {
                candidate.truncate(end);
                events = candidate;
                changed = true;
            } else {
                i += 1;
            }
        }
    }
    let kernel = Kernel::new(model.clone());
    let mut s = preset_state(preset);
    for (ev, phase) in &events {
        s = kernel.fire_aligned(&s, ev, *phase, false).expect("validated by replay");
    }
    let start_actions = events.iter().take_while(|(e, _)| e.is_external() && !is_pilot(e)).count();
    Ok(Counterexample {
        requirement: c.requirement,
        depth: (events.len() - start_actions) as u32,
        fingerprint: fp_hex(state_fingerprint(&s, FingerprintMode::Explorer)),
        events,
    })
}

fn is_pilot(ev: &EventId) -> bool {
    matches!(ev, EventId::HandleUp | EventId::HandleDown)
}

/// The counterexample as a standard trace file, replayable by the kernel.
pub fn counterexample_trace(model: &ModelConfig, preset: Preset, c: &Counterexample) -> Result<Trace, ReplayError> {
    let header = TraceHeader::new(format!("counterexample {}", c.requirement), None, preset, model);
    trace_from_events(header, &c.events, true).map(|(t, _)| t)
}
