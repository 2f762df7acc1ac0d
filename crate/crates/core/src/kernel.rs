//! Guarded-event scheduler. Events are grouped in the three phases of a
//! control macro-cycle (sense, decision, order); within a phase any enabled
//! event may fire, one per micro-step, and the logical clock ticks on every
//! firing.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::controller::{self, ControllerEvent, HandleError};
use crate::model::{DoorId, GearId, HandleState, ModuleId, ObsEvent, Phase, StateOutputs, SystemState, UnknownName};
use crate::monitor;
use crate::plant::{self, FaultSpec, FaultSpecError};

/// Every event of the closed catalog.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventId {
    /// All doors take one automaton edge (synchronized plant).
    DoorsMove,
    GearsMove,
    /// One door takes an edge (interleaved plant).
    DoorMove(DoorId),
    GearMove(GearId),
    SenseRefresh,
    VoteHealth,
    Spawn,
    Module(ModuleId, ControllerEvent),
    Merge,
    StampCycleEnd(ObsEvent),
    HandleUp,
    HandleDown,
    InjectFault(FaultSpec),
    ClearFaults,
    ForceSilent(ModuleId),
}

impl EventId {
    /// Phase an internal event belongs to; `None` for pilot and fault
    /// actions, which are applied from outside between phases.
    pub fn phase(&self) -> Option<Phase> {
        use EventId::*;
        match self {
            DoorsMove | GearsMove | DoorMove(_) | GearMove(_) | SenseRefresh => Some(Phase::Sense),
            VoteHealth | Spawn | Module(..) => Some(Phase::Decision),
            Merge | StampCycleEnd(_) => Some(Phase::Order),
            HandleUp | HandleDown | InjectFault(_) | ClearFaults | ForceSilent(_) => None,
        }
    }

    pub fn is_external(&self) -> bool {
        self.phase().is_none()
    }

    pub fn handle(dir: HandleState) -> EventId {
        match dir {
            HandleState::Up => EventId::HandleUp,
            HandleState::Down => EventId::HandleDown,
        }
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use EventId::*;
        match self {
            DoorsMove => f.write_str("doors_move"),
            GearsMove => f.write_str("gears_move"),
            DoorMove(d) => write!(f, "door_move({d})"),
            GearMove(g) => write!(f, "gear_move({g})"),
            SenseRefresh => f.write_str("sense_refresh"),
            VoteHealth => f.write_str("vote_health"),
            Spawn => f.write_str("spawn"),
            Module(m, ev) => write!(f, "k_{ev}({m})"),
            Merge => f.write_str("merge"),
            StampCycleEnd(obs) => write!(f, "stamp({obs})"),
            HandleUp => f.write_str("handle_up"),
            HandleDown => f.write_str("handle_down"),
            InjectFault(spec) => write!(f, "inject_fault({spec})"),
            ClearFaults => f.write_str("clear_faults"),
            ForceSilent(m) => write!(f, "force_silent({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventParseError {
    #[error("unknown event `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Name(#[from] UnknownName),
    #[error(transparent)]
    Fault(#[from] FaultSpecError),
}

impl FromStr for EventId {
    type Err = EventParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use EventId::*;
        let unknown = || EventParseError::Unknown(s.to_string());
        let (head, arg) = match s.split_once('(') {
            Some((h, rest)) => (h, Some(rest.strip_suffix(')').ok_or_else(unknown)?)),
            None => (s, None),
        };
        let module = |a: &str| a.parse::<u8>().ok().and_then(ModuleId::new).ok_or_else(unknown);
        Ok(match (head, arg) {
            ("doors_move", None) => DoorsMove,
            ("gears_move", None) => GearsMove,
            ("door_move", Some(a)) => DoorMove(a.parse()?),
            ("gear_move", Some(a)) => GearMove(a.parse()?),
            ("sense_refresh", None) => SenseRefresh,
            ("vote_health", None) => VoteHealth,
            ("spawn", None) => Spawn,
            ("merge", None) => Merge,
            ("stamp", Some(a)) => StampCycleEnd(a.parse()?),
            ("handle_up", None) => HandleUp,
            ("handle_down", None) => HandleDown,
            ("inject_fault", Some(a)) => InjectFault(a.parse()?),
            ("clear_faults", None) => ClearFaults,
            ("force_silent", Some(a)) => ForceSilent(module(a)?),
            (h, Some(a)) if h.starts_with("k_") => Module(module(a)?, h[2..].parse()?),
            _ => return Err(unknown()),
        })
    }
}

impl Serialize for EventId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Handle(#[from] HandleError),
    #[error("event `{event}` is not enabled in phase {phase}")]
    NotEnabled { event: EventId, phase: Phase },
    #[error(transparent)]
    Fault(#[from] FaultSpecError),
}

/// How the kernel picks among enabled events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChoicePolicy {
    SeededRandom {
        seed: u64,
    },
    /// Always the first enabled event in catalog order.
    Interactive,
    /// Follows a list of event names; falls back to the first enabled event
    /// once the list is used up or its head is not enabled.
    ScriptDriven {
        events: Vec<EventId>,
    },
    /// Always the n-th enabled event (clamped); used to replay explorer
    /// branches.
    ExplorerBranch {
        index: usize,
    },
}

/// Runtime state of a policy.
#[derive(Debug, Clone)]
pub struct Chooser {
    policy: ChoicePolicy,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl Chooser {
    pub fn new(policy: ChoicePolicy) -> Self {
        let seed = match policy {
            ChoicePolicy::SeededRandom { seed } => seed,
            _ => 0,
        };
        Chooser { policy, rng: ChaCha8Rng::seed_from_u64(seed), cursor: 0 }
    }

    pub fn policy(&self) -> &ChoicePolicy {
        &self.policy
    }

    pub fn choose(&mut self, enabled: &[EventId]) -> usize {
        debug_assert!(!enabled.is_empty());
        match &self.policy {
            ChoicePolicy::SeededRandom { .. } => self.rng.gen_range(0..enabled.len()),
            ChoicePolicy::Interactive => 0,
            ChoicePolicy::ScriptDriven { events } => {
                match events.get(self.cursor).and_then(|e| enabled.iter().position(|x| x == e)) {
                    Some(i) => {
                        self.cursor += 1;
                        i
                    }
                    None => 0,
                }
            }
            ChoicePolicy::ExplorerBranch { index } => (*index).min(enabled.len() - 1),
        }
    }
}

/// Outcome of one kernel micro-step.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // short-lived; boxing would cost every step
pub enum Step {
    Fired { state: SystemState, event: EventId, phase: Phase },
    Quiescent,
}

/// Bit of the once-per-phase mask used by plant moves and module steps.
fn mask_bit(ev: &EventId) -> Option<u8> {
    match ev {
        EventId::DoorsMove => Some(0),
        EventId::GearsMove => Some(1),
        EventId::DoorMove(d) => Some(d.index() as u8),
        EventId::GearMove(g) => Some(3 + g.index() as u8),
        EventId::Module(m, _) => Some(6 + m.index() as u8),
        _ => None,
    }
}

fn cycle_markers(order: HandleState) -> (ObsEvent, ObsEvent) {
    match order {
        HandleState::Down => (ObsEvent::DownH, ObsEvent::Dcge),
        HandleState::Up => (ObsEvent::UpH, ObsEvent::Doge),
    }
}

/// Moves to the next phase and clears the once-per-phase mask.
pub fn advance_phase(s: &SystemState) -> SystemState {
    let mut n = s.clone();
    n.phase = s.phase.next();
    n.fired = 0;
    n
}

#[derive(Debug, Clone, Default)]
pub struct Kernel {
    pub cfg: ModelConfig,
}

impl Kernel {
    pub fn new(cfg: ModelConfig) -> Self {
        Kernel { cfg }
    }

    /// Enabled events of the current phase with their successor states, in
    /// catalog order.
    pub fn successors(&self, s: &SystemState) -> Vec<(EventId, SystemState)> {
        let mut out = Vec::new();
        self.expand(s, s.phase, s.fired, &mut out);
        out.into_iter()
            .map(|(ev, mut n)| {
                if let Some(bit) = mask_bit(&ev) {
                    n.fired |= 1 << bit;
                }
                n.phase = s.phase;
                n.llc = s.llc + 1;
                (ev, n)
            })
            .collect()
    }

    /// Events whose guards hold in `s` for `phase`. The once-per-phase mask
    /// only applies to the phase the state is in.
    pub fn enabled_events(&self, s: &SystemState, phase: Phase) -> Vec<EventId> {
        let mask = if phase == s.phase { s.fired } else { 0 };
        let mut out = Vec::new();
        self.expand(s, phase, mask, &mut out);
        out.into_iter().map(|(ev, _)| ev).collect()
    }

    fn expand(&self, s: &SystemState, phase: Phase, mask: u8, out: &mut Vec<(EventId, SystemState)>) {
        let free = |ev: &EventId| mask_bit(ev).is_none_or(|b| mask & (1 << b) == 0);
        let anomaly = s.outputs.anomaly;
        match phase {
            Phase::Sense => {
                if self.cfg.interleaved {
                    for &d in DoorId::ALL {
                        if let Some(p) =
                            plant::door_move(&s.plant, &s.orders, d).filter(|_| free(&EventId::DoorMove(d)))
                        {
                            out.push((EventId::DoorMove(d), SystemState { plant: p, ..s.clone() }));
                        }
                    }
                    for &g in GearId::ALL {
                        if let Some(p) =
                            plant::gear_move(&s.plant, &s.orders, g).filter(|_| free(&EventId::GearMove(g)))
                        {
                            out.push((EventId::GearMove(g), SystemState { plant: p, ..s.clone() }));
                        }
                    }
                } else {
                    if let Some(p) = plant::door_transition(&s.plant, &s.orders).filter(|_| free(&EventId::DoorsMove)) {
                        out.push((EventId::DoorsMove, SystemState { plant: p, ..s.clone() }));
                    }
                    if let Some(p) = plant::gear_transition(&s.plant, &s.orders).filter(|_| free(&EventId::GearsMove)) {
                        out.push((EventId::GearsMove, SystemState { plant: p, ..s.clone() }));
                    }
                }
                if !anomaly {
                    let fresh = plant::sense(&s.plant);
                    if fresh != s.inputs {
                        let mut n = s.clone();
                        n.inputs = fresh;
                        n.internals.spawn_pending = true;
                        n.internals.health_pending = true;
                        out.push((EventId::SenseRefresh, n));
                    }
                }
            }
            Phase::Decision => {
                if anomaly {
                    return;
                }
                let i = &s.internals;
                if i.health_pending {
                    let mut n = s.clone();
                    n.internals = controller::health_round(&s.inputs, i, self.cfg.threshold());
                    n.internals.health_pending = false;
                    out.push((EventId::VoteHealth, n));
                }
                if i.spawn_pending {
                    let mut n = s.clone();
                    n.kstate = controller::spawn_inputs(&self.cfg, &s.inputs, &s.kstate);
                    n.internals.spawn_pending = false;
                    out.push((EventId::Spawn, n));
                }
                if i.spawn_pending || i.health_pending {
                    return;
                }
                for m in ModuleId::ALL {
                    if s.silent[m.index()] || mask & (1 << (6 + m.index())) != 0 {
                        continue;
                    }
                    if let Some((k, fired)) = controller::module_step(&self.cfg, m, &s.kstate, i) {
                        let mut n = s.clone();
                        n.kstate = k;
                        n.internals.merge_pending = true;
                        out.push((EventId::Module(m, fired[0]), n));
                    }
                }
            }
            Phase::Order => {
                let (orders, outputs) = controller::merge_outputs(&self.cfg, &s.kstate);
                let seq = controller::merge_pointers(&s.kstate, &s.silent, s.internals.seq);
                if s.internals.merge_pending || orders != s.orders || outputs != s.outputs || seq != s.internals.seq {
                    let mut n = s.clone();
                    n.orders = orders;
                    n.outputs = outputs;
                    n.internals.seq = seq;
                    n.internals.merge_pending = false;
                    out.push((EventId::Merge, n));
                }
                let (start, end) = cycle_markers(s.internals.order);
                if s.internals.seq.end_cycle
                    && !s.internals.merge_pending
                    && s.ldate.contains_key(&start)
                    && !s.ldate.contains_key(&end)
                {
                    let mut n = monitor::stamp(end, s);
                    n.plant = plant::switch_transition(&n.plant, false, true);
                    out.push((EventId::StampCycleEnd(end), n));
                }
            }
        }
    }

    /// Applies a pilot, fault or module-failure action.
    pub fn apply_external(&self, s: &SystemState, ev: &EventId) -> Result<SystemState, KernelError> {
        let mut n = match ev {
            EventId::HandleUp => controller::handle_event(&self.cfg, HandleState::Up, s)?,
            EventId::HandleDown => controller::handle_event(&self.cfg, HandleState::Down, s)?,
            EventId::InjectFault(spec) => {
                spec.validate()?;
                let mut n = s.clone();
                n.plant.faults.insert(spec.clone());
                n
            }
            EventId::ClearFaults => {
                let mut n = s.clone();
                n.plant.faults.clear();
                n
            }
            EventId::ForceSilent(m) => {
                let mut n = s.clone();
                let i = m.index();
                n.silent[i] = true;
                n.kstate.k_orders[i] = Default::default();
                n.kstate.k_state_outputs[i] = StateOutputs::dark();
                n.internals.merge_pending = true;
                n
            }
            internal => return Err(KernelError::NotEnabled { event: internal.clone(), phase: s.phase }),
        };
        n.llc = s.llc + 1;
        Ok(n)
    }

    /// Fires `ev`: an external action, or an internal event that must be
    /// enabled in the current phase.
    pub fn fire(&self, s: &SystemState, ev: &EventId) -> Result<SystemState, KernelError> {
        if ev.is_external() {
            return self.apply_external(s, ev);
        }
        self.successors(s)
            .into_iter()
            .find(|(e, _)| e == ev)
            .map(|(_, n)| n)
            .ok_or_else(|| KernelError::NotEnabled { event: ev.clone(), phase: s.phase })
    }

    pub fn phase_exhausted(&self, s: &SystemState) -> bool {
        self.successors(s).is_empty()
    }

    /// No event is enabled in any phase, counting the current phase with its
    /// mask and every phase of the next macro-cycle.
    pub fn is_quiescent(&self, s: &SystemState) -> bool {
        let mut t = s.clone();
        for _ in 0..4 {
            if !self.phase_exhausted(&t) {
                return false;
            }
            t = advance_phase(&t);
        }
        true
    }

    /// Advances through exhausted phases and fires one event chosen by the
    /// policy. A quiescent state is returned untouched.
    pub fn step(&self, s: &SystemState, chooser: &mut Chooser) -> Step {
        let mut t = s.clone();
        for _ in 0..4 {
            let mut succ = self.successors(&t);
            if !succ.is_empty() {
                let names: Vec<EventId> = succ.iter().map(|(e, _)| e.clone()).collect();
                let (event, state) = succ.swap_remove(chooser.choose(&names));
                return Step::Fired { state, event, phase: t.phase };
            }
            t = advance_phase(&t);
        }
        Step::Quiescent
    }

    /// Fires a recorded event, first advancing through exhausted phases until
    /// it is enabled. With `boundary`, the state is first rotated to a fresh
    /// sense phase (the macro-cycle boundary where scripted actions apply).
    pub fn fire_aligned(
        &self,
        s: &SystemState,
        ev: &EventId,
        phase: Phase,
        boundary: bool,
    ) -> Result<SystemState, KernelError> {
        let mut t = s.clone();
        let not_enabled = || KernelError::NotEnabled { event: ev.clone(), phase };
        if boundary {
            for _ in 0..4 {
                if t.phase == Phase::Sense && t.fired == 0 {
                    break;
                }
                if !self.phase_exhausted(&t) {
                    return Err(not_enabled());
                }
                t = advance_phase(&t);
            }
        }
        for _ in 0..4 {
            if t.phase == phase {
                if let Ok(n) = self.fire(&t, ev) {
                    return Ok(n);
                }
            }
            if !self.phase_exhausted(&t) {
                break;
            }
            t = advance_phase(&t);
        }
        Err(not_enabled())
    }
}
