//! The digital part: channel voting and health, the spawn/merge redundancy
//! layer, the per-module sequencers and the handle-inversion rule.

use serde::Serialize;

use crate::config::{ModelConfig, Mutant};
use crate::model::{
    named_enum, ControllerInternals, HandleState, KIndexedState, ModuleId, ObsEvent, OrderOutputs, SensedInputs,
    SensorName, SequencePointers, StateOutputs, SystemState, SENSOR_COUNT,
};
use crate::monitor;
use crate::plant::{sense, switch_transition};

named_enum! {
    /// Events a computing module can fire, named after the Event-B model.
    pub enum ControllerEvent {
        StmltGeneralEv => "stmlt_general_EV",
        StmltDoorOpening => "stmlt_door_opening",
        StmltGearOutgoing => "stmlt_gear_outgoing",
        StopStmltGearOutgoing => "stop_stmlt_gear_outgoing",
        StmltGearRetraction => "stmlt_gear_retraction",
        StopStmltGearRetraction => "stop_stmlt_gear_retraction",
        StopStmltDoorOpening => "stop_stmlt_door_opening",
        StmltDoorClosure => "stmlt_door_closure",
        StopStmltDoorClosure => "stop_stmlt_door_closure",
        StopStmltGeneralEv => "stop_stmlt_general_EV",
        RearmGeneralEv => "rearm_general_EV",
        MonitorAnomaly => "monitor_anomaly",
        MonitorOutputs => "monitor_outputs",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum VoteError {
    #[error("all channels invalid")]
    AllChannelsInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VoteResult<T> {
    /// `None` when exactly two valid channels disagree.
    pub value: Option<T>,
    pub valid_channels: [bool; 3],
    pub unanimous: bool,
    /// Valid channels that disagree with the outcome.
    pub dissent: [bool; 3],
}

/// Majority vote over the valid channels.
pub fn vote3<T: Copy + Eq>(values: [T; 3], valid: [bool; 3]) -> Result<VoteResult<T>, VoteError> {
    let live: Vec<usize> = (0..3).filter(|&i| valid[i]).collect();
    let first = values[*live.first().ok_or(VoteError::AllChannelsInvalid)?];
    let unanimous = live.iter().all(|&i| values[i] == first);
    let mut dissent = [false; 3];
    if unanimous {
        return Ok(VoteResult { value: Some(first), valid_channels: valid, unanimous, dissent });
    }
    let majority =
        live.iter().map(|&i| values[i]).find(|v| live.iter().filter(|&&j| values[j] == *v).count() * 2 > live.len());
    for &i in &live {
        dissent[i] = majority != Some(values[i]);
    }
    Ok(VoteResult { value: majority, valid_channels: valid, unanimous, dissent })
}

/// Voted readings of one module's copy of the inputs.
#[derive(Clone, Copy)]
pub struct Votes<'a> {
    inputs: &'a SensedInputs,
    valid: &'a [[bool; 3]; SENSOR_COUNT],
}

impl<'a> Votes<'a> {
    pub fn new(inputs: &'a SensedInputs, valid: &'a [[bool; 3]; SENSOR_COUNT]) -> Self {
        Votes { inputs, valid }
    }

    pub fn get(&self, sensor: SensorName, device: usize) -> Option<bool> {
        let values = [0, 1, 2].map(|i| self.inputs.reading(sensor, i, device));
        vote3(values, self.valid[sensor.index()]).ok().and_then(|r| r.value)
    }

    /// Every device of a per-device sensor is voted `value`.
    pub fn all(&self, sensor: SensorName, value: bool) -> bool {
        (0..3).all(|d| self.get(sensor, d) == Some(value))
    }

    pub fn handle(&self) -> Option<HandleState> {
        self.get(SensorName::Handle, 0).map(|up| if up { HandleState::Up } else { HandleState::Down })
    }
}

/// Dissent flags per `[sensor][channel]` for one voting round, and whether
/// any vote had no valid channel left.
pub fn dissent_flags(inputs: &SensedInputs, valid: &[[bool; 3]; SENSOR_COUNT]) -> ([[bool; 3]; SENSOR_COUNT], bool) {
    let mut flags = [[false; 3]; SENSOR_COUNT];
    let mut exhausted = false;
    for &sensor in SensorName::ALL {
        let devices = if sensor.is_per_device() { 3 } else { 1 };
        for d in 0..devices {
            let values = [0, 1, 2].map(|i| inputs.reading(sensor, i, d));
            match vote3(values, valid[sensor.index()]) {
                Ok(r) => {
                    for (f, d) in flags[sensor.index()].iter_mut().zip(r.dissent) {
                        *f |= d;
                    }
                }
                Err(VoteError::AllChannelsInvalid) => exhausted = true,
            }
        }
    }
    (flags, exhausted)
}

/// Applies one round of dissent flags: dissenters count up, agreeing valid
/// channels reset; a channel whose count reaches the threshold is
/// invalidated for good. A sensor left with at most one valid channel arms
/// the anomaly.
#[allow(clippy::needless_range_loop)] // parallel per-channel arrays
pub fn update_channel_health(
    internals: &ControllerInternals,
    dissent: &[[bool; 3]; SENSOR_COUNT],
    threshold: u8,
) -> ControllerInternals {
    let threshold = threshold.max(1);
    let mut next = internals.clone();
    for s in 0..SENSOR_COUNT {
        for i in 0..3 {
            if !next.channel_valid[s][i] {
                continue;
            }
            if dissent[s][i] {
                let c = &mut next.disagree_count[s][i];
                *c = (*c + 1).min(threshold);
                if *c >= threshold {
                    next.channel_valid[s][i] = false;
                }
            } else {
                next.disagree_count[s][i] = 0;
            }
        }
    }
    if SensorName::ALL.iter().any(|&s| next.valid_count(s) <= 1) {
        next.anomaly_armed = true;
    }
    next
}

/// Vote health over the global inputs.
pub fn health_round(inputs: &SensedInputs, internals: &ControllerInternals, threshold: u8) -> ControllerInternals {
    let (flags, exhausted) = dissent_flags(inputs, &internals.channel_valid);
    let mut next = update_channel_health(internals, &flags, threshold);
    next.anomaly_armed |= exhausted;
    next
}

/// Copies the global inputs into every module. Under the skip-spawn mutant
/// module 2 keeps its stale copy.
pub fn spawn_inputs(cfg: &ModelConfig, global: &SensedInputs, k: &KIndexedState) -> KIndexedState {
    let mut next = k.clone();
    next.k_inputs[0] = global.clone();
    if !cfg.is(Mutant::SkipSpawn) {
        next.k_inputs[1] = global.clone();
    }
    next
}

/// Direction-specific parts of a sequence.
struct Direction {
    gear_sensor: SensorName,
    start: ControllerEvent,
    stop: ControllerEvent,
    stop_opposite: ControllerEvent,
}

fn direction(order: HandleState) -> Direction {
    match order {
        HandleState::Down => Direction {
            gear_sensor: SensorName::GearExtended,
            start: ControllerEvent::StmltGearOutgoing,
            stop: ControllerEvent::StopStmltGearOutgoing,
            stop_opposite: ControllerEvent::StopStmltGearRetraction,
        },
        HandleState::Up => Direction {
            gear_sensor: SensorName::GearRetracted,
            start: ControllerEvent::StmltGearRetraction,
            stop: ControllerEvent::StopStmltGearRetraction,
            stop_opposite: ControllerEvent::StopStmltGearOutgoing,
        },
    }
}

fn gear_valves(o: &mut OrderOutputs, order: HandleState) -> (&mut bool, &mut bool) {
    match order {
        HandleState::Down => (&mut o.extend_ev, &mut o.retract_ev),
        HandleState::Up => (&mut o.retract_ev, &mut o.extend_ev),
    }
}

/// Fires at most one sequence event of a module: cleanup of an aborted
/// direction first, then the step the pointer designates, then re-arming
/// of the hydraulics after an inversion that caught them off.
fn sequence_event(
    cfg: &ModelConfig,
    order: HandleState,
    votes: &Votes<'_>,
    o: &mut OrderOutputs,
    seq: &mut SequencePointers,
) -> Option<ControllerEvent> {
    use ControllerEvent::*;
    if votes.handle() != Some(order) {
        return None;
    }
    let dir = direction(order);
    let p = seq.active(order);

    let (_, opposite_gear) = gear_valves(o, order);
    if *opposite_gear {
        *opposite_gear = false;
        return Some(dir.stop_opposite);
    }
    if o.close_ev && (2..=5).contains(&p) {
        o.close_ev = false;
        return Some(StopStmltDoorClosure);
    }

    let armed = o.general_ev || cfg.is(Mutant::DropGeneralEvGuard);
    let doors_open = votes.all(SensorName::DoorOpen, true) && votes.all(SensorName::DoorClosed, false);
    let door_guard = doors_open || (cfg.is(Mutant::DropDoorGuardOnExtend) && order == HandleState::Down);
    let advance = |seq: &mut SequencePointers, ev| {
        seq.set_active(order, p + 1);
        Some(ev)
    };
    let fired = match p {
        1 => {
            o.general_ev = true;
            advance(seq, StmltGeneralEv)
        }
        2 if armed && !o.close_ev => {
            o.open_ev = true;
            advance(seq, StmltDoorOpening)
        }
        3 if armed && door_guard => {
            let (own_gear, _) = gear_valves(o, order);
            *own_gear = true;
            advance(seq, dir.start)
        }
        // Doors caught half-closed by an inversion: reopen them first.
        3 if armed && !o.open_ev => {
            o.open_ev = true;
            Some(StmltDoorOpening)
        }
        4 if votes.all(dir.gear_sensor, true) => {
            let (own_gear, _) = gear_valves(o, order);
            *own_gear = false;
            advance(seq, dir.stop)
        }
        5 => {
            o.open_ev = false;
            advance(seq, StopStmltDoorOpening)
        }
        6 if armed && !o.open_ev => {
            o.close_ev = true;
            advance(seq, StmltDoorClosure)
        }
        7 if votes.all(SensorName::DoorClosed, true) => {
            o.close_ev = false;
            advance(seq, StopStmltDoorClosure)
        }
        8 if !o.any_maneuvering() => {
            o.general_ev = false;
            seq.set_active(order, 0);
            seq.end_cycle = true;
            Some(StopStmltGeneralEv)
        }
        _ => None,
    };
    if fired.is_some() {
        return fired;
    }
    if (2..=7).contains(&p) && !o.general_ev {
        o.general_ev = true;
        return Some(RearmGeneralEv);
    }
    None
}

/// One step of module `m` over its spawned snapshot. Returns `None` when
/// nothing would change (the module event is disabled), otherwise the new
/// k-indexed state and the events fired, sequence event first.
pub fn module_step(
    cfg: &ModelConfig,
    m: ModuleId,
    k: &KIndexedState,
    internals: &ControllerInternals,
) -> Option<(KIndexedState, Vec<ControllerEvent>)> {
    let i = m.index();
    let mut orders = k.k_orders[i];
    let mut outputs = k.k_state_outputs[i];
    let mut seq = k.k_seq[i];
    if outputs.anomaly {
        return None;
    }
    let mut fired = Vec::new();
    if internals.anomaly_armed {
        // Permanent failure: raise the flag, hold the orders as they are.
        outputs = StateOutputs::with_lights(outputs.gears_locked_down, outputs.gears_maneuvering, true);
        fired.push(ControllerEvent::MonitorAnomaly);
    } else {
        let votes = Votes::new(&k.k_inputs[i], &internals.channel_valid);
        if let Some(ev) = sequence_event(cfg, internals.order, &votes, &mut orders, &mut seq) {
            fired.push(ev);
        }
        let monitored =
            StateOutputs::with_lights(votes.all(SensorName::GearExtended, true), orders.any_maneuvering(), false);
        if monitored != outputs {
            outputs = monitored;
            fired.push(ControllerEvent::MonitorOutputs);
        }
    }
    if fired.is_empty() {
        return None;
    }
    let mut next = k.clone();
    next.k_orders[i] = orders;
    next.k_state_outputs[i] = outputs;
    next.k_seq[i] = seq;
    Some((next, fired))
}

/// Merges the module outputs: OR of every boolean (AND under the
/// swap-merge mutant), lights derived from the merged flags.
pub fn merge_outputs(cfg: &ModelConfig, k: &KIndexedState) -> (OrderOutputs, StateOutputs) {
    let and = cfg.is(Mutant::SwapMergeToAnd);
    let join = |a: bool, b: bool| if and { a && b } else { a || b };
    let [a, b] = [k.k_orders[0].as_array(), k.k_orders[1].as_array()];
    let orders = OrderOutputs::from_array(std::array::from_fn(|j| join(a[j], b[j])));
    let [x, y] = &k.k_state_outputs;
    let outputs = StateOutputs::with_lights(
        join(x.gears_locked_down, y.gears_locked_down),
        join(x.gears_maneuvering, y.gears_maneuvering),
        join(x.anomaly, y.anomaly),
    );
    (orders, outputs)
}

/// Merged view of the sequence pointers over the live modules.
pub fn merge_pointers(k: &KIndexedState, silent: &[bool; 2], current: SequencePointers) -> SequencePointers {
    let live: Vec<&SequencePointers> = (0..2).filter(|&i| !silent[i]).map(|i| &k.k_seq[i]).collect();
    if live.is_empty() {
        return current;
    }
    SequencePointers {
        next_og_seq: live.iter().map(|s| s.next_og_seq).max().unwrap_or(0),
        next_rt_seq: live.iter().map(|s| s.next_rt_seq).max().unwrap_or(0),
        end_cycle: live.iter().any(|s| s.end_cycle),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandleError {
    #[error("handle already ordered {0}")]
    NoOpHandleMove(HandleState),
}

/// Pilot moves the handle to `dir`: starts a new control cycle.
///
/// The handle channels are re-sensed in the same event so that the order
/// and the sensed handle never disagree. The opposite sequence resumes at
/// the step given by the inversion table.
pub fn handle_event(cfg: &ModelConfig, dir: HandleState, s: &SystemState) -> Result<SystemState, HandleError> {
    if dir == s.internals.order {
        return Err(HandleError::NoOpHandleMove(dir));
    }
    let mut n = s.clone();
    n.plant.pilot_handle = dir;
    n.plant = switch_transition(&n.plant, true, false);
    n.inputs.handle = sense(&n.plant).handle;
    n.internals.spawn_pending = true;
    n.internals.health_pending = true;

    let old = usize::from(s.internals.seq.active(s.internals.order)).min(8);
    let mut seq = SequencePointers { end_cycle: false, ..Default::default() };
    seq.set_active(dir, cfg.resume[old]);
    n.internals.order = dir;
    n.internals.seq = seq;
    n.kstate.k_seq = [seq; 2];

    n.ldate.clear();
    let start = match dir {
        HandleState::Down => ObsEvent::DownH,
        HandleState::Up => ObsEvent::UpH,
    };
    Ok(monitor::stamp(start, &n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{initial_state, DoorPhysState};

    fn bools(n: u8) -> [bool; 3] {
        [n & 1 != 0, n & 2 != 0, n & 4 != 0]
    }

    #[test]
    fn vote_matches_majority_definition_on_all_triples() {
        for n in 0..8u8 {
            let v = bools(n);
            let trues = v.iter().filter(|b| **b).count();
            let majority = trues >= 2;
            let r = vote3(v, [true; 3]).unwrap();
            assert_eq!(r.value, Some(majority));
            assert_eq!(r.unanimous, trues == 0 || trues == 3);
            for i in 0..3 {
                assert_eq!(r.dissent[i], v[i] != majority, "triple {v:?}");
            }
        }
    }

    #[test]
    fn two_valid_disagreeing_channels_give_no_decision() {
        for invalid in 0..3 {
            let mut valid = [true; 3];
            valid[invalid] = false;
            for n in 0..8u8 {
                let v = bools(n);
                let live: Vec<usize> = (0..3).filter(|&i| i != invalid).collect();
                let r = vote3(v, valid).unwrap();
                if v[live[0]] != v[live[1]] {
                    assert_eq!(r.value, None);
                    assert!(live.iter().all(|&i| r.dissent[i]));
                    assert!(!r.dissent[invalid]);
                } else {
                    assert_eq!(r.value, Some(v[live[0]]));
                    assert!(r.unanimous);
                }
            }
        }
    }

    #[test]
    fn single_and_no_valid_channel() {
        assert_eq!(vote3([true, false, false], [true, false, false]).unwrap().value, Some(true));
        assert_eq!(vote3([true; 3], [false; 3]), Err(VoteError::AllChannelsInvalid));
    }

    #[test]
    fn health_threshold_and_reset() {
        let s = initial_state();
        let mut flags = [[false; 3]; SENSOR_COUNT];
        flags[SensorName::DoorOpen.index()][2] = true;
        let one = update_channel_health(&s.internals, &flags, 1);
        assert!(!one.channel_valid[SensorName::DoorOpen.index()][2]);
        assert!(!one.anomaly_armed);

        let two = update_channel_health(&s.internals, &flags, 2);
        assert!(two.channel_valid[SensorName::DoorOpen.index()][2]);
        assert_eq!(two.disagree_count[SensorName::DoorOpen.index()][2], 1);
        let back = update_channel_health(&two, &[[false; 3]; SENSOR_COUNT], 2);
        assert_eq!(back.disagree_count[SensorName::DoorOpen.index()][2], 0);
        assert!(back.channel_valid[SensorName::DoorOpen.index()][2]);
    }

    #[test]
    fn anomaly_armed_iff_some_sensor_has_at_most_one_valid_channel() {
        let base = initial_state().internals;
        for pattern in 0..8u8 {
            let mut internals = base.clone();
            internals.channel_valid[SensorName::GearExtended.index()] = bools(pattern);
            let next = update_channel_health(&internals, &[[false; 3]; SENSOR_COUNT], 1);
            let valid = bools(pattern).iter().filter(|v| **v).count();
            assert_eq!(next.anomaly_armed, valid <= 1, "pattern {pattern:03b}");
        }
    }

    #[test]
    fn spawn_copies_and_is_idempotent() {
        let cfg = ModelConfig::default();
        let mut s = initial_state();
        s.inputs.door_open[0][0] = true;
        let once = spawn_inputs(&cfg, &s.inputs, &s.kstate);
        assert_eq!(once.k_inputs[0], s.inputs);
        assert_eq!(once.k_inputs[1], s.inputs);
        assert_eq!(spawn_inputs(&cfg, &s.inputs, &once), once);
    }

    #[test]
    fn merge_is_or_on_every_output() {
        let cfg = ModelConfig::default();
        let k = initial_state().kstate;
        for j in 0..5 {
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                let mut k = k.clone();
                let mut x = [false; 5];
                x[j] = a;
                let mut y = [false; 5];
                y[j] = b;
                k.k_orders = [OrderOutputs::from_array(x), OrderOutputs::from_array(y)];
                let (orders, _) = merge_outputs(&cfg, &k);
                assert_eq!(orders.as_array()[j], a || b);
            }
        }
        for flag in 0..3 {
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                let mut k = k.clone();
                let mk = |v: bool| {
                    let f = [flag == 0 && v, flag == 1 && v, flag == 2 && v];
                    StateOutputs::with_lights(f[0], f[1], f[2])
                };
                k.k_state_outputs = [mk(a), mk(b)];
                let (_, out) = merge_outputs(&cfg, &k);
                let got = [out.gears_locked_down, out.gears_maneuvering, out.anomaly][flag];
                assert_eq!(got, a || b);
            }
        }
    }

    #[test]
    fn gear_step_fires_when_doors_seen_open() {
        let cfg = ModelConfig::default();
        let mut s = initial_state();
        s.plant.door_state = [DoorPhysState::OpenUnlocked; 3];
        s.inputs = sense(&s.plant);
        s.kstate.k_inputs = [s.inputs.clone(), s.inputs.clone()];
        s.internals.seq = SequencePointers { next_og_seq: 3, next_rt_seq: 0, end_cycle: false };
        s.kstate.k_seq = [s.internals.seq; 2];
        s.kstate.k_orders[0] = OrderOutputs { general_ev: true, open_ev: true, ..Default::default() };
        let (k, fired) = module_step(&cfg, ModuleId::new(1).unwrap(), &s.kstate, &s.internals).unwrap();
        assert_eq!(fired[0], ControllerEvent::StmltGearOutgoing);
        assert!(k.k_orders[0].extend_ev);
        assert_eq!(k.k_seq[0].next_og_seq, 4);
    }

    #[test]
    fn locked_down_gears_light_green() {
        let cfg = ModelConfig::default();
        let mut s = initial_state();
        s.kstate.k_state_outputs[1] = StateOutputs::dark();
        let (k, fired) = module_step(&cfg, ModuleId::new(2).unwrap(), &s.kstate, &s.internals).unwrap();
        assert_eq!(fired, vec![ControllerEvent::MonitorOutputs]);
        assert_eq!(k.k_state_outputs[1], StateOutputs::with_lights(true, false, false));
    }

    #[test]
    fn latched_anomaly_disables_the_module() {
        let cfg = ModelConfig::default();
        let mut s = initial_state();
        s.internals.seq.set_active(HandleState::Down, 1);
        s.kstate.k_seq = [s.internals.seq; 2];
        s.kstate.k_state_outputs[0] = StateOutputs::with_lights(true, false, true);
        assert!(module_step(&cfg, ModuleId::new(1).unwrap(), &s.kstate, &s.internals).is_none());
    }

    #[test]
    fn handle_up_at_rest_starts_retraction() {
        let cfg = ModelConfig::default();
        let s = initial_state();
        let n = handle_event(&cfg, HandleState::Up, &s).unwrap();
        assert_eq!(n.internals.order, HandleState::Up);
        assert_eq!(n.internals.seq.next_rt_seq, 1);
        assert_eq!(n.internals.seq.next_og_seq, 0);
        assert!(!n.internals.seq.end_cycle);
        assert_eq!(n.ldate.get(&ObsEvent::UpH), Some(&s.llc));
        assert_eq!(handle_event(&cfg, HandleState::Down, &s), Err(HandleError::NoOpHandleMove(HandleState::Down)));
    }

    #[test]
    fn inversion_with_doors_open_resumes_at_gear_step() {
        let cfg = ModelConfig::default();
        let mut s = initial_state();
        s.internals.seq = SequencePointers { next_og_seq: 3, next_rt_seq: 0, end_cycle: false };
        let n = handle_event(&cfg, HandleState::Up, &s).unwrap();
        assert_eq!(n.internals.seq.next_rt_seq, 3);
        assert_eq!(n.internals.seq.next_og_seq, 0);
    }
}
