//! Requirement predicates over single states (safety, anomaly consistency,
//! binding invariants) and over the observation log (cycle reachability).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{fingerprint, named_enum, HandleState, ObsEvent, SensorName, SystemState};

named_enum! {
    pub enum Requirement {
        R21 => "R21",
        R22 => "R22",
        R31 => "R31",
        R32 => "R32",
        R41 => "R41",
        R42 => "R42",
        R51 => "R51",
        Ano => "ANO",
        Bind => "BIND",
        R11bis => "R11bis",
        R12bis => "R12bis",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequirementKind {
    StatePredicate,
    CyclePredicate,
}

impl Requirement {
    pub const STATE: [Requirement; 9] = [
        Requirement::R21,
        Requirement::R22,
        Requirement::R31,
        Requirement::R32,
        Requirement::R41,
        Requirement::R42,
        Requirement::R51,
        Requirement::Ano,
        Requirement::Bind,
    ];

    pub fn kind(self) -> RequirementKind {
        match self {
            Requirement::R11bis | Requirement::R12bis => RequirementKind::CyclePredicate,
            _ => RequirementKind::StatePredicate,
        }
    }

    /// The cycle predicate closing a cycle started by `order`.
    pub fn cycle_for(order: HandleState) -> Requirement {
        match order {
            HandleState::Down => Requirement::R11bis,
            HandleState::Up => Requirement::R12bis,
        }
    }

    /// (start marker, end marker, forbidden marker) of a cycle predicate.
    pub fn markers(self) -> Option<(ObsEvent, ObsEvent, ObsEvent)> {
        match self {
            Requirement::R11bis => Some((ObsEvent::DownH, ObsEvent::Dcge, ObsEvent::UpH)),
            Requirement::R12bis => Some((ObsEvent::UpH, ObsEvent::Doge, ObsEvent::DownH)),
            _ => None,
        }
    }
}

/// Evidence attached to a failed verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    State { fingerprint: String },
    Stamps { di: Option<u64>, dj: u64, ii: Option<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub requirement: Requirement,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Trace step at which the verdict was taken, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<u64>,
}

impl Verdict {
    fn ok(requirement: Requirement) -> Self {
        Verdict { requirement, holds: true, witness: None, position: None }
    }

    pub fn at(mut self, position: u64) -> Self {
        self.position = Some(position);
        self
    }
}

pub fn fp_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

/// Handle values over the channels still trusted by the voter.
fn trusted_handle_range(s: &SystemState) -> Vec<HandleState> {
    let valid = s.internals.channel_valid[SensorName::Handle.index()];
    (0..3).filter(|&i| valid[i]).map(|i| s.inputs.handle[i]).collect()
}

fn all_doors_sensed_open(s: &SystemState) -> bool {
    s.inputs.door_open.iter().flatten().all(|v| *v)
}

fn anomaly_consistent(s: &SystemState) -> bool {
    let out = &s.outputs;
    let lights = (!out.gears_locked_down || out.green_light == crate::model::LightState::On)
        && (!out.anomaly || out.red_light == crate::model::LightState::On);
    if !lights {
        return false;
    }
    if out.anomaly || s.internals.health_pending {
        return true;
    }
    let valid = &s.internals.channel_valid;
    let pair_ok = |a: SensorName, b: SensorName| {
        let (ma, mb) = (s.inputs.device_map(a).unwrap(), s.inputs.device_map(b).unwrap());
        (0..3).all(|i| !(valid[a.index()][i] && valid[b.index()][i]) || (0..3).all(|d| !(ma[i][d] && mb[i][d])))
    };
    pair_ok(SensorName::DoorClosed, SensorName::DoorOpen)
        && pair_ok(SensorName::GearExtended, SensorName::GearRetracted)
}

fn binding_holds(s: &SystemState) -> bool {
    let k = &s.kstate;
    if !s.internals.spawn_pending && k.k_inputs.iter().any(|ki| *ki != s.inputs) {
        return false;
    }
    if s.internals.merge_pending {
        return true;
    }
    let member = |global: bool, a: bool, b: bool| (global == a || global == b) && (!(a || b) || global);
    let (g, a, b) = (s.orders.as_array(), k.k_orders[0].as_array(), k.k_orders[1].as_array());
    if (0..5).any(|j| !member(g[j], a[j], b[j])) {
        return false;
    }
    let flags = |o: &crate::model::StateOutputs| [o.gears_locked_down, o.gears_maneuvering, o.anomaly];
    let (g, a, b) = (flags(&s.outputs), flags(&k.k_state_outputs[0]), flags(&k.k_state_outputs[1]));
    (0..3).all(|j| member(g[j], a[j], b[j]))
}

/// Evaluates one state predicate.
pub fn holds(req: Requirement, s: &SystemState) -> bool {
    let o = &s.orders;
    match req {
        Requirement::R21 => {
            s.internals.order != HandleState::Down || s.internals.health_pending || {
                let r = trusted_handle_range(s);
                r.is_empty() || r.iter().any(|h| *h != HandleState::Up)
            }
        }
        Requirement::R22 => {
            s.internals.order != HandleState::Up || s.internals.health_pending || {
                let r = trusted_handle_range(s);
                r.is_empty() || r.iter().any(|h| *h != HandleState::Down)
            }
        }
        Requirement::R31 => !o.extend_ev || all_doors_sensed_open(s),
        Requirement::R32 => !o.retract_ev || all_doors_sensed_open(s),
        Requirement::R41 => !(o.open_ev && o.close_ev),
        Requirement::R42 => !(o.extend_ev && o.retract_ev),
        Requirement::R51 => !o.any_maneuvering() || o.general_ev,
        Requirement::Ano => anomaly_consistent(s),
        Requirement::Bind => binding_holds(s),
        Requirement::R11bis | Requirement::R12bis => true,
    }
}

/// Evaluates every state predicate. Pure: never changes the state.
pub fn check_safety(s: &SystemState) -> Vec<Verdict> {
    let mut fp = None;
    Requirement::STATE
        .iter()
        .map(|&req| {
            if holds(req, s) {
                Verdict::ok(req)
            } else {
                let fingerprint = fp_hex(*fp.get_or_insert_with(|| fingerprint(s)));
                Verdict {
                    requirement: req,
                    holds: false,
                    witness: Some(Witness::State { fingerprint }),
                    position: None,
                }
            }
        })
        .collect()
}

/// Requirements violated in `s`.
pub fn violations(s: &SystemState) -> Vec<Requirement> {
    Requirement::STATE.into_iter().filter(|&r| !holds(r, s)).collect()
}

/// Stamps `obs` with the current logical time.
pub fn stamp(obs: ObsEvent, s: &SystemState) -> SystemState {
    let mut n = s.clone();
    n.ldate.insert(obs, s.llc);
    n
}

/// The stamps of the current control cycle.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObservationLog {
    pub ldate: BTreeMap<ObsEvent, u64>,
    pub llc: u64,
    pub end_cycle: bool,
}

impl ObservationLog {
    pub fn of(s: &SystemState) -> Self {
        ObservationLog { ldate: s.ldate.clone(), llc: s.llc, end_cycle: s.internals.seq.end_cycle }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("{0}: cycle not complete")]
    IncompleteCycle(Requirement),
    #[error("{0} is not a cycle predicate")]
    NotACyclePredicate(Requirement),
}

/// Cycle reachability: the cycle ending at `dj` was started by its order at
/// some `di < dj`, and the opposite order was not stamped in `[di, dj)`.
pub fn check_r1(log: &ObservationLog, req: Requirement) -> Result<Verdict, MonitorError> {
    let (start, end, forbidden) = req.markers().ok_or(MonitorError::NotACyclePredicate(req))?;
    let dj = match log.ldate.get(&end) {
        Some(&dj) if log.end_cycle && dj < log.llc => dj,
        _ => return Err(MonitorError::IncompleteCycle(req)),
    };
    let fail = |di, ii| Verdict {
        requirement: req,
        holds: false,
        witness: Some(Witness::Stamps { di, dj, ii }),
        position: None,
    };
    let di = match log.ldate.get(&start) {
        Some(&di) if di < dj => di,
        other => return Ok(fail(other.copied(), None)),
    };
    match log.ldate.get(&forbidden) {
        Some(&ii) if (di..dj).contains(&ii) => Ok(fail(Some(di), Some(ii))),
        _ => Ok(Verdict::ok(req)),
    }
}
