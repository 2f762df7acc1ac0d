//! Physical environment: door and gear automata driven by the electro-valves,
//! the analogical switch, and the triplicated micro-sensors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{
    ChannelId, Device, DoorId, DoorPhysState, GearId, GearPhysState, HandleState, OrderOutputs, PlantState,
    SensedInputs, SensorName, SwitchState, UnknownName,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultMode {
    /// Reports the negation of the truth (the KO micro-sensor).
    StuckWrong,
    StuckTrue,
    StuckFalse,
}

impl FaultMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultMode::StuckWrong => "StuckWrong",
            FaultMode::StuckTrue => "StuckTrue",
            FaultMode::StuckFalse => "StuckFalse",
        }
    }

    fn apply(self, truth: bool) -> bool {
        match self {
            FaultMode::StuckWrong => !truth,
            FaultMode::StuckTrue => true,
            FaultMode::StuckFalse => false,
        }
    }
}

impl FromStr for FaultMode {
    type Err = UnknownName;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "StuckWrong" => Ok(FaultMode::StuckWrong),
            "StuckTrue" => Ok(FaultMode::StuckTrue),
            "StuckFalse" => Ok(FaultMode::StuckFalse),
            _ => Err(UnknownName { kind: "FaultMode", name: s.to_string() }),
        }
    }
}

impl Serialize for Device {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Device {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A faulty micro-sensor channel.
///
/// Boolean modes map onto the two-valued sensors as `hUp`/`closedSW` for
/// true and `hDown`/`openSW` for false.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFaultSpec", into = "RawFaultSpec")]
pub struct FaultSpec {
    pub sensor: SensorName,
    pub channel: ChannelId,
    pub device: Option<Device>,
    pub mode: FaultMode,
    /// Macro-cycle at which a scenario activates the fault.
    pub from_step: u32,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FaultSpecError {
    #[error("sensor `{0}` needs a device")]
    MissingDevice(SensorName),
    #[error("sensor `{0}` is not per-device but device `{1}` was given")]
    UnexpectedDevice(SensorName, Device),
    #[error("device `{1}` does not carry a `{0}` sensor")]
    WrongDeviceKind(SensorName, Device),
    #[error("malformed fault `{0}`: expected sensor/channel[/device]/mode[@cycle]")]
    Malformed(String),
    #[error(transparent)]
    Name(#[from] UnknownName),
}

impl FaultSpec {
    pub fn new(
        sensor: SensorName,
        channel: ChannelId,
        device: Option<Device>,
        mode: FaultMode,
    ) -> Result<Self, FaultSpecError> {
        let spec = FaultSpec { sensor, channel, device, mode, from_step: 0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FaultSpecError> {
        match (self.sensor.is_per_device(), self.device) {
            (true, None) => Err(FaultSpecError::MissingDevice(self.sensor)),
            (false, Some(d)) => Err(FaultSpecError::UnexpectedDevice(self.sensor, d)),
            (true, Some(d)) if !self.sensor.devices().contains(&d) => {
                Err(FaultSpecError::WrongDeviceKind(self.sensor, d))
            }
            _ => Ok(()),
        }
    }

    fn matches(&self, sensor: SensorName, channel: usize, device: Option<usize>) -> bool {
        self.sensor == sensor && self.channel.index() == channel && self.device.map(Device::index) == device
    }

    /// Every single-channel fault of the given mode (the 42 sensor channels).
    pub fn all_channels(mode: FaultMode) -> Vec<FaultSpec> {
        let mut out = Vec::new();
        for &sensor in SensorName::ALL {
            for channel in ChannelId::ALL {
                let devices = sensor.devices();
                if devices.is_empty() {
                    out.push(FaultSpec { sensor, channel, device: None, mode, from_step: 0 });
                } else {
                    for d in devices {
                        out.push(FaultSpec { sensor, channel, device: Some(d), mode, from_step: 0 });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sensor, self.channel)?;
        if let Some(d) = self.device {
            write!(f, "/{d}")?;
        }
        write!(f, "/{}", self.mode.as_str())?;
        if self.from_step != 0 {
            write!(f, "@{}", self.from_step)?;
        }
        Ok(())
    }
}

impl FromStr for FaultSpec {
    type Err = FaultSpecError;

    /// Parses `sensor/channel[/device]/mode[@cycle]`, e.g. `door_open/2/LD/StuckWrong`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || FaultSpecError::Malformed(s.to_string());
        let (body, from_step) = match s.split_once('@') {
            Some((b, n)) => (b, n.parse().map_err(|_| malformed())?),
            None => (s, 0),
        };
        let parts: Vec<&str> = body.split('/').collect();
        let (sensor, channel, device, mode) = match parts.as_slice() {
            [s, c, m] => (s, c, None, m),
            [s, c, d, m] => (s, c, Some(d), m),
            _ => return Err(malformed()),
        };
        let channel = channel.parse::<u8>().ok().and_then(ChannelId::new).ok_or_else(malformed)?;
        let spec = FaultSpec {
            sensor: sensor.parse()?,
            channel,
            device: device.map(|d| d.parse()).transpose()?,
            mode: mode.parse()?,
            from_step,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
struct RawFaultSpec {
    sensor: SensorName,
    channel: ChannelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device: Option<Device>,
    mode: FaultMode,
    #[serde(default)]
    from_step: u32,
}

impl TryFrom<RawFaultSpec> for FaultSpec {
    type Error = FaultSpecError;
    fn try_from(r: RawFaultSpec) -> Result<Self, Self::Error> {
        let spec =
            FaultSpec { sensor: r.sensor, channel: r.channel, device: r.device, mode: r.mode, from_step: r.from_step };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<FaultSpec> for RawFaultSpec {
    fn from(f: FaultSpec) -> Self {
        RawFaultSpec { sensor: f.sensor, channel: f.channel, device: f.device, mode: f.mode, from_step: f.from_step }
    }
}

/// Next state of one door, if the valves enable an edge. No hydraulic
/// pressure without `general_EV`.
pub fn door_edge(state: DoorPhysState, o: &OrderOutputs) -> Option<DoorPhysState> {
    use DoorPhysState::*;
    if !o.general_ev {
        return None;
    }
    if o.open_ev {
        match state {
            ClosedLocked => Some(ClosedUnlocked),
            ClosedUnlocked => Some(OpenUnlocked),
            OpenUnlocked => None,
        }
    } else if o.close_ev {
        match state {
            OpenUnlocked => Some(ClosedUnlocked),
            ClosedUnlocked => Some(ClosedLocked),
            ClosedLocked => None,
        }
    } else {
        None
    }
}

pub fn gear_edge(state: GearPhysState, o: &OrderOutputs) -> Option<GearPhysState> {
    use GearPhysState::*;
    if !o.general_ev {
        return None;
    }
    if o.extend_ev {
        match state {
            RetractedLocked => Some(RetractedUnlocked),
            RetractedUnlocked => Some(ExtendedUnlocked),
            ExtendedUnlocked => Some(ExtendedLocked),
            ExtendedLocked => None,
        }
    } else if o.retract_ev {
        match state {
            ExtendedLocked => Some(ExtendedUnlocked),
            ExtendedUnlocked => Some(RetractedUnlocked),
            RetractedUnlocked => Some(RetractedLocked),
            RetractedLocked => None,
        }
    } else {
        None
    }
}

fn synchronized<T: Copy + PartialEq>(states: &[T; 3], edge: impl Fn(T) -> Option<T>) -> Option<[T; 3]> {
    let first = states[0];
    if states.iter().any(|s| *s != first) {
        return None;
    }
    edge(first).map(|next| [next; 3])
}

/// All three doors move together along one automaton edge; `None` when no
/// edge is enabled.
pub fn door_transition(s: &PlantState, o: &OrderOutputs) -> Option<PlantState> {
    let doors = synchronized(&s.door_state, |d| door_edge(d, o))?;
    Some(PlantState { door_state: doors, ..s.clone() })
}

pub fn gear_transition(s: &PlantState, o: &OrderOutputs) -> Option<PlantState> {
    let gears = synchronized(&s.gear_state, |g| gear_edge(g, o))?;
    Some(PlantState { gear_state: gears, ..s.clone() })
}

/// Single-door step for the interleaved plant mode.
pub fn door_move(s: &PlantState, o: &OrderOutputs, door: DoorId) -> Option<PlantState> {
    let next = door_edge(s.door_state[door.index()], o)?;
    let mut p = s.clone();
    p.door_state[door.index()] = next;
    Some(p)
}

pub fn gear_move(s: &PlantState, o: &OrderOutputs, gear: GearId) -> Option<PlantState> {
    let next = gear_edge(s.gear_state[gear.index()], o)?;
    let mut p = s.clone();
    p.gear_state[gear.index()] = next;
    Some(p)
}

pub fn switch_transition(s: &PlantState, handle_moved: bool, cycle_ended: bool) -> PlantState {
    let mut p = s.clone();
    if handle_moved {
        p.switch = SwitchState::Closed;
    } else if cycle_ended {
        p.switch = SwitchState::Open;
    }
    p
}

fn fault_value(s: &PlantState, sensor: SensorName, channel: usize, device: Option<usize>, truth: bool) -> bool {
    s.faults.iter().find(|f| f.matches(sensor, channel, device)).map_or(truth, |f| f.mode.apply(truth))
}

fn to_handle(up: bool) -> HandleState {
    if up {
        HandleState::Up
    } else {
        HandleState::Down
    }
}

fn to_switch(closed: bool) -> SwitchState {
    if closed {
        SwitchState::Closed
    } else {
        SwitchState::Open
    }
}

/// One refresh of every micro-sensor channel. Channels named by an active
/// fault report the fault value instead of the truth.
pub fn sense(s: &PlantState) -> SensedInputs {
    let handle_truth = s.pilot_handle == HandleState::Up;
    let switch_truth = s.switch == SwitchState::Closed;
    let mut handle = [HandleState::Down; 3];
    let mut analogical_switch = [SwitchState::Open; 3];
    for i in 0..3 {
        handle[i] = to_handle(fault_value(s, SensorName::Handle, i, None, handle_truth));
        analogical_switch[i] = to_switch(fault_value(s, SensorName::Switch, i, None, switch_truth));
    }

    let device_map = |sensor: SensorName, truth: &dyn Fn(usize) -> bool| {
        let mut m = [[false; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (d, cell) in row.iter_mut().enumerate() {
                *cell = fault_value(s, sensor, i, Some(d), truth(d));
            }
        }
        m
    };
    let gears = &s.gear_state;
    let doors = &s.door_state;
    SensedInputs {
        handle,
        analogical_switch,
        gear_extended: device_map(SensorName::GearExtended, &|g| gears[g] == GearPhysState::ExtendedLocked),
        gear_retracted: device_map(SensorName::GearRetracted, &|g| gears[g] == GearPhysState::RetractedLocked),
        door_closed: device_map(SensorName::DoorClosed, &|d| doors[d] == DoorPhysState::ClosedLocked),
        door_open: device_map(SensorName::DoorOpen, &|d| doors[d] == DoorPhysState::OpenUnlocked),
    }
}
