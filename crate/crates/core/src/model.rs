//! Domain types for the landing-gear system and the canonical initial states.
//!
//! Every map over a finite index set (channels, doors, gears, modules) is a
//! fixed-size array, so totality holds by construction. Enum variants carry
//! the names used in the original Event-B model when serialized.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::plant::FaultSpec;

macro_rules! named_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::model::UnknownName;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err($crate::model::UnknownName { kind: stringify!($name), name: s.to_string() }),
                }
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <String as ::serde::Deserialize>::deserialize(d)?;
                s.parse().map_err(::serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use named_enum;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

named_enum! {
    pub enum HandleState { Down => "hDown", Up => "hUp" }
}

impl HandleState {
    pub fn opposite(self) -> Self {
        match self {
            HandleState::Down => HandleState::Up,
            HandleState::Up => HandleState::Down,
        }
    }
}

named_enum! {
    pub enum SwitchState { Open => "openSW", Closed => "closedSW" }
}

named_enum! {
    pub enum DoorId { Front => "FD", Right => "RD", Left => "LD" }
}

named_enum! {
    pub enum GearId { Front => "FG", Left => "LG", Right => "RG" }
}

named_enum! {
    /// `notOpenLocked` and `notOpenNotLocked` are accepted as aliases of the
    /// two closed states when parsing.
    pub enum DoorPhysState {
        ClosedLocked => "ClosedLocked",
        ClosedUnlocked => "ClosedUnlocked",
        OpenUnlocked => "OpenUnlocked",
    }
}

impl DoorPhysState {
    pub fn parse_alias(s: &str) -> Result<Self, UnknownName> {
        match s {
            "notOpenLocked" => Ok(DoorPhysState::ClosedLocked),
            "notOpenNotLocked" => Ok(DoorPhysState::ClosedUnlocked),
            other => other.parse(),
        }
    }
}

named_enum! {
    pub enum GearPhysState {
        RetractedLocked => "RetractedLocked",
        RetractedUnlocked => "RetractedUnlocked",
        ExtendedUnlocked => "ExtendedUnlocked",
        ExtendedLocked => "ExtendedLocked",
    }
}

named_enum! {
    pub enum LightState { On => "lightON", Off => "lightOFF" }
}

impl From<bool> for LightState {
    fn from(on: bool) -> Self {
        if on {
            LightState::On
        } else {
            LightState::Off
        }
    }
}

named_enum! {
    /// Observable events stamped by the logical clock.
    pub enum ObsEvent {
        DownH => "downH",
        UpH => "upH",
        Dcge => "dcge",
        Doge => "doge",
    }
}

named_enum! {
    pub enum SensorName {
        Handle => "handle",
        Switch => "analogical_switch",
        GearExtended => "gear_extended",
        GearRetracted => "gear_retracted",
        DoorClosed => "door_closed",
        DoorOpen => "door_open",
    }
}

impl SensorName {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Sensors indexed by a door or gear in addition to the channel.
    pub fn is_per_device(self) -> bool {
        !matches!(self, SensorName::Handle | SensorName::Switch)
    }

    pub fn devices(self) -> Vec<Device> {
        match self {
            SensorName::Handle | SensorName::Switch => vec![],
            SensorName::GearExtended | SensorName::GearRetracted => {
                GearId::ALL.iter().map(|&g| Device::Gear(g)).collect()
            }
            SensorName::DoorClosed | SensorName::DoorOpen => DoorId::ALL.iter().map(|&d| Device::Door(d)).collect(),
        }
    }
}

named_enum! {
    /// Kernel scheduling phase of one sense/decision/order macro-cycle.
    pub enum Phase { Sense => "sense", Decision => "decision", Order => "order" }
}

impl Phase {
    pub fn next(self) -> Phase {
        match self {
            Phase::Sense => Phase::Decision,
            Phase::Decision => Phase::Order,
            Phase::Order => Phase::Sense,
        }
    }
}

impl DoorId {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl GearId {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A door or a gear, for per-device sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Device {
    Door(DoorId),
    Gear(GearId),
}

impl Device {
    pub fn index(self) -> usize {
        match self {
            Device::Door(d) => d.index(),
            Device::Gear(g) => g.index(),
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Device::Door(d) => d.fmt(f),
            Device::Gear(g) => g.fmt(f),
        }
    }
}

impl FromStr for Device {
    type Err = UnknownName;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<DoorId>()
            .map(Device::Door)
            .or_else(|_| s.parse::<GearId>().map(Device::Gear))
            .map_err(|_| UnknownName { kind: "Device", name: s.to_string() })
    }
}

/// Sensor channel in `{1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ChannelId(u8);

impl ChannelId {
    pub const ALL: [ChannelId; 3] = [ChannelId(1), ChannelId(2), ChannelId(3)];

    pub fn new(n: u8) -> Option<Self> {
        (1..=3).contains(&n).then_some(ChannelId(n))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }
}

impl TryFrom<u8> for ChannelId {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, String> {
        ChannelId::new(n).ok_or_else(|| format!("channel {n} outside 1..=3"))
    }
}

impl From<ChannelId> for u8 {
    fn from(c: ChannelId) -> u8 {
        c.0
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Redundant computing module in `{1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ModuleId(u8);

impl ModuleId {
    pub const ALL: [ModuleId; 2] = [ModuleId(1), ModuleId(2)];

    pub fn new(n: u8) -> Option<Self> {
        (1..=2).contains(&n).then_some(ModuleId(n))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }
}

impl TryFrom<u8> for ModuleId {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, String> {
        ModuleId::new(n).ok_or_else(|| format!("module {n} outside 1..=2"))
    }
}

impl From<ModuleId> for u8 {
    fn from(m: ModuleId) -> u8 {
        m.0
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Per-channel, per-device boolean sensor map: `[channel][device]`.
pub type ChannelDeviceMap = [[bool; 3]; 3];

/// The triplicated interface inputs of the digital part.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SensedInputs {
    pub handle: [HandleState; 3],
    pub analogical_switch: [SwitchState; 3],
    pub gear_extended: ChannelDeviceMap,
    pub gear_retracted: ChannelDeviceMap,
    pub door_closed: ChannelDeviceMap,
    pub door_open: ChannelDeviceMap,
}

impl SensedInputs {
    pub fn device_map(&self, sensor: SensorName) -> Option<&ChannelDeviceMap> {
        match sensor {
            SensorName::GearExtended => Some(&self.gear_extended),
            SensorName::GearRetracted => Some(&self.gear_retracted),
            SensorName::DoorClosed => Some(&self.door_closed),
            SensorName::DoorOpen => Some(&self.door_open),
            SensorName::Handle | SensorName::Switch => None,
        }
    }

    pub fn device_map_mut(&mut self, sensor: SensorName) -> Option<&mut ChannelDeviceMap> {
        match sensor {
            SensorName::GearExtended => Some(&mut self.gear_extended),
            SensorName::GearRetracted => Some(&mut self.gear_retracted),
            SensorName::DoorClosed => Some(&mut self.door_closed),
            SensorName::DoorOpen => Some(&mut self.door_open),
            SensorName::Handle | SensorName::Switch => None,
        }
    }

    /// Reading of one channel as a boolean (`hUp` and `closedSW` read as true).
    pub fn reading(&self, sensor: SensorName, channel: usize, device: usize) -> bool {
        match sensor {
            SensorName::Handle => self.handle[channel] == HandleState::Up,
            SensorName::Switch => self.analogical_switch[channel] == SwitchState::Closed,
            _ => self.device_map(sensor).expect("per-device sensor")[channel][device],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OrderOutputs {
    pub general_ev: bool,
    pub open_ev: bool,
    pub close_ev: bool,
    pub extend_ev: bool,
    pub retract_ev: bool,
}

impl OrderOutputs {
    pub fn any_maneuvering(&self) -> bool {
        self.open_ev || self.close_ev || self.extend_ev || self.retract_ev
    }

    pub fn as_array(&self) -> [bool; 5] {
        [self.general_ev, self.open_ev, self.close_ev, self.extend_ev, self.retract_ev]
    }

    pub fn from_array(v: [bool; 5]) -> Self {
        OrderOutputs { general_ev: v[0], open_ev: v[1], close_ev: v[2], extend_ev: v[3], retract_ev: v[4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateOutputs {
    pub gears_locked_down: bool,
    pub gears_maneuvering: bool,
    pub anomaly: bool,
    pub green_light: LightState,
    pub orange_light: LightState,
    pub red_light: LightState,
}

impl StateOutputs {
    /// Builds the outputs with the cockpit lights derived from the flags.
    pub fn with_lights(gears_locked_down: bool, gears_maneuvering: bool, anomaly: bool) -> Self {
        StateOutputs {
            gears_locked_down,
            gears_maneuvering,
            anomaly,
            green_light: gears_locked_down.into(),
            orange_light: (gears_maneuvering && !gears_locked_down).into(),
            red_light: anomaly.into(),
        }
    }

    pub fn dark() -> Self {
        StateOutputs::with_lights(false, false, false)
    }
}

/// Sequence pointers of one computing module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SequencePointers {
    pub next_og_seq: u8,
    pub next_rt_seq: u8,
    pub end_cycle: bool,
}

impl SequencePointers {
    pub fn active(&self, order: HandleState) -> u8 {
        match order {
            HandleState::Down => self.next_og_seq,
            HandleState::Up => self.next_rt_seq,
        }
    }

    pub fn set_active(&mut self, order: HandleState, step: u8) {
        match order {
            HandleState::Down => {
                self.next_og_seq = step;
                self.next_rt_seq = 0;
            }
            HandleState::Up => {
                self.next_rt_seq = step;
                self.next_og_seq = 0;
            }
        }
    }
}

pub const SENSOR_COUNT: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControllerInternals {
    pub order: HandleState,
    /// Merged view of the module pointers (`nextOGseq`, `nextRTseq`, `endCycle`).
    pub seq: SequencePointers,
    /// `[sensor][channel]`
    pub channel_valid: [[bool; 3]; SENSOR_COUNT],
    /// `[sensor][channel]`, saturating at the vote threshold.
    pub disagree_count: [[u8; 3]; SENSOR_COUNT],
    pub anomaly_armed: bool,
    pub spawn_pending: bool,
    pub health_pending: bool,
    pub merge_pending: bool,
}

impl ControllerInternals {
    pub fn valid_count(&self, sensor: SensorName) -> usize {
        self.channel_valid[sensor.index()].iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KIndexedState {
    pub k_inputs: [SensedInputs; 2],
    pub k_orders: [OrderOutputs; 2],
    pub k_state_outputs: [StateOutputs; 2],
    pub k_seq: [SequencePointers; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlantState {
    pub door_state: [DoorPhysState; 3],
    pub gear_state: [GearPhysState; 3],
    pub switch: SwitchState,
    /// Position of the lever in the cockpit.
    pub pilot_handle: HandleState,
    pub faults: std::collections::BTreeSet<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    pub plant: PlantState,
    pub inputs: SensedInputs,
    pub internals: ControllerInternals,
    pub kstate: KIndexedState,
    pub orders: OrderOutputs,
    pub outputs: StateOutputs,
    /// Module-failure injection: a silent module drives all outputs FALSE.
    pub silent: [bool; 2],
    pub phase: Phase,
    /// Once-per-phase bookkeeping for plant moves and module steps.
    pub fired: u8,
    pub llc: u64,
    pub ldate: BTreeMap<ObsEvent, u64>,
}

named_enum! {
    /// Named initial configurations.
    pub enum Preset { Ground => "ground", Flight => "flight" }
}

/// Plane on the ground: gears extended and locked, doors closed, handle down.
pub fn initial_state() -> SystemState {
    preset_state(Preset::Ground)
}

pub fn preset_state(preset: Preset) -> SystemState {
    let (handle, gear, locked_down) = match preset {
        Preset::Ground => (HandleState::Down, GearPhysState::ExtendedLocked, true),
        Preset::Flight => (HandleState::Up, GearPhysState::RetractedLocked, false),
    };
    let plant = PlantState {
        door_state: [DoorPhysState::ClosedLocked; 3],
        gear_state: [gear; 3],
        switch: SwitchState::Open,
        pilot_handle: handle,
        faults: Default::default(),
    };
    let inputs = crate::plant::sense(&plant);
    let seq = SequencePointers { next_og_seq: 0, next_rt_seq: 0, end_cycle: true };
    let outputs = StateOutputs::with_lights(locked_down, false, false);
    let orders = OrderOutputs::default();
    SystemState {
        internals: ControllerInternals {
            order: handle,
            seq,
            channel_valid: [[true; 3]; SENSOR_COUNT],
            disagree_count: [[0; 3]; SENSOR_COUNT],
            anomaly_armed: false,
            spawn_pending: false,
            health_pending: false,
            merge_pending: false,
        },
        kstate: KIndexedState {
            k_inputs: [inputs.clone(), inputs.clone()],
            k_orders: [orders; 2],
            k_state_outputs: [outputs; 2],
            k_seq: [seq; 2],
        },
        plant,
        inputs,
        orders,
        outputs,
        silent: [false; 2],
        phase: Phase::Sense,
        fired: 0,
        llc: 0,
        ldate: BTreeMap::new(),
    }
}

/// Which parts of the state take part in the fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintMode {
    /// Everything, including the logical clock and the absolute stamps.
    Monitor,
    /// Drops `llc` and keeps only the relative order of the stamps, so the
    /// ever-increasing clock does not make every state distinct.
    Explorer,
}

/// 64-bit FNV-1a; fixed keys so fingerprints are stable across processes.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

pub fn state_fingerprint(s: &SystemState, mode: FingerprintMode) -> u64 {
    let mut h = Fnv64::default();
    s.plant.hash(&mut h);
    s.inputs.hash(&mut h);
    s.internals.hash(&mut h);
    s.kstate.hash(&mut h);
    s.orders.hash(&mut h);
    s.outputs.hash(&mut h);
    s.silent.hash(&mut h);
    s.phase.hash(&mut h);
    s.fired.hash(&mut h);
    match mode {
        FingerprintMode::Monitor => {
            s.llc.hash(&mut h);
            s.ldate.hash(&mut h);
        }
        FingerprintMode::Explorer => {
            let mut stamps: Vec<_> = s.ldate.iter().map(|(e, t)| (*t, *e)).collect();
            stamps.sort();
            stamps.len().hash(&mut h);
            for (_, e) in stamps {
                e.hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Fingerprint in monitor mode (the default for traces).
pub fn fingerprint(s: &SystemState) -> u64 {
    state_fingerprint(s, FingerprintMode::Monitor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_conventions() {
        let s = initial_state();
        assert_eq!(s.plant.gear_state[GearId::Front.index()], GearPhysState::ExtendedLocked);
        assert!(!s.orders.open_ev && !s.orders.close_ev);
        assert!(s.outputs.gears_locked_down);
        assert_eq!(s.outputs.green_light, LightState::On);
        assert_eq!(s.outputs.orange_light, LightState::Off);
        assert_eq!(s.outputs.red_light, LightState::Off);
        assert_eq!(s.llc, 0);
        assert!(s.ldate.is_empty());
        assert!(s.internals.seq.end_cycle);
        assert_eq!(s.kstate.k_inputs[0], s.inputs);
        assert_eq!(s.kstate.k_inputs[1], s.inputs);
        assert!(s.internals.channel_valid.iter().flatten().all(|v| *v));
    }

    #[test]
    fn fingerprint_is_deterministic() {
        assert_eq!(fingerprint(&initial_state()), fingerprint(&initial_state()));
        // Frozen value: fingerprints must not change between processes.
        let a = fingerprint(&initial_state());
        let b = fingerprint(&initial_state());
        assert_eq!(a, b);
    }

    #[test]
    fn explorer_mode_ignores_clock() {
        let a = initial_state();
        let mut b = initial_state();
        b.llc = 42;
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(state_fingerprint(&a, FingerprintMode::Explorer), state_fingerprint(&b, FingerprintMode::Explorer));
        // Same stamp order, different absolute values.
        let mut c = a.clone();
        c.ldate.insert(ObsEvent::UpH, 3);
        let mut d = a.clone();
        d.ldate.insert(ObsEvent::UpH, 17);
        assert_eq!(state_fingerprint(&c, FingerprintMode::Explorer), state_fingerprint(&d, FingerprintMode::Explorer));
        assert_ne!(state_fingerprint(&a, FingerprintMode::Explorer), state_fingerprint(&c, FingerprintMode::Explorer));
    }

    #[test]
    fn door_state_aliases() {
        assert_eq!(DoorPhysState::parse_alias("notOpenLocked"), Ok(DoorPhysState::ClosedLocked));
        assert_eq!(DoorPhysState::parse_alias("notOpenNotLocked"), Ok(DoorPhysState::ClosedUnlocked));
        assert_eq!(DoorPhysState::parse_alias("OpenUnlocked"), Ok(DoorPhysState::OpenUnlocked));
    }

    #[test]
    fn ids_reject_out_of_range() {
        assert!(ChannelId::new(0).is_none());
        assert!(ChannelId::new(4).is_none());
        assert!(ModuleId::new(3).is_none());
        assert_eq!(ChannelId::new(2).unwrap().index(), 1);
    }
}
