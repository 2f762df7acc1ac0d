//! Model configuration: voting threshold, plant stepping mode, handle
//! inversion table and the optional mutant.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Fnv64, UnknownName};

/// Bumped whenever the event catalog or its semantics change; traces
/// recorded under another version are refused on replay.
pub const CATALOG_VERSION: u32 = 1;

/// Step at which the opposite sequence resumes after a handle inversion,
/// indexed by the sequence pointer at the time of the move.
///
/// 0/1: start from scratch. 2: hydraulics armed, doors still closed, so
/// open the doors. 3..=6: doors open (or opening), so go straight to the gear
/// step; a gear valve of the aborted direction is stopped first. 7/8: doors
/// closing or closed, so reopen them.
pub const DEFAULT_RESUME: [u8; 9] = [1, 1, 2, 3, 3, 3, 3, 2, 2];

/// A deliberately broken variant of the controller, used to measure the
/// detection power of the monitor and the explorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mutant {
    /// `stmlt_gear_outgoing` no longer waits for the doors to be open.
    DropDoorGuardOnExtend,
    /// Maneuvering steps no longer require `general_EV`.
    DropGeneralEvGuard,
    /// Outputs are merged with AND instead of OR.
    SwapMergeToAnd,
    /// Module 2 keeps reading stale inputs.
    SkipSpawn,
}

impl Mutant {
    pub const ALL: [Mutant; 4] =
        [Mutant::DropDoorGuardOnExtend, Mutant::DropGeneralEvGuard, Mutant::SwapMergeToAnd, Mutant::SkipSpawn];

    pub fn id(self) -> &'static str {
        match self {
            Mutant::DropDoorGuardOnExtend => "drop-door-guard",
            Mutant::DropGeneralEvGuard => "drop-general-ev-guard",
            Mutant::SwapMergeToAnd => "swap-merge-to-and",
            Mutant::SkipSpawn => "skip-spawn",
        }
    }
}

impl fmt::Display for Mutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Mutant {
    type Err = UnknownName;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        let key = key.to_ascii_lowercase();
        Mutant::ALL
            .into_iter()
            .find(|m| {
                let id: String = m.id().chars().filter(|c| *c != '-').collect();
                id == key || format!("{m:?}").to_ascii_lowercase() == key
            })
            .ok_or_else(|| UnknownName { kind: "mutant", name: s.to_string() })
    }
}

impl Serialize for Mutant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Mutant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Dissent observations before a channel is declared invalid.
    pub vote_threshold: u8,
    /// Step doors and gears one device at a time instead of in lockstep.
    pub interleaved: bool,
    pub resume: [u8; 9],
    pub mutant: Option<Mutant>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { vote_threshold: 1, interleaved: false, resume: DEFAULT_RESUME, mutant: None }
    }
}

impl ModelConfig {
    pub fn with_mutant(mutant: Mutant) -> Self {
        ModelConfig { mutant: Some(mutant), ..Default::default() }
    }

    pub fn is(&self, mutant: Mutant) -> bool {
        self.mutant == Some(mutant)
    }

    /// Stable hash of every semantic setting, written into trace headers.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write_u32(CATALOG_VERSION);
        h.write_u8(self.vote_threshold.max(1));
        h.write_u8(u8::from(self.interleaved));
        h.write(&self.resume);
        h.write(self.mutant.map_or("", Mutant::id).as_bytes());
        h.finish()
    }

    pub fn threshold(&self) -> u8 {
        self.vote_threshold.max(1)
    }
}
