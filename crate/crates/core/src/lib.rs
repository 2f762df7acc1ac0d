//! Executable model of the landing-gear system: plant, redundant controller,
//! phased event kernel, requirement monitor and bounded explorer.

pub mod config;
pub mod controller;
pub mod explorer;
pub mod kernel;
pub mod model;
pub mod monitor;
pub mod plant;
pub mod scenario;
pub mod trace;

pub use config::{ModelConfig, Mutant};
pub use explorer::{explore, Counterexample, ExploreConfig, ExploreReport};
pub use kernel::{ChoicePolicy, Chooser, EventId, Kernel, KernelError};
pub use model::{HandleState, Phase, Preset, SystemState};
pub use monitor::{Requirement, Verdict};
pub use plant::{FaultMode, FaultSpec};
pub use scenario::{RunOptions, RunResult, Scenario};
pub use trace::{Trace, TraceHeader};
