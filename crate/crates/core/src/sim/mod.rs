//! Crowd simulation, closed-loop episodes and benchmark metrics.

pub mod corpus;
pub mod crowd;
pub mod episode;
pub mod metrics;
pub mod scenario;

pub use episode::{run_episode, EpisodeResult, StepLog};
pub use scenario::{Scenario, ScenarioConfig, World};
