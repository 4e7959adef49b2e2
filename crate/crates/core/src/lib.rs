//! Spectrum access for a D2D pair sharing a channel with a cellular user,
//! with an ambient-backscatter fallback mode. Provides the slotted
//! environment, a re-uploading variational-circuit policy trained with
//! REINFORCE, a deep Q-learning baseline and the experiment harness.

pub mod agent;
pub mod channel;
pub mod checkpoint;
pub mod dqn;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod parallel;
pub mod qpolicy;
pub mod qsim;
pub mod selftest;

pub use agent::{Agent, LearningCurve, StepRecord};
pub use env::{Action, EnvConfig, EnvState, SpectrumEnv, Transition};
pub use error::{Error, Result};
pub use harness::{AgentConfig, ExperimentConfig};
