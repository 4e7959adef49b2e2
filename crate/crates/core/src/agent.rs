//! Agent interface and the shared interaction loop.

use std::time::Instant;

use crate::env::{self, Action, EnvState, SpectrumEnv, Transition};
use crate::error::Result;

pub trait Agent {
    fn act(&mut self, state: &EnvState) -> Result<Action>;

    /// Called once per slot after the environment has stepped. `episode_end`
    /// is set on the last slot of an episode.
    fn observe(&mut self, transition: &Transition, episode_end: bool) -> Result<()>;

    /// Current exploration rate, for agents that have one.
    fn epsilon(&self) -> Option<f64> {
        None
    }

    fn param_count(&self) -> usize {
        0
    }
}

/// One slot of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based slot counter.
    pub step: u64,
    pub reward: f64,
    pub throughput: f64,
    /// Cumulative mean throughput up to and including this slot.
    pub running_avg: f64,
    pub epsilon: Option<f64>,
    /// Wall-clock of act + step + learn, when timing is enabled.
    pub iter_seconds: Option<f64>,
}

/// Drive `agent` for `total_steps` slots, resetting the environment at
/// every episode boundary, and hand each record to `sink`.
pub fn run<A, F>(env: &mut SpectrumEnv, agent: &mut A, total_steps: u64, timing: bool, mut sink: F) -> Result<()>
where
    A: Agent + ?Sized,
    F: FnMut(StepRecord) -> Result<()>,
{
    let mut total = 0.0;
    for step in 1..=total_steps {
        let start = timing.then(Instant::now);
        if env.episode_done() {
            env.reset();
        }
        let state = *env.state();
        let action = agent.act(&state)?;
        let (transition, _) = env.transition(action);
        agent.observe(&transition, env.episode_done())?;
        let iter_seconds = start.map(|s| s.elapsed().as_secs_f64());

        let throughput = env::throughput(transition.reward);
        total += throughput;
        sink(StepRecord {
            step,
            reward: transition.reward,
            throughput,
            running_avg: total / step as f64,
            epsilon: agent.epsilon(),
            iter_seconds,
        })?;
    }
    Ok(())
}

/// Per-slot series collected by [`run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<StepRecord>,
}

impl LearningCurve {
    pub fn collect<A: Agent + ?Sized>(env: &mut SpectrumEnv, agent: &mut A, total_steps: u64, timing: bool) -> Result<LearningCurve> {
        let mut records = Vec::with_capacity(total_steps as usize);
        run(env, agent, total_steps, timing, |r| {
            records.push(r);
            Ok(())
        })?;
        Ok(LearningCurve { records })
    }

    pub fn final_running_avg(&self) -> Option<f64> {
        self.records.last().map(|r| r.running_avg)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }
}
