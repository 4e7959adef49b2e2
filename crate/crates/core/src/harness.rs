//! Experiment orchestration: baselines, config files, multi-seed runs,
//! CSV output, parameter sweeps and the complexity table.
//!
//! Runs for different seeds are independent and are mapped over the worker
//! pool; each run is sequential and writes its own CSV file.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, Agent, StepRecord};
use crate::dqn::{DqnAgent, DqnConfig};
use crate::env::{Action, EnvConfig, EnvState, SpectrumEnv, Transition};
use crate::error::{Error, Result};
use crate::parallel;
use crate::qpolicy::{QuantumAgent, QuantumConfig};

pub const CSV_HEADER: &str = "step,reward,throughput,running_avg,epsilon,iter_seconds";

/// Uniform choice over the three actions.
pub fn random_agent<R: Rng + ?Sized>(_state: &EnvState, rng: &mut R) -> Action {
    Action::ALL[rng.gen_range(0..Action::COUNT)]
}

/// Always transmit actively.
pub fn greedy_agent(_state: &EnvState) -> Action {
    Action::Active
}

#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> RandomAgent {
        RandomAgent { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        Ok(random_agent(state, &mut self.rng))
    }

    fn observe(&mut self, _: &Transition, _: bool) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyAgent;

impl Agent for GreedyAgent {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        Ok(greedy_agent(state))
    }

    fn observe(&mut self, _: &Transition, _: bool) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AgentConfig {
    Random,
    Greedy,
    Dql(DqnConfig),
    Quantum(QuantumConfig),
}

impl AgentConfig {
    pub fn dql(hidden: usize) -> AgentConfig {
        AgentConfig::Dql(DqnConfig { hidden: vec![hidden, hidden], ..DqnConfig::default() })
    }

    pub fn quantum(n_layers: usize) -> AgentConfig {
        AgentConfig::Quantum(QuantumConfig { n_layers, ..QuantumConfig::default() })
    }

    /// Parse a short agent name: `random`, `greedy`, `dql-<width>` or
    /// `quantum-<layers>`. Bare `dql` and `quantum` mean width 32 and 3 layers.
    pub fn from_name(name: &str) -> Result<AgentConfig> {
        let bad = || Error::Config(format!("unknown agent `{name}`"));
        let (kind, arg) = match name.split_once('-') {
            Some((k, a)) => (k, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (name, None),
        };
        match (kind, arg) {
            ("random", None) => Ok(AgentConfig::Random),
            ("greedy", None) => Ok(AgentConfig::Greedy),
            ("dql", w) => Ok(AgentConfig::dql(w.unwrap_or(32))),
            ("quantum", n) => Ok(AgentConfig::quantum(n.unwrap_or(3))),
            _ => Err(bad()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AgentConfig::Random => "random".into(),
            AgentConfig::Greedy => "greedy".into(),
            AgentConfig::Dql(c) => {
                let widths: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
                if c.hidden.windows(2).all(|w| w[0] == w[1]) && !c.hidden.is_empty() {
                    format!("dql-{}", c.hidden[0])
                } else {
                    format!("dql-{}", widths.join("x"))
                }
            }
            AgentConfig::Quantum(c) => format!("quantum-{}", c.n_layers),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AgentConfig::Dql(c) => c.validate(),
            AgentConfig::Quantum(c) => c.validate(),
            _ => Ok(()),
        }
    }

    fn build(&self, env: &EnvConfig, agent_seed: u64) -> Result<Box<dyn Agent>> {
        Ok(match self {
            AgentConfig::Random => Box::new(RandomAgent::new(agent_seed)),
            AgentConfig::Greedy => Box::new(GreedyAgent),
            AgentConfig::Dql(c) => Box::new(DqnAgent::new(env, &DqnConfig { seed: agent_seed, ..c.clone() })?),
            AgentConfig::Quantum(c) => Box::new(QuantumAgent::new(env, &QuantumConfig { seed: agent_seed, ..c.clone() })?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub total_steps: u64,
    /// Width of the trailing window reported next to the cumulative mean.
    pub eval_window: usize,
    pub seeds: Vec<u64>,
    /// Directory receiving one CSV per seed; nothing is written when unset.
    pub output: Option<PathBuf>,
    /// Record per-iteration wall-clock. Off by default so that CSV output is
    /// a pure function of config and seed.
    pub timing: bool,
    /// Leading iterations excluded from the mean iteration time.
    pub warmup: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            agent: AgentConfig::quantum(3),
            total_steps: 50_000,
            eval_window: 1000,
            seeds: vec![0, 1, 2, 3, 4],
            output: None,
            timing: false,
            warmup: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_window == 0 {
            return Err(Error::Config("eval_window must be positive".into()));
        }
        self.env.validate()?;
        self.agent.validate()
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }
}

/// Agent RNG seed derived from the run seed, distinct from the environment's.
pub fn agent_seed(seed: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    /// Cumulative mean throughput at the last step, bits/second.
    pub final_running_avg: f64,
    /// Mean throughput over the trailing `eval_window` steps.
    pub window_avg: f64,
    pub mean_reward: f64,
    pub param_count: usize,
    pub mean_iter_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub rows: Vec<StepRecord>,
    pub summary: RunSummary,
}

/// Run one seed of an experiment.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    let env_cfg = EnvConfig { seed, ..config.env.clone() };
    let mut env = SpectrumEnv::new(env_cfg.clone())?;
    let mut agent = config.agent.build(&env_cfg, agent_seed(seed))?;
    let mut rows = Vec::with_capacity(config.total_steps as usize);
    agent::run(&mut env, agent.as_mut(), config.total_steps, config.timing, |r| {
        rows.push(r);
        Ok(())
    })?;
    let summary = summarize(seed, &rows, config.eval_window, config.warmup, agent.param_count());
    Ok(RunRecord { label: config.agent.label(), rows, summary })
}

fn summarize(seed: u64, rows: &[StepRecord], window: usize, warmup: usize, param_count: usize) -> RunSummary {
    let n = rows.len();
    let tail = &rows[n.saturating_sub(window)..];
    let times: Vec<f64> = rows.iter().skip(warmup).filter_map(|r| r.iter_seconds).collect();
    RunSummary {
        seed,
        steps: n as u64,
        final_running_avg: rows.last().map_or(0.0, |r| r.running_avg),
        window_avg: tail.iter().map(|r| r.throughput).sum::<f64>() / tail.len().max(1) as f64,
        mean_reward: rows.iter().map(|r| r.reward).sum::<f64>() / n.max(1) as f64,
        param_count,
        mean_iter_seconds: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub seeds: usize,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    pub mean_window_throughput: f64,
    pub param_count: usize,
    pub mean_iter_seconds: Option<f64>,
}

impl ExperimentSummary {
    pub fn from_runs(label: &str, runs: &[RunSummary]) -> ExperimentSummary {
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.final_running_avg).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter().map(|r| (r.final_running_avg - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let times: Vec<f64> = runs.iter().filter_map(|r| r.mean_iter_seconds).collect();
        ExperimentSummary {
            label: label.to_string(),
            seeds: runs.len(),
            mean_throughput: mean,
            std_throughput: var.sqrt(),
            mean_window_throughput: runs.iter().map(|r| r.window_avg).sum::<f64>() / n,
            param_count: runs.first().map_or(0, |r| r.param_count),
            mean_iter_seconds: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub summary: ExperimentSummary,
}

/// Run every seed (in parallel when enabled) and write per-seed CSVs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let runs: Vec<RunRecord> = parallel::map(&config.seeds, |&seed| run_seed(config, seed))
        .into_iter()
        .collect::<Result<_>>()?;
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir)?;
        for run in &runs {
            let path = dir.join(format!("{}_seed{}.csv", run.label, run.summary.seed));
            write_csv(std::fs::File::create(path)?, &run.rows)?;
        }
    }
    let label = config.agent.label();
    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    Ok(ExperimentResult { summary: ExperimentSummary::from_runs(&label, &summaries), runs })
}

#[derive(Serialize)]
struct CsvRow {
    step: u64,
    reward: f64,
    throughput: f64,
    running_avg: f64,
    epsilon: Option<f64>,
    iter_seconds: Option<f64>,
}

/// Write rows under the fixed header `step,reward,throughput,running_avg,epsilon,iter_seconds`.
/// Missing values are left empty.
pub fn write_csv<W: Write>(writer: W, rows: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(CsvRow {
            step: r.step,
            reward: r.reward,
            throughput: r.throughput,
            running_avg: r.running_avg,
            epsilon: r.epsilon,
            iter_seconds: r.iter_seconds,
        })?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a CSV written by [`write_csv`].
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<StepRecord>> {
    #[derive(Deserialize)]
    struct Row {
        step: u64,
        reward: f64,
        throughput: f64,
        running_avg: f64,
        epsilon: Option<f64>,
        iter_seconds: Option<f64>,
    }
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {}", header.join(","))));
    }
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(StepRecord {
                step: row.step,
                reward: row.reward,
                throughput: row.throughput,
                running_avg: row.running_avg,
                epsilon: row.epsilon,
                iter_seconds: row.iter_seconds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PAccess,
    PProtected,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PAccess => "p_access",
            SweepParam::PProtected => "p_protected",
        }
    }

    fn apply(self, env: &mut EnvConfig, value: f64) {
        match self {
            SweepParam::PAccess => env.p_access = value,
            SweepParam::PProtected => env.p_protected = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: &'static str,
    pub value: f64,
    pub summary: ExperimentSummary,
}

/// Run `agents` at every grid value. CSVs go to `<output>/<param>=<value>/`.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64], agents: &[AgentConfig]) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &value in values {
        for agent in agents {
            let mut cfg = ExperimentConfig { agent: agent.clone(), ..base.clone() };
            param.apply(&mut cfg.env, value);
            cfg.output = base.output.as_ref().map(|d| d.join(format!("{}={value}", param.name())));
            let result = run_experiment(&cfg)?;
            points.push(SweepPoint { param: param.name(), value, summary: result.summary });
        }
    }
    Ok(points)
}

/// The agents of the complexity comparison: DQL-16, DQL-32 and the circuit
/// with 1, 3 and 5 layers.
pub fn table1_agents() -> Vec<AgentConfig> {
    vec![
        AgentConfig::dql(16),
        AgentConfig::dql(32),
        AgentConfig::quantum(1),
        AgentConfig::quantum(3),
        AgentConfig::quantum(5),
    ]
}

/// Parameter count, iteration time and throughput for each agent.
/// Timing is always enabled here.
pub fn table1(base: &ExperimentConfig) -> Result<Vec<ExperimentSummary>> {
    table1_agents()
        .into_iter()
        .map(|agent| {
            let cfg = ExperimentConfig { agent, timing: true, ..base.clone() };
            Ok(run_experiment(&cfg)?.summary)
        })
        .collect()
}

/// Write experiment summaries as CSV.
pub fn write_summaries<W: Write>(writer: W, rows: &[ExperimentSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(writer: W, points: &[SweepPoint]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        param: &'a str,
        value: f64,
        label: &'a str,
        seeds: usize,
        mean_throughput: f64,
        std_throughput: f64,
    }
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(Row {
            param: p.param,
            value: p.value,
            label: &p.summary.label,
            seeds: p.summary.seeds,
            mean_throughput: p.summary.mean_throughput,
            std_throughput: p.summary.std_throughput,
        })?;
    }
    w.flush()?;
    Ok(())
}
