use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ambc_qrl::env::{Action, EnvConfig, SpectrumEnv, Transition};
use ambc_qrl::harness::{self, AgentConfig, ExperimentConfig};
use ambc_qrl::parallel;
use ambc_qrl::qpolicy::{GradientOptions, ReuploadingCircuit, StateEncoder, Trajectory};

fn batch(episodes: usize) -> (EnvConfig, Vec<Trajectory>) {
    let cfg = EnvConfig::default();
    let mut env = SpectrumEnv::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trajectories = (0..episodes)
        .map(|_| {
            env.reset();
            let ts: Vec<Transition> = (0..cfg.horizon).map(|_| env.transition(Action::ALL[rng.gen_range(0..3)]).0).collect();
            Trajectory::new(ts).unwrap()
        })
        .collect();
    (cfg, trajectories)
}

fn policy_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("policy_gradient");
    group.sample_size(10);
    for layers in [1, 3, 5] {
        let (cfg, trajectories) = batch(1);
        let encoder = StateEncoder::new(&cfg);
        let circuit = ReuploadingCircuit::standard(layers).unwrap();
        let params = circuit.init_params(1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let opts = GradientOptions::default();
        group.bench_with_input(BenchmarkId::new("parallel", layers), &layers, |b, _| {
            b.iter(|| circuit.policy_gradient(&encoder, &trajectories, &params, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", layers), &layers, |b, _| {
            b.iter(|| circuit.policy_gradient_sequential(&encoder, &trajectories, &params, &opts).unwrap())
        });
    }
    group.finish();
}

fn multi_seed(c: &mut Criterion) {
    let mut group = c.benchmark_group("multi_seed_runs");
    group.sample_size(10);
    let cfg = ExperimentConfig { agent: AgentConfig::quantum(3), total_steps: 2_000, seeds: (0..4).collect(), ..ExperimentConfig::default() };
    group.bench_function("parallel", |b| b.iter(|| harness::run_experiment(&cfg).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| parallel::map_sequential(&cfg.seeds, |&s| harness::run_seed(&cfg, s).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, policy_gradient, multi_seed);
criterion_main!(benches);
