//! Oracle and invariant checks, shared by the `selftest` subcommand and the
//! acceptance tests.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::Agent;
use crate::dqn::{self, DqnConfig};
use crate::env::{Action, EnvConfig, EnvState, LinkRates, SpectrumEnv, Transition};
use crate::error::Result;
use crate::harness::{self, AgentConfig, ExperimentConfig, GreedyAgent, RandomAgent};
use crate::nn::{dnn_param_count, Mlp};
use crate::oracle;
use crate::qpolicy::{self, ActionObservable, Entangler, PqcParams, ReuploadingCircuit, StateEncoder};
use crate::qsim::{Gate, Pauli, PauliProduct, RotationAxis, Statevector};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> CheckResult {
        CheckResult { name, passed, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

/// Parameter counts of both model families, plus the quantum formula
/// against the stored arrays over N in 1..=5, n in 1..=6.
pub fn check_param_counts() -> CheckResult {
    let mut failures = Vec::new();
    let expected = [
        (dnn_param_count(&[5, 16, 16, 3]), 419, "dnn [5,16,16,3]"),
        (dnn_param_count(&[5, 32, 32, 3]), 1347, "dnn [5,32,32,3]"),
        (qpolicy::param_count(1, 5, 3), 38, "quantum N=1"),
        (qpolicy::param_count(3, 5, 3), 78, "quantum N=3"),
        (qpolicy::param_count(5, 5, 3), 118, "quantum N=5"),
    ];
    for (got, want, what) in expected {
        if got != want {
            failures.push(format!("{what}: {got} != {want}"));
        }
    }
    for nl in 1..=5 {
        for nq in 1..=6 {
            let stored = PqcParams::zeros(nl, nq, 3, 1.0).trainable_count();
            if stored != qpolicy::param_count(nl, nq, 3) {
                failures.push(format!("N={nl} n={nq}: stored {stored}"));
            }
        }
    }
    for sizes in [[5, 16, 16, 3], [5, 32, 32, 3]] {
        if Mlp::zeros(&sizes).map(|m| m.param_count()).ok() != Some(dnn_param_count(&sizes)) {
            failures.push(format!("mlp {sizes:?} storage"));
        }
    }
    let passed = failures.is_empty();
    let detail = if passed { "419, 1347, 38, 78, 118; formula matches storage".into() } else { failures.join("; ") };
    CheckResult::new("parameter counts", passed, detail)
}

fn random_gate<R: Rng>(n: usize, rng: &mut R) -> Gate {
    let angle = Uniform::new(-2.0 * std::f64::consts::TAU, 2.0 * std::f64::consts::TAU);
    if n >= 2 && rng.gen_bool(0.25) {
        let a = rng.gen_range(0..n);
        let b = (a + rng.gen_range(1..n)) % n;
        Gate::cz(a, b)
    } else {
        let axis = [RotationAxis::X, RotationAxis::Y, RotationAxis::Z][rng.gen_range(0..3)];
        Gate::Rotation { axis, target: rng.gen_range(0..n), angle: angle.sample(rng) }
    }
}

fn random_pauli<R: Rng>(n: usize, rng: &mut R) -> PauliProduct {
    let factors = (0..n)
        .filter_map(|q| match rng.gen_range(0..4) {
            0 => None,
            1 => Some((q, Pauli::X)),
            2 => Some((q, Pauli::Y)),
            _ => Some((q, Pauli::Z)),
        })
        .collect();
    PauliProduct::new(factors).expect("distinct qubits")
}

/// Random circuits on up to five qubits and up to twenty gates against the
/// dense Kronecker-product simulator. Reports the largest amplitude and
/// expectation deviation.
pub fn check_statevector_oracle(n_circuits: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut amp_err, mut exp_err) = (0.0f64, 0.0f64);
    for _ in 0..n_circuits {
        let n = rng.gen_range(1..=5);
        let gates: Vec<Gate> = (0..rng.gen_range(1..=20)).map(|_| random_gate(n, &mut rng)).collect();
        let mut sv = Statevector::zero(n)?;
        sv.apply_all(&gates)?;
        let dense = oracle::run_dense(n, &gates);
        for (a, b) in sv.amplitudes().iter().zip(&dense) {
            amp_err = amp_err.max((a - b).norm());
        }
        let obs = random_pauli(n, &mut rng);
        exp_err = exp_err.max((sv.expectation(&obs)? - oracle::expectation_dense(n, &dense, &obs)).abs());
    }
    let passed = amp_err <= 1e-10 && exp_err <= 1e-10;
    Ok(CheckResult::new(
        "statevector vs dense oracle",
        passed,
        format!("{n_circuits} circuits, max amplitude error {amp_err:.2e}, max expectation error {exp_err:.2e} (tol 1e-10)"),
    ))
}

fn random_params<R: Rng>(n_layers: usize, n_qubits: usize, rng: &mut R) -> PqcParams {
    let mut p = PqcParams::init(n_layers, n_qubits, 3, 1.0, rng);
    let spread = Uniform::new(-2.0, 2.0);
    p.lambda.iter_mut().for_each(|l| *l = spread.sample(rng));
    p.w.iter_mut().for_each(|w| *w = spread.sample(rng));
    p.xi = Uniform::new(0.5, 2.0).sample(rng);
    p
}

fn chain_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|k| (k, k + 1)).collect()
}

fn observables(n: usize) -> Result<(Vec<ActionObservable>, Vec<PauliProduct>)> {
    let obs = ActionObservable::defaults(n, 3);
    let products = obs.iter().map(|o| PauliProduct::z_on(&o.pauli_qubits)).collect::<Result<_>>()?;
    Ok((obs, products))
}

/// Circuit policy of the default five-qubit architecture against the dense
/// evaluation of the same recipe.
pub fn check_policy_oracle(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err = 0.0f64;
    let mut sum_err = 0.0f64;
    for i in 0..n_instances {
        let n_layers = 1 + i % 3;
        let circuit = ReuploadingCircuit::standard(n_layers)?;
        let (_, products) = observables(5)?;
        let params = random_params(n_layers, 5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let pi = circuit.policy(&x, &params)?;
        let want = oracle::reuploading_policy(5, n_layers, &chain_pairs(5), &products, &x, &params.phi, &params.lambda, &params.w, params.xi);
        for (a, b) in pi.iter().zip(&want) {
            err = err.max((a - b).abs());
        }
        sum_err = sum_err.max((pi.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(CheckResult::new(
        "policy vs dense oracle",
        err <= 1e-8 && sum_err <= 1e-12,
        format!("{n_instances} instances, max probability error {err:.2e} (tol 1e-8), max |sum - 1| {sum_err:.2e}"),
    ))
}

/// Norm-wise relative error `max_i |a_i - b_i| / max_i max(|a_i|, |b_i|)`.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Parameter-shift gradients of `sum_a c_a log pi(a|x)` for phi, lambda and
/// w against central differences of the dense oracle, on random circuits
/// with n <= 3 qubits and N <= 2 layers.
pub fn check_circuit_gradients(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..n_instances {
        let n = rng.gen_range(1..=3);
        let n_layers = rng.gen_range(1..=2);
        let (obs, products) = observables(n)?;
        let entangler = if rng.gen_bool(0.5) { Entangler::Chain } else { Entangler::Ring };
        let circuit = ReuploadingCircuit::new(n, n_layers, entangler, &obs)?;
        let mut pairs = chain_pairs(n);
        if entangler == Entangler::Ring && n > 2 {
            pairs.push((n - 1, 0));
        }
        let params = random_params(n_layers, n, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let grads = circuit.state_gradient(&x, &weights, &params)?;

        let objective = |phi: &[f64], lambda: &[f64], w: &[f64]| {
            let pi = oracle::reuploading_policy(n, n_layers, &pairs, &products, &x, phi, lambda, w, params.xi);
            pi.iter().zip(&weights).map(|(p, c)| c * p.ln()).sum::<f64>()
        };
        let fd_phi = oracle::central_difference(|v| objective(v, &params.lambda, &params.w), &params.phi, h);
        let fd_lambda = oracle::central_difference(|v| objective(&params.phi, v, &params.w), &params.lambda, h);
        let fd_w = oracle::central_difference(|v| objective(&params.phi, &params.lambda, v), &params.w, h);
        worst = worst
            .max(vector_relative_error(&grads.phi, &fd_phi))
            .max(vector_relative_error(&grads.lambda, &fd_lambda))
            .max(vector_relative_error(&grads.w, &fd_w));
    }
    Ok(CheckResult::new(
        "parameter-shift gradients vs finite differences",
        worst <= 1e-4,
        format!("{n_instances} draws (n<=3, N<=2), worst relative error {worst:.2e} (tol 1e-4)"),
    ))
}

/// Backpropagation against central differences of the matrix-product
/// network oracle.
pub fn check_mlp_gradients(n_instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..n_instances {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![5];
        sizes.extend((0..depth).map(|_| rng.gen_range(1..=8)));
        sizes.push(3);
        let mlp = Mlp::xavier(&sizes, &mut rng)?;
        let mut params = mlp.params().to_vec();
        let biases = Uniform::new(-0.5, 0.5);
        // give the zero-initialised biases some value too
        let mut offset = 0;
        for w in sizes.windows(2) {
            offset += w[0] * w[1];
            params[offset..offset + w[1]].iter_mut().for_each(|b| *b = biases.sample(&mut rng));
            offset += w[1];
        }
        let mlp = Mlp::from_params(&sizes, params.clone())?;
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g_out: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = mlp.backward(&mlp.forward_trace(&x)?, &g_out)?;
        let fd = oracle::central_difference(
            |p| oracle::mlp_forward(&sizes, p, &x).iter().zip(&g_out).map(|(y, g)| y * g).sum(),
            &params,
            h,
        );
        worst = worst.max(vector_relative_error(&grads, &fd));
    }
    Ok(CheckResult::new(
        "mlp backprop vs finite differences",
        worst <= 1e-4,
        format!("{n_instances} networks, worst relative error {worst:.2e} (tol 1e-4)"),
    ))
}

/// Simulated mean throughput of `agent` against the enumeration oracle,
/// conditioned on the distances realized in each slot. Returns
/// (simulated mean, expected mean, standard error).
pub fn baseline_moments(env_config: &EnvConfig, agent: &mut dyn Agent, probs: [f64; 3], slots: u64) -> Result<(f64, f64, f64)> {
    let mut env = SpectrumEnv::new(env_config.clone())?;
    let (mut sum, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for _ in 0..slots {
        if env.episode_done() {
            env.reset();
        }
        let state: EnvState = *env.state();
        let rates = LinkRates::for_state(env_config, &state)?;
        let m = oracle::slot_moments(env_config, rates.d2d, rates.backscatter, probs);
        expected += m.mean_throughput;
        variance += m.var_throughput;
        let action = agent.act(&state)?;
        let (t, _): (Transition, _) = env.transition(action);
        sum += crate::env::throughput(t.reward);
        agent.observe(&t, env.episode_done())?;
    }
    let n = slots as f64;
    Ok((sum / n, expected / n, variance.sqrt() / n))
}

/// Greedy and random agents against their closed-form expectations, within
/// three standard errors.
pub fn check_baselines(slots: u64, seed: u64) -> Result<CheckResult> {
    let cfg = EnvConfig { seed, ..EnvConfig::default() };
    let greedy = baseline_moments(&cfg, &mut GreedyAgent, [0.0, 1.0, 0.0], slots)?;
    let random = baseline_moments(&cfg, &mut RandomAgent::new(harness::agent_seed(seed)), [1.0 / 3.0; 3], slots)?;
    let z = |(sim, exp, se): (f64, f64, f64)| (sim - exp) / se;
    let (zg, zr) = (z(greedy), z(random));
    Ok(CheckResult::new(
        "baseline closed forms",
        zg.abs() <= 3.0 && zr.abs() <= 3.0,
        format!(
            "{slots} slots; greedy {:.4} vs {:.4} Mbps (z={zg:+.2}), random {:.4} vs {:.4} Mbps (z={zr:+.2})",
            greedy.0 / 1e6,
            greedy.1 / 1e6,
            random.0 / 1e6,
            random.1 / 1e6
        ),
    ))
}

/// Two runs of the same config and seed must give byte-identical CSV.
pub fn check_determinism(steps: u64, seed: u64) -> Result<CheckResult> {
    let agents = [
        AgentConfig::Random,
        AgentConfig::Greedy,
        AgentConfig::Dql(DqnConfig { hidden: vec![8, 8], ..DqnConfig::default() }),
        AgentConfig::quantum(1),
    ];
    let mut mismatched = Vec::new();
    for agent in agents {
        let cfg = ExperimentConfig { agent, total_steps: steps, seeds: vec![seed], ..ExperimentConfig::default() };
        let csv = |cfg: &ExperimentConfig| -> Result<Vec<u8>> {
            let mut buf = Vec::new();
            harness::write_csv(&mut buf, &harness::run_seed(cfg, seed)?.rows)?;
            Ok(buf)
        };
        if csv(&cfg)? != csv(&cfg)? {
            mismatched.push(cfg.agent.label());
        }
    }
    let passed = mismatched.is_empty();
    Ok(CheckResult::new(
        "determinism",
        passed,
        if passed { format!("4 agents x {steps} steps, CSV byte-identical") } else { format!("differs: {}", mismatched.join(", ")) },
    ))
}

/// One gradient step on a fixed batch must lower the loss, and the DQN's
/// TD gradient must match finite differences.
pub fn check_learning_steps(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env_cfg = EnvConfig { seed, ..EnvConfig::default() };
    let mut env = SpectrumEnv::new(env_cfg.clone())?;
    let transitions: Vec<Transition> = (0..env_cfg.horizon).map(|_| env.transition(Action::ALL[rng.gen_range(0..3)]).0).collect();
    let batch = vec![qpolicy::Trajectory::new(transitions.clone())?];
    let circuit = ReuploadingCircuit::standard(2)?;
    let encoder = StateEncoder::new(&env_cfg);
    let opts = qpolicy::GradientOptions::default();
    let params = circuit.init_params(1.0, &mut rng);
    let grads = circuit.policy_gradient(&encoder, &batch, &params, &opts)?;
    let before = circuit.loss(&encoder, &batch, &params, &opts)?;
    let mut stepped = params.clone();
    let lr = 1e-3;
    stepped.phi.iter_mut().zip(&grads.phi).for_each(|(p, g)| *p -= lr * g);
    stepped.lambda.iter_mut().zip(&grads.lambda).for_each(|(p, g)| *p -= lr * g);
    stepped.w.iter_mut().zip(&grads.w).for_each(|(p, g)| *p -= lr * g);
    let after = circuit.loss(&encoder, &batch, &stepped, &opts)?;

    let net = Mlp::xavier(&[5, 6, 6, 3], &mut rng)?;
    let target = Mlp::xavier(&[5, 6, 6, 3], &mut rng)?;
    let (_, td_grads) = dqn::td_loss(&transitions[..16], &net, &target, 0.9, &encoder, 1e6)?;
    let fd = oracle::central_difference(
        |p| {
            let trial = Mlp::from_params(&[5, 6, 6, 3], p.to_vec()).expect("same shape");
            dqn::td_loss(&transitions[..16], &trial, &target, 0.9, &encoder, 1e6).expect("valid batch").0
        },
        net.params(),
        1e-5,
    );
    let td_err = vector_relative_error(&td_grads, &fd);
    Ok(CheckResult::new(
        "learning steps",
        after < before && td_err <= 1e-4,
        format!("policy loss {before:.6} -> {after:.6} at lr 1e-3; TD gradient relative error {td_err:.2e}"),
    ))
}

/// Every check at the sizes of `level`.
pub fn run_all(level: Level) -> Result<Vec<CheckResult>> {
    let full = level == Level::Full;
    Ok(vec![
        check_param_counts(),
        check_statevector_oracle(if full { 200 } else { 40 }, 1)?,
        check_policy_oracle(if full { 30 } else { 6 }, 2)?,
        check_circuit_gradients(if full { 100 } else { 20 }, 3)?,
        check_mlp_gradients(if full { 100 } else { 20 }, 4)?,
        check_baselines(if full { 50_000 } else { 10_000 }, 5)?,
        check_learning_steps(6)?,
        check_determinism(if full { 1_500 } else { 300 }, 7)?,
    ])
}
