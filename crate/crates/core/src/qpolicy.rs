//! Data re-uploading circuit policy trained with REINFORCE.
//!
//! The circuit alternates trainable single-qubit rotation layers with a CZ
//! entangler and an `RX(lambda * x)` encoding of the state features, and
//! always ends on a rotation layer. Each action reads a weighted Z-product
//! expectation; a softmax with inverse temperature `xi` turns those into
//! action probabilities.
//!
//! Rotation-angle gradients use the parameter-shift rule. Transitions that
//! share a state are grouped first, so every distinct state costs one set of
//! shifted circuits per gradient step no matter how often it was visited.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, LearningCurve};
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::env::{self, Action, EnvConfig, EnvState, SpectrumEnv, StateKey, Transition};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::parallel;
use crate::qsim::{Gate, PauliProduct, Statevector};

pub const N_FEATURES: usize = 5;

/// Trainable parameter count of the circuit: `(4N + 3) n + |A|`.
pub fn param_count(n_layers: usize, n_qubits: usize, n_actions: usize) -> usize {
    (4 * n_layers + 3) * n_qubits + n_actions
}

/// Min-max scaling of an [`EnvState`] into `[0, 1]^5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateEncoder {
    pub d_st_range: [f64; 2],
    pub d_tr_range: [f64; 2],
}

impl StateEncoder {
    pub fn new(config: &EnvConfig) -> StateEncoder {
        StateEncoder { d_st_range: config.d_st_range, d_tr_range: config.d_tr_range }
    }

    pub fn encode(&self, state: &EnvState) -> Result<[f64; N_FEATURES]> {
        Ok([
            state.prev_action.index() as f64 / 2.0,
            state.prev_channel.index() as f64 / 3.0,
            if state.prev_protected { 1.0 } else { 0.0 },
            scale("d_dt", state.d_dt, self.d_st_range)?,
            scale("d_tr", state.d_tr, self.d_tr_range)?,
        ])
    }
}

fn scale(name: &str, v: f64, [lo, hi]: [f64; 2]) -> Result<f64> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::Domain(format!("{name} = {v} lies outside [{lo}, {hi}]")));
    }
    Ok(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entangler {
    /// CZ on (0,1), (1,2), ..., (n-2, n-1).
    #[default]
    Chain,
    /// The chain plus (n-1, 0) when n > 2.
    Ring,
}

/// Qubits whose Z-product is read out for one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionObservable {
    pub action: usize,
    pub pauli_qubits: Vec<usize>,
}

impl ActionObservable {
    /// Z0Z1, Z2Z3 and Z4 on five qubits. Smaller registers spread the
    /// qubits round-robin over the actions.
    pub fn defaults(n_qubits: usize, n_actions: usize) -> Vec<ActionObservable> {
        let subsets: Vec<Vec<usize>> = if n_qubits >= 5 && n_actions == 3 {
            vec![vec![0, 1], vec![2, 3], vec![4]]
        } else if n_qubits >= n_actions {
            (0..n_actions).map(|a| (a..n_qubits).step_by(n_actions).collect()).collect()
        } else {
            // fewer qubits than actions: single qubits, then the full product
            (0..n_actions)
                .map(|a| if a < n_qubits { vec![a] } else { (0..n_qubits).collect() })
                .collect()
        };
        subsets
            .into_iter()
            .enumerate()
            .map(|(action, pauli_qubits)| ActionObservable { action, pauli_qubits })
            .collect()
    }
}

/// Trainable state of the circuit.
///
/// `phi` is indexed `[layer][qubit][rotation]` over `N + 1` rotation layers,
/// `lambda` is `[encoding layer][qubit]` over `N` layers, and `w` holds one
/// weight per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqcParams {
    pub n_layers: usize,
    pub n_qubits: usize,
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
    pub xi: f64,
}

impl PqcParams {
    /// `phi ~ U[0, 2 pi)`, `lambda = 1`, `w = 1`.
    pub fn init<R: Rng + ?Sized>(n_layers: usize, n_qubits: usize, n_actions: usize, xi: f64, rng: &mut R) -> PqcParams {
        let dist = Uniform::new(0.0, TAU);
        let phi = (0..(n_layers + 1) * n_qubits * 3).map(|_| dist.sample(rng)).collect();
        let p = PqcParams {
            n_layers,
            n_qubits,
            phi,
            lambda: vec![1.0; n_layers * n_qubits],
            w: vec![1.0; n_actions],
            xi,
        };
        debug_assert_eq!(p.trainable_count(), param_count(n_layers, n_qubits, n_actions));
        p
    }

    pub fn zeros(n_layers: usize, n_qubits: usize, n_actions: usize, xi: f64) -> PqcParams {
        PqcParams {
            n_layers,
            n_qubits,
            phi: vec![0.0; (n_layers + 1) * n_qubits * 3],
            lambda: vec![0.0; n_layers * n_qubits],
            w: vec![1.0; n_actions],
            xi,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.w.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.phi.len() + self.lambda.len() + self.w.len()
    }

    pub fn phi_index(&self, layer: usize, qubit: usize, rotation: usize) -> usize {
        (layer * self.n_qubits + qubit) * 3 + rotation
    }

    pub fn lambda_index(&self, layer: usize, qubit: usize) -> usize {
        layer * self.n_qubits + qubit
    }

    fn check_shape(&self) -> Result<()> {
        let (nl, nq) = (self.n_layers, self.n_qubits);
        if self.phi.len() != (nl + 1) * nq * 3 || self.lambda.len() != nl * nq || self.w.is_empty() {
            return Err(Error::Shape(format!(
                "parameter arrays phi={}, lambda={}, w={} do not fit N={nl}, n={nq}",
                self.phi.len(),
                self.lambda.len(),
                self.w.len()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (nl, nq) = (self.n_layers, self.n_qubits);
        Checkpoint::new(vec![
            NamedArray::new("phi", vec![nl + 1, nq, 3], self.phi.clone()),
            NamedArray::new("lambda", vec![nl, nq], self.lambda.clone()),
            NamedArray::new("w", vec![self.w.len()], self.w.clone()),
            NamedArray::new("xi", vec![1], vec![self.xi]),
        ])
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<PqcParams> {
        let phi = ckpt.get("phi")?;
        let lambda = ckpt.get("lambda")?;
        let w = ckpt.get("w")?;
        let xi = ckpt.get("xi")?;
        if phi.shape.len() != 3 || phi.shape[2] != 3 || phi.shape[0] == 0 || lambda.shape.len() != 2 || xi.data.len() != 1 {
            return Err(Error::Checkpoint("unexpected circuit parameter shapes".into()));
        }
        let p = PqcParams {
            n_layers: phi.shape[0] - 1,
            n_qubits: phi.shape[1],
            phi: phi.data.clone(),
            lambda: lambda.data.clone(),
            w: w.data.clone(),
            xi: xi.data[0],
        };
        p.check_shape().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(p)
    }
}

/// Gradient of the loss with respect to each parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct PqcGradients {
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
}

impl PqcGradients {
    fn zeros_like(p: &PqcParams) -> PqcGradients {
        PqcGradients { phi: vec![0.0; p.phi.len()], lambda: vec![0.0; p.lambda.len()], w: vec![0.0; p.w.len()] }
    }

    fn add_assign(&mut self, other: &PqcGradients) {
        for (a, b) in [(&mut self.phi, &other.phi), (&mut self.lambda, &other.lambda), (&mut self.w, &other.w)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for v in [&mut self.phi, &mut self.lambda, &mut self.w] {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Where a gate's angle comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleSource {
    Phi(usize),
    /// `lambda[index] * features[feature]`.
    Lambda { index: usize, feature: usize },
    Fixed,
}

/// One episode of transitions, each starting where the previous one ended.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Result<Trajectory> {
        if transitions.windows(2).any(|w| w[0].next_state != w[1].state) {
            return Err(Error::Domain("trajectory is not contiguous".into()));
        }
        Ok(Trajectory { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Discounted reward-to-go `G_t = sum_{t' >= t} gamma^{t'-t} r_{t'}`.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientOptions {
    pub gamma: f64,
    /// Rates are divided by this before returns are formed (1e6 = Mbps).
    pub rate_unit: f64,
    /// Standardize returns across the whole batch.
    pub normalize_returns: bool,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions { gamma: 0.9, rate_unit: 1e6, normalize_returns: true }
    }
}

/// Circuit architecture: register size, depth, read-out and entangler.
#[derive(Debug, Clone, PartialEq)]
pub struct ReuploadingCircuit {
    n_qubits: usize,
    n_layers: usize,
    entangler: Entangler,
    observables: Vec<PauliProduct>,
}

impl ReuploadingCircuit {
    pub fn new(n_qubits: usize, n_layers: usize, entangler: Entangler, observables: &[ActionObservable]) -> Result<Self> {
        if n_qubits == 0 || n_qubits > crate::qsim::MAX_QUBITS || n_layers == 0 {
            return Err(Error::Config(format!("invalid circuit size n={n_qubits}, N={n_layers}")));
        }
        if observables.is_empty() {
            return Err(Error::Config("need at least one action observable".into()));
        }
        let mut sorted: Vec<&ActionObservable> = observables.iter().collect();
        sorted.sort_by_key(|o| o.action);
        let mut products = Vec::with_capacity(sorted.len());
        for (i, o) in sorted.iter().enumerate() {
            if o.action != i {
                return Err(Error::Config(format!("observables must cover actions 0..{} exactly once", sorted.len())));
            }
            if o.pauli_qubits.is_empty() || o.pauli_qubits.iter().any(|&q| q >= n_qubits) {
                return Err(Error::Config(format!("observable for action {i} has an invalid qubit set {:?}", o.pauli_qubits)));
            }
            products.push(PauliProduct::z_on(&o.pauli_qubits)?);
        }
        Ok(ReuploadingCircuit { n_qubits, n_layers, entangler, observables: products })
    }

    /// Five qubits, default read-out, chain entangler.
    pub fn standard(n_layers: usize) -> Result<Self> {
        Self::new(N_FEATURES, n_layers, Entangler::Chain, &ActionObservable::defaults(N_FEATURES, Action::COUNT))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_actions(&self) -> usize {
        self.observables.len()
    }

    pub fn observables(&self) -> &[PauliProduct] {
        &self.observables
    }

    pub fn init_params<R: Rng + ?Sized>(&self, xi: f64, rng: &mut R) -> PqcParams {
        PqcParams::init(self.n_layers, self.n_qubits, self.n_actions(), xi, rng)
    }

    fn check(&self, features: &[f64], params: &PqcParams) -> Result<()> {
        if features.len() != self.n_qubits {
            return Err(Error::Shape(format!("{} features for {} qubits", features.len(), self.n_qubits)));
        }
        params.check_shape()?;
        if params.n_layers != self.n_layers || params.n_qubits != self.n_qubits || params.n_actions() != self.n_actions() {
            return Err(Error::Shape("parameters were built for a different circuit".into()));
        }
        Ok(())
    }

    fn entangling_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        let mut pairs: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|k| (k, k + 1)).collect();
        if self.entangler == Entangler::Ring && n > 2 {
            pairs.push((n - 1, 0));
        }
        pairs
    }

    /// Gate list together with the parameter each gate angle depends on.
    pub fn build_circuit_with_sources(&self, features: &[f64], params: &PqcParams) -> Result<Vec<(Gate, AngleSource)>> {
        self.check(features, params)?;
        let n = self.n_qubits;
        let pairs = self.entangling_pairs();
        let mut gates = Vec::with_capacity((self.n_layers + 1) * 3 * n + self.n_layers * (n + pairs.len()));
        let variational = |gates: &mut Vec<(Gate, AngleSource)>, layer: usize| {
            for k in 0..n {
                let base = params.phi_index(layer, k, 0);
                gates.push((Gate::rx(k, params.phi[base]), AngleSource::Phi(base)));
                gates.push((Gate::ry(k, params.phi[base + 1]), AngleSource::Phi(base + 1)));
                gates.push((Gate::rz(k, params.phi[base + 2]), AngleSource::Phi(base + 2)));
            }
        };
        variational(&mut gates, 0);
        for layer in 1..=self.n_layers {
            for &(a, b) in &pairs {
                gates.push((Gate::cz(a, b), AngleSource::Fixed));
            }
            for (k, x) in features.iter().enumerate() {
                let index = params.lambda_index(layer - 1, k);
                gates.push((Gate::rx(k, params.lambda[index] * x), AngleSource::Lambda { index, feature: k }));
            }
            variational(&mut gates, layer);
        }
        Ok(gates)
    }

    pub fn build_circuit(&self, features: &[f64], params: &PqcParams) -> Result<Vec<Gate>> {
        Ok(self.build_circuit_with_sources(features, params)?.into_iter().map(|(g, _)| g).collect())
    }

    /// Final statevector from `|0...0>`.
    pub fn run(&self, features: &[f64], params: &PqcParams) -> Result<Statevector> {
        let gates = self.build_circuit(features, params)?;
        let mut sv = Statevector::zero(self.n_qubits)?;
        gates.iter().for_each(|g| sv.apply_unchecked(g));
        Ok(sv)
    }

    fn measure(&self, sv: &Statevector) -> Vec<f64> {
        // observables were validated against the register at construction
        self.observables.iter().map(|o| sv.expectation(o).expect("validated observable")).collect()
    }

    /// Unweighted Z-product expectations, one per action.
    pub fn expectations(&self, features: &[f64], params: &PqcParams) -> Result<Vec<f64>> {
        Ok(self.measure(&self.run(features, params)?))
    }

    /// Softmax policy over actions.
    pub fn policy(&self, features: &[f64], params: &PqcParams) -> Result<Vec<f64>> {
        let e = self.expectations(features, params)?;
        Ok(softmax_policy(&e, params))
    }

    /// `-(1/B) sum_traj sum_t log pi(a_t|s_t) G_t`, evaluated directly.
    pub fn loss(&self, encoder: &StateEncoder, batch: &[Trajectory], params: &PqcParams, opts: &GradientOptions) -> Result<f64> {
        let returns = batch_returns(batch, opts)?;
        let mut total = 0.0;
        for (traj, g) in batch.iter().zip(&returns) {
            for (t, gt) in traj.transitions().iter().zip(g) {
                let pi = self.policy(&encoder.encode(&t.state)?, params)?;
                total += pi[t.action.index()].ln() * gt;
            }
        }
        Ok(-total / batch.len() as f64)
    }

    /// Gradient of [`ReuploadingCircuit::loss`]: parameter shift for the
    /// rotation angles (with the chain-rule feature factor for `lambda`) and
    /// the analytic derivative for `w`.
    pub fn policy_gradient(
        &self,
        encoder: &StateEncoder,
        batch: &[Trajectory],
        params: &PqcParams,
        opts: &GradientOptions,
    ) -> Result<PqcGradients> {
        self.policy_gradient_with(encoder, batch, params, opts, false)
    }

    /// Same as [`ReuploadingCircuit::policy_gradient`], never using worker threads.
    pub fn policy_gradient_sequential(
        &self,
        encoder: &StateEncoder,
        batch: &[Trajectory],
        params: &PqcParams,
        opts: &GradientOptions,
    ) -> Result<PqcGradients> {
        self.policy_gradient_with(encoder, batch, params, opts, true)
    }

    fn policy_gradient_with(
        &self,
        encoder: &StateEncoder,
        batch: &[Trajectory],
        params: &PqcParams,
        opts: &GradientOptions,
        sequential: bool,
    ) -> Result<PqcGradients> {
        let returns = batch_returns(batch, opts)?;
        // group visits by state: weight[s][a] = sum of returns of action a taken in s
        let mut groups: BTreeMap<StateKey, (EnvState, Vec<f64>)> = BTreeMap::new();
        for (traj, g) in batch.iter().zip(&returns) {
            for (t, gt) in traj.transitions().iter().zip(g) {
                let entry = groups.entry(t.state.key()).or_insert_with(|| (t.state, vec![0.0; self.n_actions()]));
                entry.1[t.action.index()] += gt;
            }
        }
        let work: Vec<(Vec<f64>, Vec<f64>)> = groups
            .into_values()
            .map(|(s, w)| Ok((encoder.encode(&s)?.to_vec(), w)))
            .collect::<Result<_>>()?;
        let mut grads = self.weighted_gradient(&work, params, sequential)?;
        grads.scale(-1.0 / batch.len() as f64);
        Ok(grads)
    }

    /// Sum over `(features, weights)` pairs of the gradient of
    /// `sum_a weights[a] log pi(a|features)`.
    pub fn weighted_gradient(&self, work: &[(Vec<f64>, Vec<f64>)], params: &PqcParams, sequential: bool) -> Result<PqcGradients> {
        let per_state = |(features, weights): &(Vec<f64>, Vec<f64>)| self.state_gradient(features, weights, params);
        let parts = if sequential { parallel::map_sequential(work, per_state) } else { parallel::map(work, per_state) };
        let mut grads = PqcGradients::zeros_like(params);
        for part in parts {
            grads.add_assign(&part?);
        }
        Ok(grads)
    }

    /// `sum_a weights[a] log pi(a|features)`.
    pub fn weighted_log_policy(&self, features: &[f64], weights: &[f64], params: &PqcParams) -> Result<f64> {
        let pi = self.policy(features, params)?;
        Ok(pi.iter().zip(weights).map(|(p, w)| w * p.ln()).sum())
    }

    /// Gradient of `sum_a weights[a] log pi(a|s)` for a single state.
    pub fn state_gradient(&self, features: &[f64], weights: &[f64], params: &PqcParams) -> Result<PqcGradients> {
        if weights.len() != self.n_actions() {
            return Err(Error::Shape(format!("{} action weights for {} actions", weights.len(), self.n_actions())));
        }
        let gates = self.build_circuit_with_sources(features, params)?;
        let mut grads = PqcGradients::zeros_like(params);

        let mut sv = Statevector::zero(self.n_qubits)?;
        gates.iter().for_each(|(g, _)| sv.apply_unchecked(g));
        let e = self.measure(&sv);
        let pi = softmax_policy(&e, params);

        // d/dz_b sum_a weights[a] log pi_a = weights[b] - pi_b * sum(weights)
        let total: f64 = weights.iter().sum();
        let coef: Vec<f64> = weights.iter().zip(&pi).map(|(w, p)| w - p * total).collect();
        if coef.iter().all(|&c| c == 0.0) {
            return Ok(grads);
        }
        for (b, g) in grads.w.iter_mut().enumerate() {
            *g = coef[b] * params.xi * e[b];
        }
        // d(sum) / d expectation_b
        let obs_weight: Vec<f64> = coef.iter().zip(&params.w).map(|(c, w)| c * params.xi * w).collect();

        let mut prefix = Statevector::zero(self.n_qubits)?;
        for (i, (gate, source)) in gates.iter().enumerate() {
            let chain = match *source {
                AngleSource::Phi(_) => 1.0,
                AngleSource::Lambda { feature, .. } => features[feature],
                AngleSource::Fixed => 0.0,
            };
            if chain != 0.0 {
                let shifted_expect = |delta: f64| {
                    let mut s = prefix.clone();
                    s.apply_unchecked(&gate.shifted(delta));
                    gates[i + 1..].iter().for_each(|(g, _)| s.apply_unchecked(g));
                    self.measure(&s)
                };
                let plus = shifted_expect(FRAC_PI_2);
                let minus = shifted_expect(-FRAC_PI_2);
                let d_angle: f64 = (0..plus.len()).map(|b| obs_weight[b] * 0.5 * (plus[b] - minus[b])).sum();
                match *source {
                    AngleSource::Phi(j) => grads.phi[j] += d_angle,
                    AngleSource::Lambda { index, .. } => grads.lambda[index] += d_angle * chain,
                    AngleSource::Fixed => {}
                }
            }
            prefix.apply_unchecked(gate);
        }
        Ok(grads)
    }
}

/// `softmax(xi * w_a * e_a)`.
pub fn softmax_policy(expectations: &[f64], params: &PqcParams) -> Vec<f64> {
    let logits: Vec<f64> = expectations.iter().zip(&params.w).map(|(e, w)| params.xi * w * e).collect();
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn batch_returns(batch: &[Trajectory], opts: &GradientOptions) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    if !(0.0..1.0).contains(&opts.gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", opts.gamma)));
    }
    let mut returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|traj| {
            let r: Vec<f64> = traj.transitions().iter().map(|t| env::learning_reward(t.reward, opts.rate_unit)).collect();
            rewards_to_go(&r, opts.gamma)
        })
        .collect();
    if opts.normalize_returns {
        let all: Vec<f64> = returns.iter().flatten().copied().collect();
        if !all.is_empty() {
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let std = (all.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
            for g in returns.iter_mut().flatten() {
                *g = if std > 1e-12 { (*g - mean) / std } else { 0.0 };
            }
        }
    }
    Ok(returns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumConfig {
    pub n_layers: usize,
    pub xi: f64,
    pub lr_phi: f64,
    pub lr_lambda: f64,
    pub lr_w: f64,
    pub gamma: f64,
    /// Episodes collected before each gradient step.
    pub batch_episodes: usize,
    pub rate_unit: f64,
    pub normalize_returns: bool,
    pub entangler: Entangler,
    /// Qubits read out per action; defaults to Z0Z1, Z2Z3, Z4.
    pub observables: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            n_layers: 3,
            xi: 1.0,
            lr_phi: 0.05,
            lr_lambda: 0.01,
            lr_w: 0.1,
            gamma: 0.9,
            batch_episodes: 1,
            rate_unit: 1e6,
            normalize_returns: true,
            entangler: Entangler::Chain,
            observables: None,
            seed: 0,
        }
    }
}

impl QuantumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.batch_episodes == 0 {
            return Err(Error::Config("n_layers and batch_episodes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.rate_unit > 0.0) {
            return Err(Error::Config("rate_unit must be positive".into()));
        }
        for lr in [self.lr_phi, self.lr_lambda, self.lr_w] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} is invalid")));
            }
        }
        Ok(())
    }

    fn circuit(&self) -> Result<ReuploadingCircuit> {
        let observables = match &self.observables {
            Some(sets) => sets
                .iter()
                .enumerate()
                .map(|(action, q)| ActionObservable { action, pauli_qubits: q.clone() })
                .collect(),
            None => ActionObservable::defaults(N_FEATURES, Action::COUNT),
        };
        if observables.len() != Action::COUNT {
            return Err(Error::Config(format!("need {} observables, got {}", Action::COUNT, observables.len())));
        }
        ReuploadingCircuit::new(N_FEATURES, self.n_layers, self.entangler, &observables)
    }

    pub fn gradient_options(&self) -> GradientOptions {
        GradientOptions { gamma: self.gamma, rate_unit: self.rate_unit, normalize_returns: self.normalize_returns }
    }
}

/// Policy-gradient agent: samples from the circuit policy and takes one
/// step of three independent Adam optimizers after every batch of episodes.
#[derive(Debug, Clone)]
pub struct QuantumAgent {
    circuit: ReuploadingCircuit,
    encoder: StateEncoder,
    params: PqcParams,
    opts: GradientOptions,
    batch_episodes: usize,
    opt_phi: Adam,
    opt_lambda: Adam,
    opt_w: Adam,
    rng: ChaCha8Rng,
    episode: Vec<Transition>,
    batch: Vec<Trajectory>,
    // policy per state; valid until the next parameter update
    cache: BTreeMap<StateKey, Vec<f64>>,
    updates: u64,
}

impl QuantumAgent {
    pub fn new(env: &EnvConfig, config: &QuantumConfig) -> Result<QuantumAgent> {
        config.validate()?;
        let circuit = config.circuit()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = circuit.init_params(config.xi, &mut rng);
        Ok(QuantumAgent {
            opt_phi: Adam::new(params.phi.len(), config.lr_phi),
            opt_lambda: Adam::new(params.lambda.len(), config.lr_lambda),
            opt_w: Adam::new(params.w.len(), config.lr_w),
            circuit,
            encoder: StateEncoder::new(env),
            params,
            opts: config.gradient_options(),
            batch_episodes: config.batch_episodes,
            rng,
            episode: Vec::new(),
            batch: Vec::new(),
            cache: BTreeMap::new(),
            updates: 0,
        })
    }

    pub fn params(&self) -> &PqcParams {
        &self.params
    }

    pub fn circuit(&self) -> &ReuploadingCircuit {
        &self.circuit
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn policy(&mut self, state: &EnvState) -> Result<&[f64]> {
        let key = state.key();
        if !self.cache.contains_key(&key) {
            let pi = self.circuit.policy(&self.encoder.encode(state)?, &self.params)?;
            self.cache.insert(key, pi);
        }
        Ok(&self.cache[&key])
    }

    fn update(&mut self) -> Result<()> {
        let grads = self.circuit.policy_gradient(&self.encoder, &self.batch, &self.params, &self.opts)?;
        self.opt_phi.step(&mut self.params.phi, &grads.phi)?;
        self.opt_lambda.step(&mut self.params.lambda, &grads.lambda)?;
        self.opt_w.step(&mut self.params.w, &grads.w)?;
        self.batch.clear();
        self.cache.clear();
        self.updates += 1;
        Ok(())
    }
}

impl Agent for QuantumAgent {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        let u: f64 = self.rng.gen();
        let pi = self.policy(state)?;
        let mut acc = 0.0;
        for (a, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return Action::from_index(a);
            }
        }
        Action::from_index(pi.len() - 1)
    }

    fn observe(&mut self, transition: &Transition, episode_end: bool) -> Result<()> {
        self.episode.push(*transition);
        if episode_end {
            let episode = std::mem::take(&mut self.episode);
            self.batch.push(Trajectory::new(episode)?);
            if self.batch.len() >= self.batch_episodes {
                self.update()?;
            }
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.params.trainable_count()
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct QuantumTraining {
    pub curve: LearningCurve,
    pub params: PqcParams,
}

/// Train a fresh agent on a fresh environment for `total_steps` slots.
pub fn train(env_config: &EnvConfig, config: &QuantumConfig, total_steps: u64) -> Result<QuantumTraining> {
    let mut env = SpectrumEnv::new(env_config.clone())?;
    let mut agent = QuantumAgent::new(env_config, config)?;
    let curve = LearningCurve::collect(&mut env, &mut agent, total_steps, false)?;
    Ok(QuantumTraining { curve, params: agent.params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ChannelState;

    fn state(a: usize, c: ChannelState, p: bool, d_dt: f64, d_tr: f64) -> EnvState {
        EnvState { prev_action: Action::from_index(a).unwrap(), prev_channel: c, prev_protected: p, d_dt, d_tr }
    }

    #[test]
    fn encoding_examples() {
        let enc = StateEncoder::new(&EnvConfig::default());
        assert_eq!(enc.encode(&state(0, ChannelState::Idle, false, 100.0, 10.0)).unwrap(), [0.0; 5]);
        assert_eq!(enc.encode(&state(2, ChannelState::Both, true, 1000.0, 100.0)).unwrap(), [1.0; 5]);
        let mid = enc.encode(&state(1, ChannelState::D2dOnly, false, 550.0, 55.0)).unwrap();
        let want = [0.5, 2.0 / 3.0, 0.0, 0.5, 0.5];
        for (a, b) in mid.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(enc.encode(&state(0, ChannelState::Idle, false, 50.0, 10.0)).is_err());
        assert!(enc.encode(&state(0, ChannelState::Idle, false, 100.0, 101.0)).is_err());
    }

    #[test]
    fn gate_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ReuploadingCircuit::standard(3).unwrap();
        let p = c.init_params(1.0, &mut rng);
        let gates = c.build_circuit(&[0.1; 5], &p).unwrap();
        assert_eq!(gates.len(), 87);
        assert_eq!(gates.iter().filter(|g| matches!(g, Gate::Cz { .. })).count(), 12);

        let obs = ActionObservable::defaults(2, 3);
        let c = ReuploadingCircuit::new(2, 1, Entangler::Chain, &obs).unwrap();
        let p = c.init_params(1.0, &mut rng);
        assert_eq!(c.build_circuit(&[0.3, 0.7], &p).unwrap().len(), 15);
    }

    #[test]
    fn layer_order() {
        let obs = ActionObservable::defaults(2, 3);
        let c = ReuploadingCircuit::new(2, 1, Entangler::Chain, &obs).unwrap();
        let p = PqcParams::zeros(1, 2, 3, 1.0);
        let src: Vec<AngleSource> = c.build_circuit_with_sources(&[0.3, 0.7], &p).unwrap().into_iter().map(|g| g.1).collect();
        assert!(matches!(src[5], AngleSource::Phi(5)));
        assert_eq!(src[6], AngleSource::Fixed);
        assert_eq!(src[7], AngleSource::Lambda { index: 0, feature: 0 });
        assert_eq!(src[8], AngleSource::Lambda { index: 1, feature: 1 });
        assert!(matches!(src[14], AngleSource::Phi(11)));
    }

    #[test]
    fn zero_angles_give_unit_expectations() {
        let c = ReuploadingCircuit::standard(3).unwrap();
        let p = PqcParams::zeros(3, 5, 3, 1.0);
        let e = c.expectations(&[0.2, 0.4, 0.6, 0.8, 1.0], &p).unwrap();
        assert!(e.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let pi = c.policy(&[0.2, 0.4, 0.6, 0.8, 1.0], &p).unwrap();
        assert!(pi.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn zero_temperature_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ReuploadingCircuit::standard(2).unwrap();
        let p = c.init_params(0.0, &mut rng);
        let pi = c.policy(&[0.1, 0.9, 0.3, 0.5, 0.2], &p).unwrap();
        assert!(pi.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn param_count_table() {
        assert_eq!(param_count(1, 5, 3), 38);
        assert_eq!(param_count(3, 5, 3), 78);
        assert_eq!(param_count(5, 5, 3), 118);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for nl in 1..=5 {
            for nq in 1..=6 {
                let p = PqcParams::init(nl, nq, 3, 1.0, &mut rng);
                assert_eq!(p.trainable_count(), param_count(nl, nq, 3));
            }
        }
    }

    #[test]
    fn rewards_to_go_discounting() {
        let g = rewards_to_go(&[1.0, 2.0, 4.0], 0.5);
        assert_eq!(g, vec![1.0 + 1.0 + 1.0, 2.0 + 2.0, 4.0]);
    }

    #[test]
    fn empty_batch_rejected() {
        let c = ReuploadingCircuit::standard(1).unwrap();
        let p = PqcParams::zeros(1, 5, 3, 1.0);
        let enc = StateEncoder::new(&EnvConfig::default());
        assert!(matches!(c.policy_gradient(&enc, &[], &p, &GradientOptions::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn observable_validation() {
        let bad = vec![ActionObservable { action: 0, pauli_qubits: vec![] }];
        assert!(ReuploadingCircuit::new(3, 1, Entangler::Chain, &bad).is_err());
        let bad = vec![ActionObservable { action: 1, pauli_qubits: vec![0] }];
        assert!(ReuploadingCircuit::new(3, 1, Entangler::Chain, &bad).is_err());
        let bad = vec![ActionObservable { action: 0, pauli_qubits: vec![4] }];
        assert!(ReuploadingCircuit::new(3, 1, Entangler::Chain, &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = PqcParams::init(3, 5, 3, 1.25, &mut rng);
        let text = p.to_checkpoint().to_text();
        let back = PqcParams::from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
