use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ambc_qrl::dqn;
use ambc_qrl::env::{Action, EnvConfig, SpectrumEnv, Transition};
use ambc_qrl::nn::{Adam, Mlp};
use ambc_qrl::oracle;
use ambc_qrl::qpolicy::{GradientOptions, PqcParams, ReuploadingCircuit, StateEncoder, Trajectory};
use ambc_qrl::qsim::{Gate, PauliProduct, RotationAxis, Statevector};
use ambc_qrl::selftest::vector_relative_error;

fn gate_strategy(n: usize) -> impl Strategy<Value = Gate> {
    let rotation = (0..3usize, 0..n, -10.0..10.0f64).prop_map(|(a, t, angle)| Gate::Rotation {
        axis: [RotationAxis::X, RotationAxis::Y, RotationAxis::Z][a],
        target: t,
        angle,
    });
    let cz = (0..n, 1..n.max(2)).prop_map(move |(a, off)| Gate::cz(a, (a + off) % n));
    if n >= 2 {
        prop_oneof![3 => rotation, 1 => cz].boxed()
    } else {
        rotation.boxed()
    }
}

fn circuit_strategy() -> impl Strategy<Value = (usize, Vec<Gate>)> {
    (1..=4usize).prop_flat_map(|n| (Just(n), proptest::collection::vec(gate_strategy(n), 0..16)))
}

proptest! {
    #[test]
    fn statevector_matches_kronecker_oracle((n, gates) in circuit_strategy()) {
        let mut sv = Statevector::zero(n).unwrap();
        sv.apply_all(&gates).unwrap();
        let dense = oracle::run_dense(n, &gates);
        for (a, b) in sv.amplitudes().iter().zip(&dense) {
            prop_assert!((a - b).norm() < 1e-10);
        }
        prop_assert!((sv.norm_sqr() - 1.0).abs() < 1e-12);
        let z_all = PauliProduct::z_on(&(0..n).collect::<Vec<_>>()).unwrap();
        prop_assert!((sv.expectation(&z_all).unwrap() - oracle::expectation_dense(n, &dense, &z_all)).abs() < 1e-10);
    }

    #[test]
    fn softmax_shift_invariance(logits in proptest::collection::vec(-20.0..20.0f64, 3), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        let (a, b) = (ambc_qrl::qpolicy::softmax(&logits), ambc_qrl::qpolicy::softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_is_a_distribution(seed in any::<u64>(), x in proptest::collection::vec(0.0..=1.0f64, 5)) {
        let circuit = ReuploadingCircuit::standard(3).unwrap();
        let params = circuit.init_params(1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let pi = circuit.policy(&x, &params).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pi.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn rx_pi_and_cz_reference_states() {
    let mut sv = Statevector::zero(1).unwrap();
    sv.apply(&Gate::rx(0, std::f64::consts::PI)).unwrap();
    assert!((sv.amplitudes()[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);

    let mut basis = vec![Complex64::new(0.0, 0.0); 4];
    basis[3] = Complex64::new(1.0, 0.0);
    let mut sv = Statevector::from_amplitudes(basis).unwrap();
    sv.apply(&Gate::cz(0, 1)).unwrap();
    assert_eq!(sv.amplitudes()[3], Complex64::new(-1.0, 0.0));
}

fn random_batch(seed: u64, episodes: usize) -> (EnvConfig, Vec<Trajectory>) {
    let cfg = EnvConfig { seed, horizon: 12, ..EnvConfig::default() };
    let mut env = SpectrumEnv::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let batch = (0..episodes)
        .map(|_| {
            env.reset();
            let ts: Vec<Transition> = (0..cfg.horizon).map(|_| env.transition(Action::ALL[rng.gen_range(0..3)]).0).collect();
            Trajectory::new(ts).unwrap()
        })
        .collect();
    (cfg, batch)
}

#[test]
fn batch_gradient_matches_finite_differences_of_loss() {
    for seed in 0..4 {
        let (cfg, batch) = random_batch(seed, 3);
        let encoder = StateEncoder::new(&cfg);
        let circuit = ReuploadingCircuit::standard(1).unwrap();
        let opts = GradientOptions::default();
        let params = circuit.init_params(1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let grads = circuit.policy_gradient(&encoder, &batch, &params, &opts).unwrap();

        let loss_with = |edit: &dyn Fn(&mut PqcParams, &[f64]), v: &[f64]| {
            let mut p = params.clone();
            edit(&mut p, v);
            circuit.loss(&encoder, &batch, &p, &opts).unwrap()
        };
        let h = 1e-5;
        let fd_phi = oracle::central_difference(|v| loss_with(&|p, v| p.phi.copy_from_slice(v), v), &params.phi, h);
        let fd_lambda = oracle::central_difference(|v| loss_with(&|p, v| p.lambda.copy_from_slice(v), v), &params.lambda, h);
        let fd_w = oracle::central_difference(|v| loss_with(&|p, v| p.w.copy_from_slice(v), v), &params.w, h);
        assert!(vector_relative_error(&grads.phi, &fd_phi) < 1e-6);
        assert!(vector_relative_error(&grads.lambda, &fd_lambda) < 1e-6);
        assert!(vector_relative_error(&grads.w, &fd_w) < 1e-6);
    }
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let (cfg, batch) = random_batch(9, 4);
    let encoder = StateEncoder::new(&cfg);
    let circuit = ReuploadingCircuit::standard(3).unwrap();
    let opts = GradientOptions::default();
    let params = circuit.init_params(1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let a = circuit.policy_gradient(&encoder, &batch, &params, &opts).unwrap();
    let b = circuit.policy_gradient_sequential(&encoder, &batch, &params, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn td_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (cfg, batch) = random_batch(rng.gen(), 1);
        let encoder = StateEncoder::new(&cfg);
        let sizes = [5, 7, 4, 3];
        let net = Mlp::xavier(&sizes, &mut rng).unwrap();
        let target = Mlp::xavier(&sizes, &mut rng).unwrap();
        let transitions = batch[0].transitions();
        let (_, grads) = dqn::td_loss(transitions, &net, &target, 0.9, &encoder, 1e6).unwrap();
        let fd = oracle::central_difference(
            |p| dqn::td_loss(transitions, &Mlp::from_params(&sizes, p.to_vec()).unwrap(), &target, 0.9, &encoder, 1e6).unwrap().0,
            net.params(),
            1e-5,
        );
        assert!(vector_relative_error(&grads, &fd) < 1e-5);
    }
}

#[test]
fn mlp_forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sizes = [5, 32, 32, 3];
    let mlp = Mlp::xavier(&sizes, &mut rng).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let got = mlp.forward(&x).unwrap();
        for (a, b) in got.iter().zip(oracle::mlp_forward(&sizes, mlp.params(), &x)) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }
    }
}

#[test]
fn adam_first_step_has_learning_rate_magnitude() {
    let mut adam = Adam::new(3, 0.01);
    let mut params = vec![1.0, -2.0, 0.5];
    adam.step(&mut params, &[3.0, -0.2, 1e-3]).unwrap();
    assert_relative_eq!(params[0], 1.0 - 0.01, epsilon = 1e-9);
    assert_relative_eq!(params[1], -2.0 + 0.01, epsilon = 1e-9);
    assert_relative_eq!(params[2], 0.5 - 0.01, epsilon = 1e-5);
}
