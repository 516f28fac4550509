mod common;

use common::{central_diff, jitter, max_rel_err, rel_err, rng, uniform};
use om2p::critic::{q_guidance_grad_with_noise, CriticPair, QScale};
use om2p::meanflow::{
    bc_loss, bc_loss_fixed_target, bc_target, fd_time_derivative, instantaneous_velocity,
    jvp_time_derivative, one_step_action, DeltaR, DerivativeMode, FlowBatch, PolicyNet,
};
use om2p::nn::{mlp_forward, mlp_init, mlp_jvp, DualTensor, MlpParams, MlpSpec, Tensor};
use om2p::trainer::{actor_gradient, TrainConfig};
use rand::Rng;

fn weighted_output(params: &MlpParams, x: &Tensor, w: &Tensor) -> f64 {
    let (y, _) = mlp_forward(params, x, false).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn mlp_backward_matches_central_differences() {
    let cases: [(&[usize], bool); 5] = [
        (&[8, 8], true),
        (&[8, 8], false),
        (&[5], true),
        (&[6, 5, 4, 3], true),
        (&[4, 4, 4, 4], false),
    ];
    for (k, (hidden, norm)) in cases.into_iter().enumerate() {
        let mut spec = MlpSpec::new(3, hidden, 2);
        if !norm {
            spec = spec.without_norm();
        }
        let mut r = rng(100 + k as u64);
        let mut params = mlp_init(&spec, k as u64).unwrap();
        jitter(&mut params, &mut r, 0.1);
        let x = uniform(&mut r, 6, 3, 1.5);
        let w = uniform(&mut r, 6, 2, 1.0);
        let (_, tape) = mlp_forward(&params, &x, true).unwrap();
        let (grads, _) = tape.unwrap().backward(&w).unwrap();
        let oracle = central_diff(&params, 1e-5, |p| weighted_output(p, &x, &w));
        let err = max_rel_err(&grads, &oracle);
        assert!(err < 1e-4, "case {k} ({hidden:?}, norm {norm}): {err:e}");
    }
}

#[test]
fn input_gradient_matches_central_differences() {
    let spec = MlpSpec::new(4, &[7, 7], 3);
    let mut r = rng(5);
    let params = mlp_init(&spec, 5).unwrap();
    let x = uniform(&mut r, 3, 4, 1.0);
    let w = uniform(&mut r, 3, 3, 1.0);
    let (_, tape) = mlp_forward(&params, &x, true).unwrap();
    let (_, dx) = tape.unwrap().backward(&w).unwrap();
    let h = 1e-5;
    for k in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[k] += h;
        let mut down = x.clone();
        down.data_mut()[k] -= h;
        let fd =
            (weighted_output(&params, &up, &w) - weighted_output(&params, &down, &w)) / (2.0 * h);
        assert!(rel_err(dx.data()[k], fd) < 1e-4, "entry {k}");
    }
}

#[test]
fn jvp_matches_directional_and_jacobian_oracles() {
    for (k, &inputs) in [3usize, 9, 16].iter().enumerate() {
        let spec = MlpSpec::new(inputs, &[12, 12], 4);
        let mut r = rng(200 + k as u64);
        let mut params = mlp_init(&spec, 9 + k as u64).unwrap();
        jitter(&mut params, &mut r, 0.05);
        let x = uniform(&mut r, 5, inputs, 1.0);
        let d = uniform(&mut r, 5, inputs, 1.0);
        let out = mlp_jvp(&params, &DualTensor::new(x.clone(), d.clone()).unwrap()).unwrap();
        let f = |x: &Tensor| mlp_forward(&params, x, false).unwrap().0;

        // Directional central difference.
        let h = 1e-6;
        let mut up = x.clone();
        up.axpy(h, &d).unwrap();
        let mut down = x.clone();
        down.axpy(-h, &d).unwrap();
        let (fu, fdn) = (f(&up), f(&down));
        for (i, &tan) in out.tangent.data().iter().enumerate() {
            let fd = (fu.data()[i] - fdn.data()[i]) / (2.0 * h);
            assert!(
                rel_err(tan, fd) < 1e-5,
                "directional {k}/{i}: {tan} vs {fd}"
            );
        }

        // Full finite-difference Jacobian contracted with the tangent.
        let h = 1e-5;
        let mut jd = vec![0.0; out.tangent.len()];
        for row in 0..x.rows() {
            for j in 0..inputs {
                let mut up = x.clone();
                up.data_mut()[row * inputs + j] += h;
                let mut down = x.clone();
                down.data_mut()[row * inputs + j] -= h;
                let (fu, fdn) = (f(&up), f(&down));
                for o in 0..4 {
                    let col = (fu.get(row, o) - fdn.get(row, o)) / (2.0 * h);
                    jd[row * 4 + o] += col * d.get(row, j);
                }
            }
        }
        for (i, &tan) in out.tangent.data().iter().enumerate() {
            assert!(
                rel_err(tan, jd[i]) < 1e-5,
                "jacobian {k}/{i}: {tan} vs {}",
                jd[i]
            );
        }
        assert_eq!(out.primal, f(&x));
    }
}

fn small_batch(seed: u64, obs_dim: usize, act_dim: usize, rows: usize) -> FlowBatch {
    let mut r = rng(seed);
    let obs = uniform(&mut r, rows, obs_dim, 1.0);
    let actions = uniform(&mut r, rows, act_dim, 0.9);
    let eps = uniform(&mut r, rows, act_dim, 1.5);
    let t = (0..rows).map(|_| r.random_range(0.02..0.98)).collect();
    FlowBatch::new(obs, actions, eps, t).unwrap()
}

fn random_policy(seed: u64, obs_dim: usize, act_dim: usize) -> PolicyNet {
    let mut p = PolicyNet::new(obs_dim, act_dim, &[8, 8], seed).unwrap();
    jitter(p.params_mut(), &mut rng(seed ^ 0xF00D), 0.05);
    p
}

/// A random policy whose one-step actions stay well inside the clip box.
fn gentle_policy(seed: u64, obs_dim: usize, act_dim: usize) -> PolicyNet {
    let mut p = random_policy(seed, obs_dim, act_dim);
    let last = p.params().layers().len() - 1;
    let w = &mut p.params_mut().layers_mut()[last].weight;
    *w = w.scale(0.2);
    p
}

/// `mean_b ‖u_θ(a_r, r, t | o) − target‖²` evaluated with plain forward passes.
fn regression_loss(params: &MlpParams, batch: &FlowBatch, target: &Tensor) -> f64 {
    let x = Tensor::concat_cols(&[
        &batch.obs,
        &batch.a_r,
        &Tensor::column(&batch.r),
        &Tensor::column(&batch.t),
    ])
    .unwrap();
    let (u, _) = mlp_forward(params, &x, false).unwrap();
    let sq: f64 = u
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    sq / batch.len() as f64
}

#[test]
fn bc_loss_gradients_match_central_differences_in_both_modes() {
    for mode in [DerivativeMode::Fd, DerivativeMode::Exact] {
        for seed in 0..3 {
            let policy = random_policy(seed, 3, 2);
            let batch = small_batch(50 + seed, 3, 2, 8);
            let dr = DeltaR::new(1e-6).unwrap();
            let out = bc_loss(&policy, &batch, dr, mode).unwrap();
            // The target is held fixed while parameters move.
            let target = bc_target(&policy, &batch, dr, mode).unwrap();
            let value = regression_loss(policy.params(), &batch, &target);
            assert!(rel_err(out.loss, value) < 1e-12);
            let oracle = central_diff(policy.params(), 1e-5, |p| {
                regression_loss(p, &batch, &target)
            });
            let err = max_rel_err(&out.grads, &oracle);
            assert!(err < 1e-4, "{} seed {seed}: {err:e}", mode.name());
        }
    }
}

#[test]
fn no_gradient_flows_through_the_target() {
    for mode in [DerivativeMode::Fd, DerivativeMode::Exact] {
        let policy = random_policy(7, 4, 2);
        let batch = small_batch(8, 4, 2, 16);
        let dr = DeltaR::new(1e-3).unwrap();
        let full = bc_loss(&policy, &batch, dr, mode).unwrap();
        let target = bc_target(&policy, &batch, dr, mode).unwrap();
        let fixed = bc_loss_fixed_target(&policy, &batch, &target).unwrap();
        assert_eq!(full.grads, fixed.grads, "{}", mode.name());
        assert_eq!(full.loss, fixed.loss);
    }
}

#[test]
fn forward_difference_tracks_the_exact_derivative() {
    for (k, (obs_dim, act_dim)) in [(2, 1), (6, 2), (12, 2)].into_iter().enumerate() {
        let policy = random_policy(30 + k as u64, obs_dim, act_dim);
        let b = small_batch(40 + k as u64, obs_dim, act_dim, 16);
        let exact = jvp_time_derivative(&policy, &b.obs, &b.eps, &b.actions, &b.r, &b.t).unwrap();
        let fd = fd_time_derivative(
            &policy,
            &b.obs,
            &b.eps,
            &b.actions,
            &b.r,
            &b.t,
            DeltaR::new(1e-5).unwrap(),
            None,
        )
        .unwrap();
        // Norm-wise relative error: entries where du/dr crosses zero make the
        // elementwise ratio meaningless.
        let diff: f64 = fd
            .data()
            .iter()
            .zip(exact.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let norm: f64 = exact.data().iter().map(|b| b * b).sum();
        let err = (diff / norm).sqrt();
        assert!(err < 1e-4, "inputs {}: {err:e}", obs_dim + act_dim + 2);
    }
}

#[test]
fn tiny_step_still_estimates_the_derivative_in_64_bit() {
    // At Δr = 1e-12 the quotient is a noisy but unbiased estimate of du/dr, so
    // the loss follows the exact-derivative loss rather than plain flow matching.
    let policy = random_policy(3, 4, 2);
    let batch = small_batch(4, 4, 2, 64);
    let fd = bc_loss(
        &policy,
        &batch,
        DeltaR::new(1e-12).unwrap(),
        DerivativeMode::Fd,
    )
    .unwrap();
    let exact = bc_loss(&policy, &batch, DeltaR::default(), DerivativeMode::Exact).unwrap();
    let v = instantaneous_velocity(&batch.eps, &batch.actions).unwrap();
    let plain = regression_loss(policy.params(), &batch, &v);
    assert!(
        rel_err(fd.loss, exact.loss) < 1e-4,
        "{} vs {}",
        fd.loss,
        exact.loss
    );
    assert!(rel_err(fd.loss, plain) > 1e-2, "{} vs {plain}", fd.loss);
}

fn guidance_loss(
    policy: &MlpParams,
    pair: &CriticPair,
    obs: &Tensor,
    eps: &Tensor,
    eta: f64,
) -> f64 {
    let p = PolicyNet::from_params(obs.cols(), eps.cols(), policy.clone()).unwrap();
    let a = one_step_action(&p, obs, eps).unwrap();
    let q = pair.q_values(&pair.q1, obs, &a).unwrap();
    -eta * q.iter().sum::<f64>() / q.len() as f64
}

#[test]
fn guidance_gradient_matches_central_differences() {
    let policy = gentle_policy(11, 3, 2);
    let pair = CriticPair::new(3, 2, &[8, 8], 12).unwrap();
    let mut r = rng(13);
    let obs = uniform(&mut r, 8, 3, 1.0);
    // Small noise keeps the one-step actions away from the clipping kinks.
    let eps = uniform(&mut r, 8, 2, 0.3);
    let a = one_step_action(&policy, &obs, &eps).unwrap();
    assert!(a.data().iter().all(|x| x.abs() < 0.99));
    let eta = 2.5;
    let out = q_guidance_grad_with_noise(&pair, &policy, &obs, &eps, eta, QScale::Raw).unwrap();
    let oracle = central_diff(policy.params(), 1e-5, |p| {
        guidance_loss(p, &pair, &obs, &eps, eta)
    });
    let err = max_rel_err(&out.grads, &oracle);
    assert!(err < 1e-4, "{err:e}");
    assert!(
        rel_err(
            out.loss,
            guidance_loss(policy.params(), &pair, &obs, &eps, eta)
        ) < 1e-12
    );
}

#[test]
fn combined_policy_loss_gradient_matches_central_differences() {
    for mode in [DerivativeMode::Fd, DerivativeMode::Exact] {
        let policy = gentle_policy(21, 3, 2);
        let pair = CriticPair::new(3, 2, &[8, 8], 22).unwrap();
        let batch = small_batch(23, 3, 2, 8);
        let q_eps = uniform(&mut rng(24), 8, 2, 0.3);
        let config = TrainConfig {
            eta: 0.7,
            derivative_mode: mode,
            delta_r: DeltaR::new(1e-6).unwrap(),
            ..Default::default()
        };
        let out = actor_gradient(&policy, &pair, &batch, &q_eps, &config).unwrap();
        let target = bc_target(&policy, &batch, config.delta_r, mode).unwrap();
        let oracle = central_diff(policy.params(), 1e-5, |p| {
            regression_loss(p, &batch, &target)
                + guidance_loss(p, &pair, &batch.obs, &q_eps, config.eta)
        });
        let err = max_rel_err(&out.grads, &oracle);
        assert!(err < 1e-4, "{}: {err:e}", mode.name());
    }
}

#[test]
fn combined_backward_equals_sum_of_separate_gradients() {
    let policy = random_policy(31, 4, 2);
    let pair = CriticPair::new(4, 2, &[8, 8], 32).unwrap();
    let batch = small_batch(33, 4, 2, 32);
    let q_eps = uniform(&mut rng(34), 32, 2, 1.0);
    let config = TrainConfig {
        eta: 1.3,
        ..Default::default()
    };
    let combined = actor_gradient(&policy, &pair, &batch, &q_eps, &config).unwrap();
    let mut separate = bc_loss(&policy, &batch, config.delta_r, config.derivative_mode)
        .unwrap()
        .grads;
    let q = q_guidance_grad_with_noise(&pair, &policy, &batch.obs, &q_eps, config.eta, QScale::Raw)
        .unwrap();
    separate.axpy(1.0, &q.grads).unwrap();
    assert_eq!(combined.grads, separate);
}
