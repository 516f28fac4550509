//! Mean-flow policies.
//!
//! A policy network predicts the mean velocity `u(a_r, r, t | o)` between two
//! points of the linear noise-to-action path `a_r = (1 − r)ε + r·a`. Training
//! regresses it onto `v − (r − t)·du/dr` with `v = a − ε`, where the time
//! derivative comes either from a forward difference (two detached evaluations)
//! or from an exact forward-mode pass. Sampling jumps from noise to an action in
//! one evaluation: `ã = ε + u(ε, 0, 1 | o)`.

use rand::Rng;

use crate::nn::{
    mlp_forward, mlp_forward_dual, mlp_init, mlp_jvp, DualTensor, GradTape, MlpParams, MlpSpec,
    Tensor,
};
use crate::rng::normal_tensor;
use crate::timestep::{TimestepTable, DEFAULT_DELTA};
use crate::{Error, Result};

/// Largest finite-difference step accepted by [`DeltaR::new`].
pub const MAX_DELTA_R: f64 = 1e-2;

/// How `du/dr` is obtained when building the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Forward difference of two detached evaluations.
    Fd,
    /// Exact directional derivative from a recorded forward-mode pass.
    Exact,
}

impl DerivativeMode {
    pub fn name(self) -> &'static str {
        match self {
            DerivativeMode::Fd => "fd",
            DerivativeMode::Exact => "exact",
        }
    }
}

impl std::str::FromStr for DerivativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fd" => Ok(DerivativeMode::Fd),
            "exact" => Ok(DerivativeMode::Exact),
            other => Err(Error::Config(format!(
                "derivative mode must be fd or exact, got {other:?}"
            ))),
        }
    }
}

/// Finite-difference step in `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaR(f64);

impl DeltaR {
    pub fn new(dr: f64) -> Result<Self> {
        if !(dr > 0.0 && dr <= MAX_DELTA_R) {
            return Err(Error::Config(format!(
                "delta_r must lie in (0, {MAX_DELTA_R}], got {dr}"
            )));
        }
        Ok(DeltaR(dr))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for DeltaR {
    fn default() -> Self {
        DeltaR(1e-12)
    }
}

/// MLP mapping `[o, a_r, r, t]` to a mean velocity of action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    obs_dim: usize,
    act_dim: usize,
    params: MlpParams,
}

impl PolicyNet {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim + act_dim + 2, hidden, act_dim);
        Self::from_params(obs_dim, act_dim, mlp_init(&spec, seed)?)
    }

    pub fn from_params(obs_dim: usize, act_dim: usize, params: MlpParams) -> Result<Self> {
        let spec = params.spec();
        if spec.input_dim != obs_dim + act_dim + 2 || spec.output_dim != act_dim {
            return Err(Error::Config(format!(
                "policy net {}→{} does not fit obs_dim {obs_dim}, act_dim {act_dim}",
                spec.input_dim, spec.output_dim
            )));
        }
        Ok(Self {
            obs_dim,
            act_dim,
            params,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn into_params(self) -> MlpParams {
        self.params
    }

    fn input(&self, o: &Tensor, a_r: &Tensor, r: &[f64], t: &[f64]) -> Result<Tensor> {
        let rows = o.rows();
        if o.cols() != self.obs_dim || a_r.cols() != self.act_dim {
            return Err(Error::Shape(format!(
                "policy expects obs {} / action {} columns, got {:?} / {:?}",
                self.obs_dim,
                self.act_dim,
                o.shape(),
                a_r.shape()
            )));
        }
        if a_r.rows() != rows || r.len() != rows || t.len() != rows {
            return Err(Error::Shape("policy inputs disagree on batch size".into()));
        }
        Tensor::concat_cols(&[o, a_r, &Tensor::column(r), &Tensor::column(t)])
    }

    /// Detached evaluation of `u(a_r, r, t | o)` with per-row times.
    pub fn velocity(&self, o: &Tensor, a_r: &Tensor, r: &[f64], t: &[f64]) -> Result<Tensor> {
        let x = self.input(o, a_r, r, t)?;
        Ok(mlp_forward(&self.params, &x, false)?.0)
    }
}

fn check_pair(eps: &Tensor, a: &Tensor) -> Result<()> {
    if !eps.same_shape(a) {
        return Err(Error::Shape(format!(
            "noise {:?} vs action {:?}",
            eps.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// `(1 − r)·eps + r·a`.
pub fn interpolate(eps: &Tensor, a: &Tensor, r: f64) -> Result<Tensor> {
    check_pair(eps, a)?;
    eps.zip_map(a, |e, x| (1.0 - r) * e + r * x)
}

/// [`interpolate`] with one `r` per row.
pub fn interpolate_rows(eps: &Tensor, a: &Tensor, r: &[f64]) -> Result<Tensor> {
    check_pair(eps, a)?;
    if r.len() != eps.rows() {
        return Err(Error::Shape(format!(
            "{} times for {} rows",
            r.len(),
            eps.rows()
        )));
    }
    let width = eps.cols();
    let data = eps
        .data()
        .chunks_exact(width)
        .zip(a.data().chunks_exact(width))
        .zip(r)
        .flat_map(|((e, x), &ri)| e.iter().zip(x).map(move |(e, x)| (1.0 - ri) * e + ri * x))
        .collect();
    Ok(Tensor::wrap(eps.shape().to_vec(), data))
}

/// Path velocity `a − eps` (constant along the linear path).
pub fn instantaneous_velocity(eps: &Tensor, a: &Tensor) -> Result<Tensor> {
    check_pair(eps, a)?;
    a.sub(eps)
}

/// `v − (r − t)·du_dr`.
pub fn target_velocity(v: &Tensor, du_dr: &Tensor, r: f64, t: f64) -> Result<Tensor> {
    v.zip_map(du_dr, |vi, di| vi - (r - t) * di)
}

/// [`target_velocity`] with one `(r, t)` pair per row.
pub fn target_velocity_rows(v: &Tensor, du_dr: &Tensor, r: &[f64], t: &[f64]) -> Result<Tensor> {
    if !v.same_shape(du_dr) || r.len() != v.rows() || t.len() != v.rows() {
        return Err(Error::Shape("target_velocity: shapes disagree".into()));
    }
    let width = v.cols();
    let mut out = v.data().to_vec();
    for (i, row) in out.chunks_exact_mut(width).enumerate() {
        let c = r[i] - t[i];
        for (o, &d) in row.iter_mut().zip(du_dr.row(i)) {
            *o -= c * d;
        }
    }
    Ok(Tensor::wrap(v.shape().to_vec(), out))
}

/// Forward difference `(u(a_{r'}, r', t) − u(a_r, r, t)) / (r' − r)` per row.
///
/// `r' = r + Δr`, or `r − Δr` when `r + Δr` would leave `[0, 1 − δ]`. The
/// quotient uses the step actually realized in floating point. `at_r` may
/// carry an already computed `u(a_r, r, t)` to skip one evaluation.
#[allow(clippy::too_many_arguments)]
pub fn fd_time_derivative(
    policy: &PolicyNet,
    o: &Tensor,
    eps: &Tensor,
    a: &Tensor,
    r: &[f64],
    t: &[f64],
    dr: DeltaR,
    at_r: Option<&Tensor>,
) -> Result<Tensor> {
    let upper = 1.0 - DEFAULT_DELTA;
    let r_other: Vec<f64> = r
        .iter()
        .map(|&ri| {
            if ri + dr.get() > upper {
                ri - dr.get()
            } else {
                ri + dr.get()
            }
        })
        .collect();
    let base = match at_r {
        Some(u) => u.clone(),
        None => policy.velocity(o, &interpolate_rows(eps, a, r)?, r, t)?,
    };
    let shifted = policy.velocity(o, &interpolate_rows(eps, a, &r_other)?, &r_other, t)?;
    let width = base.cols();
    let mut out = shifted.data().to_vec();
    for (i, row) in out.chunks_exact_mut(width).enumerate() {
        let h = r_other[i] - r[i];
        for (s, &b) in row.iter_mut().zip(base.row(i)) {
            *s = (*s - b) / h;
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "finite-difference derivative is not finite".into(),
        ));
    }
    Ok(Tensor::wrap(base.shape().to_vec(), out))
}

fn time_tangent(policy: &PolicyNet, v: &Tensor) -> Tensor {
    let (rows, od, ad) = (v.rows(), policy.obs_dim, policy.act_dim);
    Tensor::from_fn(rows, od + ad + 2, |i, j| {
        if j < od {
            0.0
        } else if j < od + ad {
            v.get(i, j - od)
        } else if j == od + ad {
            1.0
        } else {
            0.0
        }
    })
}

/// Exact `du/dr = v·∂u/∂a_r + ∂u/∂r` from one forward-mode pass.
pub fn jvp_time_derivative(
    policy: &PolicyNet,
    o: &Tensor,
    eps: &Tensor,
    a: &Tensor,
    r: &[f64],
    t: &[f64],
) -> Result<Tensor> {
    let v = instantaneous_velocity(eps, a)?;
    let x = policy.input(o, &interpolate_rows(eps, a, r)?, r, t)?;
    let dual = DualTensor::new(x, time_tangent(policy, &v))?;
    Ok(mlp_jvp(policy.params(), &dual)?.tangent)
}

/// One training draw: observations, dataset actions, noise and times.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub eps: Tensor,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub a_r: Tensor,
}

impl FlowBatch {
    /// Builds the batch with `r = 1 − t` and the matching interpolants.
    pub fn new(obs: Tensor, actions: Tensor, eps: Tensor, t: Vec<f64>) -> Result<Self> {
        if obs.rows() != actions.rows() {
            return Err(Error::Shape(
                "obs and actions disagree on batch size".into(),
            ));
        }
        let r: Vec<f64> = t.iter().map(|&ti| 1.0 - ti).collect();
        let a_r = interpolate_rows(&eps, &actions, &r)?;
        Ok(Self {
            obs,
            actions,
            eps,
            t,
            r,
            a_r,
        })
    }

    /// Fresh noise and times drawn from `table`.
    pub fn sample<R: Rng>(
        obs: Tensor,
        actions: Tensor,
        table: &TimestepTable,
        rng: &mut R,
    ) -> Result<Self> {
        let (rows, cols) = (actions.rows(), actions.cols());
        let t = (0..rows).map(|_| table.sample(rng)).collect();
        let eps = normal_tensor(rng, rows, cols);
        Self::new(obs, actions, eps, t)
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn velocity(&self) -> Result<Tensor> {
        instantaneous_velocity(&self.eps, &self.actions)
    }
}

/// Detached regression target `v − (r − t)·du/dr` for a batch.
pub fn bc_target(
    policy: &PolicyNet,
    batch: &FlowBatch,
    dr: DeltaR,
    mode: DerivativeMode,
) -> Result<Tensor> {
    let du_dr = match mode {
        DerivativeMode::Fd => fd_time_derivative(
            policy,
            &batch.obs,
            &batch.eps,
            &batch.actions,
            &batch.r,
            &batch.t,
            dr,
            None,
        )?,
        DerivativeMode::Exact => jvp_time_derivative(
            policy,
            &batch.obs,
            &batch.eps,
            &batch.actions,
            &batch.r,
            &batch.t,
        )?,
    };
    target_velocity_rows(&batch.velocity()?, &du_dr, &batch.r, &batch.t)
}

/// Loss value and parameter gradient of the mean-flow regression.
#[derive(Debug, Clone)]
pub struct BcOutput {
    pub loss: f64,
    pub grads: MlpParams,
}

/// A recorded regression forward pass whose backward is still pending.
///
/// Holding the pass lets a caller build further loss terms on the same
/// policy before running one combined backward.
pub struct BcPass<'a> {
    pub loss: f64,
    grad_output: Tensor,
    tape: GradTape<'a>,
}

impl BcPass<'_> {
    /// Parameter gradient of the recorded loss.
    pub fn backward(mut self) -> Result<MlpParams> {
        self.tape.backward_params(&self.grad_output)
    }
}

/// Forward half of [`bc_loss`]: prediction, detached target and loss value,
/// with the prediction's tape kept for a later backward.
///
/// In fd mode the prediction's own forward value is reused as the base point
/// of the difference, so one extra detached evaluation is made. In exact mode
/// the prediction and `du/dr` come from one recorded forward-mode pass.
pub fn bc_forward<'a>(
    policy: &'a PolicyNet,
    batch: &FlowBatch,
    dr: DeltaR,
    mode: DerivativeMode,
) -> Result<BcPass<'a>> {
    let x = policy.input(&batch.obs, &batch.a_r, &batch.r, &batch.t)?;
    let v = batch.velocity()?;
    let (pred, du_dr, tape) = match mode {
        DerivativeMode::Fd => {
            let (pred, tape) = mlp_forward(policy.params(), &x, true)?;
            let du_dr = fd_time_derivative(
                policy,
                &batch.obs,
                &batch.eps,
                &batch.actions,
                &batch.r,
                &batch.t,
                dr,
                Some(&pred),
            )?;
            (pred, du_dr, tape.expect("recorded"))
        }
        DerivativeMode::Exact => {
            let dual = DualTensor::new(x, time_tangent(policy, &v))?;
            let (out, tape) = mlp_forward_dual(policy.params(), &dual)?;
            (out.primal, out.tangent, tape)
        }
    };
    let target = target_velocity_rows(&v, &du_dr, &batch.r, &batch.t)?;
    regress(&pred, &target, tape)
}

/// `mean_b ‖u(a_r, r, t | o) − stopgrad(target)‖²` with its gradient.
pub fn bc_loss(
    policy: &PolicyNet,
    batch: &FlowBatch,
    dr: DeltaR,
    mode: DerivativeMode,
) -> Result<BcOutput> {
    let pass = bc_forward(policy, batch, dr, mode)?;
    let loss = pass.loss;
    Ok(BcOutput {
        loss,
        grads: pass.backward()?,
    })
}

/// Loss and gradient of `mean_b ‖u − target‖²` for a fixed target.
pub fn bc_loss_fixed_target(
    policy: &PolicyNet,
    batch: &FlowBatch,
    target: &Tensor,
) -> Result<BcOutput> {
    let x = policy.input(&batch.obs, &batch.a_r, &batch.r, &batch.t)?;
    let (pred, tape) = mlp_forward(policy.params(), &x, true)?;
    let pass = regress(&pred, target, tape.expect("recorded"))?;
    let loss = pass.loss;
    Ok(BcOutput {
        loss,
        grads: pass.backward()?,
    })
}

fn regress<'a>(pred: &Tensor, target: &Tensor, tape: GradTape<'a>) -> Result<BcPass<'a>> {
    let rows = pred.rows() as f64;
    let resid = pred.sub(target)?;
    let loss = resid.data().iter().map(|d| d * d).sum::<f64>() / rows;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "bc loss is {loss} (batch {} rows, max |pred| {:.3e}, max |target| {:.3e})",
            pred.rows(),
            pred.max_abs(),
            target.max_abs()
        )));
    }
    Ok(BcPass {
        loss,
        grad_output: resid.scale(2.0 / rows),
        tape,
    })
}

/// Pre-clip one-step output `eps + u(eps, 0, 1 | o)`.
pub fn one_step_raw(policy: &PolicyNet, o: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let rows = o.rows();
    let u = policy.velocity(o, eps, &vec![0.0; rows], &vec![1.0; rows])?;
    eps.add(&u)
}

/// One-step action `clip(eps + u(eps, 0, 1 | o), −1, 1)`.
pub fn one_step_action(policy: &PolicyNet, o: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok(one_step_raw(policy, o, eps)?.map(|x| x.clamp(-1.0, 1.0)))
}

/// Recorded one-step sample, for differentiating through the action.
pub struct OneStepTape<'a> {
    pub action: Tensor,
    /// 1 where the raw output lies inside the clip box, else 0.
    pub pass_mask: Tensor,
    tape: GradTape<'a>,
}

impl<'a> OneStepTape<'a> {
    pub fn record(policy: &'a PolicyNet, o: &Tensor, eps: &Tensor) -> Result<Self> {
        let rows = o.rows();
        let x = policy.input(o, eps, &vec![0.0; rows], &vec![1.0; rows])?;
        let (u, tape) = mlp_forward(policy.params(), &x, true)?;
        let raw = eps.add(&u)?;
        let pass_mask = raw.map(|x| if x.abs() < 1.0 { 1.0 } else { 0.0 });
        Ok(Self {
            action: raw.map(|x| x.clamp(-1.0, 1.0)),
            pass_mask,
            tape: tape.expect("recorded"),
        })
    }

    /// Parameter gradient of `Σ grad_action ⊙ action`.
    pub fn backward(mut self, grad_action: &Tensor) -> Result<MlpParams> {
        let g = grad_action.zip_map(&self.pass_mask, |g, m| g * m)?;
        self.tape.backward_params(&g)
    }
}

/// Iterates `a ← a + (t_{k+1} − t_k)·u(a, t_k, t_{k+1} | o)` over `schedule`.
/// The result is not clipped.
pub fn multi_step_action(
    policy: &PolicyNet,
    o: &Tensor,
    eps: &Tensor,
    schedule: &[f64],
) -> Result<Tensor> {
    validate_schedule(schedule)?;
    let rows = o.rows();
    let mut a = eps.clone();
    for w in schedule.windows(2) {
        let u = policy.velocity(o, &a, &vec![w[0]; rows], &vec![w[1]; rows])?;
        a.axpy(w[1] - w[0], &u)?;
    }
    Ok(a)
}

pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    let ok = schedule.len() >= 2
        && schedule[0] == 0.0
        && schedule[schedule.len() - 1] == 1.0
        && schedule.windows(2).all(|w| w[1] > w[0]);
    if !ok {
        return Err(Error::Config(format!(
            "schedule must increase strictly from 0 to 1, got {schedule:?}"
        )));
    }
    Ok(())
}

/// `k + 1` evenly spaced times from 0 to 1.
pub fn uniform_schedule(k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..=k)
        .map(|i| if i == k { 1.0 } else { i as f64 / k as f64 })
        .collect()
}

/// Draws noise and samples one-step actions for a batch of observations.
pub fn sample_actions<R: Rng>(policy: &PolicyNet, o: &Tensor, rng: &mut R) -> Result<Tensor> {
    let eps = normal_tensor(rng, o.rows(), policy.act_dim);
    one_step_action(policy, o, &eps)
}
