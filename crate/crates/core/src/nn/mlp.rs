//! Multi-layer perceptron with GELU activations and optional post-activation
//! layer normalization.
//!
//! Three evaluation paths share one layer loop:
//!
//! - plain forward, optionally recorded onto a [`GradTape`] for reverse mode;
//! - forward-mode dual evaluation ([`mlp_jvp`]) carrying a tangent alongside
//!   the primal, streaming so only the current layer stays alive;
//! - recorded dual evaluation ([`mlp_forward_dual`]), whose tape keeps both
//!   primal and tangent intermediates and can backpropagate cotangents from
//!   either output.
//!
//! Weights are stored `[fan_in, fan_out]` so a batch `[B, in]` maps to
//! `[B, out]` with a single row-major product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dual::DualTensor;
use super::special::{gelu_and_grad_into, gelu_into, normal_cdf, normal_cdf_pdf, normal_pdf};
use super::tensor::{dot, matmul, matmul_a_bt, matmul_at_b_acc, sum4, Tensor};
use crate::{Error, Result};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact error-function GELU, `z · Φ(z)`.
    Gelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
        }
    }
}

#[inline]
pub fn gelu(z: f64) -> f64 {
    z * normal_cdf(z)
}

#[inline]
pub fn gelu_grad(z: f64) -> f64 {
    let (cdf, pdf) = normal_cdf_pdf(z);
    cdf + z * pdf
}

#[inline]
fn gelu_grad2(z: f64) -> f64 {
    normal_pdf(z) * (2.0 - z * z)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// Layer normalization after every hidden activation.
    pub post_activation_norm: bool,
}

impl MlpSpec {
    /// GELU network with post-activation normalization.
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Gelu,
            post_activation_norm: true,
        }
    }

    pub fn without_norm(mut self) -> Self {
        self.post_activation_norm = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "mlp dims must be >= 1 (input {}, output {})",
                self.input_dim, self.output_dim
            )));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("mlp needs at least one hidden layer".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::Config(format!("hidden layer {i} has width 0")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub offset: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`.
    pub weight: Tensor,
    /// `[fan_out]`.
    pub bias: Tensor,
    pub norm: Option<LayerNormParams>,
}

/// Parameters of one MLP. Gradients and optimizer moments reuse this type so
/// their shapes mirror the parameters exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl MlpParams {
    /// All-zero parameters (including norm gains) with the spec's shapes.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(fi, fo))| Layer {
                weight: Tensor::zeros(&[fi, fo]),
                bias: Tensor::zeros(&[fo]),
                norm: (i < last && spec.post_activation_norm).then(|| LayerNormParams {
                    gain: Tensor::zeros(&[fo]),
                    offset: Tensor::zeros(&[fo]),
                }),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec).expect("spec already validated")
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Parameter tensors in checkpoint order: per layer weight, bias, then
    /// norm gain and offset when present.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gain);
                out.push(&n.offset);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.offset);
            }
        }
        out
    }

    /// Layer index owning each entry of [`Self::tensors`].
    pub fn tensor_layer_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let k = if l.norm.is_some() { 4 } else { 2 };
            out.extend(std::iter::repeat_n(i, k));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MlpParams) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape("parameter sets have different specs".into()));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    /// Flat copy of every parameter in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Deterministic initialization: weights uniform in `±sqrt(6 / (fan_in +
/// fan_out))`, zero biases, unit norm gains and zero offsets.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let (fi, fo) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let limit = (6.0 / (fi + fo) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        if let Some(n) = &mut layer.norm {
            n.gain.fill(1.0);
        }
    }
    Ok(params)
}

struct LayerCache {
    input: Tensor,
    input_dot: Option<Tensor>,
    /// Pre-activation; absent on the output layer.
    z: Option<Tensor>,
    /// `gelu'(z)`.
    dact: Option<Tensor>,
    z_dot: Option<Tensor>,
    xhat: Option<Tensor>,
    xhat_dot: Option<Tensor>,
    /// `[B]` reciprocal standard deviations.
    rstd: Option<Tensor>,
}

/// Activations recorded by one forward pass, consumed by one backward pass.
pub struct GradTape<'a> {
    params: &'a MlpParams,
    caches: Option<Vec<LayerCache>>,
    dual: bool,
    rows: usize,
}

/// Result of a backward pass.
pub struct Gradients {
    /// Parameter gradients; `None` when only input gradients were requested.
    pub params: Option<MlpParams>,
    pub input: Tensor,
    /// Cotangent of the input tangent (dual tapes only).
    pub input_tangent: Option<Tensor>,
}

impl GradTape<'_> {
    pub fn is_dual(&self) -> bool {
        self.dual
    }

    pub fn is_consumed(&self) -> bool {
        self.caches.is_none()
    }

    /// Exact reverse-mode gradients of `Σ grad_output ⊙ output`.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<(MlpParams, Tensor)> {
        let g = self.backward_full(grad_output, None, true)?;
        Ok((g.params.expect("requested"), g.input))
    }

    /// Parameter gradients only; the input gradient of the first layer is skipped.
    pub fn backward_params(&mut self, grad_output: &Tensor) -> Result<MlpParams> {
        let caches = self.take_checked(grad_output, None)?;
        let g = backward_impl(self.params, caches, grad_output, None, true, false)?;
        Ok(g.params.expect("requested"))
    }

    /// Gradient with respect to the input only; parameter gradients are skipped.
    pub fn backward_input(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        Ok(self.backward_full(grad_output, None, false)?.input)
    }

    /// Backward pass accepting a cotangent for the tangent output as well.
    /// A tangent cotangent requires a dual tape.
    pub fn backward_full(
        &mut self,
        grad_output: &Tensor,
        grad_tangent: Option<&Tensor>,
        want_params: bool,
    ) -> Result<Gradients> {
        let caches = self.take_checked(grad_output, grad_tangent)?;
        backward_impl(
            self.params,
            caches,
            grad_output,
            grad_tangent,
            want_params,
            true,
        )
    }

    fn take_checked(
        &mut self,
        grad_output: &Tensor,
        grad_tangent: Option<&Tensor>,
    ) -> Result<Vec<LayerCache>> {
        let caches = self
            .caches
            .take()
            .ok_or_else(|| Error::Usage("gradient tape already consumed".into()))?;
        let spec = self.params.spec();
        let expect = [self.rows, spec.output_dim];
        if grad_output.shape() != expect {
            return Err(Error::Shape(format!(
                "grad_output {:?}, forward output {:?}",
                grad_output.shape(),
                expect
            )));
        }
        if let Some(gt) = grad_tangent {
            if !self.dual {
                return Err(Error::Usage(
                    "tangent cotangent given to a primal-only tape".into(),
                ));
            }
            if gt.shape() != expect {
                return Err(Error::Shape(format!(
                    "grad_tangent {:?}, forward output {:?}",
                    gt.shape(),
                    expect
                )));
            }
        }
        Ok(caches)
    }
}

/// Plain forward pass. With `record`, returns a tape for one backward pass.
pub fn mlp_forward<'a>(
    params: &'a MlpParams,
    input: &Tensor,
    record: bool,
) -> Result<(Tensor, Option<GradTape<'a>>)> {
    check_input(params, input)?;
    let mut caches = record.then(Vec::new);
    let (out, _) = run(params, input.clone(), None, caches.as_mut());
    let tape = caches.map(|c| GradTape {
        params,
        caches: Some(c),
        dual: false,
        rows: input.rows(),
    });
    Ok((out, tape))
}

/// Forward-mode Jacobian-vector product, streaming.
pub fn mlp_jvp(params: &MlpParams, input: &DualTensor) -> Result<DualTensor> {
    check_input(params, &input.primal)?;
    let (p, t) = run(
        params,
        input.primal.clone(),
        Some(input.tangent.clone()),
        None,
    );
    DualTensor::new(p, t.expect("dual run yields a tangent"))
}

/// Recorded dual forward pass. The returned tape holds primal and tangent
/// intermediates, so its backward can take cotangents on both outputs.
pub fn mlp_forward_dual<'a>(
    params: &'a MlpParams,
    input: &DualTensor,
) -> Result<(DualTensor, GradTape<'a>)> {
    check_input(params, &input.primal)?;
    let mut caches = Vec::new();
    let (p, t) = run(
        params,
        input.primal.clone(),
        Some(input.tangent.clone()),
        Some(&mut caches),
    );
    let tape = GradTape {
        params,
        caches: Some(caches),
        dual: true,
        rows: input.primal.rows(),
    };
    Ok((
        DualTensor::new(p, t.expect("dual run yields a tangent"))?,
        tape,
    ))
}

fn check_input(params: &MlpParams, input: &Tensor) -> Result<()> {
    if input.shape().len() != 2 || input.cols() != params.spec.input_dim {
        return Err(Error::Shape(format!(
            "mlp expects [batch, {}] input, got {:?}",
            params.spec.input_dim,
            input.shape()
        )));
    }
    Ok(())
}

fn affine(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (rows, fi, fo) = (x.rows(), w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * fo];
    matmul(x.data(), w.data(), rows, fi, fo, &mut out);
    if let Some(b) = b {
        let b = b.data();
        for row in out.chunks_exact_mut(fo) {
            for (o, &bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
    }
    Tensor::wrap(vec![rows, fo], out)
}

/// Normalizes each row of `g` in place into `x̂`; returns the per-row `1/σ`.
fn layer_norm_rows(g: &mut Tensor) -> Tensor {
    let (rows, width) = (g.rows(), g.cols());
    let n = width as f64;
    let mut rstd = Vec::with_capacity(rows);
    for row in g.data_mut().chunks_exact_mut(width) {
        let mean = sum4(row) / n;
        row.iter_mut().for_each(|x| *x -= mean);
        let s = 1.0 / (dot(row, row) / n + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|x| *x *= s);
        rstd.push(s);
    }
    Tensor::wrap(vec![rows], rstd)
}

/// Tangent of layer normalization: `s · (ġ − mean ġ − x̂ · mean(x̂ ġ))`, in place.
fn layer_norm_tangent_rows(gdot: &mut Tensor, xhat: &Tensor, rstd: &Tensor) {
    let width = gdot.cols();
    let n = width as f64;
    for ((row, xh), &s) in gdot
        .data_mut()
        .chunks_exact_mut(width)
        .zip(xhat.data().chunks_exact(width))
        .zip(rstd.data())
    {
        let mean = sum4(row) / n;
        let m = dot(row, xh) / n;
        for (d, &x) in row.iter_mut().zip(xh) {
            *d = s * (*d - mean - x * m);
        }
    }
}

fn scale_shift(x: &Tensor, gain: &Tensor, offset: Option<&Tensor>) -> Tensor {
    let width = x.cols();
    let mut out = x.data().to_vec();
    let gain = gain.data();
    for row in out.chunks_exact_mut(width) {
        match offset {
            Some(o) => {
                for ((v, &g), &b) in row.iter_mut().zip(gain).zip(o.data()) {
                    *v = *v * g + b;
                }
            }
            None => {
                for (v, &g) in row.iter_mut().zip(gain) {
                    *v *= g;
                }
            }
        }
    }
    Tensor::wrap(x.shape().to_vec(), out)
}

fn run(
    params: &MlpParams,
    mut x: Tensor,
    mut x_dot: Option<Tensor>,
    mut caches: Option<&mut Vec<LayerCache>>,
) -> (Tensor, Option<Tensor>) {
    let last = params.layers.len() - 1;
    for (li, layer) in params.layers.iter().enumerate() {
        let z = affine(&x, &layer.weight, Some(&layer.bias));
        let z_dot = x_dot.as_ref().map(|xd| affine(xd, &layer.weight, None));
        if li == last {
            if let Some(c) = caches.as_deref_mut() {
                c.push(LayerCache {
                    input: x,
                    input_dot: x_dot,
                    z: None,
                    dact: None,
                    z_dot: None,
                    xhat: None,
                    xhat_dot: None,
                    rstd: None,
                });
            }
            return (z, z_dot);
        }

        let mut g = Tensor::zeros(z.shape());
        let dact = if caches.is_some() || z_dot.is_some() {
            let mut dact = Tensor::zeros(z.shape());
            gelu_and_grad_into(z.data(), g.data_mut(), dact.data_mut());
            Some(dact)
        } else {
            gelu_into(z.data(), g.data_mut());
            None
        };
        let mut g_dot = z_dot.as_ref().map(|zd| {
            zd.zip_map(dact.as_ref().expect("computed with a tangent"), |d, a| {
                a * d
            })
            .expect("same shape")
        });

        let (y, y_dot, xhat, xhat_dot, rstd) = match &layer.norm {
            Some(norm) => {
                let rstd = layer_norm_rows(&mut g);
                let xhat = g;
                if let Some(gd) = g_dot.as_mut() {
                    layer_norm_tangent_rows(gd, &xhat, &rstd);
                }
                let xhat_dot = g_dot;
                let y = scale_shift(&xhat, &norm.gain, Some(&norm.offset));
                let y_dot = xhat_dot
                    .as_ref()
                    .map(|xd| scale_shift(xd, &norm.gain, None));
                (y, y_dot, Some(xhat), xhat_dot, Some(rstd))
            }
            None => (g, g_dot, None, None, None),
        };

        if let Some(c) = caches.as_deref_mut() {
            c.push(LayerCache {
                input: x,
                input_dot: x_dot,
                z: Some(z),
                dact,
                z_dot,
                xhat,
                xhat_dot,
                rstd,
            });
        }
        x = y;
        x_dot = y_dot;
    }
    unreachable!("output layer returns inside the loop")
}

fn col_sum_into(dz: &Tensor, out: &mut Tensor) {
    let width = dz.cols();
    let acc = out.data_mut();
    for row in dz.data().chunks_exact(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

fn backward_impl(
    params: &MlpParams,
    mut caches: Vec<LayerCache>,
    grad_output: &Tensor,
    grad_tangent: Option<&Tensor>,
    want_params: bool,
    want_input: bool,
) -> Result<Gradients> {
    let mut grads = want_params.then(|| params.zeros_like());
    let mut dy = grad_output.clone();
    let mut dy_dot = grad_tangent.cloned();
    let last = params.layers.len() - 1;

    for li in (0..=last).rev() {
        let cache = caches.pop().expect("one cache per layer");
        let layer = &params.layers[li];
        let rows = dy.rows();

        let (dz, dz_dot) = if li == last {
            (dy, dy_dot)
        } else {
            let z = cache.z.as_ref().expect("hidden cache holds z");
            let dact = cache.dact.as_ref().expect("hidden cache holds gelu'");
            let width = z.cols();
            let n = width as f64;
            // Cotangents of the activation output g and its tangent ġ.
            let (dg, dg_dot) = match (&layer.norm, &cache.xhat, &cache.rstd) {
                (Some(norm), Some(xhat), Some(rstd)) => {
                    if let Some(gl) = grads.as_mut() {
                        let gn = gl.layers[li].norm.as_mut().expect("mirrors params");
                        let (dgain, doffset) = (gn.gain.data_mut(), gn.offset.data_mut());
                        for (dyr, xr) in dy
                            .data()
                            .chunks_exact(width)
                            .zip(xhat.data().chunks_exact(width))
                        {
                            for ((dgj, dbj), (&d, &x)) in dgain
                                .iter_mut()
                                .zip(doffset.iter_mut())
                                .zip(dyr.iter().zip(xr))
                            {
                                *dgj += d * x;
                                *dbj += d;
                            }
                        }
                        if let (Some(dyd), Some(xd)) = (&dy_dot, &cache.xhat_dot) {
                            for (dr, xr) in dyd
                                .data()
                                .chunks_exact(width)
                                .zip(xd.data().chunks_exact(width))
                            {
                                for (dgj, (&d, &x)) in dgain.iter_mut().zip(dr.iter().zip(xr)) {
                                    *dgj += d * x;
                                }
                            }
                        }
                    }
                    let gain = norm.gain.data();
                    let mut dg = vec![0.0; rows * width];
                    let mut dg_dot = dy_dot.as_ref().map(|_| vec![0.0; rows * width]);
                    let mut dxt = vec![0.0; width];
                    for i in 0..rows {
                        let s = rstd.data()[i];
                        let xh = xhat.row(i);
                        let dyr = dy.row(i);
                        for ((d, &g), &y) in dxt.iter_mut().zip(gain).zip(dyr) {
                            *d = g * y;
                        }
                        let mut ds = 0.0;
                        if let (Some(dyd), Some(dgd)) = (&dy_dot, dg_dot.as_mut()) {
                            let zd = cache.z_dot.as_ref().expect("dual tape").row(i);
                            let xhd = cache.xhat_dot.as_ref().expect("dual tape").row(i);
                            let ar = dact.row(i);
                            let dydr = dyd.row(i);
                            let mut m = 0.0;
                            let mut mw = 0.0;
                            let mut mwx = 0.0;
                            for j in 0..width {
                                let gd = ar[j] * zd[j];
                                let w = gain[j] * dydr[j];
                                m += xh[j] * gd;
                                mw += w;
                                mwx += w * xh[j];
                                ds += w * xhd[j];
                            }
                            m /= n;
                            mw /= n;
                            mwx /= n;
                            ds /= s;
                            let out = &mut dgd[i * width..(i + 1) * width];
                            for j in 0..width {
                                let gd = ar[j] * zd[j];
                                let w = gain[j] * dydr[j];
                                out[j] = s * (w - mw - xh[j] * mwx);
                                dxt[j] += -s * m * w - s * mwx * gd;
                            }
                        }
                        let mean_d = sum4(&dxt) / n;
                        let mean_dx = dot(&dxt, xh) / n;
                        let out = &mut dg[i * width..(i + 1) * width];
                        if ds == 0.0 {
                            for ((o, &d), &x) in out.iter_mut().zip(&dxt).zip(xh) {
                                *o = s * (d - mean_d - x * mean_dx);
                            }
                        } else {
                            for ((o, &d), &x) in out.iter_mut().zip(&dxt).zip(xh) {
                                *o = s * (d - mean_d - x * mean_dx) - ds * s * s * x / n;
                            }
                        }
                    }
                    (
                        Tensor::wrap(vec![rows, width], dg),
                        dg_dot.map(|d| Tensor::wrap(vec![rows, width], d)),
                    )
                }
                _ => (dy, dy_dot),
            };
            let mut dz = dact.zip_map(&dg, |a, d| a * d)?;
            let dz_dot = match &dg_dot {
                Some(dgd) => {
                    let zd = cache.z_dot.as_ref().expect("dual tape");
                    let dzd = dz.data_mut();
                    for (k, v) in dzd.iter_mut().enumerate() {
                        *v += gelu_grad2(z.data()[k]) * zd.data()[k] * dgd.data()[k];
                    }
                    Some(dact.zip_map(dgd, |a, d| a * d)?)
                }
                None => None,
            };
            (dz, dz_dot)
        };

        let (fi, fo) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        if let Some(gl) = grads.as_mut() {
            let gw = &mut gl.layers[li];
            matmul_at_b_acc(
                cache.input.data(),
                dz.data(),
                rows,
                fi,
                fo,
                gw.weight.data_mut(),
            );
            if let (Some(xd), Some(dzd)) = (&cache.input_dot, &dz_dot) {
                matmul_at_b_acc(xd.data(), dzd.data(), rows, fi, fo, gw.weight.data_mut());
            }
            col_sum_into(&dz, &mut gw.bias);
        }
        drop(cache);
        if li == 0 && !want_input {
            dy = Tensor::zeros(&[0, fi]);
            dy_dot = None;
            break;
        }
        let mut dx = vec![0.0; rows * fi];
        matmul_a_bt(dz.data(), layer.weight.data(), rows, fo, fi, &mut dx);
        dy = Tensor::wrap(vec![rows, fi], dx);
        dy_dot = dz_dot.map(|dzd| {
            let mut dxd = vec![0.0; rows * fi];
            matmul_a_bt(dzd.data(), layer.weight.data(), rows, fo, fi, &mut dxd);
            Tensor::wrap(vec![rows, fi], dxd)
        });
    }

    Ok(Gradients {
        params: grads,
        input: dy,
        input_tangent: dy_dot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::new(2, &[4], 1);
        let a = mlp_init(&spec, 7).unwrap();
        let b = mlp_init(&spec, 7).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        for l in a.layers() {
            assert!(l.bias.data().iter().all(|&x| x == 0.0));
            if let Some(n) = &l.norm {
                assert!(n.gain.data().iter().all(|&x| x == 1.0));
                assert!(n.offset.data().iter().all(|&x| x == 0.0));
            }
        }
        assert_ne!(mlp_init(&spec, 8).unwrap().flatten(), a.flatten());
    }

    #[test]
    fn invalid_spec_is_a_configuration_error() {
        let bad = MlpSpec::new(0, &[4], 1);
        assert!(matches!(mlp_init(&bad, 0), Err(Error::Config(_))));
        let bad = MlpSpec::new(2, &[], 1);
        assert!(matches!(mlp_init(&bad, 0), Err(Error::Config(_))));
        let bad = MlpSpec::new(2, &[3, 0], 1);
        assert!(matches!(mlp_init(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(3, &[5, 5], 2);
        let mut p = MlpParams::zeros(&spec).unwrap();
        for l in p.layers_mut() {
            if let Some(n) = &mut l.norm {
                n.gain.fill(1.0);
            }
        }
        let x = random_input(4, 3, 1);
        let (y, _) = mlp_forward(&p, &x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gelu_basics() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu_grad(0.0) - 0.5).abs() < 1e-15);
        // large positive inputs pass through, large negative ones vanish
        assert!((gelu(8.0) - 8.0).abs() < 1e-12);
        assert!(gelu(-8.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = mlp_init(&MlpSpec::new(3, &[4], 2), 0).unwrap();
        let x = random_input(2, 4, 0);
        assert!(matches!(mlp_forward(&p, &x, false), Err(Error::Shape(_))));
        let (_, tape) = mlp_forward(&p, &random_input(2, 3, 0), true).unwrap();
        let mut tape = tape.unwrap();
        assert!(matches!(
            tape.backward(&Tensor::zeros(&[2, 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tape_is_single_use() {
        let p = mlp_init(&MlpSpec::new(3, &[4], 2), 0).unwrap();
        let (_, tape) = mlp_forward(&p, &random_input(2, 3, 0), true).unwrap();
        let mut tape = tape.unwrap();
        let g = Tensor::full(&[2, 2], 1.0);
        tape.backward(&g).unwrap();
        assert!(tape.is_consumed());
        assert!(matches!(tape.backward(&g), Err(Error::Usage(_))));
    }

    #[test]
    fn tangent_cotangent_needs_dual_tape() {
        let p = mlp_init(&MlpSpec::new(3, &[4], 2), 0).unwrap();
        let (_, tape) = mlp_forward(&p, &random_input(2, 3, 0), true).unwrap();
        let g = Tensor::full(&[2, 2], 1.0);
        assert!(matches!(
            tape.unwrap().backward_full(&g, Some(&g), true),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn linear_one_by_one_gradients() {
        // Every net has a hidden layer, so the linear case is the output layer:
        // its weight gradient is its input and the input gradient is w times
        // the activation slope.
        let spec = MlpSpec::new(1, &[1], 1).without_norm();
        let mut p = MlpParams::zeros(&spec).unwrap();
        p.layers_mut()[0].weight.data_mut()[0] = 1.0;
        let w = 0.7;
        p.layers_mut()[1].weight.data_mut()[0] = w;
        let x = Tensor::from_vec(&[1, 1], vec![0.3]).unwrap();
        let (y, tape) = mlp_forward(&p, &x, true).unwrap();
        assert!((y.data()[0] - w * gelu(0.3)).abs() < 1e-15);
        let (g, gx) = tape.unwrap().backward(&Tensor::full(&[1, 1], 1.0)).unwrap();
        assert!((g.layers()[1].weight.data()[0] - gelu(0.3)).abs() < 1e-15);
        assert!((gx.data()[0] - w * gelu_grad(0.3)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_output_gives_zero_gradients() {
        let p = mlp_init(&MlpSpec::new(3, &[6, 6], 2), 3).unwrap();
        let (_, tape) = mlp_forward(&p, &random_input(5, 3, 4), true).unwrap();
        let (g, gx) = tape.unwrap().backward(&Tensor::zeros(&[5, 2])).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_tangent_propagates_to_zero() {
        let p = mlp_init(&MlpSpec::new(4, &[8, 8], 3), 11).unwrap();
        let x = random_input(3, 4, 12);
        let d = DualTensor::new(x.clone(), Tensor::zeros(&[3, 4])).unwrap();
        let out = mlp_jvp(&p, &d).unwrap();
        assert!(out.tangent.data().iter().all(|&v| v == 0.0));
        let (y, _) = mlp_forward(&p, &x, false).unwrap();
        assert_eq!(out.primal, y);
    }

    #[test]
    fn recorded_and_streaming_forward_agree() {
        let p = mlp_init(&MlpSpec::new(4, &[8, 8], 3), 2).unwrap();
        let x = random_input(6, 4, 3);
        let (a, _) = mlp_forward(&p, &x, false).unwrap();
        let (b, _) = mlp_forward(&p, &x, true).unwrap();
        assert_eq!(a, b);
        let d = DualTensor::new(x.clone(), random_input(6, 4, 5)).unwrap();
        let s = mlp_jvp(&p, &d).unwrap();
        let (r, _) = mlp_forward_dual(&p, &d).unwrap();
        assert_eq!(s.primal, r.primal);
        assert_eq!(s.tangent, r.tangent);
    }
}
