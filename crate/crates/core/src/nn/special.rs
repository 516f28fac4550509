//! Standard normal CDF and density for the activation hot path.
//!
//! Both functions are evaluated on the lower half-line through the symmetries
//! `Φ(z) = 1 − Φ(−z)` and `φ(z) = φ(−z)`. On `[−RANGE, 0]` each is a piecewise
//! polynomial: `CELLS` uniform cells, each holding the degree-`DEGREE`
//! Chebyshev interpolant of a reference built from `libm::erfc` and `exp`.
//! Beyond `RANGE` the tail saturates (both values are below 1e-18 there).
//! Absolute error against the reference is about 1e-15.
//!
//! Sixteen cells keep one coefficient of every cell inside two 512-bit
//! registers, so on CPUs with AVX-512 the slice kernels do the cell lookup
//! with register permutes instead of memory gathers. Other targets run the
//! same polynomials one element at a time. The two paths round differently
//! (fused vs. separate multiply-add) but the choice is fixed per process.

use std::sync::OnceLock;

const RANGE: f64 = 9.0;
const CELLS: usize = 16;
const DEGREE: usize = 12;
const COEFFS: usize = DEGREE + 1;
const CELL_WIDTH: f64 = RANGE / CELLS as f64;
const INV_CELL_WIDTH: f64 = CELLS as f64 / RANGE;
const INV_HALF_WIDTH: f64 = 2.0 / CELL_WIDTH;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Coefficient-major tables: `cdf[k][c]` is the coefficient of `s^k` in
/// cell `c`, where `s ∈ [−1, 1]` is the cell-local coordinate.
#[repr(C, align(64))]
struct Tables {
    cdf: [[f64; CELLS]; COEFFS],
    pdf: [[f64; CELLS]; COEFFS],
}

fn reference_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn reference_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Monomial coefficients (in `s`) of the Chebyshev interpolant of
/// `f(center + s·half)`.
fn interpolant(f: impl Fn(f64) -> f64, center: f64, half: f64) -> [f64; COEFFS] {
    let n = COEFFS as f64;
    let values: Vec<f64> = (0..COEFFS)
        .map(|k| f(center + half * (std::f64::consts::PI * (k as f64 + 0.5) / n).cos()))
        .collect();
    let mut cheb = [0.0; COEFFS];
    for (j, c) in cheb.iter_mut().enumerate() {
        let s: f64 = values
            .iter()
            .enumerate()
            .map(|(k, v)| v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n).cos())
            .sum();
        *c = 2.0 * s / n;
    }
    cheb[0] *= 0.5;

    // T_j in the monomial basis via T_{j+1} = 2s·T_j − T_{j−1}.
    let mut out = [0.0; COEFFS];
    let mut t_prev = [0.0; COEFFS];
    let mut t_cur = [0.0; COEFFS];
    t_prev[0] = 1.0;
    t_cur[1] = 1.0;
    for (j, &c) in cheb.iter().enumerate() {
        let basis = match j {
            0 => t_prev,
            1 => t_cur,
            _ => {
                let mut next = [0.0; COEFFS];
                for i in 0..COEFFS {
                    let shifted = if i > 0 { 2.0 * t_cur[i - 1] } else { 0.0 };
                    next[i] = shifted - t_prev[i];
                }
                t_prev = t_cur;
                t_cur = next;
                next
            }
        };
        for i in 0..COEFFS {
            out[i] += c * basis[i];
        }
    }
    out
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Box<Tables>> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut t = Box::new(Tables {
            cdf: [[0.0; CELLS]; COEFFS],
            pdf: [[0.0; CELLS]; COEFFS],
        });
        for c in 0..CELLS {
            let center = -RANGE + (c as f64 + 0.5) * CELL_WIDTH;
            let cdf = interpolant(reference_cdf, center, 0.5 * CELL_WIDTH);
            let pdf = interpolant(reference_pdf, center, 0.5 * CELL_WIDTH);
            for k in 0..COEFFS {
                t.cdf[k][c] = cdf[k];
                t.pdf[k][c] = pdf[k];
            }
        }
        t
    })
}

/// Cell index and local coordinate of `−min(|z|, RANGE)`.
#[inline(always)]
fn locate(z: f64) -> (usize, f64) {
    let y = -z.abs().min(RANGE);
    let cell = (((y + RANGE) * INV_CELL_WIDTH) as usize).min(CELLS - 1);
    let center = -RANGE + (cell as f64 + 0.5) * CELL_WIDTH;
    (cell, (y - center) * INV_HALF_WIDTH)
}

#[inline(always)]
fn horner(table: &[[f64; CELLS]; COEFFS], cell: usize, s: f64) -> f64 {
    let mut acc = table[COEFFS - 1][cell];
    for row in table[..COEFFS - 1].iter().rev() {
        acc = acc * s + row[cell];
    }
    acc
}

#[inline(always)]
fn scalar_cdf(t: &Tables, z: f64) -> f64 {
    let (cell, s) = locate(z);
    let tail = if z.abs() >= RANGE {
        0.0
    } else {
        horner(&t.cdf, cell, s)
    };
    if z.is_nan() {
        z
    } else if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[inline(always)]
fn scalar_pdf(t: &Tables, z: f64) -> f64 {
    let (cell, s) = locate(z);
    if z.is_nan() {
        z
    } else if z.abs() >= RANGE {
        0.0
    } else {
        horner(&t.pdf, cell, s)
    }
}

/// `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    scalar_cdf(tables(), z)
}

/// `φ(z)`.
pub fn normal_pdf(z: f64) -> f64 {
    scalar_pdf(tables(), z)
}

/// `(Φ(z), φ(z))`.
pub fn normal_cdf_pdf(z: f64) -> (f64, f64) {
    let t = tables();
    (scalar_cdf(t, z), scalar_pdf(t, z))
}

fn gelu_scalar(t: &Tables, z: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) {
    match grad {
        Some(grad) => {
            for ((o, g), &x) in out.iter_mut().zip(grad.iter_mut()).zip(z) {
                let (cdf, pdf) = (scalar_cdf(t, x), scalar_pdf(t, x));
                *o = x * cdf;
                *g = cdf + x * pdf;
            }
        }
        None => {
            for (o, &x) in out.iter_mut().zip(z) {
                *o = x * scalar_cdf(t, x);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::*;
    use std::arch::x86_64::*;

    const LANES: usize = 8;

    pub(super) fn available() -> bool {
        static DETECTED: OnceLock<bool> = OnceLock::new();
        *DETECTED.get_or_init(|| is_x86_feature_detected!("avx512f"))
    }

    #[inline(always)]
    unsafe fn lookup(row: &[f64; CELLS], idx: __m512i) -> __m512d {
        let lo = _mm512_loadu_pd(row.as_ptr());
        let hi = _mm512_loadu_pd(row.as_ptr().add(LANES));
        _mm512_permutex2var_pd(lo, idx, hi)
    }

    #[inline(always)]
    unsafe fn poly(table: &[[f64; CELLS]; COEFFS], idx: __m512i, s: __m512d) -> __m512d {
        let mut acc = lookup(&table[COEFFS - 1], idx);
        for row in table[..COEFFS - 1].iter().rev() {
            acc = _mm512_fmadd_pd(acc, s, lookup(row, idx));
        }
        acc
    }

    /// One block of eight: returns `(Φ(x), φ(x))`.
    #[inline(always)]
    unsafe fn block(t: &Tables, x: __m512d, want_pdf: bool) -> (__m512d, __m512d) {
        let range = _mm512_set1_pd(RANGE);
        let a = _mm512_abs_pd(x);
        let y = _mm512_sub_pd(_mm512_setzero_pd(), _mm512_min_pd(a, range));
        let pos = _mm512_mul_pd(_mm512_add_pd(y, range), _mm512_set1_pd(INV_CELL_WIDTH));
        let cellf = _mm512_min_pd(
            _mm512_roundscale_pd::<{ _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC }>(pos),
            _mm512_set1_pd((CELLS - 1) as f64),
        );
        let idx = _mm512_cvtepi32_epi64(_mm512_cvttpd_epi32(cellf));
        let center = _mm512_fmadd_pd(
            _mm512_add_pd(cellf, _mm512_set1_pd(0.5)),
            _mm512_set1_pd(CELL_WIDTH),
            _mm512_set1_pd(-RANGE),
        );
        let s = _mm512_mul_pd(_mm512_sub_pd(y, center), _mm512_set1_pd(INV_HALF_WIDTH));
        let inside = _mm512_cmp_pd_mask::<_CMP_LT_OQ>(a, range);
        let tail = _mm512_maskz_mov_pd(inside, poly(&t.cdf, idx, s));
        let negative = _mm512_cmp_pd_mask::<_CMP_LT_OQ>(x, _mm512_setzero_pd());
        let cdf = _mm512_mask_blend_pd(negative, _mm512_sub_pd(_mm512_set1_pd(1.0), tail), tail);
        let pdf = if want_pdf {
            _mm512_maskz_mov_pd(inside, poly(&t.pdf, idx, s))
        } else {
            _mm512_setzero_pd()
        };
        (cdf, pdf)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gelu(
        t: &Tables,
        z: &[f64],
        out: &mut [f64],
        mut grad: Option<&mut [f64]>,
    ) {
        let want = grad.is_some();
        let full = z.len() / LANES * LANES;
        let mut i = 0;
        while i < full {
            let x = _mm512_loadu_pd(z.as_ptr().add(i));
            let (cdf, pdf) = block(t, x, want);
            _mm512_storeu_pd(out.as_mut_ptr().add(i), _mm512_mul_pd(x, cdf));
            if let Some(g) = grad.as_deref_mut() {
                _mm512_storeu_pd(g.as_mut_ptr().add(i), _mm512_fmadd_pd(x, pdf, cdf));
            }
            i += LANES;
        }
        if full < z.len() {
            let rest = z.len() - full;
            let mut buf = [0.0; LANES];
            buf[..rest].copy_from_slice(&z[full..]);
            let x = _mm512_loadu_pd(buf.as_ptr());
            let (cdf, pdf) = block(t, x, want);
            let mut o = [0.0; LANES];
            _mm512_storeu_pd(o.as_mut_ptr(), _mm512_mul_pd(x, cdf));
            out[full..].copy_from_slice(&o[..rest]);
            if let Some(g) = grad {
                _mm512_storeu_pd(o.as_mut_ptr(), _mm512_fmadd_pd(x, pdf, cdf));
                g[full..].copy_from_slice(&o[..rest]);
            }
        }
    }
}

fn gelu_dispatch(z: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) {
    let t = tables();
    #[cfg(target_arch = "x86_64")]
    if avx512::available() {
        // SAFETY: the CPU supports AVX-512F; lengths were checked by callers.
        unsafe { avx512::gelu(t, z, out, grad) };
        return;
    }
    gelu_scalar(t, z, out, grad);
}

/// `out[i] = z[i] · Φ(z[i])`.
pub fn gelu_into(z: &[f64], out: &mut [f64]) {
    assert_eq!(z.len(), out.len());
    gelu_dispatch(z, out, None);
}

/// GeLU values and first derivatives `Φ(z) + z·φ(z)` in one sweep.
pub fn gelu_and_grad_into(z: &[f64], out: &mut [f64], grad: &mut [f64]) {
    assert_eq!(z.len(), out.len());
    assert_eq!(z.len(), grad.len());
    gelu_dispatch(z, out, Some(grad));
}
