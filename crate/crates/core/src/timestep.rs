//! Exponential-family timestep distribution `p(t; ξ) ∝ exp(ξᵀ h(t))` with
//! features `h(t) = [log t, log(1 − t), t, 1]`.
//!
//! The density is tabulated on a uniform grid over `[δ, 1 − δ]`, normalized
//! with the trapezoid rule, and sampled by inverting the piecewise-linear CDF.
//! The grid avoids the log singularities at the endpoints.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::{Error, Result};

/// Default half-open clipping of the support.
pub const DEFAULT_DELTA: f64 = 1e-7;
pub const DEFAULT_GRID: usize = 4096;

/// Weights `[ξ₁, ξ₂, ξ₃, ξ₄]` on `[log t, log(1 − t), t, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiVector(pub [f64; 4]);

impl XiVector {
    pub const UNIFORM: XiVector = XiVector([0.0; 4]);

    pub fn new(xi: [f64; 4]) -> Result<Self> {
        let v = XiVector(xi);
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("xi has non-finite entries: {self}")));
        }
        if self.0[0] <= -1.0 || self.0[1] <= -1.0 {
            return Err(Error::Integrability {
                xi1: self.0[0],
                xi2: self.0[1],
            });
        }
        Ok(())
    }

    fn log_weight(&self, t: f64) -> f64 {
        let [a, b, c, d] = self.0;
        // 0 · log t is taken as 0 so the uniform case is exact.
        let term = |w: f64, f: f64| if w == 0.0 { 0.0 } else { w * f };
        term(a, t.ln()) + term(b, (1.0 - t).ln()) + term(c, t) + d
    }
}

impl fmt::Display for XiVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

impl FromStr for XiVector {
    type Err = Error;

    /// Parses four comma-separated decimals, e.g. `0,0,0.2,0`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().trim_matches(['[', ']']).split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "xi needs four comma-separated values, got {s:?}"
            )));
        }
        let mut xi = [0.0; 4];
        for (slot, p) in xi.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("xi component {p:?} is not a number")))?;
        }
        XiVector::new(xi)
    }
}

/// Tabulated density and CDF of `p(t; ξ)`.
#[derive(Debug, Clone)]
pub struct TimestepTable {
    xi: XiVector,
    delta: f64,
    grid: Vec<f64>,
    /// Unnormalized log-density `ξᵀ h(t)` at the grid points.
    log_weight: Vec<f64>,
    /// Trapezoid normalizer over the grid, `∫ exp(ξᵀh)`.
    normalizer: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

/// Builds the table for `xi` on `grid_n` points spanning `[delta, 1 − delta]`.
pub fn build_table(xi: XiVector, grid_n: usize, delta: f64) -> Result<TimestepTable> {
    xi.validate()?;
    if grid_n < 256 {
        return Err(Error::Config(format!(
            "grid_n must be >= 256, got {grid_n}"
        )));
    }
    if !(delta > 0.0 && delta < 1e-3) {
        return Err(Error::Config(format!(
            "delta must lie in (0, 1e-3), got {delta}"
        )));
    }
    let h = (1.0 - 2.0 * delta) / (grid_n - 1) as f64;
    let grid: Vec<f64> = (0..grid_n)
        .map(|i| {
            if i == grid_n - 1 {
                1.0 - delta
            } else {
                delta + i as f64 * h
            }
        })
        .collect();
    let log_weight: Vec<f64> = grid.iter().map(|&t| xi.log_weight(t)).collect();
    let shift = log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_weight.iter().map(|&l| (l - shift).exp()).collect();

    let mut cdf = Vec::with_capacity(grid_n);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 1..grid_n {
        acc += 0.5 * (scaled[i - 1] + scaled[i]) * (grid[i] - grid[i - 1]);
        cdf.push(acc);
    }
    let total = acc;
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numeric(format!(
            "timestep normalizer is {total} for xi {xi}"
        )));
    }
    let density: Vec<f64> = scaled.iter().map(|&w| w / total).collect();
    for c in &mut cdf {
        *c /= total;
    }
    *cdf.last_mut().expect("grid_n >= 256") = 1.0;
    let normalizer = total * shift.exp();

    Ok(TimestepTable {
        xi,
        delta,
        grid,
        log_weight,
        normalizer,
        density,
        cdf,
    })
}

impl TimestepTable {
    /// Table with the default grid and support clipping.
    pub fn new(xi: XiVector) -> Result<Self> {
        build_table(xi, DEFAULT_GRID, DEFAULT_DELTA)
    }

    pub fn xi(&self) -> XiVector {
        self.xi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn support(&self) -> (f64, f64) {
        (self.delta, 1.0 - self.delta)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weight
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.grid.len();
        let h = self.grid[1] - self.grid[0];
        let i = (((t - self.grid[0]) / h).floor() as usize).min(n - 2);
        let w = ((t - self.grid[i]) / (self.grid[i + 1] - self.grid[i])).clamp(0.0, 1.0);
        (i, w)
    }

    fn check_support(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain(format!(
                "t = {t} outside support [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Linearly interpolated normalized density.
    pub fn density(&self, t: f64) -> Result<f64> {
        self.check_support(t)?;
        let (i, w) = self.locate(t);
        Ok(self.density[i] * (1.0 - w) + self.density[i + 1] * w)
    }

    /// Piecewise-linear CDF through the tabulated values.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        self.check_support(t)?;
        let (i, w) = self.locate(t);
        Ok(self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w)
    }

    /// Inverse of [`Self::cdf`] at probability `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c <= u);
        let n = self.grid.len();
        if i == 0 {
            return self.grid[0];
        }
        if i >= n {
            return self.grid[n - 1];
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + w * (self.grid[i] - self.grid[i - 1])
    }

    /// Inverse-transform sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Free-function form of [`TimestepTable::sample`].
pub fn sample_t<R: Rng + ?Sized>(table: &TimestepTable, rng: &mut R) -> f64 {
    table.sample(rng)
}

/// The coupled pair `(r, t)` with `r = 1 − t`.
pub fn pair_from_t(t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("t = {t} must lie in (0, 1)")));
    }
    Ok((1.0 - t, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_table_is_flat() {
        let tab = TimestepTable::new(XiVector::UNIFORM).unwrap();
        let sup = tab
            .densities()
            .iter()
            .map(|d| (d - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup deviation {sup}");
        assert!((tab.normalizer() - 1.0).abs() < 1e-6);
        for t in [1e-7, 0.1, 0.5, 0.77, 1.0 - 1e-7] {
            assert!((tab.density(t).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cdf_invariants_hold() {
        for xi in [
            [0.0, 0.0, 0.0, 0.0],
            [5.0, 5.0, 0.0, 0.0],
            [0.0, 0.0, 0.2, 0.0],
            [-0.5, 2.0, -1.0, 3.0],
        ] {
            let tab = TimestepTable::new(XiVector(xi)).unwrap();
            let c = tab.cdf_values();
            assert_eq!(c[0], 0.0);
            assert!((c[c.len() - 1] - 1.0).abs() < 1e-10);
            assert!(c.windows(2).all(|w| w[1] >= w[0]));
            assert!(tab.densities().iter().all(|&d| d >= 0.0));
            let g = tab.grid();
            let d = tab.densities();
            let integral: f64 = (1..g.len())
                .map(|i| 0.5 * (d[i] + d[i - 1]) * (g[i] - g[i - 1]))
                .sum();
            assert!((integral - 1.0).abs() < 1e-6, "{xi:?}: {integral}");
        }
    }

    #[test]
    fn beta_like_density_ratio() {
        let tab = TimestepTable::new(XiVector([5.0, 5.0, 0.0, 0.0])).unwrap();
        let ratio = tab.density(0.5).unwrap() / tab.density(0.25).unwrap();
        let expected = (0.25f64 / (0.25 * 0.75)).powi(5);
        assert!(
            (ratio / expected - 1.0).abs() < 0.01,
            "{ratio} vs {expected}"
        );
    }

    #[test]
    fn exponential_tilt_is_increasing() {
        let tab = TimestepTable::new(XiVector([0.0, 0.0, 0.2, 0.0])).unwrap();
        assert!(tab.densities().windows(2).all(|w| w[1] > w[0]));
        let ratio = tab.density(0.9).unwrap() / tab.density(0.1).unwrap();
        assert!((ratio - (0.2f64 * 0.8).exp()).abs() < 1e-6);
    }

    #[test]
    fn integrability_and_argument_errors() {
        assert!(matches!(
            build_table(XiVector([-1.0, 0.0, 0.0, 0.0]), 4096, 1e-6),
            Err(Error::Integrability { .. })
        ));
        assert!(matches!(
            build_table(XiVector([0.0, -2.0, 0.0, 0.0]), 4096, 1e-6),
            Err(Error::Integrability { .. })
        ));
        assert!(matches!(
            build_table(XiVector::UNIFORM, 100, 1e-6),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_table(XiVector::UNIFORM, 4096, 0.01),
            Err(Error::Config(_))
        ));
        let tab = TimestepTable::new(XiVector::UNIFORM).unwrap();
        assert!(matches!(tab.density(0.0), Err(Error::Domain(_))));
        assert!(matches!(tab.density(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn xi_parsing() {
        let xi: XiVector = "0,0,0.2,0".parse().unwrap();
        assert_eq!(xi.0, [0.0, 0.0, 0.2, 0.0]);
        let xi: XiVector = "[5, 5, 0, 0]".parse().unwrap();
        assert_eq!(xi.0, [5.0, 5.0, 0.0, 0.0]);
        assert!("1,2,3".parse::<XiVector>().is_err());
        assert!("a,0,0,0".parse::<XiVector>().is_err());
        assert!(matches!(
            "-1,0,0,0".parse::<XiVector>(),
            Err(Error::Integrability { .. })
        ));
        assert_eq!(xi.to_string().parse::<XiVector>().unwrap(), xi);
    }

    #[test]
    fn pair_from_t_mirrors() {
        assert_eq!(pair_from_t(0.5).unwrap(), (0.5, 0.5));
        let (r, t) = pair_from_t(0.9).unwrap();
        assert_eq!(t, 0.9);
        assert_eq!(r, 1.0 - 0.9);
        assert!((r - 0.1).abs() < 1e-15);
        assert!(matches!(pair_from_t(0.0), Err(Error::Domain(_))));
        assert!(matches!(pair_from_t(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_samples_have_mean_half() {
        let tab = TimestepTable::new(XiVector::UNIFORM).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n).map(|_| tab.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let tab = TimestepTable::new(XiVector([2.0, 0.5, 1.0, 0.0])).unwrap();
        for u in [0.0, 0.01, 0.3, 0.5, 0.99, 1.0] {
            let t = tab.quantile(u);
            assert!((tab.cdf(t).unwrap() - u).abs() < 1e-9, "u={u}");
        }
    }
}
