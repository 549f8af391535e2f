//! Correlated binary answers with fixed marginals from a Gaussian copula.
//!
//! Answer `j` is `1{Z_j <= Phi^-1(p_j)}` for a standard trivariate normal `Z`.
//! The latent correlation of each pair is solved numerically so that the
//! Pearson correlation of the two binary answers equals the target.

use nalgebra::Matrix3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::{bvn_cdf, norm_ppf};

const LATENT_BOUND: f64 = 0.999_999;

/// Pearson correlation of two thresholded normals with latent correlation `r`.
pub fn binary_correlation(pa: f64, pb: f64, r: f64) -> f64 {
    let p11 = bvn_cdf(norm_ppf(pa), norm_ppf(pb), r);
    (p11 - pa * pb) / (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt()
}

/// Attainable range of the correlation of two binary variables with means
/// `pa` and `pb` (the Frechet bounds on the joint success probability).
pub fn frechet_correlation_bounds(pa: f64, pb: f64) -> (f64, f64) {
    let scale = (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt();
    let lo = ((pa + pb - 1.0).max(0.0) - pa * pb) / scale;
    let hi = (pa.min(pb) - pa * pb) / scale;
    (lo, hi)
}

/// Latent normal correlation giving binary correlation `sigma`.
pub fn latent_correlation(pa: f64, pb: f64, sigma: f64) -> Result<f64> {
    if !(pa > 0.0 && pa < 1.0 && pb > 0.0 && pb < 1.0) {
        if sigma == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Design(format!(
            "answer probabilities ({pa}, {pb}) are degenerate; no correlation is attainable"
        )));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = frechet_correlation_bounds(pa, pb);
    if sigma > hi || sigma < lo {
        let which = if sigma > hi { "upper" } else { "lower" };
        return Err(Error::Design(format!(
            "correlation {sigma} violates the {which} Frechet bound [{lo:.4}, {hi:.4}] for marginals ({pa}, {pb})"
        )));
    }
    let (mut a, mut b) = (-LATENT_BOUND, LATENT_BOUND);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if binary_correlation(pa, pb, mid) < sigma {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    let r = 0.5 * (a + b);
    if (binary_correlation(pa, pb, r) - sigma).abs() > 1e-6 {
        return Err(Error::Design(format!(
            "correlation {sigma} is not attainable through a Gaussian copula for marginals ({pa}, {pb})"
        )));
    }
    Ok(r)
}

/// Lower Cholesky factor of the latent correlation matrix for pairwise
/// correlations `(r12, r13, r23)`.
pub fn cholesky3(r: [f64; 3]) -> Result<Matrix3<f64>> {
    let m = Matrix3::new(1.0, r[0], r[1], r[0], 1.0, r[2], r[1], r[2], 1.0);
    m.cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::Design(format!(
            "latent correlations ({:.4}, {:.4}, {:.4}) do not form a positive definite matrix",
            r[0], r[1], r[2]
        ))
    })
}

/// Three binary answers with given marginals and common pairwise correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedBernoulli {
    thresholds: [f64; 3],
    chol: Matrix3<f64>,
    pub latent: [f64; 3],
}

impl CorrelatedBernoulli {
    pub fn new(marginals: [f64; 3], sigma: f64) -> Result<Self> {
        let [p1, p2, p3] = marginals;
        let latent = [
            latent_correlation(p1, p2, sigma)?,
            latent_correlation(p1, p3, sigma)?,
            latent_correlation(p2, p3, sigma)?,
        ];
        Ok(Self { thresholds: marginals.map(norm_ppf), chol: cholesky3(latent)?, latent })
    }

    pub fn with_latent(marginals: [f64; 3], latent: [f64; 3]) -> Result<Self> {
        Ok(Self { thresholds: marginals.map(norm_ppf), chol: cholesky3(latent)?, latent })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> [u8; 3] {
        let u: [f64; 3] = std::array::from_fn(|_| norm_ppf(open_unit(rng)));
        let mut x = [0u8; 3];
        for (j, xj) in x.iter_mut().enumerate() {
            let z: f64 = (0..=j).map(|k| self.chol[(j, k)] * u[k]).sum();
            *xj = u8::from(z <= self.thresholds[j]);
        }
        x
    }
}

/// Uniform draw on the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn latent_correlation_hits_target() {
        for (pa, pb) in [(0.269, 0.731), (0.881, 0.269), (0.5, 0.5), (0.9, 0.75)] {
            for sigma in [0.05, 0.1, 0.2] {
                let r = latent_correlation(pa, pb, sigma).unwrap();
                assert_abs_diff_eq!(binary_correlation(pa, pb, r), sigma, epsilon = 1e-9);
                assert!(r > sigma);
            }
        }
        // Symmetric marginals at 1/2: binary correlation is (2/pi) asin(r).
        let r = latent_correlation(0.5, 0.5, 0.2).unwrap();
        assert_abs_diff_eq!(r, (0.2 * std::f64::consts::PI / 2.0).sin(), epsilon = 1e-9);
    }

    #[test]
    fn infeasible_correlation_names_frechet_bound() {
        let err = latent_correlation(0.05, 0.95, 0.2).unwrap_err();
        assert!(err.to_string().contains("upper Frechet bound"), "{err}");
    }

    #[test]
    fn zero_correlation_is_independent() {
        let c = CorrelatedBernoulli::new([0.3, 0.6, 0.8], 0.0).unwrap();
        assert_eq!(c.latent, [0.0; 3]);
        assert_eq!(c.chol, Matrix3::identity());
    }

    #[test]
    fn copula_preserves_marginals_and_correlation() {
        let marg = [0.269, 0.731, 0.881];
        let c = CorrelatedBernoulli::new(marg, 0.2).unwrap();
        let n = 400_000;
        let mut rng = stream(21, 0);
        let mut sums = [0.0; 3];
        let mut cross = [0.0; 3];
        for _ in 0..n {
            let x = c.sample(&mut rng).map(f64::from);
            for j in 0..3 {
                sums[j] += x[j];
            }
            cross[0] += x[0] * x[1];
            cross[1] += x[0] * x[2];
            cross[2] += x[1] * x[2];
        }
        let m = sums.map(|s| s / n as f64);
        for j in 0..3 {
            let se = (marg[j] * (1.0 - marg[j]) / n as f64).sqrt();
            assert!((m[j] - marg[j]).abs() < 4.0 * se, "marginal {j}: {}", m[j]);
        }
        for (k, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            let cov = cross[k] / n as f64 - m[a] * m[b];
            let corr = cov / (m[a] * (1.0 - m[a]) * m[b] * (1.0 - m[b])).sqrt();
            assert!((corr - 0.2).abs() < 0.01, "pair {k}: {corr}");
        }
    }
}
