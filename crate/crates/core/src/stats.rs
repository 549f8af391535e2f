//! Small numerical helpers: distribution functions, quantiles, logistic link.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_ppf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Upper-tail probability of a chi-square variable with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    dist.sf(x).clamp(0.0, 1.0)
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    1.0 - chi2_sf(x, dof)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if order == 1 { x } else { p1 };
            let pn1 = if order == 1 { 1.0 } else { p0 };
            dp = order as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(16))
}

/// P(Z1 <= a, Z2 <= b) for a standard bivariate normal with correlation `rho`.
///
/// Integrates the density along the correlation path from 0 to `rho`
/// (Plackett's identity) after the substitution t = sin(theta), which removes
/// the 1/sqrt(1 - t^2) factor. Accurate to ~1e-13 for |rho| <= 0.999.
pub fn bvn_cdf(a: f64, b: f64, rho: f64) -> f64 {
    let base = norm_cdf(a) * norm_cdf(b);
    if rho == 0.0 || !a.is_finite() || !b.is_finite() {
        return base;
    }
    let upper = rho.clamp(-0.999_999, 0.999_999).asin();
    let (nodes, weights) = gl16();
    let panels = 8;
    let width = upper / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = p as f64 * width;
        for (x, w) in nodes.iter().zip(weights) {
            let theta = lo + 0.5 * width * (x + 1.0);
            let (s, c) = theta.sin_cos();
            let expo = -(a * a - 2.0 * a * b * s + b * b) / (2.0 * c * c);
            acc += 0.5 * width * w * expo.exp();
        }
    }
    (base + acc / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Linear-interpolation quantile (type 7) of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sd(xs: &[f64]) -> f64 {
    // Constant input has exactly zero spread, whatever the rounding in the mean.
    if xs.len() < 2 || xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn bvn_matches_orthant_identity() {
        // P(Z1<=0, Z2<=0) = 1/4 + asin(r)/(2 pi).
        for r in [-0.9, -0.5, -0.3, 0.2, 0.5, 0.7, 0.95] {
            let expect = 0.25 + f64::asin(r) / (2.0 * PI);
            assert_abs_diff_eq!(bvn_cdf(0.0, 0.0, r), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn bvn_symmetry_and_limits() {
        let v = bvn_cdf(0.4, -0.7, 0.35);
        assert_abs_diff_eq!(v, bvn_cdf(-0.7, 0.4, 0.35), epsilon = 1e-14);
        // P(Z1<=a, Z2<=b) + P(Z1<=a, Z2>b) = Phi(a)
        let comp = norm_cdf(0.4) - bvn_cdf(0.4, -0.7, 0.35);
        let flipped = bvn_cdf(0.4, 0.7, -0.35);
        assert_abs_diff_eq!(comp, flipped, epsilon = 1e-12);
    }

    #[test]
    fn quantiles_and_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_abs_diff_eq!(sd(&xs), (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn logistic_helpers_are_stable() {
        assert_abs_diff_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!(softplus(800.0).is_finite());
        assert_abs_diff_eq!(softplus(-800.0), 0.0);
        assert_abs_diff_eq!(logit(logistic(1.3)), 1.3, epsilon = 1e-12);
    }

    #[test]
    fn chi2_tail() {
        assert_abs_diff_eq!(chi2_sf(5.991464547107979, 2), 0.05, epsilon = 1e-10);
        assert_eq!(chi2_sf(0.0, 3), 1.0);
    }
}
