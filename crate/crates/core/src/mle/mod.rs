//! Maximum likelihood for three binary answers with a binary latent class when
//! the covariates are continuous.
//!
//! Every probability is a logistic function of a linear index in the
//! covariates: `Pr(X*=1|z) = g(z; rho)` and `Pr(X1=1|X*=k, z) = g(z; alpha_k)`,
//! likewise `beta_k` for `X2` and `gamma_k` for `X3`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mrt::{decompose_closed_form, decompose_extreme, MrtJoint, OrderingQuestion, OrderingRule};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng::stream;
use crate::stats::{logistic, logit};

/// Block order of the flattened parameter vector.
pub const BLOCK_NAMES: [&str; 7] = ["rho", "alpha1", "alpha0", "beta1", "beta0", "gamma1", "gamma0"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleParams {
    /// Whether each index has a constant term ahead of the slopes.
    pub intercept: bool,
    pub rho: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma0: Vec<f64>,
}

impl MleParams {
    /// Coefficients per index.
    pub fn width(&self) -> usize {
        self.rho.len()
    }

    pub fn blocks(&self) -> [&Vec<f64>; 7] {
        [&self.rho, &self.alpha1, &self.alpha0, &self.beta1, &self.beta0, &self.gamma1, &self.gamma0]
    }

    /// Flattened as `(rho, alpha1, alpha0, beta1, beta0, gamma1, gamma0)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn from_vec(intercept: bool, v: &[f64]) -> Result<Self> {
        if v.is_empty() || !v.len().is_multiple_of(7) {
            return domain(format!("parameter vector of length {} is not seven equal blocks", v.len()));
        }
        let w = v.len() / 7;
        let b = |k: usize| v[k * w..(k + 1) * w].to_vec();
        Ok(Self {
            intercept,
            rho: b(0),
            alpha1: b(1),
            alpha0: b(2),
            beta1: b(3),
            beta0: b(4),
            gamma1: b(5),
            gamma0: b(6),
        })
    }

    /// Same likelihood with the latent classes relabeled.
    pub fn swapped(&self) -> Self {
        Self {
            intercept: self.intercept,
            rho: self.rho.iter().map(|v| -v).collect(),
            alpha1: self.alpha0.clone(),
            alpha0: self.alpha1.clone(),
            beta1: self.beta0.clone(),
            beta0: self.beta1.clone(),
            gamma1: self.gamma0.clone(),
            gamma0: self.gamma1.clone(),
        }
    }

    /// Coefficient names matching [`MleParams::to_vec`].
    pub fn names(&self) -> Vec<String> {
        let w = self.width();
        let mut out = Vec::with_capacity(7 * w);
        for block in BLOCK_NAMES {
            for i in 0..w {
                let coef = if self.intercept && i == 0 {
                    "const".to_string()
                } else {
                    format!("z{}", i + 1 - usize::from(self.intercept))
                };
                out.push(if w == 1 { block.to_string() } else { format!("{block}_{coef}") });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousRecord {
    pub x: [u8; 3],
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MrtContinuousSample {
    pub records: Vec<ContinuousRecord>,
}

impl MrtContinuousSample {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.records.first() else {
            return domain("sample is empty");
        };
        let dim = first.z.len();
        for (i, r) in self.records.iter().enumerate() {
            if r.z.len() != dim {
                return domain(format!("record {i}: {} covariates, expected {dim}", r.z.len()));
            }
            if r.z.iter().any(|v| !v.is_finite()) {
                return domain(format!("record {i}: non-finite covariate"));
            }
            if r.x.iter().any(|v| *v > 1) {
                return domain(format!("record {i}: answers must be 0 or 1"));
            }
        }
        Ok(())
    }

    pub fn dim_z(&self) -> usize {
        self.records.first().map_or(0, |r| r.z.len())
    }
}

impl crate::resampling::Resample for MrtContinuousSample {
    fn n_units(&self) -> usize {
        self.records.len()
    }

    fn stratum(&self, _i: usize, _by: crate::resampling::Stratify) -> u64 {
        0
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { records: idx.iter().map(|&i| self.records[i].clone()).collect() }
    }
}

/// Records with their regressor vectors laid out contiguously.
struct Design {
    width: usize,
    v: Vec<f64>,
    x: Vec<[u8; 3]>,
}

impl Design {
    fn new(sample: &MrtContinuousSample, intercept: bool) -> Self {
        let width = sample.dim_z() + usize::from(intercept);
        let mut v = Vec::with_capacity(width * sample.records.len());
        for r in &sample.records {
            if intercept {
                v.push(1.0);
            }
            v.extend_from_slice(&r.z);
        }
        Self { width, v, x: sample.records.iter().map(|r| r.x).collect() }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.width..(i + 1) * self.width]
    }

    /// Log-likelihood and, when `grad` is given, its gradient accumulated into it.
    fn eval(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let w = self.width;
        let mut total = 0.0;
        for i in 0..self.n() {
            let v = self.row(i);
            let x = self.x[i];
            // Block 0 is the class index; blocks 1..=6 alternate class 1 / class 0
            // for the three questions.
            let mut links = [Link::default(); 7];
            for (b, link) in links.iter_mut().enumerate() {
                let s: f64 = theta[b * w..(b + 1) * w].iter().zip(v).map(|(a, b)| a * b).sum();
                *link = Link::new(s);
            }
            let lp = |b: usize, m: usize| if x[m] == 1 { links[b].log_p } else { links[b].log_q };
            let l1 = links[0].log_p + lp(1, 0) + lp(3, 1) + lp(5, 2);
            let l0 = links[0].log_q + lp(2, 0) + lp(4, 1) + lp(6, 2);
            // log(e^l1 + e^l0) and the posterior weight of class 1 from one exponential.
            let e = (-(l1 - l0).abs()).exp();
            let li = l1.max(l0) + e.ln_1p();
            total += li;
            if let Some(g) = grad.as_deref_mut() {
                let w1 = if l1 >= l0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let w0 = 1.0 - w1;
                let mut add = |b: usize, c: f64| {
                    for (gj, vj) in g[b * w..(b + 1) * w].iter_mut().zip(v) {
                        *gj += c * vj;
                    }
                };
                add(0, w1 - links[0].p);
                for m in 0..3 {
                    let xm = x[m] as f64;
                    add(1 + 2 * m, w1 * (xm - links[1 + 2 * m].p));
                    add(2 + 2 * m, w0 * (xm - links[2 + 2 * m].p));
                }
            }
        }
        total
    }
}

/// Logistic probability of an index with both log-probabilities, sharing one
/// exponential and one logarithm.
#[derive(Debug, Clone, Copy, Default)]
struct Link {
    p: f64,
    log_p: f64,
    log_q: f64,
}

impl Link {
    fn new(s: f64) -> Self {
        let e = (-s.abs()).exp();
        let l = e.ln_1p();
        Self {
            p: if s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) },
            log_p: s.min(0.0) - l,
            log_q: -s.max(0.0) - l,
        }
    }
}

fn check_dims(params: &MleParams, sample: &MrtContinuousSample) -> Result<()> {
    let expected = sample.dim_z() + usize::from(params.intercept);
    if params.blocks().iter().any(|b| b.len() != expected) {
        return domain(format!("every coefficient block needs {expected} entries"));
    }
    Ok(())
}

/// Sample log-likelihood, stabilized by log-sum-exp over the two classes.
pub fn log_likelihood(params: &MleParams, sample: &MrtContinuousSample) -> Result<f64> {
    sample.validate()?;
    check_dims(params, sample)?;
    Ok(Design::new(sample, params.intercept).eval(&params.to_vec(), None))
}

/// Analytic gradient of [`log_likelihood`] in the order of [`MleParams::to_vec`].
pub fn log_likelihood_gradient(params: &MleParams, sample: &MrtContinuousSample) -> Result<Vec<f64>> {
    sample.validate()?;
    check_dims(params, sample)?;
    let theta = params.to_vec();
    let mut g = vec![0.0; theta.len()];
    Design::new(sample, params.intercept).eval(&theta, Some(&mut g));
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Whether each index carries a constant term.
    pub intercept: bool,
    /// Lattice starts; the first six are fixed, further ones are drawn from `seed`.
    pub starts: usize,
    /// Add a start built from closed-form estimates on covariate terciles.
    pub warm_start: bool,
    /// Caller-supplied starting points, tried in addition to the others.
    pub extra_starts: Vec<MleParams>,
    pub ordering: OrderingRule,
    pub seed: u64,
    /// Compute standard errors from the observed information.
    pub standard_errors: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            intercept: true,
            starts: 6,
            warm_start: true,
            extra_starts: Vec::new(),
            ordering: OrderingRule::default(),
            seed: 0,
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub params: MleParams,
    pub loglik: f64,
    pub converged: bool,
    /// `None` when the observed information is not positive definite.
    pub se: Option<Vec<f64>>,
    /// Fewer than 100 records.
    pub small_sample: bool,
    pub starts_tried: usize,
    pub starts_converged: usize,
}

fn lattice_start(width: usize, k: usize) -> Vec<f64> {
    const SEPARATIONS: [f64; 3] = [0.5, 1.5, 3.0];
    const CLASS_SHIFT: [f64; 2] = [-0.5, 0.5];
    let sep = SEPARATIONS[k % 3];
    let r = CLASS_SHIFT[(k / 3) % 2];
    let mut theta = vec![0.0; 7 * width];
    theta[0] = r;
    for m in 0..3 {
        theta[(1 + 2 * m) * width] = sep;
        theta[(2 + 2 * m) * width] = -sep;
    }
    theta
}

fn random_start<R: Rng>(rng: &mut R, width: usize) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..7 * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    for m in 0..3 {
        let sep = rng.random_range(0.5..3.0);
        theta[(1 + 2 * m) * width] += sep;
        theta[(2 + 2 * m) * width] -= sep;
    }
    theta
}

/// Start from closed-form decompositions on terciles of the first covariate,
/// with each link fitted to the three per-bin probabilities by least squares on
/// the logit scale.
fn tercile_start(sample: &MrtContinuousSample, intercept: bool, ordering: OrderingRule) -> Option<Vec<f64>> {
    let dim = sample.dim_z();
    if dim == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..sample.records.len()).collect();
    order.sort_by(|&a, &b| sample.records[a].z[0].total_cmp(&sample.records[b].z[0]));
    let n = order.len();
    let mut centers = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for b in 0..3 {
        let idx = &order[b * n / 3..(b + 1) * n / 3];
        if idx.len() < 30 {
            return None;
        }
        let joint = MrtJoint::from_patterns(b as i64, idx.iter().map(|&i| sample.records[i].x));
        let est = decompose_closed_form(&joint, 1, ordering)
            .or_else(|_| decompose_extreme(&joint, 1, ordering))
            .ok()?;
        centers.push(crate::stats::median(&idx.iter().map(|&i| sample.records[i].z[0]).collect::<Vec<_>>()));
        rows.push(est.to_vec());
    }
    let width = dim + usize::from(intercept);
    let design = DMatrix::from_fn(3, if intercept { 2 } else { 1 }, |r, c| {
        if intercept && c == 0 {
            1.0
        } else {
            centers[r]
        }
    });
    let solver = (design.transpose() * &design).try_inverse()? * design.transpose();
    // to_vec order is (pi, x1|0, x1|1, x2|0, x2|1, x3|0, x3|1); blocks are (rho, a1, a0, b1, b0, g1, g0).
    let source = [0, 2, 1, 4, 3, 6, 5];
    let mut theta = vec![0.0; 7 * width];
    for (block, &col) in source.iter().enumerate() {
        let y = DVector::from_iterator(3, rows.iter().map(|r| logit(r[col].clamp(0.02, 0.98))));
        let coef = &solver * y;
        for (c, v) in coef.iter().enumerate() {
            theta[block * width + c] = *v;
        }
    }
    Some(theta)
}

/// Observed-information standard errors from central differences of the
/// analytic gradient.
fn standard_errors(design: &Design, theta: &[f64]) -> Option<Vec<f64>> {
    let k = theta.len();
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = 1e-5 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += step;
        dn[j] -= step;
        let mut gu = vec![0.0; k];
        let mut gd = vec![0.0; k];
        design.eval(&up, Some(&mut gu));
        design.eval(&dn, Some(&mut gd));
        for i in 0..k {
            h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
        }
    }
    let info = -(&h + h.transpose()) * 0.5;
    let cov = info.cholesky()?.inverse();
    let se: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
    se.iter().all(|v| v.is_finite()).then_some(se)
}

fn ordering_violated(design: &Design, theta: &[f64], ordering: OrderingRule) -> bool {
    let w = design.width;
    let (b1, b0) = match ordering.question {
        OrderingQuestion::X1 => (1, 2),
        OrderingQuestion::X2 => (3, 4),
    };
    let mean_prob = |b: usize| -> f64 {
        let s: f64 = (0..design.n())
            .map(|i| logistic(theta[b * w..(b + 1) * w].iter().zip(design.row(i)).map(|(a, v)| a * v).sum()))
            .sum();
        s / design.n() as f64
    };
    let (p1, p0) = (mean_prob(b1), mean_prob(b0));
    if ordering.class1_higher {
        p1 < p0
    } else {
        p1 > p0
    }
}

/// Fits the model by BFGS from several deterministic starts and keeps the
/// highest likelihood. Class labels are fixed afterwards by the ordering rule.
pub fn mle_fit(sample: &MrtContinuousSample, options: &MleOptions) -> Result<MleFit> {
    sample.validate()?;
    let design = Design::new(sample, options.intercept);
    let width = design.width;
    if width == 0 {
        return domain("model needs an intercept or at least one covariate");
    }
    let n = design.n() as f64;

    let mut starts: Vec<Vec<f64>> = (0..options.starts.min(6)).map(|k| lattice_start(width, k)).collect();
    let mut rng = stream(options.seed, 0);
    for _ in 6..options.starts {
        starts.push(random_start(&mut rng, width));
    }
    if options.warm_start {
        if let Some(t) = tercile_start(sample, options.intercept, options.ordering) {
            starts.push(t);
        }
    }
    for p in &options.extra_starts {
        if p.intercept != options.intercept || p.width() != width {
            return domain("supplied start has the wrong shape");
        }
        starts.push(p.to_vec());
    }
    if starts.is_empty() {
        return domain("no starting points");
    }

    let bopts = BfgsOptions { max_iter: 1000, ftol: 1e-9, gtol: 1e-6 };
    let runs: Vec<_> = starts
        .par_iter()
        .map(|s| {
            bfgs(
                |t: &[f64]| {
                    let mut g = vec![0.0; t.len()];
                    let f = design.eval(t, Some(&mut g));
                    // Minimize the average negative log-likelihood.
                    (-f / n, g.iter().map(|v| -v / n).collect())
                },
                s,
                &bopts,
            )
        })
        .collect();
    let starts_converged = runs.iter().filter(|m| m.converged && m.f.is_finite()).count();
    let best = runs
        .iter()
        .filter(|m| m.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| Error::Estimation("likelihood was not finite from any start".into()))?;
    if starts_converged == 0 {
        return Err(Error::Estimation(format!(
            "no start converged ({} tried, best average log-likelihood {:.6})",
            starts.len(),
            -best.f
        )));
    }
    let mut params = MleParams::from_vec(options.intercept, &best.x)?;
    if ordering_violated(&design, &best.x, options.ordering) {
        params = params.swapped();
    }
    let theta = params.to_vec();
    let loglik = design.eval(&theta, None);
    let se = if options.standard_errors { standard_errors(&design, &theta) } else { None };
    Ok(MleFit {
        params,
        loglik,
        converged: best.converged,
        se,
        small_sample: design.n() < 100,
        starts_tried: starts.len(),
        starts_converged,
    })
}

/// Draws a sample from the model at `params` with covariates from `draw_z`.
pub fn simulate_continuous<F>(params: &MleParams, n: usize, seed: u64, draw_z: F) -> MrtContinuousSample
where
    F: Fn(&mut crate::rng::SimRng) -> Vec<f64> + Sync,
{
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let z = draw_z(&mut rng);
            let mut v = Vec::with_capacity(z.len() + 1);
            if params.intercept {
                v.push(1.0);
            }
            v.extend_from_slice(&z);
            let g = |b: &[f64]| logistic(b.iter().zip(&v).map(|(a, x)| a * x).sum());
            let k = rng.random::<f64>() < g(&params.rho);
            let blocks = if k {
                [&params.alpha1, &params.beta1, &params.gamma1]
            } else {
                [&params.alpha0, &params.beta0, &params.gamma0]
            };
            let mut x = [0u8; 3];
            for (xm, b) in x.iter_mut().zip(blocks) {
                *xm = u8::from(rng.random::<f64>() < g(b));
            }
            ContinuousRecord { x, z }
        })
        .collect();
    MrtContinuousSample { records }
}
