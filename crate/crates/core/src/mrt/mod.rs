//! Recovery of a binary latent trait from three conditionally independent
//! binary answers within a discrete covariate cell.
//!
//! With `M13[i][j] = Pr(X1=i, X3=j)` and `M123[i][j] = Pr(X1=i, X2=x2, X3=j)`,
//! conditional independence gives `M123 * M13^-1 = M1 * D * M1^-1`, where the
//! columns of `M1` are `Pr(X1 | X* = k)` and `D` holds `Pr(X2 = x2 | X* = k)`.
//! An eigendecomposition of the left side therefore reveals the latent
//! structure up to the labeling of the two classes, which an ordering rule pins.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::optim::{nelder_mead_box, NelderMeadOptions};
use crate::resampling::{Resample, Stratify};
use crate::rng::stream;

/// Counts of the eight answer patterns in one covariate cell, indexed
/// `counts[x1][x2][x3]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrtJoint {
    pub z_cell: i64,
    pub counts: [[[u64; 2]; 2]; 2],
    pub n_cell: u64,
}

impl MrtJoint {
    pub fn new(z_cell: i64, counts: [[[u64; 2]; 2]; 2]) -> Self {
        let n_cell = counts.iter().flatten().flatten().sum();
        Self { z_cell, counts, n_cell }
    }

    pub fn from_patterns(z_cell: i64, patterns: impl IntoIterator<Item = [u8; 3]>) -> Self {
        let mut counts = [[[0u64; 2]; 2]; 2];
        for [a, b, c] in patterns {
            counts[a as usize][b as usize][c as usize] += 1;
        }
        Self::new(z_cell, counts)
    }

    pub fn probs(&self) -> Result<JointProbs> {
        if self.n_cell == 0 {
            return domain(format!("cell {} has no observations", self.z_cell));
        }
        let n = self.n_cell as f64;
        let mut p = [[[0.0; 2]; 2]; 2];
        for (a, b, c) in patterns() {
            p[a][b][c] = self.counts[a][b][c] as f64 / n;
        }
        Ok(JointProbs(p))
    }
}

impl Resample for MrtJoint {
    fn n_units(&self) -> usize {
        self.n_cell as usize
    }

    fn stratum(&self, _i: usize, _by: Stratify) -> u64 {
        0
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut counts = [[[0u64; 2]; 2]; 2];
        // Units are laid out pattern by pattern, so a cumulative table maps them back.
        let mut bounds = Vec::with_capacity(8);
        let mut acc = 0;
        for (a, b, c) in patterns() {
            acc += self.counts[a][b][c];
            bounds.push((acc, (a, b, c)));
        }
        for &i in idx {
            let i = i as u64;
            let pos = bounds.partition_point(|(hi, _)| *hi <= i);
            let (a, b, c) = bounds[pos].1;
            counts[a][b][c] += 1;
        }
        Self::new(self.z_cell, counts)
    }
}

fn patterns() -> impl Iterator<Item = (usize, usize, usize)> {
    (0..8).map(|k| (k >> 2 & 1, k >> 1 & 1, k & 1))
}

/// Joint pattern probabilities, indexed `[x1][x2][x3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProbs(pub [[[f64; 2]; 2]; 2]);

/// Latent-class parameters of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    /// `Pr(X* = 1)`.
    pub pr_xstar: f64,
    /// `cond[j][k] = Pr(X_{j+1} = 1 | X* = k)`.
    pub cond: [[f64; 2]; 3],
}

impl LatentParams {
    /// Joint distribution of the three answers implied by the mixture.
    pub fn joint(&self) -> JointProbs {
        let mut p = [[[0.0; 2]; 2]; 2];
        let weights = [1.0 - self.pr_xstar, self.pr_xstar];
        for (a, b, c) in patterns() {
            let mut total = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let f = |j: usize, x: usize| if x == 1 { self.cond[j][k] } else { 1.0 - self.cond[j][k] };
                total += w * f(0, a) * f(1, b) * f(2, c);
            }
            p[a][b][c] = total;
        }
        JointProbs(p)
    }

    /// Same distribution with the class labels exchanged.
    pub fn swapped(&self) -> Self {
        let mut cond = self.cond;
        for row in cond.iter_mut() {
            row.swap(0, 1);
        }
        Self { pr_xstar: 1.0 - self.pr_xstar, cond }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrtMatrices {
    pub m_x1x2x3: Matrix2<f64>,
    pub m_x1x3: Matrix2<f64>,
    pub m_x1: Vector2<f64>,
}

fn check_fix(x2_fix: u8) -> Result<()> {
    if x2_fix > 1 {
        return domain("x2_fix must be 0 or 1");
    }
    Ok(())
}

pub fn build_matrices_probs(p: &JointProbs, x2_fix: u8) -> Result<MrtMatrices> {
    check_fix(x2_fix)?;
    let p = &p.0;
    let x2 = x2_fix as usize;
    let m_x1x2x3 = Matrix2::from_fn(|i, j| p[i][x2][j]);
    let m_x1x3 = Matrix2::from_fn(|i, j| p[i][0][j] + p[i][1][j]);
    let m_x1 = Vector2::new(m_x1x3.row(0).sum(), m_x1x3.row(1).sum());
    Ok(MrtMatrices { m_x1x2x3, m_x1x3, m_x1 })
}

/// Relative-frequency matrices of a cell with `X2` held at `x2_fix`.
pub fn build_matrices(joint: &MrtJoint, x2_fix: u8) -> Result<MrtMatrices> {
    build_matrices_probs(&joint.probs()?, x2_fix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderingQuestion {
    X1,
    X2,
}

/// Known direction separating the latent classes on one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingRule {
    pub question: OrderingQuestion,
    /// Class `X* = 1` answers yes more often than class `X* = 0`.
    pub class1_higher: bool,
}

impl Default for OrderingRule {
    fn default() -> Self {
        Self { question: OrderingQuestion::X1, class1_higher: true }
    }
}

impl OrderingRule {
    pub fn flipped(self) -> Self {
        Self { class1_higher: !self.class1_higher, ..self }
    }

    /// Parses `x1-higher`, `x1-lower`, `x2-higher` or `x2-lower`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        let (q, dir) = s.split_once('-')?;
        let question = match q {
            "x1" => OrderingQuestion::X1,
            "x2" => OrderingQuestion::X2,
            _ => return None,
        };
        let class1_higher = match dir {
            "higher" => true,
            "lower" => false,
            _ => return None,
        };
        Some(Self { question, class1_higher })
    }

    pub fn name(&self) -> String {
        let q = match self.question {
            OrderingQuestion::X1 => "x1",
            OrderingQuestion::X2 => "x2",
        };
        format!("{q}-{}", if self.class1_higher { "higher" } else { "lower" })
    }

    /// Whether `(class0, class1)` values of the ordered question satisfy the rule.
    fn holds(&self, class0: f64, class1: f64) -> bool {
        if self.class1_higher {
            class1 > class0
        } else {
            class1 < class0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MrtMethod {
    ClosedForm,
    Extreme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrtEstimate {
    pub pr_xstar: f64,
    /// `pr_x_given_xstar[j][k] = Pr(X_{j+1} = 1 | X* = k)`.
    pub pr_x_given_xstar: [[f64; 2]; 3],
    pub method: MrtMethod,
    pub clipped: bool,
    pub eigen_gap: f64,
}

impl MrtEstimate {
    pub fn latent(&self) -> LatentParams {
        LatentParams { pr_xstar: self.pr_xstar, cond: self.pr_x_given_xstar }
    }

    /// Parameters in a fixed order: `Pr(X*=1)`, then `Pr(Xj=1|X*=0)`,
    /// `Pr(Xj=1|X*=1)` for `j = 1, 2, 3`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.pr_xstar];
        for row in &self.pr_x_given_xstar {
            v.extend_from_slice(row);
        }
        v
    }
}

/// Names matching [`MrtEstimate::to_vec`].
pub const ESTIMATE_NAMES: [&str; 7] = [
    "pr_xstar",
    "pr_x1_given_xstar0",
    "pr_x1_given_xstar1",
    "pr_x2_given_xstar0",
    "pr_x2_given_xstar1",
    "pr_x3_given_xstar0",
    "pr_x3_given_xstar1",
];

const COMPLEX_TOL: f64 = 1e-10;
const GAP_TOL: f64 = 1e-8;
const CLASS_FLOOR: f64 = 1e-4;
const CLIP_SLACK: f64 = 0.02;

/// Clamps to `[0, 1]`, tolerating a small excursion and failing beyond it.
fn clip(value: f64, what: &str, clipped: &mut bool) -> Result<f64> {
    if !value.is_finite() || !(-CLIP_SLACK..=1.0 + CLIP_SLACK).contains(&value) {
        return Err(Error::Estimation(format!(
            "{what} = {value} lies outside [0, 1] beyond the clipping slack; use the extreme estimator"
        )));
    }
    if !(0.0..=1.0).contains(&value) {
        *clipped = true;
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Recovers `Pr(X*)` and `Pr(X3 | X*)` given the first-question matrix `m1`
/// (columns `Pr(X1 | X* = k)`). Values are returned unclipped.
fn recover_rest(mats: &MrtMatrices, m1: &Matrix2<f64>) -> Result<(Vector2<f64>, [f64; 2])> {
    let inv = m1
        .try_inverse()
        .ok_or_else(|| Error::Estimation("Pr(X1 | X*) matrix is singular".into()))?;
    let pi = inv * mats.m_x1;
    if pi.iter().any(|p| *p < CLASS_FLOOR) {
        return Err(Error::Estimation(format!(
            "estimated latent class share {:.3e} is below {CLASS_FLOOR}",
            pi.min()
        )));
    }
    // Rows k of inv * M13 hold Pr(X* = k, X3 = j).
    let x3 = inv * mats.m_x1x3;
    Ok((pi, [x3[(0, 1)] / pi[0], x3[(1, 1)] / pi[1]]))
}

/// Closed-form decomposition from exact or estimated pattern probabilities.
pub fn decompose_closed_form_probs(p: &JointProbs, x2_fix: u8, ordering: OrderingRule) -> Result<MrtEstimate> {
    let mats = build_matrices_probs(p, x2_fix)?;
    let inv13 = mats
        .m_x1x3
        .try_inverse()
        .filter(|_| mats.m_x1x3.determinant().abs() > 1e-14)
        .ok_or_else(|| Error::Identification("Pr(X1, X3) matrix is singular".into()))?;
    let a = mats.m_x1x2x3 * inv13;
    let half_tr = a.trace() / 2.0;
    let disc = half_tr * half_tr - a.determinant();
    if disc < -COMPLEX_TOL {
        return Err(Error::ComplexEigenvalues { discriminant: disc });
    }
    if disc < 0.0 {
        return Err(Error::NearDegenerate { gap: 0.0 });
    }
    let root = disc.sqrt();
    let gap = 2.0 * root;
    if gap < GAP_TOL {
        return Err(Error::NearDegenerate { gap });
    }
    let eigvals = [half_tr - root, half_tr + root];
    let mut vecs = [Vector2::zeros(); 2];
    for (v, lam) in vecs.iter_mut().zip(eigvals) {
        let c1 = Vector2::new(a[(0, 1)], lam - a[(0, 0)]);
        let c2 = Vector2::new(lam - a[(1, 1)], a[(1, 0)]);
        let raw = if c1.norm() >= c2.norm() { c1 } else { c2 };
        let s = raw.sum();
        if s.abs() < 1e-12 {
            return Err(Error::Estimation("eigenvector cannot be normalized to a distribution".into()));
        }
        *v = raw / s;
    }
    // Pr(X2 = 1 | class) for each eigenpair.
    let x2_yes = |lam: f64| if x2_fix == 1 { lam } else { 1.0 - lam };
    let key = |i: usize| match ordering.question {
        OrderingQuestion::X1 => vecs[i][1],
        OrderingQuestion::X2 => x2_yes(eigvals[i]),
    };
    let (c0, c1) = if ordering.holds(key(0), key(1)) { (0, 1) } else { (1, 0) };
    let m1 = Matrix2::from_columns(&[vecs[c0], vecs[c1]]);
    let (pi, x3) = recover_rest(&mats, &m1)?;

    let mut clipped = false;
    let pr_xstar = clip(pi[1], "Pr(X*=1)", &mut clipped)?;
    let mut cond = [[0.0; 2]; 3];
    for (k, c) in [c0, c1].into_iter().enumerate() {
        cond[0][k] = clip(vecs[c][1], "Pr(X1=1|X*)", &mut clipped)?;
        cond[1][k] = clip(x2_yes(eigvals[c]), "Pr(X2=1|X*)", &mut clipped)?;
        cond[2][k] = clip(x3[k], "Pr(X3=1|X*)", &mut clipped)?;
    }
    Ok(MrtEstimate {
        pr_xstar,
        pr_x_given_xstar: cond,
        method: MrtMethod::ClosedForm,
        clipped,
        eigen_gap: gap,
    })
}

/// Closed-form decomposition of a cell.
pub fn decompose_closed_form(joint: &MrtJoint, x2_fix: u8, ordering: OrderingRule) -> Result<MrtEstimate> {
    decompose_closed_form_probs(&joint.probs()?, x2_fix, ordering)
}

const SEPARATION: f64 = 1e-6;
const CONSTRAINT_WEIGHT: f64 = 1e6;

/// Squared Frobenius distance between `a_hat` and `M D M^-1` for
/// `x = (p10, p11, p20, p21)` with `p1k = Pr(X1=1|X*=k)` and
/// `p2k = Pr(X2=x2_fix|X*=k)`.
pub fn extreme_objective(a_hat: &Matrix2<f64>, x: &[f64]) -> f64 {
    let m = Matrix2::new(1.0 - x[0], 1.0 - x[1], x[0], x[1]);
    let Some(inv) = m.try_inverse() else {
        return f64::INFINITY;
    };
    let d = Matrix2::new(x[2], 0.0, 0.0, x[3]);
    (a_hat - m * d * inv).norm_squared()
}

fn constraint_violation(x: &[f64], x2_fix: u8, ordering: OrderingRule) -> f64 {
    let sep = |lo: f64, hi: f64| (lo + SEPARATION - hi).max(0.0);
    let x2_yes = |v: f64| if x2_fix == 1 { v } else { 1.0 - v };
    let mut v = (SEPARATION - (x[2] - x[3]).abs()).max(0.0);
    v += (SEPARATION - (x[0] - x[1]).abs()).max(0.0);
    let (a0, a1) = match ordering.question {
        OrderingQuestion::X1 => (x[0], x[1]),
        OrderingQuestion::X2 => (x2_yes(x[2]), x2_yes(x[3])),
    };
    v += if ordering.class1_higher { sep(a0, a1) } else { sep(a1, a0) };
    v
}

fn extreme_starts(ordering: OrderingRule, x2_fix: u8) -> Vec<Vec<f64>> {
    // Ordered question: class values (low, high) on a 2 x 2 grid; the other
    // question: four spreads in either direction.
    let ordered: Vec<(f64, f64)> =
        [(0.15, 0.65), (0.15, 0.85), (0.35, 0.65), (0.35, 0.85)].to_vec();
    let free: [(f64, f64); 4] = [(0.25, 0.75), (0.75, 0.25), (0.4, 0.6), (0.6, 0.4)];
    let mut out = Vec::with_capacity(16);
    for &(lo, hi) in &ordered {
        let (o0, o1) = if ordering.class1_higher { (lo, hi) } else { (hi, lo) };
        for &(f0, f1) in &free {
            out.push(match ordering.question {
                OrderingQuestion::X1 => vec![o0, o1, f0, f1],
                OrderingQuestion::X2 => {
                    let back = |v: f64| if x2_fix == 1 { v } else { 1.0 - v };
                    vec![f0, f1, back(o0), back(o1)]
                }
            });
        }
    }
    out
}

/// Constrained minimum-distance decomposition keeping every probability in `[0, 1]`.
pub fn decompose_extreme_probs(p: &JointProbs, x2_fix: u8, ordering: OrderingRule) -> Result<MrtEstimate> {
    let mats = build_matrices_probs(p, x2_fix)?;
    if mats.m_x1x3.determinant().abs() <= 1e-14 {
        return Err(Error::Identification("Pr(X1, X3) matrix is singular".into()));
    }
    let a_hat = mats.m_x1x2x3 * mats.m_x1x3.try_inverse().unwrap();
    let objective = |x: &[f64]| {
        extreme_objective(&a_hat, x) + CONSTRAINT_WEIGHT * constraint_violation(x, x2_fix, ordering).powi(2)
    };

    let mut starts = extreme_starts(ordering, x2_fix);
    if let Ok(cf) = decompose_closed_form_probs(p, x2_fix, ordering) {
        let x2 = |k: usize| {
            let v = cf.pr_x_given_xstar[1][k];
            if x2_fix == 1 { v } else { 1.0 - v }
        };
        starts.push(vec![cf.pr_x_given_xstar[0][0], cf.pr_x_given_xstar[0][1], x2(0), x2(1)]);
    }
    let opts = NelderMeadOptions { ftol: 1e-15, xtol: 1e-11, initial_step: 0.1, ..Default::default() };
    let lower = [0.0; 4];
    let upper = [1.0; 4];
    let runs: Vec<_> = starts
        .par_iter()
        .map(|s| nelder_mead_box(objective, s, &lower, &upper, &opts))
        .collect();
    let best = runs
        .into_iter()
        .filter(|m| m.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| Error::Estimation("extreme estimator failed from every start".into()))?;
    let x = &best.x;
    if constraint_violation(x, x2_fix, ordering) > 1e-9 {
        return Err(Error::Estimation(format!(
            "extreme estimator ended outside the constraint set (objective {:.3e})",
            best.f
        )));
    }

    let m1 = Matrix2::new(1.0 - x[0], 1.0 - x[1], x[0], x[1]);
    let (pi, x3) = recover_rest(&mats, &m1)?;
    let mut clipped = false;
    let mut clamp = |v: f64| {
        if !(0.0..=1.0).contains(&v) {
            clipped = true;
        }
        v.clamp(0.0, 1.0)
    };
    let x2_yes = |v: f64| if x2_fix == 1 { v } else { 1.0 - v };
    let pr_xstar = clamp(pi[1]);
    let cond = [[x[0], x[1]], [x2_yes(x[2]), x2_yes(x[3])], [clamp(x3[0]), clamp(x3[1])]];
    Ok(MrtEstimate {
        pr_xstar,
        pr_x_given_xstar: cond,
        method: MrtMethod::Extreme,
        clipped,
        eigen_gap: (x[2] - x[3]).abs(),
    })
}

/// Constrained minimum-distance decomposition of a cell.
pub fn decompose_extreme(joint: &MrtJoint, x2_fix: u8, ordering: OrderingRule) -> Result<MrtEstimate> {
    decompose_extreme_probs(&joint.probs()?, x2_fix, ordering)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    /// `n * det(M13)^2`.
    pub statistic: f64,
    pub p_value: f64,
    pub reject_rank1: bool,
    /// Fewer than 30 observations, or a degenerate margin.
    pub underpowered: bool,
}

fn det13(counts: &[[u64; 2]; 2], n: f64) -> f64 {
    let p = |i: usize, j: usize| counts[i][j] as f64 / n;
    p(0, 0) * p(1, 1) - p(0, 1) * p(1, 0)
}

/// Bootstrap test of `rank(M13) = 1` against full rank.
///
/// The null distribution of `n * det^2` is simulated from the closest rank-one
/// table, the outer product of the estimated margins of `X1` and `X3`.
pub fn rank_test(joint: &MrtJoint, n_boot: usize, seed: u64) -> Result<RankTestResult> {
    if joint.n_cell == 0 {
        return domain(format!("cell {} has no observations", joint.z_cell));
    }
    if n_boot == 0 {
        return domain("rank test needs at least one bootstrap draw");
    }
    let n = joint.n_cell as f64;
    let mut m13 = [[0u64; 2]; 2];
    for (a, b, c) in patterns() {
        m13[a][c] += joint.counts[a][b][c];
    }
    let det = det13(&m13, n);
    let statistic = n * det * det;
    let r1 = (m13[1][0] + m13[1][1]) as f64 / n;
    let c1 = (m13[0][1] + m13[1][1]) as f64 / n;
    let degenerate = [r1, c1].iter().any(|m| *m <= 0.0 || *m >= 1.0);
    if degenerate {
        return Ok(RankTestResult { statistic, p_value: 1.0, reject_rank1: false, underpowered: true });
    }
    let exceed = (0..n_boot)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = stream(seed, b as u64);
            let mut t = [[0u64; 2]; 2];
            for _ in 0..joint.n_cell {
                let i = usize::from(rng.random::<f64>() < r1);
                let j = usize::from(rng.random::<f64>() < c1);
                t[i][j] += 1;
            }
            let d = det13(&t, n);
            n * d * d >= statistic
        })
        .count();
    let p_value = (1 + exceed) as f64 / (n_boot + 1) as f64;
    Ok(RankTestResult {
        statistic,
        p_value,
        reject_rank1: p_value < 0.05,
        underpowered: joint.n_cell < 30,
    })
}

/// `sum_z w(z) Pr(X* = 1 | z)`.
pub fn aggregate_unconditional(estimates: &[(MrtEstimate, f64)]) -> Result<f64> {
    if estimates.is_empty() {
        return domain("no cells to aggregate");
    }
    let total: f64 = estimates.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-12 || estimates.iter().any(|(_, w)| *w < 0.0) {
        return domain(format!("cell weights sum to {total}, not 1"));
    }
    Ok(estimates.iter().map(|(e, w)| w * e.pr_xstar).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisreportRates {
    /// Share of trait holders whose direct answer misreports.
    pub q1: f64,
    /// Share of non-holders whose direct answer misreports.
    pub q0: f64,
}

/// Misreporting rates on direct question `question` (1, 2 or 3).
///
/// `affirmative_is_truth_for` names the class for which a yes answer is
/// truthful: with 0 (e.g. "are you heterosexual?" and `X* = 1` the minority
/// trait), `q1 = Pr(Xj=1|X*=1)` and `q0 = 1 - Pr(Xj=1|X*=0)`.
pub fn misreport_rates(estimate: &MrtEstimate, question: usize, affirmative_is_truth_for: u8) -> Result<MisreportRates> {
    if !(1..=3).contains(&question) {
        return domain(format!("question index {question} outside 1..=3"));
    }
    let [p0, p1] = estimate.pr_x_given_xstar[question - 1];
    match affirmative_is_truth_for {
        0 => Ok(MisreportRates { q1: p1, q0: 1.0 - p0 }),
        1 => Ok(MisreportRates { q1: 1.0 - p1, q0: p0 }),
        other => domain(format!("affirmative_is_truth_for must be 0 or 1, got {other}")),
    }
}

/// One respondent's three answers and covariate cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrtRecord {
    pub x: [u8; 3],
    pub cell: i64,
}

/// Respondent-level data with discrete cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MrtDiscreteSample {
    pub records: Vec<MrtRecord>,
}

impl MrtDiscreteSample {
    /// Per-cell tables in increasing cell order.
    pub fn cells(&self) -> Vec<MrtJoint> {
        let mut map: std::collections::BTreeMap<i64, [[[u64; 2]; 2]; 2]> = Default::default();
        for r in &self.records {
            let [a, b, c] = r.x;
            map.entry(r.cell).or_default()[a as usize][b as usize][c as usize] += 1;
        }
        map.into_iter().map(|(z, counts)| MrtJoint::new(z, counts)).collect()
    }

    /// All records pooled into one table labeled `cell`.
    pub fn pooled(&self, cell: i64) -> MrtJoint {
        MrtJoint::from_patterns(cell, self.records.iter().map(|r| r.x))
    }

    /// Cell shares matching [`MrtDiscreteSample::cells`].
    pub fn cell_weights(&self) -> Vec<f64> {
        let n = self.records.len() as f64;
        self.cells().iter().map(|c| c.n_cell as f64 / n).collect()
    }
}

impl Resample for MrtDiscreteSample {
    fn n_units(&self) -> usize {
        self.records.len()
    }

    fn stratum(&self, i: usize, by: Stratify) -> u64 {
        match by {
            Stratify::Cell => self.records[i].cell as u64,
            Stratify::None | Stratify::Group => 0,
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { records: idx.iter().map(|&i| self.records[i]).collect() }
    }
}

/// Draws `n` respondents from a cell with the given latent parameters.
pub fn simulate_cell(truth: &LatentParams, n: usize, cell: i64, seed: u64) -> MrtJoint {
    MrtJoint::from_patterns(
        cell,
        (0..n).map(|i| {
            let mut rng = stream(seed, i as u64);
            let k = usize::from(rng.random::<f64>() < truth.pr_xstar);
            let mut x = [0u8; 3];
            for (j, v) in x.iter_mut().enumerate() {
                *v = u8::from(rng.random::<f64>() < truth.cond[j][k]);
            }
            x
        }),
    )
}
