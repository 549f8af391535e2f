//! Two-step GMM estimation of list-experiment parameters and the
//! overidentification (J) test of the design assumptions.
//!
//! The `J + 2` moments compare the treatment distribution predicted from the
//! control distribution with the observed one. They sum to zero, so one is
//! dropped; which one is configurable because finite-sample p-values depend on
//! it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::le::{
    empirical_distributions, forward_map, ControlDistribution, LeParams, LeSample, MisreportSpec,
    TreatmentDistribution,
};
use crate::optim::{nelder_mead_box, NelderMeadOptions};
use crate::resampling::{bootstrap, BootstrapConfig, Stratify};
use crate::stats::{chi2_sf, norm_cdf};

/// Upper bound on every estimated probability, keeping `1 - p0` away from zero.
const UPPER: f64 = 1.0 - 1e-6;
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecKind {
    Unrestricted,
    EqualP,
    NoMisreport,
    Strategic,
}

impl SpecKind {
    pub const ALL: [SpecKind; 4] =
        [SpecKind::Unrestricted, SpecKind::EqualP, SpecKind::NoMisreport, SpecKind::Strategic];

    pub fn free_params(self) -> usize {
        match self {
            SpecKind::Unrestricted => 3,
            SpecKind::EqualP | SpecKind::Strategic => 2,
            SpecKind::NoMisreport => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecKind::Unrestricted => "unrestricted",
            SpecKind::EqualP => "equal_p",
            SpecKind::NoMisreport => "no_misreport",
            SpecKind::Strategic => "strategic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "unrestricted" => Some(SpecKind::Unrestricted),
            "equal_p" | "equalp" => Some(SpecKind::EqualP),
            "no_misreport" | "nomisreport" => Some(SpecKind::NoMisreport),
            "strategic" => Some(SpecKind::Strategic),
            _ => None,
        }
    }

    /// Maps free parameters to a full parameter triple.
    pub fn params(self, x: &[f64]) -> LeParams {
        match self {
            SpecKind::Unrestricted => {
                LeParams { delta: x[0], p0: x[1], p1: x[2], spec: MisreportSpec::Unrestricted }
            }
            SpecKind::EqualP => LeParams { delta: x[0], p0: x[1], p1: x[1], spec: MisreportSpec::EqualP },
            SpecKind::NoMisreport => {
                LeParams { delta: x[0], p0: 0.0, p1: 0.0, spec: MisreportSpec::NoMisreport }
            }
            SpecKind::Strategic => {
                LeParams { delta: x[0], p0: 0.0, p1: 0.0, spec: MisreportSpec::Strategic { p: x[1] } }
            }
        }
    }

    pub fn of(spec: &MisreportSpec) -> Self {
        match spec {
            MisreportSpec::Unrestricted => SpecKind::Unrestricted,
            MisreportSpec::EqualP => SpecKind::EqualP,
            MisreportSpec::NoMisreport => SpecKind::NoMisreport,
            MisreportSpec::Strategic { .. } => SpecKind::Strategic,
        }
    }

    /// Deterministic starting lattice of eight points.
    fn starts(self) -> Vec<Vec<f64>> {
        match self.free_params() {
            3 => {
                let mut v = Vec::new();
                for d in [0.25, 0.75] {
                    for p0 in [0.1, 0.4] {
                        for p1 in [0.1, 0.4] {
                            v.push(vec![d, p0, p1]);
                        }
                    }
                }
                v
            }
            2 => {
                let mut v = Vec::new();
                for d in [0.15, 0.4, 0.6, 0.85] {
                    for p in [0.1, 0.4] {
                        v.push(vec![d, p]);
                    }
                }
                v
            }
            _ => (0..8).map(|i| vec![(2 * i + 1) as f64 / 16.0]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub j_count: usize,
    pub spec: SpecKind,
    /// Index in `0..=J+1` of the redundant moment left out.
    pub dropped_index: usize,
}

impl MomentSpec {
    pub fn new(j_count: usize, spec: SpecKind, dropped_index: usize) -> Result<Self> {
        if dropped_index > j_count + 1 {
            return domain(format!("dropped moment {dropped_index} outside 0..={}", j_count + 1));
        }
        Ok(Self { j_count, spec, dropped_index })
    }

    pub fn moments_used(&self) -> usize {
        self.j_count + 1
    }

    pub fn dof(&self) -> usize {
        self.moments_used().saturating_sub(self.spec.free_params())
    }
}

/// Data the moments are evaluated on: a sample or exact distributions.
#[derive(Debug, Clone, Copy)]
pub enum MomentInput<'a> {
    Sample(&'a LeSample),
    Population {
        control: &'a ControlDistribution,
        treatment: &'a TreatmentDistribution,
        c0: f64,
        c1: f64,
    },
}

/// Group frequencies and shares backing the moment conditions.
#[derive(Debug, Clone)]
struct Frequencies {
    j: usize,
    p0: DVector<f64>,
    p1: DVector<f64>,
    c0: f64,
    c1: f64,
}

impl Frequencies {
    fn from_input(input: MomentInput<'_>) -> Result<Self> {
        let (control, treatment, c0, c1) = match input {
            MomentInput::Sample(s) => {
                let (c, t, c0, c1) = empirical_distributions(s)?;
                (c, t, c0, c1)
            }
            MomentInput::Population { control, treatment, c0, c1 } => {
                if !(c0 > 0.0 && c1 > 0.0) {
                    return domain("both group shares must be positive");
                }
                (control.clone(), treatment.clone(), c0, c1)
            }
        };
        if control.j_count() != treatment.j_count() {
            return domain("control and treatment disagree on J");
        }
        Ok(Self {
            j: control.j_count(),
            p0: DVector::from_column_slice(control.probs()),
            p1: DVector::from_column_slice(treatment.probs()),
            c0,
            c1,
        })
    }

    /// Full vector of `J + 2` moments.
    fn moments(&self, theta: &LeParams) -> DVector<f64> {
        let (b, c) = forward_map(theta, self.j);
        b * &self.p0 + c - &self.p1
    }

    /// Asymptotic covariance of `sqrt(n)` times the full moment vector.
    fn covariance(&self, theta: &LeParams) -> DMatrix<f64> {
        let (b, _) = forward_map(theta, self.j);
        let multinomial = |p: &DVector<f64>| DMatrix::from_diagonal(p) - p * p.transpose();
        &b * multinomial(&self.p0) * b.transpose() / self.c0 + multinomial(&self.p1) / self.c1
    }
}

/// The `J + 2` moment conditions evaluated at `theta`, before dropping.
///
/// Each entry is the predicted minus the observed treatment share of one
/// response value; all vanish at the true parameters.
pub fn moment_values(input: MomentInput<'_>, theta: &LeParams, spec: &MomentSpec) -> Result<Vec<f64>> {
    theta.validate()?;
    if SpecKind::of(&theta.spec) != spec.spec {
        return domain("parameter specification does not match the moment specification");
    }
    let freq = Frequencies::from_input(input)?;
    if freq.j != spec.j_count {
        return domain("moment specification disagrees with the data on J");
    }
    Ok(freq.moments(theta).as_slice().to_vec())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmResult {
    pub theta_hat: LeParams,
    /// `n` times the minimized objective.
    pub t_stat: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Second-step weighting matrix, row-major.
    pub weight_matrix: Vec<Vec<f64>>,
    pub converged: bool,
    pub dropped_index: usize,
    /// The moment covariance had to be ridge-regularized before inversion.
    pub ridge_regularized: bool,
    pub objective: f64,
    pub n: usize,
}

fn drop_row(v: &DVector<f64>, k: usize) -> DVector<f64> {
    v.clone().remove_row(k)
}

fn drop_both(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.clone().remove_row(k).remove_column(k)
}

/// Inverse of a symmetric positive semidefinite matrix, ridge-regularized when
/// ill-conditioned. Returns the inverse and whether the ridge was applied.
pub fn robust_inverse(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let k = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ill = min.is_nan() || min <= 0.0 || max / min > COND_LIMIT;
    let target = if ill {
        let trace = sym.trace();
        let ridge = if trace > 0.0 { 1e-10 * trace / k as f64 } else { 1e-10 };
        &sym + DMatrix::identity(k, k) * ridge
    } else {
        sym
    };
    match target.clone().cholesky() {
        Some(ch) => Ok((ch.inverse(), ill)),
        None => target
            .try_inverse()
            .map(|inv| (inv, true))
            .ok_or_else(|| Error::Estimation("moment covariance is not invertible".into())),
    }
}

struct Fit {
    x: Vec<f64>,
    objective: f64,
    converged: bool,
}

fn minimize(freq: &Frequencies, spec: &MomentSpec, w: &DMatrix<f64>) -> Fit {
    let dim = spec.spec.free_params();
    let lower = vec![0.0; dim];
    let upper = vec![UPPER; dim];
    let opts = NelderMeadOptions { initial_step: 0.05, ..Default::default() };
    let objective = |x: &[f64]| {
        let psi = drop_row(&freq.moments(&spec.spec.params(x)), spec.dropped_index);
        (psi.transpose() * w * &psi)[(0, 0)]
    };
    let mut best: Option<Fit> = None;
    for start in spec.spec.starts() {
        let m = nelder_mead_box(objective, &start, &lower, &upper, &opts);
        if best.as_ref().is_none_or(|b| m.f < b.objective) {
            best = Some(Fit { x: m.x, objective: m.f, converged: m.converged });
        }
    }
    best.expect("at least one start")
}

fn estimate(freq: &Frequencies, spec: &MomentSpec, n: usize) -> Result<GmmResult> {
    if spec.j_count < 3 {
        return Err(Error::Identification(format!(
            "at least three nonsensitive items are needed, got {}",
            spec.j_count
        )));
    }
    if freq.j != spec.j_count {
        return domain("moment specification disagrees with the data on J");
    }
    if spec.dof() == 0 {
        return Err(Error::Identification("specification is not overidentified".into()));
    }
    let k = spec.moments_used();
    let first = minimize(freq, spec, &DMatrix::identity(k, k));
    let s = drop_both(&freq.covariance(&spec.spec.params(&first.x)), spec.dropped_index);
    let (w, ridge) = robust_inverse(&s)?;
    let second = minimize(freq, spec, &w);
    let t_stat = (n as f64 * second.objective).max(0.0);
    let dof = spec.dof();
    Ok(GmmResult {
        theta_hat: spec.spec.params(&second.x),
        t_stat,
        dof,
        p_value: chi2_sf(t_stat, dof),
        weight_matrix: (0..k).map(|i| w.row(i).iter().copied().collect()).collect(),
        converged: first.converged && second.converged,
        dropped_index: spec.dropped_index,
        ridge_regularized: ridge,
        objective: second.objective,
        n,
    })
}

/// Two-step efficient GMM: identity weights first, then the inverse of the
/// moment covariance evaluated at the first-step estimate.
pub fn gmm_estimate(sample: &LeSample, spec: &MomentSpec) -> Result<GmmResult> {
    sample.validate()?;
    let freq = Frequencies::from_input(MomentInput::Sample(sample))?;
    estimate(&freq, spec, sample.len())
}

/// GMM on exact distributions, scaled as if they came from `n` records.
pub fn gmm_estimate_population(
    control: &ControlDistribution,
    treatment: &TreatmentDistribution,
    c0: f64,
    c1: f64,
    n: usize,
    spec: &MomentSpec,
) -> Result<GmmResult> {
    let freq = Frequencies::from_input(MomentInput::Population { control, treatment, c0, c1 })?;
    estimate(&freq, spec, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropPolicy {
    Fixed(usize),
    /// Report the smallest p-value over all choices of dropped moment.
    MinPValueOverDrops,
}

fn select_min_p(results: Vec<Result<GmmResult>>) -> Result<GmmResult> {
    let mut best: Option<GmmResult> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.p_value < b.p_value) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Estimation("no moment could be dropped".into())))
}

/// J-test of the list-experiment assumptions under `spec.spec`.
pub fn j_test(sample: &LeSample, spec: SpecKind, policy: DropPolicy) -> Result<GmmResult> {
    sample.validate()?;
    let freq = Frequencies::from_input(MomentInput::Sample(sample))?;
    j_test_freq(&freq, spec, policy, sample.len())
}

/// J-test on exact distributions scaled to `n` records.
pub fn j_test_population(
    control: &ControlDistribution,
    treatment: &TreatmentDistribution,
    c0: f64,
    c1: f64,
    n: usize,
    spec: SpecKind,
    policy: DropPolicy,
) -> Result<GmmResult> {
    let freq = Frequencies::from_input(MomentInput::Population { control, treatment, c0, c1 })?;
    j_test_freq(&freq, spec, policy, n)
}

fn j_test_freq(freq: &Frequencies, spec: SpecKind, policy: DropPolicy, n: usize) -> Result<GmmResult> {
    match policy {
        DropPolicy::Fixed(k) => estimate(freq, &MomentSpec::new(freq.j, spec, k)?, n),
        DropPolicy::MinPValueOverDrops => {
            let runs: Vec<Result<GmmResult>> = (0..=freq.j + 1)
                .into_par_iter()
                .map(|k| estimate(freq, &MomentSpec::new(freq.j, spec, k)?, n))
                .collect();
            select_min_p(runs)
        }
    }
}

/// Test of `E(Y0) = J / 2` on the control group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMeanTest {
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

pub fn control_mean_test(sample: &LeSample) -> Result<ControlMeanTest> {
    let ys: Vec<f64> = sample.records.iter().filter(|r| r.t == 0).map(|r| r.y as f64).collect();
    if ys.len() < 2 {
        return domain("control group needs at least two records");
    }
    let mean = crate::stats::mean(&ys);
    let se = crate::stats::sd(&ys) / (ys.len() as f64).sqrt();
    let z = (mean - sample.j_count as f64 / 2.0) / se;
    let p_value = if se > 0.0 { 2.0 * (1.0 - norm_cdf(z.abs())) } else if z == 0.0 { 1.0 } else { 0.0 };
    Ok(ControlMeanTest { mean, se, z, p_value })
}

/// Sample mean difference `mean(Y | t=1) - mean(Y | t=0)`.
pub fn mean_difference(sample: &LeSample) -> Result<f64> {
    let (n0, n1) = sample.group_sizes();
    if n0 == 0 || n1 == 0 {
        return domain("both control and treatment groups must be nonempty");
    }
    let (mut s0, mut s1) = (0.0, 0.0);
    for r in &sample.records {
        if r.t == 0 {
            s0 += r.y as f64;
        } else {
            s1 += r.y as f64;
        }
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Comparison of the direct-question rate with the list-experiment mean difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModifiedLeCheck {
    pub mean_diff: f64,
    pub direct_rate: f64,
    /// `direct_rate - mean_diff`.
    pub gap: f64,
    pub gap_se: f64,
    /// Always set: a zero gap is consistent with misreporting in both
    /// questions and is not evidence of truthful answers.
    pub zero_gap_not_sufficient: bool,
    pub caveat: String,
}

pub const ZERO_GAP_CAVEAT: &str = "a zero gap only implies (1 - q1) * delta + q0 * (1 - delta) = \
delta + p * (1 - 2 * delta) / 2; it does not establish truthful reporting";

/// List-experiment records with the control group's direct answers attached.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectSample {
    pub j_count: usize,
    /// `(y, t, direct)`; `direct` is meaningful only for control records.
    pub records: Vec<(u32, u8, u8)>,
}

impl DirectSample {
    pub fn new(sample: &LeSample, direct: &[u8]) -> Result<Self> {
        let n0 = sample.group_sizes().0;
        if direct.len() != n0 {
            return domain(format!(
                "{} direct answers for {n0} control records",
                direct.len()
            ));
        }
        if direct.iter().any(|d| *d > 1) {
            return domain("direct answers must be 0 or 1");
        }
        let mut it = direct.iter();
        let records = sample
            .records
            .iter()
            .map(|r| (r.y, r.t, if r.t == 0 { *it.next().unwrap() } else { 0 }))
            .collect();
        Ok(Self { j_count: sample.j_count, records })
    }

    fn stats(&self) -> Result<(f64, f64)> {
        let (mut s0, mut s1, mut n0, mut n1, mut d) = (0.0, 0.0, 0usize, 0usize, 0.0);
        for &(y, t, x) in &self.records {
            if t == 0 {
                s0 += y as f64;
                n0 += 1;
                d += x as f64;
            } else {
                s1 += y as f64;
                n1 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            return domain("both control and treatment groups must be nonempty");
        }
        Ok((s1 / n1 as f64 - s0 / n0 as f64, d / n0 as f64))
    }
}

impl crate::resampling::Resample for DirectSample {
    fn n_units(&self) -> usize {
        self.records.len()
    }

    fn stratum(&self, i: usize, by: Stratify) -> u64 {
        match by {
            Stratify::None | Stratify::Cell => 0,
            Stratify::Group => self.records[i].1 as u64,
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { j_count: self.j_count, records: idx.iter().map(|&i| self.records[i]).collect() }
    }
}

/// Compares `Pr(X = 1)` from the direct question with the mean difference and
/// bootstraps the standard error of the gap, resampling within groups.
pub fn modified_le_check(
    sample: &LeSample,
    direct_responses: &[u8],
    n_boot: usize,
    seed: u64,
) -> Result<ModifiedLeCheck> {
    let data = DirectSample::new(sample, direct_responses)?;
    let (mean_diff, direct_rate) = data.stats()?;
    let config = BootstrapConfig { n_reps: n_boot, seed, stratify_by: Stratify::Group, ..Default::default() };
    let boot = bootstrap(
        &data,
        |s: &DirectSample| {
            let (m, d) = s.stats()?;
            Ok(vec![d - m])
        },
        &config,
    )?;
    Ok(ModifiedLeCheck {
        mean_diff,
        direct_rate,
        gap: direct_rate - mean_diff,
        gap_se: boot.se[0],
        zero_gap_not_sufficient: true,
        caveat: ZERO_GAP_CAVEAT.to_string(),
    })
}

#[cfg(test)]
mod tests;
