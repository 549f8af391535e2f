//! List-experiment forward model, identities, closed-form identification and
//! synthetic data generation.
//!
//! Throughout, `P0` is the observed control distribution over `0..=J`, `P1`
//! the observed treatment distribution over `0..=J+1`, `delta` the share of
//! respondents holding the sensitive trait and `p0`/`p1` the per-group
//! probabilities of replacing the truthful count with a uniformly random one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::stream;

const SUM_TOL: f64 = 1e-12;

/// How respondents may deviate from their truthful count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MisreportSpec {
    /// Separate uniform misreporting rates in the two groups.
    Unrestricted,
    /// A common uniform misreporting rate `p0 = p1`.
    EqualP,
    /// Truthful reporting, `p0 = p1 = 0`.
    NoMisreport,
    /// Only treatment respondents whose truthful count is `J + 1` deviate,
    /// answering `J` with probability `p`; the control group is truthful.
    Strategic { p: f64 },
}

impl MisreportSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MisreportSpec::Unrestricted => "unrestricted",
            MisreportSpec::EqualP => "equal_p",
            MisreportSpec::NoMisreport => "no_misreport",
            MisreportSpec::Strategic { .. } => "strategic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeParams {
    pub delta: f64,
    pub p0: f64,
    pub p1: f64,
    pub spec: MisreportSpec,
}

fn unit_half_open(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return domain(format!("{name} = {v} is outside [0, 1)"));
    }
    Ok(())
}

impl LeParams {
    pub fn new(delta: f64, p0: f64, p1: f64, spec: MisreportSpec) -> Result<Self> {
        let params = Self { delta, p0, p1, spec };
        params.validate()?;
        Ok(params)
    }

    pub fn unrestricted(delta: f64, p0: f64, p1: f64) -> Result<Self> {
        Self::new(delta, p0, p1, MisreportSpec::Unrestricted)
    }

    pub fn equal_p(delta: f64, p: f64) -> Result<Self> {
        Self::new(delta, p, p, MisreportSpec::EqualP)
    }

    pub fn no_misreport(delta: f64) -> Result<Self> {
        Self::new(delta, 0.0, 0.0, MisreportSpec::NoMisreport)
    }

    pub fn strategic(delta: f64, p: f64) -> Result<Self> {
        Self::new(delta, 0.0, 0.0, MisreportSpec::Strategic { p })
    }

    pub fn validate(&self) -> Result<()> {
        unit_half_open("delta", self.delta)?;
        match self.spec {
            MisreportSpec::Strategic { p } => unit_half_open("p", p),
            MisreportSpec::EqualP => {
                unit_half_open("p0", self.p0)?;
                if self.p0 != self.p1 {
                    return domain("equal_p requires p0 = p1");
                }
                Ok(())
            }
            MisreportSpec::NoMisreport => {
                if self.p0 != 0.0 || self.p1 != 0.0 {
                    return domain("no_misreport requires p0 = p1 = 0");
                }
                Ok(())
            }
            MisreportSpec::Unrestricted => {
                unit_half_open("p0", self.p0)?;
                unit_half_open("p1", self.p1)
            }
        }
    }
}

fn check_probs(probs: &[f64], expected_len: usize) -> Result<()> {
    if probs.len() != expected_len {
        return domain(format!("expected {expected_len} probabilities, got {}", probs.len()));
    }
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return domain(format!("probability {bad} outside [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return domain(format!("probabilities sum to {total}, not 1"));
    }
    Ok(())
}

/// Distribution of the control-group count over `0..=J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDistribution {
    j_count: usize,
    probs: Vec<f64>,
}

impl ControlDistribution {
    pub fn new(j_count: usize, probs: Vec<f64>) -> Result<Self> {
        if j_count == 0 {
            return domain("at least one nonsensitive item is required");
        }
        check_probs(&probs, j_count + 1)?;
        Ok(Self { j_count, probs })
    }

    pub fn uniform(j_count: usize) -> Result<Self> {
        Self::new(j_count, vec![1.0 / (j_count + 1) as f64; j_count + 1])
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }
}

/// Distribution of the treatment-group count over `0..=J+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDistribution {
    j_count: usize,
    probs: Vec<f64>,
}

impl TreatmentDistribution {
    pub fn new(j_count: usize, probs: Vec<f64>) -> Result<Self> {
        if j_count == 0 {
            return domain("at least one nonsensitive item is required");
        }
        check_probs(&probs, j_count + 2)?;
        Ok(Self { j_count, probs })
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeRecord {
    pub y: u32,
    /// 0 for control, 1 for treatment.
    pub t: u8,
    /// Discrete covariate codes; empty when none were collected.
    pub z: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeSample {
    pub j_count: usize,
    pub records: Vec<LeRecord>,
}

impl LeSample {
    pub fn new(j_count: usize, records: Vec<LeRecord>) -> Result<Self> {
        let sample = Self { j_count, records };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_count == 0 {
            return domain("at least one nonsensitive item is required");
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.t > 1 {
                return domain(format!("record {i}: group indicator {} is not 0 or 1", r.t));
            }
            if r.y as usize > self.j_count + r.t as usize {
                return domain(format!("record {i}: count {} exceeds J + t", r.y));
            }
        }
        let (n0, n1) = self.group_sizes();
        if n0 == 0 || n1 == 0 {
            return domain("both control and treatment groups must be nonempty");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        let n1 = self.records.iter().filter(|r| r.t == 1).count();
        (self.records.len() - n1, n1)
    }

    /// Group counts `(control, treatment)` by response value.
    pub fn histograms(&self) -> (Vec<usize>, Vec<usize>) {
        let mut h0 = vec![0; self.j_count + 1];
        let mut h1 = vec![0; self.j_count + 2];
        for r in &self.records {
            if r.t == 0 {
                h0[r.y as usize] += 1;
            } else {
                h1[r.y as usize] += 1;
            }
        }
        (h0, h1)
    }
}

/// Linear map `P1 = B * P0 + c` implied by `theta` for `J` items.
///
/// `B` is `(J+2) x (J+1)`. Parameters are not validated; callers inside the
/// estimator evaluate it anywhere in the box.
pub fn forward_map(theta: &LeParams, j_count: usize) -> (DMatrix<f64>, DVector<f64>) {
    let j = j_count;
    let d = theta.delta;
    let mut b = DMatrix::zeros(j + 2, j + 1);
    let mut c = DVector::zeros(j + 2);
    match theta.spec {
        MisreportSpec::Strategic { p } => {
            for row in 0..=j {
                b[(row, row)] += 1.0 - d;
                if row >= 1 {
                    b[(row, row - 1)] += d;
                }
            }
            b[(j, j)] += d * p;
            b[(j + 1, j)] = d * (1.0 - p);
        }
        _ => {
            let k = (1.0 - theta.p1) / (1.0 - theta.p0);
            let shift = k * theta.p0 / (j + 1) as f64;
            let noise = theta.p1 / (j + 2) as f64;
            for row in 0..=j + 1 {
                let mut w = 0.0;
                if row <= j {
                    b[(row, row)] = k * (1.0 - d);
                    w += 1.0 - d;
                }
                if row >= 1 {
                    b[(row, row - 1)] = k * d;
                    w += d;
                }
                c[row] = noise - shift * w;
            }
        }
    }
    (b, c)
}

/// `P1` implied by `theta` and control probabilities, without any checks.
pub fn forward_unchecked(theta: &LeParams, control: &[f64]) -> Vec<f64> {
    let j = control.len() - 1;
    let (b, c) = forward_map(theta, j);
    let p1 = b * DVector::from_column_slice(control) + c;
    p1.as_slice().to_vec()
}

/// Latent truthful count distribution of the nonsensitive items recovered from
/// the observed control distribution.
pub fn latent_from_control(params: &LeParams, control: &ControlDistribution) -> Vec<f64> {
    match params.spec {
        MisreportSpec::Strategic { .. } => control.probs.clone(),
        _ => {
            let floor = params.p0 / (control.j_count + 1) as f64;
            control.probs.iter().map(|q| (q - floor) / (1.0 - params.p0)).collect()
        }
    }
}

/// Observed control distribution produced by a latent truthful distribution.
pub fn observed_control(params: &LeParams, latent: &ControlDistribution) -> ControlDistribution {
    let probs = match params.spec {
        MisreportSpec::Strategic { .. } => latent.probs.clone(),
        _ => {
            let floor = params.p0 / (latent.j_count + 1) as f64;
            latent.probs.iter().map(|q| (1.0 - params.p0) * q + floor).collect()
        }
    };
    ControlDistribution { j_count: latent.j_count, probs }
}

/// Observed treatment distribution implied by `params` and the observed control
/// distribution.
///
/// Fails when the control distribution is incompatible with the misreporting
/// rate, i.e. some `P0(j) < p0 / (J + 1)`, which would require a negative
/// latent probability.
pub fn le_forward(params: &LeParams, control: &ControlDistribution) -> Result<TreatmentDistribution> {
    params.validate()?;
    let latent = latent_from_control(params, control);
    if let Some(bad) = latent.iter().position(|q| *q < -SUM_TOL) {
        return domain(format!(
            "P0({bad}) = {} is below the misreporting floor p0/(J+1)",
            control.probs[bad]
        ));
    }
    let mut probs = forward_unchecked(params, &control.probs);
    for p in probs.iter_mut() {
        // Remove round-off below zero introduced at the floor.
        if *p < 0.0 && *p > -SUM_TOL {
            *p = 0.0;
        }
    }
    TreatmentDistribution::new(control.j_count, probs)
}

/// Population mean difference `E(Y1) - E(Y0)` under uniform misreporting.
pub fn mean_difference_analytic(params: &LeParams, control: &ControlDistribution) -> Result<f64> {
    if let MisreportSpec::Strategic { .. } = params.spec {
        return domain("the closed-form mean difference covers uniform misreporting only");
    }
    if params.p0 >= 1.0 {
        return domain("p0 = 1 leaves the mean difference undefined");
    }
    params.validate()?;
    let LeParams { delta, p0, p1, .. } = *params;
    let j = control.j_count as f64;
    let ey0 = control.mean();
    Ok(delta - p1 * delta - j * (1.0 - p1) * p0 / (2.0 * (1.0 - p0))
        - (p1 - p0) / (1.0 - p0) * ey0
        + (j + 1.0) * p1 / 2.0)
}

/// Outcome of the closed-form solver.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosedFormLe {
    Identified(LeParams),
    Unidentified(String),
}

const DEGENERACY_TOL: f64 = 1e-6;

fn negligible(value: f64, scale: f64) -> bool {
    value.is_nan() || value.abs() <= DEGENERACY_TOL * scale || scale == 0.0
}

/// Recovers `(delta, p0, p1)` from exact or estimated distributions with three
/// nonsensitive items.
///
/// Consecutive differences of the interior treatment probabilities eliminate
/// the additive misreporting terms; their ratio pins `delta`, the level gives
/// `k = (1 - p1) / (1 - p0)`, and the two boundary cells give `p0`. On
/// estimated distributions the returned values may fall outside `[0, 1)`.
pub fn solve_le_closed_form(
    control: &ControlDistribution,
    treatment: &TreatmentDistribution,
) -> Result<ClosedFormLe> {
    if control.j_count != 3 || treatment.j_count != 3 {
        return domain(format!(
            "closed-form solver needs J = 3 in both groups, got {} and {}",
            control.j_count, treatment.j_count
        ));
    }
    let a = &control.probs;
    let q = &treatment.probs;
    let d1 = q[3] - q[2];
    let d2 = q[2] - q[1];
    let curv_lo = 2.0 * a[1] - a[2] - a[0];
    let curv_hi = 2.0 * a[2] - a[3] - a[1];

    let num = d2 * (a[3] - a[2]) - d1 * (a[2] - a[1]);
    let den = d1 * curv_lo - d2 * curv_hi;
    let den_scale = d1.abs() * (2.0 * a[1] + a[2] + a[0]) + d2.abs() * (2.0 * a[2] + a[3] + a[1]);
    if negligible(den, den_scale) {
        return Ok(ClosedFormLe::Unidentified("ratio denominator for delta vanishes".into()));
    }
    let delta = num / den;

    let level = a[2] - a[1] + delta * curv_lo;
    let level_scale = a[2] + a[1] + delta.abs() * (2.0 * a[1] + a[2] + a[0]);
    if negligible(level, level_scale) {
        return Ok(ClosedFormLe::Unidentified("level denominator for k vanishes".into()));
    }
    let k = d2 / level;
    if negligible(k, 1.0) {
        return Ok(ClosedFormLe::Unidentified("interior differences vanish".into()));
    }

    if (delta - 0.5).abs() < DEGENERACY_TOL {
        return Ok(ClosedFormLe::Unidentified("delta = 1/2 leaves p0 unidentified".into()));
    }
    let edge = (q[4] - q[0]) / k - delta * a[3] + (1.0 - delta) * a[0];
    let p0 = 4.0 * edge / (1.0 - 2.0 * delta);
    let p1 = 1.0 - k * (1.0 - p0);
    Ok(ClosedFormLe::Identified(LeParams { delta, p0, p1, spec: MisreportSpec::Unrestricted }))
}

fn draw_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the round-off gap above the cumulative sum.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Simulates a list experiment.
///
/// `latent` is the truthful count distribution of the nonsensitive items,
/// shared by both groups. Record `i` draws from its own RNG stream, so the
/// output depends only on `(seed, i)` and not on evaluation order.
pub fn simulate_le(
    params: &LeParams,
    latent: &ControlDistribution,
    n: usize,
    group_share: f64,
    seed: u64,
) -> Result<LeSample> {
    simulate_le_shifted(params, latent, latent, n, group_share, seed)
}

/// Like [`simulate_le`], but the treatment group draws its nonsensitive count
/// from `latent_treatment`, breaking random assignment when the two differ.
pub fn simulate_le_shifted(
    params: &LeParams,
    latent_control: &ControlDistribution,
    latent_treatment: &ControlDistribution,
    n: usize,
    group_share: f64,
    seed: u64,
) -> Result<LeSample> {
    params.validate()?;
    if n < 2 {
        return domain("at least two records are required");
    }
    if !(group_share > 0.0 && group_share < 1.0) {
        return domain("treatment share must lie in (0, 1)");
    }
    if latent_control.j_count != latent_treatment.j_count {
        return domain("latent distributions disagree on J");
    }
    let j = latent_control.j_count;
    let records = (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let t = u8::from(rng.random::<f64>() < group_share);
            let y = if t == 0 {
                let truth = draw_index(&mut rng, &latent_control.probs);
                match params.spec {
                    MisreportSpec::Strategic { .. } => truth,
                    _ => {
                        if rng.random::<f64>() < params.p0 {
                            rng.random_range(0..=j)
                        } else {
                            truth
                        }
                    }
                }
            } else {
                let r1 = draw_index(&mut rng, &latent_treatment.probs);
                let trait_holder = rng.random::<f64>() < params.delta;
                let truth = r1 + usize::from(trait_holder);
                match params.spec {
                    MisreportSpec::Strategic { p } => {
                        if trait_holder && r1 == j && rng.random::<f64>() < p {
                            j
                        } else {
                            truth
                        }
                    }
                    _ => {
                        if rng.random::<f64>() < params.p1 {
                            rng.random_range(0..=j + 1)
                        } else {
                            truth
                        }
                    }
                }
            };
            LeRecord { y: y as u32, t, z: Vec::new() }
        })
        .collect();
    let sample = LeSample { j_count: j, records };
    sample.validate()?;
    Ok(sample)
}

/// A list experiment whose control group also answers the sensitive question
/// directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedLeSample {
    pub sample: LeSample,
    /// Direct answers of control respondents, in record order.
    pub direct: Vec<u8>,
}

/// Simulates a modified list experiment.
///
/// Trait holders deny it in the direct question with probability `q1`,
/// non-holders falsely affirm it with probability `q0`.
pub fn simulate_modified_le(
    params: &LeParams,
    latent: &ControlDistribution,
    n: usize,
    group_share: f64,
    q1: f64,
    q0: f64,
    seed: u64,
) -> Result<ModifiedLeSample> {
    if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q0) {
        return domain("direct-question misreport rates must lie in [0, 1]");
    }
    let sample = simulate_le(params, latent, n, group_share, seed)?;
    // Trait status of control respondents is drawn on a separate family of streams.
    let direct_seed = crate::rng::derive_seed(seed, u64::MAX);
    let direct = sample
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.t == 0)
        .map(|(i, _)| {
            let mut rng = stream(direct_seed, i as u64);
            let holder = rng.random::<f64>() < params.delta;
            let u: f64 = rng.random();
            u8::from(if holder { u >= q1 } else { u < q0 })
        })
        .collect();
    Ok(ModifiedLeSample { sample, direct })
}

/// Empirical distributions of both groups and the group shares `(c0, c1)`.
pub fn empirical_distributions(
    sample: &LeSample,
) -> Result<(ControlDistribution, TreatmentDistribution, f64, f64)> {
    let (n0, n1) = sample.group_sizes();
    if n0 == 0 || n1 == 0 {
        return domain("both control and treatment groups must be nonempty");
    }
    let (h0, h1) = sample.histograms();
    let norm = |h: &[usize], m: usize| -> Vec<f64> {
        let mut v: Vec<f64> = h.iter().map(|c| *c as f64 / m as f64).collect();
        // Push the residual rounding error into the largest cell so the sum is 1.
        let drift: f64 = 1.0 - v.iter().sum::<f64>();
        let top = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        v[top] += drift;
        v
    };
    let n = sample.len() as f64;
    let control = ControlDistribution::new(sample.j_count, norm(&h0, n0))?;
    let treatment = TreatmentDistribution::new(sample.j_count, norm(&h1, n1))?;
    Ok((control, treatment, n0 as f64 / n, n1 as f64 / n))
}

impl ClosedFormLe {
    /// Converts an unidentified outcome into an identification error.
    pub fn into_result(self) -> Result<LeParams> {
        match self {
            ClosedFormLe::Identified(p) => Ok(p),
            ClosedFormLe::Unidentified(why) => Err(Error::Identification(why)),
        }
    }
}

#[cfg(test)]
mod tests;
