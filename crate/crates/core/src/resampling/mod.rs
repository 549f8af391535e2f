//! Bootstrap inference and the Monte Carlo harness.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::stream;
use crate::stats::{quantile_sorted, sd};

pub mod copula;
pub mod montecarlo;

pub use montecarlo::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stratify {
    /// Resample records from the pooled sample.
    None,
    /// Resample within treatment and control groups separately.
    Group,
    /// Resample within covariate cells.
    Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailurePolicy {
    /// Skip replicates whose estimator fails and report how many there were.
    DropAndFlag,
    /// Abort on the first failing replicate.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_reps: usize,
    pub seed: u64,
    pub stratify_by: Stratify,
    pub failure_policy: FailurePolicy,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_reps: 1000, seed: 0, stratify_by: Stratify::None, failure_policy: FailurePolicy::DropAndFlag }
    }
}

/// A sample that can be resampled unit by unit.
pub trait Resample: Sized + Sync {
    fn n_units(&self) -> usize;
    /// Stratum label of unit `i` under the given stratification.
    fn stratum(&self, i: usize, by: Stratify) -> u64;
    /// New sample made of the listed units, repetitions allowed.
    fn subset(&self, idx: &[usize]) -> Self;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// One row per successful replicate, in replicate order.
    pub estimates: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub n_failed: usize,
}

impl BootstrapResult {
    /// Replicate values of the `k`-th estimated quantity.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.estimates.iter().map(|row| row[k]).collect()
    }
}

fn strata<S: Resample>(sample: &S, by: Stratify) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in 0..sample.n_units() {
        groups.entry(sample.stratum(i, by)).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Indices of one bootstrap draw: each stratum is resampled to its own size.
pub fn draw_indices<R: Rng>(rng: &mut R, strata: &[Vec<usize>]) -> Vec<usize> {
    let mut idx = Vec::with_capacity(strata.iter().map(Vec::len).sum());
    for members in strata {
        for _ in 0..members.len() {
            idx.push(members[rng.random_range(0..members.len())]);
        }
    }
    idx
}

/// Nonparametric bootstrap of a vector-valued estimator.
///
/// Replicate `r` draws from RNG stream `r` of the configured seed, so results
/// do not depend on thread scheduling.
pub fn bootstrap<S, F>(sample: &S, estimator: F, config: &BootstrapConfig) -> Result<BootstrapResult>
where
    S: Resample,
    F: Fn(&S) -> Result<Vec<f64>> + Sync,
{
    if config.n_reps < 100 {
        return domain(format!("at least 100 bootstrap replicates are required, got {}", config.n_reps));
    }
    if sample.n_units() == 0 {
        return domain("cannot bootstrap an empty sample");
    }
    let groups = strata(sample, config.stratify_by);
    let outcomes: Vec<Result<Vec<f64>>> = (0..config.n_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, r as u64);
            let idx = draw_indices(&mut rng, &groups);
            estimator(&sample.subset(&idx))
        })
        .collect();

    let mut estimates = Vec::with_capacity(config.n_reps);
    let mut n_failed = 0;
    for o in outcomes {
        match o {
            Ok(v) if v.iter().all(|x| x.is_finite()) => estimates.push(v),
            Ok(_) | Err(_) if config.failure_policy == FailurePolicy::DropAndFlag => n_failed += 1,
            Ok(_) => return Err(Error::Inference("bootstrap replicate produced a non-finite estimate".into())),
            Err(e) => return Err(Error::Inference(format!("bootstrap replicate failed: {e}"))),
        }
    }
    if n_failed as f64 > 0.2 * config.n_reps as f64 {
        return Err(Error::Inference(format!(
            "{n_failed} of {} bootstrap replicates failed; the estimator is unstable on this sample",
            config.n_reps
        )));
    }
    let width = estimates.first().map_or(0, Vec::len);
    if estimates.iter().any(|v| v.len() != width) {
        return Err(Error::Inference("estimator returned vectors of varying length".into()));
    }
    let mut se = Vec::with_capacity(width);
    let mut ci95 = Vec::with_capacity(width);
    for k in 0..width {
        let mut col: Vec<f64> = estimates.iter().map(|v| v[k]).collect();
        se.push(sd(&col));
        col.sort_by(|a, b| a.total_cmp(b));
        ci95.push((quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975)));
    }
    Ok(BootstrapResult { estimates, se, ci95, n_failed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Alternative: the parameter exceeds the null value.
    Greater,
    /// Alternative: the parameter is below the null value.
    Less,
}

/// Percentile bootstrap p-value with add-one smoothing, `(k + 1) / (B + 1)`,
/// where `k` counts replicates on the null side of `null_value`.
pub fn one_sided_pvalue(estimates: &[f64], null_value: f64, direction: Direction) -> Result<f64> {
    if estimates.is_empty() {
        return domain("no bootstrap estimates");
    }
    let k = estimates
        .iter()
        .filter(|e| match direction {
            Direction::Greater => **e <= null_value,
            Direction::Less => **e >= null_value,
        })
        .count();
    Ok((k as f64 + 1.0) / (estimates.len() as f64 + 1.0))
}

/// Plain vector of scalar observations, mostly useful for testing.
impl Resample for Vec<f64> {
    fn n_units(&self) -> usize {
        self.len()
    }

    fn stratum(&self, _i: usize, _by: Stratify) -> u64 {
        0
    }

    fn subset(&self, idx: &[usize]) -> Self {
        idx.iter().map(|&i| self[i]).collect()
    }
}

impl Resample for crate::le::LeSample {
    fn n_units(&self) -> usize {
        self.records.len()
    }

    fn stratum(&self, i: usize, by: Stratify) -> u64 {
        let r = &self.records[i];
        match by {
            Stratify::None => 0,
            Stratify::Group => r.t as u64,
            Stratify::Cell => cell_key(&r.z),
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { j_count: self.j_count, records: idx.iter().map(|&i| self.records[i].clone()).collect() }
    }
}

/// Stable key for a vector of covariate codes.
pub fn cell_key(z: &[i64]) -> u64 {
    // FNV-1a over the little-endian bytes: deterministic across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in z {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
