//! Monte Carlo harness for the multiple-response estimators.
//!
//! Two data-generating processes are provided: a binary covariate with
//! cell-specific latent-class parameters, and a uniform covariate on `[0, 1]`
//! with logistic links. Either can be run with answers that are correlated
//! within latent class through a Gaussian copula.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::copula::{latent_correlation, CorrelatedBernoulli};
use crate::error::{domain, Error, Result};
use crate::mle::{mle_fit, ContinuousRecord, MleOptions, MleParams, MrtContinuousSample};
use crate::mrt::{
    aggregate_unconditional, decompose_closed_form, decompose_extreme, rank_test, LatentParams, MrtDiscreteSample,
    MrtEstimate, MrtRecord, OrderingRule,
};
use crate::rng::{derive_seed, stream};
use crate::stats::{logistic, mean, median, sd};

/// Binary-covariate design: `Pr(Z = 0)` and the latent parameters of each cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTruth {
    pub p_z0: f64,
    pub cells: [LatentParams; 2],
}

impl DiscreteTruth {
    /// `Pr(X* = 1)` after integrating over the covariate.
    pub fn pr_xstar(&self) -> f64 {
        self.p_z0 * self.cells[0].pr_xstar + (1.0 - self.p_z0) * self.cells[1].pr_xstar
    }

    /// Truth values in the row order of [`discrete_parameter_names`].
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.pr_xstar(), self.cells[0].pr_xstar, self.cells[1].pr_xstar];
        for j in 0..3 {
            for k in 0..2 {
                for c in &self.cells {
                    v.push(c.cond[j][k]);
                }
            }
        }
        v
    }
}

/// The reference binary-covariate design. Probabilities are logistic
/// transforms of round indices, rounded to three decimals.
pub fn reference_discrete_truth() -> DiscreteTruth {
    DiscreteTruth {
        p_z0: 0.4,
        cells: [
            LatentParams { pr_xstar: 0.378, cond: [[0.269, 0.881], [0.269, 0.731], [0.269, 0.881]] },
            LatentParams { pr_xstar: 0.818, cond: [[0.310, 0.900], [0.289, 0.750], [0.289, 0.891]] },
        ],
    }
}

/// The reference continuous design: every index is a single slope on `z`
/// with no constant, `(rho, alpha1, alpha0, beta1, beta0, gamma1, gamma0) =
/// (1, 1, -1, 2, -2, 2, -2)`.
pub fn reference_continuous_truth() -> MleParams {
    MleParams::from_vec(false, &[1.0, 1.0, -1.0, 2.0, -2.0, 2.0, -2.0]).expect("seven blocks")
}

/// Row labels for binary-covariate results.
pub fn discrete_parameter_names() -> Vec<String> {
    let mut v = vec!["Pr(X*=1)".to_string(), "Pr(X*=1|z=0)".to_string(), "Pr(X*=1|z=1)".to_string()];
    for j in 1..=3 {
        for k in 0..2 {
            for z in 0..2 {
                v.push(format!("Pr(X{j}=1|X*={k},z={z})"));
            }
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DesignKind {
    DiscreteZ,
    ContinuousZ,
    DiscreteZCorrelated { sigma: f64 },
    ContinuousZCorrelated { sigma: f64 },
}

impl DesignKind {
    pub fn sigma(&self) -> f64 {
        match self {
            DesignKind::DiscreteZCorrelated { sigma } | DesignKind::ContinuousZCorrelated { sigma } => *sigma,
            _ => 0.0,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DesignKind::DiscreteZ | DesignKind::DiscreteZCorrelated { .. })
    }

    pub fn name(&self) -> String {
        match self {
            DesignKind::DiscreteZ => "discrete".into(),
            DesignKind::ContinuousZ => "continuous".into(),
            DesignKind::DiscreteZCorrelated { sigma } => format!("discrete-correlated(sigma={sigma})"),
            DesignKind::ContinuousZCorrelated { sigma } => format!("continuous-correlated(sigma={sigma})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DesignTruth {
    Discrete(DiscreteTruth),
    Continuous(MleParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub kind: DesignKind,
    pub truth: DesignTruth,
    pub n: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Bootstrap draws per rank test.
    pub rank_boot: usize,
}

impl McDesign {
    /// Reference design of the given kind.
    pub fn reference(kind: DesignKind, n: usize, n_reps: usize, seed: u64) -> Self {
        let truth = if kind.is_discrete() {
            DesignTruth::Discrete(reference_discrete_truth())
        } else {
            DesignTruth::Continuous(reference_continuous_truth())
        };
        Self { kind, truth, n, n_reps, seed, rank_boot: 199 }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.kind.sigma();
        if !(0.0..=0.5).contains(&sigma) {
            return Err(Error::Design(format!("sigma = {sigma} is outside [0, 0.5]")));
        }
        if self.n_reps == 0 || self.n < 2 {
            return Err(Error::Design("need at least one replication and two records".into()));
        }
        match (&self.truth, self.kind.is_discrete()) {
            (DesignTruth::Discrete(_), true) | (DesignTruth::Continuous(_), false) => Ok(()),
            _ => Err(Error::Design("truth does not match the design kind".into())),
        }
    }

    /// Data set of replication `rep`.
    pub fn replicate_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// Answer generators for the four (cell, class) combinations.
fn discrete_generators(truth: &DiscreteTruth, sigma: f64) -> Result<[[CorrelatedBernoulli; 2]; 2]> {
    let make = |z: usize, k: usize| {
        let c = &truth.cells[z];
        CorrelatedBernoulli::new([c.cond[0][k], c.cond[1][k], c.cond[2][k]], sigma)
    };
    Ok([[make(0, 0)?, make(0, 1)?], [make(1, 0)?, make(1, 1)?]])
}

fn simulate_discrete_with(
    truth: &DiscreteTruth,
    gens: &[[CorrelatedBernoulli; 2]; 2],
    n: usize,
    seed: u64,
) -> MrtDiscreteSample {
    let records = (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let z = usize::from(rng.random::<f64>() >= truth.p_z0);
            let k = usize::from(rng.random::<f64>() < truth.cells[z].pr_xstar);
            MrtRecord { x: gens[z][k].sample(&mut rng), cell: z as i64 }
        })
        .collect();
    MrtDiscreteSample { records }
}

/// Draws `n` respondents from the binary-covariate design, with answers
/// correlated at `sigma` within each (cell, class).
pub fn simulate_discrete_design(truth: &DiscreteTruth, n: usize, sigma: f64, seed: u64) -> Result<MrtDiscreteSample> {
    let gens = discrete_generators(truth, sigma)?;
    Ok(simulate_discrete_with(truth, &gens, n, seed))
}

const GRID: usize = 201;

/// Latent pair correlations tabulated on a grid of the covariate.
struct ContinuousCopula {
    /// `table[g][k]` holds `(r12, r13, r23)` at `z = g / (GRID - 1)` for class `k`.
    table: Vec<[[f64; 3]; 2]>,
}

fn class_marginals(params: &MleParams, z: f64, k: usize) -> [f64; 3] {
    let idx = |b: &[f64]| {
        let offset = usize::from(params.intercept);
        let mut s = if params.intercept { b[0] } else { 0.0 };
        s += b[offset] * z;
        logistic(s)
    };
    if k == 1 {
        [idx(&params.alpha1), idx(&params.beta1), idx(&params.gamma1)]
    } else {
        [idx(&params.alpha0), idx(&params.beta0), idx(&params.gamma0)]
    }
}

impl ContinuousCopula {
    fn new(params: &MleParams, sigma: f64) -> Result<Self> {
        let table = (0..GRID)
            .into_par_iter()
            .map(|g| {
                let z = g as f64 / (GRID - 1) as f64;
                let mut row = [[0.0; 3]; 2];
                for (k, r) in row.iter_mut().enumerate() {
                    let [p1, p2, p3] = class_marginals(params, z, k);
                    *r = [
                        latent_correlation(p1, p2, sigma)?,
                        latent_correlation(p1, p3, sigma)?,
                        latent_correlation(p2, p3, sigma)?,
                    ];
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { table })
    }

    fn at(&self, z: f64, k: usize) -> [f64; 3] {
        let pos = z.clamp(0.0, 1.0) * (GRID - 1) as f64;
        let lo = (pos.floor() as usize).min(GRID - 2);
        let w = pos - lo as f64;
        std::array::from_fn(|p| (1.0 - w) * self.table[lo][k][p] + w * self.table[lo + 1][k][p])
    }
}

fn simulate_continuous_with(params: &MleParams, copula: &ContinuousCopula, n: usize, seed: u64) -> Result<MrtContinuousSample> {
    let records = (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let z: f64 = rng.random();
            let pr1 = {
                let mut s = if params.intercept { params.rho[0] } else { 0.0 };
                s += params.rho[usize::from(params.intercept)] * z;
                logistic(s)
            };
            let k = usize::from(rng.random::<f64>() < pr1);
            let gen = CorrelatedBernoulli::with_latent(class_marginals(params, z, k), copula.at(z, k))?;
            Ok(ContinuousRecord { x: gen.sample(&mut rng), z: vec![z] })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MrtContinuousSample { records })
}

/// Draws `n` respondents from a one-covariate logistic design with
/// `z ~ Uniform[0, 1]` and answers correlated at `sigma` within class.
pub fn simulate_continuous_design(params: &MleParams, n: usize, sigma: f64, seed: u64) -> Result<MrtContinuousSample> {
    if params.width() != 1 + usize::from(params.intercept) {
        return domain("the continuous design has exactly one covariate");
    }
    let copula = ContinuousCopula::new(params, sigma)?;
    simulate_continuous_with(params, &copula, n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McEstimator {
    ClosedForm,
    Extreme,
    Mle,
    RankTest,
}

impl McEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            McEstimator::ClosedForm => "closed_form",
            McEstimator::Extreme => "extreme",
            McEstimator::Mle => "mle",
            McEstimator::RankTest => "rank_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: String,
    pub parameter: String,
    /// `None` for rows without a population value, such as rejection rates.
    pub truth: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub design: String,
    /// How correlated answers were generated; results depend on it.
    pub mechanism: String,
    pub n: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub rows: Vec<McRow>,
}

impl McTable {
    pub fn row(&self, estimator: McEstimator, parameter: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator.name() && r.parameter == parameter)
    }
}

pub const COPULA_MECHANISM: &str = "Gaussian copula; per-pair latent correlation solved so that each binary \
pairwise Pearson correlation equals sigma within every (covariate, latent class) cell";

fn summarize(
    estimator: McEstimator,
    names: &[String],
    truth: &[Option<f64>],
    per_rep: &[Option<Vec<f64>>],
) -> Vec<McRow> {
    let ok: Vec<&Vec<f64>> = per_rep.iter().flatten().collect();
    let n_failed = per_rep.len() - ok.len();
    names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let col: Vec<f64> = ok.iter().map(|v| v[p]).collect();
            let (m, s, med) = if col.is_empty() { (f64::NAN, f64::NAN, f64::NAN) } else { (mean(&col), sd(&col), median(&col)) };
            McRow {
                estimator: estimator.name().to_string(),
                parameter: name.clone(),
                truth: truth[p],
                mean: m,
                sd: s,
                median: med,
                n_ok: col.len(),
                n_failed,
            }
        })
        .collect()
}

fn discrete_estimates(sample: &MrtDiscreteSample, estimator: McEstimator, ordering: OrderingRule) -> Option<Vec<f64>> {
    let cells = sample.cells();
    if cells.len() != 2 || cells[0].z_cell != 0 || cells[1].z_cell != 1 {
        return None;
    }
    let fit = |j| match estimator {
        McEstimator::ClosedForm => decompose_closed_form(j, 1, ordering),
        _ => decompose_extreme(j, 1, ordering),
    };
    let est: Vec<MrtEstimate> = cells.iter().map(fit).collect::<Result<_>>().ok()?;
    let weights = sample.cell_weights();
    let pairs: Vec<(MrtEstimate, f64)> = est.iter().copied().zip(weights).collect();
    let mut v = vec![aggregate_unconditional(&pairs).ok()?, est[0].pr_xstar, est[1].pr_xstar];
    for j in 0..3 {
        for k in 0..2 {
            for e in &est {
                v.push(e.pr_x_given_xstar[j][k]);
            }
        }
    }
    Some(v)
}

/// Simulates `design.n_reps` data sets and tabulates the across-replication
/// mean, standard deviation and median of every estimate.
///
/// Replication `r` draws its data from a seed derived from `(design.seed, r)`,
/// so the table does not depend on thread scheduling. Replications where an
/// estimator fails are dropped and counted in `n_failed`.
pub fn run_monte_carlo(design: &McDesign, estimators: &[McEstimator]) -> Result<McTable> {
    design.validate()?;
    let sigma = design.kind.sigma();
    let ordering = OrderingRule::default();
    let mut rows = Vec::new();
    match &design.truth {
        DesignTruth::Discrete(truth) => {
            if estimators.contains(&McEstimator::Mle) {
                return Err(Error::Design("maximum likelihood needs the continuous design".into()));
            }
            let gens = discrete_generators(truth, sigma)?;
            let names = discrete_parameter_names();
            let truth_vals: Vec<Option<f64>> = truth.values().into_iter().map(Some).collect();
            let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..design.n_reps)
                .into_par_iter()
                .map(|r| {
                    let sample = simulate_discrete_with(truth, &gens, design.n, design.replicate_seed(r));
                    estimators
                        .iter()
                        .map(|e| match e {
                            McEstimator::RankTest => {
                                let cells = sample.cells();
                                if cells.len() != 2 {
                                    return None;
                                }
                                cells
                                    .iter()
                                    .enumerate()
                                    .map(|(c, j)| {
                                        rank_test(j, design.rank_boot, derive_seed(design.replicate_seed(r), 1 + c as u64))
                                            .ok()
                                            .map(|t| f64::from(u8::from(t.reject_rank1)))
                                    })
                                    .collect::<Option<Vec<f64>>>()
                            }
                            _ => discrete_estimates(&sample, *e, ordering),
                        })
                        .collect()
                })
                .collect();
            for (i, e) in estimators.iter().enumerate() {
                let col: Vec<Option<Vec<f64>>> = per_rep.iter().map(|r| r[i].clone()).collect();
                if *e == McEstimator::RankTest {
                    let names = vec!["reject_rank1|z=0".to_string(), "reject_rank1|z=1".to_string()];
                    rows.extend(summarize(*e, &names, &[None, None], &col));
                } else {
                    rows.extend(summarize(*e, &names, &truth_vals, &col));
                }
            }
        }
        DesignTruth::Continuous(params) => {
            if estimators.iter().any(|e| *e != McEstimator::Mle) {
                return Err(Error::Design("the continuous design supports maximum likelihood only".into()));
            }
            let copula = ContinuousCopula::new(params, sigma)?;
            let options = MleOptions { intercept: params.intercept, standard_errors: false, ..Default::default() };
            let per_rep: Vec<Option<Vec<f64>>> = (0..design.n_reps)
                .into_par_iter()
                .map(|r| {
                    let seed = design.replicate_seed(r);
                    let sample = simulate_continuous_with(params, &copula, design.n, seed).ok()?;
                    let fit = mle_fit(&sample, &MleOptions { seed, ..options.clone() }).ok()?;
                    Some(fit.params.to_vec())
                })
                .collect();
            let truth: Vec<Option<f64>> = params.to_vec().into_iter().map(Some).collect();
            if !estimators.is_empty() {
                rows.extend(summarize(McEstimator::Mle, &params.names(), &truth, &per_rep));
            }
        }
    }
    Ok(McTable {
        design: design.kind.name(),
        mechanism: COPULA_MECHANISM.to_string(),
        n: design.n,
        n_reps: design.n_reps,
        seed: design.seed,
        rows,
    })
}
