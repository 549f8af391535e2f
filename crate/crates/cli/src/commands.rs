//! Subcommand dispatch: each command turns a [`RunConfig`] into a [`Report`].

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;

use elicit_core::gmm::{
    control_mean_test, j_test, mean_difference, modified_le_check, DropPolicy, GmmResult, SpecKind,
};
use elicit_core::le::{
    empirical_distributions, simulate_le, simulate_modified_le, solve_le_closed_form, ClosedFormLe,
    ControlDistribution, LeParams, LeSample, MisreportSpec,
};
use elicit_core::mle::{mle_fit, MleOptions, MrtContinuousSample};
use elicit_core::mrt::{
    aggregate_unconditional, decompose_closed_form, decompose_extreme, misreport_rates, rank_test, MrtEstimate,
    MrtJoint, MrtMethod, OrderingRule, ESTIMATE_NAMES,
};
use elicit_core::resampling::{
    bootstrap, one_sided_pvalue, reference_continuous_truth, reference_discrete_truth, run_monte_carlo,
    simulate_continuous_design, simulate_discrete_design, BootstrapConfig, BootstrapResult, DesignKind, Direction,
    McDesign, McEstimator, Stratify,
};
use elicit_core::rng::{derive_seed, stream};

use crate::config::{Command, MrtMode, RunConfig};
use crate::data::{load_le_csv, load_mrt_csv, write_atomic, write_le_csv, write_mrt_csv, LeData, MrtData};
use crate::report::{significance_marker, ColumnKind as K, Report, Table, Value};

/// Bootstrap draws of the rank test when no `n_boot` is configured.
const RANK_TEST_DRAWS: usize = 199;

/// Runs one subcommand.
pub fn run_subcommand(config: &RunConfig) -> Result<Report> {
    let mut report = Report::new(config);
    let result = match config.command {
        Command::Simulate => simulate(config, &mut report),
        Command::EstimateLe => estimate_le(config, &mut report),
        Command::TestLe => test_le(config, &mut report),
        Command::EstimateMrt => estimate_mrt(config, &mut report),
        Command::MonteCarlo => montecarlo(config, &mut report),
    };
    result.with_context(|| config.command.name().to_string())?;
    Ok(report)
}

fn seed(config: &RunConfig) -> Result<u64> {
    config.seed()?.ok_or_else(|| anyhow!("{} needs a seed", config.command.name()))
}

fn input(config: &RunConfig) -> Result<&Path> {
    Ok(Path::new(config.require("input")?))
}

fn key_value_table(name: &str, rows: Vec<(&str, Value)>) -> Table {
    let mut t = Table::new(name, &[("key", K::Text), ("value", K::Text)]);
    for (k, v) in rows {
        t.push(vec![Value::text(k), v]);
    }
    t
}

fn single_spec(config: &RunConfig) -> Result<SpecKind> {
    match config.get("spec") {
        None => Ok(SpecKind::Unrestricted),
        Some(_) => match config.specs()?.as_slice() {
            [s] => Ok(*s),
            _ => bail!("simulate takes a single spec"),
        },
    }
}

fn le_params(config: &RunConfig, spec: SpecKind) -> Result<LeParams> {
    let delta: f64 = config.required("delta")?;
    let p: f64 = config.required("p")?;
    Ok(match spec {
        SpecKind::Unrestricted => LeParams::unrestricted(delta, config.required("p0")?, config.required("p1")?)?,
        SpecKind::EqualP => LeParams::equal_p(delta, p)?,
        SpecKind::NoMisreport => LeParams::no_misreport(delta)?,
        SpecKind::Strategic => LeParams::strategic(delta, p)?,
    })
}

// ---- simulate ----

fn simulate(config: &RunConfig, report: &mut Report) -> Result<()> {
    let seed = seed(config)?;
    let n: usize = config.required("n")?;
    let out = config.output().ok_or_else(|| anyhow!("simulate needs output for the data file"))?;
    let design = config.require("design")?;
    let mut summary = vec![("design", Value::text(design)), ("records", Value::from(n))];
    match design {
        "le" => {
            let j: usize = config.required("j_count")?;
            let latent = match config.list_f64("control")? {
                Some(p) => ControlDistribution::new(j, p)?,
                None => ControlDistribution::uniform(j)?,
            };
            let spec = single_spec(config)?;
            let params = le_params(config, spec)?;
            let share: f64 = config.required("share")?;
            let data = match (config.parsed::<f64>("q1")?, config.parsed::<f64>("q0")?) {
                (None, None) => {
                    LeData { sample: simulate_le(&params, &latent, n, share, seed)?, direct: None, z_names: vec![] }
                }
                (Some(q1), Some(q0)) => {
                    let m = simulate_modified_le(&params, &latent, n, share, q1, q0, seed)?;
                    LeData { sample: m.sample, direct: Some(m.direct), z_names: vec![] }
                }
                _ => bail!("q1 and q0 must be given together"),
            };
            write_le_csv(&out, &data)?;
            let (n0, n1) = data.sample.group_sizes();
            summary.extend([
                ("spec", Value::text(spec.name())),
                ("control", Value::from(n0)),
                ("treatment", Value::from(n1)),
            ]);
        }
        "mrt-discrete" => {
            let sigma: f64 = config.required("sigma")?;
            let extra: usize = config.required("extra_covariates")?;
            let sample = simulate_discrete_design(&reference_discrete_truth(), n, sigma, seed)?;
            // Noise demographics come from their own family of streams.
            let noise_seed = derive_seed(seed, u64::MAX);
            let rows: Vec<([u8; 3], Vec<String>)> = sample
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = stream(noise_seed, i as u64);
                    let mut z = vec![r.cell.to_string()];
                    z.extend((0..extra).map(|_| rng.random_range(0..2u8).to_string()));
                    (r.x, z)
                })
                .collect();
            let names: Vec<String> = (1..=extra + 1).map(|k| format!("z_{k}")).collect();
            write_mrt_csv(&out, &names, &rows)?;
            summary.push(("sigma", Value::real(sigma)));
        }
        "mrt-continuous" => {
            let sigma: f64 = config.required("sigma")?;
            let sample = simulate_continuous_design(&reference_continuous_truth(), n, sigma, seed)?;
            let rows: Vec<([u8; 3], Vec<String>)> =
                sample.records.iter().map(|r| (r.x, r.z.iter().map(|v| format!("{v:?}")).collect())).collect();
            write_mrt_csv(&out, &["z_1".to_string()], &rows)?;
            summary.push(("sigma", Value::real(sigma)));
        }
        other => bail!("unknown design {other:?}; expected le, mrt-discrete or mrt-continuous"),
    }
    summary.push(("output", Value::text(out.display().to_string())));
    report.tables.push(key_value_table("simulation", summary));
    Ok(())
}

// ---- list experiments ----

/// Free parameters of a fitted specification, with their names.
fn free_params(theta: &LeParams) -> Vec<(&'static str, f64)> {
    match theta.spec {
        MisreportSpec::Unrestricted => vec![("delta", theta.delta), ("p0", theta.p0), ("p1", theta.p1)],
        MisreportSpec::EqualP => vec![("delta", theta.delta), ("p", theta.p0)],
        MisreportSpec::NoMisreport => vec![("delta", theta.delta)],
        MisreportSpec::Strategic { p } => vec![("delta", theta.delta), ("p", p)],
    }
}

fn boot_config(config: &RunConfig, seed: u64, stratify_by: Stratify) -> Result<BootstrapConfig> {
    Ok(BootstrapConfig { n_reps: config.n_boot()?, seed, stratify_by, ..Default::default() })
}

/// Bootstrap result, or `None` when `n_boot = 0`.
fn maybe_bootstrap<S, F>(
    config: &RunConfig,
    sample: &S,
    estimator: F,
    stream_index: u64,
    stratify_by: Stratify,
    report: &mut Report,
    what: &str,
) -> Result<Option<BootstrapResult>>
where
    S: elicit_core::resampling::Resample,
    F: Fn(&S) -> elicit_core::Result<Vec<f64>> + Sync,
{
    if config.n_boot()? == 0 {
        return Ok(None);
    }
    let seed = derive_seed(seed(config)?, stream_index);
    match bootstrap(sample, estimator, &boot_config(config, seed, stratify_by)?) {
        Ok(b) => {
            if b.n_failed > 0 {
                report.diagnose("dropped_replicates", format!("{what}: {} bootstrap replicates failed", b.n_failed));
            }
            Ok(Some(b))
        }
        Err(e) => {
            report.diagnose("bootstrap_failed", format!("{what}: {e}"));
            Ok(None)
        }
    }
}

fn se_cells(boot: Option<&BootstrapResult>, k: usize) -> [Value; 3] {
    match boot {
        Some(b) => [Value::real(b.se[k]), Value::real(b.ci95[k].0), Value::real(b.ci95[k].1)],
        None => [Value::Unavailable, Value::Unavailable, Value::Unavailable],
    }
}

fn gmm_diagnostics(report: &mut Report, spec: SpecKind, r: &GmmResult) {
    if r.ridge_regularized {
        report.diagnose("ridge_regularized", format!("{}: moment covariance was ridge-regularized", spec.name()));
    }
    if !r.converged {
        report.diagnose("not_converged", format!("{}: optimizer did not converge", spec.name()));
    }
}

fn load_le(config: &RunConfig) -> Result<LeData> {
    let j: usize = config.required("j_count")?;
    load_le_csv(input(config)?, j)
}

fn estimate_le(config: &RunConfig, report: &mut Report) -> Result<()> {
    let data = load_le(config)?;
    let sample = &data.sample;
    let policy = config.drop_policy()?;
    let mut table = Table::new(
        "le_estimates",
        &[
            ("method", K::Text),
            ("parameter", K::Text),
            ("estimate", K::Real),
            ("se", K::Real),
            ("ci_low", K::Real),
            ("ci_high", K::Real),
        ],
    );

    let md = mean_difference(sample)?;
    let boot = maybe_bootstrap(config, sample, |s: &LeSample| Ok(vec![mean_difference(s)?]), 0, Stratify::Group, report, "mean_difference")?;
    let mut row = vec![Value::text("mean_difference"), Value::text("delta"), Value::real(md)];
    row.extend(se_cells(boot.as_ref(), 0));
    table.push(row);

    for (i, spec) in config.specs()?.into_iter().enumerate() {
        let fit = match j_test(sample, spec, policy) {
            Ok(f) => f,
            Err(e) => {
                report.diagnose("estimation_failed", format!("{}: {e}", spec.name()));
                continue;
            }
        };
        gmm_diagnostics(report, spec, &fit);
        // Replicates reuse the moment dropped on the full sample.
        let fixed = DropPolicy::Fixed(fit.dropped_index);
        let estimator = |s: &LeSample| {
            let r = j_test(s, spec, fixed)?;
            Ok(free_params(&r.theta_hat).into_iter().map(|(_, v)| v).collect())
        };
        let boot = maybe_bootstrap(config, sample, estimator, 1 + i as u64, Stratify::Group, report, spec.name())?;
        for (k, (name, v)) in free_params(&fit.theta_hat).into_iter().enumerate() {
            let mut row = vec![Value::text(format!("gmm_{}", spec.name())), Value::text(name), Value::real(v)];
            row.extend(se_cells(boot.as_ref(), k));
            table.push(row);
        }
    }

    if sample.j_count == 3 {
        let (c, t, _, _) = empirical_distributions(sample)?;
        match solve_le_closed_form(&c, &t)? {
            ClosedFormLe::Identified(p) => {
                for (name, v) in [("delta", p.delta), ("p0", p.p0), ("p1", p.p1)] {
                    table.push(vec![
                        Value::text("closed_form"),
                        Value::text(name),
                        Value::real(v),
                        Value::Unavailable,
                        Value::Unavailable,
                        Value::Unavailable,
                    ]);
                }
            }
            ClosedFormLe::Unidentified(why) => report.diagnose("closed_form_unidentified", why),
        }
    }
    report.tables.push(table);
    Ok(())
}

fn test_le(config: &RunConfig, report: &mut Report) -> Result<()> {
    let data = load_le(config)?;
    let sample = &data.sample;
    let policy = config.drop_policy()?;
    let mut table = Table::new(
        "j_tests",
        &[
            ("spec", K::Text),
            ("t_stat", K::Real),
            ("dof", K::Integer),
            ("p_value", K::Real),
            ("marker", K::Text),
            ("dropped_index", K::Integer),
            ("verdict", K::Text),
        ],
    );
    for spec in config.specs()? {
        match j_test(sample, spec, policy) {
            Ok(r) => {
                gmm_diagnostics(report, spec, &r);
                table.push(vec![
                    Value::text(spec.name()),
                    Value::real(r.t_stat),
                    Value::from(r.dof),
                    Value::real(r.p_value),
                    Value::text(significance_marker(r.p_value)),
                    Value::from(r.dropped_index),
                    Value::text(if r.p_value < 0.05 { "rejected" } else { "not rejected" }),
                ]);
            }
            Err(e) => {
                report.diagnose("estimation_failed", format!("{}: {e}", spec.name()));
                table.push(vec![
                    Value::text(spec.name()),
                    Value::Unavailable,
                    Value::from(sample.j_count + 2 - 1 - spec.free_params()),
                    Value::Unavailable,
                    Value::Unavailable,
                    Value::Unavailable,
                    Value::text("failed"),
                ]);
            }
        }
    }
    report.tables.push(table);

    let cm = control_mean_test(sample)?;
    let mut t = Table::new(
        "control_mean_test",
        &[
            ("mean", K::Real),
            ("null", K::Real),
            ("se", K::Real),
            ("z", K::Real),
            ("p_value", K::Real),
            ("marker", K::Text),
        ],
    );
    t.push(vec![
        Value::real(cm.mean),
        Value::real(sample.j_count as f64 / 2.0),
        Value::real(cm.se),
        Value::real(cm.z),
        Value::real(cm.p_value),
        Value::text(significance_marker(cm.p_value)),
    ]);
    report.tables.push(t);

    if let Some(direct) = &data.direct {
        let mut t = Table::new(
            "modified_le",
            &[("mean_difference", K::Real), ("direct_rate", K::Real), ("gap", K::Real), ("gap_se", K::Real)],
        );
        let n_boot = config.n_boot()?;
        if n_boot > 0 {
            let m = modified_le_check(sample, direct, n_boot, derive_seed(seed(config)?, 1))?;
            t.push(vec![Value::real(m.mean_diff), Value::real(m.direct_rate), Value::real(m.gap), Value::real(m.gap_se)]);
            report.diagnose("zero_gap_not_sufficient", m.caveat);
        } else {
            let md = mean_difference(sample)?;
            let rate = direct.iter().map(|d| f64::from(*d)).sum::<f64>() / direct.len() as f64;
            t.push(vec![Value::real(md), Value::real(rate), Value::real(rate - md), Value::Unavailable]);
            report.diagnose("zero_gap_not_sufficient", elicit_core::gmm::ZERO_GAP_CAVEAT);
        }
        report.tables.push(t);
    }
    Ok(())
}

// ---- multiple responses ----

fn estimate_from_vec(v: &[f64]) -> MrtEstimate {
    MrtEstimate {
        pr_xstar: v[0],
        pr_x_given_xstar: [[v[1], v[2]], [v[3], v[4]], [v[5], v[6]]],
        method: MrtMethod::Extreme,
        clipped: false,
        eigen_gap: 0.0,
    }
}

fn method_name(m: MrtMethod) -> &'static str {
    match m {
        MrtMethod::ClosedForm => "closed_form",
        MrtMethod::Extreme => "extreme",
    }
}

struct MrtTables {
    estimates: Table,
    rank: Table,
    rates: Table,
    plot: Table,
}

impl MrtTables {
    fn new() -> Self {
        let se = [("se", K::Real), ("ci_low", K::Real), ("ci_high", K::Real)];
        let mut est = vec![("group", K::Text), ("n", K::Integer), ("method", K::Text), ("parameter", K::Text), ("estimate", K::Real)];
        est.extend(se);
        let mut rates = vec![("group", K::Text), ("question", K::Integer), ("rate", K::Text), ("estimate", K::Real)];
        rates.extend(se);
        rates.push(("p_value", K::Real));
        Self {
            estimates: Table::new("mrt_estimates", &est),
            rank: Table::new(
                "rank_tests",
                &[
                    ("group", K::Text),
                    ("n", K::Integer),
                    ("statistic", K::Real),
                    ("p_value", K::Real),
                    ("reject_rank1", K::Flag),
                    ("underpowered", K::Flag),
                ],
            ),
            rates: Table::new("misreport_rates", &rates),
            plot: Table::new(
                "plot",
                &[("group", K::Text), ("estimate", K::Real), ("ci_low", K::Real), ("ci_high", K::Real)],
            ),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn mrt_group(
    config: &RunConfig,
    report: &mut Report,
    tables: &mut MrtTables,
    label: &str,
    joint: &MrtJoint,
    index: u64,
    x2_fix: u8,
    ordering: OrderingRule,
    truthful_yes: [u8; 3],
) -> Result<()> {
    let seed = seed(config)?;
    let n = joint.n_cell as usize;
    let draws = match config.n_boot()? {
        0 => RANK_TEST_DRAWS,
        b => b,
    };
    match rank_test(joint, draws, derive_seed(seed, 2 * index)) {
        Ok(r) => tables.rank.push(vec![
            Value::text(label),
            Value::from(n),
            Value::real(r.statistic),
            Value::real(r.p_value),
            Value::Flag(r.reject_rank1),
            Value::Flag(r.underpowered),
        ]),
        Err(e) => report.diagnose("rank_test_failed", format!("{label}: {e}")),
    }

    let mut extreme = None;
    for method in [MrtMethod::ClosedForm, MrtMethod::Extreme] {
        let fit = |j: &MrtJoint| match method {
            MrtMethod::ClosedForm => decompose_closed_form(j, x2_fix, ordering),
            MrtMethod::Extreme => decompose_extreme(j, x2_fix, ordering),
        };
        let name = method_name(method);
        let est = match fit(joint) {
            Ok(e) => e,
            Err(e) => {
                report.diagnose("estimate_unavailable", format!("{label} {name}: {e}"));
                for p in ESTIMATE_NAMES {
                    tables.estimates.push(vec![
                        Value::text(label),
                        Value::from(n),
                        Value::text(name),
                        Value::text(p),
                        Value::Unavailable,
                        Value::Unavailable,
                        Value::Unavailable,
                        Value::Unavailable,
                    ]);
                }
                continue;
            }
        };
        if est.clipped {
            report.diagnose("clipped", format!("{label} {name}: estimates clipped to [0, 1]"));
        }
        let stream_index = 2 * index + 1 + u64::from(method == MrtMethod::Extreme) * (1 << 32);
        let what = format!("{label} {name}");
        let boot =
            maybe_bootstrap(config, joint, |j: &MrtJoint| Ok(fit(j)?.to_vec()), stream_index, Stratify::None, report, &what)?;
        for (k, (p, v)) in ESTIMATE_NAMES.iter().zip(est.to_vec()).enumerate() {
            let mut row = vec![Value::text(label), Value::from(n), Value::text(name), Value::text(*p), Value::real(v)];
            row.extend(se_cells(boot.as_ref(), k));
            tables.estimates.push(row);
        }
        if method == MrtMethod::Extreme {
            extreme = Some((est, boot));
        }
    }

    let Some((est, boot)) = extreme else { return Ok(()) };
    let mut plot_row = vec![Value::text(label), Value::real(est.pr_xstar)];
    plot_row.extend(se_cells(boot.as_ref(), 0).into_iter().skip(1));
    tables.plot.push(plot_row);
    for q in 1..=3 {
        let truth_for = truthful_yes[q - 1];
        let rates = misreport_rates(&est, q, truth_for)?;
        let reps: Option<Vec<(f64, f64)>> = boot.as_ref().map(|b| {
            b.estimates
                .iter()
                .filter_map(|v| misreport_rates(&estimate_from_vec(v), q, truth_for).ok())
                .map(|r| (r.q1, r.q0))
                .collect()
        });
        for (rate, value, pick) in [("q1", rates.q1, 0usize), ("q0", rates.q0, 1usize)] {
            let mut row = vec![Value::text(label), Value::from(q), Value::text(rate), Value::real(value)];
            match &reps {
                Some(r) if r.len() > 1 => {
                    let col: Vec<f64> = r.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
                    let mut sorted = col.clone();
                    sorted.sort_by(f64::total_cmp);
                    row.extend([
                        Value::real(elicit_core::stats::sd(&col)),
                        Value::real(elicit_core::stats::quantile_sorted(&sorted, 0.025)),
                        Value::real(elicit_core::stats::quantile_sorted(&sorted, 0.975)),
                        Value::maybe(one_sided_pvalue(&col, 0.0, Direction::Greater).ok()),
                    ]);
                }
                _ => row.extend([Value::Unavailable, Value::Unavailable, Value::Unavailable, Value::Unavailable]),
            }
            tables.rates.push(row);
        }
    }
    Ok(())
}

fn estimate_mrt(config: &RunConfig, report: &mut Report) -> Result<()> {
    let continuous = config.mode()? == MrtMode::Continuous;
    match load_mrt_csv(input(config)?, continuous)? {
        MrtData::Continuous { z_names, sample } => estimate_mle(config, report, &z_names, &sample),
        MrtData::Discrete(data) => {
            let ordering = config.ordering()?;
            let x2_fix: u8 = config.required("x2_fix")?;
            let truthful_yes = config.truthful_yes()?;
            let mut tables = MrtTables::new();
            let mut groups = vec![("overall".to_string(), data.pooled())];
            for (k, name) in data.z_names.iter().enumerate() {
                for (level, joint) in data.by_covariate(k) {
                    groups.push((format!("{name}={level}"), joint));
                }
            }
            for (i, (label, joint)) in groups.iter().enumerate() {
                mrt_group(config, report, &mut tables, label, joint, i as u64, x2_fix, ordering, truthful_yes)?;
            }

            // Unconditional share from the full covariate cells.
            let cells = data.cells();
            let n = data.records.len() as f64;
            let mut agg = Table::new("aggregate", &[("method", K::Text), ("cells", K::Integer), ("pr_xstar", K::Real)]);
            for method in [MrtMethod::ClosedForm, MrtMethod::Extreme] {
                let per_cell: Result<Vec<(MrtEstimate, f64)>, _> = cells
                    .iter()
                    .map(|(_, j)| {
                        let e = match method {
                            MrtMethod::ClosedForm => decompose_closed_form(j, x2_fix, ordering),
                            MrtMethod::Extreme => decompose_extreme(j, x2_fix, ordering),
                        };
                        e.map(|e| (e, j.n_cell as f64 / n))
                    })
                    .collect();
                let value = match per_cell.and_then(|p| aggregate_unconditional(&normalized(p))) {
                    Ok(v) => Value::real(v),
                    Err(e) => {
                        report.diagnose("aggregate_unavailable", format!("{}: {e}", method_name(method)));
                        Value::Unavailable
                    }
                };
                agg.push(vec![Value::text(method_name(method)), Value::from(cells.len()), value]);
            }

            if let Some(path) = config.plot() {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(tables.plot.columns.iter().map(|c| c.name.as_str()))?;
                for r in &tables.plot.rows {
                    w.write_record(r.iter().map(Value::render))?;
                }
                write_atomic(&path, &w.into_inner()?)?;
            }
            report.tables.extend([tables.rank, tables.estimates, tables.rates, agg, tables.plot]);
            Ok(())
        }
    }
}

/// Rescales cell weights so that rounding never trips the sum-to-one check.
fn normalized(mut p: Vec<(MrtEstimate, f64)>) -> Vec<(MrtEstimate, f64)> {
    let total: f64 = p.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut p {
        *w /= total;
    }
    p
}

fn estimate_mle(config: &RunConfig, report: &mut Report, z_names: &[String], sample: &MrtContinuousSample) -> Result<()> {
    let options = MleOptions {
        intercept: config.required("intercept")?,
        starts: config.required("starts")?,
        ordering: config.ordering()?,
        seed: seed(config)?,
        ..Default::default()
    };
    let fit = mle_fit(sample, &options)?;
    if fit.se.is_none() {
        report.diagnose("se_unavailable", "observed information is not positive definite");
    }
    if fit.small_sample {
        report.diagnose("small_sample", "fewer than 100 records");
    }
    if !fit.converged {
        report.diagnose("not_converged", "no start reached the convergence tolerance");
    }
    let mut t = Table::new("mle_fit", &[("parameter", K::Text), ("estimate", K::Real), ("se", K::Real)]);
    let names = fit.params.names();
    for (k, (name, v)) in names.iter().zip(fit.params.to_vec()).enumerate() {
        // Slope k of each index refers to the k-th z column of the input.
        let label = z_names.iter().enumerate().fold(name.clone(), |acc, (i, z)| {
            acc.replace(&format!("_z{}", i + 1), &format!("_{z}"))
        });
        t.push(vec![Value::text(label), Value::real(v), Value::maybe(fit.se.as_ref().map(|s| s[k]))]);
    }
    report.tables.push(t);
    report.tables.push(key_value_table(
        "mle_summary",
        vec![
            ("records", Value::from(sample.records.len())),
            ("loglik", Value::real(fit.loglik)),
            ("converged", Value::Flag(fit.converged)),
            ("starts_tried", Value::from(fit.starts_tried)),
            ("starts_converged", Value::from(fit.starts_converged)),
        ],
    ));
    Ok(())
}

// ---- Monte Carlo ----

fn montecarlo(config: &RunConfig, report: &mut Report) -> Result<()> {
    let sigma: f64 = config.required("sigma")?;
    let kind = match (config.get("design").unwrap_or("discrete"), sigma > 0.0) {
        ("discrete", false) => DesignKind::DiscreteZ,
        ("discrete", true) => DesignKind::DiscreteZCorrelated { sigma },
        ("continuous", false) => DesignKind::ContinuousZ,
        ("continuous", true) => DesignKind::ContinuousZCorrelated { sigma },
        (other, _) => bail!("unknown Monte Carlo design {other:?}; expected discrete or continuous"),
    };
    let estimators: Vec<McEstimator> = match config.get("estimators") {
        Some(list) => list
            .split(',')
            .map(|s| match s.trim() {
                "closed_form" => Ok(McEstimator::ClosedForm),
                "extreme" => Ok(McEstimator::Extreme),
                "mle" => Ok(McEstimator::Mle),
                "rank_test" => Ok(McEstimator::RankTest),
                other => Err(anyhow!("unknown estimator {other:?}")),
            })
            .collect::<Result<_>>()?,
        None if kind.is_discrete() => vec![McEstimator::ClosedForm, McEstimator::Extreme, McEstimator::RankTest],
        None => vec![McEstimator::Mle],
    };
    let design = McDesign::reference(kind, config.required("n")?, config.required("reps")?, seed(config)?);
    let table = run_monte_carlo(&design, &estimators)?;
    report.tables.push(key_value_table(
        "design",
        vec![
            ("design", Value::text(table.design.clone())),
            ("mechanism", Value::text(table.mechanism.clone())),
            ("n", Value::from(table.n)),
            ("reps", Value::from(table.n_reps)),
            ("seed", Value::Int(table.seed as i64)),
        ],
    ));
    let mut t = Table::new(
        "monte_carlo",
        &[
            ("estimator", K::Text),
            ("parameter", K::Text),
            ("truth", K::Real),
            ("mean", K::Real),
            ("sd", K::Real),
            ("median", K::Real),
            ("n_ok", K::Integer),
            ("n_failed", K::Integer),
        ],
    );
    for r in &table.rows {
        t.push(vec![
            Value::text(r.estimator.clone()),
            Value::text(r.parameter.clone()),
            Value::maybe(r.truth),
            Value::real(r.mean),
            Value::real(r.sd),
            Value::real(r.median),
            Value::from(r.n_ok),
            Value::from(r.n_failed),
        ]);
    }
    let mut flagged: Vec<&str> = Vec::new();
    for r in &table.rows {
        if r.n_failed > 0 && !flagged.contains(&r.estimator.as_str()) {
            flagged.push(&r.estimator);
            report.diagnose(
                "dropped_replicates",
                format!("{}: {} of {} replications failed", r.estimator, r.n_failed, table.n_reps),
            );
        }
    }
    report.tables.push(t);
    Ok(())
}
