use super::*;
use crate::le::{le_forward, mean_difference_analytic, simulate_le, simulate_modified_le, LeRecord};
use crate::rng::{stream, SimRng};
use rand::Rng;

fn control(j: usize, rng: &mut SimRng) -> ControlDistribution {
    let w: Vec<f64> = (0..=j).map(|_| 0.2 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    ControlDistribution::new(j, w.iter().map(|x| x / s).collect()).unwrap()
}

fn population(theta: &LeParams, p0: &ControlDistribution) -> TreatmentDistribution {
    le_forward(theta, p0).unwrap()
}

fn objective(p0: &ControlDistribution, p1: &TreatmentDistribution, theta: &LeParams) -> f64 {
    let spec = MomentSpec::new(p0.j_count(), SpecKind::of(&theta.spec), 0).unwrap();
    let input = MomentInput::Population { control: p0, treatment: p1, c0: 0.5, c1: 0.5 };
    moment_values(input, theta, &spec).unwrap().iter().map(|m| m * m).sum()
}

#[test]
fn moments_vanish_at_truth() {
    let mut rng = stream(1, 0);
    for j in 3..=5 {
        let p0 = control(j, &mut rng);
        for theta in [
            LeParams::unrestricted(0.4, 0.05, 0.1).unwrap(),
            LeParams::equal_p(0.3, 0.08).unwrap(),
            LeParams::no_misreport(0.25).unwrap(),
            LeParams::strategic(0.35, 0.4).unwrap(),
        ] {
            let p1 = population(&theta, &p0);
            let spec = MomentSpec::new(j, SpecKind::of(&theta.spec), 0).unwrap();
            let input = MomentInput::Population { control: &p0, treatment: &p1, c0: 0.5, c1: 0.5 };
            let m = moment_values(input, &theta, &spec).unwrap();
            assert_eq!(m.len(), j + 2);
            assert!(m.iter().all(|v| v.abs() < 1e-12), "{m:?}");
        }
    }
}

#[test]
fn perturbed_delta_moves_moments() {
    let p0 = ControlDistribution::uniform(4).unwrap();
    let truth = LeParams::unrestricted(0.4, 0.05, 0.1).unwrap();
    let p1 = population(&truth, &p0);
    let off = LeParams::unrestricted(0.5, 0.05, 0.1).unwrap();
    let spec = MomentSpec::new(4, SpecKind::Unrestricted, 0).unwrap();
    let input = MomentInput::Population { control: &p0, treatment: &p1, c0: 0.5, c1: 0.5 };
    let m = moment_values(input, &off, &spec).unwrap();
    // The latent count stays uniform at 0.2 and truthful treated respondents
    // (share 1 - p1) move mass 0.1 * 0.2 up one count.
    let hand: Vec<f64> = (0..6)
        .map(|y| {
            let below = if y >= 1 { 0.2 } else { 0.0 };
            let here = if y <= 4 { 0.2 } else { 0.0 };
            0.1 * (1.0 - 0.1) * (below - here)
        })
        .collect();
    for (a, b) in m.iter().zip(&hand) {
        assert!((a - b).abs() < 1e-12, "{m:?} vs {hand:?}");
    }
    assert!(m.iter().any(|v| v.abs() > 1e-3));
}

#[test]
fn objective_rises_away_from_true_delta() {
    let mut rng = stream(2, 0);
    for case in 0..50 {
        let j = 3 + case % 3;
        let p0 = control(j, &mut rng);
        let delta = 0.15 + 0.7 * rng.random::<f64>();
        let (a, b) = (0.1 * rng.random::<f64>(), 0.1 * rng.random::<f64>());
        let truth = LeParams::unrestricted(delta, a, b).unwrap();
        let p1 = population(&truth, &p0);
        assert!(objective(&p0, &p1, &truth) < 1e-24);
        for step in [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2] {
            let d = delta + step;
            if !(0.0..1.0).contains(&d) {
                continue;
            }
            let off = LeParams::unrestricted(d, a, b).unwrap();
            assert!(objective(&p0, &p1, &off) > 1e-8, "case {case} step {step}");
        }
    }
}

#[test]
fn all_zero_sample_at_zero_parameters() {
    let records: Vec<LeRecord> =
        (0..20).map(|i| LeRecord { y: 0, t: (i % 2) as u8, z: vec![] }).collect();
    let sample = LeSample::new(3, records).unwrap();
    let theta = LeParams::unrestricted(0.0, 0.0, 0.0).unwrap();
    let spec = MomentSpec::new(3, SpecKind::Unrestricted, 0).unwrap();
    let m = moment_values(MomentInput::Sample(&sample), &theta, &spec).unwrap();
    // Predicted and observed treatment mass both sit entirely at zero.
    assert_eq!(m, vec![0.0; 5]);
    // With delta = 1 all predicted mass moves to one, leaving -1 at zero.
    let theta = LeParams::unrestricted(1.0 - 1e-9, 0.0, 0.0).unwrap();
    let m = moment_values(MomentInput::Sample(&sample), &theta, &spec).unwrap();
    assert!((m[0] + 1.0).abs() < 1e-8 && (m[1] - 1.0).abs() < 1e-8);
}

#[test]
fn exact_null_gives_zero_statistic() {
    let p0 = ControlDistribution::new(4, vec![0.1, 0.25, 0.3, 0.2, 0.15]).unwrap();
    let truth = LeParams::unrestricted(0.4, 0.05, 0.1).unwrap();
    let p1 = population(&truth, &p0);
    for k in 0..=5 {
        let spec = MomentSpec::new(4, SpecKind::Unrestricted, k).unwrap();
        let r = gmm_estimate_population(&p0, &p1, 0.5, 0.5, 2000, &spec).unwrap();
        assert!(r.t_stat < 1e-6, "drop {k}: {}", r.t_stat);
        assert!(r.p_value > 0.999);
        assert_eq!(r.dof, 2);
        assert!((r.theta_hat.delta - 0.4).abs() < 1e-4);
    }
    let r = j_test_population(&p0, &p1, 0.5, 0.5, 2000, SpecKind::Unrestricted, DropPolicy::MinPValueOverDrops)
        .unwrap();
    assert!(r.p_value > 0.999);
}

#[test]
fn degrees_of_freedom_by_specification() {
    let dof = |s| MomentSpec::new(4, s, 0).unwrap().dof();
    assert_eq!(dof(SpecKind::Unrestricted), 2);
    assert_eq!(dof(SpecKind::EqualP), 3);
    assert_eq!(dof(SpecKind::NoMisreport), 4);
    assert_eq!(dof(SpecKind::Strategic), 3);
    assert!(MomentSpec::new(4, SpecKind::Unrestricted, 6).is_err());
}

#[test]
fn no_misreport_recovers_mean_difference() {
    let p0 = ControlDistribution::new(3, vec![0.15, 0.35, 0.2, 0.3]).unwrap();
    let truth = LeParams::no_misreport(0.37).unwrap();
    let p1 = population(&truth, &p0);
    let spec = MomentSpec::new(3, SpecKind::NoMisreport, 0).unwrap();
    let r = gmm_estimate_population(&p0, &p1, 0.5, 0.5, 1000, &spec).unwrap();
    let md = p1.mean() - p0.mean();
    assert!((r.theta_hat.delta - md).abs() < 1e-6, "{} vs {md}", r.theta_hat.delta);
}

#[test]
fn uniform_control_leaves_control_misreporting_unidentified() {
    // Uniform random answers leave a uniform count distribution unchanged, so
    // p0 drops out of the treatment distribution entirely.
    let p0 = ControlDistribution::uniform(4).unwrap();
    let a = population(&LeParams::unrestricted(0.4, 0.05, 0.1).unwrap(), &p0);
    let b = population(&LeParams::unrestricted(0.4, 0.6, 0.1).unwrap(), &p0);
    for (x, y) in a.probs().iter().zip(b.probs()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn simulated_null_is_recovered() {
    let p0 = ControlDistribution::new(4, vec![0.4, 0.3, 0.15, 0.1, 0.05]).unwrap();
    let truth = LeParams::unrestricted(0.4, 0.05, 0.1).unwrap();
    let mut close = 0;
    let mut accepted = 0;
    for seed in 0..100 {
        let s = simulate_le(&truth, &p0, 20_000, 0.5, seed).unwrap();
        let r = gmm_estimate(&s, &MomentSpec::new(4, SpecKind::Unrestricted, 0).unwrap()).unwrap();
        close += usize::from((r.theta_hat.delta - 0.4).abs() < 0.03);
        accepted += usize::from(r.p_value > 0.05);
    }
    assert!(close >= 90, "{close}");
    assert!(accepted >= 90, "{accepted}");
}

#[test]
fn statistic_is_invariant_to_record_order() {
    let p0 = ControlDistribution::uniform(3).unwrap();
    let truth = LeParams::equal_p(0.3, 0.05).unwrap();
    let s = simulate_le(&truth, &p0, 3000, 0.5, 11).unwrap();
    let mut shuffled = s.records.clone();
    shuffled.reverse();
    shuffled.rotate_left(1234);
    let t = LeSample::new(3, shuffled).unwrap();
    let spec = MomentSpec::new(3, SpecKind::EqualP, 2).unwrap();
    let a = gmm_estimate(&s, &spec).unwrap();
    let b = gmm_estimate(&t, &spec).unwrap();
    assert_eq!(a.t_stat, b.t_stat);
    assert_eq!(a.theta_hat, b.theta_hat);
}

#[test]
fn too_few_items_is_an_identification_error() {
    let p0 = ControlDistribution::uniform(2).unwrap();
    let truth = LeParams::unrestricted(0.4, 0.0, 0.0).unwrap();
    let s = simulate_le(&truth, &p0, 500, 0.5, 3).unwrap();
    let err = gmm_estimate(&s, &MomentSpec::new(2, SpecKind::Unrestricted, 0).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Identification(_)));
}

#[test]
fn empty_group_is_a_domain_error() {
    let records: Vec<LeRecord> = (0..10).map(|i| LeRecord { y: i % 4, t: 0, z: vec![] }).collect();
    assert!(LeSample::new(3, records.clone()).is_err());
    let s = LeSample { j_count: 3, records };
    let theta = LeParams::unrestricted(0.4, 0.0, 0.0).unwrap();
    let spec = MomentSpec::new(3, SpecKind::Unrestricted, 0).unwrap();
    assert!(moment_values(MomentInput::Sample(&s), &theta, &spec).is_err());
    assert!(mean_difference(&s).is_err());
}

#[test]
fn ridge_applies_to_singular_covariance() {
    let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let (inv, ridged) = robust_inverse(&s).unwrap();
    assert!(ridged);
    assert!(inv.iter().all(|v| v.is_finite()));
    let (inv, ridged) = robust_inverse(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0])).unwrap();
    assert!(!ridged);
    assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
}

#[test]
fn control_mean_test_centers_on_half_of_j() {
    let mut records: Vec<LeRecord> =
        [0, 1, 2, 3, 4, 1, 2, 3].iter().map(|&y| LeRecord { y, t: 0, z: vec![] }).collect();
    records.push(LeRecord { y: 5, t: 1, z: vec![] });
    let s = LeSample::new(4, records).unwrap();
    let r = control_mean_test(&s).unwrap();
    assert_eq!(r.mean, 2.0);
    assert_eq!(r.z, 0.0);
    assert!((r.p_value - 1.0).abs() < 1e-12);
}

#[test]
fn direct_rate_of_all_zero_answers_is_zero() {
    let p0 = ControlDistribution::uniform(3).unwrap();
    let s = simulate_le(&LeParams::no_misreport(0.3).unwrap(), &p0, 400, 0.5, 5).unwrap();
    let n0 = s.group_sizes().0;
    let r = modified_le_check(&s, &vec![0; n0], 200, 1).unwrap();
    assert_eq!(r.direct_rate, 0.0);
    assert!(r.zero_gap_not_sufficient);
    assert_eq!(r.caveat, ZERO_GAP_CAVEAT);
    assert!(modified_le_check(&s, &vec![0; n0 + 1], 200, 1).is_err());
}

#[test]
fn truthful_reporting_closes_the_gap() {
    let p0 = ControlDistribution::uniform(4).unwrap();
    let m = simulate_modified_le(&LeParams::no_misreport(0.3).unwrap(), &p0, 100_000, 0.5, 0.0, 0.0, 7).unwrap();
    let r = modified_le_check(&m.sample, &m.direct, 200, 2).unwrap();
    assert!(r.gap.abs() < 3.0 * r.gap_se, "{} vs se {}", r.gap, r.gap_se);
}

#[test]
fn misreporting_can_also_close_the_gap() {
    let p0 = ControlDistribution::uniform(4).unwrap();
    let theta = LeParams::equal_p(0.3, 0.1).unwrap();
    let q1 = 0.2;
    // Choose the false-affirmation rate so the direct rate equals the mean difference.
    let md = mean_difference_analytic(&theta, &p0).unwrap();
    let q0 = (md - (1.0 - q1) * 0.3) / 0.7;
    assert!((q0 - 0.08 / 0.7).abs() < 1e-12);
    let m = simulate_modified_le(&theta, &p0, 100_000, 0.5, q1, q0, 9).unwrap();
    let r = modified_le_check(&m.sample, &m.direct, 200, 3).unwrap();
    assert!(r.gap.abs() < 3.0 * r.gap_se, "{} vs se {}", r.gap, r.gap_se);
    assert!(r.zero_gap_not_sufficient);
}
