use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn control(j: usize, probs: &[f64]) -> ControlDistribution {
    ControlDistribution::new(j, probs.to_vec()).unwrap()
}

fn assert_vec_close(a: &[f64], b: &[f64], eps: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_abs_diff_eq!(x, y, epsilon = eps);
    }
}

#[test]
fn forward_without_trait_or_noise_copies_control() {
    let c = control(3, &[0.1, 0.2, 0.3, 0.4]);
    let p = LeParams::unrestricted(0.0, 0.0, 0.0).unwrap();
    let t = le_forward(&p, &c).unwrap();
    assert_vec_close(t.probs(), &[0.1, 0.2, 0.3, 0.4, 0.0], 0.0);
}

#[test]
fn forward_with_universal_trait_shifts_by_one() {
    let c = control(3, &[0.1, 0.2, 0.3, 0.4]);
    let p = LeParams::unrestricted(0.999_999_999_999, 0.0, 0.0).unwrap();
    let t = le_forward(&p, &c).unwrap();
    assert_vec_close(t.probs(), &[0.0, 0.1, 0.2, 0.3, 0.4], 1e-11);
}

#[test]
fn forward_matches_enumerated_two_stage_process() {
    // Exact rational enumeration of truthful draw followed by uniform mixing.
    let c = control(3, &[0.25; 4]);
    let p = LeParams::unrestricted(0.3, 0.1, 0.2).unwrap();
    let t = le_forward(&p, &c).unwrap();
    assert_vec_close(t.probs(), &[0.18, 0.24, 0.24, 0.24, 0.10], 1e-15);

    let latent = control(4, &[0.1, 0.2, 0.3, 0.25, 0.15]);
    let p = LeParams::unrestricted(0.35, 0.2, 0.3).unwrap();
    let obs = observed_control(&p, &latent);
    assert_vec_close(obs.probs(), &[0.12, 0.2, 0.28, 0.24, 0.16], 1e-15);
    let t = le_forward(&p, &obs).unwrap();
    assert_vec_close(t.probs(), &[0.0955, 0.1655, 0.2355, 0.23725, 0.1795, 0.08675], 1e-15);
}

#[test]
fn strategic_forward_matches_hand_values() {
    let c = control(3, &[0.1, 0.2, 0.3, 0.4]);
    let p = LeParams::strategic(0.4, 0.5).unwrap();
    let t = le_forward(&p, &c).unwrap();
    assert_vec_close(t.probs(), &[0.06, 0.16, 0.26, 0.44, 0.08], 1e-15);
}

#[test]
fn strategic_without_deviation_equals_truthful_model() {
    let c = control(4, &[0.1, 0.2, 0.3, 0.25, 0.15]);
    let s = le_forward(&LeParams::strategic(0.37, 0.0).unwrap(), &c).unwrap();
    let u = le_forward(&LeParams::unrestricted(0.37, 0.0, 0.0).unwrap(), &c).unwrap();
    assert_eq!(s.probs(), u.probs());
}

#[test]
fn forward_rejects_control_below_noise_floor() {
    let c = control(3, &[0.0, 0.3, 0.3, 0.4]);
    let p = LeParams::unrestricted(0.2, 0.1, 0.1).unwrap();
    assert!(matches!(le_forward(&p, &c), Err(Error::Domain(_))));
}

#[test]
fn params_reject_out_of_range_and_inconsistent_specs() {
    assert!(LeParams::unrestricted(1.0, 0.0, 0.0).is_err());
    assert!(LeParams::unrestricted(0.2, -0.1, 0.0).is_err());
    assert!(LeParams::new(0.2, 0.1, 0.2, MisreportSpec::EqualP).is_err());
    assert!(LeParams::new(0.2, 0.1, 0.0, MisreportSpec::NoMisreport).is_err());
    assert!(LeParams::strategic(0.2, 1.0).is_err());
    assert!(ControlDistribution::new(3, vec![0.5, 0.5, 0.1, 0.0]).is_err());
    assert!(ControlDistribution::new(3, vec![0.5, 0.5, 0.0]).is_err());
}

#[test]
fn mean_difference_reference_values() {
    let c = control(3, &[0.1, 0.2, 0.3, 0.4]);
    for p in [0.0, 0.1, 0.3, 0.7] {
        let v = mean_difference_analytic(&LeParams::equal_p(0.5, p).unwrap(), &c).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
    }
    let v = mean_difference_analytic(&LeParams::equal_p(0.2, 0.1).unwrap(), &c).unwrap();
    assert_abs_diff_eq!(v, 0.23, epsilon = 1e-15);
    let v = mean_difference_analytic(&LeParams::no_misreport(0.42).unwrap(), &c).unwrap();
    assert_abs_diff_eq!(v, 0.42, epsilon = 1e-15);
    assert!(mean_difference_analytic(&LeParams::strategic(0.2, 0.1).unwrap(), &c).is_err());
}

#[test]
fn closed_form_recovers_parameters() {
    let c = control(3, &[0.15, 0.35, 0.2, 0.3]);
    let truth = LeParams::unrestricted(0.4, 0.05, 0.10).unwrap();
    let t = le_forward(&truth, &c).unwrap();
    let est = solve_le_closed_form(&c, &t).unwrap().into_result().unwrap();
    assert_abs_diff_eq!(est.delta, 0.4, epsilon = 1e-10);
    assert_abs_diff_eq!(est.p0, 0.05, epsilon = 1e-10);
    assert_abs_diff_eq!(est.p1, 0.10, epsilon = 1e-10);
}

#[test]
fn closed_form_flags_half_delta() {
    let c = control(3, &[0.15, 0.35, 0.2, 0.3]);
    let truth = LeParams::unrestricted(0.5, 0.05, 0.10).unwrap();
    let t = le_forward(&truth, &c).unwrap();
    match solve_le_closed_form(&c, &t).unwrap() {
        ClosedFormLe::Unidentified(why) => assert!(why.contains("1/2"), "{why}"),
        other => panic!("expected unidentified, got {other:?}"),
    }
}

#[test]
fn closed_form_flags_vanishing_denominator() {
    // Linear control and treatment probabilities make both curvature terms
    // and the interior differences proportional, so the ratio is 0/0.
    let c = control(3, &[0.25; 4]);
    let t = TreatmentDistribution::new(3, vec![0.2; 5]).unwrap();
    assert!(matches!(solve_le_closed_form(&c, &t).unwrap(), ClosedFormLe::Unidentified(_)));
}

#[test]
fn closed_form_rejects_other_item_counts() {
    let c = control(4, &[0.2; 5]);
    let t = TreatmentDistribution::new(4, vec![1.0 / 6.0; 6]).unwrap();
    assert!(matches!(solve_le_closed_form(&c, &t), Err(Error::Domain(_))));
}

#[test]
fn simulation_is_deterministic() {
    let c = control(3, &[0.1, 0.2, 0.3, 0.4]);
    let p = LeParams::unrestricted(0.3, 0.1, 0.2).unwrap();
    let a = simulate_le(&p, &c, 500, 0.5, 7).unwrap();
    let b = simulate_le(&p, &c, 500, 0.5, 7).unwrap();
    assert_eq!(a, b);
    let other = simulate_le(&p, &c, 500, 0.5, 8).unwrap();
    assert_ne!(a, other);
}

fn within_three_se(counts: &[usize], n: usize, probs: &[f64]) {
    for (c, p) in counts.iter().zip(probs) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = *c as f64 / n as f64;
        assert!((freq - p).abs() <= 3.0 * se + 1e-12, "freq {freq} vs {p} (se {se})");
    }
}

#[test]
fn simulation_matches_forward_model() {
    let latent = control(3, &[0.25; 4]);
    let p = LeParams::unrestricted(0.3, 0.1, 0.2).unwrap();
    let s = simulate_le(&p, &latent, 1_000_000, 0.5, 11).unwrap();
    let (h0, h1) = s.histograms();
    let (n0, n1) = s.group_sizes();
    let obs = observed_control(&p, &latent);
    within_three_se(&h0, n0, obs.probs());
    within_three_se(&h1, n1, le_forward(&p, &obs).unwrap().probs());
}

#[test]
fn strategic_simulation_matches_forward_model() {
    let latent = control(3, &[0.1, 0.2, 0.3, 0.4]);
    let p = LeParams::strategic(0.4, 0.5).unwrap();
    let s = simulate_le(&p, &latent, 400_000, 0.5, 3).unwrap();
    let (h0, h1) = s.histograms();
    let (n0, n1) = s.group_sizes();
    within_three_se(&h0, n0, latent.probs());
    within_three_se(&h1, n1, &[0.06, 0.16, 0.26, 0.44, 0.08]);
}

#[test]
fn truthful_simulation_reproduces_control() {
    let latent = control(4, &[0.1, 0.2, 0.3, 0.25, 0.15]);
    let p = LeParams::no_misreport(0.2).unwrap();
    let s = simulate_le(&p, &latent, 200_000, 0.5, 5).unwrap();
    let (h0, _) = s.histograms();
    within_three_se(&h0, s.group_sizes().0, latent.probs());
}

#[test]
fn empirical_distributions_basics() {
    let mut records: Vec<LeRecord> =
        (0..50).map(|_| LeRecord { y: 0, t: 0, z: vec![] }).collect();
    records.extend((0..50).map(|i| LeRecord { y: (i % 5) as u32, t: 1, z: vec![] }));
    let s = LeSample::new(4, records).unwrap();
    let (c, t, c0, c1) = empirical_distributions(&s).unwrap();
    assert_eq!(c.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_vec_close(t.probs(), &[0.2, 0.2, 0.2, 0.2, 0.2, 0.0], 1e-15);
    assert_eq!((c0, c1), (0.5, 0.5));
}

#[test]
fn sample_validation_rejects_bad_records() {
    let bad = vec![LeRecord { y: 4, t: 0, z: vec![] }, LeRecord { y: 0, t: 1, z: vec![] }];
    assert!(LeSample::new(3, bad).is_err());
    let one_group = vec![LeRecord { y: 1, t: 0, z: vec![] }];
    assert!(LeSample::new(3, one_group).is_err());
}

#[test]
fn modified_simulation_direct_rate() {
    let latent = control(3, &[0.25; 4]);
    let p = LeParams::equal_p(0.3, 0.0).unwrap();
    let m = simulate_modified_le(&p, &latent, 100_000, 0.5, 0.0, 0.0, 9).unwrap();
    assert_eq!(m.direct.len(), m.sample.group_sizes().0);
    let rate = m.direct.iter().map(|d| *d as f64).sum::<f64>() / m.direct.len() as f64;
    assert!((rate - 0.3).abs() < 3.0 * (0.21f64 / m.direct.len() as f64).sqrt());
}

fn random_instance() -> impl Strategy<Value = (f64, f64, f64, Vec<f64>)> {
    (3usize..=6).prop_flat_map(|j| {
        (
            0.0..0.99f64,
            0.0..0.9f64,
            0.0..0.9f64,
            proptest::collection::vec(0.01..1.0f64, j + 1),
        )
    })
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let mut v: Vec<f64> = w.iter().map(|x| x / s).collect();
    let drift = 1.0 - v.iter().sum::<f64>();
    v[0] += drift;
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_output_is_a_distribution((delta, p0, p1, w) in random_instance()) {
        let j = w.len() - 1;
        let p = LeParams::unrestricted(delta, p0, p1).unwrap();
        let obs = observed_control(&p, &control(j, &normalized(&w)));
        let t = forward_unchecked(&p, obs.probs());
        prop_assert!(t.iter().all(|v| *v >= -1e-15));
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_difference_matches_forward_means((delta, p0, p1, w) in random_instance()) {
        let j = w.len() - 1;
        let p = LeParams::unrestricted(delta, p0, p1).unwrap();
        let obs = observed_control(&p, &control(j, &normalized(&w)));
        let t = le_forward(&p, &obs).unwrap();
        let analytic = mean_difference_analytic(&p, &obs).unwrap();
        prop_assert!((analytic - (t.mean() - obs.mean())).abs() < 1e-12);
    }
}

fn identified_instance() -> impl Strategy<Value = (f64, f64, f64, Vec<f64>)> {
    (0.05..0.95f64, 0.0..0.5f64, 0.0..0.5f64, proptest::collection::vec(0.05..1.0f64, 4))
        .prop_filter("delta near 1/2", |(d, ..)| (d - 0.5).abs() > 0.05)
        .prop_filter("flat control", |(.., w)| {
            let a = normalized(w);
            (2.0 * a[1] - a[2] - a[0]).abs() > 0.05 || (2.0 * a[2] - a[3] - a[1]).abs() > 0.05
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn closed_form_inverts_forward_map((delta, p0, p1, w) in identified_instance()) {
        let truth = LeParams::unrestricted(delta, p0, p1).unwrap();
        let obs = observed_control(&truth, &control(3, &normalized(&w)));
        let t = le_forward(&truth, &obs).unwrap();
        let est = solve_le_closed_form(&obs, &t).unwrap().into_result().unwrap();
        prop_assert!((est.delta - delta).abs() < 1e-8, "delta {} vs {delta}", est.delta);
        prop_assert!((est.p0 - p0).abs() < 1e-8, "p0 {} vs {p0}", est.p0);
        prop_assert!((est.p1 - p1).abs() < 1e-8, "p1 {} vs {p1}", est.p1);
    }
}
