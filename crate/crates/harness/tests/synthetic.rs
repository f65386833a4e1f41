use mmsurv_harness::synthetic::lesion_radius;
use mmsurv_harness::{generate_synthetic_cohort, Effects, HarnessError, Mgmt, Sex, SyntheticConfig};
use mmsurv_stats::c_td;

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn config(n: usize, effects: Effects, censor_rate: f64) -> SyntheticConfig {
    SyntheticConfig {
        n,
        effects,
        censor_rate,
        ..SyntheticConfig::default()
    }
}

#[test]
fn larger_lesions_shorten_survival() {
    let effects = Effects {
        beta_image: 0.8,
        ..Effects::default()
    };
    let c = generate_synthetic_cohort(3, &config(2000, effects, 0.3)).unwrap();
    let radius: Vec<f64> = c.truth.iter().map(|t| t.radius).collect();
    let time: Vec<f64> = c.table.patients.iter().map(|p| p.time_months).collect();
    let rho = spearman(&radius, &time);
    assert!(rho < -0.2, "rho = {rho}");
}

#[test]
fn null_effects_give_uninformative_truth() {
    let c = generate_synthetic_cohort(4, &config(2000, Effects::default(), 0.3)).unwrap();
    let ctd = c_td(&c.truth_curves(), &c.table.records()).unwrap();
    assert!((ctd - 0.5).abs() < 0.05);
}

#[test]
fn censoring_rate_is_hit() {
    for rate in [0.1, 0.3, 0.6] {
        let c = generate_synthetic_cohort(5, &config(2000, SyntheticConfig::default().effects, rate)).unwrap();
        let censored = c.table.patients.iter().filter(|p| !p.event).count() as f64 / 2000.0;
        assert!((censored - rate).abs() < 0.05, "{rate}: {censored}");
    }
    let none = generate_synthetic_cohort(5, &config(200, Effects::default(), 0.0)).unwrap();
    assert!(none.table.patients.iter().all(|p| p.event));
}

#[test]
fn marginals_follow_the_reference_cohort() {
    let c = generate_synthetic_cohort(6, &config(3000, Effects::default(), 0.3)).unwrap();
    let n = c.table.len() as f64;
    let age = c.table.patients.iter().map(|p| p.age_years).sum::<f64>() / n;
    let male = c.table.patients.iter().filter(|p| p.sex == Sex::Male).count() as f64 / n;
    let meth = c.table.patients.iter().filter(|p| p.mgmt == Mgmt::Methylated).count() as f64 / n;
    assert!((age - 63.0).abs() < 1.0);
    assert!((male - 0.6).abs() < 0.03);
    assert!((meth - 0.19).abs() < 0.03);
    assert!(c.table.patients.iter().all(|p| p.time_months >= 1.0 && p.time_months.fract() == 0.0));
}

#[test]
fn volumes_encode_the_image_score() {
    let c = generate_synthetic_cohort(7, &config(30, SyntheticConfig::default().effects, 0.3)).unwrap();
    for (t, v) in c.truth.iter().zip(&c.volumes) {
        assert_eq!(v.dims(), [16, 16, 16]);
        assert_eq!(t.radius, lesion_radius([16, 16, 16], t.image_score));
        assert!(v.data().iter().all(|x| x.is_finite() && *x >= 0.0));
        assert_eq!(v.get(0, 0, 0, 0), 0.0);
    }
    let small = lesion_radius([16, 16, 16], -1.0);
    let large = lesion_radius([16, 16, 16], 1.0);
    assert!(small < large);
}

#[test]
fn generation_is_deterministic_and_validated() {
    let cfg = config(50, SyntheticConfig::default().effects, 0.3);
    let a = generate_synthetic_cohort(9, &cfg).unwrap();
    let b = generate_synthetic_cohort(9, &cfg).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.volumes, b.volumes);
    assert_ne!(a.table, generate_synthetic_cohort(10, &cfg).unwrap().table);

    assert!(matches!(generate_synthetic_cohort(1, &config(19, Effects::default(), 0.3)), Err(HarnessError::Config(_))));
    assert!(matches!(generate_synthetic_cohort(1, &config(50, Effects::default(), 0.95)), Err(HarnessError::Config(_))));
    let lethal = Effects {
        beta_clinical: 0.0,
        beta_image: 0.0,
        beta_interaction: 0.0,
    };
    let doomed = SyntheticConfig {
        baseline_hazard: 50.0,
        ..config(50, lethal, 0.5)
    };
    assert!(matches!(generate_synthetic_cohort(1, &doomed), Err(HarnessError::Generation(_))));
}
