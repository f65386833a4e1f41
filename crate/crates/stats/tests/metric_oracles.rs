use mmsurv_stats::{
    brier, c_td, c_td_counts, censoring_km, dichotomize, integrated_brier, kaplan_meier, logrank, EventRecord,
    RiskGroup, StatsError, SurvCurve, SurvivalFn,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_curve(rng: &mut ChaCha8Rng) -> SurvCurve {
    let k = rng.random_range(0..4);
    let mut times: Vec<f64> = (0..k).map(|_| rng.random_range(1..12) as f64).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut v: f64 = 1.0;
    let values = times
        .iter()
        .map(|_| {
            // coarse steps so predictions tie often
            v = ((v - rng.random_range(0.0..0.5)).max(0.0) * 5.0f64).round() / 5.0;
            v
        })
        .collect();
    SurvCurve::new(times, values)
}

fn random_cohort(rng: &mut ChaCha8Rng, n: usize) -> Vec<EventRecord> {
    (0..n)
        .map(|_| EventRecord::new(rng.random_range(1..10) as f64, rng.random_bool(0.6)).unwrap())
        .collect()
}

fn pairwise_oracle(curves: &[SurvCurve], records: &[EventRecord]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..records.len() {
        for j in 0..records.len() {
            if i == j || !records[i].event || records[i].time >= records[j].time {
                continue;
            }
            let t = records[i].time;
            let (si, sj) = (curves[i].survival_at(t), curves[j].survival_at(t));
            den += 1.0;
            if si < sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn ctd_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(2..=40);
        let records = random_cohort(&mut rng, n);
        let curves: Vec<_> = (0..n).map(|_| random_curve(&mut rng)).collect();
        match (pairwise_oracle(&curves, &records), c_td(&curves, &records)) {
            (Some(want), Ok(got)) => {
                assert!((want - got).abs() < 1e-12, "{want} vs {got}");
                checked += 1;
            }
            (None, Err(StatsError::NoComparablePairs)) => {}
            (want, got) => panic!("oracle {want:?}, implementation {got:?}"),
        }
    }
}

#[test]
fn ctd_is_rank_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let records = random_cohort(&mut rng, 30);
        let curves: Vec<_> = (0..30).map(|_| random_curve(&mut rng)).collect();
        let cubed: Vec<_> = curves
            .iter()
            .map(|c| SurvCurve::new(c.times().to_vec(), c.values().iter().map(|v| v * v * v).collect()))
            .collect();
        let (a, b) = (c_td_counts(&curves, &records), c_td_counts(&cubed, &records));
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (a, b) => assert_eq!(a.is_err(), b.is_err()),
        }
    }
}

#[test]
fn kaplan_meier_hand_examples() {
    let km = kaplan_meier(&[EventRecord::event(1.0), EventRecord::event(2.0), EventRecord::event(3.0)]).unwrap();
    let want = [(0.5, 1.0), (1.0, 2.0 / 3.0), (2.0, 1.0 / 3.0), (3.0, 0.0)];
    for (t, s) in want {
        assert!((km.survival_at(t) - s).abs() < 1e-10);
    }
    let censored = kaplan_meier(&[EventRecord::censored(1.0), EventRecord::censored(4.0)]).unwrap();
    assert_eq!(censored.survival_at(10.0), 1.0);
    let mixed = kaplan_meier(&[
        EventRecord::event(1.0),
        EventRecord::censored(2.0),
        EventRecord::event(3.0),
        EventRecord::event(4.0),
    ])
    .unwrap();
    for (t, s) in [(0.9, 1.0), (1.0, 0.75), (2.5, 0.75), (3.0, 0.375), (4.0, 0.0)] {
        assert!((mixed.survival_at(t) - s).abs() < 1e-10, "t={t}");
    }
}

#[test]
fn logrank_ten_patient_table() {
    // Pooled risk table, (time, at risk, at risk in A, deaths, deaths in A):
    // (1,10,5,1,1) (2,9,4,1,0) (3,8,4,1,1) (6,5,2,1,1) (7,4,1,1,0) (8,3,1,1,1) (9,2,0,1,0)
    // O−E = 283/180, V = 45251/32400, so χ² = 80089/45251.
    let a = [(1.0, true), (3.0, true), (4.0, false), (6.0, true), (8.0, true)];
    let b = [(2.0, true), (5.0, false), (7.0, true), (9.0, true), (10.0, false)];
    let to = |g: &[(f64, bool)]| g.iter().map(|&(t, e)| EventRecord::new(t, e).unwrap()).collect::<Vec<_>>();
    let res = logrank(&to(&a), &to(&b)).unwrap();
    assert!((res.statistic - 80089.0 / 45251.0).abs() < 1e-10);
    assert_eq!(res.df, 1);
    assert!((res.p_value - 0.1833964927234257).abs() < 1e-10);
}

#[test]
fn logrank_detects_separated_groups() {
    let early: Vec<_> = (1..=15).map(|i| EventRecord::event(i as f64 * 0.5)).collect();
    let late: Vec<_> = (1..=15).map(|i| EventRecord::new(20.0 + i as f64, i % 3 == 0).unwrap()).collect();
    assert!(logrank(&early, &late).unwrap().p_value < 0.01);
}

#[test]
fn brier_matches_hand_weighted_sum() {
    // Ĝ from flipped records: drops to 4/5 at 3 and to 8/15 at 5.
    let records = [
        EventRecord::event(2.0),
        EventRecord::censored(3.0),
        EventRecord::event(4.0),
        EventRecord::censored(5.0),
        EventRecord::event(6.0),
        EventRecord::event(8.0),
    ];
    let g = censoring_km(&records).unwrap();
    assert!((g.survival_at(3.0) - 0.8).abs() < 1e-12);
    assert!((g.survival_at(5.0) - 8.0 / 15.0).abs() < 1e-12);

    let preds = [0.1, 0.5, 0.3, 0.8, 0.6, 0.9];
    let curves: Vec<_> = preds.iter().map(|&p| SurvCurve::new(vec![0.5], vec![p])).collect();
    // t = 4.5: patient at 2 weighted 1, patient at 4 weighted 5/4, survivors 5/4, censored-at-3 zero
    let want = (0.1f64.powi(2) + 1.25 * 0.3f64.powi(2) + 1.25 * (0.2f64.powi(2) + 0.4f64.powi(2) + 0.1f64.powi(2))) / 6.0;
    let got = brier(&curves, &records, 4.5, &g).unwrap();
    assert!((got.score - want).abs() < 1e-12, "{} vs {want}", got.score);
    assert_eq!(got.excluded, 0);
}

#[test]
fn integrated_brier_of_constant_half_is_quarter() {
    let records: Vec<_> = (1..=20).map(|i| EventRecord::event(i as f64 * 3.0)).collect();
    struct Half;
    impl SurvivalFn for Half {
        fn survival_at(&self, _t: f64) -> f64 {
            0.5
        }
    }
    let curves: Vec<_> = (0..20).map(|_| Half).collect();
    assert!((integrated_brier(&curves, &records, 24.0).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn dichotomize_on_twelve_months() {
    let groups = dichotomize(&[SurvCurve::constant_one(), SurvCurve::new(vec![2.0], vec![0.0])], 12.0);
    assert_eq!(groups, vec![RiskGroup::Favorable, RiskGroup::Unfavorable]);
}

fn cohort_strategy() -> impl Strategy<Value = Vec<EventRecord>> {
    prop::collection::vec((1u32..30, any::<bool>()), 1..25)
        .prop_map(|v| v.into_iter().map(|(t, e)| EventRecord::new(t as f64, e).unwrap()).collect())
}

proptest! {
    #[test]
    fn logrank_is_symmetric(a in cohort_strategy(), b in cohort_strategy()) {
        match (logrank(&a, &b), logrank(&b, &a)) {
            (Ok(x), Ok(y)) => prop_assert!((x.statistic - y.statistic).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn uncensored_km_is_empirical_survival(times in prop::collection::vec(1u32..50, 1..40)) {
        let records: Vec<_> = times.iter().map(|&t| EventRecord::event(t as f64)).collect();
        let km = kaplan_meier(&records).unwrap();
        for t in 0..52 {
            let alive = times.iter().filter(|&&s| s > t).count() as f64 / times.len() as f64;
            prop_assert!((km.survival_at(t as f64) - alive).abs() < 1e-12);
        }
    }

    #[test]
    fn uncensored_brier_is_plain_mse(
        times in prop::collection::vec(1u32..20, 2..20),
        preds in prop::collection::vec(0.0f64..1.0, 20),
        t in 0.5f64..25.0,
    ) {
        let records: Vec<_> = times.iter().map(|&s| EventRecord::event(s as f64)).collect();
        let curves: Vec<_> = preds[..records.len()].iter().map(|&p| SurvCurve::new(vec![0.1], vec![p])).collect();
        let g = censoring_km(&records).unwrap();
        let got = brier(&curves, &records, t, &g).unwrap().score;
        let mse = records.iter().zip(&curves).map(|(r, c)| {
            let alive = if r.time > t { 1.0 } else { 0.0 };
            (alive - c.survival_at(t)).powi(2)
        }).sum::<f64>() / records.len() as f64;
        prop_assert!((got - mse).abs() < 1e-12);
    }
}
