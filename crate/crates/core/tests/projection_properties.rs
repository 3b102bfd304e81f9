use std::collections::BTreeMap;

use evote_core::election::{AreaCount, CandidateCount, TallySnapshot};
use evote_core::projection::{normal_cdf, project, TurnoutCurve};
use evote_core::Id128;
use proptest::prelude::*;

/// Composite Simpson integration of the standard normal density from -12 to x.
fn simpson_cdf(x: f64) -> f64 {
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, n) = (-12.0, 200_000);
    let h = (x - a) / n as f64;
    let mut sum = density(a) + density(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * density(a + i as f64 * h);
    }
    sum * h / 3.0
}

#[test]
fn normal_cdf_matches_numerical_integration() {
    // table values for cross-checking the integrator itself
    let table = [
        (-3.0, 0.001_349_898_031_630_093_3),
        (-1.0, 0.158_655_253_931_457_07),
        (0.0, 0.5),
        (1.0, 0.841_344_746_068_542_9),
        (3.0, 0.998_650_101_968_369_9),
    ];
    for (x, tabulated) in table {
        let reference = simpson_cdf(x);
        assert!((reference - tabulated).abs() < 1e-10, "integrator off at {x}");
        let approx = normal_cdf(x);
        assert!((approx - reference).abs() <= 1e-6, "Phi({x}) = {approx}, reference {reference}");
        assert!((approx - reference).abs() <= 1e-7);
    }
}

fn order(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn snapshot(table: &[Vec<u64>]) -> TallySnapshot {
    let ids = order(table.first().map_or(0, Vec::len));
    let mut per_area = Vec::new();
    for (a, row) in table.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            per_area.push(AreaCount { area_code: format!("A{a}"), candidate_id: ids[c].clone(), votes: v });
        }
    }
    let counts: Vec<CandidateCount> = ids
        .iter()
        .enumerate()
        .map(|(c, id)| CandidateCount { candidate_id: id.clone(), votes: table.iter().map(|r| r[c]).sum() })
        .collect();
    TallySnapshot {
        election_id: Id128([1; 16]),
        as_of: 0,
        total: counts.iter().map(|c| c.votes).sum(),
        counts,
        per_area,
    }
}

fn curves(mids: &[(f64, f64)]) -> BTreeMap<String, TurnoutCurve> {
    mids.iter()
        .enumerate()
        .map(|(a, &(m1, m2))| {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let code = format!("A{a}");
            let c = TurnoutCurve::new(code.clone(), vec![(0.0, 0.0), (0.3, lo), (0.7, hi), (1.0, 1.0)]).unwrap();
            (code, c)
        })
        .collect()
}

fn election() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<(f64, f64)>)> {
    (1usize..5, 2usize..5).prop_flat_map(|(areas, cands)| {
        (
            prop::collection::vec(prop::collection::vec(0u64..200, cands), areas),
            prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), areas),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn close_of_polls_reproduces_counts((table, mids) in election()) {
        let snap = snapshot(&table);
        prop_assume!(snap.total > 0);
        let p = project(&snap, &curves(&mids), 1.0, &order(table[0].len())).unwrap();
        for c in &snap.counts {
            prop_assert_eq!(p.projected_for(&c.candidate_id), Some(c.votes as f64));
        }
    }

    #[test]
    fn projection_never_shrinks_the_count((table, mids) in election(), t in 0.01..1.0f64) {
        let snap = snapshot(&table);
        prop_assume!(snap.total > 0);
        let p = project(&snap, &curves(&mids), t, &order(table[0].len())).unwrap();
        prop_assert!(p.projected_total >= snap.total as f64);
        let sum: f64 = p.projected_counts.iter().map(|c| c.projected_votes).sum();
        prop_assert!((sum - p.projected_total).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn scale_equivariance((table, mids) in election(), k in 2u64..7, t in 0.05..1.0f64) {
        let snap = snapshot(&table);
        prop_assume!(snap.total > 0);
        let scaled: Vec<Vec<u64>> = table.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let cands = order(table[0].len());
        let a = project(&snap, &curves(&mids), t, &cands).unwrap();
        let b = project(&snapshot(&scaled), &curves(&mids), t, &cands).unwrap();
        for (x, y) in a.projected_counts.iter().zip(&b.projected_counts) {
            prop_assert!((x.projected_votes * k as f64 - y.projected_votes).abs() <= 1e-9 * y.projected_votes.max(1.0));
        }
        // exact ties can resolve either way under rounding; only check clear leaders
        let mut sorted: Vec<f64> = a.projected_counts.iter().map(|c| c.projected_votes).collect();
        sorted.sort_by(|x, y| y.total_cmp(x));
        if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-6 * sorted[0] {
            prop_assert_eq!(a.leader, b.leader);
        }
    }

    #[test]
    fn leader_gains_never_hurt((table, mids) in election(), t in 0.05..1.0f64, area in 0usize..5, extra in 1u64..50) {
        let snap = snapshot(&table);
        prop_assume!(snap.total > 0);
        let cands = order(table[0].len());
        let before = project(&snap, &curves(&mids), t, &cands).unwrap();
        let leader = cands.iter().position(|c| *c == before.leader).unwrap();
        let mut bumped = table.clone();
        let area = area % bumped.len();
        bumped[area][leader] += extra;
        let after = project(&snapshot(&bumped), &curves(&mids), t, &cands).unwrap();
        prop_assert_eq!(&after.leader, &before.leader);
        prop_assert!(after.win_probability >= before.win_probability,
            "{} -> {}", before.win_probability, after.win_probability);
    }
}
