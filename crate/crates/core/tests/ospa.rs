//! OSPA and the assignment solver against exhaustive enumeration, plus the
//! metric axioms.

use mtt_core::metrics::{assignment, ospa_frame, OspaParams};
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum over injective maps of the smaller set into the larger.
fn brute_ospa(x: &[[f64; 2]], y: &[[f64; 2]], q: OspaParams) -> f64 {
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).hypot(a[1] - b[1])).min(q.c).powf(q.p);
    let best = permutations(n)
        .iter()
        .map(|perm| small.iter().enumerate().map(|(i, a)| d(*a, large[perm[i]])).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    ((best + q.c.powf(q.p) * (n - small.len()) as f64) / n as f64).powf(1.0 / q.p)
}

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-20.0..20.0f64), 0..=max)
}

fn params() -> impl Strategy<Value = OspaParams> {
    (prop_oneof![Just(1.0), Just(2.0), 1.0..3.0f64], 0.5..15.0f64).prop_map(|(p, c)| OspaParams { p, c })
}

proptest! {
    #[test]
    fn assignment_is_optimal(rows in 1usize..6, extra in 0usize..2, seed in prop::collection::vec(0.0..10.0f64, 42)) {
        let cols = rows + extra;
        let cost: Vec<Vec<f64>> = (0..rows).map(|i| seed[i * cols..(i + 1) * cols].to_vec()).collect();
        let got = assignment(&cost);
        let mut seen = vec![false; cols];
        for &j in &got {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        let total: f64 = got.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let best = permutations(cols)
            .iter()
            .map(|perm| (0..rows).map(|i| cost[i][perm[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((total - best).abs() < 1e-9, "{} vs {}", total, best);
    }

    #[test]
    fn ospa_matches_enumeration(x in points(5), y in points(5), q in params()) {
        let a = ospa_frame(&x, &y, q);
        let b = brute_ospa(&x, &y, q);
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn ospa_is_a_metric(x in points(4), y in points(4), z in points(4), q in params()) {
        let d = |a: &[[f64; 2]], b: &[[f64; 2]]| ospa_frame(a, b, q);
        prop_assert!(d(&x, &x).abs() < 1e-12);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-12);
        prop_assert!(d(&x, &y) <= q.c + 1e-12);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }
}

#[test]
fn cardinality_error_alone_costs_c() {
    let q = OspaParams::default();
    let x = [[1.0, 2.0], [5.0, 5.0]];
    assert_eq!(ospa_frame(&[], &x, q), q.c);
    assert_eq!(ospa_frame(&x, &[], q), q.c);
    assert_eq!(ospa_frame(&[], &[], q), 0.0);
    // One exact match and one miss out of two: (0 + c) / 2.
    assert!((ospa_frame(&x[..1], &x, q) - q.c / 2.0).abs() < 1e-12);
}
