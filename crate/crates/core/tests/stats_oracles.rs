use proptest::prelude::*;
use speciescope::stats;

// Reference values below were computed once with SciPy and frozen.

fn sample() -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..30).map(|i| ((i * 37) % 23) as f64 / 7.0).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, xi)| xi * 0.5 + (((i * 11) % 13) as f64 - 6.0) / 5.0).collect();
    (x, y)
}

#[test]
fn pearson_matches_reference() {
    let (x, y) = sample();
    let (r, p) = stats::pearson(&x, &y).unwrap();
    assert!((r - 0.4530145531613969).abs() < 1e-12);
    assert!((p - 0.011939796901316352).abs() < 1e-9);
    let a: Vec<f64> = (1..=10).map(f64::from).collect();
    let b = [2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0, 9.0, 8.0, 10.0];
    let (r, p) = stats::pearson(&a, &b).unwrap();
    assert!((r - 0.927272727272727).abs() < 1e-12);
    assert!((p - 0.00011203450639397729).abs() < 1e-10);
}

#[test]
fn spearman_matches_reference_with_ties() {
    let (x, y) = sample();
    let (rho, p) = stats::spearman(&x, &y).unwrap();
    assert!((rho - 0.42881010458929947).abs() < 1e-12);
    assert!((p - 0.01805908270002394).abs() < 1e-9);
    let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 8.0];
    let b = [2.0, 1.0, 4.0, 4.0, 3.0, 9.0, 9.0, 7.0];
    let (rho, _) = stats::spearman(&a, &b).unwrap();
    assert!((rho - 0.6895607149652165).abs() < 1e-12);
}

/// Hoeffding's D as the U-statistic over ordered 5-tuples of distinct
/// indices, times 30.
fn brute_hoeffding(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let psi = |a: f64, b: f64, c: f64| f64::from(u8::from(b <= a)) - f64::from(u8::from(c <= a));
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    for m in 0..n {
                        let idx = [i, j, k, l, m];
                        if (0..5).any(|a| (a + 1..5).any(|b| idx[a] == idx[b])) {
                            continue;
                        }
                        let fx = psi(x[i], x[j], x[k]) * psi(x[i], x[l], x[m]);
                        let fy = psi(y[i], y[j], y[k]) * psi(y[i], y[l], y[m]);
                        sum += 0.25 * fx * fy;
                        count += 1.0;
                    }
                }
            }
        }
    }
    30.0 * sum / count
}

#[test]
fn hoeffding_rank_formula_equals_u_statistic() {
    let x = [0.3, 1.7, 2.2, -0.4, 5.1, 3.3, 0.9, 4.4];
    let y = [1.0, 0.2, 2.5, -1.0, 3.9, 2.0, 0.1, 6.0];
    let d = stats::hoeffding_d(&x, &y).unwrap();
    assert!((d - brute_hoeffding(&x, &y)).abs() < 1e-12, "{d}");
    let inc: Vec<f64> = (0..9).map(f64::from).collect();
    assert!((stats::hoeffding_d(&inc, &inc).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn correlation_table_shape() {
    use speciescope::MeasureRecord;
    let recs: Vec<MeasureRecord> = (0..12)
        .map(|i| {
            let f = i as f64;
            MeasureRecord {
                entropy: f,
                energy: 1.0 / (1.0 + f),
                contours: (i * 3 % 7) as u64,
                euler: -((i * 3 % 7) as i64),
                acomplex: 0.1 * f + 0.01 * (i % 2) as f64,
                scomplex: ((i * 5) % 11) as f64 / 11.0,
                fdim: 1.0 + ((i * 7) % 5) as f64 / 5.0,
            }
        })
        .collect();
    let scores: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let m = stats::correlation_table(&recs, &scores).unwrap();
    assert_eq!(m.labels.len(), 8);
    assert_eq!(m.labels.last().unwrap(), "score");
    for i in 0..8 {
        assert!((m.values[i][i] - 1.0).abs() < 1e-12);
        for j in 0..8 {
            assert_eq!(m.values[i][j], m.values[j][i]);
        }
    }
    assert!(m.get("contours", "euler").unwrap() < -0.999);
}

proptest! {
    #[test]
    fn hoeffding_matches_brute_force(
        perm in (5usize..9).prop_flat_map(|n| Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
    ) {
        let x: Vec<f64> = (0..perm.len()).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        prop_assert!((stats::hoeffding_d(&x, &y).unwrap() - brute_hoeffding(&x, &y)).abs() < 1e-9);
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(v in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)) {
        let x: Vec<f64> = v.iter().map(|p| p.0).collect();
        let y: Vec<f64> = v.iter().map(|p| p.1).collect();
        if let (Ok((r1, p1)), Ok((r2, _))) = (stats::pearson(&x, &y), stats::pearson(&y, &x)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r1));
            prop_assert!((0.0..=1.0).contains(&p1));
            prop_assert!((r1 - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn bands_are_monotone(n in 2usize..=11) {
        let mut last = 0;
        for s in 0..=10u8 {
            let b = stats::band_of(s, n);
            prop_assert!(b >= last && b < n);
            last = b;
        }
        prop_assert_eq!(stats::band_of(0, n), 0);
        prop_assert_eq!(stats::band_of(10, n), n - 1);
    }
}
