use nalgebra::DMatrix;
use speciescope::embed::{self, TsneConfig};

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Box-Muller normal.
    fn normal(&mut self) -> f64 {
        let u = self.next().max(1e-300);
        let v = self.next();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Lcg(seed);
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn distance_matrix(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    pts.iter().map(|a| pts.iter().map(|b| dist(a, b)).collect()).collect()
}

#[test]
fn affinities_match_textbook_formulas() {
    for (n, perp) in [(6, 2.0), (9, 3.0), (12, 5.0)] {
        let pts = points(n, 4, n as u64);
        let d = distance_matrix(&pts);
        let a = embed::perplexity_calibration(&d, perp).unwrap();
        for i in 0..n {
            // p(j|i) = exp(-beta_i d_ij^2) / sum_k exp(-beta_i d_ik^2)
            let z: f64 = (0..n).filter(|&k| k != i).map(|k| (-a.betas[i] * d[i][k] * d[i][k]).exp()).sum();
            let mut h = 0.0;
            for j in 0..n {
                let expected = if i == j { 0.0 } else { (-a.betas[i] * d[i][j] * d[i][j]).exp() / z };
                assert!((a.conditional[i * n + j] - expected).abs() < 1e-10);
                if expected > 0.0 {
                    h -= expected * expected.log2();
                }
            }
            assert!((h - perp.log2()).abs() < 1e-4, "row {i}: entropy {h}");
            assert!((a.entropies[i] - h).abs() < 1e-10);
        }
        for i in 0..n {
            for j in 0..n {
                let pij = (a.conditional[i * n + j] + a.conditional[j * n + i]) / (2.0 * n as f64);
                assert!((a.joint[i * n + j] - pij).abs() < 1e-10);
                assert_eq!(a.joint[i * n + j], a.joint[j * n + i]);
            }
        }
        assert!((a.joint.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn calibration_entropy_error_on_larger_set() {
    let pts = points(150, 12, 3);
    let a = embed::perplexity_calibration(&distance_matrix(&pts), 30.0).unwrap();
    let target = 30f64.log2();
    assert!(a.entropies.iter().all(|h| (h - target).abs() < 1e-4));
}

#[test]
fn affinities_are_rotation_invariant() {
    let pts = points(10, 2, 5);
    let theta: f64 = 0.7;
    let rotated: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| vec![p[0] * theta.cos() - p[1] * theta.sin(), p[0] * theta.sin() + p[1] * theta.cos()])
        .collect();
    let a = embed::perplexity_calibration(&distance_matrix(&pts), 3.0).unwrap();
    let b = embed::perplexity_calibration(&distance_matrix(&rotated), 3.0).unwrap();
    for (x, y) in a.joint.iter().zip(&b.joint) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn infeasible_perplexity_is_rejected() {
    let pts = points(5, 2, 1);
    assert!(embed::perplexity_calibration(&distance_matrix(&pts), 10.0).is_err());
    let cfg = TsneConfig { perplexity: 30.0, ..Default::default() };
    let ids: Vec<String> = (0..50).map(|i| i.to_string()).collect();
    assert!(embed::tsne(&ids, &points(50, 3, 1), &cfg).is_err());
}

fn two_clusters(n: usize) -> (Vec<String>, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = Lcg(17);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let shift = if c == 0 { -4.0 } else { 4.0 };
        data.push((0..5).map(|_| rng.normal() + shift).collect());
        labels.push(c);
    }
    ((0..n).map(|i| format!("p{i}")).collect(), data, labels)
}

#[test]
fn separated_clusters_stay_separated() {
    let (ids, data, labels) = two_clusters(100);
    let cfg = TsneConfig { perplexity: 20.0, epsilon: 10.0, iterations: 1000, seed: 3, pre_reduce_dims: None };
    let emb = embed::tsne(&ids, &data, &cfg).unwrap();
    let pts: Vec<Vec<f64>> = emb.points.iter().map(|p| p.to_vec()).collect();
    let s = embed::silhouette_score(&pts, &labels);
    assert!(s > 0.5, "silhouette {s}");
    assert!(emb.kl_at(250).is_some());
    assert!(emb.kl_at(1000).is_some());
    assert!(emb.final_kl < emb.kl_at(250).unwrap());
}

#[test]
fn tsne_is_deterministic() {
    let (ids, data, _) = two_clusters(40);
    let cfg = TsneConfig { perplexity: 8.0, epsilon: 10.0, iterations: 300, seed: 9, pre_reduce_dims: None };
    let a = embed::tsne(&ids, &data, &cfg).unwrap();
    let b = embed::tsne(&ids, &data, &cfg).unwrap();
    assert_eq!(a, b);
    let c = embed::tsne(&ids, &data, &TsneConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.points, c.points);
}

/// Leading eigenpairs of a symmetric matrix by power iteration with deflation.
fn power_eigen(m: &DMatrix<f64>, k: usize) -> Vec<(f64, Vec<f64>)> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut out = Vec::new();
    for c in 0..k {
        let mut v = DMatrix::from_fn(n, 1, |i, _| 1.0 + (i + c) as f64 * 0.1);
        for _ in 0..5000 {
            let w = &a * &v;
            v = &w / w.norm();
        }
        let lambda = (v.transpose() * &a * &v)[(0, 0)];
        a -= lambda * &v * v.transpose();
        out.push((lambda, v.iter().copied().collect()));
    }
    out
}

#[test]
fn pca_matches_power_iteration() {
    let mut rng = Lcg(23);
    let (n, d) = (40, 6);
    let scales = [5.0, 3.0, 2.0, 1.0, 0.5, 0.2];
    let data = DMatrix::from_fn(n, d, |_, j| rng.normal() * scales[j]);
    let res = embed::pca(&data, 3).unwrap();
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for (c, (lambda, v)) in power_eigen(&cov, 3).into_iter().enumerate() {
        assert!((res.eigenvalues[c] - lambda).abs() < 1e-8 * lambda.max(1.0), "eigenvalue {c}");
        let comp: Vec<f64> = res.components.column(c).iter().copied().collect();
        let dot: f64 = comp.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-8, "component {c}");
    }

    // the Gram route (more columns than rows) agrees on projected variance
    let wide = DMatrix::from_fn(8, 30, |i, j| ((i * 31 + j * 7) % 13) as f64 + (i as f64) * (j as f64 % 3.0));
    let res = embed::pca(&wide, 2).unwrap();
    for c in 0..2 {
        let col = res.projected.column(c);
        let var = col.iter().map(|v| v * v).sum::<f64>() / 7.0;
        assert!((var - res.eigenvalues[c]).abs() < 1e-8 * res.eigenvalues[c].max(1.0));
    }
}
