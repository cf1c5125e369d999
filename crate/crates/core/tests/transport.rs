//! Exact optimal transport against enumeration and against the assignment solver.

use rflab::benchmarks::symmetric_pair;
use rflab::rng::StreamKey;
use rflab::{w2_cloud_cloud, w2_cloud_target, Cloud, Target};

fn brute_force_w2(a: &Cloud, b: &Cloud) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = a.len();
    perms(n)
        .into_iter()
        .map(|p| {
            (0..n)
                .map(|i| {
                    a.particle(i)
                        .iter()
                        .zip(b.particle(p[i]))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[test]
fn matches_permutation_enumeration() {
    let a = Cloud::from_flat(1, vec![0.0, 1.0, 3.0]).unwrap();
    let b = Cloud::from_flat(1, vec![0.5, 1.5, 2.5]).unwrap();
    assert!((brute_force_w2(&a, &b) - 0.5).abs() < 1e-15);
    for s in 0..20 {
        let a = Cloud::standard_normal(6, 3, StreamKey::new(s).child(1));
        let b = Cloud::standard_normal(6, 3, StreamKey::new(s).child(2));
        assert!((w2_cloud_cloud(&a, &b).unwrap() - brute_force_w2(&a, &b)).abs() <= 1e-10);
    }
}

#[test]
fn semi_discrete_transport_matches_replicated_assignment() {
    // sink weights that are multiples of 1/n reduce to an assignment problem
    let pts = vec![vec![0.3, -0.2], vec![-0.5, 0.4], vec![0.1, 0.9], vec![-0.7, -0.6]];
    let counts = [5usize, 3, 2, 6];
    let n: usize = counts.iter().sum();
    let w: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let tgt = Target::new(2, &pts, Some(&w)).unwrap();
    let mut rows = Vec::new();
    for (p, &c) in pts.iter().zip(&counts) {
        for _ in 0..c {
            rows.push(p.clone());
        }
    }
    let replicated = Cloud::from_rows(2, &rows).unwrap();
    for s in 0..10 {
        let a = Cloud::standard_normal(n, 2, StreamKey::new(s));
        let direct = w2_cloud_target(&a, &tgt).unwrap();
        let via_assignment = w2_cloud_cloud(&a, &replicated).unwrap();
        assert!((direct - via_assignment).abs() <= 1e-10, "{direct} vs {via_assignment}");
    }
}

#[test]
fn semi_discrete_transport_in_one_dimension_matches_quantiles() {
    let tgt = symmetric_pair(1.0_f64, 1).unwrap();
    let a = Cloud::from_flat(1, vec![-2.0, 0.5, 0.1, 3.0]).unwrap();
    // the two smallest particles go to -1, the two largest to +1
    let want = (((-2.0_f64 + 1.0).powi(2) + (0.1_f64 + 1.0).powi(2) + 0.25 + 4.0) / 4.0).sqrt();
    assert!((w2_cloud_target(&a, &tgt).unwrap() - want).abs() < 1e-14);
    // the same instance embedded in two dimensions takes the general solver
    let tgt2 = symmetric_pair(1.0_f64, 2).unwrap();
    let a2 = Cloud::from_flat(2, a.as_flat().iter().flat_map(|&v| [v, 0.0]).collect()).unwrap();
    assert!((w2_cloud_target(&a2, &tgt2).unwrap() - want).abs() < 1e-12);
}

#[test]
fn large_clouds_are_capped() {
    let a = Cloud::standard_normal(4097, 1, StreamKey::new(1));
    assert!(w2_cloud_cloud(&a, &a).is_err());
    let tgt = symmetric_pair(1.0_f64, 1).unwrap();
    assert!(w2_cloud_target(&a, &tgt).is_err());
}
