//! Checks of the closed-form oracles against independent computations.

use rflab::benchmarks::{five_point_d3, symmetric_pair};
use rflab::predictor::flow_point;
use rflab::rng::StreamKey;
use rflab::{
    dt_v_star, jac_v_star, moments, posterior_weights, score, total_dt_v_star, v_star, Target,
};

/// Brute-force conditional moments written directly from Bayes' rule.
fn brute_moments(tgt: &Target, t: f64, x: &[f64]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let d = tgt.dim();
    let dens: Vec<f64> = tgt
        .points()
        .zip(tgt.weights())
        .map(|(y, &p)| {
            let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - t * b).powi(2)).sum();
            p * (-r2 / (2.0 * (1.0 - t).powi(2))).exp()
        })
        .collect();
    let z: f64 = dens.iter().sum();
    let mut m1 = vec![0.0; d];
    let mut m2 = 0.0;
    let mut s = vec![0.0; d * d];
    let mut m3 = vec![0.0; d];
    for (y, &q) in tgt.points().zip(&dens) {
        let w = q / z;
        let n2: f64 = y.iter().map(|v| v * v).sum();
        m2 += w * n2;
        for a in 0..d {
            m1[a] += w * y[a];
            m3[a] += w * n2 * y[a];
            for b in 0..d {
                s[a * d + b] += w * y[a] * y[b];
            }
        }
    }
    let cov: Vec<f64> = (0..d * d).map(|k| s[k] - m1[k / d] * m1[k % d]).collect();
    (m1, m2, cov, m3)
}

fn probes(n: usize, d: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    use rand::Rng;
    let mut rng = StreamKey::new(seed).rng();
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.05..0.9);
            let x = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            (t, x)
        })
        .collect()
}

#[test]
fn moments_match_brute_force_summation() {
    let tgt = five_point_d3::<f64>();
    for (t, x) in probes(50, 3, 1) {
        let mb = moments(&tgt, t, &x).unwrap();
        let (m1, m2, cov, m3) = brute_moments(&tgt, t, &x);
        for k in 0..3 {
            assert!((mb.m1[k] - m1[k]).abs() < 1e-12);
            assert!((mb.m3[k] - m3[k]).abs() < 1e-12);
        }
        assert!((mb.m2 - m2).abs() < 1e-12);
        for k in 0..9 {
            assert!((mb.m2c[k] - cov[k]).abs() < 1e-12);
        }
        // the velocity is the same brute-force mean, composed by hand
        let v = v_star(&tgt, t, &x).unwrap();
        for k in 0..3 {
            assert!((v[k] - (m1[k] - x[k]) / (1.0 - t)).abs() < 1e-11);
        }
    }
}

#[test]
fn posterior_weight_examples() {
    let tgt = symmetric_pair(1.0_f64, 1).unwrap();
    assert_eq!(posterior_weights(&tgt, 0.0, &[0.8]).unwrap(), vec![0.5, 0.5]);
    let w = posterior_weights(&tgt, 0.5, &[0.0]).unwrap();
    assert!((w[0] - 0.5).abs() < 1e-15);
    let mb = moments(&tgt, 0.5, &[0.0]).unwrap();
    assert_eq!(mb.m1, vec![0.0]);
    assert_eq!(mb.m2, 1.0);
    assert_eq!(mb.m2c, vec![1.0]);
    assert_eq!(mb.m3, vec![0.0]);
    assert!((jac_v_star(&tgt, 0.5, &[0.0]).unwrap()[0] - 2.0).abs() < 1e-14);
    assert_eq!(score(&tgt, 0.5, &[0.0]).unwrap(), vec![0.0]);
    assert_eq!(dt_v_star(&tgt, 0.5, &[0.0]).unwrap(), vec![0.0]);
    assert_eq!(total_dt_v_star(&tgt, 0.5, &[0.0]).unwrap(), vec![0.0]);
    for &t in &[0.0, 0.3, 0.9] {
        assert_eq!(v_star(&tgt, t, &[0.0]).unwrap(), vec![0.0]);
    }
}

#[test]
fn score_matches_mixture_density_derivative() {
    let pts = vec![vec![-0.8], vec![0.1], vec![0.9]];
    let w = [0.2, 0.5, 0.3];
    let tgt = Target::new(1, &pts, Some(&w)).unwrap();
    // q_t is an explicit three-component Gaussian mixture
    let log_q = |t: f64, x: f64| {
        let s = 1.0 - t;
        pts.iter()
            .zip(&w)
            .map(|(y, &p)| p * (-(x - t * y[0]).powi(2) / (2.0 * s * s)).exp() / s)
            .sum::<f64>()
            .ln()
    };
    for &t in &[0.1, 0.4, 0.7, 0.9] {
        for &x in &[-1.0, -0.2, 0.3, 1.4] {
            let h = 1e-5;
            let fd = (log_q(t, x + h) - log_q(t, x - h)) / (2.0 * h);
            let s = score(&tgt, t, &[x]).unwrap()[0];
            assert!((s - fd).abs() <= 1e-6 * (1.0 + s.abs()), "t={t} x={x}: {s} vs {fd}");
        }
    }
}

#[test]
fn jacobian_and_time_derivative_match_finite_differences() {
    let tgt = five_point_d3::<f64>();
    for (t, x) in probes(40, 3, 7) {
        let h = 1e-5 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let j = jac_v_star(&tgt, t, &x).unwrap();
        let scale = j.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for b in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let vp = v_star(&tgt, t, &xp).unwrap();
            let vm = v_star(&tgt, t, &xm).unwrap();
            for a in 0..3 {
                let fd = (vp[a] - vm[a]) / (2.0 * h);
                assert!((j[a * 3 + b] - fd).abs() <= 1e-5 * scale.max(1.0));
            }
        }
        let ht = 1e-5;
        let dt = dt_v_star(&tgt, t, &x).unwrap();
        let vp = v_star(&tgt, t + ht, &x).unwrap();
        let vm = v_star(&tgt, t - ht, &x).unwrap();
        let dscale = dt.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for a in 0..3 {
            let fd = (vp[a] - vm[a]) / (2.0 * ht);
            assert!((dt[a] - fd).abs() <= 1e-5 * dscale, "t={t}: {} vs {fd}", dt[a]);
        }
    }
}

#[test]
fn material_derivative_matches_trajectory_differences() {
    let tgt = five_point_d3::<f64>();
    let x0 = [0.2, -0.3, 0.5];
    let t0 = 0.2;
    for &t in &[0.3, 0.5, 0.7] {
        let xt = flow_point(&tgt, t0, t, &x0, 1e-13).unwrap();
        let h = 1e-4;
        let xp = flow_point(&tgt, t, t + h, &xt, 1e-13).unwrap();
        let xm = flow_point(&tgt, t, t - h, &xt, 1e-13).unwrap();
        let vp = v_star(&tgt, t + h, &xp).unwrap();
        let vm = v_star(&tgt, t - h, &xm).unwrap();
        let tot = total_dt_v_star(&tgt, t, &xt).unwrap();
        let scale = tot.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for k in 0..3 {
            let fd = (vp[k] - vm[k]) / (2.0 * h);
            assert!((tot[k] - fd).abs() <= 1e-5 * scale, "t={t}: {} vs {fd}", tot[k]);
        }
    }
}

#[test]
fn velocity_blows_up_towards_the_end_off_support() {
    let tgt = symmetric_pair(1.0_f64, 1).unwrap();
    let mut last = 0.0;
    for &t in &[0.9, 0.99, 0.999, 0.9999] {
        let v = v_star(&tgt, t, &[0.2]).unwrap()[0].abs();
        assert!(v > last);
        last = v;
    }
    assert!(last > 1e3);
}
