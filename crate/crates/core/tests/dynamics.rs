//! Predictor, corrector and sampler behaviour against reference computations.

use rflab::benchmarks::{five_point_d3, two_point};
use rflab::corrector::{run_corrector, CorrectorConfig};
use rflab::fit::{loglog_slope, mean_and_se};
use rflab::rng::{tags, StreamKey};
use rflab::sampler::{sample, SamplerOptions, SchedulePlan};
use rflab::{
    flow_reference, predict_step, run_stage, v_star, w2_cloud_cloud, Cloud, PerturbMode,
    PredictorConfig, TimePoint, VelocityField, VelocityModel,
};

fn rms_gap(a: &Cloud, b: &Cloud) -> f64 {
    let s: f64 = a
        .particles()
        .zip(b.particles())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum();
    (s / a.len() as f64).sqrt()
}

#[test]
fn euler_stage_converges_at_first_order() {
    let tgt = two_point::<f64>();
    let m = VelocityModel::exact(&tgt);
    let (t0, t1, delta) = (0.1, 0.6, 0.1);
    let span: f64 = t1 - t0;
    let start = Cloud::standard_normal(256, 1, StreamKey::new(21));
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for p in 4..=10 {
        let h = span / f64::from(1u32 << p);
        let coarse = run_stage(&m, &PredictorConfig::new(h, t0, t1, delta).unwrap(), start.clone()).unwrap();
        let fine = run_stage(&m, &PredictorConfig::new(h / 100.0, t0, t1, delta).unwrap(), start.clone()).unwrap();
        hs.push(h);
        errs.push(rms_gap(&coarse, &fine));
    }
    let fit = loglog_slope(&hs, &errs).unwrap();
    assert!((0.8..=1.2).contains(&fit.slope), "slope {}", fit.slope);
}

#[test]
fn one_step_expansion_is_bounded() {
    // W2 after one frozen-velocity step stays within exp(c L_vX h) of W2 before
    let tgt = five_point_d3::<f64>();
    let m = VelocityModel::exact(&tgt);
    let delta = 0.3;
    let plan = SchedulePlan::new(delta, tgt.diameter(), 3, 1e-3, 1e-3).unwrap();
    let h = plan.t_pred;
    let mut worst = f64::NEG_INFINITY;
    for (i, &t) in [0.0, 0.2, 0.4, 0.6].iter().enumerate() {
        let key = StreamKey::new(100 + i as u64);
        let (a, _) = tgt.sample_interpolant(t, 200, key.child(1));
        let (b, _) = tgt.sample_interpolant(t, 200, key.child(2));
        let w0 = w2_cloud_cloud(&a, &b).unwrap();
        let at = TimePoint::new(t, delta).unwrap();
        let a1 = predict_step(&m, at, h, a).unwrap();
        let b1 = predict_step(&m, at, h, b).unwrap();
        let w1 = w2_cloud_cloud(&a1, &b1).unwrap();
        worst = worst.max((w1 / w0).ln() / (plan.l_vx * h));
    }
    assert!(worst <= 4.0, "fitted c = {worst}");
}

#[test]
fn sinusoidal_perturbation_stays_within_budget() {
    let tgt = five_point_d3::<f64>();
    let eps = 0.1;
    let m = VelocityModel::perturbed(&tgt, eps, PerturbMode::SmoothSinusoid { omega: 5.0 }).unwrap();
    for &t in &[0.1, 0.3, 0.5, 0.7, 0.9] {
        let (xt, _) = tgt.sample_interpolant(t, 100_000, StreamKey::new(5));
        let sq: Vec<f64> = xt
            .particles()
            .map(|x| {
                let v = m.velocity(t, x).unwrap();
                let v0 = v_star(&tgt, t, x).unwrap();
                v.iter().zip(&v0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .collect();
        let (ms, se) = mean_and_se(&sq);
        assert!(ms.sqrt() <= eps + 1e-12);
        assert!(ms <= eps * eps + 3.0 * se.max(0.0) + 1e-15);
        // realized score error is (t / (1 - t)) times the velocity error
        let x = xt.particle(0);
        let ds: f64 = m
            .approx_score(t, x)
            .unwrap()
            .iter()
            .zip(&VelocityModel::exact(&tgt).approx_score(t, x).unwrap())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(ds <= t / (1.0 - t) * eps + 1e-12);
    }
}

#[test]
fn corrector_noise_is_fresh_per_stream() {
    let tgt = two_point::<f64>();
    let m = VelocityModel::exact(&tgt);
    let t = 0.5;
    let cfg = CorrectorConfig::with_friction(t, 4.0, 0.01, 0.25).unwrap();
    let (start, _) = tgt.sample_interpolant(t, 4000, StreamKey::new(1));
    let a = run_corrector(&m, &cfg, start.clone(), StreamKey::new(2)).unwrap();
    let b = run_corrector(&m, &cfg, start.clone(), StreamKey::new(3)).unwrap();
    // correlate the displacements, which removes the shared input
    let da: Vec<f64> = a.as_flat().iter().zip(start.as_flat()).map(|(x, s)| x - s).collect();
    let db: Vec<f64> = b.as_flat().iter().zip(start.as_flat()).map(|(x, s)| x - s).collect();
    let (ma, _) = mean_and_se(&da);
    let (mb, _) = mean_and_se(&db);
    let cov: f64 = da.iter().zip(&db).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = da.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = db.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() <= 0.05, "correlation {corr}");
}

#[test]
fn sampler_output_is_independent_of_thread_count() {
    let tgt = five_point_d3::<f64>();
    let m = VelocityModel::exact(&tgt);
    let plan = SchedulePlan::new(0.6, tgt.diameter(), 3, 0.05, 0.1).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample(&m, &plan, 300, StreamKey::new(9), SamplerOptions::default()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    assert_ne!(
        one,
        sample(&m, &plan, 300, StreamKey::new(10), SamplerOptions::default()).unwrap()
    );
}

#[test]
fn sampler_reaches_the_reference_law() {
    let tgt = two_point::<f64>();
    let m = VelocityModel::exact(&tgt);
    let delta = 0.5;
    let plan = SchedulePlan::new(delta, tgt.diameter(), 1, 0.125 / 16.0, 0.25 / 16.0).unwrap();
    let out = sample(&m, &plan, 1024, StreamKey::new(4), SamplerOptions::default()).unwrap();
    let z = Cloud::standard_normal(1024, 1, StreamKey::new(5).child(tags::REFERENCE));
    let reference = flow_reference(&tgt, 0.0, 1.0 - delta, z, 1e-10).unwrap();
    let w2 = w2_cloud_cloud(&out, &reference).unwrap();
    assert!(w2 <= 0.05 * tgt.diameter(), "W2 = {w2}");
}

#[test]
fn single_precision_tracks_double_precision() {
    let tgt64 = five_point_d3::<f64>();
    let tgt32 = five_point_d3::<f32>();
    let plan64 = SchedulePlan::new(0.6, tgt64.diameter(), 3, 0.05, 0.1).unwrap();
    let plan32 = SchedulePlan::new(0.6_f32, tgt32.diameter(), 3, 0.05, 0.1).unwrap();
    let opts = SamplerOptions {
        predictor_only: true,
        ..Default::default()
    };
    let a = sample(&VelocityModel::exact(&tgt64), &plan64, 64, StreamKey::new(1), opts).unwrap();
    let b = sample(&VelocityModel::exact(&tgt32), &plan32, 64, StreamKey::new(1), SamplerOptions {
        predictor_only: true,
        ..Default::default()
    })
    .unwrap();
    let gap = rms_gap(&a, &b.cast::<f64>());
    assert!(gap < 1e-4, "gap {gap}");
}
