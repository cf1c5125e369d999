//! Measurement routines shared by `verify`, `sweep` and the acceptance suite.
//!
//! Each function runs one self-contained numerical experiment and returns the
//! raw measurements; pass/fail decisions are made by the callers.

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use rflab::corrector::{run_corrector, CorrectorConfig, OuTransition};
use rflab::fit::mean_and_se;
use rflab::linalg::norm_sq;
use rflab::metrics::W2_MAX_PARTICLES;
use rflab::onestep::{e2_chain, ConsistencyOracle};
use rflab::rng::{tags, StreamKey};
use rflab::sampler::{sample, Predictor, SamplerOptions};
use rflab::{
    build_grid, energy_distance, energy_distance_unbiased, endpoint_error_budget, flow_reference,
    total_dt_v_star, w2_cloud_cloud, w2_cloud_target, Cloud, Model, PerturbMode, Plan, Result,
    Target,
};

/// Tolerance of every adaptive reference integration.
pub const REFERENCE_TOL: f64 = 1e-10;

/// One frozen-score ULMC step from a fixed phase-space point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UlmcCase {
    pub g: f64,
    pub rho: f64,
    pub h: f64,
    pub z0: f64,
    pub v0: f64,
}

impl UlmcCase {
    /// A reproducible random case with `g` in [-2, 2], `rho` in [0.5, 5],
    /// `h` in [0.05, 0.5] and a start in [-1, 1]^2.
    pub fn random(key: StreamKey) -> Self {
        use rand::Rng;
        let mut rng = key.rng();
        Self {
            g: rng.random_range(-2.0..2.0),
            rho: rng.random_range(0.5..5.0),
            h: rng.random_range(0.05..0.5),
            z0: rng.random_range(-1.0..1.0),
            v0: rng.random_range(-1.0..1.0),
        }
    }
}

/// Mean and covariance of `(z, v)` with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseMoments {
    /// `[mean z, mean v, var z, var v, cov zv]`.
    pub values: [f64; 5],
    pub standard_errors: [f64; 5],
}

pub const PHASE_MOMENT_NAMES: [&str; 5] = ["mean_z", "mean_v", "var_z", "var_v", "cov_zv"];

fn phase_moments(z: &[f64], v: &[f64]) -> PhaseMoments {
    let (mz, sz) = mean_and_se(z);
    let (mv, sv) = mean_and_se(v);
    let dz: Vec<f64> = z.iter().map(|x| (x - mz).powi(2)).collect();
    let dv: Vec<f64> = v.iter().map(|x| (x - mv).powi(2)).collect();
    let dzv: Vec<f64> = z.iter().zip(v).map(|(a, b)| (a - mz) * (b - mv)).collect();
    let (vz, svz) = mean_and_se(&dz);
    let (vv, svv) = mean_and_se(&dv);
    let (c, sc) = mean_and_se(&dzv);
    PhaseMoments {
        values: [mz, mv, vz, vv, c],
        standard_errors: [sz, sv, svz, svv, sc],
    }
}

/// Comparison of the exact integrator with an Euler–Maruyama refinement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UlmcComparison {
    pub case: UlmcCase,
    pub integrator: PhaseMoments,
    pub oracle: PhaseMoments,
    /// `|difference| / combined standard error` per statistic.
    pub z_scores: [f64; 5],
}

impl UlmcComparison {
    pub fn max_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0, |m, &z| m.max(z))
    }
}

/// Runs `n` particles through one exact step and, independently, through
/// `substeps` Euler–Maruyama steps of the same frozen-score SDE.
pub fn ulmc_vs_euler_maruyama(case: UlmcCase, n: usize, substeps: usize, key: StreamKey) -> UlmcComparison {
    let tr = OuTransition::<f64>::new(case.rho, case.h);
    let exact: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.child(1).particle_rng(i);
            let xi = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let (mut z, mut v) = (case.z0, case.v0);
            tr.apply(&mut z, &mut v, case.g, xi);
            (z, v)
        })
        .collect();
    let dt = case.h / substeps as f64;
    let kick = (2.0 * case.rho * dt).sqrt();
    // particles advance in small interleaved blocks so the independent
    // recurrences overlap in the pipeline
    const BLOCK: usize = 8;
    let em: Vec<(f64, f64)> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|blk| {
            let ids: Vec<usize> = (blk * BLOCK..((blk + 1) * BLOCK).min(n)).collect();
            // the oracle needs 10^4 draws per particle; a small fast generator
            // seeded from each particle's stream keeps this affordable
            let mut rngs: Vec<SmallRng> = ids
                .iter()
                .map(|&i| SmallRng::seed_from_u64(key.child(2).child(i as u64).token()))
                .collect();
            let mut z = vec![case.z0; ids.len()];
            let mut v = vec![case.v0; ids.len()];
            for _ in 0..substeps {
                for p in 0..ids.len() {
                    let xi: f64 = StandardNormal.sample(&mut rngs[p]);
                    let nz = z[p] + v[p] * dt;
                    v[p] += (case.g - case.rho * v[p]) * dt + kick * xi;
                    z[p] = nz;
                }
            }
            z.into_iter().zip(v)
        })
        .collect();
    let split = |s: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { s.iter().copied().unzip() };
    let (ez, ev) = split(&exact);
    let (oz, ov) = split(&em);
    let integrator = phase_moments(&ez, &ev);
    let oracle = phase_moments(&oz, &ov);
    let mut z_scores = [0.0; 5];
    for k in 0..5 {
        let se = integrator.standard_errors[k].hypot(oracle.standard_errors[k]);
        z_scores[k] = (integrator.values[k] - oracle.values[k]).abs() / se;
    }
    UlmcComparison {
        case,
        integrator,
        oracle,
        z_scores,
    }
}

/// Monte Carlo `E ||d/dt v*(t, X_t)||^2` with `X_t ~ q_t`, and its standard error.
pub fn material_derivative_energy(target: &Target, t: f64, n: usize, key: StreamKey) -> Result<(f64, f64)> {
    let (xt, _) = target.sample_interpolant(t, n, key);
    let sq: Vec<f64> = xt
        .as_flat()
        .par_chunks(target.dim())
        .map(|x| total_dt_v_star(target, t, x).map(|g| norm_sq(&g)))
        .collect::<Result<_>>()?;
    Ok(mean_and_se(&sq))
}

/// Paired coupling of `X_{1-delta}` with `X_1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EarlyStopping {
    pub delta: f64,
    /// `delta^2 (d + E ||X_1||^2)`.
    pub analytic: f64,
    /// `(d + R^2) delta^2`.
    pub bound: f64,
    /// `(mean ||X_{1-delta} - X_1||^2)^{1/2}` over the paired samples.
    pub paired_rms: f64,
    /// Delta-method standard error of `paired_rms`.
    pub paired_rms_se: f64,
    /// Exact `W_2` to the target of the first (at most 4096) `X_{1-delta}` samples.
    pub w2_to_target: f64,
}

fn prefix(cloud: &Cloud, n: usize) -> Result<Cloud> {
    let d = cloud.dim();
    Cloud::from_flat(d, cloud.as_flat()[..n.min(cloud.len()) * d].to_vec())
}

pub fn early_stopping(target: &Target, delta: f64, n: usize, key: StreamKey) -> Result<EarlyStopping> {
    let d = target.dim() as f64;
    let r = target.diameter();
    let analytic = delta * delta * (d + target.second_moment());
    let (xt, x1) = target.sample_interpolant(1.0 - delta, n, key);
    let sq: Vec<f64> = xt
        .particles()
        .zip(x1.particles())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum())
        .collect();
    let (ms, se) = mean_and_se(&sq);
    let paired_rms = ms.sqrt();
    Ok(EarlyStopping {
        delta,
        analytic,
        bound: (d + r * r) * delta * delta,
        paired_rms,
        paired_rms_se: se / (2.0 * paired_rms),
        w2_to_target: w2_cloud_target(&prefix(&xt, W2_MAX_PARTICLES)?, target)?,
    })
}

/// Corrector started from exact `q_t` samples, compared with fresh ones.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityPoint {
    pub h_corr: f64,
    pub steps: usize,
    /// Replicate mean of the unbiased energy distance.
    pub energy: f64,
    pub energy_se: f64,
}

/// For each `h` in `h_values`, runs the exact-score corrector at frozen time
/// `t` for total time `t_corr` on `replicates` independent `q_t` clouds of
/// size `n`, and averages the unbiased energy distance between output and a
/// fresh `q_t` cloud.
pub fn corrector_stationarity(
    target: &Target,
    t: f64,
    rho: f64,
    t_corr: f64,
    h_values: &[f64],
    n: usize,
    replicates: usize,
    key: StreamKey,
) -> Result<Vec<StationarityPoint>> {
    let model = Model::exact(target);
    h_values
        .iter()
        .map(|&h| {
            let cfg = CorrectorConfig::with_friction(t, rho, h, t_corr)?;
            let per_rep: Vec<f64> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let rk = key.child(r as u64);
                    let (start, _) = target.sample_interpolant(t, n, rk.child(tags::INITIAL));
                    let (fresh, _) = target.sample_interpolant(t, n, rk.child(tags::REFERENCE));
                    let out = run_corrector(&model, &cfg, start, rk.child(tags::CORRECTOR))?;
                    energy_distance_unbiased(&out, &fresh)
                })
                .collect::<Result<_>>()?;
            let (energy, energy_se) = mean_and_se(&per_rep);
            Ok(StationarityPoint {
                h_corr: cfg.h_corr(),
                steps: cfg.steps(),
                energy,
                energy_se,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Contraction {
    pub shift: f64,
    pub w2_before: f64,
    pub w2_after: f64,
}

impl Contraction {
    pub fn ratio(&self) -> f64 {
        self.w2_after / self.w2_before
    }
}

/// Shifts exact `q_t` samples by `shift e_1`, runs the exact-score corrector
/// and measures `W_2` to fresh `q_t` samples before and after.
pub fn corrector_contraction(
    target: &Target,
    cfg: &CorrectorConfig<f64>,
    shift: f64,
    n: usize,
    key: StreamKey,
) -> Result<Contraction> {
    let t = cfg.t_frozen();
    let mut offset = vec![0.0; target.dim()];
    offset[0] = shift;
    let (start, _) = target.sample_interpolant(t, n, key.child(tags::INITIAL));
    let start = start.translated(&offset);
    let (fresh, _) = target.sample_interpolant(t, n, key.child(tags::REFERENCE));
    let w2_before = w2_cloud_cloud(&start, &fresh)?;
    let out = run_corrector(&Model::exact(target), cfg, start, key.child(tags::CORRECTOR))?;
    Ok(Contraction {
        shift,
        w2_before,
        w2_after: w2_cloud_cloud(&out, &fresh)?,
    })
}

/// Errors of one sampler run against its common-random-number reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplerErrors {
    /// `W_2` to the reference cloud (same seed, exact flow between correctors).
    pub w2_to_ref: f64,
    /// Exact `W_2` to the target.
    pub w2_to_target: f64,
    /// Energy distance to the reference cloud.
    pub energy_distance: f64,
    /// Error budget at the plan's steps.
    pub budget: f64,
}

/// Reference run: the same initial and corrector noise as [`sample`], with
/// each predictor stage replaced by a high-accuracy integration of the exact flow.
pub fn reference_run(target: &Target, plan: &Plan, n: usize, key: StreamKey) -> Result<Cloud> {
    sample(
        &Model::exact(target),
        plan,
        n,
        key,
        SamplerOptions {
            predictor_only: false,
            predictor: Predictor::Adaptive { tol: REFERENCE_TOL },
        },
    )
}

pub fn sampler_errors(
    model: &Model<'_>,
    plan: &Plan,
    reference: &Cloud,
    n: usize,
    key: StreamKey,
) -> Result<SamplerErrors> {
    let out = sample(model, plan, n, key, SamplerOptions::default())?;
    Ok(SamplerErrors {
        w2_to_ref: w2_cloud_cloud(&out, reference)?,
        w2_to_target: w2_cloud_target(&out, model.target())?,
        energy_distance: if n >= 2 { energy_distance(&out, reference)? } else { 0.0 },
        budget: endpoint_error_budget(plan, model.eps_sc()),
    })
}

/// Builds the exact or constant-shift model used by the channel sweeps.
pub fn shifted_model(target: &Target, eps_sc: f64) -> Result<Model<'_>> {
    if eps_sc == 0.0 {
        Ok(Model::exact(target))
    } else {
        Model::perturbed(target, eps_sc, PerturbMode::ConstantShift)
    }
}

/// `grid_sum * K * delta^{1/a}` for one grid.
pub fn normalized_grid_sum(a: f64, delta: f64, k: usize) -> Result<f64> {
    let g = build_grid(a, delta, k)?;
    Ok(g.grid_sum() * k as f64 * delta.powf(1.0 / a))
}

/// Telescoped one-step-error chain on the power-law grid `(a, delta, K)`.
pub fn e2_chain_value(target: &Target, a: f64, delta: f64, k: usize, n: usize, key: StreamKey) -> Result<f64> {
    let grid = build_grid(a, delta, k)?;
    let oracle = ConsistencyOracle::new(target, delta, REFERENCE_TOL)?;
    e2_chain(&oracle, &Model::exact(target), &grid, n, key)
}

/// Reference `q_{t_end}` cloud obtained by flowing fresh Gaussian noise.
pub fn flowed_reference(target: &Target, t_end: f64, n: usize, key: StreamKey) -> Result<Cloud> {
    let z = Cloud::standard_normal(n, target.dim(), key.child(tags::REFERENCE));
    flow_reference(target, 0.0, t_end, z, REFERENCE_TOL)
}
