//! The invariant suite behind `rflab verify`.
//!
//! Every check returns a [`CheckResult`] with the constants it measured and,
//! on failure, the offending probes.

use serde::Serialize;
use serde_json::{json, Value};

use rflab::fit::loglog_slope;
use rflab::linalg::symmetric_operator_norm;
use rflab::rng::StreamKey;
use rflab::{benchmarks, dt_v_star, jac_v_star, score, v_star, Model, Result, Target, VelocityField};

use crate::experiments::{
    early_stopping, material_derivative_energy, normalized_grid_sum, ulmc_vs_euler_maruyama, UlmcCase,
};

/// Signature of a Jacobian oracle, injectable so a corrupted one can be tested.
pub type JacobianFn = fn(&Target, f64, &[f64]) -> Result<Vec<f64>>;

const MAX_REPORTED_FAILURES: usize = 16;

pub const SCORE_TOL: f64 = 1e-10;
pub const FD_TOL: f64 = 1e-5;
pub const LIPSCHITZ_CONSTANT_MAX: f64 = 8.0;
pub const GROWTH_EXPONENT_MAX: f64 = 8.5;
pub const Z_SCORE_MAX: f64 = 3.0;
pub const GRID_BAND: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
    pub measured: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: Value,
    pub failures: Vec<Probe>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, measured: Value, failures: Vec<Probe>) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            failures,
        }
    }

    fn error(name: &str, err: rflab::Error) -> Self {
        Self::new(name, false, json!({ "error": err.to_string() }), Vec::new())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub seed: u64,
    pub target: String,
    pub checks: Vec<CheckResult>,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub delta: f64,
    pub probes: usize,
    pub mc_particles: usize,
    pub em_cases: usize,
    pub em_particles: usize,
    pub em_substeps: usize,
    pub jacobian: JacobianFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            probes: 1000,
            mc_particles: 20_000,
            em_cases: 5,
            em_particles: 20_000,
            em_substeps: 2000,
            jacobian: jac_v_star,
        }
    }
}

/// Probe times `{0.1, 0.3, 0.5, 0.7, 0.9, 1 - delta}` without duplicates.
pub fn probe_times(delta: f64) -> Vec<f64> {
    let mut ts = vec![0.1, 0.3, 0.5, 0.7, 0.9];
    ts.retain(|&t| t < 1.0 - delta - 1e-12);
    ts.push(1.0 - delta);
    ts
}

/// `count` probes spread over `times`, with `x` drawn from `q_t`.
pub fn probes(target: &Target, times: &[f64], count: usize, key: StreamKey) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::with_capacity(count);
    for (j, &t) in times.iter().enumerate() {
        let share = count / times.len() + usize::from(j < count % times.len());
        let (xt, _) = target.sample_interpolant(t, share, key.child(j as u64));
        out.extend(xt.particles().map(|x| (t, x.to_vec())));
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn record(failures: &mut Vec<Probe>, t: f64, x: &[f64], measured: f64, limit: f64) {
    if failures.len() < MAX_REPORTED_FAILURES {
        failures.push(Probe {
            t,
            x: x.to_vec(),
            measured,
            limit,
        });
    }
}

/// `score = -x / (1 - t) + t / (1 - t) * v*`, to `1e-10 (1 + ||x||)`.
pub fn check_score_identity(target: &Target, probes: &[(f64, Vec<f64>)]) -> CheckResult {
    let name = "score_velocity_identity";
    let model = Model::exact(target);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (t, x) in probes {
        let (s, a) = match (score(target, *t, x), model.approx_score(*t, x)) {
            (Ok(s), Ok(a)) => (s, a),
            (Err(e), _) | (_, Err(e)) => return CheckResult::error(name, e),
        };
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = s.iter().zip(&a).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / (1.0 + xn);
        worst = worst.max(err);
        if err > SCORE_TOL {
            record(&mut failures, *t, x, err, SCORE_TOL);
        }
    }
    CheckResult::new(
        name,
        failures.is_empty(),
        json!({ "probes": probes.len(), "max_scaled_error": worst, "tolerance": SCORE_TOL }),
        failures,
    )
}

/// Central differences of `v*` in `x` against `jacobian`, relative to the
/// largest Jacobian entry (at least 1), with step `1e-5 (1 + ||x||)`.
pub fn check_jacobian(target: &Target, probes: &[(f64, Vec<f64>)], jacobian: JacobianFn) -> CheckResult {
    let name = "jacobian_finite_difference";
    let d = target.dim();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (t, x) in probes {
        let j = match jacobian(target, *t, x) {
            Ok(j) => j,
            Err(e) => return CheckResult::error(name, e),
        };
        let scale = max_abs(&j).max(1.0);
        let h = 1e-5 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut err: f64 = 0.0;
        for b in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let (vp, vm) = match (v_star(target, *t, &xp), v_star(target, *t, &xm)) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return CheckResult::error(name, e),
            };
            for a in 0..d {
                let fd = (vp[a] - vm[a]) / (2.0 * h);
                err = err.max((j[a * d + b] - fd).abs() / scale);
            }
        }
        worst = worst.max(err);
        if err > FD_TOL {
            record(&mut failures, *t, x, err, FD_TOL);
        }
    }
    CheckResult::new(
        name,
        failures.is_empty(),
        json!({ "probes": probes.len(), "max_relative_error": worst, "tolerance": FD_TOL }),
        failures,
    )
}

/// Central differences of `v*` in `t` against the analytic time derivative.
/// Probes at `t >= t_max` are skipped.
pub fn check_time_derivative(target: &Target, probes: &[(f64, Vec<f64>)], t_max: f64) -> CheckResult {
    let name = "time_derivative_finite_difference";
    let ht = 1e-6;
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut failures = Vec::new();
    for (t, x) in probes.iter().filter(|(t, _)| *t < t_max) {
        let (dt, vp, vm) = match (
            dt_v_star(target, *t, x),
            v_star(target, *t + ht, x),
            v_star(target, *t - ht, x),
        ) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return CheckResult::error(name, e),
        };
        used += 1;
        let scale = max_abs(&dt).max(1.0);
        let err = dt
            .iter()
            .zip(vp.iter().zip(&vm))
            .map(|(g, (p, m))| (g - (p - m) / (2.0 * ht)).abs() / scale)
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > FD_TOL {
            record(&mut failures, *t, x, err, FD_TOL);
        }
    }
    CheckResult::new(
        name,
        failures.is_empty(),
        json!({ "probes": used, "max_relative_error": worst, "tolerance": FD_TOL }),
        failures,
    )
}

/// `sup ||jac v*||_op / (R^2 / delta^3)` over the probes, required `<= 8`.
pub fn check_lipschitz_budget(target: &Target, probes: &[(f64, Vec<f64>)], delta: f64) -> CheckResult {
    let name = "lipschitz_budget";
    let d = target.dim();
    let r = target.diameter();
    let budget = r * r / delta.powi(3);
    let mut sup: f64 = 0.0;
    let mut at = (0.0, Vec::new());
    for (t, x) in probes {
        match jac_v_star(target, *t, x) {
            Ok(j) => {
                let op = symmetric_operator_norm(&j, d);
                if op > sup {
                    sup = op;
                    at = (*t, x.clone());
                }
            }
            Err(e) => return CheckResult::error(name, e),
        }
    }
    let c = sup / budget;
    let mut failures = Vec::new();
    if c > LIPSCHITZ_CONSTANT_MAX {
        record(&mut failures, at.0, &at.1, c, LIPSCHITZ_CONSTANT_MAX);
    }
    CheckResult::new(
        name,
        failures.is_empty(),
        json!({ "sup_operator_norm": sup, "budget": budget, "fitted_constant": c, "limit": LIPSCHITZ_CONSTANT_MAX }),
        failures,
    )
}

/// Monte Carlo `E ||d/dt v*(t, X_t)||^2` against `R^4 max(R^2, d) / (1 - t)^8`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub shape: Vec<f64>,
    /// Smallest `C` with every estimate `<= C * shape`.
    pub constant: f64,
    /// Log-log slope of the estimates against `1 / (1 - t)`.
    pub exponent: f64,
}

/// Estimates below this are treated as zero when taking logarithms.
const ESTIMATE_FLOOR: f64 = 1e-300;

pub fn material_derivative_growth(target: &Target, times: &[f64], n: usize, key: StreamKey) -> Result<GrowthFit> {
    let r = target.diameter();
    let d = target.dim() as f64;
    let mut estimates = Vec::new();
    let mut standard_errors = Vec::new();
    let mut shape = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let (m, se) = material_derivative_energy(target, t, n, key.child(j as u64))?;
        estimates.push(m);
        standard_errors.push(se);
        shape.push(r.powi(4) * (r * r).max(d) / (1.0 - t).powi(8));
    }
    let constant = estimates.iter().zip(&shape).map(|(e, s)| e / s).fold(0.0, f64::max);
    let inv: Vec<f64> = times.iter().map(|t| 1.0 / (1.0 - t)).collect();
    let logged: Vec<f64> = estimates.iter().map(|e| e.max(ESTIMATE_FLOOR)).collect();
    let exponent = loglog_slope(&inv, &logged)?.slope;
    Ok(GrowthFit {
        times: times.to_vec(),
        estimates,
        standard_errors,
        shape,
        constant,
        exponent,
    })
}

pub fn check_material_derivative(target: &Target, times: &[f64], n: usize, key: StreamKey) -> CheckResult {
    let name = "material_derivative_growth";
    match material_derivative_growth(target, times, n, key) {
        Ok(fit) => {
            let mut failures = Vec::new();
            if !fit.constant.is_finite() || !(fit.exponent <= GROWTH_EXPONENT_MAX) {
                let last = fit.times.len() - 1;
                record(&mut failures, fit.times[last], &[], fit.exponent, GROWTH_EXPONENT_MAX);
            }
            CheckResult::new(name, failures.is_empty(), json!(fit), failures)
        }
        Err(e) => CheckResult::error(name, e),
    }
}

/// `delta^2 (d + E ||X_1||^2) <= (d + R^2) delta^2`, and the paired root mean
/// square is within three standard errors of the analytic root.
pub fn check_early_stopping(targets: &[(String, Target)], deltas: &[f64], n: usize, key: StreamKey) -> CheckResult {
    let name = "early_stopping_order";
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, (label, tgt)) in targets.iter().enumerate() {
        for (j, &delta) in deltas.iter().enumerate() {
            let es = match early_stopping(tgt, delta, n, key.child(i as u64).child(j as u64)) {
                Ok(es) => es,
                Err(e) => return CheckResult::error(name, e),
            };
            let limit = es.analytic.sqrt() + 3.0 * es.paired_rms_se;
            let ok = es.analytic <= es.bound * (1.0 + 1e-12) && es.paired_rms <= limit;
            if !ok {
                record(&mut failures, 1.0 - delta, &[], es.paired_rms, limit);
            }
            rows.push(json!({ "target": label, "passed": ok, "result": es }));
        }
    }
    CheckResult::new(name, failures.is_empty(), Value::Array(rows), failures)
}

/// Exact ULMC step against an Euler–Maruyama refinement on random cases.
pub fn check_ulmc(cases: usize, n: usize, substeps: usize, key: StreamKey) -> CheckResult {
    let name = "ulmc_vs_euler_maruyama";
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for c in 0..cases {
        let case = UlmcCase::random(key.child(c as u64).child(0));
        let cmp = ulmc_vs_euler_maruyama(case, n, substeps, key.child(c as u64).child(1));
        if cmp.max_z() > Z_SCORE_MAX {
            record(&mut failures, case.h, &[case.g, case.rho, case.z0, case.v0], cmp.max_z(), Z_SCORE_MAX);
        }
        rows.push(json!(cmp));
    }
    CheckResult::new(
        name,
        failures.is_empty(),
        json!({ "particles": n, "substeps": substeps, "cases": rows }),
        failures,
    )
}

/// Spread of `grid_sum * K * delta^{1/a}` over `ks`, per exponent `a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridBand {
    pub a: f64,
    pub values: Vec<f64>,
    /// `max / min` over `K`.
    pub spread: f64,
}

pub fn grid_bands(delta: f64, ks: &[usize], exponents: &[f64]) -> Result<Vec<GridBand>> {
    exponents
        .iter()
        .map(|&a| {
            let values = ks
                .iter()
                .map(|&k| normalized_grid_sum(a, delta, k))
                .collect::<Result<Vec<_>>>()?;
            let hi = values.iter().copied().fold(f64::MIN, f64::max);
            let lo = values.iter().copied().fold(f64::MAX, f64::min);
            Ok(GridBand { a, values, spread: hi / lo })
        })
        .collect()
}

pub fn check_grid_band(delta: f64, ks: &[usize], exponents: &[f64]) -> CheckResult {
    let name = "grid_sum_band";
    match grid_bands(delta, ks, exponents) {
        Ok(bands) => {
            let all: Vec<f64> = bands.iter().flat_map(|b| b.values.iter().copied()).collect();
            let joint = all.iter().copied().fold(f64::MIN, f64::max) / all.iter().copied().fold(f64::MAX, f64::min);
            let mut failures = Vec::new();
            for b in &bands {
                if !(b.spread <= GRID_BAND) {
                    record(&mut failures, 1.0 - delta, &[b.a], b.spread, GRID_BAND);
                }
            }
            CheckResult::new(
                name,
                failures.is_empty(),
                json!({ "delta": delta, "k": ks, "bands": bands, "joint_spread": joint, "limit": GRID_BAND }),
                failures,
            )
        }
        Err(e) => CheckResult::error(name, e),
    }
}

/// Runs every check on `target` (plus the shipped benchmarks for the
/// early-stopping order).
pub fn run_all(target: &Target, label: &str, seed: u64, opts: &VerifyOptions) -> VerifyReport {
    let key = StreamKey::new(seed);
    let times = probe_times(opts.delta);
    let pr = probes(target, &times, opts.probes, key.child(1));
    let mut stopping_targets: Vec<(String, Target)> =
        benchmarks::all().into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    if benchmarks::by_name::<f64>(label).is_none() {
        stopping_targets.push((label.to_string(), target.clone()));
    }
    let mut growth_times = vec![0.5, 0.7, 0.9, 0.95];
    growth_times.retain(|&t| t < 1.0 - opts.delta - 1e-12);
    growth_times.push(1.0 - opts.delta);
    let checks = vec![
        check_score_identity(target, &pr),
        check_jacobian(target, &pr, opts.jacobian),
        check_time_derivative(target, &pr, 1.0 - opts.delta - 1e-12),
        check_lipschitz_budget(target, &pr, opts.delta),
        check_material_derivative(target, &growth_times, opts.mc_particles, key.child(2)),
        check_early_stopping(&stopping_targets, &[0.2, 0.05], opts.mc_particles, key.child(3)),
        check_ulmc(opts.em_cases, opts.em_particles, opts.em_substeps, key.child(4)),
        check_grid_band(0.05, &[64, 256, 1024, 4096], &[1.0, 2.0, 4.0]),
    ];
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        seed,
        target: label.to_string(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corrupted_jacobian(target: &Target, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut j = jac_v_star(target, t, x)?;
        j[0] *= 1.01;
        Ok(j)
    }

    #[test]
    fn jacobian_check_catches_a_corrupted_formula() {
        let tgt = benchmarks::five_point_d3();
        let pr = probes(&tgt, &probe_times(0.1), 60, StreamKey::new(3));
        assert!(check_jacobian(&tgt, &pr, jac_v_star).passed);
        let bad = check_jacobian(&tgt, &pr, corrupted_jacobian);
        assert!(!bad.passed);
        assert!(!bad.failures.is_empty());
    }

    #[test]
    fn probe_times_deduplicate_the_end() {
        assert_eq!(probe_times(0.1), vec![0.1, 0.3, 0.5, 0.7, 0.9]);
        assert_eq!(probe_times(0.02).last(), Some(&0.98));
        assert_eq!(probe_times(0.02).len(), 6);
    }

    #[test]
    fn probes_have_the_requested_count() {
        let tgt = benchmarks::two_point();
        assert_eq!(probes(&tgt, &probe_times(0.1), 1000, StreamKey::new(0)).len(), 1000);
    }

    #[test]
    fn grid_bands_on_the_uniform_grid() {
        let b = grid_bands(0.05, &[64, 256], &[1.0]).unwrap();
        assert!(b[0].spread >= 1.0 && b[0].spread < GRID_BAND);
    }
}
