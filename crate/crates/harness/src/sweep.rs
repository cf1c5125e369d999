//! Parameter sweeps: one record per configuration, written as CSV, plus a
//! log-log fit summary per axis.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use rflab::fit::loglog_slope;
use rflab::rng::StreamKey;
use rflab::{build_grid, ConsistencyOracle, Model, Plan, Target};

use crate::config::{Config, ConfigError, ModelKindSetting, PerturbModeSetting};
use crate::experiments::{
    flowed_reference, normalized_grid_sum, reference_run, sampler_errors, REFERENCE_TOL,
};
use crate::verify::GRID_BAND;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pred,
    Corr,
    Eps,
    Onestep,
    Grid,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Pred => "pred",
            Axis::Corr => "corr",
            Axis::Eps => "eps",
            Axis::Onestep => "onestep",
            Axis::Grid => "grid",
        }
    }

    /// Accepted slope range, if the axis has one.
    pub fn expected_slope(self) -> Option<(f64, f64)> {
        match self {
            Axis::Pred | Axis::Eps => Some((0.7, 1.3)),
            Axis::Onestep => Some((-1.3, -0.7)),
            Axis::Corr | Axis::Grid => None,
        }
    }
}

/// Plan constants in effect for a record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanSnapshot {
    pub delta: f64,
    pub r: f64,
    pub d: usize,
    pub l_vx: f64,
    pub l_vt: f64,
    pub l_sx: f64,
    pub t_pred: f64,
    pub t_corr: f64,
    pub n_stages: usize,
    pub h_pred: f64,
    pub h_corr: f64,
    pub c_rho: f64,
}

impl From<&Plan> for PlanSnapshot {
    fn from(p: &Plan) -> Self {
        Self {
            delta: p.delta,
            r: p.r,
            d: p.d,
            l_vx: p.l_vx,
            l_vt: p.l_vt,
            l_sx: p.l_sx,
            t_pred: p.t_pred,
            t_corr: p.t_corr,
            n_stages: p.n_stages,
            h_pred: p.h_pred,
            h_corr: p.h_corr,
            c_rho: p.c_rho,
        }
    }
}

/// Measurements of one cell. Quantities an axis does not produce are NaN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Measured {
    pub w2_to_ref: f64,
    pub w2_to_target: f64,
    pub energy_distance: f64,
    pub budget: f64,
}

impl Measured {
    const NONE: Self = Self {
        w2_to_ref: f64::NAN,
        w2_to_target: f64::NAN,
        energy_distance: f64::NAN,
        budget: f64::NAN,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub axis: Axis,
    pub index: usize,
    pub seed: u64,
    pub n_particles: usize,
    pub plan: PlanSnapshot,
    pub eps_sc: f64,
    pub k: usize,
    pub a: f64,
    /// The swept value.
    pub x: f64,
    /// The quantity fitted against `x`.
    pub y: f64,
    pub measured: Measured,
    pub wall_ms: u64,
}

pub const CSV_HEADER: &str = "axis,index,seed,n_particles,delta,r,d,l_vx,l_vt,l_sx,t_pred,t_corr,n_stages,\
h_pred,h_corr,c_rho,eps_sc,k,a,x,y,w2_to_ref,w2_to_target,energy_distance,budget,wall_ms";

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

impl SweepRecord {
    pub fn csv_row(&self) -> String {
        let p = &self.plan;
        let m = &self.measured;
        let reals = [
            p.delta, p.r, p.l_vx, p.l_vt, p.l_sx, p.t_pred, p.t_corr, p.h_pred, p.h_corr, p.c_rho,
        ]
        .map(sci);
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.axis.name(),
            self.index,
            self.seed,
            self.n_particles,
            reals[0],
            reals[1],
            p.d,
            reals[2],
            reals[3],
            reals[4],
            reals[5],
            reals[6],
            p.n_stages,
            reals[7],
            reals[8],
            reals[9],
            sci(self.eps_sc),
            self.k,
            sci(self.a),
            sci(self.x),
            sci(self.y),
            sci(m.w2_to_ref),
            sci(m.w2_to_target),
            sci(m.energy_distance),
            sci(m.budget),
            self.wall_ms
        )
        .expect("writing to a String");
        row
    }
}

pub fn to_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Least-squares log-log fit of one group of records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub axis: Axis,
    pub group: String,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% confidence interval from Student's t with `points - 2` degrees of freedom.
    pub ci95: [f64; 2],
    pub expected: Option<[f64; 2]>,
    /// `max / min` of `y` within the group.
    pub spread: f64,
    pub passed: bool,
}

pub fn fit_group(axis: Axis, group: String, x: &[f64], y: &[f64]) -> FitSummary {
    let spread = y.iter().copied().fold(f64::MIN, f64::max) / y.iter().copied().fold(f64::MAX, f64::min);
    let fit = loglog_slope(x, y).ok();
    let (slope, intercept, slope_se) = fit.map_or((f64::NAN, f64::NAN, f64::NAN), |f| (f.slope, f.intercept, f.slope_se));
    let half = if x.len() > 2 && slope_se.is_finite() {
        let t = StudentsT::new(0.0, 1.0, (x.len() - 2) as f64).map_or(f64::NAN, |d| d.inverse_cdf(0.975));
        t * slope_se
    } else {
        f64::NAN
    };
    let expected = axis.expected_slope();
    let passed = match axis {
        Axis::Grid => spread <= GRID_BAND,
        _ => expected.is_none_or(|(lo, hi)| slope >= lo && slope <= hi),
    };
    FitSummary {
        axis,
        group,
        points: x.len(),
        slope,
        intercept,
        slope_se,
        ci95: [slope - half, slope + half],
        expected: expected.map(|(a, b)| [a, b]),
        spread,
        passed,
    }
}

/// Groups records by everything except the swept value and fits each group.
pub fn summarize(axis: Axis, records: &[SweepRecord]) -> Vec<FitSummary> {
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        let label = match axis {
            Axis::Onestep | Axis::Grid => format!("delta={} a={}", r.plan.delta, r.a),
            _ => format!("delta={}", r.plan.delta),
        };
        match groups.iter_mut().find(|g| g.0 == label) {
            Some(g) => {
                g.1.push(r.x);
                g.2.push(r.y);
            }
            None => groups.push((label, vec![r.x], vec![r.y])),
        }
    }
    groups
        .into_iter()
        .map(|(label, x, y)| fit_group(axis, label, &x, &y))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep cell failed: {0}")]
    Run(#[from] rflab::Error),
}

#[derive(Clone, Debug)]
struct Cell {
    delta: f64,
    h_pred: Option<f64>,
    h_corr: Option<f64>,
    eps: f64,
    k: usize,
    a: f64,
}

fn geometric(base: f64, ratio: f64, from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|j| base * ratio.powi(j)).collect()
}

fn or_default<T: Clone>(given: &[T], default: Vec<T>) -> Vec<T> {
    if given.is_empty() {
        default
    } else {
        given.to_vec()
    }
}

fn cells(cfg: &Config, axis: Axis, target: &Target) -> Result<Vec<Cell>, ConfigError> {
    let s = &cfg.sweep;
    let default_delta = match axis {
        Axis::Grid => 0.05,
        // at small delta a constant shift moves mass between modes and the
        // error is no longer linear in eps
        Axis::Eps => 0.3,
        _ => cfg.plan.delta,
    };
    let deltas = or_default(&s.delta, vec![default_delta]);
    let mut out = Vec::new();
    for &delta in &deltas {
        let base = cfg.build_plan_with(target, Some(delta), None, None)?;
        let cell = Cell {
            delta,
            h_pred: None,
            h_corr: None,
            eps: 0.0,
            k: 0,
            a: f64::NAN,
        };
        match axis {
            Axis::Pred => {
                for h in or_default(&s.h_pred, geometric(base.t_pred, 0.5, 3, 7)) {
                    out.push(Cell { h_pred: Some(h), ..cell.clone() });
                }
            }
            Axis::Corr => {
                for h in or_default(&s.h_corr, geometric(base.t_corr, 0.5, 0, 4)) {
                    out.push(Cell { h_corr: Some(h), ..cell.clone() });
                }
            }
            Axis::Eps => {
                // fine predictor steps keep the discretization floor below the eps signal
                let h = cfg.plan.h_pred.unwrap_or(base.t_pred / 64.0);
                for e in or_default(&s.eps, vec![0.01, 0.02, 0.04, 0.08]) {
                    out.push(Cell {
                        eps: e,
                        h_pred: Some(h),
                        ..cell.clone()
                    });
                }
            }
            Axis::Onestep => {
                for a in or_default(&s.a, vec![1.0, 2.0]) {
                    for k in or_default(&s.k, vec![16, 32, 64, 128, 256]) {
                        out.push(Cell { a, k, ..cell.clone() });
                    }
                }
            }
            Axis::Grid => {
                for a in or_default(&s.a, vec![1.0, 2.0, 4.0]) {
                    for k in or_default(&s.k, vec![64, 256, 1024, 4096]) {
                        out.push(Cell { a, k, ..cell.clone() });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn sweep_model<'a>(cfg: &Config, target: &'a Target, eps: f64) -> Result<Model<'a>, ConfigError> {
    let mut model_cfg = cfg.clone();
    model_cfg.model.kind = ModelKindSetting::Perturbed;
    model_cfg.model.eps_sc = eps;
    if cfg.model.kind != ModelKindSetting::Perturbed {
        model_cfg.model.mode = PerturbModeSetting::Constant;
    }
    model_cfg.build_model(target)
}

/// Runs every cell of `axis`, in parallel, and returns records in cell order.
pub fn run_sweep(cfg: &Config, axis: Axis, target: &Target) -> Result<Vec<SweepRecord>, SweepError> {
    let cells = cells(cfg, axis, target)?;
    let n = cfg.particles;
    let key = StreamKey::new(cfg.seed);
    // one common-random-number reference per delta for the sampler axes
    let mut references = Vec::new();
    if matches!(axis, Axis::Pred | Axis::Eps | Axis::Corr) {
        let mut seen: Vec<f64> = cells.iter().map(|c| c.delta).collect();
        seen.dedup();
        for delta in seen {
            let plan = cfg.build_plan_with(target, Some(delta), None, None)?;
            let reference = if axis == Axis::Corr {
                flowed_reference(target, 1.0 - delta, n, key)?
            } else {
                reference_run(target, &plan, n, key)?
            };
            references.push((delta, reference));
        }
    }
    cells
        .par_iter()
        .enumerate()
        .map(|(index, cell)| {
            let start = Instant::now();
            let plan = cfg.build_plan_with(target, Some(cell.delta), cell.h_pred, cell.h_corr)?;
            let (eps_sc, x, y, measured) = match axis {
                Axis::Pred | Axis::Corr | Axis::Eps => {
                    let model = if axis == Axis::Eps {
                        sweep_model(cfg, target, cell.eps)?
                    } else {
                        cfg.build_model(target)?
                    };
                    let reference = &references
                        .iter()
                        .find(|(d, _)| *d == cell.delta)
                        .expect("reference per delta")
                        .1;
                    let e = sampler_errors(&model, &plan, reference, n, key)?;
                    let x = match axis {
                        Axis::Pred => plan.h_pred,
                        Axis::Corr => plan.h_corr,
                        _ => cell.eps,
                    };
                    let m = Measured {
                        w2_to_ref: e.w2_to_ref,
                        w2_to_target: e.w2_to_target,
                        energy_distance: e.energy_distance,
                        budget: e.budget,
                    };
                    (model.eps_sc(), x, e.w2_to_ref, m)
                }
                Axis::Onestep => {
                    let grid = build_grid(cell.a, cell.delta, cell.k)?;
                    let oracle = ConsistencyOracle::new(target, cell.delta, REFERENCE_TOL)?;
                    let rep = rflab::onestep_generation_error(&oracle, &Model::exact(target), &grid, n, key)?;
                    let m = Measured {
                        w2_to_ref: rep.w2_to_reference,
                        w2_to_target: rep.w2_to_target,
                        energy_distance: f64::NAN,
                        budget: rep.bound,
                    };
                    (0.0, cell.k as f64, rep.e2_chain, m)
                }
                Axis::Grid => (
                    0.0,
                    cell.k as f64,
                    normalized_grid_sum(cell.a, cell.delta, cell.k)?,
                    Measured::NONE,
                ),
            };
            Ok(SweepRecord {
                axis,
                index,
                seed: cfg.seed,
                n_particles: if axis == Axis::Grid { 0 } else { n },
                plan: PlanSnapshot::from(&plan),
                eps_sc,
                k: cell.k,
                a: cell.a,
                x,
                y,
                measured,
                wall_ms: start.elapsed().as_millis() as u64,
            })
        })
        .collect()
}
