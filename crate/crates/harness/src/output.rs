//! Particle files and the `sample` summary.
//!
//! The binary layout is little-endian: the magic `RFLB`, a `u32` version,
//! `u64` particle count, `u64` dimension, then the coordinates as `f64`
//! row-major.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use rflab::rng::{tags, StreamKey};
use rflab::sampler::{sample, Predictor, SamplerOptions};
use rflab::{endpoint_error_budget, energy_distance, w2_cloud_cloud, w2_cloud_target, Cloud, Model, Plan, Result};

use crate::config::OutputFormat;
use crate::experiments::REFERENCE_TOL;
use crate::sweep::PlanSnapshot;

pub const BIN_MAGIC: &[u8; 4] = b"RFLB";
pub const BIN_VERSION: u32 = 1;

/// Above this many particles in `d > 1` the cubic-time exact `W_2` between
/// clouds is skipped in summaries.
pub const SUMMARY_W2_LIMIT: usize = 1024;

pub fn particles_csv(cloud: &Cloud) -> String {
    let d = cloud.dim();
    let mut s = (0..d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for p in cloud.particles() {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn particles_bin(cloud: &Cloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * cloud.as_flat().len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.dim() as u64).to_le_bytes());
    for v in cloud.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a file written by [`particles_bin`].
pub fn read_particles_bin(bytes: &[u8]) -> Option<Cloud> {
    let word = |at: usize| -> Option<u64> { Some(u64::from_le_bytes(bytes.get(at..at + 8)?.try_into().ok()?)) };
    if bytes.get(..4)? != BIN_MAGIC || u32::from_le_bytes(bytes.get(4..8)?.try_into().ok()?) != BIN_VERSION {
        return None;
    }
    let n = usize::try_from(word(8)?).ok()?;
    let d = usize::try_from(word(16)?).ok()?;
    let body = bytes.get(24..)?;
    if body.len() != n.checked_mul(d)?.checked_mul(8)? {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Cloud::from_flat(d.max(1), data).ok()
}

pub fn write_particles(dir: &Path, cloud: &Cloud, format: OutputFormat) -> std::io::Result<std::path::PathBuf> {
    let (name, bytes) = match format {
        OutputFormat::Csv => ("particles.csv", particles_csv(cloud).into_bytes()),
        OutputFormat::Bin => ("particles.bin", particles_bin(cloud)),
    };
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(&bytes)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleSummary {
    pub target: String,
    pub seed: u64,
    pub n_particles: usize,
    pub model: String,
    pub eps_sc: f64,
    pub predictor_only: bool,
    pub plan: PlanSnapshot,
    /// Exact `W_2` to the target.
    pub w2_to_target: Option<f64>,
    /// `W_2` to a common-random-number reference run with the exact flow.
    pub w2_to_reference: Option<f64>,
    pub energy_distance: Option<f64>,
    pub budget: f64,
    /// Largest deviation from `delta z + (1 - delta) y` for a one-point
    /// target without correctors.
    pub closed_form_error: Option<f64>,
    pub wall_ms: u64,
}

pub struct SampleRun {
    pub cloud: Cloud,
    pub summary: SampleSummary,
}

fn kind_name(model: &Model<'_>) -> &'static str {
    match model.kind() {
        rflab::ModelKind::Exact => "exact",
        rflab::ModelKind::Perturbed => "perturbed",
        rflab::ModelKind::Clipped => "clipped",
    }
}

pub fn run_sample(
    model: &Model<'_>,
    plan: &Plan,
    n: usize,
    seed: u64,
    predictor_only: bool,
    label: &str,
) -> Result<SampleRun> {
    let start = std::time::Instant::now();
    let key = StreamKey::new(seed);
    let options = SamplerOptions {
        predictor_only,
        predictor: Predictor::Euler,
    };
    let cloud = sample(model, plan, n, key, options)?;
    let target = model.target();
    let (mut w2_to_target, mut w2_to_reference, mut ed) = (None, None, None);
    if n > 0 {
        w2_to_target = Some(w2_cloud_target(&cloud, target)?);
        let reference = sample(
            &Model::exact(target),
            plan,
            n,
            key,
            SamplerOptions {
                predictor_only,
                predictor: Predictor::Adaptive { tol: REFERENCE_TOL },
            },
        )?;
        if plan.d == 1 || n <= SUMMARY_W2_LIMIT {
            w2_to_reference = Some(w2_cloud_cloud(&cloud, &reference)?);
        }
        if n >= 2 {
            ed = Some(energy_distance(&cloud, &reference)?);
        }
    }
    let closed_form_error = (predictor_only && target.len() == 1).then(|| {
        let y = target.point(0);
        let z = Cloud::standard_normal(n, plan.d, key.child(tags::INITIAL));
        cloud
            .particles()
            .zip(z.particles())
            .flat_map(|(x, z)| {
                x.iter()
                    .zip(z)
                    .zip(y)
                    .map(|((x, z), y)| (x - (plan.delta * z + (1.0 - plan.delta) * y)).abs())
            })
            .fold(0.0, f64::max)
    });
    let summary = SampleSummary {
        target: label.to_string(),
        seed,
        n_particles: n,
        model: kind_name(model).into(),
        eps_sc: model.eps_sc(),
        predictor_only,
        plan: PlanSnapshot::from(plan),
        w2_to_target,
        w2_to_reference,
        energy_distance: ed,
        budget: endpoint_error_budget(plan, model.eps_sc()),
        closed_form_error,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(SampleRun { cloud, summary })
}
