//! Declarative run configuration, read from TOML and overridable by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rflab::sampler::{lipschitz_sx, lipschitz_vx};
use rflab::{benchmarks, Model, PerturbMode, Plan, Target};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("target file {0} is empty")]
    EmptyTarget(PathBuf),
    #[error("invalid target: {0}")]
    Target(rflab::Error),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Bin,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindSetting {
    #[default]
    Exact,
    Perturbed,
    Clipped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbModeSetting {
    #[default]
    Constant,
    Sinusoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKindSetting,
    pub eps_sc: f64,
    pub mode: PerturbModeSetting,
    pub omega: f64,
    pub lip_budget: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            kind: ModelKindSetting::Exact,
            eps_sc: 0.0,
            mode: PerturbModeSetting::Constant,
            omega: std::f64::consts::TAU,
            lip_budget: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSettings {
    pub delta: f64,
    /// Requested predictor step; `None` means one step per stage.
    pub h_pred: Option<f64>,
    /// Requested corrector step; `None` means one step per corrector run.
    pub h_corr: Option<f64>,
    pub c_rho: f64,
    pub predictor_only: bool,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            delta: 0.1,
            h_pred: None,
            h_corr: None,
            c_rho: 1.0,
            predictor_only: false,
        }
    }
}

/// Grids for `sweep`. Empty lists fall back to per-axis defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub h_pred: Vec<f64>,
    pub h_corr: Vec<f64>,
    pub eps: Vec<f64>,
    pub k: Vec<usize>,
    pub a: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// A shipped benchmark name or a path to a target JSON file.
    pub target: String,
    pub seed: u64,
    pub particles: usize,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub model: ModelSettings,
    pub plan: PlanSettings,
    pub sweep: SweepSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            target: "two_point".into(),
            seed: 0,
            particles: 1024,
            out: PathBuf::from("rflab-out"),
            format: OutputFormat::Csv,
            model: ModelSettings::default(),
            plan: PlanSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        // Relative target paths are resolved against the config file.
        if benchmarks::by_name::<f64>(&cfg.target).is_none() {
            let p = Path::new(&cfg.target);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.target = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn load_target(&self) -> Result<Target, ConfigError> {
        if let Some(t) = benchmarks::by_name(&self.target) {
            return Ok(t);
        }
        let path = PathBuf::from(&self.target);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        if text.trim().is_empty() {
            return Err(ConfigError::EmptyTarget(path));
        }
        Target::from_json(&text).map_err(ConfigError::Target)
    }

    pub fn build_model<'a>(&self, target: &'a Target) -> Result<Model<'a>, ConfigError> {
        let m = &self.model;
        let model = match m.kind {
            ModelKindSetting::Exact => Ok(Model::exact(target)),
            ModelKindSetting::Perturbed => {
                let mode = match m.mode {
                    PerturbModeSetting::Constant => PerturbMode::ConstantShift,
                    PerturbModeSetting::Sinusoid => PerturbMode::SmoothSinusoid { omega: m.omega },
                };
                Model::perturbed(target, m.eps_sc, mode)
            }
            ModelKindSetting::Clipped => Model::clipped(target, m.lip_budget),
        };
        model.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Plan for `target` with optional overrides of delta and the steps.
    pub fn build_plan_with(
        &self,
        target: &Target,
        delta: Option<f64>,
        h_pred: Option<f64>,
        h_corr: Option<f64>,
    ) -> Result<Plan, ConfigError> {
        let p = &self.plan;
        let delta = delta.unwrap_or(p.delta);
        let r = target.diameter();
        let d = target.dim();
        // Unset steps default to the stage budgets themselves.
        let hp = h_pred.or(p.h_pred).unwrap_or(1.0 / lipschitz_vx(delta, r));
        let hc = h_corr.or(p.h_corr).unwrap_or(1.0 / lipschitz_sx(delta, r).sqrt());
        Plan::with_friction_scale(delta, r, d, hp, hc, p.c_rho).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_plan(&self, target: &Target) -> Result<Plan, ConfigError> {
        self.build_plan_with(target, None, None, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_tables() {
        let cfg = Config::from_toml("seed = 4\n[plan]\ndelta = 0.5\n", Path::new("x.toml")).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.plan.delta, 0.5);
        assert_eq!(cfg.model, ModelSettings::default());
        assert_eq!(cfg.target, "two_point");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[plan]\ndelt = 0.5\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn default_steps_are_the_budgets() {
        let cfg = Config::default();
        let tgt = cfg.load_target().unwrap();
        let plan = cfg.build_plan(&tgt).unwrap();
        assert_eq!(plan.h_pred, plan.t_pred);
        assert_eq!(plan.h_corr, plan.t_corr);
    }

    #[test]
    fn empty_target_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        std::fs::write(&path, "").unwrap();
        let cfg = Config {
            target: path.to_string_lossy().into_owned(),
            ..Config::default()
        };
        assert!(matches!(cfg.load_target(), Err(ConfigError::EmptyTarget(_))));
    }
}
