//! Experiment configuration (JSON).
//!
//! ```json
//! {
//!   "env": {"grid_size": 8},
//!   "methods": [{"objective": "ma-ub-l1", "model_lr": 1e4}, {"objective": "mle"}],
//!   "loop": {"lr_policy": 0.05},
//!   "seeds": [0, 1, 2, 3, 4],
//!   "master_seed": 0,
//!   "total_env_steps": 2560,
//!   "output_dir": "out/gridworld8"
//! }
//! ```
//!
//! Everything under `loop` is optional and defaults to [`LoopConfig::default`].
//! The number of outer iterations is `ceil(total_env_steps / real_samples)`.

use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};
use vaml_lab_core::agent::CriticUpdate;
use vaml_lab_core::env::GridworldSpec;
use vaml_lab_core::mbrl::LoopConfig;
use vaml_lab_core::model::{Objective, ObjectiveKind};

use crate::error::{io_err, LabError, Result};

pub const OUTPUT_ENV_VAR: &str = "VAML_LAB_OUT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSettings,
    #[serde(deserialize_with = "non_empty")]
    pub methods: Vec<MethodSpec>,
    #[serde(rename = "loop", default)]
    pub loop_settings: LoopSettings,
    #[serde(deserialize_with = "non_empty")]
    pub seeds: Vec<u32>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(deserialize_with = "positive")]
    pub total_env_steps: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Only read by `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSettings>,
}

/// `points` values spaced evenly in log10 between `min` and `max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    #[serde(default = "nine")]
    pub points: usize,
}

fn nine() -> usize {
    9
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.log10(), self.max.log10());
        (0..self.points)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (self.points - 1) as f64))
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min > 0.0 && self.max >= self.min && self.max.is_finite()) || self.points == 0 {
            return Err(LabError::Config(format!(
                "sweep.{name} needs 0 < min <= max < inf and at least one point"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    /// Multiplier on each method's main objective.
    pub alpha: LogGrid,
    /// Applied only to methods with a positive `vps_lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vps_lambda: Option<LogGrid>,
    #[serde(default = "three_seeds", deserialize_with = "non_empty")]
    pub seeds: Vec<u32>,
}

fn three_seeds() -> Vec<u32> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn non_empty<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    let v = Vec::<T>::deserialize(d)?;
    if v.is_empty() {
        return Err(de::Error::invalid_length(0, &"a non-empty list"));
    }
    Ok(v)
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    let n = usize::deserialize(d)?;
    if n == 0 {
        return Err(de::Error::invalid_value(de::Unexpected::Unsigned(0), &"a positive step budget"));
    }
    Ok(n)
}

/// Gridworld settings; anything omitted takes the size-dependent default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    pub grid_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_bonus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_reward_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
}

impl EnvSettings {
    pub fn spec(&self) -> GridworldSpec {
        let d = GridworldSpec::with_size(self.grid_size);
        GridworldSpec {
            grid_size: self.grid_size,
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            goal_bonus: self.goal_bonus.unwrap_or(d.goal_bonus),
            distance_reward_scale: self.distance_reward_scale.unwrap_or(d.distance_reward_scale),
            discount: self.discount.unwrap_or(d.discount),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    #[serde(with = "objective_name")]
    pub objective: Objective,
    /// Defaults to the objective label; must be unique within a config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub vps_lambda: f64,
    /// Overrides `loop.model_lr` for this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_lr: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl MethodSpec {
    pub fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::new(self.objective)
            .with_alpha(self.alpha)
            .with_vps(self.vps_lambda)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind().label())
    }
}

mod objective_name {
    use super::Objective;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &Objective, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(o.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Objective, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticSetting {
    Td0,
    MonteCarlo,
}

impl From<CriticSetting> for CriticUpdate {
    fn from(c: CriticSetting) -> Self {
        match c {
            CriticSetting::Td0 => CriticUpdate::Td0,
            CriticSetting::MonteCarlo => CriticUpdate::MonteCarlo,
        }
    }
}

/// Serializable mirror of [`LoopConfig`] without the per-method fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSettings {
    pub model_steps: usize,
    pub policy_steps: usize,
    pub real_samples: usize,
    pub virtual_samples: usize,
    pub model_lr: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub entropy_bonus: f64,
    pub critic: CriticSetting,
    pub value_refresh: bool,
    pub rollouts_from_buffer: bool,
    pub rollout_horizon: usize,
    pub persistent_virtual: bool,
    pub virtual_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub track_staleness: bool,
    pub self_loop_prior: f64,
    pub backup_targets: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        let c = LoopConfig::default();
        LoopSettings {
            model_steps: c.model_steps,
            policy_steps: c.policy_steps,
            real_samples: c.real_samples,
            virtual_samples: c.virtual_samples,
            model_lr: c.model_lr,
            lr_policy: c.lr_policy,
            lr_value: c.lr_value,
            entropy_bonus: c.entropy_bonus,
            critic: match c.critic {
                CriticUpdate::Td0 => CriticSetting::Td0,
                CriticUpdate::MonteCarlo => CriticSetting::MonteCarlo,
            },
            value_refresh: c.value_refresh,
            rollouts_from_buffer: c.rollouts_from_buffer,
            rollout_horizon: c.rollout_horizon,
            persistent_virtual: c.persistent_virtual,
            virtual_capacity: c.virtual_capacity,
            eval_interval: c.eval_interval,
            eval_episodes: c.eval_episodes,
            track_staleness: c.track_staleness,
            self_loop_prior: c.self_loop_prior,
            backup_targets: c.backup_targets,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|source| LabError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text, path)
    }

    /// Checks that need the whole document: unique method names and a valid
    /// loop for every method.
    pub fn validate(&self) -> Result<()> {
        self.env.spec().validate().map_err(|source| LabError::Invalid {
            context: "env".into(),
            source,
        })?;
        if let Some(sweep) = &self.sweep {
            sweep.alpha.validate("alpha")?;
            if let Some(grid) = &sweep.vps_lambda {
                grid.validate("vps_lambda")?;
            }
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(LabError::Config(format!(
                "method name {:?} appears twice; set \"name\" to tell them apart",
                w[0]
            )));
        }
        for (i, method) in self.methods.iter().enumerate() {
            self.loop_config(i).validate().map_err(|source| LabError::Invalid {
                context: format!("method {}", method.label()),
                source,
            })?;
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.total_env_steps.div_ceil(self.loop_settings.real_samples.max(1))
    }

    /// Full loop configuration for `methods[method_index]`.
    pub fn loop_config(&self, method_index: usize) -> LoopConfig {
        let l = &self.loop_settings;
        let method = &self.methods[method_index];
        LoopConfig {
            iterations: self.iterations(),
            model_steps: l.model_steps,
            policy_steps: l.policy_steps,
            real_samples: l.real_samples,
            virtual_samples: l.virtual_samples,
            objective: method.kind(),
            model_lr: method.model_lr.unwrap_or(l.model_lr),
            lr_policy: l.lr_policy,
            lr_value: l.lr_value,
            entropy_bonus: l.entropy_bonus,
            critic: l.critic.into(),
            value_refresh: l.value_refresh,
            rollouts_from_buffer: l.rollouts_from_buffer,
            rollout_horizon: l.rollout_horizon,
            persistent_virtual: l.persistent_virtual,
            virtual_capacity: l.virtual_capacity,
            eval_interval: l.eval_interval,
            eval_episodes: l.eval_episodes,
            track_staleness: l.track_staleness,
            self_loop_prior: l.self_loop_prior,
            backup_targets: l.backup_targets,
        }
    }

    /// `output_dir`, unless `VAML_LAB_OUT` is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV_VAR) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
