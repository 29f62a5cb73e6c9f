//! Threshold-gated inference over a template pair.
//!
//! The global score is always computed. When it clears `theta_t` the pair
//! is a confident genuine and the local channel is replaced by a constant
//! (1.0 by default); below `theta_f` it is a confident impostor (0.0).
//! Only scores inside `[theta_f, theta_t]` pay for local matching. The
//! normalized global and local channels are then fused.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{global_match, local_match, LocalMatchConfig};
use crate::score::{fuse, FusionRule, Normalizer};
use crate::template::Template;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub theta_t: f64,
    pub theta_f: f64,
}

impl ThresholdConfig {
    pub fn new(theta_t: f64, theta_f: f64) -> Result<Self> {
        let t = ThresholdConfig { theta_t, theta_f };
        t.validate()?;
        Ok(t)
    }

    /// Thresholds outside `[0, 1]`, so local matching always runs.
    pub fn disabled() -> Self {
        ThresholdConfig {
            theta_t: 2.0,
            theta_f: -1.0,
        }
    }

    /// Symmetric band of width `gap` around `center`.
    pub fn centered(center: f64, gap: f64) -> Result<Self> {
        ThresholdConfig::new(center + 0.5 * gap, center - 0.5 * gap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_t.is_nan() || self.theta_f.is_nan() {
            return Err(Error::param("theta", "thresholds must not be NaN"));
        }
        if self.theta_f > self.theta_t {
            return Err(Error::param("theta_f", "must not exceed theta_t"));
        }
        Ok(())
    }

    pub fn gap(&self) -> f64 {
        self.theta_t - self.theta_f
    }

    pub fn gate(&self, s_g: f64) -> Gate {
        if s_g > self.theta_t {
            Gate::ConfidentGenuine
        } else if s_g < self.theta_f {
            Gate::ConfidentImpostor
        } else {
            Gate::LocalEvaluated
        }
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            theta_t: 0.75,
            theta_f: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    ConfidentGenuine,
    ConfidentImpostor,
    LocalEvaluated,
}

/// Everything [`infer_pair`] needs. Mirrors the pipeline config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub theta_t: f64,
    pub theta_f: f64,
    #[serde(default)]
    pub fusion: FusionRule,
    /// Normalization of the raw local score. Defaults to min-max over
    /// [`DEFAULT_LOCAL_SCALE`].
    #[serde(default = "default_local_norm")]
    pub norm: Normalizer,
    /// Normalization of the raw global score.
    #[serde(default)]
    pub norm_global: Normalizer,
    #[serde(default)]
    pub local: LocalMatchConfig,
    /// Local channel value for confident genuine pairs.
    #[serde(default = "one")]
    pub confident_genuine_local: f64,
    /// Local channel value for confident impostor pairs.
    #[serde(default)]
    pub confident_impostor_local: f64,
}

/// Raw local score that saturates the default local normalizer.
pub const DEFAULT_LOCAL_SCALE: f64 = 10.0;

fn default_local_norm() -> Normalizer {
    Normalizer::MinMax {
        min: 0.0,
        max: DEFAULT_LOCAL_SCALE,
    }
}

fn one() -> f64 {
    1.0
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let thr = ThresholdConfig::default();
        PipelineConfig {
            theta_t: thr.theta_t,
            theta_f: thr.theta_f,
            fusion: FusionRule::Mean,
            norm: default_local_norm(),
            norm_global: Normalizer::Identity,
            local: LocalMatchConfig::default(),
            confident_genuine_local: 1.0,
            confident_impostor_local: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn thresholds(&self) -> ThresholdConfig {
        ThresholdConfig {
            theta_t: self.theta_t,
            theta_f: self.theta_f,
        }
    }

    pub fn with_thresholds(mut self, thr: ThresholdConfig) -> Self {
        self.theta_t = thr.theta_t;
        self.theta_f = thr.theta_f;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds().validate()?;
        self.norm.validate()?;
        self.norm_global.validate()?;
        self.local.validate()?;
        for (name, v) in [
            ("confident_genuine_local", self.confident_genuine_local),
            ("confident_impostor_local", self.confident_impostor_local),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub s_g_raw: f64,
    /// Raw local score; absent when the gate skipped local matching.
    pub s_l_raw: Option<f64>,
    pub s_g_norm: f64,
    pub s_l_effective: f64,
    pub s_final: f64,
    pub gate: Gate,
    pub work_units: u64,
}

pub fn infer_pair(a: &Template, b: &Template, cfg: &PipelineConfig) -> Result<MatchResult> {
    let s_g_raw = global_match(a, b)?;
    let gate = cfg.thresholds().gate(s_g_raw);
    let (s_l_raw, s_l_effective, work_units) = match gate {
        Gate::ConfidentGenuine => (None, cfg.confident_genuine_local, 0),
        Gate::ConfidentImpostor => (None, cfg.confident_impostor_local, 0),
        Gate::LocalEvaluated => {
            let local = local_match(a, b, &cfg.local)?;
            (
                Some(local.score),
                cfg.norm.apply(local.score)?,
                local.work_units,
            )
        }
    };
    let s_g_norm = cfg.norm_global.apply(s_g_raw)?;
    let s_final = fuse(s_g_norm, s_l_effective, cfg.fusion)?;
    Ok(MatchResult {
        s_g_raw,
        s_l_raw,
        s_g_norm,
        s_l_effective,
        s_final,
        gate,
        work_units,
    })
}
