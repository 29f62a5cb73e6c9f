//! Score normalization and fusion rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on fitted double-sigmoid edge widths.
pub const MIN_EDGE_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleSigmoidParams {
    /// Reference operating score, mapped to 0.5.
    pub t: f64,
    /// Width of the region left of `t`.
    pub r1: f64,
    /// Width of the region right of `t`.
    pub r2: f64,
}

impl DoubleSigmoidParams {
    pub fn new(t: f64, r1: f64, r2: f64) -> Result<Self> {
        let p = DoubleSigmoidParams { t, r1, r2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::param("t", "must be finite"));
        }
        for (name, r) in [("r1", self.r1), ("r2", self.r2)] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::param(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

fn finite(s: f64) -> Result<f64> {
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::param("score", format!("must be finite, got {s}")))
    }
}

/// Two-sided logistic map: `1 / (1 + exp(-2 (s - t) / r))` with `r = r1`
/// below `t` and `r = r2` above.
pub fn double_sigmoid(s: f64, p: &DoubleSigmoidParams) -> Result<f64> {
    let s = finite(s)?;
    let r = if s < p.t { p.r1 } else { p.r2 };
    Ok(1.0 / (1.0 + (-2.0 * (s - p.t) / r).exp()))
}

pub fn minmax_norm(s: f64, observed_min: f64, observed_max: f64) -> Result<f64> {
    let s = finite(s)?;
    if observed_max.partial_cmp(&observed_min) != Some(std::cmp::Ordering::Greater)
        || !observed_min.is_finite()
        || !observed_max.is_finite()
    {
        return Err(Error::param("observed_max", "must exceed observed_min"));
    }
    Ok(((s - observed_min) / (observed_max - observed_min)).clamp(0.0, 1.0))
}

pub fn zscore_norm(s: f64, mean: f64, std: f64) -> Result<f64> {
    let s = finite(s)?;
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::param("std", "must be finite and > 0"));
    }
    Ok((s - mean) / std)
}

/// Tanh estimator: `0.5 (tanh(0.01 (s - mean) / std) + 1)`.
pub fn tanh_norm(s: f64, mean: f64, std: f64) -> Result<f64> {
    let s = finite(s)?;
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::param("std", "must be finite and > 0"));
    }
    Ok(0.5 * ((0.01 * (s - mean) / std).tanh() + 1.0))
}

/// A configured normalization. Serialized as `{"kind": ..., "params": ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Normalizer {
    #[default]
    Identity,
    DoubleSigmoid(DoubleSigmoidParams),
    MinMax {
        min: f64,
        max: f64,
    },
    ZScore {
        mean: f64,
        std: f64,
    },
    Tanh {
        mean: f64,
        std: f64,
    },
}

impl Normalizer {
    pub fn apply(&self, s: f64) -> Result<f64> {
        match self {
            Normalizer::Identity => finite(s),
            Normalizer::DoubleSigmoid(p) => double_sigmoid(s, p),
            Normalizer::MinMax { min, max } => minmax_norm(s, *min, *max),
            Normalizer::ZScore { mean, std } => zscore_norm(s, *mean, *std),
            Normalizer::Tanh { mean, std } => tanh_norm(s, *mean, *std),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Normalizer::Identity => Ok(()),
            Normalizer::DoubleSigmoid(p) => p.validate(),
            Normalizer::MinMax { min, max } => minmax_norm(*min, *min, *max).map(|_| ()),
            Normalizer::ZScore { mean, std } | Normalizer::Tanh { mean, std } => {
                zscore_norm(*mean, *mean, *std).map(|_| ())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    #[default]
    Mean,
    Max,
}

pub fn fuse(a: f64, b: f64, rule: FusionRule) -> Result<f64> {
    for (name, v) in [("a", a), ("b", b)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(
                format!("fusion input {name}"),
                format!("must lie in [0, 1], got {v}"),
            ));
        }
    }
    Ok(match rule {
        FusionRule::Mean => 0.5 * (a + b),
        FusionRule::Max => a.max(b),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fits double-sigmoid parameters from hold-out scores: the center sits
/// midway between the class means and each edge spans from the center to
/// the corresponding class mean.
pub fn fit_double_sigmoid(genuine: &[f64], impostor: &[f64]) -> Result<DoubleSigmoidParams> {
    if genuine.is_empty() {
        return Err(Error::EmptyInput("genuine scores"));
    }
    if impostor.is_empty() {
        return Err(Error::EmptyInput("impostor scores"));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::param("score", "hold-out scores must be finite"));
    }
    let (mg, mi) = (mean(genuine), mean(impostor));
    let t = 0.5 * (mg + mi);
    DoubleSigmoidParams::new(
        t,
        (t - mi).max(MIN_EDGE_WIDTH),
        (mg - t).max(MIN_EDGE_WIDTH),
    )
}
