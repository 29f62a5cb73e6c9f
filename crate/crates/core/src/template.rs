//! Fingerprint templates: a unit global embedding plus a set of minutiae,
//! each carrying a position, an orientation and a unit local embedding.
//!
//! Templates are plain immutable values once built. Readers route every
//! decoded template through [`Template::ingest`], which canonicalizes
//! orientations into `[0, 2π)` and repairs small float drift in embedding
//! norms.

use std::f32::consts::TAU as TAU_F32;
use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GLOBAL_DIM: usize = 192;
pub const DEFAULT_LOCAL_DIM: usize = 64;
pub const DEFAULT_MAX_MINUTIAE: usize = 50;

/// Allowed deviation of an embedding norm from 1 for a template to be valid.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Largest norm deviation that ingest silently repairs by rescaling.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

/// Maps an angle into `[0, 2π)`.
pub fn canonical_angle(theta: f32) -> f32 {
    let r = theta.rem_euclid(TAU_F32);
    // rem_euclid can round up to the modulus for tiny negative inputs
    if r >= TAU_F32 {
        0.0
    } else {
        r
    }
}

/// Circular distance between two angles, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(TAU);
    let d = d.min(TAU - d);
    d.clamp(0.0, PI)
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f32,
    pub y: f32,
    /// Orientation in radians.
    pub theta: f32,
    #[serde(rename = "emb")]
    pub embedding: Vec<f32>,
}

impl Minutia {
    pub fn new(x: f32, y: f32, theta: f32, embedding: Vec<f32>) -> Self {
        Minutia {
            x,
            y,
            theta,
            embedding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub height: u32,
    pub width: u32,
}

impl ImageSize {
    pub const fn new(height: u32, width: u32) -> Self {
        ImageSize { height, width }
    }

    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width as f32 && y <= self.height as f32
    }
}

impl From<[u32; 2]> for ImageSize {
    fn from([height, width]: [u32; 2]) -> Self {
        ImageSize { height, width }
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.height, s.width]
    }
}

/// One fingerprint impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub global: Vec<f32>,
    pub minutiae: Vec<Minutia>,
    pub image_size: ImageSize,
    pub source_id: String,
    /// Declared local embedding width; carried explicitly so templates
    /// without minutiae still know it.
    #[serde(rename = "d_m")]
    pub local_dim: usize,
}

/// A broken template invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl Template {
    pub fn new(
        global: Vec<f32>,
        minutiae: Vec<Minutia>,
        image_size: ImageSize,
        source_id: impl Into<String>,
        local_dim: usize,
    ) -> Self {
        Template {
            global,
            minutiae,
            image_size,
            source_id: source_id.into(),
            local_dim,
        }
    }

    pub fn global_dim(&self) -> usize {
        self.global.len()
    }

    /// Lists every broken invariant. An empty list means the template is
    /// valid.
    pub fn validate(&self) -> Vec<Violation> {
        self.validate_with_limit(None)
    }

    /// As [`validate`](Self::validate), additionally bounding the minutiae
    /// count.
    pub fn validate_with_limit(&self, max_minutiae: Option<usize>) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: String, rule: &'static str| out.push(Violation { field, rule });

        if self.global.is_empty() {
            push("global_embedding".into(), "must not be empty");
        } else if self.global.iter().any(|v| !v.is_finite()) {
            push("global_embedding".into(), "entries must be finite");
        } else if (l2_norm(&self.global) - 1.0).abs() > UNIT_NORM_TOLERANCE {
            push("global_embedding".into(), "norm must be 1 within 1e-6");
        }

        if let Some(limit) = max_minutiae {
            if self.minutiae.len() > limit {
                push("minutiae".into(), "more minutiae than the configured limit");
            }
        }

        for (i, m) in self.minutiae.iter().enumerate() {
            if !(m.x.is_finite() && m.y.is_finite()) {
                push(
                    format!("minutiae[{i}].position"),
                    "coordinates must be finite",
                );
            } else if m.x < 0.0 || m.y < 0.0 {
                push(
                    format!("minutiae[{i}].position"),
                    "coordinates must be >= 0",
                );
            } else if !self.image_size.contains(m.x, m.y) {
                push(format!("minutiae[{i}].position"), "outside image bounds");
            }
            if !(m.theta.is_finite() && (0.0..TAU_F32).contains(&m.theta)) {
                push(format!("minutiae[{i}].theta"), "must lie in [0, 2pi)");
            }
            if m.embedding.len() != self.local_dim {
                push(format!("minutiae[{i}].embedding"), "length must equal d_m");
            } else if m.embedding.iter().any(|v| !v.is_finite()) {
                push(format!("minutiae[{i}].embedding"), "entries must be finite");
            } else if (l2_norm(&m.embedding) - 1.0).abs() > UNIT_NORM_TOLERANCE {
                push(
                    format!("minutiae[{i}].embedding"),
                    "norm must be 1 within 1e-6",
                );
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Canonicalizes orientations, renormalizes embeddings whose norm has
    /// drifted by at most [`RENORMALIZE_TOLERANCE`], and rejects the
    /// template if any invariant is still broken afterwards.
    pub fn ingest(mut self) -> Result<Template> {
        let mut rejected = Vec::new();
        if !renormalize(&mut self.global) {
            rejected.push(Violation {
                field: "global_embedding".into(),
                rule: "norm deviates from 1 by more than 1e-3",
            });
        }
        for (i, m) in self.minutiae.iter_mut().enumerate() {
            if m.theta.is_finite() {
                m.theta = canonical_angle(m.theta);
            }
            if m.embedding.len() == self.local_dim && !renormalize(&mut m.embedding) {
                rejected.push(Violation {
                    field: format!("minutiae[{i}].embedding"),
                    rule: "norm deviates from 1 by more than 1e-3",
                });
            }
        }
        if !rejected.is_empty() {
            return Err(Error::InvalidTemplate(rejected));
        }
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidTemplate(violations))
        }
    }
}

/// Rescales `v` to unit norm when it is off by no more than the repair
/// tolerance. Returns false when the vector is beyond repair. Vectors that
/// are already unit within [`UNIT_NORM_TOLERANCE`] are left untouched.
fn renormalize(v: &mut [f32]) -> bool {
    if v.iter().any(|x| !x.is_finite()) {
        // left for validate() to report
        return true;
    }
    let norm = l2_norm(v);
    let dev = (norm - 1.0).abs();
    if dev <= UNIT_NORM_TOLERANCE || v.is_empty() {
        return true;
    }
    if dev > RENORMALIZE_TOLERANCE {
        return false;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    true
}

/// Normalizes a vector to unit length in place (f64 arithmetic). Zero
/// vectors are left unchanged.
pub fn normalize_in_place(v: &mut [f32]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}
