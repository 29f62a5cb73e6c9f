//! Global and local (minutiae) matchers.
//!
//! The local matcher scores a template pair by the sum of embedding cosine
//! similarities over a one-to-one set of minutia pairs that agree with a
//! single rigid alignment:
//!
//! 1. truncate both sides to the first `max_minutiae` minutiae;
//! 2. evaluate the cosine of every cross pair and keep those at or above
//!    `emb_sim_floor`;
//! 3. align on the highest-cosine candidate (rotation from the orientation
//!    difference, translation from the positions);
//! 4. keep candidates that land within the position and orientation
//!    tolerances under that alignment;
//! 5. pick the one-to-one subset maximizing the cosine sum.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::template::{angular_distance, dot, Minutia, Template};

/// Dot product of the global embeddings clamped to `[0, 1]`.
pub fn global_match(a: &Template, b: &Template) -> Result<f64> {
    if a.global.len() != b.global.len() {
        return Err(Error::DimensionMismatch {
            what: "global embedding",
            left: a.global.len(),
            right: b.global.len(),
        });
    }
    Ok(dot(&a.global, &b.global).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalMatchConfig {
    pub emb_sim_floor: f64,
    pub geo_tolerance_px: f64,
    pub ori_tolerance_rad: f64,
    /// `None` uses every minutia.
    #[serde(rename = "max_minutiae")]
    pub max_minutiae: Option<usize>,
    /// Number of top candidate pairs tried as alignment seeds; the best
    /// scoring alignment wins.
    pub seed_pairs: usize,
    /// Average the `a→b` and `b→a` scores.
    pub symmetric: bool,
}

impl Default for LocalMatchConfig {
    fn default() -> Self {
        LocalMatchConfig {
            emb_sim_floor: 0.3,
            geo_tolerance_px: 20.0,
            ori_tolerance_rad: 0.35,
            max_minutiae: None,
            seed_pairs: 1,
            symmetric: false,
        }
    }
}

impl LocalMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.emb_sim_floor) {
            return Err(Error::param("emb_sim_floor", "must lie in [-1, 1]"));
        }
        if !(self.geo_tolerance_px.is_finite() && self.geo_tolerance_px >= 0.0) {
            return Err(Error::param("geo_tolerance_px", "must be finite and >= 0"));
        }
        if !(self.ori_tolerance_rad.is_finite() && self.ori_tolerance_rad >= 0.0) {
            return Err(Error::param("ori_tolerance_rad", "must be finite and >= 0"));
        }
        if self.max_minutiae == Some(0) {
            return Err(Error::param("max_minutiae", "must be positive"));
        }
        if self.seed_pairs == 0 {
            return Err(Error::param("seed_pairs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn with_max_minutiae(mut self, k: Option<usize>) -> Self {
        self.max_minutiae = k;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalMatchResult {
    pub score: f64,
    pub matched_pairs: Vec<MatchedPair>,
    /// Candidate pair evaluations performed.
    pub work_units: u64,
}

pub fn match_work(result: &LocalMatchResult) -> u64 {
    result.work_units
}

pub fn local_match(a: &Template, b: &Template, cfg: &LocalMatchConfig) -> Result<LocalMatchResult> {
    if a.local_dim != b.local_dim {
        return Err(Error::DimensionMismatch {
            what: "local embedding",
            left: a.local_dim,
            right: b.local_dim,
        });
    }
    cfg.validate()?;
    let take = |t: &'_ Template| -> usize {
        cfg.max_minutiae
            .map_or(t.minutiae.len(), |k| k.min(t.minutiae.len()))
    };
    let ma = &a.minutiae[..take(a)];
    let mb = &b.minutiae[..take(b)];

    let forward = directed_match(ma, mb, cfg)?;
    if !cfg.symmetric {
        return Ok(forward);
    }
    let backward = directed_match(mb, ma, cfg)?;
    Ok(LocalMatchResult {
        score: 0.5 * (forward.score + backward.score),
        work_units: forward.work_units + backward.work_units,
        matched_pairs: forward.matched_pairs,
    })
}

struct Candidate {
    a: usize,
    b: usize,
    sim: f64,
}

fn cosine(x: &[f32], y: &[f32], nx: f64, ny: f64) -> f64 {
    let denom = (nx * ny).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot(x, y) / denom).clamp(-1.0, 1.0)
}

fn directed_match(
    ma: &[Minutia],
    mb: &[Minutia],
    cfg: &LocalMatchConfig,
) -> Result<LocalMatchResult> {
    let (na, nb) = (ma.len(), mb.len());
    if na == 0 || nb == 0 {
        return Ok(LocalMatchResult::default());
    }
    let norms_a: Vec<f64> = ma.iter().map(|m| dot(&m.embedding, &m.embedding)).collect();
    let norms_b: Vec<f64> = mb.iter().map(|m| dot(&m.embedding, &m.embedding)).collect();

    let mut candidates = Vec::new();
    for (i, p) in ma.iter().enumerate() {
        for (j, q) in mb.iter().enumerate() {
            let sim = cosine(&p.embedding, &q.embedding, norms_a[i], norms_b[j]);
            // non-positive similarities could only lower the score
            if sim >= cfg.emb_sim_floor && sim > 0.0 {
                candidates.push(Candidate { a: i, b: j, sim });
            }
        }
    }
    let work_units = (na * nb) as u64;
    if candidates.is_empty() {
        return Ok(LocalMatchResult {
            work_units,
            ..Default::default()
        });
    }
    // stable: ties keep (a, b) row-major order
    candidates.sort_by(|x, y| y.sim.total_cmp(&x.sim));

    let mut best: Option<(f64, Vec<MatchedPair>)> = None;
    for seed in candidates.iter().take(cfg.seed_pairs) {
        let (score, pairs) = score_alignment(ma, mb, &candidates, seed, cfg)?;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, pairs));
        }
    }
    let (score, matched_pairs) = best.expect("at least one seed");
    Ok(LocalMatchResult {
        score,
        matched_pairs,
        work_units,
    })
}

/// Rigid transform taking `a`-side coordinates onto the `b` side.
#[derive(Debug, Clone, Copy)]
struct Alignment {
    rotation: f64,
    cos: f64,
    sin: f64,
    origin_a: (f64, f64),
    origin_b: (f64, f64),
}

impl Alignment {
    fn from_pair(p: &Minutia, q: &Minutia) -> Self {
        let rotation = f64::from(q.theta) - f64::from(p.theta);
        Alignment {
            rotation,
            cos: rotation.cos(),
            sin: rotation.sin(),
            origin_a: (f64::from(p.x), f64::from(p.y)),
            origin_b: (f64::from(q.x), f64::from(q.y)),
        }
    }

    fn apply(&self, m: &Minutia) -> (f64, f64, f64) {
        let dx = f64::from(m.x) - self.origin_a.0;
        let dy = f64::from(m.y) - self.origin_a.1;
        (
            self.cos * dx - self.sin * dy + self.origin_b.0,
            self.sin * dx + self.cos * dy + self.origin_b.1,
            f64::from(m.theta) + self.rotation,
        )
    }
}

fn score_alignment(
    ma: &[Minutia],
    mb: &[Minutia],
    candidates: &[Candidate],
    seed: &Candidate,
    cfg: &LocalMatchConfig,
) -> Result<(f64, Vec<MatchedPair>)> {
    let align = Alignment::from_pair(&ma[seed.a], &mb[seed.b]);
    let survivors: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| {
            let (x, y, theta) = align.apply(&ma[c.a]);
            let q = &mb[c.b];
            let dist = (x - f64::from(q.x)).hypot(y - f64::from(q.y));
            dist <= cfg.geo_tolerance_px
                && angular_distance(theta, f64::from(q.theta)) <= cfg.ori_tolerance_rad
        })
        .collect();
    if survivors.is_empty() {
        return Ok((0.0, Vec::new()));
    }

    // compress to the rows/cols that take part
    let mut rows: Vec<usize> = survivors.iter().map(|c| c.a).collect();
    let mut cols: Vec<usize> = survivors.iter().map(|c| c.b).collect();
    rows.sort_unstable();
    rows.dedup();
    cols.sort_unstable();
    cols.dedup();
    let row_of = |a: usize| rows.binary_search(&a).expect("row present");
    let col_of = |b: usize| cols.binary_search(&b).expect("col present");

    // Non-survivor cells cost 1 (a zero-similarity pairing) so every
    // maximal pairing exists; minimizing sum(1 - sim) maximizes sum(sim).
    let mut data = vec![1.0; rows.len() * cols.len()];
    let mut sim_at = vec![None; rows.len() * cols.len()];
    for c in &survivors {
        let idx = row_of(c.a) * cols.len() + col_of(c.b);
        data[idx] = 1.0 - c.sim;
        sim_at[idx] = Some(c.sim);
    }
    let assignment = solve_assignment(&CostMatrix::new(rows.len(), cols.len(), data)?)?;

    let pairs: Vec<MatchedPair> = assignment
        .pairs
        .iter()
        .filter_map(|&(r, c)| {
            sim_at[r * cols.len() + c].map(|similarity| MatchedPair {
                a: rows[r],
                b: cols[c],
                similarity,
            })
        })
        .collect();
    let score = pairs.iter().map(|p| p.similarity).sum();
    Ok((score, pairs))
}
