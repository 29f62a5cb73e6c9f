//! Seeded synthetic corpus generator.
//!
//! An identity is a global direction plus a canonical minutiae set. An
//! impression applies a rigid transform, per-field jitter, random drops and
//! spurious additions, then keeps the `max_minutiae` most confident
//! minutiae. Two failure modes can be injected:
//!
//! * global collision: every member of a collision group takes the group
//!   anchor's global direction tilted by exactly `collision_angle_rad` in a
//!   random orthogonal direction, so their impostor pairs look genuine
//!   globally;
//! * distortion: selected impressions lose a fixed fraction of their
//!   minutiae and the survivors are heavily displaced and re-described, so
//!   their genuine pairs look impostor-like locally.
//!
//! Every random draw comes from a generator keyed by
//! `(seed, subject, impression, stream)`, so output does not depend on
//! generation order or worker count.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dims, Subject};
use crate::error::{Error, Result};
use crate::matcher::global_match;
use crate::parallel::{map_slice, Execution};
use crate::template::{
    canonical_angle, normalize_in_place, ImageSize, Minutia, Template, DEFAULT_GLOBAL_DIM,
    DEFAULT_LOCAL_DIM, DEFAULT_MAX_MINUTIAE,
};

/// Global similarity every collided impostor pair is guaranteed to exceed.
pub const COLLISION_SIMILARITY_FLOOR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub subjects: usize,
    pub impressions: usize,
    pub d_g: usize,
    pub d_m: usize,
    /// Canonical minutiae per identity.
    pub minutiae_per_identity: usize,
    /// Cap on minutiae kept per impression, most confident first.
    pub max_minutiae: usize,
    /// Square image side in pixels.
    pub image_side: u32,
    /// Rotation drawn uniformly from `[-r, r]`.
    pub rotation_range_rad: f64,
    /// Translation per axis drawn uniformly from `[-t, t]`.
    pub translation_range_px: f64,
    pub position_jitter_px: f64,
    pub orientation_jitter_rad: f64,
    /// Per-dimension Gaussian noise added before renormalizing.
    pub embedding_jitter: f64,
    /// Per-dimension Gaussian noise on the global direction.
    pub global_jitter: f64,
    /// Fraction of impressions whose global embedding is degraded.
    pub global_degraded_rate: f64,
    /// Per-dimension global noise on degraded impressions.
    pub global_degraded_jitter: f64,
    pub drop_prob: f64,
    /// Expected spurious minutiae per canonical minutia.
    pub spurious_rate: f64,
    /// Noise on the confidence ranking, in units of the canonical index
    /// range; 0 keeps canonical order.
    pub order_jitter: f64,
    /// Fraction of impostor subject pairs that are global-collided.
    pub global_collision_rate: f64,
    /// Angle between a collided subject's direction and its group anchor.
    pub collision_angle_rad: f64,
    /// Fraction of impressions hit by distortion.
    pub distortion_rate: f64,
    /// Fraction of canonical minutiae a distorted impression loses.
    pub distortion_dropout: f64,
    /// Extra position noise on distorted impressions.
    pub distortion_jitter_px: f64,
    /// Extra embedding noise on distorted impressions.
    pub distortion_embedding_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 20_240_601,
            subjects: 100,
            impressions: 8,
            d_g: DEFAULT_GLOBAL_DIM,
            d_m: DEFAULT_LOCAL_DIM,
            minutiae_per_identity: DEFAULT_MAX_MINUTIAE,
            max_minutiae: DEFAULT_MAX_MINUTIAE,
            image_side: 384,
            rotation_range_rad: 0.26,
            translation_range_px: 20.0,
            position_jitter_px: 2.0,
            orientation_jitter_rad: 0.02,
            embedding_jitter: 0.05,
            global_jitter: 0.003,
            global_degraded_rate: 0.1,
            global_degraded_jitter: 0.018,
            drop_prob: 0.05,
            spurious_rate: 0.1,
            order_jitter: 0.5,
            global_collision_rate: 0.0,
            collision_angle_rad: 0.1,
            distortion_rate: 0.0,
            distortion_dropout: 0.8,
            distortion_jitter_px: 15.0,
            distortion_embedding_jitter: 0.5,
        }
    }
}

impl SynthSpec {
    /// Every parameter error names the offending field.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("global_degraded_rate", self.global_degraded_rate),
            ("global_collision_rate", self.global_collision_rate),
            ("distortion_rate", self.distortion_rate),
            ("distortion_dropout", self.distortion_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        for (name, s) in [
            ("rotation_range_rad", self.rotation_range_rad),
            ("translation_range_px", self.translation_range_px),
            ("position_jitter_px", self.position_jitter_px),
            ("orientation_jitter_rad", self.orientation_jitter_rad),
            ("embedding_jitter", self.embedding_jitter),
            ("global_jitter", self.global_jitter),
            ("global_degraded_jitter", self.global_degraded_jitter),
            ("spurious_rate", self.spurious_rate),
            ("order_jitter", self.order_jitter),
            ("collision_angle_rad", self.collision_angle_rad),
            ("distortion_jitter_px", self.distortion_jitter_px),
            (
                "distortion_embedding_jitter",
                self.distortion_embedding_jitter,
            ),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {s}"),
                ));
            }
        }
        if self.d_g == 0 {
            return Err(Error::param("d_g", "must be positive"));
        }
        if self.d_m == 0 {
            return Err(Error::param("d_m", "must be positive"));
        }
        if self.image_side == 0 {
            return Err(Error::param("image_side", "must be positive"));
        }
        Ok(())
    }

    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.image_side, self.image_side)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            global: self.d_g,
            local: self.d_m,
        }
    }

    /// The same spec with every noise source and injection rate at zero.
    pub fn noiseless(&self) -> Self {
        SynthSpec {
            rotation_range_rad: 0.0,
            translation_range_px: 0.0,
            position_jitter_px: 0.0,
            orientation_jitter_rad: 0.0,
            embedding_jitter: 0.0,
            global_jitter: 0.0,
            global_degraded_rate: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            order_jitter: 0.0,
            global_collision_rate: 0.0,
            distortion_rate: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Identity = 1,
    Transform,
    Minutiae,
    Spurious,
    Global,
    Distortion,
    DistortionPick,
    Collision,
}

const CORPUS_LEVEL: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn keyed_rng(seed: u64, subject: u64, impression: u64, stream: Stream) -> ChaCha8Rng {
    let mut k = splitmix(seed);
    for part in [subject, impression, stream as u64] {
        k = splitmix(k ^ part);
    }
    ChaCha8Rng::seed_from_u64(k)
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v = gaussian_vec(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Adds `sigma`-scaled Gaussian noise and renormalizes. A zero sigma leaves
/// the vector bit-identical.
fn perturb(v: &[f32], sigma: f64, rng: &mut impl Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    let mut out: Vec<f32> = v
        .iter()
        .map(|&x| {
            let n: f64 = StandardNormal.sample(rng);
            (f64::from(x) + sigma * n) as f32
        })
        .collect();
    normalize_in_place(&mut out);
    out
}

fn gauss(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma)
            .expect("sigma validated")
            .sample(rng)
    }
}

fn symmetric_uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// Latent identity from which impressions are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub global: Vec<f32>,
    pub minutiae: Vec<Minutia>,
}

pub fn generate_identity(spec: &SynthSpec, subject: usize) -> Identity {
    let mut rng = keyed_rng(spec.seed, subject as u64, CORPUS_LEVEL, Stream::Identity);
    let global = unit_vec(&mut rng, spec.d_g);
    let side = f64::from(spec.image_side);
    let minutiae = (0..spec.minutiae_per_identity)
        .map(|_| {
            let x = rng.random_range(0.0..side) as f32;
            let y = rng.random_range(0.0..side) as f32;
            let theta = canonical_angle(rng.random_range(0.0..TAU) as f32);
            Minutia::new(x, y, theta, unit_vec(&mut rng, spec.d_m))
        })
        .collect();
    Identity { global, minutiae }
}

/// An impression plus, per minutia, the canonical index it came from
/// (`None` for spurious minutiae).
#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub template: Template,
    pub origins: Vec<Option<usize>>,
}

/// Distortion parameters applied on top of the regular impression noise.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Distortion {
    dropout: f64,
    jitter_px: f64,
    embedding_jitter: f64,
}

pub fn generate_impression(
    identity: &Identity,
    spec: &SynthSpec,
    subject: usize,
    impression: usize,
) -> Impression {
    impression_with(identity, spec, subject, impression, None)
}

fn source_id(subject: usize, impression: usize) -> String {
    format!("subject_{subject}/impression_{impression}")
}

fn impression_with(
    identity: &Identity,
    spec: &SynthSpec,
    subject: usize,
    impression: usize,
    distortion: Option<Distortion>,
) -> Impression {
    let key = |stream| keyed_rng(spec.seed, subject as u64, impression as u64, stream);
    let size = spec.image_size();
    let center = 0.5 * f64::from(spec.image_side);
    let l = identity.minutiae.len();

    let mut rng = key(Stream::Transform);
    let phi = symmetric_uniform(&mut rng, spec.rotation_range_rad);
    let tx = symmetric_uniform(&mut rng, spec.translation_range_px);
    let ty = symmetric_uniform(&mut rng, spec.translation_range_px);
    let (sin, cos) = phi.sin_cos();

    // distortion drops an exact count so the manifest's loss floor holds
    let mut forced_drop = vec![false; l];
    if let Some(d) = distortion {
        let mut rng = key(Stream::DistortionPick);
        let n_drop = ((d.dropout * l as f64).ceil() as usize).min(l);
        for i in rand::seq::index::sample(&mut rng, l, n_drop) {
            forced_drop[i] = true;
        }
    }
    let (extra_px, extra_emb) =
        distortion.map_or((0.0, 0.0), |d| (d.jitter_px, d.embedding_jitter));
    let pos_sigma = spec.position_jitter_px.hypot(extra_px);
    let emb_sigma = spec.embedding_jitter.hypot(extra_emb);
    let rank_noise = spec.order_jitter * l as f64;

    // (confidence key, origin, minutia); lower key = more confident
    let mut pool: Vec<(f64, Option<usize>, Minutia)> = Vec::with_capacity(l);
    let mut rng = key(Stream::Minutiae);
    for (i, m) in identity.minutiae.iter().enumerate() {
        // draws happen for every minutia so dropping one never shifts the
        // noise of the others
        let dropped = rng.random_bool(spec.drop_prob) || forced_drop[i];
        let (dx, dy) = (gauss(&mut rng, pos_sigma), gauss(&mut rng, pos_sigma));
        let dtheta = gauss(&mut rng, spec.orientation_jitter_rad);
        let rank = i as f64 + gauss(&mut rng, rank_noise);
        let embedding = perturb(&m.embedding, emb_sigma, &mut rng);
        if dropped {
            continue;
        }
        let (px, py) = (f64::from(m.x) - center, f64::from(m.y) - center);
        let x = (center + cos * px - sin * py + tx + dx) as f32;
        let y = (center + sin * px + cos * py + ty + dy) as f32;
        if !size.contains(x, y) {
            continue;
        }
        let theta = if phi == 0.0 && dtheta == 0.0 {
            m.theta
        } else {
            canonical_angle((f64::from(m.theta) + phi + dtheta) as f32)
        };
        pool.push((rank, Some(i), Minutia::new(x, y, theta, embedding)));
    }

    if spec.spurious_rate > 0.0 {
        let mut rng = key(Stream::Spurious);
        let expected = spec.spurious_rate * l as f64;
        let n = expected.floor() as usize + usize::from(rng.random_bool(expected.fract()));
        let side = f64::from(spec.image_side);
        for _ in 0..n {
            let x = rng.random_range(0.0..side) as f32;
            let y = rng.random_range(0.0..side) as f32;
            let theta = canonical_angle(rng.random_range(0.0..TAU) as f32);
            let rank = rng.random_range(0.0..l.max(1) as f64);
            pool.push((
                rank,
                None,
                Minutia::new(x, y, theta, unit_vec(&mut rng, spec.d_m)),
            ));
        }
    }

    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    pool.truncate(spec.max_minutiae);

    let mut rng = key(Stream::Global);
    let sigma = if spec.global_degraded_rate > 0.0 && rng.random_bool(spec.global_degraded_rate) {
        spec.global_degraded_jitter
    } else {
        spec.global_jitter
    };
    let global = perturb(&identity.global, sigma, &mut rng);
    let (origins, minutiae) = pool.into_iter().map(|(_, o, m)| (o, m)).unzip();
    Impression {
        template: Template::new(
            global,
            minutiae,
            size,
            source_id(subject, impression),
            spec.d_m,
        ),
        origins,
    }
}

/// Rotates unit vector `u` by exactly `angle` towards a uniformly random
/// orthogonal direction.
fn tilt(u: &[f32], angle: f64, rng: &mut impl Rng) -> Vec<f32> {
    if u.len() < 2 {
        return u.to_vec();
    }
    let u: Vec<f64> = u.iter().map(|&x| f64::from(x)).collect();
    let w = loop {
        let mut w = gaussian_vec(rng, u.len());
        let along: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        for (wi, ui) in w.iter_mut().zip(&u) {
            *wi -= along * ui;
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            break w.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let (sin, cos) = angle.sin_cos();
    let mut out: Vec<f32> = u
        .iter()
        .zip(&w)
        .map(|(a, b)| (cos * a + sin * b) as f32)
        .collect();
    normalize_in_place(&mut out);
    out
}

/// Ground truth for injected failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub seed: u64,
    /// Subject index pairs `(a, b)` with `a < b` whose global directions
    /// collide, sorted.
    pub collided_pairs: Vec<[usize; 2]>,
    /// Every collided pair's first impressions match above this.
    pub collision_similarity_floor: f64,
    /// Distortion-hit impressions, sorted.
    pub distorted: Vec<DistortedImpression>,
    /// Every distorted impression lost at least this fraction of its
    /// canonical minutiae.
    pub distortion_loss_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortedImpression {
    pub subject: usize,
    pub impression: usize,
    /// Fraction of canonical minutiae absent from the impression.
    pub lost_fraction: f64,
}

impl Manifest {
    pub fn is_empty(&self) -> bool {
        self.collided_pairs.is_empty() && self.distorted.is_empty()
    }

    pub fn is_collided(&self, a: usize, b: usize) -> bool {
        let key = [a.min(b), a.max(b)];
        self.collided_pairs.binary_search(&key).is_ok()
    }

    pub fn is_distorted(&self, subject: usize, impression: usize) -> bool {
        self.distorted
            .binary_search_by(|d| (d.subject, d.impression).cmp(&(subject, impression)))
            .is_ok()
    }
}

/// Sizes of collision groups whose internal pair counts sum to `pairs`,
/// largest first.
fn collision_groups(mut pairs: usize) -> Vec<usize> {
    let mut groups = Vec::new();
    while pairs > 0 {
        // largest k with k(k-1)/2 <= pairs
        let mut k = 2;
        while (k + 1) * k / 2 <= pairs {
            k += 1;
        }
        groups.push(k);
        pairs -= k * (k - 1) / 2;
    }
    groups
}

struct Plan {
    /// Per subject: the group anchor whose direction it copies, if
    /// collided. Anchors are their own anchor.
    anchor: Vec<Option<usize>>,
    collided_pairs: Vec<[usize; 2]>,
}

fn plan_collisions(spec: &SynthSpec) -> Result<Plan> {
    let s = spec.subjects;
    let total = s * s.saturating_sub(1) / 2;
    let target = (spec.global_collision_rate * total as f64).round() as usize;
    let groups = collision_groups(target);
    let needed: usize = groups.iter().sum();
    if needed > s {
        return Err(Error::param(
            "global_collision_rate",
            format!("{target} collided pairs need {needed} subjects, only {s} available"),
        ));
    }
    let mut rng = keyed_rng(spec.seed, CORPUS_LEVEL, CORPUS_LEVEL, Stream::Collision);
    let order = rand::seq::index::sample(&mut rng, s, needed).into_vec();

    let mut anchor = vec![None; s];
    let mut collided_pairs = Vec::with_capacity(target);
    let mut at = 0;
    for k in groups {
        let mut members = order[at..at + k].to_vec();
        at += k;
        members.sort_unstable();
        for &m in &members {
            anchor[m] = Some(members[0]);
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                collided_pairs.push([a, b]);
            }
        }
    }
    collided_pairs.sort_unstable();
    Ok(Plan {
        anchor,
        collided_pairs,
    })
}

fn is_distorted(spec: &SynthSpec, subject: usize, impression: usize) -> bool {
    spec.distortion_rate > 0.0
        && keyed_rng(
            spec.seed,
            subject as u64,
            impression as u64,
            Stream::Distortion,
        )
        .random_bool(spec.distortion_rate)
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<(Corpus, Manifest)> {
    generate_corpus_with(spec, Execution::parallel())
}

/// As [`generate_corpus`] with explicit control over parallelism. The
/// result is identical for every execution mode.
pub fn generate_corpus_with(spec: &SynthSpec, exec: Execution) -> Result<(Corpus, Manifest)> {
    spec.validate()?;
    let plan = plan_collisions(spec)?;
    let distortion = Distortion {
        dropout: spec.distortion_dropout,
        jitter_px: spec.distortion_jitter_px,
        embedding_jitter: spec.distortion_embedding_jitter,
    };
    let width = spec.subjects.saturating_sub(1).to_string().len().max(4);

    let indices: Vec<usize> = (0..spec.subjects).collect();
    let per_subject = map_slice(exec, &indices, |&s| {
        let mut identity = generate_identity(spec, s);
        if let Some(a) = plan.anchor[s] {
            let base = if a == s {
                identity.global.clone()
            } else {
                generate_identity(spec, a).global
            };
            let mut rng = keyed_rng(spec.seed, s as u64, CORPUS_LEVEL, Stream::Collision);
            identity.global = tilt(&base, spec.collision_angle_rad, &mut rng);
        }
        let mut distorted = Vec::new();
        let impressions = (0..spec.impressions)
            .map(|k| {
                let hit = is_distorted(spec, s, k);
                let imp = impression_with(&identity, spec, s, k, hit.then_some(distortion));
                if hit {
                    let kept = imp.origins.iter().filter(|o| o.is_some()).count();
                    let l = identity.minutiae.len().max(1) as f64;
                    distorted.push(DistortedImpression {
                        subject: s,
                        impression: k,
                        lost_fraction: 1.0 - kept as f64 / l,
                    });
                }
                imp.template
            })
            .collect();
        (
            Subject {
                id: format!("{s:0width$}"),
                impressions,
            },
            distorted,
        )
    });

    let mut subjects = Vec::with_capacity(spec.subjects);
    let mut distorted = Vec::new();
    for (subject, d) in per_subject {
        subjects.push(subject);
        distorted.extend(d);
    }
    let corpus = Corpus::new(subjects, spec.dims())?;
    let manifest = Manifest {
        seed: spec.seed,
        collided_pairs: plan.collided_pairs,
        collision_similarity_floor: COLLISION_SIMILARITY_FLOOR,
        distorted,
        distortion_loss_floor: if spec.distortion_rate > 0.0 {
            spec.distortion_dropout
        } else {
            0.0
        },
    };
    Ok((corpus, manifest))
}

/// Checks the manifest's stated guarantees against a generated corpus.
/// Returns a description of the first violated guarantee.
pub fn check_manifest(corpus: &Corpus, manifest: &Manifest) -> Result<()> {
    if corpus.impressions_per_subject() == Some(0) {
        return Ok(());
    }
    for &[a, b] in &manifest.collided_pairs {
        let s = global_match(corpus.template(a, 0), corpus.template(b, 0))?;
        if s <= manifest.collision_similarity_floor {
            return Err(Error::Corpus(format!(
                "collided pair ({a}, {b}) has global similarity {s}"
            )));
        }
    }
    for d in &manifest.distorted {
        if d.lost_fraction < manifest.distortion_loss_floor {
            return Err(Error::Corpus(format!(
                "distorted impression ({}, {}) lost only {}",
                d.subject, d.impression, d.lost_fraction
            )));
        }
    }
    Ok(())
}
