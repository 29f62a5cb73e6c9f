//! Training objective reference: MSE terms on the global embedding and on
//! Hungarian-reordered minutiae, plus intermediate decoder layer terms.
//!
//! ```text
//! L_g        = MSE(G, G')
//! L_po       = MSE(M_po, M_po'')            M_po'' = M_po' reordered to match M_po
//! L_e        = MSE(M_e,  M_e'')
//! L_po_inter = sum_i MSE(M_po_i, M_po_i'')  each layer reordered independently
//! L_e_inter  = sum_i MSE(M_e_i,  M_e_i'')
//! L_tot      = λ_g L_g + λ_po L_po + λ_e L_e + λ_po_inter L_po_inter + λ_e_inter L_e_inter
//! ```

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CorrespondenceWeights, CostMatrix};
use crate::error::{Error, Result};
use crate::parallel::{map_slice, Execution};
use crate::template::angular_distance;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("mse operands", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyInput("mse operands"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("mse operands", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyInput("mse operands"));
    }
    let scale = 2.0 / a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| scale * (x - y)).collect())
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { what, left, right });
    }
    Ok(())
}

/// Minutia rows `(x, y, theta)` plus their embeddings for one decoder
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutiaeOutput {
    #[serde(rename = "M_po")]
    pub positions: Vec<[f64; 3]>,
    #[serde(rename = "M_e")]
    pub embeddings: Vec<Vec<f64>>,
}

impl MinutiaeOutput {
    fn validate(&self, what: &'static str) -> Result<usize> {
        check_len(what, self.positions.len(), self.embeddings.len())?;
        let width = self.embeddings.first().map_or(0, Vec::len);
        for e in &self.embeddings {
            check_len(what, e.len(), width)?;
        }
        Ok(width)
    }

    fn reordered(&self, perm: &[usize]) -> MinutiaeOutput {
        MinutiaeOutput {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            embeddings: perm.iter().map(|&i| self.embeddings[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "G")]
    pub global: Vec<f64>,
    #[serde(flatten)]
    pub minutiae: MinutiaeOutput,
    /// Outputs of the heads applied to intermediate decoder layers.
    #[serde(default)]
    pub intermediates: Vec<MinutiaeOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    #[serde(rename = "G")]
    pub global: Vec<f64>,
    #[serde(flatten)]
    pub minutiae: MinutiaeOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_po: f64,
    pub lambda_e: f64,
    pub lambda_po_inter: f64,
    pub lambda_e_inter: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_g: 1.0,
            lambda_po: 1.0,
            lambda_e: 1.0,
            lambda_po_inter: 1.0,
            lambda_e_inter: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_po", self.lambda_po),
            ("lambda_e", self.lambda_e),
            ("lambda_po_inter", self.lambda_po_inter),
            ("lambda_e_inter", self.lambda_e_inter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// How the orientation column of `M_po` enters the MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationLoss {
    /// Squared circular distance.
    #[default]
    Circular,
    /// Plain squared difference.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub correspondence: CorrespondenceWeights,
    pub orientation: OrientationLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_g")]
    pub global: f64,
    #[serde(rename = "L_po")]
    pub positions: f64,
    #[serde(rename = "L_e")]
    pub embeddings: f64,
    #[serde(rename = "L_po_inter")]
    pub positions_inter: f64,
    #[serde(rename = "L_e_inter")]
    pub embeddings_inter: f64,
    #[serde(rename = "L_tot")]
    pub total: f64,
}

impl LossBreakdown {
    fn add(self, o: LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            global: self.global + o.global,
            positions: self.positions + o.positions,
            embeddings: self.embeddings + o.embeddings,
            positions_inter: self.positions_inter + o.positions_inter,
            embeddings_inter: self.embeddings_inter + o.embeddings_inter,
            total: self.total + o.total,
        }
    }
}

/// Optimal permutation of ground-truth rows: `perm[i]` is the ground-truth
/// row paired with predicted row `i`.
pub fn ground_truth_permutation(
    pred: &MinutiaeOutput,
    gt: &MinutiaeOutput,
    w: &CorrespondenceWeights,
) -> Result<Vec<usize>> {
    let wp = pred.validate("prediction minutiae")?;
    let wg = gt.validate("ground-truth minutiae")?;
    check_len("minutiae rows", pred.positions.len(), gt.positions.len())?;
    if !pred.positions.is_empty() {
        check_len("minutia embedding", wp, wg)?;
    }
    let n = pred.positions.len();
    let cost = CostMatrix::from_fn(n, n, |i, j| {
        let (p, g) = (pred.positions[i], gt.positions[j]);
        let location = (p[0] - g[0]).hypot(p[1] - g[1]);
        let embedding = if w.w_emb != 0.0 {
            pred.embeddings[i]
                .iter()
                .zip(&gt.embeddings[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        } else {
            0.0
        };
        w.combine(location, p[2], g[2], embedding)
    })?;
    let assignment = solve_assignment(&cost)?;
    let perm: Vec<usize> = assignment
        .row_to_col(n)
        .into_iter()
        .map(|c| c.expect("square assignment is perfect"))
        .collect();
    Ok(perm)
}

/// Ground-truth rows permuted into correspondence with the prediction
/// (`M_po''`, `M_e''`).
pub fn reorder_ground_truth(
    pred: &MinutiaeOutput,
    gt: &MinutiaeOutput,
    w: &CorrespondenceWeights,
) -> Result<MinutiaeOutput> {
    let perm = ground_truth_permutation(pred, gt, w)?;
    Ok(gt.reordered(&perm))
}

/// MSE over the `L x 3` position block.
pub fn positions_mse(a: &[[f64; 3]], b: &[[f64; 3]], orientation: OrientationLoss) -> Result<f64> {
    check_len("position rows", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyInput("position rows"));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let dtheta = match orientation {
                OrientationLoss::Circular => angular_distance(p[2], q[2]),
                OrientationLoss::Strict => p[2] - q[2],
            };
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + dtheta.powi(2)
        })
        .sum();
    Ok(sum / (3 * a.len()) as f64)
}

fn embeddings_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    mse(&a.concat(), &b.concat())
}

fn layer_terms(pred: &MinutiaeOutput, gt: &MinutiaeOutput, cfg: &LossConfig) -> Result<(f64, f64)> {
    let reordered = reorder_ground_truth(pred, gt, &cfg.correspondence)?;
    Ok((
        positions_mse(&pred.positions, &reordered.positions, cfg.orientation)?,
        embeddings_mse(&pred.embeddings, &reordered.embeddings)?,
    ))
}

pub fn total_loss(
    pred: &PredictionRecord,
    gt: &GroundTruthRecord,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.weights.validate()?;
    cfg.correspondence.validate()?;
    let global = mse(&pred.global, &gt.global)?;
    let (positions, embeddings) = layer_terms(&pred.minutiae, &gt.minutiae, cfg)?;
    let mut positions_inter = 0.0;
    let mut embeddings_inter = 0.0;
    for layer in &pred.intermediates {
        let (p, e) = layer_terms(layer, &gt.minutiae, cfg)?;
        positions_inter += p;
        embeddings_inter += e;
    }
    let w = &cfg.weights;
    let total = w.lambda_g * global
        + w.lambda_po * positions
        + w.lambda_e * embeddings
        + w.lambda_po_inter * positions_inter
        + w.lambda_e_inter * embeddings_inter;
    Ok(LossBreakdown {
        global,
        positions,
        embeddings,
        positions_inter,
        embeddings_inter,
        total,
    })
}

/// Sum of [`total_loss`] over a batch. Records are scored in parallel and
/// reduced with a fixed pairwise tree, so the result does not depend on
/// the worker count.
pub fn batch_loss(
    batch: &[(PredictionRecord, GroundTruthRecord)],
    cfg: &LossConfig,
    exec: Execution,
) -> Result<LossBreakdown> {
    let parts = map_slice(exec, batch, |(p, g)| total_loss(p, g, cfg));
    let parts: Vec<LossBreakdown> = parts.into_iter().collect::<Result<_>>()?;
    Ok(pairwise_sum(&parts))
}

fn pairwise_sum(xs: &[LossBreakdown]) -> LossBreakdown {
    match xs.len() {
        0 => LossBreakdown::default(),
        1 => xs[0],
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l).add(pairwise_sum(r))
        }
    }
}
