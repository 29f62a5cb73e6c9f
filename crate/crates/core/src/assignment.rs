//! Exact minimum-cost assignment (Kuhn-Munkres) and the minutia
//! correspondence cost built on top of it.
//!
//! [`solve_assignment`] handles rectangular matrices and `+inf` entries
//! (forbidden pairs). Among all optimal maximal pairings it returns the
//! lexicographically smallest pair sequence: the dual potentials from the
//! Hungarian pass identify the tight edges, every optimal pairing is a
//! perfect matching on those edges, and a row-by-row greedy with
//! alternating-path repair picks the smallest one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::{angular_distance, Minutia};

/// Entry value marking a forbidden pair.
pub const FORBIDDEN: f64 = f64::INFINITY;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Row-major constructor. Entries must be finite or `+inf`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "cost matrix data",
                left: data.len(),
                right: rows * cols,
            });
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() || **v == FORBIDDEN)) {
            return Err(Error::param(
                "cost",
                format!("entries must be finite or +inf, got {bad}"),
            ));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                what: "cost matrix row",
                left: r.len(),
                right: cols,
            });
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CostMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        CostMatrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// Column assigned to each row, if any.
    pub fn row_to_col(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }
}

/// Minimum-cost maximal one-to-one pairing.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let (n, m) = (cost.rows, cost.cols);
    if n == 0 || m == 0 {
        return Ok(Assignment::empty());
    }

    let reachable = max_allowed_matching(cost);
    if reachable < n.min(m) {
        return Err(Error::Infeasible {
            rows: n,
            cols: m,
            matched: reachable,
        });
    }

    let k = n.max(m);
    // padded square view: dummy rows/cols cost 0
    let at = |r: usize, c: usize| -> f64 {
        if r < n && c < m {
            cost.get(r, c)
        } else {
            0.0
        }
    };

    let (u, v, mut row_to_col) = hungarian(k, &at);

    let scale = cost
        .data
        .iter()
        .filter(|x| x.is_finite())
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-9 * scale * k as f64;
    let tight: Vec<bool> = (0..k * k)
        .map(|idx| {
            let (r, c) = (idx / k, idx % k);
            let x = at(r, c);
            x.is_finite() && (x - u[r] - v[c]).abs() <= tol
        })
        .collect();
    debug_assert!((0..k).all(|r| tight[r * k + row_to_col[r]]));

    lexicographic_refine(k, n, m, &tight, &mut row_to_col);

    let pairs: Vec<(usize, usize)> = (0..n)
        .filter_map(|r| (row_to_col[r] < m).then_some((r, row_to_col[r])))
        .collect();
    let total_cost = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
    Ok(Assignment { pairs, total_cost })
}

/// O(k³) shortest augmenting path Hungarian method with potentials.
/// Returns row potentials, column potentials and the row → column matching.
fn hungarian(k: usize, at: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based internally; index 0 is the virtual root
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];

    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            // feasibility was checked up front, so some finite column exists
            debug_assert!(delta.is_finite());
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![NONE; k];
    for j in 1..=k {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    (u[1..].to_vec(), v[1..].to_vec(), row_to_col)
}

/// Rewrites `row_to_col` into the lexicographically smallest perfect
/// matching of the tight-edge graph. Real rows are fixed in order, each
/// taking the smallest real column that still admits a perfect matching of
/// the remainder; dummy columns come last since they mean "unpaired".
fn lexicographic_refine(k: usize, n: usize, m: usize, tight: &[bool], row_to_col: &mut [usize]) {
    let mut col_to_row = vec![NONE; k];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut row_fixed = vec![false; k];
    let mut col_fixed = vec![false; k];

    for i in 0..n {
        let current = row_to_col[i];
        let order = (0..m).chain(m..k);
        for j in order {
            if col_fixed[j] || !tight[i * k + j] {
                continue;
            }
            if j == current {
                break;
            }
            // dummy columns are interchangeable only if already in use by i
            let r = col_to_row[j];
            let f = current;
            // tentatively move i → j; r loses its column, f becomes free
            row_to_col[i] = j;
            col_to_row[j] = i;
            row_to_col[r] = NONE;
            col_to_row[f] = NONE;
            row_fixed[i] = true;
            col_fixed[j] = true;

            let mut seen = vec![false; k];
            if augment(
                r,
                k,
                tight,
                &row_fixed,
                &col_fixed,
                row_to_col,
                &mut col_to_row,
                &mut seen,
            ) {
                row_fixed[i] = false;
                col_fixed[j] = false;
                break;
            }
            // revert
            row_fixed[i] = false;
            col_fixed[j] = false;
            row_to_col[i] = f;
            col_to_row[f] = i;
            row_to_col[r] = j;
            col_to_row[j] = r;
        }
        row_fixed[i] = true;
        col_fixed[row_to_col[i]] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    k: usize,
    tight: &[bool],
    row_fixed: &[bool],
    col_fixed: &[bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    seen: &mut [bool],
) -> bool {
    for c in 0..k {
        if col_fixed[c] || seen[c] || !tight[row * k + c] {
            continue;
        }
        seen[c] = true;
        let owner = col_to_row[c];
        if owner == NONE
            || (!row_fixed[owner]
                && augment(
                    owner, k, tight, row_fixed, col_fixed, row_to_col, col_to_row, seen,
                ))
        {
            row_to_col[row] = c;
            col_to_row[c] = row;
            return true;
        }
    }
    false
}

/// Size of a maximum matching restricted to finite entries.
fn max_allowed_matching(cost: &CostMatrix) -> usize {
    let (n, m) = (cost.rows, cost.cols);
    let mut col_owner = vec![NONE; m];

    fn try_row(r: usize, cost: &CostMatrix, col_owner: &mut [usize], seen: &mut [bool]) -> bool {
        for c in 0..cost.cols {
            if seen[c] || !cost.get(r, c).is_finite() {
                continue;
            }
            seen[c] = true;
            if col_owner[c] == NONE || try_row(col_owner[c], cost, col_owner, seen) {
                col_owner[c] = r;
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for r in 0..n {
        let mut seen = vec![false; m];
        if try_row(r, cost, &mut col_owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

/// How orientation differences enter the correspondence cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMetric {
    /// `min(|a-b|, 2π-|a-b|)`.
    #[default]
    Circular,
    /// Plain `|a-b|`, no wraparound.
    Linear,
}

impl AngleMetric {
    pub fn distance(self, a: f64, b: f64) -> f64 {
        match self {
            AngleMetric::Circular => angular_distance(a, b),
            AngleMetric::Linear => (a - b).abs(),
        }
    }
}

/// Coefficients of the correspondence cost between two minutiae.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondenceWeights {
    /// per pixel
    pub w_loc: f64,
    /// per radian
    pub w_ori: f64,
    pub w_emb: f64,
    pub angle_metric: AngleMetric,
}

impl Default for CorrespondenceWeights {
    /// 20 px, 20° and an embedding distance of ~0.35 cost about the same.
    fn default() -> Self {
        CorrespondenceWeights {
            w_loc: 1.0,
            w_ori: 57.2958,
            w_emb: 20.0,
            angle_metric: AngleMetric::Circular,
        }
    }
}

impl CorrespondenceWeights {
    pub fn new(w_loc: f64, w_ori: f64, w_emb: f64) -> Result<Self> {
        let w = CorrespondenceWeights {
            w_loc,
            w_ori,
            w_emb,
            angle_metric: AngleMetric::Circular,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn location_only() -> Self {
        CorrespondenceWeights {
            w_loc: 1.0,
            w_ori: 0.0,
            w_emb: 0.0,
            angle_metric: AngleMetric::Circular,
        }
    }

    pub fn with_angle_metric(mut self, metric: AngleMetric) -> Self {
        self.angle_metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_loc", self.w_loc),
            ("w_ori", self.w_ori),
            ("w_emb", self.w_emb),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        if self.w_loc == 0.0 && self.w_ori == 0.0 && self.w_emb == 0.0 {
            return Err(Error::param(
                "correspondence weights",
                "must not all be zero",
            ));
        }
        Ok(())
    }

    /// Cost from precomputed geometric and embedding terms.
    pub(crate) fn combine(&self, location: f64, theta_a: f64, theta_b: f64, embedding: f64) -> f64 {
        let mut c = self.w_loc * location;
        if self.w_ori != 0.0 {
            c += self.w_ori * self.angle_metric.distance(theta_a, theta_b);
        }
        if self.w_emb != 0.0 {
            c += self.w_emb * embedding;
        }
        c
    }
}

/// Weighted sum of positional, orientation and embedding L2 distances.
pub fn minutia_cost(p: &Minutia, g: &Minutia, w: &CorrespondenceWeights) -> Result<f64> {
    if p.embedding.len() != g.embedding.len() {
        return Err(Error::DimensionMismatch {
            what: "minutia embedding",
            left: p.embedding.len(),
            right: g.embedding.len(),
        });
    }
    let location = (f64::from(p.x) - f64::from(g.x)).hypot(f64::from(p.y) - f64::from(g.y));
    let embedding = if w.w_emb != 0.0 {
        p.embedding
            .iter()
            .zip(&g.embedding)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            .sqrt()
    } else {
        0.0
    };
    Ok(w.combine(location, f64::from(p.theta), f64::from(g.theta), embedding))
}

/// Optimal one-to-one correspondence between predicted and reference
/// minutiae under [`minutia_cost`]. Rows index `pred`, columns `gt`.
pub fn correspond_minutiae(
    pred: &[Minutia],
    gt: &[Minutia],
    w: &CorrespondenceWeights,
) -> Result<Assignment> {
    if pred.is_empty() || gt.is_empty() {
        return Ok(Assignment::empty());
    }
    let mut data = Vec::with_capacity(pred.len() * gt.len());
    for p in pred {
        for g in gt {
            data.push(minutia_cost(p, g, w)?);
        }
    }
    solve_assignment(&CostMatrix::new(pred.len(), gt.len(), data)?)
}
