//! Verification protocol, score metrics and minutiae-quality metrics.
//!
//! Decision rule everywhere: a pair is accepted as genuine when its score
//! is `>= threshold`. Thresholds are drawn from the sorted distinct
//! observed scores plus `+inf`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::assignment::{correspond_minutiae, CorrespondenceWeights};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::parallel::{map_slice, Execution};
use crate::pipeline::{infer_pair, Gate, MatchResult, PipelineConfig};
use crate::template::Minutia;

/// FAR targets reported by default (0.1% and 1%).
pub const REPORT_FAR_TARGETS: [f64; 2] = [0.001, 0.01];
/// Pairing radius for minutiae-quality metrics.
pub const DEFAULT_QUALITY_RADIUS_PX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpostorRule {
    /// First impression of every subject against every other subject's.
    #[default]
    FirstImpression,
    /// Every impression against every impression of every other subject.
    AllImpressions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub subjects: usize,
    pub impressions: usize,
    pub impostor_rule: ImpostorRule,
}

impl Protocol {
    pub fn new(subjects: usize, impressions: usize) -> Self {
        Protocol {
            subjects,
            impressions,
            impostor_rule: ImpostorRule::FirstImpression,
        }
    }

    pub fn genuine_count(&self) -> usize {
        self.subjects * self.impressions * self.impressions.saturating_sub(1) / 2
    }

    pub fn impostor_count(&self) -> usize {
        let pairs = self.subjects * self.subjects.saturating_sub(1) / 2;
        match self.impostor_rule {
            ImpostorRule::FirstImpression if self.impressions == 0 => 0,
            ImpostorRule::FirstImpression => pairs,
            ImpostorRule::AllImpressions => pairs * self.impressions * self.impressions,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.subjects, self.impressions)
    }
}

/// Parses `"<subjects>x<impressions>"`, e.g. `100x8`.
impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::param("protocol", "expected <subjects>x<impressions>"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::param("protocol", format!("`{v}` is not a count")))
        };
        Ok(Protocol::new(parse(a)?, parse(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImpressionRef {
    pub subject: usize,
    pub impression: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairRef {
    pub a: ImpressionRef,
    pub b: ImpressionRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairLists {
    pub genuine: Vec<PairRef>,
    pub impostor: Vec<PairRef>,
}

fn iref(subject: usize, impression: usize) -> ImpressionRef {
    ImpressionRef {
        subject,
        impression,
    }
}

/// Pair lists implied by a protocol, subject-major and
/// impression-lexicographic.
pub fn protocol_pairs(p: &Protocol) -> PairLists {
    let mut out = PairLists {
        genuine: Vec::with_capacity(p.genuine_count()),
        impostor: Vec::with_capacity(p.impostor_count()),
    };
    for s in 0..p.subjects {
        for i in 0..p.impressions {
            for j in i + 1..p.impressions {
                out.genuine.push(PairRef {
                    a: iref(s, i),
                    b: iref(s, j),
                });
            }
        }
    }
    if p.impressions == 0 {
        return out;
    }
    for s in 0..p.subjects {
        for t in s + 1..p.subjects {
            match p.impostor_rule {
                ImpostorRule::FirstImpression => out.impostor.push(PairRef {
                    a: iref(s, 0),
                    b: iref(t, 0),
                }),
                ImpostorRule::AllImpressions => {
                    for i in 0..p.impressions {
                        for j in 0..p.impressions {
                            out.impostor.push(PairRef {
                                a: iref(s, i),
                                b: iref(t, j),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Protocol pair lists after checking the corpus has exactly the declared
/// shape.
pub fn enumerate_pairs(p: &Protocol, corpus: &Corpus) -> Result<PairLists> {
    let per = corpus
        .impressions_per_subject()
        .ok_or_else(|| Error::Corpus("ragged corpus: impression counts differ".into()))?;
    if corpus.subjects().len() != p.subjects || per != p.impressions {
        return Err(Error::Corpus(format!(
            "protocol {p} does not match corpus {}x{per}",
            corpus.subjects().len()
        )));
    }
    Ok(protocol_pairs(p))
}

fn serialize_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    #[serde(rename = "thr", serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub frr: f64,
    pub far: f64,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
}

fn check_scores(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() {
        return Err(Error::EmptyInput("genuine scores"));
    }
    if impostor.is_empty() {
        return Err(Error::EmptyInput("impostor scores"));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::param("score", "must not be NaN"));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Full threshold sweep, ascending in threshold.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores(genuine, impostor)?;
    let g = sorted(genuine);
    let i = sorted(impostor);
    let mut grid: Vec<f64> = g.iter().chain(&i).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.push(f64::INFINITY);

    let (ng, ni) = (g.len() as f64, i.len() as f64);
    // two-pointer sweep: counts strictly below the threshold
    let (mut gi, mut ii) = (0usize, 0usize);
    Ok(grid
        .into_iter()
        .map(|thr| {
            while gi < g.len() && g[gi] < thr {
                gi += 1;
            }
            while ii < i.len() && i[ii] < thr {
                ii += 1;
            }
            RocPoint {
                threshold: thr,
                far: (i.len() - ii) as f64 / ni,
                frr: gi as f64 / ng,
            }
        })
        .collect())
}

/// Smallest grid threshold whose FAR does not exceed `far_target`, with the
/// FRR at that threshold.
pub fn frr_at_far(genuine: &[f64], impostor: &[f64], far_target: f64) -> Result<OperatingPoint> {
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::param("far_target", "must lie in [0, 1]"));
    }
    let roc = roc_curve(genuine, impostor)?;
    let p = roc
        .iter()
        .find(|p| p.far <= far_target)
        .expect("the +inf threshold has FAR 0");
    Ok(OperatingPoint {
        frr: p.frr,
        far: p.far,
        threshold: p.threshold,
    })
}

/// Equal error rate, interpolating linearly between the two grid points
/// where `FAR - FRR` changes sign.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    let roc = roc_curve(genuine, impostor)?;
    let d = |p: &RocPoint| p.far - p.frr;
    let k = roc
        .iter()
        .position(|p| d(p) <= 0.0)
        .expect("the +inf threshold has FAR 0 <= FRR");
    let p = roc[k];
    if d(&p) == 0.0 || k == 0 {
        return Ok(0.5 * (p.far + p.frr));
    }
    let q = roc[k - 1];
    let alpha = d(&q) / (d(&q) - d(&p));
    Ok(q.far + alpha * (p.far - q.far))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinutiaeQuality {
    pub paired: usize,
    pub missed: usize,
    pub spurious: usize,
    pub goodness_index: f64,
    pub avg_positional_error_px: f64,
}

/// Pairs predicted with reference minutiae by location-only optimal
/// assignment, accepting pairs within `radius_px`.
///
/// Goodness index is `(paired - missed - spurious) / |gt|`; with no
/// reference minutiae it is 1 for an empty prediction and -1 otherwise.
pub fn minutiae_quality(pred: &[Minutia], gt: &[Minutia], radius_px: f64) -> MinutiaeQuality {
    let assignment = correspond_minutiae(pred, gt, &CorrespondenceWeights::location_only())
        .expect("location-only costs are finite");
    let accepted: Vec<f64> = assignment
        .pairs
        .iter()
        .map(|&(p, g)| {
            (f64::from(pred[p].x) - f64::from(gt[g].x))
                .hypot(f64::from(pred[p].y) - f64::from(gt[g].y))
        })
        .filter(|&d| d <= radius_px)
        .collect();
    let paired = accepted.len();
    let missed = gt.len() - paired;
    let spurious = pred.len() - paired;
    let goodness_index = if gt.is_empty() {
        if pred.is_empty() {
            1.0
        } else {
            -1.0
        }
    } else {
        (paired as f64 - missed as f64 - spurious as f64) / gt.len() as f64
    };
    let avg_positional_error_px = if paired == 0 {
        0.0
    } else {
        accepted.iter().sum::<f64>() / paired as f64
    };
    MinutiaeQuality {
        paired,
        missed,
        spurious,
        goodness_index,
        avg_positional_error_px,
    }
}

/// Quality of every template in `pred` against the template at the same
/// position in `reference`. Counts are summed; the goodness index is the
/// mean over templates and the positional error the mean over paired
/// minutiae.
pub fn corpus_minutiae_quality(
    pred: &Corpus,
    reference: &Corpus,
    radius_px: f64,
) -> Result<MinutiaeQuality> {
    let shape =
        |c: &Corpus| -> Vec<usize> { c.subjects().iter().map(|s| s.impressions.len()).collect() };
    if shape(pred) != shape(reference) {
        return Err(Error::Corpus(
            "reference corpus layout differs from the evaluated corpus".into(),
        ));
    }
    if pred.template_count() == 0 {
        return Err(Error::EmptyInput("corpus templates"));
    }
    let mut total = MinutiaeQuality {
        paired: 0,
        missed: 0,
        spurious: 0,
        goodness_index: 0.0,
        avg_positional_error_px: 0.0,
    };
    let mut error_sum = 0.0;
    for (p, r) in pred.iter().zip(reference.iter()) {
        let q = minutiae_quality(&p.minutiae, &r.minutiae, radius_px);
        total.paired += q.paired;
        total.missed += q.missed;
        total.spurious += q.spurious;
        total.goodness_index += q.goodness_index;
        error_sum += q.avg_positional_error_px * q.paired as f64;
    }
    total.goodness_index /= pred.template_count() as f64;
    if total.paired > 0 {
        total.avg_positional_error_px = error_sum / total.paired as f64;
    }
    Ok(total)
}

/// Runs the gated pipeline over `pairs`. Results are in pair order
/// regardless of the execution mode.
pub fn score_pairs(
    corpus: &Corpus,
    pairs: &[PairRef],
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<Vec<MatchResult>> {
    cfg.validate()?;
    map_slice(exec, pairs, |p| {
        infer_pair(
            corpus.template(p.a.subject, p.a.impression),
            corpus.template(p.b.subject, p.b.impression),
            cfg,
        )
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GateStats {
    pub confident_genuine: usize,
    pub confident_impostor: usize,
    pub local_evaluated: usize,
}

impl GateStats {
    pub fn tally<'a>(results: impl IntoIterator<Item = &'a MatchResult>) -> Self {
        let mut s = GateStats::default();
        for r in results {
            match r.gate {
                Gate::ConfidentGenuine => s.confident_genuine += 1,
                Gate::ConfidentImpostor => s.confident_impostor += 1,
                Gate::LocalEvaluated => s.local_evaluated += 1,
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.confident_genuine + self.confident_impostor + self.local_evaluated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub genuine: usize,
    pub impostor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub counts: PairCounts,
    /// Keyed by the FAR target as written, e.g. `"0.001"`.
    pub frr_at_far: BTreeMap<String, OperatingPoint>,
    pub eer: f64,
    pub roc: Vec<RocPoint>,
    pub minutiae_quality: Option<MinutiaeQuality>,
    pub gate_stats: GateStats,
    pub work_units_total: u64,
}

/// Scored protocol run: per-pair results plus the summary report.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pairs: PairLists,
    pub genuine: Vec<MatchResult>,
    pub impostor: Vec<MatchResult>,
    pub report: EvalReport,
}

impl Evaluation {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.genuine.iter().map(|r| r.s_final).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.impostor.iter().map(|r| r.s_final).collect()
    }
}

pub fn evaluate(
    corpus: &Corpus,
    protocol: &Protocol,
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<Evaluation> {
    let pairs = enumerate_pairs(protocol, corpus)?;
    let genuine = score_pairs(corpus, &pairs.genuine, cfg, exec)?;
    let impostor = score_pairs(corpus, &pairs.impostor, cfg, exec)?;
    let report = build_report(&genuine, &impostor)?;
    Ok(Evaluation {
        pairs,
        genuine,
        impostor,
        report,
    })
}

pub fn build_report(genuine: &[MatchResult], impostor: &[MatchResult]) -> Result<EvalReport> {
    let g: Vec<f64> = genuine.iter().map(|r| r.s_final).collect();
    let i: Vec<f64> = impostor.iter().map(|r| r.s_final).collect();
    let mut frr = BTreeMap::new();
    for target in REPORT_FAR_TARGETS {
        frr.insert(target.to_string(), frr_at_far(&g, &i, target)?);
    }
    Ok(EvalReport {
        counts: PairCounts {
            genuine: g.len(),
            impostor: i.len(),
        },
        frr_at_far: frr,
        eer: eer(&g, &i)?,
        roc: roc_curve(&g, &i)?,
        minutiae_quality: None,
        gate_stats: GateStats::tally(genuine.iter().chain(impostor)),
        work_units_total: genuine.iter().chain(impostor).map(|r| r.work_units).sum(),
    })
}

/// `thr,far,frr` rows.
pub fn roc_csv(roc: &[RocPoint]) -> String {
    let mut out = String::from("thr,far,frr\n");
    for p in roc {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_counts() {
        for (s, i, g, imp) in [(100, 8, 2800, 4950), (140, 12, 9240, 9730), (2, 2, 2, 1)] {
            let p = Protocol::new(s, i);
            let pairs = protocol_pairs(&p);
            assert_eq!(pairs.genuine.len(), g);
            assert_eq!(pairs.impostor.len(), imp);
            assert_eq!(p.genuine_count(), g);
            assert_eq!(p.impostor_count(), imp);
        }
    }

    #[test]
    fn all_impressions_rule() {
        let p = Protocol {
            subjects: 3,
            impressions: 2,
            impostor_rule: ImpostorRule::AllImpressions,
        };
        assert_eq!(protocol_pairs(&p).impostor.len(), 12);
        assert_eq!(p.impostor_count(), 12);
    }

    #[test]
    fn protocol_parsing() {
        let p: Protocol = "100x8".parse().unwrap();
        assert_eq!((p.subjects, p.impressions), (100, 8));
        assert!("100".parse::<Protocol>().is_err());
        assert!("ax8".parse::<Protocol>().is_err());
    }

    #[test]
    fn frr_at_zero_far() {
        let op = frr_at_far(&[0.9, 0.8, 0.3], &[0.85, 0.2, 0.1], 0.0).unwrap();
        assert_eq!(op.threshold, 0.9);
        assert!((op.frr - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(op.far, 0.0);
    }

    #[test]
    fn frr_extremes() {
        let sep = frr_at_far(&[0.8, 0.9], &[0.1, 0.2], 0.0).unwrap();
        assert_eq!(sep.frr, 0.0);
        let adv = frr_at_far(&[0.1, 0.2], &[0.8, 0.9], 0.0).unwrap();
        assert_eq!(adv.frr, 1.0);
        assert!(frr_at_far(&[], &[0.1], 0.1).is_err());
        assert!(frr_at_far(&[0.1], &[0.1], 1.5).is_err());
    }

    #[test]
    fn roc_three_by_three_by_hand() {
        // thresholds: 0.1 0.2 0.3 0.8 0.85 0.9 inf
        let roc = roc_curve(&[0.9, 0.8, 0.3], &[0.85, 0.2, 0.1]).unwrap();
        let expect = [
            (0.1, 3.0, 0.0),
            (0.2, 2.0, 0.0),
            (0.3, 1.0, 0.0),
            (0.8, 1.0, 1.0),
            (0.85, 1.0, 2.0),
            (0.9, 0.0, 2.0),
            (f64::INFINITY, 0.0, 3.0),
        ];
        assert_eq!(roc.len(), expect.len());
        for (p, (t, fa, fr)) in roc.iter().zip(expect) {
            assert_eq!(p.threshold, t);
            assert_eq!(p.far, fa / 3.0);
            assert_eq!(p.frr, fr / 3.0);
        }
    }

    #[test]
    fn eer_cases() {
        assert_eq!(eer(&[0.8, 0.9], &[0.1, 0.2]).unwrap(), 0.0);
        let same = [1.0, 2.0, 3.0];
        assert!((eer(&same, &same).unwrap() - 0.5).abs() < 1e-12);
        let roc = roc_curve(&[0.8, 0.9], &[0.1, 0.2]).unwrap();
        assert!(roc.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
    }

    fn mn(x: f32, y: f32) -> Minutia {
        Minutia::new(x, y, 0.0, vec![1.0])
    }

    #[test]
    fn quality_cases() {
        let gt: Vec<Minutia> = (0..10).map(|i| mn(30.0 * i as f32, 10.0)).collect();
        let q = minutiae_quality(&gt, &gt, DEFAULT_QUALITY_RADIUS_PX);
        assert_eq!((q.paired, q.missed, q.spurious), (10, 0, 0));
        assert_eq!(q.goodness_index, 1.0);
        assert_eq!(q.avg_positional_error_px, 0.0);

        let q = minutiae_quality(&[], &gt, DEFAULT_QUALITY_RADIUS_PX);
        assert_eq!((q.paired, q.missed, q.spurious), (0, 10, 0));
        assert_eq!(q.goodness_index, -1.0);

        let jittered: Vec<Minutia> = gt
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if i % 2 == 0 {
                    mn(m.x + 3.0, m.y + 4.0)
                } else {
                    mn(m.x - 5.0, m.y)
                }
            })
            .collect();
        let q = minutiae_quality(&jittered, &gt, DEFAULT_QUALITY_RADIUS_PX);
        assert_eq!(q.goodness_index, 1.0);
        assert!((q.avg_positional_error_px - 5.0).abs() < 1e-9);

        // far-away prediction counts as spurious and the reference as missed
        let q = minutiae_quality(
            &[mn(300.0, 300.0)],
            &[mn(0.0, 0.0)],
            DEFAULT_QUALITY_RADIUS_PX,
        );
        assert_eq!((q.paired, q.missed, q.spurious), (0, 1, 1));
        assert_eq!(q.goodness_index, -2.0);
    }

    #[test]
    fn roc_csv_format() {
        let roc = roc_curve(&[1.0], &[0.0]).unwrap();
        let csv = roc_csv(&roc);
        assert!(csv.starts_with("thr,far,frr\n0,1,0\n"));
        assert!(csv.ends_with("inf,0,1\n"));
    }
}
