//! Command implementations behind the `fpfuse` binary. Each command
//! returns the text it would print so it can be driven from tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use fpfuse_core::codec::read_template;
use fpfuse_core::eval::{
    build_report, corpus_minutiae_quality, enumerate_pairs, evaluate, frr_at_far, roc_csv,
    Evaluation, ImpostorRule, OperatingPoint, PairRef, Protocol, DEFAULT_QUALITY_RADIUS_PX,
    REPORT_FAR_TARGETS,
};
use fpfuse_core::losses::{batch_loss, GroundTruthRecord, LossConfig, PredictionRecord};
use fpfuse_core::parallel::map_slice;
use fpfuse_core::score::{fit_double_sigmoid, Normalizer};
use fpfuse_core::synth::{generate_corpus_with, SynthSpec};
use fpfuse_core::{
    infer_pair, local_match, Corpus, Execution, Gate, PipelineConfig, ThresholdConfig,
};

/// Overrides the seed of every synth spec.
pub const SEED_ENV: &str = "FPFUSE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "fpfuse",
    version,
    about = "Fingerprint global/local fusion toolkit"
)]
pub struct Cli {
    /// Print human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Score one template pair.
    Match(MatchArgs),
    /// Run a verification protocol over a corpus.
    Eval(EvalArgs),
    /// Threshold-grid and minutiae-budget benchmarks.
    Bench(BenchArgs),
    /// Training-loss breakdown for predictions against ground truth.
    Losses(LossesArgs),
    /// Fit a double-sigmoid local normalizer on a corpus.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; must be absent or empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker cap; 0 lets the runtime decide.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImpostorRuleArg {
    FirstImpression,
    AllImpressions,
}

impl From<ImpostorRuleArg> for ImpostorRule {
    fn from(r: ImpostorRuleArg) -> Self {
        match r {
            ImpostorRuleArg::FirstImpression => ImpostorRule::FirstImpression,
            ImpostorRuleArg::AllImpressions => ImpostorRule::AllImpressions,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `<subjects>x<impressions>`, e.g. `100x8`.
    #[arg(long)]
    pub protocol: Protocol,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON path. The ROC CSV goes next to it unless `--roc` is set.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Corpus of reference minutiae with the same layout; enables the
    /// minutiae-quality block of the report.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_QUALITY_RADIUS_PX)]
    pub quality_radius: f64,
    #[arg(long, value_enum, default_value = "first-impression")]
    pub impostor_rule: ImpostorRuleArg,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the corpus shape.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated `theta_t:theta_f` pairs; `disabled` runs every pair
    /// through local matching.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated minutiae budgets, run with the gate disabled.
    #[arg(long)]
    pub sweep_minutiae: Option<String>,
    /// Budget at which the configured min-max local normalizer applies
    /// unscaled. Defaults to the configured budget, else 50.
    #[arg(long)]
    pub reference_minutiae: Option<usize>,
    /// Add wall-clock milliseconds per row (not deterministic).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    /// A prediction record or an array of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// A ground-truth record or an array of them, aligned with `--pred`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Loss weights and correspondence settings.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

pub fn run(cli: &Cli) -> Result<String> {
    let pretty = cli.pretty;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, std::env::var(SEED_ENV).ok().as_deref(), pretty),
        Command::Match(a) => cmd_match(a, pretty),
        Command::Eval(a) => cmd_eval(a, pretty),
        Command::Bench(a) => cmd_bench(a, pretty),
        Command::Losses(a) => cmd_losses(a, pretty),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate().context("invalid pipeline config")?;
    Ok(cfg)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::read_dir(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn corpus_protocol(corpus: &Corpus, given: Option<Protocol>) -> Result<Protocol> {
    if let Some(p) = given {
        return Ok(p);
    }
    let per = corpus
        .impressions_per_subject()
        .context("ragged corpus: pass --protocol explicitly")?;
    Ok(Protocol::new(corpus.subjects().len(), per))
}

fn require_empty_dir(path: &Path) -> Result<()> {
    if path.exists() {
        let mut entries = fs::read_dir(path).with_context(|| format!("{}", path.display()))?;
        if entries.next().is_some() {
            bail!("output directory {} is not empty", path.display());
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthSummary {
    checksum: String,
    seed: u64,
    subjects: usize,
    impressions: usize,
    templates: usize,
    collided_pairs: usize,
    distorted_impressions: usize,
    manifest: PathBuf,
}

pub fn cmd_synth(a: &SynthArgs, seed_override: Option<&str>, pretty: bool) -> Result<String> {
    let mut spec: SynthSpec = read_json(&a.spec)?;
    if let Some(s) = seed_override {
        spec.seed = s
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{s}` is not an unsigned integer"))?;
    }
    spec.validate().context("invalid synth spec")?;
    require_empty_dir(&a.out)?;
    let (corpus, manifest) = generate_corpus_with(&spec, Execution::with_jobs(a.jobs))?;
    corpus.write_dir(&a.out)?;
    let manifest_path = a.out.join("manifest.json");
    fs::write(&manifest_path, to_json(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;

    let summary = SynthSummary {
        checksum: corpus.checksum(),
        seed: spec.seed,
        subjects: spec.subjects,
        impressions: spec.impressions,
        templates: corpus.template_count(),
        collided_pairs: manifest.collided_pairs.len(),
        distorted_impressions: manifest.distorted.len(),
        manifest: manifest_path,
    };
    if pretty {
        return Ok(format!(
            "checksum   {}\nseed       {}\ntemplates  {} ({} x {})\ncollided   {} subject pairs\ndistorted  {} impressions\n",
            summary.checksum,
            summary.seed,
            summary.templates,
            summary.subjects,
            summary.impressions,
            summary.collided_pairs,
            summary.distorted_impressions
        ));
    }
    to_json(&summary)
}

fn gate_label(g: Gate) -> &'static str {
    match g {
        Gate::ConfidentGenuine => "confident_genuine",
        Gate::ConfidentImpostor => "confident_impostor",
        Gate::LocalEvaluated => "local_evaluated",
    }
}

pub fn cmd_match(a: &MatchArgs, pretty: bool) -> Result<String> {
    let cfg = load_config(a.config.as_deref())?;
    let load = |p: &Path| -> Result<_> {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        read_template(&bytes).with_context(|| format!("decoding {}", p.display()))
    };
    let r = infer_pair(&load(&a.a)?, &load(&a.b)?, &cfg)?;
    if pretty {
        let local = r.s_l_raw.map_or("-".to_string(), |v| format!("{v:.6}"));
        return Ok(format!(
            "gate           {}\ns_g_raw        {:.6}\ns_l_raw        {local}\ns_g_norm       {:.6}\ns_l_effective  {:.6}\ns_final        {:.6}\nwork_units     {}\n",
            gate_label(r.gate), r.s_g_raw, r.s_g_norm, r.s_l_effective, r.s_final, r.work_units
        ));
    }
    to_json(&r)
}

fn roc_path(a: &EvalArgs) -> PathBuf {
    a.roc
        .clone()
        .unwrap_or_else(|| a.out.with_extension("roc.csv"))
}

fn format_far(target: &str) -> String {
    target
        .parse::<f64>()
        .map_or(target.to_string(), |t| format!("{}%", t * 100.0))
}

fn operating_table(map: &BTreeMap<String, OperatingPoint>) -> String {
    map.iter()
        .map(|(k, op)| {
            format!(
                "  FAR<={:<7} FRR {:>7.3}%  (far {:.4}%, thr {})\n",
                format_far(k),
                op.frr * 100.0,
                op.far * 100.0,
                op.threshold
            )
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs, pretty: bool) -> Result<String> {
    let corpus = load_corpus(&a.corpus)?;
    let cfg = load_config(a.config.as_deref())?;
    let protocol = Protocol {
        impostor_rule: a.impostor_rule.into(),
        ..a.protocol
    };
    let mut ev = evaluate(&corpus, &protocol, &cfg, Execution::with_jobs(a.jobs))?;
    if let Some(r) = &a.reference {
        let reference = load_corpus(r)?;
        ev.report.minutiae_quality = Some(corpus_minutiae_quality(
            &corpus,
            &reference,
            a.quality_radius,
        )?);
    }
    let report = &ev.report;
    fs::write(&a.out, to_json(report)?).with_context(|| format!("writing {}", a.out.display()))?;
    let roc = roc_path(a);
    fs::write(&roc, roc_csv(&report.roc)).with_context(|| format!("writing {}", roc.display()))?;

    if pretty {
        let g = &report.gate_stats;
        return Ok(format!(
            "pairs      {} genuine, {} impostor\n{}EER        {:.3}%\ngate       {} confident genuine, {} confident impostor, {} local\nwork units {}\nreport     {}\nroc        {}\n",
            report.counts.genuine,
            report.counts.impostor,
            operating_table(&report.frr_at_far),
            report.eer * 100.0,
            g.confident_genuine,
            g.confident_impostor,
            g.local_evaluated,
            report.work_units_total,
            a.out.display(),
            roc.display()
        ));
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        counts: fpfuse_core::eval::PairCounts,
        frr_at_far: &'a BTreeMap<String, OperatingPoint>,
        eer: f64,
        gate_stats: fpfuse_core::eval::GateStats,
        work_units_total: u64,
        report: &'a Path,
        roc: PathBuf,
    }
    to_json(&Summary {
        counts: report.counts,
        frr_at_far: &report.frr_at_far,
        eer: report.eer,
        gate_stats: report.gate_stats,
        work_units_total: report.work_units_total,
        report: &a.out,
        roc,
    })
}

/// One `--grid` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    Disabled,
    Band(ThresholdConfig),
}

impl GridPoint {
    fn thresholds(self) -> ThresholdConfig {
        match self {
            GridPoint::Disabled => ThresholdConfig::disabled(),
            GridPoint::Band(t) => t,
        }
    }
}

pub fn parse_grid(s: &str) -> Result<Vec<GridPoint>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        if item.eq_ignore_ascii_case("disabled") {
            out.push(GridPoint::Disabled);
            continue;
        }
        let (t, f) = item
            .split_once(':')
            .with_context(|| format!("grid entry `{item}`: expected theta_t:theta_f"))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("grid entry `{item}`: `{v}` is not a number"))
        };
        out.push(GridPoint::Band(ThresholdConfig::new(num(t)?, num(f)?)?));
    }
    if out.is_empty() {
        bail!("empty grid");
    }
    Ok(out)
}

pub fn parse_budgets(s: &str) -> Result<Vec<usize>> {
    let out = s
        .split(',')
        .map(str::trim)
        .filter(|i| !i.is_empty())
        .map(|v| {
            v.parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .with_context(|| format!("minutiae budget `{v}` is not a positive integer"))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        bail!("empty minutiae sweep");
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub theta_t: f64,
    pub theta_f: f64,
    pub gap: f64,
    pub disabled: bool,
    pub confident_genuine: usize,
    pub confident_impostor: usize,
    pub local_evaluated: usize,
    pub work_units: u64,
    pub frr_at_far: BTreeMap<String, OperatingPoint>,
    pub eer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub max_minutiae: usize,
    pub local_evaluated: usize,
    pub work_units: u64,
    pub fused: BTreeMap<String, OperatingPoint>,
    /// Present when every pair was local-evaluated.
    pub global_only: Option<BTreeMap<String, OperatingPoint>>,
    pub local_only: Option<BTreeMap<String, OperatingPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub protocol: String,
    pub grid: Vec<GridRow>,
    pub sweep: Vec<SweepRow>,
}

/// Operating points keyed by FAR target.
pub type OperatingPoints = BTreeMap<String, OperatingPoint>;

fn operating_points(genuine: &[f64], impostor: &[f64]) -> Result<OperatingPoints> {
    REPORT_FAR_TARGETS
        .iter()
        .map(|&t| Ok((t.to_string(), frr_at_far(genuine, impostor, t)?)))
        .collect()
}

/// Single-channel operating points from an evaluation where every pair
/// was local-evaluated.
fn channel_points(ev: &Evaluation) -> Result<Option<(OperatingPoints, OperatingPoints)>> {
    let all = ev.genuine.iter().chain(&ev.impostor);
    if all.clone().any(|r| r.s_l_raw.is_none()) {
        return Ok(None);
    }
    let global = |rs: &[fpfuse_core::MatchResult]| rs.iter().map(|r| r.s_g_raw).collect::<Vec<_>>();
    let local = |rs: &[fpfuse_core::MatchResult]| {
        rs.iter()
            .map(|r| r.s_l_raw.unwrap_or(0.0))
            .collect::<Vec<_>>()
    };
    Ok(Some((
        operating_points(&global(&ev.genuine), &global(&ev.impostor))?,
        operating_points(&local(&ev.genuine), &local(&ev.impostor))?,
    )))
}

/// Min-max local normalizer rescaled so its upper bound tracks the budget.
pub fn scale_norm(norm: Normalizer, budget: usize, reference: usize) -> Normalizer {
    match norm {
        Normalizer::MinMax { min, max } => {
            let f = budget as f64 / reference as f64;
            Normalizer::MinMax {
                min: min * f,
                max: max * f,
            }
        }
        other => other,
    }
}

/// What a bench run covers.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub grid: Vec<GridPoint>,
    pub sweep: Vec<usize>,
    /// Budget at which a min-max local normalizer applies unscaled.
    pub reference_minutiae: usize,
    pub timing: bool,
}

pub fn bench(
    corpus: &Corpus,
    protocol: &Protocol,
    cfg: &PipelineConfig,
    plan: &BenchPlan,
    exec: Execution,
) -> Result<BenchReport> {
    let timing = plan.timing;
    let timed = |c: &PipelineConfig| -> Result<(Evaluation, Option<f64>)> {
        let t0 = Instant::now();
        let ev = evaluate(corpus, protocol, c, exec)?;
        Ok((ev, timing.then(|| t0.elapsed().as_secs_f64() * 1e3)))
    };

    let mut rows = Vec::with_capacity(plan.grid.len());
    for &g in &plan.grid {
        let thr = g.thresholds();
        let (ev, elapsed_ms) = timed(&cfg.clone().with_thresholds(thr))?;
        let r = &ev.report;
        rows.push(GridRow {
            theta_t: thr.theta_t,
            theta_f: thr.theta_f,
            gap: thr.gap(),
            disabled: g == GridPoint::Disabled,
            confident_genuine: r.gate_stats.confident_genuine,
            confident_impostor: r.gate_stats.confident_impostor,
            local_evaluated: r.gate_stats.local_evaluated,
            work_units: r.work_units_total,
            frr_at_far: r.frr_at_far.clone(),
            eer: r.eer,
            elapsed_ms,
        });
    }
    rows.sort_by(|a, b| b.gap.total_cmp(&a.gap));

    let mut sweep_rows = Vec::with_capacity(plan.sweep.len());
    for &k in &plan.sweep {
        let mut c = cfg.clone().with_thresholds(ThresholdConfig::disabled());
        c.local = c.local.with_max_minutiae(Some(k));
        c.norm = scale_norm(cfg.norm, k, plan.reference_minutiae);
        let (ev, elapsed_ms) = timed(&c)?;
        let channels = channel_points(&ev)?;
        let r = build_report(&ev.genuine, &ev.impostor)?;
        sweep_rows.push(SweepRow {
            max_minutiae: k,
            local_evaluated: r.gate_stats.local_evaluated,
            work_units: r.work_units_total,
            fused: r.frr_at_far,
            global_only: channels.as_ref().map(|c| c.0.clone()),
            local_only: channels.map(|c| c.1),
            elapsed_ms,
        });
    }
    Ok(BenchReport {
        protocol: protocol.to_string(),
        grid: rows,
        sweep: sweep_rows,
    })
}

fn frr_cell(map: Option<&BTreeMap<String, OperatingPoint>>, target: f64) -> String {
    map.and_then(|m| m.get(&target.to_string()))
        .map_or("-".to_string(), |op| format!("{:.3}", op.frr * 100.0))
}

fn bench_table(r: &BenchReport) -> String {
    let mut out = String::new();
    let heads: Vec<String> = REPORT_FAR_TARGETS
        .iter()
        .map(|t| format!("FRR%@{}", format_far(&t.to_string())))
        .collect();
    if !r.grid.is_empty() {
        out.push_str(&format!(
            "{:>8} {:>8} {:>6} {:>8} {:>12} {:>12} {:>12} {:>10}\n",
            "theta_t", "theta_f", "gap", "local", "work_units", heads[0], heads[1], "ms"
        ));
        for g in &r.grid {
            let (t, f, gap) = if g.disabled {
                ("off".to_string(), "off".to_string(), "-".to_string())
            } else {
                (
                    format!("{:.3}", g.theta_t),
                    format!("{:.3}", g.theta_f),
                    format!("{:.3}", g.gap),
                )
            };
            out.push_str(&format!(
                "{t:>8} {f:>8} {gap:>6} {:>8} {:>12} {:>12} {:>12} {:>10}\n",
                g.local_evaluated,
                g.work_units,
                frr_cell(Some(&g.frr_at_far), REPORT_FAR_TARGETS[0]),
                frr_cell(Some(&g.frr_at_far), REPORT_FAR_TARGETS[1]),
                g.elapsed_ms.map_or("-".to_string(), |m| format!("{m:.1}")),
            ));
        }
    }
    if !r.sweep.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let t = REPORT_FAR_TARGETS[1];
        out.push_str(&format!(
            "{:>6} {:>12} {:>16} {:>16} {:>16} {:>10}\n",
            "max_m",
            "work_units",
            format!("fused {}", heads[1]),
            "global-only",
            "local-only",
            "ms"
        ));
        for s in &r.sweep {
            out.push_str(&format!(
                "{:>6} {:>12} {:>16} {:>16} {:>16} {:>10}\n",
                s.max_minutiae,
                s.work_units,
                frr_cell(Some(&s.fused), t),
                frr_cell(s.global_only.as_ref(), t),
                frr_cell(s.local_only.as_ref(), t),
                s.elapsed_ms.map_or("-".to_string(), |m| format!("{m:.1}")),
            ));
        }
    }
    out
}

pub fn cmd_bench(a: &BenchArgs, pretty: bool) -> Result<String> {
    if a.grid.is_none() && a.sweep_minutiae.is_none() {
        bail!("nothing to run: pass --grid and/or --sweep-minutiae");
    }
    let grid = a
        .grid
        .as_deref()
        .map(parse_grid)
        .transpose()?
        .unwrap_or_default();
    let sweep = a
        .sweep_minutiae
        .as_deref()
        .map(parse_budgets)
        .transpose()?
        .unwrap_or_default();
    let corpus = load_corpus(&a.corpus)?;
    let protocol = corpus_protocol(&corpus, a.protocol)?;
    let cfg = load_config(a.config.as_deref())?;
    let reference = a
        .reference_minutiae
        .or(cfg.local.max_minutiae)
        .unwrap_or(50);
    if reference == 0 {
        bail!("--reference-minutiae must be positive");
    }
    let plan = BenchPlan {
        grid,
        sweep,
        reference_minutiae: reference,
        timing: a.timing,
    };
    let report = bench(
        &corpus,
        &protocol,
        &cfg,
        &plan,
        Execution::with_jobs(a.jobs),
    )?;
    if pretty {
        return Ok(bench_table(&report));
    }
    to_json(&report)
}

/// A single record or an array of records.
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t],
            OneOrMany::Many(v) => v,
        }
    }
}

pub fn cmd_losses(a: &LossesArgs, pretty: bool) -> Result<String> {
    let pred = read_json::<OneOrMany<PredictionRecord>>(&a.pred)?.into_vec();
    let gt = read_json::<OneOrMany<GroundTruthRecord>>(&a.gt)?.into_vec();
    if pred.len() != gt.len() {
        bail!(
            "prediction/ground-truth count mismatch: {} vs {}",
            pred.len(),
            gt.len()
        );
    }
    let cfg: LossConfig = match &a.weights {
        Some(p) => read_json(p)?,
        None => LossConfig::default(),
    };
    let batch: Vec<_> = pred.into_iter().zip(gt).collect();
    let b = batch_loss(&batch, &cfg, Execution::with_jobs(a.jobs))?;
    if pretty {
        return Ok(format!(
            "L_g         {:.9}\nL_po        {:.9}\nL_e         {:.9}\nL_po_inter  {:.9}\nL_e_inter   {:.9}\nL_tot       {:.9}\n",
            b.global, b.positions, b.embeddings, b.positions_inter, b.embeddings_inter, b.total
        ));
    }
    to_json(&b)
}

/// Prints the given config with `norm` replaced by a double sigmoid fitted
/// on the raw local scores of every protocol pair.
pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<String> {
    let corpus = load_corpus(&a.corpus)?;
    let protocol = corpus_protocol(&corpus, a.protocol)?;
    let cfg = load_config(a.config.as_deref())?;
    let pairs = enumerate_pairs(&protocol, &corpus)?;
    let exec = Execution::with_jobs(a.jobs);
    let raw = |list: &[PairRef]| -> Result<Vec<f64>> {
        map_slice(exec, list, |p| {
            local_match(
                corpus.template(p.a.subject, p.a.impression),
                corpus.template(p.b.subject, p.b.impression),
                &cfg.local,
            )
            .map(|r| r.score)
        })
        .into_iter()
        .collect::<fpfuse_core::Result<_>>()
        .map_err(Into::into)
    };
    let params = fit_double_sigmoid(&raw(&pairs.genuine)?, &raw(&pairs.impostor)?)?;
    to_json(&PipelineConfig {
        norm: Normalizer::DoubleSigmoid(params),
        ..cfg
    })
}
