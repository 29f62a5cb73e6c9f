use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpfuse_core::codec::{write_template, Format};
use fpfuse_core::template::ImageSize;
use fpfuse_core::{Minutia, Template};
use serde_json::Value;

fn fpfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpfuse"))
        .args(args)
        .env_remove("FPFUSE_SEED")
        .output()
        .unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn template(global: Vec<f32>) -> Template {
    let minutiae = (0..6)
        .map(|k| {
            let mut e = vec![0.0f32; 4];
            e[k % 4] = 1.0;
            Minutia::new(50.0 + 40.0 * k as f32, 120.0, 0.3 * k as f32, e)
        })
        .collect();
    Template::new(global, minutiae, ImageSize::new(384, 384), "fixture", 4)
}

fn write(dir: &Path, name: &str, t: &Template) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, write_template(t, Format::Binary)).unwrap();
    p
}

#[test]
fn self_match_is_confident_genuine() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.fpt", &template(vec![0.6, 0.8]));
    let r = ok_json(fpfuse(&["match", "--a", s(&a), "--b", s(&a)]));
    assert_eq!(r["gate"], "confident_genuine");
    assert_eq!(r["s_final"], 1.0);
    assert_eq!(r["work_units"], 0);
}

#[test]
fn orthogonal_globals_are_confident_impostor() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.fpt", &template(vec![1.0, 0.0]));
    let b = write(dir.path(), "b.fpt", &template(vec![0.0, 1.0]));
    let r = ok_json(fpfuse(&["match", "--a", s(&a), "--b", s(&b)]));
    assert_eq!(r["gate"], "confident_impostor");
    assert_eq!(r["s_final"], 0.0);
}

#[test]
fn mid_band_pair_runs_local_matching() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.fpt", &template(vec![1.0, 0.0]));
    let b = write(dir.path(), "b.fpt", &template(vec![0.5, 0.75f32.sqrt()]));
    let r = ok_json(fpfuse(&["match", "--a", s(&a), "--b", s(&b)]));
    assert_eq!(r["gate"], "local_evaluated");
    assert_eq!(r["s_g_raw"], 0.5);
    for key in ["s_l_raw", "s_g_norm", "s_l_effective", "s_final"] {
        assert!(r[key].is_number(), "{key} missing: {r}");
    }
    assert_eq!(r["work_units"], 36);
}

#[test]
fn unreadable_template_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.fpt");
    fs::write(&junk, b"FPT1 not really").unwrap();
    let out = fpfuse(&["match", "--a", s(&junk), "--b", s(&junk)]);
    assert_eq!(out.status.code(), Some(2));
}

fn synth(dir: &Path, spec: &str, name: &str) -> (PathBuf, Value) {
    let spec_path = dir.join(format!("{name}.spec.json"));
    fs::write(&spec_path, spec).unwrap();
    let out = dir.join(name);
    let v = ok_json(fpfuse(&[
        "synth",
        "--spec",
        s(&spec_path),
        "--out",
        s(&out),
    ]));
    (out, v)
}

#[test]
fn synth_checksum_is_stable_and_writes_every_template() {
    let dir = tempfile::tempdir().unwrap();
    let (out, a) = synth(dir.path(), "{}", "a");
    let (_, b) = synth(dir.path(), "{}", "b");
    assert_eq!(a["checksum"], b["checksum"]);
    assert_eq!(a["templates"], 800);
    let files = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| fs::read_dir(e.path()).unwrap().count())
        .sum::<usize>();
    assert_eq!(files, 800);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn seed_env_overrides_spec_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"subjects": 3, "impressions": 2}"#).unwrap();
    let run = |name: &str, seed: Option<&str>| -> Value {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fpfuse"));
        cmd.args([
            "synth",
            "--spec",
            s(&spec),
            "--out",
            s(&dir.path().join(name)),
        ]);
        cmd.env_remove("FPFUSE_SEED");
        if let Some(seed) = seed {
            cmd.env("FPFUSE_SEED", seed);
        }
        ok_json(cmd.output().unwrap())
    };
    let base = run("base", None);
    let seeded = run("seeded", Some("7"));
    assert_eq!(seeded["seed"], 7);
    assert_ne!(base["checksum"], seeded["checksum"]);
    let out = {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fpfuse"));
        cmd.args([
            "synth",
            "--spec",
            s(&spec),
            "--out",
            s(&dir.path().join("bad")),
        ]);
        cmd.env("FPFUSE_SEED", "seven");
        cmd.output().unwrap()
    };
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_probability_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"drop_prob": 1.5}"#).unwrap();
    let out = fpfuse(&[
        "synth",
        "--spec",
        s(&spec),
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drop_prob"));
}

#[test]
fn synth_refuses_a_non_empty_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = synth(dir.path(), r#"{"subjects": 2, "impressions": 2}"#, "c");
    let spec = dir.path().join("c.spec.json");
    let again = fpfuse(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn toy_corpus_eval_reports_two_genuine_one_impostor() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 2, "impressions": 2}"#, "toy");
    let report = dir.path().join("report.json");
    let summary = ok_json(fpfuse(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--protocol",
        "2x2",
        "--out",
        s(&report),
    ]));
    assert_eq!(summary["counts"]["genuine"], 2);
    assert_eq!(summary["counts"]["impostor"], 1);

    let full: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let g = &full["gate_stats"];
    let total: u64 = ["confident_genuine", "confident_impostor", "local_evaluated"]
        .iter()
        .map(|k| g[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 3);
    assert!(full["frr_at_far"]["0.001"].is_object());
    assert!(full["minutiae_quality"].is_null());
    let roc = fs::read_to_string(report.with_extension("roc.csv")).unwrap();
    assert!(roc.starts_with("thr,far,frr\n"));
    assert!(roc.trim_end().ends_with("inf,0,1"));
}

#[test]
fn eval_with_reference_reports_quality() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 2, "impressions": 2}"#, "toy");
    let report = dir.path().join("report.json");
    ok_json(fpfuse(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--protocol",
        "2x2",
        "--out",
        s(&report),
        "--reference",
        s(&corpus),
    ]));
    let full: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(full["minutiae_quality"]["goodness_index"], 1.0);
    assert_eq!(full["minutiae_quality"]["missed"], 0);
}

#[test]
fn eval_rejects_protocol_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 2, "impressions": 2}"#, "toy");
    let out = fpfuse(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--protocol",
        "3x2",
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_rows_are_sorted_by_gap_and_degenerate_band_skips_local() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 12, "impressions": 3}"#, "c");
    let r = ok_json(fpfuse(&[
        "bench",
        "--corpus",
        s(&corpus),
        "--grid",
        "0.5:0.5,disabled,0.75:0.15",
        "--sweep-minutiae",
        "50,30,10",
    ]));
    let grid = r["grid"].as_array().unwrap();
    let gaps: Vec<f64> = grid.iter().map(|g| g["gap"].as_f64().unwrap()).collect();
    assert!(gaps.windows(2).all(|w| w[0] >= w[1]), "{gaps:?}");
    let local: Vec<u64> = grid
        .iter()
        .map(|g| g["local_evaluated"].as_u64().unwrap())
        .collect();
    assert_eq!(local[0], 36 + 66);
    assert!(local[1] < local[0]);
    assert_eq!(local[2], 0);

    let work: Vec<u64> = r["sweep"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| row["work_units"].as_u64().unwrap())
        .collect();
    assert!(work.windows(2).all(|w| w[1] < w[0]), "{work:?}");
    assert!(r["sweep"][0]["local_only"].is_object());
}

#[test]
fn bench_empty_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 2, "impressions": 2}"#, "c");
    for grid in ["", " , "] {
        let out = fpfuse(&["bench", "--corpus", s(&corpus), "--grid", grid]);
        assert_eq!(out.status.code(), Some(2), "grid {grid:?}");
    }
    let out = fpfuse(&["bench", "--corpus", s(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
}

fn minutiae_json(pos: &[[f64; 3]], emb: &[[f64; 2]]) -> Value {
    serde_json::json!({ "M_po": pos, "M_e": emb })
}

fn loss_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut pred = minutiae_json(
        &[[10.0, 20.0, 0.5], [50.0, 60.0, 1.0], [100.0, 30.0, 6.0]],
        &[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]],
    );
    pred["G"] = serde_json::json!([0.1, 0.2, 0.3, 0.4]);
    pred["intermediates"] = serde_json::json!([minutiae_json(
        &[[12.0, 18.0, 0.4], [52.0, 57.0, 1.2], [97.0, 33.0, 0.1]],
        &[[0.9, 0.2], [0.1, 0.95], [0.7, 0.7]],
    )]);
    let mut gt = minutiae_json(
        &[[101.0, 32.0, 0.2], [11.0, 19.0, 0.6], [49.0, 62.0, 1.1]],
        &[[0.8, 0.6], [0.9, 0.1], [0.1, 0.9]],
    );
    gt["G"] = serde_json::json!([0.0, 0.25, 0.35, 0.3]);
    let (p, g) = (dir.join("pred.json"), dir.join("gt.json"));
    fs::write(&p, pred.to_string()).unwrap();
    fs::write(&g, gt.to_string()).unwrap();
    (p, g)
}

#[test]
fn losses_fixture_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let (p, g) = loss_fixture(dir.path());
    let b = ok_json(fpfuse(&["losses", "--pred", s(&p), "--gt", s(&g)]));
    let total = b["L_tot"].as_f64().unwrap();
    assert!((total - 7.2887186712304715).abs() < 1e-9, "{b}");
    let parts: f64 = ["L_g", "L_po", "L_e", "L_po_inter", "L_e_inter"]
        .iter()
        .map(|k| b[k].as_f64().unwrap())
        .sum();
    assert!((parts - total).abs() < 1e-12);

    let w = dir.path().join("w.json");
    fs::write(
        &w,
        r#"{"lambda_g": 0, "lambda_po": 0, "lambda_e": 1, "lambda_po_inter": 0, "lambda_e_inter": 0}"#,
    )
    .unwrap();
    let one_hot = ok_json(fpfuse(&[
        "losses",
        "--pred",
        s(&p),
        "--gt",
        s(&g),
        "--weights",
        s(&w),
    ]));
    assert_eq!(one_hot["L_tot"], b["L_e"]);
}

#[test]
fn losses_pred_equal_to_gt_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (_, g) = loss_fixture(dir.path());
    let mut gt: Value = serde_json::from_slice(&fs::read(&g).unwrap()).unwrap();
    let head = serde_json::json!({ "M_po": gt["M_po"], "M_e": gt["M_e"] });
    gt["intermediates"] = Value::Array(vec![head; 2]);
    let p = dir.path().join("same.json");
    fs::write(&p, gt.to_string()).unwrap();
    let b = ok_json(fpfuse(&["losses", "--pred", s(&p), "--gt", s(&g)]));
    for k in ["L_g", "L_po", "L_e", "L_po_inter", "L_e_inter", "L_tot"] {
        assert_eq!(b[k], 0.0, "{k}");
    }
}

#[test]
fn losses_shape_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (p, g) = loss_fixture(dir.path());
    let mut pred: Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
    pred["G"].as_array_mut().unwrap().push(1.0.into());
    fs::write(&p, pred.to_string()).unwrap();
    let out = fpfuse(&["losses", "--pred", s(&p), "--gt", s(&g)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pretty_flag_prints_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.fpt", &template(vec![1.0, 0.0]));
    let out = fpfuse(&["--pretty", "match", "--a", s(&a), "--b", s(&a)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("confident_genuine"));
    assert!(serde_json::from_str::<Value>(&text).is_err());
}

#[test]
fn calibrate_emits_a_double_sigmoid_config() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(dir.path(), r#"{"subjects": 6, "impressions": 3}"#, "c");
    let cfg = ok_json(fpfuse(&["calibrate", "--corpus", s(&corpus)]));
    assert_eq!(cfg["norm"]["kind"], "double_sigmoid");
    let t = cfg["norm"]["params"]["t"].as_f64().unwrap();
    assert!(t > 0.0);
}
