//! Drives the `anticipate` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anticipation::archive::load_archive;
use anticipation::synth::{any_overlap, generate_with_truth, DatasetSpec, OVERLAP_THRESHOLD};

fn anticipate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anticipate"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// Archive of `count` clips plus a small run config pointing at it.
fn workspace(count: usize, epochs: usize) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let archive = tmp.path().join("arch");
    let out = anticipate(&[
        "synth",
        "--count",
        &count.to_string(),
        "--seed",
        "3",
        "--out",
        s(&archive),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let config = tmp.path().join("run.json");
    let text = format!(
        r#"{{
  "data": {{ "archive": "arch", "test_fraction": 0.25 }},
  "model": {{ "d_e": 4, "d_gd": 8, "d_int": 4, "d_dyn": 4, "gat_hidden": 8 }},
  "train": {{ "epochs": {epochs}, "learning_rate": 0.001, "seed": 5 }}
}}"#
    );
    fs::write(&config, text).unwrap();
    (tmp, config)
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = anticipate(&[
            "synth",
            "--count",
            "10",
            "--seed",
            "7",
            "--out",
            s(&tmp.path().join(name)),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
}

#[test]
fn synth_confusable_fraction_matches_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("c");
    let out = anticipate(&[
        "synth",
        "--count",
        "40",
        "--seed",
        "11",
        "--confusable-fraction",
        "0.5",
        "--out",
        s(&dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let archive = load_archive(&dir).unwrap();

    let spec = DatasetSpec {
        confusable_fraction: 0.5,
        ..DatasetSpec::default()
    };
    let truth = generate_with_truth(&spec, 40, 11).unwrap();
    let regenerated: Vec<_> = truth.iter().map(|t| t.0.clone()).collect();
    assert_eq!(archive.videos, regenerated);
    let negatives: Vec<_> = truth.iter().filter(|t| !t.0.positive).collect();
    let confusable = negatives
        .iter()
        .filter(|t| any_overlap(&t.1.boxes, OVERLAP_THRESHOLD))
        .count();
    assert_eq!(confusable * 2, negatives.len());
}

#[test]
fn synth_rejects_bad_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("x");
    assert_eq!(code(&anticipate(&["synth", "--count", "0", "--out", s(&out_dir)])), 2);
    assert_eq!(
        code(&anticipate(&[
            "synth",
            "--count",
            "3",
            "--confusable-fraction",
            "1.5",
            "--out",
            s(&out_dir)
        ])),
        2
    );
    assert_eq!(
        code(&anticipate(&[
            "synth",
            "--count",
            "3",
            "--frames",
            "10",
            "--out",
            s(&out_dir)
        ])),
        2
    );
    assert_eq!(code(&anticipate(&["synth", "--out", s(&out_dir)])), 2);
    assert_eq!(code(&anticipate(&["frobnicate"])), 2);
}

#[test]
fn train_missing_archive_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    fs::write(&config, r#"{"data": {"archive": "nowhere"}}"#).unwrap();
    let out = anticipate(&["train", "--config", s(&config), "--out", s(&tmp.path().join("m.pdac"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn bad_config_is_a_usage_error() {
    let (tmp, _) = workspace(8, 1);
    let config = tmp.path().join("bad.json");
    fs::write(
        &config,
        r#"{"data": {"archive": "arch"}, "train": {"epochs": 1, "lr": 0.1}}"#,
    )
    .unwrap();
    let out = anticipate(&["train", "--config", s(&config), "--out", s(&tmp.path().join("m.pdac"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn train_eval_predict_plot() {
    let (tmp, config) = workspace(24, 2);
    let p = |name: &str| tmp.path().join(name);

    // two runs with the same seed log the same first epoch
    for run in ["m1", "m2"] {
        let out = anticipate(&["train", "--config", s(&config), "--out", s(&p(&format!("{run}.pdac")))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let csv1 = fs::read_to_string(p("m1.csv")).unwrap();
    let csv2 = fs::read_to_string(p("m2.csv")).unwrap();
    let lines: Vec<&str> = csv1.lines().collect();
    assert_eq!(lines[0], "epoch,loss,ap,mtta");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], csv2.lines().nth(1).unwrap());
    assert_eq!(fs::read(p("m1.pdac")).unwrap(), fs::read(p("m2.pdac")).unwrap());

    // evaluating twice gives identical reports
    for name in ["r1.json", "r2.json"] {
        let out = anticipate(&[
            "eval",
            "--config",
            s(&config),
            "--checkpoint",
            s(&p("m1.pdac")),
            "--archive",
            s(&p("arch")),
            "--split",
            "test",
            "--report",
            s(&p(name)),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let table = String::from_utf8(out.stdout).unwrap();
        assert!(table.contains("AP") && table.contains("AUC"), "{table}");
    }
    let r1 = fs::read(p("r1.json")).unwrap();
    assert_eq!(r1, fs::read(p("r2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    for key in ["ap", "p_at_80r", "mtta_s", "tta_at_80r_s", "auc"] {
        assert!(report["model"].get(key).is_some(), "missing {key}");
    }

    // curves and plots
    let out = anticipate(&[
        "predict",
        "--checkpoint",
        s(&p("m1.pdac")),
        "--archive",
        s(&p("arch")),
        "--out",
        s(&p("curves.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let curves: serde_json::Value = serde_json::from_slice(&fs::read(p("curves.json")).unwrap()).unwrap();
    let curves = curves.as_array().unwrap();
    assert_eq!(curves.len(), 24);
    let positive = curves.iter().find(|c| c["positive"] == true).unwrap();
    let id = positive["video_id"].as_str().unwrap();

    for name in ["a.svg", "b.svg"] {
        let out = anticipate(&[
            "plot",
            "--curves",
            s(&p("curves.json")),
            "--video",
            id,
            "--out",
            s(&p(name)),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let svg = fs::read_to_string(p("a.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(p("b.svg")).unwrap());
    assert!(svg.contains("threshold 0.50"));
    assert!(svg.contains(r#"class="accident""#) && svg.contains("stroke-dasharray"));

    let out = anticipate(&["plot", "--curves", s(&p("curves.json")), "--out", s(&p("plots"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_dir(p("plots")).unwrap().count(), 24);

    // a missing checkpoint is a usage error
    let out = anticipate(&["eval", "--checkpoint", s(&p("none.pdac")), "--archive", s(&p("arch"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_class_archive_is_a_protocol_error() {
    let (tmp, config) = workspace(8, 1);
    let p = |name: &str| tmp.path().join(name);
    let out = anticipate(&["train", "--config", s(&config), "--out", s(&p("m.pdac"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = anticipate(&[
        "synth",
        "--count",
        "6",
        "--positive-fraction",
        "0",
        "--out",
        s(&p("neg")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = anticipate(&["eval", "--checkpoint", s(&p("m.pdac")), "--archive", s(&p("neg"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn ablate_reports_each_variant() {
    let (tmp, config) = workspace(16, 1);
    let report = tmp.path().join("ablate.json");
    let out = anticipate(&[
        "ablate",
        "--config",
        s(&config),
        "--variants",
        "full,no-DEM",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 2);
    assert!(value.get("full").is_some() && value.get("no-DEM").is_some());

    let out = anticipate(&["ablate", "--config", s(&config), "--variants", "full,bogus"]);
    assert_eq!(code(&out), 2);
}
