use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csi_recomp::metrics::summarize;
use csi_recomp::model::ModelKind;
use csi_recomp::store::{read_manifest, read_run_dir, read_split};

const SMALL: &str = r#"
[scene]
subcarriers = 16
image_size = [24, 24]

[preprocess]
image_hw = [24, 24]

[train]
batch_size = 16
max_epochs = 2
seeds = [1, 2]
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csi-recomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["simulate", "--samples", "0", "--out", path(&dir.path().join("ds"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("ds").exists());
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[scene]\nsnr = 3\nsubcarriers = 16\n[train]\npatient = 2\n").unwrap();
    let out = cli(&[
        "simulate",
        "--samples",
        "4",
        "--config",
        path(&config),
        "--out",
        path(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("scene.snr") && err.contains("train.patient"), "{err}");
}

#[test]
fn simulate_is_bit_identical_and_defaults_to_desk_scale() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = cli(&["simulate", "--samples", "6", "--seed", "7", "--out", path(d)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["manifest.json", "csi.bin", "bfm.bin", "images.bin"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let m = read_manifest(&a).unwrap();
    assert_eq!((m.k, m.m, m.n, m.sample_count), (64, 3, 4, 6));
    assert_eq!(m.generator.unwrap().seed, 7);
}

#[test]
fn image_models_need_images() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let ds = dir.path().join("ds");
    assert!(cli(&[
        "simulate",
        "--samples",
        "12",
        "--config",
        path(&config),
        "--out",
        path(&ds)
    ])
    .status
    .success());
    let imported = dir.path().join("imported");
    let out = cli(&[
        "import",
        "--csi",
        path(&ds.join("csi.bin")),
        "--k",
        "16",
        "--n",
        "4",
        "--m",
        "3",
        "--out",
        path(&imported),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for model in ["smi-image", "mmi"] {
        let out = cli(&[
            "train",
            "--dataset",
            path(&imported),
            "--model",
            model,
            "--config",
            path(&config),
            "--out",
            path(&dir.path().join("runs")),
        ]);
        assert_eq!(out.status.code(), Some(2));
        assert!(stderr(&out).contains("modality missing"), "{}", stderr(&out));
    }
    let out = cli(&["emulate-bfm", "--dataset", path(&imported)]);
    assert!(out.status.success());
    assert!(read_manifest(&imported).unwrap().has_bfm);
}

#[test]
fn train_eval_plot_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let ds = dir.path().join("ds");
    let runs = dir.path().join("runs");
    assert!(cli(&[
        "simulate",
        "--samples",
        "40",
        "--config",
        path(&config),
        "--out",
        path(&ds)
    ])
    .status
    .success());

    let out = cli(&[
        "train",
        "--dataset",
        path(&ds),
        "--model",
        "all",
        "--config",
        path(&config),
        "--out",
        path(&runs),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = read_manifest(&ds).unwrap();
    let split = manifest.split.clone().expect("split recorded");
    assert!(manifest.norm_stats.is_some());

    let mut scores = Vec::new();
    for kind in ModelKind::ALL {
        let mut per_seed = Vec::new();
        for seed in [1, 2] {
            let run_dir = runs.join(format!("{}-seed{seed}", kind.slug()));
            let (run, eval) = read_run_dir(&run_dir).unwrap();
            assert_eq!((run.kind, run.seed, run.stop_epoch), (kind, seed, 2));
            assert_eq!(read_split(&run_dir).unwrap(), split);
            assert_eq!(fs::read_to_string(run_dir.join("loss.csv")).unwrap().lines().count(), 3);
            let snapshot: serde_json::Value =
                serde_json::from_slice(&fs::read(run_dir.join("config.json")).unwrap()).unwrap();
            assert_eq!(snapshot["config"]["scene"]["subcarriers"], 16);
            assert_eq!(snapshot["config"]["train"]["max_epochs"], 2);
            per_seed.push((seed, eval.test_rmse));
        }
        scores.push((kind, per_seed));
    }

    let out = cli(&["eval", "--run", path(&runs.join("mmi-seed1")), "--dataset", path(&ds)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let plots = dir.path().join("plots");
    let out = cli(&[
        "plot",
        "--run",
        path(&runs.join("mmi-seed2")),
        "--dataset",
        path(&ds),
        "--element",
        "1,1",
        "--element",
        "4,3",
        "--out",
        path(&plots),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["element_1_1", "element_4_3"] {
        let csv = fs::read_to_string(plots.join(format!("{name}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 17);
        assert!(fs::read_to_string(plots.join(format!("{name}.svg")))
            .unwrap()
            .contains("<polyline"));
    }

    fs::create_dir(runs.join("unfinished")).unwrap();
    let report_dir = dir.path().join("report");
    let out = cli(&["report", "--runs", path(&runs), "--out", path(&report_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("skipping incomplete run"));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains('±')).count(), 3);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(report_dir.join("report.json")).unwrap()).unwrap();
    for (kind, per_seed) in scores {
        let expected = summarize(kind, &per_seed, 4).unwrap();
        let row = report["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["kind"] == kind.slug())
            .unwrap();
        assert_eq!(row["mean"].as_f64().unwrap().to_bits(), expected.mean.to_bits());
        assert_eq!(row["std"].as_f64().unwrap().to_bits(), expected.std.to_bits());
    }
}

#[test]
fn unknown_model_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "train",
        "--dataset",
        path(dir.path()),
        "--model",
        "cnn",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "train",
        "--dataset",
        path(&dir.path().join("nope")),
        "--model",
        "mmi",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
