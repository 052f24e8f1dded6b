mod common;

use std::path::Path;
use std::process::{Command, Output};

use deco_app::checkpoint::Checkpoint;
use deco_app::run;
use deco_core::model::Variant;
use deco_core::Tensor;
use serde_json::Value;

fn deco(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_deco")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "deco {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad line {l:?}: {e}")))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_resume_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    common::write_config(&common::tiny_config(&dir.path().join("unused"), Variant::Deco), &config);

    let straight = dir.path().join("straight");
    deco(&["train", "--config", s(&config), "--out", s(&straight), "--steps", "20"]);
    let split = dir.path().join("split");
    deco(&["train", "--config", s(&config), "--out", s(&split), "--steps", "10"]);
    let ckpt = run::latest_checkpoint(&split);
    deco(&["train", "--config", s(&config), "--out", s(&split), "--steps", "20", "--resume", s(&ckpt)]);

    let a = std::fs::read(run::latest_checkpoint(&straight)).unwrap();
    let b = std::fs::read(run::latest_checkpoint(&split)).unwrap();
    assert!(a == b, "resumed checkpoint differs from the uninterrupted one");

    let metrics = jsonl(&split.join("metrics.jsonl"));
    assert_eq!(metrics.len(), 20);
    for (i, m) in metrics.iter().enumerate() {
        assert_eq!(m["step"].as_u64(), Some(i as u64 + 1));
        for key in ["fm", "freqfm", "total", "wall_time"] {
            assert!(m[key].as_f64().unwrap().is_finite(), "{key}");
        }
    }

    let manifest = jsonl(&split.join("manifest.jsonl"));
    assert_eq!(manifest.len(), 2);
    let last = &manifest[1];
    assert_eq!(last["command"], "train");
    assert_eq!(last["config"]["training"]["steps"], 20);
    assert_eq!(last["config"]["output_dir"], s(&split));
    for art in last["artifacts"].as_array().unwrap() {
        let path = Path::new(art["path"].as_str().unwrap());
        assert_eq!(art["sha256"].as_str().unwrap(), run::sha256_file(path).unwrap());
    }
    // the resolved config in the manifest reproduces the run
    let resolved: deco_app::config::RunConfig = serde_json::from_value(last["config"].clone()).unwrap();
    assert!(resolved.violations().is_empty());
}

#[test]
fn guided_sampling_counts_two_evaluations_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let mut cfg = common::tiny_config(dir.path(), Variant::Deco);
    cfg.training.steps = 2;
    common::write_config(&cfg, &config);
    deco(&["train", "--config", s(&config)]);
    let out = deco(&["sample", "--config", s(&config), "--steps", "100", "--cfg-scale", "3.0", "--dump-features"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("200 model evaluations"));

    let samples = dir.path().join("samples");
    let log = jsonl(&samples.join("sample_log.jsonl"));
    assert_eq!(log[0]["nfe"], 200);
    assert_eq!(log[0]["steps"], 100);
    assert!(samples.join("grid.png").exists());
    let dump = Checkpoint::load(&samples.join("features.bin")).unwrap();
    // one conditional evaluation per step
    assert_eq!(dump.get("features").unwrap().shape, vec![100, 6, 2, 2, 16]);
    assert_eq!(dump.get("velocity").unwrap().shape, vec![100, 6, 8, 8, 3]);

    let maps = dir.path().join("maps");
    deco(&["cluster-features", "--input", s(&samples.join("features.bin")), "--k", "2", "--out", s(&maps)]);
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 4);

    let spectra = dir.path().join("spectra");
    deco(&["analyze-spectrum", "--input", s(&samples.join("features.bin")), "--array", "velocity", "--out", s(&spectra)]);
    let summary = jsonl(&spectra.join("spectrum_summary.jsonl"));
    assert_eq!(summary[0]["blocks"], 100 * 6 * 3);
}

#[test]
fn constant_dump_has_a_dc_only_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let mut dump = Checkpoint::new(0);
    dump.push("features", &Tensor::<f32>::full([3, 2, 16, 8, 4], 0.75));
    let input = dir.path().join("const.bin");
    dump.save(&input).unwrap();
    let out = dir.path().join("spectra");
    deco(&["analyze-spectrum", "--input", s(&input), "--out", s(&out)]);
    let records = jsonl(&out.join("spectrum_const_features.jsonl"));
    assert_eq!(records.len(), 64);
    assert_eq!(records[0]["value"].as_f64(), Some(1.0));
    assert!(records[1..].iter().all(|r| r["value"].as_f64().unwrap().abs() < 1e-12));
    let summary = jsonl(&out.join("spectrum_summary.jsonl"));
    assert_eq!(summary[0]["blocks"], 3 * 2 * 2 * 4);
    assert!(summary[0]["highfreq_fraction"].as_f64().unwrap() < 1e-20);
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(dir.path(), Variant::Deco);
    cfg.data.image_size = 12;
    cfg.training.lr = 0.0;
    cfg.sampling.guidance_interval = [0.9, 0.1];
    cfg.model.dit.heads = 3;
    let config = dir.path().join("bad.toml");
    common::write_config(&cfg, &config);
    let out = Command::new(env!("CARGO_BIN_EXE_deco"))
        .args(["train", "--config", s(&config)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["image_size", "lr", "guidance_interval", "heads"] {
        assert!(err.contains(needle), "missing {needle}:\n{err}");
    }
    assert!(err.lines().filter(|l| l.trim_start().starts_with("- ")).count() >= 4, "{err}");
    assert!(!dir.path().join("metrics.jsonl").exists());
}

#[test]
fn gen_data_writes_the_synthetic_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    common::write_config(&common::tiny_config(dir.path(), Variant::Deco), &config);
    deco(&["gen-data", "--config", s(&config), "--seed", "1"]);
    let set = deco_app::data::load_image_directory(&dir.path().join("data"), 8).unwrap();
    assert_eq!(set.len(), 24);
    assert_eq!(set.num_classes, 3);
    assert_eq!(jsonl(&dir.path().join("manifest.jsonl"))[0]["command"], "gen-data");
}
