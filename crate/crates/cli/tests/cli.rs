use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fscnet::data::{load_directory, LoadOptions, Source};

fn fscnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fscnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, per_class: usize, seed: u64) {
    stdout(&fscnet(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--per-class",
        &per_class.to_string(),
        "--size",
        "16",
        "--seed",
        &seed.to_string(),
    ]));
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_seeded_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, 10, 3);
    synth(&b, 10, 3);
    synth(&c, 10, 4);
    let fa = sorted_files(&a);
    assert_eq!(fa.len(), 20);
    assert_eq!(fa, sorted_files(&b));
    assert_ne!(fa, sorted_files(&c));

    let loaded = load_directory(&a, &LoadOptions::new(Source::I)).unwrap();
    assert!(loaded.skipped.is_empty());
    let positives = loaded.records.iter().filter(|r| r.label == 1).count();
    assert_eq!((positives, loaded.records.len() - positives), (10, 10));
    assert!(loaded.records.iter().all(|r| r.pixels.shape() == [3, 16, 16]));
}

#[test]
fn count_params_table() {
    let text = stdout(&fscnet(&["count-params"]));
    assert!(text.lines().any(|l| l.split_whitespace().eq(["total", "282065"])), "{text}");
    assert!(text.lines().any(|l| l.split_whitespace().eq(["classifier", "129"])));
    let two = stdout(&fscnet(&["count-params", "--num-classes", "2"]));
    assert!(two.lines().any(|l| l.split_whitespace().eq(["total", "282194"])), "{two}");
}

#[test]
fn exit_codes() {
    let bad_recipe = fscnet(&["train", "--recipe", "nope"]);
    assert_eq!(bad_recipe.status.code(), Some(1));
    let bad_key = fscnet(&["train", "--recipe", "smoke", "--set", "train.nope=1", "--dry-run"]);
    assert_eq!(bad_key.status.code(), Some(1));
    let no_data = fscnet(&["train", "--set", "data.root=\"/nonexistent/fscnet-data\""]);
    assert_eq!(no_data.status.code(), Some(2), "{}", String::from_utf8_lossy(&no_data.stderr));
    let no_ckpt = fscnet(&["eval", "--checkpoint", "/nonexistent/checkpoint.bin"]);
    assert_eq!(no_ckpt.status.code(), Some(2));
}

#[test]
fn dry_run_prints_resolved_config() {
    let text = stdout(&fscnet(&["train", "--recipe", "desk", "--set", "train.batch_size=8", "--dry-run"]));
    let value: toml::Table = text.parse().unwrap();
    assert_eq!(value["train"]["batch_size"].as_integer(), Some(8));
    assert_eq!(value["data"]["synthetic_per_class"].as_integer(), Some(1000));
}

#[test]
fn train_then_eval_from_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, 10, 1);
    let root = format!("data.root={:?}", data.to_str().unwrap());
    let text = stdout(&fscnet(&[
        "train",
        "--out",
        run.to_str().unwrap(),
        "--set",
        &root,
        "--set",
        "train.image_size=16",
        "--set",
        "model.dim=8",
        "--set",
        "train.max_epochs=1",
        "--set",
        "train.batch_size=4",
    ]));
    assert!(text.contains("epochs 1"), "{text}");
    for artifact in ["config.toml", "manifest.txt", "epochs.tsv", "timing.tsv", "checkpoint.bin", "metrics.json", "report.txt"] {
        assert!(run.join(artifact).is_file(), "missing {artifact}");
    }
    let epochs = fs::read_to_string(run.join("epochs.tsv")).unwrap();
    assert_eq!(epochs.lines().count(), 2);

    let ckpt = run.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let clean = stdout(&fscnet(&["eval", "--checkpoint", ckpt]));
    assert_eq!(clean, stdout(&fscnet(&["eval", "--checkpoint", ckpt])));
    let clean_json: serde_json::Value = serde_json::from_str(&clean).unwrap();
    assert_eq!(clean_json["split"], "test");
    assert_eq!(clean_json["samples"], 2);
    assert!(clean_json["perturbation"].is_null());

    let zero_noise = stdout(&fscnet(&[
        "eval",
        "--checkpoint",
        ckpt,
        "--set",
        "perturb.kind=\"noise\"",
        "--set",
        "perturb.noise_std=0.0",
    ]));
    let zero_json: serde_json::Value = serde_json::from_str(&zero_noise).unwrap();
    assert_eq!(zero_json["report"], clean_json["report"]);
    assert_eq!(zero_json["mean_loss"], clean_json["mean_loss"]);

    let occluded = stdout(&fscnet(&["eval", "--checkpoint", ckpt, "--perturb", "occlusion", "--split", "val"]));
    let occ_json: serde_json::Value = serde_json::from_str(&occluded).unwrap();
    assert_eq!(occ_json["split"], "val");
    assert_eq!(occ_json["perturbation"]["kind"], "occlusion");
    assert_eq!(occ_json["perturbation"]["occlusion_fraction"], 0.1);
}
