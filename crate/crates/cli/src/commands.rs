//! The train / eval / count-params / synth commands.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use fscnet::data::{
    epoch_batches, epoch_order, load_directory, save_png, stratified_split, synth_generate, ImageRecord, LoadOptions,
    SampleTransform, SkipEntry, Source, SplitManifest, SplitPlan,
};
use fscnet::metrics::{compute_metrics, EvalReport};
use fscnet::nn::{count_parameters, ModelConfig, ModelParams, ParamReport};
use fscnet::optim::{early_stop_update, evaluate, train_epoch, EarlyStopState, OptimState};
use fscnet::robustness::{biased_test_composition, PerturbKind, PerturbSpec};
use fscnet::rng::key_of;
use fscnet::SeededRng;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Records plus the split that indexes into them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub skipped: Vec<SkipEntry>,
    pub manifest: SplitManifest,
}

impl Dataset {
    /// Record indices of one split list, in list order.
    pub fn indices(&self, split: &str) -> CliResult<Vec<usize>> {
        let ids = match split {
            "train" => &self.manifest.train,
            "val" => &self.manifest.val,
            "test" => &self.manifest.test,
            other => return Err(CliError::Config(format!("unknown split `{other}` (train, val, test)"))),
        };
        ids.iter()
            .map(|id| {
                self.records
                    .binary_search_by(|r| r.id.as_str().cmp(id))
                    .map_err(|_| CliError::Data(format!("split lists `{id}` but no such image was loaded")))
            })
            .collect()
    }
}

/// Loads (or generates) the records named by `cfg.data`.
pub fn load_records(cfg: &ExperimentConfig) -> CliResult<(Vec<ImageRecord>, Vec<SkipEntry>)> {
    let d = &cfg.data;
    if let Some(n) = d.synthetic_per_class {
        return Ok((synth_generate(n, cfg.train.image_size, d.synthetic_seed)?, Vec::new()));
    }
    let roots: Vec<(&PathBuf, Source)> = d
        .root
        .iter()
        .map(|r| (r, d.source))
        .chain(d.root_ii.iter().map(|r| (r, Source::II)))
        .collect();
    if roots.is_empty() {
        return Err(CliError::Config(
            "no data: set data.root (and optionally data.root_ii) or data.synthetic_per_class".into(),
        ));
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (root, source) in roots {
        let mut options = LoadOptions::new(source);
        options.resize_to = d.resize_on_load.then_some(cfg.train.image_size);
        let outcome = load_directory(root, &options)?;
        records.extend(outcome.records);
        skipped.extend(outcome.skipped);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if records.is_empty() {
        return Err(CliError::Data("no labeled images found".into()));
    }
    Ok((records, skipped))
}

/// Split from `manifest` if given, else computed from the config. The
/// biased test composition is applied on top when the perturbation asks for it.
pub fn prepare_dataset(cfg: &ExperimentConfig, manifest: Option<&Path>) -> CliResult<Dataset> {
    let (records, skipped) = load_records(cfg)?;
    let manifest_path = manifest.map(Path::to_path_buf).or_else(|| cfg.data.manifest.clone());
    let manifest = match manifest_path {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
            SplitManifest::from_text(&text)?
        }
        None => {
            let mut test_per_source = BTreeMap::new();
            if let Some(n) = cfg.data.test_per_source {
                for r in &records {
                    test_per_source.insert(r.source, n);
                }
            }
            let plan = SplitPlan {
                ratios: cfg.data.ratios(),
                test_per_source,
            };
            stratified_split(&records, &plan, cfg.train.seed)?
        }
    };
    let manifest = match &cfg.perturb {
        Some(p) if p.kind == PerturbKind::Bias => {
            let labels: HashMap<String, u8> = records.iter().map(|r| (r.id.clone(), r.label)).collect();
            biased_test_composition(&manifest, &labels, p.bias_positive_fraction, p.bias_test_size, p.seed)?
        }
        _ => manifest,
    };
    manifest.check_disjoint()?;
    let data = Dataset {
        records,
        skipped,
        manifest,
    };
    for split in ["train", "val", "test"] {
        data.indices(split)?;
    }
    Ok(data)
}

/// Pixel-level perturbation to apply when evaluating, if any. The biased
/// composition acts on the split instead.
fn pixel_perturbation(spec: Option<&PerturbSpec>) -> Option<&PerturbSpec> {
    spec.filter(|p| p.kind != PerturbKind::Bias)
}

pub fn evaluate_split(
    model: &mut ModelParams<f32>,
    cfg: &ExperimentConfig,
    data: &Dataset,
    split: &str,
    perturb: Option<&PerturbSpec>,
) -> CliResult<(f64, EvalReport)> {
    let indices = data.indices(split)?;
    if indices.is_empty() {
        return Err(CliError::Data(format!("{split} split is empty")));
    }
    let transform = SampleTransform::eval(&cfg.augment).with_perturbation(pixel_perturbation(perturb));
    let batches = epoch_batches(&data.records, indices, cfg.train.batch_size, transform, cfg.train.seed, 0);
    let outcome = evaluate(model, batches, cfg.metrics.threshold)?;
    Ok((outcome.mean_loss, compute_metrics(outcome.matrix, cfg.metrics.threshold)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    TargetAccuracy,
    MaxEpochs,
}

impl StopReason {
    fn as_str(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::TargetAccuracy => "target_val_accuracy",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: EvalReport,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub seconds: f64,
    pub out_dir: PathBuf,
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Full training run: writes `config.toml`, `manifest.txt`, `epochs.tsv`,
/// `timing.tsv`, `checkpoint.bin`, `metrics.json` and `report.txt` into
/// `cfg.output.dir`. The best-validation parameters are evaluated on the test split.
pub fn cmd_train(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> CliResult<TrainSummary> {
    let start = Instant::now();
    let cfg = cfg.clone().resolved()?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("config.toml"), &cfg.to_toml())?;

    let data = prepare_dataset(&cfg, None)?;
    write(&out.join("manifest.txt"), &data.manifest.to_text()?)?;
    for s in &data.skipped {
        log(&format!("skipped {}: {}", s.path.display(), s.reason));
    }
    let train_idx = data.indices("train")?;
    let val_idx = data.indices("val")?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(CliError::Data("train and val splits must both be non-empty".into()));
    }
    log(&format!(
        "data: {} train, {} val, {} test",
        train_idx.len(),
        val_idx.len(),
        data.manifest.test.len()
    ));

    let t = &cfg.train;
    let root = SeededRng::new(t.seed);
    let mut model = ModelParams::<f32>::new(cfg.model, &mut root.derive(key_of("init")))?;
    let mut dropout_rng = root.derive(key_of("dropout"));
    let mut optim = OptimState::new(&model, t.learning_rate)?;
    let mut early: EarlyStopState<(ModelParams<f32>, OptimState<f32>)> = EarlyStopState::new(t.patience);

    // training inputs are perturbed only on request; validation follows the
    // training distribution
    let train_perturb = cfg.perturb.as_ref().filter(|p| p.apply_in_training);
    let train_transform = SampleTransform::train(&cfg.augment).with_perturbation(pixel_perturbation(train_perturb));

    let mut epochs = String::from("epoch\ttrain_loss\tval_loss\tval_accuracy\n");
    let mut timing = String::from("epoch\tseconds\n");
    let mut stop = StopReason::MaxEpochs;
    let mut epochs_run = 0;
    for epoch in 0..t.max_epochs {
        let epoch_start = Instant::now();
        let order: Vec<usize> = epoch_order(train_idx.len(), t.seed, epoch as u64)
            .into_iter()
            .map(|i| train_idx[i])
            .collect();
        let batches = epoch_batches(&data.records, order, t.batch_size, train_transform, t.seed, epoch as u64);
        let stats = train_epoch(&mut model, batches, t, &mut optim, &mut dropout_rng)?;
        let (val_loss, val) = evaluate_split(&mut model, &cfg, &data, "val", train_perturb)?;
        epochs_run = epoch + 1;

        writeln!(epochs, "{epoch}\t{:.6}\t{val_loss:.6}\t{:.6}", stats.mean_loss, val.accuracy).unwrap();
        writeln!(timing, "{epoch}\t{:.3}", epoch_start.elapsed().as_secs_f64()).unwrap();
        write(&out.join("epochs.tsv"), &epochs)?;
        write(&out.join("timing.tsv"), &timing)?;
        log(&format!(
            "epoch {epoch}: train loss {:.4}, val loss {val_loss:.4}, val acc {:.4}, {} steps, {:.1}s",
            stats.mean_loss,
            val.accuracy,
            stats.optimizer_steps(),
            epoch_start.elapsed().as_secs_f64()
        ));

        let snapshot = (model.clone(), optim.clone());
        if early_stop_update(&mut early, val_loss, &snapshot) {
            stop = StopReason::Patience;
            break;
        }
        if t.target_val_accuracy.is_some_and(|target| val.accuracy >= target) {
            stop = StopReason::TargetAccuracy;
            break;
        }
    }

    let (mut best_model, best_optim) = early.best_checkpoint.clone().unwrap_or((model, optim));
    let test_perturb = cfg.perturb.as_ref();
    let (_, report) = evaluate_split(&mut best_model, &cfg, &data, "test", test_perturb)?;

    Checkpoint {
        config: cfg.clone(),
        best_val_loss: early.best_val_loss,
        best_epoch: early.best_epoch.map(|e| e as u64),
        model: best_model.clone(),
        optim: Some(best_optim),
    }
    .save(&out.join("checkpoint.bin"))?;

    let params = count_parameters(&best_model);
    let metrics = serde_json::json!({
        "split": "test",
        "report": report,
        "perturbation": cfg.perturb,
        "epochs_run": epochs_run,
        "best_epoch": early.best_epoch,
        "best_val_loss": early.best_val_loss.is_finite().then_some(early.best_val_loss),
        "stop_reason": stop.as_str(),
        "parameters": params.total,
        "split_sizes": {
            "train": data.manifest.train.len(),
            "val": data.manifest.val.len(),
            "test": data.manifest.test.len(),
        },
    });
    write(
        &out.join("metrics.json"),
        &(serde_json::to_string_pretty(&metrics).expect("plain data") + "\n"),
    )?;
    write(&out.join("report.txt"), &format!("test metrics\n{report}\n\nparameters\n{params}\n"))?;

    Ok(TrainSummary {
        report,
        epochs_run,
        best_epoch: early.best_epoch,
        best_val_loss: early.best_val_loss,
        stop,
        seconds: start.elapsed().as_secs_f64(),
        out_dir: out,
    })
}

/// Evaluates a saved checkpoint. The config comes from the checkpoint with
/// `overrides` applied; the split defaults to `manifest.txt` next to the
/// checkpoint when that file exists.
pub fn cmd_eval(
    checkpoint: &Path,
    overrides: &[String],
    split: &str,
    perturb: Option<PerturbSpec>,
) -> CliResult<EvalRecord> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = ckpt.config.with_overrides(overrides.iter().map(String::as_str))?;
    if perturb.is_some() {
        cfg.perturb = perturb;
    }
    let sibling = checkpoint.with_file_name("manifest.txt");
    let manifest = (cfg.data.manifest.is_none() && sibling.is_file()).then_some(sibling);
    let data = prepare_dataset(&cfg, manifest.as_deref())?;
    let mut model = ckpt.model;
    let (loss, report) = evaluate_split(&mut model, &cfg, &data, split, cfg.perturb.as_ref())?;
    Ok(EvalRecord {
        split: split.to_string(),
        samples: data.indices(split)?.len(),
        mean_loss: loss,
        perturbation: cfg.perturb,
        report,
    })
}

/// Metrics of one evaluation together with what was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub split: String,
    pub samples: usize,
    pub mean_loss: f64,
    pub perturbation: Option<PerturbSpec>,
    pub report: EvalReport,
}

impl EvalRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

pub fn cmd_count_params(model: ModelConfig) -> CliResult<ParamReport> {
    let params = ModelParams::<f32>::new(model, &mut SeededRng::new(0))?;
    Ok(count_parameters(&params))
}

/// Writes a synthetic dataset as flat `y00000.png` / `no00000.png` files.
pub fn cmd_synth(out: &Path, per_class: usize, size: usize, seed: u64) -> CliResult<usize> {
    let records = synth_generate(per_class, size, seed)?;
    fs::create_dir_all(out)?;
    for r in &records {
        let name = r.id.rsplit('/').next().unwrap_or(&r.id);
        save_png(&r.pixels, &out.join(format!("{name}.png")))?;
    }
    Ok(records.len())
}
