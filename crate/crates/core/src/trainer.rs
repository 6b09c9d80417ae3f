//! Training loop and evaluation.
//!
//! Each epoch shuffles all photos and walks them in batches. A step records
//! one graph holding every photo of the batch, sums the objective, back-
//! propagates and applies one Adam update. Every term is logged as
//! `step<TAB>term<TAB>value`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::Image;
use crate::config::FlatConfig;
use crate::context::{Model, ModelConfig};
use crate::data::{load_manifest, GroupManifest, LoadedPhoto};
use crate::error::{Error, IoContext, Result};
use crate::losses::{build_affinity, total_loss_graph, AffinityMap, GroupStats, LossBreakdown, LossWeights, Mask, PhotoLossVars};
use crate::metrics::{EvalMode, EvalReport, PhotoMetrics};
use crate::tensor::{Adam, AdamConfig, Graph};

/// Name of the checkpoint written at the end of training.
pub const FINAL_CHECKPOINT: &str = "model.lfck";
pub const LOSS_LOG: &str = "loss.tsv";
const LOCK_FILE: &str = "train.lock";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub seed: u64,
    /// Write `epoch_<n>.lfck` every this many epochs; 0 writes only the final
    /// checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr: 1e-4,
            weights: LossWeights::default(),
            model: ModelConfig::full(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Three 9-bin LUTs and batches of four.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 4,
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    /// Starts from the profile named by `profile` (`full` or `desk`) and
    /// applies the remaining keys.
    pub fn from_config(mut c: FlatConfig) -> Result<Self> {
        let mut profile = String::from("full");
        c.take("profile", &mut profile)?;
        let mut t = match profile.as_str() {
            "full" => Self::default(),
            "desk" => Self::desk(),
            other => return Err(Error::Invalid(format!("unknown profile `{other}`"))),
        };
        c.take("epochs", &mut t.epochs)?;
        c.take("batch_size", &mut t.batch_size)?;
        c.take("lr", &mut t.lr)?;
        c.take("seed", &mut t.seed)?;
        c.take("checkpoint_every", &mut t.checkpoint_every)?;
        let w = &mut t.weights;
        c.take("lambda_smooth", &mut w.lambda_smooth)?;
        c.take("lambda_mono", &mut w.lambda_mono)?;
        c.take("lambda_gam", &mut w.lambda_gam)?;
        c.take("mse", &mut w.mse)?;
        c.take("smooth", &mut w.smooth)?;
        c.take("mono", &mut w.mono)?;
        c.take("edge", &mut w.edge)?;
        c.take("gam", &mut w.gam)?;
        let m = &mut t.model;
        c.take("luts", &mut m.luts)?;
        c.take("lut_dim", &mut m.lut_dim)?;
        c.take("k", &mut m.k)?;
        c.take("ctx_channels", &mut m.ctx_channels)?;
        c.take("vox_channels", &mut m.vox_channels)?;
        c.finish()?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if self.batch_size == 0 || !(self.lr > 0.0) || self.model.luts == 0 || self.model.lut_dim < 2 || self.model.k.is_multiple_of(2) {
            return Err(Error::Invalid(
                "batch size, learning rate and LUT count must be positive, LUT dim at least 2, k odd".into(),
            ));
        }
        if [w.lambda_smooth, w.lambda_mono, w.lambda_gam].iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Invalid("loss coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training photo with everything the objective needs precomputed.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub photo_id: String,
    pub group_id: String,
    pub input: Image,
    pub target: Image,
    pub mask: Mask,
    pub affinity: AffinityMap,
    /// Target statistics of the other photos in the group.
    pub others: Vec<GroupStats>,
}

/// Mean a*/b* of every target by group id, photos in id order.
pub fn precompute_group_stats(manifest: &GroupManifest) -> Result<BTreeMap<String, Vec<GroupStats>>> {
    let mut groups: BTreeMap<String, Vec<GroupStats>> = BTreeMap::new();
    for r in manifest.records() {
        let stats = GroupStats::of(&r.photo_id, &r.group_id, &crate::data::read_image(&r.target)?)?;
        groups.entry(r.group_id.clone()).or_default().push(stats);
    }
    Ok(groups)
}

/// Builds samples from loaded photos; group statistics come from their targets.
pub fn prepare_samples(photos: Vec<LoadedPhoto>, k: usize) -> Result<Vec<TrainSample>> {
    let stats = photos
        .iter()
        .map(|p| GroupStats::of(&p.record.photo_id, &p.record.group_id, &p.target))
        .collect::<Result<Vec<_>>>()?;
    photos
        .into_iter()
        .map(|p| {
            let others = stats
                .iter()
                .filter(|s| s.group_id == p.record.group_id && s.photo_id != p.record.photo_id)
                .cloned()
                .collect();
            Ok(TrainSample {
                affinity: build_affinity(&p.mask, k)?,
                photo_id: p.record.photo_id,
                group_id: p.record.group_id,
                input: p.input,
                target: p.target,
                mask: p.mask,
                others,
            })
        })
        .collect()
}

pub fn load_samples(manifest: &GroupManifest, k: usize) -> Result<Vec<TrainSample>> {
    let photos = manifest.records().iter().map(LoadedPhoto::load).collect::<Result<Vec<_>>>()?;
    prepare_samples(photos, k)
}

/// Where training output goes.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    /// Directory for checkpoints and the loss log; nothing is written when
    /// absent.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    /// `(step, term, value)` in logging order.
    pub log: Vec<(usize, &'static str, f64)>,
    pub last: Option<LossBreakdown>,
}

impl TrainReport {
    /// The loss log as `step<TAB>term<TAB>value` lines.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for (step, term, v) in &self.log {
            s.push_str(&format!("{step}\t{term}\t{v:.9e}\n"));
        }
        s
    }

    /// Values of one term by step.
    pub fn series(&self, term: &str) -> Vec<f64> {
        self.log.iter().filter(|e| e.1 == term).map(|e| e.2).collect()
    }
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Invalid(format!("{} exists: another training run owns this directory", path.display()))
            } else {
                Error::Io { path: path.clone(), source: e }
            }
        })?;
        Ok(Lock(path))
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// One optimisation step over `batch`; returns the per-term values.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&TrainSample],
    weights: &LossWeights,
    step: usize,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let mut forwards = Vec::with_capacity(batch.len());
    for s in batch {
        forwards.push(model.forward(&mut g, &s.input)?);
    }
    let photos: Vec<PhotoLossVars> = batch
        .iter()
        .zip(&forwards)
        .map(|(s, f)| PhotoLossVars {
            output: f.output,
            attention: f.lam.attention,
            target: &s.target,
            affinity: Some(&s.affinity),
            group_others: &s.others,
        })
        .collect();
    let luts = forwards.first().map(|f| f.luts.clone()).unwrap_or_default();
    let (total, terms) = total_loss_graph(&mut g, &photos, &luts, weights)?;
    for (term, v) in terms.named() {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term, step });
        }
    }
    g.backward(total)?;
    model.store_mut().zero_grads();
    model.store_mut().accumulate_grads(&g);
    adam.step(model.store_mut())?;
    Ok(terms)
}

/// Trains `model` in place on `samples`.
pub fn train_model(model: &mut Model, samples: &[TrainSample], config: &TrainConfig, out: &TrainOutput) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("training needs at least one photo".into()));
    }
    let _lock = match &out.dir {
        Some(dir) => {
            fs::create_dir_all(dir).at(dir)?;
            Some(Lock::acquire(dir)?)
        }
        None => None,
    };
    let mut log_file = match &out.dir {
        Some(dir) => {
            let path = dir.join(LOSS_LOG);
            Some((BufWriter::new(File::create(&path).at(&path)?), path))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut report = TrainReport {
        steps: 0,
        log: Vec::new(),
        last: None,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            report.steps += 1;
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let terms = train_step(model, &mut adam, &batch, &config.weights, report.steps)?;
            for (term, v) in terms.named() {
                report.log.push((report.steps, term, v));
                if let Some((w, path)) = log_file.as_mut() {
                    writeln!(w, "{}\t{term}\t{v:.9e}", report.steps).at(&*path)?;
                }
            }
            report.last = Some(terms);
        }
        if let Some(dir) = &out.dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                model.save(dir.join(format!("epoch_{:04}.lfck", epoch + 1)))?;
            }
        }
    }
    if let Some((mut w, path)) = log_file {
        w.flush().at(&path)?;
    }
    if let Some(dir) = &out.dir {
        model.save(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(report)
}

/// Identity-initialises a model from `config.seed` and trains it on the
/// photos of `manifest`, writing checkpoints and the loss log to `out_dir`.
pub fn train(config: &TrainConfig, manifest: &GroupManifest, out_dir: impl AsRef<Path>) -> Result<(Model, TrainReport)> {
    if manifest.is_empty() {
        return Err(Error::Invalid("training manifest is empty".into()));
    }
    let samples = load_samples(manifest, config.model.k)?;
    let mut model = Model::new(config.model, config.seed)?;
    let out = TrainOutput {
        dir: Some(out_dir.as_ref().to_path_buf()),
    };
    let report = train_model(&mut model, &samples, config, &out)?;
    Ok((model, report))
}

/// Scores `model` on every photo of `manifest`.
pub fn evaluate_model(model: &Model, manifest: &GroupManifest, mode: EvalMode) -> Result<EvalReport> {
    let mut photos = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        let p = LoadedPhoto::load(r)?;
        let out = model.retouch(&p.input)?;
        photos.push(PhotoMetrics::measure(&r.photo_id, &r.group_id, &out.image, &p.target, &p.mask, mode)?);
    }
    Ok(EvalReport::new(photos))
}

/// Scores in-memory samples.
pub fn evaluate_samples(model: &Model, samples: &[TrainSample], mode: EvalMode) -> Result<EvalReport> {
    let mut photos = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.retouch(&s.input)?;
        photos.push(PhotoMetrics::measure(&s.photo_id, &s.group_id, &out.image, &s.target, &s.mask, mode)?);
    }
    Ok(EvalReport::new(photos))
}

/// Loads a checkpoint and scores it on a manifest.
pub fn evaluate(checkpoint: impl AsRef<Path>, manifest_path: impl AsRef<Path>, mode: EvalMode) -> Result<EvalReport> {
    let model = Model::load(checkpoint)?;
    evaluate_model(&model, &load_manifest(manifest_path)?, mode)
}
