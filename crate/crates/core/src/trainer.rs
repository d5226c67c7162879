//! Training with image-level labels, best-epoch selection and ratio tuning.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::backproject::{detect_from_cam, BackprojectConfig};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::dataset::{default_mnist_dir, synthesize_range, BalancedBatches, MnistSet, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::{average_precision, extent_curve, PredictionRecord, SampleOutput};
use crate::net::{forward_train, Model, NetConfig};
use crate::nn::{sgd_update, ParamSet};
use crate::pooling::{CamMap, PoolingKind, PoolingName, SpamConfig};
use crate::tensor::Tensor;

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pooling: PoolingName,
    /// Pyramid kernels for SPAM; `None` uses the default pyramid.
    pub spam_kernels: Option<Vec<usize>>,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub ratio_grid: Vec<f64>,
    pub mnist_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pooling: PoolingName::Spam,
            spam_kernels: None,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 15,
            seed: 42,
            train_size: 10_000,
            val_size: 2_000,
            test_size: 2_000,
            ratio_grid: vec![0.0, 0.2, 0.4, 0.5, 0.6, 0.65, 0.7, 0.72, 0.74, 0.76, 0.78, 0.8, 0.82, 0.84, 0.86, 0.88, 0.9],
            mnist_dir: default_mnist_dir(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 2 || self.epochs == 0 || self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return bad("batch_size must be >= 2 and epochs and split sizes >= 1".into());
        }
        if self.ratio_grid.is_empty() {
            return bad("ratio_grid must not be empty".into());
        }
        for &r in &self.ratio_grid {
            BackprojectConfig::new(r)?;
        }
        self.net_config()?;
        Ok(())
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let mut cfg = NetConfig::mnist128(self.pooling);
        if let (PoolingName::Spam, Some(k)) = (self.pooling, &self.spam_kernels) {
            cfg.pooling = PoolingKind::Spam(SpamConfig::new(k.clone())?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: &str| Error::config(format!("config line {}: {why}: {raw:?}", n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            fn num<T: std::str::FromStr>(v: &str, bad: impl Fn(&str) -> Error) -> Result<T> {
                v.parse().map_err(|_| bad("bad value"))
            }
            match k {
                "pooling" => cfg.pooling = v.parse()?,
                "spam_kernels" => {
                    cfg.spam_kernels = Some(v.split(',').map(|x| num(x.trim(), bad)).collect::<Result<_>>()?)
                }
                "lr" => cfg.lr = num(v, bad)?,
                "momentum" => cfg.momentum = num(v, bad)?,
                "batch_size" => cfg.batch_size = num(v, bad)?,
                "epochs" => cfg.epochs = num(v, bad)?,
                "seed" => cfg.seed = num(v, bad)?,
                "train_size" => cfg.train_size = num(v, bad)?,
                "val_size" => cfg.val_size = num(v, bad)?,
                "test_size" => cfg.test_size = num(v, bad)?,
                "ratio_grid" => cfg.ratio_grid = v.split(',').map(|x| num(x.trim(), bad)).collect::<Result<_>>()?,
                "mnist_dir" => cfg.mnist_dir = PathBuf::from(v),
                "checkpoint" => cfg.checkpoint = Some(PathBuf::from(v)),
                _ => return Err(bad("unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pooling = {}", self.pooling);
        if let Some(k) = &self.spam_kernels {
            let k: Vec<String> = k.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "spam_kernels = {}", k.join(","));
        }
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "train_size = {}", self.train_size);
        let _ = writeln!(s, "val_size = {}", self.val_size);
        let _ = writeln!(s, "test_size = {}", self.test_size);
        let g: Vec<String> = self.ratio_grid.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "ratio_grid = {}", g.join(","));
        let _ = writeln!(s, "mnist_dir = {}", self.mnist_dir.display());
        if let Some(p) = &self.checkpoint {
            let _ = writeln!(s, "checkpoint = {}", p.display());
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_text(&text).map_err(|e| e.in_file(path))
    }
}

/// The three synthesized splits. Train and validation come from disjoint
/// digits of the MNIST training file, test from the MNIST test file.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Seed of the test split, kept apart from the training stream.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x7E57_7E57_7E57_7E57
}

impl Splits {
    pub fn build(train_set: &MnistSet, test_set: &MnistSet, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            train: synthesize_range(train_set, cfg.seed, 0, cfg.train_size)?,
            val: synthesize_range(train_set, cfg.seed, cfg.train_size, cfg.val_size)?,
            test: synthesize_range(test_set, test_seed(cfg.seed), 0, cfg.test_size)?,
        })
    }

    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let train = MnistSet::load(&cfg.mnist_dir, Split::Train)?;
        let test = MnistSet::load(&cfg.mnist_dir, Split::Test)?;
        Self::build(&train, &test, cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub val_classification_ap: Vec<f64>,
    /// Zero-based epoch of the saved parameters.
    pub best_epoch: usize,
    pub ratio: f64,
    pub val_extent_ap: f64,
    pub seconds: f64,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, (l, ap)) in self.epoch_loss.iter().zip(&self.val_classification_ap).enumerate() {
            let _ = writeln!(s, "epoch {} loss {l:.6} val_classification_ap {ap:.6}", e + 1);
        }
        let _ = writeln!(s, "best_epoch = {}", self.best_epoch + 1);
        let _ = writeln!(s, "ratio = {}", self.ratio);
        let _ = writeln!(s, "val_extent_ap = {:.6}", self.val_extent_ap);
        s
    }
}

fn pooled_ap(model: &Model, cams: &[CamMap<f32>], samples: &[Sample]) -> Result<f64> {
    let mut recs = Vec::with_capacity(samples.len());
    for (s, cam) in samples.iter().zip(cams) {
        recs.push(PredictionRecord {
            sample_id: s.id,
            score: model.pooled(cam)? as f64,
            correct: s.label == 1,
        });
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    Ok(average_precision(&recs, positives)?.ap)
}

fn cams(model: &Model, samples: &[Sample]) -> Result<Vec<CamMap<f32>>> {
    samples.iter().map(|s| model.cam(&s.image())).collect()
}

/// Runs SGD on balanced batches; keeps the epoch with the best validation
/// classification AP (earliest on ties) and tunes the ratio for it.
pub fn train_on(cfg: &TrainConfig, train: &[Sample], val: &[Sample]) -> Result<(Checkpoint, TrainReport)> {
    train_with_progress(cfg, train, val, |_| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    mut progress: impl FnMut(&str),
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let net = cfg.net_config()?;
    let mut model = Model::init(net.clone(), cfg.seed)?;
    let mut set = ParamSet::new(std::mem::take(&mut model.params.tensors));
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    let mut batches = BalancedBatches::new(&labels, cfg.batch_size, cfg.seed.wrapping_add(1))?;
    let images: Vec<Tensor<f32>> = train.iter().map(Sample::image).collect();
    let inv_b = 1.0 / cfg.batch_size as f32;

    let mut epoch_loss = Vec::new();
    let mut val_aps = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for (bi, batch) in batches.epoch().into_iter().enumerate() {
            let params = crate::net::Params { tensors: set.params.clone() };
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            let mut batch_loss = 0.0f64;
            for &i in &batch {
                let step = forward_train(&net, &params, &images[i], train[i].label).map_err(|e| at(e, epoch, bi))?;
                batch_loss += step.loss as f64;
                match &mut grads {
                    None => grads = Some(step.grads),
                    Some(acc) => acc.iter_mut().zip(&step.grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            grads.iter_mut().for_each(|g| g.scale(inv_b));
            let mean = batch_loss / batch.len() as f64;
            if !mean.is_finite() {
                return Err(Error::numeric(format!("epoch {} batch {}", epoch + 1, bi + 1), format!("mean loss {mean}")));
            }
            sgd_update(&mut set, &grads, cfg.lr as f32, cfg.momentum as f32).map_err(|e| at(e, epoch, bi))?;
            loss_sum += mean;
            steps += 1;
        }
        let mean_loss = loss_sum / steps as f64;
        epoch_loss.push(mean_loss);
        let snapshot = Model::new(net.clone(), crate::net::Params { tensors: set.params.clone() })?;
        let ap = pooled_ap(&snapshot, &cams(&snapshot, val)?, val)?;
        val_aps.push(ap);
        progress(&format!("epoch {} loss {mean_loss:.6} val_classification_ap {ap:.6}", epoch + 1));
        if best.as_ref().is_none_or(|b| ap > b.0) {
            best = Some((ap, epoch, set.params.clone()));
        }
    }
    let (_, best_epoch, tensors) = best.expect("at least one epoch");
    let model = Model::new(net, crate::net::Params { tensors })?;
    let (ratio, val_extent_ap) = tune_ratio_scored(&model, val, &cfg.ratio_grid)?;
    progress(&format!("best epoch {} ratio {ratio} val_extent_ap {val_extent_ap:.6}", best_epoch + 1));
    let meta = CheckpointMeta {
        epoch: best_epoch + 1,
        seed: cfg.seed,
        ratio,
        val_ap: val_aps[best_epoch],
        loss_history: epoch_loss.clone(),
    };
    let ckpt = Checkpoint::new(model, meta);
    if let Some(path) = &cfg.checkpoint {
        ckpt.save(path)?;
    }
    let report = TrainReport {
        epoch_loss,
        val_classification_ap: val_aps,
        best_epoch,
        ratio,
        val_extent_ap,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((ckpt, report))
}

fn at(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { location, detail } => Error::Numeric {
            location: format!("epoch {} batch {}: {location}", epoch + 1, batch + 1),
            detail,
        },
        other => other,
    }
}

/// Loads MNIST, synthesizes the splits and trains.
pub fn train(cfg: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    let splits = Splits::load(cfg)?;
    train_on(cfg, &splits.train, &splits.val)
}

/// Grid value with the best validation extent AP, first on ties.
pub fn tune_ratio(model: &Model, val: &[Sample], grid: &[f64]) -> Result<f64> {
    Ok(tune_ratio_scored(model, val, grid)?.0)
}

pub fn tune_ratio_scored(model: &Model, val: &[Sample], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::config("ratio grid is empty"));
    }
    let cams = cams(model, val)?;
    let t = model.threshold()?;
    let layers = model.config.geometries_cam_to_input();
    let image = (model.config.input.2, model.config.input.1);
    let mut gated = Vec::with_capacity(val.len());
    for cam in &cams {
        gated.push((model.pooled(cam)? as f64) >= t);
    }
    let mut best: Option<(f64, f64)> = None;
    for &r in grid {
        let bp = BackprojectConfig::new(r)?;
        let mut outputs = Vec::with_capacity(val.len());
        for ((s, cam), &pass) in val.iter().zip(&cams).zip(&gated) {
            let detections = if pass { detect_from_cam(cam, t, &layers, image, &bp)? } else { Vec::new() };
            outputs.push(SampleOutput {
                sample_id: s.id,
                pooled: 0.0,
                cam_max: 0.0,
                point: (0.0, 0.0),
                detections,
            });
        }
        let ap = extent_curve(val, &outputs)?.ap;
        if best.is_none_or(|b| ap > b.1) {
            best = Some((r, ap));
        }
    }
    Ok(best.expect("non-empty grid"))
}
