//! Average precision for classification, pin-pointing and extent.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::backproject::{detect_on_cam, pinpoint_from_cam, BackprojectConfig, Detection, PixelBox};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::net::Model;

/// Intersection over union of two half-open boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let ih = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = (iw * ih) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Classification,
    Pinpoint,
    Extent,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Classification, Task::Pinpoint, Task::Extent];

    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Pinpoint => "pinpoint",
            Task::Extent => "extent",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "classification" => Ok(Task::Classification),
            "pinpoint" | "pin-pointing" => Ok(Task::Pinpoint),
            "extent" => Ok(Task::Extent),
            other => Err(Error::config(format!(
                "unknown task {other:?} (expected classification, pinpoint or extent)"
            ))),
        }
    }
}

/// One ranked prediction: its score and whether it counts as a hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: usize,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(precision, recall)` after each ranked prediction.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// Ranking order: score descending, then sample id ascending. The sort is
/// stable, so records of one sample keep their input order.
fn rank(records: &mut [PredictionRecord]) {
    records.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sample_id.cmp(&b.sample_id)));
}

/// All-points average precision with the precision envelope.
pub fn average_precision(records: &[PredictionRecord], positives: usize) -> Result<PrCurve> {
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let mut ranked = records.to_vec();
    rank(&mut ranked);
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (i, r) in ranked.iter().enumerate() {
        if r.correct {
            tp += 1;
        }
        points.push((tp as f64 / (i + 1) as f64, tp as f64 / positives as f64));
    }
    if tp > positives {
        return Err(Error::config(format!("{tp} hits exceed {positives} positives")));
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.0).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(_, recall)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    Ok(PrCurve { points, ap })
}

/// Everything the three tasks need from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub sample_id: usize,
    pub pooled: f64,
    pub cam_max: f64,
    pub point: (f64, f64),
    pub detections: Vec<Detection>,
}

pub fn sample_output(model: &Model, sample: &Sample, cfg: &BackprojectConfig) -> Result<SampleOutput> {
    let cam = model.cam(&sample.image())?;
    let layers = model.config.geometries_cam_to_input();
    let image = (model.config.input.2, model.config.input.1);
    Ok(SampleOutput {
        sample_id: sample.id,
        pooled: model.pooled(&cam)? as f64,
        cam_max: cam.max_value() as f64,
        point: pinpoint_from_cam(&cam, &layers, image)?,
        detections: detect_on_cam(model, &cam, cfg)?,
    })
}

/// Runs the model once per sample, in parallel, preserving sample order.
pub fn sample_outputs(model: &Model, samples: &[Sample], cfg: &BackprojectConfig) -> Result<Vec<SampleOutput>> {
    samples.par_iter().map(|s| sample_output(model, s, cfg)).collect()
}

fn positives(samples: &[Sample]) -> usize {
    samples.iter().filter(|s| s.label == 1).count()
}

fn check_aligned(samples: &[Sample], outputs: &[SampleOutput]) -> Result<()> {
    if samples.len() != outputs.len() || samples.iter().zip(outputs).any(|(s, o)| s.id != o.sample_id) {
        return Err(Error::config("model outputs are not aligned with the samples"));
    }
    Ok(())
}

/// Score is the pooled CAM value; label 1 is a hit.
pub fn classification_curve(samples: &[Sample], outputs: &[SampleOutput]) -> Result<PrCurve> {
    check_aligned(samples, outputs)?;
    let recs: Vec<_> = samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| PredictionRecord {
            sample_id: s.id,
            score: o.pooled,
            correct: s.label == 1,
        })
        .collect();
    average_precision(&recs, positives(samples))
}

/// One point per image scored by the CAM maximum; a hit when the image is
/// positive and the point lies in its ground-truth box.
pub fn pinpoint_curve(samples: &[Sample], outputs: &[SampleOutput]) -> Result<PrCurve> {
    check_aligned(samples, outputs)?;
    let recs: Vec<_> = samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| PredictionRecord {
            sample_id: s.id,
            score: o.cam_max,
            correct: s.label == 1 && s.gt_box.contains(o.point.0, o.point.1),
        })
        .collect();
    average_precision(&recs, positives(samples))
}

/// Detections matched greedily in global ranking order: a detection is a hit
/// if it overlaps a still unmatched ground-truth box of its image with IoU of
/// at least 0.5. Later detections on a matched box are misses.
pub fn extent_curve(samples: &[Sample], outputs: &[SampleOutput]) -> Result<PrCurve> {
    check_aligned(samples, outputs)?;
    let mut order: Vec<(usize, usize, f64)> = Vec::new();
    for (si, o) in outputs.iter().enumerate() {
        for (di, d) in o.detections.iter().enumerate() {
            order.push((si, di, d.score));
        }
    }
    order.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(samples[a.0].id.cmp(&samples[b.0].id))
            .then(a.1.cmp(&b.1))
    });
    let mut matched = vec![false; samples.len()];
    let mut recs = Vec::with_capacity(order.len());
    for (si, di, score) in order {
        let s = &samples[si];
        let d = &outputs[si].detections[di];
        let hit = s.label == 1 && !matched[si] && iou(&d.bbox, &s.gt_box) >= 0.5;
        if hit {
            matched[si] = true;
        }
        recs.push(PredictionRecord {
            sample_id: s.id,
            score,
            correct: hit,
        });
    }
    average_precision(&recs, positives(samples))
}

pub fn curve_for(task: Task, samples: &[Sample], outputs: &[SampleOutput]) -> Result<PrCurve> {
    match task {
        Task::Classification => classification_curve(samples, outputs),
        Task::Pinpoint => pinpoint_curve(samples, outputs),
        Task::Extent => extent_curve(samples, outputs),
    }
}

pub fn eval_classification(model: &Model, samples: &[Sample]) -> Result<PrCurve> {
    classification_curve(samples, &sample_outputs(model, samples, &BackprojectConfig::default())?)
}

pub fn eval_pinpoint(model: &Model, samples: &[Sample]) -> Result<PrCurve> {
    pinpoint_curve(samples, &sample_outputs(model, samples, &BackprojectConfig::default())?)
}

pub fn eval_extent(model: &Model, samples: &[Sample], cfg: &BackprojectConfig) -> Result<PrCurve> {
    extent_curve(samples, &sample_outputs(model, samples, cfg)?)
}

/// AP per task, in the order requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub entries: Vec<(Task, f64)>,
}

impl Metrics {
    pub fn get(&self, task: Task) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == task).map(|e| e.1)
    }

    /// `task=<name> ap=<value>` lines, AP in `[0, 1]` with six decimals.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(t, ap)| format!("task={t} ap={ap:.6}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| l.starts_with("task=")) {
            let bad = || Error::format(format!("bad metrics line {line:?}"));
            let mut parts = line.split_whitespace();
            let task = parts.next().and_then(|p| p.strip_prefix("task=")).ok_or_else(bad)?;
            let ap = parts.next().and_then(|p| p.strip_prefix("ap=")).ok_or_else(bad)?;
            entries.push((task.parse()?, ap.parse().map_err(|_| bad())?));
        }
        Ok(Self { entries })
    }
}

pub fn evaluate(model: &Model, samples: &[Sample], tasks: &[Task], cfg: &BackprojectConfig) -> Result<Metrics> {
    let outputs = sample_outputs(model, samples, cfg)?;
    let mut entries = Vec::new();
    for &t in tasks {
        entries.push((t, curve_for(t, samples, &outputs)?.ap));
    }
    Ok(Metrics { entries })
}
