//! Mini-batch training with Adam and best-validation checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mammopos_core::annotations::{parse_annotation, EndpointVector, ViewAnnotation};
use mammopos_core::augmentation::{hflip, rotate_expand};
use mammopos_core::geometry::{distance, Bounds};
use mammopos_core::imaging::{load_image, rescale_point, resample, GrayImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::{log_cosh_loss, loss_gradient};
use crate::net::{Architecture, Model, Params};
use crate::predict::{orient_nipple, prepare_image, target_for};
use crate::PredictorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Random flips and rotations on the training split.
    pub augment: bool,
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
    /// Anneal the learning rate along a half cosine to zero over the run.
    pub cosine_decay: bool,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            learning_rate: 1e-4,
            epochs: 150,
            seed: 0,
            validation_fraction: 0.2,
            augment: true,
            flip_probability: 0.5,
            max_rotation_deg: 15.0,
            cosine_decay: false,
            architecture: Architecture::standard(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_owned()));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) || !(self.max_rotation_deg >= 0.0) {
            return bad("flip probability must be in [0, 1] and rotation non-negative");
        }
        self.architecture.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Mean endpoint distance on the validation split, in input pixels.
    pub val_endpoint_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,val_loss,val_endpoint_error_px\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_endpoint_error));
        }
        s
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// A preprocessed sample: model-sized image and its annotation in that frame.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: GrayImage,
    pub annotation: ViewAnnotation,
}

impl Sample {
    pub fn new(image: &GrayImage, annotation: &ViewAnnotation, side: usize) -> Result<Self, PredictorError> {
        let image = prepare_image(image, side);
        let dims = image.bounds();
        let annotation = annotation.map_points(dims, |p| rescale_point(p, annotation.image_dims, dims))?;
        target_for(&annotation, side)?;
        Ok(Self { image, annotation })
    }

    fn target(&self, side: usize) -> Result<[f64; 8], PredictorError> {
        Ok(target_for(&self.annotation, side)?.0.map(|v| v / side as f64))
    }
}

/// Mean loss and mean endpoint error (input pixels) of `model` on `samples`.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<(f64, f64), PredictorError> {
    let side = model.arch.input_size;
    let (mut loss, mut err) = (0.0, 0.0);
    for s in samples {
        let t = s.target(side)?;
        let out = model.forward(s.image.pixels())?;
        loss += log_cosh_loss(&t, &out);
        let pred = orient_nipple(EndpointVector(out.map(|v| v * side as f64)));
        let truth = EndpointVector(t.map(|v| v * side as f64));
        err += pred.points().iter().zip(truth.points()).map(|(&p, q)| distance(p, q)).sum::<f64>() / 4.0;
    }
    let n = samples.len().max(1) as f64;
    Ok((loss / n, err / n))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn augment(sample: &Sample, cfg: &TrainConfig, rng: &mut ChaCha8Rng, side: usize) -> Result<Sample, PredictorError> {
    let (mut img, mut ann) = (sample.image.clone(), sample.annotation.clone());
    if rng.gen_bool(cfg.flip_probability) {
        (img, ann) = hflip(&img, &ann)?;
    }
    if cfg.max_rotation_deg > 0.0 {
        let angle = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        (img, ann) = rotate_expand(&img, &ann, angle)?;
    }
    let dims = Bounds { width: side as u32, height: side as u32 };
    let resized = resample(&img, dims.width, dims.height);
    let ann = ann.map_points(dims, |p| rescale_point(p, ann.image_dims, dims))?;
    Ok(Sample { image: resized, annotation: ann })
}

/// Trains on native-resolution MLO images and annotations.
///
/// Samples are split into training and validation sets, resampled to the
/// model input, and the training split is augmented every epoch. The
/// returned model holds the parameters of the lowest-validation-loss epoch
/// (training loss when there is no validation split).
pub fn train(dataset: &[(GrayImage, ViewAnnotation)], cfg: &TrainConfig) -> Result<(Model, History), PredictorError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(PredictorError::Dataset("empty dataset".into()));
    }
    if dataset.len() < cfg.batch_size {
        return Err(PredictorError::Dataset(format!("{} samples is less than one batch of {}", dataset.len(), cfg.batch_size)));
    }
    let side = cfg.architecture.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (dataset.len() as f64 * cfg.validation_fraction).round() as usize;
    if dataset.len() - n_val < cfg.batch_size {
        return Err(PredictorError::Dataset("training split is smaller than one batch".into()));
    }
    let prepare = |idx: &[usize]| -> Result<Vec<Sample>, PredictorError> {
        idx.iter().map(|&i| Sample::new(&dataset[i].0, &dataset[i].1, side)).collect()
    };
    let val = prepare(&order[..n_val])?;
    let train_set = prepare(&order[n_val..])?;
    info!("training on {} samples, validating on {}", train_set.len(), val.len());
    train_prepared(&train_set, &val, cfg, &mut rng)
}

/// [`train`] on samples already in the model frame.
pub fn train_prepared(
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, History), PredictorError> {
    let side = cfg.architecture.input_size;
    let mut model = Model::init(cfg.architecture.clone(), rng.gen())?;
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut best: Option<(f64, Params, usize)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.cosine_decay {
            let progress = (epoch - 1) as f64 / cfg.epochs as f64;
            adam.lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        idx.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(cfg.batch_size) {
            let mut grads = Params::zeros(&model.arch);
            for &i in batch {
                let sample = if cfg.augment { augment(&train_set[i], cfg, rng, side)? } else { train_set[i].clone() };
                let target = sample.target(side)?;
                let (out, cache) = model.forward_cached(sample.image.pixels())?;
                epoch_loss += log_cosh_loss(&target, &out);
                let g = loss_gradient(&target, &out);
                let d_out: [f64; 8] = g.try_into().expect("eight outputs");
                model.backward(&cache, &d_out, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grads);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let (val_loss, val_err) = if val.is_empty() {
            (None, None)
        } else {
            let (l, e) = evaluate(&model, val)?;
            (Some(l), Some(e))
        };
        info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} endpoint error {val_err:?}");
        // without a validation split the running training loss stands in
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((score, model.params.clone(), epoch));
        }
        records.push(EpochRecord { epoch, train_loss, val_loss, val_endpoint_error: val_err });
    }
    let (_, params, best_epoch) = best.expect("at least one epoch");
    let model = Model::from_parts(model.arch.clone(), params)?;
    Ok((model, History { epochs: records, best_epoch }))
}

/// Reads a training manifest: one `image annotation` pair per line, paths
/// relative to the manifest's directory; blank lines and `#` comments are skipped.
pub fn read_training_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, PredictorError> {
    let text = fs::read_to_string(path).map_err(|e| PredictorError::Dataset(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(img), Some(ann), None) => pairs.push((base.join(img), base.join(ann))),
            _ => return Err(PredictorError::Dataset(format!("{}:{}: expected `image annotation`", path.display(), n + 1))),
        }
    }
    Ok(pairs)
}

/// Loads every pair named by a training manifest.
pub fn load_training_set(manifest: &Path) -> Result<Vec<(GrayImage, ViewAnnotation)>, PredictorError> {
    read_training_manifest(manifest)?
        .into_iter()
        .map(|(img, ann)| {
            let image = load_image(&img).map_err(|e| PredictorError::Dataset(e.to_string()))?;
            let text = fs::read_to_string(&ann).map_err(|e| PredictorError::Dataset(format!("{}: {e}", ann.display())))?;
            let (annotation, _) = parse_annotation(&text)?;
            Ok((image, annotation))
        })
        .collect()
}
