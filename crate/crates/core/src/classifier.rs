//! Color-statistics patch classifier and probability ensembling.
//!
//! The baseline is a logistic-regression model over 40 color features: for
//! each of R, G, B and HSV saturation (scaled to `[0, 1]`), the mean, the
//! population standard deviation and an 8-bin normalized histogram. It is a
//! desk-scale stand-in for a convolutional patch classifier; any external
//! model can replace it through the scoring adapter in the `wsi` crate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::color::saturation;
use crate::error::{Error, Result};
use crate::patch::PatchRef;
use crate::raster::RgbImage;

pub const CHANNELS: usize = 4;
pub const HIST_BINS: usize = 8;
pub const BLOCK: usize = 2 + HIST_BINS;
pub const FEATURE_DIM: usize = CHANNELS * BLOCK;
pub const FEATURE_SPEC: &str = "rgbs-mean-std-hist8";

pub fn extract_color_features(img: &RgbImage) -> Result<Vec<f64>> {
    let n = img.width() * img.height();
    if n == 0 {
        return Err(Error::Shape("empty raster".into()));
    }
    let mut sum = [0f64; CHANNELS];
    let mut sum_sq = [0f64; CHANNELS];
    let mut hist = [[0u64; HIST_BINS]; CHANNELS];
    for px in img.pixels() {
        let s = saturation(px);
        let vals = [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0, s];
        for c in 0..3 {
            hist[c][(px[c] >> 5) as usize] += 1;
        }
        hist[3][((s * HIST_BINS as f64) as usize).min(HIST_BINS - 1)] += 1;
        for c in 0..CHANNELS {
            sum[c] += vals[c];
            sum_sq[c] += vals[c] * vals[c];
        }
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for c in 0..CHANNELS {
        let mean = sum[c] / nf;
        let var = (sum_sq[c] / nf - mean * mean).max(0.0);
        out.push(mean);
        out.push(libm::sqrt(var));
        out.extend(hist[c].iter().map(|&h| h as f64 / nf));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub learn_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 300, learn_rate: 2.0, batch_size: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub feature_spec: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_meta: TrainParams,
}

impl BaselineModel {
    pub fn zeroed(params: TrainParams) -> Self {
        Self { feature_spec: FEATURE_SPEC.into(), weights: vec![0.0; FEATURE_DIM], bias: 0.0, train_meta: params }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_spec != FEATURE_SPEC {
            return Err(Error::Config(format!("unknown feature spec {}", self.feature_spec)));
        }
        if self.weights.len() != FEATURE_DIM {
            return Err(Error::Shape(format!("{} weights for {FEATURE_DIM} features", self.weights.len())));
        }
        Ok(())
    }

    pub fn predict_features(&self, features: &[f64]) -> f64 {
        sigmoid(self.logit(features))
    }

    pub fn predict_raster(&self, img: &RgbImage) -> Result<f64> {
        Ok(self.predict_features(&extract_color_features(img)?))
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy, computed from logits for stability.
fn log_loss(model: &BaselineModel, samples: &[(Vec<f64>, bool)]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|(x, y)| {
            let z = model.logit(x);
            // log(1 + e^z) - y z
            let softplus = if z > 0.0 { z + libm::log1p(libm::exp(-z)) } else { libm::log1p(libm::exp(z)) };
            softplus - if *y { z } else { 0.0 }
        })
        .sum();
    total / samples.len() as f64
}

/// Fitted model plus the full-data loss before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: BaselineModel,
    pub loss_trace: Vec<f64>,
}

/// Gradient descent on logistic loss from zero-initialized weights.
///
/// Mini-batch order is drawn from `params.seed`; full-batch training is
/// independent of it.
pub fn train_baseline(samples: &[(Vec<f64>, bool)], params: &TrainParams) -> Result<TrainOutcome> {
    let positives = samples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::Config("training set must contain both classes".into()));
    }
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != FEATURE_DIM) {
        return Err(Error::Shape(format!("{} features, expected {FEATURE_DIM}", x.len())));
    }
    if samples.iter().any(|(x, _)| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite feature".into()));
    }
    if !(params.learn_rate > 0.0) || params.batch_size == Some(0) {
        return Err(Error::Config("learn_rate and batch_size must be positive".into()));
    }

    let mut model = BaselineModel::zeroed(params.clone());
    let mut trace = Vec::with_capacity(params.epochs + 1);
    trace.push(log_loss(&model, samples));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = params.batch_size.unwrap_or(samples.len()).min(samples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut grad = vec![0.0; FEATURE_DIM];

    for _ in 0..params.epochs {
        if params.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &i in chunk {
                let (x, y) = &samples[i];
                let err = sigmoid(model.logit(x)) - if *y { 1.0 } else { 0.0 };
                for (g, v) in grad.iter_mut().zip(x) {
                    *g += err * v;
                }
                grad_b += err;
            }
            let step = params.learn_rate / chunk.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
            model.bias -= step * grad_b;
        }
        trace.push(log_loss(&model, samples));
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScore {
    pub patch: PatchRef,
    pub p_tumor: f64,
    pub model_id: String,
}

pub const ENSEMBLE_MODEL_ID: &str = "ensemble";

/// Unweighted mean of aligned per-patch probabilities.
///
/// Values are summed in sorted order so the result does not depend on the
/// order of the input lists.
pub fn ensemble_scores(lists: &[Vec<PatchScore>]) -> Result<Vec<PatchScore>> {
    let Some(first) = lists.first() else {
        return Err(Error::Alignment("no score lists to ensemble".into()));
    };
    for (k, list) in lists.iter().enumerate().skip(1) {
        if list.len() != first.len() {
            return Err(Error::Alignment(format!("list {k} has {} scores, list 0 has {}", list.len(), first.len())));
        }
        if let Some(i) = (0..first.len()).find(|&i| !list[i].patch.same_footprint(&first[i].patch)) {
            return Err(Error::Alignment(format!("list {k} differs from list 0 at patch {i}")));
        }
    }
    let mut vals = Vec::with_capacity(lists.len());
    Ok((0..first.len())
        .map(|i| {
            vals.clear();
            vals.extend(lists.iter().map(|l| l[i].p_tumor));
            vals.sort_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            PatchScore {
                patch: first[i].patch.clone(),
                p_tumor: mean.clamp(vals[0], vals[vals.len() - 1]),
                model_id: ENSEMBLE_MODEL_ID.into(),
            }
        })
        .collect())
}
