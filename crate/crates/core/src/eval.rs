//! Slide-level ROC analysis and lesion-level FROC scoring.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heatmap::{connected_components, threshold_heatmap, Heatmap};
use crate::patch::Annotation;

pub const DEFAULT_FP_RATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_CANDIDATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve over `(score, is_positive)` pairs.
///
/// The trapezoid area is accumulated in integer counts, so it equals the
/// Mann–Whitney statistic (ties count one half) exactly up to the final division.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<RocResult> {
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Data("score is NaN".into()));
    }
    let pos = scores.iter().filter(|s| s.1).count() as u128;
    let neg = scores.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config("ROC needs both positive and negative examples".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < sorted.len() {
        let (tp0, fp0) = (tp, fp);
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp0 + tp);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocResult { points, auc: twice_area as f64 / (2 * pos * neg) as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub slide_id: String,
    /// Level-0 pixel.
    pub x: u64,
    pub y: u64,
    pub confidence: f64,
}

/// One detection per component of `p > t`, at the component's peak cell
/// (topmost-leftmost among equal maxima).
pub fn extract_detections(hm: &Heatmap, t: f64) -> Vec<Detection> {
    connected_components(&threshold_heatmap(hm, t))
        .iter()
        .map(|cells| {
            let mut peak = cells[0];
            let mut best = f64::NEG_INFINITY;
            for &(x, y) in cells {
                let p = hm.get(x, y).unwrap_or(0.0);
                if p > best {
                    best = p;
                    peak = (x, y);
                }
            }
            let (x, y) = hm.cell_center(peak.0, peak.1);
            Detection { slide_id: hm.slide_id.clone(), x, y, confidence: best }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrocResult {
    /// `(average false positives per slide, sensitivity)`, starting at `(0, 0)`.
    pub curve: Vec<(f64, f64)>,
    /// Sensitivity at each requested rate (highest reached at or below it).
    pub sensitivities: Vec<f64>,
    pub score: f64,
}

/// Highest sensitivity on `curve` with average FP count at most `rate`.
pub fn sensitivity_at(curve: &[(f64, f64)], rate: f64) -> f64 {
    curve.iter().filter(|p| p.0 <= rate).map(|p| p.1).fold(0.0, f64::max)
}

/// FROC over all slides in `ground_truth`; each lesion is one polygon.
///
/// A detection inside one or more lesions hits all of them and is never a
/// false positive, even when those lesions were already hit.
pub fn froc(detections: &[Detection], ground_truth: &[Annotation], fp_rates: &[f64]) -> Result<FrocResult> {
    let total_lesions: usize = ground_truth.iter().map(|a| a.polygons.len()).sum();
    if total_lesions == 0 {
        return Err(Error::Config("ground truth contains no lesions".into()));
    }
    if fp_rates.is_empty() || fp_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config("FP rates must be a non-empty list of non-negative numbers".into()));
    }
    let mut offsets = BTreeMap::new();
    let mut next = 0;
    for a in ground_truth {
        if offsets.insert(a.slide_id.as_str(), next).is_some() {
            return Err(Error::Data(format!("slide {} listed twice in ground truth", a.slide_id)));
        }
        next += a.polygons.len();
    }

    // Global lesion ids hit by each detection.
    let mut scored: Vec<(f64, Vec<usize>)> = Vec::with_capacity(detections.len());
    for d in detections {
        if d.confidence.is_nan() {
            return Err(Error::Data(format!("detection on {} has NaN confidence", d.slide_id)));
        }
        let Some(&base) = offsets.get(d.slide_id.as_str()) else {
            return Err(Error::Data(format!("no ground truth for slide {}", d.slide_id)));
        };
        let ann = ground_truth.iter().find(|a| a.slide_id == d.slide_id).expect("indexed above");
        let hits = ann
            .polygons
            .iter()
            .enumerate()
            .filter(|(_, p)| p.contains_pixel(d.x, d.y))
            .map(|(k, _)| base + k)
            .collect();
        scored.push((d.confidence, hits));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let slides = ground_truth.len() as f64;
    let mut hit = vec![false; total_lesions];
    let (mut hit_count, mut fps) = (0usize, 0usize);
    let mut curve = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < scored.len() {
        let c = scored[i].0;
        while i < scored.len() && scored[i].0 == c {
            if scored[i].1.is_empty() {
                fps += 1;
            }
            for &l in &scored[i].1 {
                if !hit[l] {
                    hit[l] = true;
                    hit_count += 1;
                }
            }
            i += 1;
        }
        curve.push((fps as f64 / slides, hit_count as f64 / total_lesions as f64));
    }
    let sensitivities: Vec<f64> = fp_rates.iter().map(|&r| sensitivity_at(&curve, r)).collect();
    let score = sensitivities.iter().sum::<f64>() / sensitivities.len() as f64;
    Ok(FrocResult { curve, sensitivities, score })
}
