//! One function per pipeline stage, shared by the subcommands and `run`.
//!
//! Stochastic stages take a stage seed and derive a per-slide stream from it
//! by slide id, so results do not depend on thread count or slide order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use wsi_core::classifier::{extract_color_features, train_baseline, PatchScore, TrainOutcome, TrainParams};
use wsi_core::features::{extract_features, FeatureConfig, FeatureVector, FEATURE_COUNT};
use wsi_core::forest::{assemble_forest, check_training_data, train_tree, ForestConfig, ForestModel};
use wsi_core::heatmap::{assemble_heatmap, Heatmap};
use wsi_core::patch::{
    augment, grid_patches, sample_training_patches, Annotation, PatchRef, SampleOutcome, SamplerConfig,
};
use wsi_core::pyramid::SlideLabel;
use wsi_core::rng::derive_named_seed;
use wsi_core::roi::{tissue_grid, RoiConfig, TissueMask};

use crate::config::FeatureSet;
use crate::error::{Result, WsiError};
use crate::formats::FeatureTable;
use crate::models::ForestFile;
use crate::scoring::{read_patch, score_patches, Scorer};
use crate::store::PyramidSlide;

pub fn compute_mask(slide: &PyramidSlide, roi: &RoiConfig) -> Result<TissueMask> {
    let geometry = slide.geometry();
    let level = roi.resolve_level(geometry)?;
    let img = slide.read_level(level)?;
    let grid = tissue_grid(&img, roi)?;
    Ok(TissueMask::new(slide.slide_id(), geometry, level, grid)?)
}

/// Labeled training patches for one slide; `cfg.rng_seed` is the stage seed.
pub fn sample_slide(
    slide_id: &str,
    label: SlideLabel,
    annotation: Option<&Annotation>,
    mask: &TissueMask,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_named_seed(cfg.rng_seed, slide_id));
    Ok(sample_training_patches(slide_id, label, annotation, mask, cfg, &mut rng)?)
}

/// Color features of labeled patches, optionally augmented, in input order.
///
/// Each patch draws its augmentation from its own stream keyed by
/// `(seed, slide, index)`.
pub fn patch_training_samples(
    slide: &PyramidSlide,
    patches: &[PatchRef],
    cfg: &SamplerConfig,
    augment_seed: Option<u64>,
) -> Result<Vec<(Vec<f64>, bool)>> {
    patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let label = p.label.ok_or_else(|| {
                WsiError::Config(format!("training patch ({}, {}) of {} has no label", p.x, p.y, p.slide_id))
            })?;
            let mut img = read_patch(slide, p)?;
            if let Some(seed) = augment_seed {
                let key = format!("{}/{i}", p.slide_id);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_named_seed(seed, &key));
                img = augment(&img, cfg, &mut rng)?;
            }
            Ok((extract_color_features(&img)?, label.is_tumor()))
        })
        .collect()
}

pub fn fit_baseline(samples: &[(Vec<f64>, bool)], params: &TrainParams) -> Result<TrainOutcome> {
    Ok(train_baseline(samples, params)?)
}

/// Scores every stride-aligned tissue patch of a slide.
pub fn score_slide(
    scorers: &[Scorer],
    slide: &PyramidSlide,
    mask: &TissueMask,
    cfg: &SamplerConfig,
) -> Result<Vec<PatchScore>> {
    let patches = grid_patches(slide.slide_id(), mask, cfg)?;
    score_patches(scorers, slide, &patches)
}

pub fn build_heatmap(slide: &PyramidSlide, scores: &[PatchScore], stride: u64) -> Result<Heatmap> {
    Ok(assemble_heatmap(slide.slide_id(), scores, slide.geometry().dimensions(), stride)?)
}

/// Slide features with the scored cells as the tissue area.
pub fn heatmap_features(hm: &Heatmap, cfg: &FeatureConfig) -> Result<FeatureVector> {
    Ok(extract_features(hm, hm.scored_count(), cfg)?)
}

pub fn feature_table(vectors: &[FeatureVector], cfg: &FeatureConfig) -> FeatureTable {
    FeatureTable {
        names: cfg.slot_names(),
        rows: vectors.iter().map(|v| (v.slide_id.clone(), v.values.clone())).collect(),
    }
}

/// Same result as `wsi_core::forest::train_forest`, with trees fit in parallel.
pub fn fit_forest(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig) -> Result<ForestModel> {
    check_training_data(x, y, cfg)?;
    let fits = (0..cfg.n_trees).into_par_iter().map(|t| train_tree(x, y, cfg, t)).collect();
    Ok(assemble_forest(x, y, cfg, fits))
}

/// Column indices the forest is trained on for a fixed feature set.
pub fn feature_columns(set: FeatureSet, cfg: &FeatureConfig) -> Vec<usize> {
    match set {
        FeatureSet::Top5 => cfg.top5_indices.to_vec(),
        FeatureSet::All | FeatureSet::ImportanceTop5 => (0..FEATURE_COUNT).collect(),
    }
}

/// Trains on the rows of `table` that have labels, in table order.
///
/// With [`FeatureSet::ImportanceTop5`] a first forest on every column ranks
/// the features and a second forest is trained on the five best.
pub fn train_forest_on(
    table: &FeatureTable,
    labels: &dyn Fn(&str) -> Option<SlideLabel>,
    set: FeatureSet,
    features: &FeatureConfig,
    cfg: &ForestConfig,
) -> Result<ForestFile> {
    if table.names.len() != FEATURE_COUNT && set != FeatureSet::All {
        return Err(WsiError::Config(format!(
            "feature set {set:?} needs the full {FEATURE_COUNT}-column table, got {} columns",
            table.names.len()
        )));
    }
    let columns =
        if set == FeatureSet::All { (0..table.names.len()).collect() } else { feature_columns(set, features) };
    let (x, y) = training_rows(table, labels)?;
    let project =
        |cols: &[usize]| -> Vec<Vec<f64>> { x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect() };
    let mut cols = columns;
    let mut model = fit_forest(&project(&cols), &y, cfg)?;
    if set == FeatureSet::ImportanceTop5 {
        cols = model.ranked_features().into_iter().take(5).map(|k| cols[k]).collect();
        model = fit_forest(&project(&cols), &y, cfg)?;
    }
    Ok(ForestFile { feature_names: cols.iter().map(|&c| table.names[c].clone()).collect(), model })
}

fn training_rows(
    table: &FeatureTable,
    labels: &dyn Fn(&str) -> Option<SlideLabel>,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, values) in &table.rows {
        if let Some(label) = labels(id) {
            x.push(values.clone());
            y.push(label.is_tumor());
        }
    }
    if x.is_empty() {
        return Err(WsiError::Config("no labeled slides to train the forest on".into()));
    }
    Ok((x, y))
}

/// Slide probabilities for every row, matching columns by name.
pub fn predict_table(forest: &ForestFile, table: &FeatureTable) -> Result<Vec<(String, f64)>> {
    let cols = forest
        .feature_names
        .iter()
        .map(|n| {
            table
                .names
                .iter()
                .position(|t| t == n)
                .ok_or_else(|| WsiError::Config(format!("feature column {n} missing from table")))
        })
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .map(|(id, v)| {
            let x: Vec<f64> = cols.iter().map(|&c| v[c]).collect();
            Ok((id.clone(), forest.model.predict_proba(&x)?))
        })
        .collect()
}
