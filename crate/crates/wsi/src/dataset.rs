//! Writes a synthetic dataset: slides, annotations, tissue truth and manifest.
//!
//! Layout under the output directory:
//! `slides/<id>/`, `annotations/<id>.json`, `tissue/<id>.png` and `dataset.csv`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use wsi_core::roi::{RoiConfig, TissueMask};
use wsi_core::synth::{plan_dataset, plan_slide, DatasetCounts, SlidePlan, SynthConfig};

use crate::error::{Result, WsiError};
use crate::formats::{write_annotation, write_dataset, write_mask, DatasetRow};
use crate::store::{write_slide, WriteParams};

pub const DATASET_FILE: &str = "dataset.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateParams {
    pub synth: SynthConfig,
    pub counts: DatasetCounts,
    pub tile_size: u32,
    /// Level the tissue truth is written at; `None` skips it.
    pub tissue_truth: Option<RoiConfig>,
}

/// Writes one planned slide, its annotation and optionally its tissue truth.
pub fn write_planned_slide(plan: &SlidePlan, params: &GenerateParams, out: &Path) -> Result<PathBuf> {
    let id = &plan.slide_id;
    let slide_dir = out.join("slides").join(id);
    let wp = WriteParams {
        slide_id: id.clone(),
        steps: vec![params.synth.level_step; params.synth.n_levels - 1],
        mpp_level0: params.synth.mpp_level0,
        tile_size: params.tile_size,
        label: Some(plan.label),
    };
    let manifest = write_slide(plan, &wp, &slide_dir)?;
    write_annotation(&out.join("annotations").join(format!("{id}.json")), &plan.annotation())?;
    if let Some(roi) = &params.tissue_truth {
        let geometry = &manifest.geometry;
        let level = roi.resolve_level(geometry)?;
        let info = geometry.level(level)?;
        let grid = plan.tissue_ground_truth(info.width as usize, info.height as usize, info.factor());
        let mask = TissueMask::new(id.clone(), geometry, level, grid)?;
        write_mask(&out.join("tissue").join(format!("{id}.png")), &mask)?;
    }
    Ok(slide_dir)
}

/// Generates every slide in parallel and writes `dataset.csv` last.
pub fn generate_dataset(params: &GenerateParams, seed: u64, out: &Path) -> Result<Vec<DatasetRow>> {
    params.synth.validate()?;
    let entries = plan_dataset(&params.counts, seed)?;
    let rows = entries
        .par_iter()
        .map(|e| {
            plan_slide(&params.synth, &e.slide_id, e.label, e.seed)
                .map_err(WsiError::from)
                .and_then(|plan| write_planned_slide(&plan, params, out))
                .map_err(|err| err.in_stage("synth", &e.slide_id))?;
            Ok(DatasetRow {
                slide_id: e.slide_id.clone(),
                path: Path::new("slides").join(&e.slide_id),
                label: e.label,
                split: e.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&out.join(DATASET_FILE), &rows)?;
    Ok(rows)
}

/// Where [`generate_dataset`] puts the tissue truth of a slide.
pub fn tissue_truth_path(dataset_dir: &Path, slide_id: &str) -> PathBuf {
    dataset_dir.join("tissue").join(format!("{slide_id}.png"))
}
