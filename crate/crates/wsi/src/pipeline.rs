//! End-to-end run: mask, sample, train baseline, score, heatmap, features,
//! forest, evaluate.
//!
//! Output layout:
//!
//! ```text
//! masks/<id>.png          tissue masks (+ .json sidecar)
//! patches/train.csv       sampled training patches
//! models/baseline.model   trained baseline, when no scorer is configured
//! scores/<id>.csv         per-patch scores
//! heatmaps/<id>.hm        heatmaps
//! detections.csv          lesion candidates on every slide
//! features.csv            28 features per slide
//! models/forest.model     slide classifier
//! predictions.csv         slide probabilities
//! roc.png, froc.png       curves for the test split
//! report.json             summary, free of paths and timings
//! ```
//!
//! A `.partial` file marks an output directory whose run has not finished.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use wsi_core::eval::{extract_detections, froc, roc_auc, Detection, FrocResult, RocResult};
use wsi_core::features::FeatureVector;
use wsi_core::patch::{Annotation, PatchRef};
use wsi_core::pyramid::SlideLabel;
use wsi_core::rng::derive_named_seed;
use wsi_core::synth::Split;

use crate::config::{PathsSection, PipelineConfig};
use crate::error::{io_at, Result, WsiError};
use crate::formats::{
    find_annotation, read_dataset, write_detections, write_features, write_heatmap, write_mask, write_patches,
    write_predictions, write_rgb_png, write_scores, write_text, DatasetRow, Prediction,
};
use crate::models::{write_baseline, write_forest};
use crate::render::plot_curve;
use crate::scoring::Scorer;
use crate::stages;
use crate::store::PyramidSlide;

pub const PARTIAL_MARKER: &str = ".partial";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub report_version: u32,
    /// SHA-256 of the configuration without its `[paths]` section and worker count.
    pub config_sha256: String,
    pub seed: u64,
    pub slides: SlideCounts,
    pub patches: PatchCounts,
    pub scorers: Vec<String>,
    pub baseline_final_loss: Option<f64>,
    pub forest: ForestSummary,
    pub val: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
    pub predictions: Vec<SlidePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlideCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchCounts {
    pub train_tumor: usize,
    pub train_normal: usize,
    /// Slides whose sampling quota was not met.
    pub shortfall_slides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestSummary {
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
    pub oob_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    /// Slide-level AUC; absent when the split holds a single class.
    pub auc: Option<f64>,
    /// Absent when the split has no annotated lesion.
    pub froc: Option<FrocSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrocSummary {
    pub score: f64,
    pub fp_rates: Vec<f64>,
    pub sensitivities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub split: String,
    pub label: String,
    pub p_tumor: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Hex SHA-256 of the config, ignoring where its files live and how many
/// threads run it, neither of which changes any output.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let mut portable = cfg.clone();
    portable.paths = PathsSection::default();
    portable.worker_count = 1;
    let digest = Sha256::digest(portable.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every stage on a worker pool of `cfg.worker_count` threads.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.paths.output.clone().ok_or_else(|| WsiError::Config("paths.output is not set".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| WsiError::Config(format!("cannot build worker pool: {e}")))?;
    fs::create_dir_all(&out).map_err(io_at(&out))?;
    let marker = out.join(PARTIAL_MARKER);
    write_text(&marker, "run in progress\n")?;
    let report = pool.install(|| Run::new(cfg, &out).and_then(|r| r.execute()))?;
    fs::remove_file(&marker).map_err(io_at(&marker))?;
    Ok(report)
}

struct SlideInput {
    row: DatasetRow,
    annotation: Option<Annotation>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    seed: u64,
    slides: Vec<SlideInput>,
}

fn stage<T>(name: &'static str, slide: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name, slide))
}

fn slide_file(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig, out: &'a Path) -> Result<Self> {
        let seed = cfg.require_seed()?;
        let dataset = cfg.paths.dataset.as_ref().ok_or_else(|| WsiError::Config("paths.dataset is not set".into()))?;
        let rows = read_dataset(dataset)?;
        if rows.is_empty() {
            return Err(WsiError::Config(format!("dataset {} lists no slides", dataset.display())));
        }
        let ann_dir = match &cfg.paths.annotations {
            Some(d) => d.clone(),
            None => dataset.parent().unwrap_or(Path::new("")).join("annotations"),
        };
        let slides = rows
            .into_iter()
            .map(|row| {
                let annotation = stage("load", &row.slide_id, find_annotation(&ann_dir, &row.slide_id))?;
                Ok(SlideInput { row, annotation })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, out, seed, slides })
    }

    fn in_split(&self, split: Split) -> impl Iterator<Item = &SlideInput> {
        self.slides.iter().filter(move |s| s.row.split == split)
    }

    fn execute(self) -> Result<RunReport> {
        let cfg = self.cfg;
        let roi = cfg.roi.to_core();
        let sampler = cfg.sampler.to_core(derive_named_seed(self.seed, "sample"));

        // Masks for every slide.
        let mask_dir = self.out.join("masks");
        let masks = self
            .slides
            .par_iter()
            .map(|s| {
                let id = &s.row.slide_id;
                stage(
                    "mask",
                    id,
                    (|| {
                        let slide = PyramidSlide::open(&s.row.path)?;
                        if slide.slide_id() != id {
                            return Err(WsiError::Config(format!("slide directory holds {}", slide.slide_id())));
                        }
                        let mask = stages::compute_mask(&slide, &roi)?;
                        write_mask(&slide_file(&mask_dir, id, "png"), &mask)?;
                        Ok(mask)
                    })(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mask_of: BTreeMap<&str, usize> =
            self.slides.iter().enumerate().map(|(i, s)| (s.row.slide_id.as_str(), i)).collect();

        // Scorers: configured ones, or a baseline trained on sampled patches.
        let mut patch_counts = PatchCounts { train_tumor: 0, train_normal: 0, shortfall_slides: Vec::new() };
        let mut final_loss = None;
        let scorers = if cfg.paths.models.is_empty() {
            let train: Vec<&SlideInput> = self.in_split(Split::Train).collect();
            let sampled = train
                .par_iter()
                .map(|s| {
                    let id = &s.row.slide_id;
                    let mask = &masks[mask_of[id.as_str()]];
                    stage("sample", id, stages::sample_slide(id, s.row.label, s.annotation.as_ref(), mask, &sampler))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut all_patches: Vec<PatchRef> = Vec::new();
            for (s, o) in train.iter().zip(&sampled) {
                patch_counts.train_tumor += o.tumor_count;
                patch_counts.train_normal += o.normal_count;
                if o.shortfall {
                    patch_counts.shortfall_slides.push(s.row.slide_id.clone());
                }
                all_patches.extend(o.patches.iter().cloned());
            }
            write_patches(&self.out.join("patches").join("train.csv"), &all_patches)?;

            let augment_seed = cfg.baseline.augment.then(|| derive_named_seed(self.seed, "augment"));
            let mut samples = Vec::with_capacity(all_patches.len());
            for (s, o) in train.iter().zip(&sampled) {
                let id = &s.row.slide_id;
                let part = stage(
                    "train-baseline",
                    id,
                    (|| {
                        let slide = PyramidSlide::open(&s.row.path)?;
                        stages::patch_training_samples(&slide, &o.patches, &sampler, augment_seed)
                    })(),
                )?;
                samples.extend(part);
            }
            let params = cfg.baseline.to_core(derive_named_seed(self.seed, "baseline"));
            let outcome = stage("train-baseline", "train split", stages::fit_baseline(&samples, &params))?;
            final_loss = outcome.loss_trace.last().copied();
            write_baseline(&self.out.join("models").join("baseline.model"), &outcome.model)?;
            vec![Scorer::Baseline { id: "baseline".into(), model: outcome.model }]
        } else {
            cfg.paths.models.iter().map(|m| Scorer::from_spec(m)).collect::<Result<Vec<_>>>()?
        };

        // Score, heatmap, detections and features per slide.
        let (score_dir, hm_dir) = (self.out.join("scores"), self.out.join("heatmaps"));
        let feature_cfg = cfg.features.to_core();
        let per_slide = self
            .slides
            .par_iter()
            .zip(&masks)
            .map(|(s, mask)| {
                let id = &s.row.slide_id;
                let slide = stage("score", id, PyramidSlide::open(&s.row.path))?;
                let scores = stage("score", id, stages::score_slide(&scorers, &slide, mask, &sampler))?;
                stage("score", id, write_scores(&slide_file(&score_dir, id, "csv"), &scores))?;
                let hm = stage("heatmap", id, stages::build_heatmap(&slide, &scores, sampler.stride))?;
                stage("heatmap", id, write_heatmap(&slide_file(&hm_dir, id, "hm"), &hm))?;
                let dets = extract_detections(&hm, cfg.eval.candidate_threshold);
                let fv = stage("features", id, stages::heatmap_features(&hm, &feature_cfg))?;
                Ok((dets, fv))
            })
            .collect::<Result<Vec<(Vec<Detection>, FeatureVector)>>>()?;
        let detections: Vec<Detection> = per_slide.iter().flat_map(|(d, _)| d.iter().cloned()).collect();
        write_detections(&self.out.join("detections.csv"), &detections)?;
        let vectors: Vec<FeatureVector> = per_slide.into_iter().map(|(_, f)| f).collect();
        let table = stages::feature_table(&vectors, &feature_cfg);
        write_features(&self.out.join("features.csv"), &table)?;

        // Slide classifier on the training split.
        let train_labels: BTreeMap<&str, SlideLabel> =
            self.in_split(Split::Train).map(|s| (s.row.slide_id.as_str(), s.row.label)).collect();
        let forest_cfg = cfg.forest.to_core(derive_named_seed(self.seed, "forest"));
        let forest = stage(
            "forest",
            "train split",
            stages::train_forest_on(
                &table,
                &|id| train_labels.get(id).copied(),
                cfg.forest.feature_set,
                &feature_cfg,
                &forest_cfg,
            ),
        )?;
        write_forest(&self.out.join("models").join("forest.model"), &forest)?;
        let probs = stage("forest", "all slides", stages::predict_table(&forest, &table))?;
        let preds: Vec<Prediction> =
            probs.iter().map(|(id, p)| Prediction { slide_id: id.clone(), p_tumor: *p }).collect();
        write_predictions(&self.out.join("predictions.csv"), &preds)?;

        // Evaluation.
        let val = self.evaluate(Split::Val, &probs, &detections, false)?;
        let test = self.evaluate(Split::Test, &probs, &detections, cfg.eval.plots)?;

        let count = |split| self.in_split(split).count();
        let report = RunReport {
            report_version: REPORT_VERSION,
            config_sha256: config_hash(cfg),
            seed: self.seed,
            slides: SlideCounts { train: count(Split::Train), val: count(Split::Val), test: count(Split::Test) },
            patches: patch_counts,
            scorers: scorers.iter().map(|s| s.id().to_string()).collect(),
            baseline_final_loss: final_loss,
            forest: ForestSummary {
                feature_names: forest.feature_names.clone(),
                importances: forest.model.importances.clone(),
                oob_error: forest.model.oob_error,
            },
            val,
            test,
            predictions: self
                .slides
                .iter()
                .zip(&probs)
                .map(|(s, (_, p))| SlidePrediction {
                    slide_id: s.row.slide_id.clone(),
                    split: s.row.split.as_str().into(),
                    label: s.row.label.as_str().into(),
                    p_tumor: *p,
                })
                .collect(),
        };
        write_text(&self.out.join(REPORT_FILE), &report.to_json())?;
        Ok(report)
    }

    fn evaluate(
        &self,
        split: Split,
        probs: &[(String, f64)],
        dets: &[Detection],
        plots: bool,
    ) -> Result<Option<SplitMetrics>> {
        let slides: Vec<&SlideInput> = self.in_split(split).collect();
        if slides.is_empty() {
            return Ok(None);
        }
        let p_of: BTreeMap<&str, f64> = probs.iter().map(|(id, p)| (id.as_str(), *p)).collect();
        let scored: Vec<(f64, bool)> =
            slides.iter().map(|s| (p_of[s.row.slide_id.as_str()], s.row.label.is_tumor())).collect();
        let both = scored.iter().any(|s| s.1) && scored.iter().any(|s| !s.1);
        let roc: Option<RocResult> = if both {
            Some(stage("evaluate", split.as_str(), roc_auc(&scored).map_err(WsiError::from))?)
        } else {
            None
        };

        let mut truth = Vec::with_capacity(slides.len());
        for s in &slides {
            match (&s.annotation, s.row.label) {
                (Some(a), _) => truth.push(a.clone()),
                (None, SlideLabel::Normal) => truth.push(Annotation::new(s.row.slide_id.clone(), Vec::new())),
                (None, SlideLabel::Tumor) => {
                    return Err(
                        WsiError::Config("tumor slide has no annotation".into()).in_stage("evaluate", &s.row.slide_id)
                    )
                }
            }
        }
        let ids: Vec<&str> = slides.iter().map(|s| s.row.slide_id.as_str()).collect();
        let split_dets: Vec<Detection> = dets.iter().filter(|d| ids.contains(&d.slide_id.as_str())).cloned().collect();
        let lesions: usize = truth.iter().map(|a| a.polygons.len()).sum();
        let fr: Option<FrocResult> = if lesions > 0 {
            Some(stage(
                "evaluate",
                split.as_str(),
                froc(&split_dets, &truth, &self.cfg.eval.fp_rates).map_err(WsiError::from),
            )?)
        } else {
            None
        };

        if plots {
            if let Some(r) = &roc {
                write_rgb_png(&self.out.join("roc.png"), &plot_curve(&r.points, 1.0, false))?;
            }
            if let Some(f) = &fr {
                let x_max = self.cfg.eval.fp_rates.iter().copied().fold(0.0, f64::max);
                write_rgb_png(&self.out.join("froc.png"), &plot_curve(&f.curve, x_max, true))?;
            }
        }
        Ok(Some(SplitMetrics {
            auc: roc.map(|r| r.auc),
            froc: fr.map(|f| FrocSummary {
                score: f.score,
                fp_rates: self.cfg.eval.fp_rates.clone(),
                sensitivities: f.sensitivities,
            }),
        }))
    }
}
