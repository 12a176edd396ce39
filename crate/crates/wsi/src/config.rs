//! The single versioned TOML file that configures every stage.
//!
//! Every section is optional and falls back to the library defaults, so
//! `config_version = 1` plus a seed is a complete file. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsi_core::classifier::TrainParams;
use wsi_core::eval::{DEFAULT_CANDIDATE_THRESHOLD, DEFAULT_FP_RATES};
use wsi_core::features::FeatureConfig;
use wsi_core::forest::ForestConfig;
use wsi_core::patch::SamplerConfig;
use wsi_core::roi::RoiConfig;
use wsi_core::synth::{ColorModel, DatasetCounts, SynthConfig};

use crate::error::{Result, WsiError};
use crate::formats::read_text;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub worker_count: usize,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub roi: RoiSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn one() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: None,
            worker_count: 1,
            paths: PathsSection::default(),
            synth: SynthSection::default(),
            roi: RoiSection::default(),
            sampler: SamplerSection::default(),
            baseline: BaselineSection::default(),
            features: FeaturesSection::default(),
            forest: ForestSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset manifest CSV (`slide_id,path,label,split`).
    pub dataset: Option<PathBuf>,
    /// Annotation directory; defaults to `annotations/` next to the manifest.
    pub annotations: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Patch scorers (`exec:<command>` or baseline files). Empty trains the baseline.
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorSection {
    pub mean: [u8; 3],
    pub jitter: f64,
}

impl From<ColorModel> for ColorSection {
    fn from(c: ColorModel) -> Self {
        Self { mean: c.mean, jitter: c.jitter }
    }
}

impl From<&ColorSection> for ColorModel {
    fn from(c: &ColorSection) -> Self {
        Self { mean: c.mean, jitter: c.jitter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub width: u64,
    pub height: u64,
    pub n_levels: usize,
    pub level_step: u64,
    pub background: ColorSection,
    pub tissue: ColorSection,
    pub tumor: ColorSection,
    pub tissue_blobs: (usize, usize),
    pub lesions_per_tumor_slide: (usize, usize),
    pub lesion_radius: (f64, f64),
    pub lesion_gap: f64,
    pub mpp_level0: f64,
    pub tile_size: u32,
    /// Slides in total, split like the reference cohort. Ignored when `counts` is set.
    pub total_slides: usize,
    pub counts: Option<CountsSection>,
    /// Also write the tissue ground truth at the mask level.
    pub tissue_truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsSection {
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            width: d.width,
            height: d.height,
            n_levels: d.n_levels,
            level_step: d.level_step,
            background: d.background.into(),
            tissue: d.tissue.into(),
            tumor: d.tumor.into(),
            tissue_blobs: d.tissue_blobs,
            lesions_per_tumor_slide: d.lesions_per_tumor_slide,
            lesion_radius: d.lesion_radius,
            lesion_gap: d.lesion_gap,
            mpp_level0: d.mpp_level0,
            tile_size: crate::store::DEFAULT_TILE_SIZE,
            total_slides: 48,
            counts: None,
            tissue_truth: true,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            width: self.width,
            height: self.height,
            n_levels: self.n_levels,
            level_step: self.level_step,
            background: (&self.background).into(),
            tissue: (&self.tissue).into(),
            tumor: (&self.tumor).into(),
            tissue_blobs: self.tissue_blobs,
            lesions_per_tumor_slide: self.lesions_per_tumor_slide,
            lesion_radius: self.lesion_radius,
            lesion_gap: self.lesion_gap,
            mpp_level0: self.mpp_level0,
            seed,
        }
    }

    pub fn dataset_counts(&self) -> DatasetCounts {
        match self.counts {
            Some(c) => DatasetCounts { train: c.train, val: c.val, test: c.test },
            None => DatasetCounts::mirror(self.total_slides),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiSection {
    pub mask_level: Option<usize>,
    pub morph_radius: usize,
    pub invert: bool,
}

impl Default for RoiSection {
    fn default() -> Self {
        let d = RoiConfig::default();
        Self { mask_level: d.mask_level, morph_radius: d.morph_radius, invert: d.invert }
    }
}

impl RoiSection {
    pub fn to_core(&self) -> RoiConfig {
        RoiConfig { mask_level: self.mask_level, morph_radius: self.morph_radius, invert: self.invert }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub patch_size: u64,
    pub crop_size: u64,
    pub stride: u64,
    pub min_tissue_fraction: f64,
    pub tumor_per_slide: usize,
    pub normal_per_tumor_slide: usize,
    pub normal_per_normal_slide: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            patch_size: d.patch_size,
            crop_size: d.crop_size,
            stride: d.stride,
            min_tissue_fraction: d.min_tissue_fraction,
            tumor_per_slide: d.tumor_per_slide,
            normal_per_tumor_slide: d.normal_per_tumor_slide,
            normal_per_normal_slide: d.normal_per_normal_slide,
        }
    }
}

impl SamplerSection {
    pub fn to_core(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            patch_size: self.patch_size,
            crop_size: self.crop_size,
            stride: self.stride,
            min_tissue_fraction: self.min_tissue_fraction,
            tumor_per_slide: self.tumor_per_slide,
            normal_per_tumor_slide: self.normal_per_tumor_slide,
            normal_per_normal_slide: self.normal_per_normal_slide,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub epochs: usize,
    pub learn_rate: f64,
    pub batch_size: Option<usize>,
    /// Random rotation, flip and crop of each training patch.
    pub augment: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = TrainParams::default();
        Self { epochs: d.epochs, learn_rate: d.learn_rate, batch_size: d.batch_size, augment: true }
    }
}

impl BaselineSection {
    pub fn to_core(&self, seed: u64) -> TrainParams {
        TrainParams { epochs: self.epochs, learn_rate: self.learn_rate, batch_size: self.batch_size, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub t_low: f64,
    pub t_high: f64,
    pub top5_indices: [usize; 5],
}

impl Default for FeaturesSection {
    fn default() -> Self {
        let d = FeatureConfig::default();
        Self { t_low: d.t_low, t_high: d.t_high, top5_indices: d.top5_indices }
    }
}

impl FeaturesSection {
    pub fn to_core(&self) -> FeatureConfig {
        FeatureConfig { t_low: self.t_low, t_high: self.t_high, top5_indices: self.top5_indices }
    }
}

/// Which slide features the forest sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    /// The fixed five-feature subset from `[features] top5_indices`.
    Top5,
    All,
    /// Train on all features, then retrain on the five most important.
    ImportanceTop5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub feature_set: FeatureSet,
}

impl Default for ForestSection {
    fn default() -> Self {
        let d = ForestConfig::default();
        Self {
            n_trees: d.n_trees,
            max_depth: d.max_depth,
            min_samples_leaf: d.min_samples_leaf,
            mtry: d.mtry,
            bootstrap: d.bootstrap,
            feature_set: FeatureSet::Top5,
        }
    }
}

impl ForestSection {
    pub fn to_core(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            mtry: self.mtry,
            bootstrap: self.bootstrap,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub fp_rates: Vec<f64>,
    pub candidate_threshold: f64,
    /// Write ROC and FROC plots next to the report.
    pub plots: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { fp_rates: DEFAULT_FP_RATES.to_vec(), candidate_threshold: DEFAULT_CANDIDATE_THRESHOLD, plots: true }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| WsiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.dataset);
        fix(&mut self.paths.annotations);
        fix(&mut self.paths.output);
        for m in &mut self.paths.models {
            if !m.starts_with(crate::scoring::ADAPTER_PREFIX) && Path::new(m.as_str()).is_relative() {
                *m = base.join(&*m).to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(WsiError::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.worker_count == 0 {
            return Err(WsiError::Config("worker_count must be at least 1".into()));
        }
        let e = &self.eval;
        if e.fp_rates.is_empty() || e.fp_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(WsiError::Config("eval.fp_rates must be non-negative numbers".into()));
        }
        if !(0.0..=1.0).contains(&e.candidate_threshold) {
            return Err(WsiError::Config("eval.candidate_threshold must lie in [0, 1]".into()));
        }
        let seed = self.seed.unwrap_or(0);
        self.sampler.to_core(seed).validate()?;
        self.features.to_core().validate()?;
        self.synth.to_core(seed).validate()?;
        self.synth.dataset_counts().validate()?;
        Ok(())
    }

    /// The global seed; every stochastic stage needs one.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| WsiError::Config("a seed is required (set `seed` or pass --seed)".into()))
    }
}
