//! The 28-slot slide feature vector computed from a heatmap.
//!
//! Two blocks of 14 features, one per probability threshold. Within a block
//! "largest region" means the first component in [`regions_at`] order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heatmap::{regions_at, Heatmap};

pub const SCHEMA_VERSION: u32 = 1;
pub const BLOCK_LEN: usize = 14;
pub const FEATURE_COUNT: usize = 2 * BLOCK_LEN;

/// Per-block feature names, in slot order.
pub const BLOCK_NAMES: [&str; BLOCK_LEN] = [
    "region_count",
    "tumor_area",
    "tumor_tissue_ratio",
    "largest_area",
    "mean_region_area",
    "largest_major_axis",
    "largest_eccentricity",
    "largest_extent",
    "largest_solidity",
    "largest_perimeter",
    "mean_p_tumor_cells",
    "max_p",
    "std_p",
    "mean_p_largest",
];

/// Slots of the five features singled out as most important: mean region
/// area (high), major axis (low), extent (low), eccentricity (high),
/// tumor/tissue ratio (high).
pub const TOP5_INDICES: [usize; 5] = [BLOCK_LEN + 4, 5, 7, BLOCK_LEN + 6, BLOCK_LEN + 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub t_low: f64,
    pub t_high: f64,
    pub top5_indices: [usize; 5],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { t_low: 0.5, t_high: 0.9, top5_indices: TOP5_INDICES }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_low && self.t_low < self.t_high && self.t_high <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= t_low < t_high <= 1, got {} and {}",
                self.t_low, self.t_high
            )));
        }
        if let Some(&i) = self.top5_indices.iter().find(|&&i| i >= FEATURE_COUNT) {
            return Err(Error::Config(format!("top-5 slot {i} out of range")));
        }
        Ok(())
    }

    /// Column names such as `t0.5_region_count`.
    pub fn slot_names(&self) -> Vec<String> {
        [self.t_low, self.t_high].iter().flat_map(|t| BLOCK_NAMES.iter().map(move |n| format!("t{t}_{n}"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub slide_id: String,
    pub values: Vec<f64>,
    pub schema_version: u32,
}

fn block(hm: &Heatmap, t: f64, tissue_cells: usize, scored: &[f64]) -> [f64; BLOCK_LEN] {
    let n = scored.len() as f64;
    let max_p = scored.iter().copied().fold(0.0, f64::max);
    let mean_all = scored.iter().sum::<f64>() / n;
    let var = scored.iter().map(|p| (p - mean_all) * (p - mean_all)).sum::<f64>() / n;
    let std_p = libm::sqrt(var);

    let regions = regions_at(hm, t);
    let mut out = [0.0; BLOCK_LEN];
    out[11] = max_p;
    out[12] = std_p;
    let Some(largest) = regions.first() else {
        return out;
    };
    let tumor_area: usize = regions.iter().map(|r| r.area).sum();
    let tumor_p_sum: f64 = regions.iter().map(|r| r.mean_p * r.area as f64).sum();
    out[0] = regions.len() as f64;
    out[1] = tumor_area as f64;
    out[2] = tumor_area as f64 / tissue_cells as f64;
    out[3] = largest.area as f64;
    out[4] = tumor_area as f64 / regions.len() as f64;
    out[5] = largest.major_axis_length;
    out[6] = largest.eccentricity;
    out[7] = largest.extent;
    out[8] = largest.solidity;
    out[9] = largest.perimeter as f64;
    out[10] = tumor_p_sum / tumor_area as f64;
    out[13] = largest.mean_p;
    out
}

/// `tissue_cells` is the tissue-area denominator; it must cover every scored cell.
pub fn extract_features(hm: &Heatmap, tissue_cells: usize, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let scored: Vec<f64> = hm.scored_values().collect();
    if scored.is_empty() {
        return Err(Error::EmptyHeatmap);
    }
    if tissue_cells < scored.len() {
        return Err(Error::Data(format!(
            "tissue area {tissue_cells} is smaller than the {} scored cells",
            scored.len()
        )));
    }
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.extend(block(hm, cfg.t_low, tissue_cells, &scored));
    values.extend(block(hm, cfg.t_high, tissue_cells, &scored));
    Ok(FeatureVector { slide_id: hm.slide_id.clone(), values, schema_version: SCHEMA_VERSION })
}

pub fn top5(fv: &FeatureVector, cfg: &FeatureConfig) -> Result<[f64; 5]> {
    if fv.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema { expected: SCHEMA_VERSION, found: fv.schema_version });
    }
    if fv.values.len() != FEATURE_COUNT {
        return Err(Error::Shape(format!("{} feature values, expected {FEATURE_COUNT}", fv.values.len())));
    }
    Ok(cfg.top5_indices.map(|i| fv.values[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Heatmap {
        let g = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Heatmap::from_grid("s", w, h, 256, (0, 0), g).unwrap()
    }

    #[test]
    fn all_zero_heatmap() {
        let hm = grid(8, 8, |_, _| 0.0);
        let fv = extract_features(&hm, 64, &FeatureConfig::default()).unwrap();
        assert!(fv.values.iter().all(|&v| v == 0.0));
        assert_eq!(top5(&fv, &FeatureConfig::default()).unwrap(), [0.0; 5]);
    }

    #[test]
    fn single_block() {
        let hm = grid(10, 10, |x, y| if (3..6).contains(&x) && (4..7).contains(&y) { 1.0 } else { 0.0 });
        let cfg = FeatureConfig::default();
        let fv = extract_features(&hm, 100, &cfg).unwrap();
        assert_eq!(fv.values[..BLOCK_LEN], fv.values[BLOCK_LEN..]);
        assert_eq!((fv.values[0], fv.values[2], fv.values[7], fv.values[6]), (1.0, 0.09, 1.0, 0.0));
        let t5 = top5(&fv, &cfg).unwrap();
        let axis = 4.0 * 0.75f64.sqrt();
        assert_eq!(t5[0], 9.0);
        assert!((t5[1] - axis).abs() < 1e-12);
        assert_eq!((t5[2], t5[3], t5[4]), (1.0, 0.0, 0.09));
    }

    #[test]
    fn errors() {
        let hm = grid(4, 4, |_, _| -1.0);
        assert_eq!(extract_features(&hm, 16, &FeatureConfig::default()), Err(Error::EmptyHeatmap));
        let hm = grid(4, 4, |_, _| 0.2);
        assert!(matches!(extract_features(&hm, 3, &FeatureConfig::default()), Err(Error::Data(_))));
        let mut fv = extract_features(&hm, 16, &FeatureConfig::default()).unwrap();
        fv.schema_version = 2;
        assert_eq!(top5(&fv, &FeatureConfig::default()), Err(Error::Schema { expected: 1, found: 2 }));
    }

    #[test]
    fn slot_names_are_unique() {
        let names = FeatureConfig::default().slot_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(names[0], "t0.5_region_count");
        assert_eq!(names[BLOCK_LEN + 4], "t0.9_mean_region_area");
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), FEATURE_COUNT);
    }
}
