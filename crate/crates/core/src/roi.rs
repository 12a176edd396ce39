//! Tissue detection on a low-resolution level and lookup from level 0.

use alloc::format;
use alloc::string::String;

use crate::color::saturation_byte;
use crate::error::{Error, Result};
use crate::morphology::{close, open};
use crate::otsu::{otsu_threshold, Histogram};
use crate::pyramid::PyramidGeometry;
use crate::raster::{BinaryGrid, RgbImage};

/// Smallest side the default mask level must keep.
pub const DEFAULT_MASK_MIN_DIM: u64 = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct RoiConfig {
    /// `None` picks the coarsest level whose smaller side is ≥ 256.
    pub mask_level: Option<usize>,
    pub morph_radius: usize,
    /// Marks low-saturation pixels as tissue instead.
    pub invert: bool,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { mask_level: None, morph_radius: 2, invert: false }
    }
}

impl RoiConfig {
    pub fn resolve_level(&self, geometry: &PyramidGeometry) -> Result<usize> {
        match self.mask_level {
            Some(k) => geometry.level(k).map(|_| k),
            None => Ok(geometry.coarsest_level_with_min_dim(DEFAULT_MASK_MIN_DIM)),
        }
    }
}

/// Binary tissue raster at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub source_slide: String,
    pub level: usize,
    /// Level-0 pixels per mask pixel along each axis.
    pub factor: u64,
    pub level0_width: u64,
    pub level0_height: u64,
    pub grid: BinaryGrid,
}

impl TissueMask {
    pub fn new(
        source_slide: impl Into<String>,
        geometry: &PyramidGeometry,
        level: usize,
        grid: BinaryGrid,
    ) -> Result<Self> {
        let info = geometry.level(level)?;
        if grid.width() as u64 != info.width || grid.height() as u64 != info.height {
            return Err(Error::Shape(format!(
                "mask {}x{} for level {level} of {}x{}",
                grid.width(),
                grid.height(),
                info.width,
                info.height
            )));
        }
        let (w0, h0) = geometry.dimensions();
        Ok(Self {
            source_slide: source_slide.into(),
            level,
            factor: info.factor(),
            level0_width: w0,
            level0_height: h0,
            grid,
        })
    }

    /// Covered-area-weighted fraction of tissue inside a level-0 rectangle.
    pub fn lookup(&self, x: u64, y: u64, width: u64, height: u64) -> Result<f64> {
        mask_lookup(self, x, y, width, height)
    }
}

pub fn saturation_histogram(img: &RgbImage) -> Histogram {
    let mut hist = [0u64; 256];
    for px in img.pixels() {
        hist[saturation_byte(px) as usize] += 1;
    }
    hist
}

/// Otsu on saturation, strict `>` threshold, then open and close.
///
/// `img` is the already-read mask level. Returns [`Error::EmptyTissue`] when
/// nothing survives morphology.
pub fn tissue_grid(img: &RgbImage, cfg: &RoiConfig) -> Result<BinaryGrid> {
    let hist = saturation_histogram(img);
    let t = otsu_threshold(&hist)?;
    let raw = BinaryGrid::from_fn(img.width(), img.height(), |x, y| (saturation_byte(img.get(x, y)) > t) != cfg.invert);
    let cleaned = close(&open(&raw, cfg.morph_radius), cfg.morph_radius);
    if cleaned.is_empty() {
        return Err(Error::EmptyTissue);
    }
    Ok(cleaned)
}

fn overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
    a1.min(b1).saturating_sub(a0.max(b0))
}

pub fn mask_lookup(mask: &TissueMask, x: u64, y: u64, width: u64, height: u64) -> Result<f64> {
    let fits = width > 0 && height > 0 && x + width <= mask.level0_width && y + height <= mask.level0_height;
    if !fits {
        return Err(Error::Bounds(format!(
            "rect {width}x{height}+{x}+{y} on level 0 of {}x{}",
            mask.level0_width, mask.level0_height
        )));
    }
    let f = mask.factor;
    let (x1, y1) = (x + width, y + height);
    let (mx0, mx1) = (x / f, (x1 - 1) / f);
    let (my0, my1) = (y / f, (y1 - 1) / f);
    let mut covered: u128 = 0;
    for my in my0..=my1 {
        let oy = overlap(y, y1, my * f, (my + 1) * f);
        for mx in mx0..=mx1 {
            if mask.grid.get(mx as usize, my as usize) {
                covered += (overlap(x, x1, mx * f, (mx + 1) * f) * oy) as u128;
            }
        }
    }
    Ok(covered as f64 / (width as u128 * height as u128) as f64)
}
