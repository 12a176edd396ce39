//! Multi-resolution pyramid geometry.
//!
//! Level 0 is full resolution. Level `k+1` has dimensions
//! `ceil(dims(k) / step(k))` for an integer step of at least 2, and its
//! downsample factor relative to level 0 is the product of the steps so far.
//! Lower levels are block means of level 0 with round-half-up.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Slide-level ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlideLabel {
    Normal = 0,
    Tumor = 1,
}

impl SlideLabel {
    pub fn is_tumor(self) -> bool {
        matches!(self, SlideLabel::Tumor)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlideLabel::Normal => "normal",
            SlideLabel::Tumor => "tumor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tumor" | "1" => Some(SlideLabel::Tumor),
            "normal" | "0" => Some(SlideLabel::Normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelInfo {
    pub level_index: usize,
    pub width: u64,
    pub height: u64,
    pub downsample: f64,
}

impl LevelInfo {
    /// Integer downsample relative to level 0.
    pub fn factor(&self) -> u64 {
        libm::round(self.downsample) as u64
    }
}

/// Validated level table.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidGeometry {
    levels: Vec<LevelInfo>,
}

impl PyramidGeometry {
    /// Builds the level table for a level-0 size and per-level steps.
    pub fn from_steps(width: u64, height: u64, steps: &[u64]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::CorruptGeometry(format!("level 0 is {width}x{height}")));
        }
        let mut levels = vec![LevelInfo { level_index: 0, width, height, downsample: 1.0 }];
        let mut factor = 1u64;
        for (i, &step) in steps.iter().enumerate() {
            if step < 2 {
                return Err(Error::CorruptGeometry(format!("downsample step {step} for level {} is below 2", i + 1)));
            }
            let prev = &levels[i];
            factor *= step;
            levels.push(LevelInfo {
                level_index: i + 1,
                width: prev.width.div_ceil(step),
                height: prev.height.div_ceil(step),
                downsample: factor as f64,
            });
        }
        Ok(Self { levels })
    }

    /// Checks an externally supplied level table against the pyramid invariants.
    pub fn from_levels(levels: Vec<LevelInfo>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::CorruptGeometry("no levels".into()));
        };
        if first.level_index != 0 || first.downsample != 1.0 {
            return Err(Error::CorruptGeometry("first level must be level 0 with downsample 1".into()));
        }
        for (i, lvl) in levels.iter().enumerate() {
            if lvl.level_index != i {
                return Err(Error::CorruptGeometry(format!("level at position {i} has index {}", lvl.level_index)));
            }
            if lvl.width == 0 || lvl.height == 0 {
                return Err(Error::CorruptGeometry(format!("level {i} is empty")));
            }
            if !lvl.downsample.is_finite() || libm::trunc(lvl.downsample) != lvl.downsample {
                return Err(Error::CorruptGeometry(format!(
                    "level {i} downsample {} is not an integer",
                    lvl.downsample
                )));
            }
        }
        for pair in levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let (fa, fb) = (a.factor(), b.factor());
            if fb <= fa || fb % fa != 0 {
                return Err(Error::CorruptGeometry(format!(
                    "level {} downsample {} is not an integer multiple of {}",
                    b.level_index, b.downsample, a.downsample
                )));
            }
            let step = fb / fa;
            if step < 2 {
                return Err(Error::CorruptGeometry(format!("level {} step below 2", b.level_index)));
            }
            if b.width != a.width.div_ceil(step) || b.height != a.height.div_ceil(step) {
                return Err(Error::CorruptGeometry(format!(
                    "level {} is {}x{}, expected {}x{} from step {step}",
                    b.level_index,
                    b.width,
                    b.height,
                    a.width.div_ceil(step),
                    a.height.div_ceil(step)
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[LevelInfo] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Result<&LevelInfo> {
        self.levels.get(k).ok_or_else(|| Error::Bounds(format!("level {k} of {}", self.levels.len())))
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn dimensions(&self) -> (u64, u64) {
        (self.levels[0].width, self.levels[0].height)
    }

    /// Per-level steps, i.e. the inverse of [`PyramidGeometry::from_steps`].
    pub fn steps(&self) -> Vec<u64> {
        self.levels.windows(2).map(|w| w[1].factor() / w[0].factor()).collect()
    }

    /// Coarsest level whose smaller side is still at least `min_dim`; level 0 otherwise.
    pub fn coarsest_level_with_min_dim(&self, min_dim: u64) -> usize {
        self.levels.iter().rev().find(|l| l.width.min(l.height) >= min_dim).map_or(0, |l| l.level_index)
    }

    /// Scales a point between levels, rounding toward zero.
    pub fn map_point(&self, from: usize, to: usize, point: (u64, u64)) -> Result<(u64, u64)> {
        let a = self.level(from)?.factor();
        let b = self.level(to)?.factor();
        if a == b {
            return Ok(point);
        }
        // Integer arithmetic keeps the truncation exact for any coordinate.
        let scale = |v: u64| ((v as u128 * a as u128) / b as u128) as u64;
        Ok((scale(point.0), scale(point.1)))
    }

    pub fn check_region(&self, req: &RegionRequest) -> Result<()> {
        let lvl = self.level(req.level)?;
        let fits = req.width > 0
            && req.height > 0
            && req.x.checked_add(req.width).is_some_and(|e| e <= lvl.width)
            && req.y.checked_add(req.height).is_some_and(|e| e <= lvl.height);
        if fits {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "region {}x{}+{}+{} on level {} of size {}x{}",
                req.width, req.height, req.x, req.y, req.level, lvl.width, lvl.height
            )))
        }
    }
}

/// Rectangle on a given pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionRequest {
    pub level: usize,
    pub x: u64,
    pub y: u64,
    pub width: u64,
    pub height: u64,
}

/// Slide metadata: identity, resolution, tiling and level geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideManifest {
    pub slide_id: String,
    pub geometry: PyramidGeometry,
    /// Micrometers per pixel at level 0, kept verbatim.
    pub mpp_level0: f64,
    pub tile_size: u32,
    pub label: Option<SlideLabel>,
}

impl SlideManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.mpp_level0 > 0.0 && self.mpp_level0.is_finite()) {
            return Err(Error::CorruptGeometry(format!("mpp {}", self.mpp_level0)));
        }
        if self.tile_size == 0 {
            return Err(Error::CorruptGeometry("tile_size 0".into()));
        }
        Ok(())
    }
}

/// Round-half-up mean of `sum` over `n` samples.
#[inline]
pub fn rounded_mean(sum: u64, n: u64) -> u8 {
    ((2 * sum + n) / (2 * n)) as u8
}

/// Block-mean downsample of an in-memory image by an integer factor.
pub fn downsample_block_mean(img: &RgbImage, factor: usize) -> RgbImage {
    assert!(factor >= 1);
    let w = img.width().div_ceil(factor);
    let h = img.height().div_ceil(factor);
    let mut acc = BlockMeanAccumulator::new(img.width(), img.height(), factor);
    for y in 0..img.height() {
        acc.add_row(y, img.row(y));
    }
    let out = acc.finish();
    debug_assert_eq!((out.width(), out.height()), (w, h));
    out
}

/// Streaming block-mean downsampler fed with full-width level-0 rows.
///
/// Edge blocks that are cut off by the image border average only the pixels
/// they contain.
#[derive(Debug, Clone)]
pub struct BlockMeanAccumulator {
    src_width: usize,
    src_height: usize,
    factor: usize,
    out_width: usize,
    sums: Vec<u64>,
}

impl BlockMeanAccumulator {
    pub fn new(src_width: usize, src_height: usize, factor: usize) -> Self {
        let out_width = src_width.div_ceil(factor);
        let out_height = src_height.div_ceil(factor);
        Self { src_width, src_height, factor, out_width, sums: vec![0; out_width * out_height * 3] }
    }

    pub fn add_row(&mut self, y: usize, row: &[u8]) {
        debug_assert_eq!(row.len(), self.src_width * 3);
        let oy = y / self.factor;
        let base = oy * self.out_width * 3;
        for (x, px) in row.chunks_exact(3).enumerate() {
            let i = base + (x / self.factor) * 3;
            self.sums[i] += px[0] as u64;
            self.sums[i + 1] += px[1] as u64;
            self.sums[i + 2] += px[2] as u64;
        }
    }

    pub fn finish(self) -> RgbImage {
        let out_height = self.src_height.div_ceil(self.factor);
        let f = self.factor;
        let mut out = RgbImage::new(self.out_width, out_height);
        for oy in 0..out_height {
            let bh = (self.src_height - oy * f).min(f) as u64;
            for ox in 0..self.out_width {
                let bw = (self.src_width - ox * f).min(f) as u64;
                let n = bw * bh;
                let i = (oy * self.out_width + ox) * 3;
                out.put(
                    ox,
                    oy,
                    [
                        rounded_mean(self.sums[i], n),
                        rounded_mean(self.sums[i + 1], n),
                        rounded_mean(self.sums[i + 2], n),
                    ],
                );
            }
        }
        out
    }
}
