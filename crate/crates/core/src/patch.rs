//! Patch enumeration, labeled training-patch sampling and augmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Polygon;
use crate::pyramid::SlideLabel;
use crate::raster::{BinaryGrid, RgbImage};
use crate::roi::TissueMask;

pub type PatchLabel = SlideLabel;

/// Square patch on a pyramid level, addressed by its top-left corner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatchRef {
    pub slide_id: String,
    pub level: usize,
    pub x: u64,
    pub y: u64,
    pub size: u64,
    pub label: Option<PatchLabel>,
}

impl PatchRef {
    /// Same slide, level and footprint, ignoring labels.
    pub fn same_footprint(&self, other: &PatchRef) -> bool {
        self.slide_id == other.slide_id
            && self.level == other.level
            && self.x == other.x
            && self.y == other.y
            && self.size == other.size
    }

    pub fn center(&self) -> (u64, u64) {
        (self.x + self.size / 2, self.y + self.size / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub patch_size: u64,
    pub crop_size: u64,
    pub stride: u64,
    pub min_tissue_fraction: f64,
    pub tumor_per_slide: usize,
    pub normal_per_tumor_slide: usize,
    pub normal_per_normal_slide: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            crop_size: 224,
            stride: 256,
            min_tissue_fraction: 0.5,
            tumor_per_slide: 1000,
            normal_per_tumor_slide: 500,
            normal_per_normal_slide: 500,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.crop_size == 0 {
            return Err(Error::Config("patch_size, crop_size and stride must be positive".into()));
        }
        if self.crop_size > self.patch_size {
            return Err(Error::Config(format!("crop_size {} exceeds patch_size {}", self.crop_size, self.patch_size)));
        }
        if !(0.0..=1.0).contains(&self.min_tissue_fraction) {
            return Err(Error::Config(format!("min_tissue_fraction {} outside [0, 1]", self.min_tissue_fraction)));
        }
        Ok(())
    }

    /// (tumor, normal) quotas for a slide of the given label.
    pub fn quotas(&self, label: SlideLabel) -> (usize, usize) {
        match label {
            SlideLabel::Tumor => (self.tumor_per_slide, self.normal_per_tumor_slide),
            SlideLabel::Normal => (0, self.normal_per_normal_slide),
        }
    }
}

/// Tumor outlines for one slide, in level-0 pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub slide_id: String,
    pub polygons: Vec<Polygon>,
}

impl Annotation {
    pub fn new(slide_id: impl Into<String>, polygons: Vec<Polygon>) -> Self {
        Self { slide_id: slide_id.into(), polygons }
    }

    pub fn contains_pixel(&self, x: u64, y: u64) -> bool {
        self.polygons.iter().any(|p| p.contains_pixel(x, y))
    }

    pub fn overlaps_rect(&self, x: u64, y: u64, width: u64, height: u64) -> bool {
        let (x0, y0) = (x as f64, y as f64);
        let (x1, y1) = ((x + width) as f64, (y + height) as f64);
        self.polygons.iter().any(|p| p.intersects_rect(x0, y0, x1, y1))
    }

    /// Center-rule tumor raster on a level with the given factor and size.
    pub fn rasterize(&self, width: usize, height: usize, factor: u64) -> BinaryGrid {
        let mut grid = BinaryGrid::new(width, height);
        for p in &self.polygons {
            p.rasterize_into(&mut grid, factor);
        }
        grid
    }
}

/// Stride-aligned level-0 patches whose tissue fraction reaches the threshold,
/// row-major.
pub fn grid_patches(slide_id: &str, mask: &TissueMask, cfg: &SamplerConfig) -> Result<Vec<PatchRef>> {
    cfg.validate()?;
    let (w, h) = (mask.level0_width, mask.level0_height);
    let mut out = Vec::new();
    if w < cfg.patch_size || h < cfg.patch_size || mask.grid.is_empty() {
        return Ok(out);
    }
    let mut y = 0;
    while y + cfg.patch_size <= h {
        let mut x = 0;
        while x + cfg.patch_size <= w {
            if mask.lookup(x, y, cfg.patch_size, cfg.patch_size)? >= cfg.min_tissue_fraction {
                out.push(PatchRef { slide_id: slide_id.into(), level: 0, x, y, size: cfg.patch_size, label: None });
            }
            x += cfg.stride;
        }
        y += cfg.stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub patches: Vec<PatchRef>,
    pub tumor_count: usize,
    pub normal_count: usize,
    /// A quota could not be filled within the attempt budget.
    pub shortfall: bool,
    pub attempts: usize,
}

/// Draw attempts allowed per requested patch.
pub const ATTEMPTS_PER_QUOTA: usize = 100;

/// Uniformly samples labeled level-0 patches inside tissue.
///
/// A patch is tumor when its center pixel lies in an annotation polygon and
/// normal when it does not touch any polygon; everything else is discarded.
pub fn sample_training_patches<R: Rng + ?Sized>(
    slide_id: &str,
    slide_label: SlideLabel,
    annotation: Option<&Annotation>,
    mask: &TissueMask,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    let (tumor_quota, normal_quota) = cfg.quotas(slide_label);
    let empty = Annotation::default();
    let annotation = match annotation {
        Some(a) if !a.polygons.is_empty() => a,
        _ if tumor_quota > 0 => {
            return Err(Error::Config(format!(
                "slide {slide_id} requests {tumor_quota} tumor patches but has no annotation"
            )))
        }
        _ => &empty,
    };
    let size = cfg.patch_size;
    let (w, h) = (mask.level0_width, mask.level0_height);
    if w < size || h < size {
        return Err(Error::Config(format!("slide {slide_id} ({w}x{h}) is smaller than a {size} patch")));
    }

    let budget = ATTEMPTS_PER_QUOTA * (tumor_quota + normal_quota);
    let mut out = SampleOutcome {
        patches: Vec::with_capacity(tumor_quota + normal_quota),
        tumor_count: 0,
        normal_count: 0,
        shortfall: false,
        attempts: 0,
    };
    while (out.tumor_count < tumor_quota || out.normal_count < normal_quota) && out.attempts < budget {
        out.attempts += 1;
        let x = rng.gen_range(0..=w - size);
        let y = rng.gen_range(0..=h - size);
        if mask.lookup(x, y, size, size)? < cfg.min_tissue_fraction {
            continue;
        }
        let (cx, cy) = (x + size / 2, y + size / 2);
        let label = if annotation.contains_pixel(cx, cy) {
            if out.tumor_count >= tumor_quota {
                continue;
            }
            out.tumor_count += 1;
            SlideLabel::Tumor
        } else if !annotation.overlaps_rect(x, y, size, size) {
            if out.normal_count >= normal_quota {
                continue;
            }
            out.normal_count += 1;
            SlideLabel::Normal
        } else {
            continue;
        };
        out.patches.push(PatchRef { slide_id: slide_id.into(), level: 0, x, y, size, label: Some(label) });
    }
    out.shortfall = out.tumor_count < tumor_quota || out.normal_count < normal_quota;
    Ok(out)
}

/// One concrete draw of the augmentation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    /// Clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    pub crop_x: usize,
    pub crop_y: usize,
    pub flip: bool,
}

impl AugmentParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, patch_size: usize, crop_size: usize) -> Self {
        let slack = patch_size - crop_size;
        Self {
            quarter_turns: rng.gen_range(0..4),
            crop_x: rng.gen_range(0..=slack),
            crop_y: rng.gen_range(0..=slack),
            flip: rng.gen_bool(0.5),
        }
    }
}

/// Right-angle clockwise rotation of a square raster.
pub fn rotate_quarters(img: &RgbImage, quarter_turns: u8) -> RgbImage {
    let n = img.width();
    debug_assert_eq!(n, img.height());
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => RgbImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x)),
        2 => RgbImage::from_fn(n, n, |x, y| img.get(n - 1 - x, n - 1 - y)),
        _ => RgbImage::from_fn(n, n, |x, y| img.get(n - 1 - y, x)),
    }
}

pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let w = img.width();
    RgbImage::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}

/// Rotation, then crop, then left-right flip.
pub fn apply_augment(img: &RgbImage, params: AugmentParams, crop_size: usize) -> Result<RgbImage> {
    let rotated = rotate_quarters(img, params.quarter_turns);
    let cropped = rotated.crop(params.crop_x, params.crop_y, crop_size, crop_size)?;
    Ok(if params.flip { flip_horizontal(&cropped) } else { cropped })
}

pub fn augment<R: Rng + ?Sized>(img: &RgbImage, cfg: &SamplerConfig, rng: &mut R) -> Result<RgbImage> {
    let n = cfg.patch_size as usize;
    if img.width() != n || img.height() != n {
        return Err(Error::Shape(format!("augment expects {n}x{n}, got {}x{}", img.width(), img.height())));
    }
    let params = AugmentParams::draw(rng, n, cfg.crop_size as usize);
    apply_augment(img, params, cfg.crop_size as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::pyramid::PyramidGeometry;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(w: u64, f: impl Fn(usize, usize) -> bool) -> TissueMask {
        let geom = PyramidGeometry::from_steps(w, w, &[4, 4]).unwrap();
        let lvl = geom.level(2).unwrap().clone();
        let grid = BinaryGrid::from_fn(lvl.width as usize, lvl.height as usize, f);
        TissueMask::new("s", &geom, 2, grid).unwrap()
    }

    fn small_cfg() -> SamplerConfig {
        SamplerConfig {
            patch_size: 64,
            crop_size: 56,
            stride: 64,
            tumor_per_slide: 20,
            normal_per_tumor_slide: 10,
            normal_per_normal_slide: 30,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn full_mask_gives_row_major_grid() {
        let m = mask(1024, |_, _| true);
        let patches = grid_patches("s", &m, &SamplerConfig::default()).unwrap();
        assert_eq!(patches.len(), 16);
        assert_eq!((patches[1].x, patches[1].y), (256, 0));
        assert_eq!((patches[4].x, patches[4].y), (0, 256));
        assert!(grid_patches("s", &mask(1024, |_, _| false), &SamplerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn half_plane_grid_matches_pixel_count() {
        // Tissue boundary at mask column 23 → level-0 x = 368, mid-patch.
        let m = mask(1024, |x, _| x < 23);
        let cfg = SamplerConfig { stride: 128, ..SamplerConfig::default() };
        let got = grid_patches("s", &m, &cfg).unwrap();
        let mut want = Vec::new();
        for y in (0..=768u64).step_by(128) {
            for x in (0..=768u64).step_by(128) {
                let tissue = (x..x + 256).filter(|&px| px / 16 < 23).count() as f64;
                if tissue / 256.0 >= 0.5 {
                    want.push((x, y));
                }
            }
        }
        let got: Vec<_> = got.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn normal_slide_patches_avoid_annotation() {
        let m = mask(1024, |_, _| true);
        let ann = Annotation::new(
            "s",
            vec![Polygon::new(vec![Point::new(100.0, 100.0), Point::new(400.0, 120.0), Point::new(300.0, 500.0)])],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = sample_training_patches("s", SlideLabel::Normal, Some(&ann), &m, &small_cfg(), &mut rng).unwrap();
        assert_eq!(out.normal_count, 30);
        assert!(!out.shortfall);
        let raster = ann.rasterize(1024, 1024, 1);
        for p in &out.patches {
            assert_eq!(p.label, Some(SlideLabel::Normal));
            for y in p.y..p.y + p.size {
                for x in p.x..p.x + p.size {
                    assert!(!raster.get(x as usize, y as usize));
                }
            }
        }
    }

    #[test]
    fn fully_annotated_tumor_slide_falls_short_on_normals() {
        let m = mask(512, |_, _| true);
        let ann = Annotation::new(
            "s",
            vec![Polygon::new(vec![
                Point::new(-1.0, -1.0),
                Point::new(513.0, -1.0),
                Point::new(513.0, 513.0),
                Point::new(-1.0, 513.0),
            ])],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = sample_training_patches("s", SlideLabel::Tumor, Some(&ann), &m, &small_cfg(), &mut rng).unwrap();
        assert_eq!(out.tumor_count, 20);
        assert_eq!(out.normal_count, 0);
        assert!(out.shortfall);
        assert!(out.patches.iter().all(|p| p.label == Some(SlideLabel::Tumor)));
    }

    #[test]
    fn tumor_quota_without_annotation_is_config_error() {
        let m = mask(512, |_, _| true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_training_patches("s", SlideLabel::Tumor, None, &m, &small_cfg(), &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = mask(1024, |x, y| (x + y) % 7 != 0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_training_patches("s", SlideLabel::Normal, None, &m, &small_cfg(), &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).patches, run(6).patches);
    }

    #[test]
    fn identity_augment_is_top_left_crop() {
        let img = RgbImage::from_fn(8, 8, |x, y| [x as u8, y as u8, 0]);
        let params = AugmentParams { quarter_turns: 0, crop_x: 0, crop_y: 0, flip: false };
        assert_eq!(apply_augment(&img, params, 6).unwrap(), img.crop(0, 0, 6, 6).unwrap());
    }

    #[test]
    fn quarter_turns_compose() {
        let img = RgbImage::from_fn(5, 5, |x, y| [x as u8, y as u8, 7]);
        let once = rotate_quarters(&img, 1);
        // Clockwise: the top-left pixel moves to the top-right corner.
        assert_eq!(once.get(4, 0), img.get(0, 0));
        assert_eq!(rotate_quarters(&once, 3), img);
        assert_eq!(rotate_quarters(&rotate_quarters(&img, 2), 2), img);
    }

    #[test]
    fn constant_patch_stays_constant() {
        let img = RgbImage::filled(256, 256, [10, 20, 30]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let out = augment(&img, &SamplerConfig::default(), &mut rng).unwrap();
            assert_eq!(out, RgbImage::filled(224, 224, [10, 20, 30]));
        }
        let bad = RgbImage::filled(200, 256, [0; 3]);
        assert!(matches!(augment(&bad, &SamplerConfig::default(), &mut rng), Err(Error::Shape(_))));
    }

    #[test]
    fn augment_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut turns = [0usize; 4];
        let mut flips = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let p = AugmentParams::draw(&mut rng, 256, 224);
            turns[p.quarter_turns as usize] += 1;
            flips += p.flip as usize;
            assert!(p.crop_x <= 32 && p.crop_y <= 32);
        }
        for t in turns {
            assert!((t as f64 / n as f64 - 0.25).abs() <= 0.02);
        }
        assert!((flips as f64 / n as f64 - 0.5).abs() <= 0.02);
    }
}
