//! Synthetic slides with planted lesions, for exercising the whole pipeline.
//!
//! A slide is a white background, one to a few tissue ellipses and, on tumor
//! slides, lesion polygons (finely sampled ellipses) placed inside the main
//! tissue ellipse. Pixels are painted on demand from the plan through
//! [`PixelSource`], so a slide never has to exist in memory at full size.
//! Pixel `(x, y)` is classified by its center `(x + 0.5, y + 0.5)` with the same
//! arithmetic the annotation rasterizer and tissue ground truth use.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Ellipse, Polygon};
use crate::patch::Annotation;
use crate::pyramid::{PyramidGeometry, SlideLabel};
use crate::raster::{BinaryGrid, PixelSource, RgbImage};
use crate::rng::{derive_seed, splitmix64};

/// Vertices per planted lesion outline.
pub const LESION_VERTICES: usize = 64;
const PLACEMENT_ATTEMPTS: usize = 1000;
/// Tissue layouts tried before a slide is given up on.
pub const LAYOUT_ROUNDS: usize = 64;
/// Lesion vertices must stay within this fraction of the tissue ellipse.
const TISSUE_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorModel {
    pub mean: [u8; 3],
    /// Per-channel standard deviation of the pixel noise.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: u64,
    pub height: u64,
    pub n_levels: usize,
    pub level_step: u64,
    pub background: ColorModel,
    pub tissue: ColorModel,
    pub tumor: ColorModel,
    /// Inclusive range of tissue ellipses per slide.
    pub tissue_blobs: (usize, usize),
    /// Inclusive range of lesions per tumor slide.
    pub lesions_per_tumor_slide: (usize, usize),
    /// Range of lesion semi-major axes in level-0 pixels.
    pub lesion_radius: (f64, f64),
    /// Minimum gap between lesion outlines, in level-0 pixels.
    pub lesion_gap: f64,
    pub mpp_level0: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 4096,
            height: 4096,
            n_levels: 3,
            level_step: 4,
            background: ColorModel { mean: [245, 245, 245], jitter: 3.0 },
            tissue: ColorModel { mean: [225, 150, 190], jitter: 8.0 },
            tumor: ColorModel { mean: [150, 70, 150], jitter: 8.0 },
            tissue_blobs: (1, 3),
            lesions_per_tumor_slide: (1, 8),
            lesion_radius: (160.0, 320.0),
            lesion_gap: 256.0,
            mpp_level0: 1.20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 64 || self.height < 64 {
            return bad(format!("slide {}x{} is too small", self.width, self.height));
        }
        if self.n_levels == 0 || self.level_step < 2 {
            return bad("need at least one level and a level step of at least 2".into());
        }
        let (b0, b1) = self.tissue_blobs;
        if b0 == 0 || b0 > b1 {
            return bad(format!("tissue blob range {b0}..={b1} is invalid"));
        }
        let (l0, l1) = self.lesions_per_tumor_slide;
        if l0 == 0 || l0 > l1 {
            return bad(format!("tumor slides need at least one lesion, got range {l0}..={l1}"));
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return bad(format!("lesion radius range {r0}..{r1} is invalid"));
        }
        if !(self.lesion_gap >= 0.0) || !(self.mpp_level0 > 0.0) {
            return bad("lesion gap and mpp must be non-negative and positive".into());
        }
        let jitters = [self.background.jitter, self.tissue.jitter, self.tumor.jitter];
        if jitters.iter().any(|j| !(*j >= 0.0 && j.is_finite())) {
            return bad("color jitter must be a non-negative number".into());
        }
        let spread = 3.0 * self.tissue.jitter.max(self.tumor.jitter);
        let separated = (0..3).any(|c| (self.tumor.mean[c] as f64 - self.tissue.mean[c] as f64).abs() >= spread);
        if !separated {
            return bad("tumor and tissue colors must differ by 3 jitter widths in some channel".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<PyramidGeometry> {
        PyramidGeometry::from_steps(self.width, self.height, &vec![self.level_step; self.n_levels - 1])
    }
}

/// Everything needed to paint one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidePlan {
    pub slide_id: String,
    pub label: SlideLabel,
    pub width: u64,
    pub height: u64,
    /// The first ellipse hosts all lesions.
    pub tissue: Vec<Ellipse>,
    pub lesions: Vec<Ellipse>,
    pub lesion_outlines: Vec<Polygon>,
    pub background: ColorModel,
    pub tissue_color: ColorModel,
    pub tumor_color: ColorModel,
    pub pixel_seed: u64,
}

fn lesions_clear(a: &Ellipse, b: &Ellipse, gap: f64) -> bool {
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    let need = a.semi_a + b.semi_a + gap;
    dx * dx + dy * dy >= need * need
}

type Layout = (Vec<Ellipse>, Vec<Ellipse>, Vec<Polygon>);

/// Tissue ellipses plus `lesion_count` lesions inside the first one, or
/// `None` when a lesion finds no room.
fn layout<R: Rng>(cfg: &SynthConfig, lesion_count: usize, rng: &mut R) -> Option<Layout> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let d = w.min(h);
    let pi = core::f64::consts::PI;

    let semi_a = d * rng.gen_range(0.30..0.40);
    let mut tissue = vec![Ellipse {
        cx: w * rng.gen_range(0.4..0.6),
        cy: h * rng.gen_range(0.4..0.6),
        semi_a,
        semi_b: semi_a * rng.gen_range(0.7..0.9),
        angle: rng.gen_range(0.0..pi),
    }];
    let blobs = rng.gen_range(cfg.tissue_blobs.0..=cfg.tissue_blobs.1);
    for _ in 1..blobs {
        let a = d * rng.gen_range(0.06..0.14);
        let mut e =
            Ellipse { cx: 0.0, cy: 0.0, semi_a: a, semi_b: a * rng.gen_range(0.6..1.0), angle: rng.gen_range(0.0..pi) };
        let (rx, ry) = e.extent();
        let margin = 0.02 * d;
        e.cx = rng.gen_range(rx + margin..w - rx - margin);
        e.cy = rng.gen_range(ry + margin..h - ry - margin);
        tissue.push(e);
    }

    let mut lesions: Vec<Ellipse> = Vec::new();
    let mut outlines = Vec::new();
    let host = tissue[0];
    let (hx, hy) = host.extent();
    for _ in 0..lesion_count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let a = rng.gen_range(cfg.lesion_radius.0..=cfg.lesion_radius.1);
            let e = Ellipse {
                cx: rng.gen_range(host.cx - hx..host.cx + hx),
                cy: rng.gen_range(host.cy - hy..host.cy + hy),
                semi_a: a,
                semi_b: a * rng.gen_range(0.6..1.0),
                angle: rng.gen_range(0.0..pi),
            };
            if !lesions.iter().all(|o| lesions_clear(o, &e, cfg.lesion_gap)) {
                continue;
            }
            let outline = e.to_polygon(LESION_VERTICES);
            if outline.vertices.iter().all(|&v| host.level(v) <= TISSUE_MARGIN * TISSUE_MARGIN) {
                lesions.push(e);
                outlines.push(outline);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some((tissue, lesions, outlines))
}

/// Plans a slide. The lesion count is drawn once; when the lesions do not fit,
/// the tissue layout is redrawn up to [`LAYOUT_ROUNDS`] times.
pub fn plan_slide(cfg: &SynthConfig, slide_id: &str, label: SlideLabel, seed: u64) -> Result<SlidePlan> {
    cfg.validate()?;
    let lesion_count = if label.is_tumor() {
        let (lo, hi) = cfg.lesions_per_tumor_slide;
        ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x1e51)).gen_range(lo..=hi)
    } else {
        0
    };
    for round in 0..LAYOUT_ROUNDS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, round as u64));
        if let Some((tissue, lesions, outlines)) = layout(cfg, lesion_count, &mut rng) {
            return Ok(SlidePlan {
                slide_id: slide_id.into(),
                label,
                width: cfg.width,
                height: cfg.height,
                tissue,
                lesions,
                lesion_outlines: outlines,
                background: cfg.background,
                tissue_color: cfg.tissue,
                tumor_color: cfg.tumor,
                pixel_seed: splitmix64(seed ^ 0x5eed),
            });
        }
    }
    Err(Error::Generation(format!(
        "could not fit {lesion_count} lesions on {slide_id} in {LAYOUT_ROUNDS} tissue layouts"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Tissue,
    Tumor,
}

fn in_span(span: Option<(f64, f64)>, px: f64) -> bool {
    span.is_some_and(|(l, r)| l <= px && px <= r)
}

/// Even-odd interval test matching the polygon rasterizer: inside iff
/// `px ∈ [enter, leave)` for some crossing pair.
fn in_crossings(xs: &[f64], px: f64) -> bool {
    xs.chunks_exact(2).any(|p| p[0] <= px && px < p[1])
}

impl SlidePlan {
    pub fn annotation(&self) -> Annotation {
        Annotation::new(self.slide_id.clone(), self.lesion_outlines.clone())
    }

    /// Whether the level-0 point lies in tissue (lesions included).
    pub fn in_tissue(&self, px: f64, py: f64) -> bool {
        self.tissue.iter().any(|e| in_span(e.span_at(py), px))
    }

    pub fn pixel_class(&self, x: u64, y: u64) -> PixelClass {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if self.lesion_outlines.iter().any(|p| in_crossings(&p.crossings(py), px)) {
            PixelClass::Tumor
        } else if self.in_tissue(px, py) {
            PixelClass::Tissue
        } else {
            PixelClass::Background
        }
    }

    /// Tissue raster on a level whose pixels are `factor` level-0 pixels wide.
    pub fn tissue_ground_truth(&self, width: usize, height: usize, factor: u64) -> BinaryGrid {
        let f = factor as f64;
        let mut grid = BinaryGrid::new(width, height);
        for j in 0..height {
            let py = (j as f64 + 0.5) * f;
            let spans: Vec<_> = self.tissue.iter().filter_map(|e| e.span_at(py)).collect();
            for i in 0..width {
                let px = (i as f64 + 0.5) * f;
                if spans.iter().any(|&s| in_span(Some(s), px)) {
                    grid.set(i, j, true);
                }
            }
        }
        grid
    }

    fn paint(&self, model: &ColorModel, x: u64, y: u64, out: &mut [u8]) {
        let mut h = splitmix64(self.pixel_seed ^ splitmix64((y << 32) | x));
        for (c, o) in out.iter_mut().enumerate() {
            // Sum of three uniforms on (-1, 1): mean 0, variance 1.
            let mut g = 0.0;
            for _ in 0..3 {
                g += ((h & 127) as f64 + 0.5) / 64.0 - 1.0;
                h >>= 7;
            }
            let v = model.mean[c] as f64 + model.jitter * g;
            *o = libm::round(v).clamp(0.0, 255.0) as u8;
        }
    }

    pub fn render(&self, x0: usize, y0: usize, width: usize, height: usize) -> RgbImage {
        let mut img = RgbImage::new(width, height);
        for j in 0..height {
            self.fill_row(y0 + j, x0, img.row_mut(j));
        }
        img
    }
}

impl PixelSource for SlidePlan {
    fn width(&self) -> usize {
        self.width as usize
    }

    fn height(&self) -> usize {
        self.height as usize
    }

    fn fill_row(&self, y: usize, x0: usize, out: &mut [u8]) {
        let py = y as f64 + 0.5;
        let spans: Vec<(f64, f64)> = self.tissue.iter().filter_map(|e| e.span_at(py)).collect();
        let crossings: Vec<Vec<f64>> =
            self.lesion_outlines.iter().map(|p| p.crossings(py)).filter(|xs| !xs.is_empty()).collect();
        for (k, px_out) in out.chunks_exact_mut(3).enumerate() {
            let x = x0 + k;
            let px = x as f64 + 0.5;
            let model = if crossings.iter().any(|xs| in_crossings(xs, px)) {
                &self.tumor_color
            } else if spans.iter().any(|&s| in_span(Some(s), px)) {
                &self.tissue_color
            } else {
                &self.background
            };
            self.paint(model, x as u64, y as u64, px_out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Slides per split as `(tumor, normal)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetCounts {
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
}

/// The clinical cohort's split sizes, mirrored at smaller scale by [`DatasetCounts::mirror`].
pub const REFERENCE_COUNTS: DatasetCounts = DatasetCounts { train: (204, 276), val: (74, 86), test: (69, 91) };

impl DatasetCounts {
    fn cells(&self) -> [usize; 6] {
        [self.train.0, self.train.1, self.val.0, self.val.1, self.test.0, self.test.1]
    }

    pub fn total(&self) -> usize {
        self.cells().iter().sum()
    }

    pub fn get(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells().contains(&0) {
            return Err(Error::Config(format!("every split needs both classes: {self:?}")));
        }
        Ok(())
    }

    /// [`REFERENCE_COUNTS`] scaled to `total` slides by largest remainder
    /// (ties go to the earlier cell in train/val/test, tumor/normal order).
    pub fn mirror(total: usize) -> Self {
        let reference = REFERENCE_COUNTS.cells();
        let ref_total = REFERENCE_COUNTS.total();
        let mut cells = [0usize; 6];
        let mut remainders = [(0usize, 0usize); 6];
        for (k, &r) in reference.iter().enumerate() {
            let scaled = r * total;
            cells[k] = scaled / ref_total;
            remainders[k] = (scaled % ref_total, k);
        }
        let short = total - cells.iter().sum::<usize>();
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, k) in remainders.iter().take(short) {
            cells[k] += 1;
        }
        Self { train: (cells[0], cells[1]), val: (cells[2], cells[3]), test: (cells[4], cells[5]) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub slide_id: String,
    pub label: SlideLabel,
    pub split: Split,
    pub seed: u64,
}

/// Slides in split order, tumor before normal, with per-slide seeds.
pub fn plan_dataset(counts: &DatasetCounts, seed: u64) -> Result<Vec<DatasetEntry>> {
    counts.validate()?;
    let mut out = Vec::with_capacity(counts.total());
    for split in Split::ALL {
        let (tumor, normal) = counts.get(split);
        let labels = core::iter::repeat(SlideLabel::Tumor)
            .take(tumor)
            .chain(core::iter::repeat(SlideLabel::Normal).take(normal));
        for label in labels {
            let i = out.len();
            out.push(DatasetEntry {
                slide_id: format!("slide_{i:03}"),
                label,
                split,
                seed: derive_seed(seed, i as u64),
            });
        }
    }
    Ok(out)
}
