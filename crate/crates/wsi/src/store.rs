//! On-disk pyramidal slides: a `manifest.json` plus lossless PNG tiles.
//!
//! ```text
//! <slide>/manifest.json
//! <slide>/level_<k>/tile_<row>_<col>.png
//! ```
//!
//! Tiles are `tile_size` square except along the right and bottom edges,
//! where they are cut to the level bounds.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wsi_core::pyramid::{BlockMeanAccumulator, LevelInfo, PyramidGeometry, RegionRequest, SlideLabel, SlideManifest};
use wsi_core::raster::{PixelSource, RgbImage};

use crate::error::{io_at, Result, WsiError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TILE_SIZE: u32 = 512;
pub const DEFAULT_MPP: f64 = 1.20;
/// Decoded tiles kept per open slide.
const TILE_CACHE_CAPACITY: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format_version: u32,
    slide_id: String,
    mpp_level0: f64,
    tile_size: u32,
    tile_format: String,
    label: Option<String>,
    levels: Vec<LevelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelEntry {
    level_index: usize,
    width: u64,
    height: u64,
    downsample: f64,
}

pub fn manifest_to_json(m: &SlideManifest) -> String {
    let file = ManifestFile {
        format_version: FORMAT_VERSION,
        slide_id: m.slide_id.clone(),
        mpp_level0: m.mpp_level0,
        tile_size: m.tile_size,
        tile_format: "png".into(),
        label: m.label.map(|l| l.as_str().to_string()),
        levels: m
            .geometry
            .levels()
            .iter()
            .map(|l| LevelEntry {
                level_index: l.level_index,
                width: l.width,
                height: l.height,
                downsample: l.downsample,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn read_manifest(dir: &Path) -> Result<SlideManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => WsiError::format(&path, "manifest not found"),
        _ => WsiError::Io { path: path.clone(), source: e },
    })?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| WsiError::format(&path, e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(WsiError::format(
            &path,
            format!("format_version {} is not supported (expected {FORMAT_VERSION})", file.format_version),
        ));
    }
    if file.tile_format != "png" {
        return Err(WsiError::format(&path, format!("unsupported tile format {:?}", file.tile_format)));
    }
    let label = match file.label.as_deref() {
        None => None,
        Some(s) => Some(SlideLabel::parse(s).ok_or_else(|| WsiError::format(&path, format!("bad label {s:?}")))?),
    };
    let corrupt = |msg: String| WsiError::CorruptSlide { path: dir.to_path_buf(), msg };
    let levels = file
        .levels
        .into_iter()
        .map(|l| LevelInfo { level_index: l.level_index, width: l.width, height: l.height, downsample: l.downsample })
        .collect();
    let geometry = PyramidGeometry::from_levels(levels).map_err(|e| corrupt(e.to_string()))?;
    let manifest = SlideManifest {
        slide_id: file.slide_id,
        geometry,
        mpp_level0: file.mpp_level0,
        tile_size: file.tile_size,
        label,
    };
    manifest.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(manifest)
}

fn tile_path(dir: &Path, level: usize, row: u64, col: u64) -> PathBuf {
    dir.join(format!("level_{level}")).join(format!("tile_{row}_{col}.png"))
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path).map_err(io_at(path))?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
    encoder
        .write_image(img.as_raw(), img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| WsiError::format(path, e.to_string()))
}

pub(crate) fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    let img = image::load(BufReader::new(file), ImageFormat::Png)
        .map_err(|e| WsiError::format(path, e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_raw(w as usize, h as usize, img.into_raw())?)
}

/// Writes the tiles of one fully materialized level.
fn write_level_tiles(dir: &Path, level: usize, img: &RgbImage, tile: usize) -> Result<()> {
    let ldir = dir.join(format!("level_{level}"));
    fs::create_dir_all(&ldir).map_err(io_at(&ldir))?;
    for (row, y) in (0..img.height()).step_by(tile).enumerate() {
        for (col, x) in (0..img.width()).step_by(tile).enumerate() {
            let t = img.crop(x, y, tile.min(img.width() - x), tile.min(img.height() - y))?;
            write_png(&tile_path(dir, level, row as u64, col as u64), &t)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteParams {
    pub slide_id: String,
    /// Downsample step between consecutive levels.
    pub steps: Vec<u64>,
    pub mpp_level0: f64,
    pub tile_size: u32,
    pub label: Option<SlideLabel>,
}

/// Streams level 0 from `source` in tile-high bands and derives every lower
/// level as a block mean of level 0.
pub fn write_slide<S: PixelSource + Sync>(source: &S, params: &WriteParams, dir: &Path) -> Result<SlideManifest> {
    let (w, h) = (source.width(), source.height());
    let geometry = PyramidGeometry::from_steps(w as u64, h as u64, &params.steps)?;
    let manifest = SlideManifest {
        slide_id: params.slide_id.clone(),
        geometry,
        mpp_level0: params.mpp_level0,
        tile_size: params.tile_size,
        label: params.label,
    };
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let l0 = dir.join("level_0");
    fs::create_dir_all(&l0).map_err(io_at(&l0))?;

    let tile = params.tile_size as usize;
    let mut lower: Vec<BlockMeanAccumulator> =
        manifest.geometry.levels()[1..].iter().map(|l| BlockMeanAccumulator::new(w, h, l.factor() as usize)).collect();
    let mut band = vec![0u8; tile * w * 3];
    for (row, y0) in (0..h).step_by(tile).enumerate() {
        let bh = tile.min(h - y0);
        let band = &mut band[..bh * w * 3];
        band.par_chunks_mut(w * 3).enumerate().for_each(|(j, out)| source.fill_row(y0 + j, 0, out));
        for (j, r) in band.chunks_exact(w * 3).enumerate() {
            for acc in &mut lower {
                acc.add_row(y0 + j, r);
            }
        }
        let band_img = RgbImage::from_raw(w, bh, band.to_vec())?;
        let tiles: Vec<(usize, RgbImage)> = (0..w)
            .step_by(tile)
            .enumerate()
            .map(|(col, x)| Ok((col, band_img.crop(x, 0, tile.min(w - x), bh)?)))
            .collect::<Result<_>>()?;
        tiles
            .par_iter()
            .map(|(col, t)| write_png(&tile_path(dir, 0, row as u64, *col as u64), t))
            .collect::<Result<Vec<()>>>()?;
    }
    for (k, acc) in lower.into_iter().enumerate() {
        write_level_tiles(dir, k + 1, &acc.finish(), tile)?;
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest_to_json(&manifest)).map_err(io_at(&mpath))?;
    Ok(manifest)
}

type TileKey = (usize, u64, u64);

struct TileCache {
    tiles: HashMap<TileKey, Arc<RgbImage>>,
    order: VecDeque<TileKey>,
}

/// Read handle on a stored slide. Safe to share across threads.
pub struct PyramidSlide {
    dir: PathBuf,
    manifest: SlideManifest,
    cache: Mutex<TileCache>,
}

impl std::fmt::Debug for PyramidSlide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PyramidSlide").field("dir", &self.dir).field("slide_id", &self.manifest.slide_id).finish()
    }
}

impl PyramidSlide {
    /// Reads and validates the manifest; no pixel data is loaded.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            cache: Mutex::new(TileCache { tiles: HashMap::new(), order: VecDeque::new() }),
        })
    }

    pub fn manifest(&self) -> &SlideManifest {
        &self.manifest
    }

    pub fn geometry(&self) -> &PyramidGeometry {
        &self.manifest.geometry
    }

    pub fn slide_id(&self) -> &str {
        &self.manifest.slide_id
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn map_point(&self, from: usize, to: usize, point: (u64, u64)) -> Result<(u64, u64)> {
        Ok(self.geometry().map_point(from, to, point)?)
    }

    fn tile(&self, level: usize, row: u64, col: u64) -> Result<Arc<RgbImage>> {
        let key = (level, row, col);
        if let Some(t) = self.cache.lock().expect("tile cache poisoned").tiles.get(&key) {
            return Ok(Arc::clone(t));
        }
        let path = tile_path(&self.dir, level, row, col);
        let img = read_png_rgb(&path).map_err(|e| match e {
            WsiError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                WsiError::CorruptSlide { path: path.clone(), msg: "tile missing".into() }
            }
            other => other,
        })?;
        let info = self.geometry().level(level)?;
        let ts = self.manifest.tile_size as u64;
        let expect_w = ts.min(info.width - col * ts) as usize;
        let expect_h = ts.min(info.height - row * ts) as usize;
        if (img.width(), img.height()) != (expect_w, expect_h) {
            return Err(WsiError::CorruptSlide {
                path,
                msg: format!("tile is {}x{}, expected {expect_w}x{expect_h}", img.width(), img.height()),
            });
        }
        let img = Arc::new(img);
        let mut cache = self.cache.lock().expect("tile cache poisoned");
        if !cache.tiles.contains_key(&key) {
            if cache.order.len() >= TILE_CACHE_CAPACITY {
                if let Some(old) = cache.order.pop_front() {
                    cache.tiles.remove(&old);
                }
            }
            cache.order.push_back(key);
            cache.tiles.insert(key, Arc::clone(&img));
        }
        Ok(img)
    }

    /// Pixels of `req`, stitched across tile boundaries.
    pub fn read_region(&self, req: &RegionRequest) -> Result<RgbImage> {
        self.geometry().check_region(req)?;
        let ts = self.manifest.tile_size as u64;
        let mut out = RgbImage::new(req.width as usize, req.height as usize);
        let (x1, y1) = (req.x + req.width, req.y + req.height);
        for row in req.y / ts..=(y1 - 1) / ts {
            for col in req.x / ts..=(x1 - 1) / ts {
                let t = self.tile(req.level, row, col)?;
                let (tx0, ty0) = (col * ts, row * ts);
                let sx0 = req.x.max(tx0);
                let sy0 = req.y.max(ty0);
                let sx1 = x1.min(tx0 + t.width() as u64);
                let sy1 = y1.min(ty0 + t.height() as u64);
                let len = ((sx1 - sx0) * 3) as usize;
                for y in sy0..sy1 {
                    let src = &t.row((y - ty0) as usize)[((sx0 - tx0) * 3) as usize..][..len];
                    let dst = &mut out.row_mut((y - req.y) as usize)[((sx0 - req.x) * 3) as usize..][..len];
                    dst.copy_from_slice(src);
                }
            }
        }
        Ok(out)
    }

    pub fn read_level(&self, level: usize) -> Result<RgbImage> {
        let info = self.geometry().level(level)?;
        self.read_region(&RegionRequest { level, x: 0, y: 0, width: info.width, height: info.height })
    }
}
