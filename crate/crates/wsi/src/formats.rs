//! Text and raster file formats exchanged between stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use wsi_core::classifier::PatchScore;
use wsi_core::eval::Detection;
use wsi_core::geometry::{Point, Polygon};
use wsi_core::heatmap::Heatmap;
use wsi_core::patch::{Annotation, PatchRef};
use wsi_core::pyramid::SlideLabel;
use wsi_core::raster::BinaryGrid;
use wsi_core::roi::TissueMask;
use wsi_core::synth::Split;

use crate::error::{io_at, Result, WsiError};

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(io_at(path))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_at(path))
}

// ---------------------------------------------------------------------------
// Annotations

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    slide_id: String,
    polygons: Vec<PolygonEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolygonEntry {
    label: String,
    vertices: Vec<[f64; 2]>,
}

pub fn annotation_to_json(a: &Annotation) -> String {
    let file = AnnotationFile {
        slide_id: a.slide_id.clone(),
        polygons: a
            .polygons
            .iter()
            .map(|p| PolygonEntry { label: "tumor".into(), vertices: p.vertices.iter().map(|v| [v.x, v.y]).collect() })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("annotation serializes");
    s.push('\n');
    s
}

pub fn write_annotation(path: &Path, a: &Annotation) -> Result<()> {
    write_text(path, &annotation_to_json(a))
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let file: AnnotationFile =
        serde_json::from_str(&read_text(path)?).map_err(|e| WsiError::format(path, e.to_string()))?;
    let mut polygons = Vec::with_capacity(file.polygons.len());
    for (i, p) in file.polygons.into_iter().enumerate() {
        if p.label != "tumor" {
            return Err(WsiError::format(path, format!("polygon {i} has label {:?}, expected \"tumor\"", p.label)));
        }
        if p.vertices.len() < 3 || p.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WsiError::format(path, format!("polygon {i} needs at least 3 finite vertices")));
        }
        polygons.push(Polygon::new(p.vertices.into_iter().map(|[x, y]| Point::new(x, y)).collect()));
    }
    Ok(Annotation::new(file.slide_id, polygons))
}

/// Annotation for `slide_id` from `<dir>/<slide_id>.json`, if the file exists.
pub fn find_annotation(dir: &Path, slide_id: &str) -> Result<Option<Annotation>> {
    let path = dir.join(format!("{slide_id}.json"));
    if !path.exists() {
        return Ok(None);
    }
    let a = read_annotation(&path)?;
    if a.slide_id != slide_id {
        return Err(WsiError::format(&path, format!("annotation is for {}, expected {slide_id}", a.slide_id)));
    }
    Ok(Some(a))
}

/// All `*.json` annotations in a directory, sorted by slide id.
pub fn read_annotation_dir(dir: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(read_annotation(&path)?);
        }
    }
    out.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV helpers

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| WsiError::format(path, e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    create_parent(path)?;
    let f = fs::File::create(path).map_err(io_at(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> WsiError + '_ {
    move |e| WsiError::format(path, e.to_string())
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| WsiError::format(path, e.to_string()))?;
    inner.flush().map_err(io_at(path))
}

/// Column positions by name; errors name the missing column.
fn columns<const N: usize>(path: &Path, headers: &csv::StringRecord, names: [&str; N]) -> Result<[usize; N]> {
    let mut out = [0; N];
    for (k, name) in names.iter().enumerate() {
        out[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| WsiError::format(path, format!("missing column {name:?}")))?;
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| WsiError::format(path, format!("line {line}: bad {what} {raw:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_label(path: &Path, line: u64, raw: &str) -> Result<SlideLabel> {
    SlideLabel::parse(raw).ok_or_else(|| WsiError::format(path, format!("line {line}: bad label {raw:?}")))
}

// ---------------------------------------------------------------------------
// Patches and scores

pub fn write_patches(path: &Path, patches: &[PatchRef]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["slide_id", "level", "x", "y", "size", "label"]).map_err(&e)?;
    for p in patches {
        let label = p.label.map_or("", |l| l.as_str());
        w.write_record([
            p.slide_id.as_str(),
            &p.level.to_string(),
            &p.x.to_string(),
            &p.y.to_string(),
            &p.size.to_string(),
            label,
        ])
        .map_err(&e)?;
    }
    finish(path, w)
}

fn patch_from(path: &Path, rec: &csv::StringRecord, cols: &[usize]) -> Result<PatchRef> {
    let line = line_of(rec);
    Ok(PatchRef {
        slide_id: rec.get(cols[0]).unwrap_or("").to_string(),
        level: field(path, line, rec, cols[1], "level")?,
        x: field(path, line, rec, cols[2], "x")?,
        y: field(path, line, rec, cols[3], "y")?,
        size: field(path, line, rec, cols[4], "size")?,
        label: None,
    })
}

pub fn read_patches(path: &Path) -> Result<Vec<PatchRef>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let cols = columns(path, &headers, ["slide_id", "level", "x", "y", "size", "label"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let mut p = patch_from(path, &rec, &cols)?;
        let raw = rec.get(cols[5]).unwrap_or("");
        if !raw.is_empty() {
            p.label = Some(parse_label(path, line_of(&rec), raw)?);
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &[PatchScore]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["slide_id", "level", "x", "y", "size", "p_tumor", "model_id"]).map_err(&e)?;
    for s in scores {
        let p = &s.patch;
        w.write_record([
            p.slide_id.as_str(),
            &p.level.to_string(),
            &p.x.to_string(),
            &p.y.to_string(),
            &p.size.to_string(),
            &s.p_tumor.to_string(),
            &s.model_id,
        ])
        .map_err(&e)?;
    }
    finish(path, w)
}

pub fn read_scores(path: &Path) -> Result<Vec<PatchScore>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let cols = columns(path, &headers, ["slide_id", "level", "x", "y", "size", "p_tumor", "model_id"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let p_tumor: f64 = field(path, line, &rec, cols[5], "p_tumor")?;
        if !(0.0..=1.0).contains(&p_tumor) {
            return Err(WsiError::format(path, format!("line {line}: p_tumor {p_tumor} outside [0, 1]")));
        }
        out.push(PatchScore {
            patch: patch_from(path, &rec, &cols)?,
            p_tumor,
            model_id: rec.get(cols[6]).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Detections

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["slide_id", "x", "y", "confidence"]).map_err(&e)?;
    for d in dets {
        w.write_record([d.slide_id.as_str(), &d.x.to_string(), &d.y.to_string(), &d.confidence.to_string()])
            .map_err(&e)?;
    }
    finish(path, w)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let cols = columns(path, &headers, ["slide_id", "x", "y", "confidence"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        out.push(Detection {
            slide_id: rec.get(cols[0]).unwrap_or("").to_string(),
            x: field(path, line, &rec, cols[1], "x")?,
            y: field(path, line, &rec, cols[2], "y")?,
            confidence: field(path, line, &rec, cols[3], "confidence")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Feature tables, labels and predictions

/// One row per slide: `slide_id` followed by named feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn get(&self, slide_id: &str) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.0 == slide_id).map(|r| r.1.as_slice())
    }

    /// Keeps only the columns at `indices`, in that order.
    pub fn project(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            rows: self.rows.iter().map(|(id, v)| (id.clone(), indices.iter().map(|&i| v[i]).collect())).collect(),
        }
    }
}

pub fn write_features(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    let mut header = vec!["slide_id".to_string()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(&e)?;
    for (id, values) in &table.rows {
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(&e)?;
    }
    finish(path, w)
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.get(0) != Some("slide_id") {
        return Err(WsiError::format(path, "first column must be slide_id"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let values =
            (1..=names.len()).map(|i| field(path, line, &rec, i, "feature value")).collect::<Result<Vec<f64>>>()?;
        rows.push((rec.get(0).unwrap_or("").to_string(), values));
    }
    Ok(FeatureTable { names, rows })
}

/// `slide_id → label` from any CSV with `slide_id` and `label` columns.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, SlideLabel>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let [id, label] = columns(path, &headers, ["slide_id", "label"])?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let parsed = parse_label(path, line_of(&rec), rec.get(label).unwrap_or(""))?;
        out.insert(rec.get(id).unwrap_or("").to_string(), parsed);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub slide_id: String,
    pub p_tumor: f64,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["slide_id", "p_tumor"]).map_err(&e)?;
    for p in preds {
        w.write_record([p.slide_id.as_str(), &p.p_tumor.to_string()]).map_err(&e)?;
    }
    finish(path, w)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let [id, p] = columns(path, &headers, ["slide_id", "p_tumor"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        out.push(Prediction {
            slide_id: rec.get(id).unwrap_or("").to_string(),
            p_tumor: field(path, line_of(&rec), &rec, p, "p_tumor")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset manifest

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub slide_id: String,
    /// Slide directory; relative paths are resolved against the CSV's directory.
    pub path: PathBuf,
    pub label: SlideLabel,
    pub split: Split,
}

pub fn write_dataset(path: &Path, rows: &[DatasetRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["slide_id", "path", "label", "split"]).map_err(&e)?;
    for r in rows {
        let p = r.path.to_string_lossy();
        w.write_record([r.slide_id.as_str(), &p, r.label.as_str(), r.split.as_str()]).map_err(&e)?;
    }
    finish(path, w)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut r = csv_reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let cols = columns(path, &headers, ["slide_id", "path", "label", "split"])?;
    let mut out: Vec<DatasetRow> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let slide_id = rec.get(cols[0]).unwrap_or("").to_string();
        if slide_id.is_empty() || out.iter().any(|r| r.slide_id == slide_id) {
            return Err(WsiError::format(path, format!("line {line}: empty or duplicate slide id {slide_id:?}")));
        }
        let split = Split::parse(rec.get(cols[3]).unwrap_or(""))
            .map_err(|e| WsiError::format(path, format!("line {line}: {e}")))?;
        out.push(DatasetRow {
            slide_id,
            path: base.join(rec.get(cols[1]).unwrap_or("")),
            label: parse_label(path, line, rec.get(cols[2]).unwrap_or(""))?,
            split,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Heatmaps

pub const HEATMAP_MAGIC: &str = "wsi-heatmap 1";

pub fn heatmap_to_text(hm: &Heatmap) -> String {
    let mut s = String::with_capacity(hm.width * hm.height * 6 + 128);
    let _ = writeln!(s, "{HEATMAP_MAGIC}");
    let _ = writeln!(s, "slide_id {}", hm.slide_id);
    let _ = writeln!(s, "width {}", hm.width);
    let _ = writeln!(s, "height {}", hm.height);
    let _ = writeln!(s, "cell_size {}", hm.cell_size);
    let _ = writeln!(s, "origin {} {}", hm.origin.0, hm.origin.1);
    for row in hm.values().chunks(hm.width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_heatmap(path: &Path, hm: &Heatmap) -> Result<()> {
    write_text(path, &heatmap_to_text(hm))
}

pub fn parse_heatmap(path: &Path, text: &str) -> Result<Heatmap> {
    let bad = |m: String| WsiError::format(path, m);
    let mut lines = text.lines();
    if lines.next() != Some(HEATMAP_MAGIC) {
        return Err(bad(format!("missing {HEATMAP_MAGIC:?} header")));
    }
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected {key}, found {line:?}")))
    };
    let slide_id = header("slide_id")?;
    let num = |s: String, what: &str| -> Result<u64> { s.trim().parse().map_err(|_| bad(format!("bad {what} {s:?}"))) };
    let width = num(header("width")?, "width")? as usize;
    let height = num(header("height")?, "height")? as usize;
    let cell_size = num(header("cell_size")?, "cell_size")?;
    let origin_raw = header("origin")?;
    let mut parts = origin_raw.split_whitespace();
    let (Some(ox), Some(oy), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad(format!("bad origin {origin_raw:?}")));
    };
    let origin = (num(ox.into(), "origin")?, num(oy.into(), "origin")?);
    let mut grid = Vec::with_capacity(width * height);
    for (r, line) in lines.enumerate() {
        let before = grid.len();
        for tok in line.split_whitespace() {
            grid.push(tok.parse::<f64>().map_err(|_| bad(format!("row {r}: bad value {tok:?}")))?);
        }
        if grid.len() - before != width {
            return Err(bad(format!("row {r} has {} values, expected {width}", grid.len() - before)));
        }
    }
    if grid.len() != width * height {
        return Err(bad(format!("{} rows, expected {height}", grid.len() / width.max(1))));
    }
    if grid.iter().any(|&v| v < 0.0 && v != -1.0) {
        return Err(bad("negative values other than -1".into()));
    }
    Heatmap::from_grid(slide_id, width, height, cell_size, origin, grid).map_err(|e| bad(e.to_string()))
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap> {
    parse_heatmap(path, &read_text(path)?)
}

// ---------------------------------------------------------------------------
// Masks

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskSidecar {
    slide_id: String,
    level: usize,
    factor: u64,
    level0_width: u64,
    level0_height: u64,
}

fn sidecar_path(png: &Path) -> PathBuf {
    let mut s = png.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    create_parent(path)?;
    let f = fs::File::create(path).map_err(io_at(path))?;
    PngEncoder::new_with_quality(BufWriter::new(f), CompressionType::Default, FilterType::Adaptive)
        .write_image(data, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| WsiError::format(path, e.to_string()))
}

pub fn write_rgb_png(path: &Path, img: &wsi_core::raster::RgbImage) -> Result<()> {
    create_parent(path)?;
    let f = fs::File::create(path).map_err(io_at(path))?;
    PngEncoder::new_with_quality(BufWriter::new(f), CompressionType::Default, FilterType::Adaptive)
        .write_image(img.as_raw(), img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| WsiError::format(path, e.to_string()))
}

/// Writes the mask as a 0/255 grayscale PNG plus a `<path>.json` sidecar.
pub fn write_mask(path: &Path, mask: &TissueMask) -> Result<()> {
    let g = &mask.grid;
    let data: Vec<u8> = g.cells().iter().map(|&c| if c { 255 } else { 0 }).collect();
    write_gray_png(path, g.width(), g.height(), &data)?;
    let side = MaskSidecar {
        slide_id: mask.source_slide.clone(),
        level: mask.level,
        factor: mask.factor,
        level0_width: mask.level0_width,
        level0_height: mask.level0_height,
    };
    let mut text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    text.push('\n');
    write_text(&sidecar_path(path), &text)
}

pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let f = fs::File::open(path).map_err(io_at(path))?;
    let img = image::load(std::io::BufReader::new(f), ImageFormat::Png)
        .map_err(|e| WsiError::format(path, e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn read_mask(path: &Path) -> Result<TissueMask> {
    let side_path = sidecar_path(path);
    let side: MaskSidecar =
        serde_json::from_str(&read_text(&side_path)?).map_err(|e| WsiError::format(&side_path, e.to_string()))?;
    let (w, h, data) = read_gray_png(path)?;
    if data.iter().any(|&v| v != 0 && v != 255) {
        return Err(WsiError::format(path, "mask pixels must be 0 or 255"));
    }
    if side.factor == 0
        || (w as u64) != side.level0_width.div_ceil(side.factor)
        || (h as u64) != side.level0_height.div_ceil(side.factor)
    {
        return Err(WsiError::format(path, "mask size disagrees with its sidecar"));
    }
    let grid = BinaryGrid::from_cells(w, h, data.iter().map(|&v| v == 255).collect())?;
    Ok(TissueMask {
        source_slide: side.slide_id,
        level: side.level,
        factor: side.factor,
        level0_width: side.level0_width,
        level0_height: side.level0_height,
        grid,
    })
}
