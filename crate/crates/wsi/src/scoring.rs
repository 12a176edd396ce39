//! Patch scoring with the built-in baseline or an external adapter process.
//!
//! An adapter is any shell command given as `exec:<command>`. It is started
//! once per slide with `WSI_SLIDE_PATH` set to the slide directory, receives
//! one request line `slide_id,level,x,y,size` per patch on stdin and must
//! answer each with a single line holding `p_tumor` before the next request
//! is sent.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use rayon::prelude::*;
use wsi_core::classifier::{ensemble_scores, BaselineModel, PatchScore};
use wsi_core::patch::PatchRef;
use wsi_core::pyramid::RegionRequest;
use wsi_core::raster::RgbImage;

use crate::error::{Result, WsiError};
use crate::models::read_baseline;
use crate::store::PyramidSlide;

pub const ADAPTER_PREFIX: &str = "exec:";
pub const ADAPTER_MODEL_ID: &str = "external";
pub const SLIDE_PATH_ENV: &str = "WSI_SLIDE_PATH";

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Baseline { id: String, model: BaselineModel },
    External { id: String, command: String },
}

impl Scorer {
    /// `exec:<command>` for an adapter, otherwise a baseline model file.
    pub fn from_spec(spec: &str) -> Result<Self> {
        if let Some(command) = spec.strip_prefix(ADAPTER_PREFIX) {
            if command.trim().is_empty() {
                return Err(WsiError::Config("empty adapter command".into()));
            }
            return Ok(Scorer::External { id: ADAPTER_MODEL_ID.into(), command: command.into() });
        }
        let path = Path::new(spec);
        let id = path.file_stem().map_or_else(|| "baseline".into(), |s| s.to_string_lossy().into_owned());
        Ok(Scorer::Baseline { id, model: read_baseline(path)? })
    }

    pub fn id(&self) -> &str {
        match self {
            Scorer::Baseline { id, .. } | Scorer::External { id, .. } => id,
        }
    }

    /// One score per patch, in input order.
    pub fn score(&self, slide: &PyramidSlide, patches: &[PatchRef]) -> Result<Vec<PatchScore>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(p) = patches.iter().find(|p| p.slide_id != slide.slide_id()) {
            return Err(WsiError::Config(format!(
                "patch for {} scored against slide {}",
                p.slide_id,
                slide.slide_id()
            )));
        }
        match self {
            Scorer::Baseline { id, model } => patches
                .par_iter()
                .map(|p| {
                    let img = read_patch(slide, p)?;
                    Ok(PatchScore { patch: p.clone(), p_tumor: model.predict_raster(&img)?, model_id: id.clone() })
                })
                .collect(),
            Scorer::External { id, command } => run_adapter(command, id, slide.path(), patches),
        }
    }
}

/// Pixels of a patch; `x, y` are level-0 coordinates and `size` is in pixels of `patch.level`.
pub fn read_patch(slide: &PyramidSlide, patch: &PatchRef) -> Result<RgbImage> {
    let (x, y) = slide.map_point(0, patch.level, (patch.x, patch.y))?;
    slide.read_region(&RegionRequest { level: patch.level, x, y, width: patch.size, height: patch.size })
}

/// Scores with every model; more than one model yields their ensemble mean.
pub fn score_patches(scorers: &[Scorer], slide: &PyramidSlide, patches: &[PatchRef]) -> Result<Vec<PatchScore>> {
    match scorers {
        [] => Err(WsiError::Config("no scoring model given".into())),
        [one] => one.score(slide, patches),
        many => {
            let lists = many.iter().map(|s| s.score(slide, patches)).collect::<Result<Vec<_>>>()?;
            Ok(ensemble_scores(&lists)?)
        }
    }
}

fn adapter_err(msg: impl Into<String>, line: impl Into<String>) -> WsiError {
    WsiError::Adapter { msg: msg.into(), line: line.into() }
}

fn run_adapter(command: &str, id: &str, slide_dir: &Path, patches: &[PatchRef]) -> Result<Vec<PatchScore>> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .env(SLIDE_PATH_ENV, slide_dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| adapter_err(format!("cannot start adapter: {e}"), command))?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let mut stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));

    let mut out = Vec::with_capacity(patches.len());
    let mut response = String::new();
    let result = (|| -> Result<()> {
        for p in patches {
            let request = format!("{},{},{},{},{}", p.slide_id, p.level, p.x, p.y, p.size);
            writeln!(stdin, "{request}").and_then(|_| stdin.flush()).map_err(|e| {
                adapter_err(format!("adapter stopped reading after {} responses: {e}", out.len()), request.clone())
            })?;
            response.clear();
            let n =
                stdout.read_line(&mut response).map_err(|e| adapter_err(format!("cannot read response: {e}"), ""))?;
            if n == 0 {
                return Err(adapter_err(format!("adapter closed its output after {} responses", out.len()), ""));
            }
            let line = response.trim_end_matches(['\n', '\r']);
            let p_tumor = line
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| adapter_err("response is not a probability in [0, 1]", line))?;
            out.push(PatchScore { patch: p.clone(), p_tumor, model_id: id.into() });
        }
        Ok(())
    })();
    drop(stdin);
    if let Err(e) = result {
        let _ = child.kill();
        let _ = child.wait();
        return Err(e);
    }
    let mut rest = String::new();
    let _ = stdout.read_to_string(&mut rest);
    let status = child.wait().map_err(|e| adapter_err(format!("cannot wait for adapter: {e}"), ""))?;
    if let Some(extra) = rest.lines().find(|l| !l.trim().is_empty()) {
        return Err(adapter_err("unexpected output after the last response", extra));
    }
    if !status.success() {
        return Err(adapter_err(format!("adapter exited with {status}"), ""));
    }
    Ok(out)
}
