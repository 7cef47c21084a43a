//! Dataset ingestion: a directory of numbered frames with optional
//! ground-truth sidecars and a mandatory camera config.
//!
//! Layout per frame `NNNNNN`:
//! - `NNNNNN.ppm` — the frame (PGM also accepted);
//! - `NNNNNN.lanes.txt` — optional; one lane per line as space-separated
//!   `x,y` ground-plane meter pairs;
//! - `NNNNNN.mask.pgm` — optional lane mask on the bird's-eye grid.
//!
//! `camera.cfg` must sit in the directory.

use std::path::{Path, PathBuf};

use crate::config::load_camera;
use crate::ipm::CameraModel;
use crate::{Error, Result};

/// One ingested frame: the image path plus whatever truth was present.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub stem: String,
    pub image_path: PathBuf,
    /// Parsed truth polylines, one per lane, ground meters.
    pub truth_lanes: Option<Vec<Vec<(f64, f64)>>>,
    pub truth_mask_path: Option<PathBuf>,
}

/// Parse a `.lanes.txt` truth file.
pub fn parse_lanes_file(path: &Path) -> Result<Vec<Vec<(f64, f64)>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lanes = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut lane = Vec::new();
        for tok in line.split_whitespace() {
            let bad = || Error::MalformedTruth {
                path: path.display().to_string(),
                line: ln + 1,
            };
            let (xs, ys) = tok.split_once(',').ok_or_else(bad)?;
            let x: f64 = xs.parse().map_err(|_| bad())?;
            let y: f64 = ys.parse().map_err(|_| bad())?;
            lane.push((x, y));
        }
        if !lane.is_empty() {
            lanes.push(lane);
        }
    }
    Ok(lanes)
}

/// Scan a dataset directory into ordered frame records plus its camera.
pub fn ingest_dataset(dir: impl AsRef<Path>) -> Result<(CameraModel, Vec<FrameRecord>)> {
    let dir = dir.as_ref();
    let cam_path = dir.join("camera.cfg");
    if !cam_path.is_file() {
        return Err(Error::MissingCamera);
    }
    let cam = load_camera(&cam_path)?;
    let mut stems: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("ppm") | Some("pgm")) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            // Truth masks share the .pgm extension; skip `NNNNNN.mask.pgm`.
            if stem.ends_with(".mask") {
                continue;
            }
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    let mut frames = Vec::with_capacity(stems.len());
    for (index, stem) in stems.into_iter().enumerate() {
        let ppm = dir.join(format!("{stem}.ppm"));
        let image_path = if ppm.is_file() { ppm } else { dir.join(format!("{stem}.pgm")) };
        let lanes_path = dir.join(format!("{stem}.lanes.txt"));
        let truth_lanes =
            if lanes_path.is_file() { Some(parse_lanes_file(&lanes_path)?) } else { None };
        let mask_path = dir.join(format!("{stem}.mask.pgm"));
        frames.push(FrameRecord {
            index,
            stem,
            image_path,
            truth_lanes,
            truth_mask_path: mask_path.is_file().then_some(mask_path),
        });
    }
    Ok((cam, frames))
}
