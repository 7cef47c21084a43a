//! Scene spec files for `lanekit synth`: the same flat key = value format
//! as camera and pipeline configs, with repeatable `lane`, `shadow`, and
//! `obstacle` entries.
//!
//! ```text
//! # camera
//! h_m = 1.55
//! pitch_deg = 3
//! aperture_half_deg = 60
//! rows = 375
//! cols = 1242
//!
//! frames = 5
//! seed = 7
//! road_half_width_m = 6.0
//! noise_sigma = 0.02
//! # y0 a b c width_m dash_on_m dash_off_m [brightness]
//! lane = -1.75 0 0 0 0.15 3 3
//! lane = 1.75 0 0 0 0.15 3 3 0.9
//! # x0 x1 multiplier
//! shadow = 12 18 0.55
//! # x y half_len half_width
//! obstacle = 20 1.0 2.0 0.9
//! ```

use std::path::Path;

use lanekit::config::KvFile;
use lanekit::harness::{GridGeometry, LaneSpec, ObstacleSpec, SceneSpec, ShadowBand};
use lanekit::ipm::CameraModel;
use lanekit::Error as LkError;

const SCENE_KEYS: [&str; 22] = [
    "h_m",
    "pitch_deg",
    "yaw_deg",
    "aperture_half_deg",
    "rows",
    "cols",
    "frames",
    "seed",
    "forward_per_frame_m",
    "drift_per_frame_m",
    "follow_road_center",
    "road_half_width_m",
    "noise_sigma",
    "texture_amp",
    "road_center",
    "lane",
    "shadow",
    "obstacle",
    "grid_resolution_m",
    "grid_x_max_m",
    "grid_y_max_m",
    "paint_brightness",
];

pub fn parse_scene_file(path: &Path) -> anyhow::Result<SceneSpec> {
    let kv = KvFile::parse(path)?;
    kv.reject_unknown(&SCENE_KEYS)?;
    let bad = |msg: String| {
        anyhow::anyhow!(LkError::Config { path: path.display().to_string(), msg })
    };
    let camera = CameraModel::new(
        kv.require_f64("h_m")?,
        kv.require_f64("pitch_deg")?.to_radians(),
        kv.parse_f64("yaw_deg", 0.0)?.to_radians(),
        kv.require_f64("aperture_half_deg")?.to_radians(),
        kv.parse_usize("rows", 375)?,
        kv.parse_usize("cols", 1242)?,
    )?;
    let default_brightness = kv.parse_f64("paint_brightness", 0.92)?;
    let mut lanes = Vec::new();
    for value in kv.get_all("lane") {
        let nums = kv.numbers("lane", value)?;
        if !(nums.len() == 7 || nums.len() == 8) {
            return Err(bad(format!(
                "lane needs 'y0 a b c width dash_on dash_off [brightness]', got {} numbers",
                nums.len()
            )));
        }
        lanes.push(LaneSpec {
            coeffs: [nums[0], nums[1], nums[2], nums[3]],
            width: nums[4],
            dash_on: nums[5],
            dash_off: nums[6],
            brightness: nums.get(7).copied().unwrap_or(default_brightness),
        });
    }
    let mut shadow_bands = Vec::new();
    for value in kv.get_all("shadow") {
        let nums = kv.numbers("shadow", value)?;
        if nums.len() != 3 {
            return Err(bad("shadow needs 'x0 x1 multiplier'".into()));
        }
        shadow_bands.push(ShadowBand { x0: nums[0], x1: nums[1], multiplier: nums[2] });
    }
    let mut obstacles = Vec::new();
    for value in kv.get_all("obstacle") {
        let nums = kv.numbers("obstacle", value)?;
        if nums.len() != 4 {
            return Err(bad("obstacle needs 'x y half_len half_width'".into()));
        }
        obstacles.push(ObstacleSpec {
            x: nums[0],
            y: nums[1],
            half_len: nums[2],
            half_width: nums[3],
        });
    }
    let road_center = match kv.get("road_center") {
        None => [0.0; 4],
        Some(v) => {
            let nums = kv.numbers("road_center", v)?;
            if nums.len() != 4 {
                return Err(bad("road_center needs 'y0 a b c'".into()));
            }
            [nums[0], nums[1], nums[2], nums[3]]
        }
    };
    let grid = GridGeometry {
        resolution: kv.parse_f64("grid_resolution_m", 0.1)?,
        x_max: kv.parse_f64("grid_x_max_m", 45.0)?,
        y_max: kv.parse_f64("grid_y_max_m", 10.0)?,
    };
    Ok(SceneSpec {
        camera,
        lanes,
        road_center,
        road_half_width: kv.parse_f64("road_half_width_m", 6.0)?,
        shadow_bands,
        obstacles,
        noise_sigma: kv.parse_f64("noise_sigma", 0.0)?,
        texture_amp: kv.parse_f64("texture_amp", 0.06)?,
        forward_per_frame: kv.parse_f64("forward_per_frame_m", 0.5)?,
        drift_per_frame: kv.parse_f64("drift_per_frame_m", 0.0)?,
        follow_road_center: kv.parse_usize("follow_road_center", 0)? != 0,
        frames: kv.parse_usize("frames", 1)?,
        rng_seed: kv.parse_u64("seed", 1)?,
        grid,
    })
}
