//! Flat key-value configuration files.
//!
//! One `key = value` pair per line, `#` comments, repeated keys allowed for
//! list-valued entries. Unknown keys are rejected so typos fail loudly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::filters::SignConvention;
use crate::ipm::CameraModel;
use crate::lanes::RansacConfig;
use crate::{Error, Result};

/// Parsed key-value file preserving order and duplicates.
#[derive(Debug, Clone)]
pub struct KvFile {
    pub path: PathBuf,
    pairs: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(path: impl AsRef<Path>) -> Result<KvFile> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path)?;
        Self::parse_str(path, &text)
    }

    pub fn parse_str(path: PathBuf, text: &str) -> Result<KvFile> {
        let mut pairs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                path: path.display().to_string(),
                msg: format!("line {}: expected 'key = value'", ln + 1),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KvFile { path, pairs })
    }

    fn err(&self, msg: String) -> Error {
        Error::Config { path: self.path.display().to_string(), msg }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.pairs.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| self.err(format!("missing required key '{key}'")))
    }

    pub fn parse_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|_| self.err(format!("key '{key}': bad number '{v}'")))
            }
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .parse()
            .map_err(|_| self.err(format!("key '{key}': bad number")))
    }

    pub fn parse_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|_| self.err(format!("key '{key}': bad integer '{v}'")))
            }
        }
    }

    pub fn parse_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                v.parse().map_err(|_| self.err(format!("key '{key}': bad integer '{v}'")))
            }
        }
    }

    /// Error out on keys outside the allowed set.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for (k, _) in &self.pairs {
            if !allowed.contains(k.as_str()) {
                return Err(self.err(format!("unknown key '{k}'")));
            }
        }
        Ok(())
    }

    /// Split a multi-number value such as `0.0 0.01 0.002 0.0`.
    pub fn numbers(&self, key: &str, value: &str) -> Result<Vec<f64>> {
        value
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("key '{key}': bad number '{t}'"))))
            .collect()
    }
}

const CAMERA_KEYS: [&str; 8] =
    ["h_m", "pitch_deg", "yaw_deg", "aperture_half_deg", "rows", "cols", "cx_m", "cy_m"];

/// Load a camera from its flat config file (degrees in the file, radians in
/// the model).
pub fn load_camera(path: impl AsRef<Path>) -> Result<CameraModel> {
    let kv = KvFile::parse(path)?;
    kv.reject_unknown(&CAMERA_KEYS)?;
    let mut cam = CameraModel::new(
        kv.require_f64("h_m")?,
        kv.require_f64("pitch_deg")?.to_radians(),
        kv.parse_f64("yaw_deg", 0.0)?.to_radians(),
        kv.require_f64("aperture_half_deg")?.to_radians(),
        kv.parse_usize("rows", 0).and_then(|v| {
            if v == 0 {
                Err(kv.err("missing required key 'rows'".into()))
            } else {
                Ok(v)
            }
        })?,
        kv.parse_usize("cols", 0).and_then(|v| {
            if v == 0 {
                Err(kv.err("missing required key 'cols'".into()))
            } else {
                Ok(v)
            }
        })?,
    )?;
    cam.cx = kv.parse_f64("cx_m", 0.0)?;
    cam.cy = kv.parse_f64("cy_m", 0.0)?;
    Ok(cam)
}

/// Write a camera config file in the same flat format.
pub fn save_camera(path: impl AsRef<Path>, cam: &CameraModel) -> Result<()> {
    let text = format!(
        "h_m = {}\npitch_deg = {}\nyaw_deg = {}\naperture_half_deg = {}\nrows = {}\ncols = {}\ncx_m = {}\ncy_m = {}\n",
        cam.h,
        cam.theta.to_degrees(),
        cam.gamma.to_degrees(),
        cam.alpha.to_degrees(),
        cam.m,
        cam.n,
        cam.cx,
        cam.cy,
    );
    std::fs::write(path, text)?;
    Ok(())
}

/// All tunables of the detection pipeline. Every value is validated against
/// its owning stage's invariants at load time.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Camera config path; dataset directories may carry their own.
    pub camera: Option<PathBuf>,
    // Filter stage.
    pub sigma: f64,
    pub radius: Option<usize>,
    pub k: f64,
    pub phi_max: f64,
    pub w2: f64,
    pub w4: f64,
    pub sign_convention: SignConvention,
    // Lane stage.
    pub ransac: RansacConfig,
    pub max_gap: f64,
    pub ego_probe_x: f64,
    // Grid geometry.
    pub grid_resolution: f64,
    pub grid_x_max: f64,
    pub grid_y_max: f64,
    // Segmentation stage.
    pub gmm_stats: Option<PathBuf>,
    pub em_max_iters: usize,
    pub em_rel_tol: f64,
    pub em_subsample: usize,
    // Departure stage.
    pub lambda_threshold: f64,
    pub lambda_threshold_unaided: f64,
    pub curvature_threshold: f64,
    pub curvature_probe_x: f64,
    pub flow_grid_step: usize,
    pub flow_window: usize,
    pub flow_min_confidence: f64,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            camera: None,
            sigma: 2.0,
            radius: None,
            k: 2.0,
            phi_max: 30f64.to_radians(),
            w2: 1.0,
            w4: 0.5,
            sign_convention: SignConvention::Corrected,
            ransac: RansacConfig::default(),
            max_gap: 4.0,
            ego_probe_x: 5.0,
            grid_resolution: 0.1,
            grid_x_max: 45.0,
            grid_y_max: 10.0,
            gmm_stats: None,
            em_max_iters: 100,
            em_rel_tol: 1e-6,
            em_subsample: 8192,
            lambda_threshold: 5f64.to_radians(),
            lambda_threshold_unaided: 10f64.to_radians(),
            curvature_threshold: 0.01,
            curvature_probe_x: 10.0,
            flow_grid_step: 8,
            flow_window: 15,
            flow_min_confidence: 0.05,
            rng_seed: 0,
        }
    }
}

const PIPELINE_KEYS: [&str; 26] = [
    "camera",
    "sigma",
    "radius",
    "k",
    "phi_max_deg",
    "w2",
    "w4",
    "sign_convention",
    "ransac_iterations",
    "inlier_tol_m",
    "min_inliers",
    "max_curves",
    "max_gap_m",
    "ego_probe_x_m",
    "grid_resolution_m",
    "grid_x_max_m",
    "grid_y_max_m",
    "gmm_stats",
    "em_max_iters",
    "em_rel_tol",
    "em_subsample",
    "lambda_threshold_deg",
    "lambda_threshold_unaided_deg",
    "curvature_threshold",
    "curvature_probe_x_m",
    "rng_seed",
];

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let kv = KvFile::parse(&path)?;
        let mut keys: Vec<&str> = PIPELINE_KEYS.to_vec();
        keys.extend(["flow_grid_step", "flow_window", "flow_min_confidence"]);
        kv.reject_unknown(&keys)?;
        let d = PipelineConfig::default();
        let sign_convention = match kv.get("sign_convention") {
            None => d.sign_convention,
            Some("corrected") => SignConvention::Corrected,
            Some("as_printed") => SignConvention::AsPrinted,
            Some(other) => {
                return Err(kv.err(format!(
                    "sign_convention must be 'corrected' or 'as_printed', got '{other}'"
                )))
            }
        };
        let radius = match kv.get("radius") {
            None => None,
            Some(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| kv.err(format!("key 'radius': bad integer '{v}'")))?,
            ),
        };
        let cfg = PipelineConfig {
            camera: kv.get("camera").map(PathBuf::from),
            sigma: kv.parse_f64("sigma", d.sigma)?,
            radius,
            k: kv.parse_f64("k", d.k)?,
            phi_max: kv.parse_f64("phi_max_deg", d.phi_max.to_degrees())?.to_radians(),
            w2: kv.parse_f64("w2", d.w2)?,
            w4: kv.parse_f64("w4", d.w4)?,
            sign_convention,
            ransac: RansacConfig {
                iterations: kv.parse_usize("ransac_iterations", d.ransac.iterations)?,
                inlier_tol: kv.parse_f64("inlier_tol_m", d.ransac.inlier_tol)?,
                min_inliers: kv.parse_usize("min_inliers", d.ransac.min_inliers)?,
                max_curves: kv.parse_usize("max_curves", d.ransac.max_curves)?,
                rng_seed: kv.parse_u64("rng_seed", d.ransac.rng_seed)?,
            },
            max_gap: kv.parse_f64("max_gap_m", d.max_gap)?,
            ego_probe_x: kv.parse_f64("ego_probe_x_m", d.ego_probe_x)?,
            grid_resolution: kv.parse_f64("grid_resolution_m", d.grid_resolution)?,
            grid_x_max: kv.parse_f64("grid_x_max_m", d.grid_x_max)?,
            grid_y_max: kv.parse_f64("grid_y_max_m", d.grid_y_max)?,
            gmm_stats: kv.get("gmm_stats").map(PathBuf::from),
            em_max_iters: kv.parse_usize("em_max_iters", d.em_max_iters)?,
            em_rel_tol: kv.parse_f64("em_rel_tol", d.em_rel_tol)?,
            em_subsample: kv.parse_usize("em_subsample", d.em_subsample)?,
            lambda_threshold: kv
                .parse_f64("lambda_threshold_deg", d.lambda_threshold.to_degrees())?
                .to_radians(),
            lambda_threshold_unaided: kv
                .parse_f64("lambda_threshold_unaided_deg", d.lambda_threshold_unaided.to_degrees())?
                .to_radians(),
            curvature_threshold: kv.parse_f64("curvature_threshold", d.curvature_threshold)?,
            curvature_probe_x: kv.parse_f64("curvature_probe_x_m", d.curvature_probe_x)?,
            flow_grid_step: kv.parse_usize("flow_grid_step", d.flow_grid_step)?,
            flow_window: kv.parse_usize("flow_window", d.flow_window)?,
            flow_min_confidence: kv.parse_f64("flow_min_confidence", d.flow_min_confidence)?,
            rng_seed: kv.parse_u64("rng_seed", d.rng_seed)?,
        };
        cfg.validate().map_err(|e| kv.err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::InvalidInput("sigma must be > 0".into()));
        }
        if let Some(r) = self.radius {
            if r < (3.0 * self.sigma).ceil() as usize {
                return Err(Error::InvalidInput("radius below 3*sigma".into()));
            }
        }
        self.ransac.validate()?;
        if [self.grid_resolution, self.grid_x_max, self.grid_y_max]
            .iter()
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err(Error::InvalidInput("grid extents must be positive".into()));
        }
        if self.grid_x_max > crate::ipm::X_MAX_LIMIT {
            return Err(Error::InvalidInput(format!(
                "grid_x_max_m exceeds the {} m mapping trust limit",
                crate::ipm::X_MAX_LIMIT
            )));
        }
        if self.flow_window.is_multiple_of(2) || self.flow_window < 3 {
            return Err(Error::InvalidInput("flow_window must be odd and >= 3".into()));
        }
        if self.flow_grid_step == 0 || self.em_subsample == 0 {
            return Err(Error::InvalidInput("steps and subsample must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str, content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("lanekit_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn camera_round_trip() {
        let cam = CameraModel::new(1.55, 3f64.to_radians(), 0.01, 1.0, 375, 1242).unwrap();
        let p = tmp("cam_rt.cfg", "");
        save_camera(&p, &cam).unwrap();
        let back = load_camera(&p).unwrap();
        assert!((back.h - cam.h).abs() < 1e-12);
        assert!((back.theta - cam.theta).abs() < 1e-12);
        assert!((back.gamma - cam.gamma).abs() < 1e-12);
        assert_eq!(back.m, cam.m);
        assert_eq!(back.n, cam.n);
    }

    #[test]
    fn camera_missing_key_names_it() {
        let p = tmp("cam_missing.cfg", "h_m = 1.5\npitch_deg = 3\nrows = 100\ncols = 200\n");
        let err = load_camera(&p).unwrap_err().to_string();
        assert!(err.contains("aperture_half_deg"), "error should name the key: {err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let p = tmp(
            "cam_unknown.cfg",
            "h_m = 1.5\npitch_deg = 3\naperture_half_deg = 60\nrows = 10\ncols = 10\nfocal_px = 700\n",
        );
        let err = load_camera(&p).unwrap_err().to_string();
        assert!(err.contains("focal_px"), "{err}");
    }

    #[test]
    fn pipeline_defaults_and_overrides() {
        let p = tmp("pipe.cfg", "sigma = 1.5\nmax_curves = 4\nsign_convention = as_printed\n");
        let cfg = PipelineConfig::from_file(&p).unwrap();
        assert_eq!(cfg.sigma, 1.5);
        assert_eq!(cfg.ransac.max_curves, 4);
        assert_eq!(cfg.sign_convention, SignConvention::AsPrinted);
        assert_eq!(cfg.ransac.iterations, 500);
    }

    #[test]
    fn pipeline_rejects_over_cap_curves_and_bad_grid() {
        let p = tmp("pipe_bad.cfg", "max_curves = 9\n");
        assert!(PipelineConfig::from_file(&p).is_err());
        let p = tmp("pipe_bad2.cfg", "grid_x_max_m = 60\n");
        assert!(PipelineConfig::from_file(&p).is_err());
    }

    #[test]
    fn comments_and_spacing_tolerated() {
        let p = tmp("pipe_c.cfg", "# comment\n  sigma = 2.5  # trailing\n\n");
        assert_eq!(PipelineConfig::from_file(&p).unwrap().sigma, 2.5);
    }
}
