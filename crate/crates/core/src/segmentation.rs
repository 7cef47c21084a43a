//! Three-class Gaussian mixture segmentation of the bird's-eye image
//! (road / surrounding scene / obstacles) with patch-based initialization,
//! EM refinement, Bayesian per-pixel classification, and road-boundary
//! recovery for roads without painted markings.

use crate::ipm::IpmGrid;
use crate::lanes::{ransac_fit_one, LaneCurve, RansacConfig};
use crate::filters::{FeaturePoint, FeaturePointSet};
use crate::{Error, Result};

pub const CLASS_ROAD: u8 = 0;
pub const CLASS_SCENE: u8 = 1;
pub const CLASS_OBSTACLE: u8 = 2;
pub const CLASS_INVALID: u8 = 255;
pub const CLASS_NAMES: [&str; 3] = ["road", "scene", "obstacle"];

/// Variance floor preventing degenerate collapse.
pub const VAR_FLOOR: f64 = 1e-4;
const PRIOR_FLOOR: f64 = 1e-10;

/// Diagonal-covariance Gaussian mixture over 3-channel features.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmModel {
    /// Class priors, sum to 1.
    pub priors: [f64; 3],
    /// Per-class channel means.
    pub means: [[f64; 3]; 3],
    /// Per-class channel variances, floored at [`VAR_FLOOR`].
    pub vars: [[f64; 3]; 3],
}

impl GmmModel {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.priors.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("priors sum to {s}, expected 1")));
        }
        if self.priors.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidInput("priors must lie in (0,1)".into()));
        }
        if self.vars.iter().flatten().any(|&v| v < VAR_FLOOR) {
            return Err(Error::InvalidInput("variance below floor".into()));
        }
        Ok(())
    }

    /// Joint density p(x, class i) = prior * product of channel normals.
    fn score(&self, i: usize, x: &[f64; 3]) -> f64 {
        let mut p = self.priors[i];
        for ((xv, m), v) in x.iter().zip(&self.means[i]).zip(&self.vars[i]) {
            let d = xv - m;
            p *= (-d * d / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        p
    }

    fn log_score(&self, i: usize, x: &[f64; 3]) -> f64 {
        let mut lp = self.priors[i].ln();
        for ((xv, m), v) in x.iter().zip(&self.means[i]).zip(&self.vars[i]) {
            let d = xv - m;
            lp += -d * d / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        }
        lp
    }
}

/// Class-id plane aligned to an [`IpmGrid`]; invalid cells carry 255.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u8>,
    pub x_max: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl LabelMask {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.cols + c]
    }
}

/// Per-class sample statistics from labeled patch pixels.
///
/// Priors are proportional to patch sizes; variances are floored. Each
/// class needs at least 30 pixels.
pub fn init_from_patches(patches: &[Vec<[f64; 3]>; 3]) -> Result<GmmModel> {
    for (i, p) in patches.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::MissingClass(CLASS_NAMES[i].to_string()));
        }
        if p.len() < 30 {
            return Err(Error::InsufficientSamples(CLASS_NAMES[i].to_string(), p.len()));
        }
    }
    let total: usize = patches.iter().map(Vec::len).sum();
    let mut model = GmmModel { priors: [0.0; 3], means: [[0.0; 3]; 3], vars: [[0.0; 3]; 3] };
    for (i, p) in patches.iter().enumerate() {
        let n = p.len() as f64;
        model.priors[i] = n / total as f64;
        for (k, (mean_slot, var_slot)) in
            model.means[i].iter_mut().zip(model.vars[i].iter_mut()).enumerate()
        {
            let mean = p.iter().map(|x| x[k]).sum::<f64>() / n;
            let var = p.iter().map(|x| (x[k] - mean) * (x[k] - mean)).sum::<f64>() / n;
            *mean_slot = mean;
            *var_slot = var.max(VAR_FLOOR);
        }
    }
    Ok(model)
}

/// EM refinement for diagonal-covariance mixtures.
///
/// Returns the refined model and the log-likelihood trace, one entry per
/// iteration. The trace is non-decreasing up to a 1e-9 absolute slack
/// (variance and prior floors can nibble at the guarantee only in
/// degenerate corners). Stops when the relative improvement drops below
/// `rel_tol` or after `max_iters`.
pub fn em_refine(
    model: &GmmModel,
    pixels: &[[f64; 3]],
    max_iters: usize,
    rel_tol: f64,
) -> Result<(GmmModel, Vec<f64>)> {
    model.validate()?;
    if pixels.is_empty() {
        return Err(Error::InvalidInput("em_refine needs at least one pixel".into()));
    }
    let n = pixels.len();
    let mut cur = model.clone();
    let mut trace = Vec::new();
    let mut resp = vec![[0.0f64; 3]; n];
    for _ in 0..max_iters {
        // E-step (and the log-likelihood of the current parameters).
        let mut ll = 0.0;
        for (px, r) in pixels.iter().zip(resp.iter_mut()) {
            let ls = [cur.log_score(0, px), cur.log_score(1, px), cur.log_score(2, px)];
            let m = ls[0].max(ls[1]).max(ls[2]);
            let e = [(ls[0] - m).exp(), (ls[1] - m).exp(), (ls[2] - m).exp()];
            let s = e[0] + e[1] + e[2];
            ll += m + s.ln();
            for i in 0..3 {
                r[i] = e[i] / s;
            }
        }
        // M-step with fixed summation order.
        let mut weight = [0.0f64; 3];
        let mut mean = [[0.0f64; 3]; 3];
        for (px, r) in pixels.iter().zip(&resp) {
            for i in 0..3 {
                weight[i] += r[i];
                for k in 0..3 {
                    mean[i][k] += r[i] * px[k];
                }
            }
        }
        let mut next = cur.clone();
        for (i, means) in next.means.iter_mut().enumerate() {
            let w = weight[i].max(PRIOR_FLOOR);
            for (slot, m) in means.iter_mut().zip(&mean[i]) {
                *slot = m / w;
            }
        }
        let mut var = [[0.0f64; 3]; 3];
        for (px, r) in pixels.iter().zip(&resp) {
            for i in 0..3 {
                for k in 0..3 {
                    let d = px[k] - next.means[i][k];
                    var[i][k] += r[i] * d * d;
                }
            }
        }
        let mut prior_sum = 0.0;
        for i in 0..3 {
            let w = weight[i].max(PRIOR_FLOOR);
            for (slot, v) in next.vars[i].iter_mut().zip(&var[i]) {
                *slot = (v / w).max(VAR_FLOOR);
            }
            next.priors[i] = (weight[i] / n as f64).max(PRIOR_FLOOR);
            prior_sum += next.priors[i];
        }
        for i in 0..3 {
            next.priors[i] /= prior_sum;
        }
        cur = next;
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= rel_tol * prev.abs().max(1e-300));
        trace.push(ll);
        if done {
            break;
        }
    }
    Ok((cur, trace))
}

/// Per-pixel Bayesian classification: argmax over prior-weighted channel
/// likelihoods, ties resolved toward the road class.
pub fn classify(model: &GmmModel, features: &[&IpmGrid; 3]) -> Result<LabelMask> {
    model.validate()?;
    let g = features[0];
    for f in features.iter().skip(1) {
        if f.rows() != g.rows() || f.cols() != g.cols() {
            return Err(Error::DimensionMismatch(g.rows(), g.cols(), f.rows(), f.cols()));
        }
    }
    let mut labels = vec![CLASS_INVALID; g.rows() * g.cols()];
    for (i, label) in labels.iter_mut().enumerate() {
        if !g.valid[i] {
            continue;
        }
        let x = [features[0].cells.data[i], features[1].cells.data[i], features[2].cells.data[i]];
        let mut best = 0usize;
        let mut best_score = model.score(0, &x);
        for cls in 1..3 {
            let s = model.score(cls, &x);
            if s > best_score {
                best = cls;
                best_score = s;
            }
        }
        *label = best as u8;
    }
    Ok(LabelMask {
        rows: g.rows(),
        cols: g.cols(),
        labels,
        x_max: g.x_max,
        y_max: g.y_max,
        resolution: g.resolution,
    })
}

/// Minimum road-run length, cells, for a row to contribute boundary points.
pub const MIN_BOUNDARY_RUN: usize = 5;

/// Road-boundary curves from a label mask, without any painted markings.
///
/// Each row contributes one point per side, anchored on its leftmost and
/// rightmost road runs of at least [`MIN_BOUNDARY_RUN`] cells. The point is
/// placed midway between the run and the nearest scene cell outside it:
/// classification smears the road/scene transition over a blur zone
/// (labelled obstacle, being close to neither class), and the zone
/// straddles the physical edge, so its midpoint tracks the edge without
/// the inward bias of the run start itself. Each side is then fitted with
/// the same robust cubic estimator the lane markings use.
pub fn extract_boundaries(
    mask: &LabelMask,
    cfg: &RansacConfig,
) -> Result<(LaneCurve, LaneCurve)> {
    let mut valid_cells = 0usize;
    let mut road_cells = 0usize;
    for &l in &mask.labels {
        if l != CLASS_INVALID {
            valid_cells += 1;
            road_cells += (l == CLASS_ROAD) as usize;
        }
    }
    if valid_cells == 0 || (road_cells as f64) < 0.10 * valid_cells as f64 {
        return Err(Error::NoRoad);
    }
    let y_of_col = |c: f64| mask.y_max - (c + 0.5) * mask.resolution;
    let x_of_row = |r: usize| mask.x_max - (r as f64 + 0.5) * mask.resolution;
    let mut left_pts = Vec::new();
    let mut right_pts = Vec::new();
    for r in 0..mask.rows {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut c = 0;
        while c < mask.cols {
            if mask.get(r, c) == CLASS_ROAD {
                let start = c;
                while c < mask.cols && mask.get(r, c) == CLASS_ROAD {
                    c += 1;
                }
                if c - start >= MIN_BOUNDARY_RUN {
                    runs.push((start, c - 1));
                }
            } else {
                c += 1;
            }
        }
        if runs.is_empty() {
            continue;
        }
        let x = x_of_row(r);
        let leftmost = runs[0].0; // column 0 is the +y (left) edge
        let rightmost = runs[runs.len() - 1].1;
        let mk = |y: f64| FeaturePoint { x, y, strength: 1.0, orientation: 0.0, interpolated: false };
        // Last scene cell outside the anchored run, then the first road
        // cell inside of it (fragments shorter than the run minimum still
        // count as road here): their midpoint centers the blur band.
        let scene_left = (0..leftmost).rev().find(|&c| mask.get(r, c) == CLASS_SCENE);
        match scene_left {
            Some(sc) => {
                let rc = (sc + 1..=leftmost).find(|&c| mask.get(r, c) == CLASS_ROAD).unwrap_or(leftmost);
                left_pts.push(mk(0.5 * (y_of_col(sc as f64) + y_of_col(rc as f64))));
            }
            None if leftmost > 0 => {
                left_pts.push(mk(y_of_col(leftmost as f64) + 0.5 * mask.resolution));
            }
            None => {}
        }
        let scene_right = (rightmost + 1..mask.cols).find(|&c| mask.get(r, c) == CLASS_SCENE);
        match scene_right {
            Some(sc) => {
                let rc = (rightmost..sc).rev().find(|&c| mask.get(r, c) == CLASS_ROAD).unwrap_or(rightmost);
                right_pts.push(mk(0.5 * (y_of_col(sc as f64) + y_of_col(rc as f64))));
            }
            None if rightmost + 1 < mask.cols => {
                right_pts.push(mk(y_of_col(rightmost as f64) - 0.5 * mask.resolution));
            }
            None => {}
        }
    }
    let wrap = |points: Vec<FeaturePoint>| FeaturePointSet {
        points,
        spacing_x: mask.resolution,
        x_max: mask.x_max,
        y_max: mask.y_max,
    };
    let left = ransac_fit_one(&wrap(left_pts), cfg).map_err(|_| Error::BoundaryNoModel("left"))?;
    let right =
        ransac_fit_one(&wrap(right_pts), cfg).map_err(|_| Error::BoundaryNoModel("right"))?;
    Ok((left, right))
}

/// Text sidecar with initialization statistics: one line per class with
/// `name mean_l mean_a mean_b var_l var_a var_b prior`.
pub fn write_stats(path: impl AsRef<std::path::Path>, model: &GmmModel) -> Result<()> {
    let mut out = String::new();
    for (i, name) in CLASS_NAMES.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            name,
            model.means[i][0],
            model.means[i][1],
            model.means[i][2],
            model.vars[i][0],
            model.vars[i][1],
            model.vars[i][2],
            model.priors[i],
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse the sidecar produced by [`write_stats`].
pub fn read_stats(path: impl AsRef<std::path::Path>) -> Result<GmmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut model = GmmModel { priors: [0.0; 3], means: [[0.0; 3]; 3], vars: [[0.0; 3]; 3] };
    let mut seen = [false; 3];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = || Error::Config {
            path: path.display().to_string(),
            msg: format!("bad stats line {}", ln + 1),
        };
        if fields.len() != 8 {
            return Err(err());
        }
        let idx = CLASS_NAMES.iter().position(|&n| n == fields[0]).ok_or_else(err)?;
        let nums: Vec<f64> =
            fields[1..].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| err())?;
        model.means[idx] = [nums[0], nums[1], nums[2]];
        model.vars[idx] = [nums[3].max(VAR_FLOOR), nums[4].max(VAR_FLOOR), nums[5].max(VAR_FLOOR)];
        model.priors[idx] = nums[6];
        seen[idx] = true;
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            return Err(Error::MissingClass(CLASS_NAMES[i].to_string()));
        }
    }
    let sum: f64 = model.priors.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidInput("stats priors sum to zero".into()));
    }
    for p in &mut model.priors {
        *p /= sum;
    }
    model.validate()?;
    Ok(model)
}
