//! Ground-plane remapping from extrinsic camera parameters only.
//!
//! The mapping needs no intrinsics (no focal length, no principal point):
//! camera height, pitch, yaw, and the half-aperture of the field of view
//! fully determine where each pixel ray meets the assumed flat road. The
//! remap is trusted out to 45 m ahead; obstacles off the ground plane come
//! out distorted and are left that way.
//!
//! Conventions:
//! - image rows are indexed by `ix` (1-based, top row = 1) and columns by
//!   `iy` (1-based, left column = 1), matching the mapping equations;
//! - ground `x` is meters ahead of the camera, ground `y` is meters to the
//!   LEFT of the optical axis (column 1 maps to positive y);
//! - grid row 0 holds the far field (x = x_max) and column 0 the left edge
//!   (y = +y_max), so the bird's-eye image is oriented like the camera view.

use crate::imgcore::Plane;
use crate::{Error, Result};

/// Longitudinal trust limit of the ground-plane mapping, meters.
pub const X_MAX_LIMIT: f64 = 45.0;

/// Extrinsic camera description plus sensor resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    /// Camera height above the ground plane, meters.
    pub h: f64,
    /// Pitch: optical axis angle below horizontal, radians. Must be > 0.
    pub theta: f64,
    /// Yaw about the vertical axis, radians. Applied as a ground-plane
    /// rotation after the pitch mapping.
    pub gamma: f64,
    /// Half of the (diagonal) camera aperture, radians.
    pub alpha: f64,
    /// Image rows.
    pub m: usize,
    /// Image columns.
    pub n: usize,
    /// Camera position in the car frame, meters. Metadata only.
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(h: f64, theta: f64, gamma: f64, alpha: f64, m: usize, n: usize) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidInput(format!("camera height must be > 0, got {h}")));
        }
        if !theta.is_finite() || theta <= 0.0 || theta >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "pitch must be in (0, pi/2), got {theta} rad"
            )));
        }
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "half-aperture must be in (0, pi/2), got {alpha} rad"
            )));
        }
        if m < 2 || n < 2 {
            return Err(Error::InvalidInput(format!("image must be at least 2x2, got {m}x{n}")));
        }
        Ok(CameraModel { h, theta, gamma, alpha, m, n, cx: 0.0, cy: 0.0 })
    }

    /// Row factor `1 - 2(ix-1)/(m-1)`: +1 at the top row, -1 at the bottom.
    #[inline]
    fn row_factor(&self, ix: f64) -> f64 {
        1.0 - 2.0 * (ix - 1.0) / (self.m as f64 - 1.0)
    }

    /// Column factor `1 - 2(iy-1)/(n-1)`: +1 at the left column.
    #[inline]
    fn col_factor(&self, iy: f64) -> f64 {
        1.0 - 2.0 * (iy - 1.0) / (self.n as f64 - 1.0)
    }
}

/// Decompose the aperture into row/column half-angles.
///
/// `delta` spans image rows, `omega` spans columns; both are the arctan of
/// the diagonal ratio times tan(alpha), so a square image at alpha = 45 deg
/// gives delta = omega = arctan(1/sqrt(2)).
pub fn half_apertures(cam: &CameraModel) -> (f64, f64) {
    let md = cam.m as f64 - 1.0;
    let nd = cam.n as f64 - 1.0;
    let diag = md.hypot(nd);
    let ta = cam.alpha.tan();
    ((md / diag * ta).atan(), (nd / diag * ta).atan())
}

/// Horizon row: the row where the ground mapping denominator crosses zero.
///
/// Rows at or above it have no ground intersection and are excluded. When
/// tan(theta) >= tan(delta) the whole image looks at the ground and the
/// result clamps to row 1.
pub fn horizon_row(cam: &CameraModel) -> f64 {
    let (delta, _) = half_apertures(cam);
    let hz = 1.0 + (cam.m as f64 - 1.0) / 2.0 * (1.0 - cam.theta.tan() / delta.tan());
    hz.max(1.0)
}

#[inline]
fn rotate(gamma: f64, x: f64, y: f64) -> (f64, f64) {
    if gamma == 0.0 {
        return (x, y);
    }
    let (s, c) = gamma.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Map a (fractional) pixel strictly below the horizon to ground meters.
pub fn pixel_to_ground(cam: &CameraModel, ix: f64, iy: f64) -> Result<(f64, f64)> {
    let hz = horizon_row(cam);
    if ix <= hz {
        return Err(Error::AboveHorizon { row: ix, hz });
    }
    let (delta, omega) = half_apertures(cam);
    let u = cam.row_factor(ix);
    let v = cam.col_factor(iy);
    let t = cam.theta.tan();
    let td = delta.tan();
    let denom = t - u * td;
    if denom.abs() < 1e-12 {
        return Err(Error::NonFinite);
    }
    let x = cam.h * (1.0 + u * td * t) / denom;
    let y = cam.h * v * omega.tan() / (cam.theta.sin() - u * td * cam.theta.cos());
    Ok(rotate(cam.gamma, x, y))
}

/// Closed-form inverse of [`pixel_to_ground`]. Accepts any ground point with
/// x > 0; the result may fall outside the sensor, which callers mask.
pub fn ground_to_pixel(cam: &CameraModel, x: f64, y: f64) -> Result<(f64, f64)> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::BehindCamera(x));
    }
    let (x, y) = rotate(-cam.gamma, x, y);
    if x <= 0.0 {
        return Err(Error::BehindCamera(x));
    }
    let (delta, omega) = half_apertures(cam);
    let t = cam.theta.tan();
    let td = delta.tan();
    let u = (x * t - cam.h) / (td * (x + cam.h * t));
    let v = y * (cam.theta.sin() - u * td * cam.theta.cos()) / (cam.h * omega.tan());
    let ix = 1.0 + (1.0 - u) * (cam.m as f64 - 1.0) / 2.0;
    let iy = 1.0 + (1.0 - v) * (cam.n as f64 - 1.0) / 2.0;
    Ok((ix, iy))
}

/// Bird's-eye resampling of the ground plane.
///
/// `cells` holds the resampled values; `valid` marks cells whose source
/// pixel lies inside the image and strictly below the horizon row.
#[derive(Debug, Clone)]
pub struct IpmGrid {
    /// Longitudinal extent [0, x_max] meters.
    pub x_max: f64,
    /// Lateral extent [-y_max, y_max] meters.
    pub y_max: f64,
    /// Meters per cell on both axes.
    pub resolution: f64,
    pub cells: Plane,
    pub valid: Vec<bool>,
}

impl IpmGrid {
    pub fn rows(&self) -> usize {
        self.cells.rows
    }
    pub fn cols(&self) -> usize {
        self.cells.cols
    }

    /// Forward distance of a grid row center; row 0 is the far field.
    #[inline]
    pub fn x_of_row(&self, row: usize) -> f64 {
        self.x_max - (row as f64 + 0.5) * self.resolution
    }

    /// Lateral position of a grid column center; column 0 is +y_max (left).
    #[inline]
    pub fn y_of_col(&self, col: usize) -> f64 {
        self.y_max - (col as f64 + 0.5) * self.resolution
    }

    /// Row whose center is nearest to forward distance x, if inside.
    pub fn row_of_x(&self, x: f64) -> Option<usize> {
        let r = (self.x_max - x) / self.resolution - 0.5;
        let r = r.round();
        (r >= 0.0 && (r as usize) < self.rows()).then_some(r as usize)
    }

    /// Column whose center is nearest to lateral position y, if inside.
    pub fn col_of_y(&self, y: f64) -> Option<usize> {
        let c = (self.y_max - y) / self.resolution - 0.5;
        let c = c.round();
        (c >= 0.0 && (c as usize) < self.cols()).then_some(c as usize)
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.cols() + col]
    }

    /// Largest rectangle (rows, cols) anchored at the near field in which
    /// every cell is valid: the lateral span of the nearest populated row,
    /// extended upward while rows keep covering it. Consumers that cannot
    /// tolerate fill values (optical flow) operate inside this core.
    pub fn valid_core(&self) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let cols = self.cols();
        let span = |r: usize| -> Option<(usize, usize)> {
            let row = &self.valid[r * cols..(r + 1) * cols];
            let lo = row.iter().position(|&v| v)?;
            let hi = cols - 1 - row.iter().rev().position(|&v| v)?;
            Some((lo, hi))
        };
        let base = (0..self.rows()).rev().find(|&r| span(r).is_some())?;
        let (lo, hi) = span(base)?;
        let mut top = base;
        while top > 0 {
            match span(top - 1) {
                Some((l, h)) if l <= lo && h >= hi => top -= 1,
                _ => break,
            }
        }
        // Shrink until the rectangle is genuinely all-valid (guards against
        // non-contiguous validity in odd geometries).
        while top < base {
            let all = (top..=base)
                .all(|r| (lo..=hi).all(|c| self.valid[r * cols + c]));
            if all {
                break;
            }
            top += 1;
        }
        (top <= base).then(|| (top..base + 1, lo..hi + 1))
    }

    /// Copy a rectangle of cells into a standalone plane.
    pub fn crop(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Plane {
        Plane::from_fn(rows.len(), cols.len(), |r, c| {
            self.cells.get(rows.start + r, cols.start + c)
        })
    }

    /// Mean of valid cells (0 when none are valid).
    pub fn valid_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, &ok) in self.cells.data.iter().zip(&self.valid) {
            if ok {
                sum += v;
                n += 1;
            }
        }
        if n == 0 { 0.0 } else { sum / n as f64 }
    }
}

/// Precomputed pixel lookup for one camera + grid geometry, reusable across
/// frames and across the several planes of one frame.
#[derive(Debug, Clone)]
pub struct Projector {
    pub x_max: f64,
    pub y_max: f64,
    pub resolution: f64,
    rows: usize,
    cols: usize,
    /// Source (ix, iy) per cell, 1-based fractional; NaN when invalid.
    src: Vec<(f64, f64)>,
    valid: Vec<bool>,
    n_valid: usize,
}

impl Projector {
    pub fn new(cam: &CameraModel, resolution: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(Error::InvalidInput(format!("resolution must be > 0, got {resolution}")));
        }
        if !x_max.is_finite() || x_max <= 0.0 || x_max > X_MAX_LIMIT {
            return Err(Error::InvalidInput(format!(
                "x_max must be in (0, {X_MAX_LIMIT}], got {x_max}"
            )));
        }
        if !y_max.is_finite() || y_max <= 0.0 {
            return Err(Error::InvalidInput(format!("y_max must be > 0, got {y_max}")));
        }
        let rows = (x_max / resolution).round() as usize;
        let cols = (2.0 * y_max / resolution).round() as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("grid has zero extent".into()));
        }
        let hz = horizon_row(cam);
        let mut src = Vec::with_capacity(rows * cols);
        let mut valid = Vec::with_capacity(rows * cols);
        let mut n_valid = 0usize;
        for r in 0..rows {
            let x = x_max - (r as f64 + 0.5) * resolution;
            for c in 0..cols {
                let y = y_max - (c as f64 + 0.5) * resolution;
                let ok = match ground_to_pixel(cam, x, y) {
                    Ok((ix, iy)) => {
                        let inside = ix > hz
                            && ix >= 1.0
                            && ix <= cam.m as f64
                            && iy >= 1.0
                            && iy <= cam.n as f64;
                        if inside {
                            src.push((ix, iy));
                        } else {
                            src.push((f64::NAN, f64::NAN));
                        }
                        inside
                    }
                    Err(_) => {
                        src.push((f64::NAN, f64::NAN));
                        false
                    }
                };
                valid.push(ok);
                n_valid += ok as usize;
            }
        }
        Ok(Projector { x_max, y_max, resolution, rows, cols, src, valid, n_valid })
    }

    /// Resample a source plane into an [`IpmGrid`] by bilinear lookup.
    /// Invalid cells hold 0 and are masked.
    pub fn resample(&self, img: &Plane) -> Result<IpmGrid> {
        if self.n_valid == 0 {
            return Err(Error::EmptyGrid);
        }
        let mut cells = Plane::new(self.rows, self.cols);
        for (i, &(ix, iy)) in self.src.iter().enumerate() {
            if self.valid[i] {
                cells.data[i] = img.sample_bilinear(ix, iy);
            }
        }
        Ok(IpmGrid {
            x_max: self.x_max,
            y_max: self.y_max,
            resolution: self.resolution,
            cells,
            valid: self.valid.clone(),
        })
    }

    /// Nearest-neighbor variant for label planes.
    pub fn resample_nearest(&self, img: &Plane) -> Result<IpmGrid> {
        if self.n_valid == 0 {
            return Err(Error::EmptyGrid);
        }
        let mut cells = Plane::new(self.rows, self.cols);
        for (i, &(ix, iy)) in self.src.iter().enumerate() {
            if self.valid[i] {
                cells.data[i] = img.sample_nearest(ix, iy);
            }
        }
        Ok(IpmGrid {
            x_max: self.x_max,
            y_max: self.y_max,
            resolution: self.resolution,
            cells,
            valid: self.valid.clone(),
        })
    }
}

/// One-shot bird's-eye remap of a single plane.
pub fn build_ipm(
    cam: &CameraModel,
    img: &Plane,
    resolution: f64,
    x_max: f64,
    y_max: f64,
) -> Result<IpmGrid> {
    Projector::new(cam, resolution, x_max, y_max)?.resample(img)
}
