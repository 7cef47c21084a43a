//! Sparse optical flow between consecutive bird's-eye frames and the
//! lane-departure angle with curved-road gating.
//!
//! Flow is estimated on the remapped (bird's-eye) planes, where both axes
//! share one metric scale; the lateral/longitudinal flow ratio is then a
//! true ground-plane drift ratio and the departure angle follows as
//! `lambda = arctan(v_lat / v_long)`. A positive angle means the scene
//! flows toward the image right (the vehicle drifts left).

use crate::imgcore::Plane;
use crate::lanes::LaneCurve;
use crate::{Error, Result};

/// One sparse flow sample at a sampling-lattice point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub row: usize,
    pub col: usize,
    /// Flow along the longitudinal image axis (rows), px/frame.
    pub v_long: f64,
    /// Flow along the lateral image axis (columns), px/frame.
    pub v_lat: f64,
    /// Texture confidence in [0, 1]; the normalized smaller eigenvalue of
    /// the local structure matrix.
    pub confidence: f64,
}

/// Sparse flow field over the lower half of the frame.
#[derive(Debug, Clone, Default)]
pub struct FlowField {
    pub samples: Vec<FlowSample>,
}

/// Departure decision for one frame.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DepartureEstimate {
    /// Departure angle, radians.
    pub lambda: f64,
    /// Centerline offset from the lane stage, meters (if available).
    pub lateral_offset: Option<f64>,
    pub warning: bool,
    pub gated_by_curvature: bool,
}

/// Flow estimation controls.
#[derive(Debug, Clone)]
pub struct FlowParams {
    /// Sampling lattice pitch, px.
    pub grid_step: usize,
    /// Odd window edge, px.
    pub window: usize,
    /// Samples below this confidence are dropped.
    pub min_confidence: f64,
    /// Lucas-Kanade refinement iterations.
    pub iterations: usize,
    /// Largest displacement the coarse pre-shift searches for, px.
    pub max_shift: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { grid_step: 8, window: 15, min_confidence: 0.05, iterations: 8, max_shift: 12 }
    }
}

fn downsample2(img: &Plane) -> Plane {
    let rows = (img.rows / 2).max(1);
    let cols = (img.cols / 2).max(1);
    Plane::from_fn(rows, cols, |r, c| {
        let (r0, c0) = (2 * r, 2 * c);
        let r1 = (r0 + 1).min(img.rows - 1);
        let c1 = (c0 + 1).min(img.cols - 1);
        0.25 * (img.get(r0, c0) + img.get(r0, c1) + img.get(r1, c0) + img.get(r1, c1))
    })
}

#[inline]
fn sample0(img: &Plane, r: f64, c: f64) -> f64 {
    // 0-based bilinear sample, clamped.
    img.sample_bilinear(r + 1.0, c + 1.0)
}

/// One Lucas-Kanade solve at a fixed window; returns the converged
/// displacement and the structure-matrix eigenvalues (per pixel).
fn lk_at(
    prev: &Plane,
    curr: &Plane,
    row: f64,
    col: f64,
    half: usize,
    iterations: usize,
    init: (f64, f64),
) -> Option<(f64, f64, f64, f64)> {
    let h = half as f64;
    if row - h - 1.0 < 0.0
        || col - h - 1.0 < 0.0
        || row + h + 1.0 > (prev.rows - 1) as f64
        || col + h + 1.0 > (prev.cols - 1) as f64
    {
        return None;
    }
    // The matched window in `curr` sits at the displaced position; leave
    // slack for refinement around the pre-shift so clamped border samples
    // cannot bias the solve.
    let slack = 3.0;
    if row + init.0 - h - slack < 0.0
        || col + init.1 - h - slack < 0.0
        || row + init.0 + h + slack > (curr.rows - 1) as f64
        || col + init.1 + h + slack > (curr.cols - 1) as f64
    {
        return None;
    }
    let side = 2 * half + 1;
    let n = (side * side) as f64;
    let mut gx = vec![0.0f64; side * side];
    let mut gy = vec![0.0f64; side * side];
    let mut tmpl = vec![0.0f64; side * side];
    let mut gxx = 0.0;
    let mut gxy = 0.0;
    let mut gyy = 0.0;
    for dr in 0..side {
        for dc in 0..side {
            let r = row + dr as f64 - h;
            let c = col + dc as f64 - h;
            let ix = 0.5 * (sample0(prev, r, c + 1.0) - sample0(prev, r, c - 1.0));
            let iy = 0.5 * (sample0(prev, r + 1.0, c) - sample0(prev, r - 1.0, c));
            gx[dr * side + dc] = ix;
            gy[dr * side + dc] = iy;
            tmpl[dr * side + dc] = sample0(prev, r, c);
            gxx += ix * ix;
            gxy += ix * iy;
            gyy += iy * iy;
        }
    }
    // Eigenvalues of the 2x2 structure matrix.
    let tr = gxx + gyy;
    let det = gxx * gyy - gxy * gxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lambda_min = (tr / 2.0 - disc) / n;
    let lambda_max = (tr / 2.0 + disc) / n;
    if det.abs() < 1e-30 {
        return Some((init.0, init.1, lambda_min, lambda_max));
    }
    let (mut vr, mut vc) = init;
    for _ in 0..iterations {
        let mut br = 0.0;
        let mut bc = 0.0;
        for dr in 0..side {
            for dc in 0..side {
                let r = row + dr as f64 - h;
                let c = col + dc as f64 - h;
                let diff = sample0(curr, r + vr, c + vc) - tmpl[dr * side + dc];
                bc += diff * gx[dr * side + dc];
                br += diff * gy[dr * side + dc];
            }
        }
        // Solve G * d = -b for the increment.
        let dc_step = -(gyy * bc - gxy * br) / det;
        let dr_step = -(gxx * br - gxy * bc) / det;
        vr += dr_step;
        vc += dc_step;
        if dr_step * dr_step + dc_step * dc_step < 1e-8 {
            break;
        }
    }
    Some((vr, vc, lambda_min, lambda_max))
}

// Confidence saturation constant: lambda_min per pixel at which the energy
// term reaches 0.5, for unit-scaled images.
const CONF_HALF_POINT: f64 = 1e-4;

/// Confidence of a window from its structure-matrix eigenvalues: the
/// normalized smaller eigenvalue. Isotropy (2*min/(min+max)) suppresses
/// direction-blind windows sitting on stripes (the aperture problem); the
/// energy term suppresses windows with no gradient at all.
fn confidence_of(lambda_min: f64, lambda_max: f64) -> f64 {
    if lambda_min + lambda_max <= 0.0 {
        return 0.0;
    }
    let isotropy = 2.0 * lambda_min / (lambda_min + lambda_max);
    let energy = lambda_min / (lambda_min + CONF_HALF_POINT);
    (isotropy * energy).clamp(0.0, 1.0)
}

/// Mean squared difference between `prev` and `curr` shifted by (dr, dc),
/// skipping a fixed border.
fn ssd_at(prev: &Plane, curr: &Plane, dr: isize, dc: isize, margin: isize, step: usize) -> f64 {
    let (rows, cols) = (prev.rows as isize, prev.cols as isize);
    let mut acc = 0.0;
    let mut n = 0usize;
    let mut r = margin;
    while r < rows - margin {
        let mut c = margin;
        while c < cols - margin {
            let d = curr.get((r + dr) as usize, (c + dc) as usize) - prev.get(r as usize, c as usize);
            acc += d * d;
            n += 1;
            c += step as isize;
        }
        r += step as isize;
    }
    if n == 0 { f64::INFINITY } else { acc / n as f64 }
}

/// Global subpixel pre-shift: exhaustive SSD search at half resolution,
/// integer refinement at full resolution, then a 2-D quadratic fit on the
/// 3x3 neighborhood of the minimum.
///
/// Per-window gradient descent cannot jump texture periods, and stripe-like
/// scenes leave single windows direction-blind (the aperture problem); the
/// whole-field search has neither failure mode. Ties resolve toward the
/// smallest displacement, so identical frames pre-shift by zero.
fn coarse_preshift(prev: &Plane, curr: &Plane, max_shift_fine: usize) -> (f64, f64) {
    let prev2 = downsample2(prev);
    let curr2 = downsample2(curr);
    let reach = (max_shift_fine / 2 + 1) as isize;
    if prev2.rows as isize <= 2 * reach + 2 || prev2.cols as isize <= 2 * reach + 2 {
        return (0.0, 0.0);
    }
    let mut best = (0isize, 0isize);
    let mut best_score = f64::INFINITY;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let score = ssd_at(&prev2, &curr2, dr, dc, reach, 2);
            let closer = dr.abs() + dc.abs() < best.0.abs() + best.1.abs();
            if score < best_score - 1e-15 || ((score - best_score).abs() <= 1e-15 && closer) {
                best_score = score;
                best = (dr, dc);
            }
        }
    }
    // Integer refinement at full resolution around the upscaled candidate.
    let margin = (max_shift_fine + 3) as isize;
    if prev.rows as isize <= 2 * margin + 2 || prev.cols as isize <= 2 * margin + 2 {
        return (2.0 * best.0 as f64, 2.0 * best.1 as f64);
    }
    let clamp = |v: isize| v.clamp(-(max_shift_fine as isize), max_shift_fine as isize);
    let mut fine = (clamp(2 * best.0), clamp(2 * best.1));
    let mut fine_score = f64::INFINITY;
    for dr in -2..=2isize {
        for dc in -2..=2isize {
            let cand = (clamp(2 * best.0 + dr), clamp(2 * best.1 + dc));
            let score = ssd_at(prev, curr, cand.0, cand.1, margin, 1);
            if score < fine_score - 1e-15 {
                fine_score = score;
                fine = cand;
            }
        }
    }
    // Subpixel: paraboloid through the 3x3 SSD neighborhood. An exact-zero
    // minimum means bit-identical content, where the landscape is a V and
    // the parabola would invent an offset.
    let s = |dr: isize, dc: isize| ssd_at(prev, curr, fine.0 + dr, fine.1 + dc, margin + 1, 1);
    let s00 = s(0, 0);
    if s00 < 1e-15 {
        return (fine.0 as f64, fine.1 as f64);
    }
    let (sm0, sp0, s0m, s0p) = (s(-1, 0), s(1, 0), s(0, -1), s(0, 1));
    let (smm, smp, spm, spp) = (s(-1, -1), s(-1, 1), s(1, -1), s(1, 1));
    let gr = (sp0 - sm0) / 2.0;
    let gc = (s0p - s0m) / 2.0;
    let hrr = sp0 - 2.0 * s00 + sm0;
    let hcc = s0p - 2.0 * s00 + s0m;
    let hrc = (spp - spm - smp + smm) / 4.0;
    let det = hrr * hcc - hrc * hrc;
    let mut sub = (0.0, 0.0);
    if det > 1e-30 && hrr > 0.0 {
        let dr = -(hcc * gr - hrc * gc) / det;
        let dc = -(hrr * gc - hrc * gr) / det;
        if dr.is_finite() && dc.is_finite() && dr.abs() <= 0.75 && dc.abs() <= 0.75 {
            sub = (dr, dc);
        }
    }
    (fine.0 as f64 + sub.0, fine.1 as f64 + sub.1)
}

/// Estimate sparse flow from `prev` to `curr` on a regular lattice over the
/// lower image half (the near field).
///
/// A global coarse pre-shift (half-resolution SSD search) absorbs the bulk
/// displacement; per lattice point, iterative local least squares over
/// `window` px refines it. Samples with confidence below `min_confidence`
/// are dropped.
pub fn estimate_flow(prev: &Plane, curr: &Plane, params: &FlowParams) -> Result<FlowField> {
    if prev.rows != curr.rows || prev.cols != curr.cols {
        return Err(Error::DimensionMismatch(prev.rows, prev.cols, curr.rows, curr.cols));
    }
    let half = params.window / 2;
    let init = coarse_preshift(prev, curr, params.max_shift);
    let mut samples = Vec::new();
    let mut row = prev.rows / 2 + params.grid_step / 2;
    while row < prev.rows {
        let mut col = params.grid_step / 2;
        while col < prev.cols {
            if let Some((vr, vc, lambda_min, lambda_max)) =
                lk_at(prev, curr, row as f64, col as f64, half, params.iterations, init)
            {
                let confidence = confidence_of(lambda_min, lambda_max);
                if confidence >= params.min_confidence {
                    samples.push(FlowSample { row, col, v_long: vr, v_lat: vc, confidence });
                }
            }
            col += params.grid_step;
        }
        row += params.grid_step;
    }
    Ok(FlowField { samples })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Departure angle from robust medians of the confident flow samples.
///
/// `lambda = arctan(median(v_lat) / median(v_long))`; when the longitudinal
/// median vanishes the angle saturates at +/- pi/2 with the lateral sign
/// (0 when both vanish). Needs at least 5 samples.
pub fn departure_angle(flow: &FlowField) -> Result<f64> {
    if flow.samples.len() < 5 {
        return Err(Error::InsufficientFlow);
    }
    let m_long = median(flow.samples.iter().map(|s| s.v_long).collect());
    let m_lat = median(flow.samples.iter().map(|s| s.v_lat).collect());
    if m_long.abs() < 1e-6 {
        return Ok(if m_lat > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else if m_lat < 0.0 {
            -std::f64::consts::FRAC_PI_2
        } else {
            0.0
        });
    }
    Ok((m_lat / m_long).atan())
}

/// Warning thresholds.
#[derive(Debug, Clone)]
pub struct WarnParams {
    /// Angle threshold when lane geometry is available, radians.
    pub lambda_threshold: f64,
    /// Fallback threshold when no lane fit exists, radians.
    pub lambda_threshold_unaided: f64,
    /// Curvature gate |b + 3c*x| above which lateral flow is attributed to
    /// the road curving, 1/m.
    pub curvature_threshold: f64,
    /// Probe distance for the curvature gate, meters.
    pub x_probe: f64,
}

impl Default for WarnParams {
    fn default() -> Self {
        WarnParams {
            lambda_threshold: 5f64.to_radians(),
            lambda_threshold_unaided: 10f64.to_radians(),
            curvature_threshold: 0.01,
            x_probe: 10.0,
        }
    }
}

/// Combine the departure angle with ego-lane geometry into a warning.
///
/// With an ego pair available, the curvature gate suppresses warnings on
/// curved road (the curve itself explains the lateral flow); without lane
/// geometry the gate is disabled and a wider threshold applies.
pub fn warn(
    lambda: f64,
    ego: Option<(&LaneCurve, &LaneCurve)>,
    lateral_offset: Option<f64>,
    params: &WarnParams,
) -> DepartureEstimate {
    let (gated, threshold) = match ego {
        Some((left, right)) => {
            let b = 0.5 * (left.b + right.b);
            let c = 0.5 * (left.c + right.c);
            let curvature = (b + 3.0 * c * params.x_probe).abs();
            (curvature > params.curvature_threshold, params.lambda_threshold)
        }
        None => (false, params.lambda_threshold_unaided),
    };
    DepartureEstimate {
        lambda,
        lateral_offset,
        warning: lambda.abs() > threshold && !gated,
        gated_by_curvature: gated,
    }
}
