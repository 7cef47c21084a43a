//! Gap interpolation and sequential RANSAC fitting of cubic lane curves in
//! ground coordinates, plus ego-lane selection and centerline offset.
//!
//! The road model is `Y(X) = y0 + a*X + b*X^2 + c*X^3` with X meters ahead
//! and Y meters lateral (positive left).

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::filters::{FeaturePoint, FeaturePointSet};
use crate::{Error, Result};

/// Fitted cubic lane curve with inlier diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LaneCurve {
    /// Lateral offset at X = 0, meters.
    pub y0: f64,
    /// Linear coefficient, dimensionless.
    pub a: f64,
    /// Quadratic coefficient, 1/m.
    pub b: f64,
    /// Cubic coefficient, 1/m^2.
    pub c: f64,
    pub inlier_count: usize,
    /// RMS residual of the inliers, meters.
    pub inlier_rms: f64,
    /// Longitudinal support [x_lo, x_hi], meters.
    pub x_lo: f64,
    pub x_hi: f64,
}

impl LaneCurve {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.y0 + self.a * x + self.b * x * x + self.c * x * x * x
    }

    /// Local curvature proxy `|b + 3c*x|` used by the departure gate.
    pub fn curvature_at(&self, x: f64) -> f64 {
        (self.b + 3.0 * self.c * x).abs()
    }
}

/// RANSAC controls. `max_curves` is capped at 8.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier tolerance, meters.
    pub inlier_tol: f64,
    pub min_inliers: usize,
    pub max_curves: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 500,
            inlier_tol: 0.15,
            min_inliers: 12,
            max_curves: 8,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_curves > 8 {
            return Err(Error::InvalidInput(format!(
                "max_curves is capped at 8, got {}",
                self.max_curves
            )));
        }
        if self.iterations == 0
            || self.min_inliers < 4
            || !self.inlier_tol.is_finite()
            || self.inlier_tol <= 0.0
        {
            return Err(Error::InvalidInput("degenerate RANSAC config".into()));
        }
        Ok(())
    }
}

/// Controls for gap interpolation and the cluster linking that precedes it.
#[derive(Debug, Clone)]
pub struct InterpolateParams {
    /// Longest gap that will be filled, meters.
    pub max_gap: f64,
    /// Lateral slack when chaining points into one cluster, meters.
    pub cluster_lateral_tol: f64,
    /// Orientation agreement required to link or fill, radians.
    pub phi_max: f64,
}

impl Default for InterpolateParams {
    fn default() -> Self {
        InterpolateParams {
            max_gap: 4.0,
            cluster_lateral_tol: 0.5,
            phi_max: 30f64.to_radians(),
        }
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    let mut d = a - b;
    while d > PI / 2.0 {
        d -= PI;
    }
    while d < -PI / 2.0 {
        d += PI;
    }
    d
}

/// Chain points into lateral clusters and fill dash gaps with samples of the
/// cubic through the two points on each side of the gap.
///
/// A gap is filled only when it is shorter than `max_gap`, both sides
/// provide two support points, and the endpoint orientations (the local
/// gradient directions) agree within `phi_max`. Filled points are flagged
/// `interpolated`.
pub fn interpolate_gaps(points: &FeaturePointSet, params: &InterpolateParams) -> FeaturePointSet {
    let spacing = points.spacing_x.max(1e-6);
    // Greedy chaining in x order: extrapolate each cluster tail along its
    // orientation and take the nearest admissible cluster.
    let mut clusters: Vec<Vec<FeaturePoint>> = Vec::new();
    for p in &points.points {
        let mut best: Option<(usize, f64)> = None;
        for (ci, cluster) in clusters.iter().enumerate() {
            let tail = cluster.last().unwrap();
            let dx = p.x - tail.x;
            if dx < 0.0 || dx > params.max_gap {
                continue;
            }
            if angle_diff(p.orientation, tail.orientation).abs() > params.phi_max {
                continue;
            }
            let predicted = tail.y + tail.orientation.tan() * dx;
            let miss = (p.y - predicted).abs();
            if miss <= params.cluster_lateral_tol && best.is_none_or(|(_, m)| miss < m) {
                best = Some((ci, miss));
            }
        }
        match best {
            Some((ci, _)) => clusters[ci].push(*p),
            None => clusters.push(vec![*p]),
        }
    }

    let mut out = Vec::with_capacity(points.points.len());
    for cluster in &clusters {
        for (i, p) in cluster.iter().enumerate() {
            out.push(*p);
            if i + 2 >= cluster.len() || i == 0 {
                continue;
            }
            let q = &cluster[i + 1];
            let gap = q.x - p.x;
            if gap <= 2.0 * spacing || gap > params.max_gap {
                continue;
            }
            if angle_diff(p.orientation, q.orientation).abs() > params.phi_max {
                continue;
            }
            // Two support points on each side of the gap, and each side
            // must be a locally contiguous run: isolated points (texture
            // noise) are not allowed to seed a bridge.
            let sup = [&cluster[i - 1], p, q, &cluster[i + 2]];
            if (sup[1].x - sup[0].x) > 2.5 * spacing || (sup[3].x - sup[2].x) > 2.5 * spacing {
                continue;
            }
            let xs = [sup[0].x, sup[1].x, sup[2].x, sup[3].x];
            if xs.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-9) {
                continue;
            }
            let coeffs = match cubic_through(&xs, &[sup[0].y, sup[1].y, sup[2].y, sup[3].y]) {
                Some(c) => c,
                None => continue,
            };
            let strength = 0.5 * (p.strength + q.strength);
            let orientation = 0.5 * (p.orientation + q.orientation);
            let mut x = p.x + spacing;
            while x < q.x - 0.5 * spacing {
                let y = coeffs[0] + coeffs[1] * x + coeffs[2] * x * x + coeffs[3] * x * x * x;
                out.push(FeaturePoint { x, y, strength, orientation, interpolated: true });
                x += spacing;
            }
        }
    }
    out.sort_by(|p, q| p.x.partial_cmp(&q.x).unwrap().then(p.y.partial_cmp(&q.y).unwrap()));
    FeaturePointSet {
        points: out,
        spacing_x: points.spacing_x,
        x_max: points.x_max,
        y_max: points.y_max,
    }
}

/// Exact cubic through four points; None when the system is ill-conditioned.
fn cubic_through(xs: &[f64; 4], ys: &[f64; 4]) -> Option<[f64; 4]> {
    let m = Matrix4::from_fn(|r, c| xs[r].powi(c as i32));
    let rhs = Vector4::from_column_slice(ys);
    let svd = m.svd(true, true);
    let cond = svd.singular_values[0] / svd.singular_values[3].max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > 1e12 {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    Some([sol[0], sol[1], sol[2], sol[3]])
}

/// Least-squares cubic on an index subset.
fn least_squares_cubic(points: &[FeaturePoint], idx: &[usize]) -> Option<[f64; 4]> {
    let n = idx.len();
    if n < 4 {
        return None;
    }
    let mut a = DMatrix::zeros(n, 4);
    let mut b = DVector::zeros(n);
    for (row, &i) in idx.iter().enumerate() {
        let x = points[i].x;
        a[(row, 0)] = 1.0;
        a[(row, 1)] = x;
        a[(row, 2)] = x * x;
        a[(row, 3)] = x * x * x;
        b[row] = points[i].y;
    }
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-14).ok()?;
    let out = [sol[0], sol[1], sol[2], sol[3]];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn inliers_of(points: &[FeaturePoint], coeffs: &[f64; 4], tol: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let y = coeffs[0] + coeffs[1] * p.x + coeffs[2] * p.x * p.x + coeffs[3] * p.x.powi(3);
            (y - p.y).abs() <= tol
        })
        .map(|(i, _)| i)
        .collect()
}

fn curve_from(points: &[FeaturePoint], coeffs: [f64; 4], idx: &[usize]) -> LaneCurve {
    let mut rms = 0.0;
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    for &i in idx {
        let p = &points[i];
        let y = coeffs[0] + coeffs[1] * p.x + coeffs[2] * p.x * p.x + coeffs[3] * p.x.powi(3);
        rms += (y - p.y) * (y - p.y);
        x_lo = x_lo.min(p.x);
        x_hi = x_hi.max(p.x);
    }
    LaneCurve {
        y0: coeffs[0],
        a: coeffs[1],
        b: coeffs[2],
        c: coeffs[3],
        inlier_count: idx.len(),
        inlier_rms: (rms / idx.len() as f64).sqrt(),
        x_lo,
        x_hi,
    }
}

/// Fit one cubic with RANSAC (minimal samples of 4 points with distinct x),
/// then refit by least squares on the best trial's inliers.
///
/// Deterministic for a fixed seed: trial t draws from an independent RNG
/// stream keyed by (seed, t), so execution order cannot matter. Degenerate
/// samples (near-singular 4x4 systems, condition > 1e12) do not consume
/// iterations, up to a 10x attempt cap.
pub fn ransac_fit_one(points: &FeaturePointSet, cfg: &RansacConfig) -> Result<LaneCurve> {
    cfg.validate()?;
    let pts = &points.points;
    if pts.len() < 4 || pts.len() < cfg.min_inliers {
        return Err(Error::NoModel);
    }
    let mut best: Option<(usize, f64, [f64; 4], Vec<usize>)> = None;
    let mut valid_trials = 0usize;
    let mut attempt = 0u64;
    let attempt_cap = cfg.iterations as u64 * 10;
    while valid_trials < cfg.iterations && attempt < attempt_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(attempt + 1);
        attempt += 1;
        let pick = sample(&mut rng, pts.len(), 4).into_vec();
        let xs = [pts[pick[0]].x, pts[pick[1]].x, pts[pick[2]].x, pts[pick[3]].x];
        let ys = [pts[pick[0]].y, pts[pick[1]].y, pts[pick[2]].y, pts[pick[3]].y];
        let mut distinct = true;
        for i in 0..4 {
            for j in i + 1..4 {
                if (xs[i] - xs[j]).abs() < 1e-9 {
                    distinct = false;
                }
            }
        }
        if !distinct {
            continue; // degenerate draw, iteration not consumed
        }
        let coeffs = match cubic_through(&xs, &ys) {
            Some(c) => c,
            None => continue, // near-singular, iteration not consumed
        };
        valid_trials += 1;
        let idx = inliers_of(pts, &coeffs, cfg.inlier_tol);
        let rms: f64 = idx
            .iter()
            .map(|&i| {
                let p = &pts[i];
                let y = coeffs[0] + coeffs[1] * p.x + coeffs[2] * p.x * p.x + coeffs[3] * p.x.powi(3);
                (y - p.y) * (y - p.y)
            })
            .sum();
        let better = match &best {
            None => true,
            Some((count, best_rms, _, _)) => {
                idx.len() > *count || (idx.len() == *count && rms < *best_rms)
            }
        };
        if better {
            best = Some((idx.len(), rms, coeffs, idx));
        }
    }
    let (_, _, coeffs, idx) = best.ok_or(Error::NoModel)?;
    if idx.len() < cfg.min_inliers {
        return Err(Error::NoModel);
    }
    let refit = least_squares_cubic(pts, &idx).unwrap_or(coeffs);
    // Report inliers against the refit curve so the published diagnostics
    // are consistent with the published coefficients.
    let final_idx = inliers_of(pts, &refit, cfg.inlier_tol);
    if final_idx.len() < cfg.min_inliers {
        return Err(Error::NoModel);
    }
    Ok(curve_from(pts, refit, &final_idx))
}

/// Sequential RANSAC: fit, remove inliers, repeat. At most `max_curves`
/// (hard cap 8) curves come back, sorted by y0; curves closer than 0.5 m
/// laterally at x = 10 m are merged, keeping the higher inlier count.
pub fn fit_lanes(points: &FeaturePointSet, cfg: &RansacConfig) -> Result<Vec<LaneCurve>> {
    cfg.validate()?;
    let mut remaining = points.clone();
    let mut curves: Vec<LaneCurve> = Vec::new();
    let mut round = 0u64;
    let mut rejections = 0usize;
    while curves.len() < cfg.max_curves.min(8) && rejections < 8 {
        // Decorrelate rounds without coupling them to point indices.
        let round_cfg = RansacConfig {
            rng_seed: cfg.rng_seed.wrapping_add(round.wrapping_mul(0x9E3779B97F4A7C15)),
            ..cfg.clone()
        };
        round += 1;
        let curve = match ransac_fit_one(&remaining, &round_cfg) {
            Ok(c) => c,
            Err(Error::NoModel) => break,
            Err(e) => return Err(e),
        };
        let coeffs = [curve.y0, curve.a, curve.b, curve.c];
        let eval =
            |p: &FeaturePoint| coeffs[0] + coeffs[1] * p.x + coeffs[2] * p.x * p.x + coeffs[3] * p.x.powi(3);
        // Interpolated points may densify a dashed marking but never carry
        // a lane by themselves: without enough measured support the fit is
        // a phantom threaded through synthetic bridges, and only sheds its
        // own inliers.
        let measured = remaining
            .points
            .iter()
            .filter(|p| !p.interpolated && (eval(p) - p.y).abs() <= cfg.inlier_tol)
            .count();
        if measured < cfg.min_inliers {
            remaining.points.retain(|p| (eval(p) - p.y).abs() > cfg.inlier_tol);
            rejections += 1;
            continue;
        }
        // Strip the accepted curve's whole merge neighborhood, not just its
        // inliers: a curve built from the leftovers inside MERGE_TOL would
        // be merged into this one anyway, so such points can only ever seed
        // phantom duplicates.
        remaining.points.retain(|p| (eval(p) - p.y).abs() > MERGE_TOL);
        curves.push(curve);
    }
    curves.sort_by(|a, b| a.eval(MERGE_PROBE_X).partial_cmp(&b.eval(MERGE_PROBE_X)).unwrap());
    // Merge near-duplicates (lateral separation under 0.5 m at 10 m).
    let mut merged: Vec<LaneCurve> = Vec::new();
    for c in curves {
        match merged.last_mut() {
            Some(last) if (last.eval(MERGE_PROBE_X) - c.eval(MERGE_PROBE_X)).abs() < MERGE_TOL => {
                if c.inlier_count > last.inlier_count {
                    *last = c;
                }
            }
            _ => merged.push(c),
        }
    }
    merged.sort_by(|a, b| a.y0.partial_cmp(&b.y0).unwrap());
    Ok(merged)
}

const MERGE_PROBE_X: f64 = 10.0;
const MERGE_TOL: f64 = 0.5;

/// Default forward distance at which the ego pair is probed, meters.
pub const EGO_PROBE_X: f64 = 5.0;

/// Pick the curves bracketing the vehicle and the centerline offset.
///
/// `offset = midpoint(left, right) - vehicle_y` at the probe distance; a
/// positive value puts the lane center to the vehicle's left.
pub fn ego_lane_and_offset(
    curves: &[LaneCurve],
    vehicle_y: f64,
    x_probe: f64,
) -> Result<(LaneCurve, LaneCurve, f64)> {
    let mut left: Option<(f64, &LaneCurve)> = None;
    let mut right: Option<(f64, &LaneCurve)> = None;
    for c in curves {
        let y = c.eval(x_probe) - vehicle_y;
        if y < 0.0 {
            // Nearest curve on the right-hand side (negative lateral).
            if right.is_none_or(|(best, _)| y > best) {
                right = Some((y, c));
            }
        } else if y > 0.0 && left.is_none_or(|(best, _)| y < best) {
            left = Some((y, c));
        }
    }
    match (left, right) {
        (Some((_, l)), Some((_, r))) => {
            let mid = 0.5 * (l.eval(x_probe) + r.eval(x_probe));
            // By convention the returned pair is (curve left of the vehicle,
            // curve right of the vehicle) = (positive side, negative side).
            Ok((*l, *r, mid - vehicle_y))
        }
        _ => Err(Error::NoEgoLane),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn point_set(points: Vec<FeaturePoint>) -> FeaturePointSet {
        FeaturePointSet { points, spacing_x: 0.1, x_max: 45.0, y_max: 10.0 }
    }

    fn pt(x: f64, y: f64) -> FeaturePoint {
        FeaturePoint { x, y, strength: 1.0, orientation: 0.0, interpolated: false }
    }

    fn planted(x: f64, c: &[f64; 4]) -> f64 {
        c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
    }

    #[test]
    fn collinear_gap_is_filled_on_the_line() {
        // Two dashes of y = 0.2x - 1, gap of 2 m, max_gap 3.
        let mut pts = Vec::new();
        let orient = 0.2f64.atan();
        for i in 0..10 {
            let x = i as f64 * 0.1;
            pts.push(FeaturePoint { x, y: 0.2 * x - 1.0, strength: 1.0, orientation: orient, interpolated: false });
        }
        for i in 0..10 {
            let x = 2.9 + i as f64 * 0.1;
            pts.push(FeaturePoint { x, y: 0.2 * x - 1.0, strength: 1.0, orientation: orient, interpolated: false });
        }
        let filled = interpolate_gaps(&point_set(pts), &InterpolateParams::default());
        let synth: Vec<_> = filled.points.iter().filter(|p| p.interpolated).collect();
        assert!(!synth.is_empty(), "gap should be filled");
        for p in synth {
            assert!((p.y - (0.2 * p.x - 1.0)).abs() < 1e-6);
            assert!(p.x > 0.9 && p.x < 2.9);
        }
    }

    #[test]
    fn mismatched_orientation_blocks_filling() {
        let mut pts = Vec::new();
        for i in 0..6 {
            let x = i as f64 * 0.1;
            pts.push(FeaturePoint { x, y: 0.0, strength: 1.0, orientation: 0.0, interpolated: false });
        }
        for i in 0..6 {
            let x = 2.5 + i as f64 * 0.1;
            pts.push(FeaturePoint {
                x,
                y: 0.0,
                strength: 1.0,
                orientation: 45f64.to_radians(),
                interpolated: false,
            });
        }
        let filled = interpolate_gaps(&point_set(pts), &InterpolateParams::default());
        assert!(filled.points.iter().all(|p| !p.interpolated));
    }

    #[test]
    fn dashed_cubic_recovers_continuous_density() {
        let coeffs = [-1.75, 0.02, 0.003, -0.00004];
        let mut dashed = Vec::new();
        let mut continuous = 0usize;
        let mut x = 0.0;
        while x <= 45.0 {
            continuous += 1;
            let on = ((x / 3.0) as usize).is_multiple_of(2); // 3 m on, 3 m off
            if on {
                let slope = coeffs[1] + 2.0 * coeffs[2] * x + 3.0 * coeffs[3] * x * x;
                dashed.push(FeaturePoint {
                    x,
                    y: planted(x, &coeffs),
                    strength: 1.0,
                    orientation: slope.atan(),
                    interpolated: false,
                });
            }
            x += 0.1;
        }
        let filled = interpolate_gaps(&point_set(dashed), &InterpolateParams::default());
        let got = filled.points.len() as f64;
        assert!(
            (got - continuous as f64).abs() / continuous as f64 <= 0.05,
            "{} filled vs {} continuous",
            got,
            continuous
        );
    }

    #[test]
    fn noiseless_line_recovered_exactly() {
        let pts: Vec<_> = (0..50).map(|i| pt(i as f64 * 0.9, 1.0 + 0.5 * (i as f64 * 0.9))).collect();
        let curve = ransac_fit_one(&point_set(pts), &RansacConfig::default()).unwrap();
        assert_eq!(curve.inlier_count, 50);
        assert!((curve.y0 - 1.0).abs() < 1e-9);
        assert!((curve.a - 0.5).abs() < 1e-9);
        assert!(curve.b.abs() < 1e-9);
        assert!(curve.c.abs() < 1e-9);
    }

    #[test]
    fn three_points_is_no_model() {
        let pts = vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(2.0, 2.0)];
        assert!(matches!(
            ransac_fit_one(&point_set(pts), &RansacConfig::default()),
            Err(Error::NoModel)
        ));
    }

    /// Planted cubic with noise and outliers, shared with the acceptance run.
    pub(crate) fn planted_cubic_set(seed: u64) -> (FeaturePointSet, [f64; 4]) {
        let coeffs = [-1.75, 0.02, 0.003, -0.00004];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(7));
        let n = 150;
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let x = i as f64 * (45.0 / (n - 1) as f64);
            if rng.gen::<f64>() < 0.30 {
                pts.push(pt(x, rng.gen_range(-10.0..10.0)));
            } else {
                // Box-Muller normal, sigma = 0.05.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen::<f64>();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                pts.push(pt(x, planted(x, &coeffs) + 0.05 * z));
            }
        }
        (point_set(pts), coeffs)
    }

    #[test]
    fn planted_cubic_with_outliers_seed7() {
        let (set, coeffs) = planted_cubic_set(7);
        let cfg = RansacConfig { rng_seed: 7, ..Default::default() };
        let curve = ransac_fit_one(&set, &cfg).unwrap();
        let mut max_dev = 0.0f64;
        let mut x = 0.0;
        while x <= 45.0 {
            max_dev = max_dev.max((curve.eval(x) - planted(x, &coeffs)).abs());
            x += 0.25;
        }
        assert!(max_dev < 0.05, "max deviation {max_dev}");
    }

    #[test]
    fn determinism_bitwise() {
        let (set, _) = planted_cubic_set(3);
        let cfg = RansacConfig { rng_seed: 11, ..Default::default() };
        let a = ransac_fit_one(&set, &cfg).unwrap();
        let b = ransac_fit_one(&set, &cfg).unwrap();
        assert_eq!(a.y0.to_bits(), b.y0.to_bits());
        assert_eq!(a.a.to_bits(), b.a.to_bits());
        assert_eq!(a.b.to_bits(), b.b.to_bits());
        assert_eq!(a.c.to_bits(), b.c.to_bits());
    }

    #[test]
    fn reported_inliers_satisfy_tolerance() {
        let (set, _) = planted_cubic_set(5);
        let cfg = RansacConfig { rng_seed: 5, ..Default::default() };
        let curve = ransac_fit_one(&set, &cfg).unwrap();
        let within = set
            .points
            .iter()
            .filter(|p| (curve.eval(p.x) - p.y).abs() <= cfg.inlier_tol)
            .count();
        assert_eq!(curve.inlier_count, within);
    }

    #[test]
    fn strengths_do_not_affect_the_fit() {
        let (mut set, _) = planted_cubic_set(9);
        let cfg = RansacConfig { rng_seed: 2, ..Default::default() };
        let a = ransac_fit_one(&set, &cfg).unwrap();
        for p in &mut set.points {
            p.strength *= 123.0;
        }
        let b = ransac_fit_one(&set, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn parallel_lines_set(count: usize) -> FeaturePointSet {
        let mut pts = Vec::new();
        for li in 0..count {
            let y0 = -7.0 + 1.6 * li as f64;
            for i in 0..100 {
                let x = i as f64 * 0.45;
                pts.push(pt(x, y0));
            }
        }
        point_set(pts)
    }

    #[test]
    fn four_planted_lines_found() {
        let mut pts = Vec::new();
        for &y0 in &[-5.25, -1.75, 1.75, 5.25] {
            for i in 0..120 {
                let x = i as f64 * 0.35;
                pts.push(pt(x, y0 + 0.01 * x));
            }
        }
        let curves = fit_lanes(&point_set(pts), &RansacConfig::default()).unwrap();
        assert_eq!(curves.len(), 4);
        for (c, &y0) in curves.iter().zip(&[-5.25, -1.75, 1.75, 5.25]) {
            let mut dev = 0.0f64;
            for i in 0..=45 {
                let x = i as f64;
                dev += (c.eval(x) - (y0 + 0.01 * x)).abs();
            }
            assert!(dev / 46.0 < 0.1, "mean deviation {}", dev / 46.0);
        }
    }

    #[test]
    fn empty_points_give_empty_list() {
        let curves = fit_lanes(&point_set(vec![]), &RansacConfig::default()).unwrap();
        assert!(curves.is_empty());
    }

    #[test]
    fn ten_lines_capped_at_eight() {
        let curves = fit_lanes(&parallel_lines_set(10), &RansacConfig::default()).unwrap();
        assert!(curves.len() <= 8, "got {}", curves.len());
    }

    #[test]
    fn rerun_on_cleaned_points_is_stable() {
        let (set, _) = planted_cubic_set(21);
        let cfg = RansacConfig { rng_seed: 1, ..Default::default() };
        let first = fit_lanes(&set, &cfg).unwrap();
        let cleaned: Vec<_> = set
            .points
            .iter()
            .filter(|p| first.iter().any(|c| (c.eval(p.x) - p.y).abs() <= cfg.inlier_tol))
            .copied()
            .collect();
        let second = fit_lanes(&point_set(cleaned), &cfg).unwrap();
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert!((a.eval(10.0) - b.eval(10.0)).abs() < 0.1);
        }
    }

    fn flat_curve(y0: f64) -> LaneCurve {
        LaneCurve { y0, a: 0.0, b: 0.0, c: 0.0, inlier_count: 50, inlier_rms: 0.0, x_lo: 0.0, x_hi: 45.0 }
    }

    #[test]
    fn symmetric_lane_offset_zero() {
        let curves = [flat_curve(-1.75), flat_curve(1.75)];
        let (l, r, off) = ego_lane_and_offset(&curves, 0.0, EGO_PROBE_X).unwrap();
        assert_eq!(l.y0, 1.75);
        assert_eq!(r.y0, -1.75);
        assert_eq!(off, 0.0);
    }

    #[test]
    fn asymmetric_lane_offset() {
        let curves = [flat_curve(-1.0), flat_curve(2.5)];
        let (_, _, off) = ego_lane_and_offset(&curves, 0.0, EGO_PROBE_X).unwrap();
        assert!((off - 0.75).abs() < 1e-12);
    }

    #[test]
    fn no_straddling_pair_is_error() {
        let curves = [flat_curve(1.0), flat_curve(3.0)];
        assert!(matches!(
            ego_lane_and_offset(&curves, 0.0, EGO_PROBE_X),
            Err(Error::NoEgoLane)
        ));
    }
}
