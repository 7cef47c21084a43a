//! Pixel-wise precision evaluation: PRE = TP / (TP + FP), also restricted to
//! the 20 m / 30 m / 40 m near fields, plus per-frame ego-pair and boundary
//! correctness booleans.

use serde::Serialize;

use crate::harness::scene::{GridGeometry, SceneTruth};
use crate::lanes::LaneCurve;
use crate::{Error, Result};

/// Default lateral match tolerance, meters.
pub const DEFAULT_TOLERANCE_M: f64 = 0.3;

/// Longitudinal range probed by the per-frame correctness booleans, meters.
pub const EVAL_PROBE_RANGE: (f64, f64) = (5.0, 40.0);

/// Wall-clock stage timings, milliseconds.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub ipm: f64,
    pub features: f64,
    pub fit: f64,
    pub segment: f64,
    pub flow: f64,
    pub total: f64,
}

/// Counts restricted to one longitudinal range.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BandCounts {
    pub tp: u64,
    pub fp: u64,
}

impl BandCounts {
    pub fn pre(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }
}

/// Evaluation result for one frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub tp: u64,
    pub fp: u64,
    pub pre: Option<f64>,
    pub pre_20: Option<f64>,
    pub pre_30: Option<f64>,
    pub pre_40: Option<f64>,
    pub correct: bool,
    /// None when the frame carries no boundary truth.
    pub correct_boundary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<StageTimings>,
    #[serde(skip)]
    pub bands: [BandCounts; 4],
}

/// Aggregate over a frame set: counts are summed, PRE recomputed from the
/// sums, rates are frame fractions.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub frames: usize,
    pub tp: u64,
    pub fp: u64,
    pub pre: Option<f64>,
    pub pre_20: Option<f64>,
    pub pre_30: Option<f64>,
    pub pre_40: Option<f64>,
    pub correct_rate: f64,
    pub false_positive_rate: Option<f64>,
    pub correct_boundary: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameReport>,
    pub aggregate: AggregateReport,
}

/// Everything evaluated for one frame.
#[derive(Debug, Clone)]
pub struct EvalInput<'a> {
    pub frame: usize,
    pub curves: &'a [LaneCurve],
    pub boundaries: Option<(LaneCurve, LaneCurve)>,
    pub truth: &'a SceneTruth,
    pub timings_ms: Option<StageTimings>,
}

/// Rasterize curves into a band mask: cells within `tolerance` laterally of
/// any curve at that row, over each curve's longitudinal support.
pub fn rasterize_band(curves: &[LaneCurve], g: &GridGeometry, tolerance: f64) -> Vec<bool> {
    let rows = g.rows();
    let cols = g.cols();
    let mut mask = vec![false; rows * cols];
    for curve in curves {
        for row in 0..rows {
            let x = g.x_of_row(row);
            if x < curve.x_lo - g.resolution || x > curve.x_hi + g.resolution {
                continue;
            }
            let y = curve.eval(x);
            // Columns covering [y - tol, y + tol]; column index grows to
            // the right (decreasing y).
            let c_from = ((g.y_max - (y + tolerance)) / g.resolution - 0.5).ceil().max(0.0) as usize;
            let c_to = ((g.y_max - (y - tolerance)) / g.resolution - 0.5).floor();
            if c_to < 0.0 {
                continue;
            }
            for col in c_from..=(c_to as usize).min(cols - 1) {
                mask[row * cols + col] = true;
            }
        }
    }
    mask
}

/// Count TP and FP between prediction and truth masks.
///
/// A predicted cell overlapping a truth cell is a TP; a predicted cell with
/// no truth cell within `tol_cells` columns on its row is an FP; predicted
/// cells near-but-not-on truth count as neither.
pub fn evaluate_masks(
    pred: &[bool],
    truth: &[bool],
    rows: usize,
    cols: usize,
    tol_cells: usize,
) -> Result<(u64, u64)> {
    if pred.len() != rows * cols || truth.len() != rows * cols {
        return Err(Error::GridMismatch);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    for r in 0..rows {
        for c in 0..cols {
            if !pred[r * cols + c] {
                continue;
            }
            if truth[r * cols + c] {
                tp += 1;
                continue;
            }
            let lo = c.saturating_sub(tol_cells);
            let hi = (c + tol_cells).min(cols - 1);
            let near = (lo..=hi).any(|cc| truth[r * cols + cc]);
            if !near {
                fp += 1;
            }
        }
    }
    Ok((tp, fp))
}

fn eval_cubic(c: &[f64; 4], x: f64) -> f64 {
    c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
}

/// Truth ego pair: the lane curves bracketing y = 0 at the probe distance.
fn truth_ego(truth: &SceneTruth, x_probe: f64) -> Option<([f64; 4], [f64; 4])> {
    let mut left: Option<[f64; 4]> = None;
    let mut right: Option<[f64; 4]> = None;
    for c in &truth.lane_curves {
        let y = eval_cubic(c, x_probe);
        if y > 0.0 {
            if left.is_none_or(|b| y < eval_cubic(&b, x_probe)) {
                left = Some(*c);
            }
        } else if y < 0.0 && right.is_none_or(|b| y > eval_cubic(&b, x_probe)) {
            right = Some(*c);
        }
    }
    left.zip(right)
}

fn pred_ego(curves: &[LaneCurve], x_probe: f64) -> Option<(LaneCurve, LaneCurve)> {
    crate::lanes::ego_lane_and_offset(curves, 0.0, x_probe).ok().map(|(l, r, _)| (l, r))
}

/// Fraction of probe rows where a predicted curve tracks a truth cubic
/// within tolerance (rows outside the prediction's support count against it).
fn match_fraction(pred: &LaneCurve, truth: &[f64; 4], g: &GridGeometry, tolerance: f64) -> f64 {
    let mut total = 0usize;
    let mut matched = 0usize;
    for row in 0..g.rows() {
        let x = g.x_of_row(row);
        if !(EVAL_PROBE_RANGE.0..=EVAL_PROBE_RANGE.1).contains(&x) {
            continue;
        }
        total += 1;
        if x < pred.x_lo - g.resolution || x > pred.x_hi + g.resolution {
            continue;
        }
        if (pred.eval(x) - eval_cubic(truth, x)).abs() <= tolerance {
            matched += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    matched as f64 / total as f64
}

/// Evaluate one frame at the given lateral tolerance (meters).
pub fn evaluate(input: &EvalInput, tolerance: f64) -> Result<FrameReport> {
    let truth = input.truth;
    let g = truth.grid;
    if g.rows() != truth.rows || g.cols() != truth.cols {
        return Err(Error::GridMismatch);
    }
    let pred_mask = rasterize_band(input.curves, &g, tolerance);
    let tol_cells = (tolerance / g.resolution).round() as usize;
    let rows = truth.rows;
    let cols = truth.cols;

    let mut bands = [BandCounts::default(); 4];
    let limits = [20.0, 30.0, 40.0, f64::INFINITY];
    for r in 0..rows {
        let x = g.x_of_row(r);
        for c in 0..cols {
            if !pred_mask[r * cols + c] {
                continue;
            }
            let is_tp = truth.lane_mask[r * cols + c];
            let is_fp = if is_tp {
                false
            } else {
                let lo = c.saturating_sub(tol_cells);
                let hi = (c + tol_cells).min(cols - 1);
                !(lo..=hi).any(|cc| truth.lane_mask[r * cols + cc])
            };
            for (band, &limit) in bands.iter_mut().zip(&limits) {
                if x <= limit {
                    band.tp += is_tp as u64;
                    band.fp += is_fp as u64;
                }
            }
        }
    }

    // Ego-pair correctness: both sides tracked over >= 80% of probe rows.
    let correct = match (truth_ego(truth, crate::lanes::EGO_PROBE_X), pred_ego(input.curves, crate::lanes::EGO_PROBE_X)) {
        (Some((tl, tr)), Some((pl, pr))) => {
            match_fraction(&pl, &tl, &g, tolerance) >= 0.8
                && match_fraction(&pr, &tr, &g, tolerance) >= 0.8
        }
        (None, _) => false,
        (_, None) => false,
    };
    let correct_boundary = input.boundaries.map(|(bl, br)| {
        match_fraction(&bl, &truth.boundary_left, &g, tolerance) >= 0.8
            && match_fraction(&br, &truth.boundary_right, &g, tolerance) >= 0.8
    });

    Ok(FrameReport {
        frame: input.frame,
        tp: bands[3].tp,
        fp: bands[3].fp,
        pre: bands[3].pre(),
        pre_20: bands[0].pre(),
        pre_30: bands[1].pre(),
        pre_40: bands[2].pre(),
        correct,
        correct_boundary,
        timings_ms: input.timings_ms,
        bands,
    })
}

/// Sum frame reports into the aggregate (TP/FP additive, PRE from sums).
pub fn aggregate(frames: Vec<FrameReport>) -> EvalReport {
    let mut bands = [BandCounts::default(); 4];
    let mut correct = 0usize;
    let mut boundary_total = 0usize;
    let mut boundary_ok = 0usize;
    for f in &frames {
        for (acc, b) in bands.iter_mut().zip(&f.bands) {
            acc.tp += b.tp;
            acc.fp += b.fp;
        }
        correct += f.correct as usize;
        if let Some(ok) = f.correct_boundary {
            boundary_total += 1;
            boundary_ok += ok as usize;
        }
    }
    let n = frames.len();
    let aggregate = AggregateReport {
        frames: n,
        tp: bands[3].tp,
        fp: bands[3].fp,
        pre: bands[3].pre(),
        pre_20: bands[0].pre(),
        pre_30: bands[1].pre(),
        pre_40: bands[2].pre(),
        correct_rate: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        false_positive_rate: bands[3].pre().map(|p| 1.0 - p),
        correct_boundary: (boundary_total > 0).then(|| boundary_ok as f64 / boundary_total as f64),
    };
    EvalReport { frames, aggregate }
}

impl EvalReport {
    /// Aligned-column text table, one row per frame plus the aggregate.
    pub fn to_table(&self) -> String {
        let fmt_pct = |v: Option<f64>| match v {
            Some(p) => format!("{:6.2}%", 100.0 * p),
            None => "     --".to_string(),
        };
        let mut out = String::new();
        out.push_str("frame      TP      FP   PRE-20   PRE-30   PRE-40      PRE  correct  boundary\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{:5} {:7} {:7}  {}  {}  {}  {}  {:7} {:9}\n",
                f.frame,
                f.tp,
                f.fp,
                fmt_pct(f.pre_20),
                fmt_pct(f.pre_30),
                fmt_pct(f.pre_40),
                fmt_pct(f.pre),
                if f.correct { "yes" } else { "no" },
                match f.correct_boundary {
                    Some(true) => "yes",
                    Some(false) => "no",
                    None => "--",
                },
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "total {:7} {:7}  {}  {}  {}  {}  {:6.2}% {:8}\n",
            a.tp,
            a.fp,
            fmt_pct(a.pre_20),
            fmt_pct(a.pre_30),
            fmt_pct(a.pre_40),
            fmt_pct(a.pre),
            100.0 * a.correct_rate,
            match a.correct_boundary {
                Some(v) => format!("{:6.2}%", 100.0 * v),
                None => "--".to_string(),
            },
        ));
        out
    }
}
