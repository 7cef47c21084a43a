//! Full per-frame detection pipeline: color preprocessing, bird's-eye
//! remap, feature extraction, lane fitting, segmentation boundaries, and
//! departure estimation, with per-stage wall-clock timings.

use std::time::Instant;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::departure::{departure_angle, estimate_flow, warn, FlowParams, WarnParams};
use crate::filters::{extract_features, make_bank, ExtractParams, FilterBank};
use crate::harness::StageTimings;
use crate::imgcore::{illuminant_invariant, rgb_to_lab, to_gray, Image};
use crate::ipm::{CameraModel, IpmGrid, Projector};
use crate::lanes::{ego_lane_and_offset, fit_lanes, interpolate_gaps, InterpolateParams, LaneCurve};
use crate::segmentation::{
    classify, em_refine, extract_boundaries, GmmModel, LabelMask, CLASS_ROAD, CLASS_SCENE,
};
use crate::{Error, Result};

/// Per-frame intermediate products needed by the next frame (optical flow
/// runs between consecutive bird's-eye planes).
#[derive(Debug, Clone)]
pub struct FramePrep {
    /// Shadow-attenuated feature plane on the bird's-eye grid.
    pub inv_grid: IpmGrid,
    /// Plain luminance on the grid; optical flow wants unretouched texture.
    pub gray_grid: IpmGrid,
    /// Lab triple on the grid, with the invariant plane standing in for L
    /// (scaled to the L range).
    pub feat_grids: [IpmGrid; 3],
}

/// One fitted curve in the JSON record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveRecord {
    pub y0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub inliers: usize,
    pub rms: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl From<&LaneCurve> for CurveRecord {
    fn from(c: &LaneCurve) -> Self {
        CurveRecord {
            y0: c.y0,
            a: c.a,
            b: c.b,
            c: c.c,
            inliers: c.inlier_count,
            rms: c.inlier_rms,
            x_lo: c.x_lo,
            x_hi: c.x_hi,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryRecord {
    pub left: CurveRecord,
    pub right: CurveRecord,
}

/// Schema-versioned per-frame output record (one JSON line in batch mode).
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecordJson {
    pub v: u32,
    pub frame: usize,
    pub curves: Vec<CurveRecord>,
    pub offset_m: Option<f64>,
    pub boundaries: Option<BoundaryRecord>,
    pub lambda_deg: Option<f64>,
    pub warning: bool,
    pub gated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<StageTimings>,
}

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Full result of one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub curves: Vec<LaneCurve>,
    pub ego: Option<(LaneCurve, LaneCurve)>,
    pub offset: Option<f64>,
    pub boundaries: Option<(LaneCurve, LaneCurve)>,
    pub label_mask: Option<LabelMask>,
    pub lambda: Option<f64>,
    pub warning: bool,
    pub gated: bool,
    pub timings: StageTimings,
}

impl FrameOutput {
    pub fn to_record(&self, frame: usize, with_timings: bool) -> FrameRecordJson {
        FrameRecordJson {
            v: RECORD_SCHEMA_VERSION,
            frame,
            curves: self.curves.iter().map(CurveRecord::from).collect(),
            offset_m: self.offset,
            boundaries: self
                .boundaries
                .map(|(l, r)| BoundaryRecord { left: (&l).into(), right: (&r).into() }),
            lambda_deg: self.lambda.map(f64::to_degrees),
            warning: self.warning,
            gated: self.gated,
            timings_ms: with_timings.then_some(self.timings),
        }
    }
}

/// Reusable pipeline state for one camera + configuration.
pub struct Pipeline {
    pub cam: CameraModel,
    pub cfg: PipelineConfig,
    bank: FilterBank,
    projector: Projector,
    /// Initial mixture from the stats sidecar, when configured.
    init_model: Option<GmmModel>,
}

impl Pipeline {
    pub fn new(cam: CameraModel, cfg: PipelineConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let radius = cfg.radius.unwrap_or_else(|| crate::filters::default_radius(cfg.sigma));
        let bank = make_bank(cfg.sigma, radius, cfg.sign_convention)?;
        let projector = Projector::new(&cam, cfg.grid_resolution, cfg.grid_x_max, cfg.grid_y_max)?;
        let init_model = match &cfg.gmm_stats {
            Some(path) => Some(crate::segmentation::read_stats(path)?),
            None => None,
        };
        Ok(Pipeline { cam, cfg, bank, projector, init_model })
    }

    /// Stage 1: color conversion and bird's-eye remap of one frame.
    pub fn prepare(&self, img: &Image) -> Result<(FramePrep, f64)> {
        let t0 = Instant::now();
        let lab = rgb_to_lab(img)?;
        let inv = illuminant_invariant(&lab);
        let inv_grid = self.projector.resample(&inv)?;
        let gray_grid = self.projector.resample(&to_gray(img)?)?;
        let mut l_like = inv.clone();
        for v in &mut l_like.data {
            *v *= 100.0;
        }
        let feat_grids = [
            self.projector.resample(&l_like)?,
            self.projector.resample(&lab.a)?,
            self.projector.resample(&lab.b)?,
        ];
        Ok((FramePrep { inv_grid, gray_grid, feat_grids }, t0.elapsed().as_secs_f64() * 1e3))
    }

    /// Deterministic positional fallback when no stats sidecar is set: the
    /// near center of the grid seeds the road class, the outer columns seed
    /// the scene class, and the obstacle class starts between them, wide.
    fn heuristic_init(&self, prep: &FramePrep) -> Option<GmmModel> {
        let g = &prep.feat_grids[0];
        let mut road = [vec![], vec![], vec![]];
        let mut scene = [vec![], vec![], vec![]];
        for r in 0..g.rows() {
            let x = g.x_of_row(r);
            for c in 0..g.cols() {
                if !g.is_valid(r, c) {
                    continue;
                }
                let y = g.y_of_col(c);
                let bucket = if (3.0..=15.0).contains(&x) && y.abs() <= 1.2 {
                    &mut road
                } else if (3.0..=20.0).contains(&x) && y.abs() >= g.y_max - 1.5 {
                    &mut scene
                } else {
                    continue;
                };
                for (k, acc) in bucket.iter_mut().enumerate() {
                    acc.push(prep.feat_grids[k].cells.get(r, c));
                }
            }
        }
        if road[0].len() < 30 || scene[0].len() < 30 {
            return None;
        }
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.max(crate::segmentation::VAR_FLOOR))
        };
        let mut model = GmmModel {
            priors: [0.6, 0.3, 0.1],
            means: [[0.0; 3]; 3],
            vars: [[0.0; 3]; 3],
        };
        for k in 0..3 {
            let (rm, rv) = stats(&road[k]);
            let (sm, sv) = stats(&scene[k]);
            model.means[CLASS_ROAD as usize][k] = rm;
            model.vars[CLASS_ROAD as usize][k] = rv;
            model.means[CLASS_SCENE as usize][k] = sm;
            model.vars[CLASS_SCENE as usize][k] = sv;
            // Obstacles: unknown appearance; start midway with wide spread.
            model.means[2][k] = 0.5 * (rm + sm);
            model.vars[2][k] = (rm - sm) * (rm - sm) + 25.0;
        }
        Some(model)
    }

    fn segment(&self, prep: &FramePrep) -> Result<(LabelMask, Option<(LaneCurve, LaneCurve)>)> {
        let model0 = match (&self.init_model, self.heuristic_init(prep)) {
            (Some(m), _) => m.clone(),
            (None, Some(m)) => m,
            (None, None) => return Err(Error::NoRoad),
        };
        // EM on a deterministic stride subsample of the valid cells.
        let g = &prep.feat_grids[0];
        let mut pixels = Vec::new();
        let n_valid = g.valid.iter().filter(|&&v| v).count();
        let stride = (n_valid / self.cfg.em_subsample).max(1);
        let mut seen = 0usize;
        for i in 0..g.valid.len() {
            if !g.valid[i] {
                continue;
            }
            if seen.is_multiple_of(stride) {
                pixels.push([
                    prep.feat_grids[0].cells.data[i],
                    prep.feat_grids[1].cells.data[i],
                    prep.feat_grids[2].cells.data[i],
                ]);
            }
            seen += 1;
        }
        let (model, _) = em_refine(&model0, &pixels, self.cfg.em_max_iters, self.cfg.em_rel_tol)?;
        let mask =
            classify(&model, &[&prep.feat_grids[0], &prep.feat_grids[1], &prep.feat_grids[2]])?;
        let boundaries = extract_boundaries(&mask, &self.cfg.ransac).ok();
        Ok((mask, boundaries))
    }

    /// Stages 2..n on a prepared frame. `prev` feeds the optical-flow stage.
    pub fn detect(&self, prep: &FramePrep, prev: Option<&FramePrep>) -> Result<FrameOutput> {
        let total0 = Instant::now();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let extraction = extract_features(
            &prep.inv_grid,
            &self.bank,
            &ExtractParams {
                steer_angle: 0.0,
                w2: self.cfg.w2,
                w4: self.cfg.w4,
                k: self.cfg.k,
                phi_max: self.cfg.phi_max,
                ..Default::default()
            },
        );
        timings.features = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let interp = interpolate_gaps(
            &extraction.points,
            &InterpolateParams { max_gap: self.cfg.max_gap, phi_max: self.cfg.phi_max, ..Default::default() },
        );
        let curves = fit_lanes(&interp, &self.cfg.ransac)?;
        let (ego, offset) = match ego_lane_and_offset(&curves, 0.0, self.cfg.ego_probe_x) {
            Ok((l, r, off)) => (Some((l, r)), Some(off)),
            Err(Error::NoEgoLane) => (None, None),
            Err(e) => return Err(e),
        };
        timings.fit = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let (label_mask, boundaries) = match self.segment(prep) {
            Ok((mask, b)) => (Some(mask), b),
            Err(_) => (None, None),
        };
        timings.segment = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        // Flow tolerates no fill values (static padding drags estimates
        // toward zero), so it runs on the all-valid near-field core.
        let lambda = match (prev, prep.gray_grid.valid_core()) {
            (Some(p), Some((core_rows, core_cols))) => {
                let flow = estimate_flow(
                    &p.gray_grid.crop(core_rows.clone(), core_cols.clone()),
                    &prep.gray_grid.crop(core_rows, core_cols),
                    &FlowParams {
                        grid_step: self.cfg.flow_grid_step,
                        window: self.cfg.flow_window,
                        min_confidence: self.cfg.flow_min_confidence,
                        ..Default::default()
                    },
                )?;
                departure_angle(&flow).ok()
            }
            _ => None,
        };
        timings.flow = t.elapsed().as_secs_f64() * 1e3;

        let (warning, gated) = match lambda {
            Some(lambda) => {
                let est = warn(
                    lambda,
                    ego.as_ref().map(|(l, r)| (l, r)),
                    offset,
                    &WarnParams {
                        lambda_threshold: self.cfg.lambda_threshold,
                        lambda_threshold_unaided: self.cfg.lambda_threshold_unaided,
                        curvature_threshold: self.cfg.curvature_threshold,
                        x_probe: self.cfg.curvature_probe_x,
                    },
                );
                (est.warning, est.gated_by_curvature)
            }
            None => (false, false),
        };

        timings.total = total0.elapsed().as_secs_f64() * 1e3;
        Ok(FrameOutput {
            curves,
            ego,
            offset,
            boundaries,
            label_mask,
            lambda,
            warning,
            gated,
            timings,
        })
    }

    /// Convenience wrapper: prepare + detect one frame.
    pub fn run_frame(&self, img: &Image, prev: Option<&FramePrep>) -> Result<(FrameOutput, FramePrep)> {
        let (prep, ipm_ms) = self.prepare(img)?;
        let mut out = self.detect(&prep, prev)?;
        out.timings.ipm = ipm_ms;
        out.timings.total += ipm_ms;
        Ok((out, prep))
    }
}
