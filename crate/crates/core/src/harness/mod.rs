//! Synthetic road scenes with exact ground truth, dataset ingestion, and the
//! pixel-wise precision evaluation protocol.

mod dataset;
mod eval;
mod scene;

pub use dataset::{ingest_dataset, FrameRecord};
pub use eval::{
    aggregate, evaluate, evaluate_masks, rasterize_band, AggregateReport, BandCounts, EvalInput,
    EvalReport, FrameReport, StageTimings, DEFAULT_TOLERANCE_M, EVAL_PROBE_RANGE,
};
pub use scene::{
    render_scene, shift_cubic, GridGeometry, LaneSpec, ObstacleSpec, SceneSpec, SceneTruth,
    ShadowBand,
};
