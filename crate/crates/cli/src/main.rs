//! Command-line frontend: `lanekit <ipm|detect|segment|departure|synth|eval>`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 produced no
//! output (every frame failed). Reproducibility rules: configuration comes
//! from flags and config files only (no environment variables), and batch
//! output is byte-identical regardless of `--threads`.

mod scenefile;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lanekit::config::{load_camera, save_camera, PipelineConfig};
use lanekit::harness::{
    aggregate, evaluate, ingest_dataset, EvalInput, GridGeometry, SceneTruth,
};
use lanekit::imgcore::{
    plane_to_u8, plane_to_u8_normalized, read_any, read_pgm, write_pgm, write_ppm, Image,
};
use lanekit::ipm::{build_ipm, CameraModel};
use lanekit::lanes::LaneCurve;
use lanekit::pipeline::{FramePrep, Pipeline};
use lanekit::Error as LkError;

#[derive(Parser)]
#[command(name = "lanekit", version, about = "Lane detection and departure warning toolkit")]
struct Cli {
    /// Worker threads for batch processing (0 = all cores). Output does not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config file (flat key = value). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Camera config file; overrides the config's `camera` key and any
    /// dataset-local camera.cfg.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on fitted curves per frame (<= 8).
    #[arg(long)]
    max_curves: Option<usize>,
    /// Write intermediate planes (bird's-eye view, responses, labels) here.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Remap one frame to the bird's-eye ground plane and write it as PGM.
    Ipm {
        #[command(flatten)]
        pipeline: PipelineArgs,
        input: PathBuf,
        /// Output PGM path.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the full detection pipeline over a frame or a dataset directory;
    /// one JSON record per line on stdout.
    Detect {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Frame file or dataset directory.
        input: PathBuf,
        /// Append per-stage timings to each record (breaks byte-for-byte
        /// reproducibility across runs).
        #[arg(long)]
        timings: bool,
    },
    /// Segment frames into road / scene / obstacle label masks (PGM).
    Segment {
        #[command(flatten)]
        pipeline: PipelineArgs,
        input: PathBuf,
        /// Output directory for label masks.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Departure angles over a frame sequence; one JSON record per line.
    Departure {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Dataset directory.
        input: PathBuf,
    },
    /// Render a synthetic scene with ground truth into a directory.
    Synth {
        /// Scene spec file (flat key = value).
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// RNG seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score detection output against dataset truth.
    Eval {
        /// JSON-lines predictions from `detect`.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory with truth sidecars.
        #[arg(long)]
        truth: PathBuf,
        /// Lateral match tolerance, meters.
        #[arg(long, default_value_t = lanekit::harness::DEFAULT_TOLERANCE_M)]
        tolerance: f64,
        /// Report directory (report.json, report.txt).
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(lk) = err.downcast_ref::<LkError>() {
        return match lk {
            LkError::Config { .. } | LkError::InvalidInput(_) | LkError::MissingClass(_) => 2,
            LkError::Io(_)
            | LkError::MissingCamera
            | LkError::MalformedTruth { .. } => 3,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let result = pool.install(|| match cli.command {
        Command::Ipm { pipeline, input, out } => cmd_ipm(&pipeline, &input, &out),
        Command::Detect { pipeline, input, timings } => cmd_detect(&pipeline, &input, timings),
        Command::Segment { pipeline, input, out } => cmd_segment(&pipeline, &input, &out),
        Command::Departure { pipeline, input } => cmd_departure(&pipeline, &input),
        Command::Synth { spec, out, seed } => cmd_synth(&spec, &out, seed),
        Command::Eval { pred, truth, tolerance, out } => cmd_eval(&pred, &truth, tolerance, &out),
    });
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Load pipeline config + camera, honoring flag/config/dataset precedence.
fn load_setup(
    args: &PipelineArgs,
    dataset_cam: Option<CameraModel>,
) -> anyhow::Result<(PipelineConfig, CameraModel)> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
        cfg.ransac.rng_seed = seed;
    }
    if let Some(mc) = args.max_curves {
        cfg.ransac.max_curves = mc;
        cfg.ransac.validate()?;
    }
    let cam = if let Some(path) = &args.camera {
        load_camera(path)?
    } else if let Some(path) = &cfg.camera {
        load_camera(path)?
    } else if let Some(cam) = dataset_cam {
        cam
    } else {
        anyhow::bail!(LkError::Config {
            path: "<args>".into(),
            msg: "no camera: pass --camera, set `camera` in the config, or use a dataset dir"
                .into(),
        });
    };
    Ok((cfg, cam))
}

fn cmd_ipm(args: &PipelineArgs, input: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let (cfg, cam) = load_setup(args, None)?;
    let img = read_any(input)?;
    let gray = lanekit::imgcore::to_gray(&img)?;
    let grid = build_ipm(&cam, &gray, cfg.grid_resolution, cfg.grid_x_max, cfg.grid_y_max)?;
    write_pgm(out, &plane_to_u8(&grid.cells))?;
    Ok(ExitCode::SUCCESS)
}

/// Ordered (stem, path) pairs of a batch run.
type FrameList = Vec<(String, PathBuf)>;

/// Frames of a batch run: either one file or a dataset directory.
fn gather_frames(input: &Path) -> anyhow::Result<(Option<CameraModel>, FrameList)> {
    if input.is_dir() {
        let (cam, records) = ingest_dataset(input)?;
        Ok((Some(cam), records.into_iter().map(|r| (r.stem, r.image_path)).collect()))
    } else {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("frame")
            .to_string();
        Ok((None, vec![(stem, input.to_path_buf())]))
    }
}

struct BatchOutcome {
    prepared: Vec<anyhow::Result<(FramePrep, f64)>>,
}

/// Prepare all frames in parallel (order-preserving).
fn prepare_all(pipeline: &Pipeline, frames: &[(String, PathBuf)]) -> BatchOutcome {
    use rayon::prelude::*;
    let prepared = frames
        .par_iter()
        .map(|(_, path)| {
            let img = read_any(path)?;
            Ok(pipeline.prepare(&img)?)
        })
        .collect();
    BatchOutcome { prepared }
}

fn dump_debug(pipeline: &Pipeline, dir: &Path, stem: &str, prep: &FramePrep, out: &lanekit::pipeline::FrameOutput) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_pgm(dir.join(format!("{stem}.ipm.pgm")), &plane_to_u8(&prep.inv_grid.cells))?;
    let extraction = lanekit::filters::extract_features(
        &prep.inv_grid,
        &lanekit::filters::make_bank(
            pipeline.cfg.sigma,
            pipeline.cfg.radius.unwrap_or_else(|| lanekit::filters::default_radius(pipeline.cfg.sigma)),
            pipeline.cfg.sign_convention,
        )?,
        &lanekit::filters::ExtractParams::default(),
    );
    write_pgm(
        dir.join(format!("{stem}.response.pgm")),
        &plane_to_u8_normalized(&extraction.combined),
    )?;
    if let Some(mask) = &out.label_mask {
        let mut img = Image::new(mask.rows, mask.cols, 1);
        img.data.copy_from_slice(&mask.labels);
        write_pgm(dir.join(format!("{stem}.labels.pgm")), &img)?;
    }
    Ok(())
}

fn cmd_detect(args: &PipelineArgs, input: &Path, timings: bool) -> anyhow::Result<ExitCode> {
    use rayon::prelude::*;
    let (dataset_cam, frames) = gather_frames(input)?;
    let (cfg, cam) = load_setup(args, dataset_cam)?;
    let pipeline = Pipeline::new(cam, cfg)?;
    if frames.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    let batch = prepare_all(&pipeline, &frames);
    let outputs: Vec<anyhow::Result<String>> = batch
        .prepared
        .par_iter()
        .enumerate()
        .map(|(i, prep)| {
            let (prep, ipm_ms) = match prep {
                Ok(p) => p,
                Err(e) => anyhow::bail!("{e:#}"),
            };
            let prev = if i > 0 {
                batch.prepared[i - 1].as_ref().ok().map(|(p, _)| p)
            } else {
                None
            };
            let mut out = pipeline.detect(prep, prev)?;
            out.timings.ipm = *ipm_ms;
            out.timings.total += *ipm_ms;
            if let Some(dir) = &args.debug_dir {
                dump_debug(&pipeline, dir, &frames[i].0, prep, &out)?;
            }
            Ok(serde_json::to_string(&out.to_record(i, timings))?)
        })
        .collect();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let mut failures = 0usize;
    for (i, line) in outputs.iter().enumerate() {
        match line {
            Ok(json) => writeln!(lock, "{json}")?,
            Err(e) => {
                failures += 1;
                eprintln!("frame {} ({}): {e:#}", i, frames[i].0);
            }
        }
    }
    if failures == frames.len() {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_segment(args: &PipelineArgs, input: &Path, out_dir: &Path) -> anyhow::Result<ExitCode> {
    use rayon::prelude::*;
    let (dataset_cam, frames) = gather_frames(input)?;
    let (cfg, cam) = load_setup(args, dataset_cam)?;
    let pipeline = Pipeline::new(cam, cfg)?;
    if frames.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    std::fs::create_dir_all(out_dir)?;
    let batch = prepare_all(&pipeline, &frames);
    let results: Vec<anyhow::Result<()>> = batch
        .prepared
        .par_iter()
        .enumerate()
        .map(|(i, prep)| {
            let (prep, _) = match prep {
                Ok(p) => p,
                Err(e) => anyhow::bail!("{e:#}"),
            };
            let out = pipeline.detect(prep, None)?;
            let mask = out
                .label_mask
                .ok_or_else(|| anyhow::anyhow!("segmentation produced no labels"))?;
            let mut img = Image::new(mask.rows, mask.cols, 1);
            img.data.copy_from_slice(&mask.labels);
            write_pgm(out_dir.join(format!("{}.labels.pgm", frames[i].0)), &img)?;
            Ok(())
        })
        .collect();
    let mut failures = 0usize;
    for (i, r) in results.iter().enumerate() {
        if let Err(e) = r {
            failures += 1;
            eprintln!("frame {} ({}): {e:#}", i, frames[i].0);
        }
    }
    if failures == frames.len() {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_departure(args: &PipelineArgs, input: &Path) -> anyhow::Result<ExitCode> {
    use rayon::prelude::*;
    let (dataset_cam, frames) = gather_frames(input)?;
    let (cfg, cam) = load_setup(args, dataset_cam)?;
    let pipeline = Pipeline::new(cam, cfg)?;
    if frames.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    let batch = prepare_all(&pipeline, &frames);
    let outputs: Vec<anyhow::Result<String>> = batch
        .prepared
        .par_iter()
        .enumerate()
        .map(|(i, prep)| {
            let (prep, _) = match prep {
                Ok(p) => p,
                Err(e) => anyhow::bail!("{e:#}"),
            };
            let prev = if i > 0 {
                batch.prepared[i - 1].as_ref().ok().map(|(p, _)| p)
            } else {
                None
            };
            let out = pipeline.detect(prep, prev)?;
            let record = serde_json::json!({
                "v": lanekit::pipeline::RECORD_SCHEMA_VERSION,
                "frame": i,
                "lambda_deg": out.lambda.map(f64::to_degrees),
                "warning": out.warning,
                "gated": out.gated,
            });
            Ok(record.to_string())
        })
        .collect();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let mut failures = 0usize;
    for (i, line) in outputs.iter().enumerate() {
        match line {
            Ok(json) => writeln!(lock, "{json}")?,
            Err(e) => {
                failures += 1;
                eprintln!("frame {} ({}): {e:#}", i, frames[i].0);
            }
        }
    }
    if failures == frames.len() {
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let mut spec = scenefile::parse_scene_file(spec_path)?;
    if let Some(seed) = seed {
        spec.rng_seed = seed;
    }
    std::fs::create_dir_all(out_dir)?;
    save_camera(out_dir.join("camera.cfg"), &spec.camera)?;
    let mut meta_frames = Vec::new();
    for f in 0..spec.frames {
        let (img, truth) = lanekit::harness::render_scene(&spec, f)?;
        let stem = format!("{f:06}");
        write_ppm(out_dir.join(format!("{stem}.ppm")), &img)?;
        // Lane truth mask (continuous lane positions) as 0/255 PGM.
        let mut mask = Image::new(truth.rows, truth.cols, 1);
        for (dst, &on) in mask.data.iter_mut().zip(&truth.lane_mask) {
            *dst = if on { 255 } else { 0 };
        }
        write_pgm(out_dir.join(format!("{stem}.mask.pgm")), &mask)?;
        // Lane truth polylines, sampled each meter.
        let mut lanes_txt = String::new();
        for curve in &truth.lane_curves {
            let mut first = true;
            let mut x = 1.0;
            while x <= truth.grid.x_max {
                if !first {
                    lanes_txt.push(' ');
                }
                lanes_txt.push_str(&format!("{},{}", x, SceneTruth::eval_cubic(curve, x)));
                first = false;
                x += 1.0;
            }
            lanes_txt.push('\n');
        }
        std::fs::write(out_dir.join(format!("{stem}.lanes.txt")), lanes_txt)?;
        meta_frames.push(serde_json::json!({
            "drift_angle_rad": truth.drift_angle,
            "boundary_left": truth.boundary_left,
            "boundary_right": truth.boundary_right,
            "lane_curves": truth.lane_curves,
        }));
    }
    let meta = serde_json::json!({
        "v": 1,
        "frames": spec.frames,
        "grid": {
            "resolution_m": spec.grid.resolution,
            "x_max_m": spec.grid.x_max,
            "y_max_m": spec.grid.y_max,
        },
        "per_frame": meta_frames,
    });
    std::fs::write(out_dir.join("scene_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(ExitCode::SUCCESS)
}

fn curve_from_json(v: &serde_json::Value) -> Option<LaneCurve> {
    Some(LaneCurve {
        y0: v["y0"].as_f64()?,
        a: v["a"].as_f64()?,
        b: v["b"].as_f64()?,
        c: v["c"].as_f64()?,
        inlier_count: v["inliers"].as_u64()? as usize,
        inlier_rms: v["rms"].as_f64()?,
        x_lo: v["x_lo"].as_f64()?,
        x_hi: v["x_hi"].as_f64()?,
    })
}

/// Least-squares cubic through a truth polyline (exact when the polyline
/// was sampled from a cubic, which is how `synth` writes them).
fn cubic_from_polyline(points: &[(f64, f64)]) -> Option<[f64; 4]> {
    if points.len() < 4 {
        return None;
    }
    // Normal equations on the small, well-conditioned truth polylines.
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for &(x, y) in points {
        let row = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut m = ata;
    let mut b = atb;
    for col in 0..4 {
        let piv = (col..4).max_by(|&p, &q| m[p][col].abs().partial_cmp(&m[q][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            let (above, below) = m.split_at_mut(row);
            for (k, slot) in below[0].iter_mut().enumerate().skip(col) {
                *slot -= f * above[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

fn cmd_eval(pred: &Path, truth_dir: &Path, tolerance: f64, out_dir: &Path) -> anyhow::Result<ExitCode> {
    let (_, records) = ingest_dataset(truth_dir)?;
    let meta: Option<serde_json::Value> = std::fs::read_to_string(truth_dir.join("scene_meta.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let grid = match &meta {
        Some(m) => GridGeometry {
            resolution: m["grid"]["resolution_m"].as_f64().unwrap_or(0.1),
            x_max: m["grid"]["x_max_m"].as_f64().unwrap_or(45.0),
            y_max: m["grid"]["y_max_m"].as_f64().unwrap_or(10.0),
        },
        None => GridGeometry::default(),
    };

    // Predictions: frame -> (curves, boundaries).
    let pred_text = std::fs::read_to_string(pred)?;
    type Prediction = (Vec<LaneCurve>, Option<(LaneCurve, LaneCurve)>);
    let mut pred_by_frame: std::collections::BTreeMap<usize, Prediction> = Default::default();
    for (ln, line) in pred_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            anyhow::anyhow!(LkError::Config {
                path: pred.display().to_string(),
                msg: format!("line {}: {e}", ln + 1),
            })
        })?;
        let frame = v["frame"].as_u64().unwrap_or(ln as u64) as usize;
        let curves: Vec<LaneCurve> = v["curves"]
            .as_array()
            .map(|a| a.iter().filter_map(curve_from_json).collect())
            .unwrap_or_default();
        let boundaries = v.get("boundaries").and_then(|b| {
            Some((curve_from_json(b.get("left")?)?, curve_from_json(b.get("right")?)?))
        });
        pred_by_frame.insert(frame, (curves, boundaries));
    }

    let mut frame_reports = Vec::new();
    for record in &records {
        let rows = grid.rows();
        let cols = grid.cols();
        // Truth lane mask: prefer the rasterized sidecar, else rasterize the
        // polylines with a nominal paint width.
        let lane_mask: Vec<bool> = if let Some(mask_path) = &record.truth_mask_path {
            let img = read_pgm(mask_path)?;
            if img.rows != rows || img.cols != cols {
                anyhow::bail!(LkError::GridMismatch);
            }
            img.data.iter().map(|&v| v > 0).collect()
        } else if let Some(lanes) = &record.truth_lanes {
            let mut mask = vec![false; rows * cols];
            for lane in lanes {
                if let Some(c) = cubic_from_polyline(lane) {
                    for r in 0..rows {
                        let x = grid.x_of_row(r);
                        let y = SceneTruth::eval_cubic(&c, x);
                        let col = (grid.y_max - y) / grid.resolution - 0.5;
                        let col = col.round();
                        if col >= 0.0 && (col as usize) < cols {
                            mask[r * cols + col as usize] = true;
                        }
                    }
                }
            }
            mask
        } else {
            eprintln!("frame {}: no truth, skipped", record.stem);
            continue;
        };
        let lane_curves: Vec<[f64; 4]> = record
            .truth_lanes
            .as_ref()
            .map(|lanes| lanes.iter().filter_map(|l| cubic_from_polyline(l)).collect())
            .unwrap_or_default();
        let frame_meta = meta.as_ref().and_then(|m| m["per_frame"].get(record.index));
        let coeffs = |key: &str| -> Option<[f64; 4]> {
            let arr = frame_meta?.get(key)?.as_array()?;
            Some([
                arr.first()?.as_f64()?,
                arr.get(1)?.as_f64()?,
                arr.get(2)?.as_f64()?,
                arr.get(3)?.as_f64()?,
            ])
        };
        let boundary_left = coeffs("boundary_left");
        let boundary_right = coeffs("boundary_right");
        let truth = SceneTruth {
            rows,
            cols,
            lane_mask,
            class_mask: vec![0; rows * cols],
            lane_curves,
            boundary_left: boundary_left.unwrap_or([f64::NAN; 4]),
            boundary_right: boundary_right.unwrap_or([f64::NAN; 4]),
            drift_angle: 0.0,
            grid,
        };
        let (curves, boundaries) = pred_by_frame.remove(&record.index).unwrap_or_default();
        // Boundary correctness only when the dataset carries boundary truth.
        let boundaries = if boundary_left.is_some() { boundaries } else { None };
        let input = EvalInput {
            frame: record.index,
            curves: &curves,
            boundaries,
            truth: &truth,
            timings_ms: None,
        };
        frame_reports.push(evaluate(&input, tolerance)?);
    }
    if frame_reports.is_empty() {
        eprintln!("no evaluable frames");
        return Ok(ExitCode::from(4));
    }
    let report = aggregate(frame_reports);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out_dir.join("report.txt"), report.to_table())?;
    print!("{}", report.to_table());
    Ok(ExitCode::SUCCESS)
}
