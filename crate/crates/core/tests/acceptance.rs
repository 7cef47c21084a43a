//! Acceptance suite: every release gate runs here, one pass/fail line per
//! criterion (run with `--nocapture` to see them all).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanekit::config::PipelineConfig;
use lanekit::filters::{convolve_separable, make_bank, SignConvention};
use lanekit::harness::{
    aggregate, evaluate, evaluate_masks, render_scene, EvalInput, LaneSpec, SceneSpec, SceneTruth,
    ShadowBand, DEFAULT_TOLERANCE_M,
};
use lanekit::imgcore::Plane;
use lanekit::ipm::{ground_to_pixel, half_apertures, horizon_row, pixel_to_ground, CameraModel};
use lanekit::lanes::{ransac_fit_one, RansacConfig};
use lanekit::pipeline::Pipeline;
use lanekit::segmentation::em_refine;

fn criterion(name: &str, pass: bool, detail: &str) {
    println!("[acceptance] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn test_cam() -> CameraModel {
    CameraModel::new(1.55, 3f64.to_radians(), 0.0, 60f64.to_radians(), 375, 1242).unwrap()
}

#[test]
fn criterion_01_geometry_round_trip() {
    let cam = test_cam();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let points: Vec<(f64, f64)> = (0..10_000)
        .map(|_| (rng.gen_range(0.5f64..=45.0), rng.gen_range(-10.0f64..=10.0)))
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &(x, y) in &points {
        let (ix, iy) = ground_to_pixel(&cam, x, y).unwrap();
        let (xb, yb) = pixel_to_ground(&cam, ix, iy).unwrap();
        worst = worst.max((xb - x).abs()).max((yb - y).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "criterion 01 geometry round trip",
        worst < 1e-9 && elapsed < 1.0,
        &format!("worst error {worst:.3e} m over 10k points in {elapsed:.3} s"),
    );
}

#[test]
fn criterion_02_horizon_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_denom = 0.0f64;
    let mut worst_root = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(100usize..=1200);
        let n = rng.gen_range(100usize..=1400);
        let alpha = rng.gen_range(20f64..=80.0).to_radians();
        let h = rng.gen_range(0.5..3.0);
        // Pitch strictly inside (0, delta) keeps the horizon inside the image.
        let probe = CameraModel::new(h, 0.01, 0.0, alpha, m, n).unwrap();
        let (delta, _) = half_apertures(&probe);
        let theta = rng.gen_range(0.05..0.95) * delta;
        let cam = CameraModel::new(h, theta, 0.0, alpha, m, n).unwrap();
        let hz = horizon_row(&cam);
        let denom_at = |ix: f64| {
            let u = 1.0 - 2.0 * (ix - 1.0) / (m as f64 - 1.0);
            theta.tan() - u * delta.tan()
        };
        worst_denom = worst_denom.max(denom_at(hz).abs());
        // Independent bisection root of the mapping denominator.
        let (mut lo, mut hi) = (1.0, m as f64);
        assert!(denom_at(lo) < 0.0 && denom_at(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if denom_at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst_root = worst_root.max((0.5 * (lo + hi) - hz).abs());
    }
    criterion(
        "criterion 02 horizon consistency",
        worst_denom < 1e-9 && worst_root < 1e-9,
        &format!("denominator at hz <= {worst_denom:.3e}, root mismatch <= {worst_root:.3e} rows"),
    );
}

#[test]
fn criterion_03_kernel_moments() {
    let corrected = make_bank(2.0, 8, SignConvention::Corrected).unwrap();
    let mut worst_ratio = 0.0f64;
    for k in [&corrected.g2x, &corrected.gxy, &corrected.g2y, &corrected.g4x, &corrected.g4y] {
        let dense = k.dense();
        let sum: f64 = dense.data.iter().sum();
        let max = dense.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_ratio = worst_ratio.max(sum.abs() / max);
    }
    let printed = make_bank(2.0, 8, SignConvention::AsPrinted).unwrap();
    let dense = printed.g4x.dense();
    let printed_sum: f64 = dense.data.iter().sum();
    let printed_max = dense.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let printed_ratio = printed_sum.abs() / printed_max;
    criterion(
        "criterion 03 kernel moments",
        worst_ratio < 1e-6 && printed_ratio > 0.1,
        &format!(
            "corrected |sum|/max <= {worst_ratio:.3e}; as-printed G4x ratio {printed_ratio:.3} (materially nonzero)"
        ),
    );
}

#[test]
fn criterion_04_separability() {
    let bank = make_bank(2.0, 8, SignConvention::Corrected).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = Plane::from_fn(64, 64, |_, _| rng.gen::<f64>());
        for k in [&bank.g2x, &bank.gxy, &bank.g2y, &bank.g4x, &bank.g4y] {
            let fast = convolve_separable(&img, k);
            // Dense 2-D convolution oracle with the same reflected border.
            let r = k.radius() as isize;
            let reflect = |mut i: isize, len: usize| -> usize {
                let len = len as isize;
                loop {
                    if i < 0 {
                        i = -i - 1;
                    } else if i >= len {
                        i = 2 * len - i - 1;
                    } else {
                        return i as usize;
                    }
                }
            };
            for row in 0..img.rows {
                for col in 0..img.cols {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            acc += k.at(dy, dx)
                                * img.get(reflect(row as isize - dy, img.rows), reflect(col as isize - dx, img.cols));
                        }
                    }
                    worst = worst.max((acc - fast.get(row, col)).abs());
                }
            }
        }
    }
    criterion(
        "criterion 04 separability",
        worst < 1e-9,
        &format!("separable vs dense max |diff| {worst:.3e} over 20 random planes"),
    );
}

fn planted_cubic_set(seed: u64) -> (lanekit::filters::FeaturePointSet, [f64; 4]) {
    let coeffs = [-1.75, 0.02, 0.003, -0.00004];
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(7));
    let n = 150;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let x = i as f64 * (45.0 / (n - 1) as f64);
        let y = if rng.gen::<f64>() < 0.30 {
            rng.gen_range(-10.0..10.0)
        } else {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            coeffs[0] + coeffs[1] * x + coeffs[2] * x * x + coeffs[3] * x * x * x + 0.05 * z
        };
        points.push(lanekit::filters::FeaturePoint {
            x,
            y,
            strength: 1.0,
            orientation: 0.0,
            interpolated: false,
        });
    }
    (
        lanekit::filters::FeaturePointSet { points, spacing_x: 0.1, x_max: 45.0, y_max: 10.0 },
        coeffs,
    )
}

#[test]
fn criterion_05_ransac_recovery() {
    let mut successes = 0usize;
    let mut times = Vec::with_capacity(200);
    for seed in 0..200u64 {
        let (set, coeffs) = planted_cubic_set(seed);
        let cfg = RansacConfig { rng_seed: seed, ..Default::default() };
        let start = Instant::now();
        let fit = ransac_fit_one(&set, &cfg);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if let Ok(curve) = fit {
            let mut max_dev = 0.0f64;
            let mut x = 0.0;
            while x <= 45.0 {
                let truth = coeffs[0] + coeffs[1] * x + coeffs[2] * x * x + coeffs[3] * x * x * x;
                max_dev = max_dev.max((curve.eval(x) - truth).abs());
                x += 0.25;
            }
            if max_dev < 0.05 {
                successes += 1;
            }
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ms = times[times.len() / 2];
    criterion(
        "criterion 05 ransac recovery",
        successes >= 190 && median_ms < 50.0,
        &format!("{successes}/200 trials within 0.05 m; median fit {median_ms:.2} ms"),
    );
}

#[test]
fn criterion_06_em_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_drop = 0.0f64;
    let mut worst_prior = 0.0f64;
    for _ in 0..10 {
        // Random mixtures, random (possibly poor) starting model.
        let mut pixels = Vec::new();
        for _ in 0..3 {
            let mean = [rng.gen_range(0.0..100.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
            let sd = rng.gen_range(0.5..6.0);
            for _ in 0..rng.gen_range(300..900) {
                let mut px = [0.0; 3];
                for (k, v) in px.iter_mut().enumerate() {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen::<f64>();
                    *v = mean[k]
                        + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                }
                pixels.push(px);
            }
        }
        let start = lanekit::segmentation::GmmModel {
            priors: [0.4, 0.35, 0.25],
            means: [
                [rng.gen_range(0.0..100.0), 0.0, 0.0],
                [rng.gen_range(0.0..100.0), 0.0, 0.0],
                [rng.gen_range(0.0..100.0), 0.0, 0.0],
            ],
            vars: [[50.0; 3], [50.0; 3], [50.0; 3]],
        };
        // Iterate one EM step at a time so every iteration's priors are
        // visible to the check.
        let mut model = start;
        let mut prev_ll: Option<f64> = None;
        for _ in 0..40 {
            let (next, trace) = em_refine(&model, &pixels, 1, 0.0).unwrap();
            let ll = trace[0];
            if let Some(prev) = prev_ll {
                worst_drop = worst_drop.max(prev - ll);
            }
            prev_ll = Some(ll);
            let sum: f64 = next.priors.iter().sum();
            worst_prior = worst_prior.max((sum - 1.0).abs());
            model = next;
        }
    }
    criterion(
        "criterion 06 em monotonicity",
        worst_drop <= 1e-9 && worst_prior <= 1e-12,
        &format!("worst log-likelihood drop {worst_drop:.3e}; priors off unity by {worst_prior:.3e}"),
    );
}

fn eval_frames(spec: &SceneSpec, pipeline: &Pipeline, frames: std::ops::Range<usize>) -> Vec<lanekit::harness::FrameReport> {
    let mut reports = Vec::new();
    for f in frames {
        let (img, truth) = render_scene(spec, f).unwrap();
        let (out, _) = pipeline.run_frame(&img, None).unwrap();
        let input = EvalInput {
            frame: f,
            curves: &out.curves,
            boundaries: out.boundaries,
            truth: &truth,
            timings_ms: None,
        };
        reports.push(evaluate(&input, DEFAULT_TOLERANCE_M).unwrap());
    }
    reports
}

#[test]
fn criterion_07_end_to_end_precision() {
    let cam = test_cam();
    let pipeline = Pipeline::new(cam.clone(), PipelineConfig::default()).unwrap();
    let lane_offsets = [-5.25, -1.75, 1.75, 5.25];
    // Straight road with dashes and shadow bands.
    let mut straight = SceneSpec::straight_demo(cam.clone());
    straight.noise_sigma = 0.02;
    straight.shadow_bands =
        vec![ShadowBand { x0: 12.0, x1: 18.0, multiplier: 0.55 }, ShadowBand { x0: 26.0, x1: 31.0, multiplier: 0.7 }];
    straight.frames = 20;
    straight.rng_seed = 71;
    // Curved road, camera tracking the centerline.
    let center = [0.0, 0.0, 0.0012, 0.0];
    let mut curved = SceneSpec::straight_demo(cam.clone());
    curved.road_center = center;
    curved.lanes = lane_offsets
        .iter()
        .map(|&off| {
            let mut c = center;
            c[0] += off;
            if off.abs() > 3.0 {
                LaneSpec::solid(c, 0.15)
            } else {
                LaneSpec::dashed(c, 0.15, 3.0, 3.0)
            }
        })
        .collect();
    curved.follow_road_center = true;
    curved.noise_sigma = 0.02;
    curved.frames = 15;
    curved.rng_seed = 72;
    // Straight with heavier shadows and a drifting camera.
    let mut shadowed = SceneSpec::straight_demo(cam);
    shadowed.noise_sigma = 0.02;
    shadowed.drift_per_frame = 0.02;
    shadowed.shadow_bands = vec![
        ShadowBand { x0: 6.0, x1: 10.0, multiplier: 0.45 },
        ShadowBand { x0: 20.0, x1: 24.0, multiplier: 0.55 },
        ShadowBand { x0: 33.0, x1: 36.0, multiplier: 0.65 },
    ];
    shadowed.frames = 15;
    shadowed.rng_seed = 73;

    let mut reports = eval_frames(&straight, &pipeline, 0..20);
    reports.extend(eval_frames(&curved, &pipeline, 0..15));
    reports.extend(eval_frames(&shadowed, &pipeline, 0..15));
    let report = aggregate(reports);
    let pre20 = report.aggregate.pre_20.unwrap_or(0.0);
    let pre40 = report.aggregate.pre_40.unwrap_or(0.0);
    criterion(
        "criterion 07 end-to-end precision",
        pre40 >= 0.90 && pre20 >= 0.93,
        &format!(
            "50 frames: PRE-20 {:.4}, PRE-30 {:.4}, PRE-40 {:.4} (thresholds 0.93 / - / 0.90)",
            pre20,
            report.aggregate.pre_30.unwrap_or(0.0),
            pre40
        ),
    );
}

#[test]
fn criterion_08_boundary_without_markings() {
    let cam = test_cam();
    let pipeline = Pipeline::new(cam.clone(), PipelineConfig::default()).unwrap();
    let mut spec = SceneSpec::straight_demo(cam);
    spec.lanes = vec![];
    spec.noise_sigma = 0.02;
    spec.road_half_width = 6.0;
    spec.shadow_bands = vec![ShadowBand { x0: 15.0, x1: 20.0, multiplier: 0.6 }];
    spec.frames = 20;
    spec.rng_seed = 81;
    let mut good = 0usize;
    let mut devs = Vec::new();
    for f in 0..20 {
        let (img, truth) = render_scene(&spec, f).unwrap();
        let (out, _) = pipeline.run_frame(&img, None).unwrap();
        let Some((left, right)) = out.boundaries else {
            devs.push(f64::INFINITY);
            continue;
        };
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut x = 5.0;
        while x <= 40.0 {
            sum += (left.eval(x) - SceneTruth::eval_cubic(&truth.boundary_left, x)).abs();
            sum += (right.eval(x) - SceneTruth::eval_cubic(&truth.boundary_right, x)).abs();
            n += 2;
            x += 0.5;
        }
        let mean = sum / n as f64;
        devs.push(mean);
        if mean < 0.3 {
            good += 1;
        }
    }
    let worst = devs.iter().cloned().fold(0.0, f64::max);
    criterion(
        "criterion 08 boundary without markings",
        good >= 18,
        &format!("{good}/20 frames under 0.3 m mean deviation (worst {worst:.3} m)"),
    );
}

#[test]
fn criterion_09_departure_angle() {
    let cam = test_cam();
    let pipeline = Pipeline::new(cam.clone(), PipelineConfig::default()).unwrap();
    // Drift sequence: 0.1 m lateral per 10 m forward, clean capture (the
    // 0.05-cell lateral signal needs texture above the noise floor).
    let mut drift = SceneSpec::straight_demo(cam.clone());
    drift.noise_sigma = 0.01;
    drift.forward_per_frame = 0.5;
    drift.drift_per_frame = 0.005;
    drift.frames = 21;
    drift.rng_seed = 91;
    let expected = (0.01f64).atan();
    let mut preps = Vec::new();
    for f in 0..21 {
        let (img, _) = render_scene(&drift, f).unwrap();
        let (prep, _) = pipeline.prepare(&img).unwrap();
        preps.push(prep);
    }
    let mut worst = 0.0f64;
    for i in 1..21 {
        let out = pipeline.detect(&preps[i], Some(&preps[i - 1])).unwrap();
        let lambda = out.lambda.expect("flow available");
        worst = worst.max((lambda - expected).abs());
    }
    let drift_ok = worst < 1f64.to_radians();

    // Curved sequence: the road curvature explains the lateral flow. The
    // gentle initial heading keeps the ego pair straddling the camera at
    // the probe distance across the whole run.
    let center = [0.0, 0.02, 0.015, 0.0];
    let mut curved = SceneSpec::straight_demo(cam);
    curved.road_center = center;
    curved.lanes = [-5.25, -1.75, 1.75, 5.25]
        .iter()
        .map(|&off| {
            let mut c = center;
            c[0] += off;
            LaneSpec::solid(c, 0.15)
        })
        .collect();
    curved.road_half_width = 6.0;
    curved.follow_road_center = true;
    curved.noise_sigma = 0.01;
    curved.forward_per_frame = 0.5;
    curved.frames = 14;
    curved.rng_seed = 92;
    let mut curved_preps = Vec::new();
    for f in 0..curved.frames {
        let (img, _) = render_scene(&curved, f).unwrap();
        let (prep, _) = pipeline.prepare(&img).unwrap();
        curved_preps.push(prep);
    }
    let mut warnings = 0usize;
    let mut gated = 0usize;
    let mut lambdas = Vec::new();
    for i in 1..curved.frames {
        let out = pipeline.detect(&curved_preps[i], Some(&curved_preps[i - 1])).unwrap();
        warnings += out.warning as usize;
        gated += out.gated as usize;
        if let Some(l) = out.lambda {
            lambdas.push(l.to_degrees());
        }
    }
    criterion(
        "criterion 09 departure angle",
        drift_ok && warnings == 0,
        &format!(
            "drift worst |error| {:.3} deg (limit 1 deg); curved: {warnings} warnings, {gated}/{} gated, lambda {:.1}..{:.1} deg",
            worst.to_degrees(),
            curved.frames - 1,
            lambdas.iter().cloned().fold(f64::INFINITY, f64::min),
            lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
    );
}

#[test]
fn criterion_10_evaluation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut exact = true;
    for _ in 0..100 {
        let rows = rng.gen_range(4..16);
        let cols = rng.gen_range(4..16);
        let tol = rng.gen_range(0..3usize);
        let pred: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.35)).collect();
        let truth: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.35)).collect();
        let (tp, fp) = evaluate_masks(&pred, &truth, rows, cols, tol).unwrap();
        // Brute-force pixel counting oracle.
        let mut btp = 0u64;
        let mut bfp = 0u64;
        for r in 0..rows {
            for c in 0..cols {
                if !pred[r * cols + c] {
                    continue;
                }
                if truth[r * cols + c] {
                    btp += 1;
                } else if !(0..cols).any(|cc| {
                    truth[r * cols + cc] && cc.abs_diff(c) <= tol
                }) {
                    bfp += 1;
                }
            }
        }
        exact &= tp == btp && fp == bfp;
    }
    // Known-count case: 9 overlapping cells, 1 isolated prediction.
    let mut pred = vec![false; 25];
    let mut truth = vec![false; 25];
    for i in 0..9 {
        pred[i] = true;
        truth[i] = true;
    }
    pred[20] = true;
    let (tp, fp) = evaluate_masks(&pred, &truth, 5, 5, 1).unwrap();
    let pre = tp as f64 / (tp + fp) as f64;
    criterion(
        "criterion 10 evaluation oracle",
        exact && (pre - 0.9).abs() < 1e-12,
        &format!("100 random pairs exact; TP=9/FP=1 gives PRE {pre}"),
    );
}

#[test]
fn criterion_11_runtime() {
    let cam = test_cam();
    let pipeline = Pipeline::new(cam.clone(), PipelineConfig::default()).unwrap();
    let mut spec = SceneSpec::straight_demo(cam);
    spec.noise_sigma = 0.02;
    let (img, _) = render_scene(&spec, 0).unwrap();
    // Warm-up, then best of three to ride out scheduler noise.
    let _ = pipeline.run_frame(&img, None).unwrap();
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        let _ = pipeline.run_frame(&img, None).unwrap();
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
    }
    criterion(
        "criterion 11 runtime",
        best <= 200.0,
        &format!("full pipeline on a 375x1242 frame: {best:.1} ms single-threaded (limit 200 ms)"),
    );
}

// Criterion 12 (thread-count determinism of the CLI batch output) runs in
// the CLI crate's own acceptance test, where the binary is available.
