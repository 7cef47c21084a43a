// Scratch probe: per-frame PRE over the criterion-7 scene stack.
use lanekit::config::PipelineConfig;
use lanekit::harness::*;
use lanekit::ipm::CameraModel;
use lanekit::pipeline::Pipeline;

fn main() {
    let cam = CameraModel::new(1.55, 3f64.to_radians(), 0.0, 60f64.to_radians(), 375, 1242).unwrap();
    let pipeline = Pipeline::new(cam.clone(), PipelineConfig::default()).unwrap();
    let lane_offsets = [-5.25, -1.75, 1.75, 5.25];
    let mut straight = SceneSpec::straight_demo(cam.clone());
    straight.noise_sigma = 0.02;
    straight.shadow_bands = vec![
        ShadowBand { x0: 12.0, x1: 18.0, multiplier: 0.55 },
        ShadowBand { x0: 26.0, x1: 31.0, multiplier: 0.7 },
    ];
    straight.frames = 20;
    straight.rng_seed = 71;
    let center = [0.0, 0.0, 0.0012, 0.0];
    let mut curved = SceneSpec::straight_demo(cam.clone());
    curved.road_center = center;
    curved.lanes = lane_offsets.iter().map(|&off| {
        let mut c = center; c[0] += off;
        if off.abs() > 3.0 { LaneSpec::solid(c, 0.15) } else { LaneSpec::dashed(c, 0.15, 3.0, 3.0) }
    }).collect();
    curved.follow_road_center = true;
    curved.noise_sigma = 0.02;
    curved.frames = 15;
    curved.rng_seed = 72;
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
    for (name, spec, n) in [("straight", &straight, 20usize), ("curved", &curved, 15), ("shadowed", &shadowed, 15)] {
        for f in 0..n {
            let (img, truth) = render_scene(spec, f).unwrap();
            let (out, _) = pipeline.run_frame(&img, None).unwrap();
            let input = EvalInput { frame: f, curves: &out.curves, boundaries: out.boundaries, truth: &truth, timings_ms: None };
            let rep = evaluate(&input, DEFAULT_TOLERANCE_M).unwrap();
            if rep.pre_40.unwrap_or(1.0) < 0.97 || rep.pre_20.unwrap_or(1.0) < 0.97 {
                let ys: Vec<String> = out.curves.iter().map(|c| format!("{:.2}@[{:.0},{:.0}]x{}", c.y0, c.x_lo, c.x_hi, c.inlier_count)).collect();
                println!("{name} f{f}: TP{} FP{} pre20={:?} pre40={:?} curves: {}", rep.tp, rep.fp, rep.pre_20, rep.pre_40, ys.join(" "));
            }
        }
    }
}
