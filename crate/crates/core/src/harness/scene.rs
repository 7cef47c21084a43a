//! Deterministic road-scene renderer.
//!
//! A scene is a flat textured world (asphalt band, grass, painted lane
//! curves, shadow bands, optional ground decals standing in for obstacles)
//! projected through the camera model. Truth comes from the same analytic
//! description, rasterized on the bird's-eye grid the pipeline will use, so
//! every quantity the pipeline estimates has an exact reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imgcore::Image;
use crate::ipm::{horizon_row, pixel_to_ground, CameraModel};
use crate::{Error, Result};

/// One painted lane line: a world-frame cubic with width and dash pattern.
#[derive(Debug, Clone)]
pub struct LaneSpec {
    /// World-frame coefficients [y0, a, b, c] of `Y(X)`.
    pub coeffs: [f64; 4],
    /// Painted width, meters.
    pub width: f64,
    /// Dash pattern lengths, meters; `dash_off = 0` paints a solid line.
    pub dash_on: f64,
    pub dash_off: f64,
    /// Paint luminance in [0, 1].
    pub brightness: f64,
}

impl LaneSpec {
    pub fn solid(coeffs: [f64; 4], width: f64) -> Self {
        LaneSpec { coeffs, width, dash_on: 1.0, dash_off: 0.0, brightness: 0.92 }
    }

    pub fn dashed(coeffs: [f64; 4], width: f64, on: f64, off: f64) -> Self {
        LaneSpec { coeffs, width, dash_on: on, dash_off: off, brightness: 0.92 }
    }

    fn eval(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
    }

    fn dash_on_at(&self, x: f64) -> bool {
        if self.dash_off <= 0.0 {
            return true;
        }
        let period = self.dash_on + self.dash_off;
        x.rem_euclid(period) < self.dash_on
    }
}

/// Brightness multiplier over a longitudinal world interval.
#[derive(Debug, Clone, Copy)]
pub struct ShadowBand {
    pub x0: f64,
    pub x1: f64,
    pub multiplier: f64,
}

/// Axis-aligned ground decal painted in obstacle color (a flat stand-in for
/// a vehicle; off-plane distortion is out of scope).
#[derive(Debug, Clone, Copy)]
pub struct ObstacleSpec {
    pub x: f64,
    pub y: f64,
    pub half_len: f64,
    pub half_width: f64,
}

/// Bird's-eye grid geometry used for truth rasterization.
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry {
    pub resolution: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry { resolution: 0.1, x_max: 45.0, y_max: 10.0 }
    }
}

impl GridGeometry {
    pub fn rows(&self) -> usize {
        (self.x_max / self.resolution).round() as usize
    }
    pub fn cols(&self) -> usize {
        (2.0 * self.y_max / self.resolution).round() as usize
    }
    pub fn x_of_row(&self, r: usize) -> f64 {
        self.x_max - (r as f64 + 0.5) * self.resolution
    }
    pub fn y_of_col(&self, c: usize) -> f64 {
        self.y_max - (c as f64 + 0.5) * self.resolution
    }
}

/// Full description of a synthetic sequence.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub camera: CameraModel,
    pub lanes: Vec<LaneSpec>,
    /// World-frame road centerline cubic.
    pub road_center: [f64; 4],
    pub road_half_width: f64,
    pub shadow_bands: Vec<ShadowBand>,
    pub obstacles: Vec<ObstacleSpec>,
    /// Additive Gaussian image noise (std dev on the [0,1] intensity scale).
    pub noise_sigma: f64,
    /// Ground texture amplitude on the [0,1] intensity scale.
    pub texture_amp: f64,
    /// Camera translation per frame, meters.
    pub forward_per_frame: f64,
    /// Constant lateral drift per frame, meters (positive = left).
    pub drift_per_frame: f64,
    /// When set, the camera tracks the road centerline laterally (plus any
    /// constant drift), as a vehicle following a curved road does.
    pub follow_road_center: bool,
    pub frames: usize,
    pub rng_seed: u64,
    pub grid: GridGeometry,
}

impl SceneSpec {
    /// A sane single-frame baseline around the standard test camera.
    pub fn straight_demo(camera: CameraModel) -> Self {
        SceneSpec {
            camera,
            lanes: vec![
                LaneSpec::solid([-5.25, 0.0, 0.0, 0.0], 0.15),
                LaneSpec::dashed([-1.75, 0.0, 0.0, 0.0], 0.15, 3.0, 3.0),
                LaneSpec::dashed([1.75, 0.0, 0.0, 0.0], 0.15, 3.0, 3.0),
                LaneSpec::solid([5.25, 0.0, 0.0, 0.0], 0.15),
            ],
            road_center: [0.0; 4],
            road_half_width: 6.0,
            shadow_bands: vec![],
            obstacles: vec![],
            noise_sigma: 0.0,
            texture_amp: 0.10,
            forward_per_frame: 0.5,
            drift_per_frame: 0.0,
            follow_road_center: false,
            frames: 1,
            rng_seed: 1,
            grid: GridGeometry::default(),
        }
    }

    fn center_at(&self, x: f64) -> f64 {
        let c = &self.road_center;
        c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
    }

    /// Camera pose (forward, lateral) at a frame index.
    pub fn pose(&self, frame_idx: usize) -> (f64, f64) {
        let x0 = frame_idx as f64 * self.forward_per_frame;
        let mut y0 = frame_idx as f64 * self.drift_per_frame;
        if self.follow_road_center {
            y0 += self.center_at(x0);
        }
        (x0, y0)
    }

    /// True departure angle between `frame_idx` and its successor.
    pub fn drift_angle(&self, frame_idx: usize) -> f64 {
        let (x0, y0) = self.pose(frame_idx);
        let (x1, y1) = self.pose(frame_idx + 1);
        ((y1 - y0) / (x1 - x0).max(1e-9)).atan()
    }
}

/// Exact per-frame reference produced alongside the rendered image.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub rows: usize,
    pub cols: usize,
    /// Continuous lane-line mask on the grid (dash phase ignored: the truth
    /// is the lane's position, rendering decides its visibility).
    pub lane_mask: Vec<bool>,
    /// Class ids per cell (road / scene / obstacle).
    pub class_mask: Vec<u8>,
    /// Camera-relative lane cubics [y0, a, b, c], sorted by y0.
    pub lane_curves: Vec<[f64; 4]>,
    /// Camera-relative road-edge cubics.
    pub boundary_left: [f64; 4],
    pub boundary_right: [f64; 4],
    /// True departure angle toward the next frame, radians.
    pub drift_angle: f64,
    pub grid: GridGeometry,
}

impl SceneTruth {
    pub fn eval_cubic(c: &[f64; 4], x: f64) -> f64 {
        c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
    }
}

/// Re-root a world-frame cubic at camera pose (x0, y0).
pub fn shift_cubic(c: &[f64; 4], x0: f64, y0: f64) -> [f64; 4] {
    [
        c[0] + c[1] * x0 + c[2] * x0 * x0 + c[3] * x0 * x0 * x0 - y0,
        c[1] + 2.0 * c[2] * x0 + 3.0 * c[3] * x0 * x0,
        c[2] + 3.0 * c[3] * x0,
        c[3],
    ]
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[inline]
fn lattice_hash(i: i64, j: i64, seed: u64) -> f64 {
    let h = splitmix64(
        seed ^ (i as u64).wrapping_mul(0x8DA6_B343) ^ (j as u64).wrapping_mul(0xD816_3841_0001_93B1),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise_octave(x: f64, y: f64, scale: f64, seed: u64) -> f64 {
    let u = x / scale;
    let v = y / scale;
    let i = u.floor();
    let j = v.floor();
    let fu = u - i;
    let fv = v - j;
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (su, sv) = (s(fu), s(fv));
    let (i, j) = (i as i64, j as i64);
    let a = lattice_hash(i, j, seed);
    let b = lattice_hash(i + 1, j, seed);
    let c = lattice_hash(i, j + 1, seed);
    let d = lattice_hash(i + 1, j + 1, seed);
    a * (1.0 - su) * (1.0 - sv) + b * su * (1.0 - sv) + c * (1.0 - su) * sv + d * su * sv
}

/// Smooth two-octave value noise (0.5 m and 2.5 m lattices), in [0, 1].
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let fine = value_noise_octave(x, y, 0.5, seed);
    let broad = value_noise_octave(x, y, 2.5, seed ^ 0x51A5_1357);
    (fine + 0.8 * broad) / 1.8
}

const ROAD_RGB: [f64; 3] = [0.42, 0.42, 0.45];
const GRASS_RGB: [f64; 3] = [0.30, 0.48, 0.24];
const PAINT_TINT: [f64; 3] = [1.0, 1.0, 0.96];
const OBSTACLE_RGB: [f64; 3] = [0.62, 0.16, 0.14];
const SKY_RGB: [f64; 3] = [0.67, 0.77, 0.88];

enum GroundClass {
    Road,
    Paint(f64),
    Grass,
    Obstacle,
}

fn ground_class(spec: &SceneSpec, x: f64, y: f64) -> GroundClass {
    for ob in &spec.obstacles {
        if (x - ob.x).abs() <= ob.half_len && (y - ob.y).abs() <= ob.half_width {
            return GroundClass::Obstacle;
        }
    }
    for lane in &spec.lanes {
        if (y - lane.eval(x)).abs() <= lane.width / 2.0 && lane.dash_on_at(x) {
            return GroundClass::Paint(lane.brightness);
        }
    }
    if (y - spec.center_at(x)).abs() <= spec.road_half_width {
        GroundClass::Road
    } else {
        GroundClass::Grass
    }
}

fn ground_rgb(spec: &SceneSpec, x: f64, y: f64) -> [f64; 3] {
    let base = match ground_class(spec, x, y) {
        GroundClass::Paint(b) => [PAINT_TINT[0] * b, PAINT_TINT[1] * b, PAINT_TINT[2] * b],
        GroundClass::Road => ROAD_RGB,
        GroundClass::Grass => GRASS_RGB,
        GroundClass::Obstacle => OBSTACLE_RGB,
    };
    let tex = 1.0 + spec.texture_amp * (2.0 * value_noise(x, y, spec.rng_seed) - 1.0);
    let mut shade = tex;
    for band in &spec.shadow_bands {
        if x >= band.x0 && x <= band.x1 {
            shade *= band.multiplier;
        }
    }
    [base[0] * shade, base[1] * shade, base[2] * shade]
}

/// Render one frame and its exact truth.
///
/// Deterministic per (spec.rng_seed, frame_idx): the ground texture hashes
/// world coordinates and the image noise stream is keyed by the pair.
pub fn render_scene(spec: &SceneSpec, frame_idx: usize) -> Result<(Image, SceneTruth)> {
    if spec.lanes.iter().any(|l| {
        let mut x = 0.0f64;
        let mut inside = true;
        while x <= spec.grid.x_max {
            let world_x = x; // lane bounds checked in the world frame
            if (l.eval(world_x) - spec.center_at(world_x)).abs() > spec.road_half_width + 1e-9 {
                inside = false;
                break;
            }
            x += 1.0;
        }
        !inside
    }) {
        return Err(Error::InvalidInput(
            "planted lanes must stay inside the road half-width over the grid range".into(),
        ));
    }
    let cam = &spec.camera;
    let (x0, y0) = spec.pose(frame_idx);
    let hz = horizon_row(cam);
    let mut img = Image::new(cam.m, cam.n, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
        spec.rng_seed ^ (frame_idx as u64).wrapping_mul(0xA24BAED4963EE407),
    ));
    for r in 0..cam.m {
        let ix = (r + 1) as f64;
        for c in 0..cam.n {
            let iy = (c + 1) as f64;
            let rgb = if ix <= hz + 1e-9 {
                SKY_RGB
            } else {
                match pixel_to_ground(cam, ix, iy) {
                    Ok((xr, yr)) => ground_rgb(spec, x0 + xr, y0 + yr),
                    Err(_) => SKY_RGB,
                }
            };
            let noise = if spec.noise_sigma > 0.0 {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen::<f64>();
                spec.noise_sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            } else {
                0.0
            };
            for (ch, &value) in rgb.iter().enumerate() {
                let v = ((value + noise) * 255.0).round().clamp(0.0, 255.0) as u8;
                img.set(r, c, ch, v);
            }
        }
    }

    // Truth on the bird's-eye grid, camera-relative.
    let g = spec.grid;
    let rows = g.rows();
    let cols = g.cols();
    let mut lane_mask = vec![false; rows * cols];
    let mut class_mask = vec![0u8; rows * cols];
    for row in 0..rows {
        let x_rel = g.x_of_row(row);
        let xw = x0 + x_rel;
        for col in 0..cols {
            let y_rel = g.y_of_col(col);
            let yw = y0 + y_rel;
            let i = row * cols + col;
            lane_mask[i] = spec
                .lanes
                .iter()
                .any(|l| (yw - l.eval(xw)).abs() <= l.width / 2.0);
            class_mask[i] = match ground_class(spec, xw, yw) {
                GroundClass::Obstacle => crate::segmentation::CLASS_OBSTACLE,
                GroundClass::Road | GroundClass::Paint(_) => crate::segmentation::CLASS_ROAD,
                GroundClass::Grass => crate::segmentation::CLASS_SCENE,
            };
        }
    }
    let mut lane_curves: Vec<[f64; 4]> =
        spec.lanes.iter().map(|l| shift_cubic(&l.coeffs, x0, y0)).collect();
    lane_curves.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let center_rel = shift_cubic(&spec.road_center, x0, y0);
    let mut boundary_left = center_rel;
    boundary_left[0] += spec.road_half_width;
    let mut boundary_right = center_rel;
    boundary_right[0] -= spec.road_half_width;
    Ok((
        img,
        SceneTruth {
            rows,
            cols,
            lane_mask,
            class_mask,
            lane_curves,
            boundary_left,
            boundary_right,
            drift_angle: spec.drift_angle(frame_idx),
            grid: g,
        },
    ))
}
