//! Raster containers, color conversion, and shadow-attenuating preprocessing.
//!
//! All containers are value-like row-major buffers; every operation here is a
//! pure function, so calling them concurrently from multiple threads is safe.

mod pnm;

pub use pnm::{read_pgm, read_ppm, read_any, write_pgm, write_ppm};

use crate::{Error, Result};

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved samples; length = rows * cols * channels.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Image { rows, cols, channels, data: vec![0; rows * cols * channels] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> u8 {
        self.data[(r * self.cols + c) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: u8) {
        self.data[(r * self.cols + c) * self.channels + ch] = v;
    }
}

/// Single-channel f64 plane. Used for gray / feature / response / grid data.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "plane dimensions must be positive");
        Plane { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut p = Plane::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                p.data[r * cols + c] = f(r, c);
            }
        }
        p
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Bilinear sample at 1-based fractional coordinates, clamped to the
    /// plane borders. `(1.0, 1.0)` is the center of the top-left sample.
    pub fn sample_bilinear(&self, row1: f64, col1: f64) -> f64 {
        let r = (row1 - 1.0).clamp(0.0, (self.rows - 1) as f64);
        let c = (col1 - 1.0).clamp(0.0, (self.cols - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let top = self.get(r0, c0) * (1.0 - fc) + self.get(r0, c1) * fc;
        let bot = self.get(r1, c0) * (1.0 - fc) + self.get(r1, c1) * fc;
        top * (1.0 - fr) + bot * fr
    }

    /// Nearest-neighbor sample at 1-based fractional coordinates (for label
    /// planes where interpolation would invent classes).
    pub fn sample_nearest(&self, row1: f64, col1: f64) -> f64 {
        let r = (row1 - 1.0).round().clamp(0.0, (self.rows - 1) as f64) as usize;
        let c = (col1 - 1.0).round().clamp(0.0, (self.cols - 1) as f64) as usize;
        self.get(r, c)
    }
}

/// CIE L*a*b* image as three aligned f64 planes.
///
/// Nominal ranges: L in [0, 100], a and b roughly in [-128, 127].
#[derive(Debug, Clone)]
pub struct LabImage {
    pub l: Plane,
    pub a: Plane,
    pub b: Plane,
}

impl LabImage {
    pub fn rows(&self) -> usize {
        self.l.rows
    }
    pub fn cols(&self) -> usize {
        self.l.cols
    }
}

/// Quantize a [0, 1] plane to an 8-bit image (values clamped).
pub fn plane_to_u8(p: &Plane) -> Image {
    let mut img = Image::new(p.rows, p.cols, 1);
    for (dst, &v) in img.data.iter_mut().zip(&p.data) {
        *dst = (v * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    img
}

/// Affine-normalize a plane to its min/max range and quantize to 8 bits
/// (flat planes map to 0). For response-plane inspection dumps.
pub fn plane_to_u8_normalized(p: &Plane) -> Image {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &p.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut img = Image::new(p.rows, p.cols, 1);
    if span > 0.0 {
        for (dst, &v) in img.data.iter_mut().zip(&p.data) {
            *dst = ((v - lo) / span * 255.0).round() as u8;
        }
    }
    img
}

// sRGB -> linear lookup table over the u8 domain; the transfer curve is fixed
// so the table is exact.
fn srgb_linear_table() -> [f64; 256] {
    let mut t = [0.0; 256];
    for (i, slot) in t.iter_mut().enumerate() {
        let c = i as f64 / 255.0;
        *slot = if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) };
    }
    t
}

const XN: f64 = 0.95047;
const ZN: f64 = 1.08883;

#[inline]
fn lab_f(t: f64) -> f64 {
    const EPS: f64 = 216.0 / 24389.0; // (6/29)^3
    if t > EPS {
        t.cbrt()
    } else {
        t / (3.0 * (6.0 / 29.0) * (6.0 / 29.0)) + 4.0 / 29.0
    }
}

/// Convert an 8-bit sRGB image to CIE L*a*b* under the D65 reference white.
///
/// The sRGB transfer curve is linearized before the XYZ matrix is applied.
pub fn rgb_to_lab(img: &Image) -> Result<LabImage> {
    if img.channels != 3 {
        return Err(Error::InvalidInput(format!(
            "rgb_to_lab needs 3 channels, got {}",
            img.channels
        )));
    }
    let lut = srgb_linear_table();
    let mut l = Plane::new(img.rows, img.cols);
    let mut a = Plane::new(img.rows, img.cols);
    let mut b = Plane::new(img.rows, img.cols);
    for i in 0..img.rows * img.cols {
        let rl = lut[img.data[3 * i] as usize];
        let gl = lut[img.data[3 * i + 1] as usize];
        let bl = lut[img.data[3 * i + 2] as usize];
        let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
        let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
        let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
        let fx = lab_f(x / XN);
        let fy = lab_f(y);
        let fz = lab_f(z / ZN);
        l.data[i] = 116.0 * fy - 16.0;
        a.data[i] = 500.0 * (fx - fy);
        b.data[i] = 200.0 * (fy - fz);
    }
    Ok(LabImage { l, a, b })
}

/// Luminance projection with ITU-R 601 weights, output in [0, 1].
pub fn to_gray(img: &Image) -> Result<Plane> {
    if img.channels != 3 {
        return Err(Error::InvalidInput(format!(
            "to_gray needs 3 channels, got {}",
            img.channels
        )));
    }
    let mut out = Plane::new(img.rows, img.cols);
    for i in 0..img.rows * img.cols {
        let r = img.data[3 * i] as f64;
        let g = img.data[3 * i + 1] as f64;
        let b = img.data[3 * i + 2] as f64;
        out.data[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
    }
    Ok(out)
}

/// Tile edge used by the local normalization below.
pub const INVARIANT_TILE: usize = 32;

// Standard-deviation floors: tiles flatter than these produce a near-zero
// standardized value instead of amplified noise. Keeping the floor in
// absolute units also keeps the output stable under brightness scaling.
const L_STD_FLOOR: f64 = 2.0;
const CHROMA_STD_FLOOR: f64 = 2.0;

/// Shadow-attenuating feature plane in [0, 1].
///
/// L values and (a, b) chroma magnitudes are standardized against local
/// statistics gathered on a 32x32 tile lattice and interpolated bilinearly
/// between tile centers (interpolation keeps the plane free of tile seams,
/// which would otherwise read as ridges downstream). The two standardized
/// components are blended and squashed into [0, 1]. A multiplicative
/// brightness change (a shadow) shifts the local mean and spread together,
/// so the standardized values move far less than raw L does. Achromatic
/// contrast (paint on asphalt) survives because the chroma term is
/// additive, not a gate.
pub fn illuminant_invariant(lab: &LabImage) -> Plane {
    let rows = lab.rows();
    let cols = lab.cols();
    let mut chroma = Plane::new(rows, cols);
    for i in 0..rows * cols {
        chroma.data[i] = (lab.a.data[i] * lab.a.data[i] + lab.b.data[i] * lab.b.data[i]).sqrt();
    }
    let t_rows = rows.div_ceil(INVARIANT_TILE);
    let t_cols = cols.div_ceil(INVARIANT_TILE);
    let mut mean_l = vec![0.0f64; t_rows * t_cols];
    let mut sd_l = vec![0.0f64; t_rows * t_cols];
    let mut mean_c = vec![0.0f64; t_rows * t_cols];
    let mut sd_c = vec![0.0f64; t_rows * t_cols];
    let mut center_r = vec![0.0f64; t_rows];
    let mut center_c = vec![0.0f64; t_cols];
    for ti in 0..t_rows {
        let r0 = ti * INVARIANT_TILE;
        let r1 = (r0 + INVARIANT_TILE).min(rows);
        center_r[ti] = (r0 + r1 - 1) as f64 / 2.0;
        for tj in 0..t_cols {
            let c0 = tj * INVARIANT_TILE;
            let c1 = (c0 + INVARIANT_TILE).min(cols);
            if ti == 0 {
                center_c[tj] = (c0 + c1 - 1) as f64 / 2.0;
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let (mut sl, mut sl2, mut sc, mut sc2) = (0.0, 0.0, 0.0, 0.0);
            for r in r0..r1 {
                for c in c0..c1 {
                    let lv = lab.l.get(r, c);
                    let cv = chroma.get(r, c);
                    sl += lv;
                    sl2 += lv * lv;
                    sc += cv;
                    sc2 += cv * cv;
                }
            }
            let ml = sl / n;
            let mc = sc / n;
            mean_l[ti * t_cols + tj] = ml;
            sd_l[ti * t_cols + tj] = (sl2 / n - ml * ml).max(0.0).sqrt().max(L_STD_FLOOR);
            mean_c[ti * t_cols + tj] = mc;
            sd_c[ti * t_cols + tj] = (sc2 / n - mc * mc).max(0.0).sqrt().max(CHROMA_STD_FLOOR);
        }
    }
    // Per-pixel statistics: bilinear between the 4 nearest tile centers.
    let locate = |p: f64, centers: &[f64]| -> (usize, usize, f64) {
        if p <= centers[0] || centers.len() == 1 {
            return (0, 0, 0.0);
        }
        if p >= centers[centers.len() - 1] {
            return (centers.len() - 1, centers.len() - 1, 0.0);
        }
        let hi = centers.partition_point(|&c| c < p).max(1);
        let lo = hi - 1;
        let f = (p - centers[lo]) / (centers[hi] - centers[lo]);
        (lo, hi, f)
    };
    let mut out = Plane::new(rows, cols);
    for r in 0..rows {
        let (ri, rj, fr) = locate(r as f64, &center_r);
        for c in 0..cols {
            let (ci, cj, fc) = locate(c as f64, &center_c);
            let blend = |grid: &[f64]| -> f64 {
                let top = grid[ri * t_cols + ci] * (1.0 - fc) + grid[ri * t_cols + cj] * fc;
                let bot = grid[rj * t_cols + ci] * (1.0 - fc) + grid[rj * t_cols + cj] * fc;
                top * (1.0 - fr) + bot * fr
            };
            let z_l = (lab.l.get(r, c) - blend(&mean_l)) / blend(&sd_l);
            let z_c = (chroma.get(r, c) - blend(&mean_c)) / blend(&sd_c);
            let feat = z_l + 0.25 * z_c;
            out.set(r, c, (0.5 + feat / 8.0).clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(rows: usize, cols: usize, rgb: [u8; 3]) -> Image {
        let mut img = Image::new(rows, cols, 3);
        for r in 0..rows {
            for c in 0..cols {
                for (ch, &v) in rgb.iter().enumerate() {
                    img.set(r, c, ch, v);
                }
            }
        }
        img
    }

    #[test]
    fn lab_black_is_zero() {
        let lab = rgb_to_lab(&solid(2, 2, [0, 0, 0])).unwrap();
        assert!(lab.l.get(0, 0).abs() < 1e-12);
        assert!(lab.a.get(0, 0).abs() < 1e-12);
        assert!(lab.b.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn lab_white_is_reference_white() {
        let lab = rgb_to_lab(&solid(1, 1, [255, 255, 255])).unwrap();
        assert!((lab.l.get(0, 0) - 100.0).abs() < 0.01);
        assert!(lab.a.get(0, 0).abs() < 0.5);
        assert!(lab.b.get(0, 0).abs() < 0.5);
    }

    #[test]
    fn lab_mid_gray_matches_reference_converter() {
        // Frozen from an independent sRGB->Lab script: (119,119,119)
        // -> L = 50.034440993686104, |a| and |b| below 1e-4.
        let lab = rgb_to_lab(&solid(1, 1, [119, 119, 119])).unwrap();
        assert!((lab.l.get(0, 0) - 50.034440993686104).abs() < 1e-9);
        assert!(lab.a.get(0, 0).abs() < 1e-4);
        assert!(lab.b.get(0, 0).abs() < 1e-4);
    }

    #[test]
    fn lab_determinism_equal_inputs() {
        let img = solid(1, 2, [37, 180, 92]);
        let lab = rgb_to_lab(&img).unwrap();
        assert_eq!(lab.l.get(0, 0), lab.l.get(0, 1));
        assert_eq!(lab.a.get(0, 0), lab.a.get(0, 1));
        assert_eq!(lab.b.get(0, 0), lab.b.get(0, 1));
    }

    #[test]
    fn lab_rejects_single_channel() {
        let img = Image::new(2, 2, 1);
        assert!(matches!(rgb_to_lab(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gray_weights() {
        assert!(to_gray(&solid(1, 1, [0, 0, 0])).unwrap().get(0, 0).abs() < 1e-12);
        assert!((to_gray(&solid(1, 1, [255, 255, 255])).unwrap().get(0, 0) - 1.0).abs() < 1e-12);
        assert!((to_gray(&solid(1, 1, [255, 0, 0])).unwrap().get(0, 0) - 0.299).abs() < 1e-12);
    }

    /// Deterministic textured test patch with mild color.
    fn textured(rows: usize, cols: usize, scale: f64) -> Image {
        let mut img = Image::new(rows, cols, 3);
        for r in 0..rows {
            for c in 0..cols {
                let t = ((r * 31 + c * 17) % 64) as f64 / 64.0;
                let base = 90.0 + 60.0 * t;
                let v = |x: f64| ((x * scale).round().clamp(0.0, 255.0)) as u8;
                img.set(r, c, 0, v(base));
                img.set(r, c, 1, v(base + 12.0));
                img.set(r, c, 2, v(base - 8.0));
            }
        }
        img
    }

    #[test]
    fn invariant_constant_input_is_constant() {
        let lab = rgb_to_lab(&solid(40, 40, [120, 130, 110])).unwrap();
        let inv = illuminant_invariant(&lab);
        let first = inv.get(0, 0);
        assert!(inv.data.iter().all(|&v| (v - first).abs() < 1e-12));
        assert!((0.0..=1.0).contains(&first));
    }

    #[test]
    fn invariant_range() {
        let lab = rgb_to_lab(&textured(64, 64, 1.0)).unwrap();
        let inv = illuminant_invariant(&lab);
        assert!(inv.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn invariant_attenuates_brightness_change() {
        // Mean abs difference between an image and its half-brightness copy,
        // compared on matched [0,1] scales (L normalized by 100).
        let bright = textured(64, 64, 1.0);
        let dim = textured(64, 64, 0.5);
        let lab_b = rgb_to_lab(&bright).unwrap();
        let lab_d = rgb_to_lab(&dim).unwrap();
        let inv_b = illuminant_invariant(&lab_b);
        let inv_d = illuminant_invariant(&lab_d);
        let n = (64 * 64) as f64;
        let d_l: f64 = lab_b
            .l
            .data
            .iter()
            .zip(&lab_d.l.data)
            .map(|(x, y)| (x - y).abs() / 100.0)
            .sum::<f64>()
            / n;
        let d_inv: f64 = inv_b
            .data
            .iter()
            .zip(&inv_d.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        assert!(
            d_inv < d_l,
            "invariant diff {d_inv} should be below L diff {d_l}"
        );
    }

    #[test]
    fn invariant_shadow_half_gap_reduced() {
        // Left half at 0.4x brightness; the inter-half mean gap of the
        // output must drop by at least 50% versus the L channel.
        let rows = 64;
        let cols = 128;
        let mut img = textured(rows, cols, 1.0);
        for r in 0..rows {
            for c in 0..cols / 2 {
                for ch in 0..3 {
                    let v = img.get(r, c, ch) as f64 * 0.4;
                    img.set(r, c, ch, v.round() as u8);
                }
            }
        }
        let lab = rgb_to_lab(&img).unwrap();
        let inv = illuminant_invariant(&lab);
        let half_means = |p: &Plane, scale: f64| {
            let mut left = 0.0;
            let mut right = 0.0;
            for r in 0..rows {
                for c in 0..cols {
                    let v = p.get(r, c) / scale;
                    if c < cols / 2 {
                        left += v;
                    } else {
                        right += v;
                    }
                }
            }
            let n = (rows * cols / 2) as f64;
            (left / n, right / n)
        };
        let (l_l, l_r) = half_means(&lab.l, 100.0);
        let (i_l, i_r) = half_means(&inv, 1.0);
        let gap_l = (l_l - l_r).abs();
        let gap_i = (i_l - i_r).abs();
        assert!(
            gap_i <= 0.5 * gap_l,
            "output gap {gap_i} not reduced >=50% vs L gap {gap_l}"
        );
    }

    #[test]
    fn bilinear_sampling_basics() {
        let p = Plane::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        assert!((p.sample_bilinear(1.0, 1.0) - 0.0).abs() < 1e-12);
        assert!((p.sample_bilinear(1.5, 1.5) - 1.5).abs() < 1e-12);
        assert!((p.sample_bilinear(2.0, 2.0) - 3.0).abs() < 1e-12);
    }
}
