//! Difference-of-Gaussians keypoints with gradient-histogram descriptors.
//!
//! Pinned recipe: 3 octaves of 3 intervals, base blur 1.6 (input assumed at
//! 0.5), contrast threshold 0.03 on the interpolated DoG value, edge ratio
//! 10, 36-bin orientation histogram, 4×4 spatial × 8 orientation descriptor
//! with Gaussian weighting, clamp at 0.2 and renormalization.

use std::f64::consts::PI;

use grembed_core::Descriptor;

use crate::image::Image;
use crate::FrontendError;

pub const OCTAVES: usize = 3;
pub const INTERVALS: usize = 3;
pub const BASE_SIGMA: f64 = 1.6;
pub const INPUT_SIGMA: f64 = 0.5;
pub const CONTRAST_THRESHOLD: f64 = 0.03;
pub const EDGE_RATIO: f64 = 10.0;
/// Spatial cells per side × orientation bins per cell.
pub const DESCRIPTOR_DIM: usize = DESC_WIDTH * DESC_WIDTH * DESC_BINS;

const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_RADIUS_FACTOR: f64 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f64 = 0.8;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f64 = 3.0;
const DESC_CLAMP: f64 = 0.2;

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn blur(&self, sigma: f64) -> Plane {
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

        let mut tmp = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * self.at(clamp(x as isize + k as isize - radius, self.w), y);
                }
                tmp[y * self.w + x] = acc;
            }
        }
        let mut out = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[clamp(y as isize + k as isize - radius, self.h) * self.w + x];
                }
                out[y * self.w + x] = acc;
            }
        }
        Plane { w: self.w, h: self.h, data: out }
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, data }
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_pyramid(gray: Plane) -> Vec<Octave> {
    let k = 2f64.powf(1.0 / INTERVALS as f64);
    let mut increments = [0.0; INTERVALS + 3];
    for (i, inc) in increments.iter_mut().enumerate().skip(1) {
        let prev = BASE_SIGMA * k.powi(i as i32 - 1);
        let total = prev * k;
        *inc = (total * total - prev * prev).sqrt();
    }
    let base = gray.blur((BASE_SIGMA * BASE_SIGMA - INPUT_SIGMA * INPUT_SIGMA).sqrt());
    let mut octaves: Vec<Octave> = Vec::new();
    for o in 0..OCTAVES {
        let first = if o == 0 { base.clone() } else { octaves[o - 1].gauss[INTERVALS].downsample() };
        if first.w < 2 * BORDER + 3 || first.h < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = vec![first];
        for &inc in &increments[1..] {
            let next = gauss.last().unwrap().blur(inc);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|p| p[1].sub(&p[0])).collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize) -> bool {
    let v = dog[layer].at(x, y);
    if v.abs() <= 0.5 * CONTRAST_THRESHOLD {
        return false;
    }
    for plane in &dog[layer - 1..=layer + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                let n = plane.at(nx, ny);
                if (v > 0.0 && n > v) || (v < 0.0 && n < v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Solves `h · x = b` for a 3×3 system by partial-pivot elimination.
fn solve3(mut h: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| h[i][col].abs().total_cmp(&h[j][col].abs()))?;
        if h[pivot][col].abs() < 1e-12 {
            return None;
        }
        h.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = h[row][col] / h[col][col];
            let pivot_row = h[col];
            for (dst, src) in h[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|c| h[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / h[row][row];
    }
    Some(x)
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    offset: [f64; 3],
}

fn refine(dog: &[Plane], mut layer: usize, mut x: usize, mut y: usize) -> Option<Refined> {
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..MAX_REFINE_STEPS {
        let d = |l: usize, xx: usize, yy: usize| dog[l].at(xx, yy);
        let v = d(layer, x, y);
        let grad = [
            (d(layer, x + 1, y) - d(layer, x - 1, y)) / 2.0,
            (d(layer, x, y + 1) - d(layer, x, y - 1)) / 2.0,
            (d(layer + 1, x, y) - d(layer - 1, x, y)) / 2.0,
        ];
        let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * v;
        let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * v;
        let dss = d(layer + 1, x, y) + d(layer - 1, x, y) - 2.0 * v;
        let dxy = (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1) + d(layer, x - 1, y - 1)) / 4.0;
        let dxs = (d(layer + 1, x + 1, y) - d(layer + 1, x - 1, y) - d(layer - 1, x + 1, y) + d(layer - 1, x - 1, y)) / 4.0;
        let dys = (d(layer + 1, x, y + 1) - d(layer + 1, x, y - 1) - d(layer - 1, x, y + 1) + d(layer - 1, x, y - 1)) / 4.0;
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let offset = solve3(hess, grad.map(|g| -g))?;
        if offset.iter().all(|o| o.abs() < 0.5) {
            let contrast = v + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
            if contrast.abs() < CONTRAST_THRESHOLD {
                return None;
            }
            let trace = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            if det <= 0.0 || trace * trace * EDGE_RATIO >= (EDGE_RATIO + 1.0).powi(2) * det {
                return None;
            }
            return Some(Refined { x, y, layer, offset });
        }
        if offset.iter().any(|o| o.abs() > (w + h) as f64) {
            return None;
        }
        let step = |pos: usize, o: f64| pos as isize + o.round() as isize;
        let (nx, ny, nl) = (step(x, offset[0]), step(y, offset[1]), step(layer, offset[2]));
        if nl < 1 || nl > INTERVALS as isize || nx < BORDER as isize || ny < BORDER as isize || nx >= (w - BORDER) as isize || ny >= (h - BORDER) as isize {
            return None;
        }
        (x, y, layer) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

fn gradient(g: &Plane, x: usize, y: usize) -> (f64, f64) {
    let gx = g.at(x + 1, y) - g.at(x - 1, y);
    let gy = g.at(x, y + 1) - g.at(x, y - 1);
    ((gx * gx + gy * gy).sqrt(), gy.atan2(gx))
}

/// Dominant gradient directions around `(x, y)`, in radians in `[0, 2π)`.
fn orientations(g: &Plane, x: f64, y: f64, scale: f64) -> Vec<f64> {
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let radius = (ORI_RADIUS_FACTOR * scale).round() as isize;
    let sigma = ORI_SIGMA_FACTOR * scale;
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (cx + dx, cy + dy);
            if px <= 0 || py <= 0 || px >= g.w as isize - 1 || py >= g.h as isize - 1 {
                continue;
            }
            let (mag, angle) = gradient(g, px as usize, py as usize);
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let bin = ((ORI_BINS as f64 * (angle + 2.0 * PI) / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += weight * mag;
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORI_BINS {
            hist[i] = 0.25 * prev[(i + ORI_BINS - 1) % ORI_BINS] + 0.5 * prev[i] + 0.25 * prev[(i + 1) % ORI_BINS];
        }
    }
    let max = hist.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let (l, c, r) = (hist[(i + ORI_BINS - 1) % ORI_BINS], hist[i], hist[(i + 1) % ORI_BINS]);
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let bin = i as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
            let angle = (2.0 * PI * bin / ORI_BINS as f64).rem_euclid(2.0 * PI);
            out.push(angle);
        }
    }
    out
}

/// 4×4×8 histogram of gradient orientations relative to `ori`, with
/// trilinear interpolation and a Gaussian window of half the descriptor
/// width. `None` when the window holds no gradient energy.
fn describe(g: &Plane, x: f64, y: f64, ori: f64, scale: f64) -> Option<Vec<f64>> {
    let d = DESC_WIDTH as f64;
    let n = DESC_BINS;
    let cell = DESC_SCALE_FACTOR * scale;
    let radius = ((cell * 2f64.sqrt() * (d + 1.0) * 0.5).round() as isize).min(((g.w * g.w + g.h * g.h) as f64).sqrt() as isize);
    let (cos_t, sin_t) = (ori.cos(), ori.sin());
    let bins_per_rad = n as f64 / (2.0 * PI);
    let exp_scale = -1.0 / (d * d * 0.5);
    let side = DESC_WIDTH + 2;
    let mut hist = vec![0.0f64; side * side * n];
    let (cx, cy) = (x.round() as isize, y.round() as isize);

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let x_rot = (dx as f64 * cos_t + dy as f64 * sin_t) / cell;
            let y_rot = (-(dx as f64) * sin_t + dy as f64 * cos_t) / cell;
            let rbin = y_rot + d / 2.0 - 0.5;
            let cbin = x_rot + d / 2.0 - 0.5;
            if !(rbin > -1.0 && rbin < d && cbin > -1.0 && cbin < d) {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            if px <= 0 || py <= 0 || px >= g.w as isize - 1 || py >= g.h as isize - 1 {
                continue;
            }
            let (mag, angle) = gradient(g, px as usize, py as usize);
            let obin = ((angle - ori) * bins_per_rad).rem_euclid(n as f64);
            let value = mag * ((x_rot * x_rot + y_rot * y_rot) * exp_scale).exp();

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            for (dr, wr) in [(0usize, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0usize, 1.0 - fc), (1, fc)] {
                    for (dor, wo) in [(0usize, 1.0 - fo), (1, fo)] {
                        let r = (r0 as isize + 1) as usize + dr;
                        let c = (c0 as isize + 1) as usize + dc;
                        let o = (o0 as usize + dor) % n;
                        hist[(r * side + c) * n + o] += value * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut desc = Vec::with_capacity(DESCRIPTOR_DIM);
    for r in 0..DESC_WIDTH {
        for c in 0..DESC_WIDTH {
            let base = ((r + 1) * side + (c + 1)) * n;
            desc.extend_from_slice(&hist[base..base + n]);
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    desc.iter_mut().for_each(|v| *v = (*v / norm).min(DESC_CLAMP));
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    desc.iter_mut().for_each(|v| *v /= norm);
    Some(desc)
}

/// Keypoint descriptors of `img`, positions in `img` pixel coordinates.
///
/// Only the 128-dimensional layout is supported; other sizes come in
/// through [`crate::import_descriptors`].
pub fn extract_descriptors(img: &Image, dim: usize) -> Result<Vec<Descriptor>, FrontendError> {
    if dim != DESCRIPTOR_DIM {
        return Err(FrontendError::UnsupportedDim { dim, supported: DESCRIPTOR_DIM });
    }
    let gray = Plane { w: img.width(), h: img.height(), data: img.gray() };
    let pyramid = build_pyramid(gray);
    let mut out: Vec<Descriptor> = Vec::new();
    for (o, octave) in pyramid.iter().enumerate() {
        let (w, h) = (octave.dog[0].w, octave.dog[0].h);
        let factor = (1usize << o) as f64;
        for layer in 1..=INTERVALS {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    if !is_extremum(&octave.dog, layer, x, y) {
                        continue;
                    }
                    let Some(kp) = refine(&octave.dog, layer, x, y) else { continue };
                    let ox = kp.x as f64 + kp.offset[0];
                    let oy = kp.y as f64 + kp.offset[1];
                    let octave_scale = BASE_SIGMA * 2f64.powf((kp.layer as f64 + kp.offset[2]) / INTERVALS as f64);
                    let (ix, iy) = (ox * factor, oy * factor);
                    if !(ix >= 0.0 && iy >= 0.0 && ix < img.width() as f64 && iy < img.height() as f64) {
                        continue;
                    }
                    let g = &octave.gauss[kp.layer];
                    for ori in orientations(g, ox, oy, octave_scale) {
                        let Some(vector) = describe(g, ox, oy, ori, octave_scale) else { continue };
                        let d = Descriptor {
                            vector: vector.iter().map(|&v| v as f32).collect(),
                            x: ix as f32,
                            y: iy as f32,
                            scale: (octave_scale * factor) as f32,
                            orientation: ori as f32,
                        };
                        if (d.x as f64) < img.width() as f64 && (d.y as f64) < img.height() as f64 && !out.contains(&d) {
                            out.push(d);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
