//! Procedural three-class image set: coloured shape compositions on
//! per-class backgrounds, jittered in position, size and colour.

use std::path::{Path, PathBuf};

use grembed_core::Split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifest::{Manifest, ManifestEntry};

pub const TOY_CLASSES: [&str; 3] = ["sun", "blocks", "cross"];
pub const TOY_PER_CLASS: usize = 20;
pub const TOY_SIZE: usize = 150;
pub const TOY_SEED: u64 = 7;
/// Jittered colours are snapped to the centres of this many levels per
/// channel, matching the quantizer at the default threshold, so pixel noise
/// never straddles a bin boundary.
pub const TOY_COLOR_LEVELS: f64 = 32.0;
const PIXEL_NOISE: f64 = 0.004;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Vertices in any order.
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Triangle([a, b, c]) => {
                let side = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
                let (s1, s2, s3) = (side(a, b), side(b, c), side(c, a));
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }

    fn shifted(self, dx: f64, dy: f64, grow: f64) -> Shape {
        match self {
            Shape::Disk { cx, cy, r } => Shape::Disk { cx: cx + dx, cy: cy + dy, r: r + grow },
            Shape::Rect { x0, y0, x1, y1 } => Shape::Rect { x0: x0 + dx - grow, y0: y0 + dy - grow, x1: x1 + dx + grow, y1: y1 + dy + grow },
            Shape::Triangle(v) => Shape::Triangle(v.map(|(x, y)| (x + dx, y + dy))),
        }
    }
}

struct Composition {
    background: [f64; 3],
    shapes: Vec<(Shape, [f64; 3])>,
}

fn composition(class: usize) -> Composition {
    match class {
        0 => Composition {
            background: [0.08, 0.10, 0.45],
            shapes: vec![
                (Shape::Disk { cx: 60.0, cy: 65.0, r: 30.0 }, [0.95, 0.85, 0.20]),
                (Shape::Disk { cx: 108.0, cy: 38.0, r: 13.0 }, [0.85, 0.20, 0.15]),
                (Shape::Rect { x0: 95.0, y0: 95.0, x1: 112.0, y1: 112.0 }, [0.95, 0.95, 0.95]),
            ],
        },
        1 => Composition {
            background: [0.80, 0.45, 0.10],
            shapes: vec![
                (Shape::Rect { x0: 28.0, y0: 32.0, x1: 70.0, y1: 74.0 }, [0.10, 0.10, 0.12]),
                (Shape::Rect { x0: 84.0, y0: 78.0, x1: 126.0, y1: 108.0 }, [0.97, 0.97, 0.90]),
                (Shape::Disk { cx: 50.0, cy: 112.0, r: 11.0 }, [0.15, 0.35, 0.90]),
            ],
        },
        _ => Composition {
            background: [0.10, 0.90, 0.60],
            shapes: vec![
                (Shape::Rect { x0: 30.0, y0: 64.0, x1: 120.0, y1: 84.0 }, [0.55, 0.05, 0.75]),
                (Shape::Rect { x0: 65.0, y0: 30.0, x1: 85.0, y1: 120.0 }, [0.55, 0.05, 0.75]),
                (Shape::Triangle([(20.0, 20.0), (50.0, 22.0), (28.0, 48.0)]), [0.05, 0.05, 0.05]),
            ],
        },
    }
}

/// Renders one image of `class` with jitter drawn from `rng`; channels in `[0, 1]`.
pub fn render(class: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let comp = composition(class);
    let (dx, dy) = (rng.gen_range(-8..=8) as f64, rng.gen_range(-8..=8) as f64);
    let snap = |v: f64| ((v * TOY_COLOR_LEVELS).floor().min(TOY_COLOR_LEVELS - 1.0) + 0.5) / TOY_COLOR_LEVELS;
    let jitter = |c: [f64; 3], rng: &mut ChaCha8Rng| c.map(|v| snap((v + rng.gen_range(-0.03..=0.03)).clamp(0.0, 1.0)));
    let background = jitter(comp.background, rng);
    let shapes: Vec<(Shape, [f64; 3])> = comp
        .shapes
        .iter()
        .map(|&(s, c)| (s.shifted(dx, dy, rng.gen_range(-1..=1) as f64), jitter(c, rng)))
        .collect();
    let mut pixels = Vec::with_capacity(TOY_SIZE * TOY_SIZE);
    for y in 0..TOY_SIZE {
        for x in 0..TOY_SIZE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let base = shapes.iter().rev().find(|(s, _)| s.contains(px, py)).map_or(background, |&(_, c)| c);
            let noise = rng.gen_range(-PIXEL_NOISE..=PIXEL_NOISE);
            pixels.push(base.map(|v| (v + noise).clamp(0.0, 1.0)));
        }
    }
    pixels
}

fn to_png(pixels: &[[f64; 3]]) -> image::RgbImage {
    let raw: Vec<u8> = pixels.iter().flat_map(|p| p.map(|c| (c * 255.0).round() as u8)).collect();
    image::RgbImage::from_raw(TOY_SIZE as u32, TOY_SIZE as u32, raw).expect("buffer matches size")
}

/// Writes 60 PNGs (3 classes × 20) under `out_dir` plus `manifest.tsv`;
/// within each class even-numbered images train, odd ones test.
pub fn generate_toy_dataset(out_dir: &Path, seed: u64) -> anyhow::Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (class, name) in TOY_CLASSES.iter().enumerate() {
        for k in 0..TOY_PER_CLASS {
            let path: PathBuf = out_dir.join(format!("{name}_{k:02}.png"));
            to_png(&render(class, &mut rng)).save(&path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            let split = if k % 2 == 0 { Split::Train } else { Split::Test };
            entries.push(ManifestEntry { path, class: name.to_string(), split });
        }
    }
    let manifest = Manifest { dataset: "toy".into(), entries };
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
