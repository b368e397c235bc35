use std::path::Path;

use crate::FrontendError;

/// RGB raster with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    /// Values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut pixels: Vec<[f64; 3]>) -> Result<Self, FrontendError> {
        if width == 0 || height == 0 {
            return Err(FrontendError::EmptyImage { width, height });
        }
        if pixels.len() != width * height {
            return Err(FrontendError::PixelCount { expected: width * height, found: pixels.len() });
        }
        for p in &mut pixels {
            for c in p.iter_mut() {
                *c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self, FrontendError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Result<Self, FrontendError> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Luma (`0.299 R + 0.587 G + 0.114 B`) per pixel.
    pub fn gray(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    /// 8-bit RGB buffer, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(|c| (c * 255.0).round() as u8)).collect()
    }
}

/// Decodes a PNG or binary PPM file.
pub fn load_image(path: &Path) -> Result<Image, FrontendError> {
    let decode_err = |message: String| FrontendError::Decode { path: path.to_path_buf(), message };
    let reader = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => return Err(decode_err(format!("unsupported format {other:?} (expected PNG or PPM)"))),
    }
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let rgb = decoded.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0.map(|c| f64::from(c) / 65535.0)).collect();
    Image::new(w, h, pixels).map_err(|e| decode_err(e.to_string()))
}

/// Bilinear resampling with pixel-centre alignment: output pixel `x` samples
/// source coordinate `(x + 0.5)·src/dst − 0.5`, clamped to the source grid.
pub fn resize_bilinear(img: &Image, target: (usize, usize)) -> Result<Image, FrontendError> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(FrontendError::ZeroTarget { width: tw, height: th });
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(tw, img.width);
    let ys = axis(th, img.height);
    let mut pixels = Vec::with_capacity(tw * th);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            let mut out = [0.0; 3];
            for c in 0..3 {
                let top = (1.0 - fx) * p00[c] + fx * p10[c];
                let bottom = (1.0 - fx) * p01[c] + fx * p11[c];
                out[c] = (1.0 - fy) * top + fy * bottom;
            }
            pixels.push(out);
        }
    }
    Image::new(tw, th, pixels)
}

pub fn load_and_resize(path: &Path, target: (usize, usize)) -> Result<Image, FrontendError> {
    if target.0 == 0 || target.1 == 0 {
        return Err(FrontendError::ZeroTarget { width: target.0, height: target.1 });
    }
    resize_bilinear(&load_image(path)?, target)
}
