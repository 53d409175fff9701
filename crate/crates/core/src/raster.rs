//! Float RGB rasters, binary masks and the resampling kernels used by the
//! stages.
//!
//! Pixels are kept as `f64` in `[0, 1]`; conversion to 8 bits happens only in
//! [`Image::load_png`] / [`Image::save_png`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved H×W×3 image with real-valued pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Axis-aligned pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "image buffer has {} values, expected {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = self.idx(y, x, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = self.idx(y, x, 0);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, rect: Rect) -> Image {
        let mut data = Vec::with_capacity(rect.width() * rect.height() * 3);
        for y in rect.y0..rect.y1 {
            let start = self.idx(y, rect.x0, 0);
            data.extend_from_slice(&self.data[start..start + rect.width() * 3]);
        }
        Image {
            height: rect.height(),
            width: rect.width(),
            data,
        }
    }

    /// Write `patch` into `self` with its top-left corner at (`y0`, `x0`).
    pub fn paste(&mut self, patch: &Image, y0: usize, x0: usize) {
        for y in 0..patch.height {
            let src = patch.idx(y, 0, 0);
            let dst = self.idx(y0 + y, x0, 0);
            self.data[dst..dst + patch.width * 3]
                .copy_from_slice(&patch.data[src..src + patch.width * 3]);
        }
    }

    /// Like [`Image::paste`] but only where `mask` (patch-sized) is set.
    pub fn paste_masked(&mut self, patch: &Image, mask: &Mask, y0: usize, x0: usize) {
        for y in 0..patch.height {
            for x in 0..patch.width {
                if mask.get(y, x) {
                    self.set_pixel(y0 + y, x0 + x, patch.pixel(y, x));
                }
            }
        }
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c];
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        acc.map(|v| v / n)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Ok(Image {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    /// Quantize to 8 bits (round-half-up, clamped) and write a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::Dimension("image buffer size mismatch".into()))?;
        buf.save(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// The 8-bit quantization applied at file boundaries.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, rect: Rect) -> Mask {
        let mut data = Vec::with_capacity(rect.width() * rect.height());
        for y in rect.y0..rect.y1 {
            let start = y * self.width + rect.x0;
            data.extend_from_slice(&self.data[start..start + rect.width()]);
        }
        Mask {
            height: rect.height(),
            width: rect.width(),
            data,
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(a, b)| *a && *b)
    }

    /// Nearest-neighbour resample with half-pixel alignment.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Mask {
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let mut out = Mask::empty(out_h, out_w);
        for y in 0..out_h {
            let iy = (((y as f64 + 0.5) * sy).floor() as usize).min(self.height - 1);
            for x in 0..out_w {
                let ix = (((x as f64 + 0.5) * sx).floor() as usize).min(self.width - 1);
                out.set(y, x, self.get(iy, ix));
            }
        }
        out
    }

    /// `f`×`f` max-pooling; dimensions must be divisible by `f`.
    pub fn max_pool(&self, f: usize) -> Result<Mask> {
        if f == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(Error::Dimension(format!(
                "mask {}x{} not divisible by pooling factor {}",
                self.height, self.width, f
            )));
        }
        let (h, w) = (self.height / f, self.width / f);
        let mut out = Mask::empty(h, w);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    out.set(y / f, x / f, true);
                }
            }
        }
        Ok(out)
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let mut out = Mask::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                let ys = y.saturating_sub(radius)..(y + radius + 1).min(self.height);
                for yy in ys {
                    let xs = x.saturating_sub(radius)..(x + radius + 1).min(self.width);
                    for xx in xs {
                        out.set(yy, xx, true);
                    }
                }
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = image::open(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Ok(Mask {
            height: h as usize,
            width: w as usize,
            data: gray.as_raw().iter().map(|&v| v >= 128).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::Dimension("mask buffer size mismatch".into()))?;
        buf.save(path).map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Keys cubic convolution kernel.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

pub const BICUBIC_A: f64 = -0.5;

/// Sparse 1-D resampling weights: per output index, (source index, weight).
type Taps = Vec<Vec<(usize, f64)>>;

fn bicubic_taps(input: usize, output: usize) -> Taps {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor() as isize;
            (base - 1..=base + 2)
                .map(|i| {
                    let w = cubic_kernel(src - i as f64, BICUBIC_A);
                    (i.clamp(0, input as isize - 1) as usize, w)
                })
                .collect()
        })
        .collect()
}

fn area_taps(input: usize, output: usize) -> Taps {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < input {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

fn resample(img: &Image, rows: &Taps, cols: &Taps) -> Image {
    let out_h = rows.len();
    let out_w = cols.len();
    // horizontal pass
    let mut tmp = vec![0.0; img.height * out_w * 3];
    for y in 0..img.height {
        for (x, taps) in cols.iter().enumerate() {
            for c in 0..3 {
                let v: f64 = taps.iter().map(|&(i, w)| w * img.get(y, i, c)).sum();
                tmp[(y * out_w + x) * 3 + c] = v;
            }
        }
    }
    let mut data = vec![0.0; out_h * out_w * 3];
    for (y, taps) in rows.iter().enumerate() {
        for x in 0..out_w {
            for c in 0..3 {
                let v: f64 = taps
                    .iter()
                    .map(|&(i, w)| w * tmp[(i * out_w + x) * 3 + c])
                    .sum();
                data[(y * out_w + x) * 3 + c] = v;
            }
        }
    }
    Image {
        height: out_h,
        width: out_w,
        data,
    }
}

/// Bicubic (a = −0.5) resample to an arbitrary size, half-pixel aligned with
/// clamped borders.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Image {
    if out_h == img.height && out_w == img.width {
        return img.clone();
    }
    resample(
        img,
        &bicubic_taps(img.height, out_h),
        &bicubic_taps(img.width, out_w),
    )
}

/// Bicubic up-sampling by an integer factor.
pub fn bicubic_upsample(img: &Image, s: usize) -> Image {
    bicubic_resize(img, img.height * s, img.width * s)
}

/// Exact-coverage box filter resample.
pub fn area_resize(img: &Image, out_h: usize, out_w: usize) -> Image {
    if out_h == img.height && out_w == img.width {
        return img.clone();
    }
    resample(
        img,
        &area_taps(img.height, out_h),
        &area_taps(img.width, out_w),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for k in 0..20 {
            let t = k as f64 / 20.0;
            let s: f64 = (-1..=2)
                .map(|i| cubic_kernel(t - i as f64, BICUBIC_A))
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_kernel(0.0, BICUBIC_A), 1.0);
        assert_eq!(cubic_kernel(1.0, BICUBIC_A), 0.0);
        assert_eq!(cubic_kernel(2.0, BICUBIC_A), 0.0);
    }

    #[test]
    fn area_downsample_of_upsample_keeps_dims() {
        let img = Image::filled(7, 5, [0.3, 0.4, 0.5]);
        let up = bicubic_upsample(&img, 2);
        assert_eq!((up.height, up.width), (14, 10));
        let down = area_resize(&up, 7, 5);
        assert_eq!((down.height, down.width), (7, 5));
        for v in &down.data {
            assert!((v - 0.4).abs() < 0.11);
        }
    }

    #[test]
    fn area_resize_block_average() {
        let mut img = Image::filled(2, 2, [0.0; 3]);
        img.set_pixel(0, 0, [1.0, 1.0, 1.0]);
        let out = area_resize(&img, 1, 1);
        assert!((out.get(0, 0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn max_pool_and_dilate() {
        let mut m = Mask::empty(8, 8);
        m.set(5, 2, true);
        let p = m.max_pool(4).unwrap();
        assert!(p.get(1, 0));
        assert_eq!(p.count(), 1);
        assert!(m.max_pool(3).is_err());
        assert_eq!(m.dilate(1).count(), 9);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::filled(4, 6, [0.2, 0.5, 1.0]);
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back, img.quantized());
    }
}
