//! Crop preparation: mask-guided crop, aspect-preserving resize onto a square
//! canvas, and per-channel normalization.
//!
//! Resizing is bilinear with half-pixel centers and no antialias filter:
//! output pixel `(y, x)` samples source coordinate
//! `((y + 0.5) * in_h / out_h - 0.5, (x + 0.5) * in_w / out_w - 0.5)`,
//! clamped to the image. The short side is `round(side * target / long_side)`
//! (half away from zero). The content is centered with
//! `floor(slack / 2)` before and `ceil(slack / 2)` after.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};

/// Channel means measured on the reference fish-crop canvases.
pub const REFERENCE_MEAN: [f64; 3] = [0.0495, 0.0503, 0.0535];
/// Channel standard deviations measured on the reference fish-crop canvases.
pub const REFERENCE_STD: [f64; 3] = [0.1370, 0.1363, 0.1412];

/// Row-major HWC image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ReidError::InvalidImage("zero-sized image".into()));
        }
        if data.len() != height * width * 3 {
            return Err(ReidError::InvalidImage(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ReidError::InvalidImage("values outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| value).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Self {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| ReidError::InvalidImage(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ReidError::InvalidImage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(ReidError::InvalidImage(format!(
                "mask expects {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Single-channel PNG; any nonzero luma is foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| ReidError::InvalidImage(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.as_raw().iter().map(|&v| v != 0).collect())
    }

    /// Rasterizes COCO-style polygons (`[[x0, y0, x1, y1, ...], ...]`) with
    /// the even-odd rule, testing each pixel center `(x + 0.5, y + 0.5)`
    /// against all rings together.
    pub fn from_polygons(height: usize, width: usize, polygons: &[Vec<f64>]) -> Result<Self> {
        let rings: Vec<Vec<(f64, f64)>> = polygons
            .iter()
            .map(|p| {
                if p.len() < 6 || p.len() % 2 != 0 {
                    return Err(ReidError::InvalidImage(format!(
                        "polygon needs an even number (>= 6) of coordinates, got {}",
                        p.len()
                    )));
                }
                Ok(p.chunks_exact(2).map(|c| (c[0], c[1])).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_fn(height, width, |y, x| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            for ring in &rings {
                let mut j = ring.len() - 1;
                for i in 0..ring.len() {
                    let (xi, yi) = ring[i];
                    let (xj, yj) = ring[j];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
            }
            inside
        }))
    }

    /// Polygon JSON: `{"height":H,"width":W,"segmentation":[[x,y,...],...]}`.
    pub fn load_polygon_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct PolygonFile {
            height: usize,
            width: usize,
            segmentation: Vec<Vec<f64>>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| ReidError::io(path, e))?;
        let p: PolygonFile = serde_json::from_str(&text)
            .map_err(|e| ReidError::InvalidImage(format!("{}: {e}", path.display())))?;
        Self::from_polygons(p.height, p.width, &p.segmentation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub target: usize,
    pub pad_value: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            target: 224,
            pad_value: 0.0,
            mean: REFERENCE_MEAN,
            std: REFERENCE_STD,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target < 2 {
            return Err(ReidError::InvalidConfig(format!("target {} < 2", self.target)));
        }
        if !(0.0..=1.0).contains(&self.pad_value) {
            return Err(ReidError::InvalidConfig("pad_value outside [0, 1]".into()));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(ReidError::InvalidConfig(format!("std must be positive: {:?}", self.std)));
        }
        Ok(())
    }
}

/// Inclusive-exclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Tight mask bounding box grown by `pad`, clipped to the image.
pub fn crop_box(mask: &BinaryMask, pad: usize) -> Result<PixelBox> {
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
    }
    if y0 == usize::MAX {
        return Err(ReidError::EmptyMask);
    }
    let top = y0.saturating_sub(pad);
    let left = x0.saturating_sub(pad);
    let bottom = (y1 + pad).min(mask.height - 1);
    let right = (x1 + pad).min(mask.width - 1);
    Ok(PixelBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    })
}

/// Crops the padded mask box; pixels outside the mask are zeroed.
pub fn crop_instance(img: &RgbImage, mask: &BinaryMask, pad: usize) -> Result<RgbImage> {
    if img.height != mask.height || img.width != mask.width {
        return Err(ReidError::DimMismatch {
            expected: img.height * img.width,
            found: mask.height * mask.width,
        });
    }
    let b = crop_box(mask, pad)?;
    let mut data = Vec::with_capacity(b.height * b.width * 3);
    for y in b.top..b.top + b.height {
        for x in b.left..b.left + b.width {
            if mask.get(y, x) {
                data.extend_from_slice(&img.pixel(y, x));
            } else {
                data.extend_from_slice(&[0.0; 3]);
            }
        }
    }
    RgbImage::new(b.height, b.width, data)
}

/// Where the resized content lands on the `target x target` canvas.
pub fn letterbox_geometry(height: usize, width: usize, target: usize) -> PixelBox {
    let long = height.max(width) as f64;
    let scale = target as f64 / long;
    let side = |s: usize| {
        if s as f64 == long {
            target
        } else {
            ((s as f64 * scale).round() as usize).clamp(1, target)
        }
    };
    let (ch, cw) = (side(height), side(width));
    PixelBox {
        top: (target - ch) / 2,
        left: (target - cw) / 2,
        height: ch,
        width: cw,
    }
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(img: &RgbImage, out_h: usize, out_w: usize) -> RgbImage {
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let coord = |o: usize, s: f64, n: usize| -> (usize, usize, f64) {
        let c = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, img.height);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, img.width);
            let (p00, p01) = (img.pixel(y0, x0), img.pixel(y0, x1));
            let (p10, p11) = (img.pixel(y1, x0), img.pixel(y1, x1));
            for c in 0..3 {
                let top = p00[c] + (p01[c] - p00[c]) * fx;
                let bot = p10[c] + (p11[c] - p10[c]) * fx;
                data.push((top + (bot - top) * fy).clamp(0.0, 1.0));
            }
        }
    }
    RgbImage {
        height: out_h,
        width: out_w,
        data,
    }
}

pub fn resize_pad_square(img: &RgbImage, cfg: &TransformConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let t = cfg.target;
    let b = letterbox_geometry(img.height, img.width, t);
    let content = resize_bilinear(img, b.height, b.width);
    let mut canvas = RgbImage::filled(t, t, [cfg.pad_value; 3])?;
    for y in 0..b.height {
        let src = &content.data[y * b.width * 3..(y + 1) * b.width * 3];
        let start = ((b.top + y) * t + b.left) * 3;
        canvas.data[start..start + b.width * 3].copy_from_slice(src);
    }
    Ok(canvas)
}

/// HWC -> CHW with `(v - mean[c]) / std[c]`.
pub fn normalize(img: &RgbImage, cfg: &TransformConfig) -> Result<Vec<f64>> {
    if img.height != cfg.target || img.width != cfg.target {
        return Err(ReidError::InvalidImage(format!(
            "expected {t}x{t} canvas, got {}x{}",
            img.height,
            img.width,
            t = cfg.target
        )));
    }
    if let Some(s) = cfg.std.iter().find(|&&s| !(s > 0.0)) {
        return Err(ReidError::InvalidConfig(format!("std component {s} <= 0")));
    }
    let plane = img.height * img.width;
    let mut out = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            out[c * plane + i] = (img.data[i * 3 + c] - cfg.mean[c]) / cfg.std[c];
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`]: CHW tensor back to HWC values (not clamped).
pub fn denormalize(tensor: &[f64], side: usize, cfg: &TransformConfig) -> Result<Vec<f64>> {
    let plane = side * side;
    if tensor.len() != 3 * plane {
        return Err(ReidError::DimMismatch {
            expected: 3 * plane,
            found: tensor.len(),
        });
    }
    let mut out = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            out[i * 3 + c] = tensor[c * plane + i] * cfg.std[c] + cfg.mean[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

const DEGENERATE_STD: f64 = 1e-12;

/// Per-channel mean and population std over every canvas pixel, padding
/// included. Two passes, f64 accumulation, images visited in order.
pub fn compute_stats(images: &[RgbImage]) -> Result<ChannelStats> {
    if images.is_empty() {
        return Err(ReidError::EmptyCollection);
    }
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for img in images {
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        n += img.height * img.width;
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0f64; 3];
    for img in images {
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                let d = px[c] - mean[c];
                sq[c] += d * d;
            }
        }
    }
    let std = sq.map(|s| (s / n as f64).sqrt());
    // Rounding in the mean leaves ~1e-17 spread on constant input.
    if std.iter().any(|&s| !(s > DEGENERATE_STD)) {
        return Err(ReidError::DegenerateStd(std));
    }
    Ok(ChannelStats { mean, std })
}
