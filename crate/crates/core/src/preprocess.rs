//! Colour channel stretch and point-centred patch extraction.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PointLabel;
use crate::PATCH_SIZE;

/// Channels whose stretched top-percentile mean falls below this are left alone.
pub const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds { x: u32, y: u32, width: usize, height: usize },
    #[error("image is {width}x{height}; patch extraction needs at least {PATCH_SIZE}x{PATCH_SIZE}")]
    ImageTooSmall { width: usize, height: usize },
}

/// Three row-major planes of intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    planes: [Vec<f32>; 3],
}

impl RgbImage {
    pub fn from_planes(width: usize, height: usize, planes: [Vec<f32>; 3]) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::InvalidImage("zero-sized image".into()));
        }
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != width * height {
                return Err(PreprocessError::InvalidImage(format!(
                    "plane {c} has {} values, expected {}",
                    plane.len(),
                    width * height
                )));
            }
            if let Some(v) = plane.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                return Err(PreprocessError::InvalidImage(format!("plane {c} holds {v}, outside [0, 1]")));
            }
        }
        Ok(RgbImage { width, height, planes })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut planes = [vec![0f32; w * h], vec![0f32; w * h], vec![0f32; w * h]];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                planes[c][i] = f32::from(px[c]) / 255.0;
            }
        }
        RgbImage { width: w, height: h, planes }
    }

    /// Decodes PNG or JPEG from disk.
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let img = image::open(path).map_err(|e| PreprocessError::Decode {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        &self.planes[channel]
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.planes[channel][y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StretchWarning {
    DegenerateChannel { channel: usize },
}

/// Offsets computed for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStretch {
    /// Mean of the lowest 1% of intensities.
    pub low_mean: f64,
    /// Mean of the highest 1% of intensities after subtracting `low_mean`.
    pub high_mean: f64,
}

/// Number of intensities averaged at each tail.
pub fn tail_count(pixel_count: usize) -> usize {
    ((pixel_count as f64 * 0.01).floor() as usize).max(1)
}

/// Tail sums run over the tails in ascending order, as if fully sorted.
pub fn channel_stretch(values: &[f32]) -> ChannelStretch {
    let mut v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
    let n = v.len();
    let k = tail_count(n);
    if k < n {
        v.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let low = &mut v[..k];
    low.sort_by(f64::total_cmp);
    let low_mean = low.iter().sum::<f64>() / k as f64;
    let high = if k < n {
        let rest = &mut v[k..];
        let len = rest.len();
        let at = len.saturating_sub(k);
        if at > 0 {
            rest.select_nth_unstable_by(at, f64::total_cmp);
        }
        &mut rest[at..]
    } else {
        &mut v[..]
    };
    high.sort_by(f64::total_cmp);
    let high_mean = high.iter().map(|x| (x - low_mean).max(0.0)).sum::<f64>() / k as f64;
    ChannelStretch { low_mean, high_mean }
}

/// Stretches one channel; `None` when its dynamic range is degenerate.
pub fn stretch_channel(values: &[f32]) -> Option<Vec<f32>> {
    let s = channel_stretch(values);
    if s.high_mean < DEGENERATE_EPS {
        return None;
    }
    Some(
        values
            .iter()
            .map(|&v| (((f64::from(v) - s.low_mean).max(0.0)) / s.high_mean).min(1.0) as f32)
            .collect(),
    )
}

/// Per-channel percentile stretch: subtract the low-tail mean, clamp at zero,
/// divide by the high-tail mean of the shifted channel, clamp at one.
pub fn color_stretch(image: &RgbImage) -> (RgbImage, Vec<StretchWarning>) {
    let mut warnings = Vec::new();
    let planes: [Vec<f32>; 3] = std::array::from_fn(|c| match stretch_channel(&image.planes[c]) {
        Some(p) => p,
        None => {
            warn!("channel {c} has no dynamic range; passed through unchanged");
            warnings.push(StretchWarning::DegenerateChannel { channel: c });
            image.planes[c].clone()
        }
    });
    (
        RgbImage {
            width: image.width,
            height: image.height,
            planes,
        },
        warnings,
    )
}

/// A 224×224×3 patch in channel-major (CHW) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source_image_id: String,
    pub center: (u32, u32),
    pixels: Vec<f32>,
}

impl Patch {
    pub fn from_pixels(source_image_id: impl Into<String>, center: (u32, u32), pixels: Vec<f32>) -> Result<Self, PreprocessError> {
        if pixels.len() != 3 * PATCH_SIZE * PATCH_SIZE {
            return Err(PreprocessError::InvalidImage(format!(
                "patch holds {} values, expected {}",
                pixels.len(),
                3 * PATCH_SIZE * PATCH_SIZE
            )));
        }
        Ok(Patch {
            source_image_id: source_image_id.into(),
            center,
            pixels,
        })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.pixels[(channel * PATCH_SIZE + row) * PATCH_SIZE + col]
    }
}

/// Cuts rows `y-112..=y+111` and columns `x-112..=x+111`, replicating edge
/// pixels where the window leaves the image.
pub fn extract_patch(image: &RgbImage, point: &PointLabel) -> Result<Patch, PreprocessError> {
    if image.width < PATCH_SIZE || image.height < PATCH_SIZE {
        return Err(PreprocessError::ImageTooSmall {
            width: image.width,
            height: image.height,
        });
    }
    let (x, y) = (point.x_px as usize, point.y_px as usize);
    if x >= image.width || y >= image.height {
        return Err(PreprocessError::PointOutOfBounds {
            x: point.x_px,
            y: point.y_px,
            width: image.width,
            height: image.height,
        });
    }
    let half = (PATCH_SIZE / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let cols: Vec<usize> = (0..PATCH_SIZE as isize)
        .map(|c| clamp(x as isize - half + c, image.width))
        .collect();
    let mut pixels = Vec::with_capacity(3 * PATCH_SIZE * PATCH_SIZE);
    for plane in &image.planes {
        for r in 0..PATCH_SIZE as isize {
            let row = clamp(y as isize - half + r, image.height) * image.width;
            pixels.extend(cols.iter().map(|&c| plane[row + c]));
        }
    }
    Ok(Patch {
        source_image_id: point.image_id.clone(),
        center: (point.x_px, point.y_px),
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> RgbImage {
        let plane: Vec<f32> = (0..width * height).map(|i| f(i % width, i / width)).collect();
        RgbImage::from_planes(width, height, [plane.clone(), plane.clone(), plane]).unwrap()
    }

    fn label(x: u32, y: u32) -> PointLabel {
        PointLabel {
            image_id: "im".into(),
            x_px: x,
            y_px: y,
            class_code: "MAECK".into(),
        }
    }

    #[test]
    fn two_pixel_channel() {
        let s = channel_stretch(&[0.2, 0.8]);
        assert_eq!(s.low_mean, f64::from(0.2f32));
        assert_eq!(s.high_mean, f64::from(0.8f32) - f64::from(0.2f32));
        assert_eq!(stretch_channel(&[0.2, 0.8]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn ramp_maps_into_unit_interval() {
        let img = gray(100, 100, |x, y| (y * 100 + x) as f32 / 9999.0);
        let (out, warnings) = color_stretch(&img);
        assert!(warnings.is_empty());
        for c in 0..3 {
            let p = out.plane(c);
            let min = p.iter().cloned().fold(f32::INFINITY, f32::min);
            let max = p.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert!(min.abs() < 1e-6);
            assert!(max <= 1.0);
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = gray(10, 10, |_, _| 0.5);
        let (out, warnings) = color_stretch(&img);
        assert_eq!(out, img);
        assert_eq!(warnings.len(), 3);
    }

    #[test]
    fn rejects_out_of_range_planes() {
        assert!(RgbImage::from_planes(1, 1, [vec![1.5], vec![0.0], vec![0.0]]).is_err());
        assert!(RgbImage::from_planes(1, 1, [vec![f32::NAN], vec![0.0], vec![0.0]]).is_err());
        assert!(RgbImage::from_planes(2, 1, [vec![0.0], vec![0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn interior_patch_equals_crop() {
        let img = gray(448, 448, |x, y| ((x * 7 + y * 13) % 256) as f32 / 255.0);
        let p = extract_patch(&img, &label(224, 224)).unwrap();
        for r in [0usize, 50, 223] {
            for c in [0usize, 111, 223] {
                assert_eq!(p.get(0, r, c), img.get(0, 112 + c, 112 + r));
            }
        }
    }

    #[test]
    fn corner_patch_replicates_edges() {
        let img = gray(300, 250, |x, y| ((x + 2 * y) % 256) as f32 / 255.0);
        let p = extract_patch(&img, &label(0, 0)).unwrap();
        assert_eq!(p.get(1, 0, 0), img.get(1, 0, 0));
        assert_eq!(p.get(1, 111, 111), img.get(1, 0, 0));
        assert_eq!(p.get(1, 112, 112), img.get(1, 0, 0));
        assert_eq!(p.get(1, 112, 113), img.get(1, 1, 0));
        assert_eq!(p.get(1, 223, 223), img.get(1, 111, 111));
        assert_eq!(p.get(2, 0, 200), img.get(2, 88, 0));
    }

    #[test]
    fn patch_errors() {
        let img = gray(300, 300, |_, _| 0.1);
        assert!(matches!(
            extract_patch(&img, &label(300, 5)),
            Err(PreprocessError::PointOutOfBounds { .. })
        ));
        let small = gray(100, 300, |_, _| 0.1);
        assert!(matches!(
            extract_patch(&small, &label(5, 5)),
            Err(PreprocessError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn rgb8_normalisation() {
        let mut img = image::RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([255, 0, 51]));
        let rgb = RgbImage::from_rgb8(&img);
        assert_eq!(rgb.get(0, 1, 0), 1.0);
        assert_eq!(rgb.get(2, 1, 0), 0.2);
        assert_eq!(rgb.get(1, 0, 0), 0.0);
    }
}
