//! PNG output for reconstructions and error maps. Frames are tiled left to
//! right; the intensity scale of every image is returned so it can be
//! written next to the figure.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Gray,
    /// Black through red and yellow to white.
    Hot,
}

/// What a pixel value of 0 and 255 (or the colormap ends) stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub colormap: Colormap,
    pub vmin: f64,
    pub vmax: f64,
}

/// `(T, H, W)` to `(H, T * W)`.
pub fn tile_frames(x: &Array3<f64>) -> Array2<f64> {
    let (t, h, w) = x.dim();
    let mut out = Array2::zeros((h, t * w));
    for (f, frame) in x.axis_iter(Axis(0)).enumerate() {
        out.slice_mut(ndarray::s![.., f * w..(f + 1) * w])
            .assign(&frame);
    }
    out
}

fn normalise(v: f64, scale: &ColorScale) -> f64 {
    let span = scale.vmax - scale.vmin;
    if span <= 0.0 {
        0.0
    } else {
        ((v - scale.vmin) / span).clamp(0.0, 1.0)
    }
}

fn hot(v: f64) -> [u8; 3] {
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(3.0 * v), c(3.0 * v - 1.0), c(3.0 * v - 2.0)]
}

pub fn write_png(path: &Path, img: &Array2<f64>, scale: &ColorScale) -> Result<()> {
    let (h, w) = img.dim();
    let res = match scale.colormap {
        Colormap::Gray => GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([(normalise(img[[y as usize, x as usize]], scale) * 255.0).round() as u8])
        })
        .save(path),
        Colormap::Hot => RgbImage::from_fn(w as u32, h as u32, |x, y| {
            Rgb(hot(normalise(img[[y as usize, x as usize]], scale)))
        })
        .save(path),
    };
    res.map_err(|e| ReconError::format(path, e.to_string()))
}

/// Magnitude frames as a grayscale strip scaled to `[0, vmax]`.
pub fn write_magnitude_png(path: &Path, mag: &Array3<f64>, vmax: f64) -> Result<ColorScale> {
    let scale = ColorScale {
        colormap: Colormap::Gray,
        vmin: 0.0,
        vmax,
    };
    write_png(path, &tile_frames(mag), &scale)?;
    Ok(scale)
}

/// Absolute error frames scaled to `[0, max error]`. The scale never drops
/// below `floor`, so round-off sized errors render black.
pub fn write_error_png(path: &Path, err: &Array3<f64>, floor: f64) -> Result<ColorScale> {
    let vmax = err.iter().cloned().fold(floor, f64::max);
    let scale = ColorScale {
        colormap: Colormap::Hot,
        vmin: 0.0,
        vmax,
    };
    write_png(path, &tile_frames(err), &scale)?;
    Ok(scale)
}
