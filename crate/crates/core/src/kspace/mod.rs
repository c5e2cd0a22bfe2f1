//! Complex image / k-space containers and the single-coil Cartesian
//! acquisition model `y = E x + noise`, where `E` is a frame-wise centered
//! Fourier transform followed by a phase-encode line mask.

mod fft;
mod mask;

pub use fft::{fft2c, fft2c_frames, ifft2c, ifft2c_frames};
pub(crate) use fft::{transform_frames, transform_in_place};
pub use mask::{default_center_lines, make_mask, MaskParams, SamplingMask, STANDARD_ACCELERATIONS};

use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::C64;

/// Canvas every challenge image is zero-padded to before inference.
pub const CHALLENGE_CANVAS: (usize, usize) = (256, 512);

/// Whether a slice lives on its acquired grid or on a zero-padded canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Padding {
    Original,
    Padded { original: (usize, usize) },
}

/// A complex `(T, H, W)` image sequence for one anatomical slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CineSlice {
    data: Array3<C64>,
    frame_rate_hint: Option<f64>,
    padding: Padding,
}

impl CineSlice {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        let (t, h, w) = data.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(ReconError::validation(format!(
                "cine slice needs T, H, W >= 1, got ({t}, {h}, {w})"
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(ReconError::validation(
                "cine slice contains non-finite entries",
            ));
        }
        Ok(CineSlice {
            data,
            frame_rate_hint: None,
            padding: Padding::Original,
        })
    }

    pub fn with_frame_rate_hint(mut self, hint: f64) -> Result<Self> {
        if !(hint.is_finite() && hint > 0.0) {
            return Err(ReconError::validation("frame rate hint must be positive"));
        }
        self.frame_rate_hint = Some(hint);
        Ok(self)
    }

    pub(crate) fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<C64> {
        self.data
    }

    /// `(T, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn frame_rate_hint(&self) -> Option<f64> {
        self.frame_rate_hint
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Size of the acquired grid, whether or not this slice is padded.
    pub fn original_size(&self) -> (usize, usize) {
        match self.padding {
            Padding::Original => (self.data.dim().1, self.data.dim().2),
            Padding::Padded { original } => original,
        }
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|v| v.norm())
    }
}

/// How a k-space stack was sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Full,
    Masked(SamplingMask),
}

impl Sampling {
    /// Per-column weights over `width` phase-encode columns.
    pub fn weights(&self, width: usize) -> Vec<f64> {
        match self {
            Sampling::Full => vec![1.0; width],
            Sampling::Masked(m) => m.weights(),
        }
    }

    pub fn acceleration(&self) -> Option<usize> {
        match self {
            Sampling::Full => None,
            Sampling::Masked(m) => Some(m.acceleration()),
        }
    }
}

/// Frequency-domain counterpart of a [`CineSlice`] with its sampling pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    data: Array3<C64>,
    sampling: Sampling,
}

impl KSpaceData {
    /// Wrap acquired k-space; unsampled columns must already be exactly zero.
    pub fn new(data: Array3<C64>, sampling: Sampling) -> Result<Self> {
        let (t, h, w) = data.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(ReconError::validation("empty k-space"));
        }
        if let Sampling::Masked(m) = &sampling {
            if m.width() != w {
                return Err(ReconError::shape(&[w], &[m.width()]));
            }
            for (col, &sampled) in m.lines().iter().enumerate() {
                if !sampled
                    && data
                        .slice(s![.., .., col])
                        .iter()
                        .any(|v| v.norm_sqr() != 0.0)
                {
                    return Err(ReconError::validation(format!(
                        "k-space column {col} is unsampled but nonzero"
                    )));
                }
            }
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(ReconError::validation(
                "k-space contains non-finite entries",
            ));
        }
        Ok(KSpaceData { data, sampling })
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn sampling(&self) -> &Sampling {
        &self.sampling
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn column_weights(&self) -> Vec<f64> {
        self.sampling.weights(self.data.dim().2)
    }
}

fn apply_column_weights(data: &mut Array3<C64>, weights: &[f64]) {
    for mut lane in data.lanes_mut(ndarray::Axis(2)) {
        for (v, &wgt) in lane.iter_mut().zip(weights) {
            if wgt == 0.0 {
                *v = C64::new(0.0, 0.0);
            } else {
                *v *= wgt;
            }
        }
    }
}

/// `E x`: per-frame [`fft2c`] followed by the line mask.
pub fn forward_operator(slice: &CineSlice, mask: &SamplingMask) -> Result<KSpaceData> {
    forward_operator_with(slice, &Sampling::Masked(mask.clone()))
}

/// `E x` for an arbitrary [`Sampling`], including full sampling.
pub fn forward_operator_with(slice: &CineSlice, sampling: &Sampling) -> Result<KSpaceData> {
    let (_, _, w) = slice.dims();
    if let Sampling::Masked(m) = sampling {
        if m.width() != w {
            return Err(ReconError::shape(&[w], &[m.width()]));
        }
    }
    let mut k = transform_frames(slice.data.view(), FftDirection::Forward);
    apply_column_weights(&mut k, &sampling.weights(w));
    Ok(KSpaceData {
        data: k,
        sampling: sampling.clone(),
    })
}

/// `E x + noise` with circular complex Gaussian noise of standard deviation
/// `noise_std` per real component, added on sampled entries only.
pub fn forward_operator_noisy(
    slice: &CineSlice,
    mask: &SamplingMask,
    noise_std: f64,
    seed: u64,
) -> Result<KSpaceData> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(ReconError::validation(
            "noise_std must be finite and nonnegative",
        ));
    }
    let mut k = forward_operator(slice, mask)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = mask.weights();
        for mut lane in k.data.lanes_mut(ndarray::Axis(2)) {
            for (v, &wgt) in lane.iter_mut().zip(&weights) {
                if wgt != 0.0 {
                    *v += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
        }
    }
    Ok(k)
}

/// `E^H y`: mask then per-frame [`ifft2c`]; the zero-filled reconstruction.
pub fn adjoint_operator(kspace: &KSpaceData) -> CineSlice {
    let mut k = kspace.data.clone();
    apply_column_weights(&mut k, &kspace.column_weights());
    CineSlice {
        data: transform_frames(k.view(), FftDirection::Inverse),
        frame_rate_hint: None,
        padding: Padding::Original,
    }
}

/// Fully sampled k-space of a slice.
pub fn fully_sampled(slice: &CineSlice) -> KSpaceData {
    forward_operator_with(slice, &Sampling::Full).expect("full sampling always matches")
}

/// `sum conj(a) * b` over all entries.
pub fn inner_product(a: &Array3<C64>, b: &Array3<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Top/left offsets placing `inner` centrally on `outer` (floor on odd margins).
pub fn pad_offsets(inner: (usize, usize), outer: (usize, usize)) -> (usize, usize) {
    ((outer.0 - inner.0) / 2, (outer.1 - inner.1) / 2)
}

/// Symmetric image-domain zero padding onto a `target` canvas.
pub fn zero_pad(slice: &CineSlice, target: (usize, usize)) -> Result<CineSlice> {
    let (t, h, w) = slice.dims();
    if h > target.0 || w > target.1 {
        return Err(ReconError::validation(format!(
            "cannot pad {h}x{w} onto smaller canvas {}x{}",
            target.0, target.1
        )));
    }
    let original = slice.original_size();
    if (h, w) == target {
        return Ok(slice.clone());
    }
    let (top, left) = pad_offsets((h, w), target);
    let mut data = Array3::from_elem((t, target.0, target.1), C64::new(0.0, 0.0));
    data.slice_mut(s![.., top..top + h, left..left + w])
        .assign(&slice.data);
    Ok(CineSlice {
        data,
        frame_rate_hint: slice.frame_rate_hint,
        padding: Padding::Padded { original },
    })
}

/// Exact inverse of [`zero_pad`] for the recorded `original` size.
pub fn center_crop(slice: &CineSlice, original: (usize, usize)) -> Result<CineSlice> {
    let (_, h, w) = slice.dims();
    if original.0 > h || original.1 > w || original.0 == 0 || original.1 == 0 {
        return Err(ReconError::validation(format!(
            "cannot crop {h}x{w} to {}x{}",
            original.0, original.1
        )));
    }
    let (top, left) = pad_offsets(original, (h, w));
    let data = slice
        .data
        .slice(s![.., top..top + original.0, left..left + original.1])
        .to_owned();
    Ok(CineSlice {
        data,
        frame_rate_hint: slice.frame_rate_hint,
        padding: Padding::Original,
    })
}

/// Map column weights from an acquired width onto a padded canvas width by
/// nearest frequency. Identity when the widths match.
pub fn resample_column_weights(weights: &[f64], canvas_width: usize) -> Vec<f64> {
    let w = weights.len();
    if w == canvas_width {
        return weights.to_vec();
    }
    let mut out = vec![0.0; canvas_width];
    let scale = canvas_width as f64 / w as f64;
    for (col, &wgt) in weights.iter().enumerate() {
        let freq = col as f64 - (w / 2) as f64;
        let target = (canvas_width / 2) as f64 + (freq * scale).round();
        if (0.0..canvas_width as f64).contains(&target) && wgt > 0.0 {
            out[target as usize] = wgt;
        }
    }
    out
}
