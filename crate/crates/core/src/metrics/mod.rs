//! Image quality metrics and the challenge evaluation protocol.
//!
//! All metrics operate on magnitude images. The challenge protocol scores
//! only the first three frames and a central crop covering one sixth of the
//! image area (`H/2 x W/3`, floored, centered); the full-image protocol
//! scores every frame over the whole field of view.

mod ssim;
mod table;

pub(crate) use ssim::ssim_core;
pub use ssim::SsimOptions;
pub use table::{EvalTables, MetricTable, TableRow};

use ndarray::{s, ArrayView, ArrayView2, ArrayView3, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::kspace::CineSlice;

fn check_same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(ReconError::shape(b, a));
    }
    Ok(())
}

/// `||pred - ref||^2 / ||ref||^2`.
pub fn nmse<D: Dimension>(pred: ArrayView<f64, D>, reference: ArrayView<f64, D>) -> Result<f64> {
    check_same_shape(pred.shape(), reference.shape())?;
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(ReconError::validation("NMSE reference is all zero"));
    }
    let num: f64 = pred
        .iter()
        .zip(reference.iter())
        .map(|(p, r)| (p - r).powi(2))
        .sum();
    Ok(num / den)
}

/// `10 log10(data_range^2 / MSE)`; `data_range` defaults to `max(ref)`.
/// Identical inputs give `+inf`.
pub fn psnr<D: Dimension>(
    pred: ArrayView<f64, D>,
    reference: ArrayView<f64, D>,
    data_range: Option<f64>,
) -> Result<f64> {
    check_same_shape(pred.shape(), reference.shape())?;
    if reference.is_empty() {
        return Err(ReconError::validation("PSNR of empty arrays"));
    }
    let range =
        data_range.unwrap_or_else(|| reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let mse = pred
        .iter()
        .zip(reference.iter())
        .map(|(p, r)| (p - r).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(10.0 * (range * range / mse).log10())
}

/// Mean Gaussian-window SSIM of two images; `data_range` defaults to `max(ref)`.
pub fn ssim(
    pred: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    data_range: Option<f64>,
    opts: &SsimOptions,
) -> Result<f64> {
    check_same_shape(pred.shape(), reference.shape())?;
    let (h, w) = pred.dim();
    opts.validate(h, w)?;
    let range =
        data_range.unwrap_or_else(|| reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let x: Vec<f64> = pred.iter().copied().collect();
    let y: Vec<f64> = reference.iter().copied().collect();
    Ok(ssim_core(&x, &y, h, w, range, opts, false).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullImage,
    ChallengeCrop,
}

/// Frame-averaged metrics of one volume under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub nmse: f64,
    #[serde(with = "crate::serde_float")]
    pub psnr: f64,
    pub protocol: Protocol,
    pub n_frames_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeEvaluation {
    pub full_image: MetricReport,
    pub challenge_crop: MetricReport,
}

/// Frame count and crop divisors of the challenge protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRule {
    pub frames: usize,
    pub height_divisor: usize,
    pub width_divisor: usize,
}

impl Default for CropRule {
    fn default() -> Self {
        CropRule {
            frames: 3,
            height_divisor: 2,
            width_divisor: 3,
        }
    }
}

impl CropRule {
    /// `(top, left, height, width)` of the crop window on an `h x w` image.
    pub fn window(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let ch = h / self.height_divisor;
        let cw = w / self.width_divisor;
        ((h - ch) / 2, (w - cw) / 2, ch, cw)
    }
}

/// Score every frame of `pred` against `reference` and average; the data
/// range is the maximum of the whole reference region.
pub fn evaluate_frames(
    pred: ArrayView3<f64>,
    reference: ArrayView3<f64>,
    protocol: Protocol,
    opts: &SsimOptions,
) -> Result<MetricReport> {
    check_same_shape(pred.shape(), reference.shape())?;
    let t = pred.dim().0;
    if t == 0 {
        return Err(ReconError::validation("no frames to evaluate"));
    }
    let range = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut s, mut n, mut p) = (0.0, 0.0, 0.0);
    for f in 0..t {
        let (pf, rf) = (
            pred.index_axis(ndarray::Axis(0), f),
            reference.index_axis(ndarray::Axis(0), f),
        );
        s += ssim(pf, rf, Some(range), opts)?;
        n += nmse(pf, rf)?;
        p += psnr(pf, rf, Some(range))?;
    }
    let tf = t as f64;
    Ok(MetricReport {
        ssim: s / tf,
        nmse: n / tf,
        psnr: p / tf,
        protocol,
        n_frames_evaluated: t,
    })
}

/// Full-image and challenge-crop reports for one volume.
pub fn challenge_eval(pred: &CineSlice, reference: &CineSlice) -> Result<ChallengeEvaluation> {
    challenge_eval_with(
        pred,
        reference,
        &CropRule::default(),
        &SsimOptions::default(),
    )
}

pub fn challenge_eval_with(
    pred: &CineSlice,
    reference: &CineSlice,
    rule: &CropRule,
    opts: &SsimOptions,
) -> Result<ChallengeEvaluation> {
    check_same_shape(pred.data().shape(), reference.data().shape())?;
    let (t, h, w) = reference.dims();
    if t < rule.frames {
        return Err(ReconError::validation(format!(
            "challenge protocol needs at least {} frames, got {t}",
            rule.frames
        )));
    }
    let pm = pred.magnitude();
    let rm = reference.magnitude();
    let full_image = evaluate_frames(pm.view(), rm.view(), Protocol::FullImage, opts)?;
    let (top, left, ch, cw) = rule.window(h, w);
    let crop = s![0..rule.frames, top..top + ch, left..left + cw];
    let challenge_crop = evaluate_frames(
        pm.slice(crop),
        rm.slice(crop),
        Protocol::ChallengeCrop,
        opts,
    )?;
    Ok(ChallengeEvaluation {
        full_image,
        challenge_crop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random2(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn nmse_examples() {
        let r = random2(6, 6, 0);
        assert_eq!(nmse(r.view(), r.view()).unwrap(), 0.0);
        assert!((nmse((&r * 2.0).view(), r.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmse(Array2::zeros((6, 6)).view(), r.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmse(r.view(), Array2::zeros((6, 6)).view()).is_err());
    }

    #[test]
    fn psnr_examples() {
        let r = Array2::from_elem((10, 10), 1.0);
        let p = Array2::from_elem((10, 10), 0.0);
        assert!(psnr(p.view(), r.view(), Some(1.0)).unwrap().abs() < 1e-12);
        let q = Array2::from_elem((10, 10), 1.0 - 1e-2);
        assert!((psnr(q.view(), r.view(), Some(1.0)).unwrap() - 40.0).abs() < 1e-9);
        let a = psnr(q.view(), r.view(), Some(1.0)).unwrap();
        let b = psnr(q.view(), r.view(), Some(2.0)).unwrap();
        assert!((b - a - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((20.0 * 2f64.log10() - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(r.view(), r.view(), None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_window_check() {
        let r = random2(12, 12, 1);
        let opts = SsimOptions::default();
        assert!((ssim(r.view(), r.view(), None, &opts).unwrap() - 1.0).abs() < 1e-12);
        let small = random2(5, 12, 2);
        assert!(ssim(small.view(), small.view(), None, &opts).is_err());
    }

    #[test]
    fn ssim_offset_lowers_luminance_only() {
        let r = random2(16, 16, 3);
        let p = &r + 0.2;
        let v = ssim(p.view(), r.view(), Some(1.0), &SsimOptions::default()).unwrap();
        assert!(v < 1.0 && v > 0.5, "{v}");
    }

    #[test]
    fn independent_noise_scores_near_zero() {
        let a = random2(64, 64, 4);
        let b = random2(64, 64, 5);
        let v = ssim(a.view(), b.view(), Some(1.0), &SsimOptions::default()).unwrap();
        assert!(v.abs() < 0.1, "{v}");
    }

    #[test]
    fn crop_dims_on_challenge_canvas() {
        assert_eq!(CropRule::default().window(256, 512), (64, 171, 128, 170));
    }

    fn slice_from(mag: &Array3<f64>) -> CineSlice {
        CineSlice::new(mag.mapv(|v| C64::new(v, 0.0))).unwrap()
    }

    #[test]
    fn challenge_eval_identity_and_outside_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = Array3::from_shape_fn((4, 32, 48), |_| rng.random::<f64>() + 0.1);
        let ev = challenge_eval(&slice_from(&r), &slice_from(&r)).unwrap();
        for rep in [&ev.full_image, &ev.challenge_crop] {
            assert!((rep.ssim - 1.0).abs() < 1e-12);
            assert_eq!(rep.nmse, 0.0);
        }
        assert_eq!(ev.challenge_crop.n_frames_evaluated, 3);
        assert_eq!(ev.full_image.n_frames_evaluated, 4);

        let (top, left, ch, cw) = CropRule::default().window(32, 48);
        let mut p = r.clone();
        for ((f, i, j), v) in p.indexed_iter_mut() {
            let inside = f < 3 && (top..top + ch).contains(&i) && (left..left + cw).contains(&j);
            if !inside {
                *v += 0.5;
            }
        }
        let ev = challenge_eval(&slice_from(&p), &slice_from(&r)).unwrap();
        assert!((ev.challenge_crop.ssim - 1.0).abs() < 1e-12);
        assert_eq!(ev.challenge_crop.nmse, 0.0);
        assert!(ev.full_image.ssim < 0.99);
        assert!(ev.full_image.nmse > 0.0);
    }

    #[test]
    fn challenge_eval_needs_three_frames() {
        let r = Array3::from_elem((2, 16, 16), 1.0);
        assert!(challenge_eval(&slice_from(&r), &slice_from(&r)).is_err());
    }

    #[test]
    fn report_roundtrips_infinite_psnr() {
        let rep = MetricReport {
            ssim: 1.0,
            nmse: 0.0,
            psnr: f64::INFINITY,
            protocol: Protocol::ChallengeCrop,
            n_frames_evaluated: 3,
        };
        let text = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&text).unwrap(), rep);
    }
}
