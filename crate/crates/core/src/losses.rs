//! Training objectives on complex `(T, H, W)` image stacks.
//!
//! Every loss comes with an analytic gradient in the complex convention
//! `g = dL/dRe(pred) + i dL/dIm(pred)`, which is what the network tape
//! consumes as its output seed.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, ArrayView3, Zip};
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::kspace::transform_frames;
use crate::metrics::{ssim_core, SsimOptions};
use crate::C64;

const PERP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    L2,
    Ssim,
    Perp,
    L1Split,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Ssim => "ssim",
            LossKind::Perp => "perp",
            LossKind::L1Split => "l1_split",
        };
        f.write_str(s)
    }
}

impl FromStr for LossKind {
    type Err = ReconError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "ssim" => Ok(LossKind::Ssim),
            "perp" => Ok(LossKind::Perp),
            "l1_split" => Ok(LossKind::L1Split),
            other => Err(ReconError::Config(format!("unknown loss kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub kind: LossKind,
    pub weight: f64,
}

/// Weighted loss terms plus the high-pass split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub terms: Vec<LossTerm>,
    /// Butterworth cutoff as a fraction of Nyquist, in `(0, 1)`.
    #[serde(default = "default_cutoff")]
    pub highpass_cutoff: f64,
    /// High-band to low-band emphasis `r` (`2.0` means 2:1).
    #[serde(default = "default_ratio")]
    pub highpass_weight_ratio: f64,
    #[serde(default = "default_window")]
    pub ssim_window: usize,
}

fn default_cutoff() -> f64 {
    0.25
}

fn default_ratio() -> f64 {
    2.0
}

fn default_window() -> usize {
    7
}

/// Loss presets by name. Weights are all 1.
pub const PRESETS: [(&str, &[LossKind]); 6] = [
    ("perp", &[LossKind::Perp]),
    ("l1", &[LossKind::L1]),
    ("perp_l1", &[LossKind::Perp, LossKind::L1]),
    ("perp_l1_split", &[LossKind::Perp, LossKind::L1Split]),
    (
        "perp_ssim_l1_split",
        &[LossKind::Perp, LossKind::Ssim, LossKind::L1Split],
    ),
    ("l1_ssim", &[LossKind::L1, LossKind::Ssim]),
];

impl LossConfig {
    pub fn new(terms: Vec<LossTerm>) -> Result<Self> {
        let cfg = LossConfig {
            terms,
            highpass_cutoff: default_cutoff(),
            highpass_weight_ratio: default_ratio(),
            ssim_window: default_window(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn single(kind: LossKind) -> Self {
        LossConfig::new(vec![LossTerm { kind, weight: 1.0 }]).expect("single positive term")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, kinds) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ReconError::Config(format!("unknown loss preset '{name}'")))?;
        LossConfig::new(
            kinds
                .iter()
                .map(|&kind| LossTerm { kind, weight: 1.0 })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(ReconError::Config("loss needs at least one term".into()));
        }
        if self
            .terms
            .iter()
            .any(|t| !(t.weight.is_finite() && t.weight >= 0.0))
        {
            return Err(ReconError::Config(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if self.terms.iter().map(|t| t.weight).sum::<f64>() <= 0.0 {
            return Err(ReconError::Config(
                "loss weights must sum to a positive value".into(),
            ));
        }
        if !(self.highpass_cutoff > 0.0 && self.highpass_cutoff < 1.0) {
            return Err(ReconError::validation("highpass_cutoff must lie in (0, 1)"));
        }
        if !(self.highpass_weight_ratio.is_finite() && self.highpass_weight_ratio > 0.0) {
            return Err(ReconError::validation(
                "highpass_weight_ratio must be positive",
            ));
        }
        Ok(())
    }

    /// `(w_high, w_low)` normalised to a mean weight of one, so a 1:1 ratio
    /// gives `(1, 1)`.
    pub fn band_weights(&self) -> (f64, f64) {
        let r = self.highpass_weight_ratio;
        (2.0 * r / (1.0 + r), 2.0 / (1.0 + r))
    }
}

fn check_shapes<T, U>(a: ArrayView3<T>, b: ArrayView3<U>) -> Result<()> {
    if a.dim() != b.dim() {
        let (x, y, z) = b.dim();
        let (p, q, r) = a.dim();
        return Err(ReconError::shape(&[x, y, z], &[p, q, r]));
    }
    Ok(())
}

fn l1_of(diff: &Array3<C64>, want_grad: bool) -> (f64, Option<Array3<C64>>) {
    let n = diff.len() as f64;
    let value = diff.iter().map(|d| d.norm()).sum::<f64>() / n;
    let grad = want_grad.then(|| {
        diff.mapv(|d| {
            let m = d.norm();
            if m > 0.0 {
                d / (m * n)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    });
    (value, grad)
}

/// Mean modulus of the complex difference.
pub fn l1_loss(pred: &Array3<C64>, target: &Array3<C64>) -> Result<f64> {
    Ok(l1_loss_with_grad(pred, target)?.0)
}

pub fn l1_loss_with_grad(pred: &Array3<C64>, target: &Array3<C64>) -> Result<(f64, Array3<C64>)> {
    check_shapes(pred.view(), target.view())?;
    let (v, g) = l1_of(&(pred - target), true);
    Ok((v, g.expect("requested")))
}

/// Mean squared modulus of the complex difference.
pub fn l2_loss(pred: &Array3<C64>, target: &Array3<C64>) -> Result<f64> {
    Ok(l2_loss_with_grad(pred, target)?.0)
}

pub fn l2_loss_with_grad(pred: &Array3<C64>, target: &Array3<C64>) -> Result<(f64, Array3<C64>)> {
    check_shapes(pred.view(), target.view())?;
    let diff = pred - target;
    let n = diff.len() as f64;
    let value = diff.iter().map(|d| d.norm_sqr()).sum::<f64>() / n;
    Ok((value, diff.mapv(|d| d * (2.0 / n))))
}

/// `1 - mean SSIM` between magnitude stacks, averaged over frames, with the
/// data range fixed to the target maximum.
pub fn ssim_loss(pred: ArrayView3<f64>, target: ArrayView3<f64>, window: usize) -> Result<f64> {
    Ok(ssim_loss_magnitude(pred, target, window, false)?.0)
}

/// [`ssim_loss`] and its gradient with respect to `pred`.
pub fn ssim_loss_with_grad(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    window: usize,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = ssim_loss_magnitude(pred, target, window, true)?;
    Ok((v, g.expect("requested")))
}

fn ssim_loss_magnitude(
    pred: ArrayView3<f64>,
    target: ArrayView3<f64>,
    window: usize,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_shapes(pred, target)?;
    let (t, h, w) = pred.dim();
    let opts = SsimOptions::with_window(window);
    opts.validate(h, w)?;
    let range = target.iter().cloned().fold(0.0, f64::max);
    if range <= 0.0 {
        return Err(ReconError::validation(
            "SSIM loss target has zero dynamic range",
        ));
    }
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros((t, h, w)));
    for f in 0..t {
        let x: Vec<f64> = pred
            .index_axis(ndarray::Axis(0), f)
            .iter()
            .copied()
            .collect();
        let y: Vec<f64> = target
            .index_axis(ndarray::Axis(0), f)
            .iter()
            .copied()
            .collect();
        let (s, g) = ssim_core(&x, &y, h, w, range, &opts, want_grad);
        total += s;
        if let (Some(grad), Some(g)) = (grad.as_mut(), g) {
            for (dst, v) in grad.index_axis_mut(ndarray::Axis(0), f).iter_mut().zip(g) {
                *dst = -v / t as f64;
            }
        }
    }
    Ok((1.0 - total / t as f64, grad))
}

/// SSIM loss on complex stacks through the magnitude.
pub fn ssim_loss_complex_with_grad(
    pred: &Array3<C64>,
    target: &Array3<C64>,
    window: usize,
) -> Result<(f64, Array3<C64>)> {
    check_shapes(pred.view(), target.view())?;
    let pm = pred.mapv(|v| v.norm());
    let tm = target.mapv(|v| v.norm());
    let (value, gm) = ssim_loss_with_grad(pm.view(), tm.view(), window)?;
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad)
        .and(pred)
        .and(&gm)
        .and(&pm)
        .for_each(|g, &p, &d, &m| {
            if m > 0.0 {
                *g = p * (d / m);
            }
        });
    Ok((value, grad))
}

/// Perpendicular loss: mean of `|Im(conj(t) p)| / max(|t|, eps) + ||p| - |t||`,
/// the distance of `p` to the ray through `t` plus a magnitude term.
pub fn perp_loss(pred: &Array3<C64>, target: &Array3<C64>) -> Result<f64> {
    Ok(perp_loss_with_grad(pred, target)?.0)
}

pub fn perp_loss_with_grad(pred: &Array3<C64>, target: &Array3<C64>) -> Result<(f64, Array3<C64>)> {
    check_shapes(pred.view(), target.view())?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let tn = t.norm().max(PERP_EPS);
            let cross = p.re * t.im - p.im * t.re;
            let pm = p.norm();
            let dm = pm - t.norm();
            value += cross.abs() / tn + dm.abs();
            let sc = cross.signum() * (cross != 0.0) as u8 as f64 / tn;
            let mut gv = C64::new(sc * t.im, -sc * t.re);
            if dm != 0.0 && pm > 0.0 {
                gv += p * (dm.signum() / pm);
            }
            *g = gv / n;
        });
    Ok((value / n, grad))
}

/// Radial Butterworth (order 2) high-pass response on a centered `h x w`
/// grid; frequency is measured as a fraction of Nyquist.
pub fn highpass_filter(h: usize, w: usize, cutoff: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let fy = (i as f64 - (h / 2) as f64) / (h as f64 / 2.0);
        for j in 0..w {
            let fx = (j as f64 - (w / 2) as f64) / (w as f64 / 2.0);
            let f = (fx * fx + fy * fy).sqrt();
            out[i * w + j] = if f == 0.0 {
                0.0
            } else {
                1.0 / (1.0 + (cutoff / f).powi(4))
            };
        }
    }
    out
}

/// Apply a real frequency response to every frame: `F^-1 (r . F x)`.
fn filter_frames(x: &Array3<C64>, response: &[f64]) -> Array3<C64> {
    let (_, h, w) = x.dim();
    let mut k = transform_frames(x.view(), FftDirection::Forward);
    for mut frame in k.outer_iter_mut() {
        for (v, r) in frame.iter_mut().zip(response) {
            *v *= *r;
        }
    }
    let out = transform_frames(k.view(), FftDirection::Inverse);
    debug_assert_eq!(out.dim().1, h);
    debug_assert_eq!(out.dim().2, w);
    out
}

fn split_response(h: usize, w: usize, cfg: &LossConfig) -> Vec<f64> {
    let (w_hi, w_lo) = cfg.band_weights();
    highpass_filter(h, w, cfg.highpass_cutoff)
        .into_iter()
        .map(|hp| w_lo * (1.0 - hp) + w_hi * hp)
        .collect()
}

/// Frequency-weighted L1: the error is re-weighted in k-space by
/// `w_lo (1 - H) + w_hi H` before taking the mean modulus. The low and high
/// pass filters sum to identity, so a 1:1 ratio is exactly plain L1.
pub fn l1_split_loss(pred: &Array3<C64>, target: &Array3<C64>, cfg: &LossConfig) -> Result<f64> {
    Ok(l1_split_loss_with_grad(pred, target, cfg)?.0)
}

pub fn l1_split_loss_with_grad(
    pred: &Array3<C64>,
    target: &Array3<C64>,
    cfg: &LossConfig,
) -> Result<(f64, Array3<C64>)> {
    check_shapes(pred.view(), target.view())?;
    cfg.validate()?;
    let (_, h, w) = pred.dim();
    let diff = pred - target;
    if cfg.highpass_weight_ratio == 1.0 {
        let (v, g) = l1_of(&diff, true);
        return Ok((v, g.expect("requested")));
    }
    let response = split_response(h, w, cfg);
    let weighted = filter_frames(&diff, &response);
    let (value, g) = l1_of(&weighted, true);
    // the k-space weighting is self-adjoint
    Ok((value, filter_frames(&g.expect("requested"), &response)))
}

/// Unweighted L1 of the low and high band of the error, for logging.
pub fn l1_split_bands(
    pred: &Array3<C64>,
    target: &Array3<C64>,
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    check_shapes(pred.view(), target.view())?;
    cfg.validate()?;
    let (_, h, w) = pred.dim();
    let diff = pred - target;
    let hp = highpass_filter(h, w, cfg.highpass_cutoff);
    let lp: Vec<f64> = hp.iter().map(|v| 1.0 - v).collect();
    let low = l1_of(&filter_frames(&diff, &lp), false).0;
    let high = l1_of(&filter_frames(&diff, &hp), false).0;
    Ok((low, high))
}

/// Total loss, per-term (unweighted) values, and the gradient of the total.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub breakdown: Vec<(LossKind, f64)>,
    pub grad: Array3<C64>,
}

pub fn term_with_grad(
    kind: LossKind,
    pred: &Array3<C64>,
    target: &Array3<C64>,
    cfg: &LossConfig,
) -> Result<(f64, Array3<C64>)> {
    match kind {
        LossKind::L1 => l1_loss_with_grad(pred, target),
        LossKind::L2 => l2_loss_with_grad(pred, target),
        LossKind::Ssim => ssim_loss_complex_with_grad(pred, target, cfg.ssim_window),
        LossKind::Perp => perp_loss_with_grad(pred, target),
        LossKind::L1Split => l1_split_loss_with_grad(pred, target, cfg),
    }
}

/// Weighted sum of the configured terms.
pub fn combined_loss(
    pred: &Array3<C64>,
    target: &Array3<C64>,
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    check_shapes(pred.view(), target.view())?;
    let mut total = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    let mut breakdown = Vec::with_capacity(cfg.terms.len());
    for term in &cfg.terms {
        let (v, g) = term_with_grad(term.kind, pred, target, cfg)?;
        total += term.weight * v;
        if term.weight != 0.0 {
            grad.scaled_add(C64::new(term.weight, 0.0), &g);
        }
        breakdown.push((term.kind, v));
    }
    Ok(LossValue {
        total,
        breakdown,
        grad,
    })
}

/// Loss on each network output: `crnn` scores the cascade output ahead of
/// a refinement module, `output` the final reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRouting {
    pub crnn: Option<LossConfig>,
    pub output: LossConfig,
}

/// Training presets for models with a refinement module.
pub const ROUTING_PRESETS: [&str; 3] = ["sequential", "end_to_end", "output"];

impl LossRouting {
    pub fn single(output: LossConfig) -> Self {
        LossRouting { crnn: None, output }
    }

    /// `sequential`: l1 + SSIM on the refined output only (the frozen CRNN
    /// was trained with its own preset). `end_to_end`: l1 + SSIM on both
    /// outputs. `output`: `base` on the final output. Split and SSIM
    /// settings are taken from `base`.
    pub fn preset(name: &str, base: &LossConfig) -> Result<Self> {
        let l1_ssim = || LossConfig {
            terms: LossConfig::preset("l1_ssim").expect("builtin preset").terms,
            ..base.clone()
        };
        match name {
            "sequential" => Ok(LossRouting::single(l1_ssim())),
            "end_to_end" => Ok(LossRouting {
                crnn: Some(l1_ssim()),
                output: l1_ssim(),
            }),
            "output" => Ok(LossRouting::single(base.clone())),
            other => Err(ReconError::Config(format!(
                "unknown loss routing '{other}', expected one of {ROUTING_PRESETS:?}"
            ))),
        }
    }

    /// Losses of the final output and, when routed, the CRNN output.
    pub fn evaluate(
        &self,
        output: &Array3<C64>,
        crnn: Option<&Array3<C64>>,
        target: &Array3<C64>,
    ) -> Result<(LossValue, Option<LossValue>)> {
        let out = combined_loss(output, target, &self.output)?;
        let inner = match (&self.crnn, crnn) {
            (Some(cfg), Some(x)) => Some(combined_loss(x, target, cfg)?),
            _ => None,
        };
        Ok((out, inner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, h: usize, w: usize, seed: u64) -> Array3<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((t, h, w), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn l1_examples() {
        let t = random(2, 4, 4, 0);
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let shifted = t.mapv(|v| v + C64::new(1.0, 0.0));
        assert!((l1_loss(&shifted, &t).unwrap() - 1.0).abs() < 1e-12);
        let p = random(2, 4, 4, 1);
        let c = C64::new(0.3, -2.0);
        let scaled = l1_loss(&p.mapv(|v| v * c), &t.mapv(|v| v * c)).unwrap();
        assert!((scaled - c.norm() * l1_loss(&p, &t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perp_rotation_and_real_cases() {
        let m = 1.7;
        let t = Array3::from_elem((1, 2, 2), C64::from_polar(m, 0.4));
        let p = Array3::from_elem(
            (1, 2, 2),
            C64::from_polar(m, 0.4 + std::f64::consts::FRAC_PI_2),
        );
        assert!((perp_loss(&p, &t).unwrap() - m).abs() < 1e-12);
        let phi = 0.3;
        let p = Array3::from_elem((1, 2, 2), C64::from_polar(m, 0.4 + phi));
        assert!((perp_loss(&p, &t).unwrap() - m * phi.sin()).abs() < 1e-12);

        // real, aligned signs: pure magnitude difference
        let t = Array3::from_elem((1, 1, 2), C64::new(2.0, 0.0));
        let p = Array3::from_elem((1, 1, 2), C64::new(3.5, 0.0));
        assert!((perp_loss(&p, &t).unwrap() - 1.5).abs() < 1e-12);
        // real, opposite signs: still only the magnitude term (cross = 0)
        let p = Array3::from_elem((1, 1, 2), C64::new(-3.5, 0.0));
        assert!((perp_loss(&p, &t).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn perp_zero_target_guard() {
        let t = Array3::from_elem((1, 1, 1), C64::new(0.0, 0.0));
        let p = Array3::from_elem((1, 1, 1), C64::new(0.0, 2.0));
        let v = perp_loss(&p, &t).unwrap();
        assert!(v.is_finite());
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn highpass_has_zero_dc_and_unit_limit() {
        let hp = highpass_filter(8, 8, 0.25);
        assert_eq!(hp[4 * 8 + 4], 0.0);
        assert!(hp[0] > 0.99);
    }

    #[test]
    fn l1_split_ratio_one_is_plain_l1() {
        let p = random(2, 8, 8, 2);
        let t = random(2, 8, 8, 3);
        let mut cfg = LossConfig::single(LossKind::L1Split);
        cfg.highpass_weight_ratio = 1.0;
        assert!((l1_split_loss(&p, &t, &cfg).unwrap() - l1_loss(&p, &t).unwrap()).abs() < 1e-12);
        assert_eq!(cfg.band_weights(), (1.0, 1.0));
    }

    #[test]
    fn l1_split_low_frequency_error_has_no_high_band() {
        let t = random(2, 8, 8, 4);
        let p = t.mapv(|v| v + C64::new(0.25, -0.1));
        let cfg = LossConfig::single(LossKind::L1Split);
        let (low, high) = l1_split_bands(&p, &t, &cfg).unwrap();
        assert!(high < 1e-12, "{high}");
        assert!(low > 0.1);
        assert_eq!(l1_split_loss(&t, &t, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn presets_and_unknowns() {
        let cfg = LossConfig::preset("perp_l1_split").unwrap();
        let kinds: Vec<_> = cfg.terms.iter().map(|t| (t.kind, t.weight)).collect();
        assert_eq!(kinds, vec![(LossKind::Perp, 1.0), (LossKind::L1Split, 1.0)]);
        assert!(LossConfig::preset("adversarial").is_err());
        assert!("huber".parse::<LossKind>().is_err());
        assert!(LossConfig::new(vec![]).is_err());
        assert!(LossConfig::new(vec![LossTerm {
            kind: LossKind::L1,
            weight: 0.0
        }])
        .is_err());
        let mut bad = LossConfig::single(LossKind::L1Split);
        bad.highpass_cutoff = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn combined_matches_single_terms() {
        let p = random(3, 8, 8, 5).mapv(|v| v + C64::new(1.5, 0.0));
        let t = random(3, 8, 8, 6).mapv(|v| v + C64::new(1.5, 0.0));
        let cfg = LossConfig::single(LossKind::L1);
        let c = combined_loss(&p, &t, &cfg).unwrap();
        assert_eq!(c.total, l1_loss(&p, &t).unwrap());
        let both = LossConfig::preset("perp_l1").unwrap();
        let c = combined_loss(&t, &t, &both).unwrap();
        assert_eq!(c.total, 0.0);
        assert_eq!(c.breakdown.len(), 2);
    }

    #[test]
    fn routing_presets() {
        let base = LossConfig::preset("perp_l1_split").unwrap();
        let seq = LossRouting::preset("sequential", &base).unwrap();
        assert!(seq.crnn.is_none());
        let kinds: Vec<_> = seq.output.terms.iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![LossKind::L1, LossKind::Ssim]);
        let e2e = LossRouting::preset("end_to_end", &base).unwrap();
        assert_eq!(e2e.crnn.as_ref(), Some(&e2e.output));
        assert_eq!(
            LossRouting::preset("output", &base).unwrap(),
            LossRouting::single(base.clone())
        );
        assert!(LossRouting::preset("perp", &base).is_err());

        let t = random(3, 8, 8, 7).mapv(|v| v + C64::new(1.5, 0.0));
        let p = random(3, 8, 8, 8).mapv(|v| v + C64::new(1.5, 0.0));
        let (out, inner) = e2e.evaluate(&p, Some(&t), &t).unwrap();
        assert!(out.total > 0.0);
        assert_eq!(inner.unwrap().total, 0.0);
        assert!(seq.evaluate(&p, Some(&p), &t).unwrap().1.is_none());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = random(1, 4, 4, 0);
        let b = random(1, 4, 5, 0);
        assert!(matches!(l1_loss(&a, &b), Err(ReconError::Shape { .. })));
        assert!(perp_loss(&a, &b).is_err());
        assert!(ssim_loss(a.mapv(|v| v.norm()).view(), b.mapv(|v| v.norm()).view(), 3).is_err());
    }
}
