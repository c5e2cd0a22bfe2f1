//! Synthetic cine cardiac phantoms.
//!
//! A static body ellipse holds a few static organ ellipses and a heart: a
//! myocardium ellipse enclosing `n_ellipses` blood-pool chambers. Chamber
//! radii follow `s(t) = 1 - a cos(2 pi t / T)`, the myocardium follows
//! `1 - (a/2) cos(2 pi t / T)`, so frame 0 is end-systole and frame `T/2`
//! end-diastole. A smooth random phase map makes the data complex.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::kspace::{
    default_center_lines, forward_operator, make_mask, CineSlice, KSpaceData,
    STANDARD_ACCELERATIONS,
};
use crate::C64;

pub const MIN_DIM: usize = 32;

/// Width of the logistic ellipse edges in pixels.
const EDGE_PX: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_ellipses: usize,
    pub contraction_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            frames: 6,
            height: 32,
            width: 48,
            n_ellipses: 2,
            contraction_amplitude: 0.2,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(ReconError::validation(format!(
                "phantom needs at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.height < MIN_DIM || self.width < MIN_DIM {
            return Err(ReconError::validation(format!(
                "phantom dims {}x{} below {MIN_DIM}x{MIN_DIM}",
                self.height, self.width
            )));
        }
        if self.n_ellipses == 0 {
            return Err(ReconError::validation("phantom needs at least one chamber"));
        }
        if !(0.0..=0.5).contains(&self.contraction_amplitude) {
            return Err(ReconError::validation(
                "contraction_amplitude must lie in [0, 0.5]",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(ReconError::validation(
                "noise_std must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Axis-aligned-then-rotated ellipse in normalised coordinates
/// (`u` along width, `v` along height, both in `[-1, 1]`).
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cu: f64,
    cv: f64,
    ru: f64,
    rv: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    /// Soft membership in `[0, 1]`: a logistic edge `edge_px` pixels wide
    /// on a grid with `half_h x half_w` pixels per unit.
    fn coverage(&self, u: f64, v: f64, half_h: f64, half_w: f64, edge_px: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let du = u - self.cu;
        let dv = v - self.cv;
        let a = (c * du + s * dv) / self.ru;
        let b = (-s * du + c * dv) / self.rv;
        let d = (a * a + b * b).sqrt();
        if edge_px == 0.0 {
            return if d <= 1.0 { 1.0 } else { 0.0 };
        }
        let r_px = (self.ru * half_w * self.rv * half_h).sqrt();
        let z = (1.0 - d) * r_px / edge_px;
        1.0 / (1.0 + (-z).exp())
    }

    fn scaled(&self, f: f64) -> Ellipse {
        Ellipse {
            ru: self.ru * f,
            rv: self.rv * f,
            ..*self
        }
    }
}

struct Layout {
    body: Ellipse,
    organs: Vec<Ellipse>,
    myocardium: Ellipse,
    chambers: Vec<Ellipse>,
    /// Quadratic phase map coefficients: 1, u, v, uv, u^2, v^2.
    phase: [f64; 6],
    /// Smooth multiplicative shading coefficients: u, v.
    shading: [f64; 2],
}

fn layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Layout {
    let a = spec.contraction_amplitude;
    let body = Ellipse {
        cu: rng.random_range(-0.04..0.04),
        cv: rng.random_range(-0.04..0.04),
        ru: rng.random_range(0.66..0.76),
        rv: rng.random_range(0.72..0.85),
        angle: rng.random_range(-0.15..0.15),
        value: rng.random_range(0.32..0.42),
    };
    let organs = (0..3)
        .map(|k| {
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            Ellipse {
                cu: side * rng.random_range(0.4..0.5),
                cv: rng.random_range(-0.45..0.45),
                ru: rng.random_range(0.08..0.18),
                rv: rng.random_range(0.08..0.2),
                angle: rng.random_range(0.0..PI),
                value: rng.random_range(0.15..0.5),
            }
        })
        .collect();
    let myocardium = Ellipse {
        cu: rng.random_range(-0.08..0.08),
        cv: rng.random_range(-0.08..0.08),
        ru: rng.random_range(0.33..0.4),
        rv: rng.random_range(0.3..0.37),
        angle: rng.random_range(-0.3..0.3),
        value: rng.random_range(0.55..0.68),
    };
    // Chambers sit side by side along the myocardium's long axis and never
    // overlap, even at the largest scale 1 + a.
    let n = spec.n_ellipses;
    let span = 0.75 * myocardium.ru * (1.0 - a / 2.0);
    let spacing = 2.0 * span / n as f64;
    let (s, c) = myocardium.angle.sin_cos();
    let chambers = (0..n)
        .map(|k| {
            let off = (k as f64 - (n as f64 - 1.0) / 2.0) * spacing;
            let ru = 0.85 * (spacing / 2.0) / (1.0 + a);
            let rv = (ru * rng.random_range(1.1..1.5))
                .min(0.7 * myocardium.rv * (1.0 - a / 2.0) / (1.0 + a));
            Ellipse {
                cu: myocardium.cu + c * off,
                cv: myocardium.cv + s * off,
                ru,
                rv,
                angle: myocardium.angle,
                value: rng.random_range(0.86..1.0),
            }
        })
        .collect();
    let mut phase = [0.0; 6];
    phase[0] = rng.random_range(-PI..PI);
    for p in phase.iter_mut().skip(1) {
        *p = rng.random_range(-0.8..0.8);
    }
    let shading = [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)];
    Layout {
        body,
        organs,
        myocardium,
        chambers,
        phase,
        shading,
    }
}

/// Chamber scale at frame `t` of `frames`.
pub fn chamber_scale(t: usize, frames: usize, amplitude: f64) -> f64 {
    // fold onto the first half-cycle so t and T - t are bit-identical
    let k = t % frames;
    let k = k.min(frames - k);
    1.0 - amplitude * (2.0 * PI * k as f64 / frames as f64).cos()
}

/// Noise-free magnitude of one frame.
fn render_frame(lay: &Layout, spec: &PhantomSpec, t: usize, out: &mut [f64]) {
    let (h, w) = (spec.height, spec.width);
    let s = chamber_scale(t, spec.frames, spec.contraction_amplitude);
    let m = chamber_scale(t, spec.frames, spec.contraction_amplitude / 2.0);
    let myo = lay.myocardium.scaled(m);
    let chambers: Vec<Ellipse> = lay.chambers.iter().map(|e| e.scaled(s)).collect();
    for i in 0..h {
        let v = (2.0 * i as f64 + 1.0) / h as f64 - 1.0;
        for j in 0..w {
            let u = (2.0 * j as f64 + 1.0) / w as f64 - 1.0;
            let (hh, hw) = (h as f64 / 2.0, w as f64 / 2.0);
            let mut val = 0.0;
            let mut paint = |e: &Ellipse| {
                let a = e.coverage(u, v, hh, hw, EDGE_PX);
                val = val * (1.0 - a) + e.value * a;
            };
            paint(&lay.body);
            lay.organs.iter().for_each(&mut paint);
            paint(&myo);
            chambers.iter().for_each(&mut paint);
            val *= 1.0 - 0.04 + lay.shading[0] * u + lay.shading[1] * v;
            out[i * w + j] = val.clamp(0.0, 1.0);
        }
    }
}

fn phase_at(lay: &Layout, u: f64, v: f64) -> f64 {
    let p = &lay.phase;
    p[0] + p[1] * u + p[2] * v + p[3] * u * v + p[4] * u * u + p[5] * v * v
}

/// Noise-free magnitude stack `(T, H, W)` for a spec.
pub fn phantom_magnitude(spec: &PhantomSpec) -> Result<Array3<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lay = layout(spec, &mut rng);
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut mag = Array3::zeros((t, h, w));
    for (f, mut frame) in mag.outer_iter_mut().enumerate() {
        render_frame(
            &lay,
            spec,
            f,
            frame.as_slice_mut().expect("standard layout"),
        );
    }
    Ok(mag)
}

/// Complex cine phantom; deterministic per `spec.seed`.
pub fn generate_cine_phantom(spec: &PhantomSpec) -> Result<CineSlice> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lay = layout(spec, &mut rng);
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut mag = vec![0.0; h * w];
    let mut data = Array3::zeros((t, h, w));
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    for f in 0..t {
        render_frame(&lay, spec, f, &mut mag);
        for i in 0..h {
            let v = (2.0 * i as f64 + 1.0) / h as f64 - 1.0;
            for j in 0..w {
                let u = (2.0 * j as f64 + 1.0) / w as f64 - 1.0;
                data[[f, i, j]] = C64::from_polar(mag[i * w + j], phase_at(&lay, u, v));
            }
        }
    }
    if spec.noise_std > 0.0 {
        for v in data.iter_mut() {
            *v += C64::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
    }
    CineSlice::new(data)
}

/// Train / eval / test partition of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        }
    }
}

/// Partition sizes for `n` slices in the 90:20:10 proportion, eval rounded
/// up, test at least one, training takes the rest.
pub fn split_counts(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(ReconError::validation(format!(
            "need at least 3 slices for a three-way split, got {n}"
        )));
    }
    let eval = (n * 20).div_ceil(120);
    let test = ((n as f64 * 10.0 / 120.0).round() as usize).max(1);
    let train = n - eval - test;
    if train == 0 {
        return Err(ReconError::validation(format!(
            "{n} slices leave no training data"
        )));
    }
    Ok((train, eval, test))
}

/// Split assignment for slice indices `0..n`: train first, then eval, then test.
pub fn assign_splits(counts: (usize, usize, usize)) -> Vec<Split> {
    let (train, eval, test) = counts;
    std::iter::repeat_n(Split::Train, train)
        .chain(std::iter::repeat_n(Split::Eval, eval))
        .chain(std::iter::repeat_n(Split::Test, test))
        .collect()
}

/// Stateless 64-bit mix used to derive child seeds.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset generation settings beyond the phantom template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub accelerations: Vec<usize>,
    /// Fully sampled centre lines; `None` uses the width-scaled default.
    pub center_lines: Option<usize>,
    /// Explicit `(train, eval, test)` counts; `None` uses [`split_counts`].
    pub split: Option<(usize, usize, usize)>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            accelerations: STANDARD_ACCELERATIONS.to_vec(),
            center_lines: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub id: String,
    pub split: Split,
    pub spec: PhantomSpec,
    pub image: CineSlice,
    /// `(acceleration, undersampled k-space)` in configured order.
    pub undersampled: Vec<(usize, KSpaceData)>,
}

impl PhantomSample {
    pub fn kspace(&self, acceleration: usize) -> Option<&KSpaceData> {
        self.undersampled
            .iter()
            .find(|(a, _)| *a == acceleration)
            .map(|(_, k)| k)
    }
}

/// Per-slice spec drawn around the template.
pub fn slice_spec(template: &PhantomSpec, seed: u64, index: usize) -> PhantomSpec {
    let slice_seed = derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(slice_seed, 0xA11CE));
    let a = template.contraction_amplitude;
    let jitter = rng.random_range(0.8..1.2);
    PhantomSpec {
        contraction_amplitude: (a * jitter).clamp(0.0, 0.5),
        seed: slice_seed,
        ..template.clone()
    }
}

pub fn mask_seed(slice_seed: u64, acceleration: usize) -> u64 {
    derive_seed(slice_seed, 0x4D41_534B + acceleration as u64)
}

pub fn generate_dataset(
    n_slices: usize,
    template: &PhantomSpec,
    seed: u64,
) -> Result<Vec<PhantomSample>> {
    generate_dataset_with(n_slices, template, seed, &DatasetOptions::default())
}

pub fn generate_dataset_with(
    n_slices: usize,
    template: &PhantomSpec,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Vec<PhantomSample>> {
    if n_slices == 0 {
        return Err(ReconError::validation("n_slices must be at least 1"));
    }
    template.validate()?;
    if opts.accelerations.is_empty() {
        return Err(ReconError::validation("no accelerations configured"));
    }
    let counts = match opts.split {
        Some(c) if c.0 + c.1 + c.2 == n_slices => c,
        Some(c) => {
            return Err(ReconError::validation(format!(
                "split {c:?} does not add up to {n_slices} slices"
            )))
        }
        None => split_counts(n_slices)?,
    };
    let splits = assign_splits(counts);
    let center = opts
        .center_lines
        .unwrap_or_else(|| default_center_lines(template.width));
    (0..n_slices)
        .map(|i| {
            let spec = slice_spec(template, seed, i);
            let image = generate_cine_phantom(&spec)?;
            let undersampled = opts
                .accelerations
                .iter()
                .map(|&ar| {
                    let mask = make_mask(spec.width, ar, center, mask_seed(spec.seed, ar))?;
                    Ok((ar, forward_operator(&image, &mask)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PhantomSample {
                id: format!("slice_{i:04}"),
                split: splits[i],
                spec,
                image,
                undersampled,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::adjoint_operator;
    use crate::metrics::{evaluate_frames, Protocol, SsimOptions};

    #[test]
    fn static_when_amplitude_zero() {
        let spec = PhantomSpec {
            contraction_amplitude: 0.0,
            ..Default::default()
        };
        let p = generate_cine_phantom(&spec).unwrap();
        let d = p.data();
        for f in 1..spec.frames {
            assert_eq!(
                d.index_axis(ndarray::Axis(0), f),
                d.index_axis(ndarray::Axis(0), 0)
            );
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec {
            noise_std: 0.01,
            ..Default::default()
        };
        let a = generate_cine_phantom(&spec).unwrap();
        let b = generate_cine_phantom(&spec).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate_cine_phantom(&PhantomSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn magnitudes_in_unit_interval_and_complex() {
        let p = generate_cine_phantom(&PhantomSpec::default()).unwrap();
        assert!(p
            .magnitude()
            .iter()
            .all(|&m| (0.0..=1.0 + 1e-12).contains(&m)));
        assert!(p.data().iter().any(|v| v.im.abs() > 0.05));
    }

    #[test]
    fn periodic_frames() {
        let spec = PhantomSpec {
            frames: 8,
            ..Default::default()
        };
        let m = phantom_magnitude(&spec).unwrap();
        // t and T - t share the same phase of the cycle
        for t in 1..4 {
            assert_eq!(
                m.index_axis(ndarray::Axis(0), t),
                m.index_axis(ndarray::Axis(0), 8 - t)
            );
        }
    }

    #[test]
    fn chamber_area_ratio_matches_contraction() {
        let a: f64 = 0.2;
        let spec = PhantomSpec {
            frames: 8,
            height: 192,
            width: 192,
            n_ellipses: 1,
            contraction_amplitude: a,
            ..Default::default()
        };
        let m = phantom_magnitude(&spec).unwrap();
        let area = |f: usize| {
            m.index_axis(ndarray::Axis(0), f)
                .iter()
                .filter(|&&v| v > 0.77)
                .count() as f64
        };
        let expected = (1.0 - a).powi(2) / (1.0 + a).powi(2);
        let ratio = area(0) / area(4);
        assert!(
            (ratio / expected - 1.0).abs() < 0.02,
            "{ratio} vs {expected}"
        );
    }

    #[test]
    fn rejects_degenerate_specs() {
        for spec in [
            PhantomSpec {
                frames: 1,
                ..Default::default()
            },
            PhantomSpec {
                height: 16,
                ..Default::default()
            },
            PhantomSpec {
                contraction_amplitude: 0.6,
                ..Default::default()
            },
            PhantomSpec {
                n_ellipses: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_cine_phantom(&spec),
                Err(ReconError::Validation(_))
            ));
        }
    }

    #[test]
    fn split_counts_round_eval_up() {
        assert_eq!(split_counts(10).unwrap(), (7, 2, 1));
        assert_eq!(split_counts(120).unwrap(), (90, 20, 10));
        assert!(split_counts(2).is_err());
    }

    #[test]
    fn dataset_kspace_is_forward_operator() {
        let spec = PhantomSpec::default();
        let ds = generate_dataset(3, &spec, 7).unwrap();
        assert_eq!(ds.len(), 3);
        let s = &ds[0];
        let k4 = s.kspace(4).unwrap();
        let crate::kspace::Sampling::Masked(mask) = k4.sampling() else {
            panic!()
        };
        assert_eq!(forward_operator(&s.image, mask).unwrap().data(), k4.data());
    }

    #[test]
    fn zero_filled_quality_drops_with_acceleration() {
        let ds = generate_dataset(3, &PhantomSpec::default(), 11).unwrap();
        let opts = SsimOptions::default();
        let mut prev = f64::INFINITY;
        for ar in [4, 8, 10] {
            let mut mean = 0.0;
            for s in &ds {
                let zf = adjoint_operator(s.kspace(ar).unwrap());
                let rep = evaluate_frames(
                    zf.magnitude().view(),
                    s.image.magnitude().view(),
                    Protocol::FullImage,
                    &opts,
                )
                .unwrap();
                mean += rep.ssim / ds.len() as f64;
            }
            assert!(mean < prev, "{ar}: {mean} vs {prev}");
            prev = mean;
        }
    }
}
