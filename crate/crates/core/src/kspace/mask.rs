use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ReconError, Result};

/// Acceleration rates of the challenge protocol.
pub const STANDARD_ACCELERATIONS: [usize; 3] = [4, 8, 10];

/// Parameter record stored next to every persisted mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskParams {
    pub width: usize,
    pub acceleration: usize,
    pub center_lines: usize,
    pub seed: u64,
    #[serde(default)]
    pub nonstandard: bool,
}

/// Cartesian phase-encode line mask over the `W` columns of a frame.
///
/// Lines are equispaced with stride `acceleration` starting at a seeded
/// random offset, united with a contiguous block of `center_lines` columns
/// around `W / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskParams", into = "MaskParams")]
pub struct SamplingMask {
    lines: Array1<bool>,
    params: MaskParams,
}

/// Center block width for a given phase-encode width: 24 lines at 512,
/// scaled proportionally and never below one line.
pub fn default_center_lines(width: usize) -> usize {
    ((24.0 * width as f64 / 512.0).round() as usize).max(1)
}

fn center_block(width: usize, center_lines: usize) -> std::ops::Range<usize> {
    let start = (width / 2).saturating_sub(center_lines / 2);
    start..(start + center_lines).min(width)
}

/// Build a mask for one of the standard acceleration rates (4, 8, 10).
pub fn make_mask(
    width: usize,
    acceleration: usize,
    center_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    SamplingMask::from_params(MaskParams {
        width,
        acceleration,
        center_lines,
        seed,
        nonstandard: false,
    })
}

impl SamplingMask {
    pub fn from_params(params: MaskParams) -> Result<Self> {
        let MaskParams {
            width,
            acceleration,
            center_lines,
            seed,
            nonstandard,
        } = params;
        if acceleration == 0 {
            return Err(ReconError::validation("acceleration must be positive"));
        }
        if !nonstandard && !STANDARD_ACCELERATIONS.contains(&acceleration) {
            return Err(ReconError::validation(format!(
                "acceleration {acceleration} not in {{4, 8, 10}}; set the nonstandard flag to allow it"
            )));
        }
        if width < acceleration {
            return Err(ReconError::validation(format!(
                "width {width} smaller than acceleration {acceleration}"
            )));
        }
        // center_lines < width / acceleration * 2
        if center_lines * acceleration >= 2 * width {
            return Err(ReconError::validation(format!(
                "center_lines {center_lines} too wide for width {width} at {acceleration}x"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = rng.random_range(0..acceleration);
        let mut lines = Array1::from_elem(width, false);
        for col in (offset..width).step_by(acceleration) {
            lines[col] = true;
        }
        for col in center_block(width, center_lines) {
            lines[col] = true;
        }
        Ok(SamplingMask { lines, params })
    }

    /// Rebuild a mask from persisted lines, checking them against the record.
    pub fn from_lines(lines: Array1<bool>, params: MaskParams) -> Result<Self> {
        let expected = Self::from_params(params)?;
        if expected.lines != lines {
            return Err(ReconError::validation(
                "stored mask lines disagree with their parameter record",
            ));
        }
        Ok(expected)
    }

    pub fn lines(&self) -> &Array1<bool> {
        &self.lines
    }

    pub fn params(&self) -> MaskParams {
        self.params
    }

    pub fn width(&self) -> usize {
        self.lines.len()
    }

    pub fn acceleration(&self) -> usize {
        self.params.acceleration
    }

    pub fn center_lines(&self) -> usize {
        self.params.center_lines
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn sampled_count(&self) -> usize {
        self.lines.iter().filter(|&&s| s).count()
    }

    /// `W / count(lines)`, the acceleration actually achieved once the
    /// center block is included.
    pub fn effective_acceleration(&self) -> f64 {
        self.width() as f64 / self.sampled_count() as f64
    }

    /// Column weights (1.0 sampled, 0.0 otherwise).
    pub fn weights(&self) -> Vec<f64> {
        self.lines
            .iter()
            .map(|&s| if s { 1.0 } else { 0.0 })
            .collect()
    }
}

impl TryFrom<MaskParams> for SamplingMask {
    type Error = ReconError;

    fn try_from(params: MaskParams) -> Result<Self> {
        SamplingMask::from_params(params)
    }
}

impl From<SamplingMask> for MaskParams {
    fn from(mask: SamplingMask) -> Self {
        mask.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width16_accel4_no_center_has_four_lines_stride_four() {
        let m = make_mask(16, 4, 0, 0).unwrap();
        let cols: Vec<usize> = m
            .lines()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(cols.len(), 4);
        assert!(cols.windows(2).all(|p| p[1] - p[0] == 4));
    }

    #[test]
    fn width256_accel8_center24_counts() {
        let m = make_mask(256, 8, 24, 0).unwrap();
        // enumerate the equispaced lines independently of the center block
        let offset = (0..256)
            .find(|&c| m.lines()[c] && !(116..140).contains(&c))
            .unwrap()
            % 8;
        let equispaced: Vec<usize> = (offset..256).step_by(8).collect();
        assert_eq!(equispaced.len(), 32);
        let overlap = equispaced
            .iter()
            .filter(|c| (116..140).contains(*c))
            .count();
        assert_eq!(m.sampled_count(), 32 + 24 - overlap);
        assert!((m.effective_acceleration() - 256.0 / m.sampled_count() as f64).abs() < 1e-15);
        for c in 116..140 {
            assert!(m.lines()[c]);
        }
    }

    #[test]
    fn deterministic_for_fixed_arguments() {
        assert_eq!(
            make_mask(96, 10, 4, 7).unwrap(),
            make_mask(96, 10, 4, 7).unwrap()
        );
    }

    #[test]
    fn rejects_nonstandard_acceleration_unless_flagged() {
        assert!(matches!(
            make_mask(64, 6, 2, 0),
            Err(ReconError::Validation(_))
        ));
        let m = SamplingMask::from_params(MaskParams {
            width: 64,
            acceleration: 6,
            center_lines: 2,
            seed: 0,
            nonstandard: true,
        })
        .unwrap();
        assert_eq!(m.acceleration(), 6);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(make_mask(8, 10, 0, 0).is_err());
        // width / acceleration * 2 = 16
        assert!(make_mask(64, 8, 16, 0).is_err());
        assert!(make_mask(64, 8, 15, 0).is_ok());
    }

    #[test]
    fn from_lines_checks_record() {
        let m = make_mask(32, 4, 2, 3).unwrap();
        assert!(SamplingMask::from_lines(m.lines().clone(), m.params()).is_ok());
        let mut tampered = m.lines().clone();
        let first_unsampled = tampered.iter().position(|&s| !s).unwrap();
        tampered[first_unsampled] = true;
        assert!(SamplingMask::from_lines(tampered, m.params()).is_err());
    }

    #[test]
    fn default_center_scaling() {
        assert_eq!(default_center_lines(512), 24);
        assert_eq!(default_center_lines(256), 12);
        assert_eq!(default_center_lines(48), 2);
        assert_eq!(default_center_lines(8), 1);
    }
}
