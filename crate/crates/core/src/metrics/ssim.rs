//! Gaussian-window SSIM over the valid region (no border padding), with an
//! analytic gradient with respect to the first argument.

use crate::error::{ReconError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            window: 7,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimOptions {
    pub fn with_window(window: usize) -> Self {
        SsimOptions {
            window,
            ..Default::default()
        }
    }

    pub(crate) fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub(crate) fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(ReconError::validation(
                "SSIM window must be odd and positive",
            ));
        }
        if self.window > h || self.window > w {
            return Err(ReconError::validation(format!(
                "SSIM window {} larger than image {h}x{w}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Separable valid-mode correlation with a 1-D kernel along both axes.
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            rows[i * wo + j] = kernel
                .iter()
                .enumerate()
                .map(|(d, kv)| kv * img[i * w + j + d])
                .sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = kernel
                .iter()
                .enumerate()
                .map(|(d, kv)| kv * rows[(i + d) * wo + j])
                .sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..ho {
        for j in 0..wo {
            let v = map[i * wo + j];
            for (d, kv) in kernel.iter().enumerate() {
                rows[(i + d) * wo + j] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..wo {
            let v = rows[i * wo + j];
            for (d, kv) in kernel.iter().enumerate() {
                out[i * w + j + d] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM of `x` against `y` (row-major `h x w`), optionally with
/// `d mean / d x`.
pub(crate) fn ssim_core(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    data_range: f64,
    opts: &SsimOptions,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let kernel = opts.kernel();
    let c1 = (opts.k1 * data_range).powi(2);
    let c2 = (opts.k2 * data_range).powi(2);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, h, w, &kernel);
    let mu_y = filter_valid(y, h, w, &kernel);
    let e_xx = filter_valid(&xx, h, w, &kernel);
    let e_yy = filter_valid(&yy, h, w, &kernel);
    let e_xy = filter_valid(&xy, h, w, &kernel);

    let n = mu_x.len();
    let mut total = 0.0;
    let (mut d_mu, mut d_exx, mut d_exy) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let vx = e_xx[p] - mx * mx;
        let vy = e_yy[p] - my * my;
        let cxy = e_xy[p] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = vx + vy + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            d_mu[p] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
            d_exx[p] = -s / b2;
            d_exy[p] = 2.0 * s / a2;
        }
    }
    let mean = total / n as f64;
    let grad = want_grad.then(|| {
        let inv = 1.0 / n as f64;
        let g_mu = filter_valid_adjoint(&d_mu, h, w, &kernel);
        let g_xx = filter_valid_adjoint(&d_exx, h, w, &kernel);
        let g_xy = filter_valid_adjoint(&d_exy, h, w, &kernel);
        (0..h * w)
            .map(|i| inv * (g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i]))
            .collect()
    });
    (mean, grad)
}
