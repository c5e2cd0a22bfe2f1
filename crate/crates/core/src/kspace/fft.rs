//! Centered, orthonormal 2-D Fourier transforms.
//!
//! Zero frequency sits at index `(h / 2, w / 2)` and both directions carry a
//! `1 / sqrt(h * w)` factor, so the pair is unitary and each is the adjoint
//! of the other.

use std::cell::RefCell;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rustfft::{FftDirection, FftPlanner};

use crate::error::{ReconError, Result};
use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a C64>) -> Result<()> {
    if values
        .into_iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
    {
        Ok(())
    } else {
        Err(ReconError::validation(
            "non-finite entry in transform input",
        ))
    }
}

/// Transform a row-major `h x w` buffer in place.
pub(crate) fn transform_in_place(buf: &mut [C64], h: usize, w: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    let mut scratch = vec![C64::new(0.0, 0.0); h * w];

    // ifftshift
    for i in 0..h {
        let src_row = (i + h / 2) % h;
        for j in 0..w {
            scratch[i * w + j] = buf[src_row * w + (j + w / 2) % w];
        }
    }

    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        row_fft.process(&mut scratch);

        // columns: transpose into buf, run length-h transforms, transpose back
        for i in 0..h {
            for j in 0..w {
                buf[j * h + i] = scratch[i * w + j];
            }
        }
        let col_fft = planner.plan_fft(h, direction);
        col_fft.process(buf);
        for j in 0..w {
            for i in 0..h {
                scratch[i * w + j] = buf[j * h + i];
            }
        }
    });

    // fftshift + orthonormal scaling
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for i in 0..h {
        let dst_row = (i + h / 2) % h;
        for j in 0..w {
            buf[dst_row * w + (j + w / 2) % w] = scratch[i * w + j] * scale;
        }
    }
}

fn transform_2d(image: &Array2<C64>, direction: FftDirection) -> Result<Array2<C64>> {
    check_finite(image.iter())?;
    let (h, w) = image.dim();
    let mut buf: Vec<C64> = image.iter().copied().collect();
    if h > 0 && w > 0 {
        transform_in_place(&mut buf, h, w, direction);
    }
    Ok(Array2::from_shape_vec((h, w), buf).expect("shape preserved"))
}

/// Centered orthonormal forward transform of one image.
pub fn fft2c(image: &Array2<C64>) -> Result<Array2<C64>> {
    transform_2d(image, FftDirection::Forward)
}

/// Centered orthonormal inverse transform of one k-space frame.
pub fn ifft2c(kspace: &Array2<C64>) -> Result<Array2<C64>> {
    transform_2d(kspace, FftDirection::Inverse)
}

pub(crate) fn transform_frames(frames: ArrayView3<C64>, direction: FftDirection) -> Array3<C64> {
    let (t, h, w) = frames.dim();
    let mut out = frames.as_standard_layout().into_owned();
    for mut frame in out.axis_iter_mut(Axis(0)) {
        let buf = frame.as_slice_mut().expect("standard layout");
        transform_in_place(buf, h, w, direction);
    }
    debug_assert_eq!(out.dim(), (t, h, w));
    out
}

/// Frame-wise [`fft2c`] over a `(T, H, W)` stack.
pub fn fft2c_frames(frames: &Array3<C64>) -> Result<Array3<C64>> {
    check_finite(frames.iter())?;
    Ok(transform_frames(frames.view(), FftDirection::Forward))
}

/// Frame-wise [`ifft2c`] over a `(T, H, W)` stack.
pub fn ifft2c_frames(frames: &Array3<C64>) -> Result<Array3<C64>> {
    check_finite(frames.iter())?;
    Ok(transform_frames(frames.view(), FftDirection::Inverse))
}
