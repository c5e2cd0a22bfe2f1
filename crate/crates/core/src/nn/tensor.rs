use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::C64;

/// Dense `(N, C, H, W)` tensor of `f64`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not fill shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec([1, 1, 1, 1], vec![v])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Pack a complex `(T, H, W)` stack as `(T, 2, H, W)` real/imag channels.
    pub fn from_complex(frames: &Array3<C64>) -> Self {
        let (t, h, w) = frames.dim();
        let plane = h * w;
        let mut data = vec![0.0; t * 2 * plane];
        for (ti, frame) in frames.outer_iter().enumerate() {
            let base = ti * 2 * plane;
            for (p, v) in frame.iter().enumerate() {
                data[base + p] = v.re;
                data[base + plane + p] = v.im;
            }
        }
        Tensor::from_vec([t, 2, h, w], data)
    }

    /// Inverse of [`Tensor::from_complex`]; requires exactly two channels.
    pub fn to_complex(&self) -> Array3<C64> {
        let [t, c, h, w] = self.shape;
        assert_eq!(c, 2, "complex view needs 2 channels");
        let plane = h * w;
        Array3::from_shape_fn((t, h, w), |(ti, i, j)| {
            let base = ti * 2 * plane + i * w + j;
            C64::new(self.data[base], self.data[base + plane])
        })
    }
}
