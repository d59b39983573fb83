use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::grid::Slice;
use crate::Result;

/// Dense `(batch, channels, height, width)` array with an optional gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(ShapeMismatch, "tensor shape {shape:?} needs {n} values, got {}", data.len());
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()], grad: None }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self { shape, data: vec![value; shape.iter().product()], grad: None }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Pixels per channel plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, ch, h, w] = self.shape;
        self.data[((b * ch + c) * h + y) * w + x]
    }

    /// One `(b, c)` plane, row-major.
    #[inline]
    pub fn plane_slice(&self, b: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let i = (b * self.shape[1] + c) * p;
        &self.data[i..i + p]
    }

    #[inline]
    pub fn plane_slice_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let i = (b * self.shape[1] + c) * p;
        &mut self.data[i..i + p]
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            bail!(ShapeMismatch, "tensor shapes {:?} and {:?} differ", self.shape, other.shape);
        }
        Ok(())
    }

    /// Stack equally sized slices into a `(n, 1, h, w)` batch, scaling by `factor`.
    pub fn from_slices(slices: &[&Slice], factor: f64) -> Result<Self> {
        let Some(first) = slices.first() else {
            bail!(ShapeMismatch, "cannot stack an empty list of slices");
        };
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(slices.len() * w * h);
        for s in slices {
            if s.width != w || s.height != h {
                bail!(ShapeMismatch, "slice {}x{} differs from {w}x{h}", s.width, s.height);
            }
            data.extend(s.data.iter().map(|v| v * factor));
        }
        Self::new([slices.len(), 1, h, w], data)
    }

    /// Channel 0 of sample `b` as a slice, scaled by `factor`.
    pub fn to_slice(&self, b: usize, pixel_size: f64, factor: f64) -> Result<Slice> {
        if b >= self.batch() {
            bail!(OutOfRange, "sample {b} of a batch of {}", self.batch());
        }
        let data = self.plane_slice(b, 0).iter().map(|v| v * factor).collect();
        Slice::new(self.width(), self.height(), pixel_size, data)
    }
}
