//! N×C×H×W tensors and a tape-based reverse-mode differentiation engine.

pub mod gradcheck;
mod graph;
pub(crate) mod kernels;

use std::fmt;

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_at, GradCheck};
pub use graph::{Graph, Var, AMPLITUDE_EPS};

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape::new(1, 1, 1, 1);

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Pads a logical shape of rank ≤ 4 with trailing ones.
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        if dims.len() > 4 {
            return Err(Error::Shape(format!("rank {} exceeds 4", dims.len())));
        }
        let d = |i: usize| dims.get(i).copied().unwrap_or(1);
        Ok(Shape::new(d(0), d(1), d(2), d(3)))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major values with an N×C×H×W shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::filled(Shape::SCALAR, value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// The `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?
            .shape;
        let mut c = 0;
        for p in parts {
            let s = p.shape;
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::Shape(format!("cannot concat {s} with {first}")));
            }
            c += s.c;
        }
        let shape = Shape::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for p in parts {
                let chunk = p.shape.c * p.shape.plane();
                data.extend_from_slice(&p.data[n * chunk..(n + 1) * chunk]);
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape;
        if start + len > s.c || len == 0 {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} of {s}",
                start + len
            )));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor {
            shape: Shape::new(s.n, len, s.h, s.w),
            data,
        })
    }

    /// Stacks tensors along the batch axis.
    pub fn stack_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("stack of nothing".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::Shape(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }

    pub fn batch_item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let chunk = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[n * chunk..(n + 1) * chunk].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_returns_originals() {
        let a = Tensor::from_fn(Shape::new(2, 2, 3, 3), |n, c, y, x| {
            (n * 100 + c * 10 + y * 3 + x) as f64
        });
        let b = Tensor::from_fn(Shape::new(2, 3, 3, 3), |n, c, y, x| {
            -((n * 100 + c * 10 + y * 3 + x) as f64)
        });
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 5, 3, 3));
        assert_eq!(cat.slice_channels(0, 2).unwrap(), a);
        assert_eq!(cat.slice_channels(2, 3).unwrap(), b);
        assert!(cat.slice_channels(4, 2).is_err());
    }

    #[test]
    fn stacking_and_unstacking() {
        let a = Tensor::filled(Shape::new(1, 2, 2, 2), 1.0);
        let b = Tensor::filled(Shape::new(1, 2, 2, 2), 2.0);
        let s = Tensor::stack_batch(&[&a, &b]).unwrap();
        assert_eq!(s.batch_item(1), b);
        assert_eq!(s.at(0, 1, 1, 1), 1.0);
    }

    #[test]
    fn dims_padding() {
        assert_eq!(Shape::from_dims(&[5]).unwrap(), Shape::new(5, 1, 1, 1));
        assert_eq!(Shape::from_dims(&[4, 3, 3, 3]).unwrap().numel(), 108);
        assert!(Shape::from_dims(&[1, 1, 1, 1, 1]).is_err());
    }
}
