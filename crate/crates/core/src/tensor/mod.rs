//! Dense tensors with a reverse-mode autodiff tape.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens on a
//! [`Tape`]: values are lifted onto the tape as [`Var`] handles, every operation
//! records its inputs and gradient rule, and [`Tape::backward`] walks the record
//! in reverse to produce [`Gradients`].
//!
//! Everything is generic over [`Float`] so the finite-difference harness can
//! evaluate the same graph in 64-bit while models train in 32-bit.

mod conv;
pub mod battery;
pub mod gradcheck;
pub mod rng;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use conv::{Conv2dSpec, Padding2d};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, InputReport, ScalarFn};
pub use tape::{Gradients, RunningStats, Tape, Var};

use rng::SeedRng;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Element type of a tensor: `f32` for models, `f64` for numeric oracles.
pub trait Float:
    num_traits::Float
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Float for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Initialization scheme for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform { low: f64, high: f64, seed: u64 },
    /// Box–Muller transform over a seeded ChaCha8 stream.
    Gaussian { mean: f64, std: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::of(c); n],
            Init::Uniform { low, high, seed } => {
                if !(low < high) {
                    return Err(TensorError::Parameter(format!(
                        "uniform needs low < high, got [{low}, {high})"
                    )));
                }
                let mut rng = SeedRng::new(seed);
                (0..n).map(|_| T::of(rng.uniform_in(low, high))).collect()
            }
            Init::Gaussian { mean, std, seed } => {
                if !(std >= 0.0) {
                    return Err(TensorError::Parameter(format!(
                        "gaussian needs std >= 0, got {std}"
                    )));
                }
                let mut rng = SeedRng::new(seed);
                (0..n).map(|_| T::of(mean + std * rng.normal())).collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::create(shape, Init::Constant(value))
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(TensorError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Inner product over all elements, accumulated in f64.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(TensorError::Shape(format!(
                "dot of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constants() {
        let z = Tensor::<f32>::zeros(&[2, 2]).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::<f32>::full(&[3], 1.0).unwrap();
        assert_eq!(c.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_is_reproducible() {
        let init = Init::Uniform {
            low: 0.0,
            high: 1.0,
            seed: 7,
        };
        let a = Tensor::<f32>::create(&[4], init).unwrap();
        let b = Tensor::<f32>::create(&[4], init).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0]),
            Err(TensorError::InvalidShape(_))
        ));
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::create(
            &[2],
            Init::Uniform {
                low: 1.0,
                high: 1.0,
                seed: 0
            }
        )
        .is_err());
        assert!(Tensor::<f32>::create(
            &[2],
            Init::Gaussian {
                mean: 0.0,
                std: -1.0,
                seed: 0
            }
        )
        .is_err());
        assert!(Tensor::<f32>::new(&[3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let t = Tensor::<f64>::create(
            &[20000],
            Init::Gaussian {
                mean: 1.0,
                std: 2.0,
                seed: 3,
            },
        )
        .unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        assert!((var - 4.0).abs() < 0.15, "{var}");
    }
}
