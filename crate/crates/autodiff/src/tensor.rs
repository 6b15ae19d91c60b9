//! Dense row-major tensors and seeded initialisation.

use crate::error::{shape_err, Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;

/// Dense row-major buffer. Image tensors use `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Draws a tensor from `init` using the stream named `name` under `seed`.
    pub fn init_named(shape: &[usize], init: InitSpec, seed: u64, name: &str) -> Result<Self> {
        check_shape(shape)?;
        init.validate()?;
        let mut rng = StreamRng::new(seed, name);
        let numel: usize = shape.iter().product();
        let data = match init {
            InitSpec::Zeros => vec![T::zero(); numel],
            InitSpec::Constant(v) => vec![T::from_f64(v); numel],
            InitSpec::Gaussian { mean, std } => (0..numel)
                .map(|_| T::from_f64(mean + std * rng.normal()))
                .collect(),
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            shape_err(format!("expected a scalar, got shape {:?}", self.shape))
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => shape_err(format!("expected [N,C,H,W], got {:?}", self.shape)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return shape_err(format!("every dimension must be >= 1, got {shape:?}"));
    }
    Ok(())
}

/// Initialisation rule for a new tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    Constant(f64),
    Gaussian { mean: f64, std: f64 },
}

impl InitSpec {
    /// Zero-mean, std 0.001: the rule for weights without pretrained values.
    pub const HEAD: InitSpec = InitSpec::Gaussian {
        mean: 0.0,
        std: 0.001,
    };

    /// He initialisation for a layer with the given fan-in.
    pub fn fan_in(fan_in: usize) -> InitSpec {
        InitSpec::Gaussian {
            mean: 0.0,
            std: (2.0 / fan_in.max(1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InitSpec::Gaussian { mean, std } if !(std > 0.0 && std.is_finite() && mean.is_finite()) => {
                Err(Error::Invalid(format!("gaussian init needs finite std > 0, got {std}")))
            }
            InitSpec::Constant(v) if !v.is_finite() => {
                Err(Error::Invalid(format!("constant init must be finite, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for InitSpec {
    fn default() -> Self {
        Self::HEAD
    }
}

/// Creates a tensor from `init`; Gaussian draws come from the stream
/// `(seed, "tensor")`.
pub fn tensor_new<T: Real>(shape: &[usize], init: InitSpec, seed: u64) -> Result<Tensor<T>> {
    Tensor::init_named(shape, init, seed, "tensor")
}
