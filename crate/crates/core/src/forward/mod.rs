//! Forward operators: the spatially varying light-sheet model `L`, plain 3D
//! convolution `H`, and operator-norm estimation.
//!
//! Every operator maps a volume to a volume of the same dims and provides its
//! exact discrete adjoint, including the boundary handling.

mod convolution;
mod lightsheet;
mod norm;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{Dims, Volume};

pub use convolution::ConvolutionOperator;
pub use lightsheet::LightsheetOperator;
pub use norm::{estimate_op_norm, power_iteration, NormEstimate, PowerIterOptions};

/// How samples beyond the grid are treated by the convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Linear convolution; everything outside the grid reads as zero.
    #[default]
    ZeroPad,
    /// Periodic wrap-around in all three axes.
    Circular,
}

pub trait LinearOperator: Send + Sync {
    fn dims(&self) -> Dims;

    fn apply(&self, u: &Volume) -> Result<Volume>;

    fn adjoint(&self, f: &Volume) -> Result<Volume>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dims(&self) -> Dims {
        (**self).dims()
    }

    fn apply(&self, u: &Volume) -> Result<Volume> {
        (**self).apply(u)
    }

    fn adjoint(&self, f: &Volume) -> Result<Volume> {
        (**self).adjoint(f)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for std::sync::Arc<T> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }

    fn apply(&self, u: &Volume) -> Result<Volume> {
        (**self).apply(u)
    }

    fn adjoint(&self, f: &Volume) -> Result<Volume> {
        (**self).adjoint(f)
    }
}

/// `u ↦ c·u`; `c = 1` is the identity.
#[derive(Clone, Copy, Debug)]
pub struct Scaling {
    pub dims: Dims,
    pub factor: f64,
}

impl Scaling {
    pub fn identity(dims: Dims) -> Self {
        Scaling { dims, factor: 1.0 }
    }
}

impl LinearOperator for Scaling {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn apply(&self, u: &Volume) -> Result<Volume> {
        crate::volume::check_dims(self.dims, u.dims())?;
        Ok(u.scaled(self.factor))
    }

    fn adjoint(&self, f: &Volume) -> Result<Volume> {
        self.apply(f)
    }
}

/// Zero-based start of the kernel's zero offset along an axis of length `n`.
#[inline]
pub(crate) fn center(n: usize) -> usize {
    n / 2
}
