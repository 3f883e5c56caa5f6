//! Scalar abstraction shared by every numeric module.
//!
//! All algorithms are written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Tolerances are stated in `f64` and clamped from below by a
//! multiple of the type's machine epsilon so that `f32` instances stay usable.

use std::fmt::Debug;

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

pub trait Scalar:
    NdFloat + FromPrimitive + ToPrimitive + Default + Serialize + DeserializeOwned + Debug
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Absolute tolerance `x`, never below `256·ε` of the type.
    fn tol(x: f64) -> Self {
        Self::lit(x).max(Self::epsilon() * Self::lit(256.0))
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Feasibility slack used for membership and vertex checks.
pub const FEAS_TOL: f64 = 1e-9;
/// Euclidean distance under which two vertices are considered equal.
pub const VERTEX_DEDUP_TOL: f64 = 1e-8;
/// Constraint satisfaction required of an optimal LP point.
pub const LP_TOL: f64 = 1e-7;
