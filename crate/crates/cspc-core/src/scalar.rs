//! Scalar abstraction: the whole simulator is generic over the float type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the simulator (`f32`, `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + SampleUniform
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + SampleUniform
        + Default
        + Debug
        + Display
        + Serialize
        + DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

/// Shorthand for lifting an `f64` constant into the scalar type.
pub(crate) fn num<S: Scalar>(value: f64) -> S {
    S::from_f64(value).expect("constant representable in scalar type")
}

/// Mean of a slice; zero for an empty slice.
pub(crate) fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::zero();
    }
    let sum = values.iter().fold(S::zero(), |acc, &v| acc + v);
    sum / num::<S>(values.len() as f64)
}
