//! Weak adaptation learning.
//!
//! Learns a target-domain classifier from plentiful source samples labeled by
//! an inaccurate weak annotator plus a small, accurately labeled target set.
//! The crate is `no_std` (with `alloc`); file formats, configuration and the
//! command line live in the companion `wal` crate.
//!
//! Module map:
//!
//! * [`data`] builds, shifts and splits source/target datasets.
//! * [`annotate`] provides weak annotators of controllable accuracy.
//! * [`nets`] holds the three-component network (`phi0`, `phi1`, `phi2`).
//! * [`losses`] implements the KL, classified-MMD and correction losses.
//! * [`pipeline`] runs the four training stages end to end.
//! * [`baselines`] implements the comparison methods.
//! * [`bound`] evaluates the error-bound terms and checks its inequalities.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod annotate;
pub mod baselines;
pub mod bound;
pub mod data;
mod error;
pub mod losses;
mod nan_serde;
pub mod nets;
pub mod nn;
pub mod pipeline;
pub mod seed;
mod train;

pub use error::{Error, Result};

/// Index of the largest entry. Ties go to the lowest index.
pub fn argmax<T: Copy + PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A function from a flat feature vector to an output vector of fixed width.
///
/// Implemented by the weak annotators, the trained networks and the
/// composed classifiers used by the bound toolkit.
pub trait Classifier {
    fn output_width(&self) -> usize;
    fn predict(&self, x: &[f32]) -> alloc::vec::Vec<f64>;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn output_width(&self) -> usize {
        (**self).output_width()
    }

    fn predict(&self, x: &[f32]) -> alloc::vec::Vec<f64> {
        (**self).predict(x)
    }
}

/// Wraps a closure as a [`Classifier`].
pub struct FnClassifier<F> {
    width: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&[f32]) -> alloc::vec::Vec<f64>,
{
    pub fn new(width: usize, f: F) -> Self {
        Self { width, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&[f32]) -> alloc::vec::Vec<f64>,
{
    fn output_width(&self) -> usize {
        self.width
    }

    fn predict(&self, x: &[f32]) -> alloc::vec::Vec<f64> {
        (self.f)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.1, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
