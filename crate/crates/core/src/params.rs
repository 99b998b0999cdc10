//! Uniform access to named parameter blocks.
//!
//! Optimizers, gradient clipping, checkpoints and gradient comparison all
//! operate on flat `[f64]` views of each block, so every parameter (and
//! gradient) struct in the crate implements [`ParamBlocks`].

use crate::error::{Error, Result};

pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(&'static str, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += other`, block by block. Both sides must share a layout.
    fn add_assign_blocks(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            debug_assert_eq!(a.len(), b.len());
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn global_norm(&self) -> f64 {
        self.blocks().iter().flat_map(|(_, b)| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Name of the first block holding a non-finite entry, if any.
    fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks().into_iter().find(|(_, b)| b.iter().any(|x| !x.is_finite())).map(|(name, _)| name)
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::Numeric(format!("{context}: block {name}"))),
            None => Ok(()),
        }
    }

    /// All entries concatenated in block order.
    fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }
}

/// Rescale `grads` so that its global L2 norm is at most `max_norm`.
/// Returns the factor that was applied (1.0 when no clipping happened).
pub fn clip_global_norm<P: ParamBlocks>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        grads.scale(factor);
        factor
    } else {
        1.0
    }
}

/// Implements [`ParamBlocks`] for a struct whose listed fields all deref to `[f64]`.
#[macro_export]
macro_rules! impl_param_blocks {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::ParamBlocks for $ty {
            fn blocks(&self) -> Vec<(&'static str, &[f64])> {
                vec![$((stringify!($field), self.$field.as_slice())),+]
            }
            fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
                vec![$((stringify!($field), self.$field.as_mut_slice())),+]
            }
        }
    };
}
