//! Adam and RMSProp over any [`ParamBlocks`] layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamBlocks;

fn check_layout<P: ParamBlocks>(a: &P, b: &P) -> Result<()> {
    let sa: Vec<usize> = a.blocks().iter().map(|(_, x)| x.len()).collect();
    let sb: Vec<usize> = b.blocks().iter().map(|(_, x)| x.len()).collect();
    if sa != sb {
        return Err(Error::Contract("optimizer state does not match the parameter layout".into()));
    }
    Ok(())
}

fn zeroed<P: ParamBlocks + Clone>(like: &P) -> P {
    let mut z = like.clone();
    z.fill_zero();
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<P> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: P,
    pub v: P,
}

impl<P: ParamBlocks + Clone> AdamState<P> {
    /// Default moments `β = (0.9, 0.999)` and `ε = 1e-8`.
    pub fn new(params: &P, lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeroed(params), v: zeroed(params) }
    }

    /// Bias-corrected Adam update. A non-finite gradient aborts the step
    /// and leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        check_layout(params, grads)?;
        check_layout(params, &self.m)?;
        grads.check_finite("adam gradient")?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((_, p), (_, g)), ((_, m), (_, v))) in
            params.blocks_mut().into_iter().zip(grads.blocks()).zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()))
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// RMSProp without momentum, `ε` inside the square root:
/// `ms ← α ms + (1 − α) g²`, `θ ← θ − lr · g / √(ms + ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState<P> {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub momentum: f64,
    pub ms: P,
}

impl<P: ParamBlocks + Clone> RmsPropState<P> {
    /// `(alpha, eps, momentum) = (0.99, 0.01, 0)`.
    pub fn new(params: &P, lr: f64) -> Self {
        RmsPropState { lr, alpha: 0.99, eps: 0.01, momentum: 0.0, ms: zeroed(params) }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        check_layout(params, grads)?;
        check_layout(params, &self.ms)?;
        grads.check_finite("rmsprop gradient")?;
        let (alpha, lr, eps) = (self.alpha, self.lr, self.eps);
        for (((_, p), (_, g)), (_, ms)) in params.blocks_mut().into_iter().zip(grads.blocks()).zip(self.ms.blocks_mut()) {
            for k in 0..p.len() {
                ms[k] = alpha * ms[k] + (1.0 - alpha) * g[k] * g[k];
                p[k] -= lr * g[k] / (ms[k] + eps).sqrt();
            }
        }
        Ok(())
    }
}
