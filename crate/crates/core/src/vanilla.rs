//! Vanilla sigmoid RNN with three gradient algorithms.
//!
//! ```text
//! s(t) = W x(t) + R h(t−1)      h(t) = σ(s(t))      h(0) = 0
//! ```
//!
//! * textbook RTRL carrying `∂s(t)/∂W` and `∂s(t)/∂R` as dense 3-index
//!   tensors, `O(N⁴)` per step;
//! * BPTT;
//! * the segment-wise hybrid: BPTT inside each segment plus a carried
//!   boundary tensor `𝕎(t0) = ∂s(t0)/∂W` summed over all earlier steps.
//!
//! The hybrid's boundary recursion
//!
//! ```text
//! H(t0+S) = I
//! H(τ)_kl = σ′(s_l(τ)) Σ_m H_km(τ+1) R_ml
//! 𝕎(t0+S) = H(t0) 𝕎(t0) + Σ_τ H_{k,i}(τ) x_j(τ)
//! ```
//!
//! is evaluated in the same reverse sweep as the in-segment BPTT.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, shape_err, Error, Result};
use crate::impl_param_blocks;
use crate::numeric::{fan_in_scale, init_uniform, sigmoid, RealMatrix, RealVector, Rng, Tensor3};
use crate::params::ParamBlocks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaParams {
    pub w: RealMatrix,
    pub r: RealMatrix,
}

impl_param_blocks!(VanillaParams { w, r });

pub type VanillaGrads = VanillaParams;

impl VanillaParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        VanillaParams { w: RealMatrix::zeros(hidden, input), r: RealMatrix::zeros(hidden, hidden) }
    }

    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        VanillaParams {
            w: init_uniform(rng, hidden, input, fan_in_scale(input)).expect("positive scale"),
            r: init_uniform(rng, hidden, hidden, fan_in_scale(hidden)).expect("positive scale"),
        }
    }

    /// Every entry uniform in `±scale`.
    pub fn random(rng: &mut Rng, hidden: usize, input: usize, scale: f64) -> Self {
        VanillaParams {
            w: init_uniform(rng, hidden, input, scale).expect("positive scale"),
            r: init_uniform(rng, hidden, hidden, scale).expect("positive scale"),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hidden();
        if self.r.shape() != (n, n) {
            return Err(shape_err("VanillaParams R", format!("{n}x{n}"), format!("{:?}", self.r.shape())));
        }
        self.check_finite("VanillaParams")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaStepCache {
    pub x: RealVector,
    pub h_prev: RealVector,
    pub s: RealVector,
    pub h: RealVector,
}

impl VanillaStepCache {
    /// `σ′(s(t)) = h(t)(1 − h(t))`.
    pub fn sigma_prime(&self) -> RealVector {
        sigma_prime(&self.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaTape {
    pub h0: RealVector,
    pub steps: Vec<VanillaStepCache>,
}

impl VanillaTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigma_prime(h: &[f64]) -> RealVector {
    RealVector::from_fn(h.len(), |i| h[i] * (1.0 - h[i]))
}

/// One step. Returns `(s(t), h(t))`.
pub fn vanilla_step(p: &VanillaParams, h_prev: &[f64], x: &[f64]) -> Result<(RealVector, RealVector)> {
    let n = p.hidden();
    check_len("vanilla_step x", p.input(), x.len())?;
    check_len("vanilla_step h_prev", n, h_prev.len())?;
    let mut s = RealVector::zeros(n);
    p.w.matvec_into(x, &mut s);
    let mut rec = vec![0.0; n];
    p.r.matvec_into(h_prev, &mut rec);
    s.iter_mut().zip(&rec).for_each(|(a, b)| *a += b);
    let h = RealVector::from_fn(n, |i| sigmoid(s[i]));
    if !s.is_finite() {
        return Err(Error::Numeric("vanilla_step pre-activation".into()));
    }
    Ok((s, h))
}

fn step_cached(p: &VanillaParams, h_prev: &[f64], x: &[f64]) -> Result<VanillaStepCache> {
    let (s, h) = vanilla_step(p, h_prev, x)?;
    Ok(VanillaStepCache { x: RealVector::new(x.to_vec())?, h_prev: RealVector::new(h_prev.to_vec())?, s, h })
}

pub fn vanilla_forward(p: &VanillaParams, h0: &[f64], xs: &[RealVector]) -> Result<(Vec<RealVector>, VanillaTape)> {
    if xs.is_empty() {
        return Err(Error::Contract("vanilla_forward needs at least one input".into()));
    }
    let mut steps = Vec::with_capacity(xs.len());
    let mut h = RealVector::new(h0.to_vec())?;
    for x in xs {
        let cache = step_cached(p, &h, x)?;
        h = cache.h.clone();
        steps.push(cache);
    }
    let hs = steps.iter().map(|c| c.h.clone()).collect();
    Ok((hs, VanillaTape { h0: RealVector::new(h0.to_vec())?, steps }))
}

/// Reverse sweep over `steps`; returns `δ` at the first step of the run.
fn bptt_sweep(p: &VanillaParams, steps: &[VanillaStepCache], dl_dh: &[RealVector], grads: &mut VanillaGrads) -> RealVector {
    let n = p.hidden();
    let mut delta_next = RealVector::zeros(n);
    for (cache, g) in steps.iter().zip(dl_dh).rev() {
        let mut back = g.clone();
        p.r.matvec_t_acc(&delta_next, &mut back);
        let sp = cache.sigma_prime();
        let delta = RealVector::from_fn(n, |i| back[i] * sp[i]);
        grads.w.add_outer(1.0, &delta, &cache.x);
        grads.r.add_outer(1.0, &delta, &cache.h_prev);
        delta_next = delta;
    }
    delta_next
}

/// `δ(t) = ∂L(t)/∂s(t) + (Rᵀ δ(t+1)) ⊙ σ′(s(t))`, `∂L/∂W = Σ_t δ(t) ⊗ x(t)`.
pub fn vanilla_bptt(p: &VanillaParams, tape: &VanillaTape, dl_dh: &[RealVector]) -> Result<VanillaGrads> {
    if dl_dh.len() != tape.len() {
        return Err(Error::Contract(format!("tape has {} steps but {} loss cotangents were given", tape.len(), dl_dh.len())));
    }
    let mut grads = VanillaGrads::zeros(p.hidden(), p.input());
    bptt_sweep(p, &tape.steps, dl_dh, &mut grads);
    Ok(grads)
}

/// `dS_dW[k,i,j] = ∂s_k/∂W_ij`, `dS_dR[k,i,j] = ∂s_k/∂R_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaSensitivity {
    pub ds_dw: Tensor3,
    pub ds_dr: Tensor3,
}

impl VanillaSensitivity {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        VanillaSensitivity { ds_dw: Tensor3::zeros(hidden, hidden, input), ds_dr: Tensor3::zeros(hidden, hidden, hidden) }
    }

    /// `N²(N + D)` reals.
    pub fn num_reals(&self) -> usize {
        self.ds_dw.as_slice().len() + self.ds_dr.as_slice().len()
    }
}

/// `out[k] = Σ_l a[k,l] · t[l]` over the slabs of `t`, accumulated into `out`.
fn contract_slabs(a: &RealMatrix, t: &Tensor3, out: &mut Tensor3) {
    let n = a.rows();
    for k in 0..n {
        for l in 0..a.cols() {
            let akl = a[(k, l)];
            if akl != 0.0 {
                let src = t.slab(l);
                out.slab_mut(k).iter_mut().zip(src).for_each(|(o, &s)| *o += akl * s);
            }
        }
    }
}

/// `out[k,i,j] += m[k,i] · v[j]`.
fn add_outer_slabs(m: &RealMatrix, v: &[f64], out: &mut Tensor3) {
    let [nk, ni, nj] = out.dims();
    debug_assert_eq!(nj, v.len());
    for k in 0..nk {
        let slab = out.slab_mut(k);
        for i in 0..ni {
            let mki = m[(k, i)];
            if mki != 0.0 {
                slab[i * nj..(i + 1) * nj].iter_mut().zip(v).for_each(|(o, &vj)| *o += mki * vj);
            }
        }
    }
}

/// `∂s_k(t)/∂W_ij = x_j(t) 1_{k=i} + Σ_n R_kn σ′(s_n(t−1)) ∂s_n(t−1)/∂W_ij`,
/// and the same for `R` with immediate term `h_j(t−1) 1_{k=i}`.
pub fn vanilla_rtrl_step(sens: &VanillaSensitivity, p: &VanillaParams, cache: &VanillaStepCache) -> Result<VanillaSensitivity> {
    let (n, d) = (p.hidden(), p.input());
    if sens.ds_dw.dims() != [n, n, d] || sens.ds_dr.dims() != [n, n, n] {
        return Err(shape_err("vanilla_rtrl_step", format!("N={n}, D={d}"), format!("{:?}", sens.ds_dw.dims())));
    }
    let sp = sigma_prime(&cache.h_prev);
    let mut a = p.r.clone();
    for k in 0..n {
        for (v, s) in a.row_mut(k).iter_mut().zip(sp.iter()) {
            *v *= s;
        }
    }
    let mut next = VanillaSensitivity::zeros(n, d);
    contract_slabs(&a, &sens.ds_dw, &mut next.ds_dw);
    contract_slabs(&a, &sens.ds_dr, &mut next.ds_dr);
    for k in 0..n {
        next.ds_dw.slab_mut(k)[k * d..(k + 1) * d].iter_mut().zip(cache.x.iter()).for_each(|(o, &x)| *o += x);
        next.ds_dr.slab_mut(k)[k * n..(k + 1) * n].iter_mut().zip(cache.h_prev.iter()).for_each(|(o, &h)| *o += h);
    }
    if !next.ds_dw.is_finite() || !next.ds_dr.is_finite() {
        return Err(Error::Numeric("vanilla sensitivity update".into()));
    }
    Ok(next)
}

/// `grads[i,j] += Σ_k g_k t[k,i,j]`.
fn contract_first(g: &[f64], t: &Tensor3, out: &mut RealMatrix) {
    for (k, &gk) in g.iter().enumerate() {
        if gk != 0.0 {
            out.as_mut_slice().iter_mut().zip(t.slab(k)).for_each(|(o, &s)| *o += gk * s);
        }
    }
}

/// Contribution of `L(t)` to the gradient, given sensitivities already
/// advanced to step `t`.
pub fn vanilla_rtrl_grad(
    sens: &VanillaSensitivity,
    cache: &VanillaStepCache,
    dl_dh: &[f64],
    grads: &mut VanillaGrads,
) -> Result<()> {
    check_len("vanilla_rtrl_grad dL/dh", cache.h.len(), dl_dh.len())?;
    let sp = cache.sigma_prime();
    let dl_ds: Vec<f64> = dl_dh.iter().zip(sp.iter()).map(|(g, s)| g * s).collect();
    contract_first(&dl_ds, &sens.ds_dw, &mut grads.w);
    contract_first(&dl_ds, &sens.ds_dr, &mut grads.r);
    Ok(())
}

/// Total gradient of `Σ_t L(t)` by textbook RTRL from `h(0) = 0`.
pub fn vanilla_rtrl(p: &VanillaParams, xs: &[RealVector], dl_dh: &[RealVector]) -> Result<VanillaGrads> {
    check_len("vanilla_rtrl cotangents", xs.len(), dl_dh.len())?;
    let (n, d) = (p.hidden(), p.input());
    let mut sens = VanillaSensitivity::zeros(n, d);
    let mut grads = VanillaGrads::zeros(n, d);
    let mut h = RealVector::zeros(n);
    for (x, g) in xs.iter().zip(dl_dh) {
        let cache = step_cached(p, &h, x)?;
        sens = vanilla_rtrl_step(&sens, p, &cache)?;
        vanilla_rtrl_grad(&sens, &cache, g, &mut grads)?;
        h = cache.h;
    }
    Ok(grads)
}

/// State carried between hybrid segments.
///
/// The boundary state is kept as `h(t0)` rather than `s(t0)`: the next
/// segment needs `h(t0)` as its input and `σ′(s(t0)) = h(t0)(1 − h(t0))`,
/// and the stream start `h(0) = 0` has no finite pre-activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridCarry {
    pub h_t0: RealVector,
    pub tw: Tensor3,
    pub tr: Tensor3,
    pub grads: VanillaGrads,
    pub steps_seen: usize,
}

impl HybridCarry {
    pub fn new(hidden: usize, input: usize) -> Self {
        HybridCarry {
            h_t0: RealVector::zeros(hidden),
            tw: Tensor3::zeros(hidden, hidden, input),
            tr: Tensor3::zeros(hidden, hidden, hidden),
            grads: VanillaGrads::zeros(hidden, input),
            steps_seen: 0,
        }
    }

    /// Reals held by the boundary tensors, `N²(N + D)`.
    pub fn num_reals(&self) -> usize {
        self.tw.as_slice().len() + self.tr.as_slice().len()
    }
}

/// Process one segment (at most `max_len` steps). On return
/// `carry.grads` holds the exact gradient of every loss seen so far.
pub fn hybrid_segment(
    mut carry: HybridCarry,
    p: &VanillaParams,
    xs: &[RealVector],
    dl_dh: &[RealVector],
    max_len: usize,
) -> Result<(HybridCarry, VanillaGrads)> {
    let (n, d) = (p.hidden(), p.input());
    if carry.tw.dims() != [n, n, d] || carry.tr.dims() != [n, n, n] || carry.h_t0.len() != n {
        return Err(Error::Contract("hybrid carry does not match parameter shapes".into()));
    }
    if xs.is_empty() || xs.len() > max_len {
        return Err(Error::Contract(format!("segment has {} steps, expected 1..={max_len}", xs.len())));
    }
    check_len("hybrid_segment cotangents", xs.len(), dl_dh.len())?;

    let mut steps = Vec::with_capacity(xs.len());
    let mut h = carry.h_t0.clone();
    for x in xs {
        let cache = step_cached(p, &h, x)?;
        h = cache.h.clone();
        steps.push(cache);
    }

    // Fused reverse sweep: in-segment BPTT alongside H(τ) = ∂s(t0+S)/∂s(τ).
    let mut big_h = RealMatrix::identity(n);
    let mut new_tw = Tensor3::zeros(n, n, d);
    let mut new_tr = Tensor3::zeros(n, n, n);
    let mut delta_next = RealVector::zeros(n);
    for (cache, g) in steps.iter().zip(dl_dh).rev() {
        let mut back = g.clone();
        p.r.matvec_t_acc(&delta_next, &mut back);
        let sp = cache.sigma_prime();
        let delta = RealVector::from_fn(n, |i| back[i] * sp[i]);
        carry.grads.w.add_outer(1.0, &delta, &cache.x);
        carry.grads.r.add_outer(1.0, &delta, &cache.h_prev);
        delta_next = delta;

        add_outer_slabs(&big_h, &cache.x, &mut new_tw);
        add_outer_slabs(&big_h, &cache.h_prev, &mut new_tr);

        // H(τ−1) = H(τ) R diag(σ′(s(τ−1)))
        let sp_prev = sigma_prime(&cache.h_prev);
        let mut next_h = big_h.matmul(&p.r)?;
        for k in 0..n {
            next_h.row_mut(k).iter_mut().zip(sp_prev.iter()).for_each(|(v, s)| *v *= s);
        }
        big_h = next_h;
    }

    // δ̂(t0) = σ′(s(t0)) ⊙ Rᵀ δ(t0+1) meets the carried boundary tensors.
    let mut delta_hat = vec![0.0; n];
    p.r.matvec_t_acc(&delta_next, &mut delta_hat);
    let sp0 = sigma_prime(&carry.h_t0);
    delta_hat.iter_mut().zip(sp0.iter()).for_each(|(v, s)| *v *= s);
    contract_first(&delta_hat, &carry.tw, &mut carry.grads.w);
    contract_first(&delta_hat, &carry.tr, &mut carry.grads.r);

    contract_slabs(&big_h, &carry.tw, &mut new_tw);
    contract_slabs(&big_h, &carry.tr, &mut new_tr);
    if !new_tw.is_finite() || !new_tr.is_finite() {
        return Err(Error::Numeric("hybrid boundary tensors".into()));
    }
    carry.tw = new_tw;
    carry.tr = new_tr;
    carry.h_t0 = h;
    carry.steps_seen += xs.len();
    let grads = carry.grads.clone();
    Ok((carry, grads))
}

/// Run the hybrid over a whole sequence cut into segments of the given lengths.
pub fn hybrid_run(p: &VanillaParams, xs: &[RealVector], dl_dh: &[RealVector], lengths: &[usize]) -> Result<VanillaGrads> {
    if lengths.iter().sum::<usize>() != xs.len() {
        return Err(Error::Contract("segment lengths must sum to the sequence length".into()));
    }
    let mut carry = HybridCarry::new(p.hidden(), p.input());
    let mut start = 0;
    for &len in lengths {
        let end = start + len;
        let (next, _) = hybrid_segment(carry, p, &xs[start..end], &dl_dh[start..end], len)?;
        carry = next;
        start = end;
    }
    Ok(carry.grads)
}

/// Split `total` into segments of `span` with a shorter tail.
pub fn segment_lengths(total: usize, span: usize) -> Vec<usize> {
    assert!(span > 0, "segment span must be positive");
    let mut out = vec![span; total / span];
    if total % span != 0 {
        out.push(total % span);
    }
    out
}
