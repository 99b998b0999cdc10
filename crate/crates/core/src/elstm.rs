//! LSTM with element-wise recurrence (eLSTM).
//!
//! ```text
//! f(t) = σ(F x(t) + w_f ⊙ c(t−1) + b_f)
//! z(t) = tanh(Z x(t) + w_z ⊙ c(t−1) + b_z)
//! c(t) = f(t) ⊙ c(t−1) + (1 − f(t)) ⊙ z(t)
//! o(t) = σ(O x(t) + W_o c(t))
//! h(t) = o(t) ⊙ c(t)
//! ```
//!
//! The recurrent state is `c`; `h` is the output read by downstream heads.
//! This module holds the forward pass and the reverse-mode (BPTT / TBPTT)
//! gradients. Forward-mode gradients live in [`crate::rtrl`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, shape_err, Error, Result};
use crate::impl_param_blocks;
use crate::numeric::{fan_in_scale, init_uniform, init_uniform_vector, sigmoid, RealMatrix, RealVector, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElstmParams {
    pub f: RealMatrix,
    pub z: RealMatrix,
    pub w_f: RealVector,
    pub w_z: RealVector,
    pub b_f: RealVector,
    pub b_z: RealVector,
    pub o: RealMatrix,
    pub w_o: RealMatrix,
}

impl_param_blocks!(ElstmParams { f, z, w_f, w_z, b_f, b_z, o, w_o });

/// Gradients share the parameter layout block for block.
pub type ElstmGrads = ElstmParams;

impl ElstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        ElstmParams {
            f: RealMatrix::zeros(hidden, input),
            z: RealMatrix::zeros(hidden, input),
            w_f: RealVector::zeros(hidden),
            w_z: RealVector::zeros(hidden),
            b_f: RealVector::zeros(hidden),
            b_z: RealVector::zeros(hidden),
            o: RealMatrix::zeros(hidden, input),
            w_o: RealMatrix::zeros(hidden, hidden),
        }
    }

    /// Default initialization: matrices uniform in ±1/√fan-in, recurrent
    /// weight vectors uniform in ±1/√N, biases zero.
    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        let sx = fan_in_scale(input);
        let sh = fan_in_scale(hidden);
        ElstmParams {
            f: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            z: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            w_f: init_uniform_vector(rng, hidden, sh).expect("positive scale"),
            w_z: init_uniform_vector(rng, hidden, sh).expect("positive scale"),
            b_f: RealVector::zeros(hidden),
            b_z: RealVector::zeros(hidden),
            o: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            w_o: init_uniform(rng, hidden, hidden, sh).expect("positive scale"),
        }
    }

    /// Every block drawn uniformly from ±`scale`, biases included. Used by
    /// gradient checks so that no block is trivially zero.
    pub fn random(rng: &mut Rng, hidden: usize, input: usize, scale: f64) -> Self {
        let m = |rng: &mut Rng, r, c| init_uniform(rng, r, c, scale).expect("positive scale");
        let v = |rng: &mut Rng, n| init_uniform_vector(rng, n, scale).expect("positive scale");
        ElstmParams {
            f: m(rng, hidden, input),
            z: m(rng, hidden, input),
            w_f: v(rng, hidden),
            w_z: v(rng, hidden),
            b_f: v(rng, hidden),
            b_z: v(rng, hidden),
            o: m(rng, hidden, input),
            w_o: m(rng, hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.f.rows()
    }

    pub fn input(&self) -> usize {
        self.f.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.f.shape();
        let mats = [("z", &self.z, (n, d)), ("o", &self.o, (n, d)), ("w_o", &self.w_o, (n, n))];
        for (name, m, want) in mats {
            if m.shape() != want {
                return Err(shape_err("ElstmParams", format!("{name} {want:?}"), format!("{:?}", m.shape())));
            }
        }
        for (name, v) in [("w_f", &self.w_f), ("w_z", &self.w_z), ("b_f", &self.b_f), ("b_z", &self.b_z)] {
            if v.len() != n {
                return Err(shape_err("ElstmParams", format!("{name} len {n}"), v.len()));
            }
        }
        Ok(())
    }
}

/// Recurrent state of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElstmState {
    pub c: RealVector,
}

impl ElstmState {
    pub fn zeros(hidden: usize) -> Self {
        ElstmState { c: RealVector::zeros(hidden) }
    }
}

/// Activations of one step, kept for reverse-mode and RTRL updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCache {
    pub x: RealVector,
    pub f: RealVector,
    pub z: RealVector,
    pub c_prev: RealVector,
    pub c: RealVector,
    pub o: RealVector,
    /// Output-gate pre-activation `O x + W_o c`.
    pub g_o_pre: RealVector,
}

impl StepCache {
    pub fn h(&self) -> RealVector {
        RealVector::from_fn(self.c.len(), |i| self.o[i] * self.c[i])
    }

    /// Number of reals held by this cache entry.
    pub fn num_reals(&self) -> usize {
        self.x.len() + 6 * self.c.len()
    }
}

/// Forward tape: the initial state and every step's activations, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapeCache {
    pub c0: RealVector,
    pub steps: Vec<StepCache>,
}

impl TapeCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> &RealVector {
        self.steps.last().map(|s| &s.c).unwrap_or(&self.c0)
    }

    pub fn outputs(&self) -> Vec<RealVector> {
        self.steps.iter().map(StepCache::h).collect()
    }

    pub fn num_reals(&self) -> usize {
        self.c0.len() + self.steps.iter().map(StepCache::num_reals).sum::<usize>()
    }
}

/// Shared output-gate path `o = σ(O x + W_o c)`, `h = o ⊙ c`.
pub(crate) fn output_gate(o_w: &RealMatrix, w_o: &RealMatrix, x: &[f64], c: &[f64]) -> (RealVector, RealVector) {
    let n = c.len();
    let mut pre = RealVector::zeros(n);
    o_w.matvec_into(x, &mut pre);
    let mut rec = vec![0.0; n];
    w_o.matvec_into(c, &mut rec);
    pre.iter_mut().zip(&rec).for_each(|(p, r)| *p += r);
    let o = RealVector::from_fn(n, |i| sigmoid(pre[i]));
    (o, pre)
}

/// Backpropagate `dL/dh(t)` through the output gate. Accumulates the
/// gradients of `O` and `W_o` and returns `e(t) = ∂L(t)/∂c(t)`.
pub(crate) fn output_gate_backward(
    w_o: &RealMatrix,
    cache: &StepCache,
    dl_dh: &[f64],
    d_o: &mut RealMatrix,
    d_wo: &mut RealMatrix,
) -> RealVector {
    let n = cache.c.len();
    let mut e = RealVector::zeros(n);
    if dl_dh.iter().all(|&g| g == 0.0) {
        return e;
    }
    // cotangent of the output-gate pre-activation
    let a_o: Vec<f64> = (0..n).map(|i| dl_dh[i] * cache.c[i] * cache.o[i] * (1.0 - cache.o[i])).collect();
    d_o.add_outer(1.0, &a_o, &cache.x);
    d_wo.add_outer(1.0, &a_o, &cache.c);
    for i in 0..n {
        e[i] = dl_dh[i] * cache.o[i];
    }
    w_o.matvec_t_acc(&a_o, &mut e);
    e
}

/// One eLSTM step. Returns `(c(t), h(t), cache)`.
pub fn elstm_step(p: &ElstmParams, c_prev: &[f64], x: &[f64]) -> Result<(RealVector, RealVector, StepCache)> {
    let (n, d) = p.f.shape();
    check_len("elstm_step x", d, x.len())?;
    check_len("elstm_step c_prev", n, c_prev.len())?;

    let mut a_f = RealVector::zeros(n);
    let mut a_z = RealVector::zeros(n);
    p.f.matvec_into(x, &mut a_f);
    p.z.matvec_into(x, &mut a_z);
    let mut f = RealVector::zeros(n);
    let mut z = RealVector::zeros(n);
    let mut c = RealVector::zeros(n);
    for i in 0..n {
        f[i] = sigmoid(a_f[i] + p.w_f[i] * c_prev[i] + p.b_f[i]);
        z[i] = (a_z[i] + p.w_z[i] * c_prev[i] + p.b_z[i]).tanh();
        c[i] = f[i] * c_prev[i] + (1.0 - f[i]) * z[i];
    }
    let (o, g_o_pre) = output_gate(&p.o, &p.w_o, x, &c);
    let h = RealVector::from_fn(n, |i| o[i] * c[i]);
    if !h.is_finite() || !c.is_finite() {
        return Err(Error::Numeric("elstm_step activations".into()));
    }
    let cache =
        StepCache { x: RealVector::new(x.to_vec())?, f, z, c_prev: RealVector::new(c_prev.to_vec())?, c: c.clone(), o, g_o_pre };
    Ok((c, h, cache))
}

/// Run the cell over `xs` from `c0`, recording the tape.
pub fn elstm_forward(p: &ElstmParams, c0: &[f64], xs: &[RealVector]) -> Result<(Vec<RealVector>, TapeCache)> {
    if xs.is_empty() {
        return Err(Error::Contract("elstm_forward needs at least one input".into()));
    }
    let mut steps = Vec::with_capacity(xs.len());
    let mut hs = Vec::with_capacity(xs.len());
    let mut c = RealVector::new(c0.to_vec())?;
    for x in xs {
        let (c_next, h, cache) = elstm_step(p, &c, x)?;
        steps.push(cache);
        hs.push(h);
        c = c_next;
    }
    Ok((hs, TapeCache { c0: RealVector::new(c0.to_vec())?, steps }))
}

/// Reverse-mode gradients over a run of steps; the state entering the first
/// step is treated as a constant.
fn bptt_steps(p: &ElstmParams, steps: &[StepCache], dl_dh: &[RealVector], grads: &mut ElstmGrads) {
    let n = p.hidden();
    // cotangent reaching c(t) from step t+1
    let mut dc_next = vec![0.0; n];
    for (cache, g) in steps.iter().zip(dl_dh).rev() {
        let e = output_gate_backward(&p.w_o, cache, g, &mut grads.o, &mut grads.w_o);
        let mut a_f = vec![0.0; n];
        let mut a_z = vec![0.0; n];
        for i in 0..n {
            let dc = e[i] + dc_next[i];
            let (f, z, cp) = (cache.f[i], cache.z[i], cache.c_prev[i]);
            a_f[i] = dc * (cp - z) * f * (1.0 - f);
            a_z[i] = dc * (1.0 - f) * (1.0 - z * z);
            grads.w_f[i] += a_f[i] * cp;
            grads.w_z[i] += a_z[i] * cp;
            grads.b_f[i] += a_f[i];
            grads.b_z[i] += a_z[i];
            dc_next[i] = dc * f + a_f[i] * p.w_f[i] + a_z[i] * p.w_z[i];
        }
        grads.f.add_outer(1.0, &a_f, &cache.x);
        grads.z.add_outer(1.0, &a_z, &cache.x);
    }
}

/// Full (untruncated) BPTT gradients of `Σ_t L(t)` given `dL(t)/dh(t)`.
pub fn elstm_bptt(p: &ElstmParams, tape: &TapeCache, dl_dh: &[RealVector]) -> Result<ElstmGrads> {
    if dl_dh.len() != tape.len() {
        return Err(Error::Contract(format!("tape has {} steps but {} loss cotangents were given", tape.len(), dl_dh.len())));
    }
    let mut grads = ElstmGrads::zeros(p.hidden(), p.input());
    bptt_steps(p, &tape.steps, dl_dh, &mut grads);
    Ok(grads)
}

/// Truncated BPTT with span `span`: the tape is cut into consecutive
/// segments of at most `span` steps. The forward state is carried across
/// segment boundaries, but no gradient flows into the previous segment.
pub fn elstm_tbptt(p: &ElstmParams, tape: &TapeCache, dl_dh: &[RealVector], span: usize) -> Result<ElstmGrads> {
    if span == 0 {
        return Err(Error::Config("truncation span must be at least 1".into()));
    }
    if dl_dh.len() != tape.len() {
        return Err(Error::Contract(format!("tape has {} steps but {} loss cotangents were given", tape.len(), dl_dh.len())));
    }
    let mut grads = ElstmGrads::zeros(p.hidden(), p.input());
    for (steps, g) in tape.steps.chunks(span).zip(dl_dh.chunks(span)) {
        bptt_steps(p, steps, g, &mut grads);
    }
    Ok(grads)
}
