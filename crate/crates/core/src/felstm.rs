//! Fully recurrent LSTM (feLSTM) and the SnAp-1 diagonal RTRL approximation.
//!
//! The gates read the whole previous cell state through matrices:
//!
//! ```text
//! f(t) = σ(F x(t) + W_f c(t−1) + b_f)
//! z(t) = tanh(Z x(t) + W_z c(t−1) + b_z)
//! ```
//!
//! and everything else follows the eLSTM. SnAp-1 keeps only the entries
//! `∂c_i/∂θ_ij` of the influence, propagated with the diagonal of the
//! temporal Jacobian `ĉ_i = f_i + W_f[i,i] f̂_i + W_z[i,i] ẑ_i`. It is exact
//! when `W_f` and `W_z` are diagonal and biased otherwise.

use serde::{Deserialize, Serialize};

use crate::elstm::{output_gate, output_gate_backward, ElstmParams, StepCache, TapeCache};
use crate::error::{check_len, shape_err, Error, Result};
use crate::impl_param_blocks;
use crate::numeric::{fan_in_scale, init_uniform, init_uniform_vector, sigmoid, RealMatrix, RealVector, Rng};
use crate::params::ParamBlocks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FelstmParams {
    pub f: RealMatrix,
    pub z: RealMatrix,
    pub w_f: RealMatrix,
    pub w_z: RealMatrix,
    pub b_f: RealVector,
    pub b_z: RealVector,
    pub o: RealMatrix,
    pub w_o: RealMatrix,
}

impl_param_blocks!(FelstmParams { f, z, w_f, w_z, b_f, b_z, o, w_o });

pub type FelstmGrads = FelstmParams;

impl FelstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        FelstmParams {
            f: RealMatrix::zeros(hidden, input),
            z: RealMatrix::zeros(hidden, input),
            w_f: RealMatrix::zeros(hidden, hidden),
            w_z: RealMatrix::zeros(hidden, hidden),
            b_f: RealVector::zeros(hidden),
            b_z: RealVector::zeros(hidden),
            o: RealMatrix::zeros(hidden, input),
            w_o: RealMatrix::zeros(hidden, hidden),
        }
    }

    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        let (sx, sh) = (fan_in_scale(input), fan_in_scale(hidden));
        FelstmParams {
            f: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            z: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            w_f: init_uniform(rng, hidden, hidden, sh).expect("positive scale"),
            w_z: init_uniform(rng, hidden, hidden, sh).expect("positive scale"),
            b_f: RealVector::zeros(hidden),
            b_z: RealVector::zeros(hidden),
            o: init_uniform(rng, hidden, input, sx).expect("positive scale"),
            w_o: init_uniform(rng, hidden, hidden, sh).expect("positive scale"),
        }
    }

    pub fn random(rng: &mut Rng, hidden: usize, input: usize, scale: f64) -> Self {
        let m = |rng: &mut Rng, r, c| init_uniform(rng, r, c, scale).expect("positive scale");
        FelstmParams {
            f: m(rng, hidden, input),
            z: m(rng, hidden, input),
            w_f: m(rng, hidden, hidden),
            w_z: m(rng, hidden, hidden),
            b_f: init_uniform_vector(rng, hidden, scale).expect("positive scale"),
            b_z: init_uniform_vector(rng, hidden, scale).expect("positive scale"),
            o: m(rng, hidden, input),
            w_o: m(rng, hidden, hidden),
        }
    }

    /// The eLSTM `p` viewed as an feLSTM with diagonal recurrence.
    pub fn from_elstm(p: &ElstmParams) -> Self {
        FelstmParams {
            f: p.f.clone(),
            z: p.z.clone(),
            w_f: RealMatrix::diagonal(&p.w_f),
            w_z: RealMatrix::diagonal(&p.w_z),
            b_f: p.b_f.clone(),
            b_z: p.b_z.clone(),
            o: p.o.clone(),
            w_o: p.w_o.clone(),
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
        for (name, m, shape) in [
            ("Z", &self.z, (n, d)),
            ("W_f", &self.w_f, (n, n)),
            ("W_z", &self.w_z, (n, n)),
            ("O", &self.o, (n, d)),
            ("W_o", &self.w_o, (n, n)),
        ] {
            if m.shape() != shape {
                return Err(shape_err("FelstmParams", format!("{name} {shape:?}"), format!("{:?}", m.shape())));
            }
        }
        self.check_finite("FelstmParams")
    }
}

/// One feLSTM step. Returns `(c(t), h(t), cache)`.
pub fn felstm_step(p: &FelstmParams, c_prev: &[f64], x: &[f64]) -> Result<(RealVector, RealVector, StepCache)> {
    let (n, d) = p.f.shape();
    check_len("felstm_step x", d, x.len())?;
    check_len("felstm_step c_prev", n, c_prev.len())?;
    let mut a_f = vec![0.0; n];
    let mut a_z = vec![0.0; n];
    let mut r_f = vec![0.0; n];
    let mut r_z = vec![0.0; n];
    p.f.matvec_into(x, &mut a_f);
    p.z.matvec_into(x, &mut a_z);
    p.w_f.matvec_into(c_prev, &mut r_f);
    p.w_z.matvec_into(c_prev, &mut r_z);
    let f = RealVector::from_fn(n, |i| sigmoid(a_f[i] + r_f[i] + p.b_f[i]));
    let z = RealVector::from_fn(n, |i| (a_z[i] + r_z[i] + p.b_z[i]).tanh());
    let c = RealVector::from_fn(n, |i| f[i] * c_prev[i] + (1.0 - f[i]) * z[i]);
    let (o, g_o_pre) = output_gate(&p.o, &p.w_o, x, &c);
    let h = RealVector::from_fn(n, |i| o[i] * c[i]);
    if !h.is_finite() || !c.is_finite() {
        return Err(Error::Numeric("felstm_step activations".into()));
    }
    let cache =
        StepCache { x: RealVector::new(x.to_vec())?, f, z, c_prev: RealVector::new(c_prev.to_vec())?, c: c.clone(), o, g_o_pre };
    Ok((c, h, cache))
}

pub fn felstm_forward(p: &FelstmParams, c0: &[f64], xs: &[RealVector]) -> Result<(Vec<RealVector>, TapeCache)> {
    if xs.is_empty() {
        return Err(Error::Contract("felstm_forward needs at least one input".into()));
    }
    let mut steps = Vec::with_capacity(xs.len());
    let mut hs = Vec::with_capacity(xs.len());
    let mut c = RealVector::new(c0.to_vec())?;
    for x in xs {
        let (c_next, h, cache) = felstm_step(p, &c, x)?;
        steps.push(cache);
        hs.push(h);
        c = c_next;
    }
    Ok((hs, TapeCache { c0: RealVector::new(c0.to_vec())?, steps }))
}

fn bptt_steps(p: &FelstmParams, steps: &[StepCache], dl_dh: &[RealVector], grads: &mut FelstmGrads) {
    let n = p.hidden();
    let mut dc_next = vec![0.0; n];
    for (cache, g) in steps.iter().zip(dl_dh).rev() {
        let e = output_gate_backward(&p.w_o, cache, g, &mut grads.o, &mut grads.w_o);
        let mut a_f = vec![0.0; n];
        let mut a_z = vec![0.0; n];
        let mut dc_prev = vec![0.0; n];
        for i in 0..n {
            let dc = e[i] + dc_next[i];
            let (f, z, cp) = (cache.f[i], cache.z[i], cache.c_prev[i]);
            a_f[i] = dc * (cp - z) * f * (1.0 - f);
            a_z[i] = dc * (1.0 - f) * (1.0 - z * z);
            grads.b_f[i] += a_f[i];
            grads.b_z[i] += a_z[i];
            dc_prev[i] = dc * f;
        }
        p.w_f.matvec_t_acc(&a_f, &mut dc_prev);
        p.w_z.matvec_t_acc(&a_z, &mut dc_prev);
        grads.f.add_outer(1.0, &a_f, &cache.x);
        grads.z.add_outer(1.0, &a_z, &cache.x);
        grads.w_f.add_outer(1.0, &a_f, &cache.c_prev);
        grads.w_z.add_outer(1.0, &a_z, &cache.c_prev);
        dc_next = dc_prev;
    }
}

fn check_cotangents(tape: &TapeCache, dl_dh: &[RealVector]) -> Result<()> {
    if dl_dh.len() != tape.len() {
        return Err(Error::Contract(format!("tape has {} steps but {} loss cotangents were given", tape.len(), dl_dh.len())));
    }
    Ok(())
}

pub fn felstm_bptt(p: &FelstmParams, tape: &TapeCache, dl_dh: &[RealVector]) -> Result<FelstmGrads> {
    check_cotangents(tape, dl_dh)?;
    let mut grads = FelstmGrads::zeros(p.hidden(), p.input());
    bptt_steps(p, &tape.steps, dl_dh, &mut grads);
    Ok(grads)
}

/// Truncated BPTT over consecutive spans of at most `span` steps.
pub fn felstm_tbptt(p: &FelstmParams, tape: &TapeCache, dl_dh: &[RealVector], span: usize) -> Result<FelstmGrads> {
    if span == 0 {
        return Err(Error::Config("truncation span must be at least 1".into()));
    }
    check_cotangents(tape, dl_dh)?;
    let mut grads = FelstmGrads::zeros(p.hidden(), p.input());
    for (steps, g) in tape.steps.chunks(span).zip(dl_dh.chunks(span)) {
        bptt_steps(p, steps, g, &mut grads);
    }
    Ok(grads)
}

/// Approximate sensitivities; entry `[i, j]` stands for `∂c_i/∂θ_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapSensitivity {
    pub f_hat: RealMatrix,
    pub z_hat: RealMatrix,
    pub wf_hat: RealMatrix,
    pub wz_hat: RealMatrix,
    pub bf_hat: RealVector,
    pub bz_hat: RealVector,
}

impl_param_blocks!(SnapSensitivity { f_hat, z_hat, wf_hat, wz_hat, bf_hat, bz_hat });

impl SnapSensitivity {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        SnapSensitivity {
            f_hat: RealMatrix::zeros(hidden, input),
            z_hat: RealMatrix::zeros(hidden, input),
            wf_hat: RealMatrix::zeros(hidden, hidden),
            wz_hat: RealMatrix::zeros(hidden, hidden),
            bf_hat: RealVector::zeros(hidden),
            bz_hat: RealVector::zeros(hidden),
        }
    }

    /// `2ND + 2N² + 2N` reals.
    pub fn num_reals(&self) -> usize {
        self.num_params()
    }
}

pub fn snap1_step(sens: &mut SnapSensitivity, p: &FelstmParams, cache: &StepCache) -> Result<()> {
    let (n, d) = p.f.shape();
    if sens.f_hat.shape() != (n, d) || cache.x.len() != d || cache.c.len() != n {
        return Err(shape_err("snap1_step", format!("N={n}, D={d}"), format!("{:?}", sens.f_hat.shape())));
    }
    let mut f_hat = vec![0.0; n];
    let mut z_hat = vec![0.0; n];
    let mut c_hat = vec![0.0; n];
    for i in 0..n {
        let (f, z) = (cache.f[i], cache.z[i]);
        f_hat[i] = (cache.c_prev[i] - z) * f * (1.0 - f);
        z_hat[i] = (1.0 - f) * (1.0 - z * z);
        c_hat[i] = f + p.w_f[(i, i)] * f_hat[i] + p.w_z[(i, i)] * z_hat[i];
    }
    sens.f_hat.scale_rows(&c_hat);
    sens.f_hat.add_outer(1.0, &f_hat, &cache.x);
    sens.z_hat.scale_rows(&c_hat);
    sens.z_hat.add_outer(1.0, &z_hat, &cache.x);
    sens.wf_hat.scale_rows(&c_hat);
    sens.wf_hat.add_outer(1.0, &f_hat, &cache.c_prev);
    sens.wz_hat.scale_rows(&c_hat);
    sens.wz_hat.add_outer(1.0, &z_hat, &cache.c_prev);
    for i in 0..n {
        sens.bf_hat[i] = f_hat[i] + c_hat[i] * sens.bf_hat[i];
        sens.bz_hat[i] = z_hat[i] + c_hat[i] * sens.bz_hat[i];
    }
    sens.check_finite("snap1 sensitivity update")
}

/// Per-step gradient from the approximate sensitivities; the output path
/// is exact backprop. Returns `e(t)`.
pub fn snap1_grad(
    p: &FelstmParams,
    sens: &SnapSensitivity,
    cache: &StepCache,
    dl_dh: &[f64],
    grads: &mut FelstmGrads,
) -> Result<RealVector> {
    check_len("snap1_grad dL/dh", p.hidden(), dl_dh.len())?;
    let e = output_gate_backward(&p.w_o, cache, dl_dh, &mut grads.o, &mut grads.w_o);
    grads.f.add_row_scaled(&e, &sens.f_hat);
    grads.z.add_row_scaled(&e, &sens.z_hat);
    grads.w_f.add_row_scaled(&e, &sens.wf_hat);
    grads.w_z.add_row_scaled(&e, &sens.wz_hat);
    for i in 0..p.hidden() {
        grads.b_f[i] += e[i] * sens.bf_hat[i];
        grads.b_z[i] += e[i] * sens.bz_hat[i];
    }
    Ok(e)
}

/// Total SnAp-1 gradient over a sequence from `c(0) = 0`.
pub fn snap1_run(p: &FelstmParams, xs: &[RealVector], mut dl_dh: impl FnMut(usize, &[f64]) -> RealVector) -> Result<FelstmGrads> {
    let (n, d) = (p.hidden(), p.input());
    let mut sens = SnapSensitivity::zeros(n, d);
    let mut grads = FelstmGrads::zeros(n, d);
    let mut c = RealVector::zeros(n);
    for (t, x) in xs.iter().enumerate() {
        let (c_next, h, cache) = felstm_step(p, &c, x)?;
        snap1_step(&mut sens, p, &cache)?;
        snap1_grad(p, &sens, &cache, &dl_dh(t, &h), &mut grads)?;
        c = c_next;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elstm::{elstm_bptt, elstm_forward, elstm_step};
    use crate::finite_diff::central_difference;
    use crate::loss::{SquaredError, StepLoss};
    use crate::numeric::Rng;
    use crate::rtrl::RtrlStream;

    fn inputs(rng: &mut Rng, t: usize, d: usize) -> Vec<RealVector> {
        (0..t).map(|_| RealVector::from_fn(d, |_| rng.uniform(-1.0, 1.0))).collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    fn bptt_total(p: &FelstmParams, xs: &[RealVector], loss: &SquaredError) -> FelstmGrads {
        let (hs, tape) = felstm_forward(p, &vec![0.0; p.hidden()], xs).unwrap();
        let dl: Vec<_> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
        felstm_bptt(p, &tape, &dl).unwrap()
    }

    #[test]
    fn diagonal_recurrence_embeds_elstm() {
        let mut rng = Rng::seed_from_u64(1);
        let e = ElstmParams::random(&mut rng, 4, 3, 1.0);
        let mut zero_rec = e.clone();
        zero_rec.w_f.fill(0.0);
        zero_rec.w_z.fill(0.0);
        let xs = inputs(&mut rng, 12, 3);
        for ep in [&e, &zero_rec] {
            let fp = FelstmParams::from_elstm(ep);
            let (a, _) = elstm_forward(ep, &[0.0; 4], &xs).unwrap();
            let (b, _) = felstm_forward(&fp, &[0.0; 4], &xs).unwrap();
            for (ha, hb) in a.iter().zip(&b) {
                assert!(rel(ha, hb) < 1e-12);
            }
        }
    }

    #[test]
    fn step_matches_scalar_loop() {
        let mut rng = Rng::seed_from_u64(9);
        let (n, d) = (3, 2);
        let p = FelstmParams::random(&mut rng, n, d, 1.0);
        let c_prev: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (c, h, _) = felstm_step(&p, &c_prev, &x).unwrap();
        let mut c_ref = vec![0.0; n];
        for i in 0..n {
            let mut af = p.b_f[i];
            let mut az = p.b_z[i];
            for j in 0..d {
                af += p.f[(i, j)] * x[j];
                az += p.z[(i, j)] * x[j];
            }
            for m in 0..n {
                af += p.w_f[(i, m)] * c_prev[m];
                az += p.w_z[(i, m)] * c_prev[m];
            }
            let f = 1.0 / (1.0 + (-af).exp());
            c_ref[i] = f * c_prev[i] + (1.0 - f) * az.tanh();
            assert!((c[i] - c_ref[i]).abs() < 1e-14);
        }
        for i in 0..n {
            let mut ao = 0.0;
            for j in 0..d {
                ao += p.o[(i, j)] * x[j];
            }
            for m in 0..n {
                ao += p.w_o[(i, m)] * c_ref[m];
            }
            assert!((h[i] - c_ref[i] / (1.0 + (-ao).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(2);
        let p = FelstmParams::random(&mut rng, 4, 3, 1.0);
        let xs = inputs(&mut rng, 15, 3);
        let loss = SquaredError::random(&mut rng, 15, 4);
        let fd = central_difference(&p, 1e-5, |q| {
            let (hs, _) = felstm_forward(q, &[0.0; 4], &xs).unwrap();
            loss.total(hs.iter().map(|h| h.as_slice()))
        });
        assert!(rel(&fd.flatten(), &bptt_total(&p, &xs, &loss).flatten()) < 1e-4);
    }

    #[test]
    fn long_span_is_full_bptt() {
        let mut rng = Rng::seed_from_u64(3);
        let p = FelstmParams::random(&mut rng, 3, 2, 1.0);
        let xs = inputs(&mut rng, 10, 2);
        let loss = SquaredError::random(&mut rng, 10, 3);
        let (hs, tape) = felstm_forward(&p, &[0.0; 3], &xs).unwrap();
        let dl: Vec<_> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
        let full = felstm_bptt(&p, &tape, &dl).unwrap();
        let trunc = felstm_tbptt(&p, &tape, &dl, 10).unwrap();
        assert!(rel(&full.flatten(), &trunc.flatten()) <= 1e-12);
        assert!(matches!(felstm_tbptt(&p, &tape, &dl, 0), Err(Error::Config(_))));
    }

    #[test]
    fn diagonal_bptt_matches_elstm_bptt() {
        let mut rng = Rng::seed_from_u64(4);
        let e = ElstmParams::random(&mut rng, 4, 2, 1.0);
        let fp = FelstmParams::from_elstm(&e);
        let xs = inputs(&mut rng, 14, 2);
        let loss = SquaredError::random(&mut rng, 14, 4);
        let (hs, tape) = elstm_forward(&e, &[0.0; 4], &xs).unwrap();
        let dl: Vec<_> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
        let ge = elstm_bptt(&e, &tape, &dl).unwrap();
        let gf = bptt_total(&fp, &xs, &loss);
        let diag = |m: &RealMatrix| (0..4).map(|i| m[(i, i)]).collect::<Vec<_>>();
        assert!(rel(&diag(&gf.w_f), &ge.w_f) < 1e-12);
        assert!(rel(&diag(&gf.w_z), &ge.w_z) < 1e-12);
        for (a, b) in [(&gf.f, &ge.f), (&gf.z, &ge.z), (&gf.o, &ge.o), (&gf.w_o, &ge.w_o)] {
            assert!(rel(a.as_slice(), b.as_slice()) < 1e-12);
        }
        assert!(rel(&gf.b_f, &ge.b_f) < 1e-12);
    }

    #[test]
    fn snap_is_exact_rtrl_on_diagonal() {
        let mut rng = Rng::seed_from_u64(5);
        let (n, d) = (4, 3);
        let e = ElstmParams::random(&mut rng, n, d, 1.0);
        let fp = FelstmParams::from_elstm(&e);
        let mut stream = RtrlStream::new(n, d);
        let mut snap = SnapSensitivity::zeros(n, d);
        let mut c = RealVector::zeros(n);
        for x in inputs(&mut rng, 20, d) {
            stream.step(&e, &x).unwrap();
            let (c_next, _, cache) = felstm_step(&fp, &c, &x).unwrap();
            snap1_step(&mut snap, &fp, &cache).unwrap();
            c = c_next;
        }
        let s = &stream.sens;
        assert!(rel(snap.f_hat.as_slice(), s.f_hat.as_slice()) < 1e-12);
        assert!(rel(snap.z_hat.as_slice(), s.z_hat.as_slice()) < 1e-12);
        assert!(rel(&snap.bf_hat, &s.bf_hat) < 1e-12);
        assert!(rel(&snap.bz_hat, &s.bz_hat) < 1e-12);
        let diag = |m: &RealMatrix| (0..n).map(|i| m[(i, i)]).collect::<Vec<_>>();
        assert!(rel(&diag(&snap.wf_hat), &s.wf_hat) < 1e-12);
        assert!(rel(&diag(&snap.wz_hat), &s.wz_hat) < 1e-12);
    }

    #[test]
    fn snap_first_step_from_zero_parameters() {
        let p = FelstmParams::zeros(2, 3);
        let x = [1.0, -0.5, 0.25];
        let (_, _, cache) = felstm_step(&p, &[0.0; 2], &x).unwrap();
        let mut s = SnapSensitivity::zeros(2, 3);
        snap1_step(&mut s, &p, &cache).unwrap();
        assert_eq!(s.f_hat.max_abs(), 0.0);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(s.z_hat[(i, j)], 0.5 * x[j]);
            }
        }
    }

    #[test]
    fn snap_gradients_exact_on_diagonal() {
        for seed in 0..3 {
            let mut rng = Rng::seed_from_u64(60 + seed);
            let e = ElstmParams::random(&mut rng, 5, 3, 1.0);
            let fp = FelstmParams::from_elstm(&e);
            let xs = inputs(&mut rng, 25, 3);
            let loss = SquaredError::random(&mut rng, 25, 5);
            let sn = snap1_run(&fp, &xs, |t, h| loss.grad(t, h)).unwrap();
            let bp = bptt_total(&fp, &xs, &loss);
            for ((name, a), (_, b)) in sn.blocks().into_iter().zip(bp.blocks()) {
                assert!(rel(a, b) < 1e-9, "block {name}");
            }
        }
    }

    #[test]
    fn snap_deviates_with_dense_recurrence() {
        let mut rng = Rng::seed_from_u64(7);
        let p = FelstmParams::random(&mut rng, 5, 3, 1.0);
        let xs = inputs(&mut rng, 25, 3);
        let loss = SquaredError::random(&mut rng, 25, 5);
        let sn = snap1_run(&p, &xs, |t, h| loss.grad(t, h)).unwrap();
        let bp = bptt_total(&p, &xs, &loss);
        assert!(sn.first_non_finite().is_none());
        assert!(rel(&sn.flatten(), &bp.flatten()) > 1e-3);
        // The output path is exact backprop even so.
        assert!(rel(sn.o.as_slice(), bp.o.as_slice()) < 1e-12);
    }

    #[test]
    fn snap_memory_is_quadratic_at_most() {
        let s = SnapSensitivity::zeros(6, 4);
        assert_eq!(s.num_reals(), 2 * 6 * 4 + 2 * 36 + 2 * 6);
    }

    #[test]
    fn step_shapes_checked() {
        let p = FelstmParams::zeros(2, 2);
        assert!(matches!(felstm_step(&p, &[0.0; 3], &[0.0; 2]), Err(Error::Shape { .. })));
        let e = ElstmParams::zeros(2, 2);
        let (_, _, cache) = elstm_step(&e, &[0.0; 2], &[0.0; 2]).unwrap();
        let mut wrong = SnapSensitivity::zeros(3, 2);
        assert!(snap1_step(&mut wrong, &p, &cache).is_err());
    }
}
