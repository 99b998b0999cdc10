//! Exact real-time recurrent learning for the eLSTM.
//!
//! Because the recurrence is element-wise, `∂c_k(t)/∂F_ij` vanishes for
//! `k ≠ i` and the full sensitivity tensor collapses to one `N × D` matrix per
//! input weight matrix and one `N` vector per recurrent weight / bias vector.
//! Per step:
//!
//! ```text
//! f̂ = (c(t−1) − z) ⊙ f ⊙ (1 − f)      ẑ = (1 − f) ⊙ (1 − z²)
//! ĉ = f + w_f ⊙ f̂ + w_z ⊙ ẑ
//! F̂ ← f̂ ⊗ x + diag(ĉ) F̂              Ẑ ← ẑ ⊗ x + diag(ĉ) Ẑ
//! ŵ_f ← f̂ ⊙ c(t−1) + ĉ ⊙ ŵ_f          ŵ_z ← ẑ ⊙ c(t−1) + ĉ ⊙ ŵ_z
//! b̂_f ← f̂ + ĉ ⊙ b̂_f                   b̂_z ← ẑ + ĉ ⊙ b̂_z
//! ∂L(t)/∂F = diag(e(t)) F̂(t), and likewise for the other blocks
//! ```
//!
//! Sensitivities are updated before the gradient is read, so the gradient
//! at step `t` uses `F̂(t)`.

use serde::{Deserialize, Serialize};

use crate::elstm::{elstm_step, output_gate_backward, ElstmGrads, ElstmParams, StepCache};
use crate::error::{check_len, shape_err, Error, Result};
use crate::impl_param_blocks;
use crate::numeric::{RealMatrix, RealVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElstmSensitivity {
    pub f_hat: RealMatrix,
    pub z_hat: RealMatrix,
    pub wf_hat: RealVector,
    pub wz_hat: RealVector,
    pub bf_hat: RealVector,
    pub bz_hat: RealVector,
}

impl_param_blocks!(ElstmSensitivity { f_hat, z_hat, wf_hat, wz_hat, bf_hat, bz_hat });

/// Zero sensitivities for a stream that is just starting.
pub fn sens_init(hidden: usize, input: usize) -> ElstmSensitivity {
    ElstmSensitivity {
        f_hat: RealMatrix::zeros(hidden, input),
        z_hat: RealMatrix::zeros(hidden, input),
        wf_hat: RealVector::zeros(hidden),
        wz_hat: RealVector::zeros(hidden),
        bf_hat: RealVector::zeros(hidden),
        bz_hat: RealVector::zeros(hidden),
    }
}

impl ElstmSensitivity {
    pub fn hidden(&self) -> usize {
        self.f_hat.rows()
    }

    pub fn input(&self) -> usize {
        self.f_hat.cols()
    }

    /// `2ND + 4N`, independent of sequence length.
    pub fn num_reals(&self) -> usize {
        let (n, d) = self.f_hat.shape();
        2 * n * d + 4 * n
    }

    pub fn reset(&mut self) {
        use crate::params::ParamBlocks;
        self.fill_zero();
    }
}

/// Per-step intermediate vectors `f̂, ẑ, ĉ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RtrlScratch {
    pub f_hat: RealVector,
    pub z_hat: RealVector,
    pub c_hat: RealVector,
}

/// `e(t) = ∂L(t)/∂c(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSignal {
    pub e: RealVector,
}

pub fn rtrl_scratch(cache: &StepCache, p: &ElstmParams) -> Result<RtrlScratch> {
    let n = p.hidden();
    check_len("rtrl_scratch", n, cache.f.len())?;
    let mut f_hat = RealVector::zeros(n);
    let mut z_hat = RealVector::zeros(n);
    let mut c_hat = RealVector::zeros(n);
    for i in 0..n {
        let (f, z) = (cache.f[i], cache.z[i]);
        f_hat[i] = (cache.c_prev[i] - z) * f * (1.0 - f);
        z_hat[i] = (1.0 - f) * (1.0 - z * z);
        c_hat[i] = f + p.w_f[i] * f_hat[i] + p.w_z[i] * z_hat[i];
    }
    Ok(RtrlScratch { f_hat, z_hat, c_hat })
}

/// Advance the sensitivities by one step, in place.
pub fn sens_step(s: &mut ElstmSensitivity, scratch: &RtrlScratch, cache: &StepCache) -> Result<()> {
    let (n, d) = s.f_hat.shape();
    if cache.x.len() != d || cache.c.len() != n || scratch.c_hat.len() != n {
        return Err(shape_err("sens_step", format!("N={n}, D={d}"), format!("N={}, D={}", cache.c.len(), cache.x.len())));
    }
    let (fh, zh, ch) = (&scratch.f_hat, &scratch.z_hat, &scratch.c_hat);
    s.f_hat.scale_rows(ch);
    s.f_hat.add_outer(1.0, fh, &cache.x);
    s.z_hat.scale_rows(ch);
    s.z_hat.add_outer(1.0, zh, &cache.x);
    for i in 0..n {
        let cp = cache.c_prev[i];
        s.wf_hat[i] = fh[i] * cp + ch[i] * s.wf_hat[i];
        s.wz_hat[i] = zh[i] * cp + ch[i] * s.wz_hat[i];
        s.bf_hat[i] = fh[i] + ch[i] * s.bf_hat[i];
        s.bz_hat[i] = zh[i] + ch[i] * s.bz_hat[i];
    }
    use crate::params::ParamBlocks;
    s.check_finite("sensitivity update")
}

/// Recurrent-block gradient contributions `diag(e) F̂` etc., accumulated into `grads`.
pub fn accumulate_recurrent(s: &ElstmSensitivity, e: &ErrorSignal, grads: &mut ElstmGrads) -> Result<()> {
    let n = s.hidden();
    check_len("rtrl_grad error signal", n, e.e.len())?;
    grads.f.add_row_scaled(&e.e, &s.f_hat);
    grads.z.add_row_scaled(&e.e, &s.z_hat);
    for i in 0..n {
        let ei = e.e[i];
        grads.w_f[i] += ei * s.wf_hat[i];
        grads.w_z[i] += ei * s.wz_hat[i];
        grads.b_f[i] += ei * s.bf_hat[i];
        grads.b_z[i] += ei * s.bz_hat[i];
    }
    Ok(())
}

/// Error signal for `dL(t)/dh(t)`; the output-gate gradients (`O`, `W_o`)
/// are accumulated by ordinary backprop through the step's cache.
pub fn error_signal(p: &ElstmParams, cache: &StepCache, dl_dh: &[f64], grads: &mut ElstmGrads) -> Result<ErrorSignal> {
    check_len("error_signal dL/dh", p.hidden(), dl_dh.len())?;
    let e = output_gate_backward(&p.w_o, cache, dl_dh, &mut grads.o, &mut grads.w_o);
    Ok(ErrorSignal { e })
}

/// Full per-step gradient of `L(t)` accumulated into `grads`: recurrent
/// blocks from the sensitivities, output blocks from the local cache.
/// Returns the error signal that was used.
pub fn rtrl_grad(
    p: &ElstmParams,
    s: &ElstmSensitivity,
    cache: &StepCache,
    dl_dh: &[f64],
    grads: &mut ElstmGrads,
) -> Result<ErrorSignal> {
    let e = error_signal(p, cache, dl_dh, grads)?;
    if e.e.iter().any(|&v| v != 0.0) {
        accumulate_recurrent(s, &e, grads)?;
    }
    Ok(e)
}

/// What happens to the sensitivities when the weights are updated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StalenessMode {
    /// Keep accumulating across updates (sensitivities become slightly stale).
    #[default]
    Carry,
    /// Zero the sensitivities at every update boundary.
    Reset,
}

pub fn staleness_policy(s: &mut ElstmSensitivity, mode: StalenessMode) {
    if mode == StalenessMode::Reset {
        s.reset();
    }
}

/// One stream's online learner state: recurrent state plus sensitivities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtrlStream {
    pub c: RealVector,
    pub sens: ElstmSensitivity,
}

impl RtrlStream {
    pub fn new(hidden: usize, input: usize) -> Self {
        RtrlStream { c: RealVector::zeros(hidden), sens: sens_init(hidden, input) }
    }

    /// Episode boundary: zero both the state and the sensitivities.
    pub fn reset(&mut self) {
        self.c.fill(0.0);
        self.sens.reset();
    }

    /// Forward one step and update the sensitivities. Returns `h(t)` and the step cache.
    pub fn step(&mut self, p: &ElstmParams, x: &[f64]) -> Result<(RealVector, StepCache)> {
        if self.sens.hidden() != p.hidden() || self.sens.input() != p.input() {
            return Err(Error::Contract("stream shape does not match parameters".into()));
        }
        let (c, h, cache) = elstm_step(p, &self.c, x)?;
        let scratch = rtrl_scratch(&cache, p)?;
        sens_step(&mut self.sens, &scratch, &cache)?;
        self.c = c;
        Ok((h, cache))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elstm::{elstm_bptt, elstm_forward};
    use crate::loss::{SquaredError, StepLoss};
    use crate::numeric::Rng;
    use crate::params::ParamBlocks;

    fn random_inputs(rng: &mut Rng, t: usize, d: usize) -> Vec<RealVector> {
        (0..t).map(|_| RealVector::from_fn(d, |_| rng.uniform(-1.0, 1.0))).collect()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    fn rtrl_total(p: &ElstmParams, xs: &[RealVector], loss: &SquaredError) -> ElstmGrads {
        let mut stream = RtrlStream::new(p.hidden(), p.input());
        let mut g = ElstmGrads::zeros(p.hidden(), p.input());
        for (t, x) in xs.iter().enumerate() {
            let (h, cache) = stream.step(p, x).unwrap();
            rtrl_grad(p, &stream.sens, &cache, &loss.grad(t, &h), &mut g).unwrap();
        }
        g
    }

    #[test]
    fn init_is_zero() {
        let s = sens_init(2, 3);
        assert_eq!(s.f_hat.shape(), (2, 3));
        assert_eq!(s.global_norm(), 0.0);
        let p = ElstmParams::zeros(2, 3);
        let mut g = ElstmGrads::zeros(2, 3);
        let e = ErrorSignal { e: RealVector::new(vec![1.5, -2.0]).unwrap() };
        accumulate_recurrent(&s, &e, &mut g).unwrap();
        assert_eq!(g.global_norm(), 0.0);
        assert_eq!(p.num_params(), g.num_params());
    }

    #[test]
    fn scratch_zero_parameters() {
        let mut rng = Rng::seed_from_u64(0);
        let p = ElstmParams::zeros(3, 2);
        let x = random_inputs(&mut rng, 1, 2);
        let (_, _, cache) = elstm_step(&p, &[0.0; 3], &x[0]).unwrap();
        let s = rtrl_scratch(&cache, &p).unwrap();
        assert_eq!(s.f_hat.as_slice(), &[0.0; 3]);
        assert_eq!(s.z_hat.as_slice(), &[0.5; 3]);
        assert_eq!(s.c_hat.as_slice(), &[0.5; 3]);
    }

    #[test]
    fn scratch_saturated_forget_gate_is_pure_carry() {
        let mut p = ElstmParams::zeros(2, 1);
        p.b_f.fill(40.0);
        p.w_f.fill(0.7);
        p.w_z.fill(-0.4);
        let (_, _, cache) = elstm_step(&p, &[0.3, -0.6], &[1.0]).unwrap();
        let s = rtrl_scratch(&cache, &p).unwrap();
        for i in 0..2 {
            assert!(s.f_hat[i].abs() < 1e-15);
            assert!(s.z_hat[i].abs() < 1e-15);
            assert!((s.c_hat[i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scratch_matches_coordinate_loop() {
        let mut rng = Rng::seed_from_u64(21);
        let p = ElstmParams::random(&mut rng, 6, 3, 1.2);
        let c_prev: Vec<f64> = (0..6).map(|_| rng.uniform(-0.9, 0.9)).collect();
        let x = random_inputs(&mut rng, 1, 3);
        let (_, _, cache) = elstm_step(&p, &c_prev, &x[0]).unwrap();
        let s = rtrl_scratch(&cache, &p).unwrap();
        for i in 0..6 {
            // Recompute the gate derivatives from the pre-activations.
            let mut af = p.b_f[i] + p.w_f[i] * c_prev[i];
            let mut az = p.b_z[i] + p.w_z[i] * c_prev[i];
            for j in 0..3 {
                af += p.f[(i, j)] * x[0][j];
                az += p.z[(i, j)] * x[0][j];
            }
            let f = 1.0 / (1.0 + (-af).exp());
            let z = az.tanh();
            let fprime = f * (1.0 - f);
            let zprime = 1.0 - z * z;
            let dc_dcprev = f + (c_prev[i] - z) * fprime * p.w_f[i] + (1.0 - f) * zprime * p.w_z[i];
            assert!((s.f_hat[i] - (c_prev[i] - z) * fprime).abs() < 1e-14);
            assert!((s.z_hat[i] - (1.0 - f) * zprime).abs() < 1e-14);
            assert!((s.c_hat[i] - dc_dcprev).abs() < 1e-14);
        }
    }

    #[test]
    fn first_step_from_zero_parameters() {
        let p = ElstmParams::zeros(2, 3);
        let x = [0.2, -1.0, 0.5];
        let mut stream = RtrlStream::new(2, 3);
        stream.step(&p, &x).unwrap();
        assert_eq!(stream.sens.f_hat.max_abs(), 0.0);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(stream.sens.z_hat[(i, j)], 0.5 * x[j]);
            }
        }
        assert_eq!(stream.sens.bz_hat.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_carry_leaves_only_immediate_terms() {
        let mut rng = Rng::seed_from_u64(3);
        let p = ElstmParams::random(&mut rng, 3, 2, 1.0);
        let xs = random_inputs(&mut rng, 4, 2);
        let mut s = sens_init(3, 2);
        let mut c = vec![0.0; 3];
        for x in &xs {
            let (c_next, _, cache) = elstm_step(&p, &c, x).unwrap();
            let mut scratch = rtrl_scratch(&cache, &p).unwrap();
            scratch.c_hat.fill(0.0);
            sens_step(&mut s, &scratch, &cache).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert_eq!(s.f_hat[(i, j)], scratch.f_hat[i] * x[j]);
                    assert_eq!(s.z_hat[(i, j)], scratch.z_hat[i] * x[j]);
                }
                assert_eq!(s.wf_hat[i], scratch.f_hat[i] * cache.c_prev[i]);
                assert_eq!(s.bz_hat[i], scratch.z_hat[i]);
            }
            c = c_next.into_vec();
        }
    }

    #[test]
    fn sensitivities_match_dense_tensor_recursion() {
        // Oracle: carry the full dense Jacobian dc(t)/dθ (N × P) with a dense
        // temporal Jacobian, never assuming the element-wise sparsity.
        let (n, d, steps) = (4, 3, 30);
        let mut rng = Rng::seed_from_u64(17);
        let p = ElstmParams::random(&mut rng, n, d, 1.0);
        let xs = random_inputs(&mut rng, steps, d);
        // parameter columns: F (n·d), Z (n·d), w_f, w_z, b_f, b_z (n each)
        let cols = 2 * n * d + 4 * n;
        let mut dense = vec![vec![0.0; cols]; n];
        let mut stream = RtrlStream::new(n, d);
        for x in &xs {
            let (_, cache) = stream.step(&p, x).unwrap();
            let mut jac = vec![vec![0.0; n]; n];
            let mut imm = vec![vec![0.0; cols]; n];
            for k in 0..n {
                let (f, z, cp) = (cache.f[k], cache.z[k], cache.c_prev[k]);
                let df = f * (1.0 - f) * (cp - z); // ∂c_k/∂a_f,k
                let dz = (1.0 - f) * (1.0 - z * z); // ∂c_k/∂a_z,k
                for m in 0..n {
                    let rec_f = if k == m { p.w_f[k] } else { 0.0 };
                    let rec_z = if k == m { p.w_z[k] } else { 0.0 };
                    jac[k][m] = if k == m { f } else { 0.0 } + df * rec_f + dz * rec_z;
                }
                for i in 0..n {
                    let hit = if k == i { 1.0 } else { 0.0 };
                    for j in 0..d {
                        imm[k][i * d + j] = df * x[j] * hit;
                        imm[k][n * d + i * d + j] = dz * x[j] * hit;
                    }
                    imm[k][2 * n * d + i] = df * cp * hit;
                    imm[k][2 * n * d + n + i] = dz * cp * hit;
                    imm[k][2 * n * d + 2 * n + i] = df * hit;
                    imm[k][2 * n * d + 3 * n + i] = dz * hit;
                }
            }
            let mut next = imm;
            for k in 0..n {
                for m in 0..n {
                    if jac[k][m] != 0.0 {
                        for q in 0..cols {
                            next[k][q] += jac[k][m] * dense[m][q];
                        }
                    }
                }
            }
            dense = next;
        }
        let s = &stream.sens;
        for k in 0..n {
            for i in 0..n {
                for j in 0..d {
                    let (df, dz) = (dense[k][i * d + j], dense[k][n * d + i * d + j]);
                    if k == i {
                        assert!((df - s.f_hat[(i, j)]).abs() < 1e-12);
                        assert!((dz - s.z_hat[(i, j)]).abs() < 1e-12);
                    } else {
                        assert_eq!(df, 0.0);
                        assert_eq!(dz, 0.0);
                    }
                }
                let vec_blocks = [&s.wf_hat, &s.wz_hat, &s.bf_hat, &s.bz_hat];
                for (b, block) in vec_blocks.iter().enumerate() {
                    let v = dense[k][2 * n * d + b * n + i];
                    if k == i {
                        assert!((v - block[i]).abs() < 1e-12);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_recurrent_gradients() {
        let mut rng = Rng::seed_from_u64(4);
        let p = ElstmParams::random(&mut rng, 3, 2, 1.0);
        let mut stream = RtrlStream::new(3, 2);
        for x in random_inputs(&mut rng, 5, 2) {
            stream.step(&p, &x).unwrap();
        }
        let mut g = ElstmGrads::zeros(3, 2);
        let e = ErrorSignal { e: RealVector::zeros(3) };
        accumulate_recurrent(&stream.sens, &e, &mut g).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn scalar_gradient_is_error_times_sensitivity() {
        let mut rng = Rng::seed_from_u64(5);
        let p = ElstmParams::random(&mut rng, 1, 3, 1.0);
        let mut stream = RtrlStream::new(1, 3);
        for x in random_inputs(&mut rng, 6, 3) {
            stream.step(&p, &x).unwrap();
        }
        let mut g = ElstmGrads::zeros(1, 3);
        let e = ErrorSignal { e: RealVector::filled(1, -0.37) };
        accumulate_recurrent(&stream.sens, &e, &mut g).unwrap();
        for j in 0..3 {
            assert_eq!(g.f[(0, j)], -0.37 * stream.sens.f_hat[(0, j)]);
        }
    }

    #[test]
    fn summed_rtrl_equals_bptt() {
        for seed in 0..4 {
            let mut rng = Rng::seed_from_u64(100 + seed);
            let (n, d, t) = (5, 3, 40);
            let p = ElstmParams::random(&mut rng, n, d, 1.0);
            let xs = random_inputs(&mut rng, t, d);
            let loss = SquaredError::random(&mut rng, t, n);
            let rt = rtrl_total(&p, &xs, &loss);
            let (hs, tape) = elstm_forward(&p, &vec![0.0; n], &xs).unwrap();
            let dl: Vec<_> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
            let bp = elstm_bptt(&p, &tape, &dl).unwrap();
            for ((name, a), (_, b)) in rt.blocks().into_iter().zip(bp.blocks()) {
                assert!(max_rel(a, b) < 1e-12, "block {name}");
            }
        }
    }

    #[test]
    fn online_gradient_matches_bptt_on_prefix() {
        let mut rng = Rng::seed_from_u64(31);
        let (n, d, t) = (4, 2, 12);
        let p = ElstmParams::random(&mut rng, n, d, 1.0);
        let xs = random_inputs(&mut rng, t, d);
        let loss = SquaredError::random(&mut rng, t, n);
        let mut stream = RtrlStream::new(n, d);
        for step in 0..t {
            let (h, cache) = stream.step(&p, &xs[step]).unwrap();
            let mut online = ElstmGrads::zeros(n, d);
            rtrl_grad(&p, &stream.sens, &cache, &loss.grad(step, &h), &mut online).unwrap();

            let (hs, tape) = elstm_forward(&p, &vec![0.0; n], &xs[..=step]).unwrap();
            let mut dl = vec![RealVector::zeros(n); step + 1];
            dl[step] = loss.grad(step, &hs[step]);
            let prefix = elstm_bptt(&p, &tape, &dl).unwrap();
            assert!(max_rel(&online.flatten(), &prefix.flatten()) < 1e-12, "step {step}");
        }
    }

    #[test]
    fn staleness_modes() {
        let mut rng = Rng::seed_from_u64(6);
        let p = ElstmParams::random(&mut rng, 3, 2, 1.0);
        let mut stream = RtrlStream::new(3, 2);
        for x in random_inputs(&mut rng, 4, 2) {
            stream.step(&p, &x).unwrap();
        }
        let mut carried = stream.sens.clone();
        staleness_policy(&mut carried, StalenessMode::Carry);
        assert_eq!(carried, stream.sens);
        let mut reset = stream.sens.clone();
        staleness_policy(&mut reset, StalenessMode::Reset);
        assert_eq!(reset, sens_init(3, 2));
        assert_eq!(StalenessMode::default(), StalenessMode::Carry);
    }

    #[test]
    fn carry_and_reset_agree_only_with_zero_sensitivities_at_boundary() {
        let mut rng = Rng::seed_from_u64(7);
        let (n, d) = (3, 2);
        let p = ElstmParams::random(&mut rng, n, d, 1.0);
        let xs = random_inputs(&mut rng, 10, d);
        let loss = SquaredError::random(&mut rng, 10, n);
        // Learning rate zero: parameters never change, the boundary only
        // decides whether the sensitivities survive.
        let run = |boundary: usize, mode: StalenessMode| {
            let mut stream = RtrlStream::new(n, d);
            let mut g = ElstmGrads::zeros(n, d);
            for (t, x) in xs.iter().enumerate() {
                if t == boundary {
                    staleness_policy(&mut stream.sens, mode);
                }
                let (h, cache) = stream.step(&p, x).unwrap();
                if t >= boundary {
                    rtrl_grad(&p, &stream.sens, &cache, &loss.grad(t, &h), &mut g).unwrap();
                }
            }
            g
        };
        let a = run(5, StalenessMode::Carry);
        let b = run(5, StalenessMode::Reset);
        assert!(max_rel(&a.flatten(), &b.flatten()) > 1e-6);
        assert_eq!(run(0, StalenessMode::Carry), run(0, StalenessMode::Reset));
    }

    #[test]
    fn sensitivity_memory_is_constant() {
        for (n, d) in [(1, 1), (4, 3), (16, 8)] {
            let mut s = sens_init(n, d);
            assert_eq!(s.num_reals(), 2 * n * d + 4 * n);
            assert_eq!(s.num_params(), s.num_reals());
            s.reset();
            assert_eq!(s.num_params(), 2 * n * d + 4 * n);
        }
    }

    #[test]
    fn sens_step_flags_non_finite_block() {
        let p = ElstmParams::zeros(2, 1);
        let (_, _, cache) = elstm_step(&p, &[0.0; 2], &[1.0]).unwrap();
        let mut scratch = rtrl_scratch(&cache, &p).unwrap();
        scratch.f_hat[0] = f64::INFINITY;
        let mut s = sens_init(2, 1);
        match sens_step(&mut s, &scratch, &cache) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("f_hat")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
