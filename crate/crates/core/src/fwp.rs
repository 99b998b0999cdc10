//! One-layer linear fast weight programmer and its exact RTRL.
//!
//! ```text
//! k, v, q = K x(t), V x(t), Q x(t)
//! W(t) = W(t−1) + v(t) ⊗ k(t)          W(0) = 0
//! y(t) = W(t) σ(q(t))
//! ```
//!
//! `∂W_li(t)/∂K_ij = Σ_τ v_l(τ) x_j(τ)` does not depend on `i` and every
//! other entry vanishes, so two `N × D` matrices carry the full sensitivity:
//!
//! ```text
//! K̂(t) = K̂(t−1) + v(t) ⊗ x(t)          ∂L(t)/∂K = E(t)ᵀ K̂(t)
//! V̂(t) = V̂(t−1) + k(t) ⊗ x(t)          ∂L(t)/∂V = E(t) V̂(t)
//! ```
//!
//! with `E_li(t) = ∂L(t)/∂W_li(t)`. The query has no recurrence and is
//! handled by ordinary backprop. The key must stay linear for this to hold.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, shape_err, Error, Result};
use crate::impl_param_blocks;
use crate::numeric::{fan_in_scale, init_uniform, sigmoid, RealMatrix, RealVector, Rng};
use crate::params::ParamBlocks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwpParams {
    pub k: RealMatrix,
    pub v: RealMatrix,
    pub q: RealMatrix,
}

impl_param_blocks!(FwpParams { k, v, q });

pub type FwpGrads = FwpParams;

impl FwpParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        FwpParams {
            k: RealMatrix::zeros(hidden, input),
            v: RealMatrix::zeros(hidden, input),
            q: RealMatrix::zeros(hidden, input),
        }
    }

    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        Self::random(rng, hidden, input, fan_in_scale(input))
    }

    pub fn random(rng: &mut Rng, hidden: usize, input: usize, scale: f64) -> Self {
        FwpParams {
            k: init_uniform(rng, hidden, input, scale).expect("positive scale"),
            v: init_uniform(rng, hidden, input, scale).expect("positive scale"),
            q: init_uniform(rng, hidden, input, scale).expect("positive scale"),
        }
    }

    pub fn hidden(&self) -> usize {
        self.k.rows()
    }

    pub fn input(&self) -> usize {
        self.k.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.k.shape();
        for (name, m) in [("V", &self.v), ("Q", &self.q)] {
            if m.shape() != shape {
                return Err(shape_err("FwpParams", format!("{name} {shape:?}"), format!("{:?}", m.shape())));
            }
        }
        self.check_finite("FwpParams")
    }
}

/// The fast weight matrix `W(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwpState {
    pub w: RealMatrix,
}

impl FwpState {
    pub fn zeros(hidden: usize) -> Self {
        FwpState { w: RealMatrix::zeros(hidden, hidden) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwpStepCache {
    pub x: RealVector,
    pub k: RealVector,
    pub v: RealVector,
    pub q: RealVector,
    pub sq: RealVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwpSensitivity {
    pub k_hat: RealMatrix,
    pub v_hat: RealMatrix,
}

impl_param_blocks!(FwpSensitivity { k_hat, v_hat });

impl FwpSensitivity {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        FwpSensitivity { k_hat: RealMatrix::zeros(hidden, input), v_hat: RealMatrix::zeros(hidden, input) }
    }

    /// `2ND` reals.
    pub fn num_reals(&self) -> usize {
        self.num_params()
    }
}

/// `E(t)` plus the output cotangent it was built from (needed for the query path).
#[derive(Clone, Debug, PartialEq)]
pub struct FwpErrorMatrix {
    pub e: RealMatrix,
    pub dl_dy: RealVector,
}

/// `E = dL/dy ⊗ σ(q)`.
pub fn fwp_error(cache: &FwpStepCache, dl_dy: &[f64]) -> Result<FwpErrorMatrix> {
    check_len("fwp_error dL/dy", cache.k.len(), dl_dy.len())?;
    let mut e = RealMatrix::zeros(dl_dy.len(), cache.sq.len());
    e.add_outer(1.0, dl_dy, &cache.sq);
    Ok(FwpErrorMatrix { e, dl_dy: RealVector::new(dl_dy.to_vec())? })
}

/// One step: updates `state` to `W(t)` and returns `y(t)` with the cache.
pub fn fwp_step(p: &FwpParams, state: &mut FwpState, x: &[f64]) -> Result<(RealVector, FwpStepCache)> {
    let n = p.hidden();
    check_len("fwp_step x", p.input(), x.len())?;
    if state.w.shape() != (n, n) {
        return Err(shape_err("fwp_step state", format!("{n}x{n}"), format!("{:?}", state.w.shape())));
    }
    let mut k = RealVector::zeros(n);
    let mut v = RealVector::zeros(n);
    let mut q = RealVector::zeros(n);
    p.k.matvec_into(x, &mut k);
    p.v.matvec_into(x, &mut v);
    p.q.matvec_into(x, &mut q);
    state.w.add_outer(1.0, &v, &k);
    let sq = RealVector::from_fn(n, |i| sigmoid(q[i]));
    let mut y = RealVector::zeros(n);
    state.w.matvec_into(&sq, &mut y);
    if !y.is_finite() || !state.w.is_finite() {
        return Err(Error::Numeric("fwp_step".into()));
    }
    let cache = FwpStepCache { x: RealVector::new(x.to_vec())?, k, v, q, sq };
    Ok((y, cache))
}

pub fn fwp_rtrl_step(sens: &mut FwpSensitivity, cache: &FwpStepCache) -> Result<()> {
    if sens.k_hat.shape() != (cache.v.len(), cache.x.len()) {
        return Err(shape_err(
            "fwp_rtrl_step",
            format!("{:?}", sens.k_hat.shape()),
            format!("({}, {})", cache.v.len(), cache.x.len()),
        ));
    }
    sens.k_hat.add_outer(1.0, &cache.v, &cache.x);
    sens.v_hat.add_outer(1.0, &cache.k, &cache.x);
    Ok(())
}

/// Per-step gradient of `L(t)`; `state` must hold `W(t)`.
pub fn fwp_rtrl_grad(
    sens: &FwpSensitivity,
    err: &FwpErrorMatrix,
    state: &FwpState,
    cache: &FwpStepCache,
    grads: &mut FwpGrads,
) -> Result<()> {
    let n = sens.k_hat.rows();
    if err.e.shape() != (n, n) {
        return Err(Error::Contract("error matrix does not match the step".into()));
    }
    let gk = err.e.transpose().matmul(&sens.k_hat)?;
    let gv = err.e.matmul(&sens.v_hat)?;
    grads.k.add_row_scaled(&vec![1.0; n], &gk);
    grads.v.add_row_scaled(&vec![1.0; n], &gv);
    let mut dq = vec![0.0; n];
    state.w.matvec_t_acc(&err.dl_dy, &mut dq);
    for i in 0..n {
        dq[i] *= cache.sq[i] * (1.0 - cache.sq[i]);
    }
    grads.q.add_outer(1.0, &dq, &cache.x);
    Ok(())
}

/// Forward tape for reverse mode: each step's cache and `W(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FwpTape {
    pub steps: Vec<(FwpStepCache, RealMatrix)>,
}

pub fn fwp_forward(p: &FwpParams, xs: &[RealVector]) -> Result<(Vec<RealVector>, FwpTape)> {
    if xs.is_empty() {
        return Err(Error::Contract("fwp_forward needs at least one input".into()));
    }
    let mut state = FwpState::zeros(p.hidden());
    let mut ys = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let (y, cache) = fwp_step(p, &mut state, x)?;
        ys.push(y);
        steps.push((cache, state.w.clone()));
    }
    Ok((ys, FwpTape { steps }))
}

/// Reverse mode: the cotangent of `W(t)` is `Σ_{τ≥t} E(τ)`.
pub fn fwp_bptt(p: &FwpParams, tape: &FwpTape, dl_dy: &[RealVector]) -> Result<FwpGrads> {
    if dl_dy.len() != tape.steps.len() {
        return Err(Error::Contract(format!(
            "tape has {} steps but {} loss cotangents were given",
            tape.steps.len(),
            dl_dy.len()
        )));
    }
    let n = p.hidden();
    let mut grads = FwpGrads::zeros(n, p.input());
    let mut g_w = RealMatrix::zeros(n, n);
    for ((cache, w), g) in tape.steps.iter().zip(dl_dy).rev() {
        g_w.add_outer(1.0, g, &cache.sq);
        let mut dq = vec![0.0; n];
        w.matvec_t_acc(g, &mut dq);
        for i in 0..n {
            dq[i] *= cache.sq[i] * (1.0 - cache.sq[i]);
        }
        grads.q.add_outer(1.0, &dq, &cache.x);
        // W(t) = W(t−1) + v ⊗ k
        let mut dv = vec![0.0; n];
        g_w.matvec_into(&cache.k, &mut dv);
        let mut dk = vec![0.0; n];
        g_w.matvec_t_acc(&cache.v, &mut dk);
        grads.k.add_outer(1.0, &dk, &cache.x);
        grads.v.add_outer(1.0, &dv, &cache.x);
    }
    Ok(grads)
}

/// Total RTRL gradient of `Σ_t L(t)` from the zero state.
pub fn fwp_rtrl(p: &FwpParams, xs: &[RealVector], mut dl_dy: impl FnMut(usize, &[f64]) -> RealVector) -> Result<FwpGrads> {
    let (n, d) = (p.hidden(), p.input());
    let mut state = FwpState::zeros(n);
    let mut sens = FwpSensitivity::zeros(n, d);
    let mut grads = FwpGrads::zeros(n, d);
    for (t, x) in xs.iter().enumerate() {
        let (y, cache) = fwp_step(p, &mut state, x)?;
        fwp_rtrl_step(&mut sens, &cache)?;
        let err = fwp_error(&cache, &dl_dy(t, &y))?;
        fwp_rtrl_grad(&sens, &err, &state, &cache, &mut grads)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::central_difference;
    use crate::loss::{SquaredError, StepLoss};
    use crate::numeric::Rng;

    fn inputs(rng: &mut Rng, t: usize, d: usize) -> Vec<RealVector> {
        (0..t).map(|_| RealVector::from_fn(d, |_| rng.uniform(-1.0, 1.0))).collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    fn bptt_total(p: &FwpParams, xs: &[RealVector], loss: &SquaredError) -> FwpGrads {
        let (ys, tape) = fwp_forward(p, xs).unwrap();
        let dl: Vec<_> = ys.iter().enumerate().map(|(t, y)| loss.grad(t, y)).collect();
        fwp_bptt(p, &tape, &dl).unwrap()
    }

    #[test]
    fn zero_parameters_stay_zero() {
        let p = FwpParams::zeros(3, 2);
        let mut state = FwpState::zeros(3);
        let (y, cache) = fwp_step(&p, &mut state, &[1.0, -1.0]).unwrap();
        assert_eq!(cache.k.max_abs() + cache.v.max_abs() + cache.q.max_abs(), 0.0);
        assert_eq!(state.w.max_abs(), 0.0);
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut rng = Rng::seed_from_u64(1);
        let mut p = FwpParams::random(&mut rng, 3, 2, 1.0);
        p.v.fill(0.0);
        let mut state = FwpState::zeros(3);
        let (y, _) = fwp_step(&p, &mut state, &[0.3, 0.8]).unwrap();
        assert_eq!(state.w.max_abs(), 0.0);
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = Rng::seed_from_u64(5);
        let (n, d) = (3, 4);
        let p = FwpParams::random(&mut rng, n, d, 1.0);
        let xs = inputs(&mut rng, 3, d);
        let (ys, _) = fwp_forward(&p, &xs).unwrap();
        let mut w = vec![vec![0.0; n]; n];
        for (t, x) in xs.iter().enumerate() {
            let lin = |m: &RealMatrix, i: usize| (0..d).map(|j| m[(i, j)] * x[j]).sum::<f64>();
            let k: Vec<f64> = (0..n).map(|i| lin(&p.k, i)).collect();
            let v: Vec<f64> = (0..n).map(|i| lin(&p.v, i)).collect();
            let q: Vec<f64> = (0..n).map(|i| lin(&p.q, i)).collect();
            for l in 0..n {
                for i in 0..n {
                    w[l][i] += v[l] * k[i];
                }
            }
            for l in 0..n {
                let y: f64 = (0..n).map(|i| w[l][i] / (1.0 + (-q[i]).exp())).sum();
                assert!((ys[t][l] - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn fast_weights_telescope() {
        let mut rng = Rng::seed_from_u64(2);
        let p = FwpParams::random(&mut rng, 4, 3, 1.0);
        let xs = inputs(&mut rng, 9, 3);
        let (_, tape) = fwp_forward(&p, &xs).unwrap();
        let mut sum = RealMatrix::zeros(4, 4);
        for (cache, w) in &tape.steps {
            sum.add_outer(1.0, &cache.v, &cache.k);
            assert!(rel(sum.as_slice(), w.as_slice()) < 1e-15);
        }
    }

    #[test]
    fn first_sensitivity_step_and_zero_values() {
        let mut rng = Rng::seed_from_u64(3);
        let p = FwpParams::random(&mut rng, 3, 2, 1.0);
        let x = [0.6, -0.2];
        let mut state = FwpState::zeros(3);
        let (_, cache) = fwp_step(&p, &mut state, &x).unwrap();
        let mut sens = FwpSensitivity::zeros(3, 2);
        fwp_rtrl_step(&mut sens, &cache).unwrap();
        for l in 0..3 {
            for j in 0..2 {
                assert_eq!(sens.k_hat[(l, j)], cache.v[l] * x[j]);
            }
        }

        let mut p0 = p.clone();
        p0.v.fill(0.0);
        let mut state = FwpState::zeros(3);
        let mut sens = FwpSensitivity::zeros(3, 2);
        for x in inputs(&mut rng, 6, 2) {
            let (_, cache) = fwp_step(&p0, &mut state, &x).unwrap();
            fwp_rtrl_step(&mut sens, &cache).unwrap();
        }
        assert_eq!(sens.k_hat.max_abs(), 0.0);
    }

    #[test]
    fn sensitivities_match_four_index_tensor() {
        // W(t) is linear in K and in V, so a central difference of W(t) is
        // exact up to rounding and recovers the full ∂W_lm/∂K_ij.
        let (n, d, t) = (3, 2, 20);
        let mut rng = Rng::seed_from_u64(4);
        let p = FwpParams::random(&mut rng, n, d, 1.0);
        let xs = inputs(&mut rng, t, d);
        let final_w = |q: &FwpParams| fwp_forward(q, &xs).unwrap().1.steps.last().unwrap().1.clone();
        let mut sens = FwpSensitivity::zeros(n, d);
        let mut state = FwpState::zeros(n);
        for x in &xs {
            let (_, cache) = fwp_step(&p, &mut state, x).unwrap();
            fwp_rtrl_step(&mut sens, &cache).unwrap();
        }
        let eps = 1e-3;
        for i in 0..n {
            for j in 0..d {
                for which in [0, 1] {
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    let (pm, mm) = if which == 0 { (&mut plus.k, &mut minus.k) } else { (&mut plus.v, &mut minus.v) };
                    pm[(i, j)] += eps;
                    mm[(i, j)] -= eps;
                    let (wp, wm) = (final_w(&plus), final_w(&minus));
                    for l in 0..n {
                        for m in 0..n {
                            let deriv = (wp[(l, m)] - wm[(l, m)]) / (2.0 * eps);
                            let expect = match which {
                                // ∂W_lm/∂K_ij = K̂_lj when m = i
                                0 if m == i => sens.k_hat[(l, j)],
                                // ∂W_lm/∂V_ij = V̂_mj when l = i
                                1 if l == i => sens.v_hat[(m, j)],
                                _ => 0.0,
                            };
                            assert!((deriv - expect).abs() < 1e-9, "block {which} l={l} m={m} i={i} j={j}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_key_and_value_grads() {
        let mut rng = Rng::seed_from_u64(6);
        let p = FwpParams::random(&mut rng, 3, 2, 1.0);
        let mut state = FwpState::zeros(3);
        let mut sens = FwpSensitivity::zeros(3, 2);
        let (_, cache) = fwp_step(&p, &mut state, &[1.0, 0.5]).unwrap();
        fwp_rtrl_step(&mut sens, &cache).unwrap();
        let err = fwp_error(&cache, &[0.0; 3]).unwrap();
        let mut g = FwpGrads::zeros(3, 2);
        fwp_rtrl_grad(&sens, &err, &state, &cache, &mut g).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn scalar_case_by_hand() {
        // N = D = 1: k = Kx, v = Vx, W(t) = VK Σx², y = W σ(Qx).
        let p = FwpParams {
            k: RealMatrix::from_vec(1, 1, vec![0.5]).unwrap(),
            v: RealMatrix::from_vec(1, 1, vec![-1.5]).unwrap(),
            q: RealMatrix::from_vec(1, 1, vec![0.3]).unwrap(),
        };
        let xs = [0.8, -0.4];
        let mut state = FwpState::zeros(1);
        let mut sens = FwpSensitivity::zeros(1, 1);
        for &x in &xs {
            let (_, cache) = fwp_step(&p, &mut state, &[x]).unwrap();
            fwp_rtrl_step(&mut sens, &cache).unwrap();
        }
        let sum_sq = 0.8f64 * 0.8 + 0.4 * 0.4;
        assert!((sens.k_hat[(0, 0)] - (-1.5) * sum_sq).abs() < 1e-15);
        assert!((sens.v_hat[(0, 0)] - 0.5 * sum_sq).abs() < 1e-15);
        let (_, cache) = fwp_step(&p, &mut FwpState::zeros(1), &[-0.4]).unwrap();
        let err = fwp_error(&cache, &[2.0]).unwrap();
        let mut g = FwpGrads::zeros(1, 1);
        fwp_rtrl_grad(&sens, &err, &state, &cache, &mut g).unwrap();
        assert!((g.k[(0, 0)] - err.e[(0, 0)] * sens.k_hat[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn rtrl_equals_bptt() {
        for n in [2, 8] {
            for t in [1, 5, 40] {
                let mut rng = Rng::seed_from_u64(100 + (n * t) as u64);
                let d = 3;
                let p = FwpParams::random(&mut rng, n, d, 0.7);
                let xs = inputs(&mut rng, t, d);
                let loss = SquaredError::random(&mut rng, t, n);
                let rt = fwp_rtrl(&p, &xs, |t, y| loss.grad(t, y)).unwrap();
                let bp = bptt_total(&p, &xs, &loss);
                for ((name, a), (_, b)) in rt.blocks().into_iter().zip(bp.blocks()) {
                    assert!(rel(a, b) < 1e-9, "N={n} T={t} block {name}");
                }
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(7);
        let p = FwpParams::random(&mut rng, 3, 2, 0.7);
        let xs = inputs(&mut rng, 6, 2);
        let loss = SquaredError::random(&mut rng, 6, 3);
        let fd = central_difference(&p, 1e-5, |q| {
            let (ys, _) = fwp_forward(q, &xs).unwrap();
            loss.total(ys.iter().map(|y| y.as_slice()))
        });
        assert!(rel(&fd.flatten(), &bptt_total(&p, &xs, &loss).flatten()) < 1e-6);
    }

    #[test]
    fn key_nonlinearity_breaks_exactness() {
        // Mutant forward pass with σ on the keys. The linear-key sensitivity
        // recursion no longer describes ∂W/∂K, so RTRL and the true gradient part.
        let (n, d, t) = (3, 2, 8);
        let mut rng = Rng::seed_from_u64(8);
        let p = FwpParams::random(&mut rng, n, d, 1.0);
        let xs = inputs(&mut rng, t, d);
        let loss = SquaredError::random(&mut rng, t, n);
        let mutant = |q: &FwpParams, sens: Option<(&mut FwpSensitivity, &mut FwpGrads)>| -> f64 {
            let mut w = RealMatrix::zeros(n, n);
            let mut total = 0.0;
            let mut sens = sens;
            for (step, x) in xs.iter().enumerate() {
                let mut k = vec![0.0; n];
                let mut v = vec![0.0; n];
                let mut qq = vec![0.0; n];
                q.k.matvec_into(x, &mut k);
                q.v.matvec_into(x, &mut v);
                q.q.matvec_into(x, &mut qq);
                let k: Vec<f64> = k.iter().map(|&a| sigmoid(a)).collect();
                w.add_outer(1.0, &v, &k);
                let sq = RealVector::from_fn(n, |i| sigmoid(qq[i]));
                let mut y = RealVector::zeros(n);
                w.matvec_into(&sq, &mut y);
                total += loss.value(step, &y);
                if let Some((s, g)) = sens.as_mut() {
                    let cache = FwpStepCache {
                        x: x.clone(),
                        k: RealVector::new(k.clone()).unwrap(),
                        v: RealVector::new(v.clone()).unwrap(),
                        q: RealVector::new(qq.clone()).unwrap(),
                        sq: sq.clone(),
                    };
                    fwp_rtrl_step(s, &cache).unwrap();
                    let err = fwp_error(&cache, &loss.grad(step, &y)).unwrap();
                    fwp_rtrl_grad(s, &err, &FwpState { w: w.clone() }, &cache, g).unwrap();
                }
            }
            total
        };
        let mut sens = FwpSensitivity::zeros(n, d);
        let mut rt = FwpGrads::zeros(n, d);
        mutant(&p, Some((&mut sens, &mut rt)));
        let truth = central_difference(&p, 1e-5, |q| mutant(q, None));
        assert!(rel(rt.k.as_slice(), truth.k.as_slice()) > 1e-3);
    }

    #[test]
    fn zero_query_leaves_sensitivities_unchanged() {
        let mut rng = Rng::seed_from_u64(9);
        let p = FwpParams::random(&mut rng, 3, 2, 1.0);
        let mut p0 = p.clone();
        p0.q.fill(0.0);
        let xs = inputs(&mut rng, 7, 2);
        let run = |q: &FwpParams| {
            let mut state = FwpState::zeros(3);
            let mut sens = FwpSensitivity::zeros(3, 2);
            for x in &xs {
                let (_, cache) = fwp_step(q, &mut state, x).unwrap();
                fwp_rtrl_step(&mut sens, &cache).unwrap();
            }
            sens
        };
        assert_eq!(run(&p), run(&p0));
        assert_eq!(run(&p).num_reals(), 2 * 3 * 2);
    }
}
