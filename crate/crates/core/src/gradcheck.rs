//! Gradient comparisons between independent algorithms.
//!
//! A [`GradCase`] names an architecture, a pair of gradient algorithms and
//! the problem size. Running it draws random parameters, inputs and a
//! weighted squared-error loss from the case seed, computes both gradients
//! and compares them block by block.
//!
//! The error of a block is normwise, `max|a − b| / max(|a|, |b|)`, so entries
//! that are tiny compared to the rest of their block do not dominate. The
//! case passes when every block is within tolerance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::elstm::{elstm_bptt, elstm_forward, ElstmGrads, ElstmParams};
use crate::error::{Error, Result};
use crate::felstm::{felstm_bptt, felstm_forward, snap1_run, FelstmParams};
use crate::finite_diff::central_difference;
use crate::fwp::{fwp_bptt, fwp_forward, fwp_rtrl, FwpParams};
use crate::loss::{SquaredError, StepLoss};
use crate::numeric::{RealVector, Rng};
use crate::params::ParamBlocks;
use crate::rtrl::{rtrl_grad, RtrlStream};
use crate::vanilla::{hybrid_run, vanilla_bptt, vanilla_forward, vanilla_rtrl, VanillaParams};

/// Largest vanilla hidden size accepted; its sensitivities hold `N²(N+D)` reals.
pub const VANILLA_MAX_HIDDEN: usize = 64;
pub const ALGORITHMIC_TOLERANCE: f64 = 1e-9;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;
const PARAM_SCALE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Elstm,
    Vanilla,
    Fwp,
    Felstm,
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elstm" => Ok(Arch::Elstm),
            "vanilla" => Ok(Arch::Vanilla),
            "fwp" => Ok(Arch::Fwp),
            "felstm" => Ok(Arch::Felstm),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Elstm => "elstm",
            Arch::Vanilla => "vanilla",
            Arch::Fwp => "fwp",
            Arch::Felstm => "felstm",
        })
    }
}

/// Which two gradients are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoPair {
    RtrlBptt,
    RtrlFd,
    BpttFd,
    HybridBptt,
    Snap1Bptt,
    /// SnAp-1 against exact eLSTM RTRL, compared in the eLSTM layout.
    Snap1Rtrl,
}

impl FromStr for AlgoPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rtrl-bptt" => Ok(AlgoPair::RtrlBptt),
            "rtrl-fd" => Ok(AlgoPair::RtrlFd),
            "bptt-fd" => Ok(AlgoPair::BpttFd),
            "hybrid-bptt" => Ok(AlgoPair::HybridBptt),
            "snap1-bptt" => Ok(AlgoPair::Snap1Bptt),
            "snap1-rtrl" => Ok(AlgoPair::Snap1Rtrl),
            other => Err(Error::Config(format!("unknown algorithm pair `{other}`"))),
        }
    }
}

impl fmt::Display for AlgoPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlgoPair::RtrlBptt => "rtrl-bptt",
            AlgoPair::RtrlFd => "rtrl-fd",
            AlgoPair::BpttFd => "bptt-fd",
            AlgoPair::HybridBptt => "hybrid-bptt",
            AlgoPair::Snap1Bptt => "snap1-bptt",
            AlgoPair::Snap1Rtrl => "snap1-rtrl",
        })
    }
}

impl AlgoPair {
    pub fn uses_finite_differences(self) -> bool {
        matches!(self, AlgoPair::RtrlFd | AlgoPair::BpttFd)
    }

    pub fn default_tolerance(self) -> f64 {
        if self.uses_finite_differences() {
            FD_TOLERANCE
        } else {
            ALGORITHMIC_TOLERANCE
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub arch: Arch,
    pub pair: AlgoPair,
    pub hidden: usize,
    pub input: usize,
    pub steps: usize,
    pub seed: u64,
    /// Hybrid segment lengths; must sum to `steps`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<usize>,
    /// feLSTM only: diagonal gate recurrences instead of dense ones.
    #[serde(default)]
    pub diagonal: bool,
    pub tolerance: f64,
    /// The pair is not expected to agree (an approximation against an exact gradient).
    #[serde(default)]
    pub expect_deviation: bool,
}

impl GradCase {
    pub fn new(arch: Arch, pair: AlgoPair, hidden: usize, input: usize, steps: usize, seed: u64) -> Self {
        GradCase {
            arch,
            pair,
            hidden,
            input,
            steps,
            seed,
            segments: Vec::new(),
            diagonal: false,
            tolerance: pair.default_tolerance(),
            expect_deviation: false,
        }
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}/{} N={} D={} T={} seed={}", self.arch, self.pair, self.hidden, self.input, self.steps, self.seed);
        if !self.segments.is_empty() {
            s.push_str(&format!(" segments={:?}", self.segments));
        }
        if self.arch == Arch::Felstm {
            s.push_str(if self.diagonal { " diagonal" } else { " dense" });
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        use AlgoPair::*;
        let ok = match self.arch {
            Arch::Elstm => matches!(self.pair, RtrlBptt | RtrlFd | BpttFd),
            Arch::Vanilla => matches!(self.pair, RtrlBptt | RtrlFd | BpttFd | HybridBptt),
            Arch::Fwp => matches!(self.pair, RtrlBptt | RtrlFd | BpttFd),
            Arch::Felstm => matches!(self.pair, Snap1Bptt | Snap1Rtrl | BpttFd),
        };
        if !ok {
            return Err(Error::Config(format!("pair {} is not defined for {}", self.pair, self.arch)));
        }
        if self.hidden == 0 || self.input == 0 || self.steps == 0 {
            return Err(Error::Config("hidden, input and steps must be positive".into()));
        }
        if self.arch == Arch::Vanilla && self.hidden > VANILLA_MAX_HIDDEN {
            return Err(Error::Config(format!("vanilla RTRL is limited to N <= {VANILLA_MAX_HIDDEN}")));
        }
        if self.pair == HybridBptt && self.segments.iter().sum::<usize>() != self.steps {
            return Err(Error::Config("hybrid segment lengths must sum to the number of steps".into()));
        }
        if self.pair == HybridBptt && self.segments.contains(&0) {
            return Err(Error::Config("hybrid segments must be non-empty".into()));
        }
        if self.pair == Snap1Rtrl && !self.diagonal {
            return Err(Error::Config("snap1-rtrl needs diagonal recurrences".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub case: GradCase,
    pub blocks: Vec<BlockReport>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub cosine: f64,
    /// Every block within tolerance.
    pub pass: bool,
}

impl GradReport {
    /// Whether the outcome is the expected one: agreement for exact pairs,
    /// a strictly positive deviation for approximations.
    pub fn as_expected(&self) -> bool {
        if self.case.expect_deviation {
            !self.pass && self.max_abs_err > 0.0 && self.max_abs_err.is_finite()
        } else {
            self.pass
        }
    }
}

fn normwise(a: &[f64], b: &[f64]) -> (f64, f64) {
    let abs = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let rel = if abs == 0.0 { 0.0 } else { abs / scale };
    (abs, rel)
}

/// Compare two gradients with the same block layout.
pub fn compare<P: ParamBlocks>(case: &GradCase, a: &P, b: &P) -> GradReport {
    let mut blocks = Vec::new();
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for ((name, x), (_, y)) in a.blocks().into_iter().zip(b.blocks()) {
        let (abs, rel) = normwise(x, y);
        blocks.push(BlockReport { name: name.to_string(), max_abs_err: abs, max_rel_err: rel });
        for (p, q) in x.iter().zip(y) {
            dot += p * q;
            na += p * p;
            nb += q * q;
        }
    }
    let max_abs_err = blocks.iter().fold(0.0f64, |m, b| m.max(b.max_abs_err));
    let max_rel_err = blocks.iter().fold(0.0f64, |m, b| m.max(b.max_rel_err));
    let cosine = if na == 0.0 && nb == 0.0 { 1.0 } else { dot / (na.sqrt() * nb.sqrt()) };
    let pass = blocks.iter().all(|b| b.max_rel_err <= case.tolerance);
    GradReport { case: case.clone(), blocks, max_abs_err, max_rel_err, cosine, pass }
}

fn inputs(rng: &mut Rng, steps: usize, dim: usize) -> Vec<RealVector> {
    (0..steps).map(|_| RealVector::from_fn(dim, |_| rng.uniform(-1.0, 1.0))).collect()
}

fn elstm_rtrl_total(p: &ElstmParams, xs: &[RealVector], loss: &SquaredError) -> Result<ElstmGrads> {
    let mut stream = RtrlStream::new(p.hidden(), p.input());
    let mut g = ElstmGrads::zeros(p.hidden(), p.input());
    for (t, x) in xs.iter().enumerate() {
        let (h, cache) = stream.step(p, x)?;
        rtrl_grad(p, &stream.sens, &cache, &loss.grad(t, &h), &mut g)?;
    }
    Ok(g)
}

fn elstm_bptt_total(p: &ElstmParams, xs: &[RealVector], loss: &SquaredError) -> Result<ElstmGrads> {
    let (hs, tape) = elstm_forward(p, &vec![0.0; p.hidden()], xs)?;
    let dl: Vec<RealVector> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
    elstm_bptt(p, &tape, &dl)
}

fn fd<P: ParamBlocks + Clone>(p: &P, f: impl Fn(&P) -> Result<f64>) -> Result<P> {
    // Forward failures are recorded and surfaced after the sweep.
    let failed = std::cell::Cell::new(None);
    let out = central_difference(p, FD_EPS, |q| match f(q) {
        Ok(v) => v,
        Err(e) => {
            failed.set(Some(e));
            f64::NAN
        }
    });
    match failed.into_inner() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Project a feLSTM gradient onto the eLSTM layout (diagonals of the gate recurrences).
fn felstm_to_elstm_layout(g: &FelstmParams) -> ElstmGrads {
    let n = g.hidden();
    ElstmGrads {
        f: g.f.clone(),
        z: g.z.clone(),
        w_f: RealVector::from_fn(n, |i| g.w_f[(i, i)]),
        w_z: RealVector::from_fn(n, |i| g.w_z[(i, i)]),
        b_f: g.b_f.clone(),
        b_z: g.b_z.clone(),
        o: g.o.clone(),
        w_o: g.w_o.clone(),
    }
}

/// Run one case.
pub fn gradcheck(case: &GradCase) -> Result<GradReport> {
    case.validate()?;
    let (n, d, t) = (case.hidden, case.input, case.steps);
    let mut rng = Rng::seed_from_u64(case.seed);
    match case.arch {
        Arch::Elstm => {
            let p = ElstmParams::random(&mut rng, n, d, PARAM_SCALE * 2.0);
            let xs = inputs(&mut rng, t, d);
            let loss = SquaredError::random(&mut rng, t, n);
            let value = |q: &ElstmParams| -> Result<f64> {
                let (hs, _) = elstm_forward(q, &vec![0.0; n], &xs)?;
                Ok(loss.total(hs.iter().map(|h| h.as_slice())))
            };
            let (a, b) = match case.pair {
                AlgoPair::RtrlBptt => (elstm_rtrl_total(&p, &xs, &loss)?, elstm_bptt_total(&p, &xs, &loss)?),
                AlgoPair::RtrlFd => (elstm_rtrl_total(&p, &xs, &loss)?, fd(&p, value)?),
                _ => (elstm_bptt_total(&p, &xs, &loss)?, fd(&p, value)?),
            };
            Ok(compare(case, &a, &b))
        }
        Arch::Vanilla => {
            let p = VanillaParams::random(&mut rng, n, d, PARAM_SCALE * 2.0);
            let xs = inputs(&mut rng, t, d);
            let loss = SquaredError::random(&mut rng, t, n);
            let (hs, tape) = vanilla_forward(&p, &vec![0.0; n], &xs)?;
            let dl: Vec<RealVector> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
            let value = |q: &VanillaParams| -> Result<f64> {
                let (hs, _) = vanilla_forward(q, &vec![0.0; n], &xs)?;
                Ok(loss.total(hs.iter().map(|h| h.as_slice())))
            };
            let (a, b) = match case.pair {
                AlgoPair::RtrlBptt => (vanilla_rtrl(&p, &xs, &dl)?, vanilla_bptt(&p, &tape, &dl)?),
                AlgoPair::HybridBptt => (hybrid_run(&p, &xs, &dl, &case.segments)?, vanilla_bptt(&p, &tape, &dl)?),
                AlgoPair::RtrlFd => (vanilla_rtrl(&p, &xs, &dl)?, fd(&p, value)?),
                _ => (vanilla_bptt(&p, &tape, &dl)?, fd(&p, value)?),
            };
            Ok(compare(case, &a, &b))
        }
        Arch::Fwp => {
            let p = FwpParams::random(&mut rng, n, d, PARAM_SCALE * 2.0);
            let xs = inputs(&mut rng, t, d);
            let loss = SquaredError::random(&mut rng, t, n);
            let bptt = || -> Result<_> {
                let (ys, tape) = fwp_forward(&p, &xs)?;
                let dl: Vec<RealVector> = ys.iter().enumerate().map(|(t, y)| loss.grad(t, y)).collect();
                fwp_bptt(&p, &tape, &dl)
            };
            let rtrl = || fwp_rtrl(&p, &xs, |t, y| loss.grad(t, y));
            let value = |q: &FwpParams| -> Result<f64> {
                let (ys, _) = fwp_forward(q, &xs)?;
                Ok(loss.total(ys.iter().map(|y| y.as_slice())))
            };
            let (a, b) = match case.pair {
                AlgoPair::RtrlBptt => (rtrl()?, bptt()?),
                AlgoPair::RtrlFd => (rtrl()?, fd(&p, value)?),
                _ => (bptt()?, fd(&p, value)?),
            };
            Ok(compare(case, &a, &b))
        }
        Arch::Felstm => {
            let p = if case.diagonal {
                FelstmParams::from_elstm(&ElstmParams::random(&mut rng, n, d, PARAM_SCALE * 2.0))
            } else {
                FelstmParams::random(&mut rng, n, d, PARAM_SCALE * 2.0)
            };
            let xs = inputs(&mut rng, t, d);
            let loss = SquaredError::random(&mut rng, t, n);
            let bptt = || -> Result<_> {
                let (hs, tape) = felstm_forward(&p, &vec![0.0; n], &xs)?;
                let dl: Vec<RealVector> = hs.iter().enumerate().map(|(t, h)| loss.grad(t, h)).collect();
                felstm_bptt(&p, &tape, &dl)
            };
            let snap = || snap1_run(&p, &xs, |t, h| loss.grad(t, h));
            match case.pair {
                AlgoPair::Snap1Bptt => Ok(compare(case, &snap()?, &bptt()?)),
                AlgoPair::Snap1Rtrl => {
                    let e = ElstmParams {
                        f: p.f.clone(),
                        z: p.z.clone(),
                        w_f: RealVector::from_fn(n, |i| p.w_f[(i, i)]),
                        w_z: RealVector::from_fn(n, |i| p.w_z[(i, i)]),
                        b_f: p.b_f.clone(),
                        b_z: p.b_z.clone(),
                        o: p.o.clone(),
                        w_o: p.w_o.clone(),
                    };
                    let exact = elstm_rtrl_total(&e, &xs, &loss)?;
                    Ok(compare(case, &felstm_to_elstm_layout(&snap()?), &exact))
                }
                _ => {
                    let value = |q: &FelstmParams| -> Result<f64> {
                        let (hs, _) = felstm_forward(q, &vec![0.0; n], &xs)?;
                        Ok(loss.total(hs.iter().map(|h| h.as_slice())))
                    };
                    Ok(compare(case, &bptt()?, &fd(&p, value)?))
                }
            }
        }
    }
}

/// eLSTM RTRL against BPTT over a spread of sizes and lengths.
pub fn elstm_suite() -> Vec<GradCase> {
    let ns = [4, 16, 64];
    let ds = [3, 8, 32];
    let ts = [1, 2, 50, 200];
    (0..20)
        .map(|i| GradCase::new(Arch::Elstm, AlgoPair::RtrlBptt, ns[i % 3], ds[(i / 3) % 3], ts[i % 4], 1000 + i as u64))
        .collect()
}

/// Vanilla RTRL against BPTT and both against finite differences.
pub fn vanilla_suite() -> Vec<GradCase> {
    let mut out = Vec::new();
    for (i, &(n, d, t)) in [(3, 2, 1), (5, 3, 12), (8, 4, 30), (16, 5, 20)].iter().enumerate() {
        let seed = 2000 + i as u64;
        let mut exact = GradCase::new(Arch::Vanilla, AlgoPair::RtrlBptt, n, d, t, seed);
        exact.tolerance = 1e-10;
        out.push(exact);
        out.push(GradCase::new(Arch::Vanilla, AlgoPair::RtrlFd, n, d, t, seed));
        out.push(GradCase::new(Arch::Vanilla, AlgoPair::BpttFd, n, d, t, seed));
    }
    out
}

/// Hybrid segment compositions of a 24-step sequence.
pub fn hybrid_suite() -> Vec<GradCase> {
    let compositions: [Vec<usize>; 4] = [vec![24], vec![5, 5, 5, 5, 4], vec![1; 24], vec![12, 12]];
    let mut out = Vec::new();
    for seed in 0..5u64 {
        for comp in &compositions {
            let mut c = GradCase::new(Arch::Vanilla, AlgoPair::HybridBptt, 6, 3, 24, 3000 + seed);
            c.segments = comp.clone();
            c.tolerance = 1e-10;
            out.push(c);
        }
    }
    out
}

pub fn fwp_suite() -> Vec<GradCase> {
    let mut out = Vec::new();
    for &n in &[2, 8] {
        for &t in &[1, 5, 40] {
            out.push(GradCase::new(Arch::Fwp, AlgoPair::RtrlBptt, n, 3, t, 4000 + (n * 100 + t) as u64));
        }
    }
    out.push(GradCase::new(Arch::Fwp, AlgoPair::RtrlFd, 3, 2, 5, 4999));
    out
}

/// SnAp-1 exact on diagonal recurrences, deviating on dense ones.
pub fn felstm_suite() -> Vec<GradCase> {
    let mut out = Vec::new();
    for seed in 0..3u64 {
        let mut diag = GradCase::new(Arch::Felstm, AlgoPair::Snap1Bptt, 5, 3, 30, 5000 + seed);
        diag.diagonal = true;
        out.push(diag.clone());
        diag.pair = AlgoPair::Snap1Rtrl;
        out.push(diag);
        let mut dense = GradCase::new(Arch::Felstm, AlgoPair::Snap1Bptt, 5, 3, 30, 5100 + seed);
        dense.expect_deviation = true;
        out.push(dense);
    }
    out.push(GradCase::new(Arch::Felstm, AlgoPair::BpttFd, 4, 2, 8, 5200));
    out
}

/// Every architecture.
pub fn default_suite() -> Vec<GradCase> {
    let mut out = elstm_suite();
    out.extend(vanilla_suite());
    out.extend(hybrid_suite());
    out.extend(fwp_suite());
    out.extend(felstm_suite());
    out
}
