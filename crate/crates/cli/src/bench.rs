//! Cost measurements for RTRL and truncated BPTT on the eLSTM.
//!
//! Memory is measured with [`CountingAlloc`], which tracks live and peak
//! heap bytes per thread. A binary (or test) must install it as its global
//! allocator for the memory columns to be meaningful; [`allocator_installed`]
//! reports whether that happened.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use rtrl_core::elstm::{elstm_bptt, elstm_forward, ElstmGrads, ElstmParams};
use rtrl_core::numeric::{RealVector, Rng};
use rtrl_core::rtrl::{rtrl_grad, sens_init, RtrlStream};

use crate::error::{CliError, CliResult};

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

/// System allocator that counts bytes on the allocating thread.
pub struct CountingAlloc;

fn record(delta: isize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

pub fn live_bytes() -> isize {
    LIVE.with(Cell::get)
}

/// Reset the peak to the current live count.
pub fn reset_peak() {
    PEAK.with(|p| p.set(live_bytes()));
}

pub fn peak_bytes() -> isize {
    PEAK.with(Cell::get)
}

pub fn allocator_installed() -> bool {
    let before = live_bytes();
    let probe = std::hint::black_box(vec![0u8; 4096]);
    let counted = live_bytes() - before >= 4096;
    drop(probe);
    counted
}

/// Extra heap bytes at the peak of `f`, relative to the live count on entry.
fn peak_during<T>(f: impl FnOnce() -> T) -> (isize, T) {
    let base = live_bytes();
    reset_peak();
    let out = f();
    (peak_bytes() - base, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Hidden sizes for the timing sweep.
    pub hidden: Vec<usize>,
    /// Segment lengths for the memory sweep.
    pub spans: Vec<usize>,
    pub input: usize,
    /// Hidden size used for the memory sweep.
    pub memory_hidden: usize,
    /// Time steps per timing measurement.
    pub timing_steps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            hidden: vec![32, 64, 128, 256],
            spans: vec![10, 50, 100, 300],
            input: 8,
            memory_hidden: 64,
            timing_steps: 400,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.hidden.len() < 2 || self.spans.len() < 2 {
            return Err(CliError::Usage("bench needs at least two hidden sizes and two spans".into()));
        }
        if self.hidden.contains(&0)
            || self.spans.contains(&0)
            || self.input == 0
            || self.memory_hidden == 0
            || self.timing_steps == 0
        {
            return Err(CliError::Usage("bench sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub span: usize,
    /// Heap bytes retained by the RTRL sensitivities.
    pub rtrl_state_bytes: isize,
    /// Peak extra heap bytes while RTRL processes `span` steps.
    pub rtrl_peak_bytes: isize,
    /// Heap bytes retained by the BPTT tape after the forward pass.
    pub tbptt_tape_bytes: isize,
    /// Peak extra heap bytes during forward and backward over `span` steps.
    pub tbptt_peak_bytes: isize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub hidden: usize,
    pub rtrl_us_per_step: f64,
    pub tbptt_us_per_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub allocator_counted: bool,
    /// `2ND + 4N` at the memory-sweep size.
    pub analytic_rtrl_reals: usize,
    pub memory: Vec<MemoryRow>,
    pub timing: Vec<TimingRow>,
    pub tape_fit: LinearFit,
    /// Log-log slope of RTRL time per step against `N` (informational).
    pub rtrl_time_exponent: f64,
    /// Least-squares fit of RTRL time per step against `N²`.
    pub rtrl_time_fit: LinearFit,
    /// Largest factor by which a measured time departs from the fit.
    pub rtrl_time_band: f64,
    pub checks: Vec<Check>,
}

impl BenchReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "memory (N={}, D={}; RTRL state formula {} reals = {} bytes)\n",
            self.config.memory_hidden,
            self.config.input,
            self.analytic_rtrl_reals,
            self.analytic_rtrl_reals * 8
        ));
        s.push_str(&format!(
            "{:>6} {:>14} {:>14} {:>14} {:>14}\n",
            "M", "rtrl_state_B", "rtrl_peak_B", "tbptt_tape_B", "tbptt_peak_B"
        ));
        for r in &self.memory {
            s.push_str(&format!(
                "{:>6} {:>14} {:>14} {:>14} {:>14}\n",
                r.span, r.rtrl_state_bytes, r.rtrl_peak_bytes, r.tbptt_tape_bytes, r.tbptt_peak_bytes
            ));
        }
        s.push_str(&format!("\ntime per step (D={})\n", self.config.input));
        s.push_str(&format!("{:>6} {:>14} {:>14}\n", "N", "rtrl_us", "tbptt_us"));
        for r in &self.timing {
            s.push_str(&format!("{:>6} {:>14.3} {:>14.3}\n", r.hidden, r.rtrl_us_per_step, r.tbptt_us_per_step));
        }
        s.push('\n');
        for c in &self.checks {
            s.push_str(&format!("[{}] {}: {}\n", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail));
        }
        s
    }
}

/// Least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LinearFit { slope, intercept, r_squared }
}

fn inputs(rng: &mut Rng, steps: usize, d: usize) -> Vec<RealVector> {
    (0..steps).map(|_| RealVector::from_fn(d, |_| rng.uniform(-1.0, 1.0))).collect()
}

fn cotangents(rng: &mut Rng, steps: usize, n: usize) -> Vec<RealVector> {
    (0..steps).map(|_| RealVector::from_fn(n, |_| rng.uniform(-1.0, 1.0))).collect()
}

/// RTRL over `xs` with a loss at every step.
fn run_rtrl(p: &ElstmParams, xs: &[RealVector], dl: &[RealVector], grads: &mut ElstmGrads) -> CliResult<()> {
    let mut stream = RtrlStream::new(p.hidden(), p.input());
    for (x, g) in xs.iter().zip(dl) {
        let (_, cache) = stream.step(p, x)?;
        rtrl_grad(p, &stream.sens, &cache, g, grads)?;
    }
    Ok(())
}

fn run_tbptt(p: &ElstmParams, xs: &[RealVector], dl: &[RealVector]) -> CliResult<ElstmGrads> {
    let (_, tape) = elstm_forward(p, &vec![0.0; p.hidden()], xs)?;
    Ok(elstm_bptt(p, &tape, dl)?)
}

pub fn run_bench(cfg: &BenchConfig) -> CliResult<BenchReport> {
    cfg.validate()?;
    let counted = allocator_installed();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let (n, d) = (cfg.memory_hidden, cfg.input);
    let p = ElstmParams::init(&mut rng, n, d);
    let analytic = 2 * n * d + 4 * n;

    let mut memory = Vec::new();
    for &m in &cfg.spans {
        let xs = inputs(&mut rng, m, d);
        let dl = cotangents(&mut rng, m, n);
        let mut grads = ElstmGrads::zeros(n, d);
        let base = live_bytes();
        let sens = sens_init(n, d);
        let state = live_bytes() - base;
        drop(sens);
        let (rtrl_peak, r) = peak_during(|| run_rtrl(&p, &xs, &dl, &mut grads));
        r?;
        let base = live_bytes();
        let tape = elstm_forward(&p, &vec![0.0; n], &xs)?.1;
        let tape_bytes = live_bytes() - base;
        drop(tape);
        let (tbptt_peak, g) = peak_during(|| run_tbptt(&p, &xs, &dl));
        g?;
        memory.push(MemoryRow {
            span: m,
            rtrl_state_bytes: state,
            rtrl_peak_bytes: rtrl_peak,
            tbptt_tape_bytes: tape_bytes,
            tbptt_peak_bytes: tbptt_peak,
        });
    }

    let mut timing = Vec::new();
    for &h in &cfg.hidden {
        let p = ElstmParams::init(&mut rng, h, d);
        let xs = inputs(&mut rng, cfg.timing_steps, d);
        let dl = cotangents(&mut rng, cfg.timing_steps, h);
        let mut grads = ElstmGrads::zeros(h, d);
        // One untimed pass warms caches and the allocator; the fastest of the
        // timed passes filters out preemption by other threads.
        run_rtrl(&p, &xs, &dl, &mut grads)?;
        run_tbptt(&p, &xs, &dl)?;
        let per_step = |secs: f64| secs * 1e6 / cfg.timing_steps as f64;
        let (mut rtrl, mut tbptt) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..TIMING_REPEATS {
            let t0 = Instant::now();
            run_rtrl(&p, &xs, &dl, &mut grads)?;
            rtrl = rtrl.min(per_step(t0.elapsed().as_secs_f64()));
            std::hint::black_box(&grads);
            let t0 = Instant::now();
            std::hint::black_box(run_tbptt(&p, &xs, &dl)?);
            tbptt = tbptt.min(per_step(t0.elapsed().as_secs_f64()));
        }
        timing.push(TimingRow { hidden: h, rtrl_us_per_step: rtrl, tbptt_us_per_step: tbptt });
    }

    let spans: Vec<f64> = memory.iter().map(|r| r.span as f64).collect();
    let tape: Vec<f64> = memory.iter().map(|r| r.tbptt_tape_bytes as f64).collect();
    let tape_fit = linear_fit(&spans, &tape);
    let log_n: Vec<f64> = timing.iter().map(|r| (r.hidden as f64).ln()).collect();
    let log_t: Vec<f64> = timing.iter().map(|r| r.rtrl_us_per_step.ln()).collect();
    let exponent = linear_fit(&log_n, &log_t).slope;
    let n_sq: Vec<f64> = timing.iter().map(|r| (r.hidden as f64).powi(2)).collect();
    let times: Vec<f64> = timing.iter().map(|r| r.rtrl_us_per_step).collect();
    let time_fit = linear_fit(&n_sq, &times);
    let band = n_sq
        .iter()
        .zip(&times)
        .map(|(&x, &t)| {
            let pred = time_fit.intercept + time_fit.slope * x;
            if pred > 0.0 {
                (t / pred).max(pred / t)
            } else {
                f64::INFINITY
            }
        })
        .fold(1.0, f64::max);

    let mut checks = Vec::new();
    let analytic_bytes = (analytic * 8) as isize;
    let state_ok = counted
        && memory
            .iter()
            .all(|r| r.rtrl_state_bytes >= analytic_bytes && r.rtrl_state_bytes <= analytic_bytes + ALLOCATOR_SLACK_BYTES);
    checks.push(Check {
        name: "rtrl state matches 2ND+4N reals".into(),
        pass: state_ok,
        detail: format!(
            "measured {:?} bytes, formula {analytic_bytes} bytes",
            memory.iter().map(|r| r.rtrl_state_bytes).collect::<Vec<_>>()
        ),
    });
    let peaks: Vec<isize> = memory.iter().map(|r| r.rtrl_peak_bytes).collect();
    let (lo, hi) = (peaks.iter().min().copied().unwrap_or(0), peaks.iter().max().copied().unwrap_or(0));
    checks.push(Check {
        name: "rtrl memory constant in M".into(),
        pass: counted && hi - lo <= ALLOCATOR_SLACK_BYTES,
        detail: format!("peak bytes {peaks:?}"),
    });
    checks.push(Check {
        name: "tbptt tape linear in M".into(),
        pass: counted && tape_fit.slope > 0.0 && tape_fit.r_squared > 0.99,
        detail: format!("slope {:.1} B/step, R^2 {:.6}", tape_fit.slope, tape_fit.r_squared),
    });
    checks.push(Check {
        name: "rtrl time quadratic in N within a 2x band".into(),
        pass: time_fit.slope > 0.0 && band <= 2.0,
        detail: format!(
            "t = {:.3} + {:.3e} N^2 us, worst point off by {band:.2}x (log-log slope {exponent:.3})",
            time_fit.intercept, time_fit.slope
        ),
    });
    Ok(BenchReport {
        config: cfg.clone(),
        allocator_counted: counted,
        analytic_rtrl_reals: analytic,
        memory,
        timing,
        tape_fit,
        rtrl_time_exponent: exponent,
        rtrl_time_fit: time_fit,
        rtrl_time_band: band,
        checks,
    })
}

/// Timed passes per hidden size; the minimum is reported.
pub const TIMING_REPEATS: usize = 5;

/// Tolerance for allocator bookkeeping in the memory checks.
pub const ALLOCATOR_SLACK_BYTES: isize = 256;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_a_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let noisy = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]);
        assert!(noisy.r_squared < 0.9);
    }

    #[test]
    fn uncounted_memory_fails_memory_checks() {
        // The unit-test binary uses the system allocator directly.
        let cfg = BenchConfig { hidden: vec![4, 8], spans: vec![2, 4], memory_hidden: 4, input: 2, timing_steps: 5, seed: 1 };
        let r = run_bench(&cfg).unwrap();
        assert!(!r.allocator_counted);
        assert!(!r.checks[0].pass);
        assert_eq!(r.analytic_rtrl_reals, 2 * 4 * 2 + 16);
        assert!(r.table().contains("FAIL"));
    }

    #[test]
    fn rejects_degenerate_grids() {
        let cfg = BenchConfig { hidden: vec![8], ..Default::default() };
        assert!(matches!(run_bench(&cfg), Err(CliError::Usage(_))));
    }
}
