//! Path simulation in log-magnitude form.
//!
//! The state is kept as `(sign, ln|x|)`: a decaying path routinely reaches
//! magnitudes far below `f64::MIN_POSITIVE` over 10⁷ steps, and the product
//! of brackets would underflow in direct arithmetic. Each step reconstructs
//! `x`, evaluates `f` and `g` on it, and adds `ln|B|` for the bracket
//! `B = 1 + h f(x) + √h g(x) ξ`.
//!
//! Alongside the state the engine keeps running sums of `g²(x_i)`,
//! `|f(x_i)|` and `|x_i|^λ` (all over the pre-step values
//! `i = 0..n-1`), a geometric set of checkpoints, and the per-decade
//! extremes of `ln(|x_n| n^{1/μ})` over every step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelSpec;
use crate::noise::{NoiseKind, NoiseSource};

/// Instantaneous state after `n` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub n: u64,
    /// −1, 0 (absorbed at zero) or +1.
    pub sign: i8,
    pub log_abs_x: f64,
    pub acc_g2: f64,
    pub acc_absf: f64,
    pub acc_xlam: f64,
}

impl PathState {
    pub fn initial(x0: f64) -> Self {
        let sign = if x0 > 0.0 {
            1
        } else if x0 < 0.0 {
            -1
        } else {
            0
        };
        PathState {
            n: 0,
            sign,
            log_abs_x: x0.abs().ln(),
            acc_g2: 0.0,
            acc_absf: 0.0,
            acc_xlam: 0.0,
        }
    }

    pub fn is_absorbed(&self) -> bool {
        self.sign == 0
    }

    /// `x_n` in direct arithmetic (may under- or overflow).
    pub fn x(&self) -> f64 {
        f64::from(self.sign) * self.log_abs_x.exp()
    }
}

/// One step of the recursion. `lambda` is the exponent of the `|x|^λ`
/// accumulator. An absorbed state only advances its step counter.
pub fn step(state: &PathState, model: &ModelSpec, xi: f64, lambda: f64) -> PathState {
    Stepper::new(model, lambda).step(state, xi)
}

#[derive(Clone, Copy)]
struct Stepper<'a> {
    model: &'a ModelSpec,
    sqrt_h: f64,
    lambda: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a ModelSpec, lambda: f64) -> Self {
        Stepper {
            model,
            sqrt_h: model.h.sqrt(),
            lambda,
        }
    }

    #[inline]
    fn step(&self, s: &PathState, xi: f64) -> PathState {
        if s.is_absorbed() {
            return PathState { n: s.n + 1, ..*s };
        }
        let x = f64::from(s.sign) * s.log_abs_x.exp();
        let f = self.model.eval_f(x);
        let g = self.model.eval_g(x);
        let incr = self.model.h * f + self.sqrt_h * g * xi;
        let bracket = 1.0 + incr;
        let mut next = PathState {
            n: s.n + 1,
            sign: s.sign,
            log_abs_x: s.log_abs_x,
            acc_g2: s.acc_g2 + g * g,
            acc_absf: s.acc_absf + f.abs(),
            acc_xlam: s.acc_xlam + (self.lambda * s.log_abs_x).exp(),
        };
        if bracket == 0.0 {
            next.sign = 0;
            next.log_abs_x = f64::NEG_INFINITY;
        } else if bracket > 0.0 {
            next.log_abs_x += incr.ln_1p();
        } else {
            next.sign = -s.sign;
            next.log_abs_x += (-bracket).ln();
        }
        next
    }
}

/// Stored snapshot of a [`PathState`].
pub type Checkpoint = PathState;

/// Extremes of `ln(|x_n| n^{1/μ})` over `n ∈ [10^{d-1}, 10^d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeExtreme {
    /// 1-based: decade 1 holds steps 1..=9.
    pub decade: u32,
    pub log_max: f64,
    pub log_min: f64,
    pub n_max: u64,
    pub n_min: u64,
}

/// Identity of a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub model: ModelSpec,
    pub noise: NoiseKind,
    pub seed: u64,
    pub stream: u64,
    pub n_steps: u64,
    pub lambda: f64,
    pub mu: f64,
}

/// Thinned trajectory of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub checkpoints: Vec<Checkpoint>,
    pub decade_extremes: Vec<DecadeExtreme>,
    pub meta: PathMeta,
    /// Step at which the bracket was exactly zero.
    pub absorbed_at: Option<u64>,
    /// First step with `ln|x|` above the configured ceiling.
    pub ceiling_exceeded_at: Option<u64>,
}

impl PathRecord {
    pub fn terminal(&self) -> &Checkpoint {
        self.checkpoints
            .last()
            .expect("records always hold the terminal checkpoint")
    }
}

/// Tunables for [`simulate_path_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub checkpoints_per_decade: u32,
    /// Ceiling on `ln|x|` beyond which the record flags a blow-up.
    pub log_ceiling: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            checkpoints_per_decade: 32,
            log_ceiling: 700.0,
        }
    }
}

/// Geometric checkpoint indices in `1..=n_steps`, always ending at `n_steps`.
pub fn checkpoint_schedule(n_steps: u64, per_decade: u32) -> Vec<u64> {
    let per_decade = per_decade.max(1) as f64;
    let mut out: Vec<u64> = Vec::new();
    let mut k = 0u32;
    loop {
        let n = 10f64.powf(k as f64 / per_decade).round() as u64;
        if n >= n_steps {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
        k += 1;
    }
    out.push(n_steps);
    out
}

struct DecadeTracker {
    inv_mu: f64,
    decade: u32,
    next_boundary: u64,
    current: Option<DecadeExtreme>,
    done: Vec<DecadeExtreme>,
}

impl DecadeTracker {
    fn new(mu: f64) -> Self {
        DecadeTracker {
            inv_mu: 1.0 / mu,
            decade: 1,
            next_boundary: 10,
            current: None,
            done: Vec::new(),
        }
    }

    #[inline]
    fn observe(&mut self, n: u64, log_abs_x: f64) {
        while n >= self.next_boundary {
            if let Some(c) = self.current.take() {
                self.done.push(c);
            }
            self.decade += 1;
            self.next_boundary = self.next_boundary.saturating_mul(10);
        }
        let stat = log_abs_x + (n as f64).ln() * self.inv_mu;
        match &mut self.current {
            None => {
                self.current = Some(DecadeExtreme {
                    decade: self.decade,
                    log_max: stat,
                    log_min: stat,
                    n_max: n,
                    n_min: n,
                })
            }
            Some(c) => {
                if stat > c.log_max {
                    c.log_max = stat;
                    c.n_max = n;
                }
                if stat < c.log_min {
                    c.log_min = stat;
                    c.n_min = n;
                }
            }
        }
    }

    fn finish(mut self) -> Vec<DecadeExtreme> {
        if let Some(c) = self.current.take() {
            self.done.push(c);
        }
        self.done
    }
}

/// Simulate one path with default [`SimOptions`].
pub fn simulate_path(
    model: &ModelSpec,
    source: &NoiseSource,
    stream: u64,
    n_steps: u64,
    lambda: f64,
    mu: f64,
) -> Result<PathRecord> {
    simulate_path_with(
        model,
        source,
        stream,
        n_steps,
        lambda,
        mu,
        &SimOptions::default(),
    )
}

/// Simulate `n_steps` steps of the recursion driven by `stream` of `source`.
pub fn simulate_path_with(
    model: &ModelSpec,
    source: &NoiseSource,
    stream: u64,
    n_steps: u64,
    lambda: f64,
    mu: f64,
    opts: &SimOptions,
) -> Result<PathRecord> {
    if n_steps == 0 {
        return Err(LabError::config("n_steps", "must be at least 1"));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(LabError::config("mu", "must be positive"));
    }
    let schedule = checkpoint_schedule(n_steps, opts.checkpoints_per_decade);
    let stepper = Stepper::new(model, lambda);
    let mut tracker = DecadeTracker::new(mu);
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut next_cp = schedule.iter().copied().peekable();
    let mut state = PathState::initial(model.x0);
    let mut absorbed_at = state.is_absorbed().then_some(0);
    let mut ceiling_exceeded_at = None;
    let mut noise = source.stream(stream, 0);

    // ξ_{n+1} = sample(stream, n)
    while state.n < n_steps {
        let xi = noise.next().expect("noise streams are infinite");
        state = stepper.step(&state, xi);
        let n = state.n;
        if state.log_abs_x.is_nan()
            || state.acc_g2.is_nan()
            || state.acc_absf.is_nan()
            || state.acc_xlam.is_nan()
        {
            return Err(LabError::Simulation {
                stream,
                step: n,
                reason: "NaN in path state".to_string(),
            });
        }
        if absorbed_at.is_none() && state.is_absorbed() {
            absorbed_at = Some(n);
        }
        if ceiling_exceeded_at.is_none() && state.log_abs_x > opts.log_ceiling {
            ceiling_exceeded_at = Some(n);
        }
        tracker.observe(n, state.log_abs_x);
        if next_cp.peek() == Some(&n) {
            checkpoints.push(state);
            next_cp.next();
        }
    }

    Ok(PathRecord {
        checkpoints,
        decade_extremes: tracker.finish(),
        meta: PathMeta {
            model: model.clone(),
            noise: source.spec().kind,
            seed: source.master_seed(),
            stream,
            n_steps,
            lambda,
            mu,
        },
        absorbed_at,
        ceiling_exceeded_at,
    })
}

/// Build a record from an explicit sequence `n ↦ ln|x_n|` (`n = 0..=n_steps`)
/// instead of simulating it. Accumulators use `model`'s `f` and `g` on the
/// same values, so the record is interchangeable with a simulated one.
pub fn record_from_log_sequence<L: Fn(u64) -> f64>(
    model: &ModelSpec,
    log_abs_x: L,
    n_steps: u64,
    lambda: f64,
    mu: f64,
    opts: &SimOptions,
) -> PathRecord {
    let schedule = checkpoint_schedule(n_steps, opts.checkpoints_per_decade);
    let mut next_cp = schedule.iter().copied().peekable();
    let mut tracker = DecadeTracker::new(mu);
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut state = PathState {
        log_abs_x: log_abs_x(0),
        ..PathState::initial(1.0)
    };
    for n in 1..=n_steps {
        let x = state.log_abs_x.exp();
        let f = model.eval_f(x);
        let g = model.eval_g(x);
        state = PathState {
            n,
            sign: 1,
            log_abs_x: log_abs_x(n),
            acc_g2: state.acc_g2 + g * g,
            acc_absf: state.acc_absf + f.abs(),
            acc_xlam: state.acc_xlam + (lambda * state.log_abs_x).exp(),
        };
        tracker.observe(n, state.log_abs_x);
        if next_cp.peek() == Some(&n) {
            checkpoints.push(state);
            next_cp.next();
        }
    }
    PathRecord {
        checkpoints,
        decade_extremes: tracker.finish(),
        meta: PathMeta {
            model: model.clone(),
            noise: NoiseKind::StandardNormal,
            seed: 0,
            stream: 0,
            n_steps,
            lambda,
            mu,
        },
        absorbed_at: None,
        ceiling_exceeded_at: None,
    }
}

/// Terminal statistics of one path, the unit of ensemble aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalStats {
    pub stream: u64,
    pub n: u64,
    pub sign: i8,
    pub log_abs_x: f64,
    pub acc_g2: f64,
    pub acc_absf: f64,
    pub acc_xlam: f64,
}

impl From<&PathRecord> for TerminalStats {
    fn from(r: &PathRecord) -> Self {
        let t = r.terminal();
        TerminalStats {
            stream: r.meta.stream,
            n: t.n,
            sign: t.sign,
            log_abs_x: t.log_abs_x,
            acc_g2: t.acc_g2,
            acc_absf: t.acc_absf,
            acc_xlam: t.acc_xlam,
        }
    }
}

/// Order-independent summary of an ensemble.
///
/// The summary stores the per-path terminal statistics sorted by stream, so
/// merging partitions is exactly associative and commutative and every
/// derived quantity is a function of the multiset of paths only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnsembleSummary {
    terminals: Vec<TerminalStats>,
}

impl EnsembleSummary {
    pub fn from_paths(paths: &[PathRecord]) -> Self {
        Self::from_terminals(paths.iter().map(TerminalStats::from).collect())
    }

    pub fn from_terminals(mut terminals: Vec<TerminalStats>) -> Self {
        terminals.sort_by_key(|t| t.stream);
        EnsembleSummary { terminals }
    }

    pub fn merge(&self, other: &EnsembleSummary) -> EnsembleSummary {
        let mut all = self.terminals.clone();
        all.extend_from_slice(&other.terminals);
        Self::from_terminals(all)
    }

    pub fn terminals(&self) -> &[TerminalStats] {
        &self.terminals
    }

    pub fn count(&self) -> usize {
        self.terminals.len()
    }

    /// Fraction of paths with `|x_N| < threshold`.
    pub fn frac_below(&self, threshold: f64) -> f64 {
        if self.terminals.is_empty() {
            return f64::NAN;
        }
        let cut = threshold.ln();
        let hits = self
            .terminals
            .iter()
            .filter(|t| t.sign == 0 || t.log_abs_x < cut)
            .count();
        hits as f64 / self.terminals.len() as f64
    }

    /// Mean of a statistic, summed in stream order.
    pub fn mean<F: Fn(&TerminalStats) -> f64>(&self, stat: F) -> f64 {
        let n = self.terminals.len() as f64;
        self.terminals.iter().map(stat).sum::<f64>() / n
    }

    /// Empirical quantile (linear interpolation between order statistics).
    pub fn quantile<F: Fn(&TerminalStats) -> f64>(&self, stat: F, q: f64) -> f64 {
        let values: Vec<f64> = self.terminals.iter().map(stat).collect();
        quantile(&values, q)
    }

    pub fn median<F: Fn(&TerminalStats) -> f64>(&self, stat: F) -> f64 {
        self.quantile(stat, 0.5)
    }
}

/// Linear-interpolation quantile of unsorted values; NaN for empty input.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Paths of an ensemble together with their summary.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<PathRecord>,
    pub summary: EnsembleSummary,
}

/// Ensemble execution settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnsembleOptions {
    pub sim: SimOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Run `n_paths` independent paths on streams `0..n_paths`.
pub fn run_ensemble(
    model: &ModelSpec,
    source: &NoiseSource,
    n_paths: u64,
    n_steps: u64,
    lambda: f64,
    mu: f64,
) -> Result<Ensemble> {
    run_ensemble_with(
        model,
        source,
        n_paths,
        n_steps,
        lambda,
        mu,
        &EnsembleOptions::default(),
    )
}

pub fn run_ensemble_with(
    model: &ModelSpec,
    source: &NoiseSource,
    n_paths: u64,
    n_steps: u64,
    lambda: f64,
    mu: f64,
    opts: &EnsembleOptions,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(LabError::config("n_paths", "must be at least 1"));
    }
    model.validate()?;
    let run = || -> Vec<Result<PathRecord>> {
        (0..n_paths)
            .into_par_iter()
            .map(|stream| simulate_path_with(model, source, stream, n_steps, lambda, mu, &opts.sim))
            .collect()
    };
    let results = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| LabError::config("threads", e.to_string()))?
            .install(run),
        None => run(),
    };
    // first failure in stream order, independent of scheduling
    let paths = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = EnsembleSummary::from_paths(&paths);
    Ok(Ensemble { paths, summary })
}
