//! Limit statistics computed from path records, plus standalone
//! sequence-limit utilities.
//!
//! Estimators read the checkpoints and online accumulators of a
//! [`PathRecord`]; the martingale diagnostic replays a path from its noise
//! stream because it needs every step, not only checkpoints.

use serde::{Deserialize, Serialize};

use crate::engine::{step, PathRecord, PathState};
use crate::error::{LabError, Result};
use crate::model::ModelSpec;
use crate::noise::NoiseSource;
use crate::oracle::LogMoments;

/// Steps always excluded from the default fit window.
pub const BURN_IN: u64 = 1_000;

/// Minimum number of checkpoints a log-log fit accepts.
pub const MIN_FIT_POINTS: usize = 8;

/// Least-squares fit of `ln|x_n|` against `ln n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub window: (u64, u64),
    pub r_squared: f64,
    pub points: usize,
}

/// Default fit window: the last two decades before the terminal step, never
/// starting before [`BURN_IN`].
pub fn default_window(n_terminal: u64) -> (u64, u64) {
    ((n_terminal / 100).max(BURN_IN), n_terminal)
}

/// Slope of `ln|x_n|` against `ln n` over the checkpoints in `window`
/// (inclusive, in steps). `None` selects [`default_window`].
pub fn loglog_slope(path: &PathRecord, window: Option<(u64, u64)>) -> Result<DecayEstimate> {
    let (lo, hi) = window.unwrap_or_else(|| default_window(path.terminal().n));
    if lo > hi {
        return Err(LabError::analysis(format!("empty fit window [{lo}, {hi}]")));
    }
    if let Some(at) = path.absorbed_at {
        if at <= hi {
            return Err(LabError::analysis(format!(
                "path absorbed at zero at step {at}, inside fit window"
            )));
        }
    }
    let pts: Vec<(f64, f64)> = path
        .checkpoints
        .iter()
        .filter(|c| c.n >= lo && c.n <= hi && c.n > 0)
        .map(|c| ((c.n as f64).ln(), c.log_abs_x))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(LabError::analysis(format!(
            "{} checkpoints in window [{lo}, {hi}], need at least {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (sse / (k - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(DecayEstimate {
        slope,
        intercept,
        stderr,
        window: (lo, hi),
        r_squared,
        points: pts.len(),
    })
}

fn terminal_ratio(path: &PathRecord, acc: f64, name: &str) -> Result<f64> {
    let t = path.terminal();
    if t.is_absorbed() {
        return Err(LabError::analysis(format!(
            "path absorbed at zero at step {:?}",
            path.absorbed_at
        )));
    }
    if acc <= 0.0 {
        return Err(LabError::analysis(format!(
            "{name} is zero at the terminal checkpoint"
        )));
    }
    Ok(t.log_abs_x / acc)
}

/// `ln|x_N| / Σ g²(x_i)` at the terminal checkpoint.
pub fn comparison_ratio_g(path: &PathRecord) -> Result<f64> {
    terminal_ratio(path, path.terminal().acc_g2, "sum of g^2")
}

/// `ln|x_N| / Σ |f(x_i)|` at the terminal checkpoint.
pub fn comparison_ratio_f(path: &PathRecord) -> Result<f64> {
    terminal_ratio(path, path.terminal().acc_absf, "sum of |f|")
}

/// `(n, |x_n| n^{1/μ} / constant)` at every checkpoint. Requires `μ > 0` and
/// `constant > 0`; otherwise the values are meaningless.
pub fn exact_rate_statistic(path: &PathRecord, mu: f64, constant: f64) -> Vec<(u64, f64)> {
    path.checkpoints
        .iter()
        .map(|c| {
            let v = if c.is_absorbed() {
                0.0
            } else {
                (c.log_abs_x + (c.n as f64).ln() / mu).exp()
            };
            (c.n, v / constant)
        })
        .collect()
}

/// Per-decade extremes of `|x_n| n^{1/μ}` and whether each decade broke the
/// records set by all earlier decades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeRecord {
    pub decade: u32,
    pub max: f64,
    pub min: f64,
    pub log_max: f64,
    pub log_min: f64,
    pub new_max: bool,
    pub new_min: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationRecords {
    pub mu: f64,
    pub decades: Vec<DecadeRecord>,
}

impl OscillationRecords {
    fn in_range(&self, first: u32, last: u32) -> impl Iterator<Item = &DecadeRecord> {
        self.decades
            .iter()
            .filter(move |d| d.decade >= first && d.decade <= last)
    }

    /// Largest `ln(|x_n| n^{1/μ})` over decades `first..=last`.
    pub fn window_log_max(&self, first: u32, last: u32) -> Option<f64> {
        self.in_range(first, last)
            .map(|d| d.log_max)
            .reduce(f64::max)
    }

    /// Smallest `ln(|x_n| n^{1/μ})` over decades `first..=last`.
    pub fn window_log_min(&self, first: u32, last: u32) -> Option<f64> {
        self.in_range(first, last)
            .map(|d| d.log_min)
            .reduce(f64::min)
    }

    pub fn decade(&self, decade: u32) -> Option<&DecadeRecord> {
        self.decades.iter().find(|d| d.decade == decade)
    }

    /// The final decade with more than one step, see [`final_decade`].
    pub fn final_record(&self, n_steps: u64) -> Option<&DecadeRecord> {
        self.decade(final_decade(n_steps))
    }
}

/// 1-based decade holding step `n` (decade `d` spans `[10^{d-1}, 10^d)`).
pub fn decade_of(n: u64) -> u32 {
    n.max(1).ilog10() + 1
}

/// Last decade of a run of `n_steps` steps that holds more than one step:
/// when `n_steps` is a power of ten its own decade contains that single
/// step, so the decade before it is the final one.
pub fn final_decade(n_steps: u64) -> u32 {
    decade_of(n_steps.saturating_sub(1).max(1))
}

/// Record-breaking summary with strict comparison.
pub fn oscillation_records(path: &PathRecord) -> OscillationRecords {
    oscillation_records_with_tolerance(path, 0.0)
}

/// Like [`oscillation_records`], but a decade only counts as a new record
/// when it beats the earlier extreme by more than `log_tol` in log units.
/// Decade 1 has nothing to beat and never sets a record.
pub fn oscillation_records_with_tolerance(path: &PathRecord, log_tol: f64) -> OscillationRecords {
    let mut run_max = f64::NEG_INFINITY;
    let mut run_min = f64::INFINITY;
    let mut decades = Vec::with_capacity(path.decade_extremes.len());
    for (i, d) in path.decade_extremes.iter().enumerate() {
        let first = i == 0;
        decades.push(DecadeRecord {
            decade: d.decade,
            max: d.log_max.exp(),
            min: d.log_min.exp(),
            log_max: d.log_max,
            log_min: d.log_min,
            new_max: !first && d.log_max > run_max + log_tol,
            new_min: !first && d.log_min < run_min - log_tol,
        });
        run_max = run_max.max(d.log_max);
        run_min = run_min.min(d.log_min);
    }
    OscillationRecords {
        mu: path.meta.mu,
        decades,
    }
}

/// Diagnostics of the martingale part of `ln|x_n|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiag {
    pub n_steps: u64,
    /// `Σ d_{i+1}` with `d_{i+1} = ln|B_i| − E[ln|B_i| | x_i]`.
    pub sum_d: f64,
    /// `Σ (E[ln²|B_i| | x_i] − E[ln|B_i| | x_i]²)`.
    pub qv: f64,
    pub m_over_qv: f64,
    /// `h Σ g²(x_i)` over the same steps.
    pub h_acc_g2: f64,
    pub qv_over_h_acc_g2: f64,
    /// `(decade, max_n |Σ_{i≤n} ξ_i| / √n)` over steps in each decade.
    pub m_over_sqrt_n: Vec<(u32, f64)>,
    /// `(n, qv)` at the end of each decade and at the terminal step.
    pub qv_trace: Vec<(u64, f64)>,
}

/// Replay stream `stream` of `source` through `model` for `n_steps` steps and
/// accumulate the martingale diagnostics, using `moments` for the
/// conditional moments of the log-bracket.
pub fn log_martingale_diag(
    model: &ModelSpec,
    source: &NoiseSource,
    stream: u64,
    n_steps: u64,
    moments: &mut dyn LogMoments,
) -> Result<MartingaleDiag> {
    if n_steps == 0 {
        return Err(LabError::config("n_steps", "must be at least 1"));
    }
    let sqrt_h = model.h.sqrt();
    let mut state = PathState::initial(model.x0);
    let mut sum_d = 0.0;
    let mut qv = 0.0;
    let mut sum_xi = 0.0;
    let mut decade = 1u32;
    let mut boundary = 10u64;
    let mut decade_max = 0.0f64;
    let mut m_over_sqrt_n = Vec::new();
    let mut qv_trace = Vec::new();
    for (i, xi) in source.stream(stream, 0).take(n_steps as usize).enumerate() {
        let n = i as u64 + 1;
        if !state.is_absorbed() {
            let x = state.x();
            let (phi, e2) = moments.log_moments(model, x)?;
            let incr = model.h * model.eval_f(x) + sqrt_h * model.eval_g(x) * xi;
            let lam = if incr > -1.0 {
                incr.ln_1p()
            } else {
                (-(1.0 + incr)).ln()
            };
            if lam.is_finite() {
                sum_d += lam - phi;
            }
            qv += e2 - phi * phi;
        }
        state = step(&state, model, xi, 0.0);
        if state.log_abs_x.is_nan() {
            return Err(LabError::Simulation {
                stream,
                step: n,
                reason: "NaN in replayed state".into(),
            });
        }
        sum_xi += xi;
        if n >= boundary {
            m_over_sqrt_n.push((decade, decade_max));
            qv_trace.push((n - 1, qv));
            decade += 1;
            boundary = boundary.saturating_mul(10);
            decade_max = 0.0;
        }
        decade_max = decade_max.max(sum_xi.abs() / (n as f64).sqrt());
    }
    m_over_sqrt_n.push((decade, decade_max));
    qv_trace.push((n_steps, qv));
    let h_acc_g2 = model.h * state.acc_g2;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    Ok(MartingaleDiag {
        n_steps,
        sum_d,
        qv,
        m_over_qv: ratio(sum_d, qv),
        h_acc_g2,
        qv_over_h_acc_g2: ratio(qv, h_acc_g2),
        m_over_sqrt_n,
        qv_trace,
    })
}

/// Weighted average `Σ a_i κ_i / Σ a_i`.
pub fn toeplitz_average(a: &[f64], kappa: &[f64]) -> Result<f64> {
    if a.len() != kappa.len() {
        return Err(LabError::analysis(format!(
            "weights have length {}, values {}",
            a.len(),
            kappa.len()
        )));
    }
    if let Some(i) = a.iter().position(|&w| !(w >= 0.0)) {
        return Err(LabError::analysis(format!("weight {i} is negative or NaN")));
    }
    let den: f64 = a.iter().sum();
    if den == 0.0 {
        return Err(LabError::analysis("sum of weights is zero"));
    }
    let num: f64 = a.iter().zip(kappa).map(|(w, k)| w * k).sum();
    Ok(num / den)
}

/// `y_N / N^{1/(1+γ)}` with `N = y.len()` (the sequence is 1-based).
pub fn gamma_limit_check(y: &[f64], gamma: f64) -> Result<f64> {
    let last = *y
        .last()
        .ok_or_else(|| LabError::analysis("empty sequence"))?;
    if let Some(i) = y.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(LabError::analysis(format!(
            "sequence is not increasing at index {}",
            i + 2
        )));
    }
    Ok(last / (y.len() as f64).powf(1.0 / (1.0 + gamma)))
}

/// Output of [`ln_invert_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LnInvertCheck {
    /// `−ln x_N / Σ x_i^λ`.
    pub ratio_b: f64,
    /// `ln x_N / ln N`.
    pub slope: f64,
    /// Whether `ratio_b` looks settled at a positive value: it is positive
    /// and changed by less than 10% relative between `N/10` and `N`.
    pub applicable: bool,
}

/// Check a positive sequence `x_1, …, x_N` (1-based) against the
/// log-inversion rule: if `−ln x_n / Σ x_i^λ → b > 0` then
/// `ln x_n / ln n → −1/λ`.
pub fn ln_invert_check(x: &[f64], lambda: f64) -> Result<LnInvertCheck> {
    if x.len() < 10 {
        return Err(LabError::analysis("need at least 10 terms"));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(LabError::analysis(format!(
            "term {} is not positive",
            i + 1
        )));
    }
    let n = x.len();
    let n_early = n / 10;
    let mut acc = 0.0;
    let mut b_early = f64::NAN;
    for (i, v) in x.iter().enumerate() {
        acc += v.powf(lambda);
        if i + 1 == n_early {
            b_early = -v.ln() / acc;
        }
    }
    let ratio_b = -x[n - 1].ln() / acc;
    let slope = x[n - 1].ln() / (n as f64).ln();
    let applicable = ratio_b.is_finite()
        && ratio_b > 0.0
        && b_early.is_finite()
        && ((ratio_b - b_early) / ratio_b).abs() < 0.1;
    Ok(LnInvertCheck {
        ratio_b,
        slope,
        applicable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{record_from_log_sequence, simulate_path, SimOptions};
    use crate::noise::{make_noise, NoiseSpec};
    use crate::oracle::{MemoizedMoments, QuadratureMoments};
    use approx::assert_relative_eq;

    fn synthetic<L: Fn(u64) -> f64>(log_x: L, n: u64, mu: f64) -> PathRecord {
        let model = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
        record_from_log_sequence(&model, log_x, n, 1.0, mu, &SimOptions::default())
    }

    #[test]
    fn exact_power_laws_recover_slope() {
        let p = synthetic(|n| -0.5 * (n.max(1) as f64).ln(), 100_000, 2.0);
        let est = loglog_slope(&p, None).unwrap();
        assert_relative_eq!(est.slope, -0.5, epsilon = 1e-12);
        assert_eq!(est.window, (1_000, 100_000));
        let p = synthetic(|n| 100f64.ln() - (n.max(1) as f64).ln(), 100_000, 1.0);
        assert_relative_eq!(loglog_slope(&p, None).unwrap().slope, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_needs_enough_points() {
        let p = synthetic(|n| -(n.max(1) as f64).ln(), 5_000, 1.0);
        assert!(loglog_slope(&p, Some((4_000, 5_000))).is_err());
    }

    #[test]
    fn absorbed_path_names_step() {
        let mut p = synthetic(|n| -(n.max(1) as f64).ln(), 100_000, 1.0);
        p.absorbed_at = Some(12_345);
        let msg = loglog_slope(&p, None).unwrap_err().to_string();
        assert!(msg.contains("12345"), "{msg}");
    }

    #[test]
    fn comparison_ratio_arithmetic() {
        let mut p = synthetic(|_| -1.0, 100, 1.0);
        let t = p.checkpoints.last_mut().unwrap();
        t.log_abs_x = -5.0;
        t.acc_g2 = 1000.0;
        t.acc_absf = 500.0;
        assert_relative_eq!(comparison_ratio_g(&p).unwrap(), -0.005, epsilon = 1e-18);
        assert_relative_eq!(comparison_ratio_f(&p).unwrap(), -0.01, epsilon = 1e-18);
        let t = p.checkpoints.last_mut().unwrap();
        t.acc_g2 = 0.0;
        assert!(comparison_ratio_g(&p).is_err());
    }

    #[test]
    fn deterministic_drift_ratio_and_exact_rate() {
        let mut model = ModelSpec::with_params(1.0, 1.0, 0.0, 2.0);
        model.x0 = 0.5;
        let src = make_noise(NoiseSpec::standard_normal(), 1).unwrap();
        let p = simulate_path(&model, &src, 0, 1_000_000, 1.0, 1.0).unwrap();
        let r = comparison_ratio_f(&p).unwrap();
        assert!((r + 0.01).abs() < 0.001, "{r}");
        let traj = exact_rate_statistic(&p, 1.0, 100.0);
        let last = traj.last().unwrap().1;
        assert!((last - 1.0).abs() < 0.01, "{last}");
        let halved = exact_rate_statistic(&p, 1.0, 200.0);
        for (a, b) in traj.iter().zip(&halved) {
            assert_eq!(a.1 / 2.0, b.1);
        }
    }

    #[test]
    fn constant_statistic_sets_no_records() {
        let p = synthetic(|n| -0.5 * (n.max(1) as f64).ln(), 100_000, 2.0);
        let rec = oscillation_records(&p);
        assert_eq!(rec.decades.len(), 6);
        for d in &rec.decades {
            assert_relative_eq!(d.max, 1.0, epsilon = 1e-12);
            assert!(!d.new_max && !d.new_min);
        }
    }

    #[test]
    fn records_detect_growing_oscillation() {
        // ln stat = sin(n)·ln n: amplitude grows every decade
        let p = synthetic(
            |n| {
                let l = (n.max(1) as f64).ln();
                (n as f64).sin() * l - 0.5 * l
            },
            99_999,
            2.0,
        );
        let rec = oscillation_records(&p);
        assert!(rec.decades[1..].iter().all(|d| d.new_max && d.new_min));
        assert!(rec.window_log_max(4, 5).unwrap() > rec.window_log_max(1, 3).unwrap());
        assert!(rec.window_log_min(4, 5).unwrap() < rec.window_log_min(1, 3).unwrap());
    }

    #[test]
    fn decade_indexing() {
        assert_eq!(decade_of(1), 1);
        assert_eq!(decade_of(9), 1);
        assert_eq!(decade_of(10), 2);
        assert_eq!(decade_of(10_000_000), 8);
        assert_eq!(final_decade(10_000_000), 7);
        assert_eq!(final_decade(5_000_000), 7);
        assert_eq!(final_decade(1), 1);
    }

    #[test]
    fn martingale_part_vanishes_without_noise() {
        let model = ModelSpec::with_params(1.0, 1.0, 0.0, 2.0);
        let src = make_noise(NoiseSpec::standard_normal(), 3).unwrap();
        let mut m = QuadratureMoments {
            noise: NoiseSpec::standard_normal(),
        };
        let d = log_martingale_diag(&model, &src, 0, 1_000, &mut m).unwrap();
        assert_eq!(d.qv, 0.0);
        assert_eq!(d.sum_d, 0.0);
    }

    #[test]
    fn martingale_diag_short_run() {
        let model = ModelSpec::with_params(0.0, 2.0, 1.0, 2.0);
        let src = make_noise(NoiseSpec::standard_normal(), 5).unwrap();
        let mut m = MemoizedMoments::new(NoiseSpec::standard_normal(), 8.0);
        let d = log_martingale_diag(&model, &src, 0, 20_000, &mut m).unwrap();
        assert!(d.qv > 0.0);
        assert!(
            (d.qv_over_h_acc_g2 - 1.0).abs() < 0.05,
            "{}",
            d.qv_over_h_acc_g2
        );
        assert!(d.qv_trace.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(d.m_over_sqrt_n.len(), 5);
    }

    #[test]
    fn toeplitz_examples() {
        assert_eq!(toeplitz_average(&[1.0; 5], &[2.5; 5]).unwrap(), 2.5);
        let n = 10_000;
        let a: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let k: Vec<f64> = (1..=n).map(|i: i32| 3.0 - 0.5f64.powi(i)).collect();
        assert!((toeplitz_average(&a, &k).unwrap() - 3.0).abs() < 1e-6);
        assert!(toeplitz_average(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(toeplitz_average(&[1.0], &[1.0, 2.0]).is_err());
        assert!(toeplitz_average(&[-1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gamma_limit_examples() {
        let (c, gamma) = (2.0f64, 2.0f64);
        let n = 1_000_000;
        let mut y = Vec::with_capacity(n);
        let mut v = 1.0f64;
        for _ in 0..n {
            y.push(v);
            v += c * v.powf(-gamma);
        }
        let s = gamma_limit_check(&y, gamma).unwrap();
        assert!((s - 6f64.cbrt()).abs() < 1e-3, "{s}");
        let exact: Vec<f64> = (1..=100)
            .map(|i| (i as f64).powf(1.0 / 3.0) * 6f64.cbrt())
            .collect();
        assert_relative_eq!(
            gamma_limit_check(&exact, 2.0).unwrap(),
            6f64.cbrt(),
            epsilon = 1e-14
        );
        assert!(gamma_limit_check(&[1.0, 2.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn ln_invert_examples() {
        let n = 1_000_000;
        let x: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64).collect();
        let r = ln_invert_check(&x, 1.0).unwrap();
        // Σ1/i = ln n + γ + …, so b̂ = ln n / (ln n + 0.5772…)
        let h_n: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        assert_relative_eq!(r.ratio_b, (n as f64).ln() / h_n, max_relative = 1e-12);
        assert!((r.ratio_b - 1.0).abs() < 0.05);
        assert_relative_eq!(r.slope, -1.0, epsilon = 1e-12);
        assert!(r.applicable);

        let x: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-0.5)).collect();
        let r = ln_invert_check(&x, 2.0).unwrap();
        assert!((r.ratio_b - 0.5).abs() < 0.03, "{}", r.ratio_b);
        assert_relative_eq!(r.slope, -0.5, epsilon = 1e-12);
        assert!(r.applicable);

        let x: Vec<f64> = (1..=500).map(|i| (-(i as f64)).exp()).collect();
        assert!(!ln_invert_check(&x, 1.0).unwrap().applicable);
    }
}
