//! High-accuracy expectations `E[φ(1 + f h + g √h ξ)]` and the second-order
//! (discretized Itô) expansion they are checked against.
//!
//! Smooth integrands are integrated with a fixed Gauss rule matched to the
//! noise law and accepted only if doubling the node count changes the result
//! by less than `1e-10` relative. When `φ` is singular or non-smooth at
//! `y = 0` and the corresponding abscissa `ξ* = −(1 + f h)/(g √h)` lies in
//! the effective support of the noise, the integral against the density is
//! split at `ξ*` and each side is integrated adaptively after the
//! substitution `ξ = ξ* ± s^p`, with `p` chosen so that the integrand is
//! bounded near `s = 0`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelSpec;
use crate::noise::{NoiseKind, NoiseSpec};
use crate::quadrature::{gauss_hermite, gauss_legendre, integrate, GaussRule};

const SQRT_3: f64 = 1.732_050_807_568_877_2;
/// Relative tolerance of the node-doubling check.
pub const DOUBLING_TOL: f64 = 1e-10;
/// Normal density below `e^{-800}` is zero in double precision.
const NORMAL_CUTOFF: f64 = 40.0;
const MAX_ALPHA: f64 = 0.9;

/// Catalog test functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `|y|^α`, `α > 0`.
    PowerAlpha,
    /// `|y|^{−α}`, `0 < α < 1`.
    InvPowerAlpha,
    /// `ln|y|`.
    LogAbs,
    /// `ln²|y|`.
    LogAbsSquared,
    /// `y²`.
    Square,
}

impl PhiKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhiKind::PowerAlpha => "power_alpha",
            PhiKind::InvPowerAlpha => "inv_power_alpha",
            PhiKind::LogAbs => "log_abs",
            PhiKind::LogAbsSquared => "log_abs_squared",
            PhiKind::Square => "square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    pub kind: PhiKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl PhiSpec {
    pub fn power(alpha: f64) -> Self {
        PhiSpec {
            kind: PhiKind::PowerAlpha,
            alpha: Some(alpha),
        }
    }

    pub fn inv_power(alpha: f64) -> Self {
        PhiSpec {
            kind: PhiKind::InvPowerAlpha,
            alpha: Some(alpha),
        }
    }

    pub fn log_abs() -> Self {
        PhiSpec {
            kind: PhiKind::LogAbs,
            alpha: None,
        }
    }

    pub fn log_abs_squared() -> Self {
        PhiSpec {
            kind: PhiKind::LogAbsSquared,
            alpha: None,
        }
    }

    pub fn square() -> Self {
        PhiSpec {
            kind: PhiKind::Square,
            alpha: None,
        }
    }

    fn alpha_or_nan(&self) -> f64 {
        self.alpha.unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PhiKind::PowerAlpha => match self.alpha {
                Some(a) if a.is_finite() && a > 0.0 => Ok(()),
                _ => Err(LabError::config("phi.alpha", "power_alpha needs alpha > 0")),
            },
            PhiKind::InvPowerAlpha => match self.alpha {
                Some(a) if a > 0.0 && a < 1.0 => {
                    if a > MAX_ALPHA {
                        Err(LabError::config(
                            "phi.alpha",
                            format!("inv_power_alpha is capped at alpha <= {MAX_ALPHA}"),
                        ))
                    } else {
                        Ok(())
                    }
                }
                _ => Err(LabError::config(
                    "phi.alpha",
                    "inv_power_alpha needs 0 < alpha < 1",
                )),
            },
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self.kind {
            PhiKind::PowerAlpha => y.abs().powf(self.alpha_or_nan()),
            PhiKind::InvPowerAlpha => y.abs().powf(-self.alpha_or_nan()),
            PhiKind::LogAbs => y.abs().ln(),
            PhiKind::LogAbsSquared => {
                let l = y.abs().ln();
                l * l
            }
            PhiKind::Square => y * y,
        }
    }

    /// `φ(1 + z)`, accurate for small `z`.
    #[inline]
    fn eval_shifted(&self, z: f64) -> f64 {
        match self.kind {
            PhiKind::LogAbs if z > -1.0 => z.ln_1p(),
            PhiKind::LogAbsSquared if z > -1.0 => {
                let l = z.ln_1p();
                l * l
            }
            _ => self.eval(1.0 + z),
        }
    }

    /// `(φ(1), φ′(1), φ″(1))`.
    pub fn derivatives_at_one(&self) -> (f64, f64, f64) {
        let a = self.alpha_or_nan();
        match self.kind {
            PhiKind::PowerAlpha => (1.0, a, a * (a - 1.0)),
            PhiKind::InvPowerAlpha => (1.0, -a, a * (a + 1.0)),
            PhiKind::LogAbs => (0.0, 1.0, -1.0),
            PhiKind::LogAbsSquared => (0.0, 0.0, 2.0),
            PhiKind::Square => (1.0, 2.0, 2.0),
        }
    }

    /// Whether `φ` is a polynomial (no special point at `y = 0`).
    fn is_polynomial(&self) -> bool {
        matches!(self.kind, PhiKind::Square)
    }

    /// Exponent of the substitution that regularises the behaviour at 0.
    fn substitution_power(&self) -> f64 {
        match self.kind {
            PhiKind::InvPowerAlpha => 1.0 / (1.0 - self.alpha_or_nan()),
            PhiKind::LogAbs | PhiKind::LogAbsSquared => 3.0,
            PhiKind::PowerAlpha => 2.0,
            PhiKind::Square => 1.0,
        }
    }
}

/// `φ(1) + φ′(1) f h + ½ φ″(1) g² h`.
pub fn ito_expansion(phi: &PhiSpec, f: f64, g: f64, h: f64) -> f64 {
    let (p0, p1, p2) = phi.derivatives_at_one();
    p0 + p1 * f * h + 0.5 * p2 * g * g * h
}

fn check_inputs(phi: &PhiSpec, f: f64, g: f64, h: f64, noise: &NoiseSpec) -> Result<()> {
    phi.validate()?;
    noise.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(LabError::config("h", "must be positive"));
    }
    if !(f.is_finite() && f.abs() <= 1.0) {
        return Err(LabError::config("f", "must satisfy |f| <= 1"));
    }
    if !(g.is_finite() && g.abs() <= 1.0) {
        return Err(LabError::config("g", "must satisfy |g| <= 1"));
    }
    if phi.kind == PhiKind::InvPowerAlpha && !noise.has_density() {
        return Err(LabError::config(
            "noise.kind",
            format!(
                "{} has no density; singular phi = |y|^-alpha is not integrable against it",
                noise.kind.as_str()
            ),
        ));
    }
    Ok(())
}

fn finite_or_err(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LabError::Accuracy {
            reason: format!("{what} is not finite"),
            coarse: v,
            fine: v,
        })
    }
}

/// `E[φ(1 + f h + g √h ξ)]` for `ξ` distributed as `noise`.
pub fn expect_phi(phi: &PhiSpec, f: f64, g: f64, h: f64, noise: &NoiseSpec) -> Result<f64> {
    check_inputs(phi, f, g, h, noise)?;
    let a = f * h;
    let b = g * h.sqrt();
    if b == 0.0 {
        return finite_or_err(phi.eval_shifted(a), "phi(1 + f h)");
    }
    let xi_star = -(1.0 + a) / b;
    match noise.kind {
        NoiseKind::Rademacher => {
            let v = match phi.kind {
                // ln|1+a+b| + ln|1+a-b| = ln|(1+a)^2 - b^2|
                PhiKind::LogAbs => 0.5 * paired_log(a, b, 1.0),
                _ => 0.5 * (phi.eval_shifted(a + b) + phi.eval_shifted(a - b)),
            };
            finite_or_err(v, "expectation")
        }
        NoiseKind::StandardNormal => {
            if phi.is_polynomial() || xi_star.abs() > NORMAL_CUTOFF {
                fixed_rule_expectation(phi, a, b, |n| (gauss_hermite(n), 1.0), 64)
            } else {
                let density = |x: f64| (-0.5 * x * x).exp() * 0.398_942_280_401_432_7;
                split_expectation(phi, b, xi_star, -NORMAL_CUTOFF, NORMAL_CUTOFF, &density)
            }
        }
        NoiseKind::UniformSymmetric => {
            if phi.is_polynomial() || xi_star.abs() >= SQRT_3 {
                fixed_rule_expectation(phi, a, b, |n| (gauss_legendre(n), SQRT_3), 32)
            } else {
                let density = |_x: f64| 0.5 / SQRT_3;
                split_expectation(phi, b, xi_star, -SQRT_3, SQRT_3, &density)
            }
        }
        NoiseKind::StudentT => {
            let src = crate::noise::make_noise(noise.clone(), 0)?;
            let density = |x: f64| src.density(x).unwrap_or(0.0);
            split_expectation(phi, b, xi_star, f64::NEG_INFINITY, f64::INFINITY, &density)
        }
    }
}

/// `ln|(1+a)² − b² t²|`, the paired sum `ln|1+a+bt| + ln|1+a−bt|`, computed
/// without cancelling the first-order terms.
#[inline]
fn paired_log(a: f64, b: f64, t: f64) -> f64 {
    let bt = b * t;
    let z = a * (2.0 + a) - bt * bt;
    if z > -1.0 {
        z.ln_1p()
    } else {
        (1.0 + z).abs().ln()
    }
}

fn fixed_rule_expectation<R>(phi: &PhiSpec, a: f64, b: f64, rule: R, n: usize) -> Result<f64>
where
    R: Fn(usize) -> (std::sync::Arc<GaussRule>, f64),
{
    let eval = |n: usize| -> f64 {
        let (rule, scale) = rule(n);
        let bs = b * scale;
        match phi.kind {
            PhiKind::LogAbs => rule.expect_paired(|t| paired_log(a, bs, t)),
            _ => rule.expect(|t| phi.eval_shifted(a + bs * t)),
        }
    };
    let coarse = eval(n);
    let fine = eval(2 * n);
    if !(coarse.is_finite() && fine.is_finite()) {
        return Err(LabError::Accuracy {
            reason: "non-finite quadrature value".into(),
            coarse,
            fine,
        });
    }
    if (coarse - fine).abs() > DOUBLING_TOL * fine.abs() && coarse != fine {
        return Err(LabError::Accuracy {
            reason: format!(
                "node doubling {n} -> {} disagrees beyond {DOUBLING_TOL:e} relative",
                2 * n
            ),
            coarse,
            fine,
        });
    }
    Ok(fine)
}

/// Integrate `φ(1 + a + bξ) p(ξ)` over `[lo, hi]`, splitting at `ξ*`.
fn split_expectation(
    phi: &PhiSpec,
    b: f64,
    xi_star: f64,
    lo: f64,
    hi: f64,
    density: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    // work in the offset δ = ξ − ξ*, where y = 1 + a + bξ = bδ exactly
    let integrand = |delta: f64| -> f64 {
        let p = density(xi_star + delta);
        if p == 0.0 {
            0.0
        } else {
            phi.eval(b * delta) * p
        }
    };
    let power = phi.substitution_power();
    let mut total = 0.0;
    let mut error = 0.0;
    let mut ok = true;
    let mut add = |r: crate::quadrature::Integral| {
        total += r.value;
        error += r.error;
        ok &= r.converged;
    };
    let inside = xi_star > lo && xi_star < hi;
    if inside {
        // right of ξ*
        add(piece_from_singularity(
            &integrand,
            0.0,
            hi - xi_star,
            power,
            1.0,
        ));
        // left of ξ*
        add(piece_from_singularity(
            &integrand,
            0.0,
            lo - xi_star,
            power,
            -1.0,
        ));
    } else {
        add(plain_piece(&integrand, lo - xi_star, hi - xi_star));
    }
    if !ok || !total.is_finite() {
        return Err(LabError::Accuracy {
            reason: format!(
                "adaptive quadrature did not reach tolerance (error estimate {error:e})"
            ),
            coarse: total - error,
            fine: total,
        });
    }
    Ok(total)
}

const ADAPT_ABS: f64 = 1e-15;
const ADAPT_REL: f64 = 1e-13;
const ADAPT_MAX: usize = 4000;

/// `∫` from the singular point `c` toward `end` (`dir = ±1`).
fn piece_from_singularity(
    f: &dyn Fn(f64) -> f64,
    c: f64,
    end: f64,
    power: f64,
    dir: f64,
) -> crate::quadrature::Integral {
    let span = (end - c).abs();
    let near = span.min(1.0);
    // ξ = c + dir·s^p on s ∈ (0, near^{1/p}]
    let s_max = near.powf(1.0 / power);
    let near_part = integrate(
        |s| {
            let xi = c + dir * s.powf(power);
            f(xi) * power * s.powf(power - 1.0)
        },
        0.0,
        s_max,
        ADAPT_ABS,
        ADAPT_REL,
        ADAPT_MAX,
    );
    let start = c + dir * near;
    let far = if dir > 0.0 {
        plain_piece(f, start, end)
    } else {
        plain_piece(f, end, start)
    };
    crate::quadrature::Integral {
        value: near_part.value + far.value,
        error: near_part.error + far.error,
        intervals: near_part.intervals + far.intervals,
        converged: near_part.converged && far.converged,
    }
}

/// `∫_lo^hi f`, mapping infinite ends with `ξ = c ± 1/t`.
fn plain_piece(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> crate::quadrature::Integral {
    if lo >= hi {
        return integrate(|_| 0.0, 0.0, 0.0, 0.0, 0.0, 1);
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => integrate(f, lo, hi, ADAPT_ABS, ADAPT_REL, ADAPT_MAX),
        (true, false) => {
            // [lo, lo+1] plainly, then ξ = lo + 1/t for t ∈ (0, 1]
            let head = integrate(f, lo, lo + 1.0, ADAPT_ABS, ADAPT_REL, ADAPT_MAX);
            let tail = integrate(
                |t| f(lo + 1.0 / t) / (t * t),
                0.0,
                1.0,
                ADAPT_ABS,
                ADAPT_REL,
                ADAPT_MAX,
            );
            combine(head, tail)
        }
        (false, true) => {
            let head = integrate(f, hi - 1.0, hi, ADAPT_ABS, ADAPT_REL, ADAPT_MAX);
            let tail = integrate(
                |t| f(hi - 1.0 / t) / (t * t),
                0.0,
                1.0,
                ADAPT_ABS,
                ADAPT_REL,
                ADAPT_MAX,
            );
            combine(head, tail)
        }
        (false, false) => combine(
            plain_piece(f, f64::NEG_INFINITY, 0.0),
            plain_piece(f, 0.0, f64::INFINITY),
        ),
    }
}

fn combine(
    a: crate::quadrature::Integral,
    b: crate::quadrature::Integral,
) -> crate::quadrature::Integral {
    crate::quadrature::Integral {
        value: a.value + b.value,
        error: a.error + b.error,
        intervals: a.intervals + b.intervals,
        converged: a.converged && b.converged,
    }
}

/// One row of an Itô error scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub phi: PhiSpec,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    /// Quadrature expectation.
    pub lhs: f64,
    /// Second-order expansion.
    pub rhs: f64,
    pub err: f64,
    /// `err / (h · max(|f|, g²))`.
    pub norm_err: f64,
}

pub fn ito_report(phi: &PhiSpec, f: f64, g: f64, h: f64, noise: &NoiseSpec) -> Result<ItoReport> {
    let lhs = expect_phi(phi, f, g, h, noise)?;
    let rhs = ito_expansion(phi, f, g, h);
    let err = lhs - rhs;
    let scale = h * f.abs().max(g * g);
    let norm_err = if scale > 0.0 {
        err / scale
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ItoReport {
        phi: *phi,
        f,
        g,
        h,
        lhs,
        rhs,
        err,
        norm_err,
    })
}

/// Reports along a scan plus the trend verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoScan {
    pub reports: Vec<ItoReport>,
    /// `None` when the scan has fewer than two points.
    pub monotone: Option<bool>,
    pub strictly_decreasing: Option<bool>,
}

impl ItoScan {
    fn from_reports(reports: Vec<ItoReport>) -> Self {
        if reports.len() < 2 {
            return ItoScan {
                reports,
                monotone: None,
                strictly_decreasing: None,
            };
        }
        let mut monotone = true;
        let mut strict = true;
        for w in reports.windows(2) {
            let (prev, next) = (w[0].norm_err.abs(), w[1].norm_err.abs());
            // ties allowed up to the quadrature resolution, expressed in
            // normalised units
            let tol = DOUBLING_TOL * w[1].lhs.abs().max(1e-300)
                / (w[1].h * w[1].f.abs().max(w[1].g * w[1].g));
            monotone &= next <= prev + tol;
            strict &= next < prev;
        }
        ItoScan {
            reports,
            monotone: Some(monotone),
            strictly_decreasing: Some(strict),
        }
    }
}

/// Scan `h` over a decreasing grid at fixed `(f, g)`.
pub fn ito_error_scan(
    phi: &PhiSpec,
    f: f64,
    g: f64,
    h_grid: &[f64],
    noise: &NoiseSpec,
) -> Result<ItoScan> {
    if h_grid.is_empty() {
        return Err(LabError::config("h_grid", "must not be empty"));
    }
    if h_grid.iter().any(|&h| !(h > 0.0)) {
        return Err(LabError::config("h_grid", "entries must be positive"));
    }
    if h_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::config("h_grid", "must be strictly decreasing"));
    }
    let reports = h_grid
        .iter()
        .map(|&h| ito_report(phi, f, g, h, noise))
        .collect::<Result<Vec<_>>>()?;
    Ok(ItoScan::from_reports(reports))
}

/// Scan along the ray `(t f₀, t g₀)` at fixed `h`, `t` decreasing.
pub fn ito_ray_scan(
    phi: &PhiSpec,
    f0: f64,
    g0: f64,
    h: f64,
    t_grid: &[f64],
    noise: &NoiseSpec,
) -> Result<ItoScan> {
    if t_grid.is_empty()
        || t_grid.windows(2).any(|w| w[1] >= w[0])
        || t_grid.iter().any(|&t| !(t > 0.0))
    {
        return Err(LabError::config(
            "t_grid",
            "must be positive and strictly decreasing",
        ));
    }
    let reports = t_grid
        .iter()
        .map(|&t| ito_report(phi, t * f0, t * g0, h, noise))
        .collect::<Result<Vec<_>>>()?;
    Ok(ItoScan::from_reports(reports))
}

/// Conditional moments of `λ = ln|B|` given the current state.
pub trait LogMoments {
    /// `(E[ln|B| | x], E[ln²|B| | x])` for `B = 1 + h f(x) + √h g(x) ξ`.
    fn log_moments(&mut self, model: &ModelSpec, x: f64) -> Result<(f64, f64)>;
}

/// Direct quadrature at every call.
#[derive(Debug, Clone)]
pub struct QuadratureMoments {
    pub noise: NoiseSpec,
}

fn exact_log_moments(model: &ModelSpec, noise: &NoiseSpec, x: f64) -> Result<(f64, f64)> {
    let f = model.eval_f(x);
    let g = model.eval_g(x);
    if g == 0.0 {
        let l = (model.h * f).ln_1p();
        return Ok((l, l * l));
    }
    let m1 = expect_phi(&PhiSpec::log_abs(), f, g, model.h, noise)?;
    let m2 = expect_phi(&PhiSpec::log_abs_squared(), f, g, model.h, noise)?;
    Ok((m1, m2))
}

impl LogMoments for QuadratureMoments {
    fn log_moments(&mut self, model: &ModelSpec, x: f64) -> Result<(f64, f64)> {
        exact_log_moments(model, &self.noise, x)
    }
}

/// Quadrature memoised on a grid in `ln|x|`.
///
/// The clamped power-law family is even in `x`, so the moments depend on
/// `ln|x|` only. Values are stored normalised by `h·max(|f|, g²)` at the grid
/// node and interpolated with a four-point Lagrange stencil, which keeps the
/// relative accuracy uniform as `x → 0`. States with `g(x) = 0` are
/// evaluated exactly.
#[derive(Debug, Clone)]
pub struct MemoizedMoments {
    noise: NoiseSpec,
    nodes_per_unit: f64,
    cache: HashMap<i64, (f64, f64)>,
    model: Option<ModelSpec>,
}

impl MemoizedMoments {
    pub fn new(noise: NoiseSpec, nodes_per_unit: f64) -> Self {
        MemoizedMoments {
            noise,
            nodes_per_unit,
            cache: HashMap::new(),
            model: None,
        }
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.len()
    }

    fn normaliser(model: &ModelSpec, x: f64) -> f64 {
        let f = model.eval_f(x);
        let g = model.eval_g(x);
        model.h * f.abs().max(g * g)
    }

    fn node(&mut self, model: &ModelSpec, k: i64) -> Result<(f64, f64)> {
        if let Some(v) = self.cache.get(&k) {
            return Ok(*v);
        }
        let x = (k as f64 / self.nodes_per_unit).exp();
        let (m1, m2) = exact_log_moments(model, &self.noise, x)?;
        let scale = Self::normaliser(model, x);
        let v = if scale > 0.0 {
            (m1 / scale, m2 / scale)
        } else {
            (0.0, 0.0)
        };
        self.cache.insert(k, v);
        Ok(v)
    }
}

impl LogMoments for MemoizedMoments {
    fn log_moments(&mut self, model: &ModelSpec, x: f64) -> Result<(f64, f64)> {
        if self.model.as_ref() != Some(model) {
            self.cache.clear();
            self.model = Some(model.clone());
        }
        if model.eval_g(x) == 0.0 {
            return exact_log_moments(model, &self.noise, x);
        }
        let pos = x.abs().ln() * self.nodes_per_unit;
        let k0 = pos.floor() as i64;
        let t = pos - k0 as f64;
        // Lagrange weights on nodes k0-1, k0, k0+1, k0+2
        let w = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let (v1, v2) = self.node(model, k0 - 1 + j as i64)?;
            r1 += wj * v1;
            r2 += wj * v2;
        }
        let scale = Self::normaliser(model, x);
        Ok((r1 * scale, r2 * scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_identity_example() {
        let v = expect_phi(
            &PhiSpec::square(),
            -0.5,
            0.3,
            0.01,
            &NoiseSpec::standard_normal(),
        )
        .unwrap();
        assert_relative_eq!(v, 0.990925, epsilon = 1e-14);
        assert_relative_eq!(
            ito_expansion(&PhiSpec::square(), -0.5, 0.3, 0.01),
            0.9909,
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_at_origin_is_zero() {
        for noise in [
            NoiseSpec::standard_normal(),
            NoiseSpec::uniform_symmetric(),
            NoiseSpec::rademacher(),
        ] {
            assert_eq!(
                expect_phi(&PhiSpec::log_abs(), 0.0, 0.0, 0.01, &noise).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn expansion_catalog() {
        let (f, g, h) = (-0.2, 0.7, 0.03);
        assert_relative_eq!(
            ito_expansion(&PhiSpec::log_abs(), f, g, h),
            f * h - g * g * h / 2.0,
            epsilon = 1e-16
        );
        assert_relative_eq!(
            ito_expansion(&PhiSpec::log_abs_squared(), f, g, h),
            g * g * h,
            epsilon = 1e-16
        );
        let a = 0.3;
        assert_relative_eq!(
            ito_expansion(&PhiSpec::inv_power(a), f, g, h),
            1.0 - a * f * h + 0.5 * a * (a + 1.0) * g * g * h,
            epsilon = 1e-16
        );
    }

    #[test]
    fn singular_phi_rejected_without_density() {
        let err = expect_phi(
            &PhiSpec::inv_power(0.5),
            -0.1,
            0.5,
            0.01,
            &NoiseSpec::rademacher(),
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Config { .. }));
        assert!(PhiSpec::inv_power(1.0).validate().is_err());
        assert!(PhiSpec::inv_power(0.95).validate().is_err());
        assert!(PhiSpec::power(0.0).validate().is_err());
    }

    #[test]
    fn inv_power_closed_form_uniform() {
        // y = 1 + a + bξ uniform on [1+a-b√3, 1+a+b√3] straddling zero:
        // E|y|^{-α} = (|lo|^{1-α} + |hi|^{1-α}) / ((1-α)(hi-lo))
        let (f, g, h, alpha): (f64, f64, f64, f64) = (-0.5, 1.0, 1.0, 0.5);
        let a = f * h;
        let b = g * h.sqrt();
        let lo = 1.0 + a - b * SQRT_3;
        let hi = 1.0 + a + b * SQRT_3;
        let exact =
            (lo.abs().powf(1.0 - alpha) + hi.abs().powf(1.0 - alpha)) / ((1.0 - alpha) * (hi - lo));
        let v = expect_phi(
            &PhiSpec::inv_power(alpha),
            f,
            g,
            h,
            &NoiseSpec::uniform_symmetric(),
        )
        .unwrap();
        assert_relative_eq!(v, exact, max_relative = 1e-10);
    }

    #[test]
    fn log_closed_form_uniform_straddling_zero() {
        // E ln|y| for y uniform on [lo, hi] with lo < 0 < hi
        let (f, g, h): (f64, f64, f64) = (0.0, 1.0, 1.0);
        let lo: f64 = 1.0 - SQRT_3;
        let hi: f64 = 1.0 + SQRT_3;
        let anti = |y: f64| if y == 0.0 { 0.0 } else { y * y.abs().ln() - y };
        let exact = (anti(hi) - anti(lo)) / (hi - lo);
        let v = expect_phi(
            &PhiSpec::log_abs(),
            f,
            g,
            h,
            &NoiseSpec::uniform_symmetric(),
        )
        .unwrap();
        assert_relative_eq!(v, exact, max_relative = 1e-10);
    }

    #[test]
    fn symmetric_noise_even_phi() {
        for noise in [
            NoiseSpec::standard_normal(),
            NoiseSpec::uniform_symmetric(),
            NoiseSpec::rademacher(),
        ] {
            let p = PhiSpec::power(0.7);
            let a = expect_phi(&p, -0.3, 0.4, 0.05, &noise).unwrap();
            let b = expect_phi(&p, -0.3, -0.4, 0.05, &noise).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn scan_validates_grid() {
        let n = NoiseSpec::standard_normal();
        assert!(ito_error_scan(&PhiSpec::square(), -0.3, 0.4, &[], &n).is_err());
        assert!(ito_error_scan(&PhiSpec::square(), -0.3, 0.4, &[0.01, 0.1], &n).is_err());
        let single = ito_error_scan(&PhiSpec::square(), -0.3, 0.4, &[0.01], &n).unwrap();
        assert_eq!(single.reports.len(), 1);
        assert!(single.monotone.is_none());
    }

    #[test]
    fn memoized_matches_direct() {
        let model = ModelSpec::with_params(0.0, 1.0, 1.0, 2.0);
        let noise = NoiseSpec::standard_normal();
        let mut memo = MemoizedMoments::new(noise.clone(), 64.0);
        let mut direct = QuadratureMoments { noise };
        for &x in &[0.5, 0.123, 3.3e-3, 7.7e-5, -0.02] {
            let (m1, m2) = memo.log_moments(&model, x).unwrap();
            let (d1, d2) = direct.log_moments(&model, x).unwrap();
            assert_relative_eq!(m1, d1, max_relative = 1e-8);
            assert_relative_eq!(m2, d2, max_relative = 1e-8);
        }
        assert!(memo.cached_nodes() > 0);
    }

    #[test]
    fn deterministic_moments_are_exact() {
        let model = ModelSpec {
            a_g: 0.0,
            ..ModelSpec::with_params(1.0, 1.0, 0.0, 2.0)
        };
        let mut memo = MemoizedMoments::new(NoiseSpec::standard_normal(), 64.0);
        let (m1, m2) = memo.log_moments(&model, 0.3).unwrap();
        assert_eq!(m2 - m1 * m1, 0.0);
        assert_eq!(m1, (-0.003f64).ln_1p());
    }
}
