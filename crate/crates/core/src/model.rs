//! Clamped power-law nonlinearities and the regime classifier.
//!
//! The recursion is `x_{n+1} = x_n (1 + h f(x_n) + √h g(x_n) ξ_{n+1})` with
//!
//! ```text
//! f(u) = clamp(−a_f |u|^μ_f, −cap, cap)
//! g(u) = min(√a_g |u|^{μ_g/2}, cap)
//! ```
//!
//! so `a_f > 0` is a stabilising drift. Both functions are exact power laws
//! below the clamp threshold, hence the local asymptotics near zero hold
//! without correction terms.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quadrature;

fn default_cap() -> f64 {
    1.0
}

/// Parameters of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Step size.
    pub h: f64,
    /// Initial value.
    pub x0: f64,
    pub a_f: f64,
    pub mu_f: f64,
    pub a_g: f64,
    pub mu_g: f64,
    /// Saturation bound for |f| and |g|, in (0, 1].
    #[serde(default = "default_cap")]
    pub cap: f64,
}

impl ModelSpec {
    /// Model with `h = 0.01`, `x0 = 0.5` and unit cap.
    pub fn with_params(a_f: f64, mu_f: f64, a_g: f64, mu_g: f64) -> Self {
        ModelSpec {
            h: 0.01,
            x0: 0.5,
            a_f,
            mu_f,
            a_g,
            mu_g,
            cap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(LabError::config(
                    format!("model.{name}"),
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        positive("h", self.h)?;
        positive("mu_f", self.mu_f)?;
        positive("mu_g", self.mu_g)?;
        if !self.x0.is_finite() {
            return Err(LabError::config("model.x0", "must be finite"));
        }
        if !self.a_f.is_finite() {
            return Err(LabError::config("model.a_f", "must be finite"));
        }
        if !(self.a_g.is_finite() && self.a_g >= 0.0) {
            return Err(LabError::config(
                "model.a_g",
                "must be nonnegative and finite",
            ));
        }
        if !(self.cap > 0.0 && self.cap <= 1.0) {
            return Err(LabError::config(
                "model.cap",
                format!("must lie in (0, 1], got {}", self.cap),
            ));
        }
        Ok(())
    }

    /// Drift nonlinearity.
    #[inline]
    pub fn eval_f(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        (-self.a_f * u.abs().powf(self.mu_f)).clamp(-self.cap, self.cap)
    }

    /// Diffusion nonlinearity (nonnegative).
    #[inline]
    pub fn eval_g(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        (self.a_g.sqrt() * u.abs().powf(0.5 * self.mu_g)).min(self.cap)
    }

    /// `lim_{u→0} f(u)/g²(u)`, evaluated from the exponents.
    pub fn limit_l(&self) -> f64 {
        if self.a_f == 0.0 {
            return 0.0;
        }
        if self.a_g == 0.0 {
            return if self.a_f > 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
        }
        if self.mu_f < self.mu_g {
            if self.a_f > 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else if self.mu_f == self.mu_g {
            -self.a_f / self.a_g
        } else {
            0.0
        }
    }
}

/// Parameter regime of the small-`x` dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// Noise dominates: `μ_f > μ_g` (or `f ≡ 0`).
    CaseI,
    /// Balanced exponents, `μ_f = μ_g` and `−2a_f < a_g`.
    CaseIi,
    /// Drift dominates: `μ_f < μ_g`, `a_f > 0`.
    CaseIii,
    /// Destabilising drift beats the noise near zero.
    Unstable,
    OutOfTheory,
}

impl CaseTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseTag::CaseI => "case_i",
            CaseTag::CaseIi => "case_ii",
            CaseTag::CaseIii => "case_iii",
            CaseTag::Unstable => "unstable",
            CaseTag::OutOfTheory => "out_of_theory",
        }
    }
}

/// Classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// `sup_u 2f(u)/g²(u)`; for stabilising drift this is the closed-form
    /// bound 0.
    pub beta: f64,
    /// `lim_{u→0} f(u)/g²(u)`.
    pub limit_l: f64,
    pub case_tag: CaseTag,
    /// Decay exponent: `ln|x_n| / ln n → −1/λ`.
    pub lambda: Option<f64>,
    /// Limit of `|x_n| n^{1/μ_f}` in the drift-dominated case.
    pub exact_constant: Option<f64>,
    pub oscillatory: bool,
    /// Predicted limit of `ln|x_n| / Σ g²(x_i)`.
    pub ratio_g_limit: Option<f64>,
    /// Predicted limit of `ln|x_n| / Σ |f(x_i)|`.
    pub ratio_f_limit: Option<f64>,
    /// Result that each prediction rests on.
    pub citations: Vec<String>,
    pub notes: Vec<String>,
}

pub const CITE_STABILITY: &str =
    "stability theorem (sup 2f/g^2 < 1 implies x_n -> 0 a.s. for small h)";
pub const CITE_INSTABILITY: &str =
    "instability theorem (f > 0 and liminf 2f/g^2 > 1 near 0: x_n does not tend to 0)";
pub const CITE_COMPARISON_G: &str = "comparison theorem (a): ln|x_n| / sum g^2(x_i) -> h(L - 1/2)";
pub const CITE_COMPARISON_F: &str = "comparison theorem (b): ln|x_n| / sum |f(x_i)| -> -h";
pub const CITE_DECAY: &str = "decay-exponent corollary: ln|x_n| / ln n -> -1/lambda";
pub const CITE_EXACT: &str =
    "exact decay rate theorem: |x_n| n^(1/mu_f) -> (1/(h a_f mu_f))^(1/mu_f)";
pub const CITE_OSCILLATION: &str = "oscillation theorem: limsup |x_n| n^(1/mu_g) = inf, liminf = 0";

/// Classify the regime of `model` and predict its asymptotics.
pub fn classify_regime(model: &ModelSpec) -> Result<RegimeReport> {
    model.validate()?;
    if model.a_g == 0.0 && model.a_f <= 0.0 {
        return Err(LabError::config(
            "model.a_g",
            "a_g = 0 with a_f <= 0: no stabilising drift and no noise, neither stability nor decay theory applies",
        ));
    }
    let (a_f, mu_f, a_g, mu_g, h) = (model.a_f, model.mu_f, model.a_g, model.mu_g, model.h);
    let limit_l = model.limit_l();
    let mut notes = Vec::new();

    let case_tag = if a_f == 0.0 {
        // f ≡ 0 behaves like μ_f = ∞
        notes.push("a_f = 0: f vanishes identically, treated as noise-dominated".to_string());
        CaseTag::CaseI
    } else if a_f > 0.0 && (a_g == 0.0 || mu_f < mu_g) {
        CaseTag::CaseIii
    } else if mu_f == mu_g && -2.0 * a_f < a_g {
        CaseTag::CaseIi
    } else if mu_f > mu_g {
        if a_f < 0.0 {
            notes.push(
                "destabilising drift dominated by noise near 0: tagged case_i, but the oscillation theorem's \
                 hypotheses are not verified for a_f < 0"
                    .to_string(),
            );
        }
        CaseTag::CaseI
    } else if a_f < 0.0 && (mu_f < mu_g || -2.0 * a_f > a_g) {
        CaseTag::Unstable
    } else {
        CaseTag::OutOfTheory
    };

    let beta = sup_drift_noise_ratio(model);
    let mut citations = Vec::new();
    if beta < 1.0 {
        citations.push(CITE_STABILITY.to_string());
    }

    let (lambda, exact_constant, oscillatory) = match case_tag {
        CaseTag::CaseIii => (
            Some(mu_f),
            Some((1.0 / (h * a_f * mu_f)).powf(1.0 / mu_f)),
            false,
        ),
        CaseTag::CaseI | CaseTag::CaseIi => (Some(mu_g), None, true),
        CaseTag::Unstable | CaseTag::OutOfTheory => (None, None, false),
    };

    let ratio_g_limit = (limit_l.is_finite() && lambda.is_some()).then_some(h * (limit_l - 0.5));
    let ratio_f_limit = (limit_l == f64::NEG_INFINITY).then_some(-h);

    match case_tag {
        CaseTag::CaseIii => {
            citations.push(CITE_COMPARISON_F.to_string());
            citations.push(CITE_DECAY.to_string());
            citations.push(CITE_EXACT.to_string());
            if beta >= 1.0 {
                notes.push(
                    "global sup 2f/g^2 >= 1: decay to zero is assumed, not guaranteed".to_string(),
                );
            }
        }
        CaseTag::CaseI | CaseTag::CaseIi => {
            citations.push(CITE_COMPARISON_G.to_string());
            citations.push(CITE_DECAY.to_string());
            citations.push(CITE_OSCILLATION.to_string());
            if beta >= 1.0 {
                notes.push(
                    "global sup 2f/g^2 >= 1: decay to zero is assumed, not guaranteed".to_string(),
                );
            }
        }
        CaseTag::Unstable => citations.push(CITE_INSTABILITY.to_string()),
        CaseTag::OutOfTheory => notes
            .push("boundary case: no stability, instability or rate result applies".to_string()),
    }
    notes.push(
        "step-size smallness is not certified; predictions assume h is small enough".to_string(),
    );

    Ok(RegimeReport {
        beta,
        limit_l,
        case_tag,
        lambda,
        exact_constant,
        oscillatory,
        ratio_g_limit,
        ratio_f_limit,
        citations,
        notes,
    })
}

/// `sup_{u≠0} 2f(u)/g²(u)` over the clamped family.
fn sup_drift_noise_ratio(model: &ModelSpec) -> f64 {
    if model.a_f >= 0.0 {
        // 2f/g² ≤ 0 everywhere
        return 0.0;
    }
    if model.a_g == 0.0 || model.limit_l() == f64::INFINITY {
        return f64::INFINITY;
    }
    // Both sides are monotone pieces of power laws between the two clamp
    // thresholds, so a dense logarithmic scan finds the sup; the value at
    // u → 0 is covered by the limit.
    let mut sup = 2.0 * model.limit_l();
    for k in 0..=4800 {
        let u = 10f64.powf(-12.0 + k as f64 * 0.005);
        let g = model.eval_g(u);
        if g > 0.0 {
            sup = sup.max(2.0 * model.eval_f(u) / (g * g));
        }
    }
    sup
}

/// `A^{-1}(n)` for `A(z) = ∫_z^1 du / (u a(u))`.
///
/// `A` is evaluated by adaptive quadrature in `s = ln u` and inverted by
/// bisection in `ln z`; the result is accurate to about `1e-8` relative.
/// The profile must be positive and nondecreasing on `(0, 1]`, which is
/// checked on a logarithmic grid.
pub fn predict_general_rate<A: Fn(f64) -> f64>(a_profile: A, n: f64) -> Result<f64> {
    if !(n.is_finite() && n > 0.0) {
        return Err(LabError::config("n", "must be positive and finite"));
    }
    let mut prev = 0.0f64;
    for k in 0..=1200 {
        let u = 10f64.powf(-12.0 + k as f64 * 0.01);
        let a = a_profile(u);
        if !(a.is_finite() && a > 0.0) {
            return Err(LabError::config(
                "a_profile",
                format!("must be positive and finite on (0, 1], a({u:e}) = {a}"),
            ));
        }
        if a < prev * (1.0 - 1e-12) {
            return Err(LabError::config(
                "a_profile",
                format!("not monotone increasing near u = {u:e}"),
            ));
        }
        prev = a;
    }

    let big_a = |s: f64| -> f64 {
        let r = quadrature::integrate(|t| 1.0 / a_profile(t.exp()), s, 0.0, 0.0, 1e-13, 4000);
        r.value
    };

    let mut lo = -1.0f64;
    while big_a(lo) < n {
        lo *= 2.0;
        if lo < -700.0 {
            return Err(LabError::analysis(format!(
                "A(z) stays below {n} for all representable z"
            )));
        }
    }
    let mut hi = if lo == -1.0 { 0.0 } else { lo / 2.0 };
    while hi - lo > 1e-12 * lo.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if big_a(mid) >= n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn f_examples() {
        let m = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
        assert_eq!(m.eval_f(0.5), -0.5);
        assert_eq!(m.eval_f(4.0), -1.0);
        assert_eq!(m.eval_f(0.0), 0.0);
        assert_eq!(m.eval_f(-0.5), -0.5);
    }

    #[test]
    fn g_examples() {
        let m = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
        assert_eq!(m.eval_g(0.25), 0.25);
        assert_eq!(m.eval_g(0.0), 0.0);
        let m4 = ModelSpec::with_params(1.0, 1.0, 4.0, 2.0);
        assert_eq!(m4.eval_g(0.9), 1.0);
        assert_eq!(m4.eval_g(-0.2), 0.4);
    }

    #[test]
    fn drift_dominated_example() {
        let r = classify_regime(&ModelSpec::with_params(1.0, 1.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::CaseIii);
        assert_eq!(r.lambda, Some(1.0));
        assert_relative_eq!(r.exact_constant.unwrap(), 100.0, epsilon = 1e-12);
        assert!(!r.oscillatory);
        assert_eq!(r.limit_l, f64::NEG_INFINITY);
        assert_eq!(r.ratio_f_limit, Some(-0.01));
        assert!(r.beta <= 0.0);
    }

    #[test]
    fn deterministic_recursion_supports_h_reinsertion() {
        // x_{n+1} = x_n (1 - h x_n): n x_n -> 1/h
        let h = 0.01;
        let mut x = 0.5f64;
        let n = 1_000_000u64;
        for _ in 0..n {
            x *= 1.0 - h * x;
        }
        let m = ModelSpec {
            a_g: 0.0,
            ..ModelSpec::with_params(1.0, 1.0, 0.0, 2.0)
        };
        let r = classify_regime(&m).unwrap();
        assert_relative_eq!(n as f64 * x, r.exact_constant.unwrap(), max_relative = 1e-3);
    }

    #[test]
    fn noise_dominated_example() {
        let r = classify_regime(&ModelSpec::with_params(1.0, 3.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::CaseI);
        assert_eq!(r.limit_l, 0.0);
        assert_eq!(r.lambda, Some(2.0));
        assert!(r.oscillatory);
        assert!(r.exact_constant.is_none());
        assert_relative_eq!(r.ratio_g_limit.unwrap(), -0.005, epsilon = 1e-15);
    }

    #[test]
    fn balanced_example() {
        let r = classify_regime(&ModelSpec::with_params(-0.3, 2.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::CaseIi);
        assert_relative_eq!(r.limit_l, 0.3, epsilon = 1e-15);
        assert_eq!(r.lambda, Some(2.0));
        assert_relative_eq!(r.ratio_g_limit.unwrap(), -0.2 * 0.01, epsilon = 1e-15);
        assert!(r.oscillatory);
    }

    #[test]
    fn unstable_and_boundary_cases() {
        let r = classify_regime(&ModelSpec::with_params(-1.0, 1.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::Unstable);
        assert_eq!(r.limit_l, f64::INFINITY);
        assert!(r.citations.iter().any(|c| c == CITE_INSTABILITY));
        assert!(r.lambda.is_none());

        let r = classify_regime(&ModelSpec::with_params(-1.0, 2.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::Unstable);
        // −2a_f = a_g exactly: boundary
        let r = classify_regime(&ModelSpec::with_params(-0.5, 2.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::OutOfTheory);
        // destabilising drift dominated by noise
        let r = classify_regime(&ModelSpec::with_params(-1.0, 3.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::CaseI);
        assert!(r.notes.iter().any(|n| n.contains("a_f < 0")));
    }

    #[test]
    fn pure_noise_model() {
        let r = classify_regime(&ModelSpec::with_params(0.0, 1.0, 1.0, 2.0)).unwrap();
        assert_eq!(r.case_tag, CaseTag::CaseI);
        assert_eq!(r.lambda, Some(2.0));
        assert_eq!(r.limit_l, 0.0);
        assert_relative_eq!(r.ratio_g_limit.unwrap(), -0.005, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_models_rejected() {
        assert!(classify_regime(&ModelSpec::with_params(0.0, 1.0, 0.0, 2.0)).is_err());
        assert!(classify_regime(&ModelSpec::with_params(-1.0, 1.0, 0.0, 2.0)).is_err());
        let mut m = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
        m.cap = 1.5;
        let err = classify_regime(&m).unwrap_err();
        assert!(err.to_string().contains("model.cap"));
        m.cap = 1.0;
        m.h = 0.0;
        assert!(classify_regime(&m).is_err());
    }

    #[test]
    fn beta_for_destabilising_balanced_drift_counts_clamp_region() {
        let r = classify_regime(&ModelSpec::with_params(-0.3, 2.0, 1.0, 2.0)).unwrap();
        // once g saturates at 1 the drift keeps growing up to the cap
        assert_relative_eq!(r.beta, 2.0, max_relative = 1e-2);
    }

    #[test]
    fn general_rate_closed_forms() {
        let z = predict_general_rate(|u| u * u, 1e4).unwrap();
        assert_relative_eq!(z, (1.0 + 2e4f64).powf(-0.5), max_relative = 1e-8);
        assert!((z - 7.0708e-3).abs() < 1e-7);
        let z = predict_general_rate(|u| u, 100.0).unwrap();
        assert_relative_eq!(z, 1.0 / 101.0, max_relative = 1e-8);
    }

    #[test]
    fn general_rate_rejects_non_monotone_profile() {
        let err = predict_general_rate(|u| (1.0 - u) + 1e-3, 10.0).unwrap_err();
        assert!(err.to_string().contains("monotone"));
        assert!(predict_general_rate(|u| u - 0.5, 10.0).is_err());
    }
}
