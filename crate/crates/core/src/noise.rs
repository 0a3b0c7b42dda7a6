//! Driving noise ξₙ: zero-mean, unit-variance laws with counter-indexed
//! sampling.
//!
//! Every sample is a pure function of `(master_seed, stream, index)`. The
//! underlying generator is ChaCha8 keyed by the master seed, with the stream
//! id selecting the ChaCha stream and the index selecting the word position,
//! so an ensemble can be split across workers in any order and still replay
//! bit for bit. One 64-bit word is consumed per sample and turned into a
//! uniform on the open unit interval; the marginal law is then obtained by
//! inverse-CDF transform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Family of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    StandardNormal,
    /// Uniform on `[-√3, √3]`.
    UniformSymmetric,
    /// ±1 with probability 1/2 each.
    Rademacher,
    /// Student-t with `ν = params[0]` degrees of freedom, rescaled to unit
    /// variance.
    StudentT,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::StandardNormal => "standard_normal",
            NoiseKind::UniformSymmetric => "uniform_symmetric",
            NoiseKind::Rademacher => "rademacher",
            NoiseKind::StudentT => "student_t",
        }
    }
}

/// A zero-mean, unit-variance noise law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl NoiseSpec {
    pub fn standard_normal() -> Self {
        NoiseSpec {
            kind: NoiseKind::StandardNormal,
            params: Vec::new(),
        }
    }

    pub fn uniform_symmetric() -> Self {
        NoiseSpec {
            kind: NoiseKind::UniformSymmetric,
            params: Vec::new(),
        }
    }

    pub fn rademacher() -> Self {
        NoiseSpec {
            kind: NoiseKind::Rademacher,
            params: Vec::new(),
        }
    }

    pub fn student_t(nu: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::StudentT,
            params: vec![nu],
        }
    }

    /// Degrees of freedom for Student-t noise.
    pub fn dof(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::StudentT => self.params.first().copied(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::StudentT => {
                let nu = match self.params.as_slice() {
                    [nu] => *nu,
                    _ => {
                        return Err(LabError::config(
                            "noise.params",
                            "student_t takes exactly one parameter (degrees of freedom)",
                        ))
                    }
                };
                if !nu.is_finite() || nu <= 2.0 {
                    return Err(LabError::config(
                        "noise.params",
                        format!("student_t with nu = {nu} has no finite variance (needs nu > 2)"),
                    ));
                }
                Ok(())
            }
            _ if !self.params.is_empty() => Err(LabError::config(
                "noise.params",
                format!("{} takes no parameters", self.kind.as_str()),
            )),
            _ => Ok(()),
        }
    }

    /// Density exists, third absolute moment is finite and `x³p(x) → 0`.
    ///
    /// For Student-t the third moment alone needs `ν > 3`; we require `ν > 4`
    /// so that the tail condition holds with margin.
    pub fn assumption1_ok(&self) -> bool {
        match self.kind {
            NoiseKind::StandardNormal | NoiseKind::UniformSymmetric => true,
            NoiseKind::Rademacher => false,
            NoiseKind::StudentT => self.dof().is_some_and(|nu| nu > 4.0),
        }
    }

    /// Every absolute moment is finite.
    pub fn assumption2_ok(&self) -> bool {
        !matches!(self.kind, NoiseKind::StudentT)
    }

    pub fn has_density(&self) -> bool {
        !matches!(self.kind, NoiseKind::Rademacher)
    }

    /// Closed-form `E|ξ|^m`, or `None` when the moment is infinite.
    pub fn analytic_abs_moment(&self, m: u32) -> Option<f64> {
        let m = m as f64;
        match self.kind {
            NoiseKind::StandardNormal => {
                Some(2f64.powf(m / 2.0) * gamma((m + 1.0) / 2.0) / std::f64::consts::PI.sqrt())
            }
            NoiseKind::UniformSymmetric => Some(SQRT_3.powf(m) / (m + 1.0)),
            NoiseKind::Rademacher => Some(1.0),
            NoiseKind::StudentT => {
                let nu = self.dof()?;
                if m >= nu {
                    return None;
                }
                let scale = ((nu - 2.0) / nu).sqrt();
                let raw = nu.powf(m / 2.0) * gamma((m + 1.0) / 2.0) * gamma((nu - m) / 2.0)
                    / (std::f64::consts::PI.sqrt() * gamma(nu / 2.0));
                Some(raw * scale.powf(m))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Law {
    Normal(Normal),
    Uniform,
    Rademacher,
    StudentT { dist: StudentsT, scale: f64 },
}

/// Reproducible source of i.i.d. noise samples.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    spec: NoiseSpec,
    master_seed: u64,
    law: Law,
    assumption1_ok: bool,
    assumption2_ok: bool,
}

/// Empirical absolute moment with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Build a noise source after validating the spec.
pub fn make_noise(spec: NoiseSpec, master_seed: u64) -> Result<NoiseSource> {
    spec.validate()?;
    let law = match spec.kind {
        NoiseKind::StandardNormal => Law::Normal(Normal::standard()),
        NoiseKind::UniformSymmetric => Law::Uniform,
        NoiseKind::Rademacher => Law::Rademacher,
        NoiseKind::StudentT => {
            let nu = spec.dof().expect("validated");
            let dist = StudentsT::new(0.0, 1.0, nu)
                .map_err(|e| LabError::config("noise.params", e.to_string()))?;
            Law::StudentT {
                dist,
                scale: ((nu - 2.0) / nu).sqrt(),
            }
        }
    };
    Ok(NoiseSource {
        assumption1_ok: spec.assumption1_ok(),
        assumption2_ok: spec.assumption2_ok(),
        spec,
        master_seed,
        law,
    })
}

#[inline]
fn open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl NoiseSource {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn assumption1_ok(&self) -> bool {
        self.assumption1_ok
    }

    pub fn assumption2_ok(&self) -> bool {
        self.assumption2_ok
    }

    fn rng_at(&self, stream: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(stream);
        rng.set_word_pos(2 * index as u128);
        rng
    }

    /// Map a uniform on (0, 1) to the noise law.
    #[inline]
    pub fn transform(&self, u: f64) -> f64 {
        match &self.law {
            Law::Normal(n) => n.inverse_cdf(u),
            Law::Uniform => SQRT_3 * (2.0 * u - 1.0),
            Law::Rademacher => {
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Law::StudentT { dist, scale } => scale * dist.inverse_cdf(u),
        }
    }

    /// The `index`-th sample of `stream`. Pure in `(seed, stream, index)`.
    pub fn sample(&self, stream: u64, index: u64) -> f64 {
        let mut rng = self.rng_at(stream, index);
        self.transform(open_unit(rng.next_u64()))
    }

    /// Sequential iterator over `stream` starting at `start`; yields the same
    /// values as repeated [`NoiseSource::sample`] calls.
    pub fn stream(&self, stream: u64, start: u64) -> NoiseStream<'_> {
        NoiseStream {
            source: self,
            rng: self.rng_at(stream, start),
        }
    }

    /// Probability density at `xi`, `None` for laws without a density.
    pub fn density(&self, xi: f64) -> Option<f64> {
        match &self.law {
            Law::Normal(n) => Some(n.pdf(xi)),
            Law::Uniform => Some(if xi.abs() <= SQRT_3 {
                0.5 / SQRT_3
            } else {
                0.0
            }),
            Law::Rademacher => None,
            Law::StudentT { dist, scale } => Some(dist.pdf(xi / scale) / scale),
        }
    }

    /// Empirical `E|ξ|^m` from the first `n` samples of stream 0.
    pub fn moment_estimate(&self, m: u32, n: usize) -> Result<MomentEstimate> {
        if m < 1 {
            return Err(LabError::config("m", "moment order must be at least 1"));
        }
        if n < 1000 {
            return Err(LabError::config("n", "need at least 1000 samples"));
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (k, xi) in self.stream(0, 0).take(n).enumerate() {
            let v = xi.abs().powi(m as i32);
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let var = m2 / (n - 1) as f64;
        Ok(MomentEstimate {
            value: mean,
            stderr: (var / n as f64).sqrt(),
            samples: n,
        })
    }
}

/// Sequential view of one noise stream.
pub struct NoiseStream<'a> {
    source: &'a NoiseSource,
    rng: ChaCha8Rng,
}

impl Iterator for NoiseStream<'_> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        Some(self.source.transform(open_unit(self.rng.next_u64())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flags_per_family() {
        let n = make_noise(NoiseSpec::standard_normal(), 0).unwrap();
        assert!(n.assumption1_ok() && n.assumption2_ok());
        let u = make_noise(NoiseSpec::uniform_symmetric(), 0).unwrap();
        assert!(u.assumption1_ok() && u.assumption2_ok());
        let r = make_noise(NoiseSpec::rademacher(), 0).unwrap();
        assert!(!r.assumption1_ok() && r.assumption2_ok());
        let t3 = make_noise(NoiseSpec::student_t(3.0), 0).unwrap();
        assert!(!t3.assumption2_ok());
        assert!(!t3.assumption1_ok());
        let t6 = make_noise(NoiseSpec::student_t(6.0), 0).unwrap();
        assert!(t6.assumption1_ok() && !t6.assumption2_ok());
    }

    #[test]
    fn student_t_needs_finite_variance() {
        let err = make_noise(NoiseSpec::student_t(2.0), 0).unwrap_err();
        assert!(err.to_string().contains("nu > 2"), "{err}");
        assert!(make_noise(NoiseSpec::student_t(1.5), 0).is_err());
        let bad = NoiseSpec {
            kind: NoiseKind::StandardNormal,
            params: vec![1.0],
        };
        assert!(make_noise(bad, 0).is_err());
    }

    #[test]
    fn sampling_is_pure() {
        let src = make_noise(NoiseSpec::standard_normal(), 1).unwrap();
        assert_eq!(src.sample(0, 0).to_bits(), src.sample(0, 0).to_bits());
        let seq: Vec<f64> = src.stream(3, 10).take(5).collect();
        for (k, v) in seq.iter().enumerate() {
            assert_eq!(v.to_bits(), src.sample(3, 10 + k as u64).to_bits());
        }
        assert_ne!(src.sample(0, 0), src.sample(1, 0));
    }

    #[test]
    fn rademacher_support() {
        let src = make_noise(NoiseSpec::rademacher(), 9).unwrap();
        let mut seen = [false; 2];
        for v in src.stream(0, 0).take(1000) {
            assert!(v == 1.0 || v == -1.0);
            seen[(v > 0.0) as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn uniform_support_and_variance() {
        let src = make_noise(NoiseSpec::uniform_symmetric(), 2).unwrap();
        for v in src.stream(0, 0).take(10_000) {
            assert!(v.abs() <= SQRT_3);
        }
        assert_relative_eq!((2.0 * SQRT_3).powi(2) / 12.0, 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            src.spec().analytic_abs_moment(2).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn analytic_moments() {
        let n = NoiseSpec::standard_normal();
        assert_relative_eq!(n.analytic_abs_moment(2).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(n.analytic_abs_moment(4).unwrap(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(
            n.analytic_abs_moment(3).unwrap(),
            2.0 * (2.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            NoiseSpec::uniform_symmetric()
                .analytic_abs_moment(4)
                .unwrap(),
            1.8,
            epsilon = 1e-14
        );
        let t = NoiseSpec::student_t(5.0);
        assert_relative_eq!(t.analytic_abs_moment(2).unwrap(), 1.0, epsilon = 1e-12);
        assert!(t.analytic_abs_moment(5).is_none());
    }

    #[test]
    fn densities_integrate_to_one() {
        for spec in [
            NoiseSpec::standard_normal(),
            NoiseSpec::uniform_symmetric(),
            NoiseSpec::student_t(5.0),
        ] {
            let src = make_noise(spec, 0).unwrap();
            let r = crate::quadrature::integrate(
                |x| src.density(x).unwrap(),
                -SQRT_3,
                SQRT_3,
                1e-14,
                1e-14,
                200,
            );
            assert!(r.value > 0.5 && r.value <= 1.0 + 1e-12);
        }
        assert!(make_noise(NoiseSpec::rademacher(), 0)
            .unwrap()
            .density(0.0)
            .is_none());
    }

    #[test]
    fn moment_estimate_rejects_small_inputs() {
        let src = make_noise(NoiseSpec::standard_normal(), 0).unwrap();
        assert!(src.moment_estimate(0, 5000).is_err());
        assert!(src.moment_estimate(2, 999).is_err());
    }
}
