//! Numerical integration primitives.
//!
//! Two families live here:
//!
//! * fixed-node Gauss rules for probability measures (Gauss–Hermite for the
//!   standard normal, Gauss–Legendre for the uniform law on `[-1, 1]`), with
//!   weights normalised to sum to one so that `Σ wᵢ φ(xᵢ)` is directly an
//!   expectation;
//! * a globally adaptive 21-point Gauss–Kronrod integrator on finite
//!   intervals, used for integrands with integrable singularities and for
//!   heavy-tailed densities after a change of variables.
//!
//! Rules are built once per order and cached for the life of the process.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and probability weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// `Σ wᵢ φ(xᵢ)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * phi(x))
            .sum()
    }

    /// Expectation of a function evaluated on symmetric node pairs
    /// `(x, -x)`. Both supported rules are symmetric about zero, so pairing
    /// `φ(x) + φ(-x)` lets callers cancel odd terms analytically.
    pub fn expect_paired<F: Fn(f64) -> f64>(&self, pair_sum: F) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n / 2 {
            // nodes are sorted ascending; i and n-1-i mirror each other
            let x = self.nodes[n - 1 - i];
            total += self.weights[n - 1 - i] * pair_sum(x);
        }
        if n % 2 == 1 {
            // pair_sum(0) counts the centre node twice
            total += 0.5 * self.weights[n / 2] * pair_sum(0.0);
        }
        total
    }
}

type RuleCache = Mutex<HashMap<usize, Arc<GaussRule>>>;

fn cached(
    cache: &'static OnceLock<RuleCache>,
    n: usize,
    build: fn(usize) -> GaussRule,
) -> Arc<GaussRule> {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().expect("rule cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(build(n))).clone()
}

/// Gauss–Hermite rule for the standard normal law, `n` nodes.
pub fn gauss_hermite(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_hermite)
}

/// Gauss–Legendre rule for the uniform law on `[-1, 1]`, `n` nodes.
pub fn gauss_legendre(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_legendre)
}

/// Golub–Welsch eigenvalues of the symmetric Jacobi matrix with zero
/// diagonal and the given off-diagonal entries.
fn jacobi_nodes(off_diag: &[f64]) -> Vec<f64> {
    let n = off_diag.len() + 1;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    nodes
}

/// Orthonormal probabilists' Hermite values p_0..p_n at `x`.
fn hermite_orthonormal(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 1..n {
        let next = (x * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
        p.push(next);
    }
    p
}

fn build_hermite(n: usize) -> GaussRule {
    assert!(n >= 1, "rule needs at least one node");
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut nodes = jacobi_nodes(&off);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        // Newton polish: d/dx p_n = sqrt(n) p_{n-1}
        for _ in 0..3 {
            let p = hermite_orthonormal(n, *x);
            let deriv = (n as f64).sqrt() * p[n - 1];
            if deriv != 0.0 {
                *x -= p[n] / deriv;
            }
        }
        let p = hermite_orthonormal(n, *x);
        let christoffel: f64 = p[..n].iter().map(|v| v * v).sum();
        weights.push(1.0 / christoffel);
    }
    symmetrize(&mut nodes, &mut weights);
    GaussRule { nodes, weights }
}

/// Orthonormal Legendre values (uniform probability on [-1, 1]) p_0..p_n.
fn legendre_orthonormal(n: usize, x: f64) -> Vec<f64> {
    // classical P_k first, then scale by sqrt(2k + 1)
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p.iter()
        .enumerate()
        .map(|(k, v)| v * ((2 * k + 1) as f64).sqrt())
        .collect()
}

fn build_legendre(n: usize) -> GaussRule {
    assert!(n >= 1, "rule needs at least one node");
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let mut nodes = jacobi_nodes(&off);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let p = legendre_orthonormal(n, *x);
            // classical derivative: P_n' = n (x P_n - P_{n-1}) / (x^2 - 1)
            let nf = n as f64;
            let pn = p[n] / (2.0 * nf + 1.0).sqrt();
            let pn1 = p[n - 1] / (2.0 * nf - 1.0).sqrt();
            let deriv = nf * (*x * pn - pn1) / (*x * *x - 1.0);
            if deriv.is_finite() && deriv != 0.0 {
                *x -= pn / deriv;
            }
        }
        let p = legendre_orthonormal(n, *x);
        let christoffel: f64 = p[..n].iter().map(|v| v * v).sum();
        weights.push(1.0 / christoffel);
    }
    symmetrize(&mut nodes, &mut weights);
    GaussRule { nodes, weights }
}

/// Enforce exact mirror symmetry and unit total mass.
fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// 21-point Kronrod estimate and |Kronrod − Gauss| on `[a, b]`.
fn qk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for (j, (&x, &wk)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += wk * pair;
        // Gauss nodes are the odd-indexed Kronrod nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
    pub converged: bool,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol·|I|)` or `max_intervals` is
/// reached. Endpoints are never evaluated, so integrable endpoint
/// singularities are allowed.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Integral {
    if a == b {
        return Integral {
            value: 0.0,
            error: 0.0,
            intervals: 0,
            converged: true,
        };
    }
    let (value, error) = qk21(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut count = 1;
    loop {
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        if count >= max_intervals {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval no longer splittable in floating point
            heap.push(worst);
            break;
        }
        let (v1, e1) = qk21(&f, worst.a, mid);
        let (v2, e2) = qk21(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        count += 1;
    }
    // re-sum to shed drift accumulated by incremental updates
    let mut segments: Vec<Segment> = heap.into_vec();
    segments.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap_or(Ordering::Equal));
    let value: f64 = segments.iter().map(|s| s.value).sum();
    let error: f64 = segments.iter().map(|s| s.error).sum();
    Integral {
        value,
        error,
        intervals: count,
        converged: error <= abs_tol.max(rel_tol * value.abs()),
    }
}
