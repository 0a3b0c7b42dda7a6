//! Path-simulation properties: log-space fidelity, accumulator exactness,
//! determinism and order-independent ensemble summaries.

use proptest::prelude::*;
use sdelab::engine::{
    checkpoint_schedule, run_ensemble, run_ensemble_with, simulate_path, simulate_path_with, step,
    EnsembleOptions, EnsembleSummary, PathState, SimOptions, TerminalStats,
};
use sdelab::model::ModelSpec;
use sdelab::noise::{make_noise, NoiseSpec};

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    (
        -1.0f64..1.0,
        0.5f64..4.0,
        0.1f64..2.0,
        0.5f64..4.0,
        0.001f64..0.05,
        0.05f64..0.9,
    )
        .prop_map(|(a_f, mu_f, a_g, mu_g, h, x0)| ModelSpec {
            h,
            x0,
            a_f,
            mu_f,
            a_g,
            mu_g,
            cap: 1.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_space_matches_direct_iteration(model in model_strategy(), seed in any::<u64>()) {
        let src = make_noise(NoiseSpec::standard_normal(), seed).unwrap();
        let sqrt_h = model.h.sqrt();
        let mut direct = model.x0;
        let mut state = PathState::initial(model.x0);
        for i in 0..1_000u64 {
            if !(1e-6..=1e6).contains(&direct.abs()) {
                break;
            }
            let xi = src.sample(0, i);
            direct *= 1.0 + model.h * model.eval_f(direct) + sqrt_h * model.eval_g(direct) * xi;
            state = step(&state, &model, xi, 1.0);
            let rel = (state.x() - direct).abs() / direct.abs();
            prop_assert!(rel < 1e-9, "step {}: {} vs {}", i, state.x(), direct);
        }
    }

    #[test]
    fn accumulators_equal_replayed_sums(model in model_strategy(), seed in any::<u64>(), lambda in 0.5f64..3.0) {
        let src = make_noise(NoiseSpec::standard_normal(), seed).unwrap();
        let n_steps = 2_000;
        let rec = simulate_path(&model, &src, 3, n_steps, lambda, 2.0).unwrap();
        // replay in the engine's arithmetic order
        let mut s = PathState::initial(model.x0);
        let (mut g2, mut af, mut xl) = (0.0f64, 0.0f64, 0.0f64);
        let mut cps = rec.checkpoints.iter().peekable();
        for i in 0..n_steps {
            let x = s.x();
            let g = model.eval_g(x);
            g2 += g * g;
            af += model.eval_f(x).abs();
            xl += (lambda * s.log_abs_x).exp();
            s = step(&s, &model, src.sample(3, i), lambda);
            if let Some(c) = cps.peek() {
                if c.n == i + 1 {
                    prop_assert_eq!(c.acc_g2, g2);
                    prop_assert_eq!(c.acc_absf, af);
                    prop_assert_eq!(c.acc_xlam, xl);
                    prop_assert_eq!(c.log_abs_x, s.log_abs_x);
                    cps.next();
                }
            }
        }
        prop_assert!(cps.next().is_none());
        prop_assert!(rec.checkpoints.windows(2).all(|w| w[1].acc_g2 >= w[0].acc_g2 && w[1].acc_absf >= w[0].acc_absf));
    }

    #[test]
    fn summary_merge_is_associative_and_commutative(
        values in proptest::collection::vec((-50.0f64..0.0, 0.0f64..100.0), 1..30),
        cut1 in 0usize..30,
        cut2 in 0usize..30,
    ) {
        let terms: Vec<TerminalStats> = values
            .iter()
            .enumerate()
            .map(|(i, &(l, a))| TerminalStats { stream: i as u64, n: 10, sign: 1, log_abs_x: l, acc_g2: a, acc_absf: a, acc_xlam: a })
            .collect();
        let (a, b) = (cut1.min(terms.len()), cut2.min(terms.len()));
        let (lo, hi) = (a.min(b), a.max(b));
        let p = EnsembleSummary::from_terminals(terms[..lo].to_vec());
        let q = EnsembleSummary::from_terminals(terms[lo..hi].to_vec());
        let r = EnsembleSummary::from_terminals(terms[hi..].to_vec());
        let whole = EnsembleSummary::from_terminals(terms.clone());
        prop_assert_eq!(&p.merge(&q).merge(&r), &whole);
        prop_assert_eq!(&p.merge(&q.merge(&r)), &whole);
        prop_assert_eq!(&r.merge(&p).merge(&q), &whole);
        prop_assert_eq!(whole.median(|t| t.log_abs_x), r.merge(&q).merge(&p).median(|t| t.log_abs_x));
    }

    #[test]
    fn schedule_is_strictly_increasing(n in 1u64..10_000_000, per in 1u32..64) {
        let s = checkpoint_schedule(n, per);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*s.last().unwrap(), n);
    }
}

#[test]
fn serial_and_parallel_summaries_agree() {
    let model = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
    let src = make_noise(NoiseSpec::standard_normal(), 17).unwrap();
    let serial = run_ensemble_with(
        &model,
        &src,
        6,
        20_000,
        1.0,
        1.0,
        &EnsembleOptions {
            threads: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let parallel = run_ensemble_with(
        &model,
        &src,
        6,
        20_000,
        1.0,
        1.0,
        &EnsembleOptions {
            threads: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(serial.summary, parallel.summary);
    assert_eq!(serial.paths, parallel.paths);
}

#[test]
fn singleton_ensemble_summary_is_the_path() {
    let model = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
    let src = make_noise(NoiseSpec::standard_normal(), 4).unwrap();
    let e = run_ensemble(&model, &src, 1, 5_000, 1.0, 1.0).unwrap();
    let t = e.paths[0].terminal();
    assert_eq!(e.summary.count(), 1);
    assert_eq!(e.summary.median(|s| s.log_abs_x), t.log_abs_x);
    assert_eq!(e.summary.mean(|s| s.acc_g2), t.acc_g2);
}

#[test]
fn rerun_is_bit_identical() {
    let model = ModelSpec::with_params(1.0, 3.0, 1.0, 2.0);
    let src = make_noise(NoiseSpec::standard_normal(), 1).unwrap();
    let a = simulate_path(&model, &src, 0, 50_000, 2.0, 2.0).unwrap();
    let b = simulate_path(&model, &src, 0, 50_000, 2.0, 2.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn drift_dominated_run_decays() {
    let model = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
    let src = make_noise(NoiseSpec::standard_normal(), 2).unwrap();
    let p = simulate_path(&model, &src, 0, 100_000, 1.0, 1.0).unwrap();
    assert!(p.terminal().log_abs_x < model.x0.ln());
}

#[test]
fn sign_settles_in_final_decade() {
    let model = ModelSpec::with_params(1.0, 1.0, 1.0, 2.0);
    let src = make_noise(NoiseSpec::standard_normal(), 8).unwrap();
    let p = simulate_path(&model, &src, 0, 1_000_000, 1.0, 1.0).unwrap();
    let late: Vec<i8> = p
        .checkpoints
        .iter()
        .filter(|c| c.n >= 100_000)
        .map(|c| c.sign)
        .collect();
    assert!(late.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn absorption_freezes_statistics() {
    // h = 1, f ≡ 0, g clamped at 1: B = 1 + ξ is zero whenever ξ = -1
    let model = ModelSpec {
        h: 1.0,
        x0: 2.0,
        a_f: 0.0,
        mu_f: 1.0,
        a_g: 1.0,
        mu_g: 2.0,
        cap: 1.0,
    };
    let src = make_noise(NoiseSpec::rademacher(), 1).unwrap();
    let p = simulate_path(&model, &src, 0, 1_000, 1.0, 1.0).unwrap();
    let at = p.absorbed_at.expect("a rademacher -1 absorbs");
    let after: Vec<_> = p.checkpoints.iter().filter(|c| c.n >= at).collect();
    assert!(after.iter().all(|c| c.sign == 0));
    assert!(after
        .windows(2)
        .all(|w| (w[0].acc_g2, w[0].acc_absf, w[0].acc_xlam)
            == (w[1].acc_g2, w[1].acc_absf, w[1].acc_xlam)));
}

#[test]
fn checkpoint_density_does_not_change_terminal_accumulators() {
    let model = ModelSpec::with_params(1.0, 1.0, 1.0, 4.0);
    let src = make_noise(NoiseSpec::standard_normal(), 6).unwrap();
    let sparse = simulate_path_with(
        &model,
        &src,
        0,
        100_000,
        1.0,
        1.0,
        &SimOptions {
            checkpoints_per_decade: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let dense = simulate_path(&model, &src, 0, 100_000, 1.0, 1.0).unwrap();
    assert_eq!(sparse.terminal(), dense.terminal());
    assert_eq!(sparse.decade_extremes, dense.decade_extremes);
    assert!(sparse.checkpoints.len() < dense.checkpoints.len());
}
