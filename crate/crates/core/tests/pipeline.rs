use std::f64::consts::PI;

use taylor_volterra::collocation::{self, CollocationConfig};
use taylor_volterra::dsa::DsaConfig;
use taylor_volterra::kernel::{BoundaryCurve, KernelPiece, PiecewiseKernel, VolterraProblem};
use taylor_volterra::load_leveling::*;

fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic_ireland_24h.csv")
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn manufactured_sine() -> (VolterraProblem, impl Fn(f64) -> f64) {
    let x = |s: f64| 50.0 * (2.0 * PI * s / 24.0).sin();
    let k = PiecewiseKernel::storage_efficiency();
    let kk = k.clone();
    let problem = VolterraProblem::new(k, move |t| kk.apply(t, x, 40), (0.0, 23.5)).unwrap();
    (problem, x)
}

#[test]
fn bundled_fixture_loads() {
    let s = load_csv(fixture_path()).unwrap();
    assert_eq!(s.len(), 48);
    assert_eq!(s.times()[0], 0.0);
    assert_eq!(s.times()[47], 23.5);
    assert_eq!(s.values(), synthetic_fixture().values());
}

#[test]
fn fixture_fit_stays_near_the_generator() {
    let s = synthetic_fixture();
    let m = fit_windows(&s, FIT_DEGREE, FIT_WINDOW).unwrap();
    for w in m.windows() {
        for i in w.owned_from..(w.first + FIT_WINDOW).min(s.len()) {
            let t = s.times()[i];
            assert!((m.eval(t) - fixture_baseline(t)).abs() < 3.0 * FIXTURE_NOISE_MW, "t = {t}");
        }
    }
}

#[test]
fn manufactured_strategy_is_recovered_at_the_selected_degree() {
    let (problem, x) = manufactured_sine();
    let times: Vec<f64> = (0..48).map(|k| k as f64 * 0.5).collect();
    let opts = LevelingOptions {
        dsa: Some(DsaConfig::with_seed(42)),
        ..LevelingOptions::default()
    };
    let out = solve_strategy(&problem, &times, &CollocationConfig::new(2, (0.0, 23.5)), &opts).unwrap();
    assert!(out.report.as_ref().unwrap().converged);
    let err = times
        .iter()
        .zip(&out.strategy.acpf)
        .map(|(t, v)| (v - x(*t)).abs())
        .fold(0.0, f64::max);
    assert!(err < 0.5, "degree {} error {err}", out.degree);
}

#[test]
fn fixture_strategy_charges_in_the_trough_and_discharges_at_the_peak() {
    let s = synthetic_fixture();
    let cfg = CollocationConfig::new(DEFAULT_LEVEL_DEGREE, s.horizon());
    let out = compute_strategy(&s, &PiecewiseKernel::storage_efficiency(), &cfg, &LevelingOptions::default()).unwrap();
    let r = &out.strategy;
    // load is lowest around midnight and highest around noon
    assert!(r.acpf[0] > 0.0 && r.acpf[47] > 0.0);
    assert!(r.acpf[24] < 0.0);
    let sign_changes = r.acpf.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    assert!(sign_changes >= 2);
    let soc_peak = r.soc.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    assert!(r.soc[47].abs() < 0.1 * soc_peak, "end {} peak {soc_peak}", r.soc[47]);
    assert_eq!(r.soc[0], 0.0);
}

#[test]
fn soc_is_the_trapezoidal_integral_of_acpf() {
    let s = synthetic_fixture();
    let cfg = CollocationConfig::new(DEFAULT_LEVEL_DEGREE, s.horizon());
    let out = compute_strategy(&s, &PiecewiseKernel::storage_efficiency(), &cfg, &LevelingOptions::default()).unwrap();
    let r = &out.strategy;
    assert_eq!(r.soc, cumulative_trapezoid(&r.times, &r.acpf));
    // and agrees with quadrature of the polynomial strategy to trapezoid accuracy
    let exact = taylor_volterra::quadrature::integrate_f64(
        |t| out.solution.eval(t),
        0.0,
        23.5,
        &taylor_volterra::quadrature::QuadratureRule::gauss_legendre(24),
    );
    assert!((r.soc[47] - exact).abs() < 1e-2 * r.peak_acpf(), "{} vs {exact}", r.soc[47]);
}

#[test]
fn perfect_storage_with_flat_load_does_nothing() {
    let times: Vec<f64> = (0..48).map(|k| k as f64 * 0.5).collect();
    let s = LoadSeries::new(times, vec![3000.0; 48], "flat").unwrap();
    let out = compute_strategy(
        &s,
        &PiecewiseKernel::unit(),
        &CollocationConfig::new(8, s.horizon()),
        &LevelingOptions::default(),
    )
    .unwrap();
    assert!(out.strategy.acpf.iter().all(|x| x.abs() < 1e-8 * 3000.0));
    assert!(out.strategy.soc.iter().all(|q| q.abs() < 1e-8 * 3000.0));
}

#[test]
fn target_override_is_used() {
    let s = synthetic_fixture();
    let cfg = CollocationConfig::new(6, s.horizon());
    let opts = LevelingOptions {
        target: Some(3000.0),
        ..LevelingOptions::default()
    };
    let out = compute_strategy(&s, &PiecewiseKernel::storage_efficiency(), &cfg, &opts).unwrap();
    assert_eq!(out.target, Some(3000.0));
    let default = compute_strategy(&s, &PiecewiseKernel::storage_efficiency(), &cfg, &LevelingOptions::default()).unwrap();
    assert!((default.target.unwrap() - 3000.0).abs() > 1.0);
}

#[test]
fn fixture_dsa_run_is_deterministic_and_ends_in_zero() {
    let s = synthetic_fixture();
    let cfg = CollocationConfig::new(2, s.horizon());
    let opts = LevelingOptions {
        dsa: Some(DsaConfig::with_seed(42)),
        ..LevelingOptions::default()
    };
    let k = PiecewiseKernel::storage_efficiency();
    let a = compute_strategy(&s, &k, &cfg, &opts).unwrap();
    let b = compute_strategy(&s, &k, &cfg, &opts).unwrap();
    let ra = a.report.unwrap();
    assert_eq!(ra.to_csv(), b.report.unwrap().to_csv());
    assert!(ra.to_csv().trim_end().ends_with("@.0"));
    assert_eq!(a.strategy, b.strategy);
}

#[test]
fn oracle_agrees_with_collocation_on_a_smooth_strategy() {
    let (problem, x) = manufactured_sine();
    let o = brute_force_oracle(&problem, 10_000).unwrap();
    let err = o.midpoints().zip(&o.values).map(|(s, v)| (v - x(s)).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3 * 50.0, "{err}");
}

#[test]
fn oracle_converges_at_second_order() {
    let p = VolterraProblem::new(PiecewiseKernel::storage_efficiency(), |t: f64| t.exp_m1() * 0.9, (0.0, 1.0)).unwrap();
    let reference = brute_force_oracle(&p, 8_000).unwrap();
    let at = |o: &OracleSolution| o.eval(0.7);
    let e1 = (at(&brute_force_oracle(&p, 200).unwrap()) - at(&reference)).abs();
    let e2 = (at(&brute_force_oracle(&p, 400).unwrap()) - at(&reference)).abs();
    let order = (e1 / e2).log2();
    assert!((order - 2.0).abs() < 0.5, "{order}");
}

#[test]
fn problem_rejects_a_vanishing_diagonal() {
    let pieces = vec![
        KernelPiece::constant(BoundaryCurve::zero(), BoundaryCurve::fraction(0.5), 1.0),
        KernelPiece::new(BoundaryCurve::fraction(0.5), BoundaryCurve::diagonal(), "t-s", |t, s| t - s),
    ];
    let kernel = PiecewiseKernel::new(pieces).unwrap();
    assert!(VolterraProblem::new(kernel, |t| t, (0.0, 1.0)).is_err());
}

#[test]
fn fixture_oracle_agreement() {
    let s = synthetic_fixture();
    let cfg = CollocationConfig::new(DEFAULT_LEVEL_DEGREE, s.horizon());
    let out = compute_strategy(&s, &PiecewiseKernel::storage_efficiency(), &cfg, &LevelingOptions::default()).unwrap();
    let o = brute_force_oracle(&out.problem, 10_000).unwrap();
    let reference: Vec<f64> = s.times().iter().map(|&t| o.eval(t)).collect();
    let d = rms(&out.strategy.acpf, &reference);
    assert!(d < 0.02 * out.strategy.peak_acpf(), "rms {d}");
}

#[test]
fn residual_postcondition_on_the_shipped_examples() {
    let (problem, _) = manufactured_sine();
    for n in [4, 8, 12] {
        let cfg = CollocationConfig::new(n, (0.0, 23.5));
        let sol = collocation::solve_plain(&problem, &cfg).unwrap();
        let scale = (1..=20).map(|k| problem.rhs(23.5 * k as f64 / 20.0).abs()).fold(0.0, f64::max);
        assert!(collocation::collocation_residual(&problem, &cfg, &sol) < 1e-9 * scale);
    }
}
