use std::sync::Arc;

use super::*;
use crate::hamiltonian::AdverseGrid;
use crate::model::{capped_call, uncertain_volatility, BoxDomain, GameModel};
use crate::oracle::bs_call;
use crate::pde::{cfl_grid, solve_hjb, Grid, GridFn};
use crate::strategy::{concat, synthesize, StopFamily, Strategy};

fn bench() -> GameModel<f64> {
    uncertain_volatility::<f64>(1, 0.1, 0.3, 400.0, 0.0, capped_call(100.0, 300.0), 300.0).unwrap()
}

fn coarse_surface(m: &GameModel<f64>) -> Arc<GridFn<f64>> {
    let a = AdverseGrid::new(m, 3).unwrap();
    let g = cfl_grid(m, &[100], &a, None, 0.9).unwrap();
    Arc::new(solve_hjb(m, &g, None, &a).unwrap())
}

fn all_kinds(surface: &Arc<GridFn<f64>>) -> Vec<AdversaryPolicy<f64>> {
    vec![
        AdversaryPolicy::Constant(vec![0.3]),
        AdversaryPolicy::UniformIid { points_per_axis: 5 },
        AdversaryPolicy::Switching { rate: 4.0, points_per_axis: 5 },
        AdversaryPolicy::Greedy {
            surface: surface.clone(),
            points_per_axis: 3,
        },
    ]
}

#[test]
fn zero_coefficients_keep_the_state() {
    let m = GameModel::<f64>::builder("zero", 1).build().unwrap();
    let s = Strategy::constant(vec![0.0]);
    let p = simulate(&m, &s, &AdversaryPolicy::Constant(vec![0.0]), 0.0, &[0.3], 2.5, 50, 1).unwrap();
    assert_eq!(p.len(), 51);
    assert!(p.x.iter().all(|&x| x == 0.3));
    assert!(p.y.iter().all(|&y| y == 2.5));
}

#[test]
fn unit_drift_moves_by_the_horizon() {
    let m = GameModel::<f64>::builder("drift", 1).mu_x(|_, _, _, out| out[0] = 1.0).build().unwrap();
    let p = simulate(&m, &Strategy::constant(vec![0.0]), &AdversaryPolicy::Constant(vec![0.0]), 0.0, &[-0.5], 0.0, 8, 3).unwrap();
    assert_eq!(p.x[p.last()], 0.5);
    assert_eq!(p.times[p.last()], 1.0);
}

#[test]
fn euler_error_halves_with_the_step() {
    let m = GameModel::<f64>::builder("growth", 1).mu_x(|_, x, _, out| out[0] = x[0]).build().unwrap();
    let exact = 0.5 * 1f64.exp();
    let err = |n: usize| {
        let p = simulate(&m, &Strategy::constant(vec![0.0]), &AdversaryPolicy::Constant(vec![0.0]), 0.0, &[0.5], 0.0, n, 0).unwrap();
        (p.x[p.last()] - exact).abs()
    };
    let e: Vec<f64> = [50, 100, 200, 400].iter().map(|&n| err(n)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn black_scholes_delta_hedge_replicates() {
    let m = bench();
    let g = Grid::new(&m.state_box, &[801], 1000, 1.0).unwrap();
    let bs = Arc::new(GridFn::from_fn(&g, "bs", |t, x| bs_call(x[0], 100.0, 0.3, 1.0 - t, 0.0)));
    let s = synthesize(bs, &m).unwrap();
    let y0 = bs_call(100.0, 100.0, 0.3, 1.0, 0.0);
    let exp = Experiment {
        label: "hedge".into(),
        model: m.clone(),
        strategy: s,
        adversaries: vec![AdversaryPolicy::Constant(vec![0.3])],
        start: Start::Fixed(PathSpec::new(0.0, vec![100.0], y0, 10_000)),
        property: Property::Target { slack_tol: 0.0 },
        mc: McConfig {
            n_paths: 200,
            n_steps: 10_000,
            seed: 11,
        },
        max_certificates: 0,
    };
    let r = exp.run().unwrap();
    let stats = &r.per_adversary[0];
    let (mean, se) = (stats.mean_metric.unwrap(), stats.std_error.unwrap());
    assert!(mean.abs() <= 3.0 * se, "mean slack {mean}, standard error {se}");
    assert!(se < 0.05, "hedging error too dispersed: {se}");
}

#[test]
fn identical_seeds_reproduce_paths_bitwise() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    for adv in all_kinds(&w) {
        let p1 = simulate(&m, &s, &adv, 0.0, &[100.0], 12.0, 200, 42).unwrap();
        let p2 = simulate(&m, &s, &adv, 0.0, &[100.0], 12.0, 200, 42).unwrap();
        let p3 = simulate(&m, &s, &adv, 0.0, &[100.0], 12.0, 200, 43).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p1.x), bits(&p2.x));
        assert_eq!(bits(&p1.y), bits(&p2.y));
        assert_eq!(bits(&p1.a), bits(&p2.a));
        assert_eq!(bits(&p1.u), bits(&p2.u));
        assert_ne!(bits(&p1.x), bits(&p3.x));
    }
}

#[test]
fn adversaries_stay_in_the_box() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    for adv in all_kinds(&w) {
        for seed in 0..5 {
            let p = simulate(&m, &s, &adv, 0.0, &[100.0], 12.0, 300, seed).unwrap();
            assert!(p.a.iter().all(|&a| (0.1..=0.3).contains(&a)), "{adv}");
        }
    }
    let bad = AdversaryPolicy::Scripted(Arc::new(vec![vec![0.2], vec![0.5]]));
    let err = simulate(&m, &s, &bad, 0.0, &[100.0], 12.0, 3, 0).unwrap_err();
    assert!(err.to_string().contains("A box") || err.to_string().contains("adverse"), "{err}");
}

#[test]
fn companion_tracks_wealth_for_uncertain_volatility() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    let p = simulate(&m, &s, &AdversaryPolicy::UniformIid { points_per_axis: 5 }, 0.0, &[100.0], 12.0, 500, 5).unwrap();
    for (y, yb) in p.y.iter().zip(&p.ybar) {
        assert!((y - yb).abs() <= 1e-9 * (1.0 + y.abs()), "{y} vs {yb}");
    }
}

#[test]
fn invalid_starts_are_rejected() {
    let m = bench();
    let s = Strategy::constant(vec![0.0]);
    let a = AdversaryPolicy::Constant(vec![0.2]);
    assert!(simulate(&m, &s, &a, 0.0, &[100.0], 0.0, 0, 0).is_err());
    assert!(simulate(&m, &s, &a, 1.0, &[100.0], 0.0, 10, 0).is_err());
    assert!(simulate(&m, &s, &a, 0.0, &[500.0], 0.0, 10, 0).is_err());
}

#[test]
fn non_finite_state_reports_the_step() {
    let m = GameModel::<f64>::builder("blowup", 1).mu_x(|t, _, _, out| out[0] = if t > 0.45 { f64::INFINITY } else { 0.0 }).build().unwrap();
    let err = simulate(&m, &Strategy::constant(vec![0.0]), &AdversaryPolicy::Constant(vec![0.0]), 0.0, &[0.0], 0.0, 10, 0).unwrap_err();
    assert!(err.to_string().contains("step 6"), "{err}");
}

#[test]
fn zero_paths_give_an_undefined_fraction() {
    let m = bench();
    let r = certify_target(
        &m,
        &Strategy::constant(vec![0.0]),
        &[AdversaryPolicy::Constant(vec![0.2])],
        0.0,
        &[100.0],
        12.0,
        McConfig {
            n_paths: 0,
            n_steps: 10,
            seed: 0,
        },
        0.1,
    )
    .unwrap();
    assert_eq!(r.total, 0);
    assert!(r.success_fraction.is_none() && r.wilson.is_none());
    assert!(r.to_text().contains("undefined"));
}

#[test]
fn wilson_interval_matches_reference_values() {
    assert!(wilson_interval(0, 0).is_none());
    let (lo, hi) = wilson_interval(0, 10).unwrap();
    assert_eq!(lo, 0.0);
    assert!((hi - 0.27753).abs() < 1e-4);
    let (lo, hi) = wilson_interval(5, 10).unwrap();
    assert!((lo - 0.23659).abs() < 1e-4 && (hi - 0.76341).abs() < 1e-4);
    let (lo, hi) = wilson_interval(10, 10).unwrap();
    assert!((lo - 0.72247).abs() < 1e-4 && hi == 1.0);
}

#[test]
fn superhedge_from_above_succeeds_and_underfunded_start_fails() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    let mc = McConfig {
        n_paths: 200,
        n_steps: 400,
        seed: 9,
    };
    let v0 = w.value_at(0.0, &[100.0]).0;
    let tol = default_slack_tol(&w, 300.0);
    let ok = certify_target(&m, &s, &all_kinds(&w), 0.0, &[100.0], v0 + 0.5, mc, tol).unwrap();
    assert!(ok.success_fraction.unwrap() >= 0.99, "{}", ok.to_text());
    let low = certify_target(&m, &s, &all_kinds(&w)[3..], 0.0, &[100.0], v0 - 10.0, mc, 0.0).unwrap();
    assert!(low.success_fraction.unwrap() < 0.5, "{}", low.to_text());
    assert!(!low.certificates.is_empty());
}

#[test]
fn certificates_replay_to_the_same_failure() {
    let m = bench();
    let w = coarse_surface(&m);
    let exp = Experiment {
        label: "replay".into(),
        model: m.clone(),
        strategy: synthesize(w.clone(), &m).unwrap(),
        adversaries: all_kinds(&w),
        start: Start::Fixed(PathSpec::new(0.0, vec![100.0], w.value_at(0.0, &[100.0]).0 - 3.0, 100)),
        property: Property::Target { slack_tol: 0.0 },
        mc: McConfig {
            n_paths: 64,
            n_steps: 100,
            seed: 21,
        },
        max_certificates: 10,
    };
    let r = exp.run().unwrap();
    assert_eq!(r.certificates.len(), 10);
    for c in &r.certificates {
        let (_, o) = exp.replay(c).unwrap();
        assert!(!o.pass);
        assert_eq!(o.metric.to_bits(), c.metric.to_bits());
    }
    let mut other = exp.clone();
    other.mc.seed = 22;
    assert!(other.replay(&r.certificates[0]).is_err());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let m = bench();
    let w = coarse_surface(&m);
    let exp = Experiment {
        label: "threads".into(),
        model: m.clone(),
        strategy: synthesize(w.clone(), &m).unwrap(),
        adversaries: all_kinds(&w),
        start: Start::Fixed(PathSpec::new(0.0, vec![100.0], w.value_at(0.0, &[100.0]).0, 50)),
        property: Property::Target { slack_tol: 0.0 },
        mc: McConfig {
            n_paths: 40,
            n_steps: 50,
            seed: 4,
        },
        max_certificates: 5,
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| exp.run().unwrap());
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| exp.run().unwrap());
    assert_eq!(one, four);
    let mut csv = Vec::new();
    one.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 161);
}

#[test]
fn dpp_checks_enforce_their_preconditions() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    let v0 = w.value_at(0.0, &[100.0]).0;
    let mc = McConfig {
        n_paths: 4,
        n_steps: 10,
        seed: 0,
    };
    let stop = StopFamily::fixed_time(0.5);
    assert!(check_dpp1(&m, &w, &s, &all_kinds(&w), &stop, 0.0, &[100.0], v0 - 0.1, mc, 0.0).is_err());
    assert!(check_dpp2(&m, &w, &[s.clone()], &all_kinds(&w), &stop, 0.0, &[100.0], v0 + 0.1, 0.0, mc).is_err());
}

#[test]
fn stopping_at_the_start_trivially_satisfies_dpp1() {
    let m = bench();
    let w = coarse_surface(&m);
    let s = synthesize(w.clone(), &m).unwrap();
    let v0 = w.value_at(0.0, &[100.0]).0;
    let mc = McConfig {
        n_paths: 50,
        n_steps: 100,
        seed: 1,
    };
    let r = check_dpp1(&m, &w, &s, &all_kinds(&w), &StopFamily::fixed_time(0.0), 0.0, &[100.0], v0 + 1e-6, mc, 0.0).unwrap();
    assert_eq!(r.passes, r.total);
    assert!(r.paths.iter().all(|p| p.stop_step == 0));
}

#[test]
fn absurdly_low_capital_loses_against_every_strategy() {
    let m = bench();
    let w = coarse_surface(&m);
    let strategies = vec![synthesize(w.clone(), &m).unwrap(), Strategy::constant(vec![0.0]), Strategy::constant(vec![1.0])];
    let v0 = w.value_at(0.0, &[100.0]).0;
    let mc = McConfig {
        n_paths: 100,
        n_steps: 200,
        seed: 2,
    };
    let r = check_dpp2(&m, &w, &strategies, &all_kinds(&w), &StopFamily::fixed_time(0.5), 0.0, &[100.0], v0 - 600.0, 600.0 - 1.0, mc).unwrap();
    assert!(r.all_found());
    for e in &r.per_strategy {
        assert!(e.frequency.unwrap() > 0.95, "{}", r.to_text());
    }
}

#[test]
fn statistical_solution_checks() {
    let m = bench();
    let a = AdverseGrid::new(&m, 3).unwrap();
    let g = cfl_grid(&m, &[100], &a, None, 0.9).unwrap();
    let w = Arc::new(solve_hjb(&m, &g, None, &a).unwrap());
    let sup = Arc::new(crate::pde::classical_supersolution(&m, &g));
    let mc = McConfig {
        n_paths: 200,
        n_steps: 200,
        seed: 8,
    };
    let opts = StatOptions {
        times: vec![0.0, 0.25, 0.5],
        region: BoxDomain::new(vec![50.0], vec![200.0]),
        margin: 0.5,
        tol: 0.0,
    };
    let r = check_supersolution_statistically(&m, &sup, &all_kinds(&w), &opts, mc).unwrap();
    assert!(r.success_fraction.unwrap() >= 0.99, "{}", r.to_text());

    let m0 = crate::pde::constant_subsolution(&m, &g, false).unwrap();
    let m0 = Arc::new(m0);
    let strategies = vec![Strategy::constant(vec![0.0]), Strategy::constant(vec![0.5])];
    let sub = check_subsolution_statistically(&m, &m0, &strategies, &all_kinds(&w), &opts, mc, None).unwrap();
    assert!(sub.search.all_found(), "{}", sub.to_text());

    let lifted = Arc::new(w.map("lifted", |_, _, v| v + 50.0));
    let strategies = vec![synthesize(lifted.clone(), &m).unwrap()];
    let sub = check_subsolution_statistically(&m, &lifted, &strategies, &all_kinds(&w), &StatOptions { margin: 1e-3, ..opts }, mc, Some(&w)).unwrap();
    assert_eq!(sub.inconsistent_with_upper, Some(true));
    assert!(sub.to_text().contains("inconsistent"));
}

#[test]
fn concatenation_is_associative_for_ordered_stops() {
    let m = bench();
    let w = coarse_surface(&m);
    let s1 = synthesize(w.clone(), &m).unwrap();
    let s2 = Strategy::constant(vec![0.25]);
    let s3 = Strategy::constant(vec![-1.0]);
    let ta = StopFamily::fixed_time(0.3);
    let tb = StopFamily::fixed_time(0.7);
    let left = concat(concat(s1.clone(), ta.clone(), s2.clone()).unwrap(), tb.clone(), s3.clone()).unwrap();
    let right = concat(s1, ta, concat(s2, tb, s3).unwrap()).unwrap();
    for seed in 0..10 {
        let adv = AdversaryPolicy::UniformIid { points_per_axis: 5 };
        let p = simulate(&m, &left, &adv, 0.0, &[100.0], 12.0, 100, seed).unwrap();
        let q = simulate(&m, &right, &adv, 0.0, &[100.0], 12.0, 100, seed).unwrap();
        assert_eq!(p.u, q.u);
        assert_eq!(p.y, q.y);
    }
}
