use std::sync::Arc;

use stgame_core::model::{capped_call, uncertain_volatility};
use stgame_core::oracle::bs_call;
use stgame_core::sim::default_slack_tol;
use stgame_core::{certify_target, cfl_grid, solve_hjb, synthesize, AdverseGrid, AdversaryPolicy, GameModel, GridFn, McConfig, Scalar};

fn bench<S: Scalar>() -> GameModel<S> {
    uncertain_volatility(1, S::lit(0.1), S::lit(0.3), S::lit(400.0), S::zero(), capped_call(S::lit(100.0), S::lit(300.0)), S::lit(300.0)).unwrap()
}

fn solved<S: Scalar>(n_x: usize) -> (GameModel<S>, Arc<GridFn<S>>) {
    let m = bench::<S>();
    let a = AdverseGrid::new(&m, 3).unwrap();
    let g = cfl_grid(&m, &[n_x], &a, None, S::lit(0.9)).unwrap();
    let w = solve_hjb(&m, &g, None, &a).unwrap();
    (m, Arc::new(w))
}

#[test]
fn f32_and_f64_solves_agree_with_the_oracle() {
    let exact = bs_call(100.0, 100.0, 0.3, 1.0, 0.0);
    let (_, w64) = solved::<f64>(101);
    let (_, w32) = solved::<f32>(101);
    let v64 = w64.value_at(0.0, &[100.0]).0;
    let v32 = w32.value_at(0.0, &[100.0]).0 as f64;
    assert!((v64 - exact).abs() / exact < 0.01, "{v64} vs {exact}");
    assert!((v32 - v64).abs() < 1e-3 * exact, "{v32} vs {v64}");
}

#[test]
fn solved_surface_superhedges_through_the_public_api() {
    let (m, w) = solved::<f64>(101);
    let strategy = synthesize(w.clone(), &m).unwrap();
    let adversaries = [
        AdversaryPolicy::Constant(vec![0.3]),
        AdversaryPolicy::UniformIid { points_per_axis: 5 },
        AdversaryPolicy::Greedy {
            surface: w.clone(),
            points_per_axis: 3,
        },
    ];
    let mc = McConfig {
        n_paths: 300,
        n_steps: 400,
        seed: 5,
    };
    let v0 = w.value_at(0.0, &[100.0]).0;
    let tol = default_slack_tol(&w, 300.0);
    let r = certify_target(&m, &strategy, &adversaries, 0.0, &[100.0], v0 + 1.0, mc, tol).unwrap();
    for a in &r.per_adversary {
        assert!(a.fraction.unwrap() >= 0.99, "{}", r.to_text());
    }
    let again = certify_target(&m, &strategy, &adversaries, 0.0, &[100.0], v0 + 1.0, mc, tol).unwrap();
    assert_eq!(r.config_hash, again.config_hash);
    assert_eq!(r.mean_slack, again.mean_slack);
}
