//! Statistical properties at moderate path counts.

use qexp_risk::malliavin::{clark_ocone, entropic_controls};
use qexp_risk::measure::{doleans_dade, martingale_diagnostic, Integrands};
use qexp_risk::{
    build_grid, entropic_closed_form, simulate_paths, stats, Driver, JumpMark, LevyModel, PathBundle, Payoff,
    RegressionConfig, RiskEngine,
};

fn desk(paths: usize, steps: usize) -> PathBundle {
    let model = LevyModel::new(0.0, 0.1, 0.3, vec![JumpMark::new(-0.2, 1.5)]).unwrap();
    simulate_paths(&build_grid(1.0, steps).unwrap(), &model, paths, 2024).unwrap()
}

#[test]
fn terminal_moments_match_the_model() {
    let model = LevyModel::new(0.5, -0.2, 0.4, vec![JumpMark::new(-0.3, 1.0), JumpMark::new(0.25, 2.0)]).unwrap();
    let b = simulate_paths(&build_grid(2.0, 20).unwrap(), &model, 20_000, 99).unwrap();
    let x = b.terminal_state();
    let m = stats::mean(x);
    assert!((m - model.mean_at(2.0)).abs() <= 4.0 * stats::std_error(x));
    let sq: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    assert!((stats::mean(&sq) - model.variance_at(2.0)).abs() <= 4.0 * stats::std_error(&sq));
}

#[test]
fn entropic_error_shrinks_as_the_grid_refines() {
    let oracle = -0.1 + 0.09 + 1.5 / 2.0 * ((0.4f64).exp() - 1.0);
    let mut prev: Option<f64> = None;
    for steps in [12, 25, 50] {
        let b = desk(50_000, steps);
        let e = RiskEngine::new(&b, Driver::entropic(2.0, &[1.5]).unwrap(), RegressionConfig::default());
        let sol = e.solve(&b.terminal_values(&Payoff::identity())).unwrap();
        let err = (sol.y0() - oracle).abs();
        assert!(err <= 2e-2, "N = {steps}: error {err}");
        if let Some(p) = prev {
            assert!(err <= p + 3.0 * sol.y0_std_error(), "N = {steps}: {err} after {p}");
        }
        prev = Some(err);
    }
}

#[test]
fn bsde_agrees_with_closed_form_on_a_clipped_position() {
    let b = desk(50_000, 25);
    let cfg = RegressionConfig::default();
    let xi = Payoff::clip(Payoff::exp_affine(1.0, 1.0), 0.0, 5.0);
    let e = RiskEngine::new(&b, Driver::entropic(1.0, &[1.5]).unwrap(), cfg);
    let y = e.risk(&xi, 0).unwrap().scalar();
    let c = entropic_closed_form(1.0, &xi, 0, &b, &cfg).unwrap().scalar();
    assert!((y - c).abs() <= 1e-2, "{y} vs {c}");
}

#[test]
fn bounded_density_is_a_martingale_at_every_node() {
    let b = desk(50_000, 25);
    let rn = doleans_dade(&b, &Integrands::constant(&b, 0.5, &[0.8]).unwrap()).unwrap();
    let flagged: Vec<usize> = martingale_diagnostic(&rn)
        .iter()
        .filter(|n| n.flagged)
        .map(|n| n.node)
        .collect();
    assert!(flagged.is_empty(), "flagged nodes {flagged:?}");
}

#[test]
fn clark_ocone_integral_has_zero_mean() {
    let b = desk(50_000, 25);
    let co = clark_ocone(
        &Payoff::clip(Payoff::exp_affine(1.0, 1.0), 0.0, 5.0),
        &b,
        &RegressionConfig::default(),
    )
    .unwrap();
    assert!(
        co.integral_mean.abs() <= 3.0 * co.integral_std_error,
        "{} vs {}",
        co.integral_mean,
        co.integral_std_error
    );
}

#[test]
fn gamma_estimates_stay_positive() {
    let b = desk(50_000, 25);
    let c = entropic_controls(
        2.0,
        1.0,
        &Payoff::poly(vec![0.0, 1.0, 0.5]).unwrap(),
        &b,
        &RegressionConfig::default(),
    )
    .unwrap();
    assert!(c.gamma_process.iter().all(|v| *v > 0.0 && v.is_finite()));
}
