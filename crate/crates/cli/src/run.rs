//! Task pipelines turning a resolved scenario into report rows.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use qexp_risk::allocation::{allocate, AllocationMethod, AllocationOptions, GradientMeasure};
use qexp_risk::measure::{girsanov_shift_check, kazamaki_check};
use qexp_risk::risk::{axiom_suite, Axiom, AxiomInputs};
use qexp_risk::{
    entropic_closed_form, residual_replay, simulate_paths, solve_bsde, stats, Driver, PathBundle, Payoff,
    RegressionConfig, RiskEngine, RiskMode,
};

use crate::config::{Resolved, ScenarioConfig, Task, Tolerances};
use crate::error::CliError;
use crate::report::{emit_report, EmittedFiles, Format, Provenance, ReportRow, RunReport};

/// Execute the scenario's task. The returned rows depend only on the
/// configuration; timing goes to the provenance record.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let clock = Instant::now();
    let r = cfg.resolve()?;
    let bundle = simulate_paths(&r.grid, &r.model, r.paths, r.seed)?;
    let reg = cfg.methods.regression();
    let tol = &cfg.tolerances;
    let rows = match cfg.task {
        Task::Simulate => simulate_rows(&bundle, tol),
        Task::Solve => solve_rows(&bundle, &r, &reg, tol)?,
        Task::Risk => risk_rows(&bundle, &r, cfg, tol)?,
        Task::Allocate => allocate_rows(&bundle, &r, cfg, tol)?,
        Task::Verify => verify_rows(&bundle, &r, &reg, tol)?,
    };
    Ok(RunReport {
        scenario_id: cfg.scenario_id.clone(),
        task: cfg.task,
        rows,
        provenance: Provenance {
            config_echo: cfg.echo.clone(),
            seed: Some(r.seed),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: started,
            elapsed_ms: clock.elapsed().as_millis(),
        },
    })
}

/// Load, run and write a scenario.
pub fn run_file(
    path: &Path,
    overrides: &[String],
    format: Format,
    out_dir: &Path,
) -> Result<(RunReport, EmittedFiles), CliError> {
    let cfg = ScenarioConfig::load(path, overrides)?;
    let report = run_scenario(&cfg)?;
    let files = emit_report(&report, format, out_dir)?;
    Ok((report, files))
}

fn parts(r: &Resolved) -> (&Driver, &Payoff) {
    (
        r.driver.as_ref().expect("resolved for a position task"),
        r.position.as_ref().expect("resolved for a position task"),
    )
}

fn within_se(observed: f64, expected: f64, se: f64, k: f64) -> bool {
    (observed - expected).abs() <= k * se + 1e-12 * (1.0 + expected.abs())
}

fn simulate_rows(bundle: &PathBundle, tol: &Tolerances) -> Vec<ReportRow> {
    let model = bundle.model();
    let t = bundle.grid().horizon();
    let x = bundle.terminal_state();
    let (mean, se) = (stats::mean(x), stats::std_error(x));
    let sq: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
    let (var, var_se) = (stats::mean(&sq), stats::std_error(&sq));
    let (m_model, v_model) = (model.mean_at(t), model.variance_at(t));
    let mut rows = vec![
        ReportRow::estimate("x_T.mean", mean, se).checked("moment_mean", within_se(mean, m_model, se, tol.moment_se)),
        ReportRow::value("x_T.mean.model", m_model),
        ReportRow::estimate("x_T.variance", var, var_se)
            .checked("moment_variance", within_se(var, v_model, var_se, tol.moment_se)),
        ReportRow::value("x_T.variance.model", v_model),
    ];
    for (k, mark) in model.marks().iter().enumerate() {
        let n = bundle.jump_count_at(bundle.steps(), k);
        let (m, s) = (stats::mean(&n), stats::std_error(&n));
        rows.push(
            ReportRow::estimate(format!("jumps.{k}.count_mean"), m, s)
                .checked("jump_count", within_se(m, mark.intensity * t, s, tol.moment_se)),
        );
    }
    rows
}

fn residual_rows(rows: &mut Vec<ReportRow>, report: &qexp_risk::bsde::ResidualReport, tol: &Tolerances) {
    for s in &report.steps {
        rows.push(ReportRow::estimate(
            format!("residual.step_{:03}", s.step),
            s.mean,
            s.std_error,
        ));
    }
    let share = report.flagged_steps().len() as f64 / report.steps.len().max(1) as f64;
    rows.push(
        ReportRow::value("residual.flagged_fraction", share)
            .checked("residual_replay", share <= tol.residual_flag_fraction),
    );
}

fn solve_rows(
    bundle: &PathBundle,
    r: &Resolved,
    reg: &RegressionConfig,
    tol: &Tolerances,
) -> Result<Vec<ReportRow>, CliError> {
    let (driver, xi) = parts(r);
    let terminal = bundle.terminal_values(xi);
    let sol = solve_bsde(bundle, driver, &terminal, reg)?;
    let diag = sol.diagnostics();
    let min_r2 = diag.iter().map(|d| d.r_squared).fold(f64::INFINITY, f64::min);
    let max_cond = diag.iter().map(|d| d.condition).fold(0.0, f64::max);
    let mut rows = vec![
        ReportRow::estimate("y_0", sol.y0(), sol.y0_std_error()),
        ReportRow::value("controls.clamped", sol.clamp_count() as f64),
        ReportRow::value("regression.min_r_squared", min_r2),
        ReportRow::value("regression.max_condition", max_cond),
    ];
    residual_rows(&mut rows, &residual_replay(&sol, bundle, driver), tol);
    Ok(rows)
}

/// `(1/gamma) ln E[exp(-gamma (a + b X(T)))]` for Gaussian diffusion plus
/// independent Poisson marks.
fn gaussian_cumulant(gamma: f64, a: f64, b: f64, bundle: &PathBundle) -> f64 {
    let m = bundle.model();
    let t = bundle.grid().horizon();
    let jumps: f64 = m
        .marks()
        .iter()
        .map(|mk| mk.intensity * t / gamma * ((-gamma * b * mk.size).exp() - 1.0))
        .sum();
    -a - b * (m.x0() + m.drift() * t) + 0.5 * gamma * b * b * m.vol() * m.vol() * t + jumps
}

fn risk_rows(
    bundle: &PathBundle,
    r: &Resolved,
    cfg: &ScenarioConfig,
    tol: &Tolerances,
) -> Result<Vec<ReportRow>, CliError> {
    let (driver, xi) = parts(r);
    let reg = cfg.methods.regression();
    let engine = match cfg.methods.risk_mode {
        RiskMode::Bsde => RiskEngine::new(bundle, driver.clone(), reg),
        RiskMode::EntropicClosedForm => RiskEngine::closed_form(bundle, driver.clone(), reg)?,
    };
    let rho = engine.risk(xi, 0)?;
    let mut rows = vec![ReportRow::estimate("rho_0", rho.scalar(), rho.std_error)];
    if let Some(gamma) = driver.gamma() {
        let cf = entropic_closed_form(gamma, xi, 0, bundle, &reg)?;
        let gap = (rho.scalar() - cf.scalar()).abs();
        rows.push(ReportRow::estimate("rho_0.closed_form", cf.scalar(), cf.std_error));
        rows.push(
            ReportRow::value("rho_0.closed_form_gap", gap)
                .checked("entropic_closed_form", gap <= tol.entropic_closed_form),
        );
        if let Some(c) = xi.as_polynomial().filter(|c| c[2..].iter().all(|v| *v == 0.0)) {
            let oracle = gaussian_cumulant(gamma, c[0], c[1], bundle);
            let gap = (rho.scalar() - oracle).abs();
            rows.push(ReportRow::value("rho_0.cumulant_oracle", oracle));
            rows.push(
                ReportRow::value("rho_0.oracle_gap", gap).checked("entropic_oracle", gap <= tol.entropic_closed_form),
            );
        }
    }
    Ok(rows)
}

fn allocate_rows(
    bundle: &PathBundle,
    r: &Resolved,
    cfg: &ScenarioConfig,
    tol: &Tolerances,
) -> Result<Vec<ReportRow>, CliError> {
    let (driver, xi) = parts(r);
    let engine = RiskEngine::new(bundle, driver.clone(), cfg.methods.regression());
    let opts = AllocationOptions {
        h: cfg.methods.h,
        quadrature_nodes: cfg.methods.quadrature_nodes,
        inner: cfg.methods.inner,
    };
    let rep = allocate(&engine, xi, &opts)?;
    let homogeneous = driver.positively_homogeneous();
    let mut rows = vec![
        ReportRow::estimate("rho_0", rep.rho.value, rep.rho.std_error),
        ReportRow::value("meta.h", rep.meta.h),
        ReportRow::value("meta.quadrature_nodes", rep.meta.quadrature_nodes as f64),
    ];
    for a in &rep.rows {
        let l = &a.label;
        rows.push(ReportRow::estimate(format!("{l}.fd"), a.fd.value, a.fd.std_error));
        rows.push(ReportRow::estimate(
            format!("{l}.measure"),
            a.measure.value,
            a.measure.std_error,
        ));
        rows.push(ReportRow::estimate(
            format!("{l}.aumann_shapley"),
            a.aumann_shapley.value,
            a.aumann_shapley.std_error,
        ));
        let bound = tol.fd_measure_abs.max(tol.fd_measure_se * a.fd_measure_se);
        rows.push(
            ReportRow::estimate(format!("{l}.fd_measure_gap"), a.fd_measure_gap, a.fd_measure_se)
                .checked("fd_vs_measure", a.fd_measure_gap <= bound),
        );
        let as_row = ReportRow::value(format!("{l}.as_gradient_gap"), a.as_gradient_gap);
        rows.push(if homogeneous {
            as_row.checked("as_vs_gradient", a.as_gradient_gap <= tol.as_gradient)
        } else {
            as_row
        });
    }
    let full = rep.full_allocation_check(AllocationMethod::AumannShapley, tol.full_allocation);
    rows.push(
        ReportRow::estimate("full_allocation.aumann_shapley", full.residual, full.pooled_se)
            .checked("full_allocation", full.pass),
    );
    if homogeneous {
        let euler = rep.full_allocation_check(AllocationMethod::FiniteDifference, tol.full_allocation);
        rows.push(
            ReportRow::estimate("full_allocation.fd", euler.residual, euler.pooled_se)
                .checked("full_allocation", euler.pass),
        );
    }
    Ok(rows)
}

fn axiom_name(a: Axiom) -> &'static str {
    match a {
        Axiom::Monotonicity => "monotonicity",
        Axiom::Translation => "translation",
        Axiom::Convexity => "convexity",
        Axiom::PositiveHomogeneity => "positive_homogeneity",
        Axiom::Subadditivity => "subadditivity",
        Axiom::TerminalCondition => "terminal_condition",
    }
}

fn verify_rows(
    bundle: &PathBundle,
    r: &Resolved,
    reg: &RegressionConfig,
    tol: &Tolerances,
) -> Result<Vec<ReportRow>, CliError> {
    let (driver, xi) = parts(r);
    let engine = RiskEngine::new(bundle, driver.clone(), *reg);
    let mut rows = Vec::new();

    // A path-wise larger position: add the state clipped to [0, 1].
    let upper = Payoff::portfolio(vec![xi.clone(), Payoff::clip(Payoff::identity(), 0.0, 1.0)]);
    let inputs = AxiomInputs {
        pairs: vec![(xi.clone(), upper)],
        constants: vec![1.0, -0.5],
        scales: vec![0.5, 2.0],
        mixing: vec![0.5],
        thresholds: tol.axioms,
    };
    let axioms = axiom_suite(&engine, &inputs)?;
    let mut seen = std::collections::BTreeMap::<&str, usize>::new();
    for c in &axioms.checks {
        let name = axiom_name(c.axiom);
        let j = seen.entry(name).or_default();
        rows.push(ReportRow::value(format!("axiom.{name}.{j}"), c.residual).checked(format!("axiom_{name}"), c.pass));
        *j += 1;
    }

    let xv = bundle.terminal_values(xi);
    let sol = engine.solve(&xv)?;
    residual_rows(&mut rows, &residual_replay(&sol, bundle, driver), tol);

    let q = GradientMeasure::new(bundle, driver, &xv, reg)?;
    let rn = q.density();
    let kz = kazamaki_check(rn.integrands(), tol.kazamaki_delta)?;
    rows.push(ReportRow::value("density.kazamaki_margin", kz.margin).checked("kazamaki", kz.pass));
    let lt = rn.terminal();
    let (m, se) = (stats::mean(lt), stats::std_error(lt));
    rows.push(
        ReportRow::estimate("density.terminal_mean", m, se)
            .checked("martingale", within_se(m, 1.0, se, tol.martingale_se)),
    );
    let g = girsanov_shift_check(bundle, rn)?;
    let failed = g.rows.iter().filter(|row| !row.pass).count();
    rows.push(ReportRow::value("girsanov.failed_rows", failed as f64).checked("girsanov_shift", g.all_pass()));
    Ok(rows)
}
