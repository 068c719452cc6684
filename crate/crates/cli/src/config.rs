//! Scenario documents (TOML), command-line overrides and validation.
//!
//! ```toml
//! scenario_id = "entropic-desk"
//! task = "risk"                      # simulate | solve | risk | allocate | verify
//!
//! [model]
//! x0 = 0.0
//! mu = 0.1
//! sigma = 0.3
//! marks = [{ size = -0.2, intensity = 1.5 }]
//!
//! [grid]
//! horizon = 1.0
//! steps = 50
//!
//! [mc]
//! paths = 200000
//! seed = 2024
//!
//! [driver]
//! family = "entropic"                # qexp | entropic | sublinear | zero
//! gamma = 2.0
//!
//! [payoff.position]
//! kind = "affine"
//! a = 0.0
//! b = 1.0
//! ```
//!
//! `[[payoff.decomposition]]` entries list the sub-positions used for
//! allocation; `[methods]` and `[tolerances]` are optional, with defaults
//! given by [`MethodOptions`] and [`Tolerances`].

use std::path::Path;

use qexp_risk::allocation::InnerMethod;
use qexp_risk::risk::AxiomThresholds;
use qexp_risk::{Driver, JumpMark, LevyModel, LinearForm, Payoff, RegressionConfig, RiskMode, TimeGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Solve,
    Risk,
    Allocate,
    Verify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Solve => "solve",
            Task::Risk => "risk",
            Task::Allocate => "allocate",
            Task::Verify => "verify",
        }
    }

    fn needs_position(self) -> bool {
        !matches!(self, Task::Simulate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default)]
    pub x0: f64,
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub marks: Vec<JumpMark>,
}

fn unit_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Qexp,
    Entropic,
    Sublinear,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverBlock {
    pub family: DriverKind,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub ell: Option<LinearForm>,
    pub forms: Option<Vec<LinearForm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffBlock {
    pub position: Option<Payoff>,
    #[serde(default)]
    pub decomposition: Vec<Payoff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodOptions {
    pub degree: usize,
    pub ridge: f64,
    pub jump_count_features: bool,
    /// Finite-difference step; `None` selects `0.05 (1 + max|xi|)`.
    pub h: Option<f64>,
    pub quadrature_nodes: usize,
    pub inner: InnerMethod,
    pub risk_mode: RiskMode,
}

impl Default for MethodOptions {
    fn default() -> Self {
        let r = RegressionConfig::default();
        Self {
            degree: r.degree,
            ridge: r.ridge,
            jump_count_features: r.jump_count_features,
            h: None,
            quadrature_nodes: 16,
            inner: InnerMethod::MeasureChange,
            risk_mode: RiskMode::Bsde,
        }
    }
}

impl MethodOptions {
    pub fn regression(&self) -> RegressionConfig {
        RegressionConfig {
            degree: self.degree,
            ridge: self.ridge,
            jump_count_features: self.jump_count_features,
            ..RegressionConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Sample moments of `X(T)` against the model, in standard errors.
    pub moment_se: f64,
    /// Regression BSDE against the entropic closed form and the Gaussian cumulant oracle.
    pub entropic_closed_form: f64,
    /// `|fd - measure| <= max(fd_measure_abs, fd_measure_se * pooled SE)`.
    pub fd_measure_abs: f64,
    pub fd_measure_se: f64,
    /// `|rho - sum of allocations|`.
    pub full_allocation: f64,
    /// Aumann-Shapley against gradient allocation for homogeneous generators.
    pub as_gradient: f64,
    /// Largest admissible share of steps flagged by the residual replay.
    pub residual_flag_fraction: f64,
    /// `|mean Lambda(T) - 1|` in standard errors.
    pub martingale_se: f64,
    pub kazamaki_delta: f64,
    pub axioms: AxiomThresholds,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            moment_se: 4.0,
            entropic_closed_form: 1e-2,
            fd_measure_abs: 2e-2,
            fd_measure_se: 4.0,
            full_allocation: 1e-2,
            as_gradient: 1e-2,
            residual_flag_fraction: 0.05,
            martingale_se: 3.0,
            kazamaki_delta: 1e-3,
            axioms: AxiomThresholds::default(),
        }
    }
}

/// A parsed scenario. Blocks a task does not need may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub task: Task,
    pub model: Option<ModelBlock>,
    pub grid: Option<GridBlock>,
    pub mc: Option<McBlock>,
    pub driver: Option<DriverBlock>,
    pub payoff: Option<PayoffBlock>,
    pub methods: MethodOptions,
    pub tolerances: Tolerances,
    /// The effective document after overrides, echoed into provenance.
    pub echo: String,
}

/// Everything a task pipeline needs, checked for consistency.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: LevyModel,
    pub grid: TimeGrid,
    pub paths: usize,
    pub seed: u64,
    pub driver: Option<Driver>,
    /// The portfolio; a sum of the decomposition when one was given.
    pub position: Option<Payoff>,
}

/// Parse a TOML document into a mutable tree.
pub fn parse_document(text: &str, source_name: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>().map_err(|e| CliError::Parse {
        source_name: source_name.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// Apply `key.path=value`. The value is read as a TOML literal and falls back
/// to a plain string, so `--set driver.family=entropic` needs no quotes.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let bad = |msg: &str| CliError::Parse {
        source_name: "--set".into(),
        message: format!("{msg}: `{assignment}`"),
    };
    let (key, raw) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty key");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(&format!("`{k}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn block<T: DeserializeOwned>(doc: &toml::Table, name: &str) -> Result<Option<T>, CliError> {
    match doc.get(name) {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e: toml::de::Error| CliError::Validation(format!("[{name}] {}", e.message()))),
    }
}

impl ScenarioConfig {
    /// Build from a document; `default_id` names the scenario when the
    /// document does not.
    pub fn from_document(doc: &toml::Table, default_id: &str) -> Result<Self, CliError> {
        const KNOWN: [&str; 9] = [
            "scenario_id",
            "task",
            "model",
            "grid",
            "mc",
            "driver",
            "payoff",
            "methods",
            "tolerances",
        ];
        if let Some(k) = doc.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(CliError::Validation(format!("unknown top-level key `{k}`")));
        }
        let scenario_id = match doc.get("scenario_id") {
            None => default_id.to_string(),
            Some(toml::Value::String(s)) if !s.is_empty() => s.clone(),
            Some(_) => return Err(CliError::Validation("scenario_id must be a non-empty string".into())),
        };
        let task: Task = match doc.get("task") {
            None => return Err(CliError::Validation("missing field `task`".into())),
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Validation(format!("task: {}", e.message())))?,
        };
        Ok(Self {
            scenario_id,
            task,
            model: block(doc, "model")?,
            grid: block(doc, "grid")?,
            mc: block(doc, "mc")?,
            driver: block(doc, "driver")?,
            payoff: block(doc, "payoff")?,
            methods: block(doc, "methods")?.unwrap_or_default(),
            tolerances: block(doc, "tolerances")?.unwrap_or_default(),
            echo: toml::to_string(doc).unwrap_or_default(),
        })
    }

    /// Read a file, apply overrides in order and parse.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut doc = parse_document(&text, &path.display().to_string())?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::from_document(&doc, stem)
    }

    /// Check referential completeness and build the model objects.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let missing =
            |name: &str| CliError::Validation(format!("missing block [{name}] required by task {}", self.task.name()));
        let ctx = |field: &'static str| move |e: qexp_risk::Error| CliError::Validation(format!("{field}: {e}"));

        let m = self.model.as_ref().ok_or_else(|| missing("model"))?;
        let g = self.grid.as_ref().ok_or_else(|| missing("grid"))?;
        let mc = self.mc.as_ref().ok_or_else(|| missing("mc"))?;
        let model = LevyModel::new(m.x0, m.mu, m.sigma, m.marks.clone()).map_err(ctx("model"))?;
        let grid = TimeGrid::new(g.horizon, g.steps).map_err(ctx("grid"))?;
        if mc.paths < 2 {
            return Err(CliError::Validation(format!(
                "mc.paths must be at least 2, got {}",
                mc.paths
            )));
        }
        self.methods.regression().validate().map_err(ctx("methods"))?;
        if self.methods.quadrature_nodes == 0 {
            return Err(CliError::Validation(
                "methods.quadrature_nodes must be at least 1".into(),
            ));
        }
        if let Some(h) = self.methods.h {
            if !(h.is_finite() && h > 0.0) {
                return Err(CliError::Validation(format!("methods.h must be positive, got {h}")));
            }
        }

        let mut resolved = Resolved {
            grid,
            paths: mc.paths,
            seed: mc.seed,
            driver: None,
            position: None,
            model,
        };
        if !self.task.needs_position() {
            return Ok(resolved);
        }
        let d = self.driver.as_ref().ok_or_else(|| missing("driver"))?;
        resolved.driver = Some(self.build_driver(d, &resolved.model.intensities())?);
        let p = self.payoff.as_ref().ok_or_else(|| missing("payoff"))?;
        let position = resolve_position(p)?;
        position.validate().map_err(ctx("payoff"))?;
        resolved.position = Some(position);
        Ok(resolved)
    }

    fn build_driver(&self, d: &DriverBlock, lambdas: &[f64]) -> Result<Driver, CliError> {
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| CliError::Validation(format!("missing field driver.{field} for family {:?}", d.family)))
        };
        let ctx = |e: qexp_risk::Error| CliError::Validation(format!("driver: {e}"));
        match d.family {
            DriverKind::Entropic => Driver::entropic(need(d.gamma, "gamma")?, lambdas).map_err(ctx),
            DriverKind::Qexp => {
                let ell = d.ell.clone().unwrap_or_else(|| LinearForm::zero(lambdas.len()));
                Driver::quadratic_exponential(need(d.alpha, "alpha")?, ell, lambdas).map_err(ctx)
            }
            DriverKind::Sublinear => {
                let forms = d
                    .forms
                    .clone()
                    .ok_or_else(|| CliError::Validation("missing field driver.forms for family Sublinear".into()))?;
                Driver::sublinear(forms, lambdas).map_err(ctx)
            }
            DriverKind::Zero => Driver::zero(lambdas).map_err(ctx),
        }
    }
}

/// The decomposition must add up to the position: either the position is
/// literally the sum of the listed parts, or both reduce to the same
/// polynomial.
fn resolve_position(p: &PayoffBlock) -> Result<Payoff, CliError> {
    match (&p.position, p.decomposition.is_empty()) {
        (None, true) => Err(CliError::Validation(
            "payoff needs `position` or a non-empty `decomposition`".into(),
        )),
        (Some(pos), true) => Ok(pos.clone()),
        (None, false) => Ok(Payoff::portfolio(p.decomposition.clone())),
        (Some(pos), false) => {
            let sum = Payoff::portfolio(p.decomposition.clone());
            let literal = pos.decomposition() == Some(p.decomposition.as_slice());
            let polynomial = match (pos.as_polynomial(), sum.as_polynomial()) {
                (Some(a), Some(b)) => a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs())),
                _ => false,
            };
            if literal || polynomial {
                Ok(sum)
            } else {
                Err(CliError::Validation(
                    "payoff.decomposition does not sum to payoff.position".into(),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = r#"
task = "risk"
[model]
mu = 0.1
sigma = 0.3
[grid]
steps = 10
[mc]
paths = 100
seed = 1
[driver]
family = "entropic"
gamma = 2.0
[payoff.position]
kind = "affine"
a = 0.0
b = 1.0
"#;

    fn load(text: &str, overrides: &[&str]) -> Result<ScenarioConfig, CliError> {
        let mut doc = parse_document(text, "inline")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        ScenarioConfig::from_document(&doc, "inline")
    }

    #[test]
    fn desk_document_resolves() {
        let cfg = load(DESK, &[]).unwrap();
        assert_eq!(cfg.scenario_id, "inline");
        assert_eq!(cfg.methods, MethodOptions::default());
        let r = cfg.resolve().unwrap();
        assert_eq!(r.driver.unwrap().gamma(), Some(2.0));
        assert_eq!(r.grid.horizon(), 1.0);
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = load("task = \"risk\"\n[model\nmu = 1", &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn missing_gamma_names_the_field() {
        let text = DESK.replace("gamma = 2.0", "");
        let err = load(&text, &[]).unwrap().resolve().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("driver.gamma"), "{err}");
    }

    #[test]
    fn missing_model_field_names_block_and_field() {
        let err = load(&DESK.replace("sigma = 0.3", ""), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let msg = err.to_string();
        assert!(msg.contains("[model]") && msg.contains("sigma"), "{msg}");
    }

    #[test]
    fn overrides_replace_and_create_keys() {
        let cfg = load(
            DESK,
            &[
                "model.sigma=0.5",
                "driver.family=qexp",
                "driver.alpha=1.5",
                "methods.h=0.01",
                "scenario_id=x",
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.as_ref().unwrap().sigma, 0.5);
        assert_eq!(cfg.methods.h, Some(0.01));
        assert_eq!(cfg.scenario_id, "x");
        assert_eq!(cfg.resolve().unwrap().driver.unwrap().alpha(), Some(1.5));
    }

    #[test]
    fn override_through_scalar_is_a_parse_error() {
        let err = load(DESK, &["model.sigma.x=1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = load(DESK, &["no_equals_sign"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn simulate_needs_no_driver() {
        let text = DESK.replace("task = \"risk\"", "task = \"simulate\"");
        let mut doc = parse_document(&text, "x").unwrap();
        doc.remove("driver");
        doc.remove("payoff");
        let cfg = ScenarioConfig::from_document(&doc, "x").unwrap();
        assert!(cfg.resolve().unwrap().driver.is_none());
        let mut doc = parse_document(DESK, "x").unwrap();
        doc.remove("driver");
        let err = ScenarioConfig::from_document(&doc, "x").unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[driver]"), "{err}");
    }

    #[test]
    fn decomposition_must_sum_to_position() {
        let parts = r#"
[[payoff.decomposition]]
kind = "affine"
a = 0.5
b = 0.25
[[payoff.decomposition]]
kind = "affine"
a = -0.5
b = 0.75
"#;
        let ok = load(&format!("{DESK}{parts}"), &[]).unwrap().resolve().unwrap();
        assert_eq!(ok.position.unwrap().decomposition().unwrap().len(), 2);
        let bad = load(&format!("{DESK}{parts}"), &["payoff.position.b=2.0"]).unwrap();
        let err = bad.resolve().unwrap_err();
        assert!(err.to_string().contains("does not sum"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert_eq!(load(DESK, &["model.sgima=1"]).unwrap_err().exit_code(), 3);
        assert_eq!(load(DESK, &["modle.sigma=1"]).unwrap_err().exit_code(), 3);
    }
}
