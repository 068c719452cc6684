//! Report rows and their serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::config::Task;
use crate::error::CliError;

pub const CSV_HEADER: [&str; 6] = ["scenario_id", "quantity", "value", "std_error", "check", "pass"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

/// One reported quantity. Rows carrying a `check` gate the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub check: Option<String>,
    pub pass: Option<bool>,
}

impl ReportRow {
    pub fn value(quantity: impl Into<String>, value: f64) -> Self {
        Self {
            quantity: quantity.into(),
            value,
            std_error: None,
            check: None,
            pass: None,
        }
    }

    pub fn estimate(quantity: impl Into<String>, value: f64, std_error: f64) -> Self {
        Self {
            std_error: Some(std_error),
            ..Self::value(quantity, value)
        }
    }

    pub fn checked(mut self, check: impl Into<String>, pass: bool) -> Self {
        self.check = Some(check.into());
        self.pass = Some(pass);
        self
    }
}

/// Run metadata kept out of the report payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_echo: String,
    pub seed: Option<u64>,
    pub library_version: String,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario_id: String,
    pub task: Task,
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.pass == Some(false))
            .filter_map(|r| r.check.as_deref())
            .collect()
    }

    pub fn row(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn pass_text(p: Option<bool>) -> &'static str {
    match p {
        None => "",
        Some(true) => "true",
        Some(false) => "false",
    }
}

pub fn write_csv<W: Write>(scenario_id: &str, rows: &[ReportRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            scenario_id,
            &r.quantity,
            &format_float(r.value),
            &r.std_error.map(format_float).unwrap_or_default(),
            r.check.as_deref().unwrap_or(""),
            pass_text(r.pass),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a> {
    scenario_id: &'a str,
    quantity: &'a str,
    value: Box<RawValue>,
    std_error: Option<Box<RawValue>>,
    check: Option<&'a str>,
    pass: Option<bool>,
}

/// Finite values become numbers with seventeen significant digits,
/// non-finite ones `null`.
fn json_number(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() { format_float(v) } else { "null".into() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

pub fn write_json_lines<W: Write>(scenario_id: &str, rows: &[ReportRow], mut out: W) -> std::io::Result<()> {
    for r in rows {
        let row = JsonRow {
            scenario_id,
            quantity: &r.quantity,
            value: json_number(r.value),
            std_error: r.std_error.map(json_number),
            check: r.check.as_deref(),
            pass: r.pass,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Serialize the payload alone; identical rows give identical bytes.
pub fn render(scenario_id: &str, rows: &[ReportRow], format: Format) -> Vec<u8> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(scenario_id, rows, &mut buf).expect("writing to memory"),
        Format::JsonLines => write_json_lines(scenario_id, rows, &mut buf).expect("writing to memory"),
    }
    buf
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFiles {
    pub payload: PathBuf,
    pub provenance: PathBuf,
}

/// Write `<id>.<csv|jsonl>` and `<id>.provenance.json` into `dir`.
pub fn emit_report(report: &RunReport, format: Format, dir: &Path) -> Result<EmittedFiles, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let payload = dir.join(format!("{}.{}", report.scenario_id, format.extension()));
    fs::write(&payload, render(&report.scenario_id, &report.rows, format)).map_err(|e| CliError::io(&payload, e))?;
    let provenance = dir.join(format!("{}.provenance.json", report.scenario_id));
    let text = serde_json::to_string_pretty(&report.provenance).expect("provenance serializes");
    fs::write(&provenance, text + "\n").map_err(|e| CliError::io(&provenance, e))?;
    Ok(EmittedFiles { payload, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(rows: Vec<ReportRow>) -> RunReport {
        RunReport {
            scenario_id: "s".into(),
            task: Task::Risk,
            rows,
            provenance: Provenance {
                config_echo: String::new(),
                seed: Some(1),
                library_version: "0".into(),
                started_unix_ms: 0,
                elapsed_ms: 0,
            },
        }
    }

    #[test]
    fn empty_result_is_header_only() {
        let text = String::from_utf8(render("s", &[], Format::Csv)).unwrap();
        assert_eq!(text, "scenario_id,quantity,value,std_error,check,pass\n");
        assert!(render("s", &[], Format::JsonLines).is_empty());
    }

    #[test]
    fn single_scalar_populates_std_error() {
        let rows = [ReportRow::estimate("rho_0", 0.1, 0.002)];
        let text = String::from_utf8(render("s", &rows, Format::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "s,rho_0,1.0000000000000001e-1,2.0000000000000000e-3,,");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0] {
            let s = format_float(v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn json_lines_keep_field_order_and_precision() {
        let rows = [
            ReportRow::estimate("a", 0.1, 0.01).checked("c", true),
            ReportRow::value("b", f64::NAN),
        ];
        let text = String::from_utf8(render("s", &rows, Format::JsonLines)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"scenario_id":"s","quantity":"a","value":1.0000000000000001e-1,"std_error":1.0000000000000000e-2,"check":"c","pass":true}"#
        );
        let parsed: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert!(parsed["value"].is_null() && parsed["pass"].is_null());
    }

    #[test]
    fn csv_quotes_awkward_fields() {
        let rows = [ReportRow::value("x,y", 1.0)];
        let text = String::from_utf8(render("s", &rows, Format::Csv)).unwrap();
        assert!(text.contains("\"x,y\""), "{text}");
    }

    #[test]
    fn same_rows_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(vec![ReportRow::estimate("q", 1.25, 0.5).checked("c", false)]);
        let a = emit_report(&r, Format::Csv, &dir.path().join("a")).unwrap();
        let b = emit_report(&r, Format::Csv, &dir.path().join("b")).unwrap();
        assert_eq!(fs::read(a.payload).unwrap(), fs::read(b.payload).unwrap());
        assert!(!r.all_pass());
        assert_eq!(r.failed_checks(), ["c"]);
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let err = emit_report(&report(vec![]), Format::Csv, &file.join("sub")).unwrap_err();
        assert_eq!(err.exit_code(), 7);
    }
}
