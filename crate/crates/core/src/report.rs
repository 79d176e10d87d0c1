//! Machine-readable run reports: every asserted number carries its
//! tolerance, comparison direction, and the kind of computation it came
//! from. Serialization is deterministic (fixed field order, no timestamps).

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Info,
}

/// How `value` is compared against `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    /// |value| <= tolerance
    AbsLe,
    /// value <= tolerance
    Le,
    /// value >= tolerance
    Ge,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub cmp: Cmp,
    pub verdict: Verdict,
    /// computation kind: "closed-form", "quadrature", "monte-carlo", "fit", "exact"
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub config: serde_json::Value,
    pub rows: Vec<CheckRow>,
    pub passed: bool,
}

impl Report {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            schema: "rfw-report-v1".into(),
            command: command.into(),
            config,
            rows: Vec::new(),
            passed: true,
        }
    }

    pub fn check(&mut self, name: &str, value: f64, tolerance: f64, cmp: Cmp, source: &str) {
        let ok = match cmp {
            Cmp::AbsLe => value.abs() <= tolerance,
            Cmp::Le => value <= tolerance,
            Cmp::Ge => value >= tolerance,
        };
        if !ok {
            self.passed = false;
        }
        self.rows.push(CheckRow {
            name: name.into(),
            value,
            tolerance,
            cmp,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            source: source.into(),
        });
    }

    pub fn info(&mut self, name: &str, value: f64, source: &str) {
        self.rows.push(CheckRow {
            name: name.into(),
            value,
            tolerance: f64::NAN,
            cmp: Cmp::AbsLe,
            verdict: Verdict::Info,
            source: source.into(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// One line per row, suitable for terminal output.
    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let sym = match row.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::Info => "info",
            };
            let rel = match row.cmp {
                Cmp::AbsLe => "|.|<=",
                Cmp::Le => "<=",
                Cmp::Ge => ">=",
            };
            if row.verdict == Verdict::Info {
                out.push_str(&format!("{sym}  {:60} {:>14.6e}  [{}]\n", row.name, row.value, row.source));
            } else {
                out.push_str(&format!(
                    "{sym}  {:60} {:>14.6e} {rel} {:.3e}  [{}]\n",
                    row.name, row.value, row.tolerance, row.source
                ));
            }
        }
        out
    }
}
