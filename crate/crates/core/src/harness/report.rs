//! Structured benchmark reports: one record per metric, schema versioned,
//! emitted as human-readable text and as JSON. Every probability carries its
//! trial count and standard error; every value is marked as measured by this
//! artifact or reproduced from a closed formula.

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Measured or defined by this artifact.
    Artifact,
    /// Direct evaluation of a closed formula.
    PaperFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub notes: String,
}

impl MetricEntry {
    pub fn measured(name: impl Into<String>, value: f64) -> Self {
        MetricEntry {
            name: name.into(),
            value,
            stderr: None,
            trials: None,
            provenance: Provenance::Artifact,
            notes: String::new(),
        }
    }

    pub fn formula(name: impl Into<String>, value: f64) -> Self {
        MetricEntry {
            provenance: Provenance::PaperFormula,
            ..Self::measured(name, value)
        }
    }

    pub fn with_error(mut self, stderr: f64, trials: u64) -> Self {
        self.stderr = Some(stderr);
        self.trials = Some(trials);
        self
    }

    pub fn note(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub title: String,
    /// Echo of the configuration that produced the report.
    pub config: Vec<(String, String)>,
    pub metrics: Vec<MetricEntry>,
    /// Informational wall-clock timings in seconds; excluded from
    /// determinism comparisons.
    pub timings: Vec<(String, f64)>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            title: title.into(),
            config: Vec::new(),
            metrics: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.config.push((key.into(), value.to_string()));
    }

    pub fn push(&mut self, entry: MetricEntry) {
        self.metrics.push(entry);
    }

    pub fn time(&mut self, key: impl Into<String>, seconds: f64) {
        self.timings.push((key.into(), seconds));
    }

    pub fn metric(&self, name: &str) -> Option<&MetricEntry> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// The report with timings zeroed; two runs with identical seeds must
    /// agree on this bit for bit.
    pub fn deterministic_view(&self) -> Report {
        let mut r = self.clone();
        for t in &mut r.timings {
            t.1 = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        if !self.config.is_empty() {
            let _ = writeln!(out, "## config");
            for (k, v) in &self.config {
                let _ = writeln!(out, "  {k} = {v}");
            }
        }
        let _ = writeln!(out, "## metrics");
        for m in &self.metrics {
            let tag = match m.provenance {
                Provenance::Artifact => "[artifact]",
                Provenance::PaperFormula => "[paper-formula]",
            };
            let mut line = format!("  {} = {} {tag}", m.name, m.value);
            if let (Some(se), Some(tr)) = (m.stderr, m.trials) {
                line += &format!("  (stderr {se:.3e}, trials {tr})");
            }
            if !m.notes.is_empty() {
                line += &format!("  -- {}", m.notes);
            }
            let _ = writeln!(out, "{line}");
        }
        if !self.timings.is_empty() {
            let _ = writeln!(out, "## timings (informational)");
            for (k, v) in &self.timings {
                let _ = writeln!(out, "  {k} = {v:.3}s");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_view_zeroes_timings() {
        let mut a = Report::new("t");
        a.push(MetricEntry::measured("x", 1.0).with_error(0.1, 100));
        a.time("build", 1.23);
        let mut b = a.clone();
        b.timings[0].1 = 9.87;
        assert_ne!(a, b);
        assert_eq!(a.deterministic_view(), b.deterministic_view());
        assert_eq!(
            serde_json::to_string(&a.deterministic_view()).unwrap(),
            serde_json::to_string(&b.deterministic_view()).unwrap()
        );
    }

    #[test]
    fn json_roundtrip() {
        let mut r = Report::new("demo");
        r.set("n", 10);
        r.push(MetricEntry::formula("rho", 0.21875).note("tau = sqrt(2)"));
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(r, back);
        assert!(r.to_text().contains("[paper-formula]"));
    }
}
