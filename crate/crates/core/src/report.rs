//! Structured experiment reports and their CSV tables.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    /// Human-readable statement of the declared tolerance.
    pub tolerance: String,
    pub verdict: Verdict,
    /// Short description of the mathematical statement the metric probes.
    pub anchor: String,
}

impl Metric {
    pub fn check(name: impl Into<String>, estimate: f64, tolerance: impl Into<String>, pass: bool) -> Self {
        Metric {
            name: name.into(),
            estimate,
            stderr: None,
            tolerance: tolerance.into(),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            anchor: String::new(),
        }
    }

    pub fn info(name: impl Into<String>, estimate: f64) -> Self {
        Metric {
            name: name.into(),
            estimate,
            stderr: None,
            tolerance: String::new(),
            verdict: Verdict::Info,
            anchor: String::new(),
        }
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    pub fn with_anchor(mut self, anchor: impl Into<String>) -> Self {
        self.anchor = anchor.into();
        self
    }
}

/// A named CSV table produced by an experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.rows.push(row.into_iter().map(|s| s.to_string()).collect());
    }

    pub fn to_csv(&self) -> crate::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub metrics: Vec<Metric>,
    pub notes: Vec<String>,
    #[serde(default)]
    pub tables: Vec<Table>,
    /// Set when a trajectory blew up; the harness maps it to its own exit code.
    #[serde(default)]
    pub explosion: Option<String>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        ExperimentReport { experiment: experiment.into(), ..Default::default() }
    }

    pub fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn passed(&self) -> bool {
        self.explosion.is_none() && self.metrics.iter().all(|m| m.verdict != Verdict::Fail)
    }

    pub fn failures(&self) -> Vec<&Metric> {
        self.metrics.iter().filter(|m| m.verdict == Verdict::Fail).collect()
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn merge(&mut self, other: ExperimentReport) {
        self.metrics.extend(other.metrics);
        self.notes.extend(other.notes);
        self.tables.extend(other.tables);
        if self.explosion.is_none() {
            self.explosion = other.explosion;
        }
    }

    /// Human-readable summary, one line per metric.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "experiment {} (seed {}, config {})\n",
            self.experiment,
            self.seed,
            &self.config_hash.get(..12).unwrap_or(&self.config_hash)
        );
        for m in &self.metrics {
            let flag = match m.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL <<<",
                Verdict::Info => "info",
            };
            let se = m.stderr.map(|e| format!(" ± {e:.3e}")).unwrap_or_default();
            let anchor = if m.anchor.is_empty() { String::new() } else { format!(" [{}]", m.anchor) };
            let tol = if m.tolerance.is_empty() { String::new() } else { format!(" ({})", m.tolerance) };
            s.push_str(&format!("  {flag:8} {}: {:.6e}{se}{tol}{anchor}\n", m.name, m.estimate));
        }
        for n in &self.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        if let Some(e) = &self.explosion {
            s.push_str(&format!("  explosion: {e}\n"));
        }
        s.push_str(&format!(
            "  {} metrics, verdict {}, {:.1}s\n",
            self.metrics.len(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.wall_time_s
        ));
        s
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_passes() {
        let r = ExperimentReport::new("empty");
        assert!(r.passed());
        assert!(r.summary().contains("0 metrics"));
    }

    #[test]
    fn failing_metric_flagged() {
        let mut r = ExperimentReport::new("x");
        r.push(Metric::check("err", 2.0, "< 1", false));
        assert!(!r.passed());
        assert!(r.summary().contains("FAIL <<<"));
    }

    #[test]
    fn json_roundtrip() {
        let mut r = ExperimentReport::new("x");
        r.seed = 7;
        r.push(Metric::check("a", 0.125, "< 1", true).with_stderr(0.5).with_anchor("anchor"));
        r.tables.push(Table { name: "t".into(), header: vec!["h".into()], rows: vec![vec!["1".into()]] });
        let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
