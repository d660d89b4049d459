use super::{declared_tolerances, ExperimentConfig};
use crate::error::{Error, Result};
use crate::report::ExperimentReport;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Process exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Pass = 0,
    MetricFailure = 1,
    ConfigError = 2,
    Explosion = 3,
}

pub fn exit_code(outcome: &Result<ExperimentReport>) -> ExitCode {
    match outcome {
        Ok(r) if r.explosion.is_some() => ExitCode::Explosion,
        Ok(r) if !r.passed() => ExitCode::MetricFailure,
        Ok(_) => ExitCode::Pass,
        Err(Error::Explosion { .. }) => ExitCode::Explosion,
        Err(_) => ExitCode::ConfigError,
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

impl ExperimentConfig {
    /// Canonical configuration followed by the declared tolerances.
    pub fn echo(&self) -> String {
        let mut s = format!("# config hash {}\n", self.hash());
        s.push_str(&self.canonical());
        for (metric, tol) in declared_tolerances(self.experiment) {
            s.push_str(&format!("# tolerance {metric}: {tol}\n"));
        }
        s
    }
}

/// Write `config.txt`, `report.json`, `summary.txt` and one CSV per table into `dir`,
/// each through a temporary file renamed into place.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = vec![
        write_atomic(dir, "config.txt", cfg.echo().as_bytes())?,
        write_atomic(dir, "report.json", report.to_json()?.as_bytes())?,
        write_atomic(dir, "summary.txt", report.summary().as_bytes())?,
    ];
    for t in &report.tables {
        out.push(write_atomic(dir, &format!("{}.csv", t.name), t.to_csv()?.as_bytes())?);
    }
    Ok(out)
}
