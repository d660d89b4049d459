use super::Experiment;
use crate::error::{Error, Result};
use crate::noise::check_coefficients;
use crate::remainder::{RegularityPack, Scheme, SolverConfig};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

/// A configuration value: number, list of numbers, or bare word.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    List(Vec<f64>),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x:?}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            Value::Text(s) => f.write_str(s),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Rewrap a validation failure as a configuration error with the same message.
pub(crate) fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) | Error::Config(m) => Error::Config(m),
        other => Error::Config(other.to_string()),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

impl Value {
    pub fn parse(raw: &str) -> Result<Value> {
        let s = raw.trim();
        if let Some(inner) = s.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| config_error(format!("unterminated list `{s}`")))?;
            let items: Vec<&str> = inner.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
            return items
                .iter()
                .map(|t| parse_number(t).ok_or_else(|| config_error(format!("list entry `{t}` is not a finite number"))))
                .collect::<Result<Vec<f64>>>()
                .map(Value::List);
        }
        if s.is_empty() {
            return Err(config_error("empty value"));
        }
        Ok(parse_number(s).map_or_else(|| Value::Text(s.to_string()), Value::Num))
    }
}

/// Keys shared by every experiment.
const COMMON: &[&str] = &[
    "a",
    "n",
    "cutoff",
    "dt",
    "horizon",
    "regularity",
    "substep_theta",
    "blowup_threshold",
    "scheme",
    "replicas",
    "seed",
];

/// Default values for `experiment`, common keys first.
pub fn defaults(experiment: Experiment) -> Vec<(&'static str, Value)> {
    use Experiment::*;
    use Value::{List, Num, Text};
    let mut d: Vec<(&'static str, Value)> = vec![
        ("a", List(vec![0.0, 0.0, 0.0, 1.0])),
        ("cutoff", Num(8.0)),
        ("dt", Num(1e-3)),
        ("horizon", Num(1.0)),
        ("regularity", List(vec![0.1, 0.05, 0.05, 0.3, 0.25])),
        ("substep_theta", Num(0.1)),
        ("blowup_threshold", Num(1e8)),
        ("scheme", Text("euler".into())),
        ("replicas", Num(1000.0)),
        ("seed", Num(0.0)),
    ];
    let mut set = |k: &'static str, v: Value| match d.iter_mut().find(|(key, _)| *key == k) {
        Some(slot) => slot.1 = v,
        None => d.push((k, v)),
    };
    match experiment {
        WickCovariance => {
            set("replicas", Num(1e4));
            set("lags", List(vec![0.0, 0.1]));
            set("orders", List(vec![1.0, 2.0, 3.0]));
        }
        RestartConsistency => {
            set("horizon", Num(1.0));
            set("replicas", Num(1.0));
            set("restart_time", Num(0.5));
            set("identity_cutoff", Num(4.0));
            set("identity_paths", Num(20.0));
            set("identity_dt", Num(0.01));
            set("identity_time", Num(0.1));
        }
        Dissipation => {
            set("cutoff", Num(16.0));
            set("horizon", Num(0.5));
            set("replicas", Num(1.0));
            set("scales", List(vec![10.0, 100.0, 1000.0]));
            set("fit_window", List(vec![0.01, 0.5]));
        }
        Moments => {
            set("horizon", Num(2.0));
            set("times", List(vec![1.0, 2.0]));
            set("p", Num(2.0));
            set("mean_scales", List(vec![0.0, 10.0, 100.0]));
            set("cos_scale", Num(0.0));
        }
        Linearization => {
            set("horizon", Num(0.5));
            set("replicas", Num(1.0));
            set("deltas", List(vec![1e-3, 1e-4]));
            set("directions", Num(10.0));
        }
        Bel => {
            set("cutoff", Num(2.0));
            set("dt", Num(1e-2));
            set("horizon", Num(0.5));
            set("replicas", Num(1e5));
            set("radii", List(vec![1.0, 0.3, 0.5, 0.9]));
        }
        Tv => {
            set("cutoff", Num(4.0));
            set("dt", Num(1e-2));
            set("horizon", Num(0.5));
            set("replicas", Num(500.0));
            set("radius", Num(1.0));
            set("distances", List(vec![1.0, 0.3, 0.1, 0.03]));
        }
        GibbsCompare => {
            set("cutoff", Num(4.0));
            set("replicas", Num(8.0));
            set("run_time", Num(900.0));
            set("burn_in_time", Num(5.0));
            set("sample_every", Num(0.05));
            set("chain_length", Num(150_000.0));
            set("chains", Num(4.0));
            set("thin", Num(10.0));
            set("control_factor", Num(1.5));
        }
        Mixing => {
            set("dt", Num(2e-3));
            set("times", List(vec![0.5, 1.0, 2.0, 4.0, 6.0]));
            set("y_scale", Num(5.0));
            set("bootstrap", Num(1000.0));
        }
        Control => {
            set("replicas", Num(1.0));
        }
        SupportProbe => {
            set("replicas", Num(16.0));
            set("levels", List(vec![3.0, 4.0, 5.0]));
            set("renorms", List(vec![0.0, 0.25]));
            set("lambda", Num(0.25));
            set("probe_alpha", Num(0.5));
            set("probe_times", List(vec![0.0, 0.5, 1.0]));
        }
        BesovSuite => {
            set("replicas", Num(1000.0));
        }
        KernelBounds => {
            set("replicas", Num(1.0));
            set("windows", List(vec![64.0, 128.0]));
            set("kernel_alpha", Num(0.9));
            set("kernel_beta", Num(0.9));
            set("sample_radius", Num(16.0));
            set("tail_cutoff", Num(8.0));
            set("nested_depth", Num(3.0));
            set("nested_gamma", Num(0.1));
        }
    }
    d
}

/// Validated configuration with every default injected.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub solver: SolverConfig,
    pub replicas: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    values: BTreeMap<String, Value>,
}

impl ExperimentConfig {
    /// Parse `key = value` lines (`#` starts a comment) on top of the defaults for `experiment`.
    pub fn parse(experiment: Experiment, text: &str) -> Result<Self> {
        let mut values: BTreeMap<String, Value> =
            defaults(experiment).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = k.trim().to_string();
            if seen.insert(key.clone(), ()).is_some() {
                return Err(config_error(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            let value = Value::parse(v).map_err(|e| config_error(format!("line {}: {e}", lineno + 1)))?;
            if key == "experiment" {
                let named: Experiment = value.to_string().parse()?;
                if named != experiment {
                    return Err(config_error(format!("config names experiment `{named}` but `{experiment}` was requested")));
                }
                continue;
            }
            if key != "n" && !values.contains_key(&key) {
                return Err(config_error(format!("unknown key `{key}` for experiment `{experiment}`")));
            }
            values.insert(key, value);
        }
        Self::from_values(experiment, values, None)
    }

    fn from_values(experiment: Experiment, mut values: BTreeMap<String, Value>, out: Option<PathBuf>) -> Result<Self> {
        let a = match values.get("a") {
            Some(Value::List(a)) => a.clone(),
            Some(Value::Num(x)) => vec![*x],
            _ => return Err(config_error("`a` must be a list of coefficients a_0, …, a_n")),
        };
        if let Some(n) = values.remove("n") {
            let n = match n {
                Value::Num(x) if x >= 0.0 && x.fract() == 0.0 => x as usize,
                _ => return Err(config_error("`n` must be a nonnegative integer")),
            };
            if n + 1 != a.len() {
                return Err(config_error(format!("n = {n} but `a` has {} coefficients (need n + 1)", a.len())));
            }
            if n % 2 == 0 {
                return Err(config_error(format!("n must be odd, got {n}")));
            }
        }
        check_coefficients(&a).map_err(as_config)?;
        let mut cfg = ExperimentConfig { experiment, solver: SolverConfig::new(vec![0.0, 1.0], 1.0, 1.0, 0.0)?, replicas: 0, seed: 0, out, values };
        let reg = RegularityPack::from_slice(&cfg.list("regularity")?).map_err(as_config)?;
        let scheme = match cfg.text("scheme")?.as_str() {
            "euler" => Scheme::ExpEuler,
            "etd2" => Scheme::Etd2,
            other => return Err(config_error(format!("scheme must be `euler` or `etd2`, got `{other}`"))),
        };
        let solver = SolverConfig {
            a,
            cutoff: cfg.num("cutoff")?,
            dt: cfg.num("dt")?,
            horizon: cfg.num("horizon")?,
            reg,
            substep_theta: cfg.num("substep_theta")?,
            blowup_threshold: cfg.num("blowup_threshold")?,
            scheme,
        };
        solver.validate().map_err(as_config)?;
        if !(solver.substep_theta >= 0.0) || !(solver.blowup_threshold > 0.0) {
            return Err(config_error("substep_theta must be ≥ 0 and blowup_threshold > 0"));
        }
        let replicas = cfg.count("replicas")?;
        if replicas == 0 {
            return Err(config_error("replicas must be at least 1"));
        }
        cfg.seed = cfg.count("seed")? as u64;
        cfg.replicas = replicas;
        cfg.solver = solver;
        Ok(cfg)
    }

    /// Defaults only.
    pub fn default_for(experiment: Experiment) -> Result<Self> {
        Self::parse(experiment, "")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.values.insert("seed".into(), Value::Num(seed as f64));
        self
    }

    pub fn with_replicas(mut self, replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(config_error("replicas must be at least 1"));
        }
        self.replicas = replicas;
        self.values.insert("replicas".into(), Value::Num(replicas as f64));
        Ok(self)
    }

    /// Override one key, revalidating the whole configuration.
    pub fn set(self, key: &str, value: Value) -> Result<Self> {
        if key != "n" && !self.values.contains_key(key) {
            return Err(config_error(format!("unknown key `{key}` for experiment `{}`", self.experiment)));
        }
        let mut values = self.values;
        values.insert(key.to_string(), value);
        Self::from_values(self.experiment, values, self.out)
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        self.out = Some(out);
        self
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.values.get(key).ok_or_else(|| config_error(format!("missing key `{key}`")))
    }

    pub fn num(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            Value::Num(x) => Ok(*x),
            v => Err(config_error(format!("`{key}` must be a number, got `{v}`"))),
        }
    }

    pub fn count(&self, key: &str) -> Result<usize> {
        let x = self.num(key)?;
        if x < 0.0 || x.fract() != 0.0 {
            return Err(config_error(format!("`{key}` must be a nonnegative integer, got {x}")));
        }
        Ok(x as usize)
    }

    pub fn positive(&self, key: &str) -> Result<f64> {
        let x = self.num(key)?;
        if !(x > 0.0) {
            return Err(config_error(format!("`{key}` must be positive, got {x}")));
        }
        Ok(x)
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key)? {
            Value::List(v) => Ok(v.clone()),
            Value::Num(x) => Ok(vec![*x]),
            v => Err(config_error(format!("`{key}` must be a list, got `{v}`"))),
        }
    }

    pub fn text(&self, key: &str) -> Result<String> {
        Ok(self.get(key)?.to_string())
    }

    /// Sorted `key = value` lines with every default present.
    pub fn canonical(&self) -> String {
        let mut s = format!("experiment = {}\n", self.experiment);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_common(key: &str) -> bool {
        COMMON.contains(&key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(Experiment::Control, "n = 3\na = [0, 0, 0, 1]\n").unwrap();
        assert_eq!(c.solver.cutoff, 8.0);
        assert_eq!(c.solver.dt, 1e-3);
        assert_eq!(c.solver.reg, RegularityPack::default());
        assert!(c.canonical().contains("regularity = [0.1, 0.05, 0.05, 0.3, 0.25]"));
    }

    #[test]
    fn rejections_name_the_constraint() {
        let e = ExperimentConfig::parse(Experiment::Control, "n = 4\na = [0, 0, 0, 0, 1]").unwrap_err().to_string();
        assert!(e.contains("odd"), "{e}");
        let e = ExperimentConfig::parse(Experiment::Control, "a = [0, 0, 0, -1]").unwrap_err().to_string();
        assert!(e.contains("a_n"), "{e}");
        let e = ExperimentConfig::parse(Experiment::Control, "regularity = [0.1, 0.05, 0.05, 0.5, 0.25]").unwrap_err().to_string();
        assert!(e.contains("(β+α₀)/2 < γ"), "{e}");
        let e = ExperimentConfig::parse(Experiment::Control, "replicas = 0").unwrap_err().to_string();
        assert!(e.contains("replicas"), "{e}");
        assert!(ExperimentConfig::parse(Experiment::Control, "bogus = 1").is_err());
        assert!(ExperimentConfig::parse(Experiment::Control, "cutoff = [1, 2").is_err());
        assert!(ExperimentConfig::parse(Experiment::Control, "experiment = mixing").is_err());
    }

    #[test]
    fn hash_is_canonical() {
        let a = ExperimentConfig::parse(Experiment::Mixing, "cutoff = 8\n# comment\nseed = 3").unwrap();
        let b = ExperimentConfig::parse(Experiment::Mixing, "seed = 3").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(Experiment::Mixing, "seed = 4").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.clone().with_seed(4).hash(), c.hash());
    }
}
