use crate::besov::{DyadicPartition, NormPlan, WeightedNormSpec};
use crate::dynamics::{Engine, Observable, ProcessState};
use crate::error::{invalid, Result};
use crate::noise::{hermite_fields, NoiseKey};
use crate::remainder::SolverConfig;
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::SpectralField;
use crate::stats::{linear_fit, Welford};
use rayon::prelude::*;

/// Settings for the two-point experiment; `solver.horizon` is the evaluation time.
#[derive(Clone, Debug)]
pub struct TvSpec {
    pub solver: SolverConfig,
    pub replicas: usize,
    pub seed: u64,
    pub dictionary: Vec<Observable>,
    /// The stopping level is `r / 2`.
    pub r: f64,
}

impl TvSpec {
    fn norm(&self) -> Result<WeightedNormSpec> {
        WeightedNormSpec::new(self.solver.reg.alpha, self.solver.reg.alpha_prime, self.solver.horizon.max(1e-12))
    }
}

struct PairSample {
    gaps: Vec<f64>,
    stopped: bool,
}

/// Gap estimates `P_tΦ(x) - P_tΦ(y)` with common noise for both starting points.
fn pair_samples(x: &SpectralField, y: &SpectralField, spec: &TvSpec) -> Result<Vec<PairSample>> {
    let engine = Engine::new(&spec.solver)?;
    let modes = engine.modes().clone();
    let n = spec.solver.n();
    let sets: Vec<_> = (1..=n).map(|k| modes.power_set(k)).collect();
    let part = DyadicPartition::covering(&sets[n - 1]);
    let plans: Vec<NormPlan> = sets.iter().map(|m| NormPlan::new(m, &part)).collect::<Result<_>>()?;
    let norm = spec.norm()?;
    let level = spec.r / 2.0;
    let steps = spec.solver.steps();
    let (x, y) = (x.project_onto(&modes), y.project_onto(&modes));
    (0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let key = NoiseKey::new(spec.seed, r as u64);
            let mut sx = ProcessState::initial(&x);
            let mut stopped = false;
            let ex = engine.advance(&mut sx, steps, key, |s| {
                if stopped {
                    return;
                }
                let d = hermite_fields(n, &s.ou.field, engine.renorm());
                stopped = d
                    .iter()
                    .zip(&plans)
                    .enumerate()
                    .any(|(k, (f, p))| norm.weight(k + 1, s.time) * p.holder_norm(f, -norm.alpha) > level);
            });
            let mut sy = ProcessState::initial(&y);
            let ey = engine.advance(&mut sy, steps, key, |_| {});
            if let Some(e) = ex.or(ey) {
                return Err(crate::Error::Explosion { time: e.time, reason: e.reason });
            }
            let gaps = spec.dictionary.iter().map(|o| o.value(&sx.x) - o.value(&sy.x)).collect();
            Ok(PairSample { gaps, stopped })
        })
        .collect()
}

/// `sup_Φ |P_tΦ(x) - P_tΦ(y)|` over the dictionary and the frequency of `t ≥ τ^{r/2}`.
pub fn tv_experiment(x: &SpectralField, y: &SpectralField, spec: &TvSpec) -> Result<ExperimentReport> {
    if spec.replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    if spec.dictionary.is_empty() {
        return Err(invalid("empty observable dictionary"));
    }
    let modes = spec.solver.modes()?;
    let diff = x.project_onto(&modes).sub(&y.project_onto(&modes))?;
    let dist = NormPlan::covering(&modes).holder_norm(&diff, -spec.solver.reg.alpha0);
    if dist > 1.0 {
        return Err(invalid(format!("‖x - y‖_(C^-α₀) = {dist} must be at most 1")));
    }
    let samples = pair_samples(x, y, spec)?;
    let mut report = ExperimentReport::new("tv");
    report.seed = spec.seed;
    let mut table = Table::new("tv", &["observable", "gap", "se"]);
    let mut sup: f64 = 0.0;
    let mut sup_se = 0.0;
    for (i, obs) in spec.dictionary.iter().enumerate() {
        let w: Welford = samples.iter().map(|s| s.gaps[i]).collect();
        table.push([obs.name.clone(), format!("{:.10e}", w.mean()), format!("{:.10e}", w.stderr())]);
        if w.mean().abs() >= sup {
            sup = w.mean().abs();
            sup_se = w.stderr();
        }
    }
    let p_tau: Welford = samples.iter().map(|s| if s.stopped { 1.0 } else { 0.0 }).collect();
    report.push(Metric::info("distance", dist));
    report.push(Metric::info("sup_gap", sup).with_stderr(sup_se).with_anchor("two-point semigroup bound"));
    report.push(Metric::info("p_tau_exceeded", p_tau.mean()).with_stderr(p_tau.stderr()));
    report.note(format!("t = {}, r = {}, {} replicas, common noise for x and y", spec.solver.horizon, spec.r, spec.replicas));
    report.tables.push(table);
    Ok(report)
}

/// Sup gap for `y = x + ε h` over the given scales; checks that it shrinks with `ε`
/// and reports the fitted log-log exponent.
pub fn tv_trend(x: &SpectralField, h: &SpectralField, scales: &[f64], spec: &TvSpec) -> Result<ExperimentReport> {
    if scales.len() < 2 {
        return Err(invalid("need at least two scales"));
    }
    let mut report = ExperimentReport::new("tv");
    report.seed = spec.seed;
    let mut table = Table::new("tv_trend", &["distance", "sup_gap", "se", "p_tau_exceeded"]);
    let mut pts = Vec::new();
    for &eps in scales {
        let mut y = x.clone();
        y.axpy(eps, h)?;
        let r = tv_experiment(x, &y, spec)?;
        let d = r.metric("distance").map_or(f64::NAN, |m| m.estimate);
        let g = r.metric("sup_gap").expect("sup gap");
        let p = r.metric("p_tau_exceeded").map_or(f64::NAN, |m| m.estimate);
        table.push([format!("{d:.6e}"), format!("{:.10e}", g.estimate), format!("{:.10e}", g.stderr.unwrap_or(0.0)), format!("{p:.6}")]);
        pts.push((d, g.estimate));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = pts.windows(2).all(|w| w[0].1 <= w[1].1);
    report.push(
        Metric::check("gap_monotone_in_distance", if monotone { 1.0 } else { 0.0 }, "= 1", monotone)
            .with_anchor("Hölder continuity of the semigroup"),
    );
    let valid: Vec<_> = pts.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    if valid.len() >= 2 {
        let lx: Vec<f64> = valid.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = valid.iter().map(|p| p.1.ln()).collect();
        let (_, slope, se) = linear_fit(&lx, &ly);
        report.push(Metric::info("fitted_exponent", slope).with_stderr(se));
    }
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::dictionary;

    fn spec() -> TvSpec {
        let solver = SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], 2.0, 1e-2, 0.2).unwrap();
        let ms = solver.modes().unwrap();
        TvSpec { dictionary: dictionary(&ms).unwrap(), solver, replicas: 200, seed: 4, r: 1.0 }
    }

    #[test]
    fn identical_points_have_zero_gap() {
        let s = spec();
        let ms = s.solver.modes().unwrap();
        let x = SpectralField::constant(&ms, 0.3);
        let r = tv_experiment(&x, &x, &s).unwrap();
        assert_eq!(r.metric("sup_gap").unwrap().estimate, 0.0);
        let far = SpectralField::constant(&ms, 5.0);
        assert!(tv_experiment(&x, &far, &s).is_err());
    }

    #[test]
    fn gap_shrinks_with_distance() {
        let s = spec();
        let ms = s.solver.modes().unwrap();
        let x = SpectralField::zeros(&ms);
        let h = SpectralField::constant(&ms, 0.5);
        let r = tv_trend(&x, &h, &[1.0, 0.1, 0.01, 0.001], &s).unwrap();
        assert!(r.passed(), "{}", r.summary());
        let slope = r.metric("fitted_exponent").unwrap().estimate;
        assert!(slope > 0.5, "{slope}");
    }

    #[test]
    fn tau_frequency_monotone_in_r() {
        let mut s = spec();
        let ms = s.solver.modes().unwrap();
        let x = SpectralField::zeros(&ms);
        let mut ps = Vec::new();
        for r in [0.5, 1.0, 2.0] {
            s.r = r;
            ps.push(tv_experiment(&x, &x, &s).unwrap().metric("p_tau_exceeded").unwrap().estimate);
        }
        assert!(ps[0] >= ps[1] && ps[1] >= ps[2], "{ps:?}");
    }
}
