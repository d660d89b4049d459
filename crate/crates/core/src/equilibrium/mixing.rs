use crate::dynamics::{grid_index, Engine, Observable, ProcessState};
use crate::error::{invalid, Result};
use crate::noise::NoiseKey;
use crate::remainder::SolverConfig;
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::SpectralField;
use crate::stats::{linear_fit, quantile, Welford};
use rand::Rng;
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct MixingConfig {
    pub solver: SolverConfig,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub dictionary: Vec<Observable>,
    pub bootstrap: usize,
}

/// `diffs[r][t][o] = Φ_o(X_t(x)) - Φ_o(X_t(y))` for replica `r` under common noise.
fn paired_differences(x: &SpectralField, y: &SpectralField, cfg: &MixingConfig) -> Result<(Vec<Vec<Vec<f64>>>, usize)> {
    let engine = Engine::new(&cfg.solver)?;
    let modes = engine.modes().clone();
    let idx: Vec<usize> = cfg.times.iter().map(|&t| grid_index(t, cfg.solver.dt)).collect::<Result<_>>()?;
    let last = *idx.iter().max().expect("nonempty");
    let (x, y) = (x.project_onto(&modes), y.project_onto(&modes));
    let record = |start: &SpectralField, key: NoiseKey| {
        let mut s = ProcessState::initial(start);
        let mut vals = vec![Vec::new(); idx.len()];
        let boom = engine
            .advance(&mut s, last, key, |st| {
                for (slot, &k) in idx.iter().enumerate() {
                    if k == st.step {
                        vals[slot] = cfg.dictionary.iter().map(|o| o.value(&st.x)).collect();
                    }
                }
            })
            .is_some();
        (vals, boom)
    };
    let runs: Vec<(Vec<Vec<f64>>, bool)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let key = NoiseKey::new(cfg.seed, r as u64);
            let (a, ea) = record(&x, key);
            let (b, eb) = record(&y, key);
            let d = a.iter().zip(&b).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p - q).collect()).collect();
            (d, ea || eb)
        })
        .collect();
    let explosions = runs.iter().filter(|r| r.1).count();
    Ok((runs.into_iter().filter(|r| !r.1).map(|r| r.0).collect(), explosions))
}

/// `D(t) = max_Φ |mean Φ(X_t(x)) - mean Φ(X_t(y))|` over a replica subset and observable subset.
fn proxy(diffs: &[Vec<Vec<f64>>], picks: &[usize], obs: &[usize], t: usize) -> f64 {
    let n = picks.len() as f64;
    obs.iter()
        .map(|&o| (picks.iter().map(|&r| diffs[r][t][o]).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// `ln ρ` from the log-linear fit of `D(t)`.
fn fit_log_rho(times: &[f64], d: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = times.iter().zip(d).filter(|(_, &v)| v > 0.0).map(|(&t, &v)| (t, v.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&x, &y).1
}

/// Dictionary proxy for `‖P_t(x) - P_t(y)‖_TV` over time, its geometric fit `D(t) ≈ D₀ρ^t`
/// with a bootstrap interval, and the same fit on half the dictionary.
pub fn mixing_experiment(x: &SpectralField, y: &SpectralField, cfg: &MixingConfig) -> Result<ExperimentReport> {
    if cfg.times.len() < 2 || cfg.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("mixing times must be increasing with at least two entries"));
    }
    if cfg.replicas < 2 || cfg.dictionary.is_empty() {
        return Err(invalid("need replicas ≥ 2 and a nonempty dictionary"));
    }
    let (diffs, explosions) = paired_differences(x, y, cfg)?;
    let nr = diffs.len();
    let all: Vec<usize> = (0..nr).collect();
    let obs_all: Vec<usize> = (0..cfg.dictionary.len()).collect();
    let obs_half: Vec<usize> = obs_all.iter().copied().step_by(2).collect();

    let mut report = ExperimentReport::new("mixing");
    report.seed = cfg.seed;
    let mut table = Table::new("mixing", &["t", "observable", "gap", "se"]);
    let mut d = Vec::new();
    for (ti, &t) in cfg.times.iter().enumerate() {
        let mut best = (0.0, 0.0);
        for (o, obs) in cfg.dictionary.iter().enumerate() {
            let w: Welford = diffs.iter().map(|r| r[ti][o]).collect();
            table.push([format!("{t}"), obs.name.clone(), format!("{:.10e}", w.mean().abs()), format!("{:.10e}", w.stderr())]);
            if w.mean().abs() >= best.0 {
                best = (w.mean().abs(), w.stderr());
            }
        }
        report.push(Metric::info(format!("D_t{t}"), best.0).with_stderr(best.1));
        d.push(best.0);
    }
    let start = cfg.times.iter().position(|&t| t >= 0.5).unwrap_or(0);
    let decreasing = d[start..].windows(2).all(|w| w[1] < w[0]);
    report.push(
        Metric::check("decreasing_after_0.5", if decreasing { 1.0 } else { 0.0 }, "= 1", decreasing)
            .with_anchor("geometric convergence to the invariant measure"),
    );
    let at = |t: f64| cfg.times.iter().position(|&s| (s - t).abs() < 1e-9);
    if let (Some(i1), Some(i6)) = (at(1.0), at(6.0)) {
        let ratio = d[i6] / d[i1];
        report.push(Metric::check("D6_over_D1", ratio, "< 0.5", ratio < 0.5).with_anchor("Doeblin-type minorization"));
    }

    let log_rho = fit_log_rho(&cfg.times, &d);
    let rho = log_rho.exp();
    let mut rng = NoiseKey::new(cfg.seed, u64::MAX).in_stream(0x6d6978).rng();
    let boot: Vec<f64> = (0..cfg.bootstrap)
        .map(|_| {
            let picks: Vec<usize> = (0..nr).map(|_| rng.random_range(0..nr)).collect();
            let db: Vec<f64> = (0..cfg.times.len()).map(|ti| proxy(&diffs, &picks, &obs_all, ti)).collect();
            fit_log_rho(&cfg.times, &db).exp()
        })
        .filter(|r| r.is_finite())
        .collect();
    let (lo, hi) = (quantile(&boot, 0.025), quantile(&boot, 0.975));
    report.push(
        Metric::check("rho", rho, "< 1 with 95% interval below 1", rho < 1.0 && hi < 1.0)
            .with_anchor("geometric convergence to the invariant measure"),
    );
    report.push(Metric::info("rho_ci_low", lo));
    report.push(Metric::info("rho_ci_high", hi));
    let dh: Vec<f64> = (0..cfg.times.len()).map(|ti| proxy(&diffs, &all, &obs_half, ti)).collect();
    let rho_half = fit_log_rho(&cfg.times, &dh).exp();
    let drift = (rho_half - rho).abs() / rho;
    report.push(Metric::info("rho_half_dictionary", rho_half));
    report.push(Metric::info("rho_half_relative_change", drift));
    if explosions > 0 {
        report.explosion = Some(format!("{explosions} replica pair(s) exploded"));
        report.push(Metric::check("explosions", explosions as f64, "= 0", false));
    }
    report.note(format!("{nr} replica pairs with common noise, {} observables, {} bootstrap resamples", cfg.dictionary.len(), boot.len()));
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::dictionary;

    fn cfg(replicas: usize) -> MixingConfig {
        let solver = SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], 3.0, 1e-2, 1.0).unwrap();
        let ms = solver.modes().unwrap();
        MixingConfig { dictionary: dictionary(&ms).unwrap(), solver, times: vec![0.5, 1.0, 2.0, 3.0], replicas, seed: 2, bootstrap: 100 }
    }

    #[test]
    fn equal_starts_give_zero() {
        let c = cfg(20);
        let ms = c.solver.modes().unwrap();
        let x = SpectralField::constant(&ms, 1.0);
        let r = mixing_experiment(&x, &x, &c).unwrap();
        for t in [0.5, 1.0, 2.0, 3.0] {
            assert_eq!(r.metric(&format!("D_t{t}")).unwrap().estimate, 0.0);
        }
    }

    #[test]
    fn decay_and_symmetry() {
        let c = cfg(100);
        let ms = c.solver.modes().unwrap();
        let x = SpectralField::zeros(&ms);
        let y = SpectralField::constant(&ms, 5.0);
        let a = mixing_experiment(&x, &y, &c).unwrap();
        let b = mixing_experiment(&y, &x, &c).unwrap();
        assert!(a.metric("decreasing_after_0.5").unwrap().verdict == crate::report::Verdict::Pass, "{}", a.summary());
        for t in [0.5, 1.0, 2.0, 3.0] {
            let k = format!("D_t{t}");
            assert!((a.metric(&k).unwrap().estimate - b.metric(&k).unwrap().estimate).abs() < 1e-12);
        }
        assert!(a.metric("rho").unwrap().estimate < 1.0);
    }
}
