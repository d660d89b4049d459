use super::config::as_config;
use super::{Experiment, ExperimentConfig};
use crate::besov::{inequality_suite, NormPlan};
use crate::dynamics::{dictionary, markov_consistency, moment_survey, Observable, Profile, RunSpec};
use crate::equilibrium::{control_experiment, equilibrium_experiment, mixing_experiment, support_probe, EquilibriumConfig, MixingConfig, ProbeConfig};
use crate::error::{Error, Result};
use crate::noise::{
    analytic_wick_covariance, covariance_against, hermite_fields, ou_path, ou_step, renorm_constant, sample_stationary_ou,
    shifted_wick, stationary_variances, step_key, wick_trajectory, DiagramOrigin, NoiseKey,
};
use crate::remainder::{solve_remainder, Background, SolverConfig};
use crate::report::{ExperimentReport, Metric, Table};
use crate::sensitivity::{bel_report, solve_linearization, tv_trend, BelConfig, TvSpec};
use crate::spectral::{kernel_convolve, kernel_convolve_nested, make_mode_set, verify_kernel_bound, verify_tail_bound, ConvRange, Kernel, Mode, SpectralField};
use crate::stats::{linear_fit, Welford};
use crate::trajectory::Trajectory;
use rayon::prelude::*;
use std::time::Instant;

/// Metric name patterns and their tolerances, declared before a run starts.
pub fn declared_tolerances(experiment: Experiment) -> Vec<(&'static str, &'static str)> {
    use Experiment::*;
    match experiment {
        WickCovariance => vec![("z_n{n}_lag{lag}_{phi}", "< 4")],
        RestartConsistency => vec![
            ("shifted_wick_identity_error", "< 1e-9"),
            ("restart_binomial_error", "< 1e-9"),
            ("markov_sup_error", "< 1e-8"),
        ],
        Dissipation => vec![
            ("l2_spread_{background}", "max/min of |v(T)|² over scales ≤ 2"),
            ("loglog_slope_{background}", "within 25% of -1"),
            ("l2_nonincreasing_zero", "= 1"),
        ],
        Moments => vec![("max_pairwise_z_t{t}", "< 4"), ("explosions", "= 0")],
        Linearization => vec![("fd_order_dir{i}", ">= 0.9")],
        Bel => vec![("bel_gap_over_se_r{r}", "< 4 (first radius)"), ("girsanov_unit_mean_delta{d}", "|mean - 1| < 4 se")],
        Tv => vec![("gap_monotone_in_distance", "= 1")],
        GibbsCompare => vec![("max_z", "< 4"), ("control_max_z", "> 4")],
        Mixing => vec![
            ("decreasing_after_0.5", "= 1"),
            ("D6_over_D1", "< 0.5"),
            ("rho", "< 1 with 95% interval below 1"),
        ],
        Control => vec![("endpoint_error_{target}", "< 1e-5"), ("min_order", ">= 0.9")],
        SupportProbe => vec![("decreasing_R{r}_res{k}", "medians decrease along m")],
        BesovSuite => vec![("{inequality}_constant", "finite, drift < 50%")],
        KernelBounds => vec![("{bound}_window_drift", "< 0.1"), ("{bound}_finite", "= 1")],
    }
}

fn anchor(experiment: Experiment) -> &'static str {
    use Experiment::*;
    match experiment {
        WickCovariance => "Wick power covariance",
        RestartConsistency => "pathwise restart identities",
        Dissipation => "coming down from infinity",
        Moments => "moments uniform in the initial condition",
        Linearization => "derivative of the solution map",
        Bel => "Bismut-Elworthy-Li identity",
        Tv => "Hölder continuity of the semigroup",
        GibbsCompare => "invariant Gibbs measure",
        Mixing => "geometric convergence to the invariant measure",
        Control => "approximate controllability",
        SupportProbe => "support of the diagram law",
        BesovSuite => "Besov space inequalities",
        KernelBounds => "lattice kernel convolution bounds",
    }
}

/// Run one experiment. Configuration problems come back as errors; explosions and failed
/// checks come back as a report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let clock = Instant::now();
    let result = match cfg.experiment {
        Experiment::WickCovariance => wick_covariance(cfg),
        Experiment::RestartConsistency => restart_consistency(cfg),
        Experiment::Dissipation => dissipation(cfg),
        Experiment::Moments => moments(cfg),
        Experiment::Linearization => linearization(cfg),
        Experiment::Bel => bel(cfg),
        Experiment::Tv => tv(cfg),
        Experiment::GibbsCompare => gibbs_compare(cfg),
        Experiment::Mixing => mixing(cfg),
        Experiment::Control => control_experiment(&cfg.solver),
        Experiment::SupportProbe => probe(cfg),
        Experiment::BesovSuite => inequality_suite(cfg.replicas, cfg.seed),
        Experiment::KernelBounds => kernel_bounds(cfg),
    };
    let mut report = match result {
        Ok(r) => r,
        Err(Error::Explosion { time, reason }) => {
            let mut r = ExperimentReport::new(cfg.experiment.name());
            r.explosion = Some(format!("t = {time}: {reason}"));
            r.push(Metric::check("explosion_time", time, "no explosion", false));
            r
        }
        Err(e @ (Error::InvalidParameter(_) | Error::InvalidCutoff(_) | Error::Config(_))) => return Err(as_config(e)),
        Err(e) => return Err(e),
    };
    report.experiment = cfg.experiment.name().to_string();
    report.seed = cfg.seed;
    report.config_hash = cfg.hash();
    for m in &mut report.metrics {
        if m.anchor.is_empty() {
            m.anchor = anchor(cfg.experiment).to_string();
        }
    }
    report.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(report)
}

fn check(name: impl Into<String>, value: f64, tol: &str, pass: bool) -> Metric {
    Metric::check(name, value, tol, pass && value.is_finite())
}

fn sci(x: f64) -> String {
    format!("{x:.10e}")
}

fn wick_covariance(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let modes = cfg.solver.modes()?;
    let renorm = renorm_constant(&modes);
    let orders: Vec<usize> = cfg.list("orders")?.into_iter().map(|x| x as usize).collect();
    let lags = cfg.list("lags")?;
    if orders.iter().any(|&n| n == 0) || lags.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Config("orders must be positive and lags nonnegative".into()));
    }
    let top = *orders.iter().max().unwrap_or(&1);
    let phis = [("e0", SpectralField::constant(&modes, 1.0)), ("cos10", SpectralField::cosine(&modes, [1, 0])?)];
    let cells = lags.len() * orders.len() * phis.len();
    let products: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let key = NoiseKey::new(cfg.seed, r as u64).in_stream(0x7769);
            let w0 = sample_stationary_ou(&modes, key);
            let d0 = hermite_fields(top, &w0.field, renorm);
            let mut out = Vec::with_capacity(cells);
            for &lag in &lags {
                let d1 = if lag > 0.0 { hermite_fields(top, &ou_step(&w0, lag, step_key(key, 0))?.field, renorm) } else { d0.clone() };
                for &n in &orders {
                    for (_, phi) in &phis {
                        out.push(d0[n - 1].pairing(phi) * d1[n - 1].pairing(phi));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new("wick-covariance");
    let mut table = Table::new("wick_covariance", &["n", "lag", "phi", "empirical", "se", "analytic", "z"]);
    let mut c = 0;
    for &lag in &lags {
        for &n in &orders {
            let spectrum = analytic_wick_covariance(n, 0.0, lag, &modes)?;
            for (name, phi) in &phis {
                let w: Welford = products.iter().map(|p| p[c]).collect();
                c += 1;
                let exact = covariance_against(&spectrum, phi);
                let z = (w.mean() - exact).abs() / w.stderr();
                table.push([n.to_string(), format!("{lag}"), name.to_string(), sci(w.mean()), sci(w.stderr()), sci(exact), format!("{z:.4}")]);
                report.push(check(format!("z_n{n}_lag{lag}_{name}"), z, "< 4", z < 4.0).with_stderr(w.stderr()));
            }
        }
    }
    report.note(format!("cutoff {}, {} stationary replicas", cfg.solver.cutoff, cfg.replicas));
    report.tables.push(table);
    Ok(report)
}

fn restart_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let small_cutoff = cfg.positive("identity_cutoff")?;
    let paths = cfg.count("identity_paths")?;
    let dt = cfg.positive("identity_dt")?;
    let s = cfg.positive("identity_time")?;
    let n = cfg.solver.n();
    let modes = make_mode_set(small_cutoff)?;
    let renorm = renorm_constant(&modes);
    let k = crate::dynamics::grid_index(s, dt)?;

    let identity: f64 = (0..paths)
        .into_par_iter()
        .map(|p| -> Result<f64> {
            let key = NoiseKey::new(cfg.seed, p as u64).in_stream(0x7368);
            let start = sample_stationary_ou(&modes, key).field;
            let path = ou_path(&start, 0.0, dt, 2 * k, key, 0)?;
            let ws = &path.fields[k];
            let mut tail = Trajectory::new();
            for i in k..path.len() {
                tail.push(path.times[i], path.fields[i].clone());
            }
            let stationary = wick_trajectory(&tail, n, DiagramOrigin::Stationary)?;
            let shifted = shifted_wick(ws, s, &stationary)?;
            let mut err: f64 = 0.0;
            for (i, t) in tail.times.iter().enumerate() {
                let diff = tail.fields[i].sub(&ws.heat(t - s)?)?;
                for (j, h) in hermite_fields(n, &diff, renorm).iter().enumerate() {
                    err = err.max(h.max_abs_diff(shifted.diagram(j + 1, i)));
                }
            }
            Ok(err)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let small = SolverConfig { cutoff: small_cutoff, dt, horizon: 2.0 * s, ..cfg.solver.clone() };
    let x_small = SpectralField::constant(&small.modes()?, 1.0);
    let spec_small = RunSpec::new(small, x_small.clone(), paths, cfg.seed)?;
    let binomial = (0..paths)
        .into_par_iter()
        .map(|p| markov_consistency(&x_small, s, s, &spec_small, p).map(|m| m.binomial_error))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let t = cfg.positive("restart_time")?;
    let big = cfg.solver.with_horizon(2.0 * t);
    let x = SpectralField::constant(&big.modes()?, 1.0);
    let spec = RunSpec::new(big, x.clone(), cfg.replicas, cfg.seed)?;
    let sup = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| markov_consistency(&x, t, t, &spec, r).map(|m| m.sup_error))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut report = ExperimentReport::new("restart-consistency");
    report.push(check("shifted_wick_identity_error", identity, "< 1e-9", identity < 1e-9).with_anchor("Wick shift identity"));
    report.push(check("restart_binomial_error", binomial, "< 1e-9", binomial < 1e-9).with_anchor("restart binomial identity"));
    report.push(check("markov_sup_error", sup, "< 1e-8", sup < 1e-8).with_anchor("Markov property of the solution"));
    report.note(format!(
        "identities at cutoff {small_cutoff} over {paths} paths (dt {dt}, s = {s}); Markov restart at cutoff {}, t = h = {t}, dt {}",
        cfg.solver.cutoff, cfg.solver.dt
    ));
    Ok(report)
}

fn dissipation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let solver = &cfg.solver;
    let modes = solver.modes()?;
    let scales = cfg.list("scales")?;
    let window = cfg.list("fit_window")?;
    if scales.len() < 2 || scales.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Config("need at least two positive scales".into()));
    }
    if window.len() != 2 || !(window[0] > 0.0 && window[0] < window[1] && window[1] <= solver.horizon) {
        return Err(Error::Config("fit_window must be [t0, t1] with 0 < t0 < t1 ≤ horizon".into()));
    }
    let key = NoiseKey::new(cfg.seed, 0).in_stream(0x6469);
    let ou = ou_path(&sample_stationary_ou(&modes, key).field, 0.0, solver.dt, solver.steps(), key, 0)?;
    let renorm = renorm_constant(&modes);
    let backgrounds = [("zero", Background::Polynomial), ("sampled", Background::Hermite { ou: &ou, renorm })];
    let largest = scales.iter().copied().fold(0.0, f64::max);

    let mut report = ExperimentReport::new("dissipation");
    let mut table = Table::new("dissipation", &["background", "scale", "t", "l2_sq"]);
    let stride = (solver.steps() / 50).max(1);
    for (name, bg) in &backgrounds {
        let mut finals = Vec::new();
        for &c in &scales {
            let x = SpectralField::constant(&modes, c);
            let sol = solve_remainder(&x, bg, solver)?;
            if let Some(e) = sol.explosion {
                return Err(Error::Explosion { time: e.time, reason: e.reason });
            }
            let l2: Vec<f64> = sol.v.fields.iter().map(|f| f.l2_norm_sq()).collect();
            for (i, t) in sol.v.times.iter().enumerate().step_by(stride) {
                table.push([name.to_string(), format!("{c}"), format!("{t:.6}"), sci(l2[i])]);
            }
            finals.push(*l2.last().expect("nonempty"));
            if c == largest {
                let pts: Vec<(f64, f64)> = (0..=40)
                    .map(|j| window[0] * (window[1] / window[0]).powf(j as f64 / 40.0))
                    .map(|t| ((t / solver.dt).round() as usize).min(l2.len() - 1))
                    .map(|i| (sol.v.times[i].ln(), l2[i].ln()))
                    .collect();
                let (lx, ly): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                let (_, slope, se) = linear_fit(&lx, &ly);
                report.push(
                    check(format!("loglog_slope_{name}"), slope, "within 25% of -1", (slope + 1.0).abs() <= 0.25).with_stderr(se),
                );
                if *name == "zero" {
                    let mono = l2.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
                    report.push(check("l2_nonincreasing_zero", if mono { 1.0 } else { 0.0 }, "= 1", mono));
                }
            }
        }
        let (lo, hi) = finals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let spread = hi / lo;
        for (c, v) in scales.iter().zip(&finals) {
            report.push(Metric::info(format!("l2_sq_final_{name}_x{c}"), *v));
        }
        report.push(check(format!("l2_spread_{name}"), spread, "max/min ≤ 2", spread <= 2.0));
    }
    report.note(format!("x = c·e0, cutoff {}, T = {}, slope of log|v(t)|² on [{}, {}]", solver.cutoff, solver.horizon, window[0], window[1]));
    report.tables.push(table);
    Ok(report)
}

fn moments(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let modes = cfg.solver.modes()?;
    let mut family: Vec<(String, SpectralField)> = cfg
        .list("mean_scales")?
        .into_iter()
        .map(|c| (format!("mean{c}"), SpectralField::constant(&modes, c)))
        .collect();
    let cs = cfg.num("cos_scale")?;
    if cs != 0.0 {
        family.push((format!("cos10x{cs}"), SpectralField::cosine(&modes, [1, 0])?.scaled(cs)));
    }
    let p = cfg.count("p")?;
    let spec = RunSpec::new(cfg.solver.clone(), SpectralField::zeros(&modes), cfg.replicas, cfg.seed)?;
    moment_survey(&family, &cfg.list("times")?, p, cfg.solver.reg.alpha, &spec)
}

fn linearization(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let solver = cfg.solver.without_substeps();
    let modes = solver.modes()?;
    let renorm = renorm_constant(&modes);
    let key = NoiseKey::new(cfg.seed, 0).in_stream(0x6c69);
    let ou = ou_path(&sample_stationary_ou(&modes, key).field, 0.0, solver.dt, solver.steps(), key, 0)?;
    let bg = Background::Hermite { ou: &ou, renorm };
    let x = SpectralField::constant(&modes, 1.0);
    let base = solve_remainder(&x, &bg, &solver)?;
    if let Some(e) = base.explosion {
        return Err(Error::Explosion { time: e.time, reason: e.reason });
    }
    let deltas = cfg.list("deltas")?;
    if deltas.len() != 2 || deltas.iter().any(|&d| !(d > 0.0)) || deltas[0] == deltas[1] {
        return Err(Error::Config("deltas must be two distinct positive step sizes".into()));
    }
    let dirs = cfg.count("directions")?;
    let var = stationary_variances(&modes);
    let mut report = ExperimentReport::new("linearization");
    let mut table = Table::new("linearization", &["direction", "delta", "sup_error"]);
    let rows: Vec<(usize, Vec<f64>)> = (0..dirs)
        .into_par_iter()
        .map(|i| -> Result<(usize, Vec<f64>)> {
            let g = NoiseKey::new(cfg.seed, i as u64).in_stream(0x6864).gaussian(&modes, &var);
            let h = g.scaled(1.0 / g.l2_norm_sq().sqrt());
            let flow = solve_linearization(&solver.a, &bg, &base.v, 0, &h)?;
            let errs = deltas
                .iter()
                .map(|&d| -> Result<f64> {
                    let mut xd = x.clone();
                    xd.axpy(d, &h)?;
                    let pert = solve_remainder(&xd, &bg, &solver)?;
                    if let Some(e) = pert.explosion {
                        return Err(Error::Explosion { time: e.time, reason: e.reason });
                    }
                    let mut err: f64 = 0.0;
                    for ((p, b), j) in pert.v.fields.iter().zip(&base.v.fields).zip(&flow.j.fields) {
                        err = err.max(p.sub(b)?.scaled(1.0 / d).max_abs_diff(j));
                    }
                    Ok(err)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((i, errs))
        })
        .collect::<Result<_>>()?;
    for (i, errs) in rows {
        for (d, e) in deltas.iter().zip(&errs) {
            table.push([i.to_string(), format!("{d:e}"), sci(*e)]);
        }
        let order = (errs[0] / errs[1]).ln() / (deltas[0] / deltas[1]).ln();
        report.push(check(format!("fd_order_dir{i}"), order, ">= 0.9", order >= 0.9));
    }
    report.note(format!("cutoff {}, T = {}, dt {}, no substeps, unit L2 Gaussian directions", solver.cutoff, solver.horizon, solver.dt));
    report.tables.push(table);
    Ok(report)
}

fn bel(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let modes = cfg.solver.modes()?;
    let obs = Observable::new("sin_e0", Profile::Sin, SpectralField::constant(&modes, 1.0));
    let mut bc = BelConfig::new(cfg.solver.clone(), obs, cfg.replicas, cfg.seed)?;
    bc.radii = cfg.list("radii")?;
    if bc.radii.is_empty() || bc.radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Config("radii must be a nonempty list of positive numbers".into()));
    }
    bel_report(&bc)
}

fn tv(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let modes = cfg.solver.modes()?;
    let one = SpectralField::constant(&modes, 1.0);
    let h = one.scaled(1.0 / NormPlan::covering(&modes).holder_norm(&one, -cfg.solver.reg.alpha0));
    let spec = TvSpec {
        solver: cfg.solver.clone(),
        replicas: cfg.replicas,
        seed: cfg.seed,
        dictionary: dictionary(&modes)?,
        r: cfg.positive("radius")?,
    };
    tv_trend(&SpectralField::zeros(&modes), &h, &cfg.list("distances")?, &spec)
}

fn gibbs_compare(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut ec = EquilibriumConfig::new(cfg.solver.clone(), cfg.seed)?;
    ec.replicas = cfg.replicas;
    ec.run_time = cfg.positive("run_time")?;
    ec.burn_in_time = cfg.num("burn_in_time")?;
    ec.sample_every = cfg.positive("sample_every")?;
    ec.control_factor = cfg.positive("control_factor")?;
    ec.gibbs.chain_len = cfg.count("chain_length")?;
    ec.gibbs.chains = cfg.count("chains")?;
    ec.gibbs.thin = cfg.count("thin")?.max(1);
    ec.gibbs.burn_in = ec.gibbs.burn_in.min(ec.gibbs.chain_len / 5);
    if ec.gibbs.chains < 2 || ec.gibbs.chain_len < 100 {
        return Err(Error::Config("need chains ≥ 2 and chain_length ≥ 100".into()));
    }
    equilibrium_experiment(&ec)
}

fn mixing(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let times = cfg.list("times")?;
    let last = times.iter().copied().fold(0.0, f64::max);
    let solver = cfg.solver.with_horizon(last);
    let modes = solver.modes()?;
    let mc = MixingConfig {
        dictionary: dictionary(&modes)?,
        solver,
        times,
        replicas: cfg.replicas,
        seed: cfg.seed,
        bootstrap: cfg.count("bootstrap")?,
    };
    let y = SpectralField::constant(&modes, cfg.num("y_scale")?);
    mixing_experiment(&SpectralField::zeros(&modes), &y, &mc)
}

fn probe(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let levels = cfg.list("levels")?;
    if levels.iter().any(|&m| !(m >= 1.0 && m <= 12.0 && m.fract() == 0.0)) {
        return Err(Error::Config("levels must be integers in [1, 12]".into()));
    }
    support_probe(&ProbeConfig {
        levels: levels.into_iter().map(|m| m as u32).collect(),
        renorms: cfg.list("renorms")?,
        lambda: cfg.positive("lambda")?,
        alpha: cfg.positive("probe_alpha")?,
        times: cfg.list("probe_times")?,
        replicas: cfg.replicas,
        seed: cfg.seed,
    })
}

fn disc(radius: i32) -> Vec<Mode> {
    let r2 = (radius as i64) * (radius as i64);
    (-radius..=radius)
        .flat_map(|a| (-radius..=radius).map(move |b| [a, b]))
        .filter(|m| (m[0] as i64).pow(2) + (m[1] as i64).pow(2) <= r2)
        .collect()
}

fn nested_constant(k: &Kernel, samples: &[Mode]) -> Result<f64> {
    let e = k.decay_exponent();
    let mut c: f64 = 0.0;
    for &m in samples {
        let r2 = (m[0] as f64).powi(2) + (m[1] as f64).powi(2);
        c = c.max(k.get(m)? * (1.0 + r2).powf(e));
    }
    Ok(c)
}

fn kernel_bounds(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let windows: Vec<i32> = cfg.list("windows")?.into_iter().map(|w| w as i32).collect();
    let (alpha, beta) = (cfg.positive("kernel_alpha")?, cfg.positive("kernel_beta")?);
    let radius = cfg.count("sample_radius")? as i32;
    let tail_n = cfg.count("tail_cutoff")? as i32;
    let depth = cfg.count("nested_depth")?;
    let gamma = cfg.num("nested_gamma")?;
    if windows.len() < 2 || windows.iter().any(|&w| w < 2 * radius.max(tail_n)) {
        return Err(Error::Config("need two windows, each at least twice the sample radius and tail cutoff".into()));
    }
    let samples = disc(radius);
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for &w in &windows {
        let ka = Kernel::power_law(1.0 - alpha, w)?;
        let kb = Kernel::power_law(1.0 - beta, w)?;
        let full = verify_kernel_bound(&kernel_convolve(&ka, &kb, ConvRange::Full)?.kernel, alpha, beta, &samples)?;
        let tail = verify_tail_bound(&kernel_convolve(&ka, &kb, ConvRange::Beyond(tail_n))?.kernel, alpha, beta, tail_n, &samples)?;
        let nested = nested_constant(&kernel_convolve_nested(&Kernel::power_law(gamma, w)?, depth, ConvRange::Full)?.kernel, &samples)?;
        let k1 = Kernel::power_law(0.0, w)?;
        let log = verify_kernel_bound(&kernel_convolve(&k1, &k1, ConvRange::Full)?.kernel, 1.0, 1.0, &samples)?;
        rows.push([full, tail, nested, log]);
    }
    let mut report = ExperimentReport::new("kernel-bounds");
    let mut table = Table::new("kernel_bounds", &["window", "product", "tail", "nested", "log_case"]);
    for (w, r) in windows.iter().zip(&rows) {
        table.push([w.to_string(), sci(r[0]), sci(r[1]), sci(r[2]), sci(r[3])]);
    }
    for (j, name) in ["product", "tail", "nested", "log_case"].iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let finite = vals.iter().all(|v| v.is_finite() && *v > 0.0);
        let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let drift = (hi - lo) / lo;
        report.push(check(format!("{name}_finite"), if finite { 1.0 } else { 0.0 }, "= 1", finite));
        report.push(check(format!("{name}_window_drift"), drift, "< 0.1", drift < 0.1));
        report.push(Metric::info(format!("{name}_constant"), hi));
    }
    report.note(format!(
        "α = {alpha}, β = {beta}, tail cutoff {tail_n}, nested depth {depth} with γ = {gamma}, samples |m| ≤ {radius}"
    ));
    report.tables.push(table);
    Ok(report)
}
