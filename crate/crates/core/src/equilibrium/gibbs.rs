use crate::besov::NormPlan;
use crate::dynamics::{grid_index, Engine, ProcessState};
use crate::error::{invalid, Result};
use crate::noise::{hermite_all, renorm_constant, NoiseKey};
use crate::remainder::SolverConfig;
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{grid_size, make_mode_set, with_grid, ModeSet, SpectralField};
use crate::stats::{batch_means, integrated_autocorr_time, z_score};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::sync::Arc;

/// Noise stream reserved for Metropolis chains.
const GIBBS_STREAM: u64 = 0x6762;

/// Target `exp(-Σ I_m|c_m|² - 2 Σ_k a_k/(k+1) ∫ ℋ_{k+1}(X, ℜ))` on a mode set.
#[derive(Clone, Debug)]
pub struct GibbsSpec {
    pub modes: Arc<ModeSet>,
    pub a: Vec<f64>,
    pub renorm: f64,
    /// Proposal scale relative to the free-field standard deviation; tuned during burn-in.
    pub step: f64,
    pub chain_len: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

impl GibbsSpec {
    /// Exact renormalization constant of the mode set and default chain settings.
    pub fn new(cutoff: f64, a: Vec<f64>) -> Result<Self> {
        check_potential(&a)?;
        let modes = make_mode_set(cutoff)?;
        let renorm = renorm_constant(&modes);
        let dim = modes.len() as f64;
        Ok(GibbsSpec { modes, a, renorm, step: 2.38 / dim.sqrt(), chain_len: 200_000, burn_in: 20_000, thin: 10, chains: 4 })
    }

    fn grid(&self) -> usize {
        grid_size(self.a.len() as i32 * self.modes.bandwidth())
    }

    /// Free-field standard deviation of each real coordinate of mode `i`.
    fn coord_std(&self, i: usize) -> f64 {
        let l = self.modes.intensity(i);
        if i == self.modes.zero_index() {
            (0.5 / l).sqrt()
        } else {
            (0.25 / l).sqrt()
        }
    }
}

/// Zero coefficients are allowed here; they give the free field.
fn check_potential(a: &[f64]) -> Result<()> {
    if a.is_empty() || a.iter().any(|c| !c.is_finite()) {
        return Err(invalid("potential coefficients must be a nonempty list of finite numbers"));
    }
    let n = a.len() - 1;
    if a[n] != 0.0 && (n % 2 == 0 || a[n] < 0.0) {
        return Err(invalid("a nonzero leading coefficient needs odd n and a_n > 0"));
    }
    Ok(())
}

/// `2 Σ_k a_k/(k+1) ∫ ℋ_{k+1}(X, ℜ)` by exact grid quadrature.
pub fn potential(field: &SpectralField, spec: &GibbsSpec) -> f64 {
    let n = spec.a.len() - 1;
    let mut h = vec![0.0; n + 2];
    with_grid(spec.grid(), |g| {
        let vals = g.synthesize(field);
        let mut s = 0.0;
        for v in &vals {
            hermite_all(n + 1, v.re, spec.renorm, &mut h);
            for k in 0..=n {
                s += spec.a[k] / (k + 1) as f64 * h[k + 1];
            }
        }
        2.0 * s / vals.len() as f64
    })
}

/// Log density of the Gibbs measure relative to Lebesgue measure on the coefficients.
pub fn gibbs_log_density(field: &SpectralField, spec: &GibbsSpec) -> f64 {
    let gauss: f64 = field.coeffs().iter().zip(field.mode_set().intensities()).map(|(c, l)| l * c.norm_sqr()).sum();
    -gauss - potential(field, spec)
}

/// Metropolis acceptance probability for a symmetric proposal `from → to`.
pub fn acceptance_ratio(from: &SpectralField, to: &SpectralField, spec: &GibbsSpec) -> f64 {
    (gibbs_log_density(to, spec) - gibbs_log_density(from, spec)).exp().min(1.0)
}

fn propose<R: Rng>(x: &SpectralField, spec: &GibbsSpec, step: f64, rng: &mut R) -> SpectralField {
    let ms = &spec.modes;
    let mut y = x.clone();
    for i in 0..ms.len() {
        if !ms.is_representative(i) {
            continue;
        }
        let s = step * spec.coord_std(i);
        let a: f64 = StandardNormal.sample(rng);
        if i == ms.zero_index() {
            y.coeffs_mut()[i] += Complex64::new(s * a, 0.0);
        } else {
            let b: f64 = StandardNormal.sample(rng);
            let d = Complex64::new(s * a, s * b);
            y.coeffs_mut()[i] += d;
            let j = ms.neg_index(i);
            y.coeffs_mut()[j] += d.conj();
        }
    }
    y
}

/// Exact free-field sample, used as the chain's starting point.
fn free_field<R: Rng>(spec: &GibbsSpec, rng: &mut R) -> SpectralField {
    propose(&SpectralField::zeros(&spec.modes), spec, 1.0, rng)
}

#[derive(Clone, Debug)]
pub struct GibbsChain {
    pub samples: Vec<SpectralField>,
    pub acceptance: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct GibbsRun {
    pub chains: Vec<GibbsChain>,
    pub warnings: Vec<String>,
}

impl GibbsRun {
    pub fn acceptance(&self) -> f64 {
        self.chains.iter().map(|c| c.acceptance).sum::<f64>() / self.chains.len() as f64
    }

    /// Per-chain series of `f` over the kept samples.
    pub fn series(&self, f: impl Fn(&SpectralField) -> f64 + Sync) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.samples.iter().map(&f).collect()).collect()
    }
}

fn run_chain(spec: &GibbsSpec, key: NoiseKey) -> GibbsChain {
    let mut rng = key.rng();
    let mut x = free_field(spec, &mut rng);
    let mut lp = gibbs_log_density(&x, spec);
    let mut step = spec.step;
    let mut accepted = 0usize;
    let mut window = 0usize;
    let mut samples = Vec::with_capacity(spec.chain_len / spec.thin.max(1) + 1);
    for it in 0..spec.burn_in + spec.chain_len {
        let y = propose(&x, spec, step, &mut rng);
        let ly = gibbs_log_density(&y, spec);
        let u: f64 = rng.random();
        let ok = u.ln() < ly - lp;
        if ok {
            x = y;
            lp = ly;
        }
        if it < spec.burn_in {
            // Robbins-Monro adaptation towards acceptance 0.25
            window += 1;
            let rate = if ok { 1.0 } else { 0.0 };
            step *= ((rate - 0.25) / (window as f64).sqrt().max(10.0)).exp();
        } else {
            if ok {
                accepted += 1;
            }
            if (it - spec.burn_in) % spec.thin.max(1) == 0 {
                samples.push(x.clone());
            }
        }
    }
    GibbsChain { samples, acceptance: accepted as f64 / spec.chain_len.max(1) as f64, step }
}

/// Independent random-walk Metropolis chains with per-mode proposal scales `∝ 1/√I_m`.
pub fn metropolis_sample(spec: &GibbsSpec, seed: u64) -> Result<GibbsRun> {
    check_potential(&spec.a)?;
    if spec.chains == 0 || spec.chain_len == 0 {
        return Err(invalid("need at least one chain of positive length"));
    }
    let chains: Vec<GibbsChain> = (0..spec.chains)
        .into_par_iter()
        .map(|c| run_chain(spec, NoiseKey::new(seed, c as u64).in_stream(GIBBS_STREAM)))
        .collect();
    let mut warnings = Vec::new();
    for (i, c) in chains.iter().enumerate() {
        if !(0.1..=0.7).contains(&c.acceptance) {
            warnings.push(format!(
                "chain {i}: acceptance {:.3} outside [0.1, 0.7]; lengthen burn-in or set the step near {:.3}",
                c.acceptance,
                c.step * (c.acceptance / 0.25).max(0.1)
            ));
        }
    }
    Ok(GibbsRun { chains, warnings })
}

/// Mean, autocorrelation-corrected standard error (batch means per chain) and effective sample size.
pub fn chain_estimate(chains: &[Vec<f64>]) -> (f64, f64, f64) {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut ess = 0.0;
    for c in chains {
        let w = c.len() as f64 / total as f64;
        let (m, se) = batch_means(c, 20);
        mean += w * m;
        var += w * w * se * se;
        ess += c.len() as f64 / integrated_autocorr_time(c);
    }
    (mean, var.sqrt(), ess)
}

/// Per-observable means with autocorrelation-corrected errors and z-scores.
pub fn equilibrium_compare(
    names: &[String],
    dynamics: &[Vec<Vec<f64>>],
    gibbs: &[Vec<Vec<f64>>],
) -> Result<ExperimentReport> {
    if names.len() != dynamics.len() || names.len() != gibbs.len() {
        return Err(invalid("observable count mismatch"));
    }
    let mut report = ExperimentReport::new("gibbs-compare");
    let mut table = Table::new("gibbs_compare", &["observable", "dynamics_mean", "dynamics_se", "dynamics_ess", "gibbs_mean", "gibbs_se", "gibbs_ess", "z"]);
    for ((name, d), g) in names.iter().zip(dynamics).zip(gibbs) {
        let (md, sd, ed) = chain_estimate(d);
        let (mg, sg, eg) = chain_estimate(g);
        let z = z_score(md, sd, mg, sg);
        table.push([
            name.clone(),
            format!("{md:.8e}"),
            format!("{sd:.3e}"),
            format!("{ed:.0}"),
            format!("{mg:.8e}"),
            format!("{sg:.3e}"),
            format!("{eg:.0}"),
            format!("{z:.3}"),
        ]);
        report.push(Metric::info(format!("z_{name}"), z));
        report.push(Metric::info(format!("ess_dynamics_{name}"), ed));
        report.push(Metric::info(format!("ess_gibbs_{name}"), eg));
    }
    report.tables.push(table);
    Ok(report)
}

/// Long-run dynamics against the Metropolis oracle, with a perturbed-`ℜ` negative control.
#[derive(Clone, Debug)]
pub struct EquilibriumConfig {
    pub solver: SolverConfig,
    pub replicas: usize,
    pub burn_in_time: f64,
    /// Sampled time per replica after burn-in.
    pub run_time: f64,
    pub sample_every: f64,
    pub gibbs: GibbsSpec,
    /// The control chain uses `ℜ · control_factor`.
    pub control_factor: f64,
    pub seed: u64,
}

impl EquilibriumConfig {
    pub fn new(solver: SolverConfig, seed: u64) -> Result<Self> {
        let gibbs = GibbsSpec::new(solver.cutoff, solver.a.clone())?;
        Ok(EquilibriumConfig {
            solver,
            replicas: 8,
            burn_in_time: 5.0,
            run_time: 500.0,
            sample_every: 0.05,
            gibbs,
            control_factor: 1.5,
            seed,
        })
    }
}

/// `⟨X, e_0⟩²` and `‖X‖_{C^{-α}}`.
fn observables(x: &SpectralField, plan: &NormPlan, alpha: f64) -> [f64; 2] {
    let m = x.mean();
    [m * m, plan.holder_norm(x, -alpha)]
}

pub fn equilibrium_experiment(cfg: &EquilibriumConfig) -> Result<ExperimentReport> {
    let solver = &cfg.solver;
    let engine = Engine::new(solver)?;
    let modes = engine.modes().clone();
    let plan = NormPlan::covering(&modes);
    let alpha = solver.reg.alpha;
    let burn = grid_index(cfg.burn_in_time, solver.dt)?;
    let every = grid_index(cfg.sample_every, solver.dt)?.max(1);
    let run = grid_index(cfg.run_time, solver.dt)?;
    let names = vec!["mean_sq".to_string(), format!("holder_norm_alpha{alpha}")];

    let dyn_series: Vec<(Vec<Vec<f64>>, bool)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let key = NoiseKey::new(cfg.seed, r as u64);
            let mut s = ProcessState::initial(&SpectralField::zeros(&modes));
            let mut out = vec![Vec::with_capacity(run / every + 1); 2];
            let mut boom = engine.advance(&mut s, burn, key, |_| {}).is_some();
            if !boom {
                boom = engine
                    .advance(&mut s, run, key, |st| {
                        if (st.step - burn) % every == 0 {
                            for (o, v) in out.iter_mut().zip(observables(&st.x, &plan, alpha)) {
                                o.push(v);
                            }
                        }
                    })
                    .is_some();
            }
            (out, boom)
        })
        .collect();
    let explosions = dyn_series.iter().filter(|d| d.1).count();
    let dynamics: Vec<Vec<Vec<f64>>> =
        (0..2).map(|k| dyn_series.iter().filter(|d| !d.1).map(|d| d.0[k].clone()).collect()).collect();

    let mut gspec = cfg.gibbs.clone();
    gspec.modes = modes.clone();
    let sample = |spec: &GibbsSpec, seed: u64| -> Result<(Vec<Vec<Vec<f64>>>, GibbsRun)> {
        let run = metropolis_sample(spec, seed)?;
        let s = (0..2).map(|k| run.series(|x| observables(x, &plan, alpha)[k])).collect();
        Ok((s, run))
    };
    let (gibbs, grun) = sample(&gspec, cfg.seed)?;
    let mut control_spec = gspec.clone();
    control_spec.renorm *= cfg.control_factor;
    let (control, crun) = sample(&control_spec, cfg.seed.wrapping_add(1))?;

    let mut report = equilibrium_compare(&names, &dynamics, &gibbs)?;
    report.seed = cfg.seed;
    let ctl = equilibrium_compare(&names, &dynamics, &control)?;
    let mut zmax: f64 = 0.0;
    let mut zctl: f64 = 0.0;
    let mut ess_min = f64::INFINITY;
    for name in &names {
        zmax = zmax.max(report.metric(&format!("z_{name}")).map_or(f64::NAN, |m| m.estimate));
        zctl = zctl.max(ctl.metric(&format!("z_{name}")).map_or(f64::NAN, |m| m.estimate));
        for side in ["dynamics", "gibbs"] {
            ess_min = ess_min.min(report.metric(&format!("ess_{side}_{name}")).map_or(0.0, |m| m.estimate));
        }
    }
    report.push(Metric::check("max_z", zmax, "< 4", zmax < 4.0).with_anchor("invariant Gibbs measure"));
    report.push(
        Metric::check("control_max_z", zctl, "> 4", zctl > 4.0).with_anchor("negative control with perturbed renormalization"),
    );
    report.push(Metric::info("min_effective_samples", ess_min));
    report.push(Metric::info("metropolis_acceptance", grun.acceptance()));
    report.push(Metric::info("control_acceptance", crun.acceptance()));
    if explosions > 0 {
        report.explosion = Some(format!("{explosions} dynamics replica(s) exploded"));
        report.push(Metric::check("explosions", explosions as f64, "= 0", false));
    }
    for w in grun.warnings.iter().chain(&crun.warnings) {
        report.note(w.clone());
    }
    report.note(format!(
        "control chain uses renormalization {:.6} = {} × {:.6}",
        control_spec.renorm, cfg.control_factor, gspec.renorm
    ));
    for mut t in ctl.tables {
        t.name = "gibbs_compare_control".into();
        report.tables.push(t);
    }
    let mut gt = Table::new("gibbs", &["sample_id", "observable", "value"]);
    let mut id = 0usize;
    for c in &grun.chains {
        for x in c.samples.iter().step_by(50) {
            let v = observables(x, &plan, alpha);
            for (name, val) in names.iter().zip(v) {
                gt.push([id.to_string(), name.clone(), format!("{val:.10e}")]);
            }
            id += 1;
        }
    }
    report.tables.push(gt);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::hermite;
    use rand::SeedableRng;

    #[test]
    fn potential_at_zero() {
        let spec = GibbsSpec::new(4.0, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let z = SpectralField::zeros(&spec.modes);
        let r = spec.renorm;
        assert!((gibbs_log_density(&z, &spec) + 0.5 * 3.0 * r * r).abs() < 1e-12);
        assert!((hermite(4, 0.0, r) - 3.0 * r * r).abs() < 1e-14);
    }

    #[test]
    fn gaussian_ratio_closed_form() {
        let spec = GibbsSpec::new(3.0, vec![0.0, 0.0]).unwrap();
        let ms = spec.modes.clone();
        let x = SpectralField::cosine(&ms, [1, 0]).unwrap().scaled(0.3);
        let y = SpectralField::constant(&ms, 0.7);
        let l = ms.intensity(ms.index_of([1, 0]).unwrap());
        let expect = -(2.0 * l * 0.09) + 0.49;
        let got = gibbs_log_density(&x, &spec) - gibbs_log_density(&y, &spec);
        assert!((got - expect).abs() < 1e-12, "{got} {expect}");
    }

    #[test]
    fn detailed_balance_identity() {
        let spec = GibbsSpec::new(3.0, vec![0.0, 0.5, 0.0, 1.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = free_field(&spec, &mut rng);
            let y = propose(&x, &spec, 0.5, &mut rng);
            let ratio = acceptance_ratio(&x, &y, &spec) / acceptance_ratio(&y, &x, &spec);
            let dens = (gibbs_log_density(&y, &spec) - gibbs_log_density(&x, &spec)).exp();
            assert!((ratio / dens - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_variances() {
        let mut spec = GibbsSpec::new(2.0, vec![0.0, 0.0]).unwrap();
        spec.chain_len = 60_000;
        spec.burn_in = 2_000;
        spec.thin = 5;
        let run = metropolis_sample(&spec, 5).unwrap();
        assert!(run.warnings.is_empty(), "{:?}", run.warnings);
        let ms = spec.modes.clone();
        for i in [ms.zero_index(), ms.index_of([1, 0]).unwrap(), ms.index_of([1, 1]).unwrap()] {
            let series = run.series(|x| x.coeffs()[i].norm_sqr());
            let (m, se, _) = chain_estimate(&series);
            let exact = 0.5 / ms.intensity(i);
            assert!((m - exact).abs() < 4.0 * se, "mode {i}: {m} ± {se} vs {exact}");
        }
    }

    #[test]
    fn quartic_chains_agree() {
        let mut spec = GibbsSpec::new(2.0, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        spec.chain_len = 40_000;
        spec.burn_in = 2_000;
        spec.chains = 2;
        let run = metropolis_sample(&spec, 9).unwrap();
        let s = run.series(|x| x.mean().powi(2));
        let (m0, s0, _) = chain_estimate(&s[..1]);
        let (m1, s1, _) = chain_estimate(&s[1..]);
        assert!(z_score(m0, s0, m1, s1) < 4.0);
    }
}
