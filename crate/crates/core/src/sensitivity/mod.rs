//! Linearized flow, stopping times, Girsanov weights and the Bismut-Elworthy-Li estimator.

mod tv;

pub use tv::{tv_experiment, tv_trend, TvSpec};

use crate::besov::{smoothstep7, smoothstep7_deriv, DyadicPartition, NormPlan, WeightedNormSpec};
use crate::dynamics::{grid_index, Observable};
use crate::error::{invalid, Error, Result};
use crate::noise::{hermite_all, renorm_constant, step_key, NoiseKey, OuStepper};
use crate::remainder::{evaluate, Background, EtdTables, Frame, SolverConfig};
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{pointwise_map_band, ModeSet, SpectralField};
use crate::stats::{z_score, Welford};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Smooth cutoff `χ`: `1` on `|ζ| ≤ r/2`, `0` on `|ζ| ≥ r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffSpec {
    pub r: f64,
}

impl CutoffSpec {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid("cutoff radius must be positive and finite"));
        }
        Ok(CutoffSpec { r })
    }

    pub fn chi(&self, zeta: f64) -> f64 {
        1.0 - smoothstep7((zeta.abs() - self.r / 2.0) / (self.r / 2.0))
    }

    pub fn chi_deriv(&self, zeta: f64) -> f64 {
        -smoothstep7_deriv((zeta.abs() - self.r / 2.0) / (self.r / 2.0)) * 2.0 / self.r * zeta.signum()
    }
}

/// `(χ(ζ), ∂_ζ χ(ζ))`.
pub fn cutoff_chi(zeta: f64, cutoff: &CutoffSpec) -> (f64, f64) {
    (cutoff.chi(zeta), cutoff.chi_deriv(zeta))
}

/// First grid time at which `max_k t^{(k-1)α′} ‖Z^{(k)}_t‖_{C^{-α}}` exceeds `r`;
/// `f64::INFINITY` if it never does.
pub fn stopping_time(z: &[Trajectory], cutoff: &CutoffSpec, spec: &WeightedNormSpec) -> Result<f64> {
    let first = z.first().ok_or_else(|| invalid("empty diagram list"))?;
    let plans: Vec<NormPlan> = z
        .iter()
        .map(|t| {
            first.check_same_grid(t)?;
            t.fields.first().map(|f| NormPlan::covering(f.mode_set())).ok_or_else(|| invalid("empty trajectory"))
        })
        .collect::<Result<_>>()?;
    for (i, &t) in first.times.iter().enumerate() {
        let m = z
            .iter()
            .zip(&plans)
            .enumerate()
            .map(|(k, (traj, plan))| spec.weight(k + 1, t) * plan.holder_norm(&traj.fields[i], -spec.alpha))
            .fold(0.0, f64::max);
        if m > cutoff.r {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

/// `J_{s,·} h` on the grid of the base trajectory.
#[derive(Clone, Debug)]
pub struct LinearFlow {
    pub s: f64,
    pub h: SpectralField,
    pub j: Trajectory,
}

/// `J_{k+1} = S(dt) J_k - φ₁(dt) Π[F̃′(v_k, Z_k) J_k]` from grid index `start`, with `J = h` there.
pub fn solve_linearization(
    a: &[f64],
    bg: &Background,
    base: &Trajectory,
    start: usize,
    h: &SpectralField,
) -> Result<LinearFlow> {
    if start >= base.len() {
        return Err(invalid("linearization start beyond the base trajectory"));
    }
    let modes = base.fields[0].mode_set().clone();
    let h = h.project_onto(&modes);
    let mut j = Trajectory::new();
    j.push(base.times[start], h.clone());
    let mut cur = h.clone();
    for i in start..base.len() - 1 {
        let dt = base.times[i + 1] - base.times[i];
        let tables = EtdTables::new(&modes, dt);
        let ev = evaluate(a, &bg.frame(i), &base.fields[i], &[&cur]);
        if !ev.f.is_finite() {
            return Err(Error::Explosion { time: base.times[i], reason: "base trajectory not finite".into() });
        }
        cur = tables.apply(&cur, &ev.directional[0]);
        j.push(base.times[i + 1], cur.clone());
    }
    Ok(LinearFlow { s: base.times[start], h, j })
}

/// Running discrete stochastic integral `Σ Re(conj(a)η)/σ²` and quadratic term `Σ |a|²/σ²`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GirsanovWeight {
    pub stochastic: f64,
    pub quadratic: f64,
}

impl GirsanovWeight {
    pub fn push(&mut self, shift: &SpectralField, eta: &SpectralField, var: &[f64]) {
        for ((a, e), &s) in shift.coeffs().iter().zip(eta.coeffs()).zip(var) {
            self.stochastic += (a.conj() * e).re / s;
            self.quadratic += a.norm_sqr() / s;
        }
    }

    /// `exp(-δ Σ Re(conj(a)η)/σ² - δ²/2 Σ |a|²/σ²)`.
    pub fn weight(&self, delta: f64) -> f64 {
        (-delta * self.stochastic - 0.5 * delta * delta * self.quadratic).exp()
    }
}

/// Parameters of the Bismut-Elworthy-Li experiment.
#[derive(Clone, Debug)]
pub struct BelConfig {
    /// Solver settings; `horizon` is the evaluation time `t`. Substeps are never used.
    pub solver: SolverConfig,
    pub x: SpectralField,
    pub h: SpectralField,
    pub observable: Observable,
    pub replicas: usize,
    pub seed: u64,
    /// Cutoff radii evaluated on the same samples; the first is the reported one.
    pub radii: Vec<f64>,
    pub norm: WeightedNormSpec,
    /// One-sided difference step for `∂₊χ`.
    pub fd_step: f64,
    pub novikov_budget: f64,
    pub girsanov_deltas: Vec<f64>,
}

impl BelConfig {
    pub fn new(solver: SolverConfig, observable: Observable, replicas: usize, seed: u64) -> Result<Self> {
        solver.validate()?;
        if replicas < 2 {
            return Err(invalid("need at least two replicas"));
        }
        let modes = solver.modes()?;
        let norm = WeightedNormSpec::new(solver.reg.alpha, solver.reg.alpha_prime, solver.horizon.max(1e-12))?;
        let h = SpectralField::constant(&modes, 1.0);
        let budget = novikov_bound(&h, &solver)?;
        Ok(BelConfig {
            x: SpectralField::zeros(&modes),
            h,
            observable,
            replicas,
            seed,
            radii: vec![1.0, 0.3, 0.5, 0.9],
            norm,
            fd_step: 1e-6,
            novikov_budget: budget,
            girsanov_deltas: vec![0.1, 0.5],
            solver,
        })
    }
}

/// `100 · ∫₀ᵗ (2‖h‖_{C^{-α₀}} s^{-γ})² ds`: the deterministic bound on the tangent
/// before the stopping time, with a safety factor for the unquantified constants.
pub fn novikov_bound(h: &SpectralField, cfg: &SolverConfig) -> Result<f64> {
    let g = cfg.reg.gamma;
    let hn = NormPlan::covering(h.mode_set()).holder_norm(h, -cfg.reg.alpha0);
    Ok(100.0 * 4.0 * hn * hn * cfg.horizon.powf(1.0 - 2.0 * g) / (1.0 - 2.0 * g))
}

/// Replica-aggregated estimates for one cutoff radius.
#[derive(Clone, Debug, Default)]
pub struct BelEstimate {
    pub r: f64,
    pub lhs: Welford,
    pub rhs: Welford,
    /// Paired `lhs - rhs`.
    pub diff: Welford,
    pub tau_exceeded: Welford,
}

impl BelEstimate {
    /// `sqrt(se_lhs² + se_rhs²)`.
    pub fn combined_se(&self) -> f64 {
        self.lhs.stderr().hypot(self.rhs.stderr())
    }

    pub fn gap(&self) -> f64 {
        (self.lhs.mean() - self.rhs.mean()).abs()
    }

    /// `gap / combined_se`, zero when both sides vanish identically.
    pub fn z(&self) -> f64 {
        z_score(self.lhs.mean(), self.lhs.stderr(), self.rhs.mean(), self.rhs.stderr())
    }
}

#[derive(Clone, Debug)]
pub struct BelResult {
    pub estimates: Vec<BelEstimate>,
    /// `(δ, mean and stderr of the Girsanov weight)` for the first radius.
    pub girsanov: Vec<(f64, Welford)>,
}

struct BelSample {
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    exceeded: Vec<bool>,
    weights: Vec<f64>,
}

/// Per-radius tangent state of one replica.
struct Shifted {
    dx: SpectralField,
    q: SpectralField,
    q_hist: Vec<SpectralField>,
    gw: GirsanovWeight,
}

struct BelEngine<'a> {
    cfg: &'a BelConfig,
    modes: Arc<ModeSet>,
    stepper: OuStepper,
    tables: EtdTables,
    renorm: f64,
    plans: Vec<NormPlan>,
    sets: Vec<Arc<ModeSet>>,
    steps: usize,
    zero: SpectralField,
}

impl<'a> BelEngine<'a> {
    fn new(cfg: &'a BelConfig) -> Result<Self> {
        let s = &cfg.solver;
        let modes = s.modes()?;
        let n = s.n();
        let sets: Vec<_> = (1..=n).map(|k| modes.power_set(k)).collect();
        let part = DyadicPartition::covering(&sets[n - 1]);
        let plans = sets.iter().map(|m| NormPlan::new(m, &part)).collect::<Result<_>>()?;
        Ok(BelEngine {
            stepper: OuStepper::new(&modes, s.dt)?,
            tables: EtdTables::new(&modes, s.dt),
            renorm: renorm_constant(&modes),
            plans,
            sets,
            steps: grid_index(s.horizon, s.dt)?,
            zero: SpectralField::zeros(&modes),
            modes,
            cfg,
        })
    }

    /// `⟨k⟩ = ℋ_k(w, ℜ)` plus `Y_k = k ℋ_{k-1}(w, ℜ) q` for each `q`, on the product sets.
    fn diagrams(&self, w: &SpectralField, qs: &[&SpectralField]) -> (Vec<SpectralField>, Vec<Vec<SpectralField>>) {
        let n = self.sets.len();
        let mut inputs = vec![w];
        inputs.extend_from_slice(qs);
        let mut targets = self.sets.clone();
        for _ in qs {
            targets.extend(self.sets.iter().cloned());
        }
        let mut h = vec![0.0; n + 1];
        let band = n as i32 * self.modes.bandwidth();
        let mut out = pointwise_map_band(&inputs, band, &targets, |x, o| {
            hermite_all(n, x[0].re, self.renorm, &mut h);
            for k in 1..=n {
                o[k - 1] = Complex64::new(h[k], 0.0);
            }
            for (qi, q) in x[1..].iter().enumerate() {
                for k in 1..=n {
                    o[n * (qi + 1) + k - 1] = Complex64::new(k as f64 * h[k - 1] * q.re, 0.0);
                }
            }
        });
        let ys = out.split_off(n).chunks(n).map(|c| c.to_vec()).collect();
        (out, ys)
    }

    fn weighted(&self, diagrams: &[SpectralField], t: f64) -> Vec<f64> {
        let spec = &self.cfg.norm;
        diagrams
            .iter()
            .zip(&self.plans)
            .enumerate()
            .map(|(k, (d, p))| spec.weight(k + 1, t) * p.holder_norm(d, -spec.alpha))
            .collect()
    }

    fn replica(&self, r: usize) -> Result<BelSample> {
        let cfg = self.cfg;
        let s = &cfg.solver;
        let dt = s.dt;
        let base: NoiseKey = NoiseKey::new(cfg.seed, r as u64);
        let var = self.stepper.variances();
        let phi1 = &self.tables.phi1;
        let mut x = cfg.x.project_onto(&self.modes);
        let mut w = self.zero.clone();
        let mut j = cfg.h.project_onto(&self.modes);
        let mut shifted: Vec<Shifted> = cfg
            .radii
            .iter()
            .map(|_| Shifted { dx: self.zero.clone(), q: self.zero.clone(), q_hist: Vec::new(), gw: GirsanovWeight::default() })
            .collect();
        let mut w_hist = Vec::with_capacity(self.steps + 1);
        let mut g_hist: Vec<Vec<f64>> = Vec::with_capacity(self.steps + 1);
        let mut running: f64 = 0.0;
        for step in 0..=self.steps {
            let t = step as f64 * dt;
            let (d, _) = self.diagrams(&w, &[]);
            let g = self.weighted(&d, t);
            running = g.iter().copied().fold(running, f64::max);
            g_hist.push(g);
            w_hist.push(w.clone());
            for sh in shifted.iter_mut() {
                sh.q_hist.push(sh.q.clone());
            }
            if step == self.steps {
                break;
            }
            let frame = Frame::Hermite { w: &self.zero, renorm: self.renorm };
            let mut dirs: Vec<&SpectralField> = vec![&j];
            dirs.extend(shifted.iter().map(|sh| &sh.dx));
            let ev = evaluate(&s.a, &frame, &x, &dirs);
            if !ev.f.is_finite() {
                return Err(Error::Explosion { time: t, reason: "non-finite nonlinearity".into() });
            }
            let eta = self.stepper.increment(step_key(base, step));
            for (ri, sh) in shifted.iter_mut().enumerate() {
                let mut shift = self.zero.clone();
                if running <= cfg.radii[ri] {
                    for ((c, &jj), &p) in shift.coeffs_mut().iter_mut().zip(j.coeffs()).zip(phi1) {
                        *c = jj * p;
                    }
                }
                sh.gw.push(&shift, &eta, var);
                if sh.gw.quadratic > cfg.novikov_budget {
                    return Err(Error::NovikovBudget { used: sh.gw.quadratic, budget: cfg.novikov_budget });
                }
                let mut dx = self.tables.apply(&sh.dx, &ev.directional[ri + 1]);
                dx.axpy(1.0, &shift)?;
                sh.dx = dx;
                sh.q.apply_table(self.stepper.decay());
                sh.q.axpy(1.0, &shift)?;
            }
            j = self.tables.apply(&j, &ev.directional[0]);
            x = self.tables.apply(&x, &ev.f);
            x.axpy(1.0, &eta)?;
            w.apply_table(self.stepper.decay());
            w.axpy(1.0, &eta)?;
        }

        let obs = &cfg.observable;
        let phi_val = obs.value(&x);
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        let mut exceeded = Vec::new();
        for (ri, sh) in shifted.iter().enumerate() {
            let cut = CutoffSpec::new(cfg.radii[ri])?;
            let chi = cut.chi(running);
            let dchi = if cut.chi_deriv(running) != 0.0 {
                self.one_sided(&cut, running, &g_hist, &w_hist, &sh.q_hist)
            } else {
                0.0
            };
            lhs.push(obs.derivative(&x, &sh.dx) * chi);
            rhs.push(phi_val * chi * sh.gw.stochastic - phi_val * dchi);
            exceeded.push(running > cfg.radii[ri]);
        }
        let weights = cfg.girsanov_deltas.iter().map(|&d| shifted[0].gw.weight(d)).collect();
        Ok(BelSample { lhs, rhs, exceeded, weights })
    }

    /// `(χ(|||Z + εY|||) - χ(|||Z|||)) / ε`, recomputing only entries near the running max.
    fn one_sided(
        &self,
        cut: &CutoffSpec,
        m: f64,
        g_hist: &[Vec<f64>],
        w_hist: &[SpectralField],
        q_hist: &[SpectralField],
    ) -> f64 {
        let eps = self.cfg.fd_step;
        let margin = 1e-3_f64.max(1e3 * eps);
        // entries far below the max cannot reach it at this step size
        let mut m_eps: f64 = 0.0;
        for (step, g) in g_hist.iter().enumerate() {
            if g.iter().all(|&v| v < m - margin) {
                m_eps = g.iter().copied().fold(m_eps, f64::max);
                continue;
            }
            let (d, ys) = self.diagrams(&w_hist[step], &[&q_hist[step]]);
            let pert: Vec<SpectralField> = d
                .iter()
                .zip(&ys[0])
                .map(|(dk, yk)| {
                    let mut p = dk.clone();
                    p.axpy(eps, yk).expect("same set");
                    p
                })
                .collect();
            let gp = self.weighted(&pert, step as f64 * self.cfg.solver.dt);
            m_eps = gp.iter().copied().fold(m_eps, f64::max);
        }
        (cut.chi(m_eps) - cut.chi(m)) / eps
    }
}

/// Monte Carlo estimates of both sides of
/// `E[DΦ(X_t)(𝔻X_t(w)) χ] = E[Φ(X_t) ∫u·dŴ χ] - E[Φ(X_t) ∂₊χ(w)]`
/// in the exact discrete form: noise increments shifted by `φ₁ u_k` with
/// `u_k = J_k h 1{|||Z|||_{t_k} ≤ r}`.
pub fn bel_estimator(cfg: &BelConfig) -> Result<BelResult> {
    if cfg.radii.is_empty() {
        return Err(invalid("need at least one cutoff radius"));
    }
    for &r in &cfg.radii {
        CutoffSpec::new(r)?;
    }
    let engine = BelEngine::new(cfg)?;
    let samples: Vec<BelSample> =
        (0..cfg.replicas).into_par_iter().map(|r| engine.replica(r)).collect::<Result<_>>()?;
    let mut estimates: Vec<BelEstimate> =
        cfg.radii.iter().map(|&r| BelEstimate { r, ..Default::default() }).collect();
    let mut girsanov: Vec<(f64, Welford)> = cfg.girsanov_deltas.iter().map(|&d| (d, Welford::new())).collect();
    for s in &samples {
        for (ri, e) in estimates.iter_mut().enumerate() {
            e.lhs.push(s.lhs[ri]);
            e.rhs.push(s.rhs[ri]);
            e.diff.push(s.lhs[ri] - s.rhs[ri]);
            e.tau_exceeded.push(if s.exceeded[ri] { 1.0 } else { 0.0 });
        }
        for (g, &w) in girsanov.iter_mut().zip(&s.weights) {
            g.1.push(w);
        }
    }
    Ok(BelResult { estimates, girsanov })
}

/// Report for [`bel_estimator`]: the first radius carries the verdict, the others are informational.
pub fn bel_report(cfg: &BelConfig) -> Result<ExperimentReport> {
    let res = bel_estimator(cfg)?;
    let mut report = ExperimentReport::new("bel");
    report.seed = cfg.seed;
    let mut table = Table::new("bel", &["r", "lhs", "rhs", "se_lhs", "se_rhs", "p_tau_exceeded"]);
    for (i, e) in res.estimates.iter().enumerate() {
        table.push([
            format!("{}", e.r),
            format!("{:.10e}", e.lhs.mean()),
            format!("{:.10e}", e.rhs.mean()),
            format!("{:.10e}", e.lhs.stderr()),
            format!("{:.10e}", e.rhs.stderr()),
            format!("{:.6}", e.tau_exceeded.mean()),
        ]);
        let z = e.z();
        let name = format!("bel_gap_over_se_r{}", e.r);
        let m = if i == 0 {
            Metric::check(name, z, "< 4", z < 4.0).with_anchor("Bismut-Elworthy-Li identity")
        } else {
            Metric::info(name, z)
        };
        report.push(m);
        report.push(Metric::info(format!("lhs_r{}", e.r), e.lhs.mean()).with_stderr(e.lhs.stderr()));
        report.push(Metric::info(format!("rhs_r{}", e.r), e.rhs.mean()).with_stderr(e.rhs.stderr()));
        let paired = z_score(e.diff.mean(), e.diff.stderr(), 0.0, 0.0);
        report.push(Metric::info(format!("paired_gap_over_se_r{}", e.r), paired));
    }
    for (d, w) in &res.girsanov {
        let z = (w.mean() - 1.0).abs() / w.stderr();
        report.push(
            Metric::check(format!("girsanov_unit_mean_delta{d}"), w.mean(), "|mean - 1| < 4 se", z < 4.0)
                .with_stderr(w.stderr())
                .with_anchor("Girsanov weight is a unit-mean martingale"),
        );
    }
    report.note(format!(
        "cutoff {}, t = {}, dt = {}, {} replicas, ∂₊χ by one-sided difference with step {:e}",
        cfg.solver.cutoff, cfg.solver.horizon, cfg.solver.dt, cfg.replicas, cfg.fd_step
    ));
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Profile, TestFunction};
    use crate::noise::ou_path;
    use crate::remainder::solve_remainder;
    use crate::spectral::make_mode_set;

    #[test]
    fn chi_examples() {
        let c = CutoffSpec::new(0.8).unwrap();
        assert_eq!(c.chi(0.0), 1.0);
        assert_eq!(c.chi(0.8), 0.0);
        assert_eq!(c.chi(0.4), 1.0);
        for z in [0.45, 0.55, 0.6, 0.7, 0.79] {
            let fd = (c.chi(z + 1e-6) - c.chi(z - 1e-6)) / 2e-6;
            assert!((fd - c.chi_deriv(z)).abs() < 1e-6, "{z}");
            assert!((0.0..=1.0).contains(&c.chi(z)));
        }
    }

    #[test]
    fn stopping_examples() {
        let ms = make_mode_set(2.0).unwrap();
        let spec = WeightedNormSpec::new(0.1, 0.05, 1.0).unwrap();
        let mut zero = Trajectory::new();
        let mut ramp = Trajectory::new();
        let unit = NormPlan::covering(&ms).holder_norm(&SpectralField::constant(&ms, 1.0), -0.1);
        for i in 0..=10 {
            let t = i as f64 * 0.1;
            zero.push(t, SpectralField::zeros(&ms));
            ramp.push(t, SpectralField::constant(&ms, t / unit));
        }
        let c = CutoffSpec::new(0.35).unwrap();
        assert_eq!(stopping_time(&[zero], &c, &spec).unwrap(), f64::INFINITY);
        assert!((stopping_time(&[ramp.clone()], &c, &spec).unwrap() - 0.4).abs() < 1e-12);
        let a = stopping_time(&[ramp.clone()], &CutoffSpec::new(0.25).unwrap(), &spec).unwrap();
        let b = stopping_time(&[ramp], &CutoffSpec::new(0.75).unwrap(), &spec).unwrap();
        assert!(a <= b);
    }

    fn base_run(cutoff: f64) -> (SolverConfig, Trajectory, Trajectory) {
        let cfg = SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], cutoff, 1e-2, 0.3).unwrap().without_substeps();
        let ms = cfg.modes().unwrap();
        let ou = ou_path(&SpectralField::zeros(&ms), 0.0, cfg.dt, cfg.steps(), NoiseKey::new(2, 0), 0).unwrap();
        let x = SpectralField::cosine(&ms, [1, 0]).unwrap();
        let bg = Background::Hermite { ou: &ou, renorm: renorm_constant(&ms) };
        let v = solve_remainder(&x, &bg, &cfg).unwrap().v;
        (cfg, ou, v)
    }

    #[test]
    fn linearization_is_derivative_and_linear() {
        let (cfg, ou, v) = base_run(3.0);
        let ms = cfg.modes().unwrap();
        let bg = Background::Hermite { ou: &ou, renorm: renorm_constant(&ms) };
        let h1 = SpectralField::cosine(&ms, [0, 1]).unwrap();
        let h2 = SpectralField::constant(&ms, 0.5);
        let j1 = solve_linearization(&cfg.a, &bg, &v, 0, &h1).unwrap();
        let j2 = solve_linearization(&cfg.a, &bg, &v, 0, &h2).unwrap();
        let mut h12 = h1.scaled(2.0);
        h12.axpy(-3.0, &h2).unwrap();
        let j12 = solve_linearization(&cfg.a, &bg, &v, 0, &h12).unwrap();
        let mut comb = j1.j.last().unwrap().scaled(2.0);
        comb.axpy(-3.0, j2.j.last().unwrap()).unwrap();
        assert!(comb.max_abs_diff(j12.j.last().unwrap()) < 1e-10);
        assert_eq!(j1.j.fields[0].coeffs(), h1.coeffs());

        let x = SpectralField::cosine(&ms, [1, 0]).unwrap();
        let errs: Vec<f64> = [1e-3, 1e-4]
            .iter()
            .map(|&d| {
                let mut xp = x.clone();
                xp.axpy(d, &h1).unwrap();
                let vp = solve_remainder(&xp, &bg, &cfg).unwrap().v;
                let fd = vp.fields.last().unwrap().sub(v.fields.last().unwrap()).unwrap().scaled(1.0 / d);
                fd.max_abs_diff(j1.j.last().unwrap()) / j1.j.last().unwrap().max_abs()
            })
            .collect();
        let order = (errs[0] / errs[1]).log10();
        assert!(order > 0.9, "{errs:?}");
    }

    #[test]
    fn free_flow_linearization() {
        let cfg = SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], 3.0, 1e-2, 0.1).unwrap();
        let ms = cfg.modes().unwrap();
        // zero diagrams and v = 0 give F̃′ = 0
        let v = {
            let mut t = Trajectory::new();
            for i in 0..=10 {
                t.push(i as f64 * 1e-2, SpectralField::zeros(&ms));
            }
            t
        };
        let mut z = crate::noise::DiagramSet::zeros(3, &ms, &v.times);
        z.renorm = 0.0;
        let zv = crate::noise::assemble_z(&z, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let h = SpectralField::cosine(&ms, [1, 1]).unwrap();
        let flow = solve_linearization(&cfg.a, &Background::Explicit(&zv), &v, 0, &h).unwrap();
        let exact = h.heat(0.1).unwrap();
        assert!(flow.j.last().unwrap().max_abs_diff(&exact) < 1e-14);
    }

    #[test]
    fn girsanov_weight_identity() {
        let ms = make_mode_set(2.0).unwrap();
        let mut g = GirsanovWeight::default();
        assert_eq!(g.weight(0.3), 1.0);
        let a = SpectralField::constant(&ms, 0.2);
        let e = SpectralField::constant(&ms, 0.5);
        let var = vec![0.1; ms.len()];
        g.push(&a, &e, &var);
        assert!((g.stochastic - 1.0).abs() < 1e-12 && (g.quadratic - 0.4).abs() < 1e-12);
        assert!((g.weight(0.5) - (-0.5f64 - 0.05).exp()).abs() < 1e-12);
    }

    fn bel_cfg(a: Vec<f64>, profile: Profile, replicas: usize) -> BelConfig {
        let solver = SolverConfig::new(a, 2.0, 1e-2, 0.3).unwrap();
        let ms = solver.modes().unwrap();
        let obs = Observable::new("phi", profile, TestFunction::Mean.field(&ms).unwrap());
        BelConfig::new(solver, obs, replicas, 17).unwrap()
    }

    #[test]
    fn bel_identity_cubic() {
        let mut cfg = bel_cfg(vec![0.0, 0.0, 0.0, 1.0], Profile::Sin, 4000);
        cfg.radii = vec![1.0, 2.0, 0.5];
        let res = bel_estimator(&cfg).unwrap();
        for e in &res.estimates {
            assert!(e.z() < 4.0, "r={} {} vs {}", e.r, e.lhs.mean(), e.rhs.mean());
        }
        assert!(res.estimates[0].tau_exceeded.mean() > 0.05 && res.estimates[0].lhs.mean() != 0.0);
        for (_, w) in &res.girsanov {
            assert!((w.mean() - 1.0).abs() < 4.0 * w.stderr());
        }
    }

    #[test]
    fn bel_linear_and_constant() {
        let mut cfg = bel_cfg(vec![0.0, 1.0], Profile::Sin, 4000);
        cfg.radii = vec![1e6];
        let e = &bel_estimator(&cfg).unwrap().estimates[0];
        assert!(e.z() < 4.0);
        assert_eq!(e.tau_exceeded.mean(), 0.0);

        // Φ ≡ cos(0) when φ = 0: LHS vanishes and the martingale term is centred
        let ms = cfg.solver.modes().unwrap();
        cfg.observable = Observable::new("const", Profile::Cos, SpectralField::zeros(&ms));
        let e = &bel_estimator(&cfg).unwrap().estimates[0];
        assert_eq!(e.lhs.mean(), 0.0);
        assert!(e.rhs.mean().abs() < 4.0 * e.rhs.stderr());
    }

    #[test]
    fn novikov_budget_aborts() {
        let mut cfg = bel_cfg(vec![0.0, 0.0, 0.0, 1.0], Profile::Sin, 2);
        cfg.radii = vec![1e6];
        cfg.novikov_budget = 1e-6;
        assert!(matches!(bel_estimator(&cfg), Err(Error::NovikovBudget { .. })));
    }
}
