//! The full process `X = ⟨1⟩ + v`, restarts, and moment surveys.

mod observable;

pub use observable::{dictionary, half_dictionary, Observable, Profile, TestFunction};

use crate::besov::NormPlan;
use crate::error::{invalid, Error, Result};
use crate::noise::{
    assemble_z, renorm_constant, restart_compose, step_key, wick_trajectory, DiagramOrigin, DiagramSet, NoiseKey,
    OUState, OuStepper, StartMode,
};
use crate::remainder::{
    etd_step, solve_remainder_with, Background, BlowupMonitor, EtdTables, ExplosionRecord, Frame, SolverConfig,
};
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{ModeSet, SpectralField};
use crate::stats::{z_score, Welford};
use crate::trajectory::Trajectory;
use rayon::prelude::*;
use std::sync::Arc;

/// Grid index of `t` for step `dt`, rejecting off-grid times.
pub fn grid_index(t: f64, dt: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::OffGrid(t));
    }
    Ok(k as usize)
}

/// `X = ⟨1⟩ + v` at one grid time.
#[derive(Clone, Debug)]
pub struct ProcessState {
    pub time: f64,
    /// Global grid index of `time`; the next step consumes `step_key(base, step)`.
    pub step: usize,
    pub ou: OUState,
    pub v: SpectralField,
    pub x: SpectralField,
    pub origin: DiagramOrigin,
}

impl ProcessState {
    /// Start at time 0 with zero OU and `v = x`.
    pub fn initial(x: &SpectralField) -> Self {
        Self::restarted(x, 0.0, 0)
    }

    /// Fresh splitting at grid index `step`: `⟨1⟩_{t,t} = 0`, `v = X(t)`.
    pub fn restarted(x: &SpectralField, time: f64, step: usize) -> Self {
        ProcessState {
            time,
            step,
            ou: OUState { field: SpectralField::zeros(x.mode_set()), start: StartMode::ZeroAt(time), time },
            v: x.clone(),
            x: x.clone(),
            origin: DiagramOrigin::ZeroStart(time),
        }
    }

    /// Restart the splitting at the current time.
    pub fn restart(&self) -> Self {
        Self::restarted(&self.x, self.time, self.step)
    }

    /// `max |X - (⟨1⟩ + v)|`.
    pub fn consistency_error(&self) -> f64 {
        self.ou.field.add(&self.v).map(|s| s.max_abs_diff(&self.x)).unwrap_or(f64::INFINITY)
    }
}

/// Everything a Monte Carlo run needs.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub cfg: SolverConfig,
    pub x: SpectralField,
    pub replicas: usize,
    pub seed: u64,
    pub observables: Vec<Observable>,
    /// Test hook: every Gaussian draw is replaced by zero.
    pub noise_off: bool,
}

impl RunSpec {
    pub fn new(cfg: SolverConfig, x: SpectralField, replicas: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if replicas == 0 {
            return Err(invalid("replicas must be positive"));
        }
        let modes = cfg.modes()?;
        let x = x.project_onto(&modes);
        let observables = dictionary(&modes).unwrap_or_default();
        Ok(RunSpec { cfg, x, replicas, seed, observables, noise_off: false })
    }

    pub fn key(&self, replica: usize) -> NoiseKey {
        NoiseKey::new(self.seed, replica as u64)
    }
}

/// Streaming stepper for `X = ⟨1⟩ + v` with the Hermite driver.
pub struct Engine {
    pub cfg: SolverConfig,
    modes: Arc<ModeSet>,
    stepper: OuStepper,
    tables: EtdTables,
    monitor: BlowupMonitor,
    renorm: f64,
    noise_off: bool,
}

impl Engine {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let modes = cfg.modes()?;
        Ok(Engine {
            stepper: OuStepper::new(&modes, cfg.dt)?,
            tables: EtdTables::new(&modes, cfg.dt),
            monitor: BlowupMonitor::new(&modes, cfg.reg.beta, cfg.blowup_threshold),
            renorm: renorm_constant(&modes),
            modes,
            cfg: cfg.clone(),
            noise_off: false,
        })
    }

    pub fn with_noise_off(mut self, off: bool) -> Self {
        self.noise_off = off;
        self
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn renorm(&self) -> f64 {
        self.renorm
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// One grid step; returns the noise increment used.
    pub fn step(&self, state: &mut ProcessState, base: NoiseKey) -> std::result::Result<SpectralField, ExplosionRecord> {
        let key = step_key(base, state.step);
        let mut w = state.ou.field.clone();
        let eta = if self.noise_off {
            w.apply_table(self.stepper.decay());
            SpectralField::zeros(&self.modes)
        } else {
            self.stepper.step(&mut w, key)
        };
        let t_next = (state.step + 1) as f64 * self.cfg.dt;
        let now = Frame::Hermite { w: &state.ou.field, renorm: self.renorm };
        let next = Frame::Hermite { w: &w, renorm: self.renorm };
        let v = match etd_step(&self.cfg.a, &now, &next, &state.v, &self.tables, self.cfg.substep_theta, self.cfg.scheme)
        {
            Ok((v, _)) => v,
            Err(e) => return Err(ExplosionRecord { time: t_next, reason: e.to_string() }),
        };
        if let Some(reason) = self.monitor.check(&v) {
            return Err(ExplosionRecord { time: t_next, reason });
        }
        state.x = v.add(&w).expect("same modes");
        state.v = v;
        state.ou.field = w;
        state.ou.time = t_next;
        state.time = t_next;
        state.step += 1;
        Ok(eta)
    }

    /// Advance `steps` grid steps, calling `observe` after each.
    pub fn advance(
        &self,
        state: &mut ProcessState,
        steps: usize,
        base: NoiseKey,
        mut observe: impl FnMut(&ProcessState),
    ) -> Option<ExplosionRecord> {
        for _ in 0..steps {
            if let Err(e) = self.step(state, base) {
                return Some(e);
            }
            observe(state);
        }
        None
    }
}

/// One replica's trajectory of `X`.
#[derive(Clone, Debug)]
pub struct ReplicaRun {
    pub replica: usize,
    pub x: Trajectory,
    pub explosion: Option<ExplosionRecord>,
}

/// Trajectories of `X` on the full grid of `spec.cfg`, one per replica, in replica order.
pub fn simulate(spec: &RunSpec) -> Result<Vec<ReplicaRun>> {
    let engine = Engine::new(&spec.cfg)?.with_noise_off(spec.noise_off);
    let steps = spec.cfg.steps();
    Ok((0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let mut state = ProcessState::initial(&spec.x);
            let mut x = Trajectory::new();
            x.push(0.0, state.x.clone());
            let explosion = engine.advance(&mut state, steps, spec.key(r), |s| x.push(s.time, s.x.clone()));
            ReplicaRun { replica: r, x, explosion }
        })
        .collect())
}

/// Zero-start OU path and diagrams `⟨k⟩_{t,·}` on `steps` grid steps from grid index `start`.
fn zero_start_diagrams(modes: &Arc<ModeSet>, cfg: &SolverConfig, start: usize, steps: usize, base: NoiseKey, noise_off: bool) -> Result<DiagramSet> {
    let stepper = OuStepper::new(modes, cfg.dt)?;
    let t0 = start as f64 * cfg.dt;
    let mut path = Trajectory::new();
    let mut w = SpectralField::zeros(modes);
    path.push(t0, w.clone());
    for j in 0..steps {
        if noise_off {
            w.apply_table(stepper.decay());
        } else {
            stepper.step(&mut w, step_key(base, start + j));
        }
        path.push((start + j + 1) as f64 * cfg.dt, w.clone());
    }
    wick_trajectory(&path, cfg.n(), DiagramOrigin::ZeroStart(t0))
}

/// Diagrams `⟨k⟩_{t,t+·}` on `[t, t+h]` rebuilt from the same keyed noise as the run.
pub fn restart_diagrams(state: &ProcessState, h: f64, cfg: &SolverConfig, base: NoiseKey) -> Result<DiagramSet> {
    let steps = grid_index(h, cfg.dt)?;
    zero_start_diagrams(state.x.mode_set(), cfg, state.step, steps, base, false)
}

/// Diagrams `⟨k⟩_{0,·}` on `[0, T]`.
pub fn direct_diagrams(modes: &Arc<ModeSet>, cfg: &SolverConfig, horizon: f64, base: NoiseKey) -> Result<DiagramSet> {
    zero_start_diagrams(modes, cfg, 0, grid_index(horizon, cfg.dt)?, base, false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkovCheck {
    /// `sup_{s ∈ [t, t+h]} max |X_direct(s) - X_restarted(s)|`.
    pub sup_error: f64,
    /// `max |⟨k⟩_{0,s} - Σ_j binom(k,j) (S(s-t)⟨1⟩_{0,t})^j ⟨k-j⟩_{t,s}|`.
    pub binomial_error: f64,
    pub steps: usize,
}

/// Pathwise comparison of the direct solve on `[0, t+h]` with the solve restarted at `t`,
/// both using the explicit driver with their own diagrams and shared noise keys.
/// Substeps are disabled so both runs use identical step sequences.
pub fn markov_consistency(x: &SpectralField, t: f64, h: f64, spec: &RunSpec, replica: usize) -> Result<MarkovCheck> {
    let cfg = spec.cfg.without_substeps();
    let modes = cfg.modes()?;
    let x = x.project_onto(&modes);
    let base = spec.key(replica);
    let kt = grid_index(t, cfg.dt)?;
    let kh = grid_index(h, cfg.dt)?;
    if kh == 0 {
        return Ok(MarkovCheck { sup_error: 0.0, binomial_error: 0.0, steps: 0 });
    }
    let direct = zero_start_diagrams(&modes, &cfg, 0, kt + kh, base, spec.noise_off)?;
    let zd = assemble_z(&direct, &cfg.a)?;
    let mut xd = Vec::with_capacity(kh + 1);
    let full = solve_remainder_with(&x, &Background::Explicit(&zd), &cfg.with_horizon((kt + kh) as f64 * cfg.dt), 0, |i, _, v| {
        if i >= kt {
            xd.push(v.add(direct.diagram(1, i)).expect("same modes"));
        }
    })?;
    explosion_error(full.explosion)?;

    let mut xt = None;
    let first = solve_remainder_with(&x, &Background::Explicit(&zd), &cfg.with_horizon(kt as f64 * cfg.dt), 0, |i, _, v| {
        if i == kt {
            xt = Some(v.add(direct.diagram(1, i)).expect("same modes"));
        }
    })?;
    explosion_error(first.explosion)?;
    let state = ProcessState::restarted(&xt.expect("endpoint recorded"), kt as f64 * cfg.dt, kt);
    let restarted = zero_start_diagrams(&modes, &cfg, kt, kh, base, spec.noise_off)?;
    let zr = assemble_z(&restarted, &cfg.a)?;
    let mut sup: f64 = 0.0;
    let second = solve_remainder_with(&state.v, &Background::Explicit(&zr), &cfg.with_horizon(kh as f64 * cfg.dt), 0, |j, _, v| {
        let xr = v.add(restarted.diagram(1, j)).expect("same modes");
        sup = sup.max(xr.max_abs_diff(&xd[j]));
    })?;
    explosion_error(second.explosion)?;

    let y = direct.diagram(1, kt);
    let mut binomial: f64 = 0.0;
    for j in 0..=kh {
        let composed = restart_compose(&y.heat(j as f64 * cfg.dt)?, &restarted.frame(j));
        for (k, c) in composed.iter().enumerate() {
            binomial = binomial.max(c.max_abs_diff(direct.diagram(k + 1, kt + j)));
        }
    }
    Ok(MarkovCheck { sup_error: sup, binomial_error: binomial, steps: kt + kh })
}

fn explosion_error(e: Option<ExplosionRecord>) -> Result<()> {
    match e {
        Some(r) => Err(Error::Explosion { time: r.time, reason: r.reason }),
        None => Ok(()),
    }
}

/// `t^{p/(n-1)} ∧ 1`, or 1 when `n = 1`.
pub fn moment_weight(t: f64, p: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        t.powf(p as f64 / (n - 1) as f64).min(1.0)
    }
}

/// Estimates of `(t^{p/(n-1)} ∧ 1) E‖X(t;x)‖^p_{C^{-α}}` for each initial condition.
/// Each initial condition uses its own noise stream. The verdict requires pairwise
/// z-scores below 4 at every time `t ≥ 1`.
pub fn moment_survey(
    x_family: &[(String, SpectralField)],
    times: &[f64],
    p: usize,
    alpha: f64,
    spec: &RunSpec,
) -> Result<ExperimentReport> {
    if p == 0 || p % 2 != 0 {
        return Err(invalid("p must be a positive even integer"));
    }
    if times.iter().any(|&t| !(t > 0.0)) || times.is_empty() {
        return Err(invalid("survey times must be positive"));
    }
    let cfg = &spec.cfg;
    let engine = Engine::new(cfg)?.with_noise_off(spec.noise_off);
    let plan = NormPlan::covering(engine.modes());
    let idx: Vec<usize> = times.iter().map(|&t| grid_index(t, cfg.dt)).collect::<Result<_>>()?;
    let last = *idx.iter().max().expect("nonempty");
    let n = cfg.n();

    let mut report = ExperimentReport::new("moments");
    report.seed = spec.seed;
    let mut table = Table::new("moments", &["time", "x_id", "p", "weighted_moment", "stderr", "replicas"]);
    let mut estimates = vec![Vec::new(); times.len()];
    let mut explosions = 0usize;
    for (xi, (label, x0)) in x_family.iter().enumerate() {
        let x0 = x0.project_onto(engine.modes());
        let per: Vec<(Vec<f64>, bool)> = (0..spec.replicas)
            .into_par_iter()
            .map(|r| {
                let key = spec.key(r).in_stream(xi as u64 + 1);
                let mut state = ProcessState::initial(&x0);
                let mut vals = vec![f64::NAN; times.len()];
                let exploded = engine
                    .advance(&mut state, last, key, |s| {
                        for (slot, &k) in idx.iter().enumerate() {
                            if k == s.step {
                                vals[slot] = plan.holder_norm(&s.x, -alpha).powi(p as i32);
                            }
                        }
                    })
                    .is_some();
                (vals, exploded)
            })
            .collect();
        explosions += per.iter().filter(|(_, e)| *e).count();
        for (slot, &t) in times.iter().enumerate() {
            let w: Welford = per.iter().filter(|(_, e)| !e).map(|(v, _)| v[slot]).collect();
            let wt = moment_weight(t, p, n);
            let (m, se) = (wt * w.mean(), wt * w.stderr());
            table.push([format!("{t}"), label.clone(), p.to_string(), format!("{m:.10e}"), format!("{se:.10e}"), w.n.to_string()]);
            report.push(Metric::info(format!("weighted_moment_{label}_t{t}"), m).with_stderr(se));
            estimates[slot].push((m, se));
        }
    }
    for (slot, &t) in times.iter().enumerate() {
        if t < 1.0 {
            continue;
        }
        let mut zmax: f64 = 0.0;
        for i in 0..estimates[slot].len() {
            for j in i + 1..estimates[slot].len() {
                let (a, b) = (estimates[slot][i], estimates[slot][j]);
                zmax = zmax.max(z_score(a.0, a.1, b.0, b.1));
            }
        }
        report.push(
            Metric::check(format!("max_pairwise_z_t{t}"), zmax, "< 4", zmax < 4.0)
                .with_anchor("moments uniform in the initial condition"),
        );
    }
    if explosions > 0 {
        report.explosion = Some(format!("{explosions} replica(s) exploded"));
        report.push(Metric::check("explosions", explosions as f64, "= 0", false));
    }
    report.note(format!("norm C^-{alpha}, p = {p}, weight t^(p/(n-1)) ∧ 1, {} replicas per x", spec.replicas));
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_mode_set;

    fn cubic(cutoff: f64, dt: f64, horizon: f64) -> SolverConfig {
        SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], cutoff, dt, horizon).unwrap()
    }

    #[test]
    fn zero_noise_fixed_point() {
        let cfg = cubic(4.0, 1e-2, 0.2);
        let ms = cfg.modes().unwrap();
        let mut spec = RunSpec::new(cfg, SpectralField::zeros(&ms), 1, 3).unwrap();
        spec.noise_off = true;
        let run = simulate(&spec).unwrap();
        assert!(run[0].x.fields.iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn replicas_are_deterministic() {
        let cfg = cubic(3.0, 1e-2, 0.1);
        let ms = cfg.modes().unwrap();
        let spec = RunSpec::new(cfg, SpectralField::constant(&ms, 1.0), 2, 11).unwrap();
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a[1].x.fields.last().unwrap().coeffs(), b[1].x.fields.last().unwrap().coeffs());
        assert_ne!(a[0].x.fields.last().unwrap().coeffs(), a[1].x.fields.last().unwrap().coeffs());
    }

    #[test]
    fn state_sum_invariant() {
        let cfg = cubic(3.0, 1e-2, 0.1);
        let ms = cfg.modes().unwrap();
        let engine = Engine::new(&cfg).unwrap();
        let mut s = ProcessState::initial(&SpectralField::constant(&ms, 2.0));
        engine.advance(&mut s, 10, NoiseKey::new(1, 0), |s| assert!(s.consistency_error() < 1e-14));
        assert_eq!(s.step, 10);
        let r = s.restart();
        assert_eq!(r.ou.field.max_abs(), 0.0);
        assert_eq!(r.v.coeffs(), s.x.coeffs());
    }

    #[test]
    fn markov_identity_small() {
        let cfg = cubic(4.0, 1e-2, 1.0);
        let ms = make_mode_set(4.0).unwrap();
        let spec = RunSpec::new(cfg, SpectralField::zeros(&ms), 1, 5).unwrap();
        let x = SpectralField::cosine(&ms, [1, 1]).unwrap();
        let c = markov_consistency(&x, 0.2, 0.2, &spec, 0).unwrap();
        assert!(c.sup_error < 1e-10, "{c:?}");
        assert!(c.binomial_error < 1e-9, "{c:?}");
        assert_eq!(markov_consistency(&x, 0.2, 0.0, &spec, 0).unwrap().sup_error, 0.0);
    }

    #[test]
    fn ou_decomposition() {
        let cfg = cubic(3.0, 1e-2, 0.3);
        let ms = cfg.modes().unwrap();
        let base = NoiseKey::new(8, 0);
        let direct = direct_diagrams(&ms, &cfg, 0.3, base).unwrap();
        let state = ProcessState::restarted(&SpectralField::zeros(&ms), 0.1, 10);
        let rest = restart_diagrams(&state, 0.2, &cfg, base).unwrap();
        for j in 0..=20 {
            let s = direct.diagram(1, 10).heat(j as f64 * 1e-2).unwrap().add(rest.diagram(1, j)).unwrap();
            assert!(s.max_abs_diff(direct.diagram(1, 10 + j)) < 1e-13);
        }
        assert!(matches!(restart_diagrams(&state, 0.015, &cfg, base), Err(Error::OffGrid(_))));
    }
}
