use super::{evaluate, Background};
use crate::besov::{NormPlan, WeightedNormSpec};
use crate::error::{invalid, Result};
use crate::noise::ZVector;
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{grid_size, with_grid, SpectralField};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub time: f64,
    /// `‖v‖_{L^p}^p`.
    pub lp: f64,
    /// `K = ∫ v^{p-2} |∇v|²`.
    pub k: f64,
    /// `L = ∫ v^{p+n-1}`.
    pub l: f64,
    /// `⟨ΠF, v^{p-1}⟩`.
    pub forcing: f64,
    /// `(1/p) d/dt ‖v‖_p^p - [-(p-1)K - ‖v‖_p^p - ⟨ΠF, v^{p-1}⟩]`, relative to the right side
    /// (central difference; NaN at the endpoints).
    pub identity_residual: f64,
}

#[derive(Clone, Debug)]
pub struct EnergyLedger {
    pub p: usize,
    pub n: usize,
    pub records: Vec<EnergyRecord>,
}

impl EnergyLedger {
    /// `λ = (p + n - 1) / p`.
    pub fn lambda(&self) -> f64 {
        (self.p + self.n - 1) as f64 / self.p as f64
    }

    pub fn max_residual(&self) -> f64 {
        self.records.iter().map(|r| r.identity_residual).filter(|r| r.is_finite()).fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new("energy_ledger", &["time", "lp_norm_p", "K", "L", "identity_residual"]);
        for r in &self.records {
            t.push([r.time, r.lp, r.k, r.l, r.identity_residual]);
        }
        t
    }
}

/// `(∫ v^p, ∫ v^{p-2}|∇v|², ∫ v^{p+n-1}, ∫ g v^{p-1})` by exact quadrature on a padded grid.
fn integrals(v: &SpectralField, g: &SpectralField, p: usize, n: usize) -> (f64, f64, f64, f64) {
    let b = v.mode_set().bandwidth();
    let deg = (p + n - 1).max(p) as i32;
    let size = grid_size(deg * b + 1);
    let dx = SpectralField::from_fn(v.mode_set(), |m| v.coeff(m) * Complex64::new(0.0, 2.0 * PI * m[0] as f64));
    let dy = SpectralField::from_fn(v.mode_set(), |m| v.coeff(m) * Complex64::new(0.0, 2.0 * PI * m[1] as f64));
    with_grid(size, |grid| {
        let vv = grid.synthesize(v);
        let gx = grid.synthesize(&dx);
        let gy = grid.synthesize(&dy);
        let gg = grid.synthesize(&g.project_onto(v.mode_set()));
        let (mut a, mut k, mut l, mut f) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..vv.len() {
            let x = vv[i].re;
            let xp2 = x.powi(p as i32 - 2);
            a += xp2 * x * x;
            k += xp2 * (gx[i].re * gx[i].re + gy[i].re * gy[i].re);
            l += x.powi((p + n - 1) as i32);
            f += gg[i].re * xp2 * x;
        }
        let w = 1.0 / vv.len() as f64;
        (a * w, k * w, l * w, f * w)
    })
}

/// Energy ledger of a remainder trajectory solved against `bg` (same grid indices).
pub fn energy_diagnostics(v: &Trajectory, bg: &Background, a: &[f64], p: usize) -> Result<EnergyLedger> {
    if p < 2 || p % 2 != 0 {
        return Err(invalid("p must be an even integer ≥ 2"));
    }
    let n = a.len() - 1;
    let mut records: Vec<EnergyRecord> = v
        .times
        .iter()
        .zip(&v.fields)
        .enumerate()
        .map(|(i, (&t, f))| {
            let force = evaluate(a, &bg.frame(i), f, &[]).f;
            let (lp, k, l, forcing) = integrals(f, &force, p, n);
            EnergyRecord { time: t, lp, k, l, forcing, identity_residual: f64::NAN }
        })
        .collect();
    for i in 1..records.len().saturating_sub(1) {
        let dt = records[i + 1].time - records[i - 1].time;
        let lhs = (records[i + 1].lp - records[i - 1].lp) / dt / p as f64;
        let r = &records[i];
        let rhs = -((p - 1) as f64) * r.k - r.lp - r.forcing;
        let scale = rhs.abs().max(r.lp).max(f64::MIN_POSITIVE);
        records[i].identity_residual = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    }
    Ok(EnergyLedger { p, n, records })
}

/// The two comparison bounds for `f′ ≤ -c₁ f^λ + c₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonBound {
    /// Bound using the initial value.
    pub with_initial: f64,
    /// Bound independent of the initial value.
    pub uniform: f64,
}

impl ComparisonBound {
    pub fn min(&self) -> f64 {
        self.with_initial.min(self.uniform)
    }
}

pub fn comparison_bound(f0: f64, lambda: f64, c1: f64, c2: f64, t: f64) -> Result<ComparisonBound> {
    if !(lambda > 1.0) {
        return Err(invalid("λ must exceed 1"));
    }
    if !(f0 >= 0.0) || !(c1 > 0.0) || !(c2 >= 0.0) || !(t > 0.0) {
        return Err(invalid("comparison bound needs f0 ≥ 0, c1 > 0, c2 ≥ 0, t > 0"));
    }
    let e = lambda - 1.0;
    let floor = (2.0 * c2 / c1).powf(1.0 / lambda);
    let with_initial = f0 / (1.0 + t * f0.powf(e) * e * c1 / 2.0).powf(1.0 / e);
    let uniform = t.powf(-1.0 / e) * (e * c1 / 2.0).powf(-1.0 / e);
    Ok(ComparisonBound { with_initial: with_initial.max(floor), uniform: uniform.max(floor) })
}

/// Fitted constants `max_t ‖v_t‖_p^p / B(t)` per initial condition, where
/// `B(t) = t^{-1/(λ-1)} ∨ (Σ_j (sup_s s^{(n-j-1)α′}‖Z^{(n-j)}_s‖_{C^{-α}})^{p_j})^{1/λ}` and
/// `p_j = (p + n - 1)/(n - j)`. The verdict requires the fits to agree within 50%.
pub fn apriori_check(
    runs: &[(String, Trajectory)],
    z: Option<&ZVector>,
    n: usize,
    p: usize,
    spec: &WeightedNormSpec,
) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(invalid("no runs"));
    }
    let lambda = (p + n - 1) as f64 / p as f64;
    let mut zterm = 0.0;
    if let Some(z) = z {
        for order in 1..=n {
            let j = n - order;
            let traj = &z.upper[order - 1];
            let plan = NormPlan::covering(traj.fields[0].mode_set());
            let sup = traj
                .times
                .iter()
                .zip(&traj.fields)
                .map(|(&s, f)| spec.weight(order, s) * plan.holder_norm(f, -spec.alpha))
                .fold(0.0, f64::max);
            zterm += sup.powf((p + n - 1) as f64 / (n - j) as f64);
        }
    }
    let zfloor = zterm.powf(1.0 / lambda);
    let mut report = ExperimentReport::new("apriori-check");
    let mut fits = Vec::new();
    let mut table = Table::new("apriori_fit", &["run", "fitted_constant"]);
    for (label, traj) in runs {
        let mut c: f64 = 0.0;
        for (&t, f) in traj.times.iter().zip(&traj.fields) {
            if t <= 0.0 {
                continue;
            }
            let bound = t.powf(-1.0 / (lambda - 1.0)).max(zfloor);
            c = c.max(crate::besov::lp_norm(f, p as f64).powi(p as i32) / bound);
        }
        table.push([label.clone(), format!("{c:.6e}")]);
        report.push(Metric::info(format!("fitted_constant_{label}"), c));
        fits.push(c);
    }
    let lo = fits.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fits.iter().copied().fold(0.0, f64::max);
    let spread = if hi == 0.0 { 0.0 } else { (hi - lo) / lo.max(f64::MIN_POSITIVE) };
    report.push(
        Metric::check("fit_spread", spread, "< 0.5", spread < 0.5)
            .with_anchor("a priori bound independent of the initial condition"),
    );
    report.note(format!("λ = {lambda}, p_j = (p+n-1)/(n-j), Z term {zterm:.4e}"));
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remainder::{solve_remainder, SolverConfig};
    use crate::spectral::make_mode_set;

    #[test]
    fn comparison_examples() {
        let b = comparison_bound(1.0, 2.0, 2.0, 0.0, 1.0).unwrap();
        assert!((b.min() - 0.5).abs() < 1e-15);
        assert!(comparison_bound(1.0, 1.0, 2.0, 0.0, 1.0).is_err());
        assert!(comparison_bound(1.0, 2.0, 2.0, 0.0, 1e6).unwrap().min() < 1e-5);
    }

    #[test]
    fn comparison_dominates_ode() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let f0 = 10f64.powf(rng.random_range(-1.0..3.0));
            let lambda = rng.random_range(1.2..3.0);
            let c1 = rng.random_range(0.5..3.0);
            let c2 = rng.random_range(0.0..2.0);
            let t = rng.random_range(0.01..2.0);
            // RK4 with steps limited by the local stiffness
            let rhs = |f: f64| -c1 * f.max(0.0).powf(lambda) + c2;
            let (mut f, mut s) = (f0, 0.0);
            while s < t {
                let h = (1e-3 / (1.0 + c1 * lambda * f.max(1.0).powf(lambda - 1.0))).min(t - s);
                let k1 = rhs(f);
                let k2 = rhs(f + 0.5 * h * k1);
                let k3 = rhs(f + 0.5 * h * k2);
                let k4 = rhs(f + h * k3);
                f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                s += h;
            }
            let b = comparison_bound(f0, lambda, c1, c2, t).unwrap();
            assert!(f <= b.min() * (1.0 + 1e-6), "f={f} bound={b:?}");
        }
    }

    #[test]
    fn zero_ledger() {
        let ms = make_mode_set(3.0).unwrap();
        let cfg = SolverConfig::new(vec![0.0, 0.0, 0.0, 1.0], 3.0, 1e-2, 0.05).unwrap();
        let sol = solve_remainder(&SpectralField::zeros(&ms), &Background::Polynomial, &cfg).unwrap();
        let led = energy_diagnostics(&sol.v, &Background::Polynomial, &cfg.a, 4).unwrap();
        assert!(led.records.iter().all(|r| r.lp == 0.0 && r.k == 0.0 && r.l == 0.0));
        assert_eq!(led.max_residual(), 0.0);
    }

    #[test]
    fn linear_identity_residual() {
        let ms = make_mode_set(3.0).unwrap();
        let cfg = SolverConfig::new(vec![0.0, 1.0], 3.0, 1e-3, 0.2).unwrap();
        let x = SpectralField::constant(&ms, 1.0);
        let sol = solve_remainder(&x, &Background::Polynomial, &cfg).unwrap();
        let led = energy_diagnostics(&sol.v, &Background::Polynomial, &cfg.a, 2).unwrap();
        assert!(led.max_residual() < 1e-3, "{}", led.max_residual());
        assert!(led.records.iter().all(|r| r.k >= 0.0 && r.l >= 0.0));
    }
}
