use crate::besov::NormPlan;
use crate::error::{invalid, Result};
use crate::noise::{check_coefficients, hermite_all, renorm_constant};
use crate::remainder::SolverConfig;
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{pointwise_map, ModeSet, SpectralField};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use std::sync::Arc;

/// Steer `∂X = ΔX - X - Σ a_k ℋ_k(X, ℜ) + f` from `x` to `y` in time `horizon`.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub x: SpectralField,
    pub y: SpectralField,
    pub horizon: f64,
    pub a: Vec<f64>,
    pub renorm: f64,
}

impl ControlProblem {
    /// `ℜ` defaults to the renormalization constant of the mode set of `x`.
    pub fn new(x: SpectralField, y: SpectralField, horizon: f64, a: Vec<f64>) -> Result<Self> {
        check_coefficients(&a)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("control horizon must be positive"));
        }
        let y = y.project_onto(x.mode_set());
        let renorm = renorm_constant(x.mode_set());
        Ok(ControlProblem { x, y, horizon, a, renorm })
    }

    fn modes(&self) -> &Arc<ModeSet> {
        self.x.mode_set()
    }

    /// `d = y - S(T)x`.
    fn defect(&self) -> SpectralField {
        let mut sx = self.x.clone();
        sx.apply_multiplier(|l| (-l * self.horizon).exp());
        self.y.sub(&sx).expect("same modes")
    }

    /// `X(t) = S(t)x + (t/T) d`.
    pub fn path(&self, t: f64) -> SpectralField {
        let mut p = self.x.clone();
        p.apply_multiplier(|l| (-l * t).exp());
        p.axpy(t / self.horizon, &self.defect()).expect("same modes");
        p
    }

    fn drift(&self, u: &SpectralField) -> SpectralField {
        let n = self.a.len() - 1;
        pointwise_map(&[u], n, self.modes(), |v| {
            let mut h = [0.0; 16];
            hermite_all(n, v[0].re, self.renorm, &mut h);
            Complex64::new(self.a.iter().zip(&h).map(|(a, h)| a * h).sum(), 0.0)
        })
    }

    /// `f(t) = Σ a_k Π ℋ_k(X(t), ℜ) + d/T + (t/T)(1 - Δ)d`.
    pub fn forcing(&self, t: f64) -> SpectralField {
        let d = self.defect();
        let mut f = self.drift(&self.path(t));
        f.axpy(1.0 / self.horizon, &d).expect("same modes");
        let mut ld = d;
        ld.apply_multiplier(|l| l * t / self.horizon);
        f.axpy(1.0, &ld).expect("same modes");
        f
    }

    fn nonlinear(&self, t: f64, u: &SpectralField) -> SpectralField {
        let mut f = self.forcing(t);
        f.axpy(-1.0, &self.drift(u)).expect("same modes");
        f
    }
}

/// `φ_1, φ_2, φ_3` at `z ≤ 0`, with Taylor series near the origin.
fn phis(z: f64) -> [f64; 3] {
    if z.abs() < 0.5 {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut term = 1.0 / (1..=k + 1).map(|i| i as f64).product::<f64>();
            let mut j = 0usize;
            while term.abs() > 1e-18 && j < 40 {
                *o += term;
                j += 1;
                term *= z / (j + k + 1) as f64;
            }
        }
        out
    } else {
        let p1 = z.exp_m1() / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [p1, p2, p3]
    }
}

/// Per-mode ETDRK4 coefficients at `z = -I h`:
/// `[e^{z/2}, φ_1(z/2), e^z, φ_1 - 3φ_2 + 4φ_3, φ_2 - 2φ_3, -φ_2 + 4φ_3]`.
pub fn etdrk4_coefficients(z: f64) -> [f64; 6] {
    let [h1, _, _] = phis(z / 2.0);
    let [p1, p2, p3] = phis(z);
    [(z / 2.0).exp(), h1, z.exp(), p1 - 3.0 * p2 + 4.0 * p3, p2 - 2.0 * p3, -p2 + 4.0 * p3]
}

#[derive(Clone, Debug)]
pub struct ControlResult {
    pub forcing: Trajectory,
    pub controlled: Trajectory,
    /// `‖X(T) - y‖_{C^{-α₀}}`.
    pub endpoint_error: f64,
    /// Largest coefficient deviation from the explicit path over the grid.
    pub path_error: f64,
}

/// Build the explicit control and verify it by an ETDRK4 solve with step `dt`.
pub fn control_to_target(prob: &ControlProblem, dt: f64, alpha0: f64) -> Result<ControlResult> {
    let steps = (prob.horizon / dt).round() as usize;
    if !(dt > 0.0) || steps == 0 || ((steps as f64) * dt - prob.horizon).abs() > 1e-9 * prob.horizon {
        return Err(invalid(format!("dt = {dt} must divide the horizon {}", prob.horizon)));
    }
    let ms = prob.modes().clone();
    let coef: Vec<[f64; 6]> = ms.intensities().iter().map(|&l| etdrk4_coefficients(-l * dt)).collect();
    let lin = |u: &SpectralField, c: usize| -> SpectralField {
        let mut v = u.clone();
        for (x, k) in v.coeffs_mut().iter_mut().zip(&coef) {
            *x *= k[c];
        }
        v
    };
    let comb = |terms: &[(&SpectralField, usize, f64)], base: SpectralField| -> SpectralField {
        let mut out = base;
        for (i, o) in out.coeffs_mut().iter_mut().enumerate() {
            for &(f, c, w) in terms {
                *o += f.coeffs()[i] * (coef[i][c] * w * dt);
            }
        }
        out
    };
    let mut u = prob.x.clone();
    let mut forcing = Trajectory::new();
    let mut controlled = Trajectory::new();
    let mut path_error: f64 = 0.0;
    forcing.push(0.0, prob.forcing(0.0));
    controlled.push(0.0, u.clone());
    for j in 0..steps {
        let t = j as f64 * dt;
        let nu = prob.nonlinear(t, &u);
        let a = comb(&[(&nu, 1, 0.5)], lin(&u, 0));
        let na = prob.nonlinear(t + dt / 2.0, &a);
        let b = comb(&[(&na, 1, 0.5)], lin(&u, 0));
        let nb = prob.nonlinear(t + dt / 2.0, &b);
        let mut g = nb.scaled(2.0);
        g.axpy(-1.0, &nu)?;
        let c = comb(&[(&g, 1, 0.5)], lin(&a, 0));
        let nc = prob.nonlinear(t + dt, &c);
        let mut sab = na;
        sab.axpy(1.0, &nb)?;
        u = comb(&[(&nu, 3, 1.0), (&sab, 4, 2.0), (&nc, 5, 1.0)], lin(&u, 2));
        if !u.is_finite() {
            return Err(crate::Error::Explosion { time: t + dt, reason: "non-finite controlled state".into() });
        }
        let tn = (j + 1) as f64 * dt;
        path_error = path_error.max(u.max_abs_diff(&prob.path(tn)));
        forcing.push(tn, prob.forcing(tn));
        controlled.push(tn, u.clone());
    }
    let diff = u.sub(&prob.y)?;
    let endpoint_error = NormPlan::covering(&ms).holder_norm(&diff, -alpha0);
    Ok(ControlResult { forcing, controlled, endpoint_error, path_error })
}

/// The five smooth test problems on `modes`.
fn targets(modes: &Arc<ModeSet>, horizon: f64) -> Result<Vec<(String, SpectralField, SpectralField)>> {
    let cos = |m: [i32; 2], c: f64| SpectralField::cosine(modes, m).map(|f| f.scaled(c));
    let zero = SpectralField::zeros(modes);
    let mut free = cos([2, 1], 0.4)?;
    let x4 = free.clone();
    free.apply_multiplier(|l| (-l * horizon).exp());
    let mut smooth = SpectralField::from_fn(modes, |m| {
        let r2 = (m[0] * m[0] + m[1] * m[1]) as f64;
        Complex64::new(if r2 <= 4.0 { 0.2 * (-r2).exp() } else { 0.0 }, 0.0)
    });
    smooth.symmetrize();
    let mut mixed = cos([1, 1], 0.2)?;
    mixed.axpy(1.0, &SpectralField::constant(modes, 0.5))?;
    Ok(vec![
        ("cos10".into(), zero.clone(), cos([1, 0], 0.5)?),
        ("constant".into(), zero, SpectralField::constant(modes, 1.0)),
        ("mixed".into(), cos([0, 1], 0.3)?, mixed),
        ("free_flow".into(), x4, free),
        ("gaussian_bump".into(), SpectralField::constant(modes, -1.0), smooth),
    ])
}

/// Endpoint errors on the five test problems and the observed order under `dt` refinement.
pub fn control_experiment(cfg: &SolverConfig) -> Result<ExperimentReport> {
    let modes = cfg.modes()?;
    let alpha0 = cfg.reg.alpha0;
    let mut report = ExperimentReport::new("control");
    let mut table = Table::new("control", &["target", "dt", "endpoint_error", "path_error"]);
    let mut counts = vec![cfg.steps()];
    while counts.len() < 6 && counts[0] % 2 == 0 && counts[0] > 4 {
        counts.insert(0, counts[0] / 2);
    }
    let ladder: Vec<f64> = counts.iter().map(|&k| cfg.horizon / k as f64).collect();
    let mut worst_order = f64::INFINITY;
    for (name, x, y) in targets(&modes, cfg.horizon)? {
        let prob = ControlProblem::new(x, y, cfg.horizon, cfg.a.clone())?;
        let mut errs = Vec::new();
        for &h in &ladder {
            let r = control_to_target(&prob, h, alpha0)?;
            table.push([name.clone(), format!("{h}"), format!("{:.6e}", r.endpoint_error), format!("{:.6e}", r.path_error)]);
            errs.push((h, r.endpoint_error));
        }
        let fine = errs.last().map_or(f64::NAN, |e| e.1);
        report.push(
            Metric::check(format!("endpoint_error_{name}"), fine, "< 1e-5", fine < 1e-5)
                .with_anchor("approximate controllability"),
        );
        // coarsest refinement pair still above the rounding floor
        if let Some(w) = errs.windows(2).find(|w| w[1].1 > 1e-11) {
            let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
            worst_order = worst_order.min(order);
            report.push(Metric::info(format!("order_{name}"), order));
        }
    }
    report.push(
        Metric::check("min_order", worst_order, ">= 0.9", worst_order >= 0.9).with_anchor("convergence of the verification solve"),
    );
    report.note(format!("verification by ETDRK4 on the ladder {ladder:?}"));
    report.tables.push(table);
    Ok(report)
}
