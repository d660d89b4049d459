//! Truncated space-time white noise, exact Ornstein-Uhlenbeck dynamics, Wick powers
//! and the diagram vector driving the remainder equation.

mod snapshot;

pub use snapshot::{read_snapshot, write_diagram_csv, write_snapshot};

use crate::error::{invalid, Error, Result};
use crate::spectral::{pointwise_map_band, ModeSet, SpectralField};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Address of one block of Gaussian draws. The draws are a pure function of the key:
/// a ChaCha8 stream seeded with `(seed, replica, step, stream)`, two normals per mode
/// index in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub replica: u64,
    pub step: u64,
    /// Namespace separating unrelated uses of one `(seed, replica)` pair.
    pub stream: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, replica: u64) -> Self {
        NoiseKey { seed, replica, step: 0, stream: 0 }
    }

    pub fn at_step(self, step: u64) -> Self {
        NoiseKey { step, ..self }
    }

    pub fn in_stream(self, stream: u64) -> Self {
        NoiseKey { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.replica.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.step.to_le_bytes());
        bytes[24..].copy_from_slice(&self.stream.to_le_bytes());
        ChaCha8Rng::from_seed(bytes)
    }

    /// Hermitian Gaussian field with `E|η_m|² = var[m]` (the origin is real with variance `var[0]`).
    pub fn gaussian(&self, modes: &Arc<ModeSet>, var: &[f64]) -> SpectralField {
        let mut rng = self.rng();
        let mut out = SpectralField::zeros(modes);
        let zero = modes.zero_index();
        let c = out.coeffs_mut();
        for i in 0..modes.len() {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            if !modes.is_representative(i) {
                continue;
            }
            if i == zero {
                c[i] = Complex64::new(var[i].sqrt() * a, 0.0);
            } else {
                let s = (0.5 * var[i]).sqrt();
                c[i] = Complex64::new(s * a, s * b);
                c[modes.neg_index(i)] = c[i].conj();
            }
        }
        out
    }
}

/// `ℜ = Σ_m 1/(2 I_m)` over the mode set.
pub fn renorm_constant(modes: &ModeSet) -> f64 {
    modes.intensities().iter().map(|&l| 0.5 / l).sum()
}

pub fn stationary_variances(modes: &ModeSet) -> Vec<f64> {
    modes.intensities().iter().map(|&l| 0.5 / l).collect()
}

/// Per-mode variance `(1 - e^{-2 I_m dt}) / (2 I_m)` of one OU increment.
pub fn increment_variances(modes: &ModeSet, dt: f64) -> Vec<f64> {
    modes.intensities().iter().map(|&l| -(-2.0 * l * dt).exp_m1() / (2.0 * l)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StartMode {
    Stationary,
    ZeroAt(f64),
}

/// The process `⟨1⟩` at one time.
#[derive(Clone, Debug)]
pub struct OUState {
    pub field: SpectralField,
    pub start: StartMode,
    pub time: f64,
}

/// Stationary sample at time 0, drawn from `key` (step index as given).
pub fn sample_stationary_ou(modes: &Arc<ModeSet>, key: NoiseKey) -> OUState {
    OUState {
        field: key.gaussian(modes, &stationary_variances(modes)),
        start: StartMode::Stationary,
        time: 0.0,
    }
}

pub fn zero_ou(modes: &Arc<ModeSet>, start: f64) -> OUState {
    OUState { field: SpectralField::zeros(modes), start: StartMode::ZeroAt(start), time: start }
}

/// Precomputed tables for repeated exact OU transitions with one step size.
#[derive(Clone, Debug)]
pub struct OuStepper {
    modes: Arc<ModeSet>,
    dt: f64,
    decay: Vec<f64>,
    var: Vec<f64>,
}

impl OuStepper {
    pub fn new(modes: &Arc<ModeSet>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        Ok(OuStepper {
            modes: modes.clone(),
            dt,
            decay: crate::spectral::decay_table(modes, dt),
            var: increment_variances(modes, dt),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn variances(&self) -> &[f64] {
        &self.var
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// The increment `η` drawn from `key`.
    pub fn increment(&self, key: NoiseKey) -> SpectralField {
        key.gaussian(&self.modes, &self.var)
    }

    /// `x ↦ e^{-I dt} x + η`; returns `η`.
    pub fn step(&self, x: &mut SpectralField, key: NoiseKey) -> SpectralField {
        let eta = self.increment(key);
        x.apply_table(&self.decay);
        x.axpy(1.0, &eta).expect("same mode set");
        eta
    }
}

/// One exact OU transition over `dt` with the increment drawn from `key`.
pub fn ou_step(state: &OUState, dt: f64, key: NoiseKey) -> Result<OUState> {
    let stepper = OuStepper::new(state.field.mode_set(), dt)?;
    let mut field = state.field.clone();
    stepper.step(&mut field, key);
    Ok(OUState { field, start: state.start, time: state.time + dt })
}

/// Step `j → j+1` of a run always consumes the key with step index `j + 1`; index 0 is
/// reserved for the stationary initial sample. Restarted runs therefore reuse the draws.
pub fn step_key(base: NoiseKey, j: usize) -> NoiseKey {
    base.at_step(j as u64 + 1)
}

/// OU path on the grid `t_j = t0 + j dt`, `j = 0..=steps`, with global step offset `offset`.
pub fn ou_path(
    start: &SpectralField,
    t0: f64,
    dt: f64,
    steps: usize,
    base: NoiseKey,
    offset: usize,
) -> Result<Trajectory> {
    let stepper = OuStepper::new(start.mode_set(), dt)?;
    let mut traj = Trajectory::new();
    let mut x = start.clone();
    traj.push(t0, x.clone());
    for j in 0..steps {
        stepper.step(&mut x, step_key(base, offset + j));
        traj.push(t0 + (j + 1) as f64 * dt, x.clone());
    }
    Ok(traj)
}

/// Scalar Hermite polynomial `ℋ_k(x, c)` by the three-term recursion.
pub fn hermite(k: usize, x: f64, c: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if k == 0 {
        return h0;
    }
    for j in 2..=k {
        let h2 = x * h1 - (j - 1) as f64 * c * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `ℋ_0(x, c), …, ℋ_k(x, c)`.
pub fn hermite_all(k: usize, x: f64, c: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if k >= 1 {
        out[1] = x;
    }
    for j in 2..=k {
        out[j] = x * out[j - 1] - (j - 1) as f64 * c * out[j - 2];
    }
}

/// `ℋ_k(X, c)` of a real field, exact (untruncated) on `X`'s `k`-fold product set.
pub fn hermite_field(k: usize, x: &SpectralField, c: f64) -> SpectralField {
    hermite_fields(k, x, c).pop().expect("k+1 outputs")
}

/// `ℋ_1(X, c), …, ℋ_k(X, c)` with `ℋ_j` stored on the `j`-fold product set.
pub fn hermite_fields(k: usize, x: &SpectralField, c: f64) -> Vec<SpectralField> {
    let ms = x.mode_set();
    let targets: Vec<_> = (1..=k).map(|j| ms.power_set(j)).collect();
    let band = k as i32 * ms.bandwidth();
    let mut h = vec![0.0; k + 1];
    pointwise_map_band(&[x], band, &targets, |v, out| {
        hermite_all(k, v[0].re, c, &mut h);
        for j in 0..k {
            out[j] = Complex64::new(h[j + 1], 0.0);
        }
    })
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiagramOrigin {
    Stationary,
    ZeroStart(f64),
    /// Restarted at time `s` from stationary diagrams.
    Shifted(f64),
}

/// Diagrams `⟨1⟩, …, ⟨n⟩` on a shared time grid; `⟨k⟩` lives on the `k`-fold product set.
#[derive(Clone, Debug)]
pub struct DiagramSet {
    pub n: usize,
    pub trajectories: Vec<Trajectory>,
    pub renorm: f64,
    pub origin: DiagramOrigin,
}

impl DiagramSet {
    pub fn times(&self) -> &[f64] {
        &self.trajectories[0].times
    }

    pub fn len(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories[0].is_empty()
    }

    /// `⟨k⟩` at stored index `i` (`k ≥ 1`).
    pub fn diagram(&self, k: usize, i: usize) -> &SpectralField {
        &self.trajectories[k - 1].fields[i]
    }

    /// `⟨1⟩, …, ⟨n⟩` at stored index `i`.
    pub fn frame(&self, i: usize) -> Vec<&SpectralField> {
        self.trajectories.iter().map(|t| &t.fields[i]).collect()
    }

    pub fn base_modes(&self) -> &Arc<ModeSet> {
        self.trajectories[0].fields[0].mode_set()
    }

    /// Largest deviation from `⟨k⟩ = ℋ_k(⟨1⟩, ℜ)` over stored times.
    pub fn hermite_consistency(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.len() {
            let h = hermite_fields(self.n, self.diagram(1, i), self.renorm);
            for (k, hk) in h.iter().enumerate() {
                err = err.max(hk.max_abs_diff(self.diagram(k + 1, i)));
            }
        }
        err
    }

    /// All diagrams identically zero (the deterministic remainder equation).
    pub fn zeros(n: usize, modes: &Arc<ModeSet>, times: &[f64]) -> Self {
        let trajectories = (1..=n)
            .map(|k| {
                let z = SpectralField::zeros(&modes.power_set(k));
                let mut t = Trajectory::new();
                for &s in times {
                    t.push(s, z.clone());
                }
                t
            })
            .collect();
        DiagramSet { n, trajectories, renorm: 0.0, origin: DiagramOrigin::ZeroStart(times[0]) }
    }
}

fn check_odd(n: usize) -> Result<()> {
    if n % 2 == 0 {
        return Err(invalid(format!("n must be odd and ≥ 1, got {n}")));
    }
    Ok(())
}

/// `⟨k⟩ = ℋ_k(⟨1⟩, ℜ)` at every stored time, with `ℜ` the exact constant of the mode set.
pub fn wick_trajectory(ou_path: &Trajectory, n: usize, origin: DiagramOrigin) -> Result<DiagramSet> {
    check_odd(n)?;
    let first = ou_path.fields.first().ok_or_else(|| invalid("empty OU path"))?;
    let renorm = renorm_constant(first.mode_set());
    let mut trajectories = vec![Trajectory::new(); n];
    for (&t, x) in ou_path.times.iter().zip(&ou_path.fields) {
        for (k, h) in hermite_fields(n, x, renorm).into_iter().enumerate() {
            trajectories[k].push(t, h);
        }
    }
    Ok(DiagramSet { n, trajectories, renorm, origin })
}

/// `Σ_k binom(m,k) (-y)^k ⟨m-k⟩` for `m = 1..n`, exact on the product sets.
fn recombine(y: &SpectralField, frame: &[&SpectralField], sign: f64) -> Vec<SpectralField> {
    let n = frame.len();
    let base = y.mode_set();
    let targets: Vec<_> = (1..=n).map(|k| base.power_set(k)).collect();
    let mut inputs = vec![y];
    inputs.extend_from_slice(frame);
    let mut pows = vec![0.0; n + 1];
    let mut d = vec![0.0; n + 1];
    pointwise_map_band(&inputs, n as i32 * base.bandwidth(), &targets, |v, out| {
        let yv = sign * v[0].re;
        pows[0] = 1.0;
        d[0] = 1.0;
        for j in 1..=n {
            pows[j] = pows[j - 1] * yv;
            d[j] = v[j].re;
        }
        for m in 1..=n {
            let s: f64 = (0..=m).map(|k| binom(m, k) * pows[k] * d[m - k]).sum();
            out[m - 1] = Complex64::new(s, 0.0);
        }
    })
}

/// Restarted diagrams `⟨k⟩_{s,t} = Σ_j binom(k,j)(-1)^j (S(t-s)⟨1⟩_{-∞,s})^j ⟨k-j⟩_{-∞,t}`
/// at every stored time `t ≥ s` of `diagrams`.
pub fn shifted_wick(stationary_at_s: &SpectralField, s: f64, diagrams: &DiagramSet) -> Result<DiagramSet> {
    let mut trajectories = vec![Trajectory::new(); diagrams.n];
    for i in 0..diagrams.len() {
        let t = diagrams.times()[i];
        if t < s - 1e-12 {
            return Err(Error::NegativeTime(t - s));
        }
        let y = stationary_at_s.heat((t - s).max(0.0))?;
        for (k, f) in recombine(&y, &diagrams.frame(i), -1.0).into_iter().enumerate() {
            trajectories[k].push(t, f);
        }
    }
    Ok(DiagramSet { n: diagrams.n, trajectories, renorm: diagrams.renorm, origin: DiagramOrigin::Shifted(s) })
}

/// Forward binomial identity `⟨k⟩_{0,t+h} = Σ_j binom(k,j) (S(h)⟨1⟩_{0,t})^j ⟨k-j⟩_{t,t+h}`
/// at one time.
pub fn restart_compose(y: &SpectralField, frame: &[&SpectralField]) -> Vec<SpectralField> {
    recombine(y, frame, 1.0)
}

/// The driving vector: `upper[k-1] = Z^{(k)}` for `k = 1..n` on the `k`-fold product set,
/// and `Z^{(0)} = a_n`.
#[derive(Clone, Debug)]
pub struct ZVector {
    pub n: usize,
    pub top: f64,
    pub upper: Vec<Trajectory>,
}

impl ZVector {
    pub fn frame(&self, i: usize) -> Vec<&SpectralField> {
        self.upper.iter().map(|t| &t.fields[i]).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.upper[0].times
    }
}

pub fn check_coefficients(a: &[f64]) -> Result<usize> {
    if a.len() < 2 {
        return Err(invalid("need coefficients a_0..a_n with n ≥ 1"));
    }
    let n = a.len() - 1;
    check_odd(n)?;
    if !(a[n] > 0.0) {
        return Err(invalid("leading coefficient a_n must be positive"));
    }
    Ok(n)
}

/// `Z^{(n-j)} = Σ_{k=j}^n a_k binom(k,j) ⟨k-j⟩` at one time, `j = 0..n-1`; `frame[k-1] = ⟨k⟩`.
pub fn assemble_z_frame(frame: &[&SpectralField], a: &[f64]) -> Vec<SpectralField> {
    let n = a.len() - 1;
    let base = frame[0].mode_set();
    (1..=n)
        .map(|order| {
            let j = n - order;
            let ms = base.power_set(order);
            let mut z = SpectralField::constant(&ms, a[j]);
            for k in j + 1..=n {
                if a[k] != 0.0 {
                    z.axpy(a[k] * binom(k, j), &frame[k - j - 1].project_onto(&ms)).expect("same set");
                }
            }
            z
        })
        .collect()
}

pub fn assemble_z(diagrams: &DiagramSet, a: &[f64]) -> Result<ZVector> {
    let n = check_coefficients(a)?;
    if n != diagrams.n {
        return Err(invalid(format!("coefficients of degree {n} for diagrams of order {}", diagrams.n)));
    }
    let mut upper = vec![Trajectory::new(); n];
    for i in 0..diagrams.len() {
        let t = diagrams.times()[i];
        for (k, z) in assemble_z_frame(&diagrams.frame(i), a).into_iter().enumerate() {
            upper[k].push(t, z);
        }
    }
    Ok(ZVector { n, top: a[n], upper })
}

/// Spectrum of `E[⟨n⟩_{t1}(z₁)⟨n⟩_{t2}(z₂)]` in `z₁ - z₂`: `n! (Σ_m e^{-I_m|t₁-t₂|}/(2I_m) e_m)^{⋆n}`.
pub fn analytic_wick_covariance(n: usize, t1: f64, t2: f64, modes: &Arc<ModeSet>) -> Result<SpectralField> {
    if n == 0 {
        return Err(invalid("chaos order must be positive"));
    }
    let lag = (t1 - t2).abs();
    let mut rho = SpectralField::zeros(modes);
    for (c, &l) in rho.coeffs_mut().iter_mut().zip(modes.intensities()) {
        *c = Complex64::new((-l * lag).exp() / (2.0 * l), 0.0);
    }
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    let target = modes.power_set(n);
    Ok(pointwise_map_band(&[&rho], n as i32 * modes.bandwidth(), &[target], |v, out| {
        out[0] = Complex64::new(fact * v[0].re.powi(n as i32), 0.0)
    })
    .pop()
    .expect("one output"))
}

/// `E[Y(φ) Y'(φ)] = Σ_m spectrum(m) |φ̂(m)|²` for a real test function `φ`.
pub fn covariance_against(spectrum: &SpectralField, phi: &SpectralField) -> f64 {
    spectrum
        .mode_set()
        .modes()
        .iter()
        .zip(spectrum.coeffs())
        .map(|(&m, s)| s.re * phi.coeff(m).norm_sqr())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_mode_set;
    use approx::assert_abs_diff_eq;

    #[test]
    fn renorm_examples() {
        assert_abs_diff_eq!(renorm_constant(&make_mode_set(1.0).unwrap()), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(renorm_constant(&make_mode_set(2.0).unwrap()), 0.574_422_542_343_043, epsilon = 1e-14);
    }

    #[test]
    fn renorm_grows_logarithmically() {
        let r: Vec<f64> = (4..=7).map(|j| renorm_constant(&make_mode_set(2f64.powi(j)).unwrap())).collect();
        let slopes: Vec<f64> = r.windows(2).map(|w| (w[1] - w[0]) / 2f64.ln()).collect();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        for s in &slopes {
            assert!((s - mean).abs() < 0.1 * mean);
        }
        assert!((mean - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 0.1 * mean);
    }

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite(4, 2.0, 1.0), -5.0);
        assert_eq!(hermite(0, 3.0, 1.0), 1.0);
        let (x, c) = (0.7, 0.3);
        assert_abs_diff_eq!(hermite(2, x, c), x * x - c, epsilon = 1e-15);
        assert_abs_diff_eq!(hermite(3, x, c), x * x * x - 3.0 * c * x, epsilon = 1e-15);
    }

    #[test]
    fn keys_are_pure() {
        let ms = make_mode_set(3.0).unwrap();
        let v = stationary_variances(&ms);
        let k = NoiseKey::new(5, 2).at_step(9);
        let a = k.gaussian(&ms, &v);
        let b = k.gaussian(&ms, &v);
        assert_eq!(a.max_abs_diff(&b), 0.0);
        assert!(a.is_hermitian(0.0));
        assert!(k.at_step(10).gaussian(&ms, &v).max_abs_diff(&a) > 0.0);
    }

    #[test]
    fn zero_path_diagrams() {
        let ms = make_mode_set(3.0).unwrap();
        let mut p = Trajectory::new();
        p.push(0.0, SpectralField::zeros(&ms));
        let d = wick_trajectory(&p, 3, DiagramOrigin::Stationary).unwrap();
        let r = renorm_constant(&ms);
        assert_abs_diff_eq!(d.diagram(2, 0).mean(), -r, epsilon = 1e-14);
        assert!(d.diagram(3, 0).max_abs() < 1e-14);
        assert!(wick_trajectory(&p, 2, DiagramOrigin::Stationary).is_err());
    }

    #[test]
    fn assemble_cubic() {
        let ms = make_mode_set(3.0).unwrap();
        let path = ou_path(&sample_stationary_ou(&ms, NoiseKey::new(1, 0)).field, 0.0, 0.01, 2, NoiseKey::new(1, 0), 0)
            .unwrap();
        let d = wick_trajectory(&path, 3, DiagramOrigin::Stationary).unwrap();
        let z = assemble_z(&d, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(z.top, 1.0);
        for i in 0..3 {
            assert!(z.upper[0].fields[i].max_abs_diff(&d.diagram(1, i).scaled(3.0)) < 1e-14);
            assert!(z.upper[1].fields[i].max_abs_diff(&d.diagram(2, i).scaled(3.0)) < 1e-14);
            assert!(z.upper[2].fields[i].max_abs_diff(d.diagram(3, i)) < 1e-14);
        }
        assert!(assemble_z(&d, &[0.0, 0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn covariance_examples() {
        let ms = make_mode_set(2.0).unwrap();
        let c1 = analytic_wick_covariance(1, 0.3, 0.3, &ms).unwrap();
        for (i, &l) in ms.intensities().iter().enumerate() {
            assert_abs_diff_eq!(c1.coeff(ms.mode(i)).re, 0.5 / l, epsilon = 1e-15);
        }
        let c2 = analytic_wick_covariance(2, 0.0, 0.0, &ms).unwrap();
        let total: f64 = c2.coeffs().iter().map(|c| c.re).sum();
        let r = renorm_constant(&ms);
        assert_abs_diff_eq!(total, 2.0 * r * r, epsilon = 1e-12);
        assert_abs_diff_eq!(total, 0.659_923, epsilon = 1e-6);
    }
}
