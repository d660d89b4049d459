//! Fourier representation of real fields on the 2-torus.
//!
//! A field is stored as its coefficients on a truncated ball of lattice
//! modes `|m| < cutoff`, with basis `e_m(z) = exp(2πi m·z)`.

mod grid;
mod kernel;

pub use grid::{grid_size, pointwise_map, pointwise_map_band, pointwise_map_many, with_grid, Grid};
pub use kernel::{
    kernel_convolve, kernel_convolve_nested, verify_kernel_bound, verify_tail_bound, ConvRange,
    Kernel, KernelConvolution,
};

use crate::error::{invalid, Error, Result};
use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

pub type Mode = [i32; 2];

const NO_MODE: u32 = u32::MAX;

/// Eigenvalue of `1 - Δ` on `e_m`: `1 + 4π²|m|²`.
pub fn intensity(m: Mode) -> f64 {
    1.0 + 4.0 * PI * PI * norm_sq(m) as f64
}

pub fn norm_sq(m: Mode) -> i64 {
    (m[0] as i64) * (m[0] as i64) + (m[1] as i64) * (m[1] as i64)
}

/// The lattice ball `{m ∈ ℤ² : |m| < cutoff}` in lexicographic order.
#[derive(Debug)]
pub struct ModeSet {
    cutoff: f64,
    modes: Vec<Mode>,
    lookup: Vec<u32>,
    neg: Vec<usize>,
    bandwidth: i32,
    intensities: Vec<f64>,
}

impl PartialEq for ModeSet {
    fn eq(&self, other: &Self) -> bool {
        self.modes == other.modes
    }
}

fn cache() -> &'static Mutex<HashMap<u64, Arc<ModeSet>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ModeSet>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Build (or fetch from the process-wide cache) the mode set of a cutoff.
pub fn make_mode_set(cutoff: f64) -> Result<Arc<ModeSet>> {
    if !(cutoff >= 1.0) || !cutoff.is_finite() {
        return Err(Error::InvalidCutoff(cutoff));
    }
    let key = cutoff.to_bits();
    let mut guard = cache().lock().expect("mode set cache poisoned");
    if let Some(ms) = guard.get(&key) {
        return Ok(ms.clone());
    }
    let ms = Arc::new(ModeSet::build(cutoff));
    guard.insert(key, ms.clone());
    Ok(ms)
}

impl ModeSet {
    fn build(cutoff: f64) -> Self {
        let c2 = cutoff * cutoff;
        let r = cutoff.ceil() as i32;
        let mut modes = Vec::new();
        for m0 in -r..=r {
            for m1 in -r..=r {
                if (norm_sq([m0, m1]) as f64) < c2 {
                    modes.push([m0, m1]);
                }
            }
        }
        let bandwidth = modes.iter().map(|m| m[0].abs().max(m[1].abs())).max().unwrap_or(0);
        let side = (2 * bandwidth + 1) as usize;
        let mut lookup = vec![NO_MODE; side * side];
        for (i, m) in modes.iter().enumerate() {
            lookup[(m[0] + bandwidth) as usize * side + (m[1] + bandwidth) as usize] = i as u32;
        }
        let mut set = ModeSet {
            cutoff,
            intensities: modes.iter().map(|&m| intensity(m)).collect(),
            modes,
            lookup,
            neg: Vec::new(),
            bandwidth,
        };
        set.neg = set
            .modes
            .iter()
            .map(|&[a, b]| set.index_of([-a, -b]).expect("mode set closed under negation"))
            .collect();
        set
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Mode {
        self.modes[i]
    }

    /// Largest absolute value of a mode component.
    pub fn bandwidth(&self) -> i32 {
        self.bandwidth
    }

    pub fn intensity(&self, i: usize) -> f64 {
        self.intensities[i]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn index_of(&self, m: Mode) -> Option<usize> {
        let b = self.bandwidth;
        if m[0].abs() > b || m[1].abs() > b {
            return None;
        }
        let side = (2 * b + 1) as usize;
        match self.lookup[(m[0] + b) as usize * side + (m[1] + b) as usize] {
            NO_MODE => None,
            i => Some(i as usize),
        }
    }

    pub fn contains(&self, m: Mode) -> bool {
        self.index_of(m).is_some()
    }

    /// Index of `-m` for the mode at index `i`.
    pub fn neg_index(&self, i: usize) -> usize {
        self.neg[i]
    }

    pub fn zero_index(&self) -> usize {
        self.index_of([0, 0]).expect("origin present")
    }

    /// Half-plane representative: the origin, or `m₀ > 0`, or `m₀ = 0, m₁ > 0`.
    pub fn is_representative(&self, i: usize) -> bool {
        let [a, b] = self.modes[i];
        a > 0 || (a == 0 && b >= 0)
    }

    /// The mode set large enough to hold a `k`-fold product of fields on `self`.
    pub fn power_set(&self, k: usize) -> Arc<ModeSet> {
        make_mode_set(self.cutoff * k.max(1) as f64).expect("scaled cutoff is valid")
    }

    /// Whether every mode of `self` is in `other`.
    pub fn is_subset_of(&self, other: &ModeSet) -> bool {
        self.cutoff <= other.cutoff || self.modes.iter().all(|&m| other.contains(m))
    }
}

pub fn same_modes(a: &Arc<ModeSet>, b: &Arc<ModeSet>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Hermitian-symmetric (when real) Fourier coefficient table on a mode set.
#[derive(Clone, Debug)]
pub struct SpectralField {
    modes: Arc<ModeSet>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(modes: &Arc<ModeSet>) -> Self {
        SpectralField { modes: modes.clone(), coeffs: vec![Complex64::new(0.0, 0.0); modes.len()] }
    }

    pub fn constant(modes: &Arc<ModeSet>, c: f64) -> Self {
        let mut f = Self::zeros(modes);
        f.coeffs[modes.zero_index()] = Complex64::new(c, 0.0);
        f
    }

    /// The single character `e_m` (not real unless `m = 0`).
    pub fn basis(modes: &Arc<ModeSet>, m: Mode) -> Result<Self> {
        let i = modes.index_of(m).ok_or_else(|| invalid(format!("mode {m:?} outside set")))?;
        let mut f = Self::zeros(modes);
        f.coeffs[i] = Complex64::new(1.0, 0.0);
        Ok(f)
    }

    /// The real field `e_m + e_{-m}` (equal to `2cos(2π m·z)` for `m ≠ 0`).
    pub fn cosine(modes: &Arc<ModeSet>, m: Mode) -> Result<Self> {
        let mut f = Self::basis(modes, m)?;
        let j = modes.index_of([-m[0], -m[1]]).expect("negation closed");
        f.coeffs[j] += Complex64::new(1.0, 0.0);
        Ok(f)
    }

    pub fn from_coeffs(modes: &Arc<ModeSet>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != modes.len() {
            return Err(invalid("coefficient count does not match mode set"));
        }
        Ok(SpectralField { modes: modes.clone(), coeffs })
    }

    pub fn from_fn(modes: &Arc<ModeSet>, f: impl Fn(Mode) -> Complex64) -> Self {
        let coeffs = modes.modes().iter().map(|&m| f(m)).collect();
        SpectralField { modes: modes.clone(), coeffs }
    }

    pub fn mode_set(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn coeff(&self, m: Mode) -> Complex64 {
        self.modes.index_of(m).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn set_coeff(&mut self, m: Mode, c: Complex64) -> Result<()> {
        let i = self.modes.index_of(m).ok_or_else(|| invalid(format!("mode {m:?} outside set")))?;
        self.coeffs[i] = c;
        Ok(())
    }

    /// Real part of the zero-mode coefficient, i.e. `∫ f`.
    pub fn mean(&self) -> f64 {
        self.coeffs[self.modes.zero_index()].re
    }

    /// `max_m |f̂(-m) - conj f̂(m)|`.
    pub fn hermitian_error(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[self.modes.neg_index(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_error() <= tol
    }

    /// Replace each coefficient by the Hermitian average, making the field exactly real.
    pub fn symmetrize(&mut self) {
        for i in 0..self.coeffs.len() {
            let j = self.modes.neg_index(i);
            if j > i {
                let avg = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
                self.coeffs[i] = avg;
                self.coeffs[j] = avg.conj();
            } else if j == i {
                self.coeffs[i].im = 0.0;
            }
        }
    }

    fn check_same(&self, other: &SpectralField) -> Result<()> {
        if same_modes(&self.modes, &other.modes) {
            Ok(())
        } else {
            Err(Error::ModeSetMismatch)
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        self.check_same(other)?;
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Multiply coefficient `i` by `mult(I_m)`.
    pub fn apply_multiplier(&mut self, mult: impl Fn(f64) -> f64) {
        for (c, &lam) in self.coeffs.iter_mut().zip(self.modes.intensities()) {
            *c *= mult(lam);
        }
    }

    /// Multiply coefficient `i` by a precomputed table entry.
    pub fn apply_table(&mut self, table: &[f64]) {
        for (c, &w) in self.coeffs.iter_mut().zip(table) {
            *c *= w;
        }
    }

    /// Heat semigroup `S(t) = e^{t(Δ-1)}`: `f̂(m) ↦ e^{-I_m t} f̂(m)`.
    pub fn heat(&self, t: f64) -> Result<SpectralField> {
        heat_semigroup(self, t)
    }

    /// Coefficients of `self` on another mode set: kept where present, zero elsewhere.
    pub fn project_onto(&self, target: &Arc<ModeSet>) -> SpectralField {
        if same_modes(&self.modes, target) {
            return SpectralField { modes: target.clone(), coeffs: self.coeffs.clone() };
        }
        SpectralField::from_fn(target, |m| self.coeff(m))
    }

    /// Largest coefficient difference over the union of both supports.
    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        if same_modes(&self.modes, &other.modes) {
            return self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
        }
        let a = self.modes.modes().iter().map(|&m| (self.coeff(m) - other.coeff(m)).norm());
        let b = other.modes.modes().iter().map(|&m| (self.coeff(m) - other.coeff(m)).norm());
        a.chain(b).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Sum of coefficient moduli, an upper bound for the sup norm.
    pub fn l1_coeffs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// `‖f‖²_{L²} = Σ |f̂(m)|²`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Real `L²` pairing `∫ f g` of two real fields.
    pub fn pairing(&self, other: &SpectralField) -> f64 {
        self.modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(&m, c)| (c * other.coeff([-m[0], -m[1]])).re)
            .sum()
    }

    /// Direct evaluation `Σ f̂(m) e_m(z)`.
    pub fn eval(&self, z: [f64; 2]) -> Complex64 {
        self.modes
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(&m, c)| c * Complex64::cis(2.0 * PI * (m[0] as f64 * z[0] + m[1] as f64 * z[1])))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Random real field with independent complex Gaussian coefficients of standard
/// deviation `scale(m)` (real Gaussian at the origin).
pub fn gaussian_field<R: rand::Rng + ?Sized>(
    modes: &Arc<ModeSet>,
    scale: impl Fn(Mode) -> f64,
    rng: &mut R,
) -> SpectralField {
    use rand_distr::{Distribution, StandardNormal};
    let mut f = SpectralField::zeros(modes);
    for i in 0..modes.len() {
        if !modes.is_representative(i) {
            continue;
        }
        let m = modes.mode(i);
        let s = scale(m);
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        if i == modes.zero_index() {
            f.coeffs[i] = Complex64::new(s * a, 0.0);
        } else {
            let c = Complex64::new(a, b) * (s * std::f64::consts::FRAC_1_SQRT_2);
            f.coeffs[i] = c;
            f.coeffs[modes.neg_index(i)] = c.conj();
        }
    }
    f
}

/// `S(t)f`, rejecting negative times.
pub fn heat_semigroup(f: &SpectralField, t: f64) -> Result<SpectralField> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    let mut out = f.clone();
    out.apply_multiplier(|lam| (-lam * t).exp());
    Ok(out)
}

/// Exact truncated product of fields sharing one mode set, evaluated on a zero-padded grid.
pub fn dealiased_product(fields: &[&SpectralField], pad_factor: f64) -> Result<SpectralField> {
    let first = fields.first().ok_or_else(|| invalid("empty product"))?;
    let modes = first.mode_set().clone();
    if fields.iter().any(|f| !same_modes(f.mode_set(), &modes)) {
        return Err(Error::ModeSetMismatch);
    }
    let k = fields.len();
    let needed = (k as f64 + 1.0) / 2.0;
    if pad_factor < needed {
        return Err(Error::InsufficientPadding { pad: pad_factor, factors: k, needed });
    }
    let n = (2.0 * pad_factor * modes.cutoff()).ceil().max(1.0) as usize;
    let n = n.next_power_of_two();
    Ok(with_grid(n, |g| {
        let mut acc = g.synthesize(first);
        for f in &fields[1..] {
            let vals = g.synthesize(f);
            for (a, b) in acc.iter_mut().zip(&vals) {
                *a *= b;
            }
        }
        g.analyze(&mut acc, &modes)
    }))
}

/// `φ₁(dt)(m) = (1 - e^{-I_m dt}) / I_m` for each mode.
pub fn phi1_table(modes: &ModeSet, dt: f64) -> Vec<f64> {
    modes.intensities().iter().map(|&lam| -(-lam * dt).exp_m1() / lam).collect()
}

pub fn decay_table(modes: &ModeSet, dt: f64) -> Vec<f64> {
    modes.intensities().iter().map(|&lam| (-lam * dt).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cutoff_one_is_origin() {
        let ms = make_mode_set(1.0).unwrap();
        assert_eq!(ms.modes(), &[[0, 0]]);
    }

    #[test]
    fn cutoff_two_has_nine_modes() {
        let ms = make_mode_set(2.0).unwrap();
        assert_eq!(ms.len(), 9);
        for m in [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]] {
            assert!(ms.contains(m));
        }
    }

    #[test]
    fn cutoff_eight_matches_brute_force() {
        let ms = make_mode_set(8.0).unwrap();
        let mut count = 0;
        for a in -8i32..=8 {
            for b in -8i32..=8 {
                if a * a + b * b < 64 {
                    count += 1;
                }
            }
        }
        assert_eq!(ms.len(), count);
        let mut sorted = ms.modes().to_vec();
        sorted.sort();
        assert_eq!(sorted, ms.modes());
    }

    #[test]
    fn small_cutoff_rejected() {
        assert!(matches!(make_mode_set(0.5), Err(Error::InvalidCutoff(_))));
    }

    #[test]
    fn heat_examples() {
        let ms = make_mode_set(3.0).unwrap();
        let f = SpectralField::basis(&ms, [1, 0]).unwrap();
        let g = f.heat(0.1).unwrap();
        assert_abs_diff_eq!(g.coeff([1, 0]).re, 0.017460016903644186, epsilon = 1e-12);
        let one = SpectralField::constant(&ms, 1.0).heat(1.0).unwrap();
        assert_abs_diff_eq!(one.mean(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(f.heat(0.0).unwrap().max_abs_diff(&f), 0.0);
        assert!(matches!(f.heat(-1.0), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn product_examples() {
        let ms = make_mode_set(2.0).unwrap();
        let a = SpectralField::basis(&ms, [1, 0]).unwrap();
        let b = SpectralField::basis(&ms, [0, 1]).unwrap();
        let p = dealiased_product(&[&a, &b], 1.5).unwrap();
        assert!(p.max_abs_diff(&SpectralField::basis(&ms, [1, 1]).unwrap()) < 1e-14);

        let one = SpectralField::constant(&ms, 1.0);
        let c = SpectralField::cosine(&ms, [1, 0]).unwrap();
        assert!(dealiased_product(&[&c, &one], 1.5).unwrap().max_abs_diff(&c) < 1e-14);

        // (e_1 + e_-1)^3 = e_3 + 3e_1 + 3e_-1 + e_-3, truncated to |m| < 2
        let cube = dealiased_product(&[&c, &c, &c], 2.0).unwrap();
        assert!(cube.max_abs_diff(&c.scaled(3.0)) < 1e-13);

        assert!(matches!(
            dealiased_product(&[&c, &c, &c], 1.5),
            Err(Error::InsufficientPadding { .. })
        ));
        let other = SpectralField::zeros(&make_mode_set(3.0).unwrap());
        assert!(matches!(dealiased_product(&[&c, &other], 2.0), Err(Error::ModeSetMismatch)));
    }
}
