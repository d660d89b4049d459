use super::{ModeSet, SpectralField};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

/// Uniform `n × n` grid on the torus with cached 2D transforms.
///
/// Point `(i, j)` sits at `z = (i/n, j/n)` and is stored at `i * n + j`.
pub struct Grid {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    tbuf: Vec<Complex64>,
}

impl Grid {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Grid {
            n,
            fwd,
            inv,
            scratch: vec![Complex64::default(); len],
            tbuf: vec![Complex64::default(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    fn transform(&mut self, buf: &mut [Complex64], forward: bool) {
        let n = self.n;
        let plan = if forward { &self.fwd } else { &self.inv };
        // band-limited inputs leave most rows empty
        let zero = Complex64::default();
        for row in buf.chunks_exact_mut(n) {
            if row.iter().any(|&c| c != zero) {
                plan.process_with_scratch(row, &mut self.scratch);
            }
        }
        for i in 0..n {
            for j in 0..n {
                self.tbuf[j * n + i] = buf[i * n + j];
            }
        }
        plan.process_with_scratch(&mut self.tbuf, &mut self.scratch);
        for i in 0..n {
            for j in 0..n {
                buf[i * n + j] = self.tbuf[j * n + i];
            }
        }
    }

    fn slot(&self, m: [i32; 2]) -> usize {
        let n = self.n as i32;
        (m[0].rem_euclid(n) as usize) * self.n + m[1].rem_euclid(n) as usize
    }

    /// Point values `Σ f̂(m) e_m(z)` on the grid (modes folded modulo `n`).
    pub fn synthesize(&mut self, f: &SpectralField) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.points()];
        self.synthesize_into(f, &mut buf);
        buf
    }

    pub fn synthesize_into(&mut self, f: &SpectralField, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|c| *c = Complex64::default());
        for (&m, &c) in f.mode_set().modes().iter().zip(f.coeffs()) {
            let s = self.slot(m);
            buf[s] += c;
        }
        self.transform(buf, false);
    }

    /// Synthesize two real fields at once as `f + i g`.
    pub fn synthesize_pair(&mut self, f: &SpectralField, g: &SpectralField, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|c| *c = Complex64::default());
        let i = Complex64::new(0.0, 1.0);
        for (&m, &c) in f.mode_set().modes().iter().zip(f.coeffs()) {
            let s = self.slot(m);
            buf[s] += c;
        }
        for (&m, &c) in g.mode_set().modes().iter().zip(g.coeffs()) {
            let s = self.slot(m);
            buf[s] += i * c;
        }
        self.transform(buf, false);
    }

    /// Fourier coefficients of grid values on `target` (destroys `values`).
    pub fn analyze(&mut self, values: &mut [Complex64], target: &Arc<ModeSet>) -> SpectralField {
        self.transform(values, true);
        let norm = 1.0 / self.points() as f64;
        let coeffs = target.modes().iter().map(|&m| values[self.slot(m)] * norm).collect();
        SpectralField::from_coeffs(target, coeffs).expect("sizes agree")
    }

    /// Analyze two real-valued grids packed as `u + i w`; returns `(û, ŵ)` on `target`.
    pub fn analyze_pair(
        &mut self,
        values: &mut [Complex64],
        target: &Arc<ModeSet>,
    ) -> (SpectralField, SpectralField) {
        self.transform(values, true);
        let norm = 1.0 / self.points() as f64;
        let n = target.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for &m in target.modes() {
            let p = values[self.slot(m)];
            let q = values[self.slot([-m[0], -m[1]])].conj();
            a.push(0.5 * (p + q) * norm);
            b.push(Complex64::new(0.0, -0.5) * (p - q) * norm);
        }
        (
            SpectralField::from_coeffs(target, a).expect("sizes agree"),
            SpectralField::from_coeffs(target, b).expect("sizes agree"),
        )
    }
}

thread_local! {
    static GRIDS: RefCell<HashMap<usize, Grid>> = RefCell::new(HashMap::new());
}

/// Run `f` with the calling thread's cached grid of size `n`.
pub fn with_grid<R>(n: usize, f: impl FnOnce(&mut Grid) -> R) -> R {
    let mut grid = GRIDS.with(|g| g.borrow_mut().remove(&n)).unwrap_or_else(|| Grid::new(n));
    let out = f(&mut grid);
    GRIDS.with(|g| g.borrow_mut().insert(n, grid));
    out
}

/// Smallest power of two strictly larger than `band`, so that
/// frequencies up to `band` never alias onto each other.
pub fn grid_size(band: i32) -> usize {
    ((band.max(0) as usize) + 1).next_power_of_two().max(2)
}

/// Apply a pointwise map of polynomial degree `degree` to the inputs and return the
/// exact Fourier coefficients of the result on `target`.
pub fn pointwise_map(
    inputs: &[&SpectralField],
    degree: usize,
    target: &Arc<ModeSet>,
    f: impl Fn(&[Complex64]) -> Complex64,
) -> SpectralField {
    pointwise_map_many(inputs, degree, &[target.clone()], |x, out| out[0] = f(x))
        .pop()
        .expect("one output")
}

/// Several outputs from one pass over the grid.
pub fn pointwise_map_many(
    inputs: &[&SpectralField],
    degree: usize,
    targets: &[Arc<ModeSet>],
    f: impl FnMut(&[Complex64], &mut [Complex64]),
) -> Vec<SpectralField> {
    let in_band = inputs.iter().map(|x| x.mode_set().bandwidth()).max().unwrap_or(0);
    pointwise_map_band(inputs, degree as i32 * in_band, targets, f)
}

/// Like [`pointwise_map_many`] with the largest frequency of the pointwise result given
/// explicitly as `band`.
pub fn pointwise_map_band(
    inputs: &[&SpectralField],
    band: i32,
    targets: &[Arc<ModeSet>],
    mut f: impl FnMut(&[Complex64], &mut [Complex64]),
) -> Vec<SpectralField> {
    let out_band = targets.iter().map(|t| t.bandwidth()).max().unwrap_or(0);
    let n = grid_size(band + out_band);
    with_grid(n, |g| {
        let vals: Vec<Vec<Complex64>> = inputs.iter().map(|x| g.synthesize(x)).collect();
        let mut outs = vec![vec![Complex64::default(); g.points()]; targets.len()];
        let mut args = vec![Complex64::default(); inputs.len()];
        let mut res = vec![Complex64::default(); targets.len()];
        for p in 0..g.points() {
            for (a, v) in args.iter_mut().zip(&vals) {
                *a = v[p];
            }
            f(&args, &mut res);
            for (o, r) in outs.iter_mut().zip(&res) {
                o[p] = *r;
            }
        }
        outs.iter_mut().zip(targets).map(|(o, t)| g.analyze(o, t)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_mode_set;

    #[test]
    fn synthesize_analyze_roundtrip() {
        let ms = make_mode_set(4.0).unwrap();
        let f = SpectralField::from_fn(&ms, |m| Complex64::new(m[0] as f64, 0.5 * m[1] as f64));
        with_grid(16, |g| {
            let mut v = g.synthesize(&f);
            let back = g.analyze(&mut v, &ms);
            assert!(back.max_abs_diff(&f) < 1e-13);
        });
    }

    #[test]
    fn pair_roundtrip() {
        let ms = make_mode_set(3.0).unwrap();
        let mut f = SpectralField::from_fn(&ms, |m| Complex64::new(1.0 + m[0] as f64, m[1] as f64));
        let mut h = SpectralField::from_fn(&ms, |m| Complex64::new((m[0] * m[1]) as f64, 0.3));
        f.symmetrize();
        h.symmetrize();
        with_grid(8, |g| {
            let mut buf = vec![Complex64::default(); 64];
            g.synthesize_pair(&f, &h, &mut buf);
            let (a, b) = g.analyze_pair(&mut buf, &ms);
            assert!(a.max_abs_diff(&f) < 1e-13);
            assert!(b.max_abs_diff(&h) < 1e-13);
        });
    }

    #[test]
    fn direct_evaluation_matches_grid() {
        let ms = make_mode_set(3.0).unwrap();
        let f = SpectralField::from_fn(&ms, |m| Complex64::new(0.1 * m[0] as f64, 0.2 * m[1] as f64));
        with_grid(8, |g| {
            let v = g.synthesize(&f);
            let z = [3.0 / 8.0, 5.0 / 8.0];
            assert!((v[3 * 8 + 5] - f.eval(z)).norm() < 1e-12);
        });
    }
}
