use super::{norm_sq, Mode};
use crate::error::{invalid, Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Positive symmetric kernel tabulated on the disc `{|m| ≤ window}`.
#[derive(Clone, Debug)]
pub struct Kernel {
    window: i32,
    table: Vec<f64>,
    decay_exponent: f64,
}

/// Which part of the lattice sum to keep in a convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConvRange {
    Full,
    /// `K₁ ⋆_{≤N} K₂`: only `|l| ≤ N`.
    AtMost(i32),
    /// `K₁ ⋆_{>N} K₂`: only `|l| > N`.
    Beyond(i32),
}

#[derive(Clone, Debug)]
pub struct KernelConvolution {
    pub kernel: Kernel,
    /// Continuum estimate of the part of the lattice sum lying outside the window.
    pub tail_estimate: f64,
}

impl Kernel {
    pub fn from_fn(window: i32, decay_exponent: f64, f: impl Fn(Mode) -> f64) -> Result<Self> {
        if window < 0 {
            return Err(invalid("negative kernel window"));
        }
        let side = (2 * window + 1) as usize;
        let mut table = vec![0.0; side * side];
        let w2 = (window as i64) * (window as i64);
        for a in -window..=window {
            for b in -window..=window {
                if norm_sq([a, b]) <= w2 {
                    let v = f([a, b]);
                    if !(v > 0.0) || v != f([-a, -b]) {
                        return Err(invalid("kernel must be positive and symmetric"));
                    }
                    table[(a + window) as usize * side + (b + window) as usize] = v;
                }
            }
        }
        Ok(Kernel { window, table, decay_exponent })
    }

    /// `K^γ(m) = (1 + |m|²)^{-(1-γ)}`, decay exponent `1 - γ`.
    pub fn power_law(gamma: f64, window: i32) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid("gamma must lie in [0, 1)"));
        }
        let a = 1.0 - gamma;
        Self::from_fn(window, a, |m| (1.0 + norm_sq(m) as f64).powf(-a))
    }

    pub fn window(&self) -> i32 {
        self.window
    }

    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }

    fn side(&self) -> usize {
        (2 * self.window + 1) as usize
    }

    pub fn in_window(&self, m: Mode) -> bool {
        norm_sq(m) <= (self.window as i64) * (self.window as i64)
    }

    pub fn get(&self, m: Mode) -> Result<f64> {
        if !self.in_window(m) {
            return Err(Error::KernelWindow { window: self.window, m0: m[0], m1: m[1] });
        }
        let w = self.window;
        Ok(self.table[(m[0] + w) as usize * self.side() + (m[1] + w) as usize])
    }
}

fn tail_estimate(window: i32, a: f64, b: f64) -> f64 {
    // Σ_{|l|>M} |l|^{-2(a+b)} ≈ 2π M^{2-2(a+b)} / (2(a+b) - 2)
    let s = 2.0 * (a + b);
    if s <= 2.0 {
        return f64::INFINITY;
    }
    2.0 * PI * (window.max(1) as f64).powf(2.0 - s) / (s - 2.0)
}

/// Lattice convolution `Σ_l K₁(m-l) K₂(l)` over the window, evaluated for every `|m| ≤ window`.
pub fn kernel_convolve(k1: &Kernel, k2: &Kernel, range: ConvRange) -> Result<KernelConvolution> {
    if k1.window != k2.window {
        return Err(invalid("kernel windows differ"));
    }
    let w = k1.window;
    let side = k1.side();
    let p = (2 * side).next_power_of_two();
    let keep = |l: Mode| match range {
        ConvRange::Full => true,
        ConvRange::AtMost(n) => norm_sq(l) <= (n as i64) * (n as i64),
        ConvRange::Beyond(n) => norm_sq(l) > (n as i64) * (n as i64),
    };
    let mut a = vec![Complex64::default(); p * p];
    let mut b = vec![Complex64::default(); p * p];
    let slot = |m: Mode| (m[0].rem_euclid(p as i32) as usize) * p + m[1].rem_euclid(p as i32) as usize;
    for x in -w..=w {
        for y in -w..=w {
            let m = [x, y];
            if !k1.in_window(m) {
                continue;
            }
            a[slot(m)] = Complex64::new(k1.get(m)?, 0.0);
            if keep(m) {
                b[slot(m)] = Complex64::new(k2.get(m)?, 0.0);
            }
        }
    }
    fft2(&mut a, p, false);
    fft2(&mut b, p, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft2(&mut a, p, true);
    let norm = 1.0 / (p * p) as f64;
    let decay = k1.decay_exponent + k2.decay_exponent - 1.0;
    let kernel = Kernel::from_fn(w, decay, |m| {
        let v = a[slot(m)].re * norm;
        let s = a[slot([-m[0], -m[1]])].re * norm;
        // symmetrize away rounding differences; clamp rounding noise of empty sums
        (0.5 * (v + s)).max(f64::MIN_POSITIVE)
    })?;
    Ok(KernelConvolution {
        kernel,
        tail_estimate: tail_estimate(w, k1.decay_exponent, k2.decay_exponent),
    })
}

/// `K ⋆ⁿ K` with `K ⋆¹ K = K` and `K ⋆ⁿ K = K ⋆ (K ⋆ⁿ⁻¹ K)`.
pub fn kernel_convolve_nested(k: &Kernel, n: usize, range: ConvRange) -> Result<KernelConvolution> {
    if n == 0 {
        return Err(invalid("nesting depth must be positive"));
    }
    let mut acc = KernelConvolution { kernel: k.clone(), tail_estimate: 0.0 };
    for _ in 1..n {
        let next = kernel_convolve(k, &acc.kernel, range)?;
        acc = KernelConvolution {
            tail_estimate: acc.tail_estimate + next.tail_estimate,
            kernel: next.kernel,
        };
    }
    Ok(acc)
}

fn fft2(buf: &mut [Complex64], p: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(p) } else { planner.plan_fft_forward(p) };
    plan.process(buf);
    let mut t = vec![Complex64::default(); p * p];
    for i in 0..p {
        for j in 0..p {
            t[j * p + i] = buf[i * p + j];
        }
    }
    plan.process(&mut t);
    for i in 0..p {
        for j in 0..p {
            buf[i * p + j] = t[j * p + i];
        }
    }
}

fn envelope(m: Mode, exponent: f64, log_case: bool) -> f64 {
    let r2 = norm_sq(m) as f64;
    if log_case {
        (0.5 * r2.ln()).max(1.0) / (1.0 + r2)
    } else {
        (1.0 + r2).powf(-exponent)
    }
}

/// Fitted constant `max_m conv(m) / envelope(m)` for the envelope `(1+|m|²)^{-(α+β-1)}`,
/// or `(log|m| ∨ 1)/(1+|m|²)` when `α = β = 1`.
pub fn verify_kernel_bound(conv: &Kernel, alpha: f64, beta: f64, sample_modes: &[Mode]) -> Result<f64> {
    let e = alpha + beta - 1.0;
    if !(e > 0.0) || alpha > 1.0 || beta > 1.0 {
        return Err(invalid("kernel bound needs α, β ∈ (0,1] with α+β-1 > 0"));
    }
    let log_case = alpha == 1.0 && beta == 1.0;
    let mut c: f64 = 0.0;
    for &m in sample_modes {
        c = c.max(conv.get(m)? / envelope(m, e, log_case));
    }
    Ok(c)
}

/// Fitted constant for the tail convolution `K₁ ⋆_{>N} K₂` at modes `|m| < N`,
/// measured against `(1+N²)^{-(α+β-1)}` (log variant when `α = β = 1`).
pub fn verify_tail_bound(
    conv_beyond: &Kernel,
    alpha: f64,
    beta: f64,
    n: i32,
    sample_modes: &[Mode],
) -> Result<f64> {
    let e = alpha + beta - 1.0;
    if !(e > 0.0) {
        return Err(invalid("kernel bound needs α+β-1 > 0"));
    }
    let log_case = alpha == 1.0 && beta == 1.0;
    let env = envelope([n, 0], e, log_case);
    let mut c: f64 = 0.0;
    for &m in sample_modes.iter().filter(|m| norm_sq(**m) < (n as i64) * (n as i64)) {
        c = c.max(conv_beyond.get(m)? / env);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(k1: &Kernel, k2: &Kernel, m: Mode, range: ConvRange) -> f64 {
        let w = k1.window();
        let mut s = 0.0;
        for a in -w..=w {
            for b in -w..=w {
                let l = [a, b];
                let d = [m[0] - a, m[1] - b];
                if !k2.in_window(l) || !k1.in_window(d) {
                    continue;
                }
                let keep = match range {
                    ConvRange::Full => true,
                    ConvRange::AtMost(n) => norm_sq(l) <= (n * n) as i64,
                    ConvRange::Beyond(n) => norm_sq(l) > (n * n) as i64,
                };
                if keep {
                    s += k1.get(d).unwrap() * k2.get(l).unwrap();
                }
            }
        }
        s
    }

    #[test]
    fn zero_mode_matches_double_sum() {
        let k = Kernel::power_law(0.0, 64).unwrap();
        let c = kernel_convolve(&k, &k, ConvRange::Full).unwrap();
        let direct = brute(&k, &k, [0, 0], ConvRange::Full);
        assert!((c.kernel.get([0, 0]).unwrap() - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn split_ranges_add_up() {
        let k = Kernel::power_law(0.2, 16).unwrap();
        let full = kernel_convolve(&k, &k, ConvRange::Full).unwrap().kernel;
        let lo = kernel_convolve(&k, &k, ConvRange::AtMost(5)).unwrap().kernel;
        let hi = kernel_convolve(&k, &k, ConvRange::Beyond(5)).unwrap().kernel;
        for m in [[0, 0], [3, 1], [-7, 2], [10, -10]] {
            let f = full.get(m).unwrap();
            assert!((f - lo.get(m).unwrap() - hi.get(m).unwrap()).abs() < 1e-12);
            assert!((hi.get(m).unwrap() - brute(&k, &k, m, ConvRange::Beyond(5))).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_window_is_an_error() {
        let k = Kernel::power_law(0.0, 4).unwrap();
        assert!(matches!(k.get([5, 0]), Err(Error::KernelWindow { .. })));
    }

    #[test]
    fn exponent_condition_enforced() {
        let k = Kernel::power_law(0.6, 8).unwrap();
        assert!(verify_kernel_bound(&k, 0.4, 0.4, &[[1, 0]]).is_err());
    }
}
