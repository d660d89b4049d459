//! Littlewood-Paley blocks, Besov norms and Bony's paraproduct decomposition.

mod suite;

pub use suite::{inequality_suite, lp_norm, suite_cases, SuiteCase};

use crate::error::{invalid, Error, Result};
use crate::spectral::{grid_size, norm_sq, with_grid, Mode, ModeSet, SpectralField};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use std::sync::Arc;

const R_INNER: f64 = 0.75;
const R_OUTER: f64 = 4.0 / 3.0;

/// Seventh-order smoothstep: `0` at `x ≤ 0`, `1` at `x ≥ 1`, three vanishing derivatives at both ends.
pub fn smoothstep7(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x.powi(4) * (35.0 + x * (-84.0 + x * (70.0 - 20.0 * x)))
    }
}

pub fn smoothstep7_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        140.0 * x.powi(3) * (1.0 - x).powi(3)
    }
}

/// Radial profile equal to 1 on `B(0, 3/4)` and 0 outside `B(0, 4/3)`.
fn low_profile(r: f64) -> f64 {
    1.0 - smoothstep7((r - R_INNER) / (R_OUTER - R_INNER))
}

/// Dyadic partition of unity `χ_{-1}, χ_0, …, χ_{κ_max}` on the lattice.
///
/// `χ_{-1} = ψ` and `χ_κ = ψ(·/2^{κ+1}) - ψ(·/2^κ)`, so `supp χ_{-1} ⊆ B(0, 4/3)`,
/// `supp χ_κ ⊆ 2^κ (B(0, 8/3) ∖ B(0, 3/4))`, and the blocks telescope to one.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    max_level: i32,
}

pub fn build_dyadic_partition(max_level: i32) -> Result<DyadicPartition> {
    if max_level < 0 {
        return Err(invalid("max_level must be nonnegative"));
    }
    Ok(DyadicPartition { max_level })
}

impl DyadicPartition {
    /// Smallest partition whose covered ball contains every mode of `modes`.
    pub fn covering(modes: &ModeSet) -> Self {
        let mut k = 0;
        while Self::radius_for(k) < modes.cutoff() {
            k += 1;
        }
        DyadicPartition { max_level: k }
    }

    fn radius_for(max_level: i32) -> f64 {
        R_INNER * 2f64.powi(max_level + 1)
    }

    pub fn max_level(&self) -> i32 {
        self.max_level
    }

    /// Radius of the ball on which the blocks sum to one.
    pub fn covered_radius(&self) -> f64 {
        Self::radius_for(self.max_level)
    }

    pub fn covers(&self, m: Mode) -> bool {
        (norm_sq(m) as f64).sqrt() <= self.covered_radius()
    }

    fn raw(&self, kappa: i32, r: f64) -> f64 {
        if kappa == -1 {
            low_profile(r)
        } else {
            low_profile(r / 2f64.powi(kappa + 1)) - low_profile(r / 2f64.powi(kappa))
        }
    }

    /// `χ_κ(m)`, normalized so that the blocks sum to one on the covered ball.
    pub fn weight(&self, kappa: i32, m: Mode) -> f64 {
        if kappa < -1 || kappa > self.max_level {
            return 0.0;
        }
        let r = (norm_sq(m) as f64).sqrt();
        let w = self.raw(kappa, r);
        if w == 0.0 {
            return 0.0;
        }
        let total: f64 = (-1..=self.max_level).map(|k| self.raw(k, r)).sum();
        if total > 0.0 {
            w / total
        } else {
            0.0
        }
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.max_level
    }

    fn check_covers(&self, modes: &ModeSet) -> Result<()> {
        for &m in modes.modes() {
            if !self.covers(m) {
                return Err(Error::Uncovered(m[0], m[1]));
            }
        }
        Ok(())
    }
}

/// `δ_κ f`: coefficient `m` multiplied by `χ_κ(m)`.
pub fn lp_block(f: &SpectralField, kappa: i32, part: &DyadicPartition) -> Result<SpectralField> {
    if kappa < -1 || kappa > part.max_level {
        return Err(invalid(format!("block index {kappa} outside [-1, {}]", part.max_level)));
    }
    part.check_covers(f.mode_set())?;
    let mut out = f.clone();
    for (c, &m) in out.coeffs_mut().iter_mut().zip(f.mode_set().modes()) {
        *c *= part.weight(kappa, m);
    }
    Ok(out)
}

/// Regularity and integrability exponents of `B^α_{p,q}`; `p, q` may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovIndex {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovIndex {
    pub fn new(alpha: f64, p: f64, q: f64) -> Result<Self> {
        if !(p >= 1.0) || !(q >= 1.0) || !alpha.is_finite() {
            return Err(invalid("Besov exponents need p, q ∈ [1, ∞] and finite α"));
        }
        Ok(BesovIndex { alpha, p, q })
    }

    /// The Hölder-Besov space `C^α = B^α_{∞,∞}`.
    pub fn holder(alpha: f64) -> Self {
        BesovIndex { alpha, p: f64::INFINITY, q: f64::INFINITY }
    }
}

/// `L^p` norm of grid values by uniform quadrature (sup for `p = ∞`).
pub fn lp_of_values(vals: &[Complex64], p: f64) -> f64 {
    lp_of(vals.iter().map(|v| v.norm_sqr()), vals.len(), p)
}

/// `L^p` norm from squared moduli.
fn lp_of(sq: impl Iterator<Item = f64>, len: usize, p: f64) -> f64 {
    if p.is_infinite() {
        sq.fold(0.0, f64::max).sqrt()
    } else if p == 2.0 {
        (sq.sum::<f64>() / len as f64).sqrt()
    } else {
        (sq.map(|s| s.powf(p / 2.0)).sum::<f64>() / len as f64).powf(1.0 / p)
    }
}

fn lq_combine(terms: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Precomputed block weights of one mode set, for repeated norm evaluations.
#[derive(Clone, Debug)]
pub struct NormPlan {
    modes: Arc<ModeSet>,
    blocks: Vec<(i32, Vec<(usize, f64)>)>,
    grid: usize,
}

impl NormPlan {
    pub fn new(modes: &Arc<ModeSet>, part: &DyadicPartition) -> Result<Self> {
        part.check_covers(modes)?;
        let mut blocks = Vec::new();
        for k in part.levels() {
            let entries: Vec<(usize, f64)> = modes
                .modes()
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| {
                    let w = part.weight(k, m);
                    (w != 0.0).then_some((i, w))
                })
                .collect();
            if !entries.is_empty() {
                blocks.push((k, entries));
            }
        }
        Ok(NormPlan { modes: modes.clone(), blocks, grid: grid_size(4 * modes.bandwidth()) })
    }

    /// Plan for a mode set with the partition that just covers it.
    pub fn covering(modes: &Arc<ModeSet>) -> Self {
        Self::new(modes, &DyadicPartition::covering(modes)).expect("covering partition")
    }

    pub fn mode_set(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    /// `‖δ_κ f‖_{L^p}` for each nonempty block.
    pub fn block_norms(&self, f: &SpectralField, p: f64) -> Vec<(i32, f64)> {
        let f = f.project_onto(&self.modes);
        let fill = |block: &mut SpectralField, entries: &[(usize, f64)]| {
            block.coeffs_mut().iter_mut().for_each(|c| *c = Complex64::default());
            for &(i, w) in entries {
                block.coeffs_mut()[i] = f.coeffs()[i] * w;
            }
        };
        with_grid(self.grid, |g| {
            let mut a = SpectralField::zeros(&self.modes);
            let mut b = SpectralField::zeros(&self.modes);
            let mut buf = vec![Complex64::default(); g.points()];
            let len = buf.len();
            if !f.is_hermitian(1e-12 * f.max_abs().max(1.0)) {
                return self
                    .blocks
                    .iter()
                    .map(|(k, entries)| {
                        fill(&mut a, entries);
                        g.synthesize_into(&a, &mut buf);
                        (*k, lp_of_values(&buf, p))
                    })
                    .collect();
            }
            // real blocks two at a time as re + i·im
            let mut out = Vec::with_capacity(self.blocks.len());
            for pair in self.blocks.chunks(2) {
                fill(&mut a, &pair[0].1);
                match pair.get(1) {
                    Some((k2, e2)) => {
                        fill(&mut b, e2);
                        g.synthesize_pair(&a, &b, &mut buf);
                        out.push((pair[0].0, lp_of(buf.iter().map(|v| v.re * v.re), len, p)));
                        out.push((*k2, lp_of(buf.iter().map(|v| v.im * v.im), len, p)));
                    }
                    None => {
                        g.synthesize_into(&a, &mut buf);
                        out.push((pair[0].0, lp_of(buf.iter().map(|v| v.re * v.re), len, p)));
                    }
                }
            }
            out
        })
    }

    pub fn norm(&self, f: &SpectralField, idx: BesovIndex) -> f64 {
        let bn = self.block_norms(f, idx.p);
        lq_combine(bn.iter().map(|&(k, n)| 2f64.powf(idx.alpha * k as f64) * n), idx.q)
    }

    /// `‖f‖_{C^α}`.
    pub fn holder_norm(&self, f: &SpectralField, alpha: f64) -> f64 {
        self.norm(f, BesovIndex::holder(alpha))
    }
}

/// `‖(2^{ακ}‖δ_κ f‖_{L^p})_κ‖_{ℓ^q}`.
pub fn besov_norm(f: &SpectralField, idx: BesovIndex, part: &DyadicPartition) -> Result<f64> {
    Ok(NormPlan::new(f.mode_set(), part)?.norm(f, idx))
}

/// Exponents of the weighted norm `max_k sup_t t^{(k-1)α'} ‖Z^{(k)}_t‖_{C^{-α}}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedNormSpec {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub horizon: f64,
}

impl WeightedNormSpec {
    pub fn new(alpha: f64, alpha_prime: f64, horizon: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(alpha_prime > 0.0) || !(horizon > 0.0) {
            return Err(invalid("weighted norm exponents and horizon must be positive"));
        }
        Ok(WeightedNormSpec { alpha, alpha_prime, horizon })
    }

    /// `α' < α` is the recommended regime.
    pub fn is_recommended(&self) -> bool {
        self.alpha_prime < self.alpha
    }

    pub fn weight(&self, k: usize, t: f64) -> f64 {
        if k <= 1 {
            1.0
        } else {
            t.max(0.0).powf((k - 1) as f64 * self.alpha_prime)
        }
    }
}

/// `|||Z|||_{α;α';T}` over trajectories `Z^{(1)}, …, Z^{(n)}` on a shared grid.
pub fn weighted_diagram_norm(
    z: &[Trajectory],
    spec: &WeightedNormSpec,
    part: &DyadicPartition,
) -> Result<f64> {
    let first = z.first().ok_or_else(|| invalid("empty diagram list"))?;
    if first.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    let mut best: f64 = 0.0;
    for (k, traj) in z.iter().enumerate() {
        traj.check_same_grid(first)?;
        let Some(f0) = traj.fields.first() else { continue };
        let plan = NormPlan::new(f0.mode_set(), part)?;
        for (&t, f) in traj.times.iter().zip(&traj.fields) {
            if t > spec.horizon + 1e-12 || t < 0.0 {
                return Err(invalid("trajectory time outside [0, T]"));
            }
            best = best.max(spec.weight(k + 1, t) * plan.holder_norm(f, -spec.alpha));
        }
    }
    Ok(best)
}

/// The three Bony pieces `(f ≺ g, f ∘ g, f ≻ g)`, exact on the product mode set.
pub fn bony_decompose(
    f: &SpectralField,
    g: &SpectralField,
    part: &DyadicPartition,
) -> Result<(SpectralField, SpectralField, SpectralField)> {
    part.check_covers(f.mode_set())?;
    part.check_covers(g.mode_set())?;
    let target = crate::spectral::make_mode_set(f.mode_set().cutoff() + g.mode_set().cutoff())?;
    let bf = f.mode_set().bandwidth();
    let bg = g.mode_set().bandwidth();
    let n = grid_size(bf + bg + target.bandwidth());
    let levels: Vec<i32> = part.levels().collect();
    Ok(with_grid(n, |grid| {
        let mut blocks = |h: &SpectralField| -> Vec<Vec<Complex64>> {
            levels
                .iter()
                .map(|&k| grid.synthesize(&lp_block(h, k, part).expect("covered")))
                .collect()
        };
        let fb = blocks(f);
        let gb = blocks(g);
        let pts = grid.points();
        let mut para = vec![Complex64::default(); pts];
        let mut reso = vec![Complex64::default(); pts];
        let mut arap = vec![Complex64::default(); pts];
        for (a, &i) in levels.iter().enumerate() {
            for (b, &k) in levels.iter().enumerate() {
                let dst = if i < k - 1 {
                    &mut para
                } else if (i - k).abs() <= 1 {
                    &mut reso
                } else {
                    &mut arap
                };
                for p in 0..pts {
                    dst[p] += fb[a][p] * gb[b][p];
                }
            }
        }
        (
            grid.analyze(&mut para, &target),
            grid.analyze(&mut reso, &target),
            grid.analyze(&mut arap, &target),
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dealiased_product, make_mode_set};

    fn random_field(cutoff: f64, seed: u64) -> SpectralField {
        use rand::SeedableRng;
        let ms = make_mode_set(cutoff).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        crate::spectral::gaussian_field(&ms, |_| 1.0, &mut rng)
    }

    #[test]
    fn partition_examples() {
        let part = build_dyadic_partition(5).unwrap();
        assert_eq!(part.weight(-1, [0, 0]), 1.0);
        let s: f64 = part.levels().map(|k| part.weight(k, [3, 0])).sum();
        assert!((s - 1.0).abs() < 1e-12);
        for k in 0..=5 {
            for a in -40..=40 {
                for b in -40..=40 {
                    let r = ((a * a + b * b) as f64).sqrt();
                    let lo = 0.75 * 2f64.powi(k);
                    let hi = 8.0 / 3.0 * 2f64.powi(k);
                    if r < lo || r > hi {
                        assert_eq!(part.weight(k, [a, b]), 0.0);
                    }
                    let w = part.weight(k, [a, b]);
                    assert!((0.0..=1.0).contains(&w));
                }
            }
        }
        for a in -31..=31 {
            for b in -31..=31 {
                if a * a + b * b < 32 * 32 {
                    let s: f64 = part.levels().map(|k| part.weight(k, [a, b])).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn block_examples() {
        let ms = make_mode_set(16.0).unwrap();
        let part = DyadicPartition::covering(&ms);
        let one = SpectralField::constant(&ms, 1.0);
        assert!(lp_block(&one, -1, &part).unwrap().max_abs_diff(&one) < 1e-15);
        assert_eq!(lp_block(&one, 3, &part).unwrap().max_abs(), 0.0);
        let f = random_field(16.0, 3);
        let mut acc = SpectralField::zeros(&ms);
        for k in part.levels() {
            acc.axpy(1.0, &lp_block(&f, k, &part).unwrap()).unwrap();
        }
        assert!(acc.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn constant_norm() {
        let ms = make_mode_set(8.0).unwrap();
        let part = DyadicPartition::covering(&ms);
        for alpha in [-0.3, 0.0, 0.7] {
            let n = besov_norm(&SpectralField::constant(&ms, 1.0), BesovIndex::holder(alpha), &part).unwrap();
            assert!((n - 2f64.powf(-alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn bony_low_high() {
        let ms = make_mode_set(16.0).unwrap();
        let part = DyadicPartition::covering(&ms);
        let f = SpectralField::basis(&ms, [1, 0]).unwrap();
        let g = SpectralField::basis(&ms, [8, 0]).unwrap();
        let (para, reso, arap) = bony_decompose(&f, &g, &part).unwrap();
        assert!(reso.max_abs() < 1e-13 && arap.max_abs() < 1e-13);
        assert!((para.coeff([9, 0]) - Complex64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn bony_parts_sum_to_product() {
        let ms = make_mode_set(6.0).unwrap();
        let part = DyadicPartition::covering(&ms);
        let f = random_field(6.0, 1);
        let g = random_field(6.0, 2);
        let (a, b, c) = bony_decompose(&f, &g, &part).unwrap();
        let sum = a.add(&b).unwrap().add(&c).unwrap();
        let big = make_mode_set(12.0).unwrap();
        let prod = dealiased_product(&[&f.project_onto(&big), &g.project_onto(&big)], 1.5).unwrap();
        assert!(sum.max_abs_diff(&prod) < 1e-10);
    }

    #[test]
    fn weighted_norm_examples() {
        let ms = make_mode_set(4.0).unwrap();
        let part = DyadicPartition::covering(&ms);
        let spec = WeightedNormSpec::new(0.05, 0.05, 1.0).unwrap();
        let mut z1 = Trajectory::new();
        let mut z2 = Trajectory::new();
        for i in 0..=4 {
            let t = i as f64 * 0.25;
            z1.push(t, SpectralField::constant(&ms, 2.0));
            z2.push(t, SpectralField::zeros(&ms));
        }
        let n = weighted_diagram_norm(&[z1.clone(), z2.clone()], &spec, &part).unwrap();
        assert!((n - 2.0 * 2f64.powf(0.05)).abs() < 1e-12);
        let zero = weighted_diagram_norm(&[z2.clone(), z2.clone()], &spec, &part).unwrap();
        assert_eq!(zero, 0.0);
        assert!(weighted_diagram_norm(&[], &spec, &part).is_err());
    }
}
