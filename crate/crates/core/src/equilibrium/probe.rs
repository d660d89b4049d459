use crate::besov::{DyadicPartition, NormPlan};
use crate::error::{invalid, Result};
use crate::noise::{hermite, hermite_fields, ou_step, renorm_constant, sample_stationary_ou, step_key, NoiseKey};
use crate::report::{ExperimentReport, Metric, Table};
use crate::spectral::{make_mode_set, ModeSet, SpectralField};
use crate::stats::median;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

const Z0: [i32; 2] = [1, 1];

/// Shift sequence `w_m = -⟨1⟩^m - h_m` steering the diagram vector towards `(ℋ_k(0, ℜ))_k`.
#[derive(Clone, Debug)]
pub struct ProbeSequence {
    /// Fraction of `2^m` kept in the low-frequency part.
    pub lambda: f64,
    pub renorm: f64,
}

impl ProbeSequence {
    pub fn new(lambda: f64, renorm: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 0.25) {
            return Err(invalid("lambda must lie in (0, 1/4]"));
        }
        if !(renorm >= 0.0 && renorm.is_finite()) {
            return Err(invalid("target renormalization must be nonnegative"));
        }
        Ok(ProbeSequence { lambda, renorm })
    }

    pub fn coarse_cutoff(&self, m: u32) -> f64 {
        self.lambda * 2f64.powi(m as i32)
    }

    pub fn fine_cutoff(&self, m: u32) -> f64 {
        2.0 * self.coarse_cutoff(m)
    }

    /// `ℜ^m`, the variance of the low-frequency part.
    pub fn level_renorm(&self, m: u32) -> Result<f64> {
        Ok(renorm_constant(&*make_mode_set(self.coarse_cutoff(m))?))
    }

    /// `C_m = ℜ^m - ℜ`, zero before the first level exceeding `ℜ`.
    pub fn amplitude(&self, m: u32) -> Result<f64> {
        Ok((self.level_renorm(m)? - self.renorm).max(0.0))
    }

    /// First `m` with `ℜ^m > ℜ`.
    pub fn first_level(&self) -> Result<u32> {
        for m in 2..40 {
            if self.coarse_cutoff(m) >= 1.0 && self.level_renorm(m)? > self.renorm {
                return Ok(m);
            }
        }
        Err(invalid("no level exceeds the target renormalization"))
    }

    pub fn frequency(m: u32) -> [i32; 2] {
        [Z0[0] << m, Z0[1] << m]
    }

    pub fn decay_rate(m: u32) -> f64 {
        let k = Self::frequency(m);
        1.0 + 4.0 * PI * PI * ((k[0] * k[0] + k[1] * k[1]) as f64)
    }

    /// Mode set holding both the fine noise and `±2^m z₀`.
    pub fn carrier(m: u32) -> Result<Arc<ModeSet>> {
        let k = Self::frequency(m);
        make_mode_set(((k[0] * k[0] + k[1] * k[1]) as f64).sqrt() + 0.5)
    }

    /// `f_m = √C_m (e_{2^m z₀} + e_{-2^m z₀}) / √2`.
    pub fn profile(&self, m: u32, modes: &Arc<ModeSet>) -> Result<SpectralField> {
        let c = self.amplitude(m)?;
        Ok(SpectralField::cosine(modes, Self::frequency(m))?.scaled((c / 2.0).sqrt()))
    }

    /// `h_m(t) = (1 - e^{-λ_m (t+1)}) f_m`.
    pub fn shift(&self, m: u32, t: f64, modes: &Arc<ModeSet>) -> Result<SpectralField> {
        Ok(self.profile(m, modes)?.scaled(-(-Self::decay_rate(m) * (t + 1.0)).exp_m1()))
    }

    /// Smallest distance between the dyadic levels touched by the low-frequency part and by `h_m`.
    pub fn resonance_gap(&self, m: u32) -> Result<i32> {
        let carrier = Self::carrier(m)?;
        let part = DyadicPartition::covering(&carrier);
        let coarse = make_mode_set(self.coarse_cutoff(m))?;
        let touched = |modes: &[[i32; 2]]| -> Vec<i32> {
            part.levels().filter(|&k| modes.iter().any(|&mm| part.weight(k, mm) > 0.0)).collect()
        };
        let low = touched(coarse.modes());
        let k = Self::frequency(m);
        let high = touched(&[k]);
        Ok(low.iter().flat_map(|a| high.iter().map(move |b| (a - b).abs())).min().unwrap_or(i32::MAX))
    }
}

struct LevelPlan {
    fine: Arc<ModeSet>,
    coarse: Arc<ModeSet>,
    carrier: Arc<ModeSet>,
    plans: Vec<NormPlan>,
    fine_renorm: f64,
}

impl LevelPlan {
    fn new(seq: &ProbeSequence, m: u32) -> Result<Self> {
        let carrier = ProbeSequence::carrier(m)?;
        let fine = make_mode_set(seq.fine_cutoff(m))?;
        let plans = (1..=3).map(|k| NormPlan::covering(&carrier.power_set(k))).collect();
        Ok(LevelPlan {
            fine_renorm: renorm_constant(&fine),
            fine,
            coarse: make_mode_set(seq.coarse_cutoff(m))?,
            carrier,
            plans,
        })
    }
}

/// `sup_t ‖T_w⟨k⟩_t - ℋ_k(0, ℜ)‖_{C^{-α}}` for `k = 1, 2, 3` on one noise sample.
fn residuals(seq: &ProbeSequence, m: u32, lp: &LevelPlan, times: &[f64], alpha: f64, key: NoiseKey) -> Result<[f64; 3]> {
    let mut ou = sample_stationary_ou(&lp.fine, key);
    let mut now = 0.0;
    let mut out = [0.0f64; 3];
    for (j, &t) in times.iter().enumerate() {
        if t > now {
            ou = ou_step(&ou, t - now, step_key(key, j))?;
            now = t;
        }
        let low = ou.field.project_onto(&lp.coarse).project_onto(&lp.fine);
        let high = ou.field.sub(&low)?.project_onto(&lp.carrier);
        let mut x = high;
        x.axpy(-1.0, &seq.shift(m, t, &lp.carrier)?)?;
        let diagrams = hermite_fields(3, &x, lp.fine_renorm);
        for (k, (d, plan)) in diagrams.into_iter().zip(&lp.plans).enumerate() {
            let mut d = d;
            let z = d.mode_set().zero_index();
            d.coeffs_mut()[z] -= hermite(k + 1, 0.0, seq.renorm);
            out[k] = out[k].max(plan.holder_norm(&d, -alpha));
        }
    }
    Ok(out)
}

/// Per-replica residual triples at level `m`.
pub fn probe_residuals(seq: &ProbeSequence, m: u32, cfg: &ProbeConfig) -> Result<Vec<[f64; 3]>> {
    if seq.resonance_gap(m)? < 2 {
        return Err(invalid(format!("resonant blocks overlap at level {m}; decrease lambda")));
    }
    let lp = LevelPlan::new(seq, m)?;
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| residuals(seq, m, &lp, &cfg.times, cfg.alpha, NoiseKey::new(cfg.seed, r as u64).in_stream(m as u64)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub levels: Vec<u32>,
    pub renorms: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            levels: vec![3, 4, 5],
            renorms: vec![0.0, 0.25],
            lambda: 0.25,
            alpha: 0.5,
            times: vec![0.0, 0.5, 1.0],
            replicas: 16,
            seed: 0,
        }
    }
}

/// Median residuals along the levels for each target renormalization.
pub fn support_probe(cfg: &ProbeConfig) -> Result<ExperimentReport> {
    if cfg.levels.len() < 2 || cfg.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("probe levels must be increasing with at least two entries"));
    }
    if cfg.replicas == 0 {
        return Err(invalid("replicas must be positive"));
    }
    let mut report = ExperimentReport::new("support-probe");
    report.seed = cfg.seed;
    for &r in &cfg.renorms {
        let seq = ProbeSequence::new(cfg.lambda, r)?;
        let m0 = seq.first_level()?;
        report.push(Metric::info(format!("first_level_R{r}"), m0 as f64));
        let mut table = Table::new(format!("probe_R{r}"), &["m", "res1", "res2", "res3"]);
        let mut meds = Vec::new();
        let mut amps = Vec::new();
        for &m in &cfg.levels {
            let res = probe_residuals(&seq, m, cfg)?;
            let med: Vec<f64> = (0..3).map(|k| median(&res.iter().map(|t| t[k]).collect::<Vec<_>>())).collect();
            table.push([m.to_string(), format!("{:.8e}", med[0]), format!("{:.8e}", med[1]), format!("{:.8e}", med[2])]);
            amps.push(seq.amplitude(m)?);
            meds.push(med);
        }
        for k in 0..3 {
            let dec = meds.windows(2).all(|w| w[1][k] < w[0][k]);
            let last = meds.last().expect("levels")[k];
            report.push(
                Metric::check(format!("decreasing_R{r}_res{}", k + 1), last, "medians decrease along m", dec)
                    .with_anchor("support of the diagram law"),
            );
        }
        let growth = amps.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        report.push(Metric::info(format!("amplitude_growth_R{r}"), growth));
        report.tables.push(table);
    }
    report.note(format!(
        "lambda = {}, alpha = {}, times {:?}, {} replicas, z0 = {:?}",
        cfg.lambda, cfg.alpha, cfg.times, cfg.replicas, Z0
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_and_amplitudes() {
        let s = ProbeSequence::new(0.25, 0.0).unwrap();
        assert_eq!(s.first_level().unwrap(), 2);
        let a: Vec<f64> = (3..7).map(|m| s.amplitude(m).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.windows(2).all(|w| w[1] <= 2.0 * w[0]));
        let big = ProbeSequence::new(0.25, 10.0).unwrap();
        assert_eq!(big.amplitude(3).unwrap(), 0.0);
        assert!(ProbeSequence::new(0.5, 0.0).is_err());
    }

    #[test]
    fn no_resonance() {
        let s = ProbeSequence::new(0.25, 0.1).unwrap();
        for m in 3..7 {
            assert!(s.resonance_gap(m).unwrap() >= 2, "m = {m}");
        }
    }

    #[test]
    fn profile_decays_in_negative_holder() {
        let s = ProbeSequence::new(0.25, 0.0).unwrap();
        let mut ratios = Vec::new();
        for m in 3..6 {
            let ms = ProbeSequence::carrier(m).unwrap();
            let f = s.profile(m, &ms).unwrap();
            let c = s.amplitude(m).unwrap();
            let n = NormPlan::covering(&ms).holder_norm(&f, -0.5);
            ratios.push(n / (c.sqrt() * 2f64.powf(-0.5 * m as f64)));
            let f2 = hermite_fields(2, &f, c).pop().unwrap();
            assert!(f2.mean().abs() < 1e-12);
        }
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 2.0, "{ratios:?}");
    }

    #[test]
    fn small_probe_runs() {
        let cfg = ProbeConfig { levels: vec![3, 4], renorms: vec![0.0], replicas: 4, ..Default::default() };
        let r = support_probe(&cfg).unwrap();
        assert_eq!(r.tables[0].rows.len(), 2);
    }
}
