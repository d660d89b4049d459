use crate::error::{invalid, Result};
use crate::spectral::{ModeSet, SpectralField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Sin,
    Cos,
    Tanh,
}

impl Profile {
    pub fn value(self, s: f64) -> f64 {
        match self {
            Profile::Sin => s.sin(),
            Profile::Cos => s.cos(),
            Profile::Tanh => s.tanh(),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Profile::Sin => s.cos(),
            Profile::Cos => -s.sin(),
            Profile::Tanh => 1.0 - s.tanh().powi(2),
        }
    }

    /// Sup norm of the profile.
    pub fn sup(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Sin => "sin",
            Profile::Cos => "cos",
            Profile::Tanh => "tanh",
        }
    }
}

/// Bounded functional `Φ(x) = g(⟨x, φ⟩)`.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub profile: Profile,
    pub phi: SpectralField,
}

impl Observable {
    pub fn new(name: impl Into<String>, profile: Profile, phi: SpectralField) -> Self {
        Observable { name: name.into(), profile, phi }
    }

    /// `⟨x, φ⟩`.
    pub fn linear(&self, x: &SpectralField) -> f64 {
        self.phi.pairing(x)
    }

    pub fn value(&self, x: &SpectralField) -> f64 {
        self.profile.value(self.linear(x))
    }

    /// `DΦ(x) h = g′(⟨x, φ⟩) ⟨h, φ⟩`.
    pub fn derivative(&self, x: &SpectralField, h: &SpectralField) -> f64 {
        self.profile.derivative(self.linear(x)) * self.phi.pairing(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// The constant `e_0`.
    Mean,
    /// `e_{(1,0)} + e_{(-1,0)}`.
    CosPair,
    /// `Σ_{|m|<3} exp(-|m|²/4) e_m`.
    Bump,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::Mean, TestFunction::CosPair, TestFunction::Bump];

    pub fn field(self, modes: &Arc<ModeSet>) -> Result<SpectralField> {
        match self {
            TestFunction::Mean => Ok(SpectralField::constant(modes, 1.0)),
            TestFunction::CosPair => SpectralField::cosine(modes, [1, 0]),
            TestFunction::Bump => Ok(SpectralField::from_fn(modes, |m| {
                let r2 = (m[0] * m[0] + m[1] * m[1]) as f64;
                if r2 < 9.0 {
                    Complex64::new((-r2 / 4.0).exp(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Mean => "e0",
            TestFunction::CosPair => "cos10",
            TestFunction::Bump => "bump",
        }
    }
}

/// The nine observables `{sin, cos, tanh} × {e_0, cos pair, bump}`.
pub fn dictionary(modes: &Arc<ModeSet>) -> Result<Vec<Observable>> {
    if modes.cutoff() <= 1.0 {
        return Err(invalid("the observable dictionary needs cutoff > 1"));
    }
    let mut out = Vec::new();
    for tf in TestFunction::ALL {
        let phi = tf.field(modes)?;
        for g in [Profile::Sin, Profile::Cos, Profile::Tanh] {
            out.push(Observable::new(format!("{}_{}", g.name(), tf.name()), g, phi.clone()));
        }
    }
    Ok(out)
}

/// Every other entry of the dictionary.
pub fn half_dictionary(dict: &[Observable]) -> Vec<Observable> {
    dict.iter().step_by(2).cloned().collect()
}
