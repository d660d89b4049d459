use crate::error::{invalid, Error, Result};
use crate::spectral::SpectralField;

/// A time grid together with one field per grid time.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { times: Vec::new(), fields: Vec::new() }
    }

    pub fn push(&mut self, t: f64, f: SpectralField) {
        self.times.push(t);
        self.fields.push(f);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&SpectralField> {
        self.fields.last()
    }

    /// Index of a stored time, with tolerance `1e-9` relative to the grid spacing.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * self.times.last().copied().unwrap_or(1.0).abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::OffGrid(t))
    }

    pub fn at(&self, t: f64) -> Result<&SpectralField> {
        Ok(&self.fields[self.index_of(t)?])
    }

    pub fn check_same_grid(&self, other: &Trajectory) -> Result<()> {
        if self.times.len() != other.times.len()
            || self.times.iter().zip(&other.times).any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(invalid("trajectories do not share a time grid"));
        }
        Ok(())
    }

    /// Largest coefficient difference over all stored times.
    pub fn max_abs_diff(&self, other: &Trajectory) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max))
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}
