//! Step-wise continuation of the penalization and projection parameters.

use serde::{Deserialize, Serialize};

use crate::error::{NumericalError, Result};

/// Parameter columns applied in consecutive steps of `step_length`
/// iterations. Each column holds its last value once exhausted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub step_length: usize,
    pub penal: Vec<f64>,
    pub mu: Vec<f64>,
    pub beta_hs: Vec<f64>,
    /// Band half-width per step; empty keeps the configured value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_fil: Vec<f64>,
}

/// Parameters active at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub penal: f64,
    pub mu: f64,
    pub beta_hs: f64,
    pub beta_fil: Option<f64>,
}

fn pick(column: &[f64], step: usize) -> f64 {
    column[step.min(column.len() - 1)]
}

impl Schedule {
    pub fn at(&self, iteration: usize) -> StepParams {
        let step = iteration / self.step_length;
        StepParams {
            penal: pick(&self.penal, step),
            mu: pick(&self.mu, step),
            beta_hs: pick(&self.beta_hs, step),
            beta_fil: (!self.beta_fil.is_empty()).then(|| pick(&self.beta_fil, step)),
        }
    }

    /// Whether `iteration` is the first iteration of a new step.
    pub fn is_step_start(&self, iteration: usize) -> bool {
        iteration > 0 && iteration % self.step_length == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_length == 0 {
            return Err(NumericalError::InvalidModel("continuation step length must be positive".into()));
        }
        for (name, col) in [("penal", &self.penal), ("mu", &self.mu), ("beta_hs", &self.beta_hs)] {
            if col.is_empty() {
                return Err(NumericalError::InvalidModel(format!("continuation column {name} is empty")));
            }
            if col.windows(2).any(|w| w[1] < w[0]) {
                return Err(NumericalError::InvalidModel(format!(
                    "continuation column {name} must be non-decreasing"
                )));
            }
        }
        if self.penal.iter().any(|&p| p < 1.0) {
            return Err(NumericalError::InvalidModel("penalization exponents must be >= 1".into()));
        }
        if self.mu.iter().any(|&m| m < 1.0) {
            return Err(NumericalError::InvalidModel("band sharpness must be >= 1".into()));
        }
        if self.beta_hs.iter().chain(&self.beta_fil).any(|&b| !(b > 0.0)) {
            return Err(NumericalError::InvalidModel("projection sharpness and band width must be positive".into()));
        }
        Ok(())
    }

    fn with(penal: &[f64], mu: &[f64], beta_hs: &[f64]) -> Self {
        Self {
            step_length: 50,
            penal: penal.to_vec(),
            mu: mu.to_vec(),
            beta_hs: beta_hs.to_vec(),
            beta_fil: Vec::new(),
        }
    }

    /// Plain robust runs without profiles.
    pub fn reference() -> Self {
        Self::with(&[1.0], &[1.0, 1.41, 2.0, 2.83, 4.0, 5.0], &BETA_STANDARD)
    }

    /// Local volume and local modulus examples.
    pub fn local_volume() -> Self {
        Self::with(&PENAL_STANDARD, &[1.25, 1.77, 2.5, 3.54, 5.0], &BETA_STANDARD)
    }

    /// Localized maximum length scale examples; the band narrows from 10 to
    /// 5 after the first step.
    pub fn local_max_length() -> Self {
        let mut s = Self::with(
            &PENAL_STANDARD,
            &[1.5, 2.12, 3.0, 4.24, 5.0],
            &[2.0, 2.93, 4.29, 6.28, 9.19, 13.45, 19.70, 28.84, 32.0],
        );
        s.beta_fil = vec![10.0, 5.0];
        s
    }

    /// Variable minimum length scale.
    pub fn variable_min_length() -> Self {
        Self::with(
            &PENAL_STANDARD,
            &[1.25, 1.77, 2.5, 3.54, 5.0],
            &[1.5, 2.52, 4.24, 7.14, 12.0, 20.18, 33.94, 57.08, 96.0, 100.0],
        )
    }

    /// Variable maximum length scale examples.
    pub fn variable_max_length() -> Self {
        Self::with(
            &[1.25, 1.5, 2.0, 2.5, 3.0],
            &[1.25, 1.77, 2.5, 3.54, 5.0],
            &[1.0, 1.41, 2.0, 2.83, 4.0, 5.66, 8.0, 11.31, 16.0, 22.63, 32.0],
        )
    }
}

const PENAL_STANDARD: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
const BETA_STANDARD: [f64; 11] = [1.0, 1.46, 2.14, 3.14, 4.59, 6.73, 9.85, 14.42, 21.11, 30.91, 32.0];
