//! Convolution operators on element fields and the threshold projection.
//!
//! All operators are normalized weighted averages `out_i = Σ_j w_ij f_j / Hs_i`
//! over a stencil of cell offsets. Weights are evaluated on the fly, which
//! keeps memory flat for the large radii used by the local-average operators.

use rayon::prelude::*;

use crate::error::{NumericalError, Result};
use crate::grid::FieldGrid;

/// Weights below this value are dropped from Gaussian stencils.
pub const GAUSSIAN_CUTOFF: f64 = 1e-6;

/// Weight function of an operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `max(r − d, 0)`.
    Hat { radius: f64 },
    /// `1` for `d < r`.
    Disk { radius: f64 },
    /// `exp(−(d / (r̂/2))^n)` with `r̂ = r̃·(1 + γ·φ_i)` and
    /// `r̃ = r·(1 + (1 − 2/n))`.
    Gaussian { radius: f64, exponent: u32, gamma: f64 },
}

impl Kernel {
    /// Largest distance carrying a non-negligible weight.
    pub fn support(&self) -> f64 {
        match *self {
            Kernel::Hat { radius } | Kernel::Disk { radius } => radius,
            Kernel::Gaussian {
                radius,
                exponent,
                gamma,
            } => {
                let r_max = corrected_radius(radius, exponent) * (1.0 + gamma);
                0.5 * r_max * GAUSSIAN_CUTOFF.recip().ln().powf(1.0 / exponent as f64)
            }
        }
    }
}

/// Gaussian radius corrected so that the weight profile for `n > 2` keeps the
/// same effective width as the `n = 2` kernel.
pub fn corrected_radius(radius: f64, exponent: u32) -> f64 {
    radius * (1.0 + (1.0 - 2.0 / exponent as f64))
}

#[inline]
fn gaussian_weight(dist: f64, r_hat: f64, n: i32) -> f64 {
    (-(2.0 * dist / r_hat).powi(n)).exp()
}

#[derive(Debug, Clone, Copy)]
struct Offset {
    dx: i32,
    dy: i32,
    dist: f64,
    /// Weight for fixed kernels; unused for Gaussian kernels.
    weight: f64,
}

/// Normalized convolution operator on a [`FieldGrid`].
#[derive(Debug, Clone)]
pub struct FilterOperator {
    grid: FieldGrid,
    element_size: f64,
    kernel: Kernel,
    offsets: Vec<Offset>,
    /// Per-row Gaussian radius `r̂_i` (empty for fixed kernels).
    r_hat: Vec<f64>,
    hs: Vec<f64>,
}

impl FilterOperator {
    /// Fixed-radius linear (hat) filter.
    pub fn linear(grid: FieldGrid, element_size: f64, radius: f64) -> Result<Self> {
        check_radius(radius, element_size)?;
        Ok(Self::build(grid, element_size, Kernel::Hat { radius }))
    }

    /// Binary circular neighbourhood average.
    pub fn disk(grid: FieldGrid, element_size: f64, radius: f64) -> Result<Self> {
        check_radius(radius, element_size)?;
        Ok(Self::build(grid, element_size, Kernel::Disk { radius }))
    }

    /// Gaussian filter whose radius at cell `i` grows with `phi[i]`.
    pub fn variable_gaussian(
        grid: FieldGrid,
        element_size: f64,
        radius: f64,
        gamma: f64,
        exponent: u32,
        phi: &[f64],
    ) -> Result<Self> {
        check_radius(radius, element_size)?;
        if exponent < 2 || exponent % 2 != 0 {
            return Err(NumericalError::InvalidModel(format!(
                "Gaussian exponent must be even and >= 2 (got {exponent})"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(NumericalError::InvalidModel(format!(
                "radius amplification must be >= 0 (got {gamma})"
            )));
        }
        let mut op = Self::build(
            grid,
            element_size,
            Kernel::Gaussian {
                radius,
                exponent,
                gamma,
            },
        );
        op.set_phi(phi)?;
        Ok(op)
    }

    /// Fixed-radius Gaussian filter (the variable filter with `γ = 0`).
    pub fn gaussian(grid: FieldGrid, element_size: f64, radius: f64, exponent: u32) -> Result<Self> {
        let zeros = vec![0.0; grid.len()];
        Self::variable_gaussian(grid, element_size, radius, 0.0, exponent, &zeros)
    }

    fn build(grid: FieldGrid, element_size: f64, kernel: Kernel) -> Self {
        let support = kernel.support();
        let reach = (support / element_size).ceil() as i32;
        let mut offsets = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let dist = element_size * ((dx * dx + dy * dy) as f64).sqrt();
                let weight = match kernel {
                    Kernel::Hat { radius } => (radius - dist).max(0.0),
                    Kernel::Disk { radius } => {
                        if dist < radius {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Kernel::Gaussian { .. } => {
                        if dist <= support {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                if weight > 0.0 {
                    offsets.push(Offset {
                        dx,
                        dy,
                        dist,
                        weight,
                    });
                }
            }
        }
        let mut op = Self {
            grid,
            element_size,
            kernel,
            offsets,
            r_hat: Vec::new(),
            hs: Vec::new(),
        };
        if !matches!(kernel, Kernel::Gaussian { .. }) {
            op.hs = op.row_sums();
        }
        op
    }

    /// Updates the per-cell radii of a Gaussian operator.
    pub fn set_phi(&mut self, phi: &[f64]) -> Result<()> {
        let Kernel::Gaussian {
            radius,
            exponent,
            gamma,
        } = self.kernel
        else {
            return Ok(());
        };
        self.check_len("projection field", phi.len())?;
        if let Some(i) = phi.iter().position(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(NumericalError::OutOfRange {
                what: "projection field",
                value: phi[i],
                lower: 0.0,
                upper: 1.0,
            });
        }
        let r_tilde = corrected_radius(radius, exponent);
        self.r_hat = phi.iter().map(|p| r_tilde * (1.0 + gamma * p)).collect();
        self.hs = self.row_sums();
        Ok(())
    }

    pub fn grid(&self) -> FieldGrid {
        self.grid
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Row sums `Hs`.
    pub fn row_sums_vec(&self) -> &[f64] {
        &self.hs
    }

    /// Gaussian radius `r̂_i` of each row (empty for fixed kernels).
    pub fn row_radii(&self) -> &[f64] {
        &self.r_hat
    }

    #[inline]
    fn neighbour(&self, i: usize, off: &Offset) -> Option<usize> {
        let (ix, iy) = self.grid.cell(i);
        let jx = ix as i64 + off.dx as i64;
        let jy = iy as i64 + off.dy as i64;
        if jx < 0 || jy < 0 || jx >= self.grid.nx as i64 || jy >= self.grid.ny as i64 {
            None
        } else {
            Some(self.grid.index(jx as usize, jy as usize))
        }
    }

    #[inline]
    fn row_weight(&self, i: usize, off: &Offset) -> f64 {
        match self.kernel {
            Kernel::Gaussian { exponent, .. } => {
                gaussian_weight(off.dist, self.r_hat[i], exponent as i32)
            }
            _ => off.weight,
        }
    }

    /// `∂w_ij/∂φ_i` for Gaussian kernels.
    #[inline]
    fn row_weight_derivative(&self, i: usize, off: &Offset) -> f64 {
        match self.kernel {
            Kernel::Gaussian {
                radius,
                exponent,
                gamma,
            } => {
                let r_hat = self.r_hat[i];
                let s = (2.0 * off.dist / r_hat).powi(exponent as i32);
                (-s).exp() * exponent as f64 * s / r_hat * corrected_radius(radius, exponent) * gamma
            }
            _ => 0.0,
        }
    }

    fn row_sums(&self) -> Vec<f64> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                self.offsets
                    .iter()
                    .filter(|o| self.neighbour(i, o).is_some())
                    .map(|o| self.row_weight(i, o))
                    .sum()
            })
            .collect()
    }

    fn check_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.grid.len() {
            return Err(NumericalError::Dimension {
                what,
                expected: self.grid.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Filtered field `(H·f)_i / Hs_i`.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.check_len("filter input", field.len())?;
        Ok((0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for o in &self.offsets {
                    if let Some(j) = self.neighbour(i, o) {
                        acc += self.row_weight(i, o) * field[j];
                    }
                }
                acc / self.hs[i]
            })
            .collect())
    }

    /// Adjoint of [`apply`](Self::apply): `y_j = Σ_i w_ij v_i / Hs_i`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("filter adjoint input", v.len())?;
        // The offset set is symmetric, so the rows touching column j are the
        // neighbours of j.
        Ok((0..self.grid.len())
            .into_par_iter()
            .map(|j| {
                let mut acc = 0.0;
                for o in &self.offsets {
                    if let Some(i) = self.neighbour(j, o) {
                        acc += self.row_weight(i, o) * v[i] / self.hs[i];
                    }
                }
                acc
            })
            .collect())
    }

    /// `∂out_i/∂φ_i` for the variable Gaussian operator, where `out` is the
    /// result of [`apply`](Self::apply) on `field`. Zero for fixed kernels.
    pub fn phi_sensitivity(&self, field: &[f64], out: &[f64]) -> Result<Vec<f64>> {
        self.check_len("filter input", field.len())?;
        self.check_len("filter output", out.len())?;
        if !matches!(self.kernel, Kernel::Gaussian { gamma, .. } if gamma != 0.0) {
            return Ok(vec![0.0; self.grid.len()]);
        }
        Ok((0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for o in &self.offsets {
                    if let Some(j) = self.neighbour(i, o) {
                        acc += self.row_weight_derivative(i, o) * (field[j] - out[i]);
                    }
                }
                acc / self.hs[i]
            })
            .collect())
    }

    /// Raw weight `w_ij` (zero outside the stencil).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (ix, iy) = self.grid.cell(i);
        let (jx, jy) = self.grid.cell(j);
        let (dx, dy) = (jx as i32 - ix as i32, jy as i32 - iy as i32);
        self.offsets
            .iter()
            .find(|o| o.dx == dx && o.dy == dy)
            .map_or(0.0, |o| self.row_weight(i, o))
    }

    /// Dense normalized matrix `H_ij / Hs_i`, for testing on small grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.weight(i, j) / self.hs[i]).collect())
            .collect()
    }

    pub fn element_size(&self) -> f64 {
        self.element_size
    }
}

fn check_radius(radius: f64, element_size: f64) -> Result<()> {
    if !(radius >= element_size && radius.is_finite()) {
        return Err(NumericalError::InvalidModel(format!(
            "filter radius {radius} is below one element"
        )));
    }
    Ok(())
}

/// Smoothed Heaviside threshold and its derivative with respect to `x`.
#[inline]
pub fn heaviside(x: f64, beta: f64, eta: f64) -> (f64, f64) {
    let a = (beta * eta).tanh();
    let denom = a + (beta * (1.0 - eta)).tanh();
    let t = (beta * (x - eta)).tanh();
    ((a + t) / denom, beta * (1.0 - t * t) / denom)
}

/// Applies [`heaviside`] elementwise.
pub fn heaviside_project(field: &[f64], beta: f64, eta: f64) -> (Vec<f64>, Vec<f64>) {
    field.iter().map(|&x| heaviside(x, beta, eta)).unzip()
}

/// Threshold levels of the eroded, intermediate and dilated designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub ero: f64,
    pub int: f64,
    pub dil: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("eta_ero", self.ero), ("eta_int", self.int), ("eta_dil", self.dil)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(NumericalError::OutOfRange {
                    what,
                    value: v,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        if !(self.ero >= self.int && self.int >= self.dil) {
            return Err(NumericalError::InvalidModel(
                "thresholds must satisfy eta_ero >= eta_int >= eta_dil".into(),
            ));
        }
        Ok(())
    }
}

/// Eroded, intermediate and dilated projections of one filtered field.
#[derive(Debug, Clone)]
pub struct RobustFields {
    pub ero: Vec<f64>,
    pub int: Vec<f64>,
    pub dil: Vec<f64>,
    pub d_ero: Vec<f64>,
    pub d_int: Vec<f64>,
    pub d_dil: Vec<f64>,
}

impl RobustFields {
    pub fn project(rho_tilde: &[f64], beta: f64, eta: Thresholds) -> Self {
        let (ero, d_ero) = heaviside_project(rho_tilde, beta, eta.ero);
        let (int, d_int) = heaviside_project(rho_tilde, beta, eta.int);
        let (dil, d_dil) = heaviside_project(rho_tilde, beta, eta.dil);
        Self {
            ero,
            int,
            dil,
            d_ero,
            d_int,
            d_dil,
        }
    }
}
