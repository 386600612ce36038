//! Material interpolation, compliance and its sensitivity to the element
//! moduli, plus a finite-difference checker for the assembled gradients.

use crate::error::{NumericalError, Result};
use crate::grid::{self, ElasticParams, GridModel};

/// Young's moduli and their partial derivatives, in blueprint order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub young: Vec<f64>,
    /// `∂E/∂ρ̄^ero`.
    pub d_rho: Vec<f64>,
    /// `∂E/∂φ` (zero when no band reduction is active).
    pub d_phi: Vec<f64>,
}

/// Modified SIMP `E = E_min + (E_max − r_E·E_max·φ − E_min)·ρ^p`.
///
/// `phi = None` or `r_e = 0` gives the plain scheme.
pub fn interpolate_young(
    rho_ero: &[f64],
    phi: Option<&[f64]>,
    params: &ElasticParams,
    r_e: f64,
) -> Result<MaterialField> {
    if !(0.0..1.0).contains(&r_e) {
        return Err(NumericalError::OutOfRange {
            what: "modulus reduction ratio",
            value: r_e,
            lower: 0.0,
            upper: 1.0,
        });
    }
    if let Some(phi) = phi {
        if phi.len() != rho_ero.len() {
            return Err(NumericalError::Dimension {
                what: "projection field",
                expected: rho_ero.len(),
                got: phi.len(),
            });
        }
    }
    let n = rho_ero.len();
    let p = params.penal;
    let mut young = Vec::with_capacity(n);
    let mut d_rho = Vec::with_capacity(n);
    let mut d_phi = Vec::with_capacity(n);
    for i in 0..n {
        let rho = rho_ero[i].clamp(0.0, 1.0);
        let f = phi.map_or(0.0, |v| v[i]);
        let range = params.e_max - r_e * params.e_max * f - params.e_min;
        let rp = rho.powf(p);
        young.push(params.e_min + range * rp);
        d_rho.push(if rho > 0.0 { range * p * rp / rho } else if p == 1.0 { range } else { 0.0 });
        d_phi.push(-r_e * params.e_max * rp);
    }
    Ok(MaterialField { young, d_rho, d_phi })
}

/// Equilibrium response and compliance sensitivity.
#[derive(Debug, Clone)]
pub struct ComplianceResponse {
    pub compliance: f64,
    /// Displacements over all DOFs (zero on supports).
    pub displacement: Vec<f64>,
    /// `∂f/∂E_e = −u_eᵀ K_e(E=1) u_e`, in blueprint order.
    pub d_young: Vec<f64>,
}

/// Solves the state equation and differentiates the compliance with respect
/// to every element modulus. The adjoint of the compliance is `−u`, so no
/// second solve is needed.
pub fn compliance_response(grid: &GridModel, params: &ElasticParams, young: &[f64]) -> Result<ComplianceResponse> {
    let k = grid::assemble_stiffness(grid, params, young)?;
    let f = grid.reduce(grid.load());
    let u = grid::solve_equilibrium(&k, &f)?;
    let compliance = grid::compliance(&f, &u);
    let displacement = grid.expand(&u);
    let d_young = grid::element_energies(grid, params.nu, &displacement)
        .into_iter()
        .map(|e| -e)
        .collect();
    Ok(ComplianceResponse {
        compliance,
        displacement,
        d_young,
    })
}

/// Returns the worst relative error between `analytic` and central
/// differences of `functional` over the indices in `sample`.
///
/// Entries whose absolute discrepancy is below `floor` count as exact.
pub fn fd_check<F>(functional: F, x: &[f64], analytic: &[f64], h: f64, sample: &[usize], floor: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for &i in sample {
        probe[i] = x[i] + h;
        let up = functional(&probe);
        probe[i] = x[i] - h;
        let dn = functional(&probe);
        probe[i] = x[i];
        let fd = (up - dn) / (2.0 * h);
        let diff = (fd - analytic[i]).abs();
        if diff <= floor {
            continue;
        }
        worst = worst.max(diff / fd.abs().max(analytic[i].abs()));
    }
    worst
}
