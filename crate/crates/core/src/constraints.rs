//! Constraint functions and their partial derivatives with respect to the
//! intermediate fields they are written in.
//!
//! Every sum runs over blueprint cells only (`mask[i] == true`); ghost cells
//! receive a zero partial. Chaining to the design variables happens in
//! [`crate::pipeline`].

use crate::error::{NumericalError, Result};
use crate::grid::GridModel;
use crate::profile::ProfileSet;

/// Smallest admissible φ-measure of the projection band.
pub const MIN_BAND_MEASURE: f64 = 1e-9;

/// Value and gradients of one constraint with respect to the design
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValue {
    pub value: f64,
    pub grad_rho: Vec<f64>,
    pub grad_x: Vec<f64>,
}

/// Total volume fraction `Σρᵢ / N − g*` and its partial derivative.
pub fn total_volume(rho_dil: &[f64], mask: &[bool], target: f64) -> (f64, Vec<f64>) {
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let sum: f64 = rho_dil.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r).sum();
    let grad = mask.iter().map(|&m| if m { 1.0 / count } else { 0.0 }).collect();
    (sum / count - target, grad)
}

/// Volume fraction of the band, `Σρᵢφᵢ / Σφᵢ`, without the target.
fn band_fraction(rho_dil: &[f64], phi: &[f64], mask: &[bool]) -> Result<(f64, f64, f64)> {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for ((r, p), &m) in rho_dil.iter().zip(phi).zip(mask) {
        if m {
            s1 += r * p;
            s2 += p;
        }
    }
    if s2 < MIN_BAND_MEASURE {
        return Err(NumericalError::VanishingMeasure {
            what: "projection band",
            value: s2,
        });
    }
    Ok((s1 / s2, s1, s2))
}

/// Volume fraction inside the projection band minus `target`, with partials
/// with respect to `ρ̄^dil` and `φ`.
pub fn local_volume(
    rho_dil: &[f64],
    phi: &[f64],
    mask: &[bool],
    target: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (frac, _, s2) = band_fraction(rho_dil, phi, mask)?;
    let mut d_rho = vec![0.0; rho_dil.len()];
    let mut d_phi = vec![0.0; rho_dil.len()];
    for i in 0..rho_dil.len() {
        if mask[i] {
            d_rho[i] = phi[i] / s2;
            d_phi[i] = (rho_dil[i] - frac) / s2;
        }
    }
    Ok((frac - target, d_rho, d_phi))
}

/// Band-weighted p-norm of the local averages `(Σ ρ̂ᵢ^p φᵢ / Σ φᵢ)^{1/p} − α`
/// with partials with respect to `ρ̂` and `φ`.
pub fn local_max_length(
    rho_hat: &[f64],
    phi: &[f64],
    mask: &[bool],
    alpha: f64,
    p: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut a = 0.0;
    let mut b = 0.0;
    for ((r, f), &m) in rho_hat.iter().zip(phi).zip(mask) {
        if m {
            a += r.powf(p) * f;
            b += f;
        }
    }
    if b < MIN_BAND_MEASURE {
        return Err(NumericalError::VanishingMeasure {
            what: "projection band",
            value: b,
        });
    }
    let g = (a / b).powf(1.0 / p);
    let mut d_rho = vec![0.0; rho_hat.len()];
    let mut d_phi = vec![0.0; rho_hat.len()];
    if g > 0.0 {
        let lead = g.powf(1.0 - p) / b;
        for i in 0..rho_hat.len() {
            if mask[i] {
                let rp = rho_hat[i].powf(p);
                d_rho[i] = lead * rho_hat[i].powf(p - 1.0) * phi[i];
                d_phi[i] = lead * (rp - a / b) / p;
            }
        }
    }
    Ok((g - alpha, d_rho, d_phi))
}

/// Domain-wide p-norm `(Σ ρ̂ᵢ^p / N)^{1/p} − α` and its partial with respect
/// to `ρ̂`.
pub fn global_max_length(rho_hat: &[f64], mask: &[bool], alpha: f64, p: f64) -> (f64, Vec<f64>) {
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let a: f64 = rho_hat
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| r.powf(p))
        .sum();
    let g = (a / count).powf(1.0 / p);
    let mut grad = vec![0.0; rho_hat.len()];
    if g > 0.0 {
        let lead = g.powf(1.0 - p) / count;
        for i in 0..rho_hat.len() {
            if mask[i] {
                grad[i] = lead * rho_hat[i].powf(p - 1.0);
            }
        }
    }
    (g - alpha, grad)
}

/// Largest offset across a segment of height `dy` for slope limit `theta`
/// (degrees, measured from the horizontal).
pub fn max_offset(dy: f64, theta_deg: f64) -> f64 {
    dy / theta_deg.to_radians().tan()
}

/// Slope constraint `(Σ_s (ΔX_s / ΔX_max,s)^{2p})^{1/p} − 1` over every
/// segment of every profile, with its gradient with respect to the
/// normalized shape variables.
pub fn slope(
    grid: &GridModel,
    profiles: &ProfileSet,
    x: &[f64],
    theta_deg: f64,
    p: f64,
) -> (f64, Vec<f64>) {
    let mut ratios = Vec::new();
    for (k, prof) in profiles.profiles().iter().enumerate() {
        let vars = &x[profiles.range(k)];
        let s = prof.scale(grid);
        for seg in 0..prof.n_segments() {
            let dx = (vars[seg + 1] - vars[seg]) * s;
            let lim = max_offset(prof.fixed[seg + 1] - prof.fixed[seg], theta_deg);
            ratios.push((dx / lim).powi(2));
        }
    }
    let mut grad = vec![0.0; x.len()];
    let m = ratios.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return (-1.0, grad);
    }
    let g = m * ratios.iter().map(|r| (r / m).powf(p)).sum::<f64>().powf(1.0 / p);
    let mut idx = 0;
    for (k, prof) in profiles.profiles().iter().enumerate() {
        let range = profiles.range(k);
        let vars = &x[range.clone()];
        let s = prof.scale(grid);
        for seg in 0..prof.n_segments() {
            let dx = (vars[seg + 1] - vars[seg]) * s;
            let lim = max_offset(prof.fixed[seg + 1] - prof.fixed[seg], theta_deg);
            let dg_dr = (ratios[idx] / g).powf(p - 1.0);
            let dr = dg_dr * 2.0 * dx / (lim * lim) * s;
            grad[range.start + seg + 1] += dr;
            grad[range.start + seg] -= dr;
            idx += 1;
        }
    }
    (g - 1.0, grad)
}

/// Rescaled volume target of the dilated design that keeps the intermediate
/// design at `target`.
pub fn adapt_dilated_target(rho_int: &[f64], rho_dil: &[f64], mask: &[bool], target: f64) -> Result<f64> {
    let (v_int, _) = total_volume(rho_int, mask, 0.0);
    let (v_dil, _) = total_volume(rho_dil, mask, 0.0);
    if v_int < 1e-9 {
        return Err(NumericalError::VanishingMeasure {
            what: "intermediate volume",
            value: v_int,
        });
    }
    Ok(target * v_dil / v_int)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Orientation, Profile};
    use proptest::prelude::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut up = x.to_vec();
        up[i] += h;
        let mut dn = x.to_vec();
        dn[i] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()) || (a - b).abs() <= 1e-8
    }

    #[test]
    fn total_volume_reference_values() {
        let mask = vec![true, true, false, true];
        assert!(total_volume(&[0.42, 0.42, 0.9, 0.42], &mask, 0.42).0.abs() < 1e-15);
        assert_eq!(total_volume(&[0.0; 4], &mask, 0.3).0, -0.3);
    }

    #[test]
    fn uniform_density_makes_local_volume_shape_independent() {
        let mask = vec![true; 6];
        let phi = [0.1, 0.9, 0.5, 0.0, 1.0, 0.3];
        let (v, _, d_phi) = local_volume(&[0.6; 6], &phi, &mask, 0.25).unwrap();
        assert!((v - 0.35).abs() < 1e-15);
        assert!(d_phi.iter().all(|d| d.abs() < 1e-15));
        let rho = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let full = local_volume(&rho, &[1.0; 6], &mask, 0.25).unwrap().0;
        assert!((full - total_volume(&rho, &mask, 0.25).0).abs() < 1e-15);
        assert!(local_volume(&rho, &[0.0; 6], &mask, 0.25).is_err());
    }

    #[test]
    fn local_max_length_reference_values() {
        let mask = vec![true; 4];
        let phi = [0.2, 1.0, 0.7, 0.0];
        assert!(local_max_length(&[0.6; 4], &phi, &mask, 0.6, 16.0).unwrap().0.abs() < 1e-14);
        assert_eq!(local_max_length(&[0.0; 4], &phi, &mask, 0.6, 16.0).unwrap().0, -0.6);
        // two-level field against a direct sum
        let rho = [0.3, 0.3, 0.8, 0.8];
        let phi = [1.0, 1.0, 0.0, 0.0];
        let direct = ((2.0 * 0.3f64.powi(16)) / 2.0).powf(1.0 / 16.0) - 0.5;
        let v = local_max_length(&rho, &phi, &mask, 0.5, 16.0).unwrap().0;
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn slope_reference_values() {
        let grid = GridModel::cantilever(100, 60, 1.0, 0).unwrap();
        let p = Profile::uniform(Orientation::Vertical, 3, &grid, 0.5, 0.0, 1.0);
        let set = ProfileSet::new(vec![p]).unwrap();
        assert_eq!(slope(&grid, &set, &[0.5; 4], 60.0, 10.0).0, -1.0);
        // segment height 20, limit 20/tan 60°
        let lim = max_offset(20.0, 60.0) / 100.0;
        let one = slope(&grid, &set, &[0.5, 0.5 + lim, 0.5 + lim, 0.5 + lim], 60.0, 10.0).0;
        assert!(one.abs() < 1e-12);
        let two = slope(&grid, &set, &[0.5, 0.5 + lim, 0.5, 0.5], 60.0, 10.0).0;
        assert!((two - (2f64.powf(0.1) - 1.0)).abs() < 1e-12);
        assert!((2f64.powf(0.1) - 1.0 - 0.0718).abs() < 1e-4);
    }

    #[test]
    fn dilated_target_rescaling() {
        let mask = vec![true; 2];
        let same = adapt_dilated_target(&[0.4, 0.4], &[0.4, 0.4], &mask, 0.4).unwrap();
        assert!((same - 0.4).abs() < 1e-15);
        let t = adapt_dilated_target(&[0.3, 0.5], &[0.38, 0.5], &mask, 0.4).unwrap();
        assert!((t - 0.44).abs() < 1e-14);
        assert!(adapt_dilated_target(&[0.0, 0.0], &[0.1, 0.1], &mask, 0.4).is_err());
    }

    proptest! {
        #[test]
        fn local_volume_partials(
            rho in proptest::collection::vec(0.0f64..1.0, 12),
            phi in proptest::collection::vec(0.05f64..1.0, 12),
        ) {
            let mask: Vec<bool> = (0..12).map(|i| i % 5 != 0).collect();
            let (_, d_rho, d_phi) = local_volume(&rho, &phi, &mask, 0.25).unwrap();
            for i in 0..12 {
                let fr = fd(|r| local_volume(r, &phi, &mask, 0.25).unwrap().0, &rho, i);
                let fp = fd(|p| local_volume(&rho, p, &mask, 0.25).unwrap().0, &phi, i);
                prop_assert!(close(fr, d_rho[i], 1e-6));
                prop_assert!(close(fp, d_phi[i], 1e-6));
            }
        }

        #[test]
        fn max_length_partials_and_sandwich(
            rho in proptest::collection::vec(0.05f64..1.0, 10),
            phi in proptest::collection::vec(0.05f64..1.0, 10),
        ) {
            let mask = vec![true; 10];
            let (v, d_rho, d_phi) = local_max_length(&rho, &phi, &mask, 0.0, 16.0).unwrap();
            for i in 0..10 {
                let fr = fd(|r| local_max_length(r, &phi, &mask, 0.0, 16.0).unwrap().0, &rho, i);
                let fp = fd(|p| local_max_length(&rho, p, &mask, 0.0, 16.0).unwrap().0, &phi, i);
                prop_assert!(close(fr, d_rho[i], 1e-5), "{} {}", fr, d_rho[i]);
                prop_assert!(close(fp, d_phi[i], 1e-5), "{} {}", fp, d_phi[i]);
            }
            let mean = rho.iter().zip(&phi).map(|(r, p)| r * p).sum::<f64>() / phi.iter().sum::<f64>();
            let max = rho.iter().cloned().fold(0.0, f64::max);
            prop_assert!(v >= mean - 1e-12 && v <= max + 1e-12);
            let (w, grad) = global_max_length(&rho, &mask, 0.0, 16.0);
            for i in 0..10 {
                let fr = fd(|r| global_max_length(r, &mask, 0.0, 16.0).0, &rho, i);
                prop_assert!(close(fr, grad[i], 1e-5));
            }
            prop_assert!(w <= max + 1e-12 && w >= rho.iter().sum::<f64>() / 10.0 - 1e-12);
        }

        #[test]
        fn slope_gradient_and_translation_invariance(
            x in proptest::collection::vec(0.3f64..0.7, 7),
            shift in -0.2f64..0.2,
        ) {
            let grid = GridModel::cantilever(60, 40, 1.0, 0).unwrap();
            let a = Profile::uniform(Orientation::Vertical, 3, &grid, 0.5, 0.0, 1.0);
            let b = Profile::uniform(Orientation::Horizontal, 2, &grid, 0.5, 0.0, 1.0);
            let set = ProfileSet::new(vec![a, b]).unwrap();
            let (v, grad) = slope(&grid, &set, &x, 60.0, 10.0);
            for i in 0..7 {
                let f = fd(|y| slope(&grid, &set, y, 60.0, 10.0).0, &x, i);
                prop_assert!(close(f, grad[i], 1e-6), "{} {}", f, grad[i]);
            }
            let moved: Vec<f64> = x.iter().enumerate().map(|(i, v)| if i < 4 { v + shift } else { *v }).collect();
            prop_assert!((slope(&grid, &set, &moved, 60.0, 10.0).0 - v).abs() < 1e-12 * v.abs().max(1.0));
        }
    }
}
