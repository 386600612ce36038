//! Forward evaluation of objective and constraints for one design, and the
//! reverse pass that chains every functional back to the design variables.
//!
//! Design variables are the densities of every cell of the field grid
//! (ghost cells included) followed by the normalized profile coordinates.

use crate::adjoint::{compliance_response, interpolate_young};
use crate::constraints::{self, ConstraintValue};
use crate::continuation::StepParams;
use crate::error::{NumericalError, Result};
use crate::filter::{FilterOperator, Kernel, RobustFields, Thresholds};
use crate::grid::{ElasticParams, GridModel};
use crate::profile::{ProfileSet, ProjectionModel, ProjectionParams, ProjectionState};

/// Density filter applied to the design field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityFilter {
    Linear { radius: f64 },
    /// Gaussian whose radius grows by `1 + γφ` inside the band.
    Variable { radius: f64, gamma: f64, exponent: u32 },
}

/// Projection band settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub profiles: ProfileSet,
    /// Radius of the distance-field filter.
    pub r_phi: f64,
    /// Band half-width used when the schedule does not set one.
    pub beta_fil: f64,
    /// Smooth-minimum exponent.
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMaxLength {
    pub radius: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slope {
    pub theta_deg: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableMaxLength {
    pub radius: f64,
    pub gamma: f64,
    pub exponent: u32,
    pub alpha: f64,
}

/// Complete problem definition, independent of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub grid: GridModel,
    /// Material; the penalization exponent is overridden by the schedule.
    pub elastic: ElasticParams,
    /// Stiffness reduction ratio inside the band (0 disables it).
    pub r_e: f64,
    pub density_filter: DensityFilter,
    pub thresholds: Thresholds,
    pub band: Option<BandSpec>,
    /// Interface volume fraction (enables the local volume constraint).
    pub local_volume: Option<f64>,
    pub local_max_length: Option<LocalMaxLength>,
    pub slope: Option<Slope>,
    pub variable_max_length: Option<VariableMaxLength>,
    /// Exponent of the p-norm aggregation of local averages.
    pub p_agg: f64,
}

/// Constraints in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintKind {
    Volume,
    LocalVolume,
    LocalMaxLength,
    Slope,
    VariableMaxLength,
}

impl ConstraintKind {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Volume => "g0",
            ConstraintKind::LocalVolume => "g1",
            ConstraintKind::LocalMaxLength => "g2",
            ConstraintKind::Slope => "g3",
            ConstraintKind::VariableMaxLength => "g4",
        }
    }
}

/// Volume targets of the dilated design, updated during the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub volume: f64,
    pub local_volume: f64,
}

/// Every field of one evaluated design, on the field grid unless noted.
#[derive(Debug, Clone)]
pub struct Fields {
    pub rho: Vec<f64>,
    pub rho_tilde: Vec<f64>,
    pub robust: RobustFields,
    pub phi: Vec<f64>,
    /// Young's moduli in blueprint order.
    pub young: Vec<f64>,
    pub rho_hat: Option<Vec<f64>>,
    pub rho_hat_variable: Option<Vec<f64>>,
    /// Physical profile nodes.
    pub nodes: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub fields: Fields,
    pub compliance: f64,
    pub compliance_grad: ConstraintValue,
    /// Active constraints in canonical order.
    pub constraints: Vec<(ConstraintKind, ConstraintValue)>,
    /// Blueprint volume fraction of the intermediate design.
    pub volume_int: f64,
    pub volume_dil: f64,
    /// Volume fraction of the dilated design in the band (if a band exists).
    pub band_volume_dil: Option<f64>,
}

impl Evaluation {
    pub fn constraint(&self, kind: ConstraintKind) -> Option<&ConstraintValue> {
        self.constraints.iter().find(|(k, _)| *k == kind).map(|(_, v)| v)
    }
}

/// Gradients of a functional with respect to the intermediate fields.
struct Seeds {
    ero: Vec<f64>,
    dil: Vec<f64>,
    phi: Vec<f64>,
    shape: Vec<f64>,
}

/// Problem with every operator built.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    density: FilterOperator,
    projection: Option<ProjectionModel>,
    disk: Option<FilterOperator>,
    variable_average: Option<FilterOperator>,
    mask: Vec<bool>,
    blueprint: Vec<usize>,
}

/// Forward state kept for the reverse pass.
struct Forward {
    band: Option<ProjectionState>,
    density: FilterOperator,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.elastic.validate()?;
        spec.thresholds.validate()?;
        let grid = &spec.grid;
        let fg = grid.field_grid();
        let a = grid.element_size();
        let needs_band = spec.r_e > 0.0
            || spec.local_volume.is_some()
            || spec.local_max_length.is_some()
            || spec.slope.is_some()
            || matches!(spec.density_filter, DensityFilter::Variable { gamma, .. } if gamma > 0.0)
            || spec.variable_max_length.is_some_and(|v| v.gamma > 0.0);
        if needs_band && spec.band.as_ref().is_none_or(|b| b.profiles.is_empty()) {
            return Err(NumericalError::InvalidModel(
                "band-dependent features need at least one profile".into(),
            ));
        }
        if !(spec.p_agg >= 1.0) {
            return Err(NumericalError::InvalidModel("aggregation exponent must be >= 1".into()));
        }
        let zeros = vec![0.0; fg.len()];
        let density = match spec.density_filter {
            DensityFilter::Linear { radius } => FilterOperator::linear(fg, a, radius)?,
            DensityFilter::Variable {
                radius,
                gamma,
                exponent,
            } => FilterOperator::variable_gaussian(fg, a, radius, gamma, exponent, &zeros)?,
        };
        let projection = match &spec.band {
            Some(b) => Some(ProjectionModel::new(grid, b.profiles.clone(), b.r_phi, b.q)?),
            None => None,
        };
        let disk = match spec.local_max_length {
            Some(l) => Some(FilterOperator::disk(fg, a, l.radius)?),
            None => None,
        };
        let variable_average = match spec.variable_max_length {
            Some(v) => Some(FilterOperator::variable_gaussian(fg, a, v.radius, v.gamma, v.exponent, &zeros)?),
            None => None,
        };
        Ok(Self {
            mask: grid.blueprint_mask(),
            blueprint: grid.blueprint_indices(),
            spec,
            density,
            projection,
            disk,
            variable_average,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridModel {
        &self.spec.grid
    }

    pub fn n_rho(&self) -> usize {
        self.mask.len()
    }

    pub fn n_shape(&self) -> usize {
        self.spec.band.as_ref().map_or(0, |b| b.profiles.n_vars())
    }

    pub fn blueprint_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn blueprint_indices(&self) -> &[usize] {
        &self.blueprint
    }

    pub fn profiles(&self) -> Option<&ProfileSet> {
        self.spec.band.as_ref().map(|b| &b.profiles)
    }

    /// Active constraints in canonical order.
    pub fn active_constraints(&self) -> Vec<ConstraintKind> {
        let mut out = vec![ConstraintKind::Volume];
        if self.spec.local_volume.is_some() {
            out.push(ConstraintKind::LocalVolume);
        }
        if self.spec.local_max_length.is_some() {
            out.push(ConstraintKind::LocalMaxLength);
        }
        if self.spec.slope.is_some() {
            out.push(ConstraintKind::Slope);
        }
        if self.spec.variable_max_length.is_some() {
            out.push(ConstraintKind::VariableMaxLength);
        }
        out
    }

    fn check_design(&self, rho: &[f64], x: &[f64]) -> Result<()> {
        if rho.len() != self.n_rho() {
            return Err(NumericalError::Dimension {
                what: "density vector",
                expected: self.n_rho(),
                got: rho.len(),
            });
        }
        if x.len() != self.n_shape() {
            return Err(NumericalError::Dimension {
                what: "shape vector",
                expected: self.n_shape(),
                got: x.len(),
            });
        }
        if let Some(i) = rho.iter().position(|v| !v.is_finite()) {
            return Err(NumericalError::NonFinite { what: "density", index: i });
        }
        Ok(())
    }

    /// Evaluates compliance, all active constraints and their gradients.
    pub fn evaluate(&self, rho: &[f64], x: &[f64], step: &StepParams, targets: &Targets) -> Result<Evaluation> {
        self.check_design(rho, x)?;
        let n = self.n_rho();
        let n_shape = self.n_shape();

        // band
        let band = match (&self.projection, &self.spec.band) {
            (Some(model), Some(b)) => Some(model.evaluate(
                x,
                ProjectionParams {
                    beta: step.beta_fil.unwrap_or(b.beta_fil),
                    mu: step.mu,
                },
            )?),
            _ => None,
        };
        let phi = band.as_ref().map_or_else(|| vec![0.0; n], |s| s.phi.clone());

        // densities
        let mut density = self.density.clone();
        density.set_phi(&phi)?;
        let rho_tilde = density.apply(rho)?;
        let robust = RobustFields::project(&rho_tilde, step.beta_hs, self.spec.thresholds);

        // stiffness
        let elastic = ElasticParams {
            penal: step.penal,
            ..self.spec.elastic
        };
        let rho_ero_bp: Vec<f64> = self.blueprint.iter().map(|&i| robust.ero[i]).collect();
        let phi_bp: Vec<f64> = self.blueprint.iter().map(|&i| phi[i]).collect();
        let material = interpolate_young(&rho_ero_bp, Some(&phi_bp), &elastic, self.spec.r_e)?;
        let response = compliance_response(&self.spec.grid, &elastic, &material.young)?;

        let fwd = Forward { band, density };

        let zero_seeds = || Seeds {
            ero: vec![0.0; n],
            dil: vec![0.0; n],
            phi: vec![0.0; n],
            shape: vec![0.0; n_shape],
        };

        // objective
        let mut seeds = zero_seeds();
        for (e, &i) in self.blueprint.iter().enumerate() {
            seeds.ero[i] = response.d_young[e] * material.d_rho[e];
            seeds.phi[i] = response.d_young[e] * material.d_phi[e];
        }
        let (grad_rho, grad_x) = self.backprop(&fwd, &robust, rho, &rho_tilde, seeds)?;
        let compliance_grad = ConstraintValue {
            value: response.compliance,
            grad_rho,
            grad_x,
        };

        let mut out = Vec::new();
        let (g0, d) = constraints::total_volume(&robust.dil, &self.mask, targets.volume);
        let volume_dil = g0 + targets.volume;
        let mut seeds = zero_seeds();
        seeds.dil = d;
        out.push((ConstraintKind::Volume, self.finish(&fwd, &robust, rho, &rho_tilde, g0, seeds)?));

        let band_volume_dil = match &fwd.band {
            Some(_) => Some(constraints::local_volume(&robust.dil, &phi, &self.mask, 0.0)?.0),
            None => None,
        };
        if self.spec.local_volume.is_some() {
            let (v, d_rho, d_phi) = constraints::local_volume(&robust.dil, &phi, &self.mask, targets.local_volume)?;
            let mut seeds = zero_seeds();
            seeds.dil = d_rho;
            seeds.phi = d_phi;
            out.push((ConstraintKind::LocalVolume, self.finish(&fwd, &robust, rho, &rho_tilde, v, seeds)?));
        }

        let mut rho_hat = None;
        if let (Some(l), Some(disk)) = (self.spec.local_max_length, &self.disk) {
            let avg = disk.apply(&robust.dil)?;
            let (v, d_hat, d_phi) = constraints::local_max_length(&avg, &phi, &self.mask, l.alpha, self.spec.p_agg)?;
            let mut seeds = zero_seeds();
            seeds.dil = disk.apply_transpose(&d_hat)?;
            seeds.phi = d_phi;
            out.push((ConstraintKind::LocalMaxLength, self.finish(&fwd, &robust, rho, &rho_tilde, v, seeds)?));
            rho_hat = Some(avg);
        }

        if let (Some(s), Some(profiles)) = (self.spec.slope, self.profiles()) {
            let (v, grad) = constraints::slope(&self.spec.grid, profiles, x, s.theta_deg, s.p);
            let mut seeds = zero_seeds();
            seeds.shape = grad;
            out.push((ConstraintKind::Slope, self.finish(&fwd, &robust, rho, &rho_tilde, v, seeds)?));
        }

        let mut rho_hat_variable = None;
        if let (Some(vm), Some(template)) = (self.spec.variable_max_length, &self.variable_average) {
            let mut op = template.clone();
            op.set_phi(&phi)?;
            let avg = op.apply(&robust.dil)?;
            let (v, d_hat) = constraints::global_max_length(&avg, &self.mask, vm.alpha, self.spec.p_agg);
            let sens = op.phi_sensitivity(&robust.dil, &avg)?;
            let mut seeds = zero_seeds();
            seeds.dil = op.apply_transpose(&d_hat)?;
            seeds.phi = d_hat.iter().zip(&sens).map(|(a, b)| a * b).collect();
            out.push((ConstraintKind::VariableMaxLength, self.finish(&fwd, &robust, rho, &rho_tilde, v, seeds)?));
            rho_hat_variable = Some(avg);
        }

        let volume_int = constraints::total_volume(&robust.int, &self.mask, 0.0).0;
        let nodes = fwd.band.as_ref().map_or_else(Vec::new, |b| b.nodes.clone());
        Ok(Evaluation {
            fields: Fields {
                rho: rho.to_vec(),
                rho_tilde,
                robust,
                phi,
                young: material.young,
                rho_hat,
                rho_hat_variable,
                nodes,
            },
            compliance: response.compliance,
            compliance_grad,
            constraints: out,
            volume_int,
            volume_dil,
            band_volume_dil,
        })
    }

    fn finish(
        &self,
        fwd: &Forward,
        robust: &RobustFields,
        rho: &[f64],
        rho_tilde: &[f64],
        value: f64,
        seeds: Seeds,
    ) -> Result<ConstraintValue> {
        if !value.is_finite() {
            return Err(NumericalError::NonFinite { what: "constraint value", index: 0 });
        }
        let (grad_rho, grad_x) = self.backprop(fwd, robust, rho, rho_tilde, seeds)?;
        Ok(ConstraintValue {
            value,
            grad_rho,
            grad_x,
        })
    }

    fn backprop(
        &self,
        fwd: &Forward,
        robust: &RobustFields,
        rho: &[f64],
        rho_tilde: &[f64],
        seeds: Seeds,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let t: Vec<f64> = (0..rho.len())
            .map(|i| seeds.ero[i] * robust.d_ero[i] + seeds.dil[i] * robust.d_dil[i])
            .collect();
        let grad_rho = fwd.density.apply_transpose(&t)?;
        let mut grad_x = seeds.shape;
        if let (Some(model), Some(state)) = (&self.projection, &fwd.band) {
            let mut phi_seed = seeds.phi;
            if matches!(fwd.density.kernel(), Kernel::Gaussian { gamma, .. } if gamma > 0.0) {
                let sens = fwd.density.phi_sensitivity(rho, rho_tilde)?;
                for i in 0..phi_seed.len() {
                    phi_seed[i] += t[i] * sens[i];
                }
            }
            if phi_seed.iter().any(|&v| v != 0.0) {
                let g = model.shape_vjp(state, &phi_seed)?;
                for (a, b) in grad_x.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok((grad_rho, grad_x))
    }
}

/// Worst finite-difference discrepancy of one functional.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub name: &'static str,
    pub rho_error: f64,
    pub shape_error: f64,
}

impl Problem {
    /// Compares the analytic gradients of the compliance and of every active
    /// constraint with central differences of step `h` on the sampled
    /// densities and on every shape variable.
    ///
    /// Discrepancies at or below `floor` count as exact. The floor is applied
    /// after dividing by `max(|value|, 1)`, i.e. to the functional as the
    /// optimizer sees it, so that rounding noise in large compliance values is
    /// not mistaken for a gradient error.
    #[allow(clippy::too_many_arguments)]
    pub fn check_gradients(
        &self,
        rho: &[f64],
        x: &[f64],
        step: &StepParams,
        targets: &Targets,
        rho_sample: &[usize],
        h: f64,
        floor: f64,
    ) -> Result<Vec<GradientReport>> {
        let base = self.evaluate(rho, x, step, targets)?;
        let mut names = vec!["f"];
        let mut grads = vec![&base.compliance_grad];
        for (k, v) in &base.constraints {
            names.push(k.name());
            grads.push(v);
        }
        let values = |e: &Evaluation| -> Vec<f64> {
            std::iter::once(e.compliance)
                .chain(e.constraints.iter().map(|(_, v)| v.value))
                .collect()
        };
        let mut rho_err = vec![0.0f64; names.len()];
        let mut shape_err = vec![0.0f64; names.len()];
        let scale: Vec<f64> = values(&base).iter().map(|v| v.abs().max(1.0)).collect();
        let compare = |errs: &mut [f64], up: &[f64], dn: &[f64], analytic: &dyn Fn(usize) -> f64| {
            for k in 0..errs.len() {
                let fd = (up[k] - dn[k]) / (2.0 * h);
                let a = analytic(k);
                let diff = (fd - a).abs();
                if diff > floor * scale[k] {
                    errs[k] = errs[k].max(diff / fd.abs().max(a.abs()));
                }
            }
        };
        let mut probe = rho.to_vec();
        for &i in rho_sample {
            probe[i] = rho[i] + h;
            let up = values(&self.evaluate(&probe, x, step, targets)?);
            probe[i] = rho[i] - h;
            let dn = values(&self.evaluate(&probe, x, step, targets)?);
            probe[i] = rho[i];
            compare(&mut rho_err, &up, &dn, &|k| grads[k].grad_rho[i]);
        }
        let mut probe = x.to_vec();
        for j in 0..x.len() {
            probe[j] = x[j] + h;
            let up = values(&self.evaluate(rho, &probe, step, targets)?);
            probe[j] = x[j] - h;
            let dn = values(&self.evaluate(rho, &probe, step, targets)?);
            probe[j] = x[j];
            compare(&mut shape_err, &up, &dn, &|k| grads[k].grad_x[j]);
        }
        Ok(names
            .into_iter()
            .zip(rho_err.into_iter().zip(shape_err))
            .map(|(name, (r, s))| GradientReport {
                name,
                rho_error: r,
                shape_error: s,
            })
            .collect())
    }
}
