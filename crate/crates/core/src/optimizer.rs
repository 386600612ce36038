//! Outer optimization loop: MMA on densities and shape variables with
//! continuation and adaptation of the dilated volume targets.

use serde::{Deserialize, Serialize};

use crate::constraints::adapt_dilated_target;
use crate::continuation::{Schedule, StepParams};
use crate::error::{NumericalError, Result};
use crate::mma::{MmaSettings, MmaState};
use crate::pipeline::{ConstraintKind, Evaluation, Problem, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub iterations: usize,
    pub schedule: Schedule,
    /// Allowed intermediate volume fraction.
    pub volume: f64,
    /// Initial dilated target as a multiple of `volume`.
    pub dilated_factor: f64,
    /// Iterations between updates of the dilated target (0 disables them).
    pub adapt_every: usize,
    pub move_rho: f64,
    pub move_shape: f64,
    /// The compliance is scaled so that it equals this value at the start.
    pub objective_scale: f64,
    pub mma: MmaSettings,
}

impl OptimizerSettings {
    pub fn new(iterations: usize, schedule: Schedule, volume: f64) -> Self {
        Self {
            iterations,
            schedule,
            volume,
            dilated_factor: 1.05,
            adapt_every: 25,
            move_rho: 0.2,
            move_shape: 0.005,
            objective_scale: 10.0,
            mma: MmaSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let check = |what: &'static str, v: f64, lo: f64, hi: f64| {
            if v > lo && v <= hi {
                Ok(())
            } else {
                Err(NumericalError::OutOfRange {
                    what,
                    value: v,
                    lower: lo,
                    upper: hi,
                })
            }
        };
        check("volume fraction", self.volume, 0.0, 1.0)?;
        check("dilated volume factor", self.dilated_factor, 0.0, f64::MAX)?;
        check("density move limit", self.move_rho, 0.0, 1.0)?;
        check("shape move limit", self.move_shape, 0.0, 1.0)?;
        check("objective scale", self.objective_scale, 0.0, f64::MAX)?;
        Ok(())
    }
}

/// One line of the optimization history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub f: f64,
    pub g0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g4: Option<f64>,
    pub volume_int: f64,
    pub volume_dil: f64,
    pub target_dil: f64,
    pub max_drho: f64,
    pub max_dx: f64,
    pub penal: f64,
    pub mu: f64,
    pub beta_hs: f64,
    pub shape: Vec<f64>,
}

impl IterationRecord {
    fn new(iter: usize, eval: &Evaluation, step: &StepParams, targets: &Targets, x: &[f64], change: (f64, f64)) -> Self {
        let g = |k: ConstraintKind| eval.constraint(k).map(|c| c.value);
        Self {
            iter,
            f: eval.compliance,
            g0: eval.constraint(ConstraintKind::Volume).map_or(f64::NAN, |c| c.value),
            g1: g(ConstraintKind::LocalVolume),
            g2: g(ConstraintKind::LocalMaxLength),
            g3: g(ConstraintKind::Slope),
            g4: g(ConstraintKind::VariableMaxLength),
            volume_int: eval.volume_int,
            volume_dil: eval.volume_dil,
            target_dil: targets.volume,
            max_drho: change.0,
            max_dx: change.1,
            penal: step.penal,
            mu: step.mu,
            beta_hs: step.beta_hs,
            shape: x.to_vec(),
        }
    }

    /// Largest active constraint value.
    pub fn max_constraint(&self) -> f64 {
        [Some(self.g0), self.g1, self.g2, self.g3, self.g4]
            .into_iter()
            .flatten()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub rho: Vec<f64>,
    pub x: Vec<f64>,
    /// Evaluation of the returned design.
    pub evaluation: Evaluation,
    pub targets: Targets,
    /// One record per evaluated design; the last one describes the result.
    pub history: Vec<IterationRecord>,
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn at(iteration: usize) -> impl Fn(NumericalError) -> NumericalError {
    move |e| NumericalError::AtIteration {
        iteration,
        source: Box::new(e),
    }
}

/// Runs the optimization from a uniform density equal to the volume target
/// and the initial profile coordinates. `observer` sees every record with
/// the evaluation it was taken from.
pub fn run_optimization(
    problem: &Problem,
    settings: &OptimizerSettings,
    mut observer: impl FnMut(&IterationRecord, &Evaluation),
) -> Result<OptimizationResult> {
    settings.validate()?;
    let n_rho = problem.n_rho();
    let n_shape = problem.n_shape();
    let mut rho = vec![settings.volume; n_rho];
    let profiles = problem.profiles();
    let mut x = profiles.map_or_else(Vec::new, |p| p.initial());
    let mut targets = Targets {
        volume: settings.dilated_factor * settings.volume,
        local_volume: problem.spec().local_volume.unwrap_or(0.0),
    };

    let mut lower = vec![0.0; n_rho];
    let mut upper = vec![1.0; n_rho];
    if let Some(p) = profiles {
        lower.extend(p.lower());
        upper.extend(p.upper());
    }
    let mut moves = vec![settings.move_rho; n_rho];
    moves.extend(std::iter::repeat_n(settings.move_shape, n_shape));
    let mut mma = MmaState::new(lower, upper, moves, settings.mma)?;

    let mut history = Vec::with_capacity(settings.iterations + 1);
    let mut scale = None;
    let mut change = (0.0, 0.0);
    for it in 0..settings.iterations {
        let step = settings.schedule.at(it);
        let mut eval = problem.evaluate(&rho, &x, &step, &targets).map_err(at(it))?;
        if settings.adapt_every > 0 && it > 0 && it % settings.adapt_every == 0 {
            let new = adapt_dilated_target(&eval.fields.robust.int, &eval.fields.robust.dil, problem.blueprint_mask(), settings.volume)
                .map_err(at(it))?;
            if let Some((_, g0)) = eval.constraints.iter_mut().find(|(k, _)| *k == ConstraintKind::Volume) {
                g0.value += targets.volume - new;
            }
            targets.volume = new;
        }
        let record = IterationRecord::new(it, &eval, &step, &targets, &x, change);
        observer(&record, &eval);
        history.push(record);

        let s = *scale.get_or_insert(settings.objective_scale / eval.compliance.abs().max(f64::MIN_POSITIVE));
        let design: Vec<f64> = rho.iter().chain(&x).copied().collect();
        let df0: Vec<f64> = eval
            .compliance_grad
            .grad_rho
            .iter()
            .chain(&eval.compliance_grad.grad_x)
            .map(|g| g * s)
            .collect();
        let g: Vec<f64> = eval.constraints.iter().map(|(_, c)| c.value).collect();
        let dg: Vec<Vec<f64>> = eval
            .constraints
            .iter()
            .map(|(_, c)| c.grad_rho.iter().chain(&c.grad_x).copied().collect())
            .collect();
        let next = mma.update(&design, &df0, &g, &dg).map_err(at(it))?;
        change = (max_change(&next[..n_rho], &rho), max_change(&next[n_rho..], &x));
        rho.copy_from_slice(&next[..n_rho]);
        x.copy_from_slice(&next[n_rho..]);
    }

    let last = settings.iterations;
    let step = settings.schedule.at(last.saturating_sub(1));
    let evaluation = problem.evaluate(&rho, &x, &step, &targets).map_err(at(last))?;
    let record = IterationRecord::new(last, &evaluation, &step, &targets, &x, change);
    observer(&record, &evaluation);
    history.push(record);
    Ok(OptimizationResult {
        rho,
        x,
        evaluation,
        targets,
        history,
    })
}
