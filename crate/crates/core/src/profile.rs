//! Piece-wise linear projection profiles and the projection field φ.
//!
//! A profile is a polyline whose nodes sit at fixed positions along its
//! development axis (y for vertical profiles, x for horizontal ones); the
//! other coordinate of every node is a shape variable normalized by the
//! domain extent. The band of cells around the profiles is marked by
//!
//! ```text
//! d²_k  = min over segments of profile k of the squared distance
//! d̄²    = smooth minimum of d²_k over profiles
//! d̃²    = hat-filtered d̄²
//! φ     = exp(−½ (d̃² / β²)^μ)
//! ```

use rayon::prelude::*;

use crate::error::{NumericalError, Result};
use crate::filter::FilterOperator;
use crate::grid::GridModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Nodes at fixed `y`, variable `x`.
    Vertical,
    /// Nodes at fixed `x`, variable `y`.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub orientation: Orientation,
    /// Physical node positions along the development axis.
    pub fixed: Vec<f64>,
    /// Initial normalized variable coordinates.
    pub initial: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Profile {
    /// Profile with `segments` equal segments spanning the whole domain along
    /// its development axis, all nodes starting at `x0`.
    pub fn uniform(
        orientation: Orientation,
        segments: usize,
        grid: &GridModel,
        x0: f64,
        lower: f64,
        upper: f64,
    ) -> Self {
        let extent = match orientation {
            Orientation::Vertical => grid.nely() as f64,
            Orientation::Horizontal => grid.nelx() as f64,
        } * grid.element_size();
        let n = segments + 1;
        Self {
            orientation,
            fixed: (0..n).map(|k| extent * k as f64 / segments as f64).collect(),
            initial: vec![x0; n],
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.fixed.len()
    }

    pub fn n_segments(&self) -> usize {
        self.fixed.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.fixed.len();
        if n < 2 {
            return Err(NumericalError::InvalidModel(
                "a profile needs at least two nodes".into(),
            ));
        }
        for (what, v) in [("initial", &self.initial), ("lower", &self.lower), ("upper", &self.upper)] {
            if v.len() != n {
                return Err(NumericalError::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if self.fixed.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NumericalError::InvalidModel(
                "profile node positions must be strictly increasing".into(),
            ));
        }
        for i in 0..n {
            if !(0.0 <= self.lower[i] && self.lower[i] <= self.initial[i]
                && self.initial[i] <= self.upper[i] && self.upper[i] <= 1.0)
            {
                return Err(NumericalError::OutOfRange {
                    what: "profile node",
                    value: self.initial[i],
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Extent that scales this profile's normalized coordinates.
    pub fn scale(&self, grid: &GridModel) -> f64 {
        grid.element_size()
            * match self.orientation {
                Orientation::Vertical => grid.nelx() as f64,
                Orientation::Horizontal => grid.nely() as f64,
            }
    }

    /// Physical `(x, y)` node positions for normalized variables `vars`.
    pub fn nodes(&self, grid: &GridModel, vars: &[f64]) -> Vec<(f64, f64)> {
        let s = self.scale(grid);
        self.fixed
            .iter()
            .zip(vars)
            .map(|(&f, &v)| match self.orientation {
                Orientation::Vertical => (v * s, f),
                Orientation::Horizontal => (f, v * s),
            })
            .collect()
    }
}

/// Concatenation of profiles sharing one shape-variable vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    profiles: Vec<Profile>,
    offsets: Vec<usize>,
}

impl ProfileSet {
    pub fn new(profiles: Vec<Profile>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(profiles.len() + 1);
        offsets.push(0);
        for p in &profiles {
            p.validate()?;
            offsets.push(offsets.last().unwrap() + p.n_nodes());
        }
        Ok(Self { profiles, offsets })
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Range of shape variables owned by profile `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn initial(&self) -> Vec<f64> {
        self.profiles.iter().flat_map(|p| p.initial.iter().copied()).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.profiles.iter().flat_map(|p| p.lower.iter().copied()).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.profiles.iter().flat_map(|p| p.upper.iter().copied()).collect()
    }

    /// Physical node positions of every profile.
    pub fn nodes(&self, grid: &GridModel, x: &[f64]) -> Vec<Vec<(f64, f64)>> {
        self.profiles
            .iter()
            .enumerate()
            .map(|(k, p)| p.nodes(grid, &x[self.range(k)]))
            .collect()
    }
}

/// Squared distance from `p` to the segment `[a, b]` and its gradient with
/// respect to `(a.x, a.y, b.x, b.y)`.
pub fn segment_distance2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> Result<(f64, [f64; 4])> {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let len2 = ex * ex + ey * ey;
    if !(len2 > 0.0) {
        return Err(NumericalError::DegenerateSegment { x: a.0, y: a.1 });
    }
    let t = (((p.0 - a.0) * ex + (p.1 - a.1) * ey) / len2).clamp(0.0, 1.0);
    let (rx, ry) = (p.0 - a.0 - t * ex, p.1 - a.1 - t * ey);
    // t is either stationary or pinned, so only the explicit dependence on
    // the endpoints survives
    let grad = [
        -2.0 * (1.0 - t) * rx,
        -2.0 * (1.0 - t) * ry,
        -2.0 * t * rx,
        -2.0 * t * ry,
    ];
    Ok((rx * rx + ry * ry, grad))
}

/// Smooth minimum `D − Σ b_k^{q+1} / Σ b_k^q` with `b_k = D − d²_k`, and its
/// partial derivatives with respect to every `d²_k`.
///
/// Evaluated with the bases scaled by their maximum so that large `q` stay
/// finite.
pub fn smooth_min(d2: &[f64], d_max2: f64, q: f64, grad: &mut [f64]) -> Result<f64> {
    debug_assert_eq!(d2.len(), grad.len());
    if d2.len() == 1 {
        grad[0] = 1.0;
        return Ok(d2[0]);
    }
    let m = d2.iter().map(|&d| d_max2 - d).fold(0.0, f64::max);
    if m <= 0.0 {
        grad.fill(0.0);
        return Ok(d_max2);
    }
    let mut w_sum = 0.0;
    let mut wb_sum = 0.0;
    for (g, &d) in grad.iter_mut().zip(d2) {
        let b = (d_max2 - d).max(0.0);
        let w = (b / m).powf(q);
        *g = w;
        w_sum += w;
        wb_sum += w * b;
    }
    let s = wb_sum / w_sum;
    for (g, &d) in grad.iter_mut().zip(d2) {
        let b = (d_max2 - d).max(0.0);
        *g = if *g > 0.0 {
            *g / w_sum * ((q + 1.0) - q * s / b)
        } else {
            0.0
        };
    }
    let value = d_max2 - s;
    if !value.is_finite() {
        return Err(NumericalError::NonFinite {
            what: "smooth minimum",
            index: 0,
        });
    }
    Ok(value)
}

/// `exp(−½ (d / β²)^μ)` and its derivative with respect to `d`.
#[inline]
pub fn super_gaussian(d: f64, beta: f64, mu: f64) -> (f64, f64) {
    let b2 = beta * beta;
    let s = d.max(0.0) / b2;
    let phi = (-0.5 * s.powf(mu)).exp();
    (phi, phi * (-0.5 * mu * s.powf(mu - 1.0)) / b2)
}

/// Parameters of the projection field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    /// Band half-width `β`.
    pub beta: f64,
    /// Band sharpness `μ`.
    pub mu: f64,
}

/// Evaluates φ on the field grid of a model and provides its shape
/// derivatives.
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    profiles: ProfileSet,
    grid: GridModel,
    centroids: Vec<(f64, f64)>,
    filter: FilterOperator,
    d_max2: f64,
    q: f64,
}

/// Snapshot of φ and the intermediate quantities needed for derivatives.
#[derive(Debug, Clone)]
pub struct ProjectionState {
    pub phi: Vec<f64>,
    /// `∂φ/∂d̃²`.
    pub dphi: Vec<f64>,
    /// Smooth minimum `d̄²` before filtering.
    pub d2_raw: Vec<f64>,
    pub d2_filtered: Vec<f64>,
    /// Physical node positions per profile.
    pub nodes: Vec<Vec<(f64, f64)>>,
    /// Per cell and profile: minimizing segment, `∂d̄²/∂d²_k` and the gradient
    /// of `d²_k` with respect to the segment endpoints.
    assoc: Vec<Vec<Association>>,
}

#[derive(Debug, Clone, Copy)]
struct Association {
    segment: u32,
    weight: f64,
    grad: [f64; 4],
}

impl ProjectionModel {
    pub fn new(grid: &GridModel, profiles: ProfileSet, r_phi: f64, q: f64) -> Result<Self> {
        let fg = grid.field_grid();
        let centroids: Vec<(f64, f64)> = (0..fg.len()).map(|i| grid.centroid(i)).collect();
        let a = grid.element_size();
        let diag2 = (fg.nx as f64 * a).powi(2) + (fg.ny as f64 * a).powi(2);
        if !(q >= 1.0) {
            return Err(NumericalError::InvalidModel(format!(
                "smooth-minimum exponent must be >= 1 (got {q})"
            )));
        }
        Ok(Self {
            filter: FilterOperator::linear(fg, a, r_phi)?,
            profiles,
            grid: grid.clone(),
            centroids,
            d_max2: diag2,
            q,
        })
    }

    pub fn profiles(&self) -> &ProfileSet {
        &self.profiles
    }

    pub fn d_max2(&self) -> f64 {
        self.d_max2
    }

    pub fn distance_filter(&self) -> &FilterOperator {
        &self.filter
    }

    /// Exact per-profile minimum over segments, capped at `d_max²`.
    fn chain_distance(&self, p: (f64, f64), nodes: &[(f64, f64)]) -> Result<(f64, u32, [f64; 4])> {
        let mut best = (f64::INFINITY, 0u32, [0.0; 4]);
        for (s, w) in nodes.windows(2).enumerate() {
            let (d2, g) = segment_distance2(p, w[0], w[1])?;
            if d2 < best.0 {
                best = (d2, s as u32, g);
            }
        }
        if best.0 > self.d_max2 {
            best = (self.d_max2, best.1, [0.0; 4]);
        }
        Ok(best)
    }

    pub fn evaluate(&self, x: &[f64], params: ProjectionParams) -> Result<ProjectionState> {
        let n_vars = self.profiles.n_vars();
        if x.len() != n_vars {
            return Err(NumericalError::Dimension {
                what: "shape vector",
                expected: n_vars,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NumericalError::NonFinite { what: "shape variable", index: i });
        }
        let n_cells = self.centroids.len();
        if self.profiles.is_empty() {
            return Ok(ProjectionState {
                phi: vec![0.0; n_cells],
                dphi: vec![0.0; n_cells],
                d2_raw: vec![self.d_max2; n_cells],
                d2_filtered: vec![self.d_max2; n_cells],
                nodes: Vec::new(),
                assoc: vec![Vec::new(); n_cells],
            });
        }
        let nodes = self.profiles.nodes(&self.grid, x);
        let k = nodes.len();
        let per_cell: Vec<(f64, Vec<Association>)> = self
            .centroids
            .par_iter()
            .map(|&p| {
                let mut d2 = vec![0.0; k];
                let mut assoc = Vec::with_capacity(k);
                for (prof, chain) in nodes.iter().enumerate() {
                    let (d, s, g) = self.chain_distance(p, chain)?;
                    d2[prof] = d;
                    assoc.push(Association {
                        segment: s,
                        weight: 0.0,
                        grad: g,
                    });
                }
                let mut weights = vec![0.0; k];
                let value = smooth_min(&d2, self.d_max2, self.q, &mut weights)?;
                for (a, w) in assoc.iter_mut().zip(weights) {
                    a.weight = w;
                }
                Ok((value, assoc))
            })
            .collect::<Result<_>>()?;
        let (d2_raw, assoc): (Vec<f64>, Vec<Vec<Association>>) = per_cell.into_iter().unzip();
        let d2_filtered = self.filter.apply(&d2_raw)?;
        let (phi, dphi) = d2_filtered
            .iter()
            .map(|&d| super_gaussian(d, params.beta, params.mu))
            .unzip();
        Ok(ProjectionState {
            phi,
            dphi,
            d2_raw,
            d2_filtered,
            nodes,
            assoc,
        })
    }

    /// Converts the gradient of a functional with respect to φ into its
    /// gradient with respect to the shape variables.
    pub fn shape_vjp(&self, state: &ProjectionState, seed_phi: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.profiles.n_vars()];
        if self.profiles.is_empty() {
            return Ok(grad);
        }
        let t: Vec<f64> = seed_phi.iter().zip(&state.dphi).map(|(s, d)| s * d).collect();
        let seed_d2 = self.filter.apply_transpose(&t)?;
        for (cell, assoc) in state.assoc.iter().enumerate() {
            let s = seed_d2[cell];
            if s == 0.0 {
                continue;
            }
            for (k, a) in assoc.iter().enumerate() {
                self.scatter_segment(k, a, s * a.weight, &mut grad);
            }
        }
        Ok(grad)
    }

    fn scatter_segment(&self, k: usize, a: &Association, factor: f64, grad: &mut [f64]) {
        if factor == 0.0 {
            return;
        }
        let profile = &self.profiles.profiles()[k];
        let axis = match profile.orientation {
            Orientation::Vertical => 0,
            Orientation::Horizontal => 1,
        };
        let scale = profile.scale(&self.grid);
        let base = self.profiles.range(k).start + a.segment as usize;
        grad[base] += factor * a.grad[axis] * scale;
        grad[base + 1] += factor * a.grad[2 + axis] * scale;
    }

    /// Dense Jacobian `∂φ_i/∂x_j` assembled column by column in forward mode.
    pub fn phi_shape_jacobian(&self, state: &ProjectionState) -> Result<Vec<Vec<f64>>> {
        let n_cells = state.phi.len();
        let n_vars = self.profiles.n_vars();
        let mut local = vec![vec![0.0; n_vars]; n_cells];
        for (cell, assoc) in state.assoc.iter().enumerate() {
            for (k, a) in assoc.iter().enumerate() {
                self.scatter_segment(k, a, a.weight, &mut local[cell]);
            }
        }
        let mut jac = vec![vec![0.0; n_vars]; n_cells];
        for j in 0..n_vars {
            let tangent: Vec<f64> = local.iter().map(|row| row[j]).collect();
            let filtered = self.filter.apply(&tangent)?;
            for cell in 0..n_cells {
                jac[cell][j] = state.dphi[cell] * filtered[cell];
            }
        }
        Ok(jac)
    }
}
