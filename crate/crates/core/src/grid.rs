//! Structured-grid finite-element analysis with bilinear plane-stress
//! elements.
//!
//! The physical ("blueprint") domain is `nelx × nely` unit-thickness square
//! elements of edge `a`. Element fields used by the filters live on a larger
//! grid that adds `padding` ghost cells on every side; ghost cells take part in
//! filtering but carry no stiffness and no load.
//!
//! Numbering: node `(i, j)` with `i ∈ 0..=nelx` (left to right) and
//! `j ∈ 0..=nely` (bottom to top) has id `i·(nely+1) + j` and DOFs
//! `2·id` (x) and `2·id + 1` (y). Blueprint element `(ex, ey)` has id
//! `ex·nely + ey`; its nodes are listed counter-clockwise from the lower-left.

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::Side;

use crate::error::{NumericalError, Result};

/// Relative residual accepted from [`solve_equilibrium`].
pub const SOLVER_TOLERANCE: f64 = 1e-9;

const UNUSED: u32 = u32::MAX;

const REFINEMENT_STEPS: usize = 2;

/// Isotropic material and SIMP penalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    pub e_max: f64,
    pub e_min: f64,
    pub nu: f64,
    pub penal: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            e_max: 1.0,
            e_min: 1e-6,
            nu: 0.3,
            penal: 1.0,
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_min > 0.0 && self.e_min < self.e_max) {
            return Err(NumericalError::InvalidModel(format!(
                "require 0 < e_min < e_max (got {} and {})",
                self.e_min, self.e_max
            )));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(NumericalError::OutOfRange {
                what: "poisson ratio",
                value: self.nu,
                lower: 0.0,
                upper: 0.5,
            });
        }
        if !(self.penal >= 1.0) {
            return Err(NumericalError::InvalidModel(format!(
                "penalization exponent must be >= 1 (got {})",
                self.penal
            )));
        }
        Ok(())
    }
}

/// Rectangular grid of element-wise fields, column-major with `iy` counted
/// from the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
}

impl FieldGrid {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.ny, index % self.ny)
    }
}

/// Analytically integrated stiffness of a square bilinear plane-stress element
/// with unit thickness. The result does not depend on the edge length.
pub fn element_stiffness(e: f64, nu: f64) -> [[f64; 8]; 8] {
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const PATTERN: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = e / (1.0 - nu * nu);
    let mut ke = [[0.0; 8]; 8];
    for (r, row) in PATTERN.iter().enumerate() {
        for (c, &idx) in row.iter().enumerate() {
            ke[r][c] = scale * k[idx];
        }
    }
    ke
}

/// Sparsity pattern and symbolic factorization of the reduced stiffness.
#[derive(Debug, Clone)]
struct SystemPattern {
    symbolic: SymbolicSparseColMat<u32>,
    llt: SymbolicLlt<u32>,
    /// For each blueprint element, the position of each local `(r, c)` entry in
    /// the lower-triangular value array, or `UNUSED`.
    scatter: Vec<[u32; 64]>,
}

/// Structured mesh with supports, loads and ghost padding.
#[derive(Debug, Clone)]
pub struct GridModel {
    nelx: usize,
    nely: usize,
    element_size: f64,
    padding: usize,
    fixed_dofs: Vec<usize>,
    load: Vec<f64>,
    reduced_index: Vec<u32>,
    free_dofs: Vec<usize>,
    pattern: OnceLock<Arc<SystemPattern>>,
}

impl GridModel {
    pub fn new(
        nelx: usize,
        nely: usize,
        element_size: f64,
        padding: usize,
        fixed_dofs: Vec<usize>,
        load: Vec<f64>,
    ) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(NumericalError::InvalidModel(
                "grid needs at least one element in each direction".into(),
            ));
        }
        if !(element_size > 0.0 && element_size.is_finite()) {
            return Err(NumericalError::InvalidModel(format!(
                "element size must be positive (got {element_size})"
            )));
        }
        let n_dofs = 2 * (nelx + 1) * (nely + 1);
        if load.len() != n_dofs {
            return Err(NumericalError::Dimension {
                what: "load vector",
                expected: n_dofs,
                got: load.len(),
            });
        }
        let mut fixed_dofs = fixed_dofs;
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        if fixed_dofs.is_empty() {
            return Err(NumericalError::InvalidModel("no fixed DOFs".into()));
        }
        if let Some(&d) = fixed_dofs.iter().find(|&&d| d >= n_dofs) {
            return Err(NumericalError::InvalidModel(format!(
                "fixed DOF {d} out of range"
            )));
        }
        if let Some(&d) = fixed_dofs.iter().find(|&&d| load[d] != 0.0) {
            return Err(NumericalError::InvalidModel(format!(
                "load applied on fixed DOF {d}"
            )));
        }
        if let Some(i) = load.iter().position(|v| !v.is_finite()) {
            return Err(NumericalError::NonFinite { what: "load", index: i });
        }
        let mut reduced_index = vec![UNUSED; n_dofs];
        let mut free_dofs = Vec::with_capacity(n_dofs - fixed_dofs.len());
        let mut fixed = fixed_dofs.iter().peekable();
        for dof in 0..n_dofs {
            if fixed.peek() == Some(&&dof) {
                fixed.next();
                continue;
            }
            reduced_index[dof] = free_dofs.len() as u32;
            free_dofs.push(dof);
        }
        Ok(Self {
            nelx,
            nely,
            element_size,
            padding,
            fixed_dofs,
            load,
            reduced_index,
            free_dofs,
            pattern: OnceLock::new(),
        })
    }

    /// Half MBB beam: symmetry rollers on the left edge, unit downward load at
    /// the top-left node, vertical roller at the bottom-right node.
    pub fn mbb(nelx: usize, nely: usize, element_size: f64, padding: usize) -> Result<Self> {
        let node = |i: usize, j: usize| i * (nely + 1) + j;
        let n_dofs = 2 * (nelx + 1) * (nely + 1);
        let mut fixed: Vec<usize> = (0..=nely).map(|j| 2 * node(0, j)).collect();
        fixed.push(2 * node(nelx, 0) + 1);
        let mut load = vec![0.0; n_dofs];
        load[2 * node(0, nely) + 1] = -1.0;
        Self::new(nelx, nely, element_size, padding, fixed, load)
    }

    /// Cantilever clamped on the left edge with a unit downward load at the
    /// mid-height node of the right edge.
    pub fn cantilever(nelx: usize, nely: usize, element_size: f64, padding: usize) -> Result<Self> {
        let node = |i: usize, j: usize| i * (nely + 1) + j;
        let n_dofs = 2 * (nelx + 1) * (nely + 1);
        let fixed: Vec<usize> = (0..=nely)
            .flat_map(|j| [2 * node(0, j), 2 * node(0, j) + 1])
            .collect();
        let mut load = vec![0.0; n_dofs];
        load[2 * node(nelx, nely / 2) + 1] = -1.0;
        Self::new(nelx, nely, element_size, padding, fixed, load)
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn element_size(&self) -> f64 {
        self.element_size
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// Number of blueprint elements.
    pub fn n_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn n_dofs(&self) -> usize {
        2 * (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Global load vector over all DOFs.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// Element volume (unit thickness).
    pub fn element_volume(&self) -> f64 {
        self.element_size * self.element_size
    }

    /// Grid of design fields including ghost padding.
    pub fn field_grid(&self) -> FieldGrid {
        FieldGrid::new(self.nelx + 2 * self.padding, self.nely + 2 * self.padding)
    }

    /// Field index of blueprint element `e`.
    #[inline]
    pub fn blueprint_to_field(&self, e: usize) -> usize {
        let (ex, ey) = (e / self.nely, e % self.nely);
        self.field_grid().index(ex + self.padding, ey + self.padding)
    }

    /// Field indices of every blueprint element, in blueprint order.
    pub fn blueprint_indices(&self) -> Vec<usize> {
        (0..self.n_elements()).map(|e| self.blueprint_to_field(e)).collect()
    }

    /// Mask over the field grid that is `true` on blueprint cells.
    pub fn blueprint_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.field_grid().len()];
        for i in self.blueprint_indices() {
            mask[i] = true;
        }
        mask
    }

    /// Physical centroid of a field-grid cell; the blueprint occupies
    /// `[0, nelx·a] × [0, nely·a]`.
    #[inline]
    pub fn centroid(&self, field_index: usize) -> (f64, f64) {
        let (ix, iy) = self.field_grid().cell(field_index);
        let p = self.padding as f64;
        (
            (ix as f64 - p + 0.5) * self.element_size,
            (iy as f64 - p + 0.5) * self.element_size,
        )
    }

    #[inline]
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let (ex, ey) = (e / self.nely, e % self.nely);
        let n1 = ex * (self.nely + 1) + ey;
        let n2 = n1 + self.nely + 1;
        let nodes = [n1, n2, n2 + 1, n1 + 1];
        let mut dofs = [0; 8];
        for (k, n) in nodes.iter().enumerate() {
            dofs[2 * k] = 2 * n;
            dofs[2 * k + 1] = 2 * n + 1;
        }
        dofs
    }

    /// Restricts a full DOF vector to the free DOFs.
    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Expands a free-DOF vector with zeros on the fixed DOFs.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_dofs()];
        for (&d, &v) in self.free_dofs.iter().zip(reduced) {
            full[d] = v;
        }
        full
    }

    fn pattern(&self) -> Result<&SystemPattern> {
        if let Some(p) = self.pattern.get() {
            return Ok(p);
        }
        let built = Arc::new(self.build_pattern()?);
        Ok(self.pattern.get_or_init(|| built))
    }

    fn build_pattern(&self) -> Result<SystemPattern> {
        let n = self.n_free();
        let mut columns: Vec<Vec<u32>> = vec![Vec::new(); n];
        for e in 0..self.n_elements() {
            let dofs = self.element_dofs(e).map(|d| self.reduced_index[d]);
            for &r in &dofs {
                for &c in &dofs {
                    if r != UNUSED && c != UNUSED && r >= c {
                        columns[c as usize].push(r);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0u32);
        for col in columns.iter_mut() {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len() as u32);
        }
        let mut scatter = Vec::with_capacity(self.n_elements());
        for e in 0..self.n_elements() {
            let dofs = self.element_dofs(e).map(|d| self.reduced_index[d]);
            let mut map = [UNUSED; 64];
            for (a, &r) in dofs.iter().enumerate() {
                for (b, &c) in dofs.iter().enumerate() {
                    if r == UNUSED || c == UNUSED || r < c {
                        continue;
                    }
                    let start = col_ptr[c as usize] as usize;
                    let end = col_ptr[c as usize + 1] as usize;
                    let offset = row_idx[start..end]
                        .binary_search(&r)
                        .expect("entry present in pattern");
                    map[8 * a + b] = (start + offset) as u32;
                }
            }
            scatter.push(map);
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let llt = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| NumericalError::InvalidModel(format!("symbolic factorization: {e:?}")))?;
        Ok(SystemPattern {
            symbolic,
            llt,
            scatter,
        })
    }
}

/// Models compare equal when geometry, supports and loads agree.
impl PartialEq for GridModel {
    fn eq(&self, other: &Self) -> bool {
        self.nelx() == other.nelx()
            && self.nely() == other.nely()
            && self.element_size() == other.element_size()
            && self.padding() == other.padding()
            && self.fixed_dofs() == other.fixed_dofs()
            && self.load() == other.load()
    }
}

/// Reduced global stiffness (fixed DOFs eliminated), lower triangle stored.
#[derive(Debug, Clone)]
pub struct Stiffness<'g> {
    grid: &'g GridModel,
    pattern: &'g SystemPattern,
    values: Vec<f64>,
    young: Vec<f64>,
    ke: [f64; 64],
}

impl Stiffness<'_> {
    pub fn dim(&self) -> usize {
        self.pattern.symbolic.nrows()
    }

    /// Product `K·v` over the free DOFs.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let sym = &self.pattern.symbolic;
        let mut out = vec![0.0; self.dim()];
        for c in 0..self.dim() {
            let (start, end) = (sym.col_ptr()[c] as usize, sym.col_ptr()[c + 1] as usize);
            for k in start..end {
                let r = sym.row_idx()[k] as usize;
                let val = self.values[k];
                out[r] += val * v[c];
                if r != c {
                    out[c] += val * v[r];
                }
            }
        }
        out
    }

    /// Residual `f − K·v` accumulated in double-word arithmetic from the
    /// element matrices, so the rounding of the assembled entries does not
    /// enter it.
    pub fn residual(&self, f: &[f64], v: &[f64]) -> Vec<f64> {
        let grid = self.grid;
        let mut hi = f.to_vec();
        let mut lo = vec![0.0; f.len()];
        for (e, &young) in self.young.iter().enumerate() {
            let dofs = grid.element_dofs(e).map(|d| grid.reduced_index[d]);
            for (a, &ra) in dofs.iter().enumerate() {
                if ra == UNUSED {
                    continue;
                }
                let i = ra as usize;
                for (b, &rb) in dofs.iter().enumerate() {
                    if rb == UNUSED {
                        continue;
                    }
                    let x = v[rb as usize];
                    // young·k_ab·x = p + (pe + ke·x) up to the last term's rounding
                    let k = self.ke[a * 8 + b];
                    let kv = young * k;
                    let ke = young.mul_add(k, -kv);
                    let p = kv * x;
                    let pe = kv.mul_add(x, -p);
                    let s = hi[i] - p;
                    let bb = s - hi[i];
                    let err = (hi[i] - (s - bb)) - (p + bb);
                    hi[i] = s;
                    lo[i] += err - pe - ke * x;
                }
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// Dense symmetric copy, for testing on small grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let sym = &self.pattern.symbolic;
        let mut dense = vec![vec![0.0; n]; n];
        for c in 0..n {
            let (start, end) = (sym.col_ptr()[c] as usize, sym.col_ptr()[c + 1] as usize);
            for k in start..end {
                let r = sym.row_idx()[k] as usize;
                dense[r][c] = self.values[k];
                dense[c][r] = self.values[k];
            }
        }
        dense
    }
}

/// Assembles the reduced stiffness for per-element Young's moduli given in
/// blueprint order.
pub fn assemble_stiffness<'g>(
    grid: &'g GridModel,
    params: &ElasticParams,
    young: &[f64],
) -> Result<Stiffness<'g>> {
    if young.len() != grid.n_elements() {
        return Err(NumericalError::Dimension {
            what: "modulus field",
            expected: grid.n_elements(),
            got: young.len(),
        });
    }
    if let Some(i) = young.iter().position(|v| !v.is_finite()) {
        return Err(NumericalError::NonFinite { what: "modulus", index: i });
    }
    let pattern = grid.pattern()?;
    let ke = element_stiffness(1.0, params.nu);
    let mut flat = [0.0; 64];
    for (dst, src) in flat.iter_mut().zip(ke.iter().flatten()) {
        *dst = *src;
    }
    let mut values = vec![0.0; pattern.symbolic.row_idx().len()];
    for (map, &e) in pattern.scatter.iter().zip(young) {
        for (&pos, &k) in map.iter().zip(&flat) {
            if pos != UNUSED {
                values[pos as usize] += e * k;
            }
        }
    }
    Ok(Stiffness {
        grid,
        pattern,
        values,
        young: young.to_vec(),
        ke: flat,
    })
}

/// Solves `K·u = f` on the free DOFs with a sparse Cholesky factorization.
pub fn solve_equilibrium(k: &Stiffness<'_>, f: &[f64]) -> Result<Vec<f64>> {
    let n = k.dim();
    if f.len() != n {
        return Err(NumericalError::Dimension {
            what: "reduced force vector",
            expected: n,
            got: f.len(),
        });
    }
    let f_norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if f_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mat = SparseColMatRef::new(k.pattern.symbolic.as_ref(), &k.values);
    let llt = Llt::try_new_with_symbolic(k.pattern.llt.clone(), mat, Side::Lower)
        .map_err(|_| NumericalError::Indefinite)?;
    let mut col = faer::Col::<f64>::from_fn(n, |i| f[i]);
    llt.solve_in_place(col.as_mut());
    let mut u: Vec<f64> = (0..n).map(|i| col[i]).collect();
    // Refinement against an accurately accumulated residual removes the
    // factorization round-off, so nearby designs give consistently rounded
    // responses.
    for _ in 0..REFINEMENT_STEPS {
        let r = k.residual(f, &u);
        let mut corr = faer::Col::<f64>::from_fn(n, |i| r[i]);
        llt.solve_in_place(corr.as_mut());
        for (ui, i) in u.iter_mut().zip(0..n) {
            *ui += corr[i];
        }
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(NumericalError::NonFinite { what: "displacement", index: i });
    }
    let ku = k.mul_vec(&u);
    let residual = ku
        .iter()
        .zip(f)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / f_norm;
    if residual > SOLVER_TOLERANCE {
        return Err(NumericalError::SolverResidual {
            residual,
            tolerance: SOLVER_TOLERANCE,
        });
    }
    Ok(u)
}

/// Work of the external loads, `fᵀu`.
pub fn compliance(f: &[f64], u: &[f64]) -> f64 {
    f.iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Strain energy density `u_eᵀ·K_e(E=1)·u_e` of every blueprint element for a
/// full displacement vector.
pub fn element_energies(grid: &GridModel, nu: f64, u_full: &[f64]) -> Vec<f64> {
    let ke = element_stiffness(1.0, nu);
    (0..grid.n_elements())
        .map(|e| {
            let dofs = grid.element_dofs(e);
            let ue: [f64; 8] = dofs.map(|d| u_full[d]);
            let mut energy = 0.0;
            for r in 0..8 {
                let mut row = 0.0;
                for c in 0..8 {
                    row += ke[r][c] * ue[c];
                }
                energy += ue[r] * row;
            }
            energy
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2×2 Gauss quadrature of Bᵀ·D·B over the unit square.
    fn quadrature_stiffness(e: f64, nu: f64) -> [[f64; 8]; 8] {
        let d = {
            let s = e / (1.0 - nu * nu);
            [[s, s * nu, 0.0], [s * nu, s, 0.0], [0.0, 0.0, s * (1.0 - nu) / 2.0]]
        };
        let g = 1.0 / 3f64.sqrt();
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let mut k = [[0.0; 8]; 8];
        for &xi in &[-g, g] {
            for &eta in &[-g, g] {
                // unit square: x = (xi+1)/2, so d/dx = 2 d/dxi, detJ = 1/4
                let mut b = [[0.0; 8]; 3];
                for (n, &(xn, yn)) in corners.iter().enumerate() {
                    let dndx = 2.0 * 0.25 * xn * (1.0 + yn * eta);
                    let dndy = 2.0 * 0.25 * yn * (1.0 + xn * xi);
                    b[0][2 * n] = dndx;
                    b[1][2 * n + 1] = dndy;
                    b[2][2 * n] = dndy;
                    b[2][2 * n + 1] = dndx;
                }
                for r in 0..8 {
                    for c in 0..8 {
                        let mut s = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                s += b[i][r] * d[i][j] * b[j][c];
                            }
                        }
                        k[r][c] += 0.25 * s;
                    }
                }
            }
        }
        k
    }

    #[test]
    fn element_stiffness_is_symmetric() {
        let k = element_stiffness(1.0, 0.3);
        for r in 0..8 {
            for c in 0..8 {
                assert!((k[r][c] - k[c][r]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn element_stiffness_annihilates_rigid_modes() {
        let k = element_stiffness(1.0, 0.3);
        let coords = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let mut rot = [0.0; 8];
        for (n, &(x, y)) in coords.iter().enumerate() {
            rot[2 * n] = -y;
            rot[2 * n + 1] = x;
        }
        for mode in [tx, ty, rot] {
            for row in &k {
                let v: f64 = row.iter().zip(&mode).map(|(a, b)| a * b).sum();
                assert!(v.abs() < 1e-14, "{v}");
            }
        }
    }

    #[test]
    fn element_stiffness_matches_quadrature() {
        let k = element_stiffness(1.0, 0.3);
        let q = quadrature_stiffness(1.0, 0.3);
        let trace_k: f64 = (0..8).map(|i| k[i][i]).sum();
        let trace_q: f64 = (0..8).map(|i| q[i][i]).sum();
        assert!((trace_k - trace_q).abs() < 1e-12);
        for r in 0..8 {
            for c in 0..8 {
                assert!((k[r][c] - q[r][c]).abs() < 1e-12, "({r},{c})");
            }
        }
    }

    fn single_element_clamped_left() -> GridModel {
        // nodes 0 (0,0), 1 (0,1) fixed; tip load downward at node 3 (1,1)
        let mut load = vec![0.0; 8];
        load[7] = -1.0;
        GridModel::new(1, 1, 1.0, 0, vec![0, 1, 2, 3], load).unwrap()
    }

    #[test]
    fn smallest_assembly_is_spd() {
        let grid = single_element_clamped_left();
        let k = assemble_stiffness(&grid, &ElasticParams::default(), &[1.0]).unwrap();
        assert_eq!(k.dim(), 4);
        let dense = k.to_dense();
        // Cholesky by hand succeeds iff SPD
        let mut l = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|m| l[i][m] * l[j][m]).sum();
                if i == j {
                    let d = dense[i][i] - s;
                    assert!(d > 0.0);
                    l[i][i] = d.sqrt();
                } else {
                    l[i][j] = (dense[i][j] - s) / l[j][j];
                }
            }
        }
    }

    #[test]
    fn assembly_is_linear_in_modulus() {
        let grid = GridModel::mbb(3, 2, 1.0, 0).unwrap();
        let p = ElasticParams::default();
        let one = assemble_stiffness(&grid, &p, &vec![1.0; 6]).unwrap();
        let two = assemble_stiffness(&grid, &p, &vec![2.0; 6]).unwrap();
        for (a, b) in one.values.iter().zip(&two.values) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn assembly_matches_dense_scatter() {
        let grid = GridModel::cantilever(2, 2, 1.0, 0).unwrap();
        let p = ElasticParams::default();
        let young = [0.3, 1.7, 0.01, 0.9];
        let k = assemble_stiffness(&grid, &p, &young).unwrap().to_dense();
        let n = grid.n_dofs();
        let mut full = vec![vec![0.0; n]; n];
        for (e, &y) in young.iter().enumerate() {
            let ke = element_stiffness(y, p.nu);
            let dofs = grid.element_dofs(e);
            for a in 0..8 {
                for b in 0..8 {
                    full[dofs[a]][dofs[b]] += ke[a][b];
                }
            }
        }
        let free = grid.free_dofs();
        let mut max_k: f64 = 0.0;
        for (i, &fi) in free.iter().enumerate() {
            for (j, &fj) in free.iter().enumerate() {
                assert!((k[i][j] - full[fi][fj]).abs() < 1e-14);
                assert!((k[i][j] - k[j][i]).abs() <= 1e-12 * max_k.max(1.0));
                max_k = max_k.max(k[i][j].abs());
            }
        }
    }

    #[test]
    fn zero_load_gives_zero_displacement() {
        let grid = GridModel::mbb(4, 2, 1.0, 0).unwrap();
        let k = assemble_stiffness(&grid, &ElasticParams::default(), &vec![1.0; 8]).unwrap();
        let u = solve_equilibrium(&k, &vec![0.0; k.dim()]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert_eq!(compliance(&vec![0.0; k.dim()], &u), 0.0);
    }

    /// Gauss-Jordan solve of a small dense system.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    }

    #[test]
    fn single_element_solve_matches_dense_inverse() {
        let grid = single_element_clamped_left();
        let k = assemble_stiffness(&grid, &ElasticParams::default(), &[1.0]).unwrap();
        let f = grid.reduce(grid.load());
        let u = solve_equilibrium(&k, &f).unwrap();
        let oracle = dense_solve(k.to_dense(), f.clone());
        for (a, b) in u.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(compliance(&f, &u) > 0.0);
    }

    #[test]
    fn doubling_load_quadruples_compliance() {
        let grid = GridModel::mbb(6, 3, 1.0, 0).unwrap();
        let k = assemble_stiffness(&grid, &ElasticParams::default(), &vec![1.0; 18]).unwrap();
        let f = grid.reduce(grid.load());
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let c1 = compliance(&f, &solve_equilibrium(&k, &f).unwrap());
        let c2 = compliance(&f2, &solve_equilibrium(&k, &f2).unwrap());
        assert!((c2 - 4.0 * c1).abs() < 1e-10 * c2);
    }

    #[test]
    fn stiffer_element_lowers_compliance() {
        let grid = GridModel::cantilever(4, 4, 1.0, 0).unwrap();
        let p = ElasticParams::default();
        let f = grid.reduce(grid.load());
        let mut young = vec![0.5; 16];
        let c0 = {
            let k = assemble_stiffness(&grid, &p, &young).unwrap();
            compliance(&f, &solve_equilibrium(&k, &f).unwrap())
        };
        for e in 0..16 {
            young[e] = 0.9;
            let k = assemble_stiffness(&grid, &p, &young).unwrap();
            let c = compliance(&f, &solve_equilibrium(&k, &f).unwrap());
            assert!(c < c0, "element {e}");
            young[e] = 0.5;
        }
    }

    #[test]
    fn element_energies_sum_to_compliance() {
        let grid = GridModel::mbb(5, 3, 1.0, 0).unwrap();
        let p = ElasticParams::default();
        let k = assemble_stiffness(&grid, &p, &vec![1.0; 15]).unwrap();
        let f = grid.reduce(grid.load());
        let u = solve_equilibrium(&k, &f).unwrap();
        let energies = element_energies(&grid, p.nu, &grid.expand(&u));
        let total: f64 = energies.iter().sum();
        assert!((total - compliance(&f, &u)).abs() < 1e-10 * total);
    }

    #[test]
    fn rejects_non_finite_modulus() {
        let grid = GridModel::mbb(2, 1, 1.0, 0).unwrap();
        let err = assemble_stiffness(&grid, &ElasticParams::default(), &[1.0, f64::NAN]);
        assert!(matches!(err, Err(NumericalError::NonFinite { .. })));
    }

    #[test]
    fn grid_invariants() {
        let grid = GridModel::mbb(30, 10, 1.0, 2).unwrap();
        assert_eq!(grid.n_dofs(), 2 * 31 * 11);
        assert!(!grid.fixed_dofs().is_empty());
        for &d in grid.fixed_dofs() {
            assert_eq!(grid.load()[d], 0.0);
        }
        assert_eq!(grid.field_grid(), FieldGrid::new(34, 14));
        assert_eq!(grid.centroid(grid.blueprint_to_field(0)), (0.5, 0.5));
    }
}
