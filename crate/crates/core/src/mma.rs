//! Method of Moving Asymptotes for `min f₀(x)` subject to `gᵢ(x) ≤ 0` and box
//! bounds, with per-variable absolute move limits.
//!
//! The subproblem is solved by a primal-dual interior-point method in the
//! dual space of the constraints, so its linear systems have size `m + 1`.

use crate::error::{NumericalError, Result};

/// Tuning constants of the asymptote update and the subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaSettings {
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
    /// Closest asymptote distance, as a fraction of the bound interval.
    pub asy_min: f64,
    /// Farthest asymptote distance, as a fraction of the bound interval.
    pub asy_max: f64,
    pub albefa: f64,
    pub raa0: f64,
    pub epsimin: f64,
    /// Penalty on the artificial variables `yᵢ`.
    pub c: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        Self {
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
            asy_min: 1e-5,
            asy_max: 10.0,
            albefa: 0.1,
            raa0: 1e-5,
            epsimin: 1e-7,
            c: 1000.0,
        }
    }
}

/// Asymptotes and iterate history.
#[derive(Debug, Clone)]
pub struct MmaState {
    settings: MmaSettings,
    lower: Vec<f64>,
    upper: Vec<f64>,
    move_limit: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    iteration: usize,
}

impl MmaState {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, move_limit: Vec<f64>, settings: MmaSettings) -> Result<Self> {
        let n = lower.len();
        for (what, v) in [("upper bounds", &upper), ("move limits", &move_limit)] {
            if v.len() != n {
                return Err(NumericalError::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if let Some(i) = (0..n).find(|&i| !(lower[i] < upper[i])) {
            return Err(NumericalError::InvalidModel(format!(
                "variable {i} has an empty bound interval"
            )));
        }
        if let Some(i) = move_limit.iter().position(|&m| !(m > 0.0)) {
            return Err(NumericalError::InvalidModel(format!(
                "variable {i} has a non-positive move limit"
            )));
        }
        Ok(Self {
            settings,
            lower,
            upper,
            move_limit,
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn asymptotes(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.upp)
    }

    /// Computes the next iterate from the values and gradients at `x`.
    ///
    /// `dg` holds one gradient row per constraint.
    pub fn update(&mut self, x: &[f64], df0: &[f64], g: &[f64], dg: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.lower.len();
        let m = g.len();
        check("design", x, n)?;
        check("objective gradient", df0, n)?;
        if dg.len() != m {
            return Err(NumericalError::Dimension {
                what: "constraint jacobian",
                expected: m,
                got: dg.len(),
            });
        }
        for row in dg {
            check("constraint gradient", row, n)?;
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(NumericalError::NonFinite { what: "constraint value", index: i });
        }
        let s = self.settings;
        self.iteration += 1;

        // asymptotes
        for j in 0..n {
            let range = self.upper[j] - self.lower[j];
            if self.iteration <= 2 {
                self.low[j] = x[j] - s.asy_init * range;
                self.upp[j] = x[j] + s.asy_init * range;
            } else {
                let trend = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if trend < 0.0 {
                    s.asy_decr
                } else if trend > 0.0 {
                    s.asy_incr
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.clamp(x[j] - s.asy_max * range, x[j] - s.asy_min * range);
                self.upp[j] = upp.clamp(x[j] + s.asy_min * range, x[j] + s.asy_max * range);
            }
        }

        // subproblem data
        let mut sub = Subproblem {
            m,
            n,
            low: &self.low,
            upp: &self.upp,
            alfa: vec![0.0; n],
            beta: vec![0.0; n],
            p0: vec![0.0; n],
            q0: vec![0.0; n],
            p: vec![vec![0.0; n]; m],
            q: vec![vec![0.0; n]; m],
            b: vec![0.0; m],
            c: s.c,
        };
        for j in 0..n {
            let range = (self.upper[j] - self.lower[j]).max(1e-5);
            sub.alfa[j] = (self.low[j] + s.albefa * (x[j] - self.low[j]))
                .max(x[j] - self.move_limit[j])
                .max(self.lower[j]);
            sub.beta[j] = (self.upp[j] - s.albefa * (self.upp[j] - x[j]))
                .min(x[j] + self.move_limit[j])
                .min(self.upper[j]);
            let ux2 = (self.upp[j] - x[j]).powi(2);
            let xl2 = (x[j] - self.low[j]).powi(2);
            let (pp, qq) = split(df0[j], s.raa0 / range);
            sub.p0[j] = pp * ux2;
            sub.q0[j] = qq * xl2;
            for i in 0..m {
                let (pp, qq) = split(dg[i][j], s.raa0 / range);
                sub.p[i][j] = pp * ux2;
                sub.q[i][j] = qq * xl2;
                sub.b[i] += sub.p[i][j] / (self.upp[j] - x[j]) + sub.q[i][j] / (x[j] - self.low[j]);
            }
        }
        for i in 0..m {
            sub.b[i] -= g[i];
        }
        let x_new = sub.solve(s.epsimin)?;
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        Ok(x_new)
    }
}

fn check(what: &'static str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(NumericalError::Dimension {
            what,
            expected: n,
            got: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(NumericalError::NonFinite { what, index: i });
    }
    Ok(())
}

/// Splits a derivative into the convex `p`/`q` coefficients before scaling.
#[inline]
fn split(d: f64, reg: f64) -> (f64, f64) {
    let pos = d.max(0.0);
    let neg = (-d).max(0.0);
    let pq = 0.001 * (pos + neg) + reg;
    (pos + pq, neg + pq)
}

struct Subproblem<'a> {
    m: usize,
    n: usize,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
}

/// Primal-dual point of the subproblem (with `a₀ = 1`, `aᵢ = 0`, `dᵢ = 1`).
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Subproblem<'_> {
    fn residual(&self, pt: &Point, epsi: f64) -> (f64, f64) {
        let (m, n) = (self.m, self.n);
        let mut sq = 0.0;
        let mut max: f64 = 0.0;
        let mut push = |r: f64| {
            sq += r * r;
            max = max.max(r.abs());
        };
        let mut gvec = vec![0.0; m];
        for j in 0..n {
            let ux1 = self.upp[j] - pt.x[j];
            let xl1 = pt.x[j] - self.low[j];
            let mut plam = self.p0[j];
            let mut qlam = self.q0[j];
            for i in 0..m {
                plam += self.p[i][j] * pt.lam[i];
                qlam += self.q[i][j] * pt.lam[i];
                gvec[i] += self.p[i][j] / ux1 + self.q[i][j] / xl1;
            }
            let dpsidx = plam / (ux1 * ux1) - qlam / (xl1 * xl1);
            push(dpsidx - pt.xsi[j] + pt.eta[j]);
        }
        for i in 0..m {
            push(self.c + pt.y[i] - pt.mu[i] - pt.lam[i]);
        }
        push(1.0 - pt.zet);
        for i in 0..m {
            push(gvec[i] - pt.y[i] + pt.s[i] - self.b[i]);
        }
        for j in 0..n {
            push(pt.xsi[j] * (pt.x[j] - self.alfa[j]) - epsi);
            push(pt.eta[j] * (self.beta[j] - pt.x[j]) - epsi);
        }
        for i in 0..m {
            push(pt.mu[i] * pt.y[i] - epsi);
        }
        push(pt.zet * pt.z - epsi);
        for i in 0..m {
            push(pt.lam[i] * pt.s[i] - epsi);
        }
        (sq.sqrt(), max)
    }

    fn solve(&mut self, epsimin: f64) -> Result<Vec<f64>> {
        let (m, n) = (self.m, self.n);
        let x: Vec<f64> = (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect();
        let mut pt = Point {
            xsi: (0..n).map(|j| (1.0 / (x[j] - self.alfa[j])).max(1.0)).collect(),
            eta: (0..n).map(|j| (1.0 / (self.beta[j] - x[j])).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: vec![(0.5 * self.c).max(1.0); m],
            zet: 1.0,
            s: vec![1.0; m],
        };
        let mut epsi = 1.0;
        while epsi > epsimin {
            let (mut resnorm, mut resmax) = self.residual(&pt, epsi);
            let mut inner = 0;
            while resmax > 0.9 * epsi && inner < 200 {
                inner += 1;
                let dir = self.newton_direction(&pt, epsi)?;
                // step to the boundary of the positive orthant
                let mut inv: f64 = 1.0;
                let ratio = |d: f64, v: f64| -1.01 * d / v;
                for i in 0..m {
                    inv = inv
                        .max(ratio(dir.y[i], pt.y[i]))
                        .max(ratio(dir.lam[i], pt.lam[i]))
                        .max(ratio(dir.mu[i], pt.mu[i]))
                        .max(ratio(dir.s[i], pt.s[i]));
                }
                inv = inv.max(ratio(dir.z, pt.z)).max(ratio(dir.zet, pt.zet));
                for j in 0..n {
                    inv = inv
                        .max(ratio(dir.xsi[j], pt.xsi[j]))
                        .max(ratio(dir.eta[j], pt.eta[j]))
                        .max(-1.01 * dir.x[j] / (pt.x[j] - self.alfa[j]))
                        .max(1.01 * dir.x[j] / (self.beta[j] - pt.x[j]));
                }
                let mut step = 1.0 / inv;
                let old = pt.clone();
                let mut newnorm = 2.0 * resnorm;
                let mut tries = 0;
                while newnorm > resnorm && tries < 50 {
                    tries += 1;
                    pt = old.advanced(&dir, step);
                    let (nn, nm) = self.residual(&pt, epsi);
                    newnorm = nn;
                    resmax = nm;
                    step /= 2.0;
                }
                resnorm = newnorm;
                if !resnorm.is_finite() {
                    return Err(NumericalError::Subproblem { residual: resnorm });
                }
            }
            epsi *= 0.1;
        }
        Ok(pt.x)
    }

    fn newton_direction(&self, pt: &Point, epsi: f64) -> Result<Point> {
        let (m, n) = (self.m, self.n);
        let mut gvec = vec![0.0; m];
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        // G_ij = dg_i/dx_j of the approximations
        let mut gg = vec![vec![0.0; n]; m];
        for j in 0..n {
            let ux1 = self.upp[j] - pt.x[j];
            let xl1 = pt.x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let mut plam = self.p0[j];
            let mut qlam = self.q0[j];
            for i in 0..m {
                plam += self.p[i][j] * pt.lam[i];
                qlam += self.q[i][j] * pt.lam[i];
                gvec[i] += self.p[i][j] / ux1 + self.q[i][j] / xl1;
                gg[i][j] = self.p[i][j] / ux2 - self.q[i][j] / xl2;
            }
            let dpsidx = plam / ux2 - qlam / xl2;
            let xa = pt.x[j] - self.alfa[j];
            let bx = self.beta[j] - pt.x[j];
            delx[j] = dpsidx - epsi / xa + epsi / bx;
            diagx[j] = 2.0 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) + pt.xsi[j] / xa + pt.eta[j] / bx;
        }
        let dely: Vec<f64> = (0..m).map(|i| self.c + pt.y[i] - pt.lam[i] - epsi / pt.y[i]).collect();
        let delz = 1.0 - epsi / pt.z;
        let dellam: Vec<f64> = (0..m)
            .map(|i| gvec[i] - pt.y[i] - self.b[i] + epsi / pt.lam[i])
            .collect();
        let diagy: Vec<f64> = (0..m).map(|i| 1.0 + pt.mu[i] / pt.y[i]).collect();
        // reduced system in (dlam, dz)
        let k = m + 1;
        let mut aa = vec![vec![0.0; k]; k];
        let mut bb = vec![0.0; k];
        for i in 0..m {
            bb[i] = dellam[i] + dely[i] / diagy[i];
            for j in 0..n {
                bb[i] -= gg[i][j] * delx[j] / diagx[j];
            }
            aa[i][i] = pt.s[i] / pt.lam[i] + 1.0 / diagy[i];
            for l in 0..=i {
                let mut v = 0.0;
                for j in 0..n {
                    v += gg[i][j] * gg[l][j] / diagx[j];
                }
                aa[i][l] += v;
                if l != i {
                    aa[l][i] += v;
                }
            }
        }
        bb[m] = delz;
        aa[m][m] = -pt.zet / pt.z;
        let sol = dense_solve(aa, bb)?;
        let dlam = sol[..m].to_vec();
        let dz = sol[m];
        let dx: Vec<f64> = (0..n)
            .map(|j| {
                let mut gl = 0.0;
                for i in 0..m {
                    gl += gg[i][j] * dlam[i];
                }
                (-delx[j] - gl) / diagx[j]
            })
            .collect();
        let dy: Vec<f64> = (0..m).map(|i| (-dely[i] + dlam[i]) / diagy[i]).collect();
        let dxsi = (0..n)
            .map(|j| {
                let xa = pt.x[j] - self.alfa[j];
                -pt.xsi[j] + epsi / xa - pt.xsi[j] * dx[j] / xa
            })
            .collect();
        let deta = (0..n)
            .map(|j| {
                let bx = self.beta[j] - pt.x[j];
                -pt.eta[j] + epsi / bx + pt.eta[j] * dx[j] / bx
            })
            .collect();
        let dmu = (0..m).map(|i| -pt.mu[i] + epsi / pt.y[i] - pt.mu[i] * dy[i] / pt.y[i]).collect();
        let dzet = -pt.zet + epsi / pt.z - pt.zet * dz / pt.z;
        let ds = (0..m)
            .map(|i| -pt.s[i] + epsi / pt.lam[i] - pt.s[i] * dlam[i] / pt.lam[i])
            .collect();
        Ok(Point {
            x: dx,
            y: dy,
            z: dz,
            lam: dlam,
            xsi: dxsi,
            eta: deta,
            mu: dmu,
            zet: dzet,
            s: ds,
        })
    }
}

impl Point {
    fn advanced(&self, d: &Point, t: f64) -> Point {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u + t * v).collect();
        Point {
            x: add(&self.x, &d.x),
            y: add(&self.y, &d.y),
            z: self.z + t * d.z,
            lam: add(&self.lam, &d.lam),
            xsi: add(&self.xsi, &d.xsi),
            eta: add(&self.eta, &d.eta),
            mu: add(&self.mu, &d.mu),
            zet: self.zet + t * d.zet,
            s: add(&self.s, &d.s),
        }
    }
}

/// Gaussian elimination with partial pivoting for the small dual system.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if !(a[piv][col].abs() > 0.0) {
            return Err(NumericalError::Subproblem { residual: f64::NAN });
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut v = b[r];
        for c in r + 1..n {
            v -= a[r][c] * x[c];
        }
        x[r] = v / a[r][r];
    }
    Ok(x)
}
