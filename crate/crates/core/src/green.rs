//! Finite-sum Green's function and heat kernel on `X_{m,d}`, and their numeric
//! counterparts computed from the matrix `A`.
//!
//! For same-level `x != y` with `M = v_p(x/y - 1)` the character sums collapse to
//!
//! ```text
//! G(x,y) = (1/(1-1/p)) [ sum_{n=1}^{M} (phi(p^n) - phi(p^{n-1})) / lambda_{n,l}
//!                        - phi(p^M) / lambda_{M+1,l} ]  +  level term
//! ```
//!
//! with `phi(1) = 1`, and the level term `sum_{k>=1} q_{l_x,k} q_{l_y,k} / ((1-1/p) lambda_{0,k})`
//! is all that survives across levels. With the additive constant set to zero
//! this is exactly the zero-mean Green's function.
//!
//! The simplified display `p^{M+1}/(p^{M+1}+p^M-s_l) - sum (p-1)p^n/(p^n+p^{n-1}-s_l)`
//! treats the `n = 1` count as `(p-1)^2/p` instead of `p - 2`; it is available as
//! [`green_formula_closed`] and differs by `1/((p-1) lambda_{1,l})` on the level of `y`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, norm_inf, Ldlt, Matrix, SymmetricEigen};
use crate::padic::{enumerate_points, QuotientPoint, QuotientSpace};
use crate::spectral::{conductor_eigenvalue_f64, conductor_multiplicity, LaplacianMatrix, LevelMatrices};

/// `phi(p^n)` with `phi(1) = 1`.
fn totient(p: u64, n: u32) -> f64 {
    if n == 0 {
        1.0
    } else {
        ((p - 1) * p.pow(n - 1)) as f64
    }
}

/// `v_p(d(x,y))` for same-level distinct points, `None` across levels.
pub fn shell_index(x: &QuotientPoint, y: &QuotientPoint) -> Option<u32> {
    (x.level == y.level).then(|| x.common_prefix(y) as u32)
}

fn level_term(lm: &LevelMatrices, lx: u32, ly: u32, weight: impl Fn(f64) -> f64) -> f64 {
    let scale = 1.0 - 1.0 / lm.p as f64;
    (1..lm.m as usize)
        .map(|k| lm.q_entry(lx, k) * lm.q_entry(ly, k) * weight(lm.lambda0[k]) / scale)
        .sum()
}

/// Conductor part for a same-level pair at shell `M`; `None` means `x = y`.
fn conductor_term(space: &QuotientSpace, level: u32, shell: Option<u32>, weight: impl Fn(f64) -> f64) -> f64 {
    let (p, m) = (space.p, space.m);
    let lam = |n| conductor_eigenvalue_f64(p, m, n, level);
    let scale = 1.0 - 1.0 / p as f64;
    let sum = match shell {
        Some(big_m) => {
            let inner: f64 = (1..=big_m)
                .map(|n| (totient(p, n) - totient(p, n - 1)) * weight(lam(n)))
                .sum();
            inner - totient(p, big_m) * weight(lam(big_m + 1))
        }
        None => (1..=space.d)
            .map(|n| conductor_multiplicity(p, n) as f64 * weight(lam(n)))
            .sum(),
    };
    sum / scale
}

fn check_pair(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace) -> Result<()> {
    space.check(x)?;
    space.check(y)?;
    if x == y {
        return Err(Error::OnDiagonal);
    }
    Ok(())
}

/// Zero-mean Green's function at `x != y`.
pub fn green_formula(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace, lm: &LevelMatrices) -> Result<f64> {
    check_pair(x, y, space)?;
    let inv = |l: f64| 1.0 / l;
    let lt = level_term(lm, x.level, y.level, inv);
    Ok(match shell_index(x, y) {
        Some(big_m) => conductor_term(space, x.level, Some(big_m), inv) + lt,
        None => lt,
    })
}

/// The simplified display, with additive constant zero.
pub fn green_formula_closed(
    x: &QuotientPoint,
    y: &QuotientPoint,
    space: &QuotientSpace,
    lm: &LevelMatrices,
) -> Result<f64> {
    check_pair(x, y, space)?;
    let lt = level_term(lm, x.level, y.level, |l| 1.0 / l);
    let Some(big_m) = shell_index(x, y) else {
        return Ok(lt);
    };
    let p = space.p as f64;
    let l = x.level as i32;
    let s = p.powi(-l) + p.powi(l + 1 - space.m as i32);
    let head = p.powi(big_m as i32 + 1) / (p.powi(big_m as i32 + 1) + p.powi(big_m as i32) - s);
    let tail: f64 = (1..=big_m as i32)
        .map(|n| (p - 1.0) * p.powi(n) / (p.powi(n) + p.powi(n - 1) - s))
        .sum();
    Ok(head - tail + lt)
}

/// Value of the zero-mean Green's function at `x = y`.
pub fn green_on_diagonal(y: &QuotientPoint, space: &QuotientSpace, lm: &LevelMatrices) -> f64 {
    let inv = |l: f64| 1.0 / l;
    conductor_term(space, y.level, None, inv) + level_term(lm, y.level, y.level, inv)
}

/// `x -> G(x, y)` over all points, diagonal included.
pub fn green_formula_vector(space: &QuotientSpace, y: &QuotientPoint, lm: &LevelMatrices) -> Result<Vec<f64>> {
    space.check(y)?;
    enumerate_points(space)
        .iter()
        .map(|x| if x == y { Ok(green_on_diagonal(y, space, lm)) } else { green_formula(x, y, space, lm) })
        .collect()
}

/// Right-hand side `p^d e_y - 1/V`.
pub fn green_rhs(space: &QuotientSpace, y: &QuotientPoint) -> Vec<f64> {
    let iy = space.index_of(y);
    let inv_v = 1.0 / space.volume_f64();
    let pd = space.pow(space.d) as f64;
    (0..space.n_points())
        .map(|i| if i == iy { pd - inv_v } else { -inv_v })
        .collect()
}

/// Solve `A G = p^d e_y - 1/V` with zero Haar mean.
///
/// The system is deflated to `(-A + c 1 1^T) G = -rhs`, which is positive
/// definite; its solution is automatically mean-free because `rhs` is.
pub fn green_numeric(lap: &LaplacianMatrix, y: &QuotientPoint) -> Result<Vec<f64>> {
    let space = &lap.space;
    space.check(y)?;
    let rhs = green_rhs(space, y);
    let n = space.n_points();
    let mean: f64 = rhs.iter().sum::<f64>() * space.atom_f64();
    assert!(mean.abs() <= 1e-12 * space.pow(space.d) as f64, "right-hand side must integrate to zero");
    // a single point has A = 0; any positive shift works
    let c = lap.a.max_abs().max(1.0) / n as f64;
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = c - lap.a[(i, j)];
        }
    }
    let neg_rhs: Vec<f64> = rhs.iter().map(|v| -v).collect();
    let g = Ldlt::factor(&k, 1e-300)?.solve(&neg_rhs);
    let res = residual(&lap.a, &g, &rhs);
    if res > 1e-9 {
        return Err(Error::SolveResidual(res));
    }
    Ok(g)
}

fn residual(a: &Matrix, g: &[f64], rhs: &[f64]) -> f64 {
    let ag = a.matvec(g);
    let diff: Vec<f64> = ag.iter().zip(rhs).map(|(u, v)| u - v).collect();
    norm_inf(&diff)
}

/// One row of the Green shell table.
#[derive(Debug, Clone, Serialize)]
pub struct ShellRow {
    pub level: u32,
    /// `v_p(d(x,y))`; `None` on the diagonal.
    pub shell: Option<u32>,
    pub count: usize,
    pub formula: f64,
    pub formula_closed: Option<f64>,
    pub numeric: f64,
    /// Largest spread of the numeric values within the group.
    pub numeric_spread: f64,
    pub diff: f64,
}

/// Group points by `(level, shell)` relative to `y` and report formula vs numeric.
pub fn green_shells(space: &QuotientSpace, y: &QuotientPoint, lm: &LevelMatrices, numeric: &[f64]) -> Result<Vec<ShellRow>> {
    let points = enumerate_points(space);
    let mut rows: Vec<ShellRow> = Vec::new();
    for (i, x) in points.iter().enumerate() {
        let key = if x == y {
            (x.level, None)
        } else if x.level == y.level {
            (x.level, Some(x.common_prefix(y) as u32))
        } else {
            (x.level, Some(0))
        };
        if let Some(row) = rows.iter_mut().find(|r| (r.level, r.shell) == key) {
            row.count += 1;
            row.numeric_spread = row.numeric_spread.max((numeric[i] - row.numeric).abs());
            continue;
        }
        let (formula, closed) = if x == y {
            (green_on_diagonal(y, space, lm), None)
        } else {
            (green_formula(x, y, space, lm)?, Some(green_formula_closed(x, y, space, lm)?))
        };
        rows.push(ShellRow {
            level: key.0,
            shell: key.1,
            count: 1,
            formula,
            formula_closed: closed,
            numeric: numeric[i],
            numeric_spread: 0.0,
            diff: formula - numeric[i],
        });
    }
    rows.sort_by_key(|r| (r.level, r.shell.map_or(u32::MAX, |s| s)));
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenReport {
    pub pass: bool,
    pub tol: f64,
    /// `||A G_formula - rhs||_inf` with the diagonal fixed by the row of `y`.
    pub equation_residual: f64,
    /// Per level of `x`: mean of `formula - numeric`.
    pub level_constants: Vec<f64>,
    /// Largest deviation of `formula - numeric` from its level constant.
    pub level_deviation: f64,
    /// `|G_yy(row-sum) - G_yy(closed form)|`.
    pub diagonal_mismatch: f64,
    pub numeric_residual: f64,
}

pub fn verify_green(lap: &LaplacianMatrix, y: &QuotientPoint, lm: &LevelMatrices, tol: f64) -> Result<GreenReport> {
    let space = &lap.space;
    let iy = space.index_of(y);
    let rhs = green_rhs(space, y);
    let mut formula = green_formula_vector(space, y, lm)?;
    let from_formula = formula[iy];
    // The diagonal entry forced by the equation in row y.
    let off: f64 = (0..space.n_points()).filter(|&j| j != iy).map(|j| lap.a[(iy, j)] * formula[j]).sum();
    formula[iy] = (rhs[iy] - off) / lap.a[(iy, iy)];
    let diagonal_mismatch = (formula[iy] - from_formula).abs();
    let equation_residual = residual(&lap.a, &formula, &rhs);

    let numeric = green_numeric(lap, y)?;
    let numeric_residual = residual(&lap.a, &numeric, &rhs);
    let ls = space.level_size();
    let mut level_constants = Vec::with_capacity(space.m as usize);
    let mut level_deviation = 0.0f64;
    for l in 0..space.m as usize {
        let diffs: Vec<f64> = (l * ls..(l + 1) * ls).map(|i| formula[i] - numeric[i]).collect();
        let c = diffs.iter().sum::<f64>() / ls as f64;
        level_deviation = diffs.iter().fold(level_deviation, |acc, d| acc.max((d - c).abs()));
        level_constants.push(c);
    }
    Ok(GreenReport {
        pass: equation_residual <= tol && level_deviation <= tol && diagonal_mismatch <= tol,
        tol,
        equation_residual,
        level_constants,
        level_deviation,
        diagonal_mismatch,
        numeric_residual,
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// Heat kernel with the zero mode removed; `x = y` allowed.
pub fn heat_formula(
    t: f64,
    x: &QuotientPoint,
    y: &QuotientPoint,
    space: &QuotientSpace,
    lm: &LevelMatrices,
) -> Result<f64> {
    check_time(t)?;
    space.check(x)?;
    space.check(y)?;
    let w = |l: f64| (l * t).exp();
    let lt = level_term(lm, x.level, y.level, w);
    Ok(if x.level == y.level {
        let shell = (x != y).then(|| x.common_prefix(y) as u32);
        conductor_term(space, x.level, shell, w) + lt
    } else {
        lt
    })
}

/// The simplified heat display `(p-1) sum_{n<=M} e^{lambda_n t} p^{n-1} - e^{lambda_{M+1} t} p^M + level term`.
pub fn heat_formula_closed(
    t: f64,
    x: &QuotientPoint,
    y: &QuotientPoint,
    space: &QuotientSpace,
    lm: &LevelMatrices,
) -> Result<f64> {
    check_time(t)?;
    check_pair(x, y, space)?;
    let lt = level_term(lm, x.level, y.level, |l| (l * t).exp());
    let Some(big_m) = shell_index(x, y) else {
        return Ok(lt);
    };
    let (p, m, l) = (space.p, space.m, x.level);
    let pf = p as f64;
    let head: f64 = (1..=big_m)
        .map(|n| (conductor_eigenvalue_f64(p, m, n, l) * t).exp() * pf.powi(n as i32 - 1))
        .sum::<f64>()
        * (pf - 1.0);
    Ok(head - (conductor_eigenvalue_f64(p, m, big_m + 1, l) * t).exp() * pf.powi(big_m as i32) + lt)
}

pub fn heat_formula_vector(t: f64, space: &QuotientSpace, y: &QuotientPoint, lm: &LevelMatrices) -> Result<Vec<f64>> {
    enumerate_points(space).iter().map(|x| heat_formula(t, x, y, space, lm)).collect()
}

/// Eigendecomposition of `A` reused across times and sources.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    pub space: QuotientSpace,
    eig: SymmetricEigen,
}

impl HeatKernel {
    pub fn new(lap: &LaplacianMatrix) -> Result<Self> {
        Ok(HeatKernel { space: lap.space, eig: jacobi_eigen(&lap.a, 1e-15)? })
    }

    /// `x -> p^d sum_k e^{lambda_k t} v_k(x) v_k(y) - 1/V`.
    pub fn column(&self, t: f64, y: &QuotientPoint) -> Result<Vec<f64>> {
        check_time(t)?;
        self.space.check(y)?;
        let iy = self.space.index_of(y);
        let n = self.space.n_points();
        let pd = self.space.pow(self.space.d) as f64;
        let v = &self.eig.vectors;
        let coef: Vec<f64> = (0..n).map(|k| pd * (self.eig.values[k] * t).exp() * v[(iy, k)]).collect();
        let inv_v = 1.0 / self.space.volume_f64();
        Ok((0..n)
            .map(|i| v.row(i).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() - inv_v)
            .collect())
    }
}

pub fn heat_numeric(t: f64, kernel: &HeatKernel, y: &QuotientPoint) -> Result<Vec<f64>> {
    kernel.column(t, y)
}
