//! Level matrices, the discrete Laplacian `A` on `X_{m,d}` and its spectrum.
//!
//! The analytic spectrum has two families: the eigenvalues `lambda_{0,k}` of the
//! `m x m` level matrix `R` (functions constant on each level), and for every
//! level `l` and conductor `n = 1..=d` the value
//! `lambda_{n,l} = -p^{n-1} - p^{n-2} + (p^{-l} + p^{l+1-m}) / p`
//! with multiplicity `p - 2` at `n = 1` and `(p-1)^2 p^{n-2}` above.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix};
use crate::padic::{enumerate_points, kernel_exponent, rational_pow, rational_to_f64, QuotientSpace};

pub const DEFAULT_POINT_CAP: usize = 20_000;

/// `P_{ij} = p^{-|i-j|}`, `-L = P - diag(P 1)`, `R = -(1 - 1/p) L`, and the
/// orthonormal eigenbasis `Q` of `R`.
#[derive(Debug, Clone)]
pub struct LevelMatrices {
    pub p: u64,
    pub m: u32,
    pub p_exact: Vec<Vec<BigRational>>,
    pub l_exact: Vec<Vec<BigRational>>,
    pub r_exact: Vec<Vec<BigRational>>,
    /// Row sums `s_j` of `P`.
    pub row_sums: Vec<BigRational>,
    /// Columns are eigenvectors of `R`; column 0 is `1/sqrt(m)`.
    pub q: Matrix,
    /// Eigenvalues of `R`, descending, `lambda0[0] = 0`.
    pub lambda0: Vec<f64>,
    pub off_diagonal_residual: f64,
}

impl LevelMatrices {
    /// Entry `q_{level, k}`.
    pub fn q_entry(&self, level: u32, k: usize) -> f64 {
        self.q[(level as usize, k)]
    }

    /// Largest nonzero eigenvalue of `P - diag(P 1)` (i.e. `-mu_1` of `L`).
    pub fn lambda1(&self) -> Option<f64> {
        let scale = 1.0 - 1.0 / self.p as f64;
        self.lambda0.get(1).map(|l| l / scale)
    }

    pub fn r_f64(&self) -> Matrix {
        Matrix::from_rows(
            &self
                .r_exact
                .iter()
                .map(|row| row.iter().map(rational_to_f64).collect())
                .collect::<Vec<_>>(),
        )
    }
}

pub fn build_level_matrices(p: u64, m: u32) -> Result<LevelMatrices> {
    let m_us = m as usize;
    let p_exact: Vec<Vec<BigRational>> = (0..m_us)
        .map(|i| (0..m_us).map(|j| rational_pow(p, -(i.abs_diff(j) as i64))).collect())
        .collect();
    let row_sums: Vec<BigRational> = p_exact
        .iter()
        .map(|row| row.iter().fold(BigRational::zero(), |acc, v| acc + v))
        .collect();
    let l_exact: Vec<Vec<BigRational>> = (0..m_us)
        .map(|i| {
            (0..m_us)
                .map(|j| {
                    let entry = if i == j { &p_exact[i][j] - &row_sums[i] } else { p_exact[i][j].clone() };
                    -entry
                })
                .collect()
        })
        .collect();
    let scale = BigRational::new(BigInt::from(p - 1), BigInt::from(p));
    let r_exact: Vec<Vec<BigRational>> = l_exact
        .iter()
        .map(|row| row.iter().map(|v| -(v * &scale)).collect())
        .collect();

    let r = Matrix::from_rows(
        &r_exact
            .iter()
            .map(|row| row.iter().map(rational_to_f64).collect())
            .collect::<Vec<_>>(),
    );
    let eig = jacobi_eigen(&r, 1e-16)?;
    let mut q = eig.vectors;
    let mut lambda0 = eig.values;
    // R 1 = 0 exactly and R is negative semidefinite, so the top eigenpair is (0, 1/sqrt(m)).
    lambda0[0] = 0.0;
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    for i in 0..m_us {
        q[(i, 0)] = inv_sqrt_m;
    }
    for k in 1..m_us {
        let lead = (0..m_us).map(|i| q[(i, k)]).find(|v| v.abs() > 1e-12).unwrap_or(1.0);
        if lead < 0.0 {
            for i in 0..m_us {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok(LevelMatrices {
        p,
        m,
        p_exact,
        l_exact,
        r_exact,
        row_sums,
        q,
        lambda0,
        off_diagonal_residual: eig.residual_off,
    })
}

/// `lambda_{n,l}` for conductor `n >= 1` on level `l`, exactly.
pub fn conductor_eigenvalue(p: u64, m: u32, n: u32, level: u32) -> BigRational {
    let n = n as i64;
    let l = level as i64;
    let pr = |e: i64| rational_pow(p, e);
    -pr(n - 1) - pr(n - 2) + (pr(-l) + pr(l + 1 - m as i64)) / BigRational::from_integer(BigInt::from(p))
}

pub fn conductor_eigenvalue_f64(p: u64, m: u32, n: u32, level: u32) -> f64 {
    rational_to_f64(&conductor_eigenvalue(p, m, n, level))
}

/// Number of eigenfunctions of exact conductor `n` on one level.
pub fn conductor_multiplicity(p: u64, n: u32) -> u64 {
    match n {
        0 => 1,
        1 => p - 2,
        _ => (p - 1) * (p - 1) * p.pow(n - 2),
    }
}

/// The dense discrete Laplacian `A = p^{-d} B`.
#[derive(Debug, Clone)]
pub struct LaplacianMatrix {
    pub space: QuotientSpace,
    pub a: Matrix,
}

impl LaplacianMatrix {
    /// `A u`, summed as `sum_j a_ij (u_j - u_i)` so the large diagonal never cancels.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|i| {
                let row = self.a.row(i);
                (0..u.len()).filter(|&j| j != i).map(|j| row[j] * (u[j] - u[i])).sum()
            })
            .collect()
    }
}

pub fn build_laplacian(space: &QuotientSpace) -> Result<LaplacianMatrix> {
    build_laplacian_capped(space, DEFAULT_POINT_CAP)
}

/// Assemble `A` from exact kernel weights. Off-diagonal entries are
/// `p^{-d} |x||z| / |x - z|^2`; the diagonal is minus the exact rational row sum.
pub fn build_laplacian_capped(space: &QuotientSpace, cap: usize) -> Result<LaplacianMatrix> {
    let n = space.n_points();
    if n > cap {
        return Err(Error::CapExceeded { n_points: n, cap });
    }
    let points = enumerate_points(space);
    let d = space.d as i64;
    let mut cache: BTreeMap<i64, f64> = BTreeMap::new();
    let mut a = Matrix::zeros(n, n);
    for (i, x) in points.iter().enumerate() {
        let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
        for (j, z) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let e = kernel_exponent(x, z, space)?;
            if x.level != z.level {
                assert_eq!(e, -(x.level.abs_diff(z.level) as i64), "off-diagonal blocks are p^-|i-j| 1 1^T");
            }
            *counts.entry(e).or_default() += 1;
            let w = *cache
                .entry(e)
                .or_insert_with(|| rational_to_f64(&rational_pow(space.p, e - d)));
            a[(i, j)] = w;
        }
        let row_sum = counts.iter().fold(BigRational::zero(), |acc, (&e, &c)| {
            acc + rational_pow(space.p, e - d) * BigRational::from_integer(BigInt::from(c))
        });
        a[(i, i)] = -rational_to_f64(&row_sum);
    }
    Ok(LaplacianMatrix { space: *space, a })
}

/// Exact diagonal of `B` at a point of level `l`:
/// `-(p^{2d-1} - (|x| + p^{1-m} |x|^{-1}) p^{d-1})`.
pub fn exact_b_diagonal(space: &QuotientSpace, level: u32) -> BigRational {
    let p = space.p;
    let (d, m, l) = (space.d as i64, space.m as i64, level as i64);
    let pr = |e: i64| rational_pow(p, e);
    -(pr(2 * d - 1) - (pr(-l) + pr(1 - m) * pr(l)) * pr(d - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// `k`-th eigenvalue of the level matrix `R`.
    LevelMode { k: usize },
    /// Conductor `n` characters supported on level `level`.
    Conductor { n: u32, level: u32 },
    /// Numerically computed eigenpair, no analytic label.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEntry {
    pub eigenvalue: f64,
    pub multiplicity: usize,
    pub provenance: Provenance,
}

pub fn analytic_spectrum(space: &QuotientSpace, lm: &LevelMatrices) -> Vec<SpectrumEntry> {
    let mut out: Vec<SpectrumEntry> = lm
        .lambda0
        .iter()
        .enumerate()
        .map(|(k, &eigenvalue)| SpectrumEntry {
            eigenvalue,
            multiplicity: 1,
            provenance: Provenance::LevelMode { k },
        })
        .collect();
    for level in 0..space.m {
        for n in 1..=space.d {
            let multiplicity = conductor_multiplicity(space.p, n) as usize;
            if multiplicity == 0 {
                continue;
            }
            out.push(SpectrumEntry {
                eigenvalue: conductor_eigenvalue_f64(space.p, space.m, n, level),
                multiplicity,
                provenance: Provenance::Conductor { n, level },
            });
        }
    }
    let total: usize = out.iter().map(|e| e.multiplicity).sum();
    assert_eq!(total, space.n_points(), "analytic multiplicities must exhaust the space");
    out
}

/// Expand entries into a descending list of eigenvalues with multiplicity.
pub fn expand(entries: &[SpectrumEntry]) -> Vec<(f64, Provenance)> {
    let mut v: Vec<(f64, Provenance)> = entries
        .iter()
        .flat_map(|e| std::iter::repeat_n((e.eigenvalue, e.provenance), e.multiplicity))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

/// Eigenvalues of `A`, descending.
pub fn numeric_spectrum(lap: &LaplacianMatrix) -> Result<Vec<f64>> {
    let eig = jacobi_eigen(&lap.a, 1e-14)?;
    debug_assert!(eig.residual_off <= 1e-13 * lap.a.frobenius().max(1e-300));
    Ok(eig.values)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumPair {
    pub analytic: f64,
    pub numeric: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumComparison {
    pub pass: bool,
    pub max_deviation: f64,
    /// Position (in descending order) of the worst pair.
    pub worst: Option<usize>,
    pub pairs: Vec<SpectrumPair>,
    /// `(analytic count, numeric count)` when they differ.
    pub multiplicity_mismatch: Option<(usize, usize)>,
}

/// Pair both spectra after sorting and report the largest deviation.
pub fn compare_spectra(analytic: &[SpectrumEntry], numeric: &[f64], tol: f64) -> SpectrumComparison {
    let expanded = expand(analytic);
    if expanded.len() != numeric.len() {
        return SpectrumComparison {
            pass: false,
            max_deviation: f64::INFINITY,
            worst: None,
            pairs: Vec::new(),
            multiplicity_mismatch: Some((expanded.len(), numeric.len())),
        };
    }
    let mut sorted = numeric.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let pairs: Vec<SpectrumPair> = expanded
        .iter()
        .zip(&sorted)
        .map(|(&(analytic, provenance), &numeric)| SpectrumPair { analytic, numeric, provenance })
        .collect();
    let (worst, max_deviation) = pairs
        .iter()
        .enumerate()
        .map(|(i, pr)| (i, (pr.analytic - pr.numeric).abs()))
        .fold((None, 0.0f64), |best, (i, dev)| if dev > best.1 { (Some(i), dev) } else { best });
    SpectrumComparison {
        pass: max_deviation <= tol,
        max_deviation,
        worst,
        pairs,
        multiplicity_mismatch: None,
    }
}

/// Smallest nonzero eigenvalue of `-A` by the closed form:
/// `1 - 1/p` for `m = 1`, else `-(1 - 1/p) lambda_1`.
pub fn spectral_gap(space: &QuotientSpace, lm: &LevelMatrices) -> f64 {
    let scale = 1.0 - 1.0 / space.p as f64;
    match lm.lambda1() {
        None => scale,
        Some(l1) => -scale * l1,
    }
}

/// Smallest nonzero `-lambda` over a spectrum with positive multiplicities.
pub fn gap_from_spectrum(entries: &[SpectrumEntry]) -> Option<f64> {
    entries
        .iter()
        .filter(|e| e.multiplicity > 0 && e.eigenvalue.abs() > 1e-12)
        .map(|e| -e.eigenvalue)
        .min_by(|a, b| a.total_cmp(b))
}

/// The zero-diagonal block `T` on one level: `T_{xz} = |x||z|/|x-z|^2 - 1` for `x != z`.
pub fn diagonal_block(space: &QuotientSpace) -> Result<Matrix> {
    let n = space.level_size();
    let points: Vec<_> = (0..n).map(|i| space.point_at(i)).collect();
    let mut t = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = rational_to_f64(&rational_pow(space.p, kernel_exponent(&points[i], &points[j], space)?));
                t[(i, j)] = w - 1.0;
            }
        }
    }
    Ok(t)
}

pub fn one_minus_inv_p(p: u64) -> BigRational {
    BigRational::one() - BigRational::new(BigInt::one(), BigInt::from(p))
}
