//! Multiplicative characters of `Z_p^*` localized to one level of `X_{m,d}`.
//!
//! A point `x = p^l (b_0 + b_1 p + ...)` has leading digit `a_0 = b_0` and
//! principal part `x / a_0 = 1 mod p`. The character `(h, c, n)` has phase
//! `h ord(a_0) / (p-1) + {c ln(x / a_0) / p^n}`, kept as an exact rational.

use std::fmt;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, jacobi_eigen, Matrix};
use crate::padic::{discrete_log_table, enumerate_points, padic_log_int, QuotientPoint, QuotientSpace};
use crate::spectral::{conductor_eigenvalue_f64, LaplacianMatrix, LevelMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Character {
    pub h: u64,
    pub c: u64,
    pub n: u32,
    pub level: u32,
}

impl Character {
    pub fn new(h: u64, c: u64, n: u32, level: u32) -> Self {
        Character { h, c, n, level }
    }

    pub fn is_trivial(&self) -> bool {
        self.h == 0 && self.n == 1
    }
}

impl fmt::Display for Character {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chi(h={},c={},n={};l={})", self.h, self.c, self.n, self.level)
    }
}

/// Exact phase in `[0, 1)`; the value it stands for is `exp(2 pi i phase)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Phase(BigRational);

impl Phase {
    pub fn new(r: BigRational) -> Self {
        let floor = r.floor();
        Phase(r - floor)
    }

    pub fn zero() -> Self {
        Phase(BigRational::zero())
    }

    pub fn value(&self) -> &BigRational {
        &self.0
    }

    pub fn add(&self, other: &Phase) -> Phase {
        Phase::new(&self.0 + &other.0)
    }

    pub fn neg(&self) -> Phase {
        Phase::new(-&self.0)
    }

    pub fn to_complex(&self) -> Complex64 {
        let num = self.0.numer().to_f64().unwrap_or(0.0);
        let den = self.0.denom().to_f64().unwrap_or(1.0);
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * num / den)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-point data needed to evaluate any character quickly: `ord(b_0)` and
/// `ln(x / b_0) mod p^d`.
#[derive(Debug, Clone)]
pub struct CharacterTable {
    space: QuotientSpace,
    ord: Vec<u64>,
    log: Vec<BigInt>,
}

fn unit_integer(x: &QuotientPoint, p: u64) -> BigInt {
    let pb = BigInt::from(p);
    x.digits.iter().rev().fold(BigInt::zero(), |acc, &b| acc * &pb + BigInt::from(b))
}

fn principal_log(x: &QuotientPoint, space: &QuotientSpace, precision: u32) -> Result<BigInt> {
    let modulus = BigInt::from(space.p).pow(precision);
    let a0 = BigInt::from(x.digits[0]);
    let inv = a0.modinv(&modulus).ok_or(Error::NotAUnit(x.digits[0] as u64))?;
    let u = (unit_integer(x, space.p) * inv).mod_floor(&modulus);
    padic_log_int(&u, precision, space.p)
}

impl CharacterTable {
    pub fn new(space: &QuotientSpace) -> Result<Self> {
        if space.p == 2 {
            return Err(Error::CharactersNeedOddPrime);
        }
        let ords = discrete_log_table(space.p);
        let points = enumerate_points(space);
        let mut ord = Vec::with_capacity(points.len());
        let mut log = Vec::with_capacity(points.len());
        for x in &points {
            ord.push(ords[(x.digits[0] - 1) as usize]);
            log.push(principal_log(x, space, space.d)?);
        }
        Ok(CharacterTable { space: *space, ord, log })
    }

    pub fn space(&self) -> &QuotientSpace {
        &self.space
    }

    /// Phase of `chi` at the point with index `i`, or `None` off its level.
    pub fn phase(&self, chi: &Character, i: usize) -> Result<Option<Phase>> {
        let s = &self.space;
        if chi.n > s.d {
            return Err(Error::ConductorExceedsTruncation { n: chi.n, d: s.d });
        }
        if i / s.level_size() != chi.level as usize {
            return Ok(None);
        }
        let p = s.p;
        let pn = BigInt::from(p).pow(chi.n);
        let mult = BigRational::new(BigInt::from(chi.h * self.ord[i]), BigInt::from(p - 1));
        let additive = BigRational::new((BigInt::from(chi.c) * &self.log[i]).mod_floor(&pn), pn);
        Ok(Some(Phase::new(mult + additive)))
    }

    pub fn vector(&self, chi: &Character) -> Result<Vec<Complex64>> {
        (0..self.space.n_points())
            .map(|i| Ok(self.phase(chi, i)?.map_or(Complex64::zero(), |ph| ph.to_complex())))
            .collect()
    }
}

/// Evaluate one character at one point.
pub fn eval_character(chi: &Character, x: &QuotientPoint, space: &QuotientSpace) -> Result<Option<Phase>> {
    if space.p == 2 {
        return Err(Error::CharactersNeedOddPrime);
    }
    if chi.n > space.d {
        return Err(Error::ConductorExceedsTruncation { n: chi.n, d: space.d });
    }
    space.check(x)?;
    if x.level != chi.level {
        return Ok(None);
    }
    let p = space.p;
    let ord = discrete_log_table(p)[(x.digits[0] - 1) as usize];
    let log = principal_log(x, space, chi.n)?;
    let pn = BigInt::from(p).pow(chi.n);
    let mult = BigRational::new(BigInt::from(chi.h * ord), BigInt::from(p - 1));
    let additive = BigRational::new((BigInt::from(chi.c) * log).mod_floor(&pn), pn);
    Ok(Some(Phase::new(mult + additive)))
}

/// Characters of exact conductor `n` on one level (nontrivial ones only at `n = 1`).
pub fn characters_of_conductor(p: u64, n: u32, level: u32) -> Vec<Character> {
    if n == 1 {
        return (1..p - 1).map(|h| Character::new(h, 1, 1, level)).collect();
    }
    let top = p.pow(n - 1);
    (0..p - 1)
        .flat_map(|h| (1..=top).filter(move |c| c % p != 0).map(move |c| Character::new(h, c, n, level)))
        .collect()
}

/// All characters trivial on `1 + p^n Z_p`, trivial one included.
pub fn characters_up_to(p: u64, n: u32, level: u32) -> Vec<Character> {
    let mut out = vec![Character::new(0, 1, 1, level)];
    for k in 1..=n {
        out.extend(characters_of_conductor(p, k, level));
    }
    out
}

/// Discrete Haar inner product `sum_x f(x) conj(g(x)) p^{-d}`.
pub fn inner_product(f: &[Complex64], g: &[Complex64], space: &QuotientSpace) -> Result<Complex64> {
    let n = space.n_points();
    for v in [f, g] {
        if v.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: v.len() });
        }
    }
    let s: Complex64 = f.iter().zip(g).map(|(a, b)| a * b.conj()).sum();
    Ok(s * space.atom_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisLabel {
    /// `x -> q_{level(x), k}`.
    LevelCombo { k: usize },
    Character(Character),
    /// Numeric eigenvector; no analytic label is available.
    Numeric { index: usize },
}

#[derive(Debug, Clone)]
pub struct BasisVector {
    pub label: BasisLabel,
    pub eigenvalue: f64,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Eigenbasis {
    pub vectors: Vec<BasisVector>,
    pub warning: Option<String>,
}

/// Level combinations from `Q` followed by every localized character with `n <= d`.
/// For `p = 2` the characters are unavailable and the eigenvectors of `A` are returned.
pub fn eigenbasis(space: &QuotientSpace, lm: &LevelMatrices, lap: Option<&LaplacianMatrix>) -> Result<Eigenbasis> {
    if space.p == 2 {
        let owned;
        let lap = match lap {
            Some(l) => l,
            None => {
                owned = crate::spectral::build_laplacian(space)?;
                &owned
            }
        };
        let eig = jacobi_eigen(&lap.a, 1e-14)?;
        // unit Euclidean columns rescaled to Haar norm 1 - 1/p
        let scale = ((1.0 - 1.0 / space.p as f64) / space.atom_f64()).sqrt();
        let vectors = (0..space.n_points())
            .map(|k| BasisVector {
                label: BasisLabel::Numeric { index: k },
                eigenvalue: eig.values[k],
                values: eig
                    .vectors
                    .column(k)
                    .iter()
                    .map(|&v| Complex64::new(v * scale, 0.0))
                    .collect(),
            })
            .collect();
        return Ok(Eigenbasis {
            vectors,
            warning: Some("p = 2: characters unavailable, using numeric eigenvectors".into()),
        });
    }
    let table = CharacterTable::new(space)?;
    let ls = space.level_size();
    let mut vectors = Vec::with_capacity(space.n_points());
    for k in 0..space.m as usize {
        let values = (0..space.n_points())
            .map(|i| Complex64::new(lm.q_entry((i / ls) as u32, k), 0.0))
            .collect();
        vectors.push(BasisVector { label: BasisLabel::LevelCombo { k }, eigenvalue: lm.lambda0[k], values });
    }
    for level in 0..space.m {
        for n in 1..=space.d {
            let eigenvalue = conductor_eigenvalue_f64(space.p, space.m, n, level);
            for chi in characters_of_conductor(space.p, n, level) {
                vectors.push(BasisVector {
                    label: BasisLabel::Character(chi),
                    eigenvalue,
                    values: table.vector(&chi)?,
                });
            }
        }
    }
    debug_assert_eq!(vectors.len(), space.n_points());
    Ok(Eigenbasis { vectors, warning: None })
}

/// Haar Gram matrix of the basis.
pub fn gram_matrix(basis: &Eigenbasis, space: &QuotientSpace) -> Result<Vec<Vec<Complex64>>> {
    let v = &basis.vectors;
    let mut g = vec![vec![Complex64::zero(); v.len()]; v.len()];
    for i in 0..v.len() {
        for j in i..v.len() {
            let ip = inner_product(&v[i].values, &v[j].values, space)?;
            g[i][j] = ip;
            g[j][i] = ip.conj();
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrthogonalityReport {
    pub max_off_diagonal: f64,
    /// Largest `|<v, v> - (1 - 1/p)|`.
    pub max_diagonal_deviation: f64,
}

pub fn orthogonality(basis: &Eigenbasis, space: &QuotientSpace) -> Result<OrthogonalityReport> {
    let g = gram_matrix(basis, space)?;
    let target = 1.0 - 1.0 / space.p as f64;
    let mut max_off = 0.0f64;
    let mut max_diag = 0.0f64;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                max_diag = max_diag.max((v - target).norm());
            } else {
                max_off = max_off.max(v.norm());
            }
        }
    }
    Ok(OrthogonalityReport { max_off_diagonal: max_off, max_diagonal_deviation: max_diag })
}

/// Smallest singular value of the matrix whose columns are the basis vectors
/// rescaled to unit Euclidean norm.
pub fn min_singular_value(basis: &Eigenbasis) -> Result<f64> {
    let n = basis.vectors.len();
    let cols: Vec<Vec<Complex64>> = basis
        .vectors
        .iter()
        .map(|b| {
            let norm = b.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            b.values.iter().map(|z| z / norm).collect()
        })
        .collect();
    // Hermitian Gram G = V^* V embedded as the real symmetric [[Re, -Im], [Im, Re]].
    let mut big = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let g: Complex64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a.conj() * b).sum();
            big[(i, j)] = g.re;
            big[(i + n, j + n)] = g.re;
            big[(i, j + n)] = -g.im;
            big[(i + n, j)] = g.im;
        }
    }
    let eig = jacobi_eigen(&big, 1e-15)?;
    let min = eig.values.last().copied().unwrap_or(0.0);
    Ok(min.max(0.0).sqrt())
}

/// `max_v ||A v - lambda v||_inf / ||v||_inf` over the basis.
pub fn eigen_residual(lap: &LaplacianMatrix, basis: &Eigenbasis) -> f64 {
    let a = &lap.a;
    let mut worst = 0.0f64;
    for b in &basis.vectors {
        let re: Vec<f64> = b.values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.values.iter().map(|z| z.im).collect();
        let scale = b.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..a.rows() {
            let r = a.row(i);
            let res = Complex64::new(dot(r, &re), dot(r, &im)) - b.values[i] * b.eigenvalue;
            worst = worst.max(res.norm() / scale);
        }
    }
    worst
}

/// `sum_{chi trivial on 1 + p^n} chi(x) conj(chi(y))` for same-level `x, y`,
/// together with the predicted value `(p-1) p^{n-1} [v_p(x/y - 1) >= n]`.
pub fn second_orthogonality(
    table: &CharacterTable,
    i: usize,
    j: usize,
    n: u32,
) -> Result<(Complex64, f64)> {
    let s = table.space();
    let level = (i / s.level_size()) as u32;
    if (j / s.level_size()) as u32 != level {
        return Err(Error::InvalidArgument("points lie on different levels".into()));
    }
    let mut sum = Complex64::zero();
    for chi in characters_up_to(s.p, n, level) {
        let a = table.phase(&chi, i)?.expect("same level");
        let b = table.phase(&chi, j)?.expect("same level");
        sum += a.add(&b.neg()).to_complex();
    }
    let x = s.point_at(i);
    let y = s.point_at(j);
    let close = x.common_prefix(&y) >= n as usize;
    let predicted = if close { ((s.p - 1) * s.p.pow(n - 1)) as f64 } else { 0.0 };
    Ok((sum, predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_laplacian, build_level_matrices};

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn space(p: u64, m: u32, d: u32) -> QuotientSpace {
        QuotientSpace::new(p, m, d).unwrap()
    }

    #[test]
    fn evaluation_examples() {
        let s = space(3, 1, 2);
        let ph = eval_character(&Character::new(1, 1, 1, 0), &QuotientPoint::new(0, vec![2, 0]), &s).unwrap();
        assert_eq!(ph.unwrap().value(), &rat(1, 2));
        let ph = eval_character(&Character::new(0, 1, 2, 0), &QuotientPoint::new(0, vec![1, 1]), &s).unwrap();
        assert_eq!(ph.unwrap().value(), &rat(1, 3));

        let s2 = space(3, 2, 2);
        let ph = eval_character(&Character::new(1, 1, 1, 0), &QuotientPoint::new(1, vec![1, 0]), &s2).unwrap();
        assert_eq!(ph, None);
    }

    #[test]
    fn evaluation_errors() {
        let s = space(2, 1, 2);
        let x = QuotientPoint::new(0, vec![1, 0]);
        assert_eq!(eval_character(&Character::new(0, 1, 1, 0), &x, &s), Err(Error::CharactersNeedOddPrime));
        let s = space(3, 1, 2);
        let x = QuotientPoint::new(0, vec![1, 0]);
        assert_eq!(
            eval_character(&Character::new(0, 1, 3, 0), &x, &s),
            Err(Error::ConductorExceedsTruncation { n: 3, d: 2 })
        );
    }

    #[test]
    fn table_agrees_with_direct_evaluation() {
        let s = space(5, 2, 3);
        let table = CharacterTable::new(&s).unwrap();
        for chi in characters_up_to(5, 3, 1).iter().step_by(7) {
            for i in (0..s.n_points()).step_by(5) {
                let x = s.point_at(i);
                assert_eq!(table.phase(chi, i).unwrap(), eval_character(chi, &x, &s).unwrap());
            }
        }
    }

    #[test]
    fn enumeration_counts() {
        for p in [3u64, 5, 7] {
            assert_eq!(characters_of_conductor(p, 1, 0).len() as u64, p - 2);
            for n in 2..5 {
                assert_eq!(characters_of_conductor(p, n, 0).len() as u64, (p - 1) * p.pow(n - 1) - (p - 1) * p.pow(n - 2));
                assert_eq!(characters_up_to(p, n, 0).len() as u64, (p - 1) * p.pow(n - 1));
            }
        }
    }

    #[test]
    fn inner_product_examples() {
        let s = space(3, 2, 1);
        let one = vec![Complex64::new(1.0, 0.0); 4];
        let ip = inner_product(&one, &one, &s).unwrap();
        assert!((ip.re - 4.0 / 3.0).abs() < 1e-15 && ip.im == 0.0);
        assert_eq!(
            inner_product(&one, &one[..3], &s),
            Err(Error::LengthMismatch { expected: 4, got: 3 })
        );

        let s = space(3, 1, 2);
        let table = CharacterTable::new(&s).unwrap();
        let phi = table.vector(&Character::new(1, 1, 1, 0)).unwrap();
        let triv = table.vector(&Character::new(0, 1, 1, 0)).unwrap();
        assert!(inner_product(&phi, &triv, &s).unwrap().norm() < 1e-15);
        let nn = inner_product(&phi, &phi, &s).unwrap();
        assert!((nn.re - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eigenbasis_counts_and_labels() {
        let s = space(3, 1, 1);
        let lm = build_level_matrices(3, 1).unwrap();
        let b = eigenbasis(&s, &lm, None).unwrap();
        assert_eq!(b.vectors.len(), 2);
        assert!(matches!(b.vectors[1].label, BasisLabel::Character(Character { h: 1, c: 1, n: 1, level: 0 })));

        let s = space(3, 2, 1);
        let lm = build_level_matrices(3, 2).unwrap();
        assert_eq!(eigenbasis(&s, &lm, None).unwrap().vectors.len(), 4);

        let s = space(3, 1, 2);
        let lm = build_level_matrices(3, 1).unwrap();
        let b = eigenbasis(&s, &lm, None).unwrap();
        let mut labels: Vec<f64> = b.vectors.iter().map(|v| v.eigenvalue).collect();
        labels.sort_by(|a, b| b.total_cmp(a));
        let want = [0.0, -2.0 / 3.0, -10.0 / 3.0, -10.0 / 3.0, -10.0 / 3.0, -10.0 / 3.0];
        for (a, b) in labels.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenbasis_is_orthogonal_complete_and_diagonalizes() {
        for (p, m, d) in [(3, 1, 3), (3, 2, 2), (5, 1, 2), (5, 2, 2), (7, 1, 2), (3, 3, 2)] {
            let s = space(p, m, d);
            let lm = build_level_matrices(p, m).unwrap();
            let lap = build_laplacian(&s).unwrap();
            let b = eigenbasis(&s, &lm, Some(&lap)).unwrap();
            assert_eq!(b.vectors.len(), s.n_points());
            let rep = orthogonality(&b, &s).unwrap();
            assert!(rep.max_off_diagonal <= 1e-12, "{s}: {rep:?}");
            assert!(rep.max_diagonal_deviation <= 1e-12, "{s}: {rep:?}");
            assert!(min_singular_value(&b).unwrap() > 1e-8);
            assert!(eigen_residual(&lap, &b) <= 1e-10, "{s}");
        }
    }

    #[test]
    fn numeric_fallback_for_two() {
        let s = space(2, 2, 3);
        let lm = build_level_matrices(2, 2).unwrap();
        let lap = build_laplacian(&s).unwrap();
        let b = eigenbasis(&s, &lm, Some(&lap)).unwrap();
        assert!(b.warning.is_some());
        assert_eq!(b.vectors.len(), s.n_points());
        let rep = orthogonality(&b, &s).unwrap();
        assert!(rep.max_off_diagonal <= 1e-12 && rep.max_diagonal_deviation <= 1e-12, "{rep:?}");
        assert!(eigen_residual(&lap, &b) <= 1e-10);
    }

    #[test]
    fn second_orthogonality_relation() {
        for (p, m, d) in [(3, 2, 3), (5, 1, 2)] {
            let s = space(p, m, d);
            let table = CharacterTable::new(&s).unwrap();
            let ls = s.level_size();
            let level = m as usize - 1;
            for i in (level * ls..(level + 1) * ls).step_by(2) {
                for j in level * ls..(level + 1) * ls {
                    for n in 1..=d {
                        let (sum, want) = second_orthogonality(&table, i, j, n).unwrap();
                        assert!((sum - Complex64::new(want, 0.0)).norm() <= 1e-10, "{s} {i} {j} {n}");
                    }
                }
            }
        }
    }

    #[test]
    fn phase_arithmetic() {
        let a = Phase::new(rat(5, 4));
        assert_eq!(a.value(), &rat(1, 4));
        assert_eq!(a.add(&Phase::new(rat(3, 4))), Phase::zero());
        assert_eq!(Phase::new(rat(-1, 3)).value(), &rat(2, 3));
        let z = Phase::new(rat(1, 2)).to_complex();
        assert!((z.re + 1.0).abs() < 1e-15 && z.im.abs() < 1e-15);
    }
}
