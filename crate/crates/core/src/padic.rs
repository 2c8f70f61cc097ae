//! Truncated p-adic arithmetic on the finite quotient `X_{m,d}`.
//!
//! A point is `p^l (b_0 + b_1 p + ... + b_{d-1} p^{d-1})` with level `l` in
//! `[0, m)` and unit digit `b_0 != 0`. Points are ordered lexicographically by
//! `(level, b_0, ..., b_{d-1})`; that order fixes every matrix index in the crate.
//! Everything here is exact: valuations are integers, weights are rationals.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// An integer extended by `+inf`, used for valuations of zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Valuation {
    Finite(i64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<i64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

impl PartialOrd for Valuation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Valuation {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Valuation::Finite(a), Valuation::Finite(b)) => a.cmp(b),
            (Valuation::Finite(_), Valuation::Infinite) => Ordering::Less,
            (Valuation::Infinite, Valuation::Finite(_)) => Ordering::Greater,
            (Valuation::Infinite, Valuation::Infinite) => Ordering::Equal,
        }
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2u64;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 1;
    }
    true
}

/// The parameters `(p, m, d)` of `X_{m,d} = Q_p^x / p^{mZ} / (1 + p^d Z_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QuotientSpace {
    pub p: u64,
    pub m: u32,
    pub d: u32,
}

impl QuotientSpace {
    pub fn new(p: u64, m: u32, d: u32) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::InvalidSpace(format!("p = {p} is not prime")));
        }
        if m == 0 {
            return Err(Error::InvalidSpace("m must be at least 1".into()));
        }
        if d == 0 {
            return Err(Error::InvalidSpace("d must be at least 1".into()));
        }
        if (p as f64).powi(d as i32) * (m as f64) > 1e15 {
            return Err(Error::InvalidSpace(format!("p^d = {p}^{d} is too large")));
        }
        Ok(Self { p, m, d })
    }

    /// `p^k` as an integer.
    pub fn pow(&self, k: u32) -> u64 {
        self.p.pow(k)
    }

    /// Number of points on one level, `(p-1) p^{d-1}`.
    pub fn level_size(&self) -> usize {
        ((self.p - 1) * self.pow(self.d - 1)) as usize
    }

    pub fn n_points(&self) -> usize {
        self.m as usize * self.level_size()
    }

    /// Haar mass of one atom, `p^{-d}`.
    pub fn atom_measure(&self) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::from(self.pow(self.d)))
    }

    /// Total Haar volume `m (1 - 1/p)`.
    pub fn volume(&self) -> BigRational {
        BigRational::new(BigInt::from(self.m as u64 * (self.p - 1)), BigInt::from(self.p))
    }

    pub fn atom_f64(&self) -> f64 {
        (self.p as f64).powi(-(self.d as i32))
    }

    pub fn volume_f64(&self) -> f64 {
        self.m as f64 * (1.0 - 1.0 / self.p as f64)
    }

    /// Index of `x` in the lexicographic point order.
    pub fn index_of(&self, x: &QuotientPoint) -> usize {
        let p = self.p as usize;
        let mut idx = x.digits[0] as usize - 1;
        for &b in &x.digits[1..] {
            idx = idx * p + b as usize;
        }
        x.level as usize * self.level_size() + idx
    }

    pub fn point_at(&self, index: usize) -> QuotientPoint {
        let n = self.level_size();
        let level = (index / n) as u32;
        let mut rest = index % n;
        let p = self.p as usize;
        let mut digits = vec![0u32; self.d as usize];
        for i in (1..self.d as usize).rev() {
            digits[i] = (rest % p) as u32;
            rest /= p;
        }
        digits[0] = rest as u32 + 1;
        QuotientPoint { level, digits }
    }

    pub fn contains(&self, x: &QuotientPoint) -> bool {
        x.level < self.m
            && x.digits.len() == self.d as usize
            && x.digits[0] != 0
            && x.digits.iter().all(|&b| (b as u64) < self.p)
    }

    pub fn check(&self, x: &QuotientPoint) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::InvalidPoint(format!(
                "{x} is not a point of X_{{{},{}}} with p = {}",
                self.m, self.d, self.p
            )))
        }
    }

    /// Parse `"l:b0,b1,..."` and check membership.
    pub fn parse_point(&self, s: &str) -> Result<QuotientPoint> {
        let x: QuotientPoint = s.parse()?;
        self.check(&x)?;
        Ok(x)
    }
}

impl fmt::Display for QuotientSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.m, self.d)
    }
}

/// A point `p^level (b_0 + b_1 p + ...)` of the quotient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct QuotientPoint {
    pub level: u32,
    pub digits: Vec<u32>,
}

impl QuotientPoint {
    pub fn new(level: u32, digits: Vec<u32>) -> Self {
        Self { level, digits }
    }

    /// The unit part `b_0 + b_1 p + ...` as an integer.
    pub fn unit(&self, p: u64) -> u64 {
        self.digits.iter().rev().fold(0u64, |acc, &b| acc * p + b as u64)
    }

    /// `|x|_p = p^{-level}`.
    pub fn norm(&self, p: u64) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::from(p).pow(self.level))
    }

    /// Number of leading digits shared with `other`.
    pub fn common_prefix(&self, other: &QuotientPoint) -> usize {
        self.digits
            .iter()
            .zip(&other.digits)
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// The same point seen at a larger truncation depth (digits padded with zeros).
    pub fn extended(&self, d: u32) -> QuotientPoint {
        let mut digits = self.digits.clone();
        digits.resize(d as usize, 0);
        QuotientPoint { level: self.level, digits }
    }
}

impl fmt::Display for QuotientPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.level)?;
        for (i, b) in self.digits.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for QuotientPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidPoint(format!("expected \"l:b0,b1,...\", got {s:?}"));
        let (level, digits) = s.trim().split_once(':').ok_or_else(bad)?;
        let level = level.trim().parse().map_err(|_| bad())?;
        let digits = digits
            .split(',')
            .map(|b| b.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if digits.is_empty() {
            return Err(bad());
        }
        Ok(QuotientPoint { level, digits })
    }
}

/// All points of the space in index order.
pub fn enumerate_points(space: &QuotientSpace) -> Vec<QuotientPoint> {
    (0..space.n_points()).map(|i| space.point_at(i)).collect()
}

fn v_p(mut n: u64, p: u64) -> u32 {
    debug_assert!(n != 0);
    let mut v = 0;
    while n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

/// `v_p(x - y)` computed on the canonical representatives.
pub fn diff_valuation(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace) -> Valuation {
    if x.level != y.level {
        return Valuation::Finite(x.level.min(y.level) as i64);
    }
    if x.digits == y.digits {
        return Valuation::Infinite;
    }
    let (a, b) = (x.unit(space.p), y.unit(space.p));
    Valuation::Finite(x.level as i64 + v_p(a.abs_diff(b), space.p) as i64)
}

/// `M` with `d(x, y) = |x - y| / max(|x|, |y|) = p^{-M}`.
pub fn distance_valuation(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace) -> Result<i64> {
    match diff_valuation(x, y, space) {
        Valuation::Infinite => Err(Error::OnDiagonal),
        Valuation::Finite(v) => Ok(v - x.level.min(y.level) as i64),
    }
}

/// Exponent `e` with `|x| |y| / |x - y|^2 = p^e`.
pub fn kernel_exponent(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace) -> Result<i64> {
    match diff_valuation(x, y, space) {
        Valuation::Infinite => Err(Error::OnDiagonal),
        Valuation::Finite(v) => Ok(2 * v - x.level as i64 - y.level as i64),
    }
}

/// `p^e` as an exact rational.
pub fn rational_pow(p: u64, e: i64) -> BigRational {
    let base = BigInt::from(p).pow(e.unsigned_abs() as u32);
    if e >= 0 {
        BigRational::from_integer(base)
    } else {
        BigRational::new(BigInt::one(), base)
    }
}

/// Laplacian kernel weight `|x| |y| / |x - y|^2`.
pub fn kernel_weight(x: &QuotientPoint, y: &QuotientPoint, space: &QuotientSpace) -> Result<BigRational> {
    Ok(rational_pow(space.p, kernel_exponent(x, y, space)?))
}

fn big_v_p(n: &BigInt, p: &BigInt) -> Valuation {
    if n.is_zero() {
        return Valuation::Infinite;
    }
    let mut n = n.clone();
    let mut v = 0;
    loop {
        let (q, r) = n.div_rem(p);
        if !r.is_zero() {
            return Valuation::Finite(v);
        }
        n = q;
        v += 1;
    }
}

fn floor_log(j: u64, p: u64) -> u32 {
    let mut e = 0;
    let mut pe = p;
    while pe <= j {
        e += 1;
        pe *= p;
    }
    e
}

/// `ln(u) mod p^k` for an integer `u = 1 mod p`, via the Mercator series.
///
/// The series is summed until every remaining term `t^j / j` has valuation
/// at least `k`; division by `j` is exact after stripping `p^{v_p(j)}`.
pub fn padic_log_int(u: &BigInt, k: u32, p: u64) -> Result<BigInt> {
    if p == 2 {
        return Err(Error::DyadicLog);
    }
    let pb = BigInt::from(p);
    let t = u - BigInt::one();
    let vt = match big_v_p(&t, &pb) {
        Valuation::Infinite => return Ok(BigInt::zero()),
        Valuation::Finite(0) => return Err(Error::NotPrincipalUnit(u.to_string())),
        Valuation::Finite(v) => v as u64,
    };
    let modulus = pb.pow(k);
    let mut sum = BigInt::zero();
    let mut j = 1u64;
    // j*vt - floor(log_p j) is nondecreasing in j, so the first j reaching k ends the sum.
    while j * vt < k as u64 + floor_log(j, p) as u64 {
        let e = v_p(j, p);
        let cofactor = BigInt::from(j / p.pow(e));
        let wide = pb.pow(k + e);
        let power = t.modpow(&BigInt::from(j), &wide);
        let term = (power / pb.pow(e)).mod_floor(&modulus);
        let inv = cofactor
            .modinv(&modulus)
            .expect("cofactor of j is prime to p");
        let term = (term * inv).mod_floor(&modulus);
        if j % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        j += 1;
    }
    Ok(sum.mod_floor(&modulus))
}

/// `ln(u) mod p^k` for `u` given by base-`p` digits (least significant first).
pub fn padic_log_unit(u_digits: &[u32], k: u32, p: u64) -> Result<BigInt> {
    if p == 2 {
        return Err(Error::DyadicLog);
    }
    if k as usize > u_digits.len() {
        return Err(Error::InvalidArgument(format!(
            "precision {k} exceeds the {} available digits",
            u_digits.len()
        )));
    }
    let pb = BigInt::from(p);
    let u = u_digits
        .iter()
        .rev()
        .fold(BigInt::zero(), |acc, &b| acc * &pb + BigInt::from(b));
    padic_log_int(&u, k, p)
}

/// Smallest primitive root modulo the prime `p`.
pub fn primitive_root(p: u64) -> u64 {
    if p == 2 {
        return 1;
    }
    let phi = p - 1;
    let mut factors = Vec::new();
    let mut n = phi;
    let mut f = 2;
    while f * f <= n {
        if n.is_multiple_of(f) {
            factors.push(f);
            while n.is_multiple_of(f) {
                n /= f;
            }
        }
        f += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    (2..p)
        .find(|&g| factors.iter().all(|&q| mod_pow(g, phi / q, p) != 1))
        .expect("every prime has a primitive root")
}

fn mod_pow(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = (r as u128 * b as u128 % m as u128) as u64;
        }
        b = (b as u128 * b as u128 % m as u128) as u64;
        e >>= 1;
    }
    r
}

/// `ord` with `g^ord = a0 mod p`, `g` the smallest primitive root.
pub fn discrete_log(a0: u64, p: u64) -> Result<u64> {
    if a0.is_multiple_of(p) {
        return Err(Error::NotAUnit(a0));
    }
    if p == 2 {
        return Ok(0);
    }
    let g = primitive_root(p);
    let target = a0 % p;
    let mut acc = 1u64;
    for k in 0..p - 1 {
        if acc == target {
            return Ok(k);
        }
        acc = acc * g % p;
    }
    unreachable!("g is a primitive root")
}

/// Table `ord(a)` for `a = 1..p-1` (index `a - 1`).
pub fn discrete_log_table(p: u64) -> Vec<u64> {
    let mut table = vec![0u64; (p - 1) as usize];
    if p > 2 {
        let g = primitive_root(p);
        let mut acc = 1u64;
        for k in 0..p - 1 {
            table[(acc - 1) as usize] = k;
            acc = acc * g % p;
        }
    }
    table
}

/// p-adic fractional part of `num / den` with `den` a power of `p`.
pub fn fractional_part(num: &BigInt, den: &BigInt) -> BigRational {
    debug_assert!(den.is_positive());
    BigRational::new(num.mod_floor(den), den.clone())
}

/// Lossy conversion used at the exact/floating boundary.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
