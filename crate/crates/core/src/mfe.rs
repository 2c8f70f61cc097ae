//! The discrete mean field equation `A u + rho e^u = rho p^d e_y`.
//!
//! Full solves use damped Newton on all `m (p-1) p^{d-1}` unknowns. Radial
//! solves use one unknown per orbit of the stabilizer of `y`: the other levels
//! and the shells at the level of `y`, which turns the problem into `m + d`
//! unknowns (one fewer when `p = 2`, where the outer shell is empty).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::green::green_numeric;
use crate::linalg::{dot, jacobi_eigen, lu_solve, norm_inf, Ldlt, Matrix};
use crate::padic::{enumerate_points, QuotientPoint, QuotientSpace};
use crate::spectral::{LaplacianMatrix, LevelMatrices};

#[derive(Debug, Clone, PartialEq)]
pub struct MfeProblem {
    pub space: QuotientSpace,
    pub rho: f64,
    pub y: QuotientPoint,
}

impl MfeProblem {
    pub fn new(space: QuotientSpace, rho: f64, y: QuotientPoint) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rho must be positive and finite, got {rho}")));
        }
        space.check(&y)?;
        Ok(MfeProblem { space, rho, y })
    }

    /// `rho p^d e_y`.
    pub fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.space.n_points()];
        b[self.space.index_of(&self.y)] = self.rho * self.space.pow(self.space.d) as f64;
        b
    }

    /// `A u + rho e^u - b`.
    pub fn residual(&self, lap: &LaplacianMatrix, u: &[f64]) -> Vec<f64> {
        residual_with_rhs(lap, self.rho, u, &self.rhs())
    }
}

pub fn residual_with_rhs(lap: &LaplacianMatrix, rho: f64, u: &[f64], b: &[f64]) -> Vec<f64> {
    let au = lap.apply(u);
    au.iter()
        .zip(u)
        .zip(b)
        .map(|((a, ui), bi)| a + rho * ui.exp() - bi)
        .collect()
}

/// `A u` without storing `A`; `O(n^2)` kernel evaluations.
///
/// Differences are bucketed by kernel exponent and summed with compensation,
/// so the result stays accurate to a few ulps of the largest term.
pub fn apply_laplacian_matrix_free(space: &QuotientSpace, u: &[f64]) -> Vec<f64> {
    let points = enumerate_points(space);
    let p = space.p as f64;
    let d = space.d as i32;
    // exponents range over [-(m-1), 2(d-1)]
    let lo = -(space.m as i32 - 1);
    let table: Vec<f64> = (lo..=2 * (d - 1)).map(|e| p.powi(e - d)).collect();
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut buckets = vec![(0.0f64, 0.0f64); table.len()];
            for (j, z) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let e = if x.level == z.level {
                    2 * x.common_prefix(z) as i32
                } else {
                    -(x.level.abs_diff(z.level) as i32)
                };
                let (sum, comp) = &mut buckets[(e - lo) as usize];
                neumaier_add(sum, comp, u[j] - u[i]);
            }
            let (mut sum, mut comp) = (0.0, 0.0);
            for ((s, c), w) in buckets.iter().zip(&table) {
                neumaier_add(&mut sum, &mut comp, w * (s + c));
            }
            sum + comp
        })
        .collect()
}

fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    Zero,
    /// `rho G(., y)` shifted so that `sum e^u = p^d`.
    Green,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-12, max_iter: 200 }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
const PIVOT_TOL: f64 = 1e-14;

struct NewtonOutcome {
    u: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn newton(
    mut u: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> Matrix,
    opts: NewtonOptions,
) -> Result<NewtonOutcome> {
    // the Newton step is a descent direction for the 2-norm, not the sup norm
    let l2 = |v: &[f64]| dot(v, v).sqrt();
    let mut f = residual(&u);
    let mut norm = norm_inf(&f);
    for it in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok(NewtonOutcome { u, residual: norm, iterations: it });
        }
        let j = jacobian(&u);
        let step = lu_solve(&j, &f, PIVOT_TOL)?;
        let merit = l2(&f);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
            let ft = residual(&trial);
            let mt = l2(&ft);
            if mt.is_finite() && mt <= (1.0 - ARMIJO * alpha) * merit {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, ft)) => {
                u = trial;
                norm = norm_inf(&ft);
                f = ft;
            }
            None => return Err(Error::Diverged { iterations: it, residual: norm }),
        }
    }
    if norm <= opts.tol {
        return Ok(NewtonOutcome { u, residual: norm, iterations: opts.max_iter });
    }
    Err(Error::Diverged { iterations: opts.max_iter, residual: norm })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitValue {
    pub label: OrbitLabel,
    pub size: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MfeSolution {
    pub u: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    pub orbit_values: Option<Vec<OrbitValue>>,
    /// `sum_i e^{u_i}`; equals `p^d` at an exact solution.
    pub mass: f64,
}

fn mass(u: &[f64]) -> f64 {
    u.iter().map(|v| v.exp()).sum()
}

fn initial_vector(problem: &MfeProblem, lap: &LaplacianMatrix, init: &InitialGuess) -> Result<Vec<f64>> {
    let n = problem.space.n_points();
    match init {
        InitialGuess::Zero => Ok(vec![0.0; n]),
        InitialGuess::Green => {
            let g = green_numeric(lap, &problem.y)?;
            let v: Vec<f64> = g.iter().map(|x| problem.rho * x).collect();
            let shift = (problem.space.pow(problem.space.d) as f64 / mass(&v)).ln();
            Ok(v.iter().map(|x| x + shift).collect())
        }
        InitialGuess::Vector(v) => {
            if v.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: v.len() });
            }
            Ok(v.clone())
        }
    }
}

/// Variational form of the equation, used when plain Newton stalls.
///
/// With `S = diag(n) L` symmetric (`n` the class sizes, `L` the operator) the
/// solutions are `u = w + ln(p^d / sum n e^w)` for critical points `w` of the
/// coercive energy `E(w) = -w.Sw/2 - q ln sum n e^w + q w_src + (n.w)^2 / 2N`,
/// `q = rho p^d`.
struct Energy {
    s: Matrix,
    weights: Vec<f64>,
    src: usize,
    q: f64,
    total: f64,
}

impl Energy {
    fn log_partition(&self, w: &[f64]) -> f64 {
        let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + w.iter().zip(&self.weights).map(|(x, n)| n * (x - top).exp()).sum::<f64>().ln()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let nw = dot(&self.weights, w);
        let big_n: f64 = self.weights.iter().sum();
        -0.5 * dot(w, &self.s.matvec(w)) - self.q * self.log_partition(w) + self.q * w[self.src] + 0.5 * nw * nw / big_n
    }

    /// Newton with a shifted Hessian and Armijo backtracking on `E`.
    fn descend(&self, u0: &[f64], max_iter: usize) -> Result<(Vec<f64>, usize)> {
        let k = u0.len();
        let big_n: f64 = self.weights.iter().sum();
        let mean = dot(&self.weights, u0) / big_n;
        let mut w: Vec<f64> = u0.iter().map(|x| x - mean).collect();
        let scale = self.s.max_abs().max(self.q);
        let mut iterations = 0;
        for _ in 0..max_iter {
            iterations += 1;
            let lz = self.log_partition(&w);
            let pi: Vec<f64> = w.iter().zip(&self.weights).map(|(x, n)| n * (x - lz).exp()).collect();
            let sw = self.s.matvec(&w);
            let nw = dot(&self.weights, &w);
            let g: Vec<f64> = (0..k)
                .map(|i| -sw[i] - self.q * pi[i] + if i == self.src { self.q } else { 0.0 } + self.weights[i] * nw / big_n)
                .collect();
            if norm_inf(&g) <= 1e-10 * scale {
                break;
            }
            let mut h = Matrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    h[(i, j)] = -self.s[(i, j)] + self.q * pi[i] * pi[j] + self.weights[i] * self.weights[j] / big_n;
                }
                h[(i, i)] -= self.q * pi[i];
            }
            let mut shift = 0.0;
            let ldlt = loop {
                let mut hs = h.clone();
                for i in 0..k {
                    hs[(i, i)] += shift;
                }
                match Ldlt::factor(&hs, 1e-12 * scale) {
                    Ok(f) if f.pivots().iter().all(|&d| d > 0.0) => break f,
                    _ => shift = if shift == 0.0 { 1e-8 * scale } else { shift * 4.0 },
                }
            };
            let step: Vec<f64> = ldlt.solve(&g).iter().map(|x| -x).collect();
            let slope = dot(&g, &step);
            let e0 = self.value(&w);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
                if self.value(&trial) <= e0 + ARMIJO * alpha * slope {
                    w = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let shift = self.total.ln() - self.log_partition(&w);
        Ok((w.iter().map(|x| x + shift).collect(), iterations))
    }
}

/// Newton on `F`; if it stalls (nonzero local minimum of `|F|`) or crawls
/// through the budget, descend the energy and polish with Newton again.
fn globalized_newton(
    u0: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64> + Copy,
    jacobian: impl Fn(&[f64]) -> Matrix + Copy,
    energy: &Energy,
    opts: NewtonOptions,
) -> Result<NewtonOutcome> {
    match newton(u0.clone(), residual, jacobian, opts) {
        Ok(out) => Ok(out),
        Err(e @ (Error::Diverged { .. } | Error::NearDegenerate(_))) => {
            let spent = match e {
                Error::Diverged { iterations, .. } => iterations,
                _ => 0,
            };
            let (start, descent) = energy.descend(&u0, opts.max_iter)?;
            let mut out = newton(start, residual, jacobian, opts)?;
            out.iterations += spent + descent;
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

fn with_exp_diagonal(base: &Matrix, rho: f64, u: &[f64]) -> Matrix {
    let mut j = base.clone();
    for (i, ui) in u.iter().enumerate() {
        j[(i, i)] += rho * ui.exp();
    }
    j
}

/// Damped Newton on all unknowns.
pub fn solve_full(
    problem: &MfeProblem,
    lap: &LaplacianMatrix,
    init: &InitialGuess,
    opts: NewtonOptions,
) -> Result<MfeSolution> {
    if lap.space != problem.space {
        return Err(Error::InvalidArgument("Laplacian built for a different space".into()));
    }
    let u0 = initial_vector(problem, lap, init)?;
    let b = problem.rhs();
    let rho = problem.rho;
    let total = problem.space.pow(problem.space.d) as f64;
    let energy = Energy {
        s: lap.a.clone(),
        weights: vec![1.0; u0.len()],
        src: problem.space.index_of(&problem.y),
        q: rho * total,
        total,
    };
    let out = globalized_newton(
        u0,
        |u: &[f64]| residual_with_rhs(lap, rho, u, &b),
        |u: &[f64]| with_exp_diagonal(&lap.a, rho, u),
        &energy,
        opts,
    )?;
    let residual_inf = norm_inf(&problem.residual(lap, &out.u));
    if residual_inf > opts.tol {
        return Err(Error::Diverged { iterations: out.iterations, residual: residual_inf });
    }
    Ok(MfeSolution {
        mass: mass(&out.u),
        residual_inf,
        iterations: out.iterations,
        orbit_values: None,
        u: out.u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrbitLabel {
    /// Every point on another level.
    OffLevel { level: u32 },
    /// Points on the level of `y` sharing exactly `s + 1` leading digits with it;
    /// `s = d - 1` is `y` itself.
    Shell { s: i32 },
}

impl fmt::Display for OrbitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrbitLabel::OffLevel { level } => write!(f, "level{level}"),
            OrbitLabel::Shell { s } => write!(f, "shell{s}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Orbit {
    pub label: OrbitLabel,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitPartition {
    pub y: QuotientPoint,
    /// Off-level classes by level, then shells `s = -1..=d-1`. Empty classes are kept.
    pub classes: Vec<Orbit>,
    pub orbit_of: Vec<usize>,
}

impl OrbitPartition {
    pub fn sizes(&self) -> Vec<(OrbitLabel, usize)> {
        self.classes.iter().map(|c| (c.label, c.members.len())).collect()
    }

    pub fn nonempty(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&i| !self.classes[i].members.is_empty()).collect()
    }

    pub fn index_of(&self, label: OrbitLabel) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    /// Largest `max - min` of `u` over a class.
    pub fn max_spread(&self, u: &[f64]) -> f64 {
        self.classes
            .iter()
            .filter(|c| !c.members.is_empty())
            .map(|c| {
                let (lo, hi) = c
                    .members
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(u[i]), hi.max(u[i])));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    pub fn orbit_means(&self, u: &[f64]) -> Vec<Option<f64>> {
        self.classes
            .iter()
            .map(|c| {
                (!c.members.is_empty()).then(|| c.members.iter().map(|&i| u[i]).sum::<f64>() / c.members.len() as f64)
            })
            .collect()
    }
}

pub fn orbit_partition(space: &QuotientSpace, y: &QuotientPoint) -> Result<OrbitPartition> {
    space.check(y)?;
    let mut classes: Vec<Orbit> = (0..space.m)
        .filter(|&k| k != y.level)
        .map(|level| Orbit { label: OrbitLabel::OffLevel { level }, members: Vec::new() })
        .collect();
    let first_shell = classes.len();
    classes.extend((-1..space.d as i32).map(|s| Orbit { label: OrbitLabel::Shell { s }, members: Vec::new() }));
    let mut orbit_of = Vec::with_capacity(space.n_points());
    for (i, x) in enumerate_points(space).iter().enumerate() {
        let c = if x.level != y.level {
            let k = x.level as usize;
            if k < y.level as usize {
                k
            } else {
                k - 1
            }
        } else {
            first_shell + x.common_prefix(y)
        };
        classes[c].members.push(i);
        orbit_of.push(c);
    }
    Ok(OrbitPartition { y: y.clone(), classes, orbit_of })
}

/// Expected class sizes: `(p-1)p^{d-1}` off level, `(p-2)p^{d-1}` for `s = -1`,
/// `(p-1)p^{d-2-s}` for `0 <= s <= d-2`, and 1 for `y`.
pub fn orbit_size(space: &QuotientSpace, label: OrbitLabel) -> usize {
    let (p, d) = (space.p as usize, space.d as i32);
    match label {
        OrbitLabel::OffLevel { .. } => space.level_size(),
        OrbitLabel::Shell { s: -1 } => (p - 2) * p.pow(d as u32 - 1),
        OrbitLabel::Shell { s } if s == d - 1 => 1,
        OrbitLabel::Shell { s } => (p - 1) * p.pow((d - 2 - s) as u32),
    }
}

/// Total kernel weight (in units of `B`) from one point of class `from` to all of class `to`, `from != to`.
pub fn orbit_coupling(space: &QuotientSpace, y_level: u32, from: OrbitLabel, to: OrbitLabel) -> f64 {
    let p = space.p as f64;
    let n = space.level_size() as f64;
    let size = |l| orbit_size(space, l) as f64;
    let lvl = |a: u32, b: u32| p.powi(-(a.abs_diff(b) as i32));
    match (from, to) {
        (OrbitLabel::OffLevel { level: a }, OrbitLabel::OffLevel { level: b }) => n * lvl(a, b),
        (OrbitLabel::OffLevel { level }, OrbitLabel::Shell { .. }) => size(to) * lvl(level, y_level),
        (OrbitLabel::Shell { .. }, OrbitLabel::OffLevel { level }) => n * lvl(level, y_level),
        (OrbitLabel::Shell { s }, OrbitLabel::Shell { s: t }) => size(to) * p.powi(2 * (s.min(t) + 1)),
    }
}

/// Reduced operator `L_red[o][o'] = p^{-d} coupling`, diagonal minus the row sum, over nonempty classes.
fn reduced_operator(space: &QuotientSpace, part: &OrbitPartition, live: &[usize]) -> Matrix {
    let k = live.len();
    let atom = space.atom_f64();
    let mut l = Matrix::zeros(k, k);
    for (a, &oa) in live.iter().enumerate() {
        let mut diag = 0.0;
        for (b, &ob) in live.iter().enumerate() {
            if a != b {
                let c = atom * orbit_coupling(space, part.y.level, part.classes[oa].label, part.classes[ob].label);
                l[(a, b)] = c;
                diag += c;
            }
        }
        l[(a, a)] = -diag;
    }
    l
}

/// Newton on one unknown per orbit, lifted and certified against the full equation.
pub fn solve_radial(problem: &MfeProblem, opts: NewtonOptions) -> Result<MfeSolution> {
    let space = &problem.space;
    let part = orbit_partition(space, &problem.y)?;
    let live = part.nonempty();
    let l = reduced_operator(space, &part, &live);
    let src = live
        .iter()
        .position(|&o| part.classes[o].label == OrbitLabel::Shell { s: space.d as i32 - 1 })
        .expect("y is its own orbit");
    let rho = problem.rho;
    let total = space.pow(space.d) as f64;
    let source = rho * total;
    let weights: Vec<f64> = live.iter().map(|&o| part.classes[o].members.len() as f64).collect();
    let mut sym = l.clone();
    for (i, n) in weights.iter().enumerate() {
        for j in 0..live.len() {
            sym[(i, j)] *= n;
        }
    }
    // symmetrize away rounding
    for i in 0..live.len() {
        for j in 0..i {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let energy = Energy { s: sym, weights, src, q: source, total };
    let residual = |u: &[f64]| -> Vec<f64> {
        let lu = l.matvec(u);
        (0..u.len())
            .map(|i| lu[i] + rho * u[i].exp() - if i == src { source } else { 0.0 })
            .collect()
    };
    let jacobian = |u: &[f64]| with_exp_diagonal(&l, rho, u);
    let reduced_tol = opts.tol * 0.1;
    let out = match globalized_newton(
        vec![0.0; live.len()],
        residual,
        jacobian,
        &energy,
        NewtonOptions { tol: reduced_tol, ..opts },
    ) {
        Ok(o) => o,
        // the reduced residual may stall between tol/10 and tol at the rounding floor
        Err(Error::Diverged { residual: r, .. }) if r <= opts.tol => {
            globalized_newton(vec![0.0; live.len()], residual, jacobian, &energy, opts)?
        }
        Err(e) => return Err(e),
    };
    let mut orbit = vec![f64::NAN; part.classes.len()];
    for (a, &o) in live.iter().enumerate() {
        orbit[o] = out.u[a];
    }
    let u: Vec<f64> = part.orbit_of.iter().map(|&o| orbit[o]).collect();
    let au = apply_laplacian_matrix_free(space, &u);
    let b = problem.rhs();
    let full: Vec<f64> = (0..u.len()).map(|i| au[i] + rho * u[i].exp() - b[i]).collect();
    let lifted = norm_inf(&full);
    if lifted > opts.tol {
        return Err(Error::ReductionInconsistent { reduced: out.residual, lifted });
    }
    let orbit_values = live
        .iter()
        .map(|&o| OrbitValue { label: part.classes[o].label, size: part.classes[o].members.len(), value: orbit[o] })
        .collect();
    Ok(MfeSolution {
        mass: mass(&u),
        u,
        residual_inf: lifted,
        iterations: out.iterations,
        orbit_values: Some(orbit_values),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// `p^{-d} - p^{-d-m}`.
    pub radial_fine: f64,
    /// `(p-2)/p (1 - p^{-m})`, or `(1 - 2^{-m})/4` for `p = 2`.
    pub radial_coarse: f64,
    pub uniqueness: f64,
    /// Uniform upper bound on `u`.
    pub bound: f64,
    /// Whether `max u < bound` is strict.
    pub bound_strict: bool,
}

pub fn thresholds(space: &QuotientSpace, lm: &LevelMatrices) -> Thresholds {
    let p = space.p as f64;
    let (m, d) = (space.m as i32, space.d as i32);
    let radial_fine = p.powi(-d) - p.powi(-d - m);
    let radial_coarse = if space.p == 2 {
        (1.0 - 2f64.powi(-m)) / 4.0
    } else {
        (p - 2.0) / p * (1.0 - p.powi(-m))
    };
    // delta_{m,1}(1 + lambda_1) - lambda_1, with lambda_1 = 0 when m = 1
    let factor = match lm.lambda1() {
        Some(l1) if space.m > 1 => -l1,
        _ => 1.0,
    };
    let uniqueness = if space.p == 2 {
        factor / 8.0
    } else {
        (1.0 - 2.0 / p) * (1.0 - 1.0 / p) * factor
    };
    let (bound, bound_strict) = match (space.p, space.d) {
        (2, 1) => (p.ln(), space.m != 1),
        (2, _) => (4.0, true),
        _ => ((p / (p - 2.0)).ln(), true),
    };
    Thresholds { radial_fine, radial_coarse, uniqueness, bound, bound_strict }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// False when the hypothesis of the statement does not hold for this `rho`.
    pub applicable: bool,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Shell values at the level of `y`, ordered `s = -1..=d-1`, empty shells skipped.
fn shell_chain(part: &OrbitPartition, u: &[f64]) -> Vec<(i32, f64)> {
    let means = part.orbit_means(u);
    part.classes
        .iter()
        .zip(means)
        .filter_map(|(c, m)| match (c.label, m) {
            (OrbitLabel::Shell { s }, Some(v)) => Some((s, v)),
            _ => None,
        })
        .collect()
}

pub fn validate_structure(
    u: &[f64],
    problem: &MfeProblem,
    th: &Thresholds,
    lap: Option<&LaplacianMatrix>,
) -> Result<ValidationReport> {
    let space = &problem.space;
    if u.len() != space.n_points() {
        return Err(Error::LengthMismatch { expected: space.n_points(), got: u.len() });
    }
    let part = orbit_partition(space, &problem.y)?;
    let iy = space.index_of(&problem.y);
    let pd = space.pow(space.d) as f64;
    let max_u = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut checks = Vec::new();

    let total = mass(u);
    checks.push(Check {
        name: "mass",
        applicable: true,
        pass: (total - pd).abs() <= 1e-10 * pd,
        value: (total - pd).abs() / pd,
        limit: 1e-10,
    });

    let cap = space.d as f64 * (space.p as f64).ln();
    let equality_allowed = space.p == 2 && space.m == 1;
    checks.push(Check {
        name: "upper_bound_dlnp",
        applicable: true,
        pass: if equality_allowed { max_u <= cap + 1e-12 } else { max_u < cap },
        value: max_u,
        limit: cap,
    });

    let others = u
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != iy)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "unique_argmin_at_y",
        applicable: true,
        pass: u[iy] < others,
        value: others - u[iy],
        limit: 0.0,
    });

    checks.push(Check {
        name: "uniform_bound",
        applicable: true,
        pass: if th.bound_strict { max_u < th.bound } else { max_u <= th.bound + 1e-12 },
        value: max_u,
        limit: th.bound,
    });

    let radial = problem.rho <= th.radial_fine.max(th.radial_coarse);
    let spread = part.max_spread(u);
    checks.push(Check { name: "orbit_spread", applicable: radial, pass: !radial || spread <= 1e-9, value: spread, limit: 1e-9 });

    let chain = shell_chain(&part, u);
    let gaps: Vec<f64> = chain.windows(2).map(|w| w[0].1 - w[1].1).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "shell_chain",
        applicable: radial,
        pass: !radial || gaps.iter().all(|&g| g > 0.0),
        value: min_gap,
        limit: 0.0,
    });
    let worst_increase = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "shell_gaps_nonincreasing",
        applicable: radial,
        pass: !radial || worst_increase <= 1e-12,
        value: worst_increase,
        limit: 1e-12,
    });
    // same statement without the last gap, the one into y itself
    let interior = &gaps[..gaps.len().saturating_sub(1)];
    let worst_interior = interior.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "shell_gaps_nonincreasing_off_source",
        applicable: radial,
        pass: !radial || worst_interior <= 1e-12,
        value: worst_interior,
        limit: 1e-12,
    });

    if let Some(lap) = lap {
        let unique = problem.rho <= th.uniqueness;
        let mut j = lap.a.clone();
        for (i, ui) in u.iter().enumerate() {
            j[(i, i)] += problem.rho * ui.exp();
        }
        let eig = jacobi_eigen(&j, 1e-15)?;
        let smallest = eig.values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        checks.push(Check {
            name: "nondegenerate_linearization",
            applicable: unique,
            pass: !unique || smallest >= 1e-10,
            value: smallest,
            limit: 1e-10,
        });
    }

    Ok(ValidationReport { pass: checks.iter().all(|c| c.pass), checks })
}

/// Reverse the point order.
pub fn apply_j(u: &[f64]) -> Vec<f64> {
    u.iter().rev().copied().collect()
}

/// A unit of maximal multiplicative order mod `p^d` (a generator when the group is cyclic).
pub fn unit_generator(p: u64, d: u32) -> u64 {
    let modulus = p.pow(d);
    let order = |g: u64| {
        let mut x = g % modulus;
        let mut k = 1u64;
        while x != 1 % modulus {
            x = x * g % modulus;
            k += 1;
        }
        k
    };
    (1..modulus.max(2))
        .filter(|g| g % p != 0)
        .max_by_key(|&g| (order(g), std::cmp::Reverse(g)))
        .unwrap_or(1)
}

/// Permutation of the points on level `k` given by `x -> g x`, with `g` from
/// [`unit_generator`]; `perm[i]` is the image index of point `i`.
pub fn sigma_permutation(space: &QuotientSpace, k: u32) -> Result<Vec<usize>> {
    if k >= space.m {
        return Err(Error::InvalidArgument(format!("level {k} out of range 0..{}", space.m)));
    }
    let p = space.p;
    let modulus = p.pow(space.d);
    let g = unit_generator(p, space.d);
    let points = enumerate_points(space);
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if x.level != k {
                return i;
            }
            let n = x.digits.iter().rev().fold(0u64, |acc, &b| acc * p + b as u64);
            let mut img = n * g % modulus;
            let digits = (0..space.d)
                .map(|_| {
                    let b = (img % p) as u32;
                    img /= p;
                    b
                })
                .collect();
            space.index_of(&QuotientPoint::new(k, digits))
        })
        .collect())
}

/// `sigma_k`: one step of the cyclic shift on level `k`, realized in the
/// multiplicative order `x = g^i` of that level (where the level block of `A`
/// is circulant).
pub fn apply_sigma_k(space: &QuotientSpace, u: &[f64], k: u32) -> Result<Vec<f64>> {
    if u.len() != space.n_points() {
        return Err(Error::LengthMismatch { expected: space.n_points(), got: u.len() });
    }
    let perm = sigma_permutation(space, k)?;
    let mut out = vec![0.0; u.len()];
    for (i, &j) in perm.iter().enumerate() {
        out[j] = u[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Cluster {
    pub representative: Vec<f64>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub n_starts: usize,
    pub seed: u64,
    pub clusters: Vec<Cluster>,
    /// `(start index, message)` for starts that failed.
    pub divergences: Vec<(usize, String)>,
    /// Largest pairwise `inf`-distance inside a cluster.
    pub max_intra_distance: f64,
}

impl UniquenessReport {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }
}

pub const CLUSTER_TOL: f64 = 1e-8;

fn run_starts(
    problem: &MfeProblem,
    lap: &LaplacianMatrix,
    starts: Vec<Vec<f64>>,
    opts: NewtonOptions,
) -> Vec<Result<MfeSolution>> {
    let solve = |s: Vec<f64>| solve_full(problem, lap, &InitialGuess::Vector(s), opts);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        starts.into_par_iter().map(solve).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.into_iter().map(solve).collect()
    }
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Newton from `n_starts` seeded uniform starts in `[lo, hi]^n`, clustered at [`CLUSTER_TOL`].
pub fn uniqueness_probe(
    problem: &MfeProblem,
    lap: &LaplacianMatrix,
    n_starts: usize,
    seed: u64,
    bounds: (f64, f64),
    opts: NewtonOptions,
) -> Result<UniquenessReport> {
    if n_starts < 2 {
        return Err(Error::InvalidArgument("uniqueness probe needs at least 2 starts".into()));
    }
    let n = problem.space.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..n_starts)
        .map(|_| (0..n).map(|_| rng.gen_range(bounds.0..=bounds.1)).collect())
        .collect();
    let results = run_starts(problem, lap, starts, opts);
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut divergences = Vec::new();
    let mut solutions: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(sol) => {
                match clusters.iter_mut().find(|c| dist_inf(&c.representative, &sol.u) <= CLUSTER_TOL) {
                    Some(c) => c.members.push(i),
                    None => clusters.push(Cluster { representative: sol.u.clone(), members: vec![i] }),
                }
                solutions.push((i, sol.u));
            }
            Err(e) => divergences.push((i, e.to_string())),
        }
    }
    let mut max_intra = 0.0f64;
    for c in &clusters {
        for (a, &i) in c.members.iter().enumerate() {
            for &j in &c.members[a + 1..] {
                let ui = &solutions.iter().find(|s| s.0 == i).expect("member").1;
                let uj = &solutions.iter().find(|s| s.0 == j).expect("member").1;
                max_intra = max_intra.max(dist_inf(ui, uj));
            }
        }
    }
    Ok(UniquenessReport { n_starts, seed, clusters, divergences, max_intra_distance: max_intra })
}

/// `||(u - mean u) - rho (G - mean G)||_inf` with Haar means, at the solution from the Green start.
pub fn linearization_defect(lap: &LaplacianMatrix, y: &QuotientPoint, rho: f64) -> Result<f64> {
    let problem = MfeProblem::new(lap.space, rho, y.clone())?;
    let sol = solve_full(&problem, lap, &InitialGuess::Green, NewtonOptions::default())?;
    let g = green_numeric(lap, y)?;
    let n = sol.u.len() as f64;
    let mu = sol.u.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    Ok(sol
        .u
        .iter()
        .zip(&g)
        .map(|(u, g)| ((u - mu) - rho * (g - mg)).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthRow {
    pub d: u32,
    pub orbit_values: Vec<OrbitValue>,
    /// `p^{-d} sum e^u`, which is 1 at an exact solution.
    pub haar_mass: f64,
    pub residual_inf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthPair {
    pub d: u32,
    pub d_next: u32,
    /// Sup over shells `s <= d-2` and the other levels.
    pub sup_diff: f64,
    pub shell_sup_diff: f64,
    pub off_level_sup_diff: Option<f64>,
    /// `|u_d(y) - u_{d+1}(shell d-1)|`.
    pub source_gap_same_shell: f64,
    /// `|u_d(y) - u_{d+1}(y)|`.
    pub source_gap_deeper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub p: u64,
    pub m: u32,
    pub rho: f64,
    pub depths: Vec<DepthRow>,
    pub pairs: Vec<DepthPair>,
    pub strictly_decreasing: bool,
    pub max_mass_error: f64,
}

fn value_of(row: &DepthRow, label: OrbitLabel) -> Option<f64> {
    row.orbit_values.iter().find(|o| o.label == label).map(|o| o.value)
}

/// Radial solves for `d` in `d_min..=d_max` with `y` extended by zero digits.
pub fn convergence_study(p: u64, m: u32, rho: f64, y: &QuotientPoint, d_min: u32, d_max: u32) -> Result<ConvergenceStudy> {
    if d_min < y.digits.len() as u32 || d_min > d_max {
        return Err(Error::InvalidArgument(format!(
            "depth range {d_min}..={d_max} must start at or above the {} digits of y",
            y.digits.len()
        )));
    }
    let depths: Vec<u32> = (d_min..=d_max).collect();
    let solve = |d: u32| -> Result<DepthRow> {
        let space = QuotientSpace::new(p, m, d)?;
        let problem = MfeProblem::new(space, rho, y.extended(d))?;
        let sol = solve_radial(&problem, NewtonOptions::default())?;
        Ok(DepthRow {
            d,
            haar_mass: sol.mass * space.atom_f64(),
            residual_inf: sol.residual_inf,
            orbit_values: sol.orbit_values.expect("radial solve"),
        })
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<DepthRow>> = {
        use rayon::prelude::*;
        depths.par_iter().map(|&d| solve(d)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<DepthRow>> = depths.iter().map(|&d| solve(d)).collect();
    let rows: Vec<DepthRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mut shell_sup = 0.0f64;
        for s in -1..a.d as i32 - 1 {
            let label = OrbitLabel::Shell { s };
            if let (Some(x), Some(z)) = (value_of(a, label), value_of(b, label)) {
                shell_sup = shell_sup.max((x - z).abs());
            }
        }
        let off: Vec<f64> = (0..m)
            .filter(|&k| k != y.level)
            .filter_map(|level| {
                let label = OrbitLabel::OffLevel { level };
                Some((value_of(a, label)? - value_of(b, label)?).abs())
            })
            .collect();
        let off_sup = (!off.is_empty()).then(|| off.iter().copied().fold(0.0, f64::max));
        let src = OrbitLabel::Shell { s: a.d as i32 - 1 };
        let ya = value_of(a, src).expect("source");
        pairs.push(DepthPair {
            d: a.d,
            d_next: b.d,
            sup_diff: shell_sup.max(off_sup.unwrap_or(0.0)),
            shell_sup_diff: shell_sup,
            off_level_sup_diff: off_sup,
            source_gap_same_shell: (ya - value_of(b, src).expect("shell")).abs(),
            source_gap_deeper: (ya - value_of(b, OrbitLabel::Shell { s: b.d as i32 - 1 }).expect("source")).abs(),
        });
    }
    let strictly_decreasing = pairs.windows(2).all(|w| w[1].sup_diff < w[0].sup_diff);
    let max_mass_error = rows.iter().map(|r| (r.haar_mass - 1.0).abs()).fold(0.0, f64::max);
    Ok(ConvergenceStudy { p, m, rho, depths: rows, pairs, strictly_decreasing, max_mass_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padic::kernel_weight;
    use crate::spectral::{build_laplacian, build_level_matrices};
    use num_traits::ToPrimitive;

    fn space(p: u64, m: u32, d: u32) -> QuotientSpace {
        QuotientSpace::new(p, m, d).unwrap()
    }

    fn pt(s: &str) -> QuotientPoint {
        s.parse().unwrap()
    }

    fn setup(p: u64, m: u32, d: u32) -> (QuotientSpace, LevelMatrices, LaplacianMatrix) {
        let s = space(p, m, d);
        (s, build_level_matrices(p, m).unwrap(), build_laplacian(&s).unwrap())
    }

    #[test]
    fn partition_examples() {
        let sizes = |s: &QuotientSpace, y: &str| -> Vec<(OrbitLabel, usize)> {
            orbit_partition(s, &pt(y)).unwrap().sizes()
        };
        use OrbitLabel::*;
        assert_eq!(sizes(&space(3, 1, 2), "0:1,0"), vec![(Shell { s: -1 }, 3), (Shell { s: 0 }, 2), (Shell { s: 1 }, 1)]);
        assert_eq!(
            sizes(&space(3, 2, 1), "0:1"),
            vec![(OffLevel { level: 1 }, 2), (Shell { s: -1 }, 1), (Shell { s: 0 }, 1)]
        );
        assert_eq!(
            sizes(&space(2, 1, 3), "0:1,0,0"),
            vec![(Shell { s: -1 }, 0), (Shell { s: 0 }, 2), (Shell { s: 1 }, 1), (Shell { s: 2 }, 1)]
        );
    }

    #[test]
    fn partition_sizes_match_formula() {
        for (p, m, d) in [(3, 2, 3), (2, 3, 3), (5, 2, 2), (7, 1, 3)] {
            let s = space(p, m, d);
            for y in enumerate_points(&s).iter().step_by(7) {
                let part = orbit_partition(&s, y).unwrap();
                assert_eq!(part.classes.len(), (m + d) as usize);
                let total: usize = part.classes.iter().map(|c| c.members.len()).sum();
                assert_eq!(total, s.n_points());
                for c in &part.classes {
                    assert_eq!(c.members.len(), orbit_size(&s, c.label));
                }
            }
        }
    }

    #[test]
    fn couplings_match_brute_force_quotient() {
        for (p, m, d) in [(3, 2, 3), (2, 3, 3), (5, 3, 2), (3, 1, 4)] {
            let s = space(p, m, d);
            let pts = enumerate_points(&s);
            for y in pts.iter().step_by(11) {
                let part = orbit_partition(&s, y).unwrap();
                for from in part.classes.iter().filter(|c| !c.members.is_empty()) {
                    for to in part.classes.iter().filter(|c| c.label != from.label) {
                        let want = orbit_coupling(&s, y.level, from.label, to.label);
                        // every representative must see the same total weight
                        for &i in from.members.iter().take(3) {
                            let got: f64 = to
                                .members
                                .iter()
                                .map(|&j| kernel_weight(&pts[i], &pts[j], &s).unwrap().to_f64().unwrap())
                                .sum();
                            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{s} {y} {} -> {}", from.label, to.label);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn thresholds_examples() {
        let th = thresholds(&space(3, 1, 2), &build_level_matrices(3, 1).unwrap());
        assert!((th.radial_fine - 2.0 / 27.0).abs() < 1e-16);
        assert!((th.radial_coarse - 2.0 / 9.0).abs() < 1e-16);
        assert!((th.uniqueness - 2.0 / 9.0).abs() < 1e-16);
        assert!((th.bound - 3f64.ln()).abs() < 1e-16);

        let th = thresholds(&space(2, 3, 2), &build_level_matrices(2, 3).unwrap());
        assert!((th.radial_coarse - 7.0 / 32.0).abs() < 1e-16);
        assert_eq!(th.bound, 4.0);

        let th = thresholds(&space(5, 1, 1), &build_level_matrices(5, 1).unwrap());
        assert!((th.bound - (5.0f64 / 3.0).ln()).abs() < 1e-16);

        let th = thresholds(&space(3, 2, 2), &build_level_matrices(3, 2).unwrap());
        assert!((th.uniqueness - 4.0 / 27.0).abs() < 1e-15);
        let th = thresholds(&space(2, 1, 3), &build_level_matrices(2, 1).unwrap());
        assert_eq!(th.uniqueness, 1.0 / 8.0);
    }

    #[test]
    fn full_solve_small_example() {
        let (s, lm, lap) = setup(3, 1, 2);
        let problem = MfeProblem::new(s, 0.05, pt("0:1,0")).unwrap();
        let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
        assert!(sol.residual_inf <= 1e-12);
        assert!((sol.mass - 9.0).abs() <= 1e-10 * 9.0);
        let rep = validate_structure(&sol.u, &problem, &thresholds(&s, &lm), Some(&lap)).unwrap();
        assert!(rep.pass, "{rep:?}");
        let green = solve_full(&problem, &lap, &InitialGuess::Green, NewtonOptions::default()).unwrap();
        assert!(dist_inf(&green.u, &sol.u) < 1e-10);
        assert!(green.iterations <= sol.iterations);
    }

    #[test]
    fn radial_matches_full() {
        for (p, m, d) in [(3, 1, 2), (3, 2, 2), (2, 3, 3), (5, 1, 2), (2, 1, 4), (3, 2, 3)] {
            let (s, lm, lap) = setup(p, m, d);
            let th = thresholds(&s, &lm);
            for y in enumerate_points(&s).iter().step_by(5) {
                let problem = MfeProblem::new(s, 0.9 * th.radial_fine, y.clone()).unwrap();
                let full = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
                let radial = solve_radial(&problem, NewtonOptions::default()).unwrap();
                assert!(dist_inf(&full.u, &radial.u) <= 1e-9, "{s} {y}");
                assert_eq!(radial.orbit_values.as_ref().unwrap().len(), orbit_partition(&s, y).unwrap().nonempty().len());
            }
        }
        let s = space(3, 2, 3);
        let problem = MfeProblem::new(s, 0.01, pt("1:2,0,1")).unwrap();
        assert_eq!(solve_radial(&problem, NewtonOptions::default()).unwrap().orbit_values.unwrap().len(), 5);
    }

    #[test]
    fn radial_values_are_monotone() {
        let s = space(3, 1, 2);
        let problem = MfeProblem::new(s, 0.05, pt("0:1,0")).unwrap();
        let sol = solve_radial(&problem, NewtonOptions::default()).unwrap();
        let v: Vec<f64> = sol.orbit_values.unwrap().iter().map(|o| o.value).collect();
        assert_eq!(v.len(), 3);
        assert!(v[0] > v[1] && v[1] > v[2]);
    }

    #[test]
    fn gap_into_the_source_grows_once_d_is_three() {
        // u = rho G + c + O(rho^2); exact Green shells on (3,1,3) give gaps 3.6, 1.906, 2.382
        let (s, lm, lap) = setup(3, 1, 3);
        let y = pt("0:1,0,0");
        let g = crate::green::green_formula_vector(&s, &y, &lm).unwrap();
        let part = orbit_partition(&s, &y).unwrap();
        let chain: Vec<f64> = shell_chain(&part, &g).iter().map(|c| c.1).collect();
        let gaps: Vec<f64> = chain.windows(2).map(|w| w[0] - w[1]).collect();
        assert!((gaps[0] - 3.6).abs() < 1e-12);
        assert!(gaps[1] < gaps[0] && gaps[2] > gaps[1]);

        let th = thresholds(&s, &lm);
        let problem = MfeProblem::new(s, 0.5 * th.radial_fine, y).unwrap();
        let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
        let rep = validate_structure(&sol.u, &problem, &th, Some(&lap)).unwrap();
        assert!(!rep.get("shell_gaps_nonincreasing").unwrap().pass);
        assert!(rep.get("shell_gaps_nonincreasing_off_source").unwrap().pass);
        assert!(rep.checks.iter().filter(|c| !c.pass).count() == 1);
    }

    #[test]
    fn validation_flags_non_radial_vectors() {
        let (s, lm, lap) = setup(3, 1, 2);
        let problem = MfeProblem::new(s, 0.05, pt("0:1,0")).unwrap();
        let mut u = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap().u;
        u[0] += 1e-3;
        u[1] -= 1e-3;
        let rep = validate_structure(&u, &problem, &thresholds(&s, &lm), None).unwrap();
        assert!(!rep.get("orbit_spread").unwrap().pass);
        assert!(!rep.pass);
    }

    #[test]
    fn equality_case_of_the_crude_bound() {
        // one point: A = 0 and e^u = 2, so u = ln 2 = d ln p exactly
        let (s, lm, lap) = setup(2, 1, 1);
        let problem = MfeProblem::new(s, 0.01, pt("0:1")).unwrap();
        let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
        assert!((sol.u[0] - 2f64.ln()).abs() < 1e-12);
        let th = thresholds(&s, &lm);
        assert!(!th.bound_strict);
        let rep = validate_structure(&sol.u, &problem, &th, Some(&lap)).unwrap();
        assert!(rep.get("upper_bound_dlnp").unwrap().pass);
        assert!(rep.get("uniform_bound").unwrap().pass);
    }

    #[test]
    fn symmetry_transport() {
        for (p, m, d) in [(3, 2, 2), (5, 1, 2), (2, 2, 3), (3, 1, 3)] {
            let (s, _, lap) = setup(p, m, d);
            let y = enumerate_points(&s)[1].clone();
            let problem = MfeProblem::new(s, 0.3, y).unwrap();
            let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
            let b = problem.rhs();
            let r = norm_inf(&residual_with_rhs(&lap, 0.3, &apply_j(&sol.u), &apply_j(&b)));
            assert!(r <= 1e-12, "{s}: J residual {r}");
            assert_eq!(apply_j(&apply_j(&sol.u)), sol.u);
            for k in 0..m {
                let su = apply_sigma_k(&s, &sol.u, k).unwrap();
                let sb = apply_sigma_k(&s, &b, k).unwrap();
                let r = norm_inf(&residual_with_rhs(&lap, 0.3, &su, &sb));
                assert!(r <= 1e-12, "{s} k={k}: sigma residual {r}");
            }
        }
    }

    #[test]
    fn sigma_is_a_single_cycle_for_odd_p() {
        let s = space(3, 2, 3);
        let perm = sigma_permutation(&s, 1).unwrap();
        let start = s.level_size();
        let mut i = start;
        let mut len = 0;
        loop {
            i = perm[i];
            len += 1;
            if i == start {
                break;
            }
        }
        assert_eq!(len, s.level_size());
        assert!((0..start).all(|i| perm[i] == i));
    }

    #[test]
    fn lexicographic_shift_is_not_a_symmetry() {
        // the level block of A is circulant in the order g^i, not in lexicographic order
        let (s, _, lap) = setup(3, 1, 2);
        let problem = MfeProblem::new(s, 0.3, pt("0:1,0")).unwrap();
        let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
        let shift = |v: &[f64]| -> Vec<f64> {
            let n = v.len();
            (0..n).map(|i| v[(i + n - 1) % n]).collect()
        };
        let r = norm_inf(&residual_with_rhs(&lap, 0.3, &shift(&sol.u), &shift(&problem.rhs())));
        assert!(r > 1e-3);
    }

    #[test]
    fn probe_finds_one_cluster_below_threshold() {
        let (s, _, lap) = setup(3, 1, 2);
        let problem = MfeProblem::new(s, 0.9 * 2.0 / 9.0, pt("0:1,0")).unwrap();
        let rep = uniqueness_probe(&problem, &lap, 8, 42, (-5.0, 5.0), NewtonOptions::default()).unwrap();
        assert_eq!(rep.cluster_count(), 1, "{rep:?}");
        assert!(rep.divergences.is_empty(), "{:?}", rep.divergences);
        let again = uniqueness_probe(&problem, &lap, 8, 42, (-5.0, 5.0), NewtonOptions::default()).unwrap();
        assert_eq!(again.clusters[0].representative, rep.clusters[0].representative);
    }

    #[test]
    fn linearization_is_second_order() {
        let (s, _, lap) = setup(3, 1, 2);
        let y = pt("0:1,0");
        let small = linearization_defect(&lap, &y, 1e-3).unwrap();
        let large = linearization_defect(&lap, &y, 1e-2).unwrap();
        let ratio = small / large;
        assert!((1e-2 / 1.5..=1.1e-2).contains(&ratio), "ratio {ratio}");
        let _ = s;
    }

    #[test]
    fn convergence_in_depth() {
        let study = convergence_study(3, 1, 0.05, &pt("0:1"), 2, 5).unwrap();
        assert!(study.strictly_decreasing, "{:?}", study.pairs);
        assert!(study.max_mass_error <= 1e-10);
        let study = convergence_study(3, 2, 0.05, &pt("0:1"), 1, 4).unwrap();
        let off: Vec<f64> = study.pairs.iter().map(|p| p.off_level_sup_diff.unwrap()).collect();
        assert!(off.windows(2).all(|w| w[1] < w[0]), "{off:?}");
    }

    #[test]
    fn errors() {
        let s = space(3, 1, 2);
        assert!(MfeProblem::new(s, 0.0, pt("0:1,0")).is_err());
        assert!(MfeProblem::new(s, 0.1, pt("1:1,0")).is_err());
        let lap = build_laplacian(&s).unwrap();
        let problem = MfeProblem::new(s, 0.1, pt("0:1,0")).unwrap();
        assert_eq!(
            solve_full(&problem, &lap, &InitialGuess::Vector(vec![0.0; 2]), NewtonOptions::default()).unwrap_err(),
            Error::LengthMismatch { expected: 6, got: 2 }
        );
        let r = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions { tol: 1e-12, max_iter: 1 });
        assert!(matches!(r, Err(Error::Diverged { .. })));
        assert!(apply_sigma_k(&s, &[0.0; 6], 1).is_err());
    }
}
