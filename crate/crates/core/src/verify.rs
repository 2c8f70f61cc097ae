//! Invariant suites over a fixed matrix of spaces. Each check becomes one record.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::characters::{eigenbasis, eigen_residual, orthogonality};
use crate::error::{Error, Result};
use crate::green::{heat_formula_vector, heat_numeric, verify_green, HeatKernel};
use crate::linalg::norm_inf;
use crate::mfe::{
    apply_j, apply_sigma_k, residual_with_rhs, solve_full, solve_radial, thresholds, uniqueness_probe,
    validate_structure, InitialGuess, MfeProblem, NewtonOptions,
};
use crate::padic::{enumerate_points, QuotientPoint, QuotientSpace};
use crate::spectral::{analytic_spectrum, build_laplacian, build_level_matrices, compare_spectra, numeric_spectrum};

pub const VERIFY_SPACES: [(u64, u32, u32); 5] = [(2, 1, 4), (3, 1, 3), (3, 2, 2), (5, 1, 2), (2, 3, 3)];
pub const HEAT_TIMES: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Spectrum,
    Characters,
    Green,
    Heat,
    Mfe,
    All,
}

impl Suite {
    pub const EACH: [Suite; 5] = [Suite::Spectrum, Suite::Characters, Suite::Green, Suite::Heat, Suite::Mfe];

    fn name(self) -> &'static str {
        match self {
            Suite::Spectrum => "spectrum",
            Suite::Characters => "characters",
            Suite::Green => "green",
            Suite::Heat => "heat",
            Suite::Mfe => "mfe",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}' (spectrum, characters, green, heat, mfe, all)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub suite: String,
    pub space: String,
    pub check: String,
    pub value: f64,
    /// `None` for echoed quantities that are not compared against anything.
    pub tol: Option<f64>,
    pub pass: bool,
}

struct Recorder<'a> {
    suite: Suite,
    space: String,
    out: &'a mut Vec<CheckRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, check: impl Into<String>, value: f64, tol: Option<f64>, pass: bool) {
        self.out.push(CheckRecord {
            suite: self.suite.to_string(),
            space: self.space.clone(),
            check: check.into(),
            value,
            tol,
            pass,
        });
    }

    fn at_most(&mut self, check: impl Into<String>, value: f64, tol: f64) {
        self.push(check, value, Some(tol), value <= tol);
    }

    fn echo(&mut self, check: impl Into<String>, value: f64) {
        self.push(check, value, None, true);
    }
}

/// Source point used by the suites: the last point of the last level.
pub fn default_source(space: &QuotientSpace) -> QuotientPoint {
    enumerate_points(space).pop().expect("spaces are nonempty")
}

pub fn run_suite(suite: Suite, spaces: &[QuotientSpace]) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    for s in suites {
        for space in spaces {
            let mut rec = Recorder { suite: s, space: space.to_string(), out: &mut out };
            match s {
                Suite::Spectrum => spectrum_checks(space, &mut rec)?,
                Suite::Characters => characters_checks(space, &mut rec)?,
                Suite::Green => green_checks(space, &mut rec)?,
                Suite::Heat => heat_checks(space, &mut rec)?,
                Suite::Mfe => mfe_checks(space, &mut rec)?,
                Suite::All => unreachable!(),
            }
        }
    }
    Ok(out)
}

pub fn default_spaces() -> Vec<QuotientSpace> {
    VERIFY_SPACES
        .iter()
        .map(|&(p, m, d)| QuotientSpace::new(p, m, d).expect("built-in spaces are valid"))
        .collect()
}

fn spectrum_checks(space: &QuotientSpace, rec: &mut Recorder) -> Result<()> {
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = build_laplacian(space)?;
    let cmp = compare_spectra(&analytic_spectrum(space, &lm), &numeric_spectrum(&lap)?, 1e-9);
    rec.at_most("max_eigenvalue_deviation", cmp.max_deviation, 1e-9);
    let mismatch = cmp.multiplicity_mismatch.map_or(0.0, |(a, n)| a.abs_diff(n) as f64);
    rec.at_most("multiplicity_mismatch", mismatch, 0.0);
    Ok(())
}

fn characters_checks(space: &QuotientSpace, rec: &mut Recorder) -> Result<()> {
    // characters of Z_2^* do not factor through a cyclic torsion part; nothing to check
    if space.p == 2 {
        return Ok(());
    }
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = build_laplacian(space)?;
    let basis = eigenbasis(space, &lm, Some(&lap))?;
    let orth = orthogonality(&basis, space)?;
    rec.at_most("max_off_diagonal_inner_product", orth.max_off_diagonal, 1e-12);
    rec.at_most("max_norm_deviation", orth.max_diagonal_deviation, 1e-12);
    rec.at_most("eigen_residual", eigen_residual(&lap, &basis), 1e-9);
    Ok(())
}

fn green_checks(space: &QuotientSpace, rec: &mut Recorder) -> Result<()> {
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = build_laplacian(space)?;
    let report = verify_green(&lap, &default_source(space), &lm, 1e-9)?;
    rec.at_most("formula_equation_residual", report.equation_residual, 1e-9);
    rec.at_most("level_constant_deviation", report.level_deviation, 1e-9);
    rec.at_most("diagonal_mismatch", report.diagonal_mismatch, 1e-9);
    rec.at_most("numeric_residual", report.numeric_residual, 1e-9);
    Ok(())
}

fn heat_checks(space: &QuotientSpace, rec: &mut Recorder) -> Result<()> {
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = build_laplacian(space)?;
    let kernel = HeatKernel::new(&lap)?;
    let y = default_source(space);
    for t in HEAT_TIMES {
        let formula = heat_formula_vector(t, space, &y, &lm)?;
        let numeric = heat_numeric(t, &kernel, &y)?;
        let dev = formula.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rec.at_most(format!("formula_vs_numeric_t{t}"), dev, 1e-9);
        let mean = formula.iter().sum::<f64>() * space.atom_f64();
        rec.at_most(format!("haar_mean_t{t}"), mean.abs(), 1e-12);
    }
    Ok(())
}

/// `rho = 0.9 min(radial_fine, uniqueness)`, where every structural statement applies.
pub fn verify_rho(space: &QuotientSpace) -> Result<f64> {
    let th = thresholds(space, &build_level_matrices(space.p, space.m)?);
    Ok(0.9 * th.radial_fine.min(th.uniqueness))
}

fn mfe_checks(space: &QuotientSpace, rec: &mut Recorder) -> Result<()> {
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = build_laplacian(space)?;
    let th = thresholds(space, &lm);
    rec.echo("threshold_radial_fine", th.radial_fine);
    rec.echo("threshold_radial_coarse", th.radial_coarse);
    rec.echo("threshold_uniqueness", th.uniqueness);
    rec.echo("threshold_bound", th.bound);
    let rho = verify_rho(space)?;
    rec.echo("rho", rho);

    let problem = MfeProblem::new(*space, rho, default_source(space))?;
    let opts = NewtonOptions::default();
    let sol = solve_full(&problem, &lap, &InitialGuess::Zero, opts)?;
    rec.at_most("residual_inf", sol.residual_inf, 1e-12);
    let report = validate_structure(&sol.u, &problem, &th, Some(&lap))?;
    for c in &report.checks {
        rec.push(c.name, c.value, Some(c.limit), c.pass);
    }

    let radial = solve_radial(&problem, opts)?;
    let dist = sol.u.iter().zip(&radial.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rec.at_most("radial_vs_full", dist, 1e-9);

    let b = problem.rhs();
    rec.at_most("j_transport_residual", norm_inf(&residual_with_rhs(&lap, rho, &apply_j(&sol.u), &apply_j(&b))), 1e-12);
    let mut sigma = 0.0f64;
    for k in 0..space.m {
        let su = apply_sigma_k(space, &sol.u, k)?;
        let sb = apply_sigma_k(space, &b, k)?;
        sigma = sigma.max(norm_inf(&residual_with_rhs(&lap, rho, &su, &sb)));
    }
    rec.at_most("sigma_transport_residual", sigma, 1e-12);

    let probe = uniqueness_probe(&problem, &lap, 5, 42, (-5.0, 5.0), opts)?;
    let clusters = probe.cluster_count() as f64;
    rec.push("uniqueness_clusters", clusters, Some(1.0), clusters == 1.0 && probe.divergences.is_empty());
    Ok(())
}
