//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach stdout.

use std::process::ExitCode;
use std::time::Instant;

use tatelab::characters::{eigenbasis, orthogonality};
use tatelab::green::{
    green_formula, green_formula_closed, green_numeric, heat_formula_vector, heat_numeric, verify_green, HeatKernel,
};
use tatelab::mfe::{
    convergence_study, linearization_defect, solve_full, thresholds, uniqueness_probe, validate_structure,
};
use tatelab::spectral::{analytic_spectrum, compare_spectra, numeric_spectrum};
use tatelab::verify::{default_source, verify_rho, VERIFY_SPACES};
use tatelab::*;

/// Criteria known to fail. 5: the last shell gap (the one into y) grows once
/// d >= 3, as the exact Green linearization predicts, so "nonincreasing gaps"
/// cannot hold on (2,1,4), (3,1,3), (2,3,3).
const EXPECTED_FAILURES: &[u32] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn space(p: u64, m: u32, d: u32) -> QuotientSpace {
    QuotientSpace::new(p, m, d).unwrap()
}

fn pt(s: &str) -> QuotientPoint {
    s.parse().unwrap()
}

fn spectrum() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut multiplicities = true;
    for (p, m, d) in VERIFY_SPACES {
        let s = space(p, m, d);
        let lm = build_level_matrices(p, m).unwrap();
        let lap = build_laplacian(&s).unwrap();
        let cmp = compare_spectra(&analytic_spectrum(&s, &lm), &numeric_spectrum(&lap).unwrap(), 1e-9);
        worst = worst.max(cmp.max_deviation);
        multiplicities &= cmp.multiplicity_mismatch.is_none();
    }
    let s = space(3, 1, 2);
    let lm = build_level_matrices(3, 1).unwrap();
    let mut anchor: Vec<(f64, usize)> =
        analytic_spectrum(&s, &lm).iter().map(|e| (e.eigenvalue, e.multiplicity)).collect();
    anchor.sort_by(|a, b| b.0.total_cmp(&a.0));
    let want = [(0.0, 1), (-2.0 / 3.0, 1), (-10.0 / 3.0, 4)];
    let anchor_ok = anchor.len() == 3
        && anchor.iter().zip(want).all(|(a, w)| (a.0 - w.0).abs() <= 1e-14 && a.1 == w.1);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && multiplicities && anchor_ok && secs < 30.0,
        format!("max |dlambda| = {worst:.2e}, multiplicities match = {multiplicities}, (3,1,2) anchor = {anchor_ok}, {secs:.2} s"),
    )
}

fn characters() -> Outcome {
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for (p, m, d) in [(3, 1, 3), (3, 2, 2)] {
        let s = space(p, m, d);
        let lm = build_level_matrices(p, m).unwrap();
        let rep = orthogonality(&eigenbasis(&s, &lm, None).unwrap(), &s).unwrap();
        off = off.max(rep.max_off_diagonal);
        diag = diag.max(rep.max_diagonal_deviation);
    }
    outcome(off <= 1e-12 && diag <= 1e-12, format!("max off-diagonal = {off:.2e}, max |norm - (1 - 1/p)| = {diag:.2e}"))
}

fn green() -> Outcome {
    let mut deviation = 0.0f64;
    let mut equation = 0.0f64;
    for (p, m, d) in [(2, 1, 3), (3, 1, 3), (3, 2, 2)] {
        let s = space(p, m, d);
        let lm = build_level_matrices(p, m).unwrap();
        let lap = build_laplacian(&s).unwrap();
        let rep = verify_green(&lap, &default_source(&s), &lm, 1e-9).unwrap();
        deviation = deviation.max(rep.level_deviation);
        equation = equation.max(rep.equation_residual);
    }
    // anchors on (3,1,2): shells M = 0 and M = 1 seen from y = 0:1,0
    let s = space(3, 1, 2);
    let lm = build_level_matrices(3, 1).unwrap();
    let lap = build_laplacian(&s).unwrap();
    let (y, x0, x1) = (pt("0:1,0"), pt("0:2,0"), pt("0:1,1"));
    let closed = (green_formula_closed(&x0, &y, &s, &lm).unwrap(), green_formula_closed(&x1, &y, &s, &lm).unwrap());
    let numeric = green_numeric(&lap, &y).unwrap();
    let numeric_gap = numeric[s.index_of(&x0)] - numeric[s.index_of(&x1)];
    let exact_gap = green_formula(&x0, &y, &s, &lm).unwrap() - green_formula(&x1, &y, &s, &lm).unwrap();
    let anchors = (closed.0 - 1.5).abs() <= 1e-12
        && (closed.1 + 2.1).abs() <= 1e-12
        && (numeric_gap - (closed.0 - closed.1)).abs() <= 1e-9
        && (exact_gap - numeric_gap).abs() <= 1e-9;
    outcome(
        deviation <= 1e-9 && equation <= 1e-9 && anchors,
        format!(
            "level-constant deviation = {deviation:.2e}, A G - rhs = {equation:.2e}, shells {:.4} / {:.4} (numeric gap {numeric_gap:.6})",
            closed.0, closed.1
        ),
    )
}

fn heat() -> Outcome {
    let mut dev = 0.0f64;
    let mut mean = 0.0f64;
    for (p, m, d) in [(3, 1, 2), (3, 2, 2)] {
        let s = space(p, m, d);
        let lm = build_level_matrices(p, m).unwrap();
        let kernel = HeatKernel::new(&build_laplacian(&s).unwrap()).unwrap();
        let y = default_source(&s);
        for t in [0.1, 1.0, 10.0] {
            let f = heat_formula_vector(t, &s, &y, &lm).unwrap();
            let n = heat_numeric(t, &kernel, &y).unwrap();
            dev = f.iter().zip(&n).map(|(a, b)| (a - b).abs()).fold(dev, f64::max);
            mean = mean.max((f.iter().sum::<f64>() * s.atom_f64()).abs());
        }
    }
    outcome(dev <= 1e-9 && mean <= 1e-12, format!("formula vs numeric = {dev:.2e}, |Haar mean| = {mean:.2e}"))
}

fn mfe_structure() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_residual = 0.0f64;
    for (p, m, d) in VERIFY_SPACES {
        let s = space(p, m, d);
        let lm = build_level_matrices(p, m).unwrap();
        let lap = build_laplacian(&s).unwrap();
        let th = thresholds(&s, &lm);
        let problem = MfeProblem::new(s, verify_rho(&s).unwrap(), default_source(&s)).unwrap();
        let sol = solve_full(&problem, &lap, &InitialGuess::Zero, NewtonOptions::default()).unwrap();
        worst_residual = worst_residual.max(sol.residual_inf);
        let rep = validate_structure(&sol.u, &problem, &th, Some(&lap)).unwrap();
        let mut names = vec!["mass", "unique_argmin_at_y", "orbit_spread", "shell_chain", "shell_gaps_nonincreasing"];
        if p > 2 {
            names.push("uniform_bound");
        }
        for name in names {
            let c = rep.get(name).unwrap();
            if !c.pass {
                failures.push(format!("{s} {name} ({:.3e})", c.value));
            }
        }
    }
    let pass = failures.is_empty() && worst_residual <= 1e-12;
    let detail = if failures.is_empty() {
        format!("all checks hold, max residual {worst_residual:.2e}")
    } else {
        format!("max residual {worst_residual:.2e}; failing: {}", failures.join(", "))
    };
    outcome(pass, detail)
}

fn uniqueness() -> Outcome {
    let start = Instant::now();
    let mut counts = Vec::new();
    let mut clean = true;
    for ((p, m, d), rho) in [((3, 1, 2), 0.9 * 2.0 / 9.0), ((3, 2, 2), 0.9 * 4.0 / 27.0)] {
        let s = space(p, m, d);
        let lap = build_laplacian(&s).unwrap();
        let problem = MfeProblem::new(s, rho, pt("0:1,0")).unwrap();
        let rep = uniqueness_probe(&problem, &lap, 20, 42, (-5.0, 5.0), NewtonOptions::default()).unwrap();
        clean &= rep.divergences.is_empty() && rep.max_intra_distance <= 1e-8;
        counts.push(rep.cluster_count());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        counts.iter().all(|&c| c == 1) && clean && secs < 60.0,
        format!("clusters = {counts:?}, no divergences = {clean}, {secs:.2} s"),
    )
}

fn linearization() -> Outcome {
    let s = space(3, 1, 2);
    let lap = build_laplacian(&s).unwrap();
    let y = pt("0:1,0");
    let small = linearization_defect(&lap, &y, 1e-3).unwrap();
    let large = linearization_defect(&lap, &y, 1e-2).unwrap();
    let ratio = small / large;
    let order = ratio / 1e-2;
    outcome(
        ratio <= 1.1e-2 && (1.0 / 1.5..=1.5).contains(&order),
        format!("defect {small:.3e} at 1e-3, {large:.3e} at 1e-2, ratio {ratio:.4e}"),
    )
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let study = convergence_study(3, 1, 0.05, &pt("0:1"), 2, 5).unwrap();
    let diffs: Vec<String> = study.pairs.iter().map(|p| format!("{:.3e}", p.sup_diff)).collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        study.strictly_decreasing && study.max_mass_error <= 1e-10 && secs < 120.0,
        format!("sup differences [{}], max |mass - 1| = {:.1e}, {secs:.2} s", diffs.join(", "), study.max_mass_error),
    )
}

fn slope() -> Outcome {
    let s = space(3, 1, 6);
    let lm = build_level_matrices(3, 1).unwrap();
    let y = pt("0:1,0,0,0,0,0");
    // x shares exactly M leading digits with y
    let at = |big_m: usize| {
        let mut digits = y.digits.clone();
        digits[big_m] = if big_m == 0 { 2 } else { 1 };
        green_formula(&QuotientPoint::new(0, digits), &y, &s, &lm).unwrap()
    };
    let inc = at(4) - at(3);
    let target = -1.5;
    let rel = (inc - target).abs() / target.abs();
    outcome(rel <= 0.05, format!("G(4) - G(3) = {inc:.5} vs {target}, rel. error {:.2}%", 100.0 * rel))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "spectrum reproduction", spectrum),
        (2, "character orthogonality", characters),
        (3, "Green's function", green),
        (4, "heat kernel", heat),
        (5, "mean field structure", mfe_structure),
        (6, "uniqueness", uniqueness),
        (7, "small-rho linearization", linearization),
        (8, "convergence in depth", convergence),
        (9, "Green slope", slope),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let o = run();
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if o.pass == EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
