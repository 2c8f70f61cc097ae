//! Browser bindings. Each export takes plain numbers and a point string and
//! returns a JSON document; the work happens in the `*_json` functions so
//! they can be tested natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use tatelab::green::{green_formula_vector, shell_index};
use tatelab::mfe::{solve_radial, thresholds};
use tatelab::padic::enumerate_points;
use tatelab::spectral::{analytic_spectrum, gap_from_spectrum, Provenance};
use tatelab::{build_level_matrices, MfeProblem, NewtonOptions, QuotientSpace};

/// Larger spaces make the page unresponsive.
pub const WEB_POINT_CAP: usize = 4096;

fn space(p: u32, m: u32, d: u32) -> Result<QuotientSpace, String> {
    let s = QuotientSpace::new(p as u64, m, d).map_err(|e| e.to_string())?;
    if s.n_points() > WEB_POINT_CAP {
        return Err(format!("{} points is more than the demo handles ({WEB_POINT_CAP})", s.n_points()));
    }
    Ok(s)
}

/// Analytic eigenvalues with multiplicities and labels.
pub fn spectrum_json(p: u32, m: u32, d: u32) -> Result<String, String> {
    let s = space(p, m, d)?;
    let lm = build_level_matrices(s.p, s.m).map_err(|e| e.to_string())?;
    let entries = analytic_spectrum(&s, &lm);
    let rows: Vec<Value> = entries
        .iter()
        .map(|e| {
            let label = match e.provenance {
                Provenance::LevelMode { k } => format!("level mode {k}"),
                Provenance::Conductor { n, level } => format!("conductor {n}, level {level}"),
                Provenance::Numeric => "numeric".into(),
            };
            json!({ "eigenvalue": e.eigenvalue, "multiplicity": e.multiplicity, "label": label })
        })
        .collect();
    Ok(json!({ "n_points": s.n_points(), "entries": rows, "gap": gap_from_spectrum(&entries) }).to_string())
}

/// `G(x, y)` at every point, with the shell of `x` relative to `y`.
pub fn green_json(p: u32, m: u32, d: u32, y: &str) -> Result<String, String> {
    let s = space(p, m, d)?;
    let y = s.parse_point(y).map_err(|e| e.to_string())?;
    let lm = build_level_matrices(s.p, s.m).map_err(|e| e.to_string())?;
    let g = green_formula_vector(&s, &y, &lm).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = enumerate_points(&s)
        .iter()
        .zip(&g)
        .map(|(x, v)| {
            let shell = if *x == y { None } else { shell_index(x, &y) };
            json!({ "point": x.to_string(), "level": x.level, "shell": shell, "source": *x == y, "value": v })
        })
        .collect();
    Ok(json!({ "y": y.to_string(), "points": rows }).to_string())
}

/// Radial mean field solution: one value per orbit of the stabilizer of `y`.
pub fn mfe_json(p: u32, m: u32, d: u32, rho: f64, y: &str) -> Result<String, String> {
    let s = space(p, m, d)?;
    let y = s.parse_point(y).map_err(|e| e.to_string())?;
    let lm = build_level_matrices(s.p, s.m).map_err(|e| e.to_string())?;
    let th = thresholds(&s, &lm);
    let problem = MfeProblem::new(s, rho, y.clone()).map_err(|e| e.to_string())?;
    let sol = solve_radial(&problem, NewtonOptions::default()).map_err(|e| e.to_string())?;
    let orbits: Vec<Value> = sol
        .orbit_values
        .iter()
        .flatten()
        .map(|o| json!({ "label": o.label.to_string(), "size": o.size, "value": o.value }))
        .collect();
    Ok(json!({
        "y": y.to_string(),
        "rho": rho,
        "thresholds": {
            "radial_fine": th.radial_fine,
            "radial_coarse": th.radial_coarse,
            "uniqueness": th.uniqueness,
            "bound": th.bound,
        },
        "orbits": orbits,
        "residual": sol.residual_inf,
        "iterations": sol.iterations,
        "max_u": sol.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn spectrum(p: u32, m: u32, d: u32) -> Result<String, JsValue> {
    spectrum_json(p, m, d).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn green(p: u32, m: u32, d: u32, y: &str) -> Result<String, JsValue> {
    green_json(p, m, d, y).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mfe(p: u32, m: u32, d: u32, rho: f64, y: &str) -> Result<String, JsValue> {
    mfe_json(p, m, d, rho, y).map_err(|e| JsValue::from_str(&e))
}
