mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tatelab::green::{green_formula, green_formula_closed, green_on_diagonal, green_numeric, green_shells, heat_formula_vector, heat_numeric, verify_green, HeatKernel};
use tatelab::mfe::{convergence_study, solve_full, solve_radial, thresholds, uniqueness_probe, validate_structure, orbit_partition};
use tatelab::padic::enumerate_points;
use tatelab::spectral::{analytic_spectrum, compare_spectra, expand, gap_from_spectrum, numeric_spectrum, Provenance};
use tatelab::verify::{default_spaces, run_suite, Suite};
use tatelab::{build_laplacian, build_level_matrices, Error, InitialGuess, MfeProblem, NewtonOptions, QuotientPoint, QuotientSpace};

use output::{cell, document, float, to_value, Sink};

#[derive(Parser, Debug)]
#[command(name = "tatelab", version, about = "p-adic Laplacian on finite Tate curve quotients: spectra, Green's functions, heat kernels, mean field equation")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for multi-start probes and depth studies.
    #[arg(long, global = true, env = "TATELAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Init {
    Zero,
    Green,
}

#[derive(Args, Debug)]
struct SpaceArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    m: u32,
    #[arg(long)]
    d: u32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic spectrum of A against the numeric one.
    #[command(allow_negative_numbers = true)]
    Spectrum {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Green's function shell table for a source point.
    #[command(allow_negative_numbers = true)]
    Green {
        #[command(flatten)]
        space: SpaceArgs,
        /// Source point, "level:b0,b1,...".
        #[arg(long)]
        y: String,
        /// Also report G(x, y) at this point.
        #[arg(long)]
        x: Option<String>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Heat kernel column at the given times.
    #[command(allow_negative_numbers = true)]
    Heat {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long)]
        y: String,
        /// Time; repeat the flag for several.
        #[arg(long = "t", required = true)]
        t: Vec<f64>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Solve A u + rho e^u = rho p^d e_y.
    #[command(allow_negative_numbers = true)]
    Solve {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        y: String,
        /// One unknown per orbit of the stabilizer of y.
        #[arg(long)]
        radial: bool,
        #[arg(long, value_enum, default_value_t = Init::Zero)]
        init: Init,
        /// Also run a multi-start uniqueness probe with this many starts.
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
    },
    /// Radial solutions across depths d_min..=d_max.
    #[command(allow_negative_numbers = true)]
    Converge {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        y: String,
        #[arg(long)]
        d_min: u32,
        #[arg(long)]
        d_max: u32,
    },
    /// Invariant suites over the built-in spaces.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

enum Failure {
    /// Bad flags; exit 2.
    Usage(String),
    /// Computation error; exit 1.
    Compute(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

type Run = Result<bool, Failure>;

fn usage(flag: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{flag}: {msg}"))
}

fn parse_space(a: &SpaceArgs) -> Result<QuotientSpace, Failure> {
    QuotientSpace::new(a.p, a.m, a.d).map_err(|e| usage("--p/--m/--d", e))
}

fn parse_point(space: &QuotientSpace, flag: &str, s: &str) -> Result<QuotientPoint, Failure> {
    space.parse_point(s).map_err(|e| usage(flag, e))
}

fn positive(flag: &str, x: f64) -> Result<f64, Failure> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(usage(flag, format!("must be positive and finite, got {x}")))
    }
}

fn space_json(s: &QuotientSpace) -> Value {
    json!({ "p": s.p, "m": s.m, "d": s.d, "n_points": s.n_points() })
}

fn laplacian(space: &QuotientSpace) -> Result<tatelab::LaplacianMatrix, Failure> {
    build_laplacian(space).map_err(|e| match e {
        Error::CapExceeded { .. } => usage("--p/--m/--d", e),
        e => e.into(),
    })
}

fn provenance(p: &Provenance) -> String {
    match p {
        Provenance::LevelMode { k } => format!("level_mode k={k}"),
        Provenance::Conductor { n, level } => format!("conductor n={n} level={level}"),
        Provenance::Numeric => "numeric".into(),
    }
}

fn cmd_spectrum(sink: &mut Sink, format: Format, a: &SpaceArgs, tol: f64) -> Run {
    let space = parse_space(a)?;
    let tol = positive("--tol", tol)?;
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = laplacian(&space)?;
    let analytic = analytic_spectrum(&space, &lm);
    let numeric = numeric_spectrum(&lap)?;
    let cmp = compare_spectra(&analytic, &numeric, tol);
    match format {
        Format::Json => sink.json_pretty(&document(vec![
            ("command", json!("spectrum")),
            ("space", space_json(&space)),
            ("analytic", to_value(&analytic)),
            ("numeric", to_value(&numeric)),
            ("max_deviation", float(cmp.max_deviation)),
            ("multiplicity_match", json!(cmp.multiplicity_mismatch.is_none())),
            ("spectral_gap", gap_from_spectrum(&analytic).map_or(Value::Null, float)),
            ("tol", float(tol)),
            ("pass", json!(cmp.pass)),
        ]))?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = expand(&analytic)
                .iter()
                .enumerate()
                .map(|(i, (v, prov))| vec![i.to_string(), cell(Some(*v)), cell(numeric.get(i).copied()), provenance(prov)])
                .collect();
            sink.csv(&["index", "analytic", "numeric", "provenance"], &rows)?
        }
    }
    Ok(cmp.pass)
}

fn cmd_green(sink: &mut Sink, format: Format, a: &SpaceArgs, y: &str, x: Option<&str>, tol: f64) -> Run {
    let space = parse_space(a)?;
    let y = parse_point(&space, "--y", y)?;
    let x = x.map(|x| parse_point(&space, "--x", x)).transpose()?;
    let tol = positive("--tol", tol)?;
    let lm = build_level_matrices(space.p, space.m)?;
    let lap = laplacian(&space)?;
    let numeric = green_numeric(&lap, &y)?;
    let shells = green_shells(&space, &y, &lm, &numeric)?;
    let report = verify_green(&lap, &y, &lm, tol)?;
    match format {
        Format::Json => {
            let mut fields = vec![
                ("command", json!("green")),
                ("space", space_json(&space)),
                ("y", json!(y.to_string())),
                ("shells", to_value(&shells)),
                ("report", to_value(&report)),
            ];
            if let Some(x) = &x {
                let on_diagonal = *x == y;
                fields.push((
                    "point",
                    json!({
                        "x": x.to_string(),
                        "formula": float(if on_diagonal { green_on_diagonal(&y, &space, &lm) } else { green_formula(x, &y, &space, &lm)? }),
                        "formula_closed": if on_diagonal { Value::Null } else { float(green_formula_closed(x, &y, &space, &lm)?) },
                        "numeric": float(numeric[space.index_of(x)]),
                    }),
                ));
            }
            sink.json_pretty(&document(fields))?
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = shells
                .iter()
                .map(|r| {
                    vec![
                        r.level.to_string(),
                        r.shell.map(|s| s.to_string()).unwrap_or_else(|| "diagonal".into()),
                        r.count.to_string(),
                        cell(Some(r.formula)),
                        cell(r.formula_closed),
                        cell(Some(r.numeric)),
                        cell(Some(r.numeric_spread)),
                        cell(Some(r.diff)),
                    ]
                })
                .collect();
            sink.csv(&["level", "shell", "count", "formula", "formula_closed", "numeric", "numeric_spread", "diff"], &rows)?
        }
    }
    Ok(report.pass)
}

fn cmd_heat(sink: &mut Sink, format: Format, a: &SpaceArgs, y: &str, times: &[f64], tol: f64) -> Run {
    let space = parse_space(a)?;
    let y = parse_point(&space, "--y", y)?;
    for &t in times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(usage("--t", format!("times must be finite and nonnegative, got {t}")));
        }
    }
    let tol = positive("--tol", tol)?;
    let lm = build_level_matrices(space.p, space.m)?;
    let kernel = HeatKernel::new(&laplacian(&space)?)?;
    let points = enumerate_points(&space);
    let mut pass = true;
    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    for &t in times {
        let f = heat_formula_vector(t, &space, &y, &lm)?;
        let n = heat_numeric(t, &kernel, &y)?;
        let dev = f.iter().zip(&n).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mean = f.iter().sum::<f64>() * space.atom_f64();
        pass &= dev <= tol && mean.abs() <= 1e-12;
        let values: Vec<Value> = points
            .iter()
            .zip(f.iter().zip(&n))
            .map(|(x, (a, b))| json!({ "point": x.to_string(), "formula": a, "numeric": b }))
            .collect();
        blocks.push(json!({ "t": t, "max_deviation": dev, "haar_mean": mean, "values": values }));
        rows.extend(points.iter().zip(f.iter().zip(&n)).map(|(x, (a, b))| vec![cell(Some(t)), x.to_string(), cell(Some(*a)), cell(Some(*b))]));
    }
    match format {
        Format::Json => sink.json_pretty(&document(vec![
            ("command", json!("heat")),
            ("space", space_json(&space)),
            ("y", json!(y.to_string())),
            ("times", Value::Array(blocks)),
            ("tol", float(tol)),
            ("pass", json!(pass)),
        ]))?,
        Format::Csv => sink.csv(&["t", "point", "formula", "numeric"], &rows)?,
    }
    Ok(pass)
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    sink: &mut Sink,
    format: Format,
    a: &SpaceArgs,
    rho: f64,
    y: &str,
    radial: bool,
    init: Init,
    starts: Option<usize>,
    seed: u64,
    opts: NewtonOptions,
) -> Run {
    let space = parse_space(a)?;
    let y = parse_point(&space, "--y", y)?;
    let rho = positive("--rho", rho)?;
    positive("--tol", opts.tol)?;
    if opts.max_iter == 0 {
        return Err(usage("--max-iter", "must be at least 1"));
    }
    if radial && init != Init::Zero {
        return Err(usage("--init", "radial solves always start from zero"));
    }
    if let Some(n) = starts {
        if n < 2 {
            return Err(usage("--starts", "the probe needs at least 2 starts"));
        }
    }
    let lm = build_level_matrices(space.p, space.m)?;
    let th = thresholds(&space, &lm);
    let problem = MfeProblem::new(space, rho, y.clone())?;
    // the full matrix is only needed for full solves, probes and the eigenvalue check
    let need_lap = !radial || starts.is_some() || space.n_points() <= 400;
    let lap = if need_lap { Some(laplacian(&space)?) } else { None };
    let sol = if radial {
        solve_radial(&problem, opts)?
    } else {
        let init = match init {
            Init::Zero => InitialGuess::Zero,
            Init::Green => InitialGuess::Green,
        };
        solve_full(&problem, lap.as_ref().expect("built for full solves"), &init, opts)?
    };
    let eig_lap = lap.as_ref().filter(|_| space.n_points() <= 400);
    let report = validate_structure(&sol.u, &problem, &th, eig_lap)?;
    let probe = match starts {
        Some(n) => Some(uniqueness_probe(&problem, lap.as_ref().expect("built for probes"), n, seed, (-5.0, 5.0), opts)?),
        None => None,
    };
    let points = enumerate_points(&space);
    let part = orbit_partition(&space, &y)?;
    match format {
        Format::Json => {
            let u: serde_json::Map<String, Value> = points.iter().zip(&sol.u).map(|(x, v)| (x.to_string(), json!(v))).collect();
            let mut fields = vec![
                ("command", json!("solve")),
                ("space", space_json(&space)),
                ("rho", json!(rho)),
                ("y", json!(y.to_string())),
                ("method", json!(if radial { "radial" } else { "full" })),
                ("thresholds", to_value(&th)),
                (
                    "solution",
                    json!({
                        "u": u,
                        "residual": sol.residual_inf,
                        "mass": sol.mass,
                        "iterations": sol.iterations,
                        "orbit_values": to_value(&sol.orbit_values),
                    }),
                ),
                ("validation", to_value(&report)),
            ];
            if let Some(probe) = &probe {
                fields.push((
                    "probe",
                    json!({
                        "n_starts": probe.n_starts,
                        "seed": probe.seed,
                        "cluster_count": probe.cluster_count(),
                        "clusters": to_value(&probe.clusters),
                        "divergences": to_value(&probe.divergences),
                        "max_intra_distance": probe.max_intra_distance,
                    }),
                ));
            }
            sink.json_pretty(&document(fields))?
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = points
                .iter()
                .zip(&sol.u)
                .enumerate()
                .map(|(i, (x, v))| vec![x.to_string(), part.classes[part.orbit_of[i]].label.to_string(), cell(Some(*v))])
                .collect();
            sink.csv(&["point", "orbit", "u"], &rows)?
        }
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn cmd_converge(sink: &mut Sink, format: Format, p: u64, m: u32, rho: f64, y: &str, d_min: u32, d_max: u32) -> Run {
    let rho = positive("--rho", rho)?;
    if d_min == 0 || d_min > d_max {
        return Err(usage("--d-min/--d-max", format!("need 1 <= d-min <= d-max, got {d_min}..={d_max}")));
    }
    let shallow = QuotientSpace::new(p, m, d_min).map_err(|e| usage("--p/--m", e))?;
    let y: QuotientPoint = y.parse().map_err(|e| usage("--y", e))?;
    if y.digits.len() as u32 > d_min {
        return Err(usage("--y", format!("has {} digits, more than --d-min {d_min}", y.digits.len())));
    }
    shallow.check(&y.extended(d_min)).map_err(|e| usage("--y", e))?;
    let coarse = thresholds(&shallow, &build_level_matrices(p, m)?).radial_coarse;
    if rho > coarse {
        return Err(usage("--rho", format!("depth comparison needs rho <= {coarse} (radial regime)")));
    }
    let study = convergence_study(p, m, rho, &y, d_min, d_max)?;
    let pass = study.strictly_decreasing && study.max_mass_error <= 1e-10;
    match format {
        Format::Json => sink.json_pretty(&document(vec![
            ("command", json!("converge")),
            ("y", json!(y.to_string())),
            ("study", to_value(&study)),
            ("pass", json!(pass)),
        ]))?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = study
                .pairs
                .iter()
                .map(|r| {
                    vec![
                        r.d.to_string(),
                        r.d_next.to_string(),
                        cell(Some(r.sup_diff)),
                        cell(Some(r.shell_sup_diff)),
                        cell(r.off_level_sup_diff),
                        cell(Some(r.source_gap_same_shell)),
                        cell(Some(r.source_gap_deeper)),
                    ]
                })
                .collect();
            sink.csv(
                &["d", "d_next", "sup_diff", "shell_sup_diff", "off_level_sup_diff", "source_gap_same_shell", "source_gap_deeper"],
                &rows,
            )?
        }
    }
    Ok(pass)
}

fn cmd_verify(sink: &mut Sink, format: Format, suite: &str) -> Run {
    let suite: Suite = suite.parse().map_err(|e| usage("--suite", e))?;
    let records = run_suite(suite, &default_spaces())?;
    match format {
        Format::Json => {
            for r in &records {
                sink.json_line(&document(vec![
                    ("suite", json!(r.suite)),
                    ("space", json!(r.space)),
                    ("check", json!(r.check)),
                    ("value", float(r.value)),
                    ("tol", r.tol.map_or(Value::Null, float)),
                    ("pass", json!(r.pass)),
                ]))?;
            }
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = records
                .iter()
                .map(|r| vec![r.suite.clone(), r.space.clone(), r.check.clone(), cell(Some(r.value)), cell(r.tol), r.pass.to_string()])
                .collect();
            sink.csv(&["suite", "space", "check", "value", "tol", "pass"], &rows)?
        }
    }
    Ok(records.iter().all(|r| r.pass))
}

fn run(cli: Cli) -> Run {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage("--threads", e))?;
    }
    let mut sink = Sink::open(cli.output.as_deref())?;
    let f = cli.format;
    let ok = match &cli.command {
        Command::Spectrum { space, tol } => cmd_spectrum(&mut sink, f, space, *tol)?,
        Command::Green { space, y, x, tol } => cmd_green(&mut sink, f, space, y, x.as_deref(), *tol)?,
        Command::Heat { space, y, t, tol } => cmd_heat(&mut sink, f, space, y, t, *tol)?,
        Command::Solve { space, rho, y, radial, init, starts, seed, tol, max_iter } => cmd_solve(
            &mut sink,
            f,
            space,
            *rho,
            y,
            *radial,
            *init,
            *starts,
            *seed,
            NewtonOptions { tol: *tol, max_iter: *max_iter },
        )?,
        Command::Converge { p, m, rho, y, d_min, d_max } => cmd_converge(&mut sink, f, *p, *m, *rho, y, *d_min, *d_max)?,
        Command::Verify { suite } => cmd_verify(&mut sink, f, suite)?,
    };
    sink.finish()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
