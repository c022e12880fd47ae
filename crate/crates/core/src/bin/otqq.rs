use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otqq::analysis::Method;
use otqq::exact::{cost_matrix, solve_assignment};
use otqq::geometric::{geometric_quantile, GeometricRank, DEFAULT_TOL};
use otqq::io::{
    format_report, read_summary, run_experiment, verify_manifest, write_bundle, DataSource, ExperimentConfig, Scenario,
    MANIFEST_FILE, PRESETS, SUMMARY_FILE,
};
use otqq::oracle::{brute_force_assignment, geometric_objective, grid_argmin};
use otqq::sampling::{generate, GeneratorSpec, SeededRng};
use otqq::Error;

/// Optimal-transport Q-Q plots, potential plots and two-sample tests.
#[derive(Parser)]
#[command(name = "otqq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a pair of CSV samples and write a result bundle.
    Run(RunArgs),
    /// Pretty-print the summary of a written bundle.
    Report {
        /// Bundle directory or summary JSON file.
        path: PathBuf,
    },
    /// Compare the solvers against brute-force and grid-search oracles.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// One of the shipped presets.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    preset: Option<String>,
    /// Data file for the iris and rice presets.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "y")]
    x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    y: Option<PathBuf>,
    /// CSV files have no header row.
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Comma-separated subset of ot, eot, geom.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Entropic regularization; several values give several entropic plots.
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Size of each generated sample.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Half-width of the diagonal band.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    mc_points: Option<usize>,
    #[arg(long, overrides_with = "no_standardize")]
    standardize: bool,
    #[arg(long)]
    no_standardize: bool,
    /// Compare against a Gaussian with the data's mean and covariance.
    #[arg(long)]
    moment_matched: bool,
    /// Skip the resampling test.
    #[arg(long)]
    no_test: bool,
    #[arg(long, default_value = "otqq-out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Points per side of each assignment instance (at most 9).
    #[arg(long, default_value_t = 6)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn fail(stage: &str, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("otqq: {stage}: {err}");
    ExitCode::FAILURE
}

fn parse_methods(names: &[String], eps: &[f64]) -> Result<Vec<Method>, Error> {
    let mut out = Vec::new();
    for name in names {
        match name.trim() {
            "ot" => out.push(Method::Ot),
            "eot" => out.extend(eps.iter().map(|&epsilon| Method::Eot { epsilon })),
            "geom" | "geometric" => out.push(Method::Geometric),
            other => return Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
    Ok(out)
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&a.preset, &a.x, &a.y) {
        (Some(p), _, _) => ExperimentConfig::preset(p, a.data.clone())?,
        (None, Some(x), Some(y)) => {
            let csv = |p: &PathBuf| DataSource::Csv {
                path: p.clone(),
                has_header: !a.no_header,
                delimiter: a.delimiter as u8,
            };
            let mut c = ExperimentConfig::preset("identical-gaussian", None)?;
            c.scenario = Scenario {
                name: "custom".into(),
                x: csv(x),
                y: csv(y),
                n: 1,
            };
            c
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "give --preset or both --x and --y; presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(eps) = &a.epsilon {
        if let Some(&first) = eps.first() {
            cfg.run.epsilon = first;
        }
    }
    let eps = a.epsilon.clone().unwrap_or_else(|| {
        let mut e: Vec<f64> = cfg
            .methods
            .iter()
            .filter_map(|m| match m {
                Method::Eot { epsilon } => Some(*epsilon),
                _ => None,
            })
            .collect();
        if e.is_empty() {
            e.push(cfg.run.epsilon);
        }
        e
    });
    if let Some(m) = &a.methods {
        cfg.methods = parse_methods(m, &eps)?;
    } else if a.epsilon.is_some() {
        let keep: Vec<Method> = cfg.methods.iter().filter(|m| !matches!(m, Method::Eot { .. })).copied().collect();
        cfg.methods = keep;
        cfg.methods.extend(eps.iter().map(|&epsilon| Method::Eot { epsilon }));
    }
    if let Some(n) = a.n {
        cfg.scenario.n = n;
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = a.eta {
        cfg.run.eta = e;
    }
    if let Some(b) = a.resamples {
        cfg.run.resamples = b;
    }
    if let Some(m) = a.mc_points {
        cfg.run.mc_points = m;
    }
    if a.standardize {
        cfg.standardize = true;
    }
    if a.no_standardize {
        cfg.standardize = false;
    }
    if a.no_test {
        cfg.test = false;
    }
    let cfg = if a.moment_matched { cfg.moment_matched(true) } else { cfg };
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs) -> ExitCode {
    let cfg = match build_config(&a) {
        Ok(c) => c,
        Err(e) => return fail("config", e),
    };
    let bundle = match run_experiment(&cfg) {
        Ok(b) => b,
        Err(e) => return fail("run", e),
    };
    for t in &bundle.timings {
        eprintln!("otqq: {:<32} {:>9.3} s", t.stage, t.seconds);
    }
    let manifest = match write_bundle(&bundle, &a.out) {
        Ok(m) => m,
        Err(e) => return fail("write", e),
    };
    match read_summary(a.out.join(SUMMARY_FILE)) {
        Ok(s) => print!("{}", format_report(&s)),
        Err(e) => return fail("report", e),
    }
    println!("wrote {} files to {}", manifest.entries.len() + 1, manifest.dir.display());
    ExitCode::SUCCESS
}

fn report(path: PathBuf) -> ExitCode {
    let file = if path.is_dir() { path.join(SUMMARY_FILE) } else { path.clone() };
    match read_summary(&file) {
        Ok(s) => print!("{}", format_report(&s)),
        Err(e) => return fail("report", e),
    }
    if path.is_dir() && path.join(MANIFEST_FILE).exists() {
        match verify_manifest(&path) {
            Ok(bad) if bad.is_empty() => println!("manifest: ok"),
            Ok(bad) => return fail("manifest", format!("checksum mismatch in {}", bad.join(", "))),
            Err(e) => return fail("manifest", e),
        }
    }
    ExitCode::SUCCESS
}

fn oracle(a: OracleArgs) -> ExitCode {
    if a.size == 0 || a.size > 9 || a.dim == 0 {
        return fail("oracle", "size must be in 1..=9 and dim positive");
    }
    let spec = GeneratorSpec::standard_gaussian(a.dim);
    let mut worst = 0.0f64;
    for i in 0..a.instances as u64 {
        let u = generate(&spec, a.size, &SeededRng::new(a.seed + i, 1));
        let x = generate(&spec, a.size, &SeededRng::new(a.seed + i, 2));
        let result = u.and_then(|u| x.and_then(|x| cost_matrix(&u, &x))).and_then(|c| {
            let fast = solve_assignment(&c)?.total_cost;
            Ok((fast, brute_force_assignment(&c).1))
        });
        match result {
            Ok((fast, brute)) => worst = worst.max((fast - brute).abs()),
            Err(e) => return fail("oracle", e),
        }
    }
    println!(
        "assignment: {} instances n={} d={}, max |solver - brute force| = {worst:e}",
        a.instances, a.size, a.dim
    );

    let cloud = match generate(&GeneratorSpec::standard_gaussian(2), 25, &SeededRng::new(a.seed, 3)) {
        Ok(c) => c,
        Err(e) => return fail("oracle", e),
    };
    let rank = [0.3, -0.2];
    let sol = match geometric_quantile(&cloud, &GeometricRank(rank.to_vec()), DEFAULT_TOL, 10_000) {
        Ok(s) => s,
        Err(e) => return fail("oracle", e),
    };
    let f = |q: &[f64]| geometric_objective(cloud.as_slice(), 2, &rank, q);
    let (grid, best) = grid_argmin(&[-4.0, -4.0], &[4.0, 4.0], 401, f);
    println!(
        "geometric quantile: solver {:?} objective {:.9}, grid {:?} objective {:.9}",
        sol.point,
        f(&sol.point),
        grid,
        best
    );
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    if let Ok(t) = std::env::var("OTQQ_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return fail("threads", e);
                }
            }
            _ => return fail("threads", format!("OTQQ_THREADS must be a positive integer, got {t:?}")),
        }
    }
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Report { path } => report(path),
        Command::Oracle(a) => oracle(a),
    }
}
