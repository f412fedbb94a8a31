//! Batch front end: fit penalized mixed models from CSV data, run named
//! simulation studies and compare the two gradient modes.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical non-convergence
//! (results are still written), 3 internal error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use glmmlasso::error::{Error, Result};
use glmmlasso::family::FamilySpec;
use glmmlasso::input::{self, ModelSpec, RawTable};
use glmmlasso::model::{CovarianceTemplate, Dataset, Standardization};
use glmmlasso::optimizer::{self, GradientMode, OptimizerConfig};
use glmmlasso::problem::Problem;
use glmmlasso::report::{self, FitReport, PathReport, TwoStageReport};
use glmmlasso::selection;
use glmmlasso::simulate::study::{self, StudyConfig};
use glmmlasso::simulate::SimDesign;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "glmmlasso",
    version,
    about = "L1-penalized estimation for generalized linear mixed models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to CSV data at one penalty or along a penalty path.
    Fit(FitArgs),
    /// Run a named simulation study and write its summary table.
    Simulate(SimArgs),
    /// Compare the exact and approximate gradient modes on a design.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
}

impl ModeArg {
    fn gradient(self) -> GradientMode {
        match self {
            ModeArg::Exact => GradientMode::Exact,
            ModeArg::Approx => GradientMode::Approximate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TwoStageArg {
    Hybrid,
    Thresholded,
}

#[derive(Args)]
struct FitArgs {
    /// CSV data file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Model specification file (key = value statements).
    #[arg(long)]
    spec: PathBuf,
    /// Fit at this single penalty value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fit the full penalty path instead of a single value.
    #[arg(long)]
    path: bool,
    /// Number of path grid points.
    #[arg(long, default_value_t = 21)]
    n_lambda: usize,
    /// Refit after path selection.
    #[arg(long, value_enum)]
    two_stage: Option<TwoStageArg>,
    /// Gradient mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override the response family declared in the spec.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep covariates on their raw scale.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Design name (e.g. logistic_l1, poisson_h3, growing_p).
    design: String,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Approx)]
    mode: ModeArg,
    #[arg(long, default_value_t = 21)]
    n_lambda: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reduced problem sizes and replicate counts (default).
    #[arg(long, conflicts_with = "full")]
    desk: bool,
    /// Full-scale design dimensions and replicate counts.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Design name; omit when comparing on a concrete dataset.
    design: Option<String>,
    /// CSV data file (with --spec) instead of a simulated design.
    #[arg(long, requires = "spec")]
    data: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 21)]
    n_lambda: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare the exact mode against itself; all metrics must vanish.
    #[arg(long)]
    self_check: bool,
    #[arg(long, conflicts_with = "full")]
    desk: bool,
    #[arg(long)]
    full: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Io(_) => 1,
        Error::NonConvergence { .. } => 2,
        Error::Numerical(_) | Error::Unsupported(_) => 3,
    }
}

/// Worker preference order: flag, spec setting, GLMMLASSO_WORKERS, default.
fn resolve_workers(flag: Option<usize>, spec: Option<&ModelSpec>) -> Result<Option<usize>> {
    if let Some(w) = flag {
        return Ok(Some(w));
    }
    if let Some(s) = spec {
        if let Some(v) = s.settings.get("workers") {
            return Ok(Some(v.parse().map_err(|_| {
                Error::invalid(format!("bad workers value `{v}` in spec"))
            })?));
        }
    }
    match std::env::var("GLMMLASSO_WORKERS") {
        Ok(v) => Ok(Some(v.parse().map_err(|_| {
            Error::invalid(format!("bad GLMMLASSO_WORKERS value `{v}`"))
        })?)),
        Err(_) => Ok(None),
    }
}

fn out_dir(out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("serialize {name}: {e}")))?;
    std::fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn build_problem(
    args: &FitArgs,
    spec: &ModelSpec,
) -> Result<(Problem, Option<Standardization>)> {
    let table = RawTable::read(&args.data)?;
    let (dataset, mut family) = input::build_dataset(&table, spec)?;
    if let Some(name) = &args.family {
        family = FamilySpec::from_name(name)?;
        for &y in dataset.y.iter() {
            family.check_y(y)?;
        }
    }
    let (dataset, standardization): (Dataset, Option<Standardization>) = if args.no_standardize {
        (dataset, None)
    } else {
        let (ds, tr) = dataset.standardized();
        (ds, Some(tr))
    };
    let structures = input::spec_structures(spec)?;
    let template = CovarianceTemplate::new(&dataset, &structures)?;
    Ok((Problem::new(dataset, template, family)?, standardization))
}

#[derive(Serialize)]
struct FitBundle {
    fit: FitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    two_stage: Option<TwoStageReport>,
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    let spec = ModelSpec::from_file(&args.spec)?;
    let (problem, standardization) = build_problem(&args, &spec)?;
    let std_ref = standardization.as_ref();

    let mode = match (&args.mode, spec.settings.get("mode")) {
        (Some(m), _) => m.gradient(),
        (None, Some(v)) if v == "approx" || v == "approximate" => GradientMode::Approximate,
        (None, Some(v)) if v == "exact" => GradientMode::Exact,
        (None, Some(v)) => return Err(Error::invalid(format!("bad mode `{v}` in spec"))),
        (None, None) => GradientMode::Exact,
    };
    let mut config = OptimizerConfig::default();
    config.mode = mode;
    let _ = resolve_workers(args.workers, Some(&spec))?;

    let lambda = match (args.lambda, spec.settings.get("lambda")) {
        (Some(l), _) => Some(l),
        (None, Some(v)) => Some(v.parse().map_err(|_| {
            Error::invalid(format!("bad lambda value `{v}` in spec"))
        })?),
        (None, None) => None,
    };
    let want_path = args.path
        || args.two_stage.is_some()
        || spec.settings.get("path").map(String::as_str) == Some("true");
    if lambda.is_none() && !want_path {
        return Err(Error::invalid(
            "specify either --lambda or --path (or the spec-file equivalents)",
        ));
    }

    let dir = out_dir(args.out.clone())?;
    let start = optimizer::init_start(&problem, &config)?;

    let (bundle, path_report) = if want_path {
        let path = selection::fit_path(&problem, &config, &start, args.n_lambda)?;
        let path_report = PathReport::new(&problem, &path, std_ref)?;
        let two_stage = match args.two_stage {
            Some(TwoStageArg::Hybrid) => Some(TwoStageReport::new(
                &problem,
                &selection::select_hybrid(&problem, &path, &config)?,
                std_ref,
            )?),
            Some(TwoStageArg::Thresholded) => Some(TwoStageReport::new(
                &problem,
                &selection::select_thresholded(&problem, &path, &config)?,
                std_ref,
            )?),
            None => None,
        };
        let fit = match &two_stage {
            Some(t) => t.stage2.clone(),
            None => path_report.records[path_report.bic_index].clone(),
        };
        (FitBundle { fit, two_stage }, Some(path_report))
    } else {
        let record = optimizer::fit(&problem, lambda.unwrap(), &config, &start)?;
        (
            FitBundle {
                fit: FitReport::new(&problem, &record, std_ref)?,
                two_stage: None,
            },
            None,
        )
    };

    write_json(&dir, "fit.json", &bundle)?;
    let mut text = bundle.fit.to_text();
    if let Some(p) = &path_report {
        write_json(&dir, "path.json", p)?;
        write_text(&dir, "path.csv", &p.to_csv())?;
        text.push('\n');
        text.push_str(&p.to_text());
    }
    write_text(&dir, "fit.txt", &text)?;
    print!("{text}");

    Ok(if bundle.fit.converged { 0 } else { 2 })
}

fn known_designs() -> String {
    let mut names: Vec<&str> = SimDesign::known_names().to_vec();
    names.push("growing_p");
    names.join(", ")
}

fn cmd_simulate(args: SimArgs) -> Result<i32> {
    let workers = resolve_workers(args.workers, None)?;
    let dir = out_dir(args.out.clone())?;
    let name = args.design.to_lowercase();
    let full = args.full;
    let mut config = OptimizerConfig::default();
    config.mode = args.mode.gradient();

    if name == "growing_p" {
        let ps: Vec<usize> = if full {
            vec![5, 15, 25, 35, 45, 55, 65]
        } else {
            vec![5, 25, 45, 65]
        };
        let replicates = args.replicates.unwrap_or(if full { 50 } else { 10 });
        let cells = study::run_growing_p(
            &ps,
            replicates,
            args.seed,
            &config,
            args.n_lambda,
            workers,
        )?;
        write_text(&dir, "growing_p.csv", &report::growing_p_csv(&cells))?;
        let text = report::growing_p_text(&cells);
        write_text(&dir, "growing_p.txt", &text)?;
        print!("{text}");
        return Ok(0);
    }

    let design = SimDesign::from_name(&name).map_err(|_| {
        Error::invalid(format!(
            "unknown design `{}`; valid names: {}",
            args.design,
            known_designs()
        ))
    })?;
    let design = if full { design } else { design.desk() };
    let replicates = args.replicates.unwrap_or(if full { 100 } else { 20 });
    let mut cfg = StudyConfig::new(replicates, args.seed, config);
    cfg.n_lambda = args.n_lambda;
    cfg.workers = workers;

    let table = study::run_study(&design, &cfg)?;
    write_text(&dir, &format!("{name}_table.csv"), &report::study_csv(&table))?;
    let text = report::study_text(&table);
    write_text(&dir, &format!("{name}_table.txt"), &text)?;
    write_json(&dir, &format!("{name}_table.json"), &table)?;
    print!("{text}");
    Ok(0)
}

fn cmd_compare(args: CompareArgs) -> Result<i32> {
    let workers = resolve_workers(args.workers, None)?;
    let dir = out_dir(args.out.clone())?;
    let base = OptimizerConfig::default();

    let metrics = if let (Some(data), Some(spec_path)) = (&args.data, &args.spec) {
        let spec = ModelSpec::from_file(spec_path)?;
        let problem = input::load_problem(data, &spec)?;
        let start = optimizer::init_start(&problem, &base)?;
        let (grid, _) = selection::lambda_grid(&problem, &base, &start, args.n_lambda)?;
        let candidate = if args.self_check {
            GradientMode::Exact
        } else {
            GradientMode::Approximate
        };
        selection::compare_modes(
            &problem,
            &base,
            &start,
            &grid,
            GradientMode::Exact,
            candidate,
        )?
    } else {
        let name = args
            .design
            .as_deref()
            .ok_or_else(|| {
                Error::invalid("give a design name or --data with --spec")
            })?
            .to_lowercase();
        let design = SimDesign::from_name(&name).map_err(|_| {
            Error::invalid(format!(
                "unknown design `{name}`; valid names: {}",
                known_designs()
            ))
        })?;
        let design = if args.full { design } else { design.desk() };
        if args.self_check {
            let (problem, _) = design.instantiate(args.seed, 0)?;
            let start = optimizer::init_start(&problem, &base)?;
            let (grid, _) = selection::lambda_grid(&problem, &base, &start, args.n_lambda)?;
            selection::compare_modes(
                &problem,
                &base,
                &start,
                &grid,
                GradientMode::Exact,
                GradientMode::Exact,
            )?
        } else {
            study::run_mode_comparison(
                &design,
                args.replicates,
                args.seed,
                &base,
                args.n_lambda,
                workers,
            )?
        }
    };

    write_text(&dir, "compare.csv", &report::comparison_csv(&metrics))?;
    let text = report::comparison_text(&metrics);
    write_text(&dir, "compare.txt", &text)?;
    print!("{text}");

    if args.self_check && (metrics.mean_rel_ll != 0.0 || metrics.mean_rel_fix != 0.0) {
        return Err(Error::numerical(
            "self-check failed: identical modes produced different fits",
        ));
    }
    Ok(0)
}
