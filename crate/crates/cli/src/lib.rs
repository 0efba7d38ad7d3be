//! Command-line front end: CSV trial data in, JSON fits, CV tables, path
//! diagrams and benchmark tables out.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fitfile;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use smrmom::diagram::{DiagramNames, DiagramOptions};
use smrmom::selection::cv_table_csv;
use smrmom::simulation::{gen_draw, rep_seed};
use smrmom::{
    build_design, export_path_diagram, fit, select_lambdas, treatment_effect, BenchmarkConfig, CvPlan, Estimator,
    Hyperparameters, LambdaSelection, OutcomeKind, ProxScaling, ScenarioSpec, StepSize, TrueParams,
};

use config::Config;
use dataset::{load_csv, matrix_csv, read_columns, Schema};
use error::{CliError, Result};
use fitfile::{load_fit, save_fit, SavedFit};

#[derive(Debug, Parser)]
#[command(
    name = "smrmom",
    version,
    about = "Sparse latent-variable treatment effects on multiple outcomes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an estimator to trial data and save the fit as JSON.
    Fit(FitArgs),
    /// Cross-validate lambda_a and lambda_gamma over a grid.
    Cv(CvArgs),
    /// Apply a saved fit to new covariates.
    Predict(PredictArgs),
    /// Write the path diagram of a saved fit as DOT.
    Viz(VizArgs),
    /// Draw one simulated trial as CSV.
    Simulate(SimulateArgs),
    /// Run the replicated MSE benchmark.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `covariates`, `outcomes`, `treatment` and `kind`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub outcomes: Option<Vec<String>>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub kind: Option<OutcomeKind>,
    /// Center and scale covariates (divisor n - 1).
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Flat TOML file of hyperparameters and CV settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; falls back to the config file, then SMRMOM_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub lambda_gamma: Option<f64>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub prox_scaling: Option<ProxScaling>,
    /// `auto` or a fixed step.
    #[arg(long)]
    pub step_a: Option<StepSize>,
    #[arg(long)]
    pub step_gamma: Option<StepSize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_a_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_gamma_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub n_lambda_gamma: Option<usize>,
    #[arg(long)]
    pub lambda_gamma_ratio: Option<f64>,
    #[arg(long)]
    pub cv_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// CSV of every grid cell.
    #[arg(long)]
    pub table: PathBuf,
    /// JSON with the selected pair.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Refit on all rows with the selected pair and save the fit here.
    #[arg(long)]
    pub fit_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Covariate columns; defaults to the names stored in the fit.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Output DOT file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop entries with absolute value at most this.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    #[arg(long)]
    pub no_edge_labels: bool,
    /// Label outcomes by name instead of as modified outcomes.
    #[arg(long)]
    pub plain_outcomes: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value = "continuous")]
    pub kind: OutcomeKind,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replication index whose draw is written.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of the true effects.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Settings as a list or range, e.g. `1-4` or `1,3`.
    #[arg(long, default_value = "1-4")]
    pub settings: String,
    #[arg(long, value_delimiter = ',', default_value = "continuous,binary")]
    pub kinds: Vec<OutcomeKind>,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// `pilot`, `per-replication` or `fixed` (uses --lambda-a and --lambda-gamma).
    #[arg(long, default_value = "pilot")]
    pub selection: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl HyperArgs {
    fn config(&self) -> Result<Config> {
        let flags = Config {
            seed: self.seed,
            estimator: self.estimator.clone(),
            omega: self.omega,
            lambda_a: self.lambda_a,
            lambda_gamma: self.lambda_gamma,
            lambda_d: self.lambda_d,
            d: self.d,
            step_a: self.step_a,
            step_gamma: self.step_gamma,
            max_sweeps: self.max_sweeps,
            tol: self.tol,
            prox_scaling: self.prox_scaling,
            ..Default::default()
        };
        Ok(Config::load(self.config.as_deref())?.merge(flags))
    }
}

impl PlanArgs {
    fn overlay(&self, c: Config) -> Config {
        c.merge(Config {
            k: self.k,
            lambda_a_grid: self.lambda_a_grid.clone(),
            lambda_gamma_grid: self.lambda_gamma_grid.clone(),
            n_lambda_gamma: self.n_lambda_gamma,
            lambda_gamma_ratio: self.lambda_gamma_ratio,
            cv_seed: self.cv_seed,
            ..Default::default()
        })
    }
}

impl DataArgs {
    fn schema(&self) -> Result<Schema> {
        let base = match &self.schema {
            Some(p) => Some(Schema::from_toml(
                &std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            )?),
            None => None,
        };
        let pick = |flag: &Option<Vec<String>>, from: Option<&Vec<String>>, what: &str| {
            flag.clone()
                .or_else(|| from.cloned())
                .ok_or_else(|| CliError::Usage(format!("no {what} columns given (use --{what} or --schema)")))
        };
        let covariates = pick(&self.covariates, base.as_ref().map(|s| &s.covariates), "covariates")?;
        let outcomes = pick(&self.outcomes, base.as_ref().map(|s| &s.outcomes), "outcomes")?;
        let treatment = self
            .treatment
            .clone()
            .or_else(|| base.as_ref().map(|s| s.treatment.clone()))
            .ok_or_else(|| CliError::Usage("no treatment column given (use --treatment or --schema)".into()))?;
        let kind = self
            .kind
            .or(base.as_ref().map(|s| s.kind))
            .unwrap_or(OutcomeKind::Continuous);
        Ok(Schema {
            covariates,
            outcomes,
            treatment,
            kind,
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// Loads the dataset and resolves configuration shared by `fit` and `cv`.
fn prepare(data: &DataArgs, config: &Config) -> Result<(dataset::TrialDataset, smrmom::Problem, Hyperparameters)> {
    let schema = data.schema()?;
    let dataset = load_csv(&data.data, &schema)?;
    let standardize = data.standardize || config.standardize.unwrap_or(false);
    let problem = dataset.problem(standardize)?;
    let hyper = config.hyper(Hyperparameters::default());
    hyper.validate_for(&problem.x).map_err(usage)?;
    Ok((dataset, problem, hyper))
}

fn saved(result: smrmom::FitResult, dataset: &dataset::TrialDataset, problem: &smrmom::Problem) -> SavedFit {
    SavedFit {
        result,
        covariate_names: Some(dataset.covariate_names.clone()),
        outcome_names: Some(dataset.outcome_names.clone()),
        standardization: problem.x.standardization().cloned(),
    }
}

fn summary_line(r: &smrmom::FitResult) -> String {
    serde_json::json!({
        "estimator": r.estimator.to_string(),
        "kind": r.kind.to_string(),
        "converged": r.converged,
        "sweeps": r.sweeps(),
        "objective": r.objective_trace.last().copied(),
    })
    .to_string()
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let config = args.hyper.config()?;
    let estimator = config.estimator()?;
    let seed = config.seed_or(0)?;
    let (dataset, problem, hyper) = prepare(&args.data, &config)?;
    let result = fit(estimator, &problem, &hyper, seed)?;
    println!("{}", summary_line(&result));
    save_fit(&saved(result, &dataset, &problem), &args.out)
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let config = args.plan.overlay(args.hyper.config()?);
    let estimator = config.estimator()?;
    let seed = config.seed_or(0)?;
    let (dataset, problem, hyper) = prepare(&args.data, &config)?;
    let plan = config.plan(CvPlan {
        seed,
        ..CvPlan::default()
    });
    plan.validate().map_err(usage)?;
    let sel = select_lambdas(&problem, estimator, &hyper, &plan)?;
    let chosen = serde_json::json!({
        "estimator": estimator.to_string(),
        "lambda_a": sel.lambda_a,
        "lambda_gamma": sel.lambda_gamma,
        "score": sel.score,
        "k": plan.k,
        "seed": plan.seed,
    });
    let refit = match &args.fit_out {
        Some(_) => {
            let h = Hyperparameters {
                lambda_a: sel.lambda_a,
                lambda_gamma: sel.lambda_gamma,
                ..hyper
            };
            Some(fit(estimator, &problem, &h, seed)?)
        }
        None => None,
    };
    println!("{chosen}");
    write(&args.table, &cv_table_csv(&sel.table))?;
    if let Some(p) = &args.out {
        write(
            p,
            &format!("{}\n", serde_json::to_string_pretty(&chosen).expect("json")),
        )?;
    }
    if let (Some(p), Some(r)) = (&args.fit_out, refit) {
        save_fit(&saved(r, &dataset, &problem), p)?;
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let saved = load_fit(&args.fit)?;
    let model = &saved.result.model;
    let columns = match (&args.covariates, &saved.covariate_names) {
        (Some(c), _) => c.clone(),
        (None, Some(c)) if c.len() + 1 == model.a.nrows() => c.clone(),
        _ => {
            return Err(CliError::Usage(
                "the fit does not record its covariate columns; pass --covariates".into(),
            ))
        }
    };
    if columns.len() + 1 != model.a.nrows() {
        return Err(CliError::Data(format!(
            "the fit expects {} covariates, {} given",
            model.a.nrows() - 1,
            columns.len()
        )));
    }
    let file = std::fs::File::open(&args.data).map_err(|e| CliError::io(&args.data, e))?;
    let (_, raw) = read_columns(file, &columns)?;
    let raw = match &saved.standardization {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    let x = build_design(&raw, false)?;
    let effect = treatment_effect(&x, model)?;
    let names: Vec<String> = match &saved.outcome_names {
        Some(n) => n.iter().map(|o| format!("effect_{o}")).collect(),
        None => (1..=model.p()).map(|l| format!("effect_Y{l}")).collect(),
    };
    write_or_print(args.out.as_deref(), &matrix_csv(&names, &effect))
}

fn cmd_viz(args: &VizArgs) -> Result<()> {
    let saved = load_fit(&args.fit)?;
    let model = &saved.result.model;
    let mut names = DiagramNames::default_for(model);
    if let Some(c) = &saved.covariate_names {
        // Raw column names get the intercept prepended; a full list labels every row.
        names.covariates = if c.len() + 1 == model.a.nrows() {
            std::iter::once("intercept".to_string())
                .chain(c.iter().cloned())
                .collect()
        } else {
            c.clone()
        };
    }
    if let Some(o) = &saved.outcome_names {
        names.outcomes = o.clone();
    }
    let options = DiagramOptions {
        threshold: args.threshold,
        edge_labels: !args.no_edge_labels,
        modified_outcomes: !args.plain_outcomes,
    };
    let dot = export_path_diagram(model, &names, &options).map_err(|e| CliError::Data(e.to_string()))?;
    write_or_print(args.out.as_deref(), &dot)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = ScenarioSpec::setting(args.setting).map_err(usage)?;
    let truth = TrueParams::for_spec(&spec)?;
    let seed = Config {
        seed: args.seed,
        ..Default::default()
    }
    .seed_or(7)?;
    let draw = gen_draw(&spec, &truth, args.kind, rep_seed(seed, spec.setting, args.rep)).map_err(usage)?;
    let p = &draw.problem;
    let covariates: Vec<String> = (1..=spec.m).map(|j| format!("x{j}")).collect();
    let outcomes: Vec<String> = (1..=spec.p).map(|l| format!("Y{l}")).collect();
    let dataset = dataset::TrialDataset {
        covariate_names: covariates,
        outcome_names: outcomes.clone(),
        treatment_name: "t".into(),
        covariates: p.x.values().columns(1, spec.m).into_owned(),
        treatment: p.t.clone(),
        outcomes: p.y.clone(),
    };
    write(&args.out, &dataset.to_csv())?;
    if let Some(path) = &args.truth {
        let names: Vec<String> = outcomes.iter().map(|o| format!("effect_{o}")).collect();
        write(path, &matrix_csv(&names, &draw.true_effect))?;
    }
    Ok(())
}

/// `1-4`, `2`, `1,3` or a mix such as `1,3-4`.
pub fn parse_settings(text: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        let bad = || CliError::Usage(format!("invalid settings '{text}'"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u8, u8) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    for &s in &out {
        ScenarioSpec::setting(s).map_err(usage)?;
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn benchmark_config(args: &BenchmarkArgs) -> Result<BenchmarkConfig> {
    let config = args.plan.overlay(args.hyper.config()?);
    let base = BenchmarkConfig::default();
    let estimators = match &args.estimators {
        None => base.estimators.clone(),
        Some(list) => list
            .iter()
            .map(|s| s.parse::<Estimator>().map_err(usage))
            .collect::<Result<Vec<_>>>()?,
    };
    let seed = config.seed_or(base.seed)?;
    let selection = match args.selection.as_str() {
        "pilot" => LambdaSelection::Pilot,
        "per-replication" => LambdaSelection::PerReplication,
        "fixed" => match (config.lambda_a, config.lambda_gamma) {
            (Some(lambda_a), Some(lambda_gamma)) => LambdaSelection::Fixed { lambda_a, lambda_gamma },
            _ => {
                return Err(CliError::Usage(
                    "fixed selection needs --lambda-a and --lambda-gamma".into(),
                ))
            }
        },
        other => return Err(CliError::Usage(format!("unknown selection '{other}'"))),
    };
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let hyper = config.hyper(base.hyper.clone());
    hyper.validate().map_err(usage)?;
    let plan = config.plan(base.plan.clone());
    plan.validate().map_err(usage)?;
    Ok(BenchmarkConfig {
        settings: parse_settings(&args.settings)?,
        kinds: args.kinds.clone(),
        estimators,
        reps: args.reps,
        seed,
        hyper,
        plan,
        selection,
    })
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let config = benchmark_config(args)?;
    let report = smrmom::run_benchmark(&config)?;
    let mut tables = String::new();
    for &kind in &config.kinds {
        tables.push_str(&report.render_table(kind));
        tables.push('\n');
    }
    let json = format!(
        "{}\n",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    write(&args.out_dir.join("summary.csv"), &report.summary_csv())?;
    write(&args.out_dir.join("reps.csv"), &report.reps_csv())?;
    write(&args.out_dir.join("report.json"), &json)?;
    write(&args.out_dir.join("tables.txt"), &tables)?;
    print!("{tables}");
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Viz(a) => cmd_viz(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures print one JSON line to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            let err = CliError::Usage(first);
            eprintln!("{}", err.json_line());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.json_line());
            e.exit_code()
        }
    }
}
