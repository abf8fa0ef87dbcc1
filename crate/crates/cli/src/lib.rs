//! The `afs` command line: subcommand definitions and their implementations.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use afs_core::cv::{kfold_cv, refit, CvReport, Fitter, DEFAULT_FOLDS, DEFAULT_RHO_GRID};
use afs_core::dataset::{load_csv, split_train_test, Dataset, Family};
use afs_core::export::PathFile;
use afs_core::inference::{coefficient_contrast, selection_polyhedron, tg_test, ContrastKind};
use afs_core::lasso::lasso_path;
use afs_core::logistic::{afs_logistic_fit, binomial_deviance, logistic_design};
use afs_core::models::{FittedModel, Method};
use afs_core::sim::{derive_seed, gen_data, run_benchmark, run_timing, BenchOptions, SimConfig};
use afs_core::{afs_fit, standardize, AfsConfig, L1Cap};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    /// Process exit status: 2 for bad input, 3 for numerical failures.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<afs_core::Error> for CliError {
    fn from(e: afs_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Afs,
    Fs,
    Lasso,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Afs => Method::Afs,
            MethodArg::Fs => Method::Fs,
            MethodArg::Lasso => Method::Lasso,
        }
    }
}

#[derive(Parser)]
#[command(name = "afs", version, about = "Adaptive forward stepwise regression")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one coefficient path and write it out.
    Fit(FitArgs),
    /// K-fold cross-validation over the tuning grid, then refit on all rows.
    Cv(CvArgs),
    /// Truncated-Gaussian test for the variable chosen at a given step.
    Infer(InferArgs),
    /// Run every method on data drawn from one simulation setting.
    Simulate(SimulateArgs),
    /// Run a grid of simulation settings.
    Bench(BenchArgs),
    /// Repeated train/test splits, test error relative to the LASSO.
    SplitEval(SplitEvalArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Name of the response column; all other columns are predictors.
    #[arg(long)]
    response: String,
    #[arg(long, default_value = "gaussian")]
    family: Family,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "afs")]
    method: MethodArg,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    /// `auto`, `inf`, or a number.
    #[arg(long, default_value = "auto")]
    l1_cap: L1Cap,
    #[arg(long, default_value_t = 100)]
    n_lambda: usize,
    #[arg(long, default_value_t = 1e-3)]
    lambda_min_ratio: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "afs")]
    method: MethodArg,
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    #[arg(long, default_value = "auto")]
    l1_cap: L1Cap,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Path file written by `fit` (JSON) for the same data.
    #[arg(long)]
    path: PathBuf,
    /// Step whose selected variable is tested.
    #[arg(long)]
    step: usize,
    /// Known noise standard deviation.
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimOpts {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "afs,fs,lasso")]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 300)]
    max_steps: usize,
    #[arg(long, default_value_t = 40)]
    fs_max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Include wall-clock times in the output (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

impl SimOpts {
    fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            folds: self.k,
            rho_grid: self.rho_grid.clone().unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec()),
            max_steps: self.max_steps,
            fs_max_steps: self.fs_max_steps,
            ..BenchOptions::default()
        }
    }

    fn methods(&self) -> Vec<Method> {
        self.methods.iter().map(|&m| m.into()).collect()
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    corr: f64,
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Also write the first trial's data set here as CSV (response column `y`).
    #[arg(long)]
    data_out: Option<PathBuf>,
    #[command(flatten)]
    opts: SimOpts,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![100])]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![100])]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
    corr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0])]
    snr: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Run the path-fit timing harness at the first `--n` over these p values instead.
    #[arg(long, value_delimiter = ',')]
    timing_ps: Option<Vec<usize>>,
    #[command(flatten)]
    opts: SimOpts,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SplitEvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            let nl = if text.ends_with('\n') { "" } else { "\n" };
            match write!(stdout, "{text}{nl}").and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Input(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))
}

fn csv_text<F>(header: &[&str], fill: F) -> CliResult<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let run = || -> csv::Result<Vec<u8>> {
        w.write_record(header)?;
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error().into())
    };
    let bytes = run().map_err(|e| CliError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))
}

fn load(data: &DataArgs) -> CliResult<Dataset> {
    let d = load_csv(&data.input, &data.response, data.family)?;
    log::info!("loaded {} rows x {} predictors from {}", d.n(), d.p(), data.input.display());
    Ok(d)
}

fn fitter_for(family: Family, method: MethodArg, rho_grid: Option<Vec<f64>>, max_steps: usize, l1_cap: L1Cap) -> CliResult<Fitter> {
    let grid = rho_grid.unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
    Ok(match (family, method) {
        (Family::Gaussian, MethodArg::Afs) => Fitter::Afs {
            rho_grid: grid,
            max_steps,
            l1_cap,
        },
        (Family::Gaussian, MethodArg::Fs) => Fitter::Fs { max_steps, l1_cap },
        (Family::Gaussian, MethodArg::Lasso) => Fitter::lasso(),
        (Family::Binomial, MethodArg::Afs) => Fitter::LogisticAfs {
            rho_grid: grid,
            max_steps,
            l1_cap,
        },
        (Family::Binomial, MethodArg::Fs) => Fitter::LogisticAfs {
            rho_grid: vec![1.0],
            max_steps,
            l1_cap,
        },
        (Family::Binomial, MethodArg::Lasso) => {
            return Err(CliError::Input("lasso is only available for the gaussian family".into()))
        }
    })
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let data = load(&a.data)?;
    let names = &data.feature_names;
    let file = match (data.family, a.method) {
        (Family::Gaussian, MethodArg::Lasso) => {
            let d = standardize(&data.x, &data.y, true)?;
            let path = lasso_path(&d, a.n_lambda, a.lambda_min_ratio)?;
            PathFile::from_lasso(&d, &path, names, &data.response_name)
        }
        (Family::Gaussian, m) => {
            let rho = if m == MethodArg::Fs { 1.0 } else { a.rho };
            let d = standardize(&data.x, &data.y, true)?;
            let path = afs_fit(&d, &AfsConfig::new(rho, a.max_steps).with_l1_cap(a.l1_cap))?;
            PathFile::from_afs(&d, &path, names, &data.response_name)
        }
        (Family::Binomial, MethodArg::Lasso) => {
            return Err(CliError::Input("lasso is only available for the gaussian family".into()))
        }
        (Family::Binomial, m) => {
            let rho = if m == MethodArg::Fs { 1.0 } else { a.rho };
            let d = logistic_design(&data.x, &data.y)?;
            let path = afs_logistic_fit(&d, &AfsConfig::new(rho, a.max_steps).with_l1_cap(a.l1_cap))?;
            let mut file = PathFile::from_logistic(&d, &path, names, &data.response_name);
            if m == MethodArg::Fs {
                file.method = "fs".into();
            }
            file
        }
    };
    let text = match a.out.format {
        Format::Json => file.to_json()?,
        Format::Csv => file.to_csv()?,
    };
    emit(&a.out.out, &text)
}

#[derive(Serialize)]
struct CvOutput {
    report: CvReport,
    feature_names: Vec<String>,
    model: FittedModel,
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_cv(a: CvArgs) -> CliResult<()> {
    let data = load(&a.data)?;
    let fitter = fitter_for(data.family, a.method, a.rho_grid, a.max_steps, a.l1_cap)?;
    let report = kfold_cv(&data.x, &data.y, &fitter, a.k, a.seed)?;
    let model = refit(&data.x, &data.y, &fitter, &report.selected_point())?;
    let text = match a.out.format {
        Format::Json => to_json(&CvOutput {
            report,
            feature_names: data.feature_names,
            model,
        })?,
        Format::Csv => csv_text(&["rho", "step", "lambda", "cv_mean", "cv_se", "selected"], |w| {
            for (i, g) in report.grid.iter().enumerate() {
                w.write_record([
                    opt_str(g.rho),
                    opt_str(g.step),
                    opt_str(g.lambda),
                    report.cv_mean[i].to_string(),
                    report.cv_se[i].to_string(),
                    (i == report.selected).to_string(),
                ])?;
            }
            Ok(())
        })?,
    };
    emit(&a.out.out, &text)
}

#[derive(Serialize)]
struct InferOutput {
    step: usize,
    variable: usize,
    name: String,
    contrast: ContrastKind,
    stat: f64,
    pvalue: f64,
    ci_lo: f64,
    ci_hi: f64,
    vlo: f64,
    vup: f64,
    sigma: f64,
    underflow: bool,
    degenerate: bool,
}

fn cmd_infer(a: InferArgs) -> CliResult<()> {
    if a.data.family != Family::Gaussian {
        return Err(CliError::Input("inference is only available for the gaussian family".into()));
    }
    let text = std::fs::read_to_string(&a.path).map_err(|e| CliError::Input(format!("{}: {e}", a.path.display())))?;
    let file = PathFile::from_json(&text)?;
    let config = file
        .config
        .ok_or_else(|| CliError::Input("path file has no AFS configuration (LASSO paths cannot be tested)".into()))?;
    if file.family != Family::Gaussian {
        return Err(CliError::Input("path file is not a gaussian fit".into()));
    }
    let data = load(&a.data)?;
    if data.feature_names != file.feature_names {
        return Err(CliError::Input("path file was fitted on different columns".into()));
    }
    let d = standardize(&data.x, &data.y, true)?;
    let h = file.l1_cap.unwrap_or(f64::INFINITY);
    let path = afs_fit(&d, &config.with_l1_cap(L1Cap::Fixed(h)))?;
    let recorded: Vec<Option<usize>> = file.steps.iter().map(|s| s.chosen).collect();
    let refitted: Vec<Option<usize>> = path.steps.iter().map(|s| Some(s.chosen)).collect();
    if recorded != refitted {
        return Err(CliError::Input("path file does not match a refit on this data".into()));
    }
    let event = selection_polyhedron(&d, &path, a.step)?;
    let step = &path.steps[a.step - 1];
    let (v, kind) = coefficient_contrast(&d, &step.active, step.chosen)?;
    let test = tg_test(&event, &v, a.sigma, 0.0)?;
    let out = InferOutput {
        step: a.step,
        variable: step.chosen,
        name: data.feature_names[step.chosen].clone(),
        contrast: kind,
        stat: test.stat,
        pvalue: test.pvalue,
        ci_lo: test.ci.0,
        ci_hi: test.ci.1,
        vlo: test.vlo,
        vup: test.vup,
        sigma: a.sigma,
        underflow: test.underflow,
        degenerate: test.degenerate,
    };
    emit(&a.out, &to_json(&out)?)
}

fn write_data_csv(path: &PathBuf, x: &nalgebra::DMatrix<f64>, y: &nalgebra::DVector<f64>) -> CliResult<()> {
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let text = csv_text(&refs, |w| {
        for i in 0..x.nrows() {
            let mut row: Vec<String> = (0..x.ncols()).map(|j| x[(i, j)].to_string()).collect();
            row.push(y[i].to_string());
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn bench_output(report: &afs_core::sim::BenchmarkReport, out: &OutArgs, timing: bool) -> CliResult<()> {
    let text = match out.format {
        Format::Json => report.to_json(timing)?,
        Format::Csv => report.to_csv(timing)?,
    };
    emit(&out.out, &text)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let cell = SimConfig::equicorrelated(a.n, a.p, a.corr, a.snr, a.opts.seed);
    cell.validate()?;
    if let Some(path) = &a.data_out {
        let mut first = cell.clone();
        first.seed = derive_seed(a.opts.seed, &[0, 0]);
        let data = gen_data(&first)?;
        write_data_csv(path, &data.x, &data.y)?;
    }
    let report = run_benchmark(&[cell], &a.opts.methods(), a.trials, a.opts.seed, &a.opts.bench_options())?;
    bench_output(&report, &a.out, a.opts.timing)
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    if let Some(ps) = &a.timing_ps {
        let rows = run_timing(a.n[0], ps, &a.opts.methods(), a.trials, a.opts.seed, &a.opts.bench_options())?;
        let text = match a.out.format {
            Format::Json => to_json(&rows)?,
            Format::Csv => csv_text(&["n", "p", "method", "trial", "selected", "wall_time_secs"], |w| {
                for r in &rows {
                    w.write_record([
                        r.n.to_string(),
                        r.p.to_string(),
                        r.method.to_string(),
                        r.trial.to_string(),
                        r.selected.to_string(),
                        r.wall_time_secs.to_string(),
                    ])?;
                }
                Ok(())
            })?,
        };
        return emit(&a.out.out, &text);
    }
    let mut cells = Vec::new();
    for &n in &a.n {
        for &p in &a.p {
            for &corr in &a.corr {
                for &snr in &a.snr {
                    let cell = SimConfig::equicorrelated(n, p, corr, snr, a.opts.seed);
                    cell.validate()?;
                    cells.push(cell);
                }
            }
        }
    }
    let report = run_benchmark(&cells, &a.opts.methods(), a.trials, a.opts.seed, &a.opts.bench_options())?;
    bench_output(&report, &a.out, a.opts.timing)
}

#[derive(Serialize)]
struct SplitRow {
    trial: usize,
    method: String,
    test_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative: Option<f64>,
    support: usize,
}

fn test_loss(family: Family, model: &FittedModel, test: &Dataset) -> f64 {
    let eta = model.predict(&test.x);
    match family {
        Family::Gaussian => (&eta - &test.y).norm_squared() / test.n() as f64,
        Family::Binomial => binomial_deviance(&test.y, &eta) / test.n() as f64,
    }
}

fn cmd_split_eval(a: SplitEvalArgs) -> CliResult<()> {
    let data = load(&a.data)?;
    if a.trials == 0 {
        return Err(CliError::Input("trials must be at least 1".into()));
    }
    let methods: &[MethodArg] = match data.family {
        Family::Gaussian => &[MethodArg::Afs, MethodArg::Fs, MethodArg::Lasso],
        Family::Binomial => &[MethodArg::Afs, MethodArg::Fs],
    };
    let mut rows = Vec::new();
    for t in 0..a.trials {
        let (train, test) = split_train_test(&data, a.test_fraction, derive_seed(a.seed, &[t as u64, 0]))?;
        let mut trial_rows: Vec<SplitRow> = Vec::new();
        for &m in methods {
            let fitter = fitter_for(data.family, m, a.rho_grid.clone(), a.max_steps, L1Cap::Auto)?;
            let report = kfold_cv(&train.x, &train.y, &fitter, a.k, derive_seed(a.seed, &[t as u64, 1]))?;
            let model = refit(&train.x, &train.y, &fitter, &report.selected_point())?;
            trial_rows.push(SplitRow {
                trial: t,
                method: Method::from(m).to_string(),
                test_loss: test_loss(data.family, &model, &test),
                relative: None,
                support: model.support().len(),
            });
        }
        if let Some(base) = trial_rows.iter().find(|r| r.method == "lasso").map(|r| r.test_loss) {
            for r in &mut trial_rows {
                r.relative = Some(r.test_loss / base);
            }
        }
        rows.extend(trial_rows);
    }
    let text = match a.out.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => csv_text(&["trial", "method", "test_loss", "relative", "support"], |w| {
            for r in &rows {
                w.write_record([
                    r.trial.to_string(),
                    r.method.clone(),
                    r.test_loss.to_string(),
                    opt_str(r.relative),
                    r.support.to_string(),
                ])?;
            }
            Ok(())
        })?,
    };
    emit(&a.out.out, &text)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::SplitEval(a) => cmd_split_eval(a),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("afs")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Input(e.to_string()))?;
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(CliError::from(afs_core::Error::SingularGram(3)).code(), 3);
        assert_eq!(CliError::from(afs_core::Error::NoConvergence { lambda: 0.1 }).code(), 3);
        assert_eq!(CliError::from(afs_core::Error::MissingColumn("y".into())).code(), 2);
        assert_eq!(CliError::from(afs_core::Error::EmptyDataset).code(), 2);
    }

    #[test]
    fn arguments_parse() {
        Cli::command().debug_assert();
        assert!(Cli::try_parse_from(["afs", "fit", "--input", "a.csv", "--response", "y", "--rho", "x"]).is_err());
    }
}
