use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dmm::cluster::{fit, ClusterConfig, DEFAULT_LAMBDA_GRID};
use dmm::eval::{loglik_report, macro_f1};
use dmm::experiments::{accuracy_run, loglog_slope, scaling_csv, time_fit, PipelineConfig};
use dmm::export::{adjacency, select_network, to_dot};
use dmm::io::{
    read_labels_file, read_result_file, read_tts_file, write_json, write_json_file, write_labels_file,
    write_tts_file, ResultFile,
};
use dmm::synth::{gen_tts, Sequence};
use dmm::{AdmmConfig, Error, InitialWindows, TensorTS};

#[derive(Parser)]
#[command(name = "dmm", version, about = "Segment and cluster tensor time series into sparse per-mode networks")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic series.
    Generate(GenerateArgs),
    /// Fit segments, clusters and networks to a series.
    Fit(FitArgs),
    /// Score fitted labels against ground truth.
    Eval(EvalArgs),
    /// Export one cluster's network for one mode.
    Export(ExportArgs),
    /// Run accuracy or scaling experiments.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Named sequence (A-D) or comma-separated cluster ids.
    #[arg(long)]
    sequence: Sequence,
    /// Variable dimensions, e.g. `10` or `10,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes PREFIX.tts, PREFIX.labels.csv, PREFIX.truth.json.
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Constant initial window length.
    #[arg(long, default_value_t = 4, conflicts_with = "windows")]
    window: usize,
    /// Explicit initial segment lengths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    /// Sparsity weights to search, comma-separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 20)]
    max_em_iters: usize,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long)]
    admm_rho: Option<f64>,
    #[arg(long)]
    admm_max_iter: Option<usize>,
    #[arg(long)]
    admm_abs_tol: Option<f64>,
    #[arg(long)]
    admm_rel_tol: Option<f64>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut admm = AdmmConfig::default();
        if let Some(v) = self.admm_rho {
            admm.rho = v;
        }
        if let Some(v) = self.admm_max_iter {
            admm.max_iter = v;
        }
        if let Some(v) = self.admm_abs_tol {
            admm.abs_tol = v;
        }
        if let Some(v) = self.admm_rel_tol {
            admm.rel_tol = v;
        }
        let cluster = ClusterConfig { admm, max_em_iters: self.max_em_iters, restarts: self.restarts, k_max: self.k_max };
        cluster.validate()?;
        let window = match &self.windows {
            Some(sizes) => InitialWindows::Sizes(sizes.clone()),
            None => InitialWindows::Constant(self.window),
        };
        let lambda_grid = self.lambda.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
        Ok(PipelineConfig { window, lambda_grid, cluster })
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input `.tts` file.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize every variable within consecutive periods of this length.
    #[arg(long)]
    normalize_period: Option<usize>,
    /// Fill `nan` entries by linear interpolation.
    #[arg(long)]
    interpolate: bool,
    /// Result JSON path (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write per-step cluster labels as CSV.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Result JSON; repeat together with --labels for batch evaluation.
    #[arg(long, required = true)]
    result: Vec<PathBuf>,
    /// Ground-truth labels CSV, one per --result.
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    /// Series the result was fitted on, to report its log-likelihood.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    interpolate: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Dot,
    Json,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    result: PathBuf,
    /// 1-based cluster id.
    #[arg(long)]
    cluster: usize,
    /// 1-based mode index.
    #[arg(long)]
    mode: usize,
    #[arg(long, value_enum, default_value_t = ExportFormat::Dot)]
    format: ExportFormat,
    /// Series carrying variable names in `# labels` comments.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    kind: BenchKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum Vary {
    T,
    D1,
}

#[derive(Subcommand)]
enum BenchKind {
    /// Time the fit while growing the series length or the first dimension.
    Scaling {
        #[arg(long, value_enum, default_value_t = Vary::T)]
        vary: Vary,
        /// Values of the varied size.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        /// Fixed dims; the first entry is replaced when varying D1.
        #[arg(long, value_delimiter = ',', default_value = "5,5")]
        dims: Vec<usize>,
        /// Fixed series length when varying D1.
        #[arg(long, default_value_t = 800)]
        t_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// CSV path (stdout if omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mean macro-F1 over seeds for one synthetic setting.
    Accuracy {
        #[arg(long)]
        sequence: Sequence,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn emit_json<T: serde::Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => write_json_file(path, value).with_context(|| format!("writing {}", path.display()))?,
        None => write_json(std::io::stdout().lock(), value)?,
    }
    Ok(())
}

fn emit_text(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_series(path: &Path, interpolate: bool) -> Result<TensorTS> {
    read_tts_file(path, interpolate).with_context(|| format!("reading {}", path.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (x, truth) = gen_tts(&args.sequence, &args.dims, args.seed)?;
    write_tts_file(&with_suffix(&args.out, ".tts"), &x)?;
    write_labels_file(&with_suffix(&args.out, ".labels.csv"), &truth.labels)?;
    write_json_file(&with_suffix(&args.out, ".truth.json"), &truth)?;
    log::info!("generated series of shape {:?}", x.shape());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let cfg = args.pipeline.config()?;
    let mut x = load_series(&args.input, args.interpolate)?;
    if let Some(period) = args.normalize_period {
        if period == 0 {
            bail!(Error::InvalidArgument("normalization period must be positive".into()));
        }
        x = x.normalize_periods(&TensorTS::fixed_periods(x.len_t(), period))?;
    }
    let result = fit(&x, &cfg.window, &cfg.lambda_grid, args.seed, &cfg.cluster)?;
    if result.diagnostics.nonconverged_networks > 0 {
        log::warn!("{} network fits hit the ADMM iteration cap", result.diagnostics.nonconverged_networks);
    }
    if !result.diagnostics.em_converged {
        log::warn!("EM stopped before reaching a fixed point");
    }
    log::info!(
        "lambda {} K {} segments {} total cost {:.3}",
        result.lambda,
        result.k,
        result.assignments.m(),
        result.costs.total
    );
    if let Some(path) = &args.labels_out {
        write_labels_file(path, &result.labels())?;
    }
    emit_json(&ResultFile::new(x.shape(), &result), args.output.as_deref())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.result.len() != args.labels.len() {
        bail!(Error::InvalidArgument("--result and --labels must be given the same number of times".into()));
    }
    let series = args.input.as_deref().map(|p| load_series(p, args.interpolate)).transpose()?;
    let mut reports = Vec::new();
    for (rp, lp) in args.result.iter().zip(&args.labels) {
        let params = read_result_file(rp).with_context(|| format!("reading {}", rp.display()))?.into_params()?;
        let truth = read_labels_file(lp).with_context(|| format!("reading {}", lp.display()))?;
        let mut report = macro_f1(&params.labels(), &truth)?;
        if let Some(x) = &series {
            report = report.with_loglik(&loglik_report(x, &params)?);
        }
        reports.push(report);
    }
    if reports.len() == 1 {
        return emit_json(&reports[0], args.output.as_deref());
    }
    let mean = reports.iter().map(|r| r.macro_f1).sum::<f64>() / reports.len() as f64;
    let per_run: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    emit_json(&json!({ "mean_macro_f1": mean, "macro_f1": per_run, "reports": reports }), args.output.as_deref())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let params = read_result_file(&args.result)
        .with_context(|| format!("reading {}", args.result.display()))?
        .into_params()?;
    let net = select_network(&params, args.cluster, args.mode)?;
    let series = args.input.as_deref().map(|p| load_series(p, true)).transpose()?;
    let labels = series.as_ref().and_then(|x| x.mode_labels()).map(|l| l[args.mode - 1].as_slice());
    let adj = adjacency(net, args.cluster, labels)?;
    match args.format {
        ExportFormat::Dot => emit_text(&to_dot(&adj), args.output.as_deref()),
        ExportFormat::Json => emit_json(&adj, args.output.as_deref()),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    match args.kind {
        BenchKind::Scaling { vary, values, dims, t_len, seed, pipeline, output } => {
            let cfg = pipeline.config()?;
            let mut points = Vec::new();
            let sizes = values.unwrap_or_else(|| match vary {
                Vary::T => vec![800, 1600, 3200, 6400],
                Vary::D1 => vec![5, 10, 20, 40],
            });
            for &v in &sizes {
                let (d, t) = match vary {
                    Vary::T => (dims.clone(), v),
                    Vary::D1 => {
                        let mut d = dims.clone();
                        d[0] = v;
                        (d, t_len)
                    }
                };
                let p = time_fit(&d, t, seed, &cfg)?;
                log::info!("dims {:?} T {} took {:.3}s", p.dims, p.t_len, p.seconds);
                points.push(p);
            }
            let xs: Vec<f64> = sizes.iter().map(|&v| v as f64).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.seconds).collect();
            if xs.len() >= 2 {
                log::info!("log-log slope {:.3}", loglog_slope(&xs, &ys));
            }
            emit_text(&scaling_csv(&points), output.as_deref())
        }
        BenchKind::Accuracy { sequence, dims, seeds, pipeline, output } => {
            let cfg = pipeline.config()?;
            let runs = (0..seeds).map(|s| accuracy_run(&sequence, &dims, s, &cfg)).collect::<dmm::Result<Vec<_>>>()?;
            let mean = runs.iter().map(|r| r.macro_f1).sum::<f64>() / runs.len().max(1) as f64;
            let k_hits = runs.iter().filter(|r| r.k_selected == r.k_true).count();
            emit_json(
                &json!({ "sequence": sequence.to_string(), "dims": dims, "mean_macro_f1": mean, "k_correct": k_hits, "runs": runs }),
                output.as_deref(),
            )
        }
    }
}

/// Exit status for a failed command: 3 for bad input data, 4 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InsufficientData(_) | Error::InvalidStats(_) | Error::InvalidModel(_)) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
