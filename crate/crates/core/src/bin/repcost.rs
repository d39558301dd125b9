//! Command-line front end: training, the convex oracle and the experiments.
//!
//! Every subcommand accepts `--config FILE`, a flat `key = value` file whose
//! entries act like the corresponding long flags; flags given on the command
//! line win. Exit codes: 0 pass, 1 threshold breach or failed run, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use repcost::experiments::{
    appendix_b, linspace, multitask_demo, theorem_check, theorem_check_on, width_sweep, AppendixBConfig,
    MultitaskConfig, TheoremCheckConfig, WidthSweepConfig,
};
use repcost::net::write_network;
use repcost::oracle::{atoms_to_network, build_grid, prediction_csv, solve_group_lasso, SolverConfig};
use repcost::pfunc::{matching_network_cost, PenaltyKind};
use repcost::svg::{emit_svg, Plot, Series};
use repcost::tasks::{gen_coupling_pair, gen_periodic7, gen_random, load_csv, save_csv};
use repcost::train::{train, Optimizer, TrainConfig};
use repcost::{Architecture, Dataset, Error, InnerActivation, SkipKind};

#[derive(Parser, Debug)]
#[command(name = "repcost", version, about = "Weight-decay trained stacked ReLU networks and their convex oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a stacked network on a dataset.
    #[command(args_override_self = true)]
    Train(TrainCmd),
    /// Solve the group-lasso problem over a grid of kink atoms (1-D input).
    #[command(args_override_self = true)]
    Oracle(OracleCmd),
    /// Compare a trained one-stack network with the oracle.
    #[command(args_override_self = true)]
    TheoremCheck(TheoremCmd),
    /// Joint versus per-task fitting on the two-task coupling data.
    #[command(args_override_self = true)]
    MultitaskDemo(MultitaskCmd),
    /// Three-stack shared representation on seven periodic tasks.
    #[command(args_override_self = true)]
    AppendixB(AppendixBCmd),
    /// Best objective as a function of the bottleneck dimension.
    #[command(args_override_self = true)]
    WidthSweep(WidthSweepCmd),
    /// Write a generated dataset as CSV.
    #[command(args_override_self = true)]
    GenData(GenDataCmd),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// `key = value` file of default flag values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    adam_iters: Option<usize>,
    #[arg(long)]
    adam_lr: Option<f64>,
    #[arg(long)]
    adam_lr_final: Option<f64>,
    /// Iteration budget of the gradient-descent phase.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.restarts {
            cfg.restarts = v;
        }
        if let Some(v) = self.adam_iters {
            cfg.adam_iters = v;
        }
        if let Some(v) = self.adam_lr {
            cfg.adam_lr = v;
        }
        if let Some(v) = self.adam_lr_final {
            cfg.adam_lr_final = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.init_scale {
            cfg.init_scale = v;
        }
        if let Some(v) = self.grad_tol {
            cfg.grad_norm_tol = v;
        }
        if let Some(v) = self.optimizer {
            cfg.optimizer = match v {
                OptimizerArg::Gd => Optimizer::Gd,
                OptimizerArg::AdamGd => Optimizer::AdamThenGd,
            };
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OptimizerArg {
    Gd,
    AdamGd,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Generator {
    Random,
    Periodic7,
    Coupling,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with columns x_*, y_* and optional m_* masks.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    generator: Generator,
    /// Number of samples.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    d_in: usize,
    #[arg(long, default_value_t = 2)]
    d_out: usize,
    #[arg(long, default_value_t = 1.0)]
    period: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
}

impl DataArgs {
    fn load(&self, seed: u64) -> repcost::Result<Dataset> {
        if let Some(path) = &self.data {
            return load_csv(path);
        }
        match self.generator {
            Generator::Random => Ok(gen_random(self.n, self.d_in, self.d_out, seed)),
            Generator::Periodic7 => gen_periodic7(self.n, self.period, self.noise_sd, seed),
            Generator::Coupling => Ok(gen_coupling_pair(seed)),
        }
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Hidden neurons per stack, comma separated; one value per stack.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    widths: Vec<usize>,
    /// Bottleneck dimensions between stacks, comma separated.
    #[arg(long, value_delimiter = ',')]
    bottlenecks: Vec<usize>,
    #[arg(long, default_value = "relu")]
    inner: String,
    /// Skip kind per stack (none, linear, factored); one value applies to all.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    skips: Vec<String>,
    /// Allow stacks with no more neurons than training points.
    #[arg(long)]
    allow_narrow: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PenaltyArg {
    Bias,
    NoBias,
}

#[derive(Args, Debug)]
struct OracleCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, value_enum, default_value = "bias")]
    penalty: PenaltyArg,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 2_000_000)]
    max_iters: usize,
}

#[derive(Args, Debug)]
struct TheoremCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainArgs,
    /// Scalar-input CSV used instead of generated data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    eval_points: Option<usize>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    cost_tol: Option<f64>,
    #[arg(long)]
    sup_tol: Option<f64>,
    #[arg(long)]
    allow_narrow: bool,
}

#[derive(Args, Debug)]
struct MultitaskCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    rf_features: Option<usize>,
    #[arg(long)]
    rf_lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct AppendixBCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainArgs,
    /// Seeds `seed, seed + 1, ...`.
    #[arg(long)]
    num_seeds: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Neurons in each of the three stacks.
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args, Debug)]
struct WidthSweepCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    inner: Option<String>,
    #[arg(long)]
    plateau_tol: Option<f64>,
    #[arg(long)]
    monotone_slack: Option<f64>,
}

#[derive(Args, Debug)]
struct GenDataCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
}

/// Failure of a subcommand with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::UnsupportedDimension(_)
            | Error::Shape(_) => 2,
            Error::Numerical(_) | Error::AllRestartsDiverged(_) => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

type Outcome = Result<bool, Failure>;

/// Reads a `key = value` file into long-flag tokens. Blank lines and lines
/// starting with `#` are skipped; `true`/`false` values toggle switches.
fn config_tokens(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", i + 1));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: invalid key '{key}'", i + 1));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Splices config-file tokens in front of the subcommand's own arguments so
/// that explicit flags override them.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut i = 2;
    while i < args.len() {
        if args[i] == "--config" {
            path = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let tokens = config_tokens(&text).map_err(|e| format!("{path}: {e}"))?;
    let mut out = args[..2].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

fn report_written(dir: &Path, files: &[PathBuf]) {
    println!("wrote {} files to {}", files.len(), dir.display());
}

fn parse_inner(s: &str) -> Result<InnerActivation, Failure> {
    InnerActivation::parse(s).ok_or_else(|| Failure::usage(format!("unknown inner activation '{s}'")))
}

fn guard_width(width: usize, n: usize, allow: bool) -> Result<(), Failure> {
    if width <= n && !allow {
        return Err(Failure::usage(format!(
            "stack width {width} does not exceed the {n} training points; pass --allow-narrow to run anyway"
        )));
    }
    Ok(())
}

fn scatter_data(data: &Dataset, k: usize) -> Vec<(f64, f64)> {
    (0..data.len())
        .filter(|&i| data.mask[(i, k)] != 0.0)
        .map(|i| (data.x[(i, 0)], data.y[(i, k)]))
        .collect()
}

/// Prediction CSV and plot over `[min x - 1, max x + 1]` for scalar inputs.
fn write_curves(
    dir: &Path,
    stem: &str,
    data: &Dataset,
    predict: impl Fn(f64) -> DVector<f64>,
) -> repcost::Result<Vec<PathBuf>> {
    let (lo, hi) = data.x_range();
    let xs = linspace(lo - 1.0, hi + 1.0, 401);
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, prediction_csv(&xs, &predict)).map_err(|source| Error::Io { path: csv.clone(), source })?;
    let mut plot = Plot::new(stem, "x", "prediction");
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];
    for k in 0..data.d_out() {
        let color = colors[k % colors.len()];
        plot = plot
            .with(Series::line(
                data.names[k].clone(),
                color,
                xs.iter().map(|&x| (x, predict(x)[k])).collect(),
            ))
            .with(Series::scatter(format!("{} data", data.names[k]), "black", scatter_data(data, k)));
    }
    let svg = dir.join(format!("{stem}.svg"));
    emit_svg(&plot, &svg)?;
    Ok(vec![csv, svg])
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Failure::from(Error::Io { path: path.clone(), source }))?;
    Ok(path)
}

fn cmd_train(c: TrainCmd) -> Outcome {
    let seed = c.common.seed.unwrap_or(0);
    let data = c.data.load(seed)?;
    let stacks = c.widths.len();
    if stacks == 0 {
        return Err(Failure::usage("need at least one width"));
    }
    if c.bottlenecks.len() + 1 != stacks {
        return Err(Failure::usage(format!(
            "{stacks} stacks need {} bottleneck dimensions, got {}",
            stacks - 1,
            c.bottlenecks.len()
        )));
    }
    let skips = match c.skips.len() {
        1 => vec![c.skips[0].clone(); stacks],
        n if n == stacks => c.skips.clone(),
        n => return Err(Failure::usage(format!("{stacks} stacks need 1 or {stacks} skip kinds, got {n}"))),
    };
    let skips = skips
        .iter()
        .map(|s| SkipKind::parse(s).ok_or_else(|| Failure::usage(format!("unknown skip kind '{s}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut dims = vec![data.d_in()];
    dims.extend(&c.bottlenecks);
    dims.push(data.d_out());
    let arch = Architecture::new(dims, c.widths.clone(), parse_inner(&c.inner)?, skips)?;
    for &w in &arch.widths {
        guard_width(w, data.len(), c.allow_narrow)?;
    }

    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    c.train.apply(&mut cfg);
    let (net, report) = train(&arch, &data, &cfg)?;

    let dir = &c.common.out_dir;
    create_dir(dir)?;
    let mut files = vec![
        write_text(dir, "train_trace.csv", &report.trace_csv())?,
        write_text(dir, "train_summary.txt", &report.summary())?,
    ];
    let params = dir.join("net_params.txt");
    write_network(&params, &net, &arch)?;
    files.push(params);
    if data.d_in() == 1 {
        files.extend(write_curves(dir, "predictions", &data, |x| {
            net.forward(&arch, &DVector::from_element(1, x)).expect("trained network matches")
        })?);
    } else {
        let fitted = net.forward_batch(&arch, &data.inputs_by_column())?;
        let mut s = String::new();
        for i in 0..data.len() {
            let row: Vec<String> = fitted.column(i).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        files.push(write_text(dir, "fitted.csv", &s)?);
    }
    print!("{}", report.summary());
    report_written(dir, &files);
    Ok(true)
}

fn cmd_oracle(c: OracleCmd) -> Outcome {
    let seed = c.common.seed.unwrap_or(0);
    let data = c.data.load(seed)?;
    let kind = match c.penalty {
        PenaltyArg::Bias => PenaltyKind::BiasReg,
        PenaltyArg::NoBias => PenaltyKind::NoBiasReg,
    };
    let grid = build_grid(&data, c.resolution, c.margin, kind, 2.0)?;
    let cfg = SolverConfig {
        tol: c.tol,
        max_iters: c.max_iters,
        ..SolverConfig::default()
    };
    let sol = solve_group_lasso(&data, c.lambda, &grid, &cfg)?;

    let dir = &c.common.out_dir;
    create_dir(dir)?;
    let mut files = vec![
        write_text(dir, "oracle_atoms.csv", &sol.atoms_csv())?,
        write_text(dir, "oracle_summary.txt", &sol.summary())?,
    ];
    let (net, arch) = atoms_to_network(&sol);
    let params = dir.join("oracle_net_params.txt");
    write_network(&params, &net, &arch)?;
    files.push(params);
    files.extend(write_curves(dir, "oracle_predictions", &data, |x| sol.predict(x))?);
    print!("{}", sol.summary());
    if kind == PenaltyKind::BiasReg {
        println!("network_cost = {:?}", matching_network_cost(&net, &arch)?);
    }
    report_written(dir, &files);
    Ok(sol.converged)
}

fn cmd_theorem_check(c: TheoremCmd) -> Outcome {
    let mut cfg = TheoremCheckConfig::default();
    if let Some(v) = c.common.seed {
        cfg.seed = v;
    }
    c.train.apply(&mut cfg.train);
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = c.$f { cfg.$f = v; })* };
    }
    set!(width, d_out, resolution, margin, eval_points, gap_tol, cost_tol, sup_tol);
    if let Some(v) = c.n {
        cfg.n_data = v;
    }
    let report = match &c.data {
        Some(path) => {
            let data = load_csv(path)?;
            guard_width(cfg.width, data.len(), c.allow_narrow)?;
            theorem_check_on(data, &cfg)?
        }
        None => {
            guard_width(cfg.width, cfg.n_data, c.allow_narrow)?;
            theorem_check(&cfg)?
        }
    };
    let files = report.write_outputs(&c.common.out_dir)?;
    print!("{}", report.table());
    report_written(&c.common.out_dir, &files);
    Ok(report.passed())
}

fn cmd_multitask(c: MultitaskCmd) -> Outcome {
    let mut cfg = MultitaskConfig::default();
    if let Some(v) = c.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.train.lambda {
        cfg.lambda = v;
    }
    c.train.apply(&mut cfg.train);
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = c.$f { cfg.$f = v; })* };
    }
    set!(resolution, margin, width, rf_features, rf_lambda);
    let report = multitask_demo(&cfg)?;
    let files = report.write_outputs(&c.common.out_dir)?;
    print!("{}{}", report.table(), report.diagnostics());
    report_written(&c.common.out_dir, &files);
    Ok(report.passed())
}

fn cmd_appendix_b(c: AppendixBCmd) -> Outcome {
    let mut cfg = AppendixBConfig::default();
    let base = c.common.seed.unwrap_or(cfg.seeds[0]);
    let count = c.num_seeds.unwrap_or(cfg.seeds.len());
    cfg.seeds = (0..count as u64).map(|i| base + i).collect();
    c.train.apply(&mut cfg.train);
    if let Some(v) = c.n {
        cfg.n_train = v;
    }
    if let Some(v) = c.period {
        cfg.period = v;
    }
    if let Some(v) = c.noise_sd {
        cfg.noise_sd = v;
    }
    if let Some(v) = c.width {
        cfg.widths = [v; 3];
    }
    let report = appendix_b(&cfg)?;
    let files = report.write_outputs(&c.common.out_dir)?;
    print!("{}", report.table());
    println!(
        "mean held-out mse: joint {:.6} separate {:.6}",
        report.mean_joint(),
        report.mean_separate()
    );
    report_written(&c.common.out_dir, &files);
    Ok(report.passed())
}

fn cmd_width_sweep(c: WidthSweepCmd) -> Outcome {
    let mut cfg = WidthSweepConfig::default();
    if let Some(v) = c.common.seed {
        cfg.seed = v;
    }
    c.train.apply(&mut cfg.train);
    if let Some(v) = c.n {
        cfg.n_data = v;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = c.$f { cfg.$f = v; })* };
    }
    set!(d_in, d_out, width, plateau_tol, monotone_slack);
    if let Some(s) = &c.inner {
        cfg.inner_activation = parse_inner(s)?;
    }
    let report = width_sweep(&cfg)?;
    let files = report.write_outputs(&c.common.out_dir)?;
    print!("{}{}", report.table(), report.diagnostics());
    report_written(&c.common.out_dir, &files);
    Ok(report.passed())
}

fn cmd_gen_data(c: GenDataCmd) -> Outcome {
    let data = c.data.load(c.common.seed.unwrap_or(0))?;
    let dir = &c.common.out_dir;
    create_dir(dir)?;
    let path = dir.join("data.csv");
    save_csv(&data, &path)?;
    let mut files = vec![path];
    if data.d_in() == 1 {
        let mut plot = Plot::new("data", "x", "y");
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];
        for k in 0..data.d_out() {
            plot = plot.with(Series::scatter(
                data.names[k].clone(),
                colors[k % colors.len()],
                scatter_data(&data, k),
            ));
        }
        let svg = dir.join("data.svg");
        emit_svg(&plot, &svg)?;
        files.push(svg);
    }
    report_written(dir, &files);
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Oracle(c) => cmd_oracle(c),
        Command::TheoremCheck(c) => cmd_theorem_check(c),
        Command::MultitaskDemo(c) => cmd_multitask(c),
        Command::AppendixB(c) => cmd_appendix_b(c),
        Command::WidthSweep(c) => cmd_width_sweep(c),
        Command::GenData(c) => cmd_gen_data(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("threshold breach");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
