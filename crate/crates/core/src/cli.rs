//! The `gradforge` command-line tool.
//!
//! Exit codes: 0 success, 1 file-system error, 2 configuration, usage or
//! data error, 3 training diverged, 4 gradient check failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::backprop::{self, ParamKind, DEFAULT_FD_STEP};
use crate::config::{DataSource, Overrides, RunConfig};
use crate::data::{self, fmt17, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::loss::{self, LossKind, Target};
use crate::metrics;
use crate::model_io;
use crate::network::NetworkSpec;
use crate::optimize::{self, TrainReport};
use crate::rng::{self, Stream};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

/// Largest per-layer relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "gradforge", version, about = "Train and inspect small neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Run configuration file (defaults to the 2-2-3-2 toy network).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of update steps (replaces any epoch budget).
    #[arg(long)]
    niter: Option<usize>,
    /// Constant learning rate.
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    /// `toy`, `toy_extended`, `images N SIDE K` or a CSV path.
    #[arg(long)]
    data: Option<String>,
}

impl RunArgs {
    fn resolve(&self, out: Option<PathBuf>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            niter: self.niter,
            eta: self.eta,
            out,
            data: self.data.clone(),
        })?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network; writes model.txt, cost_history.csv and summary.txt.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare back-propagation with central finite differences.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Confusion matrix of a saved model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "toy")]
        data: String,
        /// Directory for confusion.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-sample class predictions of a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "toy")]
        data: String,
        /// Output CSV file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify a grid over the unit square with a 2-input model.
    Boundary {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Output CSV file.
        #[arg(long, default_value = "boundary.csv")]
        out: PathBuf,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_FAILURE,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are printed as `error:<code>: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error:{code}: {e}");
            code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("GRADFORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { run, out } => train(&run.resolve(out)?),
        Command::Gradcheck { run, corrupt_gradient } => gradcheck(&run.resolve(None)?, corrupt_gradient),
        Command::Eval { model, data, out } => eval(&model, &data, &out),
        Command::Predict { model, data, out } => predict(&model, &data, out.as_deref()),
        Command::Boundary { model, resolution, out } => boundary(&model, resolution, &out),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn train(cfg: &RunConfig) -> Result<i32> {
    let net = cfg.initial_network()?;
    let (train_data, val_data) = cfg.datasets()?;
    let start = Instant::now();
    let report = optimize::train(&net, &train_data, val_data.as_ref(), &cfg.loss, &cfg.train)?;
    let elapsed = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.clone(),
        source,
    })?;
    model_io::save(&report.final_net, cfg.out.join("model.txt"))?;
    write_file(&cfg.out.join("cost_history.csv"), &cost_history_csv(&report, val_data.is_some()))?;
    let summary = summary_text(cfg, &report, &train_data, val_data.as_ref(), elapsed)?;
    write_file(&cfg.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(0)
}

fn cost_history_csv(report: &TrainReport, with_val: bool) -> String {
    let mut s = String::from(if with_val { "step,train_cost,val_cost\n" } else { "step,train_cost\n" });
    for r in &report.cost_history {
        let _ = write!(s, "{},{}", r.step, fmt17(r.train_cost));
        if with_val {
            s.push(',');
            if let Some(v) = r.val_cost {
                s.push_str(&fmt17(v));
            }
        }
        s.push('\n');
    }
    s
}

fn summary_text(
    cfg: &RunConfig,
    report: &TrainReport,
    train_data: &LabeledDataset,
    val_data: Option<&LabeledDataset>,
    elapsed: f64,
) -> Result<String> {
    let net = &report.final_net;
    let mut s = String::new();
    let _ = writeln!(s, "parameters: {}", net.param_count());
    let _ = writeln!(s, "steps: {}", report.steps_taken);
    let _ = writeln!(s, "final_train_cost: {}", fmt17(report.final_cost()));
    if cfg.loss.kind == LossKind::Quadratic {
        let _ = writeln!(s, "final_sum_squared_residuals: {}", fmt17(loss::sum_squared_residuals(net, train_data)?));
    }
    let _ = writeln!(s, "train_accuracy: {}", fmt17(metrics::evaluate(net, train_data)?.summarize().accuracy));
    if let Some(v) = val_data {
        let _ = writeln!(s, "val_accuracy: {}", fmt17(metrics::evaluate(net, v)?.summarize().accuracy));
    }
    let _ = writeln!(s, "wall_time: {elapsed:.3}s");
    s.push_str("--- config\n");
    s.push_str(&cfg.to_text());
    Ok(s)
}

fn gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<i32> {
    let net = cfg.initial_network()?;
    cfg.loss.check_network(&net)?;
    let dataset_len = cfg.datasets()?.0.len();
    let mut r = rng::stream(cfg.train.seed, Stream::Gradcheck);
    let x = Vector::new((0..net.input_dim()).map(|_| StandardNormal.sample(&mut r)).collect());
    let label = r.random_range(0..net.output_dim());
    let target = Target::Label(label);

    let trace = net.forward(&x)?;
    let mut analytic = backprop::backward(&net, &trace, target, &cfg.loss, dataset_len)?;
    if corrupt {
        for g in &mut analytic.weight_grads {
            if let Some(v) = g.as_mut_slice().first_mut() {
                *v += 1.0;
            }
        }
    }
    let numeric = backprop::fd_gradient(&net, &x, target, &cfg.loss, dataset_len, DEFAULT_FD_STEP)?;
    let report = backprop::compare(&analytic, &numeric)?;

    let mut ok = true;
    let mut out = std::io::stdout().lock();
    for d in &report {
        match d.worst {
            None => {
                let _ = writeln!(out, "layer {}: no parameters", d.layer);
            }
            Some((kind, idx)) => {
                let pass = d.max_rel_error < GRADCHECK_TOLERANCE;
                ok &= pass;
                let _ = writeln!(
                    out,
                    "layer {}: max_rel_error {:.3e} {}",
                    d.layer,
                    d.max_rel_error,
                    if pass { "ok" } else { "FAIL" }
                );
                if !pass {
                    let what = match kind {
                        ParamKind::Weight => "weight",
                        ParamKind::Bias => "bias",
                    };
                    let _ = writeln!(
                        out,
                        "  worst: {what}[{idx}] backprop {} finite-difference {}",
                        fmt17(d.analytic),
                        fmt17(d.numeric)
                    );
                }
            }
        }
    }
    Ok(if ok { 0 } else { EXIT_GRADCHECK })
}

fn load_for_model(net: &NetworkSpec, source: &str) -> Result<LabeledDataset> {
    let src = DataSource::parse(source, None)?;
    let d = src.load(net.input_dim(), net.output_dim(), 0)?;
    d.check_network(net)?;
    Ok(d)
}

fn eval(model: &Path, data: &str, out: &Path) -> Result<i32> {
    let net = model_io::load(model)?;
    let d = load_for_model(&net, data)?;
    let cm = metrics::evaluate(&net, &d)?;
    print!("{}", cm.to_text(None));
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    write_file(&out.join("confusion.csv"), &cm.to_csv())?;
    Ok(0)
}

fn predict(model: &Path, data: &str, out: Option<&Path>) -> Result<i32> {
    let net = model_io::load(model)?;
    let d = load_for_model(&net, data)?;
    let mut s = String::from("index,class");
    for j in 0..net.output_dim() {
        let _ = write!(s, ",out_{j}");
    }
    s.push('\n');
    for i in 0..d.len() {
        let y = net.output(d.input(i))?;
        let _ = write!(s, "{i},{}", y.argmax().expect("nonempty output"));
        for v in y.iter() {
            let _ = write!(s, ",{}", fmt17(*v));
        }
        s.push('\n');
    }
    match out {
        Some(p) => write_file(p, &s)?,
        None => print!("{s}"),
    }
    Ok(0)
}

fn boundary(model: &Path, resolution: usize, out: &Path) -> Result<i32> {
    let net = model_io::load(model)?;
    let nodes = data::boundary_grid(&net, resolution)?;
    write_file(out, &data::boundary_csv(&nodes))?;
    Ok(0)
}
