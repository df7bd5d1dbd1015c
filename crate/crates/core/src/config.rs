//! Run configuration files.
//!
//! One `key: value` pair per line; `#` starts a comment line. `layer` may
//! repeat and lists the network from input to output.
//!
//! ```text
//! input: 1 1 2
//! layer: dense 2 2 sigmoid
//! layer: dense 2 3 sigmoid
//! layer: dense 3 2 sigmoid
//! loss: quadratic
//! lambda: 0
//! data: toy
//! scheme: single_with_replacement
//! lr_schedule: 0.05
//! niter: 1000000
//! seed: 1
//! ```

use std::path::{Path, PathBuf};

use crate::activation::ActivationKind;
use crate::conv::Shape3;
use crate::data::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::loss::{Loss, LossKind};
use crate::model_io::{layer_line, parse_layer_line, parse_shape};
use crate::network::{Layer, NetworkSpec};
use crate::optimize::{Budget, LrSchedule, Scheme, TrainConfig};

const DEFAULT_LOG_STRIDE: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Toy,
    ToyExtended,
    /// `images <count> <side> <classes>`: synthetic `side × side × 3` gratings.
    Images { count: usize, side: usize, classes: usize },
    Csv(PathBuf),
}

impl DataSource {
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        match words[..] {
            ["toy"] => Ok(DataSource::Toy),
            ["toy_extended"] => Ok(DataSource::ToyExtended),
            ["images", count, side, classes] => {
                let num = |w: &str| {
                    w.parse::<usize>()
                        .ok()
                        .filter(|&v| v > 0)
                        .ok_or_else(|| Error::config("data", format!("`{w}` is not a positive integer")))
                };
                Ok(DataSource::Images {
                    count: num(count)?,
                    side: num(side)?,
                    classes: num(classes)?,
                })
            }
            [path] => {
                let p = PathBuf::from(path);
                Ok(DataSource::Csv(match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                }))
            }
            _ => Err(Error::config("data", format!("expected `toy`, `toy_extended`, `images N SIDE K` or a path, got `{text}`"))),
        }
    }

    /// Loads the data for a network with the given input width and class count.
    pub fn load(&self, input_dim: usize, num_classes: usize, seed: u64) -> Result<LabeledDataset> {
        match self {
            DataSource::Toy => Ok(data::toy_dataset()),
            DataSource::ToyExtended => Ok(data::toy_dataset_extended()),
            &DataSource::Images { count, side, classes } => Ok(data::toy_images(count, side, classes, seed)),
            DataSource::Csv(p) => data::load_csv(p, input_dim, num_classes),
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Toy => f.write_str("toy"),
            DataSource::ToyExtended => f.write_str("toy_extended"),
            DataSource::Images { count, side, classes } => write!(f, "images {count} {side} {classes}"),
            DataSource::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub input: Shape3,
    pub layers: Vec<Layer>,
    pub loss: Loss,
    pub data: DataSource,
    pub val_data: Option<DataSource>,
    pub val_fraction: f64,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    /// The 2-2-3-2 sigmoid network on the ten toy points.
    fn default() -> Self {
        let net = NetworkSpec::dense(&[2, 2, 3, 2], ActivationKind::Sigmoid).expect("valid widths");
        RunConfig {
            input: net.input_shape(),
            layers: net.layers().to_vec(),
            loss: Loss::quadratic(),
            data: DataSource::Toy,
            val_data: None,
            val_fraction: 0.0,
            train: TrainConfig {
                scheme: Scheme::SingleWithReplacement,
                lr_schedule: LrSchedule::constant(0.05),
                budget: Budget::Steps(1_000_000),
                cost_log_stride: DEFAULT_LOG_STRIDE,
                ..TrainConfig::default()
            },
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub niter: Option<usize>,
    pub eta: Option<f64>,
    pub out: Option<PathBuf>,
    pub data: Option<String>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl RunConfig {
    /// Parses a configuration; relative data paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut layers = Vec::new();
        let mut budget_key: Option<&str> = None;
        let mut dropout_seen = false;
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(n, format!("expected `key: value`, got `{line}`")))?;
            let at_line = |e: Error| Error::parse(n, e.to_string());
            match key {
                "input" => cfg.input = parse_shape(value).map_err(at_line)?,
                "layer" => layers.push(parse_layer_line(value).map_err(at_line)?),
                "loss" => cfg.loss.kind = value.parse::<LossKind>().map_err(at_line)?,
                "lambda" => {
                    cfg.loss = Loss::new(cfg.loss.kind, parse_num(key, value).map_err(at_line)?).map_err(at_line)?;
                }
                "data" => cfg.data = DataSource::parse(value, base).map_err(at_line)?,
                "val_data" => cfg.val_data = Some(DataSource::parse(value, base).map_err(at_line)?),
                "val_fraction" => cfg.val_fraction = parse_num(key, value).map_err(at_line)?,
                "scheme" => {
                    let v = value.split_whitespace().collect::<Vec<_>>().join(":");
                    cfg.train.scheme = v.parse().map_err(at_line)?;
                }
                "lr_schedule" => cfg.train.lr_schedule = value.parse().map_err(at_line)?,
                "momentum" => cfg.train.momentum = parse_num(key, value).map_err(at_line)?,
                "dropout" => {
                    dropout_seen = true;
                    cfg.train.dropout = value
                        .split_whitespace()
                        .map(|v| parse_num(key, v))
                        .collect::<Result<_>>()
                        .map_err(at_line)?;
                }
                "niter" | "epochs" => {
                    if let Some(prev) = budget_key {
                        return Err(Error::parse(n, format!("`{key}` conflicts with earlier `{prev}`; give one budget")));
                    }
                    budget_key = Some(if key == "niter" { "niter" } else { "epochs" });
                    let count: usize = parse_num(key, value).map_err(at_line)?;
                    cfg.train.budget = if key == "niter" { Budget::Steps(count) } else { Budget::Epochs(count) };
                }
                "seed" => cfg.train.seed = parse_num(key, value).map_err(at_line)?,
                "cost_log_stride" => cfg.train.cost_log_stride = parse_num(key, value).map_err(at_line)?,
                "out" => cfg.out = base.map_or_else(|| PathBuf::from(value), |b| b.join(value)),
                _ => return Err(Error::parse(n, format!("unknown key `{key}`"))),
            }
        }
        if !layers.is_empty() {
            cfg.layers = layers;
        }
        if dropout_seen && cfg.train.dropout.iter().all(|&p| p == 0.0) {
            cfg.train.dropout.clear();
        }
        cfg.network()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text, path.parent()).map_err(|e| e.with_path(path))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(n) = o.niter {
            self.train.budget = Budget::Steps(n);
        }
        if let Some(eta) = o.eta {
            let constant = matches!(self.train.lr_schedule.segments[..], [(usize::MAX, _)]);
            if !constant {
                return Err(Error::config(
                    "lr_schedule",
                    "--eta only replaces a constant learning rate; edit the lr_schedule line instead",
                ));
            }
            let sched = LrSchedule::constant(eta);
            sched.validate()?;
            self.train.lr_schedule = sched;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(d) = &o.data {
            self.data = DataSource::parse(d, None)?;
        }
        Ok(())
    }

    /// The architecture with zero parameters.
    pub fn network(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.input, self.layers.clone())
    }

    /// The architecture with parameters drawn from the run seed.
    pub fn initial_network(&self) -> Result<NetworkSpec> {
        Ok(self.network()?.init_params(self.train.seed))
    }

    /// Training and optional validation data.
    pub fn datasets(&self) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
        let net = self.network()?;
        let (k, dim, seed) = (net.output_dim(), net.input_dim(), self.train.seed);
        let train = self.data.load(dim, k, seed)?;
        if let Some(v) = &self.val_data {
            return Ok((train, Some(v.load(dim, k, seed.wrapping_add(1))?)));
        }
        if self.val_fraction > 0.0 {
            let s = data::split(&train, self.val_fraction, seed)?;
            return Ok((s.train, Some(s.validation)));
        }
        Ok((train, None))
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let i = self.input;
        let mut out = format!("input: {} {} {}\n", i.height, i.width, i.channels);
        for l in &self.layers {
            out.push_str(&format!("layer: {}\n", layer_line(l)));
        }
        out.push_str(&format!("loss: {}\nlambda: {}\ndata: {}\n", self.loss.kind, self.loss.lambda, self.data));
        if let Some(v) = &self.val_data {
            out.push_str(&format!("val_data: {v}\n"));
        }
        out.push_str(&format!("val_fraction: {}\n", self.val_fraction));
        out.push_str(&format!("scheme: {}\n", self.train.scheme.to_string().replace(':', " ")));
        out.push_str(&format!("lr_schedule: {}\nmomentum: {}\n", self.train.lr_schedule, self.train.momentum));
        if !self.train.dropout.is_empty() {
            let d: Vec<String> = self.train.dropout.iter().map(f64::to_string).collect();
            out.push_str(&format!("dropout: {}\n", d.join(" ")));
        }
        match self.train.budget {
            Budget::Steps(s) => out.push_str(&format!("niter: {s}\n")),
            Budget::Epochs(e) => out.push_str(&format!("epochs: {e}\n")),
        }
        out.push_str(&format!(
            "seed: {}\ncost_log_stride: {}\nout: {}\n",
            self.train.seed,
            self.train.cost_log_stride,
            self.out.display()
        ));
        out
    }
}
