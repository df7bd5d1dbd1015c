//! Labeled datasets: the toy two-class problem, CSV ingestion, splitting,
//! decision-boundary grids and synthetic generators.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::Shape3;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::loss::Target;
use crate::network::NetworkSpec;
use crate::rng::{self, Stream};

/// Inputs with integer class labels in `0..num_classes`. Targets are the
/// one-hot encodings of the labels unless explicit target vectors were given.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vector>,
    labels: Vec<usize>,
    num_classes: usize,
    targets: Option<Vec<Vector>>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vector>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} inputs", inputs.len()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
                return Err(Error::shape(
                    "dataset inputs",
                    format!("input of length {}", first.len()),
                    format!("input of length {}", bad.len()),
                ));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index {
                what: "class label",
                index: l,
                len: num_classes,
            });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
            targets: None,
        })
    }

    /// Dataset with arbitrary target vectors; labels are their argmaxes.
    pub fn from_targets(inputs: Vec<Vector>, targets: Vec<Vector>) -> Result<Self> {
        let k = targets.first().map_or(0, Vector::len);
        if let Some(bad) = targets.iter().find(|t| t.len() != k) {
            return Err(Error::shape("dataset targets", format!("length {k}"), format!("length {}", bad.len())));
        }
        let labels = targets.iter().map(|t| t.argmax().unwrap_or(0)).collect();
        let mut d = Self::new(inputs, labels, k.max(1))?;
        d.targets = Some(targets);
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vector::len)
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &Vector {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.targets {
            Some(t) => Target::Values(&t[i]),
            None => Target::Label(self.labels[i]),
        }
    }

    /// Target vector of sample `i` (one-hot unless explicit targets were given).
    pub fn target_vector(&self, i: usize) -> Vector {
        match &self.targets {
            Some(t) => t[i].clone(),
            None => Vector::basis(self.num_classes, self.labels[i]).expect("labels validated"),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            targets: self.targets.as_ref().map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
        }
    }

    /// Checks that every input fits `net` and that the output width can hold the targets.
    pub fn check_network(&self, net: &NetworkSpec) -> Result<()> {
        if let Some(d) = self.input_dim() {
            if d != net.input_dim() {
                return Err(Error::shape(
                    "dataset vs network",
                    format!("network with {} inputs", net.input_dim()),
                    format!("samples with {d} features"),
                ));
            }
        }
        let k = self.targets.as_ref().and_then(|t| t.first().map(Vector::len)).unwrap_or(self.num_classes);
        if k != net.output_dim() {
            return Err(Error::shape(
                "dataset vs network",
                format!("network with {} outputs", net.output_dim()),
                format!("{k} classes"),
            ));
        }
        Ok(())
    }

    /// CSV rows `f_1,…,f_n,label` with shortest round-trip reals.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (x, l) in self.inputs.iter().zip(&self.labels) {
            for v in x.iter() {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{l}");
        }
        s
    }
}

/// Category A (label 0) then category B (label 1).
const TOY_POINTS: [([f64; 2], usize); 10] = [
    ([0.1, 0.1], 0),
    ([0.3, 0.4], 0),
    ([0.1, 0.5], 0),
    ([0.6, 0.9], 0),
    ([0.4, 0.2], 0),
    ([0.6, 0.3], 1),
    ([0.5, 0.6], 1),
    ([0.9, 0.2], 1),
    ([0.4, 0.4], 1),
    ([0.7, 0.6], 1),
];

/// The ten-point, two-class problem in the unit square.
pub fn toy_dataset() -> LabeledDataset {
    let inputs = TOY_POINTS.iter().map(|(x, _)| Vector::from(&x[..])).collect();
    let labels = TOY_POINTS.iter().map(|&(_, l)| l).collect();
    LabeledDataset::new(inputs, labels, 2).expect("static data is valid")
}

/// [`toy_dataset`] plus an extra category-B point at (0.3, 0.7).
pub fn toy_dataset_extended() -> LabeledDataset {
    let mut d = toy_dataset();
    d.inputs.push(Vector::from(&[0.3, 0.7][..]));
    d.labels.push(1);
    d
}

/// Parses `f_1,…,f_n,label` rows. Blank lines and lines starting with `#` are skipped.
pub fn parse_csv(text: &str, n_features: usize, num_classes: usize) -> Result<LabeledDataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_features + 1 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields ({n_features} features + label), found {}", n_features + 1, fields.len()),
            ));
        }
        let x = fields[..n_features]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = fields[n_features];
        let label: usize = raw
            .parse()
            .map_err(|_| Error::parse(lineno, format!("label `{raw}` is not a nonnegative integer")))?;
        if label >= num_classes {
            return Err(Error::Index {
                what: "class label",
                index: label,
                len: num_classes,
            });
        }
        inputs.push(Vector::new(x));
        labels.push(label);
    }
    if inputs.is_empty() {
        return Err(Error::Domain("dataset is empty".into()));
    }
    LabeledDataset::new(inputs, labels, num_classes)
}

pub fn load_csv(path: impl AsRef<Path>, n_features: usize, num_classes: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_csv(&text, n_features, num_classes).map_err(|e| e.with_path(path))
}

/// Disjoint training/validation partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Seeded shuffle, then the first `round(val_fraction · N)` indices go to validation.
pub fn split(data: &LabeledDataset, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config("val_fraction", format!("must lie in [0, 1), got {val_fraction}")));
    }
    let n = data.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split));
    let validation_indices = order[..n_val].to_vec();
    let train_indices = order[n_val..].to_vec();
    Ok(Split {
        train: data.subset(&train_indices),
        validation: data.subset(&validation_indices),
        train_indices,
        validation_indices,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridNode {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub outputs: Vector,
}

/// Network classes on a `resolution × resolution` lattice over `[0,1]²`,
/// `y` in the outer loop.
pub fn boundary_grid(net: &NetworkSpec, resolution: usize) -> Result<Vec<GridNode>> {
    if net.input_dim() != 2 {
        return Err(Error::Domain(format!(
            "boundary grids need a 2-input network, this one has {} inputs",
            net.input_dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("resolution must be at least 2, got {resolution}")));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let mut nodes = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (x, y) = (ix as f64 * step, iy as f64 * step);
            let outputs = net.output(&Vector::new(vec![x, y]))?;
            let class = outputs.argmax().expect("nonempty output");
            nodes.push(GridNode { x, y, class, outputs });
        }
    }
    Ok(nodes)
}

/// `x,y,class,out_0,…` with 17 significant digits.
pub fn boundary_csv(nodes: &[GridNode]) -> String {
    let k = nodes.first().map_or(0, |n| n.outputs.len());
    let mut s = String::from("x,y,class");
    for j in 0..k {
        let _ = write!(s, ",out_{j}");
    }
    s.push('\n');
    for n in nodes {
        let _ = write!(s, "{},{},{}", fmt17(n.x), fmt17(n.y), n.class);
        for o in n.outputs.iter() {
            let _ = write!(s, ",{}", fmt17(*o));
        }
        s.push('\n');
    }
    s
}

/// Scientific notation with 17 significant digits; parses back bit-exactly.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Two Gaussian clusters per class around class-specific centers; handy for tests.
pub fn gaussian_blobs(n_per_class: usize, centers: &[Vec<f64>], spread: f64, seed: u64) -> LabeledDataset {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            let x = center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    m + spread * z
                })
                .collect();
            inputs.push(Vector::new(x));
            labels.push(c);
        }
    }
    LabeledDataset::new(inputs, labels, centers.len()).expect("generated data is consistent")
}

/// Synthetic `side × side × 3` images in `num_classes` classes. Each class is a
/// sinusoidal grating with its own orientation, frequency and color balance,
/// with random phase and additive noise, values roughly in `[0, 1]`.
pub fn toy_images(n: usize, side: usize, num_classes: usize, seed: u64) -> LabeledDataset {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let shape = Shape3::new(side, side, 3);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let frac = class as f64 / num_classes as f64;
        let angle = std::f64::consts::PI * frac;
        let freq = 2.0 + (class % 3) as f64;
        let color = [
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * frac).cos(),
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * frac).sin(),
            1.0 - frac,
        ];
        let phase: f64 = r.random_range(0.0..2.0 * std::f64::consts::PI);
        let mut data = vec![0.0; shape.len()];
        for row in 0..side {
            for col in 0..side {
                let t = (row as f64 * angle.cos() + col as f64 * angle.sin()) / side as f64;
                let wave = (2.0 * std::f64::consts::PI * freq * t + phase).sin();
                for (ch, &c) in color.iter().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut r);
                    data[shape.index(row, col, ch)] = 0.5 + 0.4 * c * wave + 0.05 * noise;
                }
            }
        }
        inputs.push(Vector::new(data));
        labels.push(class);
    }
    LabeledDataset::new(inputs, labels, num_classes).expect("generated data is consistent")
}
