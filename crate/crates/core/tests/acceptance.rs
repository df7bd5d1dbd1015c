//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gradforge --test acceptance`. The process exits
//! nonzero when any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gradforge::activation::{self, ActivationKind};
use gradforge::backprop::{self, GradientBundle};
use gradforge::config::RunConfig;
use gradforge::conv::{self, Pad1d, Shape3};
use gradforge::data;
use gradforge::linalg::{Matrix, Vector};
use gradforge::loss::{self, Loss, LossKind, Target};
use gradforge::metrics::ConfusionMatrix;
use gradforge::network::{DenseLayer, Layer, NetworkSpec};
use gradforge::optimize::{self, Budget, LrSchedule, Scheme, TrainConfig};
use gradforge::rng;
use rand::Rng;

type Outcome = Result<String, String>;
type Snapshot = (Vec<String>, Vec<(String, String)>);
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn parameter_count() -> Outcome {
    let net = NetworkSpec::dense(&[2, 2, 3, 2], ActivationKind::Sigmoid).map_err(|e| e.to_string())?;
    let n = net.param_count();
    ensure(n == 23, format!("got {n} parameters"))?;
    Ok("2-2-3-2 sigmoid network has 23 parameters".into())
}

fn random_dense_case(r: &mut rng::Rng) -> (NetworkSpec, Loss) {
    let depth = r.random_range(2..=4);
    let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=6)).collect();
    let loss_kind = if r.random_bool(0.5) { LossKind::Quadratic } else { LossKind::SoftmaxLogLoss };
    let lambda = if r.random_bool(0.5) { 0.0 } else { 0.1 };
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let act = if l + 1 == depth && loss_kind == LossKind::SoftmaxLogLoss {
                ActivationKind::Identity
            } else {
                match r.random_range(0..3) {
                    0 => ActivationKind::Sigmoid,
                    1 => ActivationKind::Relu,
                    _ => ActivationKind::LeakyRelu(0.01),
                }
            };
            Layer::Dense(DenseLayer::zeros(w[0], w[1], act))
        })
        .collect();
    let net = NetworkSpec::new(Shape3::flat(widths[0]), layers)
        .expect("widths chain")
        .init_params(r.random());
    (net, Loss::new(loss_kind, lambda).expect("valid lambda"))
}

fn near_kink(net: &NetworkSpec, x: &Vector) -> bool {
    let trace = net.forward(x).expect("valid input");
    net.layers().iter().zip(&trace.weighted_inputs).any(|(layer, z)| {
        layer.activation().has_kink() && z.iter().any(|v| v.abs() < 1e-4)
    })
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng::from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (net, loss) = random_dense_case(&mut r);
        let x = loop {
            let x = Vector::new((0..net.input_dim()).map(|_| r.random_range(-2.0..2.0)).collect());
            if !near_kink(&net, &x) {
                break x;
            }
        };
        let k = net.output_dim();
        let values = Vector::new((0..k).map(|_| r.random_range(0.0..1.0)).collect());
        let label = r.random_range(0..k);
        let target = match loss.kind {
            LossKind::Quadratic if r.random_bool(0.5) => Target::Values(&values),
            _ => Target::Label(label),
        };
        let n = r.random_range(1..=20);
        let trace = net.forward(&x).map_err(|e| e.to_string())?;
        let analytic = backprop::backward(&net, &trace, target, &loss, n).map_err(|e| e.to_string())?;
        let numeric = backprop::fd_gradient(&net, &x, target, &loss, n, 1e-6).map_err(|e| e.to_string())?;
        let err = backprop::max_relative_error(&analytic, &numeric).map_err(|e| e.to_string())?;
        ensure(err < 1e-6, format!("case {case}: relative error {err:.3e}"))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("100 random networks, worst relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

fn toy_training() -> Outcome {
    let toy = data::toy_dataset();
    let base = NetworkSpec::dense(&[2, 2, 3, 2], ActivationKind::Sigmoid).map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    let mut initials = Vec::new();
    for seed in 1..=10u64 {
        let net = base.init_params(seed);
        let cfg = TrainConfig {
            scheme: Scheme::SingleWithReplacement,
            lr_schedule: LrSchedule::constant(0.05),
            budget: Budget::Steps(1_000_000),
            seed,
            cost_log_stride: 100_000,
            ..TrainConfig::default()
        };
        let report = optimize::train(&net, &toy, None, &Loss::quadratic(), &cfg).map_err(|e| e.to_string())?;
        initials.push(loss::sum_squared_residuals(&net, &toy).map_err(|e| e.to_string())?);
        finals.push(loss::sum_squared_residuals(&report.final_net, &toy).map_err(|e| e.to_string())?);
    }
    let below_1e2 = finals.iter().filter(|&&c| c < 1e-2).count();
    let below_5e3 = finals.iter().filter(|&&c| c < 5e-3).count();
    let listing: Vec<String> = finals.iter().map(|c| format!("{c:.2e}")).collect();
    ensure(
        below_1e2 >= 8 && below_5e3 >= 5,
        format!("final scaled costs [{}]", listing.join(", ")),
    )?;
    Ok(format!(
        "seed 1 scaled cost {:.2} -> {:.2e}; {below_1e2}/10 below 1e-2, {below_5e3}/10 below 5e-3",
        initials[0], finals[0]
    ))
}

fn toeplitz() -> Outcome {
    let diff = conv::conv1d_as_matrix(6, &Vector::new(vec![1.0, -1.0]), 1, Pad1d::default()).map_err(|e| e.to_string())?;
    let mut expected = Matrix::zeros(5, 6);
    for i in 0..5 {
        expected.set(i, i, 1.0);
        expected.set(i, i + 1, -1.0);
    }
    ensure(diff == expected, format!("difference matrix:\n{diff}"))?;

    let (a, b, c, d) = (2.0, 3.0, 5.0, 7.0);
    let strided = conv::conv1d_as_matrix(9, &Vector::new(vec![a, b, c, d]), 2, Pad1d::trailing(1)).map_err(|e| e.to_string())?;
    let mut expected = Matrix::zeros(4, 10);
    for i in 0..4 {
        for (j, w) in [a, b, c, d].into_iter().enumerate() {
            expected.set(i, 2 * i + j, w);
        }
    }
    ensure(strided == expected, format!("strided matrix:\n{strided}"))?;
    Ok("5x6 difference matrix and 4x10 stride-2 padded matrix match entrywise".into())
}

const BLOCK_NET: &str = "\
input: 32 32 3
layer: conv 5 5 3 {c1} 1 2 identity
layer: pool max 2 2 relu
layer: conv 5 5 {c1} {c1} 1 2 relu
layer: pool avg 2 2
layer: conv 5 5 {c1} {c2} 1 2 relu
layer: pool avg 2 2
layer: conv 4 4 {c2} {c2} 1 0 relu
layer: dense {c2} 10 identity
loss: softmax_log_loss
";

fn block_config(c1: usize, c2: usize, extra: &str) -> Result<RunConfig, String> {
    let text = BLOCK_NET.replace("{c1}", &c1.to_string()).replace("{c2}", &c2.to_string()) + extra;
    RunConfig::parse(&text, None).map_err(|e| e.to_string())
}

fn shape_pipeline() -> Outcome {
    let net = block_config(32, 64, "")?.network().map_err(|e| e.to_string())?;
    let after_blocks: Vec<String> = [0, 2, 4, 6, 7, 8].iter().map(|&i| net.shapes()[i].to_string()).collect();
    let expected = ["32x32x3", "16x16x32", "8x8x32", "4x4x64", "1x1x64", "1x1x10"];
    ensure(after_blocks == expected, format!("shapes {after_blocks:?}"))?;

    let cfg = block_config(8, 16, "data: images 500 32 10\nscheme: minibatch 50\nlr_schedule: 0.00001\nmomentum: 0.9\nepochs: 3\ncost_log_stride: 10\nseed: 1\n")?;
    let net = cfg.initial_network().map_err(|e| e.to_string())?;
    let (train, _) = cfg.datasets().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = optimize::train(&net, &train, None, &cfg.loss, &cfg.train).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let first = report.cost_history[0].train_cost;
    let last = report.final_cost();
    ensure(last <= 0.5 * first, format!("cost {first:.3e} -> {last:.3e}"))?;
    ensure(elapsed <= Duration::from_secs(600), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}; quarter-width net on 500 images: cost {first:.3e} -> {last:.3e} in {:.1}s",
        after_blocks.join(" -> "),
        elapsed.as_secs_f64()
    ))
}

fn sampling_invariants() -> Outcome {
    let toy = data::toy_dataset();
    let net = NetworkSpec::dense(&[2, 2, 3, 2], ActivationKind::Sigmoid).map_err(|e| e.to_string())?.init_params(5);
    let loss = Loss::quadratic();

    let five = toy.subset(&[0, 1, 2, 3, 4]);
    let cfg = TrainConfig {
        scheme: Scheme::EpochShuffle,
        budget: Budget::Epochs(3),
        record_samples: true,
        ..TrainConfig::default()
    };
    let report = optimize::train(&net, &five, None, &loss, &cfg).map_err(|e| e.to_string())?;
    ensure(report.sample_log.len() == 15, "sample log length")?;
    for epoch in report.sample_log.chunks(5) {
        let mut e = epoch.to_vec();
        e.sort_unstable();
        ensure(e == [0, 1, 2, 3, 4], format!("epoch {epoch:?} is not a permutation"))?;
    }

    // full gradient assembled independently, one sample at a time
    let mut full = GradientBundle::zeros_like(&net);
    for i in 0..toy.len() {
        let trace = net.forward(toy.input(i)).map_err(|e| e.to_string())?;
        let g = backprop::backward(&net, &trace, toy.target(i), &loss, toy.len()).map_err(|e| e.to_string())?;
        full.add_scaled(1.0 / toy.len() as f64, &g).map_err(|e| e.to_string())?;
    }
    let mut order: Vec<usize> = (0..toy.len()).rev().collect();
    order.swap(2, 7);
    let batch = optimize::batch_gradient(&net, &toy, &order, &loss, None).map_err(|e| e.to_string())?;
    let gap = full
        .flatten()
        .iter()
        .zip(batch.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(gap <= 1e-12, format!("m = N batch differs from full gradient by {gap:.3e}"))?;

    let mut with_momentum = net.clone();
    let mut plain = net.clone();
    let mut velocity = GradientBundle::zeros_like(&net);
    let mut r = rng::from_u64(8);
    for _ in 0..50 {
        let idx = [r.random_range(0..toy.len())];
        let g = optimize::batch_gradient(&with_momentum, &toy, &idx, &loss, None).map_err(|e| e.to_string())?;
        optimize::apply_update(&mut with_momentum, &g, 0.05, 0.0, &mut velocity);
        let g = optimize::batch_gradient(&plain, &toy, &idx, &loss, None).map_err(|e| e.to_string())?;
        for l in 0..plain.num_layers() {
            let (w, b) = plain.params_mut(l);
            for (p, d) in w.iter_mut().zip(g.weight_grads[l].as_slice()) {
                *p -= 0.05 * d;
            }
            for (p, d) in b.iter_mut().zip(g.bias_grads[l].as_slice()) {
                *p -= 0.05 * d;
            }
        }
    }
    ensure(with_momentum == plain, "momentum 0 update differs from plain SGD")?;
    Ok(format!("epoch permutations, m = N gap {gap:.1e}, momentum 0 bitwise equal"))
}

fn softmax_invariants() -> Outcome {
    let mut r = rng::from_u64(77);
    for _ in 0..1000 {
        let k = r.random_range(1..12);
        let v = Vector::new((0..k).map(|_| r.random_range(-50.0..50.0)).collect());
        let c = r.random_range(-100.0..100.0);
        let s = activation::softmax(&v);
        let shifted = activation::softmax(&v.map(|x| x + c));
        let sum = s.sum();
        ensure((sum - 1.0).abs() <= 1e-12, format!("components sum to {sum}"))?;
        for (a, b) in s.iter().zip(shifted.iter()) {
            ensure((a - b).abs() <= 1e-12, format!("shift by {c} moved {a} to {b}"))?;
        }
    }
    let l = loss::sample_cost(LossKind::SoftmaxLogLoss, &Vector::new(vec![0.0, 0.0]), Target::Label(0))
        .map_err(|e| e.to_string())?;
    ensure((l - std::f64::consts::LN_2).abs() <= 1e-12, format!("log loss of [0, 0] is {l}"))?;
    Ok("shift invariance, unit sum, log loss [0, 0] = ln 2".into())
}

fn dropout_statistics() -> Outcome {
    let mut rates = Vec::new();
    for (i, p) in [0.15, 0.35, 0.5].into_iter().enumerate() {
        let mut r = rng::indexed_stream(99, i as u64);
        let (_, mask) = optimize::apply_dropout(&Vector::ones(100_000), p, &mut r);
        let rate = 1.0 - mask.sum() / 100_000.0;
        ensure((rate - p).abs() <= 0.01, format!("p = {p}: empirical rate {rate}"))?;
        rates.push(format!("{p} -> {rate:.4}"));
    }
    Ok(rates.join(", "))
}

fn confusion_arithmetic() -> Outcome {
    let cm = ConfusionMatrix::from_counts(&[vec![814, 174], vec![186, 826]]).map_err(|e| e.to_string())?;
    ensure(cm.column_total(0) == 1000 && cm.row_total(0) == 988, "synthetic totals")?;
    let s = cm.summarize();
    let column = format!("{:.1}", 100.0 * s.recall[0].unwrap_or(f64::NAN));
    let row = format!("{:.1}", 100.0 * s.precision[0].unwrap_or(f64::NAN));
    ensure(column == "81.4" && row == "82.4", format!("column {column}%, row {row}%"))?;
    let text = cm.to_text(None);
    ensure(text.contains("81.4") && text.contains("82.4"), format!("rendered table:\n{text}"))?;
    Ok("column accuracy 81.4%, row precision 82.4%".into())
}

fn cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gradforge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn without_timing(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("wall_time:")).collect::<Vec<_>>().join("\n")
}

fn snapshot(dir: &Path) -> Result<Vec<(String, String)>, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| e.to_string())?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), without_timing(&text)))
        })
        .collect()
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let session = || -> Result<Snapshot, String> {
        let outputs = vec![
            without_timing(&cli(&["train", "--seed", "3", "--niter", "20000", "--out", "run"], d)?),
            cli(&["eval", "--model", "run/model.txt", "--data", "toy_extended", "--out", "run"], d)?,
            cli(&["predict", "--model", "run/model.txt", "--out", "run/predictions.csv"], d)?,
            cli(&["boundary", "--model", "run/model.txt", "--resolution", "21", "--out", "run/boundary.csv"], d)?,
            cli(&["gradcheck", "--seed", "3"], d)?,
        ];
        Ok((outputs, snapshot(&d.join("run"))?))
    };
    let first = session()?;
    let second = session()?;
    ensure(first.1.len() == 6, format!("artifacts {:?}", first.1.iter().map(|f| &f.0).collect::<Vec<_>>()))?;
    ensure(first.0 == second.0, "stdout differs between runs")?;
    for (a, b) in first.1.iter().zip(&second.1) {
        ensure(a == b, format!("{} differs between runs", a.0))?;
    }
    Ok("train/eval/predict/boundary/gradcheck repeat byte for byte".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("parameter count", parameter_count),
        ("gradient oracle suite", gradient_oracle),
        ("toy-problem training", toy_training),
        ("Toeplitz matrices", toeplitz),
        ("block shape pipeline and capacity", shape_pipeline),
        ("sampling-scheme invariants", sampling_invariants),
        ("softmax and loss invariants", softmax_invariants),
        ("dropout statistics", dropout_statistics),
        ("confusion summary arithmetic", confusion_arithmetic),
        ("CLI determinism", cli_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(reason) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
