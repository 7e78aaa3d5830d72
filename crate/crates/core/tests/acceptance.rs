//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) before asserting.
//!
//! The MNIST criteria read IDX files from `$CURVD_MNIST_DIR`, falling back to
//! the bundled 10k-sample set in `data/mnist-10k`.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curvd::curvature::{curvature_single, CurvatureConfig, QuadraticLoss};
use curvd::datasets::BlobsConfig;
use curvd::experiments::{
    compare_scores, run_corruption_experiment, run_spiral_dynamics, run_training, write_run, CorruptionOutcome,
    DatasetSpec, ExperimentConfig, NetworkConfig, RunSummary,
};
use curvd::export::{export_topk_images, RankEnd};
use curvd::metrics::{auroc, cosine_similarity, topk_cosine, ScoreKind, ScoreReport};
use curvd::nn::{init_network, loss, Mode, Network, NetworkSpec, OptimizerConfig};

fn report(id: u32, pass: bool, detail: &str) {
    let line = format!("acceptance {id}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn symmetric(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let mut a = Array2::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let v: f64 = rng.gen_range(-1.0..1.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

#[test]
fn c1_quadratic_trace_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-3;
    let cfg = CurvatureConfig {
        probes: 10_000,
        step: h,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for m in 0..20 {
        let a = symmetric(&mut rng, 5);
        let frobenius: f64 = a.iter().map(|v| v * v).sum();
        let model = QuadraticLoss { matrix: a };
        let x = Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
        let mut probes = ChaCha8Rng::seed_from_u64(m);
        let est = curvature_single(&model, x.view(), 0, &cfg, &mut probes).unwrap() / (h * h);
        worst = worst.max((est - frobenius).abs() / frobenius);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 0.02 && elapsed < Duration::from_secs(10);
    report(1, pass, &format!("worst relative error {worst:.4} (<= 0.02), {elapsed:.2?} (< 10s)"));
    assert!(pass);
}

fn mean_loss(net: &Network<f64>, x: &Array2<f64>, y: &[usize]) -> f64 {
    let logits = net.forward_batch(x.view()).unwrap();
    logits
        .outer_iter()
        .zip(y)
        .map(|(row, &label)| loss(row, label).unwrap())
        .sum::<f64>()
        / y.len() as f64
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn c2_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let depth = rng.gen_range(1..=3);
        let d = rng.gen_range(2..=5);
        let classes = rng.gen_range(2..=4);
        let widths: Vec<usize> = std::iter::once(d).chain((0..depth).map(|_| rng.gen_range(3..=7))).collect();
        let bn = trial % 2 == 1;
        let spec = NetworkSpec::new(widths, classes).with_batchnorm(bn);
        let mut net = init_network::<f64>(&spec, trial).unwrap();
        for layer in net.hidden.iter_mut() {
            layer.dense.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            if let Some(b) = layer.bn.as_mut() {
                b.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
                b.beta.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                b.running_mean.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                b.running_var.mapv_inplace(|_| rng.gen_range(0.5..2.0));
            }
        }
        let batch = 4;
        let x = Array2::from_shape_fn((batch, d), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        // Alternate between training-mode (batch statistics) and evaluation-mode checks.
        net.set_mode(if trial % 4 == 3 { Mode::Eval } else { Mode::Train });

        let back = net.backward_batch(x.view(), &y).unwrap();
        let analytic: Vec<f64> = back.params.slices().concat();
        let mut numeric = Vec::with_capacity(analytic.len());
        let num_slices = net.param_slices_mut().len();
        for s in 0..num_slices {
            let len = net.param_slices_mut()[s].len();
            for k in 0..len {
                let orig = net.param_slices_mut()[s][k];
                net.param_slices_mut()[s][k] = orig + eps;
                let up = mean_loss(&net, &x, &y);
                net.param_slices_mut()[s][k] = orig - eps;
                let down = mean_loss(&net, &x, &y);
                net.param_slices_mut()[s][k] = orig;
                numeric.push((up - down) / (2.0 * eps));
            }
        }
        worst = worst.max(rel_err(&analytic, &numeric));

        // Input gradients of the summed loss.
        let total = |m: &Array2<f64>| mean_loss(&net, m, &y) * batch as f64;
        let mut numeric_x = Vec::with_capacity(batch * d);
        for i in 0..batch {
            for j in 0..d {
                let mut up = x.clone();
                up[[i, j]] += eps;
                let mut down = x.clone();
                down[[i, j]] -= eps;
                numeric_x.push((total(&up) - total(&down)) / (2.0 * eps));
            }
        }
        worst = worst.max(rel_err(back.inputs.as_slice().unwrap(), &numeric_x));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(30);
    report(2, pass, &format!("worst relative error {worst:.3e} (<= 1e-6) over 50 networks, {elapsed:.2?} (< 30s)"));
    assert!(pass);
}

#[test]
fn c3_auroc_matches_pair_counting() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        pos[0] = true;
        pos[1] = false;
        let (mut greater, mut equal, mut p, mut q) = (0u64, 0u64, 0u64, 0u64);
        for &is_pos in &pos {
            if is_pos {
                p += 1;
            } else {
                q += 1;
            }
        }
        for i in (0..n).filter(|&i| pos[i]) {
            for j in (0..n).filter(|&j| !pos[j]) {
                if scores[i] > scores[j] {
                    greater += 1;
                } else if scores[i] == scores[j] {
                    equal += 1;
                }
            }
        }
        with_ties += usize::from(equal > 0);
        let oracle = (2 * greater + equal) as f64 / (2 * p * q) as f64;
        if auroc(&scores, &pos).unwrap() != oracle {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && with_ties > 0 && elapsed < Duration::from_secs(5);
    report(
        3,
        pass,
        &format!("{mismatches} mismatches in 1000 fixtures ({with_ties} with ties), {elapsed:.2?} (< 5s)"),
    );
    assert!(pass);
}

#[test]
fn c4_spiral_rise_then_fall() {
    let start = Instant::now();
    let cfg = ExperimentConfig::spiral(0);
    let out = run_spiral_dynamics::<f64>(&cfg).unwrap();
    let elapsed = start.elapsed();
    let s = &out.summary;
    let (first, last) = (s.heldout_first.unwrap(), s.heldout_final.unwrap());
    let v = &s.verdict;
    let pass = out.training.history.rows.len() == 150
        && v.peak_epoch >= 3
        && v.peak_epoch <= 120
        && v.final_mean < v.peak_mean
        && last > first
        && elapsed < Duration::from_secs(120);
    report(
        4,
        pass,
        &format!(
            "peak epoch {} in [3, 120], final {:.3e} < peak {:.3e}, held-out {:.3e} -> {:.3e}, {elapsed:.1?} (< 120s)",
            v.peak_epoch, v.final_mean, v.peak_mean, first, last
        ),
    );
    assert!(pass);
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("CURVD_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-10k")))
}

/// Epochs of the 10k-subset corruption run.
const MNIST_EPOCHS: usize = 30;

fn mnist_config() -> ExperimentConfig {
    let spec = DatasetSpec::mnist_dir(&mnist_dir(), Some(10_000));
    ExperimentConfig::mnist_corruption(spec, 0.01, MNIST_EPOCHS, 1)
}

/// The corruption run shared by criteria 5 and 6, with its wall time.
fn mnist_run() -> &'static Result<(CorruptionOutcome<f64>, Duration), String> {
    static RUN: OnceLock<Result<(CorruptionOutcome<f64>, Duration), String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        run_corruption_experiment::<f64>(&mnist_config())
            .map(|out| (out, start.elapsed()))
            .map_err(|e| e.to_string())
    })
}

#[test]
fn c5_mnist_corruption_auroc() {
    let (out, elapsed) = match mnist_run() {
        Ok(r) => r,
        Err(e) => {
            report(5, false, &format!("run failed: {e}"));
            panic!("{e}");
        }
    };
    let s = &out.summary;
    let curv = s.curvature_auroc.unwrap_or(f64::NAN);
    let inconf = s.inconfidence_auroc.unwrap_or(f64::NAN);
    let checks = [
        ("train accuracy >= 0.995", s.train_accuracy >= 0.995),
        ("curvature AUROC >= 0.95", curv >= 0.95),
        ("curvature AUROC >= inconfidence AUROC", curv >= inconf),
        ("subset run < 30 min", *elapsed < Duration::from_secs(30 * 60)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty();
    report(
        5,
        pass,
        &format!(
            "N {} corrupted {} train acc {:.4}, curvature AUROC {curv:.4}, inconfidence AUROC {inconf:.4}, {:.1?}{}",
            s.num_samples,
            s.num_corrupted,
            s.train_accuracy,
            elapsed,
            if pass { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    );
    assert!(pass, "failed: {failed:?}");
}

#[test]
fn c6_corrupted_samples_rank_in_top_five_percent() {
    let (out, _) = match mnist_run() {
        Ok(r) => r,
        Err(e) => {
            report(6, false, &format!("run failed: {e}"));
            panic!("{e}");
        }
    };
    let m = out.summary.median_corrupted_rank_fraction;
    let pass = m <= 0.05;
    report(6, pass, &format!("median corrupted rank at top {:.2}% (<= 5%)", 100.0 * m));
    assert!(pass);
}

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn c7_artifacts_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spiral = ExperimentConfig::spiral(3);
    spiral.epochs = 5;
    let mut mnist = ExperimentConfig::mnist_corruption(DatasetSpec::mnist_dir(&mnist_dir(), Some(500)), 0.04, 3, 2);
    mnist.batch_size = Some(64);
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let out = run_spiral_dynamics::<f64>(&spiral).unwrap();
        let mut summary = RunSummary::from_training("spiral", &spiral, &out.training);
        summary.spiral = Some(out.summary);
        write_run(&root.join("spiral"), &spiral, &out.training, &summary).unwrap();

        let out = run_corruption_experiment::<f64>(&mnist).unwrap();
        let mut summary = RunSummary::from_training("corrupt", &mnist, &out.training);
        summary.corruption = Some(out.summary);
        write_run(&root.join("corrupt"), &mnist, &out.training, &summary).unwrap();
        export_topk_images(&out.training.train, &out.training.curvature, 5, RankEnd::High, &root.join("pgm")).unwrap();
        trees.push(tree(&root));
    }
    let files = trees[0].len();
    let pgm = trees[0].iter().filter(|(n, _)| n.ends_with(".pgm")).count();
    let pass = trees[0] == trees[1] && pgm == 5;
    report(7, pass, &format!("{files} files ({pgm} PGM) byte-identical across two executions"));
    assert!(pass);
}

#[test]
fn c8_ledger_is_the_epoch_mean() {
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Blobs(BlobsConfig {
            per_class: 15,
            num_classes: 3,
            dim: 6,
            ..Default::default()
        }),
        network: NetworkConfig {
            hidden: vec![16, 16],
            batchnorm: true,
        },
        optimizer: OptimizerConfig::new(0.05, 0.9, 1e-4),
        epochs: 12,
        batch_size: Some(8),
        curvature: CurvatureConfig::default(),
        stride: 1,
        corruption_fraction: None,
        normalize: false,
        heldout_curvature: false,
        keep_epoch_scores: true,
        seed: 8,
        out_dir: None,
    };
    let out = run_training::<f64>(&cfg).unwrap();
    let epochs = out.ledger.epoch_vectors().unwrap();
    let mut worst: f64 = 0.0;
    for (i, &cum) in out.curvature.scores.iter().enumerate() {
        let mean = epochs.iter().map(|v| v[i]).sum::<f64>() / epochs.len() as f64;
        worst = worst.max((cum - mean).abs() / mean.abs().max(f64::MIN_POSITIVE));
    }
    let history_match = out
        .ledger
        .history()
        .iter()
        .zip(epochs)
        .all(|(row, v)| (row.train_mean - v.iter().sum::<f64>() / v.len() as f64).abs() <= 1e-12 * row.train_mean);
    let pass = worst <= 1e-12 && epochs.len() == 12 && history_match;
    report(8, pass, &format!("worst relative deviation {worst:.2e} (<= 1e-12) over {} epochs", epochs.len()));
    assert!(pass);
}

#[test]
fn c9_score_comparison_mechanics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 400;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
    let other: Vec<f64> = scores.iter().map(|s| s + rng.gen_range(0.0..0.2)).collect();
    let a = ScoreReport::new(vec![0; n], scores, ScoreKind::Curvature).unwrap();
    let b = ScoreReport::new(vec![0; n], other, ScoreKind::External).unwrap();
    let ks = [1, 10, 40, 200, n];
    let own = compare_scores(&a, &a, &ks).unwrap();
    let self_ok = own.full_cosine == 1.0 && own.top_k.iter().all(|t| t.cosine == 1.0);
    let full = cosine_similarity(&a.scores, &b.scores).unwrap();
    let top_n = topk_cosine(&a, &b, n).unwrap();
    let pass = self_ok && top_n == full;
    report(
        9,
        pass,
        &format!("self CS 1.0 at k in {ks:?}: {self_ok}; top-N cosine {top_n} == full cosine {full}"),
    );
    assert!(pass);
}
