//! Acceptance runner: one pass/fail line per criterion.
//!
//! The end-to-end criteria train and prune LeNet-5 on MNIST with the desk
//! preset. Set `HREL_MNIST_DIR` to the directory holding the four IDX files;
//! it defaults to `data/mnist` at the workspace root. Artifacts land in the
//! cargo target tmp dir under `acceptance/`.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use hrel::config::RunConfig;
use hrel::infotheory::{
    matrix_entropy, mutual_information, mutual_information_normalized, LabelKernel,
};
use hrel::iplane::spearman;
use hrel::linalg::{sym_eigenvalues, EigenSolver};
use hrel::nnet::{build_lenet5_with, Conv2d, Layer, Linear, NetworkDef, Shape};
use hrel::par::Execution;
use hrel::pipeline::{cmd_prune, cmd_report, cmd_train, PruneProgress, TrainMetrics};
use hrel::pruner::{count_flops_params, pruned_pct, SelectionMode};
use hrel::relevance::score_channels;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn estimator_properties() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 1000;
    let (mut worst_sym, mut worst_const, mut worst_trace, mut worst_bound) =
        (0.0f64, 0.0f64, 0.0f64, f64::MIN);
    let mut negatives = 0;
    for _ in 0..cases {
        let s = rng.random_range(2..=64);
        let (du, dv) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let u = samples(&mut rng, s, du);
        let v = samples(&mut rng, s, dv);
        let (su, sv) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let (nu, nv) = (normalized(&u, su), normalized(&v, sv));
        let sum: f64 = sym_eigenvalues(&nu).unwrap().iter().sum();
        worst_trace = worst_trace.max((sum - 1.0).abs());
        let h = matrix_entropy(&nu).unwrap();
        worst_bound = worst_bound.max((-h).max(h - (s as f64).log2()));
        let uv = mutual_information_normalized(&nu, &nv).unwrap().mi;
        let vu = mutual_information_normalized(&nv, &nu).unwrap().mi;
        worst_sym = worst_sym.max((uv - vu).abs());
        if uv < -1e-6 {
            negatives += 1;
        }
        let constant = vec![vec![rng.random_range(-1.0..1.0)]; s];
        worst_const = worst_const.max(mutual_information(&u, &constant, su, 1.0).unwrap().mi.abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_bound <= 1e-9
        && worst_sym < 1e-10
        && worst_const < 1e-9
        && worst_trace < 1e-9
        && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "{cases} cases: bound overshoot {worst_bound:.1e}, MI asymmetry {worst_sym:.1e}, \
             MI vs constant {worst_const:.1e}, eigen-sum error {worst_trace:.1e}, \
             {negatives} with MI < -1e-6, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn characteristic_polynomial_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cases = 600;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let s = 2 + case % 2;
        let dim = rng.random_range(1..=4);
        let n = normalized(&samples(&mut rng, s, dim), rng.random_range(0.1..10.0));
        let oracle = if s == 2 { eig2(&n) } else { eig3(&n) };
        worst = worst.max((matrix_entropy(&n).unwrap() - entropy_of(&oracle)).abs());
    }
    verdict(
        worst < 1e-9,
        format!("{cases} 2x2/3x3 cases, max |H - oracle| = {worst:.1e}"),
    )
}

fn block_structure() -> Verdict {
    let u = vec![
        vec![0.0, 0.0],
        vec![0.0, 0.0],
        vec![10.0, 10.0],
        vec![10.0, 10.0],
    ];
    let v = vec![
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 1.0],
    ];
    let r = mutual_information(&u, &v, 1.0, 0.1).unwrap();
    verdict((r.mi - 1.0).abs() < 1e-3, format!("MI = {:.6} bits", r.mi))
}

fn gradient_suite() -> Verdict {
    let cases = 25;
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in LAYER_KINDS {
        let worst = (0..cases)
            .map(|seed| gradient_case(kind, 1000 + seed))
            .fold(0.0f64, f64::max);
        pass &= worst < GRAD_TOL;
        parts.push(format!("{kind:?} {worst:.1e}"));
    }
    verdict(
        pass,
        format!(
            "{cases} cases per kind, worst relative error: {}",
            parts.join(", ")
        ),
    )
}

fn separability() -> Verdict {
    let start = Instant::now();
    let mut wins = 0;
    for seed in 0..100 {
        let (acts, labels) = informative_and_noise(500 + seed);
        let kernel = LabelKernel::new(&labels, SEP_CLASSES, 0.1).unwrap();
        let scores = score_channels(
            &acts,
            &kernel,
            separability_sigma(),
            EigenSolver::default(),
            Execution::default(),
        )
        .unwrap();
        if scores[1..].iter().all(|&s| scores[0] > s) {
            wins += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        wins >= 99 && elapsed < Duration::from_secs(120),
        format!(
            "informative filter first in {wins}/100 trials, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// conv(1->2, 3x3) on 5x5, ReLU, flatten, fc(18->3).
fn unit_network() -> NetworkDef {
    NetworkDef::new(
        Shape {
            channels: 1,
            height: 5,
            width: 5,
        },
        vec![
            Layer::Conv(Conv2d::zeros(1, 2, 3)),
            Layer::Relu,
            Layer::Flatten,
            Layer::Linear(Linear::zeros(18, 3)),
        ],
    )
    .unwrap()
}

fn flop_accounting() -> Verdict {
    let unit = count_flops_params(&unit_network()).unwrap();
    // conv: 2 filters * 9 weights * 9 positions = 162; fc: 18 * 3 = 54.
    let unit_ok = (unit.flops, unit.params, unit.params_with_bias) == (216, 72, 77);
    let lenet = |a, b| count_flops_params(&build_lenet5_with(a, b)).unwrap();
    let base = lenet(20, 50);
    // conv1 500*576 + conv2 25000*64 + fc 800*500 + 500*10
    let base_ok = base.flops == 2_293_000 && base.params == 430_500;
    let p45 = pruned_pct(lenet(4, 5).flops, base.flops);
    let p23 = pruned_pct(lenet(2, 3).flops, base.flops);
    let pass = unit_ok && base_ok && (p45 - 95.56).abs() <= 2.0 && (p23 - 97.98).abs() <= 2.0;
    verdict(
        pass,
        format!(
            "unit net {} MACs/{} params, LeNet-5 {} MACs; pruned FLOPs {{4,5}} {p45:.2}% (ref 95.56), \
             {{2,3}} {p23:.2}% (ref 97.98)",
            unit.flops, unit.params, base.flops
        ),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("HREL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Copies the training artifacts of `from` under a new run id so a variant
/// run shares the baseline.
fn fork_run(dir: &Path, from: &str, to: &str) -> std::io::Result<()> {
    for (stem, ext) in [("baseline", "hrck"), ("sigma", "json"), ("metrics", "json")] {
        std::fs::copy(
            dir.join(format!("{stem}_{from}.{ext}")),
            dir.join(format!("{stem}_{to}.{ext}")),
        )?;
    }
    Ok(())
}

struct Variant {
    label: String,
    progress: PruneProgress,
    elapsed: Duration,
}

impl Variant {
    fn final_accuracy(&self) -> f64 {
        self.progress
            .records
            .last()
            .map_or(self.progress.baseline_accuracy, |r| r.accuracy)
    }

    fn final_filters(&self) -> Vec<usize> {
        self.progress.state.remaining_counts()
    }
}

struct DeskRuns {
    metrics: TrainMetrics,
    train_time: Duration,
    main: Variant,
    batch_sizes: Vec<(usize, Variant)>,
    global: Vec<(f64, Result<Variant, String>)>,
    comparison: PathBuf,
}

fn desk_runs(dir: &Path) -> Result<DeskRuns, String> {
    let err = |e: hrel::Error| e.to_string();
    let mut cfg = RunConfig::preset("lenet5_desk").map_err(err)?;
    cfg.data.dir = mnist_dir();
    cfg.out_dir = dir.to_path_buf();
    let base_id = cfg.run_id.clone();

    eprintln!("desk run: initial training");
    let t0 = Instant::now();
    let metrics =
        cmd_train(&cfg).map_err(|e| format!("{e} (MNIST dir {})", cfg.data.dir.display()))?;
    let train_time = t0.elapsed();

    let run = |label: String, cfg: &RunConfig| -> Result<Variant, String> {
        eprintln!("desk run: pruning {label}");
        if cfg.run_id != base_id {
            fork_run(dir, &base_id, &cfg.run_id).map_err(|e| e.to_string())?;
        }
        let t = Instant::now();
        let progress = cmd_prune(cfg, None).map_err(err)?;
        cmd_report(dir, &cfg.run_id).map_err(err)?;
        Ok(Variant {
            label,
            progress,
            elapsed: t.elapsed(),
        })
    };

    let main = run("layerwise, relevance batch 100".into(), &cfg)?;
    let mut batch_sizes = Vec::new();
    for bs in [64, 128] {
        let mut c = cfg.clone();
        c.run_id = format!("{base_id}_rb{bs}");
        c.relevance.batch_size = bs;
        batch_sizes.push((bs, run(format!("layerwise, relevance batch {bs}"), &c)?));
    }
    let mut global = Vec::new();
    for t in [5.0, 25.0, 45.0] {
        let mut c = cfg.clone();
        c.run_id = format!("{base_id}_global{t}");
        c.mode = SelectionMode::Global { t };
        global.push((t, run(format!("global T={t}"), &c)));
    }

    let mut rows = vec![comparison_row(&main, metrics.baseline_accuracy)];
    rows.extend(
        batch_sizes
            .iter()
            .map(|(_, v)| comparison_row(v, metrics.baseline_accuracy)),
    );
    rows.extend(
        global
            .iter()
            .filter_map(|(_, v)| v.as_ref().ok())
            .map(|v| comparison_row(v, metrics.baseline_accuracy)),
    );
    let comparison = dir.join(format!("ablation_{base_id}.json"));
    std::fs::write(&comparison, serde_json::to_string_pretty(&rows).unwrap())
        .map_err(|e| e.to_string())?;

    Ok(DeskRuns {
        metrics,
        train_time,
        main,
        batch_sizes,
        global,
        comparison,
    })
}

fn comparison_row(v: &Variant, baseline: f64) -> serde_json::Value {
    let cost = v.progress.records.last().map(|r| r.cost.clone());
    serde_json::json!({
        "variant": v.label,
        "iterations": v.progress.records.len(),
        "filters": v.final_filters(),
        "acc_baseline": 100.0 * baseline,
        "acc_pruned": 100.0 * v.final_accuracy(),
        "acc_drop": 100.0 * (baseline - v.final_accuracy()),
        "flops": cost.as_ref().map(|c| c.flops),
        "params": cost.as_ref().map(|c| c.params),
        "stop_reason": v.progress.stop_reason,
        "seconds": v.elapsed.as_secs(),
    })
}

fn surgery(runs: &DeskRuns) -> Verdict {
    let variants = std::iter::once(&runs.main)
        .chain(runs.batch_sizes.iter().map(|(_, v)| v))
        .chain(runs.global.iter().filter_map(|(_, v)| v.as_ref().ok()));
    let (mut iterations, mut missing, mut worst) = (0, 0, 0.0f64);
    for v in variants {
        for r in &v.progress.records {
            iterations += 1;
            match r.surgery_max_abs_diff {
                Some(d) => worst = worst.max(d),
                None => missing += 1,
            }
        }
    }
    verdict(
        iterations > 0 && missing == 0 && worst < 1e-5,
        format!(
            "{iterations} pruning iterations, max logit gap {worst:.1e} on 100 random inputs each"
        ),
    )
}

fn end_to_end(runs: &DeskRuns) -> Verdict {
    let base = 100.0 * runs.metrics.baseline_accuracy;
    let acc = 100.0 * runs.main.final_accuracy();
    let filters = runs.main.final_filters();
    let total = runs.train_time + runs.main.elapsed;
    let pass = base >= 98.0
        && filters == [4, 5]
        && base - acc <= 1.0
        && total < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "baseline {base:.2}%, pruned {filters:?} in {} iterations to {acc:.2}% (drop {:.2}), {:.1} min",
            runs.main.progress.records.len(),
            base - acc,
            total.as_secs_f64() / 60.0
        ),
    )
}

fn ip_trend(runs: &DeskRuns) -> Verdict {
    let m = &runs.metrics;
    let last = m.filters.len() - 1;
    let (epochs, ily): (Vec<f64>, Vec<f64>) =
        m.ip.iter()
            .filter(|s| s.iteration == 0 && s.layer == last)
            .map(|s| (s.epoch as f64, s.i_l_y))
            .unzip();
    let rho = spearman(&epochs, &ily).unwrap_or(f64::NAN);
    let change = m
        .sigma_last_epoch_change
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    verdict(
        rho > 0.6 && change < 0.05,
        format!(
            "Spearman(epoch, I(L{last};Y)) = {rho:.3} over {} epochs; kernel widths {:?}, \
             max last-epoch change {:.2}%",
            epochs.len(),
            m.sigma,
            100.0 * change
        ),
    )
}

fn ablations(runs: &DeskRuns) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = runs.comparison.exists();
    for (t, v) in &runs.global {
        match v {
            Ok(v) => parts.push(format!(
                "T={t}: {:?} {:.2}%",
                v.final_filters(),
                100.0 * v.final_accuracy()
            )),
            Err(e) => {
                pass = false;
                parts.push(format!("T={t}: failed ({e})"));
            }
        }
    }
    let accs: Vec<(usize, f64)> = std::iter::once((100, runs.main.final_accuracy()))
        .chain(
            runs.batch_sizes
                .iter()
                .map(|(bs, v)| (*bs, v.final_accuracy())),
        )
        .map(|(bs, a)| (bs, 100.0 * a))
        .collect();
    let spread = accs.iter().map(|a| a.1).fold(f64::MIN, f64::max)
        - accs.iter().map(|a| a.1).fold(f64::MAX, f64::min);
    pass &= spread <= 1.0;
    parts.push(format!(
        "relevance batch {}: spread {spread:.2} pts",
        accs.iter()
            .map(|(bs, a)| format!("{bs}->{a:.2}%"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    verdict(
        pass,
        format!("{}; report {}", parts.join("; "), runs.comparison.display()),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Verdict)> = vec![
        (1, "estimator property suite", estimator_properties()),
        (
            2,
            "entropy vs characteristic-polynomial oracle",
            characteristic_polynomial_oracle(),
        ),
        (3, "two-class block structure", block_structure()),
        (4, "gradient suite", gradient_suite()),
        (6, "relevance separability", separability()),
        (8, "FLOP accounting", flop_accounting()),
    ];

    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    match desk_runs(&dir) {
        Ok(runs) => {
            results.push((5, "surgery equivalence", surgery(&runs)));
            results.push((7, "desk-scale end-to-end", end_to_end(&runs)));
            results.push((9, "information-plane trend", ip_trend(&runs)));
            results.push((10, "ablation plumbing", ablations(&runs)));
        }
        Err(e) => {
            for (id, name) in [
                (5, "surgery equivalence"),
                (7, "desk-scale end-to-end"),
                (9, "information-plane trend"),
                (10, "ablation plumbing"),
            ] {
                results.push((id, name, verdict(false, format!("desk run failed: {e}"))));
            }
        }
    }
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, v) in &results {
        println!(
            "{} {id:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
