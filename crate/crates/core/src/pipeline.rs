//! End-to-end runs: initial training with kernel-width tracking, iterative
//! prune and retrain with resumable progress, scoring of external activation
//! dumps and run summaries.
//!
//! Artifacts of run `<id>` in the output directory:
//!
//! | file | contents |
//! |---|---|
//! | `baseline_<id>.hrck` | trained network |
//! | `sigma_<id>.json` | per-layer kernel widths and their per-epoch trace |
//! | `metrics_<id>.json` | training log, baseline accuracy and cost, IP samples |
//! | `iter<k>_<id>.hrck` | network after pruning iteration `k` and its retrain |
//! | `progress_<id>.json` | prune state and per-iteration records (resume point) |
//! | `prune_<id>.jsonl` | one record per iteration and conv layer |
//! | `ip_<id>.csv`, `relhist_<id>.csv` | information plane and relevance histograms |
//! | `summary_<id>.json` | per-iteration accuracy, FLOPs and parameters |

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_idx, make_batches, read_hrad, Dataset, PixelScale, Split};
use crate::error::{Error, Result};
use crate::infotheory::{one_hot, LabelKernel, SigmaTracker};
use crate::iplane::{
    export_reports, ip_snapshot, relevance_histogram, IPSample, Probe, RelevanceHistogram,
};
use crate::linalg::{gaussian_gram, EigenSolver};
use crate::nnet::{
    build_lenet5, evaluate, forward, load_checkpoint, save_checkpoint, train, Captured,
    EpochMetrics, ForwardOptions, NetworkDef, Tensor4, TrainObserver,
};
use crate::par::Execution;
use crate::pruner::{
    count_flops_params, keep_masks, prune_iteration, pruned_pct, LayerSelection, NetworkCost,
    PruneRecord, PruneState, SelectionMode,
};
use crate::relevance::{score_channels, RelevanceTable};

/// File names of one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub run_id: String,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>, run_id: &str) -> Self {
        Self {
            dir: dir.into(),
            run_id: run_id.to_string(),
        }
    }

    fn file(&self, stem: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{stem}_{}.{ext}", self.run_id))
    }

    pub fn baseline(&self) -> PathBuf {
        self.file("baseline", "hrck")
    }

    pub fn sigma(&self) -> PathBuf {
        self.file("sigma", "json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.file("metrics", "json")
    }

    pub fn iteration(&self, k: usize) -> PathBuf {
        self.file(&format!("iter{k}"), "hrck")
    }

    pub fn progress(&self) -> PathBuf {
        self.file("progress", "json")
    }

    pub fn prune_report(&self) -> PathBuf {
        self.file("prune", "jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.file("summary", "json")
    }
}

/// Derives independent per-purpose seeds from the run seed.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut z = seed
        ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_INIT: u64 = 1;
const SEED_TRAIN: u64 = 2;
const SEED_RETRAIN: u64 = 3;
const SEED_RELEVANCE: u64 = 4;
const SEED_SURGERY_CHECK: u64 = 5;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Training and test splits with normalization statistics from the
/// training split.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let mut train = load_idx(
        d.path(&d.train_images),
        d.path(&d.train_labels),
        Split::Train,
    )?;
    let mut test = load_idx(d.path(&d.test_images), d.path(&d.test_labels), Split::Test)?;
    if let Some(n) = d.train_subset {
        train = train.head(n);
    }
    if let Some(n) = d.test_subset {
        test = test.head(n);
    }
    if train.image_shape() != (28, 28) || test.image_shape() != (28, 28) {
        return Err(Error::format(0, "expected 28x28 images"));
    }
    let stats = train.compute_stats();
    Ok((train.with_stats(stats), test.with_stats(stats)))
}

fn probe_for(cfg: &RunConfig, test: &Dataset) -> Result<Probe> {
    let r = &cfg.report;
    let batches = r.probe_batches.min(test.len() / r.probe_batch_size);
    Probe::new(
        test,
        batches.max(1),
        r.probe_batch_size.min(test.len()),
        cfg.sigma.input_sigma,
        cfg.sigma.label_sigma,
    )
}

/// Outputs of the initial training phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub run_id: String,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub baseline_accuracy: f64,
    pub filters: Vec<usize>,
    pub cost: NetworkCost,
    /// Kernel width of every conv layer at the end of each epoch.
    pub sigma_trace: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// Relative kernel-width change over the last epoch, per layer.
    pub sigma_last_epoch_change: Vec<f64>,
    /// Layers whose width froze during training, with the epoch.
    pub sigma_frozen_at: BTreeMap<usize, usize>,
    pub ip: Vec<IPSample>,
}

struct TrainingMonitor<'a> {
    tracker: SigmaTracker,
    probe: &'a Probe,
    classes: usize,
    layers: usize,
    label_sigma: f64,
    ip: Vec<IPSample>,
    frozen_at: BTreeMap<usize, usize>,
}

impl TrainObserver for TrainingMonitor<'_> {
    fn capture(&self) -> Vec<usize> {
        if self.tracker.all_frozen() {
            Vec::new()
        } else {
            (0..self.layers).collect()
        }
    }

    fn on_batch(&mut self, _epoch: usize, captured: &[Captured], labels: &[usize]) -> Result<()> {
        if self.tracker.all_frozen() {
            return Ok(());
        }
        let label_gram = gaussian_gram(&one_hot(labels, self.classes)?, self.label_sigma)?;
        for c in captured {
            let a = &c.activations;
            self.tracker
                .observe(c.conv_id, a.data(), a.batch(), a.sample_len(), &label_gram)?;
        }
        Ok(())
    }

    fn on_epoch_end(&mut self, net: &NetworkDef, metrics: &EpochMetrics) -> Result<()> {
        for layer in self.tracker.end_epoch() {
            log::info!(
                "kernel width of conv {layer} frozen after epoch {}",
                metrics.epoch
            );
            self.frozen_at.insert(layer, metrics.epoch);
        }
        let sigmas = self.tracker.sigmas();
        let samples = ip_snapshot(
            net,
            self.probe,
            &sigmas,
            metrics.epoch,
            0,
            Execution::default(),
        )?;
        log::info!(
            "epoch {} sigma {:?} I(L;Y) {:?}",
            metrics.epoch,
            sigmas,
            samples.iter().map(|s| s.i_l_y).collect::<Vec<_>>()
        );
        self.ip.extend(samples);
        Ok(())
    }
}

/// Trains the baseline network, tracking and finally freezing per-layer
/// kernel widths. Writes the checkpoint, kernel widths and metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainMetrics> {
    cfg.validate()?;
    let (train_set, test_set) = load_datasets(cfg)?;
    let paths = RunPaths::new(&cfg.out_dir, &cfg.run_id);
    std::fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;

    let mut net = build_lenet5();
    net.init_kaiming_uniform(derive_seed(cfg.seed, SEED_INIT, 0), cfg.init_negative_slope);
    let layers = net.filter_counts().len();
    let probe = probe_for(cfg, &test_set)?;
    let mut monitor = TrainingMonitor {
        tracker: SigmaTracker::new(layers, 1.0, cfg.sigma.clone()),
        probe: &probe,
        classes: train_set.classes(),
        layers,
        label_sigma: cfg.sigma.label_sigma,
        ip: Vec::new(),
        frozen_at: BTreeMap::new(),
    };
    let mut tc = cfg.initial.clone();
    tc.seed = derive_seed(cfg.seed, SEED_TRAIN, 0);
    let epochs = train(&mut net, &train_set, Some(&test_set), &tc, &mut monitor)?;
    let sigma_last_epoch_change = monitor.tracker.last_epoch_change();
    monitor.tracker.freeze_all();
    let baseline_accuracy = evaluate(&net, &test_set, 500)?;

    save_checkpoint(paths.baseline(), &net)?;
    write_json(&paths.sigma(), &monitor.tracker)?;
    let metrics = TrainMetrics {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        epochs,
        baseline_accuracy,
        filters: net.filter_counts(),
        cost: count_flops_params(&net)?,
        sigma_trace: monitor.tracker.epoch_trace.clone(),
        sigma: monitor.tracker.sigmas(),
        sigma_last_epoch_change,
        sigma_frozen_at: monitor.frozen_at,
        ip: monitor.ip,
    };
    write_json(&paths.metrics(), &metrics)?;
    export_reports(&paths.dir, &cfg.run_id, &metrics.ip, &[])?;
    log::info!("baseline accuracy {:.4}", baseline_accuracy);
    Ok(metrics)
}

/// Averaged relevance of every remaining filter over one pass of seeded
/// mini-batches. Tables are keyed by original filter id.
#[allow(clippy::too_many_arguments)]
pub fn score_relevance(
    net: &NetworkDef,
    data: &Dataset,
    state: &PruneState,
    sigmas: &[f64],
    label_sigma: f64,
    batch_size: usize,
    seed: u64,
    solver: EigenSolver,
    exec: Execution,
) -> Result<Vec<RelevanceTable>> {
    let layers = state.layers.len();
    if sigmas.len() != layers {
        return Err(Error::invalid(format!(
            "{} kernel widths for {layers} conv layers",
            sigmas.len()
        )));
    }
    let capture: Vec<usize> = (0..layers).collect();
    let mut tables: Vec<RelevanceTable> = (0..layers).map(RelevanceTable::new).collect();
    let plan = make_batches(data.len(), seed, batch_size);
    for (b, idx) in plan.estimation_batches(0).iter().enumerate() {
        let x = data.tensor(idx, PixelScale::Standardized);
        let out = forward(
            net,
            &x,
            &ForwardOptions {
                capture: &capture,
                keep: &[],
            },
        )?;
        let kernel = LabelKernel::new(&data.labels_of(idx), data.classes(), label_sigma)?;
        for (l, cap) in out.captured.iter().enumerate() {
            let scores = score_channels(&cap.activations, &kernel, sigmas[l], solver, exec)?;
            for (c, v) in scores.into_iter().enumerate() {
                tables[l].accumulate(state.layers[l].remaining[c], b, v)?;
            }
        }
    }
    Ok(tables)
}

/// Largest absolute logit difference between `pruned` and `original` with
/// the dropped channels zeroed, over `inputs` random inputs.
pub fn surgery_discrepancy(
    original: &NetworkDef,
    pruned: &NetworkDef,
    dropped: &[Vec<usize>],
    inputs: usize,
    seed: u64,
) -> Result<f64> {
    let shape = original.input;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..inputs * shape.len())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let x = Tensor4::new(inputs, shape.channels, shape.height, shape.width, data)?;
    let masks = keep_masks(original, dropped);
    let masked = forward(
        original,
        &x,
        &ForwardOptions {
            capture: &[],
            keep: &masks,
        },
    )?;
    let direct = forward(pruned, &x, &ForwardOptions::default())?;
    Ok(masked
        .logits
        .iter()
        .zip(&direct.logits)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Everything recorded for one pruning iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: usize,
    pub selections: Vec<LayerSelection>,
    pub filters: Vec<usize>,
    pub accuracy: f64,
    pub retrain: Vec<EpochMetrics>,
    pub cost: NetworkCost,
    /// Largest logit gap between the pruned network and the zero-masked
    /// network before retraining.
    pub surgery_max_abs_diff: Option<f64>,
    pub ip: Vec<IPSample>,
    /// Distribution of relevance over the filters scored this iteration.
    pub histograms: Vec<RelevanceHistogram>,
    pub checkpoint: PathBuf,
}

/// Configuration reached at the end of a limit stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: usize,
    pub limits: Vec<usize>,
    /// Completed iterations when the stage was reached.
    pub iteration: usize,
    pub filters: Vec<usize>,
    pub accuracy: f64,
    pub flops: u64,
    pub params: u64,
}

/// Resumable state of a prune run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneProgress {
    pub run_id: String,
    pub mode: SelectionMode,
    pub baseline: PathBuf,
    pub baseline_accuracy: f64,
    pub state: PruneState,
    pub stage: usize,
    pub records: Vec<IterationRecord>,
    pub stages: Vec<StageResult>,
    /// Set once every stage is reached or an iteration selects nothing. A run
    /// stopped by the iteration budget stays unfinished and resumes when the
    /// budget is raised.
    pub finished: bool,
    /// Why the loop ended before the last stage.
    #[serde(default)]
    pub stop_reason: Option<String>,
}

impl PruneProgress {
    pub fn prune_records(&self) -> Vec<PruneRecord> {
        self.records
            .iter()
            .flat_map(|r| {
                r.selections.iter().map(move |s| PruneRecord {
                    iteration: r.iteration,
                    layer_id: s.layer_id,
                    pruned: s.pruned.clone(),
                    relevance: s.relevance.clone(),
                    r: s.r,
                    flops: r.cost.flops,
                    params: r.cost.params,
                })
            })
            .collect()
    }
}

fn write_prune_report(path: &Path, progress: &PruneProgress) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
    for rec in progress.prune_records() {
        let line = serde_json::to_string(&rec).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(f, "{line}").map_err(|e| Error::io(&tmp, e))?;
    }
    f.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_progress(paths: &RunPaths, progress: &PruneProgress, train_ip: &[IPSample]) -> Result<()> {
    write_prune_report(&paths.prune_report(), progress)?;
    let ip: Vec<IPSample> = train_ip
        .iter()
        .cloned()
        .chain(progress.records.iter().flat_map(|r| r.ip.iter().cloned()))
        .collect();
    let hists: Vec<RelevanceHistogram> = progress
        .records
        .iter()
        .flat_map(|r| r.histograms.iter().cloned())
        .collect();
    export_reports(&paths.dir, &paths.run_id, &ip, &hists)?;
    write_json(&paths.progress(), progress)
}

/// Iterative prune and retrain until every limit stage is reached, the
/// iteration budget is spent, or (global mode) an iteration prunes nothing.
/// Progress is saved after every iteration and an existing progress file of
/// the same run is resumed.
pub fn cmd_prune(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PruneProgress> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.out_dir, &cfg.run_id);
    let (train_set, test_set) = load_datasets(cfg)?;
    let tracker: SigmaTracker = read_json(&paths.sigma())?;
    let sigmas = tracker.sigmas();
    let train_ip: Vec<IPSample> = if paths.metrics().exists() {
        read_json::<TrainMetrics>(&paths.metrics())?.ip
    } else {
        Vec::new()
    };
    let baseline_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.baseline());

    let (mut net, mut progress) = if paths.progress().exists() {
        let progress: PruneProgress = read_json(&paths.progress())?;
        if progress.mode != cfg.mode {
            return Err(Error::config(
                "mode",
                format!("progress file was written in {:?} mode", progress.mode),
            ));
        }
        let net = match progress.records.last() {
            Some(r) => load_checkpoint(&r.checkpoint)?,
            None => load_checkpoint(&progress.baseline)?,
        };
        log::info!("resuming after iteration {}", progress.state.iteration);
        let mut progress = progress;
        if !progress.finished {
            progress.stop_reason = None;
        }
        (net, progress)
    } else {
        let net = load_checkpoint(&baseline_path)?;
        let baseline_accuracy = evaluate(&net, &test_set, 500)?;
        let progress = PruneProgress {
            run_id: cfg.run_id.clone(),
            mode: cfg.mode,
            baseline: baseline_path.clone(),
            baseline_accuracy,
            state: PruneState::new(&net.filter_counts()),
            stage: 0,
            records: Vec::new(),
            stages: Vec::new(),
            finished: false,
            stop_reason: None,
        };
        (net, progress)
    };
    if net.filter_counts() != progress.state.remaining_counts() {
        return Err(Error::state(
            "checkpoint does not match the saved prune state",
        ));
    }
    let probe = probe_for(cfg, &test_set)?;
    let stages = cfg.schedule.stages();
    let exec = Execution::default();

    while !progress.finished {
        let Some(limits) = stages.get(progress.stage) else {
            progress.finished = true;
            break;
        };
        if progress.state.at_limits(limits) {
            let cost = count_flops_params(&net)?;
            let accuracy = progress
                .records
                .last()
                .map_or(progress.baseline_accuracy, |r| r.accuracy);
            progress.stages.push(StageResult {
                stage: progress.stage,
                limits: limits.clone(),
                iteration: progress.state.iteration,
                filters: net.filter_counts(),
                accuracy,
                flops: cost.flops,
                params: cost.params,
            });
            log::info!(
                "stage {} reached: filters {:?}",
                progress.stage,
                net.filter_counts()
            );
            progress.stage += 1;
            save_progress(&paths, &progress, &train_ip)?;
            continue;
        }
        if progress.state.iteration >= cfg.schedule.iterations {
            progress.stop_reason = Some(format!(
                "iteration budget of {} spent",
                cfg.schedule.iterations
            ));
            break;
        }
        let k = progress.state.iteration;
        let tables = score_relevance(
            &net,
            &train_set,
            &progress.state,
            &sigmas,
            cfg.sigma.label_sigma,
            cfg.relevance.batch_size,
            derive_seed(cfg.seed, SEED_RELEVANCE, k as u64),
            cfg.relevance.solver,
            exec,
        )?;
        let schedule = cfg.schedule.with_limits(limits);
        let outcome = prune_iteration(&net, &schedule, &progress.state, &tables, cfg.mode)?;
        if !outcome.pruned_any() {
            progress.finished = true;
            progress.stop_reason = Some(format!("iteration {} selected no filters", k + 1));
            break;
        }
        let surgery_max_abs_diff = match cfg.report.surgery_check_inputs {
            0 => None,
            n => Some(surgery_discrepancy(
                &net,
                &outcome.net,
                &outcome.dropped_channels,
                n,
                derive_seed(cfg.seed, SEED_SURGERY_CHECK, k as u64),
            )?),
        };
        let mut pruned = outcome.net;
        let mut tc = cfg.retrain.clone();
        tc.seed = derive_seed(cfg.seed, SEED_RETRAIN, k as u64);
        let retrain = train(&mut pruned, &train_set, None, &tc, &mut ())?;
        let accuracy = evaluate(&pruned, &test_set, 500)?;
        let cost = count_flops_params(&pruned)?;
        let ip = ip_snapshot(&pruned, &probe, &sigmas, cfg.retrain.epochs, k + 1, exec)?;
        let histograms = tables
            .iter()
            .map(|t| relevance_histogram(t, cfg.report.histogram_bins, k + 1))
            .collect::<Result<Vec<_>>>()?;
        let ckpt = paths.iteration(k + 1);
        save_checkpoint(&ckpt, &pruned)?;
        log::info!(
            "iteration {}: filters {:?} accuracy {:.4} flops {}",
            k + 1,
            pruned.filter_counts(),
            accuracy,
            cost.flops
        );
        progress.records.push(IterationRecord {
            iteration: k + 1,
            stage: progress.stage,
            selections: outcome.selections,
            filters: pruned.filter_counts(),
            accuracy,
            retrain,
            cost,
            surgery_max_abs_diff,
            ip,
            histograms,
            checkpoint: ckpt,
        });
        progress.state = outcome.state;
        net = pruned;
        save_progress(&paths, &progress, &train_ip)?;
    }
    save_progress(&paths, &progress, &train_ip)?;
    Ok(progress)
}

/// Ranked relevance of one layer's filters from an activation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScores {
    pub layer_id: usize,
    pub batches: usize,
    /// `(filter_id, relevance)`, ascending by relevance then id.
    pub ranking: Vec<FilterScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub filter_id: usize,
    pub relevance: f64,
}

/// Scores every filter in an HRAD dump. Records are batches in file order;
/// each layer is scored with the same layer width.
pub fn cmd_score(hrad_path: &Path, sigma_label: f64, sigma_layer: f64) -> Result<Vec<LayerScores>> {
    let records = read_hrad(hrad_path)?;
    let mut tables: BTreeMap<usize, RelevanceTable> = BTreeMap::new();
    for (batch_id, rec) in records.iter().enumerate() {
        let kernel = LabelKernel::new(&rec.labels_usize(), rec.class_count as usize, sigma_label)?;
        let layer = rec.layer_id as usize;
        let acts = Tensor4::new(
            rec.samples as usize,
            rec.filter_count as usize,
            1,
            rec.vec_len as usize,
            filter_major_to_batch_major(rec),
        )?;
        let scores = score_channels(
            &acts,
            &kernel,
            sigma_layer,
            EigenSolver::default(),
            Execution::default(),
        )?;
        let table = tables
            .entry(layer)
            .or_insert_with(|| RelevanceTable::new(layer));
        for (f, v) in scores.into_iter().enumerate() {
            table.accumulate(f, batch_id, v)?;
        }
    }
    Ok(tables
        .into_values()
        .map(|t| {
            let mut ranking: Vec<FilterScore> = t
                .per_filter()
                .into_iter()
                .map(|(filter_id, relevance)| FilterScore {
                    filter_id,
                    relevance,
                })
                .collect();
            ranking.sort_by(|a, b| {
                a.relevance
                    .total_cmp(&b.relevance)
                    .then(a.filter_id.cmp(&b.filter_id))
            });
            LayerScores {
                layer_id: t.layer_id,
                batches: t.batches(),
                ranking,
            }
        })
        .collect())
}

fn filter_major_to_batch_major(rec: &crate::data::HradRecord) -> Vec<f64> {
    let (f, s, v) = (
        rec.filter_count as usize,
        rec.samples as usize,
        rec.vec_len as usize,
    );
    let mut out = vec![0.0; f * s * v];
    for j in 0..f {
        for i in 0..s {
            let src = &rec.activations[(j * s + i) * v..(j * s + i + 1) * v];
            let dst = &mut out[(i * f + j) * v..(i * f + j + 1) * v];
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = x as f64;
            }
        }
    }
    out
}

/// One row of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub iteration: usize,
    pub filters: Vec<usize>,
    pub acc_baseline: f64,
    pub acc_pruned: f64,
    pub acc_drop: f64,
    pub flops: u64,
    pub flops_pruned_pct: f64,
    pub params: u64,
    pub params_pruned_pct: f64,
    pub flops_2x: u64,
    pub params_with_bias: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub accuracy: f64,
    pub filters: Vec<usize>,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub mode: Option<SelectionMode>,
    pub baseline: Option<Baseline>,
    /// One row per pruning iteration; accuracies in percent.
    pub rows: Vec<SummaryRow>,
    /// Rows at which each limit stage was reached.
    pub stages: Vec<SummaryRow>,
    pub finished: bool,
    pub stop_reason: Option<String>,
    /// Artifacts that were expected but not found.
    pub missing: Vec<String>,
}

/// Summary plus its creation time, kept apart so summaries of identical runs
/// compare equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub summary: Summary,
    pub generated_unix_secs: u64,
}

/// Consolidates a run directory into a summary and writes
/// `summary_<id>.json`.
pub fn cmd_report(dir: &Path, run_id: &str) -> Result<Summary> {
    let paths = RunPaths::new(dir, run_id);
    let mut missing = Vec::new();
    let metrics: Option<TrainMetrics> = if paths.metrics().exists() {
        Some(read_json(&paths.metrics())?)
    } else {
        missing.push(paths.metrics().display().to_string());
        None
    };
    let progress: Option<PruneProgress> = if paths.progress().exists() {
        Some(read_json(&paths.progress())?)
    } else {
        missing.push(paths.progress().display().to_string());
        None
    };
    let baseline = metrics.as_ref().map(|m| Baseline {
        accuracy: 100.0 * m.baseline_accuracy,
        filters: m.filters.clone(),
        flops: m.cost.flops,
        params: m.cost.params,
    });
    let mut rows = Vec::new();
    let mut stages = Vec::new();
    if let Some(p) = &progress {
        let base_acc = 100.0 * p.baseline_accuracy;
        let (base_flops, base_params) = baseline.as_ref().map_or((0, 0), |b| (b.flops, b.params));
        let row = |iteration: usize, filters: &[usize], acc: f64, cost: (u64, u64, u64, u64)| {
            SummaryRow {
                iteration,
                filters: filters.to_vec(),
                acc_baseline: base_acc,
                acc_pruned: 100.0 * acc,
                acc_drop: base_acc - 100.0 * acc,
                flops: cost.0,
                flops_pruned_pct: pruned_pct(cost.0, base_flops),
                params: cost.1,
                params_pruned_pct: pruned_pct(cost.1, base_params),
                flops_2x: cost.2,
                params_with_bias: cost.3,
            }
        };
        for r in &p.records {
            rows.push(row(
                r.iteration,
                &r.filters,
                r.accuracy,
                (
                    r.cost.flops,
                    r.cost.params,
                    r.cost.flops_2x,
                    r.cost.params_with_bias,
                ),
            ));
        }
        for s in &p.stages {
            let extra = p
                .records
                .iter()
                .find(|r| r.iteration == s.iteration)
                .map(|r| (r.cost.flops_2x, r.cost.params_with_bias));
            let (f2, pb) = extra.unwrap_or_else(|| {
                metrics.as_ref().map_or((2 * s.flops, s.params), |m| {
                    (m.cost.flops_2x, m.cost.params_with_bias)
                })
            });
            stages.push(row(
                s.iteration,
                &s.filters,
                s.accuracy,
                (s.flops, s.params, f2, pb),
            ));
        }
    }
    let summary = Summary {
        run_id: run_id.to_string(),
        mode: progress.as_ref().map(|p| p.mode),
        baseline,
        rows,
        stages,
        finished: progress.as_ref().is_some_and(|p| p.finished),
        stop_reason: progress.as_ref().and_then(|p| p.stop_reason.clone()),
        missing,
    };
    let generated_unix_secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    if dir.exists() {
        write_json(
            &paths.summary(),
            &SummaryFile {
                summary: summary.clone(),
                generated_unix_secs,
            },
        )?;
    }
    Ok(summary)
}
