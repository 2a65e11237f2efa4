//! Information-plane tracking of conv layers and relevance distributions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PixelScale};
use crate::error::{Error, Result};
use crate::infotheory::{joint_entropy, matrix_entropy, LabelKernel, MIResult};
use crate::linalg::{gaussian_gram_flat, normalize_gram, DenseMatrix};
use crate::nnet::{forward, ForwardOptions, NetworkDef, Tensor4};
use crate::par::{map_range, Execution};
use crate::relevance::RelevanceTable;

/// One point of a layer's information-plane trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IPSample {
    pub epoch: usize,
    pub iteration: usize,
    pub layer: usize,
    pub i_x_l: f64,
    pub i_l_y: f64,
}

struct ProbeBatch {
    input: Tensor4,
    input_kernel: DenseMatrix,
    input_entropy: f64,
    labels: LabelKernel,
}

/// Fixed evaluation batches with their input and label kernels precomputed.
/// The input kernel works on pixels scaled to `[0, 1]`.
pub struct Probe {
    batches: Vec<ProbeBatch>,
}

impl Probe {
    /// `batches` consecutive batches of `batch_size` samples starting at the
    /// first sample of `data`.
    pub fn new(
        data: &Dataset,
        batches: usize,
        batch_size: usize,
        input_sigma: f64,
        label_sigma: f64,
    ) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::invalid("probe batches need at least two samples"));
        }
        if batches * batch_size > data.len() {
            return Err(Error::invalid(format!(
                "probe of {batches}x{batch_size} samples exceeds dataset of {}",
                data.len()
            )));
        }
        let batches = (0..batches)
            .map(|b| {
                let idx: Vec<usize> = (b * batch_size..(b + 1) * batch_size).collect();
                let unit = data.tensor(&idx, PixelScale::Unit);
                let input_kernel = normalize_gram(&gaussian_gram_flat(
                    unit.data(),
                    unit.batch(),
                    unit.sample_len(),
                    input_sigma,
                )?)?;
                let input_entropy = matrix_entropy(&input_kernel)?;
                Ok(ProbeBatch {
                    input: data.tensor(&idx, PixelScale::Standardized),
                    input_kernel,
                    input_entropy,
                    labels: LabelKernel::new(&data.labels_of(&idx), data.classes(), label_sigma)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { batches })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// `(I(X;L), I(L;Y))` of one normalized layer kernel against a probe batch.
fn plane_point(batch: &ProbeBatch, n_l: &DenseMatrix) -> Result<(f64, f64)> {
    let h_l = matrix_entropy(n_l)?;
    let h_xl = joint_entropy(&batch.input_kernel, n_l)?;
    let x = MIResult::from_entropies(batch.input_entropy, h_l, h_xl);
    let h_ly = joint_entropy(n_l, &batch.labels.normalized)?;
    let y = MIResult::from_entropies(h_l, batch.labels.entropy, h_ly);
    Ok((x.mi, y.mi))
}

/// Information-plane coordinates of every conv layer, averaged over the
/// probe batches. `sigmas[l]` is the kernel width of conv layer `l`.
pub fn ip_snapshot(
    net: &NetworkDef,
    probe: &Probe,
    sigmas: &[f64],
    epoch: usize,
    iteration: usize,
    exec: Execution,
) -> Result<Vec<IPSample>> {
    let layers = net.filter_counts().len();
    if sigmas.len() != layers {
        return Err(Error::invalid(format!(
            "{} kernel widths for {layers} conv layers",
            sigmas.len()
        )));
    }
    if probe.is_empty() {
        return Err(Error::invalid("empty probe"));
    }
    let capture: Vec<usize> = (0..layers).collect();
    let mut sums = vec![(0.0, 0.0); layers];
    for batch in &probe.batches {
        let out = forward(
            net,
            &batch.input,
            &ForwardOptions {
                capture: &capture,
                keep: &[],
            },
        )?;
        let points = map_range(exec, layers, |l| {
            let acts = &out.captured[l].activations;
            let g = gaussian_gram_flat(acts.data(), acts.batch(), acts.sample_len(), sigmas[l])?;
            plane_point(batch, &normalize_gram(&g)?)
        });
        for (sum, p) in sums.iter_mut().zip(points) {
            let (a, b) = p?;
            sum.0 += a;
            sum.1 += b;
        }
    }
    let m = probe.len() as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(layer, (a, b))| IPSample {
            epoch,
            iteration,
            layer,
            i_x_l: a / m,
            i_l_y: b / m,
        })
        .collect())
}

/// Distribution of the averaged relevance of a layer's remaining filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceHistogram {
    pub iteration: usize,
    pub layer: usize,
    /// `bins + 1` ascending edges; a single bin when all values are equal.
    pub edges: Vec<f64>,
    /// Percentage of filters per bin.
    pub pct: Vec<f64>,
    pub mean: f64,
}

/// Equal-width histogram over `[min, max]` of the table's per-filter means.
/// The maximum falls in the last bin.
pub fn relevance_histogram(
    table: &RelevanceTable,
    bins: usize,
    iteration: usize,
) -> Result<RelevanceHistogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let values: Vec<f64> = table.per_filter().into_values().collect();
    if values.is_empty() {
        return Err(Error::invalid(format!(
            "relevance table of layer {} is empty",
            table.layer_id
        )));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if hi == lo {
        return Ok(RelevanceHistogram {
            iteration,
            layer: table.layer_id,
            edges: vec![lo, hi],
            pct: vec![100.0],
            mean,
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for v in &values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = values.len() as f64;
    Ok(RelevanceHistogram {
        iteration,
        layer: table.layer_id,
        edges,
        pct: counts.iter().map(|&c| 100.0 * c as f64 / total).collect(),
        mean,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `epoch,iteration,layer,i_x_l,i_l_y` rows in the given order.
pub fn write_ip_csv(path: impl AsRef<Path>, samples: &[IPSample]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "iteration", "layer", "i_x_l", "i_l_y"])
        .map_err(|e| csv_error(path, e))?;
    for s in samples {
        w.write_record([
            s.epoch.to_string(),
            s.iteration.to_string(),
            s.layer.to_string(),
            s.i_x_l.to_string(),
            s.i_l_y.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `iteration,layer,bin_lo,bin_hi,pct` rows, one per bin.
pub fn write_histogram_csv(path: impl AsRef<Path>, hists: &[RelevanceHistogram]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["iteration", "layer", "bin_lo", "bin_hi", "pct"])
        .map_err(|e| csv_error(path, e))?;
    for h in hists {
        for (k, pct) in h.pct.iter().enumerate() {
            w.write_record([
                h.iteration.to_string(),
                h.layer.to_string(),
                h.edges[k].to_string(),
                h.edges[k + 1].to_string(),
                pct.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Both report files under `dir`: `ip_<run_id>.csv` and
/// `relhist_<run_id>.csv`.
pub fn export_reports(
    dir: impl AsRef<Path>,
    run_id: &str,
    samples: &[IPSample],
    hists: &[RelevanceHistogram],
) -> Result<()> {
    let dir = dir.as_ref();
    write_ip_csv(dir.join(format!("ip_{run_id}.csv")), samples)?;
    write_histogram_csv(dir.join(format!("relhist_{run_id}.csv")), hists)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
