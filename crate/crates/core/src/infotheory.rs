//! Matrix-based entropy, joint entropy and mutual information, plus per-layer
//! kernel-width selection.
//!
//! Entropies are in bits and use the von Neumann form `-Σ λ log2 λ` over the
//! spectrum of a unit-trace normalized Gram matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    gram_from_sq_distances, hadamard, normalize_gram, pairwise_sq_distances, sym_eigenvalues_with,
    DenseMatrix, EigenSolver,
};

/// Eigenvalues below this contribute nothing to the entropy sum.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Allowed deviation of `trace(N)` from one.
pub const TRACE_TOL: f64 = 1e-6;

/// Mutual information below this is reported as suspect.
pub const MI_NEGATIVE_TOL: f64 = -1e-6;

/// Default kernel width for raw inputs.
pub const INPUT_SIGMA: f64 = 8.0;

/// Default kernel width for one-hot labels.
pub const LABEL_SIGMA: f64 = 0.1;

/// Entropy of a spectrum that should sum to one. Negative noise is clamped
/// to zero and the remainder renormalized before summing.
pub fn entropy_from_eigenvalues(values: &[f64]) -> f64 {
    let clamped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    clamped
        .iter()
        .map(|&v| v / total)
        .filter(|&l| l >= EIGEN_FLOOR)
        .map(|l| -l * l.log2())
        .sum()
}

/// `H(N) = -Σ λ_i log2 λ_i` for a normalized Gram matrix.
pub fn matrix_entropy(n: &DenseMatrix) -> Result<f64> {
    matrix_entropy_with(n, EigenSolver::default())
}

pub fn matrix_entropy_with(n: &DenseMatrix, solver: EigenSolver) -> Result<f64> {
    let trace = n.trace();
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(Error::invalid(format!(
            "normalized Gram matrix must have unit trace, got {trace}"
        )));
    }
    let values = sym_eigenvalues_with(n, solver)?;
    Ok(entropy_from_eigenvalues(&values))
}

/// `H(U, V)` from the Hadamard product of two normalized Gram matrices,
/// rescaled to unit trace before taking the entropy.
pub fn joint_entropy(n_u: &DenseMatrix, n_v: &DenseMatrix) -> Result<f64> {
    joint_entropy_with(n_u, n_v, EigenSolver::default())
}

pub fn joint_entropy_with(
    n_u: &DenseMatrix,
    n_v: &DenseMatrix,
    solver: EigenSolver,
) -> Result<f64> {
    let product = hadamard(n_u, n_v)?;
    let trace = product.trace();
    if !(trace > 0.0) {
        return Err(Error::NumericDomain(format!(
            "Hadamard product has non-positive trace {trace}"
        )));
    }
    matrix_entropy_with(&product.scale(1.0 / trace), solver)
}

/// Entropies and mutual information of a pair of variables, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIResult {
    pub h_u: f64,
    pub h_v: f64,
    pub h_uv: f64,
    pub mi: f64,
}

impl MIResult {
    pub fn from_entropies(h_u: f64, h_v: f64, h_uv: f64) -> Self {
        let result = Self {
            h_u,
            h_v,
            h_uv,
            mi: h_u + h_v - h_uv,
        };
        if result.is_suspect() {
            log::warn!(
                "mutual information estimate {} is below {MI_NEGATIVE_TOL}",
                result.mi
            );
        }
        result
    }

    /// True when the estimate is more negative than numerical noise explains.
    pub fn is_suspect(&self) -> bool {
        self.mi < MI_NEGATIVE_TOL
    }
}

/// `I(U;V) = H(U) + H(V) - H(U,V)` from precomputed normalized Gram matrices.
pub fn mutual_information_normalized(n_u: &DenseMatrix, n_v: &DenseMatrix) -> Result<MIResult> {
    let h_u = matrix_entropy(n_u)?;
    let h_v = matrix_entropy(n_v)?;
    let h_uv = joint_entropy(n_u, n_v)?;
    Ok(MIResult::from_entropies(h_u, h_v, h_uv))
}

/// Mutual information between two sample sets of equal size.
pub fn mutual_information<S: AsRef<[f64]>, T: AsRef<[f64]>>(
    u_samples: &[S],
    v_samples: &[T],
    sigma_u: f64,
    sigma_v: f64,
) -> Result<MIResult> {
    if u_samples.len() != v_samples.len() {
        return Err(Error::invalid(format!(
            "sample counts differ: {} vs {}",
            u_samples.len(),
            v_samples.len()
        )));
    }
    if u_samples.len() < 2 {
        return Err(Error::invalid(
            "mutual information needs at least two samples",
        ));
    }
    let g_u = crate::linalg::gaussian_gram(u_samples, sigma_u)?;
    let g_v = crate::linalg::gaussian_gram(v_samples, sigma_v)?;
    mutual_information_normalized(&normalize_gram(&g_u)?, &normalize_gram(&g_v)?)
}

/// One-hot encoding of class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Vec<Vec<f64>>> {
    labels
        .iter()
        .map(|&y| {
            if y >= classes {
                return Err(Error::invalid(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            let mut v = vec![0.0; classes];
            v[y] = 1.0;
            Ok(v)
        })
        .collect()
}

/// Normalized label Gram matrix together with its entropy. Shared by every
/// filter scored against the same mini-batch.
#[derive(Debug, Clone)]
pub struct LabelKernel {
    pub normalized: DenseMatrix,
    pub entropy: f64,
}

impl LabelKernel {
    pub fn new(labels: &[usize], classes: usize, sigma: f64) -> Result<Self> {
        let onehot = one_hot(labels, classes)?;
        let g = crate::linalg::gaussian_gram(&onehot, sigma)?;
        let normalized = normalize_gram(&g)?;
        let entropy = matrix_entropy(&normalized)?;
        Ok(Self {
            normalized,
            entropy,
        })
    }

    pub fn len(&self) -> usize {
        self.normalized.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mutual information between these labels and a variable with the given
    /// normalized Gram matrix.
    pub fn mutual_information(&self, n_x: &DenseMatrix) -> Result<MIResult> {
        self.mutual_information_with(n_x, EigenSolver::default())
    }

    pub fn mutual_information_with(
        &self,
        n_x: &DenseMatrix,
        solver: EigenSolver,
    ) -> Result<MIResult> {
        let h_x = matrix_entropy_with(n_x, solver)?;
        let h_xy = joint_entropy_with(n_x, &self.normalized, solver)?;
        Ok(MIResult::from_entropies(h_x, self.entropy, h_xy))
    }
}

/// Settings of the kernel-width search and freezing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSettings {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    /// Weight on the previous width in the moving average.
    pub ema: f64,
    /// Relative change over one epoch below which a width is frozen.
    pub freeze_rel_change: f64,
    pub input_sigma: f64,
    pub label_sigma: f64,
}

impl Default for SigmaSettings {
    fn default() -> Self {
        Self {
            grid_min: 0.1,
            grid_max: 20.0,
            grid_points: 32,
            ema: 0.9,
            freeze_rel_change: 0.02,
            input_sigma: INPUT_SIGMA,
            label_sigma: LABEL_SIGMA,
        }
    }
}

impl SigmaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min > 0.0 && self.grid_max > self.grid_min) {
            return Err(Error::config(
                "sigma.grid_min/grid_max",
                "need 0 < grid_min < grid_max",
            ));
        }
        if self.grid_points < 2 {
            return Err(Error::config(
                "sigma.grid_points",
                "need at least two grid points",
            ));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(Error::config("sigma.ema", "must lie in [0, 1)"));
        }
        if !(self.input_sigma > 0.0 && self.label_sigma > 0.0) {
            return Err(Error::config(
                "sigma.input_sigma/label_sigma",
                "must be positive",
            ));
        }
        Ok(())
    }

    /// Geometric grid from `grid_min` to `grid_max` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let ratio = self.grid_max / self.grid_min;
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points)
            .map(|k| self.grid_min * ratio.powf(k as f64 / last))
            .collect()
    }
}

/// Kernel width tracked for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWidth {
    pub layer_id: usize,
    pub sigma: f64,
    /// Width after every evaluation, in order.
    pub history: Vec<f64>,
    pub frozen: bool,
    /// Evaluations skipped because all samples were identical.
    #[serde(default)]
    pub degenerate_events: usize,
}

impl KernelWidth {
    pub fn new(layer_id: usize, initial_sigma: f64) -> Self {
        Self {
            layer_id,
            sigma: initial_sigma,
            history: Vec::new(),
            frozen: false,
            degenerate_events: 0,
        }
    }
}

/// Centered alignment `<HAH, HBH>_F / (||HAH|| ||HBH||)`; zero when either
/// centered matrix vanishes.
pub fn centered_alignment(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    let ac = a.double_centered()?;
    let bc = b.double_centered()?;
    centered_alignment_precentered(&ac, &bc)
}

fn centered_alignment_precentered(ac: &DenseMatrix, bc: &DenseMatrix) -> Result<f64> {
    let denom = ac.frobenius_norm() * bc.frobenius_norm();
    if !(denom > 0.0) {
        return Ok(0.0);
    }
    Ok(ac.frobenius_dot(bc)? / denom)
}

/// Grid width maximizing centered alignment between the layer kernel and the
/// label kernel. Returns `None` when every sample is identical.
pub fn best_grid_sigma(
    data: &[f64],
    count: usize,
    dim: usize,
    label_gram: &DenseMatrix,
    settings: &SigmaSettings,
) -> Result<Option<f64>> {
    if count < 2 {
        return Err(Error::invalid(
            "kernel width selection needs at least two samples",
        ));
    }
    if label_gram.shape() != (count, count) {
        return Err(Error::invalid(format!(
            "label Gram is {:?}, expected {count}x{count}",
            label_gram.shape()
        )));
    }
    let sq = pairwise_sq_distances(data, count, dim)?;
    if sq.as_slice().iter().all(|&d| d == 0.0) {
        return Ok(None);
    }
    let label_centered = label_gram.double_centered()?;
    let mut best: Option<(f64, f64)> = None;
    for sigma in settings.grid() {
        let g = gram_from_sq_distances(&sq, sigma)?;
        let score = centered_alignment_precentered(&g.double_centered()?, &label_centered)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((sigma, score));
        }
    }
    Ok(best.map(|(sigma, _)| sigma))
}

/// One kernel-width update from a mini-batch of layer activations
/// (`count` rows of length `dim`).
pub fn select_sigma(
    data: &[f64],
    count: usize,
    dim: usize,
    label_gram: &DenseMatrix,
    prev: &KernelWidth,
    settings: &SigmaSettings,
) -> Result<KernelWidth> {
    if prev.frozen {
        return Err(Error::state(format!(
            "kernel width of layer {} is frozen",
            prev.layer_id
        )));
    }
    let mut next = prev.clone();
    match best_grid_sigma(data, count, dim, label_gram, settings)? {
        None => {
            next.degenerate_events += 1;
            log::debug!(
                "layer {}: identical samples, kernel width kept",
                prev.layer_id
            );
        }
        Some(grid_sigma) => {
            next.sigma = smooth_sigma(prev, grid_sigma, settings.ema);
        }
    }
    next.history.push(next.sigma);
    Ok(next)
}

/// Moving-average update; the first evaluation takes the grid value as is.
pub fn smooth_sigma(prev: &KernelWidth, grid_sigma: f64, ema: f64) -> f64 {
    if prev.history.is_empty() {
        grid_sigma
    } else {
        ema * prev.sigma + (1.0 - ema) * grid_sigma
    }
}

pub fn freeze_sigma(kw: &KernelWidth) -> KernelWidth {
    KernelWidth {
        frozen: true,
        ..kw.clone()
    }
}

/// Per-layer kernel widths updated during initial training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTracker {
    pub widths: Vec<KernelWidth>,
    pub settings: SigmaSettings,
    /// Width of each layer at the end of every completed epoch.
    pub epoch_trace: Vec<Vec<f64>>,
    #[serde(skip)]
    epoch_start: Vec<Option<f64>>,
}

impl SigmaTracker {
    pub fn new(layers: usize, initial_sigma: f64, settings: SigmaSettings) -> Self {
        Self {
            widths: (0..layers)
                .map(|l| KernelWidth::new(l, initial_sigma))
                .collect(),
            settings,
            epoch_trace: Vec::new(),
            epoch_start: vec![None; layers],
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.widths.iter().all(|w| w.frozen)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.widths.iter().map(|w| w.sigma).collect()
    }

    /// Updates the width of `layer` from one mini-batch; a no-op on frozen
    /// widths. Returns the width in effect afterwards.
    pub fn observe(
        &mut self,
        layer: usize,
        data: &[f64],
        count: usize,
        dim: usize,
        label_gram: &DenseMatrix,
    ) -> Result<f64> {
        let width = &self.widths[layer];
        if width.frozen {
            return Ok(width.sigma);
        }
        if self.epoch_start.len() != self.widths.len() {
            self.epoch_start = vec![None; self.widths.len()];
        }
        let next = select_sigma(data, count, dim, label_gram, width, &self.settings)?;
        if self.epoch_start[layer].is_none() {
            self.epoch_start[layer] = Some(next.history.first().copied().unwrap_or(next.sigma));
        }
        self.widths[layer] = next;
        Ok(self.widths[layer].sigma)
    }

    /// Closes an epoch: records the trace and freezes widths whose relative
    /// change over the epoch fell below the threshold. Returns the layers
    /// frozen by this call.
    pub fn end_epoch(&mut self) -> Vec<usize> {
        self.epoch_trace.push(self.sigmas());
        let mut frozen = Vec::new();
        for (layer, width) in self.widths.iter_mut().enumerate() {
            if width.frozen || width.history.is_empty() {
                continue;
            }
            let start = self
                .epoch_start
                .get(layer)
                .copied()
                .flatten()
                .unwrap_or(width.history[0]);
            let change = (width.sigma - start).abs() / start;
            if change < self.settings.freeze_rel_change {
                width.frozen = true;
                frozen.push(layer);
            }
        }
        self.epoch_start = self.widths.iter().map(|w| Some(w.sigma)).collect();
        frozen
    }

    pub fn freeze_all(&mut self) {
        for w in &mut self.widths {
            w.frozen = true;
        }
    }

    /// Relative width change over the last completed epoch, per layer.
    pub fn last_epoch_change(&self) -> Vec<f64> {
        let n = self.epoch_trace.len();
        if n == 0 {
            return vec![0.0; self.widths.len()];
        }
        let last = &self.epoch_trace[n - 1];
        let prev: Vec<f64> = if n >= 2 {
            self.epoch_trace[n - 2].clone()
        } else {
            self.widths
                .iter()
                .map(|w| w.history.first().copied().unwrap_or(w.sigma))
                .collect()
        };
        last.iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs() / b)
            .collect()
    }
}
