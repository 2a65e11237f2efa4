//! Per-filter relevance: mutual information between a filter's activation
//! maps and the class labels, per mini-batch and averaged over batches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::LabelKernel;
use crate::linalg::{gaussian_gram_flat, normalize_gram, EigenSolver};
use crate::nnet::Tensor4;
use crate::par::{map_range, Execution};

/// Activation samples of one filter (or of a whole layer) over one
/// mini-batch: `count` rows of length `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    pub layer_id: usize,
    pub filter_id: usize,
    pub batch_id: usize,
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ActivationBatch {
    pub fn new(
        layer_id: usize,
        filter_id: usize,
        batch_id: usize,
        count: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let batch = Self {
            layer_id,
            filter_id,
            batch_id,
            count,
            dim,
            data,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Channel `channel` of a captured layer output, tagged with `filter_id`.
    pub fn from_channel(
        acts: &Tensor4,
        layer_id: usize,
        channel: usize,
        filter_id: usize,
        batch_id: usize,
    ) -> Self {
        Self {
            layer_id,
            filter_id,
            batch_id,
            count: acts.batch(),
            dim: acts.height() * acts.width(),
            data: acts.channel_samples(channel),
        }
    }

    /// Whole layer output, one row of `channels * h * w` per sample.
    pub fn from_layer(acts: &Tensor4, layer_id: usize, batch_id: usize) -> Self {
        Self {
            layer_id,
            filter_id: 0,
            batch_id,
            count: acts.batch(),
            dim: acts.sample_len(),
            data: acts.data().to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::invalid(format!(
                "activation batch needs at least two samples, got {}",
                self.count
            )));
        }
        if self.dim == 0 || self.data.len() != self.count * self.dim {
            return Err(Error::invalid(format!(
                "activation buffer holds {} values, expected {}x{}",
                self.data.len(),
                self.count,
                self.dim
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "activation batch contains non-finite values",
            ));
        }
        Ok(())
    }
}

/// Relevance in bits of one activation batch against a shared label kernel,
/// using the owning layer's kernel width.
pub fn batch_relevance(
    act: &ActivationBatch,
    labels: &LabelKernel,
    sigma_layer: f64,
) -> Result<f64> {
    if act.count != labels.len() {
        return Err(Error::invalid(format!(
            "{} activation samples but {} labels",
            act.count,
            labels.len()
        )));
    }
    act.validate()?;
    relevance_of(
        &act.data,
        act.count,
        act.dim,
        labels,
        sigma_layer,
        EigenSolver::default(),
    )
}

/// [`batch_relevance`] building the label kernel from class indices.
pub fn batch_relevance_labels(
    act: &ActivationBatch,
    labels: &[usize],
    classes: usize,
    sigma_layer: f64,
    sigma_label: f64,
) -> Result<f64> {
    if act.count != labels.len() {
        return Err(Error::invalid(format!(
            "{} activation samples but {} labels",
            act.count,
            labels.len()
        )));
    }
    let kernel = LabelKernel::new(labels, classes, sigma_label)?;
    batch_relevance(act, &kernel, sigma_layer)
}

/// Relevance of a whole layer output; `act` holds full per-sample vectors.
pub fn layer_relevance(
    act: &ActivationBatch,
    labels: &LabelKernel,
    sigma_layer: f64,
) -> Result<f64> {
    batch_relevance(act, labels, sigma_layer)
}

fn relevance_of(
    data: &[f64],
    count: usize,
    dim: usize,
    labels: &LabelKernel,
    sigma: f64,
    solver: EigenSolver,
) -> Result<f64> {
    let g = gaussian_gram_flat(data, count, dim, sigma)?;
    let n = normalize_gram(&g)?;
    Ok(labels.mutual_information_with(&n, solver)?.mi)
}

/// Relevance of every channel of a captured layer output on one batch, in
/// channel order.
pub fn score_channels(
    acts: &Tensor4,
    labels: &LabelKernel,
    sigma_layer: f64,
    solver: EigenSolver,
    exec: Execution,
) -> Result<Vec<f64>> {
    if acts.batch() != labels.len() {
        return Err(Error::invalid(format!(
            "{} activation samples but {} labels",
            acts.batch(),
            labels.len()
        )));
    }
    let dim = acts.height() * acts.width();
    map_range(exec, acts.channels(), |c| {
        relevance_of(
            &acts.channel_samples(c),
            acts.batch(),
            dim,
            labels,
            sigma_layer,
            solver,
        )
    })
    .into_iter()
    .collect()
}

/// Per-batch relevance values of one layer's filters, keyed by
/// `(filter_id, batch_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTable {
    pub layer_id: usize,
    per_batch: BTreeMap<(usize, usize), f64>,
}

impl RelevanceTable {
    pub fn new(layer_id: usize) -> Self {
        Self {
            layer_id,
            per_batch: BTreeMap::new(),
        }
    }

    /// Table holding one value per filter, as if from a single batch.
    pub fn from_means(
        layer_id: usize,
        values: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Self> {
        let mut t = Self::new(layer_id);
        for (f, v) in values {
            t.accumulate(f, 0, v)?;
        }
        Ok(t)
    }

    pub fn accumulate(&mut self, filter_id: usize, batch_id: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "relevance of filter {filter_id} on batch {batch_id} is {value}"
            )));
        }
        match self.per_batch.entry((filter_id, batch_id)) {
            std::collections::btree_map::Entry::Occupied(_) => Err(Error::state(format!(
                "layer {}: relevance of filter {filter_id} on batch {batch_id} already recorded",
                self.layer_id
            ))),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(value);
                Ok(())
            }
        }
    }

    pub fn get(&self, filter_id: usize, batch_id: usize) -> Option<f64> {
        self.per_batch.get(&(filter_id, batch_id)).copied()
    }

    pub fn per_batch(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.per_batch
    }

    pub fn is_empty(&self) -> bool {
        self.per_batch.is_empty()
    }

    /// Number of distinct batches aggregated.
    pub fn batches(&self) -> usize {
        let mut ids: Vec<usize> = self.per_batch.keys().map(|&(_, b)| b).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn filters(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.per_batch.keys().map(|&(f, _)| f).collect();
        ids.dedup();
        ids
    }

    /// Mean relevance of one filter over its batches.
    pub fn mean(&self, filter_id: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .per_batch
            .range((filter_id, 0)..=(filter_id, usize::MAX))
            .map(|(_, &v)| v)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean relevance per filter.
    pub fn per_filter(&self) -> BTreeMap<usize, f64> {
        self.filters()
            .into_iter()
            .map(|f| (f, self.mean(f).expect("listed filters have entries")))
            .collect()
    }
}
