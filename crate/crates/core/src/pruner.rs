//! Filter selection (layer-wise ratio and global threshold), structured
//! surgery on conv filters and FLOP/parameter accounting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Layer, NetworkDef};
use crate::relevance::RelevanceTable;

/// Slack subtracted before rounding `r * ratio / 100` up, so products that
/// are integers up to float error do not round past themselves.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSchedule {
    pub layer_id: usize,
    /// Percentage of remaining filters pruned per iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_ratio: Option<f64>,
    /// Fixed number of filters pruned per iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_count: Option<usize>,
    /// Minimum number of filters retained.
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSchedule {
    pub layers: Vec<LayerSchedule>,
    /// Upper bound on pruning iterations.
    pub iterations: usize,
    /// Optional successive per-layer limits. Each stage is pruned to in turn
    /// and its configuration recorded; the last stage replaces `limit`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub limit_stages: Vec<Vec<usize>>,
}

impl PruneSchedule {
    pub fn validate(&self, filter_counts: &[usize]) -> Result<()> {
        if self.layers.len() != filter_counts.len() {
            return Err(Error::config(
                "schedule.layers",
                format!(
                    "{} entries for a network with {} conv layers",
                    self.layers.len(),
                    filter_counts.len()
                ),
            ));
        }
        for (i, entry) in self.layers.iter().enumerate() {
            let field = format!("schedule.layers[{i}]");
            if entry.layer_id != i {
                return Err(Error::config(
                    &field,
                    format!("layer_id {} out of order", entry.layer_id),
                ));
            }
            match (entry.prune_ratio, entry.fixed_count) {
                (Some(r), None) if r > 0.0 && r <= 100.0 => {}
                (Some(r), None) => {
                    return Err(Error::config(
                        &field,
                        format!("prune_ratio {r} outside (0, 100]"),
                    ))
                }
                (None, Some(t)) if t >= 1 => {}
                (None, Some(_)) => {
                    return Err(Error::config(&field, "fixed_count must be at least 1"))
                }
                _ => {
                    return Err(Error::config(
                        &field,
                        "exactly one of prune_ratio and fixed_count is required",
                    ))
                }
            }
            if entry.limit < 1 {
                return Err(Error::config(&field, "limit must be at least 1"));
            }
        }
        for (s, stage) in self.limit_stages.iter().enumerate() {
            let field = format!("schedule.limit_stages[{s}]");
            if stage.len() != self.layers.len() {
                return Err(Error::config(&field, "needs one limit per conv layer"));
            }
            if stage.contains(&0) {
                return Err(Error::config(&field, "limits must be at least 1"));
            }
            if s > 0
                && stage
                    .iter()
                    .zip(&self.limit_stages[s - 1])
                    .any(|(a, b)| a > b)
            {
                return Err(Error::config(&field, "stage limits must not increase"));
            }
        }
        Ok(())
    }

    /// Limit sets pruned to in order. Without stages, the per-layer limits.
    pub fn stages(&self) -> Vec<Vec<usize>> {
        if self.limit_stages.is_empty() {
            vec![self.layers.iter().map(|l| l.limit).collect()]
        } else {
            self.limit_stages.clone()
        }
    }

    pub fn with_limits(&self, limits: &[usize]) -> Self {
        let mut s = self.clone();
        for (entry, &l) in s.layers.iter_mut().zip(limits) {
            entry.limit = l;
        }
        s
    }
}

/// Remaining and pruned original filter ids of one conv layer. Channel `c`
/// of the current network is `remaining[c]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerState {
    pub original: usize,
    pub remaining: Vec<usize>,
    pub pruned: Vec<usize>,
}

impl LayerState {
    pub fn new(filters: usize) -> Self {
        Self {
            original: filters,
            remaining: (0..filters).collect(),
            pruned: Vec::new(),
        }
    }

    pub fn r(&self) -> usize {
        self.remaining.len()
    }

    pub fn p(&self) -> usize {
        self.pruned.len()
    }

    pub fn position(&self, filter_id: usize) -> Option<usize> {
        self.remaining.binary_search(&filter_id).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneState {
    pub layers: Vec<LayerState>,
    /// Completed pruning iterations.
    pub iteration: usize,
}

impl PruneState {
    pub fn new(filter_counts: &[usize]) -> Self {
        Self {
            layers: filter_counts.iter().map(|&n| LayerState::new(n)).collect(),
            iteration: 0,
        }
    }

    pub fn remaining_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerState::r).collect()
    }

    /// Partition invariants: remaining and pruned are sorted, disjoint and
    /// cover the original filters.
    pub fn check(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let strictly_sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
            if !strictly_sorted(&l.remaining) || !strictly_sorted(&l.pruned) {
                return Err(Error::state(format!(
                    "layer {i}: filter sets are not sorted"
                )));
            }
            let all: BTreeSet<usize> = l.remaining.iter().chain(&l.pruned).copied().collect();
            if all.len() != l.original
                || l.r() + l.p() != l.original
                || all.iter().any(|&f| f >= l.original)
            {
                return Err(Error::state(format!(
                    "layer {i}: remaining and pruned do not partition the filters"
                )));
            }
        }
        Ok(())
    }

    /// Whether every layer is at or below its limit.
    pub fn at_limits(&self, limits: &[usize]) -> bool {
        self.layers.iter().zip(limits).all(|(l, &lim)| l.r() <= lim)
    }

    /// Moves `filter_ids` of layer `layer` from remaining to pruned.
    pub fn prune(&mut self, layer: usize, filter_ids: &[usize]) -> Result<()> {
        let l = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::invalid(format!("no conv layer {layer}")))?;
        let drop: BTreeSet<usize> = filter_ids.iter().copied().collect();
        if drop.len() != filter_ids.len() {
            return Err(Error::invalid(format!(
                "layer {layer}: duplicate filter ids in selection"
            )));
        }
        if let Some(f) = drop.iter().find(|f| l.position(**f).is_none()) {
            return Err(Error::invalid(format!(
                "layer {layer}: filter {f} is not remaining"
            )));
        }
        l.remaining.retain(|f| !drop.contains(f));
        l.pruned.extend(drop);
        l.pruned.sort_unstable();
        Ok(())
    }
}

fn ranked(table: &RelevanceTable, remaining: &[usize]) -> Result<Vec<(usize, f64)>> {
    let mut scored = remaining
        .iter()
        .map(|&f| {
            table.mean(f).map(|v| (f, v)).ok_or_else(|| {
                Error::state(format!(
                    "layer {}: no relevance recorded for remaining filter {f}",
                    table.layer_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Number of filters a layer-wise iteration removes from a layer with `r`
/// remaining filters.
pub fn layer_prune_count(r: usize, entry: &LayerSchedule) -> usize {
    if r <= entry.limit {
        return 0;
    }
    let t = match (entry.fixed_count, entry.prune_ratio) {
        (Some(t), _) => t,
        (None, Some(ratio)) => (r as f64 * ratio / 100.0 - CEIL_SLACK).ceil().max(0.0) as usize,
        (None, None) => 0,
    };
    t.min(r - entry.limit)
}

/// Lowest-relevance filters of one layer, ties broken by ascending id.
/// Returned in ascending relevance order.
pub fn select_layer(
    table: &RelevanceTable,
    state: &LayerState,
    entry: &LayerSchedule,
) -> Result<Vec<usize>> {
    let t = layer_prune_count(state.r(), entry);
    if t == 0 {
        return Ok(Vec::new());
    }
    Ok(ranked(table, &state.remaining)?
        .into_iter()
        .take(t)
        .map(|(f, _)| f)
        .collect())
}

/// Global threshold selection: the threshold is the largest of the lowest
/// `t_pct` percent of pooled relevance values; filters at or below it are
/// pruned, keeping at least `max(limit, 1)` per layer (lowest first).
pub fn select_global(
    tables: &[RelevanceTable],
    state: &PruneState,
    t_pct: f64,
    limits: &[usize],
) -> Result<Vec<Vec<usize>>> {
    if !(t_pct > 0.0 && t_pct < 100.0) {
        return Err(Error::invalid(format!(
            "global threshold percentage {t_pct} outside (0, 100)"
        )));
    }
    if tables.len() != state.layers.len() || limits.len() != state.layers.len() {
        return Err(Error::invalid(
            "need one table and one limit per conv layer",
        ));
    }
    let per_layer: Vec<Vec<(usize, f64)>> = tables
        .iter()
        .zip(&state.layers)
        .map(|(t, l)| ranked(t, &l.remaining))
        .collect::<Result<_>>()?;
    let mut pooled: Vec<f64> = per_layer.iter().flatten().map(|&(_, v)| v).collect();
    if pooled.is_empty() {
        return Err(Error::state("no remaining filters to rank"));
    }
    pooled.sort_by(f64::total_cmp);
    let k = (pooled.len() as f64 * t_pct / 100.0 + CEIL_SLACK).floor() as usize;
    if k == 0 {
        return Ok(vec![Vec::new(); tables.len()]);
    }
    let threshold = pooled[k - 1];
    Ok(per_layer
        .iter()
        .zip(&state.layers)
        .zip(limits)
        .map(|((scored, l), &limit)| {
            let room = l.r().saturating_sub(limit.max(1));
            scored
                .iter()
                .take_while(|&&(_, v)| v <= threshold)
                .take(room)
                .map(|&(f, _)| f)
                .collect()
        })
        .collect())
}

fn check_drop(drop: &[usize], channels: usize, conv_id: usize) -> Result<BTreeSet<usize>> {
    let set: BTreeSet<usize> = drop.iter().copied().collect();
    if set.len() != drop.len() {
        return Err(Error::invalid(format!(
            "conv {conv_id}: duplicate channels in selection"
        )));
    }
    if let Some(&c) = set.iter().find(|&&c| c >= channels) {
        return Err(Error::invalid(format!(
            "conv {conv_id}: channel {c} does not exist"
        )));
    }
    if set.len() >= channels {
        return Err(Error::invalid(format!(
            "conv {conv_id}: removing {} of {channels} channels would empty the layer",
            set.len()
        )));
    }
    Ok(set)
}

/// Removes conv output channels and the matching inputs of their consumer.
/// `drop[conv_id]` lists channel positions in the current network.
///
/// A consumer is the next conv layer (input-channel slices) or the first fc
/// layer after a flatten, where channel `j` owns the flattened block
/// `j*h*w .. (j+1)*h*w`.
pub fn apply_surgery(net: &NetworkDef, drop: &[Vec<usize>]) -> Result<NetworkDef> {
    let positions = net.conv_positions();
    if drop.len() > positions.len() {
        return Err(Error::invalid(format!(
            "{} selections for {} conv layers",
            drop.len(),
            positions.len()
        )));
    }
    let shapes = net.shapes()?;
    let mut out = net.clone();
    for (conv_id, channels) in drop.iter().enumerate() {
        if channels.is_empty() {
            continue;
        }
        let pos = positions[conv_id];
        let Layer::Conv(conv) = &mut out.layers[pos] else {
            unreachable!()
        };
        let set = check_drop(channels, conv.out_channels, conv_id)?;
        let keep: Vec<usize> = (0..conv.out_channels)
            .filter(|c| !set.contains(c))
            .collect();
        let fl = conv.filter_len();
        conv.weight = keep
            .iter()
            .flat_map(|&c| conv.weight[c * fl..(c + 1) * fl].to_vec())
            .collect();
        conv.bias = keep.iter().map(|&c| conv.bias[c]).collect();
        conv.out_channels = keep.len();

        let mut spatial = shapes[pos + 1].height * shapes[pos + 1].width;
        let mut consumer = None;
        for next in pos + 1..out.layers.len() {
            match &out.layers[next] {
                Layer::Relu | Layer::Flatten => {}
                Layer::MaxPool { .. } => spatial = shapes[next + 1].height * shapes[next + 1].width,
                Layer::Conv(_) | Layer::Linear(_) => {
                    consumer = Some(next);
                    break;
                }
            }
        }
        match consumer.map(|c| &mut out.layers[c]) {
            Some(Layer::Conv(next)) => {
                let kk = next.kernel * next.kernel;
                let cin = next.in_channels;
                let mut w = Vec::with_capacity(next.out_channels * keep.len() * kk);
                for f in 0..next.out_channels {
                    for &c in &keep {
                        let start = (f * cin + c) * kk;
                        w.extend_from_slice(&next.weight[start..start + kk]);
                    }
                }
                next.weight = w;
                next.in_channels = keep.len();
            }
            Some(Layer::Linear(fc)) => {
                let fin = fc.in_features;
                let mut w = Vec::with_capacity(fc.out_features * keep.len() * spatial);
                for o in 0..fc.out_features {
                    let row = &fc.weight[o * fin..(o + 1) * fin];
                    for &c in &keep {
                        w.extend_from_slice(&row[c * spatial..(c + 1) * spatial]);
                    }
                }
                fc.weight = w;
                fc.in_features = keep.len() * spatial;
            }
            _ => {}
        }
    }
    out.validate()?;
    Ok(out)
}

/// Keep masks equivalent to `drop`, for a zero-masked forward pass on the
/// unpruned network.
pub fn keep_masks(net: &NetworkDef, drop: &[Vec<usize>]) -> Vec<Option<Vec<bool>>> {
    net.filter_counts()
        .iter()
        .enumerate()
        .map(|(id, &n)| {
            drop.get(id).filter(|d| !d.is_empty()).map(|d| {
                let mut keep = vec![true; n];
                for &c in d {
                    keep[c] = false;
                }
                keep
            })
        })
        .collect()
}

/// Compute and storage cost of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub position: usize,
    pub kind: String,
    /// Multiply-accumulates per sample.
    pub flops: u64,
    /// Weight elements, biases excluded.
    pub params: u64,
    pub biases: u64,
}

/// Cost of a network counting conv and fc layers only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkCost {
    /// Multiply-accumulates per sample, biases excluded.
    pub flops: u64,
    /// Weight elements, biases excluded.
    pub params: u64,
    /// `2 * flops`: separate multiplies and adds.
    pub flops_2x: u64,
    pub params_with_bias: u64,
    pub layers: Vec<LayerCost>,
}

pub fn count_flops_params(net: &NetworkDef) -> Result<NetworkCost> {
    let shapes = net.shapes()?;
    let mut layers = Vec::new();
    for (pos, layer) in net.layers.iter().enumerate() {
        let (flops, params, biases) = match layer {
            Layer::Conv(c) => {
                let out = shapes[pos + 1];
                let params = c.weight.len() as u64;
                (
                    (out.height * out.width) as u64 * params,
                    params,
                    c.bias.len() as u64,
                )
            }
            Layer::Linear(l) => {
                let params = (l.in_features * l.out_features) as u64;
                (params, params, l.bias.len() as u64)
            }
            _ => continue,
        };
        layers.push(LayerCost {
            position: pos,
            kind: layer.kind_name().to_string(),
            flops,
            params,
            biases,
        });
    }
    let flops = layers.iter().map(|l| l.flops).sum();
    let params = layers.iter().map(|l| l.params).sum();
    Ok(NetworkCost {
        flops,
        params,
        flops_2x: 2 * flops,
        params_with_bias: params + layers.iter().map(|l| l.biases).sum::<u64>(),
        layers,
    })
}

/// Percentage of `baseline` removed: `100 * (1 - remaining / baseline)`.
pub fn pruned_pct(remaining: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    100.0 * (1.0 - remaining as f64 / baseline as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SelectionMode {
    Layerwise,
    Global { t: f64 },
}

/// What one pruning iteration removed from one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub layer_id: usize,
    /// Original filter ids, lowest relevance first.
    pub pruned: Vec<usize>,
    pub relevance: Vec<f64>,
    /// Filters remaining after the iteration.
    pub r: usize,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub net: NetworkDef,
    pub state: PruneState,
    pub selections: Vec<LayerSelection>,
    /// Channel positions removed, per conv layer, in the input network.
    pub dropped_channels: Vec<Vec<usize>>,
}

impl IterationOutcome {
    pub fn pruned_any(&self) -> bool {
        self.selections.iter().any(|s| !s.pruned.is_empty())
    }
}

/// Selects filters in every layer and applies the surgery.
pub fn prune_iteration(
    net: &NetworkDef,
    schedule: &PruneSchedule,
    state: &PruneState,
    tables: &[RelevanceTable],
    mode: SelectionMode,
) -> Result<IterationOutcome> {
    let counts = net.filter_counts();
    if counts != state.remaining_counts() {
        return Err(Error::state(format!(
            "network filter counts {counts:?} do not match prune state {:?}",
            state.remaining_counts()
        )));
    }
    schedule.validate(&state.layers.iter().map(|l| l.original).collect::<Vec<_>>())?;
    let limits: Vec<usize> = schedule.layers.iter().map(|l| l.limit).collect();
    let picks: Vec<Vec<usize>> = match mode {
        SelectionMode::Layerwise => state
            .layers
            .iter()
            .zip(&schedule.layers)
            .enumerate()
            .map(|(i, (l, entry))| {
                if l.r() <= entry.limit {
                    return Ok(Vec::new());
                }
                let table = tables
                    .get(i)
                    .ok_or_else(|| Error::state(format!("no relevance table for layer {i}")))?;
                select_layer(table, l, entry)
            })
            .collect::<Result<_>>()?,
        SelectionMode::Global { t } => select_global(tables, state, t, &limits)?,
    };
    let mut next = state.clone();
    let mut selections = Vec::with_capacity(picks.len());
    let mut dropped = Vec::with_capacity(picks.len());
    for (i, pick) in picks.iter().enumerate() {
        let positions: Vec<usize> = pick
            .iter()
            .map(|&f| {
                state.layers[i]
                    .position(f)
                    .expect("selected filters are remaining")
            })
            .collect();
        next.prune(i, pick)?;
        selections.push(LayerSelection {
            layer_id: i,
            pruned: pick.clone(),
            relevance: pick
                .iter()
                .map(|&f| tables[i].mean(f).unwrap_or(f64::NAN))
                .collect(),
            r: next.layers[i].r(),
        });
        dropped.push(positions);
    }
    next.check()?;
    next.iteration += 1;
    let pruned_net = apply_surgery(net, &dropped)?;
    Ok(IterationOutcome {
        net: pruned_net,
        state: next,
        selections,
        dropped_channels: dropped,
    })
}

/// One line of the prune report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub iteration: usize,
    pub layer_id: usize,
    pub pruned: Vec<usize>,
    pub relevance: Vec<f64>,
    pub r: usize,
    pub flops: u64,
    pub params: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{build_lenet5, build_lenet5_with};

    fn ratio(layer_id: usize, pct: f64, limit: usize) -> LayerSchedule {
        LayerSchedule {
            layer_id,
            prune_ratio: Some(pct),
            fixed_count: None,
            limit,
        }
    }

    #[test]
    fn ratio_count_rounds_up_and_clips() {
        assert_eq!(layer_prune_count(50, &ratio(0, 12.0, 5)), 6);
        assert_eq!(layer_prune_count(20, &ratio(0, 4.0, 4)), 1);
        assert_eq!(layer_prune_count(25, &ratio(0, 4.0, 4)), 1);
        assert_eq!(layer_prune_count(6, &ratio(0, 12.0, 5)), 1);
        assert_eq!(layer_prune_count(5, &ratio(0, 12.0, 5)), 0);
        assert_eq!(layer_prune_count(3, &ratio(0, 12.0, 5)), 0);
    }

    #[test]
    fn select_layer_takes_lowest_with_id_ties() {
        let table =
            RelevanceTable::from_means(0, [(0, 0.5), (1, 0.1), (2, 0.3), (3, 0.1), (4, 0.9)])
                .unwrap();
        let state = LayerState::new(5);
        let entry = LayerSchedule {
            layer_id: 0,
            prune_ratio: None,
            fixed_count: Some(3),
            limit: 1,
        };
        assert_eq!(select_layer(&table, &state, &entry).unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn select_layer_at_limit_is_empty() {
        let table = RelevanceTable::new(0);
        let state = LayerState::new(4);
        assert!(select_layer(&table, &state, &ratio(0, 50.0, 4))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn missing_relevance_is_a_state_error() {
        let table = RelevanceTable::from_means(0, [(0, 0.5)]).unwrap();
        let state = LayerState::new(3);
        assert!(matches!(
            select_layer(&table, &state, &ratio(0, 50.0, 1)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn global_threshold_rule() {
        let t0 = RelevanceTable::from_means(0, [(0, 0.1), (1, 0.2), (2, 0.9)]).unwrap();
        let t1 = RelevanceTable::from_means(1, [(0, 0.15), (1, 0.8), (2, 0.7), (3, 0.05)]).unwrap();
        let state = PruneState::new(&[3, 4]);
        // 7 values, lowest 40% = 2 values {0.05, 0.1}: threshold 0.1
        let sel = select_global(&[t0.clone(), t1.clone()], &state, 40.0, &[1, 1]).unwrap();
        assert_eq!(sel, vec![vec![0], vec![3]]);
        // lowest 10% of 7 is empty
        let sel = select_global(&[t0, t1], &state, 10.0, &[1, 1]).unwrap();
        assert_eq!(sel, vec![Vec::<usize>::new(), vec![]]);
    }

    #[test]
    fn global_equal_values_keep_one_per_layer() {
        let t0 = RelevanceTable::from_means(0, [(0, 1.0), (1, 1.0)]).unwrap();
        let t1 = RelevanceTable::from_means(1, [(0, 1.0), (1, 1.0), (2, 1.0)]).unwrap();
        let state = PruneState::new(&[2, 3]);
        let sel = select_global(&[t0, t1], &state, 50.0, &[1, 1]).unwrap();
        assert_eq!(sel, vec![vec![0], vec![0, 1]]);
    }

    #[test]
    fn flop_counts_on_unit_configs() {
        use crate::nnet::{Conv2d, Linear, Shape};
        let fc = NetworkDef::new(
            Shape::new(800, 1, 1),
            vec![Layer::Linear(Linear::zeros(800, 500))],
        )
        .unwrap();
        let c = count_flops_params(&fc).unwrap();
        assert_eq!((c.flops, c.params), (400_000, 400_000));
        let conv = NetworkDef::new(
            Shape::new(1, 28, 28),
            vec![Layer::Conv(Conv2d::zeros(1, 2, 5))],
        )
        .unwrap();
        assert_eq!(count_flops_params(&conv).unwrap().flops, 28_800);
        let lenet = count_flops_params(&build_lenet5()).unwrap();
        assert_eq!(lenet.flops, 288_000 + 1_600_000 + 400_000 + 5_000);
        assert_eq!(lenet.params, 500 + 25_000 + 400_000 + 5_000);
        assert_eq!(lenet.params_with_bias, lenet.params + 20 + 50 + 500 + 10);
    }

    #[test]
    fn empty_surgery_is_identity() {
        let mut net = build_lenet5();
        net.init_kaiming(1);
        assert_eq!(apply_surgery(&net, &[vec![], vec![]]).unwrap(), net);
    }

    #[test]
    fn surgery_shapes_and_errors() {
        let mut net = build_lenet5();
        net.init_kaiming(2);
        let out = apply_surgery(&net, &[vec![0, 5], vec![1, 2, 49]]).unwrap();
        assert_eq!(out.filter_counts(), vec![18, 47]);
        assert_eq!(out, {
            let mut reference = build_lenet5_with(18, 47);
            reference.layers = out.layers.clone();
            reference
        });
        assert!(apply_surgery(&net, &[(0..20).collect(), vec![]]).is_err());
        assert!(apply_surgery(&net, &[vec![20], vec![]]).is_err());
        assert!(apply_surgery(&net, &[vec![1, 1], vec![]]).is_err());
    }

    #[test]
    fn iteration_updates_state() {
        let mut net = build_lenet5();
        net.init_kaiming(3);
        let schedule = PruneSchedule {
            layers: vec![ratio(0, 4.0, 4), ratio(1, 12.0, 5)],
            iterations: 30,
            limit_stages: vec![],
        };
        let state = PruneState::new(&[20, 50]);
        let tables = vec![
            RelevanceTable::from_means(0, (0..20).map(|f| (f, (f * 7 % 20) as f64))).unwrap(),
            RelevanceTable::from_means(1, (0..50).map(|f| (f, (f * 13 % 50) as f64))).unwrap(),
        ];
        let out =
            prune_iteration(&net, &schedule, &state, &tables, SelectionMode::Layerwise).unwrap();
        assert_eq!(out.state.remaining_counts(), vec![19, 44]);
        assert_eq!(out.net.filter_counts(), vec![19, 44]);
        assert_eq!(out.selections[0].pruned, vec![0]);
        assert_eq!(out.state.iteration, 1);
        let at_limit = PruneState {
            layers: vec![LayerState::new(4), LayerState::new(5)],
            iteration: 0,
        };
        let small = build_lenet5_with(4, 5);
        let out =
            prune_iteration(&small, &schedule, &at_limit, &[], SelectionMode::Layerwise).unwrap();
        assert!(!out.pruned_any());
        assert_eq!(out.net, small);
    }

    #[test]
    fn schedule_validation() {
        let good = PruneSchedule {
            layers: vec![ratio(0, 4.0, 4), ratio(1, 12.0, 5)],
            iterations: 10,
            limit_stages: vec![vec![4, 5], vec![2, 3]],
        };
        assert!(good.validate(&[20, 50]).is_ok());
        let mut bad = good.clone();
        bad.layers[0].fixed_count = Some(2);
        assert!(bad.validate(&[20, 50]).is_err());
        let mut bad = good.clone();
        bad.layers[1].prune_ratio = Some(0.0);
        assert!(bad.validate(&[20, 50]).is_err());
        let mut bad = good.clone();
        bad.limit_stages = vec![vec![2, 3], vec![4, 5]];
        assert!(bad.validate(&[20, 50]).is_err());
        assert!(good.validate(&[20]).is_err());
    }
}
