//! Bagged regression trees over (OEOFF, deceleration, event maximum speed).
//!
//! Classification fits the same trees to 0/1 labels, so leaf values are class
//! frequencies and the squared-error split criterion equals the Gini criterion.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::scenario::GridDims;

pub const N_FEATURES: usize = 3;
pub type Features = [f64; N_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features considered at each split.
    pub mtry: usize,
    pub min_leaf: usize,
    pub holdout_fraction: f64,
    pub min_records: usize,
    /// Upper bound on candidate thresholds per feature.
    pub max_bins: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 6,
            mtry: 2,
            min_leaf: 3,
            holdout_fraction: 0.2,
            min_records: 20,
            max_bins: 64,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0
            || self.mtry == 0
            || self.mtry > N_FEATURES
            || self.min_leaf == 0
            || !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0)
            || self.max_bins < 2
            || self.max_bins > 256
        {
            return Err(Error::Config(format!("invalid forest parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &Features) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Candidate thresholds of one feature and the bin index of every training row.
struct Binned {
    edges: Vec<f64>,
    bins: Vec<u8>,
}

fn bin_feature(values: &[f64], max_bins: usize) -> Binned {
    let mut uniq = values.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let edges: Vec<f64> = if uniq.len() <= max_bins {
        uniq
    } else {
        let mut e: Vec<f64> = (1..=max_bins)
            .map(|k| uniq[(k * uniq.len()) / max_bins - 1])
            .collect();
        e.dedup();
        e
    };
    let bins = values
        .iter()
        .map(|v| edges.partition_point(|e| e < v).min(edges.len() - 1) as u8)
        .collect();
    Binned { edges, bins }
}

struct TreeBuilder<'a> {
    binned: &'a [Binned; N_FEATURES],
    y: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let mean = sum / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let parent_score = sum * sum / n as f64;
        let mut best: Option<(usize, usize, f64)> = None;
        let features = sample(rng, N_FEATURES, self.params.mtry);
        for f in features.iter() {
            let b = &self.binned[f];
            let nb = b.edges.len();
            if nb < 2 {
                continue;
            }
            let mut cnt = vec![0usize; nb];
            let mut s = vec![0.0f64; nb];
            for &r in rows.iter() {
                let k = b.bins[r as usize] as usize;
                cnt[k] += 1;
                s[k] += self.y[r as usize];
            }
            let (mut nl, mut sl) = (0usize, 0.0f64);
            for k in 0..nb - 1 {
                nl += cnt[k];
                sl += s[k];
                let nr = n - nl;
                if nl < self.params.min_leaf || nr < self.params.min_leaf {
                    continue;
                }
                let sr = sum - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent_score;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, k, gain));
                }
            }
        }
        let Some((feature, bin, _)) = best else {
            return id;
        };
        let bins = &self.binned[feature].bins;
        let mut split = 0;
        for i in 0..n {
            if bins[rows[i] as usize] as usize <= bin {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold: self.binned[feature].edges[bin],
            left,
            right,
        };
        id
    }
}

/// Fitted ensemble with its hold-out quality.
#[derive(Debug, Clone)]
pub struct Forest {
    kind: ModelKind,
    trees: Vec<Tree>,
    /// R² (regression) or accuracy minus majority-class rate (classification).
    pub holdout_metric: f64,
    /// Hold-out RMSE; binary outcomes use the per-prediction spread instead.
    pub holdout_rmse: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

impl Forest {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &Features) -> f64 {
        let v = self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64;
        match self.kind {
            ModelKind::Classification => v.clamp(0.0, 1.0),
            ModelKind::Regression => v,
        }
    }

    /// Model is usable when its hold-out metric is not negative.
    pub fn passes_gate(&self) -> bool {
        self.holdout_metric >= 0.0
    }

    /// Spread around a prediction: `sqrt(ŷ(1−ŷ))` for binary outcomes,
    /// the hold-out RMSE otherwise.
    pub fn sigma(&self, prediction: f64) -> f64 {
        match self.kind {
            ModelKind::Classification => {
                let p = prediction.clamp(0.0, 1.0);
                (p * (1.0 - p)).sqrt()
            }
            ModelKind::Regression => self.holdout_rmse,
        }
    }

    /// Predictions for every flat cell of a product grid. Each tree leaf is a
    /// box in index space, so a tree costs one write per cell.
    pub fn predict_grid(&self, g: &GridFeatures) -> Vec<f64> {
        let mut out = vec![0.0; g.dims.n_cells()];
        for t in &self.trees {
            let full = [0..g.dims.n_oeoff, 0..g.dims.n_decel, 0..g.order.len()];
            fill_box(t, 0, full, g, &mut out);
        }
        let k = self.trees.len() as f64;
        for v in &mut out {
            *v /= k;
            if self.kind == ModelKind::Classification {
                *v = v.clamp(0.0, 1.0);
            }
        }
        out
    }
}

/// Feature values of a product grid: OEOFF levels, deceleration levels and one
/// maximum speed per event.
#[derive(Debug, Clone)]
pub struct GridFeatures {
    dims: GridDims,
    oeoff: Vec<f64>,
    decel: Vec<f64>,
    /// Events in ascending order of maximum speed.
    order: Vec<usize>,
    sorted_speed: Vec<f64>,
    max_speed: Vec<f64>,
}

impl GridFeatures {
    pub fn new(dims: GridDims, oeoff: &[f64], decel: &[f64], max_speed: &[f64]) -> Result<Self> {
        if oeoff.len() != dims.n_oeoff || decel.len() != dims.n_decel || max_speed.len() != dims.n_events {
            return Err(Error::Config("grid features do not match the grid shape".into()));
        }
        if oeoff.windows(2).any(|w| w[0] >= w[1]) || decel.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid levels must be strictly ascending".into()));
        }
        let mut order: Vec<usize> = (0..dims.n_events).collect();
        order.sort_by(|&a, &b| max_speed[a].total_cmp(&max_speed[b]).then(a.cmp(&b)));
        Ok(Self {
            dims,
            oeoff: oeoff.to_vec(),
            decel: decel.to_vec(),
            sorted_speed: order.iter().map(|&e| max_speed[e]).collect(),
            order,
            max_speed: max_speed.to_vec(),
        })
    }

    pub fn features(&self, flat: usize) -> Features {
        let c = self.dims.cell(flat);
        [self.oeoff[c.oeoff_idx], self.decel[c.decel_idx], self.max_speed[c.event]]
    }

    fn axis(&self, feature: usize) -> &[f64] {
        match feature {
            0 => &self.oeoff,
            1 => &self.decel,
            _ => &self.sorted_speed,
        }
    }
}

fn fill_box(
    tree: &Tree,
    node: usize,
    ranges: [std::ops::Range<usize>; N_FEATURES],
    g: &GridFeatures,
    out: &mut [f64],
) {
    if ranges.iter().any(|r| r.is_empty()) {
        return;
    }
    match tree.nodes[node] {
        Node::Leaf(v) => {
            let [o, d, e] = ranges;
            for &event in &g.order[e] {
                for oi in o.clone() {
                    let base = (event * g.dims.n_oeoff + oi) * g.dims.n_decel;
                    for slot in &mut out[base + d.start..base + d.end] {
                        *slot += v;
                    }
                }
            }
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let r = ranges[feature].clone();
            let axis = &g.axis(feature)[r.clone()];
            let cut = r.start + axis.partition_point(|&x| x <= threshold);
            let mut lo = ranges.clone();
            lo[feature] = r.start..cut;
            let mut hi = ranges;
            hi[feature] = cut..r.end;
            fill_box(tree, left, lo, g, out);
            fill_box(tree, right, hi, g, out);
        }
    }
}

fn holdout_metric(kind: ModelKind, y: &[f64], pred: &[f64], train_y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    let rmse = (sse / n).sqrt();
    let metric = match kind {
        ModelKind::Regression => {
            let mean = y.iter().sum::<f64>() / n;
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            if sst > 0.0 {
                1.0 - sse / sst
            } else {
                0.0
            }
        }
        ModelKind::Classification => {
            let correct = y
                .iter()
                .zip(pred)
                .filter(|(a, p)| (**a >= 0.5) == (**p >= 0.5))
                .count() as f64;
            let train_pos = train_y.iter().filter(|v| **v >= 0.5).count() as f64 / train_y.len() as f64;
            let majority_positive = train_pos >= 0.5;
            let majority = y.iter().filter(|v| (**v >= 0.5) == majority_positive).count() as f64;
            (correct - majority) / n
        }
    };
    (metric, rmse)
}

/// Fits a forest on a seeded 80/20 split of `(x, y)`.
pub fn fit(
    x: &[Features],
    y: &[f64],
    kind: ModelKind,
    params: &ForestParams,
    seed: u64,
    exec: Execution,
) -> Result<Forest> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::Config("features and labels differ in length".into()));
    }
    if x.len() < params.min_records.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} records, need {}",
            x.len(),
            params.min_records
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("non-finite label".into()));
    }
    if kind == ModelKind::Classification {
        let pos = y.iter().filter(|v| **v >= 0.5).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::InsufficientData("single-class labels".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let n_hold = ((n as f64 * params.holdout_fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let (hold_idx, train_idx) = perm.split_at(n_hold);
    let train_x: Vec<Features> = train_idx.iter().map(|&i| x[i]).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();

    let binned: [Binned; N_FEATURES] = std::array::from_fn(|f| {
        let col: Vec<f64> = train_x.iter().map(|r| r[f]).collect();
        bin_feature(&col, params.max_bins)
    });
    let n_train = train_x.len();
    let trees = par::map_indexed(exec, params.n_trees, |t| {
        let mut trng = ChaCha8Rng::seed_from_u64(seed);
        trng.set_stream(t as u64 + 1);
        let mut rows: Vec<u32> = (0..n_train).map(|_| trng.random_range(0..n_train) as u32).collect();
        let mut b = TreeBuilder {
            binned: &binned,
            y: &train_y,
            params,
            nodes: Vec::new(),
        };
        b.build(&mut rows, 0, &mut trng);
        Tree { nodes: b.nodes }
    });

    let mut forest = Forest {
        kind,
        trees,
        holdout_metric: 0.0,
        holdout_rmse: 0.0,
        n_train,
        n_holdout: n_hold,
    };
    let hold_y: Vec<f64> = hold_idx.iter().map(|&i| y[i]).collect();
    let hold_pred: Vec<f64> = hold_idx.iter().map(|&i| forest.predict(&x[i])).collect();
    let (metric, rmse) = holdout_metric(kind, &hold_y, &hold_pred, &train_y);
    forest.holdout_metric = metric;
    forest.holdout_rmse = rmse;
    Ok(forest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, seed: u64) -> (Vec<Features>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Features> = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..6.6),
                    rng.random_range(3.75..10.75),
                    rng.random_range(40.0..100.0),
                ]
            })
            .collect();
        let y = x.iter().map(|r| f64::from(r[0] > 2.0)).collect();
        (x, y)
    }

    #[test]
    fn constant_regression() {
        let (x, _) = synthetic(50, 1);
        let y = vec![3.5; 50];
        let f = fit(&x, &y, ModelKind::Regression, &ForestParams::default(), 7, Execution::Sequential).unwrap();
        assert!(x.iter().all(|r| (f.predict(r) - 3.5).abs() < 1e-12));
        assert!(f.holdout_rmse < 1e-12);
        assert!(f.passes_gate());
    }

    #[test]
    fn threshold_labels_beat_majority() {
        let (x, y) = synthetic(500, 2);
        let f = fit(&x, &y, ModelKind::Classification, &ForestParams::default(), 3, Execution::Parallel).unwrap();
        assert!(f.holdout_metric > 0.0);
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, v)| (f.predict(r) >= 0.5) == (**v >= 0.5))
            .count();
        assert!(correct as f64 >= 0.9 * x.len() as f64);
        assert!(x.iter().all(|r| (0.0..=1.0).contains(&f.predict(r))));
    }

    #[test]
    fn guards() {
        let (x, y) = synthetic(19, 3);
        assert!(matches!(
            fit(&x, &y, ModelKind::Regression, &ForestParams::default(), 0, Execution::Sequential),
            Err(Error::InsufficientData(_))
        ));
        let (x, _) = synthetic(100, 3);
        let y = vec![1.0; 100];
        assert!(matches!(
            fit(&x, &y, ModelKind::Classification, &ForestParams::default(), 0, Execution::Sequential),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn deterministic_across_modes() {
        let (x, y) = synthetic(200, 4);
        let p = ForestParams::default();
        let a = fit(&x, &y, ModelKind::Classification, &p, 9, Execution::Sequential).unwrap();
        let b = fit(&x, &y, ModelKind::Classification, &p, 9, Execution::Parallel).unwrap();
        assert!(x.iter().all(|r| a.predict(r) == b.predict(r)));
        assert_eq!(a.holdout_metric, b.holdout_metric);
    }

    #[test]
    fn grid_prediction_matches_pointwise() {
        let dims = GridDims {
            n_events: 3,
            n_oeoff: 7,
            n_decel: 5,
        };
        let oeoff: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let decel: Vec<f64> = (0..5).map(|i| 4.0 + i as f64).collect();
        let speeds = [70.0, 50.0, 90.0];
        let g = GridFeatures::new(dims, &oeoff, &decel, &speeds).unwrap();
        let x: Vec<Features> = (0..dims.n_cells()).map(|f| g.features(f)).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1] + r[2] / 10.0).collect();
        let f = fit(&x, &y, ModelKind::Regression, &ForestParams::default(), 5, Execution::Sequential).unwrap();
        let grid = f.predict_grid(&g);
        for (i, r) in x.iter().enumerate() {
            assert!((grid[i] - f.predict(r)).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_sigma() {
        let (x, y) = synthetic(100, 6);
        let f = fit(&x, &y, ModelKind::Classification, &ForestParams::default(), 1, Execution::Sequential).unwrap();
        assert_eq!(f.sigma(0.5), 0.5);
        assert_eq!(f.sigma(1.0), 0.0);
        assert!((0..=100).all(|i| f.sigma(i as f64 / 100.0) <= 0.5));
    }
}
