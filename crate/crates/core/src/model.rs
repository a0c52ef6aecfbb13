//! Meta-path-structured GNN for node classification.
//!
//! One tower per meta-path: a path `[r0, r1, ..., r_{L-1}]` (read from the
//! classified node outward) becomes `L` message-passing layers applied in
//! reverse relation order, so information entering layer 1 flows along
//! `r_{L-1}` and the final layer aggregates over `r0` into the classified
//! node. Each layer combines a self transform with a mean aggregation over
//! the layer's relation and applies ReLU; tower outputs are concatenated
//! and fed to a linear softmax head. Loss is computed at labelled nodes
//! only. A plain relational GCN forward pass is included as the baseline
//! encoder these towers specialise.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HetGraph, LabeledSplit, MetaPath, NodeId, Partition, RelationId};
use crate::nn::{
    self, derive_seed, Activation, AdamState, GradReport, Matrix, Param,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation macro-F1
    /// improvement; ignored when the validation split is empty.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            hidden: 64,
            lr: 0.01,
            epochs: 300,
            patience: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (best validation macro-F1); the
    /// last epoch when there is no validation split.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_macro: f64,
    pub accuracy: f64,
    pub n: usize,
}

struct TowerLayer {
    w_self: usize,
    w_neigh: usize,
}

struct Layout {
    towers: Vec<Vec<TowerLayer>>,
    head_w: usize,
    head_b: usize,
}

pub struct MpGnn {
    paths: Vec<MetaPath>,
    feature_dim: usize,
    num_classes: usize,
    cfg: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

struct LayerCache {
    agg: Matrix,
    z: Matrix,
    h_out: Matrix,
}

struct ForwardCache {
    h0: Matrix,
    towers: Vec<Vec<LayerCache>>,
    concat: Matrix,
    logits: Matrix,
}

/// Mean of neighbour columns per node over relation `r`; nodes without
/// `r`-neighbours get a zero column.
fn neighbor_mean(g: &HetGraph, r: RelationId, h: &Matrix) -> Matrix {
    let n = g.num_nodes();
    debug_assert_eq!(h.cols, n);
    let mut out = Matrix::zeros(h.rows, n);
    for i in 0..n {
        let neigh = g.neighbors(NodeId(i as u32), r);
        if neigh.is_empty() {
            continue;
        }
        let inv = 1.0 / neigh.len() as f64;
        for d in 0..h.rows {
            let hrow = h.row(d);
            let mut acc = 0.0;
            for &j in neigh {
                acc += hrow[j.idx()];
            }
            out.row_mut(d)[i] = acc * inv;
        }
    }
    out
}

/// Adjoint of [`neighbor_mean`]: routes each node's output gradient back
/// to its neighbours, scaled by the same 1/degree.
fn neighbor_mean_backward(g: &HetGraph, r: RelationId, d_out: &Matrix) -> Matrix {
    let n = g.num_nodes();
    let mut d_in = Matrix::zeros(d_out.rows, n);
    for i in 0..n {
        let neigh = g.neighbors(NodeId(i as u32), r);
        if neigh.is_empty() {
            continue;
        }
        let inv = 1.0 / neigh.len() as f64;
        for d in 0..d_out.rows {
            let gv = d_out.row(d)[i] * inv;
            if gv == 0.0 {
                continue;
            }
            let row = d_in.row_mut(d);
            for &j in neigh {
                row[j.idx()] += gv;
            }
        }
    }
    d_in
}

fn gather_cols(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows, idx.len());
    for d in 0..m.rows {
        let src = m.row(d);
        let dst = out.row_mut(d);
        for (k, &i) in idx.iter().enumerate() {
            dst[k] = src[i];
        }
    }
    out
}

fn scatter_cols(rows: usize, cols: usize, idx: &[usize], src: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    for d in 0..rows {
        let dst = out.row_mut(d);
        let s = src.row(d);
        for (k, &i) in idx.iter().enumerate() {
            dst[i] += s[k];
        }
    }
    out
}

/// Features as a `d x n` matrix (columns are nodes).
fn feature_columns(g: &HetGraph) -> Matrix {
    let n = g.num_nodes();
    let d = g.feature_dim();
    let mut h0 = Matrix::zeros(d, n);
    for i in 0..n {
        for (k, &v) in g.features_of(NodeId(i as u32)).iter().enumerate() {
            h0.row_mut(k)[i] = v;
        }
    }
    h0
}

fn argmax_column(m: &Matrix, col: usize) -> u32 {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for r in 0..m.rows {
        let v = m.row(r)[col];
        // Strict greater keeps the smallest class on ties.
        if v > best_v {
            best_v = v;
            best = r;
        }
    }
    best as u32
}

impl MpGnn {
    pub fn new(
        g: &HetGraph,
        paths: Vec<MetaPath>,
        num_classes: usize,
        cfg: ModelConfig,
    ) -> Result<MpGnn> {
        if paths.is_empty() {
            return Err(Error::config("a model needs at least one meta-path"));
        }
        for p in &paths {
            p.validate(g)?;
        }
        if num_classes < 2 {
            return Err(Error::config("classification needs at least two classes"));
        }
        if cfg.hidden == 0 {
            return Err(Error::config("hidden dimension must be positive"));
        }

        let d = g.feature_dim();
        let hidden = cfg.hidden;
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6d6f64656c]));
        let mut params = Vec::new();
        let mut towers = Vec::with_capacity(paths.len());
        for path in &paths {
            let mut layers = Vec::with_capacity(path.len());
            for li in 0..path.len() {
                let in_dim = if li == 0 { d } else { hidden };
                let w_self = params.len();
                params.push(Param::new(Matrix::glorot(hidden, in_dim, &mut rng)));
                let w_neigh = params.len();
                params.push(Param::new(Matrix::glorot(hidden, in_dim, &mut rng)));
                layers.push(TowerLayer { w_self, w_neigh });
            }
            towers.push(layers);
        }
        let head_w = params.len();
        params.push(Param::new(Matrix::glorot(
            num_classes,
            hidden * paths.len(),
            &mut rng,
        )));
        let head_b = params.len();
        params.push(Param::new(Matrix::zeros(num_classes, 1)));

        Ok(MpGnn {
            paths,
            feature_dim: d,
            num_classes,
            cfg,
            params,
            layout: Layout {
                towers,
                head_w,
                head_b,
            },
        })
    }

    pub fn paths(&self) -> &[MetaPath] {
        &self.paths
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    /// Per-layer `(w_self, w_neigh)` weights of one tower, input layer
    /// first; read-only view for inspection and reference checks.
    pub fn tower_weights(&self, tower: usize) -> Vec<(&Matrix, &Matrix)> {
        self.layout.towers[tower]
            .iter()
            .map(|tl| (&self.params[tl.w_self].value, &self.params[tl.w_neigh].value))
            .collect()
    }

    /// Head `(weight, bias)` of the softmax read-out.
    pub fn head_weights(&self) -> (&Matrix, &Matrix) {
        (
            &self.params[self.layout.head_w].value,
            &self.params[self.layout.head_b].value,
        )
    }

    fn forward_full(&self, params: &[Param], g: &HetGraph) -> ForwardCache {
        let n = g.num_nodes();
        let h0 = feature_columns(g);
        let hidden = self.cfg.hidden;

        let mut towers = Vec::with_capacity(self.paths.len());
        let mut concat = Matrix::zeros(hidden * self.paths.len(), n);
        for (t, path) in self.paths.iter().enumerate() {
            let depth = path.len();
            let mut caches: Vec<LayerCache> = Vec::with_capacity(depth);
            for li in 0..depth {
                // Layer li aggregates over the (L-1-li)-th path relation.
                let r = path.relations()[depth - 1 - li];
                let h_in = if li == 0 {
                    &h0
                } else {
                    &caches[li - 1].h_out
                };
                let agg = neighbor_mean(g, r, h_in);
                let tl = &self.layout.towers[t][li];
                let mut z = params[tl.w_self].value.matmul(h_in);
                z.add_assign(&params[tl.w_neigh].value.matmul(&agg));
                let h_out = Activation::Relu.forward(&z);
                caches.push(LayerCache { agg, z, h_out });
            }
            let out = &caches.last().unwrap().h_out;
            for d in 0..hidden {
                concat.row_mut(t * hidden + d).copy_from_slice(out.row(d));
            }
            towers.push(caches);
        }

        let head_w = &params[self.layout.head_w].value;
        let head_b = &params[self.layout.head_b].value;
        let mut logits = head_w.matmul(&concat);
        for c in 0..logits.rows {
            let b = head_b.row(c)[0];
            for v in logits.row_mut(c) {
                *v += b;
            }
        }

        ForwardCache {
            h0,
            towers,
            concat,
            logits,
        }
    }

    /// Loss (and gradients when `with_grad`) of the softmax cross-entropy
    /// over the given labelled columns.
    fn compute(
        &self,
        params: &mut [Param],
        g: &HetGraph,
        idx: &[usize],
        classes: &[u32],
        with_grad: bool,
    ) -> f64 {
        let cache = self.forward_full(params, g);
        let picked = gather_cols(&cache.logits, idx);
        let (loss, d_picked) = nn::softmax_cross_entropy(&picked, classes);
        if !with_grad {
            return loss;
        }
        for p in params.iter_mut() {
            p.zero_grad();
        }
        let d_logits = scatter_cols(cache.logits.rows, cache.logits.cols, idx, &d_picked);

        // Head.
        let hidden = self.cfg.hidden;
        params[self.layout.head_w]
            .grad
            .add_assign(&d_logits.matmul_nt(&cache.concat));
        for c in 0..d_logits.rows {
            params[self.layout.head_b].grad.row_mut(c)[0] += d_logits.row(c).iter().sum::<f64>();
        }
        let d_concat = params[self.layout.head_w].value.matmul_tn(&d_logits);

        // Towers, deepest layer first.
        for (t, path) in self.paths.iter().enumerate() {
            let depth = path.len();
            let caches = &cache.towers[t];
            let mut d_h = Matrix::zeros(hidden, g.num_nodes());
            for d in 0..hidden {
                d_h.row_mut(d).copy_from_slice(d_concat.row(t * hidden + d));
            }
            for li in (0..depth).rev() {
                let r = path.relations()[depth - 1 - li];
                let lc = &caches[li];
                let d_z = Activation::Relu.backward(&lc.z, &d_h);
                let h_in = if li == 0 {
                    &cache.h0
                } else {
                    &caches[li - 1].h_out
                };
                let tl = &self.layout.towers[t][li];
                params[tl.w_self].grad.add_assign(&d_z.matmul_nt(h_in));
                params[tl.w_neigh].grad.add_assign(&d_z.matmul_nt(&lc.agg));
                if li > 0 {
                    let mut d_in = params[tl.w_self].value.matmul_tn(&d_z);
                    let d_agg = params[tl.w_neigh].value.matmul_tn(&d_z);
                    d_in.add_assign(&neighbor_mean_backward(g, r, &d_agg));
                    d_h = d_in;
                }
            }
        }
        loss
    }

    /// Logits for every node, `num_classes x num_nodes`.
    pub fn forward(&self, g: &HetGraph) -> Matrix {
        self.forward_full(&self.params, g).logits
    }

    /// Predicted class per node (ties resolve to the smallest class).
    pub fn predict(&self, g: &HetGraph) -> Vec<u32> {
        let logits = self.forward(g);
        (0..logits.cols).map(|i| argmax_column(&logits, i)).collect()
    }

    /// Cross-entropy at the given labelled nodes, leaving gradients in the
    /// model parameters.
    pub fn loss_and_grad(&mut self, g: &HetGraph, labels: &[(NodeId, u32)]) -> f64 {
        let idx: Vec<usize> = labels.iter().map(|&(n, _)| n.idx()).collect();
        let classes: Vec<u32> = labels.iter().map(|&(_, c)| c).collect();
        let mut params = std::mem::take(&mut self.params);
        let loss = self.compute(&mut params, g, &idx, &classes, true);
        self.params = params;
        loss
    }

    /// Central-difference check of the full loss gradient; small graphs only.
    pub fn grad_check(&mut self, g: &HetGraph, labels: &[(NodeId, u32)], eps: f64) -> GradReport {
        let idx: Vec<usize> = labels.iter().map(|&(n, _)| n.idx()).collect();
        let classes: Vec<u32> = labels.iter().map(|&(_, c)| c).collect();
        let mut params = std::mem::take(&mut self.params);
        let report = nn::grad_check(
            &mut params,
            |p, with_grad| self.compute(p, g, &idx, &classes, with_grad),
            eps,
        );
        self.params = params;
        report
    }

    pub fn train(&mut self, g: &HetGraph, split: &LabeledSplit) -> Result<TrainReport> {
        let mut params = std::mem::take(&mut self.params);
        let out = self.train_inner(&mut params, g, split);
        self.params = params;
        out
    }

    fn train_inner(
        &self,
        params: &mut Vec<Param>,
        g: &HetGraph,
        split: &LabeledSplit,
    ) -> Result<TrainReport> {
        let (train_nodes, train_classes) = split.partition(Partition::Train);
        if train_nodes.is_empty() {
            return Err(Error::data("training split is empty"));
        }
        if split.num_classes() > self.num_classes {
            return Err(Error::data(format!(
                "labels use {} classes but the model has {}",
                split.num_classes(),
                self.num_classes
            )));
        }
        let train_idx: Vec<usize> = train_nodes.iter().map(|n| n.idx()).collect();
        let (val_nodes, val_classes) = split.partition(Partition::Val);

        let mut adam = AdamState::new(params, self.cfg.lr);
        let mut best_val = f64::NEG_INFINITY;
        let mut best_epoch = 0usize;
        let mut best_snapshot: Option<Vec<Matrix>> = None;
        let mut stale = 0usize;
        let mut last_loss = f64::NAN;
        let mut epochs_run = 0usize;

        for epoch in 0..self.cfg.epochs {
            let loss = self.compute(params, g, &train_idx, &train_classes, true);
            if !loss.is_finite() {
                return Err(Error::numeric(
                    "training",
                    format!("loss became {loss} at epoch {epoch}"),
                ));
            }
            adam.step(params);
            last_loss = loss;
            epochs_run = epoch + 1;

            if !val_nodes.is_empty() {
                let cache = self.forward_full(params, g);
                let pred: Vec<u32> = val_nodes
                    .iter()
                    .map(|n| argmax_column(&cache.logits, n.idx()))
                    .collect();
                let f1 = f1_macro(&pred, &val_classes);
                if f1 > best_val {
                    best_val = f1;
                    best_epoch = epoch + 1;
                    best_snapshot = Some(params.iter().map(|p| p.value.clone()).collect());
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.cfg.patience {
                        break;
                    }
                }
            }
            if epoch % 50 == 0 {
                log::debug!("epoch {epoch}: train loss {loss:.6}");
            }
        }

        if let Some(snap) = best_snapshot {
            for (p, v) in params.iter_mut().zip(snap) {
                p.value = v;
            }
        } else {
            best_epoch = epochs_run;
            best_val = f64::NAN;
        }

        Ok(TrainReport {
            epochs_run,
            best_epoch,
            best_val_f1: best_val,
            final_train_loss: last_loss,
        })
    }

    /// Macro-F1 and accuracy at the given labelled nodes.
    pub fn evaluate(&self, g: &HetGraph, nodes: &[NodeId], classes: &[u32]) -> EvalReport {
        let logits = self.forward(g);
        let pred: Vec<u32> = nodes.iter().map(|n| argmax_column(&logits, n.idx())).collect();
        EvalReport {
            f1_macro: f1_macro(&pred, classes),
            accuracy: accuracy(&pred, classes),
            n: nodes.len(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            config: self.cfg.clone(),
            paths: self.paths.iter().map(|p| p.0.clone()).collect(),
            params: self
                .params
                .iter()
                .map(|p| SerMatrix {
                    rows: p.value.rows,
                    cols: p.value.cols,
                    data: p.value.data.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&ckpt)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path, g: &HetGraph) -> Result<MpGnn> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.feature_dim != g.feature_dim() {
            return Err(Error::data(format!(
                "checkpoint expects feature dim {} but the graph has {}",
                ckpt.feature_dim,
                g.feature_dim()
            )));
        }
        let paths: Vec<MetaPath> = ckpt.paths.into_iter().map(MetaPath).collect();
        let mut model = MpGnn::new(g, paths, ckpt.num_classes, ckpt.config)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::data("checkpoint parameter count mismatch"));
        }
        for (p, s) in model.params.iter_mut().zip(ckpt.params) {
            if p.value.rows != s.rows || p.value.cols != s.cols || s.data.len() != s.rows * s.cols {
                return Err(Error::data("checkpoint parameter shape mismatch"));
            }
            p.value = Matrix::from_vec(s.rows, s.cols, s.data);
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct SerMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    feature_dim: usize,
    num_classes: usize,
    config: ModelConfig,
    paths: Vec<Vec<RelationId>>,
    params: Vec<SerMatrix>,
}

/// Macro-averaged F1 over the classes observed in either sequence. A class
/// with zero predicted and zero actual instances is skipped; 0/0 precision
/// or recall counts as 0.
pub fn f1_macro(pred: &[u32], truth: &[u32]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction/truth length mismatch");
    let classes: BTreeSet<u32> = pred.iter().chain(truth).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fnn = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1;
    }
    total / classes.len() as f64
}

pub fn accuracy(pred: &[u32], truth: &[u32]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction/truth length mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}

/// One relational GCN layer's weights: a self transform plus one transform
/// per relation.
pub struct RgcnLayer {
    pub w_self: Matrix,
    pub w_rel: Vec<Matrix>,
}

/// Baseline relational GCN encoder (forward only): each layer computes
/// `relu(W_self h_i + sum_r W_r mean_{j in N_i^r} h_j)` over all relations
/// at once, without any meta-path structure.
pub struct Rgcn {
    pub layers: Vec<RgcnLayer>,
}

impl Rgcn {
    pub fn new(g: &HetGraph, num_layers: usize, hidden: usize, seed: u64) -> Rgcn {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[0x7267636e]));
        let mut layers = Vec::with_capacity(num_layers);
        for li in 0..num_layers {
            let in_dim = if li == 0 { g.feature_dim() } else { hidden };
            layers.push(RgcnLayer {
                w_self: Matrix::glorot(hidden, in_dim, &mut rng),
                w_rel: (0..g.num_relations())
                    .map(|_| Matrix::glorot(hidden, in_dim, &mut rng))
                    .collect(),
            });
        }
        Rgcn { layers }
    }

    /// Node embeddings after all layers, `hidden x num_nodes`.
    pub fn forward(&self, g: &HetGraph) -> Matrix {
        let mut h = feature_columns(g);
        for layer in &self.layers {
            let mut z = layer.w_self.matmul(&h);
            for (ri, w_r) in layer.w_rel.iter().enumerate() {
                let agg = neighbor_mean(g, RelationId(ri as u32), &h);
                z.add_assign(&w_r.matmul(&agg));
            }
            h = Activation::Relu.forward(&z);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn line_graph() -> HetGraph {
        // 0 -r0-> 1 -r0-> 2, one type, feature = id.
        let mut b = GraphBuilder::new(1);
        let t = b.add_type("t");
        let r = b.add_relation("r0");
        for i in 0..3 {
            b.add_node(t, &[i as f64]);
        }
        b.add_edge(NodeId(0), r, NodeId(1));
        b.add_edge(NodeId(1), r, NodeId(2));
        b.build().unwrap()
    }

    #[test]
    fn neighbor_mean_averages_and_zeroes() {
        let g = line_graph();
        let h = feature_columns(&g);
        let m = neighbor_mean(&g, RelationId(0), &h);
        // Node 0 sees node 1 (feature 1), node 1 sees node 2 (feature 2),
        // node 2 has no successors.
        assert_eq!(m.row(0), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn neighbor_mean_backward_is_adjoint() {
        // <A x, y> must equal <x, A^T y> for the linear map.
        let g = line_graph();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let y = Matrix::from_vec(2, 3, vec![0.3, 0.7, -0.1, 1.1, -0.4, 0.9]);
        let ax = neighbor_mean(&g, RelationId(0), &x);
        let aty = neighbor_mean_backward(&g, RelationId(0), &y);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn f1_macro_hand_values() {
        assert_eq!(f1_macro(&[0, 0, 1, 1], &[0, 0, 1, 1]), 1.0);
        // Two classes, each with P = R = 0.5.
        assert!((f1_macro(&[0, 1, 0, 1], &[0, 0, 1, 1]) - 0.5).abs() < 1e-12);
        // Class 1 never predicted nor present: skipped entirely.
        assert_eq!(f1_macro(&[0, 0], &[0, 0]), 1.0);
        // All-majority prediction on a 9:1 imbalance:
        // class 0: P = 0.9, R = 1.0, F1 = 1.8/1.9; class 1: F1 = 0.
        let pred = vec![0u32; 10];
        let mut truth = vec![0u32; 10];
        truth[9] = 1;
        let want = (2.0 * 0.9 / 1.9) / 2.0;
        assert!((f1_macro(&pred, &truth) - want).abs() < 1e-12);
        // Completely disjoint singletons: both classes score 0.
        assert_eq!(f1_macro(&[1], &[0]), 0.0);
    }

    #[test]
    fn accuracy_hand_values() {
        assert_eq!(accuracy(&[1, 1, 0], &[1, 0, 0]), 2.0 / 3.0);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }

    #[test]
    fn predict_breaks_ties_toward_smallest_class() {
        let m = Matrix::from_vec(3, 1, vec![2.0, 2.0, 1.0]);
        assert_eq!(argmax_column(&m, 0), 0);
    }

    #[test]
    fn single_relation_rgcn_equals_uniform_tower() {
        // On a one-relation graph an RGCN layer and a meta-path layer have
        // the same form, so an L-layer RGCN must match the tower for the
        // path [r, r, ..., r] when weights are shared.
        let mut b = GraphBuilder::new(2);
        let t = b.add_type("t");
        let r = b.add_relation("r0");
        for i in 0..5 {
            b.add_node(t, &[i as f64, 1.0 - i as f64 * 0.5]);
        }
        for (s, d) in [(0u32, 1u32), (1, 2), (2, 0), (3, 4), (4, 0), (1, 4)] {
            b.add_edge(NodeId(s), r, NodeId(d));
        }
        let g = b.build().unwrap();

        let depth = 3;
        let rgcn = Rgcn::new(&g, depth, 4, 99);
        let cfg = ModelConfig { hidden: 4, seed: 1, ..ModelConfig::default() };
        let mut model =
            MpGnn::new(&g, vec![MetaPath(vec![RelationId(0); depth])], 2, cfg).unwrap();
        for (li, layer) in rgcn.layers.iter().enumerate() {
            let tl = &model.layout.towers[0][li];
            model.params[tl.w_self].value = layer.w_self.clone();
            model.params[tl.w_neigh].value = layer.w_rel[0].clone();
        }

        let from_rgcn = rgcn.forward(&g);
        let cache = model.forward_full(&model.params, &g);
        let tower_out = &cache.towers[0].last().unwrap().h_out;
        for (a, b) in from_rgcn.data.iter().zip(&tower_out.data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_logits() {
        let g = line_graph();
        let cfg = ModelConfig {
            hidden: 4,
            seed: 7,
            ..ModelConfig::default()
        };
        let model = MpGnn::new(&g, vec![MetaPath(vec![RelationId(0)])], 2, cfg).unwrap();
        let before = model.forward(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = MpGnn::load(&path, &g).unwrap();
        let after = loaded.forward(&g);
        assert_eq!(before.data, after.data);
    }

    #[test]
    fn load_rejects_wrong_feature_dim() {
        let g = line_graph();
        let model = MpGnn::new(
            &g,
            vec![MetaPath(vec![RelationId(0)])],
            2,
            ModelConfig { hidden: 4, ..ModelConfig::default() },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();

        let mut b = GraphBuilder::new(2);
        let t = b.add_type("t");
        b.add_relation("r0");
        b.add_node(t, &[0.0, 0.0]);
        let g2 = b.build().unwrap();
        assert!(MpGnn::load(&path, &g2).is_err());
    }
}
