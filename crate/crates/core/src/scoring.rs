//! Relation scoring and target evolution.
//!
//! A candidate relation `r` is scored by how well a prediction of the form
//! `theta . h(i) * max_{j in N_i^r} w_j` can reproduce the current targets,
//! with `theta` a linear read-out of the target node's features (plus a
//! constant bias input) and `w` learned weights in `(0, 1)` on the nodes
//! reached through `r`. The score is the minimum mean squared error found
//! across `restarts` seeded Adam runs; lower is better.
//!
//! Targets start as labelled nodes. After a relation is chosen, positive
//! targets are expanded into multi-instance bags of their `r`-neighbours
//! (dropping neighbours that are also reached from a negative), negatives
//! contribute their neighbours as singleton bags, and at deeper hops bag
//! members that realised positive predictions are relabelled into hard
//! node targets before the next expansion. Bag rows reuse the same
//! machinery with an extra outer max over members.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HetGraph, NodeId, NodeTypeId, RelationId};
use crate::nn::{derive_seed, logit, masked_max, sigmoid, sigmoid_grad, AdamState, Matrix, Param};

/// A multi-instance bag: `members` collectively carry the label of the
/// labelled node `origin` they were expanded from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    pub origin: NodeId,
    /// Sorted ascending, no duplicates.
    pub members: Vec<NodeId>,
}

/// Scoring targets: node-level on the first hop, bag-level afterwards.
/// Labels are binary; multi-class tasks binarise one-vs-rest upstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Nodes(Vec<(NodeId, bool)>),
    Bags(Vec<(Bag, bool)>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Nodes(v) => v.len(),
            Target::Bags(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_positive(&self) -> usize {
        match self {
            Target::Nodes(v) => v.iter().filter(|&&(_, y)| y).count(),
            Target::Bags(v) => v.iter().filter(|&&(_, y)| y).count(),
        }
    }

    /// Node types present at the current frontier (target nodes, or bag
    /// members); used to pre-filter candidate relations.
    pub fn frontier_types(&self, g: &HetGraph) -> BTreeSet<NodeTypeId> {
        let mut types = BTreeSet::new();
        match self {
            Target::Nodes(v) => {
                for &(n, _) in v {
                    types.insert(g.node_type(n));
                }
            }
            Target::Bags(v) => {
                for (bag, _) in v {
                    for &m in &bag.members {
                        types.insert(g.node_type(m));
                    }
                }
            }
        }
        types
    }
}

/// Optimiser protocol for one relation scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Independent restarts; the score is the best restart's loss.
    pub restarts: usize,
    pub lr: f64,
    pub max_steps: usize,
    /// Stop a restart after this many consecutive steps without `tol`
    /// improvement.
    pub patience: usize,
    pub tol: f64,
    /// A positive target's realised prediction must reach this value for
    /// its argmax node to be marked as used.
    pub usage_threshold: f64,
    /// Half-width of the uniform noise added to initial weights.
    pub init_noise: f64,
    /// When false the scorer zeroes node features, leaving only the bias
    /// input (structure-only scoring).
    pub use_features: bool,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> ScoreConfig {
        ScoreConfig {
            restarts: 10,
            lr: 0.05,
            max_steps: 300,
            patience: 20,
            tol: 1e-6,
            usage_threshold: 0.5,
            init_noise: 0.3,
            use_features: true,
            seed: 0,
        }
    }
}

/// Outcome of scoring one relation against one target set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub relation: RelationId,
    /// Minimum loss across restarts; the positive-label fraction when the
    /// relation has no qualifying edges.
    pub score: f64,
    /// Feature read-out of the best restart, length `feature_dim + 1`
    /// (trailing entry is the bias coefficient).
    pub theta: Vec<f64>,
    /// Per candidate node: maximum learned weight across restarts.
    pub weights: Vec<(NodeId, f64)>,
    /// Nodes that realised a positive prediction above the usage threshold
    /// in at least one restart: the argmax neighbour for node targets, the
    /// argmax member for bag targets.
    pub usage_marks: BTreeSet<NodeId>,
}

/// One scoring row: a labelled unit. Node targets are rows with a single
/// member (the node itself); bags carry all members.
struct Row {
    y: f64,
    /// (feature matrix row of the member, candidate indices of its
    /// r-neighbours), sorted by member node id.
    members: Vec<(usize, Vec<usize>)>,
}

struct Problem {
    rows: Vec<Row>,
    /// Candidate nodes carrying weights, sorted ascending.
    candidates: Vec<NodeId>,
    /// Member node per feature row (parallel to `feats` rows).
    member_nodes: Vec<NodeId>,
    /// `num_members x (d + 1)` feature matrix with trailing bias 1.
    feats: Matrix,
    /// A.1 initialisation base per candidate: min label over labelled
    /// predecessors, 0.5 when there is none.
    init_base: Vec<f64>,
    bag_level: bool,
}

/// Candidate nodes for scoring `r`: every `r`-neighbour of a target node or
/// bag member, sorted ascending, deduplicated.
pub fn candidates(g: &HetGraph, r: RelationId, target: &Target) -> Vec<NodeId> {
    let mut set = BTreeSet::new();
    let mut add = |n: NodeId| {
        for &j in g.neighbors(n, r) {
            set.insert(j);
        }
    };
    match target {
        Target::Nodes(v) => v.iter().for_each(|&(n, _)| add(n)),
        Target::Bags(v) => v
            .iter()
            .for_each(|(bag, _)| bag.members.iter().for_each(|&m| add(m))),
    }
    set.into_iter().collect()
}

fn build_problem(g: &HetGraph, r: RelationId, target: &Target, use_features: bool) -> Problem {
    let cands = candidates(g, r, target);
    let cand_index: BTreeMap<NodeId, usize> =
        cands.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    // Labelled units, unified: (label, members).
    let (units, bag_level): (Vec<(f64, Vec<NodeId>)>, bool) = match target {
        Target::Nodes(v) => (
            v.iter()
                .map(|&(n, y)| (if y { 1.0 } else { 0.0 }, vec![n]))
                .collect(),
            false,
        ),
        Target::Bags(v) => (
            v.iter()
                .map(|(bag, y)| (if *y { 1.0 } else { 0.0 }, bag.members.clone()))
                .collect(),
            true,
        ),
    };

    // One feature row per distinct member node.
    let mut member_nodes: Vec<NodeId> = units
        .iter()
        .flat_map(|(_, ms)| ms.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    member_nodes.sort_unstable();
    let member_index: BTreeMap<NodeId, usize> =
        member_nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let d = g.feature_dim();
    let mut feats = Matrix::zeros(member_nodes.len(), d + 1);
    for (i, &n) in member_nodes.iter().enumerate() {
        if use_features {
            feats.row_mut(i)[..d].copy_from_slice(g.features_of(n));
        }
        feats.row_mut(i)[d] = 1.0;
    }

    // A.1 base: per candidate, min label over labelled predecessors
    // (members whose r-neighbourhood contains the candidate).
    let mut init_base = vec![f64::INFINITY; cands.len()];
    let mut member_label: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (y, ms) in &units {
        for &m in ms {
            member_label
                .entry(m)
                .and_modify(|l| *l = l.min(*y))
                .or_insert(*y);
        }
    }
    for (&m, &l) in &member_label {
        for &j in g.neighbors(m, r) {
            let ci = cand_index[&j];
            init_base[ci] = init_base[ci].min(l);
        }
    }
    for b in &mut init_base {
        if !b.is_finite() {
            *b = 0.5;
        }
    }

    let rows = units
        .into_iter()
        .map(|(y, mut ms)| {
            ms.sort_unstable();
            Row {
                y,
                members: ms
                    .into_iter()
                    .map(|m| {
                        let neigh = g
                            .neighbors(m, r)
                            .iter()
                            .map(|j| cand_index[j])
                            .collect::<Vec<_>>();
                        (member_index[&m], neigh)
                    })
                    .collect(),
            }
        })
        .collect();

    Problem {
        rows,
        candidates: cands,
        member_nodes,
        feats,
        init_base,
        bag_level,
    }
}

/// Initial candidate weights per the labelled-predecessor rule: base label
/// (or 0.5) plus uniform noise in `[-noise, noise]`, clamped to
/// `[0.01, 0.99]`. Returned in candidate order (node id ascending).
pub fn init_weights(
    g: &HetGraph,
    r: RelationId,
    target: &Target,
    noise: f64,
    rng: &mut impl Rng,
) -> Vec<(NodeId, f64)> {
    let problem = build_problem(g, r, target, true);
    problem
        .candidates
        .iter()
        .zip(&problem.init_base)
        .map(|(&n, &b)| {
            let eps = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
            (n, (b + eps).clamp(0.01, 0.99))
        })
        .collect()
}

struct RestartOutcome {
    loss: f64,
    theta: Vec<f64>,
    weights: Vec<f64>,
    marks: BTreeSet<NodeId>,
}

/// Forward pass at the given parameters. Returns the per-row predictions
/// plus, per row, the realising (member feature row, inner candidate).
fn forward(
    problem: &Problem,
    theta: &[f64],
    w: &[f64],
) -> (Vec<f64>, Vec<Option<(usize, Option<usize>)>>) {
    let mut preds = Vec::with_capacity(problem.rows.len());
    let mut route = Vec::with_capacity(problem.rows.len());
    for row in &problem.rows {
        let mut best: Option<(f64, usize, Option<usize>)> = None;
        for &(mrow, ref cands) in &row.members {
            let h = problem.feats.row(mrow);
            let dot: f64 = theta.iter().zip(h).map(|(&t, &x)| t * x).sum();
            let (mval, margmax) = masked_max(w, cands);
            let pred = dot * mval;
            // Strict greater keeps the earliest member on ties (members
            // are sorted by node id).
            if best.is_none() || pred > best.unwrap().0 {
                best = Some((pred, mrow, margmax));
            }
        }
        match best {
            Some((p, mrow, margmax)) => {
                preds.push(p);
                route.push(Some((mrow, margmax)));
            }
            None => {
                preds.push(0.0);
                route.push(None);
            }
        }
    }
    (preds, route)
}

fn run_restart(problem: &Problem, cfg: &ScoreConfig, seed: u64) -> RestartOutcome {
    let n_cand = problem.candidates.len();
    let d1 = problem.feats.cols;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut u0 = Vec::with_capacity(n_cand);
    for &b in &problem.init_base {
        let eps = if cfg.init_noise > 0.0 {
            rng.gen_range(-cfg.init_noise..cfg.init_noise)
        } else {
            0.0
        };
        u0.push(logit((b + eps).clamp(0.01, 0.99)));
    }
    let theta0: Vec<f64> = (0..d1).map(|_| rng.gen_range(-0.1..0.1)).collect();

    let mut params = vec![
        Param::new(Matrix::from_vec(1, d1, theta0)),
        Param::new(Matrix::from_vec(1, n_cand.max(1), {
            let mut v = u0.clone();
            v.resize(n_cand.max(1), 0.0);
            v
        })),
    ];
    let mut adam = AdamState::new(&params, cfg.lr);

    let n_rows = problem.rows.len() as f64;
    let mut best_loss = f64::INFINITY;
    let mut best_theta = params[0].value.data.clone();
    let mut best_u = params[1].value.data[..n_cand].to_vec();
    let mut stale = 0usize;

    let mut w = vec![0.0; n_cand];
    for _ in 0..cfg.max_steps {
        let theta = &params[0].value.data;
        let u = &params[1].value.data;
        for (wi, &ui) in w.iter_mut().zip(u.iter()) {
            *wi = sigmoid(ui);
        }
        let (preds, route) = forward(problem, theta, &w);
        let loss = problem
            .rows
            .iter()
            .zip(&preds)
            .map(|(row, &p)| (p - row.y) * (p - row.y))
            .sum::<f64>()
            / n_rows;

        if loss < best_loss - cfg.tol {
            best_loss = loss;
            best_theta.copy_from_slice(theta);
            best_u.copy_from_slice(&u[..n_cand]);
            stale = 0;
        } else {
            if loss < best_loss {
                best_loss = loss;
                best_theta.copy_from_slice(theta);
                best_u.copy_from_slice(&u[..n_cand]);
            }
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }

        // Backward: gradient reaches only the realising member and its
        // argmax candidate.
        params[0].zero_grad();
        params[1].zero_grad();
        {
            let theta_now: Vec<f64> = params[0].value.data.clone();
            let u_now: Vec<f64> = params[1].value.data.clone();
            let (left, right) = params.split_at_mut(1);
            let tgrad = &mut left[0].grad.data;
            let ugrad = &mut right[0].grad.data;
            for ((row, &p), r) in problem.rows.iter().zip(&preds).zip(&route) {
                let dp = 2.0 * (p - row.y) / n_rows;
                if dp == 0.0 {
                    continue;
                }
                if let Some((mrow, margmax)) = r {
                    let h = problem.feats.row(*mrow);
                    if let Some(c) = margmax {
                        let mval = w[*c];
                        for (tg, &x) in tgrad.iter_mut().zip(h) {
                            *tg += dp * mval * x;
                        }
                        let dot: f64 = theta_now.iter().zip(h).map(|(&t, &x)| t * x).sum();
                        ugrad[*c] += dp * dot * sigmoid_grad(u_now[*c]);
                    }
                    // Empty inner set: prediction identically 0, no grads.
                }
            }
        }
        adam.step(&mut params);
    }

    // Usage marks at the best snapshot.
    for (wi, &ui) in w.iter_mut().zip(best_u.iter()) {
        *wi = sigmoid(ui);
    }
    let (preds, route) = forward(problem, &best_theta, &w);
    let mut marks = BTreeSet::new();
    for ((row, &p), r) in problem.rows.iter().zip(&preds).zip(&route) {
        if row.y == 1.0 && p >= cfg.usage_threshold {
            if let Some((mrow, margmax)) = r {
                if problem.bag_level {
                    marks.insert(problem.member_nodes[*mrow]);
                } else if let Some(c) = margmax {
                    marks.insert(problem.candidates[*c]);
                }
            }
        }
    }

    RestartOutcome {
        loss: best_loss,
        theta: best_theta,
        weights: w,
        marks,
    }
}

fn score_target(g: &HetGraph, r: RelationId, target: &Target, cfg: &ScoreConfig) -> Result<ScoreResult> {
    if target.is_empty() {
        return Err(Error::data("cannot score an empty target set"));
    }
    let problem = build_problem(g, r, target, cfg.use_features);
    let pos_fraction = problem.rows.iter().map(|row| row.y).sum::<f64>() / problem.rows.len() as f64;

    // No qualifying edges: every prediction is identically zero, so the
    // loss is the positive-label fraction regardless of parameters.
    if problem.candidates.is_empty() {
        return Ok(ScoreResult {
            relation: r,
            score: pos_fraction,
            theta: vec![0.0; problem.feats.cols],
            weights: Vec::new(),
            usage_marks: BTreeSet::new(),
        });
    }

    let mut best: Option<RestartOutcome> = None;
    let mut max_w = vec![0.0f64; problem.candidates.len()];
    let mut marks = BTreeSet::new();
    for k in 0..cfg.restarts {
        let seed = derive_seed(cfg.seed, &[r.0 as u64, k as u64]);
        let out = run_restart(&problem, cfg, seed);
        for (mw, &wk) in max_w.iter_mut().zip(&out.weights) {
            *mw = mw.max(wk);
        }
        marks.extend(out.marks.iter().copied());
        if best.as_ref().map_or(true, |b| out.loss < b.loss) {
            best = Some(out);
        }
    }
    let best = best.unwrap();
    if !best.loss.is_finite() {
        return Err(Error::numeric(
            format!("scoring relation {r}"),
            format!("loss diverged to {}", best.loss),
        ));
    }

    Ok(ScoreResult {
        relation: r,
        score: best.loss,
        theta: best.theta,
        weights: problem.candidates.iter().copied().zip(max_w).collect(),
        usage_marks: marks,
    })
}

/// Scores relation `r` against node-level targets.
pub fn score_relation_nodes(
    g: &HetGraph,
    r: RelationId,
    targets: &[(NodeId, bool)],
    cfg: &ScoreConfig,
) -> Result<ScoreResult> {
    score_target(g, r, &Target::Nodes(targets.to_vec()), cfg)
}

/// Scores relation `r` against bag-level targets.
pub fn score_relation_bags(
    g: &HetGraph,
    r: RelationId,
    bags: &[(Bag, bool)],
    cfg: &ScoreConfig,
) -> Result<ScoreResult> {
    score_target(g, r, &Target::Bags(bags.to_vec()), cfg)
}

/// Scores relation `r` against either target form.
pub fn score_relation(
    g: &HetGraph,
    r: RelationId,
    target: &Target,
    cfg: &ScoreConfig,
) -> Result<ScoreResult> {
    score_target(g, r, target, cfg)
}

/// Expands targets one hop along `r`.
///
/// For node targets: each positive `i` becomes a bag of its `r`-neighbours,
/// minus any neighbour also reached from a negative target (those would
/// contradict the negative's label); empty bags are dropped. Each negative's
/// neighbours become singleton negative bags, deduplicated. Bag targets must
/// come with `marks` (from [`relabel`] / [`ScoreResult::usage_marks`]): the
/// members are first hardened into node targets (marked positive, the rest
/// negative), then expanded the same way.
pub fn generate_bags(
    g: &HetGraph,
    r: RelationId,
    target: &Target,
    marks: Option<&BTreeSet<NodeId>>,
) -> Result<Vec<(Bag, bool)>> {
    let labels: Vec<(NodeId, bool)> = match target {
        Target::Nodes(v) => {
            let mut v = v.clone();
            v.sort_unstable_by_key(|&(n, _)| n);
            v
        }
        Target::Bags(v) => {
            let marks = marks.ok_or_else(|| {
                Error::data("bag-level targets need usage marks to generate the next bags")
            })?;
            let roster: BTreeSet<NodeId> = v
                .iter()
                .flat_map(|(bag, _)| bag.members.iter().copied())
                .collect();
            roster.into_iter().map(|n| (n, marks.contains(&n))).collect()
        }
    };

    let mut blocked: BTreeSet<NodeId> = BTreeSet::new();
    for &(k, y) in &labels {
        if !y {
            blocked.extend(g.neighbors(k, r).iter().copied());
        }
    }

    let mut out = Vec::new();
    for &(i, y) in &labels {
        if !y {
            continue;
        }
        let members: Vec<NodeId> = g
            .neighbors(i, r)
            .iter()
            .copied()
            .filter(|j| !blocked.contains(j))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !members.is_empty() {
            out.push((Bag { origin: i, members }, true));
        }
    }
    let positive_members: BTreeSet<NodeId> = out
        .iter()
        .flat_map(|(bag, _)| bag.members.iter().copied())
        .collect();

    let mut singleton_origin: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for &(k, y) in &labels {
        if y {
            continue;
        }
        for &j in g.neighbors(k, r) {
            singleton_origin.entry(j).or_insert(k);
        }
    }
    for (j, origin) in singleton_origin {
        // By construction a blocked node can never sit in a positive bag.
        assert!(
            !positive_members.contains(&j),
            "node {j} in both a positive bag and a negative singleton"
        );
        out.push((Bag { origin, members: vec![j] }, false));
    }
    Ok(out)
}

/// Hardens scored targets into node labels for the next expansion.
///
/// Bag targets: every member marked as used (it realised a positive bag's
/// prediction above the usage threshold in some restart) becomes positive,
/// all other members negative. Node targets: the marked candidates (argmax
/// neighbours of satisfied positives) become positive, all other candidates
/// negative.
pub fn relabel(g: &HetGraph, target: &Target, result: &ScoreResult) -> Vec<(NodeId, bool)> {
    let _ = g;
    let roster: BTreeSet<NodeId> = match target {
        Target::Bags(v) => v
            .iter()
            .flat_map(|(bag, _)| bag.members.iter().copied())
            .collect(),
        Target::Nodes(_) => result.weights.iter().map(|&(n, _)| n).collect(),
    };
    roster
        .into_iter()
        .map(|n| (n, result.usage_marks.contains(&n)))
        .collect()
}
