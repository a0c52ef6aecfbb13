//! Meta-path search: grow relation chains guided by the relation scorer,
//! keep the prefix that classifies best, and train the final model.
//!
//! One chain is grown per class (one-vs-rest). Each iteration scores every
//! relation that leaves the current target frontier, appends the best
//! (lowest) scorer, trains a reduced-budget model on the prefix to measure
//! validation macro-F1, then evolves the targets one hop: node targets
//! expand into multi-instance bags, bag targets are first hardened through
//! the scorer's usage marks. The best prefix wins on *strict* F1
//! improvement, so a shorter path is preferred at a tie. Beam mode keeps
//! the `K` globally best-scoring extensions per depth, collects the best
//! prefix of every branch lineage, prunes that set backwards, and trains
//! one multi-tower model on what survives.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{HetGraph, LabeledSplit, MetaPath, NodeId, Partition, RelationId};
use crate::model::{ModelConfig, MpGnn};
use crate::nn::derive_seed;
use crate::scoring::{self, ScoreConfig, ScoreResult, Target};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Maximum meta-path length.
    pub max_length: usize,
    /// Beam width; 1 grows a single chain per class.
    pub beam: usize,
    /// Training epochs for prefix models during the search; the final
    /// model gets the full `model.epochs` budget.
    pub search_epochs: usize,
    pub score: ScoreConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> SearchConfig {
        SearchConfig {
            max_length: 4,
            beam: 1,
            search_epochs: 150,
            score: ScoreConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub relation: RelationId,
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub depth: usize,
    /// Every scored relation at this depth, ascending relation id. In beam
    /// mode relations are scored once per live branch; entries carry the
    /// branch's prefix.
    pub candidates: Vec<TraceBranchScores>,
    /// Extensions actually taken, as full prefixes.
    pub chosen: Vec<Vec<RelationId>>,
    /// Validation macro-F1 of each newly trained prefix model.
    pub prefix_f1: Vec<(Vec<RelationId>, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBranchScores {
    pub prefix: Vec<RelationId>,
    pub scores: Vec<CandidateScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceClass {
    pub class: u32,
    pub iterations: Vec<TraceIteration>,
    pub best_path: Vec<RelationId>,
    pub best_val_f1: f64,
    /// Why the chain stopped before `max_length`, if it did.
    pub stopped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub mode: String,
    pub max_length: usize,
    pub beam: usize,
    pub classes: Vec<TraceClass>,
    /// Paths dropped by the backward pruning pass (beam mode).
    pub pruned: Vec<Vec<RelationId>>,
    pub final_paths: Vec<Vec<RelationId>>,
    pub final_val_f1: f64,
}

pub struct SearchOutcome {
    pub paths: Vec<MetaPath>,
    pub model: MpGnn,
    pub val_f1: f64,
    pub trace: SearchTrace,
}

/// Relations with at least one edge leaving any frontier type. Relations
/// without edges from the actual target nodes still qualify; they score at
/// the no-evidence floor and lose naturally.
fn candidate_relations(g: &HetGraph, target: &Target) -> Vec<RelationId> {
    let frontier = target.frontier_types(g);
    (0..g.num_relations())
        .map(|r| RelationId(r as u32))
        .filter(|&r| frontier.iter().any(|&t| g.relation_leaves_type(r, t)))
        .collect()
}

fn path_tag(path: &[RelationId]) -> u64 {
    path.iter()
        .fold(0x9e3779b97f4a7c15u64, |acc, r| {
            derive_seed(acc, &[r.0 as u64 + 1])
        })
}

fn paths_tag(paths: &[MetaPath]) -> u64 {
    paths.iter().fold(0x2545f4914f6cdd1du64, |acc, p| {
        derive_seed(acc, &[path_tag(&p.0)])
    })
}

/// Trains a model on `paths` and reports its validation macro-F1.
fn train_candidate(
    g: &HetGraph,
    split: &LabeledSplit,
    paths: &[MetaPath],
    num_classes: usize,
    cfg: &SearchConfig,
    epochs: usize,
) -> Result<(MpGnn, f64)> {
    let mcfg = ModelConfig {
        epochs,
        seed: derive_seed(cfg.seed, &[0x6d6f64, paths_tag(paths)]),
        ..cfg.model.clone()
    };
    let mut model = MpGnn::new(g, paths.to_vec(), num_classes, mcfg)?;
    model.train(g, split)?;
    let (val_nodes, val_classes) = split.partition(Partition::Val);
    let f1 = model.evaluate(g, &val_nodes, &val_classes).f1_macro;
    Ok((model, f1))
}

struct Branch {
    prefix: Vec<RelationId>,
    target: Target,
    /// Lineage best: the prefix along this branch's ancestry with the
    /// highest validation F1.
    best_path: Vec<RelationId>,
    best_f1: f64,
    stopped: Option<String>,
}

/// Grows chains for one class and returns every lineage's best prefix
/// (with its validation F1) plus the per-iteration trace. With `beam == 1`
/// this is the single-chain algorithm.
fn grow_class(
    g: &HetGraph,
    split: &LabeledSplit,
    class: u32,
    num_classes: usize,
    cfg: &SearchConfig,
) -> Result<(Vec<(Vec<RelationId>, f64)>, TraceClass)> {
    let (train_nodes, train_classes) = split.partition(Partition::Train);
    let targets: Vec<(NodeId, bool)> = train_nodes
        .iter()
        .zip(&train_classes)
        .map(|(&n, &c)| (n, c == class))
        .collect();
    let positives = targets.iter().filter(|&&(_, y)| y).count();

    let mut trace = TraceClass {
        class,
        iterations: Vec::new(),
        best_path: Vec::new(),
        best_val_f1: f64::NEG_INFINITY,
        stopped: None,
    };
    if positives == 0 || positives == targets.len() {
        trace.stopped = Some(format!(
            "class {class} has {positives} positive of {} training nodes; nothing to contrast",
            targets.len()
        ));
        trace.best_val_f1 = f64::NAN;
        return Ok((Vec::new(), trace));
    }

    let mut branches = vec![Branch {
        prefix: Vec::new(),
        target: Target::Nodes(targets),
        best_path: Vec::new(),
        best_f1: f64::NEG_INFINITY,
        stopped: None,
    }];
    // Lineage bests of branches dropped by beam selection.
    let mut archive: Vec<(Vec<RelationId>, f64)> = Vec::new();

    for depth in 1..=cfg.max_length {
        let mut iter_trace = TraceIteration {
            depth,
            candidates: Vec::new(),
            chosen: Vec::new(),
            prefix_f1: Vec::new(),
        };

        // Score the frontier of every live branch.
        let mut pool: Vec<(usize, RelationId, f64, ScoreResult)> = Vec::new();
        for (bi, branch) in branches.iter().enumerate() {
            if branch.stopped.is_some() {
                continue;
            }
            let rels = candidate_relations(g, &branch.target);
            if rels.is_empty() {
                continue;
            }
            let mut scores = Vec::with_capacity(rels.len());
            for r in rels {
                let scfg = ScoreConfig {
                    seed: derive_seed(cfg.seed, &[class as u64, depth as u64, path_tag(&branch.prefix)]),
                    ..cfg.score.clone()
                };
                let res = scoring::score_relation(g, r, &branch.target, &scfg)?;
                scores.push(CandidateScore {
                    relation: r,
                    name: g.relation_name(r).to_owned(),
                    score: res.score,
                });
                pool.push((bi, r, res.score, res));
            }
            iter_trace.candidates.push(TraceBranchScores {
                prefix: branch.prefix.clone(),
                scores,
            });
        }
        if pool.is_empty() {
            for b in branches.iter_mut().filter(|b| b.stopped.is_none()) {
                b.stopped = Some("no relation leaves the target frontier".into());
            }
            trace.iterations.push(iter_trace);
            break;
        }

        // Global best extensions: lowest score first, ties to the smallest
        // relation id, then to the earlier branch.
        pool.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.0.cmp(&b.0))
        });
        let take = pool.len().min(cfg.beam);
        let extended: BTreeSet<usize> = pool.iter().take(take).map(|&(bi, ..)| bi).collect();

        let mut next_branches: Vec<Branch> = Vec::with_capacity(take);
        for (bi, r, _, res) in pool.into_iter().take(take) {
            let parent = &branches[bi];
            let mut prefix = parent.prefix.clone();
            prefix.push(r);
            iter_trace.chosen.push(prefix.clone());

            let (_, f1) = train_candidate(
                g,
                split,
                &[MetaPath(prefix.clone())],
                num_classes,
                cfg,
                cfg.search_epochs,
            )?;
            iter_trace.prefix_f1.push((prefix.clone(), f1));

            let (mut best_path, mut best_f1) = (parent.best_path.clone(), parent.best_f1);
            if f1 > best_f1 {
                best_path = prefix.clone();
                best_f1 = f1;
            }

            // Evolve targets one hop along the chosen relation.
            let marks = match &parent.target {
                Target::Nodes(_) => None,
                Target::Bags(_) => Some(&res.usage_marks),
            };
            let mut stopped = None;
            let target = match scoring::generate_bags(g, r, &parent.target, marks) {
                Ok(bags) if bags.is_empty() => {
                    stopped = Some("expansion produced no bags".to_string());
                    parent.target.clone()
                }
                Ok(bags) => Target::Bags(bags),
                Err(e) => return Err(e),
            };
            if stopped.is_none() && best_f1 >= 1.0 {
                // Strict improvement can never replace a perfect prefix;
                // deeper exploration cannot change the outcome.
                stopped = Some("validation F1 reached 1.0".to_string());
            }
            next_branches.push(Branch {
                prefix,
                target,
                best_path,
                best_f1,
                stopped,
            });
        }

        // Branches that stopped earlier survive with their lineage best;
        // live branches the beam did not extend retire into the archive.
        for (bi, b) in branches.into_iter().enumerate() {
            if b.stopped.is_some() {
                next_branches.push(b);
            } else if !extended.contains(&bi) && !b.best_path.is_empty() {
                archive.push((b.best_path, b.best_f1));
            }
        }
        branches = next_branches;
        trace.iterations.push(iter_trace);
        if branches.iter().all(|b| b.stopped.is_some()) {
            break;
        }
    }

    if let Some(reason) = branches.iter().find_map(|b| b.stopped.clone()) {
        trace.stopped = Some(reason);
    }
    for b in branches {
        if !b.best_path.is_empty() {
            archive.push((b.best_path, b.best_f1));
        }
    }
    // Best lineage: highest F1, then the shorter path, then the smaller ids.
    if let Some(best) = archive
        .iter()
        .max_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap()
                .then(b.0.len().cmp(&a.0.len()))
                .then(b.0.cmp(&a.0))
        })
    {
        trace.best_path = best.0.clone();
        trace.best_val_f1 = best.1;
    } else {
        trace.best_val_f1 = f64::NAN;
        if trace.stopped.is_none() {
            trace.stopped = Some("no prefix was ever trained".into());
        }
    }
    Ok((archive, trace))
}

/// Greedy backward elimination: drop paths (worst individual validation F1
/// first) whenever removal does not decrease the joint validation F1.
fn prune(
    g: &HetGraph,
    split: &LabeledSplit,
    paths: Vec<MetaPath>,
    num_classes: usize,
    cfg: &SearchConfig,
) -> Result<(Vec<MetaPath>, Vec<MetaPath>)> {
    if paths.len() <= 1 {
        return Ok((paths, Vec::new()));
    }
    let mut solo: Vec<(usize, f64)> = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let (_, f1) = train_candidate(
            g,
            split,
            std::slice::from_ref(p),
            num_classes,
            cfg,
            cfg.search_epochs,
        )?;
        solo.push((i, f1));
    }
    solo.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

    let mut keep: Vec<bool> = vec![true; paths.len()];
    let current_paths = |keep: &[bool]| -> Vec<MetaPath> {
        paths
            .iter()
            .zip(keep)
            .filter(|&(_, &k)| k)
            .map(|(p, _)| p.clone())
            .collect()
    };
    let (_, mut joint) =
        train_candidate(g, split, &current_paths(&keep), num_classes, cfg, cfg.search_epochs)?;
    for &(i, _) in &solo {
        if keep.iter().filter(|&&k| k).count() == 1 {
            break;
        }
        keep[i] = false;
        let trial = current_paths(&keep);
        let (_, f1) = train_candidate(g, split, &trial, num_classes, cfg, cfg.search_epochs)?;
        if f1 >= joint {
            joint = f1;
        } else {
            keep[i] = true;
        }
    }
    let kept = current_paths(&keep);
    let dropped = paths
        .iter()
        .zip(&keep)
        .filter(|&(_, &k)| !k)
        .map(|(p, _)| p.clone())
        .collect();
    Ok((kept, dropped))
}

/// Learns meta-paths and trains the final model. `beam == 1` keeps the
/// single best chain; wider beams keep every surviving lineage's best
/// prefix, pruned backwards.
pub fn learn(g: &HetGraph, split: &LabeledSplit, cfg: &SearchConfig) -> Result<SearchOutcome> {
    if cfg.max_length == 0 {
        return Err(Error::config("max_length must be >= 1"));
    }
    if cfg.beam == 0 {
        return Err(Error::config("beam width must be >= 1"));
    }
    if split.partition_len(Partition::Train) == 0 {
        return Err(Error::data("no training labels"));
    }
    if split.partition_len(Partition::Val) == 0 {
        return Err(Error::data(
            "meta-path search needs a validation split to rank prefixes",
        ));
    }
    let num_classes = split.num_classes().max(2);
    // Binary labels need one chain (for class 1); multi-class gets a
    // one-vs-rest chain per class.
    let classes: Vec<u32> = if num_classes == 2 {
        vec![1]
    } else {
        (0..num_classes as u32).collect()
    };

    let mut trace = SearchTrace {
        mode: if cfg.beam == 1 { "single".into() } else { "beam".into() },
        max_length: cfg.max_length,
        beam: cfg.beam,
        classes: Vec::new(),
        pruned: Vec::new(),
        final_paths: Vec::new(),
        final_val_f1: f64::NAN,
    };

    let mut collected: Vec<(Vec<RelationId>, f64)> = Vec::new();
    for &class in &classes {
        let (lineage_bests, class_trace) = grow_class(g, split, class, num_classes, cfg)?;
        collected.extend(lineage_bests);
        trace.classes.push(class_trace);
    }
    if collected.is_empty() {
        return Err(Error::data(
            "search found no usable meta-path (no class had contrastive labels and bags)",
        ));
    }

    // Deduplicate lineage bests, keeping each path's best observed F1.
    collected.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.partial_cmp(&a.1).unwrap())
    });
    collected.dedup_by(|a, b| a.0 == b.0);

    let paths: Vec<MetaPath> = if cfg.beam == 1 && num_classes == 2 {
        // Single-chain mode on a binary task: exactly one path.
        let best = collected
            .iter()
            .max_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap()
                    .then(b.0.len().cmp(&a.0.len()))
                    .then(b.0.cmp(&a.0))
            })
            .unwrap();
        vec![MetaPath(best.0.clone())]
    } else {
        // Beam lineages and/or one-vs-rest chains: keep them all, pruned
        // below.
        collected.iter().map(|(p, _)| MetaPath(p.clone())).collect()
    };

    let (paths, dropped) = if paths.len() > 1 {
        prune(g, split, paths, num_classes, cfg)?
    } else {
        (paths, Vec::new())
    };
    trace.pruned = dropped.iter().map(|p| p.0.clone()).collect();

    let (model, val_f1) =
        train_candidate(g, split, &paths, num_classes, cfg, cfg.model.epochs)?;
    trace.final_paths = paths.iter().map(|p| p.0.clone()).collect();
    trace.final_val_f1 = val_f1;

    Ok(SearchOutcome {
        paths,
        model,
        val_f1,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    #[test]
    fn candidate_relations_follow_the_frontier() {
        // r0 leaves type a, r1 leaves type b only.
        let mut b = GraphBuilder::new(1);
        let ta = b.add_type("a");
        let tb = b.add_type("b");
        let r0 = b.add_relation("r0");
        let r1 = b.add_relation("r1");
        let n0 = b.add_node(ta, &[0.0]);
        let n1 = b.add_node(tb, &[1.0]);
        let n2 = b.add_node(tb, &[2.0]);
        b.add_edge(n0, r0, n1);
        b.add_edge(n1, r1, n2);
        let g = b.build().unwrap();

        let t_nodes = Target::Nodes(vec![(n0, true)]);
        assert_eq!(candidate_relations(&g, &t_nodes), vec![r0]);
        let t_bags = Target::Bags(vec![(
            crate::scoring::Bag { origin: n0, members: vec![n1] },
            true,
        )]);
        assert_eq!(candidate_relations(&g, &t_bags), vec![r1]);
    }

    #[test]
    fn path_tags_distinguish_order_and_length() {
        let a = path_tag(&[RelationId(0), RelationId(1)]);
        let b = path_tag(&[RelationId(1), RelationId(0)]);
        let c = path_tag(&[RelationId(0)]);
        let d = path_tag(&[]);
        let tags = BTreeSet::from([a, b, c, d]);
        assert_eq!(tags.len(), 4);
    }
}
