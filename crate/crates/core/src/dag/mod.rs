//! The trajectory DAG: all logged transitions of an iteration range merged by
//! `(src, dst)`, optionally with linear chains contracted into single edges.

mod view;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::record::{EdgeRecord, IterRange};

pub use view::{children_table, ChildRow, DagViewState};

/// One pass of one trajectory over an edge. For contracted edges the
/// probabilities are products over the underlying steps and `step_index` is the
/// index of the first of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traversal {
    pub iteration: u64,
    pub trajectory_id: u64,
    pub step_index: u32,
    pub p_forward: f64,
    pub p_backward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub traversals: Vec<Traversal>,
    /// Interior states removed by chain contraction, in path order.
    pub contracted_path: Vec<String>,
}

impl TransitionStats {
    pub fn frequency(&self) -> usize {
        self.traversals.len()
    }

    pub fn first_iteration(&self) -> Option<u64> {
        self.traversals.iter().map(|t| t.iteration).min()
    }

    pub fn mean_p_forward(&self) -> f64 {
        self.traversals.iter().map(|t| t.p_forward).sum::<f64>() / self.traversals.len().max(1) as f64
    }

    pub fn max_p_forward(&self) -> f64 {
        self.traversals.iter().map(|t| t.p_forward).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Distinct trajectories passing through the state.
    pub visit_count: u64,
    /// Samples whose final object is this state.
    pub terminal_count: u64,
    pub first_iteration: u64,
    /// Layering hint: the smallest step index at which the state was visited.
    pub depth: u32,
    /// Stop transitions taken here (self-edges in the raw log).
    pub stops: Vec<Traversal>,
    /// Removed from the structural graph by chain contraction.
    #[serde(default)]
    pub contracted: bool,
}

impl NodeStats {
    pub fn is_terminal_for_some_sample(&self) -> bool {
        self.terminal_count > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub iteration: u64,
    pub terminal_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDag {
    pub range: IterRange,
    pub root: String,
    pub nodes: BTreeMap<String, NodeStats>,
    /// Structural (non-stop) edges keyed by `(src, dst)`.
    pub edges: BTreeMap<(String, String), TransitionStats>,
    pub trajectories: BTreeMap<u64, TrajectoryMeta>,
}

/// Streaming DAG construction from edge rows.
pub struct DagBuilder {
    dag: TrajectoryDag,
}

impl DagBuilder {
    pub fn new(root: impl Into<String>, range: IterRange) -> Self {
        let root = root.into();
        let mut nodes = BTreeMap::new();
        nodes.insert(root.clone(), NodeStats { first_iteration: u64::MAX, ..Default::default() });
        Self { dag: TrajectoryDag { range, root, nodes, edges: BTreeMap::new(), trajectories: BTreeMap::new() } }
    }

    /// Adds one edge row; rows outside the range are ignored.
    pub fn push(&mut self, e: &EdgeRecord) -> Result<()> {
        if !self.dag.range.contains(e.iteration) {
            return Ok(());
        }
        if e.step_index == 0 && e.src_key != self.dag.root {
            return domain(format!("trajectory {} does not start at the root {}", e.trajectory_id, self.dag.root));
        }
        let t = Traversal {
            iteration: e.iteration,
            trajectory_id: e.trajectory_id,
            step_index: e.step_index,
            p_forward: e.p_forward,
            p_backward: e.p_backward,
        };
        let src = self.dag.nodes.entry(e.src_key.clone()).or_insert_with(|| NodeStats {
            first_iteration: e.iteration,
            depth: e.step_index,
            ..Default::default()
        });
        src.visit_count += 1;
        src.first_iteration = src.first_iteration.min(e.iteration);
        src.depth = src.depth.min(e.step_index);
        if e.terminal {
            src.terminal_count += 1;
            src.stops.push(t);
            self.dag
                .trajectories
                .insert(e.trajectory_id, TrajectoryMeta { iteration: e.iteration, terminal_key: e.dst_key.clone() });
        } else {
            self.dag.edges.entry((e.src_key.clone(), e.dst_key.clone())).or_default().traversals.push(t);
        }
        Ok(())
    }

    pub fn finish(mut self) -> TrajectoryDag {
        let lo = self.dag.range.lo;
        if let Some(root) = self.dag.nodes.get_mut(&self.dag.root) {
            if root.first_iteration == u64::MAX {
                root.first_iteration = lo;
            }
        }
        let order = |a: &Traversal, b: &Traversal| (a.iteration, a.trajectory_id).cmp(&(b.iteration, b.trajectory_id));
        for stats in self.dag.edges.values_mut() {
            stats.traversals.sort_by(order);
        }
        for node in self.dag.nodes.values_mut() {
            node.stops.sort_by(order);
        }
        self.dag
    }
}

/// Merges edge rows of `range` into a DAG rooted at `root`.
pub fn build_dag<'a>(
    root: &str,
    range: IterRange,
    edges: impl IntoIterator<Item = &'a EdgeRecord>,
) -> Result<TrajectoryDag> {
    let mut b = DagBuilder::new(root, range);
    for e in edges {
        b.push(e)?;
    }
    Ok(b.finish())
}

/// A trajectory rebuilt from DAG edges, interior contracted states spliced back in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedTrajectory {
    pub trajectory_id: u64,
    pub iteration: u64,
    pub terminal_key: String,
    /// Every visited state from the root to the final object.
    pub states: Vec<String>,
    /// Edges of this DAG the trajectory used, in order.
    pub edges: Vec<(String, String)>,
}

impl TrajectoryDag {
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Visible (non-contracted) nodes.
    pub fn visible_nodes(&self) -> impl Iterator<Item = (&String, &NodeStats)> {
        self.nodes.iter().filter(|(_, n)| !n.contracted)
    }

    pub fn children<'a>(&'a self, node: &'a str) -> impl Iterator<Item = (&'a String, &'a TransitionStats)> + 'a {
        self.edges
            .range((node.to_string(), String::new())..)
            .take_while(move |((s, _), _)| s == node)
            .map(|((_, d), stats)| (d, stats))
    }

    pub fn edge(&self, src: &str, dst: &str) -> Option<&TransitionStats> {
        self.edges.get(&(src.to_string(), dst.to_string()))
    }

    fn degrees(&self) -> HashMap<&str, (usize, usize)> {
        let mut deg: HashMap<&str, (usize, usize)> = HashMap::new();
        for (src, dst) in self.edges.keys() {
            deg.entry(src.as_str()).or_default().1 += 1;
            deg.entry(dst.as_str()).or_default().0 += 1;
        }
        deg
    }

    /// Contracts every maximal chain of interior nodes with in- and out-degree 1.
    ///
    /// The root and states where some sample stopped are never contracted. A chain
    /// is also left alone when its contracted endpoints `(u, w)` would coincide
    /// with another edge or chain between the same pair, so that edges stay
    /// uniquely keyed by their endpoints.
    pub fn truncate_chains(&self) -> TrajectoryDag {
        let deg = self.degrees();
        let contractible = |k: &str| {
            k != self.root
                && deg.get(k) == Some(&(1, 1))
                && self.nodes.get(k).is_some_and(|n| !n.is_terminal_for_some_sample())
        };

        // each chain: start edge (u, v1) with u non-contractible, v1 contractible
        let mut chains: Vec<(String, Vec<String>, String)> = Vec::new();
        for (src, dst) in self.edges.keys() {
            if contractible(src) || !contractible(dst) {
                continue;
            }
            let mut interior = vec![dst.clone()];
            let mut cur = dst.clone();
            let end = loop {
                let (next, _) = self.children(&cur).next().expect("contractible node has one child");
                if contractible(next) {
                    interior.push(next.clone());
                    cur = next.clone();
                } else {
                    break next.clone();
                }
            };
            chains.push((src.clone(), interior, end));
        }

        let mut endpoint_uses: HashMap<(&str, &str), usize> = HashMap::new();
        for (s, d) in self.edges.keys() {
            *endpoint_uses.entry((s, d)).or_default() += 1;
        }
        for (u, _, w) in &chains {
            *endpoint_uses.entry((u, w)).or_default() += 1;
        }

        let mut out = self.clone();
        for (u, interior, w) in &chains {
            if endpoint_uses[&(u.as_str(), w.as_str())] > 1 {
                continue;
            }
            let mut path = Vec::with_capacity(interior.len() + 2);
            path.push(u.clone());
            path.extend(interior.iter().cloned());
            path.push(w.clone());

            let first = out.edges.remove(&(path[0].clone(), path[1].clone())).expect("chain start edge");
            let mut merged: BTreeMap<u64, Traversal> =
                first.traversals.into_iter().map(|t| (t.trajectory_id, t)).collect();
            for pair in path[1..].windows(2) {
                let stats = out.edges.remove(&(pair[0].clone(), pair[1].clone())).expect("chain edge");
                for t in stats.traversals {
                    // every trajectory entering a contractible node must leave it by its sole out-edge
                    let m = merged.get_mut(&t.trajectory_id).expect("chain traversals align");
                    m.p_forward *= t.p_forward;
                    m.p_backward *= t.p_backward;
                }
            }
            for k in interior {
                if let Some(n) = out.nodes.get_mut(k) {
                    n.contracted = true;
                }
            }
            let mut traversals: Vec<Traversal> = merged.into_values().collect();
            traversals.sort_by(|a, b| (a.iteration, a.trajectory_id).cmp(&(b.iteration, b.trajectory_id)));
            out.edges.insert((u.clone(), w.clone()), TransitionStats { traversals, contracted_path: interior.clone() });
        }
        out
    }

    /// Rebuilds the given trajectories by following this DAG's edges.
    pub fn reconstruct(&self, ids: &BTreeSet<u64>) -> BTreeMap<u64, ReconstructedTrajectory> {
        let mut steps: BTreeMap<u64, Vec<(u32, &(String, String))>> = ids.iter().map(|&id| (id, Vec::new())).collect();
        for (key, stats) in &self.edges {
            for t in &stats.traversals {
                if let Some(v) = steps.get_mut(&t.trajectory_id) {
                    v.push((t.step_index, key));
                }
            }
        }
        steps
            .into_iter()
            .filter_map(|(id, mut path)| {
                let meta = self.trajectories.get(&id)?;
                path.sort_by_key(|(i, _)| *i);
                let mut states = vec![self.root.clone()];
                let mut edges = Vec::with_capacity(path.len());
                for (_, key) in path {
                    let stats = &self.edges[key];
                    states.extend(stats.contracted_path.iter().cloned());
                    states.push(key.1.clone());
                    edges.push(key.clone());
                }
                Some((
                    id,
                    ReconstructedTrajectory {
                        trajectory_id: id,
                        iteration: meta.iteration,
                        terminal_key: meta.terminal_key.clone(),
                        states,
                        edges,
                    },
                ))
            })
            .collect()
    }

    /// Ids of trajectories within `range` whose path contains `node` (interior
    /// contracted states included).
    pub fn trajectory_ids_through(&self, node: &str, range: IterRange) -> BTreeSet<u64> {
        if !self.nodes.contains_key(node) {
            return BTreeSet::new();
        }
        if node == self.root {
            return self
                .trajectories
                .iter()
                .filter(|(_, m)| range.contains(m.iteration))
                .map(|(id, _)| *id)
                .collect();
        }
        self.edges
            .iter()
            .filter(|((_, d), stats)| d == node || stats.contracted_path.iter().any(|k| k == node))
            .flat_map(|(_, stats)| stats.traversals.iter())
            .filter(|t| range.contains(t.iteration))
            .map(|t| t.trajectory_id)
            .collect()
    }

    /// Complete trajectories passing through `node`; unknown nodes give nothing.
    pub fn trajectories_through(&self, node: &str, range: IterRange) -> Vec<ReconstructedTrajectory> {
        self.reconstruct(&self.trajectory_ids_through(node, range)).into_values().collect()
    }

    /// Ids of trajectories that used any of the given `(src, dst)` edges.
    pub fn trajectory_ids_using(&self, edges: &[(String, String)]) -> BTreeSet<u64> {
        let mut ids = BTreeSet::new();
        for (src, dst) in edges {
            if src == dst {
                if let Some(n) = self.nodes.get(src) {
                    ids.extend(n.stops.iter().map(|t| t.trajectory_id));
                }
            } else if let Some(stats) = self.edge(src, dst) {
                ids.extend(stats.traversals.iter().map(|t| t.trajectory_id));
            }
        }
        ids
    }
}
