//! Interactive exploration of a (truncated) DAG: which nodes a session has pinned.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::TrajectoryDag;
use crate::env::RenderSpec;
use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagViewState {
    pub session_id: String,
    /// Always contains the root.
    pub pinned: BTreeSet<String>,
    /// Pinned node -> number of its children that are not pinned.
    pub placeholders: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRow {
    pub state_key: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderSpec>,
    pub frequency: usize,
    pub mean_p_forward: f64,
    pub max_p_forward: f64,
    pub first_iteration: u64,
    /// Trajectories passing through the child.
    pub through_count: u64,
    pub contracted_path: Vec<String>,
    pub pinned: bool,
}

impl DagViewState {
    /// Only the root is shown initially.
    pub fn new(session_id: impl Into<String>, dag: &TrajectoryDag) -> Self {
        let mut v = Self {
            session_id: session_id.into(),
            pinned: BTreeSet::from([dag.root.clone()]),
            placeholders: BTreeMap::new(),
        };
        v.refresh_placeholders(dag);
        v
    }

    pub fn is_pinned(&self, key: &str) -> bool {
        self.pinned.contains(key)
    }

    /// Pins `child` of the pinned `node`. Every edge between pinned nodes is
    /// visible, so a child reachable from several pinned parents shows all of them.
    pub fn expand(&mut self, dag: &TrajectoryDag, node: &str, child: &str) -> Result<()> {
        if !self.is_pinned(node) {
            return domain(format!("node {node} is not pinned in session {}", self.session_id));
        }
        if dag.edge(node, child).is_none() {
            return domain(format!("{child} is not a child of {node}"));
        }
        self.pinned.insert(child.to_string());
        self.refresh_placeholders(dag);
        Ok(())
    }

    /// Unpins `node`, then every pinned node no longer reachable from the root
    /// through pinned nodes.
    pub fn collapse(&mut self, dag: &TrajectoryDag, node: &str) -> Result<()> {
        if node == dag.root {
            return domain("the root cannot be collapsed");
        }
        if !self.pinned.remove(node) {
            return domain(format!("node {node} is not pinned in session {}", self.session_id));
        }
        let reachable = self.reachable(dag);
        self.pinned.retain(|k| reachable.contains(k));
        self.refresh_placeholders(dag);
        Ok(())
    }

    /// Edges whose endpoints are both pinned.
    pub fn visible_edges(&self, dag: &TrajectoryDag) -> Vec<(String, String)> {
        self.pinned
            .iter()
            .flat_map(|src| {
                dag.children(src).filter(|(d, _)| self.pinned.contains(*d)).map(move |(d, _)| (src.clone(), d.clone()))
            })
            .collect()
    }

    fn reachable(&self, dag: &TrajectoryDag) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        if !self.pinned.contains(&dag.root) {
            return seen;
        }
        let mut queue = VecDeque::from([dag.root.clone()]);
        seen.insert(dag.root.clone());
        while let Some(cur) = queue.pop_front() {
            for (child, _) in dag.children(&cur) {
                if self.pinned.contains(child) && seen.insert(child.clone()) {
                    queue.push_back(child.clone());
                }
            }
        }
        seen
    }

    fn refresh_placeholders(&mut self, dag: &TrajectoryDag) {
        self.placeholders = self
            .pinned
            .iter()
            .map(|k| (k.clone(), dag.children(k).filter(|(c, _)| !self.pinned.contains(*c)).count()))
            .collect();
    }

    /// Root pinned, every pinned node reachable, placeholder counts current.
    pub fn check_invariants(&self, dag: &TrajectoryDag) -> Result<()> {
        if !self.pinned.contains(&dag.root) {
            return domain("root is not pinned");
        }
        if self.reachable(dag) != self.pinned {
            return domain("a pinned node is unreachable from the root");
        }
        let mut fresh = self.clone();
        fresh.refresh_placeholders(dag);
        if fresh.placeholders != self.placeholders {
            return domain("stale placeholder counts");
        }
        Ok(())
    }
}

/// Rows for the children of a pinned node, most frequent first.
pub fn children_table(
    dag: &TrajectoryDag,
    view: &DagViewState,
    node: &str,
    render: impl Fn(&str) -> Option<RenderSpec>,
) -> Result<Vec<ChildRow>> {
    if !view.is_pinned(node) {
        return domain(format!("node {node} is not pinned in session {}", view.session_id));
    }
    let mut rows: Vec<ChildRow> = dag
        .children(node)
        .map(|(child, stats)| ChildRow {
            state_key: child.clone(),
            render: render(child),
            frequency: stats.frequency(),
            mean_p_forward: stats.mean_p_forward(),
            max_p_forward: stats.max_p_forward(),
            first_iteration: stats.first_iteration().unwrap_or(dag.range.lo),
            through_count: dag.nodes.get(child).map_or(0, |n| n.visit_count),
            contracted_path: stats.contracted_path.clone(),
            pinned: view.is_pinned(child),
        })
        .collect();
    rows.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.state_key.cmp(&b.state_key)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::build_dag;
    use crate::dag::tests::path;
    use crate::record::IterRange;

    fn diamond() -> TrajectoryDag {
        let mut rows = path(1, 0, &[(0, 0), (1, 0), (1, 1)], 0.5);
        rows.extend(path(2, 0, &[(0, 0), (0, 1), (1, 1)], 0.5));
        rows.extend(path(3, 1, &[(0, 0), (1, 0), (1, 1)], 0.5));
        build_dag("0,0", IterRange::all(), &rows).unwrap().truncate_chains()
    }

    #[test]
    fn initial_view_shows_root_with_children_count() {
        let d = diamond();
        let v = DagViewState::new("s", &d);
        assert_eq!(v.pinned, BTreeSet::from(["0,0".to_string()]));
        assert_eq!(v.placeholders["0,0"], 2);
        v.check_invariants(&d).unwrap();
    }

    #[test]
    fn children_table_ordering_and_conservation() {
        let d = diamond();
        let v = DagViewState::new("s", &d);
        let rows = children_table(&d, &v, "0,0", |_| None).unwrap();
        assert_eq!(rows.iter().map(|r| r.state_key.as_str()).collect::<Vec<_>>(), vec!["1,0", "0,1"]);
        assert_eq!(rows[0].frequency, 2);
        let outgoing: usize = d.children("0,0").map(|(_, s)| s.frequency()).sum();
        assert_eq!(rows.iter().map(|r| r.frequency).sum::<usize>(), outgoing);
        assert!(children_table(&d, &v, "1,1", |_| None).is_err());
    }

    #[test]
    fn leaf_has_empty_table() {
        let d = diamond();
        let mut v = DagViewState::new("s", &d);
        v.expand(&d, "0,0", "1,0").unwrap();
        v.expand(&d, "1,0", "1,1").unwrap();
        assert!(children_table(&d, &v, "1,1", |_| None).unwrap().is_empty());
    }

    #[test]
    fn multi_parent_expand_and_collapse() {
        let d = diamond();
        let mut v = DagViewState::new("s", &d);
        v.expand(&d, "0,0", "1,0").unwrap();
        v.expand(&d, "0,0", "0,1").unwrap();
        v.expand(&d, "1,0", "1,1").unwrap();
        v.check_invariants(&d).unwrap();
        let edges = v.visible_edges(&d);
        assert!(edges.contains(&("1,0".into(), "1,1".into())));
        assert!(edges.contains(&("0,1".into(), "1,1".into())));

        let before = v.clone();
        v.expand(&d, "0,1", "1,1").unwrap();
        assert_eq!(v, before, "re-expanding a pinned child is a no-op");

        v.collapse(&d, "1,0").unwrap();
        assert!(v.is_pinned("1,1"), "still reachable through 0,1");
        v.check_invariants(&d).unwrap();

        v.collapse(&d, "0,1").unwrap();
        assert_eq!(v.pinned.len(), 1);
        v.check_invariants(&d).unwrap();
        assert!(v.collapse(&d, "0,0").is_err());
        assert!(v.expand(&d, "1,1", "2,1").is_err());
    }

    #[test]
    fn linear_chain_collapse_cascades() {
        // root -> a -> b where a and b are terminal for some samples (so not contracted)
        let mut rows = path(1, 0, &[(0, 0), (1, 0), (2, 0)], 0.5);
        rows.extend(path(2, 0, &[(0, 0), (1, 0)], 0.5));
        let d = build_dag("0,0", IterRange::all(), &rows).unwrap().truncate_chains();
        let mut v = DagViewState::new("s", &d);
        v.expand(&d, "0,0", "1,0").unwrap();
        v.expand(&d, "1,0", "2,0").unwrap();
        v.collapse(&d, "1,0").unwrap();
        assert_eq!(v.pinned.len(), 1);

        // expand then collapse the same leaf restores the prior state
        v.expand(&d, "0,0", "1,0").unwrap();
        let before = v.clone();
        v.expand(&d, "1,0", "2,0").unwrap();
        v.collapse(&d, "2,0").unwrap();
        assert_eq!(v, before);
    }
}
