use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dag::{Traversal, TrajectoryDag};
use crate::record::IterRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatMetric {
    #[default]
    Probability,
    Variance,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub src_key: String,
    pub dst_key: String,
    /// Stop transition (`src_key == dst_key`).
    pub terminal: bool,
    pub rank: usize,
    pub metric_value: f64,
    pub frequency: usize,
    pub active_iterations: BTreeSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: u64,
    pub p_forward: f64,
    pub p_backward: f64,
    pub count: usize,
}

fn all_transitions(dag: &TrajectoryDag) -> impl Iterator<Item = (&str, &str, bool, &[Traversal])> {
    let moves = dag.edges.iter().map(|((s, d), st)| (s.as_str(), d.as_str(), false, st.traversals.as_slice()));
    let stops = dag
        .nodes
        .iter()
        .filter(|(_, n)| !n.stops.is_empty())
        .map(|(k, n)| (k.as_str(), k.as_str(), true, n.stops.as_slice()));
    moves.chain(stops)
}

fn metric_of(ps: &[f64], metric: HeatMetric) -> f64 {
    let n = ps.len() as f64;
    let mean = ps.iter().sum::<f64>() / n;
    match metric {
        HeatMetric::Frequency => n,
        HeatMetric::Probability => mean,
        HeatMetric::Variance => ps.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n,
    }
}

/// The `top_m` transitions with the largest metric over their traversals in
/// `range`, stop transitions included. Ties go to the smaller `(src, dst)`.
pub fn transition_heatmap(
    dag: &TrajectoryDag,
    metric: HeatMetric,
    direction: Direction,
    top_m: usize,
    range: IterRange,
) -> Vec<HeatmapRow> {
    let mut rows: Vec<HeatmapRow> = all_transitions(dag)
        .filter_map(|(src, dst, terminal, trav)| {
            let inside: Vec<&Traversal> = trav.iter().filter(|t| range.contains(t.iteration)).collect();
            if inside.is_empty() {
                return None;
            }
            let ps: Vec<f64> = inside
                .iter()
                .map(|t| match direction {
                    Direction::Forward => t.p_forward,
                    Direction::Backward => t.p_backward,
                })
                .collect();
            Some(HeatmapRow {
                src_key: src.to_string(),
                dst_key: dst.to_string(),
                terminal,
                rank: 0,
                metric_value: metric_of(&ps, metric),
                frequency: inside.len(),
                active_iterations: inside.iter().map(|t| t.iteration).collect(),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        b.metric_value
            .total_cmp(&a.metric_value)
            .then_with(|| (&a.src_key, &a.dst_key).cmp(&(&b.src_key, &b.dst_key)))
    });
    rows.truncate(top_m);
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// Per-iteration mean probabilities of one transition; a self-edge means the
/// stop transition at that state. Unknown edges give an empty series.
pub fn transition_history(dag: &TrajectoryDag, src: &str, dst: &str, range: IterRange) -> Vec<HistoryPoint> {
    let trav: &[Traversal] = if src == dst {
        dag.nodes.get(src).map_or(&[], |n| n.stops.as_slice())
    } else {
        dag.edge(src, dst).map_or(&[], |e| e.traversals.as_slice())
    };
    let mut acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for t in trav.iter().filter(|t| range.contains(t.iteration)) {
        let e = acc.entry(t.iteration).or_default();
        e.0 += t.p_forward;
        e.1 += t.p_backward;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(iteration, (f, b, n))| HistoryPoint {
            iteration,
            p_forward: f / n as f64,
            p_backward: b / n as f64,
            count: n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::build_dag;
    use crate::record::EdgeRecord;

    fn row(id: u64, iteration: u64, step: u32, src: &str, dst: &str, pf: f64, terminal: bool) -> EdgeRecord {
        EdgeRecord {
            trajectory_id: id,
            step_index: step,
            iteration,
            src_key: src.into(),
            dst_key: dst.into(),
            action: if terminal { "stop" } else { "inc_x" }.into(),
            p_forward: pf,
            p_backward: if terminal { 1.0 } else { 0.5 },
            terminal,
        }
    }

    fn sample_dag() -> TrajectoryDag {
        let rows = vec![
            row(1, 3, 0, "0,0", "1,0", 0.2, false),
            row(1, 3, 1, "1,0", "1,0", 0.5, true),
            row(2, 7, 0, "0,0", "1,0", 0.4, false),
            row(2, 7, 1, "1,0", "1,0", 0.5, true),
            row(3, 7, 0, "0,0", "0,0", 0.3, true),
        ];
        build_dag("0,0", IterRange::all(), &rows).unwrap()
    }

    #[test]
    fn edge_metrics() {
        let d = sample_dag();
        let find = |m| {
            transition_heatmap(&d, m, Direction::Forward, 10, IterRange::all())
                .into_iter()
                .find(|r| r.src_key == "0,0" && r.dst_key == "1,0")
                .unwrap()
        };
        let f = find(HeatMetric::Frequency);
        assert_eq!(f.metric_value, 2.0);
        assert_eq!(f.active_iterations, BTreeSet::from([3, 7]));
        assert!((find(HeatMetric::Probability).metric_value - 0.3).abs() < 1e-15);
        assert!((find(HeatMetric::Variance).metric_value - 0.01).abs() < 1e-15);

        let stop = transition_heatmap(&d, HeatMetric::Variance, Direction::Forward, 10, IterRange::all())
            .into_iter()
            .find(|r| r.terminal && r.src_key == "0,0")
            .unwrap();
        assert_eq!(stop.metric_value, 0.0);
    }

    #[test]
    fn sorted_truncated_and_totals() {
        let d = sample_dag();
        let rows = transition_heatmap(&d, HeatMetric::Frequency, Direction::Backward, 10, IterRange::all());
        assert_eq!(rows.iter().map(|r| r.frequency).sum::<usize>(), 5);
        assert!(rows.windows(2).all(|w| w[0].metric_value >= w[1].metric_value));
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(transition_heatmap(&d, HeatMetric::Frequency, Direction::Forward, 1, IterRange::all()).len(), 1);
        let late = transition_heatmap(&d, HeatMetric::Frequency, Direction::Forward, 10, IterRange::new(5, 9).unwrap());
        assert_eq!(late.iter().map(|r| r.frequency).sum::<usize>(), 3);
    }

    #[test]
    fn history_averages_within_iteration() {
        let rows = vec![
            row(1, 5, 0, "0,0", "1,0", 0.2, false),
            row(2, 5, 0, "0,0", "1,0", 0.4, false),
            row(3, 6, 0, "0,0", "1,0", 0.1, false),
        ];
        let d = build_dag("0,0", IterRange::all(), &rows).unwrap();
        let h = transition_history(&d, "0,0", "1,0", IterRange::all());
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].iteration, 5);
        assert!((h[0].p_forward - 0.3).abs() < 1e-15);
        assert_eq!(h[0].count, 2);
        assert!(transition_history(&d, "0,0", "9,9", IterRange::all()).is_empty());
        assert_eq!(transition_history(&sample_dag(), "1,0", "1,0", IterRange::all()).len(), 2);
    }
}
