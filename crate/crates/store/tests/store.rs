use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;

use flowscope_core::dag::build_dag;
use flowscope_core::env::{Environment, GridConfig, GridEnv};
use flowscope_core::policy::{train, TrainConfig, Trajectory};
use flowscope_core::{EdgeRecord, IterRange, Sample, TrajectoryRecord};
use flowscope_store::*;
use proptest::prelude::*;

fn grid(h: u32) -> GridEnv {
    GridEnv::new(GridConfig::with_height(h)).unwrap()
}

fn edge(id: u64, step: u32, iteration: u64, src: &str, dst: &str, action: &str) -> EdgeRecord {
    EdgeRecord {
        trajectory_id: id,
        step_index: step,
        iteration,
        src_key: src.into(),
        dst_key: dst.into(),
        action: action.into(),
        p_forward: 0.25,
        p_backward: if action == "stop" { 1.0 } else { 0.5 },
        terminal: action == "stop",
    }
}

fn record(id: u64, iteration: u64, cells: &[&str]) -> TrajectoryRecord {
    let mut edges: Vec<EdgeRecord> = cells
        .windows(2)
        .enumerate()
        .map(|(i, w)| edge(id, i as u32, iteration, w[0], w[1], "inc_x"))
        .collect();
    let last = cells.last().unwrap();
    edges.push(edge(id, edges.len() as u32, iteration, last, last, "stop"));
    TrajectoryRecord {
        sample: Sample {
            trajectory_id: id,
            terminal_key: last.to_string(),
            reward: 0.5 + id as f64,
            loss: 0.125 * id as f64,
            iteration,
            log_ptx: None,
        },
        edges,
    }
}

fn count(store: &Store) -> (u64, u64) {
    (store.sample_count(IterRange::all()).unwrap(), store.edge_count(IterRange::all()).unwrap())
}

#[test]
fn three_step_trajectory_rows() {
    let mut s = Store::in_memory().unwrap();
    s.log_trajectory(&record(0, 0, &["0,0", "1,0", "2,0"])).unwrap();
    assert_eq!(count(&s), (1, 3));
    assert_eq!(s.node_count().unwrap(), 3);
}

#[test]
fn round_trip_is_field_identical() {
    let mut s = Store::in_memory().unwrap();
    let recs = vec![record(0, 0, &["0,0", "1,0"]), record(1, 0, &["0,0"]), record(2, 1, &["0,0", "1,0", "2,0"])];
    s.log_batch(&[], &recs).unwrap();
    let got = s.query_samples(IterRange::all(), None, SampleOrder::Iteration).unwrap();
    assert_eq!(got, recs.iter().map(|r| r.sample.clone()).collect::<Vec<_>>());
    for r in &recs {
        assert_eq!(s.trajectory(r.sample.trajectory_id).unwrap().as_ref(), Some(r));
    }
}

#[test]
fn shared_edge_is_stored_per_trajectory() {
    let mut s = Store::in_memory().unwrap();
    s.log_batch(&[], &[record(0, 0, &["0,0", "1,0"]), record(1, 0, &["0,0", "1,0", "2,0"])]).unwrap();
    let shared: Vec<EdgeRecord> = s
        .edges(IterRange::all())
        .unwrap()
        .into_iter()
        .filter(|e| e.src_key == "0,0" && e.dst_key == "1,0")
        .collect();
    assert_eq!(shared.len(), 2);
    assert_ne!(shared[0].trajectory_id, shared[1].trajectory_id);
}

#[test]
fn duplicate_trajectory_id_is_rejected() {
    let mut s = Store::in_memory().unwrap();
    s.log_trajectory(&record(4, 0, &["0,0"])).unwrap();
    assert!(matches!(s.log_trajectory(&record(4, 1, &["0,0"])), Err(StoreError::Sqlite(_))));
    // the failed transaction left nothing behind
    assert_eq!(count(&s), (1, 1));
}

#[test]
fn range_filter() {
    let mut s = Store::in_memory().unwrap();
    for (id, it) in [(0, 3), (1, 7), (2, 7), (3, 9)] {
        s.log_trajectory(&record(id, it, &["0,0"])).unwrap();
    }
    let mid = s.query_samples_between(4, 8, None, SampleOrder::Iteration).unwrap();
    assert_eq!(mid.iter().map(|x| x.trajectory_id).collect::<Vec<_>>(), vec![1, 2]);
    assert!(s.query_samples_between(10, 20, None, SampleOrder::Iteration).unwrap().is_empty());
    assert_eq!(s.query_samples_between(0, u64::MAX, None, SampleOrder::Iteration).unwrap().len(), 4);
    assert!(s.query_samples_between(8, 4, None, SampleOrder::Iteration).is_err());
    assert_eq!(s.iteration_bounds().unwrap(), Some((3, 9)));
    assert_eq!(s.query_samples(IterRange::all(), Some(2), SampleOrder::RewardDesc).unwrap()[0].trajectory_id, 3);
    assert_eq!(s.query_samples(IterRange::all(), None, SampleOrder::LossAsc).unwrap()[0].trajectory_id, 0);
}

#[test]
fn empty_store() {
    let s = Store::in_memory().unwrap();
    assert_eq!(s.iteration_bounds().unwrap(), None);
    assert!(s.run().unwrap().is_none());
    assert!(matches!(s.require_run(), Err(StoreError::NoRun)));
    assert!(s.load_dag().unwrap().is_none());
}

#[test]
fn grid_validation_sets() {
    assert_eq!(enumerated_validation_set(&grid(20)).unwrap().len(), 400);
    let env = grid(2);
    let v = enumerated_validation_set(&env).unwrap();
    assert_eq!(v.len(), 4);
    for o in &v {
        assert_eq!(o.reward, env.reward(&env.parse_key(&o.state_key).unwrap()).unwrap());
    }
    check_validation_set(&env, &v).unwrap();

    let mut s = Store::in_memory().unwrap();
    s.load_validation_set(&v).unwrap();
    assert_eq!(s.query_validation().unwrap(), v);
    s.set_validation_log_ptx(&[-1.0, -2.0, -3.0, -4.0]).unwrap();
    assert_eq!(s.query_validation().unwrap()[2].log_ptx, Some(-3.0));
    assert!(s.set_validation_log_ptx(&[0.0; 5]).is_err());
}

#[test]
fn jsonl_ingestion() {
    assert!(parse_validation_jsonl(Cursor::new("")).unwrap().is_empty());
    let ok = "{\"state_key\":\"1,2\",\"reward\":0.5,\"features\":[0.1,0.2]}\n\n{\"state_key\":\"0,0\",\"reward\":2,\"features\":[0,0]}\n";
    let v = parse_validation_jsonl(Cursor::new(ok)).unwrap();
    assert_eq!(v.len(), 2);
    assert_eq!(v[1].reward, 2.0);

    let bad = "{\"state_key\":\"1,2\",\"reward\":0.5,\"features\":[0.1,0.2]}\n{\"state_key\":\"1,2\",\"reward\":0.5}\n";
    match parse_validation_jsonl(Cursor::new(bad)) {
        Err(StoreError::Ingest { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let neg = "{\"state_key\":\"1,2\",\"reward\":-1,\"features\":[]}";
    assert!(matches!(parse_validation_jsonl(Cursor::new(neg)), Err(StoreError::Ingest { line: 1, .. })));

    let env = grid(4);
    let wrong = parse_validation_jsonl(Cursor::new("{\"state_key\":\"0,0\",\"reward\":7,\"features\":[0,0]}")).unwrap();
    assert!(check_validation_set(&env, &wrong).is_err());
}

#[test]
fn trained_run_reconstructs_exactly_and_keeps_integrity() {
    let env = grid(5);
    let cfg = TrainConfig { iterations: 12, batch_size: 8, seed: 3, hidden: 16, ..TrainConfig::default() };
    let mut logged: Vec<TrajectoryRecord> = Vec::new();
    train(&env, &cfg, &mut logged).unwrap();
    let mut s = Store::in_memory().unwrap();
    s.begin_run("grid", &serde_json::json!({"height": 5})).unwrap();
    let (net, summary) = train(&env, &cfg, &mut s).unwrap();
    assert_eq!(summary.samples, 96);
    s.finish_run(&serde_json::json!({"log_z": net.log_z()}), &serde_json::json!({})).unwrap();
    assert_eq!(s.require_run().unwrap().status, RunStatus::Complete);

    let ids: HashSet<u64> = s.query_samples(IterRange::all(), None, SampleOrder::Iteration).unwrap().iter().map(|x| x.trajectory_id).collect();
    let edge_ids: HashSet<u64> = s.edges(IterRange::all()).unwrap().iter().map(|e| e.trajectory_id).collect();
    assert_eq!(ids, edge_ids);

    for rec in &logged {
        let back = s.trajectory(rec.sample.trajectory_id).unwrap().unwrap();
        assert_eq!(&back, rec);
        let typed = Trajectory::from_edges(&env, &back.edges).unwrap();
        typed.validate(&env).unwrap();
        assert_eq!(typed.to_record(&env, rec.sample.reward, rec.sample.loss), *rec);
    }
    let some_key = &logged[0].sample.terminal_key;
    assert_eq!(s.node_features(some_key).unwrap().unwrap(), env.features(&env.parse_key(some_key).unwrap()));
}

#[test]
fn log_ptx_updates_every_sample_of_a_key() {
    let mut s = Store::in_memory().unwrap();
    s.log_batch(&[], &[record(0, 0, &["0,0", "1,0"]), record(1, 1, &["0,0", "1,0"]), record(2, 1, &["0,0"])]).unwrap();
    assert_eq!(s.distinct_terminal_keys().unwrap(), vec!["0,0".to_string(), "1,0".to_string()]);
    s.set_sample_log_ptx(&BTreeMap::from([("1,0".to_string(), -0.5)])).unwrap();
    let got = s.query_samples(IterRange::all(), None, SampleOrder::Iteration).unwrap();
    assert_eq!(got.iter().map(|x| x.log_ptx).collect::<Vec<_>>(), vec![Some(-0.5), Some(-0.5), None]);
}

#[test]
fn dag_round_trip() {
    let mut s = Store::in_memory().unwrap();
    s.log_batch(&[], &[record(0, 0, &["0,0", "1,0", "2,0", "3,0"]), record(1, 2, &["0,0", "1,0"])]).unwrap();
    let dag = build_dag("0,0", IterRange::all(), &s.edges(IterRange::all()).unwrap()).unwrap().truncate_chains();
    s.save_dag(&dag).unwrap();
    assert!(s.has_dag().unwrap());
    assert_eq!(s.load_dag().unwrap().unwrap(), dag);
    s.save_dag(&dag).unwrap();
    assert_eq!(s.load_dag().unwrap().unwrap(), dag);
}

#[test]
fn files_schema_and_read_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.db");
    {
        let mut s = Store::create(&path).unwrap();
        s.begin_run("grid", &serde_json::json!({})).unwrap();
        assert!(s.begin_run("grid", &serde_json::json!({})).is_err());
        s.log_trajectory(&record(0, 0, &["0,0"])).unwrap();
    }
    assert!(Store::create(&path).is_err());
    let mut ro = Store::open_read_only(&path).unwrap();
    assert_eq!(ro.sample_count(IterRange::all()).unwrap(), 1);
    assert!(ro.log_trajectory(&record(1, 0, &["0,0"])).is_err());
    assert!(ro.set_run_status(RunStatus::Aborted).is_err());
    drop(ro);

    let mut rw = Store::open(&path).unwrap();
    rw.set_run_status(RunStatus::Aborted).unwrap();
    assert_eq!(rw.require_run().unwrap().status, RunStatus::Aborted);
    drop(rw);

    let conn = rusqlite_bump(&path);
    drop(conn);
    assert!(matches!(Store::open_read_only(&path), Err(StoreError::SchemaVersion { found: 99, .. })));

    let other = dir.path().join("other.db");
    std::fs::write(&other, b"").unwrap();
    assert!(matches!(Store::open_read_only(&other), Err(StoreError::NotADatabase(_))));
}

fn rusqlite_bump(path: &std::path::Path) -> rusqlite::Connection {
    let conn = rusqlite::Connection::open(path).unwrap();
    conn.execute("UPDATE meta SET value = '99' WHERE key = 'schema_version'", []).unwrap();
    conn
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn adjacent_ranges_union(iters in proptest::collection::vec(0u64..30, 0..40), a in 0u64..30, b in 0u64..30, c in 0u64..30) {
        let mut v = [a, b, c];
        v.sort();
        let [a, b, c] = v;
        let mut s = Store::in_memory().unwrap();
        for (id, it) in iters.iter().enumerate() {
            s.log_trajectory(&record(id as u64, *it, &["0,0"])).unwrap();
        }
        let q = |lo, hi| s.query_samples_between(lo, hi, None, SampleOrder::Iteration).unwrap();
        let mut joined = q(a, b);
        joined.extend(q(b + 1, c.max(b + 1)));
        let whole = q(a, c.max(b + 1));
        prop_assert_eq!(joined, whole);
    }
}
