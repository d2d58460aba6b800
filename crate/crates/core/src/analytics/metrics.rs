use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hexbin::HexGrid;

pub const HISTOGRAM_BINS: usize = 20;

/// A training sample with its projected position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSample {
    pub trajectory_id: u64,
    pub state_key: String,
    pub iteration: u64,
    pub reward: f64,
    pub loss: f64,
    pub log_ptx: Option<f64>,
    pub point: [f64; 2],
}

/// A validation object with its projected position; `id` is its row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedValidation {
    pub id: u64,
    pub state_key: String,
    pub reward: f64,
    pub log_ptx: Option<f64>,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHistogram {
    /// Bounds of the bins in log-reward space.
    pub log_lo: f64,
    pub log_hi: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAggregates {
    pub count_samples: u64,
    pub count_validation: u64,
    pub mean_reward: Option<f64>,
    pub mean_loss: Option<f64>,
    pub correlation: Option<f64>,
    pub odds_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBin {
    pub q: i64,
    pub r: i64,
    pub center: [f64; 2],
    pub sample_ids: Vec<u64>,
    pub validation_ids: Vec<u64>,
    #[serde(flatten)]
    pub aggregates: BinAggregates,
    /// `(iteration, mean loss)` ordered by iteration.
    pub loss_series: Vec<(u64, f64)>,
    pub reward_histogram: Option<RewardHistogram>,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    r.is_finite().then(|| r.clamp(-1.0, 1.0))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Scaled odds of validation vs. generated density: +1 only validation, -1 only
/// samples, 0 when the bin matches the global ratio.
pub fn odds_score(v: u64, s: u64, total_v: u64, total_s: u64) -> Option<f64> {
    if total_v == 0 || total_s == 0 || v + s == 0 {
        return None;
    }
    let a = v as f64 * total_s as f64;
    let b = s as f64 * total_v as f64;
    Some((a - b) / (a + b))
}

fn reward_histogram(rewards: impl Iterator<Item = f64>) -> Option<RewardHistogram> {
    let logs: Vec<f64> = rewards.filter(|r| *r > 0.0).map(f64::ln).collect();
    let lo = logs.iter().copied().reduce(f64::min)?;
    let hi = logs.iter().copied().reduce(f64::max)?;
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    for l in logs {
        let i = if width > 0.0 { ((l - lo) / width) as usize } else { 0 };
        counts[i.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Some(RewardHistogram { log_lo: lo, log_hi: hi, counts })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(
    q: i64,
    r: i64,
    grid: &HexGrid,
    samples: &[&ProjectedSample],
    validation: &[&ProjectedValidation],
    totals: (u64, u64),
    mode: CorrelationMode,
) -> HexBin {
    let (mut lp, mut lr) = (Vec::new(), Vec::new());
    let estimated = samples
        .iter()
        .map(|s| (s.log_ptx, s.reward))
        .chain(validation.iter().map(|v| (v.log_ptx, v.reward)));
    for (p, rew) in estimated {
        if let Some(p) = p {
            if rew > 0.0 && p.is_finite() {
                lp.push(p);
                lr.push(rew.ln());
            }
        }
    }
    let correlation = match mode {
        CorrelationMode::Pearson => pearson(&lp, &lr),
        CorrelationMode::Spearman => spearman(&lp, &lr),
    };

    let mut by_iter: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = by_iter.entry(s.iteration).or_default();
        e.0 += s.loss;
        e.1 += 1;
    }
    let (v, s) = (validation.len() as u64, samples.len() as u64);
    HexBin {
        q,
        r,
        center: grid.center(q, r),
        sample_ids: samples.iter().map(|s| s.trajectory_id).collect(),
        validation_ids: validation.iter().map(|v| v.id).collect(),
        aggregates: BinAggregates {
            count_samples: s,
            count_validation: v,
            mean_reward: mean(samples.iter().map(|s| s.reward)),
            mean_loss: mean(samples.iter().map(|s| s.loss)),
            correlation,
            odds_score: odds_score(v, s, totals.1, totals.0),
        },
        loss_series: by_iter.into_iter().map(|(i, (sum, n))| (i, sum / n as f64)).collect(),
        reward_histogram: reward_histogram(samples.iter().map(|s| s.reward)),
    }
}

/// Bins every sample and validation object; bins come back ordered by `(q, r)`.
pub fn bin_points(
    samples: &[ProjectedSample],
    validation: &[ProjectedValidation],
    grid: &HexGrid,
    mode: CorrelationMode,
) -> Vec<HexBin> {
    type Members<'a> = (Vec<&'a ProjectedSample>, Vec<&'a ProjectedValidation>);
    let mut cells: BTreeMap<(i64, i64), Members> = BTreeMap::new();
    for s in samples {
        cells.entry(grid.assign(s.point)).or_default().0.push(s);
    }
    for v in validation {
        cells.entry(grid.assign(v.point)).or_default().1.push(v);
    }
    let totals = (samples.len() as u64, validation.len() as u64);
    cells
        .into_iter()
        .map(|((q, r), (s, v))| aggregate(q, r, grid, &s, &v, totals, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn odds_anchors() {
        assert_eq!(odds_score(5, 0, 10, 10), Some(1.0));
        assert_eq!(odds_score(0, 7, 10, 10), Some(-1.0));
        assert_eq!(odds_score(3, 1, 30, 10), Some(0.0));
        assert!((odds_score(2, 1, 10, 10).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(odds_score(0, 0, 10, 10), None);
        assert_eq!(odds_score(1, 1, 0, 10), None);
        assert_eq!(odds_score(1, 1, 10, 0), None);
    }

    // textbook two-pass formula, written independently of `pearson`
    fn reference_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn correlation_examples() {
        let lr = [0.0, 2f64.ln(), 3f64.ln()];
        let lp = [-1.0, -2.0, -3.0];
        let got = pearson(&lp, &lr).unwrap();
        assert!((got - reference_pearson(&lp, &lr)).abs() < 1e-12);
        assert!((got - -0.988764).abs() < 1e-6);

        let shifted: Vec<f64> = lr.iter().map(|x| x + 4.2).collect();
        assert!((pearson(&shifted, &lr).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(pearson(&lp[..2], &lr[..2]), None);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &lr), None);
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    fn sample(id: u64, iteration: u64, reward: f64, loss: f64, point: [f64; 2]) -> ProjectedSample {
        ProjectedSample { trajectory_id: id, state_key: format!("s{id}"), iteration, reward, loss, log_ptx: None, point }
    }

    #[test]
    fn bins_aggregate_samples_only() {
        let grid = HexGrid::new([0.0, 0.0], 10.0).unwrap();
        let samples = vec![
            sample(0, 1, 1.0, 0.5, [0.1, 0.1]),
            sample(1, 1, 3.0, 1.5, [0.2, 0.0]),
            sample(2, 4, 2.0, 4.0, [0.0, 0.2]),
        ];
        let validation = vec![ProjectedValidation {
            id: 0,
            state_key: "v".into(),
            reward: 100.0,
            log_ptx: None,
            point: [0.0, 0.0],
        }];
        let bins = bin_points(&samples, &validation, &grid, CorrelationMode::Pearson);
        assert_eq!(bins.len(), 1);
        let b = &bins[0];
        assert_eq!((b.q, b.r), (0, 0));
        assert_eq!(b.aggregates.mean_reward, Some(2.0));
        assert_eq!(b.aggregates.mean_loss, Some(2.0));
        assert_eq!(b.loss_series, vec![(1, 1.0), (4, 4.0)]);
        assert_eq!(b.aggregates.odds_score, Some(0.0));
        let h = b.reward_histogram.as_ref().unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 3);
        assert_eq!((h.counts[0], h.counts[HISTOGRAM_BINS - 1]), (1, 1));
        assert_eq!(b.aggregates.correlation, None);
    }

    #[test]
    fn validation_only_bin_has_no_sample_means() {
        let grid = HexGrid::new([0.0, 0.0], 0.1).unwrap();
        let samples = vec![sample(0, 0, 1.0, 1.0, [0.0, 0.0])];
        let validation = vec![ProjectedValidation { id: 3, state_key: "v".into(), reward: 1.0, log_ptx: None, point: [5.0, 5.0] }];
        let bins = bin_points(&samples, &validation, &grid, CorrelationMode::Pearson);
        let v = bins.iter().find(|b| b.validation_ids == vec![3]).unwrap();
        assert_eq!(v.aggregates.mean_reward, None);
        assert_eq!(v.aggregates.odds_score, Some(1.0));
        assert!(v.reward_histogram.is_none());
    }

    proptest! {
        #[test]
        fn odds_antisymmetric_and_scale_free(v in 0u64..1000, s in 0u64..1000, dv in 0u64..1000, ds in 0u64..1000, k in 1u64..50) {
            let (tv, ts) = (v + dv, s + ds);
            let a = odds_score(v, s, tv, ts);
            let b = odds_score(s, v, ts, tv);
            prop_assert_eq!(a.map(|x| -x), b);
            if let Some(a) = a {
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert!((odds_score(v * k, s, tv * k, ts).unwrap() - a).abs() < 1e-12);
                prop_assert!((odds_score(v, s * k, tv, ts * k).unwrap() - a).abs() < 1e-12);
            }
        }

        #[test]
        fn correlation_bounded(pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            for c in [pearson(&x, &y), spearman(&x, &y)].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn affine_relation_gives_unit_correlation(
            x in proptest::collection::vec(-20f64..20.0, 3..30), slope in 0.01f64..10.0, c in -10f64..10.0
        ) {
            let y: Vec<f64> = x.iter().map(|v| slope * v + c).collect();
            if let Some(r) = pearson(&y, &x) {
                prop_assert!((r - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn every_point_in_exactly_one_bin(
            pts in proptest::collection::vec((-5f64..5.0, -5f64..5.0), 0..60), cols in 1usize..30
        ) {
            let samples: Vec<ProjectedSample> = pts.iter().enumerate().map(|(i, p)| sample(i as u64, 0, 1.0, 1.0, [p.0, p.1])).collect();
            let coords: Vec<[f64; 2]> = samples.iter().map(|s| s.point).collect();
            let grid = HexGrid::from_resolution(&coords, cols).unwrap();
            let bins = bin_points(&samples, &[], &grid, CorrelationMode::Pearson);
            let mut ids: Vec<u64> = bins.iter().flat_map(|b| b.sample_ids.clone()).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..samples.len() as u64).collect::<Vec<_>>());
        }
    }
}
