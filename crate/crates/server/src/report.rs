//! `flowscope report`: a static JSON + SVG summary of ranking, projection and heatmap.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowscope_core::analytics::{Direction, HeatMetric, HeatmapRow, HexBin, HexGrid, RankMetric, RankingFrame};
use serde_json::json;

use crate::api::{AppState, BinSummary, ProjectionParams, RangeQuery};
use crate::error::Result;
use crate::json;

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub top_n: usize,
    pub top_transitions: usize,
    pub resolution: usize,
    pub discovery_window: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { top_n: 20, top_transitions: 30, resolution: 20, discovery_window: 200 }
    }
}

const PANEL: f64 = 360.0;
const PAD: f64 = 30.0;

/// Writes `report.json` and `report.svg` into `out_dir`; returns their paths.
pub fn write_report(db: &Path, out_dir: &Path, opts: &ReportOptions) -> Result<(PathBuf, PathBuf)> {
    let st = AppState::open(db)?;
    let range = st.range(RangeQuery::default())?;
    let frames = st.ranking(RankMetric::Reward, opts.top_n, range)?;
    let params = ProjectionParams { resolution: opts.resolution, ..Default::default() };
    let (grid, bins) = st.bins(&params, range)?;
    let rows = st.heatmap(HeatMetric::Frequency, Direction::Forward, opts.top_transitions, range)?;
    let discovery = flowscope_core::analytics::discovery_events(&frames, opts.discovery_window);
    let best_window = discovery.iter().max_by_key(|(it, n)| (*n, std::cmp::Reverse(*it))).copied();

    let summary = json!({
        "run": st.run_info()?,
        "ranking": {
            "metric": "reward",
            "n": opts.top_n,
            "final": frames.last(),
            "largest_discovery_window": best_window.map(|(it, n)| json!({
                "from": it, "window": opts.discovery_window, "new_entries": n
            })),
        },
        "projection": {
            "grid": grid,
            "bins": bins.iter().map(BinSummary::from).collect::<Vec<_>>(),
        },
        "transitions": { "metric": "frequency", "rows": rows },
    });
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, json::to_vec_pretty(&summary)?)?;
    let svg_path = out_dir.join("report.svg");
    std::fs::write(&svg_path, svg(&frames, opts.top_n, &grid, &bins, &rows))?;
    Ok((json_path, svg_path))
}

fn color(t: f64) -> String {
    // light yellow to dark blue
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(247.0, 48.0), lerp(188.0, 107.0))
}

fn svg(frames: &[RankingFrame], n: usize, grid: &HexGrid, bins: &[HexBin], rows: &[HeatmapRow]) -> String {
    let width = 3.0 * PANEL + 4.0 * PAD;
    let height = PANEL + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    bump_chart(&mut s, frames, n, PAD);
    hexmap(&mut s, grid, bins, 2.0 * PAD + PANEL);
    heatmap(&mut s, rows, 3.0 * PAD + 2.0 * PANEL);
    s.push_str("</svg>\n");
    s
}

fn bump_chart(s: &mut String, frames: &[RankingFrame], n: usize, x0: f64) {
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">Sample ranking (top {n} by reward)</text>"#, PAD - 10.0);
    if frames.is_empty() {
        return;
    }
    let step = frames.len().div_ceil(200).max(1);
    let shown: Vec<&RankingFrame> = frames.iter().step_by(step).chain(frames.last()).collect();
    let (first, last) = (shown[0].iteration as f64, shown[shown.len() - 1].iteration as f64);
    let span = (last - first).max(1.0);
    let mut lines: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for f in &shown {
        let x = x0 + (f.iteration as f64 - first) / span * PANEL;
        for e in &f.entries {
            let y = PAD + (e.rank as f64 - 0.5) / n.max(1) as f64 * PANEL;
            lines.entry(e.terminal_key.as_str()).or_default().push((x, y));
        }
    }
    for (i, (key, pts)) in lines.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let hue = (i * 47) % 360;
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="hsl({hue},60%,45%)" stroke-width="1.5" points="{}"><title>{key}</title></polyline>"#,
            path.join(" ")
        );
    }
}

fn hexmap(s: &mut String, grid: &HexGrid, bins: &[HexBin], x0: f64) {
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">State projection (mean log reward)</text>"#, PAD - 10.0);
    if bins.is_empty() {
        return;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for b in bins {
        for d in 0..2 {
            lo[d] = lo[d].min(b.center[d] - grid.radius);
            hi[d] = hi[d].max(b.center[d] + grid.radius);
        }
    }
    let scale = PANEL / (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::EPSILON);
    let logs: Vec<f64> = bins.iter().filter_map(|b| b.aggregates.mean_reward).map(f64::ln).collect();
    let (rlo, rhi) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    for b in bins {
        let cx = x0 + (b.center[0] - lo[0]) * scale;
        let cy = PAD + PANEL - (b.center[1] - lo[1]) * scale;
        let pts: Vec<String> = (0..6)
            .map(|k| {
                let a = std::f64::consts::PI / 180.0 * (60.0 * k as f64 - 30.0);
                format!("{:.1},{:.1}", cx + grid.radius * scale * a.cos(), cy + grid.radius * scale * a.sin())
            })
            .collect();
        let fill = match b.aggregates.mean_reward {
            Some(r) if rhi > rlo => color((r.ln() - rlo) / (rhi - rlo)),
            Some(_) => color(0.5),
            None => "#dddddd".to_string(),
        };
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="{fill}" stroke="#999" stroke-width="0.3"><title>({}, {}) samples {} validation {}</title></polygon>"##,
            pts.join(" "),
            b.q,
            b.r,
            b.aggregates.count_samples,
            b.aggregates.count_validation
        );
    }
}

fn heatmap(s: &mut String, rows: &[HeatmapRow], x0: f64) {
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">Transitions (top {} by frequency)</text>"#, PAD - 10.0, rows.len());
    let (mut first, mut last) = (u64::MAX, 0);
    for r in rows {
        if let (Some(a), Some(b)) = (r.active_iterations.first(), r.active_iterations.last()) {
            first = first.min(*a);
            last = last.max(*b);
        }
    }
    if rows.is_empty() || first > last {
        return;
    }
    let cols = 120usize;
    let span = (last - first + 1) as f64;
    let cw = PANEL / cols as f64;
    let rh = PANEL / rows.len() as f64;
    for (i, r) in rows.iter().enumerate() {
        let mut hits = vec![0u32; cols];
        for it in &r.active_iterations {
            let c = (((it - first) as f64 / span) * cols as f64) as usize;
            hits[c.min(cols - 1)] += 1;
        }
        let max = hits.iter().copied().max().unwrap_or(1).max(1) as f64;
        for (c, h) in hits.iter().enumerate().filter(|(_, h)| **h > 0) {
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cw:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + c as f64 * cw,
                PAD + i as f64 * rh,
                rh * 0.9,
                color(0.2 + 0.8 * *h as f64 / max)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{:.1}" width="{PANEL}" height="{rh:.2}" fill="none"><title>#{} {} -> {} ({})</title></rect>"#,
            PAD + i as f64 * rh,
            r.rank,
            r.src_key,
            r.dst_key,
            r.frequency
        );
    }
}
