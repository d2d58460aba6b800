//! Everything the four views display, computed from store rows and the DAG.

mod heatmap;
mod hexbin;
mod metrics;
mod projection;
mod ranking;

pub use heatmap::{transition_heatmap, transition_history, Direction, HeatMetric, HeatmapRow, HistoryPoint};
pub use hexbin::{hexbin_assign, HexGrid, DEFAULT_RESOLUTION};
pub use metrics::{
    bin_points, odds_score, pearson, spearman, BinAggregates, CorrelationMode, HexBin, ProjectedSample,
    ProjectedValidation, RewardHistogram, HISTOGRAM_BINS,
};
pub use projection::{project, ProjectionMethod};
pub use ranking::{discovery_events, ranking, RankEntry, RankMetric, RankingFrame};
