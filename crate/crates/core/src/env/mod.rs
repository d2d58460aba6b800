//! Environment abstraction.
//!
//! Everything downstream of training (store, DAG engine, analytics) talks about
//! states only through their string keys, feature vectors and render specs. A new
//! environment implements [`Environment`] and the rest of the crate works unchanged.

mod grid;

use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use grid::{GridAction, GridConfig, GridEnv, GridState, Interval};

/// Result of applying a forward action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step<S> {
    Next(S),
    /// The stop action was taken; carries the final object.
    Terminal(S),
}

/// Drawing data for one state or a set of states.
///
/// Serializes as `{"kind": ..., "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum RenderSpec {
    /// A grid with a set of highlighted cells, each `[x, y]`.
    GridHighlight { height: u32, cells: Vec<[u32; 2]> },
    /// Per-cell counts, `counts[y][x]`.
    GridDensity { height: u32, counts: Vec<Vec<u64>> },
    Text(String),
}

/// The hooks an environment provides: MDP structure, reward, and the four
/// integration functions (key format, features, single- and multi-state rendering).
pub trait Environment: Send + Sync {
    type State: Clone + Eq + Hash + Ord + Debug + Send + Sync;
    type Action: Copy + Eq + Debug + Send + Sync;

    /// Short identifier stored with each run (`"grid"`).
    fn name(&self) -> &'static str;

    fn source(&self) -> Self::State;

    fn valid_forward_actions(&self, s: &Self::State) -> Result<Vec<Self::Action>>;

    fn apply_action(&self, s: &Self::State, a: Self::Action) -> Result<Step<Self::State>>;

    /// Parents of `s`, each paired with the forward action leading from the parent to `s`.
    fn parents(&self, s: &Self::State) -> Result<Vec<(Self::State, Self::Action)>>;

    fn reward(&self, s: &Self::State) -> Result<f64>;

    fn state_key(&self, s: &Self::State) -> String;

    fn parse_key(&self, key: &str) -> Result<Self::State>;

    fn features(&self, s: &Self::State) -> Vec<f64>;

    fn render_state(&self, s: &Self::State) -> RenderSpec;

    fn render_states(&self, states: &[Self::State]) -> RenderSpec;

    // Action layout used by the policy heads.

    fn feature_dim(&self) -> usize;

    /// Encoding fed to the policy network. Defaults to [`Environment::features`].
    fn policy_input(&self, s: &Self::State) -> Vec<f64> {
        self.features(s)
    }

    fn policy_input_dim(&self) -> usize {
        self.feature_dim()
    }

    /// Size of the forward head (all forward actions, including stop).
    fn forward_head_size(&self) -> usize;

    /// Size of the backward head (one slot per non-stop action).
    fn backward_head_size(&self) -> usize;

    fn forward_index(&self, a: Self::Action) -> usize;

    /// Backward-head slot for the parent reached by undoing `a`. Only defined for non-stop actions.
    fn backward_index(&self, a: Self::Action) -> usize;

    fn is_stop(&self, a: Self::Action) -> bool;

    fn action_label(&self, a: Self::Action) -> &'static str;

    fn parse_action(&self, label: &str) -> Result<Self::Action>;

    /// Upper bound on trajectory length; sampling fails fast beyond it.
    fn max_trajectory_len(&self) -> usize;

    /// Every state in an order where parents precede children, or `None` if the
    /// space is not enumerable. Implementations may refuse with a capability error.
    fn enumerate_states(&self) -> Result<Option<Vec<Self::State>>>;
}
