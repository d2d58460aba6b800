use serde::{Deserialize, Serialize};

use super::{Environment, RenderSpec, Step};
use crate::error::{domain, CoreError, Result};

/// Largest state space [`GridEnv::enumerate_states`] will materialize.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// A real interval with independently open or closed endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const fn open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: false, hi_closed: false }
    }

    /// `(lo, hi]`
    pub const fn left_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: false, hi_closed: true }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    fn is_within(&self, outer: &Interval) -> bool {
        let lo_ok = self.lo > outer.lo || (self.lo == outer.lo && (outer.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < outer.hi || (self.hi == outer.hi && (outer.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub height: u32,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub outer: Interval,
    pub inner: Interval,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 20,
            r0: 0.001,
            r1: 0.5,
            r2: 2.0,
            outer: Interval::left_open(0.25, 0.5),
            inner: Interval::open(0.3, 0.4),
        }
    }
}

impl GridConfig {
    pub fn with_height(height: u32) -> Self {
        Self { height, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 {
            return domain(format!("grid height must be at least 2, got {}", self.height));
        }
        if !(self.r0 > 0.0 && self.r1 > 0.0 && self.r2 > 0.0) {
            return domain("reward parameters r0, r1, r2 must be positive");
        }
        if !self.inner.is_within(&self.outer) || self.inner == self.outer {
            return domain("inner mode band must lie strictly inside the outer band");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub x: u32,
    pub y: u32,
}

impl GridState {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridAction {
    IncX,
    IncY,
    Stop,
}

/// The two-dimensional grid: start at (0,0), move +x or +y, stop anywhere.
#[derive(Debug, Clone)]
pub struct GridEnv {
    cfg: GridConfig,
}

impl GridEnv {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn height(&self) -> u32 {
        self.cfg.height
    }

    fn check(&self, s: &GridState) -> Result<()> {
        if s.x >= self.cfg.height || s.y >= self.cfg.height {
            return domain(format!("state ({},{}) outside a grid of height {}", s.x, s.y, self.cfg.height));
        }
        Ok(())
    }

    fn axis_in(&self, v: u32, band: &Interval) -> bool {
        let d = (v as f64 / (self.cfg.height - 1) as f64 - 0.5).abs();
        band.contains(d)
    }

    pub fn all_states(&self) -> impl Iterator<Item = GridState> + '_ {
        let h = self.cfg.height;
        (0..h).flat_map(move |x| (0..h).map(move |y| GridState::new(x, y)))
    }
}

impl Environment for GridEnv {
    type State = GridState;
    type Action = GridAction;

    fn name(&self) -> &'static str {
        "grid"
    }

    fn source(&self) -> GridState {
        GridState::new(0, 0)
    }

    fn valid_forward_actions(&self, s: &GridState) -> Result<Vec<GridAction>> {
        self.check(s)?;
        let mut out = Vec::with_capacity(3);
        if s.x + 1 < self.cfg.height {
            out.push(GridAction::IncX);
        }
        if s.y + 1 < self.cfg.height {
            out.push(GridAction::IncY);
        }
        out.push(GridAction::Stop);
        Ok(out)
    }

    fn apply_action(&self, s: &GridState, a: GridAction) -> Result<Step<GridState>> {
        self.check(s)?;
        let h = self.cfg.height;
        match a {
            GridAction::IncX if s.x + 1 < h => Ok(Step::Next(GridState::new(s.x + 1, s.y))),
            GridAction::IncY if s.y + 1 < h => Ok(Step::Next(GridState::new(s.x, s.y + 1))),
            GridAction::Stop => Ok(Step::Terminal(*s)),
            _ => domain(format!("action {a:?} leaves the grid from ({},{})", s.x, s.y)),
        }
    }

    fn parents(&self, s: &GridState) -> Result<Vec<(GridState, GridAction)>> {
        self.check(s)?;
        let mut out = Vec::with_capacity(2);
        if s.x > 0 {
            out.push((GridState::new(s.x - 1, s.y), GridAction::IncX));
        }
        if s.y > 0 {
            out.push((GridState::new(s.x, s.y - 1), GridAction::IncY));
        }
        Ok(out)
    }

    fn reward(&self, s: &GridState) -> Result<f64> {
        self.check(s)?;
        let c = &self.cfg;
        let outer = self.axis_in(s.x, &c.outer) && self.axis_in(s.y, &c.outer);
        let inner = self.axis_in(s.x, &c.inner) && self.axis_in(s.y, &c.inner);
        Ok(c.r0 + if outer { c.r1 } else { 0.0 } + if inner { c.r2 } else { 0.0 })
    }

    fn state_key(&self, s: &GridState) -> String {
        format!("{},{}", s.x, s.y)
    }

    fn parse_key(&self, key: &str) -> Result<GridState> {
        let bad = || CoreError::BadKey(key.to_string());
        let (x, y) = key.split_once(',').ok_or_else(bad)?;
        // reject signs and whitespace so that parse is the exact inverse of state_key
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        if !digits(x) || !digits(y) {
            return Err(bad());
        }
        let s = GridState::new(x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?);
        if self.state_key(&s) != key {
            return Err(bad());
        }
        self.check(&s)?;
        Ok(s)
    }

    fn features(&self, s: &GridState) -> Vec<f64> {
        let span = (self.cfg.height - 1) as f64;
        vec![s.x as f64 / span, s.y as f64 / span]
    }

    fn render_state(&self, s: &GridState) -> RenderSpec {
        RenderSpec::GridHighlight { height: self.cfg.height, cells: vec![[s.x, s.y]] }
    }

    fn render_states(&self, states: &[GridState]) -> RenderSpec {
        let h = self.cfg.height as usize;
        let mut counts = vec![vec![0u64; h]; h];
        for s in states {
            if let Some(cell) = counts.get_mut(s.y as usize).and_then(|row| row.get_mut(s.x as usize)) {
                *cell += 1;
            }
        }
        RenderSpec::GridDensity { height: self.cfg.height, counts }
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn policy_input(&self, s: &GridState) -> Vec<f64> {
        let h = self.cfg.height as usize;
        let mut v = vec![0.0; 2 * h];
        v[s.x as usize] = 1.0;
        v[h + s.y as usize] = 1.0;
        v
    }

    fn policy_input_dim(&self) -> usize {
        2 * self.cfg.height as usize
    }

    fn forward_head_size(&self) -> usize {
        3
    }

    fn backward_head_size(&self) -> usize {
        2
    }

    fn forward_index(&self, a: GridAction) -> usize {
        match a {
            GridAction::IncX => 0,
            GridAction::IncY => 1,
            GridAction::Stop => 2,
        }
    }

    fn backward_index(&self, a: GridAction) -> usize {
        match a {
            GridAction::IncX => 0,
            GridAction::IncY => 1,
            GridAction::Stop => unreachable!("stop has no backward slot"),
        }
    }

    fn is_stop(&self, a: GridAction) -> bool {
        a == GridAction::Stop
    }

    fn action_label(&self, a: GridAction) -> &'static str {
        match a {
            GridAction::IncX => "inc_x",
            GridAction::IncY => "inc_y",
            GridAction::Stop => "stop",
        }
    }

    fn parse_action(&self, label: &str) -> Result<GridAction> {
        match label {
            "inc_x" => Ok(GridAction::IncX),
            "inc_y" => Ok(GridAction::IncY),
            "stop" => Ok(GridAction::Stop),
            other => domain(format!("unknown grid action {other:?}")),
        }
    }

    fn max_trajectory_len(&self) -> usize {
        4 * self.cfg.height as usize
    }

    fn enumerate_states(&self) -> Result<Option<Vec<GridState>>> {
        let h = self.cfg.height as u64;
        if h * h > ENUMERATION_LIMIT {
            return Err(CoreError::Capability(format!(
                "grid of height {h} has {} states, above the enumeration limit {ENUMERATION_LIMIT}",
                h * h
            )));
        }
        let h = self.cfg.height;
        // anti-diagonals: every parent has x+y one smaller than its child
        let mut out = Vec::with_capacity((h * h) as usize);
        for d in 0..=(2 * (h - 1)) {
            for x in d.saturating_sub(h - 1)..=d.min(h - 1) {
                out.push(GridState::new(x, d - x));
            }
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GridAction::*;

    fn env(h: u32) -> GridEnv {
        GridEnv::new(GridConfig::with_height(h)).unwrap()
    }

    fn s(x: u32, y: u32) -> GridState {
        GridState::new(x, y)
    }

    #[test]
    fn forward_actions_at_boundaries() {
        let e = env(20);
        assert_eq!(e.valid_forward_actions(&s(0, 0)).unwrap(), vec![IncX, IncY, Stop]);
        assert_eq!(e.valid_forward_actions(&s(19, 19)).unwrap(), vec![Stop]);
        assert_eq!(e.valid_forward_actions(&s(19, 4)).unwrap(), vec![IncY, Stop]);
        assert!(e.valid_forward_actions(&s(20, 0)).is_err());
    }

    #[test]
    fn apply_moves_and_stop() {
        let e = env(20);
        assert_eq!(e.apply_action(&s(14, 3), IncY).unwrap(), Step::Next(s(14, 4)));
        assert_eq!(e.apply_action(&s(0, 0), Stop).unwrap(), Step::Terminal(s(0, 0)));
        assert!(e.apply_action(&s(19, 19), IncX).is_err());
    }

    #[test]
    fn parents_enumeration() {
        let e = env(20);
        assert!(e.parents(&s(0, 0)).unwrap().is_empty());
        assert_eq!(e.parents(&s(1, 1)).unwrap(), vec![(s(0, 1), IncX), (s(1, 0), IncY)]);
        assert_eq!(e.parents(&s(0, 5)).unwrap(), vec![(s(0, 4), IncY)]);
    }

    #[test]
    fn reward_defaults() {
        let e = env(20);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(e.reward(&s(0, 0)).unwrap(), 0.501));
        assert!(close(e.reward(&s(10, 10)).unwrap(), 0.001));
        assert!(close(e.reward(&s(2, 2)).unwrap(), 2.501));
    }

    #[test]
    fn keys_and_features() {
        let e = env(20);
        assert_eq!(e.state_key(&s(14, 4)), "14,4");
        assert_eq!(e.state_key(&s(0, 0)), "0,0");
        assert_eq!(e.parse_key("7,19").unwrap(), s(7, 19));
        for bad in ["7, 19", "+7,19", "07,19", "7", "20,0", "", ","] {
            assert!(e.parse_key(bad).is_err(), "{bad:?} should be rejected");
        }
        assert_eq!(e.features(&s(0, 0)), vec![0.0, 0.0]);
        assert_eq!(e.features(&s(19, 19)), vec![1.0, 1.0]);
        let f = e.features(&s(14, 4));
        assert!((f[0] - 14.0 / 19.0).abs() < 1e-15 && (f[1] - 4.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn rendering() {
        let e = env(20);
        assert_eq!(
            e.render_state(&s(14, 4)),
            RenderSpec::GridHighlight { height: 20, cells: vec![[14, 4]] }
        );
        let RenderSpec::GridDensity { counts, .. } = e.render_states(&[]) else { panic!() };
        assert!(counts.iter().flatten().all(|&c| c == 0));
        let RenderSpec::GridDensity { counts, .. } = e.render_states(&[s(2, 2), s(2, 2), s(3, 2)]) else {
            panic!()
        };
        assert_eq!(counts[2][2], 2);
        assert_eq!(counts[2][3], 1);
        assert_eq!(counts.iter().flatten().sum::<u64>(), 3);

        let json = serde_json::to_value(e.render_state(&s(1, 2))).unwrap();
        assert_eq!(json["kind"], "GridHighlight");
        assert_eq!(json["payload"]["cells"][0][1], 2);
    }

    #[test]
    fn config_validation() {
        assert!(GridEnv::new(GridConfig::with_height(1)).is_err());
        let mut c = GridConfig::default();
        c.r0 = 0.0;
        assert!(GridEnv::new(c).is_err());
        let mut c = GridConfig::default();
        c.inner = c.outer;
        assert!(GridEnv::new(c).is_err());
        let mut c = GridConfig::default();
        c.inner = Interval::open(0.2, 0.4);
        assert!(GridEnv::new(c).is_err());
    }

    #[test]
    fn parent_child_duality_exhaustive() {
        for h in 2..=20 {
            let e = env(h);
            for st in e.all_states() {
                for (p, a) in e.parents(&st).unwrap() {
                    assert_eq!(e.apply_action(&p, a).unwrap(), Step::Next(st));
                }
                for a in e.valid_forward_actions(&st).unwrap() {
                    if let Step::Next(child) = e.apply_action(&st, a).unwrap() {
                        assert!(e.parents(&child).unwrap().iter().any(|(p, _)| *p == st));
                    }
                }
                assert!(e.reward(&st).unwrap() >= e.config().r0);
            }
        }
    }

    #[test]
    fn state_key_is_injective() {
        let e = env(20);
        let keys: std::collections::HashSet<_> = e.all_states().map(|st| e.state_key(&st)).collect();
        assert_eq!(keys.len(), 400);
        for st in e.all_states() {
            assert_eq!(e.parse_key(&e.state_key(&st)).unwrap(), st);
        }
    }

    #[test]
    fn trajectory_counts_are_binomial() {
        // brute-force walk enumeration
        fn count(e: &GridEnv, cur: GridState, target: GridState) -> u64 {
            let mut n = 0;
            for a in e.valid_forward_actions(&cur).unwrap() {
                match e.apply_action(&cur, a).unwrap() {
                    Step::Terminal(t) if t == target => n += 1,
                    Step::Next(next) if next.x <= target.x && next.y <= target.y => n += count(e, next, target),
                    _ => {}
                }
            }
            n
        }
        fn binom(n: u64, k: u64) -> u64 {
            (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
        }
        let e = env(12);
        for x in 0..=10u32 {
            for y in 0..=(10 - x) {
                assert_eq!(count(&e, s(0, 0), s(x, y)), binom((x + y) as u64, x as u64), "({x},{y})");
            }
        }
    }

    #[test]
    fn enumeration_is_topological() {
        let e = env(7);
        let order = e.enumerate_states().unwrap().unwrap();
        assert_eq!(order.len(), 49);
        let pos: std::collections::HashMap<_, _> = order.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        for st in &order {
            for (p, _) in e.parents(st).unwrap() {
                assert!(pos[&p] < pos[st]);
            }
        }
        assert!(env(1001).enumerate_states().is_err());
    }
}
