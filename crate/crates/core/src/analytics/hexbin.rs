use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const DEFAULT_RESOLUTION: usize = 20;

/// Pointy-top hexagonal lattice with circumradius `radius`, anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexGrid {
    pub origin: [f64; 2],
    pub radius: f64,
}

impl HexGrid {
    pub fn new(origin: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return domain(format!("hex radius must be positive, got {radius}"));
        }
        Ok(Self { origin, radius })
    }

    /// Sizes the lattice so that `columns` hexes span the x-extent of `points`.
    pub fn from_resolution(points: &[[f64; 2]], columns: usize) -> Result<Self> {
        if columns == 0 {
            return domain("resolution must be at least one column");
        }
        let (mut x0, mut x1, mut y0) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
        }
        let mut extent = x1 - x0;
        if !(extent > 0.0 && extent.is_finite()) {
            extent = 1.0;
        }
        let origin = if points.is_empty() { [0.0, 0.0] } else { [x0, y0] };
        let width = extent / columns as f64;
        Self::new(origin, width / 3f64.sqrt())
    }

    pub fn assign(&self, p: [f64; 2]) -> (i64, i64) {
        let x = p[0] - self.origin[0];
        let y = p[1] - self.origin[1];
        let q = (3f64.sqrt() / 3.0 * x - y / 3.0) / self.radius;
        let r = (2.0 / 3.0 * y) / self.radius;
        cube_round(q, r)
    }

    pub fn center(&self, q: i64, r: i64) -> [f64; 2] {
        let (q, r) = (q as f64, r as f64);
        [
            self.origin[0] + self.radius * 3f64.sqrt() * (q + r / 2.0),
            self.origin[1] + self.radius * 1.5 * r,
        ]
    }
}

fn cube_round(q: f64, r: f64) -> (i64, i64) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i64, rr as i64)
}

pub fn hexbin_assign(point: [f64; 2], grid: &HexGrid) -> Result<(i64, i64)> {
    if !(grid.radius > 0.0) {
        return domain("hex radius must be positive");
    }
    Ok(grid.assign(point))
}
