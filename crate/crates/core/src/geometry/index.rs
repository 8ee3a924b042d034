use std::collections::HashMap;

use super::STPoint;

/// Uniform space-time binning of points for fixed-range neighbour queries.
///
/// Bins hold copies of the points, so insertion and removal keep the index in
/// sync with a mutable configuration without any renumbering.
#[derive(Debug, Clone)]
pub struct BinIndex {
    cell: [f64; 3],
    bins: HashMap<(i64, i64, i64), Vec<STPoint>>,
    len: usize,
}

impl BinIndex {
    /// Empty index with bins of size `(sx, sx, st)`. Non-positive sizes fall back to 1.
    pub fn new(sx: f64, st: f64) -> Self {
        let fix = |v: f64| if v.is_finite() && v > 0.0 { v } else { 1.0 };
        BinIndex { cell: [fix(sx), fix(sx), fix(st)], bins: HashMap::new(), len: 0 }
    }

    /// Index sized for Markov-range queries of a ladder with largest scale `(r_m, t_m)`.
    pub fn for_range(r_max: f64, t_max: f64) -> Self {
        BinIndex::new(2.0 * r_max, 2.0 * t_max)
    }

    pub fn from_points(points: &[STPoint], sx: f64, st: f64) -> Self {
        let mut idx = BinIndex::new(sx, st);
        for p in points {
            idx.insert(*p);
        }
        idx
    }

    fn key(&self, x: f64, y: f64, t: f64) -> (i64, i64, i64) {
        ((x / self.cell[0]).floor() as i64, (y / self.cell[1]).floor() as i64, (t / self.cell[2]).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, p: STPoint) {
        let k = self.key(p.x, p.y, p.t);
        self.bins.entry(k).or_default().push(p);
        self.len += 1;
    }

    /// Removes one copy of `p`; returns false if it was not present.
    pub fn remove(&mut self, p: &STPoint) -> bool {
        let k = self.key(p.x, p.y, p.t);
        let Some(bin) = self.bins.get_mut(&k) else {
            return false;
        };
        let Some(pos) = bin.iter().position(|q| q == p) else {
            return false;
        };
        bin.swap_remove(pos);
        if bin.is_empty() {
            self.bins.remove(&k);
        }
        self.len -= 1;
        true
    }

    /// Appends to `out` every point `q` with spatial distance `<= reach_xy` and
    /// temporal distance `<= reach_t` from `p`.
    pub fn within(&self, p: &STPoint, reach_xy: f64, reach_t: f64, out: &mut Vec<STPoint>) {
        let lo = self.key(p.x - reach_xy, p.y - reach_xy, p.t - reach_t);
        let hi = self.key(p.x + reach_xy, p.y + reach_xy, p.t + reach_t);
        let r2 = reach_xy * reach_xy;
        for bx in lo.0..=hi.0 {
            for by in lo.1..=hi.1 {
                for bt in lo.2..=hi.2 {
                    if let Some(bin) = self.bins.get(&(bx, by, bt)) {
                        out.extend(
                            bin.iter().filter(|q| p.spatial_distance_sq(q) <= r2 && (p.t - q.t).abs() <= reach_t),
                        );
                    }
                }
            }
        }
    }

    /// Points whose `(r, h)` cylinders meet the one around `p`: spatial
    /// distance `<= 2r` and temporal distance `<= 2h`.
    pub fn neighbors(&self, p: &STPoint, r: f64, h: f64) -> Vec<STPoint> {
        let mut out = Vec::new();
        self.within(p, 2.0 * r, 2.0 * h, &mut out);
        out
    }
}

/// One-off neighbour query over a point list, through a freshly built index.
pub fn neighbor_query(p: &STPoint, points: &[STPoint], r: f64, h: f64) -> Vec<STPoint> {
    BinIndex::from_points(points, 2.0 * r, 2.0 * h).neighbors(p, r, h)
}
