use super::{Cylinder, GridResolution, STPoint, ScaleLadder, Window};
use crate::error::{Error, Result};

/// Regular lattice of cells; a cell is counted by testing its midpoint.
///
/// Time membership of a whole column of cells is packed into `u64` words so
/// that a covering cylinder costs one OR per spatial column it touches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    pub x0: f64,
    pub y0: f64,
    pub t0: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl CellGrid {
    /// Grid anchored to the bounding box of `c`.
    pub fn for_cylinder(c: &Cylinder, res: GridResolution) -> Self {
        let n = res.n_xy();
        let nt = res.n_t();
        CellGrid {
            x0: c.center.x - c.r,
            y0: c.center.y - c.r,
            t0: c.center.t - c.h,
            dx: 2.0 * c.r / n as f64,
            dy: 2.0 * c.r / n as f64,
            dt: 2.0 * c.h / nt as f64,
            nx: n,
            ny: n,
            nt,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dt
    }

    pub fn cell_diameter(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dt * self.dt).sqrt()
    }

    #[inline]
    pub fn xc(&self, ix: usize) -> f64 {
        self.x0 + (ix as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn yc(&self, iy: usize) -> f64 {
        self.y0 + (iy as f64 + 0.5) * self.dy
    }

    #[inline]
    pub fn tc(&self, it: usize) -> f64 {
        self.t0 + (it as f64 + 0.5) * self.dt
    }

    fn words(&self) -> usize {
        self.nt.div_ceil(64)
    }

    /// Index range of cell midpoints that may fall in `[lo, hi]` (one cell of slack).
    fn span(origin: f64, step: f64, n: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let a = ((lo - origin) / step - 0.5).floor() - 1.0;
        let b = ((hi - origin) / step - 0.5).ceil() + 1.0;
        if b < 0.0 || a > (n - 1) as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, (b.min((n - 1) as f64)) as usize))
    }

    /// Bitmask of time cells inside `c`'s temporal extent (and the window's, if given).
    fn time_bits(&self, c: &Cylinder, window: Option<&Window>) -> Vec<u64> {
        let mut bits = vec![0u64; self.words()];
        if let Some((lo, hi)) = Self::span(self.t0, self.dt, self.nt, c.center.t - c.h, c.center.t + c.h) {
            for it in lo..=hi {
                let t = self.tc(it);
                if c.contains_t(t) && window.is_none_or(|w| w.contains_time(t)) {
                    bits[it / 64] |= 1u64 << (it % 64);
                }
            }
        }
        bits
    }

    /// Per-column OR of the time masks of every cylinder covering that column.
    fn covered_columns<'a>(&self, covers: impl IntoIterator<Item = &'a Cylinder>) -> Vec<u64> {
        let words = self.words();
        let mut covered = vec![0u64; self.nx * self.ny * words];
        for cov in covers {
            let bits = self.time_bits(cov, None);
            if bits.iter().all(|&b| b == 0) {
                continue;
            }
            let Some((ix0, ix1)) = Self::span(self.x0, self.dx, self.nx, cov.center.x - cov.r, cov.center.x + cov.r)
            else {
                continue;
            };
            let Some((iy0, iy1)) = Self::span(self.y0, self.dy, self.ny, cov.center.y - cov.r, cov.center.y + cov.r)
            else {
                continue;
            };
            for iy in iy0..=iy1 {
                let y = self.yc(iy);
                for ix in ix0..=ix1 {
                    if cov.contains_xy(self.xc(ix), y) {
                        let base = (iy * self.nx + ix) * words;
                        for (w, b) in bits.iter().enumerate() {
                            covered[base + w] |= b;
                        }
                    }
                }
            }
        }
        covered
    }
}

/// Number of cells of `grid` inside `target ∩ window` and outside every cover.
pub fn uncovered_count(grid: &CellGrid, target: &Cylinder, covers: &[Cylinder], window: &Window) -> u64 {
    let own = grid.time_bits(target, Some(window));
    if own.iter().all(|&b| b == 0) {
        return 0;
    }
    let words = grid.words();
    let covered = if covers.is_empty() { Vec::new() } else { grid.covered_columns(covers) };
    let mut count = 0u64;
    for iy in 0..grid.ny {
        let y = grid.yc(iy);
        for ix in 0..grid.nx {
            let x = grid.xc(ix);
            if !target.contains_xy(x, y) || !window.spatial().contains(x, y) {
                continue;
            }
            if covered.is_empty() {
                count += own.iter().map(|b| b.count_ones() as u64).sum::<u64>();
            } else {
                let base = (iy * grid.nx + ix) * words;
                count += own
                    .iter()
                    .zip(&covered[base..base + words])
                    .map(|(o, c)| (o & !c).count_ones() as u64)
                    .sum::<u64>();
            }
        }
    }
    count
}

/// Midpoint-rule estimate of `l(c ∩ W)` on the grid anchored to `c`.
pub fn clipped_cylinder_volume(c: &Cylinder, w: &Window, res: GridResolution) -> f64 {
    let grid = CellGrid::for_cylinder(c, res);
    uncovered_count(&grid, c, &[], w) as f64 * grid.cell_volume()
}

/// Midpoint-rule estimate of `l(c ∩ W)` on an arbitrary grid.
pub fn cylinder_volume_on_grid(c: &Cylinder, grid: &CellGrid, w: &Window) -> f64 {
    uncovered_count(grid, c, &[], w) as f64 * grid.cell_volume()
}

/// Midpoint-rule estimate of `l((c \ U neighbors) ∩ W)` on the grid anchored to `c`.
pub fn uncovered_volume(c: &Cylinder, neighbors: &[Cylinder], w: &Window, res: GridResolution) -> f64 {
    let grid = CellGrid::for_cylinder(c, res);
    uncovered_count(&grid, c, neighbors, w) as f64 * grid.cell_volume()
}

/// Largest value any clipped or uncovered volume of an `(r, h)` cylinder can
/// take on its own grid: the interior count, with a relative slack on the
/// radius so that floating-point placement of the centre cannot exceed it.
pub fn interior_cylinder_volume(r: f64, h: f64, res: GridResolution) -> f64 {
    let grid = CellGrid::for_cylinder(&Cylinder::new(STPoint::new(0.0, 0.0, 0.0), r, h), res);
    let r2 = r * r * (1.0 + 1e-9);
    let mut columns = 0u64;
    for iy in 0..grid.ny {
        let y = grid.yc(iy);
        for ix in 0..grid.nx {
            let x = grid.xc(ix);
            if x * x + y * y <= r2 {
                columns += 1;
            }
        }
    }
    (columns * grid.nt as u64) as f64 * grid.cell_volume()
}

/// Volume of the shell `C_j \ C_{j-1}` around `center`, clipped to `w`.
///
/// `j` is one-based (`r_0 = t_0 = 0`). All shells of a ladder share the grid of
/// the outermost cylinder, so the shells telescope exactly to
/// [`cylinder_volume_on_grid`] on that grid.
pub fn shell_volume(center: STPoint, ladder: &ScaleLadder, j: usize, w: &Window, res: GridResolution) -> Result<f64> {
    let m = ladder.m();
    if j == 0 || j > m {
        return Err(Error::ScaleIndex { index: j, m });
    }
    let grid = CellGrid::for_cylinder(&ladder.cylinder(m - 1, center), res);
    let outer = ladder.cylinder(j - 1, center);
    let count = if j == 1 {
        uncovered_count(&grid, &outer, &[], w)
    } else {
        let inner = ladder.cylinder(j - 2, center);
        uncovered_count(&grid, &outer, &[], w) - shell_inner_overlap(&grid, &outer, &inner, w)
    };
    Ok(count as f64 * grid.cell_volume())
}

/// Cells inside both `outer` and `inner` (nested, same centre) and the window.
fn shell_inner_overlap(grid: &CellGrid, outer: &Cylinder, inner: &Cylinder, w: &Window) -> u64 {
    let own = grid.time_bits(outer, Some(w));
    let inner_bits = grid.time_bits(inner, Some(w));
    let mut count = 0u64;
    for iy in 0..grid.ny {
        let y = grid.yc(iy);
        for ix in 0..grid.nx {
            let x = grid.xc(ix);
            if outer.contains_xy(x, y) && inner.contains_xy(x, y) && w.spatial().contains(x, y) {
                count += own.iter().zip(&inner_bits).map(|(a, b)| (a & b).count_ones() as u64).sum::<u64>();
            }
        }
    }
    count
}

/// Shell-decomposed cell counts around `center` on the outermost grid.
///
/// `counts[j][i]` (zero-based, `i >= j`) is the number of cells lying in the
/// shell `C_{j+1} \ C_j ∩ W` that are not covered by `covers[i]`, the
/// scale-`i` cylinders of the configuration. Returns the counts and the cell
/// volume of the shared grid.
pub fn shell_uncovered_counts(
    center: STPoint,
    ladder: &ScaleLadder,
    covers: &[Vec<Cylinder>],
    w: &Window,
    res: GridResolution,
) -> (Vec<Vec<u64>>, f64) {
    let m = ladder.m();
    let grid = CellGrid::for_cylinder(&ladder.cylinder(m - 1, center), res);
    let words = grid.words();
    let cyls: Vec<Cylinder> = (0..m).map(|j| ladder.cylinder(j, center)).collect();
    let time: Vec<Vec<u64>> = cyls.iter().map(|c| grid.time_bits(c, Some(w))).collect();
    let covered: Vec<Vec<u64>> = covers.iter().map(|cv| grid.covered_columns(cv)).collect();
    let mut counts = vec![vec![0u64; m]; m];
    let mut shell = vec![0u64; words];
    for iy in 0..grid.ny {
        let y = grid.yc(iy);
        for ix in 0..grid.nx {
            let x = grid.xc(ix);
            if !w.spatial().contains(x, y) {
                continue;
            }
            let base = (iy * grid.nx + ix) * words;
            let mut inside_prev = vec![0u64; words];
            for j in 0..m {
                let inside: Vec<u64> = if cyls[j].contains_xy(x, y) { time[j].clone() } else { vec![0u64; words] };
                for k in 0..words {
                    shell[k] = inside[k] & !inside_prev[k];
                }
                for i in j..m {
                    counts[j][i] += shell
                        .iter()
                        .zip(&covered[i][base..base + words])
                        .map(|(s, c)| (s & !c).count_ones() as u64)
                        .sum::<u64>();
                }
                inside_prev = inside;
            }
        }
    }
    (counts, grid.cell_volume())
}

/// Conservative bound on the midpoint-rule error of an uncovered volume:
/// misclassified cells lie within half a cell diameter of some boundary, so
/// the error is at most `diameter x` total boundary area of the cylinders.
pub fn volume_error_bound(c: &Cylinder, n_covers: usize, res: GridResolution) -> f64 {
    let grid = CellGrid::for_cylinder(c, res);
    grid.cell_diameter() * c.surface_area() * (1 + n_covers) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn res() -> GridResolution {
        GridResolution::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    /// Reference implementation: test every cell midpoint directly.
    fn brute_uncovered(c: &Cylinder, covers: &[Cylinder], w: &Window, res: GridResolution) -> f64 {
        let g = CellGrid::for_cylinder(c, res);
        let mut n = 0u64;
        for it in 0..g.nt {
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let p = STPoint::new(g.xc(ix), g.yc(iy), g.tc(it));
                    if c.contains(&p) && w.contains(&p) && !covers.iter().any(|k| k.contains(&p)) {
                        n += 1;
                    }
                }
            }
        }
        n as f64 * g.cell_volume()
    }

    #[test]
    fn interior_cylinder_matches_analytic() {
        let w = Window::unit_cube();
        let c = Cylinder::new(STPoint::new(0.5, 0.5, 0.5), 0.03, 0.03);
        let v = clipped_cylinder_volume(&c, &w, res());
        assert!(rel(v, 2.0 * PI * 0.03f64.powi(3)) < 0.02, "{v}");
        assert!((2.0 * PI * 0.03f64.powi(3) - 1.696e-4).abs() < 1e-7);
    }

    #[test]
    fn face_centred_cylinder_is_halved() {
        let w = Window::unit_cube();
        for center in [STPoint::new(0.0, 0.5, 0.5), STPoint::new(0.5, 1.0, 0.5), STPoint::new(0.5, 0.5, 0.0)] {
            let c = Cylinder::new(center, 0.05, 0.05);
            let v = clipped_cylinder_volume(&c, &w, res());
            assert!(rel(v, PI * 0.05f64.powi(3)) < 0.03, "{center:?}: {v}");
        }
    }

    #[test]
    fn large_scale_cylinder() {
        let w = Window::cuboid(0.0, 9.0, 0.0, 9.0, 0.0, 52.0).unwrap();
        let c = Cylinder::new(STPoint::new(4.5, 4.5, 26.0), 0.5, 5.0);
        let v = clipped_cylinder_volume(&c, &w, res());
        assert!(rel(v, 7.854) < 0.02, "{v}");
    }

    #[test]
    fn empty_and_full_cover() {
        let w = Window::unit_cube();
        let c = Cylinder::new(STPoint::new(0.2, 0.7, 0.1), 0.05, 0.04);
        assert_eq!(uncovered_volume(&c, &[], &w, res()), clipped_cylinder_volume(&c, &w, res()));
        assert_eq!(uncovered_volume(&c, &[c], &w, res()), 0.0);
    }

    #[test]
    fn bitmask_engine_matches_direct_cell_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poly = SpatialWindow::polygon(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.6], [0.4, 1.0], [0.0, 1.0]]).unwrap();
        let windows = [Window::unit_cube(), Window::new(poly, 0.0, 1.0).unwrap()];
        for w in &windows {
            for _ in 0..30 {
                let c = Cylinder::new(STPoint::new(rng.random(), rng.random(), rng.random()), 0.08, 0.06);
                let covers: Vec<Cylinder> = (0..rng.random_range(0..6))
                    .map(|_| {
                        let p = STPoint::new(
                            c.center.x + rng.random_range(-0.15..0.15),
                            c.center.y + rng.random_range(-0.15..0.15),
                            c.center.t + rng.random_range(-0.12..0.12),
                        );
                        Cylinder::new(p, 0.08, 0.06)
                    })
                    .collect();
                // 70 time cells exercise multi-word columns
                for r in [res(), GridResolution::new(10, 70).unwrap()] {
                    assert_eq!(uncovered_volume(&c, &covers, w, r), brute_uncovered(&c, &covers, w, r));
                }
            }
        }
    }

    #[test]
    fn shell_examples_and_telescoping() {
        let w = Window::unit_cube();
        let ladder = ScaleLadder::from_pairs(&[(0.03, 0.03), (0.05, 0.05)]).unwrap();
        let center = STPoint::new(0.5, 0.5, 0.5);
        let s2 = shell_volume(center, &ladder, 2, &w, res()).unwrap();
        let exact = 2.0 * PI * (0.05f64.powi(3) - 0.03f64.powi(3));
        assert!((exact - 6.158e-4).abs() < 1e-6);
        assert!(rel(s2, exact) < 0.03, "{s2}");
        assert!(shell_volume(center, &ladder, 0, &w, res()).is_err());
        assert!(shell_volume(center, &ladder, 3, &w, res()).is_err());

        // one scale: the first shell is the cylinder on its own grid
        let single = ScaleLadder::from_pairs(&[(0.03, 0.03)]).unwrap();
        let c1 = single.cylinder(0, center);
        assert_eq!(shell_volume(center, &single, 1, &w, res()).unwrap(), clipped_cylinder_volume(&c1, &w, res()));
    }

    #[test]
    fn shells_telescope_on_shared_grid() {
        let w = Window::unit_cube();
        let ladder = ScaleLadder::from_pairs(&[(0.03, 0.02), (0.05, 0.05), (0.09, 0.06)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            // include centres near faces so clipping is exercised
            let center = STPoint::new(rng.random(), rng.random(), rng.random());
            let grid = CellGrid::for_cylinder(&ladder.cylinder(2, center), res());
            let mut acc = 0.0;
            for j in 1..=3 {
                acc += shell_volume(center, &ladder, j, &w, res()).unwrap();
                let direct = cylinder_volume_on_grid(&ladder.cylinder(j - 1, center), &grid, &w);
                // counts are integers times one cell volume
                assert!((acc - direct).abs() <= 1e-12 * direct.max(1e-30), "{acc} vs {direct}");
            }
        }
    }

    #[test]
    fn nesting_on_shared_grid() {
        let w = Window::unit_cube();
        let ladder = ScaleLadder::from_pairs(&[(0.02, 0.03), (0.04, 0.05), (0.06, 0.07)]).unwrap();
        let center = STPoint::new(0.97, 0.02, 0.5);
        let grid = CellGrid::for_cylinder(&ladder.cylinder(2, center), res());
        let vols: Vec<f64> = (0..3).map(|j| cylinder_volume_on_grid(&ladder.cylinder(j, center), &grid, &w)).collect();
        assert!(vols[0] <= vols[1] && vols[1] <= vols[2]);
    }

    #[test]
    fn shell_counts_reproduce_direct_sums() {
        let w = Window::unit_cube();
        let ladder = ScaleLadder::from_pairs(&[(0.03, 0.03), (0.05, 0.05)]).unwrap();
        let center = STPoint::new(0.5, 0.5, 0.5);
        let (counts, cell) = shell_uncovered_counts(center, &ladder, &[vec![], vec![]], &w, res());
        let s1 = shell_volume(center, &ladder, 1, &w, res()).unwrap();
        let s2 = shell_volume(center, &ladder, 2, &w, res()).unwrap();
        assert_eq!(counts[0][0] as f64 * cell, s1);
        assert_eq!(counts[0][1] as f64 * cell, s1);
        assert_eq!(counts[1][1] as f64 * cell, s2);
    }

    #[test]
    fn interior_bound_dominates() {
        let w = Window::unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bound = interior_cylinder_volume(0.05, 0.05, res());
        for _ in 0..200 {
            let c = Cylinder::new(STPoint::new(rng.random(), rng.random(), rng.random()), 0.05, 0.05);
            assert!(clipped_cylinder_volume(&c, &w, res()) <= bound);
        }
    }

    #[test]
    fn deterministic() {
        let w = Window::unit_cube();
        let c = Cylinder::new(STPoint::new(0.31, 0.77, 0.05), 0.05, 0.05);
        let n = [Cylinder::new(STPoint::new(0.35, 0.74, 0.08), 0.05, 0.05)];
        let a = uncovered_volume(&c, &n, &w, res());
        let b = uncovered_volume(&c, &n, &w, res());
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
