use rand::Rng;
use serde::{Deserialize, Serialize};

use super::STPoint;
use crate::error::{Error, Result};

/// Upper limit on bounding-box draws when sampling uniformly inside a window.
pub const MAX_REJECTION_RETRIES: usize = 1_000_000;

/// Simple polygon given as an open vertex ring (the closing edge is implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Builds a polygon, dropping a repeated closing vertex if present.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidWindow("polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWindow("polygon has non-finite vertex".into()));
        }
        let poly = Polygon { vertices };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidWindow("polygon has zero area".into()));
        }
        if poly.self_intersects() {
            return Err(Error::InvalidWindow("polygon ring self-intersects".into()));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Shoelace area (absolute value, orientation independent).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        0.5 * twice.abs()
    }

    /// Even-odd ray casting.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) {
                let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
                if x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for &[x, y] in &self.vertices {
            b[0] = b[0].min(x);
            b[1] = b[1].max(x);
            b[2] = b[2].min(y);
            b[3] = b[3].max(y);
        }
        b
    }

    fn self_intersects(&self) -> bool {
        let n = self.vertices.len();
        let edge = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if segments_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Compact spatial domain: an axis-aligned rectangle or a simple polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialWindow {
    Rectangle { xmin: f64, xmax: f64, ymin: f64, ymax: f64 },
    Polygon(Polygon),
}

impl SpatialWindow {
    pub fn rectangle(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let w = SpatialWindow::Rectangle { xmin, xmax, ymin, ymax };
        w.validate()?;
        Ok(w)
    }

    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        Ok(SpatialWindow::Polygon(Polygon::new(vertices)?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => {
                if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidWindow("non-finite rectangle bound".into()));
                }
                if xmax <= xmin || ymax <= ymin {
                    return Err(Error::InvalidWindow("rectangle has non-positive area".into()));
                }
                Ok(())
            }
            SpatialWindow::Polygon(p) => Polygon::new(p.vertices.clone()).map(|_| ()),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => x >= *xmin && x <= *xmax && y >= *ymin && y <= *ymax,
            SpatialWindow::Polygon(p) => p.contains(x, y),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => (xmax - xmin) * (ymax - ymin),
            SpatialWindow::Polygon(p) => p.area(),
        }
    }

    /// `[xmin, xmax, ymin, ymax]` of the bounding box.
    pub fn bounds(&self) -> [f64; 4] {
        match self {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => [*xmin, *xmax, *ymin, *ymax],
            SpatialWindow::Polygon(p) => p.bounds(),
        }
    }

    pub fn is_rectangle(&self) -> bool {
        matches!(self, SpatialWindow::Rectangle { .. })
    }

    /// Uniform location by rejection from the bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, f64)> {
        let [xmin, xmax, ymin, ymax] = self.bounds();
        for _ in 0..MAX_REJECTION_RETRIES {
            let x = xmin + (xmax - xmin) * rng.random::<f64>();
            let y = ymin + (ymax - ymin) * rng.random::<f64>();
            if self.contains(x, y) {
                return Ok((x, y));
            }
        }
        Err(Error::RetryExhausted(MAX_REJECTION_RETRIES))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> SpatialWindow {
        match self {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => {
                SpatialWindow::Rectangle { xmin: xmin + dx, xmax: xmax + dx, ymin: ymin + dy, ymax: ymax + dy }
            }
            SpatialWindow::Polygon(p) => SpatialWindow::Polygon(Polygon {
                vertices: p.vertices.iter().map(|&[x, y]| [x + dx, y + dy]).collect(),
            }),
        }
    }
}

/// Space-time observation domain `W_S x [tmin, tmax]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow", into = "RawWindow")]
pub struct Window {
    spatial: SpatialWindow,
    tmin: f64,
    tmax: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    spatial: SpatialWindow,
    tmin: f64,
    tmax: f64,
}

impl TryFrom<RawWindow> for Window {
    type Error = Error;
    fn try_from(raw: RawWindow) -> Result<Self> {
        Window::new(raw.spatial, raw.tmin, raw.tmax)
    }
}

impl From<Window> for RawWindow {
    fn from(w: Window) -> Self {
        RawWindow { spatial: w.spatial, tmin: w.tmin, tmax: w.tmax }
    }
}

impl Window {
    pub fn new(spatial: SpatialWindow, tmin: f64, tmax: f64) -> Result<Self> {
        spatial.validate()?;
        if !(tmin.is_finite() && tmax.is_finite()) || tmax <= tmin {
            return Err(Error::InvalidWindow(format!("time interval [{tmin}, {tmax}] is empty")));
        }
        Ok(Window { spatial, tmin, tmax })
    }

    /// `[xmin,xmax] x [ymin,ymax] x [tmin,tmax]`.
    pub fn cuboid(xmin: f64, xmax: f64, ymin: f64, ymax: f64, tmin: f64, tmax: f64) -> Result<Self> {
        Window::new(SpatialWindow::rectangle(xmin, xmax, ymin, ymax)?, tmin, tmax)
    }

    pub fn unit_cube() -> Self {
        Window::cuboid(0.0, 1.0, 0.0, 1.0, 0.0, 1.0).expect("unit cube is valid")
    }

    pub fn spatial(&self) -> &SpatialWindow {
        &self.spatial
    }

    pub fn tmin(&self) -> f64 {
        self.tmin
    }

    pub fn tmax(&self) -> f64 {
        self.tmax
    }

    pub fn duration(&self) -> f64 {
        self.tmax - self.tmin
    }

    pub fn volume(&self) -> f64 {
        self.spatial.area() * self.duration()
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.tmin && t <= self.tmax
    }

    pub fn contains(&self, p: &STPoint) -> bool {
        self.contains_time(p.t) && self.spatial.contains(p.x, p.y)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<STPoint> {
        let (x, y) = self.spatial.sample_uniform(rng)?;
        let t = self.tmin + self.duration() * rng.random::<f64>();
        Ok(STPoint::new(x, y, t))
    }
}
