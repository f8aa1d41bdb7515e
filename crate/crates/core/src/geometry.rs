//! Planar domains, Cartesian grids with interior masks, and the equal-measure ball.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Directions used for the per-node boundary crossing table.
pub const EAST: usize = 0;
pub const WEST: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;

const SUBSAMPLES: usize = 4;
const MIN_THETA: f64 = 1e-3;
const MIN_INTERIOR: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Disk { radius: f64 },
    /// Semi-axes along x and y.
    Ellipse { a: f64, b: f64 },
    /// Full side lengths.
    Rectangle { lx: f64, ly: f64 },
    /// Points within `rad` of a horizontal segment of length `len`.
    Stadium { len: f64, rad: f64 },
    /// Simple counterclockwise polygon.
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub center: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

impl DomainSpec {
    pub fn new(shape: Shape) -> Result<Self> {
        let d = DomainSpec {
            shape,
            center: [0.0, 0.0],
        };
        d.validate()?;
        Ok(d)
    }

    pub fn disk(radius: f64) -> Result<Self> {
        Self::new(Shape::Disk { radius })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        Self::new(Shape::Ellipse { a, b })
    }

    pub fn rectangle(lx: f64, ly: f64) -> Result<Self> {
        Self::new(Shape::Rectangle { lx, ly })
    }

    pub fn stadium(len: f64, rad: f64) -> Result<Self> {
        Self::new(Shape::Stadium { len, rad })
    }

    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(Shape::Polygon { vertices })
    }

    pub fn with_center(mut self, cx: f64, cy: f64) -> Self {
        self.center = [cx, cy];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                invalid(format!("{name} must be positive and finite, got {v}"))
            }
        };
        if !self.center.iter().all(|c| c.is_finite()) {
            return invalid("center must be finite");
        }
        match &self.shape {
            Shape::Disk { radius } => pos("radius", *radius),
            Shape::Ellipse { a, b } => pos("a", *a).and(pos("b", *b)),
            Shape::Rectangle { lx, ly } => pos("lx", *lx).and(pos("ly", *ly)),
            Shape::Stadium { len, rad } => pos("len", *len).and(pos("rad", *rad)),
            Shape::Polygon { vertices } => validate_polygon(vertices),
        }
    }

    /// Characteristic length used to scale membership tolerances.
    fn scale(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let [cx, cy] = self.center;
        let (hx, hy) = match &self.shape {
            Shape::Disk { radius } => (*radius, *radius),
            Shape::Ellipse { a, b } => (*a, *b),
            Shape::Rectangle { lx, ly } => (lx / 2.0, ly / 2.0),
            Shape::Stadium { len, rad } => (len / 2.0 + rad, *rad),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                return ([lo[0] + cx, lo[1] + cy], [hi[0] + cx, hi[1] + cy]);
            }
        };
        ([cx - hx, cy - hy], [cx + hx, cy + hy])
    }

    pub fn closed_form_area(&self) -> f64 {
        match &self.shape {
            Shape::Disk { radius } => PI * radius * radius,
            Shape::Ellipse { a, b } => PI * a * b,
            Shape::Rectangle { lx, ly } => lx * ly,
            Shape::Stadium { len, rad } => 2.0 * rad * len + PI * rad * rad,
            Shape::Polygon { vertices } => signed_area(vertices),
        }
    }

    /// Whether the shape is only piecewise smooth (corners or curvature jumps).
    pub fn is_piecewise_smooth(&self) -> bool {
        matches!(
            self.shape,
            Shape::Rectangle { .. } | Shape::Stadium { .. } | Shape::Polygon { .. }
        )
    }

    pub fn classify(&self, p: [f64; 2]) -> Location {
        let x = p[0] - self.center[0];
        let y = p[1] - self.center[1];
        let eps = 1e-12 * self.scale();
        // Signed level: negative inside, zero on the boundary.
        let level = match &self.shape {
            Shape::Disk { radius } => x.hypot(y) - radius,
            Shape::Ellipse { a, b } => {
                let q = (x / a).powi(2) + (y / b).powi(2);
                (q.sqrt() - 1.0) * a.min(*b)
            }
            Shape::Rectangle { lx, ly } => (x.abs() - lx / 2.0).max(y.abs() - ly / 2.0),
            Shape::Stadium { len, rad } => {
                let cx = x.clamp(-len / 2.0, len / 2.0);
                (x - cx).hypot(y) - rad
            }
            Shape::Polygon { vertices } => {
                let d = distance_to_polygon(vertices, [x, y]);
                if d <= eps {
                    return Location::Boundary;
                }
                return if even_odd(vertices, [x, y]) {
                    Location::Inside
                } else {
                    Location::Outside
                };
            }
        };
        if level < -eps {
            Location::Inside
        } else if level <= eps {
            Location::Boundary
        } else {
            Location::Outside
        }
    }

    /// Closed-set membership; points on the boundary count as inside.
    pub fn inside(&self, p: [f64; 2]) -> bool {
        self.classify(p) != Location::Outside
    }

    pub fn strictly_inside(&self, p: [f64; 2]) -> bool {
        self.classify(p) == Location::Inside
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn validate_polygon(v: &[[f64; 2]]) -> Result<()> {
    let n = v.len();
    if n < 3 {
        return invalid("polygon needs at least 3 vertices");
    }
    if v.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return invalid("polygon vertices must be finite");
    }
    if signed_area(v) <= 0.0 {
        return invalid("polygon must be counterclockwise with positive area");
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return invalid(format!("polygon edges {i} and {j} intersect"));
            }
        }
    }
    Ok(())
}

fn even_odd(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xc = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn distance_to_polygon(v: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = v.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy);
        best = best.min(d);
    }
    best
}

/// Uniform node grid with an interior mask.
///
/// Node `(i, j)` sits at `(x0 + i*hx, y0 + j*hy)` and has flat index `j*nx + i`.
/// Each node owns the dual cell of size `hx × hy` centred on it.
#[derive(Clone, Debug)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub x0: f64,
    pub y0: f64,
    pub mask: Vec<bool>,
    pub fraction: Vec<f64>,
    /// Fraction of the spacing to the boundary in each direction, 1 when the
    /// neighbour is an interior node.
    pub theta: Vec<[f64; 4]>,
}

impl Grid2D {
    /// Grid with `n` nodes per axis; the bounding box edges fall on nodes one
    /// spacing in from the grid edge.
    pub fn new(domain: &DomainSpec, n: usize) -> Result<Self> {
        domain.validate()?;
        if n < 8 {
            return invalid(format!("grid needs at least 8 nodes per axis, got {n}"));
        }
        let (lo, hi) = domain.bounding_box();
        let hx = (hi[0] - lo[0]) / (n - 3) as f64;
        let hy = (hi[1] - lo[1]) / (n - 3) as f64;
        let x0 = lo[0] - hx;
        let y0 = lo[1] - hy;
        let (nx, ny) = (n, n);
        let mut mask = vec![false; nx * ny];
        let mut fraction = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let (x, y) = (x0 + i as f64 * hx, y0 + j as f64 * hy);
                mask[k] = domain.strictly_inside([x, y]);
                let mut hits = 0;
                for sj in 0..SUBSAMPLES {
                    for si in 0..SUBSAMPLES {
                        let px = x + hx * ((si as f64 + 0.5) / SUBSAMPLES as f64 - 0.5);
                        let py = y + hy * ((sj as f64 + 0.5) / SUBSAMPLES as f64 - 0.5);
                        if domain.inside([px, py]) {
                            hits += 1;
                        }
                    }
                }
                fraction[k] = hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
            }
        }
        let mut theta = vec![[1.0; 4]; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !mask[k] {
                    continue;
                }
                let p = [x0 + i as f64 * hx, y0 + j as f64 * hy];
                let steps = [[hx, 0.0], [-hx, 0.0], [0.0, hy], [0.0, -hy]];
                for (dir, step) in steps.iter().enumerate() {
                    let nb = match dir {
                        EAST => k + 1,
                        WEST => k - 1,
                        NORTH => k + nx,
                        _ => k - nx,
                    };
                    if mask[nb] {
                        continue;
                    }
                    theta[k][dir] = crossing(domain, p, *step);
                }
            }
        }
        let grid = Grid2D {
            nx,
            ny,
            hx,
            hy,
            x0,
            y0,
            mask,
            fraction,
            theta,
        };
        grid.check_interior()?;
        Ok(grid)
    }

    /// Grid assembled from an explicit mask, with whole cells and staircase boundaries.
    pub fn from_mask(
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        x0: f64,
        y0: f64,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if !(hx > 0.0 && hy > 0.0) {
            return invalid("grid spacings must be positive");
        }
        if mask.len() != nx * ny || nx < 3 || ny < 3 {
            return invalid("mask size does not match grid dimensions");
        }
        let mut mask = mask;
        // Nodes on the outer frame have no full stencil.
        for j in 0..ny {
            for i in 0..nx {
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    mask[j * nx + i] = false;
                }
            }
        }
        let fraction = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let grid = Grid2D {
            nx,
            ny,
            hx,
            hy,
            x0,
            y0,
            mask,
            fraction,
            theta: vec![[1.0; 4]; nx * ny],
        };
        grid.check_interior()?;
        Ok(grid)
    }

    fn check_interior(&self) -> Result<()> {
        let interior = self.interior_count();
        if interior < MIN_INTERIOR {
            return Err(Error::GridTooCoarse {
                interior,
                required: MIN_INTERIOR,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interior_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.coords(k);
        [self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy]
    }

    pub fn cell_area(&self, k: usize) -> f64 {
        self.fraction[k] * self.hx * self.hy
    }

    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Neighbour index in direction `dir`, if it lies on the grid.
    pub fn neighbor(&self, k: usize, dir: usize) -> Option<usize> {
        let (i, j) = self.coords(k);
        match dir {
            EAST if i + 1 < self.nx => Some(k + 1),
            WEST if i > 0 => Some(k - 1),
            NORTH if j + 1 < self.ny => Some(k + self.nx),
            SOUTH if j > 0 => Some(k - self.nx),
            _ => None,
        }
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.mask[k]
    }

    /// Grid area: sum of cell areas weighted by interior fraction.
    pub fn area(&self) -> f64 {
        self.fraction.iter().sum::<f64>() * self.hx * self.hy
    }
}

/// Bisection for the first boundary crossing along `p + t*step`, `t ∈ (0, 1]`.
fn crossing(domain: &DomainSpec, p: [f64; 2], step: [f64; 2]) -> f64 {
    let at = |t: f64| [p[0] + t * step[0], p[1] + t * step[1]];
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if domain.strictly_inside(at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Crossings within the membership tolerance of the neighbour count as full spacings.
    if hi > 1.0 - 1e-9 {
        1.0
    } else {
        hi.max(MIN_THETA)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub grid_area: f64,
    pub closed_form: f64,
}

pub fn measure(domain: &DomainSpec, grid: &Grid2D) -> Result<Measure> {
    grid.check_interior()?;
    let (lo, hi) = domain.bounding_box();
    let gx1 = grid.x0 + (grid.nx - 1) as f64 * grid.hx;
    let gy1 = grid.y0 + (grid.ny - 1) as f64 * grid.hy;
    let slack = 1e-9 * (grid.hx + grid.hy);
    if lo[0] < grid.x0 - slack || lo[1] < grid.y0 - slack || hi[0] > gx1 + slack || hi[1] > gy1 + slack
    {
        return invalid("grid does not cover the domain bounding box");
    }
    Ok(Measure {
        grid_area: grid.area(),
        closed_form: domain.closed_form_area(),
    })
}

fn gamma_half_integer(twice: u32) -> f64 {
    // Γ(twice/2) by the recurrence Γ(x+1) = xΓ(x).
    let (mut g, mut x) = if twice % 2 == 0 {
        (1.0, 1.0)
    } else {
        (PI.sqrt(), 0.5)
    };
    while 2.0 * x < twice as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Volume of the unit ball in dimension `n`.
pub fn alpha_n(n: usize) -> Result<f64> {
    if n == 0 {
        return invalid("dimension must be at least 1");
    }
    let nf = n as f64;
    Ok(PI.powf(nf / 2.0) / gamma_half_integer(n as u32 + 2))
}

/// Radius of the ball of measure `m` in dimension `n`.
pub fn equal_measure_ball_radius(m: f64, n: usize) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return invalid(format!("measure must be positive, got {m}"));
    }
    Ok((m / alpha_n(n)?).powf(1.0 / n as f64))
}
