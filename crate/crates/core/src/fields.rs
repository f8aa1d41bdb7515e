//! Grid-sampled scalar, vector and matrix fields with flux-form differential operators.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid2D, EAST, NORTH, SOUTH, WEST};

/// Floor for |∇ψ| wherever it appears in a denominator.
pub const GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ScalarField2D {
    pub grid: Arc<Grid2D>,
    pub values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Arc<Grid2D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite field value at node {k}"));
        }
        Ok(ScalarField2D { grid, values })
    }

    pub fn constant(grid: &Arc<Grid2D>, c: f64) -> Self {
        ScalarField2D {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &Arc<Grid2D>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let p = grid.point(k);
                f(p[0], p[1])
            })
            .collect();
        ScalarField2D {
            grid: grid.clone(),
            values,
        }
    }

    /// Samples `f` on interior nodes and sets zero elsewhere.
    pub fn from_fn_interior(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                if grid.mask[k] {
                    let p = grid.point(k);
                    f(p[0], p[1])
                } else {
                    0.0
                }
            })
            .collect();
        ScalarField2D {
            grid: grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField2D {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField2D, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField2D {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Zeroes the field off the interior mask.
    pub fn restrict_interior(mut self) -> Self {
        for (v, &m) in self.values.iter_mut().zip(&self.grid.mask) {
            if !m {
                *v = 0.0;
            }
        }
        self
    }

    /// ∫ f over the domain, with cells weighted by their interior fraction.
    pub fn integrate(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| self.grid.cell_area(k) * self.values[k])
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.map(|v| v * v).integrate().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.interior_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn interior_min(&self) -> f64 {
        self.interior_values().fold(f64::INFINITY, f64::min)
    }

    pub fn interior_max(&self) -> f64 {
        self.interior_values().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn interior_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.grid.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
    }

    pub fn negative_part(&self) -> Self {
        self.map(|v| (-v).max(0.0))
    }
}

#[derive(Clone, Debug)]
pub struct VectorField2D {
    pub grid: Arc<Grid2D>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VectorField2D {
    pub fn zeros(grid: &Arc<Grid2D>) -> Self {
        VectorField2D {
            grid: grid.clone(),
            vx: vec![0.0; grid.len()],
            vy: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut v = Self::zeros(grid);
        for k in 0..grid.len() {
            let p = grid.point(k);
            let [a, b] = f(p[0], p[1]);
            v.vx[k] = a;
            v.vy[k] = b;
        }
        v
    }

    pub fn magnitude(&self) -> ScalarField2D {
        ScalarField2D {
            grid: self.grid.clone(),
            values: self
                .vx
                .iter()
                .zip(&self.vy)
                .map(|(a, b)| a.hypot(*b))
                .collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.magnitude().sup_norm()
    }
}

/// Symmetric 2×2 matrix per node.
#[derive(Clone, Debug)]
pub struct MatrixField2D {
    pub grid: Arc<Grid2D>,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
}

impl MatrixField2D {
    pub fn identity(grid: &Arc<Grid2D>) -> Self {
        Self::scalar(&ScalarField2D::constant(grid, 1.0))
    }

    /// `Λ(x) Id`.
    pub fn scalar(lam: &ScalarField2D) -> Self {
        MatrixField2D {
            grid: lam.grid.clone(),
            a11: lam.values.clone(),
            a12: vec![0.0; lam.values.len()],
            a22: lam.values.clone(),
        }
    }

    pub fn from_fn(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> [f64; 3]) -> Self {
        let mut a = Self::identity(grid);
        for k in 0..grid.len() {
            let p = grid.point(k);
            let [a11, a12, a22] = f(p[0], p[1]);
            a.a11[k] = a11;
            a.a12[k] = a12;
            a.a22[k] = a22;
        }
        a
    }

    pub fn at(&self, k: usize) -> [f64; 3] {
        [self.a11[k], self.a12[k], self.a22[k]]
    }

    /// Checks a11 > 0 and det > 0 at interior nodes.
    pub fn check_positive_definite(&self) -> Result<()> {
        for k in 0..self.grid.len() {
            if !self.grid.mask[k] {
                continue;
            }
            let [a, b, c] = self.at(k);
            if !(a > 0.0 && a * c - b * b > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite())
            {
                return invalid(format!(
                    "matrix field not positive definite at node {k}: ({a}, {b}, {c})"
                ));
            }
        }
        Ok(())
    }
}

/// Pointwise smallest eigenvalue of A.
pub fn lambda_of_a(a: &MatrixField2D) -> ScalarField2D {
    let values = (0..a.grid.len())
        .map(|k| {
            let [a11, a12, a22] = a.at(k);
            let half = 0.5 * (a11 - a22);
            0.5 * (a11 + a22) - (half * half + a12 * a12).sqrt()
        })
        .collect();
    ScalarField2D {
        grid: a.grid.clone(),
        values,
    }
}

fn same_grid(a: &Arc<Grid2D>, b: &Arc<Grid2D>) -> Result<()> {
    if Arc::ptr_eq(a, b) || (a.nx == b.nx && a.ny == b.ny && a.hx == b.hx && a.hy == b.hy) {
        Ok(())
    } else {
        invalid("fields live on different grids")
    }
}

/// Central differences inside, second-order one-sided differences where a
/// neighbour leaves the interior mask. Zero off the mask.
pub fn gradient(f: &ScalarField2D) -> VectorField2D {
    let g = &f.grid;
    let mut out = VectorField2D::zeros(g);
    let u = &f.values;
    let masked = |k: Option<usize>| k.filter(|&k| g.mask[k]);
    for k in 0..g.len() {
        if !g.mask[k] {
            continue;
        }
        let d = |fwd: usize, bwd: usize, h: f64| -> f64 {
            let e = masked(g.neighbor(k, fwd));
            let w = masked(g.neighbor(k, bwd));
            match (e, w) {
                (Some(e), Some(w)) => (u[e] - u[w]) / (2.0 * h),
                (Some(e), None) => match masked(g.neighbor(e, fwd)) {
                    Some(ee) => (-3.0 * u[k] + 4.0 * u[e] - u[ee]) / (2.0 * h),
                    None => (u[e] - u[k]) / h,
                },
                (None, Some(w)) => match masked(g.neighbor(w, bwd)) {
                    Some(ww) => (3.0 * u[k] - 4.0 * u[w] + u[ww]) / (2.0 * h),
                    None => (u[k] - u[w]) / h,
                },
                (None, None) => 0.0,
            }
        };
        out.vx[k] = d(EAST, WEST, g.hx);
        out.vy[k] = d(NORTH, SOUTH, g.hy);
    }
    out
}

/// How values beyond the interior mask are treated by the flux operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Use the stored node values on the uniform stencil.
    Extended,
    /// Zero Dirichlet datum at the true boundary crossing (distance θh).
    Dirichlet,
}

/// Face fluxes (A∇f)·n on the east and north faces of node `k`.
///
/// For interior-interior faces the flux depends only on the face, so the
/// east flux of a node equals the west flux of its east neighbour. That is
/// what makes cell sums telescope.
pub(crate) struct FaceFlux<'a> {
    pub a: &'a MatrixField2D,
    pub u: &'a [f64],
    pub mode: Boundary,
}

impl FaceFlux<'_> {
    fn grid(&self) -> &Grid2D {
        &self.a.grid
    }

    fn val(&self, k: Option<usize>) -> f64 {
        match k {
            Some(k) if self.mode == Boundary::Extended || self.grid().mask[k] => self.u[k],
            _ => 0.0,
        }
    }

    /// Flux across the face from `k` towards direction `dir`, oriented outward from `k`.
    pub fn outward(&self, k: usize, dir: usize) -> f64 {
        let g = self.grid();
        let nb = g.neighbor(k, dir);
        let interior_nb = nb.map(|n| g.mask[n]).unwrap_or(false);
        if self.mode == Boundary::Dirichlet && !interior_nb {
            let (coef, h) = match dir {
                EAST | WEST => (self.a.a11[k], g.hx),
                _ => (self.a.a22[k], g.hy),
            };
            return coef * (0.0 - self.u[k]) / (g.theta[k][dir] * h);
        }
        let nb = match nb {
            Some(n) => n,
            None => return 0.0,
        };
        match dir {
            EAST => self.x_face(k, nb),
            WEST => -self.x_face(nb, k),
            NORTH => self.y_face(k, nb),
            _ => -self.y_face(nb, k),
        }
    }

    /// Flux in +x across the face between `w` and its east neighbour `e`.
    fn x_face(&self, w: usize, e: usize) -> f64 {
        let g = self.grid();
        let a11 = 0.5 * (self.a.a11[w] + self.a.a11[e]);
        let a12 = 0.5 * (self.a.a12[w] + self.a.a12[e]);
        let mut flux = a11 * (self.u[e] - self.u[w]) / g.hx;
        if a12 != 0.0 {
            let n = self.val(g.neighbor(w, NORTH)) + self.val(g.neighbor(e, NORTH));
            let s = self.val(g.neighbor(w, SOUTH)) + self.val(g.neighbor(e, SOUTH));
            flux += a12 * (n - s) / (4.0 * g.hy);
        }
        flux
    }

    /// Flux in +y across the face between `s` and its north neighbour `n`.
    fn y_face(&self, s: usize, n: usize) -> f64 {
        let g = self.grid();
        let a22 = 0.5 * (self.a.a22[s] + self.a.a22[n]);
        let a12 = 0.5 * (self.a.a12[s] + self.a.a12[n]);
        let mut flux = a22 * (self.u[n] - self.u[s]) / g.hy;
        if a12 != 0.0 {
            let e = self.val(g.neighbor(s, EAST)) + self.val(g.neighbor(n, EAST));
            let w = self.val(g.neighbor(s, WEST)) + self.val(g.neighbor(n, WEST));
            flux += a12 * (e - w) / (4.0 * g.hx);
        }
        flux
    }
}

fn div_impl(a: &MatrixField2D, f: &ScalarField2D, mode: Boundary) -> Result<ScalarField2D> {
    same_grid(&a.grid, &f.grid)?;
    a.check_positive_definite()?;
    let g = &f.grid;
    let ff = FaceFlux {
        a,
        u: &f.values,
        mode,
    };
    let mut out = vec![0.0; g.len()];
    for (k, o) in out.iter_mut().enumerate() {
        if !g.mask[k] {
            continue;
        }
        let t = &g.theta[k];
        let (wx, wy) = match mode {
            Boundary::Extended => (g.hx, g.hy),
            Boundary::Dirichlet => (
                0.5 * (t[EAST] + t[WEST]) * g.hx,
                0.5 * (t[NORTH] + t[SOUTH]) * g.hy,
            ),
        };
        let fx = ff.outward(k, EAST) + ff.outward(k, WEST);
        let fy = ff.outward(k, NORTH) + ff.outward(k, SOUTH);
        *o = fx / wx + fy / wy;
    }
    ScalarField2D::new(g.clone(), out)
}

/// div(A∇f) on interior nodes from face-averaged fluxes on the uniform stencil.
pub fn div_a_grad(a: &MatrixField2D, f: &ScalarField2D) -> Result<ScalarField2D> {
    div_impl(a, f, Boundary::Extended)
}

/// div(A∇f) for a field with zero Dirichlet data, using the true boundary
/// distance on faces that cross the boundary.
pub fn div_a_grad_dirichlet(a: &MatrixField2D, f: &ScalarField2D) -> Result<ScalarField2D> {
    div_impl(a, f, Boundary::Dirichlet)
}

/// Net outward flux of A∇f through each interior cell (an area integral of the
/// divergence). Sums over any set of cells telescope to the flux through its
/// outer faces.
pub fn cell_net_flux(a: &MatrixField2D, f: &ScalarField2D, mode: Boundary) -> Result<Vec<f64>> {
    same_grid(&a.grid, &f.grid)?;
    a.check_positive_definite()?;
    let g = &f.grid;
    let ff = FaceFlux {
        a,
        u: &f.values,
        mode,
    };
    Ok((0..g.len())
        .map(|k| {
            if !g.mask[k] {
                return 0.0;
            }
            (ff.outward(k, EAST) + ff.outward(k, WEST)) * g.hy
                + (ff.outward(k, NORTH) + ff.outward(k, SOUTH)) * g.hx
        })
        .collect())
}

/// Writes the text field format: a header line `nx ny hx hy x0 y0`, then the
/// values row by row with NaN on exterior nodes.
pub fn write_field(path: impl AsRef<Path>, f: &ScalarField2D) -> Result<()> {
    let g = &f.grid;
    let mut s = String::new();
    writeln!(s, "{} {} {:e} {:e} {:e} {:e}", g.nx, g.ny, g.hx, g.hy, g.x0, g.y0).unwrap();
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx)
            .map(|i| {
                let k = g.index(i, j);
                if g.mask[k] {
                    format!("{:e}", f.values[k])
                } else {
                    "NaN".to_string()
                }
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let text = std::fs::read_to_string(path)?;
    parse_field(&text)
}

pub fn parse_field(text: &str) -> Result<ScalarField2D> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {what}")))
    };
    let nx: usize = next("nx")?.parse().map_err(|e| Error::Parse(format!("nx: {e}")))?;
    let ny: usize = next("ny")?.parse().map_err(|e| Error::Parse(format!("ny: {e}")))?;
    let mut head = [0.0; 4];
    for (slot, name) in head.iter_mut().zip(["hx", "hy", "x0", "y0"]) {
        *slot = next(name)?
            .parse()
            .map_err(|e| Error::Parse(format!("{name}: {e}")))?;
    }
    let mut values = Vec::with_capacity(nx * ny);
    let mut mask = Vec::with_capacity(nx * ny);
    for k in 0..nx * ny {
        let v: f64 = next("value")?
            .parse()
            .map_err(|e| Error::Parse(format!("value {k}: {e}")))?;
        mask.push(!v.is_nan());
        values.push(if v.is_nan() { 0.0 } else { v });
    }
    let grid = Grid2D::from_mask(nx, ny, head[0], head[1], head[2], head[3], mask)?;
    let grid = Arc::new(grid);
    let values = values
        .iter()
        .enumerate()
        .map(|(k, &v)| if grid.mask[k] { v } else { 0.0 })
        .collect();
    ScalarField2D::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    fn square_grid(n: usize) -> Arc<Grid2D> {
        Arc::new(Grid2D::new(&DomainSpec::rectangle(1.0, 1.0).unwrap(), n).unwrap())
    }

    fn disk_grid(n: usize) -> Arc<Grid2D> {
        Arc::new(Grid2D::new(&DomainSpec::disk(1.0).unwrap(), n).unwrap())
    }

    #[test]
    fn gradient_of_linear_and_quadratic() {
        let g = square_grid(40);
        let f = ScalarField2D::from_fn(&g, |x, _| x);
        let d = gradient(&f);
        for k in 0..g.len() {
            if g.mask[k] {
                assert!((d.vx[k] - 1.0).abs() < 1e-12 && d.vy[k].abs() < 1e-12);
            }
        }
        let q = ScalarField2D::from_fn(&g, |x, y| x * x + y * y);
        let d = gradient(&q);
        for k in 0..g.len() {
            if g.mask[k] {
                let p = g.point(k);
                assert!((d.vx[k] - 2.0 * p[0]).abs() < 1e-10);
                assert!((d.vy[k] - 2.0 * p[1]).abs() < 1e-10);
            }
        }
        let c = ScalarField2D::constant(&g, 3.5);
        assert_eq!(gradient(&c).sup_norm(), 0.0);
    }

    #[test]
    fn torsion_gradient_and_laplacian() {
        for n in [64, 128] {
            let g = disk_grid(n);
            let psi = ScalarField2D::from_fn_interior(&g, |x, y| (1.0 - x * x - y * y) / 4.0);
            let d = gradient(&psi).magnitude();
            let mut err: f64 = 0.0;
            for k in 0..g.len() {
                if g.mask[k] {
                    let p = g.point(k);
                    err = err.max((d.values[k] - p[0].hypot(p[1]) / 2.0).abs());
                }
            }
            assert!(err < 2.0 * g.h() * g.h(), "gradient error {err}");
            let lap = div_a_grad_dirichlet(&MatrixField2D::identity(&g), &psi).unwrap();
            let worst = lap
                .interior_values()
                .fold(0.0_f64, |m, v| m.max((v + 1.0).abs()));
            assert!(worst < 2.0 * g.h(), "laplacian error {worst}");
        }
    }

    #[test]
    fn constant_coefficient_identities() {
        let g = square_grid(32);
        let a = MatrixField2D::from_fn(&g, |_, _| [2.0, 0.0, 2.0]);
        let lin = ScalarField2D::from_fn(&g, |x, y| 3.0 * x - y + 1.0);
        assert!(div_a_grad(&a, &lin).unwrap().sup_norm() < 1e-9);
        let a = MatrixField2D::from_fn(&g, |_, _| [1.0, 0.0, 2.0]);
        let q = ScalarField2D::from_fn(&g, |x, y| x * x + y * y);
        let d = div_a_grad(&a, &q).unwrap();
        assert!(d.interior_values().all(|v| (v - 6.0).abs() < 1e-8));
        let a = MatrixField2D::from_fn(&g, |_, _| [1.0, 0.5, 1.0]);
        let xy = ScalarField2D::from_fn(&g, |x, y| x * y);
        assert!(div_a_grad(&a, &xy).unwrap().interior_values().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn lambda_of_a_closed_form() {
        let g = square_grid(10);
        let id = MatrixField2D::identity(&g);
        assert!(lambda_of_a(&id).values.iter().all(|&v| v == 1.0));
        let d = MatrixField2D::from_fn(&g, |_, _| [1.0, 0.0, 3.0]);
        assert!(lambda_of_a(&d).values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let o = MatrixField2D::from_fn(&g, |_, _| [2.0, 1.0, 2.0]);
        assert!(lambda_of_a(&o).values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let g = square_grid(10);
        let bad = MatrixField2D::from_fn(&g, |_, _| [1.0, 2.0, 1.0]);
        let f = ScalarField2D::zeros(&g);
        assert!(div_a_grad(&bad, &f).is_err());
    }

    #[test]
    fn field_file_round_trip() {
        let g = disk_grid(24);
        let f = ScalarField2D::from_fn_interior(&g, |x, y| x * 0.3 + y * y);
        let dir = std::env::temp_dir().join(format!("eigensymm-field-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.txt");
        write_field(&path, &f).unwrap();
        let r = read_field(&path).unwrap();
        assert_eq!(r.grid.mask, g.mask);
        for k in 0..g.len() {
            assert_eq!(r.values[k], f.values[k]);
        }
        std::fs::remove_dir_all(&dir).ok();
        assert!(parse_field("3 3 1 1 0").is_err());
    }
}
