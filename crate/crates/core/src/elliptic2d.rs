//! Principal eigenpairs and Dirichlet solves for `L = −div(A∇) + v·∇ + V`.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{MatrixField2D, ScalarField2D, VectorField2D};
use crate::geometry::{Grid2D, EAST, NORTH, SOUTH, WEST};

const NONE: usize = usize::MAX;

/// Discretisation of the first-order term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convection {
    /// One-sided differences against the flow at every node.
    Upwind,
    /// Central differences wherever they keep the off-diagonal entries
    /// non-positive, upwind elsewhere.
    #[default]
    Hybrid,
}

/// Compressed sparse rows with sorted column indices.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last = NONE;
            for (c, v) in row {
                if c == last {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |p| (self.indices[p], self.data[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map(|e| e.1).unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    fn shifted(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        for i in 0..m.n {
            for p in m.indptr[i]..m.indptr[i + 1] {
                if m.indices[p] == i {
                    m.data[p] -= s;
                }
            }
        }
        m
    }
}

/// Assembled operator restricted to interior nodes.
#[derive(Clone, Debug)]
pub struct EllipticOperator {
    pub grid: Arc<Grid2D>,
    /// Grid node of each unknown.
    pub nodes: Vec<usize>,
    /// Unknown index of each grid node, `usize::MAX` off the mask.
    pub unknown: Vec<usize>,
    pub matrix: CsrMatrix,
    pub min_potential: f64,
    /// Number of (node, axis) pairs where the hybrid scheme fell back to upwinding.
    pub upwinded: usize,
}

impl EllipticOperator {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn to_unknowns(&self, f: &ScalarField2D) -> Vec<f64> {
        self.nodes.iter().map(|&k| f.values[k]).collect()
    }

    pub fn to_field(&self, x: &[f64]) -> ScalarField2D {
        let mut values = vec![0.0; self.grid.len()];
        for (i, &k) in self.nodes.iter().enumerate() {
            values[k] = x[i];
        }
        ScalarField2D {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

/// Coefficients c with div(A∇u)(k) = Σ c_j u_j for Dirichlet data, keyed by grid node.
fn diffusion_stencil(a: &MatrixField2D, k: usize, out: &mut Vec<(usize, f64)>) {
    let g = &a.grid;
    let t = &g.theta[k];
    let wx = 0.5 * (t[EAST] + t[WEST]) * g.hx;
    let wy = 0.5 * (t[NORTH] + t[SOUTH]) * g.hy;
    let nb = |k: usize, d: usize| g.neighbor(k, d).filter(|&n| g.mask[n]);
    // Outward flux through each face, scaled by 1/w, pushed as coefficients.
    for dir in [EAST, WEST, NORTH, SOUTH] {
        let (w, h, diag_coef, across) = match dir {
            EAST | WEST => (wx, g.hx, &a.a11, [NORTH, SOUTH]),
            _ => (wy, g.hy, &a.a22, [EAST, WEST]),
        };
        let other_h = if across[0] == NORTH { g.hy } else { g.hx };
        match nb(k, dir) {
            None => {
                out.push((k, -diag_coef[k] / (t[dir] * h * w)));
            }
            Some(q) => {
                let main = 0.5 * (diag_coef[k] + diag_coef[q]) / (h * w);
                out.push((q, main));
                out.push((k, -main));
                let a12 = 0.5 * (a.a12[k] + a.a12[q]);
                if a12 != 0.0 {
                    // Outward sign: +1 for east/north faces, −1 for west/south.
                    let sign = if dir == EAST || dir == NORTH { 1.0 } else { -1.0 };
                    let c = sign * a12 / (4.0 * other_h * w);
                    for (side, s) in [(across[0], 1.0), (across[1], -1.0)] {
                        for base in [k, q] {
                            if let Some(m) = nb(base, side) {
                                out.push((m, s * c));
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn assemble(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    v: &VectorField2D,
    pot: &ScalarField2D,
) -> Result<EllipticOperator> {
    assemble_with(grid, a, v, pot, Convection::default())
}

pub fn assemble_with(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    v: &VectorField2D,
    pot: &ScalarField2D,
    scheme: Convection,
) -> Result<EllipticOperator> {
    a.check_positive_definite()?;
    for len in [a.grid.len(), v.grid.len(), pot.grid.len()] {
        if len != grid.len() {
            return invalid("coefficient fields do not match the grid");
        }
    }
    let mut unknown = vec![NONE; grid.len()];
    let mut nodes = Vec::new();
    for k in 0..grid.len() {
        if grid.mask[k] {
            unknown[k] = nodes.len();
            nodes.push(k);
        }
    }
    if nodes.is_empty() {
        return Err(Error::Discretization("no interior nodes".into()));
    }
    let mut rows = Vec::with_capacity(nodes.len());
    let mut upwinded = 0;
    let mut stencil = Vec::with_capacity(32);
    let mut min_potential = f64::INFINITY;
    for &k in &nodes {
        stencil.clear();
        diffusion_stencil(a, k, &mut stencil);
        let mut row: Vec<(usize, f64)> = stencil.iter().map(|&(n, c)| (n, -c)).collect();
        let t = &grid.theta[k];
        for (vel, fwd, bwd, h, diff) in [
            (v.vx[k], EAST, WEST, grid.hx, &a.a11),
            (v.vy[k], NORTH, SOUTH, grid.hy, &a.a22),
        ] {
            if vel == 0.0 {
                continue;
            }
            let he = t[fwd] * h;
            let hw = t[bwd] * h;
            let e = grid.neighbor(k, fwd).filter(|&n| grid.mask[n]);
            let w = grid.neighbor(k, bwd).filter(|&n| grid.mask[n]);
            let central = [
                vel * hw / (he * (he + hw)),
                -vel * (hw - he) / (he * hw),
                -vel * he / (hw * (he + hw)),
            ];
            let width = 0.5 * (he + hw);
            let de = e.map(|q| 0.5 * (diff[k] + diff[q]) / (he * width));
            let dw = w.map(|q| 0.5 * (diff[k] + diff[q]) / (hw * width));
            let keeps_sign = de.map_or(true, |d| central[0] <= d) && dw.map_or(true, |d| central[2] <= d);
            if scheme == Convection::Hybrid && keeps_sign {
                if let Some(q) = e {
                    row.push((q, central[0]));
                }
                row.push((k, central[1]));
                if let Some(q) = w {
                    row.push((q, central[2]));
                }
            } else {
                if scheme == Convection::Hybrid {
                    upwinded += 1;
                }
                if vel > 0.0 {
                    row.push((k, vel / hw));
                    if let Some(q) = w {
                        row.push((q, -vel / hw));
                    }
                } else {
                    row.push((k, -vel / he));
                    if let Some(q) = e {
                        row.push((q, vel / he));
                    }
                }
            }
        }
        row.push((k, pot.values[k]));
        min_potential = min_potential.min(pot.values[k]);
        rows.push(row.into_iter().map(|(n, c)| (unknown[n], c)).collect());
    }
    Ok(EllipticOperator {
        grid: grid.clone(),
        nodes,
        unknown,
        matrix: CsrMatrix::from_rows(rows),
        min_potential,
        upwinded,
    })
}

/// Gradient with the same three-point stencil as the central drift term,
/// taking the zero boundary value at the true crossing distance.
pub fn dirichlet_gradient(f: &ScalarField2D) -> VectorField2D {
    let g = &f.grid;
    let mut out = VectorField2D::zeros(g);
    for k in 0..g.len() {
        if !g.mask[k] {
            continue;
        }
        let t = &g.theta[k];
        let val = |d: usize| {
            g.neighbor(k, d)
                .filter(|&n| g.mask[n])
                .map_or(0.0, |n| f.values[n])
        };
        let d = |fwd: usize, bwd: usize, h: f64| {
            let (he, hw) = (t[fwd] * h, t[bwd] * h);
            val(fwd) * hw / (he * (he + hw)) - f.values[k] * (hw - he) / (he * hw)
                - val(bwd) * he / (hw * (he + hw))
        };
        out.vx[k] = d(EAST, WEST, g.hx);
        out.vy[k] = d(NORTH, SOUTH, g.hy);
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearOptions {
    /// Largest nx·ny handled by sparse LU; larger grids use BiCGStab + ILU(0).
    pub direct_limit: usize,
    pub tol: f64,
    pub maxiter: usize,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            direct_limit: 100_000,
            tol: 1e-10,
            maxiter: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Defaults to min V − 1.
    pub shift: Option<f64>,
    /// Relative stagnation tolerance on λ.
    pub tol: f64,
    /// Relative tolerance on ‖Lφ − λφ‖_∞.
    pub residual_tol: f64,
    pub maxiter: usize,
    pub linear: LinearOptions,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            shift: None,
            tol: 1e-8,
            residual_tol: 1e-6,
            maxiter: 1000,
            linear: LinearOptions::default(),
        }
    }
}

enum Factor {
    Direct(Lu<usize, f64>),
    Krylov {
        a: CsrMatrix,
        ilu: Ilu0,
        tol: f64,
        maxiter: usize,
    },
}

impl Factor {
    fn new(m: &CsrMatrix, nodes_total: usize, opts: &LinearOptions) -> Result<Self> {
        if nodes_total <= opts.direct_limit {
            let mut trip = Vec::with_capacity(m.data.len());
            for i in 0..m.n {
                for (j, v) in m.row(i) {
                    trip.push(Triplet::new(i, j, v));
                }
            }
            let sp = SparseColMat::<usize, f64>::try_new_from_triplets(m.n, m.n, &trip)
                .map_err(|e| Error::Solver(format!("sparse assembly: {e:?}")))?;
            let lu = sp
                .sp_lu()
                .map_err(|e| Error::Solver(format!("sparse LU: {e:?}")))?;
            Ok(Factor::Direct(lu))
        } else {
            Ok(Factor::Krylov {
                a: m.clone(),
                ilu: Ilu0::new(m)?,
                tol: opts.tol,
                maxiter: opts.maxiter,
            })
        }
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factor::Direct(lu) => {
                let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
                let x = lu.solve(&rhs);
                let out: Vec<f64> = (0..b.len()).map(|i| x[i]).collect();
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Solver("LU solve produced non-finite values".into()));
                }
                Ok(out)
            }
            Factor::Krylov {
                a,
                ilu,
                tol,
                maxiter,
            } => bicgstab(a, ilu, b, *tol, *maxiter),
        }
    }
}

/// Incomplete LU with the sparsity of A, stored in place.
struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![NONE; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for p in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.indices[p] == i {
                    *d = p;
                }
            }
            if *d == NONE {
                return Err(Error::Solver(format!("missing diagonal in row {i}")));
            }
        }
        let mut pos = vec![NONE; n];
        for i in 0..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for p in start..end {
                pos[lu.indices[p]] = p;
            }
            for p in start..end {
                let kcol = lu.indices[p];
                if kcol >= i {
                    break;
                }
                let pivot = lu.data[diag[kcol]];
                if pivot == 0.0 {
                    return Err(Error::Solver("zero pivot in ILU(0)".into()));
                }
                let l = lu.data[p] / pivot;
                lu.data[p] = l;
                for q in (diag[kcol] + 1)..lu.indptr[kcol + 1] {
                    let j = lu.indices[q];
                    if pos[j] != NONE {
                        lu.data[pos[j]] -= l * lu.data[q];
                    }
                }
            }
            for p in start..end {
                pos[lu.indices[p]] = NONE;
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let lu = &self.lu;
        let n = lu.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in lu.indptr[i]..self.diag[i] {
                s -= lu.data[p] * y[lu.indices[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in (self.diag[i] + 1)..lu.indptr[i + 1] {
                s -= lu.data[p] * y[lu.indices[p]];
            }
            y[i] = s / lu.data[self.diag[i]];
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGStab.
fn bicgstab(a: &CsrMatrix, m: &Ilu0, b: &[f64], tol: f64, maxiter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..maxiter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return Err(Error::Solver("BiCGStab breakdown (ρ = 0)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = m.apply(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = m.apply(&s);
        let t = a.matvec(&sh);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::Solver("BiCGStab breakdown (t = 0)".into()));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::Solver("BiCGStab breakdown (ω = 0)".into()));
        }
    }
    Err(Error::NonConvergence {
        what: "BiCGStab",
        iterations: maxiter,
        last_change: norm(&r) / bnorm,
    })
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda1: f64,
    /// Nonnegative, sup-norm 1, zero off the mask.
    pub phi: ScalarField2D,
    /// ‖Lφ − λφ‖_∞ over interior nodes.
    pub residual: f64,
    pub iterations: usize,
}

/// Inverse iteration on `op − shift·I`.
pub fn principal_eigenpair(op: &EllipticOperator, opts: &EigenOptions) -> Result<EigenResult> {
    principal_eigenpair_from(op, opts, None)
}

/// As [`principal_eigenpair`], starting from a given interior vector.
pub fn principal_eigenpair_from(
    op: &EllipticOperator,
    opts: &EigenOptions,
    start: Option<&[f64]>,
) -> Result<EigenResult> {
    let n = op.size();
    let shift = opts.shift.unwrap_or(op.min_potential - 1.0);
    let factor = Factor::new(&op.matrix.shifted(shift), op.grid.len(), &opts.linear)?;
    let mut x = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(_) => return invalid("start vector has the wrong length"),
        None => vec![1.0; n],
    };
    let mut lambda = f64::NAN;
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.maxiter {
        let y = factor.solve(&x)?;
        let est = shift + dot(&x, &y) / dot(&y, &y);
        let (imax, _) = y
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        let scale = y[imax];
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Solver("inverse iteration produced a zero iterate".into()));
        }
        x = y.iter().map(|v| v / scale).collect();
        last_change = (est - lambda).abs();
        lambda = est;
        let scale_l = lambda.abs().max(1.0);
        if last_change <= opts.tol * scale_l {
            let lx = op.apply(&x);
            let residual = lx
                .iter()
                .zip(&x)
                .fold(0.0_f64, |m, (a, b)| m.max((a - lambda * b).abs()));
            if residual <= opts.residual_tol * scale_l {
                let most_negative = x.iter().copied().fold(0.0_f64, f64::min);
                if most_negative < -1e-8 {
                    return Err(Error::Discretization(format!(
                        "principal eigenvector has a negative component {most_negative:e}"
                    )));
                }
                return Ok(EigenResult {
                    lambda1: lambda,
                    phi: op.to_field(&x),
                    residual,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        what: "inverse iteration",
        iterations: opts.maxiter,
        last_change,
    })
}

/// Solves `−div(A∇ψ) = f` with zero Dirichlet data.
pub fn dirichlet_solve(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    f: &ScalarField2D,
) -> Result<ScalarField2D> {
    dirichlet_solve_with(grid, a, f, &LinearOptions::default())
}

pub fn dirichlet_solve_with(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    f: &ScalarField2D,
    opts: &LinearOptions,
) -> Result<ScalarField2D> {
    let op = assemble(
        grid,
        a,
        &VectorField2D::zeros(grid),
        &ScalarField2D::zeros(grid),
    )?;
    let b = op.to_unknowns(f);
    let factor = Factor::new(&op.matrix, grid.len(), opts)?;
    let x = factor.solve(&b)?;
    let r = op.apply(&x);
    let res = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let bmax = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if res > 1e3 * opts.tol * bmax.max(f64::MIN_POSITIVE) && res > 1e-12 {
        return Err(Error::Solver(format!("Dirichlet solve residual {res:e} too large")));
    }
    Ok(op.to_field(&x))
}

/// Torsion function: `−div(A∇ψ) = 1`, ψ = 0 on the boundary.
pub fn torsion(grid: &Arc<Grid2D>, a: &MatrixField2D) -> Result<ScalarField2D> {
    dirichlet_solve(grid, a, &ScalarField2D::constant(grid, 1.0))
}

/// Convenience: assemble and solve with default options.
pub fn eigen(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    v: &VectorField2D,
    pot: &ScalarField2D,
) -> Result<EigenResult> {
    principal_eigenpair(&assemble(grid, a, v, pot)?, &EigenOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{div_a_grad_dirichlet, gradient};
    use crate::geometry::DomainSpec;

    fn disk(n: usize) -> Arc<Grid2D> {
        Arc::new(Grid2D::new(&DomainSpec::disk(1.0).unwrap(), n).unwrap())
    }

    #[test]
    fn laplacian_rows_on_square() {
        let g = Arc::new(Grid2D::new(&DomainSpec::rectangle(1.0, 1.0).unwrap(), 12).unwrap());
        let op = assemble(
            &g,
            &MatrixField2D::identity(&g),
            &VectorField2D::zeros(&g),
            &ScalarField2D::constant(&g, 0.0),
        )
        .unwrap();
        let h2 = g.hx * g.hx;
        for i in 0..op.size() {
            assert!((op.matrix.get(i, i) - 4.0 / h2).abs() < 1e-9, "{} {} {:?}", op.matrix.get(i, i), 4.0 / h2, g.theta[op.nodes[i]]);
            for (j, v) in op.matrix.row(i) {
                if j != i {
                    assert!((v + 1.0 / h2).abs() < 1e-9);
                    assert!((op.matrix.get(j, i) - v).abs() < 1e-9);
                }
            }
        }
        let op2 = assemble(
            &g,
            &MatrixField2D::identity(&g),
            &VectorField2D::zeros(&g),
            &ScalarField2D::constant(&g, 2.5),
        )
        .unwrap();
        for i in 0..op.size() {
            assert!((op2.matrix.get(i, i) - op.matrix.get(i, i) - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn upwind_rows_have_zero_sum() {
        let g = Arc::new(Grid2D::new(&DomainSpec::rectangle(1.0, 1.0).unwrap(), 12).unwrap());
        let a = MatrixField2D::identity(&g);
        let zero = ScalarField2D::zeros(&g);
        let base = assemble_with(&g, &a, &VectorField2D::zeros(&g), &zero, Convection::Upwind).unwrap();
        let v = VectorField2D::from_fn(&g, |_, _| [1.0, 0.0]);
        let op = assemble_with(&g, &a, &v, &zero, Convection::Upwind).unwrap();
        for (i, &k) in op.nodes.iter().enumerate() {
            let (ii, _) = g.coords(k);
            // Only rows whose upwind neighbour is interior keep the full difference.
            if !g.mask[k - 1] || ii < 2 {
                continue;
            }
            let s: f64 = op.matrix.row(i).map(|e| e.1).sum::<f64>() - base.matrix.row(i).map(|e| e.1).sum::<f64>();
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn matrix_matches_flux_operator() {
        let g = disk(30);
        let a = MatrixField2D::from_fn(&g, |x, y| [1.5 + 0.3 * x, 0.2 * y, 1.2 + 0.1 * x * y]);
        let op = assemble(&g, &a, &VectorField2D::zeros(&g), &ScalarField2D::zeros(&g)).unwrap();
        let u = ScalarField2D::from_fn_interior(&g, |x, y| (3.0 * x + y).sin() + x * y);
        let lu = op.apply(&op.to_unknowns(&u));
        let d = div_a_grad_dirichlet(&a, &u).unwrap();
        for (i, &k) in op.nodes.iter().enumerate() {
            assert!((lu[i] + d.values[k]).abs() < 1e-8 * (1.0 + d.values[k].abs()));
        }
    }

    #[test]
    fn torsion_on_disk() {
        let g = disk(96);
        let psi = torsion(&g, &MatrixField2D::identity(&g)).unwrap();
        let mut err: f64 = 0.0;
        for k in 0..g.len() {
            if g.mask[k] {
                let p = g.point(k);
                err = err.max((psi.values[k] - (1.0 - p[0] * p[0] - p[1] * p[1]) / 4.0).abs());
            }
        }
        assert!(err < g.h() * g.h(), "torsion error {err}");
        let zero = dirichlet_solve(&g, &MatrixField2D::identity(&g), &ScalarField2D::zeros(&g)).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn iterative_solver_matches_direct() {
        let g = disk(40);
        let a = MatrixField2D::from_fn(&g, |x, _| [1.0 + 0.5 * x * x, 0.1, 1.0]);
        let f = ScalarField2D::from_fn(&g, |x, y| 1.0 + x - y * y);
        let direct = dirichlet_solve(&g, &a, &f).unwrap();
        let opts = LinearOptions {
            direct_limit: 0,
            ..LinearOptions::default()
        };
        let iter = dirichlet_solve_with(&g, &a, &f, &opts).unwrap();
        let diff = direct.zip_map(&iter, |p, q| p - q).sup_norm();
        assert!(diff < 1e-8 * direct.sup_norm(), "diff {diff}");
    }

    #[test]
    fn disk_eigenvalue_and_shift() {
        let g = disk(96);
        let a = MatrixField2D::identity(&g);
        let v = VectorField2D::zeros(&g);
        let r0 = eigen(&g, &a, &v, &ScalarField2D::zeros(&g)).unwrap();
        let j2 = 2.404825557695773_f64.powi(2);
        assert!((r0.lambda1 - j2).abs() / j2 < 1e-2);
        assert!(r0.phi.interior_values().all(|p| p > 0.0));
        assert!((r0.phi.sup_norm() - 1.0).abs() < 1e-15);
        let r1 = eigen(&g, &a, &v, &ScalarField2D::constant(&g, 3.0)).unwrap();
        assert!((r1.lambda1 - r0.lambda1 - 3.0).abs() < 1e-7);
        let diff = r1.phi.zip_map(&r0.phi, |p, q| p - q).sup_norm();
        assert!(diff < 1e-6);
    }

    #[test]
    fn iterative_eigenpair_matches_direct() {
        let g = disk(40);
        let a = MatrixField2D::identity(&g);
        let v = VectorField2D::from_fn(&g, |x, y| [0.5 * x, -y]);
        let pot = ScalarField2D::from_fn(&g, |x, _| x);
        let op = assemble(&g, &a, &v, &pot).unwrap();
        let d = principal_eigenpair(&op, &EigenOptions::default()).unwrap();
        let mut opts = EigenOptions::default();
        opts.linear.direct_limit = 0;
        let i = principal_eigenpair(&op, &opts).unwrap();
        assert!((d.lambda1 - i.lambda1).abs() < 1e-7 * d.lambda1.abs().max(1.0));
    }

    #[test]
    fn dirichlet_gradient_exact_for_quadratics_near_boundary() {
        let g = disk(40);
        let u = ScalarField2D::from_fn_interior(&g, |x, y| 1.0 - x * x - y * y);
        let d = dirichlet_gradient(&u);
        let c = gradient(&u);
        for k in 0..g.len() {
            if g.mask[k] {
                let p = g.point(k);
                assert!((d.vx[k] + 2.0 * p[0]).abs() < 1e-6);
                assert!((d.vy[k] + 2.0 * p[1]).abs() < 1e-6);
                assert!((c.vx[k] + 2.0 * p[0]).abs() < 0.5);
            }
        }
    }
}
