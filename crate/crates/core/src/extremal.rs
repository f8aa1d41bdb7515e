//! Extremal drifts and potentials under L∞ constraints on a fixed domain, and
//! the determinant/σ_p reduction of matrix constraints.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic2d::{assemble, dirichlet_gradient, principal_eigenpair_from, EigenOptions, EigenResult};
use crate::error::{invalid, Error, Result};
use crate::fields::{MatrixField2D, ScalarField2D, VectorField2D};
use crate::geometry::{DomainSpec, Grid2D};
use crate::radial1d::{radial_eigenpair, RadialProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Min => -1.0,
            Direction::Max => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriftOptions {
    pub maxiter: usize,
    /// Relative stagnation tolerance on λ.
    pub tol: f64,
    /// |∇φ| below this fraction of ‖∇φ‖_∞ counts as critical.
    pub grad_floor: f64,
}

impl Default for DriftOptions {
    fn default() -> Self {
        DriftOptions {
            maxiter: 30,
            tol: 1e-6,
            grad_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtremalResult {
    pub drift: VectorField2D,
    pub potential: f64,
    pub lambda: f64,
    pub trace: Vec<f64>,
    /// ‖v·∇φ ∓ τ₁w₁⁻¹|∇φ|‖_∞ over noncritical interior nodes.
    pub alignment_residual: f64,
    pub eigen: EigenResult,
    pub solves: usize,
}

/// Aligned drift ∓τ₁w₁⁻¹∇φ/|∇φ|, zero where |∇φ| is below the floor.
fn aligned_drift(phi: &ScalarField2D, w1: &ScalarField2D, tau1: f64, dir: Direction, floor: f64) -> VectorField2D {
    let g = dirichlet_gradient(phi);
    let gmax = g.sup_norm();
    let mut v = VectorField2D::zeros(&phi.grid);
    for k in 0..phi.grid.len() {
        let n = g.vx[k].hypot(g.vy[k]);
        if phi.grid.mask[k] && n > floor * gmax {
            let s = dir.sign() * tau1 / (w1.values[k] * n);
            v.vx[k] = s * g.vx[k];
            v.vy[k] = s * g.vy[k];
        }
    }
    v
}

fn alignment(v: &VectorField2D, phi: &ScalarField2D, w1: &ScalarField2D, tau1: f64, dir: Direction, floor: f64) -> f64 {
    let g = dirichlet_gradient(phi);
    let gmax = g.sup_norm();
    let mut r = 0.0_f64;
    for k in 0..phi.grid.len() {
        let n = g.vx[k].hypot(g.vy[k]);
        if phi.grid.mask[k] && n > floor * gmax {
            let dot = v.vx[k] * g.vx[k] + v.vy[k] * g.vy[k];
            r = r.max((dot - dir.sign() * tau1 * n / w1.values[k]).abs());
        }
    }
    r
}

/// Fixed-point iteration for the drift and potential extremizing λ₁ under
/// ‖w₁v‖_∞ ≤ τ₁ and ‖V‖_∞ ≤ τ₂.
pub fn optimize_drift(
    grid: &Arc<Grid2D>,
    a: &MatrixField2D,
    w1: &ScalarField2D,
    tau1: f64,
    tau2: f64,
    direction: Direction,
    opts: &DriftOptions,
) -> Result<ExtremalResult> {
    if !(tau1 >= 0.0 && tau2 >= 0.0) {
        return invalid("constraint levels must be nonnegative");
    }
    if (0..grid.len()).any(|k| grid.mask[k] && !(w1.values[k] > 0.0)) {
        return invalid("weight w₁ must be positive");
    }
    let pot_value = direction.sign() * tau2;
    let pot = ScalarField2D::constant(grid, pot_value);
    let eig_opts = EigenOptions::default();
    let mut drift = VectorField2D::zeros(grid);
    let mut start: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    for _ in 0..opts.maxiter {
        let op = assemble(grid, a, &drift, &pot)?;
        let eig = principal_eigenpair_from(&op, &eig_opts, start.as_deref())?;
        start = Some(op.to_unknowns(&eig.phi));
        let lambda = eig.lambda1;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (lambda - prev).abs() <= opts.tol * lambda.abs().max(1.0));
        trace.push(lambda);
        if tau1 == 0.0 || converged {
            let alignment_residual = if tau1 == 0.0 {
                0.0
            } else {
                alignment(&drift, &eig.phi, w1, tau1, direction, opts.grad_floor)
            };
            return Ok(ExtremalResult {
                drift,
                potential: pot_value,
                lambda,
                solves: trace.len(),
                trace,
                alignment_residual,
                eigen: eig,
            });
        }
        drift = aligned_drift(&eig.phi, w1, tau1, direction, opts.grad_floor);
    }
    let n = trace.len();
    let last_change = if n >= 2 { (trace[n - 1] - trace[n - 2]).abs() } else { f64::INFINITY };
    Err(Error::NonConvergence {
        what: "drift fixed-point iteration",
        iterations: opts.maxiter,
        last_change,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallOptimalReport {
    pub lambda_2d: f64,
    pub lambda_radial: f64,
    pub relative_gap: f64,
    pub solves: usize,
    /// Largest increase of φ along a ray, relative to max φ.
    pub monotonicity_defect: f64,
    /// max over noncritical nodes of | |v| − τ₁/w₁ |.
    pub magnitude_error: f64,
    pub pass: bool,
}

/// Optimizes the drift on the disk of radius R and compares with the radial
/// eigenvalue for ω = τ₁/w₁ and V = −τ₂.
pub fn ball_optimal_check(
    radius: f64,
    lam: impl Fn(f64) -> f64,
    w1: impl Fn(f64) -> f64,
    tau1: f64,
    tau2: f64,
    n: usize,
    tol: f64,
) -> Result<BallOptimalReport> {
    let grid = Arc::new(Grid2D::new(&DomainSpec::disk(radius)?, n)?);
    let lam_f = ScalarField2D::from_fn(&grid, |x, y| lam(x.hypot(y)));
    let a = MatrixField2D::scalar(&lam_f);
    let w = ScalarField2D::from_fn(&grid, |x, y| w1(x.hypot(y)));
    let res = optimize_drift(&grid, &a, &w, tau1, tau2, Direction::Min, &DriftOptions::default())?;
    let m = 4000;
    let rad = radial_eigenpair(
        2,
        radius,
        &RadialProfile::from_fn(radius, m, &lam),
        &RadialProfile::from_fn(radius, m, |r| tau1 / w1(r)),
        &RadialProfile::constant(radius, -tau2, m),
        m,
    )?;
    let relative_gap = (res.lambda - rad.lambda1).abs() / rad.lambda1.abs().max(1e-300);
    // φ along the four axis rays from the centre.
    let phi = &res.eigen.phi;
    let (ci, cj) = ((grid.nx - 1) / 2, (grid.ny - 1) / 2);
    let mut defect = 0.0_f64;
    for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
        let (mut i, mut j) = (ci as i64, cj as i64);
        let mut prev = f64::INFINITY;
        while i >= 0 && j >= 0 && (i as usize) < grid.nx && (j as usize) < grid.ny {
            let k = grid.index(i as usize, j as usize);
            if !grid.mask[k] {
                break;
            }
            defect = defect.max(phi.values[k] - prev);
            prev = phi.values[k];
            i += di;
            j += dj;
        }
    }
    let g = dirichlet_gradient(phi);
    let gmax = g.sup_norm();
    let mut magnitude_error = 0.0_f64;
    for k in 0..grid.len() {
        if grid.mask[k] && g.vx[k].hypot(g.vy[k]) > 1e-6 * gmax {
            let mag = res.drift.vx[k].hypot(res.drift.vy[k]);
            magnitude_error = magnitude_error.max((mag - tau1 / w.values[k]).abs());
        }
    }
    let pass = relative_gap <= tol && defect <= 1e-10 && magnitude_error <= 1e-12 * tau1.max(1.0);
    Ok(BallOptimalReport {
        lambda_2d: res.lambda,
        lambda_radial: rad.lambda1,
        relative_gap,
        solves: res.solves,
        monotonicity_defect: defect,
        magnitude_error,
        pass,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// (a₁, a₂) with det diag(a₁, a₂, …, a₂) = ω and σ_p = σ, a₂ the largest
/// root of f(s) = ωC_{n−1}^{p−1}s^{p−n} + C_{n−1}^p s^p = σ.
pub fn det_sigma_reduction(n: usize, p: usize, omega: f64, sigma: f64) -> Result<(f64, f64)> {
    if n < 2 || p < 1 || p > n - 1 {
        return invalid(format!("need 1 ≤ p ≤ n−1, got n = {n}, p = {p}"));
    }
    if !(omega > 0.0 && sigma > 0.0) {
        return invalid("ω and σ must be positive");
    }
    let c1 = omega * binomial(n - 1, p - 1);
    let c2 = binomial(n - 1, p);
    let f = |s: f64| c1 * s.powi(p as i32 - n as i32) + c2 * s.powi(p as i32);
    let s0 = omega.powf(1.0 / n as f64);
    let fmin = binomial(n, p) * omega.powf(p as f64 / n as f64);
    let gap = sigma - fmin;
    if gap < -1e-12 * sigma {
        return invalid(format!("σ = {sigma} is below the minimum C_n^p ω^(p/n) = {fmin}"));
    }
    let a2 = if gap <= 4.0 * f64::EPSILON * sigma {
        s0
    } else {
        let mut hi = 2.0 * s0;
        while f(hi) <= sigma {
            hi *= 2.0;
        }
        let mut lo = s0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) <= sigma {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        // Newton polish; f′ > 0 to the right of the minimiser.
        let df = |s: f64| {
            c1 * (p as f64 - n as f64) * s.powi(p as i32 - n as i32 - 1) + c2 * p as f64 * s.powi(p as i32 - 1)
        };
        let mut s = 0.5 * (lo + hi);
        for _ in 0..3 {
            let d = df(s);
            if d > 0.0 {
                s -= (f(s) - sigma) / d;
            }
        }
        s.max(s0)
    };
    let a1 = omega / a2.powi(n as i32 - 1);
    Ok((a1, a2))
}

/// σ_p of diag(a₁, a₂, …, a₂) in dimension n.
pub fn sigma_p_diag(n: usize, p: usize, a1: f64, a2: f64) -> f64 {
    a1 * binomial(n - 1, p - 1) * a2.powi(p as i32 - 1) + binomial(n - 1, p) * a2.powi(p as i32)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemdetReport {
    pub a1: f64,
    pub a2: f64,
    /// λ₁ with A* on the fine and coarse grids.
    pub lambda_fine: f64,
    pub lambda_coarse: f64,
    /// First-order extrapolation of the two grid values to h = 0.
    pub lambda_extrapolated: f64,
    pub lambda_radial: f64,
    pub relative_gap_fine: f64,
    pub relative_gap: f64,
    pub pass: bool,
}

fn anisotropic_disk_eigenvalue(radius: f64, a1: f64, a2: f64, tau: f64, pot: f64, n: usize) -> Result<(f64, f64)> {
    let grid = Arc::new(Grid2D::new(&DomainSpec::disk(radius)?, n)?);
    let a = MatrixField2D::from_fn(&grid, |x, y| {
        let r = x.hypot(y);
        if r == 0.0 {
            return [a1, 0.0, a1];
        }
        let (c, s) = (x / r, y / r);
        [a1 * c * c + a2 * s * s, (a1 - a2) * c * s, a1 * s * s + a2 * c * c]
    });
    let v = VectorField2D::from_fn(&grid, |x, y| {
        let r = x.hypot(y);
        if r == 0.0 {
            [0.0, 0.0]
        } else {
            [tau * x / r, tau * y / r]
        }
    });
    let p = ScalarField2D::constant(&grid, pot);
    let eig = crate::elliptic2d::eigen(&grid, &a, &v, &p)?;
    Ok((eig.lambda1, grid.h()))
}

/// λ₁ on the disk with A* = a₁e_r⊗e_r + a₂(Id − e_r⊗e_r), drift τe_r and
/// potential V, against the radial eigenvalue with Λ = a₁.
///
/// A* is discontinuous at the centre, which limits the planar scheme to first
/// order; the comparison uses the extrapolation from grids of n and n/2 nodes.
pub fn remdet_check(
    radius: f64,
    omega: f64,
    sigma: f64,
    tau: f64,
    pot: f64,
    n: usize,
    tol: f64,
) -> Result<RemdetReport> {
    let (a1, a2) = det_sigma_reduction(2, 1, omega, sigma)?;
    let (fine, hf) = anisotropic_disk_eigenvalue(radius, a1, a2, tau, pot, n)?;
    let (coarse, hc) = anisotropic_disk_eigenvalue(radius, a1, a2, tau, pot, n / 2)?;
    let extrapolated = fine + (fine - coarse) * hf / (hc - hf);
    let m = 4000;
    let rad = radial_eigenpair(
        2,
        radius,
        &RadialProfile::constant(radius, a1, m),
        &RadialProfile::constant(radius, tau, m),
        &RadialProfile::constant(radius, pot, m),
        m,
    )?;
    let scale = rad.lambda1.abs().max(1e-300);
    let relative_gap = (extrapolated - rad.lambda1).abs() / scale;
    Ok(RemdetReport {
        a1,
        a2,
        lambda_fine: fine,
        lambda_coarse: coarse,
        lambda_extrapolated: extrapolated,
        lambda_radial: rad.lambda1,
        relative_gap_fine: (fine - rad.lambda1).abs() / scale,
        relative_gap,
        pass: relative_gap <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_examples() {
        let (a1, a2) = det_sigma_reduction(2, 1, 1.0, 2.5).unwrap();
        assert!((a1 - 0.5).abs() < 1e-12 && (a2 - 2.0).abs() < 1e-12);
        assert!((a1 * a2 - 1.0).abs() < 1e-10);
        assert!((sigma_p_diag(2, 1, a1, a2) - 2.5).abs() < 1e-10);
        assert_eq!(det_sigma_reduction(2, 1, 1.0, 2.0).unwrap(), (1.0, 1.0));
        assert_eq!(det_sigma_reduction(3, 2, 1.0, 3.0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn reduction_preconditions() {
        assert!(det_sigma_reduction(2, 1, 1.0, 1.9).is_err());
        assert!(det_sigma_reduction(2, 2, 1.0, 3.0).is_err());
        assert!(det_sigma_reduction(2, 0, 1.0, 3.0).is_err());
        assert!(det_sigma_reduction(3, 1, -1.0, 3.0).is_err());
    }

    #[test]
    fn reduction_general_dimension() {
        for (n, p, w, s) in [(3, 1, 2.0, 5.0), (4, 2, 0.5, 9.0), (5, 3, 3.0, 40.0)] {
            let (a1, a2) = det_sigma_reduction(n, p, w, s).unwrap();
            assert!((a1 * a2.powi(n as i32 - 1) - w).abs() < 1e-10 * w);
            assert!((sigma_p_diag(n, p, a1, a2) - s).abs() < 1e-10 * s);
            let root = w.powf(1.0 / n as f64);
            assert!(a1 <= root && root <= a2);
        }
    }

    #[test]
    fn zero_drift_budget_is_one_solve() {
        let g = Arc::new(Grid2D::new(&DomainSpec::rectangle(1.0, 1.0).unwrap(), 40).unwrap());
        let a = MatrixField2D::identity(&g);
        let w = ScalarField2D::constant(&g, 1.0);
        let r = optimize_drift(&g, &a, &w, 0.0, 1.0, Direction::Min, &DriftOptions::default()).unwrap();
        assert_eq!(r.solves, 1);
        let base = crate::elliptic2d::eigen(&g, &a, &VectorField2D::zeros(&g), &ScalarField2D::zeros(&g)).unwrap();
        assert!((r.lambda - (base.lambda1 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn max_direction_raises_lambda() {
        let g = Arc::new(Grid2D::new(&DomainSpec::disk(1.0).unwrap(), 48).unwrap());
        let a = MatrixField2D::identity(&g);
        let w = ScalarField2D::constant(&g, 1.0);
        let lo = optimize_drift(&g, &a, &w, 1.0, 0.5, Direction::Min, &DriftOptions::default()).unwrap();
        let hi = optimize_drift(&g, &a, &w, 1.0, 0.5, Direction::Max, &DriftOptions::default()).unwrap();
        assert!(lo.lambda < hi.lambda);
        assert!(lo.alignment_residual < 1e-5);
        assert!(lo.trace.len() <= 30);
    }
}
