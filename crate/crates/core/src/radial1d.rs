//! Radially symmetric eigenproblems on balls, Bessel zeros and closed-form bounds.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::geometry::alpha_n;

pub const DEFAULT_NODES: usize = 2000;

/// Uniform samples of a function of the radius on `[0, radius]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub radius: f64,
    pub values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(radius: f64, values: Vec<f64>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return invalid(format!("profile radius must be positive, got {radius}"));
        }
        if values.len() < 2 {
            return invalid("profile needs at least two samples");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("profile samples must be finite");
        }
        Ok(RadialProfile { radius, values })
    }

    pub fn constant(radius: f64, c: f64, m: usize) -> Self {
        RadialProfile {
            radius,
            values: vec![c; m.max(1) + 1],
        }
    }

    pub fn from_fn(radius: f64, m: usize, f: impl Fn(f64) -> f64) -> Self {
        let m = m.max(1);
        let h = radius / m as f64;
        RadialProfile {
            radius,
            values: (0..=m).map(|i| f(i as f64 * h)).collect(),
        }
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.radius / self.intervals() as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    /// Piecewise-linear interpolation, clamped to the end values outside `[0, R]`.
    pub fn eval(&self, r: f64) -> f64 {
        let m = self.intervals();
        let t = (r / self.step()).clamp(0.0, m as f64);
        let i = (t.floor() as usize).min(m - 1);
        let w = t - i as f64;
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        RadialProfile {
            radius: self.radius,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// ∫ over the n-ball of radius R of f(|x|), by composite Simpson on the
    /// piecewise-linear interpolant.
    pub fn integrate_ball(&self, n: usize) -> Result<f64> {
        let surf = n as f64 * alpha_n(n)?;
        let h = self.step();
        let mut s = 0.0;
        for i in 0..self.intervals() {
            let (r0, r1) = (self.r(i), self.r(i + 1));
            let rm = 0.5 * (r0 + r1);
            let fm = 0.5 * (self.values[i] + self.values[i + 1]);
            let w = |r: f64| r.powi(n as i32 - 1);
            s += h / 6.0 * (self.values[i] * w(r0) + 4.0 * fm * w(rm) + self.values[i + 1] * w(r1));
        }
        Ok(surf * s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialEigenResult {
    pub lambda1: f64,
    /// Eigenfunction with sup-norm 1, vanishing at r = R.
    pub phi: RadialProfile,
    pub residual: f64,
    pub iterations: usize,
    /// Collatz–Wielandt enclosure of λ₁ from the final iterate.
    pub lower: f64,
    pub upper: f64,
}

/// λ₁ of −r^{1−n}(r^{n−1}Λu′)′ + ωu′ + Vu on [0, R] with u′(0) = 0, u(R) = 0.
///
/// The equation is discretised in its self-adjoint form with the weight
/// r^{n−1}e^{−U}, U′ = ω/Λ, as a finite-volume scheme whose first cell is
/// the half cell [0, h/2]. The tridiagonal solve is organised so that it
/// involves no subtractions, which keeps relative accuracy when λ₁ is
/// exponentially small.
pub fn radial_eigenpair(
    n: usize,
    radius: f64,
    lam: &RadialProfile,
    omega: &RadialProfile,
    pot: &RadialProfile,
    m: usize,
) -> Result<RadialEigenResult> {
    if n == 0 {
        return invalid("dimension must be at least 1");
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    if m < 8 {
        return invalid("radial grid needs at least 8 intervals");
    }
    if lam.min() <= 0.0 {
        return invalid("Λ profile must be positive");
    }
    let h = radius / m as f64;
    // Values at quarter-spacing points r = k h/4.
    let q = |k: usize| k as f64 * h / 4.0;
    let g = |r: f64| omega.eval(r) / lam.eval(r);
    let mut u_half = vec![0.0; 2 * m + 1];
    for k in 0..2 * m {
        let (a, b, c) = (q(2 * k), q(2 * k + 1), q(2 * k + 2));
        u_half[k + 1] = u_half[k] + h / 12.0 * (g(a) + 4.0 * g(b) + g(c));
    }
    let u_at = |r_half_index: usize| u_half[r_half_index];
    let w = |r: f64, u: f64| r.powi(n as i32 - 1) * (-u).exp();
    // U at the quarter point between half-index k and k+1, by linear interpolation.
    let u_quarter = |k: usize| 0.5 * (u_half[k] + u_half[k + 1]);

    // Face conductances p_{i+1/2} and control volumes.
    let mut p = vec![0.0; m];
    for (i, pi) in p.iter_mut().enumerate() {
        let r = (i as f64 + 0.5) * h;
        *pi = w(r, u_at(2 * i + 1)) * lam.eval(r) / h;
    }
    let mut vol = vec![0.0; m];
    vol[0] = h / 12.0 * (w(0.0, u_at(0)) + 4.0 * w(h / 4.0, u_quarter(0)) + w(h / 2.0, u_at(1)));
    for (i, vi) in vol.iter_mut().enumerate().skip(1) {
        let (a, c) = ((i as f64 - 0.5) * h, (i as f64 + 0.5) * h);
        let left = h / 12.0
            * (w(a, u_at(2 * i - 1)) + 4.0 * w(a + h / 4.0, u_quarter(2 * i - 1)) + w(i as f64 * h, u_at(2 * i)));
        let right = h / 12.0
            * (w(i as f64 * h, u_at(2 * i)) + 4.0 * w(c - h / 4.0, u_quarter(2 * i)) + w(c, u_at(2 * i + 1)));
        *vi = left + right;
    }
    let vr: Vec<f64> = (0..m).map(|i| pot.eval(i as f64 * h)).collect();
    let vmin = vr.iter().copied().fold(f64::INFINITY, f64::min);
    let qpot: Vec<f64> = vr.iter().map(|v| v - vmin).collect();

    // Row i: (a_i + c_i + q_i) u_i − a_i u_{i−1} − c_i u_{i+1}, c_{m−1} couples to u_m = 0.
    let a: Vec<f64> = (0..m).map(|i| if i == 0 { 0.0 } else { p[i - 1] / vol[i] }).collect();
    let c: Vec<f64> = (0..m).map(|i| p[i] / vol[i]).collect();
    // Pivots π_i = c_i + s_i with s_i ≥ 0 built without subtraction.
    let mut piv = vec![0.0; m];
    let mut s_prev = 0.0;
    for i in 0..m {
        let s = if i == 0 {
            qpot[0]
        } else {
            qpot[i] + a[i] * s_prev / piv[i - 1]
        };
        piv[i] = c[i] + s;
        s_prev = s;
    }
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut bp = b.to_vec();
        for i in 1..m {
            bp[i] += a[i] * bp[i - 1] / piv[i - 1];
        }
        let mut x = vec![0.0; m];
        x[m - 1] = bp[m - 1] / piv[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = (bp[i] + c[i] * x[i + 1]) / piv[i];
        }
        x
    };

    let mut x = vec![1.0; m];
    let mut mu = f64::NAN;
    let mut lo;
    let mut hi;
    let mut iterations = 0;
    let mut stalled = 0;
    let max_iter = 20_000;
    loop {
        iterations += 1;
        let y = solve(&x);
        let (mut num, mut den) = (0.0, 0.0);
        lo = f64::INFINITY;
        hi = 0.0_f64;
        for i in 0..m {
            num += vol[i] * x[i] * y[i];
            den += vol[i] * y[i] * y[i];
            let r = x[i] / y[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let est = num / den;
        let ymax = y.iter().copied().fold(0.0, f64::max);
        x = y.iter().map(|v| v / ymax).collect();
        if (est - mu).abs() <= 1e-15 * est {
            stalled += 1;
        } else {
            stalled = 0;
        }
        let gap_ok = hi - lo <= 1e-12 * lo;
        mu = est;
        if gap_ok || stalled >= 3 {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                what: "radial inverse iteration",
                iterations,
                last_change: (hi - lo) / lo,
            });
        }
    }

    // Residual of the discrete equation for the normalised iterate.
    let mut residual: f64 = 0.0;
    for i in 0..m {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < m { x[i + 1] } else { 0.0 };
        let tu = (a[i] + c[i] + qpot[i]) * x[i] - a[i] * left - c[i] * right;
        residual = residual.max((tu - mu * x[i]).abs());
    }
    let mut values = x.clone();
    values.push(0.0);
    let phi = RadialProfile {
        radius,
        values,
    };
    let monotone_expected = omega.min() >= 0.0 && pot.max() - pot.min() == 0.0;
    if monotone_expected {
        for i in 1..phi.values.len() {
            if phi.values[i] > phi.values[i - 1] * (1.0 + 1e-9) + 1e-300 {
                return Err(Error::Discretization(format!(
                    "radial eigenfunction increases at r = {}",
                    phi.r(i)
                )));
            }
        }
    }
    Ok(RadialEigenResult {
        lambda1: vmin + mu,
        phi,
        residual,
        iterations,
        lower: vmin + lo,
        upper: vmin + hi,
    })
}

/// Constant-coefficient convenience wrapper.
pub fn radial_eigenvalue_const(
    n: usize,
    radius: f64,
    lam: f64,
    omega: f64,
    pot: f64,
    m: usize,
) -> Result<f64> {
    let p = |c: f64| RadialProfile::constant(radius, c, 1);
    Ok(radial_eigenpair(n, radius, &p(lam), &p(omega), &p(pot), m)?.lambda1)
}

/// J₀ by its power series; accurate on [0, 4].
pub fn bessel_j0(x: f64) -> f64 {
    let q = -(x * x) / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= q / (k as f64 * k as f64);
        sum += term;
    }
    sum
}

/// k-th positive zero of J_order; only the first zero of J₀ is provided.
pub fn bessel_zero(order: u32, k: u32) -> Result<f64> {
    if order != 0 || k != 1 {
        return invalid(format!("bessel_zero supports (0, 1) only, got ({order}, {k})"));
    }
    let (mut lo, mut hi) = (2.0_f64, 3.0_f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if bessel_j0(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First Dirichlet root j_{n/2−1,1} for the supported dimensions.
pub fn ball_root(n: usize) -> Result<f64> {
    match n {
        1 => Ok(PI / 2.0),
        2 => bessel_zero(0, 1),
        _ => invalid(format!("dimension {n} is not supported")),
    }
}

/// λ₁ of the Laplacian on the ball of measure m.
pub fn rfk_value(m: f64, n: usize) -> Result<f64> {
    if !(m > 0.0) {
        return invalid("measure must be positive");
    }
    let j = ball_root(n)?;
    let nf = n as f64;
    Ok((1.0 / m).powf(2.0 / nf) * alpha_n(n)?.powf(2.0 / nf) * j * j)
}

/// λ₁ on the ball of measure m for γ Id, drift α e_r and potential β.
pub fn fn_value(n: usize, m: f64, gamma: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(m > 0.0 && gamma > 0.0 && alpha >= 0.0) {
        return invalid("fn_value needs m > 0, γ > 0, α ≥ 0");
    }
    let r = crate::geometry::equal_measure_ball_radius(m, n)?;
    radial_eigenvalue_const(n, r, gamma, alpha, beta, DEFAULT_NODES)
}

/// Explicit lower bound κ for λ₁ on the ball of measure m with Λ ≥ m_Λ and drift τ₁.
pub fn kappa_bound(m: f64, n: usize, m_lambda: f64, tau1: f64) -> Result<f64> {
    if !(m > 0.0 && m_lambda > 0.0 && tau1 >= 0.0) {
        return invalid("kappa_bound needs m > 0, m_Λ > 0, τ₁ ≥ 0");
    }
    let nf = n as f64;
    let an = alpha_n(n)?;
    let j = ball_root(n)?;
    Ok(m_lambda
        * (-tau1 / m_lambda * an.powf(-1.0 / nf) * m.powf(1.0 / nf)).exp()
        * m.powf(-2.0 / nf)
        * an.powf(2.0 / nf)
        * j
        * j)
}
