//! Level-set rearrangement of (ψ, Λ, ω, V) onto the equal-measure ball.
//!
//! Everything is built from co-area binning: the cells of the grid are
//! sorted into K level bins of ψ, and densities such as ∫_{Σ_a} g|∇ψ|⁻¹ are
//! bin masses divided by bin widths.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{div_a_grad_dirichlet, gradient, MatrixField2D, ScalarField2D};
use crate::geometry::{alpha_n, equal_measure_ball_radius, EAST, NORTH, SOUTH, WEST};
use crate::radial1d::RadialProfile;

pub const DEFAULT_LEVELS: usize = 200;
pub const DEFAULT_SAMPLES: usize = 2000;

/// Per-bin integrals ∫ g over {a_j ≤ ψ < a_{j+1}}.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BinMoments {
    pub volume: f64,
    pub inv_lambda: f64,
    pub omega2_inv_lambda: f64,
    pub vneg: f64,
    pub grad: f64,
}

/// Area of one triangle of the interpolation mesh falling into one bin.
#[derive(Clone, Copy, Debug)]
pub struct Piece {
    /// Grid nodes averaged for coefficient values (masked vertices only).
    pub nodes: [usize; 3],
    pub count: u8,
    pub bin: usize,
    pub area: f64,
}

impl Piece {
    pub fn mean(&self, f: &[f64]) -> f64 {
        let c = self.count as usize;
        self.nodes[..c].iter().map(|&k| f[k]).sum::<f64>() / c as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelSetTable {
    pub dim: usize,
    /// a_0 = 0 < … < a_K = M.
    pub levels: Vec<f64>,
    /// |Ω_{a_j}|, one entry per level; the last is 0.
    pub volume: Vec<f64>,
    /// ρ(a_j) = (|Ω_{a_j}|/α_n)^{1/n}.
    pub rho: Vec<f64>,
    /// One entry per bin [a_j, a_{j+1}).
    pub bins: Vec<BinMoments>,
    /// I(a_j) = ∫_{Ω_{a_j}} div(A∇ψ), one entry per level.
    pub flux: Vec<f64>,
    pub total_measure: f64,
    pub r_star: f64,
    /// Bins merged away because they carried no measure.
    pub merged: usize,
    #[serde(skip)]
    pub pieces: Vec<Piece>,
    #[serde(skip)]
    pub grid_len: usize,
    pub grid_h: f64,
    pub grad_sup: f64,
}

impl LevelSetTable {
    pub fn max_level(&self) -> f64 {
        *self.levels.last().unwrap()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_width(&self, j: usize) -> f64 {
        self.levels[j + 1] - self.levels[j]
    }

    /// Radius enclosing half of the bin's volume, where bin densities are placed.
    pub fn bin_radius(&self, j: usize) -> f64 {
        let n = self.dim as i32;
        let mid = 0.5 * (self.rho[j].powi(n) + self.rho[j + 1].powi(n));
        mid.powf(1.0 / self.dim as f64)
    }

    /// ∫ g over each bin, for an arbitrary field g on the same grid.
    pub fn bin_mass(&self, g: &ScalarField2D) -> Result<Vec<f64>> {
        if g.values.len() != self.grid_len {
            return invalid("field does not match the grid of the level table");
        }
        let mut out = vec![0.0; self.bins.len()];
        for p in &self.pieces {
            out[p.bin] += p.area * p.mean(&g.values);
        }
        Ok(out)
    }

    /// ρ(a) by linear interpolation of the sampled table.
    pub fn rho_of(&self, a: f64) -> f64 {
        let l = &self.levels;
        if a <= l[0] {
            return self.rho[0];
        }
        if a >= *l.last().unwrap() {
            return *self.rho.last().unwrap();
        }
        let j = l.partition_point(|&x| x <= a) - 1;
        let w = (a - l[j]) / (l[j + 1] - l[j]);
        self.rho[j] + w * (self.rho[j + 1] - self.rho[j])
    }

    /// ρ⁻¹(r) by monotone piecewise-linear inversion.
    pub fn rho_inverse(&self, r: f64) -> f64 {
        let rho = &self.rho;
        if r >= rho[0] {
            return self.levels[0];
        }
        if r <= *rho.last().unwrap() {
            return self.max_level();
        }
        // rho is decreasing: find j with rho[j] ≥ r > rho[j+1].
        let j = rho.partition_point(|&x| x >= r) - 1;
        let w = (rho[j] - r) / (rho[j] - rho[j + 1]);
        self.levels[j] + w * (self.levels[j + 1] - self.levels[j])
    }
}

/// Node values of ψ with exterior nodes extended linearly so that the
/// interpolant vanishes near the true boundary crossing.
fn extended_values(psi: &ScalarField2D) -> Vec<f64> {
    let g = &psi.grid;
    let mut ext = vec![f64::NAN; g.len()];
    for k in 0..g.len() {
        if g.mask[k] {
            ext[k] = psi.values[k];
        }
    }
    // Exterior nodes next to the mask: ψ_P(1 − 1/θ) along each crossing.
    let opposite = [WEST, EAST, SOUTH, NORTH];
    let mut first = vec![f64::NAN; g.len()];
    for q in 0..g.len() {
        if g.mask[q] {
            continue;
        }
        let (mut sum, mut cnt) = (0.0, 0);
        for dir in 0..4 {
            if let Some(p) = g.neighbor(q, dir) {
                if g.mask[p] {
                    let th = g.theta[p][opposite[dir]];
                    sum += psi.values[p] * (1.0 - 1.0 / th);
                    cnt += 1;
                }
            }
        }
        if cnt > 0 {
            first[q] = sum / cnt as f64;
        }
    }
    for q in 0..g.len() {
        if !first[q].is_nan() {
            ext[q] = first[q];
        }
    }
    // Remaining exterior nodes: average of extended neighbours, else 0.
    for q in 0..g.len() {
        if ext[q].is_nan() {
            let (mut sum, mut cnt) = (0.0, 0);
            for dir in 0..4 {
                if let Some(p) = g.neighbor(q, dir) {
                    if !first[p].is_nan() {
                        sum += first[p];
                        cnt += 1;
                    }
                }
            }
            ext[q] = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
        }
    }
    ext
}

/// Fraction of a linear triangle with sorted vertex values f lying below t.
pub(crate) fn below_fraction(f: [f64; 3], t: f64) -> f64 {
    let [f0, f1, f2] = f;
    if t <= f0 {
        0.0
    } else if t >= f2 {
        1.0
    } else if t <= f1 {
        (t - f0) * (t - f0) / ((f1 - f0) * (f2 - f0))
    } else {
        1.0 - (f2 - t) * (f2 - t) / ((f2 - f1) * (f2 - f0))
    }
}

/// Bins ψ into K uniform levels and accumulates the co-area moments.
///
/// Measures come from the piecewise-linear interpolant of ψ on the grid
/// triangles, whose level-set areas are exact quadratics in the level; the
/// coefficients are taken constant on each triangle.
pub fn build_level_table(
    psi: &ScalarField2D,
    lam: &ScalarField2D,
    omega: &ScalarField2D,
    vneg: &ScalarField2D,
    a: &MatrixField2D,
    k: usize,
) -> Result<LevelSetTable> {
    if k < 8 {
        return invalid(format!("need at least 8 levels, got {k}"));
    }
    let grid = &psi.grid;
    for f in [lam, omega, vneg] {
        if f.values.len() != grid.len() {
            return invalid("coefficient fields do not match the grid of ψ");
        }
    }
    let m_psi = psi.interior_max();
    if !(m_psi > 0.0) {
        return invalid("max ψ must be positive");
    }
    if psi.interior_min() < -1e-8 * m_psi {
        return invalid("ψ must be nonnegative");
    }
    for k in 0..grid.len() {
        if grid.mask[k] && !(lam.values[k] > 0.0) {
            return invalid(format!("Λ must be positive, got {} at node {k}", lam.values[k]));
        }
    }
    let ext = extended_values(psi);
    let div = div_a_grad_dirichlet(a, psi)?;
    let da = m_psi / k as f64;
    let mut levels: Vec<f64> = (0..=k).map(|j| j as f64 * da).collect();
    levels[k] = m_psi;
    let w2l: Vec<f64> = (0..grid.len())
        .map(|i| omega.values[i] * omega.values[i] / lam.values[i])
        .collect();
    let inv_l: Vec<f64> = lam.values.iter().map(|l| 1.0 / l).collect();

    let mut pieces = Vec::new();
    let mut grad_area = Vec::new();
    let tri_area = 0.5 * grid.hx * grid.hy;
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let sw = grid.index(i, j);
            let (se, nw, ne) = (sw + 1, sw + grid.nx, sw + grid.nx + 1);
            for tri in [[sw, se, ne], [sw, ne, nw]] {
                let mut nodes = [0; 3];
                let mut count = 0u8;
                for &v in &tri {
                    if grid.mask[v] {
                        nodes[count as usize] = v;
                        count += 1;
                    }
                }
                if count == 0 {
                    continue;
                }
                let mut f = tri.map(|v| ext[v]);
                if f.iter().all(|&x| x <= 0.0) {
                    continue;
                }
                // P1 gradient on the triangle.
                let (gx, gy) = if tri[1] == se {
                    ((f[1] - f[0]) / grid.hx, (f[2] - f[1]) / grid.hy)
                } else {
                    ((f[1] - f[2]) / grid.hx, (f[2] - f[0]) / grid.hy)
                };
                let gnorm = gx.hypot(gy);
                f.sort_by(|x, y| x.total_cmp(y));
                let mut prev = below_fraction(f, 0.0);
                for b in 0..k {
                    let up = if b + 1 == k { 1.0 } else { below_fraction(f, levels[b + 1]) };
                    let area = tri_area * (up - prev);
                    prev = up;
                    if area > 0.0 {
                        pieces.push(Piece { nodes, count, bin: b, area });
                        grad_area.push(gnorm);
                    }
                    if up >= 1.0 {
                        break;
                    }
                }
            }
        }
    }

    let mut bins = vec![BinMoments::default(); k];
    let mut bin_flux = vec![0.0; k];
    for (p, &gn) in pieces.iter().zip(&grad_area) {
        let bm = &mut bins[p.bin];
        bm.volume += p.area;
        bm.inv_lambda += p.area * p.mean(&inv_l);
        bm.omega2_inv_lambda += p.area * p.mean(&w2l);
        bm.vneg += p.area * p.mean(&vneg.values);
        bm.grad += p.area * gn;
        bin_flux[p.bin] += p.area * p.mean(&div.values);
    }
    let total: f64 = bins.iter().map(|b| b.volume).sum();

    // Merge bins without measure into a neighbour.
    let mut merged = 0;
    let mut remap: Vec<usize> = (0..k).collect();
    let mut j = 0;
    while j < bins.len() {
        if bins[j].volume > 1e-14 * total || bins.len() == 1 {
            j += 1;
            continue;
        }
        merged += 1;
        let dead = bins.remove(j);
        let dead_flux = bin_flux.remove(j);
        let target = if j < bins.len() { j } else { j - 1 };
        let t = &mut bins[target];
        t.volume += dead.volume;
        t.inv_lambda += dead.inv_lambda;
        t.omega2_inv_lambda += dead.omega2_inv_lambda;
        t.vneg += dead.vneg;
        t.grad += dead.grad;
        bin_flux[target] += dead_flux;
        // Dropping level j+1 joins bins j and j+1; for the top bin drop level j.
        levels.remove(if j < bins.len() { j + 1 } else { j });
        for r in remap.iter_mut() {
            if *r > j || (*r == j && j == bins.len()) {
                *r -= 1;
            }
        }
    }
    for p in pieces.iter_mut() {
        p.bin = remap[p.bin];
    }

    let nb = bins.len();
    let mut volume = vec![0.0; nb + 1];
    let mut level_flux = vec![0.0; nb + 1];
    for j in (0..nb).rev() {
        volume[j] = volume[j + 1] + bins[j].volume;
        level_flux[j] = level_flux[j + 1] + bin_flux[j];
    }
    let dim = 2;
    let an = alpha_n(dim)?;
    let r_star = equal_measure_ball_radius(total, dim)?;
    let mut rho: Vec<f64> = volume.iter().map(|v| (v / an).sqrt()).collect();
    rho[0] = r_star;
    Ok(LevelSetTable {
        dim,
        levels,
        volume,
        rho,
        bins,
        flux: level_flux,
        total_measure: total,
        r_star,
        merged,
        pieces,
        grid_len: grid.len(),
        grid_h: grid.h(),
        grad_sup: gradient(psi).magnitude().sup_norm(),
    })
}

/// Piecewise-linear function of r through (r_i, v_i), r ascending, constant outside.
#[derive(Clone, Debug)]
struct Knots {
    r: Vec<f64>,
    v: Vec<f64>,
}

impl Knots {
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        Knots {
            r: pairs.iter().map(|p| p.0).collect(),
            v: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn eval(&self, r: f64) -> f64 {
        let n = self.r.len();
        if r <= self.r[0] {
            return self.v[0];
        }
        if r >= self.r[n - 1] {
            return self.v[n - 1];
        }
        let i = self.r.partition_point(|&x| x <= r) - 1;
        let w = (r - self.r[i]) / (self.r[i + 1] - self.r[i]);
        self.v[i] + w * (self.v[i + 1] - self.v[i])
    }

    fn sample(&self, radius: f64, m: usize) -> RadialProfile {
        RadialProfile::from_fn(radius, m, |r| self.eval(r))
    }
}

fn bin_profile(table: &LevelSetTable, m: usize, value: impl Fn(usize) -> Result<f64>) -> Result<RadialProfile> {
    let mut pairs = Vec::with_capacity(table.bin_count());
    for j in 0..table.bin_count() {
        pairs.push((table.bin_radius(j), value(j)?));
    }
    Ok(Knots::from_pairs(pairs).sample(table.r_star, m))
}

fn nonzero(x: f64, what: &str, j: usize) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::Discretization(format!("empty {what} in level bin {j}")))
    }
}

/// Λ̂(ρ(a)) = S₁(a)/S_{Λ⁻¹}(a).
pub fn hat_lambda(table: &LevelSetTable, m: usize) -> Result<RadialProfile> {
    bin_profile(table, m, |j| {
        let b = &table.bins[j];
        Ok(b.volume / nonzero(b.inv_lambda, "Λ⁻¹ mass", j)?)
    })
}

/// |v̂|(ρ(a)) = √(S_{ω²Λ⁻¹}/S_{Λ⁻¹}) and V̂(ρ(a)) = −S_{V⁻}/S₁.
pub fn hat_drift_potential(table: &LevelSetTable, m: usize) -> Result<(RadialProfile, RadialProfile)> {
    let v = bin_profile(table, m, |j| {
        let b = &table.bins[j];
        Ok((b.omega2_inv_lambda / nonzero(b.inv_lambda, "Λ⁻¹ mass", j)?).sqrt())
    })?;
    let pot = bin_profile(table, m, |j| {
        let b = &table.bins[j];
        Ok(-b.vneg / nonzero(b.volume, "volume", j)?)
    })?;
    Ok((v, pot))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TildePsi {
    pub f: RadialProfile,
    pub psi: RadialProfile,
    /// ψ̃ at the level radii ρ(a_j).
    pub at_levels: Vec<f64>,
    /// Samples where F exceeded zero beyond tolerance, as (r, F).
    pub positive_f: Vec<(f64, f64)>,
}

/// F(r) = I(ρ⁻¹(r))/(nα_n r^{n−1} Λ̂(r)) and ψ̃(r) = −∫_r^{R*} F.
pub fn tilde_psi(table: &LevelSetTable, hat_lam: &RadialProfile, m: usize) -> Result<TildePsi> {
    let n = table.dim;
    let surf = n as f64 * alpha_n(n)?;
    let nl = table.levels.len();
    // Knots at ρ_j, from the outside (j = 0, r = R*) inwards; F(0) = 0.
    let mut fk = Vec::with_capacity(nl);
    for j in 0..nl {
        let r = table.rho[j];
        let f = if r > 0.0 {
            table.flux[j] / (surf * r.powi(n as i32 - 1) * hat_lam.eval(r))
        } else {
            0.0
        };
        fk.push(f);
    }
    let scale = fk.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let positive_f: Vec<(f64, f64)> = (0..nl)
        .filter(|&j| fk[j] > 1e-9 * scale)
        .map(|j| (table.rho[j], fk[j]))
        .collect();
    let mut at_levels = vec![0.0; nl];
    for j in 1..nl {
        let dr = table.rho[j - 1] - table.rho[j];
        at_levels[j] = at_levels[j - 1] - 0.5 * dr * (fk[j - 1] + fk[j]);
    }
    let mut pairs: Vec<(f64, f64)> = (0..nl).map(|j| (table.rho[j], fk[j])).collect();
    if table.rho[nl - 1] > 0.0 {
        pairs.push((0.0, 0.0));
    }
    let fknots = Knots::from_pairs(pairs);
    let f = fknots.sample(table.r_star, m);
    // ψ̃ is the exact integral of the piecewise-linear F, evaluated from R* inwards.
    let mut psi = vec![0.0; m + 1];
    let h = table.r_star / m as f64;
    let integral = |a: f64, b: f64| -> f64 {
        // ∫_a^b F over knot-aligned sub-intervals.
        let mut pts = vec![a];
        for &r in &fknots.r {
            if r > a && r < b {
                pts.push(r);
            }
        }
        pts.push(b);
        pts.windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (fknots.eval(w[0]) + fknots.eval(w[1])))
            .sum()
    };
    for i in (0..m).rev() {
        psi[i] = psi[i + 1] - integral(i as f64 * h, (i + 1) as f64 * h);
    }
    Ok(TildePsi {
        f,
        psi: RadialProfile {
            radius: table.r_star,
            values: psi,
        },
        at_levels,
        positive_f,
    })
}

/// U(r) = ∫₀^r |v̂|/Λ̂ by the trapezoid rule on the profile grid.
pub fn weight_u(hat_lam: &RadialProfile, hat_v: &RadialProfile) -> RadialProfile {
    let m = hat_lam.intervals();
    let h = hat_lam.step();
    let g = |i: usize| hat_v.eval(hat_lam.r(i)) / hat_lam.values[i];
    let mut u = vec![0.0; m + 1];
    for i in 0..m {
        u[i + 1] = u[i] + 0.5 * h * (g(i) + g(i + 1));
    }
    RadialProfile {
        radius: hat_lam.radius,
        values: u,
    }
}

/// Radial profiles of the rearranged data on [0, R*].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RearrangedData {
    pub r_star: f64,
    pub lambda: RadialProfile,
    pub f: RadialProfile,
    pub psi: RadialProfile,
    pub speed: RadialProfile,
    pub potential: RadialProfile,
    pub u: RadialProfile,
    pub psi_at_levels: Vec<f64>,
    pub positive_f: Vec<(f64, f64)>,
}

pub fn rearrange(table: &LevelSetTable, m: usize) -> Result<RearrangedData> {
    let lambda = hat_lambda(table, m)?;
    let tp = tilde_psi(table, &lambda, m)?;
    let (speed, potential) = hat_drift_potential(table, m)?;
    let u = weight_u(&lambda, &speed);
    Ok(RearrangedData {
        r_star: table.r_star,
        lambda,
        f: tp.f,
        psi: tp.psi,
        speed,
        potential,
        u,
        psi_at_levels: tp.at_levels,
        positive_f: tp.positive_f,
    })
}

impl RearrangedData {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,lambda_hat,F,psi_tilde,v_hat,V_hat,U\n");
        for i in 0..self.lambda.values.len() {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.lambda.r(i),
                self.lambda.values[i],
                self.f.values[i],
                self.psi.values[i],
                self.speed.values[i],
                self.potential.values[i],
                self.u.values[i]
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// A checked inequality `lhs ≤ rhs + tol`, or an equality residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
    /// rhs + tol − lhs; nonnegative when the check passes.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let margin = rhs + tol - lhs;
        Check {
            name: name.to_string(),
            lhs,
            rhs,
            tol,
            margin,
            pass: margin >= 0.0,
        }
    }

    /// Strict lhs < rhs.
    pub fn lt(name: &str, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Check {
            name: name.to_string(),
            lhs,
            rhs,
            tol: 0.0,
            margin,
            pass: margin > 0.0,
        }
    }

    /// |lhs − rhs| ≤ tol·|rhs|.
    pub fn rel_eq(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let t = tol * rhs.abs();
        let margin = t - (lhs - rhs).abs();
        Check {
            name: name.to_string(),
            lhs,
            rhs,
            tol: t,
            margin,
            pass: margin >= 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RearrangementReport {
    /// min over a > 0 of ψ̃(ρ(a)) − a.
    pub pointwise_margin: f64,
    /// min over 0 < a ≤ M/2 of ψ̃(ρ(a))/a; reported as an observed gap.
    pub level_ratio: f64,
    /// min over bins of ∫ S_{|∇ψ|} against ∫ nα_n ρ^{n−1}.
    pub isoperimetric_ratio: f64,
    pub mu: f64,
    pub mu_from_grid: bool,
    pub checks: Vec<Check>,
    pub positive_f: Vec<(f64, f64)>,
}

impl RearrangementReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tolerances of the comparison checks.
pub const GRADIENT_SLACK: f64 = 0.01;
pub const CONSERVATION_TOL: f64 = 5e-3;
pub const ISOPERIMETRY_TOL: f64 = 0.01;
pub const INTEGRAL_SLACK: f64 = 0.02;

/// Verifies the pointwise, isoperimetric, conservation, gradient and weighted
/// integral inequalities for one rearrangement run. When `mu` is `None`, the
/// smallest μ for which ψ satisfies the differential hypothesis on the grid is used.
pub fn verify_report(
    data: &RearrangedData,
    table: &LevelSetTable,
    psi: &ScalarField2D,
    a: &MatrixField2D,
    lam: &ScalarField2D,
    omega: &ScalarField2D,
    pot: &ScalarField2D,
    omega0: f64,
    mu: Option<f64>,
) -> Result<RearrangementReport> {
    let n = table.dim;
    let surf = n as f64 * alpha_n(n)?;
    let m_psi = table.max_level();
    let tol_pt = 5.0 * table.grid_h * table.grad_sup;
    let mut checks = Vec::new();

    let mut pointwise_margin = f64::INFINITY;
    let mut level_ratio = f64::INFINITY;
    for (j, &aj) in table.levels.iter().enumerate().skip(1) {
        let t = data.psi_at_levels[j];
        pointwise_margin = pointwise_margin.min(t - aj);
        if aj > 0.0 && aj <= 0.5 * m_psi {
            level_ratio = level_ratio.min(t / aj);
        }
    }
    checks.push(Check::le("pointwise", -pointwise_margin, 0.0, tol_pt));

    // Integrated over each bin: ∫ per(Ω_a) da against the trapezoid of nα_nρ^{n−1}.
    let mut iso = f64::INFINITY;
    for j in 0..table.bin_count() {
        let ball = 0.5 * surf * (table.rho[j].powi(n as i32 - 1) + table.rho[j + 1].powi(n as i32 - 1));
        iso = iso.min(table.bins[j].grad / (ball * table.bin_width(j)));
    }
    checks.push(Check::le("isoperimetry", 1.0, iso, ISOPERIMETRY_TOL));

    let inv_lam_omega = lam.map(|l| 1.0 / l).integrate();
    let inv_lam_star = data.lambda.map(|l| 1.0 / l).integrate_ball(n)?;
    checks.push(Check::rel_eq("conservation_inv_lambda", inv_lam_star, inv_lam_omega, CONSERVATION_TOL));
    let w2 = omega.zip_map(lam, |w, l| w * w / l).integrate();
    let v2_star = RadialProfile {
        radius: data.r_star,
        values: (0..data.lambda.values.len())
            .map(|i| data.speed.values[i].powi(2) / data.lambda.values[i])
            .collect(),
    }
    .integrate_ball(n)?;
    if w2 > 0.0 {
        checks.push(Check::rel_eq("conservation_v2", v2_star, w2, CONSERVATION_TOL));
    }

    // Bounds on the rearranged coefficients.
    let cells: Vec<usize> = (0..psi.grid.len()).filter(|&k| psi.grid.cell_area(k) > 0.0).collect();
    let lmin = cells.iter().map(|&k| lam.values[k]).fold(f64::INFINITY, f64::min);
    let lmax = cells.iter().map(|&k| lam.values[k]).fold(f64::NEG_INFINITY, f64::max);
    let wmax = cells.iter().map(|&k| omega.values[k]).fold(0.0, f64::max);
    let vneg_max = cells.iter().map(|&k| (-pot.values[k]).max(0.0)).fold(0.0, f64::max);
    let eps = 1e-12;
    checks.push(Check::le("lambda_hat_lower", lmin, data.lambda.min(), eps * lmin));
    checks.push(Check::le("lambda_hat_upper", data.lambda.max(), lmax, eps * lmax));
    checks.push(Check::le("v_hat_sup", data.speed.max(), wmax, eps * wmax.max(1.0)));
    checks.push(Check::le("v_hat_potential_sup", -data.potential.min(), vneg_max, eps * vneg_max.max(1.0)));
    checks.push(Check::le("potential_hat_sign", data.potential.max(), 0.0, 0.0));

    // Gradient comparisons.
    let g = gradient(psi);
    let mut energy = 0.0;
    let mut l1 = 0.0;
    for k in 0..psi.grid.len() {
        if !psi.grid.mask[k] {
            continue;
        }
        let [a11, a12, a22] = a.at(k);
        let (gx, gy) = (g.vx[k], g.vy[k]);
        let area = psi.grid.cell_area(k);
        energy += area * (a11 * gx * gx + 2.0 * a12 * gx * gy + a22 * gy * gy);
        l1 += area * gx.hypot(gy);
    }
    let energy_star = RadialProfile {
        radius: data.r_star,
        values: (0..data.f.values.len())
            .map(|i| data.lambda.values[i] * data.f.values[i].powi(2))
            .collect(),
    }
    .integrate_ball(n)?;
    let l1_star = data.f.map(f64::abs).integrate_ball(n)?;
    checks.push(Check::le("gradient_energy", energy, energy_star, GRADIENT_SLACK * energy_star));
    checks.push(Check::le("gradient_l1", l1, l1_star, GRADIENT_SLACK * l1_star));

    // Weighted integral inequality.
    let (mu, mu_from_grid) = match mu {
        Some(m) => (m, false),
        None => (minimal_mu(psi, a, omega, pot, omega0)?, true),
    };
    let len = data.f.values.len();
    let weight: Vec<f64> = data.u.values.iter().map(|u| (-u).exp()).collect();
    let lhs = RadialProfile {
        radius: data.r_star,
        values: (0..len)
            .map(|i| {
                let (f, p) = (data.f.values[i], data.psi.values[i]);
                (data.lambda.values[i] * f * f - omega0 * f.abs() * p + data.potential.values[i] * p * p) * weight[i]
            })
            .collect(),
    }
    .integrate_ball(n)?;
    let rhs_base = RadialProfile {
        radius: data.r_star,
        values: (0..len).map(|i| data.psi.values[i].powi(2) * weight[i]).collect(),
    }
    .integrate_ball(n)?;
    let rhs = mu * rhs_base;
    checks.push(Check::le(
        "integral_inequality",
        lhs,
        rhs,
        INTEGRAL_SLACK * mu.abs().max(1.0) * rhs_base,
    ));
    checks.push(Check::le("positive_f", data.positive_f.len() as f64, 0.0, 0.0));

    Ok(RearrangementReport {
        pointwise_margin,
        level_ratio,
        isoperimetric_ratio: iso,
        mu,
        mu_from_grid,
        checks,
        positive_f: data.positive_f.clone(),
    })
}

/// Smallest μ with −div(A∇ψ) − (ω+ω₀)|∇ψ| + Vψ ≤ μψ at every interior node.
pub fn minimal_mu(
    psi: &ScalarField2D,
    a: &MatrixField2D,
    omega: &ScalarField2D,
    pot: &ScalarField2D,
    omega0: f64,
) -> Result<f64> {
    let div = div_a_grad_dirichlet(a, psi)?;
    let g = gradient(psi).magnitude();
    let mut mu = 0.0_f64;
    for k in 0..psi.grid.len() {
        if !psi.grid.mask[k] || psi.values[k] <= 0.0 {
            continue;
        }
        let lhs = -div.values[k] - (omega.values[k] + omega0) * g.values[k] + pot.values[k] * psi.values[k];
        mu = mu.max(lhs / psi.values[k]);
    }
    Ok(mu)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenComparison {
    pub lambda1: f64,
    pub lambda_star: f64,
    pub r_star: f64,
    pub tolerance: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Solves the planar problem, rearranges its eigenfunction and compares
/// λ₁ with the radial eigenvalue λ* of the rearranged data.
pub fn compare_eigenvalues(
    grid: &std::sync::Arc<crate::geometry::Grid2D>,
    a: &MatrixField2D,
    v: &crate::fields::VectorField2D,
    pot: &ScalarField2D,
    levels: usize,
    samples: usize,
) -> Result<EigenComparison> {
    compare_eigenvalues_detailed(grid, a, v, pot, levels, samples).map(|d| d.comparison)
}

/// Intermediate products of [`compare_eigenvalues`].
#[derive(Clone, Debug)]
pub struct ComparisonData {
    pub comparison: EigenComparison,
    pub eigen: crate::elliptic2d::EigenResult,
    pub table: LevelSetTable,
    pub data: RearrangedData,
}

pub fn compare_eigenvalues_detailed(
    grid: &std::sync::Arc<crate::geometry::Grid2D>,
    a: &MatrixField2D,
    v: &crate::fields::VectorField2D,
    pot: &ScalarField2D,
    levels: usize,
    samples: usize,
) -> Result<ComparisonData> {
    let eig = crate::elliptic2d::eigen(grid, a, v, pot)?;
    if eig.lambda1 < 0.0 {
        return Err(Error::Hypothesis(format!("λ₁ = {} is negative", eig.lambda1)));
    }
    let lam = crate::fields::lambda_of_a(a);
    let omega = v.magnitude();
    let vneg = pot.negative_part();
    let table = build_level_table(&eig.phi, &lam, &omega, &vneg, a, levels)?;
    let data = rearrange(&table, samples)?;
    let star = crate::radial1d::radial_eigenpair(
        table.dim,
        table.r_star,
        &data.lambda,
        &data.speed,
        &data.potential,
        samples,
    )?;
    let tolerance = 0.02 * eig.lambda1.abs().max(1.0);
    let cells: Vec<usize> = (0..grid.len()).filter(|&k| grid.cell_area(k) > 0.0).collect();
    let lmin = cells.iter().map(|&k| lam.values[k]).fold(f64::INFINITY, f64::min);
    let lmax = cells.iter().map(|&k| lam.values[k]).fold(f64::NEG_INFINITY, f64::max);
    let wmax = cells.iter().map(|&k| omega.values[k]).fold(0.0, f64::max);
    let eps = 1e-12;
    let mu_vneg = vneg.integrate();
    let mu_vhat = data.potential.map(f64::abs).integrate_ball(table.dim)?;
    let checks = vec![
        Check::le("eigenvalue", star.lambda1, eig.lambda1, tolerance),
        Check::le("lambda_hat_lower", lmin, data.lambda.min(), eps * lmin),
        Check::le("lambda_hat_upper", data.lambda.max(), lmax, eps * lmax),
        Check::le("v_hat_sup", data.speed.max(), wmax, eps * wmax.max(1.0)),
        Check::le("potential_mass", mu_vhat, mu_vneg, CONSERVATION_TOL * mu_vneg.max(1.0)),
    ];
    let pass = checks.iter().all(|c| c.pass);
    let comparison = EigenComparison {
        lambda1: eig.lambda1,
        lambda_star: star.lambda1,
        r_star: table.r_star,
        tolerance,
        checks,
        pass,
    };
    Ok(ComparisonData {
        comparison,
        eigen: eig,
        table,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic2d::torsion;
    use crate::geometry::{DomainSpec, Grid2D};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(domain: DomainSpec, n: usize) -> (Arc<Grid2D>, ScalarField2D, MatrixField2D) {
        let g = Arc::new(Grid2D::new(&domain, n).unwrap());
        let a = MatrixField2D::identity(&g);
        let psi = torsion(&g, &a).unwrap();
        (g, psi, a)
    }

    #[test]
    fn disk_torsion_table() {
        let (g, psi, a) = setup(DomainSpec::disk(1.0).unwrap(), 128);
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        let t = build_level_table(&psi, &one, &zero, &zero, &a, 50).unwrap();
        assert_eq!(t.rho[0], t.r_star);
        assert_eq!(*t.rho.last().unwrap(), 0.0);
        assert!(t.volume.windows(2).all(|w| w[1] < w[0]));
        // S₁ = 4π for the disk torsion function, away from the boundary band.
        for j in 5..t.bin_count() - 5 {
            let s1 = t.bins[j].volume / t.bin_width(j);
            assert!((s1 - 4.0 * PI).abs() / (4.0 * PI) < 0.05, "bin {j}: {s1}");
        }
        for (j, &a) in t.levels.iter().enumerate().skip(1) {
            let expect = (1.0 - 4.0 * a).max(0.0).sqrt();
            assert!((t.rho[j] - expect).abs() < 0.02, "level {j}");
        }
        assert!(t.flux[..t.flux.len() - 1].iter().all(|&i| i < 0.0));
    }

    #[test]
    fn scaling_relabels_levels() {
        let (g, psi, a) = setup(DomainSpec::ellipse(1.4, 0.8).unwrap(), 64);
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        let t1 = build_level_table(&psi, &one, &zero, &zero, &a, 32).unwrap();
        let t2 = build_level_table(&psi.map(|v| 3.0 * v), &one, &zero, &zero, &a, 32).unwrap();
        for (x, y) in t1.rho.iter().zip(&t2.rho) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in t1.levels.iter().zip(&t2.levels) {
            assert!((3.0 * x - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn rho_inverse_round_trip() {
        let (g, psi, a) = setup(DomainSpec::ellipse(1.5, 0.6).unwrap(), 64);
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        let t = build_level_table(&psi, &one, &zero, &zero, &a, 40).unwrap();
        for i in 0..=20 {
            let r = t.r_star * i as f64 / 20.0;
            assert!((t.rho_of(t.rho_inverse(r)) - r).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (g, psi, a) = setup(DomainSpec::disk(1.0).unwrap(), 32);
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        assert!(build_level_table(&psi, &one, &zero, &zero, &a, 4).is_err());
        assert!(build_level_table(&zero, &one, &zero, &zero, &a, 16).is_err());
    }

    #[test]
    fn constant_coefficients_are_preserved() {
        let (g, psi, a) = setup(DomainSpec::ellipse(1.3, 0.7).unwrap(), 64);
        let gamma = ScalarField2D::constant(&g, 2.5);
        let w = ScalarField2D::constant(&g, 0.75);
        let zero = ScalarField2D::zeros(&g);
        let t = build_level_table(&psi, &gamma, &w, &zero, &a, 40).unwrap();
        let lam = hat_lambda(&t, 200).unwrap();
        assert!(lam.values.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let (v, pot) = hat_drift_potential(&t, 200).unwrap();
        assert!(v.values.iter().all(|&x| (x - 0.75).abs() < 1e-12));
        assert!(pot.values.iter().all(|&x| x == 0.0));
        let u = weight_u(&lam, &v);
        let r = u.radius;
        assert!((u.values.last().unwrap() - 0.75 * r / 2.5).abs() < 1e-12);
    }

    #[test]
    fn ellipse_coarea_completeness_and_max() {
        let (g, psi, a) = setup(DomainSpec::ellipse(2.0, 0.5).unwrap(), 128);
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        let t = build_level_table(&psi, &one, &zero, &zero, &a, 100).unwrap();
        let total: f64 = (0..t.bin_count()).map(|j| t.bins[j].volume / t.bin_width(j) * t.bin_width(j)).sum();
        assert!((total - g.area()).abs() / g.area() < 5e-3);
        let data = rearrange(&t, 1000).unwrap();
        assert!(data.psi.values[0] >= t.max_level());
        assert_eq!(*data.psi.values.last().unwrap(), 0.0);
        assert!(data.psi.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(data.f.values.iter().all(|&f| f <= 0.0));
        assert_eq!(data.f.values[0], 0.0);
    }
}
