//! Distribution functions, Schwarz symmetrization, shell rearrangements and
//! potentials with a prescribed distribution.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic2d::torsion;
use crate::error::{invalid, Error, Result};
use crate::fields::{MatrixField2D, ScalarField2D};
use crate::geometry::{alpha_n, measure, DomainSpec, Grid2D};
use crate::radial1d::RadialProfile;
use crate::rearrange::{below_fraction, LevelSetTable};

/// Right-continuous nonincreasing step function: μ(t) = `measures[j]` on
/// `[t_j, t_{j+1})`, `total` below `t_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistFn {
    pub thresholds: Vec<f64>,
    pub measures: Vec<f64>,
    pub total: f64,
}

impl DistFn {
    pub fn new(thresholds: Vec<f64>, measures: Vec<f64>, total: f64) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != measures.len() {
            return invalid("thresholds and measures must be nonempty and of equal length");
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("thresholds must be strictly increasing");
        }
        if !(total > 0.0) {
            return invalid("total measure must be positive");
        }
        let mut prev = total;
        for &m in &measures {
            if !(m >= 0.0 && m <= prev) {
                return invalid("measures must be nonincreasing within [0, total]");
            }
            prev = m;
        }
        Ok(DistFn {
            thresholds,
            measures,
            total,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let j = self.thresholds.partition_point(|&x| x <= t);
        if j == 0 {
            self.total
        } else {
            self.measures[j - 1]
        }
    }

    /// sup{s : μ(s) > m}.
    pub fn generalized_inverse(&self, m: f64) -> f64 {
        let j = self.measures.partition_point(|&x| x > m);
        if j == self.measures.len() {
            f64::INFINITY
        } else {
            self.thresholds[j]
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mu\n");
        for (t, m) in self.thresholds.iter().zip(&self.measures) {
            writeln!(s, "{t},{m}").unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// (value, area) of every grid cell with positive area.
fn cells(u: &ScalarField2D) -> Vec<(f64, f64)> {
    (0..u.grid.len())
        .filter_map(|k| {
            let a = u.grid.cell_area(k);
            (a > 0.0).then_some((u.values[k], a))
        })
        .collect()
}

/// Measure of {u > t} for each threshold.
pub fn measures_above(u: &ScalarField2D, thresholds: &[f64]) -> Vec<f64> {
    let c = cells(u);
    thresholds
        .iter()
        .map(|&t| c.iter().filter(|p| p.0 > t).map(|p| p.1).sum())
        .collect()
}

/// μ_u at `j` uniform thresholds spanning [min u, max u].
pub fn distribution_function(u: &ScalarField2D, j: usize) -> Result<DistFn> {
    if j < 2 {
        return invalid(format!("need at least 2 thresholds, got {j}"));
    }
    let c = cells(u);
    if c.is_empty() {
        return invalid("field has no cells of positive area");
    }
    let lo = c.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = c.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let total = c.iter().map(|p| p.1).sum();
    let thresholds: Vec<f64> = if hi > lo {
        (0..j).map(|i| lo + (hi - lo) * i as f64 / (j - 1) as f64).collect()
    } else {
        vec![lo]
    };
    let measures = measures_above(u, &thresholds);
    DistFn::new(thresholds, measures, total)
}

/// Measure of {x ∈ B_R : f(|x|) > t} for the piecewise-linear profile f.
pub fn profile_measure_above(f: &RadialProfile, n: usize, t: f64) -> Result<f64> {
    let an = alpha_n(n)?;
    let vol = |a: f64, b: f64| an * (b.powi(n as i32) - a.powi(n as i32));
    let mut total = 0.0;
    for i in 0..f.intervals() {
        let (r0, r1) = (f.r(i), f.r(i + 1));
        let (v0, v1) = (f.values[i], f.values[i + 1]);
        if v0 > t && v1 > t {
            total += vol(r0, r1);
        } else if v0 > t || v1 > t {
            let rc = r0 + (r1 - r0) * (t - v0) / (v1 - v0);
            total += if v0 > t { vol(r0, rc) } else { vol(rc, r1) };
        }
    }
    Ok(total)
}

pub fn profile_distribution(f: &RadialProfile, n: usize, thresholds: &[f64]) -> Result<Vec<f64>> {
    thresholds.iter().map(|&t| profile_measure_above(f, n, t)).collect()
}

/// Schwarz symmetrization u* on the equal-area disk, sampled at m+1 radii.
///
/// The distribution function is that of the piecewise-linear interpolant on
/// the lattice triangles, each triangle weighted by the mean domain fraction
/// of its vertex cells so the total is the cell measure. Ranking raw cell
/// values instead biases ‖∇u*‖₂ upward: the squared increments between
/// neighbouring ranks carry the sampling noise.
pub fn schwarz(u: &ScalarField2D, m: usize) -> Result<RadialProfile> {
    let grid = &u.grid;
    let total: f64 = (0..grid.len()).map(|k| grid.cell_area(k)).sum();
    if !(total > 0.0) {
        return invalid("field has no cells of positive area");
    }
    let an = alpha_n(2)?;
    let radius = (total / an).sqrt();
    let mut tris: Vec<([f64; 3], f64)> = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let sw = grid.index(i, j);
            let se = grid.index(i + 1, j);
            let ne = grid.index(i + 1, j + 1);
            let nw = grid.index(i, j + 1);
            for tri in [[sw, se, ne], [sw, ne, nw]] {
                let w: f64 = tri.iter().map(|&k| grid.cell_area(k)).sum::<f64>() / 6.0;
                if w > 0.0 {
                    let mut f = tri.map(|k| u.values[k]);
                    f.sort_by(f64::total_cmp);
                    tris.push((f, w));
                }
            }
        }
    }
    let lo = tris.iter().map(|t| t.0[0]).fold(f64::INFINITY, f64::min);
    let hi = tris.iter().map(|t| t.0[2]).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-14 * hi.abs().max(lo.abs()).max(1.0)) {
        return Ok(RadialProfile::constant(radius, hi, m));
    }
    // μ(t_i) = |{u > t_i}| at uniform levels; exact for the interpolant.
    let nl = (2 * m).max(2000);
    let dt = (hi - lo) / nl as f64;
    let level = |i: usize| if i == nl { hi } else { lo + i as f64 * dt };
    let mut mu = vec![0.0; nl + 1];
    // full[i]: weight of triangles lying entirely above every level below i.
    let mut full = vec![0.0; nl + 2];
    for (f, w) in &tris {
        let first = (((f[0] - lo) / dt).ceil().max(0.0) as usize).min(nl);
        let last = (((f[2] - lo) / dt).floor().max(0.0) as usize).min(nl);
        full[first] += w;
        for (i, m) in mu.iter_mut().enumerate().take(last + 1).skip(first) {
            *m += w * (1.0 - below_fraction(*f, level(i)));
        }
    }
    let mut run = 0.0;
    for i in (0..=nl).rev() {
        run += full[i + 1];
        mu[i] += run;
    }
    Ok(RadialProfile::from_fn(radius, m, |r| {
        let s = an * r * r;
        let i = mu.partition_point(|&x| x > s);
        if i == 0 {
            lo
        } else if i > nl {
            hi
        } else {
            let w = (mu[i - 1] - s) / (mu[i - 1] - mu[i]);
            level(i - 1) + w * (level(i) - level(i - 1))
        }
    }))
}

/// ∫|∇u*|² over the disk for a radial profile, by differences of the samples.
pub fn radial_dirichlet_energy(f: &RadialProfile) -> f64 {
    let h = f.step();
    (0..f.intervals())
        .map(|i| {
            let d = (f.values[i + 1] - f.values[i]) / h;
            2.0 * std::f64::consts::PI * (f.r(i) + 0.5 * h) * h * d * d
        })
        .sum()
}

/// ∫|∇u|² over the grid using the interpolant's gradient on each triangle.
pub fn grid_dirichlet_energy(u: &ScalarField2D) -> f64 {
    let g = &u.grid;
    let val = |k: usize| if g.mask[k] { u.values[k] } else { 0.0 };
    let mut e = 0.0;
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let sw = g.index(i, j);
            let (se, nw, ne) = (sw + 1, sw + g.nx, sw + g.nx + 1);
            let g1 = ((val(se) - val(sw)) / g.hx, (val(ne) - val(se)) / g.hy);
            let g2 = ((val(ne) - val(nw)) / g.hx, (val(nw) - val(sw)) / g.hy);
            e += 0.5 * g.hx * g.hy * (g1.0 * g1.0 + g1.1 * g1.1 + g2.0 * g2.0 + g2.1 * g2.1);
        }
    }
    e
}

/// C^∞ transition: 0 on (−∞, 1/3], 1 on [2/3, ∞).
pub fn zeta(x: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(3.0 * x - 1.0);
    let b = f(2.0 - 3.0 * x);
    if a + b == 0.0 {
        return if x < 0.5 { 0.0 } else { 1.0 };
    }
    a / (a + b)
}

/// Decreasing rearrangement of g restricted to one ψ-shell.
#[derive(Clone, Debug)]
struct ShellDist {
    /// Cumulative area and value, values decreasing.
    cum: Vec<f64>,
    val: Vec<f64>,
    min: f64,
    max: f64,
    integral: f64,
}

impl ShellDist {
    /// g*(m) = sup{a : |{g > a}| ≥ m}.
    fn at(&self, m: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < m);
        self.val[i.min(self.val.len() - 1)]
    }
}

/// Shell rearrangement g_k with its lower and upper smooth envelopes.
#[derive(Clone, Debug)]
pub struct ShellRearrangement {
    pub radius: f64,
    pub k: usize,
    shells: Vec<ShellDist>,
    ramp: f64,
}

impl ShellRearrangement {
    fn edge(&self, i: usize) -> f64 {
        self.radius * i as f64 / (self.k + 1) as f64
    }

    fn pivot(&self, i: usize) -> f64 {
        let (a, b) = (self.edge(i), self.edge(i + 1));
        ((a * a + b * b) / 2.0).sqrt()
    }

    fn shell_of(&self, r: f64) -> usize {
        ((r / self.radius * (self.k + 1) as f64).floor().max(0.0) as usize).min(self.k)
    }

    pub fn shell_count(&self) -> usize {
        self.shells.len()
    }

    /// ∫ g over the i-th ψ-shell.
    pub fn shell_integral(&self, i: usize) -> f64 {
        self.shells[i].integral
    }

    pub fn shell_bounds(&self, i: usize) -> (f64, f64) {
        (self.edge(i), self.edge(i + 1))
    }

    pub fn eval(&self, r: f64) -> f64 {
        let i = self.shell_of(r);
        let p = self.pivot(i);
        let m = 2.0 * std::f64::consts::PI * (p * p - r * r).abs();
        self.shells[i].at(m)
    }

    fn envelope(&self, r: f64, level: impl Fn(&ShellDist) -> f64, lower: bool) -> f64 {
        let i = self.shell_of(r);
        let here = level(&self.shells[i]);
        let w = self.ramp;
        // Ramps sit inside the shell whose value is farther from the envelope side.
        let above = |a: f64, b: f64| if lower { a > b } else { a < b };
        if i + 1 < self.shells.len() {
            let e = self.edge(i + 1);
            let next = level(&self.shells[i + 1]);
            if r >= e - w && above(here, next) {
                return here + (next - here) * zeta((r - e + w) / w);
            }
        }
        if i > 0 {
            let e = self.edge(i);
            let prev = level(&self.shells[i - 1]);
            if r <= e + w && above(here, prev) {
                return here + (prev - here) * zeta((e + w - r) / w);
            }
        }
        here
    }

    pub fn lower(&self, r: f64) -> f64 {
        self.envelope(r, |s| s.min, true)
    }

    pub fn upper(&self, r: f64) -> f64 {
        self.envelope(r, |s| s.max, false)
    }

    /// ∫_{Ω*} g_k φ(|x|) by a midpoint rule with `nq` nodes per shell.
    pub fn integrate_against(&self, phi: impl Fn(f64) -> f64, nq: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..self.shells.len() {
            let (a, b) = self.shell_bounds(i);
            let h = (b - a) / nq as f64;
            for j in 0..nq {
                let r = a + (j as f64 + 0.5) * h;
                total += 2.0 * std::f64::consts::PI * r * h * self.eval(r) * phi(r);
            }
        }
        total
    }

    pub fn profiles(&self, m: usize) -> (RadialProfile, RadialProfile, RadialProfile) {
        (
            RadialProfile::from_fn(self.radius, m, |r| self.eval(r)),
            RadialProfile::from_fn(self.radius, m, |r| self.lower(r)),
            RadialProfile::from_fn(self.radius, m, |r| self.upper(r)),
        )
    }
}

/// Builds g_k for k+1 shells of equal radial width on Ω*.
///
/// ψ-shells are read off the level table: every level bin occupies an
/// interval of the volume coordinate |Ω_a|, and its triangle pieces are split
/// among shells in proportion to the overlap, so each ψ-shell has exactly the
/// measure of its annulus.
pub fn shell_rearrangement(g: &ScalarField2D, table: &LevelSetTable, k: usize) -> Result<ShellRearrangement> {
    if k < 1 {
        return invalid("need at least one shell");
    }
    if g.values.len() != table.grid_len {
        return invalid("field does not match the grid of the level table");
    }
    let an = alpha_n(table.dim)?;
    let radius = table.r_star;
    let n = table.dim as i32;
    let edges: Vec<f64> = (0..=k + 1)
        .map(|i| an * (radius * i as f64 / (k + 1) as f64).powi(n))
        .collect();
    // Shares of each bin's volume interval falling into each shell.
    let nb = table.bin_count();
    let mut shares: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for (j, sh) in shares.iter_mut().enumerate() {
        let (lo, hi) = (table.volume[j + 1], table.volume[j]);
        for i in 0..=k {
            let (a, b) = (edges[i], if i == k { f64::INFINITY } else { edges[i + 1] });
            let o = hi.min(b) - lo.max(a);
            if o > 0.0 {
                sh.push((i, o / (hi - lo)));
            }
        }
    }
    let mut pieces: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k + 1];
    // Each piece carries its vertex values with equal weights, which keeps
    // the distribution of g sharper than the triangle means would.
    for p in &table.pieces {
        let c = p.count as usize;
        for &(i, f) in &shares[p.bin] {
            let w = p.area * f / c as f64;
            for &node in &p.nodes[..c] {
                pieces[i].push((g.values[node], w));
            }
        }
    }
    let mut shells = Vec::with_capacity(k + 1);
    for (i, mut p) in pieces.into_iter().enumerate() {
        if p.is_empty() {
            return Err(Error::Discretization(format!("shell {i} has zero measure")));
        }
        p.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut cum = Vec::with_capacity(p.len());
        let mut c = 0.0;
        for q in &p {
            c += q.1;
            cum.push(c);
        }
        shells.push(ShellDist {
            cum,
            val: p.iter().map(|q| q.0).collect(),
            min: p.last().unwrap().0,
            max: p[0].0,
            integral: p.iter().map(|q| q.0 * q.1).sum(),
        });
    }
    Ok(ShellRearrangement {
        radius,
        k,
        shells,
        ramp: radius / (k + 1) as f64 / 8.0,
    })
}

/// ĝ(ρ(a)) = S_g(a)/S₁(a), sampled at m+1 radii.
pub fn hat_g(g: &ScalarField2D, table: &LevelSetTable, m: usize) -> Result<RadialProfile> {
    let mass = table.bin_mass(g)?;
    let mut r = Vec::with_capacity(mass.len());
    let mut v = Vec::with_capacity(mass.len());
    for (j, b) in table.bins.iter().enumerate() {
        if !(b.volume > 0.0) {
            return Err(Error::Discretization(format!("empty level bin {j}")));
        }
        r.push(table.bin_radius(j));
        v.push(mass[j] / b.volume);
    }
    // Bin radii decrease with j.
    r.reverse();
    v.reverse();
    Ok(RadialProfile::from_fn(table.r_star, m, |x| {
        if x <= r[0] {
            return v[0];
        }
        let i = r.partition_point(|&y| y <= x);
        if i == r.len() {
            return v[i - 1];
        }
        let w = (x - r[i - 1]) / (r[i] - r[i - 1]);
        v[i - 1] + w * (v[i] - v[i - 1])
    }))
}

/// V with distribution μ on the grid: V(x) = sup{s : μ(s) > |{φ > φ(x)}|}
/// with φ the torsion function of the domain.
pub fn potential_from_distribution(mu: &DistFn, domain: &DomainSpec, grid: &Arc<Grid2D>) -> Result<ScalarField2D> {
    let m = measure(domain, grid)?;
    let total = m.grid_area;
    if (mu.total - m.closed_form).abs() > 0.01 * m.closed_form {
        return invalid(format!("distribution total {} does not match |Ω| = {}", mu.total, m.closed_form));
    }
    if *mu.measures.last().unwrap() > 0.0 {
        return invalid("distribution must vanish above its last threshold");
    }
    let phi = torsion(grid, &MatrixField2D::identity(grid))?;
    let mut order: Vec<usize> = (0..grid.len()).filter(|&k| grid.cell_area(k) > 0.0).collect();
    let val = |k: usize| if grid.mask[k] { phi.values[k] } else { 0.0 };
    order.sort_by(|&a, &b| val(b).total_cmp(&val(a)));
    let mut v = vec![0.0; grid.len()];
    let mut above = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Cells tied in φ share |{φ > φ(x)}|.
        let level = val(order[i]);
        let mut j = i;
        let mut area = 0.0;
        while j < order.len() && val(order[j]) == level {
            area += grid.cell_area(order[j]);
            j += 1;
        }
        let s = mu.generalized_inverse(above * mu.total / total);
        for &k in &order[i..j] {
            v[k] = s;
        }
        above += area;
        i = j;
    }
    ScalarField2D::new(grid.clone(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: DomainSpec, n: usize) -> Arc<Grid2D> {
        Arc::new(Grid2D::new(&d, n).unwrap())
    }

    #[test]
    fn dist_fn_steps() {
        let mu = DistFn::new(vec![0.0, 1.0], vec![2.0, 0.0], 5.0).unwrap();
        assert_eq!(mu.eval(-1.0), 5.0);
        assert_eq!(mu.eval(0.0), 2.0);
        assert_eq!(mu.eval(0.5), 2.0);
        assert_eq!(mu.eval(1.0), 0.0);
        assert_eq!(mu.generalized_inverse(3.0), 0.0);
        assert_eq!(mu.generalized_inverse(1.0), 1.0);
        assert!(DistFn::new(vec![0.0, 1.0], vec![1.0, 2.0], 5.0).is_err());
        assert!(DistFn::new(vec![1.0, 0.0], vec![1.0, 0.0], 5.0).is_err());
    }

    #[test]
    fn indicator_distribution() {
        let g = grid(DomainSpec::rectangle(2.0, 2.0).unwrap(), 41);
        let u = ScalarField2D::from_fn(&g, |x, _| if x > 0.0 { 1.0 } else { 0.0 });
        let d = distribution_function(&u, 2).unwrap();
        let m0: f64 = (0..g.len()).filter(|&k| u.values[k] > 0.5).map(|k| g.cell_area(k)).sum();
        assert_eq!(d.eval(0.0), m0);
        assert_eq!(d.eval(0.99), m0);
        assert!((d.eval(-0.1) - g.area()).abs() < 1e-12);
        assert!(distribution_function(&u, 1).is_err());
    }

    #[test]
    fn constant_field_schwarz() {
        let g = grid(DomainSpec::ellipse(1.2, 0.7).unwrap(), 48);
        let u = ScalarField2D::constant(&g, 2.5);
        let s = schwarz(&u, 100).unwrap();
        assert!(s.values.iter().all(|&v| v == 2.5));
        let d = distribution_function(&u, 4).unwrap();
        assert_eq!(d.thresholds, vec![2.5]);
        assert_eq!(d.measures, vec![0.0]);
    }

    #[test]
    fn radial_field_is_its_own_rearrangement() {
        let g = grid(DomainSpec::disk(1.0).unwrap(), 128);
        let u = ScalarField2D::from_fn(&g, |x, y| 1.0 - x * x - y * y);
        let s = schwarz(&u, 400).unwrap();
        // Boundary triangles reach exterior nodes: error up to 2h·sup|∇u|.
        let tol = 4.0 * g.h();
        for i in 0..=400 {
            let r = s.r(i);
            assert!((s.values[i] - (1.0 - r * r)).abs() < tol, "r {r}: {}", s.values[i]);
        }
        assert!(s.values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn profile_measure_linear() {
        let f = RadialProfile::from_fn(1.0, 100, |r| 1.0 - r);
        let m = profile_measure_above(&f, 2, 0.5).unwrap();
        assert!((m - std::f64::consts::PI * 0.25).abs() < 1e-12);
    }

    #[test]
    fn zeta_transition() {
        assert_eq!(zeta(0.2), 0.0);
        assert_eq!(zeta(0.8), 1.0);
        assert!((zeta(0.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=100 {
            let z = zeta(i as f64 / 100.0);
            assert!(z >= prev);
            prev = z;
        }
    }

    #[test]
    fn constant_shells() {
        let g = grid(DomainSpec::ellipse(1.3, 0.8).unwrap(), 64);
        let a = MatrixField2D::identity(&g);
        let psi = torsion(&g, &a).unwrap();
        let one = ScalarField2D::constant(&g, 1.0);
        let zero = ScalarField2D::zeros(&g);
        let t = crate::rearrange::build_level_table(&psi, &one, &zero, &zero, &a, 50).unwrap();
        let c = ScalarField2D::constant(&g, 0.7);
        let s = shell_rearrangement(&c, &t, 8).unwrap();
        for i in 0..=200 {
            let r = s.radius * i as f64 / 200.0;
            assert_eq!(s.eval(r), 0.7);
            assert_eq!(s.lower(r), 0.7);
            assert_eq!(s.upper(r), 0.7);
        }
    }

    #[test]
    fn single_step_potential_is_constant() {
        let d = DomainSpec::disk(1.0).unwrap();
        let g = grid(d.clone(), 48);
        let total: f64 = (0..g.len()).map(|k| g.cell_area(k)).sum();
        let mu = DistFn::new(vec![0.75], vec![0.0], total).unwrap();
        let v = potential_from_distribution(&mu, &d, &g).unwrap();
        for k in 0..g.len() {
            if g.cell_area(k) > 0.0 {
                assert_eq!(v.values[k], 0.75);
            }
        }
        let bad = DistFn::new(vec![0.75], vec![0.0], 2.0 * total).unwrap();
        assert!(potential_from_distribution(&bad, &d, &g).is_err());
    }
}
