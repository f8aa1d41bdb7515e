//! Principal eigenvalue G_n(m, τ) of the ball of measure m with outward
//! drift τe_r, its large-τ behaviour, and the decay under L^p-only drift bounds.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::alpha_n;
use crate::radial1d::{radial_eigenpair, RadialProfile};
use crate::rearrange::Check;

/// Radial nodes used for the finite-difference values in the tables.
pub const RADIAL_NODES: usize = 20000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub tau: f64,
    pub value: f64,
    /// None where the normalisation is undefined (e.g. −log G/τ at τ = 0).
    pub normalized: Option<f64>,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticTable {
    pub name: String,
    /// Column labels for (tau, value, normalized, bound).
    pub columns: [String; 4],
    pub rows: Vec<AsymptoticRow>,
    pub checks: Vec<Check>,
}

impl AsymptoticTable {
    fn new(name: &str, columns: [&str; 4]) -> Self {
        AsymptoticTable {
            name: name.to_string(),
            columns: columns.map(str::to_string),
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let norm = r.normalized.map(|x| format!("{x:.17e}")).unwrap_or_default();
            out.push_str(&format!("{:.17e},{:.17e},{},{:.17e}\n", r.tau, r.value, norm, r.bound));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return invalid("empty tau list");
    }
    if taus.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return invalid("tau values must be finite and nonnegative");
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("tau values must be strictly increasing");
    }
    Ok(())
}

/// G₁(m, τ) from the transcendental equation
/// λ = (τ²/4)(1 + d)² e^{−dτR}, d = √(1 − 4λ/τ²), R = m/2.
///
/// Solved for e = 1 − d by bisection in log e so that exponentially small
/// roots keep full relative precision.
pub fn g1_transcendental(m: f64, tau: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return invalid(format!("measure must be positive, got {m}"));
    }
    let r = m / 2.0;
    if !(tau.is_finite() && tau >= PI / r) {
        return invalid(format!("tau = {tau} is below the validity threshold pi/R = {}", PI / r));
    }
    let tr = tau * r;
    if tr > 700.0 {
        return invalid(format!("tau*R = {tr} underflows"));
    }
    // g(e) < 0 for tiny e, g(e_max) ≥ 0 where λ reaches π²/(4R²).
    let g = |e: f64| e - (2.0 - e) * (-(1.0 - e) * tr).exp();
    let d_lo = (1.0 - (PI / tr).powi(2)).max(0.0).sqrt();
    let mut hi = 1.0 - d_lo;
    let mut lo = (-tr).exp() * 1e-3;
    if g(lo) >= 0.0 || g(hi) < 0.0 {
        return Err(crate::error::Error::Solver("transcendental root not bracketed".into()));
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let e = 0.5 * (lo + hi);
    let lambda = 0.25 * tau * tau * e * (2.0 - e);
    let d = 1.0 - e;
    let rhs = 0.25 * tau * tau * (1.0 + d).powi(2) * (-d * tr).exp();
    let residual = (lambda - rhs).abs() / lambda;
    if residual > 1e-12 {
        return Err(crate::error::Error::Solver(format!("transcendental residual {residual:e}")));
    }
    Ok(lambda)
}

/// G_n(m, τ) from the radial finite-volume solver.
pub fn gn_radial(n: usize, m: f64, tau: f64, nodes: usize) -> Result<f64> {
    let radius = (m / alpha_n(n)?).powf(1.0 / n as f64);
    let res = radial_eigenpair(
        n,
        radius,
        &RadialProfile::constant(radius, 1.0, nodes),
        &RadialProfile::constant(radius, tau, nodes),
        &RadialProfile::constant(radius, 0.0, nodes),
        nodes,
    )?;
    Ok(res.lambda1)
}

/// G₁ from the closed form where it applies and the radial solver below the threshold.
fn g1_any(m: f64, tau: f64) -> Result<f64> {
    if tau >= PI / (m / 2.0) {
        g1_transcendental(m, tau)
    } else {
        gn_radial(1, m, tau, RADIAL_NODES)
    }
}

/// Rows (τ, G₁, |τ⁻²e^{τm/2}G₁ − 1|, G₁ from the radial solver); checks that
/// the error column strictly decreases.
pub fn g1_error_table(m: f64, taus: &[f64]) -> Result<AsymptoticTable> {
    check_taus(taus)?;
    let mut t = AsymptoticTable::new("g1_error", ["tau", "G1", "normalized_error", "G1_radial"]);
    for &tau in taus {
        let g = g1_transcendental(m, tau)?;
        let err = (tau.powi(-2) * (tau * m / 2.0).exp() * g - 1.0).abs();
        let fd = gn_radial(1, m, tau, RADIAL_NODES)?;
        t.rows.push(AsymptoticRow { tau, value: g, normalized: Some(err), bound: fd });
    }
    for w in t.rows.windows(2) {
        let name = format!("error_decreasing_tau_{}", w[1].tau);
        t.checks.push(Check::lt(&name, w[1].normalized.unwrap(), w[0].normalized.unwrap()));
    }
    Ok(t)
}

/// Rows (τ, G_n(m,τ), −τ⁻¹log G_n, G₁(2R, τ)) with R = (m/α_n)^{1/n}.
///
/// Checks G_n > G₁(2R, τ) at every τ, G_n decreasing in τ, and the log column
/// moving monotonically towards R over the positive τ.
pub fn gn_comparison(n: usize, m: f64, taus: &[f64]) -> Result<AsymptoticTable> {
    if n < 2 {
        return invalid("dimension comparison needs n >= 2");
    }
    check_taus(taus)?;
    let radius = (m / alpha_n(n)?).powf(1.0 / n as f64);
    let mut t = AsymptoticTable::new("gn_comparison", ["tau", "Gn", "log_rate", "G1_bound"]);
    for &tau in taus {
        let g = gn_radial(n, m, tau, RADIAL_NODES)?;
        let bound = g1_any(2.0 * radius, tau)?;
        let rate = (tau > 0.0).then(|| -g.ln() / tau);
        t.rows.push(AsymptoticRow { tau, value: g, normalized: rate, bound });
    }
    for r in &t.rows {
        t.checks.push(Check::lt(&format!("g1_below_gn_tau_{}", r.tau), r.bound, r.value));
    }
    for w in t.rows.windows(2) {
        t.checks.push(Check::lt(&format!("gn_decreasing_tau_{}", w[1].tau), w[1].value, w[0].value));
    }
    let rates: Vec<(f64, f64)> = t.rows.iter().filter_map(|r| r.normalized.map(|x| (r.tau, x))).collect();
    for w in rates.windows(2) {
        t.checks.push(Check::lt(
            &format!("log_rate_approaches_radius_tau_{}", w[1].0),
            (w[1].1 - radius).abs(),
            (w[0].1 - radius).abs(),
        ));
    }
    Ok(t)
}

/// Relative distance of −τ⁻¹log G_n(m,τ) from R = (m/α_n)^{1/n}.
pub fn log_rate_gap(n: usize, m: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return invalid("log rate needs tau > 0");
    }
    let radius = (m / alpha_n(n)?).powf(1.0 / n as f64);
    let g = gn_radial(n, m, tau, RADIAL_NODES)?;
    Ok((-g.ln() / tau - radius).abs() / radius)
}

/// Drift A e_r on the planar ball of radius ρ_A with A(α₂ρ_A²)^{1/p} = τ, so
/// that the L^p norm of the drift stays τ while λ₁ tends to 0.
///
/// Rows (A, λ₁ = μ_A/ρ_A², ρ_A, ρ_A⁻²e^{−Aρ_A/2}). The checks cover the
/// dilation identity against a direct solve on B_{ρ_A}, strict decrease of λ,
/// and a tenfold drop from the first to the last amplitude.
pub fn remlp_decay(p: f64, tau: f64, amplitudes: &[f64]) -> Result<AsymptoticTable> {
    let n = 2;
    if !(p > 1.0 && p < n as f64) {
        return invalid(format!("need 1 < p < {n}, got {p}"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return invalid("tau must be positive");
    }
    check_taus(amplitudes)?;
    let alpha = alpha_n(n)?;
    let nodes = 4000;
    let mut t = AsymptoticTable::new("remlp_decay", ["amplitude", "lambda", "rho", "envelope"]);
    for &a in amplitudes {
        if !(a > 0.0) {
            return invalid("amplitudes must be positive");
        }
        let rho = ((tau / a).powf(p) / alpha).sqrt();
        let unit = |omega: f64, radius: f64| {
            radial_eigenpair(
                n,
                radius,
                &RadialProfile::constant(radius, 1.0, nodes),
                &RadialProfile::constant(radius, omega, nodes),
                &RadialProfile::constant(radius, 0.0, nodes),
                nodes,
            )
            .map(|r| r.lambda1)
        };
        let mu = unit(a * rho, 1.0)?;
        let lambda = mu / (rho * rho);
        let direct = unit(a, rho)?;
        t.checks.push(Check::rel_eq(&format!("dilation_identity_A_{a}"), direct, lambda, 1e-4));
        let envelope = (-a * rho / 2.0).exp() / (rho * rho);
        t.rows.push(AsymptoticRow { tau: a, value: lambda, normalized: Some(rho), bound: envelope });
    }
    for w in t.rows.windows(2) {
        t.checks.push(Check::lt(&format!("lambda_decreasing_A_{}", w[1].tau), w[1].value, w[0].value));
    }
    if t.rows.len() >= 2 {
        let first = t.rows[0].value;
        let last = t.rows[t.rows.len() - 1].value;
        t.checks.push(Check::le("tenfold_drop", last, first / 10.0, 0.0));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_below_threshold() {
        assert!(g1_transcendental(2.0, 3.0).is_err());
        assert!(g1_transcendental(2.0, PI).is_ok());
        assert!(g1_transcendental(-1.0, 10.0).is_err());
    }

    #[test]
    fn threshold_root_is_below_dirichlet_value() {
        let g = g1_transcendental(2.0, PI).unwrap();
        assert!(g < PI * PI / 4.0);
        assert!(g > 0.0);
    }

    #[test]
    fn scaling_law() {
        for &(m, tau) in &[(1.0, 10.0), (4.0, 3.0), (0.5, 30.0)] {
            let lhs = g1_transcendental(m, tau).unwrap();
            let rhs = (2.0 / m).powi(2) * g1_transcendental(2.0, tau * m / 2.0).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs, "{m} {tau}: {lhs} {rhs}");
        }
    }

    #[test]
    fn large_tau_normalisation() {
        let g = g1_transcendental(2.0, 25.0).unwrap();
        let norm = g * 25f64.exp() / 625.0;
        assert!((norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn table_csv_shape() {
        let t = g1_error_table(2.0, &[10.0, 15.0]).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn rejects_bad_tau_lists() {
        assert!(g1_error_table(2.0, &[]).is_err());
        assert!(g1_error_table(2.0, &[10.0, 10.0]).is_err());
        assert!(gn_comparison(1, 2.0, &[1.0]).is_err());
        assert!(remlp_decay(2.5, 1.0, &[1.0]).is_err());
    }
}
