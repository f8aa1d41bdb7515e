//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use eigensymm::asymptotics::{g1_error_table, g1_transcendental, gn_comparison, gn_radial, RADIAL_NODES};
use eigensymm::distribution::{measures_above, potential_from_distribution, DistFn};
use eigensymm::elliptic2d::{eigen, torsion};
use eigensymm::error::Result;
use eigensymm::extremal::{ball_optimal_check, det_sigma_reduction, sigma_p_diag};
use eigensymm::fields::{MatrixField2D, ScalarField2D, VectorField2D};
use eigensymm::geometry::{DomainSpec, Grid2D};
use eigensymm::harness::{load_config, run_scenario, ComparisonReport, Scenario, Task};
use eigensymm::radial1d::bessel_zero;
use eigensymm::rearrange::{build_level_table, rearrange};

const N: usize = 256;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn scenarios(file: &str, task: Task) -> Result<Vec<Scenario>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file);
    let mut list = load_config(&path)?;
    for s in &mut list {
        s.task = Some(task);
    }
    Ok(list)
}

fn run_all(file: &str, task: Task) -> Result<Vec<ComparisonReport>> {
    scenarios(file, task)?.iter().map(run_scenario).collect()
}

fn check_pass(r: &ComparisonReport, name: &str) -> bool {
    r.checks.iter().any(|c| c.name == name && c.pass) && r.checks.iter().filter(|c| c.name == name).all(|c| c.pass)
}

fn j01_sq() -> f64 {
    let j = bessel_zero(0, 1).unwrap();
    j * j
}

fn laplacian_eigenvalue(domain: &DomainSpec) -> Result<f64> {
    let g = Arc::new(Grid2D::new(domain, N)?);
    Ok(eigen(&g, &MatrixField2D::identity(&g), &VectorField2D::zeros(&g), &ScalarField2D::zeros(&g))?.lambda1)
}

fn rfk_disk() -> Result<Outcome> {
    let start = Instant::now();
    let lam = laplacian_eigenvalue(&DomainSpec::disk(1.0)?)?;
    let secs = start.elapsed().as_secs_f64();
    let err = (lam - j01_sq()).abs() / j01_sq();
    outcome(err <= 0.01 && secs < 60.0, format!("λ₁ = {lam:.6}, relative error {err:.2e}, {secs:.1} s"))
}

fn rfk_square() -> Result<Outcome> {
    let side = PI.sqrt();
    let lam = laplacian_eigenvalue(&DomainSpec::rectangle(side, side)?)?;
    let err = (lam - 2.0 * PI).abs() / (2.0 * PI);
    let margin = lam - j01_sq();
    outcome(err <= 0.01 && margin >= 0.4, format!("λ₁ = {lam:.6}, error vs 2π {err:.2e}, margin over disk {margin:.4}"))
}

fn torsion_fixed_point() -> Result<Outcome> {
    let g = Arc::new(Grid2D::new(&DomainSpec::disk(1.0)?, N)?);
    let a = MatrixField2D::identity(&g);
    let psi = torsion(&g, &a)?;
    let one = ScalarField2D::constant(&g, 1.0);
    let zero = ScalarField2D::zeros(&g);
    let table = build_level_table(&psi, &one, &zero, &zero, &a, 200)?;
    let data = rearrange(&table, 2000)?;
    let mut err = 0.0_f64;
    for i in 0..data.psi.values.len() {
        let r = data.psi.r(i);
        if r <= 1.0 {
            err = err.max((data.psi.values[i] - (1.0 - r * r) / 4.0).abs());
        }
    }
    let lam_dev = data.lambda.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-3 && lam_dev <= 1e-12, format!("sup |ψ̃ − ψ| = {err:.2e}, sup |Λ̂ − 1| = {lam_dev:.1e}"))
}

fn conservation() -> Result<Outcome> {
    let list = scenarios("symmetrize.json", Task::Symmetrize)?;
    let s = list.iter().find(|s| s.name == "eigen_ellipse_random").expect("shipped ellipse scenario");
    let r = run_scenario(s)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["rearrangement.conservation_inv_lambda", "rearrangement.conservation_v2"] {
        let c = r.checks.iter().find(|c| c.name == name).expect("conservation check");
        let rel = (c.lhs - c.rhs).abs() / c.rhs.abs();
        pass &= rel <= 5e-3;
        detail.push(format!("{} residual {rel:.2e}", name.trim_start_matches("rearrangement.")));
    }
    outcome(pass, detail.join(", "))
}

fn pointwise(sym: &[ComparisonReport], cmp: &[ComparisonReport]) -> Result<Outcome> {
    let mut pass = true;
    let mut worst = f64::INFINITY;
    for r in sym.iter().chain(cmp) {
        pass &= check_pass(r, "rearrangement.pointwise");
        worst = worst.min(r.values["pointwise_margin"]);
    }
    let mut ratios = Vec::new();
    for r in sym.iter().chain(cmp) {
        if r.name.contains("square") || r.name.contains("ellipse") {
            let q = r.values["level_ratio"];
            pass &= q > 1.0;
            ratios.push(format!("{} {q:.3}", r.name));
        }
    }
    outcome(pass, format!("min margin {worst:.2e}; level ratios: {}", ratios.join(", ")))
}

fn eigenvalue_comparison(cmp: &[ComparisonReport]) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut nonball = 0;
    for r in cmp {
        let l1 = r.eigenvalues["lambda1"];
        let ls = r.eigenvalues["lambda_star"];
        if r.name.contains("disk") {
            let gap = (l1 - ls).abs() / l1.abs();
            pass &= gap <= 0.01;
            detail.push(format!("{} equality gap {gap:.2e}", r.name));
        } else {
            pass &= l1 >= 0.0 && check_pass(r, "comparison.eigenvalue");
            nonball += 1;
            detail.push(format!("{} λ*={ls:.4} ≤ λ₁={l1:.4}", r.name));
        }
    }
    outcome(pass && nonball >= 3, detail.join("; "))
}

fn extremal_drift() -> Result<Outcome> {
    let mut pass = true;
    let mut worst_gap = 0.0_f64;
    let mut max_solves = 0;
    for &t1 in &[0.5, 1.0, 2.0] {
        for &t2 in &[0.0, 1.0] {
            let r = ball_optimal_check(1.0, |_| 1.0, |_| 1.0, t1, t2, N, 1e-3)?;
            pass &= r.pass && r.solves <= 30;
            worst_gap = worst_gap.max(r.relative_gap);
            max_solves = max_solves.max(r.solves);
        }
    }
    let ext = run_all("extremal.json", Task::Extremal)?;
    let competitors: Vec<_> = ext[0].checks.iter().filter(|c| c.name.starts_with("competitor_")).collect();
    let worst = competitors.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
    pass &= competitors.len() == 10 && competitors.iter().all(|c| c.pass);
    outcome(
        pass,
        format!("max relative gap {worst_gap:.2e}, max solves {max_solves}, min competitor margin {worst:.2e}"),
    )
}

fn transcendental() -> Result<Outcome> {
    let mut pass = true;
    let mut worst = 0.0_f64;
    for &tau in &[8.0, 12.0, 16.0] {
        let exact = g1_transcendental(2.0, tau)?;
        let fd = gn_radial(1, 2.0, tau, RADIAL_NODES)?;
        let rel = (fd - exact).abs() / exact;
        worst = worst.max(rel);
        pass &= rel <= 1e-4;
    }
    let t = g1_error_table(2.0, &[10.0, 15.0, 20.0, 25.0])?;
    let last = t.rows.last().unwrap().normalized.unwrap();
    pass &= t.all_pass() && last <= 1e-3;
    outcome(pass, format!("FD agreement {worst:.2e}, normalized error at τ=25 {last:.2e}, decreasing {}", t.all_pass()))
}

fn dimension_comparison() -> Result<Outcome> {
    let t = gn_comparison(2, PI, &[0.0, 5.0, 10.0])?;
    let ordered = t.checks.iter().filter(|c| c.name.starts_with("g1_below_gn")).all(|c| c.pass);
    let zero = &t.rows[0];
    let bessel_ok = (zero.value - j01_sq()).abs() < 1e-4 * j01_sq() && (zero.bound - PI * PI / 4.0).abs() < 1e-4;
    let detail: Vec<String> = t.rows.iter().map(|r| format!("τ={} G₂={:.4e} > G₁={:.4e}", r.tau, r.value, r.bound)).collect();
    outcome(ordered && bessel_ok && zero.value > zero.bound, detail.join(", "))
}

fn det_sigma() -> Result<Outcome> {
    let (a1, a2) = det_sigma_reduction(2, 1, 1.0, 2.5)?;
    let mut pass = (a1 - 0.5).abs() <= 1e-10 && (a2 - 2.0).abs() <= 1e-10;
    pass &= (a1 * a2 - 1.0).abs() <= 1e-10 && (sigma_p_diag(2, 1, a1, a2) - 2.5).abs() <= 1e-10;
    let e1 = det_sigma_reduction(2, 1, 1.0, 2.0)?;
    let e2 = det_sigma_reduction(3, 2, 1.0, 3.0)?;
    for (x, y) in [e1, e2] {
        pass &= (x - 1.0).abs() <= 1e-10 && (y - 1.0).abs() <= 1e-10;
    }
    outcome(pass, format!("(a₁,a₂) = ({a1}, {a2}); equality cases {e1:?}, {e2:?}"))
}

fn prescribed_distribution() -> Result<Outcome> {
    let d = DomainSpec::disk(1.0)?;
    let g = Arc::new(Grid2D::new(&d, N)?);
    let m = d.closed_form_area();
    let mu = DistFn::new(vec![-1.0, 2.0], vec![0.4 * m, 0.0], m)?;
    let v = potential_from_distribution(&mu, &d, &g)?;
    let ts: Vec<f64> = (0..50).map(|i| -2.0 + 5.0 * i as f64 / 49.0).collect();
    let got = measures_above(&v, &ts);
    let err = ts.iter().zip(&got).map(|(t, x)| (x - mu.eval(*t)).abs()).fold(0.0, f64::max) / m;
    outcome(err <= 0.01, format!("max |μ_V − μ| / |Ω| = {err:.2e} over 50 thresholds"))
}

fn distcheck_report() -> Result<ComparisonReport> {
    Ok(run_all("distcheck.json", Task::Distcheck)?.remove(0))
}

fn schwarz_properties(r: &ComparisonReport) -> Result<Outcome> {
    let checks: Vec<_> = r.checks.iter().filter(|c| c.name.starts_with("schwarz_")).collect();
    let pass = checks.len() == 10 && checks.iter().all(|c| c.pass);
    let ratios: Vec<String> = r
        .values
        .iter()
        .filter(|(k, _)| k.starts_with("schwarz_energy_ratio"))
        .map(|(_, v)| format!("{v:.3}"))
        .collect();
    let derr = checks
        .iter()
        .filter(|c| c.name.starts_with("schwarz_equimeasurable"))
        .map(|c| c.lhs)
        .fold(0.0, f64::max);
    outcome(pass, format!("max distribution error {derr:.2e}, energy ratios {}", ratios.join(" ")))
}

fn shells(r: &ComparisonReport) -> Result<Outcome> {
    let checks: Vec<_> = r.checks.iter().filter(|c| c.name.starts_with("shell_")).collect();
    let pass = checks.len() == 9 && checks.iter().all(|c| c.pass);
    let worst = |p: &str| checks.iter().filter(|c| c.name.starts_with(p)).map(|c| c.lhs).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        pass,
        format!(
            "shell identity {:.2e}, distribution {:.2e}, ordering violation {:.1e}",
            worst("shell_identity"),
            worst("shell_distribution"),
            worst("shell_ordering")
        ),
    )
}

fn gradients(sym: &[ComparisonReport], cmp: &[ComparisonReport]) -> Result<Outcome> {
    let mut pass = true;
    let mut count = 0;
    for r in sym.iter().chain(cmp) {
        pass &= check_pass(r, "rearrangement.gradient_energy") && check_pass(r, "rearrangement.gradient_l1");
        count += 1;
    }
    outcome(pass, format!("gradient energy and L¹ checks on {count} scenarios"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let sym = run_all("symmetrize.json", Task::Symmetrize);
    let cmp = run_all("compare.json", Task::Compare);
    let dist = distcheck_report();
    let (sym, cmp) = match (sym, cmp) {
        (Ok(s), Ok(c)) => (s, c),
        (Err(e), _) | (_, Err(e)) => {
            println!("FAIL shipped scenarios did not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let results: Vec<(&str, Result<Outcome>)> = vec![
        ("RFK disk value", rfk_disk()),
        ("RFK strictness on the square", rfk_square()),
        ("rearrangement fixed point", torsion_fixed_point()),
        ("conservation of ∫Λ̂⁻¹ and ∫v̂²", conservation()),
        ("pointwise comparison", pointwise(&sym, &cmp)),
        ("eigenvalue comparison", eigenvalue_comparison(&cmp)),
        ("extremal drift on the disk", extremal_drift()),
        ("transcendental G₁ vs finite differences", transcendental()),
        ("dimension comparison", dimension_comparison()),
        ("det/σ_p reduction", det_sigma()),
        ("prescribed distribution", prescribed_distribution()),
        ("Schwarz properties", dist.as_ref().map_err(|e| e.to_string()).map_or_else(
            |e| Ok(Outcome { pass: false, detail: e }),
            schwarz_properties,
        )),
        ("shell rearrangement", dist.as_ref().map_err(|e| e.to_string()).map_or_else(
            |e| Ok(Outcome { pass: false, detail: e }),
            shells,
        )),
        ("gradient comparisons", gradients(&sym, &cmp)),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.into_iter().enumerate() {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} of 14 passed in {:.1} s", 14 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
