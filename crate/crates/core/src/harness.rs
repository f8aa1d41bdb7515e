//! Scenario configuration, task runners and report output for the CLI.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    g1_error_table, g1_transcendental, gn_comparison, gn_radial, log_rate_gap, remlp_decay, AsymptoticTable,
    RADIAL_NODES,
};
use crate::distribution::{
    distribution_function, grid_dirichlet_energy, measures_above, potential_from_distribution,
    profile_distribution, radial_dirichlet_energy, schwarz, shell_rearrangement, DistFn,
};
use crate::elliptic2d::{eigen, torsion};
use crate::error::{invalid, Error, Result};
use crate::extremal::{optimize_drift, remdet_check, Direction, DriftOptions};
use crate::fields::{lambda_of_a, MatrixField2D, ScalarField2D, VectorField2D};
use crate::geometry::{equal_measure_ball_radius, DomainSpec, Grid2D, Shape};
use crate::radial1d::{bessel_zero, radial_eigenpair, RadialProfile};
use crate::rearrange::{
    build_level_table, compare_eigenvalues_detailed, rearrange, verify_report, Check, LevelSetTable,
    RearrangedData, RearrangementReport,
};

/// Radial nodes for oracle solves inside the harness.
const ORACLE_NODES: usize = 4000;

/// Knuth's 64-bit LCG; portable and reproducible.
#[derive(Clone, Debug)]
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        let mut g = Lcg(seed ^ 0x9e37_79b9_7f4a_7c15);
        for _ in 0..4 {
            g.step();
        }
        g
    }

    fn step(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.step() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Eight-mode trigonometric field rescaled to span [min, max] over the grid.
pub fn random_field(grid: &Arc<Grid2D>, seed: u64, min: f64, max: f64) -> ScalarField2D {
    let mut rng = Lcg::new(seed);
    let span = ((grid.nx - 1) as f64 * grid.hx).max((grid.ny - 1) as f64 * grid.hy);
    let modes: Vec<[f64; 4]> = (0..8)
        .map(|k| {
            let kx = (rng.next_f64() - 0.5) * 6.0 * PI / span;
            let ky = (rng.next_f64() - 0.5) * 6.0 * PI / span;
            let c = (rng.next_f64() - 0.5) / (1.0 + k as f64);
            let phase = 2.0 * PI * rng.next_f64();
            [kx, ky, c, phase]
        })
        .collect();
    let raw = ScalarField2D::from_fn(grid, |x, y| {
        modes.iter().map(|m| m[2] * (m[0] * x + m[1] * y + m[3]).cos()).sum()
    });
    let lo = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-14 * hi.abs().max(1.0) {
        return ScalarField2D::constant(grid, 0.5 * (min + max));
    }
    raw.map(|v| (min + (max - min) * (v - lo) / (hi - lo)).clamp(min, max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarRecipe {
    Constant { value: f64 },
    /// Σ coeffs[i]·rⁱ with r the distance to the domain centre.
    Radial { coeffs: Vec<f64> },
    Random { seed: u64, min: f64, max: f64 },
}

impl Default for ScalarRecipe {
    fn default() -> Self {
        ScalarRecipe::Constant { value: 0.0 }
    }
}

impl ScalarRecipe {
    pub fn field(&self, grid: &Arc<Grid2D>, center: [f64; 2]) -> ScalarField2D {
        match self {
            ScalarRecipe::Constant { value } => ScalarField2D::constant(grid, *value),
            ScalarRecipe::Radial { coeffs } => {
                ScalarField2D::from_fn(grid, |x, y| radial_poly(coeffs, (x - center[0]).hypot(y - center[1])))
            }
            ScalarRecipe::Random { seed, min, max } => random_field(grid, *seed, *min, *max),
        }
    }

    /// The profile r ↦ value when the recipe is radially symmetric.
    pub fn radial(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match self.clone() {
            ScalarRecipe::Constant { value } => Some(Box::new(move |_| value)),
            ScalarRecipe::Radial { coeffs } => Some(Box::new(move |r| radial_poly(&coeffs, r))),
            ScalarRecipe::Random { .. } => None,
        }
    }
}

fn radial_poly(coeffs: &[f64], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixRecipe {
    #[default]
    Identity,
    Constant { a11: f64, a12: f64, a22: f64 },
    /// Λ(x) Id.
    Isotropic { lambda: ScalarRecipe },
    /// λ R_θ diag(1, 1 + s) R_θᵀ with λ ∈ [min, max] and s ∈ [0, anisotropy]
    /// random, so Λ(A) = λ ≥ min.
    Random { seed: u64, min: f64, max: f64, anisotropy: f64 },
}

impl MatrixRecipe {
    pub fn field(&self, grid: &Arc<Grid2D>, center: [f64; 2]) -> MatrixField2D {
        match self {
            MatrixRecipe::Identity => MatrixField2D::identity(grid),
            MatrixRecipe::Constant { a11, a12, a22 } => MatrixField2D::from_fn(grid, |_, _| [*a11, *a12, *a22]),
            MatrixRecipe::Isotropic { lambda } => MatrixField2D::scalar(&lambda.field(grid, center)),
            MatrixRecipe::Random {
                seed,
                min,
                max,
                anisotropy,
            } => {
                let lam = random_field(grid, *seed, *min, *max);
                let theta = random_field(grid, seed.wrapping_add(1), 0.0, PI);
                let s = random_field(grid, seed.wrapping_add(2), 0.0, *anisotropy);
                let mut a = MatrixField2D::identity(grid);
                for k in 0..grid.len() {
                    let (c, sn) = (theta.values[k].cos(), theta.values[k].sin());
                    let (l1, l2) = (lam.values[k], lam.values[k] * (1.0 + s.values[k]));
                    a.a11[k] = l1 * c * c + l2 * sn * sn;
                    a.a12[k] = (l1 - l2) * c * sn;
                    a.a22[k] = l1 * sn * sn + l2 * c * c;
                }
                a
            }
        }
    }

    /// Radial Λ when A = Λ(|x|) Id.
    fn isotropic_radial(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match self {
            MatrixRecipe::Identity => Some(Box::new(|_| 1.0)),
            MatrixRecipe::Isotropic { lambda } => lambda.radial(),
            MatrixRecipe::Constant { a11, a12, a22 } if *a12 == 0.0 && a11 == a22 => {
                let v = *a11;
                Some(Box::new(move |_| v))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorRecipe {
    #[default]
    Zero,
    Constant { vx: f64, vy: f64 },
    /// speed·e_r about the domain centre.
    Radial { speed: f64 },
    /// Random direction and magnitude in [0, max].
    Random { seed: u64, max: f64 },
}

impl VectorRecipe {
    pub fn field(&self, grid: &Arc<Grid2D>, center: [f64; 2]) -> VectorField2D {
        match self {
            VectorRecipe::Zero => VectorField2D::zeros(grid),
            VectorRecipe::Constant { vx, vy } => VectorField2D::from_fn(grid, |_, _| [*vx, *vy]),
            VectorRecipe::Radial { speed } => VectorField2D::from_fn(grid, |x, y| {
                let (dx, dy) = (x - center[0], y - center[1]);
                let r = dx.hypot(dy);
                if r == 0.0 {
                    [0.0, 0.0]
                } else {
                    [speed * dx / r, speed * dy / r]
                }
            }),
            VectorRecipe::Random { seed, max } => {
                let angle = random_field(grid, *seed, 0.0, 2.0 * PI);
                let mag = random_field(grid, seed.wrapping_add(1), 0.0, *max);
                let mut v = VectorField2D::zeros(grid);
                for k in 0..grid.len() {
                    v.vx[k] = mag.values[k] * angle.values[k].cos();
                    v.vy[k] = mag.values[k] * angle.values[k].sin();
                }
                v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rfk,
    Symmetrize,
    Compare,
    Extremal,
    Asympt,
    Distcheck,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rfk => "rfk",
            Task::Symmetrize => "symmetrize",
            Task::Compare => "compare",
            Task::Extremal => "extremal",
            Task::Asympt => "asympt",
            Task::Distcheck => "distcheck",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constraints {
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub mu: Option<f64>,
    pub p: Option<f64>,
    pub omega: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Torsion,
    #[default]
    Eigenfunction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    #[default]
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtremalConfig {
    pub direction: Extremum,
    pub competitors: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for ExtremalConfig {
    fn default() -> Self {
        ExtremalConfig {
            direction: Extremum::Min,
            competitors: 10,
            seed: 1,
            tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsymptConfig {
    pub g1_m: f64,
    pub g1_taus: Vec<f64>,
    pub fd_taus: Vec<f64>,
    pub gn_n: usize,
    pub gn_m: f64,
    pub gn_taus: Vec<f64>,
    pub log_tau: f64,
    pub p: f64,
    pub remlp_tau: f64,
    pub amplitudes: Vec<f64>,
}

impl Default for AsymptConfig {
    fn default() -> Self {
        AsymptConfig {
            g1_m: 2.0,
            g1_taus: vec![10.0, 15.0, 20.0, 25.0],
            fd_taus: vec![8.0, 12.0, 16.0],
            gn_n: 2,
            gn_m: PI,
            gn_taus: vec![0.0, 5.0, 10.0],
            log_tau: 40.0,
            p: 1.5,
            remlp_tau: 20.0,
            amplitudes: vec![50.0, 100.0, 200.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistConfig {
    /// (threshold, fraction of |Ω| strictly above it).
    pub steps: Vec<[f64; 2]>,
    pub probes: usize,
    pub schwarz_seeds: Vec<u64>,
    pub shell_seed: u64,
    pub shell_ks: Vec<usize>,
}

impl Default for DistConfig {
    fn default() -> Self {
        DistConfig {
            steps: vec![[-1.0, 0.4], [2.0, 0.0]],
            probes: 50,
            schwarz_seeds: vec![1, 2, 3, 4, 5],
            shell_seed: 7,
            shell_ks: vec![4, 8, 16],
        }
    }
}

fn default_domain() -> DomainSpec {
    DomainSpec {
        shape: Shape::Disk { radius: 1.0 },
        center: [0.0, 0.0],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub task: Option<Task>,
    pub domain: DomainSpec,
    pub grid: usize,
    pub levels: usize,
    pub samples: usize,
    pub a: MatrixRecipe,
    pub v: VectorRecipe,
    pub potential: ScalarRecipe,
    pub w1: ScalarRecipe,
    pub constraints: Constraints,
    pub source: Source,
    pub extremal: ExtremalConfig,
    pub asympt: AsymptConfig,
    pub distcheck: DistConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            task: None,
            domain: default_domain(),
            grid: 128,
            levels: 200,
            samples: 2000,
            a: MatrixRecipe::Identity,
            v: VectorRecipe::Zero,
            potential: ScalarRecipe::default(),
            w1: ScalarRecipe::Constant { value: 1.0 },
            constraints: Constraints::default(),
            source: Source::default(),
            extremal: ExtremalConfig::default(),
            asympt: AsymptConfig::default(),
            distcheck: DistConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigDoc {
    Batch { scenarios: Vec<Scenario> },
    Single(Box<Scenario>),
}

pub fn parse_config(text: &str) -> Result<Vec<Scenario>> {
    let doc: ConfigDoc = serde_json::from_str(text)?;
    let list = match doc {
        ConfigDoc::Batch { scenarios } => scenarios,
        ConfigDoc::Single(s) => vec![*s],
    };
    if list.is_empty() {
        return invalid("config contains no scenarios");
    }
    Ok(list)
}

pub fn load_config(path: &Path) -> Result<Vec<Scenario>> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// One CSV file: a header line and equal-length columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str], columns: Vec<Vec<f64>>) -> Result<Self> {
        if header.len() != columns.len() || columns.windows(2).any(|w| w[0].len() != w[1].len()) {
            return invalid(format!("table {name}: header and column lengths disagree"));
        }
        Ok(CsvTable {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            columns,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        let rows = self.columns.first().map_or(0, Vec::len);
        for i in 0..rows {
            let line: Vec<String> = self.columns.iter().map(|c| format!("{:e}", c[i])).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub task: Task,
    pub grid: usize,
    pub levels: usize,
    pub eigenvalues: BTreeMap<String, f64>,
    /// Observed quantities that are reported but not asserted.
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub admissibility: Vec<String>,
    pub pass: bool,
    /// Excluded from the determinism guarantee.
    pub wall_time: f64,
    #[serde(skip)]
    pub tables: Vec<CsvTable>,
}

impl ComparisonReport {
    pub fn empty(name: &str, task: Task) -> Self {
        ComparisonReport {
            name: name.to_string(),
            task,
            grid: 0,
            levels: 0,
            eigenvalues: BTreeMap::new(),
            values: BTreeMap::new(),
            checks: Vec::new(),
            admissibility: Vec::new(),
            pass: true,
            wall_time: 0.0,
            tables: Vec::new(),
        }
    }

    fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn extend(&mut self, prefix: &str, checks: &[Check]) {
        for c in checks {
            let mut c = c.clone();
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
    }

    fn finish(&mut self) {
        self.pass = self.admissibility.is_empty() && self.checks.iter().all(|c| c.pass);
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// λ₁ ≥ m_V + √λ₁(Ω)·max(0, m_Λ√λ₁(Ω) − M_v).
pub fn apriori_lower_bound(m_v: f64, m_lambda: f64, m_drift: f64, lambda1_omega: f64) -> f64 {
    let s = lambda1_omega.sqrt();
    m_v + s * (m_lambda * s - m_drift).max(0.0)
}

struct Fields {
    grid: Arc<Grid2D>,
    a: MatrixField2D,
    v: VectorField2D,
    pot: ScalarField2D,
    lam: ScalarField2D,
}

fn build_fields(s: &Scenario, report: &mut ComparisonReport) -> Result<Fields> {
    let grid = Arc::new(Grid2D::new(&s.domain, s.grid)?);
    let c = s.domain.center;
    let a = s.a.field(&grid, c);
    if let Err(e) = a.check_positive_definite() {
        report.admissibility.push(e.to_string());
    }
    let v = s.v.field(&grid, c);
    let pot = s.potential.field(&grid, c);
    let lam = lambda_of_a(&a);
    if let Some(t1) = s.constraints.tau1 {
        let sup = interior_sup(&v.magnitude());
        if sup > t1 * (1.0 + 1e-12) {
            report.admissibility.push(format!("‖v‖∞ = {sup} exceeds τ₁ = {t1}"));
        }
    }
    if let Some(t2) = s.constraints.tau2 {
        let sup = interior_sup(&pot.map(f64::abs));
        if sup > t2 * (1.0 + 1e-12) {
            report.admissibility.push(format!("‖V‖∞ = {sup} exceeds τ₂ = {t2}"));
        }
    }
    Ok(Fields { grid, a, v, pot, lam })
}

fn interior_sup(f: &ScalarField2D) -> f64 {
    f.interior_values().fold(0.0, f64::max)
}

fn is_disk(d: &DomainSpec) -> bool {
    matches!(d.shape, Shape::Disk { .. })
}

fn disk_radius(d: &DomainSpec) -> Option<f64> {
    match d.shape {
        Shape::Disk { radius } => Some(radius),
        _ => None,
    }
}

fn radial_const(r: f64, lam: f64, omega: f64, pot: f64) -> Result<f64> {
    Ok(radial_eigenpair(
        2,
        r,
        &RadialProfile::constant(r, lam, ORACLE_NODES),
        &RadialProfile::constant(r, omega, ORACLE_NODES),
        &RadialProfile::constant(r, pot, ORACLE_NODES),
        ORACLE_NODES,
    )?
    .lambda1)
}

fn run_rfk(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let f = build_fields(s, rep)?;
    let g = &f.grid;
    let lap = eigen(g, &MatrixField2D::identity(g), &VectorField2D::zeros(g), &ScalarField2D::zeros(g))?;
    let area = s.domain.closed_form_area();
    let r_star = equal_measure_ball_radius(area, 2)?;
    let j0 = bessel_zero(0, 1)?;
    let ball = j0 * j0 / (r_star * r_star);
    let tol = 0.01 * ball;
    rep.eigenvalues.insert("lambda_omega".into(), lap.lambda1);
    rep.eigenvalues.insert("lambda_ball".into(), ball);
    rep.values.insert("rfk_margin".into(), lap.lambda1 - ball);
    rep.values.insert("r_star".into(), r_star);
    rep.push(Check::le("rfk", ball, lap.lambda1, tol));
    let disk = is_disk(&s.domain);
    if disk {
        rep.push(Check::rel_eq("rfk_equality", lap.lambda1, ball, 0.01));
    } else {
        rep.push(Check::lt("rfk_strict", ball + tol, lap.lambda1));
    }

    let data = eigen(g, &f.a, &f.v, &f.pot)?;
    let lam_star = f.lam.interior_min();
    let tau1 = s.constraints.tau1.unwrap_or_else(|| interior_sup(&f.v.magnitude()));
    let tau2 = s.constraints.tau2.unwrap_or_else(|| interior_sup(&f.pot.negative_part()));
    let chain = radial_const(r_star, lam_star, tau1, -tau2)?;
    let ctol = 0.01 * chain.abs().max(1.0);
    rep.eigenvalues.insert("lambda_data".into(), data.lambda1);
    rep.eigenvalues.insert("lambda_symmetric".into(), chain);
    rep.values.insert("faber_krahn_margin".into(), data.lambda1 - chain);
    rep.push(Check::le("faber_krahn", chain, data.lambda1, ctol));
    let equality_case = disk
        && s.domain.center == [0.0, 0.0]
        && match s.v {
            VectorRecipe::Zero => true,
            VectorRecipe::Radial { speed } => speed >= 0.0,
            _ => false,
        }
        && matches!(s.potential, ScalarRecipe::Constant { value } if value <= 0.0)
        && matches!(
            s.a,
            MatrixRecipe::Identity
                | MatrixRecipe::Isotropic { lambda: ScalarRecipe::Constant { .. } }
        );
    if equality_case {
        rep.push(Check::rel_eq("faber_krahn_equality", data.lambda1, chain, 0.01));
    } else if !disk {
        rep.push(Check::lt("faber_krahn_strict", chain + ctol, data.lambda1));
    }

    let m_v = f.pot.interior_min();
    let m_drift = interior_sup(&f.v.magnitude());
    let bound = apriori_lower_bound(m_v, lam_star, m_drift, lap.lambda1);
    rep.values.insert("apriori_bound".into(), bound);
    rep.push(Check::le("apriori", bound, data.lambda1, 0.01 * data.lambda1.abs().max(1.0)));
    Ok(())
}

fn rearrangement_tables(rep: &mut ComparisonReport, data: &RearrangedData, table: &LevelSetTable) -> Result<()> {
    let p = &data.lambda;
    let n = p.values.len();
    rep.tables.push(CsvTable::new(
        "rearranged",
        &["r", "lambda_hat", "F", "psi_tilde", "v_hat", "V_hat", "U"],
        vec![
            (0..n).map(|i| p.r(i)).collect(),
            p.values.clone(),
            data.f.values.clone(),
            data.psi.values.clone(),
            data.speed.values.clone(),
            data.potential.values.clone(),
            data.u.values.clone(),
        ],
    )?);
    rep.tables.push(CsvTable::new(
        "overlay",
        &["a", "rho", "psi_tilde_at_rho"],
        vec![table.levels.clone(), table.rho.clone(), data.psi_at_levels.clone()],
    )?);
    Ok(())
}

fn record_rearrangement(rep: &mut ComparisonReport, r: &RearrangementReport) {
    rep.values.insert("pointwise_margin".into(), r.pointwise_margin);
    rep.values.insert("level_ratio".into(), r.level_ratio);
    rep.values.insert("isoperimetric_ratio".into(), r.isoperimetric_ratio);
    rep.values.insert("mu".into(), r.mu);
    rep.extend("rearrangement", &r.checks);
}

fn run_symmetrize(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let f = build_fields(s, rep)?;
    let omega = f.v.magnitude();
    let vneg = f.pot.negative_part();
    let (psi, mu) = match s.source {
        Source::Torsion => (torsion(&f.grid, &f.a)?, s.constraints.mu),
        Source::Eigenfunction => {
            let e = eigen(&f.grid, &f.a, &f.v, &f.pot)?;
            rep.eigenvalues.insert("lambda1".into(), e.lambda1);
            (e.phi, Some(s.constraints.mu.unwrap_or(e.lambda1)))
        }
    };
    let table = build_level_table(&psi, &f.lam, &omega, &vneg, &f.a, s.levels)?;
    let data = rearrange(&table, s.samples)?;
    let r = verify_report(&data, &table, &psi, &f.a, &f.lam, &omega, &f.pot, 0.0, mu)?;
    rep.values.insert("r_star".into(), table.r_star);
    record_rearrangement(rep, &r);
    rearrangement_tables(rep, &data, &table)
}

fn run_compare(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let f = build_fields(s, rep)?;
    let d = compare_eigenvalues_detailed(&f.grid, &f.a, &f.v, &f.pot, s.levels, s.samples)?;
    rep.eigenvalues.insert("lambda1".into(), d.comparison.lambda1);
    rep.eigenvalues.insert("lambda_star".into(), d.comparison.lambda_star);
    rep.values.insert("r_star".into(), d.comparison.r_star);
    rep.values.insert("eigen_gap".into(), d.comparison.lambda1 - d.comparison.lambda_star);
    rep.extend("comparison", &d.comparison.checks);
    let omega = f.v.magnitude();
    let r = verify_report(
        &d.data,
        &d.table,
        &d.eigen.phi,
        &f.a,
        &f.lam,
        &omega,
        &f.pot,
        0.0,
        Some(s.constraints.mu.unwrap_or(d.eigen.lambda1)),
    )?;
    record_rearrangement(rep, &r);
    rearrangement_tables(rep, &d.data, &d.table)
}

fn run_extremal(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let f = build_fields(s, rep)?;
    let g = &f.grid;
    let Some(tau1) = s.constraints.tau1 else {
        return invalid("extremal task needs constraints.tau1");
    };
    let tau2 = s.constraints.tau2.unwrap_or(0.0);
    let w1 = s.w1.field(g, s.domain.center);
    let cfg = &s.extremal;
    let direction = match cfg.direction {
        Extremum::Min => Direction::Min,
        Extremum::Max => Direction::Max,
    };
    let res = optimize_drift(g, &f.a, &w1, tau1, tau2, direction, &DriftOptions::default())?;
    rep.eigenvalues.insert("lambda_extremal".into(), res.lambda);
    rep.values.insert("solves".into(), res.solves as f64);
    rep.values.insert("alignment_residual".into(), res.alignment_residual);
    rep.push(Check::le("solve_budget", res.solves as f64, 30.0, 0.0));
    rep.tables.push(CsvTable::new(
        "trace",
        &["iteration", "lambda"],
        vec![(0..res.trace.len()).map(|i| i as f64).collect(), res.trace.clone()],
    )?);

    let scale = res.lambda.abs().max(1.0);
    let w_min = w1.interior_min();
    if !(w_min > 0.0) {
        return invalid("w1 must be positive");
    }
    let mut worst = f64::INFINITY;
    for i in 0..cfg.competitors {
        let seed = cfg.seed.wrapping_mul(1000).wrapping_add(i as u64 * 7);
        let unit = VectorRecipe::Random { seed, max: 1.0 }.field(g, s.domain.center);
        let mut v = unit.clone();
        for k in 0..g.len() {
            let w = if w1.values[k] > 0.0 { w1.values[k] } else { w_min };
            v.vx[k] *= tau1 / w;
            v.vy[k] *= tau1 / w;
        }
        let pot = random_field(g, seed.wrapping_add(3), -tau2, tau2);
        let lam = eigen(g, &f.a, &v, &pot)?.lambda1;
        let c = match direction {
            Direction::Min => Check::le(&format!("competitor_{i}"), res.lambda, lam, cfg.tol * scale),
            Direction::Max => Check::le(&format!("competitor_{i}"), lam, res.lambda, cfg.tol * scale),
        };
        worst = worst.min(c.margin);
        rep.push(c);
    }
    if cfg.competitors > 0 {
        rep.values.insert("competitor_margin".into(), worst);
    }

    if let (Some(radius), Some(lam_r), Some(w_r), true) =
        (disk_radius(&s.domain), s.a.isotropic_radial(), s.w1.radial(), s.domain.center == [0.0, 0.0])
    {
        if direction == Direction::Min {
            let rad = radial_eigenpair(
                2,
                radius,
                &RadialProfile::from_fn(radius, ORACLE_NODES, &lam_r),
                &RadialProfile::from_fn(radius, ORACLE_NODES, |r| tau1 / w_r(r)),
                &RadialProfile::constant(radius, -tau2, ORACLE_NODES),
                ORACLE_NODES,
            )?;
            rep.eigenvalues.insert("lambda_radial".into(), rad.lambda1);
            rep.push(Check::rel_eq("radial_oracle", res.lambda, rad.lambda1, cfg.tol));
        }
        if let (Some(omega), Some(sigma)) = (s.constraints.omega, s.constraints.sigma) {
            let r = remdet_check(radius, omega, sigma, tau1, -tau2, s.grid, cfg.tol)?;
            rep.eigenvalues.insert("lambda_anisotropic".into(), r.lambda_extrapolated);
            rep.eigenvalues.insert("lambda_anisotropic_fine".into(), r.lambda_fine);
            rep.values.insert("remdet_a1".into(), r.a1);
            rep.values.insert("remdet_a2".into(), r.a2);
            rep.values.insert("remdet_gap_fine".into(), r.relative_gap_fine);
            rep.push(Check::rel_eq("remdet", r.lambda_extrapolated, r.lambda_radial, cfg.tol));
        }
    }
    Ok(())
}

fn asymptotic_csv(t: &AsymptoticTable) -> Result<CsvTable> {
    let cols = &t.columns;
    CsvTable::new(
        &t.name,
        &[&cols[0], &cols[1], &cols[2], &cols[3]],
        vec![
            t.rows.iter().map(|r| r.tau).collect(),
            t.rows.iter().map(|r| r.value).collect(),
            t.rows.iter().map(|r| r.normalized.unwrap_or(f64::NAN)).collect(),
            t.rows.iter().map(|r| r.bound).collect(),
        ],
    )
}

fn run_asympt(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let c = &s.asympt;
    for &tau in &c.fd_taus {
        let exact = g1_transcendental(c.g1_m, tau)?;
        let fd = gn_radial(1, c.g1_m, tau, RADIAL_NODES)?;
        rep.push(Check::rel_eq(&format!("transcendental_vs_fd_tau_{tau}"), fd, exact, 1e-4));
    }
    let g1 = g1_error_table(c.g1_m, &c.g1_taus)?;
    rep.extend("g1_error", &g1.checks);
    if let Some(last) = g1.rows.last() {
        rep.push(Check::le("g1_error_final", last.normalized.unwrap_or(f64::INFINITY), 1e-3, 0.0));
        let half = c.g1_m / 2.0;
        let scaled = (2.0 / half).powi(2) * g1_transcendental(2.0, last.tau * half / 2.0)?;
        let direct = g1_transcendental(half, last.tau)?;
        rep.push(Check::rel_eq("g1_scaling_law", direct, scaled, 1e-6));
    }
    let gn = gn_comparison(c.gn_n, c.gn_m, &c.gn_taus)?;
    rep.extend("gn", &gn.checks);
    if c.log_tau > 0.0 {
        rep.values.insert(format!("log_rate_gap_tau_{}", c.log_tau), log_rate_gap(c.gn_n, c.gn_m, c.log_tau)?);
    }
    let decay = remlp_decay(c.p, c.remlp_tau, &c.amplitudes)?;
    rep.extend("remlp", &decay.checks);
    for t in [&g1, &gn, &decay] {
        rep.tables.push(asymptotic_csv(t)?);
    }
    Ok(())
}

fn run_distcheck(s: &Scenario, rep: &mut ComparisonReport) -> Result<()> {
    let c = &s.distcheck;
    let grid = Arc::new(Grid2D::new(&s.domain, s.grid)?);
    let area = s.domain.closed_form_area();

    if !c.steps.is_empty() {
        let mu = DistFn::new(
            c.steps.iter().map(|p| p[0]).collect(),
            c.steps.iter().map(|p| p[1] * area).collect(),
            area,
        )?;
        let v = potential_from_distribution(&mu, &s.domain, &grid)?;
        let lo = mu.thresholds[0] - 1.0;
        let hi = mu.thresholds[mu.thresholds.len() - 1] + 1.0;
        let probes = c.probes.max(2);
        let ts: Vec<f64> = (0..probes).map(|i| lo + (hi - lo) * i as f64 / (probes - 1) as f64).collect();
        let got = measures_above(&v, &ts);
        let err = ts.iter().zip(&got).map(|(t, m)| (m - mu.eval(*t)).abs()).fold(0.0, f64::max);
        rep.push(Check::le("prescribed_distribution", err / area, 0.01, 0.0));
        rep.tables.push(CsvTable::new(
            "prescribed_distribution",
            &["t", "mu_target", "mu_grid"],
            vec![ts.clone(), ts.iter().map(|t| mu.eval(*t)).collect(), got],
        )?);
    }

    let id = MatrixField2D::identity(&grid);
    let psi = torsion(&grid, &id)?;
    for &seed in &c.schwarz_seeds {
        let u = random_field(&grid, seed, 0.2, 1.0).zip_map(&psi, |a, b| a * b).restrict_interior();
        let us = schwarz(&u, 4000)?;
        let e = grid_dirichlet_energy(&u);
        let es = radial_dirichlet_energy(&us);
        let dist = distribution_function(&u, 60)?;
        let ds = profile_distribution(&us, 2, &dist.thresholds)?;
        let derr = dist.measures.iter().zip(&ds).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dist.total;
        rep.push(Check::le(&format!("schwarz_equimeasurable_{seed}"), derr, 0.01, 0.0));
        rep.push(Check::le(&format!("schwarz_energy_{seed}"), es.sqrt(), e.sqrt() * 1.01, 0.0));
        rep.values.insert(format!("schwarz_energy_ratio_{seed}"), (es / e).sqrt());
    }

    if !c.shell_ks.is_empty() {
        let one = ScalarField2D::constant(&grid, 1.0);
        let zero = ScalarField2D::zeros(&grid);
        let table = build_level_table(&psi, &one, &zero, &zero, &id, s.levels)?;
        let g = random_field(&grid, c.shell_seed, 0.5, 1.5);
        let dist = distribution_function(&g, 60)?;
        for &k in &c.shell_ks {
            let sr = shell_rearrangement(&g, &table, k)?;
            let mut worst = 0.0_f64;
            for i in 0..sr.shell_count() {
                let (a, b) = sr.shell_bounds(i);
                let q = sr.integrate_against(|r| if r >= a && r < b { 1.0 } else { 0.0 }, 4000);
                let exact = sr.shell_integral(i);
                worst = worst.max((q - exact).abs() / exact.abs().max(1e-300));
            }
            let (gk, lo, up) = sr.profiles(8000);
            let ds = profile_distribution(&gk, 2, &dist.thresholds)?;
            let derr = dist.measures.iter().zip(&ds).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dist.total;
            let violation = (0..gk.values.len())
                .map(|i| (lo.values[i] - gk.values[i]).max(gk.values[i] - up.values[i]))
                .fold(f64::NEG_INFINITY, f64::max);
            rep.push(Check::le(&format!("shell_identity_k{k}"), worst, 0.005, 0.0));
            rep.push(Check::le(&format!("shell_distribution_k{k}"), derr, 0.01, 0.0));
            rep.push(Check::le(&format!("shell_ordering_k{k}"), violation, 0.0, 0.0));
            rep.tables.push(CsvTable::new(
                &format!("shells_k{k}"),
                &["r", "g_k", "lower", "upper"],
                vec![
                    (0..gk.values.len()).map(|i| gk.r(i)).collect(),
                    gk.values.clone(),
                    lo.values.clone(),
                    up.values.clone(),
                ],
            )?);
        }
    }
    Ok(())
}

/// Runs one scenario. Solver failures are returned as errors; failed checks
/// and admissibility problems are recorded in the report.
pub fn run_scenario(s: &Scenario) -> Result<ComparisonReport> {
    let task = s
        .task
        .ok_or_else(|| Error::InvalidInput(format!("scenario {} has no task", s.name)))?;
    let start = Instant::now();
    let mut rep = ComparisonReport::empty(&s.name, task);
    rep.grid = s.grid;
    rep.levels = s.levels;
    match task {
        Task::Rfk => run_rfk(s, &mut rep)?,
        Task::Symmetrize => run_symmetrize(s, &mut rep)?,
        Task::Compare => run_compare(s, &mut rep)?,
        Task::Extremal => run_extremal(s, &mut rep)?,
        Task::Asympt => run_asympt(s, &mut rep)?,
        Task::Distcheck => run_distcheck(s, &mut rep)?,
    }
    rep.finish();
    rep.wall_time = start.elapsed().as_secs_f64();
    Ok(rep)
}

/// Worker count from EIGENSYMM_THREADS, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("EIGENSYMM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs scenarios on up to `threads` workers; results keep the input order.
pub fn run_batch(scenarios: &[Scenario], threads: usize) -> Vec<Result<ComparisonReport>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ComparisonReport>>>> = scenarios.iter().map(|_| Mutex::new(None)).collect();
    let workers = threads.clamp(1, scenarios.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= scenarios.len() {
                    break;
                }
                let r = run_scenario(&scenarios[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

/// Writes `<name>.json` and one `<name>_<table>.csv` per table into `dir`.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = sanitize(&report.name);
    let mut written = Vec::new();
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(&sanitized(report))?)?;
    written.push(json);
    for t in &report.tables {
        let p = dir.join(format!("{stem}_{}.csv", sanitize(&t.name)));
        std::fs::write(&p, t.to_csv())?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<ComparisonReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "report".into()
    } else {
        s
    }
}

/// JSON has no infinities; non-finite values are recorded as ±f64::MAX so the
/// report stays readable and the pass flags unchanged.
fn sanitized(r: &ComparisonReport) -> ComparisonReport {
    let fix = |x: f64| {
        if x.is_nan() {
            0.0
        } else {
            x.clamp(f64::MIN, f64::MAX)
        }
    };
    let mut r = r.clone();
    for v in r.eigenvalues.values_mut().chain(r.values.values_mut()) {
        *v = fix(*v);
    }
    for c in &mut r.checks {
        c.lhs = fix(c.lhs);
        c.rhs = fix(c.rhs);
        c.tol = fix(c.tol);
        c.margin = fix(c.margin);
    }
    r
}

/// One-line summary per report.
pub fn summary_line(r: &ComparisonReport) -> String {
    let mut s = format!(
        "{} {} [{}] checks {}/{}",
        if r.pass { "PASS" } else { "FAIL" },
        r.name,
        r.task.name(),
        r.checks.iter().filter(|c| c.pass).count(),
        r.checks.len()
    );
    for c in r.failed_checks() {
        let _ = write!(s, "; {} margin {:e}", c.name, c.margin);
    }
    for a in &r.admissibility {
        let _ = write!(s, "; inadmissible: {a}");
    }
    s
}
