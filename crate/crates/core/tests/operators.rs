use std::f64::consts::PI;
use std::sync::Arc;

use eigensymm::elliptic2d::{eigen, torsion};
use eigensymm::fields::{div_a_grad, MatrixField2D, ScalarField2D, VectorField2D};
use eigensymm::geometry::{measure, DomainSpec, Grid2D};
use eigensymm::radial1d::{bessel_zero, radial_eigenpair, rfk_value, RadialProfile};
use proptest::prelude::*;

fn grid(d: DomainSpec, n: usize) -> Arc<Grid2D> {
    Arc::new(Grid2D::new(&d, n).unwrap())
}

fn domains() -> impl Strategy<Value = DomainSpec> {
    prop_oneof![
        (0.5..2.0f64).prop_map(|r| DomainSpec::disk(r).unwrap()),
        (0.5..2.0f64, 0.5..2.0f64).prop_map(|(a, b)| DomainSpec::ellipse(a, b).unwrap()),
        (0.5..2.0f64, 0.5..2.0f64).prop_map(|(a, b)| DomainSpec::rectangle(a, b).unwrap()),
        (0.2..1.5f64, 0.3..1.0f64).prop_map(|(l, r)| DomainSpec::stadium(l, r).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_measure_tracks_closed_form(d in domains()) {
        let g = grid(d.clone(), 96);
        let m = measure(&d, &g).unwrap();
        let rel = (m.grid_area - m.closed_form).abs() / m.closed_form;
        prop_assert!(rel < 2e-3, "{d:?}: {} vs {}", m.grid_area, m.closed_form);
    }

    #[test]
    fn potential_shift_moves_eigenvalue(c in -3.0..3.0f64) {
        let g = grid(DomainSpec::ellipse(1.2, 0.8).unwrap(), 40);
        let a = MatrixField2D::identity(&g);
        let v = VectorField2D::from_fn(&g, |x, y| [0.5 * y, -0.3 * x]);
        let base = eigen(&g, &a, &v, &ScalarField2D::zeros(&g)).unwrap().lambda1;
        let shifted = eigen(&g, &a, &v, &ScalarField2D::constant(&g, c)).unwrap().lambda1;
        prop_assert!((shifted - base - c).abs() < 1e-8 * base.abs().max(1.0));
    }

    #[test]
    fn diffusion_scaling(s in 0.2..5.0f64) {
        let g = grid(DomainSpec::rectangle(1.5, 1.0).unwrap(), 40);
        let zero = ScalarField2D::zeros(&g);
        let v = VectorField2D::zeros(&g);
        let one = eigen(&g, &MatrixField2D::identity(&g), &v, &zero).unwrap().lambda1;
        let scaled = eigen(&g, &MatrixField2D::scalar(&ScalarField2D::constant(&g, s)), &v, &zero).unwrap().lambda1;
        prop_assert!((scaled - s * one).abs() < 1e-8 * s * one);
    }

    #[test]
    fn eigenvector_is_positive(seed in 0u64..1000) {
        let g = grid(DomainSpec::stadium(0.8, 0.5).unwrap(), 40);
        let t = seed as f64;
        let a = MatrixField2D::from_fn(&g, |x, y| [1.2 + 0.2 * (x + t).sin(), 0.1 * (y * t).cos(), 1.0 + 0.3 * (y - t).cos().powi(2)]);
        let v = VectorField2D::from_fn(&g, |x, y| [(t + y).sin(), (x - t).cos()]);
        let pot = ScalarField2D::from_fn(&g, |x, y| (x * y + t).sin());
        let e = eigen(&g, &a, &v, &pot).unwrap();
        for k in 0..g.len() {
            if g.mask[k] {
                prop_assert!(e.phi.values[k] > 0.0);
            }
        }
    }

    #[test]
    fn quadratic_divergence_is_exact(c11 in 0.5..2.0f64, c12 in -0.3..0.3f64, c22 in 0.5..2.0f64) {
        let g = grid(DomainSpec::rectangle(1.0, 1.0).unwrap(), 24);
        let a = MatrixField2D::from_fn(&g, |_, _| [c11, c12, c22]);
        let f = ScalarField2D::from_fn(&g, |x, y| x * x + x * y + 2.0 * y * y);
        let d = div_a_grad(&a, &f).unwrap();
        // div(A∇f) = 2c11 + 2c12 + 4c22 for this f.
        let exact = 2.0 * c11 + 2.0 * c12 + 4.0 * c22;
        for k in 0..g.len() {
            if g.mask[k] {
                prop_assert!((d.values[k] - exact).abs() < 1e-8 * exact.abs().max(1.0), "{} {}", d.values[k], exact);
            }
        }
    }
}

#[test]
fn disk_eigenvalue_and_torsion() {
    let g = grid(DomainSpec::disk(1.0).unwrap(), 128);
    let a = MatrixField2D::identity(&g);
    let j = bessel_zero(0, 1).unwrap();
    let lam = eigen(&g, &a, &VectorField2D::zeros(&g), &ScalarField2D::zeros(&g)).unwrap().lambda1;
    assert!((lam - j * j).abs() / (j * j) < 1e-3);
    let psi = torsion(&g, &a).unwrap();
    let err = (0..g.len())
        .filter(|&k| g.mask[k])
        .map(|k| {
            let p = g.point(k);
            (psi.values[k] - (1.0 - p[0] * p[0] - p[1] * p[1]) / 4.0).abs()
        })
        .fold(0.0, f64::max);
    assert!(err < 1e-4, "torsion error {err}");
}

#[test]
fn radial_solver_matches_bessel_and_planar_solver() {
    let m = 2000;
    let r = radial_eigenpair(
        2,
        1.0,
        &RadialProfile::constant(1.0, 1.0, m),
        &RadialProfile::constant(1.0, 0.0, m),
        &RadialProfile::constant(1.0, 0.0, m),
        m,
    )
    .unwrap();
    let exact = rfk_value(PI, 2).unwrap();
    assert!((r.lambda1 - exact).abs() / exact < 1e-5);
    assert!(r.lower <= r.lambda1 && r.lambda1 <= r.upper);

    // Λ(r) Id, speed e_r and V(r) on the disk.
    let lam = |r: f64| 1.0 + 0.5 * r * r;
    let pot = |r: f64| r - 0.5;
    let rad = radial_eigenpair(
        2,
        1.0,
        &RadialProfile::from_fn(1.0, m, lam),
        &RadialProfile::constant(1.0, 1.5, m),
        &RadialProfile::from_fn(1.0, m, pot),
        m,
    )
    .unwrap();
    let g = grid(DomainSpec::disk(1.0).unwrap(), 160);
    let a = MatrixField2D::scalar(&ScalarField2D::from_fn(&g, |x, y| lam(x.hypot(y))));
    let v = VectorField2D::from_fn(&g, |x, y| {
        let r = x.hypot(y);
        if r == 0.0 { [0.0, 0.0] } else { [1.5 * x / r, 1.5 * y / r] }
    });
    let p = ScalarField2D::from_fn(&g, |x, y| pot(x.hypot(y)));
    let planar = eigen(&g, &a, &v, &p).unwrap().lambda1;
    assert!((planar - rad.lambda1).abs() / rad.lambda1 < 1e-3, "{planar} vs {}", rad.lambda1);
}

#[test]
fn outward_drift_lowers_eigenvalue() {
    let m = 1000;
    let mut prev = f64::INFINITY;
    for tau in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let r = radial_eigenpair(
            2,
            1.0,
            &RadialProfile::constant(1.0, 1.0, m),
            &RadialProfile::constant(1.0, tau, m),
            &RadialProfile::constant(1.0, 0.0, m),
            m,
        )
        .unwrap();
        assert!(r.lambda1 < prev);
        prev = r.lambda1;
    }
}
