use lozenge::counting::{count_hexagon_product, ln_biguint};
use lozenge::domain::{Domain, PolygonalDomain};
use lozenge::limit_shape::*;
use lozenge::mesh::Mesh;
use num_complex::Complex64;

fn regular(n: i64) -> Domain {
    Domain::new(PolygonalDomain::hexagon(n, n, n, n)).unwrap()
}

fn solve(d: &Domain, k: i64) -> HeightField {
    solve_variational(d, k, None, &SolverOptions::default()).unwrap()
}

#[test]
fn functional_approaches_log_count() {
    let mut gaps = Vec::new();
    for n in [4i64, 6, 8] {
        let hf = solve(&regular(n), 1);
        assert!(hf.residual <= 1e-6);
        let exact = ln_biguint(&count_hexagon_product(n as u32, n as u32, n as u32)) / (n * n) as f64;
        // The discrete maximizer never overshoots the counting density.
        assert!(hf.functional < exact);
        gaps.push(exact - hf.functional);
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
}

#[test]
fn hexagon_heights_have_central_symmetry() {
    // Rotating the regular hexagon by pi about its centre maps h to
    // 1 - h (boundary heights run from 0 to 1).
    let hf = solve(&regular(1), 12);
    let n = 12;
    for &(i, j) in &hf.mesh().nodes {
        let a = hf.height_at(i, j).unwrap();
        let b = hf.height_at(2 * n - i, 2 * n - j).unwrap();
        assert!((a + b - 1.0).abs() < 1e-7, "({i},{j}): {a} {b}");
    }
}

#[test]
fn solver_is_monotone_on_a_nonconvex_domain() {
    let d = Domain::new(PolygonalDomain::from_lattice_vertices(
        2,
        &[(0, 0), (2, 0), (3, 1), (3, 2), (5, 2), (6, 3), (6, 5), (2, 5), (0, 3)],
    ))
    .unwrap();
    let hf = solve(&d, 3);
    assert!(hf.residual <= 1e-6);
    assert!(hf.history.windows(2).all(|w| w[1] >= w[0] - 1e-13));
    let p = hf.triangle_densities();
    assert!(p.iter().flatten().all(|&x| x > -1e-9 && x < 1.0 + 1e-9));
}

#[test]
fn hexagon_arctic_curve_is_closed_and_tangent() {
    let d = regular(1);
    let k = 32;
    let hf = solve(&d, k);
    let curve = arctic_curve(&hf, &d, LIQUID_EPS);
    assert_eq!(curve.polylines.len(), 1);
    assert!(curve.polylines[0].closed);
    let cell = hf.spacing();
    for (side, dist) in curve.side_distance.iter().enumerate() {
        assert!(*dist <= 2.0 * cell, "side {side}: {dist}");
    }
    // The liquid region is roughly the inscribed ellipse
    // X² - XT + T² = 3/4 around the centre.
    let centre = hf.mesh().node(k, k).unwrap();
    assert_eq!(hf.phases(LIQUID_EPS)[centre], Phase::Liquid);
    for &(x, t) in &curve.polylines[0].points {
        let (a, b) = (x - 1.0, t - 1.0);
        let q = a * a - a * b + b * b;
        assert!(q > 0.6, "({x}, {t}) q = {q}");
    }
    // Corners are frozen.
    let phases = hf.phases(LIQUID_EPS);
    let corner = hf.mesh().node(1, 1).unwrap();
    assert!(matches!(phases[corner], Phase::Frozen(_)));
}

#[test]
fn tangent_slope_check() {
    let d = regular(1);
    let hf = solve(&d, 64);
    let field = gradient_to_slope(&hf, LIQUID_EPS);
    let curve = arctic_curve(&hf, &d, LIQUID_EPS);
    let mut errs = tangent_errors(&curve, &field);
    assert!(errs.len() > 100);
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    // The threshold contour of the discrete maximizer converges slowly to
    // the true curve; at this mesh the median angle error is about 0.17.
    assert!(median < 0.25, "median {median}");
}

#[test]
fn burgers_residual_converges() {
    let d = regular(1);
    let disk = |x: f64, t: f64| {
        let (a, b) = (x - 1.0, t - 1.0);
        a * a - a * b + b * b < 0.35 * 0.35
    };
    let norms: Vec<f64> = [8i64, 16, 32]
        .iter()
        .map(|&k| burgers_residual(&gradient_to_slope(&solve(&d, k), LIQUID_EPS)).l2_norm(disk))
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
    let order = (norms[0] / norms[2]).log2() / 2.0;
    assert!(order > 1.5, "{norms:?}");
}

#[test]
fn slope_at_centre_of_regular_hexagon() {
    let hf = solve(&regular(1), 32);
    let f = slope_at(&hf, 32, 32, LIQUID_EPS).unwrap();
    let expect = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0);
    assert!((f - expect).norm() < 1e-3, "{f}");
    let corner = slope_at(&hf, 1, 1, LIQUID_EPS);
    assert!(matches!(corner, Err(lozenge::Error::FrozenNode(_, _))));
}

#[test]
fn infeasible_bottom_is_rejected() {
    let d = regular(2);
    let b = BottomHeight::from_json(r#"{"t":"1/2","pieces":[[["0","0"],["1/2","1"],["3/2","1"]]]}"#).unwrap();
    let err = solve_variational(&d, 1, Some(&b), &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, lozenge::Error::InfeasibleBoundary(_)), "{err}");
    assert!(Mesh::new(&d, 0).is_err());
}
