use singhom::cell::{mk_value, whom_estimate};
use singhom::envelope::zf_refine;
use singhom::gamma::ieps_minimize;
use singhom::integrand::{check_conditions, CoefficientField, HProfile, IntegrandSpec, MatrixMN};
use singhom::laminate::{conv_envelope_1d, det_target_laminate, laminate_field_build, rconv_lattice, MatrixGrid};
use singhom::mesh::CellMesh;

fn hform_sin() -> IntegrandSpec {
    IntegrandSpec::h_form(
        2,
        2.0,
        CoefficientField::Sinusoidal { mean: 2.0, amplitude: 1.0, wavevector: vec![1, 1], phase: 0.0 },
        HProfile::standard(1.0, 1.0),
    )
}

fn sin_power(wavevector: Vec<i64>) -> IntegrandSpec {
    IntegrandSpec::power(2, 2, 2.0, CoefficientField::Sinusoidal { mean: 2.0, amplitude: 1.0, wavevector, phase: 0.0 })
}

#[test]
fn hform_sample_checks_pass() {
    let r = check_conditions(&hform_sin(), 512, 11);
    assert!(r.coercivity_ok && r.periodicity_ok && r.c1.ok);
    let c = r.chat2.unwrap();
    assert!(c.holds_on_sample);
    assert_eq!((c.alpha, c.beta), (2.0, 3.0));
}

#[test]
fn laminate_fields_vanish_on_the_boundary_and_match_leaves() {
    for rows in [[[0.5, 0.3], [-0.2, 0.7]], [[0.0, 0.0], [0.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]]] {
        let xi = MatrixMN::from_rows(&[&rows[0], &rows[1]]);
        let tree = det_target_laminate(&xi, -2.0, 2.0, 3).unwrap();
        let lf = laminate_field_build(&xi, &tree, 64, 1.0).unwrap();
        assert!(lf.field.boundary_is_zero(&lf.mesh));
        assert_eq!(lf.mismatched, 0);
        for (d, _) in lf.det_histogram().bins {
            assert!((d - 2.0).abs() <= 1e-8 || (d + 2.0).abs() <= 1e-8, "leaf-region det {d}");
        }
    }
}

#[test]
fn lattice_envelope_decreases_and_stays_above_the_convex_envelope() {
    let f = |m: &MatrixMN| (m.entries()[0].powi(2) - 1.0).powi(2);
    let grid = MatrixGrid::cube(1, 1, -2.0, 2.0, 41);
    let env = rconv_lattice(f, &grid, 200, 0.0).unwrap();
    assert!(env.decreases.iter().all(|d| *d >= 0.0));
    let oracle = conv_envelope_1d(|t| (t * t - 1.0).powi(2), -2.0, 2.0, 4001).unwrap();
    for i in 0..grid.len() {
        let x = grid.point(i)[0];
        assert!(env.values[i] >= oracle.eval(x) - 1e-12);
        assert!(env.values[i] <= f(&MatrixMN::from_rows(&[&[x]])));
    }
}

#[test]
fn envelope_inherits_the_coefficient_modulus() {
    let spec = hform_sin();
    let omega = spec.default_modulus();
    let xi = MatrixMN::from_rows(&[&[1.2, 0.3], &[-0.1, 0.9]]);
    let points = [[0.1, 0.2], [0.15, 0.2], [0.6, 0.9], [0.35, 0.05]];
    let est: Vec<_> = points.iter().map(|x| zf_refine(&spec, x, &xi, &[4, 8], 4, 2).unwrap()).collect();
    for (i, a) in est.iter().enumerate() {
        for (j, b) in est.iter().enumerate() {
            let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            let slack = 2.0 * (a.last_decrement() + b.last_decrement());
            assert!(a.value <= omega.eval(d) * (1.0 + b.value) + b.value + slack, "{i} {j}");
        }
    }
}

fn zero_field_energy(spec: &IntegrandSpec, xi: &MatrixMN, k: usize, n: usize) -> f64 {
    let mesh = CellMesh::uniform(spec.n, k * n, k as f64).unwrap();
    let total: f64 = (0..mesh.n_elements()).map(|e| mesh.volume(e) * spec.eval_entries(mesh.centroid(e), xi.entries())).sum();
    total / (k as f64).powi(spec.n as i32)
}

#[test]
fn cell_values_sit_below_the_zero_field_and_nearly_halve_on_doubling() {
    let spec = IntegrandSpec::double_well(
        1,
        1,
        CoefficientField::Sinusoidal { mean: 2.0, amplitude: 1.0, wavevector: vec![1], phase: 0.0 },
    );
    for x in [0.0, 0.4, 1.3] {
        let xi = MatrixMN::from_rows(&[&[x]]);
        let m1 = mk_value(&spec, &xi, 1, 16, 6, 4).unwrap();
        let m2 = mk_value(&spec, &xi, 2, 16, 6, 4).unwrap();
        assert!(m1 <= zero_field_energy(&spec, &xi, 1, 16));
        assert!(m2 <= m1 + 0.05 * (1.0 + m1));
    }
}

#[test]
fn cell_values_respect_axis_permutation() {
    let xi = MatrixMN::from_rows(&[&[1.0, 0.3], &[0.2, 0.5]]);
    let swapped = MatrixMN::from_rows(&[&[0.3, 1.0], &[0.5, 0.2]]);
    let a = whom_estimate(&sin_power(vec![1, 0]), &xi, 1, 8, 4, 3).unwrap().whom_estimate;
    let b = whom_estimate(&sin_power(vec![0, 1]), &swapped, 1, 8, 4, 3).unwrap().whom_estimate;
    assert!((a - b).abs() <= 1e-6 * (1.0 + a), "{a} {b}");
}

#[test]
fn minima_inherit_coercivity() {
    let spec = sin_power(vec![1, 0]);
    let xi = MatrixMN::from_rows(&[&[1.0, 0.3], &[0.2, 0.5]]);
    let floor = spec.coercivity * xi.norm_sq();
    let w = whom_estimate(&spec, &xi, 2, 8, 4, 3).unwrap().whom_estimate;
    assert!(w >= floor - 1e-9);
    for eps in [1.0, 0.5] {
        let v = ieps_minimize(&spec, &xi, eps, 16, 4, 3).unwrap();
        assert!(v >= floor - 1e-9);
    }
}
