use nalgebra::DMatrix;
use proptest::prelude::*;
use strb_core::estimators::{averaging_defect_h, delta_p, delta_rb, dual_norm_y, true_errors};
use strb_core::{
    fe_solve, make_example1, rb_solve, HighFidelityModel, NewtonSettings, RBBasis, ResidualVectors,
};

fn model() -> HighFidelityModel {
    HighFidelityModel::uniform(make_example1(), 6, 20).unwrap()
}

fn two_mode_basis(m: &HighFidelityModel) -> RBBasis {
    let (y, _) = fe_solve(m, &[5.0], &NewtonSettings::default()).unwrap();
    let k = y.ncols() - 1;
    let snapshots =
        DMatrix::from_columns(&[y.column(k / 2).into_owned(), y.column(k).into_owned()]);
    RBBasis::from_vectors(&m.ops, &snapshots).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_norm_is_absolutely_homogeneous(seed in proptest::collection::vec(-1.0f64..1.0, 25 * 20), s in -50.0f64..50.0) {
        let m = model();
        let r = ResidualVectors { slabs: DMatrix::from_vec(25, 20, seed) };
        let scaled = ResidualVectors { slabs: &r.slabs * s };
        let base = dual_norm_y(&r, &m.ops);
        prop_assert!((dual_norm_y(&scaled, &m.ops) - s.abs() * base).abs() <= 1e-12 * (1.0 + s.abs() * base));
    }

    #[test]
    fn rb_bound_and_averaging_defect(mu in -10.0f64..10.0) {
        let m = model();
        let basis = two_mode_basis(&m);
        let newton = NewtonSettings::default();
        let (fe, _) = fe_solve(&m, &[mu], &newton).unwrap();
        let (red, _) = rb_solve(&m, &basis, &[mu], &newton).unwrap();
        let y = red.lift(&basis);
        let e = &fe - &y;
        let dt = m.ops.grid.dt(1);
        let f = m.problem.source_norm_h(&[mu]);
        prop_assert!(averaging_defect_h(&m.ops, &e) <= 2.0 * f * dt * (1.0 + 1e-9));

        let err = true_errors(&m.ops, &fe, &y);
        let est = delta_rb(&m, &[mu], &y).unwrap();
        if let Ok(dp) = delta_p(&m, &[mu], &fe, &y) {
            prop_assert!(err.projected_y <= est + dp + 1e-9 * (1.0 + est));
        }
    }
}
