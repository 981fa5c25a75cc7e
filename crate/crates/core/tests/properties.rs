use proptest::prelude::*;

use bsde_lab::modulus::{check_shape, concave_majorant, ModulusSpec, Tabulated};
use bsde_lab::paths::PathEnsemble;
use bsde_lab::solver::{regress_conditional_expectation, BasisSpec};

fn samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.01f64..3.0, 0.0f64..5.0), 1..20).prop_map(|steps| {
        let mut u = 0.0;
        let mut out = vec![(0.0, 0.0)];
        for (du, v) in steps {
            u += du;
            out.push((u, v));
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn majorant_is_admissible_and_dominates(pts in samples()) {
        let m = concave_majorant(&pts).unwrap();
        let s = check_shape(&m, 500, 1e-9).unwrap();
        prop_assert!(s.is_nondecreasing && s.is_concave && s.zero_at_zero);
        for &(u, v) in &pts {
            prop_assert!(m.eval(u).unwrap() >= v - 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn tabulated_csv_round_trip(pts in samples()) {
        let (u, v): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let tab = Tabulated::new(u, v).unwrap();
        let back = Tabulated::from_csv(&tab.to_csv()).unwrap();
        prop_assert_eq!(back.u(), tab.u());
        prop_assert_eq!(back.v(), tab.v());
    }

    #[test]
    fn ensemble_bytes_round_trip(paths in 1usize..20, steps in 1usize..8, dim in 1usize..3, seed in any::<u64>()) {
        let ens = PathEnsemble::generate(paths, steps, dim, 0.5, seed).unwrap();
        let back = PathEnsemble::from_bytes(&ens.to_bytes()).unwrap();
        prop_assert_eq!(back.increments(), ens.increments());
        prop_assert_eq!(back.seed(), seed);
        prop_assert_eq!(back.grid(), ens.grid());
    }

    #[test]
    fn regression_reproduces_quadratics(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, seed in 0u64..1000) {
        let ens = PathEnsemble::generate(400, 2, 1, 1.0, seed).unwrap();
        let state = ens.state_at(1);
        let target: Vec<f64> = state.iter().map(|x| a + b * x + c * x * x).collect();
        let basis = BasisSpec::new(2, Some(0.0)).unwrap();
        let r = regress_conditional_expectation(&target, 1, &state, 1, &basis).unwrap();
        for (f, t) in r.fitted.iter().zip(&target) {
            prop_assert!((f - t).abs() < 1e-8, "{} vs {}", f, t);
        }
    }
}

#[test]
fn basis_sizes() {
    let b = BasisSpec::new(3, None).unwrap();
    assert_eq!([b.size(1), b.size(2), b.size(3)], [4, 10, 20]);
}

#[test]
fn linear_is_its_own_majorant() {
    let lin = ModulusSpec::linear(2.0, 4.0).unwrap();
    let pts: Vec<(f64, f64)> = (0..=8).map(|i| (i as f64 * 0.5, lin.eval(i as f64 * 0.5).unwrap())).collect();
    let m = concave_majorant(&pts).unwrap();
    assert_eq!(m.as_tabulated().unwrap().u(), &[0.0, 4.0]);
}
