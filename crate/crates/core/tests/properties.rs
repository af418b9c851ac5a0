use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sosenergy::bench::make_vdp_ring;
use sosenergy::collocation::sample_window;
use sosenergy::hjb::EnergyCandidate;
use sosenergy::poly::taylor_future;
use sosenergy::sos::{complete_sos, expand_squared, sos_from_factor, BlockStructure};
use sosenergy::tensor::{KronCoeff, MonomialBasis};
use sosenergy::{EnergyKind, PolyEnergy, SosEnergy};

fn random_sos(n: usize, r: usize, values: &[f64]) -> SosEnergy {
    let basis = MonomialBasis::new(n, r);
    let nu = basis.len();
    let empty = sos_from_factor(basis, DMatrix::zeros(nu, nu), BlockStructure::full(r)).unwrap();
    let k = empty.params().len();
    let theta = DVector::from_iterator(k, values.iter().cycle().take(k).copied());
    empty.with_params(&theta).unwrap()
}

/// Taylor-like energy with a positive definite quadratic part.
fn random_poly(n: usize, d: usize, values: &[f64]) -> PolyEnergy {
    let mut it = values.iter().cycle().copied();
    let g = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
    let v2 = &g * g.transpose() + DMatrix::identity(n, n) * n as f64;
    let mut coeffs = vec![KronCoeff::new(n, 2, DVector::from_column_slice(v2.as_slice())).unwrap()];
    for k in 3..=d {
        let len = n.pow(k as u32);
        coeffs.push(
            KronCoeff::new(n, k, DVector::from_iterator(len, it.by_ref().take(len))).unwrap(),
        );
    }
    PolyEnergy::new(EnergyKind::Past, 0.5, coeffs).unwrap()
}

fn point(n: usize, coords: &[f64]) -> DVector<f64> {
    DVector::from_iterator(n, coords.iter().cycle().take(n).copied())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sos_values_are_nonnegative_far_out(
        n in 1usize..=3,
        r in 1usize..=2,
        values in prop::collection::vec(-3.0f64..3.0, 60),
        coords in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 3), 50),
    ) {
        let e = random_sos(n, r, &values);
        for c in &coords {
            prop_assert!(e.eval(&point(n, c)) >= -1e-12);
        }
    }

    #[test]
    fn sos_matches_explicit_gram_form(
        n in 1usize..=3,
        r in 1usize..=2,
        values in prop::collection::vec(-2.0f64..2.0, 60),
        coords in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let e = random_sos(n, r, &values);
        let x = point(n, &coords);
        let z = e.basis().values(&x);
        let q = e.gram();
        let direct = z.dot(&(&q * &z));
        prop_assert!((e.eval(&x) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn complete_sos_matches_taylor_terms(
        n in 1usize..=3,
        d in 3usize..=4,
        values in prop::collection::vec(-1.0f64..1.0, 120),
    ) {
        let p = random_poly(n, d, &values);
        let sq = complete_sos(&p).unwrap();
        let expanded = expand_squared(&sq);
        let basis = MonomialBasis::new(n, d);
        for k in 2..=d {
            let a = p.coeff(k).unwrap().to_monomial(&basis).unwrap();
            let b = expanded.coeff(k).unwrap().to_monomial(&basis).unwrap();
            let scale = a.amax().max(1.0);
            prop_assert!((a - b).amax() <= 1e-10 * scale, "degree {} mismatch", k);
        }
    }

    #[test]
    fn squared_energy_equals_its_expansion(
        n in 1usize..=2,
        values in prop::collection::vec(-1.0f64..1.0, 60),
        coords in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let sq = complete_sos(&random_poly(n, 4, &values)).unwrap();
        let x = point(n, &coords);
        let a = sq.eval(&x);
        prop_assert!(a >= 0.0);
        let b = expand_squared(&sq).eval(&x);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn kron_coefficients_roundtrip_through_monomials(
        n in 1usize..=3,
        k in 1usize..=4,
        values in prop::collection::vec(-1.0f64..1.0, 81),
        coords in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let len = n.pow(k as u32);
        let c = KronCoeff::new(n, k, DVector::from_iterator(len, values.iter().copied().take(len))).unwrap();
        let basis = MonomialBasis::new(n, k);
        let m = c.to_monomial(&basis).unwrap();
        let back = KronCoeff::from_monomial(&m, &basis, k).unwrap();
        let x = point(n, &coords);
        prop_assert!((back.eval(&x) - c.eval(&x)).abs() <= 1e-12 * c.eval(&x).abs().max(1.0));
        prop_assert!((back.to_monomial(&basis).unwrap() - m).amax() <= 1e-12);
    }
}

#[test]
fn completed_vdp_energy_is_nonnegative_far_out() {
    let sys = make_vdp_ring(3, &[1.0, 1.0, 0.0]).unwrap();
    let p = taylor_future(&sys, 4).unwrap();
    let sq = complete_sos(&p).unwrap();
    for x in sample_window(20.0, 6, 200, 5) {
        assert!(sq.value(&x) >= 0.0);
    }
}
