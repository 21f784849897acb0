use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use qinvert_core::inversion::ReadoutPlan;
use qinvert_core::invertibility::{operator_rank, transform_observables, ObservableArray, RelativeDegree};
use qinvert_core::model::{build_two_qubit_model, reference_two_qubit_state, Coefficient, ProbeModel};
use qinvert_core::operator::{pauli, pauli_string, DensityState, GeneratorTerm, Operator, Pauli, HERMITIAN_TOL};

fn complex_matrix(d: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d * d)
        .prop_map(move |v| DMatrix::from_iterator(d, d, v.into_iter().map(|(re, im)| Complex64::new(re, im))))
}

fn hermitian(d: usize) -> impl Strategy<Value = Operator> {
    complex_matrix(d).prop_map(|a| Operator::new((&a + a.adjoint()) * Complex64::new(0.5, 0.0)).unwrap())
}

fn full_rank_state(d: usize) -> impl Strategy<Value = DensityState> {
    complex_matrix(d).prop_map(move |b| {
        let rho = &b * b.adjoint() + DMatrix::identity(d, d) * Complex64::new(1e-3, 0.0);
        let tr = rho.trace();
        DensityState::new(Operator::new(rho / tr).unwrap()).unwrap()
    })
}

fn generator(d: usize) -> impl Strategy<Value = GeneratorTerm> {
    prop_oneof![
        hermitian(d).prop_map(|h| GeneratorTerm::hamiltonian(h, HERMITIAN_TOL).unwrap()),
        complex_matrix(d).prop_map(|l| GeneratorTerm::lindblad(Operator::new(l).unwrap())),
    ]
}

fn unitary(d: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    complex_matrix(d).prop_map(move |a| (a + DMatrix::identity(d, d) * Complex64::new(0.1, 0.0)).qr().q())
}

fn conjugate(u: &DMatrix<Complex64>, o: &Operator) -> Operator {
    Operator::new(u * o.matrix() * u.adjoint()).unwrap()
}

fn two_qubit(obs: &[&str], w1: Coefficient, w2: Coefficient, state: DensityState) -> ProbeModel {
    build_two_qubit_model(
        w1,
        w2,
        Coefficient::Unknown,
        obs.iter().map(|s| pauli_string(s).unwrap()).collect(),
        state,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_keeps_observables_hermitian(g in generator(4), o in hermitian(4)) {
        let out = g.apply_adjoint(&o).unwrap();
        prop_assert!(out.hermitian_deviation() <= 1e-12 * (1.0 + g.norm_bound() * o.norm()));
    }

    #[test]
    fn forward_generators_are_traceless(g in generator(2), rho in complex_matrix(2)) {
        let rho = Operator::new(rho).unwrap();
        let tr = g.apply_forward(&rho).unwrap().trace();
        prop_assert!(tr.norm() <= 1e-12 * (1.0 + g.norm_bound() * rho.norm()));
    }

    #[test]
    fn generators_are_linear(g in generator(2), a in complex_matrix(2), b in complex_matrix(2), s in -3.0f64..3.0) {
        let (a, b) = (Operator::new(a).unwrap(), Operator::new(b).unwrap());
        let combo = &a.scale(s) + &b;
        let lhs = g.apply_forward(&combo).unwrap();
        let rhs = &g.apply_forward(&a).unwrap().scale(s) + &g.apply_forward(&b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + combo.norm() * g.norm_bound()));
        let lhs = g.apply_adjoint(&combo).unwrap();
        let rhs = &g.apply_adjoint(&a).unwrap().scale(s) + &g.apply_adjoint(&b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * (1.0 + combo.norm() * g.norm_bound()));
    }

    #[test]
    fn rank_survives_rescaling_and_basis_change(
        obs in prop::collection::vec(hermitian(4), 1..4),
        scales in prop::collection::vec(prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], 3),
        u in unitary(4),
    ) {
        let controls: Vec<GeneratorTerm> = ["ZI", "IZ", "XX"]
            .iter()
            .map(|s| GeneratorTerm::hamiltonian(pauli_string(s).unwrap(), HERMITIAN_TOL).unwrap())
            .collect();
        let base = operator_rank(&ObservableArray::from_controls(&controls, &obs).unwrap());

        let scaled: Vec<Operator> = obs.iter().zip(&scales).map(|(o, s)| o.scale(*s)).collect();
        prop_assert_eq!(operator_rank(&ObservableArray::from_controls(&controls, &scaled).unwrap()), base);

        let rotated_controls: Vec<GeneratorTerm> = controls
            .iter()
            .map(|c| GeneratorTerm::hamiltonian(conjugate(&u, c.operator()), 1e-9).unwrap())
            .collect();
        let rotated_obs: Vec<Operator> = obs.iter().map(|o| conjugate(&u, o)).collect();
        prop_assert_eq!(
            operator_rank(&ObservableArray::from_controls(&rotated_controls, &rotated_obs).unwrap()),
            base
        );
    }

    #[test]
    fn readout_matrix_has_full_rank_on_generic_states(state in full_rank_state(4)) {
        for (obs, known) in [
            (&["YI", "IX"][..], true),
            (&["XI", "YI", "IX", "IY", "ZI"][..], false),
        ] {
            let coef = |v: f64| if known { Coefficient::Known(v) } else { Coefficient::Unknown };
            let m = two_qubit(obs, coef(0.00628), coef(0.00628), state.clone());
            let verdict = transform_observables(&m).unwrap();
            prop_assert!(verdict.invertible);
            let plan = ReadoutPlan::new(&m, &verdict).unwrap();
            let sv = plan.matrix(&state).singular_values();
            let rank = sv.iter().filter(|s| **s > 1e-9 * plan.scale()).count();
            prop_assert_eq!(rank, m.num_inputs(), "singular values {:?}", sv);
        }
    }
}

/// Re-running the transform on its own output observables yields first-order
/// rows only, so the accumulated degree (source order plus the extra orders)
/// is unchanged.
#[test]
fn transform_is_idempotent() {
    let h = |o: Operator| GeneratorTerm::hamiltonian(o, HERMITIAN_TOL).unwrap();
    let biased = ProbeModel::new(
        vec![h(pauli(Pauli::X).scale(0.3))],
        vec![h(pauli(Pauli::Z))],
        vec![pauli(Pauli::Z)],
        qinvert_core::model::equator_state(0.0),
    )
    .unwrap();
    let mimo = two_qubit(&["XI", "YI", "IX"], Coefficient::Unknown, Coefficient::Unknown, reference_two_qubit_state());
    let single = two_qubit(
        &["YI", "IX"],
        Coefficient::Known(0.00628),
        Coefficient::Known(0.00628),
        reference_two_qubit_state(),
    );
    for model in [biased, mimo, single] {
        let first = transform_observables(&model).unwrap();
        let ops: Vec<Operator> = first.transformed_observables.iter().map(|t| t.operator.clone()).collect();
        let again = transform_observables(&model.with_observables(ops).unwrap()).unwrap();
        assert!(again.invertible);
        assert_eq!(again.relative_degree, RelativeDegree::Finite(1));
        let accumulated = again
            .transformed_observables
            .iter()
            .flat_map(|t| t.source_indices().into_iter().map(move |k| (k, t.order)))
            .map(|(k, order)| first.transformed_observables[k].order + order - 1)
            .max()
            .unwrap();
        assert_eq!(RelativeDegree::Finite(accumulated), first.relative_degree);
    }
}
