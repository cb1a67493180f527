use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use rtqmc::liouvillian::dense_liouvillian;
use rtqmc::redfield::{build_model, RedfieldParams};
use rtqmc::{LindbladChannel, Liouvillian, Location, OperatorModel, OperatorTerm, SingleQubitMatrix};

fn paulis() -> [SingleQubitMatrix; 4] {
    [
        SingleQubitMatrix::identity(),
        SingleQubitMatrix::pauli_x(),
        SingleQubitMatrix::pauli_y(),
        SingleQubitMatrix::pauli_z(),
    ]
}

fn arb_local() -> impl Strategy<Value = SingleQubitMatrix> {
    prop::array::uniform4((-1.0f64..1.0, -1.0f64..1.0)).prop_map(|v| {
        SingleQubitMatrix([
            [C64::new(v[0].0, v[0].1), C64::new(v[1].0, v[1].1)],
            [C64::new(v[2].0, v[2].1), C64::new(v[3].0, v[3].1)],
        ])
    })
}

/// Hermitian: real combination of Pauli strings on at most two qubits.
fn arb_hamiltonian(n: usize) -> impl Strategy<Value = OperatorModel> {
    prop::collection::vec((0..n, 0..n, 1usize..4, 0usize..4, -1.0f64..1.0), 0..5).prop_map(move |ts| {
        let p = paulis();
        let terms = ts
            .into_iter()
            .map(|(a, b, pa, pb, w)| {
                if a == b || pb == 0 {
                    OperatorTerm::real(w, [(a, p[pa])])
                } else {
                    OperatorTerm::real(w, [(a, p[pa]), (b, p[pb])])
                }
            })
            .collect();
        OperatorModel::new(n, terms).unwrap()
    })
}

fn arb_channels(n: usize) -> impl Strategy<Value = Vec<LindbladChannel>> {
    prop::collection::vec((-1.0f64..1.0, prop::collection::vec((0..n, arb_local(), -1.0f64..1.0, -1.0f64..1.0), 1..3)), 0..3)
        .prop_map(move |chs| {
            chs.into_iter()
                .map(|(rate, terms)| {
                    let terms = terms.into_iter().map(|(q, m, re, im)| OperatorTerm::new(C64::new(re, im), [(q, m)])).collect();
                    LindbladChannel::new(rate, OperatorModel::new(n, terms).unwrap()).unwrap()
                })
                .collect()
        })
}

fn arb_generator(max_n: usize) -> impl Strategy<Value = Liouvillian> {
    (1..=max_n).prop_flat_map(|n| (arb_hamiltonian(n), arb_channels(n))).prop_map(|(h, c)| Liouvillian::new(h, c).unwrap())
}

fn kron_reference(gen: &Liouvillian) -> DMatrix<C64> {
    let h = gen.hamiltonian().dense_matrix().unwrap();
    let d = h.nrows();
    let id = DMatrix::<C64>::identity(d, d);
    let i = C64::new(0.0, 1.0);
    let half = C64::new(0.5, 0.0);
    let mut l = id.kronecker(&h) * (-i) + h.transpose().kronecker(&id) * i;
    for ch in gen.channels() {
        let j = ch.jump.dense_matrix().unwrap();
        let jdj = j.adjoint() * &j;
        l += (j.conjugate().kronecker(&j) - id.kronecker(&jdj) * half - jdj.transpose().kronecker(&id) * half)
            * C64::new(ch.rate, 0.0);
    }
    l
}

fn left_trace_residual(gen: &Liouvillian) -> f64 {
    let n = gen.n();
    let mut worst = 0.0f64;
    for s in 0..1usize << (2 * n) {
        let col = gen.column(Location::from_vec_index(s, n));
        let t: C64 = col.entries.iter().filter(|(l, _)| l.is_diagonal()).map(|(_, v)| *v).sum();
        worst = worst.max(t.norm());
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn columns_match_kronecker_reference(gen in arb_generator(3)) {
        let n = gen.n();
        let reference = kron_reference(&gen);
        let library = dense_liouvillian(gen.hamiltonian(), gen.channels(), n).unwrap();
        for s in 0..reference.ncols() {
            let col = gen.column(Location::from_vec_index(s, n));
            prop_assert!(col.entries.iter().all(|(_, v)| *v != C64::new(0.0, 0.0)));
            let stored: BTreeSet<usize> =
                col.entries.iter().filter(|(_, v)| v.norm() > 1e-13).map(|(l, _)| l.vec_index(n)).collect();
            for t in 0..reference.nrows() {
                let v = col.get(Location::from_vec_index(t, n));
                prop_assert!((v - reference[(t, s)]).norm() <= 1e-12);
                prop_assert!((v - library[(t, s)]).norm() <= 1e-12);
                prop_assert_eq!(stored.contains(&t), reference[(t, s)].norm() > 1e-13);
            }
        }
    }

    #[test]
    fn diagonal_covector_annihilates_generator(gen in arb_generator(4)) {
        prop_assert!(left_trace_residual(&gen) <= 1e-10);
    }

    #[test]
    fn hermiticity_is_propagated(gen in arb_generator(3), seed in any::<u64>(), t in 0.1f64..2.0) {
        let n = gen.n();
        let d = 1usize << n;
        let dense = kron_reference(&gen) * C64::new(t, 0.0);
        let prop = dense.exp();
        let mut x = seed | 1;
        let mut next = || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::<C64>::from_fn(d, d, |_, _| C64::new(next(), next()));
        let rho = &a + a.adjoint();
        let v = DMatrix::<C64>::from_column_slice(d * d, 1, rho.as_slice());
        let out = prop * v;
        let r = DMatrix::<C64>::from_column_slice(d, d, out.as_slice());
        prop_assert!((&r - r.adjoint()).camax() <= 1e-9 * r.camax().max(1.0));
    }

    #[test]
    fn redfield_generator_preserves_trace(
        o1 in -2.0f64..2.0, o2 in -2.0f64..2.0, g1 in 0.0f64..5.0, g2 in 0.0f64..5.0,
        alpha in -4.0f64..4.0, kappa in -3.0f64..3.0,
    ) {
        let m = build_model(&RedfieldParams { omega1: o1, omega2: o2, gamma1: g1, gamma2: g2, alpha, kappa }).unwrap();
        let gen = Liouvillian::new(m.hamiltonian_part.clone(), m.channels.clone()).unwrap();
        prop_assert!(left_trace_residual(&gen) <= 1e-10);
        let dense = gen.dense().unwrap();
        for c in 0..16 {
            let s: C64 = (0..4).map(|k| dense[(k * 5, c)]).sum();
            prop_assert!(s.norm() <= 1e-10);
        }
    }
}

#[test]
fn negative_rate_channels_keep_the_identity() {
    let n = 2;
    let jump = OperatorModel::new(
        n,
        vec![
            OperatorTerm::real(1.0, [(0, SingleQubitMatrix::sigma_minus())]),
            OperatorTerm::new(C64::new(0.3, -0.4), [(1, SingleQubitMatrix::sigma_minus())]),
        ],
    )
    .unwrap();
    let gen = Liouvillian::new(OperatorModel::zero(n), vec![LindbladChannel::new(-0.7, jump).unwrap()]).unwrap();
    assert!(left_trace_residual(&gen) <= 1e-12);
    let reference = kron_reference(&gen);
    assert!((gen.dense().unwrap() - reference).camax() <= 1e-12);
}
