use num_complex::Complex64 as C64;

use rtqmc::circuits::Noise;
use rtqmc::rng::StreamFactory;
use rtqmc::stepper::qmc_step_euler;
use rtqmc::walkers::{merge, spawn, GaussInt, Population, SpawnContext};
use rtqmc::{Liouvillian, Location, OperatorModel, OperatorTerm, SingleQubitMatrix};

fn model() -> Liouvillian {
    let h = OperatorModel::new(
        2,
        vec![
            OperatorTerm::real(0.8, [(0, SingleQubitMatrix::pauli_x())]),
            OperatorTerm::real(0.5, [(0, SingleQubitMatrix::pauli_z()), (1, SingleQubitMatrix::pauli_z())]),
            OperatorTerm::new(C64::new(0.3, 0.0), [(1, SingleQubitMatrix::pauli_y())]),
        ],
    )
    .unwrap();
    Liouvillian::new(h, Noise::new(Some(2.0), Some(1.5)).channels(2).unwrap()).unwrap()
}

fn population() -> Population {
    let l = Location::new;
    Population::from_entries(
        2,
        2000,
        vec![
            (l(0, 0), GaussInt::new(1200, 0)),
            (l(2, 2), GaussInt::new(800, 0)),
            (l(0, 2), GaussInt::new(300, -150)),
            (l(2, 0), GaussInt::new(300, 150)),
            (l(1, 3), GaussInt::new(-40, 25)),
            (l(3, 1), GaussInt::new(-40, -25)),
        ],
    )
    .unwrap()
}

#[test]
fn n_diag_is_conserved_in_expectation() {
    let gen = model();
    let pop = population();
    let before = pop.n_diag().re as f64;
    let draws = 4000;
    let deltas: Vec<f64> = (0..draws)
        .map(|k| {
            let f = StreamFactory::new(k as u64);
            qmc_step_euler(&pop, 0.02, &gen, 0.0, &f, 0).unwrap().n_diag().re as f64 - before
        })
        .collect();
    let m = deltas.iter().sum::<f64>() / draws as f64;
    let var = deltas.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    assert!(se > 0.0);
    assert!(m.abs() <= 5.0 * se, "mean change {m} with standard error {se}");
}

#[test]
fn spawns_are_independent_of_worker_count_and_call_order() {
    let gen = model();
    let pop = population();
    let f = StreamFactory::new(99);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| spawn(&pop, &gen, 0.05, 1.0, 1e-3, SpawnContext { factory: &f, step: 17, tag: 0 }).unwrap())
    };
    let a = run(1);
    let b = run(8);
    assert_eq!(a.entries(), b.entries());

    let other = spawn(&pop, &gen, 0.05, 1.0, 1e-3, SpawnContext { factory: &f, step: 18, tag: 0 }).unwrap();
    let again = spawn(&pop, &gen, 0.05, 1.0, 1e-3, SpawnContext { factory: &f, step: 17, tag: 0 }).unwrap();
    assert_eq!(a.entries(), again.entries());
    assert_ne!(a.entries(), other.entries());
}

#[test]
fn merging_spawn_buffers_is_order_independent() {
    let gen = model();
    let pop = population();
    let f = StreamFactory::new(5);
    let a = spawn(&pop, &gen, 0.05, 1.5, 0.0, SpawnContext { factory: &f, step: 0, tag: 0 }).unwrap();
    let b = spawn(&pop, &gen, 0.05, -0.5, 0.0, SpawnContext { factory: &f, step: 0, tag: 1 }).unwrap();
    let ab = merge(&pop, &[&a, &b]);
    let ba = merge(&pop, &[&b, &a]);
    let nested = merge(&merge(&pop, &[&b]), &[&a]);
    assert_eq!(ab, ba);
    assert_eq!(ab, nested);
    assert!(ab.entries().iter().all(|(_, g)| !g.is_zero()));
}
