//! Sparse column oracle for the vectorized Liouvillian.
//!
//! Density matrices are column-stacked, `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`, so the
//! generator is
//!
//! ```text
//! 𝓛 = −i 𝕀⊗H + i Hᵀ⊗𝕀 + Σ_k γ_k/2 · (2 L̄_k⊗L_k − 𝕀⊗L_k†L_k − (L_k†L_k)ᵀ⊗𝕀)
//! ```
//!
//! `H` need not be Hermitian: the commutator is vectorized verbatim. Column
//! `(i, j)` is the image of `|i⟩⟨j|` and is assembled term by term from the
//! sparse action of `H`, `Hᵀ`, `L`, `L†L` and `(L†L)ᵀ` on basis kets.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{merge_sorted, OperatorModel, C64, I, ZERO};

/// Largest qubit count accepted by [`Liouvillian::dense`].
pub const DENSE_LIOUVILLIAN_MAX_QUBITS: usize = 5;

/// Density-matrix element `ρ_{row,col}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub row: u64,
    pub col: u64,
}

impl Location {
    pub const fn new(row: u64, col: u64) -> Self {
        Self { row, col }
    }

    pub fn is_diagonal(&self) -> bool {
        self.row == self.col
    }

    /// Index into the column-stacked vector of a `2^n × 2^n` matrix.
    pub fn vec_index(&self, n: usize) -> usize {
        (self.row + (self.col << n)) as usize
    }

    pub fn from_vec_index(index: usize, n: usize) -> Self {
        let d = 1usize << n;
        Self { row: (index % d) as u64, col: (index / d) as u64 }
    }

    pub fn transposed(&self) -> Self {
        Self { row: self.col, col: self.row }
    }
}

/// A dissipation channel `γ·D[L]`. The rate may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladChannel {
    pub rate: f64,
    pub jump: OperatorModel,
    pub jump_dagger_jump: OperatorModel,
    jump_dagger_jump_t: OperatorModel,
}

impl LindbladChannel {
    pub fn new(rate: f64, jump: OperatorModel) -> Result<Self> {
        let jump_dagger_jump = jump.adjoint().product(&jump)?;
        let jump_dagger_jump_t = jump_dagger_jump.transpose();
        Ok(Self { rate, jump, jump_dagger_jump, jump_dagger_jump_t })
    }

    pub fn n(&self) -> usize {
        self.jump.n()
    }

    pub fn conjugate_by_hadamard(&self) -> Result<Self> {
        Self::new(self.rate, self.jump.conjugate_by_hadamard())
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelRepr {
    rate: f64,
    jump: OperatorModel,
}

impl Serialize for LindbladChannel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelRepr { rate: self.rate, jump: self.jump.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LindbladChannel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ChannelRepr::deserialize(d)?;
        LindbladChannel::new(r.rate, r.jump).map_err(serde::de::Error::custom)
    }
}

/// Nonzero entries of one Liouvillian column, sorted by target location.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvillianColumn {
    pub source: Location,
    pub entries: Vec<(Location, C64)>,
}

impl LiouvillianColumn {
    /// `Σ |Re| + |Im|` over entries: the per-unit-time spawn weight.
    pub fn weight(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a.re.abs() + a.im.abs()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a.norm_sqr()).sum()
    }

    pub fn get(&self, target: Location) -> C64 {
        self.entries
            .binary_search_by(|e| e.0.cmp(&target))
            .map(|k| self.entries[k].1)
            .unwrap_or(ZERO)
    }
}

/// Anything that can produce Liouvillian columns for occupied locations.
pub trait ColumnOracle: Sync {
    fn n(&self) -> usize;
    fn column(&self, source: Location) -> Arc<LiouvillianColumn>;
}

/// A piecewise-constant generator: Hamiltonian-like part plus channels.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    n: usize,
    hamiltonian: OperatorModel,
    hamiltonian_t: OperatorModel,
    channels: Vec<LindbladChannel>,
}

impl Liouvillian {
    pub fn new(hamiltonian: OperatorModel, channels: Vec<LindbladChannel>) -> Result<Self> {
        let n = hamiltonian.n();
        if let Some(c) = channels.iter().find(|c| c.n() != n) {
            return Err(Error::Model(format!("channel on {} qubits, Hamiltonian on {n}", c.n())));
        }
        let hamiltonian_t = hamiltonian.transpose();
        Ok(Self { n, hamiltonian, hamiltonian_t, channels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hamiltonian(&self) -> &OperatorModel {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[LindbladChannel] {
        &self.channels
    }

    /// All nonzero entries of the column at `source`.
    pub fn column(&self, source: Location) -> LiouvillianColumn {
        let Location { row: i, col: j } = source;
        let mut entries: Vec<(Location, C64)> = Vec::new();

        // −i H ρ: (k, j) ← −i H_ki
        for (k, h) in self.hamiltonian.apply_unchecked(i) {
            entries.push((Location::new(k, j), -I * h));
        }
        // +i ρ H: (i, l) ← +i H_jl = +i (Hᵀ)_lj
        for (l, h) in self.hamiltonian_t.apply_unchecked(j) {
            entries.push((Location::new(i, l), I * h));
        }

        for ch in &self.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let half = 0.5 * ch.rate;
            // γ L ρ L†: (k, l) ← γ L_ki conj(L_lj)
            let li = ch.jump.apply_unchecked(i);
            if !li.is_empty() {
                let lj = ch.jump.apply_unchecked(j);
                for &(k, a) in &li {
                    for &(l, b) in &lj {
                        entries.push((Location::new(k, l), a * b.conj() * ch.rate));
                    }
                }
            }
            // −γ/2 L†L ρ and −γ/2 ρ L†L
            for (k, m) in ch.jump_dagger_jump.apply_unchecked(i) {
                entries.push((Location::new(k, j), m * -half));
            }
            for (l, m) in ch.jump_dagger_jump_t.apply_unchecked(j) {
                entries.push((Location::new(i, l), m * -half));
            }
        }

        merge_sorted(&mut entries);
        LiouvillianColumn { source, entries }
    }

    /// Dense `4^n × 4^n` superoperator from Kronecker products (test oracle).
    pub fn dense(&self) -> Result<DMatrix<C64>> {
        dense_liouvillian(&self.hamiltonian, &self.channels, self.n)
    }

    /// Largest column weight over all `4^n` locations.
    pub fn max_column_weight_exhaustive(&self) -> f64 {
        let d = 1u64 << self.n;
        let mut w: f64 = 0.0;
        for col in 0..d {
            for row in 0..d {
                w = w.max(self.column(Location::new(row, col)).weight());
            }
        }
        w
    }

    /// Cheap upper bound on any column weight from the term structure.
    pub fn column_weight_bound(&self) -> f64 {
        fn op_bound(m: &OperatorModel) -> f64 {
            // Max column 1-norm of each factor, multiplied, times |coefficient|.
            m.terms()
                .iter()
                .map(|t| {
                    t.factors.iter().fold(t.coefficient.norm(), |acc, f| {
                        let c0 = f.matrix.get(0, 0).norm() + f.matrix.get(1, 0).norm();
                        let c1 = f.matrix.get(0, 1).norm() + f.matrix.get(1, 1).norm();
                        acc * c0.max(c1)
                    })
                })
                .sum()
        }
        let mut b = 2.0 * op_bound(&self.hamiltonian);
        for ch in &self.channels {
            let l = op_bound(&ch.jump);
            b += ch.rate.abs() * (l * l + op_bound(&ch.jump_dagger_jump));
        }
        // |Re| + |Im| ≤ √2 |z|
        std::f64::consts::SQRT_2 * b
    }
}

impl ColumnOracle for Liouvillian {
    fn n(&self) -> usize {
        self.n
    }

    fn column(&self, source: Location) -> Arc<LiouvillianColumn> {
        Arc::new(Liouvillian::column(self, source))
    }
}

/// Column memo for one piecewise-constant segment.
///
/// Filled through [`ColumnCache::prefetch`] between steps and read-only while
/// a step is being sampled; misses fall back to computing the column.
#[derive(Debug)]
pub struct ColumnCache<'a> {
    generator: &'a Liouvillian,
    map: HashMap<Location, Arc<LiouvillianColumn>>,
}

impl<'a> ColumnCache<'a> {
    pub fn new(generator: &'a Liouvillian) -> Self {
        Self { generator, map: HashMap::new() }
    }

    pub fn generator(&self) -> &'a Liouvillian {
        self.generator
    }

    pub fn prefetch<'b>(&mut self, locations: impl IntoIterator<Item = &'b Location>) {
        let missing: Vec<Location> = locations.into_iter().filter(|l| !self.map.contains_key(l)).copied().collect();
        let generator = self.generator;
        let computed: Vec<_> = missing
            .into_par_iter()
            .with_min_len(16)
            .map(|l| (l, Arc::new(generator.column(l))))
            .collect();
        self.map.extend(computed);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl ColumnOracle for ColumnCache<'_> {
    fn n(&self) -> usize {
        self.generator.n()
    }

    fn column(&self, source: Location) -> Arc<LiouvillianColumn> {
        match self.map.get(&source) {
            Some(c) => Arc::clone(c),
            None => Arc::new(self.generator.column(source)),
        }
    }
}

/// Dense vectorized generator assembled independently of the column oracle.
pub fn dense_liouvillian(hamiltonian: &OperatorModel, channels: &[LindbladChannel], n: usize) -> Result<DMatrix<C64>> {
    if n > DENSE_LIOUVILLIAN_MAX_QUBITS {
        return Err(Error::SizeGuard { what: "dense Liouvillian", n, max: DENSE_LIOUVILLIAN_MAX_QUBITS });
    }
    if hamiltonian.n() != n {
        return Err(Error::Model(format!("Hamiltonian on {} qubits, expected {n}", hamiltonian.n())));
    }
    let d = 1usize << n;
    let id = DMatrix::<C64>::identity(d, d);
    let h = hamiltonian.dense_matrix()?;
    let mut out = id.kronecker(&h) * (-I) + h.transpose().kronecker(&id) * I;
    for ch in channels {
        let l = ch.jump.dense_matrix()?;
        let ldl = l.adjoint() * &l;
        let d_term = l.map(|z| z.conj()).kronecker(&l) * C64::new(2.0, 0.0)
            - id.kronecker(&ldl)
            - ldl.transpose().kronecker(&id);
        out += d_term * C64::new(0.5 * ch.rate, 0.0);
    }
    Ok(out)
}
