//! k-local operators on n qubits.
//!
//! An [`OperatorModel`] is a sum of [`OperatorTerm`]s, each a complex
//! coefficient times a tensor product of 2×2 matrices on a few qubits
//! (identity elsewhere). Qubit `q` is bit `q` of a basis index, so qubit 0 is
//! the least significant bit.
//!
//! The sparse action [`OperatorModel::apply_to_ket`] is what the Liouvillian
//! column oracle is built on; [`OperatorModel::dense_matrix`] is an
//! independent Kronecker-product construction used as a test oracle.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Largest qubit count accepted by [`OperatorModel::dense_matrix`].
pub const DENSE_OPERATOR_MAX_QUBITS: usize = 10;

/// A 2×2 complex matrix, row-major: `m[row][col]`.
#[derive(Clone, Copy, PartialEq)]
pub struct SingleQubitMatrix(pub [[C64; 2]; 2]);

impl fmt::Debug for SingleQubitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => write!(f, "SingleQubitMatrix({name})"),
            None => write!(f, "SingleQubitMatrix({:?})", self.0),
        }
    }
}

impl SingleQubitMatrix {
    pub const fn new(m: [[C64; 2]; 2]) -> Self {
        Self(m)
    }

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        Self([
            [C64::new(m[0][0], 0.0), C64::new(m[0][1], 0.0)],
            [C64::new(m[1][0], 0.0), C64::new(m[1][1], 0.0)],
        ])
    }

    pub fn identity() -> Self {
        Self::from_real([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn pauli_x() -> Self {
        Self::from_real([[0.0, 1.0], [1.0, 0.0]])
    }

    pub fn pauli_y() -> Self {
        Self([[ZERO, -I], [I, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Self::from_real([[1.0, 0.0], [0.0, -1.0]])
    }

    /// σ⁻ = |0⟩⟨1|, lowers |1⟩ to |0⟩.
    pub fn sigma_minus() -> Self {
        Self::from_real([[0.0, 1.0], [0.0, 0.0]])
    }

    /// σ⁺ = |1⟩⟨0|.
    pub fn sigma_plus() -> Self {
        Self::from_real([[0.0, 0.0], [1.0, 0.0]])
    }

    pub fn hadamard() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_real([[h, h], [h, -h]])
    }

    /// Elementary matrix |row⟩⟨col|.
    pub fn unit(row: usize, col: usize) -> Self {
        let mut m = [[ZERO; 2]; 2];
        m[row][col] = ONE;
        Self(m)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[row][col]
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Self(out)
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Self([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Self([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    /// H·M·H with the Hadamard H.
    pub fn conjugate_by_hadamard(&self) -> Self {
        let h = Self::hadamard();
        h.matmul(self).matmul(&h)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                d = d.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        DMatrix::from_fn(2, 2, |r, c| self.0[r][c])
    }

    fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|v| *v == ZERO)
    }

    /// Canonical short name when the matrix equals one of the standard ones
    /// exactly. Used by the schedule JSON format.
    pub fn name(&self) -> Option<&'static str> {
        NAMED.iter().find(|(_, f)| f() == *self).map(|(n, _)| *n)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        NAMED.iter().find(|(n, _)| *n == name).map(|(_, f)| f())
    }
}

type NamedCtor = (&'static str, fn() -> SingleQubitMatrix);

const NAMED: &[NamedCtor] = &[
    ("i", SingleQubitMatrix::identity),
    ("x", SingleQubitMatrix::pauli_x),
    ("y", SingleQubitMatrix::pauli_y),
    ("z", SingleQubitMatrix::pauli_z),
    ("sm", SingleQubitMatrix::sigma_minus),
    ("sp", SingleQubitMatrix::sigma_plus),
    ("h", SingleQubitMatrix::hadamard),
];

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Named(String),
    /// Row-major `[re, im]` pairs.
    Entries([[[f64; 2]; 2]; 2]),
}

impl Serialize for SingleQubitMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self.name() {
            Some(n) => MatrixRepr::Named(n.to_string()),
            None => {
                let m = &self.0;
                let e = |v: C64| [v.re, v.im];
                MatrixRepr::Entries([[e(m[0][0]), e(m[0][1])], [e(m[1][0]), e(m[1][1])]])
            }
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SingleQubitMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match MatrixRepr::deserialize(d)? {
            MatrixRepr::Named(n) => SingleQubitMatrix::from_name(&n)
                .ok_or_else(|| de::Error::custom(format!("unknown matrix name {n:?}"))),
            MatrixRepr::Entries(e) => {
                let c = |p: [f64; 2]| C64::new(p[0], p[1]);
                Ok(SingleQubitMatrix([
                    [c(e[0][0]), c(e[0][1])],
                    [c(e[1][0]), c(e[1][1])],
                ]))
            }
        }
    }
}

/// One qubit factor of a term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub qubit: usize,
    pub matrix: SingleQubitMatrix,
}

/// `coefficient · ⊗_f factors[f]` with identity on all other qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorTerm {
    pub coefficient: C64,
    pub factors: Vec<Factor>,
}

impl OperatorTerm {
    pub fn new(coefficient: C64, factors: impl IntoIterator<Item = (usize, SingleQubitMatrix)>) -> Self {
        let mut factors: Vec<Factor> = factors
            .into_iter()
            .map(|(qubit, matrix)| Factor { qubit, matrix })
            .collect();
        factors.sort_by_key(|f| f.qubit);
        Self { coefficient, factors }
    }

    pub fn real(coefficient: f64, factors: impl IntoIterator<Item = (usize, SingleQubitMatrix)>) -> Self {
        Self::new(C64::new(coefficient, 0.0), factors)
    }

    pub fn locality(&self) -> usize {
        self.factors.len()
    }

    fn validate(&self, n: usize) -> Result<()> {
        for (k, f) in self.factors.iter().enumerate() {
            if f.qubit >= n {
                return Err(Error::Model(format!("qubit index {} out of range for n = {n}", f.qubit)));
            }
            if self.factors[..k].iter().any(|g| g.qubit == f.qubit) {
                return Err(Error::Model(format!("qubit {} appears twice in one term", f.qubit)));
            }
        }
        Ok(())
    }

    fn map_factors(&self, coefficient: C64, f: impl Fn(&SingleQubitMatrix) -> SingleQubitMatrix) -> Self {
        Self {
            coefficient,
            factors: self
                .factors
                .iter()
                .map(|x| Factor { qubit: x.qubit, matrix: f(&x.matrix) })
                .collect(),
        }
    }

    /// Operator product `self · rhs` as a single term.
    pub fn product(&self, rhs: &Self) -> Self {
        let mut factors: Vec<Factor> = Vec::with_capacity(self.factors.len() + rhs.factors.len());
        let (mut a, mut b) = (self.factors.iter().peekable(), rhs.factors.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.qubit == y.qubit => {
                    factors.push(Factor { qubit: x.qubit, matrix: x.matrix.matmul(&y.matrix) });
                    a.next();
                    b.next();
                }
                (Some(x), Some(y)) if x.qubit < y.qubit => factors.push(*a.next().unwrap()),
                (Some(_), Some(_)) => factors.push(*b.next().unwrap()),
                (Some(_), None) => factors.push(*a.next().unwrap()),
                (None, Some(_)) => factors.push(*b.next().unwrap()),
                (None, None) => break,
            }
        }
        Self { coefficient: self.coefficient * rhs.coefficient, factors }
    }

    /// Appends this term's nonzero amplitudes on `ket` to `out` (unmerged).
    fn apply_into(&self, ket: u64, out: &mut Vec<(u64, C64)>) {
        if self.coefficient == ZERO {
            return;
        }
        let start = out.len();
        out.push((ket, self.coefficient));
        for f in &self.factors {
            let bit = 1u64 << f.qubit;
            let input = ((ket & bit) != 0) as usize;
            let end = out.len();
            for k in start..end {
                let (idx, amp) = out[k];
                let lo = amp * f.matrix.get(0, input);
                let hi = amp * f.matrix.get(1, input);
                // Reuse slot k for the first nonzero branch.
                let mut slot = Some(k);
                for (value, target) in [(lo, idx & !bit), (hi, idx | bit)] {
                    if value == ZERO {
                        continue;
                    }
                    match slot.take() {
                        Some(s) => out[s] = (target, value),
                        None => out.push((target, value)),
                    }
                }
                if let Some(s) = slot {
                    out[s].1 = ZERO;
                }
            }
        }
        // Drop branches zeroed out above.
        let mut w = start;
        for r in start..out.len() {
            if out[r].1 != ZERO {
                out[w] = out[r];
                w += 1;
            }
        }
        out.truncate(w);
    }

    fn dense_matrix(&self, n: usize) -> DMatrix<C64> {
        // kron(M_{n-1}, ..., M_0): qubit 0 is the fastest-varying index.
        let mut acc = DMatrix::from_element(1, 1, self.coefficient);
        for q in (0..n).rev() {
            let m = self
                .factors
                .iter()
                .find(|f| f.qubit == q)
                .map(|f| f.matrix)
                .unwrap_or_else(SingleQubitMatrix::identity);
            acc = acc.kronecker(&m.to_dense());
        }
        acc
    }
}

/// A sum of k-local terms on `n` qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorModel {
    n: usize,
    terms: Vec<OperatorTerm>,
}

impl OperatorModel {
    /// The zero operator on `n` qubits.
    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn new(n: usize, terms: Vec<OperatorTerm>) -> Result<Self> {
        if n > 62 {
            return Err(Error::Model(format!("n = {n} exceeds the 62-qubit index width")));
        }
        for t in &terms {
            t.validate(n)?;
        }
        Ok(Self { n, terms })
    }

    pub fn push(&mut self, term: OperatorTerm) -> Result<()> {
        term.validate(self.n)?;
        self.terms.push(term);
        Ok(())
    }

    pub fn extend(&mut self, other: &OperatorModel) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Model(format!("cannot add {}-qubit terms to a {}-qubit model", other.n, self.n)));
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[OperatorTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> u64 {
        1u64 << self.n
    }

    /// Upper bound on the number of outputs of [`apply_to_ket`](Self::apply_to_ket).
    pub fn max_output_size(&self) -> usize {
        self.terms.iter().map(|t| 1usize << t.locality()).sum()
    }

    /// Nonzero amplitudes of `(Σ terms)|ket⟩`, sorted by index, duplicates summed.
    pub fn apply_to_ket(&self, ket: u64) -> Result<Vec<(u64, C64)>> {
        if ket >= self.dim() {
            return Err(Error::Model(format!("basis index {ket} out of range for n = {}", self.n)));
        }
        Ok(self.apply_unchecked(ket))
    }

    pub(crate) fn apply_unchecked(&self, ket: u64) -> Vec<(u64, C64)> {
        let mut out = Vec::with_capacity(self.max_output_size());
        for t in &self.terms {
            t.apply_into(ket, &mut out);
        }
        merge_sorted(&mut out);
        out
    }

    pub fn adjoint(&self) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| t.map_factors(t.coefficient.conj(), SingleQubitMatrix::adjoint))
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| t.map_factors(t.coefficient, SingleQubitMatrix::transpose))
                .collect(),
        }
    }

    /// Replaces every factor `M` by `H·M·H`; the dense matrix becomes
    /// `H^⊗n · A · H^⊗n`.
    pub fn conjugate_by_hadamard(&self) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| t.map_factors(t.coefficient, SingleQubitMatrix::conjugate_by_hadamard))
                .collect(),
        }
    }

    /// Operator product `self · rhs`, expanded term by term.
    pub fn product(&self, rhs: &Self) -> Result<Self> {
        if self.n != rhs.n {
            return Err(Error::Model(format!("product of {}- and {}-qubit models", self.n, rhs.n)));
        }
        let terms = self
            .terms
            .iter()
            .flat_map(|a| rhs.terms.iter().map(move |b| a.product(b)))
            .filter(|t| t.coefficient != ZERO && !t.factors.iter().any(|f| f.matrix.is_zero()))
            .collect();
        Ok(Self { n: self.n, terms })
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| OperatorTerm { coefficient: t.coefficient * s, factors: t.factors.clone() })
                .collect(),
        }
    }

    /// Dense `2^n × 2^n` matrix built from Kronecker products.
    pub fn dense_matrix(&self) -> Result<DMatrix<C64>> {
        if self.n > DENSE_OPERATOR_MAX_QUBITS {
            return Err(Error::SizeGuard { what: "dense operator", n: self.n, max: DENSE_OPERATOR_MAX_QUBITS });
        }
        let d = 1usize << self.n;
        let mut out = DMatrix::from_element(d, d, ZERO);
        for t in &self.terms {
            out += t.dense_matrix(self.n);
        }
        Ok(out)
    }

    /// Expands a dense matrix into elementary products `|a⟩⟨b| = ⊗_q |a_q⟩⟨b_q|`,
    /// one term per nonzero entry. Only meant for a handful of qubits.
    pub fn from_dense(n: usize, m: &DMatrix<C64>) -> Result<Self> {
        if n > 6 {
            return Err(Error::SizeGuard { what: "dense operator decomposition", n, max: 6 });
        }
        let d = 1usize << n;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Model(format!("expected a {d}×{d} matrix, got {}×{}", m.nrows(), m.ncols())));
        }
        let mut terms = Vec::new();
        for col in 0..d {
            for row in 0..d {
                let v = m[(row, col)];
                if v == ZERO {
                    continue;
                }
                let factors = (0..n).map(|q| (q, SingleQubitMatrix::unit((row >> q) & 1, (col >> q) & 1)));
                terms.push(OperatorTerm::new(v, factors));
            }
        }
        Ok(Self { n, terms })
    }
}

/// Sorts by index, sums duplicates and drops exact zeros.
pub(crate) fn merge_sorted<K: Ord + Copy>(v: &mut Vec<(K, C64)>) {
    v.sort_by_key(|e| e.0);
    let mut w = 0usize;
    for r in 0..v.len() {
        if w > 0 && v[w - 1].0 == v[r].0 {
            let add = v[r].1;
            v[w - 1].1 += add;
        } else {
            v[w] = v[r];
            w += 1;
        }
    }
    v.truncate(w);
    v.retain(|e| e.1 != ZERO);
}
