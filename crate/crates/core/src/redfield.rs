//! Two qubits coupled to a shared bath, in Redfield form:
//!
//! `dρ/dt = −i Σ_ij A_ij [σ⁺_j σ⁻_i, ρ] + Σ_k λ_k D[L_k] ρ`
//!
//! with rates from the rate matrix `C = [[γ₁/2, c], [c̄, γ₂/2]]`,
//! `c = (γ₁+γ₂)/4 + iκ`. Its eigenvalues are
//! `λ = (γ₁+γ₂)/4 ± √((γ₁² + γ₂² + 8κ²)/8)`, so `λ₁` may be negative.
//! `L_k = Σ_j U_kj σ⁻_j` where `U C U† = diag(λ₁, λ₂)`.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::circuits::{Basis, Schedule, Segment, SparseState};
use crate::error::{Error, Result};
use crate::estimators::ObservableSpec;
use crate::liouvillian::LindbladChannel;
use crate::operators::{OperatorModel, OperatorTerm, SingleQubitMatrix, C64, ONE, ZERO};

const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedfieldParams {
    pub omega1: f64,
    pub omega2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha: f64,
    pub kappa: f64,
}

impl RedfieldParams {
    /// Parameter set of the published two-qubit example.
    pub const REFERENCE: RedfieldParams =
        RedfieldParams { omega1: 0.25, omega2: 0.5, gamma1: 1.0, gamma2: 4.0, alpha: 3.0, kappa: 1.0 };

    fn validate(&self) -> Result<()> {
        let all = [self.omega1, self.omega2, self.gamma1, self.gamma2, self.alpha, self.kappa];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("Redfield parameters must be finite".into()));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return Err(Error::Config("gamma1 and gamma2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// `(λ₁, λ₂)` with `λ₁ ≤ λ₂`.
pub fn rates(p: &RedfieldParams) -> (f64, f64) {
    let mid = (p.gamma1 + p.gamma2) / 4.0;
    let r = ((p.gamma1 * p.gamma1 + p.gamma2 * p.gamma2 + 8.0 * p.kappa * p.kappa) / 8.0).sqrt();
    (mid - r, mid + r)
}

pub fn frequency_matrix(p: &RedfieldParams) -> Matrix2<C64> {
    let off = p.alpha + p.kappa / 2.0;
    let g = (p.gamma1 - p.gamma2) / 8.0;
    Matrix2::new(
        C64::new(p.omega1 + p.alpha, 0.0),
        C64::new(off, -g),
        C64::new(off, g),
        C64::new(p.omega2 + p.alpha + p.kappa, 0.0),
    )
}

pub fn rate_matrix(p: &RedfieldParams) -> Matrix2<C64> {
    let c = C64::new((p.gamma1 + p.gamma2) / 4.0, p.kappa);
    Matrix2::new(C64::new(p.gamma1 / 2.0, 0.0), c, c.conj(), C64::new(p.gamma2 / 2.0, 0.0))
}

#[derive(Debug, Clone)]
pub struct RedfieldModel {
    pub params: RedfieldParams,
    pub rates: (f64, f64),
    /// Rows are the diagonalizing transform: `U C U† = diag(λ₁, λ₂)`.
    pub u: Matrix2<C64>,
    /// `K = Σ A_ij σ⁺_j σ⁻_i`, used as the commutator generator.
    pub hamiltonian_part: OperatorModel,
    pub channels: Vec<LindbladChannel>,
    /// Columns are `|0̃⟩ … |3̃⟩` in the computational basis.
    pub rotated_basis: DMatrix<C64>,
}

fn sm(q: usize) -> (usize, SingleQubitMatrix) {
    (q, SingleQubitMatrix::sigma_minus())
}

fn sp(q: usize) -> (usize, SingleQubitMatrix) {
    (q, SingleQubitMatrix::sigma_plus())
}

/// Ascending eigen-decomposition of a 2×2 Hermitian matrix; eigenvectors are
/// phase-fixed so their first non-negligible component is real positive.
fn hermitian_eigen(c: &Matrix2<C64>) -> (Vec<f64>, Matrix2<C64>) {
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut v = Matrix2::zeros();
    for (k, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = if col[0].norm() > 1e-12 { col[0] } else { col[1] };
        col *= pivot.conj() / pivot.norm();
        v.set_column(k, &col);
    }
    (order.iter().map(|&k| eig.eigenvalues[k]).collect(), v)
}

pub fn build_model(p: &RedfieldParams) -> Result<RedfieldModel> {
    p.validate()?;
    let closed = rates(p);
    let c = rate_matrix(p);
    let (lams, v) = hermitian_eigen(&c);
    for (got, want) in lams.iter().zip([closed.0, closed.1]) {
        if (got - want).abs() > CONSISTENCY_TOL * want.abs().max(1.0) {
            return Err(Error::Consistency(format!("rate-matrix eigenvalue {got} differs from closed form {want}")));
        }
    }
    let u = v.adjoint();

    let a = frequency_matrix(p);
    let mut terms = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let coeff = a[(i, j)];
            if coeff == ZERO {
                continue;
            }
            if i == j {
                terms.push(OperatorTerm::new(coeff, [(j, SingleQubitMatrix::unit(1, 1))]));
            } else {
                terms.push(OperatorTerm::new(coeff, [sp(j), sm(i)]));
            }
        }
    }
    let hamiltonian_part = OperatorModel::new(2, terms)?;

    let mut channels = Vec::with_capacity(2);
    for (k, &rate) in [closed.0, closed.1].iter().enumerate() {
        let jump = OperatorModel::new(2, (0..2).map(|j| OperatorTerm::new(u[(k, j)], [sm(j)])).collect())?;
        channels.push(LindbladChannel::new(rate, jump)?);
    }

    let rotated_basis = rotated_basis(&channels)?;
    Ok(RedfieldModel { params: *p, rates: closed, u, hamiltonian_part, channels, rotated_basis })
}

fn normalized(v: DMatrix<C64>) -> Result<DMatrix<C64>> {
    let norm = v.norm();
    if norm < 1e-12 {
        return Err(Error::Consistency("rotated basis vector vanishes".into()));
    }
    Ok(v / C64::new(norm, 0.0))
}

fn rotated_basis(channels: &[LindbladChannel]) -> Result<DMatrix<C64>> {
    let l1d = channels[0].jump.dense_matrix()?.adjoint();
    let l2d = channels[1].jump.dense_matrix()?.adjoint();
    let mut vac = DMatrix::from_element(4, 1, ZERO);
    vac[(0, 0)] = ONE;
    let b1 = normalized(&l1d * &vac)?;
    let b2 = normalized(&l2d * &vac)?;
    let raw3 = &l2d * &l1d * &vac;
    let b3 = if raw3.norm() > 1e-12 {
        normalized(raw3)?
    } else {
        let mut e = DMatrix::from_element(4, 1, ZERO);
        e[(3, 0)] = ONE;
        e
    };
    let mut r = DMatrix::from_element(4, 4, ZERO);
    for (k, b) in [vac, b1, b2, b3].iter().enumerate() {
        r.set_column(k, &b.column(0));
    }
    let gram = r.adjoint() * &r;
    let err = (gram - DMatrix::<C64>::identity(4, 4)).camax();
    if err > 1e-10 {
        return Err(Error::Consistency(format!("rotated basis is not orthonormal (error {err:.2e})")));
    }
    Ok(r)
}

impl RedfieldModel {
    /// `(1/√3)(|0̃⟩ + |1̃⟩ + |2̃⟩)` in the computational basis.
    pub fn initial_state_computational(&self) -> SparseState {
        let s = 1.0 / 3f64.sqrt();
        (0..4u64)
            .filter_map(|i| {
                let a = (0..3).map(|k| self.rotated_basis[(i as usize, k)]).sum::<C64>() * s;
                (a.norm() > 1e-15).then_some((i, a))
            })
            .collect()
    }

    /// `|k̃⟩` in the computational basis.
    pub fn basis_state(&self, k: usize) -> SparseState {
        (0..4u64)
            .filter_map(|i| {
                let a = self.rotated_basis[(i as usize, k)];
                (a.norm() > 1e-15).then_some((i, a))
            })
            .collect()
    }

    /// Model conjugated into the rotated basis: `X ↦ R† X R`.
    pub fn rotated(&self) -> Result<(OperatorModel, Vec<LindbladChannel>)> {
        let r = &self.rotated_basis;
        let conj = |m: &OperatorModel| -> Result<OperatorModel> {
            OperatorModel::from_dense(2, &(r.adjoint() * m.dense_matrix()? * r))
        };
        let k = conj(&self.hamiltonian_part)?;
        let channels = self
            .channels
            .iter()
            .map(|c| LindbladChannel::new(c.rate, conj(&c.jump)?))
            .collect::<Result<Vec<_>>>()?;
        Ok((k, channels))
    }

    /// Single-segment schedule of the given duration; `basis` selects the
    /// rotated (`Eigenbasis`) or computational frame.
    pub fn schedule(&self, duration: f64, basis: Basis) -> Result<Schedule> {
        if !(duration > 0.0) {
            return Err(Error::Schedule(format!("duration must be positive, got {duration}")));
        }
        let (k, channels, initial_state) = match basis {
            Basis::Eigenbasis => {
                let (k, ch) = self.rotated()?;
                let s = C64::new(1.0 / 3f64.sqrt(), 0.0);
                (k, ch, vec![(0, s), (1, s), (2, s)])
            }
            Basis::Computational => {
                (self.hamiltonian_part.clone(), self.channels.clone(), self.initial_state_computational())
            }
            Basis::Hadamard => return Err(Error::Schedule("Redfield runs use the eigenbasis or computational frame".into())),
        };
        let sched = Schedule {
            n: 2,
            segments: vec![Segment { start: 0.0, duration, pulse: false, terms: k.terms().to_vec() }],
            channels,
            initial_state,
            basis,
        };
        sched.validate()?;
        Ok(sched)
    }

    /// `ρ̃_kk` for `k = 0, 1, 2` in the frame of `basis`.
    pub fn rotated_element_specs(&self, basis: Basis) -> Result<Vec<ObservableSpec>> {
        (0..3)
            .map(|k| match basis {
                Basis::Eigenbasis => Ok(ObservableSpec::diagonal(k as u64)),
                _ => ObservableSpec::fidelity(format!("rho_{k}_{k}"), self.basis_state(k)),
            })
            .collect()
    }
}
