//! Benchmark circuits as piecewise-constant schedules.
//!
//! All frequencies are angular, in rad/ns; times are in ns. The always-on
//! crosstalk `J σᶻ_q σᶻ_{q+1}` acts on a nearest-neighbour chain. Gates are
//! square pulses: a 10 ns X pulse has generator `(π/20) σˣ`, and a 50 ns
//! CNOT has generator `(π/200) (𝕀−σᶻ)_c ⊗ (𝕀−σˣ)_t`, which exponentiates to
//! CNOT exactly.
//!
//! Noise: amplitude damping `(σ⁻, 1/T1)` and dephasing `(σᶻ, γ_z)` on every
//! qubit. With `D[σᶻ]` as implemented, a coherence decays at `2γ_z` from
//! dephasing and `1/(2T1)` from damping, so `γ_z = (1/T2 − 1/(2T1))/2` makes
//! the total coherence decay rate `1/T2`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::{LindbladChannel, Liouvillian};
use crate::operators::{OperatorModel, OperatorTerm, SingleQubitMatrix, C64, ONE, ZERO};

/// Sparse pure state: `(basis index, amplitude)` pairs.
pub type SparseState = Vec<(u64, C64)>;

/// Single-qubit gate duration (ns).
pub const SINGLE_QUBIT_GATE_NS: f64 = 10.0;
/// Two-qubit gate duration (ns).
pub const TWO_QUBIT_GATE_NS: f64 = 50.0;
/// Idle time completing each CNOT cycle (ns).
pub const CNOT_IDLE_NS: f64 = 10.0;

const TIME_EPS: f64 = 1e-9;

/// Converts an ordinary frequency in GHz into rad/ns.
pub fn ghz_to_rad_per_ns(f_ghz: f64) -> f64 {
    2.0 * PI * f_ghz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Computational,
    /// Every operator and the state conjugated by `H^⊗n`.
    Hadamard,
    /// Orthonormal basis built from a model's jump operators.
    Eigenbasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Plus,
    W,
}

/// T1/T2 in ns; `None` means no such channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
}

impl Noise {
    pub const NONE: Noise = Noise { t1: None, t2: None };

    pub fn new(t1: Option<f64>, t2: Option<f64>) -> Self {
        Self { t1, t2 }
    }

    pub fn damping_rate(&self) -> Option<f64> {
        self.t1.map(|t1| 1.0 / t1)
    }

    pub fn dephasing_rate(&self) -> Option<f64> {
        self.t2.map(|t2| (1.0 / t2 - self.t1.map_or(0.0, |t1| 0.5 / t1)) / 2.0)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("T1", self.t1), ("T2", self.t2)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Schedule(format!("{name} must be positive and finite, got {v}")));
                }
            }
        }
        if let Some(g) = self.dephasing_rate() {
            if g < 0.0 {
                return Err(Error::Schedule("T2 must not exceed 2·T1".into()));
            }
        }
        Ok(())
    }

    /// Damping and dephasing channels on every qubit.
    pub fn channels(&self, n: usize) -> Result<Vec<LindbladChannel>> {
        self.validate()?;
        let mut out = Vec::new();
        for q in 0..n {
            if let Some(g) = self.damping_rate() {
                let l = OperatorModel::new(n, vec![OperatorTerm::real(1.0, [(q, SingleQubitMatrix::sigma_minus())])])?;
                out.push(LindbladChannel::new(g, l)?);
            }
            if let Some(g) = self.dephasing_rate() {
                if g > 0.0 {
                    let l = OperatorModel::new(n, vec![OperatorTerm::real(1.0, [(q, SingleQubitMatrix::pauli_z())])])?;
                    out.push(LindbladChannel::new(g, l)?);
                }
            }
        }
        Ok(out)
    }
}

/// A time window with a fixed Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    /// Whether a gate pulse is active (selects the pulse time step).
    pub pulse: bool,
    pub terms: Vec<OperatorTerm>,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n: usize,
    pub segments: Vec<Segment>,
    pub channels: Vec<LindbladChannel>,
    pub initial_state: SparseState,
    pub basis: Basis,
}

impl Schedule {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, Segment::end)
    }

    pub fn hamiltonian(&self, segment: usize) -> Result<OperatorModel> {
        OperatorModel::new(self.n, self.segments[segment].terms.clone())
    }

    pub fn liouvillian(&self, segment: usize) -> Result<Liouvillian> {
        Liouvillian::new(self.hamiltonian(segment)?, self.channels.clone())
    }

    /// Index of the segment containing `t` (left-closed).
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        self.segments
            .iter()
            .position(|s| t >= s.start - TIME_EPS && t < s.end() - TIME_EPS)
    }

    pub fn validate(&self) -> Result<()> {
        let norm: f64 = self.initial_state.iter().map(|(_, a)| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Schedule(format!("initial state has squared norm {norm}")));
        }
        let d = 1u64 << self.n;
        if let Some((k, _)) = self.initial_state.iter().find(|(k, _)| *k >= d) {
            return Err(Error::Schedule(format!("initial state index {k} out of range")));
        }
        let mut t = 0.0;
        for s in &self.segments {
            if !(s.duration > 0.0) {
                return Err(Error::Schedule(format!("segment at {} has duration {}", s.start, s.duration)));
            }
            if (s.start - t).abs() > TIME_EPS {
                return Err(Error::Schedule(format!("gap or overlap at t = {t}")));
            }
            OperatorModel::new(self.n, s.terms.clone())?;
            t = s.end();
        }
        if let Some(c) = self.channels.iter().find(|c| c.n() != self.n) {
            return Err(Error::Schedule(format!("channel on {} qubits in an {}-qubit schedule", c.n(), self.n)));
        }
        Ok(())
    }

    /// Conjugates every term, channel and the initial state by `H^⊗n`.
    /// The state transform is dense, so `n` is limited to 12.
    pub fn hadamard_transformed(&self) -> Result<Self> {
        if self.n > 12 {
            return Err(Error::SizeGuard { what: "Hadamard state transform", n: self.n, max: 12 });
        }
        let rotated = rotate_without_state(self)?;
        let basis = match self.basis {
            Basis::Computational => Basis::Hadamard,
            Basis::Hadamard => Basis::Computational,
            Basis::Eigenbasis => {
                return Err(Error::Schedule("cannot Hadamard-transform an eigenbasis schedule".into()))
            }
        };
        Ok(Self {
            n: self.n,
            segments: rotated.segments,
            channels: rotated.channels,
            initial_state: hadamard_transform_state(self.n, &self.initial_state),
            basis,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sched: Schedule = serde_json::from_str(s)?;
        sched.validate()?;
        Ok(sched)
    }
}

/// `H^⊗n |ψ⟩` for a sparse state; exact zeros are dropped.
pub fn hadamard_transform_state(n: usize, psi: &[(u64, C64)]) -> SparseState {
    let d = 1u64 << n;
    let scale = FRAC_1_SQRT_2.powi(n as i32);
    let mut out = Vec::new();
    for k in 0..d {
        let mut amp = ZERO;
        for &(j, a) in psi {
            let sign = if (k & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            amp += a * sign;
        }
        let amp = amp * scale;
        if amp.norm() > 1e-15 {
            out.push((k, amp));
        }
    }
    out
}

pub fn plus_state_computational(n: usize) -> SparseState {
    let a = C64::new(FRAC_1_SQRT_2.powi(n as i32), 0.0);
    (0..1u64 << n).map(|k| (k, a)).collect()
}

pub fn w_state(n: usize) -> SparseState {
    let a = C64::new(1.0 / (n as f64).sqrt(), 0.0);
    (0..n).map(|q| (1u64 << q, a)).collect()
}

pub fn ghz_state(n: usize) -> SparseState {
    let a = C64::new(FRAC_1_SQRT_2, 0.0);
    vec![(0, a), ((1u64 << n) - 1, a)]
}

fn crosstalk_terms(n: usize, j: f64) -> Vec<OperatorTerm> {
    if j == 0.0 {
        return Vec::new();
    }
    let z = SingleQubitMatrix::pauli_z();
    (0..n.saturating_sub(1)).map(|q| OperatorTerm::real(j, [(q, z), (q + 1, z)])).collect()
}

fn x_pulse_term(q: usize) -> OperatorTerm {
    OperatorTerm::real(PI / (2.0 * SINGLE_QUBIT_GATE_NS), [(q, SingleQubitMatrix::pauli_x())])
}

/// CNOT generator `G` with `exp(−i G · 50 ns) = CNOT(control → target)`.
pub fn cnot_generator(control: usize, target: usize) -> OperatorTerm {
    let one_minus_z = SingleQubitMatrix::from_real([[0.0, 0.0], [0.0, 2.0]]);
    let one_minus_x = SingleQubitMatrix::from_real([[1.0, -1.0], [-1.0, 1.0]]);
    OperatorTerm::real(PI / (4.0 * TWO_QUBIT_GATE_NS), [(control, one_minus_z), (target, one_minus_x)])
}

fn cycles_in(total: f64, cycle: f64) -> Result<usize> {
    let k = (total / cycle).round();
    if total < 0.0 || (k * cycle - total).abs() > TIME_EPS * total.max(1.0) {
        return Err(Error::Schedule(format!("duration {total} ns is not a multiple of the {cycle} ns cycle")));
    }
    Ok(k as usize)
}

/// Pulse windows of one staggered XX cycle `[0, 2τ]`, as `(start, end, is_even_group)`.
///
/// Even qubits: `f_{τ/2} X f_τ X f_{τ/2}`, pulses centred at τ/2 and 3τ/2.
/// Odd qubits: the same sequence shifted by τ/2, pulses centred at τ and 2τ.
/// The pulse centred on the cycle boundary is split into its two halves,
/// `[0, 5]` and `[2τ−5, 2τ]`, so every cycle is self-contained; in a
/// multi-cycle schedule the halves join into one centred pulse.
pub fn dd_pulse_windows(tau: f64) -> Vec<(f64, f64, bool)> {
    let h = SINGLE_QUBIT_GATE_NS / 2.0;
    vec![
        (0.0, h, false),
        (tau / 2.0 - h, tau / 2.0 + h, true),
        (tau - h, tau + h, false),
        (1.5 * tau - h, 1.5 * tau + h, true),
        (2.0 * tau - h, 2.0 * tau, false),
    ]
}

/// Builds the staggered-XX dynamical decoupling experiment.
pub fn build_dd_schedule(
    n: usize,
    total_duration: f64,
    tau: f64,
    noise: Noise,
    j: f64,
    initial: InitialState,
) -> Result<Schedule> {
    if n < 2 {
        return Err(Error::Schedule("staggered DD needs at least 2 qubits".into()));
    }
    if !(tau >= 2.0 * SINGLE_QUBIT_GATE_NS) {
        return Err(Error::Schedule(format!("tau = {tau} ns is too short for 10 ns pulses (need >= 20)")));
    }
    let cycle = 2.0 * tau;
    let cycles = cycles_in(total_duration, cycle)?;

    let windows = dd_pulse_windows(tau);
    let mut cuts: Vec<f64> = vec![0.0, cycle];
    for &(a, b, _) in &windows {
        cuts.push(a);
        cuts.push(b);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);

    // One cycle as (start, end, pulsed group).
    let mut pattern: Vec<(f64, f64, Option<bool>)> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let group = windows.iter().find(|(a, b, _)| mid > *a && mid < *b).map(|x| x.2);
        pattern.push((w[0], w[1], group));
    }

    let crosstalk = crosstalk_terms(n, j);
    let mut segments: Vec<Segment> = Vec::new();
    let mut groups: Vec<Option<bool>> = Vec::new();
    for c in 0..cycles {
        let offset = c as f64 * cycle;
        for &(a, b, group) in &pattern {
            let start = offset + a;
            let duration = b - a;
            if let (Some(last), Some(lg)) = (segments.last_mut(), groups.last()) {
                if *lg == group && group.is_some() {
                    last.duration += duration;
                    continue;
                }
            }
            let mut terms = crosstalk.clone();
            if let Some(even) = group {
                let parity = if even { 0 } else { 1 };
                terms.extend((0..n).filter(|q| q % 2 == parity).map(x_pulse_term));
            }
            segments.push(Segment { start, duration, pulse: group.is_some(), terms });
            groups.push(group);
        }
    }

    let sched = Schedule {
        n,
        segments,
        channels: noise.channels(n)?,
        initial_state: computational_initial(n, initial),
        basis: Basis::Computational,
    };
    finish(sched, initial)
}

/// Free evolution under crosstalk and noise only.
pub fn build_free_schedule(
    n: usize,
    total_duration: f64,
    noise: Noise,
    j: f64,
    initial: InitialState,
) -> Result<Schedule> {
    if n < 1 {
        return Err(Error::Schedule("need at least one qubit".into()));
    }
    if !(total_duration >= 0.0) {
        return Err(Error::Schedule(format!("negative duration {total_duration}")));
    }
    let segments = if total_duration > 0.0 {
        vec![Segment { start: 0.0, duration: total_duration, pulse: false, terms: crosstalk_terms(n, j) }]
    } else {
        Vec::new()
    };
    let sched = Schedule {
        n,
        segments,
        channels: noise.channels(n)?,
        initial_state: computational_initial(n, initial),
        basis: Basis::Computational,
    };
    finish(sched, initial)
}

fn computational_initial(n: usize, initial: InitialState) -> SparseState {
    match initial {
        InitialState::Plus => plus_state_computational(n),
        InitialState::W => w_state(n),
    }
}

/// `|+⟩_n` runs move to the Hadamard basis, where the initial state is `|0…0⟩`.
fn finish(sched: Schedule, initial: InitialState) -> Result<Schedule> {
    let sched = match initial {
        InitialState::Plus => {
            let mut rotated = rotate_without_state(&sched)?;
            rotated.initial_state = vec![(0, ONE)];
            rotated
        }
        InitialState::W => sched,
    };
    sched.validate()?;
    Ok(sched)
}

fn rotate_without_state(s: &Schedule) -> Result<Schedule> {
    let segments = s
        .segments
        .iter()
        .map(|seg| {
            let m = OperatorModel::new(s.n, seg.terms.clone())?.conjugate_by_hadamard();
            Ok(Segment { terms: m.terms().to_vec(), ..seg.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = s.channels.iter().map(LindbladChannel::conjugate_by_hadamard).collect::<Result<Vec<_>>>()?;
    Ok(Schedule { n: s.n, segments, channels, initial_state: Vec::new(), basis: Basis::Hadamard })
}

/// GHZ preparation: `|+0…0⟩` followed by a CNOT ladder `0→1, 1→2, …`,
/// each a 50 ns pulse plus 10 ns idle.
pub fn build_ghz_schedule(n: usize, noise: Noise, j: f64) -> Result<Schedule> {
    if n < 2 {
        return Err(Error::Schedule("GHZ preparation needs at least 2 qubits".into()));
    }
    let crosstalk = crosstalk_terms(n, j);
    let mut segments = Vec::new();
    let mut t = 0.0;
    for c in 0..n - 1 {
        let mut pulse = crosstalk.clone();
        pulse.push(cnot_generator(c, c + 1));
        segments.push(Segment { start: t, duration: TWO_QUBIT_GATE_NS, pulse: true, terms: pulse });
        t += TWO_QUBIT_GATE_NS;
        segments.push(Segment { start: t, duration: CNOT_IDLE_NS, pulse: false, terms: crosstalk.clone() });
        t += CNOT_IDLE_NS;
    }
    let a = C64::new(FRAC_1_SQRT_2, 0.0);
    let sched = Schedule {
        n,
        segments,
        channels: noise.channels(n)?,
        initial_state: vec![(0, a), (1, a)],
        basis: Basis::Computational,
    };
    sched.validate()?;
    Ok(sched)
}

/// `exp(−i G t)` for a Hermitian dense generator via eigendecomposition.
pub fn unitary_from_generator(g: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = g.clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::new(0.0, -e * t).exp()));
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boundaries(s: &Schedule) -> Vec<f64> {
        s.segments.iter().map(Segment::end).collect()
    }

    #[test]
    fn dd_single_cycle_boundaries() {
        let s = build_dd_schedule(2, 200.0, 100.0, Noise::NONE, 0.0, InitialState::Plus).unwrap();
        assert_eq!(boundaries(&s), vec![5.0, 45.0, 55.0, 95.0, 105.0, 145.0, 155.0, 195.0, 200.0]);
        let pulsed: Vec<bool> = s.segments.iter().map(|x| x.pulse).collect();
        assert_eq!(pulsed, vec![true, false, true, false, true, false, true, false, true]);
        assert_eq!(s.basis, Basis::Hadamard);
        assert_eq!(s.initial_state, vec![(0, ONE)]);
    }

    #[test]
    fn dd_boundary_halves_merge_across_cycles() {
        let s = build_dd_schedule(3, 400.0, 100.0, Noise::NONE, 0.0, InitialState::W).unwrap();
        let seg = s.segments.iter().find(|x| (x.start - 195.0).abs() < 1e-12).unwrap();
        assert_eq!(seg.duration, 10.0);
        assert!(seg.pulse);
        assert_eq!(s.duration(), 400.0);
        // Odd group only: qubit 1.
        let pulsed: Vec<usize> = seg.terms.iter().map(|t| t.factors[0].qubit).collect();
        assert_eq!(pulsed, vec![1]);
    }

    #[test]
    fn dd_validation() {
        assert!(build_dd_schedule(1, 200.0, 100.0, Noise::NONE, 0.0, InitialState::Plus).is_err());
        assert!(build_dd_schedule(2, 250.0, 100.0, Noise::NONE, 0.0, InitialState::Plus).is_err());
        assert!(build_dd_schedule(2, 200.0, 19.0, Noise::NONE, 0.0, InitialState::Plus).is_err());
        assert!(build_dd_schedule(2, 40.0, 20.0, Noise::NONE, 0.0, InitialState::Plus).is_ok());
    }

    #[test]
    fn durations_sum_to_total() {
        let s = build_dd_schedule(4, 5000.0, 100.0, Noise::new(Some(1e5), Some(5e4)), 1e-3, InitialState::Plus).unwrap();
        let total: f64 = s.segments.iter().map(|x| x.duration).sum();
        assert_eq!(total, 5000.0);
        s.validate().unwrap();
        let g = build_ghz_schedule(5, Noise::NONE, 0.0).unwrap();
        assert_eq!(g.duration(), 240.0);
        let f = build_free_schedule(2, 0.0, Noise::NONE, 0.0, InitialState::W).unwrap();
        assert!(f.segments.is_empty());
        assert_eq!(f.duration(), 0.0);
    }

    #[test]
    fn staggered_windows_do_not_overlap() {
        for tau in [20.0, 37.5, 100.0, 250.0] {
            let w = dd_pulse_windows(tau);
            let even: Vec<_> = w.iter().filter(|x| x.2).collect();
            let odd: Vec<_> = w.iter().filter(|x| !x.2).collect();
            for e in &even {
                for o in &odd {
                    assert!(e.1 <= o.0 + 1e-12 || o.1 <= e.0 + 1e-12, "tau {tau}: {e:?} vs {o:?}");
                }
            }
            // Centres offset by τ/2.
            let ce = 0.5 * (even[0].0 + even[0].1);
            let co = 0.5 * (odd[1].0 + odd[1].1);
            assert!((co - ce - tau / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_channels_and_rates() {
        let noise = Noise::new(Some(1e5), Some(5e4));
        assert_eq!(noise.damping_rate(), Some(1e-5));
        let gz = noise.dephasing_rate().unwrap();
        assert!((gz - (2e-5 - 0.5e-5) / 2.0).abs() < 1e-20);
        assert!((2.0 * gz + 0.5e-5 - 1.0 / 5e4).abs() < 1e-18);
        assert_eq!(noise.channels(3).unwrap().len(), 6);
        assert!(Noise::new(Some(10.0), Some(30.0)).channels(1).is_err());
        assert!(Noise::NONE.channels(3).unwrap().is_empty());
    }

    #[test]
    fn x_pulse_generator_exponentiates_to_x() {
        let g = OperatorModel::new(1, vec![x_pulse_term(0)]).unwrap().dense_matrix().unwrap();
        let u = unitary_from_generator(&g, SINGLE_QUBIT_GATE_NS);
        let x = SingleQubitMatrix::pauli_x().to_dense();
        assert!(equal_up_to_phase(&u, &x, 1e-10));
    }

    #[test]
    fn cnot_generator_exponentiates_to_cnot() {
        let g = OperatorModel::new(2, vec![cnot_generator(0, 1)]).unwrap().dense_matrix().unwrap();
        let u = unitary_from_generator(&g, TWO_QUBIT_GATE_NS);
        // control qubit 0 (bit 0), target qubit 1 (bit 1): |01⟩ ↔ |11⟩, i.e. indices 1 ↔ 3.
        let mut cnot = DMatrix::from_element(4, 4, ZERO);
        cnot[(0, 0)] = ONE;
        cnot[(2, 2)] = ONE;
        cnot[(3, 1)] = ONE;
        cnot[(1, 3)] = ONE;
        assert!(equal_up_to_phase(&u, &cnot, 1e-10));
    }

    fn equal_up_to_phase(a: &DMatrix<C64>, b: &DMatrix<C64>, tol: f64) -> bool {
        let (k, _) = b.iter().enumerate().max_by(|x, y| x.1.norm().total_cmp(&y.1.norm())).unwrap();
        let phase = a.as_slice()[k] / b.as_slice()[k];
        if (phase.norm() - 1.0).abs() > tol {
            return false;
        }
        a.iter().zip(b.iter()).all(|(x, y)| (x - y * phase).norm() <= tol)
    }

    #[test]
    fn hadamard_transform_is_involution_on_states() {
        let w = w_state(3);
        let back = hadamard_transform_state(3, &hadamard_transform_state(3, &w));
        assert_eq!(back.len(), w.len());
        for ((i, a), (j, b)) in back.iter().zip(w.iter()) {
            assert_eq!(i, j);
            assert!((a - b).norm() < 1e-14);
        }
        let plus = hadamard_transform_state(2, &[(0, ONE)]);
        assert_eq!(plus.len(), 4);
    }

    #[test]
    fn schedule_json_round_trip() {
        let s = build_ghz_schedule(3, Noise::new(Some(1e5), Some(5e4)), 1e-3).unwrap();
        let json = s.to_json().unwrap();
        assert!(json.contains("\"sm\""));
        let back = Schedule::from_json(&json).unwrap();
        assert_eq!(back, s);
    }
}
