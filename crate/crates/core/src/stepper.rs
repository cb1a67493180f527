//! Time stepping: stochastic walker updates and the deterministic dense oracle.
//!
//! Both modes share one [`TimeGrid`]. Within a segment the generator is
//! constant and the second-order Adams–Bashforth update is used; every segment
//! starts with an Euler step.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::Schedule;
use crate::error::{Error, Result};
use crate::liouvillian::{ColumnCache, ColumnOracle, Liouvillian, Location};
use crate::operators::{OperatorModel, C64, I, ZERO};
use crate::rng::StreamFactory;
use crate::walkers::{initialize, merge, spawn, spawn_with_occupancy, Population, SpawnContext};

/// Largest qubit count accepted by the dense oracle.
pub const EXACT_MAX_QUBITS: usize = 10;

const EXHAUSTIVE_WEIGHT_MAX_QUBITS: usize = 7;
const MAX_REFINE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Ab2,
}

impl Method {
    /// Largest `|weight|` passed to a spawn call.
    pub fn max_weight(&self) -> f64 {
        match self {
            Method::Euler => 1.0,
            Method::Ab2 => 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtPolicy {
    pub pulse_dt: f64,
    pub idle_dt: f64,
    /// Ceiling on the per-walker spawn probability for default steps.
    pub max_spawn_probability: f64,
    /// Overrides both defaults; never auto-reduced.
    pub fixed_dt: Option<f64>,
}

impl Default for DtPolicy {
    fn default() -> Self {
        Self { pulse_dt: 0.1, idle_dt: 1.0, max_spawn_probability: 0.1, fixed_dt: None }
    }
}

impl DtPolicy {
    pub fn fixed(dt: f64) -> Self {
        Self { fixed_dt: Some(dt), ..Self::default() }
    }
}

/// Step layout of one schedule segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub segment: usize,
    pub start: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// `(step offset, observation index)`, sorted.
    pub observations: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub segments: Vec<SegmentGrid>,
    pub observation_times: Vec<f64>,
    /// Observations taken before any step (schedules without segments).
    pub initial_observations: Vec<usize>,
}

/// Largest column weight of a generator: exhaustive for small `n`, bounded otherwise.
pub fn max_column_weight(generator: &Liouvillian) -> f64 {
    if generator.n() <= EXHAUSTIVE_WEIGHT_MAX_QUBITS {
        generator.max_column_weight_exhaustive()
    } else {
        generator.column_weight_bound()
    }
}

impl TimeGrid {
    pub fn build(schedule: &Schedule, observation_times: &[f64], policy: &DtPolicy, method: Method) -> Result<Self> {
        let total = schedule.duration();
        let tol = 1e-9 * total.max(1.0);
        for w in observation_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::TimeGrid("observation times must be strictly increasing".into()));
            }
        }
        if let Some(&t) = observation_times.iter().find(|&&t| t < -tol || t > total + tol) {
            return Err(Error::TimeGrid(format!("observation time {t} outside [0, {total}]")));
        }
        for dt in [policy.pulse_dt, policy.idle_dt].into_iter().chain(policy.fixed_dt) {
            if !(dt > 0.0) {
                return Err(Error::TimeGrid(format!("time step must be positive, got {dt}")));
            }
        }

        let mut weights: Vec<(Vec<crate::operators::OperatorTerm>, f64)> = Vec::new();
        let mut segments = Vec::with_capacity(schedule.segments.len());
        let mut next_obs = 0usize;
        let n_seg = schedule.segments.len();
        for (s, seg) in schedule.segments.iter().enumerate() {
            let last = s + 1 == n_seg;
            let mut dt_target = match policy.fixed_dt {
                Some(dt) => dt,
                None if seg.pulse => policy.pulse_dt,
                None => policy.idle_dt,
            };
            let w = match weights.iter().find(|(t, _)| *t == seg.terms) {
                Some((_, w)) => *w,
                None => {
                    let w = max_column_weight(&schedule.liouvillian(s)?);
                    weights.push((seg.terms.clone(), w));
                    w
                }
            };
            let wfac = method.max_weight() * w;
            if policy.fixed_dt.is_none() {
                let base = dt_target;
                while wfac * dt_target > policy.max_spawn_probability {
                    dt_target /= 2.0;
                }
                if dt_target < base {
                    warn!(
                        "segment {s} at t = {} ns: dt reduced from {base} to {dt_target} ns to keep spawn probability <= {}",
                        seg.start, policy.max_spawn_probability
                    );
                }
            } else if wfac * dt_target > policy.max_spawn_probability {
                warn!("segment {s}: fixed dt = {dt_target} ns gives spawn probability up to {:.3}", wfac * dt_target);
            }

            let mut inner = Vec::new();
            while next_obs < observation_times.len() {
                let t = observation_times[next_obs];
                if t < seg.end() - tol || (last && t <= seg.end() + tol) {
                    inner.push((t - seg.start, next_obs));
                    next_obs += 1;
                } else {
                    break;
                }
            }
            let base_steps = ((seg.duration / dt_target) - 1e-9).ceil().max(1.0) as usize;
            let mut placed = None;
            for n_steps in base_steps..=base_steps * MAX_REFINE {
                let dt = seg.duration / n_steps as f64;
                let offsets: Option<Vec<(usize, usize)>> = inner
                    .iter()
                    .map(|&(off, k)| {
                        let x = off / dt;
                        let r = x.round();
                        ((x - r).abs() <= 1e-6).then_some((r.max(0.0) as usize, k))
                    })
                    .collect();
                if let Some(o) = offsets {
                    placed = Some((n_steps, dt, o));
                    break;
                }
            }
            let Some((n_steps, dt, observations)) = placed else {
                return Err(Error::TimeGrid(format!(
                    "cannot place observation times on a uniform grid inside segment {s} [{}, {}]",
                    seg.start,
                    seg.end()
                )));
            };
            segments.push(SegmentGrid { segment: s, start: seg.start, dt, n_steps, observations });
        }
        let initial_observations: Vec<usize> = (next_obs..observation_times.len()).collect();
        if n_seg > 0 && !initial_observations.is_empty() {
            return Err(Error::TimeGrid("observation times could not be assigned to segments".into()));
        }
        Ok(Self { segments, observation_times: observation_times.to_vec(), initial_observations })
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.n_steps).sum()
    }
}

/// Evenly spaced observation times `0, stride, …` up to `total` (inclusive).
pub fn observation_grid(total: f64, stride: f64) -> Result<Vec<f64>> {
    if !(stride > 0.0) {
        return Err(Error::TimeGrid(format!("observation stride must be positive, got {stride}")));
    }
    let k = (total / stride + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=k).map(|i| i as f64 * stride).collect();
    if (total - out[k]).abs() > 1e-9 * total.max(1.0) {
        out.push(total);
    } else {
        out[k] = total;
    }
    Ok(out)
}

/// `curr + spawn(curr, weight 1)`.
pub fn qmc_step_euler(
    curr: &Population,
    dt: f64,
    oracle: &dyn ColumnOracle,
    xi: f64,
    factory: &StreamFactory,
    step: u64,
) -> Result<Population> {
    let b = spawn(curr, oracle, dt, 1.0, xi, SpawnContext { factory, step, tag: 0 })?;
    Ok(merge(curr, &[&b]))
}

/// `curr + spawn(curr, 𝓛(t+dt), 3/2) + spawn(prev, 𝓛(t), −1/2)`.
#[allow(clippy::too_many_arguments)]
pub fn qmc_step_ab2(
    curr: &Population,
    prev: &Population,
    dt: f64,
    oracle_curr: &dyn ColumnOracle,
    oracle_prev: &dyn ColumnOracle,
    xi: f64,
    factory: &StreamFactory,
    step: u64,
) -> Result<Population> {
    let a = spawn(curr, oracle_curr, dt, 1.5, xi, SpawnContext { factory, step, tag: 0 })?;
    let b = spawn_with_occupancy(prev, curr, oracle_prev, dt, -0.5, xi, SpawnContext { factory, step, tag: 1 })?;
    Ok(merge(curr, &[&a, &b]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcParams {
    pub method: Method,
    pub n_diag: u64,
    pub xi: f64,
}

/// Runs one stochastic trajectory, calling `observe(index, t, population)`
/// at every observation time.
pub fn run_qmc(
    schedule: &Schedule,
    grid: &TimeGrid,
    params: &QmcParams,
    factory: &StreamFactory,
    observe: &mut dyn FnMut(usize, f64, &Population) -> Result<()>,
) -> Result<Population> {
    let mut curr = initialize(schedule.n, &schedule.initial_state, params.n_diag, factory)?;
    for &k in &grid.initial_observations {
        observe(k, grid.observation_times[k], &curr)?;
    }
    let mut step = 0u64;
    for sg in &grid.segments {
        let generator = schedule.liouvillian(sg.segment)?;
        let mut cache = ColumnCache::new(&generator);
        let mut prev: Option<Population> = None;
        let mut obs = sg.observations.iter().peekable();
        for k in 0..=sg.n_steps {
            while let Some(&&(off, idx)) = obs.peek() {
                if off != k {
                    break;
                }
                observe(idx, grid.observation_times[idx], &curr)?;
                obs.next();
            }
            if k == sg.n_steps {
                break;
            }
            cache.prefetch(curr.locations());
            let next = match (&prev, params.method) {
                (Some(p), Method::Ab2) => qmc_step_ab2(&curr, p, sg.dt, &cache, &cache, params.xi, factory, step)?,
                _ => qmc_step_euler(&curr, sg.dt, &cache, params.xi, factory, step)?,
            };
            prev = Some(std::mem::replace(&mut curr, next));
            step += 1;
        }
    }
    Ok(curr)
}

/// Column-stacked `vec(ρ)` of a `2^n × 2^n` density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub n: usize,
    pub t: f64,
    pub vec: Vec<C64>,
}

impl DenseState {
    pub fn from_pure(n: usize, psi: &[(u64, C64)]) -> Result<Self> {
        if n > EXACT_MAX_QUBITS {
            return Err(Error::SizeGuard { what: "dense state", n, max: EXACT_MAX_QUBITS });
        }
        let mut vec = vec![ZERO; 1 << (2 * n)];
        for &(i, a) in psi {
            for &(j, b) in psi {
                vec[Location::new(i, j).vec_index(n)] += a * b.conj();
            }
        }
        Ok(Self { n, t: 0.0, vec })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn element(&self, row: u64, col: u64) -> C64 {
        self.vec[Location::new(row, col).vec_index(self.n)]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim() as u64).map(|k| self.element(k, k)).sum()
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation(&self, psi: &[(u64, C64)]) -> C64 {
        let mut acc = ZERO;
        for &(i, a) in psi {
            for &(j, b) in psi {
                acc += a.conj() * self.element(i, j) * b;
            }
        }
        acc
    }
}

type SparseCols = Vec<Vec<(u64, C64)>>;

fn sparse_columns(op: &OperatorModel) -> SparseCols {
    (0..op.dim()).map(|k| op.apply_unchecked(k)).collect()
}

/// Matrix-free application of `𝓛` built from the operator term structure.
pub struct DenseGenerator {
    n: usize,
    h: SparseCols,
    channels: Vec<(f64, SparseCols, SparseCols, SparseCols)>,
}

impl DenseGenerator {
    pub fn new(generator: &Liouvillian) -> Result<Self> {
        let n = generator.n();
        if n > EXACT_MAX_QUBITS {
            return Err(Error::SizeGuard { what: "exact evolution", n, max: EXACT_MAX_QUBITS });
        }
        let channels = generator
            .channels()
            .iter()
            .filter(|c| c.rate != 0.0)
            .map(|c| {
                let ldag = c.jump.adjoint();
                (c.rate, sparse_columns(&c.jump), sparse_columns(&ldag), sparse_columns(&c.jump_dagger_jump))
            })
            .collect();
        Ok(Self { n, h: sparse_columns(generator.hamiltonian()), channels })
    }

    /// `out = 𝓛 vec(ρ)`.
    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = 1usize << self.n;
        let minus_i = -I;
        out.par_chunks_mut(d).enumerate().with_min_len(8).for_each_init(
            || vec![ZERO; d],
            |tmp, (j, col)| {
                col.fill(ZERO);
                let rho_col = |k: usize| &rho[k * d..(k + 1) * d];
                // −i H ρ
                for (k, &r) in rho_col(j).iter().enumerate() {
                    if r != ZERO {
                        for &(row, h) in &self.h[k] {
                            col[row as usize] += minus_i * h * r;
                        }
                    }
                }
                // +i ρ H
                for &(k, h) in &self.h[j] {
                    let c = I * h;
                    for (o, &r) in col.iter_mut().zip(rho_col(k as usize)) {
                        *o += c * r;
                    }
                }
                for (rate, l, ldag, k_op) in &self.channels {
                    // γ L (ρ L†)
                    tmp.fill(ZERO);
                    for &(k, a) in &ldag[j] {
                        for (t, &r) in tmp.iter_mut().zip(rho_col(k as usize)) {
                            *t += a * r;
                        }
                    }
                    for (m, &tm) in tmp.iter().enumerate() {
                        if tm != ZERO {
                            for &(row, a) in &l[m] {
                                col[row as usize] += *rate * a * tm;
                            }
                        }
                    }
                    // −γ/2 (K ρ + ρ K)
                    let half = -0.5 * rate;
                    for (k, &r) in rho_col(j).iter().enumerate() {
                        if r != ZERO {
                            for &(row, a) in &k_op[k] {
                                col[row as usize] += half * a * r;
                            }
                        }
                    }
                    for &(k, a) in &k_op[j] {
                        let c = half * a;
                        for (o, &r) in col.iter_mut().zip(rho_col(k as usize)) {
                            *o += c * r;
                        }
                    }
                }
            },
        );
    }
}

/// Deterministic evolution of `vec(ρ)` on the grid, returning the state at
/// every observation time.
pub fn exact_evolve(schedule: &Schedule, grid: &TimeGrid, method: Method) -> Result<Vec<DenseState>> {
    exact_evolve_from(schedule, grid, method, DenseState::from_pure(schedule.n, &schedule.initial_state)?)
}

/// [`exact_evolve`] starting from an arbitrary `vec(ρ)` at the schedule start.
pub fn exact_evolve_from(schedule: &Schedule, grid: &TimeGrid, method: Method, initial: DenseState) -> Result<Vec<DenseState>> {
    if initial.n != schedule.n || initial.vec.len() != 1usize << (2 * schedule.n) {
        return Err(Error::Mismatch(format!("initial state on {} qubits, schedule on {}", initial.n, schedule.n)));
    }
    let mut state = initial;
    let mut out: Vec<Option<DenseState>> = vec![None; grid.observation_times.len()];
    for &k in &grid.initial_observations {
        out[k] = Some(DenseState { t: grid.observation_times[k], ..state.clone() });
    }
    let len = state.vec.len();
    let mut f_curr = vec![ZERO; len];
    let mut f_prev = vec![ZERO; len];
    for sg in &grid.segments {
        let generator = DenseGenerator::new(&schedule.liouvillian(sg.segment)?)?;
        let mut have_prev = false;
        let mut obs = sg.observations.iter().peekable();
        for k in 0..=sg.n_steps {
            while let Some(&&(off, idx)) = obs.peek() {
                if off != k {
                    break;
                }
                out[idx] = Some(DenseState { t: grid.observation_times[idx], ..state.clone() });
                obs.next();
            }
            if k == sg.n_steps {
                break;
            }
            generator.apply(&state.vec, &mut f_curr);
            let dt = sg.dt;
            if have_prev && method == Method::Ab2 {
                state.vec.par_iter_mut().zip(f_curr.par_iter().zip(f_prev.par_iter())).for_each(|(x, (a, b))| {
                    *x += dt * (1.5 * a - 0.5 * b);
                });
            } else {
                state.vec.par_iter_mut().zip(f_curr.par_iter()).for_each(|(x, a)| *x += dt * a);
            }
            std::mem::swap(&mut f_curr, &mut f_prev);
            have_prev = true;
            state.t = sg.start + (k + 1) as f64 * dt;
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or_else(|| Error::TimeGrid(format!("observation {k} was never reached"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{build_dd_schedule, build_free_schedule, InitialState, Noise};
    use crate::operators::ONE;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn dense_generator_matches_dense_liouvillian() {
        let s = build_dd_schedule(3, 200.0, 100.0, Noise::new(Some(50.0), Some(60.0)), 0.03, InitialState::W).unwrap();
        for seg in 0..s.segments.len() {
            let l = s.liouvillian(seg).unwrap();
            let dense = l.dense().unwrap();
            let g = DenseGenerator::new(&l).unwrap();
            let n = 64;
            let rho: Vec<C64> = (0..n).map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect();
            let mut out = vec![ZERO; n];
            g.apply(&rho, &mut out);
            let v = nalgebra::DVector::from_vec(rho.clone());
            let expect = &dense * v;
            for k in 0..n {
                assert!(close(out[k], expect[k], 1e-12), "segment {seg} entry {k}");
            }
        }
    }

    #[test]
    fn grid_places_observations_and_divides_segments() {
        let s = build_dd_schedule(2, 400.0, 100.0, Noise::NONE, 0.0, InitialState::Plus).unwrap();
        let obs = observation_grid(400.0, 10.0).unwrap();
        assert_eq!(obs.len(), 41);
        let g = TimeGrid::build(&s, &obs, &DtPolicy::default(), Method::Ab2).unwrap();
        let placed: usize = g.segments.iter().map(|x| x.observations.len()).sum();
        assert_eq!(placed, 41);
        for (sg, seg) in g.segments.iter().zip(&s.segments) {
            assert!((sg.dt * sg.n_steps as f64 - seg.duration).abs() < 1e-9);
            assert!(sg.dt <= if seg.pulse { 0.1 } else { 1.0 } + 1e-12);
        }
        let odd = observation_grid(7.0, 2.0).unwrap();
        assert_eq!(odd, vec![0.0, 2.0, 4.0, 6.0, 7.0]);
    }

    #[test]
    fn grid_rejects_bad_observations() {
        let s = build_free_schedule(1, 10.0, Noise::NONE, 0.0, InitialState::W).unwrap();
        assert!(TimeGrid::build(&s, &[0.0, 11.0], &DtPolicy::default(), Method::Ab2).is_err());
        assert!(TimeGrid::build(&s, &[2.0, 1.0], &DtPolicy::default(), Method::Ab2).is_err());
    }

    #[test]
    fn dt_is_reduced_for_large_weights() {
        let s = build_free_schedule(1, 10.0, Noise::new(Some(2.0), None), 0.0, InitialState::W).unwrap();
        let g = TimeGrid::build(&s, &[0.0, 10.0], &DtPolicy::default(), Method::Ab2).unwrap();
        // weight 2·(1/2) = 1 per unit time; 1.5·dt ≤ 0.1
        assert!(1.5 * g.segments[0].dt <= 0.1 + 1e-12);
    }

    #[test]
    fn exact_damping_and_identity() {
        let s = build_free_schedule(1, 1.0, Noise::new(Some(1.0), None), 0.0, InitialState::W).unwrap();
        let g = TimeGrid::build(&s, &[0.0, 1.0], &DtPolicy::fixed(1e-3), Method::Ab2).unwrap();
        let out = exact_evolve(&s, &g, Method::Ab2).unwrap();
        assert!((out[1].element(1, 1).re - (-1f64).exp()).abs() < 1e-6);
        assert!(close(out[1].trace(), ONE, 1e-12));

        let s = build_free_schedule(2, 5.0, Noise::NONE, 0.0, InitialState::W).unwrap();
        let g = TimeGrid::build(&s, &[0.0, 5.0], &DtPolicy::default(), Method::Ab2).unwrap();
        let out = exact_evolve(&s, &g, Method::Ab2).unwrap();
        assert_eq!(out[0].vec, out[1].vec);
    }

    #[test]
    fn qmc_dt_zero_and_empty() {
        let s = build_free_schedule(1, 1.0, Noise::new(Some(1.0), None), 0.0, InitialState::W).unwrap();
        let l = s.liouvillian(0).unwrap();
        let f = StreamFactory::new(1);
        let p = initialize(1, &s.initial_state, 100, &f).unwrap();
        assert_eq!(qmc_step_ab2(&p, &p, 0.0, &l, &l, 0.0, &f, 0).unwrap(), p);
        let e = Population::empty(1, 100);
        assert!(qmc_step_euler(&e, 0.1, &l, 0.0, &f, 0).unwrap().is_empty());
        let s0 = build_free_schedule(1, 1.0, Noise::NONE, 0.0, InitialState::W).unwrap();
        let l0 = s0.liouvillian(0).unwrap();
        assert_eq!(qmc_step_euler(&p, 0.1, &l0, 0.0, &f, 0).unwrap(), p);
    }

    #[test]
    fn run_qmc_visits_every_observation_once() {
        let s = build_dd_schedule(2, 200.0, 100.0, Noise::new(Some(1e3), Some(1e3)), 1e-2, InitialState::Plus).unwrap();
        let obs = observation_grid(200.0, 10.0).unwrap();
        let g = TimeGrid::build(&s, &obs, &DtPolicy::default(), Method::Ab2).unwrap();
        let mut seen = Vec::new();
        let params = QmcParams { method: Method::Ab2, n_diag: 1000, xi: 0.0 };
        run_qmc(&s, &g, &params, &StreamFactory::new(4), &mut |k, t, p| {
            seen.push((k, t, p.n_diag()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), obs.len());
        assert!(seen.iter().enumerate().all(|(i, x)| x.0 == i && x.1 == obs[i]));
        assert_eq!(seen[0].2.re, 1000);
    }
}
