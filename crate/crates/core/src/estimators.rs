//! Density-matrix estimates from walker populations, bootstrap intervals and
//! the statistical error bound.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::SparseState;
use crate::error::{Error, Result};
use crate::liouvillian::{ColumnOracle, Location};
use crate::operators::{C64, ZERO};
use crate::stepper::DenseState;
use crate::walkers::Population;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableSpec {
    FidelityToState { name: String, state: SparseState },
    MatrixElement { name: String, location: Location, part: Part },
    Trace,
}

impl ObservableSpec {
    pub fn fidelity(name: impl Into<String>, state: SparseState) -> Result<Self> {
        let norm: f64 = state.iter().map(|(_, a)| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("fidelity target has squared norm {norm}")));
        }
        Ok(Self::FidelityToState { name: name.into(), state })
    }

    pub fn diagonal(k: u64) -> Self {
        Self::MatrixElement { name: format!("rho_{k}_{k}"), location: Location::new(k, k), part: Part::Re }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::FidelityToState { name, .. } | Self::MatrixElement { name, .. } => name,
            Self::Trace => "trace",
        }
    }

    /// The unnormalized linear functional (`⟨ψ|X|ψ⟩`, `X_ij` or `Tr X`) of a population.
    pub fn raw_population(&self, pop: &Population) -> C64 {
        match self {
            Self::FidelityToState { state, .. } => {
                let mut acc = ZERO;
                for &(i, a) in state {
                    for &(j, b) in state {
                        let c = pop.get(Location::new(i, j));
                        if !c.is_zero() {
                            acc += a.conj() * c.to_c64() * b;
                        }
                    }
                }
                acc
            }
            Self::MatrixElement { location, .. } => pop.get(*location).to_c64(),
            Self::Trace => pop.n_diag().to_c64(),
        }
    }

    pub fn raw_dense(&self, rho: &DenseState) -> C64 {
        match self {
            Self::FidelityToState { state, .. } => rho.expectation(state),
            Self::MatrixElement { location, .. } => rho.element(location.row, location.col),
            Self::Trace => rho.trace(),
        }
    }

    /// Maps the complex functional to the reported real value.
    pub fn finish(&self, z: C64) -> f64 {
        match self {
            Self::FidelityToState { .. } => z.norm(),
            Self::MatrixElement { part: Part::Im, .. } => z.im,
            Self::MatrixElement { part: Part::Re, .. } | Self::Trace => z.re,
        }
    }

    pub fn evaluate_dense(&self, rho: &DenseState) -> f64 {
        self.finish(self.raw_dense(rho))
    }
}

fn check_group(pops: &[&Population], r: usize) -> Result<()> {
    if pops.is_empty() {
        return Err(Error::Mismatch("no populations to estimate from".into()));
    }
    if r == 0 || !pops.len().is_multiple_of(r) {
        return Err(Error::Mismatch(format!("{} populations cannot be grouped into replicas of {r}", pops.len())));
    }
    let (n, nd) = (pops[0].n(), pops[0].n_diag_initial());
    if pops.iter().any(|p| p.n() != n || p.n_diag_initial() != nd) {
        return Err(Error::Mismatch("populations differ in qubit count or N_diag".into()));
    }
    Ok(())
}

/// `ρ̂ = Σ N / (n_sample · r · N^diag)` applied to `spec`; `pops` holds
/// `n_sample · r` populations.
pub fn estimate(pops: &[&Population], spec: &ObservableSpec, n_diag: u64, r: usize) -> Result<C64> {
    check_group(pops, r)?;
    let n_sample = pops.len() / r;
    let norm = (n_sample * r) as f64 * n_diag as f64;
    let sum: C64 = pops.iter().map(|p| spec.raw_population(p)).sum();
    let z = sum / norm;
    Ok(match spec {
        ObservableSpec::FidelityToState { .. } => C64::new(z.norm(), 0.0),
        _ => z,
    })
}

/// Percentile bootstrap of an arbitrary statistic of `n_units` resampled unit indices.
pub fn bootstrap_ci_with<F>(
    n_units: usize,
    statistic: F,
    n_resamples: usize,
    confidence: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    if n_units < 2 {
        return Err(Error::DegenerateCi(n_units));
    }
    if !(confidence > 0.0 && confidence < 1.0) || n_resamples == 0 {
        return Err(Error::Config(format!("bad bootstrap settings: {n_resamples} resamples at {confidence}")));
    }
    let mut idx = vec![0usize; n_units];
    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.random_range(0..n_units);
            }
            statistic(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, confidence: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    if values.len() >= 2 && values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], values[0]));
    }
    bootstrap_ci_with(
        values.len(),
        |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64,
        n_resamples,
        confidence,
        rng,
    )
}

/// Per-unit normalized functional values and traces at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitValue {
    pub value: C64,
    pub trace: f64,
}

impl UnitValue {
    pub fn from_population(spec: &ObservableSpec, pop: &Population) -> Self {
        let nd = pop.n_diag_initial() as f64;
        Self { value: spec.raw_population(pop) / nd, trace: pop.n_diag().re as f64 / nd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Pooled estimate over units with a bootstrap interval. The interval is
/// widened if needed so that it contains the pooled value.
pub fn summarize(
    spec: &ObservableSpec,
    units: &[UnitValue],
    renormalize: bool,
    n_resamples: usize,
    confidence: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Summary> {
    let stat = |idx: &[usize]| {
        let k = idx.len() as f64;
        let z: C64 = idx.iter().map(|&i| units[i].value).sum::<C64>() / k;
        let v = spec.finish(z);
        if renormalize {
            v / (idx.iter().map(|&i| units[i].trace).sum::<f64>() / k)
        } else {
            v
        }
    };
    let all: Vec<usize> = (0..units.len()).collect();
    if units.is_empty() {
        return Err(Error::DegenerateCi(0));
    }
    let mean = stat(&all);
    if units.len() == 1 {
        return Ok(Summary { mean, ci_low: mean, ci_high: mean });
    }
    let identical = units.iter().all(|u| *u == units[0]);
    let (lo, hi) = if identical { (mean, mean) } else { bootstrap_ci_with(units.len(), stat, n_resamples, confidence, rng)? };
    Ok(Summary { mean, ci_low: lo.min(mean), ci_high: hi.max(mean) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub observable: String,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_samples: usize,
    pub n_replicas: usize,
    pub n_diag_eff: u64,
}

/// `Λ = max_occupied dt²·nnz·‖col‖² + 1/4`; returns `Λ · 2 N_tot / (N^diag)²`.
pub fn error_bound(pop: &Population, oracle: &dyn ColumnOracle, dt: f64) -> f64 {
    let max = pop
        .locations()
        .map(|&l| {
            let c = oracle.column(l);
            dt * dt * c.nnz() as f64 * c.norm_sqr()
        })
        .fold(0.0, f64::max);
    let lambda = max + 0.25;
    let nd = pop.n_diag_initial() as f64;
    lambda * 2.0 * pop.n_tot() as f64 / (nd * nd)
}

/// `‖N/N^diag − vec(ρ)‖²` over all locations.
pub fn squared_error(pop: &Population, rho: &DenseState) -> f64 {
    let nd = pop.n_diag_initial() as f64;
    let mut total: f64 = rho.vec.iter().map(|z| z.norm_sqr()).sum();
    for &(l, g) in pop.entries() {
        let exact = rho.vec[l.vec_index(rho.n)];
        total += (g.to_c64() / nd - exact).norm_sqr() - exact.norm_sqr();
    }
    total.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::{LindbladChannel, Liouvillian};
    use crate::operators::{OperatorModel, OperatorTerm, SingleQubitMatrix, ONE};
    use crate::walkers::GaussInt;
    use rand::SeedableRng;

    fn pop(n_diag: u64, e: &[((u64, u64), i64)]) -> Population {
        Population::from_entries(
            1,
            n_diag,
            e.iter().map(|&((i, j), a)| (Location::new(i, j), GaussInt::new(a, 0))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn estimate_examples() {
        let p = pop(1000, &[((0, 0), 1000)]);
        let f = ObservableSpec::fidelity("f", vec![(0, ONE)]).unwrap();
        assert_eq!(estimate(&[&p], &f, 1000, 1).unwrap(), ONE);
        assert_eq!(estimate(&[&p], &ObservableSpec::Trace, 1000, 1).unwrap(), ONE);
        let a = pop(500, &[((0, 0), 600)]);
        let b = pop(500, &[((0, 0), 500)]);
        let t = estimate(&[&a, &b], &ObservableSpec::Trace, 500, 2).unwrap();
        assert!((t.re - 1.1).abs() < 1e-15);
        assert!(estimate(&[&a, &b, &p], &ObservableSpec::Trace, 500, 2).is_err());
        assert!(estimate(&[&a, &p], &ObservableSpec::Trace, 500, 1).is_err());
    }

    #[test]
    fn replica_aggregate_is_mean_of_replica_estimates() {
        let pops: Vec<Population> = (0..6).map(|k| pop(100, &[((0, 0), 90 + 3 * k), ((1, 0), k - 2)])).collect();
        let refs: Vec<&Population> = pops.iter().collect();
        for spec in [ObservableSpec::Trace, ObservableSpec::diagonal(0)] {
            let agg = estimate(&refs, &spec, 100, 3).unwrap();
            let mean: C64 = refs.iter().map(|p| estimate(&[p], &spec, 100, 1).unwrap()).sum::<C64>() / 6.0;
            assert!((agg - mean).norm() < 1e-15);
        }
    }

    #[test]
    fn bootstrap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(bootstrap_ci(&[0.1; 5], 100, 0.95, &mut rng).unwrap(), (0.1, 0.1));
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 10_000, 0.95, &mut rng).unwrap();
        assert!(lo >= 0.0 && hi <= 1.0 && lo <= 0.5 && hi >= 0.5);
        let vals: Vec<f64> = (0..100).map(|k| (k as f64 * 0.77).sin()).collect();
        let a = bootstrap_ci(&vals, 500, 0.95, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = bootstrap_ci(&vals, 500, 0.95, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(bootstrap_ci(&[1.0], 10, 0.95, &mut rng), Err(Error::DegenerateCi(1))));
    }

    #[test]
    fn summary_contains_mean() {
        let spec = ObservableSpec::diagonal(0);
        let units: Vec<UnitValue> =
            [0.9, 1.1, 0.95, 1.2].iter().map(|&v| UnitValue { value: C64::new(v, 0.0), trace: 1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = summarize(&spec, &units, false, 2000, 0.95, &mut rng).unwrap();
        assert!((s.mean - 1.0375).abs() < 1e-12);
        assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        let r = summarize(&spec, &units, true, 2000, 0.95, &mut rng).unwrap();
        assert!((r.mean - 1.0375).abs() < 1e-12);
    }

    #[test]
    fn error_bound_examples() {
        let gamma = 0.7;
        let dt = 0.05;
        let l = OperatorModel::new(1, vec![OperatorTerm::real(1.0, [(0, SingleQubitMatrix::sigma_minus())])]).unwrap();
        let gen = Liouvillian::new(OperatorModel::zero(1), vec![LindbladChannel::new(gamma, l).unwrap()]).unwrap();
        assert_eq!(error_bound(&Population::empty(1, 10), &gen, dt), 0.0);
        let p = pop(1000, &[((1, 1), 800)]);
        let lambda = 4.0 * gamma * gamma * dt * dt + 0.25;
        let expect = lambda * 2.0 * 800.0 / 1e6;
        assert!((error_bound(&p, &gen, dt) - expect).abs() < 1e-15);
        let q = pop(2000, &[((1, 1), 800)]);
        assert!(error_bound(&q, &gen, dt) < error_bound(&p, &gen, dt));
    }

    #[test]
    fn squared_error_matches_direct_sum() {
        let rho = DenseState::from_pure(1, &[(0, C64::new(0.6, 0.0)), (1, C64::new(0.8, 0.0))]).unwrap();
        let p = pop(100, &[((0, 0), 30), ((1, 0), 50)]);
        let direct = (0.3f64 - 0.36).powi(2) + (0.5f64 - 0.48).powi(2) + 0.48f64.powi(2) + 0.64f64.powi(2);
        assert!((squared_error(&p, &rho) - direct).abs() < 1e-14);
    }
}
