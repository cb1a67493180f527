//! Signed-walker populations on vectorized density matrices.
//!
//! A location's walkers are stored as one net Gaussian integer `a + ib`:
//! `|a|` walkers of sign `sgn(a)` and `|b|` walkers of sign `i·sgn(b)`.
//! Opposite signs at one location therefore annihilate on insertion.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, AddAssign, Mul, Neg};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::{ColumnOracle, Location};
use crate::operators::C64;
use crate::rng::{Domain, StreamFactory};

/// Default initiator threshold as a fraction of `N^diag`.
pub const DEFAULT_INITIATOR_XI: f64 = 1e-3;

const PARALLEL_MIN_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GaussInt {
    pub re: i64,
    pub im: i64,
}

impl GaussInt {
    pub const ZERO: GaussInt = GaussInt { re: 0, im: 0 };

    pub const fn new(re: i64, im: i64) -> Self {
        Self { re, im }
    }

    pub fn is_zero(&self) -> bool {
        self.re == 0 && self.im == 0
    }

    /// Walker count `|a| + |b|`.
    pub fn magnitude(&self) -> u64 {
        self.re.unsigned_abs() + self.im.unsigned_abs()
    }

    pub fn to_c64(self) -> C64 {
        C64::new(self.re as f64, self.im as f64)
    }

    fn scaled(self, k: i64) -> Self {
        Self { re: self.re * k, im: self.im * k }
    }
}

impl Add for GaussInt {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self { re: self.re + rhs.re, im: self.im + rhs.im }
    }
}

impl AddAssign for GaussInt {
    fn add_assign(&mut self, rhs: Self) {
        self.re += rhs.re;
        self.im += rhs.im;
    }
}

impl Neg for GaussInt {
    type Output = Self;
    fn neg(self) -> Self {
        Self { re: -self.re, im: -self.im }
    }
}

impl Mul for GaussInt {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re * rhs.re - self.im * rhs.im,
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

/// Sorts by location, sums duplicates and drops zeros.
fn canonicalize(v: &mut Vec<(Location, GaussInt)>) {
    if v.len() > 4 * PARALLEL_MIN_LEN {
        v.par_sort_unstable_by_key(|e| e.0);
    } else {
        v.sort_unstable_by_key(|e| e.0);
    }
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
    v.retain(|e| !e.1.is_zero());
}

/// Sparse walker population, sorted by location, with no zero entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    n: usize,
    n_diag_initial: u64,
    entries: Vec<(Location, GaussInt)>,
}

impl Population {
    pub fn empty(n: usize, n_diag_initial: u64) -> Self {
        Self { n, n_diag_initial, entries: Vec::new() }
    }

    pub fn from_entries(n: usize, n_diag_initial: u64, mut entries: Vec<(Location, GaussInt)>) -> Result<Self> {
        let d = 1u64 << n;
        if let Some((l, _)) = entries.iter().find(|(l, _)| l.row >= d || l.col >= d) {
            return Err(Error::Model(format!("location ({}, {}) out of range for n = {n}", l.row, l.col)));
        }
        canonicalize(&mut entries);
        Ok(Self { n, n_diag_initial, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_diag_initial(&self) -> u64 {
        self.n_diag_initial
    }

    pub fn entries(&self) -> &[(Location, GaussInt)] {
        &self.entries
    }

    pub fn locations(&self) -> impl Iterator<Item = &Location> {
        self.entries.iter().map(|e| &e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, loc: Location) -> GaussInt {
        self.entries
            .binary_search_by(|e| e.0.cmp(&loc))
            .map(|k| self.entries[k].1)
            .unwrap_or(GaussInt::ZERO)
    }

    pub fn contains(&self, loc: Location) -> bool {
        self.entries.binary_search_by(|e| e.0.cmp(&loc)).is_ok()
    }

    pub fn n_tot(&self) -> u64 {
        self.entries.iter().map(|e| e.1.magnitude()).sum()
    }

    /// Net count summed over diagonal locations.
    pub fn n_diag(&self) -> GaussInt {
        self.entries
            .iter()
            .filter(|e| e.0.is_diagonal())
            .fold(GaussInt::ZERO, |acc, e| acc + e.1)
    }
}

/// Walkers produced by one spawn call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpawnBuffer {
    entries: Vec<(Location, GaussInt)>,
}

impl SpawnBuffer {
    pub fn entries(&self) -> &[(Location, GaussInt)] {
        &self.entries
    }

    pub fn get(&self, loc: Location) -> GaussInt {
        self.entries
            .binary_search_by(|e| e.0.cmp(&loc))
            .map(|k| self.entries[k].1)
            .unwrap_or(GaussInt::ZERO)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub t: f64,
    pub n_tot: u64,
    pub re_ndiag: i64,
    pub im_ndiag: i64,
    pub theta: f64,
    /// Set when `re_ndiag = 0` and `theta` is the `±π/2` convention.
    pub theta_degenerate: bool,
    pub dim_occupied: usize,
}

/// Rounds `x` to an integer with expectation `x`.
fn stochastic_round(x: f64, rng: &mut ChaCha8Rng) -> i64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        return nearest as i64;
    }
    let fl = x.floor();
    let frac = x - fl;
    fl as i64 + i64::from(rng.random::<f64>() < frac)
}

/// Distributes `N^diag·|ψ⟩⟨ψ|` onto walkers.
pub fn initialize(n: usize, psi: &[(u64, C64)], n_diag: u64, factory: &StreamFactory) -> Result<Population> {
    if n_diag == 0 {
        return Err(Error::Config("N_diag must be at least 1".into()));
    }
    let norm: f64 = psi.iter().map(|(_, a)| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("initial state has squared norm {norm}")));
    }
    let scale = n_diag as f64;
    let mut entries = Vec::with_capacity(psi.len() * psi.len());
    for &(i, ai) in psi {
        for &(j, aj) in psi {
            let v = ai * aj.conj() * scale;
            let mut rng = factory.stream(Domain::Initialize, &[i, j]);
            let re = stochastic_round(v.re, &mut rng);
            let im = stochastic_round(v.im, &mut rng);
            entries.push((Location::new(i, j), GaussInt::new(re, im)));
        }
    }
    Population::from_entries(n, n_diag, entries)
}

/// Identifies one spawn call's random streams.
#[derive(Debug, Clone, Copy)]
pub struct SpawnContext<'a> {
    pub factory: &'a StreamFactory,
    pub step: u64,
    pub tag: u64,
}

struct Channel {
    target: Location,
    prob: f64,
    unit: GaussInt,
}

/// Multinomial split of `count` spawns over `channels` (weights sum to 1).
fn distribute(count: u64, channels: &[Channel], rng: &mut ChaCha8Rng, out: &mut Vec<(Location, GaussInt, u64)>) {
    if count == 0 {
        return;
    }
    if (count as usize) <= channels.len() {
        let start = out.len();
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = channels.len() - 1;
            for (c, ch) in channels.iter().enumerate() {
                acc += ch.prob;
                if u < acc {
                    k = c;
                    break;
                }
            }
            match out[start..].iter_mut().find(|e| e.2 == k as u64) {
                Some(e) => e.1 += channels[k].unit,
                None => out.push((channels[k].target, channels[k].unit, k as u64)),
            }
        }
        return;
    }
    let mut remaining = count;
    let mut mass = 1.0;
    for (k, ch) in channels.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let x = if k + 1 == channels.len() {
            remaining
        } else {
            let p = (ch.prob / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, p).expect("valid probability").sample(rng)
        };
        if x > 0 {
            out.push((ch.target, ch.unit.scaled(x as i64), k as u64));
        }
        remaining -= x;
        mass -= ch.prob;
    }
}

fn sign_unit(x: f64) -> i64 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

#[allow(clippy::too_many_arguments)]
fn spawn_from(
    loc: Location,
    count: GaussInt,
    occupancy: &Population,
    oracle: &dyn ColumnOracle,
    dt: f64,
    weight: f64,
    xi: f64,
    ctx: SpawnContext<'_>,
) -> Result<Vec<(Location, GaussInt)>> {
    let column = oracle.column(loc);
    let w_u = column.weight();
    let p = weight.abs() * dt * w_u;
    if p > 1.0 + 1e-12 {
        return Err(Error::TimeStepTooLarge { location: loc, probability: p });
    }
    if p <= 0.0 {
        return Ok(Vec::new());
    }
    let p = p.min(1.0);
    let w_sign = sign_unit(weight);
    let mut channels = Vec::with_capacity(2 * column.entries.len());
    for &(target, a) in &column.entries {
        if a.re != 0.0 {
            channels.push(Channel { target, prob: a.re.abs() / w_u, unit: GaussInt::new(sign_unit(a.re) * w_sign, 0) });
        }
        if a.im != 0.0 {
            channels.push(Channel { target, prob: a.im.abs() / w_u, unit: GaussInt::new(0, sign_unit(a.im) * w_sign) });
        }
    }
    let initiator = (count.magnitude() as f64) >= xi * occupancy.n_diag_initial() as f64;

    let mut raw: Vec<(Location, GaussInt, u64)> = Vec::new();
    let mut out = Vec::new();
    let parents = [
        (count.re.unsigned_abs(), GaussInt::new(sign_unit(count.re as f64), 0), 0u64),
        (count.im.unsigned_abs(), GaussInt::new(0, sign_unit(count.im as f64)), 1u64),
    ];
    for (m, parent_unit, subpop) in parents {
        if m == 0 {
            continue;
        }
        let mut rng = ctx.factory.stream(Domain::Spawn, &[ctx.step, ctx.tag, loc.row, loc.col, subpop]);
        let nsp = Binomial::new(m, p).expect("valid probability").sample(&mut rng);
        raw.clear();
        distribute(nsp, &channels, &mut rng, &mut raw);
        for &(target, g, _) in &raw {
            if !initiator && target != loc && !occupancy.contains(target) {
                continue;
            }
            out.push((target, parent_unit * g));
        }
    }
    Ok(out)
}

/// One stochastic application of `weight·dt·𝓛` to `pop`.
///
/// Spawns from parents below the initiator threshold onto locations not
/// occupied in `occupancy` are discarded.
#[allow(clippy::too_many_arguments)]
pub fn spawn_with_occupancy(
    pop: &Population,
    occupancy: &Population,
    oracle: &dyn ColumnOracle,
    dt: f64,
    weight: f64,
    xi: f64,
    ctx: SpawnContext<'_>,
) -> Result<SpawnBuffer> {
    if oracle.n() != pop.n() {
        return Err(Error::Mismatch(format!("oracle has n = {}, population has n = {}", oracle.n(), pop.n())));
    }
    if dt == 0.0 || weight == 0.0 || pop.is_empty() {
        return Ok(SpawnBuffer::default());
    }
    let parts: Vec<Vec<(Location, GaussInt)>> = pop
        .entries
        .par_iter()
        .with_min_len(PARALLEL_MIN_LEN)
        .map(|&(loc, count)| spawn_from(loc, count, occupancy, oracle, dt, weight, xi, ctx))
        .collect::<Result<_>>()?;
    let mut entries: Vec<(Location, GaussInt)> = parts.into_iter().flatten().collect();
    canonicalize(&mut entries);
    Ok(SpawnBuffer { entries })
}

pub fn spawn(
    pop: &Population,
    oracle: &dyn ColumnOracle,
    dt: f64,
    weight: f64,
    xi: f64,
    ctx: SpawnContext<'_>,
) -> Result<SpawnBuffer> {
    spawn_with_occupancy(pop, pop, oracle, dt, weight, xi, ctx)
}

/// Adds spawned walkers into `pop`; opposite signs annihilate.
pub fn merge(pop: &Population, buffers: &[&SpawnBuffer]) -> Population {
    let extra: usize = buffers.iter().map(|b| b.entries.len()).sum();
    let mut entries = Vec::with_capacity(pop.entries.len() + extra);
    entries.extend_from_slice(&pop.entries);
    for b in buffers {
        entries.extend_from_slice(&b.entries);
    }
    canonicalize(&mut entries);
    Population { n: pop.n, n_diag_initial: pop.n_diag_initial, entries }
}

pub fn stats(pop: &Population, t: f64) -> PopulationStats {
    let nd = pop.n_diag();
    let (theta, degenerate) = if nd.re != 0 {
        ((nd.im as f64 / nd.re as f64).atan(), false)
    } else {
        (FRAC_PI_2 * (nd.im.signum() as f64), true)
    };
    PopulationStats {
        t,
        n_tot: pop.n_tot(),
        re_ndiag: nd.re,
        im_ndiag: nd.im,
        theta,
        theta_degenerate: degenerate,
        dim_occupied: pop.len(),
    }
}

/// `‖ρ − ρ†‖_F` of `ρ = Σ_pops N / norm`.
pub fn anti_hermiticity(pops: &[&Population], norm: f64) -> f64 {
    let mut all: Vec<(Location, GaussInt)> = pops.iter().flat_map(|p| p.entries.iter().copied()).collect();
    canonicalize(&mut all);
    let get = |loc: Location| {
        all.binary_search_by(|e| e.0.cmp(&loc))
            .map(|k| all[k].1.to_c64())
            .unwrap_or_default()
    };
    let mut sum = 0.0;
    for &(loc, g) in &all {
        let d = g.to_c64() - get(loc.transposed()).conj();
        sum += d.norm_sqr();
    }
    // Locations whose transpose is occupied but which are empty themselves.
    for &(loc, g) in &all {
        let tl = loc.transposed();
        if tl != loc && get(tl) == C64::default() {
            sum += g.to_c64().norm_sqr();
        }
    }
    sum.sqrt() / norm
}
