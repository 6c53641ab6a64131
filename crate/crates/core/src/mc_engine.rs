//! Kinetic Monte Carlo for single-site spin dynamics on finite windows
//! (direct-method Gillespie with a Fenwick tree of site rates), generic
//! finite-chain path sampling, and Girsanov log-weights.
//!
//! Randomness comes from ChaCha8 streams. Replica `r` of a run with base
//! seed `b` uses the stream seeded by `replica_seed(b, r)`, a SplitMix64
//! mix of both, so results do not depend on thread scheduling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_engine::{Environment, GeneratorMatrix, Schedule};
use crate::geometry::{blow_up, Region, Site};
use crate::profile::Profile;
use crate::rates::{ising, Family, GlauberIsing, Overlay, RateFamily};

/// One SplitMix64 output step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replica_seed(base: u64, replica: u64) -> u64 {
    splitmix64(base ^ splitmix64(replica))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Binary indexed tree over nonnegative weights.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0.0; n + 1],
            values: vec![0.0; n],
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        let delta = v - self.values[i];
        self.values[i] = v;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let mut k = i + 1;
            while k <= n {
                self.tree[k] += self.values[i];
                k += k & k.wrapping_neg();
            }
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.values.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Index `i` with prefix(i) ≤ target < prefix(i+1), skipping zero weights.
    fn find(&self, mut target: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        // rounding can land on a zero-rate site; move to the nearest positive one
        let mut i = pos.min(n - 1);
        while i > 0 && self.values[i] <= 0.0 {
            i -= 1;
        }
        while i + 1 < n && self.values[i] <= 0.0 {
            i += 1;
        }
        i
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub region: Vec<Site>,
    pub xi: Vec<u8>,
}

/// A càdlàg path of the window configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Window sites, in order.
    pub sites: Vec<Site>,
    pub initial: Vec<u8>,
    pub events: Vec<Event>,
    pub t_end: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> Vec<u8> {
        let index: HashMap<Site, usize> = self.sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut v = self.initial.clone();
        for e in &self.events {
            for (s, x) in e.region.iter().zip(&e.xi) {
                v[index[s]] = *x;
            }
        }
        v
    }
}

/// Gillespie simulator state for a single-site family on a window.
pub struct Simulator<'a> {
    family: &'a Family<f64>,
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    env: &'a Environment,
    state: Vec<u8>,
    active: Vec<bool>,
    tree: Fenwick,
    glauber: Option<GlauberCache>,
    updates: usize,
}

struct GlauberCache {
    /// In-window neighbors with their coupling.
    neighbors: Vec<Vec<(usize, f64)>>,
    fields: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(family: &'a Family<f64>, window: &Region, env: &'a Environment, initial: &[u8]) -> Result<Self> {
        if !family.single_site() {
            return Err(Error::Unsupported("Monte Carlo supports single-site families".into()));
        }
        let sites: Vec<Site> = window.iter().copied().collect();
        if initial.len() != sites.len() {
            return Err(Error::Precondition(
                "initial state length differs from the window".into(),
            ));
        }
        let index: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let glauber = family.as_glauber().map(|g| {
            let offsets = g.neighbor_offsets();
            let neighbors = sites
                .iter()
                .map(|x| {
                    offsets
                        .iter()
                        .filter_map(|(o, j)| {
                            index
                                .get(&Site::d2(x.coords[0] + o[0], x.coords[1] + o[1]))
                                .map(|k| (*k, *j))
                        })
                        .collect()
                })
                .collect();
            GlauberCache {
                neighbors,
                fields: vec![0.0; sites.len()],
            }
        });
        let mut sim = Simulator {
            family,
            tree: Fenwick::new(sites.len()),
            active: vec![true; sites.len()],
            state: initial.to_vec(),
            sites,
            index,
            env,
            glauber,
            updates: 0,
        };
        sim.recompute_fields();
        sim.refresh_all();
        Ok(sim)
    }

    fn lookup(&self) -> Overlay<'_, Environment> {
        Overlay {
            index: &self.index,
            values: &self.state,
            fallback: self.env,
        }
    }

    fn glauber_family(&self) -> Option<&GlauberIsing<f64>> {
        self.family.as_glauber()
    }

    fn recompute_fields(&mut self) {
        if let Some(g) = self.glauber_family().copied() {
            let fields: Vec<f64> = {
                let look = self.lookup();
                self.sites.iter().map(|x| g.local_field(&look, x)).collect()
            };
            if let Some(c) = self.glauber.as_mut() {
                c.fields = fields;
            }
        }
    }

    /// Largest deviation between cached and freshly computed local fields.
    pub fn field_cache_error(&self) -> f64 {
        match (self.glauber_family(), &self.glauber) {
            (Some(g), Some(c)) => {
                let look = self.lookup();
                self.sites
                    .iter()
                    .zip(&c.fields)
                    .map(|(x, h)| (g.local_field(&look, x) - h).abs())
                    .fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }

    fn site_rate(&self, i: usize) -> f64 {
        if !self.active[i] {
            return 0.0;
        }
        if let Some(c) = &self.glauber {
            return GlauberIsing::flip_rate_from_field(self.state[i], c.fields[i]);
        }
        let delta = Region::singleton(self.family.dim(), self.sites[i]);
        let look = self.lookup();
        (0..self.family.q())
            .filter(|v| *v != self.state[i])
            .map(|v| self.family.rate(&delta, &look, &[v]))
            .sum()
    }

    fn refresh(&mut self, i: usize) {
        let r = self.site_rate(i);
        self.tree.set(i, r);
    }

    fn refresh_all(&mut self) {
        for i in 0..self.sites.len() {
            let r = self.site_rate(i);
            self.tree.values[i] = r;
        }
        self.tree.rebuild();
    }

    pub fn set_active(&mut self, active: &Region) {
        for (i, s) in self.sites.iter().enumerate() {
            self.active[i] = active.contains(s);
        }
        self.refresh_all();
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    fn choose_target<R: Rng>(&self, i: usize, rng: &mut R) -> u8 {
        let q = self.family.q();
        if q == 2 {
            return 1 - self.state[i];
        }
        let delta = Region::singleton(self.family.dim(), self.sites[i]);
        let look = self.lookup();
        let rates: Vec<(u8, f64)> = (0..q)
            .filter(|v| *v != self.state[i])
            .map(|v| (v, self.family.rate(&delta, &look, &[v])))
            .collect();
        let total: f64 = rates.iter().map(|r| r.1).sum();
        let mut u = rng.gen::<f64>() * total;
        for (v, r) in &rates {
            if u < *r {
                return *v;
            }
            u -= r;
        }
        rates.last().expect("q >= 2").0
    }

    fn apply(&mut self, i: usize, v: u8) {
        let old = self.state[i];
        self.state[i] = v;
        let mut touched = vec![i];
        if let Some(c) = self.glauber.as_mut() {
            let shift = ising(v) - ising(old);
            for (k, j) in &c.neighbors[i] {
                c.fields[*k] += j * shift;
                touched.push(*k);
            }
        } else {
            let radius = self.family.dependency_radius();
            if radius > 0 {
                let x = self.sites[i];
                touched.extend(
                    self.sites
                        .iter()
                        .enumerate()
                        .filter(|(_, y)| y.l1(&x) <= radius)
                        .map(|(k, _)| k),
                );
            }
        }
        for k in touched {
            self.refresh(k);
        }
        self.updates += 1;
        if self.updates.is_multiple_of(4096) {
            self.tree.rebuild();
        }
    }

    /// Runs until `t_end`, appending events.
    fn run_until<R: Rng>(&mut self, mut now: f64, t_end: f64, rng: &mut R, events: &mut Vec<Event>) -> f64 {
        loop {
            let total = self.total_rate();
            if total <= 0.0 {
                return t_end;
            }
            let wait = -(1.0 - rng.gen::<f64>()).ln() / total;
            if now + wait > t_end {
                return t_end;
            }
            now += wait;
            let i = self.tree.find(rng.gen::<f64>() * total);
            let v = self.choose_target(i, rng);
            self.apply(i, v);
            events.push(Event {
                time: now,
                region: vec![self.sites[i]],
                xi: vec![v],
            });
        }
    }
}

/// Gillespie trajectory of the dynamics with every window site active.
pub fn simulate(
    family: &Family<f64>,
    window: &Region,
    env: &Environment,
    eta0: &[u8],
    t: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut sim = Simulator::new(family, window, env, eta0)?;
    let mut rng = rng_for(seed);
    let mut events = Vec::new();
    sim.run_until(0.0, t, &mut rng, &mut events);
    Ok(Trajectory {
        sites: sim.sites.clone(),
        initial: eta0.to_vec(),
        events,
        t_end: t,
    })
}

/// As [`simulate`], with active region `Λ^{h(s)} ∩ window` re-evaluated at
/// the integer crossings of `h`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_time_dependent(
    family: &Family<f64>,
    window: &Region,
    lam: &Region,
    schedule: &Schedule,
    env: &Environment,
    eta0: &[u8],
    t: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut sim = Simulator::new(family, window, env, eta0)?;
    let mut rng = rng_for(seed);
    let mut events = Vec::new();
    for (s0, s1, r) in schedule.segments(t) {
        sim.set_active(&blow_up(lam, r as f64).intersection(window));
        sim.run_until(s0, s1, &mut rng, &mut events);
    }
    Ok(Trajectory {
        sites: sim.sites.clone(),
        initial: eta0.to_vec(),
        events,
        t_end: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub seed: u64,
}

impl Estimate {
    /// Mean and standard error of the mean of `samples`.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            replicas: n,
            seed,
        }
    }
}

/// Evaluates `f(seed_r, r)` for `r < replicas` in parallel, returned in replica order.
pub fn run_replicas<R: Send>(replicas: usize, base_seed: u64, f: impl Fn(u64, usize) -> R + Sync) -> Vec<R> {
    (0..replicas)
        .into_par_iter()
        .map(|r| f(replica_seed(base_seed, r as u64), r))
        .collect()
}

/// Largest `|Ω_sub|` for marginal estimation.
pub const MARGINAL_CELLS_MAX: usize = 256;

/// Empirical law of the final configuration on `sub`, cells indexed
/// little-endian in the order of `sub`, with binomial standard errors.
#[allow(clippy::too_many_arguments)]
pub fn estimate_marginal(
    family: &Family<f64>,
    window: &Region,
    schedule: Option<(&Region, &Schedule)>,
    env: &Environment,
    eta0: &[u8],
    t: f64,
    sub: &Region,
    replicas: usize,
    base_seed: u64,
) -> Result<Vec<Estimate>> {
    let q = family.q() as usize;
    let cells = q.checked_pow(sub.len() as u32).unwrap_or(usize::MAX);
    if cells > MARGINAL_CELLS_MAX {
        return Err(Error::budget(
            "marginal cells",
            cells as u128,
            MARGINAL_CELLS_MAX as u128,
        ));
    }
    if replicas == 0 {
        return Err(Error::Precondition("need at least one replica".into()));
    }
    let sites: Vec<Site> = window.iter().copied().collect();
    let pos: Vec<usize> = sub
        .iter()
        .map(|s| {
            sites
                .iter()
                .position(|u| u == s)
                .ok_or_else(|| Error::Precondition(format!("site {s} outside the window")))
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<Result<usize>> = run_replicas(replicas, base_seed, |seed, _| {
        let traj = match schedule {
            Some((lam, sched)) => simulate_time_dependent(family, window, lam, sched, env, eta0, t, seed)?,
            None => simulate(family, window, env, eta0, t, seed)?,
        };
        let fin = traj.final_state();
        Ok(pos.iter().rev().fold(0usize, |acc, p| acc * q + fin[*p] as usize))
    });
    let mut counts = vec![0usize; cells];
    for o in outcomes {
        counts[o?] += 1;
    }
    let n = replicas as f64;
    Ok(counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            Estimate {
                value: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                replicas,
                seed: base_seed,
            }
        })
        .collect())
}

/// Path of a finite chain: initial state, jumps `(time, new state)`, horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainPath {
    pub initial: usize,
    pub jumps: Vec<(f64, usize)>,
    pub t_end: f64,
}

/// Rates of a time-inhomogeneous finite chain, piecewise constant in time.
pub trait TimeDependentRates {
    fn rate(&self, s: f64, x: usize, y: usize) -> f64;
    fn exit_rate(&self, s: f64, x: usize) -> f64;
    /// `∫_a^b exit_rate(s, x) ds`, exact.
    fn integrated_exit(&self, x: usize, a: f64, b: f64) -> f64;
}

impl TimeDependentRates for GeneratorMatrix<f64> {
    fn rate(&self, _s: f64, x: usize, y: usize) -> f64 {
        GeneratorMatrix::rate(self, x, y)
    }
    fn exit_rate(&self, _s: f64, x: usize) -> f64 {
        self.exit_rates()[x]
    }
    fn integrated_exit(&self, x: usize, a: f64, b: f64) -> f64 {
        self.exit_rates()[x] * (b - a)
    }
}

/// The chain with all rates multiplied by `λ(s)`.
pub struct SpedUp<'a> {
    pub gen: &'a GeneratorMatrix<f64>,
    pub lam: &'a Profile<f64>,
}

impl TimeDependentRates for SpedUp<'_> {
    fn rate(&self, s: f64, x: usize, y: usize) -> f64 {
        self.lam.eval(s) * self.gen.rate(x, y)
    }
    fn exit_rate(&self, s: f64, x: usize) -> f64 {
        self.lam.eval(s) * self.gen.exit_rates()[x]
    }
    fn integrated_exit(&self, x: usize, a: f64, b: f64) -> f64 {
        self.gen.exit_rates()[x] * self.lam.integral(a, b)
    }
}

/// Gillespie path of a homogeneous finite chain.
pub fn simulate_chain<R: Rng>(gen: &GeneratorMatrix<f64>, x0: usize, t: f64, rng: &mut R) -> ChainPath {
    let mut x = x0;
    let mut now = 0.0;
    let mut jumps = Vec::new();
    loop {
        let total = gen.exit_rates()[x];
        if total <= 0.0 {
            break;
        }
        now += -(1.0 - rng.gen::<f64>()).ln() / total;
        if now > t {
            break;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut next = None;
        for (y, r) in gen.row(x) {
            if u < r {
                next = Some(y);
                break;
            }
            u -= r;
        }
        let y = next.unwrap_or_else(|| gen.row(x).last().expect("positive exit rate").0);
        jumps.push((now, y));
        x = y;
    }
    ChainPath {
        initial: x0,
        jumps,
        t_end: t,
    }
}

/// `log dQ/dQ̂` along `path`:
/// `-∫_0^t (R_s(X_s) - R̂_s(X_s)) ds + Σ_jumps log(L_s(X_{s-}, X_s) / L̂_s(X_{s-}, X_s))`.
///
/// Returns `-∞` if `Q` cannot make one of the jumps, and a support
/// violation if `Q̂` cannot.
pub fn girsanov_weight(path: &ChainPath, q: &dyn TimeDependentRates, q_hat: &dyn TimeDependentRates) -> Result<f64> {
    let mut x = path.initial;
    let mut prev = 0.0;
    let mut log_w = 0.0;
    for &(s, y) in &path.jumps {
        log_w -= q.integrated_exit(x, prev, s) - q_hat.integrated_exit(x, prev, s);
        let num = q.rate(s, x, y);
        let den = q_hat.rate(s, x, y);
        if den <= 0.0 {
            return Err(Error::SupportViolation(format!(
                "jump {x} -> {y} at {s} has zero reference rate"
            )));
        }
        if num <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log_w += (num / den).ln();
        x = y;
        prev = s;
    }
    log_w -= q.integrated_exit(x, prev, path.t_end) - q_hat.integrated_exit(x, prev, path.t_end);
    Ok(log_w)
}
