//! Exact computations for finite-volume restrictions: generators over an
//! enumerated state space, uniformization, time-dependent active regions,
//! marginals, total variation, stationary laws and correlations.
//!
//! States are indexed little-endian in base `q`: the spin at the `i`-th
//! site of the state space (sites in lexicographic order) is digit `i` of
//! the index. Sites outside the state space are read from an
//! [`Environment`].

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gamma_flow::LocalObservable;
use crate::geometry::{blow_up, Region, Site};
use crate::rates::{BoundaryRule, Overlay, RateFamily, SpinLookup};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Largest admissible state space, `2^20` states.
pub const STATE_BUDGET: u128 = 1 << 20;

/// Above this many states the stationary law is found by power iteration.
pub const DENSE_STATIONARY_MAX: usize = 2048;

/// Frozen spins outside the state space: a boundary rule with optional
/// per-site overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Environment {
    pub rule: Option<BoundaryRule>,
    pub overrides: HashMap<Site, u8>,
}

impl Environment {
    pub fn new(rule: BoundaryRule) -> Self {
        Environment {
            rule: Some(rule),
            overrides: HashMap::new(),
        }
    }

    pub fn with_override(mut self, s: Site, v: u8) -> Self {
        self.overrides.insert(s, v);
        self
    }
}

impl SpinLookup for Environment {
    fn spin(&self, s: &Site) -> u8 {
        if let Some(v) = self.overrides.get(s) {
            return *v;
        }
        self.rule.map_or(0, |r| r.value(s))
    }
}

/// Enumeration of `Ω_region` completed by an environment.
#[derive(Debug, Clone)]
pub struct StateSpace {
    region: Region,
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    q: u8,
    size: usize,
    env: Environment,
}

impl StateSpace {
    pub fn new(region: Region, q: u8, env: Environment) -> Result<Self> {
        if q < 2 {
            return Err(Error::Precondition("q must be at least 2".into()));
        }
        let required = (q as u128).checked_pow(region.len() as u32).unwrap_or(u128::MAX);
        if required > STATE_BUDGET {
            return Err(Error::budget("state space", required, STATE_BUDGET));
        }
        let sites: Vec<Site> = region.iter().copied().collect();
        let index = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(StateSpace {
            region,
            sites,
            index,
            q,
            size: required as usize,
            env,
        })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn position(&self, s: &Site) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn decode_into(&self, mut idx: usize, out: &mut [u8]) {
        for v in out.iter_mut() {
            *v = (idx % self.q as usize) as u8;
            idx /= self.q as usize;
        }
    }

    pub fn decode(&self, idx: usize) -> Vec<u8> {
        let mut v = vec![0u8; self.sites.len()];
        self.decode_into(idx, &mut v);
        v
    }

    pub fn encode(&self, vals: &[u8]) -> usize {
        vals.iter()
            .rev()
            .fold(0usize, |acc, v| acc * self.q as usize + *v as usize)
    }

    /// State whose spins follow `lookup` on the state-space sites.
    pub fn state_from(&self, lookup: &dyn SpinLookup) -> usize {
        let vals: Vec<u8> = self.sites.iter().map(|s| lookup.spin(s)).collect();
        self.encode(&vals)
    }

    pub fn spin_at(&self, idx: usize, pos: usize) -> u8 {
        ((idx / (self.q as usize).pow(pos as u32)) % self.q as usize) as u8
    }

    pub fn lookup<'a>(&'a self, vals: &'a [u8]) -> Overlay<'a, Environment> {
        Overlay {
            index: &self.index,
            values: vals,
            fallback: &self.env,
        }
    }
}

/// Sparse CTMC generator; off-diagonal entries remember the update region
/// that produced them so restrictions are obtained by filtering.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix<T> {
    rows: Vec<Vec<(usize, T, u32)>>,
    regions: Vec<Region>,
    exit: Vec<T>,
    max_total_rate: T,
}

impl<T: Real> GeneratorMatrix<T> {
    /// Generator from explicit off-diagonal rates (a single anonymous region).
    pub fn from_rates(n: usize, entries: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for (i, j, r) in entries {
            if i >= n || j >= n {
                return Err(Error::Precondition("generator entry out of range".into()));
            }
            if r < T::zero() {
                return Err(Error::Precondition("negative rate".into()));
            }
            if i != j && r > T::zero() {
                rows[i].push((j, r, 0u32));
            }
        }
        Ok(Self::assemble(rows, vec![Region::empty(1)]))
    }

    fn assemble(rows: Vec<Vec<(usize, T, u32)>>, regions: Vec<Region>) -> Self {
        let exit: Vec<T> = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        let max_total_rate = exit.iter().copied().fold(T::zero(), T::max);
        GeneratorMatrix {
            rows,
            regions,
            exit,
            max_total_rate,
        }
    }

    pub fn dimension(&self) -> usize {
        self.rows.len()
    }

    pub fn max_total_rate(&self) -> T {
        self.max_total_rate
    }

    pub fn exit_rates(&self) -> &[T] {
        &self.exit
    }

    /// Off-diagonal entries of row `i` as `(target, rate)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.rows[i].iter().map(|(j, r, _)| (*j, *r))
    }

    pub fn rate(&self, i: usize, j: usize) -> T {
        if i == j {
            return -self.exit[i];
        }
        self.rows[i].iter().filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Keeps the transitions of update regions contained in `active`.
    pub fn restrict(&self, active: &Region) -> Self {
        let keep: Vec<bool> = self.regions.iter().map(|r| r.is_subset(active)).collect();
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().filter(|e| keep[e.2 as usize]).copied().collect())
            .collect();
        Self::assemble(rows, self.regions.clone())
    }

    /// `c·𝓛`.
    pub fn scaled(&self, c: T) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|(j, r, g)| (*j, *r * c, *g)).collect())
            .collect();
        Self::assemble(rows, self.regions.clone())
    }

    /// Largest absolute row sum of the full matrix including the diagonal.
    pub fn max_row_sum_error(&self) -> T {
        self.rows
            .iter()
            .zip(&self.exit)
            .map(|(row, e)| (row.iter().map(|x| x.1).sum::<T>() - *e).abs())
            .fold(T::zero(), T::max)
    }

    /// Dense copy, for oracles and small solves.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dimension();
        let mut m = vec![vec![T::zero(); n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            m[i][i] = -self.exit[i];
            for (j, r, _) in row {
                m[i][*j] = m[i][*j] + *r;
            }
        }
        m
    }

    /// Incoming transitions per state, for gather-style products.
    fn transpose(&self) -> Vec<Vec<(usize, T)>> {
        let mut cols = vec![Vec::new(); self.dimension()];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, r, _) in row {
                cols[*j].push((i, *r));
            }
        }
        cols
    }
}

/// Generator of the dynamics on `space` in which every update region inside
/// the state space is active.
pub fn build_generator_on<T: Real, F: RateFamily<T> + ?Sized>(
    family: &F,
    space: &StateSpace,
) -> Result<GeneratorMatrix<T>> {
    if family.q() != space.q() {
        return Err(Error::Precondition("family and state space disagree on q".into()));
    }
    let regions = family.update_regions(space.region());
    let local: Vec<(Vec<usize>, usize)> = regions
        .iter()
        .map(|r| {
            let pos: Vec<usize> = r
                .iter()
                .map(|s| space.position(s).expect("region inside space"))
                .collect();
            let count = (space.q() as usize).pow(r.len() as u32);
            (pos, count)
        })
        .collect();
    let q = space.q();
    let rows: Vec<Vec<(usize, T, u32)>> = (0..space.size())
        .into_par_iter()
        .map_init(
            || (vec![0u8; space.sites().len()], Vec::new()),
            |(vals, xi), idx| {
                space.decode_into(idx, vals);
                let look = space.lookup(vals);
                let mut row = Vec::new();
                for (rid, (delta, (pos, count))) in regions.iter().zip(&local).enumerate() {
                    for code in 0..*count {
                        xi.clear();
                        let mut c = code;
                        for _ in 0..pos.len() {
                            xi.push((c % q as usize) as u8);
                            c /= q as usize;
                        }
                        if pos.iter().zip(xi.iter()).all(|(p, v)| vals[*p] == *v) {
                            continue;
                        }
                        let r = family.rate(delta, &look, xi);
                        if r > T::zero() {
                            let mut target = idx;
                            for (p, v) in pos.iter().zip(xi.iter()) {
                                let w = (q as usize).pow(*p as u32);
                                target = target - vals[*p] as usize * w + *v as usize * w;
                            }
                            row.push((target, r, rid as u32));
                        }
                    }
                }
                row
            },
        )
        .collect();
    Ok(GeneratorMatrix::assemble(rows, regions))
}

/// Generator `𝓛^h` on `active` with the frozen `boundary` outside.
pub fn build_generator<T: Real, F: RateFamily<T> + ?Sized>(
    family: &F,
    active: &Region,
    boundary: Environment,
) -> Result<(StateSpace, GeneratorMatrix<T>)> {
    let space = StateSpace::new(active.clone(), family.q(), boundary)?;
    let gen = build_generator_on(family, &space)?;
    Ok((space, gen))
}

/// Probability weights over a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    pub weights: Vec<T>,
}

impl<T: Real> Distribution<T> {
    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut weights = vec![T::zero(); n];
        weights[i] = T::one();
        Distribution { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Distribution {
            weights: vec![T::one() / from_usize(n); n],
        }
    }

    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::Precondition("negative or NaN weight".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > lit(1e-9) {
            return Err(Error::Precondition(format!("weights sum to {total}")));
        }
        Ok(Distribution { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn expectation(&self, f: impl Fn(usize) -> T) -> T {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > T::zero())
            .map(|(i, w)| *w * f(i))
            .sum()
    }
}

/// Output of [`evolve_detailed`].
#[derive(Debug, Clone)]
pub struct Evolved<T> {
    pub dist: Distribution<T>,
    pub segments: usize,
    pub poisson_terms: usize,
    /// `|1 - mass|` before renormalization.
    pub mass_defect: T,
}

/// Largest `Λ·dt` handled by one uniformization segment.
pub const UNIFORMIZATION_SEGMENT: f64 = 50.0;

fn step<T: Real>(cols: &[Vec<(usize, T)>], keep: &[T], inv: T, v: &[T]) -> Vec<T> {
    cols.par_iter()
        .zip(keep.par_iter())
        .enumerate()
        .map(|(j, (col, k))| {
            let mut acc = v[j] * *k;
            for (i, r) in col {
                acc = acc + v[*i] * *r * inv;
            }
            acc
        })
        .collect()
}

/// `μ₀ e^{t𝓛}` by uniformization, error at most `tol` in ℓ¹.
pub fn evolve_detailed<T: Real>(gen: &GeneratorMatrix<T>, mu0: &Distribution<T>, t: T, tol: T) -> Result<Evolved<T>> {
    if mu0.len() != gen.dimension() {
        return Err(Error::Precondition("distribution and generator sizes differ".into()));
    }
    if t < T::zero() || !(tol > T::zero()) {
        return Err(Error::Precondition("need t >= 0 and tol > 0".into()));
    }
    let lambda = gen.max_total_rate();
    if t == T::zero() || lambda == T::zero() {
        return Ok(Evolved {
            dist: mu0.clone(),
            segments: 0,
            poisson_terms: 0,
            mass_defect: T::zero(),
        });
    }
    let total = to_f64(lambda * t);
    let segments = (total / UNIFORMIZATION_SEGMENT).ceil().max(1.0) as usize;
    let dt = t / from_usize(segments);
    let seg_tol = tol / from_usize(segments);
    let cols = gen.transpose();
    let inv = T::one() / lambda;
    let keep: Vec<T> = gen.exit.iter().map(|e| T::one() - *e * inv).collect();
    let a = lambda * dt;
    let mut v = mu0.weights.clone();
    let mut poisson_terms = 0;
    for _ in 0..segments {
        let mut weight = (-a).exp();
        let mut cum = weight;
        let mut acc: Vec<T> = v.iter().map(|x| *x * weight).collect();
        let mut power = v.clone();
        let mut k = 0usize;
        while T::one() - cum > seg_tol && k < 100_000 {
            k += 1;
            power = step(&cols, &keep, inv, &power);
            weight = weight * a / from_usize(k);
            cum = cum + weight;
            for (o, p) in acc.iter_mut().zip(&power) {
                *o = *o + *p * weight;
            }
            // once past the mode, rounding can stall cum below 1 - tol
            if from_usize::<T>(k) > a && weight < seg_tol * T::epsilon() {
                break;
            }
        }
        poisson_terms += k;
        v = acc;
    }
    let mass: T = v.iter().copied().sum();
    let mass_defect = (T::one() - mass).abs();
    if mass_defect > lit(1e-12) {
        log::debug!("uniformization renormalized a mass defect of {}", to_f64(mass_defect));
    }
    for x in v.iter_mut() {
        *x = (*x).max(T::zero()) / mass;
    }
    Ok(Evolved {
        dist: Distribution { weights: v },
        segments,
        poisson_terms,
        mass_defect,
    })
}

pub fn evolve<T: Real>(gen: &GeneratorMatrix<T>, mu0: &Distribution<T>, t: T, tol: T) -> Result<Distribution<T>> {
    Ok(evolve_detailed(gen, mu0, t, tol)?.dist)
}

/// Radius function `h(s)` of a time-dependent restriction `Λ^{h(s)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant {
        h: f64,
    },
    /// `h(s) = slope·(t_end - s) + offset`, shrinking towards `offset`.
    Shrinking {
        slope: f64,
        t_end: f64,
        offset: f64,
    },
    /// `h(s) = slope·s + offset`.
    Growing {
        slope: f64,
        offset: f64,
    },
}

impl Schedule {
    pub fn h(&self, s: f64) -> f64 {
        match *self {
            Schedule::Constant { h } => h,
            Schedule::Shrinking { slope, t_end, offset } => slope * (t_end - s) + offset,
            Schedule::Growing { slope, offset } => slope * s + offset,
        }
    }

    /// Pieces `(s0, s1, r)` of `[0, t]` on which `floor(h)` equals `r`;
    /// the cut points are the exact integer crossings of `h`.
    pub fn segments(&self, t: f64) -> Vec<(f64, f64, u64)> {
        let mut cuts = vec![0.0, t];
        let (lo, hi) = {
            let (a, b) = (self.h(0.0), self.h(t));
            (a.min(b), a.max(b))
        };
        let mut m = lo.floor() + 1.0;
        while m <= hi {
            let s = match *self {
                Schedule::Constant { .. } => break,
                Schedule::Shrinking { slope, t_end, offset } => t_end - (m - offset) / slope,
                Schedule::Growing { slope, offset } => (m - offset) / slope,
            };
            if s > 0.0 && s < t {
                cuts.push(s);
            }
            m += 1.0;
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (w[0], w[1], self.h(mid).max(0.0).floor() as u64)
            })
            .collect()
    }
}

/// Evolution of the restricted dynamics with active region
/// `Λ^{h(s)} ∩ space`, where `full` is the generator on the whole space.
/// Sites not yet (or no longer) active keep their current value.
pub fn evolve_time_dependent<T: Real>(
    full: &GeneratorMatrix<T>,
    space: &StateSpace,
    lam: &Region,
    schedule: &Schedule,
    mu0: &Distribution<T>,
    t: T,
    tol: T,
) -> Result<Distribution<T>> {
    let segs = schedule.segments(to_f64(t));
    let n = segs.len().max(1);
    let mut cache: HashMap<u64, GeneratorMatrix<T>> = HashMap::new();
    let mut mu = mu0.clone();
    for (s0, s1, r) in segs {
        let gen = cache
            .entry(r)
            .or_insert_with(|| full.restrict(&blow_up(lam, r as f64).intersection(space.region())));
        mu = evolve(gen, &mu, lit(s1 - s0), tol / from_usize(n))?;
    }
    Ok(mu)
}

/// Marginal law on `sub`, indexed little-endian in the order of `sub`.
pub fn marginal<T: Real>(space: &StateSpace, mu: &Distribution<T>, sub: &Region) -> Result<Vec<T>> {
    let pos: Vec<usize> = sub
        .iter()
        .map(|s| {
            space
                .position(s)
                .ok_or_else(|| Error::Precondition(format!("site {s} outside the state space")))
        })
        .collect::<Result<_>>()?;
    let q = space.q() as usize;
    let mut out = vec![T::zero(); q.pow(pos.len() as u32)];
    for (idx, w) in mu.weights.iter().enumerate() {
        if *w == T::zero() {
            continue;
        }
        let mut cell = 0usize;
        for p in pos.iter().rev() {
            cell = cell * q + space.spin_at(idx, *p) as usize;
        }
        out[cell] = out[cell] + *w;
    }
    Ok(out)
}

/// `Σ_σ |μ(σ) - ν(σ)|` over the marginals on `sub`: the supremum of
/// `|μf - νf|` over `sub`-local `f` with `‖f‖∞ ≤ 1`.
pub fn tv_distance<T: Real>(space: &StateSpace, mu: &Distribution<T>, nu: &Distribution<T>, sub: &Region) -> Result<T> {
    let a = marginal(space, mu, sub)?;
    let b = marginal(space, nu, sub)?;
    Ok(l1(&a, &b))
}

pub fn l1<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum()
}

/// Half the ℓ¹ distance, the normalization under which Pinsker reads
/// `d ≤ √(H/2)`.
pub fn half_l1<T: Real>(a: &[T], b: &[T]) -> T {
    l1(a, b) / lit(2.0)
}

/// Closed communicating classes of the transition graph.
pub fn closed_classes<T: Real>(gen: &GeneratorMatrix<T>) -> Vec<Vec<usize>> {
    let n = gen.dimension();
    let mut g = DiGraph::<(), ()>::with_capacity(n, gen.nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for (j, _) in gen.row(i) {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut out: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| members.iter().all(|v| gen.row(v.index()).all(|(j, _)| comp[j] == *c)))
        .map(|(_, members)| {
            let mut m: Vec<usize> = members.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    out.sort();
    out
}

/// `‖μ𝓛‖_∞`.
pub fn stationary_residual<T: Real>(gen: &GeneratorMatrix<T>, mu: &Distribution<T>) -> T {
    let mut r: Vec<T> = mu.weights.iter().zip(&gen.exit).map(|(w, e)| -*w * *e).collect();
    for i in 0..gen.dimension() {
        for (j, rate) in gen.row(i) {
            r[j] = r[j] + mu.weights[i] * rate;
        }
    }
    r.into_iter().map(|x| x.abs()).fold(T::zero(), T::max)
}

/// The unique stationary law of an irreducible generator.
///
/// Small chains use a dense LU solve of `μ𝓛 = 0, Σμ = 1` in `f64`; larger
/// ones use power iteration on the uniformized chain.
pub fn stationary_distribution<T: Real>(gen: &GeneratorMatrix<T>) -> Result<Distribution<T>> {
    let n = gen.dimension();
    let classes = closed_classes(gen);
    if classes.len() != 1 || classes[0].len() != n {
        return Err(Error::Reducible(classes));
    }
    if n == 1 {
        return Ok(Distribution::point_mass(1, 0));
    }
    let mut w: Vec<f64> = if n <= DENSE_STATIONARY_MAX {
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -to_f64(gen.exit[i]);
            for (j, r) in gen.row(i) {
                a[(j, i)] += to_f64(r);
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InternalConsistency("singular stationary system".into()))?;
        sol.iter().map(|x| x.max(0.0)).collect()
    } else {
        power_iteration(gen)
    };
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    let mu = Distribution {
        weights: w.into_iter().map(lit).collect(),
    };
    let limit = (T::epsilon() * lit(1e6) * gen.max_total_rate()).max(lit(1e-10));
    let res = stationary_residual(gen, &mu);
    if res > limit {
        return Err(Error::InternalConsistency(format!(
            "stationary residual {res} above {limit}"
        )));
    }
    Ok(mu)
}

fn power_iteration<T: Real>(gen: &GeneratorMatrix<T>) -> Vec<f64> {
    let n = gen.dimension();
    let cols = gen.transpose();
    // a lazy chain (Λ above the largest exit rate) is aperiodic
    let lambda = to_f64(gen.max_total_rate()) * 1.05;
    let keep: Vec<f64> = gen.exit.iter().map(|e| 1.0 - to_f64(*e) / lambda).collect();
    let cols64: Vec<Vec<(usize, f64)>> = cols
        .into_iter()
        .map(|c| c.into_iter().map(|(i, r)| (i, to_f64(r))).collect())
        .collect();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let next = step(&cols64, &keep, 1.0 / lambda, &v);
        let diff: f64 = l1(&next, &v);
        v = next;
        if diff < 1e-14 {
            break;
        }
    }
    v
}

/// `E_{η₀}[f g](t) - E_{η₀}[f](t) E_{η₀}[g](t)`.
pub fn correlation<T: Real>(
    gen: &GeneratorMatrix<T>,
    space: &StateSpace,
    eta0: usize,
    f: &LocalObservable<T>,
    g: &LocalObservable<T>,
    t: T,
    tol: T,
) -> Result<T> {
    let mu = evolve(gen, &Distribution::point_mass(space.size(), eta0), t, tol)?;
    let fv = observable_values(space, f)?;
    let gv = observable_values(space, g)?;
    let ef = mu.expectation(|i| fv[i]);
    let eg = mu.expectation(|i| gv[i]);
    let efg = mu.expectation(|i| fv[i] * gv[i]);
    Ok(efg - ef * eg)
}

/// The observable evaluated at every state (spins off the space read from the environment).
pub fn observable_values<T: Real>(space: &StateSpace, f: &LocalObservable<T>) -> Result<Vec<T>> {
    if f.q() != space.q() && !f.region().is_empty() {
        return Err(Error::Precondition("observable and state space disagree on q".into()));
    }
    Ok((0..space.size())
        .into_par_iter()
        .map_init(
            || vec![0u8; space.sites().len()],
            |vals, idx| {
                space.decode_into(idx, vals);
                f.eval(&space.lookup(vals))
            },
        )
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DecayFunction;
    use crate::rates::{GlauberIsing, IndependentFlip};
    use approx::assert_relative_eq;

    fn flip1() -> IndependentFlip<f64> {
        IndependentFlip {
            rate: 1.0,
            q: 2,
            dim: 1,
        }
    }

    fn glauber(beta: f64) -> GlauberIsing<f64> {
        GlauberIsing {
            beta,
            rho_j: DecayFunction::exponential(1.0).unwrap(),
            r_j: 6,
            dim: 1,
        }
    }

    #[test]
    fn single_flip_generator() {
        let (_, gen) = build_generator(&flip1(), &Region::interval(0, 0), Environment::default()).unwrap();
        assert_eq!(gen.to_dense(), vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
    }

    #[test]
    fn single_glauber_site_rates_sum_to_one() {
        let g = glauber(0.5);
        let (space, gen) =
            build_generator(&g, &Region::interval(0, 0), Environment::new(BoundaryRule::AllPlus)).unwrap();
        let plus = space.encode(&[1]);
        let minus = space.encode(&[0]);
        let down = gen.rate(plus, minus);
        let up = gen.rate(minus, plus);
        assert_relative_eq!(down + up, 1.0, epsilon = 1e-15);
        let h = g.local_field(&BoundaryRule::AllPlus, &Site::d1(0));
        assert_relative_eq!(down, 1.0 / (1.0 + (2.0 * h).exp()), max_relative = 1e-14);
    }

    #[test]
    fn budget_error_reports_sizes() {
        let err = StateSpace::new(Region::interval(0, 20), 2, Environment::default()).unwrap_err();
        match err {
            Error::Budget { required, allowed, .. } => {
                assert_eq!(required, 1 << 21);
                assert_eq!(allowed, 1 << 20);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let s = StateSpace::new(Region::interval(0, 4), 3, Environment::default()).unwrap();
        for idx in [0, 1, 17, 242] {
            assert_eq!(s.encode(&s.decode(idx)), idx);
        }
        assert_eq!(s.decode(1), vec![1, 0, 0, 0, 0]);
        assert_eq!(s.spin_at(3 * 3, 2), 1);
    }

    #[test]
    fn two_state_closed_form() {
        let (space, gen) = build_generator(&flip1(), &Region::interval(0, 0), Environment::default()).unwrap();
        let plus = space.encode(&[1]);
        let mu = evolve(&gen, &Distribution::point_mass(2, plus), 1.0, 1e-13).unwrap();
        assert_relative_eq!(mu.weights[plus], (1.0 + (-2.0f64).exp()) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(mu.weights[plus], 0.56767, epsilon = 1e-5);
        let same = evolve(&gen, &Distribution::point_mass(2, plus), 0.0, 1e-13).unwrap();
        assert_eq!(same, Distribution::point_mass(2, plus));
    }

    #[test]
    fn long_times_are_segmented() {
        let (space, gen) = build_generator(&flip1(), &Region::interval(0, 0), Environment::default()).unwrap();
        let plus = space.encode(&[1]);
        let out = evolve_detailed(&gen, &Distribution::point_mass(2, plus), 120.0, 1e-12).unwrap();
        assert!(out.segments >= 3);
        assert_relative_eq!(out.dist.weights[plus], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn glauber_rows_sum_to_zero() {
        let (_, gen) = build_generator(
            &glauber(0.5),
            &Region::interval(0, 7),
            Environment::new(BoundaryRule::Alternating),
        )
        .unwrap();
        assert!(gen.max_row_sum_error() <= 1e-12);
        assert_eq!(gen.dimension(), 256);
        assert_eq!(gen.nnz(), 256 * 8);
    }

    #[test]
    fn schedule_segments_hit_integer_crossings() {
        let s = Schedule::Growing {
            slope: 2.0,
            offset: 2.5,
        };
        let segs = s.segments(1.0);
        assert_eq!(segs, vec![(0.0, 0.25, 2), (0.25, 0.75, 3), (0.75, 1.0, 4)]);
        let sh = Schedule::Shrinking {
            slope: 1.0,
            t_end: 2.0,
            offset: 3.0,
        };
        let segs = sh.segments(2.0);
        assert_eq!(segs, vec![(0.0, 1.0, 4), (1.0, 2.0, 3)]);
        assert_eq!(Schedule::Constant { h: 2.7 }.segments(3.0), vec![(0.0, 3.0, 2)]);
    }

    #[test]
    fn constant_schedule_matches_evolve() {
        let g = glauber(0.5);
        let (space, gen) =
            build_generator(&g, &Region::interval(-3, 3), Environment::new(BoundaryRule::AllPlus)).unwrap();
        let lam = Region::singleton(1, Site::d1(0));
        let eta0 = space.state_from(&BoundaryRule::AllMinus);
        let mu0 = Distribution::point_mass(space.size(), eta0);
        let a = evolve_time_dependent(&gen, &space, &lam, &Schedule::Constant { h: 2.0 }, &mu0, 1.0, 1e-13).unwrap();
        let b = evolve(&gen.restrict(&blow_up(&lam, 2.0)), &mu0, 1.0, 1e-13).unwrap();
        assert!(l1(&a.weights, &b.weights) <= 1e-12);
    }

    #[test]
    fn stationary_two_state_detailed_balance() {
        let g = glauber(0.5);
        let (space, gen) =
            build_generator(&g, &Region::interval(0, 0), Environment::new(BoundaryRule::AllPlus)).unwrap();
        let mu = stationary_distribution(&gen).unwrap();
        let h = g.local_field(&BoundaryRule::AllPlus, &Site::d1(0));
        let ratio = mu.weights[space.encode(&[1])] / mu.weights[space.encode(&[0])];
        assert_relative_eq!(ratio, (2.0 * h).exp(), max_relative = 1e-12);
    }

    #[test]
    fn independent_flip_stationary_is_uniform() {
        let (_, gen) = build_generator(&flip1(), &Region::interval(0, 3), Environment::default()).unwrap();
        let mu = stationary_distribution(&gen).unwrap();
        for w in &mu.weights {
            assert_relative_eq!(*w, 1.0 / 16.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn reducible_chain_lists_closed_classes() {
        let gen = GeneratorMatrix::from_rates(4, [(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0)]).unwrap();
        match stationary_distribution(&gen).unwrap_err() {
            Error::Reducible(c) => assert_eq!(c, vec![vec![0, 1], vec![3]]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn power_iteration_agrees_with_dense() {
        let (_, gen) = build_generator(
            &glauber(0.4),
            &Region::interval(0, 5),
            Environment::new(BoundaryRule::AllPlus),
        )
        .unwrap();
        let dense = stationary_distribution(&gen).unwrap();
        let mut p = power_iteration(&gen);
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        assert!(l1(&dense.weights, &p) < 1e-9);
    }

    #[test]
    fn independent_spins_do_not_correlate() {
        let (space, gen) = build_generator(&flip1(), &Region::interval(-2, 2), Environment::default()).unwrap();
        let f = LocalObservable::spin(1, Site::d1(-2));
        let g = LocalObservable::spin(1, Site::d1(2));
        for t in [0.0, 0.3, 1.0] {
            let c = correlation(&gen, &space, 0, &f, &g, t, 1e-13).unwrap();
            assert!(c.abs() <= 1e-12);
        }
    }

    #[test]
    fn marginal_of_full_region_is_identity() {
        let (space, gen) = build_generator(
            &glauber(0.5),
            &Region::interval(0, 2),
            Environment::new(BoundaryRule::AllPlus),
        )
        .unwrap();
        let mu = evolve(&gen, &Distribution::point_mass(8, 3), 0.7, 1e-13).unwrap();
        assert_eq!(marginal(&space, &mu, space.region()).unwrap(), mu.weights);
        assert_relative_eq!(tv_distance(&space, &mu, &mu, space.region()).unwrap(), 0.0);
    }
}
