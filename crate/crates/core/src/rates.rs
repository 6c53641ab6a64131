//! Transition-rate families `c_Δ(η, ξ_Δ)`, oscillations, the influence
//! matrix `γ(y, x)` and the dynamical constants `C₁`, `M_γ`, `C_γ`.
//!
//! Spins take values in `{0, …, q-1}`. For `q = 2` the Ising spin of value
//! `v` is `2v - 1`, so `1` is "plus" and `0` is "minus".

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{blow_up, DecayFunction, Region, Site};
use crate::scalar::{lit, Real};

/// Read access to a (possibly infinite) spin configuration.
pub trait SpinLookup {
    fn spin(&self, s: &Site) -> u8;
}

#[inline]
pub fn ising(v: u8) -> f64 {
    if v == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Rule fixing the spins outside a finite window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    AllPlus,
    AllMinus,
    /// Plus on even sites, minus on odd ones.
    Alternating,
    Constant(u8),
}

impl BoundaryRule {
    pub fn value(&self, s: &Site) -> u8 {
        match *self {
            BoundaryRule::AllPlus => 1,
            BoundaryRule::AllMinus => 0,
            BoundaryRule::Alternating => u8::from(s.is_even()),
            BoundaryRule::Constant(v) => v,
        }
    }

    pub fn flipped(&self) -> Self {
        match *self {
            BoundaryRule::AllPlus => BoundaryRule::AllMinus,
            BoundaryRule::AllMinus => BoundaryRule::AllPlus,
            // flip of the alternating pattern is only meaningful for q = 2
            other => other,
        }
    }
}

impl SpinLookup for BoundaryRule {
    fn spin(&self, s: &Site) -> u8 {
        self.value(s)
    }
}

/// Spins on a finite window, completed by a boundary rule outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    window: Region,
    values: HashMap<Site, u8>,
    boundary: BoundaryRule,
}

impl Configuration {
    pub fn new(window: Region, values: HashMap<Site, u8>, boundary: BoundaryRule) -> Result<Self> {
        if window.iter().any(|s| !values.contains_key(s)) {
            return Err(Error::Precondition("every window site needs a value".into()));
        }
        Ok(Configuration {
            window,
            values,
            boundary,
        })
    }

    /// Window filled according to `fill`, with `boundary` outside.
    pub fn from_rule(window: Region, fill: BoundaryRule, boundary: BoundaryRule) -> Self {
        let values = window.iter().map(|s| (*s, fill.value(s))).collect();
        Configuration {
            window,
            values,
            boundary,
        }
    }

    pub fn window(&self) -> &Region {
        &self.window
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.boundary
    }

    pub fn set(&mut self, s: Site, v: u8) {
        if self.window.contains(&s) {
            self.values.insert(s, v);
        }
    }

    /// Values on the window, in window order.
    pub fn window_values(&self) -> Vec<u8> {
        self.window.iter().map(|s| self.values[s]).collect()
    }
}

impl SpinLookup for Configuration {
    fn spin(&self, s: &Site) -> u8 {
        match self.values.get(s) {
            Some(v) => *v,
            None => self.boundary.value(s),
        }
    }
}

/// Sites listed explicitly, everything else from a fallback lookup.
pub struct Overlay<'a, L: SpinLookup + ?Sized> {
    pub index: &'a HashMap<Site, usize>,
    pub values: &'a [u8],
    pub fallback: &'a L,
}

impl<L: SpinLookup + ?Sized> SpinLookup for Overlay<'_, L> {
    #[inline]
    fn spin(&self, s: &Site) -> u8 {
        match self.index.get(s) {
            Some(&i) => self.values[i],
            None => self.fallback.spin(s),
        }
    }
}

/// A family of update rates `c_Δ(η, ξ_Δ)` on `Z^d`.
///
/// `ξ_Δ` is the new local state on `Δ` listed in the region's site order;
/// `rate(Δ, η, η_Δ)` is zero.
pub trait RateFamily<T: Real>: Send + Sync {
    fn q(&self) -> u8;
    fn dim(&self) -> usize;
    /// `L`: every region with diameter `≥ L` carries rate zero.
    fn max_update_diameter(&self) -> f64;
    /// Sites farther than this from `Δ` do not change `c_Δ`.
    fn dependency_radius(&self) -> u64;
    /// Update regions contained in `active`.
    fn update_regions(&self, active: &Region) -> Vec<Region>;
    fn rate(&self, delta: &Region, eta: &dyn SpinLookup, xi: &[u8]) -> T;
    /// Closed-form upper bound on `δ_x c_Δ`, when the family has one.
    fn analytic_oscillation(&self, _delta: &Region, _x: &Site) -> Option<T> {
        None
    }
    /// Closed-form `sup_η Σ_ξ c_Δ(η, ξ)` for a single region, when available.
    fn analytic_total_rate(&self, _delta: &Region) -> Option<T> {
        None
    }
    fn single_site(&self) -> bool {
        true
    }
}

/// Independent spin flips: every site moves to each other value at rate `r / (q - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndependentFlip<T> {
    pub rate: T,
    pub q: u8,
    pub dim: usize,
}

impl<T: Real> RateFamily<T> for IndependentFlip<T> {
    fn q(&self) -> u8 {
        self.q
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_update_diameter(&self) -> f64 {
        1.0
    }
    fn dependency_radius(&self) -> u64 {
        0
    }
    fn update_regions(&self, active: &Region) -> Vec<Region> {
        active.iter().map(|s| Region::singleton(active.dim(), *s)).collect()
    }
    fn rate(&self, delta: &Region, eta: &dyn SpinLookup, xi: &[u8]) -> T {
        let x = delta.iter().next().expect("nonempty update region");
        if eta.spin(x) == xi[0] {
            T::zero()
        } else {
            self.rate / lit(f64::from(self.q - 1))
        }
    }
    fn analytic_oscillation(&self, _delta: &Region, _x: &Site) -> Option<T> {
        Some(T::zero())
    }
    fn analytic_total_rate(&self, _delta: &Region) -> Option<T> {
        Some(self.rate)
    }
}

/// Glauber dynamics for the Ising model with couplings
/// `J_{x,y} = β ρ_J(d(x, y))` for `1 ≤ d(x, y) ≤ R_J` and zero beyond.
///
/// The Hamiltonian sums over unordered pairs, so a flip at `x` changes the
/// energy by `2 η_x h_x(η)` and the flip rate is `1 / (1 + exp(2 η_x h_x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlauberIsing<T> {
    pub beta: T,
    pub rho_j: DecayFunction<T>,
    pub r_j: u64,
    pub dim: usize,
}

impl<T: Real> GlauberIsing<T> {
    pub fn coupling(&self, d: u64) -> T {
        if d == 0 || d > self.r_j {
            T::zero()
        } else {
            self.beta * self.rho_j.at(d)
        }
    }

    /// Offsets `y - x` with nonzero coupling together with `J`.
    pub fn neighbor_offsets(&self) -> Vec<([i64; 2], T)> {
        let origin = Site::d2(0, 0);
        Region::ball(self.dim, origin, self.r_j)
            .expect("valid dimension")
            .iter()
            .filter(|s| **s != origin)
            .map(|s| (s.coords, self.coupling(s.l1(&origin))))
            .collect()
    }

    /// `h_x(η) = Σ_{y ≠ x, d ≤ R_J} J_{x,y} η_y` with Ising spins.
    pub fn local_field(&self, eta: &dyn SpinLookup, x: &Site) -> T {
        let mut h = T::zero();
        for (off, j) in self.neighbor_offsets() {
            let y = Site::d2(x.coords[0] + off[0], x.coords[1] + off[1]);
            h = h + j * lit(ising(eta.spin(&y)));
        }
        h
    }

    /// `Σ_y |J_{x,y}|`.
    pub fn total_coupling(&self) -> T {
        self.neighbor_offsets().into_iter().map(|(_, j)| j.abs()).sum()
    }

    pub fn flip_rate_from_field(spin: u8, h: T) -> T {
        let two: T = lit(2.0);
        T::one() / (T::one() + (two * lit(ising(spin)) * h).exp())
    }
}

impl<T: Real> RateFamily<T> for GlauberIsing<T> {
    fn q(&self) -> u8 {
        2
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_update_diameter(&self) -> f64 {
        1.0
    }
    fn dependency_radius(&self) -> u64 {
        self.r_j
    }
    fn update_regions(&self, active: &Region) -> Vec<Region> {
        active.iter().map(|s| Region::singleton(active.dim(), *s)).collect()
    }
    fn rate(&self, delta: &Region, eta: &dyn SpinLookup, xi: &[u8]) -> T {
        let x = delta.iter().next().expect("nonempty update region");
        let v = eta.spin(x);
        if v == xi[0] {
            return T::zero();
        }
        Self::flip_rate_from_field(v, self.local_field(eta, x))
    }
    fn analytic_oscillation(&self, delta: &Region, x: &Site) -> Option<T> {
        // σ' ≤ 1/4 and flipping η_x moves the argument 2 η_y h_y by at most 4|J|
        let y = delta.iter().next()?;
        Some(self.coupling(x.l1(y)).abs())
    }
    fn analytic_total_rate(&self, _delta: &Region) -> Option<T> {
        let two: T = lit(2.0);
        Some(T::one() / (T::one() + (-two * self.total_coupling()).exp()))
    }
}

/// Config-facing union of the shipped families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family<T> {
    IndependentFlip(IndependentFlip<T>),
    Glauber(GlauberIsing<T>),
}

impl<T: Real> Family<T> {
    fn inner(&self) -> &dyn RateFamily<T> {
        match self {
            Family::IndependentFlip(f) => f,
            Family::Glauber(g) => g,
        }
    }

    pub fn as_glauber(&self) -> Option<&GlauberIsing<T>> {
        match self {
            Family::Glauber(g) => Some(g),
            _ => None,
        }
    }
}

impl<T: Real> RateFamily<T> for Family<T> {
    fn q(&self) -> u8 {
        self.inner().q()
    }
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn max_update_diameter(&self) -> f64 {
        self.inner().max_update_diameter()
    }
    fn dependency_radius(&self) -> u64 {
        self.inner().dependency_radius()
    }
    fn update_regions(&self, active: &Region) -> Vec<Region> {
        self.inner().update_regions(active)
    }
    fn rate(&self, delta: &Region, eta: &dyn SpinLookup, xi: &[u8]) -> T {
        self.inner().rate(delta, eta, xi)
    }
    fn analytic_oscillation(&self, delta: &Region, x: &Site) -> Option<T> {
        self.inner().analytic_oscillation(delta, x)
    }
    fn analytic_total_rate(&self, delta: &Region) -> Option<T> {
        self.inner().analytic_total_rate(delta)
    }
    fn single_site(&self) -> bool {
        self.inner().single_site()
    }
}

/// `c_x(η, -η_x)` for the Glauber family.
pub fn glauber_rate<T: Real>(family: &GlauberIsing<T>, eta: &dyn SpinLookup, x: &Site) -> T {
    GlauberIsing::flip_rate_from_field(eta.spin(x), family.local_field(eta, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillationMode {
    ExactBruteforce,
    AnalyticBound,
}

/// At most `2^24` dependency-set states are enumerated.
pub const DEPENDENCY_BUDGET: u128 = 1 << 24;

fn all_local_states(q: u8, n: usize) -> impl Iterator<Item = Vec<u8>> {
    let total = (q as u64).pow(n as u32);
    (0..total).map(move |mut idx| {
        let mut v = vec![0u8; n];
        for slot in v.iter_mut() {
            *slot = (idx % q as u64) as u8;
            idx /= q as u64;
        }
        v
    })
}

struct VecLookup<'a> {
    index: &'a HashMap<Site, usize>,
    values: &'a [u8],
}

impl SpinLookup for VecLookup<'_> {
    fn spin(&self, s: &Site) -> u8 {
        self.index.get(s).map_or(0, |&i| self.values[i])
    }
}

fn dependency_sites<T: Real, F: RateFamily<T> + ?Sized>(family: &F, delta: &Region) -> Region {
    blow_up(delta, family.dependency_radius() as f64)
}

fn check_budget(q: u8, n: usize) -> Result<()> {
    let required = (q as u128).pow(n as u32);
    if required > DEPENDENCY_BUDGET {
        return Err(Error::budget(
            "dependency-set enumeration (use analytic_bound mode)",
            required,
            DEPENDENCY_BUDGET,
        ));
    }
    Ok(())
}

/// `δ_x c_Δ = sup_{η, η' equal off x} Σ_ξ |c_Δ(η, ξ) - c_Δ(η', ξ)|`.
pub fn oscillation<T: Real, F: RateFamily<T> + ?Sized>(
    family: &F,
    delta: &Region,
    x: &Site,
    mode: OscillationMode,
) -> Result<T> {
    if delta.contains(x) {
        return Err(Error::Precondition(
            "oscillation is taken in a coordinate outside the update region".into(),
        ));
    }
    match mode {
        OscillationMode::AnalyticBound => family
            .analytic_oscillation(delta, x)
            .ok_or_else(|| Error::Unsupported("no analytic oscillation bound for this family".into())),
        OscillationMode::ExactBruteforce => {
            let deps = dependency_sites(family, delta);
            if !deps.contains(x) {
                return Ok(T::zero());
            }
            let others: Vec<Site> = deps.iter().copied().filter(|s| s != x).collect();
            let q = family.q();
            check_budget(q, others.len() + 1)?;
            let mut index: HashMap<Site, usize> = others.iter().enumerate().map(|(i, s)| (*s, i)).collect();
            let xi_idx = others.len();
            index.insert(*x, xi_idx);
            let targets: Vec<Vec<u8>> = all_local_states(q, delta.len()).collect();
            let mut best = T::zero();
            for base in all_local_states(q, others.len()) {
                let mut vals = base.clone();
                vals.push(0);
                let mut per_value = Vec::with_capacity(q as usize);
                for i in 0..q {
                    vals[xi_idx] = i;
                    let look = VecLookup {
                        index: &index,
                        values: &vals,
                    };
                    let rates: Vec<T> = targets.iter().map(|xi| family.rate(delta, &look, xi)).collect();
                    per_value.push(rates);
                }
                for i in 0..q as usize {
                    for j in (i + 1)..q as usize {
                        let s: T = per_value[i]
                            .iter()
                            .zip(&per_value[j])
                            .map(|(a, b)| (*a - *b).abs())
                            .sum();
                        best = best.max(s);
                    }
                }
            }
            Ok(best)
        }
    }
}

/// `sup_η Σ_ξ c_Δ(η, ξ)`: by enumeration of the dependency set when it
/// fits the budget, otherwise the family's closed form.
pub fn total_rate_sup<T: Real, F: RateFamily<T> + ?Sized>(family: &F, delta: &Region) -> Result<T> {
    let deps = dependency_sites(family, delta);
    let q = family.q();
    if check_budget(q, deps.len()).is_err() || deps.len() > 20 {
        return family.analytic_total_rate(delta).ok_or_else(|| {
            Error::budget(
                "total-rate enumeration",
                (q as u128).pow(deps.len() as u32),
                DEPENDENCY_BUDGET,
            )
        });
    }
    let sites: Vec<Site> = deps.iter().copied().collect();
    let index: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let targets: Vec<Vec<u8>> = all_local_states(q, delta.len()).collect();
    let mut best = T::zero();
    for vals in all_local_states(q, sites.len()) {
        let look = VecLookup {
            index: &index,
            values: &vals,
        };
        let total: T = targets.iter().map(|xi| family.rate(delta, &look, xi)).sum();
        best = best.max(total);
    }
    Ok(best)
}

/// `γ(y, x)` on a finite window, stored by rows `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix<T> {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    rows: Vec<Vec<(usize, T)>>,
    dim: usize,
    pub mode: Option<OscillationMode>,
}

impl<T: Real> InfluenceMatrix<T> {
    /// Builds `γ` from an explicit entry function; zero and diagonal entries are dropped.
    pub fn from_fn(window: &Region, mut entry: impl FnMut(&Site, &Site) -> T) -> Self {
        let sites: Vec<Site> = window.iter().copied().collect();
        let index = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let rows = sites
            .iter()
            .map(|y| {
                sites
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| *x != y)
                    .filter_map(|(j, x)| {
                        let g = entry(y, x);
                        (g > T::zero()).then_some((j, g))
                    })
                    .collect()
            })
            .collect();
        InfluenceMatrix {
            sites,
            index,
            rows,
            dim: window.dim(),
            mode: None,
        }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index_of(&self, s: &Site) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn window(&self) -> Region {
        Region::new(self.dim, self.sites.iter().copied()).expect("sites share a dimension")
    }

    pub fn row(&self, y: usize) -> &[(usize, T)] {
        &self.rows[y]
    }

    pub fn get(&self, y: &Site, x: &Site) -> T {
        let (Some(i), Some(j)) = (self.index_of(y), self.index_of(x)) else {
            return T::zero();
        };
        self.rows[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(T::zero(), |(_, g)| *g)
    }

    /// `sup_y Σ_x γ(y, x)`, the ℓ¹ operator norm of `Γ` on the window.
    pub fn max_row_sum(&self) -> T {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(_, g)| *g).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// `γ(y, x) = Σ_{Δ ∋ y} δ_x c_Δ` for `y, x` in the window.
pub fn influence_matrix<T: Real, F: RateFamily<T> + ?Sized>(
    family: &F,
    window: &Region,
    mode: OscillationMode,
) -> Result<InfluenceMatrix<T>> {
    let sites: Vec<Site> = window.iter().copied().collect();
    let regions = family.update_regions(window);
    let radius = family.dependency_radius();
    // translation-invariant single-site families: one oscillation per offset
    let offset_cache: Option<HashMap<[i64; 2], T>> = if family.single_site() {
        let origin = Site::d2(0, 0);
        let delta = Region::singleton(window.dim(), origin);
        let offsets: Vec<Site> = Region::ball(window.dim(), origin, radius)?
            .iter()
            .copied()
            .filter(|s| *s != origin)
            .collect();
        let vals: Result<Vec<([i64; 2], T)>> = offsets
            .par_iter()
            .map(|x| Ok((x.coords, oscillation(family, &delta, x, mode)?)))
            .collect();
        Some(vals?.into_iter().collect())
    } else {
        None
    };
    let rows: Result<Vec<Vec<(usize, T)>>> = sites
        .par_iter()
        .map(|y| {
            let mut row = Vec::new();
            for (j, x) in sites.iter().enumerate() {
                if x == y {
                    continue;
                }
                let g = match &offset_cache {
                    Some(cache) => {
                        let off = [x.coords[0] - y.coords[0], x.coords[1] - y.coords[1]];
                        cache.get(&off).copied().unwrap_or(T::zero())
                    }
                    None => {
                        let mut acc = T::zero();
                        for delta in regions.iter().filter(|d| d.contains(y) && !d.contains(x)) {
                            acc = acc + oscillation(family, delta, x, mode)?;
                        }
                        acc
                    }
                };
                if g > T::zero() {
                    row.push((j, g));
                }
            }
            Ok(row)
        })
        .collect();
    let mut gm = InfluenceMatrix {
        index: sites.iter().enumerate().map(|(i, s)| (*s, i)).collect(),
        sites,
        rows: rows?,
        dim: window.dim(),
        mode: Some(mode),
    };
    gm.mode = Some(mode);
    Ok(gm)
}

/// `C₁`, `M_γ` and `C_γ(ρ)` for a family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicalConstants<T> {
    pub c1: T,
    pub m_gamma: T,
    pub c_gamma: T,
    /// Rows of `γ` are complete within this radius (the dependency radius).
    pub truncation_radius: u64,
    /// Bound on the mass of `γ` rows not represented; zero for finite dependency.
    pub remainder: T,
}

/// Computes the constants as suprema over the window sites. Rows are
/// evaluated on the window blown up by the dependency radius, so no part of
/// a row is cut off.
pub fn constants<T: Real, F: RateFamily<T> + ?Sized>(
    family: &F,
    rho: &DecayFunction<T>,
    window: &Region,
    mode: OscillationMode,
) -> Result<DynamicalConstants<T>> {
    if window.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let radius = family.dependency_radius();
    let padded = blow_up(window, radius as f64);
    let gm = influence_matrix(family, &padded, mode)?;
    let mut c1 = T::zero();
    let mut m_gamma = T::zero();
    let mut c_gamma = T::zero();
    let regions = family.update_regions(&padded);
    let mut rate_cache: HashMap<usize, T> = HashMap::new();
    for x in window.iter() {
        let mut total = T::zero();
        for (ri, delta) in regions.iter().enumerate().filter(|(_, d)| d.contains(x)) {
            let key = if family.single_site() { 0 } else { ri };
            let r = match rate_cache.get(&key) {
                Some(r) => *r,
                None => {
                    let r = total_rate_sup(family, delta)?;
                    rate_cache.insert(key, r);
                    r
                }
            };
            total = total + r;
        }
        c1 = c1.max(total);
        let i = gm.index_of(x).expect("window inside padded window");
        let mut m = T::zero();
        let mut c = T::zero();
        for (j, g) in gm.row(i) {
            let w = rho.at(gm.sites()[*j].l1(x));
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::R3Fails(format!(
                    "rho vanishes at distance {}",
                    gm.sites()[*j].l1(x)
                )));
            }
            m = m + *g;
            c = c + *g / w;
        }
        if !c.is_finite() {
            return Err(Error::R3Fails("sum of gamma/rho diverges".into()));
        }
        m_gamma = m_gamma.max(m);
        c_gamma = c_gamma.max(c);
    }
    Ok(DynamicalConstants {
        c1,
        m_gamma,
        c_gamma,
        truncation_radius: radius,
        remainder: T::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn glauber(beta: f64, r_j: u64) -> GlauberIsing<f64> {
        GlauberIsing {
            beta,
            rho_j: DecayFunction::exponential(1.0).unwrap(),
            r_j,
            dim: 1,
        }
    }

    #[test]
    fn zero_beta_rate_is_one_half() {
        let g = glauber(0.0, 5);
        let eta = Configuration::from_rule(
            Region::interval(-3, 3),
            BoundaryRule::Alternating,
            BoundaryRule::AllMinus,
        );
        for x in eta.window().iter() {
            assert_eq!(glauber_rate(&g, &eta, x), 0.5);
        }
    }

    #[test]
    fn all_plus_rate_matches_geometric_series() {
        let g = glauber(0.5, 20);
        let eta = BoundaryRule::AllPlus;
        let h: f64 = 2.0 * 0.5 * (1..=20).map(|k| (-(k as f64)).exp()).sum::<f64>();
        assert_relative_eq!(g.local_field(&eta, &Site::d1(0)), h, max_relative = 1e-14);
        assert_relative_eq!(h, 0.581977, epsilon = 1e-6);
        let r = glauber_rate(&g, &eta, &Site::d1(0));
        assert_relative_eq!(r, 1.0 / (1.0 + (2.0 * h).exp()), max_relative = 1e-14);
        assert_relative_eq!(r, 0.237950, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_boundary_gives_zero_field() {
        // site 0 sees +1 at ±2, ±4, ... and -1 at ±1, ±3, ... ; with R_J = 1 only ±1 matter,
        // so use the alternating boundary around an odd site where both neighbors differ
        let g = glauber(0.7, 1);
        let eta = Configuration::new(
            Region::singleton(1, Site::d1(0)),
            HashMap::from([(Site::d1(0), 1u8)]),
            BoundaryRule::Alternating,
        )
        .unwrap();
        // neighbors ±1 are odd, hence both minus; field is -2J, not symmetric. Use a custom lookup.
        struct Mixed;
        impl SpinLookup for Mixed {
            fn spin(&self, s: &Site) -> u8 {
                u8::from(s.coords[0] > 0)
            }
        }
        let _ = eta;
        assert_eq!(g.local_field(&Mixed, &Site::d1(0)), 0.0);
        assert_eq!(glauber_rate(&g, &Mixed, &Site::d1(0)), 0.5);
    }

    #[test]
    fn independent_flip_has_no_influence() {
        let f = IndependentFlip {
            rate: 1.0,
            q: 2,
            dim: 1,
        };
        let d = Region::singleton(1, Site::d1(0));
        for mode in [OscillationMode::ExactBruteforce, OscillationMode::AnalyticBound] {
            assert_eq!(oscillation(&f, &d, &Site::d1(1), mode).unwrap(), 0.0);
        }
        let gm = influence_matrix(&f, &Region::interval(-3, 3), OscillationMode::ExactBruteforce).unwrap();
        assert_eq!(gm.nnz(), 0);
        let rho = DecayFunction::exponential(1.0).unwrap();
        let c = constants(&f, &rho, &Region::interval(-2, 2), OscillationMode::ExactBruteforce).unwrap();
        assert_eq!((c.c1, c.m_gamma, c.c_gamma), (1.0, 0.0, 0.0));
    }

    #[test]
    fn glauber_oscillation_exact_below_analytic() {
        let g = glauber(0.5, 4);
        let d = Region::singleton(1, Site::d1(0));
        let x = Site::d1(2);
        let an = oscillation(&g, &d, &x, OscillationMode::AnalyticBound).unwrap();
        assert_relative_eq!(an, 0.5 * (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(an, 0.06767, epsilon = 1e-5);
        let ex = oscillation(&g, &d, &x, OscillationMode::ExactBruteforce).unwrap();
        assert!(ex > 0.0 && ex <= an, "{ex} {an}");
        let zero = glauber(0.0, 4);
        assert_eq!(
            oscillation(&zero, &d, &x, OscillationMode::ExactBruteforce).unwrap(),
            0.0
        );
        assert!(oscillation(&g, &d, &Site::d1(0), OscillationMode::ExactBruteforce).is_err());
    }

    #[test]
    fn exact_mode_budget_error() {
        let g = GlauberIsing {
            beta: 0.5,
            rho_j: DecayFunction::exponential(1.0).unwrap(),
            r_j: 4,
            dim: 2,
        };
        let d = Region::singleton(2, Site::d2(0, 0));
        let err = oscillation(&g, &d, &Site::d2(1, 0), OscillationMode::ExactBruteforce).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn analytic_influence_is_the_coupling() {
        let g = glauber(0.5, 3);
        let gm = influence_matrix(&g, &Region::interval(-4, 4), OscillationMode::AnalyticBound).unwrap();
        for y in -4..=4i64 {
            for x in -4..=4i64 {
                let expect = if x == y { 0.0 } else { g.coupling(x.abs_diff(y)) };
                assert_relative_eq!(gm.get(&Site::d1(y), &Site::d1(x)), expect);
            }
        }
    }

    #[test]
    fn exact_influence_symmetric_on_six_sites() {
        let g = glauber(0.8, 2);
        let gm = influence_matrix(&g, &Region::interval(0, 5), OscillationMode::ExactBruteforce).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let (sa, sb) = (Site::d1(a), Site::d1(b));
                assert_relative_eq!(gm.get(&sa, &sb), gm.get(&sb, &sa), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn glauber_constants() {
        let g = glauber(0.5, 6);
        let rho = g.rho_j;
        let c = constants(&g, &rho, &Region::interval(-2, 2), OscillationMode::AnalyticBound).unwrap();
        assert_relative_eq!(c.c_gamma, 0.5 * 12.0, max_relative = 1e-12);
        let m: f64 = 2.0 * 0.5 * (1..=6).map(|k| (-(k as f64)).exp()).sum::<f64>();
        assert_relative_eq!(c.m_gamma, m, max_relative = 1e-12);
        // sup of the flip rate is attained against a fully aligned neighborhood
        assert_relative_eq!(c.c1, 1.0 / (1.0 + (-2.0 * m).exp()), max_relative = 1e-12);
        assert!(c.c1 < 1.0);
        assert!(c.m_gamma <= c.c_gamma * crate::geometry::rho_norm(&rho, 1).unwrap().value);
    }

    #[test]
    fn constants_monotone_in_beta() {
        let rho = DecayFunction::exponential(1.0).unwrap();
        let mut prev = (0.0, 0.0, 0.0);
        for beta in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let c = constants(
                &glauber(beta, 3),
                &rho,
                &Region::interval(-1, 1),
                OscillationMode::ExactBruteforce,
            )
            .unwrap();
            assert!(c.c1 >= prev.0 && c.m_gamma >= prev.1 && c.c_gamma >= prev.2);
            prev = (c.c1, c.m_gamma, c.c_gamma);
        }
    }
}
