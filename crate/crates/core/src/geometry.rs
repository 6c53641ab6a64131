//! Lattice geometry on `Z^d` (`d` in {1, 2}) with the ℓ¹ metric, decay
//! functions and the geometric constants entering the bounds.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Real};

/// A lattice site. One-dimensional sites keep the second coordinate at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub coords: [i64; 2],
}

impl Site {
    pub const fn d1(x: i64) -> Self {
        Site { coords: [x, 0] }
    }

    pub const fn d2(x: i64, y: i64) -> Self {
        Site { coords: [x, y] }
    }

    pub fn l1(&self, other: &Site) -> u64 {
        self.coords[0].abs_diff(other.coords[0]) + self.coords[1].abs_diff(other.coords[1])
    }

    /// Parity of the coordinate sum, used by alternating boundary patterns.
    pub fn is_even(&self) -> bool {
        (self.coords[0] + self.coords[1]).rem_euclid(2) == 0
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.coords[0], self.coords[1])
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("dimension {dim}")))
    }
}

/// A finite set of sites sharing a dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Region {
    dim: usize,
    sites: BTreeSet<Site>,
}

impl Region {
    pub fn new(dim: usize, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        check_dim(dim)?;
        let sites: BTreeSet<Site> = sites.into_iter().collect();
        if dim == 1 && sites.iter().any(|s| s.coords[1] != 0) {
            return Err(Error::Precondition(
                "one-dimensional region with nonzero second coordinate".into(),
            ));
        }
        Ok(Region { dim, sites })
    }

    pub fn empty(dim: usize) -> Self {
        Region {
            dim,
            sites: BTreeSet::new(),
        }
    }

    pub fn singleton(dim: usize, site: Site) -> Self {
        Region {
            dim,
            sites: BTreeSet::from([site]),
        }
    }

    /// `{a, a+1, ..., b}` on the line.
    pub fn interval(a: i64, b: i64) -> Self {
        Region {
            dim: 1,
            sites: (a..=b).map(Site::d1).collect(),
        }
    }

    /// Centered window: `[-r, r]` in one dimension, `[-r, r]^2` in two.
    pub fn centered_box(dim: usize, r: i64) -> Result<Self> {
        check_dim(dim)?;
        let sites = if dim == 1 {
            (-r..=r).map(Site::d1).collect()
        } else {
            (-r..=r).flat_map(|x| (-r..=r).map(move |y| Site::d2(x, y))).collect()
        };
        Ok(Region { dim, sites })
    }

    /// ℓ¹ ball of integer radius around a site.
    pub fn ball(dim: usize, center: Site, r: u64) -> Result<Self> {
        check_dim(dim)?;
        let r = r as i64;
        let mut sites = BTreeSet::new();
        if dim == 1 {
            for dx in -r..=r {
                sites.insert(Site::d1(center.coords[0] + dx));
            }
        } else {
            for dx in -r..=r {
                let rest = r - dx.abs();
                for dy in -rest..=rest {
                    sites.insert(Site::d2(center.coords[0] + dx, center.coords[1] + dy));
                }
            }
        }
        Ok(Region { dim, sites })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.sites.contains(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Site> + '_ {
        self.sites.iter()
    }

    pub fn sites(&self) -> &BTreeSet<Site> {
        &self.sites
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.sites.is_subset(&other.sites)
    }

    pub fn intersection(&self, other: &Region) -> Region {
        Region {
            dim: self.dim,
            sites: self.sites.intersection(&other.sites).copied().collect(),
        }
    }

    pub fn union(&self, other: &Region) -> Region {
        Region {
            dim: self.dim,
            sites: self.sites.union(&other.sites).copied().collect(),
        }
    }

    pub fn difference(&self, other: &Region) -> Region {
        Region {
            dim: self.dim,
            sites: self.sites.difference(&other.sites).copied().collect(),
        }
    }

    /// Largest pairwise ℓ¹ distance; 0 for singletons and the empty set.
    pub fn diameter(&self) -> u64 {
        let mut best = 0;
        for a in &self.sites {
            for b in &self.sites {
                best = best.max(a.l1(b));
            }
        }
        best
    }

    /// Distance from a site to the region.
    pub fn dist_to(&self, x: &Site) -> Result<u64> {
        self.sites.iter().map(|s| s.l1(x)).min().ok_or(Error::EmptyRegion)
    }

    /// Smallest ℓ¹ distance from `x` to a site outside the region.
    pub fn dist_to_complement(&self, x: &Site) -> u64 {
        let mut r = 0u64;
        loop {
            let shell = sphere(self.dim, *x, r);
            if shell.iter().any(|s| !self.sites.contains(s)) {
                return r;
            }
            r += 1;
        }
    }
}

fn sphere(dim: usize, c: Site, r: u64) -> Vec<Site> {
    let r = r as i64;
    if r == 0 {
        return vec![c];
    }
    if dim == 1 {
        return vec![Site::d1(c.coords[0] - r), Site::d1(c.coords[0] + r)];
    }
    let mut out = Vec::with_capacity(4 * r as usize);
    for dx in -r..=r {
        let dy = r - dx.abs();
        out.push(Site::d2(c.coords[0] + dx, c.coords[1] + dy));
        if dy != 0 {
            out.push(Site::d2(c.coords[0] + dx, c.coords[1] - dy));
        }
    }
    out
}

/// `dist(a, b) = min` of ℓ¹ distances over site pairs.
pub fn dist(a: &Region, b: &Region) -> Result<u64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(a.dim, b.dim));
    }
    let mut best: Option<u64> = None;
    for u in &a.sites {
        for v in &b.sites {
            let d = u.l1(v);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best.ok_or(Error::EmptyRegion)
}

/// Integer radius used for membership in `Λ^h`: `floor(h)`, or `None` when `h < 0`.
pub fn blow_up_radius(h: f64) -> Option<u64> {
    if h < 0.0 || !h.is_finite() {
        None
    } else {
        Some(h.floor() as u64)
    }
}

/// `Λ^h = {u : dist(u, Λ) ≤ h}`.
pub fn blow_up(lam: &Region, h: f64) -> Region {
    let Some(r) = blow_up_radius(h) else {
        return Region::empty(lam.dim);
    };
    let mut sites = BTreeSet::new();
    for c in &lam.sites {
        let ball = Region::ball(lam.dim, *c, r).expect("dimension already validated");
        sites.extend(ball.sites);
    }
    Region { dim: lam.dim, sites }
}

/// Number of sites of `Z^dim` at ℓ¹ distance exactly `r ≥ 1` from a fixed site.
pub fn shell_count(dim: usize, r: u64) -> Result<u64> {
    check_dim(dim)?;
    if r == 0 {
        return Err(Error::Precondition("shell radius must be positive".into()));
    }
    Ok(if dim == 1 { 2 } else { 4 * r })
}

/// Decay weight `ρ(r)` on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayFunction<T> {
    /// `e^{-αr}`
    Exponential { alpha: T },
    /// `(1+r)^{-α}`
    PowerLaw { alpha: T },
}

impl<T: Real> DecayFunction<T> {
    pub fn exponential(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::Precondition("decay rate must be positive".into()));
        }
        Ok(DecayFunction::Exponential { alpha })
    }

    pub fn power_law(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(Error::Precondition("decay exponent must be positive".into()));
        }
        Ok(DecayFunction::PowerLaw { alpha })
    }

    pub fn alpha(&self) -> T {
        match *self {
            DecayFunction::Exponential { alpha } | DecayFunction::PowerLaw { alpha } => alpha,
        }
    }

    pub fn eval(&self, r: T) -> T {
        match *self {
            DecayFunction::Exponential { alpha } => (-alpha * r).exp(),
            DecayFunction::PowerLaw { alpha } => (T::one() + r).powf(-alpha),
        }
    }

    pub fn at(&self, r: u64) -> T {
        self.eval(lit(r as f64))
    }

    /// Whether `Σ_y ρ(d(x, y))` is finite on `Z^dim`.
    pub fn summable(&self, dim: usize) -> bool {
        match *self {
            DecayFunction::Exponential { .. } => true,
            DecayFunction::PowerLaw { alpha } => alpha > from_usize(dim),
        }
    }
}

/// An upper bound on a lattice tail sum. `value` already includes `remainder`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSum<T> {
    pub value: T,
    pub remainder: T,
    pub truncation_radius: u64,
}

const POWER_LAW_TERMS: u64 = 4096;

/// `Φ(r) = Σ_{y : d(x,y) > r} ρ(d(x,y))`, the same for every `x` on `Z^dim`.
///
/// The exponential kind is summed in closed form. The power-law kind sums
/// [`POWER_LAW_TERMS`] shells explicitly and bounds the rest by comparing
/// `N(k)(1+k)^{-α} ≤ c_d (1+k)^{d-1-α}` with its integral.
pub fn tail_sum<T: Real>(rho: &DecayFunction<T>, r: T, dim: usize) -> Result<TailSum<T>> {
    check_dim(dim)?;
    if r < T::zero() {
        return Err(Error::Precondition("tail radius must be nonnegative".into()));
    }
    if !rho.summable(dim) {
        return Err(Error::R4Fails(format!(
            "power-law exponent {} does not exceed dimension {dim}",
            rho.alpha()
        )));
    }
    // first shell strictly beyond r
    let m = r.floor().to_u64().unwrap_or(u64::MAX - 1) + 1;
    match *rho {
        DecayFunction::Exponential { alpha } => {
            let q = (-alpha).exp();
            let qm = (-alpha * lit(m as f64)).exp();
            let one = T::one();
            let value = if dim == 1 {
                lit::<T>(2.0) * qm / (one - q)
            } else {
                let mf: T = lit(m as f64);
                lit::<T>(4.0) * qm * (mf * (one - q) + q) / ((one - q) * (one - q))
            };
            Ok(TailSum {
                value,
                remainder: T::zero(),
                truncation_radius: m,
            })
        }
        DecayFunction::PowerLaw { alpha } => {
            let last = m + POWER_LAW_TERMS;
            let mut partial = T::zero();
            for k in m..=last {
                let n: T = lit(shell_count(dim, k)? as f64);
                partial = partial + n * rho.at(k);
            }
            let one = T::one();
            let base = one + lit::<T>(last as f64);
            let remainder = if dim == 1 {
                lit::<T>(2.0) * base.powf(one - alpha) / (alpha - one)
            } else {
                let two: T = lit(2.0);
                lit::<T>(4.0) * base.powf(two - alpha) / (alpha - two)
            };
            Ok(TailSum {
                value: partial + remainder,
                remainder,
                truncation_radius: last,
            })
        }
    }
}

/// `‖ρ‖ = ρ(0) + Φ(0)`.
pub fn rho_norm<T: Real>(rho: &DecayFunction<T>, dim: usize) -> Result<TailSum<T>> {
    let t = tail_sum(rho, T::zero(), dim)?;
    Ok(TailSum {
        value: rho.eval(T::zero()) + t.value,
        ..t
    })
}

/// `Σ_{x : dist(x, Λ) > r} ρ(dist(x, Λ))` for a finite region, summed exactly
/// up to an enumeration radius with the rest bounded by `|Λ| Φ(R)`.
pub fn region_tail_sum<T: Real>(rho: &DecayFunction<T>, lam: &Region, r: T) -> Result<TailSum<T>> {
    if lam.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let dim = lam.dim();
    if !rho.summable(dim) {
        return Err(Error::R4Fails(format!(
            "power-law exponent {} does not exceed dimension {dim}",
            rho.alpha()
        )));
    }
    if r < T::zero() {
        // every site counts
        let inner = region_tail_sum(rho, lam, T::zero())?;
        return Ok(TailSum {
            value: inner.value + from_usize::<T>(lam.len()) * rho.eval(T::zero()),
            ..inner
        });
    }
    let m = r.floor().to_u64().unwrap_or(u64::MAX - 1) + 1;
    let extra = if dim == 1 { 200 } else { 60 };
    let big_r = m + extra;
    let mut counts = vec![0u64; (big_r - m + 1) as usize];
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for s in lam.iter() {
        for i in 0..dim {
            lo[i] = lo[i].min(s.coords[i]);
            hi[i] = hi[i].max(s.coords[i]);
        }
    }
    let pad = big_r as i64;
    let (ylo, yhi) = if dim == 1 { (0, 0) } else { (lo[1] - pad, hi[1] + pad) };
    for x in (lo[0] - pad)..=(hi[0] + pad) {
        for y in ylo..=yhi {
            let d = lam.dist_to(&Site::d2(x, y))?;
            if d >= m && d <= big_r {
                counts[(d - m) as usize] += 1;
            }
        }
    }
    let mut exact = T::zero();
    for (i, c) in counts.iter().enumerate() {
        if *c > 0 {
            exact = exact + lit::<T>(*c as f64) * rho.at(m + i as u64);
        }
    }
    let rest = tail_sum(rho, lit(big_r as f64), dim)?;
    let remainder = from_usize::<T>(lam.len()) * rest.value;
    Ok(TailSum {
        value: exact + remainder,
        remainder,
        truncation_radius: big_r,
    })
}

/// Result of checking `ρ(a)ρ(b) ≤ C_ρ ρ(c)` on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CRhoCertificate<T> {
    pub c_rho: T,
    pub triples_checked: usize,
    pub worst_ratio: T,
}

/// `C_ρ = 1` for both shipped kinds; the grid over `(a, b, c)` with
/// `c ≤ a + b` is a certificate, never the source of the value.
pub fn certify_c_rho<T: Real>(rho: &DecayFunction<T>, grid_radius: T) -> Result<CRhoCertificate<T>> {
    let c_rho = T::one();
    let step: T = lit(0.5);
    let n = (grid_radius / step).floor().to_usize().unwrap_or(0);
    let slack: T = lit(1e-12);
    let mut worst = T::zero();
    let mut checked = 0usize;
    for i in 0..=n {
        let a = step * from_usize(i);
        for j in 0..=n {
            let b = step * from_usize(j);
            let lhs = rho.eval(a) * rho.eval(b);
            // ρ is non-increasing, so c = a + b is the binding case; a few smaller c as well
            for c in [a + b, (a + b) * lit(0.5), a.max(b), T::zero()] {
                let ratio = lhs / rho.eval(c);
                worst = worst.max(ratio);
                checked += 1;
                if ratio > c_rho * (T::one() + slack) {
                    return Err(Error::InternalConsistency(format!(
                        "rho(a)rho(b) > C_rho rho(c) at a={a}, b={b}, c={c}"
                    )));
                }
            }
        }
    }
    Ok(CRhoCertificate {
        c_rho,
        triples_checked: checked,
        worst_ratio: worst,
    })
}

/// Shape of the admissible update regions counted by [`c_sl`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    SingleSite,
    AllDiamLtL,
}

const C_SL_MAX_BITS: usize = 24;

/// `C_{S,L}`: the number of admissible update regions containing a site.
pub fn c_sl(dim: usize, l: f64, shape: RegionShape) -> Result<u64> {
    check_dim(dim)?;
    if !(l > 0.0) {
        return Err(Error::Precondition("L must be positive".into()));
    }
    match shape {
        RegionShape::SingleSite => Ok(1),
        RegionShape::AllDiamLtL => {
            // integer distances below L are at most ceil(L) - 1
            let radius = (l.ceil() as u64).saturating_sub(1);
            let origin = Site::d2(0, 0);
            let others: Vec<Site> = Region::ball(dim, origin, radius)?
                .iter()
                .copied()
                .filter(|s| *s != origin)
                .collect();
            if others.len() > C_SL_MAX_BITS {
                return Err(Error::budget(
                    "C_{S,L} enumeration (sites in ball)",
                    others.len() as u128,
                    C_SL_MAX_BITS as u128,
                ));
            }
            let mut count = 0u64;
            for mask in 0u64..(1u64 << others.len()) {
                let mut members = vec![origin];
                members.extend(
                    others
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, s)| *s),
                );
                let ok = members.iter().all(|a| members.iter().all(|b| (a.l1(b) as f64) < l));
                if ok {
                    count += 1;
                }
            }
            Ok(count)
        }
    }
}

/// Geometric constants for one decay function, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConstants<T> {
    pub c_rho: T,
    pub rho_norm: TailSum<T>,
    pub c_sl: u64,
}

impl<T: Real> GeometryConstants<T> {
    pub fn certify(rho: &DecayFunction<T>, dim: usize, l: f64, shape: RegionShape) -> Result<Self> {
        let cert = certify_c_rho(rho, lit(20.0))?;
        Ok(GeometryConstants {
            c_rho: cert.c_rho,
            rho_norm: rho_norm(rho, dim)?,
            c_sl: c_sl(dim, l, shape)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dist_examples() {
        let a = Region::singleton(1, Site::d1(0));
        let b = Region::singleton(1, Site::d1(3));
        assert_eq!(dist(&a, &b).unwrap(), 3);
        let c = Region::new(1, [Site::d1(0), Site::d1(5)]).unwrap();
        assert_eq!(dist(&a, &c).unwrap(), 0);
        let p = Region::singleton(2, Site::d2(0, 0));
        let q = Region::singleton(2, Site::d2(2, 3));
        assert_eq!(dist(&p, &q).unwrap(), 5);
        assert!(matches!(dist(&a, &Region::empty(1)), Err(Error::EmptyRegion)));
        assert!(matches!(dist(&a, &p), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn blow_up_examples() {
        let o = Region::singleton(1, Site::d1(0));
        assert_eq!(blow_up(&o, 2.0), Region::interval(-2, 2));
        assert_eq!(blow_up(&o, 0.0), o);
        assert_eq!(blow_up(&o, 2.999), Region::interval(-2, 2));
        let o2 = Region::singleton(2, Site::d2(0, 0));
        let cross = blow_up(&o2, 1.0);
        assert_eq!(cross.len(), 5);
        assert!(cross.contains(&Site::d2(0, -1)));
    }

    #[test]
    fn shell_count_examples() {
        assert_eq!(shell_count(1, 7).unwrap(), 2);
        assert_eq!(shell_count(2, 1).unwrap(), 4);
        assert!(shell_count(3, 1).is_err());
        // brute-force count of the radius-3 shell
        let brute = (-3i64..=3)
            .flat_map(|x| (-3i64..=3).map(move |y| (x, y)))
            .filter(|(x, y)| x.abs() + y.abs() == 3)
            .count();
        assert_eq!(brute, 12);
        assert_eq!(shell_count(2, 3).unwrap(), 12);
    }

    #[test]
    fn tail_sum_examples() {
        let rho = DecayFunction::exponential(1.0).unwrap();
        let e = std::f64::consts::E;
        let t = tail_sum(&rho, 2.0, 1).unwrap();
        assert_relative_eq!(t.value, 2.0 * e.powi(-3) / (1.0 - 1.0 / e), max_relative = 1e-14);
        assert_relative_eq!(t.value, 0.15752, epsilon = 1e-5);
        let t0 = tail_sum(&rho, 0.0, 1).unwrap();
        assert_relative_eq!(t0.value, 1.16395, epsilon = 1e-5);
        let bad = DecayFunction::power_law(0.5).unwrap();
        assert!(matches!(tail_sum(&bad, 1.0, 1), Err(Error::R4Fails(_))));
    }

    #[test]
    fn exponential_tail_matches_bruteforce_window() {
        for dim in [1, 2] {
            for alpha in [0.7, 1.0, 2.5] {
                let rho = DecayFunction::exponential(alpha).unwrap();
                for r in [0.0, 1.0, 2.5, 7.0] {
                    let closed = tail_sum(&rho, r, dim).unwrap().value;
                    let mut brute = 0.0;
                    for k in 1..=200u64 {
                        if (k as f64) > r {
                            brute += shell_count(dim, k).unwrap() as f64 * rho.at(k);
                        }
                    }
                    assert!((closed - brute).abs() <= 1e-12, "{dim} {alpha} {r}");
                }
            }
        }
    }

    #[test]
    fn power_law_tail_is_an_upper_bound() {
        let rho = DecayFunction::power_law(3.0).unwrap();
        let t = tail_sum(&rho, 2.0, 2).unwrap();
        let mut brute = 0.0;
        for k in 3..=20000u64 {
            brute += 4.0 * k as f64 * rho.at(k);
        }
        assert!(t.value >= brute);
        assert!(t.value - brute < 1e-3);
        assert!(t.remainder > 0.0);
    }

    #[test]
    fn c_rho_examples() {
        let e = DecayFunction::exponential(2.0).unwrap();
        assert_eq!(certify_c_rho(&e, 10.0).unwrap().c_rho, 1.0);
        let p1 = DecayFunction::power_law(1.0).unwrap();
        assert_eq!(certify_c_rho(&p1, 10.0).unwrap().c_rho, 1.0);
        let p3 = DecayFunction::power_law(3.0).unwrap();
        let cert = certify_c_rho(&p3, 50.0).unwrap();
        assert_eq!(cert.c_rho, 1.0);
        assert!(cert.worst_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn c_sl_examples() {
        assert_eq!(c_sl(1, 5.0, RegionShape::SingleSite).unwrap(), 1);
        // regions containing 0 with diameter < 2: {0}, {-1,0}, {0,1}
        assert_eq!(c_sl(1, 2.0, RegionShape::AllDiamLtL).unwrap(), 3);
        assert_eq!(c_sl(2, 1.0, RegionShape::AllDiamLtL).unwrap(), 1);
        assert!(matches!(
            c_sl(2, 5.0, RegionShape::AllDiamLtL),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn region_tail_sum_matches_single_site_tail() {
        let rho = DecayFunction::exponential(1.0).unwrap();
        let lam = Region::singleton(1, Site::d1(0));
        let a = region_tail_sum(&rho, &lam, 1.0).unwrap();
        let b = tail_sum(&rho, 1.0, 1).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-12);
        let two = Region::interval(0, 1);
        let c = region_tail_sum(&rho, &two, 1.0).unwrap();
        assert_relative_eq!(c.value, b.value, max_relative = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let rho = DecayFunction::<f32>::exponential(1.0).unwrap();
        let t = tail_sum(&rho, 2.0f32, 1).unwrap();
        assert!((t.value - 0.15752).abs() < 1e-5);
    }
}
