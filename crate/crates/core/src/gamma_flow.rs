//! The influence operator `Γβ(x) = Σ_y γ(y, x) β(y)` on `ℓ¹`, its
//! semigroup `e^{tΓ}` by certified truncated Taylor series, and the
//! propagation and spatial-decay checks built on it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{tail_sum, DecayFunction, Region, Site};
use crate::rates::{ising, InfluenceMatrix, SpinLookup};
use crate::scalar::{from_usize, lit, Real};

/// Finitely supported nonnegative function on sites.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Vector<T> {
    dim: usize,
    entries: BTreeMap<Site, T>,
}

impl<T: Real> L1Vector<T> {
    pub fn zero(dim: usize) -> Self {
        L1Vector {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn indicator(dim: usize, s: Site) -> Self {
        Self::from_entries(dim, [(s, T::one())])
    }

    /// Nonpositive entries are dropped.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (Site, T)>) -> Self {
        let mut v = Self::zero(dim);
        for (s, x) in entries {
            v.add(s, x);
        }
        v
    }

    fn add(&mut self, s: Site, x: T) {
        if x > T::zero() {
            let e = self.entries.entry(s).or_insert(T::zero());
            *e = *e + x;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, s: &Site) -> T {
        self.entries.get(s).copied().unwrap_or(T::zero())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, &T)> + '_ {
        self.entries.iter()
    }

    pub fn support(&self) -> Region {
        Region::new(self.dim, self.entries.keys().copied()).expect("entries share a dimension")
    }

    pub fn norm1(&self) -> T {
        self.entries.values().copied().sum()
    }

    pub fn sup_norm(&self) -> T {
        self.entries.values().copied().fold(T::zero(), T::max)
    }

    pub fn scaled(&self, c: T) -> Self {
        Self::from_entries(self.dim, self.entries.iter().map(|(s, x)| (*s, *x * c)))
    }

    fn to_dense(&self, gm: &InfluenceMatrix<T>) -> Result<Vec<T>> {
        let mut v = vec![T::zero(); gm.sites().len()];
        for (s, x) in &self.entries {
            let i = gm
                .index_of(s)
                .ok_or_else(|| Error::Precondition(format!("site {s} outside the ambient window")))?;
            v[i] = *x;
        }
        Ok(v)
    }

    fn from_dense(gm: &InfluenceMatrix<T>, v: &[T]) -> Self {
        Self::from_entries(gm.dim(), gm.sites().iter().copied().zip(v.iter().copied()))
    }
}

fn apply_dense<T: Real>(gm: &InfluenceMatrix<T>, v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for (y, vy) in v.iter().enumerate() {
        if *vy == T::zero() {
            continue;
        }
        for (x, g) in gm.row(y) {
            out[*x] = out[*x] + *g * *vy;
        }
    }
    out
}

/// `Γβ`, exact.
pub fn apply_gamma<T: Real>(gm: &InfluenceMatrix<T>, beta: &L1Vector<T>) -> Result<L1Vector<T>> {
    let v = beta.to_dense(gm)?;
    Ok(L1Vector::from_dense(gm, &apply_dense(gm, &v)))
}

/// Largest admissible `t·M_γ` for the Taylor expansion.
pub const FLOW_BUDGET: f64 = 50.0;

/// Smallest `N` with `Σ_{n>N} a^n/n! ≤ tol / scale`, together with the
/// certified tail bound `a^{N+1}/(N+1)! · (1 - a/(N+2))^{-1}`.
pub fn taylor_terms<T: Real>(a: T, scale: T, tol: T) -> (usize, T) {
    if a <= T::zero() || scale <= T::zero() {
        return (0, T::zero());
    }
    // term = a^{N+1}/(N+1)!
    let mut n = 0usize;
    let mut term = a;
    loop {
        let ratio = a / from_usize::<T>(n + 2);
        if ratio < T::one() {
            let tail = scale * term / (T::one() - ratio);
            if tail <= tol || n >= 100_000 {
                return (n, tail);
            }
        }
        n += 1;
        term = term * a / from_usize::<T>(n + 1);
    }
}

/// `e^{tΓ}β` with its truncation data.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult<T> {
    pub vector: L1Vector<T>,
    pub taylor_terms: usize,
    /// ℓ¹ bound on the discarded series tail.
    pub series_remainder: T,
    /// ℓ¹ bound on the infinite-volume mass outside the ambient window;
    /// present only when the flow was run with a decay certificate.
    pub boundary_leakage: Option<T>,
}

/// Decay data for which `γ(x, y) ≤ C_γ ρ(d(x, y))` and (R2) hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayCertificate<T> {
    pub rho: DecayFunction<T>,
    pub c_rho: T,
    pub c_gamma: T,
}

impl<T: Real> DecayCertificate<T> {
    pub fn rate(&self) -> T {
        self.c_gamma * self.c_rho
    }
}

fn check_budget<T: Real>(a: T) -> Result<()> {
    if !(a <= lit(FLOW_BUDGET)) {
        return Err(Error::Budget {
            what: format!("Taylor flow with t*M_gamma = {a}"),
            required: a.to_f64().map_or(u128::MAX, |x| x.ceil() as u128),
            allowed: FLOW_BUDGET as u128,
        });
    }
    Ok(())
}

fn taylor_dense<T: Real>(gm: &InfluenceMatrix<T>, v0: Vec<T>, t: T, terms: usize) -> Vec<T> {
    let mut acc = v0.clone();
    let mut term = v0;
    for n in 1..=terms {
        let scale = t / from_usize::<T>(n);
        term = apply_dense(gm, &term).into_iter().map(|x| x * scale).collect();
        for (a, x) in acc.iter_mut().zip(&term) {
            *a = *a + *x;
        }
    }
    acc
}

/// `e^{tΓ}β` by truncated Taylor series with an a priori factorial tail bound.
pub fn exp_gamma<T: Real>(gm: &InfluenceMatrix<T>, beta: &L1Vector<T>, t: T, tol: T) -> Result<FlowResult<T>> {
    if t < T::zero() || !(tol > T::zero()) {
        return Err(Error::Precondition("need t >= 0 and tol > 0".into()));
    }
    let a = t * gm.max_row_sum();
    check_budget(a)?;
    let (terms, series_remainder) = taylor_terms(a, beta.norm1(), tol);
    let v = taylor_dense(gm, beta.to_dense(gm)?, t, terms);
    Ok(FlowResult {
        vector: L1Vector::from_dense(gm, &v),
        taylor_terms: terms,
        series_remainder,
        boundary_leakage: None,
    })
}

/// Mass the infinite-volume flow from `beta` places outside the window:
/// `Σ_y β(y) C_ρ^{-1} e^{C_γ C_ρ t} Φ_ρ(d(y, W^c) - 1)`.
pub fn boundary_leakage<T: Real>(window: &Region, beta: &L1Vector<T>, cert: &DecayCertificate<T>, t: T) -> Result<T> {
    let growth = (cert.rate() * t).exp() / cert.c_rho;
    let mut total = T::zero();
    for (y, b) in beta.iter() {
        let d = window.dist_to_complement(y);
        let r = from_usize::<T>(d.saturating_sub(1) as usize);
        total = total + *b * growth * tail_sum(&cert.rho, r, window.dim())?.value;
    }
    Ok(total)
}

/// [`exp_gamma`] plus a leakage bound from the decay certificate.
pub fn exp_gamma_certified<T: Real>(
    gm: &InfluenceMatrix<T>,
    beta: &L1Vector<T>,
    t: T,
    tol: T,
    cert: &DecayCertificate<T>,
) -> Result<FlowResult<T>> {
    let mut flow = exp_gamma(gm, beta, t, tol)?;
    flow.boundary_leakage = Some(boundary_leakage(&gm.window(), beta, cert, t)?);
    Ok(flow)
}

/// The row `γ_t(y, ·)`, including the `n = 0` identity term.
pub fn kernel<T: Real>(gm: &InfluenceMatrix<T>, y: &Site, t: T, tol: T) -> Result<FlowResult<T>> {
    exp_gamma(gm, &L1Vector::indicator(gm.dim(), *y), t, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiteMargin {
    pub site: Site,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowCheckReport {
    pub t: f64,
    pub rows: Vec<SiteMargin>,
    pub series_remainder: f64,
    pub leakage: f64,
    pub worst_margin: f64,
}

impl FlowCheckReport {
    /// Every margin exceeds the combined numerical tolerance.
    pub fn clears_tolerance(&self) -> bool {
        self.worst_margin > self.series_remainder + self.leakage
    }
}

fn finish_report(t: f64, rows: Vec<SiteMargin>, series_remainder: f64, leakage: f64) -> Result<FlowCheckReport> {
    let worst_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    if let Some(bad) = rows.iter().find(|r| r.margin + series_remainder + leakage < 0.0) {
        return Err(Error::Violation(format!(
            "flow bound fails at {}: lhs {} > rhs {}",
            bad.site, bad.lhs, bad.rhs
        )));
    }
    Ok(FlowCheckReport {
        t,
        rows,
        series_remainder,
        leakage,
        worst_margin,
    })
}

/// Checks `Σ_y γ_t(x, y) / ρ(d(x, y)) ≤ C_ρ^{-1} e^{C_γ C_ρ t}` for every
/// `x` of `interior`. The left side is evaluated on the ambient window of
/// `gm`; the reported remainder bounds the weighted series tail and the
/// leakage bounds the unweighted mass beyond the window.
pub fn check_propagation<T: Real>(
    gm: &InfluenceMatrix<T>,
    cert: &DecayCertificate<T>,
    t: T,
    interior: &Region,
    tol: T,
) -> Result<FlowCheckReport> {
    let c = cert.rate();
    let rhs = (c * t).exp() / cert.c_rho;
    check_budget(t * gm.max_row_sum())?;
    // Σ_y Γ^n(x, y)/ρ(d) ≤ C_ρ^{-1} (C_γ C_ρ)^n, so the weighted tail is a factorial tail in tC
    let (n_weighted, weighted_tail) = taylor_terms(c * t, T::one() / cert.c_rho, tol);
    let (n_plain, _) = taylor_terms(t * gm.max_row_sum(), T::one(), tol);
    let terms = n_weighted.max(n_plain);
    let window = gm.window();
    let mut rows = Vec::with_capacity(interior.len());
    let mut leakage = T::zero();
    for x in interior.iter() {
        let i = gm
            .index_of(x)
            .ok_or_else(|| Error::Precondition(format!("interior site {x} outside the window")))?;
        let mut e = vec![T::zero(); gm.sites().len()];
        e[i] = T::one();
        let row = taylor_dense(gm, e, t, terms);
        let lhs: T = row.iter().zip(gm.sites()).map(|(g, y)| *g / cert.rho.at(x.l1(y))).sum();
        let ind = L1Vector::indicator(gm.dim(), *x);
        leakage = leakage.max(boundary_leakage(&window, &ind, cert, t)?);
        rows.push(SiteMargin {
            site: *x,
            lhs: lhs.to_f64().unwrap_or(f64::NAN),
            rhs: rhs.to_f64().unwrap_or(f64::NAN),
            margin: (rhs - lhs).to_f64().unwrap_or(f64::NAN),
        });
    }
    finish_report(
        t.to_f64().unwrap_or(f64::NAN),
        rows,
        weighted_tail.to_f64().unwrap_or(f64::NAN),
        leakage.to_f64().unwrap_or(f64::NAN),
    )
}

/// Checks `e^{tΓ}β(x) ≤ ‖β‖_∞ C_ρ^{-1} e^{C_γ C_ρ t} ρ(dist(x, Λ_β))` at every
/// site of `report_on`.
pub fn spread_bound_check<T: Real>(
    gm: &InfluenceMatrix<T>,
    cert: &DecayCertificate<T>,
    beta: &L1Vector<T>,
    t: T,
    report_on: &Region,
    tol: T,
) -> Result<FlowCheckReport> {
    let flow = exp_gamma_certified(gm, beta, t, tol, cert)?;
    let support = beta.support();
    let scale = beta.sup_norm() * (cert.rate() * t).exp() / cert.c_rho;
    let mut rows = Vec::with_capacity(report_on.len());
    for x in report_on.iter() {
        let lhs = flow.vector.get(x);
        let rhs = scale * cert.rho.at(support.dist_to(x)?);
        rows.push(SiteMargin {
            site: *x,
            lhs: lhs.to_f64().unwrap_or(f64::NAN),
            rhs: rhs.to_f64().unwrap_or(f64::NAN),
            margin: (rhs - lhs).to_f64().unwrap_or(f64::NAN),
        });
    }
    finish_report(
        t.to_f64().unwrap_or(f64::NAN),
        rows,
        flow.series_remainder.to_f64().unwrap_or(f64::NAN),
        flow.boundary_leakage.and_then(|l| l.to_f64()).unwrap_or(0.0),
    )
}

/// A function of the spins on a finite set of sites, stored as a table
/// indexed little-endian: the value at site `i` (in region order) is digit
/// `i` in base `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservable<T> {
    region: Region,
    q: u8,
    table: Vec<T>,
}

/// Largest support accepted by [`LocalObservable`].
pub const OBSERVABLE_MAX_SITES: usize = 16;

impl<T: Real> LocalObservable<T> {
    pub fn from_fn(region: Region, q: u8, mut f: impl FnMut(&[u8]) -> T) -> Result<Self> {
        if region.len() > OBSERVABLE_MAX_SITES {
            return Err(Error::budget(
                "observable support",
                region.len() as u128,
                OBSERVABLE_MAX_SITES as u128,
            ));
        }
        let n = (q as usize).pow(region.len() as u32);
        let mut vals = vec![0u8; region.len()];
        let table = (0..n)
            .map(|mut idx| {
                for v in vals.iter_mut() {
                    *v = (idx % q as usize) as u8;
                    idx /= q as usize;
                }
                f(&vals)
            })
            .collect();
        Ok(LocalObservable { region, q, table })
    }

    /// The Ising spin `±1` at `s` (q = 2).
    pub fn spin(dim: usize, s: Site) -> Self {
        Self::from_fn(Region::singleton(dim, s), 2, |v| lit(ising(v[0]))).expect("one site")
    }

    pub fn constant(dim: usize, c: T) -> Self {
        LocalObservable {
            region: Region::empty(dim),
            q: 2,
            table: vec![c],
        }
    }

    /// Pointwise product; the support is the union of supports.
    pub fn product(&self, other: &Self) -> Result<Self> {
        let region = self.region.union(&other.region);
        let sites: Vec<Site> = region.iter().copied().collect();
        let pick = |r: &Region| -> Vec<usize> {
            r.iter()
                .map(|s| sites.iter().position(|u| u == s).expect("subset of union"))
                .collect()
        };
        let (ia, ib) = (pick(&self.region), pick(&other.region));
        Self::from_fn(region, self.q.max(other.q), |v| {
            let a: Vec<u8> = ia.iter().map(|&i| v[i]).collect();
            let b: Vec<u8> = ib.iter().map(|&i| v[i]).collect();
            self.value(&a) * other.value(&b)
        })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    /// Value on local spins listed in region order.
    pub fn value(&self, local: &[u8]) -> T {
        let mut idx = 0usize;
        for v in local.iter().rev() {
            idx = idx * self.q as usize + *v as usize;
        }
        self.table[idx]
    }

    pub fn eval(&self, eta: &dyn SpinLookup) -> T {
        let local: Vec<u8> = self.region.iter().map(|s| eta.spin(s)).collect();
        self.value(&local)
    }

    pub fn sup_norm(&self) -> T {
        self.table.iter().map(|x| x.abs()).fold(T::zero(), T::max)
    }
}

/// `δ_x(f)` for every `x` in the support of `f`, by exhaustive comparison
/// of configurations differing only at `x`.
pub fn delta_vector<T: Real>(f: &LocalObservable<T>) -> L1Vector<T> {
    let q = f.q as usize;
    let n = f.region.len();
    let mut out = Vec::with_capacity(n);
    for (pos, site) in f.region.iter().enumerate() {
        let stride = q.pow(pos as u32);
        let mut best = T::zero();
        for idx in 0..f.table.len() {
            if !(idx / stride).is_multiple_of(q) {
                continue;
            }
            for i in 0..q {
                for j in (i + 1)..q {
                    let d = (f.table[idx + i * stride] - f.table[idx + j * stride]).abs();
                    best = best.max(d);
                }
            }
        }
        out.push((*site, best));
    }
    L1Vector::from_entries(f.region.dim(), out)
}

/// `|||f||| = Σ_x δ_x(f)`.
pub fn triple_norm<T: Real>(f: &LocalObservable<T>) -> T {
    delta_vector(f).norm1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{influence_matrix, GlauberIsing, OscillationMode};
    use approx::assert_relative_eq;

    fn adjacency(r: i64) -> InfluenceMatrix<f64> {
        InfluenceMatrix::from_fn(&Region::interval(-r, r), |y, x| if y.l1(x) == 1 { 1.0 } else { 0.0 })
    }

    #[test]
    fn zero_matrix_flow_is_identity() {
        let gm = InfluenceMatrix::from_fn(&Region::interval(-3, 3), |_, _| 0.0);
        let b = L1Vector::from_entries(1, [(Site::d1(0), 2.0), (Site::d1(1), 0.5)]);
        assert_eq!(apply_gamma(&gm, &b).unwrap().norm1(), 0.0);
        let f = exp_gamma(&gm, &b, 3.0, 1e-12).unwrap();
        assert_eq!(f.vector, b);
        assert_eq!(f.taylor_terms, 0);
        assert_eq!(f.series_remainder, 0.0);
    }

    #[test]
    fn adjacency_action() {
        let gm = adjacency(3);
        let v = apply_gamma(&gm, &L1Vector::indicator(1, Site::d1(0))).unwrap();
        assert_eq!(v, L1Vector::from_entries(1, [(Site::d1(-1), 1.0), (Site::d1(1), 1.0)]));
    }

    #[test]
    fn support_outside_window_is_rejected() {
        let gm = adjacency(2);
        assert!(apply_gamma(&gm, &L1Vector::indicator(1, Site::d1(5))).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let gm = adjacency(5);
        let err = exp_gamma(&gm, &L1Vector::indicator(1, Site::d1(0)), 30.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn taylor_tail_meets_tolerance() {
        for a in [0.1, 1.0, 5.0, 20.0, 50.0] {
            let (n, tail) = taylor_terms(a, 1.0f64, 1e-12);
            assert!(tail <= 1e-12);
            let direct: f64 = (n + 1..n + 400)
                .map(|k| (k as f64 * a.ln() - (1..=k).map(|j| (j as f64).ln()).sum::<f64>()).exp())
                .sum();
            assert!(direct <= tail * (1.0 + 1e-9), "a={a}: {direct} > {tail}");
        }
    }

    #[test]
    fn kernel_at_zero_time() {
        let gm = adjacency(3);
        let k = kernel(&gm, &Site::d1(1), 0.0, 1e-12).unwrap();
        assert_eq!(k.vector, L1Vector::indicator(1, Site::d1(1)));
    }

    #[test]
    fn delta_examples() {
        let s0 = LocalObservable::<f64>::spin(1, Site::d1(0));
        assert_eq!(triple_norm(&s0), 2.0);
        let c = LocalObservable::constant(1, 3.0);
        assert_eq!(triple_norm(&c), 0.0);
        let prod = s0.product(&LocalObservable::spin(1, Site::d1(1))).unwrap();
        let d = delta_vector(&prod);
        assert_eq!(d.get(&Site::d1(0)), 2.0);
        assert_eq!(d.get(&Site::d1(1)), 2.0);
        assert_eq!(triple_norm(&prod), 4.0);
    }

    #[test]
    fn observable_budget() {
        let r = Region::interval(0, 16);
        assert!(LocalObservable::<f64>::from_fn(r, 2, |_| 0.0).is_err());
    }

    #[test]
    fn glauber_propagation_passes() {
        let g = GlauberIsing {
            beta: 0.5,
            rho_j: DecayFunction::exponential(1.0).unwrap(),
            r_j: 6,
            dim: 1,
        };
        let gm = influence_matrix(&g, &Region::interval(-30, 30), OscillationMode::AnalyticBound).unwrap();
        let cert = DecayCertificate {
            rho: g.rho_j,
            c_rho: 1.0,
            c_gamma: 6.0,
        };
        let rep = check_propagation(&gm, &cert, 1.0, &Region::interval(-2, 2), 1e-12).unwrap();
        assert!(rep.clears_tolerance());
        let at0 = check_propagation(&gm, &cert, 0.0, &Region::singleton(1, Site::d1(0)), 1e-12).unwrap();
        assert_relative_eq!(at0.rows[0].lhs, 1.0);
        assert_relative_eq!(at0.rows[0].margin, 0.0);
    }
}
