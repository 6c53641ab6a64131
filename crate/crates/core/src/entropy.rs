//! Relative entropy of sped-up path laws, the speed-up/time-shift identity,
//! Pinsker and data-processing checks, and the finite-window attractor
//! experiment.

use std::cell::RefCell;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{minimal_cost, optimize_k};
use crate::error::{Error, Result};
use crate::exact_engine::{evolve, half_l1, l1, tv_distance, Distribution, GeneratorMatrix, Schedule, StateSpace};
use crate::geometry::{blow_up, Region};
use crate::profile::Profile;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// `ψ(λ) = λ log λ - λ + 1`.
pub fn psi<T: Real>(lam: T) -> T {
    if lam == T::zero() {
        return T::one();
    }
    lam * lam.ln() - lam + T::one()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub l1_gap: f64,
}

/// Checks `μ₀ e^{(t+τ)𝓛} = μ₀ e^{t(1+τ/t)𝓛}` to `1e-10` in ℓ¹.
pub fn speedup_semigroup_identity<T: Real>(
    gen: &GeneratorMatrix<T>,
    mu0: &Distribution<T>,
    t: T,
    tau: T,
    tol: T,
) -> Result<IdentityReport> {
    if !(t > T::zero()) {
        return Err(Error::Precondition("t must be positive".into()));
    }
    let shifted = evolve(gen, mu0, t + tau, tol)?;
    let sped = evolve(&gen.scaled(T::one() + tau / t), mu0, t, tol)?;
    let gap = to_f64(l1(&shifted.weights, &sped.weights));
    if gap > 1e-10 {
        return Err(Error::Violation(format!("speed-up identity off by {gap}")));
    }
    Ok(IdentityReport { l1_gap: gap })
}

/// Maximum integrand evaluations per [`path_entropy_speedup`] call.
pub const QUADRATURE_BUDGET: usize = 200_000;

struct Integrand<'a, T: Real> {
    gen: &'a GeneratorMatrix<T>,
    mu0: &'a Distribution<T>,
    lam: &'a Profile<T>,
    evolve_tol: T,
    calls: RefCell<usize>,
    cache: RefCell<HashMap<u64, T>>,
}

impl<T: Real> Integrand<'_, T> {
    fn at(&self, s: T) -> Result<T> {
        let key = to_f64(s).to_bits();
        if let Some(v) = self.cache.borrow().get(&key) {
            return Ok(*v);
        }
        {
            let mut calls = self.calls.borrow_mut();
            *calls += 1;
            if *calls > QUADRATURE_BUDGET {
                return Err(Error::budget(
                    "path-entropy quadrature",
                    *calls as u128,
                    QUADRATURE_BUDGET as u128,
                ));
            }
        }
        let l = self.lam.eval(s);
        let p = psi(l);
        let v = if p == T::zero() {
            T::zero()
        } else {
            let theta = self.lam.integral(T::zero(), s);
            let mu = evolve(self.gen, self.mu0, theta, self.evolve_tol)?;
            let exit = self.gen.exit_rates();
            mu.expectation(|i| exit[i]) * p
        };
        self.cache.borrow_mut().insert(key, v);
        Ok(v)
    }

    fn simpson(&self, a: T, b: T, fa: T, fm: T, fb: T) -> T {
        (b - a) / lit(6.0) * (fa + lit::<T>(4.0) * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn adapt(&self, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> Result<T> {
        let two: T = lit(2.0);
        let m = (a + b) / two;
        let lm = (a + m) / two;
        let rm = (m + b) / two;
        let flm = self.at(lm)?;
        let frm = self.at(rm)?;
        let left = self.simpson(a, m, fa, flm, fm);
        let right = self.simpson(m, b, fm, frm, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= lit::<T>(15.0) * tol {
            return Ok(left + right + err / lit(15.0));
        }
        Ok(self.adapt(a, m, fa, flm, fm, left, tol / two, depth - 1)?
            + self.adapt(m, b, fm, frm, fb, right, tol / two, depth - 1)?)
    }
}

/// `H(P^λ | P) = ∫_0^t E[R(X^λ_s)] ψ(λ(s)) ds`, where `R` is the total exit
/// rate and `X^λ_s = X_{θ(s)}` with `θ(s) = ∫_0^s λ`. The marginals are
/// exact; the time integral uses adaptive Simpson split at the profile's
/// breakpoints.
pub fn path_entropy_speedup<T: Real>(
    gen: &GeneratorMatrix<T>,
    mu0: &Distribution<T>,
    lam: &Profile<T>,
    t: T,
    tol: T,
) -> Result<T> {
    lam.check_positive(t)?;
    if !(tol > T::zero()) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    if t == T::zero() {
        return Ok(T::zero());
    }
    let integrand = Integrand {
        gen,
        mu0,
        lam,
        evolve_tol: (tol * lit(1e-3)).max(T::epsilon() * lit(16.0)),
        calls: RefCell::new(0),
        cache: RefCell::new(HashMap::new()),
    };
    let mut cuts = vec![T::zero()];
    cuts.extend(lam.breakpoints(t));
    cuts.push(t);
    let pieces = from_usize::<T>(cuts.len() - 1);
    let mut total = T::zero();
    for w in cuts.windows(2) {
        // stay strictly inside the piece so the profile is smooth on it
        let shrink = (w[1] - w[0]) * T::epsilon() * lit(8.0);
        let (a, b) = (w[0] + shrink, w[1] - shrink);
        let m = (a + b) / lit(2.0);
        let (fa, fm, fb) = (integrand.at(a)?, integrand.at(m)?, integrand.at(b)?);
        let whole = integrand.simpson(a, b, fa, fm, fb);
        total = total + integrand.adapt(a, b, fa, fm, fb, whole, tol / pieces, 40)?;
    }
    Ok(total.max(T::zero()))
}

/// `Σ μ log(μ/ν)`, `+∞` when `μ` charges a state `ν` does not.
pub fn marginal_relative_entropy<T: Real>(mu: &[T], nu: &[T]) -> T {
    let mut h = T::zero();
    for (p, q) in mu.iter().zip(nu) {
        if *p > T::zero() {
            if !(*q > T::zero()) {
                return T::infinity();
            }
            h = h + *p * (*p / *q).ln();
        }
    }
    h.max(T::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataProcessingReport {
    pub marginal_entropy: f64,
    pub path_entropy: f64,
}

/// Checks `H(μ₀e^{θ(t)𝓛} | μ₀e^{t𝓛}) ≤ H(P^λ | P) + tol`.
pub fn data_processing_check<T: Real>(
    gen: &GeneratorMatrix<T>,
    mu0: &Distribution<T>,
    lam: &Profile<T>,
    t: T,
    tol: T,
) -> Result<DataProcessingReport> {
    let evolve_tol = (tol * lit(1e-3)).max(T::epsilon() * lit(16.0));
    let sped = evolve(gen, mu0, lam.integral(T::zero(), t), evolve_tol)?;
    let base = evolve(gen, mu0, t, evolve_tol)?;
    let m = marginal_relative_entropy(&sped.weights, &base.weights);
    let p = path_entropy_speedup(gen, mu0, lam, t, tol)?;
    if m > p + tol {
        return Err(Error::Violation(format!(
            "marginal entropy {m} exceeds path entropy {p}"
        )));
    }
    Ok(DataProcessingReport {
        marginal_entropy: to_f64(m),
        path_entropy: to_f64(p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerReport {
    pub half_l1: f64,
    pub l1: f64,
    pub relative_entropy: f64,
    /// `half_l1 ≤ √(H/2)`.
    pub half_l1_holds: bool,
    /// `l1 ≤ √(2H)`.
    pub l1_holds: bool,
}

pub fn pinsker_check<T: Real>(mu: &[T], nu: &[T]) -> PinskerReport {
    let h = to_f64(marginal_relative_entropy(mu, nu));
    let d = to_f64(half_l1(mu, nu));
    let slack = 1e-12;
    PinskerReport {
        half_l1: d,
        l1: 2.0 * d,
        relative_entropy: h,
        half_l1_holds: d <= (h / 2.0).sqrt() + slack,
        l1_holds: 2.0 * d <= (2.0 * h).sqrt() + slack,
    }
}

/// Setup of the finite-window attractor experiment.
#[derive(Debug, Clone)]
pub struct AttractorSetup<'a, T> {
    pub gen: &'a GeneratorMatrix<T>,
    pub space: &'a StateSpace,
    pub mu0: &'a Distribution<T>,
    /// Reporting sub-window.
    pub lam: Region,
    pub t_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// `sup_x` total rate, for the rate-cap profile `C₁ |active(s)|`.
    pub c1: f64,
    /// Schedule `h(s) = c_speed·s + L + k_schedule` of the active region.
    pub c_speed: f64,
    pub l: f64,
    pub k_schedule: f64,
    pub alpha: f64,
    /// Traced constant of the refined restriction estimate.
    pub traced_c: f64,
    pub k_max: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttractorRow {
    pub t: f64,
    pub tau: f64,
    pub tv_exact: f64,
    pub pinsker_chain_bound: f64,
    pub combined_formula_bound: f64,
    pub k_opt: f64,
}

/// Rate-cap profile `C₁ |Λ^{h(s)} ∩ window|` for `h(s) = c·s + L + k`.
pub fn rate_cap_profile(
    lam: &Region,
    window: &Region,
    c1: f64,
    c_speed: f64,
    l: f64,
    k: f64,
    t: f64,
) -> Result<Profile<f64>> {
    let sched = Schedule::Growing {
        slope: c_speed,
        offset: l + k,
    };
    let segs = sched.segments(t);
    let mut breaks = vec![0.0];
    let mut values = Vec::new();
    for (_, s1, r) in segs {
        let n = blow_up(lam, r as f64).intersection(window).len();
        breaks.push(s1);
        values.push(c1 * n as f64);
    }
    Profile::piecewise(breaks, values)
}

/// Per `(t, τ)`: the exact ℓ¹ distance on `Λ` between `μ_t` and `μ_{t+τ}`,
/// the chain `√(2 H(P^{λ*}|P))` with the optimal speed-up for the rate-cap
/// profile, and the closed-form combined bound optimized over `k`.
pub fn attractor_demo(setup: &AttractorSetup<'_, f64>) -> Result<Vec<AttractorRow>> {
    let cells: Vec<(f64, f64)> = setup
        .t_grid
        .iter()
        .flat_map(|t| setup.tau_grid.iter().map(move |tau| (*t, *tau)))
        .collect();
    let evolve_tol = (setup.tol * 1e-3).max(1e-14);
    cells
        .par_iter()
        .map(|&(t, tau)| {
            let mu_t = evolve(setup.gen, setup.mu0, t, evolve_tol)?;
            let mu_shift = evolve(setup.gen, setup.mu0, t + tau, evolve_tol)?;
            let tv_exact = tv_distance(setup.space, &mu_t, &mu_shift, &setup.lam)?;
            let f = rate_cap_profile(
                &setup.lam,
                setup.space.region(),
                setup.c1,
                setup.c_speed,
                setup.l,
                setup.k_schedule,
                t,
            )?;
            let opt = minimal_cost(&f, t, tau)?;
            let h = path_entropy_speedup(setup.gen, setup.mu0, &opt.lam_star, t, setup.tol)?;
            let (k_opt, combined) = optimize_k(
                setup.lam.len(),
                setup.alpha,
                setup.c_speed,
                setup.l,
                t,
                tau,
                setup.traced_c,
                setup.k_max,
            )?;
            Ok(AttractorRow {
                t,
                tau,
                tv_exact,
                pinsker_chain_bound: (2.0 * h).sqrt(),
                combined_formula_bound: combined.value,
                k_opt,
            })
        })
        .collect()
}
