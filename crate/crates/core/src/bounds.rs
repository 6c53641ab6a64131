//! Right-hand sides of the restriction, correlation, mixing, entropy and
//! attractor estimates, with the constants the proofs leave implicit traced
//! explicitly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_engine::Schedule;
use crate::geometry::{region_tail_sum, DecayFunction, Region};
use crate::profile::{weighted_square_integral, Profile};
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The formula is stated with all constants explicit.
    Explicit,
    /// Constants reconstructed step by step from the argument.
    ProofTraced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub formula_id: &'static str,
    pub value: f64,
    pub inputs: Vec<(String, f64)>,
    pub provenance: Provenance,
    /// Multiplicative factors, one per inequality step, for traced constants.
    pub factors: Vec<(String, f64)>,
}

impl BoundReport {
    fn explicit<T: Real>(formula_id: &'static str, value: T, inputs: &[(&str, T)]) -> Self {
        BoundReport {
            formula_id,
            value: to_f64(value),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), to_f64(*v))).collect(),
            provenance: Provenance::Explicit,
            factors: Vec::new(),
        }
    }
}

fn require_positive<T: Real>(pairs: &[(&str, T)]) -> Result<()> {
    for (name, v) in pairs {
        if !(*v > T::zero()) || !v.is_finite() {
            return Err(Error::Precondition(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

/// `Σ_{x ∉ Λ^{h-L}} ρ(dist(x, Λ))`, by exact summation with a certified remainder.
pub fn restriction_tail<T: Real>(rho: &DecayFunction<T>, lam: &Region, h: T, l: T) -> Result<T> {
    Ok(region_tail_sum(rho, lam, (h - l).max(T::zero()))?.value)
}

/// `‖f‖∞ C₁ C_{S,L} / (C_ρ² C_γ) · e^{C_γ C_ρ t} · tail`.
#[allow(clippy::too_many_arguments)]
pub fn thm_restriction_bound<T: Real>(
    f_inf: T,
    c1: T,
    c_sl: T,
    c_rho: T,
    c_gamma: T,
    t: T,
    tail: T,
) -> Result<BoundReport> {
    require_positive(&[("c1", c1), ("c_sl", c_sl), ("c_rho", c_rho), ("c_gamma", c_gamma)])?;
    if f_inf < T::zero() || t < T::zero() || tail < T::zero() {
        return Err(Error::Precondition("f_inf, t and tail must be nonnegative".into()));
    }
    let value = f_inf * c1 * c_sl / (c_rho * c_rho * c_gamma) * (c_gamma * c_rho * t).exp() * tail;
    Ok(BoundReport::explicit(
        "thm_restriction_bound",
        value,
        &[
            ("f_inf", f_inf),
            ("c1", c1),
            ("c_sl", c_sl),
            ("c_rho", c_rho),
            ("c_gamma", c_gamma),
            ("t", t),
            ("tail", tail),
        ],
    ))
}

/// Inputs of the traced constant of the refined restriction estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedInputs<T> {
    pub c1: T,
    pub c_gamma: T,
    pub c_rho: T,
    /// Regions containing a site with diameter `< L`.
    pub c_sl: T,
    pub l: T,
}

/// The shrinking restriction `h(s) = 2 C_ρ C_γ/α · (t - s) + L + 1 + k`
/// under which [`prop_refined_bound`] is valid.
pub fn refined_schedule<T: Real>(inputs: &RefinedInputs<T>, alpha: T, k: T, t: T) -> Schedule {
    Schedule::Shrinking {
        slope: to_f64(lit::<T>(2.0) * inputs.c_rho * inputs.c_gamma / alpha),
        t_end: to_f64(t),
        offset: to_f64(inputs.l + T::one() + k),
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `C|Λ| e^{-αk} k^{d-1}` for exponential `ρ(r) = e^{-αr}`, with `C` traced:
///
/// * `2|Λ|` bounds `|||f|||` for `Λ`-local `f` with `‖f‖∞ ≤ 1`;
/// * `C₁ C_{S,L} / C_ρ` from the generator difference and the spread bound;
/// * `c_d` sites per shell at distance `r` is at most `c_d r^{d-1}` (`c_1 = 2`, `c_2 = 4`);
/// * `α^{-d} e (d-1)!` from the shell sum as an integral and the incomplete Gamma bound;
/// * `α^{d-1}` from `(2C_ρC_γ u + αk)^{d-1} ≤ (αk)^{d-1}(1 + 2C_ρC_γ u)^{d-1}`, valid as `αk ≥ 1`;
/// * `K_d / (C_γ C_ρ)` with `K_d = Σ_j binom(d-1, j) 2^j j!` from the time integral.
pub fn prop_refined_bound<T: Real>(
    dim: usize,
    alpha: T,
    k: T,
    lam_size: usize,
    inputs: &RefinedInputs<T>,
) -> Result<BoundReport> {
    if !(1..=2).contains(&dim) {
        return Err(Error::Unsupported(format!("dimension {dim}")));
    }
    require_positive(&[
        ("alpha", alpha),
        ("c1", inputs.c1),
        ("c_gamma", inputs.c_gamma),
        ("c_rho", inputs.c_rho),
        ("c_sl", inputs.c_sl),
    ])?;
    let threshold = from_usize::<T>(dim - 1) / alpha;
    if !(k > threshold) {
        return Err(Error::Precondition(format!(
            "k = {k} must exceed (d-1)/alpha = {threshold}"
        )));
    }
    let a = to_f64(alpha);
    let kk = to_f64(k);
    let d = dim as i32;
    let rate = to_f64(inputs.c_gamma * inputs.c_rho);
    let k_d: f64 = (0..dim)
        .map(|j| binom(dim - 1, j) * 2f64.powi(j as i32) * factorial(j))
        .sum();
    let factors = vec![
        (
            "2|Lambda| (triple norm of a local observable)".to_string(),
            2.0 * lam_size as f64,
        ),
        (
            "C1 C_SL / C_rho (generator difference, spread bound)".to_string(),
            to_f64(inputs.c1 * inputs.c_sl / inputs.c_rho),
        ),
        ("c_d (shell count)".to_string(), if dim == 1 { 2.0 } else { 4.0 }),
        ("alpha^-d (change of variables)".to_string(), a.powi(-d)),
        (
            "e (d-1)! (incomplete Gamma bound)".to_string(),
            std::f64::consts::E * factorial(dim - 1),
        ),
        ("alpha^(d-1) (split of the Gamma argument)".to_string(), a.powi(d - 1)),
        ("K_d / (C_gamma C_rho) (time integral)".to_string(), k_d / rate),
    ];
    let constant: f64 = factors.iter().map(|f| f.1).product::<f64>() / lam_size as f64;
    let value = constant * lam_size as f64 * (-a * kk).exp() * kk.powi(d - 1);
    Ok(BoundReport {
        formula_id: "prop_refined_bound",
        value,
        inputs: vec![
            ("dim".into(), dim as f64),
            ("alpha".into(), a),
            ("k".into(), kk),
            ("lam_size".into(), lam_size as f64),
            ("c1".into(), to_f64(inputs.c1)),
            ("c_gamma".into(), to_f64(inputs.c_gamma)),
            ("c_rho".into(), to_f64(inputs.c_rho)),
            ("c_sl".into(), to_f64(inputs.c_sl)),
            ("L".into(), to_f64(inputs.l)),
            ("traced_C".into(), constant),
        ],
        provenance: Provenance::ProofTraced,
        factors,
    })
}

fn binom(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// The traced `C` alone (independent of `k`).
pub fn refined_constant<T: Real>(dim: usize, alpha: T, inputs: &RefinedInputs<T>) -> Result<f64> {
    let k = from_usize::<T>(dim) / alpha;
    let r = prop_refined_bound(dim, alpha, k, 1, inputs)?;
    Ok(r.inputs
        .iter()
        .find(|(n, _)| n == "traced_C")
        .map(|x| x.1)
        .expect("traced_C recorded"))
}

/// `C₁ / (ρ(L) C_ρ² C_γ) · |||f||| |||g||| · e^{2 C_ρ C_γ t} · ρ(dist)`.
#[allow(clippy::too_many_arguments)]
pub fn thm_correlation_bound<T: Real>(
    norm_f: T,
    norm_g: T,
    c1: T,
    rho_l: T,
    c_rho: T,
    c_gamma: T,
    t: T,
    rho_dist: T,
) -> Result<BoundReport> {
    require_positive(&[("c1", c1), ("rho_L", rho_l), ("c_rho", c_rho), ("c_gamma", c_gamma)])?;
    let two: T = lit(2.0);
    let value = c1 / (rho_l * c_rho * c_rho * c_gamma) * norm_f * norm_g * (two * c_rho * c_gamma * t).exp() * rho_dist;
    Ok(BoundReport::explicit(
        "thm_correlation_bound",
        value,
        &[
            ("norm_f", norm_f),
            ("norm_g", norm_g),
            ("c1", c1),
            ("rho_L", rho_l),
            ("c_rho", c_rho),
            ("c_gamma", c_gamma),
            ("t", t),
            ("rho_dist", rho_dist),
        ],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingConstants {
    pub s_star: f64,
    pub k: f64,
    pub alpha_exponent: f64,
}

/// Constants `s*`, `K` and the exponent of the spatial mixing estimate for
/// limiting stationary measures. The decay rate `δ` of the argument is
/// identified with the rapid-convergence rate `α̂`, and `𝐂 = max(C₁, K̂)`.
#[allow(clippy::too_many_arguments)]
pub fn thm_mixing_constants<T: Real>(
    k_hat: T,
    alpha_hat: T,
    c1: T,
    c_rho: T,
    c_gamma: T,
    rho_l: T,
    rho_dist: T,
    dist_fg: T,
    l: T,
) -> Result<MixingConstants> {
    require_positive(&[
        ("K_hat", k_hat),
        ("alpha_hat", alpha_hat),
        ("c_rho", c_rho),
        ("c_gamma", c_gamma),
        ("rho_L", rho_l),
        ("rho_dist", rho_dist),
    ])?;
    if !(dist_fg > l * c_rho) {
        return Err(Error::Precondition(format!(
            "dist(f, g) = {dist_fg} must exceed L*C_rho = {}",
            l * c_rho
        )));
    }
    let delta = alpha_hat;
    let c = c_rho * c_gamma;
    let eight: T = lit(8.0);
    let s_star = (eight * delta * rho_l / (c_gamma * rho_dist)).ln() / (c + delta);
    let big_c = c1.max(k_hat);
    let k = big_c
        * (c + delta)
        * (c_rho * c_rho * c_gamma * rho_l).powf(-delta / (c + delta))
        * (eight / delta).powf(c / (c + delta));
    Ok(MixingConstants {
        s_star: to_f64(s_star),
        k: to_f64(k),
        alpha_exponent: to_f64(delta / (c + delta)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncompleteGamma {
    pub exact: f64,
    pub bound: f64,
}

/// `Γ(d, x) = (d-1)! e^{-x} Σ_{n<d} x^n/n!` and the bound `e (d-1)! e^{-x} x^{d-1}`.
pub fn gamma_incomplete(d: usize, x: f64) -> Result<IncompleteGamma> {
    if d == 0 || !(x > 0.0) {
        return Err(Error::Precondition("need d >= 1 and x > 0".into()));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..d {
        term *= x / n as f64;
        sum += term;
    }
    let f = factorial(d - 1);
    Ok(IncompleteGamma {
        exact: f * (-x).exp() * sum,
        bound: std::f64::consts::E * f * (-x).exp() * x.powi(d as i32 - 1),
    })
}

/// `∫_0^t c(s)(λ(s) - 1)² ds`.
pub fn entropic_cost_bound<T: Real>(c: &Profile<T>, lam: &Profile<T>, t: T) -> Result<T> {
    lam.check_positive(t)?;
    weighted_square_integral(c, lam, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalCost<T> {
    pub min_value: T,
    pub lam_star: Profile<T>,
    /// `∫_0^t ds / f(s)`.
    pub recip_integral: T,
}

/// Minimizer of `∫ f(λ-1)²` over speed-ups with `∫_0^t (λ-1) = τ`:
/// the minimum is `τ² / ∫ 1/f` at `λ*(s) = 1 + τ / (f(s) ∫ 1/f)`.
pub fn minimal_cost<T: Real>(f: &Profile<T>, t: T, tau: T) -> Result<MinimalCost<T>> {
    if !(t > T::zero()) {
        return Err(Error::Precondition("t must be positive".into()));
    }
    f.check_positive(t)?;
    let i = f.integral_recip(T::zero(), t)?;
    let lam_star = match f {
        Profile::PiecewiseConstant { breaks, values } => Profile::PiecewiseConstant {
            breaks: breaks.clone(),
            values: values.iter().map(|v| T::one() + tau / (*v * i)).collect(),
        },
        Profile::Affine { p, q } => Profile::Reciprocal {
            num: tau / i,
            p: *p,
            q: *q,
        },
        Profile::Reciprocal { .. } => return Err(Error::Unsupported("reciprocal weight profile".into())),
    };
    let shift = lam_star.shift(t);
    let slack = (tau.abs() + T::one()) * lit::<T>(1e-12).max(T::epsilon() * lit(64.0));
    if (shift - tau).abs() > slack {
        return Err(Error::InternalConsistency(format!(
            "constraint residual {}",
            shift - tau
        )));
    }
    Ok(MinimalCost {
        min_value: tau * tau / i,
        lam_star,
        recip_integral: i,
    })
}

/// `2C|Λ| e^{-αk} k^{d-1} + (τ/√2) (∫_0^t ds / (2h(s)))^{-1/2}` with
/// `h(s) = c·s + L + k`, in one dimension.
#[allow(clippy::too_many_arguments)]
pub fn combined_attractor_bound(
    lam_size: usize,
    alpha: f64,
    k: f64,
    c_speed: f64,
    l: f64,
    t: f64,
    tau: f64,
    traced_c: f64,
) -> Result<BoundReport> {
    if !(k > 0.0) || !(alpha > 0.0) || !(c_speed > 0.0) {
        return Err(Error::Precondition("need k, alpha, c_speed > 0".into()));
    }
    let first = 2.0 * traced_c * lam_size as f64 * (-alpha * k).exp();
    let integral = ((c_speed * t + l + k) / (l + k)).ln() / (2.0 * c_speed);
    let second = if tau == 0.0 {
        0.0
    } else {
        tau / 2f64.sqrt() / integral.sqrt()
    };
    Ok(BoundReport {
        formula_id: "combined_attractor_bound",
        value: first + second,
        inputs: vec![
            ("lam_size".into(), lam_size as f64),
            ("alpha".into(), alpha),
            ("k".into(), k),
            ("c_speed".into(), c_speed),
            ("L".into(), l),
            ("t".into(), t),
            ("tau".into(), tau),
            ("traced_C".into(), traced_c),
        ],
        provenance: Provenance::ProofTraced,
        factors: vec![("restriction terms".into(), first), ("entropy term".into(), second)],
    })
}

/// Minimizes [`combined_attractor_bound`] over `k ∈ (0, k_max]` on a grid
/// followed by golden-section refinement; returns the best `k` and report.
#[allow(clippy::too_many_arguments)]
pub fn optimize_k(
    lam_size: usize,
    alpha: f64,
    c_speed: f64,
    l: f64,
    t: f64,
    tau: f64,
    traced_c: f64,
    k_max: f64,
) -> Result<(f64, BoundReport)> {
    let eval = |k: f64| combined_attractor_bound(lam_size, alpha, k, c_speed, l, t, tau, traced_c).map(|r| r.value);
    let n = 400;
    let grid: Vec<f64> = (1..=n).map(|i| k_max * i as f64 / n as f64).collect();
    let mut best = (grid[0], eval(grid[0])?);
    for &k in &grid[1..] {
        let v = eval(k)?;
        if v < best.1 {
            best = (k, v);
        }
    }
    let step = k_max / n as f64;
    let (mut a, mut b) = ((best.0 - step).max(step * 1e-3), (best.0 + step).min(k_max));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if eval(c)? < eval(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let mid = 0.5 * (a + b);
    let vm = eval(mid)?;
    let k = if vm < best.1 { mid } else { best.0 };
    Ok((
        k,
        combined_attractor_bound(lam_size, alpha, k, c_speed, l, t, tau, traced_c)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn restriction_plug_ins() {
        assert_eq!(
            thm_restriction_bound(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap().value,
            0.0
        );
        assert_eq!(
            thm_restriction_bound(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap().value,
            1.0
        );
        assert!(thm_restriction_bound(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn refined_scales_with_k() {
        let inp = RefinedInputs {
            c1: 0.8,
            c_gamma: 6.0,
            c_rho: 1.0,
            c_sl: 1.0,
            l: 1.0,
        };
        for dim in [1, 2] {
            let a = prop_refined_bound(dim, 1.0, 3.0, 1, &inp).unwrap().value;
            let b = prop_refined_bound(dim, 1.0, 6.0, 1, &inp).unwrap().value;
            assert_relative_eq!(b / a, (-3.0f64).exp() * 2f64.powi(dim as i32 - 1), max_relative = 1e-12);
        }
        assert!(prop_refined_bound(2, 1.0, 1.0, 1, &inp).is_err());
        assert!(prop_refined_bound(1, 1.0, 0.01, 1, &inp).is_ok());
        let r = prop_refined_bound(1, 1.0, 3.0, 1, &inp).unwrap();
        assert_eq!(r.provenance, Provenance::ProofTraced);
        assert_eq!(r.factors.len(), 7);
        assert_relative_eq!(
            refined_constant(1, 1.0, &inp).unwrap(),
            2.0 * 0.8 * 2.0 * std::f64::consts::E / 6.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn correlation_plug_in() {
        assert_eq!(
            thm_correlation_bound(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0)
                .unwrap()
                .value,
            0.0
        );
        let v = thm_correlation_bound(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, (-3.0f64).exp())
            .unwrap()
            .value;
        assert_relative_eq!(v, 0.049787, epsilon = 1e-6);
    }

    #[test]
    fn mixing_examples() {
        let m = thm_mixing_constants(1.0, 1.0, 1.0, 1.0, 1.0, (-1.0f64).exp(), (-5.0f64).exp(), 5.0, 1.0).unwrap();
        assert_relative_eq!(m.s_star, 0.5 * (8f64.ln() + 4.0), max_relative = 1e-14);
        assert_relative_eq!(m.s_star, 3.0397, epsilon = 1e-4);
        assert_relative_eq!(m.alpha_exponent, 0.5);
        let big = thm_mixing_constants(1.0, 1e9, 1.0, 1.0, 1.0, 0.5, 0.1, 5.0, 1.0).unwrap();
        assert!((1.0 - big.alpha_exponent) < 1e-8);
        assert!(thm_mixing_constants(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn incomplete_gamma_examples() {
        let g = gamma_incomplete(1, 2.0).unwrap();
        assert_relative_eq!(g.exact, (-2.0f64).exp());
        assert_relative_eq!(g.bound / g.exact, std::f64::consts::E);
        let g = gamma_incomplete(2, 1.0).unwrap();
        assert_relative_eq!(g.exact, 0.73576, epsilon = 1e-5);
        assert_relative_eq!(g.bound, 1.0, max_relative = 1e-15);
        let g = gamma_incomplete(3, 2.0).unwrap();
        assert_relative_eq!(g.exact, 10.0 * (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g.bound, 2.9430, epsilon = 1e-4);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn minimal_cost_examples() {
        let m = minimal_cost(&Profile::constant(2.0, 4.0), 4.0, 1.0).unwrap();
        assert_relative_eq!(m.min_value, 2.0 / 4.0);
        assert_relative_eq!(m.lam_star.eval(1.0), 1.25);
        let m = minimal_cost(&Profile::Affine { p: 1.0, q: 1.0 }, 1.0, 1.0).unwrap();
        assert_relative_eq!(m.min_value, 1.0 / 2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(m.min_value, 1.44270, epsilon = 1e-5);
        let s = 0.3;
        assert_relative_eq!(
            m.lam_star.eval(s),
            1.0 + 1.0 / ((s + 1.0) * 2f64.ln()),
            max_relative = 1e-14
        );
        assert!(minimal_cost(&Profile::constant(-1.0, 1.0), 1.0, 1.0).is_err());
        let c = entropic_cost_bound(&Profile::Affine { p: 1.0, q: 1.0 }, &m.lam_star, 1.0).unwrap();
        assert_relative_eq!(c, m.min_value, max_relative = 1e-12);
    }

    #[test]
    fn attractor_plug_in() {
        let r = combined_attractor_bound(1, 1.0, 5.0, 2.0, 1.0, 100.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(r.value, 0.752059, epsilon = 1e-6);
        let r0 = combined_attractor_bound(1, 1.0, 5.0, 2.0, 1.0, 100.0, 0.0, 0.0).unwrap();
        assert_eq!(r0.value, 0.0);
    }

    #[test]
    fn optimized_bound_non_increasing_in_t() {
        let mut prev = f64::INFINITY;
        for t in [1.0, 2.0, 4.0, 8.0, 16.0, 1e3, 1e6] {
            let (_, r) = optimize_k(1, 1.0, 12.0, 1.0, t, 1.0, 0.7, 40.0).unwrap();
            assert!(r.value <= prev + 1e-12);
            prev = r.value;
        }
    }
}
