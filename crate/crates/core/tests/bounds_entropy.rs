mod common;

use approx::assert_relative_eq;
use common::{dense_evolve, Uniform};
use ips_core::bounds::{combined_attractor_bound, entropic_cost_bound, gamma_incomplete, minimal_cost, optimize_k};
use ips_core::entropy::{data_processing_check, path_entropy_speedup, pinsker_check, psi};
use ips_core::exact_engine::{build_generator, Distribution, Environment, GeneratorMatrix};
use ips_core::geometry::DecayFunction;
use ips_core::profile::Profile;
use ips_core::rates::{BoundaryRule, Family, GlauberIsing};
use ips_core::Region;
use proptest::prelude::*;

fn small_chain() -> GeneratorMatrix<f64> {
    let fam = Family::Glauber(GlauberIsing {
        beta: 0.5,
        rho_j: DecayFunction::exponential(1.0).unwrap(),
        r_j: 2,
        dim: 1,
    });
    build_generator(&fam, &Region::interval(-2, 2), Environment::new(BoundaryRule::AllPlus))
        .unwrap()
        .1
}

/// `∫_0^t Σ_x μ_{θ(s)}(x) R(x) ψ(λ(s)) ds` with Gauss-Legendre panels inside each
/// piece of `λ` and the dense matrix exponential.
fn path_entropy_oracle(gen: &GeneratorMatrix<f64>, mu0: &[f64], lam: &Profile<f64>, t: f64) -> f64 {
    let nodes = [(-0.5773502691896257, 1.0), (0.5773502691896257, 1.0)];
    let mut cuts = vec![0.0];
    cuts.extend(lam.breakpoints(t));
    cuts.push(t);
    let mut total = 0.0;
    for piece in cuts.windows(2) {
        let panels = 200;
        let h = (piece[1] - piece[0]) / panels as f64;
        for k in 0..panels {
            let mid = piece[0] + (k as f64 + 0.5) * h;
            for (x, w) in nodes {
                let s = mid + x * h / 2.0;
                let mu = dense_evolve(gen, mu0, lam.integral(0.0, s));
                let rate: f64 = mu.iter().zip(gen.exit_rates()).map(|(m, r)| m * r).sum();
                total += w * h / 2.0 * rate * psi(lam.eval(s));
            }
        }
    }
    total
}

fn probability_vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pinsker_holds_in_both_conventions(mu in probability_vector(6), nu in probability_vector(6)) {
        let r = pinsker_check(&mu, &nu);
        prop_assert!(r.half_l1_holds && r.l1_holds);
        prop_assert!((r.l1 - 2.0 * r.half_l1).abs() < 1e-15);
    }

    #[test]
    fn minimal_cost_beats_any_feasible_speedup(vals in prop::collection::vec(0.5f64..5.0, 1..6), tau in -0.5f64..2.0, bumps in prop::collection::vec(-0.3f64..0.3, 6)) {
        let t = 2.0;
        let f = Profile::uniform_pieces(t, vals.clone()).unwrap();
        let best = minimal_cost(&f, t, tau).unwrap();
        // perturb λ - 1 by a zero-mean piecewise change, keeping the constraint
        let n = vals.len();
        let mean: f64 = bumps[..n].iter().sum::<f64>() / n as f64;
        let lam_values: Vec<f64> = (0..n)
            .map(|i| best.lam_star.eval((i as f64 + 0.5) * t / n as f64) + bumps[i] - mean)
            .collect();
        prop_assume!(lam_values.iter().all(|v| *v > 0.0));
        let other = Profile::uniform_pieces(t, lam_values).unwrap();
        prop_assert!((other.shift(t) - tau).abs() < 1e-12);
        let cost = entropic_cost_bound(&f, &other, t).unwrap();
        prop_assert!(cost + 1e-12 >= best.min_value);
        let at_opt = entropic_cost_bound(&f, &best.lam_star, t).unwrap();
        prop_assert!((at_opt - best.min_value).abs() < 1e-12 * (1.0 + best.min_value));
    }

    #[test]
    fn optimized_combined_bound_is_non_increasing_in_t(t in 0.5f64..20.0, dt in 0.0f64..10.0, tau in 0.0f64..3.0) {
        let a = optimize_k(3, 1.0, 2.0, 1.0, t, tau, 1.4, 50.0).unwrap().1.value;
        let b = optimize_k(3, 1.0, 2.0, 1.0, t + dt, tau, 1.4, 50.0).unwrap().1.value;
        prop_assert!(b <= a + 1e-12 * (1.0 + a));
    }
}

#[test]
fn path_entropy_matches_quadrature_oracle() {
    let gen = small_chain();
    let mu0 = Distribution::point_mass(gen.dimension(), 3);
    for lam in [
        Profile::constant(1.7, 1.5),
        Profile::piecewise(vec![0.0, 0.4, 1.1, 1.5], vec![0.6, 2.0, 1.2]).unwrap(),
        Profile::Affine { p: 1.0, q: 0.8 },
    ] {
        let got = path_entropy_speedup(&gen, &mu0, &lam, 1.5, 1e-10).unwrap();
        let want = path_entropy_oracle(&gen, &mu0.weights, &lam, 1.5);
        assert_relative_eq!(got, want, max_relative = 1e-7);
    }
}

#[test]
fn unit_speedup_has_zero_entropy() {
    let gen = small_chain();
    let mu0 = Distribution::uniform(gen.dimension());
    let h = path_entropy_speedup(&gen, &mu0, &Profile::constant(1.0, 2.0), 2.0, 1e-10).unwrap();
    assert!(h.abs() < 1e-14);
}

#[test]
fn cost_bound_dominates_path_entropy_for_accelerations() {
    // ψ(λ) ≤ (λ - 1)² for λ ≥ 1 and R ≤ max total rate
    let gen = small_chain();
    let mu0 = Distribution::point_mass(gen.dimension(), 0);
    let cap = Profile::constant(gen.max_total_rate(), 3.0);
    let mut rng = Uniform::new(17);
    for _ in 0..5 {
        let lam = Profile::uniform_pieces(3.0, (0..4).map(|_| rng.range(1.0, 3.0)).collect()).unwrap();
        let h = path_entropy_speedup(&gen, &mu0, &lam, 3.0, 1e-9).unwrap();
        assert!(h <= entropic_cost_bound(&cap, &lam, 3.0).unwrap());
        let dp = data_processing_check(&gen, &mu0, &lam, 3.0, 1e-9).unwrap();
        assert!(dp.marginal_entropy <= dp.path_entropy + 1e-9);
    }
}

#[test]
fn incomplete_gamma_matches_quadrature() {
    for d in 1..=4usize {
        for x in [0.5, 2.0, 7.0] {
            let g = gamma_incomplete(d, x).unwrap();
            // ∫_x^∞ s^{d-1} e^{-s} ds by the midpoint rule on a long interval
            let n = 400_000;
            let h = 80.0 / n as f64;
            let quad: f64 = (0..n)
                .map(|i| {
                    let s = x + (i as f64 + 0.5) * h;
                    s.powi(d as i32 - 1) * (-s).exp() * h
                })
                .sum();
            assert_relative_eq!(g.exact, quad, max_relative = 1e-7);
            if x >= 1.0 {
                assert!(g.exact <= g.bound);
            }
        }
    }
    assert!(gamma_incomplete(0, 1.0).is_err());
}

#[test]
fn combined_bound_without_shift_is_the_restriction_term() {
    let r = combined_attractor_bound(5, 0.7, 3.0, 2.0, 1.0, 4.0, 0.0, 1.2).unwrap();
    assert_relative_eq!(r.value, 2.0 * 1.2 * 5.0 * (-0.7f64 * 3.0).exp(), max_relative = 1e-14);
    assert!(combined_attractor_bound(5, 0.7, 0.0, 2.0, 1.0, 4.0, 0.0, 1.2).is_err());
}
