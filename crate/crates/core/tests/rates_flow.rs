mod common;

use approx::assert_relative_eq;
use ips_core::gamma_flow::{apply_gamma, exp_gamma, kernel, triple_norm, L1Vector, LocalObservable};
use ips_core::geometry::{blow_up, rho_norm, tail_sum, DecayFunction, Region};
use ips_core::rates::{
    constants, influence_matrix, oscillation, BoundaryRule, Family, GlauberIsing, IndependentFlip, OscillationMode,
    RateFamily,
};
use ips_core::{Error, Site};
use proptest::prelude::*;

fn glauber(beta: f64, alpha: f64, r_j: u64, dim: usize) -> GlauberIsing<f64> {
    GlauberIsing {
        beta,
        rho_j: DecayFunction::exponential(alpha).unwrap(),
        r_j,
        dim,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_oscillation_never_exceeds_analytic(beta in -1.5f64..1.5, alpha in 0.3f64..2.0, r_j in 1u64..5, d in 1u64..5) {
        let g = glauber(beta, alpha, r_j, 1);
        let delta = Region::interval(0, 0);
        let x = Site::d1(d as i64);
        let exact: f64 = oscillation(&g, &delta, &x, OscillationMode::ExactBruteforce).unwrap();
        let analytic: f64 = oscillation(&g, &delta, &x, OscillationMode::AnalyticBound).unwrap();
        prop_assert!(exact <= analytic + 1e-12, "{exact} > {analytic}");
        if d > r_j {
            prop_assert_eq!(exact, 0.0);
        }
    }

    #[test]
    fn flow_is_monotone_in_time(beta in 0.1f64..1.0, t1 in 0.0f64..1.0, dt in 0.0f64..1.0) {
        let g = Family::Glauber(glauber(beta, 1.0, 3, 1));
        let gm = influence_matrix(&g, &Region::interval(-12, 12), OscillationMode::AnalyticBound).unwrap();
        let a = kernel(&gm, &Site::d1(0), t1, 1e-13).unwrap().vector;
        let b = kernel(&gm, &Site::d1(0), t1 + dt, 1e-13).unwrap().vector;
        for x in -12..=12 {
            let s = Site::d1(x);
            prop_assert!(b.get(&s) + 1e-12 >= a.get(&s));
        }
    }

    #[test]
    fn triple_norm_of_products_is_subadditive(a in -2i64..3, b in -2i64..3) {
        prop_assume!(a != b);
        let f = LocalObservable::<f64>::spin(1, Site::d1(a));
        let g = LocalObservable::<f64>::spin(1, Site::d1(b));
        let fg = f.product(&g).unwrap();
        prop_assert!(triple_norm(&fg) <= f.sup_norm() * triple_norm(&g) + g.sup_norm() * triple_norm(&f) + 1e-12);
    }
}

#[test]
fn influence_rows_sum_to_total_coupling() {
    let g = glauber(0.5, 1.0, 6, 1);
    let gm = influence_matrix(&g, &Region::interval(-20, 20), OscillationMode::AnalyticBound).unwrap();
    let total = 0.5 * 2.0 * (1..=6).map(|k| (-(k as f64)).exp()).sum::<f64>();
    assert_relative_eq!(gm.max_row_sum(), total, max_relative = 1e-12);
}

#[test]
fn constants_of_independent_flip() {
    let f = Family::IndependentFlip(IndependentFlip {
        rate: 1.3,
        q: 3,
        dim: 2,
    });
    let rho = DecayFunction::exponential(1.0).unwrap();
    let c = constants(
        &f,
        &rho,
        &Region::centered_box(2, 0).unwrap(),
        OscillationMode::ExactBruteforce,
    )
    .unwrap();
    assert_relative_eq!(c.c1, 1.3, max_relative = 1e-14);
    assert_eq!(c.m_gamma, 0.0);
    assert_eq!(c.c_gamma, 0.0);
}

#[test]
fn glauber_rate_is_attractive_under_plus_boundary() {
    let g = glauber(0.7, 1.0, 2, 1);
    let delta = Region::interval(0, 0);
    let plus = BoundaryRule::AllPlus;
    // a minus spin among plus neighbours flips fast, a plus spin slowly
    let to_plus: f64 = g.rate(
        &delta,
        &ips_core::rates::Overlay {
            index: &[(Site::d1(0), 0)].into_iter().collect(),
            values: &[0],
            fallback: &plus,
        },
        &[1],
    );
    let to_minus: f64 = g.rate(&delta, &plus, &[0]);
    assert!(to_plus > 0.5 && to_minus < 0.5);
    assert_relative_eq!(to_plus + to_minus, 1.0, max_relative = 1e-14);
}

#[test]
fn power_law_summability_by_dimension() {
    let p = DecayFunction::power_law(1.5).unwrap();
    assert!(rho_norm(&p, 1).is_ok());
    assert!(matches!(rho_norm(&p, 2), Err(Error::R4Fails(_))));
    let t = tail_sum(&DecayFunction::power_law(3.0).unwrap(), 10.0, 2).unwrap();
    assert!(t.value > 0.0 && t.remainder >= 0.0);
}

#[test]
fn tail_sum_matches_direct_summation() {
    let rho = DecayFunction::exponential(0.8).unwrap();
    for dim in [1usize, 2] {
        let t = tail_sum(&rho, 3.0, dim).unwrap();
        let shell = |r: u64| if dim == 1 { 2.0 } else { 4.0 * r as f64 };
        let direct: f64 = (4..400u64).map(|r| shell(r) * (-0.8 * r as f64).exp()).sum();
        assert!(
            (t.value - direct).abs() <= t.remainder + 1e-12,
            "dim {dim}: {} vs {direct}",
            t.value
        );
    }
}

#[test]
fn flow_series_is_consistent_with_repeated_application() {
    let g = glauber(0.4, 1.0, 2, 2);
    let w = Region::centered_box(2, 4).unwrap();
    let gm = influence_matrix(&g, &w, OscillationMode::AnalyticBound).unwrap();
    let beta = L1Vector::indicator(2, Site::d2(0, 0));
    // first-order agreement: (e^{tΓ}β - β)/t → Γβ
    let t = 1e-6;
    let flow = exp_gamma(&gm, &beta, t, 1e-15).unwrap().vector;
    let gb = apply_gamma(&gm, &beta).unwrap();
    for s in blow_up(&Region::centered_box(2, 0).unwrap(), 2.0).iter() {
        let diff = (flow.get(s) - beta.get(s)) / t;
        assert!((diff - gb.get(s)).abs() < 1e-5);
    }
}
