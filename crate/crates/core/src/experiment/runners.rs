use crate::bounds::{
    entropic_cost_bound, minimal_cost, prop_refined_bound, refined_constant, refined_schedule, restriction_tail,
    thm_correlation_bound, thm_restriction_bound, Provenance, RefinedInputs,
};
use crate::entropy::{attractor_demo, marginal_relative_entropy, path_entropy_speedup, AttractorSetup};
use crate::error::{Error, Result};
use crate::exact_engine::{
    build_generator, evolve, evolve_time_dependent, l1, marginal, stationary_distribution, tv_distance, Distribution,
    Environment, GeneratorMatrix, StateSpace,
};
use crate::experiment::config::{Case, ExperimentConfig, ExperimentKind};
use crate::experiment::{fmt, Report};
use crate::gamma_flow::{
    check_propagation, spread_bound_check, triple_norm, DecayCertificate, L1Vector, LocalObservable,
};
use crate::geometry::{blow_up, DecayFunction, GeometryConstants, Region, RegionShape};
use crate::mc_engine::estimate_marginal;
use crate::profile::Profile;
use crate::rates::{constants, influence_matrix, DynamicalConstants, Family, SpinLookup};

pub(super) fn dispatch(cfg: &ExperimentConfig) -> Result<Report> {
    let ctx = Context::new(cfg)?;
    match cfg.experiment {
        ExperimentKind::Constants => run_constants(&ctx),
        ExperimentKind::GammaFlow => run_gamma_flow(&ctx),
        ExperimentKind::Restriction => run_restriction(&ctx),
        ExperimentKind::RefinedRestriction => run_refined(&ctx),
        ExperimentKind::Correlation => run_correlation(&ctx),
        ExperimentKind::Stationary => run_stationary(&ctx),
        ExperimentKind::Entropy => run_entropy(&ctx),
        ExperimentKind::Attractor => run_attractor(&ctx),
        ExperimentKind::McMarginal => run_mc_marginal(&ctx),
    }
}

/// Everything derived from the configuration that several experiments share.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    family: Family<f64>,
    rho: DecayFunction<f64>,
    window: Region,
    lam: Region,
    dyn_c: DynamicalConstants<f64>,
    geo: GeometryConstants<f64>,
    tol: f64,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let family = cfg.rate_family()?;
        let rho = cfg.rho()?;
        let dim = cfg.geometry.dim;
        let geo = GeometryConstants::certify(&rho, dim, cfg.family.l, RegionShape::SingleSite)?;
        let origin = Region::centered_box(dim, 0)?;
        let dyn_c = constants(&family, &rho, &origin, cfg.numerics.oscillation)?;
        Ok(Context {
            cfg,
            family,
            rho,
            window: cfg.window()?,
            lam: cfg.lambda()?,
            dyn_c,
            geo,
            tol: cfg.numerics.tol,
        })
    }

    fn record_constants(&self, r: &mut Report) {
        r.constant("c1", self.dyn_c.c1, Provenance::Explicit);
        r.constant("m_gamma", self.dyn_c.m_gamma, Provenance::Explicit);
        r.constant("c_gamma", self.dyn_c.c_gamma, Provenance::Explicit);
        r.constant("c_rho", self.geo.c_rho, Provenance::Explicit);
        r.constant("rho_norm", self.geo.rho_norm.value, Provenance::Explicit);
        r.constant("c_sl", self.geo.c_sl as f64, Provenance::Explicit);
    }

    fn times(&self) -> Result<&[f64]> {
        if self.cfg.times.t.is_empty() {
            return Err(Error::Config("times.t must list at least one time".into()));
        }
        Ok(&self.cfg.times.t)
    }

    fn exponential_alpha(&self) -> Result<f64> {
        match self.rho {
            DecayFunction::Exponential { alpha } => Ok(alpha),
            _ => Err(Error::Unsupported("this experiment needs an exponential rho".into())),
        }
    }

    fn refined_inputs(&self) -> RefinedInputs<f64> {
        RefinedInputs {
            c1: self.dyn_c.c1,
            c_gamma: self.dyn_c.c_gamma,
            c_rho: self.geo.c_rho,
            c_sl: self.geo.c_sl as f64,
            l: self.cfg.family.l,
        }
    }

    /// Generator on `region` with the case's boundary, and the point mass at its initial state.
    fn chain(&self, region: &Region, case: &Case) -> Result<(StateSpace, GeneratorMatrix<f64>, Distribution<f64>)> {
        let (space, gen) = build_generator(&self.family, region, Environment::new(case.boundary))?;
        let eta0 = space.state_from(&case.initial);
        let mu0 = Distribution::point_mass(space.size(), eta0);
        Ok((space, gen, mu0))
    }

    fn restriction_bound(&self, t: f64, h: f64) -> Result<f64> {
        let tail = restriction_tail(&self.rho, &self.lam, h, self.cfg.family.l)?;
        Ok(thm_restriction_bound(
            1.0,
            self.dyn_c.c1,
            self.geo.c_sl as f64,
            self.geo.c_rho,
            self.dyn_c.c_gamma,
            t,
            tail,
        )?
        .value)
    }
}

fn case_label(i: usize, c: &Case) -> String {
    format!("{i}:{:?}/{:?}", c.boundary, c.initial)
}

fn run_constants(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["quantity", "value", "provenance"]);
    ctx.record_constants(&mut r);
    r.constant("rho_norm_remainder", ctx.geo.rho_norm.remainder, Provenance::Explicit);
    for c in r.constants.clone() {
        r.row(vec![c.name, fmt(c.value), format!("{:?}", c.provenance)], None, None);
    }
    Ok(r)
}

fn run_gamma_flow(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["check", "t", "x", "value", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    let gm = influence_matrix(&ctx.family, &ctx.window, ctx.cfg.numerics.oscillation)?;
    let cert = DecayCertificate {
        rho: ctx.rho,
        c_rho: ctx.geo.c_rho,
        c_gamma: ctx.dyn_c.c_gamma,
    };
    let dim = ctx.cfg.geometry.dim;
    let radius = ctx
        .cfg
        .geometry
        .interior_radius
        .unwrap_or(ctx.cfg.geometry.window_radius / 3);
    let interior = Region::centered_box(dim, radius as i64)?;
    let origin = Region::centered_box(dim, 0)?;
    let beta = L1Vector::indicator(dim, *origin.iter().next().expect("origin"));
    for &t in ctx.times()? {
        let prop = check_propagation(&gm, &cert, t, &interior, ctx.tol)?;
        let spread = spread_bound_check(&gm, &cert, &beta, t, &interior, ctx.tol)?;
        for (name, rep) in [("propagation", &prop), ("spread", &spread)] {
            let need = rep.series_remainder + rep.leakage;
            for m in &rep.rows {
                let labels = vec![name.to_string(), fmt(t), m.site.to_string()];
                r.check(labels, m.lhs, m.rhs, -need);
            }
            r.notes.push(format!(
                "{name} t={t}: series remainder {}, leakage {}",
                rep.series_remainder, rep.leakage
            ));
        }
    }
    Ok(r)
}

fn run_restriction(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "t", "h", "tv_exact_l1", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    if ctx.cfg.geometry.h.is_empty() {
        return Err(Error::Config("geometry.h must list at least one radius".into()));
    }
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let (space, full, mu0) = ctx.chain(&ctx.window, case)?;
        for &t in ctx.times()? {
            let mu_full = evolve(&full, &mu0, t, ctx.tol)?;
            for &h in &ctx.cfg.geometry.h {
                let restricted = full.restrict(&blow_up(&ctx.lam, h).intersection(&ctx.window));
                let mu_h = evolve(&restricted, &mu0, t, ctx.tol)?;
                let tv = tv_distance(&space, &mu_full, &mu_h, &ctx.lam)?;
                let bound = ctx.restriction_bound(t, h)?;
                r.check(vec![case_label(ci, case), fmt(t), fmt(h)], tv, bound, 2.0 * ctx.tol);
            }
        }
    }
    Ok(r)
}

fn run_refined(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "check", "t", "k", "tv_exact_l1", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    let alpha = ctx.exponential_alpha()?;
    let inputs = ctx.refined_inputs();
    let dim = ctx.cfg.geometry.dim;
    r.constant(
        "traced_C",
        refined_constant(dim, alpha, &inputs)?,
        Provenance::ProofTraced,
    );
    let mut ks = ctx.cfg.geometry.k.clone();
    if ks.is_empty() {
        return Err(Error::Config("geometry.k must list at least one value".into()));
    }
    ks.sort_by(f64::total_cmp);
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let (space, full, mu0) = ctx.chain(&ctx.window, case)?;
        for &t in ctx.times()? {
            let mu_full = evolve(&full, &mu0, t, ctx.tol)?;
            let mut prev: Option<(f64, f64)> = None;
            for &k in &ks {
                let sched = refined_schedule(&inputs, alpha, k, t);
                let mu_k = evolve_time_dependent(&full, &space, &ctx.lam, &sched, &mu0, t, ctx.tol)?;
                let tv = tv_distance(&space, &mu_full, &mu_k, &ctx.lam)?;
                let bound = prop_refined_bound(dim, alpha, k, ctx.lam.len(), &inputs)?.value;
                let label = case_label(ci, case);
                r.check(
                    vec![label.clone(), "bound".into(), fmt(t), fmt(k)],
                    tv,
                    bound,
                    2.0 * ctx.tol,
                );
                if let Some((_, tv_prev)) = prev {
                    // measured distance must not grow with k
                    r.check(
                        vec![label, "monotone-in-k".into(), fmt(t), fmt(k)],
                        tv,
                        tv_prev,
                        2.0 * ctx.tol,
                    );
                }
                prev = Some((k, tv));
            }
        }
    }
    Ok(r)
}

fn run_correlation(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "t", "abs_correlation", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    let dim = ctx.cfg.geometry.dim;
    let (fs, gs) = (ctx.cfg.named_site("f")?, ctx.cfg.named_site("g")?);
    let f = LocalObservable::spin(dim, fs);
    let g = LocalObservable::spin(dim, gs);
    let l = ctx.cfg.family.l;
    let rho_l = ctx.rho.eval(l);
    let rho_dist = ctx.rho.at(fs.l1(&gs));
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let (space, gen, _) = ctx.chain(&ctx.window, case)?;
        let eta0 = space.state_from(&case.initial);
        for &t in ctx.times()? {
            let c = crate::exact_engine::correlation(&gen, &space, eta0, &f, &g, t, ctx.tol)?;
            let bound = thm_correlation_bound(
                triple_norm(&f),
                triple_norm(&g),
                ctx.dyn_c.c1,
                rho_l,
                ctx.geo.c_rho,
                ctx.dyn_c.c_gamma,
                t,
                rho_dist,
            )?
            .value;
            r.check(vec![case_label(ci, case), fmt(t)], c.abs(), bound, 4.0 * ctx.tol);
        }
    }
    Ok(r)
}

/// Extends a law on `small` (a subset of `big`'s region) by the frozen values of `env`.
fn embed(small: &StateSpace, mu: &Distribution<f64>, big: &StateSpace, env: &dyn SpinLookup) -> Distribution<f64> {
    let mut out = vec![0.0; big.size()];
    let mut vals: Vec<u8> = big.sites().iter().map(|s| env.spin(s)).collect();
    let map: Vec<usize> = small
        .sites()
        .iter()
        .map(|s| big.position(s).expect("nested regions"))
        .collect();
    for (i, w) in mu.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (k, v) in small.decode(i).into_iter().enumerate() {
            vals[map[k]] = v;
        }
        out[big.encode(&vals)] += w;
    }
    Distribution { weights: out }
}

fn run_stationary(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "check", "h", "t", "tv_exact_l1", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    let mut hs = ctx.cfg.geometry.h.clone();
    hs.sort_by(f64::total_cmp);
    if hs.is_empty() {
        return Err(Error::Config("geometry.h must list at least one radius".into()));
    }
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let label = case_label(ci, case);
        let env = Environment::new(case.boundary);
        let mut laws = Vec::new();
        for &h in &hs {
            let region = blow_up(&ctx.lam, h).intersection(&ctx.window);
            let (space, gen) = build_generator(&ctx.family, &region, env.clone())?;
            let mu = stationary_distribution(&gen)?;
            laws.push((h, space, mu));
        }
        let mut prev_gap: Option<f64> = None;
        for w in laws.windows(2) {
            let a = marginal(&w[0].1, &w[0].2, &ctx.lam)?;
            let b = marginal(&w[1].1, &w[1].2, &ctx.lam)?;
            let gap = l1(&a, &b);
            let labels = vec![label.clone(), "successive".into(), fmt(w[0].0), String::new()];
            match prev_gap {
                Some(p) => r.check(labels, gap, p, 1e-12),
                None => r.row(
                    labels
                        .into_iter()
                        .chain([fmt(gap), String::new(), String::new(), String::new()])
                        .collect(),
                    None,
                    None,
                ),
            }
            prev_gap = Some(gap);
        }
        let (h, small, mu_h) = laws.last().expect("nonempty");
        let (big, full, _) = ctx.chain(&ctx.window, case)?;
        let lifted = embed(small, mu_h, &big, &env);
        for &t in ctx.times()? {
            let moved = evolve(&full, &lifted, t, ctx.tol)?;
            let tv = tv_distance(&big, &moved, &lifted, &ctx.lam)?;
            let bound = ctx.restriction_bound(t, *h)?;
            r.check(
                vec![label.clone(), "invariance".into(), fmt(*h), fmt(t)],
                tv,
                bound,
                1e-8,
            );
        }
    }
    Ok(r)
}

fn run_entropy(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "check", "t", "profile", "measured", "bound", "margin", "pass"]);
    ctx.record_constants(&mut r);
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let label = case_label(ci, case);
        let (_, gen, mu0) = ctx.chain(&ctx.window, case)?;
        let cap = gen.max_total_rate();
        for &t in ctx.times()? {
            if !(t > 0.0) {
                return Err(Error::Config("entropy times must be positive".into()));
            }
            let mut profiles: Vec<(String, Profile<f64>)> = ctx
                .cfg
                .times
                .speeds
                .iter()
                .map(|s| (format!("constant {s}"), Profile::constant(*s, t)))
                .collect();
            for &tau in &ctx.cfg.times.tau {
                let m = minimal_cost(&Profile::constant(cap, t), t, tau)?;
                profiles.push((format!("optimal tau={tau}"), m.lam_star));
            }
            let evolve_tol = (ctx.tol * 1e-3).max(1e-15);
            let base = evolve(&gen, &mu0, t, evolve_tol)?;
            for (name, lam) in profiles {
                let labels = |check: &str| vec![label.clone(), check.to_string(), fmt(t), name.clone()];
                let theta = lam.integral(0.0, t);
                let shifted = evolve(&gen, &mu0, theta, evolve_tol)?;
                let sped = evolve(&gen.scaled(theta / t), &mu0, t, evolve_tol)?;
                r.check(
                    labels("speedup-identity"),
                    l1(&shifted.weights, &sped.weights),
                    0.0,
                    1e-10,
                );
                let path = path_entropy_speedup(&gen, &mu0, &lam, t, ctx.tol)?;
                let marg = marginal_relative_entropy(&shifted.weights, &base.weights);
                r.check(labels("data-processing"), marg, path, ctx.tol);
                r.check(
                    labels("pinsker-l1"),
                    l1(&shifted.weights, &base.weights),
                    (2.0 * path).sqrt(),
                    1e-12,
                );
                let cost = entropic_cost_bound(&Profile::constant(cap, t), &lam, t)?;
                r.check(labels("entropic-cost"), path, cost, ctx.tol);
            }
        }
    }
    Ok(r)
}

fn run_attractor(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&[
        "case",
        "t",
        "tau",
        "tv_exact_l1",
        "pinsker_chain_bound",
        "combined_formula_bound",
        "k_opt",
        "pass",
    ]);
    ctx.record_constants(&mut r);
    let alpha = ctx.exponential_alpha()?;
    let inputs = ctx.refined_inputs();
    let traced_c = refined_constant(ctx.cfg.geometry.dim, alpha, &inputs)?;
    r.constant("traced_C", traced_c, Provenance::ProofTraced);
    let c_speed = ctx
        .cfg
        .geometry
        .c_speed
        .unwrap_or(2.0 * ctx.geo.c_rho * ctx.dyn_c.c_gamma / alpha);
    let k_schedule = ctx.cfg.geometry.k.first().copied().unwrap_or(1.0);
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let (space, gen, mu0) = ctx.chain(&ctx.window, case)?;
        let setup = AttractorSetup {
            gen: &gen,
            space: &space,
            mu0: &mu0,
            lam: ctx.lam.clone(),
            t_grid: ctx.times()?.to_vec(),
            tau_grid: ctx.cfg.times.tau.clone(),
            c1: ctx.dyn_c.c1,
            c_speed,
            l: ctx.cfg.family.l,
            k_schedule,
            alpha,
            traced_c,
            k_max: 50.0,
            tol: ctx.tol,
        };
        for row in attractor_demo(&setup)? {
            let slack = 2.0 * ctx.tol;
            let pass =
                row.tv_exact <= row.pinsker_chain_bound + slack && row.tv_exact <= row.combined_formula_bound + slack;
            let margin = (row.pinsker_chain_bound - row.tv_exact).min(row.combined_formula_bound - row.tv_exact);
            r.row(
                vec![
                    case_label(ci, case),
                    fmt(row.t),
                    fmt(row.tau),
                    fmt(row.tv_exact),
                    fmt(row.pinsker_chain_bound),
                    fmt(row.combined_formula_bound),
                    fmt(row.k_opt),
                    pass.to_string(),
                ],
                Some(pass),
                Some(margin),
            );
        }
    }
    Ok(r)
}

fn run_mc_marginal(ctx: &Context) -> Result<Report> {
    let mut r = Report::new(&["case", "t", "cell", "estimate", "std_error", "exact", "z_score", "pass"]);
    ctx.record_constants(&mut r);
    let n = ctx.cfg.numerics.replicas;
    for (ci, case) in ctx.cfg.geometry.cases.iter().enumerate() {
        let (space, gen, mu0) = ctx.chain(&ctx.window, case)?;
        let env = Environment::new(case.boundary);
        let eta0 = space.decode(space.state_from(&case.initial));
        for &t in ctx.times()? {
            let est = estimate_marginal(
                &ctx.family,
                &ctx.window,
                None,
                &env,
                &eta0,
                t,
                &ctx.lam,
                n,
                ctx.cfg.numerics.seed,
            )?;
            let exact = marginal(&space, &evolve(&gen, &mu0, t, ctx.tol)?, &ctx.lam)?;
            for (cell, (e, p)) in est.iter().zip(&exact).enumerate() {
                // binomial error at the exact probability; 5 standard errors
                let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
                let z = (e.value - p) / se;
                let pass = z.abs() <= 5.0;
                r.row(
                    vec![
                        case_label(ci, case),
                        fmt(t),
                        cell.to_string(),
                        fmt(e.value),
                        fmt(e.std_error),
                        fmt(*p),
                        fmt(z),
                        pass.to_string(),
                    ],
                    Some(pass),
                    Some(5.0 - z.abs()),
                );
            }
        }
    }
    r.notes
        .push(format!("{n} replicas, base seed {}", ctx.cfg.numerics.seed));
    Ok(r)
}
