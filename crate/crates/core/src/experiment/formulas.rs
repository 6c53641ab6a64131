//! Catalogue of the bound evaluators and direct evaluation from named inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    combined_attractor_bound, entropic_cost_bound, gamma_incomplete, minimal_cost, prop_refined_bound,
    thm_correlation_bound, thm_mixing_constants, thm_restriction_bound, BoundReport, Provenance, RefinedInputs,
};
use crate::error::{Error, Result};
use crate::profile::Profile;

pub struct FormulaInfo {
    pub id: &'static str,
    pub formula: &'static str,
    pub inputs: &'static [&'static str],
    pub anchor: &'static str,
}

pub const FORMULAS: &[FormulaInfo] = &[
    FormulaInfo {
        id: "thm_restriction_bound",
        formula: "f_inf * c1 * c_sl / (c_rho^2 * c_gamma) * exp(c_gamma * c_rho * t) * tail",
        inputs: &["f_inf", "c1", "c_sl", "c_rho", "c_gamma", "t", "tail"],
        anchor: "restriction to finite volumes: the total variation error on a finite set when only a blow-up of it is updated",
    },
    FormulaInfo {
        id: "prop_refined_bound",
        formula: "C * |Lambda| * exp(-alpha k) * k^(d-1), C traced, schedule h(s) = 2 c_rho c_gamma/alpha (t-s) + L + 1 + k",
        inputs: &["dim", "alpha", "k", "lam_size", "c1", "c_gamma", "c_rho", "c_sl", "L"],
        anchor: "refined restriction with a shrinking active region; constant traced through the argument",
    },
    FormulaInfo {
        id: "thm_correlation_bound",
        formula: "c1 / (rho_L c_rho^2 c_gamma) * |||f||| |||g||| * exp(2 c_rho c_gamma t) * rho_dist",
        inputs: &["norm_f", "norm_g", "c1", "rho_L", "c_rho", "c_gamma", "t", "rho_dist"],
        anchor: "spatial decay of time-t correlations between local observables",
    },
    FormulaInfo {
        id: "thm_mixing_constants",
        formula: "s* = log(8 delta rho_L / (c_gamma rho_dist)) / (c_rho c_gamma + delta), exponent delta / (c_rho c_gamma + delta), delta = alpha_hat",
        inputs: &["K_hat", "alpha_hat", "c1", "c_rho", "c_gamma", "rho_L", "rho_dist", "dist_fg", "L"],
        anchor: "spatial mixing of limiting stationary measures under rapid convergence",
    },
    FormulaInfo {
        id: "gamma_incomplete",
        formula: "Gamma(d, x) = (d-1)! e^-x sum_{n<d} x^n/n! <= e (d-1)! e^-x x^(d-1)",
        inputs: &["d", "x"],
        anchor: "upper incomplete Gamma function bound for x >= d - 1",
    },
    FormulaInfo {
        id: "entropic_cost_bound",
        formula: "integral_0^t c(s) (lambda(s) - 1)^2 ds, constant c and lambda",
        inputs: &["c", "lambda", "t"],
        anchor: "relative entropy cost of speeding up the dynamics",
    },
    FormulaInfo {
        id: "minimal_cost",
        formula: "tau^2 / integral_0^t ds / f(s), f(s) = f_p + f_q s, attained at lambda* = 1 + tau / (f(s) integral 1/f)",
        inputs: &["f_p", "f_q", "t", "tau"],
        anchor: "cheapest speed-up realising a time shift tau",
    },
    FormulaInfo {
        id: "combined_attractor_bound",
        formula: "2 C |Lambda| exp(-alpha k) + tau/sqrt(2) * (log((c t + L + k)/(L + k)) / (2c))^(-1/2)",
        inputs: &["lam_size", "alpha", "k", "c_speed", "L", "t", "tau", "traced_C"],
        anchor: "absence of time-translation symmetry breaking: distance between the laws at t and t + tau",
    },
];

pub fn describe(id: &str) -> Result<&'static FormulaInfo> {
    FORMULAS
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::Config(format!("unknown formula_id {id:?}")))
}

pub fn describe_text(id: &str) -> Result<String> {
    let f = describe(id)?;
    Ok(format!(
        "{}\n  formula: {}\n  inputs:  {}\n  anchor:  {}\n",
        f.id,
        f.formula,
        f.inputs.join(", "),
        f.anchor
    ))
}

/// A `bound` request: a formula id and its named inputs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundRequest {
    pub formula_id: String,
    pub inputs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundOutput {
    pub formula_id: String,
    pub inputs: BTreeMap<String, f64>,
    pub value: f64,
    pub provenance: Provenance,
    /// Further named results (e.g. the exact side of an inequality).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl From<BoundReport> for BoundOutput {
    fn from(r: BoundReport) -> Self {
        BoundOutput {
            formula_id: r.formula_id.to_string(),
            inputs: r.inputs.into_iter().collect(),
            value: r.value,
            provenance: r.provenance,
            extra: r.factors.into_iter().collect(),
        }
    }
}

fn explicit(id: &str, inputs: &BTreeMap<String, f64>, value: f64, extra: &[(&str, f64)]) -> BoundOutput {
    BoundOutput {
        formula_id: id.to_string(),
        inputs: inputs.clone(),
        value,
        provenance: Provenance::Explicit,
        extra: extra.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{name} must be a nonnegative integer, got {v}")))
    }
}

impl BoundRequest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl BoundOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

pub fn evaluate(req: &BoundRequest) -> Result<BoundOutput> {
    let info = describe(&req.formula_id)?;
    if let Some(extra) = req.inputs.keys().find(|k| !info.inputs.contains(&k.as_str())) {
        return Err(Error::Config(format!("{} has no input {extra:?}", info.id)));
    }
    let get = |name: &str| {
        req.inputs
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("{} needs input {name:?}", info.id)))
    };
    match info.id {
        "thm_restriction_bound" => Ok(thm_restriction_bound(
            get("f_inf")?,
            get("c1")?,
            get("c_sl")?,
            get("c_rho")?,
            get("c_gamma")?,
            get("t")?,
            get("tail")?,
        )?
        .into()),
        "prop_refined_bound" => {
            let inputs = RefinedInputs {
                c1: get("c1")?,
                c_gamma: get("c_gamma")?,
                c_rho: get("c_rho")?,
                c_sl: get("c_sl")?,
                l: get("L")?,
            };
            Ok(prop_refined_bound(
                as_count("dim", get("dim")?)?,
                get("alpha")?,
                get("k")?,
                as_count("lam_size", get("lam_size")?)?,
                &inputs,
            )?
            .into())
        }
        "thm_correlation_bound" => Ok(thm_correlation_bound(
            get("norm_f")?,
            get("norm_g")?,
            get("c1")?,
            get("rho_L")?,
            get("c_rho")?,
            get("c_gamma")?,
            get("t")?,
            get("rho_dist")?,
        )?
        .into()),
        "thm_mixing_constants" => {
            let m = thm_mixing_constants(
                get("K_hat")?,
                get("alpha_hat")?,
                get("c1")?,
                get("c_rho")?,
                get("c_gamma")?,
                get("rho_L")?,
                get("rho_dist")?,
                get("dist_fg")?,
                get("L")?,
            )?;
            let mut out = explicit(
                info.id,
                &req.inputs,
                m.k,
                &[("s_star", m.s_star), ("alpha_exponent", m.alpha_exponent)],
            );
            out.provenance = Provenance::ProofTraced;
            Ok(out)
        }
        "gamma_incomplete" => {
            let g = gamma_incomplete(as_count("d", get("d")?)?, get("x")?)?;
            Ok(explicit(info.id, &req.inputs, g.bound, &[("exact", g.exact)]))
        }
        "entropic_cost_bound" => {
            let t = get("t")?;
            let v = entropic_cost_bound(
                &Profile::constant(get("c")?, t),
                &Profile::constant(get("lambda")?, t),
                t,
            )?;
            Ok(explicit(info.id, &req.inputs, v, &[]))
        }
        "minimal_cost" => {
            let f = Profile::Affine {
                p: get("f_p")?,
                q: get("f_q")?,
            };
            let m = minimal_cost(&f, get("t")?, get("tau")?)?;
            Ok(explicit(
                info.id,
                &req.inputs,
                m.min_value,
                &[("recip_integral", m.recip_integral)],
            ))
        }
        "combined_attractor_bound" => Ok(combined_attractor_bound(
            as_count("lam_size", get("lam_size")?)?,
            get("alpha")?,
            get("k")?,
            get("c_speed")?,
            get("L")?,
            get("t")?,
            get("tau")?,
            get("traced_C")?,
        )?
        .into()),
        other => Err(Error::InternalConsistency(format!("no evaluator for {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_anchor_mentions_total_variation_error() {
        assert!(describe_text("thm_restriction_bound")
            .unwrap()
            .contains("total variation error"));
        assert!(describe("no_such_formula").is_err());
    }

    #[test]
    fn every_formula_evaluates() {
        let sample: BTreeMap<&str, f64> = [
            ("f_inf", 1.0),
            ("c1", 1.0),
            ("c_sl", 1.0),
            ("c_rho", 1.0),
            ("c_gamma", 1.0),
            ("t", 1.0),
            ("tail", 0.1),
            ("dim", 1.0),
            ("alpha", 1.0),
            ("k", 3.0),
            ("lam_size", 1.0),
            ("L", 1.0),
            ("norm_f", 2.0),
            ("norm_g", 2.0),
            ("rho_L", 0.5),
            ("rho_dist", 0.01),
            ("K_hat", 1.0),
            ("alpha_hat", 1.0),
            ("dist_fg", 5.0),
            ("d", 2.0),
            ("x", 1.0),
            ("c", 2.0),
            ("lambda", 1.5),
            ("f_p", 1.0),
            ("f_q", 1.0),
            ("tau", 1.0),
            ("c_speed", 2.0),
            ("traced_C", 3.0),
        ]
        .into_iter()
        .collect();
        for f in FORMULAS {
            let req = BoundRequest {
                formula_id: f.id.to_string(),
                inputs: f.inputs.iter().map(|n| (n.to_string(), sample[n])).collect(),
            };
            let out = evaluate(&req).unwrap();
            assert!(out.value.is_finite() && out.value > 0.0, "{}", f.id);
        }
    }

    #[test]
    fn rejects_missing_and_unknown_inputs() {
        let req = BoundRequest {
            formula_id: "gamma_incomplete".into(),
            inputs: [("d".to_string(), 2.0)].into_iter().collect(),
        };
        assert!(matches!(evaluate(&req), Err(Error::Config(_))));
        let req = BoundRequest {
            formula_id: "gamma_incomplete".into(),
            inputs: [("d".to_string(), 2.0), ("x".to_string(), 1.0), ("y".to_string(), 0.0)]
                .into_iter()
                .collect(),
        };
        assert!(matches!(evaluate(&req), Err(Error::Config(_))));
    }
}
