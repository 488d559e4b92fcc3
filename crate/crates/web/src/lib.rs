//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Every export takes and returns plain strings (JSON or CSV) so the same
//! functions run in native tests.

use evr_core::evr::{self, EvrOptions};
use evr_core::figures;
use evr_core::files::{self, ResolvedSpec};
use evr_core::model::DecisionModel;
use serde_json::json;
use wasm_bindgen::prelude::*;

const PRESETS: [(&str, &str, &str); 5] = [
    ("uncertain rain probability", "party2", include_str!("../../../fixtures/qu_rain.spec")),
    ("uncertain indoor utilities", "party2", include_str!("../../../fixtures/qp_indoor.spec")),
    ("split rain into downpour and drizzle", "party2", include_str!("../../../fixtures/cs_rain.spec")),
    ("add a porch action", "party3", include_str!("../../../fixtures/ca_porch.spec")),
    ("wind as a hidden cause", "party2", include_str!("../../../fixtures/s_wind.spec")),
];

fn model_text(name: &str) -> &'static str {
    match name {
        "party3" => include_str!("../../../fixtures/party3.model"),
        _ => include_str!("../../../fixtures/party2.model"),
    }
}

fn load(model: &str) -> Result<DecisionModel, String> {
    files::parse_model(model).map_err(|e| format!("model: {e}"))
}

/// `[{name, model, spec}]` for the bundled examples.
#[wasm_bindgen]
pub fn presets() -> String {
    let list: Vec<_> = PRESETS
        .iter()
        .map(|(name, model, spec)| json!({"name": name, "model": model_text(model), "spec": spec}))
        .collect();
    serde_json::to_string(&list).expect("presets serialize")
}

/// Expected utility per action, best action and EVPI.
#[wasm_bindgen]
pub fn evaluate(model: &str) -> Result<String, String> {
    let m = load(model)?;
    let e = m.evaluate();
    Ok(json!({
        "actions": m.actions(),
        "per_action_eu": e.per_action_eu,
        "best_action": m.actions()[e.best_action],
        "value": e.value,
        "evpi": m.evpi(),
    })
    .to_string())
}

/// EVR report for a refinement spec. Falls back to Monte Carlo with
/// `samples` draws when no exact engine applies.
#[wasm_bindgen]
pub fn refine(model: &str, spec: &str, samples: u32, seed: u32) -> Result<String, String> {
    let m = load(model)?;
    let body = files::parse_spec(spec).map_err(|e| format!("spec: {e}"))?;
    let resolved = body.resolve(&m).map_err(|e| format!("spec: {e}"))?;
    let (kind, report, label) = match resolved {
        ResolvedSpec::Refinement(s) => {
            let opts = EvrOptions {
                mc_samples: u64::from(samples.max(1)),
                seed: u64::from(seed),
                ..Default::default()
            };
            let r = evr::evr_with(&m, &s, &opts).map_err(|e| e.to_string())?;
            let label = m.actions()[r.default_action].clone();
            (s.kind(), r, label)
        }
        ResolvedSpec::MuDirect { mu, default_value } => {
            let dv = default_value.unwrap_or_else(|| evr::mu_default_value(&mu));
            let r = evr::evr_mu_direct(&mu, dv);
            let label = format!("mu[{}]", r.default_action);
            ("mu-direct", r, label)
        }
    };
    let mut v = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    v["kind"] = json!(kind);
    v["default_action_label"] = json!(label);
    Ok(v.to_string())
}

/// Policy-vs-probability table for a two-state model, as CSV.
#[wasm_bindgen]
pub fn policy_curve(model: &str, state: &str, points: u32) -> Result<String, String> {
    let m = load(model)?;
    let s = m
        .state_index(state)
        .ok_or_else(|| format!("unknown state `{state}`"))?;
    let table = figures::policy_vs_pi(&m, s, points.max(2) as usize).map_err(|e| e.to_string())?;
    Ok(table.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn party2() -> &'static str {
        model_text("party2")
    }

    #[test]
    fn evaluate_party() {
        let v: serde_json::Value = serde_json::from_str(&evaluate(party2()).unwrap()).unwrap();
        assert_eq!(v["best_action"], "Indoor");
        assert!((v["value"].as_f64().unwrap() - 0.61).abs() < 1e-12);
    }

    #[test]
    fn presets_resolve() {
        let list: Vec<serde_json::Value> = serde_json::from_str(&presets()).unwrap();
        assert_eq!(list.len(), 5);
        for p in &list {
            let out = refine(p["model"].as_str().unwrap(), p["spec"].as_str().unwrap(), 1000, 1).unwrap();
            let v: serde_json::Value = serde_json::from_str(&out).unwrap();
            assert!(v["evr"].as_f64().unwrap() > 0.0, "{}", p["name"]);
        }
        let qu: serde_json::Value = serde_json::from_str(&refine(party2(), PRESETS[0].2, 1000, 1).unwrap()).unwrap();
        assert!((qu["evr"].as_f64().unwrap() - 1.0 / 44.0).abs() < 1e-12);
    }

    #[test]
    fn errors_are_messages() {
        let err = evaluate("{").unwrap_err();
        assert!(err.starts_with("model:"), "{err}");
        assert!(policy_curve(party2(), "Hail", 11).unwrap_err().contains("Hail"));
    }

    #[test]
    fn policy_curve_has_breakpoint() {
        let csv = policy_curve(party2(), "Rain", 11).unwrap();
        assert_eq!(csv.lines().filter(|l| l.ends_with("breakpoint")).count(), 1);
        assert_eq!(csv.lines().count(), 13);
    }
}
