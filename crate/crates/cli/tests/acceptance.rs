//! Acceptance gate: one PASS/FAIL line per criterion, with the detail of
//! each check underneath. Tolerances are the ones the criteria pin.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use evr_core::control::{self, ControlOptions, Decision};
use evr_core::evr::{self, EnginePreference, EvrOptions, RefinementSpec};
use evr_core::files::{self, ResolvedSpec};
use evr_core::model::DecisionModel;
use evr_core::oracle;
use support::{affine_version, instance, point_mass_version, structural_instance, CLASSES};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn model(name: &str) -> DecisionModel {
    let text = std::fs::read_to_string(fixtures().join(name)).unwrap();
    files::parse_model(&text).unwrap()
}

fn spec(name: &str, m: &DecisionModel) -> ResolvedSpec {
    let text = std::fs::read_to_string(fixtures().join(name)).unwrap();
    files::parse_spec(&text).unwrap().resolve(m).unwrap()
}

fn refinement(name: &str, m: &DecisionModel) -> RefinementSpec {
    match spec(name, m) {
        ResolvedSpec::Refinement(r) => r,
        ResolvedSpec::MuDirect { .. } => panic!("{name} is a mu-direct spec"),
    }
}

fn evr_bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_evr"))
        .args(args)
        .current_dir(fixtures())
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap())
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

struct Criterion {
    checks: Vec<(bool, String)>,
}

impl Criterion {
    fn new() -> Self {
        Self { checks: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.checks.push((ok, detail));
    }

    fn close(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        self.check(ok, format!("{what}: got {got:.10}, want {want} ± {tol:e} (off by {:.3e})", (got - want).abs()));
    }

    fn within_sigma(&mut self, what: &str, est: f64, se: f64, want: f64) {
        let slack = 4.0 * se + 1e-12;
        let ok = (est - want).abs() <= slack;
        self.check(ok, format!("{what}: estimate {est:.8} ± {se:.2e}, exact {want:.8} (|z| = {:.2})", (est - want).abs() / se.max(1e-300)));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.0)
    }
}

fn c1() -> Criterion {
    let mut c = Criterion::new();
    let (code, out) = evr_bin(&["eval", "party2.model", "--json"]);
    c.check(code == 0, format!("`evr eval party2.model --json` exit code {code}"));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap_or_default();
    let eu: Vec<f64> = v["per_action_eu"]
        .as_array()
        .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
        .unwrap_or_default();
    c.close("EU(Outdoor)", eu.first().copied().unwrap_or(f64::NAN), 0.60, 1e-12);
    c.close("EU(Indoor)", eu.get(1).copied().unwrap_or(f64::NAN), 0.61, 1e-12);
    c.check(v["best_action"] == "Indoor", format!("best action {}", v["best_action"]));
    c
}

fn c2() -> Criterion {
    let mut c = Criterion::new();
    let m = model("party2.model");
    let s = refinement("qu_rain.spec", &m);
    let r = evr::evr(&m, &s).unwrap();
    c.check(r.engine == evr::Engine::ExactBreakpoint, format!("engine {:?}", r.engine));
    c.close("E[v|R(ξ)] exact", r.value_with, 0.6327226, 1e-6);
    c.close("EVR exact", r.evr, 0.0227226, 1e-6);
    // Independent reference: envelope of the two lines under U[.3,.5].
    let envelope = simpson(|p| (1.0 - p).max(0.57 + 0.1 * p) * 5.0, 0.3, 0.5, 200_000);
    c.close("exact engine vs independent envelope quadrature", r.value_with, envelope, 1e-9);
    let split = |p: f64| if p <= 0.38 { 1.0 - p } else { 0.57 + 0.1 * p };
    let rounded = simpson(|p| split(p) * 5.0, 0.3, 0.38, 20_000) + simpson(|p| split(p) * 5.0, 0.38, 0.5, 20_000);
    c.close("integration split at the rounded 0.38", rounded, 0.6324, 5e-5);
    c
}

fn c3() -> Criterion {
    let mut c = Criterion::new();
    let m = model("party2.model");
    let ResolvedSpec::MuDirect { mu, default_value } = spec("qp_indoor_paperpdf.spec", &m) else {
        panic!("expected mu-direct")
    };
    let r = evr::evr_mu_direct(&mu, default_value.unwrap());
    c.close("EVR, mu-direct with printed triangular(.56,.61,.66)", r.evr, 0.004253, 1e-6);

    let s = refinement("qp_indoor.spec", &m);
    let opts = EvrOptions { engine: EnginePreference::MonteCarlo, mc_samples: 1_000_000, seed: 7 };
    let mc = evr::evr_with(&m, &s, &opts).unwrap();
    c.within_sigma("EVR, Monte Carlo over the authentic uniforms", mc.evr, mc.mc_stderr.unwrap(), 0.004444);

    // The printed 0.02733 comes from integrating the descending branch on
    // [.60, .61], a curve of total mass 1.04 rather than the stated pdf.
    let up = |x: f64| 400.0 * (x - 0.56);
    let down = |x: f64| 20.0 - 400.0 * (x - 0.61);
    let printed = simpson(|x| up(x) * 0.6, 0.56, 0.60, 1000)
        + simpson(|x| down(x) * 0.6, 0.60, 0.61, 1000)
        + simpson(|x| down(x) * x, 0.61, 0.66, 1000);
    let printed_mass = simpson(up, 0.56, 0.60, 1000) + simpson(down, 0.60, 0.61, 1000) + simpson(down, 0.61, 0.66, 1000);
    let faithful = simpson(|x| up(x) * 0.6, 0.56, 0.60, 1000)
        + simpson(|x| up(x) * x, 0.60, 0.61, 1000)
        + simpson(|x| down(x) * x, 0.61, 0.66, 1000);
    c.check(
        (printed - 0.63733).abs() < 5e-6 && (printed_mass - 1.04).abs() < 1e-9,
        format!("printed expression evaluates to {printed:.6} over a curve of mass {printed_mass:.4}, not a pdf"),
    );
    c.check(
        (faithful - 0.61 - 0.02733).abs() > 0.02 && (faithful - r.value_with).abs() < 1e-9,
        format!("the printed pdf itself gives EVR {:.7}, so 0.02733 is not derivable from it", faithful - 0.61),
    );
    c
}

fn c4() -> Criterion {
    let mut c = Criterion::new();
    let m = model("party2.model");
    let s = refinement("cs_rain.spec", &m);
    let r = evr::evr(&m, &s).unwrap();
    c.close("value without refinement (Outdoor)", r.value_without, 0.62, 1e-12);
    c.check(m.actions()[r.default_action] == "Outdoor" || r.default_action == 0, format!("default action index {}", r.default_action));
    c.close("EVR exact", r.evr, 0.000833, 1e-6);
    // The displayed double integral, evaluated independently.
    let inner = |m1: f64| {
        simpson(|m2| 2500.0 * (m2 - 0.59) * m1, 0.59, 0.61, 200)
            + simpson(|m2| (50.0 - 2500.0 * (m2 - 0.61)) * m1, 0.61, m1, 200)
            + simpson(|m2| (50.0 - 2500.0 * (m2 - 0.61)) * m2, m1, 0.63, 200)
    };
    let displayed = simpson(|m1| 50.0 * inner(m1), 0.61, 0.63, 2000) - 0.62;
    c.close("EVR vs the displayed integral", r.evr, displayed, 1e-9);
    c.check((r.evr - 0.3008).abs() > 0.2, format!("printed 0.3008 is an erratum (value is {:.7})", r.evr));
    c
}

fn c5() -> Criterion {
    let mut c = Criterion::new();
    let m = model("party3.model");
    let ResolvedSpec::MuDirect { mu, default_value } = spec("ca_porch_paperpdf.spec", &m) else {
        panic!("expected mu-direct")
    };
    let r = evr::evr_mu_direct(&mu, default_value.unwrap());
    c.close("E[max μ], printed triangular(.564,.614,.664)", r.value_with, 0.62568, 1e-6);
    c.close("EVR, printed pdf", r.evr, 0.00568, 1e-6);
    let s = refinement("ca_porch.spec", &m);
    let exact = evr::evr(&m, &s).unwrap();
    c.close("EVR, convolution of the stated φ distributions", exact.evr, 0.0011433, 1e-6);
    let mc = oracle::mc_value_with(&m, &s, 1_000_000, 11).unwrap();
    c.within_sigma("value with refinement, Monte Carlo", mc.estimate, mc.stderr, exact.value_with);
    c
}

fn c6() -> Criterion {
    let mut c = Criterion::new();
    let singles = (0..1000u64)
        .filter(|&seed| {
            let (m, s) = structural_instance(seed, 1);
            evr::evr(&m, &s).unwrap().evr != 0.0
        })
        .count();
    c.check(singles == 0, format!("single-hypothesis specs with nonzero EVR: {singles} of 1000"));

    let mut worst_z: f64 = 0.0;
    let mut misses = 0;
    for seed in 0..200u64 {
        let (m, s) = structural_instance(10_000 + seed, 2 + (seed % 3) as usize);
        let exact = evr::value_with(&m, &s).unwrap().0;
        let est = oracle::mc_value_with(&m, &s, 20_000, seed).unwrap();
        let dev = (est.estimate - exact).abs();
        if dev > 4.0 * est.stderr + 1e-12 {
            misses += 1;
        }
        if est.stderr > 0.0 {
            worst_z = worst_z.max(dev / est.stderr);
        }
    }
    c.check(misses == 0, format!("mixture vs Monte Carlo, 200 specs with 2-4 hypotheses: {misses} beyond 4σ (max |z| {worst_z:.2})"));

    let mut violations = 0;
    let mut slack = f64::INFINITY;
    for seed in 0..1000u64 {
        let (m, s) = structural_instance(50_000 + seed, 2 + (seed % 3) as usize);
        let r = evr::evr(&m, &s).unwrap();
        let bound = evr::operative_model(&m, &s).unwrap().evpi();
        slack = slack.min(bound - r.evr);
        if r.evr > bound + 1e-9 {
            violations += 1;
        }
    }
    c.check(violations == 0, format!("EVR ≤ EVPI(operative) + 1e-9 on 1000 specs: {violations} violations (min slack {slack:.3e})"));
    c
}

fn c7() -> Criterion {
    use rand::{Rng, SeedableRng};
    let mut c = Criterion::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for class in CLASSES {
        let (mut negative, mut nonzero_point, mut equivariance, mut argmax) = (0, 0, 0, 0);
        let mut min_evr = f64::INFINITY;
        for seed in 0..1000u64 {
            let (m, s) = instance(class, 1_000_000 + seed);
            let r = evr::evr(&m, &s).unwrap();
            min_evr = min_evr.min(r.evr);
            if r.evr < -1e-9 {
                negative += 1;
            }
            if evr::evr(&m, &point_mass_version(&s)).unwrap().evr != 0.0 {
                nonzero_point += 1;
            }
            let a: f64 = rng.random_range(0.01..20.0);
            let b: f64 = rng.random_range(-5.0..5.0);
            let (m2, s2) = affine_version(&m, &s, a, b);
            let moved = evr::evr(&m2, &s2).unwrap();
            if (moved.evr - a * r.evr).abs() > 1e-9 * a.max(1.0) {
                equivariance += 1;
            }
            if moved.default_action != r.default_action {
                argmax += 1;
            }
        }
        c.check(
            negative + nonzero_point + equivariance + argmax == 0,
            format!(
                "{class:?}: 1000 instances, EVR < -1e-9: {negative} (min {min_evr:.2e}), point-mass EVR ≠ 0: {nonzero_point}, affine violations: {equivariance}, default-action changes: {argmax}"
            ),
        );
    }
    c
}

fn c8() -> Criterion {
    let mut c = Criterion::new();
    let party2 = model("party2.model");
    let party3 = model("party3.model");
    let cases = [
        ("qu_rain.spec", &party2),
        ("qp_indoor.spec", &party2),
        ("cs_rain.spec", &party2),
        ("ca_porch.spec", &party3),
        ("s_wind.spec", &party2),
    ];
    for (name, m) in cases {
        let s = refinement(name, m);
        let exact = evr::value_with(m, &s).unwrap().0;
        let a = oracle::simulate_refinement(m, &s, 1_000_000, 2024).unwrap();
        c.within_sigma(&format!("{name}: simulated value with refinement"), a.estimate, a.stderr, exact);
        let b = oracle::simulate_refinement(m, &s, 1_000_000, 2024).unwrap();
        c.check(
            a.estimate.to_bits() == b.estimate.to_bits() && a.stderr.to_bits() == b.stderr.to_bits(),
            format!("{name}: rerun with the same seed is bit-identical"),
        );
    }
    c
}

fn c9() -> Criterion {
    let mut c = Criterion::new();
    let path = fixtures().join("party_greedy.session");
    let session = files::parse_session(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let m = model("party2.model");
    let procs = session.procedures(&m).unwrap();
    let costs = session.costs().unwrap();
    let opts = ControlOptions { max_steps: session.max_steps, seed: session.seed, ..Default::default() };
    let log = control::greedy_controller(&m, &procs, &costs, &opts).unwrap();
    let mut argmax_ok = true;
    for step in &log.steps {
        if let Decision::Apply { procedure, .. } = &step.decision {
            let best = step.table.iter().filter_map(|e| e.best.as_ref().map(|b| (e, b.nevr)));
            let top = best.clone().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let chosen = step.table.iter().find(|e| &e.procedure == procedure).and_then(|e| e.best.as_ref());
            argmax_ok &= chosen.is_some_and(|p| p.nevr == top && p.nevr > 0.0);
        }
    }
    c.check(
        argmax_ok && log.refinements() == 2,
        format!("zero-cost session: {} refinements, each the step's max-NEVR procedure: {argmax_ok}", log.refinements()),
    );
    let (code1, out1) = evr_bin(&["control", "party_greedy.session", "--json"]);
    let (code2, out2) = evr_bin(&["control", "party_greedy.session", "--json"]);
    c.check(code1 == 0 && code2 == 0 && out1 == out2, "CLI session log is byte-identical across reruns".into());

    let point = files::parse_session(&std::fs::read_to_string(fixtures().join("party_pointmass.session")).unwrap()).unwrap();
    let plog = control::greedy_controller(
        &m,
        &point.procedures(&m).unwrap(),
        &point.costs().unwrap(),
        &ControlOptions { max_steps: point.max_steps, seed: point.seed, ..Default::default() },
    )
    .unwrap();
    c.check(
        plog.steps.len() == 1 && plog.refinements() == 0 && plog.final_action == "Indoor",
        format!("all NEVR ≤ 0: halted after {} step(s), final action {}", plog.steps.len(), plog.final_action),
    );

    let qu = [procs[0].clone()];
    let zero = control::CostModel::zero();
    let first = control::greedy_controller(&m, &qu, &zero, &ControlOptions { max_steps: 1, ..Default::default() }).unwrap();
    let Decision::Apply { t, .. } = first.steps[0].decision else {
        c.check(false, "single-step controller did not refine".into());
        return c;
    };
    let predicted = evr::evr(&m, &qu[0].spec_at(&m, t).unwrap()).unwrap();
    let runs = 10_000u64;
    let values: Vec<f64> = (0..runs)
        .map(|seed| {
            control::greedy_controller(&m, &qu, &zero, &ControlOptions { max_steps: 1, seed, ..Default::default() })
                .unwrap()
                .final_value
        })
        .collect();
    let mean = values.iter().sum::<f64>() / runs as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    c.within_sigma(
        "10^4 single-step runs: mean realized gain vs EVR",
        mean - predicted.value_without,
        (var / runs as f64).sqrt(),
        predicted.evr,
    );
    c
}

fn c10() -> Criterion {
    let mut c = Criterion::new();
    let (code, csv) = evr_bin(&["figure", "policy-vs-pi", "--model", "party2.model", "--state", "Rain"]);
    let bp: Vec<f64> = csv
        .lines()
        .filter(|l| l.ends_with(",breakpoint"))
        .filter_map(|l| l.split(',').next()?.parse().ok())
        .collect();
    c.check(code == 0 && bp.len() == 1, format!("policy-vs-pi breakpoints: {bp:?}"));
    c.close("policy-vs-pi breakpoint", bp.first().copied().unwrap_or(f64::NAN), 43.0 / 110.0, 1e-12);
    for (constants, kink) in [("0.60", 0.60), ("0.62,0.61", 0.62)] {
        let (code, csv) = evr_bin(&["figure", "mustar-vs-mu", "--constants", constants, "--lo", "0.5", "--hi", "0.7"]);
        let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
        let k: Vec<f64> = rows.iter().filter(|r| r[2] == "kink").filter_map(|r| r[0].parse().ok()).collect();
        let envelope = rows.iter().all(|r| {
            let (mu, star): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            star == mu.max(kink)
        });
        c.check(
            code == 0 && k == [kink] && envelope,
            format!("mustar-vs-mu with constants [{constants}]: kink at {k:?}, max-envelope shape holds: {envelope}"),
        );
    }
    c
}

type Check = fn() -> Criterion;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("base evaluation", c1),
        ("uncertainty refinement", c2),
        ("preference refinement", c3),
        ("state-variable refinement", c4),
        ("action refinement", c5),
        ("structural refinement", c6),
        ("property suite", c7),
        ("oracle consistency", c8),
        ("controller", c9),
        ("figure data", c10),
    ];
    let mut failed = Vec::new();
    for (i, (title, run)) in criteria.iter().enumerate() {
        let c = run();
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}: {title}", i + 1);
        for (ok, detail) in &c.checks {
            println!("    [{}] {detail}", if *ok { "ok" } else { "FAIL" });
        }
        if !c.passed() {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
