//! Seeded random models and refinement specs shared by the property suite
//! and the acceptance target.

#![allow(dead_code)]

use evr_core::dists::Density1D;
use evr_core::evr::{
    CaSpec, CellDist, CsSpec, Hypothesis, ProbParam, QpSpec, QuSpec, RefinementSpec,
    StructuralSpec,
};
use evr_core::model::DecisionModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Qu,
    Qp,
    Cs,
    Ca,
    S,
}

pub const CLASSES: [Class; 5] = [Class::Qu, Class::Qp, Class::Cs, Class::Ca, Class::S];

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, states: usize) -> DecisionModel {
    let m = rng.random_range(2..=4);
    let utilities = (0..m)
        .map(|_| (0..states).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    DecisionModel::new(labels("a", m), labels("x", states), simplex(rng, states), utilities).unwrap()
}

/// Point, uniform, triangular or a point/uniform mixture near `center`.
pub fn random_dist(rng: &mut ChaCha8Rng, center: f64, spread: f64) -> Density1D {
    let w = rng.random_range(0.01..1.0) * spread;
    let lo = center - w * rng.random_range(0.0..1.0);
    let hi = lo + w;
    match rng.random_range(0..4) {
        0 => Density1D::point(center).unwrap(),
        1 => Density1D::uniform(lo, hi).unwrap(),
        2 => Density1D::triangular(lo, rng.random_range(lo..hi), hi).unwrap(),
        _ => Density1D::mixture(&[
            (0.3, Density1D::point(center).unwrap()),
            (0.7, Density1D::uniform(lo, hi).unwrap()),
        ])
        .unwrap(),
    }
}

/// A model and a refinement of `class`. Per-action parameter counts stay
/// within the exact engines' degree cap.
pub fn instance(class: Class, seed: u64) -> (DecisionModel, RefinementSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    match class {
        Class::Qu => {
            let model = random_model(rng, 2);
            let c: f64 = rng.random_range(0.05..0.95);
            let room = c.min(1.0 - c);
            let w = rng.random_range(0.0..1.0) * 2.0 * room;
            let lo = c - w / 2.0;
            let hi = c + w / 2.0;
            let dist = match rng.random_range(0..3) {
                0 => Density1D::uniform(lo, hi).unwrap(),
                1 => Density1D::triangular(lo, rng.random_range(lo..hi), hi).unwrap(),
                _ => Density1D::mixture(&[
                    (0.5, Density1D::point(lo).unwrap()),
                    (0.5, Density1D::uniform(lo, hi).unwrap()),
                ])
                .unwrap(),
            };
            let state = rng.random_range(0..2);
            (model, RefinementSpec::Qu(QuSpec { params: vec![ProbParam { state, dist }] }))
        }
        Class::Qp => {
            let n = rng.random_range(2..=4);
            let model = random_model(rng, n);
            let mut cells = Vec::new();
            for a in 0..model.num_actions() {
                let k = rng.random_range(0..=3.min(n));
                for s in 0..k {
                    let center = model.utility(a, s);
                    cells.push(CellDist { action: a, state: s, dist: random_dist(rng, center, 0.5) });
                }
            }
            (model, RefinementSpec::Qp(QpSpec { cells }))
        }
        Class::Cs => {
            let n = rng.random_range(2..=3);
            let model = random_model(rng, n);
            let state = rng.random_range(0..n);
            let subs = rng.random_range(2..=3);
            let mut cells = Vec::new();
            for a in 0..model.num_actions() {
                for j in 0..subs {
                    if rng.random_bool(0.6) {
                        let center = model.utility(a, state) + rng.random_range(-0.2..0.2);
                        cells.push(CellDist { action: a, state: j, dist: random_dist(rng, center, 0.5) });
                    }
                }
            }
            let spec = CsSpec {
                state,
                sublabels: labels("sub", subs),
                conditional_probs: simplex(rng, subs),
                cells,
            };
            (model, RefinementSpec::Cs(spec))
        }
        Class::Ca => {
            let n = rng.random_range(2..=4);
            let model = random_model(rng, n);
            let phi = (0..n)
                .map(|i| {
                    let center = rng.random_range(0.0..1.0);
                    if i < 3 {
                        random_dist(rng, center, 0.6)
                    } else {
                        Density1D::point(center).unwrap()
                    }
                })
                .collect();
            (model, RefinementSpec::Ca(CaSpec { label: "new".into(), phi }))
        }
        Class::S => {
            let n = rng.random_range(2..=4);
            let model = random_model(rng, n);
            let h = rng.random_range(1..=4);
            (model.clone(), structural(rng, n, h))
        }
    }
}

pub fn structural(rng: &mut ChaCha8Rng, n: usize, hypotheses: usize) -> RefinementSpec {
    let ny = rng.random_range(2..=3);
    let weights = simplex(rng, hypotheses);
    let hypotheses = weights
        .into_iter()
        .map(|weight| Hypothesis {
            weight,
            p_y: simplex(rng, ny),
            cpt: (0..ny).map(|_| simplex(rng, n)).collect(),
        })
        .collect();
    RefinementSpec::S(StructuralSpec { y_labels: labels("y", ny), hypotheses })
}

/// Structural spec with exactly `hypotheses` hypotheses on a random model.
pub fn structural_instance(seed: u64, hypotheses: usize) -> (DecisionModel, RefinementSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let model = random_model(&mut rng, n);
    let spec = structural(&mut rng, n, hypotheses);
    (model, spec)
}

fn map_dists(spec: &RefinementSpec, f: impl Fn(&Density1D) -> Density1D) -> RefinementSpec {
    match spec {
        RefinementSpec::Qu(s) => RefinementSpec::Qu(QuSpec {
            params: s.params.iter().map(|p| ProbParam { state: p.state, dist: f(&p.dist) }).collect(),
        }),
        RefinementSpec::Qp(s) => RefinementSpec::Qp(QpSpec {
            cells: s
                .cells
                .iter()
                .map(|c| CellDist { action: c.action, state: c.state, dist: f(&c.dist) })
                .collect(),
        }),
        RefinementSpec::Cs(s) => RefinementSpec::Cs(CsSpec {
            cells: s
                .cells
                .iter()
                .map(|c| CellDist { action: c.action, state: c.state, dist: f(&c.dist) })
                .collect(),
            ..s.clone()
        }),
        RefinementSpec::Ca(s) => RefinementSpec::Ca(CaSpec {
            label: s.label.clone(),
            phi: s.phi.iter().map(f).collect(),
        }),
        RefinementSpec::S(s) => RefinementSpec::S(s.clone()),
    }
}

/// Every second-order distribution collapsed to a point at its mean; a
/// structural spec keeps only its first hypothesis.
pub fn point_mass_version(spec: &RefinementSpec) -> RefinementSpec {
    if let RefinementSpec::S(s) = spec {
        let mut first = s.hypotheses[0].clone();
        first.weight = 1.0;
        return RefinementSpec::S(StructuralSpec { y_labels: s.y_labels.clone(), hypotheses: vec![first] });
    }
    map_dists(spec, |d| Density1D::point(d.mean()).unwrap())
}

/// Utilities mapped by `u ↦ a·u + b`, together with every utility
/// distribution in the spec.
pub fn affine_version(
    model: &DecisionModel,
    spec: &RefinementSpec,
    a: f64,
    b: f64,
) -> (DecisionModel, RefinementSpec) {
    let utilities = model
        .utilities()
        .iter()
        .map(|row| row.iter().map(|u| a * u + b).collect())
        .collect();
    let model = model.with_utilities(utilities).unwrap();
    let spec = match spec {
        RefinementSpec::Qu(_) | RefinementSpec::S(_) => spec.clone(),
        _ => map_dists(spec, |d| d.affine(a, b).unwrap()),
    };
    (model, spec)
}
