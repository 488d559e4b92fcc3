//! Monte Carlo oracle for `E[max_k μ_k]` and the generative refinement
//! simulator.
//!
//! Draws come from ChaCha8 seeded with `seed`; chunk `c` of 8192 draws uses
//! stream `c`. Chunk statistics are merged in chunk order, so results are
//! identical with and without the `parallel` feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dists::Density1D;
use crate::evr::{self, EvrError, RefinementSpec};
use crate::model::{self, DecisionModel, PROB_TOL};

const CHUNK: u64 = 8192;
// Attempts per accepted draw before a rejection sampler gives up.
const MAX_REJECT_RATIO: u64 = 1000;

/// One draw of the refinement's uncertain quantities, in the spec's
/// parameter order. Structural specs draw a hypothesis index instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theta {
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub rejected: u64,
    /// Mean accepted probability vector when draws were rejected off the
    /// simplex; the operative model then uses it instead of the raw means.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operative_probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedOutcome {
    pub theta: Theta,
    pub refined_model: DecisionModel,
    pub realized_best_value: f64,
}

#[derive(Debug, Clone, Default)]
struct Stats {
    n: u64,
    mean: f64,
    m2: f64,
    rejected: u64,
    sums: Vec<f64>,
}

impl Stats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(mut self, other: Stats) -> Stats {
        if other.n == 0 {
            self.rejected += other.rejected;
            return self;
        }
        if self.n == 0 {
            let rejected = self.rejected + other.rejected;
            return Stats { rejected, ..other };
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
        self.rejected += other.rejected;
        if self.sums.len() < other.sums.len() {
            self.sums.resize(other.sums.len(), 0.0);
        }
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            *s += o;
        }
        self
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// A draw yields a value plus an optional vector to accumulate, or `None`
/// when rejected.
type Draw = Option<(f64, Option<Vec<f64>>)>;

fn run_chunk<F>(draw: &F, seed: u64, chunk: u64, count: u64) -> Result<Stats, EvrError>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Draw, EvrError> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let mut stats = Stats::default();
    while stats.n < count {
        if stats.rejected > MAX_REJECT_RATIO * count {
            return Err(EvrError::Spec(
                "parameter draws almost never form a valid probability vector".into(),
            ));
        }
        match draw(&mut rng)? {
            None => stats.rejected += 1,
            Some((x, extra)) => {
                stats.push(x);
                if let Some(v) = extra {
                    if stats.sums.is_empty() {
                        stats.sums = vec![0.0; v.len()];
                    }
                    for (s, x) in stats.sums.iter_mut().zip(v) {
                        *s += x;
                    }
                }
            }
        }
    }
    Ok(stats)
}

fn run<F>(draw: F, n: u64, seed: u64) -> Result<Stats, EvrError>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Draw, EvrError> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let size = |c: u64| CHUNK.min(n - c * CHUNK);
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Stats, EvrError>> = {
        use rayon::prelude::*;
        (0..chunks)
            .into_par_iter()
            .map(|c| run_chunk(&draw, seed, c, size(c)))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Stats, EvrError>> = (0..chunks)
        .map(|c| run_chunk(&draw, seed, c, size(c)))
        .collect();
    parts
        .into_iter()
        .try_fold(Stats::default(), |acc, s| Ok(acc.merge(s?)))
}

fn sample(d: &Density1D, rng: &mut ChaCha8Rng) -> f64 {
    match d.as_point() {
        Some(x) => x,
        None => d.quantile(rng.random::<f64>()),
    }
}

/// Draws θ, returning `None` when a probability draw leaves the simplex.
fn draw_theta(spec: &RefinementSpec, rng: &mut ChaCha8Rng) -> Option<Theta> {
    if let RefinementSpec::S(s) = spec {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = s.hypotheses.len() - 1;
        for (j, h) in s.hypotheses.iter().enumerate() {
            acc += h.weight;
            if u < acc {
                pick = j;
                break;
            }
        }
        return Some(Theta {
            values: Vec::new(),
            hypothesis: Some(pick),
        });
    }
    let values: Vec<f64> = spec.param_dists().into_iter().map(|d| sample(d, rng)).collect();
    if matches!(spec, RefinementSpec::Qu(_)) && values.iter().sum::<f64>() > 1.0 + PROB_TOL {
        return None;
    }
    Some(Theta {
        values,
        hypothesis: None,
    })
}

fn qu_probabilities(n: usize, spec: &evr::QuSpec, values: &[f64]) -> Result<Vec<f64>, EvrError> {
    let mut probs = vec![f64::NAN; n];
    for (p, &v) in spec.params.iter().zip(values) {
        probs[p.state] = v;
    }
    let rest = 1.0 - values.iter().sum::<f64>();
    if rest < -PROB_TOL {
        return Err(EvrError::Spec(format!(
            "probability draw sums to {}, above 1",
            1.0 - rest
        )));
    }
    for p in probs.iter_mut().filter(|p| p.is_nan()) {
        *p = rest.max(0.0);
    }
    Ok(probs)
}

/// Applies a draw to the model using the model-edit operations.
pub fn realize_model(
    model: &DecisionModel,
    spec: &RefinementSpec,
    theta: &Theta,
) -> Result<DecisionModel, EvrError> {
    let expect = spec.param_dists().len();
    if theta.values.len() != expect {
        return Err(EvrError::Spec(format!(
            "theta has {} values, spec has {expect} parameters",
            theta.values.len()
        )));
    }
    let refined = match spec {
        RefinementSpec::Qu(s) => {
            model.with_probabilities(qu_probabilities(model.num_states(), s, &theta.values)?)?
        }
        RefinementSpec::Qp(s) => {
            let mut u = model.utilities().to_vec();
            for (c, &v) in s.cells.iter().zip(&theta.values) {
                u[c.action][c.state] = v;
            }
            model.with_utilities(u)?
        }
        RefinementSpec::Cs(s) => {
            let mut sub: Vec<Vec<f64>> = model
                .utilities()
                .iter()
                .map(|row| vec![row[s.state]; s.sublabels.len()])
                .collect();
            for (c, &v) in s.cells.iter().zip(&theta.values) {
                sub[c.action][c.state] = v;
            }
            model.split_state(s.state, &s.sublabels, &s.conditional_probs, &sub)?
        }
        RefinementSpec::Ca(s) => model.add_action(&s.label, &theta.values)?,
        RefinementSpec::S(s) => match theta.hypothesis {
            Some(j) => {
                let h = s.hypotheses.get(j).ok_or_else(|| {
                    EvrError::Spec(format!("hypothesis {j} out of range"))
                })?;
                model.condition_on(&s.y_labels, &h.p_y, &h.cpt)?
            }
            None => evr::operative_model(model, spec)?,
        },
    };
    Ok(refined)
}

pub fn realize(
    model: &DecisionModel,
    spec: &RefinementSpec,
    theta: Theta,
) -> Result<RealizedOutcome, EvrError> {
    let refined_model = realize_model(model, spec, &theta)?;
    let realized_best_value = refined_model.evaluate().value;
    Ok(RealizedOutcome {
        theta,
        refined_model,
        realized_best_value,
    })
}

/// One θ draw for `seed`, rejection-sampled for probability refinements.
pub fn sample_outcome(spec: &RefinementSpec, seed: u64) -> Result<Theta, EvrError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REJECT_RATIO {
        if let Some(t) = draw_theta(spec, &mut rng) {
            return Ok(t);
        }
    }
    Err(EvrError::Spec(
        "parameter draws almost never form a valid probability vector".into(),
    ))
}

fn degenerate_estimate(
    model: &DecisionModel,
    spec: &RefinementSpec,
    n: u64,
    seed: u64,
) -> Result<McEstimate, EvrError> {
    Ok(McEstimate {
        estimate: evr::value_without(model, spec)?.0,
        stderr: 0.0,
        n,
        seed,
        rejected: 0,
        operative_probabilities: None,
    })
}

fn finish(stats: Stats, seed: u64, keep_probs: bool) -> McEstimate {
    let operative_probabilities = (keep_probs && stats.rejected > 0)
        .then(|| stats.sums.iter().map(|s| s / stats.n as f64).collect());
    McEstimate {
        estimate: stats.mean,
        stderr: stats.stderr(),
        n: stats.n,
        seed,
        rejected: stats.rejected,
        operative_probabilities,
    }
}

/// Estimates `E[max_k μ_k]` by sampling θ and evaluating the μ-profile (or
/// the realized probabilities for multi-state probability refinements).
pub fn mc_value_with(
    model: &DecisionModel,
    spec: &RefinementSpec,
    n: u64,
    seed: u64,
) -> Result<McEstimate, EvrError> {
    spec.validate(model)?;
    let n = n.max(1);
    if spec.is_degenerate() {
        return degenerate_estimate(model, spec, n, seed);
    }
    match spec {
        RefinementSpec::S(s) => {
            let values: Vec<f64> = s
                .hypotheses
                .iter()
                .map(|h| Ok(model.condition_on(&s.y_labels, &h.p_y, &h.cpt)?.evaluate().value))
                .collect::<Result<_, EvrError>>()?;
            let stats = run(
                |rng| Ok(draw_theta(spec, rng).map(|t| (values[t.hypothesis.unwrap_or(0)], None))),
                n,
                seed,
            )?;
            Ok(finish(stats, seed, false))
        }
        RefinementSpec::Qu(s) if model.num_states() > 2 => {
            let utilities = model.utilities();
            let stats = run(
                |rng| {
                    let Some(t) = draw_theta(spec, rng) else {
                        return Ok(None);
                    };
                    let probs = qu_probabilities(model.num_states(), s, &t.values)?;
                    let best = utilities
                        .iter()
                        .map(|row| model::dot(&probs, row))
                        .fold(f64::NEG_INFINITY, f64::max);
                    Ok(Some((best, Some(probs))))
                },
                n,
                seed,
            )?;
            Ok(finish(stats, seed, true))
        }
        _ => {
            let profile = evr::compile_mu(model, spec)?;
            let stats = run(
                |rng| {
                    let theta: Vec<f64> = profile.params.iter().map(|d| sample(d, rng)).collect();
                    let best = profile
                        .forms
                        .iter()
                        .map(|f| f.eval(&theta))
                        .fold(f64::NEG_INFINITY, f64::max);
                    Ok(Some((best, None)))
                },
                n,
                seed,
            )?;
            Ok(finish(stats, seed, false))
        }
    }
}

/// Generative estimate: draw θ, realize the refined model, record its best
/// value. Agrees with [`mc_value_with`] in distribution but exercises the
/// model-edit path.
pub fn simulate_refinement(
    model: &DecisionModel,
    spec: &RefinementSpec,
    n: u64,
    seed: u64,
) -> Result<McEstimate, EvrError> {
    spec.validate(model)?;
    let n = n.max(1);
    if spec.is_degenerate() {
        return degenerate_estimate(model, spec, n, seed);
    }
    let keep = matches!(spec, RefinementSpec::Qu(_));
    let stats = run(
        |rng| {
            let Some(theta) = draw_theta(spec, rng) else {
                return Ok(None);
            };
            let refined = realize_model(model, spec, &theta)?;
            let extra = keep.then(|| refined.probabilities().to_vec());
            Ok(Some((refined.evaluate().value, extra)))
        },
        n,
        seed,
    )?;
    Ok(finish(stats, seed, keep))
}
