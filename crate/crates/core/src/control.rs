//! Net expected value of refinement and the refinement controller.
//!
//! A [`Procedure`] maps an effort level `t` (minutes) to a refinement spec
//! against the current model. The greedy controller evaluates every
//! procedure's best effort, applies the one with the largest positive NEVR by
//! committing to an outcome, and repeats on the refined model until nothing
//! is worth doing.
//!
//! Built-in families grow the spread of the second-order distribution with
//! effort, `width(t) = w0·(1 − 2^(−t/h))`, so EVR is nondecreasing in `t`
//! with diminishing returns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::Density1D;
use crate::evr::{
    self, CaSpec, CellDist, CsSpec, EvrError, EvrOptions, ProbParam, QpSpec, QuSpec,
    RefinementSpec,
};
use crate::model::DecisionModel;
use crate::oracle::{self, Theta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Evr(#[from] EvrError),
    #[error("procedure `{id}`: {msg}")]
    Procedure { id: String, msg: String },
    #[error("procedure `{0}` no longer applies to the current model")]
    Exhausted(String),
}

impl From<crate::model::ModelError> for ControlError {
    fn from(e: crate::model::ModelError) -> Self {
        ControlError::Evr(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum AssessmentCost {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Linear {
        per_minute: f64,
    },
}

/// Assessment cost as a function of effort plus a computation cost charged
/// per added model cell (actions × states), the solve-time proxy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default)]
    pub assessment: AssessmentCost,
    #[serde(default)]
    pub compute_per_cell: f64,
}

impl CostModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self {
            assessment: AssessmentCost::Constant { value },
            compute_per_cell: 0.0,
        }
    }

    pub fn linear(per_minute: f64) -> Self {
        Self {
            assessment: AssessmentCost::Linear { per_minute },
            compute_per_cell: 0.0,
        }
    }

    pub fn assessment_cost(&self, t: f64) -> f64 {
        match self.assessment {
            AssessmentCost::Zero => 0.0,
            AssessmentCost::Constant { value } => value,
            AssessmentCost::Linear { per_minute } => per_minute * t,
        }
    }

    pub fn compute_cost(&self, added_cells: usize) -> f64 {
        self.compute_per_cell * added_cells as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        let a = match self.assessment {
            AssessmentCost::Zero => 0.0,
            AssessmentCost::Constant { value } => value,
            AssessmentCost::Linear { per_minute } => per_minute,
        };
        if ok(a) && ok(self.compute_per_cell) {
            Ok(())
        } else {
            Err("costs must be finite and nonnegative".into())
        }
    }
}

/// Effort-to-width schedule of the built-in families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthSchedule {
    pub max_width: f64,
    pub half_life: f64,
}

impl WidthSchedule {
    pub fn width(&self, t: f64) -> f64 {
        self.max_width * (1.0 - (-t / self.half_life).exp2())
    }
}

/// Uniform of the given width centred on `c`, or a point when the width is 0.
fn centred(c: f64, width: f64) -> Result<Density1D, EvrError> {
    if width <= 0.0 {
        return Ok(Density1D::point(c)?);
    }
    Ok(Density1D::uniform(c - width / 2.0, c + width / 2.0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRef {
    pub action: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCell {
    pub action: String,
    pub substate: String,
    pub center: f64,
}

/// How a procedure's spec depends on effort. Labels are resolved against the
/// model each time, so a procedure follows the model through refinements.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecFamily {
    /// Probability of `state` spread around its current value; with more
    /// than two states every state except the last is spread the same way and
    /// the last takes the remainder.
    Qu { state: String, schedule: WidthSchedule },
    /// Listed utilities spread around their current values.
    Qp {
        cells: Vec<CellRef>,
        schedule: WidthSchedule,
    },
    /// Splits `state`; listed sub-cells spread around their centres. Applies
    /// only while `state` exists.
    Cs {
        state: String,
        sublabels: Vec<String>,
        conditional_probs: Vec<f64>,
        cells: Vec<SubCell>,
        schedule: WidthSchedule,
    },
    /// Adds `label` with utilities spread around `centers` (one per state).
    /// Applies only while `label` is absent and the state count matches.
    Ca {
        label: String,
        centers: Vec<f64>,
        schedule: WidthSchedule,
    },
    /// One fixed spec per effort grid point; applies while the spec
    /// validates against the current model.
    Explicit(Vec<RefinementSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    pub id: String,
    pub family: SpecFamily,
    pub effort_grid: Vec<f64>,
}

impl Procedure {
    pub fn new(id: impl Into<String>, family: SpecFamily, effort_grid: Vec<f64>) -> Result<Self, ControlError> {
        let p = Self {
            id: id.into(),
            family,
            effort_grid,
        };
        p.validate()?;
        Ok(p)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, ControlError> {
        Err(ControlError::Procedure {
            id: self.id.clone(),
            msg: msg.into(),
        })
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.effort_grid.is_empty() {
            return self.fail("effort grid is empty");
        }
        if self.effort_grid.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || self.effort_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return self.fail("effort grid must be positive and strictly increasing");
        }
        let schedule = match &self.family {
            SpecFamily::Qu { schedule, .. }
            | SpecFamily::Qp { schedule, .. }
            | SpecFamily::Cs { schedule, .. }
            | SpecFamily::Ca { schedule, .. } => Some(schedule),
            SpecFamily::Explicit(specs) => {
                if specs.len() != self.effort_grid.len() {
                    return self.fail("explicit specs must match the effort grid one to one");
                }
                None
            }
        };
        if let Some(s) = schedule {
            if !(s.max_width.is_finite() && s.max_width >= 0.0 && s.half_life.is_finite() && s.half_life > 0.0) {
                return self.fail("width schedule needs max_width ≥ 0 and half_life > 0");
            }
        }
        Ok(())
    }

    fn grid_index(&self, t: f64) -> Result<usize, ControlError> {
        match self.effort_grid.iter().position(|&g| g == t) {
            Some(i) => Ok(i),
            None => self.fail(format!("effort {t} is not on the grid")),
        }
    }

    /// The refinement performed at effort `t` on `model`.
    pub fn spec_at(&self, model: &DecisionModel, t: f64) -> Result<RefinementSpec, ControlError> {
        let i = self.grid_index(t)?;
        let exhausted = || ControlError::Exhausted(self.id.clone());
        let state_of = |label: &str| model.state_index(label).ok_or_else(exhausted);
        let action_of = |label: &str| model.action_index(label).ok_or_else(exhausted);
        let spec = match &self.family {
            SpecFamily::Qu { state, schedule } => {
                let w = schedule.width(t);
                let probs = model.probabilities();
                let n = model.num_states();
                let swept = state_of(state)?;
                let spread = |i: usize| {
                    let p = probs[i];
                    let half = (w / 2.0).min(p).min(1.0 - p);
                    Ok::<_, ControlError>(ProbParam {
                        state: i,
                        dist: centred(p, 2.0 * half)?,
                    })
                };
                let params = if n == 2 {
                    vec![spread(swept)?]
                } else {
                    (0..n - 1).map(spread).collect::<Result<_, _>>()?
                };
                RefinementSpec::Qu(QuSpec { params })
            }
            SpecFamily::Qp { cells, schedule } => {
                let w = schedule.width(t);
                let mut out = Vec::new();
                for c in cells {
                    let (a, s) = (action_of(&c.action)?, state_of(&c.state)?);
                    out.push(CellDist {
                        action: a,
                        state: s,
                        dist: centred(model.utility(a, s), w)?,
                    });
                }
                RefinementSpec::Qp(QpSpec { cells: out })
            }
            SpecFamily::Cs {
                state,
                sublabels,
                conditional_probs,
                cells,
                schedule,
            } => {
                let w = schedule.width(t);
                let mut out = Vec::new();
                for c in cells {
                    let Some(sub) = sublabels.iter().position(|l| *l == c.substate) else {
                        return self.fail(format!("unknown sub-state `{}`", c.substate));
                    };
                    out.push(CellDist {
                        action: action_of(&c.action)?,
                        state: sub,
                        dist: centred(c.center, w)?,
                    });
                }
                RefinementSpec::Cs(CsSpec {
                    state: state_of(state)?,
                    sublabels: sublabels.clone(),
                    conditional_probs: conditional_probs.clone(),
                    cells: out,
                })
            }
            SpecFamily::Ca {
                label,
                centers,
                schedule,
            } => {
                if model.action_index(label).is_some() || centers.len() != model.num_states() {
                    return Err(exhausted());
                }
                let w = schedule.width(t);
                RefinementSpec::Ca(CaSpec {
                    label: label.clone(),
                    phi: centers.iter().map(|&c| centred(c, w)).collect::<Result<_, _>>()?,
                })
            }
            SpecFamily::Explicit(specs) => specs[i].clone(),
        };
        match spec.validate(model) {
            Ok(()) => Ok(spec),
            Err(_) if matches!(self.family, SpecFamily::Explicit(_) | SpecFamily::Cs { .. }) => {
                Err(exhausted())
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Model cells added by a refinement, the computation-cost proxy.
fn added_cells(model: &DecisionModel, spec: &RefinementSpec) -> usize {
    match spec {
        RefinementSpec::Cs(s) => model.num_actions() * (s.sublabels.len() - 1),
        RefinementSpec::Ca(_) => model.num_states(),
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NevrPoint {
    pub t: f64,
    pub evr: f64,
    pub cost: f64,
    pub nevr: f64,
}

pub fn nevr(
    model: &DecisionModel,
    procedure: &Procedure,
    t: f64,
    costs: &CostModel,
    opts: &EvrOptions,
) -> Result<NevrPoint, ControlError> {
    let spec = procedure.spec_at(model, t)?;
    let evr = evr::evr_with(model, &spec, opts)?.evr;
    let cost = costs.assessment_cost(t) + costs.compute_cost(added_cells(model, &spec));
    Ok(NevrPoint {
        t,
        evr,
        cost,
        nevr: evr - cost,
    })
}

/// Grid maximizer of NEVR; ties go to the smallest effort. `None` when the
/// procedure no longer applies.
pub fn best_effort(
    model: &DecisionModel,
    procedure: &Procedure,
    costs: &CostModel,
    opts: &EvrOptions,
) -> Result<Option<NevrPoint>, ControlError> {
    let mut best: Option<NevrPoint> = None;
    for &t in &procedure.effort_grid {
        let point = match nevr(model, procedure, t, costs, opts) {
            Ok(p) => p,
            Err(ControlError::Exhausted(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| point.nevr > b.nevr) {
            best = Some(point);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub procedure: String,
    #[serde(flatten)]
    pub best: Option<NevrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Decision {
    Apply { procedure: String, t: f64, lookahead: bool },
    Halt { reason: HaltReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltReason {
    NoPositiveNevr,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSummary {
    pub theta: Theta,
    pub best_action: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub step: usize,
    pub table: Vec<TableEntry>,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSummary>,
    pub model_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionLog {
    pub steps: Vec<Step>,
    pub final_action: String,
    pub final_value: f64,
    pub final_model: DecisionModel,
}

impl SessionLog {
    pub fn refinements(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.decision, Decision::Apply { .. })).count()
    }
}

/// Supplies the outcome of an applied refinement.
pub trait OutcomeSource {
    fn outcome(
        &mut self,
        step: usize,
        procedure: &Procedure,
        model: &DecisionModel,
        spec: &RefinementSpec,
    ) -> Result<Theta, ControlError>;
}

/// Simulation mode: outcomes drawn by the oracle from a per-step seed.
pub struct Simulated {
    pub seed: u64,
}

impl OutcomeSource for Simulated {
    fn outcome(
        &mut self,
        step: usize,
        _: &Procedure,
        _: &DecisionModel,
        spec: &RefinementSpec,
    ) -> Result<Theta, ControlError> {
        Ok(oracle::sample_outcome(spec, step_seed(self.seed, step as u64))?)
    }
}

/// Consultation mode: the caller's closure supplies assessed values.
pub struct Consulted<F>(pub F);

impl<F> OutcomeSource for Consulted<F>
where
    F: FnMut(usize, &Procedure, &DecisionModel, &RefinementSpec) -> Result<Theta, ControlError>,
{
    fn outcome(
        &mut self,
        step: usize,
        procedure: &Procedure,
        model: &DecisionModel,
        spec: &RefinementSpec,
    ) -> Result<Theta, ControlError> {
        (self.0)(step, procedure, model, spec)
    }
}

fn step_seed(seed: u64, k: u64) -> u64 {
    seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOptions {
    pub max_steps: usize,
    pub seed: u64,
    /// Consult two-step lookahead when no single step has positive NEVR.
    pub lookahead: bool,
    pub lookahead_samples: usize,
    pub evr: EvrOptions,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            max_steps: 10,
            seed: 0,
            lookahead: false,
            lookahead_samples: 64,
            evr: EvrOptions {
                mc_samples: 200_000,
                ..EvrOptions::default()
            },
        }
    }
}

/// Explicit procedures describe one particular assessment; once performed
/// they are spent. Built-in families re-centre on the refined model.
fn one_shot(p: &Procedure) -> bool {
    matches!(p.family, SpecFamily::Explicit(_))
}

fn nevr_table(
    model: &DecisionModel,
    procedures: &[Procedure],
    spent: &[bool],
    costs: &CostModel,
    opts: &EvrOptions,
) -> Result<Vec<TableEntry>, ControlError> {
    procedures
        .iter()
        .zip(spent)
        .map(|(p, &done)| {
            let best = if done {
                None
            } else {
                best_effort(model, p, costs, opts)?
            };
            Ok(TableEntry {
                procedure: p.id.clone(),
                best,
            })
        })
        .collect()
}

/// First entry attaining the largest NEVR.
fn table_argmax(table: &[TableEntry]) -> Option<(usize, &NevrPoint)> {
    let mut best: Option<(usize, &NevrPoint)> = None;
    for (i, e) in table.iter().enumerate() {
        if let Some(p) = &e.best {
            if best.is_none_or(|(_, b)| p.nevr > b.nevr) {
                best = Some((i, p));
            }
        }
    }
    best
}

/// Greedy control in simulation mode.
pub fn greedy_controller(
    model: &DecisionModel,
    procedures: &[Procedure],
    costs: &CostModel,
    opts: &ControlOptions,
) -> Result<SessionLog, ControlError> {
    run_controller(model, procedures, costs, opts, &mut Simulated { seed: opts.seed })
}

/// Greedy control with outcomes from `source`.
pub fn run_controller(
    model: &DecisionModel,
    procedures: &[Procedure],
    costs: &CostModel,
    opts: &ControlOptions,
    source: &mut dyn OutcomeSource,
) -> Result<SessionLog, ControlError> {
    for p in procedures {
        p.validate()?;
    }
    costs.validate().map_err(|msg| ControlError::Procedure { id: "costs".into(), msg })?;
    let mut current = model.clone();
    let mut spent = vec![false; procedures.len()];
    let mut steps = Vec::new();
    for step in 0.. {
        let model_value = current.evaluate().value;
        if step >= opts.max_steps {
            steps.push(Step {
                step,
                table: Vec::new(),
                decision: Decision::Halt {
                    reason: HaltReason::StepLimit,
                },
                outcome: None,
                model_value,
            });
            break;
        }
        let table = nevr_table(&current, procedures, &spent, costs, &opts.evr)?;
        let mut choice = table_argmax(&table)
            .filter(|(_, p)| p.nevr > 0.0)
            .map(|(i, p)| (i, p.t, false));
        if choice.is_none() && opts.lookahead {
            let la = lookahead_from(
                &current,
                procedures,
                &spent,
                costs,
                opts.lookahead_samples,
                step_seed(opts.seed, 1 << 32 | step as u64),
                &opts.evr,
            )?;
            choice = la
                .filter(|c| c.two_step_nevr > 0.0)
                .map(|c| (c.procedure_index, c.t, true));
        }
        let Some((i, t, lookahead)) = choice else {
            steps.push(Step {
                step,
                table,
                decision: Decision::Halt {
                    reason: HaltReason::NoPositiveNevr,
                },
                outcome: None,
                model_value,
            });
            break;
        };
        let procedure = &procedures[i];
        spent[i] = one_shot(procedure);
        let spec = procedure.spec_at(&current, t)?;
        let theta = source.outcome(step, procedure, &current, &spec)?;
        let realized = oracle::realize(&current, &spec, theta)?;
        current = realized.refined_model;
        let e = current.evaluate();
        steps.push(Step {
            step,
            table,
            decision: Decision::Apply {
                procedure: procedure.id.clone(),
                t,
                lookahead,
            },
            outcome: Some(OutcomeSummary {
                theta: realized.theta,
                best_action: current.actions()[e.best_action].clone(),
                value: e.value,
            }),
            model_value,
        });
    }
    let e = current.evaluate();
    Ok(SessionLog {
        steps,
        final_action: current.actions()[e.best_action].clone(),
        final_value: e.value,
        final_model: current,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LookaheadChoice {
    pub procedure_index: usize,
    pub procedure: String,
    pub t: f64,
    pub one_step_nevr: f64,
    pub two_step_nevr: f64,
}

/// Two-step lookahead: for each first move `(procedure, t)`, samples
/// outcomes, takes the best nonnegative single-step NEVR on each refined
/// model, and returns the first move with the largest estimated total.
/// `None` when no procedure applies.
pub fn lookahead2(
    model: &DecisionModel,
    procedures: &[Procedure],
    costs: &CostModel,
    samples: usize,
    seed: u64,
    opts: &EvrOptions,
) -> Result<Option<LookaheadChoice>, ControlError> {
    let spent = vec![false; procedures.len()];
    lookahead_from(model, procedures, &spent, costs, samples, seed, opts)
}

fn lookahead_from(
    model: &DecisionModel,
    procedures: &[Procedure],
    spent: &[bool],
    costs: &CostModel,
    samples: usize,
    seed: u64,
    opts: &EvrOptions,
) -> Result<Option<LookaheadChoice>, ControlError> {
    let samples = samples.max(1);
    let mut best: Option<LookaheadChoice> = None;
    for (i, p) in procedures.iter().enumerate() {
        if spent[i] {
            continue;
        }
        let mut after = spent.to_vec();
        after[i] = one_shot(p);
        for &t in &p.effort_grid {
            let first = match nevr(model, p, t, costs, opts) {
                Ok(x) => x,
                Err(ControlError::Exhausted(_)) => break,
                Err(e) => return Err(e),
            };
            let spec = p.spec_at(model, t)?;
            let mut follow = 0.0;
            for s in 0..samples {
                let theta = oracle::sample_outcome(&spec, step_seed(seed, s as u64))?;
                let refined = oracle::realize_model(model, &spec, &theta)?;
                let table = nevr_table(&refined, procedures, &after, costs, opts)?;
                let second = table_argmax(&table).map_or(0.0, |(_, q)| q.nevr.max(0.0));
                follow += second;
            }
            let two = first.nevr + follow / samples as f64;
            if best.as_ref().is_none_or(|b| two > b.two_step_nevr) {
                best = Some(LookaheadChoice {
                    procedure_index: i,
                    procedure: p.id.clone(),
                    t,
                    one_step_nevr: first.nevr,
                    two_step_nevr: two,
                });
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
pub(crate) mod sample_procedures {
    use super::*;

    pub fn schedule() -> WidthSchedule {
        WidthSchedule {
            max_width: 0.2,
            half_life: 10.0,
        }
    }

    pub fn qu_rain() -> Procedure {
        let family = SpecFamily::Qu {
            state: "Rain".into(),
            schedule: schedule(),
        };
        Procedure::new("qu-rain", family, vec![5.0, 10.0, 20.0, 40.0]).unwrap()
    }

    pub fn ca_porch() -> Procedure {
        let family = SpecFamily::Ca {
            label: "Porch".into(),
            centers: vec![0.3, 0.8],
            schedule: WidthSchedule {
                max_width: 0.4,
                half_life: 10.0,
            },
        };
        Procedure::new("ca-porch", family, vec![10.0, 30.0]).unwrap()
    }

    /// One action, so probability refinement alone is worthless, but once
    /// rain turns out likely a new action becomes promising. The action
    /// assessment takes longer, so it only pays in that branch.
    pub fn contingent() -> (DecisionModel, Vec<Procedure>) {
        let model =
            DecisionModel::from_parts(&["Safe"], &["Rain", "Dry"], &[0.5, 0.5], &[&[0.6, 0.6]]).unwrap();
        let atoms = Density1D::mixture(&[
            (0.5, Density1D::point(0.4).unwrap()),
            (0.5, Density1D::point(0.6).unwrap()),
        ])
        .unwrap();
        let qu = RefinementSpec::Qu(QuSpec::two_state(0, atoms));
        let ca = RefinementSpec::Ca(CaSpec {
            label: "Tent".into(),
            phi: vec![
                Density1D::uniform(0.95, 1.05).unwrap(),
                Density1D::uniform(-0.05, 0.05).unwrap(),
            ],
        });
        let procs = vec![
            Procedure::new("qu", SpecFamily::Explicit(vec![qu]), vec![1.0]).unwrap(),
            Procedure::new("ca", SpecFamily::Explicit(vec![ca]), vec![5.0]).unwrap(),
        ];
        (model, procs)
    }
}
