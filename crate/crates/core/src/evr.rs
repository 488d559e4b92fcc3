//! Expected value of refinement for the five refinement classes.
//!
//! Every class except structural refinement is compiled to a [`MuProfile`]:
//! per-action expected utilities that are affine in a vector of uncertain
//! parameters. Two dependence structures have exact engines:
//!
//! * shared scalar: all actions depend on one parameter (probability
//!   refinement on a two-state model). The upper envelope of the lines is
//!   integrated against the parameter density between crossing points.
//! * independent blocks: each action depends on its own parameters. Each
//!   action's distribution is built by scaling and convolving, and
//!   `E[max]` comes from [`dists::e_max_indep`].
//!
//! Structural refinement with a finite hypothesis mixture reduces to a
//! weighted sum. Everything else goes to the Monte Carlo oracle.

use serde::Serialize;
use thiserror::Error;

use crate::dists::{self, DistError, Density1D, MuItem};
use crate::model::{self, argmax, DecisionModel, ModelError, PROB_TOL};
use crate::oracle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvrError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid refinement spec: {0}")]
    Spec(String),
    #[error("exact engine unavailable: {0}")]
    ExactUnavailable(String),
}

fn spec_err<T>(msg: impl Into<String>) -> Result<T, EvrError> {
    Err(EvrError::Spec(msg.into()))
}

/// Second-order distribution over the probability of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbParam {
    pub state: usize,
    pub dist: Density1D,
}

/// Uncertainty refinement. A two-state model takes one parameter (the swept
/// state's probability, the other state gets the complement). An `n`-state
/// model takes `n − 1` independent parameters and the omitted state receives
/// the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct QuSpec {
    pub params: Vec<ProbParam>,
}

impl QuSpec {
    pub fn two_state(swept_state: usize, pi_dist: Density1D) -> Self {
        Self {
            params: vec![ProbParam {
                state: swept_state,
                dist: pi_dist,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDist {
    pub action: usize,
    pub state: usize,
    pub dist: Density1D,
}

/// Preference refinement; cells not listed keep their current utility.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub cells: Vec<CellDist>,
}

/// State-variable refinement. `cells` index sub-states (`state` field is the
/// sub-state position); unlisted sub-cells keep the parent state's utility.
#[derive(Debug, Clone, PartialEq)]
pub struct CsSpec {
    pub state: usize,
    pub sublabels: Vec<String>,
    pub conditional_probs: Vec<f64>,
    pub cells: Vec<CellDist>,
}

/// Action refinement: a new action whose utility in each state is uncertain.
#[derive(Debug, Clone, PartialEq)]
pub struct CaSpec {
    pub label: String,
    pub phi: Vec<Density1D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub weight: f64,
    pub p_y: Vec<f64>,
    pub cpt: Vec<Vec<f64>>,
}

/// Structural refinement: a new parent `Y` of the state variable whose
/// distribution and conditional table are uncertain, as a finite mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralSpec {
    pub y_labels: Vec<String>,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefinementSpec {
    Qu(QuSpec),
    Qp(QpSpec),
    Cs(CsSpec),
    Ca(CaSpec),
    S(StructuralSpec),
}

impl RefinementSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            RefinementSpec::Qu(_) => "qu",
            RefinementSpec::Qp(_) => "qp",
            RefinementSpec::Cs(_) => "cs",
            RefinementSpec::Ca(_) => "ca",
            RefinementSpec::S(_) => "s",
        }
    }

    /// Parameter distributions in draw order.
    pub fn param_dists(&self) -> Vec<&Density1D> {
        match self {
            RefinementSpec::Qu(s) => s.params.iter().map(|p| &p.dist).collect(),
            RefinementSpec::Qp(s) => s.cells.iter().map(|c| &c.dist).collect(),
            RefinementSpec::Cs(s) => s.cells.iter().map(|c| &c.dist).collect(),
            RefinementSpec::Ca(s) => s.phi.iter().collect(),
            RefinementSpec::S(_) => Vec::new(),
        }
    }

    /// True when every second-order distribution is a point mass.
    pub fn is_degenerate(&self) -> bool {
        match self {
            RefinementSpec::S(s) => s.hypotheses.len() == 1,
            _ => self.param_dists().iter().all(|d| d.as_point().is_some()),
        }
    }

    /// Checks every index, dimension and probability vector against `model`.
    pub fn validate(&self, model: &DecisionModel) -> Result<(), EvrError> {
        let (m, n) = (model.num_actions(), model.num_states());
        match self {
            RefinementSpec::Qu(s) => {
                if s.params.len() + 1 != n {
                    return spec_err(format!(
                        "qu needs {} probability parameters for {n} states, got {}",
                        n - 1,
                        s.params.len()
                    ));
                }
                let mut seen = vec![false; n];
                let mut lo_sum = 0.0;
                for p in &s.params {
                    if p.state >= n || seen[p.state] {
                        return spec_err(format!("qu state {} invalid or repeated", p.state));
                    }
                    seen[p.state] = true;
                    let (lo, hi) = p.dist.support();
                    if lo < 0.0 || hi > 1.0 {
                        return spec_err(format!(
                            "qu distribution for state {} leaves [0, 1]",
                            p.state
                        ));
                    }
                    lo_sum += lo;
                }
                let degenerate = s.params.iter().all(|p| p.dist.as_point().is_some());
                if lo_sum > 1.0 + PROB_TOL || (!degenerate && lo_sum >= 1.0) {
                    return spec_err("qu parameters cannot sum to at most 1");
                }
            }
            RefinementSpec::Qp(s) => {
                for (i, c) in s.cells.iter().enumerate() {
                    if c.action >= m || c.state >= n {
                        return spec_err(format!("qp cell ({}, {}) out of range", c.action, c.state));
                    }
                    if s.cells[..i]
                        .iter()
                        .any(|o| o.action == c.action && o.state == c.state)
                    {
                        return spec_err(format!("qp cell ({}, {}) repeated", c.action, c.state));
                    }
                }
            }
            RefinementSpec::Cs(s) => {
                if s.state >= n {
                    return spec_err(format!("cs state {} out of range", s.state));
                }
                if s.sublabels.len() < 2 || s.sublabels.len() != s.conditional_probs.len() {
                    return spec_err("cs needs ≥ 2 sub-states with one conditional probability each");
                }
                model::normalize_probabilities("conditional_probs", &s.conditional_probs)?;
                for (i, c) in s.cells.iter().enumerate() {
                    if c.action >= m || c.state >= s.sublabels.len() {
                        return spec_err(format!("cs cell ({}, {}) out of range", c.action, c.state));
                    }
                    if s.cells[..i]
                        .iter()
                        .any(|o| o.action == c.action && o.state == c.state)
                    {
                        return spec_err(format!("cs cell ({}, {}) repeated", c.action, c.state));
                    }
                }
                for l in &s.sublabels {
                    if model.states().iter().enumerate().any(|(i, x)| x == l && i != s.state) {
                        return spec_err(format!("cs sub-state `{l}` clashes with an existing state"));
                    }
                }
            }
            RefinementSpec::Ca(s) => {
                if s.phi.len() != n {
                    return spec_err(format!("ca needs {n} utility distributions, got {}", s.phi.len()));
                }
                if model.action_index(&s.label).is_some() {
                    return spec_err(format!("action `{}` already exists", s.label));
                }
            }
            RefinementSpec::S(s) => {
                if s.hypotheses.is_empty() {
                    return spec_err("structural spec needs at least one hypothesis");
                }
                let weights: Vec<f64> = s.hypotheses.iter().map(|h| h.weight).collect();
                model::normalize_probabilities("hypothesis weights", &weights)?;
                for h in &s.hypotheses {
                    model::marginalize(n, s.y_labels.len(), &h.p_y, &h.cpt)?;
                }
            }
        }
        Ok(())
    }
}

/// Per-action affine form `constant + Σ weight·θ[param]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineForm {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineForm {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, w)| w * theta[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dependence {
    SharedScalar,
    IndependentBlocks,
}

/// Expected utilities of all actions as affine functions of the uncertain
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MuProfile {
    pub params: Vec<Density1D>,
    pub forms: Vec<AffineForm>,
    pub dependence: Dependence,
}

impl MuProfile {
    pub fn means(&self) -> Vec<f64> {
        self.params.iter().map(Density1D::mean).collect()
    }

    pub fn has_uncertainty(&self) -> bool {
        self.params.iter().any(|d| d.as_point().is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    ExactBreakpoint,
    ExactIndependent,
    ExactMixture,
    MonteCarlo,
}

impl Engine {
    pub fn is_exact(self) -> bool {
        self != Engine::MonteCarlo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvrReport {
    pub value_with: f64,
    pub value_without: f64,
    pub evr: f64,
    pub default_action: usize,
    pub engine: Engine,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnginePreference {
    /// Exact when available, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvrOptions {
    pub engine: EnginePreference,
    pub mc_samples: u64,
    pub seed: u64,
}

impl Default for EvrOptions {
    fn default() -> Self {
        Self {
            engine: EnginePreference::Auto,
            mc_samples: 1_000_000,
            seed: 0,
        }
    }
}

/// Compiles a refinement into its μ-domain profile. Structural specs and
/// probability refinements of models with more than two states have no
/// profile and are rejected.
pub fn compile_mu(model: &DecisionModel, spec: &RefinementSpec) -> Result<MuProfile, EvrError> {
    spec.validate(model)?;
    let probs = model.probabilities();
    let n = model.num_states();
    let mut params: Vec<Density1D> = Vec::new();
    // Folds point masses and zero weights into the constant.
    let mut add_term = |form: &mut AffineForm, weight: f64, dist: &Density1D| {
        match dist.as_point() {
            Some(x) => form.constant += weight * x,
            None if weight == 0.0 => {}
            None => {
                params.push(dist.clone());
                form.terms.push((params.len() - 1, weight));
            }
        }
    };
    let constant = |c| AffineForm {
        constant: c,
        terms: Vec::new(),
    };

    let (forms, dependence) = match spec {
        RefinementSpec::Qu(s) => {
            if n != 2 {
                return Err(EvrError::ExactUnavailable(format!(
                    "probability refinement on {n} states has no shared-scalar profile"
                )));
            }
            let swept = s.params[0].state;
            let other = 1 - swept;
            params.push(s.params[0].dist.clone());
            let forms = model
                .utilities()
                .iter()
                .map(|row| AffineForm {
                    constant: row[other],
                    terms: vec![(0, row[swept] - row[other])],
                })
                .collect();
            (forms, Dependence::SharedScalar)
        }
        RefinementSpec::Qp(s) => {
            let mut forms = Vec::new();
            for (k, row) in model.utilities().iter().enumerate() {
                let mut form = constant(0.0);
                for (i, (&p, &u)) in probs.iter().zip(row).enumerate() {
                    match s.cells.iter().find(|c| c.action == k && c.state == i) {
                        Some(c) => add_term(&mut form, p, &c.dist),
                        None => form.constant += p * u,
                    }
                }
                forms.push(form);
            }
            (forms, Dependence::IndependentBlocks)
        }
        RefinementSpec::Cs(s) => {
            let cond = model::normalize_probabilities("conditional_probs", &s.conditional_probs)?;
            let parent = probs[s.state];
            let mut forms = Vec::new();
            for (k, row) in model.utilities().iter().enumerate() {
                let mut form = constant(0.0);
                for (i, (&p, &u)) in probs.iter().zip(row).enumerate() {
                    if i != s.state {
                        form.constant += p * u;
                        continue;
                    }
                    for (j, q) in cond.iter().enumerate() {
                        let weight = parent * q;
                        match s.cells.iter().find(|c| c.action == k && c.state == j) {
                            Some(c) => add_term(&mut form, weight, &c.dist),
                            None => form.constant += weight * u,
                        }
                    }
                }
                forms.push(form);
            }
            (forms, Dependence::IndependentBlocks)
        }
        RefinementSpec::Ca(s) => {
            let mut forms: Vec<AffineForm> = (0..model.num_actions())
                .map(|k| constant(model.expected_utility(k).expect("valid action")))
                .collect();
            let mut form = constant(0.0);
            for (p, d) in probs.iter().zip(&s.phi) {
                add_term(&mut form, *p, d);
            }
            forms.push(form);
            (forms, Dependence::IndependentBlocks)
        }
        RefinementSpec::S(_) => {
            return Err(EvrError::Spec(
                "structural refinements are evaluated as hypothesis mixtures, not μ-profiles"
                    .into(),
            ))
        }
    };
    Ok(MuProfile {
        params,
        forms,
        dependence,
    })
}

/// Operative (no further refinement) model: every uncertain parameter at
/// its mean, and for structural specs the mixture-averaged state marginal.
pub fn operative_model(
    model: &DecisionModel,
    spec: &RefinementSpec,
) -> Result<DecisionModel, EvrError> {
    spec.validate(model)?;
    if let RefinementSpec::S(s) = spec {
        return Ok(model.with_probabilities(operative_marginal(model.num_states(), s)?)?);
    }
    let theta = oracle::Theta {
        values: spec.param_dists().iter().map(|d| d.mean()).collect(),
        hypothesis: None,
    };
    oracle::realize_model(model, spec, &theta)
}

/// Σ_j w_j Σ_y p_j(y) p_j(x | y). Equals Σ_y p̄(y) p̂(x | y) with p̄ the
/// averaged parent distribution and p̂ the parent-weighted averaged table.
fn operative_marginal(n: usize, s: &StructuralSpec) -> Result<Vec<f64>, EvrError> {
    if let [only] = s.hypotheses.as_slice() {
        return Ok(model::marginalize(n, s.y_labels.len(), &only.p_y, &only.cpt)?);
    }
    let mut out = vec![0.0; n];
    for h in &s.hypotheses {
        let m = model::marginalize(n, s.y_labels.len(), &h.p_y, &h.cpt)?;
        for (o, x) in out.iter_mut().zip(m) {
            *o += h.weight * x;
        }
    }
    Ok(out)
}

/// E[v | R, ξ]: best expected utility when acting on operative values.
/// Returns the value and the default action.
pub fn value_without(
    model: &DecisionModel,
    spec: &RefinementSpec,
) -> Result<(f64, usize), EvrError> {
    let e = operative_model(model, spec)?.evaluate();
    Ok((e.value, e.best_action))
}

/// E[v | R(ξ)] through an exact engine.
pub fn value_with(model: &DecisionModel, spec: &RefinementSpec) -> Result<(f64, Engine), EvrError> {
    if let RefinementSpec::S(s) = spec {
        spec.validate(model)?;
        return Ok((structural_value_with(model, s)?, Engine::ExactMixture));
    }
    let profile = compile_mu(model, spec)?;
    profile_value_with(&profile)
}

fn structural_value_with(model: &DecisionModel, s: &StructuralSpec) -> Result<f64, EvrError> {
    let mut total = 0.0;
    for h in &s.hypotheses {
        let refined = model.condition_on(&s.y_labels, &h.p_y, &h.cpt)?;
        total += h.weight * refined.evaluate().value;
    }
    Ok(total)
}

/// E[max_k μ_k] for a compiled profile.
pub fn profile_value_with(profile: &MuProfile) -> Result<(f64, Engine), EvrError> {
    match profile.dependence {
        Dependence::SharedScalar => Ok((shared_scalar_emax(profile), Engine::ExactBreakpoint)),
        Dependence::IndependentBlocks => {
            let items = profile_items(profile)?;
            Ok((dists::e_max_indep(&items), Engine::ExactIndependent))
        }
    }
}

/// Per-action μ distributions for an independent-blocks profile.
pub fn profile_items(profile: &MuProfile) -> Result<Vec<MuItem>, EvrError> {
    profile
        .forms
        .iter()
        .map(|form| {
            let mut acc: Option<Density1D> = None;
            for &(j, w) in &form.terms {
                let scaled = profile.params[j].affine(w, 0.0)?;
                acc = Some(match acc {
                    None => scaled,
                    Some(d) => d.convolve(&scaled)?,
                });
            }
            Ok(match acc {
                None => MuItem::Constant(form.constant),
                Some(d) => MuItem::Dist(d.affine(1.0, form.constant)?),
            })
        })
        .collect()
}

/// Integrates the upper envelope of lines `c_k + w_k θ` against the density
/// of θ, splitting each segment at the crossing points.
fn shared_scalar_emax(profile: &MuProfile) -> f64 {
    let theta = &profile.params[0];
    let lines: Vec<(f64, f64)> = profile
        .forms
        .iter()
        .map(|f| (f.constant, f.terms.first().map_or(0.0, |t| t.1)))
        .collect();
    let envelope = |t: f64| -> (usize, f64) {
        let values: Vec<f64> = lines.iter().map(|&(c, w)| c + w * t).collect();
        let k = argmax(&values);
        (k, values[k])
    };
    let mut crossings = Vec::new();
    for (j, &(cj, wj)) in lines.iter().enumerate() {
        for &(ck, wk) in &lines[j + 1..] {
            if wj != wk {
                crossings.push((ck - cj) / (wj - wk));
            }
        }
    }
    let mut total = 0.0;
    for seg in theta.segments() {
        let mut cuts: Vec<f64> = crossings
            .iter()
            .copied()
            .filter(|&x| x > seg.lo && x < seg.hi)
            .chain([seg.lo, seg.hi])
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for win in cuts.windows(2) {
            let (k, _) = envelope(0.5 * (win[0] + win[1]));
            let (c, w) = lines[k];
            // ∫ (c + w (lo + s)) p(s) ds over the sub-interval
            let integrand = seg.coeffs.mul(&dists::Poly::linear(c + w * seg.lo, w));
            total += integrand.integral(win[0] - seg.lo, win[1] - seg.lo);
        }
    }
    for atom in theta.atoms() {
        total += atom.mass * envelope(atom.at).1;
    }
    total
}

/// Full EVR report with default options.
pub fn evr(model: &DecisionModel, spec: &RefinementSpec) -> Result<EvrReport, EvrError> {
    evr_with(model, spec, &EvrOptions::default())
}

pub fn evr_with(
    model: &DecisionModel,
    spec: &RefinementSpec,
    opts: &EvrOptions,
) -> Result<EvrReport, EvrError> {
    spec.validate(model)?;
    let exact = if opts.engine == EnginePreference::MonteCarlo {
        None
    } else {
        match exact_report(model, spec) {
            Ok(r) => Some(r),
            Err(EvrError::ExactUnavailable(_)) | Err(EvrError::Dist(DistError::DegreeCap { .. }))
                if opts.engine == EnginePreference::Auto =>
            {
                None
            }
            Err(EvrError::Dist(e @ DistError::DegreeCap { .. })) => {
                return Err(EvrError::ExactUnavailable(e.to_string()))
            }
            Err(e) => return Err(e),
        }
    };
    if let Some(r) = exact {
        return Ok(r);
    }
    let est = oracle::mc_value_with(model, spec, opts.mc_samples, opts.seed)?;
    let (value_without, default_action) = match est.operative_probabilities {
        Some(ref probs) => {
            let e = model.with_probabilities(probs.clone())?.evaluate();
            (e.value, e.best_action)
        }
        None => value_without(model, spec)?,
    };
    Ok(EvrReport {
        value_with: est.estimate,
        value_without,
        evr: est.estimate - value_without,
        default_action,
        engine: Engine::MonteCarlo,
        mc_stderr: Some(est.stderr),
    })
}

fn exact_report(model: &DecisionModel, spec: &RefinementSpec) -> Result<EvrReport, EvrError> {
    let (value_without, default_action) = value_without(model, spec)?;
    let (value_with, engine) = if spec.is_degenerate() {
        let engine = match spec {
            RefinementSpec::S(_) => Engine::ExactMixture,
            RefinementSpec::Qu(_) if model.num_states() == 2 => Engine::ExactBreakpoint,
            _ => Engine::ExactIndependent,
        };
        (value_without, engine)
    } else {
        value_with(model, spec)?
    };
    Ok(EvrReport {
        value_with,
        value_without,
        evr: value_with - value_without,
        default_action,
        engine,
        mc_stderr: None,
    })
}

/// EVR computed directly from per-action μ distributions, bypassing any
/// model: `value_with = E[max_k μ_k]`, `value_without = default_value`.
pub fn evr_mu_direct(mu: &[MuItem], default_value: f64) -> EvrReport {
    let value_with = dists::e_max_indep(mu);
    let means: Vec<f64> = mu.iter().map(MuItem::mean).collect();
    EvrReport {
        value_with,
        value_without: default_value,
        evr: value_with - default_value,
        default_action: argmax(&means),
        engine: Engine::ExactIndependent,
        mc_stderr: None,
    }
}

/// Max of the item means, the usual `default_value` for [`evr_mu_direct`].
pub fn mu_default_value(mu: &[MuItem]) -> f64 {
    mu.iter().map(MuItem::mean).fold(f64::NEG_INFINITY, f64::max)
}
