//! JSON file formats for models, refinement specs and controller sessions.
//!
//! Every file carries `"version": 1`. Unknown keys are rejected and schema
//! errors name the offending key path. Specs and sessions refer to actions
//! and states by label; they are resolved against a model to get the
//! index-based library types.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::{
    AssessmentCost, CellRef, CostModel, Procedure, SpecFamily, SubCell, WidthSchedule,
};
use crate::dists::{DensitySpec, DistError, Density1D, MuItem};
use crate::evr::{
    CaSpec, CellDist, CsSpec, Hypothesis, ProbParam, QpSpec, QuSpec, RefinementSpec,
    StructuralSpec,
};
use crate::model::{DecisionModel, ModelError};

pub const VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("line {line}, column {column}: {msg}")]
    Syntax {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Dist { path: String, source: DistError },
    #[error("{0}")]
    Invalid(String),
}

fn schema(path: impl Into<String>, msg: impl Into<String>) -> FileError {
    FileError::Schema {
        path: path.into(),
        msg: msg.into(),
    }
}

/// Parses `text`, checks and strips `version`, then deserializes the rest
/// with key-path diagnostics.
fn parse_versioned<T: DeserializeOwned>(text: &str) -> Result<T, FileError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        FileError::Syntax {
            line: e.line(),
            column: e.column(),
            msg: full.strip_suffix(&suffix).unwrap_or(&full).to_string(),
        }
    })?;
    let Some(obj) = value.as_object_mut() else {
        return Err(schema(".", "expected a JSON object"));
    };
    match obj.remove("version") {
        None => return Err(schema("version", "missing required key")),
        Some(Value::Number(n)) if n.as_u64() == Some(VERSION) => {}
        Some(other) => {
            return Err(schema(
                "version",
                format!("unsupported version {other}, expected {VERSION}"),
            ))
        }
    }
    from_value(value)
}

fn from_value<T: DeserializeOwned>(value: Value) -> Result<T, FileError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })
}

fn density(path: &str, spec: &DensitySpec) -> Result<Density1D, FileError> {
    Density1D::make(spec).map_err(|source| FileError::Dist {
        path: path.to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub actions: Vec<String>,
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
    pub utilities: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<DecisionModel, FileError> {
        Ok(DecisionModel::new(
            self.actions,
            self.states,
            self.probabilities,
            self.utilities,
        )?)
    }
}

pub fn parse_model(text: &str) -> Result<DecisionModel, FileError> {
    parse_versioned::<ModelFile>(text)?.into_model()
}

/// Serializes a model in the model-file format.
pub fn model_to_json(model: &DecisionModel) -> String {
    let v = serde_json::json!({
        "version": VERSION,
        "actions": model.actions(),
        "states": model.states(),
        "probabilities": model.probabilities(),
        "utilities": model.utilities(),
    });
    serde_json::to_string_pretty(&v).expect("model serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDist {
    pub state: String,
    pub dist: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellFile {
    pub action: String,
    pub state: String,
    pub dist: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCellFile {
    pub action: String,
    pub substate: String,
    pub dist: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    pub weight: f64,
    pub p_y: Vec<f64>,
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuInput {
    Constant(f64),
    Dist(DensitySpec),
}

/// Spec file body, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpecBody {
    /// Either `swept_state` with `pi` (two states) or `params` for every
    /// state but one.
    Qu {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        swept_state: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi: Option<DensitySpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<Vec<StateDist>>,
    },
    Qp {
        cells: Vec<CellFile>,
    },
    Cs {
        state: String,
        sublabels: Vec<String>,
        conditional_probs: Vec<f64>,
        #[serde(default)]
        cells: Vec<SubCellFile>,
    },
    Ca {
        label: String,
        phi: BTreeMap<String, DensitySpec>,
    },
    S {
        y_labels: Vec<String>,
        hypotheses: Vec<HypothesisFile>,
    },
    MuDirect {
        mu: Vec<MuInput>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default_value: Option<f64>,
    },
}

/// A spec resolved against a model.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedSpec {
    Refinement(RefinementSpec),
    MuDirect {
        mu: Vec<MuItem>,
        default_value: Option<f64>,
    },
}

pub fn parse_spec(text: &str) -> Result<SpecBody, FileError> {
    parse_versioned(text)
}

fn state_idx(model: &DecisionModel, path: &str, label: &str) -> Result<usize, FileError> {
    model
        .state_index(label)
        .ok_or_else(|| schema(path, format!("unknown state `{label}`")))
}

fn action_idx(model: &DecisionModel, path: &str, label: &str) -> Result<usize, FileError> {
    model
        .action_index(label)
        .ok_or_else(|| schema(path, format!("unknown action `{label}`")))
}

impl SpecBody {
    pub fn kind(&self) -> &'static str {
        match self {
            SpecBody::Qu { .. } => "qu",
            SpecBody::Qp { .. } => "qp",
            SpecBody::Cs { .. } => "cs",
            SpecBody::Ca { .. } => "ca",
            SpecBody::S { .. } => "s",
            SpecBody::MuDirect { .. } => "mu-direct",
        }
    }

    /// Resolves labels and densities against `model`, then validates the
    /// refinement.
    pub fn resolve(&self, model: &DecisionModel) -> Result<ResolvedSpec, FileError> {
        let spec = match self {
            SpecBody::Qu {
                swept_state,
                pi,
                params,
            } => {
                let params = match (swept_state, pi, params) {
                    (Some(s), Some(pi), None) => vec![ProbParam {
                        state: state_idx(model, "swept_state", s)?,
                        dist: density("pi", pi)?,
                    }],
                    (None, None, Some(ps)) => ps
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            Ok(ProbParam {
                                state: state_idx(model, &format!("params[{i}].state"), &p.state)?,
                                dist: density(&format!("params[{i}].dist"), &p.dist)?,
                            })
                        })
                        .collect::<Result<_, FileError>>()?,
                    _ => {
                        return Err(schema(
                            "kind",
                            "qu needs either `swept_state` and `pi`, or `params`",
                        ))
                    }
                };
                RefinementSpec::Qu(QuSpec { params })
            }
            SpecBody::Qp { cells } => {
                let cells = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let at = format!("cells[{i}]");
                        Ok(CellDist {
                            action: action_idx(model, &format!("{at}.action"), &c.action)?,
                            state: state_idx(model, &format!("{at}.state"), &c.state)?,
                            dist: density(&format!("{at}.dist"), &c.dist)?,
                        })
                    })
                    .collect::<Result<_, FileError>>()?;
                RefinementSpec::Qp(QpSpec { cells })
            }
            SpecBody::Cs {
                state,
                sublabels,
                conditional_probs,
                cells,
            } => {
                let cells = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let at = format!("cells[{i}]");
                        let sub = sublabels.iter().position(|l| *l == c.substate).ok_or_else(|| {
                            schema(format!("{at}.substate"), format!("unknown sub-state `{}`", c.substate))
                        })?;
                        Ok(CellDist {
                            action: action_idx(model, &format!("{at}.action"), &c.action)?,
                            state: sub,
                            dist: density(&format!("{at}.dist"), &c.dist)?,
                        })
                    })
                    .collect::<Result<_, FileError>>()?;
                RefinementSpec::Cs(CsSpec {
                    state: state_idx(model, "state", state)?,
                    sublabels: sublabels.clone(),
                    conditional_probs: conditional_probs.clone(),
                    cells,
                })
            }
            SpecBody::Ca { label, phi } => {
                for key in phi.keys() {
                    state_idx(model, &format!("phi.{key}"), key)?;
                }
                let phi = model
                    .states()
                    .iter()
                    .map(|s| {
                        let d = phi
                            .get(s)
                            .ok_or_else(|| schema("phi", format!("missing state `{s}`")))?;
                        density(&format!("phi.{s}"), d)
                    })
                    .collect::<Result<_, FileError>>()?;
                RefinementSpec::Ca(CaSpec {
                    label: label.clone(),
                    phi,
                })
            }
            SpecBody::S {
                y_labels,
                hypotheses,
            } => RefinementSpec::S(StructuralSpec {
                y_labels: y_labels.clone(),
                hypotheses: hypotheses
                    .iter()
                    .map(|h| Hypothesis {
                        weight: h.weight,
                        p_y: h.p_y.clone(),
                        cpt: h.cpt.clone(),
                    })
                    .collect(),
            }),
            SpecBody::MuDirect { mu, default_value } => {
                if mu.is_empty() {
                    return Err(schema("mu", "needs at least one item"));
                }
                let mu = mu
                    .iter()
                    .enumerate()
                    .map(|(i, m)| match m {
                        MuInput::Constant(c) => Ok(MuItem::Constant(*c)),
                        MuInput::Dist(d) => Ok(MuItem::Dist(density(&format!("mu[{i}]"), d)?)),
                    })
                    .collect::<Result<_, FileError>>()?;
                return Ok(ResolvedSpec::MuDirect {
                    mu,
                    default_value: *default_value,
                });
            }
        };
        spec.validate(model)
            .map_err(|e| FileError::Invalid(e.to_string()))?;
        Ok(ResolvedSpec::Refinement(spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(String),
    Inline(Box<InlineModel>),
}

/// Inline model inside a session; same keys as a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    #[serde(default = "default_version")]
    pub version: u64,
    pub actions: Vec<String>,
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
    pub utilities: Vec<Vec<f64>>,
}

fn default_version() -> u64 {
    VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcedureFile {
    Qu {
        id: String,
        effort_grid: Vec<f64>,
        state: String,
        width: WidthSchedule,
    },
    Qp {
        id: String,
        effort_grid: Vec<f64>,
        cells: Vec<CellRef>,
        width: WidthSchedule,
    },
    Cs {
        id: String,
        effort_grid: Vec<f64>,
        state: String,
        sublabels: Vec<String>,
        conditional_probs: Vec<f64>,
        cells: Vec<SubCell>,
        width: WidthSchedule,
    },
    Ca {
        id: String,
        effort_grid: Vec<f64>,
        label: String,
        centers: Vec<f64>,
        width: WidthSchedule,
    },
    /// One spec body per grid point, resolved against the session's model.
    Explicit {
        id: String,
        effort_grid: Vec<f64>,
        specs: Vec<Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsFile {
    #[serde(default)]
    pub assessment: AssessmentCost,
    #[serde(default)]
    pub compute_per_cell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub model: ModelRef,
    pub procedures: Vec<ProcedureFile>,
    #[serde(default = "zero_costs")]
    pub costs: CostsFile,
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn zero_costs() -> CostsFile {
    CostsFile {
        assessment: AssessmentCost::Zero,
        compute_per_cell: 0.0,
    }
}

pub fn parse_session(text: &str) -> Result<SessionFile, FileError> {
    parse_versioned(text)
}

impl SessionFile {
    /// Inline model, if the session embeds one.
    pub fn inline_model(&self) -> Result<Option<DecisionModel>, FileError> {
        match &self.model {
            ModelRef::Path(_) => Ok(None),
            ModelRef::Inline(m) => {
                if m.version != VERSION {
                    return Err(schema("model.version", format!("unsupported version {}", m.version)));
                }
                let m = *m.clone();
                Ok(Some(DecisionModel::new(m.actions, m.states, m.probabilities, m.utilities)?))
            }
        }
    }

    pub fn costs(&self) -> Result<CostModel, FileError> {
        let c = CostModel {
            assessment: self.costs.assessment,
            compute_per_cell: self.costs.compute_per_cell,
        };
        c.validate().map_err(|m| schema("costs", m))?;
        Ok(c)
    }

    pub fn procedures(&self, model: &DecisionModel) -> Result<Vec<Procedure>, FileError> {
        let mut ids: Vec<&str> = Vec::new();
        self.procedures
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (id, grid, family) = match p {
                    ProcedureFile::Qu { id, effort_grid, state, width } => (
                        id,
                        effort_grid,
                        SpecFamily::Qu { state: state.clone(), schedule: *width },
                    ),
                    ProcedureFile::Qp { id, effort_grid, cells, width } => (
                        id,
                        effort_grid,
                        SpecFamily::Qp { cells: cells.clone(), schedule: *width },
                    ),
                    ProcedureFile::Cs {
                        id,
                        effort_grid,
                        state,
                        sublabels,
                        conditional_probs,
                        cells,
                        width,
                    } => (
                        id,
                        effort_grid,
                        SpecFamily::Cs {
                            state: state.clone(),
                            sublabels: sublabels.clone(),
                            conditional_probs: conditional_probs.clone(),
                            cells: cells.clone(),
                            schedule: *width,
                        },
                    ),
                    ProcedureFile::Ca { id, effort_grid, label, centers, width } => (
                        id,
                        effort_grid,
                        SpecFamily::Ca {
                            label: label.clone(),
                            centers: centers.clone(),
                            schedule: *width,
                        },
                    ),
                    ProcedureFile::Explicit { id, effort_grid, specs } => {
                        let resolved = specs
                            .iter()
                            .enumerate()
                            .map(|(j, v)| {
                                let body: SpecBody = from_value(v.clone()).map_err(|e| match e {
                                    FileError::Schema { path, msg } => schema(
                                        format!("procedures[{i}].specs[{j}].{path}"),
                                        msg,
                                    ),
                                    other => other,
                                })?;
                                match body.resolve(model)? {
                                    ResolvedSpec::Refinement(r) => Ok(r),
                                    ResolvedSpec::MuDirect { .. } => Err(schema(
                                        format!("procedures[{i}].specs[{j}].kind"),
                                        "mu-direct specs cannot drive a procedure",
                                    )),
                                }
                            })
                            .collect::<Result<_, FileError>>()?;
                        (id, effort_grid, SpecFamily::Explicit(resolved))
                    }
                };
                if ids.contains(&id.as_str()) {
                    return Err(schema(format!("procedures[{i}].id"), format!("duplicate id `{id}`")));
                }
                ids.push(id);
                Procedure::new(id.clone(), family, grid.clone())
                    .map_err(|e| schema(format!("procedures[{i}]"), e.to_string()))
            })
            .collect()
    }
}
