//! Model variants and the training loop.
//!
//! * `pinn`: data misfit plus PDE residual.
//! * `pinn-sc`: adds `λ/T · Σ_t Σ_q (c_q(t) − ĉ_q(t))²` over grid times.
//! * `pinn-proj`: every prediction used in the loss goes through the
//!   conservation projection of its time slice.

mod lbfgs;
mod loss;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use lbfgs::{minimize, LbfgsConfig, LbfgsResult, StopReason};
pub use loss::{LossParts, PinnObjective};

use crate::mlp::{MlpParams, Network};
use crate::pde::{Grid, PdeSpec};
use crate::projection::{ConservedSet, ProjectionKind};
use crate::sampling::TrainingSet;
use crate::Error;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error("loss became non-finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("invalid variant: {0}")]
    InvalidVariant(String),
    #[error("inconsistent problem: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantTag {
    Pinn,
    PinnSc,
    PinnProj,
}

impl VariantTag {
    pub fn name(self) -> &'static str {
        match self {
            VariantTag::Pinn => "pinn",
            VariantTag::PinnSc => "pinn-sc",
            VariantTag::PinnProj => "pinn-proj",
        }
    }
}

impl std::fmt::Display for VariantTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VariantTag {
    type Err = TrainingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pinn" => Ok(VariantTag::Pinn),
            "pinn-sc" | "sc" => Ok(VariantTag::PinnSc),
            "pinn-proj" | "proj" => Ok(VariantTag::PinnProj),
            _ => Err(TrainingError::InvalidVariant(s.to_string())),
        }
    }
}

/// A model variant together with its conserved quantities and penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub tag: VariantTag,
    /// Conserved quantities penalised or projected; `None` for plain PINNs.
    pub kind: ProjectionKind,
    /// Penalty weight, used by `pinn-sc` only.
    pub lambda: f64,
}

impl ModelVariant {
    pub fn pinn() -> Self {
        ModelVariant {
            tag: VariantTag::Pinn,
            kind: ProjectionKind::None,
            lambda: 0.0,
        }
    }

    pub fn soft(kind: ProjectionKind, lambda: f64) -> Self {
        ModelVariant {
            tag: VariantTag::PinnSc,
            kind,
            lambda,
        }
    }

    pub fn projected(kind: ProjectionKind) -> Self {
        ModelVariant {
            tag: VariantTag::PinnProj,
            kind,
            lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidVariant(format!("{}: {m}", self.tag)));
        match self.tag {
            VariantTag::Pinn if self.kind != ProjectionKind::None => bad("takes no conserved quantities"),
            VariantTag::PinnSc | VariantTag::PinnProj if self.kind == ProjectionKind::None => {
                bad("needs at least one conserved quantity")
            }
            VariantTag::PinnSc if !(self.lambda.is_finite() && self.lambda >= 0.0) => {
                bad("lambda must be finite and non-negative")
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `pinn-proj-both`.
    pub fn label(&self) -> String {
        let q = match self.kind {
            ProjectionKind::None => return self.tag.name().to_string(),
            ProjectionKind::Linear => "linear",
            ProjectionKind::Quadratic => "quadratic",
            ProjectionKind::Both => "both",
        };
        format!("{}-{q}", self.tag)
    }
}

/// How the residual of a projected model treats the slice statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// Residual of the projected prediction with `α, β` taken as constant in
    /// space and time; gradients still flow through them.
    #[default]
    Frozen,
    /// Residual of the projected prediction including `∂ₜα` and `∂ₜβ`.
    Full,
    /// Residual of the unprojected network.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lbfgs: LbfgsConfig,
    pub residual_mode: ResidualMode,
    /// Degeneracy threshold for projections inside the loss.
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lbfgs: LbfgsConfig::default(),
            residual_mode: ResidualMode::Frozen,
            eps: 1e-30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub variant: ModelVariant,
    pub init_seed: u64,
    pub data_seed: u64,
    pub epochs: usize,
    pub evaluations: usize,
    pub wall_seconds: f64,
    pub stop: StopReason,
    pub final_loss: f64,
    pub final_grad_inf: f64,
    /// Loss terms after each epoch.
    pub trace: Vec<LossParts>,
}

/// Trains a freshly initialised network and returns its parameters.
#[allow(clippy::too_many_arguments)]
pub fn train(
    network: &Network,
    variant: ModelVariant,
    pde: &PdeSpec,
    grid: &Grid,
    set: &TrainingSet,
    series: &ConservedSet,
    init_seed: u64,
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainRecord), Error> {
    let init = MlpParams::init(network.layer_sizes(), init_seed);
    let objective = PinnObjective::new(network, pde, grid, set, series, variant, cfg.residual_mode, cfg.eps)?;
    let start = Instant::now();
    let result = minimize(&objective, &init.values, &cfg.lbfgs)?;
    let record = TrainRecord {
        variant,
        init_seed,
        data_seed: set.seed,
        epochs: result.epochs,
        evaluations: result.evaluations,
        wall_seconds: start.elapsed().as_secs_f64(),
        stop: result.stop,
        final_loss: result.f,
        final_grad_inf: result.grad_inf,
        trace: result.trace.into_iter().map(|(_, p)| p).collect(),
    };
    let params = MlpParams {
        values: result.x,
        ..init
    };
    Ok((params, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_validation() {
        assert!(ModelVariant::pinn().validate().is_ok());
        assert!(ModelVariant::soft(ProjectionKind::Both, 0.0).validate().is_ok());
        assert!(ModelVariant::soft(ProjectionKind::Both, -1.0).validate().is_err());
        assert!(ModelVariant::soft(ProjectionKind::None, 1.0).validate().is_err());
        assert!(ModelVariant::projected(ProjectionKind::None).validate().is_err());
        assert_eq!(ModelVariant::projected(ProjectionKind::Both).label(), "pinn-proj-both");
        assert_eq!("pinn-sc".parse::<VariantTag>().unwrap(), VariantTag::PinnSc);
    }
}
