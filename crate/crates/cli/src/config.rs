//! Experiment configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use conspinn::evaluation::Precision;
use conspinn::mlp::{HIDDEN_LAYERS, HIDDEN_WIDTH};
use conspinn::pde::{Grid, PdeKind, PdeSpec, SolverOptions};
use conspinn::projection::ProjectionKind;
use conspinn::sampling::DataSource;
use conspinn::spectra::SlqConfig;
use conspinn::training::{LbfgsConfig, ModelVariant, ResidualMode, TrainConfig, VariantTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GridOverrides {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nt: Option<usize>,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub dt: Option<f64>,
    /// Keeps every `coarsen`-th cell in space.
    pub coarsen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub n_data: Option<usize>,
    pub n_collocation: usize,
    pub data_source: DataSource,
    pub grad_tol: f64,
    pub max_epochs: usize,
    pub ftol: Option<f64>,
    pub history: usize,
    pub residual_mode: ResidualMode,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            n_data: None,
            n_collocation: 10_000,
            data_source: DataSource::FullGrid,
            grad_tol: 1e-6,
            max_epochs: 20_000,
            ftol: None,
            history: 50,
            residual_mode: ResidualMode::Frozen,
            hidden_layers: HIDDEN_LAYERS,
            hidden_width: HIDDEN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub precision: Precision,
    /// Write wall-clock seconds into the results table.
    pub timing: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            precision: Precision::F64,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectraSection {
    pub probes: usize,
    pub steps: usize,
    pub seed: u64,
    pub variance: f64,
}

impl Default for SpectraSection {
    fn default() -> Self {
        let d = SlqConfig::default();
        SpectraSection {
            probes: d.probes,
            steps: d.steps,
            seed: d.seed,
            variance: d.variance,
        }
    }
}

/// Conserved-quantity selection as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(alias = "l", alias = "linear")]
    L,
    #[serde(alias = "q", alias = "quadratic")]
    Q,
    #[serde(alias = "both", alias = "LQ")]
    Both,
}

impl Quantity {
    pub fn kind(self) -> ProjectionKind {
        match self {
            Quantity::L => ProjectionKind::Linear,
            Quantity::Q => ProjectionKind::Quadratic,
            Quantity::Both => ProjectionKind::Both,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Quantity::L => "L",
            Quantity::Q => "Q",
            Quantity::Both => "LQ",
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "l" | "linear" => Quantity::L,
            "q" | "quadratic" => Quantity::Q,
            "both" | "lq" => Quantity::Both,
            _ => bail!("unknown quantity `{s}` (expected L, Q or both)"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub pde: PdeKind,
    pub variants: Vec<VariantTag>,
    pub quantities: Vec<Quantity>,
    /// Penalty weight of `pinn-sc`.
    pub lambda: f64,
    /// Weights visited by `sweep-lambda`.
    pub lambdas: Vec<f64>,
    /// One trial per seed; seeds drive data sampling and initialisation.
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub grid: GridOverrides,
    pub solver: SolverOptions,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub spectra: SpectraSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pde: PdeKind::Advection1d,
            variants: vec![VariantTag::Pinn, VariantTag::PinnSc, VariantTag::PinnProj],
            quantities: vec![Quantity::L, Quantity::Q, Quantity::Both],
            lambda: 10.0,
            lambdas: vec![0.0, 1.0, 10.0, 100.0],
            seeds: (0..10).collect(),
            output: PathBuf::from("out"),
            grid: GridOverrides::default(),
            solver: SolverOptions::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
            spectra: SpectraSection::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub pde: Option<PdeKind>,
    pub variants: Option<Vec<VariantTag>>,
    pub quantities: Option<Vec<Quantity>>,
    pub seeds: Option<Vec<u64>>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub grad_tol: Option<f64>,
    pub max_epochs: Option<usize>,
    pub n_collocation: Option<usize>,
    pub n_data: Option<usize>,
    pub residual_mode: Option<ResidualMode>,
    pub precision: Option<Precision>,
    pub timing: bool,
    pub coarsen: Option<usize>,
    pub nt: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Applies overrides and returns the list of changed keys.
    pub fn apply(&mut self, o: &Overrides) -> Vec<String> {
        let mut changed = Vec::new();
        macro_rules! set {
            ($src:expr, $dst:expr, $name:literal) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                    changed.push($name.to_string());
                }
            };
        }
        set!(o.pde, self.pde, "pde");
        set!(o.variants, self.variants, "variants");
        set!(o.quantities, self.quantities, "quantities");
        set!(o.seeds, self.seeds, "seeds");
        set!(o.lambda, self.lambda, "lambda");
        set!(o.lambdas, self.lambdas, "lambdas");
        set!(o.output, self.output, "output");
        set!(o.grad_tol, self.training.grad_tol, "training.grad_tol");
        set!(o.max_epochs, self.training.max_epochs, "training.max_epochs");
        set!(o.n_collocation, self.training.n_collocation, "training.n_collocation");
        set!(o.residual_mode, self.training.residual_mode, "training.residual_mode");
        set!(o.precision, self.evaluation.precision, "evaluation.precision");
        if let Some(n) = o.n_data {
            self.training.n_data = Some(n);
            changed.push("training.n_data".into());
        }
        if let Some(c) = o.coarsen {
            self.grid.coarsen = Some(c);
            changed.push("grid.coarsen".into());
        }
        if let Some(nt) = o.nt {
            self.grid.nt = Some(nt);
            changed.push("grid.nt".into());
        }
        if o.timing {
            self.evaluation.timing = true;
            changed.push("evaluation.timing".into());
        }
        changed
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.variants.is_empty() {
            bail!("no variants selected");
        }
        if self.variants.iter().any(|v| *v != VariantTag::Pinn) && self.quantities.is_empty() {
            bail!("no conserved quantities selected");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0)
            || self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0))
        {
            bail!("penalty weights must be finite and non-negative");
        }
        if !(self.training.grad_tol > 0.0) {
            bail!("training.grad_tol must be positive");
        }
        if self.training.hidden_layers == 0 || self.training.hidden_width == 0 {
            bail!("network must have at least one hidden layer");
        }
        if self.spectra.probes == 0 || self.spectra.steps == 0 || !(self.spectra.variance > 0.0) {
            bail!("spectra settings must be positive");
        }
        self.resolved_grid()?.validate()?;
        Ok(())
    }

    pub fn spec(&self) -> PdeSpec {
        PdeSpec::benchmark(self.pde)
    }

    pub fn resolved_grid(&self) -> anyhow::Result<Grid> {
        let mut g = self.spec().default_grid();
        let o = &self.grid;
        if let Some(c) = o.coarsen {
            if c == 0 || !g.nx.is_multiple_of(c) || (g.dims == 2 && !g.ny.is_multiple_of(c)) {
                bail!("grid.coarsen = {c} must divide the cell count");
            }
            g = g.coarsened(c);
        }
        if let Some(v) = o.nx {
            g.nx = v;
        }
        if let Some(v) = o.ny {
            g.ny = v;
        }
        if let Some(v) = o.nt {
            g.nt = v;
        }
        if let Some(v) = o.dx {
            g.dx = v;
        }
        if let Some(v) = o.dy {
            g.dy = v;
        }
        if let Some(v) = o.dt {
            g.dt = v;
        }
        Ok(g)
    }

    pub fn n_data(&self) -> usize {
        self.training
            .n_data
            .unwrap_or(if self.pde.spatial_dims() == 2 { 1000 } else { 100 })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let n_in = self.pde.spatial_dims() + 1;
        let mut s = vec![n_in];
        s.extend(std::iter::repeat_n(
            self.training.hidden_width,
            self.training.hidden_layers,
        ));
        s.push(1);
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lbfgs: LbfgsConfig {
                history: self.training.history,
                grad_tol: self.training.grad_tol,
                max_epochs: self.training.max_epochs,
                ftol: self.training.ftol,
                ..LbfgsConfig::default()
            },
            residual_mode: self.training.residual_mode,
            ..TrainConfig::default()
        }
    }

    pub fn slq_config(&self) -> SlqConfig {
        SlqConfig {
            probes: self.spectra.probes,
            steps: self.spectra.steps,
            seed: self.spectra.seed,
            variance: self.spectra.variance,
            ..SlqConfig::default()
        }
    }

    /// Every (variant, quantity) model of the experiment.
    pub fn models(&self) -> Vec<ModelVariant> {
        let mut out = Vec::new();
        for tag in &self.variants {
            match tag {
                VariantTag::Pinn => out.push(ModelVariant::pinn()),
                VariantTag::PinnSc => out.extend(
                    self.quantities
                        .iter()
                        .map(|q| ModelVariant::soft(q.kind(), self.lambda)),
                ),
                VariantTag::PinnProj => out.extend(self.quantities.iter().map(|q| ModelVariant::projected(q.kind()))),
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn quantity_tag(kind: ProjectionKind) -> &'static str {
    match kind {
        ProjectionKind::None => "-",
        ProjectionKind::Linear => "L",
        ProjectionKind::Quadratic => "Q",
        ProjectionKind::Both => "LQ",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let g = c.resolved_grid().unwrap();
        assert_eq!((g.nx, g.nt), (256, 100));
        assert_eq!(c.n_data(), 100);
        assert_eq!(c.training.n_collocation, 10_000);
        assert_eq!(c.layer_sizes().len(), 11);
        assert_eq!(c.models().len(), 7);
        assert_eq!(c.seeds.len(), 10);
        assert_eq!(c.lambda, 10.0);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let text = r#"
            pde = "kdv"
            variants = ["pinn-proj"]
            quantities = ["both"]
            seeds = [1, 2]
            [training]
            n_collocation = 500
            max_epochs = 10
            residual_mode = "full"
            [grid]
            coarsen = 4
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(c.pde, PdeKind::Kdv);
        assert_eq!(c.quantities, vec![Quantity::Both]);
        assert_eq!(c.resolved_grid().unwrap().nx, 64);
        let mut d = c.clone();
        d.output = "elsewhere".into();
        assert_eq!(c.hash(), d.hash());
        d.seeds.push(3);
        assert_ne!(c.hash(), d.hash());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn overrides_are_logged() {
        let mut c = ExperimentConfig::default();
        let changed = c.apply(&Overrides {
            max_epochs: Some(5),
            seeds: Some(vec![7]),
            timing: true,
            ..Default::default()
        });
        assert_eq!(changed, vec!["seeds", "training.max_epochs", "evaluation.timing"]);
        assert_eq!((c.training.max_epochs, c.seeds.clone()), (5, vec![7]));
    }

    #[test]
    fn invalid_settings() {
        let mut c = ExperimentConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.lambda = 1.0;
        c.grid.coarsen = Some(3);
        assert!(c.validate().is_err());
    }
}
