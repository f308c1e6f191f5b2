//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use conspinn::evaluation::{
    aggregate, c_trajectory, evaluate_model, predict, project_prediction, write_results_csv, write_trajectory_csv,
    Metrics, ResultRow,
};
use conspinn::mlp::{read_checkpoint, write_checkpoint, InputScaling, MlpParams, Network};
use conspinn::par;
use conspinn::pde::{conserved_series, read_dataset, solve_reference_with, write_dataset, write_dataset_csv, Dataset};
use conspinn::projection::{ConservedKind, ConservedSet, Projector};
use conspinn::sampling::{make_training_set, TrainingSet};
use conspinn::spectra::slq;
use conspinn::training::{train, ModelVariant, PinnObjective, TrainRecord, VariantTag};

use crate::config::{quantity_tag, ExperimentConfig};

/// Files under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            root: cfg.output.clone(),
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }

    pub fn series(&self, kind: ConservedKind) -> PathBuf {
        self.root.join(format!("series_{}.json", kind.tag()))
    }

    pub fn run_dir(&self, variant: &ModelVariant, seed: u64) -> PathBuf {
        self.root
            .join("runs")
            .join(run_name(variant))
            .join(format!("seed-{seed}"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.json"))
    }
}

/// Directory name of a model: `pinn`, `pinn-proj-L`, `pinn-sc-LQ-lambda10`.
pub fn run_name(v: &ModelVariant) -> String {
    match v.tag {
        VariantTag::Pinn => "pinn".into(),
        VariantTag::PinnProj => format!("pinn-proj-{}", quantity_tag(v.kind)),
        VariantTag::PinnSc => format!("pinn-sc-{}-lambda{}", quantity_tag(v.kind), v.lambda),
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    overrides: &'a [String],
    config: &'a ExperimentConfig,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<serde_json::Value>,
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    overrides: &[String],
    files: Vec<PathBuf>,
    summary: Option<serde_json::Value>,
) -> anyhow::Result<()> {
    let layout = Layout::new(cfg);
    let root = &layout.root;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        overrides,
        config: cfg,
        files: files
            .iter()
            .map(|p| p.strip_prefix(root).unwrap_or(p).display().to_string())
            .collect(),
        summary,
    };
    fs::write(layout.manifest(command), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

/// Solves the reference problem and writes the dataset and `c(t)` series.
pub fn generate(cfg: &ExperimentConfig, overrides: &[String], csv: bool) -> anyhow::Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    fs::create_dir_all(&layout.root)?;
    let spec = cfg.spec();
    let grid = cfg.resolved_grid()?;
    let field = solve_reference_with(&spec, &grid, &cfg.solver)?;
    let data = Dataset {
        spec,
        solver: cfg.solver.tag(spec.kind),
        field,
    };
    let mut files = vec![layout.dataset()];
    write_dataset(&layout.dataset(), &data)?;
    if csv {
        let p = layout.root.join("dataset.csv");
        write_dataset_csv(&p, &data)?;
        files.push(p);
    }
    for kind in [ConservedKind::Linear, ConservedKind::Quadratic] {
        let s = conserved_series(&data.field, kind, spec.series_mode())?;
        fs::write(layout.series(kind), serde_json::to_string_pretty(&s)? + "\n")?;
        files.push(layout.series(kind));
    }
    write_manifest(cfg, "generate", overrides, files.clone(), None)?;
    Ok(files)
}

fn load_inputs(cfg: &ExperimentConfig) -> anyhow::Result<(Dataset, ConservedSet)> {
    let layout = Layout::new(cfg);
    let path = layout.dataset();
    if !path.exists() {
        bail!("dataset {} not found; run `generate` first", path.display());
    }
    let data = read_dataset(&path).with_context(|| format!("reading {}", path.display()))?;
    if data.spec.kind != cfg.pde || data.field.grid != cfg.resolved_grid()? {
        bail!(
            "dataset {} does not match the configuration; regenerate it",
            path.display()
        );
    }
    let mut series = Vec::new();
    for kind in [ConservedKind::Linear, ConservedKind::Quadratic] {
        let p = layout.series(kind);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        series.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    Ok((data, ConservedSet::new(series)))
}

fn network(cfg: &ExperimentConfig, data: &Dataset) -> Network {
    Network::new(cfg.layer_sizes(), InputScaling::unit_box(&data.field.grid.bounds()))
}

fn training_set(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> anyhow::Result<TrainingSet> {
    Ok(make_training_set(
        &data.field,
        cfg.n_data(),
        cfg.training.n_collocation,
        seed,
        cfg.training.data_source,
    )?)
}

/// Outcome of one training run as stored next to the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<TrainRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn train_models(
    cfg: &ExperimentConfig,
    models: &[ModelVariant],
    jobs: usize,
    log: bool,
) -> anyhow::Result<Vec<PathBuf>> {
    let (data, series) = load_inputs(cfg)?;
    let layout = Layout::new(cfg);
    let net = network(cfg, &data);
    let tcfg = cfg.train_config();
    let hash = cfg.hash();
    let tasks: Vec<(ModelVariant, u64)> = models
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (*m, s)))
        .collect();
    let outcomes = par::with_threads(jobs, || {
        par::map_indexed(tasks.len(), |i| -> anyhow::Result<PathBuf> {
            let (variant, seed) = tasks[i];
            let dir = layout.run_dir(&variant, seed);
            fs::create_dir_all(&dir)?;
            let set = training_set(cfg, &data, seed)?;
            let start = Instant::now();
            let result = train(&net, variant, &data.spec, &data.field.grid, &set, &series, seed, &tcfg);
            let rec = match result {
                Ok((params, record)) => {
                    write_checkpoint(&dir.join("params.bin"), &net, &params)?;
                    if log {
                        eprintln!(
                            "{} seed {seed}: {} epochs, loss {:.3e}, {:?}, {:.1}s",
                            run_name(&variant),
                            record.epochs,
                            record.final_loss,
                            record.stop,
                            start.elapsed().as_secs_f64()
                        );
                    }
                    RunRecord {
                        config_hash: hash.clone(),
                        seed,
                        record: Some(record),
                        error: None,
                    }
                }
                Err(e) => {
                    eprintln!("{} seed {seed}: {e}", run_name(&variant));
                    let _ = fs::remove_file(dir.join("params.bin"));
                    RunRecord {
                        config_hash: hash.clone(),
                        seed,
                        record: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            let path = dir.join("record.json");
            fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n")?;
            Ok(path)
        })
    });
    outcomes.into_iter().collect()
}

/// Trains every configured model for every seed.
pub fn train_all(cfg: &ExperimentConfig, overrides: &[String], jobs: usize, log: bool) -> anyhow::Result<()> {
    let files = train_models(cfg, &cfg.models(), jobs, log)?;
    let summary = train_summary(&files)?;
    write_manifest(cfg, "train", overrides, files, Some(summary))
}

/// Mean epochs and seconds per model plus the failed trials.
fn train_summary(records: &[PathBuf]) -> anyhow::Result<serde_json::Value> {
    type Entry = (String, Vec<(usize, f64)>, Vec<u64>);
    let mut models: Vec<Entry> = Vec::new();
    for p in records {
        let rec: RunRecord = serde_json::from_str(&fs::read_to_string(p)?)?;
        let name = p
            .parent()
            .and_then(Path::parent)
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let idx = match models.iter().position(|m| m.0 == name) {
            Some(i) => i,
            None => {
                models.push((name, Vec::new(), Vec::new()));
                models.len() - 1
            }
        };
        match rec.record {
            Some(r) => models[idx].1.push((r.epochs, r.wall_seconds)),
            None => models[idx].2.push(rec.seed),
        }
    }
    let entries: Vec<serde_json::Value> = models
        .into_iter()
        .map(|(name, ok, failed)| {
            let n = ok.len().max(1) as f64;
            serde_json::json!({
                "model": name,
                "trials": ok.len(),
                "mean_epochs": ok.iter().map(|r| r.0 as f64).sum::<f64>() / n,
                "mean_seconds": ok.iter().map(|r| r.1).sum::<f64>() / n,
                "diverged_seeds": failed,
            })
        })
        .collect();
    Ok(serde_json::json!({ "models": entries }))
}

struct Trial {
    seed: u64,
    params: MlpParams,
    net: Network,
    record: TrainRecord,
}

fn load_trials(cfg: &ExperimentConfig, variant: &ModelVariant) -> anyhow::Result<Vec<Trial>> {
    let layout = Layout::new(cfg);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let dir = layout.run_dir(variant, seed);
        let rec_path = dir.join("record.json");
        let text = fs::read_to_string(&rec_path)
            .with_context(|| format!("missing {}; run `train` first", rec_path.display()))?;
        let rec: RunRecord = serde_json::from_str(&text)?;
        let Some(record) = rec.record else {
            continue;
        };
        let (net, params) = read_checkpoint(&dir.join("params.bin"))
            .with_context(|| format!("reading checkpoint in {}", dir.display()))?;
        out.push(Trial {
            seed,
            params,
            net,
            record,
        });
    }
    Ok(out)
}

fn metrics_for(
    cfg: &ExperimentConfig,
    data: &Dataset,
    series: &ConservedSet,
    variant: &ModelVariant,
    trials: &[Trial],
) -> anyhow::Result<Option<Metrics>> {
    let kind = if variant.tag == VariantTag::PinnProj {
        variant.kind
    } else {
        Default::default()
    };
    let per = trials
        .iter()
        .map(|t| {
            let mut m = evaluate_model(
                &t.net,
                &t.params.values,
                &data.field,
                series,
                kind,
                cfg.evaluation.precision,
            )?;
            m.epochs = t.record.epochs as f64;
            m.wall_seconds = t.record.wall_seconds;
            Ok(m)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if per.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregate(&per)?))
}

fn result_row(cfg: &ExperimentConfig, variant: &ModelVariant, m: Metrics, trials: usize) -> ResultRow {
    ResultRow {
        pde: cfg.pde.name().to_string(),
        variant: variant.tag.name().to_string(),
        quantity: quantity_tag(variant.kind).to_string(),
        metrics: m,
        trials,
    }
}

/// Writes the results table and `c(t)` trajectories; optionally spectra.
pub fn evaluate_all(cfg: &ExperimentConfig, overrides: &[String], with_spectra: bool) -> anyhow::Result<()> {
    let (data, series) = load_inputs(cfg)?;
    let layout = Layout::new(cfg);
    let hash = cfg.hash();
    let grid = data.field.grid;
    let mut rows = Vec::new();
    let mut files = vec![layout.results()];
    type Columns = Vec<(String, Vec<f64>)>;
    let mut traj: Vec<(ConservedKind, Columns)> = [ConservedKind::Linear, ConservedKind::Quadratic]
        .into_iter()
        .map(|k| {
            let c_ref = series
                .get(k)
                .map(|s| grid.times().iter().map(|&t| s.c_at(t).unwrap_or(f64::NAN)).collect());
            let mut cols = vec![("reference".to_string(), data.field.integral_series(k))];
            if let Some(c) = c_ref {
                cols.push(("series".to_string(), c));
            }
            (k, cols)
        })
        .collect();
    for variant in cfg.models() {
        let trials = load_trials(cfg, &variant)?;
        if let Some(m) = metrics_for(cfg, &data, &series, &variant, &trials)? {
            rows.push(result_row(cfg, &variant, m, trials.len()));
        }
        if let Some(t) = trials.first() {
            let mut pred = predict(&t.net, &t.params.values, &grid);
            if variant.tag == VariantTag::PinnProj {
                pred = project_prediction(&pred, &grid, variant.kind, &series, Projector::default())?;
            }
            for (k, cols) in &mut traj {
                cols.push((run_name(&variant), c_trajectory(&pred, &grid, *k)));
            }
        }
    }
    write_results_csv(&layout.results(), &rows, &hash, cfg.evaluation.timing)?;
    let tdir = layout.root.join("trajectories");
    fs::create_dir_all(&tdir)?;
    for (k, cols) in &traj {
        let p = tdir.join(format!("c_{}.csv", k.tag()));
        write_trajectory_csv(&p, &grid.times(), cols, &hash)?;
        files.push(p);
    }
    if with_spectra {
        files.extend(spectra_files(cfg, &data, &series)?);
    }
    write_manifest(cfg, "evaluate", overrides, files, None)
}

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    model: String,
    seed: u64,
    max_eig: f64,
    min_eig: f64,
    mass: f64,
}

fn spectra_files(cfg: &ExperimentConfig, data: &Dataset, series: &ConservedSet) -> anyhow::Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let dir = layout.root.join("spectra");
    fs::create_dir_all(&dir)?;
    let hash = cfg.hash();
    let tcfg = cfg.train_config();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for variant in cfg.models() {
        let trials = load_trials(cfg, &variant)?;
        let Some(t) = trials.first() else { continue };
        let set = training_set(cfg, data, t.seed)?;
        let obj = PinnObjective::new(
            &t.net,
            &data.spec,
            &data.field.grid,
            &set,
            series,
            variant,
            tcfg.residual_mode,
            tcfg.eps,
        )?;
        let density = slq(&obj, &t.params.values, &cfg.slq_config())?;
        let p = dir.join(format!("{}.csv", run_name(&variant)));
        density.write_csv(&p, &hash)?;
        files.push(p);
        summary.push(SpectrumSummary {
            model: run_name(&variant),
            seed: t.seed,
            max_eig: density.max_eig(),
            min_eig: density.min_eig(),
            mass: density.mass(),
        });
    }
    let p = dir.join("summary.json");
    fs::write(
        &p,
        serde_json::to_string_pretty(&serde_json::json!({ "config_hash": hash, "spectra": summary }))? + "\n",
    )?;
    files.push(p);
    Ok(files)
}

/// Hessian spectra of the first trained seed of every model.
pub fn spectra(cfg: &ExperimentConfig, overrides: &[String]) -> anyhow::Result<()> {
    let (data, series) = load_inputs(cfg)?;
    let files = spectra_files(cfg, &data, &series)?;
    write_manifest(cfg, "spectra", overrides, files, None)
}

/// Trains and evaluates `pinn-sc` for every configured penalty weight.
pub fn sweep_lambda(cfg: &ExperimentConfig, overrides: &[String], jobs: usize, log: bool) -> anyhow::Result<()> {
    let (data, series) = load_inputs(cfg)?;
    let layout = Layout::new(cfg);
    let models: Vec<ModelVariant> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.quantities.iter().map(move |q| ModelVariant::soft(q.kind(), l)))
        .collect();
    let mut files = train_models(cfg, &models, jobs, log)?;
    let mut rows = Vec::new();
    for v in &models {
        let trials = load_trials(cfg, v)?;
        if let Some(m) = metrics_for(cfg, &data, &series, v, &trials)? {
            rows.push((v.lambda, result_row(cfg, v, m, trials.len())));
        }
    }
    write_sweep_csv(&layout.sweep(), &rows, &cfg.hash(), cfg.evaluation.timing)?;
    files.push(layout.sweep());
    write_manifest(cfg, "sweep-lambda", overrides, files, None)
}

fn write_sweep_csv(path: &Path, rows: &[(f64, ResultRow)], hash: &str, timing: bool) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    let plain: Vec<ResultRow> = rows.iter().map(|(_, r)| r.clone()).collect();
    write_results_csv(&tmp, &plain, hash, timing)?;
    let text = fs::read_to_string(&tmp)?;
    fs::remove_file(&tmp)?;
    let mut out = String::new();
    let mut body = 0;
    for line in text.lines() {
        if line.starts_with('#') {
            out.push_str(line);
        } else if body == 0 {
            out.push_str("lambda,");
            out.push_str(line);
            body += 1;
        } else {
            out.push_str(&format!("{},{line}", rows[body - 1].0));
            body += 1;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the results table back as `(header, rows)` of raw cells.
pub fn read_table(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .context("empty table")?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    Ok((header, rows))
}
