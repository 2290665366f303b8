//! Command-line surface. Every command writes into a fresh timestamped run
//! directory under `--out` holding the resolved configuration.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{nearest_key, DataSection, ProtocolSection, RunConfig};

use crate::data::{derive_seed, full_split, CellSplit, Dataset, LoadReport};
use crate::error::{Error, Result};
use crate::eval::{
    pr_points, rank_candidates, roc_points, run_coldstart, run_cv, run_sparse, select_drugs, surface_text, sweep,
    train_prototypes, write_curve, Experiment,
};
use crate::proto::{train_encoders, PrototypeEncoder};
use crate::seqmodel::{train_stage2, Prototypes, Stage2Model};
use crate::synth::{block_dataset, BlockConfig};

/// Seed stream of the cold-start drug subset.
const SUBSET_STREAM: u64 = 0xD206;

#[derive(Debug, Parser)]
#[command(
    name = "bibldr",
    version,
    about = "Two-stage drug repositioning: prototypes and behavior sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set stage2.temperature=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for unit-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Parent directory of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Master seed; same as `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration and its dataset without training.
    Validate(Common),
    /// Train both prototype encoders.
    TrainProto(Common),
    /// Train a sequence model on all positives and as many sampled zeros.
    Train(Common),
    /// Repeated k-fold cross-validation.
    Cv(Common),
    /// Hold out whole drug rows.
    Coldstart(Common),
    /// Retrain with a fraction of the training positives.
    Sparse(Common),
    /// Grid over prototype extent and temperature.
    Sweep(Common),
    /// Top-K candidate drugs for one disease from a trained model.
    Rank(Common),
    /// Write a seeded block-structured dataset and a matching config.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub drugs: usize,
    #[arg(long, default_value_t = 15)]
    pub diseases: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the dataset files.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(args) => synth(&args),
        Command::Validate(c) => validate(&c),
        Command::TrainProto(c) => execute(&c, "train-proto", cmd_train_proto),
        Command::Train(c) => execute(&c, "train", cmd_train),
        Command::Cv(c) => execute(&c, "cv", cmd_cv),
        Command::Coldstart(c) => execute(&c, "coldstart", cmd_coldstart),
        Command::Sparse(c) => execute(&c, "sparse", cmd_sparse),
        Command::Sweep(c) => execute(&c, "sweep", cmd_sweep),
        Command::Rank(c) => execute(&c, "rank", cmd_rank),
    }
}

/// Loads the config file, then applies `--set` and `--seed`.
pub fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cwd = std::env::current_dir().map_err(|e| Error::io("reading the working directory", e))?;
    cfg.apply_overrides(&common.overrides, &cwd)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

struct Run {
    dir: PathBuf,
    cfg: RunConfig,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn execute(common: &Common, name: &str, body: fn(&Run) -> Result<()>) -> Result<i32> {
    let cfg = resolve(common)?;
    let checks = run_checks(&cfg);
    if let Some(c) = checks.iter().find(|c| c.outcome.is_err()) {
        return Err(Error::Validation(format!(
            "{}: {}",
            c.name,
            c.outcome.as_ref().unwrap_err()
        )));
    }
    let dir = create_run_dir(&common.out, name)?;
    let run = Run { dir, cfg };
    run.write("resolved_config.txt", &run.cfg.to_text())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| body(&run))?;
    println!("{}", run.dir.display());
    Ok(0)
}

fn create_run_dir(out: &Path, name: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
    for attempt in 0..1000 {
        let leaf = match attempt {
            0 => format!("{name}-{stamp}"),
            n => format!("{name}-{stamp}-{n}"),
        };
        let dir = out.join(leaf);
        std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(format!("creating {}", dir.display()), e)),
        }
    }
    Err(Error::Validation(format!(
        "no free run directory name under {}",
        out.display()
    )))
}

/// One named validation check.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub outcome: std::result::Result<(), String>,
}

fn check(name: impl Into<String>, outcome: Result<()>) -> Check {
    Check {
        name: name.into(),
        outcome: outcome.map_err(|e| e.to_string()),
    }
}

/// Every check applied before a command runs.
pub fn run_checks(cfg: &RunConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut paths_ok = true;
    for key in DataSection::REQUIRED_KEYS {
        let present = cfg.data.configured().iter().any(|(k, _)| k == key);
        if !present {
            paths_ok = false;
            checks.push(check(
                format!("{key} is set"),
                Err(Error::Config {
                    key: key.to_string(),
                    message: "is required".into(),
                }),
            ));
        }
    }
    for (key, path) in cfg.data.configured() {
        let exists = path.is_file();
        paths_ok &= exists;
        checks.push(check(
            format!("{key} exists"),
            if exists {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.clone(),
                    message: format!("no file at {}", path.display()),
                })
            },
        ));
    }
    if paths_ok {
        checks.push(check("dataset loads", load_dataset(cfg).map(|_| ())));
    }
    checks.push(check("stage1 settings", cfg.stage1.validate()));
    checks.push(check("stage2 settings", cfg.stage2.validate_for(cfg.stage1.d0)));
    let p = &cfg.protocol;
    let bad = |key: &str, message: String| {
        Err(Error::Config {
            key: format!("protocol.{key}"),
            message,
        })
    };
    checks.push(check(
        "protocol folds and repeats",
        if p.folds < 2 {
            bad("folds", format!("need at least 2, got {}", p.folds))
        } else if p.repeats == 0 {
            bad("repeats", "must be positive".into())
        } else {
            Ok(())
        },
    ));
    checks.push(check(
        "protocol lambdas in (0, 1]",
        match p.lambdas.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
            Some(l) => bad("lambdas", format!("{l} outside (0, 1]")),
            None if p.lambdas.is_empty() => bad("lambdas", "list is empty".into()),
            None => Ok(()),
        },
    ));
    checks.push(check(
        "sweep grid",
        if p.grid_d0.is_empty() || p.grid_temperature.is_empty() {
            bad("grid_d0", "grid is empty".into())
        } else {
            p.grid_d0
                .iter()
                .try_for_each(|&d0| {
                    cfg.stage2.validate_for(d0).map_err(|e| Error::Config {
                        key: "protocol.grid_d0".into(),
                        message: format!("d0 = {d0}: {e}"),
                    })
                })
                .and_then(|_| match p.grid_temperature.iter().find(|t| !(**t >= 0.0)) {
                    Some(t) => bad("grid_temperature", format!("{t} is negative")),
                    None => Ok(()),
                })
        },
    ));
    checks.push(check(
        "ranking size",
        if p.rank_k == 0 {
            bad("rank_k", "must be at least 1".into())
        } else {
            Ok(())
        },
    ));
    for (key, dir) in [("protocol.prototypes", &p.prototypes), ("protocol.model", &p.model)] {
        if let Some(dir) = dir {
            checks.push(check(
                format!("{key} exists"),
                if dir.is_dir() {
                    Ok(())
                } else {
                    Err(Error::Config {
                        key: key.into(),
                        message: format!("no directory at {}", dir.display()),
                    })
                },
            ));
        }
    }
    checks
}

fn validate(common: &Common) -> Result<i32> {
    let cfg = resolve(common)?;
    let checks = run_checks(&cfg);
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(()) => println!("ok    {}", c.name),
            Err(m) => {
                failed += 1;
                println!("FAIL  {}: {m}", c.name);
            }
        }
    }
    println!("{} checks, {failed} failed", checks.len());
    Ok(i32::from(failed > 0))
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, LoadReport)> {
    Dataset::load(&cfg.data.paths()?)
}

fn dataset(run: &Run) -> Result<Dataset> {
    let (ds, report) = load_dataset(&run.cfg)?;
    let mut text = format!(
        "drugs {}\ndiseases {}\npositives {}\nsparsity {}\n",
        report.n_drugs, report.n_diseases, report.positives, report.sparsity
    );
    for w in &report.warnings {
        let _ = writeln!(text, "warning {w}");
    }
    run.write("dataset.txt", &text)?;
    Ok(ds)
}

fn encoders_from(dir: &Path) -> Result<(PrototypeEncoder, PrototypeEncoder)> {
    Ok((
        PrototypeEncoder::load(&dir.join("drug"))?,
        PrototypeEncoder::load(&dir.join("disease"))?,
    ))
}

/// Loads the configured encoder checkpoints, or trains fresh encoders.
fn prototypes(run: &Run, ds: &Dataset) -> Result<Prototypes> {
    match &run.cfg.protocol.prototypes {
        Some(dir) => {
            let (drug, disease) = encoders_from(dir)?;
            Prototypes::from_encoders(ds, &drug, &disease)
        }
        None => train_prototypes(ds, &run.cfg.stage1),
    }
}

fn cmd_train_proto(run: &Run) -> Result<()> {
    let ds = dataset(run)?;
    let (drug, disease) = train_encoders(&ds, &run.cfg.stage1)?;
    let dir = run.path("prototypes");
    drug.encoder.save(&dir.join("drug"))?;
    disease.encoder.save(&dir.join("disease"))?;
    let mut text = String::new();
    for (name, outcome) in [("drug", &drug), ("disease", &disease)] {
        for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
            let _ = writeln!(text, "{name} {epoch} {loss}");
        }
    }
    run.write("losses.txt", &text)
}

fn cmd_train(run: &Run) -> Result<()> {
    let dir = run.cfg.protocol.prototypes.as_ref().ok_or_else(|| Error::Config {
        key: "protocol.prototypes".into(),
        message: "train needs encoder checkpoints from train-proto".into(),
    })?;
    let ds = dataset(run)?;
    let (drug, disease) = encoders_from(dir)?;
    let protos = Prototypes::from_encoders(&ds, &drug, &disease)?;
    let split = full_split(&ds, derive_seed(run.cfg.seed, &[0]))?;
    split.write_manifest(&run.path("split.txt"), "full", run.cfg.seed, None)?;
    let outcome = train_stage2(&ds, &split, &protos, &run.cfg.stage2)?;
    outcome.model.save(&run.path("model"))?;
    let text: String = outcome
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(e, l)| format!("{e} {l}\n"))
        .collect();
    run.write("losses.txt", &text)
}

fn write_experiment(run: &Run, exp: &Experiment) -> Result<()> {
    exp.report.write(&run.path("report.txt"))?;
    run.write("timing.txt", &format!("elapsed_secs {}\n", exp.report.elapsed_secs))?;
    let curves = run.path("curves");
    std::fs::create_dir_all(&curves).map_err(|e| Error::io(format!("creating {}", curves.display()), e))?;
    for unit in &exp.scores {
        let stem = unit.label.replace([',', '='], "_");
        if let Ok(points) = roc_points(&unit.set) {
            write_curve(&curves.join(format!("{stem}.roc.txt")), ("fpr", "tpr"), &points)?;
        }
        if let Ok(points) = pr_points(&unit.set) {
            write_curve(&curves.join(format!("{stem}.pr.txt")), ("recall", "precision"), &points)?;
        }
    }
    Ok(())
}

fn cmd_cv(run: &Run) -> Result<()> {
    let ds = dataset(run)?;
    let protos = prototypes(run, &ds)?;
    let exp = run_cv(&ds, &run.cfg.spec(), &protos, run.cfg.protocol.repeats)?;
    write_experiment(run, &exp)
}

/// Drugs held out by the cold-start command.
pub fn coldstart_drugs(cfg: &RunConfig, ds: &Dataset) -> Vec<usize> {
    let p = &cfg.protocol;
    if !p.coldstart_list.is_empty() {
        p.coldstart_list.clone()
    } else if p.coldstart_all {
        (0..ds.n_drugs()).filter(|&d| ds.row_positives(d) > 0).collect()
    } else {
        select_drugs(ds, p.coldstart_drugs, derive_seed(cfg.seed, &[SUBSET_STREAM]))
    }
}

fn cmd_coldstart(run: &Run) -> Result<()> {
    let ds = dataset(run)?;
    let protos = prototypes(run, &ds)?;
    let drugs = coldstart_drugs(&run.cfg, &ds);
    let exp = run_coldstart(&ds, &run.cfg.spec(), &protos, &drugs)?;
    write_experiment(run, &exp)
}

fn cmd_sparse(run: &Run) -> Result<()> {
    let ds = dataset(run)?;
    let protos = prototypes(run, &ds)?;
    let exp = run_sparse(&ds, &run.cfg.spec(), &protos, &run.cfg.protocol.lambdas)?;
    write_experiment(run, &exp)
}

fn cmd_sweep(run: &Run) -> Result<()> {
    let ds = dataset(run)?;
    let known = match &run.cfg.protocol.prototypes {
        Some(_) => Some(prototypes(run, &ds)?),
        None => None,
    };
    let p = &run.cfg.protocol;
    let exp = sweep(&ds, &run.cfg.spec(), &p.grid_d0, &p.grid_temperature, known.as_ref())?;
    run.write("surface.txt", &surface_text(&exp.report))?;
    write_experiment(run, &exp)
}

/// Disease index from an ID or a plain index.
pub fn resolve_disease(ds: &Dataset, name: &str) -> Result<usize> {
    if let Some(i) = ds.disease_ids().iter().position(|id| id == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if i < ds.n_diseases() => Ok(i),
        _ => Err(Error::Config {
            key: "protocol.rank_disease".into(),
            message: format!(
                "`{name}` is neither a disease ID nor an index below {}",
                ds.n_diseases()
            ),
        }),
    }
}

fn cmd_rank(run: &Run) -> Result<()> {
    let dir = run.cfg.protocol.model.as_ref().ok_or_else(|| Error::Config {
        key: "protocol.model".into(),
        message: "rank needs a run directory written by train".into(),
    })?;
    let ds = dataset(run)?;
    let model = Stage2Model::load(&dir.join("model"), &ds)?;
    let manifest = CellSplit::read_manifest(&dir.join("split.txt"))?;
    let disease = resolve_disease(&ds, &run.cfg.protocol.rank_disease)?;
    let ranking = rank_candidates(&model, &ds, &manifest.split, disease, run.cfg.protocol.rank_k)?;
    if ranking.truncated {
        eprintln!(
            "only {} candidates for disease {}; returning all of them",
            ranking.entries.len(),
            ds.disease_ids()[disease]
        );
        run.write(
            "ranking_truncated.txt",
            &format!(
                "requested {}\nreturned {}\n",
                run.cfg.protocol.rank_k,
                ranking.entries.len()
            ),
        )?;
    }
    run.write("ranking.txt", &ranking.to_text())
}

fn synth(args: &SynthArgs) -> Result<i32> {
    let ds = block_dataset(&BlockConfig {
        drugs: args.drugs,
        diseases: args.diseases,
        clusters: args.clusters,
        seed: args.seed,
        ..BlockConfig::default()
    })?;
    let paths = ds.save(&args.out)?;
    let name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let mut text = String::new();
    let _ = writeln!(text, "data.association = {}", name(&paths.association));
    let _ = writeln!(text, "data.drug_similarity = {}", name(&paths.drug_similarity));
    let _ = writeln!(text, "data.disease_similarity = {}", name(&paths.disease_similarity));
    if let Some(p) = &paths.drug_ids {
        let _ = writeln!(text, "data.drug_ids = {}", name(p));
    }
    if let Some(p) = &paths.disease_ids {
        let _ = writeln!(text, "data.disease_ids = {}", name(p));
    }
    let cfg_path = args.out.join("dataset.cfg");
    std::fs::write(&cfg_path, text).map_err(|e| Error::io(format!("writing {}", cfg_path.display()), e))?;
    println!("{}", cfg_path.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_divisibility_examples() {
        let mut cfg = RunConfig::default();
        cfg.set("stage1.d0", "100").unwrap();
        cfg.set("stage2.heads", "4").unwrap();
        cfg.set("stage2.d_w", "64").unwrap();
        cfg.set("protocol.grid_d0", "100").unwrap();
        let ok = |cfg: &RunConfig, name: &str| run_checks(cfg).into_iter().find(|c| c.name == name).unwrap().outcome;
        assert!(ok(&cfg, "stage2 settings").is_ok());
        cfg.set("stage2.d_w", "63").unwrap();
        let err = ok(&cfg, "stage2 settings").unwrap_err();
        assert!(err.contains("divisible"), "{err}");
    }

    #[test]
    fn missing_matrix_names_its_key() {
        let mut cfg = RunConfig::default();
        cfg.set("data.association", "/nonexistent/a.txt").unwrap();
        let checks = run_checks(&cfg);
        let failed: Vec<&Check> = checks.iter().filter(|c| c.outcome.is_err()).collect();
        assert!(failed
            .iter()
            .any(|c| c.outcome.as_ref().unwrap_err().contains("data.association")));
        assert!(failed
            .iter()
            .any(|c| c.outcome.as_ref().unwrap_err().contains("data.drug_similarity")));
    }
}
