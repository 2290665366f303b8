use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use super::metrics::{auprc, auroc, ScoredSet};
use super::report::{Aggregate, Experiment, ExperimentReport, UnitEntry, UnitScores};
use crate::data::{coldstart_split, cv_split, derive_seed, rng, sparsify, split_folds, Cell, CellSplit, Dataset};
use crate::error::{Error, Result};
use crate::proto::{train_encoders, Stage1Config};
use crate::seqmodel::{
    probability, score_candidates, score_logits, train_stage2, Prototypes, Stage2Config, Stage2Model,
};
use crate::settings::Settings;

/// Stream tag separating cold-start model seeds from fold seeds.
const COLDSTART_STREAM: u64 = 0xC01D;
/// Stream tag for the sparsification draw.
const SPARSE_STREAM: u64 = 0x5BA5;

/// Everything a protocol needs besides the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// Seed of every split and sampling step.
    pub seed: u64,
    pub folds: usize,
}

impl RunSpec {
    pub fn new(stage1: Stage1Config, stage2: Stage2Config, seed: u64) -> Self {
        Self {
            stage1,
            stage2,
            seed,
            folds: crate::data::DEFAULT_FOLDS,
        }
    }

    fn snapshot(&self, extra: &[(&str, String)]) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("folds".to_string(), self.folds.to_string()),
        ];
        out.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        out.extend(
            self.stage1
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("stage1.{k}"), v)),
        );
        out.extend(
            self.stage2
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("stage2.{k}"), v)),
        );
        out
    }

    fn plan_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.seed, &[repeat as u64])
    }
}

/// Model seed of one fold of one repeat.
pub fn fold_model_seed(stage2_seed: u64, repeat: usize, fold: usize) -> u64 {
    derive_seed(stage2_seed, &[repeat as u64, fold as u64])
}

/// Fits both prototype encoders and encodes every entity.
pub fn train_prototypes(ds: &Dataset, stage1: &Stage1Config) -> Result<Prototypes> {
    let (drug, disease) = train_encoders(ds, stage1)?;
    Prototypes::from_encoders(ds, &drug.encoder, &disease.encoder)
}

/// Trains on `split` and scores its test side with a model seeded by `seed`.
pub fn evaluate_split(
    ds: &Dataset,
    split: &CellSplit,
    prototypes: &Prototypes,
    stage2: &Stage2Config,
    seed: u64,
) -> Result<(Stage2Model, ScoredSet)> {
    let config = Stage2Config { seed, ..stage2.clone() };
    let model = train_stage2(ds, split, prototypes, &config)?.model;
    let set = scored(ds, &score_logits(&model, ds, split, &split.test)?)?;
    Ok((model, set))
}

fn scored(ds: &Dataset, logits: &[(Cell, f64)]) -> Result<ScoredSet> {
    ScoredSet::new(
        logits.iter().map(|&(_, z)| z).collect(),
        logits.iter().map(|&(c, _)| ds.label(c)).collect(),
    )
}

fn unit(key: Vec<(String, String)>, set: &ScoredSet) -> Result<UnitEntry> {
    Ok(UnitEntry {
        key,
        positives: set.positives(),
        negatives: set.negatives(),
        auroc: auroc(set)?,
        auprc: auprc(set)?,
    })
}

fn field(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Repeated k-fold cross-validation. Prototypes are shared by every fold.
pub fn run_cv(ds: &Dataset, spec: &RunSpec, prototypes: &Prototypes, repeats: usize) -> Result<Experiment> {
    if repeats == 0 {
        return Err(Error::Validation("cross-validation needs at least one repeat".into()));
    }
    run_cv_folds(ds, spec, prototypes, repeats, None)
}

/// Like [`run_cv`] with the rotation restricted to the listed folds.
pub fn run_cv_folds(
    ds: &Dataset,
    spec: &RunSpec,
    prototypes: &Prototypes,
    repeats: usize,
    only: Option<&[usize]>,
) -> Result<Experiment> {
    let start = Instant::now();
    let plans = (0..repeats)
        .map(|r| split_folds(ds, spec.folds, spec.plan_seed(r)))
        .collect::<Result<Vec<_>>>()?;
    let folds: Vec<usize> = match only {
        Some(list) => list.to_vec(),
        None => (0..spec.folds).collect(),
    };
    let jobs: Vec<(usize, usize)> = (0..repeats).flat_map(|r| folds.iter().map(move |&f| (r, f))).collect();
    let results = jobs
        .par_iter()
        .map(|&(r, f)| {
            let split = cv_split(&plans[r], f)?;
            let (_, set) = evaluate_split(
                ds,
                &split,
                prototypes,
                &spec.stage2,
                fold_model_seed(spec.stage2.seed, r, f),
            )?;
            let entry = unit(vec![field("repeat", r), field("fold", f)], &set)?;
            Ok((entry, set))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new(
        "cv",
        spec.snapshot(&[("repeats", repeats.to_string())]),
        plans.iter().map(|p| p.seed).collect(),
    );
    let mut scores = Vec::new();
    for (entry, set) in results {
        scores.push(UnitScores {
            label: entry.label(),
            set,
        });
        report.units.push(entry);
    }
    report.aggregates.push(Aggregate::over("overall", &report.units));
    let mut repeat_auroc = Vec::new();
    let mut repeat_auprc = Vec::new();
    for r in 0..repeats {
        let tag = r.to_string();
        let agg = Aggregate::over(
            format!("repeat={r}"),
            report.units.iter().filter(|u| u.field("repeat") == Some(tag.as_str())),
        );
        repeat_auroc.push(agg.auroc.mean);
        repeat_auprc.push(agg.auprc.mean);
        report.aggregates.push(agg);
    }
    report
        .aggregates
        .push(Aggregate::of_values("repeat_means", &repeat_auroc, &repeat_auprc));
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(Experiment { report, scores })
}

/// `count` distinct drugs with at least one association, in ascending order.
pub fn select_drugs(ds: &Dataset, count: usize, seed: u64) -> Vec<usize> {
    let eligible: Vec<usize> = (0..ds.n_drugs()).filter(|&d| ds.row_positives(d) > 0).collect();
    if count >= eligible.len() {
        return eligible;
    }
    let mut picked: Vec<usize> = index::sample(&mut rng(seed), eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Holds out each listed drug's whole row in turn. Reports the per-drug mean
/// and the metrics of all held-out scores pooled.
pub fn run_coldstart(ds: &Dataset, spec: &RunSpec, prototypes: &Prototypes, drugs: &[usize]) -> Result<Experiment> {
    let start = Instant::now();
    if drugs.is_empty() {
        return Err(Error::Validation("cold start needs at least one drug".into()));
    }
    if let Some(&d) = drugs.iter().find(|&&d| d >= ds.n_drugs()) {
        return Err(Error::Range(format!("drug {d} outside 0..{}", ds.n_drugs())));
    }
    enum Outcome {
        Scored(UnitEntry, ScoredSet),
        Excluded(String, String),
    }
    let results = drugs
        .par_iter()
        .map(|&d| -> Result<Outcome> {
            let label = format!("drug={d}");
            if ds.row_positives(d) == ds.n_diseases() {
                return Ok(Outcome::Excluded(label, "single_class".into()));
            }
            let split = match coldstart_split(ds, d, derive_seed(spec.seed, &[COLDSTART_STREAM, d as u64]))? {
                Some(s) => s,
                None => return Ok(Outcome::Excluded(label, "no_positives".into())),
            };
            let seed = derive_seed(spec.stage2.seed, &[COLDSTART_STREAM, d as u64]);
            let (_, set) = evaluate_split(ds, &split, prototypes, &spec.stage2, seed)?;
            let entry = unit(vec![field("drug", d), field("id", &ds.drug_ids()[d])], &set)?;
            Ok(Outcome::Scored(entry, set))
        })
        .collect::<Result<Vec<_>>>()?;
    let drug_list: Vec<String> = drugs.iter().map(usize::to_string).collect();
    let mut report = ExperimentReport::new(
        "coldstart",
        spec.snapshot(&[("drugs", drug_list.join(","))]),
        vec![spec.seed],
    );
    let mut scores = Vec::new();
    let mut pooled = ScoredSet::default();
    let mut rates = Vec::new();
    for r in results {
        match r {
            Outcome::Scored(entry, set) => {
                pooled.extend(&set);
                rates.push(set.positives() as f64 / set.len() as f64);
                scores.push(UnitScores {
                    label: entry.label(),
                    set,
                });
                report.units.push(entry);
            }
            Outcome::Excluded(label, reason) => report.excluded.push((label, reason)),
        }
    }
    report.aggregates.push(Aggregate::over("per_drug", &report.units));
    report.extras.push(("excluded".into(), report.excluded.len() as f64));
    if !report.units.is_empty() {
        report.extras.push(("pooled_auroc".into(), auroc(&pooled)?));
        report.extras.push(("pooled_auprc".into(), auprc(&pooled)?));
        report.extras.push((
            "mean_positive_rate".into(),
            rates.iter().sum::<f64>() / rates.len() as f64,
        ));
    }
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(Experiment { report, scores })
}

/// Retrains on fold 0 of the first repeat with only a fraction λ of its
/// training positives, evaluating on the untouched test fold.
pub fn run_sparse(ds: &Dataset, spec: &RunSpec, prototypes: &Prototypes, lambdas: &[f64]) -> Result<Experiment> {
    let start = Instant::now();
    if lambdas.is_empty() {
        return Err(Error::Validation("sparsity run needs at least one lambda".into()));
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::Range(format!("lambda {l} outside (0, 1]")));
    }
    let plan = split_folds(ds, spec.folds, spec.plan_seed(0))?;
    let base = cv_split(&plan, 0)?;
    let model_seed = fold_model_seed(spec.stage2.seed, 0, 0);
    let results = lambdas
        .par_iter()
        .map(|&l| {
            let split = sparsify(ds, &base, l, derive_seed(spec.seed, &[SPARSE_STREAM, l.to_bits()]))?;
            let (_, set) = evaluate_split(ds, &split, prototypes, &spec.stage2, model_seed)?;
            Ok((unit(vec![field("lambda", l)], &set)?, set))
        })
        .collect::<Result<Vec<_>>>()?;
    let list: Vec<String> = lambdas.iter().map(f64::to_string).collect();
    let mut report = ExperimentReport::new("sparse", spec.snapshot(&[("lambdas", list.join(","))]), vec![plan.seed]);
    let mut scores = Vec::new();
    for (entry, set) in results {
        scores.push(UnitScores {
            label: entry.label(),
            set,
        });
        report.units.push(entry);
    }
    report.aggregates.push(Aggregate::over("overall", &report.units));
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(Experiment { report, scores })
}

/// One fold-0 evaluation per `(d0, temperature)` grid point. Prototypes are
/// trained once per `d0`; `known` is reused where its extent matches.
pub fn sweep(
    ds: &Dataset,
    spec: &RunSpec,
    d0s: &[usize],
    temperatures: &[f64],
    known: Option<&Prototypes>,
) -> Result<Experiment> {
    let start = Instant::now();
    if d0s.is_empty() || temperatures.is_empty() {
        return Err(Error::Validation("sweep grid is empty".into()));
    }
    let mut distinct: Vec<usize> = d0s.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for &d0 in &distinct {
        spec.stage2.validate_for(d0)?;
    }
    let trained = distinct
        .par_iter()
        .map(|&d0| match known {
            Some(p) if p.d0() == d0 => Ok((d0, p.clone())),
            _ => {
                let stage1 = Stage1Config {
                    d0,
                    ..spec.stage1.clone()
                };
                Ok((d0, train_prototypes(ds, &stage1)?))
            }
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let plan = split_folds(ds, spec.folds, spec.plan_seed(0))?;
    let split = cv_split(&plan, 0)?;
    let model_seed = fold_model_seed(spec.stage2.seed, 0, 0);
    let grid: Vec<(usize, f64)> = d0s
        .iter()
        .flat_map(|&d| temperatures.iter().map(move |&t| (d, t)))
        .collect();
    let results = grid
        .par_iter()
        .map(|&(d0, t)| {
            let stage2 = Stage2Config {
                temperature: t,
                ..spec.stage2.clone()
            };
            let (_, set) = evaluate_split(ds, &split, &trained[&d0], &stage2, model_seed)?;
            Ok((unit(vec![field("d0", d0), field("temperature", t)], &set)?, set))
        })
        .collect::<Result<Vec<_>>>()?;
    let d_list: Vec<String> = d0s.iter().map(usize::to_string).collect();
    let t_list: Vec<String> = temperatures.iter().map(f64::to_string).collect();
    let mut report = ExperimentReport::new(
        "sweep",
        spec.snapshot(&[("grid.d0", d_list.join(",")), ("grid.temperature", t_list.join(","))]),
        vec![plan.seed],
    );
    let mut scores = Vec::new();
    for (entry, set) in results {
        scores.push(UnitScores {
            label: entry.label(),
            set,
        });
        report.units.push(entry);
    }
    report.aggregates.push(Aggregate::over("overall", &report.units));
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(Experiment { report, scores })
}

/// Metric surface of a sweep as `d0 temperature auroc auprc` rows.
pub fn surface_text(report: &ExperimentReport) -> String {
    let mut out = String::from("# d0 temperature auroc auprc\n");
    for u in &report.units {
        out.push_str(&format!(
            "{} {} {} {}\n",
            u.field("d0").unwrap_or("-"),
            u.field("temperature").unwrap_or("-"),
            u.auroc,
            u.auprc
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedDrug {
    pub drug: usize,
    pub id: String,
    pub logit: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub disease: usize,
    pub entries: Vec<RankedDrug>,
    /// Set when fewer candidates existed than were requested.
    pub truncated: bool,
}

impl Ranking {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{} {} {} {}\n", i + 1, e.drug, e.id, e.score))
            .collect()
    }
}

/// Top `k` drugs for `disease` among cells that are not training positives,
/// by descending score with ties going to the lower drug index.
pub fn rank_candidates(
    model: &Stage2Model,
    ds: &Dataset,
    split: &CellSplit,
    disease: usize,
    k: usize,
) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    if disease >= ds.n_diseases() {
        return Err(Error::Range(format!(
            "disease {disease} outside 0..{}",
            ds.n_diseases()
        )));
    }
    let train: std::collections::BTreeSet<Cell> = split.train.iter().copied().collect();
    let cells: Vec<Cell> = (0..ds.n_drugs())
        .map(|d| Cell::new(d, disease))
        .filter(|c| !(train.contains(c) && ds.is_positive(*c)))
        .collect();
    let mut scored = score_candidates(model, ds, split, &cells)?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.drug.cmp(&b.0.drug)));
    let truncated = k > scored.len();
    let entries = scored
        .into_iter()
        .take(k)
        .map(|(c, z)| RankedDrug {
            drug: c.drug,
            id: ds.drug_ids()[c.drug].clone(),
            logit: z,
            score: probability(z),
        })
        .collect();
    Ok(Ranking {
        disease,
        entries,
        truncated,
    })
}
