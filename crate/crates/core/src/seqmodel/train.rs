use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::Stage2Config;
use super::model::{PreparedSample, Prototypes, Stage2Model};
use crate::data::{derive_seed, rng, Cell, CellSplit, Dataset, SequenceIndex};
use crate::error::{Error, Result};
use crate::numcore::{cosine_anneal, sigmoid, AdamW, AdamWConfig, Graph, Mode};

/// Cells per inference batch.
const SCORE_BATCH: usize = 256;

#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub model: Stage2Model,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl Stage2Outcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Fits a sequence model on the training cells of `split`. Each training
/// cell's sequences exclude the cell itself and every test cell.
pub fn train_stage2(
    ds: &Dataset,
    split: &CellSplit,
    prototypes: &Prototypes,
    config: &Stage2Config,
) -> Result<Stage2Outcome> {
    split.check_bounds(ds)?;
    split.ensure_trainable(ds)?;
    let mut model = Stage2Model::new(config.clone(), prototypes.clone(), ds)?;
    let index = SequenceIndex::new(ds, split)?;
    let samples: Vec<PreparedSample> = split
        .train
        .iter()
        .map(|&c| model.prepare(&index.sample(c), ds))
        .collect();
    let batch = config.batch.min(samples.len());
    let steps_per_epoch = samples.len().div_ceil(batch);
    let total = config.epochs * steps_per_epoch;
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle = rng(derive_seed(config.seed, &[1]));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let lr = cosine_anneal(config.lr, step, total, config.lr_min)?;
            let items: Vec<PreparedSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let labels: Vec<f64> = items.iter().map(|s| f64::from(s.label)).collect();
            let mut norm = std::mem::take(&mut model.norm_state);
            let grads = {
                let mut g = Graph::new(&model.store);
                let f = model.forward(&mut g, &mut norm, &items, ds, Mode::Train)?;
                let loss = g.bce_with_logits(f, &labels)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "training loss became {value} at epoch {epoch}, step {step}"
                    )));
                }
                sum += value * chunk.len() as f64;
                g.backward(loss)?
            };
            model.norm_state = norm;
            opt.step(&mut model.store, &grads, lr).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            step += 1;
        }
        epoch_losses.push(sum / samples.len() as f64);
    }
    Ok(Stage2Outcome { model, epoch_losses })
}

/// Largest representable probability below one.
const MAX_SCORE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Probability for a logit, kept strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::MIN_POSITIVE, MAX_SCORE)
}

/// Scores held-out `cells` with sequences drawn from the training side of
/// `split`. Results follow the order of `cells`.
pub fn score_cells(model: &Stage2Model, ds: &Dataset, split: &CellSplit, cells: &[Cell]) -> Result<Vec<(Cell, f64)>> {
    Ok(score_logits(model, ds, split, cells)?
        .into_iter()
        .map(|(c, z)| (c, probability(z)))
        .collect())
}

/// Like [`score_cells`] but returns raw logits, which keep their order where
/// probabilities saturate.
pub fn score_logits(model: &Stage2Model, ds: &Dataset, split: &CellSplit, cells: &[Cell]) -> Result<Vec<(Cell, f64)>> {
    let index = SequenceIndex::new(ds, split)?;
    if let Some(c) = cells.iter().find(|&&c| index.in_train(c)) {
        return Err(Error::Contract(format!(
            "cell ({}, {}) is a training cell",
            c.drug, c.disease
        )));
    }
    batch_logits(model, ds, &index, cells)
}

/// Logits for ranking: any cell except a training positive may be scored.
/// Training negatives are scored from sequences that exclude themselves.
pub fn score_candidates(
    model: &Stage2Model,
    ds: &Dataset,
    split: &CellSplit,
    cells: &[Cell],
) -> Result<Vec<(Cell, f64)>> {
    let index = SequenceIndex::new(ds, split)?;
    if let Some(c) = cells.iter().find(|&&c| index.in_train(c) && ds.is_positive(c)) {
        return Err(Error::Contract(format!(
            "cell ({}, {}) is a training positive",
            c.drug, c.disease
        )));
    }
    batch_logits(model, ds, &index, cells)
}

fn batch_logits(model: &Stage2Model, ds: &Dataset, index: &SequenceIndex, cells: &[Cell]) -> Result<Vec<(Cell, f64)>> {
    if let Some(c) = cells
        .iter()
        .find(|c| c.drug >= ds.n_drugs() || c.disease >= ds.n_diseases())
    {
        return Err(Error::Range(format!(
            "cell ({}, {}) outside the dataset",
            c.drug, c.disease
        )));
    }
    let prepared: Vec<PreparedSample> = cells.iter().map(|&c| model.prepare(&index.sample(c), ds)).collect();
    let scores = prepared
        .par_chunks(SCORE_BATCH)
        .map(|chunk| model.logits(chunk, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(cells.iter().copied().zip(scores.into_iter().flatten()).collect())
}
