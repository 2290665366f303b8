//! Sequence model: scores a drug–disease cell from the two behavior
//! sequences around it.
//!
//! Each sequence element becomes one row: the element's prototype fused with
//! its similarity to the target entity, joined with a learned embedding and
//! scaled by `exp(temperature · label)`. Drug-side and disease-side rows are
//! stacked, passed through one multi-head attention layer with residual
//! normalization and a feedforward block, flattened, framed by aligned
//! target-entity features, and fed to a feedforward head.
//!
//! The free functions below evaluate single stages for one sample; training
//! and scoring run whole batches through the same code.

mod config;
mod model;
mod train;

#[cfg(test)]
mod tests;

pub use config::{Components, Pooling, Stage2Config};
pub use model::{truncate, PackedSequence, PreparedSample, Prototypes, Stage2Model};
pub use train::{probability, score_candidates, score_cells, score_logits, train_stage2, Stage2Outcome};

use crate::data::{BehaviorSample, Cell, Dataset, Domain};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Mode, Tensor};

/// The constant vector `s·1` of extent `d0`.
pub fn sim_pad(s: f64, d0: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Range(format!("similarity {s} outside [0, 1]")));
    }
    Ok(vec![s; d0])
}

/// `h · exp(temperature · label)`.
pub fn rating_scale(h: &[f64], label: u8, temperature: f64) -> Result<Vec<f64>> {
    if label > 1 {
        return Err(Error::Validation(format!("label {label} is not binary")));
    }
    let factor = (temperature * f64::from(label)).exp();
    Ok(h.iter().map(|v| v * factor).collect())
}

/// Applies the fusion layer of `side` to `prototype ⊕ simvec`.
pub fn fuse(model: &Stage2Model, side: Domain, prototype: &[f64], simvec: &[f64]) -> Result<Vec<f64>> {
    let d0 = model.d0();
    if prototype.len() != d0 || simvec.len() != d0 {
        return Err(Error::dim("fuse", &[prototype.len(), simvec.len()], &[d0, d0]));
    }
    let layer = match side {
        Domain::Drug => model.ids.drug_fuse,
        Domain::Disease => model.ids.disease_fuse,
    };
    let mut g = Graph::new(&model.store);
    let x = g.constant(Tensor::new(vec![1, 2 * d0], [prototype, simvec].concat())?);
    let (w, b) = (g.param(layer.w), g.param(layer.b));
    let out = g.affine(x, w, b, model.config.fusion_activation)?;
    Ok(g.value(out).data().to_vec())
}

/// Sequence matrix `[2·l_max, d1]` for one sample, drug side first.
pub fn build_sequence_input(model: &Stage2Model, sample: &BehaviorSample, ds: &Dataset) -> Result<PackedSequence> {
    let prepared = model.prepare(sample, ds);
    let mut g = Graph::new(&model.store);
    let (x, mask) = model.sequence_input(&mut g, std::slice::from_ref(&prepared), ds)?;
    Ok(PackedSequence {
        x: g.value(x).clone(),
        mask,
    })
}

/// Runs the attention block over one packed sequence. Returns the output
/// rows and whether the sample took the cold path (no valid rows, output
/// all zero).
///
/// Train mode normalizes with the sequence's own statistics and leaves the
/// model's running statistics untouched.
pub fn transformer_forward(model: &Stage2Model, packed: &PackedSequence, mode: Mode) -> Result<(Tensor, bool)> {
    let (seq, d1) = (model.config.seq_len(), model.d1());
    if packed.x.shape() != [seq, d1] || packed.mask.len() != seq {
        return Err(Error::dim("transformer_forward", packed.x.shape(), &[seq, d1]));
    }
    if !packed.mask.iter().any(|&v| v) {
        return Ok((Tensor::zeros(&[seq, d1]), true));
    }
    let mut norm = model.norm_state.clone();
    let mut g = Graph::new(&model.store);
    let x = g.constant(packed.x.clone());
    let (out, _) = model.encode_sequences(&mut g, &mut norm, x, &packed.mask, mode)?;
    Ok((g.value(out).clone(), false))
}

/// Feature vector for target `(drug, disease)` from encoded sequence rows.
/// Under mean pooling, all-zero rows count as padding.
pub fn assemble(model: &Stage2Model, encoded: &Tensor, drug: usize, disease: usize) -> Result<Vec<f64>> {
    let (seq, d1) = (model.config.seq_len(), model.d1());
    if encoded.shape() != [seq, d1] {
        return Err(Error::dim("assemble", encoded.shape(), &[seq, d1]));
    }
    if drug >= model.prototypes.drug.rows() || disease >= model.prototypes.disease.rows() {
        return Err(Error::Range(format!(
            "target ({drug}, {disease}) outside the model's extents"
        )));
    }
    let valid: Vec<bool> = encoded.data().chunks(d1).map(|r| r.iter().any(|&v| v != 0.0)).collect();
    let mut g = Graph::new(&model.store);
    let o = g.constant(encoded.clone());
    let m = model.assemble_features(&mut g, o, &valid, &[Cell::new(drug, disease)])?;
    Ok(g.value(m).data().to_vec())
}

/// Raw head output for one feature vector.
pub fn predict_logit(model: &Stage2Model, features: &[f64]) -> Result<f64> {
    let width = model.head_input();
    if features.len() != width {
        return Err(Error::dim("predict_logit", &[features.len()], &[width]));
    }
    let mut g = Graph::new(&model.store);
    let m = g.constant(Tensor::new(vec![1, width], features.to_vec())?);
    let z = model.head(&mut g, m)?;
    Ok(g.value(z).item())
}

/// Association probability for one sample, in inference mode.
pub fn forward_sample(model: &Stage2Model, sample: &BehaviorSample, ds: &Dataset) -> Result<f64> {
    let prepared = model.prepare(sample, ds);
    Ok(probability(model.logits(std::slice::from_ref(&prepared), ds)?[0]))
}
