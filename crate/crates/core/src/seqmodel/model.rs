use std::cmp::Ordering;

use rand_chacha::ChaCha8Rng;

use super::config::{Pooling, Stage2Config};
use crate::data::{BehaviorSample, Cell, Dataset, Domain};
use crate::error::{Error, Result};
use crate::numcore::{
    glorot, he, normal, Activation, BatchNormState, Checkpoint, Gradients, Graph, Mode, NodeId, ParamId, ParamStore,
    Tensor,
};
use crate::proto::PrototypeEncoder;
use crate::settings::Settings;

/// Frozen prototype tables for both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub drug: Tensor,
    pub disease: Tensor,
}

impl Prototypes {
    pub fn from_encoders(ds: &Dataset, drug: &PrototypeEncoder, disease: &PrototypeEncoder) -> Result<Self> {
        if drug.domain() != Domain::Drug || disease.domain() != Domain::Disease {
            return Err(Error::Contract("encoders passed for the wrong domains".into()));
        }
        if drug.d0() != disease.d0() {
            return Err(Error::Contract(format!(
                "drug and disease prototypes differ in extent ({} vs {})",
                drug.d0(),
                disease.d0()
            )));
        }
        Ok(Self {
            drug: drug.prototypes(ds)?,
            disease: disease.prototypes(ds)?,
        })
    }

    pub fn d0(&self) -> usize {
        self.drug.cols()
    }

    fn table(&self, domain: Domain) -> &Tensor {
        match domain {
            Domain::Drug => &self.drug,
            Domain::Disease => &self.disease,
        }
    }
}

/// A sample after truncation to the model's per-side length limit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedSample {
    pub target: Cell,
    /// `(disease, label)` elements of the drug's history.
    pub drug_side: Vec<(usize, u8)>,
    /// `(drug, label)` elements of the disease's history.
    pub disease_side: Vec<(usize, u8)>,
    pub label: u8,
}

/// Sequence matrix of one sample plus its row validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSequence {
    pub x: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub drug_embed: ParamId,
    pub disease_embed: ParamId,
    pub drug_fuse: Dense,
    pub disease_fuse: Dense,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm: [(ParamId, ParamId); 2],
    pub ffn: [Dense; 2],
    pub drug_align: Dense,
    pub disease_align: Dense,
    pub head: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct Stage2Model {
    pub(crate) config: Stage2Config,
    pub(crate) prototypes: Prototypes,
    pub(crate) fingerprint: String,
    pub(crate) store: ParamStore,
    pub(crate) ids: ParamIds,
    pub(crate) norm_state: Vec<BatchNormState>,
}

impl Stage2Model {
    /// Fresh model for `ds` with randomly initialised parameters.
    pub fn new(config: Stage2Config, prototypes: Prototypes, ds: &Dataset) -> Result<Self> {
        let d0 = prototypes.d0();
        config.validate_for(d0)?;
        if prototypes.drug.shape() != [ds.n_drugs(), d0] || prototypes.disease.shape() != [ds.n_diseases(), d0] {
            return Err(Error::dim(
                "prototypes",
                prototypes.drug.shape(),
                prototypes.disease.shape(),
            ));
        }
        let d1 = config.d1(d0);
        let mut rng = crate::data::rng(config.seed);
        let mut store = ParamStore::new();
        let decay_embed = config.decay_embeddings;
        let drug_embed = store.add(
            "embed.drug",
            normal(&mut rng, &[ds.n_drugs(), config.d_w], 0.1),
            decay_embed,
        );
        let disease_embed = store.add(
            "embed.disease",
            normal(&mut rng, &[ds.n_diseases(), config.d_w], 0.1),
            decay_embed,
        );
        let fuse_relu = config.fusion_activation == Activation::Relu;
        let drug_fuse = dense(&mut store, &mut rng, "fuse.drug", 2 * d0, d0, fuse_relu);
        let disease_fuse = dense(&mut store, &mut rng, "fuse.disease", 2 * d0, d0, fuse_relu);
        let mut square = |store: &mut ParamStore, name: &str| store.add(name, glorot(&mut rng, d1, d1), true);
        let wq = square(&mut store, "attn.query");
        let wk = square(&mut store, "attn.key");
        let wv = square(&mut store, "attn.value");
        let wo = square(&mut store, "attn.output");
        let norm_pair = |store: &mut ParamStore, name: &str| {
            (
                store.add(format!("{name}.gamma"), Tensor::filled(&[d1], 1.0), false),
                store.add(format!("{name}.beta"), Tensor::zeros(&[d1]), false),
            )
        };
        let norm = [norm_pair(&mut store, "norm0"), norm_pair(&mut store, "norm1")];
        let ffn = [
            dense(&mut store, &mut rng, "ffn0", d1, d1, true),
            dense(&mut store, &mut rng, "ffn1", d1, d1, false),
        ];
        let drug_align = dense(&mut store, &mut rng, "align.drug", d0 + config.d_w, d1, true);
        let disease_align = dense(&mut store, &mut rng, "align.disease", d0 + config.d_w, d1, true);
        let mut widths = vec![head_input(&config, d1)];
        widths.extend(&config.head_hidden);
        widths.push(1);
        let last = widths.len() - 2;
        let head = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| dense(&mut store, &mut rng, &format!("head{l}"), w[0], w[1], l != last))
            .collect();
        Ok(Self {
            norm_state: vec![BatchNormState::new(d1), BatchNormState::new(d1)],
            config,
            prototypes,
            fingerprint: ds.fingerprint(),
            store,
            ids: ParamIds {
                drug_embed,
                disease_embed,
                drug_fuse,
                disease_fuse,
                wq,
                wk,
                wv,
                wo,
                norm,
                ffn,
                drug_align,
                disease_align,
                head,
            },
        })
    }

    pub fn config(&self) -> &Stage2Config {
        &self.config
    }

    pub fn d0(&self) -> usize {
        self.prototypes.d0()
    }

    pub fn d1(&self) -> usize {
        self.config.d1(self.d0())
    }

    pub fn head_input(&self) -> usize {
        head_input(&self.config, self.d1())
    }

    pub fn prototypes(&self) -> &Prototypes {
        &self.prototypes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn norm_state(&self) -> &[BatchNormState] {
        &self.norm_state
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.store.id(name)
    }

    /// Errors unless the model was built for a dataset of this shape.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.fingerprint() != self.fingerprint {
            return Err(Error::Checkpoint(format!(
                "model was trained on a {} dataset, got {}",
                self.fingerprint,
                ds.fingerprint()
            )));
        }
        Ok(())
    }

    /// Truncates both histories of `sample` to the per-side limit, keeping
    /// the elements most similar to the target and restoring index order.
    pub fn prepare(&self, sample: &BehaviorSample, ds: &Dataset) -> PreparedSample {
        let c = &self.config.components;
        let l_max = self.config.l_max;
        let drug_side = if c.drug_side {
            truncate(&sample.drug_seq, l_max, |j| ds.disease_similarity(sample.disease, j))
        } else {
            Vec::new()
        };
        let disease_side = if c.disease_side {
            truncate(&sample.disease_seq, l_max, |i| ds.drug_similarity(sample.drug, i))
        } else {
            Vec::new()
        };
        PreparedSample {
            target: sample.target(),
            drug_side,
            disease_side,
            label: sample.label,
        }
    }

    fn dense(&self, g: &mut Graph<'_>, x: NodeId, d: Dense, act: Activation) -> Result<NodeId> {
        let (w, b) = (g.param(d.w), g.param(d.b));
        g.affine(x, w, b, act)
    }

    /// Rows of one half of the sequence matrix, `[B·l_max, d1]`.
    ///
    /// `side` names whose history is encoded: the drug side holds diseases,
    /// scored against the target disease, and vice versa.
    pub(crate) fn side_rows(
        &self,
        g: &mut Graph<'_>,
        side: Domain,
        batch: &[PreparedSample],
        ds: &Dataset,
    ) -> Result<(NodeId, Vec<bool>)> {
        let d0 = self.d0();
        let l = self.config.l_max;
        let c = &self.config.components;
        let (element_domain, embed, fuse) = match side {
            Domain::Drug => (Domain::Disease, self.ids.disease_embed, self.ids.drug_fuse),
            Domain::Disease => (Domain::Drug, self.ids.drug_embed, self.ids.disease_fuse),
        };
        let protos = self.prototypes.table(element_domain);
        let rows = batch.len() * l;
        let mut input = vec![0.0; rows * 2 * d0];
        let mut index = vec![0usize; rows];
        let mut factor = vec![0.0; rows];
        let mut valid = vec![false; rows];
        for (b, s) in batch.iter().enumerate() {
            let seq = match side {
                Domain::Drug => &s.drug_side,
                Domain::Disease => &s.disease_side,
            };
            for (p, &(e, label)) in seq.iter().enumerate() {
                let r = b * l + p;
                let sim = match side {
                    Domain::Drug => ds.disease_similarity(s.target.disease, e),
                    Domain::Disease => ds.drug_similarity(s.target.drug, e),
                };
                let dst = &mut input[r * 2 * d0..(r + 1) * 2 * d0];
                if c.prototypes {
                    dst[..d0].copy_from_slice(protos.row(e));
                }
                if c.sim_fusion {
                    dst[d0..].fill(sim);
                }
                index[r] = e;
                factor[r] = (self.config.temperature * f64::from(label)).exp();
                valid[r] = true;
            }
        }
        let x = g.constant(Tensor::new(vec![rows, 2 * d0], input)?);
        let fused = self.dense(g, x, fuse, self.config.fusion_activation)?;
        let table = g.param(embed);
        let emb = g.gather_rows(table, index)?;
        let cat = g.concat_cols(&[fused, emb])?;
        Ok((g.scale_rows(cat, factor)?, valid))
    }

    /// Sequence matrix for a batch, `[B·2·l_max, d1]` with each sample's
    /// drug-side rows ahead of its disease-side rows.
    pub(crate) fn sequence_input(
        &self,
        g: &mut Graph<'_>,
        batch: &[PreparedSample],
        ds: &Dataset,
    ) -> Result<(NodeId, Vec<bool>)> {
        let (l, d1, n) = (self.config.l_max, self.d1(), batch.len());
        let (drug, drug_valid) = self.side_rows(g, Domain::Drug, batch, ds)?;
        let (disease, disease_valid) = self.side_rows(g, Domain::Disease, batch, ds)?;
        let drug = g.reshape(drug, &[n, l * d1])?;
        let disease = g.reshape(disease, &[n, l * d1])?;
        let joined = g.concat_cols(&[drug, disease])?;
        let x = g.reshape(joined, &[n * 2 * l, d1])?;
        let mut valid = Vec::with_capacity(n * 2 * l);
        for b in 0..n {
            valid.extend_from_slice(&drug_valid[b * l..(b + 1) * l]);
            valid.extend_from_slice(&disease_valid[b * l..(b + 1) * l]);
        }
        Ok((x, valid))
    }

    /// Attention, residual and normalization layers over `[B·L, d1]`.
    /// Returns the output and, when attention ran, the attention weights.
    pub(crate) fn encode_sequences(
        &self,
        g: &mut Graph<'_>,
        norm: &mut [BatchNormState],
        x: NodeId,
        valid: &[bool],
        mode: Mode,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let d1 = self.d1();
        let seq = self.config.seq_len();
        let n = valid.len() / seq;
        let mut attention = None;
        let residual = if self.config.components.attention {
            let heads = self.config.heads;
            let dk = d1 / heads;
            let split_heads = |g: &mut Graph<'_>, w: ParamId| -> Result<NodeId> {
                let w = g.param(w);
                let h = g.matmul(x, w)?;
                let h = g.reshape(h, &[n, seq, heads, dk])?;
                let h = g.swap_middle(h, [n, seq, heads, dk])?;
                g.reshape(h, &[n * heads, seq, dk])
            };
            let q = split_heads(g, self.ids.wq)?;
            let k = split_heads(g, self.ids.wk)?;
            let v = split_heads(g, self.ids.wv)?;
            let logits = g.batch_matmul(q, k, true)?;
            let logits = g.scale(logits, 1.0 / (dk as f64).sqrt());
            let mut mask = vec![0.0; n * heads * seq * seq];
            for b in 0..n {
                let keys = &valid[b * seq..(b + 1) * seq];
                // a sample with no history attends over its own zero rows
                if !keys.iter().any(|&v| v) {
                    continue;
                }
                for h in 0..heads {
                    let block = &mut mask[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                    for row in block.chunks_mut(seq) {
                        for (m, &ok) in row.iter_mut().zip(keys) {
                            if !ok {
                                *m = f64::NEG_INFINITY;
                            }
                        }
                    }
                }
            }
            let logits = g.add_const(logits, &Tensor::new(vec![n * heads, seq, seq], mask)?)?;
            let weights = g.softmax(logits)?;
            attention = Some(weights);
            let mixed = g.batch_matmul(weights, v, false)?;
            let mixed = g.reshape(mixed, &[n, heads, seq, dk])?;
            let mixed = g.swap_middle(mixed, [n, heads, seq, dk])?;
            let mixed = g.reshape(mixed, &[n * seq, d1])?;
            let wo = g.param(self.ids.wo);
            let out = g.matmul(mixed, wo)?;
            g.add(x, out)?
        } else {
            x
        };
        let count = valid.iter().filter(|&&v| v).count();
        let mode = if mode == Mode::Train && count < 2 {
            Mode::Inference
        } else {
            mode
        };
        let [(g0, b0), (g1, b1)] = self.ids.norm;
        let (g0, b0) = (g.param(g0), g.param(b0));
        let o = g.batch_norm(residual, g0, b0, &mut norm[0], mode, Some(valid))?;
        let f = self.dense(g, o, self.ids.ffn[0], Activation::Relu)?;
        let f = self.dense(g, f, self.ids.ffn[1], Activation::None)?;
        let residual = g.add(o, f)?;
        let (g1, b1) = (g.param(g1), g.param(b1));
        let out = g.batch_norm(residual, g1, b1, &mut norm[1], mode, Some(valid))?;
        Ok((out, attention))
    }

    /// Feature vector per sample: aligned drug features, pooled sequence
    /// features, aligned disease features.
    pub(crate) fn assemble_features(
        &self,
        g: &mut Graph<'_>,
        encoded: NodeId,
        valid: &[bool],
        targets: &[Cell],
    ) -> Result<NodeId> {
        let n = targets.len();
        let (d1, seq) = (self.d1(), self.config.seq_len());
        let drug = self.align(g, Domain::Drug, targets.iter().map(|c| c.drug).collect())?;
        let disease = self.align(g, Domain::Disease, targets.iter().map(|c| c.disease).collect())?;
        let pooled = match self.config.pooling {
            Pooling::Flatten => g.reshape(encoded, &[n, seq * d1])?,
            Pooling::Mean => {
                let mut pool = vec![0.0; n * n * seq];
                for b in 0..n {
                    let rows = &valid[b * seq..(b + 1) * seq];
                    let count = rows.iter().filter(|&&v| v).count();
                    for (p, &ok) in rows.iter().enumerate() {
                        if ok {
                            pool[b * n * seq + b * seq + p] = 1.0 / count as f64;
                        }
                    }
                }
                let pool = g.constant(Tensor::new(vec![n, n * seq], pool)?);
                g.matmul(pool, encoded)?
            }
        };
        g.concat_cols(&[drug, pooled, disease])
    }

    fn align(&self, g: &mut Graph<'_>, domain: Domain, indices: Vec<usize>) -> Result<NodeId> {
        let d0 = self.d0();
        let (table, embed, layer) = match domain {
            Domain::Drug => (&self.prototypes.drug, self.ids.drug_embed, self.ids.drug_align),
            Domain::Disease => (&self.prototypes.disease, self.ids.disease_embed, self.ids.disease_align),
        };
        let mut protos = vec![0.0; indices.len() * d0];
        if self.config.components.prototypes {
            for (dst, &i) in protos.chunks_mut(d0).zip(&indices) {
                dst.copy_from_slice(table.row(i));
            }
        }
        let protos = g.constant(Tensor::new(vec![indices.len(), d0], protos)?);
        let table = g.param(embed);
        let emb = g.gather_rows(table, indices)?;
        let cat = g.concat_cols(&[protos, emb])?;
        self.dense(g, cat, layer, Activation::Relu)
    }

    /// Prediction head; returns `[B, 1]` logits.
    pub(crate) fn head(&self, g: &mut Graph<'_>, features: NodeId) -> Result<NodeId> {
        let mut h = features;
        let last = self.ids.head.len() - 1;
        for (l, &layer) in self.ids.head.iter().enumerate() {
            let act = if l == last { Activation::None } else { Activation::Relu };
            h = self.dense(g, h, layer, act)?;
        }
        Ok(h)
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph<'_>,
        norm: &mut [BatchNormState],
        batch: &[PreparedSample],
        ds: &Dataset,
        mode: Mode,
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if ds.n_drugs() != self.prototypes.drug.rows() || ds.n_diseases() != self.prototypes.disease.rows() {
            return Err(Error::dim(
                "dataset",
                &[ds.n_drugs(), ds.n_diseases()],
                &[self.prototypes.drug.rows(), self.prototypes.disease.rows()],
            ));
        }
        let (x, valid) = self.sequence_input(g, batch, ds)?;
        let (encoded, _) = self.encode_sequences(g, norm, x, &valid, mode)?;
        let targets: Vec<Cell> = batch.iter().map(|s| s.target).collect();
        let features = self.assemble_features(g, encoded, &valid, &targets)?;
        self.head(g, features)
    }

    /// Logits for a batch in inference mode.
    pub fn logits(&self, batch: &[PreparedSample], ds: &Dataset) -> Result<Vec<f64>> {
        let mut norm = self.norm_state.clone();
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, &mut norm, batch, ds, Mode::Inference)?;
        Ok(g.value(f).data().to_vec())
    }

    /// Mean training-mode loss of a labelled batch with its parameter
    /// gradients. Running statistics are left untouched.
    pub fn batch_loss_gradients(&self, batch: &[PreparedSample], ds: &Dataset) -> Result<(f64, Gradients)> {
        let labels: Vec<f64> = batch.iter().map(|s| f64::from(s.label)).collect();
        let mut norm = self.norm_state.clone();
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, &mut norm, batch, ds, Mode::Train)?;
        let loss = g.bce_with_logits(f, &labels)?;
        Ok((g.value(loss).item(), g.backward(loss)?))
    }

    /// Loss half of [`Self::batch_loss_gradients`].
    pub fn batch_loss(&self, batch: &[PreparedSample], ds: &Dataset) -> Result<f64> {
        let labels: Vec<f64> = batch.iter().map(|s| f64::from(s.label)).collect();
        let mut norm = self.norm_state.clone();
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, &mut norm, batch, ds, Mode::Train)?;
        let loss = g.bce_with_logits(f, &labels)?;
        Ok(g.value(loss).item())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::with_params(&self.store);
        ck.set_meta("kind", "stage2_model");
        ck.set_meta("fingerprint", &self.fingerprint);
        for (k, v) in self.config.entries() {
            ck.set_meta(format!("config.{k}"), v);
        }
        ck.push("prototypes.drug", self.prototypes.drug.clone());
        ck.push("prototypes.disease", self.prototypes.disease.clone());
        for (i, s) in self.norm_state.iter().enumerate() {
            ck.push(format!("norm{i}.running_mean"), Tensor::vector(s.running_mean.clone()));
            ck.push(format!("norm{i}.running_var"), Tensor::vector(s.running_var.clone()));
        }
        ck
    }

    /// Rebuilds a model from a checkpoint, checking it against `ds`.
    pub fn from_checkpoint(ck: &Checkpoint, ds: &Dataset) -> Result<Self> {
        if ck.meta("kind")? != "stage2_model" {
            return Err(Error::Checkpoint("not a sequence model checkpoint".into()));
        }
        let fingerprint = ck.meta("fingerprint")?;
        if fingerprint != ds.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "model was trained on a {fingerprint} dataset, got {}",
                ds.fingerprint()
            )));
        }
        let mut config = Stage2Config::default();
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config
                    .set(key, v)
                    .map_err(|e| Error::Checkpoint(format!("bad stored config: {e}")))?;
            }
        }
        let prototypes = Prototypes {
            drug: ck.tensor("prototypes.drug")?.clone(),
            disease: ck.tensor("prototypes.disease")?.clone(),
        };
        let mut model = Self::new(config, prototypes, ds)?;
        let mut params = Checkpoint::new();
        params.tensors = ck
            .tensors
            .iter()
            .filter(|(n, _)| model.store.id(n).is_some())
            .cloned()
            .collect();
        params.restore(&mut model.store)?;
        let d1 = model.d1();
        for (i, s) in model.norm_state.iter_mut().enumerate() {
            let mean = ck.tensor(&format!("norm{i}.running_mean"))?;
            let var = ck.tensor(&format!("norm{i}.running_var"))?;
            if mean.len() != d1 || var.len() != d1 {
                return Err(Error::Checkpoint(format!("norm{i} statistics have the wrong extent")));
            }
            s.running_mean = mean.data().to_vec();
            s.running_var = var.data().to_vec();
        }
        Ok(model)
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(dir)
    }

    pub fn load(dir: &std::path::Path, ds: &Dataset) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?, ds)
    }
}

fn dense(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, relu: bool) -> Dense {
    let w = if relu {
        he(rng, fan_in, fan_out)
    } else {
        glorot(rng, fan_in, fan_out)
    };
    Dense {
        w: store.add(format!("{name}.weight"), w, true),
        b: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), false),
    }
}

fn head_input(config: &Stage2Config, d1: usize) -> usize {
    match config.pooling {
        Pooling::Flatten => d1 * (2 + config.seq_len()),
        Pooling::Mean => 3 * d1,
    }
}

/// Keeps the `limit` elements with the highest similarity (ties to the lower
/// index), returned in ascending index order.
pub fn truncate(seq: &[(usize, u8)], limit: usize, sim: impl Fn(usize) -> f64) -> Vec<(usize, u8)> {
    if seq.len() <= limit {
        return seq.to_vec();
    }
    let mut ranked: Vec<(usize, u8)> = seq.to_vec();
    ranked.sort_by(|a, b| {
        sim(b.0)
            .partial_cmp(&sim(a.0))
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(limit);
    ranked.sort_unstable_by_key(|e| e.0);
    ranked
}
