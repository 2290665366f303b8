//! Prototype encoders: feedforward maps from a similarity row to a dense
//! prototype, fitted so that prototype cosines reproduce the similarity
//! matrix.

use rand::seq::SliceRandom;

use crate::data::{derive_seed, rng, Dataset, Domain};
use crate::error::{Error, Result};
use crate::numcore::{
    cosine_anneal, glorot, he, Activation, AdamW, AdamWConfig, Checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor,
};
use crate::settings::{join_list, parse, parse_list, unknown_key, Settings};

/// Norm shift applied inside the training cosine.
pub const NORM_GUARD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub d0: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Index pairs per optimizer step; 0 uses every pair in one step.
    pub pair_batch: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            d0: 1024,
            hidden: vec![1024],
            lr: 0.01,
            lr_min: 0.0,
            weight_decay: 0.01,
            epochs: 300,
            pair_batch: 4096,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Error::Config {
            key: key.to_string(),
            message,
        };
        if self.d0 < 2 {
            return Err(bad("stage1.d0", format!("must be at least 2, got {}", self.d0)));
        }
        if self.hidden.contains(&0) {
            return Err(bad("stage1.hidden", "widths must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("stage1.lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(bad(
                "stage1.lr_min",
                format!("must lie in [0, lr], got {}", self.lr_min),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("stage1.weight_decay", "must be non-negative".into()));
        }
        Ok(())
    }
}

impl Settings for Stage1Config {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d0", self.d0.to_string()),
            ("hidden", join_list(&self.hidden)),
            ("lr", self.lr.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("pair_batch", self.pair_batch.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d0" => self.d0 = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "pair_batch" => self.pair_batch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Feedforward encoder with relu hidden layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct PrototypeEncoder {
    domain: Domain,
    input: usize,
    d0: usize,
    hidden: Vec<usize>,
    store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
}

impl PrototypeEncoder {
    pub fn new(domain: Domain, input: usize, d0: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input == 0 || d0 == 0 || hidden.contains(&0) {
            return Err(Error::Contract("encoder widths must be positive".into()));
        }
        let mut rng = rng(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let widths: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(d0))
            .collect();
        let last = widths.len() - 2;
        for (l, pair) in widths.windows(2).enumerate() {
            let w = if l == last {
                glorot(&mut rng, pair[0], pair[1])
            } else {
                he(&mut rng, pair[0], pair[1])
            };
            let wid = store.add(format!("layer{l}.weight"), w, true);
            let bid = store.add(format!("layer{l}.bias"), Tensor::zeros(&[pair[1]]), false);
            layers.push((wid, bid));
        }
        Ok(Self {
            domain,
            input,
            d0,
            hidden: hidden.to_vec(),
            store,
            layers,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn input_extent(&self) -> usize {
        self.input
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records the encoder on `g` for a `[rows, input]` node.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let act = if l + 1 == self.layers.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            let (w, b) = (g.param(w), g.param(b));
            h = g.affine(h, w, b, act)?;
        }
        Ok(h)
    }

    fn check_extent(&self, t: &Tensor) -> Result<()> {
        if t.ndim() != 2 || t.cols() != self.input {
            return Err(Error::dim("encode", t.shape(), &[t.rows(), self.input]));
        }
        Ok(())
    }

    /// Encodes every row of a `[rows, input]` matrix.
    pub fn encode_rows(&self, rows: &Tensor) -> Result<Tensor> {
        self.check_extent(rows)?;
        let mut g = Graph::new(&self.store);
        let x = g.constant(rows.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn encode(&self, row: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, row.len()], row.to_vec())?;
        Ok(self.encode_rows(&t)?.into_data())
    }

    /// Prototypes for every entity of the encoder's domain, `[n, d0]`.
    /// Errors if any prototype has (near) zero norm.
    pub fn prototypes(&self, ds: &Dataset) -> Result<Tensor> {
        let sim = ds.similarity(self.domain);
        let out = self.encode_rows(sim)?;
        for (i, row) in out.data().chunks(self.d0).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= NORM_GUARD) {
                return Err(Error::Degenerate(format!(
                    "{} prototype {i} has norm {norm:e}",
                    self.domain
                )));
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::with_params(&self.store);
        ck.set_meta("kind", "prototype_encoder");
        ck.set_meta("domain", self.domain);
        ck.set_meta("d0", self.d0);
        ck.set_meta("input", self.input);
        ck.set_meta(
            "hidden",
            self.hidden
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "prototype_encoder" {
            return Err(Error::Checkpoint("not a prototype encoder checkpoint".into()));
        }
        let domain = Domain::parse(ck.meta("domain")?).ok_or_else(|| Error::Checkpoint("bad encoder domain".into()))?;
        let num = |k: &str| -> Result<usize> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad `{k}` metadata")))
        };
        let hidden_text = ck.meta("hidden")?;
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|w| w.parse().map_err(|_| Error::Checkpoint("bad `hidden` metadata".into())))
                .collect::<Result<Vec<usize>>>()?
        };
        let mut enc = Self::new(domain, num("input")?, num("d0")?, &hidden, 0)?;
        ck.restore(&mut enc.store)?;
        Ok(enc)
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(dir)
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

/// Row `i` of the drug or disease similarity matrix.
pub fn initial_representation(ds: &Dataset, domain: Domain, i: usize) -> Result<Vec<f64>> {
    let n = ds.n_entities(domain);
    if i >= n {
        return Err(Error::Range(format!("{domain} index {i} outside 0..{n}")));
    }
    Ok(ds.similarity(domain).row(i).to_vec())
}

/// Cosine of two prototypes; zero-norm inputs are degenerate.
pub fn cosine_sim(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("cosine_sim", &[p.len()], &[q.len()]));
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(np > 0.0 && nq > 0.0) {
        return Err(Error::Degenerate(format!(
            "cosine of prototypes with norms {np:e} and {nq:e}"
        )));
    }
    Ok((dot / (np * nq)).clamp(-1.0, 1.0))
}

/// Records the mean squared cosine-regression error over `pairs` on `g`.
fn pair_loss(enc: &PrototypeEncoder, g: &mut Graph<'_>, sim: &Tensor, pairs: &[(usize, usize)]) -> Result<NodeId> {
    // encode each distinct entity once, then gather both sides of each pair
    let n = sim.rows();
    let mut slot = vec![usize::MAX; n];
    let mut used = Vec::new();
    for &(i, j) in pairs {
        for e in [i, j] {
            if slot[e] == usize::MAX {
                slot[e] = used.len();
                used.push(e);
            }
        }
    }
    let mut rows = Vec::with_capacity(used.len() * n);
    for &e in &used {
        rows.extend_from_slice(sim.row(e));
    }
    let x = g.constant(Tensor::new(vec![used.len(), n], rows)?);
    let h = enc.forward(g, x)?;
    let left = g.gather_rows(h, pairs.iter().map(|&(i, _)| slot[i]).collect())?;
    let right = g.gather_rows(h, pairs.iter().map(|&(_, j)| slot[j]).collect())?;
    let cos = g.row_cosine(left, right, NORM_GUARD)?;
    let target = g.constant(Tensor::vector(pairs.iter().map(|&(i, j)| sim.get(i, j)).collect()));
    let diff = g.sub(cos, target)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

fn check_pairs(sim: &Tensor, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract("empty pair set".into()));
    }
    let n = sim.rows();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| !(i < j && j < n)) {
        return Err(Error::Contract(format!(
            "pair ({i}, {j}) is not an ordered pair below {n}"
        )));
    }
    Ok(())
}

/// Summed squared error between target similarities and prototype cosines.
pub fn stage1_loss(enc: &PrototypeEncoder, sim: &Tensor, pairs: &[(usize, usize)]) -> Result<f64> {
    check_pairs(sim, pairs)?;
    enc.check_extent(sim)?;
    let mut g = Graph::new(&enc.store);
    let loss = pair_loss(enc, &mut g, sim, pairs)?;
    Ok(g.value(loss).item() * pairs.len() as f64)
}

/// Every `(i, j)` with `i < j < n`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[derive(Clone, Debug)]
pub struct Stage1Outcome {
    pub encoder: PrototypeEncoder,
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl Stage1Outcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Fits an encoder for `domain` to the similarity matrix `sim`.
pub fn train_stage1(domain: Domain, sim: &Tensor, config: &Stage1Config) -> Result<Stage1Outcome> {
    config.validate()?;
    let n = sim.rows();
    if sim.ndim() != 2 || sim.cols() != n {
        return Err(Error::dim("train_stage1", sim.shape(), &[n, n]));
    }
    if n < 2 {
        return Err(Error::Contract(format!(
            "{domain} similarity needs at least 2 entities"
        )));
    }
    let seed = derive_seed(config.seed, &[domain as u64]);
    let mut encoder = PrototypeEncoder::new(domain, n, config.d0, &config.hidden, seed)?;
    let mut pairs = all_pairs(n);
    let batch = if config.pair_batch == 0 {
        pairs.len()
    } else {
        config.pair_batch.min(pairs.len())
    };
    let steps_per_epoch = pairs.len().div_ceil(batch);
    let total = config.epochs * steps_per_epoch;
    let mut opt = AdamW::new(
        &encoder.store,
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut shuffle_rng = rng(derive_seed(seed, &[1]));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        if batch < pairs.len() {
            pairs.shuffle(&mut shuffle_rng);
        }
        let mut sum = 0.0;
        for chunk in pairs.chunks(batch) {
            let lr = cosine_anneal(config.lr, step, total, config.lr_min)?;
            let grads = {
                let mut g = Graph::new(&encoder.store);
                let loss = pair_loss(&encoder, &mut g, sim, chunk)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "{domain} prototype loss became {value} in epoch {epoch}"
                    )));
                }
                sum += value * chunk.len() as f64;
                g.backward(loss)?
            };
            opt.step(&mut encoder.store, &grads, lr).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            step += 1;
        }
        epoch_losses.push(sum / pairs.len() as f64);
    }
    Ok(Stage1Outcome { encoder, epoch_losses })
}

/// Trains the drug and disease encoders independently, in parallel.
pub fn train_encoders(ds: &Dataset, config: &Stage1Config) -> Result<(Stage1Outcome, Stage1Outcome)> {
    let (drug, disease) = rayon::join(
        || train_stage1(Domain::Drug, ds.similarity(Domain::Drug), config),
        || train_stage1(Domain::Disease, ds.similarity(Domain::Disease), config),
    );
    Ok((drug?, disease?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::fd::{max_relative_error, numeric_gradient};
    use crate::numcore::normal;
    use rand::Rng;

    fn constant_encoder(input: usize, bias: &[f64]) -> PrototypeEncoder {
        let mut enc = PrototypeEncoder::new(Domain::Drug, input, bias.len(), &[3], 1).unwrap();
        for p in enc.params_mut().params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let last = enc.layers.last().unwrap().1;
        enc.params_mut().value_mut(last).data_mut().copy_from_slice(bias);
        enc
    }

    #[test]
    fn identity_row_representation() {
        let ds = Dataset::new(&Tensor::zeros(&[3, 2]), Tensor::eye(3), Tensor::eye(2), None, None).unwrap();
        assert_eq!(
            initial_representation(&ds, Domain::Drug, 0).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(initial_representation(&ds, Domain::Disease, 1).unwrap().len(), 2);
        assert!(matches!(
            initial_representation(&ds, Domain::Drug, 3),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn zero_weights_output_the_bias() {
        let enc = constant_encoder(4, &[0.5, -1.0, 2.0]);
        assert_eq!(enc.encode(&[0.3, 0.1, 0.9, 0.2]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn encoding_is_deterministic_and_checks_extent() {
        let a = PrototypeEncoder::new(Domain::Disease, 5, 4, &[16], 11).unwrap();
        let b = PrototypeEncoder::new(Domain::Disease, 5, 4, &[16], 11).unwrap();
        let x = [0.1, 0.7, 0.0, 1.0, 0.3];
        let (pa, pb) = (a.encode(&x).unwrap(), b.encode(&x).unwrap());
        assert_eq!(pa.len(), 4);
        assert!(pa.iter().zip(&pb).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(pa, a.encode(&x).unwrap());
        assert!(matches!(a.encode(&[0.1; 6]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[0.3, -4.0], &[0.3, -4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let mut r = rng(5);
        for _ in 0..100 {
            let p: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (a, b) = (r.gen_range(0.01..50.0), r.gen_range(0.01..50.0));
            let ps: Vec<f64> = p.iter().map(|v| v * a).collect();
            let qs: Vec<f64> = q.iter().map(|v| v * b).collect();
            let base = cosine_sim(&p, &q).unwrap();
            assert!((cosine_sim(&ps, &qs).unwrap() - base).abs() < 1e-12);
            assert_eq!(base, cosine_sim(&q, &p).unwrap());
        }
    }

    #[test]
    fn collapsed_encoder_loss() {
        let enc = constant_encoder(4, &[1.0, 1.0]);
        let ones = Tensor::filled(&[4, 4], 1.0);
        let pairs = all_pairs(4);
        assert!(stage1_loss(&enc, &ones, &pairs).unwrap().abs() < 1e-12);
        let mut s = Tensor::filled(&[4, 4], 0.3);
        for i in 0..4 {
            s.set(i, i, 1.0);
        }
        let loss = stage1_loss(&enc, &s, &pairs).unwrap();
        assert!((loss - 6.0 * 0.49).abs() < 1e-12);
        assert!(matches!(stage1_loss(&enc, &s, &[]), Err(Error::Contract(_))));
        assert!(stage1_loss(&enc, &s, &[(2, 1)]).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut r = rng(3);
        let n = 5;
        let mut s = Tensor::eye(n);
        for i in 0..n {
            for j in i + 1..n {
                let v = r.gen_range(0.0..1.0);
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        let enc = PrototypeEncoder::new(Domain::Drug, n, 3, &[4], 8).unwrap();
        let pairs = all_pairs(n);
        let mut g = Graph::new(enc.params());
        let loss = pair_loss(&enc, &mut g, &s, &pairs).unwrap();
        let grads = g.backward(loss).unwrap();
        for (id, p) in enc.params().iter() {
            let numeric = numeric_gradient(&p.value, 1e-5, |v| {
                let mut probe = enc.clone();
                *probe.params_mut().value_mut(id) = v.clone();
                stage1_loss(&probe, &s, &pairs).unwrap() / pairs.len() as f64
            });
            let err = max_relative_error(grads.param(id).unwrap(), &numeric);
            assert!(err < 1e-4, "{}: {err}", p.name);
        }
    }

    fn quick(d0: usize, epochs: usize) -> Stage1Config {
        Stage1Config {
            d0,
            hidden: vec![64],
            epochs,
            pair_batch: 0,
            seed: 4,
            ..Stage1Config::default()
        }
    }

    #[test]
    fn zero_epochs_return_the_initial_encoder() {
        let out = train_stage1(Domain::Drug, &Tensor::eye(4), &quick(8, 0)).unwrap();
        let fresh = PrototypeEncoder::new(Domain::Drug, 4, 8, &[64], derive_seed(4, &[0])).unwrap();
        assert!(out.epoch_losses.is_empty());
        for ((_, a), (_, b)) in out.encoder.params().iter().zip(fresh.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn fits_identity_similarity() {
        let cfg = Stage1Config {
            hidden: vec![1024],
            ..quick(8, 200)
        };
        let out = train_stage1(Domain::Drug, &Tensor::eye(4), &cfg).unwrap();
        let last = out.final_loss().unwrap();
        assert!(last < 1e-2, "final loss {last}");
        assert!(out.epoch_losses[0] > last);
    }

    #[test]
    fn recovers_cosines_of_random_unit_vectors() {
        let (n, d0) = (24, 16);
        let mut r = rng(21);
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v = normal(&mut r, &[d0], 1.0).into_data();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut s = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                s.set(i, j, cosine_sim(&vecs[i], &vecs[j]).unwrap().max(0.0));
            }
        }
        let cfg = Stage1Config {
            hidden: vec![1024],
            pair_batch: 32,
            ..quick(d0, 300)
        };
        let out = train_stage1(Domain::Disease, &s, &cfg).unwrap();
        let protos = out.encoder.encode_rows(&s).unwrap();
        let mut err = 0.0;
        let pairs = all_pairs(n);
        for &(i, j) in &pairs {
            err += (cosine_sim(protos.row(i), protos.row(j)).unwrap() - s.get(i, j)).abs();
        }
        let mae = err / pairs.len() as f64;
        assert!(mae < 0.05, "mean absolute error {mae}");
        assert!(out.epoch_losses[0] > *out.epoch_losses.last().unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = PrototypeEncoder::new(Domain::Disease, 6, 4, &[8, 5], 2).unwrap();
        enc.save(dir.path()).unwrap();
        let back = PrototypeEncoder::load(dir.path()).unwrap();
        assert_eq!(back.domain(), Domain::Disease);
        assert_eq!(back.hidden(), &[8, 5]);
        let x = [0.2; 6];
        assert_eq!(enc.encode(&x).unwrap(), back.encode(&x).unwrap());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = Stage1Config {
            d0: 1,
            ..Stage1Config::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = Stage1Config {
            lr: 0.0,
            ..Stage1Config::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn settings_round_trip() {
        let cfg = Stage1Config {
            d0: 32,
            hidden: vec![8, 4],
            pair_batch: 0,
            ..Stage1Config::default()
        };
        let mut back = Stage1Config::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("widths", "1").is_err());
    }
}
