//! Seeded synthetic datasets with a known answer.

use rand::Rng;

use crate::data::{rng, Dataset};
use crate::error::{Error, Result};
use crate::numcore::{normal, Tensor};

/// Block-structured dataset: drugs and diseases fall into `clusters` groups,
/// and cluster `k` of drugs treats cluster `k` of diseases.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub drugs: usize,
    pub diseases: usize,
    pub clusters: usize,
    /// Probability that a cell inside a matching block is positive.
    pub in_block: f64,
    /// Probability that a cell outside the matching blocks is positive.
    pub off_block: f64,
    pub sim_within: f64,
    pub sim_between: f64,
    /// Half-width of the uniform jitter added to off-diagonal similarities.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            drugs: 20,
            diseases: 15,
            clusters: 3,
            in_block: 1.0,
            off_block: 0.0,
            sim_within: 0.6,
            sim_between: 0.1,
            jitter: 0.05,
            seed: 0,
        }
    }
}

/// Cluster of entity `i` among `n` entities split into `k` contiguous groups.
pub fn cluster_of(i: usize, n: usize, k: usize) -> usize {
    i * k / n
}

pub fn block_dataset(cfg: &BlockConfig) -> Result<Dataset> {
    if cfg.clusters == 0 || cfg.clusters > cfg.drugs.min(cfg.diseases) {
        return Err(Error::Validation(format!(
            "{} clusters for a {}x{} matrix",
            cfg.clusters, cfg.drugs, cfg.diseases
        )));
    }
    for (name, p) in [
        ("in_block", cfg.in_block),
        ("off_block", cfg.off_block),
        ("sim_within", cfg.sim_within),
        ("sim_between", cfg.sim_between),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Range(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let mut r = rng(cfg.seed);
    let mut assoc = Tensor::zeros(&[cfg.drugs, cfg.diseases]);
    for i in 0..cfg.drugs {
        for j in 0..cfg.diseases {
            let same = cluster_of(i, cfg.drugs, cfg.clusters) == cluster_of(j, cfg.diseases, cfg.clusters);
            let p = if same { cfg.in_block } else { cfg.off_block };
            if r.gen::<f64>() < p {
                assoc.set(i, j, 1.0);
            }
        }
    }
    let drug_sim = block_similarity(&mut r, cfg.drugs, cfg);
    let disease_sim = block_similarity(&mut r, cfg.diseases, cfg);
    Dataset::new(&assoc, drug_sim, disease_sim, None, None)
}

fn block_similarity(r: &mut impl Rng, n: usize, cfg: &BlockConfig) -> Tensor {
    let mut s = Tensor::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let base = if cluster_of(i, n, cfg.clusters) == cluster_of(j, n, cfg.clusters) {
                cfg.sim_within
            } else {
                cfg.sim_between
            };
            let v = (base + r.gen_range(-1.0..=1.0) * cfg.jitter).clamp(0.0, 1.0);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// `n` random unit vectors in `R^dim` and their exact cosine matrix.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    if n == 0 || dim == 0 {
        return Err(Error::Validation("need at least one vector of positive extent".into()));
    }
    let mut r = rng(seed);
    let mut vecs = normal(&mut r, &[n, dim], 1.0);
    for row in vecs.data_mut().chunks_mut(dim) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    let mut sim = Tensor::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = vecs.row(i).iter().zip(vecs.row(j)).map(|(a, b)| a * b).sum();
            sim.set(i, j, dot);
            sim.set(j, i, dot);
        }
    }
    Ok((vecs, sim))
}
