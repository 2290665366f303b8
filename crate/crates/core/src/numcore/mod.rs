//! Dense tensors, a reverse-mode gradient tape, AdamW and learning-rate
//! scheduling. Everything is `f64`.

pub mod checkpoint;
pub mod fd;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{sigmoid, Activation, BatchNormState, Gradients, Graph, Mode, NodeId};
pub use optim::{cosine_anneal, AdamW, AdamWConfig};
pub use params::{glorot, he, normal, Param, ParamId, ParamStore};
pub use tensor::{matmul_values, Tensor};

use crate::error::{Error, Result};

/// Row-wise softmax of a matrix, outside any tape.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let c = m.cols();
    let mut out = vec![0.0; m.len()];
    for (r, (src, dst)) in m.data().chunks(c).zip(out.chunks_mut(c)).enumerate() {
        graph::softmax_row(src, dst).map_err(|_| Error::Masking { row: r })?;
    }
    Tensor::new(m.shape().to_vec(), out)
}
