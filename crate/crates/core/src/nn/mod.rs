//! Reverse-mode differentiation, dense networks and optimisation.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use graph::{sigmoid, softplus, Gradients, Graph, NodeId, SIGNED_SQRT_FLOOR};
pub use layers::{Activation, DenseLayer, Mlp};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

use rand::seq::SliceRandom;
use rand::Rng;

/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 128;

/// Shuffled mini-batch index lists covering `0..n` once.
pub fn shuffled_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Squared-error sum per row, averaged over rows: `mean_b ‖a_b − b_b‖²`.
pub fn mean_row_sq_error(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let sq = g.square(d);
    let rows = g.shape(a)[0] as f64;
    let s = g.sum(sq);
    g.scale(s, 1.0 / rows)
}

/// Mean over all entries of `(a − b)²`.
pub fn mse(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.mean(sq)
}

/// Tensor of independent standard normal draws.
pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::new(rows, cols, data).expect("normal tensor shape")
}

/// Rejects a non-finite epoch loss.
pub fn check_loss(epoch: usize, loss: f64) -> crate::Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(crate::Error::Diverged { epoch, loss })
    }
}
