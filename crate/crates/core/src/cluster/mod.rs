//! k-means and the DEC / IDEC self-training heads.

mod dec;
mod kmeans;

pub use dec::{
    infer, kl_divergence, kl_loss, soft_assign, target_distribution, train_dec, train_dec_from, DecConfig, DecEpoch,
    DecHead, DecOutcome, KlGradients,
};
pub use kmeans::{kmeans, nearest_centroid, KMeansConfig, KMeansModel, MAX_ITER};
