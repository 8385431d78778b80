//! Small differentiable networks: dense ReLU layers, Adam and checkpoints.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{soft_update, ForwardCache, Mlp};

/// Largest relative discrepancy between two gradient vectors.
///
/// Entries where both magnitudes fall below `floor` are compared absolutely
/// against `floor`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
