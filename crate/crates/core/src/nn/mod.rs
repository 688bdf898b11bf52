//! Parameterized maps of the model: encoder to the chart, immersion,
//! decoder, metric factor, conformal factor / harmonic map, sphere shift and
//! the `Λ` network, plus parameter storage, Adam and checkpoints.

mod bundle;
mod checkpoint;
mod mlp;

pub use bundle::{chart_time_spec, sphere_chart, Encoded, MetricOverlay, ModelBundle, ModelConfig};
pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, Checkpoint, CheckpointManifest, NetworkManifest, OptimizerManifest,
    MANIFEST_FILE,
};
pub use mlp::{spectral_norm, Activation, Adam, Bound, Mlp, NetworkSpec, ParamStore};
