//! On-disk formats: run configuration, datasets and models as TOML manifests
//! plus little-endian f64 blobs with CRC-32 checksums.

pub mod blob;
mod config;
mod store;

pub use config::{
    apply_override, Bounds, DataConfig, EvalConfig, GridConfig, RunConfig, SweepConfig,
};
pub use store::{
    load_dataset, load_dataset_manifest, load_model, load_model_manifest, sample_file,
    save_dataset, save_model, verify, ModelManifest, SampleLayout, StoredDataset, StoredModel,
    StoredOptimizer, VerifyReport, DATASET_MANIFEST, MODEL_MANIFEST,
};

/// Version written into every manifest; other versions are refused on load.
pub const FORMAT_VERSION: u32 = 1;
