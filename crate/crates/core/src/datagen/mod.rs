//! Synthetic trajectories: random Fourier initial conditions, sine coefficient
//! fields, fine-grid reference solves and distribution-shift measurement.

mod coeffs;
mod dataset;
mod spectrum;

pub use coeffs::{gen_coeff_field, CoeffFieldSpec, TermField};
pub use dataset::{
    build_dataset, build_dataset_timed, coarsen, fine_initial, normalize_variance, reference_solve,
    refine, sample_rng, Dataset, DatasetManifest, SpectrumConfig,
};
pub use spectrum::{
    half_space, hellinger2, sample_initial, solve_band_scale, Mode, Parity, SpectrumSpec,
};
