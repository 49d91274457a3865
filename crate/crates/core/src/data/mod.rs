//! Data pipeline: manifests, synthetic corpus, distortions, patches and
//! triplet batches.

pub mod distort;
pub mod image;
pub mod manifest;
pub mod patch;
pub mod synth;
pub mod triplet;

pub use distort::{apply_distortion, contrast_gain, SyntheticDistortion, MAX_LEVEL};
pub use image::{psnr, SciImage};
pub use manifest::{
    load_manifest, normalize_scores, save_manifest, split_by_reference, DatasetManifest,
    ImageRecord, ScorePolarity, PRISTINE_LABEL,
};
pub use patch::{extract_patches, extract_patches_at, patch_grid};
pub use synth::{synthesize_sci, synthetic_score, write_synthetic_corpus, SynthCorpusSpec};
pub use triplet::{sample_triplet_batch, ImageStore, TripletBatch};
