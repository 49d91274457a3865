//! Triplet batch assembly for training.
//!
//! Each batch holds `b` triplets (distorted image, its pristine
//! reference, and a pristine auxiliary of different content), with `n`
//! aligned patch locations shared by the distorted/reference pair and
//! independent locations for the auxiliary.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};
use crate::tensor::Tensor;

use super::image::SciImage;
use super::manifest::DatasetManifest;
use super::patch::{extract_patches_at, patch_grid};

/// Grouped patch tensors of one training batch. Patch rows are grouped
/// by image: rows `[i*n, (i+1)*n)` belong to triplet `i`.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    /// `[b*n, 3, s, s]` patches of the distorted images.
    pub distorted_patches: Tensor<f32>,
    /// Same locations in the paired pristine references.
    pub reference_patches: Tensor<f32>,
    /// Independent locations in different-content pristine images.
    pub auxiliary_patches: Tensor<f32>,
    /// Distortion class per triplet, indices into the manifest's
    /// distortion vocabulary.
    pub distortion_labels: Vec<usize>,
    /// Ground-truth score per triplet.
    pub scores: Vec<f32>,
    /// Image index of each patch row: `row / n`.
    pub group_index: Vec<usize>,
    pub triplets: usize,
    pub patches_per_image: usize,
}

/// Image cache keyed by resolved path.
#[derive(Default)]
pub struct ImageStore {
    cache: HashMap<std::path::PathBuf, Arc<SciImage>>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, path: &std::path::Path) -> Result<Arc<SciImage>> {
        if let Some(img) = self.cache.get(path) {
            return Ok(img.clone());
        }
        let img = Arc::new(SciImage::load(path)?);
        self.cache.insert(path.to_path_buf(), img.clone());
        Ok(img)
    }
}

/// Samples a triplet batch; deterministic given `seed`.
///
/// The distorted images are `b` distinct records; patch locations come
/// uniformly from each image's grid (distinct cells when the grid has at
/// least `n`, with replacement otherwise).
pub fn sample_triplet_batch(
    manifest: &DatasetManifest,
    b: usize,
    n: usize,
    patch_size: usize,
    seed: u64,
    store: &mut ImageStore,
) -> Result<TripletBatch> {
    let pristine: Vec<&super::manifest::ImageRecord> = manifest.pristine_records().collect();
    let distorted: Vec<&super::manifest::ImageRecord> = manifest.distorted_records().collect();
    let ref_by_id: HashMap<&str, &super::manifest::ImageRecord> = pristine
        .iter()
        .map(|r| (r.reference_id.as_str(), *r))
        .collect();
    let distinct_refs: std::collections::BTreeSet<&str> =
        pristine.iter().map(|r| r.reference_id.as_str()).collect();
    if distinct_refs.len() < 2 {
        return Err(Error::Sampling(
            "need at least 2 reference ids to draw auxiliaries".into(),
        ));
    }
    if distorted.len() < b {
        return Err(Error::Sampling(format!(
            "need at least {b} distorted records, manifest has {}",
            distorted.len()
        )));
    }
    let vocab = manifest.distortion_vocabulary();
    let label_of: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut rng = rng_for(seed, streams::BATCH, 0);

    // b distinct distorted records via partial Fisher-Yates
    let mut idx: Vec<usize> = (0..distorted.len()).collect();
    for i in 0..b {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }

    let s = patch_size;
    let mut d_rows = Vec::with_capacity(b * n * 3 * s * s);
    let mut r_rows = Vec::with_capacity(b * n * 3 * s * s);
    let mut a_rows = Vec::with_capacity(b * n * 3 * s * s);
    let mut labels = Vec::with_capacity(b);
    let mut scores = Vec::with_capacity(b);

    for &di in idx.iter().take(b) {
        let drec = distorted[di];
        let rrec = ref_by_id.get(drec.reference_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!("no pristine record for {}", drec.reference_id))
        })?;
        // auxiliary: pristine record with different content
        let candidates: Vec<&super::manifest::ImageRecord> = pristine
            .iter()
            .copied()
            .filter(|r| r.reference_id != drec.reference_id)
            .collect();
        let arec = candidates[rng.gen_range(0..candidates.len())];

        let d_img = store.get(&manifest.resolve_path(drec))?;
        let r_img = store.get(&manifest.resolve_path(rrec))?;
        let a_img = store.get(&manifest.resolve_path(arec))?;

        // aligned grid for the distorted/reference pair
        let (dr, dc) = patch_grid(d_img.height, d_img.width, s);
        let (rr, rc) = patch_grid(r_img.height, r_img.width, s);
        let joint = (dr.min(rr), dc.min(rc));
        if joint.0 == 0 || joint.1 == 0 {
            return Err(Error::Size(format!(
                "{}: too small for a {s}x{s} patch",
                drec.image_path
            )));
        }
        let cells = draw_cells(&mut rng, joint, n);
        let (ar, ac) = patch_grid(a_img.height, a_img.width, s);
        if ar == 0 || ac == 0 {
            return Err(Error::Size(format!(
                "{}: too small for a {s}x{s} patch",
                arec.image_path
            )));
        }
        let a_cells = draw_cells(&mut rng, (ar, ac), n);

        d_rows.extend_from_slice(extract_patches_at(&d_img, s, &cells).data());
        r_rows.extend_from_slice(extract_patches_at(&r_img, s, &cells).data());
        a_rows.extend_from_slice(extract_patches_at(&a_img, s, &a_cells).data());

        labels.push(*label_of.get(drec.distortion_type.as_str()).ok_or_else(|| {
            Error::Integrity(format!("type {} not in vocabulary", drec.distortion_type))
        })?);
        scores.push(drec.score.ok_or_else(|| {
            Error::Integrity(format!("{} has no score", drec.image_path))
        })? as f32);
    }

    let shape = [b * n, 3, s, s];
    Ok(TripletBatch {
        distorted_patches: Tensor::from_vec(&shape, d_rows),
        reference_patches: Tensor::from_vec(&shape, r_rows),
        auxiliary_patches: Tensor::from_vec(&shape, a_rows),
        distortion_labels: labels,
        scores,
        group_index: (0..b * n).map(|i| i / n).collect(),
        triplets: b,
        patches_per_image: n,
    })
}

/// `n` grid cells: distinct when the grid is large enough, otherwise
/// uniform with replacement.
fn draw_cells(rng: &mut impl Rng, grid: (usize, usize), n: usize) -> Vec<(usize, usize)> {
    let (rows, cols) = grid;
    let total = rows * cols;
    if total >= n {
        let mut idx: Vec<usize> = (0..total).collect();
        for i in 0..n {
            let j = rng.gen_range(i..total);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx.into_iter().map(|i| (i / cols, i % cols)).collect()
    } else {
        (0..n)
            .map(|_| {
                let i = rng.gen_range(0..total);
                (i / cols, i % cols)
            })
            .collect()
    }
}
