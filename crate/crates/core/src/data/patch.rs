//! Non-overlapping patch extraction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::SciImage;

/// Grid of non-overlapping `patch_size` cells tiling the top-left of an
/// image: `(rows, cols)`, trailing remainders discarded.
pub fn patch_grid(height: usize, width: usize, patch_size: usize) -> (usize, usize) {
    (height / patch_size, width / patch_size)
}

/// All grid patches in row-major order as a `[p, 3, s, s]` tensor.
/// Errors when the image is smaller than a single patch.
pub fn extract_patches(image: &SciImage, patch_size: usize) -> Result<Tensor<f32>> {
    let (rows, cols) = patch_grid(image.height, image.width, patch_size);
    if rows == 0 || cols == 0 {
        return Err(Error::Size(format!(
            "image {}x{} smaller than patch size {}",
            image.width, image.height, patch_size
        )));
    }
    let cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|gy| (0..cols).map(move |gx| (gy, gx)))
        .collect();
    Ok(extract_patches_at(image, patch_size, &cells))
}

/// Patches at the given grid cells `(gy, gx)`, in the given order.
pub fn extract_patches_at(
    image: &SciImage,
    patch_size: usize,
    cells: &[(usize, usize)],
) -> Tensor<f32> {
    let s = patch_size;
    let mut out = Tensor::zeros(&[cells.len(), 3, s, s]);
    let data = out.data_mut();
    for (p, &(gy, gx)) in cells.iter().enumerate() {
        let base = p * 3 * s * s;
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    data[base + (c * s + y) * s + x] = image.get(gx * s + x, gy * s + y, c);
                }
            }
        }
    }
    out
}
