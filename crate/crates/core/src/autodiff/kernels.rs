//! Raw numeric kernels behind the graph ops.
//!
//! All buffers are NCHW row-major slices. Each output element is
//! produced by a self-contained sequential loop so that results do not
//! depend on thread scheduling; parallelism is over disjoint output
//! chunks (patches, output channels, rows).

use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub patches: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvDims {
    fn in_plane(&self) -> usize {
        self.h * self.w
    }
    fn in_patch(&self) -> usize {
        self.c_in * self.in_plane()
    }
    fn out_patch(&self) -> usize {
        self.c_out * self.in_plane()
    }
    /// Valid output x range for a kernel column offset, such that the
    /// sampled input column stays in bounds.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let shift = kx as isize - self.pad as isize;
        let start = (-shift).max(0) as usize;
        let end = ((self.w as isize - shift).min(self.w as isize)).max(0) as usize;
        (start, end)
    }
    fn y_range(&self, ky: usize) -> (usize, usize) {
        let shift = ky as isize - self.pad as isize;
        let start = (-shift).max(0) as usize;
        let end = ((self.h as isize - shift).min(self.h as isize)).max(0) as usize;
        (start, end)
    }
}

/// Same-padded stride-1 convolution, NCHW.
pub fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], d: ConvDims, out: &mut [T]) {
    assert_eq!(out.len(), d.patches * d.out_patch());
    for_each_chunk_mut(out, d.out_patch(), |p, out_patch| {
        let x_patch = &x[p * d.in_patch()..(p + 1) * d.in_patch()];
        for co in 0..d.c_out {
            out_patch[co * d.in_plane()..(co + 1) * d.in_plane()].fill(bias[co]);
        }
        for co in 0..d.c_out {
            let out_plane = co * d.in_plane();
            for ci in 0..d.c_in {
                let in_plane = ci * d.in_plane();
                for ky in 0..d.k {
                    let (y0, y1) = d.y_range(ky);
                    for kx in 0..d.k {
                        let wv = weight[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = d.x_range(kx);
                        if x0 >= x1 {
                            continue;
                        }
                        let dx = kx as isize - d.pad as isize;
                        let dy = ky as isize - d.pad as isize;
                        for y in y0..y1 {
                            let ys = (y as isize + dy) as usize;
                            let src =
                                &x_patch[in_plane + ys * d.w + (x0 as isize + dx) as usize..];
                            let dst = &mut out_patch[out_plane + y * d.w + x0..];
                            for i in 0..(x1 - x0) {
                                dst[i] += wv * src[i];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input<T: Scalar>(grad: &[T], weight: &[T], d: ConvDims, dx: &mut [T]) {
    assert_eq!(dx.len(), d.patches * d.in_patch());
    for_each_chunk_mut(dx, d.in_patch(), |p, dx_patch| {
        let g_patch = &grad[p * d.out_patch()..(p + 1) * d.out_patch()];
        for co in 0..d.c_out {
            let g_plane = co * d.in_plane();
            for ci in 0..d.c_in {
                let dx_plane = ci * d.in_plane();
                for ky in 0..d.k {
                    let (y0, y1) = d.y_range(ky);
                    for kx in 0..d.k {
                        let wv = weight[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = d.x_range(kx);
                        if x0 >= x1 {
                            continue;
                        }
                        let dxo = kx as isize - d.pad as isize;
                        let dyo = ky as isize - d.pad as isize;
                        for y in y0..y1 {
                            let ys = (y as isize + dyo) as usize;
                            let src = &g_patch[g_plane + y * d.w + x0..];
                            let dst =
                                &mut dx_patch[dx_plane + ys * d.w + (x0 as isize + dxo) as usize..];
                            for i in 0..(x1 - x0) {
                                dst[i] += wv * src[i];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Gradients w.r.t. convolution weight and bias. Parallel over output
/// channels; the per-channel reduction over patches runs in index order.
pub fn conv2d_backward_params<T: Scalar>(
    grad: &[T],
    x: &[T],
    d: ConvDims,
    dw: &mut [T],
    db: &mut [T],
) {
    let w_per_co = d.c_in * d.k * d.k;
    for_each_chunk_mut(dw, w_per_co, |co, dw_co| {
        for ci in 0..d.c_in {
            for ky in 0..d.k {
                let (y0, y1) = d.y_range(ky);
                for kx in 0..d.k {
                    let (x0, x1) = d.x_range(kx);
                    let dxo = kx as isize - d.pad as isize;
                    let dyo = ky as isize - d.pad as isize;
                    let mut acc = T::zero();
                    if x0 < x1 {
                        for p in 0..d.patches {
                            let g_plane = &grad[p * d.out_patch() + co * d.in_plane()..];
                            let x_plane = &x[p * d.in_patch() + ci * d.in_plane()..];
                            for y in y0..y1 {
                                let ys = (y as isize + dyo) as usize;
                                let g_row = &g_plane[y * d.w + x0..y * d.w + x1];
                                let x_row = &x_plane[ys * d.w + (x0 as isize + dxo) as usize..];
                                for (i, gv) in g_row.iter().enumerate() {
                                    acc += *gv * x_row[i];
                                }
                            }
                        }
                    }
                    dw_co[(ci * d.k + ky) * d.k + kx] = acc;
                }
            }
        }
    });
    for_each_chunk_mut(db, 1, |co, db_co| {
        let mut acc = T::zero();
        for p in 0..d.patches {
            let g_plane = &grad[p * d.out_patch() + co * d.in_plane()..];
            for v in &g_plane[..d.in_plane()] {
                acc += *v;
            }
        }
        db_co[0] = acc;
    });
}

/// 2x2 max pooling with stride 2; records flat argmax indices into the
/// input buffer for the backward scatter. Ties go to the first cell in
/// scan order. H and W must be even.
pub fn maxpool2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!(out.len(), planes * oh * ow);
    for_each_chunk_mut(argmax, oh * ow, |pl, am_plane| {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = base + (2 * oy) * w + 2 * ox;
                let idxs = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = idxs[0];
                let mut bv = x[idxs[0]];
                for &i in &idxs[1..] {
                    if x[i] > bv {
                        bv = x[i];
                        best = i;
                    }
                }
                am_plane[oy * ow + ox] = best as u32;
            }
        }
    });
    for (o, &i) in out.iter_mut().zip(argmax.iter()) {
        *o = x[i as usize];
    }
}

pub fn maxpool2_backward<T: Scalar>(grad: &[T], argmax: &[u32], dx: &mut [T]) {
    for (g, &i) in grad.iter().zip(argmax) {
        dx[i as usize] += *g;
    }
}

/// Window bounds for adaptive pooling: cell `i` of `out` covers
/// `[floor(i*len/out), ceil((i+1)*len/out))`.
pub fn adaptive_window(i: usize, len: usize, out: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len + out - 1) / out;
    (start, end.min(len))
}

pub fn adaptive_mean_pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out_hw: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), planes * out_hw * out_hw);
    for_each_chunk_mut(out, out_hw * out_hw, |pl, out_plane| {
        let plane = &x[pl * h * w..(pl + 1) * h * w];
        for oy in 0..out_hw {
            let (y0, y1) = adaptive_window(oy, h, out_hw);
            for ox in 0..out_hw {
                let (x0, x1) = adaptive_window(ox, w, out_hw);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc += *v;
                    }
                }
                out_plane[oy * out_hw + ox] = acc / T::from_usize_c((y1 - y0) * (x1 - x0));
            }
        }
    });
}

pub fn adaptive_mean_pool_backward<T: Scalar>(
    grad: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out_hw: usize,
    dx: &mut [T],
) {
    debug_assert_eq!(dx.len(), planes * h * w);
    for_each_chunk_mut(dx, h * w, |pl, dx_plane| {
        let g_plane = &grad[pl * out_hw * out_hw..(pl + 1) * out_hw * out_hw];
        for oy in 0..out_hw {
            let (y0, y1) = adaptive_window(oy, h, out_hw);
            for ox in 0..out_hw {
                let (x0, x1) = adaptive_window(ox, w, out_hw);
                let g = g_plane[oy * out_hw + ox] / T::from_usize_c((y1 - y0) * (x1 - x0));
                for y in y0..y1 {
                    for v in &mut dx_plane[y * w + x0..y * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    });
}

/// Population std over each adaptive window (zero for constant windows,
/// including the single-cell windows that arise when the map is smaller
/// than the output grid).
pub fn adaptive_std_pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out_hw: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), planes * out_hw * out_hw);
    for_each_chunk_mut(out, out_hw * out_hw, |pl, out_plane| {
        let plane = &x[pl * h * w..(pl + 1) * h * w];
        for oy in 0..out_hw {
            let (y0, y1) = adaptive_window(oy, h, out_hw);
            for ox in 0..out_hw {
                let (x0, x1) = adaptive_window(ox, w, out_hw);
                let n = T::from_usize_c((y1 - y0) * (x1 - x0));
                let mut mean = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        mean += *v;
                    }
                }
                mean = mean / n;
                let mut var = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        let d = *v - mean;
                        var += d * d;
                    }
                }
                out_plane[oy * out_hw + ox] = (var / n).max(T::zero()).sqrt();
            }
        }
    });
}

pub fn adaptive_std_pool_backward<T: Scalar>(
    grad: &[T],
    x: &[T],
    std_out: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out_hw: usize,
    dx: &mut [T],
) {
    debug_assert_eq!(dx.len(), planes * h * w);
    for_each_chunk_mut(dx, h * w, |pl, dx_plane| {
        let plane = &x[pl * h * w..(pl + 1) * h * w];
        let g_plane = &grad[pl * out_hw * out_hw..(pl + 1) * out_hw * out_hw];
        let s_plane = &std_out[pl * out_hw * out_hw..(pl + 1) * out_hw * out_hw];
        for oy in 0..out_hw {
            let (y0, y1) = adaptive_window(oy, h, out_hw);
            for ox in 0..out_hw {
                let s = s_plane[oy * out_hw + ox];
                if s <= T::zero() {
                    continue;
                }
                let (x0, x1) = adaptive_window(ox, w, out_hw);
                let n = T::from_usize_c((y1 - y0) * (x1 - x0));
                let mut mean = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        mean += *v;
                    }
                }
                mean = mean / n;
                let scale = g_plane[oy * out_hw + ox] / (n * s);
                for y in y0..y1 {
                    for x in x0..x1 {
                        dx_plane[y * w + x] += scale * (plane[y * w + x] - mean);
                    }
                }
            }
        }
    });
}

/// Row-major matrix product with bias: `out[r] = x[r] * w + b`.
pub fn affine_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    rows: usize,
    d_in: usize,
    d_out: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), rows * d_out);
    for_each_chunk_mut(out, d_out, |r, out_row| {
        out_row.copy_from_slice(bias);
        let x_row = &x[r * d_in..(r + 1) * d_in];
        for (i, &xv) in x_row.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let w_row = &weight[i * d_out..(i + 1) * d_out];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    });
}

pub fn affine_backward<T: Scalar>(
    grad: &[T],
    x: &[T],
    weight: &[T],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    for_each_chunk_mut(dx, d_in, |r, dx_row| {
        let g_row = &grad[r * d_out..(r + 1) * d_out];
        for (i, dv) in dx_row.iter_mut().enumerate() {
            let w_row = &weight[i * d_out..(i + 1) * d_out];
            let mut acc = T::zero();
            for (g, wv) in g_row.iter().zip(w_row) {
                acc += *g * *wv;
            }
            *dv += acc;
        }
    });
    for_each_chunk_mut(dw, d_out, |i, dw_row| {
        for r in 0..rows {
            let xv = x[r * d_in + i];
            if xv == T::zero() {
                continue;
            }
            let g_row = &grad[r * d_out..(r + 1) * d_out];
            for (d, g) in dw_row.iter_mut().zip(g_row) {
                *d += xv * *g;
            }
        }
    });
    for_each_chunk_mut(db, 1, |j, db_j| {
        let mut acc = T::zero();
        for r in 0..rows {
            acc += grad[r * d_out + j];
        }
        db_j[0] += acc;
    });
}
