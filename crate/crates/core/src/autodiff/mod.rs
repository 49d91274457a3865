//! Reverse-mode automatic differentiation over a flat tape.
//!
//! The graph is rebuilt for every forward pass; node ids index a vector
//! in topological order, so the backward sweep is a single reverse scan.
//! Ops are a closed enum rather than trait objects: the model only needs
//! this fixed vocabulary and the match keeps forward/backward pairs next
//! to each other for review against finite differences.

pub mod kernels;

use crate::scalar::Scalar;
use crate::stats;
use crate::tensor::Tensor;

use kernels::ConvDims;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { dims: ConvDims },
    Relu,
    Sigmoid,
    MaxPool2 { argmax: Vec<u32>, h: usize, w: usize },
    AdaptiveMeanPool { h: usize, w: usize, out_hw: usize },
    AdaptiveStdPool { h: usize, w: usize, out_hw: usize },
    ConcatChannels { channels: Vec<usize>, plane: usize },
    GlobalAvgPool { plane: usize },
    Affine { rows: usize, d_in: usize, d_out: usize },
    GroupMean { groups: usize, group_size: usize },
    GroupStd { groups: usize, group_size: usize },
    NormalizeRows { groups: usize, group_size: usize },
    KlStdNormal,
    Mul,
    Sub,
    AddScalar,
    RowSumSq,
    MeanAll,
    SliceRows { start: usize, row: usize },
    Reshape,
    SoftmaxCrossEntropy { labels: Vec<usize>, probs: Vec<T> },
    MeanAbsError { target: Vec<T> },
    MmdGaussian { bandwidths: Vec<T> },
    WeightedSum { coeffs: Vec<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<NodeId>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients indexed by node id. Only nodes on a path from a
/// gradient-requiring leaf to the backward root are populated.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<NodeId>, op: Op<T>) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            inputs,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that participates in differentiation (a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: vec![],
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: vec![],
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Same-padded stride-1 convolution; `x` is `[p, c_in, h, w]`,
    /// `w` is `[c_out, c_in, k, k]`, `b` is `[c_out]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let &[p, c_in, h, wd] = self.value(x).shape() else {
            panic!("conv2d: bad input shape {:?}", self.value(x).shape())
        };
        let &[c_out, c_in2, k, k2] = self.value(w).shape() else {
            panic!("conv2d: bad weight shape {:?}", self.value(w).shape())
        };
        assert_eq!(c_in, c_in2, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d kernel must be square");
        assert_eq!(self.value(b).shape(), &[c_out]);
        assert_eq!(k % 2, 1, "conv2d kernel must be odd for same padding");
        let dims = ConvDims {
            patches: p,
            c_in,
            c_out,
            h,
            w: wd,
            k,
            pad: k / 2,
        };
        let mut out = Tensor::zeros(&[p, c_out, h, wd]);
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
            out.data_mut(),
        );
        self.push(out, vec![x, w, b], Op::Conv2d { dims })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, vec![x], Op::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, vec![x], Op::Sigmoid)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> NodeId {
        let &[p, c, h, w] = self.value(x).shape() else {
            panic!("maxpool2: bad shape")
        };
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
        let mut out = Tensor::zeros(&[p, c, h / 2, w / 2]);
        let mut argmax = vec![0u32; out.len()];
        kernels::maxpool2_forward(self.value(x).data(), p * c, h, w, out.data_mut(), &mut argmax);
        self.push(out, vec![x], Op::MaxPool2 { argmax, h, w })
    }

    pub fn adaptive_mean_pool(&mut self, x: NodeId, out_hw: usize) -> NodeId {
        let &[p, c, h, w] = self.value(x).shape() else {
            panic!("adaptive_mean_pool: bad shape")
        };
        let mut out = Tensor::zeros(&[p, c, out_hw, out_hw]);
        kernels::adaptive_mean_pool_forward(self.value(x).data(), p * c, h, w, out_hw, out.data_mut());
        self.push(out, vec![x], Op::AdaptiveMeanPool { h, w, out_hw })
    }

    pub fn adaptive_std_pool(&mut self, x: NodeId, out_hw: usize) -> NodeId {
        let &[p, c, h, w] = self.value(x).shape() else {
            panic!("adaptive_std_pool: bad shape")
        };
        let mut out = Tensor::zeros(&[p, c, out_hw, out_hw]);
        kernels::adaptive_std_pool_forward(self.value(x).data(), p * c, h, w, out_hw, out.data_mut());
        self.push(out, vec![x], Op::AdaptiveStdPool { h, w, out_hw })
    }

    /// Concatenates `[p, c_i, h, w]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let &[p, _, h, w] = self.value(xs[0]).shape() else {
            panic!("concat_channels: bad shape")
        };
        let channels: Vec<usize> = xs
            .iter()
            .map(|&id| {
                let s = self.value(id).shape();
                assert_eq!(s[0], p);
                assert_eq!(&s[2..], &[h, w]);
                s[1]
            })
            .collect();
        let c_total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Tensor::zeros(&[p, c_total, h, w]);
        {
            let out_data = out.data_mut();
            let mut c_off = 0;
            for (&id, &c) in xs.iter().zip(&channels) {
                let src = self.nodes[id.0].value.data();
                for pi in 0..p {
                    let dst_base = (pi * c_total + c_off) * plane;
                    let src_base = pi * c * plane;
                    out_data[dst_base..dst_base + c * plane]
                        .copy_from_slice(&src[src_base..src_base + c * plane]);
                }
                c_off += c;
            }
        }
        self.push(out, xs.to_vec(), Op::ConcatChannels { channels, plane })
    }

    /// `[p, c, h, w]` -> `[p, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let &[p, c, h, w] = self.value(x).shape() else {
            panic!("global_avg_pool: bad shape")
        };
        let plane = h * w;
        let n = T::from_usize_c(plane);
        let src = self.value(x).data();
        let mut out = Tensor::zeros(&[p, c]);
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let mut acc = T::zero();
            for v in &src[i * plane..(i + 1) * plane] {
                acc += *v;
            }
            *o = acc / n;
        }
        self.push(out, vec![x], Op::GlobalAvgPool { plane })
    }

    /// `x [rows, d_in] * w [d_in, d_out] + b [d_out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let &[rows, d_in] = self.value(x).shape() else {
            panic!("affine: bad input shape {:?}", self.value(x).shape())
        };
        let &[d_in2, d_out] = self.value(w).shape() else {
            panic!("affine: bad weight shape")
        };
        assert_eq!(d_in, d_in2, "affine dims mismatch");
        assert_eq!(self.value(b).shape(), &[d_out]);
        let mut out = Tensor::zeros(&[rows, d_out]);
        kernels::affine_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            rows,
            d_in,
            d_out,
            out.data_mut(),
        );
        self.push(out, vec![x, w, b], Op::Affine { rows, d_in, d_out })
    }

    /// Mean over each group of `group_size` consecutive rows.
    pub fn group_mean(&mut self, x: NodeId, groups: usize) -> NodeId {
        let &[rows, dim] = self.value(x).shape() else {
            panic!("group_mean: bad shape")
        };
        assert_eq!(rows % groups, 0);
        let group_size = rows / groups;
        let (mu, _) = stats::group_mean_std(self.value(x).data(), groups, group_size, dim);
        let out = Tensor::from_vec(&[groups, dim], mu);
        self.push(out, vec![x], Op::GroupMean { groups, group_size })
    }

    /// Sample std (n-1) over each group of consecutive rows; zero when a
    /// group has a single row.
    pub fn group_std(&mut self, x: NodeId, groups: usize) -> NodeId {
        let &[rows, dim] = self.value(x).shape() else {
            panic!("group_std: bad shape")
        };
        assert_eq!(rows % groups, 0);
        let group_size = rows / groups;
        let (_, sigma) = stats::group_mean_std(self.value(x).data(), groups, group_size, dim);
        let out = Tensor::from_vec(&[groups, dim], sigma);
        self.push(out, vec![x], Op::GroupStd { groups, group_size })
    }

    /// Standardizes each group of rows by the given per-group statistics:
    /// `(x - mu) / (sigma + 1e-9)`.
    pub fn normalize_rows(&mut self, x: NodeId, mu: NodeId, sigma: NodeId) -> NodeId {
        let &[rows, dim] = self.value(x).shape() else {
            panic!("normalize_rows: bad shape")
        };
        let &[groups, dim2] = self.value(mu).shape() else {
            panic!("normalize_rows: bad mu shape")
        };
        assert_eq!(dim, dim2);
        assert_eq!(self.value(sigma).shape(), &[groups, dim]);
        assert_eq!(rows % groups, 0);
        let group_size = rows / groups;
        let eps = T::from_f64c(stats::NORM_EPS);
        let mut out = Tensor::zeros(&[rows, dim]);
        {
            let xd = self.value(x).data();
            let mud = self.value(mu).data();
            let sd = self.value(sigma).data();
            let od = out.data_mut();
            for g in 0..groups {
                for r in 0..group_size {
                    let row = g * group_size + r;
                    for j in 0..dim {
                        od[row * dim + j] =
                            (xd[row * dim + j] - mud[g * dim + j]) / (sd[g * dim + j] + eps);
                    }
                }
            }
        }
        self.push(out, vec![x, mu, sigma], Op::NormalizeRows { groups, group_size })
    }

    /// Per-element KL divergence of `N(mu, sigma^2)` to the standard
    /// normal.
    pub fn kl_std_normal(&mut self, mu: NodeId, sigma: NodeId) -> NodeId {
        assert_eq!(self.value(mu).shape(), self.value(sigma).shape());
        let phi = stats::kl_to_standard_normal(self.value(mu).data(), self.value(sigma).data());
        let out = Tensor::from_vec(self.value(mu).shape(), phi);
        self.push(out, vec![mu, sigma], Op::KlStdNormal)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data);
        self.push(out, vec![a, b], Op::Mul)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data);
        self.push(out, vec![a, b], Op::Sub)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.value(x).map(|v| v + c);
        self.push(out, vec![x], Op::AddScalar)
    }

    /// Squared Euclidean norm of each row: `[rows, d] -> [rows]`.
    pub fn row_sum_sq(&mut self, x: NodeId) -> NodeId {
        let &[rows, dim] = self.value(x).shape() else {
            panic!("row_sum_sq: bad shape")
        };
        let src = self.value(x).data();
        let data: Vec<T> = (0..rows)
            .map(|r| {
                let mut acc = T::zero();
                for v in &src[r * dim..(r + 1) * dim] {
                    acc += *v * *v;
                }
                acc
            })
            .collect();
        let out = Tensor::from_vec(&[rows], data);
        self.push(out, vec![x], Op::RowSumSq)
    }

    /// Mean over all elements -> 0-d scalar.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = T::from_usize_c(self.value(x).len());
        let mut acc = T::zero();
        for v in self.value(x).data() {
            acc += *v;
        }
        let out = Tensor::scalar(acc / n);
        self.push(out, vec![x], Op::MeanAll)
    }

    /// Rows `[start, start+len)` along the first axis.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        assert!(!shape.is_empty());
        let row: usize = shape[1..].iter().product();
        assert!(start + len <= shape[0]);
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let out = Tensor::from_vec(&out_shape, data);
        self.push(out, vec![x], Op::SliceRows { start, row })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let out = self.value(x).clone().reshaped(shape);
        self.push(out, vec![x], Op::Reshape)
    }

    /// Mean softmax cross-entropy of `[rows, k]` logits against integer
    /// labels, stabilized by per-row max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let &[rows, k] = self.value(logits).shape() else {
            panic!("softmax_cross_entropy: bad shape")
        };
        assert_eq!(labels.len(), rows);
        assert!(labels.iter().all(|&l| l < k), "label out of range");
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * k];
        let mut loss = T::zero();
        for r in 0..rows {
            let row = &src[r * k..(r + 1) * k];
            let m = row.iter().fold(row[0], |a, &b| a.max(b));
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + j] = e;
                z += e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p = *p / z;
            }
            loss += -(probs[r * k + labels[r]].ln());
        }
        let out = Tensor::scalar(loss / T::from_usize_c(rows));
        self.push(
            out,
            vec![logits],
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean absolute error of a `[rows]` prediction vector against a
    /// constant target.
    pub fn mean_abs_error(&mut self, pred: NodeId, target: &[T]) -> NodeId {
        let &[rows] = self.value(pred).shape() else {
            panic!("mean_abs_error: bad shape {:?}", self.value(pred).shape())
        };
        assert_eq!(target.len(), rows);
        let mut acc = T::zero();
        for (p, t) in self.value(pred).data().iter().zip(target) {
            acc += (*p - *t).abs();
        }
        let out = Tensor::scalar(acc / T::from_usize_c(rows));
        self.push(
            out,
            vec![pred],
            Op::MeanAbsError {
                target: target.to_vec(),
            },
        )
    }

    /// Squared MMD between the rows of `x` and `y` under a sum of
    /// Gaussian kernels. The bandwidths are frozen constants of the node.
    pub fn mmd_gaussian(&mut self, x: NodeId, y: NodeId, bandwidths: &[T]) -> NodeId {
        let v = stats::mmd_gaussian(self.value(x), self.value(y), bandwidths)
            .expect("mmd_gaussian graph op on validated inputs");
        let out = Tensor::scalar(v);
        self.push(
            out,
            vec![x, y],
            Op::MmdGaussian {
                bandwidths: bandwidths.to_vec(),
            },
        )
    }

    /// Left-to-right fold of `coeff_i * x_i` over scalar nodes. The fold
    /// order is the arithmetic contract for the loss-bundle identity.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> NodeId {
        assert!(!terms.is_empty());
        let mut acc = T::zero();
        for &(id, c) in terms {
            assert_eq!(self.value(id).len(), 1, "weighted_sum needs scalars");
            acc = acc + c * self.value(id).item();
        }
        let (ids, coeffs): (Vec<NodeId>, Vec<T>) = terms.iter().copied().unzip();
        self.push(Tensor::scalar(acc), ids, Op::WeightedSum { coeffs })
    }

    /// Smallest distance to a non-smooth switching surface anywhere in
    /// the graph: relu/sigmoid-free ops contribute nothing; relu inputs,
    /// max-pool runner-up gaps, absolute-error arguments and group stds
    /// do. Used by the gradient check to re-draw probes that sit on a
    /// kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    for &v in x.data() {
                        let a = v.to_f64c().abs();
                        if a > 0.0 {
                            margin = margin.min(a);
                        }
                    }
                }
                Op::MaxPool2 { argmax, h, w } => {
                    let x = self.nodes[node.inputs[0].0].value.data();
                    let (oh, ow) = (h / 2, w / 2);
                    for (o, &am) in argmax.iter().enumerate() {
                        let pl = o / (oh * ow);
                        let cell = o % (oh * ow);
                        let (oy, ox) = (cell / ow, cell % ow);
                        let i00 = pl * h * w + (2 * oy) * w + 2 * ox;
                        let best = x[am as usize].to_f64c();
                        for &i in &[i00, i00 + 1, i00 + w, i00 + w + 1] {
                            if i != am as usize {
                                let gap = best - x[i].to_f64c();
                                if gap > 0.0 {
                                    margin = margin.min(gap);
                                }
                            }
                        }
                    }
                }
                Op::MeanAbsError { target } => {
                    let p = self.nodes[node.inputs[0].0].value.data();
                    for (v, t) in p.iter().zip(target) {
                        let a = (v.to_f64c() - t.to_f64c()).abs();
                        if a > 0.0 {
                            margin = margin.min(a);
                        }
                    }
                }
                Op::GroupStd { .. } => {
                    // A std crossing zero flips the guarded backward
                    // branch; near-zero stds also blow up downstream
                    // normalization curvature.
                    for &v in node.value.data() {
                        let a = v.to_f64c();
                        if a > 1e-12 {
                            margin = margin.min(a);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from `root` (a scalar node). Returns per-node
    /// gradient tensors; intermediate grads are dropped once consumed,
    /// leaf grads are kept.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad && !matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.accumulate_input_grads(id, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Tensor<T>>],
        id: NodeId,
    ) -> Option<&'a mut Tensor<T>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        if grads[id.0].is_none() {
            grads[id.0] = Some(Tensor::zeros(self.nodes[id.0].value.shape()));
        }
        grads[id.0].as_mut()
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate_input_grads(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            Op::Conv2d { dims } => {
                let (x, w) = (ins[0], ins[1]);
                if let Some(dx) = self.grad_buf(grads, x) {
                    kernels::conv2d_backward_input(
                        g.data(),
                        self.value(w).data(),
                        *dims,
                        dx.data_mut(),
                    );
                }
                let need_w = self.nodes[ins[1].0].needs_grad;
                let need_b = self.nodes[ins[2].0].needs_grad;
                if need_w || need_b {
                    let mut dw = Tensor::zeros(self.value(ins[1]).shape());
                    let mut db = Tensor::zeros(self.value(ins[2]).shape());
                    kernels::conv2d_backward_params(
                        g.data(),
                        self.value(x).data(),
                        *dims,
                        dw.data_mut(),
                        db.data_mut(),
                    );
                    if let Some(buf) = self.grad_buf(grads, ins[1]) {
                        add_into(buf.data_mut(), dw.data());
                    }
                    if let Some(buf) = self.grad_buf(grads, ins[2]) {
                        add_into(buf.data_mut(), db.data());
                    }
                }
            }
            Op::Relu => {
                let xv = self.value(ins[0]).data();
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    for ((d, &gv), &x) in dx.data_mut().iter_mut().zip(g.data()).zip(xv) {
                        if x > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid => {
                let s = node.value.data();
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    for ((d, &gv), &sv) in dx.data_mut().iter_mut().zip(g.data()).zip(s) {
                        *d += gv * sv * (T::one() - sv);
                    }
                }
            }
            Op::MaxPool2 { argmax, .. } => {
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    kernels::maxpool2_backward(g.data(), argmax, dx.data_mut());
                }
            }
            Op::AdaptiveMeanPool { h, w, out_hw } => {
                let planes = self.value(ins[0]).len() / (h * w);
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    kernels::adaptive_mean_pool_backward(
                        g.data(),
                        planes,
                        *h,
                        *w,
                        *out_hw,
                        dx.data_mut(),
                    );
                }
            }
            Op::AdaptiveStdPool { h, w, out_hw } => {
                let planes = self.value(ins[0]).len() / (h * w);
                let xv = self.value(ins[0]).data();
                let sv = node.value.data();
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    kernels::adaptive_std_pool_backward(
                        g.data(),
                        xv,
                        sv,
                        planes,
                        *h,
                        *w,
                        *out_hw,
                        dx.data_mut(),
                    );
                }
            }
            Op::ConcatChannels { channels, plane } => {
                let c_total: usize = channels.iter().sum();
                let p = node.value.shape()[0];
                let mut c_off = 0;
                for (slot, &c) in channels.iter().enumerate() {
                    if let Some(dx) = self.grad_buf(grads, ins[slot]) {
                        let dd = dx.data_mut();
                        for pi in 0..p {
                            let src_base = (pi * c_total + c_off) * plane;
                            let dst_base = pi * c * plane;
                            for i in 0..c * plane {
                                dd[dst_base + i] += g.data()[src_base + i];
                            }
                        }
                    }
                    c_off += c;
                }
            }
            Op::GlobalAvgPool { plane } => {
                let n = T::from_usize_c(*plane);
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for (i, &gv) in g.data().iter().enumerate() {
                        let gvn = gv / n;
                        for v in &mut dd[i * plane..(i + 1) * plane] {
                            *v += gvn;
                        }
                    }
                }
            }
            Op::Affine { rows, d_in, d_out } => {
                let (x, w) = (ins[0], ins[1]);
                let need_x = self.nodes[x.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let need_b = self.nodes[ins[2].0].needs_grad;
                let mut dx = Tensor::zeros(self.value(x).shape());
                let mut dw = Tensor::zeros(self.value(w).shape());
                let mut db = Tensor::zeros(self.value(ins[2]).shape());
                kernels::affine_backward(
                    g.data(),
                    self.value(x).data(),
                    self.value(w).data(),
                    *rows,
                    *d_in,
                    *d_out,
                    dx.data_mut(),
                    dw.data_mut(),
                    db.data_mut(),
                );
                if need_x {
                    if let Some(buf) = self.grad_buf(grads, x) {
                        add_into(buf.data_mut(), dx.data());
                    }
                }
                if need_w {
                    if let Some(buf) = self.grad_buf(grads, w) {
                        add_into(buf.data_mut(), dw.data());
                    }
                }
                if need_b {
                    if let Some(buf) = self.grad_buf(grads, ins[2]) {
                        add_into(buf.data_mut(), db.data());
                    }
                }
            }
            Op::GroupMean { groups, group_size } => {
                let dim = node.value.shape()[1];
                let n = T::from_usize_c(*group_size);
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for gi in 0..*groups {
                        let g_row = &g.data()[gi * dim..(gi + 1) * dim];
                        for r in 0..*group_size {
                            let row = (gi * group_size + r) * dim;
                            for j in 0..dim {
                                dd[row + j] += g_row[j] / n;
                            }
                        }
                    }
                }
            }
            Op::GroupStd { groups, group_size } => {
                // d sigma / d x_r = (x_r - mu) / ((n-1) sigma); zero at
                // sigma = 0 (constant group) where the true derivative
                // vanishes along feasible directions.
                if *group_size < 2 {
                    return;
                }
                let dim = node.value.shape()[1];
                let xv = self.value(ins[0]).data();
                let sv = node.value.data();
                let (mu, _) = stats::group_mean_std(xv, *groups, *group_size, dim);
                let denom = T::from_usize_c(*group_size - 1);
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for gi in 0..*groups {
                        for j in 0..dim {
                            let s = sv[gi * dim + j];
                            if s <= T::zero() {
                                continue;
                            }
                            let scale = g.data()[gi * dim + j] / (denom * s);
                            for r in 0..*group_size {
                                let idx = (gi * group_size + r) * dim + j;
                                dd[idx] += scale * (xv[idx] - mu[gi * dim + j]);
                            }
                        }
                    }
                }
            }
            Op::NormalizeRows { groups, group_size } => {
                let dim = node.value.shape()[1];
                let eps = T::from_f64c(stats::NORM_EPS);
                let xv = self.value(ins[0]).data();
                let muv = self.value(ins[1]).data();
                let sv = self.value(ins[2]).data();
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for gi in 0..*groups {
                        for r in 0..*group_size {
                            let row = (gi * group_size + r) * dim;
                            for j in 0..dim {
                                dd[row + j] += g.data()[row + j] / (sv[gi * dim + j] + eps);
                            }
                        }
                    }
                }
                if let Some(dmu) = self.grad_buf(grads, ins[1]) {
                    let dd = dmu.data_mut();
                    for gi in 0..*groups {
                        for r in 0..*group_size {
                            let row = (gi * group_size + r) * dim;
                            for j in 0..dim {
                                dd[gi * dim + j] -= g.data()[row + j] / (sv[gi * dim + j] + eps);
                            }
                        }
                    }
                }
                if let Some(dsig) = self.grad_buf(grads, ins[2]) {
                    let dd = dsig.data_mut();
                    for gi in 0..*groups {
                        for r in 0..*group_size {
                            let row = (gi * group_size + r) * dim;
                            for j in 0..dim {
                                let denom = sv[gi * dim + j] + eps;
                                dd[gi * dim + j] -=
                                    g.data()[row + j] * (xv[row + j] - muv[gi * dim + j])
                                        / (denom * denom);
                            }
                        }
                    }
                }
            }
            Op::KlStdNormal => {
                let clamp = T::from_f64c(stats::STD_CLAMP);
                let muv = self.value(ins[0]).data();
                let sv = self.value(ins[1]).data();
                if let Some(dmu) = self.grad_buf(grads, ins[0]) {
                    for ((d, &gv), &m) in dmu.data_mut().iter_mut().zip(g.data()).zip(muv) {
                        *d += gv * m;
                    }
                }
                if let Some(dsig) = self.grad_buf(grads, ins[1]) {
                    for ((d, &gv), &s) in dsig.data_mut().iter_mut().zip(g.data()).zip(sv) {
                        if s >= clamp {
                            *d += gv * (s - s.recip());
                        }
                    }
                }
            }
            Op::Mul => {
                let av = self.value(ins[0]).data();
                let bv = self.value(ins[1]).data();
                if let Some(da) = self.grad_buf(grads, ins[0]) {
                    for ((d, &gv), &b) in da.data_mut().iter_mut().zip(g.data()).zip(bv) {
                        *d += gv * b;
                    }
                }
                if let Some(db) = self.grad_buf(grads, ins[1]) {
                    for ((d, &gv), &a) in db.data_mut().iter_mut().zip(g.data()).zip(av) {
                        *d += gv * a;
                    }
                }
            }
            Op::Sub => {
                if let Some(da) = self.grad_buf(grads, ins[0]) {
                    add_into(da.data_mut(), g.data());
                }
                if let Some(db) = self.grad_buf(grads, ins[1]) {
                    for (d, &gv) in db.data_mut().iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                }
            }
            Op::AddScalar => {
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    add_into(dx.data_mut(), g.data());
                }
            }
            Op::RowSumSq => {
                let two = T::from_f64c(2.0);
                let xv = self.value(ins[0]).data();
                let dim = self.value(ins[0]).shape()[1];
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for (r, &gv) in g.data().iter().enumerate() {
                        for j in 0..dim {
                            dd[r * dim + j] += two * gv * xv[r * dim + j];
                        }
                    }
                }
            }
            Op::MeanAll => {
                let n = T::from_usize_c(self.value(ins[0]).len());
                let gv = g.item() / n;
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    for d in dx.data_mut() {
                        *d += gv;
                    }
                }
            }
            Op::SliceRows { start, row } => {
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for (i, &gv) in g.data().iter().enumerate() {
                        dd[start * row + i] += gv;
                    }
                }
            }
            Op::Reshape => {
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    add_into(dx.data_mut(), g.data());
                }
            }
            Op::SoftmaxCrossEntropy { labels, probs } => {
                let rows = labels.len();
                let k = self.value(ins[0]).shape()[1];
                let gv = g.item() / T::from_usize_c(rows);
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    let dd = dx.data_mut();
                    for r in 0..rows {
                        for j in 0..k {
                            let y = if labels[r] == j { T::one() } else { T::zero() };
                            dd[r * k + j] += gv * (probs[r * k + j] - y);
                        }
                    }
                }
            }
            Op::MeanAbsError { target } => {
                let rows = target.len();
                let gv = g.item() / T::from_usize_c(rows);
                let pv = self.value(ins[0]).data();
                if let Some(dx) = self.grad_buf(grads, ins[0]) {
                    for ((d, &p), &t) in dx.data_mut().iter_mut().zip(pv).zip(target) {
                        if p > t {
                            *d += gv;
                        } else if p < t {
                            *d -= gv;
                        }
                    }
                }
            }
            Op::MmdGaussian { bandwidths } => {
                self.mmd_backward(ins[0], ins[1], bandwidths, g.item(), grads);
            }
            Op::WeightedSum { coeffs } => {
                let gv = g.item();
                for (&input, &c) in ins.iter().zip(coeffs) {
                    if let Some(dx) = self.grad_buf(grads, input) {
                        dx.data_mut()[0] += gv * c;
                    }
                }
            }
        }
    }

    fn mmd_backward(
        &self,
        x: NodeId,
        y: NodeId,
        bandwidths: &[T],
        g: T,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xv = self.value(x);
        let yv = self.value(y);
        let (m, dim) = (xv.shape()[0], xv.shape()[1]);
        let n = yv.shape()[0];
        let two = T::from_f64c(2.0);
        // c(a, b) = sum_w k_w(|a-b|^2) / w^2, the scale of the kernel
        // gradient -c(a,b) (a - b).
        let coeff = |a: &[T], b: &[T]| {
            let mut d2 = T::zero();
            for (&p, &q) in a.iter().zip(b) {
                let d = p - q;
                d2 += d * d;
            }
            let mut c = T::zero();
            for &w in bandwidths {
                let w2 = w * w;
                c += (-d2 / (two * w2)).exp() / w2;
            }
            c
        };
        let xd = xv.data();
        let yd = yv.data();
        fn row<T>(d: &[T], i: usize, dim: usize) -> &[T] {
            &d[i * dim..(i + 1) * dim]
        }
        // dMMD/da_i = -(2/m^2) sum_b c(a_i,a_b)(a_i-a_b)
        //            + (2/mn)  sum_b c(a_i,o_b)(a_i-o_b)
        // for a row a_i of its own set against the other set o.
        let side = |own: &[T], own_rows: usize, other: &[T], other_rows: usize| -> Vec<Vec<T>> {
            let oo = T::from_usize_c(own_rows * own_rows);
            let mn = T::from_usize_c(own_rows * other_rows);
            crate::parallel::map_collect(own_rows, |i| {
                let ri = row(own, i, dim);
                let mut d = vec![T::zero(); dim];
                for b in 0..own_rows {
                    let rb = row(own, b, dim);
                    let c = coeff(ri, rb) * two / oo;
                    for j in 0..dim {
                        d[j] -= c * (ri[j] - rb[j]);
                    }
                }
                for b in 0..other_rows {
                    let rb = row(other, b, dim);
                    let c = coeff(ri, rb) * two / mn;
                    for j in 0..dim {
                        d[j] += c * (ri[j] - rb[j]);
                    }
                }
                d
            })
        };
        if self.nodes[x.0].needs_grad {
            let rows = side(xd, m, yd, n);
            if let Some(dx) = self.grad_buf(grads, x) {
                let dd = dx.data_mut();
                for (i, r) in rows.iter().enumerate() {
                    for j in 0..dim {
                        dd[i * dim + j] += g * r[j];
                    }
                }
            }
        }
        if self.nodes[y.0].needs_grad {
            let rows = side(yd, n, xd, m);
            if let Some(dy) = self.grad_buf(grads, y) {
                let dd = dy.data_mut();
                for (i, r) in rows.iter().enumerate() {
                    for j in 0..dim {
                        dd[i * dim + j] += g * r[j];
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
