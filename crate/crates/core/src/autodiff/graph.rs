//! The autodiff tape: eager forward evaluation plus reverse-mode backward.

use rand::Rng;
use rayon::prelude::*;

use super::{Scalar, Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

enum Op<S> {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize },
    MaxPool2 { x: usize, argmax: Vec<u8> },
    Upsample2 { x: usize },
    Relu { x: usize },
    DropoutTrain { x: usize, keep: Vec<bool>, scale: S },
    DropoutEval { x: usize },
    SoftmaxChannels { x: usize },
    ConcatChannels { xs: Vec<usize> },
    MseLoss { pred: usize, target: usize },
    CrossEntropyLoss { post: usize, labels: usize },
    WeightedSum { terms: Vec<(usize, f64)> },
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Reverse-mode tape. Build leaves, apply ops (values computed eagerly),
/// call [`Graph::backward`] on a scalar node, then read gradients off the
/// leaves. Repeated backward calls accumulate.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> TensorRef {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, r: TensorRef) -> &Tensor<S> {
        &self.nodes[r.0].value
    }

    /// Gradient of the last backward pass(es) w.r.t. this node, if any
    /// reached it.
    pub fn grad(&self, r: TensorRef) -> Option<&[S]> {
        self.nodes[r.0].grad.as_deref()
    }

    /// Reset every accumulated gradient to exact zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> TensorRef {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        TensorRef(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// 3x3 convolution, stride 1, zero same-padding.
    ///
    /// `x`: [n, in_c, h, w], `weight`: [out_c, in_c, 3, 3], `bias`: [out_c].
    pub fn conv2d(
        &mut self,
        x: TensorRef,
        weight: TensorRef,
        bias: TensorRef,
    ) -> Result<TensorRef, TensorError> {
        let (n, in_c, h, w) = self.nodes[x.0].value.nchw();
        let wshape = self.nodes[weight.0].value.shape().to_vec();
        let bshape = self.nodes[bias.0].value.shape().to_vec();
        if wshape.len() != 4 || wshape[1] != in_c || wshape[2] != 3 || wshape[3] != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d weight {wshape:?} incompatible with input channels {in_c}"
            )));
        }
        let out_c = wshape[0];
        if bshape != [out_c] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv2d bias {bshape:?}, expected [{out_c}]"
            )));
        }

        let mut out = Tensor::zeros(&[n, out_c, h, w]);
        {
            let xv = self.nodes[x.0].value.data();
            let wv = self.nodes[weight.0].value.data();
            let bv = self.nodes[bias.0].value.data();
            for bi in 0..n {
                let x_batch = &xv[bi * in_c * h * w..][..in_c * h * w];
                let y_batch = &mut out.data_mut()[bi * out_c * h * w..][..out_c * h * w];
                y_batch
                    .par_chunks_mut(h * w)
                    .enumerate()
                    .for_each(|(oc, y_plane)| {
                        y_plane.fill(bv[oc]);
                        for ic in 0..in_c {
                            let x_plane = &x_batch[ic * h * w..][..h * w];
                            let taps = &wv[(oc * in_c + ic) * 9..][..9];
                            accumulate_correlation(y_plane, x_plane, taps, h, w, false);
                        }
                    });
            }
        }
        let req = self.requires(&[x.0, weight.0, bias.0]);
        Ok(self.push(out, req, Op::Conv2d { x: x.0, w: weight.0, b: bias.0 }))
    }

    /// 2x2 max pooling, stride 2. Requires even spatial dims; gradient is
    /// routed to the first maximal element of each window in raster order.
    pub fn maxpool2(&mut self, x: TensorRef) -> Result<TensorRef, TensorError> {
        let (n, c, h, w) = self.nodes[x.0].value.nchw();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddSpatialDim(format!(
                "maxpool2 needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0u8; n * c * oh * ow];
        {
            let xv = self.nodes[x.0].value.data();
            let ov = out.data_mut();
            for plane in 0..n * c {
                let xp = &xv[plane * h * w..][..h * w];
                let op_ = &mut ov[plane * oh * ow..][..oh * ow];
                let ap = &mut argmax[plane * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = 2 * oy * w + 2 * ox;
                        let window = [xp[base], xp[base + 1], xp[base + w], xp[base + w + 1]];
                        let mut best = 0usize;
                        for (k, &v) in window.iter().enumerate().skip(1) {
                            if v > window[best] {
                                best = k;
                            }
                        }
                        op_[oy * ow + ox] = window[best];
                        ap[oy * ow + ox] = best as u8;
                    }
                }
            }
        }
        let req = self.requires(&[x.0]);
        Ok(self.push(out, req, Op::MaxPool2 { x: x.0, argmax }))
    }

    /// 2x2 nearest-neighbor upsampling; backward sums each 2x2 block.
    pub fn upsample2(&mut self, x: TensorRef) -> Result<TensorRef, TensorError> {
        let (n, c, h, w) = self.nodes[x.0].value.nchw();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        {
            let xv = self.nodes[x.0].value.data();
            let ov = out.data_mut();
            for plane in 0..n * c {
                let xp = &xv[plane * h * w..][..h * w];
                let op_ = &mut ov[plane * oh * ow..][..oh * ow];
                for y in 0..h {
                    for x0 in 0..w {
                        let v = xp[y * w + x0];
                        let base = 2 * y * ow + 2 * x0;
                        op_[base] = v;
                        op_[base + 1] = v;
                        op_[base + ow] = v;
                        op_[base + ow + 1] = v;
                    }
                }
            }
        }
        let req = self.requires(&[x.0]);
        Ok(self.push(out, req, Op::Upsample2 { x: x.0 }))
    }

    /// Elementwise max(0, x); subgradient 0 at exactly 0.
    pub fn relu(&mut self, x: TensorRef) -> TensorRef {
        let value = Tensor::from_vec(
            self.nodes[x.0].value.shape(),
            self.nodes[x.0].value.data().iter().map(|&v| v.max_s(S::ZERO)).collect(),
        );
        let req = self.requires(&[x.0]);
        self.push(value, req, Op::Relu { x: x.0 })
    }

    /// Inverted dropout: in training, each activation is zeroed
    /// independently with probability `rate` and survivors scale by
    /// 1/(1-rate); in inference it is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: TensorRef,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> TensorRef {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let req = self.requires(&[x.0]);
        if !training || rate == 0.0 {
            let value = self.nodes[x.0].value.clone();
            return self.push(value, req, Op::DropoutEval { x: x.0 });
        }
        let keep: Vec<bool> =
            (0..self.nodes[x.0].value.numel()).map(|_| rng.random::<f64>() >= rate).collect();
        let scale = S::from_f64(1.0 / (1.0 - rate));
        let value = Tensor::from_vec(
            self.nodes[x.0].value.shape(),
            self.nodes[x.0]
                .value
                .data()
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { v * scale } else { S::ZERO })
                .collect(),
        );
        self.push(value, req, Op::DropoutTrain { x: x.0, keep, scale })
    }

    /// Softmax over the channel axis at every pixel, stabilized by max
    /// subtraction.
    pub fn softmax_channels(&mut self, x: TensorRef) -> TensorRef {
        let (n, c, h, w) = self.nodes[x.0].value.nchw();
        let hw = h * w;
        let mut value = Tensor::zeros(&[n, c, h, w]);
        {
            let xv = self.nodes[x.0].value.data();
            let ov = value.data_mut();
            for bi in 0..n {
                let xb = &xv[bi * c * hw..][..c * hw];
                let ob = &mut ov[bi * c * hw..][..c * hw];
                for p in 0..hw {
                    let mut maxv = xb[p];
                    for ch in 1..c {
                        maxv = maxv.max_s(xb[ch * hw + p]);
                    }
                    let mut denom = 0.0f64;
                    for ch in 0..c {
                        denom += (xb[ch * hw + p] - maxv).to_f64().exp();
                    }
                    for ch in 0..c {
                        let e = (xb[ch * hw + p] - maxv).to_f64().exp();
                        ob[ch * hw + p] = S::from_f64(e / denom);
                    }
                }
            }
        }
        let req = self.requires(&[x.0]);
        self.push(value, req, Op::SoftmaxChannels { x: x.0 })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[TensorRef]) -> Result<TensorRef, TensorError> {
        assert!(!inputs.is_empty(), "concat_channels needs at least one input");
        let (n, _, h, w) = self.nodes[inputs[0].0].value.nchw();
        let mut total_c = 0usize;
        for &r in inputs {
            let (ni, ci, hi, wi) = self.nodes[r.0].value.nchw();
            if ni != n || hi != h || wi != w {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_channels: {:?} vs leading {:?}",
                    self.nodes[r.0].value.shape(),
                    self.nodes[inputs[0].0].value.shape()
                )));
            }
            total_c += ci;
        }
        let mut out = Tensor::zeros(&[n, total_c, h, w]);
        {
            let hw = h * w;
            let ov = out.data_mut();
            for bi in 0..n {
                let mut offset = 0usize;
                for &r in inputs {
                    let ci = self.nodes[r.0].value.shape()[1];
                    let src = &self.nodes[r.0].value.data()[bi * ci * hw..][..ci * hw];
                    ov[bi * total_c * hw + offset * hw..][..ci * hw].copy_from_slice(src);
                    offset += ci;
                }
            }
        }
        let ids: Vec<usize> = inputs.iter().map(|r| r.0).collect();
        let req = self.requires(&ids);
        Ok(self.push(out, req, Op::ConcatChannels { xs: ids }))
    }

    /// Mean squared error over all entries; scalar output.
    pub fn mse_loss(&mut self, pred: TensorRef, target: TensorRef) -> Result<TensorRef, TensorError> {
        if self.nodes[pred.0].value.shape() != self.nodes[target.0].value.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mse_loss: {:?} vs {:?}",
                self.nodes[pred.0].value.shape(),
                self.nodes[target.0].value.shape()
            )));
        }
        let mut acc = 0.0f64;
        for (&p, &t) in self.nodes[pred.0].value.data().iter().zip(self.nodes[target.0].value.data())
        {
            let d = p.to_f64() - t.to_f64();
            acc += d * d;
        }
        let mean = acc / self.nodes[pred.0].value.numel() as f64;
        let req = self.requires(&[pred.0, target.0]);
        Ok(self.push(
            Tensor::scalar(S::from_f64(mean)),
            req,
            Op::MseLoss { pred: pred.0, target: target.0 },
        ))
    }

    /// Mean over pixels of -log(posterior of the true class), with
    /// posteriors clamped to >= 1e-12 before the log. `posteriors` and
    /// `labels` are [n, c, h, w]; labels are one-hot per pixel.
    pub fn cross_entropy_loss(
        &mut self,
        posteriors: TensorRef,
        labels: TensorRef,
    ) -> Result<TensorRef, TensorError> {
        if self.nodes[posteriors.0].value.shape() != self.nodes[labels.0].value.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "cross_entropy_loss: {:?} vs {:?}",
                self.nodes[posteriors.0].value.shape(),
                self.nodes[labels.0].value.shape()
            )));
        }
        let (n, _c, h, w) = self.nodes[posteriors.0].value.nchw();
        let pixels = (n * h * w) as f64;
        let mut acc = 0.0f64;
        for (&p, &l) in
            self.nodes[posteriors.0].value.data().iter().zip(self.nodes[labels.0].value.data())
        {
            let lv = l.to_f64();
            if lv != 0.0 {
                acc -= lv * p.to_f64().max(CE_CLAMP).ln();
            }
        }
        let req = self.requires(&[posteriors.0, labels.0]);
        Ok(self.push(
            Tensor::scalar(S::from_f64(acc / pixels)),
            req,
            Op::CrossEntropyLoss { post: posteriors.0, labels: labels.0 },
        ))
    }

    /// Weighted sum of scalar nodes (used for the joint loss).
    pub fn weighted_sum(&mut self, terms: &[(TensorRef, f64)]) -> Result<TensorRef, TensorError> {
        let mut acc = 0.0f64;
        for &(r, weight) in terms {
            if self.nodes[r.0].value.numel() != 1 {
                return Err(TensorError::ShapeMismatch(format!(
                    "weighted_sum expects scalar terms, got {:?}",
                    self.nodes[r.0].value.shape()
                )));
            }
            acc += weight * self.nodes[r.0].value.data()[0].to_f64();
        }
        let ids: Vec<usize> = terms.iter().map(|(r, _)| r.0).collect();
        let req = self.requires(&ids);
        let terms = terms.iter().map(|&(r, w)| (r.0, w)).collect();
        Ok(self.push(Tensor::scalar(S::from_f64(acc)), req, Op::WeightedSum { terms }))
    }

    /// Reverse-mode pass from a scalar node. Gradients accumulate (+=)
    /// into every node reachable from `loss` that requires gradients, so
    /// separate backward calls over shared subgraphs sum.
    pub fn backward(&mut self, loss: TensorRef) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Propagate within per-pass buffers, then merge into the
        // persistent per-node grads; re-propagating previously
        // accumulated gradients would double-count shared paths.
        let mut pass: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        pass[loss.0] = Some(vec![S::ONE]);
        for i in (0..=loss.0).rev() {
            if pass[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let grad_out = pass[i].take().unwrap();
            self.propagate(i, &grad_out, &mut pass);
            pass[i] = Some(grad_out);
        }
        for (node, pass_grad) in self.nodes.iter_mut().zip(pass) {
            if let (true, Some(pg)) = (node.requires_grad, pass_grad) {
                match &mut node.grad {
                    Some(g) => {
                        for (dst, src) in g.iter_mut().zip(pg) {
                            *dst += src;
                        }
                    }
                    None => node.grad = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Push the output gradient of node `i` onto its inputs' pass buffers.
    fn propagate(&self, i: usize, grad_out: &[S], pass: &mut [Option<Vec<S>>]) {
        let inputs = &self.nodes;
        let node = &self.nodes[i];

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (n, in_c, h, w_sp) = inputs[x].value.nchw();
                let out_c = inputs[w].value.shape()[0];

                if inputs[b].requires_grad {
                    let mut db = vec![S::ZERO; out_c];
                    for bi in 0..n {
                        for oc in 0..out_c {
                            let gp = &grad_out[(bi * out_c + oc) * h * w_sp..][..h * w_sp];
                            let mut acc = 0.0f64;
                            for &g in gp {
                                acc += g.to_f64();
                            }
                            db[oc] += S::from_f64(acc);
                        }
                    }
                    add_pass(pass, b, &db);
                }
                if inputs[x].requires_grad {
                    let mut dx = vec![S::ZERO; n * in_c * h * w_sp];
                    {
                        let wv = inputs[w].value.data();
                        for bi in 0..n {
                            let g_batch = &grad_out[bi * out_c * h * w_sp..][..out_c * h * w_sp];
                            let dx_batch = &mut dx[bi * in_c * h * w_sp..][..in_c * h * w_sp];
                            dx_batch
                                .par_chunks_mut(h * w_sp)
                                .enumerate()
                                .for_each(|(ic, dx_plane)| {
                                    for oc in 0..out_c {
                                        let g_plane = &g_batch[oc * h * w_sp..][..h * w_sp];
                                        let taps = &wv[(oc * in_c + ic) * 9..][..9];
                                        accumulate_correlation(
                                            dx_plane, g_plane, taps, h, w_sp, true,
                                        );
                                    }
                                });
                        }
                    }
                    add_pass(pass, x, &dx);
                }
                if inputs[w].requires_grad {
                    let mut dw = vec![S::ZERO; out_c * in_c * 9];
                    {
                        let xv = inputs[x].value.data();
                        dw.par_chunks_mut(in_c * 9).enumerate().for_each(|(oc, dw_oc)| {
                            for bi in 0..n {
                                let g_plane =
                                    &grad_out[(bi * out_c + oc) * h * w_sp..][..h * w_sp];
                                for ic in 0..in_c {
                                    let x_plane = &xv[(bi * in_c + ic) * h * w_sp..][..h * w_sp];
                                    weight_grad_taps(
                                        &mut dw_oc[ic * 9..ic * 9 + 9],
                                        g_plane,
                                        x_plane,
                                        h,
                                        w_sp,
                                    );
                                }
                            }
                        });
                    }
                    add_pass(pass, w, &dw);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let x = *x;
                let (n, c, h, w) = inputs[x].value.nchw();
                let (oh, ow) = (h / 2, w / 2);
                if inputs[x].requires_grad {
                    let mut dx = vec![S::ZERO; n * c * h * w];
                    for plane in 0..n * c {
                        let gp = &grad_out[plane * oh * ow..][..oh * ow];
                        let ap = &argmax[plane * oh * ow..][..oh * ow];
                        let dp = &mut dx[plane * h * w..][..h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let k = ap[oy * ow + ox] as usize;
                                let base = 2 * oy * w + 2 * ox;
                                let idx = base + (k / 2) * w + (k % 2);
                                dp[idx] += gp[oy * ow + ox];
                            }
                        }
                    }
                    add_pass(pass, x, &dx);
                }
            }
            Op::Upsample2 { x } => {
                let x = *x;
                let (n, c, h, w) = inputs[x].value.nchw();
                let ow = 2 * w;
                if inputs[x].requires_grad {
                    let mut dx = vec![S::ZERO; n * c * h * w];
                    for plane in 0..n * c {
                        let gp = &grad_out[plane * 4 * h * w..][..4 * h * w];
                        let dp = &mut dx[plane * h * w..][..h * w];
                        for y in 0..h {
                            for x0 in 0..w {
                                let base = 2 * y * ow + 2 * x0;
                                dp[y * w + x0] +=
                                    gp[base] + gp[base + 1] + gp[base + ow] + gp[base + ow + 1];
                            }
                        }
                    }
                    add_pass(pass, x, &dx);
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if inputs[x].requires_grad {
                    let dx: Vec<S> = inputs[x]
                        .value
                        .data()
                        .iter()
                        .zip(grad_out)
                        .map(|(&v, &g)| if v > S::ZERO { g } else { S::ZERO })
                        .collect();
                    add_pass(pass, x, &dx);
                }
            }
            Op::DropoutTrain { x, keep, scale } => {
                let (x, scale) = (*x, *scale);
                if inputs[x].requires_grad {
                    let dx: Vec<S> = keep
                        .iter()
                        .zip(grad_out)
                        .map(|(&k, &g)| if k { g * scale } else { S::ZERO })
                        .collect();
                    add_pass(pass, x, &dx);
                }
            }
            Op::DropoutEval { x } => {
                let x = *x;
                if inputs[x].requires_grad {
                    let dx = grad_out.to_vec();
                    add_pass(pass, x, &dx);
                }
            }
            Op::SoftmaxChannels { x } => {
                let x = *x;
                let (n, c, h, w) = inputs[x].value.nchw();
                let hw = h * w;
                let yv = node.value.data();
                if inputs[x].requires_grad {
                    let mut dx = vec![S::ZERO; n * c * hw];
                    for bi in 0..n {
                        for p in 0..hw {
                            let mut dot = 0.0f64;
                            for ch in 0..c {
                                let idx = (bi * c + ch) * hw + p;
                                dot += grad_out[idx].to_f64() * yv[idx].to_f64();
                            }
                            for ch in 0..c {
                                let idx = (bi * c + ch) * hw + p;
                                dx[idx] = S::from_f64(
                                    yv[idx].to_f64() * (grad_out[idx].to_f64() - dot),
                                );
                            }
                        }
                    }
                    add_pass(pass, x, &dx);
                }
            }
            Op::ConcatChannels { xs } => {
                let xs = xs.clone();
                let (n, total_c, h, w) = node.value.nchw();
                let hw = h * w;
                let mut offset = 0usize;
                for &xid in &xs {
                    let ci = inputs[xid].value.shape()[1];
                    if inputs[xid].requires_grad {
                        let mut dxi = vec![S::ZERO; n * ci * hw];
                        for bi in 0..n {
                            let src = &grad_out[bi * total_c * hw + offset * hw..][..ci * hw];
                            dxi[bi * ci * hw..][..ci * hw]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &s)| *d += s);
                        }
                        add_pass(pass, xid, &dxi);
                    }
                    offset += ci;
                }
            }
            Op::MseLoss { pred, target } => {
                let (pred, target) = (*pred, *target);
                let g = grad_out[0].to_f64();
                let numel = inputs[pred].value.numel() as f64;
                let factor = 2.0 * g / numel;
                if inputs[pred].requires_grad || inputs[target].requires_grad {
                    let diffs: Vec<S> = inputs[pred]
                        .value
                        .data()
                        .iter()
                        .zip(inputs[target].value.data())
                        .map(|(&p, &t)| S::from_f64(factor * (p.to_f64() - t.to_f64())))
                        .collect();
                    if inputs[pred].requires_grad {
                        add_pass(pass, pred, &diffs);
                    }
                    if inputs[target].requires_grad {
                        let neg: Vec<S> = diffs.iter().map(|&d| -d).collect();
                        add_pass(pass, target, &neg);
                    }
                }
            }
            Op::CrossEntropyLoss { post, labels } => {
                let (post, labels) = (*post, *labels);
                let (n, _c, h, w) = inputs[post].value.nchw();
                let pixels = (n * h * w) as f64;
                let g = grad_out[0].to_f64();
                if inputs[post].requires_grad {
                    let dp: Vec<S> = inputs[post]
                        .value
                        .data()
                        .iter()
                        .zip(inputs[labels].value.data())
                        .map(|(&p, &l)| {
                            let lv = l.to_f64();
                            let pv = p.to_f64();
                            if lv != 0.0 && pv >= CE_CLAMP {
                                S::from_f64(-g * lv / pv / pixels)
                            } else {
                                S::ZERO
                            }
                        })
                        .collect();
                    add_pass(pass, post, &dp);
                }
            }
            Op::WeightedSum { terms } => {
                let terms = terms.clone();
                let g = grad_out[0].to_f64();
                for (id, weight) in terms {
                    if inputs[id].requires_grad {
                        let contribution = [S::from_f64(g * weight)];
                        add_pass(pass, id, &contribution);
                    }
                }
            }
        }
    }
}

const CE_CLAMP: f64 = 1e-12;

/// Accumulate a gradient contribution into a pass buffer.
fn add_pass<S: Scalar>(pass: &mut [Option<Vec<S>>], idx: usize, contribution: &[S]) {
    match &mut pass[idx] {
        Some(buf) => {
            debug_assert_eq!(buf.len(), contribution.len());
            for (dst, &src) in buf.iter_mut().zip(contribution) {
                *dst += src;
            }
        }
        None => pass[idx] = Some(contribution.to_vec()),
    }
}

/// dst[y, x] += sum_{ky,kx} taps[ky*3+kx] * src[y + ky - 1, x + kx - 1]
/// with zero padding; `transpose` flips the tap offsets, which turns the
/// correlation into its adjoint (used for input gradients).
#[inline]
fn accumulate_correlation<S: Scalar>(
    dst: &mut [S],
    src: &[S],
    taps: &[S],
    h: usize,
    w: usize,
    transpose: bool,
) {
    for ky in 0..3usize {
        for kx in 0..3usize {
            let tap = taps[ky * 3 + kx];
            let (dy, dx) = if transpose {
                (1 - ky as isize, 1 - kx as isize)
            } else {
                (ky as isize - 1, kx as isize - 1)
            };
            let y_start = if dy < 0 { (-dy) as usize } else { 0 };
            let y_end = if dy > 0 { h - dy as usize } else { h };
            let x_start = if dx < 0 { (-dx) as usize } else { 0 };
            let x_end = if dx > 0 { w - dx as usize } else { w };
            if x_start >= x_end {
                continue;
            }
            for y in y_start..y_end {
                let sy = (y as isize + dy) as usize;
                let drow = &mut dst[y * w + x_start..y * w + x_end];
                let srow = &src[sy * w + (x_start as isize + dx) as usize
                    ..sy * w + (x_end as isize + dx) as usize];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += tap * s;
                }
            }
        }
    }
}

/// taps[ky*3+kx] += sum_{y,x valid} g[y, x] * x[y + ky - 1, x + kx - 1]
#[inline]
fn weight_grad_taps<S: Scalar>(taps: &mut [S], g: &[S], x: &[S], h: usize, w: usize) {
    for ky in 0..3usize {
        for kx in 0..3usize {
            let dy = ky as isize - 1;
            let dx = kx as isize - 1;
            let y_start = if dy < 0 { (-dy) as usize } else { 0 };
            let y_end = if dy > 0 { h - dy as usize } else { h };
            let x_start = if dx < 0 { (-dx) as usize } else { 0 };
            let x_end = if dx > 0 { w - dx as usize } else { w };
            if x_start >= x_end {
                continue;
            }
            let mut acc = S::ZERO;
            for y in y_start..y_end {
                let sy = (y as isize + dy) as usize;
                let grow = &g[y * w + x_start..y * w + x_end];
                let xrow = &x[sy * w + (x_start as isize + dx) as usize
                    ..sy * w + (x_end as isize + dx) as usize];
                for (&gv, &xv) in grow.iter().zip(xrow) {
                    acc += gv * xv;
                }
            }
            taps[ky * 3 + kx] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leafs(g: &mut Graph<f64>, shape: &[usize], data: Vec<f64>, req: bool) -> TensorRef {
        g.leaf(Tensor::from_vec(shape, data), req)
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 2, 3, 4], (0..24).map(|v| v as f64).collect(), false);
        // Two output channels, each passing through one input channel.
        let mut wdata = vec![0.0; 2 * 2 * 9];
        wdata[0 * 18 + 0 * 9 + 4] = 1.0; // out 0 <- in 0 center
        wdata[1 * 18 + 1 * 9 + 4] = 1.0; // out 1 <- in 1 center
        let w = leafs(&mut g, &[2, 2, 3, 3], wdata, false);
        let b = leafs(&mut g, &[2], vec![0.0, 0.0], false);
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_box_sum_interior() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 4, 4], vec![1.0; 16], false);
        let w = leafs(&mut g, &[1, 1, 3, 3], vec![1.0; 9], false);
        let b = leafs(&mut g, &[1], vec![0.0], false);
        let y = g.conv2d(x, w, b).unwrap();
        // Interior pixel sees the full 3x3 box.
        assert_eq!(g.value(y).data()[1 * 4 + 1], 9.0);
        // Corner sees a 2x2 box.
        assert_eq!(g.value(y).data()[0], 4.0);
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 2, 4, 4], vec![0.0; 32], false);
        let w = leafs(&mut g, &[1, 3, 3, 3], vec![0.0; 27], false);
        let b = leafs(&mut g, &[1], vec![0.0], false);
        assert!(matches!(g.conv2d(x, w, b), Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], true);
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_odd_dims_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 3, 4], vec![0.0; 12], false);
        assert!(matches!(g.maxpool2(x), Err(TensorError::OddSpatialDim(_))));
    }

    #[test]
    fn maxpool_tie_breaks_to_first_raster() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0], true);
        let y = g.maxpool2(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_replicates_and_is_undone_by_maxpool() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 1, 1], vec![5.0], false);
        let y = g.upsample2(x).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 5.0, 5.0, 5.0]);

        let z = leafs(&mut g, &[1, 2, 2, 2], (0..8).map(|v| v as f64).collect(), false);
        let up = g.upsample2(z).unwrap();
        let back = g.maxpool2(up).unwrap();
        assert_eq!(g.value(back).data(), g.value(z).data());
    }

    #[test]
    fn relu_values() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 1, 2], vec![-3.0, 3.0], false);
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g: Graph<f32> = Graph::new();
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 0.3).collect();
        let x = g.leaf(Tensor::from_vec(&[1, 3, 2, 2], data.clone()), false);
        let y = g.dropout(x, 0.2, false, &mut rng);
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn dropout_training_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 10, 10], vec![1.0; 100], false);
        let y = g.dropout(x, 0.2, true, &mut rng);
        let scale = 1.0 / 0.8;
        let mut kept = 0;
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - scale).abs() < 1e-12);
            if v != 0.0 {
                kept += 1;
            }
        }
        assert!((60..=95).contains(&kept), "kept {kept} of 100 at rate 0.2");
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 2, 1, 1], vec![0.0, 0.0], false);
        let y = g.softmax_channels(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let z = leafs(&mut g, &[1, 3, 2, 2], (0..12).map(|v| v as f64 * 0.7 - 2.0).collect(), false);
        let sz = g.softmax_channels(z);
        for p in 0..4 {
            let sum: f64 = (0..3).map(|c| g.value(sz).data()[c * 4 + p]).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for c in 0..3 {
                let v = g.value(sz).data()[c * 4 + p];
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn mse_identity_and_shape_check() {
        let mut g: Graph<f64> = Graph::new();
        let a = leafs(&mut g, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let l = g.mse_loss(a, a).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
        let b = leafs(&mut g, &[1, 1, 1, 4], vec![0.0; 4], false);
        assert!(matches!(g.mse_loss(a, b), Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut g: Graph<f64> = Graph::new();
        let p = leafs(&mut g, &[1, 2, 1, 1], vec![0.5, 0.5], false);
        let l = leafs(&mut g, &[1, 2, 1, 1], vec![1.0, 0.0], false);
        let loss = g.cross_entropy_loss(p, l).unwrap();
        assert!((g.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn concat_and_split_gradients() {
        let mut g: Graph<f64> = Graph::new();
        let a = leafs(&mut g, &[1, 1, 1, 2], vec![1.0, 2.0], true);
        let b = leafs(&mut g, &[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0], true);
        let y = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 1, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = leafs(&mut g, &[1, 3, 1, 2], vec![0.0; 6], false);
        let loss = g.mse_loss(y, t).unwrap();
        g.backward(loss).unwrap();
        // d/da mean((a)^2 over 6 entries) = 2a/6
        assert!((g.grad(a).unwrap()[0] - 2.0 / 6.0).abs() < 1e-12);
        assert!((g.grad(b).unwrap()[3] - 12.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_accumulation_linearity() {
        let build = |g: &mut Graph<f64>| {
            let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.25]), true);
            let t1 = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![0.0; 4]), false);
            let t2 = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]), false);
            let r = g.relu(x);
            let l1 = g.mse_loss(r, t1).unwrap();
            let l2 = g.mse_loss(r, t2).unwrap();
            (x, l1, l2)
        };
        let mut g1: Graph<f64> = Graph::new();
        let (x1, a1, b1) = build(&mut g1);
        let joint = g1.weighted_sum(&[(a1, 1.0), (b1, 1.0)]).unwrap();
        g1.backward(joint).unwrap();

        let mut g2: Graph<f64> = Graph::new();
        let (x2, a2, b2) = build(&mut g2);
        g2.backward(a2).unwrap();
        g2.backward(b2).unwrap();

        for (u, v) in g1.grad(x1).unwrap().iter().zip(g2.grad(x2).unwrap()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_resets() {
        let mut g: Graph<f64> = Graph::new();
        let x = leafs(&mut g, &[1, 1, 2, 2], vec![1.0; 4], true);
        let t = leafs(&mut g, &[1, 1, 2, 2], vec![0.0; 4], false);
        let l = g.mse_loss(x, t).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().any(|&v| v != 0.0));
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }
}
