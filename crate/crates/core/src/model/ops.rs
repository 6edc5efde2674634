//! Dense tensors and the forward/backward kernels the networks are built from.

use super::params::ParamSet;
use crate::image::ImageTensor;

/// Row-major matrix; rows are batch samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Splits columns at `at` into `(left, right)`.
    pub fn hsplit(&self, at: usize) -> (Matrix, Matrix) {
        let mut left = Matrix::zeros(self.rows, at);
        let mut right = Matrix::zeros(self.rows, self.cols - at);
        for i in 0..self.rows {
            let r = self.row(i);
            left.row_mut(i).copy_from_slice(&r[..at]);
            right.row_mut(i).copy_from_slice(&r[at..]);
        }
        (left, right)
    }
}

/// Batch of feature maps in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    /// Packs HWC images into an NCHW batch. All images must share a shape.
    pub fn from_images(images: &[ImageTensor]) -> Self {
        let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
        let mut out = Self::zeros(images.len(), 3, h, w);
        for (i, img) in images.iter().enumerate() {
            assert_eq!((img.height(), img.width()), (h, w), "batch images must share a shape");
            let dst = out.sample_mut(i);
            for (p, px) in img.data().chunks_exact(3).enumerate() {
                for ch in 0..3 {
                    dst[ch * h * w + p] = px[ch];
                }
            }
        }
        out
    }

    /// Unpacks a three-channel batch into HWC images.
    pub fn to_images(&self) -> Vec<ImageTensor> {
        assert_eq!(self.c, 3);
        let plane = self.h * self.w;
        (0..self.n)
            .map(|i| {
                let src = self.sample(i);
                let mut data = Vec::with_capacity(plane * 3);
                for p in 0..plane {
                    for ch in 0..3 {
                        data.push(src[ch * plane + p]);
                    }
                }
                ImageTensor::from_vec(self.h, self.w, data)
            })
            .collect()
    }
}

/// `C = alpha·op(A)·op(B) + beta·C` with row-major storage; `op` transposes when
/// the flag is set. `op(A)` is `m×k`, `op(B)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the strides used.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fully connected layer; weight is `[out, in]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn register(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: params.add(&format!("{name}.weight"), &[outputs, inputs], inputs),
            bias: params.add(&format!("{name}.bias"), &[outputs], 0),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols, self.inputs);
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for i in 0..x.rows {
            out.row_mut(i).copy_from_slice(params.get(self.bias));
        }
        gemm(x.rows, self.inputs, self.outputs, 1.0, &x.data, false, params.get(self.weight), true, 1.0, &mut out.data);
        out
    }

    /// Accumulates parameter gradients (when `grads` is given) and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &Matrix,
        grad_out: &Matrix,
        grads: Option<&mut [f64]>,
    ) -> Matrix {
        if let Some(g) = grads {
            let gw = params.range(self.weight);
            gemm(self.outputs, x.rows, self.inputs, 1.0, &grad_out.data, true, &x.data, false, 1.0, &mut g[gw]);
            let gb = &mut g[params.range(self.bias)];
            for row in grad_out.iter_rows() {
                for (b, v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        let mut dx = Matrix::zeros(x.rows, self.inputs);
        gemm(x.rows, self.outputs, self.inputs, 1.0, &grad_out.data, false, params.get(self.weight), false, 0.0, &mut dx.data);
        dx
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient through a row-wise softmax: `dz = p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows, probs.cols);
    for i in 0..probs.rows {
        let (p, g) = (probs.row(i), grad.row(i));
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (pi, gi)) in out.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
            *o = pi * (gi - dot);
        }
    }
    out
}

/// One step of a convolutional stack.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    /// 3×3 convolution, padding 1, optional ReLU.
    Conv {
        weight: usize,
        bias: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        relu: bool,
    },
    MaxPool2,
    Upsample2,
}

impl Op {
    pub fn conv(params: &mut ParamSet, name: &str, cin: usize, cout: usize, stride: usize, relu: bool) -> Self {
        Op::Conv {
            weight: params.add(&format!("{name}.weight"), &[cout, cin, 3, 3], cin * 9),
            bias: params.add(&format!("{name}.bias"), &[cout], 0),
            cin,
            cout,
            stride,
            relu,
        }
    }
}

fn conv_out(size: usize, stride: usize) -> usize {
    (size + 2 - 3) / stride + 1
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize, cols: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize, dx: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn op_forward(op: &Op, params: &ParamSet, x: &FeatureMap) -> FeatureMap {
    match *op {
        Op::Conv {
            weight,
            bias,
            cin,
            cout,
            stride,
            relu,
        } => {
            debug_assert_eq!(x.c, cin);
            let (ho, wo) = (conv_out(x.h, stride), conv_out(x.w, stride));
            let p = ho * wo;
            let mut out = FeatureMap::zeros(x.n, cout, ho, wo);
            let mut cols = vec![0.0; cin * 9 * p];
            let (wgt, b) = (params.get(weight), params.get(bias));
            for i in 0..x.n {
                im2col(x.sample(i), cin, x.h, x.w, stride, ho, wo, &mut cols);
                let dst = out.sample_mut(i);
                for (co, chunk) in dst.chunks_exact_mut(p).enumerate() {
                    chunk.fill(b[co]);
                }
                gemm(cout, cin * 9, p, 1.0, wgt, false, &cols, false, 1.0, dst);
                if relu {
                    for v in dst.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
            out
        }
        Op::MaxPool2 => {
            let (ho, wo) = (x.h / 2, x.w / 2);
            let mut out = FeatureMap::zeros(x.n, x.c, ho, wo);
            for plane in 0..x.n * x.c {
                let src = &x.data[plane * x.h * x.w..][..x.h * x.w];
                let dst = &mut out.data[plane * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (y, xx) = (2 * oy, 2 * ox);
                        dst[oy * wo + ox] = src[y * x.w + xx]
                            .max(src[y * x.w + xx + 1])
                            .max(src[(y + 1) * x.w + xx])
                            .max(src[(y + 1) * x.w + xx + 1]);
                    }
                }
            }
            out
        }
        Op::Upsample2 => {
            let (ho, wo) = (x.h * 2, x.w * 2);
            let mut out = FeatureMap::zeros(x.n, x.c, ho, wo);
            for plane in 0..x.n * x.c {
                let src = &x.data[plane * x.h * x.w..][..x.h * x.w];
                let dst = &mut out.data[plane * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        dst[oy * wo + ox] = src[(oy / 2) * x.w + ox / 2];
                    }
                }
            }
            out
        }
    }
}

fn op_backward(
    op: &Op,
    params: &ParamSet,
    x: &FeatureMap,
    y: &FeatureMap,
    grad_y: &FeatureMap,
    grads: Option<&mut [f64]>,
    want_input: bool,
) -> Option<FeatureMap> {
    match *op {
        Op::Conv {
            weight,
            bias,
            cin,
            cout,
            stride,
            relu,
        } => {
            let (ho, wo) = (y.h, y.w);
            let p = ho * wo;
            let mut dy = grad_y.data.clone();
            if relu {
                for (g, &v) in dy.iter_mut().zip(&y.data) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let mut dx = want_input.then(|| FeatureMap::zeros(x.n, cin, x.h, x.w));
            let mut cols = vec![0.0; cin * 9 * p];
            let mut dcols = vec![0.0; cin * 9 * p];
            let wrange = params.range(weight);
            let brange = params.range(bias);
            let wgt = params.get(weight);
            let mut grads = grads;
            for i in 0..x.n {
                let dyi = &dy[i * cout * p..(i + 1) * cout * p];
                if let Some(g) = grads.as_deref_mut() {
                    im2col(x.sample(i), cin, x.h, x.w, stride, ho, wo, &mut cols);
                    gemm(cout, p, cin * 9, 1.0, dyi, false, &cols, true, 1.0, &mut g[wrange.clone()]);
                    let gb = &mut g[brange.clone()];
                    for (co, chunk) in dyi.chunks_exact(p).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(cin * 9, cout, p, 1.0, wgt, true, dyi, false, 0.0, &mut dcols);
                    col2im(&dcols, cin, x.h, x.w, stride, ho, wo, dx.sample_mut(i));
                }
            }
            dx
        }
        Op::MaxPool2 => {
            if !want_input {
                return None;
            }
            let mut dx = FeatureMap::zeros(x.n, x.c, x.h, x.w);
            let (ho, wo) = (y.h, y.w);
            for plane in 0..x.n * x.c {
                let src = &x.data[plane * x.h * x.w..][..x.h * x.w];
                let g = &grad_y.data[plane * ho * wo..][..ho * wo];
                let dst = &mut dx.data[plane * x.h * x.w..][..x.h * x.w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let candidates = [
                            (2 * oy) * x.w + 2 * ox,
                            (2 * oy) * x.w + 2 * ox + 1,
                            (2 * oy + 1) * x.w + 2 * ox,
                            (2 * oy + 1) * x.w + 2 * ox + 1,
                        ];
                        // First maximum wins, matching the forward pass.
                        let mut best = candidates[0];
                        for &c in &candidates[1..] {
                            if src[c] > src[best] {
                                best = c;
                            }
                        }
                        dst[best] += g[oy * wo + ox];
                    }
                }
            }
            Some(dx)
        }
        Op::Upsample2 => {
            if !want_input {
                return None;
            }
            let mut dx = FeatureMap::zeros(x.n, x.c, x.h, x.w);
            let (ho, wo) = (y.h, y.w);
            for plane in 0..x.n * x.c {
                let g = &grad_y.data[plane * ho * wo..][..ho * wo];
                let dst = &mut dx.data[plane * x.h * x.w..][..x.h * x.w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        dst[(oy / 2) * x.w + ox / 2] += g[oy * wo + ox];
                    }
                }
            }
            Some(dx)
        }
    }
}

/// Runs a stack, returning every activation: `acts[0]` is the input and
/// `acts[i + 1]` the output of `ops[i]`.
pub(crate) fn stack_forward(ops: &[Op], params: &ParamSet, x: FeatureMap) -> Vec<FeatureMap> {
    let mut acts = Vec::with_capacity(ops.len() + 1);
    acts.push(x);
    for op in ops {
        let next = op_forward(op, params, acts.last().expect("non-empty"));
        acts.push(next);
    }
    acts
}

/// Backpropagates through a stack. Parameter gradients are accumulated when
/// `grads` is given; the input gradient is returned when `want_input` is set.
pub(crate) fn stack_backward(
    ops: &[Op],
    params: &ParamSet,
    acts: &[FeatureMap],
    grad_out: FeatureMap,
    mut grads: Option<&mut [f64]>,
    want_input: bool,
) -> Option<FeatureMap> {
    let mut grad = grad_out;
    for (i, op) in ops.iter().enumerate().rev() {
        let need_input = want_input || i > 0;
        match op_backward(op, params, &acts[i], &acts[i + 1], &grad, grads.as_deref_mut(), need_input) {
            Some(g) => grad = g,
            None => return None,
        }
    }
    Some(grad)
}

/// Spatial mean per channel: `[n, c, h, w] → [n, c]`.
pub(crate) fn global_avg_pool(x: &FeatureMap) -> Matrix {
    let plane = x.h * x.w;
    let mut out = Matrix::zeros(x.n, x.c);
    for (o, chunk) in out.data.iter_mut().zip(x.data.chunks_exact(plane)) {
        *o = chunk.iter().sum::<f64>() / plane as f64;
    }
    out
}

pub(crate) fn global_avg_pool_backward(grad: &Matrix, n: usize, c: usize, h: usize, w: usize) -> FeatureMap {
    let plane = h * w;
    let mut dx = FeatureMap::zeros(n, c, h, w);
    for (chunk, g) in dx.data.chunks_exact_mut(plane).zip(&grad.data) {
        chunk.fill(g / plane as f64);
    }
    dx
}
