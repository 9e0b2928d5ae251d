use super::{Op, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{self, Tensor};

/// Row-major matrix of indices, one row per query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(dim_err(format!(
                "index matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.cols + j]
    }
}

/// Kernel-sharing scheme for the [`Tape::conv1d`] primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conv1dKind {
    /// `weight: [out, c, kernel]`
    Regular,
    /// `weight: [c, kernel]`, one kernel per channel
    Depthwise,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let (m2, p) = self.value(b).dims2()?;
        if m != m2 {
            return Err(dim_err(format!(
                "matmul inner extents differ: [{n}, {m}] x [{m2}, {p}]"
            )));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for l in 0..m {
                let av = ad[i * m + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[l * p..(l + 1) * p];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(&[n, p], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "add")?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "mul")?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// `x[n, c] + bias[c]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        let bv = self.value(bias);
        if bv.len() != c {
            return Err(dim_err(format!(
                "bias of length {} does not match {c} columns",
                bv.len()
            )));
        }
        let mut data = self.value(x).data().to_vec();
        for i in 0..n {
            for (d, b) in data[i * c..(i + 1) * c].iter_mut().zip(bv.data()) {
                *d += b;
            }
        }
        let value = Tensor::new(&[n, c], data)?;
        Ok(self.push(value, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, k) = self.value(x).dims2()?;
        let mut data = self.value(x).data().to_vec();
        for i in 0..n {
            softmax_in_place(&mut data[i * k..(i + 1) * k]);
        }
        let value = Tensor::new(&[n, k], data)?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Each row divided by `max(norm, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        let mut data = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut data[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            for v in row.iter_mut() {
                *v /= denom;
            }
            norms.push(norm);
        }
        let value = Tensor::new(&[n, d], data)?;
        Ok(self.push(value, Op::L2NormalizeRows { x, eps, norms }, &[x]))
    }

    /// Per-row layer normalization with learnable gain and bias over columns.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(dim_err("layer norm gain/bias must match column count"));
        }
        let xd = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; n * c];
        let mut inv_std = Vec::with_capacity(n);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
            inv_std.push(is);
        }
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push(
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// `out[i, :] = w[i] * x[i, :]` for `x: [m, c]` and `w` with `m` entries.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, c) = xv.dims2()?;
        let wv = self.value(w);
        if wv.len() != m {
            return Err(dim_err(format!(
                "row weights of length {} for {m} rows",
                wv.len()
            )));
        }
        let mut data = xv.data().to_vec();
        for (i, &s) in wv.data().iter().enumerate() {
            for v in &mut data[i * c..(i + 1) * c] {
                *v *= s;
            }
        }
        let value = Tensor::new(&[m, c], data)?;
        Ok(self.push(value, Op::ScaleRows(x, w), &[x, w]))
    }

    /// `out[r, :] = x[idx[r], :]`; output is `[idx.len(), c]`.
    pub fn gather_rows_flat(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(x).select_rows(idx)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// `out[:, t] = scale[t] * x[:, idx[t]]` for `x: [c, n]`; output is
    /// `[c, idx.len()]`. Without `scale` this is a plain column gather.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize], scale: Option<Var>) -> Result<Var> {
        let (c, n) = self.value(x).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Index { index: bad, extent: n });
        }
        let m = idx.len();
        let sd = match scale {
            Some(s) if self.value(s).len() != m => {
                return Err(dim_err(format!(
                    "column scales of length {} for {m} columns",
                    self.value(s).len()
                )))
            }
            Some(s) => Some(self.value(s).data()),
            None => None,
        };
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * m);
        for ch in 0..c {
            let row = &xd[ch * n..(ch + 1) * n];
            match sd {
                Some(sd) => out.extend(idx.iter().zip(sd).map(|(&j, &s)| s * row[j])),
                None => out.extend(idx.iter().map(|&j| row[j])),
            }
        }
        let value = Tensor::new(&[c, m], out)?;
        let mut inputs = vec![x];
        inputs.extend(scale);
        Ok(self.push(
            value,
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
                scale,
            },
            &inputs,
        ))
    }

    /// `out[i, j, :] = v[idx[i, j], :]`, output `[n, k, c]`.
    pub fn gather_rows(&mut self, v: Var, idx: &IndexMatrix) -> Result<Var> {
        let c = self.value(v).dims2()?.1;
        let flat = self.gather_rows_flat(v, idx.data())?;
        self.reshape(flat, &[idx.rows(), idx.cols(), c])
    }

    /// `out[i, j] = x[i, idx[i, j]]` for `x: [n, m]`.
    pub fn gather_elements(&mut self, x: Var, idx: &IndexMatrix) -> Result<Var> {
        let (n, m) = self.value(x).dims2()?;
        if idx.rows() != n {
            return Err(dim_err(format!(
                "index rows {} do not match {n} rows",
                idx.rows()
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * idx.cols());
        for i in 0..n {
            for &j in idx.row(i) {
                if j >= m {
                    return Err(Error::Index { index: j, extent: m });
                }
                out.push(xd[i * m + j]);
            }
        }
        let value = Tensor::new(&[n, idx.cols()], out)?;
        Ok(self.push(
            value,
            Op::GatherElements {
                x,
                idx: idx.clone(),
            },
            &[x],
        ))
    }

    /// Concatenation along axis 0; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != tail[..] {
                return Err(dim_err(format!(
                    "concat_rows: trailing shape {:?} vs {:?}",
                    &v.shape()[1..],
                    tail
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Concatenation of rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat of zero tensors"))?;
        let n = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != n {
                return Err(dim_err(format!("concat_cols: {r} rows vs {n}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(&[n, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Strided 1D convolution (cross-correlation) over `x: [c, len]` with no
    /// padding. Output length is `floor((len - kernel) / stride) + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        kind: Conv1dKind,
        stride: usize,
    ) -> Result<Var> {
        let (c, len) = self.value(x).dims2()?;
        if stride == 0 {
            return Err(dim_err("conv1d stride must be positive"));
        }
        let wshape = self.shape(weight).to_vec();
        let (out_ch, kernel) = match (kind, &wshape[..]) {
            (Conv1dKind::Regular, &[o, wc, k]) if wc == c => (o, k),
            (Conv1dKind::Depthwise, &[wc, k]) if wc == c => (c, k),
            _ => {
                return Err(dim_err(format!(
                    "conv1d {kind:?} weight {wshape:?} incompatible with {c} input channels"
                )))
            }
        };
        if kernel > len {
            return Err(dim_err(format!(
                "conv1d kernel {kernel} exceeds input length {len}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != out_ch {
                return Err(dim_err("conv1d bias length must equal output channels"));
            }
        }
        let out_len = (len - kernel) / stride + 1;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let mut out = vec![0.0; out_ch * out_len];
        match kind {
            Conv1dKind::Regular => {
                for o in 0..out_ch {
                    let orow = &mut out[o * out_len..(o + 1) * out_len];
                    for ci in 0..c {
                        let xrow = &xd[ci * len..(ci + 1) * len];
                        let wrow = &wd[(o * c + ci) * kernel..(o * c + ci + 1) * kernel];
                        for (t, ov) in orow.iter_mut().enumerate() {
                            let base = t * stride;
                            let mut acc = 0.0;
                            for (j, &w) in wrow.iter().enumerate() {
                                acc += w * xrow[base + j];
                            }
                            *ov += acc;
                        }
                    }
                }
            }
            Conv1dKind::Depthwise => {
                for ci in 0..c {
                    let xrow = &xd[ci * len..(ci + 1) * len];
                    let wrow = &wd[ci * kernel..(ci + 1) * kernel];
                    for t in 0..out_len {
                        let base = t * stride;
                        let mut acc = 0.0;
                        for (j, &w) in wrow.iter().enumerate() {
                            acc += w * xrow[base + j];
                        }
                        out[ci * out_len + t] = acc;
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for o in 0..out_ch {
                for v in &mut out[o * out_len..(o + 1) * out_len] {
                    *v += bd[o];
                }
            }
        }
        let value = Tensor::new(&[out_ch, out_len], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                weight,
                bias,
                kind,
                stride,
            },
            &inputs,
        ))
    }

    /// Stride-1 2D cross-correlation over `x: [c, rows, cols]` with
    /// `weight: [out, c, k, k]` and `pad` zeros on every border.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let (c, rows, cols) = self.value(x).dims3()?;
        let wshape = self.shape(weight).to_vec();
        let (out_ch, kh, kw) = match wshape[..] {
            [o, wc, kh, kw] if wc == c => (o, kh, kw),
            _ => {
                return Err(dim_err(format!(
                    "conv2d weight {wshape:?} incompatible with {c} input channels"
                )))
            }
        };
        if kh > rows + 2 * pad || kw > cols + 2 * pad {
            return Err(dim_err("conv2d kernel exceeds padded input"));
        }
        if let Some(b) = bias {
            if self.value(b).len() != out_ch {
                return Err(dim_err("conv2d bias length must equal output channels"));
            }
        }
        let orows = rows + 2 * pad - kh + 1;
        let ocols = cols + 2 * pad - kw + 1;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let mut out = vec![0.0; out_ch * orows * ocols];
        for o in 0..out_ch {
            let oplane = &mut out[o * orows * ocols..(o + 1) * orows * ocols];
            for ci in 0..c {
                let xplane = &xd[ci * rows * cols..(ci + 1) * rows * cols];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let w = wd[((o * c + ci) * kh + ki) * kw + kj];
                        if w == 0.0 {
                            continue;
                        }
                        conv2d_tap(xplane, oplane, w, ki, kj, pad, rows, cols, orows, ocols);
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for o in 0..out_ch {
                for v in &mut out[o * orows * ocols..(o + 1) * orows * ocols] {
                    *v += bd[o];
                }
            }
        }
        let value = Tensor::new(&[out_ch, orows, ocols], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                pad,
            },
            &inputs,
        ))
    }

    /// 2x2 max pooling with stride 2 over `[c, rows, cols]`; extents must be even.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, rows, cols) = self.value(x).dims3()?;
        if rows % 2 != 0 || cols % 2 != 0 {
            return Err(dim_err(format!("max_pool2 needs even extents, got {rows}x{cols}")));
        }
        let (or, oc) = (rows / 2, cols / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * or * oc);
        let mut argmax = Vec::with_capacity(c * or * oc);
        for ch in 0..c {
            for i in 0..or {
                for j in 0..oc {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = (ch * rows + 2 * i + di) * cols + 2 * j + dj;
                            if xd[idx] > best.0 {
                                best = (xd[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let value = Tensor::new(&[c, or, oc], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Mean over the columns of `[r, c]`, giving `[r]`.
    pub fn mean_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xd = self.value(x).data();
        let out = (0..r)
            .map(|i| xd[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
            .collect();
        let value = Tensor::new(&[r], out)?;
        Ok(self.push(value, Op::MeanCols(x), &[x]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, p: usize) -> Result<Var> {
        let value = tensor::pixel_unshuffle(self.value(x), p)?;
        Ok(self.push(value, Op::PixelUnshuffle(x, p), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, classes) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(dim_err(format!("{} labels for batch of {b}", labels.len())));
        }
        let ld = self.value(logits).data();
        let mut probs = ld.to_vec();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Index {
                    index: label,
                    extent: classes,
                });
            }
            let row = &ld[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(&mut probs[i * classes..(i + 1) * classes]);
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }
}

/// Accumulates one kernel tap `w` into `out`. Shared by forward and backward.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn conv2d_tap(
    xplane: &[f64],
    oplane: &mut [f64],
    w: f64,
    ki: usize,
    kj: usize,
    pad: usize,
    rows: usize,
    cols: usize,
    orows: usize,
    ocols: usize,
) {
    // Output (i, j) reads input (i + ki - pad, j + kj - pad).
    let i_lo = pad.saturating_sub(ki);
    let i_hi = (rows + pad).saturating_sub(ki).min(orows);
    let j_lo = pad.saturating_sub(kj);
    let j_hi = (cols + pad).saturating_sub(kj).min(ocols);
    for i in i_lo..i_hi {
        let xi = i + ki - pad;
        let xrow = &xplane[xi * cols..(xi + 1) * cols];
        let orow = &mut oplane[i * ocols..(i + 1) * ocols];
        for j in j_lo..j_hi {
            orow[j] += w * xrow[j + kj - pad];
        }
    }
}
