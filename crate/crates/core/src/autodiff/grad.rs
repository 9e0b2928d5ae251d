//! Backward rules, one arm per primitive.

use super::ops::{gelu_grad, Conv1dKind};
use super::{Op, Tape, Var};
use crate::tensor::{self, Tensor};

type Grads = Vec<Option<Vec<f64>>>;

fn slot<'g>(tape: &Tape, grads: &'g mut Grads, v: Var) -> Option<&'g mut Vec<f64>> {
    if !tape.node_requires_grad(v.0) {
        return None;
    }
    let len = tape.node_value(v.0).len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn accumulate(tape: &Tape, grads: &mut Grads, v: Var, contrib: &[f64]) {
    if let Some(buf) = slot(tape, grads, v) {
        for (b, c) in buf.iter_mut().zip(contrib) {
            *b += c;
        }
    }
}

pub(super) fn propagate(tape: &Tape, op: &Op, out: &Tensor, g: &[f64], grads: &mut Grads) {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = tape.value(*a);
            let bv = tape.value(*b);
            let (n, m) = (av.shape()[0], av.shape()[1]);
            let p = bv.shape()[1];
            let (ad, bd) = (av.data(), bv.data());
            if let Some(da) = slot(tape, grads, *a) {
                for i in 0..n {
                    let grow = &g[i * p..(i + 1) * p];
                    for l in 0..m {
                        let brow = &bd[l * p..(l + 1) * p];
                        da[i * m + l] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(db) = slot(tape, grads, *b) {
                for i in 0..n {
                    let grow = &g[i * p..(i + 1) * p];
                    for l in 0..m {
                        let av = ad[i * m + l];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[l * p..(l + 1) * p].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (tape.shape(*x)[0], tape.shape(*x)[1]);
            if let Some(dx) = slot(tape, grads, *x) {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Reshape(x) => accumulate(tape, grads, *x, g),
        Op::Add(a, b) => {
            accumulate(tape, grads, *a, g);
            accumulate(tape, grads, *b, g);
        }
        Op::Mul(a, b) => {
            let ad = tape.value(*a).data().to_vec();
            let bd = tape.value(*b).data();
            if let Some(da) = slot(tape, grads, *a) {
                for ((d, gv), bv) in da.iter_mut().zip(g).zip(bd) {
                    *d += gv * bv;
                }
            }
            if let Some(db) = slot(tape, grads, *b) {
                for ((d, gv), av) in db.iter_mut().zip(g).zip(&ad) {
                    *d += gv * av;
                }
            }
        }
        Op::AddRowBias(x, bias) => {
            accumulate(tape, grads, *x, g);
            let c = tape.shape(*x)[1];
            if let Some(db) = slot(tape, grads, *bias) {
                for row in g.chunks(c) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
        }
        Op::Scale(x, f) => {
            if let Some(dx) = slot(tape, grads, *x) {
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += f * gv;
                }
            }
        }
        Op::Relu(x) => {
            let xd = tape.value(*x).data();
            if let Some(dx) = slot(tape, grads, *x) {
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xd) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xd = tape.value(*x).data();
            if let Some(dx) = slot(tape, grads, *x) {
                for ((d, gv), xv) in dx.iter_mut().zip(g).zip(xd) {
                    *d += gv * gelu_grad(*xv);
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let k = out.shape()[1];
            let y = out.data();
            if let Some(dx) = slot(tape, grads, *x) {
                for ((drow, grow), yrow) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yv * (gv - dot);
                    }
                }
            }
        }
        Op::L2NormalizeRows { x, eps, norms } => {
            let d = out.shape()[1];
            let y = out.data();
            if let Some(dx) = slot(tape, grads, *x) {
                for (i, &norm) in norms.iter().enumerate() {
                    let (grow, yrow) = (&g[i * d..(i + 1) * d], &y[i * d..(i + 1) * d]);
                    let drow = &mut dx[i * d..(i + 1) * d];
                    if norm >= *eps {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv += (gv - yv * dot) / norm;
                        }
                    } else {
                        for (dv, gv) in drow.iter_mut().zip(grow) {
                            *dv += gv / eps;
                        }
                    }
                }
            }
        }
        Op::LayerNormRows {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let c = out.shape()[1];
            let gd = tape.value(*gain).data().to_vec();
            if let Some(dg) = slot(tape, grads, *gain) {
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ((d, gv), h) in dg.iter_mut().zip(grow).zip(hrow) {
                        *d += gv * h;
                    }
                }
            }
            if let Some(db) = slot(tape, grads, *bias) {
                for grow in g.chunks(c) {
                    for (d, gv) in db.iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
            }
            if let Some(dx) = slot(tape, grads, *x) {
                let cf = c as f64;
                for (i, is) in inv_std.iter().enumerate() {
                    let grow = &g[i * c..(i + 1) * c];
                    let hrow = &xhat[i * c..(i + 1) * c];
                    let dh: Vec<f64> = grow.iter().zip(&gd).map(|(a, b)| a * b).collect();
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] += is / cf * (cf * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
            }
        }
        Op::ScaleRows(x, w) => {
            let c = out.shape()[1];
            let wd = tape.value(*w).data().to_vec();
            let xd = tape.value(*x).data();
            if let Some(dw) = slot(tape, grads, *w) {
                for (i, d) in dw.iter_mut().enumerate() {
                    *d += g[i * c..(i + 1) * c]
                        .iter()
                        .zip(&xd[i * c..(i + 1) * c])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            if let Some(dx) = slot(tape, grads, *x) {
                for (i, s) in wd.iter().enumerate() {
                    for (d, gv) in dx[i * c..(i + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                        *d += s * gv;
                    }
                }
            }
        }
        Op::GatherRows { x, idx } => {
            let c = tape.shape(*x)[1];
            if let Some(dx) = slot(tape, grads, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for (d, gv) in dx[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                    {
                        *d += gv;
                    }
                }
            }
        }
        Op::GatherElements { x, idx } => {
            let m = tape.shape(*x)[1];
            if let Some(dx) = slot(tape, grads, *x) {
                for i in 0..idx.rows() {
                    for (j, &col) in idx.row(i).iter().enumerate() {
                        dx[i * m + col] += g[i * idx.cols() + j];
                    }
                }
            }
        }
        Op::GatherCols { x, idx, scale } => {
            let n = tape.shape(*x)[1];
            let m = idx.len();
            let xd = tape.value(*x).data();
            let sd = scale.map(|s| tape.value(s).data().to_vec());
            if let Some(s) = scale {
                if let Some(ds) = slot(tape, grads, *s) {
                    for (ch, grow) in g.chunks(m).enumerate() {
                        let xrow = &xd[ch * n..(ch + 1) * n];
                        for (t, (&j, gv)) in idx.iter().zip(grow).enumerate() {
                            ds[t] += gv * xrow[j];
                        }
                    }
                }
            }
            if let Some(dx) = slot(tape, grads, *x) {
                for (ch, grow) in g.chunks(m).enumerate() {
                    let drow = &mut dx[ch * n..(ch + 1) * n];
                    match &sd {
                        Some(sd) => {
                            for ((&j, gv), s) in idx.iter().zip(grow).zip(sd) {
                                drow[j] += s * gv;
                            }
                        }
                        None => {
                            for (&j, gv) in idx.iter().zip(grow) {
                                drow[j] += gv;
                            }
                        }
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = tape.value(p).len();
                accumulate(tape, grads, p, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (n, total) = (out.shape()[0], out.shape()[1]);
            let mut col = 0;
            for &p in parts {
                let w = tape.shape(p)[1];
                if let Some(dp) = slot(tape, grads, p) {
                    for i in 0..n {
                        for (d, gv) in dp[i * w..(i + 1) * w]
                            .iter_mut()
                            .zip(&g[i * total + col..i * total + col + w])
                        {
                            *d += gv;
                        }
                    }
                }
                col += w;
            }
        }
        Op::Conv1d {
            x,
            weight,
            bias,
            kind,
            stride,
        } => conv1d_backward(tape, grads, out, g, *x, *weight, *bias, *kind, *stride),
        Op::Conv2d { x, weight, bias, pad } => {
            conv2d_backward(tape, grads, out, g, *x, *weight, *bias, *pad)
        }
        Op::MaxPool2 { x, argmax } => {
            if let Some(dx) = slot(tape, grads, *x) {
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
            }
        }
        Op::MeanCols(x) => {
            let c = tape.shape(*x)[1];
            if let Some(dx) = slot(tape, grads, *x) {
                for (i, gv) in g.iter().enumerate() {
                    for d in &mut dx[i * c..(i + 1) * c] {
                        *d += gv / c as f64;
                    }
                }
            }
        }
        Op::PixelUnshuffle(x, p) => {
            let gt = Tensor::from_vec(out.shape(), g.to_vec());
            let back = tensor::pixel_shuffle(&gt, *p).expect("shape recorded at forward");
            accumulate(tape, grads, *x, back.data());
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(tape, grads, *x) {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let classes = tape.shape(*logits)[1];
            let b = labels.len() as f64;
            if let Some(dl) = slot(tape, grads, *logits) {
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..classes {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        dl[i * classes + j] += g[0] * (probs[i * classes + j] - onehot) / b;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    tape: &Tape,
    grads: &mut Grads,
    out: &Tensor,
    g: &[f64],
    x: Var,
    weight: Var,
    bias: Option<Var>,
    kind: Conv1dKind,
    stride: usize,
) {
    let (c, len) = (tape.shape(x)[0], tape.shape(x)[1]);
    let (out_ch, out_len) = (out.shape()[0], out.shape()[1]);
    let kernel = *tape.shape(weight).last().expect("weight rank");
    let xd = tape.value(x).data().to_vec();
    let wd = tape.value(weight).data().to_vec();
    if let Some(b) = bias {
        if let Some(db) = slot(tape, grads, b) {
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
            }
        }
    }
    match kind {
        Conv1dKind::Regular => {
            if let Some(dw) = slot(tape, grads, weight) {
                for o in 0..out_ch {
                    let grow = &g[o * out_len..(o + 1) * out_len];
                    for ci in 0..c {
                        let xrow = &xd[ci * len..(ci + 1) * len];
                        for j in 0..kernel {
                            let mut acc = 0.0;
                            for (t, gv) in grow.iter().enumerate() {
                                acc += gv * xrow[t * stride + j];
                            }
                            dw[(o * c + ci) * kernel + j] += acc;
                        }
                    }
                }
            }
            if let Some(dx) = slot(tape, grads, x) {
                for o in 0..out_ch {
                    let grow = &g[o * out_len..(o + 1) * out_len];
                    for ci in 0..c {
                        let wrow = &wd[(o * c + ci) * kernel..(o * c + ci + 1) * kernel];
                        let drow = &mut dx[ci * len..(ci + 1) * len];
                        for (t, gv) in grow.iter().enumerate() {
                            for (j, w) in wrow.iter().enumerate() {
                                drow[t * stride + j] += w * gv;
                            }
                        }
                    }
                }
            }
        }
        Conv1dKind::Depthwise => {
            if let Some(dw) = slot(tape, grads, weight) {
                for ci in 0..c {
                    let grow = &g[ci * out_len..(ci + 1) * out_len];
                    let xrow = &xd[ci * len..(ci + 1) * len];
                    for j in 0..kernel {
                        let mut acc = 0.0;
                        for (t, gv) in grow.iter().enumerate() {
                            acc += gv * xrow[t * stride + j];
                        }
                        dw[ci * kernel + j] += acc;
                    }
                }
            }
            if let Some(dx) = slot(tape, grads, x) {
                for ci in 0..c {
                    let grow = &g[ci * out_len..(ci + 1) * out_len];
                    let wrow = &wd[ci * kernel..(ci + 1) * kernel];
                    for (t, gv) in grow.iter().enumerate() {
                        for (j, w) in wrow.iter().enumerate() {
                            dx[ci * len + t * stride + j] += w * gv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    tape: &Tape,
    grads: &mut Grads,
    out: &Tensor,
    g: &[f64],
    x: Var,
    weight: Var,
    bias: Option<Var>,
    pad: usize,
) {
    let (c, rows, cols) = {
        let s = tape.shape(x);
        (s[0], s[1], s[2])
    };
    let (out_ch, orows, ocols) = (out.shape()[0], out.shape()[1], out.shape()[2]);
    let (kh, kw) = (tape.shape(weight)[2], tape.shape(weight)[3]);
    let plane = orows * ocols;
    let xd = tape.value(x).data().to_vec();
    let wd = tape.value(weight).data().to_vec();
    if let Some(b) = bias {
        if let Some(db) = slot(tape, grads, b) {
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = slot(tape, grads, weight) {
        for o in 0..out_ch {
            let gplane = &g[o * plane..(o + 1) * plane];
            for ci in 0..c {
                let xplane = &xd[ci * rows * cols..(ci + 1) * rows * cols];
                for ki in 0..kh {
                    let i_lo = pad.saturating_sub(ki);
                    let i_hi = (rows + pad).saturating_sub(ki).min(orows);
                    for kj in 0..kw {
                        let j_lo = pad.saturating_sub(kj);
                        let j_hi = (cols + pad).saturating_sub(kj).min(ocols);
                        let mut acc = 0.0;
                        for i in i_lo..i_hi {
                            let xrow = &xplane[(i + ki - pad) * cols..];
                            let grow = &gplane[i * ocols..];
                            for j in j_lo..j_hi {
                                acc += grow[j] * xrow[j + kj - pad];
                            }
                        }
                        dw[((o * c + ci) * kh + ki) * kw + kj] += acc;
                    }
                }
            }
        }
    }
    if let Some(dx) = slot(tape, grads, x) {
        for o in 0..out_ch {
            let gplane = &g[o * plane..(o + 1) * plane];
            for ci in 0..c {
                let dplane = &mut dx[ci * rows * cols..(ci + 1) * rows * cols];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let w = wd[((o * c + ci) * kh + ki) * kw + kj];
                        if w == 0.0 {
                            continue;
                        }
                        scatter_tap(gplane, dplane, w, ki, kj, pad, rows, cols, orows, ocols);
                    }
                }
            }
        }
    }
}

/// Transpose of [`conv2d_tap`]: scatters `w * g[i, j]` back to input pixels.
#[allow(clippy::too_many_arguments)]
#[inline]
fn scatter_tap(
    gplane: &[f64],
    dplane: &mut [f64],
    w: f64,
    ki: usize,
    kj: usize,
    pad: usize,
    rows: usize,
    cols: usize,
    orows: usize,
    ocols: usize,
) {
    let i_lo = pad.saturating_sub(ki);
    let i_hi = (rows + pad).saturating_sub(ki).min(orows);
    let j_lo = pad.saturating_sub(kj);
    let j_hi = (cols + pad).saturating_sub(kj).min(ocols);
    for i in i_lo..i_hi {
        let xi = i + ki - pad;
        let grow = &gplane[i * ocols..(i + 1) * ocols];
        let drow = &mut dplane[xi * cols..(xi + 1) * cols];
        for j in j_lo..j_hi {
            drow[j + kj - pad] += w * grow[j];
        }
    }
}
