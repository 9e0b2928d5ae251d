//! Straight-line reference implementations used only for verification.
//! Nothing here touches the tape or the operator's selection code.

use serde::Serialize;
use serde_json::{json, Value};

use crate::autodiff::IndexMatrix;
use crate::convnn::{
    convnn_forward_2d_with_selection, convnn_forward_with_selection, AggregationParams,
    ConvNNConfig, Positional, ProjectionMode, ProjectionParams, Rho,
};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

/// Tolerance for the attention and KVT reductions.
pub const ATTENTION_TOL: f64 = 1e-10;
/// Tolerance for the convolution reduction.
pub const CONV_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub oracle: String,
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub case: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub comparisons: Vec<Comparison>,
    pub config: Value,
}

impl EquivalenceReport {
    pub fn new(case: String, comparisons: Vec<Comparison>, tolerance: f64, config: Value) -> Self {
        let deviation = comparisons.iter().map(|c| c.deviation).fold(0.0, f64::max);
        // NaN deviations fail.
        let passed = deviation <= tolerance && comparisons.iter().all(|c| c.deviation <= tolerance);
        Self {
            case,
            deviation,
            tolerance,
            passed,
            comparisons,
            config,
        }
    }
}

fn rows_of(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| dim_err(format!("{what} must be a matrix, got {:?}", t.shape())))
}

fn unit_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = t.dims2().expect("matrix");
    (0..n)
        .map(|i| {
            let row = &t.data()[i * d..(i + 1) * d];
            let mut norm = 0.0;
            for a in row {
                norm += a * a;
            }
            let norm = norm.sqrt().max(1e-12);
            row.iter().map(|a| a / norm).collect()
        })
        .collect()
}

fn plain_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = t.dims2().expect("matrix");
    (0..n).map(|i| t.data()[i * d..(i + 1) * d].to_vec()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, h) = rows_of(q, "q")?;
    let (m, hk) = rows_of(k, "k")?;
    let (mv, vw) = rows_of(v, "v")?;
    if h != hk || m != mv {
        return Err(dim_err(format!(
            "attention shapes disagree: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok((n, m, vw))
}

/// `softmax(Q K^T) V` with explicit loops and no `sqrt(h)` scaling.
pub fn attention_naive(q: &Tensor, k: &Tensor, v: &Tensor, normalize: bool) -> Result<Tensor> {
    let m = check_qkv(q, k, v)?.1;
    kvt_attention_naive(q, k, v, m, normalize)
}

/// Attention where each query keeps only its `kk` most similar keys
/// (lowest index wins ties).
pub fn kvt_attention_naive(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    kk: usize,
    normalize: bool,
) -> Result<Tensor> {
    let (n, m, vw) = check_qkv(q, k, v)?;
    if kk == 0 || kk > m {
        return Err(config_err(format!("kk={kk} outside 1..={m}")));
    }
    let (qs, ks) = if normalize {
        (unit_rows(q), unit_rows(k))
    } else {
        (plain_rows(q), plain_rows(k))
    };
    let mut out = vec![0.0; n * vw];
    for i in 0..n {
        let scores: Vec<f64> = ks.iter().map(|kj| dot(&qs[i], kj)).collect();
        // Key j survives when fewer than kk keys beat it.
        let mut keep = vec![false; m];
        for j in 0..m {
            let mut better = 0;
            for l in 0..m {
                if scores[l] > scores[j] || (scores[l] == scores[j] && l < j) {
                    better += 1;
                }
            }
            keep[j] = better < kk;
        }
        let mut top = f64::NEG_INFINITY;
        for j in 0..m {
            if keep[j] && scores[j] > top {
                top = scores[j];
            }
        }
        let mut z = 0.0;
        let mut w = vec![0.0; m];
        for j in 0..m {
            if keep[j] {
                w[j] = (scores[j] - top).exp();
                z += w[j];
            }
        }
        for j in 0..m {
            if keep[j] {
                for c in 0..vw {
                    out[i * vw + c] += w[j] / z * v.data()[j * vw + c];
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[n, vw], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    None,
    ZeroSame,
}

/// Direct cross-correlation of `x: [c, rows, cols]` with
/// `kernels: [out, c, kh, kw]`, stride 1.
pub fn conv2d_naive(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    padding: Padding,
) -> Result<Tensor> {
    let (c, rows, cols) = x.dims3()?;
    let s = kernels.shape();
    if s.len() != 4 || s[1] != c {
        return Err(dim_err(format!(
            "kernels {:?} do not fit input {:?}",
            s,
            x.shape()
        )));
    }
    let (out, kh, kw) = (s[0], s[2], s[3]);
    if let Some(b) = bias {
        if b.len() != out {
            return Err(dim_err(format!("bias length {} != {out}", b.len())));
        }
    }
    let (pt, pl) = match padding {
        Padding::None => (0, 0),
        Padding::ZeroSame => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(dim_err("zero-same padding needs odd kernel extents"));
            }
            (kh / 2, kw / 2)
        }
    };
    if kh > rows + 2 * pt || kw > cols + 2 * pl {
        return Err(dim_err(format!(
            "kernel {kh}x{kw} exceeds padded input {}x{}",
            rows + 2 * pt,
            cols + 2 * pl
        )));
    }
    let orows = rows + 2 * pt - kh + 1;
    let ocols = cols + 2 * pl - kw + 1;
    let mut y = vec![0.0; out * orows * ocols];
    for o in 0..out {
        for r in 0..orows {
            for q in 0..ocols {
                let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                for ch in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let rr = (r + a) as isize - pt as isize;
                            let cc = (q + b) as isize - pl as isize;
                            if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                                continue;
                            }
                            let xv = x.data()[(ch * rows + rr as usize) * cols + cc as usize];
                            let kv = kernels.data()[((o * c + ch) * kh + a) * kw + b];
                            acc += xv * kv;
                        }
                    }
                }
                y[(o * orows + r) * ocols + q] = acc;
            }
        }
    }
    Ok(Tensor::from_vec(&[out, orows, ocols], y))
}

/// Exhaustive k-NN by squared Euclidean distance between l2-normalized rows.
pub fn knn_bruteforce(x: &Tensor, k: usize) -> Result<IndexMatrix> {
    let (n, _) = rows_of(x, "x")?;
    if k == 0 || k > n {
        return Err(config_err(format!("k={k} outside 1..={n}")));
    }
    let u = unit_rows(x);
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for (a, b) in u[i].iter().zip(&u[j]) {
                    s += (a - b) * (a - b);
                }
                (s, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        data.extend(d[..k].iter().map(|p| p.1));
    }
    IndexMatrix::new(n, k, data)
}

fn matmul_naive(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, c) = a.dims2().expect("matrix");
    let (_, o) = b.dims2().expect("matrix");
    let mut y = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            let mut s = 0.0;
            for l in 0..c {
                s += a.data()[i * c + l] * b.data()[l * o + j];
            }
            y[i * o + j] = s;
        }
    }
    Tensor::from_vec(&[n, o], y)
}

/// Projections shared by the operator and the oracles in
/// [`check_attention_reduction`].
pub fn attention_fixture(n: usize, c: usize, h: usize, v: usize, seed: u64) -> (Tensor, ProjectionParams) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[n, c], 1.0, &mut rng);
    let proj = ProjectionParams::learned(c, c, h, v, &mut rng);
    (x, proj)
}

/// Compares the operator in attention mode (`softmax` modulation, cosine
/// similarity, frozen unit depthwise aggregation, `k = kk`) against the
/// KVT oracle, and against full attention when `kk = n`.
pub fn check_attention_reduction(
    n: usize,
    c: usize,
    h: usize,
    v: usize,
    kk: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    check_attention_reduction_with(n, c, h, v, kk, seed, &AggregationParams::unit_depthwise(v, kk))
}

/// [`check_attention_reduction`] with caller-supplied aggregation weights,
/// used to confirm that a perturbed kernel is detected.
pub fn check_attention_reduction_with(
    n: usize,
    c: usize,
    h: usize,
    v: usize,
    kk: usize,
    seed: u64,
    agg: &AggregationParams,
) -> Result<EquivalenceReport> {
    if kk == 0 || kk > n {
        return Err(config_err(format!("kk={kk} outside 1..={n}")));
    }
    let (x, proj) = attention_fixture(n, c, h, v, seed);
    let cfg = ConvNNConfig::attention_equivalent(kk, v);
    let (y, _) = convnn_forward_with_selection(&x, &cfg, &proj, agg)?;

    let q = matmul_naive(&x, &proj.wq);
    let k = matmul_naive(&x, &proj.wk);
    let vv = matmul_naive(&x, &proj.wv);
    let mut comparisons = vec![Comparison {
        oracle: "kvt_attention_naive".into(),
        deviation: y.max_abs_diff(&kvt_attention_naive(&q, &k, &vv, kk, true)?)?,
    }];
    if kk == n {
        comparisons.push(Comparison {
            oracle: "attention_naive".into(),
            deviation: y.max_abs_diff(&attention_naive(&q, &k, &vv, true)?)?,
        });
    }
    Ok(EquivalenceReport::new(
        format!("attention n={n} c={c} h={h} v={v} k={kk} seed={seed}"),
        comparisons,
        ATTENTION_TOL,
        json!({"n": n, "c": c, "h": h, "v": v, "k": kk, "seed": seed,
               "rho": "softmax", "normalize": true, "aggregation": "depthwise-unit"}),
    ))
}

/// Offset added to every Q/K row so cosine similarity falls off with
/// planar distance.
const CONV_LIFT: f64 = 1000.0;

/// Operator settings whose similarity sees only grid coordinates: Q and K
/// map the appended positional channels back to integer `(col, row)` and
/// add a constant third coordinate; values are the raw features.
pub fn positional_projections(c: usize, rows: usize, cols: usize) -> ProjectionParams {
    let mut w = Tensor::zeros(&[c + 2, 3]);
    w.data_mut()[c * 3] = (cols.max(2) - 1) as f64;
    w.data_mut()[(c + 1) * 3 + 1] = (rows.max(2) - 1) as f64;
    let b = Tensor::from_vec(&[3], vec![0.0, 0.0, CONV_LIFT]);
    ProjectionParams {
        mode: ProjectionMode::Learned,
        wq: w.clone(),
        wk: w,
        wv: Tensor::eye(c),
        bq: Some(b.clone()),
        bk: Some(b),
        bv: None,
    }
}

fn window(cols: usize, r: usize, q: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(9);
    for dr in 0..3 {
        for dc in 0..3 {
            w.push((r + dr - 1) * cols + (q + dc - 1));
        }
    }
    w.sort_unstable();
    w
}

/// Neighbor sets from coordinate-only similarity against 3x3 windows, and
/// unit aggregation against an all-ones padding-free convolution, at every
/// interior position of a `rows x cols` grid.
pub fn check_conv_reduction(rows: usize, cols: usize, k: usize) -> Result<EquivalenceReport> {
    if k != 9 {
        return Err(config_err(format!("convolution reduction is defined for k=9, got {k}")));
    }
    if rows < 5 || cols < 5 {
        return Err(config_err(format!("grid {rows}x{cols} is smaller than 5x5")));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64((rows * 131 + cols) as u64);
    let c = 3;
    let x = Tensor::randn(&[c, rows, cols], 1.0, &mut rng);
    let mut cfg = ConvNNConfig::new(k, c);
    cfg.rho = Rho::Ones;
    cfg.positional = Positional::SimilarityOnly;
    let proj = positional_projections(c, rows, cols);
    let (y, sel) =
        convnn_forward_2d_with_selection(&x, &cfg, &proj, &AggregationParams::unit_depthwise(c, k))?;

    let mut kernels = Tensor::zeros(&[c, c, 3, 3]);
    for o in 0..c {
        for t in 0..9 {
            kernels.data_mut()[(o * c + o) * 9 + t] = 1.0;
        }
    }
    let reference = conv2d_naive(&x, &kernels, None, Padding::None)?;

    let mut matched = 0;
    let mut value_dev: f64 = 0.0;
    for r in 1..rows - 1 {
        for q in 1..cols - 1 {
            let i = r * cols + q;
            let mut got = sel.neighbors.indices.row(i).to_vec();
            got.sort_unstable();
            if got == window(cols, r, q) {
                matched += 1;
            }
            for ch in 0..c {
                let a = y.data()[(ch * rows + r) * cols + q];
                let b = reference.data()[(ch * (rows - 2) + r - 1) * (cols - 2) + q - 1];
                value_dev = value_dev.max((a - b).abs());
            }
        }
    }
    let interior = (rows - 2) * (cols - 2);
    let mut corner = sel.neighbors.indices.row(0).to_vec();
    corner.sort_unstable();
    let set_dev = (interior - matched) as f64;
    Ok(EquivalenceReport::new(
        format!("convolution {rows}x{cols} k={k}"),
        vec![
            Comparison {
                oracle: "3x3 window sets (mismatched positions)".into(),
                deviation: set_dev,
            },
            Comparison {
                oracle: "conv2d_naive".into(),
                deviation: value_dev,
            },
        ],
        CONV_TOL,
        json!({"rows": rows, "cols": cols, "k": k, "rho": "ones",
               "interior_positions": interior, "interior_matched": matched,
               "corner_neighbors_out_of_claim": corner}),
    ))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec())
    }

    /// Attention summing keys in reverse order with the exponentials
    /// normalized after accumulation.
    fn attention_reversed(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (n, h) = q.dims2().unwrap();
        let (m, vw) = v.dims2().unwrap();
        let mut out = Tensor::zeros(&[n, vw]);
        for i in 0..n {
            let s: Vec<f64> = (0..m)
                .rev()
                .map(|j| (0..h).rev().map(|l| q.at2(i, l) * k.at2(j, l)).sum())
                .collect();
            let mx = s.iter().cloned().fold(f64::MIN, f64::max);
            let mut acc = vec![0.0; vw];
            let mut z = 0.0;
            for (pos, j) in (0..m).rev().enumerate() {
                let e = (s[pos] - mx).exp();
                z += e;
                for c in 0..vw {
                    acc[c] += e * v.at2(j, c);
                }
            }
            for c in 0..vw {
                out.data_mut()[i * vw + c] = acc[c] / z;
            }
        }
        out
    }

    #[test]
    fn attention_single_key() {
        let y = attention_naive(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[3.0, -1.0]), &t(&[1, 3], &[4.0, 5.0, 6.0]), false).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn attention_uniform_average() {
        let q = Tensor::zeros(&[2, 2]);
        let k = Tensor::ones(&[3, 2]);
        let y = attention_naive(&q, &k, &Tensor::eye(3), false).unwrap();
        for a in y.data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_matches_reordered_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let k = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let v = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let a = attention_naive(&q, &k, &v, false).unwrap();
        let b = attention_reversed(&q, &k, &v);
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-13);
    }

    #[test]
    fn attention_rows_in_value_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let k = Tensor::randn(&[7, 4], 1.0, &mut rng);
        let v = Tensor::randn(&[7, 2], 1.0, &mut rng);
        let y = attention_naive(&q, &k, &v, true).unwrap();
        for c in 0..2 {
            let lo = (0..7).map(|j| v.at2(j, c)).fold(f64::MAX, f64::min);
            let hi = (0..7).map(|j| v.at2(j, c)).fold(f64::MIN, f64::max);
            for i in 0..6 {
                assert!(y.at2(i, c) >= lo - 1e-12 && y.at2(i, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn kvt_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let k = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let v = Tensor::randn(&[5, 2], 1.0, &mut rng);
        let full = attention_naive(&q, &k, &v, true).unwrap();
        assert_eq!(kvt_attention_naive(&q, &k, &v, 5, true).unwrap(), full);
        let one = kvt_attention_naive(&q, &k, &v, 1, false).unwrap();
        for i in 0..4 {
            let best = (0..5)
                .max_by(|&a, &b| {
                    let sa: f64 = (0..3).map(|l| q.at2(i, l) * k.at2(a, l)).sum();
                    let sb: f64 = (0..3).map(|l| q.at2(i, l) * k.at2(b, l)).sum();
                    sa.total_cmp(&sb)
                })
                .unwrap();
            assert_eq!(one.row(i), v.row(best));
        }
        assert!(kvt_attention_naive(&q, &k, &v, 0, true).is_err());
        assert!(kvt_attention_naive(&q, &k, &v, 6, true).is_err());
        assert!(attention_naive(&q, &Tensor::zeros(&[5, 2]), &v, true).is_err());
    }

    #[test]
    fn conv2d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::randn(&[2, 4, 4], 1.0, &mut rng);
        // 1x1 kernel mixes channels only.
        let w = t(&[1, 2, 1, 1], &[2.0, -1.0]);
        let y = conv2d_naive(&x, &w, None, Padding::None).unwrap();
        for p in 0..16 {
            assert!((y.data()[p] - (2.0 * x.data()[p] - x.data()[16 + p])).abs() < 1e-15);
        }
        // Delta kernel with zero-same padding is the identity.
        let mut delta = Tensor::zeros(&[2, 2, 3, 3]);
        delta.data_mut()[4] = 1.0;
        delta.data_mut()[(2 + 1) * 9 + 4] = 1.0;
        assert_eq!(conv2d_naive(&x, &delta, None, Padding::ZeroSame).unwrap(), x);
        // Sliding-window sums on a 4x4 ramp.
        let ramp = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let y = conv2d_naive(&ramp, &Tensor::ones(&[1, 1, 3, 3]), None, Padding::None).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[45.0, 54.0, 81.0, 90.0]);
        assert!(conv2d_naive(&x, &Tensor::ones(&[1, 2, 5, 5]), None, Padding::None).is_err());
    }

    #[test]
    fn knn_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let idx = knn_bruteforce(&x, 1).unwrap();
        assert_eq!(idx.data(), &[0, 1, 2, 3, 4, 5]);
        let dup = t(&[3, 2], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let idx = knn_bruteforce(&dup, 2).unwrap();
        assert_eq!(idx.row(0), &[0, 1]);
        assert_eq!(idx.row(1), &[0, 1]);
        assert!(knn_bruteforce(&dup, 4).is_err());
    }

    #[test]
    fn attention_reduction_examples() {
        let full = check_attention_reduction(8, 4, 4, 4, 8, 0).unwrap();
        assert!(full.passed, "{full:?}");
        assert_eq!(full.comparisons.len(), 2);
        let kvt = check_attention_reduction(8, 4, 4, 4, 3, 0).unwrap();
        assert!(kvt.passed, "{kvt:?}");
        let one = check_attention_reduction(1, 3, 3, 3, 1, 0).unwrap();
        assert!(one.passed && one.deviation < 1e-15);
    }

    #[test]
    fn perturbed_unit_weights_are_detected() {
        let mut agg = AggregationParams::unit_depthwise(4, 8);
        if let crate::convnn::AggregationWeights::Depthwise(w) = &mut agg.weights {
            w.data_mut()[0] = 1.01;
        }
        let r = check_attention_reduction_with(8, 4, 4, 4, 8, 0, &agg).unwrap();
        assert!(!r.passed && r.deviation > ATTENTION_TOL);
    }

    #[test]
    fn unnormalized_mode_matches_dot_product_attention() {
        for (n, seed) in [(4, 0), (9, 1), (16, 2)] {
            let (x, proj) = attention_fixture(n, 4, 4, 4, seed);
            let cfg = ConvNNConfig {
                normalize: false,
                ..ConvNNConfig::attention_equivalent(n, 4)
            };
            let y = crate::convnn::convnn_forward(&x, &cfg, &proj, &AggregationParams::unit_depthwise(4, n)).unwrap();
            let (q, k, v) = (matmul_naive(&x, &proj.wq), matmul_naive(&x, &proj.wk), matmul_naive(&x, &proj.wv));
            let d = y.max_abs_diff(&attention_naive(&q, &k, &v, false).unwrap()).unwrap();
            assert!(d <= ATTENTION_TOL, "n={n}: {d}");
        }
    }

    #[test]
    fn conv_reduction_examples() {
        for (rows, cols, interior) in [(5, 5, 9), (8, 8, 36)] {
            let r = check_conv_reduction(rows, cols, 9).unwrap();
            assert!(r.passed, "{r:?}");
            assert_eq!(r.config["interior_matched"], interior);
        }
        let r = check_conv_reduction(5, 5, 9).unwrap();
        let corner: Vec<usize> = serde_json::from_value(r.config["corner_neighbors_out_of_claim"].clone()).unwrap();
        assert_ne!(corner.len(), 0);
        assert!(corner.iter().any(|&j| j >= 10), "corner set {corner:?} is a shifted window");
        assert!(check_conv_reduction(4, 5, 9).is_err());
        assert!(check_conv_reduction(5, 5, 8).is_err());
    }

    #[test]
    fn reports_are_deterministic() {
        let a = serde_json::to_string(&check_attention_reduction(6, 4, 4, 4, 3, 9).unwrap()).unwrap();
        let b = serde_json::to_string(&check_attention_reduction(6, 4, 4, 4, 3, 9).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
