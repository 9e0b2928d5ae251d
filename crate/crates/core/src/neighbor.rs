//! Deciding which neighbors exist: similarity, top-k selection, candidate
//! subsampling and positional channels.

use std::cmp::Ordering;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{IndexMatrix, Tape, Var};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

/// Default guard for row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Spatial arrangement of the `n` tokens being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Seq(usize),
    /// Row-major grid; token `row * cols + col`.
    Grid { rows: usize, cols: usize },
}

impl Layout {
    pub fn len(&self) -> usize {
        match *self {
            Layout::Seq(n) => n,
            Layout::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of coordinate channels this layout contributes.
    pub fn positional_width(&self) -> usize {
        match self {
            Layout::Seq(_) => 1,
            Layout::Grid { .. } => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub normalized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    /// Key row selected for each (query, rank).
    pub indices: IndexMatrix,
    /// Matching similarity values, non-increasing along each row.
    pub weights: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    All,
    Random,
    Spatial,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Strategy::All),
            "random" => Ok(Strategy::Random),
            "spatial" => Ok(Strategy::Spatial),
            other => Err(config_err(format!("unknown candidate strategy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::All => "all",
            Strategy::Random => "random",
            Strategy::Spatial => "spatial",
        }
    }
}

/// Key/value rows eligible for selection. Queries are never restricted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub strategy: Strategy,
    pub r: usize,
    pub seed: u64,
    /// Sorted, distinct.
    pub indices: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn candidates_all(n: usize) -> CandidateSet {
    CandidateSet {
        strategy: Strategy::All,
        r: n,
        seed: 0,
        indices: (0..n).collect(),
    }
}

/// `r` indices drawn uniformly without replacement; `r > n` clamps to `n`.
pub fn candidates_random(n: usize, r: usize, seed: u64) -> Result<CandidateSet> {
    if r == 0 {
        return Err(config_err("random candidate count r must be at least 1"));
    }
    let take = if r > n {
        warn!("candidate count r={r} exceeds n={n}; clamping to n");
        n
    } else {
        r
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, n, take).into_vec();
    indices.sort_unstable();
    Ok(CandidateSet {
        strategy: Strategy::Random,
        r: take,
        seed,
        indices,
    })
}

/// Regularly strided positions. In 1D `r` is the stride; on a grid the
/// stride is `sqrt(r)` along both axes and `r` must be a perfect square.
pub fn candidates_spatial(layout: Layout, r: usize) -> Result<CandidateSet> {
    if r == 0 {
        return Err(config_err("spatial sampling rate r must be at least 1"));
    }
    let indices = match layout {
        Layout::Seq(len) => (0..len).step_by(r).collect(),
        Layout::Grid { rows, cols } => {
            let stride = (r as f64).sqrt().round() as usize;
            if stride * stride != r {
                return Err(config_err(format!(
                    "2D spatial sampling needs a square r, got {r}"
                )));
            }
            let mut idx = Vec::new();
            for i in (0..rows).step_by(stride) {
                for j in (0..cols).step_by(stride) {
                    idx.push(i * cols + j);
                }
            }
            idx
        }
    };
    Ok(CandidateSet {
        strategy: Strategy::Spatial,
        r,
        seed: 0,
        indices,
    })
}

/// Records `S = Q K^T` on the tape, row-normalizing both sides first when
/// `normalize` is set. No `1/sqrt(h)` scaling.
pub fn similarity_on(tape: &mut Tape, q: Var, k: Var, normalize: bool) -> Result<Var> {
    let (qh, kh) = (tape.value(q).dims2()?.1, tape.value(k).dims2()?.1);
    if qh != kh {
        return Err(dim_err(format!(
            "similarity: query width {qh} differs from key width {kh}"
        )));
    }
    let (q, k) = if normalize {
        (
            tape.l2_normalize_rows(q, NORM_EPS)?,
            tape.l2_normalize_rows(k, NORM_EPS)?,
        )
    } else {
        (q, k)
    };
    let kt = tape.transpose(k)?;
    tape.matmul(q, kt)
}

pub fn similarity(q: &Tensor, k: &Tensor, normalize: bool) -> Result<SimilarityMatrix> {
    let mut tape = Tape::new();
    let (qv, kv) = (tape.constant(q.clone()), tape.constant(k.clone()));
    let s = similarity_on(&mut tape, qv, kv, normalize)?;
    Ok(SimilarityMatrix {
        values: tape.value(s).clone(),
        normalized: normalize,
    })
}

/// Descending by value, ascending by column on ties.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Row-wise top-`k` over the columns of an `[n, m]` matrix. Returned column
/// indices are local to the matrix.
pub fn top_k_rows(values: &Tensor, k: usize) -> Result<(IndexMatrix, Tensor)> {
    let (n, m) = values.dims2()?;
    if k == 0 || k > m {
        return Err(config_err(format!(
            "k={k} must lie in [1, {m}] (number of candidates)"
        )));
    }
    let mut idx = Vec::with_capacity(n * k);
    let mut w = Vec::with_capacity(n * k);
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(m);
    for i in 0..n {
        row.clear();
        row.extend(values.row(i).iter().copied().zip(0..m));
        if k < m {
            row.select_nth_unstable_by(k - 1, rank_order);
        }
        row[..k].sort_unstable_by(rank_order);
        for &(v, j) in &row[..k] {
            w.push(v);
            idx.push(j);
        }
    }
    Ok((IndexMatrix::new(n, k, idx)?, Tensor::new(&[n, k], w)?))
}

/// k-max / k-argmax of each similarity row over the candidate columns.
pub fn knn(sim: &SimilarityMatrix, k: usize, candidates: &CandidateSet) -> Result<NeighborIndex> {
    let (n, m) = sim.values.dims2()?;
    if k == 0 || k > candidates.len() {
        return Err(config_err(format!(
            "k={k} exceeds the {} available candidates",
            candidates.len()
        )));
    }
    if let Some(&bad) = candidates.indices.iter().find(|&&c| c >= m) {
        return Err(crate::Error::Index {
            index: bad,
            extent: m,
        });
    }
    let sub = if candidates.len() == m {
        sim.values.clone()
    } else {
        let t = sim.values.transpose2()?.select_rows(&candidates.indices)?;
        t.transpose2()?
    };
    let (local, weights) = top_k_rows(&sub, k)?;
    let global = local.data().iter().map(|&j| candidates.indices[j]).collect();
    Ok(NeighborIndex {
        indices: IndexMatrix::new(n, k, global)?,
        weights,
    })
}

/// Coordinates in `[0, 1]` per token, shape `[n, 1]` (sequence) or `[n, 2]`
/// (grid: column coordinate then row coordinate).
pub fn positional_rows(layout: Layout) -> Tensor {
    let ramp = |i: usize, len: usize| {
        if len <= 1 {
            0.0
        } else {
            i as f64 / (len - 1) as f64
        }
    };
    match layout {
        Layout::Seq(len) => Tensor::from_fn(&[len, 1], |i| ramp(i, len)),
        Layout::Grid { rows, cols } => {
            let mut data = Vec::with_capacity(rows * cols * 2);
            for i in 0..rows {
                for j in 0..cols {
                    data.push(ramp(j, cols));
                    data.push(ramp(i, rows));
                }
            }
            Tensor::from_vec(&[rows * cols, 2], data)
        }
    }
}

/// Appends coordinate channels to a channel-first tensor: `[c, len]` gains
/// one channel, `[c, rows, cols]` gains two.
pub fn append_positional(x: &Tensor, layout: Layout) -> Result<Tensor> {
    let (c, spatial) = match (x.shape(), layout) {
        (&[c, len], Layout::Seq(l)) if len == l => (c, len),
        (&[c, rows, cols], Layout::Grid { rows: r, cols: cc }) if rows == r && cols == cc => {
            (c, rows * cols)
        }
        _ => {
            return Err(dim_err(format!(
                "tensor {:?} does not match layout {layout:?}",
                x.shape()
            )))
        }
    };
    let pos = positional_rows(layout).transpose2()?;
    let mut data = x.data().to_vec();
    data.extend_from_slice(pos.data());
    let mut shape = x.shape().to_vec();
    shape[0] = c + layout.positional_width();
    debug_assert_eq!(data.len(), shape[0] * spatial);
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn similarity_examples() {
        let i3 = Tensor::eye(3);
        let s = similarity(&i3, &i3, true).unwrap();
        assert_eq!(s.values, Tensor::eye(3));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let s = similarity(&x, &x, true).unwrap();
        for i in 0..5 {
            assert!((s.values.at2(i, i) - 1.0).abs() < 1e-9);
            for j in 0..5 {
                let v = s.values.at2(i, j);
                assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }
        }
        // Distance duality on normalized rows.
        let xn = Tensor::from_fn(&[5, 4], |e| {
            let row = x.row(e / 4);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row[e % 4] / norm
        });
        for i in 0..5 {
            for j in 0..5 {
                let d2: f64 = xn.row(i).iter().zip(xn.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!((d2 - 2.0 * (1.0 - s.values.at2(i, j))).abs() < 1e-12);
            }
        }
        assert!(similarity(&x, &Tensor::eye(3), false).is_err());
    }

    #[test]
    fn raw_similarity_is_unscaled_dot_product() {
        let q = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]);
        let k = Tensor::from_vec(&[1, 2], vec![2.0, 1.0]);
        assert_eq!(similarity(&q, &k, false).unwrap().values.data(), &[10.0]);
    }

    #[test]
    fn knn_full_sort_when_k_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let s = similarity(&x, &x, true).unwrap();
        let nb = knn(&s, 6, &candidates_all(6)).unwrap();
        for i in 0..6 {
            let mut expect: Vec<usize> = (0..6).collect();
            expect.sort_by(|&a, &b| s.values.at2(i, b).partial_cmp(&s.values.at2(i, a)).unwrap());
            assert_eq!(nb.indices.row(i), &expect[..]);
            assert_eq!(nb.indices.get(i, 0), i);
        }
    }

    #[test]
    fn knn_tie_break_lowest_index() {
        let s = SimilarityMatrix {
            values: Tensor::from_vec(&[1, 3], vec![0.5, 0.9, 0.5]),
            normalized: false,
        };
        let nb = knn(&s, 2, &candidates_all(3)).unwrap();
        assert_eq!(nb.indices.row(0), &[1, 0]);
        assert_eq!(nb.weights.data(), &[0.9, 0.5]);
    }

    #[test]
    fn knn_points_on_a_line_pick_self_and_nearest() {
        // Positional-only features on 4 points; similarity from negative
        // squared distance, checked against pairwise brute force.
        let pos = positional_rows(Layout::Seq(4));
        let vals = Tensor::from_fn(&[4, 4], |e| {
            let (i, j) = (e / 4, e % 4);
            let d = pos.data()[i] - pos.data()[j];
            -d * d
        });
        let s = SimilarityMatrix { values: vals, normalized: false };
        let nb = knn(&s, 2, &candidates_all(4)).unwrap();
        for i in 0..4 {
            let mut by_dist: Vec<usize> = (0..4).collect();
            by_dist.sort_by(|&a, &b| {
                let da = (pos.data()[i] - pos.data()[a]).abs();
                let db = (pos.data()[i] - pos.data()[b]).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            assert_eq!(nb.indices.row(i), &by_dist[..2]);
            assert_eq!(nb.indices.get(i, 0), i);
        }
        assert_eq!(nb.indices.row(0), &[0, 1]);
        assert_eq!(nb.indices.row(3), &[3, 2]);
    }

    #[test]
    fn knn_rejects_k_above_candidates() {
        let s = similarity(&Tensor::eye(4), &Tensor::eye(4), true).unwrap();
        let c = candidates_random(4, 2, 0).unwrap();
        assert!(matches!(knn(&s, 3, &c), Err(crate::Error::Config(_))));
        assert!(matches!(knn(&s, 0, &c), Err(crate::Error::Config(_))));
    }

    #[test]
    fn knn_respects_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..20 {
            let x = Tensor::randn(&[12, 3], 1.0, &mut rng);
            let s = similarity(&x, &x, true).unwrap();
            let c = candidates_random(12, 5, seed).unwrap();
            let nb = knn(&s, 3, &c).unwrap();
            for i in 0..12 {
                for j in 0..3 {
                    let col = nb.indices.get(i, j);
                    assert!(c.indices.contains(&col));
                    assert_eq!(nb.weights.at2(i, j), s.values.at2(i, col));
                }
                assert!(nb.weights.at2(i, 0) >= nb.weights.at2(i, 1));
            }
        }
    }

    #[test]
    fn random_candidates_examples() {
        assert_eq!(candidates_random(7, 7, 3).unwrap().indices, (0..7).collect::<Vec<_>>());
        assert_eq!(candidates_random(7, 40, 3).unwrap().indices.len(), 7);
        let a = candidates_random(64, 16, 99).unwrap();
        let b = candidates_random(64, 16, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(candidates_random(4, 0, 0).is_err());
    }

    #[test]
    fn random_candidates_are_uniform() {
        let (n, r, draws) = (64usize, 16usize, 10_000u64);
        let mut counts = vec![0u64; n];
        for seed in 0..draws {
            for i in candidates_random(n, r, seed).unwrap().indices {
                counts[i] += 1;
            }
        }
        let p = r as f64 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() < 5.0 * sigma, "index {i}: {c}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // 63 dof; 99.99th percentile is about 117.
        assert!(chi2 < 117.0, "chi2 {chi2}");
    }

    #[test]
    fn spatial_candidates_examples() {
        assert_eq!(candidates_spatial(Layout::Seq(8), 2).unwrap().indices, vec![0, 2, 4, 6]);
        assert_eq!(
            candidates_spatial(Layout::Seq(5), 1).unwrap().indices,
            vec![0, 1, 2, 3, 4]
        );
        let grid = Layout::Grid { rows: 4, cols: 4 };
        assert_eq!(candidates_spatial(grid, 4).unwrap().indices, vec![0, 2, 8, 10]);
        assert_eq!(candidates_spatial(grid, 1).unwrap().len(), 16);
        assert!(matches!(candidates_spatial(grid, 2), Err(crate::Error::Config(_))));
        assert_eq!(candidates_spatial(grid, 4).unwrap(), candidates_spatial(grid, 4).unwrap());
    }

    #[test]
    fn positional_examples() {
        let x = Tensor::zeros(&[3, 2]);
        let a = append_positional(&x, Layout::Seq(2)).unwrap();
        assert_eq!(a.shape(), &[4, 2]);
        assert_eq!(&a.data()[6..], &[0.0, 1.0]);

        let x = Tensor::zeros(&[1, 2, 2]);
        let a = append_positional(&x, Layout::Grid { rows: 2, cols: 2 }).unwrap();
        assert_eq!(a.shape(), &[3, 2, 2]);
        assert_eq!(&a.data()[4..8], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&a.data()[8..], &[0.0, 0.0, 1.0, 1.0]);

        assert_eq!(positional_rows(Layout::Seq(1)).data(), &[0.0]);
        assert!(append_positional(&Tensor::zeros(&[1, 3]), Layout::Seq(2)).is_err());
    }

    #[test]
    fn permuting_keys_permutes_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.gen_range(3..10);
            let x = Tensor::randn(&[n, 4], 1.0, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            // Row p of the permuted source is row perm[p] of the original.
            let xp = x.select_rows(&perm).unwrap();
            let inv: Vec<usize> = {
                let mut inv = vec![0; n];
                for (p, &o) in perm.iter().enumerate() {
                    inv[o] = p;
                }
                inv
            };
            let s = similarity(&x, &x, true).unwrap();
            let sp = similarity(&x, &xp, true).unwrap();
            let k = n / 2 + 1;
            let a = knn(&s, k, &candidates_all(n)).unwrap();
            let b = knn(&sp, k, &candidates_all(n)).unwrap();
            for i in 0..n {
                for j in 0..k {
                    assert_eq!(b.indices.get(i, j), inv[a.indices.get(i, j)]);
                }
            }
        }
    }
}
