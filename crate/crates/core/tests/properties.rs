use convnn::convnn::{
    convnn_forward, AggregationKind, AggregationParams, ConvNNConfig, ProjectionParams, Rho,
};
use convnn::neighbor::{
    candidates_all, candidates_random, candidates_spatial, knn, similarity, top_k_rows, Layout,
};
use convnn::oracles::knn_bruteforce;
use convnn::tensor::{pixel_shuffle, pixel_unshuffle};
use convnn::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn project(x: &Tensor, w: &Tensor) -> Tensor {
    let ((n, c), h) = (x.dims2().unwrap(), w.dims2().unwrap().1);
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        for l in 0..c {
            for j in 0..h {
                out[i * h + j] += x.at2(i, l) * w.at2(l, j);
            }
        }
    }
    Tensor::from_vec(&[n, h], out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..8, cols in 1usize..12, scale in 1e-3f64..1e3, seed: u64) {
        let mut tape = Tape::new();
        let x = tape.constant(gaussian(&[rows, cols], seed).map(|v| v * scale));
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.value(s);
        for i in 0..rows {
            let sum: f64 = v.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {} sums to {}", i, sum);
            prop_assert!(v.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn permutation_equivariance(n in 2usize..14, c in 1usize..5, seed: u64, softmax: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1 + (seed as usize) % n;
        let x = Tensor::randn(&[n, c], 1.0, &mut rng);
        let proj = ProjectionParams::learned(c, c, c, c, &mut rng);
        let cfg = ConvNNConfig {
            rho: if softmax { Rho::Softmax } else { Rho::Ones },
            aggregation: AggregationKind::DepthwiseSeparable,
            ..ConvNNConfig::new(k, 2)
        };
        let agg = AggregationParams::random(AggregationKind::DepthwiseSeparable, c, 2, k, true, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // Near-ties may legitimately reorder under permutation.
        let sim = similarity(&project(&x, &proj.wq), &project(&x, &proj.wk), true).unwrap();
        let min_gap = (0..n)
            .flat_map(|i| {
                let mut row = sim.values.row(i).to_vec();
                row.sort_by(|a, b| b.total_cmp(a));
                row.windows(2).map(|p| p[0] - p[1]).collect::<Vec<_>>()
            })
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-9);
        let y = convnn_forward(&x, &cfg, &proj, &agg).unwrap();
        let yp = convnn_forward(&x.select_rows(&perm).unwrap(), &cfg, &proj, &agg).unwrap();
        let dev = yp.max_abs_diff(&y.select_rows(&perm).unwrap()).unwrap();
        prop_assert!(dev <= 1e-12, "deviation {}", dev);
    }

    #[test]
    fn knn_matches_bruteforce(n in 1usize..=32, c in 1usize..6, seed: u64) {
        let x = gaussian(&[n, c], seed);
        let k = 1 + (seed as usize) % n;
        let got = knn(&similarity(&x, &x, true).unwrap(), k, &candidates_all(n)).unwrap();
        prop_assert_eq!(got.indices, knn_bruteforce(&x, k).unwrap());
    }

    #[test]
    fn top_k_descending_with_lowest_index_ties(rows in 1usize..6, cols in 1usize..10, seed: u64) {
        // Values on a coarse grid force ties.
        let v = gaussian(&[rows, cols], seed).map(|a| (a * 2.0).round());
        let k = 1 + (seed as usize) % cols;
        let (idx, vals) = top_k_rows(&v, k).unwrap();
        for i in 0..rows {
            let row = idx.row(i);
            for j in 1..k {
                let (a, b) = (vals.at2(i, j - 1), vals.at2(i, j));
                prop_assert!(a > b || (a == b && row[j - 1] < row[j]));
            }
            let kth = vals.at2(i, k - 1);
            for (col, &x) in v.row(i).iter().enumerate() {
                if !row.contains(&col) {
                    prop_assert!(x < kth || (x == kth && col > row[k - 1]));
                }
            }
        }
    }

    #[test]
    fn random_candidates_are_distinct_and_pure(n in 1usize..64, r in 1usize..80, seed: u64) {
        let a = candidates_random(n, r, seed).unwrap();
        prop_assert_eq!(&a, &candidates_random(n, r, seed).unwrap());
        prop_assert_eq!(a.len(), r.min(n));
        let mut sorted = a.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), a.len());
        prop_assert!(a.indices.iter().all(|&i| i < n));
    }

    #[test]
    fn selection_stays_inside_candidates(side in 2usize..7, seed: u64, spatial: bool) {
        let n = side * side;
        let layout = Layout::Grid { rows: side, cols: side };
        let cands = if spatial {
            candidates_spatial(layout, 1).unwrap()
        } else {
            candidates_random(n, n.div_ceil(2), seed).unwrap()
        };
        let x = gaussian(&[n, 3], seed);
        let k = 1 + (seed as usize) % cands.len();
        let nb = knn(&similarity(&x, &x, true).unwrap(), k, &cands).unwrap();
        prop_assert!(nb.indices.data().iter().all(|j| cands.indices.contains(j)));
        prop_assert_eq!(nb.indices.rows(), n);
    }

    #[test]
    fn pixel_unshuffle_round_trip(c in 1usize..4, blocks in 1usize..4, p in 1usize..4, seed: u64) {
        let x = gaussian(&[c, blocks * p, blocks * p], seed);
        let y = pixel_unshuffle(&x, p).unwrap();
        prop_assert_eq!(y.shape(), &[c * p * p, blocks, blocks]);
        prop_assert_eq!(pixel_shuffle(&y, p).unwrap(), x);
    }
}
