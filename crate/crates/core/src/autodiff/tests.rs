use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{self, FD_STEP};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec())
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::eye(2));
    let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ib = tape.matmul(i2, b).unwrap();
    assert_eq!(tape.value(ib).data(), &[5.0, 6.0, 7.0, 8.0]);
    let ab = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let o = tape.constant(Tensor::ones(&[3, 4]));
    let zo = tape.matmul(z, o).unwrap();
    assert_eq!(tape.value(zo), &Tensor::zeros(&[2, 4]));
    let err = tape.matmul(z, a).unwrap_err().to_string();
    assert!(err.contains("[2, 2]") && err.contains("[2, 3]"), "{err}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 3], &[0.0, 0.0, 0.0, 1000.0, 1000.0, -1e9, 0.0, 3f64.ln(), -1e9]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    for j in 0..3 {
        assert!((v[j] - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((v[3] - 0.5).abs() < 1e-15 && (v[4] - 0.5).abs() < 1e-15);
    assert!((v[6] - 0.25).abs() < 1e-15 && (v[7] - 0.75).abs() < 1e-15);
    for row in v.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn l2_normalize_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 2], &[0.6, 0.8, 3.0, 4.0, 0.0, 0.0]));
    let y = tape.l2_normalize_rows(x, 1e-12).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    assert!((v[2] - 0.6).abs() < 1e-15 && (v[3] - 0.8).abs() < 1e-15);
    assert_eq!(&v[4..], &[0.0, 0.0]);
}

#[test]
fn conv1d_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let id = tape.constant(t(&[1, 1, 1], &[1.0]));
    let b0 = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv1d(x, id, Some(b0), Conv1dKind::Regular, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let ones = tape.constant(Tensor::ones(&[1, 1, 2]));
    let y = tape.conv1d(x, ones, None, Conv1dKind::Regular, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);

    let x2 = tape.constant(t(&[2, 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]));
    let dw = tape.constant(Tensor::ones(&[2, 3]));
    let y = tape.conv1d(x2, dw, None, Conv1dKind::Depthwise, 3).unwrap();
    assert_eq!(tape.shape(y), &[2, 2]);
    assert_eq!(tape.value(y).data(), &[6.0, 15.0, 3.0, 6.0]);

    let long = tape.constant(Tensor::ones(&[1, 2]));
    let k3 = tape.constant(Tensor::ones(&[1, 1, 3]));
    assert!(matches!(
        tape.conv1d(long, k3, None, Conv1dKind::Regular, 1),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv1d_partitions_length_when_kernel_divides() {
    for (len, k) in [(12, 3), (12, 4), (9, 9), (10, 1)] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, len]));
        let w = tape.constant(Tensor::ones(&[2, k]));
        let y = tape.conv1d(x, w, None, Conv1dKind::Depthwise, k).unwrap();
        assert_eq!(tape.shape(y), &[2, len / k]);
    }
}

#[test]
fn gather_rows_examples() {
    let mut tape = Tape::new();
    let v = tape.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let self_idx = IndexMatrix::new(3, 2, vec![0, 0, 1, 1, 2, 2]).unwrap();
    let g = tape.gather_rows(v, &self_idx).unwrap();
    assert_eq!(tape.shape(g), &[3, 2, 2]);
    assert_eq!(
        tape.value(g).data(),
        &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0]
    );

    let dup = IndexMatrix::new(1, 2, vec![0, 0]).unwrap();
    let g = tape.gather_rows(v, &dup).unwrap();
    let s = tape.sum(g);
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(v).unwrap(), &[2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);

    let bad = IndexMatrix::new(1, 1, vec![3]).unwrap();
    assert!(matches!(
        tape.gather_rows(v, &bad),
        Err(Error::Index { index: 3, extent: 3 })
    ));
}

#[test]
fn gather_backward_conserves_gradient_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tape = Tape::new();
    let v = tape.param(Tensor::randn(&[5, 3], 1.0, &mut rng));
    let idx = IndexMatrix::new(4, 3, vec![0, 4, 4, 1, 1, 1, 2, 0, 3, 4, 2, 0]).unwrap();
    let g = tape.gather_rows(v, &idx).unwrap();
    let w = tape.constant(Tensor::randn(&[4, 3, 3], 1.0, &mut rng));
    let incoming: f64 = tape.value(w).sum();
    let p = tape.mul(g, w).unwrap();
    let s = tape.sum(p);
    let grads = tape.backward(s).unwrap();
    let scattered: f64 = grads.get(v).unwrap().iter().sum();
    assert!((scattered - incoming).abs() < 1e-12);
}

#[test]
fn backward_basics() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    assert!(matches!(tape.backward(sq), Err(Error::Usage(_))));

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let c = tape.constant(t(&[1], &[4.0]));
    let s = tape.sum(c);
    let grads = tape.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert_eq!(grads.tensor(&tape, x), Tensor::zeros(&[2]));
}

#[test]
fn pixel_unshuffle_shape_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 3]));
    assert!(matches!(tape.pixel_unshuffle(x, 2), Err(Error::Dimension(_))));
}

#[test]
fn cross_entropy_closed_forms() {
    let mut tape = Tape::new();
    let z = tape.param(Tensor::zeros(&[2, 5]));
    let l = tape.cross_entropy(z, &[1, 3]).unwrap();
    assert!((tape.value(l).data()[0] - 5f64.ln()).abs() < 1e-14);
    let peaked = tape.constant(t(&[1, 3], &[0.0, 60.0, 0.0]));
    let l = tape.cross_entropy(peaked, &[1]).unwrap();
    assert!(tape.value(l).data()[0] < 1e-20);
    assert!(matches!(
        tape.cross_entropy(peaked, &[3]),
        Err(Error::Index { index: 3, .. })
    ));
}

const SEEDS: u64 = 20;
const TOL: f64 = 1e-5;

fn check_all_seeds<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
        let report = gradcheck::check(&f, &inputs, FD_STEP).unwrap();
        assert!(
            report.max_rel_error() < TOL,
            "{name} seed {seed}: rel err {:?}",
            report.rel_errors
        );
    }
}

/// Contracts an arbitrary-shaped output to a scalar with fixed pseudo-random
/// weights so every output entry reaches the gradient.
fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var> {
    let n = tape.value(y).len();
    let w = Tensor::from_fn(tape.shape(y), |i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0 + 0.01 * n as f64);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn fd_matmul_transpose_reshape() {
    check_all_seeds("matmul", &[&[3, 4], &[4, 2]], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y)
    });
    check_all_seeds("transpose", &[&[3, 4]], |t, v| {
        let y = t.transpose(v[0])?;
        let y = t.reshape(y, &[2, 6])?;
        weighted_sum(t, y)
    });
}

#[test]
fn fd_elementwise() {
    check_all_seeds("add_mul", &[&[2, 3], &[2, 3]], |t, v| {
        let a = t.add(v[0], v[1])?;
        let m = t.mul(a, v[0])?;
        weighted_sum(t, m)
    });
    check_all_seeds("bias_scale_gelu", &[&[4, 3], &[3]], |t, v| {
        let a = t.add_row_bias(v[0], v[1])?;
        let s = t.scale(a, 1.7);
        let g = t.gelu(s);
        weighted_sum(t, g)
    });
    check_all_seeds("relu", &[&[5, 3]], |t, v| {
        let r = t.relu(v[0]);
        weighted_sum(t, r)
    });
}

#[test]
fn fd_row_ops() {
    check_all_seeds("softmax", &[&[3, 4]], |t, v| {
        let y = t.softmax_rows(v[0])?;
        weighted_sum(t, y)
    });
    check_all_seeds("l2norm", &[&[3, 4]], |t, v| {
        let y = t.l2_normalize_rows(v[0], 1e-12)?;
        weighted_sum(t, y)
    });
    check_all_seeds("layernorm", &[&[3, 5], &[5], &[5]], |t, v| {
        let y = t.layer_norm_rows(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(t, y)
    });
    check_all_seeds("scale_rows", &[&[4, 3], &[4]], |t, v| {
        let y = t.scale_rows(v[0], v[1])?;
        weighted_sum(t, y)
    });
    check_all_seeds("mean_cols", &[&[4, 3]], |t, v| {
        let y = t.mean_cols(v[0])?;
        weighted_sum(t, y)
    });
}

#[test]
fn fd_gathers_and_concats() {
    let idx = IndexMatrix::new(3, 2, vec![2, 0, 1, 1, 0, 3]).unwrap();
    check_all_seeds("gather_rows", &[&[4, 3]], |t, v| {
        let y = t.gather_rows(v[0], &idx)?;
        weighted_sum(t, y)
    });
    check_all_seeds("gather_elements", &[&[3, 4]], |t, v| {
        let y = t.gather_elements(v[0], &idx)?;
        weighted_sum(t, y)
    });
    let cols = [3, 0, 0, 2, 1];
    check_all_seeds("gather_cols", &[&[2, 4]], |t, v| {
        let y = t.gather_cols(v[0], &cols, None)?;
        weighted_sum(t, y)
    });
    check_all_seeds("gather_cols_scaled", &[&[2, 4], &[5]], |t, v| {
        let y = t.gather_cols(v[0], &cols, Some(v[1]))?;
        weighted_sum(t, y)
    });
    check_all_seeds("concat", &[&[2, 3], &[1, 3], &[2, 2]], |t, v| {
        let r = t.concat_rows(&[v[0], v[1]])?;
        let c = t.concat_cols(&[v[0], v[2]])?;
        let a = weighted_sum(t, r)?;
        let b = weighted_sum(t, c)?;
        let s = t.concat_rows(&[a, b])?;
        Ok(t.sum(s))
    });
}

#[test]
fn fd_convolutions() {
    check_all_seeds("conv1d_regular", &[&[3, 8], &[2, 3, 3], &[2]], |t, v| {
        let y = t.conv1d(v[0], v[1], Some(v[2]), Conv1dKind::Regular, 2)?;
        weighted_sum(t, y)
    });
    check_all_seeds("conv1d_depthwise", &[&[3, 9], &[3, 3], &[3]], |t, v| {
        let y = t.conv1d(v[0], v[1], Some(v[2]), Conv1dKind::Depthwise, 3)?;
        weighted_sum(t, y)
    });
    check_all_seeds("conv2d_same", &[&[2, 4, 5], &[3, 2, 3, 3], &[3]], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
        weighted_sum(t, y)
    });
    check_all_seeds("conv2d_valid", &[&[2, 4, 4], &[1, 2, 2, 3]], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 0)?;
        weighted_sum(t, y)
    });
    check_all_seeds("pool_unshuffle", &[&[2, 4, 4]], |t, v| {
        let p = t.max_pool2(v[0])?;
        let u = t.pixel_unshuffle(v[0], 2)?;
        let a = weighted_sum(t, p)?;
        let b = weighted_sum(t, u)?;
        t.add(a, b)
    });
}

#[test]
fn fd_cross_entropy_matches_softmax_minus_onehot() {
    let labels = [2usize, 0, 1];
    check_all_seeds("cross_entropy", &[&[3, 4]], |t, v| t.cross_entropy(v[0], &labels));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let mut tape = Tape::new();
    let z = tape.param(logits.clone());
    let l = tape.cross_entropy(z, &labels).unwrap();
    let g = tape.backward(l).unwrap();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..4 {
            let p = (row[j] - max).exp() / denom;
            let expected = (p - if j == label { 1.0 } else { 0.0 }) / 3.0;
            assert!((g.get(z).unwrap()[i * 4 + j] - expected).abs() < 1e-15);
        }
    }
}
