//! The ConvNN operator.
//!
//! For `x: [n, c]` the operator
//!
//! 1. projects `Q = f_Q(x)`, `K = f_K(x)`, `V = f_V(x)` and forms
//!    `S = Q K^T` (cosine similarity when `normalize` is set);
//! 2. keeps, per query row, the `k` candidate keys with the largest
//!    similarity, in descending order, and scales each gathered value row
//!    by `rho(s_i)` (ones or softmax);
//! 3. stacks the `n` neighborhoods into a `[k*n, v]` sequence;
//! 4. aggregates it with a kernel-`k`, stride-`k` 1D convolution, giving
//!    exactly one output row per query.
//!
//! Spatial inputs `[c, rows, cols]` are flattened row-major to `[rows*cols, c]`
//! first and reshaped back afterwards.

mod config;
mod flops;
mod params;

pub use config::{AggregationKind, ConvNNConfig, Positional, Rho, SeedPolicy, EVAL_SEED};
pub use flops::{flop_estimate, FlopBreakdown, FlopShape, FlopTarget};
pub use params::{
    Affine, AggregationParams, AggregationVars, AggregationWeights, ProjectionMode,
    ProjectionParams, ProjectionVars,
};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Conv1dKind, IndexMatrix, Tape, Var};
use crate::error::{config_err, dim_err, Error, Result};
use crate::neighbor::{
    candidates_all, candidates_random, candidates_spatial, positional_rows, similarity_on,
    top_k_rows, CandidateSet, Layout, NeighborIndex, Strategy,
};
use crate::tensor::Tensor;

/// Neighbor choice made during one forward pass.
#[derive(Clone, Debug)]
pub struct Selection {
    pub candidates: CandidateSet,
    pub neighbors: NeighborIndex,
}

pub struct ConvNNOutput {
    pub y: Var,
    pub selection: Selection,
}

pub fn resolve_candidates(cfg: &ConvNNConfig, layout: Layout, seed: u64) -> Result<CandidateSet> {
    let n = layout.len();
    match cfg.strategy {
        Strategy::All => Ok(candidates_all(n)),
        Strategy::Random => candidates_random(n, cfg.r, seed),
        Strategy::Spatial => candidates_spatial(layout, cfg.r),
    }
}

/// Records the operator on `tape` for `x: [n, c]` laid out as `layout`.
/// `seed` drives random candidate sampling only.
pub fn forward_on(
    tape: &mut Tape,
    x: Var,
    layout: Layout,
    cfg: &ConvNNConfig,
    proj: &ProjectionVars,
    agg: &AggregationVars,
    seed: u64,
) -> Result<ConvNNOutput> {
    let (n, c) = tape.value(x).dims2()?;
    if n != layout.len() {
        return Err(dim_err(format!(
            "{n} rows do not match layout {layout:?}"
        )));
    }
    if !tape.value(x).is_finite() {
        return Err(Error::Validation("convnn input contains NaN or Inf".into()));
    }

    let augmented = if cfg.positional == Positional::None {
        x
    } else {
        let pos = tape.constant(positional_rows(layout));
        tape.concat_cols(&[x, pos])?
    };
    let v_src = if cfg.positional == Positional::SimilarityAndValues {
        augmented
    } else {
        x
    };
    let v_in = if v_src == x { c } else { c + layout.positional_width() };
    let v_width = proj.v.map_or(v_in, |a| tape.shape(a.w)[1]);
    cfg.validate(v_width)?;
    check_aggregation(tape, agg, cfg)?;

    let candidates = resolve_candidates(cfg, layout, seed)?;
    if cfg.k > candidates.len() {
        return Err(config_err(format!(
            "k={} exceeds the {} available candidates",
            cfg.k,
            candidates.len()
        )));
    }

    let apply = |tape: &mut Tape, a: Option<Affine>, src: Var| match a {
        Some(a) => a.apply(tape, src),
        None => Ok(src),
    };
    let q = apply(tape, proj.q, augmented)?;
    let k = apply(tape, proj.k, augmented)?;
    let v = apply(tape, proj.v, v_src)?;

    let keys = if candidates.strategy == Strategy::All {
        k
    } else {
        tape.gather_rows_flat(k, &candidates.indices)?
    };
    let sim = similarity_on(tape, q, keys, cfg.normalize)?;

    let (local, _) = top_k_rows(tape.value(sim), cfg.k)?;
    let weights = tape.gather_elements(sim, &local)?;
    let global: Vec<usize> = local.data().iter().map(|&j| candidates.indices[j]).collect();

    // Neighborhoods are assembled channel-first so the strided convolution
    // reads them without a transpose of the k*n stack.
    let rho = if cfg.rho == Rho::Softmax {
        let s = tape.softmax_rows(weights)?;
        Some(tape.reshape(s, &[n * cfg.k])?)
    } else {
        None
    };
    let vt = tape.transpose(v)?;
    let seq = tape.gather_cols(vt, &global, rho)?;
    let y = conv_seq(tape, seq, agg, cfg.k)?;
    let y = tape.transpose(y)?;

    let selection = Selection {
        neighbors: NeighborIndex {
            indices: IndexMatrix::new(n, cfg.k, global)?,
            weights: tape.value(weights).clone(),
        },
        candidates,
    };
    Ok(ConvNNOutput { y, selection })
}

fn check_aggregation(tape: &Tape, agg: &AggregationVars, cfg: &ConvNNConfig) -> Result<()> {
    let shape = tape.shape(agg.weight);
    let kernel = shape[shape.len() - 1];
    if kernel != cfg.k {
        return Err(config_err(format!(
            "aggregation kernel extent {kernel} differs from k={}",
            cfg.k
        )));
    }
    if agg.kind != cfg.aggregation {
        return Err(config_err(format!(
            "aggregation parameters are {:?} but the config asks for {:?}",
            agg.kind, cfg.aggregation
        )));
    }
    let out = match agg.point {
        Some(p) => tape.shape(p)[1],
        None => shape[0],
    };
    if out != cfg.out_channels {
        return Err(config_err(format!(
            "aggregation produces {out} channels, config asks for {}",
            cfg.out_channels
        )));
    }
    Ok(())
}

/// Stride-`k`, kernel-`k` aggregation of a `[k*n, v]` neighborhood stack
/// into `[n, out]`.
pub fn aggregate(tape: &mut Tape, stacked: Var, agg: &AggregationVars, k: usize) -> Result<Var> {
    let seq = tape.transpose(stacked)?;
    let y = conv_seq(tape, seq, agg, k)?;
    tape.transpose(y)
}

/// Channel-first strided convolution `[v, len] -> [out, len']`.
fn conv_seq(tape: &mut Tape, seq: Var, agg: &AggregationVars, stride: usize) -> Result<Var> {
    match agg.kind {
        AggregationKind::Regular => tape.conv1d(seq, agg.weight, agg.bias, Conv1dKind::Regular, stride),
        AggregationKind::Depthwise => tape.conv1d(seq, agg.weight, agg.bias, Conv1dKind::Depthwise, stride),
        AggregationKind::DepthwiseSeparable => {
            let point = agg
                .point
                .ok_or_else(|| config_err("separable aggregation needs a pointwise kernel"))?;
            let d = tape.conv1d(seq, agg.weight, None, Conv1dKind::Depthwise, stride)?;
            let dt = tape.transpose(d)?;
            let mut y = tape.matmul(dt, point)?;
            if let Some(b) = agg.bias {
                y = tape.add_row_bias(y, b)?;
            }
            tape.transpose(y)
        }
    }
}

/// 2D wrapper over `x: [c, rows, cols]`, returning `[out, rows/p, cols/p]`.
pub fn forward_2d_on(
    tape: &mut Tape,
    x: Var,
    cfg: &ConvNNConfig,
    proj: &ProjectionVars,
    agg: &AggregationVars,
    seed: u64,
) -> Result<ConvNNOutput> {
    let x = if cfg.patch > 1 {
        tape.pixel_unshuffle(x, cfg.patch)?
    } else {
        x
    };
    let (c, rows, cols) = tape.value(x).dims3()?;
    let flat = tape.reshape(x, &[c, rows * cols])?;
    let tokens = tape.transpose(flat)?;
    let out = forward_on(tape, tokens, Layout::Grid { rows, cols }, cfg, proj, agg, seed)?;
    let yt = tape.transpose(out.y)?;
    let out_ch = tape.shape(yt)[0];
    let y = tape.reshape(yt, &[out_ch, rows, cols])?;
    Ok(ConvNNOutput {
        y,
        selection: out.selection,
    })
}

fn fixed_seed(cfg: &ConvNNConfig) -> u64 {
    cfg.seed_policy.resolve::<ChaCha8Rng>(None)
}

/// Evaluates the operator on `x: [n, c]` without keeping a tape.
pub fn convnn_forward(
    x: &Tensor,
    cfg: &ConvNNConfig,
    proj: &ProjectionParams,
    agg: &AggregationParams,
) -> Result<Tensor> {
    Ok(convnn_forward_with_selection(x, cfg, proj, agg)?.0)
}

pub fn convnn_forward_with_selection(
    x: &Tensor,
    cfg: &ConvNNConfig,
    proj: &ProjectionParams,
    agg: &AggregationParams,
) -> Result<(Tensor, Selection)> {
    proj.validate()?;
    let n = x.dims2()?.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = proj.bind(&mut tape, false);
    let av = agg.bind(&mut tape);
    let out = forward_on(&mut tape, xv, Layout::Seq(n), cfg, &pv, &av, fixed_seed(cfg))?;
    Ok((tape.value(out.y).clone(), out.selection))
}

/// Evaluates the 2D operator on `x: [c, rows, cols]`.
pub fn convnn_forward_2d(
    x: &Tensor,
    cfg: &ConvNNConfig,
    proj: &ProjectionParams,
    agg: &AggregationParams,
) -> Result<Tensor> {
    Ok(convnn_forward_2d_with_selection(x, cfg, proj, agg)?.0)
}

pub fn convnn_forward_2d_with_selection(
    x: &Tensor,
    cfg: &ConvNNConfig,
    proj: &ProjectionParams,
    agg: &AggregationParams,
) -> Result<(Tensor, Selection)> {
    proj.validate()?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = proj.bind(&mut tape, false);
    let av = agg.bind(&mut tape);
    let out = forward_2d_on(&mut tape, xv, cfg, &pv, &av, fixed_seed(cfg))?;
    Ok((tape.value(out.y).clone(), out.selection))
}

/// Scales gathered neighbor values `[n, k, c]` by `rho(weights)` per row.
pub fn modulate(values: &Tensor, weights: &Tensor, rho: Rho) -> Result<Tensor> {
    let (n, k, c) = values.dims3()?;
    if weights.shape() != [n, k] {
        return Err(dim_err(format!(
            "weights {:?} do not match values {:?}",
            weights.shape(),
            values.shape()
        )));
    }
    if rho == Rho::Ones {
        return Ok(values.clone());
    }
    let mut tape = Tape::new();
    let v = tape.constant(values.reshape(&[n * k, c])?);
    let w = tape.constant(weights.clone());
    let s = tape.softmax_rows(w)?;
    let s = tape.reshape(s, &[n * k])?;
    let y = tape.scale_rows(v, s)?;
    tape.value(y).reshape(&[n, k, c])
}

/// Strided 1D convolution of `x: [c, len]` with the given parameters.
pub fn conv1d(x: &Tensor, params: &AggregationParams, stride: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let av = params.bind(&mut tape);
    let y = conv_seq(&mut tape, xv, &av, stride)?;
    Ok(tape.value(y).clone())
}
