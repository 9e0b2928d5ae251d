//! Central finite-difference checks for scalar functions built on a [`Tape`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::convnn::{
    forward_on, Affine, AggregationKind, AggregationParams, AggregationVars, AggregationWeights,
    ConvNNConfig, ConvNNOutput, ProjectionParams, ProjectionVars, Rho, SeedPolicy,
};
use crate::error::{Error, Result};
use crate::neighbor::{similarity_on, Layout, Strategy};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error `|analytic - numeric| / max(|analytic|, |numeric|)`
    /// per input.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates `f` once without recording gradients.
pub fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with step `h` on every input entry.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.tensor(&tape, v)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for which in 0..inputs.len() {
        let mut g = vec![0.0; inputs[which].len()];
        for (e, slot) in g.iter_mut().enumerate() {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + h;
            let plus = eval(&f, &work)?;
            work[which].data_mut()[e] = orig - h;
            let minus = eval(&f, &work)?;
            work[which].data_mut()[e] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        numeric.push(Tensor::from_vec(inputs[which].shape(), g));
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect();
    Ok(GradCheck {
        rel_errors,
        analytic,
        numeric,
    })
}

/// Norm-wise relative error; zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Result of [`check_convnn_chain`].
#[derive(Clone, Debug)]
pub struct ChainCheck {
    pub check: GradCheck,
    /// Smallest gap between consecutive sorted similarities among each row's
    /// top `k + 1` candidates.
    pub gap: f64,
    /// Fixture seed that produced the gap.
    pub seed: u64,
}

const CHAIN_ROWS: usize = 4;
const CHAIN_K: usize = 3;

fn chain_fixture(
    rho: Rho,
    strategy: Strategy,
    kind: AggregationKind,
    seed: u64,
) -> (ConvNNConfig, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let out = if kind == AggregationKind::Depthwise { c } else { 2 };
    let r = match strategy {
        Strategy::Spatial => 4,
        _ => 8,
    };
    let cfg = ConvNNConfig {
        rho,
        aggregation: kind,
        seed_policy: SeedPolicy::Fixed(seed),
        ..ConvNNConfig::new(CHAIN_K, out).with_strategy(strategy, r)
    };
    let n = CHAIN_ROWS * CHAIN_ROWS;
    let proj = ProjectionParams::learned(c, c, c, c, &mut rng);
    let agg = AggregationParams::random(kind, c, out, CHAIN_K, true, &mut rng);
    let mut inputs = vec![
        Tensor::randn(&[n, c], 1.0, &mut rng),
        proj.wq,
        proj.wk,
        proj.wv,
        Tensor::randn(&[c], 0.5, &mut rng),
        Tensor::randn(&[c], 0.5, &mut rng),
        Tensor::randn(&[c], 0.5, &mut rng),
    ];
    match agg.weights {
        AggregationWeights::Regular(w) | AggregationWeights::Depthwise(w) => inputs.push(w),
        AggregationWeights::Separable { depth, point } => {
            inputs.push(depth);
            inputs.push(point);
        }
    }
    inputs.extend(agg.bias);
    (cfg, inputs)
}

fn chain_forward(tape: &mut Tape, v: &[Var], cfg: &ConvNNConfig) -> Result<ConvNNOutput> {
    let affine = |w: Var, b: Var| Some(Affine { w, b: Some(b) });
    let proj = ProjectionVars {
        q: affine(v[1], v[4]),
        k: affine(v[2], v[5]),
        v: affine(v[3], v[6]),
    };
    let separable = cfg.aggregation == AggregationKind::DepthwiseSeparable;
    let agg = AggregationVars {
        kind: cfg.aggregation,
        weight: v[7],
        point: separable.then(|| v[8]),
        bias: Some(v[v.len() - 1]),
    };
    let layout = Layout::Grid { rows: CHAIN_ROWS, cols: CHAIN_ROWS };
    let seed = cfg.seed_policy.resolve::<ChaCha8Rng>(None);
    forward_on(tape, v[0], layout, cfg, &proj, &agg, seed)
}

fn similarity_gap(cfg: &ConvNNConfig, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = chain_forward(&mut tape, &vars, cfg)?;
    let q = Affine { w: vars[1], b: Some(vars[4]) }.apply(&mut tape, vars[0])?;
    let k = Affine { w: vars[2], b: Some(vars[5]) }.apply(&mut tape, vars[0])?;
    let keys = tape.gather_rows_flat(k, &out.selection.candidates.indices)?;
    let sim = similarity_on(&mut tape, q, keys, cfg.normalize)?;
    let s = tape.value(sim);
    let (n, m) = s.dims2()?;
    let depth = (cfg.k + 1).min(m);
    let mut gap = f64::INFINITY;
    for i in 0..n {
        let mut row = s.row(i).to_vec();
        row.sort_by(|a, b| b.total_cmp(a));
        for j in 1..depth {
            gap = gap.min(row[j - 1] - row[j]);
        }
    }
    Ok(gap)
}

/// Finite-difference check of the whole operator (input, projections with
/// biases, aggregation weights and bias) on a 4x4 grid with `k = 3`.
/// Fixtures are redrawn from `seed` upward until every similarity gap
/// exceeds `min_gap`, so no perturbation can reorder neighbors.
pub fn check_convnn_chain(
    rho: Rho,
    strategy: Strategy,
    kind: AggregationKind,
    seed: u64,
    min_gap: f64,
) -> Result<ChainCheck> {
    for s in seed..seed + 1000 {
        let (cfg, inputs) = chain_fixture(rho, strategy, kind, s);
        let gap = similarity_gap(&cfg, &inputs)?;
        if gap <= min_gap {
            continue;
        }
        let check = check(
            |tape, v| {
                let out = chain_forward(tape, v, &cfg)?;
                let sq = tape.mul(out.y, out.y)?;
                Ok(tape.sum(sq))
            },
            &inputs,
            FD_STEP,
        )?;
        return Ok(ChainCheck { check, gap, seed: s });
    }
    Err(Error::Validation(format!(
        "no fixture with similarity gap above {min_gap} in 1000 draws from seed {seed}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_check_every_combination() {
        for rho in [Rho::Ones, Rho::Softmax] {
            for strategy in [Strategy::All, Strategy::Random, Strategy::Spatial] {
                for kind in [
                    AggregationKind::Depthwise,
                    AggregationKind::Regular,
                    AggregationKind::DepthwiseSeparable,
                ] {
                    let c = check_convnn_chain(rho, strategy, kind, 0, 1e-3).unwrap();
                    assert!(c.gap > 1e-3);
                    assert!(
                        c.check.max_rel_error() < 1e-5,
                        "{rho:?} {strategy:?} {kind:?}: {:?}",
                        c.check.rel_errors
                    );
                }
            }
        }
    }
}
