//! Property suites run by `convnn verify`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::convnn::{
    convnn_forward, flop_estimate, AggregationKind, AggregationParams, AggregationWeights,
    ConvNNConfig, FlopShape, FlopTarget, ProjectionParams, Rho,
};
use crate::error::Result;
use crate::gradcheck::check_convnn_chain;
use crate::model::{
    fit, mini_vgg, BranchingConfig, BranchingLayer, Dataset, LayerKind, Model, ParamStore,
    TrainConfig, VggConfig,
};
use crate::neighbor::{candidates_all, knn, similarity, Layout, Strategy};
use crate::oracles::{check_attention_reduction, check_attention_reduction_with, check_conv_reduction, knn_bruteforce};
use crate::tensor::{pixel_shuffle, pixel_unshuffle, Tensor};

/// Every suite name accepted by `--filter`.
pub const SUITES: &[&str] = &[
    "equivalence",
    "gradients",
    "equivariance",
    "knn",
    "flops",
    "branching",
    "determinism",
];

/// One checked property.
#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub suite: &'static str,
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Property {
    fn within(suite: &'static str, name: impl Into<String>, deviation: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }

    fn holds(suite: &'static str, name: impl Into<String>, ok: bool) -> Self {
        Self {
            suite,
            name: name.into(),
            deviation: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: ok,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}/{} deviation={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.deviation,
            self.tolerance
        )
    }
}

/// Runs the named suite.
pub fn run_suite(name: &str) -> Result<Vec<Property>> {
    match name {
        "equivalence" => equivalence(),
        "gradients" => gradients(),
        "equivariance" => equivariance(50),
        "knn" => knn_suite(50),
        "flops" => flops(),
        "branching" => branching(),
        "determinism" => determinism(),
        other => Err(crate::Error::Usage(format!(
            "unknown suite `{other}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

fn equivalence() -> Result<Vec<Property>> {
    let mut out = Vec::new();
    for n in [4, 8, 16, 32] {
        for c in [4, 8] {
            let mut ks = vec![1, 3, n / 2, n];
            ks.dedup();
            for kk in ks {
                let mut worst: f64 = 0.0;
                let mut tol = 0.0;
                for seed in 0..10 {
                    let r = check_attention_reduction(n, c, c, c, kk, seed)?;
                    worst = worst.max(if r.deviation.is_nan() { f64::INFINITY } else { r.deviation });
                    tol = r.tolerance;
                }
                out.push(Property::within("equivalence", format!("attention n={n} c={c} k={kk}"), worst, tol));
            }
        }
    }
    for side in [5, 8] {
        let r = check_conv_reduction(side, side, 9)?;
        out.push(Property::within("equivalence", format!("convolution {side}x{side}"), r.deviation, r.tolerance));
        let matched = r.config["interior_matched"].as_u64().unwrap_or(0);
        let interior = r.config["interior_positions"].as_u64().unwrap_or(u64::MAX);
        out.push(Property::within(
            "equivalence",
            format!("convolution {side}x{side} interior windows ({matched}/{interior})"),
            interior.saturating_sub(matched) as f64,
            0.0,
        ));
    }
    let mut agg = AggregationParams::unit_depthwise(4, 8);
    if let AggregationWeights::Depthwise(w) = &mut agg.weights {
        w.data_mut()[0] = 1.0 + 1e-6;
    }
    let r = check_attention_reduction_with(8, 4, 4, 4, 8, 0, &agg)?;
    out.push(Property::holds(
        "equivalence",
        format!("perturbed unit kernel detected (deviation {:.3e})", r.deviation),
        !r.passed,
    ));
    Ok(out)
}

fn gradients() -> Result<Vec<Property>> {
    let mut out = Vec::new();
    for rho in [Rho::Ones, Rho::Softmax] {
        for strategy in [Strategy::All, Strategy::Random, Strategy::Spatial] {
            for kind in [
                AggregationKind::Depthwise,
                AggregationKind::Regular,
                AggregationKind::DepthwiseSeparable,
            ] {
                let c = check_convnn_chain(rho, strategy, kind, 0, 1e-3)?;
                out.push(Property::within(
                    "gradients",
                    format!("{} {} {}", rho.name(), strategy.name(), kind.name()),
                    c.check.max_rel_error(),
                    1e-5,
                ));
            }
        }
    }
    Ok(out)
}

/// `f(P x) = P f(x)` on random instances with learned projections.
pub fn equivariance(instances: u64) -> Result<Vec<Property>> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..17);
        let c = rng.gen_range(2..6);
        let k = rng.gen_range(1..=n);
        let rho = if seed % 2 == 0 { Rho::Softmax } else { Rho::Ones };
        let cfg = ConvNNConfig {
            rho,
            aggregation: AggregationKind::Regular,
            ..ConvNNConfig::new(k, 3)
        };
        let x = Tensor::randn(&[n, c], 1.0, &mut rng);
        let proj = ProjectionParams::learned(c, c, c, c, &mut rng);
        let agg = AggregationParams::random(AggregationKind::Regular, c, 3, k, true, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let y = convnn_forward(&x, &cfg, &proj, &agg)?;
        let yp = convnn_forward(&x.select_rows(&perm)?, &cfg, &proj, &agg)?;
        worst = worst.max(yp.max_abs_diff(&y.select_rows(&perm)?)?);
    }
    Ok(vec![Property::within(
        "equivariance",
        format!("permutation equivariance over {instances} instances"),
        worst,
        1e-12,
    )])
}

/// Selection with all candidates against the exhaustive oracle.
pub fn knn_suite(instances: u64) -> Result<Vec<Property>> {
    let mut mismatches = 0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(1..33);
        let c = rng.gen_range(1..6);
        let k = rng.gen_range(1..=n);
        let x = Tensor::randn(&[n, c], 1.0, &mut rng);
        let got = knn(&similarity(&x, &x, true)?, k, &candidates_all(n))?;
        if got.indices != knn_bruteforce(&x, k)? {
            mismatches += 1;
        }
    }
    Ok(vec![Property::within(
        "knn",
        format!("strategy=all equals brute force on {instances} instances"),
        mismatches as f64,
        0.0,
    )])
}

/// Token grid of ViT-Tiny at 224 pixels with 16-pixel patches.
pub const VIT_TINY_LAYOUT: Layout = Layout::Grid { rows: 14, cols: 14 };
pub const VIT_TINY_WIDTH: usize = 192;

fn flops() -> Result<Vec<Property>> {
    let shape = FlopShape::uniform(VIT_TINY_WIDTH, true);
    let convnn = |strategy, r| {
        let cfg = ConvNNConfig::attention_equivalent(9, VIT_TINY_WIDTH).with_strategy(strategy, r);
        flop_estimate(&FlopTarget::ConvNN(cfg), VIT_TINY_LAYOUT, shape).map(|b| b.total())
    };
    let rand = convnn(Strategy::Random, 32)?;
    let all = convnn(Strategy::All, 0)?;
    let att = flop_estimate(&FlopTarget::Attention, VIT_TINY_LAYOUT, shape)?.total();
    let n = VIT_TINY_LAYOUT.len();
    Ok(vec![
        Property::holds(
            "flops",
            format!("random r=32 ({rand:.4e}) < all ({all:.4e}) < attention ({att:.4e})"),
            rand < all && all < att,
        ),
        Property::within("flops", "random r=n equals all", (convnn(Strategy::Random, n)? - all).abs(), 0.0),
    ])
}

fn branching() -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::randn(&[3, 6, 6], 1.0, &mut rng);
    let mut out = Vec::new();
    for lambda in [0.0, 1.0] {
        let mut store = ParamStore::new();
        let layer = BranchingLayer::new(&mut store, "b", 3, BranchingConfig::new(lambda, 4), &mut rng)?;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let whole = layer.forward(&mut tape, &bound, xv, None)?;
        let single = match (&layer.conv, &layer.convnn) {
            (Some(conv), None) => conv.forward(&mut tape, &bound, xv)?,
            (None, Some(nn)) => nn.forward(&mut tape, &bound, xv, None)?,
            _ => unreachable!("degenerate lambda has one branch"),
        };
        let single = layer.fuse.forward(&mut tape, &bound, single)?;
        out.push(Property::holds(
            "branching",
            format!("lambda={lambda} is the single-branch computation"),
            tape.value(whole) == tape.value(single),
        ));
    }
    for size in [8, 32] {
        let counts = [0.25, 0.5, 0.75]
            .iter()
            .map(|&l| mini_vgg(VggConfig::new(LayerKind::Branching(l), size, 10), 0).map(|m| m.parameter_count()))
            .collect::<Result<Vec<_>>>()?;
        out.push(Property::holds(
            "branching",
            format!("mini_vgg {size}px parameter count {counts:?} constant in lambda"),
            counts.windows(2).all(|w| w[0] == w[1]),
        ));
    }
    Ok(out)
}

fn determinism() -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    let mut exact = true;
    for p in [1, 2, 4] {
        let x = Tensor::randn(&[3, 8, 8], 1.0, &mut rng);
        exact &= pixel_shuffle(&pixel_unshuffle(&x, p)?, p)? == x;
    }
    out.push(Property::holds("determinism", "pixel_unshuffle round trip", exact));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[6, 7], 10.0, &mut rng));
        let s = tape.softmax_rows(x)?;
        let v = tape.value(s);
        for i in 0..6 {
            worst = worst.max((v.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(Property::within("determinism", "softmax rows sum to one", worst, 1e-12));

    let images: Vec<Tensor> = (0..16).map(|_| Tensor::randn(&[3, 8, 8], 1.0, &mut rng)).collect();
    let data = Dataset::new(images, (0..16).map(|i| i % 2).collect(), 2)?;
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 1,
        batch: 8,
        ..TrainConfig::default()
    };
    let run = || -> Result<Vec<(f64, f64)>> {
        let mut v = VggConfig::new(LayerKind::Branching(0.5), 8, 2);
        v.search.strategy = Strategy::Random;
        v.search.r = 16;
        let mut m = mini_vgg(v, 3)?;
        let h = fit(&mut m, &data, &data, &cfg, |_| {})?;
        Ok(h.iter().map(|s| (s.train_loss, s.test_loss)).collect())
    };
    out.push(Property::holds("determinism", "train steps repeat bit for bit", run()? == run()?));
    Ok(out)
}
