use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{BenchSpec, EquivSpec, ModelSpec, TrainSpec};
use super::metrics::{RunMetrics, RunSummary};
use super::suites::{run_suite, Property, SUITES};
use crate::autodiff::Tape;
use crate::convnn::{
    convnn_forward_2d, flop_estimate, AggregationParams, ConvNNConfig, FlopShape, FlopTarget,
    ProjectionParams, SeedPolicy,
};
use crate::error::{Error, Result};
use crate::model::{fit, mini_vgg, mini_vit, Model};
use crate::neighbor::{Layout, Strategy};
use crate::oracles::{check_attention_reduction, check_conv_reduction, EquivalenceReport};
use crate::tensor::Tensor;

/// Whether a command's checks held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

/// 0 on success, 1 on failed checks or runtime errors, 2 on usage and
/// configuration errors.
pub fn exit_code(result: &Result<Outcome>) -> u8 {
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Failure) => 1,
        Err(Error::Usage(_) | Error::Config(_)) => 2,
        Err(_) => 1,
    }
}

fn outcome(ok: bool) -> Outcome {
    if ok {
        Outcome::Success
    } else {
        Outcome::Failure
    }
}

/// Runs every suite, or only `filter`, printing one line per property.
pub fn cmd_verify(filter: Option<&str>, out: &mut dyn Write) -> Result<Outcome> {
    let names: Vec<&str> = match filter {
        Some(f) => vec![f],
        None => SUITES.to_vec(),
    };
    let mut failures = 0;
    for name in names {
        let props: Vec<Property> = run_suite(name)?;
        for p in &props {
            writeln!(out, "{}", p.line())?;
        }
        failures += props.iter().filter(|p| !p.passed).count();
    }
    writeln!(out, "{failures} failure(s)")?;
    Ok(outcome(failures == 0))
}

/// Equivalence reports over the configured grid, one JSON object per line.
pub fn cmd_equiv(spec: &EquivSpec, out: &mut dyn Write) -> Result<Outcome> {
    spec.validate()?;
    let mut reports: Vec<EquivalenceReport> = Vec::new();
    for (n, c, k) in spec.points() {
        for s in 0..spec.seeds as u64 {
            reports.push(check_attention_reduction(n, c, c, c, k, spec.seed + s)?);
        }
    }
    for &side in &spec.conv_grids {
        reports.push(check_conv_reduction(side, side, 9)?);
    }
    for r in &reports {
        let line = serde_json::to_string(r).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(outcome(reports.iter().all(|r| r.passed)))
}

/// Files written by [`cmd_train`].
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub fn build_model(spec: &TrainSpec) -> Result<Box<dyn Model>> {
    Ok(match &spec.model {
        ModelSpec::Vgg(c) => Box::new(mini_vgg(c.clone(), spec.seed)?),
        ModelSpec::Vit(c) => Box::new(mini_vit(c.clone(), spec.seed)?),
    })
}

/// Trains per `spec` and writes the metrics CSV, a JSON summary and the
/// final checkpoint into `out_dir`.
pub fn cmd_train(spec: &TrainSpec, out_dir: &Path) -> Result<(RunMetrics, RunSummary)> {
    spec.validate()?;
    let split = spec.dataset.load()?;
    let mut model = build_model(spec)?;
    fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let history = fit(model.as_mut(), &split.train, &split.test, &spec.train, |s| {
        log::info!(
            "epoch {}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}",
            s.epoch,
            s.train_loss,
            s.train_accuracy,
            s.test_loss,
            s.test_accuracy
        );
    })?;
    let wall = start.elapsed().as_secs_f64();

    let metrics = RunMetrics::from_history(&history, spec.record_wall_time);
    metrics.validate()?;
    metrics.write_csv(out_dir.join(METRICS_FILE))?;
    let summary = metrics
        .summary(spec.seed, model.parameter_count(), wall)
        .ok_or_else(|| Error::Validation("training produced no epochs".into()))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(out_dir.join(SUMMARY_FILE), json + "\n")?;
    model.store().save(out_dir.join(CHECKPOINT_DIR))?;
    Ok((metrics, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub target: String,
    pub strategy: String,
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub r: usize,
    pub flops: f64,
    pub median_seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        (xs[m - 1] + xs[m]) / 2.0
    } else {
        xs[m]
    }
}

/// Shortest span one timing sample may cover.
pub const MIN_SAMPLE_SECONDS: f64 = 0.02;

/// Median seconds per call of `f` over `repeats` samples after one warm-up
/// call. Each sample averages as many calls as fit in
/// [`MIN_SAMPLE_SECONDS`], as timed by the warm-up.
pub fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    let warm = t.elapsed().as_secs_f64();
    let calls = ((MIN_SAMPLE_SECONDS / warm.max(1e-9)).ceil() as usize).clamp(1, 1 << 20);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        for _ in 0..calls {
            f()?;
        }
        times.push(t.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(median(times))
}

fn dense_attention(x: &Tensor) -> Result<()> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let xt = tape.transpose(xv)?;
    let s = tape.matmul(xv, xt)?;
    let a = tape.softmax_rows(s)?;
    tape.matmul(a, xv)?;
    Ok(())
}

/// ConvNN in attention mode (identity projections, frozen unit depthwise
/// aggregation) over a square token grid, and dense attention when
/// enabled. Reports FLOP estimates and median forward times.
pub fn cmd_bench(spec: &BenchSpec) -> Result<Vec<BenchRecord>> {
    spec.validate()?;
    let side = spec.side();
    let layout = Layout::Grid { rows: side, cols: side };
    let mut points: Vec<(Strategy, usize, usize)> = Vec::new();
    for &strategy in &spec.strategies {
        for &k in &spec.k {
            if strategy == Strategy::All {
                points.push((strategy, k, spec.n));
                continue;
            }
            for &r in &spec.r {
                points.push((strategy, k, r));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Tensor::randn(&[spec.c, side, side], 1.0, &mut rng);
    let shape = FlopShape::uniform(spec.c, false);
    let proj = ProjectionParams::identity(spec.c);
    let mut records = Vec::new();
    for (strategy, k, r) in points {
        let cfg = ConvNNConfig {
            seed_policy: SeedPolicy::Fixed(spec.seed),
            ..ConvNNConfig::attention_equivalent(k, spec.c).with_strategy(strategy, r)
        };
        let agg = AggregationParams::unit_depthwise(spec.c, k);
        let flops = flop_estimate(&FlopTarget::ConvNN(cfg.clone()), layout, shape)?.total();
        let secs = time_median(spec.repeats, || convnn_forward_2d(&x, &cfg, &proj, &agg).map(drop))?;
        records.push(BenchRecord {
            target: "convnn".into(),
            strategy: strategy.name().into(),
            n: spec.n,
            c: spec.c,
            k,
            r,
            flops,
            median_seconds: secs,
        });
    }
    if spec.attention {
        let tokens = x.reshape(&[spec.c, spec.n])?.transpose2()?;
        let flops = flop_estimate(&FlopTarget::Attention, layout, shape)?.total();
        let secs = time_median(spec.repeats, || dense_attention(&tokens))?;
        records.push(BenchRecord {
            target: "attention".into(),
            strategy: "all".into(),
            n: spec.n,
            c: spec.c,
            k: spec.n,
            r: spec.n,
            flops,
            median_seconds: secs,
        });
    }
    Ok(records)
}

pub fn bench_csv(records: &[BenchRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn bench_report(records: &[BenchRecord]) -> String {
    let mut s = String::from("target     strategy  k     r      GFLOPs    median ms\n");
    for r in records {
        s += &format!(
            "{:<10} {:<9} {:<5} {:<6} {:<9.4} {:.3}\n",
            r.target,
            r.strategy,
            r.k,
            r.r,
            r.flops / 1e9,
            r.median_seconds * 1e3
        );
    }
    s
}
