//! Mini VGG on the synthetic two-class task.
//!
//! cargo run --release --example train_synthetic -- [conv|convnn|branching] [epochs]

use convnn::harness::{gen_synthetic, SyntheticSpec};
use convnn::model::{fit, mini_vgg, LayerKind, TrainConfig, VggConfig};
use convnn::neighbor::Strategy;

fn main() -> convnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind = match args.next().as_deref().unwrap_or("conv") {
        "conv" => LayerKind::Conv,
        "convnn" => LayerKind::ConvNN,
        _ => LayerKind::Branching(0.5),
    };
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let split = gen_synthetic(&SyntheticSpec { train: 1024, test: 256, size: 8, seed: 7 });
    let mut cfg = VggConfig::new(kind, 8, 2);
    cfg.search.strategy = Strategy::Random;
    cfg.search.r = 16;
    let mut model = mini_vgg(cfg, 7)?;
    let tc = TrainConfig { lr: 1e-3, batch: 64, epochs, seed: 7, ..TrainConfig::default() };
    fit(&mut model, &split.train, &split.test, &tc, |s| {
        println!(
            "epoch {:>3}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}",
            s.epoch, s.train_loss, s.train_accuracy, s.test_loss, s.test_accuracy
        );
    })?;
    Ok(())
}
