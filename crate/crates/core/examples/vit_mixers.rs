//! One mini ViT per token mixer, trained briefly on the synthetic task.

use convnn::convnn::{ConvNNConfig, Positional};
use convnn::harness::{gen_synthetic, SyntheticSpec};
use convnn::model::{fit, mini_vit, MixerKind, Model, TrainConfig, VitConfig};
use convnn::neighbor::Strategy;

fn main() -> convnn::Result<()> {
    let split = gen_synthetic(&SyntheticSpec { train: 128, test: 64, size: 16, seed: 1 });
    let dim = 32;
    let mut sparse = ConvNNConfig::new(9, dim).with_strategy(Strategy::Random, 12);
    sparse.positional = Positional::SimilarityOnly;
    let mixers = [
        ("attention", MixerKind::Attention { cosine: false }),
        ("cosine attention", MixerKind::Attention { cosine: true }),
        ("local window 4", MixerKind::LocalWindow(4)),
        ("top-9 attention", MixerKind::Kvt(9)),
        ("convnn all", MixerKind::ConvNN { cfg: ConvNNConfig::new(9, dim), frozen_unit: false }),
        ("convnn random r=12", MixerKind::ConvNN { cfg: sparse, frozen_unit: false }),
    ];
    let tc = TrainConfig { epochs: 2, batch: 32, ..TrainConfig::default() };
    for (name, mixer) in mixers {
        let mut cfg = VitConfig::new(mixer, 2);
        cfg.dim = dim;
        cfg.mlp = 2 * dim;
        cfg.depth = 2;
        let mut model = mini_vit(cfg, 1)?;
        let params = model.parameter_count();
        let last = fit(&mut model, &split.train, &split.test, &tc, |_| {})?.pop().expect("epochs > 0");
        println!("{name:<18} {params:>6} params, test loss {:.4} acc {:.3}", last.test_loss, last.test_accuracy);
    }
    Ok(())
}
