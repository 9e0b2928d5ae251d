//! Trainable layers, two small classifiers and the optimizer.

mod layers;
mod optim;
mod store;
mod train;
mod vgg;
mod vit;

pub use layers::{BranchingConfig, BranchingLayer, Conv2dLayer, ConvNNLayer, SearchOptions};
pub use optim::{adamw_step, clip_grad_norm, AdamState, TrainConfig, ADAM_EPS, BETA1, BETA2};
pub use store::{Bound, ParamId, ParamStore};
pub use train::{batch_logits, evaluate, fit, train_step, Dataset, EpochStats, Model};
pub use vgg::{mini_vgg, LayerKind, MiniVgg, VggConfig};
pub use vit::{mini_vit, MiniVit, MixerKind, VitConfig};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    fn batch_loss(model: &dyn Model, images: &[&Tensor], labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape);
        let y = batch_logits(model, &mut tape, &bound, images, None).unwrap();
        let l = tape.cross_entropy(y, labels).unwrap();
        tape.value(l).data()[0]
    }

    fn one_step_reduces_loss(model: &mut dyn Model, size: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images: Vec<Tensor> = (0..8).map(|_| Tensor::randn(&[3, size, size], 1.0, &mut rng)).collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let cfg = TrainConfig {
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let before = batch_loss(model, &refs, &labels);
        let mut state = AdamState::new(model.store().trainable());
        train_step(model, &refs, &labels, &mut state, 1, &cfg, &mut rng).unwrap();
        let after = batch_loss(model, &refs, &labels);
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn vgg_single_step_descent() {
        for kind in [LayerKind::Conv, LayerKind::ConvNN, LayerKind::Branching(0.5)] {
            let mut m = mini_vgg(VggConfig::new(kind, 8, 2), 1).unwrap();
            one_step_reduces_loss(&mut m, 8);
        }
    }

    #[test]
    fn vit_single_step_descent() {
        let mut m = mini_vit(VitConfig::new(MixerKind::Attention { cosine: false }, 2), 1).unwrap();
        one_step_reduces_loss(&mut m, 16);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let images: Vec<Tensor> = (0..16).map(|_| Tensor::randn(&[3, 8, 8], 1.0, &mut rng)).collect();
        let data = Dataset::new(images, (0..16).map(|i| i % 2).collect(), 2).unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            epochs: 2,
            batch: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let mut cfg_v = VggConfig::new(LayerKind::Branching(0.5), 8, 2);
            cfg_v.search.strategy = crate::neighbor::Strategy::Random;
            cfg_v.search.r = 16;
            let mut m = mini_vgg(cfg_v, 2).unwrap();
            let h = fit(&mut m, &data, &data, &cfg, |_| {}).unwrap();
            h.iter().map(|s| (s.train_loss, s.test_loss)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
