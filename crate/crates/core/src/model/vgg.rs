use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{BranchingConfig, BranchingLayer, SearchOptions};
use super::store::{Bound, ParamId, ParamStore};
use super::train::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Feature mixer used in every block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Conv,
    ConvNN,
    /// Branching layer with the given ConvNN share.
    Branching(f64),
}

impl LayerKind {
    pub fn lambda(&self) -> f64 {
        match *self {
            LayerKind::Conv => 0.0,
            LayerKind::ConvNN => 1.0,
            LayerKind::Branching(l) => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VggConfig {
    pub kind: LayerKind,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub k: usize,
    pub search: SearchOptions,
    pub image_size: usize,
    pub in_channels: usize,
    pub classes: usize,
}

impl VggConfig {
    /// Four blocks of 16, 32, 64 and 64 channels, 3x3 kernels, `k = 9`.
    pub fn new(kind: LayerKind, image_size: usize, classes: usize) -> Self {
        Self {
            kind,
            channels: vec![16, 32, 64, 64],
            kernel: 3,
            k: 9,
            search: SearchOptions::default(),
            image_size,
            in_channels: 3,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32].contains(&self.image_size) {
            return Err(config_err(format!(
                "mini_vgg supports 8, 16 or 32 pixel inputs, got {}",
                self.image_size
            )));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(config_err("mini_vgg channels must be non-empty and positive"));
        }
        if self.classes < 2 {
            return Err(config_err("need at least two classes"));
        }
        BranchingConfig {
            lambda: self.kind.lambda(),
            kernel: self.kernel,
            k: self.k,
            out_channels: 1,
            search: self.search.clone(),
        }
        .validate()
    }

    /// Which blocks end with 2x2 max pooling. Pooling stops at 4x4 so every
    /// ConvNN layer sees at least 16 tokens.
    pub fn pools(&self) -> Vec<bool> {
        let mut size = self.image_size;
        self.channels
            .iter()
            .map(|_| {
                let pool = size / 2 >= 4;
                if pool {
                    size /= 2;
                }
                pool
            })
            .collect()
    }
}

pub struct MiniVgg {
    pub cfg: VggConfig,
    store: ParamStore,
    layers: Vec<BranchingLayer>,
    pools: Vec<bool>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Builds a mini-VGG classifier with parameters drawn from `seed`.
pub fn mini_vgg(cfg: VggConfig, seed: u64) -> Result<MiniVgg> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    let mut c_in = cfg.in_channels;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let b = BranchingConfig {
            lambda: cfg.kind.lambda(),
            kernel: cfg.kernel,
            k: cfg.k,
            out_channels: c,
            search: cfg.search.clone(),
        };
        layers.push(BranchingLayer::new(&mut store, &format!("block{i}"), c_in, b, &mut rng)?);
        c_in = c;
    }
    let bound = 1.0 / (c_in as f64).sqrt();
    let head_w = store.add("head.weight", Tensor::uniform(&[c_in, cfg.classes], bound, &mut rng));
    let head_b = store.add("head.bias", Tensor::uniform(&[cfg.classes], bound, &mut rng));
    Ok(MiniVgg {
        pools: cfg.pools(),
        cfg,
        store,
        layers,
        head_w,
        head_b,
    })
}

impl Model for MiniVgg {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn num_classes(&self) -> usize {
        self.cfg.classes
    }

    fn logits(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let s = self.cfg.image_size;
        if image.shape() != [self.cfg.in_channels, s, s] {
            return Err(config_err(format!(
                "mini_vgg expects [{}, {s}, {s}] input, got {:?}",
                self.cfg.in_channels,
                image.shape()
            )));
        }
        let mut x = tape.constant(image.clone());
        for (layer, &pool) in self.layers.iter().zip(&self.pools) {
            x = layer.forward(tape, bound, x, rng.as_deref_mut())?;
            x = tape.relu(x);
            if pool {
                x = tape.max_pool2(x)?;
            }
        }
        let (c, r, q) = tape.value(x).dims3()?;
        let flat = tape.reshape(x, &[c, r * q])?;
        let pooled = tape.mean_cols(flat)?;
        let row = tape.reshape(pooled, &[1, c])?;
        let y = tape.matmul(row, bound.var(self.head_w))?;
        tape.add_row_bias(y, bound.var(self.head_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(model: &MiniVgg, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape);
        let y = model.logits(&mut tape, &bound, x, None).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn forward_shape_and_pools() {
        let m = mini_vgg(VggConfig::new(LayerKind::Branching(0.5), 8, 2), 0).unwrap();
        assert_eq!(m.pools, vec![true, false, false, false]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[3, 8, 8], 1.0, &mut rng);
        assert_eq!(logits(&m, &x).shape(), &[1, 2]);
        assert_eq!(VggConfig::new(LayerKind::Conv, 32, 10).pools(), vec![true, true, true, false]);
    }

    #[test]
    fn rejects_unsupported_sizes() {
        assert!(mini_vgg(VggConfig::new(LayerKind::Conv, 12, 2), 0).is_err());
        assert!(mini_vgg(VggConfig::new(LayerKind::Branching(-0.1), 8, 2), 0).is_err());
        let m = mini_vgg(VggConfig::new(LayerKind::Conv, 8, 2), 0).unwrap();
        let mut tape = Tape::new();
        let bound = m.store().bind(&mut tape);
        assert!(m.logits(&mut tape, &bound, &Tensor::zeros(&[3, 16, 16]), None).is_err());
    }

    #[test]
    fn parameter_count_matches_pure_conv() {
        let conv = mini_vgg(VggConfig::new(LayerKind::Conv, 8, 2), 0).unwrap().parameter_count();
        for kind in [
            LayerKind::Branching(0.0),
            LayerKind::Branching(0.25),
            LayerKind::Branching(0.5),
            LayerKind::Branching(0.75),
            LayerKind::ConvNN,
        ] {
            let m = mini_vgg(VggConfig::new(kind, 8, 2), 0).unwrap();
            assert_eq!(m.parameter_count(), conv, "{kind:?}");
        }
    }
}
