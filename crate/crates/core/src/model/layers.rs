use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::store::{Bound, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::convnn::{forward_2d_on, AggregationKind, AggregationVars, ConvNNConfig, Positional, ProjectionVars, SeedPolicy};
use crate::error::{config_err, Result};
use crate::neighbor::Strategy;
use crate::tensor::Tensor;

/// Candidate search used by ConvNN layers in convolutional models.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub strategy: Strategy,
    pub r: usize,
    pub positional: Positional,
    pub normalize: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::All,
            r: 32,
            positional: Positional::None,
            normalize: true,
        }
    }
}

/// Zero-same padded 2D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv2dLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::uniform(&[c_out, c_in, kernel, kernel], bound, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::uniform(&[c_out], bound, rng)),
            kernel,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, bound.var(self.weight), Some(bound.var(self.bias)), self.kernel / 2)
    }
}

/// ConvNN over a feature map with identity projections, constant
/// modulation and a regular kernel-`k` aggregation.
#[derive(Clone, Debug)]
pub struct ConvNNLayer {
    pub cfg: ConvNNConfig,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvNNLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        search: &SearchOptions,
        rng: &mut R,
    ) -> Self {
        let cfg = ConvNNConfig {
            normalize: search.normalize,
            positional: search.positional,
            seed_policy: SeedPolicy::PerPass,
            ..ConvNNConfig::convolution_like(k, c_out).with_strategy(search.strategy, search.r)
        };
        let v_in = c_in + if search.positional == Positional::SimilarityAndValues { 2 } else { 0 };
        let bound = 1.0 / ((v_in * k) as f64).sqrt();
        Self {
            cfg,
            weight: store.add(format!("{name}.weight"), Tensor::uniform(&[c_out, v_in, k], bound, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::uniform(&[c_out], bound, rng)),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let agg = AggregationVars {
            kind: AggregationKind::Regular,
            weight: bound.var(self.weight),
            point: None,
            bias: Some(bound.var(self.bias)),
        };
        let seed = self.cfg.seed_policy.resolve(rng);
        Ok(forward_2d_on(tape, x, &self.cfg, &ProjectionVars::identity(), &agg, seed)?.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchingConfig {
    /// Share of output channels produced by the ConvNN branch.
    pub lambda: f64,
    /// Convolution branch kernel extent (odd).
    pub kernel: usize,
    /// ConvNN branch neighbor count.
    pub k: usize,
    pub out_channels: usize,
    pub search: SearchOptions,
}

impl BranchingConfig {
    pub fn new(lambda: f64, out_channels: usize) -> Self {
        Self {
            lambda,
            kernel: 3,
            k: 9,
            out_channels,
            search: SearchOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.kernel % 2 == 0 {
            return Err(config_err(format!("conv kernel {} must be odd", self.kernel)));
        }
        if self.k == 0 || self.out_channels == 0 {
            return Err(config_err("k and out_channels must be positive"));
        }
        Ok(())
    }

    /// `(conv channels, ConvNN channels)`.
    pub fn split(&self) -> (usize, usize) {
        let conv = ((1.0 - self.lambda) * self.out_channels as f64).round() as usize;
        (conv, self.out_channels - conv)
    }
}

/// Convolution and ConvNN branches side by side, concatenated along
/// channels and fused by a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct BranchingLayer {
    pub cfg: BranchingConfig,
    pub conv: Option<Conv2dLayer>,
    pub convnn: Option<ConvNNLayer>,
    pub fuse: Conv2dLayer,
}

impl BranchingLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        cfg: BranchingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (c_conv, c_nn) = cfg.split();
        let conv = (c_conv > 0)
            .then(|| Conv2dLayer::new(store, &format!("{name}.conv"), c_in, c_conv, cfg.kernel, rng));
        let convnn = (c_nn > 0)
            .then(|| ConvNNLayer::new(store, &format!("{name}.convnn"), c_in, c_nn, cfg.k, &cfg.search, rng));
        let fuse = Conv2dLayer::new(store, &format!("{name}.fuse"), cfg.out_channels, cfg.out_channels, 1, rng);
        Ok(Self {
            cfg,
            conv,
            convnn,
            fuse,
        })
    }

    /// Concatenated branch outputs before fusion, `[out, rows, cols]`.
    pub fn branches(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if let Some(conv) = &self.conv {
            parts.push(conv.forward(tape, bound, x)?);
        }
        if let Some(nn) = &self.convnn {
            parts.push(nn.forward(tape, bound, x, rng)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        tape.concat_rows(&parts)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let y = self.branches(tape, bound, x, rng)?;
        self.fuse.forward(tape, bound, y)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn build(lambda: f64, out: usize, seed: u64) -> (ParamStore, BranchingLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = BranchingLayer::new(&mut store, "b", 3, BranchingConfig::new(lambda, out), &mut rng).unwrap();
        (store, layer)
    }

    fn run(store: &ParamStore, layer: &BranchingLayer, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &bound, xv, None).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn split_examples() {
        assert_eq!(BranchingConfig::new(0.5, 16).split(), (8, 8));
        assert_eq!(BranchingConfig::new(0.0, 16).split(), (16, 0));
        assert_eq!(BranchingConfig::new(1.0, 16).split(), (0, 16));
        assert!(BranchingConfig::new(1.5, 16).validate().is_err());
        assert!(BranchingConfig { kernel: 2, ..BranchingConfig::new(0.5, 4) }.validate().is_err());
    }

    #[test]
    fn degenerate_lambdas_are_single_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[3, 5, 5], 1.0, &mut rng);

        let (store, layer) = build(0.0, 4, 1);
        assert!(layer.convnn.is_none());
        let conv = layer.conv.as_ref().unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let c = conv.forward(&mut tape, &bound, xv).unwrap();
        let direct = layer.fuse.forward(&mut tape, &bound, c).unwrap();
        assert_eq!(run(&store, &layer, &x), *tape.value(direct));

        let (store, layer) = build(1.0, 4, 2);
        assert!(layer.conv.is_none());
        let nn = layer.convnn.as_ref().unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let c = nn.forward(&mut tape, &bound, xv, None).unwrap();
        let direct = layer.fuse.forward(&mut tape, &bound, c).unwrap();
        assert_eq!(run(&store, &layer, &x), *tape.value(direct));
    }

    #[test]
    fn parameter_count_ignores_lambda() {
        let counts: Vec<usize> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&l| build(l, 16, 0).0.parameter_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    }

    #[test]
    fn output_keeps_spatial_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[3, 6, 6], 1.0, &mut rng);
        let (store, layer) = build(0.5, 8, 4);
        assert_eq!(run(&store, &layer, &x).shape(), &[8, 6, 6]);
    }
}
