use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::store::{Bound, ParamId, ParamStore};
use super::train::Model;
use crate::autodiff::{Tape, Var};
use crate::convnn::{forward_on, Affine, AggregationKind, AggregationParams, AggregationVars, AggregationWeights, ConvNNConfig, Positional, ProjectionVars};
use crate::error::{config_err, Result};
use crate::neighbor::{top_k_rows, Layout, NORM_EPS};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
/// Additive score for masked-out keys.
const MASKED: f64 = -1e30;

#[derive(Clone, Debug, PartialEq)]
pub enum MixerKind {
    /// Single-head attention; `cosine` l2-normalizes queries and keys and
    /// drops the `1/sqrt(d)` scale.
    Attention { cosine: bool },
    /// Attention inside fixed non-overlapping windows of `w` tokens.
    LocalWindow(usize),
    /// Attention over each query's top-`k` keys.
    Kvt(usize),
    /// ConvNN token mixer. With `frozen_unit` the aggregation is the fixed
    /// unit depthwise kernel.
    ConvNN { cfg: ConvNNConfig, frozen_unit: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitConfig {
    pub mixer: MixerKind,
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub mlp: usize,
    pub in_channels: usize,
    pub classes: usize,
}

impl VitConfig {
    /// 16x16 inputs, 4x4 patches, 4 blocks of width 64 with a 128-wide MLP.
    pub fn new(mixer: MixerKind, classes: usize) -> Self {
        Self {
            mixer,
            image_size: 16,
            patch: 4,
            dim: 64,
            depth: 4,
            mlp: 128,
            in_channels: 3,
            classes,
        }
    }

    pub fn tokens(&self) -> usize {
        let side = self.image_size / self.patch;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size != 16 || self.patch != 4 {
            return Err(config_err(format!(
                "mini_vit supports 16x16 inputs with 4x4 patches, got {} / {}",
                self.image_size, self.patch
            )));
        }
        if self.dim == 0 || self.depth == 0 || self.mlp == 0 || self.classes < 2 {
            return Err(config_err("mini_vit widths, depth and classes must be positive"));
        }
        let n = self.tokens();
        match &self.mixer {
            MixerKind::Attention { .. } => {}
            MixerKind::LocalWindow(w) => {
                if *w == 0 {
                    return Err(config_err("local attention window must be positive"));
                }
            }
            MixerKind::Kvt(k) => {
                if *k == 0 || *k > n {
                    return Err(config_err(format!("kvt k={k} outside 1..={n}")));
                }
            }
            MixerKind::ConvNN { cfg, frozen_unit } => {
                cfg.validate(self.dim)?;
                if cfg.out_channels != self.dim {
                    return Err(config_err("convnn mixer must keep the model width"));
                }
                if *frozen_unit && cfg.aggregation != AggregationKind::Depthwise {
                    return Err(config_err("frozen unit aggregation is depthwise"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: store.add(format!("{name}.weight"), Tensor::uniform(&[fan_in, fan_out], bound, rng)),
            b: store.add(format!("{name}.bias"), Tensor::uniform(&[fan_out], bound, rng)),
        }
    }

    fn affine(&self, bound: &Bound) -> Affine {
        Affine {
            w: bound.var(self.w),
            b: Some(bound.var(self.b)),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        self.affine(bound).apply(tape, x)
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm_rows(x, bound.var(self.gain), bound.var(self.bias), LN_EPS)
    }
}

#[derive(Clone, Debug)]
struct AggIds {
    kind: AggregationKind,
    weight: ParamId,
    point: Option<ParamId>,
    bias: Option<ParamId>,
}

impl AggIds {
    fn register(store: &mut ParamStore, name: &str, p: AggregationParams) -> Self {
        let mut add = |suffix: &str, t: Tensor| {
            if p.frozen {
                store.add_frozen(format!("{name}.{suffix}"), t)
            } else {
                store.add(format!("{name}.{suffix}"), t)
            }
        };
        let kind = p.kind();
        let (weight, point) = match p.weights {
            AggregationWeights::Regular(w) | AggregationWeights::Depthwise(w) => (add("weight", w), None),
            AggregationWeights::Separable { depth, point } => (add("depth", depth), Some(add("point", point))),
        };
        let bias = p.bias.map(|b| add("bias", b));
        Self {
            kind,
            weight,
            point,
            bias,
        }
    }

    fn vars(&self, bound: &Bound) -> AggregationVars {
        AggregationVars {
            kind: self.kind,
            weight: bound.var(self.weight),
            point: self.point.map(|p| bound.var(p)),
            bias: self.bias.map(|b| bound.var(b)),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    agg: Option<AggIds>,
    out: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

pub struct MiniVit {
    pub cfg: VitConfig,
    store: ParamStore,
    embed: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    norm: Norm,
    head: Linear,
}

/// Builds a mini-ViT classifier with parameters drawn from `seed`.
pub fn mini_vit(cfg: VitConfig, seed: u64) -> Result<MiniVit> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.dim;
    let patch_dim = cfg.in_channels * cfg.patch * cfg.patch;
    let embed = Linear::new(&mut store, "embed", patch_dim, d, &mut rng);
    let pos = store.add("pos", Tensor::randn(&[cfg.tokens(), d], 0.02, &mut rng));
    let mut blocks = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let name = format!("block{i}");
        let norm1 = Norm::new(&mut store, &format!("{name}.norm1"), d);
        let (qk_in, v_in) = match &cfg.mixer {
            MixerKind::ConvNN { cfg: c, .. } => {
                let side = cfg.image_size / cfg.patch;
                let pw = Layout::Grid { rows: side, cols: side }.positional_width();
                match c.positional {
                    Positional::None => (d, d),
                    Positional::SimilarityOnly => (d + pw, d),
                    Positional::SimilarityAndValues => (d + pw, d + pw),
                }
            }
            _ => (d, d),
        };
        let q = Linear::new(&mut store, &format!("{name}.q"), qk_in, d, &mut rng);
        let k = Linear::new(&mut store, &format!("{name}.k"), qk_in, d, &mut rng);
        let v = Linear::new(&mut store, &format!("{name}.v"), v_in, d, &mut rng);
        let agg = match &cfg.mixer {
            MixerKind::ConvNN { cfg: c, frozen_unit } => {
                let p = if *frozen_unit {
                    AggregationParams::unit_depthwise(d, c.k)
                } else {
                    AggregationParams::init(c.aggregation, d, d, c.k, false, &mut rng)
                };
                Some(AggIds::register(&mut store, &format!("{name}.agg"), p))
            }
            _ => None,
        };
        let out = Linear::new(&mut store, &format!("{name}.out"), d, d, &mut rng);
        let norm2 = Norm::new(&mut store, &format!("{name}.norm2"), d);
        let fc1 = Linear::new(&mut store, &format!("{name}.fc1"), d, cfg.mlp, &mut rng);
        let fc2 = Linear::new(&mut store, &format!("{name}.fc2"), cfg.mlp, d, &mut rng);
        blocks.push(Block {
            norm1,
            q,
            k,
            v,
            agg,
            out,
            norm2,
            fc1,
            fc2,
        });
    }
    let norm = Norm::new(&mut store, "norm", d);
    let head = Linear::new(&mut store, "head", d, cfg.classes, &mut rng);
    Ok(MiniVit {
        cfg,
        store,
        embed,
        pos,
        blocks,
        norm,
        head,
    })
}

impl MiniVit {
    fn grid(&self) -> Layout {
        let side = self.cfg.image_size / self.cfg.patch;
        Layout::Grid { rows: side, cols: side }
    }

    fn attend(&self, tape: &mut Tape, q: Var, k: Var, v: Var, mask: Option<Tensor>, cosine: bool) -> Result<Var> {
        let (q, k) = if cosine {
            (tape.l2_normalize_rows(q, NORM_EPS)?, tape.l2_normalize_rows(k, NORM_EPS)?)
        } else {
            (q, k)
        };
        let kt = tape.transpose(k)?;
        let mut s = tape.matmul(q, kt)?;
        if !cosine {
            s = tape.scale(s, 1.0 / (self.cfg.dim as f64).sqrt());
        }
        if let Some(mask) = mask {
            let m = tape.constant(mask);
            s = tape.add(s, m)?;
        }
        let a = tape.softmax_rows(s)?;
        tape.matmul(a, v)
    }

    fn mix(&self, tape: &mut Tape, bound: &Bound, block: &Block, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let n = self.cfg.tokens();
        if let MixerKind::ConvNN { cfg, .. } = &self.cfg.mixer {
            let proj = ProjectionVars {
                q: Some(block.q.affine(bound)),
                k: Some(block.k.affine(bound)),
                v: Some(block.v.affine(bound)),
            };
            let agg = block.agg.as_ref().expect("convnn block has aggregation").vars(bound);
            let seed = cfg.seed_policy.resolve(rng);
            return Ok(forward_on(tape, x, self.grid(), cfg, &proj, &agg, seed)?.y);
        }
        let q = block.q.apply(tape, bound, x)?;
        let k = block.k.apply(tape, bound, x)?;
        let v = block.v.apply(tape, bound, x)?;
        match &self.cfg.mixer {
            MixerKind::Attention { cosine } => self.attend(tape, q, k, v, None, *cosine),
            MixerKind::LocalWindow(w) => {
                let mask = Tensor::from_fn(&[n, n], |e| if (e / n) / w == (e % n) / w { 0.0 } else { MASKED });
                self.attend(tape, q, k, v, Some(mask), false)
            }
            MixerKind::Kvt(kk) => {
                let kt = tape.transpose(k)?;
                let s = tape.matmul(q, kt)?;
                let (idx, _) = top_k_rows(tape.value(s), *kk)?;
                let mut mask = Tensor::full(&[n, n], MASKED);
                for i in 0..n {
                    for &j in idx.row(i) {
                        mask.data_mut()[i * n + j] = 0.0;
                    }
                }
                self.attend(tape, q, k, v, Some(mask), false)
            }
            MixerKind::ConvNN { .. } => unreachable!(),
        }
    }
}

impl Model for MiniVit {
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
                "mini_vit expects [{}, {s}, {s}] input, got {:?}",
                self.cfg.in_channels,
                image.shape()
            )));
        }
        let n = self.cfg.tokens();
        let x = tape.constant(image.clone());
        let patches = tape.pixel_unshuffle(x, self.cfg.patch)?;
        let pd = tape.shape(patches)[0];
        let flat = tape.reshape(patches, &[pd, n])?;
        let tokens = tape.transpose(flat)?;
        let e = self.embed.apply(tape, bound, tokens)?;
        let mut h = tape.add(e, bound.var(self.pos))?;
        for block in &self.blocks {
            let a = block.norm1.apply(tape, bound, h)?;
            let a = self.mix(tape, bound, block, a, rng.as_deref_mut())?;
            let a = block.out.apply(tape, bound, a)?;
            h = tape.add(h, a)?;
            let m = block.norm2.apply(tape, bound, h)?;
            let m = block.fc1.apply(tape, bound, m)?;
            let m = tape.gelu(m);
            let m = block.fc2.apply(tape, bound, m)?;
            h = tape.add(h, m)?;
        }
        let h = self.norm.apply(tape, bound, h)?;
        let ht = tape.transpose(h)?;
        let pooled = tape.mean_cols(ht)?;
        let row = tape.reshape(pooled, &[1, self.cfg.dim])?;
        self.head.apply(tape, bound, row)
    }
}

#[cfg(test)]
mod tests {
    use std::time::Instant;

    use super::*;
    use crate::model::train::{batch_logits, Model};

    fn logits(model: &MiniVit, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape);
        let y = model.logits(&mut tape, &bound, x, None).unwrap();
        tape.value(y).clone()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[3, 16, 16], 1.0, &mut rng)
    }

    #[test]
    fn shapes_for_every_mixer() {
        for mixer in [
            MixerKind::Attention { cosine: false },
            MixerKind::LocalWindow(4),
            MixerKind::Kvt(5),
            MixerKind::ConvNN { cfg: ConvNNConfig::new(9, 64), frozen_unit: false },
        ] {
            let m = mini_vit(VitConfig::new(mixer.clone(), 10), 0).unwrap();
            assert_eq!(m.cfg.tokens(), 16);
            assert_eq!(logits(&m, &image(1)).shape(), &[1, 10], "{mixer:?}");
        }
        assert!(mini_vit(VitConfig::new(MixerKind::Kvt(17), 10), 0).is_err());
        assert!(mini_vit(VitConfig::new(MixerKind::LocalWindow(0), 10), 0).is_err());
    }

    #[test]
    fn convnn_mixer_matches_cosine_attention_at_init() {
        let att = mini_vit(VitConfig::new(MixerKind::Attention { cosine: true }, 10), 3).unwrap();
        let nn = mini_vit(
            VitConfig::new(
                MixerKind::ConvNN {
                    cfg: ConvNNConfig::attention_equivalent(16, 64),
                    frozen_unit: true,
                },
                10,
            ),
            3,
        )
        .unwrap();
        // The frozen aggregation draws nothing from the generator, so shared
        // parameters come out identical; only the extra frozen tensors differ.
        assert_eq!(att.parameter_count(), nn.parameter_count());
        let x = image(2);
        let d = logits(&att, &x).max_abs_diff(&logits(&nn, &x)).unwrap();
        assert!(d <= 1e-9, "{d}");
    }

    #[test]
    fn positional_convnn_mixer_widens_projections() {
        let base = mini_vit(VitConfig::new(MixerKind::ConvNN { cfg: ConvNNConfig::new(9, 64), frozen_unit: false }, 10), 0)
            .unwrap()
            .parameter_count();
        for (positional, extra) in [(Positional::SimilarityOnly, 2 * 2 * 64), (Positional::SimilarityAndValues, 3 * 2 * 64)] {
            let cfg = ConvNNConfig { positional, ..ConvNNConfig::new(9, 64) };
            let m = mini_vit(VitConfig::new(MixerKind::ConvNN { cfg, frozen_unit: false }, 10), 0).unwrap();
            assert_eq!(m.parameter_count(), base + 4 * extra);
            assert_eq!(logits(&m, &image(1)).shape(), &[1, 10]);
        }
    }

    #[test]
    fn local_window_covering_everything_is_attention() {
        let att = mini_vit(VitConfig::new(MixerKind::Attention { cosine: false }, 10), 4).unwrap();
        let loc = mini_vit(VitConfig::new(MixerKind::LocalWindow(16), 10), 4).unwrap();
        let x = image(5);
        assert!(logits(&att, &x).max_abs_diff(&logits(&loc, &x)).unwrap() < 1e-12);
    }

    #[test]
    fn batch_step_is_fast() {
        let m = mini_vit(VitConfig::new(MixerKind::Attention { cosine: false }, 10), 0).unwrap();
        let images: Vec<Tensor> = (0..32).map(image).collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = m.store().bind(&mut tape);
        let y = batch_logits(&m, &mut tape, &bound, &refs, None).unwrap();
        let loss = tape.cross_entropy(y, &labels).unwrap();
        tape.backward(loss).unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 1.0, "{secs}s");
    }
}
