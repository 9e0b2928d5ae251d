use rand::Rng;

use super::config::AggregationKind;
use crate::autodiff::{Tape, Var};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    Learned,
    Identity,
}

/// Weights of the query, key and value projections, applied as `x · W (+ b)`.
#[derive(Clone, Debug)]
pub struct ProjectionParams {
    pub mode: ProjectionMode,
    /// `[c_qk, h]`
    pub wq: Tensor,
    /// `[c_qk, h]`
    pub wk: Tensor,
    /// `[c_v, v]`
    pub wv: Tensor,
    pub bq: Option<Tensor>,
    pub bk: Option<Tensor>,
    pub bv: Option<Tensor>,
}

impl ProjectionParams {
    pub fn identity(c: usize) -> Self {
        Self {
            mode: ProjectionMode::Identity,
            wq: Tensor::eye(c),
            wk: Tensor::eye(c),
            wv: Tensor::eye(c),
            bq: None,
            bk: None,
            bv: None,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization, no biases.
    pub fn learned<R: Rng + ?Sized>(
        c_qk: usize,
        c_v: usize,
        h: usize,
        v: usize,
        rng: &mut R,
    ) -> Self {
        let bq = 1.0 / (c_qk as f64).sqrt();
        let bv = 1.0 / (c_v as f64).sqrt();
        Self {
            mode: ProjectionMode::Learned,
            wq: Tensor::uniform(&[c_qk, h], bq, rng),
            wk: Tensor::uniform(&[c_qk, h], bq, rng),
            wv: Tensor::uniform(&[c_v, v], bv, rng),
            bq: None,
            bk: None,
            bv: None,
        }
    }

    pub fn from_matrices(wq: Tensor, wk: Tensor, wv: Tensor) -> Result<Self> {
        let (cq, h) = wq.dims2()?;
        if wk.dims2()? != (cq, h) {
            return Err(dim_err("query and key projections must have equal shapes"));
        }
        wv.dims2()?;
        Ok(Self {
            mode: ProjectionMode::Learned,
            wq,
            wk,
            wv,
            bq: None,
            bk: None,
            bv: None,
        })
    }

    pub fn qk_in(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn qk_width(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn v_in(&self) -> usize {
        self.wv.shape()[0]
    }

    pub fn v_width(&self) -> usize {
        self.wv.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ProjectionMode::Identity {
            let c = self.qk_in();
            let eye = Tensor::eye(c);
            if self.wq != eye || self.wk != eye || self.wv != eye {
                return Err(config_err("identity projections must be square identities"));
            }
        }
        for (b, w) in [(&self.bq, &self.wq), (&self.bk, &self.wk), (&self.bv, &self.wv)] {
            if let Some(b) = b {
                if b.len() != w.shape()[1] {
                    return Err(dim_err("projection bias length must match output width"));
                }
            }
        }
        Ok(())
    }

    /// Places the weights on a tape. Identity projections record nothing.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ProjectionVars {
        if self.mode == ProjectionMode::Identity {
            return ProjectionVars::identity();
        }
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        let wq = leaf(&self.wq);
        let wk = leaf(&self.wk);
        let wv = leaf(&self.wv);
        let bq = self.bq.as_ref().map(&mut leaf);
        let bk = self.bk.as_ref().map(&mut leaf);
        let bv = self.bv.as_ref().map(&mut leaf);
        ProjectionVars {
            q: Some(Affine { w: wq, b: bq }),
            k: Some(Affine { w: wk, b: bk }),
            v: Some(Affine { w: wv, b: bv }),
        }
    }
}

/// `x · w + b` on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub w: Var,
    pub b: Option<Var>,
}

impl Affine {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.w)?;
        match self.b {
            Some(b) => tape.add_row_bias(y, b),
            None => Ok(y),
        }
    }
}

/// Projection weights bound to a tape; `None` means identity.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub q: Option<Affine>,
    pub k: Option<Affine>,
    pub v: Option<Affine>,
}

impl ProjectionVars {
    pub fn identity() -> Self {
        Self {
            q: None,
            k: None,
            v: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum AggregationWeights {
    /// `[out, v, k]`
    Regular(Tensor),
    /// `[v, k]`
    Depthwise(Tensor),
    /// Depthwise `[v, k]` followed by pointwise `[v, out]`.
    Separable { depth: Tensor, point: Tensor },
}

#[derive(Clone, Debug)]
pub struct AggregationParams {
    pub weights: AggregationWeights,
    /// `[out]`
    pub bias: Option<Tensor>,
    /// Frozen parameters are placed on the tape as constants.
    pub frozen: bool,
}

impl AggregationParams {
    /// Unit-weight, bias-free, frozen depthwise kernel.
    pub fn unit_depthwise(v: usize, k: usize) -> Self {
        Self {
            weights: AggregationWeights::Depthwise(Tensor::ones(&[v, k])),
            bias: None,
            frozen: true,
        }
    }

    /// Unit-initialized trainable weights; pointwise and regular kernels use
    /// uniform `±1/sqrt(fan_in)` since a constant init would tie channels.
    pub fn init<R: Rng + ?Sized>(
        kind: AggregationKind,
        v: usize,
        out: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weights = match kind {
            AggregationKind::Regular => {
                AggregationWeights::Regular(Tensor::uniform(&[out, v, k], 1.0 / ((v * k) as f64).sqrt(), rng))
            }
            AggregationKind::Depthwise => AggregationWeights::Depthwise(Tensor::ones(&[v, k])),
            AggregationKind::DepthwiseSeparable => AggregationWeights::Separable {
                depth: Tensor::ones(&[v, k]),
                point: Tensor::uniform(&[v, out], 1.0 / (v as f64).sqrt(), rng),
            },
        };
        let fan_in = match kind {
            AggregationKind::Regular => v * k,
            AggregationKind::Depthwise => k,
            AggregationKind::DepthwiseSeparable => v,
        };
        Self {
            weights,
            bias: bias.then(|| Tensor::uniform(&[out], 1.0 / (fan_in as f64).sqrt(), rng)),
            frozen: false,
        }
    }

    /// Gaussian weights, for tests that need generic parameters.
    pub fn random<R: Rng + ?Sized>(
        kind: AggregationKind,
        v: usize,
        out: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weights = match kind {
            AggregationKind::Regular => AggregationWeights::Regular(Tensor::randn(&[out, v, k], 0.5, rng)),
            AggregationKind::Depthwise => AggregationWeights::Depthwise(Tensor::randn(&[v, k], 0.5, rng)),
            AggregationKind::DepthwiseSeparable => AggregationWeights::Separable {
                depth: Tensor::randn(&[v, k], 0.5, rng),
                point: Tensor::randn(&[v, out], 0.5, rng),
            },
        };
        Self {
            weights,
            bias: bias.then(|| Tensor::randn(&[out], 0.5, rng)),
            frozen: false,
        }
    }

    pub fn kind(&self) -> AggregationKind {
        match self.weights {
            AggregationWeights::Regular(_) => AggregationKind::Regular,
            AggregationWeights::Depthwise(_) => AggregationKind::Depthwise,
            AggregationWeights::Separable { .. } => AggregationKind::DepthwiseSeparable,
        }
    }

    /// Kernel extent (the neighbor count it was built for).
    pub fn kernel(&self) -> usize {
        match &self.weights {
            AggregationWeights::Regular(w) => w.shape()[2],
            AggregationWeights::Depthwise(w) => w.shape()[1],
            AggregationWeights::Separable { depth, .. } => depth.shape()[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        match &self.weights {
            AggregationWeights::Regular(w) => w.shape()[0],
            AggregationWeights::Depthwise(w) => w.shape()[0],
            AggregationWeights::Separable { point, .. } => point.shape()[1],
        }
    }

    pub fn parameter_count(&self) -> usize {
        let w = match &self.weights {
            AggregationWeights::Regular(w) | AggregationWeights::Depthwise(w) => w.len(),
            AggregationWeights::Separable { depth, point } => depth.len() + point.len(),
        };
        w + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn bind(&self, tape: &mut Tape) -> AggregationVars {
        let trainable = !self.frozen;
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        let (kind, w, point) = match &self.weights {
            AggregationWeights::Regular(w) => (AggregationKind::Regular, leaf(w), None),
            AggregationWeights::Depthwise(w) => (AggregationKind::Depthwise, leaf(w), None),
            AggregationWeights::Separable { depth, point } => {
                (AggregationKind::DepthwiseSeparable, leaf(depth), Some(leaf(point)))
            }
        };
        let bias = self.bias.as_ref().map(leaf);
        AggregationVars {
            kind,
            weight: w,
            point,
            bias,
        }
    }
}

/// Aggregation weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct AggregationVars {
    pub kind: AggregationKind,
    /// Regular `[out, v, k]` or depthwise `[v, k]` kernel.
    pub weight: Var,
    /// Pointwise `[v, out]`, separable only.
    pub point: Option<Var>,
    pub bias: Option<Var>,
}
