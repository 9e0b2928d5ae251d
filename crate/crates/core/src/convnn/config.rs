use rand::Rng;

use crate::error::{config_err, Result};
use crate::neighbor::Strategy;

/// Per-neighbor modulation applied before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rho {
    /// Constant `1_k`: convolution-like.
    Ones,
    /// `softmax(s_i)`: attention-like.
    Softmax,
}

impl Rho {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(Rho::Ones),
            "softmax" => Ok(Rho::Softmax),
            other => Err(config_err(format!("unknown rho `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rho::Ones => "ones",
            Rho::Softmax => "softmax",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positional {
    None,
    /// Coordinates feed Q and K only.
    SimilarityOnly,
    /// Coordinates feed Q, K and V.
    SimilarityAndValues,
}

impl Positional {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Positional::None),
            "similarity-only" => Ok(Positional::SimilarityOnly),
            "similarity-and-values" => Ok(Positional::SimilarityAndValues),
            other => Err(config_err(format!("unknown positional mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationKind {
    Regular,
    Depthwise,
    DepthwiseSeparable,
}

impl AggregationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(AggregationKind::Regular),
            "depthwise" => Ok(AggregationKind::Depthwise),
            "depthwise-separable" => Ok(AggregationKind::DepthwiseSeparable),
            other => Err(config_err(format!("unknown aggregation `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregationKind::Regular => "regular",
            AggregationKind::Depthwise => "depthwise",
            AggregationKind::DepthwiseSeparable => "depthwise-separable",
        }
    }
}

/// How random candidate sets are seeded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Fresh draw from the run-level generator on every training pass; a
    /// fixed evaluation seed otherwise.
    PerPass,
    Fixed(u64),
}

/// Seed used by [`SeedPolicy::PerPass`] when no generator is supplied.
pub const EVAL_SEED: u64 = 0x5eed;

impl SeedPolicy {
    pub fn resolve<R: Rng + ?Sized>(&self, rng: Option<&mut R>) -> u64 {
        match (self, rng) {
            (SeedPolicy::Fixed(s), _) => *s,
            (SeedPolicy::PerPass, Some(rng)) => rng.gen(),
            (SeedPolicy::PerPass, None) => EVAL_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNNConfig {
    pub k: usize,
    pub rho: Rho,
    pub normalize: bool,
    pub strategy: Strategy,
    /// Candidate count (random) or sampling rate (spatial); unused for `All`.
    pub r: usize,
    pub seed_policy: SeedPolicy,
    pub positional: Positional,
    pub aggregation: AggregationKind,
    /// Patch size for pixel-unshuffle preprocessing in the 2D wrapper.
    pub patch: usize,
    pub out_channels: usize,
}

impl ConvNNConfig {
    /// Defaults: cosine similarity, softmax modulation, all candidates,
    /// depthwise aggregation.
    pub fn new(k: usize, out_channels: usize) -> Self {
        Self {
            k,
            rho: Rho::Softmax,
            normalize: true,
            strategy: Strategy::All,
            r: 32,
            seed_policy: SeedPolicy::Fixed(0),
            positional: Positional::None,
            aggregation: AggregationKind::Depthwise,
            patch: 1,
            out_channels,
        }
    }

    /// Settings under which the operator reproduces cosine attention
    /// (`k = n`) or top-k masked attention (`k < n`).
    pub fn attention_equivalent(k: usize, width: usize) -> Self {
        Self::new(k, width)
    }

    /// Convolution-style settings: constant modulation and regular
    /// aggregation.
    pub fn convolution_like(k: usize, out_channels: usize) -> Self {
        Self {
            rho: Rho::Ones,
            aggregation: AggregationKind::Regular,
            ..Self::new(k, out_channels)
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy, r: usize) -> Self {
        self.strategy = strategy;
        self.r = r;
        self
    }

    /// Checks the knobs that do not depend on the input.
    pub fn validate(&self, value_width: usize) -> Result<()> {
        if self.k == 0 {
            return Err(config_err("k must be at least 1"));
        }
        if self.patch == 0 {
            return Err(config_err("patch size must be at least 1"));
        }
        if self.out_channels == 0 {
            return Err(config_err("out_channels must be at least 1"));
        }
        if self.strategy != Strategy::All && self.r == 0 {
            return Err(config_err("r must be at least 1"));
        }
        if self.aggregation == AggregationKind::Depthwise && self.out_channels != value_width {
            return Err(config_err(format!(
                "depthwise aggregation needs out_channels == value width ({} vs {value_width})",
                self.out_channels
            )));
        }
        Ok(())
    }
}
