//! Analytic operation counts. A multiply-add counts as two FLOPs.

use super::config::{AggregationKind, ConvNNConfig, Rho};
use crate::error::Result;
use crate::neighbor::{candidates_spatial, Layout, Strategy};

#[derive(Clone, Debug)]
pub enum FlopTarget {
    ConvNN(ConvNNConfig),
    /// Dense softmax attention.
    Attention,
    /// Attention restricted to the top-`k` keys per query.
    Kvt { k: usize },
    /// Attention inside non-overlapping windows of `window` tokens.
    LocalAttention { window: usize },
}

/// Channel widths: input `c`, query/key `h`, value `v`.
#[derive(Clone, Copy, Debug)]
pub struct FlopShape {
    pub c: usize,
    pub h: usize,
    pub v: usize,
    pub learned_projections: bool,
}

impl FlopShape {
    pub fn uniform(c: usize, learned_projections: bool) -> Self {
        Self {
            c,
            h: c,
            v: c,
            learned_projections,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopBreakdown {
    pub projection: f64,
    pub normalization: f64,
    pub similarity: f64,
    pub selection: f64,
    pub modulation: f64,
    pub aggregation: f64,
}

impl FlopBreakdown {
    pub fn total(&self) -> f64 {
        self.projection
            + self.normalization
            + self.similarity
            + self.selection
            + self.modulation
            + self.aggregation
    }
}

fn selection_cost(n: f64, m: f64, k: usize) -> f64 {
    let depth = (k.max(2) as f64).log2().ceil().max(1.0);
    n * m * depth
}

pub fn flop_estimate(target: &FlopTarget, layout: Layout, shape: FlopShape) -> Result<FlopBreakdown> {
    let n = layout.len() as f64;
    let (c, h, v) = (shape.c as f64, shape.h as f64, shape.v as f64);
    let projection = if shape.learned_projections {
        2.0 * n * c * (2.0 * h + v)
    } else {
        0.0
    };
    let attention = |rows: f64, keys: f64| FlopBreakdown {
        projection,
        similarity: 2.0 * rows * keys * h,
        modulation: 3.0 * rows * keys,
        aggregation: 2.0 * rows * keys * v,
        ..Default::default()
    };
    Ok(match target {
        FlopTarget::Attention => attention(n, n),
        FlopTarget::Kvt { k } => FlopBreakdown {
            selection: selection_cost(n, n, *k),
            ..attention(n, n)
        },
        FlopTarget::LocalAttention { window } => attention(n, (*window as f64).min(n)),
        FlopTarget::ConvNN(cfg) => {
            let m = match cfg.strategy {
                Strategy::All => n,
                Strategy::Random => cfg.r.min(layout.len()) as f64,
                Strategy::Spatial => candidates_spatial(layout, cfg.r)?.len() as f64,
            };
            let k = cfg.k as f64;
            let out = cfg.out_channels as f64;
            FlopBreakdown {
                projection,
                normalization: if cfg.normalize { 3.0 * h * (n + m) } else { 0.0 },
                similarity: 2.0 * n * m * h,
                selection: selection_cost(n, m, cfg.k),
                modulation: match cfg.rho {
                    Rho::Softmax => 3.0 * n * k + n * k * v,
                    Rho::Ones => 0.0,
                },
                aggregation: match cfg.aggregation {
                    AggregationKind::Depthwise => 2.0 * n * k * v,
                    AggregationKind::Regular => 2.0 * n * k * v * out,
                    AggregationKind::DepthwiseSeparable => 2.0 * n * k * v + 2.0 * n * v * out,
                },
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_closed_form() {
        let b = flop_estimate(&FlopTarget::Attention, Layout::Seq(4), FlopShape::uniform(2, false)).unwrap();
        // 2*16*2 + 3*16 + 2*16*2
        assert_eq!(b.total(), 64.0 + 48.0 + 64.0);
    }

    #[test]
    fn sparse_search_is_cheaper() {
        let layout = Layout::Grid { rows: 8, cols: 8 };
        let shape = FlopShape::uniform(192, true);
        let att = flop_estimate(&FlopTarget::Attention, layout, shape).unwrap().total();
        let all = flop_estimate(&FlopTarget::ConvNN(ConvNNConfig::new(9, 192)), layout, shape)
            .unwrap()
            .total();
        let rand = flop_estimate(
            &FlopTarget::ConvNN(ConvNNConfig::new(9, 192).with_strategy(Strategy::Random, 32)),
            layout,
            shape,
        )
        .unwrap()
        .total();
        assert!(rand < all && all < att, "{rand} {all} {att}");
    }

    #[test]
    fn spatial_uses_grid_candidates() {
        let layout = Layout::Grid { rows: 4, cols: 4 };
        let cfg = ConvNNConfig::new(2, 1).with_strategy(Strategy::Spatial, 4);
        let b = flop_estimate(&FlopTarget::ConvNN(cfg), layout, FlopShape::uniform(1, false)).unwrap();
        assert_eq!(b.similarity, 2.0 * 16.0 * 4.0);
        let bad = ConvNNConfig::new(2, 1).with_strategy(Strategy::Spatial, 3);
        assert!(flop_estimate(&FlopTarget::ConvNN(bad), layout, FlopShape::uniform(1, false)).is_err());
    }
}
