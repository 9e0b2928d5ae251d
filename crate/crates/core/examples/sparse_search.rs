//! Candidate strategies and what they cost at ViT-Tiny scale.

use convnn::convnn::{flop_estimate, ConvNNConfig, FlopShape, FlopTarget};
use convnn::harness::{VIT_TINY_LAYOUT, VIT_TINY_WIDTH};
use convnn::neighbor::{candidates_random, candidates_spatial, Layout, Strategy};

fn main() -> convnn::Result<()> {
    let grid = Layout::Grid { rows: 6, cols: 6 };
    println!("random r=8:  {:?}", candidates_random(36, 8, 1)?.indices);
    println!("spatial r=9: {:?}", candidates_spatial(grid, 9)?.indices);

    let shape = FlopShape::uniform(VIT_TINY_WIDTH, true);
    let n = VIT_TINY_LAYOUT.len();
    let gflops = |t: FlopTarget| flop_estimate(&t, VIT_TINY_LAYOUT, shape).map(|b| b.total() / 1e9);
    println!("\n14x14 tokens, width {VIT_TINY_WIDTH}, k=9");
    println!("{:<22} {:.4} GFLOPs", "attention", gflops(FlopTarget::Attention)?);
    println!("{:<22} {:.4} GFLOPs", "top-k attention", gflops(FlopTarget::Kvt { k: 9 })?);
    println!("{:<22} {:.4} GFLOPs", "local attention w=49", gflops(FlopTarget::LocalAttention { window: 49 })?);
    for (strategy, r) in [(Strategy::All, n), (Strategy::Random, 64), (Strategy::Random, 32), (Strategy::Spatial, 49)] {
        let cfg = ConvNNConfig::attention_equivalent(9, VIT_TINY_WIDTH).with_strategy(strategy, r);
        let label = format!("convnn {} r={r}", strategy.name());
        println!("{label:<22} {:.4} GFLOPs", gflops(FlopTarget::ConvNN(cfg))?);
    }
    Ok(())
}
