//! The branching layer splits output channels between a 3x3 convolution
//! and a ConvNN branch by lambda, then fuses them with a 1x1 convolution.

use convnn::model::{BranchingConfig, BranchingLayer, ParamStore};
use convnn::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> convnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[3, 8, 8], 1.0, &mut rng);
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = BranchingConfig::new(lambda, 16);
        let (conv, nn) = cfg.split();
        let mut store = ParamStore::new();
        let layer = BranchingLayer::new(&mut store, "b", 3, cfg, &mut rng)?;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &bound, xv, None)?;
        println!(
            "lambda {lambda:.2}: conv {conv:>2} + convnn {nn:>2} channels, {} params, output {:?}",
            store.parameter_count(),
            tape.value(y).shape()
        );
    }
    Ok(())
}
