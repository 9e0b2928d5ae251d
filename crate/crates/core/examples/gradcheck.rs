//! Finite-difference check of the whole operator for every weighting,
//! candidate strategy and aggregation kind.

use convnn::convnn::{AggregationKind, Rho};
use convnn::gradcheck::check_convnn_chain;
use convnn::neighbor::Strategy;

fn main() -> convnn::Result<()> {
    for rho in [Rho::Ones, Rho::Softmax] {
        for strategy in [Strategy::All, Strategy::Random, Strategy::Spatial] {
            for kind in [AggregationKind::Regular, AggregationKind::Depthwise, AggregationKind::DepthwiseSeparable] {
                let c = check_convnn_chain(rho, strategy, kind, 0, 1e-3)?;
                println!(
                    "{:<8} {:<8} {:<20} max rel error {:.2e} (gap {:.1e}, seed {})",
                    rho.name(),
                    strategy.name(),
                    kind.name(),
                    c.check.max_rel_error(),
                    c.gap,
                    c.seed
                );
            }
        }
    }
    Ok(())
}
