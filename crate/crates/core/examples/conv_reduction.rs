//! With positional-only similarity, constant weights and k = 9, ConvNN
//! matches a zero-padded 3x3 convolution at every interior position.

use convnn::oracles::check_conv_reduction;

fn main() -> convnn::Result<()> {
    for side in [5, 8, 12] {
        let r = check_conv_reduction(side, side, 9)?;
        println!("{side}x{side}: deviation {:.2e} passed {}", r.deviation, r.passed);
        println!("  {}", r.config);
    }
    Ok(())
}
