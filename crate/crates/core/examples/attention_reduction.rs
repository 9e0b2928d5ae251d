//! ConvNN with all candidates, softmax weights and a unit depthwise kernel
//! reproduces cosine attention (k = n) and top-k attention (k < n).

use convnn::oracles::check_attention_reduction;

fn main() -> convnn::Result<()> {
    for n in [4, 8, 16, 32] {
        for k in [1, 3, n / 2, n] {
            let r = check_attention_reduction(n, 8, 8, 8, k, 42)?;
            for c in &r.comparisons {
                println!("n={n:<3} k={k:<3} vs {:<10} deviation {:.2e}", c.oracle, c.deviation);
            }
            assert!(r.passed, "{}", r.case);
        }
    }
    Ok(())
}
