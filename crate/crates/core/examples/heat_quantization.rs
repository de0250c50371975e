//! Quantize an attribution map into eight levels in both reconstruction modes.

use relprop::lrp::{bin_indices, heat_quantize, QuantizeMode};
use relprop::Tensor;

fn main() -> relprop::Result<()> {
    let raw = Tensor::new(
        vec![2, 6],
        vec![
            0.0, 0.02, 0.05, 0.11, 0.3, 0.31, 0.4, 0.52, 0.6, 0.79, 0.8, 1.0,
        ],
    )?;
    println!("raw:      {:?}", raw.data());
    println!(
        "bins:     {:?}",
        bin_indices(&raw, 8).expect("non-constant map")
    );
    for mode in [QuantizeMode::Paper, QuantizeMode::Binwidth] {
        println!(
            "{:<9} {:?}",
            format!("{mode:?}:").to_lowercase(),
            heat_quantize(&raw, 8, mode)?.data()
        );
    }
    let flat = Tensor::filled(&[2, 2], 0.25)?;
    println!(
        "constant map stays put: {:?}",
        heat_quantize(&flat, 8, QuantizeMode::Paper)?.data()
    );
    Ok(())
}
