//! The forward primitives on hand-sized tensors.

use relprop::ops::{conv2d_forward, gap_forward, maxpool_forward, relu_forward, softmax};
use relprop::Tensor;

fn main() -> relprop::Result<()> {
    let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect())?;
    let ones = Tensor::filled(&[1, 1, 3, 3], 1.0)?;
    println!(
        "3×3 all-ones conv over 1..9: {:?}",
        conv2d_forward(&x, &ones, None, 1, 0)?.data()
    );

    let padded = conv2d_forward(&x, &ones, None, 1, 1)?;
    println!(
        "same conv with padding 1: shape {:?}, {:?}",
        padded.shape(),
        padded.data()
    );

    let (pooled, idx) = maxpool_forward(&x, 2, 1, 0)?;
    println!(
        "2×2 max-pool, stride 1: {:?} at flat offsets {:?}",
        pooled.data(),
        idx.data()
    );

    println!("global average pool: {:?}", gap_forward(&x)?.data());

    let logits = Tensor::from_slice(&[3], &[-1.0, 0.0, 2.0])?;
    println!("relu: {:?}", relu_forward(&logits).data());
    println!("softmax: {:?}", softmax(&logits)?.data());
    Ok(())
}
