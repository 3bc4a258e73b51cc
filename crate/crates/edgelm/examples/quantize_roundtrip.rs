//! Group-wise absmax INT8 quantization on a worked example and a random
//! tensor: stored integers, scales, and reconstruction error.
//!
//! Run: cargo run -p edgelm --example quantize_roundtrip

use edgelm::infer::math::Rng64;
use edgelm::quant::{dequantize, quantize, reconstruction_error};
use edgelm::tensor::TensorF32;

fn main() -> edgelm::Result<()> {
    // The worked example: one group of four weights.
    let t = TensorF32::new(vec![4], vec![1.0, -2.0, 0.5, 2.0])?;
    let q = quantize(&t, 4)?;
    println!("weights   {:?}", t.data());
    println!("scale     {:?}  (= max|w| / 127)", q.scales());
    println!("stored    {:?}", q.values());
    println!("restored  {:?}", dequantize(&q).data());

    // A larger random tensor: the error never exceeds half a scale step.
    let mut rng = Rng64::new(7);
    let data: Vec<f32> = (0..4096).map(|_| rng.next_range(-1.0, 1.0)).collect();
    let big = TensorF32::new(vec![64, 64], data)?;
    for group in [16usize, 64] {
        let q = quantize(&big, group)?;
        let err = reconstruction_error(&big, &q)?;
        let max_scale = q.scales().iter().cloned().fold(0.0f32, f32::max);
        println!(
            "\n64x64 tensor, group {group}: max|err| = {:.6} (half of the largest scale is {:.6}), L1 = {:.3}",
            err.max_abs,
            max_scale / 2.0,
            err.l1
        );
    }
    Ok(())
}
