//! L1 magnitude pruning and the bitvector sparse format: serialized size
//! falls as the pruned fraction rises, and lookups agree with the dense
//! tensor.
//!
//! Run: cargo run -p edgelm --example sparse_pruning

use edgelm::infer::math::Rng64;
use edgelm::sparse::{l1_prune, lookup, serialized_size, to_sparse};
use edgelm::tensor::TensorF32;

fn main() -> edgelm::Result<()> {
    let mut rng = Rng64::new(11);
    let rows = 128;
    let cols = 96;
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.next_range(-1.0, 1.0)).collect();
    let dense = TensorF32::new(vec![rows, cols], data)?;
    let dense_bytes = dense.byte_len();

    println!("{rows} x {cols} FP32 tensor: {dense_bytes} bytes dense\n");
    println!("{:>8} {:>10} {:>14} {:>12}", "pruned", "non-zero", "sparse bytes", "vs dense");
    for fraction in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let (pruned, report) = l1_prune(&dense, fraction)?;
        let sparse = to_sparse(&pruned)?;
        assert_eq!(report.serialized_bytes, serialized_size(&sparse));
        println!(
            "{:>7.0}% {:>10} {:>14} {:>11.1}%",
            fraction * 100.0,
            sparse.nnz(),
            report.serialized_bytes,
            100.0 * report.serialized_bytes as f64 / dense_bytes as f64
        );
    }

    // Random-access reads go through the presence bitvector.
    let (pruned, _) = l1_prune(&dense, 0.5)?;
    let sparse = to_sparse(&pruned)?;
    let (r, c) = (17, 43);
    println!(
        "\nlookup({r}, {c}) = {} (dense value {})",
        lookup(&sparse, r, c)?,
        pruned.data()[r * cols + c]
    );
    Ok(())
}
