//! Truncated signatures of a piecewise-linear path, Chen's identity and the
//! coordinates of the log-signature in the free nilpotent Lie algebra.

use nilwalk::tensor_free::{signature, FreeNilpotent};

fn main() -> nilwalk::Result<()> {
    let depth = 3;
    // Unit square traversed counter-clockwise: Lévy area 1.
    let square = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![0.0, 0.0],
    ];
    let sig = signature(&square, depth)?;
    println!("level 1 = {:?}", sig.level(1));
    println!("level 2 = {:?}", sig.level(2));
    println!("Lévy area = {}", 0.5 * (sig.coeff(&[0, 1]) - sig.coeff(&[1, 0])));

    // Chen: the signature of a concatenation is the tensor product.
    let (head, tail) = square.split_at(3);
    let mut tail = tail.to_vec();
    tail.insert(0, head[2].clone());
    let chen = signature(head, depth)?.tensor_product(&signature(&tail, depth)?)?;
    println!("Chen defect = {:.2e}", chen.max_abs_diff(&sig));

    let log = sig.log()?;
    println!("log-signature is Lie up to {:.2e}", log.lie_residual());

    let free = FreeNilpotent::new(2, depth)?;
    let coords = free.tensor_to_lie(&log)?;
    for (w, c) in free.words().iter().zip(&coords) {
        println!("  Lyndon {:?}: {:+.6}", w, c);
    }
    let back = free.lie_to_tensor(&coords).exp()?;
    println!("exp(log) round trip = {:.2e}", back.max_abs_diff(&sig));
    Ok(())
}
