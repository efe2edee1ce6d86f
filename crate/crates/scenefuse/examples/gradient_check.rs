//! The reverse-mode tape against central finite differences on a small
//! attention-style composite.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use scenefuse::numeric::{finite_difference_grad, Tape, Tensor};

fn main() -> scenefuse::Result<()> {
    let mut rng = scenefuse::rng(7);
    let w = Tensor::uniform(&mut rng, vec![4, 4], -1.0, 1.0);
    let x = Tensor::uniform(&mut rng, vec![3, 4], -1.0, 1.0);

    // loss = Σ softmax(x·W, rows)²
    let composite = |tape: &mut Tape, x_id, w_id| -> scenefuse::Result<usize> {
        let y = tape.matmul(x_id, w_id)?;
        let s = tape.softmax(y, 1)?;
        let sq = tape.mul(s, s)?;
        Ok(tape.sum(sq))
    };

    let tracked = x.clone().tracked();
    let mut tape = Tape::new();
    let x_id = tape.leaf(&tracked);
    let w_id = tape.constant(&w);
    let loss = composite(&mut tape, x_id, w_id)?;
    tape.backward(loss)?;
    let reverse_mode = tape.grad(x_id)?.to_vec();

    let numeric = finite_difference_grad(
        &mut |probe: &Tensor| {
            let mut t = Tape::new();
            let xi = t.leaf(probe);
            let wi = t.constant(&w);
            let l = composite(&mut t, xi, wi)?;
            Ok(t.value(l)[0])
        },
        &x,
        1e-4,
    )?;

    let mut worst = 0.0_f64;
    for (a, b) in reverse_mode.iter().zip(numeric.data()) {
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-2));
    }
    println!("loss value        : {:.6}", tape.value(loss)[0]);
    println!("reverse-mode grad : {:?}", &reverse_mode[..4]);
    println!("finite differences: {:?}", &numeric.data()[..4]);
    println!("worst relative err: {worst:.2e}");
    assert!(worst < 1e-5);
    Ok(())
}
