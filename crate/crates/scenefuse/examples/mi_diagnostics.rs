//! Information diagnostics: exact decomposition on hand tables (copy,
//! XOR, redundant) and the discretized estimator on random features.
//!
//! ```bash
//! cargo run --example mi_diagnostics
//! ```

use scenefuse::infotheory::{
    conditional_entropy, conditional_mutual_information, discretize_features,
    interaction_information, mutual_information, Axis, JointDistribution,
};
use scenefuse::numeric::Tensor;

fn report(name: &str, p: &JointDistribution) -> scenefuse::Result<()> {
    println!(
        "{name:10}  I(B;I)={:+.4}  I(B;T|I)={:+.4}  I(B;I,T)={:+.4}  H(B|I,T)={:+.4}  interaction={:+.4}",
        mutual_information(p, &[Axis::I])?,
        conditional_mutual_information(p, Axis::T, Axis::I)?,
        mutual_information(p, &[Axis::I, Axis::T])?,
        conditional_entropy(p)?,
        interaction_information(p)?,
    );
    Ok(())
}

fn main() -> scenefuse::Result<()> {
    // B copies I; T uniform independent
    let mut copy = vec![0.0; 8];
    for i in 0..2 {
        for t in 0..2 {
            copy[(i * 2 + i) * 2 + t] = 0.25;
        }
    }
    report("copy", &JointDistribution::new([2, 2, 2], copy)?)?;

    // B = I xor T: pure synergy, negative interaction
    let mut xor = vec![0.0; 8];
    for i in 0..2usize {
        for t in 0..2usize {
            xor[((i ^ t) * 2 + i) * 2 + t] = 0.25;
        }
    }
    report("xor", &JointDistribution::new([2, 2, 2], xor)?)?;

    // B = I = T: pure redundancy, positive interaction
    let mut red = vec![0.0; 8];
    red[0] = 0.5;
    red[7] = 0.5;
    report("redundant", &JointDistribution::new([2, 2, 2], red)?)?;

    // discretized estimator on correlated continuous features
    let mut rng = scenefuse::rng(5);
    let mut b = Vec::new();
    let mut i_side = Vec::new();
    let mut t_side = Vec::new();
    for _ in 0..200 {
        let shared = Tensor::uniform(&mut rng, vec![4], -1.0, 1.0);
        let noise = Tensor::uniform(&mut rng, vec![4], -0.3, 0.3);
        let mixed: Vec<f64> =
            shared.data().iter().zip(noise.data()).map(|(s, n)| s + n).collect();
        b.push(Tensor::new(vec![4], mixed)?);
        i_side.push(shared);
        t_side.push(Tensor::uniform(&mut rng, vec![4], -1.0, 1.0));
    }
    fn refs(v: &[Tensor]) -> Vec<&Tensor> {
        v.iter().collect()
    }
    let table = discretize_features(&refs(&b), &refs(&i_side), &refs(&t_side), 4)?;
    println!("\nestimated from 200 feature triples (B tracks I, T independent):");
    report("empirical", &table)?;
    Ok(())
}
