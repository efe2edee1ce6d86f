//! Brute-force information diagnostics over a small discrete joint
//! distribution of three variables: the instance representation B, the
//! vision modality I and the text modality T. All quantities are exact
//! summations in nats; `0·ln 0` counts as 0.

use crate::error::{require, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    B,
    I,
    T,
}

impl Axis {
    fn idx(self) -> usize {
        match self {
            Axis::B => 0,
            Axis::I => 1,
            Axis::T => 2,
        }
    }
}

/// Joint probability table p(b,i,t) with small arities per axis.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    arities: [usize; 3],
    table: Vec<f64>,
}

impl JointDistribution {
    pub fn new(arities: [usize; 3], table: Vec<f64>) -> Result<JointDistribution> {
        require(arities.iter().all(|&a| a >= 1), "every axis needs arity ≥ 1")?;
        require(
            table.len() == arities.iter().product::<usize>(),
            "table length must match the product of arities",
        )?;
        require(table.iter().all(|&p| p >= 0.0), "probabilities must be nonnegative")?;
        let sum: f64 = table.iter().sum();
        require((sum - 1.0).abs() <= 1e-12, format!("table must sum to 1, got {sum}"))?;
        Ok(JointDistribution { arities, table })
    }

    pub fn from_counts(arities: [usize; 3], counts: Vec<f64>) -> Result<JointDistribution> {
        let total: f64 = counts.iter().sum();
        require(total > 0.0, "counts must not be all zero")?;
        let mut table: Vec<f64> = counts.iter().map(|&c| c / total).collect();
        // renormalize exactly against accumulated rounding
        let s: f64 = table.iter().sum();
        for p in table.iter_mut() {
            *p /= s;
        }
        JointDistribution::new(arities, table)
    }

    pub fn arities(&self) -> [usize; 3] {
        self.arities
    }

    pub fn p(&self, b: usize, i: usize, t: usize) -> f64 {
        self.table[(b * self.arities[1] + i) * self.arities[2] + t]
    }

    fn cells(&self) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
        let [nb, ni, nt] = self.arities;
        (0..nb).flat_map(move |b| {
            (0..ni).flat_map(move |i| (0..nt).map(move |t| ([b, i, t], self.p(b, i, t))))
        })
    }

    /// Marginal over the given axes (probability of a joint setting of
    /// exactly those axes).
    fn marginal(&self, axes: &[Axis], values: [usize; 3]) -> f64 {
        let keep: Vec<usize> = axes.iter().map(|a| a.idx()).collect();
        self.cells()
            .filter(|(idx, _)| keep.iter().all(|&k| idx[k] == values[k]))
            .map(|(_, p)| p)
            .sum()
    }
}

fn xlog(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        0.0
    }
}

/// Mutual information `I(B; axes)` in nats, by exact summation.
pub fn mutual_information(p: &JointDistribution, axes: &[Axis]) -> Result<f64> {
    require(!axes.is_empty(), "needs at least one axis on the right side")?;
    require(!axes.contains(&Axis::B), "the right side must not contain the instance axis")?;
    let mut right = axes.to_vec();
    right.dedup();
    let mut left = vec![Axis::B];
    let mut both = left.clone();
    both.extend(right.iter().copied());
    left.dedup();

    let mut total = 0.0;
    for (idx, _) in p.cells() {
        // sum over unique joint settings of (B, axes): marginalize the rest
        // by visiting each cell once weighted by its joint mass
        let joint = p.marginal(&both, idx);
        if joint <= 0.0 {
            continue;
        }
        let pb = p.marginal(&left, idx);
        let pr = p.marginal(&right, idx);
        // every cell sharing the same (B, axes) setting contributes the
        // same term; divide by the multiplicity of remaining axes
        let rest: usize = [Axis::B, Axis::I, Axis::T]
            .iter()
            .filter(|a| !both.contains(a))
            .map(|a| p.arities[a.idx()])
            .product();
        total += joint * (joint / (pb * pr)).ln() / rest as f64;
    }
    Ok(total)
}

/// Conditional mutual information `I(B; other | given)` in nats.
pub fn conditional_mutual_information(
    p: &JointDistribution,
    other: Axis,
    given: Axis,
) -> Result<f64> {
    require(other != Axis::B && given != Axis::B && other != given, "axes must be I and T")?;
    let mut total = 0.0;
    for (idx, joint) in p.cells() {
        if joint <= 0.0 {
            continue;
        }
        let pg = p.marginal(&[given], idx);
        let pbg = p.marginal(&[Axis::B, given], idx);
        let pog = p.marginal(&[other, given], idx);
        total += joint * ((pg * joint) / (pbg * pog)).ln();
    }
    Ok(total)
}

/// Conditional entropy `H(B | I,T)` in nats: 0 iff B is a deterministic
/// function of (I,T) on the support.
pub fn conditional_entropy(p: &JointDistribution) -> Result<f64> {
    let mut total = 0.0;
    for (idx, joint) in p.cells() {
        if joint <= 0.0 {
            continue;
        }
        let pit = p.marginal(&[Axis::I, Axis::T], idx);
        total -= joint * xlog(joint / pit);
    }
    Ok(total)
}

/// Entropy of the instance marginal, in nats.
pub fn instance_entropy(p: &JointDistribution) -> f64 {
    let [nb, _, _] = p.arities();
    (0..nb)
        .map(|b| {
            let pb = p.marginal(&[Axis::B], [b, 0, 0]);
            -xlog(pb) * pb
        })
        .sum()
}

/// Interaction information `I(B;I) − I(B;I|T)` (signed): positive values
/// indicate redundancy between the modalities, negative values synergy.
pub fn interaction_information(p: &JointDistribution) -> Result<f64> {
    let mi = mutual_information(p, &[Axis::I])?;
    let cmi = conditional_mutual_information(p, Axis::I, Axis::T)?;
    Ok(mi - cmi)
}

/// All four diagnostic quantities: I(B;I), I(B;T|I), H(B|I,T), interaction.
pub fn diagnostics(p: &JointDistribution) -> Result<[f64; 4]> {
    Ok([
        mutual_information(p, &[Axis::I])?,
        conditional_mutual_information(p, Axis::T, Axis::I)?,
        conditional_entropy(p)?,
        interaction_information(p)?,
    ])
}

// ── feature discretization ───────────────────────────────────────────────

/// First principal direction of a centered feature batch by power
/// iteration with a deterministic start.
fn principal_projection(batch: &[&Tensor]) -> Vec<f64> {
    let n = batch.len();
    let d = batch[0].len();
    let mut mean = vec![0.0; d];
    for f in batch {
        for (m, v) in mean.iter_mut().zip(f.data()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = batch
        .iter()
        .map(|f| f.data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut dir = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..100 {
        // apply covariance: Σ x (xᵀ dir)
        let mut next = vec![0.0; d];
        for x in &centered {
            let t: f64 = x.iter().zip(&dir).map(|(a, b)| a * b).sum();
            for (nx, &xv) in next.iter_mut().zip(x) {
                *nx += t * xv;
            }
        }
        let norm: f64 = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break; // constant batch: any direction works
        }
        for (g, v) in dir.iter_mut().zip(&next) {
            *g = v / norm;
        }
    }
    centered.iter().map(|x| x.iter().zip(&dir).map(|(a, b)| a * b).sum()).collect()
}

/// Equal-frequency bin index per sample: rank-based with stable
/// tie-breaking by sample order, and identical values always share a bin.
fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut out = vec![0usize; n];
    let mut prev_bin = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let mut bin = (rank * bins / n).min(bins - 1);
        if rank > 0 && values[i] == values[order[rank - 1]] {
            bin = prev_bin;
        }
        out[i] = bin;
        prev_bin = bin;
    }
    out
}

/// Empirical joint table over equal-frequency bins of scalar projections
/// (first principal direction) of the three feature blocks.
pub fn discretize_features(
    instance: &[&Tensor],
    vision: &[&Tensor],
    text: &[&Tensor],
    bins: usize,
) -> Result<JointDistribution> {
    require(bins >= 2, "needs at least 2 bins")?;
    let n = instance.len();
    require(n == vision.len() && n == text.len(), "feature batches must align")?;
    require(n >= bins, format!("batch of {n} is smaller than {bins} bins"))?;
    let b_bins = equal_frequency_bins(&principal_projection(instance), bins);
    let i_bins = equal_frequency_bins(&principal_projection(vision), bins);
    let t_bins = equal_frequency_bins(&principal_projection(text), bins);
    let mut counts = vec![0.0; bins * bins * bins];
    for k in 0..n {
        counts[(b_bins[k] * bins + i_bins[k]) * bins + t_bins[k]] += 1.0;
    }
    JointDistribution::from_counts([bins, bins, bins], counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_table(seed: u64, arities: [usize; 3]) -> JointDistribution {
        let mut rng = crate::rng(seed);
        let n: usize = arities.iter().product();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        JointDistribution::from_counts(arities, raw).unwrap()
    }

    #[test]
    fn independent_variables_have_zero_mi() {
        // p(b,i,t) = q(b)·r(i,t)
        let q = [0.3, 0.7];
        let r = [0.1, 0.4, 0.2, 0.3];
        let mut table = Vec::new();
        for &qb in &q {
            for &rit in &r {
                table.push(qb * rit);
            }
        }
        let p = JointDistribution::new([2, 2, 2], table).unwrap();
        assert_abs_diff_eq!(
            mutual_information(&p, &[Axis::I, Axis::T]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn copy_channel_mi_is_entropy() {
        // B = I, uniform over 3 values; T constant
        let mut table = vec![0.0; 3 * 3];
        for k in 0..3 {
            table[k * 3 + k] = 1.0 / 3.0;
        }
        let p = JointDistribution::new([3, 3, 1], table).unwrap();
        assert_abs_diff_eq!(
            mutual_information(&p, &[Axis::I]).unwrap(),
            3.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hand_table_matches_direct_summation() {
        let p = random_table(5, [2, 2, 2]);
        // direct Σ p(b,(i,t)) log(p/(p_B p_IT)) with independent code
        let mut expect = 0.0;
        for b in 0..2 {
            for i in 0..2 {
                for t in 0..2 {
                    let joint = p.p(b, i, t);
                    if joint <= 0.0 {
                        continue;
                    }
                    let pb: f64 = (0..2)
                        .flat_map(|ii| (0..2).map(move |tt| (ii, tt)))
                        .map(|(ii, tt)| p.p(b, ii, tt))
                        .sum();
                    let pit: f64 = (0..2).map(|bb| p.p(bb, i, t)).sum();
                    expect += joint * (joint / (pb * pit)).ln();
                }
            }
        }
        assert_abs_diff_eq!(
            mutual_information(&p, &[Axis::I, Axis::T]).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn conditional_entropy_cases() {
        // deterministic B given (I,T): B = I
        let mut table = vec![0.0; 2 * 2 * 2];
        table[0] = 0.25; // b=0,i=0,t=0
        table[1] = 0.25; // b=0,i=0,t=1
        table[(2 + 1) * 2] = 0.25; // b=1,i=1,t=0
        table[(2 + 1) * 2 + 1] = 0.25; // b=1,i=1,t=1
        let p = JointDistribution::new([2, 2, 2], table).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&p).unwrap(), 0.0, epsilon = 1e-12);

        // B independent uniform over k values
        let k = 4;
        let table = vec![1.0 / (k as f64 * 2.0); k * 2];
        let p = JointDistribution::new([k, 2, 1], table).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&p).unwrap(), (k as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn chain_rule_identity_on_random_tables() {
        for seed in 0..30 {
            let p = random_table(seed, [3, 2, 4]);
            let h_cond = conditional_entropy(&p).unwrap();
            let h = instance_entropy(&p);
            let mi = mutual_information(&p, &[Axis::I, Axis::T]).unwrap();
            assert_abs_diff_eq!(h_cond, h - mi, epsilon = 1e-12);
        }
    }

    #[test]
    fn decomposition_identity_on_random_tables() {
        for seed in 0..100 {
            let p = random_table(seed, [2, 3, 2]);
            let joint = mutual_information(&p, &[Axis::I, Axis::T]).unwrap();
            let vision = mutual_information(&p, &[Axis::I]).unwrap();
            let text_given_vision =
                conditional_mutual_information(&p, Axis::T, Axis::I).unwrap();
            assert_abs_diff_eq!(joint, vision + text_given_vision, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantities_respect_bounds() {
        for seed in 0..20 {
            let p = random_table(seed + 200, [3, 3, 3]);
            let mi = mutual_information(&p, &[Axis::I, Axis::T]).unwrap();
            let hc = conditional_entropy(&p).unwrap();
            assert!(mi >= -1e-12);
            assert!(hc >= -1e-12);
            assert!(mi <= 3.0_f64.ln() + 1e-12);
            assert!(hc <= 3.0_f64.ln() + 1e-12);
        }
    }

    #[test]
    fn xor_triple_has_negative_interaction() {
        // B = I ⊕ T with I,T uniform independent
        let mut table = vec![0.0; 2 * 2 * 2];
        for i in 0..2 {
            for t in 0..2 {
                let b = i ^ t;
                table[(b * 2 + i) * 2 + t] = 0.25;
            }
        }
        let p = JointDistribution::new([2, 2, 2], table).unwrap();
        assert_abs_diff_eq!(mutual_information(&p, &[Axis::I]).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            conditional_mutual_information(&p, Axis::I, Axis::T).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            interaction_information(&p).unwrap(),
            -(2.0_f64.ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn redundant_triple_has_positive_interaction() {
        // B = I = T, uniform binary
        let mut table = vec![0.0; 8];
        table[0] = 0.5; // (0,0,0)
        table[7] = 0.5; // (1,1,1)
        let p = JointDistribution::new([2, 2, 2], table).unwrap();
        assert_abs_diff_eq!(
            interaction_information(&p).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn independent_third_variable_zeroes_interaction() {
        // T independent of (B,I): interaction = I(B;I) − I(B;I|T) = 0
        let mut table = Vec::new();
        let bi = [0.1, 0.3, 0.2, 0.4];
        for &p_bi in &bi {
            for &pt in &[0.6, 0.4] {
                table.push(p_bi * pt);
            }
        }
        let p = JointDistribution::new([2, 2, 2], table).unwrap();
        assert_abs_diff_eq!(interaction_information(&p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn discretization_properties() {
        let mut rng = crate::rng(9);
        let batch: Vec<Tensor> =
            (0..40).map(|_| Tensor::uniform(&mut rng, vec![4], -1.0, 1.0)).collect();
        let refs: Vec<&Tensor> = batch.iter().collect();
        let p = discretize_features(&refs, &refs, &refs, 4).unwrap();
        let total: f64 = (0..4)
            .flat_map(|b| (0..4).flat_map(move |i| (0..4).map(move |t| (b, i, t))))
            .map(|(b, i, t)| p.p(b, i, t))
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);

        // constant features land in one cell with zero entropies
        let constant: Vec<Tensor> = (0..8).map(|_| Tensor::ones(vec![3])).collect();
        let crefs: Vec<&Tensor> = constant.iter().collect();
        let p = discretize_features(&crefs, &crefs, &crefs, 2).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&p).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(instance_entropy(&p), 0.0, epsilon = 1e-12);

        // two bins split at the median
        let spread: Vec<Tensor> =
            (0..10).map(|k| Tensor::new(vec![1], vec![k as f64]).unwrap()).collect();
        let srefs: Vec<&Tensor> = spread.iter().collect();
        let p = discretize_features(&srefs, &srefs, &srefs, 2).unwrap();
        let p0 = p.marginal(&[Axis::B], [0, 0, 0]);
        assert_abs_diff_eq!(p0, 0.5, epsilon = 0.1);

        // batch smaller than bins is a contract violation
        assert!(discretize_features(&srefs[..3], &srefs[..3], &srefs[..3], 4).is_err());
    }
}
