//! InfoNCE over linearly projected, L2-normalised embeddings, with the
//! analytic gradient with respect to the projection matrix.
//!
//! Both the retriever and the reranker objectives reduce to a sum of terms
//! `−log( g(q,p) / (g(q,p) + Σₙ g(q,n)) )` with `g(a,b) = exp(cos(a,b)/τ)`,
//! where every vector is `normalize(W·x)` for a frozen base vector `x`.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::providers::cosine_f64;

/// One InfoNCE term; indices point into the caller's input vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveTerm {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

pub fn check_temperature(tau: f64, field: &str) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(field, "must be a positive finite temperature"));
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// InfoNCE of one query against a positive and a negative set, computed in
/// log-space. Zero negatives give exactly 0.
pub fn info_nce(query: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    check_temperature(tau, "tau")?;
    let s_pos = cosine_f64(query, positive)? / tau;
    if negatives.is_empty() {
        return Ok(0.0);
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(s_pos);
    for n in negatives {
        logits.push(cosine_f64(query, n)? / tau);
    }
    Ok((log_sum_exp(&logits) - s_pos).max(0.0))
}

/// Summed loss over `terms` and, optionally, its gradient with respect to
/// `w`. Only inputs referenced by a term are projected.
pub fn projected_loss(
    w: &Matrix,
    inputs: &[Vec<f64>],
    terms: &[ContrastiveTerm],
    tau: f64,
    with_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    check_temperature(tau, "tau")?;
    let mut slot = vec![usize::MAX; inputs.len()];
    let mut used = Vec::new();
    for t in terms {
        for &i in std::iter::once(&t.query)
            .chain(std::iter::once(&t.positive))
            .chain(&t.negatives)
        {
            if i >= inputs.len() {
                return Err(Error::IndexOutOfRange {
                    kind: "input",
                    index: i,
                    size: inputs.len(),
                });
            }
            if slot[i] == usize::MAX {
                slot[i] = used.len();
                used.push(i);
            }
        }
    }

    let mut unit = Vec::with_capacity(used.len());
    let mut norms = Vec::with_capacity(used.len());
    for &i in &used {
        if inputs[i].len() != w.cols {
            return Err(Error::DimensionMismatch {
                expected: w.cols,
                actual: inputs[i].len(),
            });
        }
        let y = w.mul_vec(&inputs[i]);
        let n = norm(&y);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateProjection);
        }
        unit.push(y.iter().map(|v| v / n).collect::<Vec<f64>>());
        norms.push(n);
    }

    let mut grads_z = if with_grad {
        vec![vec![0.0; w.rows]; used.len()]
    } else {
        Vec::new()
    };
    let mut total = 0.0;
    let mut logits = Vec::new();
    for t in terms {
        let q = slot[t.query];
        let others: Vec<usize> = std::iter::once(slot[t.positive])
            .chain(t.negatives.iter().map(|&n| slot[n]))
            .collect();
        logits.clear();
        logits.extend(others.iter().map(|&o| dot(&unit[q], &unit[o]) / tau));
        let lse = log_sum_exp(&logits);
        total += lse - logits[0];
        if !with_grad || others.len() == 1 {
            continue;
        }
        for (k, &o) in others.iter().enumerate() {
            let p = (logits[k] - lse).exp();
            let d_logit = if k == 0 { p - 1.0 } else { p } / tau;
            for c in 0..w.rows {
                grads_z[q][c] += d_logit * unit[o][c];
                grads_z[o][c] += d_logit * unit[q][c];
            }
        }
    }

    if !with_grad {
        return Ok((total, None));
    }
    let mut grad = Matrix::zeros(w.rows, w.cols);
    for (s, &i) in used.iter().enumerate() {
        let g = &grads_z[s];
        let z = &unit[s];
        let zg = dot(z, g);
        // d normalize(y) / dy applied to g
        let dy: Vec<f64> = g
            .iter()
            .zip(z)
            .map(|(gc, zc)| (gc - zc * zg) / norms[s])
            .collect();
        grad.add_outer(1.0, &dy, &inputs[i]);
    }
    Ok((total, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_negatives_is_zero() {
        assert_eq!(info_nce(&[1.0, 0.0], &[0.6, 0.8], &[], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn one_equal_negative_is_ln2() {
        let v = [0.6, 0.8];
        let l = info_nce(&[1.0, 0.0], &v, &[&v], 0.02).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(info_nce(&[1.0], &[1.0], &[], 0.0).is_err());
        assert!(info_nce(&[1.0], &[1.0], &[], f64::NAN).is_err());
    }

    #[test]
    fn projected_identity_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let terms = vec![ContrastiveTerm {
            query: 0,
            positive: 1,
            negatives: vec![2, 3, 4],
        }];
        let (l, _) = projected_loss(&Matrix::identity(4), &inputs, &terms, 0.1, false).unwrap();
        let negs: Vec<&[f64]> = inputs[2..].iter().map(|v| v.as_slice()).collect();
        let direct = info_nce(&inputs[0], &inputs[1], &negs, 0.1).unwrap();
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 8;
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let terms = vec![
            ContrastiveTerm { query: 0, positive: 1, negatives: vec![2, 3] },
            ContrastiveTerm { query: 4, positive: 5, negatives: vec![0, 1, 2] },
            ContrastiveTerm { query: 0, positive: 2, negatives: vec![4] },
        ];
        let mut w = Matrix::identity(d);
        for x in w.data.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
        let (_, grad) = projected_loss(&w, &inputs, &terms, 0.1, true).unwrap();
        let grad = grad.unwrap();
        let h = 1e-6;
        let mut numeric = Matrix::zeros(d, d);
        for k in 0..d * d {
            let mut plus = w.clone();
            plus.data[k] += h;
            let mut minus = w.clone();
            minus.data[k] -= h;
            let lp = projected_loss(&plus, &inputs, &terms, 0.1, false).unwrap().0;
            let lm = projected_loss(&minus, &inputs, &terms, 0.1, false).unwrap().0;
            numeric.data[k] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = grad.data.iter().zip(&numeric.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-3, "relative error {}", diff / scale);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let inputs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let terms = vec![ContrastiveTerm {
            query: 0,
            positive: 1,
            negatives: vec![],
        }];
        assert!(matches!(
            projected_loss(&Matrix::zeros(2, 2), &inputs, &terms, 0.1, true),
            Err(Error::DegenerateProjection)
        ));
    }
}
