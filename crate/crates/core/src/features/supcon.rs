use crate::error::{Error, Result};

/// Supervised contrastive loss over L2-normalised embeddings with tube ids
/// as classes. Anchors without a same-tube partner are skipped.
pub fn supcon_loss(embeddings: &[Vec<f64>], tube_ids: &[usize], tau: f64) -> Result<f64> {
    supcon_loss_and_grad(embeddings, tube_ids, tau).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every embedding.
pub fn supcon_loss_and_grad(
    embeddings: &[Vec<f64>],
    tube_ids: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if tube_ids.len() != n {
        return Err(Error::ShapeMismatch {
            expected: (n, 1),
            actual: (tube_ids.len(), 1),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config("tau must be positive"));
    }
    if n < 2 {
        return Err(Error::DegenerateBatch);
    }
    let e = embeddings[0].len();
    let sim: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|a| {
            embeddings
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau)
                .collect()
        })
        .collect();

    // coefficient c[i][j]: dL/ds_ij, accumulated per anchor
    let mut coef = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let pos: Vec<usize> = (0..n)
            .filter(|&j| j != i && tube_ids[j] == tube_ids[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| sim[i][a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&a| a != i)
            .map(|a| (sim[i][a] - max).exp())
            .sum();
        let log_denom = max + denom.ln();
        let p = pos.len() as f64;
        total += pos.iter().map(|&j| log_denom - sim[i][j]).sum::<f64>() / p;
        for a in (0..n).filter(|&a| a != i) {
            coef[i][a] += (sim[i][a] - max).exp() / denom;
        }
        for &j in &pos {
            coef[i][j] -= 1.0 / p;
        }
    }
    if anchors == 0 {
        return Err(Error::DegenerateBatch);
    }
    let scale = 1.0 / (anchors as f64 * tau);
    let mut grad = vec![vec![0.0; e]; n];
    for i in 0..n {
        for j in 0..n {
            let c = coef[i][j];
            if c == 0.0 {
                continue;
            }
            for k in 0..e {
                grad[i][k] += scale * c * embeddings[j][k];
                grad[j][k] += scale * c * embeddings[i][k];
            }
        }
    }
    Ok((total / anchors as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_has_zero_loss() {
        let z = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(supcon_loss(&z, &[3, 3], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn no_positive_anywhere_is_degenerate() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            supcon_loss(&z, &[0, 1], 0.1),
            Err(Error::DegenerateBatch)
        ));
        assert!(matches!(
            supcon_loss(&z[..1], &[0], 0.1),
            Err(Error::DegenerateBatch)
        ));
        assert!(supcon_loss(&z, &[0, 0], 0.0).is_err());
    }
}
