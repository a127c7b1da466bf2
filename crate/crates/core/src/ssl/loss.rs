//! Normalized-temperature cross-entropy over a batch of view pairs.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Rows with a smaller norm cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

/// Loss and `dL/dz` for projections `z` of shape `(2n, d)` whose rows
/// `(2i, 2i+1)` are the two views of sample `i`. Every other row in the batch
/// is a negative for an anchor; the loss is the mean over all `2n` anchors.
pub fn nt_xent(z: &Tensor, tau: f64) -> Result<(f64, Tensor)> {
    let shape = z.shape();
    if shape.len() != 2 || shape[0] < 4 || !shape[0].is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!(
            "projections must be (2n, d) with 2n >= 4, got {shape:?}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::NonPositiveParameter { name: "tau", value: tau });
    }
    let (m, d) = (shape[0], shape[1]);
    let mut u = vec![0.0; m * d];
    let mut norms = vec![0.0; m];
    for i in 0..m {
        let row = z.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroNormEmbedding(i));
        }
        norms[i] = norm;
        for (dst, v) in u[i * d..(i + 1) * d].iter_mut().zip(row) {
            *dst = v / norm;
        }
    }
    let urow = |i: usize| &u[i * d..(i + 1) * d];

    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = urow(i).iter().zip(urow(j)).map(|(a, b)| a * b).sum::<f64>() / tau;
            s[i * m + j] = v;
            s[j * m + i] = v;
        }
    }

    // g[a][b] = dL/ds_ab treating s_ab and s_ba as separate entries.
    let mut g = vec![0.0; m * m];
    let mut loss = 0.0;
    let inv_m = 1.0 / m as f64;
    for a in 0..m {
        let pos = a ^ 1;
        let row = &s[a * m..(a + 1) * m];
        let max = (0..m).filter(|&b| b != a).map(|b| row[b]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m).filter(|&b| b != a).map(|b| (row[b] - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[pos];
        for b in (0..m).filter(|&b| b != a) {
            g[a * m + b] = inv_m * (row[b] - lse).exp();
        }
        g[a * m + pos] -= inv_m;
    }
    loss *= inv_m;

    let mut grad = vec![0.0; m * d];
    for i in 0..m {
        let mut du = vec![0.0; d];
        for j in (0..m).filter(|&j| j != i) {
            let c = (g[i * m + j] + g[j * m + i]) / tau;
            for (x, y) in du.iter_mut().zip(urow(j)) {
                *x += c * y;
            }
        }
        let ui = urow(i);
        let radial: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for k in 0..d {
            grad[i * d + k] = (du[k] - radial * ui[k]) / norms[i];
        }
    }
    Ok((loss, Tensor::new(vec![m, d], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
    }

    #[test]
    fn identical_rows_give_log_three() {
        let z = t(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let (loss, _) = nt_xent(&z, 0.5).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_negatives() {
        let z = t(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], &[0.0, 3.0]]);
        let (loss, _) = nt_xent(&z, 0.5).unwrap();
        let e2 = 2f64.exp();
        let expected = -(e2 / (e2 + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.2395).abs() < 1e-4);
    }

    #[test]
    fn zero_row_rejected() {
        let z = t(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(nt_xent(&z, 0.5), Err(Error::ZeroNormEmbedding(1))));
    }

    #[test]
    fn too_small_batch_rejected() {
        let z = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(nt_xent(&z, 0.5), Err(Error::ShapeMismatch(_))));
        let z = t(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[1.0, 2.0]]);
        assert!(nt_xent(&z, 0.0).is_err());
    }
}
