use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Log-likelihood decrease attributable to rounding; line searches accept it.
pub(crate) fn ll_slack(ll: f64) -> f64 {
    1e-12 * (1.0 + ll.abs())
}

/// Smallest admissible Cholesky pivot of the unit-diagonal information matrix.
/// A pivot is 1 − R² of that column on the preceding ones.
const MIN_PIVOT: f64 = 1e-11;

pub(crate) fn column_rms(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect()
}

pub(crate) fn scaled_norm(score: &[f64], rms: &[f64], n: usize) -> f64 {
    score
        .iter()
        .zip(rms)
        .map(|(s, r)| {
            let v = if *r > 0.0 { s / r } else { *s };
            v * v
        })
        .sum::<f64>()
        .sqrt()
        / n as f64
}

pub(crate) fn linear_predictor(x: &DMatrix<f64>, coef: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut eta = vec![0.0; n];
    for (j, &b) in coef.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
            *e += b * v;
        }
    }
    eta
}

/// X' u.
pub(crate) fn cross(x: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    x.column_iter()
        .map(|c| c.iter().zip(u).map(|(a, b)| a * b).sum())
        .collect()
}

/// Solves (X' W X) δ = score after equilibrating to unit diagonal.
pub(crate) fn newton_direction(
    x: &DMatrix<f64>,
    weights: &[f64],
    score: &[f64],
) -> Result<Vec<f64>> {
    let q = x.ncols();
    let cols: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| c.iter().zip(weights).map(|(v, w)| v * w).collect())
        .collect();
    let mut info = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        for k in 0..=j {
            let v: f64 = cols[j]
                .iter()
                .zip(x.column(k).iter())
                .map(|(a, b)| a * b)
                .sum();
            info[(j, k)] = v;
            info[(k, j)] = v;
        }
    }
    let mut scale = vec![0.0; q];
    for j in 0..q {
        let d = info[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularInformation(format!(
                "column {j} carries no information"
            )));
        }
        scale[j] = 1.0 / d.sqrt();
    }
    for j in 0..q {
        for k in 0..q {
            info[(j, k)] *= scale[j] * scale[k];
        }
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::SingularInformation("not positive definite".into()))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if min_pivot < MIN_PIVOT {
        return Err(Error::SingularInformation(format!(
            "collinear columns (pivot {min_pivot:.2e})"
        )));
    }
    let rhs = DVector::from_iterator(q, score.iter().zip(&scale).map(|(s, d)| s * d));
    let z = chol.solve(&rhs);
    Ok(z.iter().zip(&scale).map(|(v, d)| v * d).collect())
}
