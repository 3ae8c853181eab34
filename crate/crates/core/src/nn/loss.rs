use crate::error::{Error, Result};
use crate::linalg::{mul_t, Mat};

/// Mean over batch and coordinates of the squared difference, with its
/// gradient with respect to `pred`.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("mse: pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let diff = pred - target;
    let n = diff.len().max(1) as f64;
    let loss = diff.norm_squared() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("mse loss over {} entries", diff.len())));
    }
    Ok((loss, diff * (2.0 / n)))
}

/// Rows scaled to unit L2 norm, plus the norms used.
pub fn l2_normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let n = x.row(i).norm().max(1e-12);
        out.row_mut(i).scale_mut(1.0 / n);
        norms.push(n);
    }
    (out, norms)
}

/// Backward of row normalization: `dx = (dx̂ − x̂ ⟨x̂, dx̂⟩) / ‖x‖`.
pub fn normalize_rows_backward(xhat: &Mat, norms: &[f64], dxhat: &Mat) -> Mat {
    let mut dx = dxhat.clone();
    for (i, &n) in norms.iter().enumerate() {
        let proj = xhat.row(i).dot(&dxhat.row(i));
        let mut row = dx.row_mut(i);
        row -= xhat.row(i) * proj;
        row /= n;
    }
    dx
}

/// In-batch InfoNCE with unit temperature.
///
/// Rows of both inputs are L2-normalized, `S_ij = ⟨â_i, p̂_j⟩`, and
/// `loss = mean_i [−S_ii + log((1/n) Σ_j exp S_ij)]`. Returns the loss and
/// gradients with respect to the unnormalized inputs.
pub fn infonce_loss(anchor: &Mat, positive: &Mat) -> Result<(f64, Mat, Mat)> {
    if anchor.shape() != positive.shape() {
        return Err(Error::Shape(format!("infonce: {:?} vs {:?}", anchor.shape(), positive.shape())));
    }
    let n = anchor.nrows();
    if n < 2 {
        return Err(Error::InvalidSpec("infonce needs at least two rows for negatives".into()));
    }
    let (a, an) = l2_normalize_rows(anchor);
    let (p, pn) = l2_normalize_rows(positive);
    let s = mul_t(&a, &p);
    let nf = n as f64;
    let mut loss = 0.0;
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        let row = s.row(i);
        let m = row.max();
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += -s[(i, i)] + lse - nf.ln();
        for j in 0..n {
            g[(i, j)] = (s[(i, j)] - lse).exp() / nf;
        }
        g[(i, i)] -= 1.0 / nf;
    }
    loss /= nf;
    if !loss.is_finite() {
        return Err(Error::NonFinite("infonce loss".into()));
    }
    let da_hat = &g * &p;
    let dp_hat = g.transpose() * &a;
    Ok((loss, normalize_rows_backward(&a, &an, &da_hat), normalize_rows_backward(&p, &pn, &dp_hat)))
}
