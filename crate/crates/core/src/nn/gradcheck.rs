use rand::Rng;

use crate::linalg::Mat;

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Denominator floor: below this magnitude both gradients count as zero and
/// the comparison becomes absolute.
const FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic` against central differences of `loss` at up to
/// `max_per_tensor` randomly chosen coordinates of each parameter tensor
/// (all coordinates when the tensor is small enough). Returns the largest
/// relative error seen.
pub fn check_gradients(
    params: &mut [Mat],
    analytic: &[Mat],
    mut loss: impl FnMut(&[Mat]) -> f64,
    max_per_tensor: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..params.len() {
        let len = params[t].len();
        let coords: Vec<usize> = if len <= max_per_tensor {
            (0..len).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for c in coords {
            let orig = params[t].as_slice()[c];
            params[t].as_mut_slice()[c] = orig + GRADCHECK_STEP;
            let up = loss(params);
            params[t].as_mut_slice()[c] = orig - GRADCHECK_STEP;
            let down = loss(params);
            params[t].as_mut_slice()[c] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            worst = worst.max(relative_error(analytic[t].as_slice()[c], numeric));
        }
    }
    worst
}
