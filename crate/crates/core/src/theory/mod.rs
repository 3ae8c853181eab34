//! Executable checks of the linear-latent analysis: closed-form inverse
//! dynamics recovery, rotation confounding of behavior cloning, and the
//! decoder burden of explicit forward models.

mod complexity;
mod confounding;
mod recovery;
mod report;

pub use complexity::{verify_fd_complexity, FdComplexityConfig};
pub use confounding::{conditional_action_mean, verify_bc_confounding, BcConfoundingConfig};
pub use recovery::{
    analytic_id, excitation_dataset, latent_alignment, solve_id_closed_form, verify_id_recovery, IdRecoveryConfig,
    IdSolution,
};
pub use report::{Bound, Check, Experiment, TheoryReport};

/// Median of finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
