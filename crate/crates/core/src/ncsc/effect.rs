use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{predict, NcscModel};
use crate::error::{validation, Result};
use crate::linalg::solve_symmetric;
use crate::panel::{fit_spline, Panel};

/// Smallest relevance weight handed to the penalty.
pub const RELEVANCE_FLOOR: f64 = 1e-3;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEffectSeries {
    pub times: Vec<f64>,
    /// `observed - counterfactual`, one row per time.
    pub tau: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    pub counterfactual: Vec<Vec<f64>>,
}

impl TreatmentEffectSeries {
    /// Average effect per channel.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.tau.first().map_or(0, Vec::len);
        let n = self.tau.len() as f64;
        (0..d).map(|c| self.tau.iter().map(|r| r[c]).sum::<f64>() / n).collect()
    }
}

/// Observed treated path minus the NC-SC counterfactual after the treatment time.
///
/// With `times` empty the treated unit's own post-treatment observation times are used;
/// other times read the observed path from the treated unit's spline.
pub fn treatment_effect(model: &NcscModel, panel: &Panel, times: &[f64]) -> Result<TreatmentEffectSeries> {
    let treated = panel.treated();
    let t_treat = panel.treatment_time;
    let times: Vec<f64> =
        if times.is_empty() { treated.times.iter().copied().filter(|&t| t > t_treat).collect() } else { times.to_vec() };
    if times.is_empty() {
        return Err(validation("the treated unit has no post-treatment observations"));
    }
    if let Some(t) = times.iter().find(|&&t| !(t > t_treat)) {
        return Err(validation(format!("effect time {t} is not after the treatment time {t_treat}")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("effect times must be strictly ascending"));
    }
    if treated.times.last().is_none_or(|&last| last <= t_treat) {
        return Err(validation("the treated unit has no post-treatment observations"));
    }
    let spline = fit_spline(treated)?;
    let d = panel.dims;
    let observed = times.iter().map(|&t| Ok(spline.eval(t)?[..d].to_vec())).collect::<Result<Vec<_>>>()?;
    let counterfactual = predict(model, panel, &times)?;
    let tau = observed.iter().zip(&counterfactual).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a - b).collect()).collect();
    Ok(TreatmentEffectSeries { times, tau, observed, counterfactual })
}

/// Least-squares coefficients of the treated unit's static covariates on the
/// controls', mapped to `max(|p_i|, RELEVANCE_FLOOR)`.
///
/// `x` has one row per unit (treated first) and one column per covariate.
/// A singular control Gram matrix falls back to a `1e-8` ridge.
pub fn covariate_relevance_weights(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() == 0 {
        return Err(validation("no covariates supplied"));
    }
    if x.nrows() < 2 {
        return Err(validation("covariates need a treated row and at least one control row"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(validation("covariates must be finite"));
    }
    let controls = x.rows(1, x.nrows() - 1).into_owned();
    let target = DVector::from_iterator(x.ncols(), x.row(0).iter().copied());
    let gram = &controls * controls.transpose();
    let rhs = &controls * target;
    let (p, regularised) = solve_symmetric(&gram, &rhs, RIDGE)?;
    if regularised {
        log::warn!("control covariate matrix is singular; used a ridge of {RIDGE}");
    }
    Ok(p.iter().map(|v| v.abs().max(RELEVANCE_FLOOR)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_controls_give_a_unit_vector() {
        // Controls are the standard basis of R^3; the treated row copies control 2.
        let x = DMatrix::from_row_slice(4, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = covariate_relevance_weights(&x).unwrap();
        assert!((p[1] - 1.0).abs() <= 1e-12);
        assert_eq!(p[0], RELEVANCE_FLOOR);
        assert_eq!(p[2], RELEVANCE_FLOOR);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(5, 9, |_, _| rng.random_range(-1.0..1.0));
        let p = covariate_relevance_weights(&x).unwrap();

        // Independent oracle: QR least squares of x_1 on the control rows.
        let a = x.rows(1, 4).transpose();
        let b = DVector::from_iterator(9, x.row(0).iter().copied());
        let qr = a.clone().qr();
        let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).unwrap();
        for (got, want) in p.iter().zip(coef.iter()) {
            assert!((got - want.abs().max(RELEVANCE_FLOOR)).abs() <= 1e-8);
        }
    }

    #[test]
    fn singular_controls_use_the_ridge() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
        let p = covariate_relevance_weights(&x).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && *v >= RELEVANCE_FLOOR));
        assert!(covariate_relevance_weights(&DMatrix::zeros(3, 0)).is_err());
    }
}
