//! Regression backends: least squares, Newton–Raphson logistic MLE, and the
//! truncated-power cubic spline basis.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_linear, Matrix};

/// Logistic σ(x) = 1 / (1 + e^{-x}).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    /// designᵀ·design / n.
    pub gram: Matrix,
    pub n_used: usize,
}

/// Solves the normal equations `(DᵀD) coef = Dᵀy` with a strict solve; a
/// singular Gram is an error.
pub fn ols_fit(design: &Matrix, y: &[f64], context: &str) -> Result<LinearFit> {
    if design.rows() != y.len() {
        return Err(Error::invalid("ols_fit: row/target length mismatch"));
    }
    let n = design.rows();
    let gram = design.gram(n as f64);
    let rhs: Vec<f64> = design.t_matvec(y).iter().map(|v| v / n as f64).collect();
    let coef = solve_linear(&gram, &rhs, context)?;
    Ok(LinearFit { coef, gram, n_used: n })
}

/// Newton–Raphson logistic MLE.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// ‖designᵀ(a − σ(design·coef))‖∞ at the returned coefficients.
    pub final_score_norm: f64,
}

/// Coefficient norm beyond which the fit is declared separated.
const SEPARATION_BOUND: f64 = 50.0;

fn log_likelihood(design: &Matrix, a: &[f64], coef: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        let eta = dot(design.row(i), coef);
        // log σ(η) = -log(1+e^{-η}); log(1-σ(η)) = -η - log(1+e^{-η})
        let log1p_exp = if eta > 30.0 { eta } else { libm::log1p(libm::exp(eta)) };
        ll += ai * eta - log1p_exp;
    }
    ll
}

/// Maximum likelihood for `P(A=1|x) = σ(xᵀξ)` with step-halving when a Newton
/// step decreases the likelihood. Converged means the score max-norm fell
/// below `tol`.
pub fn logistic_fit(
    design: &Matrix,
    a: &[f64],
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<LogisticFit> {
    let n = design.rows();
    if n != a.len() {
        return Err(Error::invalid("logistic_fit: row/response length mismatch"));
    }
    let ones = a.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::OneClass { context: String::from(context) });
    }
    let p = design.cols();
    let mut coef = vec![0.0; p];
    let mut ll = log_likelihood(design, a, &coef);
    let mut score_norm = f64::INFINITY;
    for iter in 0..max_iter {
        let probs: Vec<f64> = (0..n).map(|i| sigmoid(dot(design.row(i), &coef))).collect();
        let resid: Vec<f64> = a.iter().zip(&probs).map(|(ai, pi)| ai - pi).collect();
        let score = design.t_matvec(&resid);
        score_norm = score.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if score_norm <= tol {
            return Ok(LogisticFit { coef, converged: true, iterations: iter, final_score_norm: score_norm });
        }
        let w: Vec<f64> = probs.iter().map(|&pi| pi * (1.0 - pi)).collect();
        let hessian = design.scale_rows(&w).t_mul(design, 1.0);
        let step = solve_linear(&hessian, &score, context)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + scale * s).collect();
            let trial_ll = log_likelihood(design, a, &trial);
            if trial_ll >= ll - 1e-12 {
                coef = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let norm = libm::sqrt(dot(&coef, &coef));
        if norm > SEPARATION_BOUND {
            return Err(Error::Separation { context: String::from(context), norm });
        }
    }
    if score_norm <= tol {
        Ok(LogisticFit { coef, converged: true, iterations: max_iter, final_score_norm: score_norm })
    } else {
        let norm = libm::sqrt(dot(&coef, &coef));
        if norm > SEPARATION_BOUND / 2.0 {
            return Err(Error::Separation { context: String::from(context), norm });
        }
        Ok(LogisticFit { coef, converged: false, iterations: max_iter, final_score_norm: score_norm })
    }
}

/// Empirical Fisher information `Dᵀ W D / n` at `coef`, W = σ(1−σ).
pub fn logistic_fisher(design: &Matrix, coef: &[f64]) -> Matrix {
    let n = design.rows();
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let p = sigmoid(dot(design.row(i), coef));
            p * (1.0 - p)
        })
        .collect();
    design.scale_rows(&w).t_mul(design, n as f64)
}

/// Truncated-power cubic spline columns for one input vector:
/// `{x, x², x³, (x−k₁)₊³, (x−k₂)₊³}` with `k₁ < k₂`. The model-level
/// intercept is added once by the caller.
pub fn spline_basis(x: &[f64], knots: (f64, f64)) -> Result<Matrix> {
    let (k1, k2) = knots;
    if !k1.is_finite() || !k2.is_finite() || k1 >= k2 {
        return Err(Error::invalid("spline knots must be finite with knot1 < knot2"));
    }
    let mut m = Matrix::zeros(x.len(), 5);
    for (i, &v) in x.iter().enumerate() {
        let r = m.row_mut(i);
        r[0] = v;
        r[1] = v * v;
        r[2] = v * v * v;
        let t1 = (v - k1).max(0.0);
        let t2 = (v - k2).max(0.0);
        r[3] = t1 * t1 * t1;
        r[4] = t2 * t2 * t2;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::Rng;

    #[test]
    fn ols_intercept_only_is_mean() {
        let d = Matrix::from_cols(&[vec![1.0, 1.0, 1.0]]);
        let fit = ols_fit(&d, &[1.0, 2.0, 3.0], "test").unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ols_zero_target_gives_zero_coef() {
        let d = Matrix::from_cols(&[vec![1.0; 4], vec![0.3, -1.0, 2.0, 0.7]]);
        let fit = ols_fit(&d, &[0.0; 4], "test").unwrap();
        assert!(fit.coef.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let mut rng = Rng::stream(11, 0);
        let n = 50;
        let beta = [1.5, -2.0, 0.25];
        let mut d = Matrix::zeros(n, 3);
        let mut y = vec![0.0; n];
        for i in 0..n {
            d.set(i, 0, 1.0);
            d.set(i, 1, rng.standard_normal());
            d.set(i, 2, rng.standard_normal());
            y[i] = dot(d.row(i), &beta);
        }
        let fit = ols_fit(&d, &y, "test").unwrap();
        for (c, b) in fit.coef.iter().zip(&beta) {
            assert!((c - b).abs() < 1e-8, "{c} vs {b}");
        }
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let mut rng = Rng::stream(12, 0);
        let n = 80;
        let mut d = Matrix::zeros(n, 3);
        let mut y = vec![0.0; n];
        for i in 0..n {
            d.set(i, 0, 1.0);
            d.set(i, 1, rng.standard_normal());
            d.set(i, 2, rng.uniform());
            y[i] = rng.standard_normal() * 2.0 + 1.0;
        }
        let fit = ols_fit(&d, &y, "test").unwrap();
        let fitted = d.matvec(&fit.coef);
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for v in d.t_matvec(&resid) {
            assert!(v.abs() / scale < 1e-8);
        }
    }

    #[test]
    fn logistic_intercept_only_balanced() {
        let d = Matrix::from_cols(&[vec![1.0; 4]]);
        let fit = logistic_fit(&d, &[0.0, 1.0, 0.0, 1.0], 1e-10, 100, "test").unwrap();
        assert!(fit.coef[0].abs() < 1e-9);
        assert!(fit.converged);
    }

    #[test]
    fn logistic_intercept_only_three_quarters() {
        let d = Matrix::from_cols(&[vec![1.0; 8]]);
        let a = [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let fit = logistic_fit(&d, &a, 1e-10, 100, "test").unwrap();
        assert!((fit.coef[0] - libm::log(3.0)).abs() < 1e-8);
    }

    #[test]
    fn logistic_recovers_simulated_coefficients() {
        // generator coefficients match the simulation's stage-1 propensity
        let truth = [0.3, -0.5];
        let mut rng = Rng::stream(13, 0);
        let n = 2000;
        let mut d = Matrix::zeros(n, 2);
        let mut a = vec![0.0; n];
        for i in 0..n {
            let o = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            d.set(i, 0, 1.0);
            d.set(i, 1, o);
            a[i] = f64::from(rng.bernoulli(sigmoid(truth[0] + truth[1] * o)));
        }
        let fit = logistic_fit(&d, &a, 1e-8, 100, "test").unwrap();
        assert!(fit.final_score_norm <= 1e-8);
        let fisher = logistic_fisher(&d, &fit.coef);
        let cov = solve_linear(&fisher, &[1.0, 0.0], "test").unwrap();
        let se0 = libm::sqrt(cov[0] / n as f64);
        let cov1 = solve_linear(&fisher, &[0.0, 1.0], "test").unwrap();
        let se1 = libm::sqrt(cov1[1] / n as f64);
        assert!((fit.coef[0] - truth[0]).abs() < 3.0 * se0);
        assert!((fit.coef[1] - truth[1]).abs() < 3.0 * se1);
    }

    #[test]
    fn logistic_score_identity_at_fit() {
        let mut rng = Rng::stream(14, 0);
        let n = 300;
        let mut d = Matrix::zeros(n, 3);
        let mut a = vec![0.0; n];
        for i in 0..n {
            d.set(i, 0, 1.0);
            d.set(i, 1, rng.standard_normal());
            d.set(i, 2, rng.standard_normal());
            a[i] = f64::from(rng.bernoulli(sigmoid(0.2 * d.get(i, 1) - 0.4 * d.get(i, 2))));
        }
        let fit = logistic_fit(&d, &a, 1e-9, 100, "test").unwrap();
        let resid: Vec<f64> = (0..n).map(|i| a[i] - sigmoid(dot(d.row(i), &fit.coef))).collect();
        for s in d.t_matvec(&resid) {
            assert!(s.abs() <= 1e-8);
        }
        // Fisher information symmetric positive definite at the fit
        let fisher = logistic_fisher(&d, &fit.coef);
        assert!(fisher.is_symmetric(1e-12));
        for i in 0..3 {
            assert!(fisher.get(i, i) > 0.0);
        }
    }

    #[test]
    fn logistic_separation_detected() {
        let n = 60;
        let mut rng = Rng::stream(15, 0);
        let mut d = Matrix::zeros(n, 2);
        let mut a = vec![0.0; n];
        for i in 0..n {
            let o = rng.standard_normal();
            d.set(i, 0, 1.0);
            d.set(i, 1, o);
            a[i] = f64::from(o > 0.0);
        }
        match logistic_fit(&d, &a, 1e-9, 200, "stage 1") {
            Err(Error::Separation { .. }) => {}
            other => panic!("expected separation error, got {other:?}"),
        }
    }

    #[test]
    fn logistic_one_class_rejected() {
        let d = Matrix::from_cols(&[vec![1.0; 5]]);
        match logistic_fit(&d, &[1.0; 5], 1e-8, 50, "stage 2") {
            Err(Error::OneClass { .. }) => {}
            other => panic!("expected one-class error, got {other:?}"),
        }
    }

    #[test]
    fn spline_vanishes_at_zero() {
        let m = spline_basis(&[0.0], (1.0, 2.0)).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn spline_direct_evaluation() {
        let m = spline_basis(&[3.0], (1.0, 2.0)).unwrap();
        assert_eq!(m.row(0), &[3.0, 9.0, 27.0, 8.0, 1.0]);
    }

    #[test]
    fn spline_degenerate_knots_rejected() {
        assert!(spline_basis(&[0.0], (1.0, 1.0)).is_err());
        assert!(spline_basis(&[0.0], (2.0, 1.0)).is_err());
    }

    #[test]
    fn truncated_power_terms_smooth_at_knots() {
        // finite-difference second derivative from both sides of each knot
        let knots = (0.7, 1.9);
        let f = |x: f64, col: usize| spline_basis(&[x], knots).unwrap().get(0, col);
        for col in 3..5 {
            let k = if col == 3 { knots.0 } else { knots.1 };
            for h in [1e-2, 1e-3] {
                let d2 = |x: f64| (f(x + h, col) - 2.0 * f(x, col) + f(x - h, col)) / (h * h);
                // value and first derivative continuous: one-sided slopes agree
                let left = (f(k, col) - f(k - h, col)) / h;
                let right = (f(k + h, col) - f(k, col)) / h;
                assert!((left - right).abs() <= 3.0 * h + 1e-9, "first derivative jump");
                // second derivative continuous: fd estimate shrinks with h near k
                assert!(d2(k - 2.0 * h).abs() <= 1e-9);
                assert!(d2(k + 2.0 * h) <= 30.0 * h, "d2 {:.3e}", d2(k + 2.0 * h));
            }
        }
    }
}
