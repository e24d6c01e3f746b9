//! Stage-wise logistic propensity models π_t(Ȟ_t; ξ_t) = σ(Ȟ_tᵀξ_t), fitted
//! by maximum likelihood on labeled data.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_matrix, Matrix};
use crate::regressors::{logistic_fisher, logistic_fit, sigmoid, LogisticFit};

pub const NEWTON_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 100;

/// Fitted probabilities this close to {0,1} trigger a positivity warning.
const POSITIVITY_GUARD: f64 = 1e-3;

/// Fitted propensity coefficients with per-stage diagnostics.
#[derive(Debug, Clone)]
pub struct PropParams {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    /// Whether the stage-2 design conditions on Y₂ (then π₂ is evaluable on
    /// labeled rows only).
    pub includes_y2: bool,
    pub iterations: (usize, usize),
    pub score_norms: (f64, f64),
    pub warnings: Vec<String>,
}

fn positivity_scan(design: &Matrix, coef: &[f64], stage: usize, warnings: &mut Vec<String>) {
    let mut extreme = 0usize;
    for i in 0..design.rows() {
        let p = sigmoid(dot(design.row(i), coef));
        if p < POSITIVITY_GUARD || p > 1.0 - POSITIVITY_GUARD {
            extreme += 1;
        }
    }
    if extreme > 0 {
        warnings.push(format!(
            "positivity: {extreme} labeled rows have stage-{stage} fitted propensity within {POSITIVITY_GUARD:.0e} of 0/1"
        ));
    }
}

/// Logistic MLE of A_t on the configured stage design. Stage 2 prepends Y₂
/// when the basis config says the design conditions on it.
pub fn fit_propensity(cohort: &Cohort, stage: u8) -> Result<LogisticFit> {
    match stage {
        1 => logistic_fit(&cohort.lab.prop1, &cohort.lab.a1, NEWTON_TOL, NEWTON_MAX_ITER, "stage-1 propensity"),
        2 => {
            let design =
                cohort.lab.prop2(cohort.config.prop2_includes_y2, Some(&cohort.y2))?;
            logistic_fit(&design, &cohort.lab.a2, NEWTON_TOL, NEWTON_MAX_ITER, "stage-2 propensity")
        }
        _ => Err(Error::invalid("stage must be 1 or 2")),
    }
}

/// Fits both stages and runs positivity surveillance on the labeled fits.
pub fn fit_all(cohort: &Cohort) -> Result<PropParams> {
    let f1 = fit_propensity(cohort, 1)?;
    let f2 = fit_propensity(cohort, 2)?;
    let mut warnings = Vec::new();
    positivity_scan(&cohort.lab.prop1, &f1.coef, 1, &mut warnings);
    let d2 = cohort.lab.prop2(cohort.config.prop2_includes_y2, Some(&cohort.y2))?;
    positivity_scan(&d2, &f2.coef, 2, &mut warnings);
    Ok(PropParams {
        xi1: f1.coef,
        xi2: f2.coef,
        includes_y2: cohort.config.prop2_includes_y2,
        iterations: (f1.iterations, f2.iterations),
        score_norms: (f1.final_score_norm, f2.final_score_norm),
        warnings,
    })
}

/// σ(ȟᵀξ).
pub fn predict_propensity(xi: &[f64], h_check: &[f64]) -> f64 {
    sigmoid(dot(h_check, xi))
}

/// Per-row influence of ξ̂_t: Fisher⁻¹ · Ȟ_t (A_t − σ(Ȟ_tᵀξ̂_t)), returned as
/// an n×p matrix for the stage.
pub fn influence_xi(design: &Matrix, a: &[f64], xi: &[f64], context: &str) -> Result<Matrix> {
    let n = design.rows();
    let fisher = logistic_fisher(design, xi);
    let mut score_rows = Matrix::zeros(n, design.cols());
    for i in 0..n {
        let resid = a[i] - sigmoid(dot(design.row(i), xi));
        for (j, v) in design.row(i).iter().enumerate() {
            score_rows.set(i, j, resid * v);
        }
    }
    // influence rows solve Fisher ψᵀ = scoreᵀ
    let mut rhs = Matrix::zeros(design.cols(), n);
    for i in 0..n {
        for j in 0..design.cols() {
            rhs.set(j, i, score_rows.get(i, j));
        }
    }
    let sol = solve_matrix(&fisher, &rhs, context)?;
    let mut out = Matrix::zeros(n, design.cols());
    for i in 0..n {
        for j in 0..design.cols() {
            out.set(i, j, sol.get(j, i));
        }
    }
    Ok(out)
}
