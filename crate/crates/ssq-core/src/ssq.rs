//! Supervised and semi-supervised two-stage Q-learning: parameter fitting,
//! policy extraction, influence functions, and sandwich variance estimates.
//!
//! Working models: Q₁(Ȟ₁,A₁;θ₁) = X̌₁ᵀθ₁ and
//! Q₂(Ȟ₂,A₂;θ₂) = Y₂β₂₁ + H₂₀ᵀβ₂₂ + A₂(H₂₁ᵀγ₂), with X̌₂ = (Y₂, X₂ᵀ)ᵀ.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::imputation::QImputations;
use crate::linalg::{dot, solve_linear, solve_matrix, Matrix};
use crate::regressors::ols_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sup,
    Ssl,
}

/// Fitted Q-function coefficients. `theta2` is laid out as
/// (β₂₁ | β₂₂ over H₂₀ | γ₂ over H₂₁): the first coordinate multiplies Y₂.
#[derive(Debug, Clone)]
pub struct QParams {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub method: Method,
    pub d_h10: usize,
    pub d_h11: usize,
    pub d_h20: usize,
    pub d_h21: usize,
}

impl QParams {
    pub fn beta1(&self) -> &[f64] {
        &self.theta1[..self.d_h10]
    }

    pub fn gamma1(&self) -> &[f64] {
        &self.theta1[self.d_h10..]
    }

    pub fn beta21(&self) -> f64 {
        self.theta2[0]
    }

    pub fn beta22(&self) -> &[f64] {
        &self.theta2[1..1 + self.d_h20]
    }

    pub fn gamma2(&self) -> &[f64] {
        &self.theta2[1 + self.d_h20..]
    }

    /// Concatenated (θ₁ᵀ, θ₂ᵀ)ᵀ.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.theta1.clone();
        v.extend_from_slice(&self.theta2);
        v
    }
}

/// Treatment rule d_t(H_t; θ_t) = I(H_t1ᵀγ_t > 0); exact ties go to action 0.
pub fn policy(h_t1: &[f64], gamma_t: &[f64]) -> bool {
    dot(h_t1, gamma_t) > 0.0
}

fn dims(cohort: &Cohort) -> (usize, usize, usize, usize) {
    (
        cohort.lab.h10.cols(),
        cohort.lab.h11.cols(),
        cohort.lab.h20.cols(),
        cohort.lab.h21.cols(),
    )
}

/// Pseudo-outcome Y₂(1+β₂₁) + H₂₀ᵀβ₂₂ + [H₂₁ᵀγ₂]₊ with Y₂ replaced by `y2rep`
/// (observed outcomes in the supervised fit, imputations in the SSL fit).
fn pseudo_outcome(
    y2rep: &[f64],
    h20: &Matrix,
    h21: &Matrix,
    params2: &[f64],
    d_h20: usize,
) -> Vec<f64> {
    let beta21 = params2[0];
    let beta22 = &params2[1..1 + d_h20];
    let gamma2 = &params2[1 + d_h20..];
    (0..h20.rows())
        .map(|i| {
            y2rep[i] * (1.0 + beta21)
                + dot(h20.row(i), beta22)
                + dot(h21.row(i), gamma2).max(0.0)
        })
        .collect()
}

/// Traditional Q-learning on labeled data: θ̂₂ from OLS of Y₃ on X̌₂, then
/// θ̂₁ from OLS of the pseudo-outcome on X₁.
pub fn fit_supervised_q(cohort: &Cohort) -> Result<QParams> {
    let (d_h10, d_h11, d_h20, d_h21) = dims(cohort);
    let fit2 = ols_fit(&cohort.xcheck2, &cohort.y3, "stage-2 gram (xcheck2)")?;
    let ystar = pseudo_outcome(&cohort.y2, &cohort.lab.h20, &cohort.lab.h21, &fit2.coef, d_h20);
    let fit1 = ols_fit(&cohort.lab.x1, &ystar, "stage-1 gram (x1)")?;
    Ok(QParams {
        theta1: fit1.coef,
        theta2: fit2.coef,
        method: Method::Sup,
        d_h10,
        d_h11,
        d_h20,
        d_h21,
    })
}

/// Semi-supervised Q-learning (projection step): solves the imputed stage-2
/// normal equations over the unlabeled sample,
/// `P_N [[μ̂₂₂, μ̂₂X₂ᵀ], [μ̂₂X₂, X₂X₂ᵀ]] θ₂ = P_N [μ̂₂₃; X₂μ̂₃]`,
/// forms the imputed pseudo-outcome, and regresses it on X₁ over the
/// unlabeled sample.
pub fn fit_ssl_q(cohort: &Cohort, imp: &QImputations) -> Result<QParams> {
    let n_unl = cohort.n_unlabeled();
    if n_unl == 0 {
        return Err(Error::invalid("SSL fit needs a non-empty unlabeled set"));
    }
    let (d_h10, d_h11, d_h20, d_h21) = dims(cohort);
    let x2 = &cohort.unl.x2;
    let p2 = x2.cols();
    let scale = n_unl as f64;
    let mut a = Matrix::zeros(1 + p2, 1 + p2);
    let mut b = vec![0.0; 1 + p2];
    a.set(0, 0, imp.unl_mu22.iter().sum::<f64>() / scale);
    let mu2x2 = x2.scale_rows(&imp.unl_mu2).t_matvec(&vec![1.0; n_unl]);
    for j in 0..p2 {
        a.set(0, 1 + j, mu2x2[j] / scale);
        a.set(1 + j, 0, mu2x2[j] / scale);
    }
    let gram = x2.gram(scale);
    for i in 0..p2 {
        for j in 0..p2 {
            a.set(1 + i, 1 + j, gram.get(i, j));
        }
    }
    b[0] = imp.unl_mu23.iter().sum::<f64>() / scale;
    let x2mu3 = x2.t_matvec(&imp.unl_mu3);
    for j in 0..p2 {
        b[1 + j] = x2mu3[j] / scale;
    }
    let theta2 = solve_linear(&a, &b, "SSL stage-2 imputed system")?;
    let ytilde = pseudo_outcome(&imp.unl_mu2, &cohort.unl.h20, &cohort.unl.h21, &theta2, d_h20);
    let fit1 = ols_fit(&cohort.unl.x1, &ytilde, "SSL stage-1 gram (unlabeled x1)")?;
    Ok(QParams {
        theta1: fit1.coef,
        theta2,
        method: Method::Ssl,
        d_h10,
        d_h11,
        d_h20,
        d_h21,
    })
}

/// Per-row influence contributions ψ₁, ψ₂ (before the Σ⁻¹ mapping).
#[derive(Debug, Clone)]
pub struct QInfluence {
    pub psi1: Matrix,
    pub psi2: Matrix,
    /// Σ̂₁ = Pₙ[X₁X₁ᵀ] and Σ̂₂ = Pₙ[X̌₂X̌₂ᵀ] on labeled rows.
    pub sigma1: Matrix,
    pub sigma2: Matrix,
}

impl QInfluence {
    /// Per-row influence of θ̂ = (θ̂₁, θ̂₂): rows of [Σ̂₁⁻¹ψ₁ | Σ̂₂⁻¹ψ₂].
    pub fn theta_influence(&self) -> Result<Matrix> {
        let i1 = solve_rows(&self.sigma1, &self.psi1, "sigma1 in theta influence")?;
        let i2 = solve_rows(&self.sigma2, &self.psi2, "sigma2 in theta influence")?;
        Ok(i1.hcat(&i2))
    }
}

/// Applies `sigma⁻¹` to each row of `rows` (rows are ψᵢᵀ).
fn solve_rows(sigma: &Matrix, rows: &Matrix, context: &str) -> Result<Matrix> {
    let p = sigma.rows();
    let n = rows.rows();
    let mut rhs = Matrix::zeros(p, n);
    for i in 0..n {
        for j in 0..p {
            rhs.set(j, i, rows.get(i, j));
        }
    }
    let sol = solve_matrix(sigma, &rhs, context)?;
    let mut out = Matrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            out.set(i, j, sol.get(j, i));
        }
    }
    Ok(out)
}

/// ψ₂ rows for the SSL estimator: the first coordinate is
/// {Y₂Y₃−μ̂₂₃} − β̂₂₁{Y₂²−μ̂₂₂} − Q₂₋(H₂,A₂;θ̂₂){Y₂−μ̂₂}; the X₂ block is
/// X₂[{Y₃−μ̂₃} − β̂₂₁{Y₂−μ̂₂}]. Imputation values are the per-fold predictions
/// plus the global refit offsets.
fn psi2_ssl(cohort: &Cohort, params: &QParams, imp: &QImputations) -> Matrix {
    let n = cohort.n_labeled();
    let p2 = cohort.lab.x2.cols();
    let beta21 = params.beta21();
    let theta2_minus = &params.theta2[1..];
    let mut out = Matrix::zeros(n, 1 + p2);
    for i in 0..n {
        let y2 = cohort.y2[i];
        let y3 = cohort.y3[i];
        let x2 = cohort.lab.x2.row(i);
        let q2m_obs = dot(x2, theta2_minus);
        let d2 = y2 - imp.lab_mu2[i];
        let d3 = y3 - imp.lab_mu3[i];
        let first = (y2 * y3 - imp.lab_mu23[i]) - beta21 * (y2 * y2 - imp.lab_mu22[i])
            - q2m_obs * d2;
        let row = out.row_mut(i);
        row[0] = first;
        let rest = d3 - beta21 * d2;
        for (j, &xv) in x2.iter().enumerate() {
            row[1 + j] = xv * rest;
        }
    }
    out
}

/// Moment matrices for the ψ₁ mapping, estimated on the unlabeled sample with
/// Y₂ replaced by μ̂₂ (licensed by the refit constraint E[X̄(Y₂−μ̄₂)] = 0):
/// M_β = Ê[X₁(μ̂₂, H₂₀ᵀ)] and M_γ = Ê[X₁H₂₁ᵀ·I(H₂₁ᵀγ̂₂ > 0)].
fn psi1_moments(
    x1: &Matrix,
    h20: &Matrix,
    h21: &Matrix,
    mu2: &[f64],
    gamma2: &[f64],
) -> (Matrix, Matrix) {
    let n = x1.rows() as f64;
    let p1 = x1.cols();
    let mut m_beta = Matrix::zeros(p1, 1 + h20.cols());
    let mut m_gamma = Matrix::zeros(p1, h21.cols());
    for i in 0..x1.rows() {
        let x1r = x1.row(i);
        let act = f64::from(policy(h21.row(i), gamma2));
        for (a, &xv) in x1r.iter().enumerate() {
            m_beta.set(a, 0, m_beta.get(a, 0) + xv * mu2[i]);
            for (b, &hv) in h20.row(i).iter().enumerate() {
                m_beta.set(a, 1 + b, m_beta.get(a, 1 + b) + xv * hv);
            }
            if act > 0.0 {
                for (b, &hv) in h21.row(i).iter().enumerate() {
                    m_gamma.set(a, b, m_gamma.get(a, b) + xv * hv);
                }
            }
        }
    }
    for v in 0..p1 {
        for j in 0..m_beta.cols() {
            m_beta.set(v, j, m_beta.get(v, j) / n);
        }
        for j in 0..m_gamma.cols() {
            m_gamma.set(v, j, m_gamma.get(v, j) / n);
        }
    }
    (m_beta, m_gamma)
}

/// Builds ψ₁ rows from the leading term plus the mapped stage-2 influence:
/// ψ₁ = X₁(1+β̂₂₁){Y₂−μ̂₂} + M_β·[Σ̂₂⁻¹ψ₂]_β + M_γ·[Σ̂₂⁻¹ψ₂]_γ.
fn psi1_from_parts(
    x1_lab: &Matrix,
    resid2: &[f64],
    beta21: f64,
    infl2: &Matrix,
    m_beta: &Matrix,
    m_gamma: &Matrix,
    d_h20: usize,
) -> Matrix {
    let n = x1_lab.rows();
    let p1 = x1_lab.cols();
    let mut out = Matrix::zeros(n, p1);
    for i in 0..n {
        let lead = (1.0 + beta21) * resid2[i];
        let infl_row = infl2.row(i);
        let beta_block = &infl_row[..1 + d_h20];
        let gamma_block = &infl_row[1 + d_h20..];
        let row = out.row_mut(i);
        for (a, &xv) in x1_lab.row(i).iter().enumerate() {
            let mut v = xv * lead;
            v += dot(m_beta.row(a), beta_block);
            v += dot(m_gamma.row(a), gamma_block);
            row[a] = v;
        }
    }
    out
}

/// Influence contributions for the SSL estimator (Remark-3 sample-split form).
pub fn influence_ssl_q(cohort: &Cohort, params: &QParams, imp: &QImputations) -> Result<QInfluence> {
    let n = cohort.n_labeled();
    let psi2 = psi2_ssl(cohort, params, imp);
    let sigma1 = cohort.lab.x1.gram(n as f64);
    let sigma2 = cohort.xcheck2.gram(n as f64);
    let infl2 = solve_rows(&sigma2, &psi2, "sigma2 in psi1 mapping")?;
    let (m_beta, m_gamma) = psi1_moments(
        &cohort.unl.x1,
        &cohort.unl.h20,
        &cohort.unl.h21,
        &imp.unl_mu2,
        params.gamma2(),
    );
    let resid2: Vec<f64> = cohort.y2.iter().zip(&imp.lab_mu2).map(|(y, m)| y - m).collect();
    let psi1 = psi1_from_parts(
        &cohort.lab.x1,
        &resid2,
        params.beta21(),
        &infl2,
        &m_beta,
        &m_gamma,
        cohort.lab.h20.cols(),
    );
    Ok(QInfluence { psi1, psi2, sigma1, sigma2 })
}

/// Influence contributions for the supervised estimator:
/// ψ₂ = X̌₂(Y₃ − X̌₂ᵀθ̂₂) and ψ₁ built from the pseudo-outcome residual plus
/// the mapped stage-2 influence with labeled-sample moments.
pub fn influence_sup_q(cohort: &Cohort, params: &QParams) -> Result<QInfluence> {
    let n = cohort.n_labeled();
    let p2c = cohort.xcheck2.cols();
    let mut psi2 = Matrix::zeros(n, p2c);
    for i in 0..n {
        let xc = cohort.xcheck2.row(i);
        let resid = cohort.y3[i] - dot(xc, &params.theta2);
        for (j, &v) in xc.iter().enumerate() {
            psi2.set(i, j, v * resid);
        }
    }
    let sigma1 = cohort.lab.x1.gram(n as f64);
    let sigma2 = cohort.xcheck2.gram(n as f64);
    let infl2 = solve_rows(&sigma2, &psi2, "sigma2 in sup psi1 mapping")?;
    let (m_beta, m_gamma) = psi1_moments(
        &cohort.lab.x1,
        &cohort.lab.h20,
        &cohort.lab.h21,
        &cohort.y2,
        params.gamma2(),
    );
    let ystar = pseudo_outcome(
        &cohort.y2,
        &cohort.lab.h20,
        &cohort.lab.h21,
        &params.theta2,
        cohort.lab.h20.cols(),
    );
    let mut psi1 = Matrix::zeros(n, cohort.lab.x1.cols());
    let d_h20 = cohort.lab.h20.cols();
    for i in 0..n {
        let resid = ystar[i] - dot(cohort.lab.x1.row(i), &params.theta1);
        let infl_row = infl2.row(i);
        let beta_block = &infl_row[..1 + d_h20];
        let gamma_block = &infl_row[1 + d_h20..];
        let row = psi1.row_mut(i);
        for (a, &xv) in cohort.lab.x1.row(i).iter().enumerate() {
            row[a] = xv * resid + dot(m_beta.row(a), beta_block) + dot(m_gamma.row(a), gamma_block);
        }
    }
    Ok(QInfluence { psi1, psi2, sigma1, sigma2 })
}

/// Sandwich variance V̂ = Σ̂⁻¹ Â (Σ̂⁻¹)ᵀ with Â = n⁻¹Σᵢ ψ̂ᵢψ̂ᵢᵀ, plus
/// per-coefficient standard errors √(diag(V̂)/n).
#[derive(Debug, Clone)]
pub struct QVariance {
    pub cov1: Matrix,
    pub cov2: Matrix,
    pub ase1: Vec<f64>,
    pub ase2: Vec<f64>,
}

fn sandwich(sigma: &Matrix, psi: &Matrix, context: &str) -> Result<Matrix> {
    let n = psi.rows() as f64;
    let a_hat = psi.gram(n);
    let tmp = solve_matrix(sigma, &a_hat, context)?;
    // V = Sigma^{-1} A Sigma^{-T}: solve again on the transpose
    let mut tmp_t = Matrix::zeros(tmp.cols(), tmp.rows());
    for i in 0..tmp.rows() {
        for j in 0..tmp.cols() {
            tmp_t.set(j, i, tmp.get(i, j));
        }
    }
    let v = solve_matrix(sigma, &tmp_t, context)?;
    // symmetrize against roundoff
    let mut out = Matrix::zeros(v.rows(), v.cols());
    for i in 0..v.rows() {
        for j in 0..v.cols() {
            out.set(i, j, 0.5 * (v.get(i, j) + v.get(j, i)));
        }
    }
    Ok(out)
}

pub fn variance_from_influence(cohort: &Cohort, infl: &QInfluence) -> Result<QVariance> {
    let n = cohort.n_labeled() as f64;
    let cov1 = sandwich(&infl.sigma1, &infl.psi1, "sigma1 sandwich")?;
    let cov2 = sandwich(&infl.sigma2, &infl.psi2, "sigma2 sandwich")?;
    let ase1 = cov1.diag().iter().map(|v| libm::sqrt(v.max(0.0) / n)).collect();
    let ase2 = cov2.diag().iter().map(|v| libm::sqrt(v.max(0.0) / n)).collect();
    Ok(QVariance { cov1, cov2, ase1, ase2 })
}

/// Sample-split sandwich variance for the SSL fit (cross-fitted ψ values with
/// the global refit offsets).
pub fn variance_ssl_q(cohort: &Cohort, params: &QParams, imp: &QImputations) -> Result<QVariance> {
    let infl = influence_ssl_q(cohort, params, imp)?;
    variance_from_influence(cohort, &infl)
}

pub fn variance_sup_q(cohort: &Cohort, params: &QParams) -> Result<QVariance> {
    let infl = influence_sup_q(cohort, params)?;
    variance_from_influence(cohort, &infl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition_folds, BasisConfig, BlockSpec, ObservationRecord, Term, Var};
    use crate::imputation::{impute_q, ImputerConfig};
    use crate::random::Rng;
    use crate::regressors::sigmoid;

    fn continuous_config() -> BasisConfig {
        BasisConfig {
            h10: BlockSpec { intercept: true, terms: vec![Term::var(Var::O1(0))] },
            h11: BlockSpec { intercept: true, terms: vec![Term::var(Var::O1(0))] },
            h20: BlockSpec {
                intercept: true,
                terms: vec![
                    Term::var(Var::O1(0)),
                    Term::var(Var::A1),
                    Term::product(&[Var::O1(0), Var::A1]),
                    Term::var(Var::O2(0)),
                ],
            },
            h21: BlockSpec {
                intercept: true,
                terms: vec![Term::var(Var::A1), Term::var(Var::O2(0))],
            },
            prop1: BlockSpec { intercept: true, terms: vec![Term::var(Var::O1(0))] },
            prop2: BlockSpec {
                intercept: true,
                terms: vec![
                    Term::var(Var::O1(0)),
                    Term::var(Var::A1),
                    Term::product(&[Var::O1(0), Var::A1]),
                    Term::var(Var::O2(0)),
                ],
            },
            prop2_includes_y2: false,
            transforms: vec![],
            imputer_columns: None,
        }
    }

    /// Exact linear model generator: Y₂ and Y₃ carry no noise when `noise=0`.
    fn gen(n: usize, seed: u64, noise: f64, labeled: bool) -> Vec<ObservationRecord> {
        let theta1 = [1.0, 1.0, 1.0, -2.0];
        let theta2 = [0.1, 3.0, 0.0, 0.1, -0.5, -0.5, 1.0, 0.25, 0.5];
        let mut rng = Rng::stream(seed, 0);
        let mut out = Vec::new();
        for _ in 0..n {
            let o1 = f64::from(rng.bernoulli(0.5));
            let a1 = u8::from(rng.bernoulli(sigmoid(0.3 - 0.5 * o1)));
            let x1 = [1.0, o1, a1 as f64, a1 as f64 * o1];
            let y2 = dot(&x1, &theta1) + noise * rng.standard_normal();
            let o2 = 0.5 - 0.75 * o1 + 0.25 * a1 as f64 + noise * rng.standard_normal();
            let a2 = u8::from(rng.bernoulli(0.5));
            let h20 = [1.0, o1, a1 as f64, o1 * a1 as f64, o2];
            let h21 = [1.0, a1 as f64, o2];
            let m3 = y2 * theta2[0]
                + dot(&h20, &theta2[1..6])
                + a2 as f64 * dot(&h21, &theta2[6..]);
            let y3 = m3 + noise * rng.standard_normal();
            out.push(ObservationRecord {
                o1: vec![o1],
                a1,
                w1: vec![libm::floor(y2)],
                o2: vec![o2],
                a2,
                w2: vec![libm::floor(y3)],
                y2: labeled.then_some(y2),
                y3: labeled.then_some(y3),
            });
        }
        out
    }

    fn duplicated_cohort(n: usize, seed: u64, noise: f64) -> Cohort {
        let records = gen(n, seed, noise, true);
        let mut cohort = Cohort::assemble(records, continuous_config()).unwrap();
        cohort.unlabeled = cohort.labeled.clone();
        cohort.unl = cohort.lab.clone();
        cohort
    }

    #[test]
    fn noiseless_data_identifies_generator() {
        let records = gen(400, 31, 0.0, true);
        let cohort = Cohort::assemble(records, continuous_config()).unwrap();
        let fit = fit_supervised_q(&cohort).unwrap();
        let truth2 = [0.1, 3.0, 0.0, 0.1, -0.5, -0.5, 1.0, 0.25, 0.5];
        for (c, t) in fit.theta2.iter().zip(&truth2) {
            assert!((c - t).abs() < 1e-8, "theta2 {c} vs {t}");
        }
        // noiseless pseudo-outcome is exactly linear in X1 only when the hinge
        // is active/inactive consistently; with O2 deterministic the stage-1
        // regression still recovers a fixed target; re-fitting must be stable
        let fit_again = fit_supervised_q(&cohort).unwrap();
        assert_eq!(fit.theta1, fit_again.theta1);
    }

    #[test]
    fn policy_examples() {
        assert!(policy(&[1.0, 0.0], &[1.0, -2.0]));
        assert!(!policy(&[1.0, 1.0], &[1.0, -2.0]));
        // exact tie goes to action 0
        assert!(!policy(&[2.0, 1.0], &[1.0, -2.0]));
    }

    #[test]
    fn argmax_invariant_to_positive_scaling() {
        let mut rng = Rng::stream(32, 0);
        for _ in 0..200 {
            let h = [1.0, rng.standard_normal(), rng.standard_normal()];
            let g = [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()];
            let c = rng.uniform_range(0.1, 10.0);
            let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
            assert_eq!(policy(&h, &g), policy(&h, &scaled));
        }
    }

    #[test]
    fn ssl_equals_sup_with_oracle_imputer() {
        let cohort = duplicated_cohort(120, 33, 1.0);
        let folds = partition_folds(120, 5, 3).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::oracle()).unwrap();
        let sup = fit_supervised_q(&cohort).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        for (a, b) in sup.theta2.iter().zip(&ssl.theta2) {
            assert!((a - b).abs() < 1e-8, "theta2 {a} vs {b}");
        }
        for (a, b) in sup.theta1.iter().zip(&ssl.theta1) {
            assert!((a - b).abs() < 1e-8, "theta1 {a} vs {b}");
        }
    }

    #[test]
    fn ssl_block_diagonal_hand_system() {
        // mu2 ≡ 0, mu22 ≡ 1, mu23 ≡ 0 ⇒ beta21 = 0 and theta2- solves the
        // plain least squares of mu3 on X2 (block-diagonal system).
        let cohort = duplicated_cohort(60, 34, 1.0);
        let n_unl = cohort.n_unlabeled();
        let mut rng = Rng::stream(35, 0);
        let mu3: Vec<f64> = (0..n_unl).map(|_| rng.standard_normal()).collect();
        let imp = QImputations {
            eta2: vec![],
            eta3: vec![],
            eta22: 0.0,
            eta23: 0.0,
            lab_mu2: vec![0.0; cohort.n_labeled()],
            lab_mu3: vec![0.0; cohort.n_labeled()],
            lab_mu22: vec![1.0; cohort.n_labeled()],
            lab_mu23: vec![0.0; cohort.n_labeled()],
            unl_mu2: vec![0.0; n_unl],
            unl_mu3: mu3.clone(),
            unl_mu22: vec![1.0; n_unl],
            unl_mu23: vec![0.0; n_unl],
        };
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        assert!(ssl.beta21().abs() < 1e-10, "beta21 {}", ssl.beta21());
        let direct = ols_fit(&cohort.unl.x2, &mu3, "test").unwrap();
        for (a, b) in ssl.theta2[1..].iter().zip(&direct.coef) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pseudo_outcome_hinge_identity() {
        let cohort = duplicated_cohort(80, 36, 1.0);
        let folds = partition_folds(80, 4, 1).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::oracle()).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        let ytilde = pseudo_outcome(
            &imp.unl_mu2,
            &cohort.unl.h20,
            &cohort.unl.h21,
            &ssl.theta2,
            cohort.unl.h20.cols(),
        );
        for i in 0..cohort.n_unlabeled() {
            let base = imp.unl_mu2[i] * (1.0 + ssl.beta21())
                + dot(cohort.unl.h20.row(i), ssl.beta22());
            let gap = dot(cohort.unl.h21.row(i), ssl.gamma2());
            assert!(ytilde[i] >= base - 1e-12);
            if gap <= 0.0 {
                assert!((ytilde[i] - base).abs() < 1e-12);
            } else {
                assert!(ytilde[i] > base);
            }
        }
    }

    #[test]
    fn residual_free_data_gives_zero_psi2_and_variance() {
        // exact linear model, oracle imputations: psi2 vanishes row-wise
        let cohort = duplicated_cohort(50, 37, 0.0);
        let folds = partition_folds(50, 5, 2).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::oracle()).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        let infl = influence_ssl_q(&cohort, &ssl, &imp).unwrap();
        for i in 0..cohort.n_labeled() {
            for v in infl.psi2.row(i) {
                assert!(v.abs() < 1e-7, "psi2 entry {v}");
            }
        }
        let var = variance_ssl_q(&cohort, &ssl, &imp).unwrap();
        for a in &var.ase2 {
            assert!(*a < 1e-7);
        }
    }

    #[test]
    fn oracle_psi2_reduces_to_supervised_form() {
        // with oracle imputations the first coordinate collapses to
        // Y2*(Y3 − X̌₂ᵀθ̂₂): checked numerically row by row
        let cohort = duplicated_cohort(40, 38, 1.0);
        let folds = partition_folds(40, 4, 4).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::oracle()).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        let infl = influence_ssl_q(&cohort, &ssl, &imp).unwrap();
        for i in 0..5 {
            let y2 = cohort.y2[i];
            let y3 = cohort.y3[i];
            let xc = cohort.xcheck2.row(i);
            let resid = y3 - dot(xc, &ssl.theta2);
            assert!((infl.psi2.get(i, 0) - y2 * resid).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_psi_is_centered() {
        let cohort = duplicated_cohort(150, 39, 1.0);
        let folds = partition_folds(150, 5, 5).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::basis_expansion(1)).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        let infl = influence_ssl_q(&cohort, &ssl, &imp).unwrap();
        let n = cohort.n_labeled() as f64;
        for j in 0..infl.psi2.cols() {
            let mean: f64 = (0..infl.psi2.rows()).map(|i| infl.psi2.get(i, j)).sum::<f64>() / n;
            // refit identities make the psi2 mean exactly zero up to roundoff
            assert!(mean.abs() < 1e-8, "psi2 col {j} mean {mean}");
        }
        for j in 0..infl.psi1.cols() {
            let mean: f64 = (0..infl.psi1.rows()).map(|i| infl.psi1.get(i, j)).sum::<f64>() / n;
            assert!(mean.abs() < 5.0 / libm::sqrt(n), "psi1 col {j} mean {mean}");
        }
    }

    #[test]
    fn variance_matrices_symmetric_psd_and_deterministic() {
        let cohort = duplicated_cohort(100, 40, 1.0);
        let folds = partition_folds(100, 5, 6).unwrap();
        let imp = impute_q(&cohort, &folds, &ImputerConfig::basis_expansion(2)).unwrap();
        let ssl = fit_ssl_q(&cohort, &imp).unwrap();
        let a = variance_ssl_q(&cohort, &ssl, &imp).unwrap();
        let b = variance_ssl_q(&cohort, &ssl, &imp).unwrap();
        assert_eq!(a.cov1, b.cov1);
        assert!(a.cov1.is_symmetric(1e-9));
        assert!(a.cov2.is_symmetric(1e-9));
        for v in a.cov1.diag().iter().chain(a.cov2.diag().iter()) {
            assert!(*v >= -1e-10);
        }
        for s in a.ase1.iter().chain(&a.ase2) {
            assert!(*s > 0.0, "ASE must be positive on noisy data");
        }
    }
}
