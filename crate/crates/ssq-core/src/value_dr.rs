//! Off-policy value estimation: the Q-function plug-in, the supervised doubly
//! robust estimator, and the semi-supervised doubly robust estimator with
//! influence-function standard errors.
//!
//! The IPW weights gate on policy concordance:
//! ω₁ = d₁A₁/π₁ + (1−d₁)(1−A₁)/(1−π₁) and
//! ω₂ = ω₁·[d₂A₂/π₂ + (1−d₂)(1−A₂)/(1−π₂)]. Standard errors replace the hard
//! policy indicators inside the weights with the smooth gate σ(x/h) when
//! differentiating with respect to the fitted parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{partition_folds, Cohort, DesignSet};
use crate::error::{Error, Result};
use crate::imputation::{
    crossfit_predict, refit_value, CrossfitTargets, ImputerConfig, ImputerKind, QImputations,
    ValueImputations,
};
use crate::linalg::{dot, Matrix};
use crate::propensity::{influence_xi, PropParams};
use crate::regressors::sigmoid;
use crate::ssq::{influence_ssl_q, influence_sup_q, policy, Method, QParams};

/// Default kernel bandwidth for the smoothed-weight machinery.
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

/// Fitted Q-function and propensity parameters evaluated together.
#[derive(Debug, Clone, Copy)]
pub struct ThetaBundle<'a> {
    pub q: &'a QParams,
    pub prop: &'a PropParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMethod {
    QPlugin,
    SupDr,
    SslDr,
}

impl ValueMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ValueMethod::QPlugin => "q-plugin",
            ValueMethod::SupDr => "sup-dr",
            ValueMethod::SslDr => "ssl-dr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub method: ValueMethod,
    pub estimate: f64,
    pub se: f64,
    pub n_used: usize,
    pub n_unlabeled_used: usize,
    pub bandwidth: f64,
    pub warnings: Vec<String>,
}

/// Q*₁(Ȟ₁;θ₁) = H₁₀ᵀβ₁ + [H₁₁ᵀγ₁]₊ per row.
pub fn q1_star(h10: &Matrix, h11: &Matrix, q: &QParams) -> Vec<f64> {
    (0..h10.rows())
        .map(|i| dot(h10.row(i), q.beta1()) + dot(h11.row(i), q.gamma1()).max(0.0))
        .collect()
}

/// Q*₂₋(H₂;θ₂) = H₂₀ᵀβ₂₂ + [H₂₁ᵀγ₂]₊ per row (the Y₂-free part of Q*₂).
pub fn q2_minus_star(h20: &Matrix, h21: &Matrix, q: &QParams) -> Vec<f64> {
    (0..h20.rows())
        .map(|i| dot(h20.row(i), q.beta22()) + dot(h21.row(i), q.gamma2()).max(0.0))
        .collect()
}

fn check_prob(p: f64, context: &str) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DegeneratePropensity { context: String::from(context), value: p });
    }
    Ok(p)
}

/// Stage-1 IPW weight per row: policy concordance over propensity.
pub fn ipw_w1(design: &DesignSet, bundle: &ThetaBundle<'_>) -> Result<Vec<f64>> {
    let gamma1 = bundle.q.gamma1();
    let mut out = Vec::with_capacity(design.len());
    for i in 0..design.len() {
        let p1 = check_prob(sigmoid(dot(design.prop1.row(i), &bundle.prop.xi1)), "pi1")?;
        let d1 = policy(design.h11.row(i), gamma1);
        let a1 = design.a1[i];
        let w = if d1 { a1 / p1 } else { (1.0 - a1) / (1.0 - p1) };
        out.push(w);
    }
    Ok(out)
}

/// Both IPW weights on rows where Y₂ is available for the stage-2 propensity
/// design (labeled rows, or any rows when the design omits Y₂).
pub fn ipw_weights(
    design: &DesignSet,
    y2: Option<&[f64]>,
    bundle: &ThetaBundle<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w1 = ipw_w1(design, bundle)?;
    let prop2 = design.prop2(bundle.prop.includes_y2, y2)?;
    let gamma2 = bundle.q.gamma2();
    let mut w2 = Vec::with_capacity(design.len());
    for i in 0..design.len() {
        let p2 = check_prob(sigmoid(dot(prop2.row(i), &bundle.prop.xi2)), "pi2")?;
        let d2 = policy(design.h21.row(i), gamma2);
        let a2 = design.a2[i];
        let f = if d2 { a2 / p2 } else { (1.0 - a2) / (1.0 - p2) };
        w2.push(w1[i] * f);
    }
    Ok((w1, w2))
}

/// Plug-in value V̂_Q = mean of Q*₁ rows. The SE is the naive sample-mean
/// standard error and deliberately ignores the estimation of θ̂₁.
pub fn value_q_plugin(q: &QParams, h10: &Matrix, h11: &Matrix) -> ValueEstimate {
    let rows = q1_star(h10, h11, q);
    let n = rows.len();
    let mean = rows.iter().sum::<f64>() / n as f64;
    let var = rows.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    ValueEstimate {
        method: ValueMethod::QPlugin,
        estimate: mean,
        se: libm::sqrt(var / n as f64),
        n_used: n,
        n_unlabeled_used: 0,
        bandwidth: 0.0,
        warnings: vec![String::from(
            "q-plugin SE is the naive sample-mean SE; theta1-estimation noise is ignored",
        )],
    }
}

/// Per-row supervised DR scores Q*₁ + ω₁[Y₂ − {Q*₁ − Q*₂}] + ω₂[Y₃ − Q*₂]
/// on the labeled set.
pub fn sup_dr_rows(cohort: &Cohort, bundle: &ThetaBundle<'_>) -> Result<Vec<f64>> {
    let (w1, w2) = ipw_weights(&cohort.lab, Some(&cohort.y2), bundle)?;
    let q1s = q1_star(&cohort.lab.h10, &cohort.lab.h11, bundle.q);
    let q2m = q2_minus_star(&cohort.lab.h20, &cohort.lab.h21, bundle.q);
    let b21 = bundle.q.beta21();
    Ok((0..cohort.n_labeled())
        .map(|i| {
            let q2opt = cohort.y2[i] * b21 + q2m[i];
            q1s[i]
                + w1[i] * (cohort.y2[i] - (q1s[i] - q2opt))
                + w2[i] * (cohort.y3[i] - q2opt)
        })
        .collect())
}

/// V̂_SUP-DR with its influence-function SE.
pub fn value_sup_dr(cohort: &Cohort, bundle: &ThetaBundle<'_>, h: f64) -> Result<ValueEstimate> {
    let rows = sup_dr_rows(cohort, bundle)?;
    let n = rows.len();
    let estimate = rows.iter().sum::<f64>() / n as f64;
    let se = variance_value(cohort, bundle, None, ValueMethod::SupDr, h)?;
    Ok(ValueEstimate {
        method: ValueMethod::SupDr,
        estimate,
        se,
        n_used: n,
        n_unlabeled_used: 0,
        bandwidth: h,
        warnings: bundle.prop.warnings.clone(),
    })
}

/// Per-row semi-supervised DR scores on the unlabeled set:
/// Q*₁ + ω₁[(1+β̂₂₁)μ̂₂ᵛ − Q*₁ + Q*₂₋] + μ̂₃ω₂ − β̂₂₁μ̂₂ω₂ − Q*₂₋μ̂ω₂.
pub fn ssl_dr_rows(
    cohort: &Cohort,
    bundle: &ThetaBundle<'_>,
    vimp: &ValueImputations,
) -> Result<Vec<f64>> {
    let n_unl = cohort.n_unlabeled();
    if vimp.unl_mu2v.len() != n_unl {
        return Err(Error::MissingImputations(format!(
            "value imputations cover {} rows but the unlabeled set has {n_unl}",
            vimp.unl_mu2v.len()
        )));
    }
    let w1 = ipw_w1(&cohort.unl, bundle)?;
    let q1s = q1_star(&cohort.unl.h10, &cohort.unl.h11, bundle.q);
    let q2m = q2_minus_star(&cohort.unl.h20, &cohort.unl.h21, bundle.q);
    let b21 = bundle.q.beta21();
    Ok((0..n_unl)
        .map(|i| {
            q1s[i]
                + w1[i] * ((1.0 + b21) * vimp.unl_mu2v[i] - q1s[i] + q2m[i])
                + vimp.unl_mu3w2[i]
                - b21 * vimp.unl_mu2w2[i]
                - q2m[i] * vimp.unl_muw2[i]
        })
        .collect())
}

/// V̂_SSL-DR with its sample-split influence SE.
pub fn value_ssl_dr(
    cohort: &Cohort,
    bundle: &ThetaBundle<'_>,
    qimp: &QImputations,
    vimp: &ValueImputations,
    h: f64,
) -> Result<ValueEstimate> {
    let rows = ssl_dr_rows(cohort, bundle, vimp)?;
    let n_unl = rows.len();
    let estimate = rows.iter().sum::<f64>() / n_unl as f64;
    let se = variance_value(cohort, bundle, Some((qimp, vimp)), ValueMethod::SslDr, h)?;
    Ok(ValueEstimate {
        method: ValueMethod::SslDr,
        estimate,
        se,
        n_used: cohort.n_labeled(),
        n_unlabeled_used: n_unl,
        bandwidth: h,
        warnings: bundle.prop.warnings.clone(),
    })
}

/// Cross-fitted imputation of the value-estimation functionals
/// (Y₂, ω₂, ω₂Y₂, ω₂Y₃) given a fitted bundle, including the policy-weight
/// feature columns (ω̃₂, ω̃₂μ̂₂, ω̃₂μ̂₃) that let the imputer track the
/// indicator structure of the weights.
pub fn impute_value(
    cohort: &Cohort,
    folds: &crate::dataset::FoldAssignment,
    cfg: &ImputerConfig,
    bundle: &ThetaBundle<'_>,
    qimp: &QImputations,
) -> Result<ValueImputations> {
    let (w1, w2) = ipw_weights(&cohort.lab, Some(&cohort.y2), bundle)?;
    let q2m_lab = q2_minus_star(&cohort.lab.h20, &cohort.lab.h21, bundle.q);
    let n = cohort.n_labeled();
    let y2 = &cohort.y2;
    let y3 = &cohort.y3;

    // ω̃₂ on unlabeled rows: imputed Y₂ stands in when the π₂ design needs it
    let w2_unl = {
        let y2rep = bundle.prop.includes_y2.then(|| qimp.unl_mu2.clone());
        let (_w1u, w2u) = ipw_weights(&cohort.unl, y2rep.as_deref(), bundle)?;
        w2u
    };
    let pf_lab = Matrix::from_cols(&[
        w2.clone(),
        w2.iter().zip(&qimp.lab_mu2).map(|(a, b)| a * b).collect(),
        w2.iter().zip(&qimp.lab_mu3).map(|(a, b)| a * b).collect(),
    ]);
    let pf_unl = Matrix::from_cols(&[
        w2_unl.clone(),
        w2_unl.iter().zip(&qimp.unl_mu2).map(|(a, b)| a * b).collect(),
        w2_unl.iter().zip(&qimp.unl_mu3).map(|(a, b)| a * b).collect(),
    ]);

    let oracle_unl = if matches!(cfg.kind, ImputerKind::Oracle) {
        let uy2: Option<Vec<f64>> = cohort.unlabeled.iter().map(|(r, _)| r.y2).collect();
        let uy3: Option<Vec<f64>> = cohort.unlabeled.iter().map(|(r, _)| r.y3).collect();
        let (uy2, uy3) = match (uy2, uy3) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::MissingImputations(
                    "oracle value imputer requires outcomes on unlabeled rows".into(),
                ))
            }
        };
        let (_w1t, w2t) = ipw_weights(&cohort.unl, Some(&uy2), bundle)?;
        Some(vec![
            uy2.clone(),
            w2t.clone(),
            w2t.iter().zip(&uy2).map(|(a, b)| a * b).collect(),
            w2t.iter().zip(&uy3).map(|(a, b)| a * b).collect(),
        ])
    } else {
        None
    };

    let targets = CrossfitTargets {
        names: vec!["v2".into(), "v_w2".into(), "v_2w2".into(), "v_3w2".into()],
        lab: vec![
            y2.clone(),
            w2.clone(),
            w2.iter().zip(y2).map(|(a, b)| a * b).collect(),
            w2.iter().zip(y3).map(|(a, b)| a * b).collect(),
        ],
        oracle_unl,
    };
    let fit = crossfit_predict(
        &cohort.lab.u,
        &cohort.unl.u,
        Some(&pf_lab),
        Some(&pf_unl),
        &cohort.u_treatment_cols,
        &targets,
        folds,
        cfg,
    )?;
    debug_assert_eq!(fit.lab.len(), 4);
    refit_value(
        cohort,
        &fit,
        &crate::imputation::ValueRefitInputs { w1: &w1, w2: &w2, q2_minus: &q2m_lab },
    )
}

/// Smoothed IPW weights: the policy indicators are replaced by the gate
/// σ(H_{t1}ᵀγ_t / h).
pub fn smoothed_weights(
    h11g: f64,
    h21g: f64,
    pi1: f64,
    pi2: f64,
    a1: f64,
    a2: f64,
    h: f64,
) -> Result<(f64, f64)> {
    if h <= 0.0 {
        return Err(Error::invalid("bandwidth h must be positive"));
    }
    let k1 = sigmoid(h11g / h);
    let k2 = sigmoid(h21g / h);
    let w1 = a1 * k1 / pi1 + (1.0 - a1) * (1.0 - k1) / (1.0 - pi1);
    let w2 = w1 * (a2 * k2 / pi2 + (1.0 - a2) * (1.0 - k2) / (1.0 - pi2));
    Ok((w1, w2))
}

/// Per-row pieces shared by the smoothed value and its derivatives.
struct SmoothRow<'a> {
    h10: &'a [f64],
    h11: &'a [f64],
    h20: &'a [f64],
    h21: &'a [f64],
    prop1: &'a [f64],
    prop2: &'a [f64],
    a1: f64,
    a2: f64,
    y2: f64,
    y3: f64,
}

struct SmoothEval {
    value: f64,
    d_theta: Vec<f64>,
    d_xi: Vec<f64>,
}

/// Smoothed per-row V_SUP-DR and its exact gradient in (θ, ξ). The hinge
/// terms inside Q* keep their almost-everywhere derivatives
/// H_{t1}·I(H_{t1}ᵀγ_t > 0); only the weight gates are smoothed.
fn smooth_eval(row: &SmoothRow<'_>, q: &QParams, xi1: &[f64], xi2: &[f64], h: f64) -> SmoothEval {
    let p1 = sigmoid(dot(row.prop1, xi1));
    let p2 = sigmoid(dot(row.prop2, xi2));
    let g1h = dot(row.h11, q.gamma1());
    let g2h = dot(row.h21, q.gamma2());
    let k1 = sigmoid(g1h / h);
    let k2 = sigmoid(g2h / h);
    let wf1 = row.a1 * k1 / p1 + (1.0 - row.a1) * (1.0 - k1) / (1.0 - p1);
    let wf2 = row.a2 * k2 / p2 + (1.0 - row.a2) * (1.0 - k2) / (1.0 - p2);
    let wt1 = wf1;
    let wt2 = wf1 * wf2;
    let q1s = dot(row.h10, q.beta1()) + g1h.max(0.0);
    let q2m = dot(row.h20, q.beta22()) + g2h.max(0.0);
    let q2o = row.y2 * q.beta21() + q2m;
    let value = q1s + wt1 * (row.y2 - q1s + q2o) + wt2 * (row.y3 - q2o);

    let d10 = q.d_h10;
    let d11 = q.d_h11;
    let d20 = q.d_h20;
    let p_theta1 = d10 + d11;
    let p_theta = p_theta1 + q.theta2.len();
    let i1 = f64::from(g1h > 0.0);
    let i2 = f64::from(g2h > 0.0);

    // assemble dV/dtheta slot by slot
    let mut d_theta = vec![0.0; p_theta];
    let bracket1 = row.y2 - q1s + q2o;
    let bracket2 = row.y3 - q2o;
    let dk1 = k1 * (1.0 - k1) / h;
    let dk2 = k2 * (1.0 - k2) / h;
    let dwf1_scale = dk1 * (row.a1 / p1 - (1.0 - row.a1) / (1.0 - p1));
    let dwf2_scale = dk2 * (row.a2 / p2 - (1.0 - row.a2) / (1.0 - p2));
    // beta1 slots: dq1 = h10, appearing as (1 - wt1) dq1
    for (j, &v) in row.h10.iter().enumerate() {
        d_theta[j] += (1.0 - wt1) * v;
    }
    // gamma1 slots: hinge derivative of q1s plus the gate derivative of wt1/wt2
    for (j, &v) in row.h11.iter().enumerate() {
        let dq1 = v * i1;
        let dwt1 = v * dwf1_scale;
        d_theta[d10 + j] += (1.0 - wt1) * dq1 + dwt1 * bracket1 + dwt1 * wf2 * bracket2;
    }
    // beta21 slot: dq2o = y2
    d_theta[p_theta1] += (wt1 - wt2) * row.y2;
    // beta22 slots: dq2o = h20
    for (j, &v) in row.h20.iter().enumerate() {
        d_theta[p_theta1 + 1 + j] += (wt1 - wt2) * v;
    }
    // gamma2 slots: hinge derivative of q2m plus the stage-2 gate derivative
    for (j, &v) in row.h21.iter().enumerate() {
        let dq2 = v * i2;
        let dwf2 = v * dwf2_scale;
        d_theta[p_theta1 + 1 + d20 + j] += (wt1 - wt2) * dq2 + wt1 * dwf2 * bracket2;
    }

    // dV/dxi via the smooth-gate version of the varpi terms
    let mut d_xi = vec![0.0; xi1.len() + xi2.len()];
    let varpi1_scale =
        -row.a1 * k1 * (1.0 - p1) / p1 + (1.0 - row.a1) * (1.0 - k1) * p1 / (1.0 - p1);
    let varpi2_scale =
        -row.a2 * k2 * (1.0 - p2) / p2 + (1.0 - row.a2) * (1.0 - k2) * p2 / (1.0 - p2);
    for (j, &v) in row.prop1.iter().enumerate() {
        let dwt1 = v * varpi1_scale;
        d_xi[j] = dwt1 * bracket1 + dwt1 * wf2 * bracket2;
    }
    for (j, &v) in row.prop2.iter().enumerate() {
        d_xi[xi1.len() + j] = wt1 * v * varpi2_scale * bracket2;
    }
    SmoothEval { value, d_theta, d_xi }
}

/// Smoothed per-row value for one labeled row (used by gradient checks).
pub fn smoothed_value_row(cohort: &Cohort, i: usize, bundle: &ThetaBundle<'_>, h: f64) -> Result<f64> {
    let prop2 = cohort.lab.prop2(bundle.prop.includes_y2, Some(&cohort.y2))?;
    let row = SmoothRow {
        h10: cohort.lab.h10.row(i),
        h11: cohort.lab.h11.row(i),
        h20: cohort.lab.h20.row(i),
        h21: cohort.lab.h21.row(i),
        prop1: cohort.lab.prop1.row(i),
        prop2: prop2.row(i),
        a1: cohort.lab.a1[i],
        a2: cohort.lab.a2[i],
        y2: cohort.y2[i],
        y3: cohort.y3[i],
    };
    Ok(smooth_eval(&row, bundle.q, &bundle.prop.xi1, &bundle.prop.xi2, h).value)
}

/// Analytic gradient of the smoothed per-row value for one labeled row:
/// `(d/dθ, d/dξ)` stacked as (β₁, γ₁, β₂₁, β₂₂, γ₂) and (ξ₁, ξ₂).
pub fn value_derivatives(
    cohort: &Cohort,
    i: usize,
    bundle: &ThetaBundle<'_>,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if h <= 0.0 {
        return Err(Error::invalid("bandwidth h must be positive"));
    }
    let prop2 = cohort.lab.prop2(bundle.prop.includes_y2, Some(&cohort.y2))?;
    let row = SmoothRow {
        h10: cohort.lab.h10.row(i),
        h11: cohort.lab.h11.row(i),
        h20: cohort.lab.h20.row(i),
        h21: cohort.lab.h21.row(i),
        prop1: cohort.lab.prop1.row(i),
        prop2: prop2.row(i),
        a1: cohort.lab.a1[i],
        a2: cohort.lab.a2[i],
        y2: cohort.y2[i],
        y3: cohort.y3[i],
    };
    let eval = smooth_eval(&row, bundle.q, &bundle.prop.xi1, &bundle.prop.xi2, h);
    Ok((eval.d_theta, eval.d_xi))
}

/// Labeled-sample averages of the smoothed per-row derivatives: the plug-in
/// for ∂/∂Θ ∫ V_SUP-DR dP.
fn derivative_means(cohort: &Cohort, bundle: &ThetaBundle<'_>, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cohort.n_labeled();
    let prop2 = cohort.lab.prop2(bundle.prop.includes_y2, Some(&cohort.y2))?;
    let p_theta = bundle.q.theta1.len() + bundle.q.theta2.len();
    let p_xi = bundle.prop.xi1.len() + bundle.prop.xi2.len();
    let mut d_theta = vec![0.0; p_theta];
    let mut d_xi = vec![0.0; p_xi];
    for i in 0..n {
        let row = SmoothRow {
            h10: cohort.lab.h10.row(i),
            h11: cohort.lab.h11.row(i),
            h20: cohort.lab.h20.row(i),
            h21: cohort.lab.h21.row(i),
            prop1: cohort.lab.prop1.row(i),
            prop2: prop2.row(i),
            a1: cohort.lab.a1[i],
            a2: cohort.lab.a2[i],
            y2: cohort.y2[i],
            y3: cohort.y3[i],
        };
        let eval = smooth_eval(&row, bundle.q, &bundle.prop.xi1, &bundle.prop.xi2, h);
        for (acc, v) in d_theta.iter_mut().zip(&eval.d_theta) {
            *acc += v / n as f64;
        }
        for (acc, v) in d_xi.iter_mut().zip(&eval.d_xi) {
            *acc += v / n as f64;
        }
    }
    Ok((d_theta, d_xi))
}

/// Per-row ψ̂ξ stacked over both stages (Fisher-inverse scores).
fn xi_influence(cohort: &Cohort, prop: &PropParams) -> Result<Matrix> {
    let psi1 = influence_xi(&cohort.lab.prop1, &cohort.lab.a1, &prop.xi1, "xi1 information")?;
    let d2 = cohort.lab.prop2(prop.includes_y2, Some(&cohort.y2))?;
    let psi2 = influence_xi(&d2, &cohort.lab.a2, &prop.xi2, "xi2 information")?;
    Ok(psi1.hcat(&psi2))
}

/// Influence-function SE for the DR value estimators (Remark-4 sample-split
/// mean square). For SSL the leading term is ν̂ built from the per-fold value
/// imputations; for SUP it is the centered per-row score. Both add the
/// parameter-estimation corrections ψ̂θᵀ∂̄θ + ψ̂ξᵀ∂̄ξ with the smoothed
/// derivative averages.
pub fn variance_value(
    cohort: &Cohort,
    bundle: &ThetaBundle<'_>,
    imps: Option<(&QImputations, &ValueImputations)>,
    method: ValueMethod,
    h: f64,
) -> Result<f64> {
    let n = cohort.n_labeled();
    let (d_theta, d_xi) = derivative_means(cohort, bundle, h)?;
    let psi_xi = xi_influence(cohort, bundle.prop)?;
    let (w1, w2) = ipw_weights(&cohort.lab, Some(&cohort.y2), bundle)?;
    let q2m = q2_minus_star(&cohort.lab.h20, &cohort.lab.h21, bundle.q);
    let b21 = bundle.q.beta21();
    let mut sum_sq = 0.0;
    match method {
        ValueMethod::SslDr => {
            let (qimp, vimp) = imps.ok_or_else(|| {
                Error::MissingImputations("ssl-dr variance needs imputations".into())
            })?;
            let infl = influence_ssl_q(cohort, bundle.q, qimp)?;
            let psi_theta = infl.theta_influence()?;
            for i in 0..n {
                let nu = w1[i] * (1.0 + b21) * (cohort.y2[i] - vimp.lab_mu2v[i])
                    + w2[i] * cohort.y3[i]
                    - vimp.lab_mu3w2[i]
                    - b21 * (w2[i] * cohort.y2[i] - vimp.lab_mu2w2[i])
                    - q2m[i] * (w2[i] - vimp.lab_muw2[i]);
                let corr = dot(psi_theta.row(i), &d_theta) + dot(psi_xi.row(i), &d_xi);
                let psi_v = nu + corr;
                sum_sq += psi_v * psi_v;
            }
        }
        ValueMethod::SupDr => {
            let rows = sup_dr_rows(cohort, bundle)?;
            let mean = rows.iter().sum::<f64>() / n as f64;
            let infl = influence_sup_q(cohort, bundle.q)?;
            let psi_theta = infl.theta_influence()?;
            for i in 0..n {
                let corr = dot(psi_theta.row(i), &d_theta) + dot(psi_xi.row(i), &d_xi);
                let psi_v = rows[i] - mean + corr;
                sum_sq += psi_v * psi_v;
            }
        }
        ValueMethod::QPlugin => {
            return Err(Error::invalid("variance_value applies to the DR estimators"));
        }
    }
    Ok(libm::sqrt(sum_sq / n as f64 / n as f64))
}

/// Cross-validated value estimation: the full pipeline (θ, ξ, imputations) is
/// refit on each fold complement and the held-out fold supplies both the
/// evaluation rows (SUP-DR) or the honest refit rows (SSL-DR) and the pooled
/// influence values for the SE.
pub struct CvSettings {
    pub method: ValueMethod,
    pub imputer: ImputerConfig,
    pub h: f64,
    pub seed: u64,
}

pub fn crossvalidated_value(
    cohort: &Cohort,
    k: usize,
    settings: &CvSettings,
) -> Result<(ValueEstimate, Vec<f64>)> {
    let n = cohort.n_labeled();
    let folds = partition_folds(n, k, settings.seed)?;
    let mut fold_estimates = Vec::with_capacity(k);
    let mut pooled_sq = 0.0;
    for fold in 0..k {
        let train_idx = folds.complement_indices(fold);
        let test_idx = folds.fold_indices(fold);
        if train_idx.len() < 4 {
            return Err(Error::FoldTooSmall { fold, size: train_idx.len() });
        }
        let train = cohort.with_labeled_subset(&train_idx);
        let heldout = cohort.with_labeled_subset(&test_idx);
        let prop = crate::propensity::fit_all(&train)?;
        match settings.method {
            ValueMethod::SupDr => {
                let q = crate::ssq::fit_supervised_q(&train)?;
                let bundle = ThetaBundle { q: &q, prop: &prop };
                let rows = sup_dr_rows(&heldout, &bundle)?;
                let est = rows.iter().sum::<f64>() / rows.len() as f64;
                fold_estimates.push(est);
                for r in rows {
                    pooled_sq += (r - est) * (r - est);
                }
            }
            ValueMethod::SslDr => {
                let (est, nu_sq) =
                    cv_ssl_fold(cohort, &train, &heldout, &prop, &folds, settings)?;
                fold_estimates.push(est);
                pooled_sq += nu_sq;
            }
            ValueMethod::QPlugin => {
                let q = crate::ssq::fit_supervised_q(&train)?;
                let est = value_q_plugin(&q, &heldout.lab.h10, &heldout.lab.h11).estimate;
                fold_estimates.push(est);
            }
        }
    }
    let estimate = fold_estimates.iter().sum::<f64>() / k as f64;
    let se = libm::sqrt(pooled_sq / n as f64 / n as f64);
    Ok((
        ValueEstimate {
            method: settings.method,
            estimate,
            se,
            n_used: n,
            n_unlabeled_used: cohort.n_unlabeled(),
            bandwidth: settings.h,
            warnings: Vec::new(),
        },
        fold_estimates,
    ))
}

/// One SSL-DR CV fold: the whole pipeline is refit on the fold complement;
/// the held-out fold supplies the honest value-refit rows and the pooled
/// influence values. Returns the fold estimate and the sum of squared
/// held-out ν values.
fn cv_ssl_fold(
    cohort: &Cohort,
    train: &Cohort,
    heldout: &Cohort,
    prop: &PropParams,
    outer: &crate::dataset::FoldAssignment,
    settings: &CvSettings,
) -> Result<(f64, f64)> {
    let inner_k = outer.k_folds.clamp(2, train.n_labeled() / 2);
    let inner = partition_folds(train.n_labeled(), inner_k, settings.seed ^ 0xCF)?;
    let qimp = crate::imputation::impute_q(train, &inner, &settings.imputer)?;
    let q = crate::ssq::fit_ssl_q(train, &qimp)?;
    let bundle = ThetaBundle { q: &q, prop };

    if matches!(settings.imputer.kind, ImputerKind::Oracle) {
        // oracle backend: imputations are the true targets everywhere
        let vimp = impute_value(train, &inner, &settings.imputer, &bundle, &qimp)?;
        let rows = ssl_dr_rows(train, &bundle, &vimp)?;
        let est = rows.iter().sum::<f64>() / rows.len() as f64;
        return Ok((est, 0.0));
    }

    // train-wide y2/y3 imputer models give mu2/mu3 on held-out rows (with the
    // inner-crossfit refit offsets applied), so policy features share one
    // definition across train, held-out, and unlabeled rows
    let names = vec![String::from("m2"), String::from("m3")];
    let outcome_models = crate::imputation::fit_imputer_models(
        &train.lab.u,
        None,
        &train.u_treatment_cols,
        &names,
        &[train.y2.clone(), train.y3.clone()],
        &settings.imputer,
        0xA0,
    )?;
    let mu_at = |cohort_part: &DesignSet, xbar_off: &Matrix, x2_off: &Matrix| -> (Vec<f64>, Vec<f64>) {
        let preds = outcome_models.predict(&cohort_part.u, None);
        let off2 = xbar_off.matvec(&qimp.eta2);
        let off3 = x2_off.matvec(&qimp.eta3);
        (
            preds[0].iter().zip(&off2).map(|(a, b)| a + b).collect(),
            preds[1].iter().zip(&off3).map(|(a, b)| a + b).collect(),
        )
    };
    let (mu2_tr, mu3_tr) = mu_at(&train.lab, &train.lab.xbar, &train.lab.x2);
    let (mu2_ho, mu3_ho) = mu_at(&heldout.lab, &heldout.lab.xbar, &heldout.lab.x2);
    let (mu2_un, mu3_un) = mu_at(&cohort.unl, &cohort.unl.xbar, &cohort.unl.x2);

    let (w1_tr, w2_tr) = ipw_weights(&train.lab, Some(&train.y2), &bundle)?;
    let (w1_ho, w2_ho) = ipw_weights(&heldout.lab, Some(&heldout.y2), &bundle)?;
    let w2_un = {
        let y2rep = bundle.prop.includes_y2.then(|| mu2_un.clone());
        let (_w1u, w2u) = ipw_weights(&cohort.unl, y2rep.as_deref(), &bundle)?;
        w2u
    };
    let pf = |w2: &[f64], mu2: &[f64], mu3: &[f64]| {
        Matrix::from_cols(&[
            w2.to_vec(),
            w2.iter().zip(mu2).map(|(a, b)| a * b).collect(),
            w2.iter().zip(mu3).map(|(a, b)| a * b).collect(),
        ])
    };
    let vt_names = vec![
        String::from("v2"),
        String::from("v_w2"),
        String::from("v_2w2"),
        String::from("v_3w2"),
    ];
    let vt_targets = vec![
        train.y2.clone(),
        w2_tr.clone(),
        w2_tr.iter().zip(&train.y2).map(|(a, b)| a * b).collect(),
        w2_tr.iter().zip(&train.y3).map(|(a, b)| a * b).collect(),
    ];
    let value_models = crate::imputation::fit_imputer_models(
        &train.lab.u,
        Some(&pf(&w2_tr, &mu2_tr, &mu3_tr)),
        &train.u_treatment_cols,
        &vt_names,
        &vt_targets,
        &settings.imputer,
        0xB0,
    )?;
    let m_ho = value_models.predict(&heldout.lab.u, Some(&pf(&w2_ho, &mu2_ho, &mu3_ho)));
    let m_un = value_models.predict(&cohort.unl.u, Some(&pf(&w2_un, &mu2_un, &mu3_un)));

    // held-out refit: the held-out fold plays the cross-fitting role
    let q2m_ho = q2_minus_star(&heldout.lab.h20, &heldout.lab.h21, bundle.q);
    let n_ho = heldout.n_labeled() as f64;
    let sum_w1: f64 = w1_ho.iter().sum();
    if sum_w1.abs() < 1e-10 {
        return Err(Error::DegenerateWeight { context: "cv eta2v".into(), sum: sum_w1 });
    }
    let eta2v = w1_ho
        .iter()
        .zip(&heldout.y2)
        .zip(&m_ho[0])
        .map(|((w, y), m)| w * (y - m))
        .sum::<f64>()
        / sum_w1;
    let sum_q: f64 = q2m_ho.iter().sum();
    if sum_q.abs() < 1e-10 {
        return Err(Error::DegenerateWeight { context: "cv eta_w2v".into(), sum: sum_q });
    }
    let eta_w2v = q2m_ho
        .iter()
        .zip(&w2_ho)
        .zip(&m_ho[1])
        .map(|((qv, w), m)| qv * (w - m))
        .sum::<f64>()
        / sum_q;
    let eta_2w2v = w2_ho
        .iter()
        .zip(&heldout.y2)
        .zip(&m_ho[2])
        .map(|((w, y), m)| w * y - m)
        .sum::<f64>()
        / n_ho;
    let eta_3w2v = w2_ho
        .iter()
        .zip(&heldout.y3)
        .zip(&m_ho[3])
        .map(|((w, y), m)| w * y - m)
        .sum::<f64>()
        / n_ho;

    // fold value over the unlabeled sample
    let b21 = bundle.q.beta21();
    let q1s_un = q1_star(&cohort.unl.h10, &cohort.unl.h11, bundle.q);
    let q2m_un = q2_minus_star(&cohort.unl.h20, &cohort.unl.h21, bundle.q);
    let w1_un = ipw_w1(&cohort.unl, &bundle)?;
    let n_un = cohort.n_unlabeled();
    let mut est = 0.0;
    for i in 0..n_un {
        est += q1s_un[i]
            + w1_un[i] * ((1.0 + b21) * (m_un[0][i] + eta2v) - q1s_un[i] + q2m_un[i])
            + (m_un[3][i] + eta_3w2v)
            - b21 * (m_un[2][i] + eta_2w2v)
            - q2m_un[i] * (m_un[1][i] + eta_w2v);
    }
    est /= n_un as f64;

    // pooled held-out influence values
    let mut nu_sq = 0.0;
    for j in 0..heldout.n_labeled() {
        let nu = w1_ho[j] * (1.0 + b21) * (heldout.y2[j] - (m_ho[0][j] + eta2v))
            + w2_ho[j] * heldout.y3[j]
            - (m_ho[3][j] + eta_3w2v)
            - b21 * (w2_ho[j] * heldout.y2[j] - (m_ho[2][j] + eta_2w2v))
            - q2m_ho[j] * (w2_ho[j] - (m_ho[1][j] + eta_w2v));
        nu_sq += nu * nu;
    }
    Ok((est, nu_sq))
}
