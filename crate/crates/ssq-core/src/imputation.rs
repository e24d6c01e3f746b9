//! Cross-fitted imputation of outcome functionals with refitting offsets.
//!
//! Step I fits flexible imputers per fold-complement; Step II solves the
//! refitting equations so the empirical moment constraints hold exactly on
//! the labeled set; the closing formulas combine the K-fold average with the
//! refit offset for every unlabeled row.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Cohort, FoldAssignment};
use crate::error::{Error, Result};
use crate::forest::{forest_fit, forest_predict, ForestConfig};
use crate::linalg::{solve_least_squares, Matrix};
use crate::regressors::spline_basis;

/// Imputation backend.
#[derive(Debug, Clone)]
pub enum ImputerKind {
    /// Truncated-power cubic splines per continuous column (knots at the
    /// 33%/67% training quantiles, inputs clamped to the training range),
    /// discrete columns linear, optional treatment-interaction columns.
    BasisExpansion { interactions: bool },
    Forest(ForestConfig),
    /// Returns the supplied true targets; test-only backend.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct ImputerConfig {
    pub kind: ImputerKind,
    pub seed: u64,
}

impl ImputerConfig {
    pub fn basis_expansion(seed: u64) -> Self {
        ImputerConfig { kind: ImputerKind::BasisExpansion { interactions: true }, seed }
    }

    pub fn forest(n_trees: usize, seed: u64) -> Self {
        ImputerConfig {
            kind: ImputerKind::Forest(ForestConfig { n_trees, seed, ..ForestConfig::default() }),
            seed,
        }
    }

    pub fn oracle() -> Self {
        ImputerConfig { kind: ImputerKind::Oracle, seed: 0 }
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

#[derive(Debug, Clone)]
enum ColumnPlan {
    Raw,
    Spline { lo: f64, hi: f64, k1: f64, k2: f64 },
}

/// Featurization plan learned on a training fold.
#[derive(Debug, Clone)]
pub struct BePlan {
    plans: Vec<ColumnPlan>,
    interact_cols: Vec<usize>,
}

fn be_plan(train: &Matrix, treatment_cols: &[usize], interactions: bool) -> BePlan {
    let mut plans = Vec::with_capacity(train.cols());
    for j in 0..train.cols() {
        let mut col = train.column(j);
        col.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        let mut distinct = 1;
        for w in col.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct <= 5 {
            plans.push(ColumnPlan::Raw);
            continue;
        }
        let k1 = quantile_sorted(&col, 0.33);
        let k2 = quantile_sorted(&col, 0.67);
        if k2 - k1 < 1e-9 {
            plans.push(ColumnPlan::Raw);
            continue;
        }
        plans.push(ColumnPlan::Spline { lo: col[0], hi: col[col.len() - 1], k1, k2 });
    }
    let interact_cols = if interactions { treatment_cols.to_vec() } else { Vec::new() };
    BePlan { plans, interact_cols }
}

/// Builds `[1 | expanded base | treatment interactions | extra]`. Clamping to
/// the training range keeps the cubic terms bounded off the training support,
/// which the refitting step cannot otherwise correct for on unlabeled rows.
fn be_build(plan: &BePlan, base: &Matrix, extra: Option<&Matrix>) -> Matrix {
    let n = base.rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut linear: Vec<Vec<f64>> = Vec::with_capacity(base.cols());
    for (j, cp) in plan.plans.iter().enumerate() {
        let raw = base.column(j);
        match cp {
            ColumnPlan::Raw => {
                cols.push(raw.clone());
                linear.push(raw);
            }
            ColumnPlan::Spline { lo, hi, k1, k2 } => {
                let clamped: Vec<f64> = raw.iter().map(|v| v.clamp(*lo, *hi)).collect();
                let sp = spline_basis(&clamped, (*k1, *k2)).expect("validated knots");
                for c in 0..5 {
                    cols.push(sp.column(c));
                }
                linear.push(clamped);
            }
        }
    }
    for &a in &plan.interact_cols {
        let avals = &linear[a];
        for (j, lin) in linear.iter().enumerate() {
            if j == a {
                continue;
            }
            cols.push(avals.iter().zip(lin).map(|(x, y)| x * y).collect());
        }
    }
    if let Some(extra) = extra {
        for j in 0..extra.cols() {
            cols.push(extra.column(j));
        }
    }
    Matrix::from_cols(&cols)
}

/// Per-functional cross-fitting output.
#[derive(Debug, Clone)]
pub struct CrossfitOutput {
    /// Held-out predictions m̂^{(−k)}(Ūᵢ) for each labeled row.
    pub lab: Vec<Vec<f64>>,
    /// K-fold averaged predictions K⁻¹Σₖ m̂^{(−k)}(Ū) for each unlabeled row.
    pub unl: Vec<Vec<f64>>,
}

/// Targets for one cross-fitting pass. For the oracle backend the unlabeled
/// truths must be supplied explicitly.
pub struct CrossfitTargets {
    pub names: Vec<String>,
    pub lab: Vec<Vec<f64>>,
    pub oracle_unl: Option<Vec<Vec<f64>>>,
}

/// Imputer models for a set of targets trained on one sample.
#[derive(Debug, Clone)]
pub enum ImputerFit {
    Be { plan: BePlan, coefs: Vec<Vec<f64>> },
    Forest { models: Vec<crate::forest::Forest> },
}

impl ImputerFit {
    /// Predictions per target on new rows.
    pub fn predict(&self, base: &Matrix, extra: Option<&Matrix>) -> Vec<Vec<f64>> {
        match self {
            ImputerFit::Be { plan, coefs } => {
                let d = be_build(plan, base, extra);
                coefs.iter().map(|c| d.matvec(c)).collect()
            }
            ImputerFit::Forest { models } => {
                let d = match extra {
                    Some(e) => base.hcat(e),
                    None => base.clone(),
                };
                models.iter().map(|m| forest_predict(m, &d)).collect()
            }
        }
    }
}

/// Trains one imputer model per target on the supplied rows. `tag` keeps
/// forest seeds distinct per fold.
pub fn fit_imputer_models(
    base_train: &Matrix,
    extra_train: Option<&Matrix>,
    treatment_cols: &[usize],
    names: &[String],
    targets_train: &[Vec<f64>],
    cfg: &ImputerConfig,
    tag: u64,
) -> Result<ImputerFit> {
    match &cfg.kind {
        ImputerKind::BasisExpansion { interactions } => {
            let plan = be_plan(base_train, treatment_cols, *interactions);
            let d = be_build(&plan, base_train, extra_train);
            let mut coefs = Vec::with_capacity(targets_train.len());
            for (t, y) in targets_train.iter().enumerate() {
                coefs.push(solve_least_squares(
                    &d,
                    y,
                    &format!("imputer design for {}", names[t]),
                )?);
            }
            Ok(ImputerFit::Be { plan, coefs })
        }
        ImputerKind::Forest(fcfg) => {
            let d = match extra_train {
                Some(e) => base_train.hcat(e),
                None => base_train.clone(),
            };
            let mut models = Vec::with_capacity(targets_train.len());
            for (t, y) in targets_train.iter().enumerate() {
                let mut tree_cfg = fcfg.clone();
                tree_cfg.seed = cfg
                    .seed
                    .wrapping_mul(0x9E37_79B9)
                    .wrapping_add(tag << 8)
                    .wrapping_add(t as u64);
                models.push(forest_fit(&d, y, &tree_cfg)?);
            }
            Ok(ImputerFit::Forest { models })
        }
        ImputerKind::Oracle => Err(Error::invalid("oracle imputer has no trainable model")),
    }
}

/// Trains the model for fold k on labeled rows outside the fold, evaluates it
/// on held-out labeled rows and on every unlabeled row.
#[allow(clippy::too_many_arguments)]
pub fn crossfit_predict(
    base_lab: &Matrix,
    base_unl: &Matrix,
    extra_lab: Option<&Matrix>,
    extra_unl: Option<&Matrix>,
    treatment_cols: &[usize],
    targets: &CrossfitTargets,
    folds: &FoldAssignment,
    cfg: &ImputerConfig,
) -> Result<CrossfitOutput> {
    let n = base_lab.rows();
    let n_unl = base_unl.rows();
    let n_targets = targets.lab.len();
    let mut out = CrossfitOutput {
        lab: vec![vec![0.0; n]; n_targets],
        unl: vec![vec![0.0; n_unl]; n_targets],
    };
    if let ImputerKind::Oracle = cfg.kind {
        let unl = targets.oracle_unl.as_ref().ok_or_else(|| {
            Error::MissingImputations("oracle imputer needs unlabeled truths".into())
        })?;
        for (t, lab_t) in targets.lab.iter().enumerate() {
            out.lab[t].copy_from_slice(lab_t);
            out.unl[t].copy_from_slice(&unl[t]);
        }
        return Ok(out);
    }
    let k_inv = 1.0 / folds.k_folds as f64;
    for k in 0..folds.k_folds {
        let train_idx = folds.complement_indices(k);
        let test_idx = folds.fold_indices(k);
        if train_idx.is_empty() {
            return Err(Error::FoldTooSmall { fold: k, size: 0 });
        }
        let train_base = base_lab.select_rows(&train_idx);
        let train_extra = extra_lab.map(|m| m.select_rows(&train_idx));
        let targets_train: Vec<Vec<f64>> = targets
            .lab
            .iter()
            .map(|t| train_idx.iter().map(|&i| t[i]).collect())
            .collect();
        let fit = fit_imputer_models(
            &train_base,
            train_extra.as_ref(),
            treatment_cols,
            &targets.names,
            &targets_train,
            cfg,
            k as u64,
        )?;
        let test_base = base_lab.select_rows(&test_idx);
        let test_extra = extra_lab.map(|m| m.select_rows(&test_idx));
        let preds_test = fit.predict(&test_base, test_extra.as_ref());
        let preds_unl = fit.predict(base_unl, extra_unl);
        for t in 0..n_targets {
            for (r, &i) in test_idx.iter().enumerate() {
                out.lab[t][i] = preds_test[t][r];
            }
            for (r, v) in preds_unl[t].iter().enumerate() {
                out.unl[t][r] += k_inv * v;
            }
        }
    }
    Ok(out)
}

/// Q-learning imputations: refit offsets and final imputed values for
/// (Y₂, Y₃, Y₂², Y₂Y₃).
#[derive(Debug, Clone)]
pub struct QImputations {
    pub eta2: Vec<f64>,
    pub eta3: Vec<f64>,
    pub eta22: f64,
    pub eta23: f64,
    /// Final μ̂ per labeled row (per-fold raw prediction + offset).
    pub lab_mu2: Vec<f64>,
    pub lab_mu3: Vec<f64>,
    pub lab_mu22: Vec<f64>,
    pub lab_mu23: Vec<f64>,
    /// Final μ̂ per unlabeled row (K-average + offset).
    pub unl_mu2: Vec<f64>,
    pub unl_mu3: Vec<f64>,
    pub unl_mu22: Vec<f64>,
    pub unl_mu23: Vec<f64>,
}

/// Cross-fits the four Q-learning functionals and solves the refitting
/// equations: residuals of Y₂ projected on X̄ = (1, X₁ᵀ, X₂ᵀ)ᵀ, residuals of
/// Y₃ projected on X₂, and mean offsets for Y₂² and Y₂Y₃.
pub fn impute_q(
    cohort: &Cohort,
    folds: &FoldAssignment,
    cfg: &ImputerConfig,
) -> Result<QImputations> {
    let y2 = &cohort.y2;
    let y3 = &cohort.y3;
    let y22: Vec<f64> = y2.iter().map(|v| v * v).collect();
    let y23: Vec<f64> = y2.iter().zip(y3).map(|(a, b)| a * b).collect();
    let oracle_unl = if matches!(cfg.kind, ImputerKind::Oracle) {
        let uy2: Option<Vec<f64>> = cohort.unlabeled.iter().map(|(r, _)| r.y2).collect();
        let uy3: Option<Vec<f64>> = cohort.unlabeled.iter().map(|(r, _)| r.y3).collect();
        match (uy2, uy3) {
            (Some(uy2), Some(uy3)) => {
                let u22: Vec<f64> = uy2.iter().map(|v| v * v).collect();
                let u23: Vec<f64> = uy2.iter().zip(&uy3).map(|(a, b)| a * b).collect();
                Some(vec![uy2, uy3, u22, u23])
            }
            _ => {
                return Err(Error::MissingImputations(
                    "oracle imputer requires outcomes on unlabeled rows".into(),
                ))
            }
        }
    } else {
        None
    };
    let targets = CrossfitTargets {
        names: vec!["m2".into(), "m3".into(), "m22".into(), "m23".into()],
        lab: vec![y2.clone(), y3.clone(), y22.clone(), y23.clone()],
        oracle_unl,
    };
    let fit = crossfit_predict(
        &cohort.lab.u,
        &cohort.unl.u,
        None,
        None,
        &cohort.u_treatment_cols,
        &targets,
        folds,
        cfg,
    )?;
    refit_q(cohort, &fit)
}

/// Refitting step given per-fold predictions (Step II).
pub fn refit_q(cohort: &Cohort, fit: &CrossfitOutput) -> Result<QImputations> {
    let n = cohort.n_labeled();
    let y2 = &cohort.y2;
    let y3 = &cohort.y3;
    let r2: Vec<f64> = y2.iter().zip(&fit.lab[0]).map(|(y, m)| y - m).collect();
    let eta2 = solve_least_squares(&cohort.lab.xbar, &r2, "refit of y2 residuals on xbar")?;
    let r3: Vec<f64> = y3.iter().zip(&fit.lab[1]).map(|(y, m)| y - m).collect();
    let eta3 = solve_least_squares(&cohort.lab.x2, &r3, "refit of y3 residuals on x2")?;
    let eta22 = y2
        .iter()
        .zip(&fit.lab[2])
        .map(|(y, m)| y * y - m)
        .sum::<f64>()
        / n as f64;
    let eta23 = y2
        .iter()
        .zip(y3)
        .zip(&fit.lab[3])
        .map(|((a, b), m)| a * b - m)
        .sum::<f64>()
        / n as f64;

    let lab_off2 = cohort.lab.xbar.matvec(&eta2);
    let unl_off2 = cohort.unl.xbar.matvec(&eta2);
    let lab_off3 = cohort.lab.x2.matvec(&eta3);
    let unl_off3 = cohort.unl.x2.matvec(&eta3);
    let add = |m: &[f64], off: &[f64]| -> Vec<f64> {
        m.iter().zip(off).map(|(a, b)| a + b).collect()
    };
    let add_c = |m: &[f64], c: f64| -> Vec<f64> { m.iter().map(|a| a + c).collect() };
    Ok(QImputations {
        lab_mu2: add(&fit.lab[0], &lab_off2),
        lab_mu3: add(&fit.lab[1], &lab_off3),
        lab_mu22: add_c(&fit.lab[2], eta22),
        lab_mu23: add_c(&fit.lab[3], eta23),
        unl_mu2: add(&fit.unl[0], &unl_off2),
        unl_mu3: add(&fit.unl[1], &unl_off3),
        unl_mu22: add_c(&fit.unl[2], eta22),
        unl_mu23: add_c(&fit.unl[3], eta23),
        eta2,
        eta3,
        eta22,
        eta23,
    })
}

/// Value-estimation imputations: scalar offsets and final imputed values for
/// (Y₂, ω₂, ω₂Y₂, ω₂Y₃).
#[derive(Debug, Clone)]
pub struct ValueImputations {
    pub eta2v: f64,
    pub eta_w2v: f64,
    pub eta_2w2v: f64,
    pub eta_3w2v: f64,
    pub lab_mu2v: Vec<f64>,
    pub lab_muw2: Vec<f64>,
    pub lab_mu2w2: Vec<f64>,
    pub lab_mu3w2: Vec<f64>,
    pub unl_mu2v: Vec<f64>,
    pub unl_muw2: Vec<f64>,
    pub unl_mu2w2: Vec<f64>,
    pub unl_mu3w2: Vec<f64>,
}

/// Inputs for the value-target refit: IPW weights and the optimal-arm
/// stage-2 baseline on labeled rows.
pub struct ValueRefitInputs<'a> {
    pub w1: &'a [f64],
    pub w2: &'a [f64],
    pub q2_minus: &'a [f64],
}

/// Solves the four scalar refitting equations: the ω₁-weighted mean residual
/// of Y₂, the Q*₂₋-weighted mean residual of ω₂, and plain mean residuals of
/// ω₂Y₂ and ω₂Y₃.
pub fn refit_value(
    cohort: &Cohort,
    fit: &CrossfitOutput,
    inputs: &ValueRefitInputs<'_>,
) -> Result<ValueImputations> {
    let n = cohort.n_labeled();
    let y2 = &cohort.y2;
    let y3 = &cohort.y3;
    let w1 = inputs.w1;
    let w2 = inputs.w2;
    let q2m = inputs.q2_minus;
    let sum_w1: f64 = w1.iter().sum();
    if sum_w1.abs() < 1e-10 {
        return Err(Error::DegenerateWeight { context: "eta2v (omega1 weights)".into(), sum: sum_w1 });
    }
    let eta2v = w1
        .iter()
        .zip(y2)
        .zip(&fit.lab[0])
        .map(|((w, y), m)| w * (y - m))
        .sum::<f64>()
        / sum_w1;
    let sum_q: f64 = q2m.iter().sum();
    if sum_q.abs() < 1e-10 {
        return Err(Error::DegenerateWeight { context: "eta_w2v (q2-minus weights)".into(), sum: sum_q });
    }
    let eta_w2v = q2m
        .iter()
        .zip(w2)
        .zip(&fit.lab[1])
        .map(|((q, w), m)| q * (w - m))
        .sum::<f64>()
        / sum_q;
    let eta_2w2v = w2
        .iter()
        .zip(y2)
        .zip(&fit.lab[2])
        .map(|((w, y), m)| w * y - m)
        .sum::<f64>()
        / n as f64;
    let eta_3w2v = w2
        .iter()
        .zip(y3)
        .zip(&fit.lab[3])
        .map(|((w, y), m)| w * y - m)
        .sum::<f64>()
        / n as f64;
    let shift = |m: &[f64], c: f64| -> Vec<f64> { m.iter().map(|v| v + c).collect() };
    Ok(ValueImputations {
        lab_mu2v: shift(&fit.lab[0], eta2v),
        lab_muw2: shift(&fit.lab[1], eta_w2v),
        lab_mu2w2: shift(&fit.lab[2], eta_2w2v),
        lab_mu3w2: shift(&fit.lab[3], eta_3w2v),
        unl_mu2v: shift(&fit.unl[0], eta2v),
        unl_muw2: shift(&fit.unl[1], eta_w2v),
        unl_mu2w2: shift(&fit.unl[2], eta_2w2v),
        unl_mu3w2: shift(&fit.unl[3], eta_3w2v),
        eta2v,
        eta_w2v,
        eta_2w2v,
        eta_3w2v,
    })
}
