//! Trajectory records, stage-wise feature construction, and cross-fitting folds.
//!
//! Histories follow the two-stage layout H₁ = [H₁₀ᵀ, H₁₁ᵀ]ᵀ built from baseline
//! covariates and H₂ = [H₂₀ᵀ, H₂₁ᵀ]ᵀ built from (O₁, A₁, O₂); the regression
//! features are X₁ = [H₁₀ᵀ, A₁H₁₁ᵀ]ᵀ and X₂ = [H₂₀ᵀ, A₂H₂₁ᵀ]ᵀ. Basis blocks are
//! declarative so simulated and CSV cohorts share one code path.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::random::Rng;

/// One patient trajectory. Outcomes are present together (labeled row) or
/// absent together (unlabeled row).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub o1: Vec<f64>,
    pub a1: u8,
    pub w1: Vec<f64>,
    pub o2: Vec<f64>,
    pub a2: u8,
    pub w2: Vec<f64>,
    pub y2: Option<f64>,
    pub y3: Option<f64>,
}

impl ObservationRecord {
    pub fn is_labeled(&self) -> bool {
        self.y2.is_some() && self.y3.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.a1 > 1 || self.a2 > 1 {
            return Err(Error::invalid("treatments must be binary (0/1)"));
        }
        if self.y2.is_some() != self.y3.is_some() {
            return Err(Error::invalid("y2 and y3 must be both present or both absent"));
        }
        Ok(())
    }
}

/// A covariate usable inside a basis term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    O1(usize),
    A1,
    O2(usize),
}

/// Product of covariates, e.g. `A1 * O1[0]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term(pub Vec<Var>);

impl Term {
    pub fn var(v: Var) -> Self {
        Term(vec![v])
    }

    pub fn product(vs: &[Var]) -> Self {
        Term(vs.to_vec())
    }

    fn eval(&self, rec: &ObservationRecord) -> Result<f64> {
        let mut out = 1.0;
        for v in &self.0 {
            out *= match *v {
                Var::O1(i) => *rec.o1.get(i).ok_or_else(|| {
                    Error::schema(format!("o1 index {i} out of range (dim {})", rec.o1.len()))
                })?,
                Var::A1 => rec.a1 as f64,
                Var::O2(i) => *rec.o2.get(i).ok_or_else(|| {
                    Error::schema(format!("o2 index {i} out of range (dim {})", rec.o2.len()))
                })?,
            };
        }
        Ok(out)
    }

    fn stage1_only(&self) -> bool {
        self.0.iter().all(|v| matches!(v, Var::O1(_)))
    }
}

/// One basis block hₜₖ: optional leading intercept plus covariate terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub intercept: bool,
    pub terms: Vec<Term>,
}

impl BlockSpec {
    pub fn dim(&self) -> usize {
        self.terms.len() + usize::from(self.intercept)
    }

    fn eval(&self, rec: &ObservationRecord) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        if self.intercept {
            out.push(1.0);
        }
        for t in &self.terms {
            out.push(t.eval(rec)?);
        }
        Ok(out)
    }
}

/// Column of the imputer feature vector Ū = (O₁, A₁, W₁, O₂, A₂, W₂).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UCol {
    O1(usize),
    A1,
    W1(usize),
    O2(usize),
    A2,
    W2(usize),
}

/// Per-column preprocessing. log1p is applied before centering; centering
/// statistics are pooled over labeled and unlabeled rows (transforms never
/// touch outcomes).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTransform {
    pub col: UCol,
    pub log1p: bool,
    pub center: bool,
}

/// Declarative basis configuration shared by simulated and CSV cohorts.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    pub h10: BlockSpec,
    pub h11: BlockSpec,
    pub h20: BlockSpec,
    pub h21: BlockSpec,
    /// Stage-1 propensity design (functions of O₁ only).
    pub prop1: BlockSpec,
    /// Stage-2 propensity design over (O₁, A₁, O₂); Y₂ is prepended when
    /// `prop2_includes_y2` is set, making π₂ evaluable on labeled rows only.
    pub prop2: BlockSpec,
    pub prop2_includes_y2: bool,
    pub transforms: Vec<ColumnTransform>,
    /// Restriction of the imputer feature set; `None` means the full Ū.
    pub imputer_columns: Option<Vec<UCol>>,
}

impl BasisConfig {
    pub fn validate(&self) -> Result<()> {
        for t in self.h10.terms.iter().chain(&self.h11.terms).chain(&self.prop1.terms) {
            if !t.stage1_only() {
                return Err(Error::schema(
                    "stage-1 blocks (h10, h11, prop1) may reference baseline covariates only",
                ));
            }
        }
        if self.h10.dim() == 0 || self.h20.dim() == 0 {
            return Err(Error::schema("main-effect blocks h10/h20 must be non-empty"));
        }
        Ok(())
    }
}

/// Stage-wise feature vectors for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeatures {
    pub h10: Vec<f64>,
    pub h11: Vec<f64>,
    pub h20: Vec<f64>,
    pub h21: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

/// Assembles the four h blocks and X₁ = [H₁₀ᵀ, A₁H₁₁ᵀ]ᵀ, X₂ = [H₂₀ᵀ, A₂H₂₁ᵀ]ᵀ.
pub fn build_stage_features(rec: &ObservationRecord, config: &BasisConfig) -> Result<StageFeatures> {
    rec.validate()?;
    let h10 = config.h10.eval(rec)?;
    let h11 = config.h11.eval(rec)?;
    let h20 = config.h20.eval(rec)?;
    let h21 = config.h21.eval(rec)?;
    let a1 = rec.a1 as f64;
    let a2 = rec.a2 as f64;
    let mut x1 = Vec::with_capacity(h10.len() + h11.len());
    x1.extend_from_slice(&h10);
    x1.extend(h11.iter().map(|v| a1 * v));
    let mut x2 = Vec::with_capacity(h20.len() + h21.len());
    x2.extend_from_slice(&h20);
    x2.extend(h21.iter().map(|v| a2 * v));
    Ok(StageFeatures { h10, h11, h20, h21, x1, x2 })
}

/// Cross-fitting fold labels over the labeled index set.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub k_folds: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_indices(&self, k: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn complement_indices(&self, k: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Random equal-sized partition of `{0, .., n-1}` into `k` folds.
///
/// Fold sizes differ by at most one; the assignment is a deterministic
/// function of `(n, k, seed)`.
pub fn partition_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("fold count {k} must satisfy 2 <= k <= n ({n})")));
    }
    let mut assignment: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut rng = Rng::stream(seed, 0xF01D);
    rng.shuffle(&mut assignment);
    Ok(FoldAssignment { k_folds: k, assignment, seed })
}

/// Design matrices for one partition (labeled or unlabeled) of a cohort.
#[derive(Debug, Clone)]
pub struct DesignSet {
    pub h10: Matrix,
    pub h11: Matrix,
    pub h20: Matrix,
    pub h21: Matrix,
    pub x1: Matrix,
    pub x2: Matrix,
    /// X̄ = (1, X₁ᵀ, X₂ᵀ)ᵀ refitting design.
    pub xbar: Matrix,
    /// Imputer feature matrix Ū (after transforms / column selection).
    pub u: Matrix,
    pub prop1: Matrix,
    /// Stage-2 propensity design without the Y₂ column.
    pub prop2_base: Matrix,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl DesignSet {
    pub fn len(&self) -> usize {
        self.x1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full stage-2 propensity design; prepends `y2` when the config says the
    /// design conditions on it.
    pub fn prop2(&self, includes_y2: bool, y2: Option<&[f64]>) -> Result<Matrix> {
        if !includes_y2 {
            return Ok(self.prop2_base.clone());
        }
        let y2 = y2.ok_or_else(|| {
            Error::MissingImputations("stage-2 propensity design needs y2 values".to_string())
        })?;
        let ycol = Matrix::from_cols(&[y2.to_vec()]);
        Ok(ycol.hcat(&self.prop2_base))
    }
}

/// Immutable cohort: labeled and unlabeled partitions with all design
/// matrices precomputed. Safe to share across parallel workers.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub config: BasisConfig,
    pub labeled: Vec<(ObservationRecord, StageFeatures)>,
    pub unlabeled: Vec<(ObservationRecord, StageFeatures)>,
    pub lab: DesignSet,
    pub unl: DesignSet,
    pub y2: Vec<f64>,
    pub y3: Vec<f64>,
    /// X̌₂ = (Y₂, X₂ᵀ)ᵀ on labeled rows.
    pub xcheck2: Matrix,
    /// Positions of A₁/A₂ inside the Ū columns (used for imputer interactions).
    pub u_treatment_cols: Vec<usize>,
    pub warnings: Vec<String>,
}

fn u_columns(config: &BasisConfig, rec: &ObservationRecord) -> Vec<UCol> {
    if let Some(cols) = &config.imputer_columns {
        return cols.clone();
    }
    let mut cols = Vec::new();
    cols.extend((0..rec.o1.len()).map(UCol::O1));
    cols.push(UCol::A1);
    cols.extend((0..rec.w1.len()).map(UCol::W1));
    cols.extend((0..rec.o2.len()).map(UCol::O2));
    cols.push(UCol::A2);
    cols.extend((0..rec.w2.len()).map(UCol::W2));
    cols
}

fn u_value(rec: &ObservationRecord, col: UCol) -> Result<f64> {
    Ok(match col {
        UCol::O1(i) => *rec.o1.get(i).ok_or_else(|| Error::schema("o1 index out of range"))?,
        UCol::A1 => rec.a1 as f64,
        UCol::W1(i) => *rec.w1.get(i).ok_or_else(|| Error::schema("w1 index out of range"))?,
        UCol::O2(i) => *rec.o2.get(i).ok_or_else(|| Error::schema("o2 index out of range"))?,
        UCol::A2 => rec.a2 as f64,
        UCol::W2(i) => *rec.w2.get(i).ok_or_else(|| Error::schema("w2 index out of range"))?,
    })
}

fn apply_transforms(records: &mut [ObservationRecord], transforms: &[ColumnTransform]) {
    for tr in transforms {
        if tr.log1p {
            for rec in records.iter_mut() {
                let v = match tr.col {
                    UCol::O1(i) => &mut rec.o1[i],
                    UCol::W1(i) => &mut rec.w1[i],
                    UCol::O2(i) => &mut rec.o2[i],
                    UCol::W2(i) => &mut rec.w2[i],
                    UCol::A1 | UCol::A2 => continue,
                };
                *v = libm::log(1.0 + *v);
            }
        }
    }
    // centering uses pooled statistics, computed after any log1p
    for tr in transforms {
        if !tr.center {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0.0;
        for rec in records.iter() {
            let v = match tr.col {
                UCol::O1(i) => rec.o1[i],
                UCol::W1(i) => rec.w1[i],
                UCol::O2(i) => rec.o2[i],
                UCol::W2(i) => rec.w2[i],
                UCol::A1 | UCol::A2 => continue,
            };
            sum += v;
            count += 1.0;
        }
        if count == 0.0 {
            continue;
        }
        let mean = sum / count;
        for rec in records.iter_mut() {
            let v = match tr.col {
                UCol::O1(i) => &mut rec.o1[i],
                UCol::W1(i) => &mut rec.w1[i],
                UCol::O2(i) => &mut rec.o2[i],
                UCol::W2(i) => &mut rec.w2[i],
                UCol::A1 | UCol::A2 => continue,
            };
            *v -= mean;
        }
    }
}

fn design_set(
    pairs: &[(ObservationRecord, StageFeatures)],
    config: &BasisConfig,
    ucols: &[UCol],
) -> Result<DesignSet> {
    let n = pairs.len();
    let dims = |f: fn(&StageFeatures) -> &Vec<f64>| pairs.first().map_or(0, |(_, s)| f(s).len());
    let mut h10 = Matrix::zeros(n, dims(|s| &s.h10));
    let mut h11 = Matrix::zeros(n, dims(|s| &s.h11));
    let mut h20 = Matrix::zeros(n, dims(|s| &s.h20));
    let mut h21 = Matrix::zeros(n, dims(|s| &s.h21));
    let mut x1 = Matrix::zeros(n, dims(|s| &s.x1));
    let mut x2 = Matrix::zeros(n, dims(|s| &s.x2));
    let mut xbar = Matrix::zeros(n, 1 + x1.cols() + x2.cols());
    let mut u = Matrix::zeros(n, ucols.len());
    let mut prop1 = Matrix::zeros(n, config.prop1.dim());
    let mut prop2 = Matrix::zeros(n, config.prop2.dim());
    let mut a1 = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    for (i, (rec, feat)) in pairs.iter().enumerate() {
        h10.row_mut(i).copy_from_slice(&feat.h10);
        h11.row_mut(i).copy_from_slice(&feat.h11);
        h20.row_mut(i).copy_from_slice(&feat.h20);
        h21.row_mut(i).copy_from_slice(&feat.h21);
        x1.row_mut(i).copy_from_slice(&feat.x1);
        x2.row_mut(i).copy_from_slice(&feat.x2);
        let xb = xbar.row_mut(i);
        xb[0] = 1.0;
        xb[1..1 + feat.x1.len()].copy_from_slice(&feat.x1);
        xb[1 + feat.x1.len()..].copy_from_slice(&feat.x2);
        for (j, &c) in ucols.iter().enumerate() {
            u.set(i, j, u_value(rec, c)?);
        }
        prop1.row_mut(i).copy_from_slice(&config.prop1.eval(rec)?);
        prop2.row_mut(i).copy_from_slice(&config.prop2.eval(rec)?);
        a1[i] = rec.a1 as f64;
        a2[i] = rec.a2 as f64;
    }
    Ok(DesignSet { h10, h11, h20, h21, x1, x2, xbar, u, prop1, prop2_base: prop2, a1, a2 })
}

impl Cohort {
    /// Partitions records by outcome presence, applies transforms, and builds
    /// all design matrices.
    pub fn assemble(mut records: Vec<ObservationRecord>, config: BasisConfig) -> Result<Cohort> {
        config.validate()?;
        for (i, rec) in records.iter().enumerate() {
            rec.validate().map_err(|e| Error::Row { line: i + 1, message: e.to_string() })?;
        }
        if let Some(first) = records.first() {
            let dims = (first.o1.len(), first.w1.len(), first.o2.len(), first.w2.len());
            for (i, rec) in records.iter().enumerate() {
                let d = (rec.o1.len(), rec.w1.len(), rec.o2.len(), rec.w2.len());
                if d != dims {
                    return Err(Error::Row {
                        line: i + 1,
                        message: format!("vector dims {d:?} differ from schema {dims:?}"),
                    });
                }
            }
        }
        apply_transforms(&mut records, &config.transforms);

        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for rec in records {
            let feat = build_stage_features(&rec, &config)?;
            if rec.is_labeled() {
                labeled.push((rec, feat));
            } else {
                unlabeled.push((rec, feat));
            }
        }
        if labeled.is_empty() {
            return Err(Error::invalid("cohort needs at least one labeled row"));
        }
        let mut warnings = Vec::new();
        if !unlabeled.is_empty() && unlabeled.len() < labeled.len() {
            warnings.push(format!(
                "unlabeled rows ({}) fewer than labeled rows ({}); SSL gains may be limited",
                unlabeled.len(),
                labeled.len()
            ));
        }
        let ucols = u_columns(&config, &labeled[0].0);
        let lab = design_set(&labeled, &config, &ucols)?;
        let unl = design_set(&unlabeled, &config, &ucols)?;
        let y2: Vec<f64> = labeled.iter().map(|(r, _)| r.y2.unwrap()).collect();
        let y3: Vec<f64> = labeled.iter().map(|(r, _)| r.y3.unwrap()).collect();
        let xcheck2 = Matrix::from_cols(&[y2.clone()]).hcat(&lab.x2);
        let u_treatment_cols = ucols
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, UCol::A1 | UCol::A2))
            .map(|(i, _)| i)
            .collect();
        Ok(Cohort {
            config,
            labeled,
            unlabeled,
            lab,
            unl,
            y2,
            y3,
            xcheck2,
            u_treatment_cols,
            warnings,
        })
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    /// Restriction to a subset of labeled rows (matrices sliced directly;
    /// transforms are not re-applied). The unlabeled partition is shared.
    pub fn with_labeled_subset(&self, keep: &[usize]) -> Cohort {
        let labeled: Vec<_> = keep.iter().map(|&i| self.labeled[i].clone()).collect();
        let lab = DesignSet {
            h10: self.lab.h10.select_rows(keep),
            h11: self.lab.h11.select_rows(keep),
            h20: self.lab.h20.select_rows(keep),
            h21: self.lab.h21.select_rows(keep),
            x1: self.lab.x1.select_rows(keep),
            x2: self.lab.x2.select_rows(keep),
            xbar: self.lab.xbar.select_rows(keep),
            u: self.lab.u.select_rows(keep),
            prop1: self.lab.prop1.select_rows(keep),
            prop2_base: self.lab.prop2_base.select_rows(keep),
            a1: keep.iter().map(|&i| self.lab.a1[i]).collect(),
            a2: keep.iter().map(|&i| self.lab.a2[i]).collect(),
        };
        Cohort {
            config: self.config.clone(),
            labeled,
            unlabeled: self.unlabeled.clone(),
            lab,
            unl: self.unl.clone(),
            y2: keep.iter().map(|&i| self.y2[i]).collect(),
            y3: keep.iter().map(|&i| self.y3[i]).collect(),
            xcheck2: self.xcheck2.select_rows(keep),
            u_treatment_cols: self.u_treatment_cols.clone(),
            warnings: Vec::new(),
        }
    }

    /// X̌₂ reconstruction helper used by invariant checks.
    pub fn xcheck2_row(&self, i: usize) -> Vec<f64> {
        let mut v = vec![self.y2[i]];
        v.extend_from_slice(self.lab.x2.row(i));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_config() -> BasisConfig {
        // h10 = h11 = (1, O1); h20 = (1, O1, A1, O1*A1, O2); h21 = (1, A1, O2)
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

    fn rec(o1: f64, a1: u8, o2: f64, a2: u8, y: Option<(f64, f64)>) -> ObservationRecord {
        ObservationRecord {
            o1: vec![o1],
            a1,
            w1: vec![0.0],
            o2: vec![o2],
            a2,
            w2: vec![0.0],
            y2: y.map(|p| p.0),
            y3: y.map(|p| p.1),
        }
    }

    #[test]
    fn x1_assembly_with_treated_arm() {
        let cfg = simple_config();
        let f = build_stage_features(&rec(1.0, 1, 0.0, 0, None), &cfg).unwrap();
        assert_eq!(f.x1, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn x1_interaction_block_zeroed_for_control() {
        let cfg = simple_config();
        let f = build_stage_features(&rec(1.0, 0, 0.0, 0, None), &cfg).unwrap();
        assert_eq!(f.x1, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn x2_layout_matches_block_order() {
        let cfg = simple_config();
        let f = build_stage_features(&rec(1.0, 1, 0.5, 0, None), &cfg).unwrap();
        assert_eq!(f.x2, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_assembly_is_pure() {
        let cfg = simple_config();
        let r = rec(1.0, 1, -0.3, 1, Some((2.0, 1.0)));
        let a = build_stage_features(&r, &cfg).unwrap();
        let b = build_stage_features(&r, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn xcheck2_reconstruction() {
        let cfg = simple_config();
        let records = vec![rec(1.0, 1, 0.5, 0, Some((2.0, 3.0))), rec(0.0, 0, 0.1, 1, None)];
        let cohort = Cohort::assemble(records, cfg).unwrap();
        let xc = cohort.xcheck2_row(0);
        assert_eq!(xc[0], 2.0);
        assert_eq!(&xc[1..], cohort.lab.x2.row(0));
        assert_eq!(cohort.xcheck2.row(0), xc.as_slice());
    }

    #[test]
    fn partition_counts() {
        let cfg = simple_config();
        let mut records = Vec::new();
        for i in 0..3 {
            records.push(rec(i as f64, 1, 0.0, 0, Some((1.0, 2.0))));
        }
        for i in 0..7 {
            records.push(rec(i as f64, 0, 0.0, 1, None));
        }
        let cohort = Cohort::assemble(records, cfg).unwrap();
        assert_eq!(cohort.n_labeled(), 3);
        assert_eq!(cohort.n_unlabeled(), 7);
    }

    #[test]
    fn half_labeled_row_rejected() {
        let cfg = simple_config();
        let mut bad = rec(0.0, 0, 0.0, 0, Some((1.0, 2.0)));
        bad.y3 = None;
        let err = Cohort::assemble(vec![rec(0.0, 1, 0.0, 0, Some((1.0, 2.0))), bad], cfg)
            .unwrap_err();
        match err {
            Error::Row { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_unlabeled_partition_is_valid() {
        let cfg = simple_config();
        let cohort = Cohort::assemble(vec![rec(1.0, 1, 0.2, 0, Some((1.0, 2.0)))], cfg).unwrap();
        assert_eq!(cohort.n_unlabeled(), 0);
    }

    #[test]
    fn folds_balanced_exact_division() {
        let f = partition_folds(10, 5, 3).unwrap();
        let mut sizes = [0usize; 5];
        for &a in &f.assignment {
            sizes[a] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 2));
    }

    #[test]
    fn folds_balanced_with_remainder() {
        let f = partition_folds(11, 5, 3).unwrap();
        let mut sizes = vec![0usize; 5];
        for &a in &f.assignment {
            sizes[a] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_deterministic() {
        let a = partition_folds(23, 4, 99).unwrap();
        let b = partition_folds(23, 4, 99).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn folds_reject_bad_k() {
        assert!(partition_folds(10, 1, 0).is_err());
        assert!(partition_folds(3, 4, 0).is_err());
    }

    #[test]
    fn fold_assignment_is_partition() {
        let f = partition_folds(17, 4, 5).unwrap();
        let mut seen = vec![false; 17];
        for k in 0..4 {
            for i in f.fold_indices(k) {
                assert!(!seen[i], "index {i} appears twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
