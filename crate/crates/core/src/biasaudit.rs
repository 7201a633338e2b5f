//! Error-on-covariates regressions and prevalence-coefficient comparison.
//!
//! Interview-level prediction errors are regressed on subject
//! characteristics by OLS; the joint F-test says whether the errors are
//! predictable from who was interviewed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Covariate, CovariateTable};
use crate::error::{Error, Result};
use crate::linalg::{householder_qr, invert_upper, solve_upper, xtx_inverse, Matrix};
use crate::pipeline::InterviewScoreTable;
use crate::scalar::{fixed, Real};
use crate::special::{f_upper_tail, t_two_sided_p};

/// Condition number of the column-scaled design above which a fit is refused.
pub const MAX_CONDITION: f64 = 1e10;

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdErrorKind {
    #[default]
    Iid,
    /// White heteroskedasticity-consistent errors with the `n / (n - k - 1)` correction.
    Hc1,
}

pub fn significance_stars<T: Real>(p: T) -> &'static str {
    let p = p.as_f64();
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow<T> {
    pub name: String,
    pub coefficient: T,
    pub std_error: T,
    pub t_stat: T,
    pub p_value: T,
    pub stars: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics<T> {
    pub observations: usize,
    pub r2: T,
    pub adj_r2: T,
    pub f_stat: T,
    pub f_pvalue: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable<T> {
    pub intercept: CoefficientRow<T>,
    pub coefficients: Vec<CoefficientRow<T>>,
    pub fit: FitStatistics<T>,
    pub std_errors: StdErrorKind,
}

impl<T: Real> RegressionTable<T> {
    pub fn coefficient(&self, name: &str) -> Option<&CoefficientRow<T>> {
        if name == INTERCEPT {
            return Some(&self.intercept);
        }
        self.coefficients.iter().find(|r| r.name == name)
    }

    pub fn n(&self) -> usize {
        self.fit.observations
    }
}

/// `(r2 / k) / ((1 - r2) / (n - k - 1))`; `+inf` for a perfect fit.
pub fn f_statistic_from_r2<T: Real>(r2: T, n: usize, k: usize) -> Result<T> {
    if k == 0 || n <= k + 1 {
        return Err(Error::TooFewObservations { n, k });
    }
    if !(r2 >= T::zero() && r2 <= T::one()) {
        return Err(Error::Invalid(format!("R^2 {r2} outside [0, 1]")));
    }
    if r2 == T::one() {
        log::warn!("perfect fit: F statistic is infinite");
        return Ok(T::infinity());
    }
    let df_resid = T::of_usize(n - k - 1);
    Ok((r2 / T::of_usize(k)) / ((T::one() - r2) / df_resid))
}

pub fn adjusted_r2<T: Real>(r2: T, n: usize, k: usize) -> T {
    T::one() - (T::one() - r2) * T::of_usize(n - 1) / T::of_usize(n - k - 1)
}

fn coefficient_row<T: Real>(name: &str, coef: T, se: T, df: T) -> CoefficientRow<T> {
    let (t, p) = if se > T::zero() {
        let t = coef / se;
        (t, t_two_sided_p(t, df))
    } else if coef == T::zero() {
        (T::zero(), T::one())
    } else {
        (T::infinity() * coef.signum(), T::zero())
    };
    CoefficientRow {
        name: name.to_string(),
        coefficient: coef,
        std_error: se,
        t_stat: t,
        p_value: p,
        stars: significance_stars(p).to_string(),
    }
}

/// Refuses designs whose column-scaled condition number exceeds
/// [`MAX_CONDITION`], naming the columns involved in the dependency.
fn check_rank<T: Real>(x: &Matrix<T>, names: &[String]) -> Result<()> {
    let (n, p) = (x.rows(), x.cols());
    let mut scaled = x.clone();
    let mut zero_cols = Vec::new();
    for j in 0..p {
        let norm = (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum::<T>().sqrt();
        if norm == T::zero() {
            zero_cols.push(names[j].clone());
            continue;
        }
        for i in 0..n {
            scaled[(i, j)] = x[(i, j)] / norm;
        }
    }
    if !zero_cols.is_empty() {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
            columns: zero_cols,
        });
    }
    let r = householder_qr(&scaled, &vec![T::zero(); n]).r;
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs().as_f64()).collect();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    // ||R||_F ||R^-1||_F bounds the 2-norm condition number within a factor p
    let condition = if diag.iter().any(|&d| d <= max_diag * f64::EPSILON) {
        f64::INFINITY
    } else {
        let fro = |m: &Matrix<T>| {
            (0..p)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)].as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
        };
        fro(&r) * fro(&invert_upper(&r))
    };
    if condition <= MAX_CONDITION {
        return Ok(());
    }
    // the column with the smallest pivot, plus the earlier columns that span it
    let worst = (0..p)
        .min_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let mut columns = Vec::new();
    if worst > 0 {
        let mut lead = Matrix::zeros(worst, worst);
        let mut rhs = vec![T::zero(); worst];
        for i in 0..worst {
            for j in i..worst {
                lead[(i, j)] = r[(i, j)];
            }
            rhs[i] = r[(i, worst)];
        }
        let c = solve_upper(&lead, &rhs);
        for (j, cj) in c.iter().enumerate() {
            if cj.abs().as_f64() > 1e-6 {
                columns.push(names[j].clone());
            }
        }
    }
    columns.push(names[worst].clone());
    Err(Error::RankDeficient { condition, columns })
}

/// OLS of `y` on an intercept plus the named regressor columns.
pub fn ols_fit<T: Real>(y: &[T], regressors: &[(String, Vec<T>)], std_errors: StdErrorKind) -> Result<RegressionTable<T>> {
    let n = y.len();
    let k = regressors.len();
    if n <= k + 1 {
        return Err(Error::TooFewObservations { n, k });
    }
    if let Some((name, col)) = regressors.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::Invalid(format!(
            "regressor `{name}` has {} rows, expected {n}",
            col.len()
        )));
    }
    let columns: Vec<Vec<T>> = regressors.iter().map(|(_, c)| c.clone()).collect();
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(regressors.iter().map(|(name, _)| name.clone()));
    let x = Matrix::with_intercept(&columns, n);
    check_rank(&x, &names)?;

    let qr = householder_qr(&x, y);
    let beta = solve_upper(&qr.r, &qr.qty);
    let ssr = qr.residual_ss;
    let y_mean = y.iter().copied().sum::<T>() / T::of_usize(n);
    let sst: T = y.iter().map(|&v| (v - y_mean) * (v - y_mean)).sum();
    let df_resid = T::of_usize(n - k - 1);

    let r2 = if sst > T::zero() {
        (T::one() - ssr / sst).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let adj_r2 = adjusted_r2(r2, n, k);
    let f_stat = if k == 0 { T::zero() } else { f_statistic_from_r2(r2, n, k)? };
    let f_pvalue = if k == 0 {
        T::one()
    } else if f_stat.is_infinite() {
        T::zero()
    } else {
        f_upper_tail(f_stat, T::of_usize(k), df_resid)
    };

    let bread = xtx_inverse(&qr.r);
    let variances: Vec<T> = match std_errors {
        StdErrorKind::Iid => {
            let sigma2 = ssr / df_resid;
            (0..=k).map(|j| bread[(j, j)] * sigma2).collect()
        }
        StdErrorKind::Hc1 => {
            let fitted = x.mul_vec(&beta);
            let p = k + 1;
            let mut meat = Matrix::zeros(p, p);
            for i in 0..n {
                let e2 = (y[i] - fitted[i]) * (y[i] - fitted[i]);
                let row = x.row(i);
                for a in 0..p {
                    for b in 0..p {
                        meat[(a, b)] += e2 * row[a] * row[b];
                    }
                }
            }
            let cov = bread.matmul(&meat).matmul(&bread);
            let scale = T::of_usize(n) / df_resid;
            (0..p).map(|j| cov[(j, j)] * scale).collect()
        }
    };
    let se: Vec<T> = variances.iter().map(|v| v.max(T::zero()).sqrt()).collect();

    Ok(RegressionTable {
        intercept: coefficient_row(INTERCEPT, beta[0], se[0], df_resid),
        coefficients: (0..k)
            .map(|j| coefficient_row(&names[j + 1], beta[j + 1], se[j + 1], df_resid))
            .collect(),
        fit: FitStatistics {
            observations: n,
            r2,
            adj_r2,
            f_stat,
            f_pvalue,
        },
        std_errors,
    })
}

/// `predicted - gold` per interview present in both tables.
pub fn interview_errors<T: Real>(
    pred: &InterviewScoreTable<T>,
    gold: &InterviewScoreTable<T>,
) -> Result<BTreeMap<String, T>> {
    if pred.code_name != gold.code_name {
        return Err(Error::Invalid(format!(
            "score tables are for different codes: `{}` vs `{}`",
            pred.code_name, gold.code_name
        )));
    }
    let errors: BTreeMap<String, T> = pred
        .scores
        .iter()
        .filter_map(|(id, &p)| gold.scores.get(id).map(|&g| (id.clone(), p - g)))
        .collect();
    if errors.is_empty() {
        return Err(Error::EmptyIntersection(format!(
            "`{}` and `{}` share no interviews for `{}`",
            pred.source_id, gold.source_id, pred.code_name
        )));
    }
    Ok(errors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTestResult<T> {
    pub code_name: String,
    pub source_id: String,
    pub table: RegressionTable<T>,
    /// Natural log of the F statistic; `-inf` when F is zero.
    pub log_f: T,
    /// Interviews dropped for incomplete covariates.
    pub dropped: usize,
}

/// Rows of `outcome` joined with complete covariate records, in id order.
fn design<T: Real>(
    outcome: &BTreeMap<String, T>,
    covariates: &CovariateTable,
    regressors: &[Covariate],
) -> (Vec<T>, Vec<(String, Vec<T>)>, usize) {
    let mut y = Vec::new();
    let mut cols: Vec<(String, Vec<T>)> = regressors.iter().map(|c| (c.name().to_string(), Vec::new())).collect();
    let mut dropped = 0;
    for (id, &v) in outcome {
        let row: Option<Vec<f64>> = covariates
            .get(id)
            .and_then(|rec| regressors.iter().map(|&c| rec.get(c)).collect());
        match row {
            Some(values) => {
                y.push(v);
                for (col, x) in cols.iter_mut().zip(values) {
                    col.1.push(T::of(x));
                }
            }
            None => dropped += 1,
        }
    }
    (y, cols, dropped)
}

/// Regresses per-interview errors on the given covariates after listwise
/// deletion of incomplete records.
pub fn bias_test<T: Real>(
    code_name: &str,
    source_id: &str,
    errors: &BTreeMap<String, T>,
    covariates: &CovariateTable,
    regressors: &[Covariate],
    std_errors: StdErrorKind,
) -> Result<BiasTestResult<T>> {
    let (y, cols, dropped) = design(errors, covariates, regressors);
    if dropped > 0 {
        log::info!("{code_name}/{source_id}: dropped {dropped} interviews with incomplete covariates");
    }
    let table = ols_fit(&y, &cols, std_errors)?;
    let f = table.fit.f_stat;
    Ok(BiasTestResult {
        code_name: code_name.to_string(),
        source_id: source_id.to_string(),
        log_f: if f > T::zero() { f.ln() } else { T::neg_infinity() },
        table,
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub coefficient: T,
    pub std_error: T,
    pub ci_low: T,
    pub ci_high: T,
}

impl<T: Real> Estimate<T> {
    fn from_row(row: &CoefficientRow<T>) -> Self {
        let half = T::of(1.96) * row.std_error;
        Self {
            coefficient: row.coefficient,
            std_error: row.std_error,
            ci_low: row.coefficient - half,
            ci_high: row.coefficient + half,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceCoefficients<T> {
    pub source_id: String,
    pub n: usize,
    pub refugee: Estimate<T>,
    pub eld_sex: Estimate<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison<T> {
    pub code_name: String,
    pub sources: Vec<SourceCoefficients<T>>,
}

/// Per source, OLS of interview prevalence on refugee status and the sex of
/// the eldest child. Callers decide which interviews each table covers.
pub fn coefficient_comparison<T: Real>(
    tables: &[&InterviewScoreTable<T>],
    covariates: &CovariateTable,
) -> Result<CoefficientComparison<T>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Invalid("no score tables to compare".into()))?;
    let regressors = [Covariate::Refugee, Covariate::EldSex];
    let mut sources = Vec::with_capacity(tables.len());
    for table in tables {
        if table.code_name != first.code_name {
            return Err(Error::Invalid("score tables are for different codes".into()));
        }
        if table.scores.is_empty() {
            return Err(Error::Invalid(format!("score table `{}` is empty", table.source_id)));
        }
        let (y, cols, _) = design(&table.scores, covariates, &regressors);
        let fit = ols_fit(&y, &cols, StdErrorKind::Iid)?;
        sources.push(SourceCoefficients {
            source_id: table.source_id.clone(),
            n: fit.n(),
            refugee: Estimate::from_row(&fit.coefficients[0]),
            eld_sex: Estimate::from_row(&fit.coefficients[1]),
        });
    }
    Ok(CoefficientComparison {
        code_name: first.code_name.clone(),
        sources,
    })
}

fn io_err(e: std::io::Error) -> Error {
    Error::Invalid(format!("write failed: {e}"))
}

/// Regressor rows then fit statistics, one CSV table.
pub fn write_table_csv<T: Real>(result: &BiasTestResult<T>, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["term", "estimate", "std_error", "t_stat", "p_value", "stars"])?;
    let t = &result.table;
    for row in std::iter::once(&t.intercept).chain(&t.coefficients) {
        out.write_record([
            row.name.clone(),
            fixed(row.coefficient, 6),
            fixed(row.std_error, 6),
            fixed(row.t_stat, 4),
            format!("{:.4e}", row.p_value),
            row.stars.clone(),
        ])?;
    }
    let stats = [
        ("Observations", t.fit.observations.to_string()),
        ("R2", fixed(t.fit.r2, 5)),
        ("Adjusted R2", fixed(t.fit.adj_r2, 5)),
        ("F-test", fixed(t.fit.f_stat, 4)),
        ("F-test, p-value", format!("{:.4e}", t.fit.f_pvalue)),
    ];
    for (name, value) in stats {
        out.write_record([name, &value, "", "", "", ""])?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 7] = ["code", "source", "n", "f_stat", "log_f", "p_value", "stars"];

pub fn write_summary_csv<T: Real>(results: &[BiasTestResult<T>], comments: &[String], mut w: impl Write) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(io_err)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in results {
        out.write_record([
            r.code_name.clone(),
            r.source_id.clone(),
            r.table.n().to_string(),
            fixed(r.table.fit.f_stat, 4),
            fixed(r.log_f, 4),
            format!("{:.4e}", r.table.fit.f_pvalue),
            significance_stars(r.table.fit.f_pvalue).to_string(),
        ])?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

/// Plain-text table: coefficient with stars, standard error in parentheses
/// beneath, then the fit statistics.
pub fn render_text<T: Real>(result: &BiasTestResult<T>) -> String {
    let t = &result.table;
    let mut s = String::new();
    let _ = writeln!(s, "Dependent variable: prediction error ({}, {})", result.code_name, result.source_id);
    for row in std::iter::once(&t.intercept).chain(&t.coefficients) {
        let _ = writeln!(s, "{:<18}{:>12.5}{}", row.name, row.coefficient, row.stars);
        let _ = writeln!(s, "{:<18}{:>12}", "", format!("({:.5})", row.std_error));
    }
    let _ = writeln!(s, "{}", "-".repeat(33));
    let _ = writeln!(s, "{:<18}{:>12}", "Observations", t.fit.observations);
    let _ = writeln!(s, "{:<18}{:>12.5}", "R2", t.fit.r2);
    let _ = writeln!(s, "{:<18}{:>12.5}", "Adjusted R2", t.fit.adj_r2);
    let _ = writeln!(s, "{:<18}{:>12.4}", "F-test", t.fit.f_stat);
    let _ = writeln!(s, "{:<18}{:>12.2e}", "F-test, p-value", t.fit.f_pvalue);
    let se = match t.std_errors {
        StdErrorKind::Iid => "IID",
        StdErrorKind::Hc1 => "HC1",
    };
    let _ = writeln!(s, "{se} standard errors in parentheses. ***: 0.01, **: 0.05, *: 0.1");
    s
}
