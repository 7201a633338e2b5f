//! Per-code agreement between an annotation source and the gold labels.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, CodeDefinition};
use crate::error::{Error, Result};
use crate::scalar::{fixed, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: u8, gold: u8) {
        match (pred, gold) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    /// Fraction of gold positives among the compared cells.
    pub fn prevalence<T: Real>(&self) -> T {
        T::of_usize(self.tp + self.fn_) / T::of_usize(self.total())
    }
}

/// Counts over the cells of `code` labeled by both sources.
pub fn confusion(pred: &AnnotationSet, gold: &AnnotationSet, code: &str) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (key, g) in gold.code_cells(code) {
        if let Some(p) = pred.get(key) {
            c.add(p, g);
        }
    }
    if c.total() == 0 {
        return Err(Error::EmptyIntersection(format!(
            "sources `{}` and `{}` share no cells for code `{code}`",
            pred.source_id, gold.source_id
        )));
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`, zero when nothing was predicted or present.
pub fn f1<T: Real>(c: &ConfusionCounts) -> T {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        T::zero()
    } else {
        T::of_usize(2 * c.tp) / T::of_usize(den)
    }
}

pub fn precision<T: Real>(c: &ConfusionCounts) -> Option<T> {
    (c.tp + c.fp > 0).then(|| T::of_usize(c.tp) / T::of_usize(c.tp + c.fp))
}

pub fn recall<T: Real>(c: &ConfusionCounts) -> Option<T> {
    (c.tp + c.fn_ > 0).then(|| T::of_usize(c.tp) / T::of_usize(c.tp + c.fn_))
}

/// Harmonic mean; `None` where either input is undefined or both are zero.
pub fn f1_from_precision_recall<T: Real>(precision: Option<T>, recall: Option<T>) -> Option<T> {
    let (p, r) = (precision?, recall?);
    let s = p + r;
    (s > T::zero()).then(|| T::of(2.0) * p * r / s)
}

pub fn accuracy<T: Real>(c: &ConfusionCounts) -> Result<T> {
    if c.total() == 0 {
        return Err(Error::EmptyIntersection("accuracy over zero cells".into()));
    }
    Ok(T::of_usize(c.tp + c.tn) / T::of_usize(c.total()))
}

/// How the random-guess F1 reference is defined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineConvention {
    /// Guess positive at the gold prevalence `p`: `2p*p / (p + p) = p`.
    #[default]
    MatchPrevalence,
    /// Always guess positive: `2p / (1 + p)`.
    AlwaysPositive,
}

pub fn random_baseline_f1<T: Real>(prevalence: T) -> T {
    baseline_f1(prevalence, BaselineConvention::MatchPrevalence)
}

pub fn baseline_f1<T: Real>(p: T, convention: BaselineConvention) -> T {
    let p = p.max(T::zero()).min(T::one());
    let q = match convention {
        BaselineConvention::MatchPrevalence => p,
        BaselineConvention::AlwaysPositive => T::one(),
    };
    if p + q == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * p * q / (p + q)
    }
}

/// `100 * (fp - fn) / total`: positive when the source over-predicts.
pub fn net_overprediction_from<T: Real>(c: &ConfusionCounts) -> T {
    T::of(100.0) * (T::of_usize(c.fp) - T::of_usize(c.fn_)) / T::of_usize(c.total())
}

pub fn net_overprediction<T: Real>(pred: &AnnotationSet, gold: &AnnotationSet, code: &str) -> Result<T> {
    Ok(net_overprediction_from(&confusion(pred, gold, code)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeEvalReport<T> {
    pub code_name: String,
    pub source_id: String,
    pub f1: T,
    pub accuracy: T,
    pub baseline_f1: T,
    pub net_overprediction_pct: T,
    pub n_cells: usize,
    pub counts: ConfusionCounts,
}

impl<T: Real> CodeEvalReport<T> {
    pub fn from_counts(code: &str, source: &str, c: ConfusionCounts, convention: BaselineConvention) -> Result<Self> {
        Ok(Self {
            code_name: code.to_string(),
            source_id: source.to_string(),
            f1: f1(&c),
            accuracy: accuracy(&c)?,
            baseline_f1: baseline_f1(c.prevalence(), convention),
            net_overprediction_pct: net_overprediction_from(&c),
            n_cells: c.total(),
            counts: c,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary<T> {
    pub source_id: String,
    pub reports: Vec<CodeEvalReport<T>>,
    /// Unweighted mean of the per-code F1 scores.
    pub macro_f1: T,
    /// Correct cells over all compared cells, across codes.
    pub pooled_accuracy: T,
    pub baseline: BaselineConvention,
}

pub fn evaluate_all<T: Real>(
    pred: &AnnotationSet,
    gold: &AnnotationSet,
    codebook: &[CodeDefinition],
    convention: BaselineConvention,
) -> Result<EvalSummary<T>> {
    if codebook.is_empty() {
        return Err(Error::Invalid("no codes to evaluate".into()));
    }
    let mut reports = Vec::with_capacity(codebook.len());
    let mut pooled = ConfusionCounts::default();
    for code in codebook {
        let c = confusion(pred, gold, &code.code_name)?;
        pooled.tp += c.tp;
        pooled.fp += c.fp;
        pooled.fn_ += c.fn_;
        pooled.tn += c.tn;
        reports.push(CodeEvalReport::from_counts(&code.code_name, &pred.source_id, c, convention)?);
    }
    let macro_f1 = reports.iter().map(|r| r.f1).sum::<T>() / T::of_usize(reports.len());
    Ok(EvalSummary {
        source_id: pred.source_id.clone(),
        reports,
        macro_f1,
        pooled_accuracy: accuracy(&pooled)?,
        baseline: convention,
    })
}

pub const REPORT_HEADER: [&str; 7] = [
    "code",
    "source",
    "f1",
    "accuracy",
    "baseline_f1",
    "net_overprediction_pct",
    "n_cells",
];

/// Writes report rows, optionally preceded by `# <comment>` provenance lines.
pub fn write_reports_csv<T: Real>(
    reports: &[CodeEvalReport<T>],
    comments: &[String],
    mut w: impl Write,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}").map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in reports {
        out.write_record([
            r.code_name.clone(),
            r.source_id.clone(),
            fixed(r.f1, 6),
            fixed(r.accuracy, 6),
            fixed(r.baseline_f1, 6),
            fixed(r.net_overprediction_pct, 4),
            r.n_cells.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CellKey, CodeGroup, Provenance};
    use proptest::prelude::*;

    fn set(source: &str, code: &str, labels: &[u8]) -> AnnotationSet {
        let mut s = AnnotationSet::new(source, Provenance::ModelPrediction);
        for (i, &l) in labels.iter().enumerate() {
            s.insert(CellKey::new(format!("i{i}"), 0, code), l).unwrap();
        }
        s
    }

    fn counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_by_hand() {
        let c = confusion(&set("p", "x", &[1, 1, 0, 1]), &set("g", "x", &[1, 0, 0, 0]), "x").unwrap();
        assert_eq!(c, counts(1, 2, 0, 1));
        let same = set("g", "x", &[1, 0, 1, 0, 0]);
        assert_eq!(confusion(&same, &same, "x").unwrap(), counts(2, 0, 0, 3));
        let c = confusion(&set("p", "x", &[1; 4]), &set("g", "x", &[0; 4]), "x").unwrap();
        assert_eq!(c.fp, 4);
    }

    #[test]
    fn confusion_uses_intersection_only() {
        let pred = set("p", "x", &[1, 0]);
        let gold = set("g", "x", &[1, 1, 1]);
        assert_eq!(confusion(&pred, &gold, "x").unwrap().total(), 2);
        assert!(matches!(confusion(&pred, &gold, "y"), Err(Error::EmptyIntersection(_))));
    }

    #[test]
    fn f1_and_accuracy_formulas() {
        assert!((f1::<f64>(&counts(2, 1, 1, 0)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1::<f64>(&counts(3, 0, 0, 5)), 1.0);
        assert_eq!(f1::<f64>(&counts(0, 0, 0, 7)), 0.0);
        assert_eq!(accuracy::<f64>(&counts(1, 1, 1, 1)).unwrap(), 0.5);
        assert_eq!(accuracy::<f64>(&counts(0, 2, 2, 0)).unwrap(), 0.0);
        assert!(accuracy::<f64>(&counts(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn baselines() {
        assert!((random_baseline_f1(0.1f64) - 0.1).abs() < 1e-15);
        assert_eq!(random_baseline_f1(0.0f64), 0.0);
        assert_eq!(random_baseline_f1(1.0f64), 1.0);
        let p = 0.25f64;
        assert!((baseline_f1(p, BaselineConvention::AlwaysPositive) - 2.0 * p / (1.0 + p)).abs() < 1e-15);
    }

    #[test]
    fn overprediction_examples() {
        assert_eq!(net_overprediction_from::<f64>(&counts(0, 3, 1, 4)), 25.0);
        assert_eq!(net_overprediction_from::<f64>(&counts(0, 4, 0, 4)), 50.0);
        let s = set("g", "x", &[1, 0, 1]);
        assert_eq!(net_overprediction::<f64>(&s, &s, "x").unwrap(), 0.0);
    }

    #[test]
    fn macro_average() {
        let codes = vec![
            CodeDefinition::new("a", "A", CodeGroup::Aspiration),
            CodeDefinition::new("b", "B", CodeGroup::Aspiration),
        ];
        // code a: tp=1 fp=1 fn=2 -> 2/5 = 0.4 ; code b: tp=3 fp=2 fn=2 -> 6/10 = 0.6
        let mut pred = AnnotationSet::new("p", Provenance::ModelPrediction);
        let mut gold = AnnotationSet::new("g", Provenance::Gold);
        let a = [(1, 1), (1, 0), (0, 1), (0, 1)];
        let b = [(1, 1), (1, 1), (1, 1), (1, 0), (1, 0), (0, 1), (0, 1)];
        for (code, cells) in [("a", &a[..]), ("b", &b[..])] {
            for (i, &(p, g)) in cells.iter().enumerate() {
                pred.insert(CellKey::new(format!("i{i}"), 0, code), p).unwrap();
                gold.insert(CellKey::new(format!("i{i}"), 0, code), g).unwrap();
            }
        }
        let s = evaluate_all::<f64>(&pred, &gold, &codes, BaselineConvention::MatchPrevalence).unwrap();
        assert!((s.reports[0].f1 - 0.4).abs() < 1e-15);
        assert!((s.reports[1].f1 - 0.6).abs() < 1e-15);
        assert!((s.macro_f1 - 0.5).abs() < 1e-15);
        assert!((s.pooled_accuracy - 4.0 / 11.0).abs() < 1e-15);

        let same = evaluate_all::<f64>(&gold, &gold, &codes, BaselineConvention::MatchPrevalence).unwrap();
        assert_eq!(same.macro_f1, 1.0);
        assert!(same.reports.iter().all(|r| r.net_overprediction_pct == 0.0));
        let one = evaluate_all::<f64>(&pred, &gold, &codes[..1], BaselineConvention::MatchPrevalence).unwrap();
        assert_eq!(one.macro_f1, one.reports[0].f1);
    }

    #[test]
    fn csv_layout() {
        let r = CodeEvalReport::<f64>::from_counts("x", "m", counts(1, 1, 0, 2), BaselineConvention::MatchPrevalence).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&[r], &["config_sha256=ab".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_sha256=ab");
        assert_eq!(lines[1], "code,source,f1,accuracy,baseline_f1,net_overprediction_pct,n_cells");
        assert_eq!(lines[2], "x,m,0.666667,0.750000,0.250000,25.0000,4");
    }

    proptest! {
        #[test]
        fn count_identities(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
            let mut c = ConfusionCounts::default();
            for &(p, g) in &pairs {
                c.add(p, g);
            }
            prop_assert_eq!(c.total(), pairs.len());
            let total = c.total() as f64;
            let acc: f64 = accuracy(&c).unwrap();
            prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, c.total());
            prop_assert!((acc - (1.0 - (c.fp + c.fn_) as f64 / total)).abs() <= f64::EPSILON);
            let f: f64 = f1(&c);
            prop_assert!((0.0..=1.0).contains(&f));
            if let Some(g) = f1_from_precision_recall(precision::<f64>(&c), recall(&c)) {
                prop_assert!((f - g).abs() < 1e-12);
            }
            let swapped = ConfusionCounts { tp: c.tp, fp: c.fn_, fn_: c.fp, tn: c.tn };
            prop_assert_eq!(net_overprediction_from::<f64>(&c), -net_overprediction_from::<f64>(&swapped));
            let mean_diff = 100.0 * ((c.tp + c.fp) as f64 - (c.tp + c.fn_) as f64) / total;
            prop_assert!((net_overprediction_from::<f64>(&c) - mean_diff).abs() < 1e-9);
        }
    }
}
