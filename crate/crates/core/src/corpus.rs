//! Interview corpora: data model, ingestion, validation and holdout splitting.
//!
//! A corpus is a list of interviews, each an ordered list of question/answer
//! pairs. Gold annotations, model predictions and LLM outputs all live in
//! [`AnnotationSet`]s keyed by `(interview, qa_index, code)`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Label payload meaning "code absent".
pub const NEGATIVE_LABEL: &str = "Not Applicable";

/// Source id of the expert annotations.
pub const GOLD_SOURCE: &str = "human";

/// Number of codes in the default codebook.
pub const DEFAULT_CODE_COUNT: usize = 19;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub interview_id: String,
    pub qa_index: usize,
}

impl UnitKey {
    pub fn new(interview_id: impl Into<String>, qa_index: usize) -> Self {
        Self {
            interview_id: interview_id.into(),
            qa_index,
        }
    }
}

impl fmt::Display for UnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.interview_id, self.qa_index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub interview_id: String,
    pub qa_index: usize,
    pub question: String,
    pub answer: String,
}

impl QaPair {
    pub fn key(&self) -> UnitKey {
        UnitKey::new(self.interview_id.clone(), self.qa_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    HumanAnnotated,
    MachineOnly,
    HoldoutTest,
}

impl Split {
    pub fn is_gold(self) -> bool {
        matches!(self, Split::HumanAnnotated | Split::HoldoutTest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::HumanAnnotated => "human_annotated",
            Split::MachineOnly => "machine_only",
            Split::HoldoutTest => "holdout_test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human_annotated" => Ok(Split::HumanAnnotated),
            "machine_only" => Ok(Split::MachineOnly),
            "holdout_test" => Ok(Split::HoldoutTest),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interview {
    pub interview_id: String,
    pub data_round: String,
    pub qa_pairs: Vec<QaPair>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeGroup {
    Aspiration,
    Ambition,
    Capacity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDefinition {
    pub code_name: String,
    pub positive_label_string: String,
    #[serde(default = "negative_label")]
    pub negative_label_string: String,
    pub group: CodeGroup,
}

fn negative_label() -> String {
    NEGATIVE_LABEL.to_string()
}

impl CodeDefinition {
    pub fn new(code_name: &str, positive: &str, group: CodeGroup) -> Self {
        Self {
            code_name: code_name.to_string(),
            positive_label_string: positive.to_string(),
            negative_label_string: NEGATIVE_LABEL.to_string(),
            group,
        }
    }
}

/// The 19-code default codebook: 2 aspiration, 10 ambition and 7 capacity codes.
pub fn default_codebook() -> Vec<CodeDefinition> {
    use CodeGroup::*;
    [
        ("aspiration_religious", "Religious Aspiration", Aspiration),
        ("aspiration_secular", "Secular Aspiration", Aspiration),
        ("education_high", "High Education", Ambition),
        ("education_low", "Low Education", Ambition),
        ("education_neutral", "Neutral Education", Ambition),
        ("education_religious", "Religious Education", Ambition),
        ("job_secular", "Secular Job", Ambition),
        ("marriage", "Marriage", Ambition),
        ("entrepreneur", "Entrepreneur", Ambition),
        ("migration", "Migration", Ambition),
        ("vocational_training", "Vocational Training", Ambition),
        ("no_ambition", "No Ambition", Ambition),
        ("ability_high", "High Ability", Capacity),
        ("ability_low", "Low Ability", Capacity),
        ("budget_high", "High Budget", Capacity),
        ("budget_low", "Low Budget", Capacity),
        ("awareness_high", "High Awareness", Capacity),
        ("awareness_low", "Low Awareness", Capacity),
        ("reliance_on_god", "Reliance on God", Capacity),
    ]
    .into_iter()
    .map(|(name, label, group)| CodeDefinition::new(name, label, group))
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    ModelPrediction,
    LlmPrediction,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub interview_id: String,
    pub qa_index: usize,
    pub code: String,
}

impl CellKey {
    pub fn new(interview_id: impl Into<String>, qa_index: usize, code: impl Into<String>) -> Self {
        Self {
            interview_id: interview_id.into(),
            qa_index,
            code: code.into(),
        }
    }

    pub fn unit(&self) -> UnitKey {
        UnitKey::new(self.interview_id.clone(), self.qa_index)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CellRecord {
    interview_id: String,
    qa_index: usize,
    code: String,
    label: u8,
}

#[derive(Serialize, Deserialize)]
struct AnnotationSetRepr {
    source_id: String,
    provenance: Provenance,
    cells: Vec<CellRecord>,
}

/// Binary code assignments from one annotation source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "AnnotationSetRepr", try_from = "AnnotationSetRepr")]
pub struct AnnotationSet {
    pub source_id: String,
    pub provenance: Provenance,
    cells: BTreeMap<CellKey, u8>,
}

impl From<AnnotationSet> for AnnotationSetRepr {
    fn from(set: AnnotationSet) -> Self {
        AnnotationSetRepr {
            source_id: set.source_id,
            provenance: set.provenance,
            cells: set
                .cells
                .into_iter()
                .map(|(k, label)| CellRecord {
                    interview_id: k.interview_id,
                    qa_index: k.qa_index,
                    code: k.code,
                    label,
                })
                .collect(),
        }
    }
}

impl TryFrom<AnnotationSetRepr> for AnnotationSet {
    type Error = Error;

    fn try_from(repr: AnnotationSetRepr) -> Result<Self> {
        let mut set = AnnotationSet::new(repr.source_id, repr.provenance);
        for c in repr.cells {
            set.insert(CellKey::new(c.interview_id, c.qa_index, c.code), c.label)?;
        }
        Ok(set)
    }
}

impl AnnotationSet {
    pub fn new(source_id: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            source_id: source_id.into(),
            provenance,
            cells: BTreeMap::new(),
        }
    }

    /// Adds a cell. A second label for the same `(unit, code)` is an error.
    pub fn insert(&mut self, key: CellKey, label: u8) -> Result<()> {
        if label > 1 {
            return Err(Error::Invalid(format!(
                "label {label} for {}#{}/{} is not binary",
                key.interview_id, key.qa_index, key.code
            )));
        }
        if self.cells.contains_key(&key) {
            return Err(Error::Invalid(format!(
                "source `{}` labels ({}, qa {}, {}) twice",
                self.source_id, key.interview_id, key.qa_index, key.code
            )));
        }
        self.cells.insert(key, label);
        Ok(())
    }

    /// Inserts or replaces a cell.
    pub fn set(&mut self, key: CellKey, label: u8) {
        self.cells.insert(key, label.min(1));
    }

    pub fn get(&self, key: &CellKey) -> Option<u8> {
        self.cells.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, u8)> {
        self.cells.iter().map(|(k, &v)| (k, v))
    }

    pub fn codes(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.code.as_str()).collect()
    }

    /// Cells for one code, in `(interview, qa_index)` order.
    pub fn code_cells<'a>(&'a self, code: &'a str) -> impl Iterator<Item = (&'a CellKey, u8)> + 'a {
        self.cells
            .iter()
            .filter(move |(k, _)| k.code == code)
            .map(|(k, &v)| (k, v))
    }

    /// All labels of one unit, by code.
    pub fn unit_labels(&self, unit: &UnitKey) -> BTreeMap<String, u8> {
        let start = CellKey::new(unit.interview_id.clone(), unit.qa_index, "");
        self.cells
            .range(start..)
            .take_while(|(k, _)| k.interview_id == unit.interview_id && k.qa_index == unit.qa_index)
            .map(|(k, &v)| (k.code.clone(), v))
            .collect()
    }

    /// Merges `other` into `self`; cells already present are kept.
    pub fn extend_missing(&mut self, other: &AnnotationSet) {
        for (k, v) in other.iter() {
            self.cells.entry(k.clone()).or_insert(v);
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&CellKey, u8) -> bool) {
        self.cells.retain(|k, v| keep(k, *v));
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// The twelve subject characteristics used as bias-test regressors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    DataRoundR3,
    Refugee,
    NumChild,
    HhHeadSex,
    HhHeadAge,
    ParentEduyears,
    ParentReledu,
    EldSex,
    EldAge,
    HhAssetIndex,
    HhIncome,
    IntTraumaExp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovariateKind {
    Binary,
    NonNegative,
    Real,
}

impl Covariate {
    pub const ALL: [Covariate; 12] = [
        Covariate::DataRoundR3,
        Covariate::Refugee,
        Covariate::NumChild,
        Covariate::HhHeadSex,
        Covariate::HhHeadAge,
        Covariate::ParentEduyears,
        Covariate::ParentReledu,
        Covariate::EldSex,
        Covariate::EldAge,
        Covariate::HhAssetIndex,
        Covariate::HhIncome,
        Covariate::IntTraumaExp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::DataRoundR3 => "data_round_r3",
            Covariate::Refugee => "refugee",
            Covariate::NumChild => "num_child",
            Covariate::HhHeadSex => "hh_head_sex",
            Covariate::HhHeadAge => "hh_head_age",
            Covariate::ParentEduyears => "parent_eduyears",
            Covariate::ParentReledu => "parent_reledu",
            Covariate::EldSex => "eld_sex",
            Covariate::EldAge => "eld_age",
            Covariate::HhAssetIndex => "hh_asset_index",
            Covariate::HhIncome => "hh_income",
            Covariate::IntTraumaExp => "int_trauma_exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Covariate> {
        Covariate::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        Covariate::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn kind(self) -> CovariateKind {
        match self {
            Covariate::DataRoundR3
            | Covariate::Refugee
            | Covariate::HhHeadSex
            | Covariate::ParentReledu
            | Covariate::EldSex => CovariateKind::Binary,
            Covariate::NumChild
            | Covariate::HhHeadAge
            | Covariate::ParentEduyears
            | Covariate::EldAge => CovariateKind::NonNegative,
            Covariate::HhAssetIndex | Covariate::HhIncome | Covariate::IntTraumaExp => {
                CovariateKind::Real
            }
        }
    }

    fn check(self, v: f64) -> std::result::Result<(), String> {
        if !v.is_finite() {
            return Err("not finite".into());
        }
        match self.kind() {
            CovariateKind::Binary if v != 0.0 && v != 1.0 => Err(format!("{v} is not 0/1")),
            CovariateKind::NonNegative if v < 0.0 => Err(format!("{v} is negative")),
            _ => Ok(()),
        }
    }
}

/// One subject's covariates. Missing cells stay `None`; nothing is imputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub interview_id: String,
    pub values: [Option<f64>; 12],
}

impl CovariateRecord {
    pub fn new(interview_id: impl Into<String>) -> Self {
        Self {
            interview_id: interview_id.into(),
            values: [None; 12],
        }
    }

    pub fn get(&self, c: Covariate) -> Option<f64> {
        self.values[c.index()]
    }

    pub fn set(&mut self, c: Covariate, v: Option<f64>) {
        self.values[c.index()] = v;
    }

    pub fn with(mut self, c: Covariate, v: f64) -> Self {
        self.set(c, Some(v));
        self
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Names of the fields that are missing.
    pub fn missing(&self) -> Vec<&'static str> {
        Covariate::ALL
            .into_iter()
            .filter(|c| self.get(*c).is_none())
            .map(Covariate::name)
            .collect()
    }
}

pub type CovariateTable = BTreeMap<String, CovariateRecord>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub interviews: Vec<Interview>,
    pub covariates: CovariateTable,
    pub codebook: Vec<CodeDefinition>,
    pub annotation_sets: Vec<AnnotationSet>,
}

impl Corpus {
    pub fn interview(&self, id: &str) -> Option<&Interview> {
        self.interviews.iter().find(|i| i.interview_id == id)
    }

    pub fn code(&self, name: &str) -> Option<&CodeDefinition> {
        self.codebook.iter().find(|c| c.code_name == name)
    }

    pub fn gold(&self) -> Option<&AnnotationSet> {
        self.annotation_sets
            .iter()
            .find(|s| s.provenance == Provenance::Gold)
    }

    pub fn gold_mut(&mut self) -> Option<&mut AnnotationSet> {
        self.annotation_sets
            .iter_mut()
            .find(|s| s.provenance == Provenance::Gold)
    }

    pub fn interviews_in(&self, split: Split) -> impl Iterator<Item = &Interview> {
        self.interviews.iter().filter(move |i| i.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.interviews_in(split).count()
    }

    pub fn qa_pairs(&self) -> impl Iterator<Item = &QaPair> {
        self.interviews.iter().flat_map(|i| i.qa_pairs.iter())
    }

    pub fn split_of(&self, interview_id: &str) -> Option<Split> {
        self.interview(interview_id).map(|i| i.split)
    }
}

/// NFC-normalizes and trims a text field.
pub fn normalize_text(s: &str) -> String {
    s.nfc().collect::<String>().trim().to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    interview_id: String,
    data_round: String,
    qa_index: usize,
    question: String,
    answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Loads a JSONL corpus against the given codebook.
pub fn load_corpus(path: &Path, codebook: &[CodeDefinition]) -> Result<Corpus> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f), codebook)
}

struct PendingInterview {
    id: String,
    data_round: String,
    split: Option<Split>,
    qa: Vec<QaPair>,
    labels: Vec<Option<BTreeMap<String, u8>>>,
    first_line: usize,
}

pub fn read_corpus(reader: impl BufRead, codebook: &[CodeDefinition]) -> Result<Corpus> {
    let known: HashSet<&str> = codebook.iter().map(|c| c.code_name.as_str()).collect();
    let mut pending: Vec<PendingInterview> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let question = normalize_text(&rec.question);
        let answer = normalize_text(&rec.answer);
        if question.is_empty() || answer.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "question and answer must be non-empty".into(),
            });
        }
        if let Some(labels) = &rec.labels {
            for (code, &v) in labels {
                if !known.contains(code.as_str()) {
                    return Err(Error::UnknownCode(code.clone()));
                }
                if v > 1 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("label for `{code}` must be 0 or 1"),
                    });
                }
            }
        }

        let current = match seen.get(&rec.interview_id) {
            Some(&idx) if idx + 1 == pending.len() => idx,
            Some(_) => return Err(Error::DuplicateInterview(rec.interview_id)),
            None => {
                seen.insert(rec.interview_id.clone(), pending.len());
                pending.push(PendingInterview {
                    id: rec.interview_id.clone(),
                    data_round: rec.data_round.clone(),
                    split: rec.split,
                    qa: Vec::new(),
                    labels: Vec::new(),
                    first_line: lineno,
                });
                pending.len() - 1
            }
        };
        let p = &mut pending[current];
        if p.data_round != rec.data_round {
            return Err(Error::Parse {
                line: lineno,
                message: format!("inconsistent data_round within interview `{}`", p.id),
            });
        }
        if p.split != rec.split {
            return Err(Error::Parse {
                line: lineno,
                message: format!("inconsistent split within interview `{}`", p.id),
            });
        }
        if p.qa.iter().any(|q| q.qa_index == rec.qa_index) {
            return Err(Error::DuplicateUnit {
                interview_id: p.id.clone(),
                qa_index: rec.qa_index,
            });
        }
        p.qa.push(QaPair {
            interview_id: rec.interview_id,
            qa_index: rec.qa_index,
            question,
            answer,
        });
        p.labels.push(rec.labels);
    }

    let mut gold = AnnotationSet::new(GOLD_SOURCE, Provenance::Gold);
    let mut interviews = Vec::with_capacity(pending.len());
    for p in pending {
        let labeled = p.labels.iter().filter(|l| l.is_some()).count();
        if labeled != 0 && labeled != p.qa.len() {
            return Err(Error::Parse {
                line: p.first_line,
                message: format!(
                    "interview `{}` has labels on {labeled} of {} QA pairs",
                    p.id,
                    p.qa.len()
                ),
            });
        }
        let split = match (p.split, labeled > 0) {
            (Some(s), has) if s.is_gold() != has => {
                return Err(Error::Parse {
                    line: p.first_line,
                    message: format!(
                        "interview `{}` split {} disagrees with label presence",
                        p.id,
                        s.as_str()
                    ),
                })
            }
            (Some(s), _) => s,
            (None, true) => Split::HumanAnnotated,
            (None, false) => Split::MachineOnly,
        };
        let mut rows: Vec<(QaPair, Option<BTreeMap<String, u8>>)> =
            p.qa.into_iter().zip(p.labels).collect();
        rows.sort_by_key(|(q, _)| q.qa_index);
        for (expected, (q, _)) in rows.iter().enumerate() {
            if q.qa_index != expected {
                return Err(Error::Parse {
                    line: p.first_line,
                    message: format!(
                        "interview `{}` qa_index values are not contiguous from 0",
                        p.id
                    ),
                });
            }
        }
        let mut qa_pairs = Vec::with_capacity(rows.len());
        for (q, labels) in rows {
            for (code, v) in labels.into_iter().flatten() {
                gold.insert(CellKey::new(q.interview_id.clone(), q.qa_index, code), v)?;
            }
            qa_pairs.push(q);
        }
        interviews.push(Interview {
            interview_id: p.id,
            data_round: p.data_round,
            qa_pairs,
            split,
        });
    }

    let annotation_sets = if gold.is_empty() { Vec::new() } else { vec![gold] };
    Ok(Corpus {
        interviews,
        covariates: BTreeMap::new(),
        codebook: codebook.to_vec(),
        annotation_sets,
    })
}

/// Writes the corpus in the JSONL ingest format. Gold labels are taken from
/// the corpus' gold set; the split is always written so holdout tags survive.
pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    let gold = corpus.gold();
    for interview in &corpus.interviews {
        for qa in &interview.qa_pairs {
            let labels = if interview.split.is_gold() {
                gold.map(|g| g.unit_labels(&qa.key()))
            } else {
                None
            };
            let rec = CorpusRecord {
                interview_id: qa.interview_id.clone(),
                data_round: interview.data_round.clone(),
                qa_index: qa.qa_index,
                question: qa.question.clone(),
                answer: qa.answer.clone(),
                labels,
                split: Some(interview.split),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
        }
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_corpus(corpus, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_codebook(path: &Path) -> Result<Vec<CodeDefinition>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let codes: Vec<CodeDefinition> = serde_json::from_reader(BufReader::new(f))?;
    Ok(codes)
}

pub fn save_codebook(codes: &[CodeDefinition], path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(codes)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

/// Loads an annotation set file and checks every cell against the corpus.
pub fn load_annotation_set(path: &Path, corpus: &Corpus) -> Result<AnnotationSet> {
    let set = AnnotationSet::read_json(path)?;
    check_annotation_keys(&set, corpus)?;
    Ok(set)
}

pub fn check_annotation_keys(set: &AnnotationSet, corpus: &Corpus) -> Result<()> {
    let units: HashSet<(&str, usize)> = corpus
        .qa_pairs()
        .map(|q| (q.interview_id.as_str(), q.qa_index))
        .collect();
    for (k, _) in set.iter() {
        if corpus.code(&k.code).is_none() {
            return Err(Error::UnknownCode(k.code.clone()));
        }
        if !units.contains(&(k.interview_id.as_str(), k.qa_index)) {
            return Err(Error::DanglingAnnotation {
                interview_id: k.interview_id.clone(),
                qa_index: k.qa_index,
            });
        }
    }
    Ok(())
}

pub const COVARIATE_HEADER: &str = "interview_id,data_round_r3,refugee,num_child,hh_head_sex,hh_head_age,parent_eduyears,parent_reledu,eld_sex,eld_age,hh_asset_index,hh_income,int_trauma_exp";

pub fn load_covariates(path: &Path) -> Result<CovariateTable> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_covariates(f)
}

pub fn read_covariates(reader: impl Read) -> Result<CovariateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let id_col = position("interview_id").ok_or_else(|| Error::MissingColumn("interview_id".into()))?;
    let mut cols = [0usize; 12];
    for c in Covariate::ALL {
        cols[c.index()] = position(c.name()).ok_or_else(|| Error::MissingColumn(c.name().into()))?;
    }
    if headers.len() != 13 {
        let extra: Vec<&str> = headers
            .iter()
            .filter(|h| *h != "interview_id" && Covariate::from_name(h).is_none())
            .collect();
        return Err(Error::Invalid(format!("unexpected covariate columns {extra:?}")));
    }

    let mut out = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let id = row.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::InvalidValue {
                line,
                column: "interview_id".into(),
                message: "empty id".into(),
            });
        }
        let mut rec = CovariateRecord::new(id.clone());
        for c in Covariate::ALL {
            let raw = row.get(cols[c.index()]).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| Error::InvalidValue {
                line,
                column: c.name().into(),
                message: format!("`{raw}` is not numeric"),
            })?;
            c.check(v).map_err(|message| Error::InvalidValue {
                line,
                column: c.name().into(),
                message,
            })?;
            rec.set(c, Some(v));
        }
        if out.insert(id.clone(), rec).is_some() {
            return Err(Error::DuplicateInterview(id));
        }
    }
    Ok(out)
}

pub fn write_covariates(table: &CovariateTable, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(COVARIATE_HEADER.split(','))?;
    for rec in table.values() {
        let mut row = vec![rec.interview_id.clone()];
        row.extend(
            rec.values
                .iter()
                .map(|v| v.map(|x| format!("{x}")).unwrap_or_default()),
        );
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::io("<covariates>", e))?;
    Ok(())
}

pub fn save_covariates(table: &CovariateTable, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_covariates(table, BufWriter::new(f))
}

/// Re-tags `n_test` uniformly sampled human-annotated interviews as holdout.
pub fn split_holdout(corpus: &Corpus, n_test: usize, seed: u64) -> Result<Corpus> {
    let candidates: Vec<usize> = corpus
        .interviews
        .iter()
        .enumerate()
        .filter(|(_, i)| i.split == Split::HumanAnnotated)
        .map(|(idx, _)| idx)
        .collect();
    if n_test > candidates.len() {
        return Err(Error::HoldoutTooLarge {
            requested: n_test,
            available: candidates.len(),
        });
    }
    let mut out = corpus.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in rand::seq::index::sample(&mut rng, candidates.len(), n_test) {
        out.interviews[candidates[pick]].split = Split::HoldoutTest;
    }
    Ok(out)
}

/// Which codebook size, if any, validation should demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodebookProfile {
    /// The 19-code default profile.
    Default,
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Checks every data-model invariant; an empty list means the corpus is valid.
pub fn validate_corpus(corpus: &Corpus, profile: CodebookProfile) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut ids = HashSet::new();
    let mut units = HashSet::new();
    for iv in &corpus.interviews {
        let entity = format!("interview {}", iv.interview_id);
        if !ids.insert(iv.interview_id.as_str()) {
            out.push(Violation::new(&entity, "interview_id must be unique"));
        }
        if iv.qa_pairs.is_empty() {
            out.push(Violation::new(&entity, "qa_pairs must be non-empty"));
        }
        for (pos, qa) in iv.qa_pairs.iter().enumerate() {
            let qe = format!("qa {}#{}", iv.interview_id, qa.qa_index);
            if qa.qa_index != pos {
                out.push(Violation::new(&qe, "qa_index must be contiguous from 0"));
            }
            if qa.interview_id != iv.interview_id {
                out.push(Violation::new(&qe, "qa pair belongs to a different interview"));
            }
            if qa.question.trim().is_empty() || qa.answer.trim().is_empty() {
                out.push(Violation::new(&qe, "question and answer must be non-empty"));
            }
            units.insert((iv.interview_id.as_str(), qa.qa_index));
        }
    }

    let mut names = HashSet::new();
    for code in &corpus.codebook {
        let entity = format!("code {}", code.code_name);
        if !names.insert(code.code_name.as_str()) {
            out.push(Violation::new(&entity, "code names must be unique"));
        }
        if code.positive_label_string == code.negative_label_string {
            out.push(Violation::new(&entity, "positive and negative labels must differ"));
        }
    }
    if profile == CodebookProfile::Default && corpus.codebook.len() != DEFAULT_CODE_COUNT {
        out.push(Violation::new(
            "codebook",
            format!(
                "default profile requires {DEFAULT_CODE_COUNT} codes, found {}",
                corpus.codebook.len()
            ),
        ));
    }

    let splits: HashMap<&str, Split> = corpus
        .interviews
        .iter()
        .map(|i| (i.interview_id.as_str(), i.split))
        .collect();
    for set in &corpus.annotation_sets {
        for (k, v) in set.iter() {
            let entity = format!("{} cell {}#{}/{}", set.source_id, k.interview_id, k.qa_index, k.code);
            if !units.contains(&(k.interview_id.as_str(), k.qa_index)) {
                out.push(Violation::new(&entity, "cell references a missing QA pair"));
            }
            if !names.contains(k.code.as_str()) {
                out.push(Violation::new(&entity, "cell references an unknown code"));
            }
            if v > 1 {
                out.push(Violation::new(&entity, "label must be binary"));
            }
            if set.provenance == Provenance::Gold {
                if let Some(s) = splits.get(k.interview_id.as_str()) {
                    if !s.is_gold() {
                        out.push(Violation::new(&entity, "gold label on a machine_only interview"));
                    }
                }
            }
        }
    }

    for rec in corpus.covariates.values() {
        for c in Covariate::ALL {
            if let Some(v) = rec.get(c) {
                if let Err(msg) = c.check(v) {
                    out.push(Violation::new(
                        format!("covariates {} {}", rec.interview_id, c.name()),
                        msg,
                    ));
                }
            }
        }
    }
    out
}
