//! Synthetic corpora with planted lexical signals, and error injection.
//!
//! Answers are bags of tokens drawn from a filler vocabulary; a positive
//! cell splices one of its code's signal tokens into the answer. Nothing
//! here resembles real language, which is enough for n-gram learners and
//! for exercising the audit battery against a known generator.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    default_codebook, AnnotationSet, CellKey, CodeDefinition, CodeGroup, Corpus, Covariate, CovariateRecord,
    CovariateTable, Interview, Provenance, QaPair, Split, GOLD_SOURCE, NEGATIVE_LABEL,
};
use crate::error::{Error, Result};
use crate::learners::derive_seed;

const QUESTIONS: &[&str] = &[
    "What is your dream for your child?",
    "What do you hope your child will do when grown up?",
    "How far do you think your child will study?",
    "What kind of work do you imagine for your child?",
    "Is there anything that stands in the way?",
    "What would you need to make that happen?",
    "Tell me about the plans you have for your family.",
    "What do you think about the future of your children?",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-words of `syllables` consonant-vowel pairs, in a
/// fixed order.
fn pseudo_words(syllables: usize, skip: usize, count: usize) -> Vec<String> {
    let base = CONSONANTS.len() * VOWELS.len();
    (skip..skip + count)
        .map(|mut i| {
            let mut w = String::with_capacity(2 * syllables);
            for _ in 0..syllables {
                let s = i % base;
                i /= base;
                w.push(CONSONANTS[s / VOWELS.len()] as char);
                w.push(VOWELS[s % VOWELS.len()] as char);
            }
            w
        })
        .collect()
}

/// Filler vocabulary of three-syllable pseudo-words.
pub fn default_vocabulary(size: usize) -> Vec<String> {
    pseudo_words(3, 0, size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCode {
    pub code_name: String,
    pub positive_label: String,
    pub group: CodeGroup,
    /// Probability that a QA pair carries the code.
    pub prevalence: f64,
    pub signal_tokens: Vec<String>,
    /// Probability that a positive answer contains a signal token.
    pub signal_strength: f64,
}

impl SynthCode {
    pub fn definition(&self) -> CodeDefinition {
        CodeDefinition {
            code_name: self.code_name.clone(),
            positive_label_string: self.positive_label.clone(),
            negative_label_string: NEGATIVE_LABEL.to_string(),
            group: self.group,
        }
    }
}

/// Per-covariate generating distributions. Binary covariates take a success
/// probability; counts are Poisson; the rest are Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateSpec {
    pub data_round_r3: f64,
    pub refugee: f64,
    pub num_child_mean: f64,
    pub hh_head_sex: f64,
    pub hh_head_age: (f64, f64),
    pub parent_eduyears_mean: f64,
    pub parent_reledu: f64,
    pub eld_sex: f64,
    pub eld_age: (f64, f64),
    pub hh_asset_index: (f64, f64),
    pub hh_income: (f64, f64),
    pub int_trauma_exp: (f64, f64),
    /// Probability that any single value is left missing.
    pub missing_rate: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            data_round_r3: 0.5,
            refugee: 0.5,
            num_child_mean: 3.0,
            hh_head_sex: 0.85,
            hh_head_age: (42.0, 10.0),
            parent_eduyears_mean: 3.0,
            parent_reledu: 0.3,
            eld_sex: 0.5,
            eld_age: (10.0, 4.0),
            hh_asset_index: (0.0, 1.0),
            hh_income: (0.0, 1.0),
            int_trauma_exp: (0.0, 1.0),
            missing_rate: 0.0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn check_gaussian(name: &str, (mean, sd): (f64, f64)) -> Result<()> {
    if mean.is_finite() && sd.is_finite() && sd >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} needs a finite mean and non-negative sd")))
    }
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("data_round_r3", self.data_round_r3),
            ("refugee", self.refugee),
            ("hh_head_sex", self.hh_head_sex),
            ("parent_reledu", self.parent_reledu),
            ("eld_sex", self.eld_sex),
            ("missing_rate", self.missing_rate),
        ] {
            check_probability(name, p)?;
        }
        for (name, m) in [("num_child_mean", self.num_child_mean), ("parent_eduyears_mean", self.parent_eduyears_mean)] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, g) in [
            ("hh_head_age", self.hh_head_age),
            ("eld_age", self.eld_age),
            ("hh_asset_index", self.hh_asset_index),
            ("hh_income", self.hh_income),
            ("int_trauma_exp", self.int_trauma_exp),
        ] {
            check_gaussian(name, g)?;
        }
        Ok(())
    }

    fn draw(&self, id: &str, rng: &mut impl Rng) -> CovariateRecord {
        let bern = |rng: &mut dyn rand::RngCore, p: f64| if rng.random_bool(p) { 1.0 } else { 0.0 };
        let poisson = |rng: &mut dyn rand::RngCore, m: f64| Poisson::new(m).map(|d| d.sample(rng)).unwrap_or(0.0);
        let gauss = |rng: &mut dyn rand::RngCore, (m, s): (f64, f64)| {
            Normal::new(m, s).map(|d| d.sample(rng)).unwrap_or(m)
        };
        let mut r = CovariateRecord::new(id);
        let values = [
            (Covariate::DataRoundR3, bern(rng, self.data_round_r3)),
            (Covariate::Refugee, bern(rng, self.refugee)),
            (Covariate::NumChild, poisson(rng, self.num_child_mean).max(1.0)),
            (Covariate::HhHeadSex, bern(rng, self.hh_head_sex)),
            (Covariate::HhHeadAge, gauss(rng, self.hh_head_age).round().max(18.0)),
            (Covariate::ParentEduyears, poisson(rng, self.parent_eduyears_mean)),
            (Covariate::ParentReledu, bern(rng, self.parent_reledu)),
            (Covariate::EldSex, bern(rng, self.eld_sex)),
            (Covariate::EldAge, gauss(rng, self.eld_age).round().max(0.0)),
            (Covariate::HhAssetIndex, gauss(rng, self.hh_asset_index)),
            (Covariate::HhIncome, gauss(rng, self.hh_income)),
            (Covariate::IntTraumaExp, gauss(rng, self.int_trauma_exp)),
        ];
        for (c, v) in values {
            let missing = self.missing_rate > 0.0 && rng.random_bool(self.missing_rate);
            r.set(c, (!missing).then_some(v));
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_interviews: usize,
    pub qa_per_interview: CountRange,
    pub answer_tokens: CountRange,
    pub vocabulary: Vec<String>,
    pub codes: Vec<SynthCode>,
    pub covariates: CovariateSpec,
    /// Interviews re-tagged as holdout after generation.
    pub n_holdout: usize,
    /// Extra interviews generated without gold labels.
    pub n_machine_only: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::planted(300, 1.0, 42)
    }
}

impl SynthSpec {
    /// All 19 default codes with three private signal tokens each and
    /// prevalence cycling through 0.10, 0.15 and 0.20.
    pub fn planted(n_interviews: usize, signal_strength: f64, seed: u64) -> Self {
        let codes = default_codebook()
            .into_iter()
            .enumerate()
            .map(|(i, c)| SynthCode {
                code_name: c.code_name,
                positive_label: c.positive_label_string,
                group: c.group,
                prevalence: [0.10, 0.15, 0.20][i % 3],
                signal_tokens: pseudo_words(4, 3 * i, 3),
                signal_strength,
            })
            .collect();
        Self {
            n_interviews,
            qa_per_interview: CountRange { min: 8, max: 12 },
            answer_tokens: CountRange { min: 8, max: 20 },
            vocabulary: default_vocabulary(400),
            codes,
            covariates: CovariateSpec::default(),
            n_holdout: 0,
            n_machine_only: 0,
            seed,
        }
    }

    /// Keeps only the named codes, in the given order.
    pub fn with_codes(mut self, names: &[&str]) -> Result<Self> {
        let mut kept = Vec::with_capacity(names.len());
        for name in names {
            let c = self
                .codes
                .iter()
                .find(|c| c.code_name == *name)
                .ok_or_else(|| Error::Config(format!("unknown synthetic code `{name}`")))?;
            kept.push(c.clone());
        }
        self.codes = kept;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_interviews == 0 {
            return Err(Error::Config("n_interviews must be positive".into()));
        }
        if self.n_holdout > self.n_interviews {
            return Err(Error::Config("n_holdout exceeds n_interviews".into()));
        }
        for (name, r) in [("qa_per_interview", self.qa_per_interview), ("answer_tokens", self.answer_tokens)] {
            if r.min == 0 || r.min > r.max {
                return Err(Error::Config(format!("{name} needs 1 <= min <= max")));
            }
        }
        if self.vocabulary.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let vocab: BTreeSet<&str> = self.vocabulary.iter().map(String::as_str).collect();
        let mut names = BTreeSet::new();
        for c in &self.codes {
            if !names.insert(c.code_name.as_str()) {
                return Err(Error::Config(format!("code `{}` listed twice", c.code_name)));
            }
            if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
                return Err(Error::Config(format!("{}: prevalence must lie in (0, 1)", c.code_name)));
            }
            check_probability(&format!("{}: signal_strength", c.code_name), c.signal_strength)?;
            if c.signal_strength > 0.0 && c.signal_tokens.is_empty() {
                return Err(Error::Config(format!("{}: no signal tokens", c.code_name)));
            }
            if let Some(t) = c.signal_tokens.iter().find(|t| vocab.contains(t.as_str())) {
                return Err(Error::Config(format!("{}: signal token `{t}` is also filler", c.code_name)));
            }
        }
        self.covariates.validate()
    }

    pub fn codebook(&self) -> Vec<CodeDefinition> {
        self.codes.iter().map(SynthCode::definition).collect()
    }
}

struct GeneratedInterview {
    interview: Interview,
    covariates: CovariateRecord,
    cells: Vec<(CellKey, u8)>,
}

fn generate_interview(spec: &SynthSpec, index: usize, gold: bool) -> GeneratedInterview {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let id = format!("S{:05}", index + 1);
    let covariates = spec.covariates.draw(&id, &mut rng);
    let round = if covariates.get(Covariate::DataRoundR3) == Some(1.0) { "r3" } else { "r2" };
    let n_qa = spec.qa_per_interview.sample(&mut rng);
    let mut qa_pairs = Vec::with_capacity(n_qa);
    let mut cells = Vec::new();
    for qa_index in 0..n_qa {
        let len = spec.answer_tokens.sample(&mut rng);
        let mut tokens: Vec<&str> = (0..len)
            .map(|_| spec.vocabulary.choose(&mut rng).map(String::as_str).unwrap_or(""))
            .collect();
        for code in &spec.codes {
            let positive = rng.random_bool(code.prevalence);
            if positive && rng.random_bool(code.signal_strength) {
                if let Some(tok) = code.signal_tokens.choose(&mut rng) {
                    let at = rng.random_range(0..=tokens.len());
                    tokens.insert(at, tok);
                }
            }
            if gold {
                cells.push((CellKey::new(id.clone(), qa_index, code.code_name.clone()), u8::from(positive)));
            }
        }
        let question = QUESTIONS.choose(&mut rng).copied().unwrap_or(QUESTIONS[0]);
        qa_pairs.push(QaPair {
            interview_id: id.clone(),
            qa_index,
            question: question.to_string(),
            answer: tokens.join(" "),
        });
    }
    GeneratedInterview {
        interview: Interview {
            interview_id: id,
            data_round: round.to_string(),
            qa_pairs,
            split: if gold { Split::HumanAnnotated } else { Split::MachineOnly },
        },
        covariates,
        cells,
    }
}

/// Builds the corpus, its gold annotation set and covariates. Identical for
/// identical specs.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let total = spec.n_interviews + spec.n_machine_only;
    let generated: Vec<GeneratedInterview> = (0..total)
        .into_par_iter()
        .map(|i| generate_interview(spec, i, i < spec.n_interviews))
        .collect();
    let mut gold = AnnotationSet::new(GOLD_SOURCE, Provenance::Gold);
    let mut interviews = Vec::with_capacity(total);
    let mut covariates = CovariateTable::new();
    for g in generated {
        for (k, v) in g.cells {
            gold.set(k, v);
        }
        covariates.insert(g.interview.interview_id.clone(), g.covariates);
        interviews.push(g.interview);
    }
    let corpus = Corpus {
        interviews,
        covariates,
        codebook: spec.codebook(),
        annotation_sets: vec![gold],
    };
    if spec.n_holdout > 0 {
        crate::corpus::split_holdout(&corpus, spec.n_holdout, derive_seed(spec.seed, u64::MAX))
    } else {
        Ok(corpus)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    #[default]
    UniformFlip,
    CovariateFlip,
}

/// Which cells an error may touch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDirection {
    /// Any cell may flip.
    #[default]
    Both,
    /// Only negatives flip, so every error is an over-prediction.
    ToPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    pub kind: ErrorKind,
    pub base_rate: f64,
    /// Required by `covariate_flip`.
    pub covariate: Option<Covariate>,
    pub delta: f64,
    pub direction: FlipDirection,
    pub seed: u64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            kind: ErrorKind::UniformFlip,
            base_rate: 0.0,
            covariate: None,
            delta: 0.0,
            direction: FlipDirection::Both,
            seed: 0,
        }
    }
}

impl ErrorModel {
    pub fn uniform(base_rate: f64, seed: u64) -> Self {
        Self {
            base_rate,
            seed,
            ..Default::default()
        }
    }

    pub fn covariate(base_rate: f64, covariate: Covariate, delta: f64, seed: u64) -> Self {
        Self {
            kind: ErrorKind::CovariateFlip,
            base_rate,
            covariate: Some(covariate),
            delta,
            seed,
            ..Default::default()
        }
    }

    /// Flip probability for one interview.
    pub fn effective_rate(&self, interview_id: &str, covariates: &CovariateTable) -> Result<f64> {
        let rate = match self.kind {
            ErrorKind::UniformFlip => self.base_rate,
            ErrorKind::CovariateFlip => {
                let c = self
                    .covariate
                    .ok_or_else(|| Error::Config("covariate_flip needs a covariate".into()))?;
                let v = covariates
                    .get(interview_id)
                    .and_then(|r| r.get(c))
                    .ok_or_else(|| Error::Invalid(format!("{interview_id}: covariate `{}` is missing", c.name())))?;
                self.base_rate + self.delta * v
            }
        };
        if (0.0..=1.0).contains(&rate) {
            Ok(rate)
        } else {
            Err(Error::Invalid(format!(
                "interview {interview_id} gets flip rate {rate}, outside [0, 1]"
            )))
        }
    }
}

/// Copies `gold` with cells independently flipped at each interview's
/// effective rate. The result is tagged as a model prediction.
pub fn inject_errors(
    gold: &AnnotationSet,
    covariates: &CovariateTable,
    model: &ErrorModel,
    source_id: &str,
) -> Result<AnnotationSet> {
    let mut out = AnnotationSet::new(source_id, Provenance::ModelPrediction);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut current: Option<(String, f64)> = None;
    for (key, label) in gold.iter() {
        let rate = match &current {
            Some((id, r)) if *id == key.interview_id => *r,
            _ => {
                let r = model.effective_rate(&key.interview_id, covariates)?;
                current = Some((key.interview_id.clone(), r));
                r
            }
        };
        // one draw per cell keeps the stream aligned across directions
        let flip = rng.random_bool(rate);
        let eligible = model.direction == FlipDirection::Both || label == 0;
        out.set(key.clone(), if flip && eligible { 1 - label } else { label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::tokenize;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec::planted(120, 1.0, seed)
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_corpus(&small(3)).unwrap();
        let b = generate_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(4)).unwrap();
        assert_ne!(a.interviews, c.interviews);
    }

    #[test]
    fn full_strength_signal_in_every_positive() {
        let spec = small(5);
        let corpus = generate_corpus(&spec).unwrap();
        let gold = corpus.gold().unwrap();
        let mut positives = 0;
        for qa in corpus.qa_pairs() {
            let tokens: BTreeSet<String> = tokenize(&qa.answer).into_iter().collect();
            for code in &spec.codes {
                let label = gold.get(&CellKey::new(qa.interview_id.clone(), qa.qa_index, code.code_name.clone()));
                let has_signal = code.signal_tokens.iter().any(|t| tokens.contains(t));
                if label == Some(1) {
                    positives += 1;
                    assert!(has_signal);
                } else {
                    assert!(!has_signal);
                }
            }
        }
        assert!(positives > 100);
    }

    #[test]
    fn prevalence_within_binomial_band() {
        let mut spec = SynthSpec::planted(400, 1.0, 11).with_codes(&["marriage"]).unwrap();
        spec.codes[0].prevalence = 0.2;
        let corpus = generate_corpus(&spec).unwrap();
        let gold = corpus.gold().unwrap();
        let n = gold.len() as f64;
        let p = gold.iter().filter(|(_, v)| *v == 1).count() as f64 / n;
        let sigma = (0.2 * 0.8 / n).sqrt();
        assert!((p - 0.2).abs() < 3.0 * sigma, "p={p} n={n}");
    }

    #[test]
    fn zero_strength_plants_nothing() {
        let spec = SynthSpec::planted(50, 0.0, 1).with_codes(&["migration"]).unwrap();
        let corpus = generate_corpus(&spec).unwrap();
        let sig = &spec.codes[0].signal_tokens;
        assert!(corpus.qa_pairs().all(|qa| !sig.iter().any(|t| qa.answer.contains(t.as_str()))));
    }

    #[test]
    fn covariates_follow_spec() {
        let corpus = generate_corpus(&SynthSpec::planted(2000, 1.0, 9).with_codes(&["marriage"]).unwrap()).unwrap();
        let refugees = corpus
            .covariates
            .values()
            .filter(|r| r.get(Covariate::Refugee) == Some(1.0))
            .count() as f64;
        let n = corpus.covariates.len() as f64;
        assert!((refugees / n - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
        assert!(corpus.covariates.values().all(CovariateRecord::is_complete));
        for i in &corpus.interviews {
            let r3 = corpus.covariates[&i.interview_id].get(Covariate::DataRoundR3) == Some(1.0);
            assert_eq!(i.data_round == "r3", r3);
        }
    }

    #[test]
    fn holdout_and_machine_only() {
        let mut spec = small(2);
        spec.n_holdout = 20;
        spec.n_machine_only = 10;
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.count(Split::HoldoutTest), 20);
        assert_eq!(corpus.count(Split::MachineOnly), 10);
        let gold = corpus.gold().unwrap();
        let machine: BTreeSet<&str> = corpus.interviews_in(Split::MachineOnly).map(|i| i.interview_id.as_str()).collect();
        assert!(gold.iter().all(|(k, _)| !machine.contains(k.interview_id.as_str())));
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(1);
        s.codes[0].prevalence = 0.0;
        assert!(generate_corpus(&s).is_err());
        let mut s = small(1);
        s.codes[0].signal_tokens = vec![s.vocabulary[0].clone()];
        assert!(s.validate().is_err());
        let mut s = small(1);
        s.qa_per_interview = CountRange { min: 3, max: 2 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn trivial_error_rates() {
        let corpus = generate_corpus(&small(7)).unwrap();
        let gold = corpus.gold().unwrap();
        let same = inject_errors(gold, &corpus.covariates, &ErrorModel::uniform(0.0, 1), "m").unwrap();
        assert!(gold.iter().all(|(k, v)| same.get(k) == Some(v)));
        assert_eq!(same.provenance, Provenance::ModelPrediction);
        let flipped = inject_errors(gold, &corpus.covariates, &ErrorModel::uniform(1.0, 1), "m").unwrap();
        assert!(gold.iter().all(|(k, v)| flipped.get(k) == Some(1 - v)));
        let mut up = ErrorModel::uniform(1.0, 1);
        up.direction = FlipDirection::ToPositive;
        let up = inject_errors(gold, &corpus.covariates, &up, "m").unwrap();
        assert!(up.iter().all(|(_, v)| v == 1));
    }

    #[test]
    fn covariate_flip_rates_by_group() {
        let corpus = generate_corpus(&SynthSpec::planted(600, 1.0, 13)).unwrap();
        let gold = corpus.gold().unwrap();
        let model = ErrorModel::covariate(0.05, Covariate::Refugee, 0.15, 99);
        let pred = inject_errors(gold, &corpus.covariates, &model, "m").unwrap();
        let (mut flips, mut cells) = ([0usize; 2], [0usize; 2]);
        for (k, v) in gold.iter() {
            let g = corpus.covariates[&k.interview_id].get(Covariate::Refugee).unwrap() as usize;
            cells[g] += 1;
            flips[g] += usize::from(pred.get(k) != Some(v));
        }
        for (g, want) in [(0, 0.05), (1, 0.20)] {
            let n = cells[g] as f64;
            let rate = flips[g] as f64 / n;
            assert!((rate - want).abs() < 4.0 * (want * (1.0 - want) / n).sqrt(), "group {g}: {rate}");
        }
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        let corpus = generate_corpus(&small(7)).unwrap();
        let model = ErrorModel::covariate(0.95, Covariate::Refugee, 0.15, 1);
        assert!(inject_errors(corpus.gold().unwrap(), &corpus.covariates, &model, "m").is_err());
    }
}
