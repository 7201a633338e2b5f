//! One function per subcommand. Each reads the run configuration, writes
//! its artifacts under the run directory and returns a short summary for
//! stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anno_audit_core::biasaudit::{self, BiasTestResult};
use anno_audit_core::corpus::{
    self, default_codebook, AnnotationSet, CodeDefinition, CodebookProfile, Corpus, CovariateTable, Split, Violation,
};
use anno_audit_core::featurize::{load_precomputed_embeddings, EmbeddingTable};
use anno_audit_core::llmbridge::{self, LabeledQa, ProviderKind, ResponseCache, TemplateStore};
use anno_audit_core::metrics::{self, BaselineConvention, EvalSummary};
use anno_audit_core::pipeline::{
    self, aggregate_to_interview, enhance_sample, CodeModel, InterviewScoreTable, RunManifest, ScoreOrigin,
};
use anno_audit_core::scalar::fixed;
use anno_audit_core::synthlab;
use anno_audit_core::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::run::{file_sha256, io_err, write_bytes, write_json, write_stamped_json, DataManifest, RunDir, Stamp};
use crate::svg;

pub const MODEL_SOURCE: &str = "model";
pub const LLM_SOURCE: &str = "llm";

/// A command failure, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Violations(Vec<Violation>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Core(e) => json!({
                "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": self.exit_code() }
            }),
            Failure::Violations(v) => json!({
                "error": {
                    "kind": "corpus_validation",
                    "message": format!("{} corpus invariant violations", v.len()),
                    "exit_code": self.exit_code(),
                    "violations": v,
                }
            }),
        }
    }
}

pub type CmdResult = std::result::Result<serde_json::Value, Failure>;

pub struct Context {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub config_sha256: String,
    pub svg: bool,
}

impl Context {
    fn run_dir(&self) -> Result<RunDir> {
        RunDir::create(&self.cfg.paths.run_dir)
    }

    fn manifest(&self, seed: u64, prepared: Option<&Prepared>, codes: &[CodeDefinition]) -> RunManifest {
        let mut m = RunManifest::new(self.command, seed, self.config_sha256.clone());
        if let Some(p) = prepared {
            m.data_sha256 = p.inputs.clone();
            m.data_sha256
                .insert("data_manifest".into(), p.stamp.data_manifest_sha256.clone());
        }
        m.codes = codes.iter().map(|c| c.code_name.clone()).collect();
        m
    }
}

/// The validated corpus in the run directory's canonical form.
pub struct Prepared {
    pub run: RunDir,
    pub corpus: Corpus,
    pub covariates: CovariateTable,
    pub stamp: Stamp,
    pub inputs: BTreeMap<String, String>,
    pub manifest: DataManifest,
}

impl Prepared {
    fn gold(&self) -> Result<&AnnotationSet> {
        self.corpus
            .gold()
            .ok_or_else(|| Error::Invalid("corpus carries no gold labels".into()))
    }
}

fn load_codebook(cfg: &RunConfig) -> Result<Vec<CodeDefinition>> {
    match &cfg.paths.codebook {
        Some(p) => corpus::load_codebook(p),
        None => Ok(default_codebook()),
    }
}

/// Loads and validates the inputs, assigns the holdout split and writes the
/// canonical copies plus `data_manifest.json`. Identical inputs give
/// byte-identical outputs.
pub fn prepare(ctx: &Context) -> std::result::Result<Prepared, Failure> {
    let cfg = &ctx.cfg;
    cfg.validate(true)?;
    let run = ctx.run_dir()?;
    let codebook = load_codebook(cfg)?;
    let mut corpus = corpus::load_corpus(&cfg.paths.corpus, &codebook)?;
    let covariates = corpus::load_covariates(&cfg.paths.covariates)?;
    corpus.covariates = covariates.clone();
    let profile = if cfg.paths.codebook.is_some() {
        CodebookProfile::Any
    } else {
        CodebookProfile::Default
    };
    let violations = corpus::validate_corpus(&corpus, profile);
    if !violations.is_empty() {
        return Err(Failure::Violations(violations));
    }
    let assign = corpus.count(Split::HoldoutTest) == 0 && cfg.pipeline.n_test > 0;
    if assign {
        corpus = corpus::split_holdout(&corpus, cfg.pipeline.n_test, cfg.pipeline.seed)?;
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("corpus".to_string(), file_sha256(&cfg.paths.corpus)?);
    inputs.insert("covariates".to_string(), file_sha256(&cfg.paths.covariates)?);
    if let Some(p) = &cfg.paths.codebook {
        inputs.insert("codebook".to_string(), file_sha256(p)?);
    }
    if let Some(p) = &cfg.paths.embeddings {
        inputs.insert("embeddings".to_string(), file_sha256(p)?);
    }

    corpus::save_corpus(&corpus, &run.file(&["data", "corpus.jsonl"])?)?;
    corpus::save_covariates(&covariates, &run.covariates())?;
    corpus::save_codebook(&corpus.codebook, &run.codebook())?;

    let mut by_split = BTreeMap::new();
    for split in [Split::HumanAnnotated, Split::MachineOnly, Split::HoldoutTest] {
        by_split.insert(split.as_str().to_string(), corpus.count(split));
    }
    let gold = corpus.gold();
    let manifest = DataManifest {
        inputs: inputs.clone(),
        interviews_by_split: by_split,
        qa_pairs: corpus.qa_pairs().count(),
        codes: corpus.codebook.len(),
        gold_cells: gold.map_or(0, AnnotationSet::len),
        gold_positives_by_code: corpus
            .codebook
            .iter()
            .map(|c| {
                let n = gold.map_or(0, |g| g.code_cells(&c.code_name).filter(|(_, v)| *v == 1).count());
                (c.code_name.clone(), n)
            })
            .collect(),
        covariate_records: covariates.len(),
        incomplete_covariate_records: covariates.values().filter(|r| !r.is_complete()).count(),
        holdout_seed: cfg.pipeline.seed,
        holdout_assigned: assign,
    };
    write_json(&run.data_manifest(), &manifest)?;
    let stamp = Stamp {
        config_sha256: ctx.config_sha256.clone(),
        data_manifest_sha256: file_sha256(&run.data_manifest())?,
    };
    Ok(Prepared {
        run,
        corpus,
        covariates,
        stamp,
        inputs,
        manifest,
    })
}

fn select_codes(names: &[String], corpus: &Corpus) -> Result<Vec<CodeDefinition>> {
    if names.is_empty() {
        return Ok(corpus.codebook.clone());
    }
    names
        .iter()
        .map(|n| corpus.code(n).cloned().ok_or_else(|| Error::UnknownCode(n.clone())))
        .collect()
}

fn load_embeddings(cfg: &RunConfig) -> Result<Option<Arc<EmbeddingTable<f64>>>> {
    match (&cfg.paths.embeddings, cfg.paths.embedding_dim) {
        (Some(p), Some(dim)) => Ok(Some(Arc::new(load_precomputed_embeddings(p, dim)?))),
        _ => Ok(None),
    }
}

pub fn ingest(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let path = p.run.write_manifest(&ctx.manifest(ctx.cfg.pipeline.seed, Some(&p), &p.corpus.codebook))?;
    Ok(json!({
        "command": ctx.command,
        "run_dir": p.run.root,
        "data_manifest": p.manifest,
        "data_manifest_sha256": p.stamp.data_manifest_sha256,
        "manifest": path,
    }))
}

fn read_labeled_rows(path: &Path) -> Result<Vec<LabeledQa>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CvSummaryRow {
    code: String,
    best_config: String,
    best_mean_f1: f64,
    n_training_units: usize,
    n_configs: usize,
    n_failed_configs: usize,
}

pub fn train(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let cfg = &ctx.cfg;
    let codes = select_codes(&cfg.pipeline.codes, &p.corpus)?;
    let embeddings = load_embeddings(cfg)?;
    let augmented: Vec<LabeledQa> = if cfg.pipeline.use_augmented {
        let path = p.run.augmented_units();
        if !path.exists() {
            return Err(Error::Config("pipeline.use_augmented is set but `augment` has not been run".into()).into());
        }
        read_labeled_rows(&path)?.into_iter().filter(|r| r.augmented).collect()
    } else {
        Vec::new()
    };

    let mut summary = Vec::with_capacity(codes.len());
    let mut space_used = None;
    for code in &codes {
        let name = code.code_name.as_str();
        let mut units = pipeline::gold_units(&p.corpus, name, &[Split::HumanAnnotated])?;
        units.extend(llmbridge::training_units_for(&augmented, name));
        let space = cfg.pipeline.search_space(units.len());
        log::info!("{name}: {} units, {} configurations", units.len(), space.len());
        let cv = pipeline::grid_search(name, &units, &space, cfg.pipeline.k, cfg.pipeline.seed, embeddings.clone())?;
        let n_failed = cv.scores.iter().filter(|s| s.error.is_some()).count();
        let model = pipeline::fit_final(name, &units, cv, embeddings.clone())?;
        write_json(&p.run.file(&["models", &format!("{name}.json")])?, &model)?;
        write_stamped_json(&p.run.file(&["reports", "cv", &format!("{name}.json")])?, &p.stamp, &model.cv)?;
        summary.push(CvSummaryRow {
            code: name.to_string(),
            best_config: model.cv.best.label(),
            best_mean_f1: model.cv.best_mean_f1,
            n_training_units: model.n_training_units,
            n_configs: model.cv.scores.len(),
            n_failed_configs: n_failed,
        });
        space_used = Some(space);
    }

    let path = p.run.file(&["reports", "cv_summary.csv"])?;
    let mut buf = Vec::new();
    p.stamp.write_comments(&mut buf)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in &summary {
            w.serialize(row).map_err(Error::from)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    write_bytes(&path, &buf)?;

    let mut manifest = ctx.manifest(cfg.pipeline.seed, Some(&p), &codes);
    manifest.search_space = space_used;
    p.run.write_manifest(&manifest)?;
    Ok(json!({ "command": ctx.command, "run_dir": p.run.root, "codes": summary }))
}

fn load_model(run: &RunDir, code: &str) -> Result<CodeModel<f64>> {
    let path = run.model(code);
    let f = File::open(&path)
        .map_err(|_| Error::Config(format!("no trained model for `{code}`; run `train` first")))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn write_scores_csv(path: &Path, stamp: &Stamp, rows: &[(String, String, f64, Option<ScoreOrigin>)]) -> Result<()> {
    let mut buf = Vec::new();
    stamp.write_comments(&mut buf)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let with_origin = rows.iter().any(|r| r.3.is_some());
        if with_origin {
            w.write_record(["interview_id", "code", "score", "origin"])?;
        } else {
            w.write_record(["interview_id", "code", "score"])?;
        }
        for (id, code, score, origin) in rows {
            let s = fixed(*score, 6);
            match origin {
                Some(o) => {
                    let o = if *o == ScoreOrigin::Gold { "gold" } else { "predicted" };
                    w.write_record([id.as_str(), code.as_str(), s.as_str(), o])?;
                }
                None => w.write_record([id.as_str(), code.as_str(), s.as_str()])?,
            }
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    write_bytes(path, &buf)
}

pub fn predict(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let cfg = &ctx.cfg;
    let codes = select_codes(&cfg.pipeline.codes, &p.corpus)?;
    let embeddings = load_embeddings(cfg)?;
    let targets = [Split::HoldoutTest, Split::MachineOnly];
    let mut set = AnnotationSet::new(MODEL_SOURCE, corpus::Provenance::ModelPrediction);
    let gold = p.gold()?;
    let (mut predicted_rows, mut enhanced_rows) = (Vec::new(), Vec::new());
    for code in &codes {
        let name = code.code_name.as_str();
        let mut model = load_model(&p.run, name)?;
        if model.featurizer.needs_embeddings() {
            let table = embeddings
                .clone()
                .ok_or_else(|| Error::Config(format!("model for `{name}` needs paths.embeddings")))?;
            model.attach_embeddings(table)?;
        }
        let preds = pipeline::predict_annotations(&model, &p.corpus, &targets, MODEL_SOURCE)?;
        for (k, v) in preds.iter() {
            set.insert(k.clone(), v)?;
        }
        let table: InterviewScoreTable<f64> = aggregate_to_interview(&preds, name, cfg.pipeline.aggregation, None);
        let gold_table: InterviewScoreTable<f64> = aggregate_to_interview(gold, name, cfg.pipeline.aggregation, None);
        let enhanced = enhance_sample(&gold_table, &table)?;
        predicted_rows.extend(table.scores.iter().map(|(id, &s)| (id.clone(), name.to_string(), s, None)));
        enhanced_rows.extend(
            enhanced
                .scores
                .iter()
                .map(|(id, &(s, o))| (id.clone(), name.to_string(), s, Some(o))),
        );
    }
    set.write_json(&p.run.file(&["annotations", &format!("{MODEL_SOURCE}.json")])?)?;
    write_scores_csv(&p.run.file(&["scores", &format!("{MODEL_SOURCE}.csv")])?, &p.stamp, &predicted_rows)?;
    write_scores_csv(&p.run.file(&["scores", "enhanced.csv"])?, &p.stamp, &enhanced_rows)?;
    p.run.write_manifest(&ctx.manifest(cfg.pipeline.seed, Some(&p), &codes))?;
    Ok(json!({
        "command": ctx.command,
        "run_dir": p.run.root,
        "cells": set.len(),
        "interview_scores": predicted_rows.len(),
    }))
}

fn load_sources(p: &Prepared, wanted: &[String]) -> Result<Vec<AnnotationSet>> {
    let available = p.run.annotation_sources()?;
    let names: Vec<String> = if wanted.is_empty() {
        available
    } else {
        for w in wanted {
            if !available.contains(w) {
                return Err(Error::Config(format!("annotation source `{w}` not found in the run directory")));
            }
        }
        wanted.to_vec()
    };
    if names.is_empty() {
        return Err(Error::Config(
            "no annotation sources in the run directory; run `predict`, `annotate-llm` or `synth` first".into(),
        ));
    }
    names
        .iter()
        .map(|n| corpus::load_annotation_set(&p.run.annotations(n), &p.corpus))
        .collect()
}

/// Codes both selected and present in `set`.
fn codes_in(set: &AnnotationSet, codes: &[CodeDefinition]) -> Vec<CodeDefinition> {
    let present = set.codes();
    codes
        .iter()
        .filter(|c| present.contains(c.code_name.as_str()))
        .cloned()
        .collect()
}

#[derive(Serialize)]
struct SourceSummary {
    source: String,
    codes: usize,
    macro_f1: f64,
    pooled_accuracy: f64,
    baseline: BaselineConvention,
}

pub fn evaluate(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let codes = select_codes(&ctx.cfg.pipeline.codes, &p.corpus)?;
    let gold = p.gold()?;
    let sources = load_sources(&p, &ctx.cfg.audit.sources)?;
    let mut summaries: Vec<EvalSummary<f64>> = Vec::new();
    for set in &sources {
        let mut scoped = set.clone();
        scoped.retain(|k, _| p.corpus.split_of(&k.interview_id) == Some(Split::HoldoutTest));
        let (scoped, scope) = if scoped.is_empty() {
            (set.clone(), "all_gold")
        } else {
            (scoped, "holdout")
        };
        let present = codes_in(&scoped, &codes);
        if present.is_empty() {
            log::warn!("{}: no selected code present; skipped", set.source_id);
            continue;
        }
        log::info!("{}: evaluating {} codes on {scope} cells", set.source_id, present.len());
        summaries.push(metrics::evaluate_all(&scoped, gold, &present, BaselineConvention::default())?);
    }
    let reports: Vec<_> = summaries.iter().flat_map(|s| s.reports.iter().cloned()).collect();
    let path = p.run.file(&["reports", "metrics.csv"])?;
    let mut buf = Vec::new();
    metrics::write_reports_csv(&reports, &p.stamp.comments(), &mut buf)?;
    write_bytes(&path, &buf)?;
    let overview: Vec<SourceSummary> = summaries
        .iter()
        .map(|s| SourceSummary {
            source: s.source_id.clone(),
            codes: s.reports.len(),
            macro_f1: s.macro_f1,
            pooled_accuracy: s.pooled_accuracy,
            baseline: s.baseline,
        })
        .collect();
    write_stamped_json(&p.run.file(&["reports", "metrics_summary.json"])?, &p.stamp, &overview)?;
    p.run.write_manifest(&ctx.manifest(ctx.cfg.pipeline.seed, Some(&p), &codes))?;
    Ok(json!({ "command": ctx.command, "run_dir": p.run.root, "sources": overview }))
}

#[derive(Serialize)]
struct AuditFailure {
    source: String,
    code: String,
    kind: String,
    message: String,
}

#[derive(Serialize)]
struct AuditReport<'a> {
    alpha: &'a [f64],
    regressors: Vec<&'static str>,
    std_errors: biasaudit::StdErrorKind,
    /// Per source and alpha, the number of codes whose F-test rejects.
    rejections: BTreeMap<String, BTreeMap<String, usize>>,
    results: &'a [BiasTestResult<f64>],
    failures: Vec<AuditFailure>,
}

pub fn audit(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let cfg = &ctx.cfg;
    let codes = select_codes(&cfg.pipeline.codes, &p.corpus)?;
    let regressors = cfg.audit.covariates()?;
    let gold = p.gold()?;
    let sources = load_sources(&p, &cfg.audit.sources)?;
    let agg = cfg.pipeline.aggregation;

    let mut results: Vec<BiasTestResult<f64>> = Vec::new();
    let mut failures = Vec::new();
    for set in &sources {
        for code in codes_in(set, &codes) {
            let name = code.code_name.as_str();
            // gold restricted to the units this source labeled
            let mut scoped_gold = gold.clone();
            scoped_gold.retain(|k, _| k.code == name && set.get(k).is_some());
            let pred: InterviewScoreTable<f64> = aggregate_to_interview(set, name, agg, None);
            let gold_t: InterviewScoreTable<f64> = aggregate_to_interview(&scoped_gold, name, agg, None);
            let outcome = biasaudit::interview_errors(&pred, &gold_t).and_then(|errors| {
                biasaudit::bias_test(name, &set.source_id, &errors, &p.covariates, &regressors, cfg.audit.std_errors)
            });
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => {
                    log::warn!("{}/{name}: {e}", set.source_id);
                    failures.push(AuditFailure {
                        source: set.source_id.clone(),
                        code: name.to_string(),
                        kind: e.kind().to_string(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }

    for r in &results {
        let path = p.run.file(&["reports", "audit", &r.source_id, &format!("{}.csv", r.code_name)])?;
        let mut buf = Vec::new();
        p.stamp.write_comments(&mut buf)?;
        biasaudit::write_table_csv(r, &mut buf)?;
        write_bytes(&path, &buf)?;
        let text = p.run.file(&["reports", "audit", &r.source_id, &format!("{}.txt", r.code_name)])?;
        write_bytes(&text, biasaudit::render_text(r).as_bytes())?;
    }
    let mut buf = Vec::new();
    biasaudit::write_summary_csv(&results, &p.stamp.comments(), &mut buf)?;
    write_bytes(&p.run.file(&["reports", "audit", "summary.csv"])?, &buf)?;

    let mut rejections: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for set in &sources {
        let per_alpha = cfg
            .audit
            .alpha
            .iter()
            .map(|&a| {
                let n = results
                    .iter()
                    .filter(|r| r.source_id == set.source_id && r.table.fit.f_pvalue < a)
                    .count();
                (format!("{a}"), n)
            })
            .collect();
        rejections.insert(set.source_id.clone(), per_alpha);
    }

    let comparison_code = cfg
        .audit
        .comparison_code
        .clone()
        .or_else(|| results.first().map(|r| r.code_name.clone()));
    let mut comparison = None;
    if let Some(code) = comparison_code {
        let holdout: BTreeSet<String> = p
            .corpus
            .interviews_in(Split::HoldoutTest)
            .map(|i| i.interview_id.clone())
            .collect();
        let mut gold_scope = gold.clone();
        if !holdout.is_empty() {
            gold_scope.retain(|k, _| holdout.contains(&k.interview_id));
        }
        let mut tables: Vec<InterviewScoreTable<f64>> = vec![aggregate_to_interview(&gold_scope, &code, agg, None)];
        for set in &sources {
            if set.codes().contains(code.as_str()) {
                tables.push(aggregate_to_interview(set, &code, agg, None));
            }
        }
        let refs: Vec<&InterviewScoreTable<f64>> = tables.iter().collect();
        match biasaudit::coefficient_comparison(&refs, &p.covariates) {
            Ok(c) => comparison = Some(c),
            Err(e) => failures.push(AuditFailure {
                source: "comparison".into(),
                code: code.clone(),
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    if let Some(c) = &comparison {
        write_stamped_json(&p.run.file(&["reports", "audit", "comparison.json"])?, &p.stamp, c)?;
        let mut buf = Vec::new();
        p.stamp.write_comments(&mut buf)?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["code", "source", "n", "term", "estimate", "std_error", "ci_low", "ci_high"])?;
            for s in &c.sources {
                for (term, e) in [("refugee", &s.refugee), ("eld_sex", &s.eld_sex)] {
                    w.write_record([
                        c.code_name.clone(),
                        s.source_id.clone(),
                        s.n.to_string(),
                        term.to_string(),
                        fixed(e.coefficient, 6),
                        fixed(e.std_error, 6),
                        fixed(e.ci_low, 6),
                        fixed(e.ci_high, 6),
                    ])?;
                }
            }
            w.flush().map_err(|e| io_err(&p.run.root, e))?;
        }
        write_bytes(&p.run.file(&["reports", "audit", "comparison.csv"])?, &buf)?;
    }

    let report = AuditReport {
        alpha: &cfg.audit.alpha,
        regressors: regressors.iter().map(|c| c.name()).collect(),
        std_errors: cfg.audit.std_errors,
        rejections: rejections.clone(),
        results: &results,
        failures,
    };
    write_stamped_json(&p.run.file(&["reports", "audit", "audit.json"])?, &p.stamp, &report)?;

    if ctx.svg {
        write_bytes(&p.run.file(&["reports", "audit", "log_f.svg"])?, svg::log_f_chart(&results).as_bytes())?;
        if let Some(c) = &comparison {
            write_bytes(
                &p.run.file(&["reports", "audit", "comparison.svg"])?,
                svg::coefficient_chart(c).as_bytes(),
            )?;
        }
    }
    p.run.write_manifest(&ctx.manifest(cfg.pipeline.seed, Some(&p), &codes))?;
    Ok(json!({
        "command": ctx.command,
        "run_dir": p.run.root,
        "tests": results.len(),
        "failures": report.failures.len(),
        "rejections": rejections,
    }))
}

fn templates(cfg: &RunConfig) -> Result<TemplateStore> {
    let mut store = TemplateStore::bundled();
    if let Some(dir) = &cfg.llm.templates_dir {
        store.extend(TemplateStore::load_dir(dir)?);
    }
    Ok(store)
}

fn response_cache(cfg: &RunConfig, run: &RunDir) -> Result<ResponseCache> {
    if cfg.llm.cache {
        ResponseCache::directory(run.dir("llm_cache"))
    } else {
        Ok(ResponseCache::Disabled)
    }
}

fn llm_codes(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<CodeDefinition>> {
    let names = if cfg.llm.codes.is_empty() {
        &cfg.pipeline.codes
    } else {
        &cfg.llm.codes
    };
    select_codes(names, corpus)
}

pub fn annotate_llm(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let cfg = &ctx.cfg;
    let codes = llm_codes(cfg, &p.corpus)?;
    let store = templates(cfg)?;
    let provider = cfg.llm.provider.build()?;
    let cache = response_cache(cfg, &p.run)?;
    let (set, log) = llmbridge::annotate_corpus(
        &p.corpus,
        &codes,
        &store,
        &cfg.llm.targets,
        provider.as_ref(),
        &cfg.llm.provider,
        &cache,
        LLM_SOURCE,
    )?;
    set.write_json(&p.run.file(&["annotations", &format!("{LLM_SOURCE}.json")])?)?;
    // the run log carries cache hits and retries, so it lives outside reports
    let log_path = p.run.file(&["logs", "llm_run_log.jsonl"])?;
    let f = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut w = BufWriter::new(f);
    log.write_jsonl(&mut w)?;
    w.flush().map_err(|e| io_err(&log_path, e))?;

    let summary = json!({
        "model_id": log.model_id,
        "temperature": log.temperature,
        "requests": log.entries.len(),
        "cells": set.len(),
        "positive": log.count(llmbridge::LabelOutcome::Positive),
        "negative": log.count(llmbridge::LabelOutcome::Negative),
        "malformed": log.count(llmbridge::LabelOutcome::Malformed),
        "failed": log.failed(),
    });
    write_stamped_json(&p.run.file(&["reports", "llm_summary.json"])?, &p.stamp, &summary)?;
    let mut manifest = ctx.manifest(cfg.pipeline.seed, Some(&p), &codes);
    manifest.notes.push(format!(
        "provider calls: {}, cache hits: {}",
        log.provider_calls,
        log.cache_hits()
    ));
    p.run.write_manifest(&manifest)?;
    Ok(json!({ "command": ctx.command, "run_dir": p.run.root, "summary": summary }))
}

pub fn augment(ctx: &Context) -> CmdResult {
    let p = prepare(ctx)?;
    let cfg = &ctx.cfg;
    let units = llmbridge::labeled_units(&p.corpus, &[Split::HumanAnnotated])?;
    let mut spec = cfg.llm.provider.clone();
    if spec.kind == ProviderKind::Stub {
        spec.stub = cfg.llm.augment_stub.clone();
    }
    let provider = spec.build()?;
    let cache = response_cache(cfg, &p.run)?;
    let (rows, log) = llmbridge::augment_labeled_set(
        &units,
        provider.as_ref(),
        &spec,
        &cache,
        cfg.llm.n_per_unit,
        cfg.pipeline.seed,
    )?;
    let path = p.run.file(&["augmented", "units.jsonl"])?;
    let mut buf = Vec::new();
    for r in &rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_bytes(&path, &buf)?;
    let summary = json!({
        "original_units": units.len(),
        "requested": log.requested,
        "accepted": log.accepted,
        "dropped": log.dropped,
        "n_per_unit": cfg.llm.n_per_unit,
    });
    write_stamped_json(&p.run.file(&["reports", "augment_summary.json"])?, &p.stamp, &summary)?;
    let mut manifest = ctx.manifest(cfg.pipeline.seed, Some(&p), &p.corpus.codebook);
    manifest.notes.push(format!("provider calls: {}", log.provider_calls));
    p.run.write_manifest(&manifest)?;
    Ok(json!({ "command": ctx.command, "run_dir": p.run.root, "rows": rows.len(), "accepted": log.accepted }))
}

/// Writes a synthetic corpus to the configured input paths, plus an
/// injected-error annotation source when `[synth.errors]` is set.
pub fn synth(ctx: &Context) -> CmdResult {
    let cfg = &ctx.cfg;
    cfg.validate(false)?;
    let mut spec = cfg.synth.spec.clone();
    if !cfg.synth.codes.is_empty() {
        let names: Vec<&str> = cfg.synth.codes.iter().map(String::as_str).collect();
        spec = spec.with_codes(&names)?;
    }
    if cfg.paths.codebook.is_none() {
        let known: BTreeSet<String> = default_codebook().into_iter().map(|c| c.code_name).collect();
        if let Some(c) = spec.codes.iter().find(|c| !known.contains(&c.code_name)) {
            return Err(Error::Config(format!(
                "synthetic code `{}` is not in the default codebook; set paths.codebook",
                c.code_name
            ))
            .into());
        }
    }
    let corpus = synthlab::generate_corpus(&spec)?;
    for path in [&cfg.paths.corpus, &cfg.paths.covariates] {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    corpus::save_corpus(&corpus, &cfg.paths.corpus)?;
    corpus::save_covariates(&corpus.covariates, &cfg.paths.covariates)?;
    if let Some(p) = &cfg.paths.codebook {
        corpus::save_codebook(&corpus.codebook, p)?;
    }
    let run = ctx.run_dir()?;
    let mut injected = None;
    if let Some(errors) = &cfg.synth.errors {
        let gold = corpus
            .gold()
            .ok_or_else(|| Error::Invalid("synthetic corpus has no gold set".into()))?;
        let set = synthlab::inject_errors(gold, &corpus.covariates, &errors.model, &errors.source_id)?;
        set.write_json(&run.file(&["annotations", &format!("{}.json", errors.source_id)])?)?;
        injected = Some(errors.source_id.clone());
    }
    let mut manifest = ctx.manifest(spec.seed, None, &corpus.codebook);
    manifest.data_sha256.insert("corpus".into(), file_sha256(&cfg.paths.corpus)?);
    manifest.data_sha256.insert("covariates".into(), file_sha256(&cfg.paths.covariates)?);
    run.write_manifest(&manifest)?;
    Ok(json!({
        "command": ctx.command,
        "corpus": cfg.paths.corpus,
        "covariates": cfg.paths.covariates,
        "interviews": corpus.interviews.len(),
        "qa_pairs": corpus.qa_pairs().count(),
        "codes": corpus.codebook.len(),
        "injected_source": injected,
    }))
}
