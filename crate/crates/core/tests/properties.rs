//! Cross-module properties checked against independent computations.

use std::collections::BTreeSet;

use anno_audit_core::biasaudit::{f_statistic_from_r2, interview_errors, ols_fit, StdErrorKind};
use anno_audit_core::corpus::{
    read_corpus, read_covariates, split_holdout, validate_corpus, write_corpus, write_covariates, AnnotationSet,
    CellKey, CodeDefinition, CodeGroup, CodebookProfile, Provenance, Split,
};
use anno_audit_core::featurize::{fit_featurizer, FeaturizerConfig};
use anno_audit_core::llmbridge::{
    parse_label_response, Caller, ChatRequest, Message, ProviderSpec, ResponseCache, StubProvider, StubRule,
};
use anno_audit_core::metrics::{accuracy, confusion, f1, net_overprediction};
use anno_audit_core::pipeline::{aggregate_to_interview, Aggregation, InterviewScoreTable};
use anno_audit_core::special::f_upper_tail;
use anno_audit_core::synthlab::{generate_corpus, inject_errors, CountRange, ErrorModel, SynthSpec};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

fn small_spec(n: usize, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::planted(n, 0.8, seed).with_codes(&["marriage", "migration"]).unwrap();
    spec.qa_per_interview = CountRange { min: 2, max: 5 };
    spec.answer_tokens = CountRange { min: 3, max: 8 };
    spec.n_holdout = 0;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corpus_round_trips_and_validates(seed in 0u64..1_000, n in 2usize..25) {
        let corpus = generate_corpus(&small_spec(n, seed)).unwrap();
        let mut jsonl = Vec::new();
        write_corpus(&corpus, &mut jsonl).unwrap();
        let mut back = read_corpus(jsonl.as_slice(), &corpus.codebook).unwrap();
        let mut csv = Vec::new();
        write_covariates(&corpus.covariates, &mut csv).unwrap();
        back.covariates = read_covariates(csv.as_slice()).unwrap();
        prop_assert_eq!(&back.interviews, &corpus.interviews);
        prop_assert_eq!(back.gold(), corpus.gold());
        prop_assert_eq!(&back.covariates, &corpus.covariates);
        prop_assert!(validate_corpus(&back, CodebookProfile::Any).is_empty());
    }

    #[test]
    fn holdout_split_partitions_gold_interviews(seed in 0u64..1_000, n in 2usize..30, frac in 0.0f64..1.0) {
        let corpus = generate_corpus(&small_spec(n, seed)).unwrap();
        let n_test = ((n as f64) * frac) as usize;
        let split = split_holdout(&corpus, n_test, seed).unwrap();
        let ids = |s: Split| split.interviews_in(s).map(|i| i.interview_id.clone()).collect::<BTreeSet<_>>();
        let (train, test) = (ids(Split::HumanAnnotated), ids(Split::HoldoutTest));
        let all: BTreeSet<String> = corpus.interviews.iter().map(|i| i.interview_id.clone()).collect();
        prop_assert_eq!(test.len(), n_test);
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.union(&test).cloned().collect::<BTreeSet<_>>(), all);
    }
}

fn docs_strategy() -> impl Strategy<Value = Vec<String>> {
    let word = prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl", "mn", "op", "qr", "st"]);
    prop::collection::vec(prop::collection::vec(word, 1..8).prop_map(|w| w.join(" ")), 1..20)
}

/// Document frequency implied by a smoothed idf weight.
fn df_from_idf(idf: f64, n_docs: usize) -> f64 {
    (1.0 + n_docs as f64) / (idf - 1.0).exp() - 1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tfidf_vectors_are_unit_and_capped(docs in docs_strategy(), cap in 1usize..40) {
        let config = FeaturizerConfig::tfidf((1, 2), cap);
        let f = fit_featurizer::<f64>(&docs, &config).unwrap();
        prop_assert!(f.vocabulary.len() <= cap);
        prop_assert_eq!(&f, &fit_featurizer::<f64>(&docs, &config).unwrap());
        for d in &docs {
            let v = f.transform(d);
            if v.nnz() > 0 {
                prop_assert!((v.norm_l2() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_transform_reproduces_fitted_df(docs in docs_strategy(), cap in 1usize..40) {
        let f = fit_featurizer::<f64>(&docs, &FeaturizerConfig::tfidf((1, 2), cap)).unwrap();
        let idf = f.idf_weights.as_ref().unwrap();
        let mut nonzero = vec![0usize; f.dimension];
        for d in &docs {
            for (j, _) in f.transform(d).iter() {
                nonzero[j] += 1;
            }
        }
        for j in 0..f.dimension {
            prop_assert!((df_from_idf(idf[j], docs.len()) - nonzero[j] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn adding_documents_never_lowers_df(docs in docs_strategy(), extra in docs_strategy()) {
        let config = FeaturizerConfig::tfidf((1, 2), 10_000);
        let before = fit_featurizer::<f64>(&docs, &config).unwrap();
        let all: Vec<String> = docs.iter().chain(&extra).cloned().collect();
        let after = fit_featurizer::<f64>(&all, &config).unwrap();
        let (ib, ia) = (before.idf_weights.unwrap(), after.idf_weights.unwrap());
        for (term, &j) in &before.vocabulary {
            let k = after.vocabulary[term];
            prop_assert!(df_from_idf(ia[k as usize], all.len()) + 1e-9 >= df_from_idf(ib[j as usize], docs.len()));
        }
    }
}

fn regression_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (10usize..60, 1usize..5).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), k),
        )
    })
}

fn named(xs: &[Vec<f64>]) -> Vec<(String, Vec<f64>)> {
    xs.iter().enumerate().map(|(j, c)| (format!("x{j}"), c.clone())).collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ols_residuals_are_orthogonal_and_f_matches_ssr((y, xs) in regression_strategy()) {
        let table = ols_fit(&y, &named(&xs), StdErrorKind::Iid).unwrap();
        let n = y.len();
        let k = xs.len();
        let resid: Vec<f64> = (0..n)
            .map(|i| y[i] - table.intercept.coefficient - table.coefficients.iter().zip(&xs).map(|(r, x)| r.coefficient * x[i]).sum::<f64>())
            .collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rn = norm(&resid);
        let ones = vec![1.0; n];
        for col in xs.iter().chain(std::iter::once(&ones)) {
            let dot: f64 = resid.iter().zip(col).map(|(r, x)| r * x).sum();
            prop_assert!(dot.abs() < 1e-8 * rn * norm(col) + 1e-12);
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        let ssr_restricted: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ssr_full = rn * rn;
        let direct = ((ssr_restricted - ssr_full) / k as f64) / (ssr_full / (n - k - 1) as f64);
        let via_r2 = f_statistic_from_r2(table.fit.r2, n, k).unwrap();
        prop_assert!(rel_close(via_r2, direct, 1e-8));
    }

    #[test]
    fn scaling_y_scales_coefficients_only((y, xs) in regression_strategy(), c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let base = ols_fit(&y, &named(&xs), StdErrorKind::Iid).unwrap();
        let scaled_y: Vec<f64> = y.iter().map(|v| v * c).collect();
        let scaled = ols_fit(&scaled_y, &named(&xs), StdErrorKind::Iid).unwrap();
        let rows = std::iter::once((&base.intercept, &scaled.intercept)).chain(base.coefficients.iter().zip(&scaled.coefficients));
        for (b, s) in rows {
            prop_assert!(rel_close(s.coefficient, c * b.coefficient, 1e-8) || (s.coefficient - c * b.coefficient).abs() < 1e-9);
            prop_assert!(rel_close(s.std_error, c.abs() * b.std_error, 1e-8));
            prop_assert!((s.p_value - b.p_value).abs() < 1e-8);
            prop_assert_eq!(&s.stars, &b.stars);
        }
        prop_assert!(rel_close(scaled.fit.r2, base.fit.r2, 1e-8));
        prop_assert!(rel_close(scaled.fit.f_stat, base.fit.f_stat, 1e-8));
        prop_assert!((scaled.fit.f_pvalue - base.fit.f_pvalue).abs() < 1e-8);
    }

    #[test]
    fn f_tail_matches_reference_distribution(f in 0.0f64..30.0, d1 in 1u32..40, d2 in 2u32..800) {
        let reference = FisherSnedecor::new(d1 as f64, d2 as f64).unwrap().sf(f);
        let ours = f_upper_tail(f, d1 as f64, d2 as f64);
        prop_assert!((ours - reference).abs() < 1e-10, "ours {ours} reference {reference}");
    }
}

fn mean_table(set: &AnnotationSet, code: &str) -> InterviewScoreTable<f64> {
    aggregate_to_interview(set, code, Aggregation::Mean, None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mean_interview_error_is_net_overprediction(seed in 0u64..1_000, n in 2usize..30, qa in 1usize..6, rate in 0.0f64..0.5) {
        let mut spec = small_spec(n, seed);
        spec.qa_per_interview = CountRange::fixed(qa);
        let corpus = generate_corpus(&spec).unwrap();
        let gold = corpus.gold().unwrap();
        let pred = inject_errors(gold, &corpus.covariates, &ErrorModel::uniform(rate, seed), "noisy").unwrap();
        let errors = interview_errors(&mean_table(&pred, "marriage"), &mean_table(gold, "marriage")).unwrap();
        let mean_error = errors.values().sum::<f64>() / errors.len() as f64;
        let over: f64 = net_overprediction(&pred, gold, "marriage").unwrap();
        prop_assert!((mean_error - over / 100.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_interview_names(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..150), salt in "[a-z]{1,6}") {
        let build = |rename: bool| {
            let mut p = AnnotationSet::new("p", Provenance::ModelPrediction);
            let mut g = AnnotationSet::new("g", Provenance::Gold);
            for (i, &(a, b)) in pairs.iter().enumerate() {
                let id = if rename { format!("{salt}-{}", 997 * i % 1009) } else { format!("i{i}") };
                p.set(CellKey::new(id.clone(), 0, "c"), a);
                g.set(CellKey::new(id, 0, "c"), b);
            }
            confusion(&p, &g, "c").unwrap()
        };
        let (a, b) = (build(false), build(true));
        prop_assert_eq!(a, b);
        prop_assert_eq!(f1::<f64>(&a).to_bits(), f1::<f64>(&b).to_bits());
        prop_assert_eq!(accuracy::<f64>(&a).unwrap().to_bits(), accuracy::<f64>(&b).unwrap().to_bits());
    }

    #[test]
    fn cache_hits_parse_like_cold_calls(response in prop::sample::select(vec![
        "Interpretation: yes. Label: Marriage",
        "Label: **Not Applicable**",
        "label: marriages.",
        "I cannot decide.",
        "Interpretation: Label: \"Marriage\"",
    ])) {
        let code = CodeDefinition::new("marriage", "Marriage", CodeGroup::Aspiration);
        let stub = StubProvider::new(StubRule::Constant { response: response.to_string() });
        let spec = ProviderSpec { max_retries: 0, ..ProviderSpec::default() };
        let cache = ResponseCache::memory();
        let request = ChatRequest { model: "stub".into(), temperature: 0.0, messages: vec![Message::user("q")], seed: None };
        let caller = Caller::new(&stub, &cache, &spec);
        let parse = |raw: &str| Some(parse_label_response(raw, &code));
        let cold = caller.call(&request, parse);
        let warm = caller.call(&request, parse);
        prop_assert!(!cold.cache_hit);
        prop_assert!(warm.cache_hit);
        prop_assert_eq!(cold.value, warm.value);
    }
}
