//! Inference wiring on a fully trained planted-signal run.

use score_core::adapter::{Adapter, AdapterKind};
use score_core::car::BehaviorIndex;
use score_core::cli::run_command;
use score_core::config::RunConfig;
use score_core::experiment::{load_corpus, load_partition, run_experiment, ArtifactPaths};
use score_core::providers::{CallCounter, HashEmbedder, LanguageModel, StubLlm};
use score_core::recommender::{yes_probability, InferenceConfig, Pipeline, TestPair};

fn trained_run(dir: &std::path::Path) -> RunConfig {
    assert_eq!(run_command(["score", "synth", "--out", dir.to_str().unwrap()]), 0);
    let cfg = RunConfig::load(dir.join("score.toml"), &[]).unwrap();
    run_experiment(&cfg).unwrap();
    cfg
}

#[test]
fn one_retrieval_and_one_rerank_per_prediction_and_no_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_run(dir.path());
    let paths = ArtifactPaths::new(&cfg.paths.artifacts);
    let full = load_corpus(&cfg).unwrap();
    let train = full.restrict(&load_partition(&cfg, &full, "train").unwrap());
    let pairs: Vec<TestPair> = load_partition(&cfg, &full, "test")
        .unwrap()
        .iter()
        .map(|x| TestPair {
            user: full.user_key(x.user).to_string(),
            item: full.item(x.item).item_id.clone(),
            label: x.label,
        })
        .collect();
    assert!(!pairs.is_empty());

    let car = Adapter::load(paths.car(), AdapterKind::Retriever).unwrap();
    let index = BehaviorIndex::load(paths.index()).unwrap();
    let sare = Adapter::load(paths.sare(), AdapterKind::Reranker).unwrap();
    let embedder = HashEmbedder::new(cfg.embedding.dim).unwrap();
    let llm = CallCounter::new(StubLlm::from_items(train.items()));
    let inference = cfg.inference_config();

    let pipeline = Pipeline::new(&train, &embedder, &llm, &cfg.prompts, inference)
        .with_retriever(&car, &index)
        .with_reranker(&sare);
    let (records, cold) = pipeline.recommend_all(&pairs).unwrap();
    assert_eq!(cold, 0);
    assert_eq!(records.len(), pairs.len());
    assert_eq!(pipeline.retrieve_calls(), pairs.len());
    assert_eq!(pipeline.rerank_calls(), pairs.len());
    assert_eq!(llm.complete_calls(), 0);
    assert_eq!(llm.judge_calls(), pairs.len());
    for r in &records {
        assert_eq!(r.ci_users.len(), inference.k_s);
        assert!(!r.ci_users.contains(&r.user));
        assert!((0.0..=1.0).contains(&r.prob));
    }

    // without similar users the pipeline reduces to the basic prompt
    let basic_cfg = InferenceConfig { k_s: 0, ..inference };
    let basic = Pipeline::new(&train, &embedder, &llm, &cfg.prompts, basic_cfg);
    for p in pairs.iter().take(8) {
        let rec = basic.recommend(&p.user, &p.item, p.label).unwrap();
        let history = train.behavior_text(train.user_ix(&p.user).unwrap(), inference.max_items).unwrap();
        let target = train.item_text(train.item_ix(&p.item).unwrap());
        let prompt = cfg.prompts.basic(&history, &target).unwrap();
        let j = llm.judge(&prompt).unwrap();
        assert_eq!(rec.prompt, prompt);
        assert!(rec.ci_users.is_empty());
        assert_eq!(rec.prob, yes_probability(j.logit_yes, j.logit_no));
    }
    assert_eq!(basic.retrieve_calls(), 0);
    assert_eq!(basic.rerank_calls(), 0);
}
