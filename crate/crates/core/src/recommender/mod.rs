//! Two-step inference: retrieve similar users with the collaborative
//! retriever, rerank them with the self-assessing reranker, and judge the
//! target pair with their behaviours as context.

mod prompts;

pub use prompts::{bracketed, PromptBundle, BEHAVIORS, HISTORY, TARGET};

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::adapter::Adapter;
use crate::artifact::write_atomic;
use crate::car::{car_embed, retrieve, BehaviorIndex};
use crate::corpus::InteractionCorpus;
use crate::crm::sigmoid;
use crate::error::{Error, Result};
use crate::providers::{bounded_map, LanguageModel, TextEmbedder};
use crate::sare::rerank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub k_e: usize,
    /// 0 disables retrieval and reranking (basic prompt only).
    pub k_s: usize,
    pub max_items: usize,
    pub concurrency: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k_e: 10,
            k_s: 2,
            max_items: 15,
            concurrency: 4,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_e == 0 {
            return Err(Error::config("k_e", "must be at least 1"));
        }
        if self.max_items == 0 {
            return Err(Error::config("max_items", "must be at least 1"));
        }
        if self.concurrency == 0 {
            return Err(Error::config("concurrency", "must be at least 1"));
        }
        Ok(())
    }
}

/// `P(Yes)` from the judge's Yes/No logits, via the logit difference.
pub fn predict(judge: &dyn LanguageModel, prompt: &str) -> Result<f64> {
    let r = judge.judge(prompt)?;
    Ok(yes_probability(r.logit_yes, r.logit_no))
}

pub fn yes_probability(logit_yes: f64, logit_no: f64) -> f64 {
    sigmoid(logit_yes - logit_no)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user: String,
    pub item: String,
    pub ci_users: Vec<String>,
    #[serde(skip)]
    pub prompt: String,
    pub prob: f64,
    #[serde(with = "label_int")]
    pub label: bool,
}

mod label_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// A labelled (user, item) pair to score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPair {
    pub user: String,
    pub item: String,
    pub label: bool,
}

/// Inference state. `history` supplies every behaviour text; the retriever,
/// index and reranker are only needed when `k_s > 0`.
pub struct Pipeline<'a> {
    history: &'a InteractionCorpus,
    car: Option<(&'a Adapter, &'a BehaviorIndex)>,
    sare: Option<&'a Adapter>,
    embedder: &'a dyn TextEmbedder,
    llm: &'a dyn LanguageModel,
    prompts: &'a PromptBundle,
    config: InferenceConfig,
    retrieve_calls: AtomicUsize,
    rerank_calls: AtomicUsize,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        history: &'a InteractionCorpus,
        embedder: &'a dyn TextEmbedder,
        llm: &'a dyn LanguageModel,
        prompts: &'a PromptBundle,
        config: InferenceConfig,
    ) -> Self {
        Pipeline {
            history,
            car: None,
            sare: None,
            embedder,
            llm,
            prompts,
            config,
            retrieve_calls: AtomicUsize::new(0),
            rerank_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retriever(mut self, adapter: &'a Adapter, index: &'a BehaviorIndex) -> Self {
        self.car = Some((adapter, index));
        self
    }

    pub fn with_reranker(mut self, adapter: &'a Adapter) -> Self {
        self.sare = Some(adapter);
        self
    }

    pub fn retrieve_calls(&self) -> usize {
        self.retrieve_calls.load(Ordering::SeqCst)
    }

    pub fn rerank_calls(&self) -> usize {
        self.rerank_calls.load(Ordering::SeqCst)
    }

    pub fn recommend(&self, user: &str, item: &str, label: bool) -> Result<PredictionRecord> {
        self.config.validate()?;
        let max_items = self.config.max_items;
        let user_ix = self
            .history
            .user_ix(user)
            .map_err(|_| Error::EmptyHistory(user.to_string()))?;
        let history_text = self.history.behavior_text(user_ix, max_items)?;
        let target_text = self.history.item_text(self.history.item_ix(item)?);
        let basic = self.prompts.basic(&history_text, &target_text)?;

        let mut ci_users = Vec::new();
        let mut behaviors = Vec::new();
        if self.config.k_s > 0 {
            let (car, index) = self
                .car
                .ok_or_else(|| Error::config("k_s", "retriever artifacts required when k_s > 0"))?;
            let sare = self
                .sare
                .ok_or_else(|| Error::config("k_s", "reranker artifact required when k_s > 0"))?;
            let query = car_embed(car, &self.embedder.embed(&history_text)?)?;
            self.retrieve_calls.fetch_add(1, Ordering::SeqCst);
            let hits = retrieve(index, &query, self.config.k_e, Some(user))?;
            if !hits.is_empty() {
                let candidates: Vec<(String, String)> = hits
                    .into_iter()
                    .map(|(id, _)| {
                        let text = self.history.behavior_text(self.history.user_ix(&id)?, max_items)?;
                        Ok((id, text))
                    })
                    .collect::<Result<_>>()?;
                self.rerank_calls.fetch_add(1, Ordering::SeqCst);
                for (id, _) in rerank(sare, &basic, &candidates, self.config.k_s, self.embedder)? {
                    let text = &candidates.iter().find(|c| c.0 == id).expect("reranked candidate").1;
                    behaviors.push(text.clone());
                    ci_users.push(id);
                }
            }
        }
        let prompt = if behaviors.is_empty() {
            basic
        } else {
            self.prompts.ci(&history_text, &behaviors, &target_text)?
        };
        let prob = predict(self.llm, &prompt)?;
        Ok(PredictionRecord {
            user: user.to_string(),
            item: item.to_string(),
            ci_users,
            prompt,
            prob,
            label,
        })
    }

    /// Scores every pair whose user has a history; the second value counts
    /// cold-start pairs that were skipped. Output is sorted by (user, item).
    pub fn recommend_all(&self, pairs: &[TestPair]) -> Result<(Vec<PredictionRecord>, usize)> {
        let results = bounded_map(pairs, self.config.concurrency, |p| {
            self.recommend(&p.user, &p.item, p.label)
        });
        let mut out = Vec::with_capacity(pairs.len());
        let mut cold = 0;
        for r in results {
            match r {
                Ok(rec) => out.push(rec),
                Err(Error::EmptyHistory(_)) => cold += 1,
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| (&a.user, &a.item).cmp(&(&b.user, &b.item)));
        Ok((out, cold))
    }
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    write_atomic(path, &predictions_to_jsonl(records)?)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
