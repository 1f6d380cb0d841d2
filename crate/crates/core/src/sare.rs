//! Self-assessing reranker: LLM assessments of which collaborative signals
//! would help judge a pair induce rankings of retrieved users; a linear
//! adapter over the fixed embedder is trained so that the basic-prompt
//! embedding prefers the top-ranked user, and reranks candidates at
//! inference.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterKind};
use crate::artifact::write_atomic;
use crate::car::{car_embed, retrieve, BehaviorIndex};
use crate::contrastive::{check_temperature, info_nce, projected_loss, ContrastiveTerm};
use crate::corpus::{InteractionCorpus, ItemIx, UserIx};
use crate::error::{Error, Result};
use crate::linalg::{score_desc, Matrix};
use crate::providers::{bounded_map, cosine, EmbeddingVector, LanguageModel, TextEmbedder};
use crate::recommender::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SareConfig {
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rank_threshold: usize,
    pub neg_count: usize,
    /// Users sampled for assessment generation.
    pub sample_users: usize,
    pub seed: u64,
}

impl Default for SareConfig {
    fn default() -> Self {
        SareConfig {
            tau: 0.02,
            epochs: 50,
            learning_rate: 0.01,
            rank_threshold: 5,
            neg_count: 3,
            sample_users: 10_000,
            seed: 42,
        }
    }
}

impl SareConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.tau, "tau_sare")?;
        if self.rank_threshold == 0 {
            return Err(Error::config("rank_threshold", "must be at least 1"));
        }
        if self.neg_count == 0 {
            return Err(Error::config("neg_count", "must be at least 1"));
        }
        if self.sample_users == 0 {
            return Err(Error::config("sample_users", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("sare.learning_rate", "must be non-negative"));
        }
        Ok(())
    }
}

/// A (user, item) pair to assess, with the user's history before the item.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentTarget {
    pub user: UserIx,
    pub item: ItemIx,
    pub history_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub user: String,
    pub item: String,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Serialize, Deserialize)]
struct AssessmentLine {
    user: String,
    item: String,
    text: String,
    embedding: Vec<f32>,
}

/// Ranked users for one target pair: scores non-increasing, users distinct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderedCandidateSet {
    pub user: String,
    pub item: String,
    pub ranked: Vec<(String, f64)>,
}

/// Behaviour text of the positives `user` had before the last interaction
/// with `item`, excluding `item` itself.
pub fn history_before(
    corpus: &InteractionCorpus,
    user: UserIx,
    item: ItemIx,
    max_items: usize,
) -> Result<String> {
    if max_items == 0 {
        return Err(Error::config("max_items", "must be positive"));
    }
    let seq = corpus.sequence(user);
    let end = seq.iter().rposition(|x| x.item == item).unwrap_or(seq.len());
    let positives: Vec<ItemIx> = seq[..end]
        .iter()
        .filter(|x| x.label && x.item != item)
        .map(|x| x.item)
        .collect();
    if positives.is_empty() {
        return Err(Error::EmptyHistory(corpus.user_key(user).to_string()));
    }
    let start = positives.len().saturating_sub(max_items);
    Ok(positives[start..]
        .iter()
        .map(|&i| corpus.item_text(i))
        .collect::<Vec<_>>()
        .join(", "))
}

/// Seeded sample of up to `sample_users` users; each contributes its last
/// interaction as the target. Users with no earlier positive are dropped.
pub fn sample_targets(
    corpus: &InteractionCorpus,
    sample_users: usize,
    max_items: usize,
    seed: u64,
) -> Result<Vec<AssessmentTarget>> {
    let mut users: Vec<UserIx> = corpus.users().filter(|&u| !corpus.sequence(u).is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    users.truncate(sample_users);
    users.sort();
    let mut out = Vec::with_capacity(users.len());
    for user in users {
        let item = corpus.sequence(user).last().expect("non-empty").item;
        match history_before(corpus, user, item, max_items) {
            Ok(history_text) => out.push(AssessmentTarget {
                user,
                item,
                history_text,
                target_text: corpus.item_text(item),
            }),
            Err(Error::EmptyHistory(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn assessment_prompt(prompts: &PromptBundle, history_text: &str, target_text: &str) -> Result<String> {
    prompts.assess(history_text, target_text)
}

/// One record per target whose assessment succeeded; failures are logged
/// and counted. Embeddings come from the fixed embedder.
pub fn generate_assessments(
    llm: &dyn LanguageModel,
    corpus: &InteractionCorpus,
    targets: &[AssessmentTarget],
    embedder: &dyn TextEmbedder,
    prompts: &PromptBundle,
    concurrency: usize,
) -> Result<(Vec<AssessmentRecord>, usize)> {
    let texts = bounded_map(targets, concurrency, |t| {
        llm.complete(&assessment_prompt(prompts, &t.history_text, &t.target_text)?)
    });
    let mut kept = Vec::new();
    let mut skipped = 0;
    for (t, text) in targets.iter().zip(texts) {
        match text {
            Ok(text) if !text.trim().is_empty() => kept.push((t, text)),
            Ok(_) => {
                warn!("empty assessment for user {}", corpus.user_key(t.user));
                skipped += 1;
            }
            Err(e) => {
                warn!("assessment failed for user {}: {e}", corpus.user_key(t.user));
                skipped += 1;
            }
        }
    }
    let owned: Vec<String> = kept.iter().map(|(_, text)| text.clone()).collect();
    let vectors = embedder.embed_batch(&owned)?;
    let mut records = Vec::with_capacity(kept.len());
    for ((t, text), embedding) in kept.into_iter().zip(vectors) {
        if embedding.is_zero() {
            warn!("assessment for user {} has no embeddable tokens", corpus.user_key(t.user));
            skipped += 1;
            continue;
        }
        records.push(AssessmentRecord {
            user: corpus.user_key(t.user).to_string(),
            item: corpus.item(t.item).item_id.clone(),
            text,
            embedding,
        });
    }
    if skipped > 0 {
        info!("skipped {skipped} assessments");
    }
    Ok((records, skipped))
}

pub fn write_assessments(path: impl AsRef<Path>, records: &[AssessmentRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        let line = AssessmentLine {
            user: r.user.clone(),
            item: r.item.clone(),
            text: r.text.clone(),
            embedding: r.embedding.values().to_vec(),
        };
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_assessments(path: impl AsRef<Path>) -> Result<Vec<AssessmentRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AssessmentLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(AssessmentRecord {
            user: parsed.user,
            item: parsed.item,
            text: parsed.text,
            embedding: EmbeddingVector::from_unit(parsed.embedding),
        });
    }
    Ok(out)
}

fn by_score_then_id(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    score_desc(a.1, b.1).then_with(|| a.0.cmp(&b.0))
}

/// Candidates ordered by cosine between the assessment embedding and their
/// fixed behaviour embedding; ties by ascending user id.
pub fn ranking_from_assessment(
    assessment: &AssessmentRecord,
    candidates: &[(String, String)],
    embedder: &dyn TextEmbedder,
) -> Result<OrderedCandidateSet> {
    if candidates.is_empty() {
        return Err(Error::EmptyField("candidates".into()));
    }
    let texts: Vec<String> = candidates.iter().map(|(_, t)| t.clone()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    let mut ranked = Vec::with_capacity(candidates.len());
    for ((id, _), v) in candidates.iter().zip(&vectors) {
        if v.is_zero() {
            return Err(Error::DegenerateCandidate(id.clone()));
        }
        ranked.push((id.clone(), cosine(&assessment.embedding, v)?));
    }
    ranked.sort_by(by_score_then_id);
    Ok(OrderedCandidateSet {
        user: assessment.user.clone(),
        item: assessment.item.clone(),
        ranked,
    })
}

/// Top-k-shifted-by-N negatives: `neg_count` users drawn uniformly without
/// replacement from ranks strictly after `rank_threshold`, returned in rank
/// order.
pub fn sample_negatives(
    ranking: &OrderedCandidateSet,
    rank_threshold: usize,
    neg_count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let len = ranking.ranked.len();
    if len <= rank_threshold {
        return Err(Error::EmptyTail {
            len,
            threshold: rank_threshold,
        });
    }
    let tail = &ranking.ranked[rank_threshold..];
    let amount = neg_count.min(tail.len());
    if amount < neg_count {
        warn!(
            "only {} candidates after rank {rank_threshold} for user {}; using all",
            tail.len(),
            ranking.user
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, tail.len(), amount).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| tail[i].0.clone()).collect())
}

pub fn sare_loss(query: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    check_temperature(tau, "tau_sare")?;
    info_nce(query, positive, negatives, tau)
}

/// Retrieves `k_e` candidates for every assessed pair and ranks them by the
/// assessment.
pub fn build_rankings(
    records: &[AssessmentRecord],
    corpus: &InteractionCorpus,
    car: &Adapter,
    index: &BehaviorIndex,
    embedder: &dyn TextEmbedder,
    k_e: usize,
    max_items: usize,
) -> Result<Vec<OrderedCandidateSet>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let user = corpus.user_ix(&r.user)?;
        let item = corpus.item_ix(&r.item)?;
        let history = history_before(corpus, user, item, max_items)?;
        let query = car_embed(car, &embedder.embed(&history)?)?;
        let hits = retrieve(index, &query, k_e, Some(&r.user))?;
        if hits.is_empty() {
            continue;
        }
        let candidates: Vec<(String, String)> = hits
            .into_iter()
            .map(|(id, _)| {
                let text = corpus.behavior_text(corpus.user_ix(&id)?, max_items)?;
                Ok((id, text))
            })
            .collect::<Result<_>>()?;
        out.push(ranking_from_assessment(r, &candidates, embedder)?);
    }
    Ok(out)
}

/// One reranker training instance, as texts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SareInstance {
    /// Basic prompt of the target pair.
    pub query: String,
    /// Behaviour text of the rank-1 user.
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Instances for every ranking with a non-empty negative tail; the second
/// value counts rankings skipped for a short tail. Negatives are sampled
/// once, seeded per instance.
pub fn build_instances(
    rankings: &[OrderedCandidateSet],
    corpus: &InteractionCorpus,
    prompts: &PromptBundle,
    config: &SareConfig,
    max_items: usize,
) -> Result<(Vec<SareInstance>, usize)> {
    let mut out = Vec::with_capacity(rankings.len());
    let mut skipped = 0;
    for (i, ranking) in rankings.iter().enumerate() {
        let negatives = match sample_negatives(
            ranking,
            config.rank_threshold,
            config.neg_count,
            config.seed.wrapping_add(i as u64),
        ) {
            Ok(n) => n,
            Err(Error::EmptyTail { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let user = corpus.user_ix(&ranking.user)?;
        let item = corpus.item_ix(&ranking.item)?;
        let history = history_before(corpus, user, item, max_items)?;
        let behavior = |id: &str| corpus.behavior_text(corpus.user_ix(id)?, max_items);
        out.push(SareInstance {
            query: prompts.basic(&history, &corpus.item_text(item))?,
            positive: behavior(&ranking.ranked[0].0)?,
            negatives: negatives.iter().map(|n| behavior(n)).collect::<Result<_>>()?,
        });
    }
    if skipped > 0 {
        warn!("{skipped} rankings too short for negative sampling");
    }
    Ok((out, skipped))
}

/// Frozen embeddings of one reranker training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SareVectors {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Mean reranker loss under the projection `w`, and its gradient with
/// respect to `w`.
pub fn sare_objective(w: &Matrix, instances: &[SareVectors], tau: f64) -> Result<(f64, Matrix)> {
    check_temperature(tau, "tau_sare")?;
    if instances.is_empty() {
        return Ok((0.0, Matrix::zeros(w.rows, w.cols)));
    }
    let mut inputs = Vec::new();
    let mut terms = Vec::with_capacity(instances.len());
    for inst in instances {
        let query = inputs.len();
        inputs.push(inst.query.clone());
        inputs.push(inst.positive.clone());
        let negatives = (0..inst.negatives.len()).map(|k| query + 2 + k).collect();
        inputs.extend(inst.negatives.iter().cloned());
        terms.push(ContrastiveTerm {
            query,
            positive: query + 1,
            negatives,
        });
    }
    let n = instances.len() as f64;
    let (loss, grad) = projected_loss(w, &inputs, &terms, tau, true)?;
    let mut grad = grad.unwrap_or_else(|| Matrix::zeros(w.rows, w.cols));
    grad.data.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SareTrainReport {
    pub instances: usize,
    /// Mean per-instance loss before training.
    pub initial_loss: f64,
    /// Mean per-instance loss after training.
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Full-batch gradient descent on the mean reranker loss.
pub fn train_sare_adapter(
    instances: &[SareInstance],
    embedder: &dyn TextEmbedder,
    config: &SareConfig,
) -> Result<(Adapter, SareTrainReport)> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::config("instances", "no reranker training instances"));
    }
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut texts: Vec<String> = Vec::new();
    let mut terms = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut ids = Vec::with_capacity(inst.negatives.len() + 2);
        for t in std::iter::once(&inst.query)
            .chain(std::iter::once(&inst.positive))
            .chain(&inst.negatives)
        {
            ids.push(*slot.entry(t.as_str()).or_insert_with(|| {
                texts.push(t.clone());
                texts.len() - 1
            }));
        }
        terms.push(ContrastiveTerm {
            query: ids[0],
            positive: ids[1],
            negatives: ids[2..].to_vec(),
        });
    }
    let vectors = embedder.embed_batch(&texts)?;
    let mut inputs = Vec::with_capacity(vectors.len());
    for (v, t) in vectors.iter().zip(&texts) {
        if v.is_zero() {
            return Err(Error::DegenerateCandidate(t.chars().take(40).collect()));
        }
        inputs.push(v.to_f64());
    }

    let n = terms.len() as f64;
    let mut w = Adapter::initial_matrix(embedder.dim(), config.seed);
    let mut report = SareTrainReport {
        instances: terms.len(),
        initial_loss: projected_loss(&w, &inputs, &terms, config.tau, false)?.0 / n,
        ..SareTrainReport::default()
    };
    for epoch in 0..config.epochs {
        let (loss, grad) = projected_loss(&w, &inputs, &terms, config.tau, true)?;
        report.epoch_losses.push(loss / n);
        if let Some(grad) = grad {
            w.axpy(-config.learning_rate / n, &grad);
        }
        if epoch % 10 == 0 {
            info!("sare epoch {epoch}: loss {:.5}", loss / n);
        }
    }
    let adapter = Adapter::from_matrix(AdapterKind::Reranker, &w, config.tau, config.seed)?;
    report.final_loss = projected_loss(&adapter.matrix(), &inputs, &terms, config.tau, false)?.0 / n;
    Ok((adapter, report))
}

/// Top `k_s` candidates by `cos(M·p, M·e)`, descending, ties by ascending
/// user id; `k_s` clamps to the candidate count.
pub fn rerank(
    adapter: &Adapter,
    basic_prompt_text: &str,
    candidates: &[(String, String)],
    k_s: usize,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<(String, f64)>> {
    if candidates.is_empty() {
        return Err(Error::EmptyField("candidates".into()));
    }
    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(basic_prompt_text.to_string());
    texts.extend(candidates.iter().map(|(_, t)| t.clone()));
    let vectors = embedder.embed_batch(&texts)?;
    if vectors[0].is_zero() {
        return Err(Error::ZeroVector);
    }
    let query = adapter.project(&vectors[0])?;
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let mut scored = Vec::with_capacity(candidates.len());
    for ((id, _), v) in candidates.iter().zip(&vectors[1..]) {
        if seen.insert(id.as_str(), ()).is_some() {
            continue;
        }
        if v.is_zero() {
            return Err(Error::DegenerateCandidate(id.clone()));
        }
        scored.push((id.clone(), cosine(&query, &adapter.project(v)?)?));
    }
    scored.sort_by(by_score_then_id);
    scored.truncate(k_s);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IngestOptions, InteractionRecord, ItemMeta};
    use crate::providers::{HashEmbedder, StubLlm};

    fn ranking(n: usize) -> OrderedCandidateSet {
        OrderedCandidateSet {
            user: "t".into(),
            item: "i".into(),
            ranked: (0..n).map(|r| (format!("u{r:02}"), 1.0 - r as f64 * 0.05)).collect(),
        }
    }

    fn record(text: &str, embedder: &HashEmbedder) -> AssessmentRecord {
        AssessmentRecord {
            user: "t".into(),
            item: "i".into(),
            text: text.into(),
            embedding: embedder.embed(text).unwrap(),
        }
    }

    fn tiny_corpus() -> InteractionCorpus {
        let items = vec![
            ItemMeta::new("a", "Alpha Story", vec!["Comedy".into()]),
            ItemMeta::new("b", "Beta Story", vec!["Drama".into()]),
            ItemMeta::new("c", "Gamma Tale", vec!["Fantasy".into()]),
        ];
        let rec = |u: &str, i: &str, r: u8, t: i64| InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating: r,
            timestamp: t,
        };
        let records = vec![
            rec("u1", "a", 5, 1),
            rec("u1", "b", 4, 2),
            rec("u1", "c", 5, 3),
            rec("u2", "c", 2, 1),
        ];
        InteractionCorpus::from_records(records, items, &IngestOptions::default()).unwrap()
    }

    #[test]
    fn negatives_come_from_the_tail() {
        let r = ranking(10);
        let negs = sample_negatives(&r, 5, 3, 7).unwrap();
        assert_eq!(negs.len(), 3);
        let tail: Vec<&str> = r.ranked[5..].iter().map(|x| x.0.as_str()).collect();
        assert!(negs.iter().all(|n| tail.contains(&n.as_str())));
        assert_eq!(negs, sample_negatives(&r, 5, 3, 7).unwrap());
    }

    #[test]
    fn short_tail_clamps_and_empty_tail_errors() {
        assert_eq!(sample_negatives(&ranking(6), 5, 3, 1).unwrap(), vec!["u05".to_string()]);
        assert!(matches!(
            sample_negatives(&ranking(5), 5, 3, 1),
            Err(Error::EmptyTail { len: 5, threshold: 5 })
        ));
    }

    #[test]
    fn identical_text_ranks_first() {
        let e = HashEmbedder::default();
        let a = record("comedy drama heist", &e);
        let cands = vec![
            ("x".to_string(), "space opera".to_string()),
            ("y".to_string(), "comedy drama heist".to_string()),
            ("z".to_string(), "drama".to_string()),
        ];
        let r = ranking_from_assessment(&a, &cands, &e).unwrap();
        assert_eq!(r.ranked[0].0, "y");
        assert!((r.ranked[0].1 - 1.0).abs() < 1e-6);
        let mut shuffled = cands.clone();
        shuffled.reverse();
        assert_eq!(ranking_from_assessment(&a, &shuffled, &e).unwrap(), r);
    }

    /// Embedder mapping fixed texts to fixed vectors.
    struct Table(HashMap<String, Vec<f64>>, usize);

    impl TextEmbedder for Table {
        fn dim(&self) -> usize {
            self.1
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts.iter().map(|t| EmbeddingVector::from_raw(&self.0[t])).collect())
        }
    }

    #[test]
    fn ranking_follows_computed_cosines() {
        // cosines with the query (1, 0): 0.9, 0.5, 0.7
        let vec_at = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let table = Table(
            [
                ("q".to_string(), vec![1.0, 0.0]),
                ("first".to_string(), vec_at(0.9)),
                ("second".to_string(), vec_at(0.5)),
                ("third".to_string(), vec_at(0.7)),
            ]
            .into(),
            2,
        );
        let a = AssessmentRecord {
            user: "t".into(),
            item: "i".into(),
            text: "q".into(),
            embedding: table.embed("q").unwrap(),
        };
        let cands: Vec<(String, String)> = ["first", "second", "third"]
            .iter()
            .map(|s| (s.to_string(), s.to_string()))
            .collect();
        let r = ranking_from_assessment(&a, &cands, &table).unwrap();
        let order: Vec<&str> = r.ranked.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(order, vec!["first", "third", "second"]);
    }

    #[test]
    fn zero_candidate_is_named() {
        let e = HashEmbedder::default();
        let a = record("comedy", &e);
        let cands = vec![("ok".to_string(), "comedy".to_string()), ("bad".to_string(), "  ".to_string())];
        assert!(matches!(
            ranking_from_assessment(&a, &cands, &e),
            Err(Error::DegenerateCandidate(u)) if u == "bad"
        ));
    }

    #[test]
    fn sare_loss_closed_forms() {
        assert_eq!(sare_loss(&[1.0, 0.0], &[0.0, 1.0], &[], 0.02).unwrap(), 0.0);
        let p = [0.6, 0.8];
        assert!((sare_loss(&[1.0, 0.0], &p, &[&p], 0.02).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            sare_loss(&[1.0], &[1.0], &[], -1.0),
            Err(Error::Config { field, .. }) if field == "tau_sare"
        ));
    }

    #[test]
    fn sare_loss_matches_direct_formula_at_d4() {
        let q = [0.5, -0.5, 0.5, 0.5];
        let p = [0.1, 0.2, 0.3, 0.4];
        let n1 = [-0.3, 0.1, 0.0, 0.9];
        let n2 = [0.7, 0.7, -0.1, 0.0];
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let g = |b: &[f64]| (cos(&q, b) / 0.02).exp();
        let expected = -(g(&p) / (g(&p) + g(&n1) + g(&n2))).ln();
        let got = sare_loss(&q, &p, &[&n1, &n2], 0.02).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn rerank_identity_is_plain_cosine_sort() {
        let e = HashEmbedder::new(64).unwrap();
        let id = Adapter::identity(AdapterKind::Reranker, 64, 0.02).unwrap();
        let query = "comedy drama night";
        let cands: Vec<(String, String)> = [("a", "drama"), ("b", "comedy drama night"), ("c", "space"), ("d", "night")]
            .iter()
            .map(|(u, t)| (u.to_string(), t.to_string()))
            .collect();
        let got = rerank(&id, query, &cands, 4, &e).unwrap();
        let qv = e.embed(query).unwrap();
        let mut expected: Vec<(String, f64)> = cands
            .iter()
            .map(|(u, t)| (u.clone(), cosine(&qv, &e.embed(t).unwrap()).unwrap()))
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got_ids: Vec<&String> = got.iter().map(|x| &x.0).collect();
        let exp_ids: Vec<&String> = expected.iter().map(|x| &x.0).collect();
        assert_eq!(got_ids, exp_ids);
        assert_eq!(rerank(&id, query, &cands, 1, &e).unwrap()[0].0, "b");
        assert_eq!(rerank(&id, query, &cands, 10, &e).unwrap().len(), 4);
    }

    #[test]
    fn rerank_is_scale_invariant() {
        let e = HashEmbedder::new(16).unwrap();
        let w = Adapter::initial_matrix(16, 3);
        let mut scaled = w.clone();
        scaled.data.iter_mut().for_each(|x| *x *= 3.5);
        let a = Adapter::from_matrix(AdapterKind::Reranker, &w, 0.02, 0).unwrap();
        let b = Adapter::from_matrix(AdapterKind::Reranker, &scaled, 0.02, 0).unwrap();
        let cands: Vec<(String, String)> = (0..6).map(|i| (format!("u{i}"), format!("tok{i} tok{}", i % 3))).collect();
        let ids = |r: Vec<(String, f64)>| r.into_iter().map(|x| x.0).collect::<Vec<_>>();
        assert_eq!(
            ids(rerank(&a, "tok1 tok2", &cands, 6, &e).unwrap()),
            ids(rerank(&b, "tok1 tok2", &cands, 6, &e).unwrap())
        );
    }

    #[test]
    fn zero_learning_rate_keeps_initialisation() {
        let e = HashEmbedder::new(8).unwrap();
        let inst = vec![SareInstance {
            query: "alpha beta".into(),
            positive: "alpha".into(),
            negatives: vec!["gamma".into(), "delta".into()],
        }];
        let cfg = SareConfig { learning_rate: 0.0, epochs: 5, seed: 11, ..SareConfig::default() };
        let (adapter, report) = train_sare_adapter(&inst, &e, &cfg).unwrap();
        assert_eq!(adapter.matrix(), Adapter::initial_matrix(8, 11));
        assert_eq!(report.initial_loss, report.final_loss);
        assert_eq!(adapter.kind(), AdapterKind::Reranker);
    }

    #[test]
    fn history_before_excludes_target_and_later_items() {
        let c = tiny_corpus();
        let u1 = c.user_ix("u1").unwrap();
        let b = c.item_ix("b").unwrap();
        assert_eq!(history_before(&c, u1, b, 15).unwrap(), "'Alpha Story'");
        let u2 = c.user_ix("u2").unwrap();
        assert!(matches!(
            history_before(&c, u2, c.item_ix("c").unwrap(), 15),
            Err(Error::EmptyHistory(_))
        ));
    }

    #[test]
    fn stub_assessments_are_deterministic() {
        let c = tiny_corpus();
        let llm = StubLlm::from_items(c.items());
        let e = HashEmbedder::default();
        let targets = sample_targets(&c, 10, 15, 3).unwrap();
        assert_eq!(targets.len(), 1);
        let prompts = PromptBundle::default();
        let (a, skipped) = generate_assessments(&llm, &c, &targets, &e, &prompts, 2).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(a[0].text, "Helpful signals include: Comedy, Drama, Fantasy.");
        let (b, _) = generate_assessments(&llm, &c, &targets, &e, &prompts, 1).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("assessments.jsonl");
        write_assessments(&p, &a).unwrap();
        let first = std::fs::read(&p).unwrap();
        assert_eq!(read_assessments(&p).unwrap(), a);
        write_assessments(&p, &b).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }
}
