//! Collaborative retriever: CRM neighbours supervise a linear adapter over
//! frozen text embeddings of user behaviour, trained with an in-batch
//! contrastive objective, and an exact cosine index over the adapted
//! embeddings.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterKind};
use crate::artifact::{read_file, write_atomic, Decoder, Encoder};
use crate::contrastive::{check_temperature, info_nce, projected_loss, ContrastiveTerm};
use crate::corpus::{InteractionCorpus, UserIx};
use crate::crm::{CollaborativeEncoder, CollaborativeIndex};
use crate::error::{Error, Result};
use crate::linalg::{score_desc, Matrix};
use crate::providers::{cosine_slices, EmbeddingVector, TextEmbedder};

const INDEX_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarConfig {
    pub k_c: usize,
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_items: usize,
    pub seed: u64,
}

impl Default for CarConfig {
    fn default() -> Self {
        CarConfig {
            k_c: 5,
            tau: 0.1,
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 16,
            max_items: 15,
            seed: 42,
        }
    }
}

impl CarConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.tau, "tau_car")?;
        if self.k_c == 0 {
            return Err(Error::config("k_c", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("car.learning_rate", "must be non-negative"));
        }
        if self.max_items == 0 {
            return Err(Error::config("max_items", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub anchor: UserIx,
    pub positives: Vec<UserIx>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingPairSet {
    pub entries: Vec<TrainingPair>,
    /// Anchors without a positive history.
    pub skipped_anchors: usize,
}

/// One entry per anchor with a positive history; positives are the anchor's
/// `k_c` nearest collaborative neighbours.
pub fn build_training_pairs(
    corpus: &InteractionCorpus,
    encoder: &impl CollaborativeEncoder,
    k_c: usize,
) -> Result<TrainingPairSet> {
    if k_c == 0 || k_c >= corpus.num_users() {
        return Err(Error::config(
            "k_c",
            format!("must be in 1..{} for this corpus", corpus.num_users()),
        ));
    }
    let index = CollaborativeIndex::build(encoder, corpus)?;
    let mut set = TrainingPairSet::default();
    for user in corpus.users() {
        if corpus.history(user).is_empty() || !index.has_embedding(user) {
            set.skipped_anchors += 1;
            continue;
        }
        let neighbors = index.top_k(user, k_c)?;
        set.entries.push(TrainingPair {
            anchor: user,
            positives: neighbors.neighbors.into_iter().map(|(u, _)| u).collect(),
        });
    }
    Ok(set)
}

/// CAR embedding of a frozen base embedding.
pub fn car_embed(adapter: &Adapter, base: &EmbeddingVector) -> Result<EmbeddingVector> {
    adapter.project(base)
}

/// In-batch negatives of batch member `t`: every other member's positives,
/// minus `t`'s anchor and `t`'s own positives, deduplicated in order of first
/// appearance.
pub fn in_batch_negatives(anchors: &[UserIx], positives: &[Vec<UserIx>], t: usize) -> Vec<UserIx> {
    let mut excluded: BTreeSet<UserIx> = positives[t].iter().copied().collect();
    excluded.insert(anchors[t]);
    let mut out = Vec::new();
    for (b, list) in positives.iter().enumerate() {
        if b == t {
            continue;
        }
        for &u in list {
            if excluded.insert(u) {
                out.push(u);
            }
        }
    }
    out
}

/// Contrastive retriever loss of one batch, summed over anchors and their
/// positives. Embeddings are indexed by user.
pub fn car_loss(
    anchors: &[UserIx],
    positives: &[Vec<UserIx>],
    embeddings: &HashMap<UserIx, EmbeddingVector>,
    tau: f64,
) -> Result<f64> {
    check_temperature(tau, "tau_car")?;
    let get = |u: &UserIx| {
        embeddings
            .get(u)
            .map(EmbeddingVector::to_f64)
            .ok_or(Error::UnknownKey {
                kind: "user embedding",
                key: u.0.to_string(),
            })
    };
    let mut total = 0.0;
    for t in 0..anchors.len() {
        let a = get(&anchors[t])?;
        let negs: Vec<Vec<f64>> = in_batch_negatives(anchors, positives, t)
            .iter()
            .map(get)
            .collect::<Result<_>>()?;
        let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        for p in &positives[t] {
            total += info_nce(&a, &get(p)?, &neg_refs, tau)?;
        }
    }
    Ok(total)
}

/// Builds the projected-InfoNCE terms of one batch of training pairs.
/// `slot` maps users to rows of the input matrix.
fn batch_terms(batch: &[&TrainingPair], slot: &HashMap<UserIx, usize>) -> Vec<ContrastiveTerm> {
    let anchors: Vec<UserIx> = batch.iter().map(|p| p.anchor).collect();
    let positives: Vec<Vec<UserIx>> = batch.iter().map(|p| p.positives.clone()).collect();
    let mut terms = Vec::new();
    for t in 0..batch.len() {
        let negatives: Vec<usize> = in_batch_negatives(&anchors, &positives, t)
            .iter()
            .map(|u| slot[u])
            .collect();
        for p in &positives[t] {
            terms.push(ContrastiveTerm {
                query: slot[&anchors[t]],
                positive: slot[p],
                negatives: negatives.clone(),
            });
        }
    }
    terms
}

/// Summed loss of one batch under the projection `w`, and its gradient with
/// respect to `w`. `base` holds the frozen embedding of every user in the
/// batch.
pub fn car_objective(
    w: &Matrix,
    batch: &[TrainingPair],
    base: &HashMap<UserIx, Vec<f64>>,
    tau: f64,
) -> Result<(f64, Matrix)> {
    check_temperature(tau, "tau_car")?;
    let users: BTreeSet<UserIx> = batch
        .iter()
        .flat_map(|p| std::iter::once(p.anchor).chain(p.positives.iter().copied()))
        .collect();
    let mut slot = HashMap::with_capacity(users.len());
    let mut inputs = Vec::with_capacity(users.len());
    for u in users {
        let v = base.get(&u).ok_or(Error::UnknownKey {
            kind: "user embedding",
            key: u.0.to_string(),
        })?;
        slot.insert(u, inputs.len());
        inputs.push(v.clone());
    }
    let refs: Vec<&TrainingPair> = batch.iter().collect();
    let terms = batch_terms(&refs, &slot);
    let (loss, grad) = projected_loss(w, &inputs, &terms, tau, true)?;
    Ok((loss, grad.unwrap_or_else(|| Matrix::zeros(w.rows, w.cols))))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CarTrainReport {
    /// Mean per-term loss over the unshuffled batches before training.
    pub initial_loss: f64,
    /// Mean per-term loss over the unshuffled batches after training.
    pub final_loss: f64,
    /// Running mean per-term loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Base embeddings of every user's behaviour text, keyed by user.
pub fn base_embeddings(
    corpus: &InteractionCorpus,
    users: &[UserIx],
    embedder: &dyn TextEmbedder,
    max_items: usize,
) -> Result<Vec<EmbeddingVector>> {
    let texts: Vec<String> = users
        .iter()
        .map(|&u| corpus.behavior_text(u, max_items))
        .collect::<Result<_>>()?;
    let vectors = embedder.embed_batch(&texts)?;
    if vectors.len() != users.len() {
        return Err(Error::Protocol("embedder returned a short batch".into()));
    }
    for (v, &u) in vectors.iter().zip(users) {
        if v.dim() != embedder.dim() {
            return Err(Error::DimensionMismatch {
                expected: embedder.dim(),
                actual: v.dim(),
            });
        }
        if v.is_zero() {
            return Err(Error::DegenerateCandidate(corpus.user_key(u).to_string()));
        }
    }
    Ok(vectors)
}

fn mean_loss(
    w: &Matrix,
    inputs: &[Vec<f64>],
    batches: &[Vec<ContrastiveTerm>],
    tau: f64,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for terms in batches {
        total += projected_loss(w, inputs, terms, tau, false)?.0;
        count += terms.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Fits the retriever adapter by mini-batch gradient descent on the
/// contrastive loss (mean over terms per step).
pub fn train_car_adapter(
    pairs: &TrainingPairSet,
    corpus: &InteractionCorpus,
    embedder: &dyn TextEmbedder,
    config: &CarConfig,
) -> Result<(Adapter, CarTrainReport)> {
    config.validate()?;
    if pairs.entries.is_empty() {
        return Err(Error::config("pairs", "no training pairs"));
    }
    let users: Vec<UserIx> = pairs
        .entries
        .iter()
        .flat_map(|p| std::iter::once(p.anchor).chain(p.positives.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot: HashMap<UserIx, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let inputs: Vec<Vec<f64>> = base_embeddings(corpus, &users, embedder, config.max_items)?
        .iter()
        .map(EmbeddingVector::to_f64)
        .collect();

    let dim = embedder.dim();
    let mut w = Adapter::initial_matrix(dim, config.seed);
    let fixed: Vec<Vec<ContrastiveTerm>> = pairs
        .entries
        .chunks(config.batch_size)
        .map(|chunk| batch_terms(&chunk.iter().collect::<Vec<_>>(), &slot))
        .collect();

    let mut report = CarTrainReport {
        initial_loss: mean_loss(&w, &inputs, &fixed, config.tau)?,
        ..CarTrainReport::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<&TrainingPair> = pairs.entries.iter().collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let terms = batch_terms(batch, &slot);
            let (loss, grad) = projected_loss(&w, &inputs, &terms, config.tau, true)?;
            total += loss;
            count += terms.len();
            if let Some(grad) = grad {
                w.axpy(-config.learning_rate / terms.len() as f64, &grad);
            }
        }
        let mean = total / count.max(1) as f64;
        report.epoch_losses.push(mean);
        if epoch % 10 == 0 {
            info!("car epoch {epoch}: loss {mean:.5}");
        }
    }
    let adapter = Adapter::from_matrix(AdapterKind::Retriever, &w, config.tau, config.seed)?;
    report.final_loss = mean_loss(&adapter.matrix(), &inputs, &fixed, config.tau)?;
    Ok((adapter, report))
}

/// Exact cosine index over CAR embeddings, one row per user with a positive
/// history, in user order.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f32>,
}

impl BehaviorIndex {
    pub fn from_rows(dim: usize, ids: Vec<String>, rows: Vec<f32>) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: rows.len(),
            });
        }
        Ok(BehaviorIndex { dim, ids, rows })
    }

    pub fn build(
        adapter: &Adapter,
        corpus: &InteractionCorpus,
        embedder: &dyn TextEmbedder,
        max_items: usize,
    ) -> Result<Self> {
        let users: Vec<UserIx> = corpus
            .users()
            .filter(|&u| !corpus.history(u).is_empty())
            .collect();
        let bases = base_embeddings(corpus, &users, embedder, max_items)?;
        let mut rows = Vec::with_capacity(users.len() * adapter.dim());
        for base in &bases {
            rows.extend_from_slice(car_embed(adapter, base)?.values());
        }
        Ok(BehaviorIndex {
            dim: adapter.dim(),
            ids: users.iter().map(|&u| corpus.user_key(u).to_string()).collect(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(INDEX_MAGIC);
        e.u32(self.dim as u32).u64(self.ids.len() as u64);
        for id in &self.ids {
            e.str(id);
        }
        e.f32s(&self.rows);
        e.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let mut d = Decoder::new(&bytes, INDEX_MAGIC, path)?;
        let dim = d.u32()? as usize;
        let count = d.u64()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            ids.push(d.str()?);
        }
        let rows = d.f32s(count.saturating_mul(dim))?;
        d.finish()?;
        Self::from_rows(dim, ids, rows)
    }
}

/// Exact top-`k_e` users by cosine to `query`, excluding `exclude`, sorted
/// descending with ties broken by index order.
pub fn retrieve(
    index: &BehaviorIndex,
    query: &EmbeddingVector,
    k_e: usize,
    exclude: Option<&str>,
) -> Result<Vec<(String, f64)>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            actual: query.dim(),
        });
    }
    let mut scored = Vec::with_capacity(index.len());
    for (i, id) in index.ids.iter().enumerate() {
        if Some(id.as_str()) == exclude {
            continue;
        }
        scored.push((i, cosine_slices(query.values(), index.row(i), query.is_zero())?));
    }
    let cmp = |a: &(usize, f64), b: &(usize, f64)| score_desc(a.1, b.1).then(a.0.cmp(&b.0));
    let k = k_e.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (index.ids[i].clone(), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::HashEmbedder;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::Rng;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_raw(v)
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        unit(&v)
    }

    #[test]
    fn single_anchor_single_positive_is_zero() {
        let emb: HashMap<_, _> = [(UserIx(0), unit(&[1.0, 0.0])), (UserIx(1), unit(&[0.0, 1.0]))].into();
        let l = car_loss(&[UserIx(0)], &[vec![UserIx(1)]], &emb, 0.1).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn equal_cosine_negative_gives_ln2() {
        // anchor 0 with positive 1; anchor 2 with positive 3; cos(0,1) = cos(0,3)
        let emb: HashMap<_, _> = [
            (UserIx(0), unit(&[1.0, 0.0, 0.0])),
            (UserIx(1), unit(&[0.6, 0.8, 0.0])),
            (UserIx(2), unit(&[0.0, 0.0, 1.0])),
            (UserIx(3), unit(&[0.6, 0.0, 0.8])),
        ]
        .into();
        let anchors = [UserIx(0)];
        let negs = in_batch_negatives(&[UserIx(0), UserIx(2)], &[vec![UserIx(1)], vec![UserIx(3)]], 0);
        assert_eq!(negs, vec![UserIx(3)]);
        let positives = vec![vec![UserIx(1)]];
        assert_eq!(car_loss(&anchors, &positives, &emb, 0.1).unwrap(), 0.0);
        let both = car_loss(
            &[UserIx(0), UserIx(2)],
            &[vec![UserIx(1)], vec![UserIx(3)]],
            &emb,
            0.1,
        )
        .unwrap();
        // anchor 0: ln 2; anchor 2: cos(2,3)=0.8 vs cos(2,1)=0
        let second = -((0.8f64 / 0.1).exp() / ((0.8f64 / 0.1).exp() + 1.0)).ln();
        assert!((both - std::f64::consts::LN_2 - second).abs() < 1e-6);
    }

    #[test]
    fn negatives_exclude_anchor_and_own_positives() {
        let anchors = [UserIx(0), UserIx(1), UserIx(2)];
        let positives = vec![
            vec![UserIx(1), UserIx(5)],
            vec![UserIx(0), UserIx(5), UserIx(6)],
            vec![UserIx(6), UserIx(7)],
        ];
        assert_eq!(in_batch_negatives(&anchors, &positives, 0), vec![UserIx(6), UserIx(7)]);
        assert_eq!(in_batch_negatives(&anchors, &positives, 2), vec![UserIx(1), UserIx(5), UserIx(0)]);
    }

    #[test]
    fn two_anchor_batch_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let emb: HashMap<UserIx, EmbeddingVector> =
            (0..6).map(|u| (UserIx(u), random_unit(&mut rng, 4))).collect();
        let anchors = [UserIx(0), UserIx(1)];
        let positives = vec![vec![UserIx(2), UserIx(3)], vec![UserIx(4), UserIx(5)]];
        let got = car_loss(&anchors, &positives, &emb, 0.1).unwrap();

        let v = |u: u32| emb[&UserIx(u)].to_f64();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let g = |a: u32, b: u32| (cos(&v(a), &v(b)) / 0.1).exp();
        let mut expected = 0.0;
        for (anchor, pos, negs) in [(0, [2, 3], [4, 5]), (1, [4, 5], [2, 3])] {
            for p in pos {
                let denom = g(anchor, p) + negs.iter().map(|&n| g(anchor, n)).sum::<f64>();
                expected += -(g(anchor, p) / denom).ln();
            }
        }
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn loss_decreases_when_positive_moves_closer() {
        let emb = |p: [f64; 2]| -> HashMap<UserIx, EmbeddingVector> {
            [
                (UserIx(0), unit(&[1.0, 0.0])),
                (UserIx(1), unit(&p)),
                (UserIx(2), unit(&[0.0, 1.0])),
                (UserIx(3), unit(&[0.5, 0.5])),
            ]
            .into()
        };
        let anchors = [UserIx(0), UserIx(2)];
        let positives = vec![vec![UserIx(1)], vec![UserIx(3)]];
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let angle = 1.2 - 0.1 * step as f64;
            let l = car_loss(&anchors, &positives, &emb([angle.cos(), angle.sin()]), 0.1).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn retrieve_basics() {
        let index = BehaviorIndex::from_rows(
            2,
            vec!["a".into(), "b".into(), "c".into()],
            vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8],
        )
        .unwrap();
        let q = unit(&[0.0, 1.0]);
        let hits = retrieve(&index, &q, 10, None).unwrap();
        assert_eq!(hits[0].0, "b");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(hits.len(), 3);
        let hits = retrieve(&index, &q, 10, Some("b")).unwrap();
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), vec!["c", "a"]);
        let empty = BehaviorIndex::from_rows(2, vec![], vec![]).unwrap();
        assert!(matches!(retrieve(&empty, &q, 3, None), Err(Error::EmptyIndex)));
    }

    #[test]
    fn index_artifact_round_trip() {
        let index = BehaviorIndex::from_rows(2, vec!["u1".into(), "ü2".into()], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = index.to_bytes();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.emb");
        index.save(&p).unwrap();
        assert_eq!(BehaviorIndex::load(&p).unwrap(), index);
    }

    #[test]
    fn zero_learning_rate_keeps_initialisation() {
        use crate::corpus::{IngestOptions, InteractionRecord, ItemMeta};
        let items: Vec<ItemMeta> = (0..6)
            .map(|i| ItemMeta::new(format!("i{i}"), format!("Title {i} word{i}"), vec![]))
            .collect();
        let records: Vec<InteractionRecord> = (0..4)
            .flat_map(|u| {
                (0..3).map(move |k| InteractionRecord {
                    user_id: format!("u{u}"),
                    item_id: format!("i{}", (u + k) % 6),
                    rating: 5,
                    timestamp: k as i64,
                })
            })
            .collect();
        let corpus = InteractionCorpus::from_records(records, items, &IngestOptions::default()).unwrap();
        let pairs = TrainingPairSet {
            entries: vec![
                TrainingPair { anchor: UserIx(0), positives: vec![UserIx(1)] },
                TrainingPair { anchor: UserIx(2), positives: vec![UserIx(3)] },
            ],
            skipped_anchors: 0,
        };
        let cfg = CarConfig { learning_rate: 0.0, epochs: 3, seed: 9, ..CarConfig::default() };
        let embedder = HashEmbedder::new(16).unwrap();
        let (adapter, report) = train_car_adapter(&pairs, &corpus, &embedder, &cfg).unwrap();
        let init = Adapter::initial_matrix(16, 9);
        assert_eq!(adapter.matrix(), init);
        assert_eq!(report.initial_loss, report.final_loss);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn retrieve_equals_exhaustive_sort(seed in any::<u64>(), n in 1usize..50, k in 1usize..60, excl in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            // coarse rows so that ties occur
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-2i32..=2) as f64).collect())
                .map(|v: Vec<f64>| if v.iter().all(|x| *x == 0.0) { vec![1.0, 0.0, 0.0] } else { v })
                .collect();
            let ids: Vec<String> = (0..n).map(|i| format!("u{i:03}")).collect();
            let flat: Vec<f32> = rows.iter().flat_map(|r| unit(r).values().to_vec()).collect();
            let index = BehaviorIndex::from_rows(d, ids.clone(), flat).unwrap();
            let query = random_unit(&mut rng, d);
            let exclude = if excl { Some(ids[rng.gen_range(0..n)].clone()) } else { None };
            let got = retrieve(&index, &query, k, exclude.as_deref()).unwrap();

            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&i| Some(&ids[i]) != exclude.as_ref())
                .map(|i| (i, cosine_slices(query.values(), index.row(i), false).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            let expected: Vec<(String, f64)> = all.into_iter().map(|(i, s)| (ids[i].clone(), s)).collect();
            prop_assert_eq!(&got, &expected);
            let distinct: BTreeSet<&String> = got.iter().map(|g| &g.0).collect();
            prop_assert_eq!(distinct.len(), got.len());
            prop_assert!(got.iter().all(|g| Some(&g.0) != exclude.as_ref()));
        }
    }
}
