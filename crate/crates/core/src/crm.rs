//! Collaborative model: BPR matrix factorisation, collaborative sequence
//! embeddings and inner-product neighbour search.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_file, write_atomic, Decoder, Encoder};
use crate::corpus::{InteractionCorpus, ItemIx, UserIx};
use crate::error::{Error, Result};
use crate::linalg::{dot, score_desc};

const MAGIC: &[u8; 4] = b"CRM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    /// The user's own factor row.
    UserFactor,
    /// Mean of the factor rows of the user's positive items.
    MeanOfItems,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user-factor" => Ok(EmbeddingMode::UserFactor),
            "mean-of-items" => Ok(EmbeddingMode::MeanOfItems),
            other => Err(Error::config("mode", format!("unknown embedding mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for CrmConfig {
    fn default() -> Self {
        CrmConfig {
            dim: 64,
            epochs: 30,
            learning_rate: 0.05,
            l2: 1e-4,
            seed: 42,
        }
    }
}

impl CrmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config("l2", "must be non-negative"));
        }
        Ok(())
    }
}

/// Anything that maps a user's interaction sequence to a collaborative
/// embedding.
pub trait CollaborativeEncoder {
    fn dim(&self) -> usize;

    fn embed_user(&self, corpus: &InteractionCorpus, user: UserIx) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrmModel {
    dim: usize,
    user_factors: Vec<f32>,
    item_factors: Vec<f32>,
    mode: EmbeddingMode,
    seed: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CrmTrainReport {
    /// Mean per-sample objective of each epoch.
    pub epoch_losses: Vec<f64>,
    pub samples_per_epoch: usize,
    pub skipped_users: usize,
}

/// Per-sample BPR objective `−ln σ(x_ui − x_uj) + λ/2 (‖u‖² + ‖i‖² + ‖j‖²)`.
pub fn bpr_sample_loss(u: &[f64], i: &[f64], j: &[f64], l2: f64) -> f64 {
    let margin = dot(u, i) - dot(u, j);
    let reg = 0.5 * l2 * (dot(u, u) + dot(i, i) + dot(j, j));
    softplus(-margin) + reg
}

/// Gradient of [`bpr_sample_loss`] with respect to `(u, i, j)`.
pub fn bpr_sample_gradient(
    u: &[f64],
    i: &[f64],
    j: &[f64],
    l2: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let margin = dot(u, i) - dot(u, j);
    // d/dx softplus(-x) = -σ(-x)
    let s = -sigmoid(-margin);
    let gu = u
        .iter()
        .zip(i.iter().zip(j))
        .map(|(&uk, (&ik, &jk))| s * (ik - jk) + l2 * uk)
        .collect();
    let gi = u.iter().zip(i).map(|(&uk, &ik)| s * uk + l2 * ik).collect();
    let gj = u.iter().zip(j).map(|(&uk, &jk)| -s * uk + l2 * jk).collect();
    (gu, gi, gj)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn init_factors(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f64> {
    let bound = 0.1 / (dim as f64).sqrt();
    (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Trains BPR-MF by SGD over the positive interactions of `train`, with
/// uniformly sampled negatives among items the user has no positive for.
pub fn train_bpr_mf(
    train: &InteractionCorpus,
    config: &CrmConfig,
    mode: EmbeddingMode,
) -> Result<(CrmModel, CrmTrainReport)> {
    config.validate()?;
    let d = config.dim;
    let n_users = train.num_users();
    let n_items = train.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut users = init_factors(&mut rng, n_users, d);
    let mut items = init_factors(&mut rng, n_items, d);

    let mut report = CrmTrainReport::default();
    let mut samples: Vec<(usize, usize)> = Vec::new();
    let mut positive_sets: Vec<HashSet<usize>> = vec![HashSet::new(); n_users];
    for user in train.users() {
        let history = train.history(user);
        let set: HashSet<usize> = history.iter().map(|i| i.index()).collect();
        if history.is_empty() {
            continue;
        }
        if set.len() >= n_items {
            report.skipped_users += 1;
            continue;
        }
        samples.extend(history.iter().map(|i| (user.index(), i.index())));
        positive_sets[user.index()] = set;
    }
    if samples.is_empty() {
        return Err(Error::config("train", "no positive interactions to train on"));
    }
    report.samples_per_epoch = samples.len();

    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        samples.shuffle(&mut rng);
        let mut total = 0.0;
        for &(u, i) in &samples {
            let j = loop {
                let j = rng.gen_range(0..n_items);
                if !positive_sets[u].contains(&j) {
                    break j;
                }
            };
            let (ur, ir, jr) = (u * d..(u + 1) * d, i * d..(i + 1) * d, j * d..(j + 1) * d);
            let (uv, iv, jv) = (&users[ur.clone()], &items[ir.clone()], &items[jr.clone()]);
            total += bpr_sample_loss(uv, iv, jv, config.l2);
            let (gu, gi, gj) = bpr_sample_gradient(uv, iv, jv, config.l2);
            for (x, g) in users[ur].iter_mut().zip(&gu) {
                *x -= lr * g;
            }
            for (x, g) in items[ir].iter_mut().zip(&gi) {
                *x -= lr * g;
            }
            for (x, g) in items[jr].iter_mut().zip(&gj) {
                *x -= lr * g;
            }
        }
        report.epoch_losses.push(total / samples.len() as f64);
    }

    let model = CrmModel {
        dim: d,
        user_factors: users.iter().map(|&x| x as f32).collect(),
        item_factors: items.iter().map(|&x| x as f32).collect(),
        mode,
        seed: config.seed,
    };
    if !model.is_finite() {
        return Err(Error::config("learning_rate", "training diverged to non-finite factors"));
    }
    Ok((model, report))
}

impl CrmModel {
    pub fn from_factors(
        dim: usize,
        user_factors: Vec<f32>,
        item_factors: Vec<f32>,
        mode: EmbeddingMode,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if user_factors.len() % dim != 0 || item_factors.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: user_factors.len() % dim,
            });
        }
        let model = CrmModel {
            dim,
            user_factors,
            item_factors,
            mode,
            seed: 0,
        };
        if !model.is_finite() {
            return Err(Error::config("factors", "must be finite"));
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_mode(mut self, mode: EmbeddingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn num_users(&self) -> usize {
        self.user_factors.len() / self.dim
    }

    pub fn num_items(&self) -> usize {
        self.item_factors.len() / self.dim
    }

    pub fn user_factors(&self) -> &[f32] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f32] {
        &self.item_factors
    }

    pub fn user_row(&self, user: UserIx) -> Result<&[f32]> {
        let u = user.index();
        if u >= self.num_users() {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: u,
                size: self.num_users(),
            });
        }
        Ok(&self.user_factors[u * self.dim..(u + 1) * self.dim])
    }

    pub fn item_row(&self, item: ItemIx) -> Result<&[f32]> {
        let i = item.index();
        if i >= self.num_items() {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: i,
                size: self.num_items(),
            });
        }
        Ok(&self.item_factors[i * self.dim..(i + 1) * self.dim])
    }

    fn is_finite(&self) -> bool {
        self.user_factors.iter().chain(&self.item_factors).all(|x| x.is_finite())
    }

    /// Arithmetic mean of the item factor rows of `history`.
    pub fn sequence_embedding(&self, history: &[ItemIx]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::EmptyHistory("<sequence>".into()));
        }
        let mut acc = vec![0.0f64; self.dim];
        for &item in history {
            for (a, &x) in acc.iter_mut().zip(self.item_row(item)?) {
                *a += x as f64;
            }
        }
        let n = history.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Preference score `x_ui` from the user factor row.
    pub fn score(&self, user: UserIx, item: ItemIx) -> Result<f64> {
        let u = self.user_row(user)?;
        let i = self.item_row(item)?;
        Ok(u.iter().zip(i).map(|(&a, &b)| a as f64 * b as f64).sum())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC);
        e.u32(self.dim as u32)
            .u64(self.num_users() as u64)
            .u64(self.num_items() as u64)
            .f32s(&self.user_factors)
            .f32s(&self.item_factors);
        e.finish()
    }

    pub fn load(path: impl AsRef<Path>, mode: EmbeddingMode) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let mut d = Decoder::new(&bytes, MAGIC, path)?;
        let dim = d.u32()? as usize;
        let n_users = d.u64()? as usize;
        let n_items = d.u64()? as usize;
        if dim == 0 {
            return Err(d.error("zero dimension"));
        }
        let user_factors = d.f32s(n_users.saturating_mul(dim))?;
        let item_factors = d.f32s(n_items.saturating_mul(dim))?;
        d.finish()?;
        Self::from_factors(dim, user_factors, item_factors, mode)
    }
}

impl CollaborativeEncoder for CrmModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_user(&self, corpus: &InteractionCorpus, user: UserIx) -> Result<Vec<f64>> {
        match self.mode {
            EmbeddingMode::UserFactor => Ok(crate::linalg::widen(self.user_row(user)?)),
            EmbeddingMode::MeanOfItems => {
                let history = corpus.history(user);
                if history.is_empty() {
                    return Err(Error::EmptyHistory(corpus.user_key(user).to_string()));
                }
                self.sequence_embedding(history)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborList {
    pub target: UserIx,
    pub neighbors: Vec<(UserIx, f64)>,
}

/// Collaborative embeddings of every embeddable user, for repeated
/// inner-product neighbour queries.
pub struct CollaborativeIndex {
    embeddings: Vec<Option<Vec<f64>>>,
    keys: Vec<String>,
}

impl CollaborativeIndex {
    pub fn build(encoder: &impl CollaborativeEncoder, corpus: &InteractionCorpus) -> Result<Self> {
        let mut embeddings = Vec::with_capacity(corpus.num_users());
        for user in corpus.users() {
            embeddings.push(match encoder.embed_user(corpus, user) {
                Ok(e) => Some(e),
                Err(Error::EmptyHistory(_)) => None,
                Err(e) => return Err(e),
            });
        }
        Ok(CollaborativeIndex {
            embeddings,
            keys: corpus.users().map(|u| corpus.user_key(u).to_string()).collect(),
        })
    }

    pub fn has_embedding(&self, user: UserIx) -> bool {
        matches!(self.embeddings.get(user.index()), Some(Some(_)))
    }

    /// The `k` users maximising `h_iᵀ h_t`, target excluded, descending with
    /// ties broken by ascending user index. `k` clamps to the number of
    /// other embeddable users.
    pub fn top_k(&self, target: UserIx, k: usize) -> Result<NeighborList> {
        let query = match self.embeddings.get(target.index()) {
            Some(Some(q)) => q,
            Some(None) => return Err(Error::EmptyHistory(self.keys[target.index()].clone())),
            None => {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: target.index(),
                    size: self.embeddings.len(),
                })
            }
        };
        let mut scored: Vec<(UserIx, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .filter(|&(u, _)| u != target.index())
            .filter_map(|(u, e)| e.as_ref().map(|e| (UserIx(u as u32), dot(e, query))))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyNeighborhood(self.keys[target.index()].clone()));
        }
        let k = k.min(scored.len());
        let cmp = |a: &(UserIx, f64), b: &(UserIx, f64)| score_desc(a.1, b.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(NeighborList {
            target,
            neighbors: scored,
        })
    }
}

/// One-off neighbour query; build a [`CollaborativeIndex`] for many.
pub fn top_k_collaborative(
    encoder: &impl CollaborativeEncoder,
    corpus: &InteractionCorpus,
    target: UserIx,
    k: usize,
) -> Result<NeighborList> {
    CollaborativeIndex::build(encoder, corpus)?.top_k(target, k)
}
