//! Seeded synthetic corpora with planted structure, for tests, demos and
//! the bundled example data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{InteractionRecord, ItemMeta};

const GROUP_NAMES: [&str; 8] = ["Amber", "Birch", "Cobalt", "Dune", "Ember", "Fjord", "Garnet", "Harbor"];
const NOISE_WORDS: [&str; 6] = ["Night", "Story", "Return", "Legacy", "Road", "Dream"];

fn record(user: &str, item: &str, rating: u8, timestamp: i64) -> InteractionRecord {
    InteractionRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        rating,
        timestamp,
    }
}

/// Two user groups, each interacting only with its own half of the items.
#[derive(Debug, Clone)]
pub struct TwoBlock {
    pub records: Vec<InteractionRecord>,
    pub items: Vec<ItemMeta>,
    /// Group of each user id `u{n}`, indexed by `n`.
    pub groups: Vec<usize>,
    /// Held-out positives `(user, item)`, absent from `records`.
    pub held_out: Vec<(String, String)>,
}

/// 50 users and 40 items in two blocks; every user rates 12 items of its
/// own block and the last 2 of them are held out.
pub fn two_block(seed: u64) -> TwoBlock {
    let (users, items_per_block, per_user, held) = (50, 20, 12, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<ItemMeta> = (0..2 * items_per_block)
        .map(|i| {
            let block = i / items_per_block;
            ItemMeta::new(format!("i{i}"), format!("Block{block} Item {i}"), vec![format!("Block{block}")])
        })
        .collect();
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut held_out = Vec::new();
    for u in 0..users {
        let group = u * 2 / users;
        groups.push(group);
        let mut pool: Vec<usize> = (group * items_per_block..(group + 1) * items_per_block).collect();
        pool.shuffle(&mut rng);
        for (k, &item) in pool[..per_user].iter().enumerate() {
            let (user_id, item_id) = (format!("u{u}"), format!("i{item}"));
            if k >= per_user - held {
                held_out.push((user_id, item_id));
            } else {
                records.push(record(&user_id, &item_id, rng.gen_range(4..=5), k as i64));
            }
        }
    }
    TwoBlock { records, items, groups, held_out }
}

/// Users in clusters of six; titles carry a cluster word and shared noise
/// words, and a few popular items cut across clusters.
#[derive(Debug, Clone)]
pub struct PlantedClusters {
    pub records: Vec<InteractionRecord>,
    pub items: Vec<ItemMeta>,
    /// Cluster of each user id `u{n}`, indexed by `n`.
    pub clusters: Vec<usize>,
}

pub fn planted_clusters(clusters: usize, seed: u64) -> PlantedClusters {
    let clusters = clusters.clamp(2, GROUP_NAMES.len());
    let (cluster_size, items_per_cluster, per_user, popular) = (6, 8, 5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for (c, name) in GROUP_NAMES.iter().enumerate().take(clusters) {
        for n in 0..items_per_cluster {
            let noise = NOISE_WORDS[rng.gen_range(0..NOISE_WORDS.len())];
            items.push(ItemMeta::new(
                format!("c{c}i{n}"),
                format!("{name} {noise} {}", n + 1),
                vec![name.to_string()],
            ));
        }
    }
    for p in 0..popular {
        items.push(ItemMeta::new(format!("pop{p}"), format!("Common Hit {}", p + 1), vec!["Popular".into()]));
    }
    let mut records = Vec::new();
    let mut of_user = Vec::new();
    for c in 0..clusters {
        for k in 0..cluster_size {
            let user = format!("u{}", c * cluster_size + k);
            of_user.push(c);
            let mut pool: Vec<usize> = (0..items_per_cluster).collect();
            pool.shuffle(&mut rng);
            let mut t = 0;
            for &n in &pool[..per_user] {
                records.push(record(&user, &format!("c{c}i{n}"), 5, t));
                t += 1;
            }
            records.push(record(&user, &format!("pop{}", rng.gen_range(0..popular)), 4, t));
        }
    }
    PlantedClusters { records, items, clusters: of_user }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSignalSpec {
    pub groups: usize,
    /// Users per group whose history holds only core and popular items.
    pub plain_users: usize,
    /// Users per group that also hold the group's hidden items.
    pub insider_users: usize,
    pub seed: u64,
}

impl Default for PlantedSignalSpec {
    fn default() -> Self {
        PlantedSignalSpec {
            groups: 4,
            plain_users: 8,
            insider_users: 12,
            seed: 7,
        }
    }
}

/// A corpus whose test items are predictable only through neighbours.
///
/// Every group owns core items (tagged with the group name) and hidden
/// items (tagged `{Group}veil`). Plain users rate core and popular items;
/// insiders also rate their group's hidden items. In the test window each
/// plain user has one positive on a hidden item of its own group and one
/// negative on a hidden item of another group, so the target's own history
/// carries no tag evidence either way.
#[derive(Debug, Clone)]
pub struct PlantedSignal {
    pub records: Vec<InteractionRecord>,
    pub items: Vec<ItemMeta>,
    pub train_end: i64,
    pub val_end: i64,
}

pub fn planted_signal(spec: &PlantedSignalSpec) -> PlantedSignal {
    let groups = spec.groups.clamp(2, GROUP_NAMES.len());
    let (core, hidden, popular) = (8, 4, 3);
    let (train_end, val_end) = (1_000, 2_000);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut items = Vec::new();
    for name in GROUP_NAMES.iter().take(groups) {
        for n in 0..core {
            let year = 1970 + rng.gen_range(0..40);
            items.push(ItemMeta::new(
                format!("{}-core-{n}", name.to_lowercase()),
                format!("{name} Saga {} ({year})", n + 1),
                vec![name.to_string()],
            ));
        }
        for n in 0..hidden {
            items.push(ItemMeta::new(
                format!("{}-hidden-{n}", name.to_lowercase()),
                format!("{name}veil Legend {}", n + 1),
                vec![format!("{name}veil")],
            ));
        }
    }
    for p in 0..popular {
        items.push(ItemMeta::new(format!("popular-{p}"), format!("Common Hit {}", p + 1), vec!["Popular".into()]));
    }
    let core_id = |g: usize, n: usize| format!("{}-core-{n}", GROUP_NAMES[g].to_lowercase());
    let hidden_id = |g: usize, n: usize| format!("{}-hidden-{n}", GROUP_NAMES[g].to_lowercase());

    let mut records = Vec::new();
    let mut next_user = 0;
    for g in 0..groups {
        for kind in 0..2 {
            let count = if kind == 0 { spec.plain_users } else { spec.insider_users };
            for _ in 0..count {
                let user = format!("user{next_user:03}");
                next_user += 1;
                let mut train: Vec<(String, u8)> = Vec::new();
                let mut pool: Vec<usize> = (0..core).collect();
                pool.shuffle(&mut rng);
                let n_core = if kind == 0 { 6 } else { 5 };
                train.extend(pool[..n_core].iter().map(|&n| (core_id(g, n), rng.gen_range(4..=5))));
                train.push((format!("popular-{}", rng.gen_range(0..popular)), 4));
                // one disliked core item of another group
                let other = (g + rng.gen_range(1..groups)) % groups;
                train.push((core_id(other, rng.gen_range(0..core)), 2));
                train.shuffle(&mut rng);
                if kind == 1 {
                    // insiders discover the hidden items after the core ones
                    let mut hp: Vec<usize> = (0..hidden).collect();
                    hp.shuffle(&mut rng);
                    let n_hidden = rng.gen_range(1..=3);
                    train.extend(hp[..n_hidden].iter().map(|&n| (hidden_id(g, n), 5)));
                }
                let mut t = 1 + rng.gen_range(0..50);
                for (item, rating) in train {
                    records.push(record(&user, &item, rating, t));
                    t += 1 + rng.gen_range(0..80);
                }
                records.push(record(
                    &user,
                    &format!("popular-{}", rng.gen_range(0..popular)),
                    3,
                    train_end + rng.gen_range(0..500),
                ));
                if kind == 0 {
                    let pos = hidden_id(g, rng.gen_range(0..hidden));
                    let other = (g + rng.gen_range(1..groups)) % groups;
                    let neg = hidden_id(other, rng.gen_range(0..hidden));
                    let t = val_end + rng.gen_range(0..500);
                    records.push(record(&user, &pos, 5, t));
                    records.push(record(&user, &neg, 1, t + 1));
                }
            }
        }
    }
    PlantedSignal { records, items, train_end, val_end }
}
