//! Interaction corpus: ingestion, chronological user sequences, temporal
//! splits and the natural-language rendering of user behaviour.

pub mod movielens;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense user index; assigned in order of first appearance in the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserIx(pub u32);

/// Dense item index; assigned in metadata file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemIx(pub u32);

impl UserIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One raw line of the interactions file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMeta {
    pub item_id: String,
    pub title: String,
    pub tags: Vec<String>,
}

impl ItemMeta {
    /// Builds metadata, dropping repeated tags while keeping first-seen order.
    pub fn new(item_id: impl Into<String>, title: impl Into<String>, tags: Vec<String>) -> Self {
        let mut seen = BTreeSet::new();
        let tags = tags
            .into_iter()
            .filter(|t| !t.is_empty() && seen.insert(t.clone()))
            .collect();
        ItemMeta {
            item_id: item_id.into(),
            title: title.into(),
            tags,
        }
    }
}

/// A resolved interaction inside a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserIx,
    pub item: ItemIx,
    pub rating: u8,
    pub label: bool,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// `rating >= binarize_threshold` is a positive.
    pub binarize_threshold: u8,
    /// Records strictly before this timestamp are dropped.
    pub window_start: Option<i64>,
    /// Users with fewer retained records are dropped.
    pub min_interactions: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            binarize_threshold: 4,
            window_start: None,
            min_interactions: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InteractionCorpus {
    user_keys: Vec<String>,
    user_lookup: HashMap<String, UserIx>,
    items: Vec<ItemMeta>,
    item_lookup: HashMap<String, ItemIx>,
    sequences: Vec<Vec<Interaction>>,
    positives: Vec<Vec<ItemIx>>,
}

impl InteractionCorpus {
    /// Builds a corpus from already-parsed records and item metadata.
    pub fn from_records(
        records: Vec<InteractionRecord>,
        items: Vec<ItemMeta>,
        options: &IngestOptions,
    ) -> Result<Self> {
        let mut item_lookup = HashMap::with_capacity(items.len());
        for (i, meta) in items.iter().enumerate() {
            if item_lookup
                .insert(meta.item_id.clone(), ItemIx(i as u32))
                .is_some()
            {
                return Err(Error::Parse {
                    path: "<metadata>".into(),
                    line: i + 1,
                    message: format!("duplicate item id `{}`", meta.item_id),
                });
            }
        }

        let mut retained: Vec<InteractionRecord> = records
            .into_iter()
            .filter(|r| options.window_start.is_none_or(|start| r.timestamp >= start))
            .collect();

        if let Some(min) = options.min_interactions {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for r in &retained {
                *counts.entry(r.user_id.as_str()).or_default() += 1;
            }
            let keep: BTreeSet<String> = counts
                .into_iter()
                .filter(|&(_, c)| c >= min)
                .map(|(k, _)| k.to_string())
                .collect();
            retained.retain(|r| keep.contains(&r.user_id));
        }

        let missing: BTreeSet<&str> = retained
            .iter()
            .filter(|r| !item_lookup.contains_key(&r.item_id))
            .map(|r| r.item_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingMetadata(
                missing.into_iter().map(str::to_string).collect(),
            ));
        }

        let mut user_keys = Vec::new();
        let mut user_lookup = HashMap::new();
        let mut sequences: Vec<Vec<Interaction>> = Vec::new();
        for r in &retained {
            let user = *user_lookup.entry(r.user_id.clone()).or_insert_with(|| {
                user_keys.push(r.user_id.clone());
                sequences.push(Vec::new());
                UserIx((user_keys.len() - 1) as u32)
            });
            sequences[user.index()].push(Interaction {
                user,
                item: item_lookup[&r.item_id],
                rating: r.rating,
                label: r.rating >= options.binarize_threshold,
                timestamp: r.timestamp,
            });
        }

        Ok(Self::assemble(user_keys, user_lookup, items, item_lookup, sequences))
    }

    fn assemble(
        user_keys: Vec<String>,
        user_lookup: HashMap<String, UserIx>,
        items: Vec<ItemMeta>,
        item_lookup: HashMap<String, ItemIx>,
        mut sequences: Vec<Vec<Interaction>>,
    ) -> Self {
        // stable: ties keep input order
        for seq in &mut sequences {
            seq.sort_by_key(|x| x.timestamp);
        }
        let positives = sequences
            .iter()
            .map(|seq| seq.iter().filter(|x| x.label).map(|x| x.item).collect())
            .collect();
        InteractionCorpus {
            user_keys,
            user_lookup,
            items,
            item_lookup,
            sequences,
            positives,
        }
    }

    /// Reads the interactions and metadata TSV files.
    pub fn ingest(
        interaction_path: impl AsRef<Path>,
        metadata_path: impl AsRef<Path>,
        options: &IngestOptions,
    ) -> Result<Self> {
        let items = read_metadata(metadata_path)?;
        let records = read_interactions(interaction_path)?;
        Self::from_records(records, items, options)
    }

    /// A corpus sharing this corpus' user and item tables but holding only
    /// the given interactions.
    pub fn restrict(&self, interactions: &[Interaction]) -> Self {
        let mut sequences = vec![Vec::new(); self.user_keys.len()];
        for x in interactions {
            sequences[x.user.index()].push(*x);
        }
        Self::assemble(
            self.user_keys.clone(),
            self.user_lookup.clone(),
            self.items.clone(),
            self.item_lookup.clone(),
            sequences,
        )
    }

    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> impl Iterator<Item = UserIx> + '_ {
        (0..self.user_keys.len() as u32).map(UserIx)
    }

    pub fn user_key(&self, user: UserIx) -> &str {
        &self.user_keys[user.index()]
    }

    pub fn user_ix(&self, key: &str) -> Result<UserIx> {
        self.user_lookup
            .get(key)
            .copied()
            .ok_or_else(|| Error::UnknownKey {
                kind: "user",
                key: key.to_string(),
            })
    }

    pub fn item(&self, item: ItemIx) -> &ItemMeta {
        &self.items[item.index()]
    }

    pub fn items(&self) -> &[ItemMeta] {
        &self.items
    }

    pub fn item_ix(&self, key: &str) -> Result<ItemIx> {
        self.item_lookup
            .get(key)
            .copied()
            .ok_or_else(|| Error::UnknownKey {
                kind: "item",
                key: key.to_string(),
            })
    }

    /// Chronological sequence of every retained interaction of `user`.
    pub fn sequence(&self, user: UserIx) -> &[Interaction] {
        &self.sequences[user.index()]
    }

    /// H(u): positively labelled items of `user`, chronological.
    pub fn history(&self, user: UserIx) -> &[ItemIx] {
        &self.positives[user.index()]
    }

    /// All interactions, grouped by user then chronological.
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> + '_ {
        self.sequences.iter().flatten()
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            users: self.num_users(),
            items: self.num_items(),
            interactions: self.sequences.iter().map(Vec::len).sum(),
            positives: self.positives.iter().map(Vec::len).sum(),
        }
    }

    /// d(H(u)): the most recent `max_items` positive titles, oldest first,
    /// each single-quoted and comma separated.
    pub fn behavior_text(&self, user: UserIx, max_items: usize) -> Result<String> {
        if max_items == 0 {
            return Err(Error::config("max_items", "must be positive"));
        }
        let history = self.positives.get(user.index()).ok_or(Error::IndexOutOfRange {
            kind: "user",
            index: user.index(),
            size: self.num_users(),
        })?;
        if history.is_empty() {
            return Err(Error::EmptyHistory(self.user_key(user).to_string()));
        }
        let start = history.len().saturating_sub(max_items);
        let titles: Vec<String> = history[start..]
            .iter()
            .map(|&item| quote_title(&self.item(item).title))
            .collect();
        Ok(titles.join(", "))
    }

    /// d(v): the single-quoted title of an item.
    pub fn item_text(&self, item: ItemIx) -> String {
        quote_title(&self.item(item).title)
    }

    /// Writes the interactions in the input TSV format, grouped by user.
    pub fn write_interactions(&self, mut out: impl Write) -> std::io::Result<()> {
        for x in self.interactions() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.user_key(x.user),
                self.item(x.item).item_id,
                x.rating,
                x.timestamp
            )?;
        }
        Ok(())
    }

    pub fn write_metadata(&self, out: impl Write) -> std::io::Result<()> {
        write_metadata(&self.items, out)
    }

    /// Writes an arbitrary interaction subset in the input TSV format.
    pub fn write_subset(&self, subset: &[Interaction], mut out: impl Write) -> std::io::Result<()> {
        for x in subset {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.user_key(x.user),
                self.item(x.item).item_id,
                x.rating,
                x.timestamp
            )?;
        }
        Ok(())
    }
}

pub fn quote_title(title: &str) -> String {
    format!("'{title}'")
}

pub fn write_metadata(items: &[ItemMeta], mut out: impl Write) -> std::io::Result<()> {
    for meta in items {
        writeln!(out, "{}\t{}\t{}", meta.item_id, meta.title, meta.tags.join("|"))?;
    }
    Ok(())
}

pub fn write_records(records: &[InteractionRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}\t{}\t{}\t{}", r.user_id, r.item_id, r.rating, r.timestamp)?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    parse_interactions(open(path)?, &path.display().to_string())
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<ItemMeta>> {
    let path = path.as_ref();
    parse_metadata(open(path)?, &path.display().to_string())
}

/// Parses `user_id<TAB>item_id<TAB>rating<TAB>timestamp` lines.
pub fn parse_interactions(reader: impl BufRead, source: &str) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(bad("empty user or item id".into()));
        }
        let rating: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid rating `{}`", fields[2])))?;
        if !(1..=5).contains(&rating) {
            return Err(bad(format!("rating {rating} outside 1..=5")));
        }
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid timestamp `{}`", fields[3])))?;
        if timestamp < 0 {
            return Err(bad(format!("negative timestamp {timestamp}")));
        }
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

/// Parses `item_id<TAB>title<TAB>tag1|tag2|...` lines; the tag column may be
/// empty or absent.
pub fn parse_metadata(reader: impl BufRead, source: &str) -> Result<Vec<ItemMeta>> {
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(bad("expected item_id, title and optional tags"));
        }
        if fields[0].is_empty() {
            return Err(bad("empty item id"));
        }
        if fields[1].trim().is_empty() {
            return Err(bad("empty title"));
        }
        let tags = fields
            .get(2)
            .map(|t| t.split('|').map(|s| s.trim().to_string()).collect())
            .unwrap_or_default();
        items.push(ItemMeta::new(fields[0], fields[1], tags));
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: i64,
    pub val_end: i64,
}

impl SplitSpec {
    pub fn new(train_end: i64, val_end: i64) -> Result<Self> {
        let spec = SplitSpec { train_end, val_end };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_end >= self.val_end {
            return Err(Error::config("val_end", "must be greater than train_end"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

/// Partitions every interaction by timestamp; boundaries belong to the
/// earlier partition.
pub fn temporal_split(corpus: &InteractionCorpus, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut split = Split::default();
    for x in corpus.interactions() {
        if x.timestamp <= spec.train_end {
            split.train.push(*x);
        } else if x.timestamp <= spec.val_end {
            split.val.push(*x);
        } else {
            split.test.push(*x);
        }
    }
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            warn!("temporal split produced an empty {name} partition");
        }
    }
    Ok(split)
}
