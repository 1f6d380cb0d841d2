//! Conversion of the MovieLens-1M `::`-separated release into the TSV
//! interaction/metadata format, plus its temporal protocol: keep the most
//! recent 20 months, then 10/5/5 months for train/val/test.

use std::path::Path;

use chrono::{DateTime, Months};

use super::{InteractionRecord, ItemMeta, SplitSpec};
use crate::error::{Error, Result};

pub const WINDOW_MONTHS: u32 = 20;
pub const TRAIN_MONTHS: u32 = 10;
pub const VAL_MONTHS: u32 = 5;

/// Reference train/val/test interaction counts for ML-1M under this protocol.
pub const REFERENCE_COUNTS: (usize, usize, usize) = (33_891, 10_401, 7_331);
/// Reference user and item counts for the same corpus.
pub const REFERENCE_USERS_ITEMS: (usize, usize) = (839, 3_256);

fn latin1_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text.lines().map(str::to_string).collect())
}

/// Parses `UserID::MovieID::Rating::Timestamp` lines.
pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    for (n, line) in latin1_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        let bad = || Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: "expected UserID::MovieID::Rating::Timestamp".into(),
        };
        if fields.len() != 4 {
            return Err(bad());
        }
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            rating: fields[2].parse().map_err(|_| bad())?,
            timestamp: fields[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(records)
}

/// Parses `MovieID::Title::Genre1|Genre2` lines.
pub fn read_movies(path: impl AsRef<Path>) -> Result<Vec<ItemMeta>> {
    let path = path.as_ref();
    let mut items = Vec::new();
    for (n, line) in latin1_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: "expected MovieID::Title::Genres".into(),
            });
        }
        items.push(ItemMeta::new(
            fields[0],
            fields[1],
            fields[2].split('|').map(str::to_string).collect(),
        ));
    }
    Ok(items)
}

fn shift_months(timestamp: i64, back: u32) -> Result<i64> {
    let dt = DateTime::from_timestamp(timestamp, 0)
        .ok_or_else(|| Error::config("timestamp", "out of range"))?;
    let shifted = dt
        .checked_sub_months(Months::new(back))
        .ok_or_else(|| Error::config("timestamp", "out of range"))?;
    Ok(shifted.timestamp())
}

/// Window start and split boundaries derived from the latest timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub window_start: i64,
    pub split: SplitSpec,
}

pub fn protocol(records: &[InteractionRecord]) -> Result<Protocol> {
    let last = records
        .iter()
        .map(|r| r.timestamp)
        .max()
        .ok_or_else(|| Error::config("interactions", "no records"))?;
    let window_start = shift_months(last, WINDOW_MONTHS)?;
    let train_end = shift_months(last, WINDOW_MONTHS - TRAIN_MONTHS)?;
    let val_end = shift_months(last, WINDOW_MONTHS - TRAIN_MONTHS - VAL_MONTHS)?;
    // boundaries are inclusive on the left, so step back one second
    Ok(Protocol {
        window_start,
        split: SplitSpec::new(train_end - 1, val_end - 1)?,
    })
}
