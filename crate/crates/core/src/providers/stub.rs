use std::collections::{BTreeSet, HashMap};

use super::{JudgeResult, LanguageModel};
use crate::corpus::ItemMeta;
use crate::error::{Error, Result};

/// Gain applied to the tag Jaccard similarity when producing judge logits.
pub const STUB_YES_GAIN: f64 = 4.0;

const DEFAULT_TARGET_MARKER: &str = "would enjoy the";
const ASSESSMENT_LEAD: &str = "Helpful signals include: ";

/// Offline language model driven by item tags.
///
/// The stub recognises single-quoted item titles in a prompt. Titles before
/// the last occurrence of the target marker form the history (including any
/// collaborative context); titles after it are the target.
///
/// * `complete` lists the sorted, deduplicated union of history and target
///   tags.
/// * `judge` returns logits `(g·J, g·(1−J))` where `J` is the Jaccard
///   similarity of the target tags and the history tags, `g` = 4.
#[derive(Debug, Clone)]
pub struct StubLlm {
    catalog: HashMap<String, Vec<String>>,
    target_marker: String,
}

impl StubLlm {
    pub fn from_items(items: &[ItemMeta]) -> Self {
        let mut catalog: HashMap<String, Vec<String>> = HashMap::with_capacity(items.len());
        for meta in items {
            let tags = catalog.entry(meta.title.clone()).or_default();
            for t in &meta.tags {
                if !tags.contains(t) {
                    tags.push(t.clone());
                }
            }
        }
        StubLlm {
            catalog,
            target_marker: DEFAULT_TARGET_MARKER.to_string(),
        }
    }

    pub fn with_target_marker(mut self, marker: impl Into<String>) -> Self {
        self.target_marker = marker.into();
        self
    }

    /// Tags of every catalogue item quoted in `segment`, in order of mention.
    fn mentioned_tags<'a>(&'a self, segment: &str) -> Vec<&'a str> {
        let quotes: Vec<usize> = segment.match_indices('\'').map(|(i, _)| i).collect();
        let mut tags = Vec::new();
        let mut a = 0;
        while a < quotes.len() {
            let start = quotes[a] + 1;
            let hit = quotes[a + 1..]
                .iter()
                .enumerate()
                .find_map(|(k, &end)| self.catalog.get(&segment[start..end]).map(|t| (k, t)));
            match hit {
                Some((k, item_tags)) => {
                    tags.extend(item_tags.iter().map(String::as_str));
                    a += k + 2;
                }
                None => a += 1,
            }
        }
        tags
    }

    fn split<'p>(&self, prompt: &'p str) -> (&'p str, &'p str) {
        match prompt.rfind(&self.target_marker) {
            Some(pos) => (&prompt[..pos], &prompt[pos + self.target_marker.len()..]),
            None => (prompt, ""),
        }
    }

    pub fn jaccard(&self, prompt: &str) -> f64 {
        let (context, target) = self.split(prompt);
        let context: BTreeSet<&str> = self.mentioned_tags(context).into_iter().collect();
        let target: BTreeSet<&str> = self.mentioned_tags(target).into_iter().collect();
        let union = context.union(&target).count();
        if union == 0 {
            return 0.0;
        }
        context.intersection(&target).count() as f64 / union as f64
    }
}

impl LanguageModel for StubLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyField("prompt".into()));
        }
        let tags: BTreeSet<&str> = self.mentioned_tags(prompt).into_iter().collect();
        let listed = if tags.is_empty() {
            "none".to_string()
        } else {
            tags.into_iter().collect::<Vec<_>>().join(", ")
        };
        Ok(format!("{ASSESSMENT_LEAD}{listed}."))
    }

    fn judge(&self, prompt: &str) -> Result<JudgeResult> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyField("prompt".into()));
        }
        let j = self.jaccard(prompt);
        Ok(JudgeResult {
            logit_yes: STUB_YES_GAIN * j,
            logit_no: STUB_YES_GAIN * (1.0 - j),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub() -> StubLlm {
        StubLlm::from_items(&[
            ItemMeta::new("1", "Clerks (1994)", vec!["Comedy".into()]),
            ItemMeta::new("2", "Dogma (1999)", vec!["Comedy".into(), "Drama".into()]),
            ItemMeta::new("3", "Edward Scissorhands (1990)", vec!["Fantasy".into()]),
            ItemMeta::new("4", "Pan's Labyrinth (2006)", vec!["Fantasy".into(), "War".into()]),
        ])
    }

    #[test]
    fn assessment_lists_sorted_unique_tags() {
        let prompt = "The user has watched the following movies: ['Dogma (1999)', 'Clerks (1994)']. \
                      However, based on this list alone, it is not possible to confidently predict \
                      whether they would enjoy the movie 'Edward Scissorhands (1990)'.";
        let text = stub().complete(prompt).unwrap();
        assert_eq!(text, "Helpful signals include: Comedy, Drama, Fantasy.");
        for tag in ["Comedy", "Drama", "Fantasy"] {
            assert_eq!(text.matches(tag).count(), 1);
        }
        assert_eq!(text, stub().complete(prompt).unwrap());
    }

    #[test]
    fn titles_with_apostrophes_are_recognised() {
        let prompt = "movies: ['Pan's Labyrinth (2006)']. would enjoy the movie titled 'Edward Scissorhands (1990)'.";
        assert_eq!(stub().jaccard(prompt), 0.5);
        let r = stub().judge(prompt).unwrap();
        assert_eq!((r.logit_yes, r.logit_no), (2.0, 2.0));
    }

    #[test]
    fn judge_full_overlap_and_none() {
        let full = "movies: ['Pan's Labyrinth (2006)']. would enjoy the movie titled 'Pan's Labyrinth (2006)'.";
        let r = stub().judge(full).unwrap();
        assert_eq!((r.logit_yes, r.logit_no), (4.0, 0.0));
        let none = "movies: ['Clerks (1994)']. would enjoy the movie titled 'Edward Scissorhands (1990)'.";
        let r = stub().judge(none).unwrap();
        assert_eq!((r.logit_yes, r.logit_no), (0.0, 4.0));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(stub().complete(" ").is_err());
        assert!(stub().judge("").is_err());
    }
}
