//! Prompt templates for judging, collaborative-context judging and
//! self-assessment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY: &str = "<HistoryList>";
pub const TARGET: &str = "<TargetItem>";
pub const BEHAVIORS: &str = "<SimilarBehaviorList>";

const BASIC: &str = "The user has highly rated the following movies: <HistoryList>. \
Based on this information, predict whether the user would enjoy the movie titled <TargetItem>. \
Respond with either 'Yes' or 'No'.";

const CI: &str = "The user has highly rated the following movies: <HistoryList>. \
Other users with similar preferences have given high ratings to the movies: <SimilarBehaviorList>. \
Based on this information, predict whether the user would enjoy the movie titled <TargetItem>. \
Respond with either 'Yes' or 'No'.";

const ASSESS: &str = "The user has watched the following movies: <HistoryList>. \
However, based on this list alone, it is not possible to confidently predict whether they would enjoy the movie <TargetItem>. \
What other genres or characteristics related to their preferences, apart from the given history, \
could help in making a more informed decision?";

/// The three templates. Behaviour lists are rendered as bracketed,
/// comma-separated title lists and joined with `", "` in the CI slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_basic: String,
    pub template_ci: String,
    pub template_assess: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        PromptBundle {
            template_basic: BASIC.into(),
            template_ci: CI.into(),
            template_assess: ASSESS.into(),
        }
    }
}

fn check_template(name: &str, template: &str, placeholders: &[&str]) -> Result<()> {
    for p in placeholders {
        let n = template.matches(p).count();
        if n != 1 {
            return Err(Error::config(
                name,
                format!("placeholder {p} must appear exactly once, found {n}"),
            ));
        }
    }
    let mut rest = template.to_string();
    for p in placeholders {
        rest = rest.replace(p, "");
    }
    if rest.contains('<') {
        return Err(Error::config(name, "unknown placeholder"));
    }
    Ok(())
}

fn non_empty<'a>(value: &'a str, field: &str) -> Result<&'a str> {
    if value.trim().is_empty() {
        Err(Error::EmptyField(field.to_string()))
    } else {
        Ok(value)
    }
}

/// `['A', 'B']` from an already quoted, comma-separated behaviour text.
pub fn bracketed(behavior_text: &str) -> String {
    format!("[{behavior_text}]")
}

impl PromptBundle {
    pub fn validate(&self) -> Result<()> {
        check_template("template_basic", &self.template_basic, &[HISTORY, TARGET])?;
        check_template("template_ci", &self.template_ci, &[HISTORY, BEHAVIORS, TARGET])?;
        check_template("template_assess", &self.template_assess, &[HISTORY, TARGET])
    }

    /// Substitution happens in one left-to-right pass so that inserted text
    /// is never rescanned for placeholders.
    fn fill(template: &str, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(template.len() + 256);
        let mut rest = template;
        loop {
            let next = values
                .iter()
                .filter_map(|(p, v)| rest.find(p).map(|i| (i, *p, *v)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, p, v)) => {
                    out.push_str(&rest[..i]);
                    out.push_str(v);
                    rest = &rest[i + p.len()..];
                }
                None => {
                    out.push_str(rest);
                    return out;
                }
            }
        }
    }

    /// `history_text` is a behaviour text; `target_text` a quoted title.
    pub fn basic(&self, history_text: &str, target_text: &str) -> Result<String> {
        let h = bracketed(non_empty(history_text, "history")?);
        let t = non_empty(target_text, "target")?;
        Ok(Self::fill(&self.template_basic, &[(HISTORY, &h), (TARGET, t)]))
    }

    /// Falls back to the basic prompt when `behaviors` is empty.
    pub fn ci(&self, history_text: &str, behaviors: &[String], target_text: &str) -> Result<String> {
        if behaviors.is_empty() {
            return self.basic(history_text, target_text);
        }
        let h = bracketed(non_empty(history_text, "history")?);
        let t = non_empty(target_text, "target")?;
        let slots: Vec<String> = behaviors
            .iter()
            .enumerate()
            .map(|(i, b)| non_empty(b, &format!("behavior[{}]", i + 1)).map(bracketed))
            .collect::<Result<_>>()?;
        let b = slots.join(", ");
        Ok(Self::fill(&self.template_ci, &[(HISTORY, &h), (BEHAVIORS, &b), (TARGET, t)]))
    }

    pub fn assess(&self, history_text: &str, target_text: &str) -> Result<String> {
        let h = bracketed(non_empty(history_text, "history")?);
        let t = non_empty(target_text, "target")?;
        Ok(Self::fill(&self.template_assess, &[(HISTORY, &h), (TARGET, t)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HIST: &str = "'Dogma (1999)', 'Clerks (1994)'";
    const TGT: &str = "'Edward Scissorhands (1990)'";

    #[test]
    fn defaults_are_valid() {
        PromptBundle::default().validate().unwrap();
    }

    #[test]
    fn basic_prompt_shape() {
        let p = PromptBundle::default().basic(HIST, TGT).unwrap();
        assert!(p.starts_with("The user has highly rated the following movies: ['Dogma (1999)', 'Clerks (1994)']."));
        assert!(p.ends_with("Respond with either 'Yes' or 'No'."));
        assert_eq!(p.matches("Edward Scissorhands").count(), 1);
        assert!(!p.contains('<'));
    }

    #[test]
    fn assess_prompt_shape() {
        let p = PromptBundle::default().assess(HIST, TGT).unwrap();
        assert!(p.starts_with("The user has watched the following movies:"));
        assert_eq!(p.matches("Edward Scissorhands").count(), 1);
        assert!(!p.contains('<'));
        assert!(p.ends_with("could help in making a more informed decision?"));
    }

    #[test]
    fn ci_prompt_orders_behaviors() {
        let bundle = PromptBundle::default();
        let b = vec!["'Alien (1979)'".to_string(), "'Heat (1995)'".to_string()];
        let p = bundle.ci(HIST, &b, TGT).unwrap();
        let anchor = p.find("Other users with similar preferences").unwrap();
        let a = p.find("['Alien (1979)']").unwrap();
        let h = p.find("['Heat (1995)']").unwrap();
        assert!(anchor < a && a < h);
        assert_eq!(p.matches("]").count(), 3);
        assert_eq!(bundle.ci(HIST, &[], TGT).unwrap(), bundle.basic(HIST, TGT).unwrap());
    }

    #[test]
    fn empty_fields_are_named() {
        let bundle = PromptBundle::default();
        assert!(matches!(bundle.basic("", TGT), Err(Error::EmptyField(f)) if f == "history"));
        assert!(matches!(bundle.assess(HIST, " "), Err(Error::EmptyField(f)) if f == "target"));
        let b = vec!["'A'".to_string(), String::new()];
        assert!(matches!(bundle.ci(HIST, &b, TGT), Err(Error::EmptyField(f)) if f == "behavior[2]"));
    }

    #[test]
    fn inserted_text_is_not_rescanned() {
        let p = PromptBundle::default().basic("'<TargetItem>'", TGT).unwrap();
        assert!(p.contains("['<TargetItem>']"));
        assert_eq!(p.matches("Edward").count(), 1);
    }

    #[test]
    fn rejects_bad_templates() {
        let mut bundle = PromptBundle::default();
        bundle.template_basic = "no placeholders".into();
        assert!(matches!(bundle.validate(), Err(Error::Config { field, .. }) if field == "template_basic"));
        bundle = PromptBundle::default();
        bundle.template_ci.push_str(" <Extra>");
        assert!(bundle.validate().is_err());
    }
}
