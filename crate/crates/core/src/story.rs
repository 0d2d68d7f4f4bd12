//! Privacy stories: `We <action> <data types> for <purposes>.`

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{Category, Taxonomy};
use crate::text::{normalize_name, strip_list_marker};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoryTriple {
    pub action: String,
    pub data_types: Vec<String>,
    pub purposes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoryError {
    #[error("story has no data types")]
    EmptyDataTypes,
    #[error("story has no purposes")]
    EmptyPurposes,
    #[error("story {category} `{label}` is not a taxonomy label")]
    Unresolved { category: Category, label: String },
}

impl StoryTriple {
    pub fn new<S: Into<String>>(
        action: S,
        data_types: impl IntoIterator<Item = S>,
        purposes: impl IntoIterator<Item = S>,
    ) -> Self {
        StoryTriple {
            action: action.into(),
            data_types: data_types.into_iter().map(Into::into).collect(),
            purposes: purposes.into_iter().map(Into::into).collect(),
        }
    }

    /// Resolve every component against the taxonomy and return the triple with
    /// display-cased names.
    pub fn canonical(&self, t: &Taxonomy) -> Result<StoryTriple, StoryError> {
        if self.data_types.is_empty() {
            return Err(StoryError::EmptyDataTypes);
        }
        if self.purposes.is_empty() {
            return Err(StoryError::EmptyPurposes);
        }
        let resolve = |raw: &str, cat: Category| {
            t.find_in(raw, cat)
                .map(|id| t.name(id).to_string())
                .ok_or_else(|| StoryError::Unresolved {
                    category: cat,
                    label: raw.to_string(),
                })
        };
        Ok(StoryTriple {
            action: resolve(&self.action, Category::Action)?,
            data_types: self
                .data_types
                .iter()
                .map(|d| resolve(d, Category::DataType))
                .collect::<Result<_, _>>()?,
            purposes: self
                .purposes
                .iter()
                .map(|p| resolve(p, Category::Purpose))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Order-insensitive identity used for exact story matching.
    pub fn match_key(&self) -> (String, Vec<String>, Vec<String>) {
        let mut d: Vec<String> = self.data_types.iter().map(|s| normalize_name(s)).collect();
        let mut p: Vec<String> = self.purposes.iter().map(|s| normalize_name(s)).collect();
        d.sort();
        d.dedup();
        p.sort();
        p.dedup();
        (normalize_name(&self.action), d, p)
    }
}

/// "A", "A and B", "A, B and C".
pub fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

pub fn render_story(t: &Taxonomy, story: &StoryTriple) -> Result<String, StoryError> {
    let s = story.canonical(t)?;
    let action = t
        .find_in(&s.action, Category::Action)
        .expect("canonical action resolves");
    Ok(format!(
        "We {} {} for {}.",
        t.verb(action),
        join_list(&s.data_types),
        join_list(&s.purposes)
    ))
}

fn we_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^we\s*(?:\(\s*i\.?\s*e\.?\s*,?\s*the\s+application\s*\)\s*,?)?\s+")
            .expect("static regex")
    })
}

fn list_separator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i),\s*and\s+|,\s*|\s+and\s+").expect("static regex"))
}

/// Inverse of [`render_story`]. Returns `None` unless every component resolves.
pub fn parse_story(line: &str, t: &Taxonomy) -> Option<StoryTriple> {
    let mut s = strip_list_marker(line).trim();
    s = s.trim_matches(|c| c == '"' || c == '“' || c == '”').trim();
    s = s.trim_end_matches(['.', '!', ';']).trim_end();
    let s = match we_prefix().find(s) {
        Some(m) => &s[m.end()..],
        None => s,
    };

    let words: Vec<&str> = s.split_whitespace().collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();

    // longest action form matching a word prefix
    let mut best: Option<(usize, String)> = None;
    for id in t.labels(Category::Action) {
        for form in [t.verb(id), normalize_name(t.name(id))] {
            let fw: Vec<&str> = form.split(' ').collect();
            if fw.len() <= lower.len()
                && fw.iter().zip(&lower).all(|(a, b)| a == b)
                && best.as_ref().is_none_or(|(n, _)| fw.len() > *n)
            {
                best = Some((fw.len(), t.name(id).to_string()));
            }
        }
    }
    let (consumed, action) = best?;
    let rest = &words[consumed..];

    for pivot in (0..rest.len()).rev().filter(|&i| rest[i].eq_ignore_ascii_case("for")) {
        let dt = rest[..pivot].join(" ");
        let pp = rest[pivot + 1..].join(" ");
        if let (Some(data_types), Some(purposes)) = (
            parse_label_list(&dt, Category::DataType, t),
            parse_label_list(&pp, Category::Purpose, t),
        ) {
            return Some(StoryTriple {
                action,
                data_types,
                purposes,
            });
        }
    }
    None
}

/// Split a joined list into labels of `cat`. Labels may themselves contain
/// separators ("Race and Ethnicity"), so segmentations are searched, longest
/// label first.
fn parse_label_list(text: &str, cat: Category, t: &Taxonomy) -> Option<Vec<String>> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let mut pieces: Vec<&str> = Vec::new();
    let mut seps: Vec<&str> = Vec::new();
    let mut last = 0;
    for m in list_separator().find_iter(text) {
        pieces.push(&text[last..m.start()]);
        seps.push(m.as_str());
        last = m.end();
    }
    pieces.push(&text[last..]);

    let n = pieces.len();
    // memo[i]: segmentation of pieces[i..], None if impossible
    let mut memo: Vec<Option<Option<Vec<String>>>> = vec![None; n + 1];
    memo[n] = Some(Some(Vec::new()));
    for i in (0..n).rev() {
        let mut found = None;
        for j in (i + 1..=n).rev() {
            let Some(Some(tail)) = &memo[j] else { continue };
            let mut joined = String::from(pieces[i]);
            for k in i + 1..j {
                joined.push_str(seps[k - 1]);
                joined.push_str(pieces[k]);
            }
            if let Some(id) = t.find_in(&joined, cat) {
                let mut v = vec![t.name(id).to_string()];
                v.extend(tail.iter().cloned());
                found = Some(v);
                break;
            }
        }
        memo[i] = Some(found);
    }
    memo[0].take().flatten()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::load_default()
    }

    #[test]
    fn renders_single_components() {
        let s = StoryTriple::new("Collect", ["Location"], ["App Functionality"]);
        assert_eq!(
            render_story(&tax(), &s).unwrap(),
            "We collect Location for App Functionality."
        );
    }

    #[test]
    fn renders_joined_list() {
        let s = StoryTriple::new("Share", ["Email Address", "Phone Number"], ["Analytics"]);
        assert_eq!(
            render_story(&tax(), &s).unwrap(),
            "We share Email Address and Phone Number for Analytics."
        );
        let three = StoryTriple::new("Share", ["Name", "Email Address", "Phone Number"], ["Analytics"]);
        assert_eq!(
            render_story(&tax(), &three).unwrap(),
            "We share Name, Email Address and Phone Number for Analytics."
        );
    }

    #[test]
    fn empty_data_types_rejected() {
        let s = StoryTriple::new("Collect", Vec::<&str>::new(), vec!["Analytics"]);
        assert_eq!(render_story(&tax(), &s), Err(StoryError::EmptyDataTypes));
    }

    #[test]
    fn unresolved_component_rejected() {
        let s = StoryTriple::new("Collect", ["Biometric Aura"], ["Analytics"]);
        assert!(matches!(
            render_story(&tax(), &s),
            Err(StoryError::Unresolved { category: Category::DataType, .. })
        ));
    }

    #[test]
    fn parses_rendered_story() {
        let t = tax();
        assert_eq!(
            parse_story("We collect Location for App Functionality.", &t),
            Some(StoryTriple::new("Collect", ["Location"], ["App Functionality"]))
        );
    }

    #[test]
    fn rejects_free_text() {
        assert_eq!(parse_story("The app gathers stuff.", &tax()), None);
        assert_eq!(parse_story("", &tax()), None);
        assert_eq!(parse_story("We collect Location", &tax()), None);
    }

    #[test]
    fn tolerates_long_prefix_markers_and_case() {
        let t = tax();
        let want = StoryTriple::new(
            "Process",
            ["Race and Ethnicity", "Health Info"],
            ["Research", "Fraud Prevention and Security"],
        );
        for line in [
            "We (i.e., The Application) process Race and Ethnicity and Health Info for Research and Fraud Prevention and Security.",
            "- we PROCESS race and ethnicity, health info for research, and fraud prevention and security",
            "3. We process Race and Ethnicity and Health Info for Research and Fraud Prevention and Security.",
        ] {
            assert_eq!(parse_story(line, &t), Some(want.clone()), "{line}");
        }
    }

    #[test]
    fn hallucinated_component_gives_none() {
        assert_eq!(
            parse_story("We collect Biometric Aura for Analytics.", &tax()),
            None
        );
    }

    #[test]
    fn match_key_ignores_order_and_case() {
        let a = StoryTriple::new("Collect", ["Name", "Email Address"], ["Analytics"]);
        let b = StoryTriple::new("collect", ["email address", "Name"], ["analytics"]);
        assert_eq!(a.match_key(), b.match_key());
    }
}
