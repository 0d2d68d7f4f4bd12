//! Tolerant extraction of tagged sections from model responses.
//!
//! The output contract is five tag pairs: `<ACTIONS>`, `<DATA_TYPES>`,
//! `<PURPOSES>`, `<STORIES>` and `<R>` (reasoning). Parsing never fails: missing
//! or broken tags produce empty sections plus warnings, and labels that are not
//! in the taxonomy are kept aside as hallucinations.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldAnnotation, LabelSets};
use crate::story::{parse_story, render_story, StoryError, StoryTriple};
use crate::taxonomy::{Category, Taxonomy};
use crate::text::{normalize_name, strip_list_marker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Section {
    Actions,
    DataTypes,
    Purposes,
    Stories,
    Reasoning,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::Actions,
        Section::DataTypes,
        Section::Purposes,
        Section::Stories,
        Section::Reasoning,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Section::Actions => "ACTIONS",
            Section::DataTypes => "DATA_TYPES",
            Section::Purposes => "PURPOSES",
            Section::Stories => "STORIES",
            Section::Reasoning => "R",
        }
    }

    pub fn for_category(cat: Category) -> Section {
        match cat {
            Category::Action => Section::Actions,
            Category::DataType => Section::DataTypes,
            Category::Purpose => Section::Purposes,
        }
    }

    fn from_tag(tag: &str) -> Option<Section> {
        Section::ALL
            .into_iter()
            .find(|s| s.tag().eq_ignore_ascii_case(tag))
    }
}

/// Tag names in contract order.
pub fn tag_contract() -> Vec<String> {
    Section::ALL.iter().map(|s| s.tag().to_string()).collect()
}

/// Raw label strings per category, in order of appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLabels {
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub data_types: Vec<String>,
    #[serde(default)]
    pub purposes: Vec<String>,
}

impl RawLabels {
    pub fn get(&self, cat: Category) -> &Vec<String> {
        match cat {
            Category::Action => &self.actions,
            Category::DataType => &self.data_types,
            Category::Purpose => &self.purposes,
        }
    }

    pub fn get_mut(&mut self, cat: Category) -> &mut Vec<String> {
        match cat {
            Category::Action => &mut self.actions,
            Category::DataType => &mut self.data_types,
            Category::Purpose => &mut self.purposes,
        }
    }

    pub fn total(&self) -> usize {
        self.actions.len() + self.data_types.len() + self.purposes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedStory {
    pub raw: String,
    /// `None` when the line does not fit the story template or names a label
    /// outside the taxonomy.
    pub triple: Option<StoryTriple>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnnotation {
    pub document_id: String,
    #[serde(default)]
    pub response_index: u32,
    pub matched: LabelSets,
    pub hallucinated: RawLabels,
    pub stories: Vec<ParsedStory>,
    pub rationale: String,
    pub warnings: Vec<String>,
}

impl ParsedAnnotation {
    pub fn valid_stories(&self) -> Vec<StoryTriple> {
        self.stories.iter().filter_map(|s| s.triple.clone()).collect()
    }

    pub fn malformed_stories(&self) -> Vec<&str> {
        self.stories
            .iter()
            .filter(|s| s.triple.is_none())
            .map(|s| s.raw.as_str())
            .collect()
    }

    /// Distinct labels pulled from a category section.
    pub fn extracted_count(&self, cat: Category) -> usize {
        self.matched.get(cat).len() + self.hallucinated.get(cat).len()
    }

    pub fn hallucinated_total(&self) -> usize {
        self.hallucinated.total()
    }
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)<\s*(/?)\s*(ACTIONS|DATA_TYPES|PURPOSES|STORIES|R)\s*>")
            .expect("static regex")
    })
}

struct TagEvent {
    section: Section,
    closing: bool,
    start: usize,
    end: usize,
}

/// Content blocks found for each section plus extraction warnings.
#[derive(Debug, Default)]
pub struct TaggedSections {
    pub blocks: Vec<(Section, String)>,
    pub warnings: Vec<String>,
}

impl TaggedSections {
    /// All blocks for a section joined by newlines, or `None` if the tag never appeared.
    pub fn section(&self, s: Section) -> Option<String> {
        let parts: Vec<&str> = self
            .blocks
            .iter()
            .filter(|(k, _)| *k == s)
            .map(|(_, b)| b.as_str())
            .collect();
        (!parts.is_empty()).then(|| parts.join("\n"))
    }
}

/// Scan for contract tag pairs and return the innermost content of each.
pub fn extract_sections(text: &str) -> TaggedSections {
    let events: Vec<TagEvent> = tag_regex()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            TagEvent {
                section: Section::from_tag(&c[2]).expect("regex alternation"),
                closing: !c[1].is_empty(),
                start: m.start(),
                end: m.end(),
            }
        })
        .collect();

    let mut out = TaggedSections::default();
    // (byte range of content, position of first event) for ordering
    let mut captured: Vec<(usize, Section, usize, usize)> = Vec::new();
    let mut covered: Vec<(usize, usize)> = events.iter().map(|e| (e.start, e.end)).collect();

    for section in Section::ALL {
        // stack frames: (content start, saw inner block)
        let mut stack: Vec<(usize, bool)> = Vec::new();
        let tag = section.tag();
        for (i, e) in events.iter().enumerate().filter(|(_, e)| e.section == section) {
            if !e.closing {
                if !stack.is_empty() {
                    out.warnings.push(format!("nested <{tag}> tag; using innermost content"));
                }
                stack.push((e.end, false));
                continue;
            }
            match stack.pop() {
                Some((start, had_inner)) => {
                    if let Some(parent) = stack.last_mut() {
                        parent.1 = true;
                    }
                    if !had_inner {
                        captured.push((i, section, start, e.start));
                        covered.push((start, e.start));
                    }
                }
                None => out.warnings.push(format!("stray </{tag}> without opening tag")),
            }
        }
        for (start, had_inner) in stack {
            if had_inner {
                continue;
            }
            // unclosed: runs until the next contract tag of any kind, or end of text
            let stop = events
                .iter()
                .find(|e| e.start >= start)
                .map(|e| e.start)
                .unwrap_or(text.len());
            out.warnings.push(format!("unclosed <{tag}> tag; content taken up to next tag"));
            let idx = events.iter().position(|e| e.end == start).unwrap_or(0);
            captured.push((idx, section, start, stop));
            covered.push((start, stop));
        }
    }

    captured.sort_by_key(|c| (c.2, c.0));
    for section in Section::ALL {
        let n = captured.iter().filter(|c| c.1 == section).count();
        if n > 1 {
            out.warnings.push(format!(
                "<{}> appears {n} times; blocks concatenated in order",
                section.tag()
            ));
        }
    }
    out.blocks = captured
        .into_iter()
        .map(|(_, s, a, b)| (s, text[a..b].trim().to_string()))
        .collect();

    covered.sort();
    let mut stray = 0usize;
    let mut pos = 0usize;
    for (a, b) in covered {
        if a > pos {
            stray += text[pos..a].chars().filter(|c| !c.is_whitespace()).count();
        }
        pos = pos.max(b);
    }
    if pos < text.len() {
        stray += text[pos..].chars().filter(|c| !c.is_whitespace()).count();
    }
    if stray > 0 {
        out.warnings
            .push(format!("{stray} non-whitespace characters outside tags ignored"));
    }
    out
}

fn clean_label(raw: &str) -> &str {
    strip_list_marker(raw)
        .trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '\'' | '.' | ';' | ':') || c.is_whitespace())
}

fn is_placeholder(label: &str) -> bool {
    matches!(normalize_name(label).as_str(), "none" | "n/a" | "na" | "-")
}

/// Split a label section into raw label strings. A line that does not resolve
/// as a whole is split further on commas and semicolons.
pub fn split_label_section(body: &str, t: &Taxonomy) -> Vec<String> {
    let mut out = Vec::new();
    for line in body.lines() {
        let line = clean_label(line);
        if line.is_empty() || is_placeholder(line) {
            continue;
        }
        if t.find_label(line).is_some() || !line.contains([',', ';']) {
            out.push(line.to_string());
            continue;
        }
        for part in line.split([',', ';']) {
            let part = clean_label(part);
            if !part.is_empty() && !is_placeholder(part) {
                out.push(part.to_string());
            }
        }
    }
    out
}

/// Parse a raw model response. Total: any text yields an annotation.
pub fn parse_response(
    document_id: &str,
    response_index: u32,
    text: &str,
    t: &Taxonomy,
) -> ParsedAnnotation {
    let sections = extract_sections(text);
    let mut parsed = ParsedAnnotation {
        document_id: document_id.to_string(),
        response_index,
        warnings: sections.warnings.clone(),
        ..Default::default()
    };

    for cat in Category::ALL {
        let section = Section::for_category(cat);
        let Some(body) = sections.section(section) else {
            parsed
                .warnings
                .push(format!("missing <{}> section", section.tag()));
            continue;
        };
        let mut seen = HashSet::new();
        for raw in split_label_section(&body, t) {
            let key = normalize_name(&raw);
            if !seen.insert(key) {
                parsed
                    .warnings
                    .push(format!("duplicate {cat} label `{raw}` collapsed"));
                continue;
            }
            match t.find_in(&raw, cat) {
                Some(id) => {
                    parsed.matched.get_mut(cat).insert(t.name(id).to_string());
                }
                None => {
                    if let Some(other) = t.find_label(&raw) {
                        parsed.warnings.push(format!(
                            "`{raw}` listed as {cat} but is not a {cat} label ({})",
                            t.path(other)
                        ));
                    }
                    parsed.hallucinated.get_mut(cat).push(raw);
                }
            }
        }
    }

    match sections.section(Section::Stories) {
        Some(body) => {
            for line in body.lines() {
                let raw = strip_list_marker(line).trim();
                if raw.is_empty() || is_placeholder(raw) {
                    continue;
                }
                parsed.stories.push(ParsedStory {
                    raw: raw.to_string(),
                    triple: parse_story(raw, t),
                });
            }
        }
        None => parsed.warnings.push("missing <STORIES> section".into()),
    }

    match sections.section(Section::Reasoning) {
        Some(r) => parsed.rationale = r,
        None => parsed.warnings.push("missing <R> section".into()),
    }
    parsed
}

/// Render labels and stories in the tag contract. The `<R>` block is emitted
/// only when a rationale is given.
pub fn render_annotation(
    t: &Taxonomy,
    labels: &LabelSets,
    stories: &[StoryTriple],
    rationale: Option<&str>,
) -> Result<String, StoryError> {
    let mut out = String::new();
    for cat in Category::ALL {
        let tag = Section::for_category(cat).tag();
        out.push_str(&format!("<{tag}>\n"));
        for l in labels.get(cat) {
            out.push_str(&format!("- {l}\n"));
        }
        out.push_str(&format!("</{tag}>\n"));
    }
    out.push_str("<STORIES>\n");
    for s in stories {
        out.push_str(&format!("- {}\n", render_story(t, s)?));
    }
    out.push_str("</STORIES>\n");
    if let Some(r) = rationale {
        out.push_str(&format!("<R>\n{}\n</R>\n", r.trim()));
    }
    Ok(out)
}

/// Gold annotation in the tag contract (no reasoning block).
pub fn render_gold(t: &Taxonomy, gold: &GoldAnnotation) -> Result<String, StoryError> {
    render_annotation(t, &gold.labels, &gold.stories, None)
}
