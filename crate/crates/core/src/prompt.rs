//! Annotation prompt construction.
//!
//! The full prompt has six sections: task description, label lists, one solved
//! example, the output tag contract, the target document, and a restated task
//! with a rationale/verification instruction. The base variant keeps only the
//! task, the labels and the document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, GoldAnnotation};
use crate::parser::{render_gold, tag_contract, Section};
use crate::story::StoryError;
use crate::taxonomy::{Category, Taxonomy};

pub const DEFAULT_TEMPLATE_TOML: &str = include_str!("../data/template.toml");

/// Template wording, kept as data so it can be revised without code changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system: String,
    pub task: String,
    pub labels_intro: String,
    pub icl_intro: String,
    pub icl_document_heading: String,
    pub icl_output_heading: String,
    /// May reference `{action_tag}`, `{data_type_tag}`, `{purpose_tag}`,
    /// `{story_tag}` and `{reasoning_tag}`.
    pub format_contract: String,
    pub document_heading: String,
    /// May reference `{reasoning_tag}`.
    pub verification: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        toml::from_str(DEFAULT_TEMPLATE_TOML).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!(
            "{}: {e}",
            path.display()
        )))?;
        toml::from_str(&text).map_err(|e| PromptError::Template(e.to_string()))
    }

    fn fill_tags(&self, s: &str) -> String {
        let pair = |sec: Section| format!("<{0}></{0}>", sec.tag());
        s.replace("{action_tag}", &pair(Section::Actions))
            .replace("{data_type_tag}", &pair(Section::DataTypes))
            .replace("{purpose_tag}", &pair(Section::Purposes))
            .replace("{story_tag}", &pair(Section::Stories))
            .replace("{reasoning_tag}", &pair(Section::Reasoning))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateVariant {
    #[default]
    Full,
    Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub variant: TemplateVariant,
    /// Number of in-context examples for the full variant.
    pub icl_examples: usize,
    /// Keep at most this many characters of the target document.
    pub max_document_chars: Option<usize>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            variant: TemplateVariant::Full,
            icl_examples: 1,
            max_document_chars: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub document_id: String,
    pub system_text: String,
    pub user_text: String,
    pub icl_document_ids: Vec<String>,
    pub tag_contract: Vec<String>,
    pub taxonomy_version: String,
    pub template_version: String,
    pub variant: TemplateVariant,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("example `{document_id}` has invalid gold: {reason}")]
    InvalidIclGold { document_id: String, reason: String },
    #[error("document `{0}` cannot be its own example")]
    SelfExample(String),
    #[error("template: {0}")]
    Template(String),
}

/// The label-list section: one `- Name` line per label, indented by depth.
pub fn render_label_lists(t: &Taxonomy) -> String {
    let mut out = String::new();
    for cat in Category::ALL {
        let heading = match cat {
            Category::Action => "Actions:",
            Category::DataType => "Data types:",
            Category::Purpose => "Purposes:",
        };
        out.push_str(heading);
        out.push('\n');
        for id in t.labels(cat) {
            let depth = t.node(id).map(|n| n.depth).unwrap_or(1) as usize;
            out.push_str(&"  ".repeat(depth - 1));
            out.push_str("- ");
            out.push_str(t.name(id));
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

fn check_icl_gold(t: &Taxonomy, gold: &GoldAnnotation) -> Result<String, PromptError> {
    let invalid = |reason: String| PromptError::InvalidIclGold {
        document_id: gold.document_id.clone(),
        reason,
    };
    for cat in Category::ALL {
        for label in gold.labels.get(cat) {
            if t.find_in(label, cat).is_none() {
                return Err(invalid(format!("{cat} `{label}` is not a taxonomy label")));
            }
        }
    }
    render_gold(t, gold).map_err(|e: StoryError| invalid(e.to_string()))
}

fn truncate_chars(text: &str, max: usize) -> Option<&str> {
    text.char_indices().nth(max).map(|(i, _)| &text[..i])
}

pub fn build_prompt(
    doc: &Document,
    t: &Taxonomy,
    icl: &[(&Document, &GoldAnnotation)],
    template: &PromptTemplate,
    opts: &PromptOptions,
) -> Result<PromptBundle, PromptError> {
    if doc.text.trim().is_empty() {
        return Err(PromptError::EmptyDocument(doc.id.clone()));
    }
    let mut warnings = Vec::new();
    let full = opts.variant == TemplateVariant::Full;

    let mut text = doc.text.as_str();
    if let Some(max) = opts.max_document_chars {
        if let Some(cut) = truncate_chars(text, max) {
            warnings.push(format!(
                "document truncated from {} to {max} characters",
                text.chars().count()
            ));
            text = cut;
        }
    }

    let mut sections: Vec<String> = vec![
        template.task.trim().to_string(),
        format!("{}\n{}", template.labels_intro.trim(), render_label_lists(t)),
    ];
    let mut icl_ids = Vec::new();
    if full {
        let examples = &icl[..icl.len().min(opts.icl_examples.max(1))];
        if examples.is_empty() {
            warnings.push("no in-context example available".into());
        }
        for (ex_doc, ex_gold) in examples {
            if ex_doc.id == doc.id {
                return Err(PromptError::SelfExample(doc.id.clone()));
            }
            let rendered = check_icl_gold(t, ex_gold)?;
            sections.push(format!(
                "{}\n\n{}\n{}\n\n{}\n{}",
                template.icl_intro.trim(),
                template.icl_document_heading.trim(),
                ex_doc.text.trim(),
                template.icl_output_heading.trim(),
                rendered.trim_end()
            ));
            icl_ids.push(ex_doc.id.clone());
        }
        sections.push(template.fill_tags(template.format_contract.trim()));
    }
    sections.push(format!("{}\n{}", template.document_heading.trim(), text.trim()));
    if full {
        sections.push(format!(
            "{}\n\n{}",
            template.task.trim(),
            template.fill_tags(template.verification.trim())
        ));
    }

    Ok(PromptBundle {
        document_id: doc.id.clone(),
        system_text: template.system.trim().to_string(),
        user_text: sections.join("\n\n"),
        icl_document_ids: icl_ids,
        tag_contract: if full { tag_contract() } else { Vec::new() },
        taxonomy_version: t.version().to_string(),
        template_version: template.version.clone(),
        variant: opts.variant,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FileType;
    use crate::story::StoryTriple;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            path: id.into(),
            file_type: FileType::SoftwareCodeSpec,
            app_name: None,
            text: text.into(),
        }
    }

    fn example() -> (Document, GoldAnnotation) {
        let mut g = GoldAnnotation {
            document_id: "ex".into(),
            ..Default::default()
        };
        g.labels.actions.insert("Collect".into());
        g.labels.data_types.insert("Location".into());
        g.labels.purposes.insert("App Functionality".into());
        g.stories
            .push(StoryTriple::new("Collect", ["Location"], ["App Functionality"]));
        (doc("ex", "EXAMPLE-DOC: the map screen reads GPS."), g)
    }

    fn count(hay: &str, needle: &str) -> usize {
        hay.matches(needle).count()
    }

    #[test]
    fn full_template_has_every_section() {
        let t = Taxonomy::load_default();
        let tpl = PromptTemplate::default();
        let (ed, eg) = example();
        let b = build_prompt(
            &doc("d", "TARGET-DOC body"),
            &t,
            &[(&ed, &eg)],
            &tpl,
            &PromptOptions::default(),
        )
        .unwrap();
        for tag in ["ACTIONS", "DATA_TYPES", "PURPOSES", "STORIES", "R"] {
            assert!(b.user_text.contains(&format!("<{tag}>")), "{tag}");
        }
        assert_eq!(count(&b.user_text, tpl.task.trim()), 2);
        assert!(b.user_text.contains("EXAMPLE-DOC"));
        assert!(b.user_text.contains("TARGET-DOC body"));
        assert_eq!(b.icl_document_ids, vec!["ex"]);
        assert_eq!(b.tag_contract.len(), 5);
        // section order
        let pos = |s: &str| b.user_text.find(s).unwrap();
        assert!(pos("Privacy behavior labels:") < pos("EXAMPLE-DOC"));
        assert!(pos("EXAMPLE-DOC") < pos("Format your answer"));
        assert!(pos("Format your answer") < pos("TARGET-DOC"));
        assert!(pos("TARGET-DOC") < pos("Before you answer"));
    }

    #[test]
    fn base_template_omits_example_and_contract() {
        let t = Taxonomy::load_default();
        let tpl = PromptTemplate::default();
        let (ed, eg) = example();
        let b = build_prompt(
            &doc("d", "TARGET-DOC body"),
            &t,
            &[(&ed, &eg)],
            &tpl,
            &PromptOptions {
                variant: TemplateVariant::Base,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!b.user_text.contains("EXAMPLE-DOC"));
        for tag in ["<ACTIONS>", "<DATA_TYPES>", "<PURPOSES>", "<STORIES>", "<R>"] {
            assert!(!b.user_text.contains(tag), "{tag}");
        }
        assert_eq!(count(&b.user_text, tpl.task.trim()), 1);
        assert!(b.icl_document_ids.is_empty());
        assert!(b.tag_contract.is_empty());
    }

    #[test]
    fn builds_are_byte_identical() {
        let t = Taxonomy::load_default();
        let tpl = PromptTemplate::default();
        let (ed, eg) = example();
        let d = doc("d", "text");
        let a = build_prompt(&d, &t, &[(&ed, &eg)], &tpl, &PromptOptions::default()).unwrap();
        let b = build_prompt(&d, &t, &[(&ed, &eg)], &tpl, &PromptOptions::default()).unwrap();
        assert_eq!(a.user_text, b.user_text);
    }

    #[test]
    fn every_label_listed_once() {
        let t = Taxonomy::load_default();
        let lists = render_label_lists(&t);
        for n in t.nodes().filter(|n| !n.is_root()) {
            let hits = lists
                .lines()
                .filter(|l| l.trim_start() == format!("- {}", n.name))
                .count();
            assert_eq!(hits, 1, "{}", n.name);
        }
        assert!(lists.contains("    - Usage Data"));
    }

    #[test]
    fn errors() {
        let t = Taxonomy::load_default();
        let tpl = PromptTemplate::default();
        let (ed, mut eg) = example();
        let opts = PromptOptions::default();
        assert!(matches!(
            build_prompt(&doc("d", "  "), &t, &[], &tpl, &opts),
            Err(PromptError::EmptyDocument(_))
        ));
        assert!(matches!(
            build_prompt(&ed, &t, &[(&ed, &eg)], &tpl, &opts),
            Err(PromptError::SelfExample(_))
        ));
        eg.labels.purposes.insert("World Domination".into());
        assert!(matches!(
            build_prompt(&doc("d", "x"), &t, &[(&ed, &eg)], &tpl, &opts),
            Err(PromptError::InvalidIclGold { .. })
        ));
    }

    #[test]
    fn truncation_keeps_head_and_warns() {
        let t = Taxonomy::load_default();
        let b = build_prompt(
            &doc("d", "HEAD-PART tail-part"),
            &t,
            &[],
            &PromptTemplate::default(),
            &PromptOptions {
                max_document_chars: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(b.user_text.contains("HEAD-PART"));
        assert!(!b.user_text.contains("tail-part"));
        assert!(b.warnings.iter().any(|w| w.contains("truncated")));
    }
}
