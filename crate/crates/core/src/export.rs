//! Training-data export: supervised pairs from gold annotations and
//! preference pairs from reviewer choices.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_gold, GoldAnnotation, Manifest};
use crate::gateway::ReplayStore;
use crate::parser::{parse_response, render_gold, Section};
use crate::prompt::{build_prompt, PromptOptions, PromptTemplate, TemplateVariant};
use crate::review::ReviewSession;
use crate::taxonomy::Taxonomy;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("invalid gold annotations: {0}")]
    InvalidGold(String),
    #[error("document `{0}` has no gold annotation")]
    MissingGold(String),
    #[error("split lists unknown document `{0}`")]
    UnknownDocument(String),
    #[error("document `{0}` is in both train and heldout")]
    OverlappingSplit(String),
    #[error("cannot hold out {wanted} of {available} documents")]
    SplitTooLarge { wanted: usize, available: usize },
    #[error("completion for `{document_id}` does not parse back to its gold: {reason}")]
    RoundTrip { document_id: String, reason: String },
    #[error("prompt for `{document_id}`: {message}")]
    Prompt { document_id: String, message: String },
    #[error("preference for `{document_id}` by `{reviewer_id}` compares response {index} with itself")]
    SameResponse {
        document_id: String,
        reviewer_id: String,
        index: u32,
    },
    #[error("preference for `{document_id}` by `{reviewer_id}` references unrecorded response {index}")]
    Dangling {
        document_id: String,
        reviewer_id: String,
        index: u32,
    },
    #[error("responses {chosen} and {rejected} of `{document_id}` {problem}")]
    Mismatch {
        document_id: String,
        chosen: u32,
        rejected: u32,
        problem: &'static str,
    },
    #[error("replay store: {0}")]
    Store(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How documents are divided into training and held-out sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Everything is training data.
    #[default]
    AllTrain,
    /// Named held-out documents; train defaults to the rest.
    Explicit {
        heldout: Vec<String>,
        #[serde(default)]
        train: Option<Vec<String>>,
    },
    /// A seeded random sample of `heldout_count` documents is held out.
    Seeded { heldout_count: usize, seed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub heldout: Vec<String>,
}

impl SplitSpec {
    pub fn resolve(&self, ids: &[String]) -> Result<Split, ExportError> {
        let all: BTreeSet<&String> = ids.iter().collect();
        let known = |id: &String| {
            if all.contains(id) {
                Ok(())
            } else {
                Err(ExportError::UnknownDocument(id.clone()))
            }
        };
        let (train, heldout): (BTreeSet<String>, BTreeSet<String>) = match self {
            SplitSpec::AllTrain => (ids.iter().cloned().collect(), BTreeSet::new()),
            SplitSpec::Explicit { heldout, train } => {
                let h: BTreeSet<String> = heldout.iter().cloned().collect();
                h.iter().try_for_each(known)?;
                let t: BTreeSet<String> = match train {
                    Some(t) => {
                        t.iter().try_for_each(known)?;
                        if let Some(x) = t.iter().find(|x| h.contains(*x)) {
                            return Err(ExportError::OverlappingSplit(x.clone()));
                        }
                        t.iter().cloned().collect()
                    }
                    None => ids.iter().filter(|x| !h.contains(*x)).cloned().collect(),
                };
                (t, h)
            }
            SplitSpec::Seeded { heldout_count, seed } => {
                if *heldout_count > all.len() {
                    return Err(ExportError::SplitTooLarge {
                        wanted: *heldout_count,
                        available: all.len(),
                    });
                }
                let mut shuffled: Vec<String> = all.iter().map(|s| (*s).clone()).collect();
                shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                let h: BTreeSet<String> = shuffled[..*heldout_count].iter().cloned().collect();
                let t = shuffled[*heldout_count..].iter().cloned().collect();
                (t, h)
            }
        };
        Ok(Split {
            train: train.into_iter().collect(),
            heldout: heldout.into_iter().collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    #[default]
    Train,
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
    pub document_id: String,
    #[serde(skip)]
    pub split: SplitRole,
}

/// Reference fine-tuning settings recorded next to the exported data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHints {
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    pub lora_rank: u32,
    pub preference_beta: f64,
}

impl Default for TrainingHints {
    fn default() -> Self {
        TrainingHints {
            batch_size: 2,
            gradient_accumulation_steps: 3,
            learning_rate: 5e-6,
            epochs: 3,
            lora_rank: 64,
            preference_beta: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub template_version: String,
    pub template_variant: TemplateVariant,
    pub taxonomy_version: String,
    pub train_documents: usize,
    pub heldout_documents: usize,
    pub training: TrainingHints,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SftExport {
    pub records: Vec<SftRecord>,
    pub heldout: Vec<String>,
    pub meta: SftMeta,
    pub warnings: Vec<String>,
}

/// Check that a rendered completion parses back to exactly the gold.
pub fn check_round_trip(t: &Taxonomy, gold: &GoldAnnotation, completion: &str) -> Result<(), String> {
    let parsed = parse_response(&gold.document_id, 0, completion, t);
    if parsed.matched != gold.labels {
        return Err(format!(
            "labels differ: parsed {:?}, gold {:?}",
            parsed.matched, gold.labels
        ));
    }
    if parsed.hallucinated.total() > 0 {
        return Err(format!("unmatched labels {:?}", parsed.hallucinated));
    }
    let want: Vec<_> = gold
        .stories
        .iter()
        .map(|s| s.canonical(t).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let got: Vec<_> = parsed.stories.iter().map(|s| s.triple.clone()).collect();
    if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.as_ref() != Some(w)) {
        return Err(format!("stories differ: parsed {got:?}, gold {want:?}"));
    }
    Ok(())
}

/// Build one record per training document. The prompt uses the given
/// variant (normally the base template, which carries no example).
pub fn export_sft(
    m: &Manifest,
    t: &Taxonomy,
    template: &PromptTemplate,
    split: &SplitSpec,
    variant: TemplateVariant,
) -> Result<SftExport, ExportError> {
    let violations = validate_gold(m, t);
    if !violations.is_empty() {
        let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
        return Err(ExportError::InvalidGold(format!(
            "{} problem(s): {}",
            violations.len(),
            shown.join("; ")
        )));
    }
    let ids: Vec<String> = m.documents.iter().map(|d| d.id.clone()).collect();
    let split = split.resolve(&ids)?;
    let mut warnings = Vec::new();
    if m.documents.is_empty() {
        warnings.push("manifest has no documents; nothing exported".to_string());
    }
    let opts = PromptOptions {
        variant,
        icl_examples: 0,
        max_document_chars: None,
    };
    let mut records = Vec::with_capacity(split.train.len());
    for id in &split.train {
        let doc = m.document(id).expect("split ids come from the manifest");
        let gold = m
            .gold_for(id)
            .ok_or_else(|| ExportError::MissingGold(id.clone()))?;
        let bundle = build_prompt(doc, t, &[], template, &opts).map_err(|e| ExportError::Prompt {
            document_id: id.clone(),
            message: e.to_string(),
        })?;
        let completion = render_gold(t, gold).map_err(|e| ExportError::RoundTrip {
            document_id: id.clone(),
            reason: e.to_string(),
        })?;
        check_round_trip(t, gold, &completion).map_err(|reason| ExportError::RoundTrip {
            document_id: id.clone(),
            reason,
        })?;
        records.push(SftRecord {
            prompt: bundle.user_text,
            completion,
            document_id: id.clone(),
            split: SplitRole::Train,
        });
    }
    Ok(SftExport {
        meta: SftMeta {
            template_version: template.version.clone(),
            template_variant: variant,
            taxonomy_version: t.version().to_string(),
            train_documents: records.len(),
            heldout_documents: split.heldout.len(),
            training: TrainingHints::default(),
        },
        records,
        heldout: split.heldout,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub document_id: String,
    pub reviewer_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreferenceExport {
    pub records: Vec<PreferenceRecord>,
    pub warnings: Vec<String>,
}

/// One record per reviewer choice, ordered by document then reviewer.
/// Response texts are copied verbatim, reasoning included.
pub fn export_preferences(
    sessions: &[ReviewSession],
    store: &ReplayStore,
    model_name: Option<&str>,
) -> Result<PreferenceExport, ExportError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let reasoning_open = format!("<{}>", Section::Reasoning.tag());
    for s in sessions {
        for (doc, choice) in &s.preferences {
            let (c, r) = (choice.chosen_response_index, choice.rejected_response_index);
            if c == r {
                return Err(ExportError::SameResponse {
                    document_id: doc.clone(),
                    reviewer_id: s.reviewer_id.clone(),
                    index: c,
                });
            }
            let lookup = |idx: u32| {
                store.find(doc, idx, model_name).ok_or_else(|| ExportError::Dangling {
                    document_id: doc.clone(),
                    reviewer_id: s.reviewer_id.clone(),
                    index: idx,
                })
            };
            let (cfp, centry) = lookup(c)?;
            let (rfp, rentry) = lookup(r)?;
            if centry.prompt_hash != rentry.prompt_hash {
                return Err(ExportError::Mismatch {
                    document_id: doc.clone(),
                    chosen: c,
                    rejected: r,
                    problem: "were produced from different prompts",
                });
            }
            let text = |fp| {
                store
                    .get(fp)
                    .map_err(|e| ExportError::Store(e.to_string()))?
                    .ok_or_else(|| ExportError::Store(format!("record {fp} vanished")))
            };
            let chosen = text(&cfp)?;
            let rejected = text(&rfp)?;
            if chosen == rejected {
                return Err(ExportError::Mismatch {
                    document_id: doc.clone(),
                    chosen: c,
                    rejected: r,
                    problem: "have identical text",
                });
            }
            if !chosen.to_uppercase().contains(&reasoning_open) {
                warnings.push(format!(
                    "{doc}: chosen response {c} (reviewer {}) has no reasoning block",
                    s.reviewer_id
                ));
            }
            let prompt = store
                .prompt(&centry)
                .map_err(|e| ExportError::Store(e.to_string()))?;
            records.push(PreferenceRecord {
                prompt: prompt.user_text,
                chosen,
                rejected,
                document_id: doc.clone(),
                reviewer_id: s.reviewer_id.clone(),
            });
        }
    }
    records.sort_by(|a, b| (&a.document_id, &a.reviewer_id).cmp(&(&b.document_id, &b.reviewer_id)));
    Ok(PreferenceExport { records, warnings })
}

/// UTF-8 JSON lines with LF endings.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ExportError> {
    let io = |e| ExportError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(to_jsonl(records).as_bytes()).map_err(io)
}
