//! `privstory.toml`: every path is relative to the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use privstory_core::corpus::{FileType, TypeHint};
use privstory_core::evaluator::EvalOptions;
use privstory_core::export::SplitSpec;
use privstory_core::gateway::ModelConfig;
use privstory_core::prompt::{PromptOptions, TemplateVariant};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory; `--run-dir` overrides.
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    /// Defaults to the run directory's name.
    #[serde(default)]
    pub run_id: Option<String>,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub prompt: PromptConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub annotate: AnnotateConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub review: ReviewConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    /// JSON array of gold annotations.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    #[serde(default)]
    pub type_hints: Vec<HintConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HintConfig {
    pub pattern: String,
    pub file_type: FileType,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default)]
pub struct PromptConfig {
    pub template: Option<PathBuf>,
    #[serde(flatten)]
    pub options: PromptOptions,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// TF-IDF fitted on the corpus; no network.
    #[default]
    Tfidf,
    /// OpenAI-compatible `/embeddings` endpoint from the environment.
    Http,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub responses_per_document: u32,
    pub replay_store: PathBuf,
    /// Worker threads; 0 picks automatically.
    pub parallelism: usize,
    pub embedding: EmbeddingKind,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            responses_per_document: 1,
            replay_store: PathBuf::from("replay"),
            parallelism: 0,
            embedding: EmbeddingKind::Tfidf,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default)]
pub struct EvaluationConfig {
    #[serde(flatten)]
    pub options: EvalOptions,
    /// Which response of each document is scored.
    pub response_index: u32,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub split: SplitSpec,
    pub sft_variant: TemplateVariant,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            split: SplitSpec::AllTrain,
            sft_variant: TemplateVariant::Base,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    /// Session logs; defaults to `<run_dir>/review`.
    pub data_dir: Option<PathBuf>,
    pub bind: String,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        ReviewConfig {
            data_dir: None,
            bind: "127.0.0.1:8787".into(),
            ui_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.annotate.responses_per_document == 0 {
            bail!("annotate.responses_per_document must be at least 1");
        }
        if self.evaluation.response_index >= self.annotate.responses_per_document {
            bail!(
                "evaluation.response_index {} is out of range for {} response(s) per document",
                self.evaluation.response_index,
                self.annotate.responses_per_document
            );
        }
        if self.prompt.options.variant == TemplateVariant::Full && self.prompt.options.icl_examples == 0 {
            log::warn!("full template without in-context examples");
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn type_hints(&self) -> Vec<TypeHint> {
        self.corpus
            .type_hints
            .iter()
            .map(|h| TypeHint {
                pattern: h.pattern.clone(),
                file_type: h.file_type,
            })
            .collect()
    }

    pub fn replay_store_path(&self) -> PathBuf {
        self.resolve(&self.annotate.replay_store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[corpus]
root = "docs"

[model]
model_name = "gpt-4o"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.model.temperature, 0.7);
        assert_eq!(c.annotate.responses_per_document, 1);
        assert_eq!(c.prompt.options.variant, TemplateVariant::Full);
        assert_eq!(c.prompt.options.icl_examples, 1);
        assert_eq!(c.resolve(&c.corpus.root), PathBuf::from("/cfg/docs"));
        assert_eq!(c.replay_store_path(), PathBuf::from("/cfg/replay"));
    }

    #[test]
    fn sections_parse() {
        let text = format!(
            "{MINIMAL}\n[prompt]\nvariant = \"base\"\n\n[evaluation]\ncount_hallucinated_in_precision = true\n\n\
             [export]\nsplit = {{ kind = \"seeded\", heldout_count = 10, seed = 3 }}\n\n\
             [[corpus.type_hints]]\npattern = \"*.puml\"\nfile_type = \"architecture_db_design\"\n"
        );
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.prompt.options.variant, TemplateVariant::Base);
        assert!(c.evaluation.options.count_hallucinated_in_precision);
        assert_eq!(
            c.export.split,
            SplitSpec::Seeded {
                heldout_count: 10,
                seed: 3
            }
        );
        assert_eq!(c.type_hints()[0].file_type, FileType::ArchitectureDbDesign);
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = MINIMAL.replace("gpt-4o\"", "gpt-4o\"\ntemperature = -2.0");
        assert!(RunConfig::parse(&bad, Path::new(".")).is_err());
        let bad = format!("{MINIMAL}\n[evaluation]\nresponse_index = 3\n");
        assert!(RunConfig::parse(&bad, Path::new(".")).is_err());
        let bad = format!("{MINIMAL}\nmystery = 1\n");
        assert!(RunConfig::parse(&bad, Path::new(".")).is_err());
    }
}
