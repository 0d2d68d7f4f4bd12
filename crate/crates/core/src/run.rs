//! Run directory layout. Pipeline stages communicate only through these files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{FileType, GoldAnnotation, Manifest};
use crate::gateway::RawResponse;
use crate::parser::ParsedAnnotation;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_INFO_FILE: &str = "run.json";
pub const PROMPTS_DIR: &str = "prompts";
pub const RESPONSES_DIR: &str = "responses";
pub const PARSED_DIR: &str = "parsed";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SFT_FILE: &str = "sft.jsonl";
pub const SFT_HELDOUT_FILE: &str = "sft.heldout.json";
pub const SFT_META_FILE: &str = "sft.meta.json";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const REVIEW_DIR: &str = "review";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("missing {what} at {path}; run `{stage}` first")]
    Missing {
        what: &'static str,
        path: String,
        stage: &'static str,
    },
}

/// File-name-safe form of a document id (`a/b c.md` -> `a__b_c.md`).
pub fn doc_slug(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for ch in id.chars() {
        match ch {
            '/' | '\\' => out.push_str("__"),
            c if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') => out.push(c),
            _ => out.push('_'),
        }
    }
    out
}

/// Written by `annotate`; identifies the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub template_version: String,
    pub template_variant: String,
    pub taxonomy_version: String,
    pub responses_per_document: u32,
}

/// All parsed responses of one document, ordered by response index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub document_id: String,
    pub responses: Vec<ParsedAnnotation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseFile {
    pub document_id: String,
    pub responses: Vec<RawResponse>,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn parsed_path(&self, document_id: &str) -> PathBuf {
        self.root.join(PARSED_DIR).join(format!("{}.json", doc_slug(document_id)))
    }

    pub fn responses_path(&self, document_id: &str) -> PathBuf {
        self.root.join(RESPONSES_DIR).join(format!("{}.json", doc_slug(document_id)))
    }

    pub fn prompt_path(&self, document_id: &str) -> PathBuf {
        self.root.join(PROMPTS_DIR).join(format!("{}.json", doc_slug(document_id)))
    }

    pub fn ensure(&self, sub: &str) -> Result<PathBuf, RunError> {
        let p = self.root.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    pub fn manifest(&self) -> Result<Manifest, RunError> {
        let p = self.path(MANIFEST_FILE);
        require(&p, "manifest", "ingest")?;
        Manifest::load(&p).map_err(|e| RunError::Format {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn info(&self) -> Result<RunInfo, RunError> {
        let p = self.path(RUN_INFO_FILE);
        require(&p, "run info", "annotate")?;
        read_json(&p)
    }

    /// Parsed documents sorted by document id.
    pub fn parsed_documents(&self) -> Result<Vec<ParsedDocument>, RunError> {
        let dir = self.path(PARSED_DIR);
        require(&dir, "parsed annotations", "annotate")?;
        let mut out: Vec<ParsedDocument> = Vec::new();
        for path in json_files(&dir)? {
            out.push(read_json(&path)?);
        }
        out.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        Ok(out)
    }

    pub fn responses(&self, document_id: &str) -> Result<Option<ResponseFile>, RunError> {
        let p = self.responses_path(document_id);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }
}

fn require(p: &Path, what: &'static str, stage: &'static str) -> Result<(), RunError> {
    if p.exists() {
        Ok(())
    } else {
        Err(RunError::Missing {
            what,
            path: p.display().to_string(),
            stage,
        })
    }
}

fn io_err(p: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: p.display().to_string(),
        source,
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| RunError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline, written via rename.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| RunError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    s.push('\n');
    write_text(path, &s)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// One document as seen by reviewers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub document_id: String,
    pub file_type: FileType,
    pub text: String,
    pub gold: Option<GoldAnnotation>,
    pub parsed: Vec<ParsedAnnotation>,
    pub responses: Vec<RawResponse>,
}

impl RunDocument {
    /// Stories under review: those of the first response.
    pub fn reviewed_stories(&self) -> Vec<String> {
        self.parsed
            .first()
            .map(|p| p.stories.iter().map(|s| s.raw.clone()).collect())
            .unwrap_or_default()
    }

    pub fn response_count(&self) -> u32 {
        self.parsed.len() as u32
    }
}

/// Everything the review service needs about one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunData {
    pub info: RunInfo,
    pub documents: Vec<RunDocument>,
}

impl RunData {
    pub fn run_id(&self) -> &str {
        &self.info.run_id
    }

    pub fn document(&self, id: &str) -> Option<&RunDocument> {
        self.documents.iter().find(|d| d.document_id == id)
    }

    pub fn story_count(&self) -> usize {
        self.documents.iter().map(|d| d.reviewed_stories().len()).sum()
    }

    pub fn load(dir: &RunDir) -> Result<Self, RunError> {
        let manifest = dir.manifest()?;
        let info = dir.info()?;
        let mut documents = Vec::new();
        for pd in dir.parsed_documents()? {
            let Some(doc) = manifest.document(&pd.document_id) else {
                return Err(RunError::Format {
                    path: dir.parsed_path(&pd.document_id).display().to_string(),
                    message: format!("document `{}` is not in the manifest", pd.document_id),
                });
            };
            let responses = dir
                .responses(&pd.document_id)?
                .map(|r| r.responses)
                .unwrap_or_default();
            documents.push(RunDocument {
                document_id: pd.document_id.clone(),
                file_type: doc.file_type,
                text: doc.text.clone(),
                gold: manifest.gold_for(&pd.document_id).cloned(),
                parsed: pd.responses,
                responses,
            });
        }
        Ok(RunData { info, documents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_flat() {
        assert_eq!(doc_slug("app/docs/README.md"), "app__docs__README.md");
        assert_eq!(doc_slug("a b?.txt"), "a_b_.txt");
    }

    #[test]
    fn missing_prerequisite_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let err = run.parsed_documents().unwrap_err();
        assert!(err.to_string().contains("annotate"), "{err}");
    }
}
