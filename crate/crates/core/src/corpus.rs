//! Software documents, their gold annotations, and the manifest file that ties
//! them together.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::story::StoryTriple;
use crate::taxonomy::{Category, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileType {
    SoftwareCodeSpec,
    UserDeveloperGuide,
    ArchitectureDbDesign,
    Readme,
}

impl FileType {
    pub const ALL: [FileType; 4] = [
        FileType::SoftwareCodeSpec,
        FileType::UserDeveloperGuide,
        FileType::ArchitectureDbDesign,
        FileType::Readme,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FileType::SoftwareCodeSpec => "software_code_spec",
            FileType::UserDeveloperGuide => "user_developer_guide",
            FileType::ArchitectureDbDesign => "architecture_db_design",
            FileType::Readme => "readme",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            FileType::SoftwareCodeSpec => "Software & Code Spec",
            FileType::UserDeveloperGuide => "User & Developer Guides",
            FileType::ArchitectureDbDesign => "Architecture & DB Design Diagrams",
            FileType::Readme => "README",
        }
    }
}

impl fmt::Display for FileType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for FileType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FileType::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| format!("unknown file type `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    /// Path relative to the manifest root.
    pub path: PathBuf,
    pub file_type: FileType,
    pub app_name: Option<String>,
    pub text: String,
}

/// Per-category label sets, keyed by display name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSets {
    #[serde(default)]
    pub actions: BTreeSet<String>,
    #[serde(default)]
    pub data_types: BTreeSet<String>,
    #[serde(default)]
    pub purposes: BTreeSet<String>,
}

impl LabelSets {
    pub fn get(&self, cat: Category) -> &BTreeSet<String> {
        match cat {
            Category::Action => &self.actions,
            Category::DataType => &self.data_types,
            Category::Purpose => &self.purposes,
        }
    }

    pub fn get_mut(&mut self, cat: Category) -> &mut BTreeSet<String> {
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

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub document_id: String,
    #[serde(flatten)]
    pub labels: LabelSets,
    #[serde(default)]
    pub stories: Vec<StoryTriple>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub taxonomy_version: String,
    /// Directory document paths are relative to.
    pub root: PathBuf,
    pub documents: Vec<Document>,
    pub gold: BTreeMap<String, GoldAnnotation>,
    /// Files skipped at ingest time.
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid type hint pattern `{pattern}`: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct DocumentEntry {
    id: String,
    path: String,
    file_type: FileType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    app_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    taxonomy_version: String,
    #[serde(default)]
    root: String,
    documents: Vec<DocumentEntry>,
    #[serde(default)]
    gold: BTreeMap<String, GoldAnnotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

/// A filename pattern that forces a file type at ingest.
#[derive(Clone, Debug)]
pub struct TypeHint {
    pub pattern: String,
    pub file_type: FileType,
}

impl Manifest {
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn gold_for(&self, id: &str) -> Option<&GoldAnnotation> {
        self.gold.get(id)
    }

    pub fn count_by_type(&self) -> BTreeMap<FileType, usize> {
        let mut out = BTreeMap::new();
        for d in &self.documents {
            *out.entry(d.file_type).or_insert(0) += 1;
        }
        out
    }

    /// Serialize; document text is embedded only when `embed_text` is set.
    pub fn to_json(&self, embed_text: bool) -> String {
        let file = ManifestFile {
            taxonomy_version: self.taxonomy_version.clone(),
            root: self.root.to_string_lossy().replace('\\', "/"),
            documents: self
                .documents
                .iter()
                .map(|d| DocumentEntry {
                    id: d.id.clone(),
                    path: d.path.to_string_lossy().replace('\\', "/"),
                    file_type: d.file_type,
                    app_name: d.app_name.clone(),
                    text: embed_text.then(|| d.text.clone()),
                })
                .collect(),
            gold: self.gold.clone(),
            warnings: self.warnings.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parse a manifest. Relative roots resolve against `base_dir` (normally
    /// the directory holding the manifest file); texts not embedded are read
    /// from disk.
    pub fn from_json(bytes: &[u8], base_dir: &Path) -> Result<Self, CorpusError> {
        let file: ManifestFile = serde_json::from_slice(bytes)?;
        let root = PathBuf::from(&file.root);
        let abs_root = if root.is_absolute() {
            root.clone()
        } else {
            base_dir.join(&root)
        };
        let mut documents = Vec::with_capacity(file.documents.len());
        let mut seen = HashSet::new();
        for e in file.documents {
            if !seen.insert(e.id.clone()) {
                return Err(CorpusError::DuplicateId(e.id));
            }
            let text = match e.text {
                Some(t) => t,
                None => {
                    let p = abs_root.join(&e.path);
                    std::fs::read_to_string(&p).map_err(io_err(&p))?
                }
            };
            if text.trim().is_empty() {
                return Err(CorpusError::EmptyDocument(e.id));
            }
            documents.push(Document {
                id: e.id,
                path: PathBuf::from(e.path),
                file_type: e.file_type,
                app_name: e.app_name,
                text,
            });
        }
        Ok(Manifest {
            taxonomy_version: file.taxonomy_version,
            root,
            documents,
            gold: file.gold,
            warnings: file.warnings,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&bytes, base)
    }

    pub fn save(&self, path: &Path, embed_text: bool) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json(embed_text)).map_err(io_err(path))
    }

    /// Attach gold annotations (keyed by document id) and record the taxonomy
    /// version they were written against.
    pub fn with_gold(
        mut self,
        gold: impl IntoIterator<Item = GoldAnnotation>,
        taxonomy_version: impl Into<String>,
    ) -> Self {
        for g in gold {
            self.gold.insert(g.document_id.clone(), g);
        }
        self.taxonomy_version = taxonomy_version.into();
        self
    }
}

/// Guess a file type from a relative path.
pub fn classify_by_name(rel_path: &str) -> Option<FileType> {
    let lower = rel_path.to_lowercase();
    let name = lower.rsplit('/').next().unwrap_or(&lower);
    if name.starts_with("readme") {
        return Some(FileType::Readme);
    }
    let has = |keys: &[&str]| keys.iter().any(|k| name.contains(k));
    if has(&["uml", "architecture", "schema", "diagram", "erd", "database", "db_", "_db", "model"])
        || name.ends_with(".puml")
        || name.ends_with(".plantuml")
    {
        return Some(FileType::ArchitectureDbDesign);
    }
    if has(&["spec", "requirement", "srs", "design_doc", "code"]) {
        return Some(FileType::SoftwareCodeSpec);
    }
    if has(&["guide", "manual", "tutorial", "howto", "api", "docs", "faq"]) {
        return Some(FileType::UserDeveloperGuide);
    }
    None
}

fn pick_hint<'h>(hints: &'h [(glob::Pattern, TypeHint)], rel: &str) -> Option<&'h TypeHint> {
    let name = rel.rsplit('/').next().unwrap_or(rel);
    hints
        .iter()
        .filter(|(p, _)| p.matches(rel) || p.matches(name))
        .map(|(_, h)| h)
        // most specific pattern wins; ties resolved lexicographically
        .max_by(|a, b| {
            a.pattern
                .len()
                .cmp(&b.pattern.len())
                .then_with(|| b.pattern.cmp(&a.pattern))
        })
}

/// One [`Document`] per readable text file under `root_dir`, ordered by path.
/// Hidden files are ignored; empty and non-UTF-8 files are skipped and noted
/// in [`Manifest::warnings`].
pub fn ingest_documents(root_dir: &Path, hints: &[TypeHint]) -> Result<Manifest, CorpusError> {
    let compiled = hints
        .iter()
        .map(|h| {
            glob::Pattern::new(&h.pattern)
                .map(|p| (p, h.clone()))
                .map_err(|e| CorpusError::BadPattern {
                    pattern: h.pattern.clone(),
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut manifest = Manifest {
        root: root_dir.to_path_buf(),
        ..Manifest::default()
    };
    std::fs::read_dir(root_dir).map_err(io_err(root_dir))?;

    let walker = walkdir::WalkDir::new(root_dir)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: e.path().map(|p| p.display().to_string()).unwrap_or_default(),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel_path = entry
            .path()
            .strip_prefix(root_dir)
            .expect("walkdir yields children of root")
            .to_path_buf();
        let rel = rel_path.to_string_lossy().replace('\\', "/");
        let bytes = std::fs::read(entry.path()).map_err(io_err(entry.path()))?;
        let text = match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(_) => {
                log::warn!("skipping {rel}: not valid UTF-8");
                manifest.warnings.push(format!("{rel}: skipped, not valid UTF-8"));
                continue;
            }
        };
        if text.trim().is_empty() {
            log::warn!("skipping {rel}: empty");
            manifest.warnings.push(format!("{rel}: skipped, empty"));
            continue;
        }
        let file_type = match pick_hint(&compiled, &rel) {
            Some(h) => h.file_type,
            None => classify_by_name(&rel).unwrap_or_else(|| {
                log::warn!("{rel}: no type hint matched, defaulting to user_developer_guide");
                manifest
                    .warnings
                    .push(format!("{rel}: file type defaulted to user_developer_guide"));
                FileType::UserDeveloperGuide
            }),
        };
        let app_name = rel
            .split_once('/')
            .map(|(first, _)| first.to_string());
        manifest.documents.push(Document {
            id: rel.clone(),
            path: rel_path,
            file_type,
            app_name,
            text,
        });
    }
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub document_id: String,
    pub field: String,
    pub value: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} `{}`: {}",
            self.document_id, self.field, self.value, self.message
        )
    }
}

/// Every problem with the manifest's gold annotations relative to `t`; empty
/// when the gold is fully valid.
pub fn validate_gold(m: &Manifest, t: &Taxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |doc: &str, field: String, value: &str, message: &str| {
        out.push(Violation {
            document_id: doc.to_string(),
            field,
            value: value.to_string(),
            message: message.to_string(),
        })
    };
    if m.taxonomy_version != t.version() {
        push(
            "*",
            "taxonomy_version".into(),
            &m.taxonomy_version,
            &format!("manifest expects taxonomy `{}`", t.version()),
        );
    }
    let mut ids = HashSet::new();
    for d in &m.documents {
        if !ids.insert(d.id.as_str()) {
            push(&d.id, "id".into(), &d.id, "duplicate document id");
        }
        if d.text.trim().is_empty() {
            push(&d.id, "text".into(), "", "document text is empty");
        }
    }
    for (key, g) in &m.gold {
        if !ids.contains(key.as_str()) {
            push(key, "document_id".into(), key, "gold annotation for unknown document");
        }
        if &g.document_id != key {
            push(key, "document_id".into(), &g.document_id, "does not match its gold key");
        }
        for cat in Category::ALL {
            for label in g.labels.get(cat) {
                if t.find_in(label, cat).is_none() {
                    let msg = match t.find_label(label) {
                        Some(id) if !t.node(id).map(|n| n.is_root()).unwrap_or(true) => {
                            format!("label belongs to category `{}`", t.category(id))
                        }
                        _ => "not a taxonomy label".to_string(),
                    };
                    push(key, cat.key().into(), label, &msg);
                }
            }
        }
        for (i, s) in g.stories.iter().enumerate() {
            if s.data_types.is_empty() {
                push(key, format!("stories[{i}].data_types"), "", "story has no data types");
            }
            if s.purposes.is_empty() {
                push(key, format!("stories[{i}].purposes"), "", "story has no purposes");
            }
            let components = std::iter::once((Category::Action, &s.action))
                .chain(s.data_types.iter().map(|d| (Category::DataType, d)))
                .chain(s.purposes.iter().map(|p| (Category::Purpose, p)));
            for (cat, label) in components {
                if t.find_in(label, cat).is_none() {
                    push(
                        key,
                        format!("stories[{i}].{}", cat.key()),
                        label,
                        "not a taxonomy label",
                    );
                }
            }
        }
    }
    out
}
