//! Human review sessions: per-story accuracy judgments, per-document notes on
//! missing stories, and pairwise preferences between responses.
//!
//! Each session is an append-only JSONL event log; state is rebuilt by
//! replaying the log, so a restart yields the same sessions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::FileType;
use crate::run::RunData;
use crate::story::StoryTriple;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("reviewer `{reviewer_id}` already has session `{session_id}` for run `{run_id}`")]
    DuplicateSession {
        run_id: String,
        reviewer_id: String,
        session_id: String,
    },
    #[error("reviewer id is empty")]
    EmptyReviewer,
    #[error("session `{0}` is complete")]
    Closed(String),
    #[error("document `{document_id}` is not part of session `{session_id}`")]
    UnknownDocument {
        session_id: String,
        document_id: String,
    },
    #[error("story {story_index} does not exist for `{document_id}`")]
    InvalidStory {
        document_id: String,
        story_index: usize,
    },
    #[error("response {index} does not exist for `{document_id}`")]
    InvalidResponse { document_id: String, index: u32 },
    #[error("preference must compare two different responses (got {0} twice)")]
    SameResponse(u32),
    #[error("session `{session_id}` has {pending} unjudged stories")]
    Incomplete { session_id: String, pending: usize },
    #[error("no sessions to aggregate")]
    NoSessions,
    #[error("session `{session_id}` belongs to run `{found}`, not `{expected}`")]
    WrongRun {
        session_id: String,
        expected: String,
        found: String,
    },
    #[error("session log {path}: {message}")]
    Log { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryVerdict {
    /// Q1: is the story accurate?
    pub q1_accurate: bool,
    /// Q2: is the story missing behaviors?
    pub q2_missing_behaviors: bool,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub document_id: String,
    pub story_index: usize,
    pub story: String,
    pub judgment: Option<StoryVerdict>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentNote {
    /// Q3: which stories are missing, free text.
    pub q3_missing_stories: String,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceChoice {
    pub chosen_response_index: u32,
    pub rejected_response_index: u32,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub reviewer_id: String,
    pub run_id: String,
    pub status: SessionStatus,
    pub items: Vec<ReviewItem>,
    /// Responses available per document, for preference validation.
    pub response_counts: BTreeMap<String, u32>,
    pub documents: BTreeMap<String, DocumentNote>,
    pub preferences: BTreeMap<String, PreferenceChoice>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub event_count: usize,
}

impl ReviewSession {
    pub fn pending(&self) -> usize {
        self.items.iter().filter(|i| i.judgment.is_none()).count()
    }

    pub fn item(&self, document_id: &str, story_index: usize) -> Option<&ReviewItem> {
        self.items
            .iter()
            .find(|i| i.document_id == document_id && i.story_index == story_index)
    }
}

/// One line of a session log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        reviewer_id: String,
        run_id: String,
        items: Vec<(String, usize, String)>,
        response_counts: BTreeMap<String, u32>,
        at_ms: u64,
    },
    Story {
        document_id: String,
        story_index: usize,
        q1_accurate: bool,
        q2_missing_behaviors: bool,
        at_ms: u64,
    },
    Document {
        document_id: String,
        q3_missing_stories: String,
        at_ms: u64,
    },
    Preference {
        document_id: String,
        chosen_response_index: u32,
        rejected_response_index: u32,
        at_ms: u64,
    },
    Completed {
        at_ms: u64,
    },
}

/// A judgment submitted to a session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Judgment {
    Story {
        document_id: String,
        story_index: usize,
        q1_accurate: bool,
        q2_missing_behaviors: bool,
    },
    Document {
        document_id: String,
        q3_missing_stories: String,
    },
    Preference {
        document_id: String,
        chosen_response_index: u32,
        rejected_response_index: u32,
    },
}

fn apply(state: Option<ReviewSession>, ev: &SessionEvent) -> Result<ReviewSession, String> {
    match (state, ev) {
        (
            None,
            SessionEvent::Created {
                session_id,
                reviewer_id,
                run_id,
                items,
                response_counts,
                at_ms,
            },
        ) => Ok(ReviewSession {
            session_id: session_id.clone(),
            reviewer_id: reviewer_id.clone(),
            run_id: run_id.clone(),
            status: SessionStatus::Open,
            items: items
                .iter()
                .map(|(d, i, s)| ReviewItem {
                    document_id: d.clone(),
                    story_index: *i,
                    story: s.clone(),
                    judgment: None,
                })
                .collect(),
            response_counts: response_counts.clone(),
            documents: BTreeMap::new(),
            preferences: BTreeMap::new(),
            created_at_ms: *at_ms,
            updated_at_ms: *at_ms,
            event_count: 1,
        }),
        (None, _) => Err("log does not start with a `created` event".into()),
        (Some(_), SessionEvent::Created { .. }) => Err("duplicate `created` event".into()),
        (Some(mut s), ev) => {
            match ev {
                SessionEvent::Story {
                    document_id,
                    story_index,
                    q1_accurate,
                    q2_missing_behaviors,
                    at_ms,
                } => {
                    let item = s
                        .items
                        .iter_mut()
                        .find(|i| &i.document_id == document_id && i.story_index == *story_index)
                        .ok_or_else(|| format!("no story {story_index} for `{document_id}`"))?;
                    item.judgment = Some(StoryVerdict {
                        q1_accurate: *q1_accurate,
                        q2_missing_behaviors: *q2_missing_behaviors,
                        at_ms: *at_ms,
                    });
                }
                SessionEvent::Document {
                    document_id,
                    q3_missing_stories,
                    at_ms,
                } => {
                    s.documents.insert(
                        document_id.clone(),
                        DocumentNote {
                            q3_missing_stories: q3_missing_stories.clone(),
                            at_ms: *at_ms,
                        },
                    );
                }
                SessionEvent::Preference {
                    document_id,
                    chosen_response_index,
                    rejected_response_index,
                    at_ms,
                } => {
                    s.preferences.insert(
                        document_id.clone(),
                        PreferenceChoice {
                            chosen_response_index: *chosen_response_index,
                            rejected_response_index: *rejected_response_index,
                            at_ms: *at_ms,
                        },
                    );
                }
                SessionEvent::Completed { .. } => s.status = SessionStatus::Complete,
                SessionEvent::Created { .. } => unreachable!(),
            }
            s.updated_at_ms = event_time(ev);
            s.event_count += 1;
            Ok(s)
        }
    }
}

fn event_time(ev: &SessionEvent) -> u64 {
    match ev {
        SessionEvent::Created { at_ms, .. }
        | SessionEvent::Story { at_ms, .. }
        | SessionEvent::Document { at_ms, .. }
        | SessionEvent::Preference { at_ms, .. }
        | SessionEvent::Completed { at_ms } => *at_ms,
    }
}

/// Check a judgment against the session without changing it.
fn validate(s: &ReviewSession, j: &Judgment) -> Result<(), ReviewError> {
    if s.status == SessionStatus::Complete {
        return Err(ReviewError::Closed(s.session_id.clone()));
    }
    let doc_known = |d: &str| -> Result<(), ReviewError> {
        if s.response_counts.contains_key(d) {
            Ok(())
        } else {
            Err(ReviewError::UnknownDocument {
                session_id: s.session_id.clone(),
                document_id: d.to_string(),
            })
        }
    };
    match j {
        Judgment::Story {
            document_id,
            story_index,
            ..
        } => {
            doc_known(document_id)?;
            if s.item(document_id, *story_index).is_none() {
                return Err(ReviewError::InvalidStory {
                    document_id: document_id.clone(),
                    story_index: *story_index,
                });
            }
        }
        Judgment::Document { document_id, .. } => doc_known(document_id)?,
        Judgment::Preference {
            document_id,
            chosen_response_index,
            rejected_response_index,
        } => {
            doc_known(document_id)?;
            if chosen_response_index == rejected_response_index {
                return Err(ReviewError::SameResponse(*chosen_response_index));
            }
            let n = s.response_counts[document_id];
            for &idx in [chosen_response_index, rejected_response_index] {
                if idx >= n {
                    return Err(ReviewError::InvalidResponse {
                        document_id: document_id.clone(),
                        index: idx,
                    });
                }
            }
        }
    }
    Ok(())
}

fn judgment_event(j: &Judgment, at_ms: u64) -> SessionEvent {
    match j.clone() {
        Judgment::Story {
            document_id,
            story_index,
            q1_accurate,
            q2_missing_behaviors,
        } => SessionEvent::Story {
            document_id,
            story_index,
            q1_accurate,
            q2_missing_behaviors,
            at_ms,
        },
        Judgment::Document {
            document_id,
            q3_missing_stories,
        } => SessionEvent::Document {
            document_id,
            q3_missing_stories,
            at_ms,
        },
        Judgment::Preference {
            document_id,
            chosen_response_index,
            rejected_response_index,
        } => SessionEvent::Preference {
            document_id,
            chosen_response_index,
            rejected_response_index,
            at_ms,
        },
    }
}

/// Deterministic id for a (run, reviewer) pair.
pub fn session_id(run_id: &str, reviewer_id: &str) -> String {
    let mut h = Sha256::new();
    h.update((run_id.len() as u64).to_le_bytes());
    h.update(run_id.as_bytes());
    h.update(reviewer_id.as_bytes());
    let slug: String = reviewer_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .take(24)
        .collect();
    format!("{slug}-{}", &hex::encode(h.finalize())[..10])
}

pub type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// File-backed session store. Mutations are serialized through one writer
/// lock; readers get clones of the current state.
pub struct ReviewStore {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, ReviewSession>>,
    writer: Mutex<()>,
    clock: Clock,
}

impl ReviewStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        Self::open_with_clock(dir, Box::new(system_clock))
    }

    /// Open with an injected clock (used by tests for stable timestamps).
    pub fn open_with_clock(dir: impl Into<PathBuf>, clock: Clock) -> Result<Self, ReviewError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| log_err(&dir, e))?;
        let mut logs: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| log_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();
        let mut sessions = BTreeMap::new();
        for path in logs {
            if let Some(s) = replay_log(&path)? {
                sessions.insert(s.session_id.clone(), s);
            }
        }
        Ok(ReviewStore {
            dir,
            sessions: RwLock::new(sessions),
            writer: Mutex::new(()),
            clock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, session_id: &str) -> Option<ReviewSession> {
        self.sessions.read().expect("sessions lock").get(session_id).cloned()
    }

    pub fn list(&self) -> Vec<ReviewSession> {
        self.sessions.read().expect("sessions lock").values().cloned().collect()
    }

    pub fn sessions_for_run(&self, run_id: &str) -> Vec<ReviewSession> {
        self.list().into_iter().filter(|s| s.run_id == run_id).collect()
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    fn append(&self, session_id: &str, ev: &SessionEvent) -> Result<(), ReviewError> {
        let path = self.log_path(session_id);
        let mut line = serde_json::to_string(ev).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| log_err(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| log_err(&path, e))?;
        f.sync_data().map_err(|e| log_err(&path, e))
    }

    /// Persist an event and fold it into the in-memory state.
    fn commit(&self, session_id: &str, ev: SessionEvent) -> Result<ReviewSession, ReviewError> {
        self.append(session_id, &ev)?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        let prev = sessions.remove(session_id);
        let next = apply(prev, &ev).map_err(|m| ReviewError::Log {
            path: self.log_path(session_id).display().to_string(),
            message: m,
        })?;
        sessions.insert(session_id.to_string(), next.clone());
        Ok(next)
    }

    /// Open a session listing every reviewed story of the run as pending.
    pub fn create_session(&self, run: &RunData, reviewer_id: &str) -> Result<ReviewSession, ReviewError> {
        let reviewer_id = reviewer_id.trim();
        if reviewer_id.is_empty() {
            return Err(ReviewError::EmptyReviewer);
        }
        let _w = self.writer.lock().expect("writer lock");
        let run_id = run.run_id().to_string();
        if let Some(existing) = self
            .sessions
            .read()
            .expect("sessions lock")
            .values()
            .find(|s| s.run_id == run_id && s.reviewer_id == reviewer_id)
        {
            return Err(ReviewError::DuplicateSession {
                run_id,
                reviewer_id: reviewer_id.to_string(),
                session_id: existing.session_id.clone(),
            });
        }
        let id = session_id(&run_id, reviewer_id);
        let mut items = Vec::new();
        let mut response_counts = BTreeMap::new();
        for d in &run.documents {
            response_counts.insert(d.document_id.clone(), d.response_count());
            for (i, s) in d.reviewed_stories().into_iter().enumerate() {
                items.push((d.document_id.clone(), i, s));
            }
        }
        let ev = SessionEvent::Created {
            session_id: id.clone(),
            reviewer_id: reviewer_id.to_string(),
            run_id,
            items,
            response_counts,
            at_ms: (self.clock)(),
        };
        self.commit(&id, ev)
    }

    /// Record or overwrite a judgment. The log keeps every submission.
    pub fn record(&self, session_id: &str, j: &Judgment) -> Result<ReviewSession, ReviewError> {
        let _w = self.writer.lock().expect("writer lock");
        let s = self
            .get(session_id)
            .ok_or_else(|| ReviewError::UnknownSession(session_id.to_string()))?;
        validate(&s, j)?;
        self.commit(session_id, judgment_event(j, (self.clock)()))
    }

    /// Close a session; every story must be judged.
    pub fn complete(&self, session_id: &str) -> Result<ReviewSession, ReviewError> {
        let _w = self.writer.lock().expect("writer lock");
        let s = self
            .get(session_id)
            .ok_or_else(|| ReviewError::UnknownSession(session_id.to_string()))?;
        if s.status == SessionStatus::Complete {
            return Err(ReviewError::Closed(s.session_id));
        }
        let pending = s.pending();
        if pending > 0 {
            return Err(ReviewError::Incomplete {
                session_id: s.session_id,
                pending,
            });
        }
        self.commit(session_id, SessionEvent::Completed { at_ms: (self.clock)() })
    }
}

fn log_err(path: &Path, e: std::io::Error) -> ReviewError {
    ReviewError::Log {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Rebuild a session from its log. A torn final line (crash mid-write) is
/// dropped; corruption elsewhere is an error.
pub fn replay_log(path: &Path) -> Result<Option<ReviewSession>, ReviewError> {
    let text = std::fs::read_to_string(path).map_err(|e| log_err(path, e))?;
    let lines: Vec<&str> = text.split('\n').collect();
    let mut state: Option<ReviewSession> = None;
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: SessionEvent = match serde_json::from_str(line) {
            Ok(ev) => ev,
            Err(e) if n + 1 == lines.len() => {
                log::warn!("{}: dropping torn final line: {e}", path.display());
                break;
            }
            Err(e) => {
                return Err(ReviewError::Log {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", n + 1),
                })
            }
        };
        state = Some(apply(state, &ev).map_err(|m| ReviewError::Log {
            path: path.display().to_string(),
            message: format!("line {}: {m}", n + 1),
        })?);
    }
    Ok(state)
}

// ---- aggregation -------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub stories: usize,
    /// Judged accurate by every session.
    pub both_yes: usize,
    pub at_least_one_yes: usize,
    /// Judged inaccurate by every session.
    pub both_no: usize,
    pub at_least_one_no: usize,
    /// Accurate (per that reviewer) yet missing behaviors, counted once per story.
    pub accurate_missing_behaviors: usize,
    /// Judged inaccurate by someone and not resolvable against the taxonomy.
    pub inaccurate_unresolved: usize,
    pub unjudged: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Q3Entry {
    pub document_id: String,
    pub reviewer_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedGold {
    pub document_id: String,
    pub story: StoryTriple,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub run_id: String,
    pub reviewers: Vec<String>,
    pub overall: ReviewRow,
    pub per_file_type: BTreeMap<FileType, ReviewRow>,
    pub q3: Vec<Q3Entry>,
    pub gold_stories: usize,
    /// Gold stories that no response of the run generated.
    pub missing_gold: Vec<MissedGold>,
    pub preferences: usize,
}

impl ReviewReport {
    pub fn missing_gold_count(&self) -> usize {
        self.missing_gold.len()
    }
}

/// Cross-session counts per file type and overall. Independent of session order.
pub fn aggregate_review(run: &RunData, sessions: &[ReviewSession]) -> Result<ReviewReport, ReviewError> {
    if sessions.is_empty() {
        return Err(ReviewError::NoSessions);
    }
    for s in sessions {
        if s.run_id != run.run_id() {
            return Err(ReviewError::WrongRun {
                session_id: s.session_id.clone(),
                expected: run.run_id().to_string(),
                found: s.run_id.clone(),
            });
        }
    }
    let mut sessions: Vec<&ReviewSession> = sessions.iter().collect();
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    let mut overall = ReviewRow::default();
    let mut per_file_type: BTreeMap<FileType, ReviewRow> = BTreeMap::new();
    let mut missing_gold = Vec::new();
    let mut gold_stories = 0;

    for d in &run.documents {
        let row = per_file_type.entry(d.file_type).or_default();
        let resolved: Vec<bool> = d
            .parsed
            .first()
            .map(|p| p.stories.iter().map(|s| s.triple.is_some()).collect())
            .unwrap_or_default();
        for (idx, _) in d.reviewed_stories().iter().enumerate() {
            let verdicts: Vec<&StoryVerdict> = sessions
                .iter()
                .filter_map(|s| s.item(&d.document_id, idx).and_then(|i| i.judgment.as_ref()))
                .collect();
            let all_judged = verdicts.len() == sessions.len();
            let yes = verdicts.iter().filter(|v| v.q1_accurate).count();
            let no = verdicts.len() - yes;
            let add = |r: &mut ReviewRow| {
                r.stories += 1;
                if verdicts.is_empty() {
                    r.unjudged += 1;
                }
                if all_judged && no == 0 {
                    r.both_yes += 1;
                }
                if yes > 0 {
                    r.at_least_one_yes += 1;
                }
                if all_judged && yes == 0 {
                    r.both_no += 1;
                }
                if no > 0 {
                    r.at_least_one_no += 1;
                    if !resolved.get(idx).copied().unwrap_or(false) {
                        r.inaccurate_unresolved += 1;
                    }
                }
                if verdicts.iter().any(|v| v.q1_accurate && v.q2_missing_behaviors) {
                    r.accurate_missing_behaviors += 1;
                }
            };
            add(row);
            add(&mut overall);
        }

        if let Some(gold) = &d.gold {
            let generated: HashSet<_> = d
                .parsed
                .iter()
                .flat_map(|p| p.valid_stories())
                .map(|s| s.match_key())
                .collect();
            for g in &gold.stories {
                gold_stories += 1;
                if !generated.contains(&g.match_key()) {
                    missing_gold.push(MissedGold {
                        document_id: d.document_id.clone(),
                        story: g.clone(),
                    });
                }
            }
        }
    }

    let mut q3 = Vec::new();
    for s in &sessions {
        for (doc, note) in &s.documents {
            if !note.q3_missing_stories.trim().is_empty() {
                q3.push(Q3Entry {
                    document_id: doc.clone(),
                    reviewer_id: s.reviewer_id.clone(),
                    text: note.q3_missing_stories.clone(),
                });
            }
        }
    }
    q3.sort_by(|a, b| (&a.document_id, &a.reviewer_id).cmp(&(&b.document_id, &b.reviewer_id)));

    let reviewers: BTreeSet<String> = sessions.iter().map(|s| s.reviewer_id.clone()).collect();
    Ok(ReviewReport {
        run_id: run.run_id().to_string(),
        reviewers: reviewers.into_iter().collect(),
        overall,
        per_file_type,
        q3,
        gold_stories,
        missing_gold,
        preferences: sessions.iter().map(|s| s.preferences.len()).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldAnnotation;
    use crate::parser::{ParsedAnnotation, ParsedStory};
    use crate::run::{RunDocument, RunInfo};
    use std::sync::atomic::{AtomicU64, Ordering};

    fn run(stories_per_doc: &[usize]) -> RunData {
        let documents = stories_per_doc
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let id = format!("doc{i}");
                let parsed = ParsedAnnotation {
                    document_id: id.clone(),
                    stories: (0..n)
                        .map(|k| ParsedStory {
                            raw: format!("story {k}"),
                            triple: None,
                        })
                        .collect(),
                    ..Default::default()
                };
                let mut second = parsed.clone();
                second.response_index = 1;
                RunDocument {
                    document_id: id.clone(),
                    file_type: FileType::Readme,
                    text: "text".into(),
                    gold: Some(GoldAnnotation {
                        document_id: id,
                        ..Default::default()
                    }),
                    parsed: vec![parsed, second],
                    responses: vec![],
                }
            })
            .collect();
        RunData {
            info: RunInfo {
                run_id: "r1".into(),
                model_name: "m".into(),
                temperature: 0.7,
                template_version: "t".into(),
                template_variant: "full".into(),
                taxonomy_version: "x".into(),
                responses_per_document: 2,
            },
            documents,
        }
    }

    fn store(dir: &Path) -> ReviewStore {
        let tick = AtomicU64::new(0);
        ReviewStore::open_with_clock(dir, Box::new(move || tick.fetch_add(1, Ordering::SeqCst))).unwrap()
    }

    fn story(doc: &str, idx: usize, q1: bool) -> Judgment {
        Judgment::Story {
            document_id: doc.into(),
            story_index: idx,
            q1_accurate: q1,
            q2_missing_behaviors: false,
        }
    }

    #[test]
    fn session_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let r = run(&[2, 1]);
        let s = st.create_session(&r, "alice").unwrap();
        assert_eq!(s.pending(), 3);
        assert!(matches!(st.create_session(&r, "alice"), Err(ReviewError::DuplicateSession { .. })));
        assert!(matches!(st.complete(&s.session_id), Err(ReviewError::Incomplete { pending: 3, .. })));
        st.record(&s.session_id, &story("doc0", 0, true)).unwrap();
        st.record(&s.session_id, &story("doc0", 1, false)).unwrap();
        let s2 = st.record(&s.session_id, &story("doc1", 0, true)).unwrap();
        assert_eq!(s2.item("doc0", 0).unwrap().judgment.as_ref().unwrap().q1_accurate, true);
        assert!(matches!(
            st.record(&s.session_id, &story("doc1", 5, true)),
            Err(ReviewError::InvalidStory { .. })
        ));
        let pref = Judgment::Preference {
            document_id: "doc0".into(),
            chosen_response_index: 1,
            rejected_response_index: 1,
        };
        assert!(matches!(st.record(&s.session_id, &pref), Err(ReviewError::SameResponse(1))));
        let pref = Judgment::Preference {
            document_id: "doc0".into(),
            chosen_response_index: 0,
            rejected_response_index: 1,
        };
        let s3 = st.record(&s.session_id, &pref).unwrap();
        assert_eq!(s3.preferences["doc0"].chosen_response_index, 0);
        st.complete(&s.session_id).unwrap();
        assert!(matches!(
            st.record(&s.session_id, &story("doc0", 0, false)),
            Err(ReviewError::Closed(_))
        ));
    }

    #[test]
    fn restart_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let st = store(dir.path());
            let s = st.create_session(&run(&[2]), "bob").unwrap();
            st.record(&s.session_id, &story("doc0", 1, true)).unwrap();
            st.record(&s.session_id, &story("doc0", 1, false)).unwrap();
            st.get(&s.session_id).unwrap()
        };
        let after = store(dir.path()).get(&before.session_id).unwrap();
        assert_eq!(before, after);
        assert_eq!(after.event_count, 3);
        assert!(!after.item("doc0", 1).unwrap().judgment.as_ref().unwrap().q1_accurate);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let st = store(dir.path());
            st.create_session(&run(&[1]), "carol").unwrap().session_id
        };
        let path = dir.path().join(format!("{id}.jsonl"));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"story\",\"docu").unwrap();
        assert_eq!(store(dir.path()).get(&id).unwrap().event_count, 1);
    }

    #[test]
    fn empty_run_is_immediately_completable() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let s = st.create_session(&run(&[]), "dana").unwrap();
        assert_eq!(s.pending(), 0);
        assert_eq!(st.complete(&s.session_id).unwrap().status, SessionStatus::Complete);
    }

    #[test]
    fn single_session_rows_coincide() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path());
        let r = run(&[3]);
        let s = st.create_session(&r, "erin").unwrap();
        st.record(&s.session_id, &story("doc0", 0, true)).unwrap();
        st.record(&s.session_id, &story("doc0", 1, true)).unwrap();
        st.record(&s.session_id, &story("doc0", 2, false)).unwrap();
        let rep = aggregate_review(&r, &[st.get(&s.session_id).unwrap()]).unwrap();
        assert_eq!(rep.overall.both_yes, 2);
        assert_eq!(rep.overall.at_least_one_yes, 2);
        assert_eq!(rep.overall.both_no, rep.overall.at_least_one_no);
        assert!(matches!(aggregate_review(&r, &[]), Err(ReviewError::NoSessions)));
    }
}
