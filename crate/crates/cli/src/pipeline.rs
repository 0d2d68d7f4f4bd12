//! Pipeline stages. Each stage reads its inputs from, and writes its outputs
//! to, the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use privstory_core::corpus::{ingest_documents, validate_gold, Document, GoldAnnotation, LabelSets, Manifest};
use privstory_core::embedding::{EmbeddingError, EmbeddingIndex, EmbeddingProvider, HttpEmbeddingProvider, TfIdfEmbedder};
use privstory_core::evaluator::{aggregate, score_all, EvalReport, RunMetadata};
use privstory_core::export::{self, PreferenceExport, SftExport};
use privstory_core::gateway::{
    CompletionProvider, HttpChatBackend, LiveProvider, ProviderKind, RawResponse, Recorder, ReplayProvider, ReplayStore,
};
use privstory_core::par::{with_thread_limit, Exec};
use privstory_core::parser::{parse_response, ParsedAnnotation};
use privstory_core::prompt::{build_prompt, PromptBundle, PromptTemplate, TemplateVariant};
use privstory_core::review::ReviewStore;
use privstory_core::run::{self, ParsedDocument, ResponseFile, RunDir, RunInfo};
use privstory_core::story::{parse_story, StoryTriple};
use privstory_core::taxonomy::{Category, Taxonomy};

use crate::config::{EmbeddingKind, RunConfig};

pub fn load_taxonomy(cfg: &RunConfig) -> Result<Taxonomy> {
    match &cfg.taxonomy {
        Some(p) => {
            let p = cfg.resolve(p);
            Taxonomy::load_path(&p).with_context(|| format!("loading taxonomy {}", p.display()))
        }
        None => Ok(Taxonomy::load_default()),
    }
}

pub fn load_template(cfg: &RunConfig) -> Result<PromptTemplate> {
    match &cfg.prompt.template {
        Some(p) => Ok(PromptTemplate::load(&cfg.resolve(p))?),
        None => Ok(PromptTemplate::default()),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StoryInput {
    Text(String),
    Triple(StoryTriple),
}

#[derive(Deserialize)]
struct GoldInput {
    document_id: String,
    #[serde(flatten)]
    labels: LabelSets,
    #[serde(default)]
    stories: Vec<StoryInput>,
}

/// Read a gold file: a JSON array of annotations whose stories are either
/// sentences or `{action, data_types, purposes}` objects.
pub fn load_gold_file(path: &Path, t: &Taxonomy) -> Result<Vec<GoldAnnotation>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading gold file {}", path.display()))?;
    let entries: Vec<GoldInput> =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing gold file {}", path.display()))?;
    entries
        .into_iter()
        .map(|e| {
            let stories = e
                .stories
                .into_iter()
                .map(|s| match s {
                    StoryInput::Triple(t) => Ok(t),
                    StoryInput::Text(line) => parse_story(&line, t)
                        .ok_or_else(|| anyhow!("{}: cannot parse gold story `{line}`", e.document_id)),
                })
                .collect::<Result<_>>()?;
            Ok(GoldAnnotation {
                document_id: e.document_id,
                labels: e.labels,
                stories,
            })
        })
        .collect()
}

pub fn run_id(cfg: &RunConfig, run: &RunDir) -> String {
    cfg.run_id.clone().unwrap_or_else(|| {
        run.root()
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

/// Scan the corpus, attach gold, validate, and write `manifest.json`.
pub fn ingest(cfg: &RunConfig, run: &RunDir) -> Result<Manifest> {
    let t = load_taxonomy(cfg)?;
    let root = cfg.resolve(&cfg.corpus.root);
    let mut manifest = ingest_documents(&root, &cfg.type_hints())
        .with_context(|| format!("ingesting {}", root.display()))?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let gold = match &cfg.corpus.gold {
        Some(p) => load_gold_file(&cfg.resolve(p), &t)?,
        None => Vec::new(),
    };
    manifest = manifest.with_gold(gold, t.version());
    let violations = validate_gold(&manifest, &t);
    if !violations.is_empty() {
        for v in &violations {
            log::error!("{v}");
        }
        bail!("{} gold annotation problem(s)", violations.len());
    }
    // Texts are embedded so the run directory is self-contained.
    manifest.root = PathBuf::new();
    std::fs::create_dir_all(run.root()).with_context(|| format!("creating {}", run.root().display()))?;
    run::write_text(&run.path(run::MANIFEST_FILE), &manifest.to_json(true))?;
    log::info!(
        "ingested {} documents ({} with gold) into {}",
        manifest.documents.len(),
        manifest.gold.len(),
        run.path(run::MANIFEST_FILE).display()
    );
    Ok(manifest)
}

/// Where completions come from.
pub enum ProviderChoice<'a> {
    /// Live or replay as configured; `force_replay` wins.
    Configured { force_replay: bool },
    Custom(&'a dyn CompletionProvider),
}

fn configured_provider(cfg: &RunConfig, force_replay: bool) -> Result<Box<dyn CompletionProvider>> {
    let store_path = cfg.replay_store_path();
    if force_replay || cfg.model.provider_kind == ProviderKind::Replay {
        let store = ReplayStore::open_existing(&store_path)?;
        log::info!("replaying {} recorded responses from {}", store.len(), store_path.display());
        return Ok(Box::new(ReplayProvider::new(cfg.model.clone(), Arc::new(store))));
    }
    let store = Arc::new(ReplayStore::open(&store_path)?);
    let live = LiveProvider::new(cfg.model.clone(), HttpChatBackend::from_env(&cfg.model))?;
    log::info!("calling `{}`; recording into {}", cfg.model.model_name, store_path.display());
    Ok(Box::new(Recorder::new(live, store)))
}

fn embedder(cfg: &RunConfig, m: &Manifest) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match cfg.annotate.embedding {
        EmbeddingKind::Tfidf => Box::new(TfIdfEmbedder::fit(m.documents.iter().map(|d| d.text.as_str()))),
        EmbeddingKind::Http => Box::new(
            HttpEmbeddingProvider::from_env().ok_or_else(|| anyhow!("HTTP embeddings need a configured endpoint"))?,
        ),
    })
}

/// Prompts for every document, in manifest order.
pub fn build_prompts(cfg: &RunConfig, m: &Manifest, t: &Taxonomy, exec: Exec) -> Result<Vec<PromptBundle>> {
    let template = load_template(cfg)?;
    let opts = &cfg.prompt.options;
    let index = if opts.variant == TemplateVariant::Full && opts.icl_examples > 0 {
        let provider = embedder(cfg, m)?;
        Some(EmbeddingIndex::build(m, provider.as_ref())?)
    } else {
        None
    };
    exec.try_map(&m.documents, |doc: &Document| -> Result<PromptBundle> {
        let icl_ids = match &index {
            Some(ix) => match ix.select(&doc.id, opts.icl_examples) {
                Ok(ids) => ids,
                Err(EmbeddingError::EmptyPool(_)) => Vec::new(),
                Err(e) => return Err(e.into()),
            },
            None => Vec::new(),
        };
        let icl: Vec<(&Document, &GoldAnnotation)> = icl_ids
            .iter()
            .map(|id| {
                (
                    m.document(id).expect("indexed ids are manifest documents"),
                    m.gold_for(id).expect("candidates have gold"),
                )
            })
            .collect();
        let mut bundle = build_prompt(doc, t, &icl, &template, opts)?;
        if index.is_some() && icl.is_empty() {
            bundle.warnings.push("no annotated document available as an example".into());
        }
        Ok(bundle)
    })
}

fn reset_dir(run: &RunDir, name: &str) -> Result<()> {
    let p = run.path(name);
    if p.exists() {
        std::fs::remove_dir_all(&p).with_context(|| format!("clearing {}", p.display()))?;
    }
    run.ensure(name)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AnnotateSummary {
    pub documents: usize,
    pub responses: usize,
    pub stories: usize,
    pub hallucinated_labels: usize,
}

/// Build prompts, obtain completions, parse them, and write `prompts/`,
/// `responses/`, `parsed/` and `run.json`.
pub fn annotate(cfg: &RunConfig, run: &RunDir, choice: ProviderChoice<'_>) -> Result<AnnotateSummary> {
    let manifest = run.manifest()?;
    let t = load_taxonomy(cfg)?;
    let owned;
    let provider: &dyn CompletionProvider = match choice {
        ProviderChoice::Custom(p) => p,
        ProviderChoice::Configured { force_replay } => {
            owned = configured_provider(cfg, force_replay)?;
            owned.as_ref()
        }
    };
    let model = provider.config().clone();
    let n = cfg.annotate.responses_per_document;
    let exec = Exec::auto();

    with_thread_limit(cfg.annotate.parallelism, || -> Result<AnnotateSummary> {
        let bundles = build_prompts(cfg, &manifest, &t, exec)?;
        for b in &bundles {
            for w in &b.warnings {
                log::warn!("{}: {w}", b.document_id);
            }
        }
        let jobs: Vec<(usize, u32)> = (0..bundles.len()).flat_map(|i| (0..n).map(move |r| (i, r))).collect();
        let responses: Vec<RawResponse> = exec.try_map(&jobs, |&(i, r)| {
            let resp = provider.complete(&bundles[i], r);
            if resp.is_ok() {
                log::debug!("{} #{r}: done", bundles[i].document_id);
            }
            resp
        })?;
        let parsed: Vec<ParsedAnnotation> =
            exec.map(&responses, |r| parse_response(&r.document_id, r.response_index, &r.text, &t));

        for dir in [run::PROMPTS_DIR, run::RESPONSES_DIR, run::PARSED_DIR] {
            reset_dir(run, dir)?;
        }
        let mut by_doc: BTreeMap<&str, (Vec<RawResponse>, Vec<ParsedAnnotation>)> = BTreeMap::new();
        for (r, p) in responses.iter().zip(&parsed) {
            let e = by_doc.entry(r.document_id.as_str()).or_default();
            e.0.push(r.clone());
            e.1.push(p.clone());
        }
        for b in &bundles {
            run::write_json(&run.prompt_path(&b.document_id), b)?;
        }
        let mut summary = AnnotateSummary {
            documents: bundles.len(),
            responses: responses.len(),
            stories: 0,
            hallucinated_labels: 0,
        };
        for (doc, (raws, parsed)) in by_doc {
            for p in &parsed {
                for w in &p.warnings {
                    log::debug!("{doc} #{}: {w}", p.response_index);
                }
                summary.hallucinated_labels += p.hallucinated_total();
            }
            summary.stories += parsed.first().map_or(0, |p| p.stories.len());
            run::write_json(
                &run.responses_path(doc),
                &ResponseFile {
                    document_id: doc.to_string(),
                    responses: raws,
                },
            )?;
            run::write_json(
                &run.parsed_path(doc),
                &ParsedDocument {
                    document_id: doc.to_string(),
                    responses: parsed,
                },
            )?;
        }
        let template = load_template(cfg)?;
        let info = RunInfo {
            run_id: run_id(cfg, run),
            model_name: model.model_name.clone(),
            temperature: model.temperature,
            template_version: template.version,
            template_variant: variant_name(cfg.prompt.options.variant).into(),
            taxonomy_version: t.version().to_string(),
            responses_per_document: n,
        };
        run::write_json(&run.path(run::RUN_INFO_FILE), &info)?;
        log::info!(
            "annotated {} documents ({} responses, {} stories in first responses)",
            summary.documents,
            summary.responses,
            summary.stories
        );
        Ok(summary)
    })
}

pub fn variant_name(v: TemplateVariant) -> &'static str {
    match v {
        TemplateVariant::Full => "full",
        TemplateVariant::Base => "base",
    }
}

/// Score parsed annotations against gold; write `report.json` and `report.csv`.
pub fn evaluate(cfg: &RunConfig, run: &RunDir) -> Result<EvalReport> {
    let manifest = run.manifest()?;
    let info = run.info()?;
    let parsed = run.parsed_documents()?;
    let t = load_taxonomy(cfg)?;
    let idx = cfg.evaluation.response_index;
    let mut chosen = Vec::with_capacity(parsed.len());
    for pd in &parsed {
        if manifest.gold_for(&pd.document_id).is_none() {
            log::warn!("{}: no gold annotation, not scored", pd.document_id);
            continue;
        }
        let r = pd
            .responses
            .iter()
            .find(|r| r.response_index == idx)
            .ok_or_else(|| anyhow!("{}: no response {idx}", pd.document_id))?;
        chosen.push(r.clone());
    }
    let opts = cfg.evaluation.options;
    let scores = score_all(&chosen, &manifest, &t, opts, Exec::auto())?;
    let evaluation = aggregate(scores, &manifest)?;
    let report = evaluation.report(
        &t,
        RunMetadata {
            model_name: info.model_name,
            template_version: info.template_version,
            taxonomy_version: info.taxonomy_version,
            template_variant: info.template_variant,
        },
        opts,
    );
    run::write_text(&run.path(run::REPORT_JSON), &report.to_json())?;
    run::write_text(&run.path(run::REPORT_CSV), &report.to_csv()?)?;
    log::info!(
        "overall F1 {:.3} (macro) / {:.3} (micro) over {} documents",
        report.overall_macro.f1,
        report.overall_micro.f1,
        report.per_document.len()
    );
    Ok(report)
}

/// Write `sft.jsonl`, `sft.heldout.json` and `sft.meta.json`.
pub fn export_sft(cfg: &RunConfig, run: &RunDir) -> Result<SftExport> {
    let manifest = run.manifest()?;
    let t = load_taxonomy(cfg)?;
    let template = load_template(cfg)?;
    let out = export::export_sft(&manifest, &t, &template, &cfg.export.split, cfg.export.sft_variant)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    export::write_jsonl(&run.path(run::SFT_FILE), &out.records)?;
    run::write_json(&run.path(run::SFT_HELDOUT_FILE), &out.heldout)?;
    run::write_json(&run.path(run::SFT_META_FILE), &out.meta)?;
    log::info!(
        "wrote {} training records; {} documents held out",
        out.records.len(),
        out.heldout.len()
    );
    Ok(out)
}

pub fn review_dir(cfg: &RunConfig, run: &RunDir) -> PathBuf {
    match &cfg.review.data_dir {
        Some(d) => cfg.resolve(d),
        None => run.path(run::REVIEW_DIR),
    }
}

/// Write `preferences.jsonl` from the run's review sessions.
pub fn export_dpo(cfg: &RunConfig, run: &RunDir) -> Result<PreferenceExport> {
    let info = run.info()?;
    let dir = review_dir(cfg, run);
    if !dir.exists() {
        bail!("no review sessions at {}; run `review-serve` first", dir.display());
    }
    let sessions = ReviewStore::open(&dir)?.sessions_for_run(&info.run_id);
    let store = ReplayStore::open_existing(&cfg.replay_store_path())?;
    let out = export::export_preferences(&sessions, &store, Some(&info.model_name))?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    export::write_jsonl(&run.path(run::PREFERENCES_FILE), &out.records)?;
    log::info!(
        "wrote {} preference records from {} session(s)",
        out.records.len(),
        sessions.len()
    );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TaxonomyReport {
    pub version: String,
    pub labels: Vec<(Category, usize)>,
    pub problems: Vec<String>,
}

/// Load the taxonomy and, when a gold file is configured, check it.
pub fn taxonomy_check(cfg: Option<&RunConfig>, path: Option<&Path>) -> Result<TaxonomyReport> {
    let t = match (path, cfg) {
        (Some(p), _) => Taxonomy::load_path(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(c)) => load_taxonomy(c)?,
        (None, None) => Taxonomy::load_default(),
    };
    let mut problems = Vec::new();
    if let Some(c) = cfg {
        if let Some(g) = &c.corpus.gold {
            let gold = load_gold_file(&c.resolve(g), &t)?;
            let root = c.resolve(&c.corpus.root);
            let m = match ingest_documents(&root, &c.type_hints()) {
                Ok(m) => m.with_gold(gold, t.version()),
                Err(e) => bail!("cannot read corpus {}: {e}", root.display()),
            };
            problems.extend(validate_gold(&m, &t).into_iter().map(|v| v.to_string()));
        }
    }
    Ok(TaxonomyReport {
        version: t.version().to_string(),
        labels: Category::ALL.iter().map(|&c| (c, t.label_count(c))).collect(),
        problems,
    })
}
