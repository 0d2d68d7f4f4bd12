//! Regenerate `tests/fixtures/`: a 25-document synthetic corpus, its gold
//! annotations, and a replay store of scripted model responses recorded
//! through the real annotate stage.
//!
//! ```text
//! cargo run -p privstory --example make_fixture
//! ```
//!
//! Counts are fixed by construction: 8/9/6/2 documents per file type, gold
//! totals of 50 actions, 60 data types, 61 purposes and 93 stories, and 120
//! stories in the first responses of which 57 reproduce a gold story.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::{ensure, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use privstory::config::RunConfig;
use privstory::pipeline::{self, ProviderChoice};
use privstory_core::corpus::{FileType, LabelSets};
use privstory_core::gateway::{
    bundle_fingerprint, CompletionProvider, GatewayError, ModelConfig, RawResponse, Recorder, ReplayStore,
};
use privstory_core::prompt::PromptBundle;
use privstory_core::run::RunDir;
use privstory_core::story::{render_story, StoryTriple};
use privstory_core::taxonomy::{Category, Taxonomy};

const SEED: u64 = 20_240_917;

struct App {
    key: &'static str,
    title: &'static str,
    blurb: &'static str,
    data_types: &'static [&'static str],
    purposes: &'static [&'static str],
}

const APPS: &[App] = &[
    App {
        key: "fitpulse",
        title: "FitPulse",
        blurb: "a workout tracker that logs runs, heart rate and training plans",
        data_types: &["Fitness Info", "Health Info", "Precise Location", "Name", "Email Address", "Usage Data", "Date of Birth"],
        purposes: &["App Functionality", "Usage Analytics", "Personalization", "Health Research", "Account Management", "Data Synchronization"],
    },
    App {
        key: "medinote",
        title: "MediNote",
        blurb: "a clinical note-taking tool for small practices",
        data_types: &["Medical Records", "Name", "Date of Birth", "Phone Number", "Files and Docs", "Account Credentials"],
        purposes: &["App Functionality", "Legal Compliance", "Customer Support", "Authentication", "Backup and Recovery", "Research"],
    },
    App {
        key: "shopcart",
        title: "ShopCart",
        blurb: "an online storefront with a mobile checkout",
        data_types: &["Payment Info", "Purchase History", "Address", "Email Address", "Name", "Device or Other IDs"],
        purposes: &["Payment Processing", "Targeted Advertising", "Fraud Prevention and Security", "Marketing Communications", "Analytics", "Account Creation"],
    },
    App {
        key: "chatter",
        title: "Chatter",
        blurb: "a group messaging app with voice notes",
        data_types: &["Other In-App Messages", "Contacts", "Photos", "Phone Number", "User IDs", "Voice or Sound Recordings"],
        purposes: &["Communication", "App Functionality", "Notifications", "Security Monitoring", "Backup and Recovery"],
    },
    App {
        key: "geotrail",
        title: "GeoTrail",
        blurb: "a hiking companion that records trails and points of interest",
        data_types: &["Precise Location", "Approximate Location", "Photos", "User IDs", "Diagnostics", "Crash Logs"],
        purposes: &["App Functionality", "Recommendations", "Performance Monitoring", "Advertising or Marketing", "Analytics"],
    },
    App {
        key: "photovault",
        title: "PhotoVault",
        blurb: "an encrypted photo and document backup service",
        data_types: &["Photos", "Videos", "Files and Docs", "Email Address", "Device or Other IDs", "Account Credentials"],
        purposes: &["Data Synchronization", "Backup and Recovery", "Authentication", "Developer Communications", "App Functionality"],
    },
    App {
        key: "budgetly",
        title: "Budgetly",
        blurb: "a personal budgeting app that links bank accounts",
        data_types: &["Payment Info", "Credit Score", "Other Financial Info", "Purchase History", "Email Address", "Usage Data"],
        purposes: &["App Functionality", "Personalization", "Identity Verification", "Analytics", "Transactions"],
    },
    App {
        key: "kidslearn",
        title: "KidsLearn",
        blurb: "a reading game for early learners with a parent dashboard",
        data_types: &["Name", "Date of Birth", "Voice or Sound Recordings", "App Interactions", "User-Generated Content", "Approximate Location"],
        purposes: &["Personalization", "Legal Compliance", "Usage Analytics", "App Functionality", "Notifications"],
    },
    App {
        key: "calmly",
        title: "Calmly",
        blurb: "a meditation and sleep app with guided sessions",
        data_types: &["Health Info", "Voice or Sound Recordings", "Calendar Events", "Email Address", "Usage Data", "In-App Search History"],
        purposes: &["Recommendations", "Notifications", "App Functionality", "Marketing Communications", "Analytics"],
    },
];

/// (app index, file name, expected type)
const FILES: &[(usize, &str, FileType)] = &[
    (0, "README.md", FileType::Readme),
    (0, "requirements_spec.md", FileType::SoftwareCodeSpec),
    (0, "user_guide.md", FileType::UserDeveloperGuide),
    (0, "database_schema.md", FileType::ArchitectureDbDesign),
    (1, "software_spec.md", FileType::SoftwareCodeSpec),
    (1, "developer_guide.md", FileType::UserDeveloperGuide),
    (1, "architecture.md", FileType::ArchitectureDbDesign),
    (2, "README.md", FileType::Readme),
    (2, "checkout_spec.md", FileType::SoftwareCodeSpec),
    (2, "api_guide.md", FileType::UserDeveloperGuide),
    (2, "data_model.md", FileType::ArchitectureDbDesign),
    (3, "messaging_spec.md", FileType::SoftwareCodeSpec),
    (3, "user_guide.md", FileType::UserDeveloperGuide),
    (3, "architecture.md", FileType::ArchitectureDbDesign),
    (4, "location_spec.md", FileType::SoftwareCodeSpec),
    (4, "user_manual.md", FileType::UserDeveloperGuide),
    (4, "uml_diagram.puml", FileType::ArchitectureDbDesign),
    (5, "sync_spec.md", FileType::SoftwareCodeSpec),
    (5, "faq_guide.md", FileType::UserDeveloperGuide),
    (5, "database_erd.md", FileType::ArchitectureDbDesign),
    (6, "requirements.md", FileType::SoftwareCodeSpec),
    (6, "developer_guide.md", FileType::UserDeveloperGuide),
    (7, "code_spec.md", FileType::SoftwareCodeSpec),
    (7, "parent_guide.md", FileType::UserDeveloperGuide),
    (8, "onboarding_guide.md", FileType::UserDeveloperGuide),
];

const INVENTED: &[&str] = &[
    "Browsing Habits",
    "Telemetry",
    "Wellness Score",
    "Social Graph",
    "Marketing Consent",
    "Session Tokens",
];

struct DocPlan {
    id: String,
    app: &'static App,
    file_type: FileType,
    gold: LabelSets,
    gold_stories: Vec<StoryTriple>,
    /// Stories in the first response; the first `matched` reproduce gold.
    first_len: usize,
    matched: usize,
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

fn plan(rng: &mut ChaCha8Rng) -> Vec<DocPlan> {
    let n = FILES.len();
    // Per-document sizes, shuffled so the totals come out exactly:
    // data types 10x3 + 15x2 = 60, purposes 11x3 + 14x2 = 61,
    // gold stories 18x4 + 7x3 = 93, first-response stories 20x5 + 5x4 = 120,
    // matched 7x3 + 18x2 = 57.
    let mut dt_sizes: Vec<usize> = [vec![3; 10], vec![2; 15]].concat();
    let mut p_sizes: Vec<usize> = [vec![3; 11], vec![2; 14]].concat();
    let mut story_sizes: Vec<usize> = [vec![4; 18], vec![3; 7]].concat();
    let mut first_sizes: Vec<usize> = [vec![5; 20], vec![4; 5]].concat();
    let mut matched: Vec<usize> = [vec![3; 7], vec![2; 18]].concat();
    for v in [&mut dt_sizes, &mut p_sizes, &mut story_sizes, &mut first_sizes, &mut matched] {
        v.shuffle(rng);
    }
    let actions = ["Collect", "Process", "Share"];
    (0..n)
        .map(|i| {
            let (app_idx, file, file_type) = FILES[i];
            let app = &APPS[app_idx];
            let a = pick(rng, &actions, 2);
            let d = pick(rng, app.data_types, dt_sizes[i]);
            let p = pick(rng, app.purposes, p_sizes[i]);
            let mut stories: Vec<StoryTriple> = Vec::new();
            let mut keys = HashSet::new();
            while stories.len() < story_sizes[i] {
                let action = a[rng.gen_range(0..a.len())];
                let nd = if d.len() > 1 && rng.gen_bool(0.3) { 2 } else { 1 };
                let np = if p.len() > 1 && rng.gen_bool(0.15) { 2 } else { 1 };
                let s = StoryTriple::new(action, pick(rng, &d, nd), pick(rng, &p, np));
                if keys.insert(s.match_key()) {
                    stories.push(s);
                }
            }
            DocPlan {
                id: format!("{}/{}", app.key, file),
                app,
                file_type,
                gold: LabelSets {
                    actions: a.iter().map(|s| s.to_string()).collect(),
                    data_types: d.iter().map(|s| s.to_string()).collect(),
                    purposes: p.iter().map(|s| s.to_string()).collect(),
                },
                gold_stories: stories,
                first_len: first_sizes[i],
                matched: matched[i].min(story_sizes[i]),
            }
        })
        .collect()
}

fn lower_list(items: &[String]) -> String {
    let l: Vec<String> = items.iter().map(|s| s.to_lowercase()).collect();
    match l.as_slice() {
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
        [] => String::new(),
    }
}

fn sentence(rng: &mut ChaCha8Rng, app: &App, s: &StoryTriple) -> String {
    let verb = match s.action.as_str() {
        "Collect" => ["collects", "records", "asks for"][rng.gen_range(0..3)],
        "Process" => ["processes", "analyzes", "computes statistics over"][rng.gen_range(0..3)],
        _ => ["shares", "sends", "forwards"][rng.gen_range(0..3)],
    };
    let to = if s.action == "Share" { " to partner services" } else { "" };
    let why = ["for", "to support", "in order to provide"][rng.gen_range(0..3)];
    format!(
        "{} {verb} the user's {}{to} {why} {}.",
        app.title,
        lower_list(&s.data_types),
        lower_list(&s.purposes)
    )
}

fn document_text(rng: &mut ChaCha8Rng, d: &DocPlan) -> String {
    let app = d.app;
    let sentences: Vec<String> = d.gold_stories.iter().map(|s| sentence(rng, app, s)).collect();
    match d.file_type {
        FileType::Readme => {
            let mut t = format!(
                "# {}\n\n{} is {}.\n\n## Features\n\n- Offline mode\n- Dark theme\n- Export to CSV\n\n## Privacy\n\n",
                app.title, app.title, app.blurb
            );
            for s in &sentences {
                t.push_str(&format!("- {s}\n"));
            }
            t.push_str("\n## Building\n\nRun `make build` and open the generated bundle.\n");
            t
        }
        FileType::SoftwareCodeSpec => {
            let mut t = format!(
                "# {} Software Requirements\n\n## 1. Scope\n\nThis specification covers {}.\n\n## 2. Functional Requirements\n\n",
                app.title, app.blurb
            );
            for (i, s) in sentences.iter().enumerate() {
                t.push_str(&format!(
                    "FR-{}: The system shall behave as follows. {s}\n\n",
                    i + 1
                ));
            }
            t.push_str("## 3. Non-functional Requirements\n\nNFR-1: Screens load within two seconds on mid-range devices.\n");
            t
        }
        FileType::UserDeveloperGuide => {
            let mut t = format!(
                "# {} Guide\n\nWelcome to {}, {}.\n\n## Getting started\n\n1. Install the app.\n2. Create an account.\n3. Follow the setup wizard.\n\n## What happens to your data\n\n",
                app.title, app.title, app.blurb
            );
            for s in &sentences {
                t.push_str(&format!("{s} "));
            }
            t.push_str("\n\n## Troubleshooting\n\nRestart the app if synchronization stalls.\n");
            t
        }
        FileType::ArchitectureDbDesign => {
            if d.id.ends_with(".puml") {
                let mut t = format!("@startuml\ntitle {} components\npackage \"Mobile client\" {{\n  [UI]\n  [Local cache]\n}}\npackage \"Backend\" {{\n  [API gateway]\n  [Storage]\n}}\n", app.title);
                for s in &sentences {
                    t.push_str(&format!("note right of [API gateway]\n  {s}\nend note\n"));
                }
                t.push_str("[UI] --> [API gateway]\n[API gateway] --> [Storage]\n@enduml\n");
                t
            } else {
                let mut t = format!(
                    "# {} Architecture and Data Model\n\n| Component | Responsibility |\n|---|---|\n| api | request routing |\n| store | persistence |\n| worker | background jobs |\n\n## Data flows\n\n",
                    app.title
                );
                for (i, s) in sentences.iter().enumerate() {
                    t.push_str(&format!("{}. {s}\n", i + 1));
                }
                t
            }
        }
    }
}

/// A story that matches no gold story of the document.
fn unmatched_story(
    rng: &mut ChaCha8Rng,
    t: &Taxonomy,
    d: &DocPlan,
    taken: &mut HashSet<String>,
) -> (String, bool) {
    let gold_keys: HashSet<_> = d.gold_stories.iter().map(|s| s.match_key()).collect();
    loop {
        let base = d.gold_stories[rng.gen_range(0..d.gold_stories.len())].clone();
        let kind = rng.gen_range(0..4);
        let line = if kind == 3 {
            format!(
                "We {} {} for {}.",
                base.action.to_lowercase(),
                INVENTED[rng.gen_range(0..INVENTED.len())],
                base.purposes[0]
            )
        } else {
            let mut s = base.clone();
            match kind {
                0 => s.purposes = vec![d.app.purposes[rng.gen_range(0..d.app.purposes.len())].to_string()],
                1 => s.action = ["Collect", "Process", "Share"][rng.gen_range(0..3)].to_string(),
                _ => {
                    let id = t.find_in(&s.data_types[0], Category::DataType).unwrap();
                    let node = t.node(id).unwrap();
                    let parent = node.parent.filter(|p| !t.node(*p).unwrap().is_root());
                    let alt = match parent {
                        Some(p) if rng.gen_bool(0.5) => t.name(p).to_string(),
                        _ => d.app.data_types[rng.gen_range(0..d.app.data_types.len())].to_string(),
                    };
                    s.data_types[0] = alt;
                }
            }
            if gold_keys.contains(&s.match_key()) {
                continue;
            }
            render_story(t, &s).unwrap()
        };
        if taken.insert(line.clone()) {
            return (line, kind == 3);
        }
    }
}

/// Gold labels with a few realistic mistakes.
fn noisy_labels(rng: &mut ChaCha8Rng, t: &Taxonomy, d: &DocPlan) -> BTreeMap<Category, Vec<String>> {
    let mut out: BTreeMap<Category, Vec<String>> = Category::ALL
        .iter()
        .map(|&c| (c, d.gold.get(c).iter().cloned().collect()))
        .collect();
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..5) {
            0 => {
                let dts = out.get_mut(&Category::DataType).unwrap();
                if dts.len() > 1 {
                    let i = rng.gen_range(0..dts.len());
                    dts.remove(i);
                }
            }
            1 => {
                let dts = out.get_mut(&Category::DataType).unwrap();
                let i = rng.gen_range(0..dts.len());
                let Some(id) = t.find_in(&dts[i], Category::DataType) else { continue };
                let node = t.node(id).unwrap();
                if let Some(&c) = node.children.first() {
                    dts[i] = t.name(c).to_string();
                } else if let Some(p) = node.parent.filter(|p| !t.node(*p).unwrap().is_root()) {
                    dts[i] = t.name(p).to_string();
                }
            }
            2 => {
                let ps = out.get_mut(&Category::Purpose).unwrap();
                let extra = d.app.purposes[rng.gen_range(0..d.app.purposes.len())].to_string();
                if !ps.contains(&extra) {
                    ps.push(extra);
                }
            }
            3 => out
                .get_mut(&Category::DataType)
                .unwrap()
                .push(INVENTED[rng.gen_range(0..INVENTED.len())].to_string()),
            _ => {
                let acts = out.get_mut(&Category::Action).unwrap();
                if acts.len() < 3 && rng.gen_bool(0.5) {
                    for a in ["Collect", "Process", "Share"] {
                        if !acts.iter().any(|x| x == a) {
                            acts.push(a.to_string());
                            break;
                        }
                    }
                } else {
                    // a purpose listed under data types
                    out.get_mut(&Category::DataType)
                        .unwrap()
                        .push(d.gold.purposes.iter().next().unwrap().clone());
                }
            }
        }
    }
    out
}

fn response_text(
    style: usize,
    labels: &BTreeMap<Category, Vec<String>>,
    stories: &[String],
    rationale: &str,
) -> String {
    let tags = [("ACTIONS", Category::Action), ("DATA_TYPES", Category::DataType), ("PURPOSES", Category::Purpose)];
    let mut body = String::new();
    for (tag, cat) in tags {
        let items = &labels[&cat];
        let tag = if style == 1 { tag.to_lowercase() } else { tag.to_string() };
        let inner = match style {
            1 => items
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{}. {l}", i + 1))
                .collect::<Vec<_>>()
                .join("\n"),
            2 => items.join(", "),
            _ => items.iter().map(|l| format!("- {l}")).collect::<Vec<_>>().join("\n"),
        };
        body.push_str(&format!("<{tag}>\n{inner}\n</{tag}>\n"));
    }
    let story_tag = if style == 1 { "stories" } else { "STORIES" };
    body.push_str(&format!(
        "<{story_tag}>\n{}\n</{story_tag}>\n",
        stories.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    ));
    let r = format!("<R>\n{rationale}\n</R>\n");
    match style {
        3 => format!("{r}{body}\nLet me know if you need changes."),
        0 => format!("Here is the annotation.\n\n{body}{r}"),
        _ => format!("{body}{r}"),
    }
}

struct Scripted {
    config: ModelConfig,
    texts: BTreeMap<(String, u32), String>,
}

impl CompletionProvider for Scripted {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn complete(&self, bundle: &PromptBundle, response_index: u32) -> Result<RawResponse, GatewayError> {
        let text = self.texts[&(bundle.document_id.clone(), response_index)].clone();
        Ok(RawResponse {
            document_id: bundle.document_id.clone(),
            response_index,
            request_fingerprint: bundle_fingerprint(bundle, &self.config, response_index),
            model_name: self.config.model_name.clone(),
            text,
            latency_ms: None,
            prompt_tokens: None,
            completion_tokens: None,
            attempt: 1,
        })
    }
}

const CONFIG: &str = r#"run_id = "fixture"

[corpus]
root = "corpus"
gold = "gold.json"

[model]
provider_kind = "replay"
model_name = "fixture-model"

[annotate]
responses_per_document = 2
replay_store = "replay"

[export]
split = { kind = "seeded", heldout_count = 10, seed = 2024 }
"#;

fn main() -> Result<()> {
    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    for sub in ["corpus", "replay"] {
        let p = out.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p)?;
        }
    }
    std::fs::create_dir_all(&out)?;
    let t = Taxonomy::load_default();
    for name in INVENTED {
        ensure!(t.find_label(name).is_none(), "`{name}` is a real label");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let docs = plan(&mut rng);

    let mut gold_json = Vec::new();
    for d in &docs {
        let path = out.join("corpus").join(&d.id);
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(&path, document_text(&mut rng, d))?;
        gold_json.push(json!({
            "document_id": d.id,
            "actions": d.gold.actions,
            "data_types": d.gold.data_types,
            "purposes": d.gold.purposes,
            "stories": d.gold_stories.iter().map(|s| render_story(&t, s).unwrap()).collect::<Vec<_>>(),
        }));
    }
    std::fs::write(out.join("gold.json"), serde_json::to_string_pretty(&gold_json)? + "\n")?;
    std::fs::write(out.join("privstory.toml"), CONFIG)?;

    let mut texts = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        let mut taken = HashSet::new();
        let mut first = Vec::new();
        for s in &d.gold_stories[..d.matched] {
            let mut s = s.clone();
            s.data_types.reverse();
            let line = render_story(&t, &s).unwrap();
            taken.insert(line.clone());
            first.push(line);
        }
        while first.len() < d.first_len {
            first.push(unmatched_story(&mut rng, &t, d, &mut taken).0);
        }
        first.shuffle(&mut rng);
        let mut second: Vec<String> = d.gold_stories[..d.matched.saturating_sub(1).max(1)]
            .iter()
            .map(|s| render_story(&t, s).unwrap())
            .collect();
        let mut taken2: HashSet<String> = second.iter().cloned().collect();
        for _ in 0..2 {
            second.push(unmatched_story(&mut rng, &t, d, &mut taken2).0);
        }
        let rationale = format!(
            "The {} describes how {} handles personal data, for example: \"{}\"",
            d.file_type.title(),
            d.app.title,
            d.gold_stories[0].data_types.join(", ")
        );
        let l0 = noisy_labels(&mut rng, &t, d);
        let l1 = noisy_labels(&mut rng, &t, d);
        texts.insert((d.id.clone(), 0), response_text(i % 4, &l0, &first, &rationale));
        texts.insert(
            (d.id.clone(), 1),
            response_text((i + 1) % 4, &l1, &second, &format!("{rationale} Second pass.")),
        );
    }

    let cfg = RunConfig::load(&out.join("privstory.toml"))?;
    let store = Arc::new(ReplayStore::open(out.join("replay"))?);
    let recorder = Recorder::new(
        Scripted {
            config: cfg.model.clone(),
            texts,
        },
        store.clone(),
    );
    let tmp = tempfile::tempdir()?;
    let run = RunDir::new(tmp.path().join("fixture"));
    let manifest = pipeline::ingest(&cfg, &run)?;
    let by_type = manifest.count_by_type();
    for (_, _, ft) in FILES {
        let want = FILES.iter().filter(|f| f.2 == *ft).count();
        ensure!(by_type.get(ft) == Some(&want), "{ft:?}: {:?} vs {want}", by_type.get(ft));
    }
    for d in &docs {
        ensure!(manifest.document(&d.id).unwrap().file_type == d.file_type, "{} misclassified", d.id);
    }
    let summary = pipeline::annotate(&cfg, &run, ProviderChoice::Custom(&recorder))?;
    ensure!(summary.stories == 120, "first responses carry {} stories", summary.stories);

    let totals: Vec<usize> = Category::ALL
        .iter()
        .map(|&c| docs.iter().map(|d| d.gold.get(c).len()).sum())
        .collect();
    let gold_stories: usize = docs.iter().map(|d| d.gold_stories.len()).sum();
    let matched: usize = docs.iter().map(|d| d.matched).sum();
    ensure!(totals == vec![50, 60, 61], "gold label totals {totals:?}");
    ensure!(gold_stories == 93 && matched == 57, "{gold_stories} gold stories, {matched} matched");

    let report = pipeline::evaluate(&cfg, &run)?;
    let types: BTreeSet<_> = docs.iter().map(|d| d.file_type).collect();
    println!(
        "fixture written to {} ({} documents, {} types, {} recorded responses, overall F1 {:.3})",
        out.display(),
        docs.len(),
        types.len(),
        store.len(),
        report.overall_macro.f1
    );
    Ok(())
}
