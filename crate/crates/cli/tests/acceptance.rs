//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use privstory::config::RunConfig;
use privstory::pipeline::{self, ProviderChoice};
use privstory_core::corpus::{Document, FileType, GoldAnnotation, LabelSets, Manifest};
use privstory_core::embedding::{select_icl_example, EmbeddingError, EmbeddingProvider, TfIdfEmbedder};
use privstory_core::evaluator::score_category;
use privstory_core::parser::{extract_sections, parse_response, render_gold, split_label_section, Section};
use privstory_core::review::{aggregate_review, Judgment, ReviewStore};
use privstory_core::run::{RunData, RunDir, REPORT_CSV, REPORT_JSON};
use privstory_core::story::{parse_story, render_story, StoryTriple};
use privstory_core::taxonomy::{Category, LabelEdge, Taxonomy};
use privstory_core::text::normalize_name;
use privstory_core::Rational;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_config() -> RunConfig {
    RunConfig::load(&fixtures().join("privstory.toml")).expect("fixture config")
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn names(t: &Taxonomy, cat: Category) -> Vec<String> {
    t.labels(cat).into_iter().map(|id| t.name(id).to_string()).collect()
}

fn sample(rng: &mut ChaCha8Rng, pool: &[String], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi.min(pool.len()));
    pool.choose_multiple(rng, n).cloned().collect()
}

fn random_triple(rng: &mut ChaCha8Rng, t: &Taxonomy) -> StoryTriple {
    let actions = names(t, Category::Action);
    StoryTriple::new(
        actions.choose(rng).unwrap().clone(),
        sample(rng, &names(t, Category::DataType), 1, 4),
        sample(rng, &names(t, Category::Purpose), 1, 3),
    )
}

// ---- 1 ----------------------------------------------------------------

fn worked_credit() -> Outcome {
    let t = Taxonomy::load_default();
    let p = t.find_in("Usage Data", Category::DataType).ok_or("Usage Data missing")?;
    let g = t.find_in("App Interactions", Category::DataType).ok_or("App Interactions missing")?;
    let credit = t.credit(p, g).map_err(|e| e.to_string())?;
    ensure!(credit == rat(1, 2), "credit {credit}");
    let s = score_category(&[p], &[g], Category::DataType, &t).map_err(|e| e.to_string())?;
    ensure!(
        s.score.precision == rat(1, 2) && s.score.recall == rat(1, 2) && s.score.f1 == rat(1, 2),
        "P/R/F1 {:?}",
        s.score
    );
    Ok(format!("credit = {credit}"))
}

// ---- 2 ----------------------------------------------------------------

struct RandomTree {
    t: Taxonomy,
    parent: HashMap<String, Option<String>>,
    by_cat: HashMap<Category, Vec<String>>,
}

fn random_tree(rng: &mut ChaCha8Rng, case: usize) -> RandomTree {
    // three synthetic roots plus at most 17 labels
    let n = rng.gen_range(1..=17);
    let mut parent = HashMap::new();
    let mut by_cat: HashMap<Category, Vec<String>> = HashMap::new();
    let mut edges = Vec::new();
    for i in 0..n {
        let cat = Category::ALL[rng.gen_range(0..3)];
        let name = format!("c{case} n{i}");
        let existing = by_cat.entry(cat).or_default();
        let p = if existing.is_empty() || rng.gen_bool(0.3) {
            None
        } else {
            Some(existing[rng.gen_range(0..existing.len())].clone())
        };
        existing.push(name.clone());
        parent.insert(name.clone(), p.clone());
        edges.push(LabelEdge {
            name,
            category: cat,
            parent: p,
        });
    }
    edges.shuffle(rng);
    RandomTree {
        t: Taxonomy::from_edges(format!("random-{case}"), edges).expect("valid random taxonomy"),
        parent,
        by_cat,
    }
}

fn oracle_credit(parent: &HashMap<String, Option<String>>, a: &str, b: &str) -> Rational {
    let chain = |x: &str| {
        let mut v = vec![x.to_string()];
        while let Some(Some(p)) = parent.get(v.last().unwrap()) {
            v.push(p.clone());
        }
        v
    };
    let d = chain(a)
        .iter()
        .position(|x| x == b)
        .or_else(|| chain(b).iter().position(|x| x == a));
    match d {
        Some(d) => rat(1, 1 + d as i64),
        None => Rational::zero(),
    }
}

fn best_pairing(w: &[Vec<Rational>], i: usize, used: &mut Vec<bool>) -> Rational {
    if i == w.len() {
        return Rational::zero();
    }
    let mut best = best_pairing(w, i + 1, used);
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            let v = &w[i][j] + best_pairing(w, i + 1, used);
            used[j] = false;
            if v > best {
                best = v;
            }
        }
    }
    best
}

fn scorer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonzero = 0;
    for case in 0..200 {
        let tree = random_tree(&mut rng, case);
        let cats: Vec<Category> = Category::ALL.into_iter().filter(|c| tree.by_cat.contains_key(c)).collect();
        let cat = *cats.choose(&mut rng).unwrap();
        let pool = tree.by_cat[&cat].clone();
        let pred = sample(&mut rng, &pool, 0, 6);
        let gold = sample(&mut rng, &pool, 0, 6);
        let ids = |v: &[String]| -> Vec<_> { v.iter().map(|n| tree.t.find_in(n, cat).unwrap()).collect() };
        let got = score_category(&ids(&pred), &ids(&gold), cat, &tree.t).map_err(|e| e.to_string())?;

        let w: Vec<Vec<Rational>> = pred
            .iter()
            .map(|p| gold.iter().map(|g| oracle_credit(&tree.parent, p, g)).collect())
            .collect();
        let sum = best_pairing(&w, 0, &mut vec![false; gold.len()]);
        ensure!(
            got.score.credit_sum == sum,
            "case {case}: credit {} vs brute force {sum}",
            got.score.credit_sum
        );
        if !sum.is_zero() {
            nonzero += 1;
        }
        let s = sum.to_f64().unwrap();
        let p = if pred.is_empty() { 0.0 } else { s / pred.len() as f64 };
        let r = if gold.is_empty() { 0.0 } else { s / gold.len() as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        for (name, want, have) in [
            ("precision", p, &got.score.precision),
            ("recall", r, &got.score.recall),
            ("f1", f, &got.score.f1),
        ] {
            let have = have.to_f64().unwrap();
            ensure!((want - have).abs() <= 1e-12, "case {case}: {name} {have} vs {want}");
        }
    }
    Ok(format!("200 instances, {nonzero} with positive credit"))
}

// ---- 3 ----------------------------------------------------------------

fn privstory(args: &[&str], run_dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_privstory"))
        .arg("--config")
        .arg(fixtures().join("privstory.toml"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .env_remove("PRIVSTORY_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`privstory {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn replay_determinism() -> Outcome {
    let mut outputs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    let mut overall = String::new();
    for _ in 0..3 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = tmp.path().join("run");
        privstory(&["ingest"], &run)?;
        privstory(&["--replay", "annotate"], &run)?;
        privstory(&["evaluate"], &run)?;
        let json = std::fs::read(run.join(REPORT_JSON)).map_err(|e| e.to_string())?;
        let csv = std::fs::read(run.join(REPORT_CSV)).map_err(|e| e.to_string())?;
        let parsed = std::fs::read_dir(run.join("parsed")).map_err(|e| e.to_string())?.count();
        ensure!(parsed == 25, "{parsed} parsed files");
        let v: serde_json::Value = serde_json::from_slice(&json).map_err(|e| e.to_string())?;
        overall = format!("overall macro F1 {}", v["overall_macro"]["f1"]);
        outputs.push((json, csv));
    }
    ensure!(outputs[0] == outputs[1] && outputs[1] == outputs[2], "reports differ between runs");
    Ok(format!("3 runs byte-identical, {overall}"))
}

// ---- 4 ----------------------------------------------------------------

fn random_gold(rng: &mut ChaCha8Rng, t: &Taxonomy, i: usize) -> GoldAnnotation {
    let mut labels = LabelSets::default();
    for cat in Category::ALL {
        *labels.get_mut(cat) = sample(rng, &names(t, cat), 0, 5).into_iter().collect();
    }
    let mut stories = Vec::new();
    let mut keys = HashSet::new();
    for _ in 0..rng.gen_range(0..6) {
        let s = random_triple(rng, t);
        if keys.insert(s.match_key()) {
            stories.push(s);
        }
    }
    GoldAnnotation {
        document_id: format!("doc-{i}"),
        labels,
        stories,
    }
}

const JUNK: &[&str] = &[
    "Browsing Habits",
    "telemetry",
    "N/A",
    "user stuff",
    "Biometric Data Points",
    "???",
    "Location-ish",
    "[Data type]",
];

fn adversarial_response(rng: &mut ChaCha8Rng, t: &Taxonomy) -> String {
    let all: Vec<String> = Category::ALL.iter().flat_map(|&c| names(t, c)).collect();
    let mut out = String::new();
    if rng.gen_bool(0.5) {
        out.push_str("Sure! Here you go:\n");
    }
    for tag in ["ACTIONS", "DATA_TYPES", "PURPOSES", "STORIES", "R"] {
        if rng.gen_bool(0.2) {
            continue;
        }
        let tag = if rng.gen_bool(0.3) { tag.to_lowercase() } else { tag.to_string() };
        out.push_str(&format!("<{tag}>\n"));
        for _ in 0..rng.gen_range(0..7) {
            let mut item = match rng.gen_range(0..4) {
                0 => JUNK.choose(rng).unwrap().to_string(),
                1 | 2 => all.choose(rng).unwrap().clone(),
                _ => format!(
                    "{}, {}",
                    all.choose(rng).unwrap(),
                    JUNK.choose(rng).unwrap()
                ),
            };
            if rng.gen_bool(0.2) {
                item = item.to_uppercase();
            }
            let marker = ["- ", "* ", "1. ", "", "  "][rng.gen_range(0..5)];
            out.push_str(&format!("{marker}{item}\n"));
        }
        if !rng.gen_bool(0.15) {
            out.push_str(&format!("</{tag}>\n"));
        }
    }
    out
}

fn parser_round_trip() -> Outcome {
    let t = Taxonomy::load_default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let gold = random_gold(&mut rng, &t, i);
        let text = render_gold(&t, &gold).map_err(|e| e.to_string())?;
        let parsed = parse_response(&gold.document_id, 0, &text, &t);
        ensure!(parsed.matched == gold.labels, "gold {i}: labels {:?} vs {:?}", parsed.matched, gold.labels);
        ensure!(parsed.hallucinated.total() == 0, "gold {i}: hallucinated {:?}", parsed.hallucinated);
        let stories: Vec<Option<StoryTriple>> = parsed.stories.iter().map(|s| s.triple.clone()).collect();
        let want: Vec<Option<StoryTriple>> = gold.stories.iter().map(|s| Some(s.clone())).collect();
        ensure!(stories == want, "gold {i}: stories {stories:?} vs {want:?}");
    }

    let mut extracted_total = 0;
    for i in 0..100 {
        let text = adversarial_response(&mut rng, &t);
        let parsed = parse_response("adv", 0, &text, &t);
        let sections = extract_sections(&text);
        for cat in Category::ALL {
            let mut seen = HashSet::new();
            let extracted: Vec<String> = sections
                .section(Section::for_category(cat))
                .map(|b| split_label_section(&b, &t))
                .unwrap_or_default()
                .into_iter()
                .filter(|l| seen.insert(normalize_name(l)))
                .collect();
            extracted_total += extracted.len();
            let resolved: BTreeSet<String> = extracted
                .iter()
                .filter_map(|l| t.find_in(l, cat))
                .map(|id| t.name(id).to_string())
                .collect();
            let unresolved: Vec<String> = extracted.iter().filter(|l| t.find_in(l, cat).is_none()).cloned().collect();
            let matched = parsed.matched.get(cat);
            let halluc = parsed.hallucinated.get(cat);
            ensure!(matched == &resolved, "response {i} {cat}: matched {matched:?} vs {resolved:?}");
            ensure!(halluc == &unresolved, "response {i} {cat}: hallucinated {halluc:?} vs {unresolved:?}");
            ensure!(
                extracted.len() == unresolved.len() + extracted.iter().filter(|l| t.find_in(l, cat).is_some()).count(),
                "response {i} {cat}: labels lost"
            );
            let m: HashSet<String> = matched.iter().map(|l| normalize_name(l)).collect();
            ensure!(
                halluc.iter().all(|h| t.find_in(h, cat).is_none() && !m.contains(&normalize_name(h))),
                "response {i} {cat}: overlap between matched and hallucinated"
            );
        }
    }
    Ok(format!("100 golds round-trip, 100 adversarial responses ({extracted_total} labels) partitioned"))
}

// ---- 5 ----------------------------------------------------------------

fn story_round_trip() -> Outcome {
    let t = Taxonomy::load_default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..500 {
        let s = random_triple(&mut rng, &t);
        let line = render_story(&t, &s).map_err(|e| e.to_string())?;
        let back = parse_story(&line, &t);
        ensure!(back.as_ref() == Some(&s), "triple {i}: `{line}` parsed as {back:?}");
    }
    Ok("500 triples".into())
}

// ---- 6 ----------------------------------------------------------------

const WORDS: &[&str] = &["location", "photos", "email", "payment", "sync", "backup", "ads", "crash"];

fn brute_cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (nu > 0.0 && nv > 0.0).then(|| dot / (nu * nv))
}

fn icl_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0;
    for case in 0..50 {
        let n = rng.gen_range(2..=10);
        let mut texts: Vec<String> = Vec::new();
        for _ in 0..n {
            if !texts.is_empty() && rng.gen_bool(0.25) {
                let dup = texts.choose(&mut rng).unwrap().clone();
                texts.push(dup);
            } else {
                let k = rng.gen_range(1..=5);
                texts.push((0..k).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "));
            }
        }
        let mut ids: Vec<String> = (0..n).map(|i| format!("app/doc{i:02}.md")).collect();
        ids.shuffle(&mut rng);
        let documents: Vec<Document> = ids
            .iter()
            .zip(&texts)
            .map(|(id, text)| Document {
                id: id.clone(),
                path: PathBuf::from(id),
                file_type: FileType::Readme,
                app_name: None,
                text: text.clone(),
            })
            .collect();
        let gold = documents.iter().filter(|_| rng.gen_bool(0.7)).map(|d| GoldAnnotation {
            document_id: d.id.clone(),
            ..Default::default()
        });
        let pool = Manifest {
            documents: documents.clone(),
            ..Default::default()
        }
        .with_gold(gold.collect::<Vec<_>>(), "v");
        let emb = TfIdfEmbedder::fit(texts.iter().map(String::as_str));
        let target = &documents[rng.gen_range(0..n)];
        let got = select_icl_example(target, &pool, &emb);

        let tv = emb.embed(&target.text).map_err(|e| e.to_string())?;
        let mut best: Option<(f64, &str)> = None;
        let mut scores = Vec::new();
        for d in &pool.documents {
            if d.id == target.id || !pool.gold.contains_key(&d.id) {
                continue;
            }
            let dv = emb.embed(&d.text).map_err(|e| e.to_string())?;
            let c = brute_cosine(tv.values(), dv.values()).unwrap_or(f64::NEG_INFINITY);
            scores.push(c);
            let better = match best {
                None => true,
                Some((bc, bid)) => c > bc || (c == bc && d.id.as_str() < bid),
            };
            if better {
                best = Some((c, &d.id));
            }
        }
        if let Some((bc, _)) = best {
            if scores.iter().filter(|&&c| c == bc).count() > 1 {
                ties += 1;
            }
        }
        match (best, got) {
            (None, Err(EmbeddingError::EmptyPool(_))) => {}
            (Some((_, want)), Ok(got)) => {
                ensure!(got != target.id, "case {case}: returned the target");
                ensure!(got == want, "case {case}: selected {got}, brute force {want}");
            }
            (want, got) => return Err(format!("case {case}: expected {want:?}, got {got:?}")),
        }
    }
    Ok(format!("50 pools, {ties} with tied best scores"))
}

// ---- 7 ----------------------------------------------------------------

fn replayed_run(dir: &Path) -> Result<(RunConfig, RunDir), String> {
    let cfg = fixture_config();
    let run = RunDir::new(dir.join("run"));
    pipeline::ingest(&cfg, &run).map_err(|e| format!("{e:#}"))?;
    pipeline::annotate(&cfg, &run, ProviderChoice::Configured { force_replay: true }).map_err(|e| format!("{e:#}"))?;
    Ok((cfg, run))
}

fn review_aggregation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, run) = replayed_run(tmp.path())?;
    let data = RunData::load(&run).map_err(|e| e.to_string())?;
    let store =
        ReviewStore::open_with_clock(tmp.path().join("review"), Box::new(|| 1_700_000_000_000)).map_err(|e| e.to_string())?;
    let a = store.create_session(&data, "annotator-a").map_err(|e| e.to_string())?;
    let b = store.create_session(&data, "annotator-b").map_err(|e| e.to_string())?;
    ensure!(a.items.len() == 120, "{} stories to review", a.items.len());
    // 41 both yes, 47 exactly one yes (alternating), 32 both no
    for (k, item) in a.items.iter().enumerate() {
        let (ya, yb) = match k {
            0..41 => (true, true),
            41..88 => (k % 2 == 0, k % 2 == 1),
            _ => (false, false),
        };
        for (sid, yes) in [(&a.session_id, ya), (&b.session_id, yb)] {
            let j = Judgment::Story {
                document_id: item.document_id.clone(),
                story_index: item.story_index,
                q1_accurate: yes,
                q2_missing_behaviors: false,
            };
            store.record(sid, &j).map_err(|e| e.to_string())?;
        }
    }
    let report = aggregate_review(&data, &store.sessions_for_run(data.run_id())).map_err(|e| e.to_string())?;
    let o = &report.overall;
    ensure!(o.stories == 120, "stories {}", o.stories);
    ensure!(o.both_yes == 41, "both {}", o.both_yes);
    ensure!(o.at_least_one_yes == 88, "at least one {}", o.at_least_one_yes);
    ensure!(report.gold_stories == 93, "gold stories {}", report.gold_stories);
    ensure!(report.missing_gold_count() == 36, "missing {}", report.missing_gold_count());
    Ok(format!(
        "both {}/{}, at least one {}/{}, missing {}/{}",
        o.both_yes,
        o.stories,
        o.at_least_one_yes,
        o.stories,
        report.missing_gold_count(),
        report.gold_stories
    ))
}

// ---- 8 ----------------------------------------------------------------

fn export_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = fixture_config();
    let run = RunDir::new(tmp.path().join("run"));
    let manifest = pipeline::ingest(&cfg, &run).map_err(|e| format!("{e:#}"))?;
    let out = pipeline::export_sft(&cfg, &run).map_err(|e| format!("{e:#}"))?;
    ensure!(manifest.documents.len() == 25, "{} documents", manifest.documents.len());
    ensure!(out.heldout.len() == 10, "{} held out", out.heldout.len());

    let t = Taxonomy::load_default();
    let lines = std::fs::read_to_string(run.path(privstory_core::run::SFT_FILE)).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    let mut count = 0;
    for line in lines.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let id = rec["document_id"].as_str().ok_or("record without document_id")?;
        let completion = rec["completion"].as_str().ok_or("record without completion")?;
        ensure!(!out.heldout.iter().any(|h| h == id), "held-out {id} exported");
        let gold = manifest.gold_for(id).ok_or(format!("no gold for {id}"))?;
        let parsed = parse_response(id, 0, completion, &t);
        ensure!(parsed.matched == gold.labels, "{id}: labels differ");
        ensure!(parsed.hallucinated.total() == 0, "{id}: unmatched labels");
        ensure!(parsed.valid_stories() == gold.stories, "{id}: stories differ");
        ensure!(parsed.malformed_stories().is_empty(), "{id}: malformed stories");
        seen.insert(id.to_string());
        count += 1;
    }
    ensure!(count == 15 && seen.len() == 15, "{count} train records");
    Ok(format!("{count} train records round-trip, {} held out", out.heldout.len()))
}

// ---- harness ----------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("hierarchical credit worked example", Duration::from_secs(1), worked_credit),
        ("scorer matches brute-force oracle", Duration::from_secs(10), scorer_oracle),
        ("replay determinism over fixture corpus", Duration::from_secs(30), replay_determinism),
        ("parser conservation and round trip", Duration::from_secs(10), parser_round_trip),
        ("story round trip", Duration::from_secs(5), story_round_trip),
        ("in-context example selection", Duration::from_secs(5), icl_selection),
        ("review aggregation arithmetic", Duration::from_secs(1), review_aggregation),
        ("training export round trip", Duration::from_secs(10), export_round_trip),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({elapsed:.2?})");
            }
        }
    }
    println!("SKIP  live smoke run against a hosted model: manual check, needs PRIVSTORY_API_KEY");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
