//! Hierarchical precision / recall / F1 over taxonomy labels.
//!
//! A predicted label earns `1 / (1 + d)` against a gold label on the same
//! ancestor chain at distance `d`. Predictions and gold labels are paired
//! one-to-one so that total credit is maximal.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::corpus::{FileType, GoldAnnotation, Manifest};
use crate::par::Exec;
use crate::parser::ParsedAnnotation;
use crate::story::StoryTriple;
use crate::taxonomy::{Category, NodeId, Taxonomy, TaxonomyError};
use crate::Rational;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("`{label}` is not a {category} label")]
    UnknownLabel { category: Category, label: String },
    #[error("node `{name}` is a {found} label, expected {expected}")]
    CategoryMismatch {
        name: String,
        expected: Category,
        found: Category,
    },
    #[error("document `{0}` is not in the manifest")]
    UnknownDocument(String),
    #[error("document `{0}` has no gold annotation")]
    MissingGold(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Count unmatched (hallucinated) labels as predictions, lowering precision.
    pub count_hallucinated_in_precision: bool,
}

/// Precision, recall and F1 from a credit sum and two counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prf {
    pub credit_sum: Rational,
    pub predictions: usize,
    pub gold: usize,
    pub precision: Rational,
    pub recall: Rational,
    pub f1: Rational,
}

fn ratio(num: &Rational, den: usize) -> Rational {
    if den == 0 {
        Rational::zero()
    } else {
        num / Rational::from_integer(BigInt::from(den))
    }
}

pub fn f1_of(p: &Rational, r: &Rational) -> Rational {
    let sum = p + r;
    if sum.is_zero() {
        Rational::zero()
    } else {
        Rational::from_integer(BigInt::from(2)) * p * r / sum
    }
}

impl Prf {
    pub fn from_counts(credit_sum: Rational, predictions: usize, gold: usize) -> Self {
        let precision = ratio(&credit_sum, predictions);
        let recall = ratio(&credit_sum, gold);
        let f1 = f1_of(&precision, &recall);
        Prf {
            credit_sum,
            predictions,
            gold,
            precision,
            recall,
            f1,
        }
    }

    /// Pool credit sums and counts.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Prf>) -> Prf {
        let mut credit = Rational::zero();
        let (mut p, mut g) = (0, 0);
        for part in parts {
            credit += &part.credit_sum;
            p += part.predictions;
            g += part.gold;
        }
        Prf::from_counts(credit, p, g)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pairing {
    pub predicted: NodeId,
    pub gold: NodeId,
    pub credit: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryScore {
    pub category: Category,
    pub score: Prf,
    /// Positive-credit pairs of the optimal assignment.
    pub pairings: Vec<Pairing>,
}

/// Rows-to-columns assignment maximizing total weight (Hungarian method,
/// exact arithmetic). Returns `(row, col)` pairs, one per row when rows <=
/// columns, otherwise one per column; ordered by row.
pub fn max_weight_assignment(weights: &[Vec<Rational>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let transposed: Vec<Vec<Rational>> = (0..cols)
            .map(|j| (0..rows).map(|i| weights[i][j].clone()).collect())
            .collect();
        let mut out: Vec<(usize, usize)> = max_weight_assignment(&transposed)
            .into_iter()
            .map(|(j, i)| (i, j))
            .collect();
        out.sort();
        return out;
    }

    // Minimize cost = -weight. Potentials u (rows), v (cols); 1-based with a
    // virtual column 0.
    let (n, m) = (rows, cols);
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1].clone();
    let mut u = vec![Rational::zero(); n + 1];
    let mut v = vec![Rational::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv: Vec<Option<Rational>> = vec![None; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta: Option<Rational> = None;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - &u[i0] - &v[j];
                if minv[j].as_ref().is_none_or(|mv| cur < *mv) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                let mj = minv[j].as_ref().expect("set above");
                if delta.as_ref().is_none_or(|d| mj < d) {
                    delta = Some(mj.clone());
                    j1 = j;
                }
            }
            let delta = delta.expect("an unused column remains while rows <= cols");
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += &delta;
                    v[j] -= &delta;
                } else if let Some(mv) = minv[j].as_mut() {
                    *mv -= &delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort();
    out
}

fn check_category(t: &Taxonomy, id: NodeId, cat: Category) -> Result<(), EvalError> {
    let node = t.node(id)?;
    if node.category != cat || node.is_root() {
        return Err(EvalError::CategoryMismatch {
            name: node.name.clone(),
            expected: cat,
            found: node.category,
        });
    }
    Ok(())
}

/// Score predicted against gold nodes of one category.
pub fn score_category(
    pred: &[NodeId],
    gold: &[NodeId],
    cat: Category,
    t: &Taxonomy,
) -> Result<CategoryScore, EvalError> {
    for &id in pred.iter().chain(gold) {
        check_category(t, id, cat)?;
    }
    let weights: Vec<Vec<Rational>> = pred
        .iter()
        .map(|&p| gold.iter().map(|&g| t.credit(p, g)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let mut pairings = Vec::new();
    let mut credit = Rational::zero();
    for (i, j) in max_weight_assignment(&weights) {
        let c = &weights[i][j];
        if c.is_positive() {
            credit += c;
            pairings.push(Pairing {
                predicted: pred[i],
                gold: gold[j],
                credit: c.clone(),
            });
        }
    }
    Ok(CategoryScore {
        category: cat,
        score: Prf::from_counts(credit, pred.len(), gold.len()),
        pairings,
    })
}

fn resolve_all<'a>(
    names: impl IntoIterator<Item = &'a String>,
    cat: Category,
    t: &Taxonomy,
) -> Result<Vec<NodeId>, EvalError> {
    names
        .into_iter()
        .map(|n| {
            t.find_in(n, cat).ok_or_else(|| EvalError::UnknownLabel {
                category: cat,
                label: n.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoryComparison {
    pub predicted: usize,
    pub gold: usize,
    pub matched: Vec<StoryTriple>,
    pub unmatched_predicted: Vec<StoryTriple>,
    pub unmatched_gold: Vec<StoryTriple>,
}

impl StoryComparison {
    pub fn precision(&self) -> Rational {
        ratio(&Rational::from_integer(self.matched.len().into()), self.predicted)
    }

    pub fn recall(&self) -> Rational {
        ratio(&Rational::from_integer(self.matched.len().into()), self.gold)
    }
}

/// One-to-one exact matching on (action, data type set, purpose set).
pub fn compare_stories(parsed: &[StoryTriple], gold: &[StoryTriple]) -> StoryComparison {
    let mut pool: HashMap<_, Vec<usize>> = HashMap::new();
    for (i, g) in gold.iter().enumerate().rev() {
        pool.entry(g.match_key()).or_default().push(i);
    }
    let mut gold_used = vec![false; gold.len()];
    let mut matched = Vec::new();
    let mut unmatched_predicted = Vec::new();
    for p in parsed {
        match pool.get_mut(&p.match_key()).and_then(Vec::pop) {
            Some(i) => {
                gold_used[i] = true;
                matched.push(p.clone());
            }
            None => unmatched_predicted.push(p.clone()),
        }
    }
    let unmatched_gold = gold
        .iter()
        .zip(&gold_used)
        .filter(|(_, used)| !**used)
        .map(|(g, _)| g.clone())
        .collect();
    StoryComparison {
        predicted: parsed.len(),
        gold: gold.len(),
        matched,
        unmatched_predicted,
        unmatched_gold,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentScore {
    pub document_id: String,
    pub response_index: u32,
    /// Action, data type, purpose.
    pub categories: Vec<CategoryScore>,
    /// Credit sums and counts pooled over the three categories.
    pub micro: Prf,
    pub matched_labels: usize,
    pub hallucinated_labels: usize,
    pub stories: StoryComparison,
}

impl DocumentScore {
    pub fn category(&self, cat: Category) -> &CategoryScore {
        &self.categories[cat.index()]
    }
}

pub fn score_document(
    parsed: &ParsedAnnotation,
    gold: &GoldAnnotation,
    t: &Taxonomy,
    opts: EvalOptions,
) -> Result<DocumentScore, EvalError> {
    let mut categories = Vec::with_capacity(3);
    for cat in Category::ALL {
        let pred = resolve_all(parsed.matched.get(cat), cat, t)?;
        let g = resolve_all(gold.labels.get(cat), cat, t)?;
        let mut cs = score_category(&pred, &g, cat, t)?;
        if opts.count_hallucinated_in_precision {
            let extra = parsed.hallucinated.get(cat).len();
            cs.score = Prf::from_counts(cs.score.credit_sum.clone(), pred.len() + extra, g.len());
        }
        categories.push(cs);
    }
    let micro = Prf::pooled(categories.iter().map(|c| &c.score));
    let gold_stories: Vec<StoryTriple> = gold
        .stories
        .iter()
        .map(|s| s.canonical(t).unwrap_or_else(|_| s.clone()))
        .collect();
    Ok(DocumentScore {
        document_id: parsed.document_id.clone(),
        response_index: parsed.response_index,
        micro,
        matched_labels: parsed.matched.total(),
        hallucinated_labels: parsed.hallucinated_total(),
        stories: compare_stories(&parsed.valid_stories(), &gold_stories),
        categories,
    })
}

/// Score many parsed annotations against their gold.
pub fn score_all(
    parsed: &[ParsedAnnotation],
    m: &Manifest,
    t: &Taxonomy,
    opts: EvalOptions,
    exec: Exec,
) -> Result<Vec<DocumentScore>, EvalError> {
    exec.try_map(parsed, |p| {
        let gold = m
            .gold_for(&p.document_id)
            .ok_or_else(|| EvalError::MissingGold(p.document_id.clone()))?;
        score_document(p, gold, t, opts)
    })
}

/// Arithmetic means of per-document precision, recall and F1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeanScores {
    pub documents: usize,
    pub precision: Rational,
    pub recall: Rational,
    pub f1: Rational,
}

impl MeanScores {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a Prf>) -> Self {
        let mut n = 0;
        let (mut p, mut r, mut f) = (Rational::zero(), Rational::zero(), Rational::zero());
        for s in scores {
            n += 1;
            p += &s.precision;
            r += &s.recall;
            f += &s.f1;
        }
        MeanScores {
            documents: n,
            precision: ratio(&p, n),
            recall: ratio(&r, n),
            f1: ratio(&f, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    /// Sorted by document id, then response index.
    pub documents: Vec<DocumentScore>,
    pub file_types: BTreeMap<String, FileType>,
    pub per_file_type: BTreeMap<FileType, MeanScores>,
    pub overall_micro: Prf,
    pub overall_macro: MeanScores,
    pub by_category: Vec<Prf>,
    pub hallucinated_labels: usize,
    pub matched_labels: usize,
    pub stories_predicted: usize,
    pub stories_gold: usize,
    pub stories_matched: usize,
}

impl Evaluation {
    pub fn hallucination_rate(&self) -> Rational {
        ratio(
            &Rational::from_integer(self.hallucinated_labels.into()),
            self.hallucinated_labels + self.matched_labels,
        )
    }
}

pub fn aggregate(mut scores: Vec<DocumentScore>, m: &Manifest) -> Result<Evaluation, EvalError> {
    scores.sort_by(|a, b| {
        (a.document_id.as_str(), a.response_index).cmp(&(b.document_id.as_str(), b.response_index))
    });
    let mut file_types = BTreeMap::new();
    let mut by_type: BTreeMap<FileType, Vec<&Prf>> = BTreeMap::new();
    for s in &scores {
        let doc = m
            .document(&s.document_id)
            .ok_or_else(|| EvalError::UnknownDocument(s.document_id.clone()))?;
        file_types.insert(s.document_id.clone(), doc.file_type);
        by_type.entry(doc.file_type).or_default().push(&s.micro);
    }
    let per_file_type = by_type
        .into_iter()
        .map(|(k, v)| (k, MeanScores::of(v)))
        .collect();
    let by_category = Category::ALL
        .iter()
        .map(|&c| Prf::pooled(scores.iter().map(|s| &s.category(c).score)))
        .collect();
    let overall_micro = Prf::pooled(scores.iter().map(|s| &s.micro));
    let overall_macro = MeanScores::of(scores.iter().map(|s| &s.micro));
    Ok(Evaluation {
        file_types,
        per_file_type,
        overall_micro,
        overall_macro,
        by_category,
        hallucinated_labels: scores.iter().map(|s| s.hallucinated_labels).sum(),
        matched_labels: scores.iter().map(|s| s.matched_labels).sum(),
        stories_predicted: scores.iter().map(|s| s.stories.predicted).sum(),
        stories_gold: scores.iter().map(|s| s.stories.gold).sum(),
        stories_matched: scores.iter().map(|s| s.stories.matched.len()).sum(),
        documents: scores,
    })
}

// ---- report rendering --------------------------------------------------

/// Round half away from zero to three decimals.
pub fn round3(r: &Rational) -> f64 {
    let scaled = r * Rational::from_integer(BigInt::from(1000));
    let half = Rational::new(BigInt::one(), BigInt::from(2));
    let rounded = if scaled.is_negative() {
        -((-scaled + half).floor())
    } else {
        (scaled + half).floor()
    };
    rounded.to_integer().to_f64().unwrap_or(f64::NAN) / 1000.0
}

fn exact(r: &Rational) -> String {
    r.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreRow {
    fn of(p: &Rational, r: &Rational, f: &Rational) -> Self {
        ScoreRow {
            precision: round3(p),
            recall: round3(r),
            f1: round3(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingRow {
    pub predicted: String,
    pub gold: String,
    pub credit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    #[serde(flatten)]
    pub scores: ScoreRow,
    pub credit_sum: String,
    pub predictions: usize,
    pub gold: usize,
    pub pairings: Vec<PairingRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryRow {
    pub predicted: usize,
    pub gold: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub file_type: FileType,
    pub response_index: u32,
    pub actions: CategoryRow,
    pub data_types: CategoryRow,
    pub purposes: CategoryRow,
    pub overall: ScoreRow,
    pub hallucinated_labels: usize,
    pub stories: StoryRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileTypeRow {
    pub documents: usize,
    #[serde(flatten)]
    pub mean: ScoreRow,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model_name: String,
    pub template_version: String,
    pub taxonomy_version: String,
    pub template_variant: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRow {
    pub hallucinated: usize,
    pub matched: usize,
    pub rate: f64,
}

/// Serializable report; scores rounded to three decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub options: EvalOptions,
    pub overall_macro: ScoreRow,
    pub overall_micro: ScoreRow,
    pub by_category: BTreeMap<Category, ScoreRow>,
    pub per_file_type: BTreeMap<FileType, FileTypeRow>,
    pub hallucination: HallucinationRow,
    pub stories: StoryRow,
    pub per_document: BTreeMap<String, DocumentRow>,
}

fn category_row(cs: &CategoryScore, t: &Taxonomy) -> CategoryRow {
    CategoryRow {
        scores: ScoreRow::of(&cs.score.precision, &cs.score.recall, &cs.score.f1),
        credit_sum: exact(&cs.score.credit_sum),
        predictions: cs.score.predictions,
        gold: cs.score.gold,
        pairings: cs
            .pairings
            .iter()
            .map(|p| PairingRow {
                predicted: t.name(p.predicted).to_string(),
                gold: t.name(p.gold).to_string(),
                credit: exact(&p.credit),
            })
            .collect(),
    }
}

fn story_row(predicted: usize, gold: usize, matched: usize) -> StoryRow {
    let m = Rational::from_integer(matched.into());
    StoryRow {
        predicted,
        gold,
        matched,
        precision: round3(&ratio(&m, predicted)),
        recall: round3(&ratio(&m, gold)),
    }
}

impl Evaluation {
    pub fn report(&self, t: &Taxonomy, metadata: RunMetadata, options: EvalOptions) -> EvalReport {
        let mut per_document = BTreeMap::new();
        for d in &self.documents {
            let key = if d.response_index == 0 {
                d.document_id.clone()
            } else {
                format!("{}#{}", d.document_id, d.response_index)
            };
            per_document.insert(
                key,
                DocumentRow {
                    file_type: self.file_types[&d.document_id],
                    response_index: d.response_index,
                    actions: category_row(d.category(Category::Action), t),
                    data_types: category_row(d.category(Category::DataType), t),
                    purposes: category_row(d.category(Category::Purpose), t),
                    overall: ScoreRow::of(&d.micro.precision, &d.micro.recall, &d.micro.f1),
                    hallucinated_labels: d.hallucinated_labels,
                    stories: story_row(d.stories.predicted, d.stories.gold, d.stories.matched.len()),
                },
            );
        }
        EvalReport {
            metadata,
            options,
            overall_macro: ScoreRow::of(
                &self.overall_macro.precision,
                &self.overall_macro.recall,
                &self.overall_macro.f1,
            ),
            overall_micro: ScoreRow::of(
                &self.overall_micro.precision,
                &self.overall_micro.recall,
                &self.overall_micro.f1,
            ),
            by_category: Category::ALL
                .iter()
                .zip(&self.by_category)
                .map(|(&c, p)| (c, ScoreRow::of(&p.precision, &p.recall, &p.f1)))
                .collect(),
            per_file_type: self
                .per_file_type
                .iter()
                .map(|(&k, v)| {
                    (
                        k,
                        FileTypeRow {
                            documents: v.documents,
                            mean: ScoreRow::of(&v.precision, &v.recall, &v.f1),
                        },
                    )
                })
                .collect(),
            hallucination: HallucinationRow {
                hallucinated: self.hallucinated_labels,
                matched: self.matched_labels,
                rate: round3(&self.hallucination_rate()),
            },
            stories: story_row(self.stories_predicted, self.stories_gold, self.stories_matched),
            per_document,
        }
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per scored response.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "document_id",
            "response_index",
            "file_type",
            "action_p",
            "action_r",
            "action_f1",
            "data_type_p",
            "data_type_r",
            "data_type_f1",
            "purpose_p",
            "purpose_r",
            "purpose_f1",
            "overall_p",
            "overall_r",
            "overall_f1",
            "hallucinated",
            "stories_predicted",
            "stories_gold",
            "stories_matched",
        ])?;
        for (id, d) in &self.per_document {
            let doc_id = id.split('#').next().unwrap_or(id);
            let mut row = vec![
                doc_id.to_string(),
                d.response_index.to_string(),
                d.file_type.key().to_string(),
            ];
            for s in [
                &d.actions.scores,
                &d.data_types.scores,
                &d.purposes.scores,
                &d.overall,
            ] {
                row.extend([s.precision, s.recall, s.f1].map(|x| format!("{x:.3}")));
            }
            row.extend([
                d.hallucinated_labels.to_string(),
                d.stories.predicted.to_string(),
                d.stories.gold.to_string(),
                d.stories.matched.to_string(),
            ]);
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}
