use proptest::prelude::*;
use proptest::sample::{select, subsequence};

use privstory_core::corpus::{GoldAnnotation, LabelSets};
use privstory_core::parser::{parse_response, render_gold};
use privstory_core::story::{parse_story, render_story, StoryTriple};
use privstory_core::taxonomy::{Category, Taxonomy};

fn tax() -> &'static Taxonomy {
    static T: std::sync::OnceLock<Taxonomy> = std::sync::OnceLock::new();
    T.get_or_init(Taxonomy::load_default)
}

fn names(cat: Category) -> Vec<String> {
    let t = tax();
    t.labels(cat).into_iter().map(|id| t.name(id).to_string()).collect()
}

fn triple() -> impl Strategy<Value = StoryTriple> {
    (
        select(names(Category::Action)),
        (1..=4usize).prop_flat_map(|n| subsequence(names(Category::DataType), n).prop_shuffle()),
        (1..=3usize).prop_flat_map(|n| subsequence(names(Category::Purpose), n).prop_shuffle()),
    )
        .prop_map(|(a, d, p)| StoryTriple::new(a, d, p))
}

fn label_sets() -> impl Strategy<Value = LabelSets> {
    let set = |cat| {
        let all = names(cat);
        (0..=all.len().min(4)).prop_flat_map(move |n| subsequence(all.clone(), n))
    };
    (set(Category::Action), set(Category::DataType), set(Category::Purpose)).prop_map(|(a, d, p)| LabelSets {
        actions: a.into_iter().collect(),
        data_types: d.into_iter().collect(),
        purposes: p.into_iter().collect(),
    })
}

/// Text built from tag fragments, labels and noise.
fn messy_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        select(vec![
            "<ACTIONS>", "</ACTIONS>", "<data_types>", "</DATA_TYPES>", "<PURPOSES>", "</purposes>", "<STORIES>",
            "</STORIES>", "<R>", "</R>", "< ACTIONS >", "\n", "- ", "1. ", ", ", "We collect ", " for ", ".",
        ])
        .prop_map(str::to_string),
        select(names(Category::DataType)),
        select(names(Category::Purpose)),
        "[a-zA-Z ]{0,12}",
        any::<String>(),
    ];
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn story_round_trip(s in triple()) {
        let line = render_story(tax(), &s).unwrap();
        prop_assert_eq!(parse_story(&line, tax()), Some(s));
    }

    #[test]
    fn story_parse_ignores_list_markers_and_case(s in triple(), marker in select(vec!["- ", "* ", "3. ", "  "])) {
        let line = render_story(tax(), &s).unwrap();
        let noisy = format!("{marker}{}", line.to_uppercase());
        prop_assert_eq!(parse_story(&noisy, tax()), Some(s));
    }

    #[test]
    fn gold_round_trip(labels in label_sets(), stories in prop::collection::vec(triple(), 0..5)) {
        let gold = GoldAnnotation { document_id: "d".into(), labels, stories };
        let text = render_gold(tax(), &gold).unwrap();
        let parsed = parse_response("d", 0, &text, tax());
        prop_assert_eq!(&parsed.matched, &gold.labels);
        prop_assert_eq!(parsed.hallucinated.total(), 0);
        prop_assert_eq!(parsed.valid_stories(), gold.stories);
    }

    #[test]
    fn parser_is_total(text in messy_text()) {
        let t = tax();
        let p = parse_response("d", 0, &text, t);
        for cat in Category::ALL {
            for l in p.matched.get(cat) {
                prop_assert!(t.find_in(l, cat).is_some());
            }
            for h in p.hallucinated.get(cat) {
                prop_assert!(t.find_in(h, cat).is_none());
                prop_assert!(!h.trim().is_empty());
            }
        }
        for s in p.stories.iter().filter_map(|s| s.triple.as_ref()) {
            prop_assert!(s.canonical(t).is_ok());
        }
    }
}

#[test]
fn multiword_labels_with_connectives_split_correctly() {
    let s = StoryTriple::new(
        "Share",
        vec!["Race and Ethnicity", "SMS or MMS", "Files and Docs"],
        vec!["Fraud Prevention and Security", "Backup and Recovery"],
    );
    let line = render_story(tax(), &s).unwrap();
    assert_eq!(parse_story(&line, tax()), Some(s));
}

#[test]
fn unknown_label_story_is_rejected() {
    assert_eq!(parse_story("We collect Browsing Habits for Analytics.", tax()), None);
    assert_eq!(parse_story("We collect", tax()), None);
}
