use std::path::PathBuf;

use proptest::prelude::*;
use stancekit::backend::FixtureBackend;
use stancekit::label::StanceLabel;
use stancekit::prompt::{
    assemble_prompt, score_description, select_best_description, validate_example_set, zero_shot_cot_answer_prompt,
    ExampleSet, PromptAssets, PromptTemplate, Strategy, TaskDescription, Violation,
};
use stancekit::record::{ExampleTag, TweetRecord};

const SEMEVAL_TARGETS: [&str; 5] = [
    "Atheism",
    "Climate Change is a Real Concern",
    "Feminist Movement",
    "Hillary Clinton",
    "Legalization of Abortion",
];

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn query() -> TweetRecord {
    TweetRecord::new("q", "Religion is the opium of the people. #freethinker", "Atheism")
}

#[test]
fn every_template_matches_its_golden_file() {
    let assets = PromptAssets::builtin();
    for strategy in Strategy::ALL {
        let t = PromptTemplate::for_strategy(strategy, &assets);
        let got = assemble_prompt(&t, &query()).unwrap();
        assert_eq!(got, golden(&format!("{strategy}.txt")), "template {strategy}");
    }
}

#[test]
fn zero_shot_cot_answer_prompt_matches_golden() {
    let assets = PromptAssets::builtin();
    let t = PromptTemplate::for_strategy(Strategy::ZeroShotCot, &assets);
    let step_one = assemble_prompt(&t, &query()).unwrap();
    let got = zero_shot_cot_answer_prompt(&step_one, "The author quotes Marx to dismiss religion.", &assets.triggers.answer);
    assert_eq!(got, golden("zero_shot_cot_answer.txt"));
}

#[test]
fn shipped_sets_validate_against_semeval_targets() {
    let assets = PromptAssets::builtin();
    let diverse = validate_example_set(&assets.diverse_examples, &SEMEVAL_TARGETS);
    assert!(diverse.is_valid(), "{:?}", diverse.violations);
    let homogeneous = validate_example_set(&assets.homogeneous_examples, &SEMEVAL_TARGETS);
    assert!(homogeneous.is_valid(), "{:?}", homogeneous.violations);
}

#[test]
fn unbalanced_set_is_reported() {
    let mut set = PromptAssets::builtin().diverse_examples;
    set.examples[0].label = StanceLabel::Favor;
    let report = validate_example_set(&set, &SEMEVAL_TARGETS);
    assert!(report.violations.contains(&Violation::LabelBalance {
        label: StanceLabel::Favor,
        expected: 2,
        found: 3
    }));
}

#[test]
fn evaluation_target_in_examples_is_reported() {
    let mut set = PromptAssets::builtin().diverse_examples;
    set.examples[1].target = "atheism ".into();
    let report = validate_example_set(&set, &SEMEVAL_TARGETS);
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::TargetOverlap { example: 1, .. })));
}

#[test]
fn diverse_set_without_sarcasm_is_reported() {
    let mut set = PromptAssets::builtin().diverse_examples;
    for ex in &mut set.examples {
        ex.tags.retain(|t| *t != ExampleTag::Sarcasm);
    }
    let report = validate_example_set(&set, &SEMEVAL_TARGETS);
    assert_eq!(report.violations, vec![Violation::MissingTag { tag: ExampleTag::Sarcasm }]);
}

#[test]
fn homogeneous_set_rejects_rhetorical_devices() {
    let mut set: ExampleSet = PromptAssets::builtin().homogeneous_examples;
    set.examples[3].tags.push(ExampleTag::RhetoricalQuestion);
    let report = validate_example_set(&set, &SEMEVAL_TARGETS);
    assert_eq!(
        report.violations,
        vec![Violation::RhetoricalDevice {
            example: 3,
            tag: ExampleTag::RhetoricalQuestion
        }]
    );
}

#[test]
fn stance_reasoner_prompt_has_six_examples_two_per_label() {
    let assets = PromptAssets::builtin();
    let t = PromptTemplate::for_strategy(Strategy::StanceReasoner, &assets);
    let p = assemble_prompt(&t, &query()).unwrap();
    let query_start = p.rfind("\n\ntweet:").unwrap();
    let examples = &p[..query_start];
    assert_eq!(examples.lines().filter(|l| l.starts_with("tweet: ")).count(), 6);
    for label in StanceLabel::ALL {
        let line = format!("stance: {label}");
        assert_eq!(examples.lines().filter(|l| *l == line).count(), 2, "{label}");
    }
}

fn nll_fixture(per_description: Vec<(&'static str, f64)>) -> FixtureBackend {
    FixtureBackend::new("fixture", "m").with_scorer(move |prompt| {
        per_description
            .iter()
            .find(|(marker, _)| prompt.contains(marker))
            .map(|(_, nll)| -nll)
            .unwrap_or(-10.0)
    })
}

fn tweets(n: usize) -> Vec<TweetRecord> {
    (0..n)
        .map(|i| TweetRecord::new(format!("t{i}"), format!("tweet number {i} with some words"), "Atheism"))
        .collect()
}

#[test]
fn scores_follow_fixture_nll() {
    let backend = nll_fixture(vec![("alpha", 1.0), ("beta", 2.0)]);
    let a = score_description(&TaskDescription::seed("alpha {target}?", 0), &tweets(7), &backend).unwrap();
    let b = score_description(&TaskDescription::seed("beta {target}?", 0), &tweets(7), &backend).unwrap();
    assert!((a.mean_nll - 1.0).abs() < 1e-12);
    assert!((b.mean_nll - 2.0).abs() < 1e-12);
}

#[test]
fn lowest_nll_wins_and_first_breaks_ties() {
    let backend = nll_fixture(vec![("Qone", 2.0), ("Qtwo", 1.5), ("Qthree", 1.5)]);
    let candidates = [
        TaskDescription::seed("Qone {target}?", 0),
        TaskDescription::paraphrase("Qtwo {target}?", 0),
        TaskDescription::paraphrase("Qthree {target}?", 0),
    ];
    let report = select_best_description(&candidates, &tweets(4), &backend).unwrap();
    assert_eq!(report.best, 1);
    assert_eq!(report.ranking(), vec![1, 2, 0]);
    assert_eq!(report.scores.len(), 3);

    let single = select_best_description(&candidates[..1], &tweets(4), &backend).unwrap();
    assert_eq!(single.best_description(), &candidates[0]);
}

#[test]
fn scoring_reads_no_labels() {
    let backend = FixtureBackend::new("fixture", "m").with_constant_logprob(-0.5);
    let d = TaskDescription::seed("q {target}?", 0);
    let plain = tweets(5);
    let labelled: Vec<_> = plain.iter().cloned().map(|t| t.with_gold(StanceLabel::Against)).collect();
    let a = score_description(&d, &plain, &backend).unwrap();
    let b = score_description(&d, &labelled, &backend).unwrap();
    assert_eq!(a.mean_nll, b.mean_nll);
}

proptest! {
    #[test]
    fn score_ignores_tweet_order(lens in prop::collection::vec(1usize..30, 1..12), rot in 0usize..12) {
        let backend = FixtureBackend::new("fixture", "m").with_scorer(|p| -((p.len() % 17) as f64) / 7.0 - 0.1);
        let ts: Vec<TweetRecord> = lens
            .iter()
            .enumerate()
            .map(|(i, n)| TweetRecord::new(format!("t{i}"), "w ".repeat(*n), "Atheism"))
            .collect();
        let mut rotated = ts.clone();
        rotated.rotate_left(rot % ts.len());
        rotated.reverse();
        let d = TaskDescription::seed("q {target}?", 0);
        let a = score_description(&d, &ts, &backend).unwrap();
        let b = score_description(&d, &rotated, &backend).unwrap();
        prop_assert_eq!(a.mean_nll.to_bits(), b.mean_nll.to_bits());
    }

    #[test]
    fn selection_is_shift_invariant(nlls in prop::collection::vec(0u32..6, 1..6), shift in 0u32..5) {
        let names = ["Qaa", "Qbb", "Qcc", "Qdd", "Qee", "Qff"];
        let candidates: Vec<_> = (0..nlls.len())
            .map(|i| TaskDescription::seed(format!("{} {{target}}?", names[i]), 0))
            .collect();
        let base: Vec<(&'static str, f64)> = nlls.iter().enumerate().map(|(i, v)| (names[i], *v as f64)).collect();
        let shifted: Vec<(&'static str, f64)> = base.iter().map(|(n, v)| (*n, v + shift as f64)).collect();
        let a = select_best_description(&candidates, &tweets(3), &nll_fixture(base)).unwrap();
        let b = select_best_description(&candidates, &tweets(3), &nll_fixture(shifted)).unwrap();
        prop_assert_eq!(a.best, b.best);
        let expected = (0..nlls.len()).min_by_key(|&i| (nlls[i], i)).unwrap();
        prop_assert_eq!(a.best, expected);
    }
}
