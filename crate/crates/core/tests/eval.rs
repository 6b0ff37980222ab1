use proptest::prelude::*;
use stancekit::backend::{BackendError, CacheMode, CachedBackend, CallCounter, FixtureBackend, OfflineBackend, BackendDescriptor};
use stancekit::eval::{
    evaluate_per_target, f1_per_class, macro_f1_favor_against, sweep_sample_count, triage_report, ConfusionCounts,
    Decoding, EvalError, TriageCategory, DEFAULT_AMBIGUITY_THRESHOLD,
};
use stancekit::label::{LabelCounts, StanceLabel};
use stancekit::prompt::{PromptAssets, Strategy as Method};
use stancekit::reasoner::{parse_few_shot_completion, ParseStatus, Prediction, StrategyConfig};
use stancekit::record::TweetRecord;

use StanceLabel::{Against, Favor};
const NONE: StanceLabel = StanceLabel::None;

fn pred(id: &str, target: &str, label: Option<StanceLabel>, votes: u32, drawn: u32) -> Prediction {
    Prediction {
        id: id.into(),
        target: target.into(),
        strategy: Method::StanceReasoner,
        label,
        parse_status: if label.is_some() { ParseStatus::Ok } else { ParseStatus::NoLabel },
        confidence: f64::from(votes) / f64::from(drawn),
        votes,
        n_drawn: drawn,
        n_valid: drawn,
        tie: false,
        counts: LabelCounts::default(),
        samples: Vec::new(),
        error: None,
    }
}

fn gold(id: &str, target: &str, label: StanceLabel) -> TweetRecord {
    TweetRecord::new(id, format!("text {id}"), target).with_gold(label)
}

/// Builds gold records and unanimous predictions from (target, gold, pred) triples.
fn build(rows: &[(&str, StanceLabel, Option<StanceLabel>)]) -> (Vec<Prediction>, Vec<TweetRecord>) {
    rows.iter()
        .enumerate()
        .map(|(i, (t, g, p))| {
            let id = format!("{i:03}");
            (pred(&id, t, *p, 1, 1), gold(&id, t, *g))
        })
        .unzip()
}

/// Counts TP/FP/FN by scanning the pairs directly.
fn naive_f1(pairs: &[(StanceLabel, Option<StanceLabel>)], label: StanceLabel) -> f64 {
    let tp = pairs.iter().filter(|(g, p)| *g == label && *p == Some(label)).count() as f64;
    let fp = pairs.iter().filter(|(g, p)| *g != label && *p == Some(label)).count() as f64;
    let fn_ = pairs.iter().filter(|(g, p)| *g == label && *p != Some(label)).count() as f64;
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[test]
fn hand_computed_case() {
    let c = ConfusionCounts::from_pairs([
        (Favor, Some(Favor)),
        (Favor, Some(Against)),
        (Against, Some(Against)),
        (NONE, Some(NONE)),
    ]);
    assert_eq!(f1_per_class(&c, Favor), 2.0 / 3.0);
    assert_eq!(f1_per_class(&c, Against), 2.0 / 3.0);
    assert_eq!(macro_f1_favor_against(&c), 2.0 / 3.0);
}

#[test]
fn trivial_cases() {
    let perfect = ConfusionCounts::from_pairs([(Favor, Some(Favor)), (Against, Some(Against))]);
    assert_eq!(macro_f1_favor_against(&perfect), 1.0);
    let all_none = ConfusionCounts::from_pairs([(Favor, Some(NONE)), (Against, Some(NONE))]);
    assert_eq!(macro_f1_favor_against(&all_none), 0.0);
    assert_eq!(f1_per_class(&perfect, NONE), 0.0);
}

#[test]
fn average_is_unweighted() {
    let (p, g) = build(&[
        ("A", Favor, Some(Favor)),
        ("A", Against, Some(Against)),
        ("B", Favor, Some(Favor)),
        ("B", Favor, Some(Favor)),
        ("B", Favor, Some(Favor)),
        ("B", Against, Some(NONE)),
    ]);
    let report = evaluate_per_target(&p, &g).unwrap();
    assert_eq!(report.targets["A"].macro_f1, 1.0);
    assert_eq!(report.targets["B"].macro_f1, 0.5);
    assert_eq!(report.avg_macro_f1, 0.75);
}

#[test]
fn scripted_five_target_report() {
    let rows = [
        ("Atheism", Against, Some(Against)),
        ("Atheism", Favor, Some(Favor)),
        ("Atheism", NONE, Some(NONE)),
        ("Climate Change is a Real Concern", Favor, Some(Favor)),
        ("Climate Change is a Real Concern", Favor, Some(Against)),
        ("Climate Change is a Real Concern", Against, Some(Against)),
        ("Climate Change is a Real Concern", NONE, Some(NONE)),
        ("Feminist Movement", Against, Some(NONE)),
        ("Feminist Movement", Favor, Some(NONE)),
        ("Feminist Movement", NONE, Some(NONE)),
        ("Hillary Clinton", Against, Some(Against)),
        ("Hillary Clinton", Against, None),
        ("Hillary Clinton", Favor, Some(Favor)),
        ("Legalization of Abortion", Against, Some(Favor)),
        ("Legalization of Abortion", Favor, Some(Against)),
    ];
    let (mut p, g) = build(&rows);
    p[14].tie = true;
    let expected = "target\tf1_against\tf1_favor\tmacro_f1\tmacro_f1_excl_failures\tn\tparse_failures\tties\n\
Atheism\t1.0000\t1.0000\t1.0000\t1.0000\t3\t0\t0\n\
Climate Change is a Real Concern\t0.6667\t0.6667\t0.6667\t0.6667\t4\t0\t0\n\
Feminist Movement\t0.0000\t0.0000\t0.0000\t0.0000\t3\t0\t0\n\
Hillary Clinton\t0.6667\t1.0000\t0.8333\t1.0000\t3\t1\t0\n\
Legalization of Abortion\t0.0000\t0.0000\t0.0000\t0.0000\t2\t0\t1\n\
Avg\t0.4667\t0.5333\t0.5000\t0.5333\t15\t1\t1\n";
    let first = evaluate_per_target(&p, &g).unwrap();
    assert_eq!(first.to_table(), expected);
    p.reverse();
    let second = evaluate_per_target(&p, &g).unwrap();
    assert_eq!(second.to_table(), expected);
    assert_eq!(first.to_json(), second.to_json());
}

#[test]
fn join_errors() {
    let (p, g) = build(&[("A", Favor, Some(Favor))]);
    assert!(matches!(evaluate_per_target(&[], &g), Err(EvalError::Empty)));
    let stray = vec![p[0].clone(), pred("zzz", "A", Some(Favor), 1, 1), pred("yyy", "A", None, 0, 1)];
    match evaluate_per_target(&stray, &g) {
        Err(EvalError::Unjoinable { ids }) => assert_eq!(ids, ["yyy", "zzz"]),
        other => panic!("{other:?}"),
    }
    let wrong_target = vec![pred("000", "B", Some(Favor), 1, 1)];
    assert!(matches!(evaluate_per_target(&wrong_target, &g), Err(EvalError::Unjoinable { .. })));
    let doubled = vec![p[0].clone(), p[0].clone()];
    assert!(matches!(evaluate_per_target(&doubled, &g), Err(EvalError::Duplicate { .. })));
}

fn label() -> impl Strategy<Value = StanceLabel> {
    prop_oneof![Just(Against), Just(Favor), Just(NONE)]
}

fn pairs() -> impl Strategy<Value = Vec<(StanceLabel, Option<StanceLabel>)>> {
    prop::collection::vec((label(), prop::option::weighted(0.9, label())), 0..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_matches_naive_oracle(pairs in pairs()) {
        let c = ConfusionCounts::from_pairs(pairs.iter().copied());
        for l in StanceLabel::ALL {
            prop_assert!((f1_per_class(&c, l) - naive_f1(&pairs, l)).abs() <= 1e-12);
        }
        let naive = (naive_f1(&pairs, Against) + naive_f1(&pairs, Favor)) / 2.0;
        prop_assert!((macro_f1_favor_against(&c) - naive).abs() <= 1e-12);
        prop_assert_eq!(c.total() as usize, pairs.len());
    }

    #[test]
    fn polar_swap_is_symmetric(pairs in pairs()) {
        let swapped: Vec<_> = pairs.iter().map(|(g, p)| (g.mirrored(), p.map(StanceLabel::mirrored))).collect();
        let a = macro_f1_favor_against(&ConfusionCounts::from_pairs(pairs));
        let b = macro_f1_favor_against(&ConfusionCounts::from_pairs(swapped));
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn correct_none_records_do_not_move_the_score(pairs in pairs(), extra in 1usize..20) {
        let base = macro_f1_favor_against(&ConfusionCounts::from_pairs(pairs.iter().copied()));
        let padded = pairs.into_iter().chain(std::iter::repeat_n((NONE, Some(NONE)), extra));
        prop_assert_eq!(macro_f1_favor_against(&ConfusionCounts::from_pairs(padded)), base);
    }

    #[test]
    fn report_ignores_record_order(pairs in pairs(), seed in any::<u64>()) {
        prop_assume!(!pairs.is_empty());
        let targets = ["T1", "T2", "T3"];
        let rows: Vec<_> = pairs.iter().enumerate().map(|(i, (g, p))| (targets[i % 3], *g, *p)).collect();
        let (mut p, g) = build(&rows);
        let a = evaluate_per_target(&p, &g).unwrap();
        let n = p.len();
        for i in 0..n {
            p.swap(i, (seed.wrapping_mul(i as u64 + 1) % n as u64) as usize);
        }
        prop_assert_eq!(a, evaluate_per_target(&p, &g).unwrap());
    }

    #[test]
    fn triage_assigns_one_category(votes in prop::collection::vec((0u32..6, label(), label()), 1..30)) {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for (i, (v, gl, pl)) in votes.iter().enumerate() {
            let id = format!("{i:03}");
            let label = (*v > 0).then_some(*pl);
            p.push(pred(&id, "T", label, *v, 5));
            g.push(gold(&id, "T", *gl));
        }
        let entries = triage_report(&p, &g, DEFAULT_AMBIGUITY_THRESHOLD).unwrap();
        prop_assert_eq!(entries.len(), p.len());
        for e in &entries {
            if e.category == TriageCategory::AnnotationErrorCandidate {
                prop_assert_eq!(e.confidence, 1.0);
            }
            if matches!(e.category, TriageCategory::Ambiguous | TriageCategory::RhetoricalSuspect) {
                prop_assert!(e.confidence <= DEFAULT_AMBIGUITY_THRESHOLD + 1e-12);
            }
        }
        for w in entries.windows(2) {
            prop_assert!(w[0].confidence <= w[1].confidence);
        }
    }
}

fn sample_text(premise: &str, label: &str) -> String {
    format!(" {premise} -> the author is {label} the target\nstance: {label}")
}

#[test]
fn triage_reproduces_three_exemplar_rows() {
    let vote = |labels: [&str; 5]| {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| parse_few_shot_completion(&sample_text("premise", l), true, i as u32))
            .collect::<Vec<_>>()
    };
    let tweets = [
        gold("1", "Climate Change is a Real Concern", NONE)
            .with_text("It's most exciting to witness a major development! @urgenda"),
        gold("2", "Feminist Movement", Against).with_text(
            "One thing I learned from my job: doors to opportunity cover fee that only the privileged can afford. #privilege #truth",
        ),
        gold("3", "Legalization of Abortion", Against).with_text(
            "@cbrangel so, you support the choice of wether or not you'd like to kill someone? Would you kill a born baby?",
        ),
    ];
    let mut p1 = pred("1", &tweets[0].target, Some(Favor), 5, 5);
    p1.samples = vote(["favor"; 5]);
    let mut p2 = pred("2", &tweets[1].target, Some(NONE), 2, 5);
    p2.samples = vote(["none", "favor", "none", "against", "against"]);
    let mut p3 = pred("3", &tweets[2].target, Some(Against), 2, 5);
    p3.samples = vote(["against", "none", "favor", "against", "none"]);

    let entries = triage_report(&[p1, p2, p3], &tweets, DEFAULT_AMBIGUITY_THRESHOLD).unwrap();
    let by_id = |id: &str| entries.iter().find(|e| e.id == id).unwrap();
    assert_eq!(by_id("1").category, TriageCategory::AnnotationErrorCandidate);
    assert_eq!(by_id("2").category, TriageCategory::Ambiguous);
    assert_eq!(by_id("3").category, TriageCategory::RhetoricalSuspect);
    assert_eq!(by_id("1").reasonings.len(), 5);
    assert_eq!(entries.last().unwrap().id, "1");
}

trait WithText {
    fn with_text(self, text: &str) -> Self;
}

impl WithText for TweetRecord {
    fn with_text(mut self, text: &str) -> Self {
        self.text = text.into();
        self
    }
}

fn sweep_fixture() -> FixtureBackend {
    FixtureBackend::new("fixture", "m").with_responder(|req| {
        let labels = ["favor", "favor", "against", "favor", "none", "against", "favor", "none", "favor"];
        labels
            .get(req.sample_index as usize)
            .map(|l| sample_text("the author weighs in", l))
            .ok_or_else(|| BackendError::Protocol("out of samples".into()))
    })
}

#[test]
fn sweep_reuses_the_recorded_prefix() {
    let assets = PromptAssets::builtin();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cache.jsonl");
    let tweets: Vec<TweetRecord> = (0..4).map(|i| gold(&format!("t{i}"), "Atheism", Favor)).collect();
    let cfg = StrategyConfig::new(Method::StanceReasoner);

    let recording = CachedBackend::open(CallCounter::new(sweep_fixture()), &path, CacheMode::Record).unwrap();
    sweep_sample_count(&tweets, &assets, &recording, &cfg, &[5], 2).unwrap();
    assert_eq!(recording.inner().sample_calls(), 4 * 5);
    drop(recording);

    let again = CachedBackend::open(CallCounter::new(sweep_fixture()), &path, CacheMode::Record).unwrap();
    let table = sweep_sample_count(&tweets, &assets, &again, &cfg, &[1, 3, 5, 3], 2).unwrap();
    assert_eq!(again.inner().total_calls(), 0);
    assert_eq!(table.rows.iter().map(|r| r.n).collect::<Vec<_>>(), [1, 3, 5]);
    assert_eq!(table.warnings.len(), 1);
    assert!(table.rows.iter().all(|r| r.decoding == Decoding::Sampled));

    let offline = OfflineBackend::new(BackendDescriptor::new("fixture", "m"));
    let replay = CachedBackend::open(offline, &path, CacheMode::Replay).unwrap();
    let replayed = sweep_sample_count(&tweets, &assets, &replay, &cfg, &[1, 3, 5], 2).unwrap();
    assert_eq!(replayed.to_table(), table.to_table());
    assert_eq!(table.to_table().lines().count(), 4);
}

#[test]
fn sweep_rejects_bad_counts() {
    let assets = PromptAssets::builtin();
    let backend = sweep_fixture();
    let tweets = vec![gold("1", "Atheism", Favor)];
    let cfg = StrategyConfig::new(Method::StanceReasoner);
    for ns in [&[][..], &[0, 3][..]] {
        assert!(matches!(
            sweep_sample_count(&tweets, &assets, &backend, &cfg, ns, 1),
            Err(EvalError::InvalidSweep(_))
        ));
    }
    let greedy = StrategyConfig::new(Method::FewShotCot);
    assert!(sweep_sample_count(&tweets, &assets, &backend, &greedy, &[1], 1).is_err());
}

#[test]
fn single_sample_at_zero_temperature_is_greedy() {
    let assets = PromptAssets::builtin();
    let backend = sweep_fixture();
    let tweets = vec![gold("1", "Atheism", Favor)];
    let mut cfg = StrategyConfig::new(Method::StanceReasoner);
    cfg.vote_temperature = 0.0;
    let table = sweep_sample_count(&tweets, &assets, &backend, &cfg, &[1], 1).unwrap();
    assert_eq!(table.rows[0].decoding, Decoding::Greedy);
}
