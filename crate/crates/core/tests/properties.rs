use proptest::prelude::*;

use deepsearch_core::embed::HashEmbedder;
use deepsearch_core::eval::{compute_reward, exact_match, f1, normalize_answer, FormatMode};
use deepsearch_core::refiner::{refine, step1_quota, step2_quota, RefinerConfig};
use deepsearch_core::tools::LOCAL_TOOLS;
use deepsearch_core::trajectory::{parse, render, to_rounds, ParsedTrajectory, Segment, ToolSet};

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 |.,:\n]{0,24}"
}

fn round() -> impl Strategy<Value = (Option<String>, usize, String, String)> {
    (proptest::option::of(text()), 0..LOCAL_TOOLS.len(), text(), text())
}

prop_compose! {
    fn trajectory()(rounds in prop::collection::vec(round(), 0..5), last in proptest::option::of(text()),
                    answer in proptest::option::of(text())) -> ParsedTrajectory {
        let mut segments = Vec::new();
        for (think, tool, call, result) in rounds {
            if let Some(t) = think {
                segments.push(Segment::think(t));
            }
            segments.push(Segment::tool_call(LOCAL_TOOLS[tool], call));
            segments.push(Segment::tool_result(result));
        }
        if let Some(t) = last {
            segments.push(Segment::think(t));
        }
        if let Some(a) = answer {
            segments.push(Segment::answer(a));
        }
        ParsedTrajectory { question: String::new(), segments, toolset: ToolSet::new(LOCAL_TOOLS) }
    }
}

const WORDS: &[&str] = &["bankim", "sanjib", "novel", "river", "the", "a", "palamau", "brother"];

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..6).prop_map(|w| w.join(" "))
}

prop_compose! {
    /// Local-agent trajectory with `Local Chunk Corpus` evidence lines.
    fn evidence_trajectory()(rounds in prop::collection::vec((phrase(), prop::collection::vec(phrase(), 0..5)), 1..4),
                             conclusion in proptest::option::of(phrase())) -> String {
        let mut out = String::new();
        for (think, items) in rounds {
            out.push_str(&format!("<think>{think}</think><chunk_search>q</chunk_search><result>"));
            let lines: Vec<String> = items.iter().map(|t| format!("Local Chunk Corpus: x {t}")).collect();
            out.push_str(&lines.join("\n\n"));
            out.push_str("</result>");
        }
        if let Some(c) = conclusion {
            out.push_str(&format!("<answer>{c}</answer>"));
        }
        out
    }
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(t in trajectory()) {
        let back = parse(&render(&t), &t.toolset).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn f1_bounded_and_symmetric(a in phrase(), b in phrase()) {
        let x = f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - f1(&b, &a)).abs() < 1e-12);
        if exact_match(&a, &b) == 1 && !normalize_answer(&a).is_empty() {
            prop_assert_eq!(x, 1.0);
        }
    }

    #[test]
    fn normalization_idempotent(s in "[ a-zA-Z.,'!-]{0,30}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once.clone());
    }

    #[test]
    fn reward_respects_gate(t in trajectory(), gold in phrase(), garbage in "[<>/a-z]{0,12}") {
        let text = format!("{}{}", render(&t), garbage);
        let r = compute_reward(&text, &[gold], &t.toolset, FormatMode::Lenient);
        prop_assert!((0.0..=1.0).contains(&r.reward));
        if !r.format.valid {
            prop_assert_eq!(r.reward, 0.0);
        } else if r.f1 == 0.0 {
            prop_assert!(r.reward <= 0.1 + 1e-12);
        } else {
            prop_assert_eq!(r.reward, r.f1);
        }
    }

    #[test]
    fn quotas_are_integer_ceilings(n in 0usize..50, alpha in 1u32..=100, beta in 0u32..=100, min in 0usize..4) {
        let step1 = step1_quota(n, f64::from(alpha), min);
        prop_assert_eq!(step1, ((alpha as usize * n).div_ceil(100)).max(min).min(n));
        prop_assert_eq!(step2_quota(n, f64::from(beta)), (beta as usize * n).div_ceil(100));
    }

    #[test]
    fn refined_set_is_ordered_subset(text in evidence_trajectory(), alpha in 1u32..=100, beta in 0u32..=100,
                                     other in proptest::option::of(phrase())) {
        let e = HashEmbedder::default();
        let t = parse(&text, &ToolSet::new(LOCAL_TOOLS)).unwrap();
        let rounds = to_rounds(&t).rounds;
        let cfg = RefinerConfig { alpha: f64::from(alpha), beta: f64::from(beta), min_per_round: 1 };
        let Ok(set) = refine(&t, other.as_deref(), &cfg, &e) else {
            prop_assert!(rounds.iter().all(|r| r.evidence.is_empty()));
            return Ok(());
        };
        let keys: Vec<(usize, usize)> = set.items.iter().map(|s| (s.evidence.round_index, s.evidence.rank)).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        for s in &set.items {
            let round = &rounds[s.evidence.round_index - 1];
            prop_assert_eq!(&round.evidence[s.evidence.rank - 1], &s.evidence);
        }
        for r in &rounds {
            let kept = keys.iter().filter(|k| k.0 == r.round_index).count();
            prop_assert!(kept >= r.evidence.len().min(1));
        }
        let again = refine(&t, other.as_deref(), &cfg, &e).unwrap();
        prop_assert_eq!(again, set);
    }
}

#[test]
fn full_percentages_keep_everything() {
    let text = "<think>a</think><chunk_search>q</chunk_search><result>Local Chunk Corpus: one\n\nLocal Chunk Corpus: two</result>\
<think>b</think><graph_search>q</graph_search><result>Local Knowledge Graph: three</result><answer>c</answer>";
    let t = parse(text, &ToolSet::new(LOCAL_TOOLS)).unwrap();
    let cfg = RefinerConfig { alpha: 100.0, beta: 100.0, min_per_round: 1 };
    assert_eq!(refine(&t, None, &cfg, &HashEmbedder::default()).unwrap().items.len(), 3);
}
