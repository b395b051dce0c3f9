mod common;

use std::collections::BTreeSet;

use evidence_qa::clients::{fingerprint, Detection, FrameRef, Op};
use evidence_qa::eval::{score, LabeledItem};
use evidence_qa::inference::{parse_choice, select_frames, Prediction};
use evidence_qa::retrieval::{Match, RetrievedEvidence};
use evidence_qa::sampling::{plan_chunks, plan_frames, ChunkSpan, Millis};
use evidence_qa::tasks::{Task, KNOWN_TASKS};
use evidence_qa::visual::{BBox, VisualDb};
use proptest::prelude::*;
use rand::SeedableRng;

fn bbox() -> BBox {
    BBox::new(0.0, 0.0, 0.5, 0.5).unwrap()
}

proptest! {
    #[test]
    fn chunks_tile_the_duration(duration in 0.001f64..36_000.0, chunk in 0.5f64..3_600.0) {
        let spans = plan_chunks(duration, chunk).unwrap();
        let total = Millis::from_secs_f64(duration).unwrap().0;
        prop_assert_eq!(spans[0].start.0, 0);
        prop_assert_eq!(spans.last().unwrap().end.0, total);
        for w in spans.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        let covered: u64 = spans.iter().map(|s| s.len_ms()).sum();
        prop_assert_eq!(covered, total);
    }

    #[test]
    fn frames_stay_inside_and_repeat(start in 0u64..1_000_000, len in 1u64..700_000, fps in 0.01f64..30.0) {
        let span = ChunkSpan::new(Millis(start), Millis(start + len), 0).unwrap();
        let a = plan_frames(&span, fps).unwrap();
        let b = plan_frames(&span, fps).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|t| span.contains(*t)));
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn frame_selection_respects_budget(
        stamps in proptest::collection::btree_set(0u64..10_000_000, 0..200),
        budget in 1usize..64,
        fallback_len in 1u64..10_000_000,
    ) {
        let timestamps: Vec<Millis> = stamps.iter().map(|&t| Millis(t)).collect();
        let matches = timestamps.iter().map(|&t| Match { timestamp: t, bbox: bbox(), similarity: 0.5 }).collect();
        let ev = RetrievedEvidence { timestamps: timestamps.clone(), matches };
        let span = ChunkSpan::new(Millis(0), Millis(fallback_len), 0).unwrap();
        let picked = select_frames(&ev, &span, budget);
        prop_assert!(picked.len() <= budget);
        prop_assert!(picked.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        if timestamps.is_empty() {
            prop_assert!(picked.iter().all(|f| span.contains(f.timestamp) && f.bbox.is_none()));
            prop_assert!(!picked.is_empty());
        } else {
            prop_assert_eq!(picked.len(), timestamps.len().min(budget));
            let n = timestamps.len();
            for (i, f) in picked.iter().enumerate() {
                let want = if n <= budget { i } else { i * n / budget };
                prop_assert_eq!(f.timestamp, timestamps[want]);
                prop_assert!(f.bbox.is_some());
            }
        }
    }

    #[test]
    fn stored_scores_clear_the_threshold(
        scores in proptest::collection::vec(0.0f32..=1.0, 0..60),
        threshold in 0.0f32..=1.0,
    ) {
        let mut db = VisualDb::with_threshold(3, threshold).unwrap();
        let mut kept = 0;
        for (i, s) in scores.iter().enumerate() {
            let det = Detection { bbox: bbox(), score: *s, embedding: vec![*s, 1.0, 0.0] };
            kept += db.ingest_detections("v", Millis((i / 3) as u64 * 1000), vec![det]).unwrap();
        }
        prop_assert!(db.iter().all(|p| p.proposal.score >= threshold));
        prop_assert_eq!(db.proposal_count(), kept);
        let sum: usize = db.groups("v").iter().map(|g| g.proposals.len()).sum();
        prop_assert_eq!(sum, kept);
        prop_assert!(db.groups("v").iter().all(|g| !g.proposals.is_empty()));
        prop_assert!(db.groups("v").windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn visual_round_trip(seed in any::<u64>(), dim in 1usize..24) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let r = common::random_db(&mut rng, 200, dim);
        let back = VisualDb::read_from(&r.db.to_bytes()[..]).unwrap();
        prop_assert!(back.bit_eq(&r.db));
    }

    #[test]
    fn semantic_round_trip(seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let db = common::random_semantic(&mut rng);
        let mut bytes = Vec::new();
        evidence_qa::semantic::write_semantic(&mut bytes, &db).unwrap();
        prop_assert_eq!(evidence_qa::semantic::read_semantic(&bytes[..]).unwrap(), db);
    }

    #[test]
    fn letters_in_prose_are_found(n in 2usize..8, pick in 0usize..8, lead in "[a-z ]{0,12}", lower in any::<bool>()) {
        let pick = pick % n;
        let choices: Vec<String> = (0..n).map(|i| format!("option number {i}")).collect();
        let letter = (b'A' + pick as u8) as char;
        let letter = if lower { letter.to_ascii_lowercase() } else { letter };
        // Drop lone letters from the lead-in so the pick is the first one.
        let lead: String = lead.split(' ').filter(|w| w.len() != 1).collect::<Vec<_>>().join(" ");
        let reply = format!("{lead} ({letter})");
        prop_assert_eq!(parse_choice(&reply, &choices).unwrap(), pick);
    }

    #[test]
    fn fingerprints_ignore_paths(text in ".{0,40}", ms in any::<u32>(), a in "[a-z/]{1,20}", b in "[a-z/]{1,20}") {
        let fa = [FrameRef::video_frame("v", ms as u64, a)];
        let fb = [FrameRef::video_frame("v", ms as u64, b)];
        prop_assert_eq!(fingerprint(Op::Summarize, &text, &fa), fingerprint(Op::Summarize, &text, &fb));
        prop_assert_ne!(fingerprint(Op::Summarize, &text, &fa), fingerprint(Op::AnswerChat, &text, &fa));
    }
}

fn labeled(specs: &[(usize, usize, Option<usize>)]) -> (Vec<Prediction>, Vec<LabeledItem>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (i, &(task, gold, pred)) in specs.iter().enumerate() {
        let (name, category) = KNOWN_TASKS[task % KNOWN_TASKS.len()];
        let id = format!("q{i}");
        labels.push(LabeledItem { question_id: id.clone(), task: Task::new(name), category, gold_index: gold });
        if let Some(p) = pred {
            preds.push(Prediction { question_id: id, choice_index: Some(p), fallback_used: false });
        }
    }
    (preds, labels)
}

fn item() -> impl Strategy<Value = (usize, usize, Option<usize>)> {
    (0usize..30, 0usize..4, proptest::option::of(0usize..4))
}

proptest! {
    #[test]
    fn report_ignores_prediction_order(specs in proptest::collection::vec(item(), 1..80), seed in any::<u64>()) {
        let (mut preds, labels) = labeled(&specs);
        let a = score(&preds, &labels).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut preds[..], &mut rng);
        prop_assert_eq!(score(&preds, &labels).unwrap(), a);
    }

    #[test]
    fn answering_a_missing_question_moves_scores_one_way(
        specs in proptest::collection::vec(item(), 1..80),
        which in any::<prop::sample::Index>(),
        correct in any::<bool>(),
    ) {
        let (preds, labels) = labeled(&specs);
        let answered: BTreeSet<&str> = preds.iter().map(|p| p.question_id.as_str()).collect();
        let open: Vec<&LabeledItem> = labels.iter().filter(|l| !answered.contains(l.question_id.as_str())).collect();
        prop_assume!(!open.is_empty());
        let target = open[which.index(open.len())];
        let before = score(&preds, &labels).unwrap();
        let mut more = preds.clone();
        let choice = if correct { target.gold_index } else { (target.gold_index + 1) % 4 };
        more.push(Prediction { question_id: target.question_id.clone(), choice_index: Some(choice), fallback_used: false });
        let after = score(&more, &labels).unwrap();
        for (t, s) in &before.per_task {
            let (b, a) = (s.accuracy, after.per_task[t].accuracy);
            prop_assert!(if correct { a >= b } else { a <= b }, "task {} moved the wrong way", t);
        }
        for (c, b) in &before.per_category {
            let a = after.per_category[c];
            prop_assert!(if correct { a >= *b } else { a <= *b }, "category {:?} moved the wrong way", c);
        }
        prop_assert!(if correct { after.overall >= before.overall } else { after.overall <= before.overall }, "overall moved the wrong way");
    }

    #[test]
    fn sibling_task_sizes_do_not_weight_the_category(copies in 1usize..20) {
        // Two 3D Perception tasks at 100% and 0%; the category stays at 50
        // however many questions the first task has.
        let mut specs = vec![(23usize, 0usize, Some(0usize)); copies];
        specs.push((24, 0, Some(1)));
        let (preds, labels) = labeled(&specs);
        let r = score(&preds, &labels).unwrap();
        prop_assert_eq!(r.per_category[&evidence_qa::tasks::Category::Perception3d], 50.0);
    }
}
