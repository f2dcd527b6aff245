mod common;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chae::codec::{serialize_chae, tokenize, EmotionLabel};
use chae::decoding::{generate_story, DecodingConfig, StorySpec, Strategy};
use chae_service::{ServiceError, SessionStore, StoreConfig};
use common::*;
use serde_json::json;

fn store() -> SessionStore {
    SessionStore::new(Some(tiny_engine()), StoreConfig::default()).unwrap()
}

fn short() -> DecodingConfig {
    DecodingConfig {
        max_len: 6,
        ..DecodingConfig::greedy()
    }
}

fn assert_consistent(store: &SessionStore, id: &str) {
    let t = store.get(id).unwrap();
    assert_eq!(t.context, t.expected_context());
    assert_eq!(t.history.len(), t.sentences.len());
    for (i, e) in t.history.iter().enumerate() {
        assert_eq!(e.outcome.index, i);
        assert_eq!(e.outcome.sentence, t.sentences[i]);
    }
}

#[test]
fn create_tokenizes_the_beginning() {
    let s = store();
    let id = s.create(THIEF, DecodingConfig::default()).unwrap();
    let t = s.get(&id).unwrap();
    assert_eq!(t.beginning, "a polite thief was making robberies in the small town .");
    assert_eq!(t.context, t.beginning);
    assert_eq!(tokenize(&t.context).iter().filter(|w| *w == ".").count(), 1);
    assert!(t.history.is_empty());
}

#[test]
fn create_guards() {
    let s = store();
    assert!(matches!(s.create("   ", DecodingConfig::default()), Err(ServiceError::BadRequest { .. })));
    let bad = DecodingConfig {
        top_k: 0,
        ..DecodingConfig::default()
    };
    assert_eq!(s.create(THIEF, bad).unwrap_err().status(), 400);
    let a = s.create(THIEF, DecodingConfig::default()).unwrap();
    let b = s.create(THIEF, DecodingConfig::default()).unwrap();
    assert_ne!(a, b);

    let empty = SessionStore::new(None, StoreConfig::default()).unwrap();
    assert_eq!(empty.create(THIEF, DecodingConfig::default()), Err(ServiceError::Unavailable));
    assert_eq!(ServiceError::Unavailable.status(), 503);
}

#[test]
fn greedy_steps_on_equal_sessions_agree() {
    let s = store();
    let a = s.create(THIEF, short()).unwrap();
    let b = s.create(THIEF, short()).unwrap();
    let x = s.step(&a, chae1(), None).unwrap();
    let y = s.step(&b, chae1(), None).unwrap();
    assert_eq!(x, y);
    assert_eq!(x.emotions.len(), 2);
    assert_eq!(x.emotions[0].char, "People");
    assert_eq!(x.p_gen_trace.len(), x.token_probs.len());
}

#[test]
fn step_reports_missing_sessions() {
    let s = store();
    assert_eq!(s.step("nope", chae1(), None).unwrap_err().status(), 404);
    let id = s.create(THIEF, short()).unwrap();
    s.delete(&id).unwrap();
    assert_eq!(s.step(&id, chae1(), None).unwrap_err(), ServiceError::NotFound(id.clone()));
    assert_eq!(s.get(&id).unwrap_err().status(), 404);
    assert_eq!(s.delete(&id).unwrap_err().status(), 404);
}

#[test]
fn malformed_chae_names_its_position() {
    let s = store();
    let id = s.create(THIEF, short()).unwrap();
    let mut c = chae1();
    c[1].name = "  ".into();
    match s.step(&id, c, None).unwrap_err() {
        ServiceError::BadRequest { position, .. } => assert_eq!(position, Some(1)),
        e => panic!("{e:?}"),
    }
    let three = vec![chae1()[0].clone(), chae1()[1].clone(), chae2()[1].clone()];
    match s.step(&id, three, None).unwrap_err() {
        ServiceError::BadRequest { position, .. } => assert_eq!(position, Some(2)),
        e => panic!("{e:?}"),
    }
    assert_eq!(s.step(&id, vec![], None).unwrap_err().status(), 400);
    assert!(s.get(&id).unwrap().history.is_empty());
}

#[test]
fn serialized_text_parses_with_positions() {
    let ok = chae_service::parse_chae_text("<SEP> <soc> People <soa> <no_action> <soe> fear").unwrap();
    assert_eq!(ok, vec![cond("people", &[], EmotionLabel::Fear)]);
    match chae_service::parse_chae_text("<SEP> <soc> tom <soa> <no_action> <soe> elated") {
        Err(ServiceError::BadRequest { position, .. }) => assert_eq!(position, Some(6)),
        e => panic!("{e:?}"),
    }
}

#[test]
fn undo_restores_the_previous_context() {
    let s = store();
    let id = s.create(THIEF, short()).unwrap();
    assert!(matches!(s.undo(&id), Err(ServiceError::Conflict(_))));
    assert_eq!(s.undo(&id).unwrap_err().status(), 409);
    s.step(&id, chae1(), None).unwrap();
    let before = s.get(&id).unwrap();
    s.step(&id, chae2(), None).unwrap();
    let after = s.undo(&id).unwrap();
    assert_eq!(after.context, before.context);
    assert_eq!(after.history, before.history);
}

#[test]
fn what_if_keeps_only_the_replacement() {
    let s = store();
    let id = s.create(THIEF, short()).unwrap();
    let a = s.step(&id, chae1(), None).unwrap();
    s.undo(&id).unwrap();
    let b = s.step(&id, chae2(), None).unwrap();
    let t = s.get(&id).unwrap();
    assert_eq!(t.history.len(), 1);
    assert_eq!(t.sentences, vec![b.sentence.clone()]);
    assert_eq!(t.history[0].chae, chae2());
    assert_eq!(t.context, format!("{} {}", t.beginning, b.sentence).trim_end());
    let _ = a;
}

#[test]
fn history_counts_steps_and_snapshots_are_stable() {
    let s = store();
    let id = s.create(THIEF, short()).unwrap();
    for _ in 0..4 {
        s.step(&id, chae1(), None).unwrap();
    }
    let t = s.get(&id).unwrap();
    assert_eq!(t.history.len(), 4);
    assert_eq!(s.get(&id).unwrap(), t);
    assert_consistent(&s, &id);
}

#[test]
fn sampled_steps_replay_after_undo() {
    let s = store();
    let cfg = DecodingConfig {
        max_len: 8,
        seed: 11,
        ..DecodingConfig::default()
    };
    let id = s.create(THIEF, cfg).unwrap();
    let first = s.step(&id, chae1(), None).unwrap();
    s.undo(&id).unwrap();
    assert_eq!(s.step(&id, chae1(), None).unwrap(), first);
}

#[test]
fn overrides_apply_to_one_step() {
    let s = store();
    let id = s.create(THIEF, DecodingConfig::greedy()).unwrap();
    let out = s.step(&id, chae1(), Some(&json!({"max_len": 3}))).unwrap();
    assert!(out.token_probs.len() <= 3);
    assert_eq!(s.get(&id).unwrap().config, DecodingConfig::greedy());
    assert_eq!(s.step(&id, chae1(), Some(&json!({"beam": 2}))).unwrap_err().status(), 400);
    assert_eq!(s.step(&id, chae1(), Some(&json!({"top_k": 0}))).unwrap_err().status(), 400);
    assert_eq!(s.step(&id, chae1(), Some(&json!([1]))).unwrap_err().status(), 400);
    assert_eq!(s.get(&id).unwrap().history.len(), 1);
}

#[test]
fn transcript_replays_through_the_story_generator() {
    let s = store();
    let id = s.create(THIEF, short()).unwrap();
    for c in [chae1(), chae2(), chae3()] {
        s.step(&id, c, None).unwrap();
    }
    let t = s.get(&id).unwrap();
    let spec = StorySpec::from_json(&t.story_spec().to_json()).unwrap();
    assert_eq!(spec.chae, vec![chae1(), chae2(), chae3()]);
    let e = tiny_engine();
    let story = generate_story(&e.model, &e.vocab, &spec.beginning, &spec.specs(2).unwrap(), &short()).unwrap();
    assert_eq!(story.sentences, t.sentences);
}

#[test]
fn echo_matches_the_codec() {
    let s = store();
    let tokens = s.serialize(chae3()).unwrap();
    let spec = chae::codec::pad_conditions(chae3(), 2).unwrap();
    assert_eq!(tokens, serialize_chae(&spec).unwrap());
    let one = s.serialize(vec![chae3()[1].clone()]).unwrap();
    assert_eq!(
        one.join(" "),
        "<SEP> <soc> tom <soa> to catch the thief <soe> anger <SEP> <soc> none <soa> <no_action> <soe> neutral"
    );
}

#[test]
fn idle_sessions_expire() {
    let cfg = StoreConfig {
        ttl: Duration::from_millis(30),
        log_path: None,
    };
    let s = SessionStore::new(Some(tiny_engine()), cfg).unwrap();
    let a = s.create(THIEF, short()).unwrap();
    let b = s.create(THIEF, short()).unwrap();
    assert_eq!(s.len(), 2);
    thread::sleep(Duration::from_millis(60));
    assert_eq!(s.get(&a).unwrap_err().status(), 404);
    assert_eq!(s.sweep(), 1);
    assert!(s.is_empty());
    assert_eq!(s.get(&b).unwrap_err().status(), 404);
}

#[test]
fn the_log_restores_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let cfg = StoreConfig {
        log_path: Some(path.clone()),
        ..StoreConfig::default()
    };
    let (keep, gone, snapshot) = {
        let s = SessionStore::new(Some(tiny_engine()), cfg.clone()).unwrap();
        let keep = s.create(THIEF, short()).unwrap();
        let gone = s.create("Tom went home.", short()).unwrap();
        s.step(&keep, chae1(), None).unwrap();
        s.step(&keep, chae2(), None).unwrap();
        s.undo(&keep).unwrap();
        s.step(&keep, chae3(), None).unwrap();
        s.step(&gone, chae3(), None).unwrap();
        s.delete(&gone).unwrap();
        (keep.clone(), gone, s.get(&keep).unwrap())
    };
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, 8);
    let s = SessionStore::new(Some(tiny_engine()), cfg).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.get(&keep).unwrap(), snapshot);
    assert_eq!(s.get(&gone).unwrap_err().status(), 404);
    s.step(&keep, chae1(), None).unwrap();
    assert_consistent(&s, &keep);
}

#[test]
fn sixteen_concurrent_steppers_keep_the_context_intact() {
    let s = Arc::new(store());
    let id = s.create(THIEF, short()).unwrap();
    let per = 4;
    let handles: Vec<_> = (0..16)
        .map(|t| {
            let s = Arc::clone(&s);
            let id = id.clone();
            thread::spawn(move || {
                let mut seen = Vec::new();
                for j in 0..per {
                    let c = if (t + j) % 2 == 0 { chae1() } else { chae3() };
                    let out = s.step(&id, c, None).unwrap();
                    let snap = s.get(&id).unwrap();
                    assert_eq!(snap.context, snap.expected_context());
                    seen.push(out);
                }
                seen
            })
        })
        .collect();
    let mut outcomes: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    outcomes.sort_by_key(|o| o.index);
    let t = s.get(&id).unwrap();
    assert_eq!(t.history.len(), 16 * per);
    for (i, o) in outcomes.iter().enumerate() {
        assert_eq!(o.index, i);
        assert_eq!(&t.history[i].outcome, o);
    }
    assert_consistent(&s, &id);
}

#[test]
fn a_hundred_sessions_stay_independent() {
    let specs = [chae1(), chae2(), chae3()];
    let config = |i: u64| DecodingConfig {
        strategy: if i % 2 == 0 { Strategy::Topk } else { Strategy::Greedy },
        max_len: 5,
        seed: i,
        ..DecodingConfig::default()
    };
    let beginning = |i: u64| format!("{} {}", ["Tom", "Anna", "Ben", "Kate"][i as usize % 4], "went to the park .");

    let shared = Arc::new(store());
    let ids: Vec<String> = (0..100).map(|i| shared.create(&beginning(i), config(i)).unwrap()).collect();
    let handles: Vec<_> = (0..4)
        .map(|w| {
            let s = Arc::clone(&shared);
            let ids = ids.clone();
            let specs = specs.clone();
            thread::spawn(move || {
                for round in 0..3 {
                    for (i, id) in ids.iter().enumerate().filter(|(i, _)| i % 4 == w) {
                        s.step(id, specs[(i + round) % 3].clone(), None).unwrap();
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    for (i, id) in ids.iter().enumerate() {
        let alone = store();
        let solo = alone.create(&beginning(i as u64), config(i as u64)).unwrap();
        for round in 0..3 {
            alone.step(&solo, specs[(i + round) % 3].clone(), None).unwrap();
        }
        let (a, b) = (shared.get(id).unwrap(), alone.get(&solo).unwrap());
        assert_eq!(a.sentences, b.sentences, "session {i}");
        assert_eq!(a.context, b.context);
        assert_eq!(a.context, a.expected_context());
    }
}

#[test]
fn tom_appears_when_asked_for() {
    let s = SessionStore::new(Some(trained_engine()), StoreConfig::default()).unwrap();
    let id = s.create(THIEF, DecodingConfig::greedy()).unwrap();
    let out = s.step(&id, chae3(), None).unwrap();
    assert!(out.tokens.iter().any(|w| w == "tom"), "{}", out.sentence);
}
