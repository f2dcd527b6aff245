//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The training criteria take about twenty
//! minutes on one core.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use chae::codec::special::EOS_ID;
use chae::codec::{
    assemble_input, pad_conditions, tokenize, ChaeCondition, ChaeSpec, EmotionLabel, Vocabulary,
};
use chae::corpus::{corpus_vocabulary, probe_names, synth_corpus, DEFAULT_TAU};
use chae::decoding::{
    beam_search, generate_sentence, greedy, top_k_sample, DecodeError, DecodingConfig, StepModel, Strategy,
};
use chae::eval::{
    bleu_n, character_segment, distinct_n, emotion_accuracy, judge_examples, perplexity, train_judge,
    EmotionJudge, JudgeConfig, JudgedSentence,
};
use chae::model::heads::{mixture_distribution, vocab_distribution, LOG_FLOOR};
use chae::model::{Model, ModelConfig, StepInfo, Supervision};
use chae::tensor::{Tape, Tensor};
use chae::training::{
    class_weights_from_counts, encode_all, example_class_weights, load_checkpoint, make_sentence_pairs,
    save_checkpoint, EncodedExample, TrainConfig, TrainExample, Trainer,
};
use chae_service::{Engine, SessionStore, StoreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{n:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradient_check() -> (f64, f64) {
    let t0 = Instant::now();
    let mut vocab = Vocabulary::base();
    for w in tokenize("tom went to the market . he wanted to catch thief fast city") {
        vocab.insert(&w);
    }
    assert_eq!(vocab.len(), 32);
    let config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 16,
        k: 2,
        ..ModelConfig::new(vocab.len())
    };
    let mut model = Model::new(config, 3).unwrap();
    let spec = pad_conditions(
        vec![ChaeCondition::new("tom", vec!["to catch the thief".into()], EmotionLabel::Anticipation)],
        2,
    )
    .unwrap();
    let input = assemble_input(&tokenize("tom went to the market ."), &spec, &vocab).unwrap();
    let mut target = vocab.encode(&tokenize("he wanted to catch the thief ."));
    target.push(EOS_ID);
    let alpha = [0.5, 1.0, 1.5, 1.0, 2.0, 1.0, 0.8, 1.2, 1.0];
    let emotions = [Some(EmotionLabel::Anticipation), Some(EmotionLabel::Fear)];

    let loss = |m: &Model, grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, grads);
        let sup = Supervision {
            input: &input,
            target: &target,
            emotions: &emotions,
        };
        let l = m.loss(&mut tape, &p, sup, &alpha).unwrap();
        let mut out = Vec::new();
        if grads {
            tape.backward(l.total).unwrap();
            out = p
                .vars()
                .iter()
                .zip(m.params().tensors())
                .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
                .collect();
        }
        (tape.value(l.total).item(), out)
    };
    let (_, analytic) = loss(&model, true);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        for j in 0..analytic[i].len() {
            let orig = model.params().tensors()[i].data()[j];
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig + eps;
            let up = loss(&model, false).0;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig - eps;
            let down = loss(&model, false).0;
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[i].data()[j], (up - down) / (2.0 * eps)));
        }
    }
    (worst, t0.elapsed().as_secs_f64())
}

/// Copy mass scattered onto vocabulary ids, accumulated by id.
fn scatter(vocab: usize, attn: &[f64], ids: &[Option<usize>]) -> Vec<f64> {
    let mut by_id: HashMap<usize, f64> = HashMap::new();
    for (j, id) in ids.iter().enumerate() {
        if let Some(id) = id {
            *by_id.entry(*id).or_insert(0.0) += attn[j];
        }
    }
    (0..vocab).map(|y| by_id.get(&y).copied().unwrap_or(0.0)).collect()
}

/// Real attention rows and copy gates from small random models, mixed with
/// vocabulary distributions from random decoder states.
fn mixture_validity() -> (usize, f64, usize, usize) {
    let stories = synth_corpus(3, 6);
    let vocab = corpus_vocabulary(&stories, probe_names(), 1);
    let pairs: Vec<TrainExample> = stories.iter().flat_map(|s| make_sentence_pairs(s, 2, DEFAULT_TAU)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut states, mut worst, mut voc_exact, mut copy_exact) = (0, 0.0f64, 0, 0);
    for seed in 0..10u64 {
        let config = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            ..ModelConfig::new(vocab.len())
        };
        let model = Model::new(config, seed).unwrap();
        let w = model.params().get(model.w_voc()).clone();
        let b = model.params().get(model.b_voc()).data().to_vec();
        for s in 0..100 {
            let ex = pairs[(seed as usize * 100 + s) % pairs.len()].encode(&vocab, 160).unwrap();
            let ids = ex.input.copy_targets();
            let enc = model.encode_input(ex.input).unwrap();
            let cut = rng.gen_range(0..ex.target.len());
            let info = model.step(&enc, &ex.target[..cut], 1.0).unwrap();
            let attn = info.attn.unwrap();
            let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p_voc = vocab_distribution(&h, &w, &b, rng.gen_range(0.2..2.0));
            let p = mixture_distribution(info.p_gen.unwrap(), &p_voc, &attn, &ids);
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            if p.iter().any(|&x| x < 0.0) {
                worst = f64::INFINITY;
            }
            if mixture_distribution(1.0, &p_voc, &attn, &ids) == p_voc {
                voc_exact += 1;
            }
            if mixture_distribution(0.0, &p_voc, &attn, &ids) == scatter(vocab.len(), &attn, &ids) {
                copy_exact += 1;
            }
            states += 1;
        }
    }
    (states, worst, voc_exact, copy_exact)
}

/// Next-token distributions keyed by prefix, seeded per table.
struct Table {
    vocab: usize,
    seed: u64,
}

impl Table {
    fn dist(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        for &t in prefix {
            h = (h ^ t as u64).wrapping_mul(0x0100_0000_01B3).wrapping_add(7);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let raw: Vec<f64> = (0..self.vocab).map(|_| rng.gen::<f64>().powi(3) + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }
}

impl StepModel for Table {
    fn next_distribution(&self, prefix: &[usize], _t: f64) -> Result<StepInfo, DecodeError> {
        Ok(StepInfo {
            probs: self.dist(prefix),
            p_gen: None,
            attn: None,
        })
    }
}

/// Every sequence ending in `</s>` or at the cap, best length-normalized
/// log probability first, ties to the smallest sequence.
fn exhaustive(t: &Table, max_len: usize) -> Vec<usize> {
    fn walk(t: &Table, max_len: usize, prefix: &mut Vec<usize>, logp: f64, best: &mut Option<(Vec<usize>, f64)>) {
        for (y, p) in t.dist(prefix).into_iter().enumerate() {
            prefix.push(y);
            let lp = logp + p.ln();
            if y == EOS_ID || prefix.len() == max_len {
                let s = lp / prefix.len() as f64;
                if best.as_ref().map_or(true, |(b, bs)| s > *bs || (s == *bs && prefix.as_slice() < b.as_slice())) {
                    *best = Some((prefix.clone(), s));
                }
            } else {
                walk(t, max_len, prefix, lp, best);
            }
            prefix.pop();
        }
    }
    let mut best = None;
    walk(t, max_len, &mut Vec::new(), 0.0, &mut best);
    best.unwrap().0
}

fn decoding_oracle() -> (usize, usize, usize, usize) {
    let (mut instances, mut beam_ok, mut beam1_ok, mut top1_ok) = (0, 0, 0, 0);
    for vocab in 2..=5usize {
        for max_len in 1..=4usize {
            for seed in 0..8u64 {
                let t = Table {
                    vocab,
                    seed: 1000 + seed * 37 + (vocab * 5 + max_len) as u64,
                };
                instances += 1;
                if beam_search(&t, max_len, vocab.pow(max_len as u32)).unwrap().tokens == exhaustive(&t, max_len) {
                    beam_ok += 1;
                }
                let g = greedy(&t, max_len).unwrap();
                if beam_search(&t, max_len, 1).unwrap().tokens == g.tokens {
                    beam1_ok += 1;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if top_k_sample(&t, max_len, 1, 0.7, &mut rng).unwrap().tokens == g.tokens {
                    top1_ok += 1;
                }
            }
        }
    }
    (instances, beam_ok, beam1_ok, top1_ok)
}

struct Desk {
    vocab: Vocabulary,
    pairs: Vec<TrainExample>,
    data: Vec<EncodedExample>,
    alpha: [f64; EmotionLabel::COUNT],
}

fn desk() -> Desk {
    let stories = synth_corpus(7, 50);
    let vocab = corpus_vocabulary(&stories, probe_names(), 1);
    let pairs: Vec<TrainExample> = stories.iter().flat_map(|s| make_sentence_pairs(s, 2, 0.5)).collect();
    let data = encode_all(&pairs, &vocab, ModelConfig::new(vocab.len()).max_len).unwrap();
    let alpha = example_class_weights(&pairs).unwrap();
    Desk {
        vocab,
        pairs,
        data,
        alpha,
    }
}

fn train_desk(d: &Desk, seed: u64, copy: bool, emo: bool) -> (Model, f64) {
    let t0 = Instant::now();
    let mut config = ModelConfig::new(d.vocab.len());
    config.enable_copy = copy;
    config.enable_emotion_loss = emo;
    let tc = TrainConfig {
        lr: 1e-3,
        weight_decay: 0.3,
        epochs: 80,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(config, seed).unwrap(), tc, d.alpha, d.vocab.hash()).unwrap();
    for _ in 0..80 {
        trainer.train_epoch(&d.data).unwrap();
    }
    (trainer.into_model(), t0.elapsed().as_secs_f64())
}

struct Probes {
    memorization: f64,
    name_swaps: usize,
    emotion_flips: usize,
    emotion_accuracy: f64,
}

fn probe(model: &Model, d: &Desk, judge: &EmotionJudge) -> Probes {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let greedy = DecodingConfig::greedy();
    let mut run = |chae: &ChaeSpec, context: &[String]| {
        let r = generate_sentence(model, &d.vocab, context, chae, &greedy, &mut rng).unwrap();
        (r.tokens.clone(), d.vocab.decode(r.sentence()))
    };

    let (mut hit, mut total) = (0, 0);
    for ex in &d.pairs {
        let (tokens, _) = run(&ex.chae, &ex.context);
        for (i, t) in d.vocab.encode(&ex.target).iter().enumerate() {
            total += 1;
            if tokens.get(i) == Some(t) {
                hit += 1;
            }
        }
    }

    let names = probe_names();
    let mut name_swaps = 0;
    for i in 0..100 {
        let ex = &d.pairs[(i * 7) % d.pairs.len()];
        let mut chae = ex.chae.clone();
        let name = names[i % names.len()];
        chae.condition_mut(0).unwrap().name = name.to_string();
        let (_, words) = run(&chae, &ex.context);
        if words.iter().any(|w| w == name) {
            name_swaps += 1;
        }
    }

    let mut emotion_flips = 0;
    let mut judged = Vec::new();
    for i in 0..100 {
        let ex = &d.pairs[(i * 7 + 3) % d.pairs.len()];
        let mut chae = ex.chae.clone();
        let old = chae.conditions()[0].emotion;
        let new = EmotionLabel::from_id((old.id() + 1 + i % 8) % EmotionLabel::COUNT).unwrap();
        chae.condition_mut(0).unwrap().emotion = new;
        let (_, words) = run(&chae, &ex.context);
        let active: Vec<&ChaeCondition> = chae.active_conditions().map(|(_, c)| c).collect();
        let others: Vec<&str> = active.iter().map(|c| c.name.as_str()).collect();
        let seg = character_segment(&words, &chae.conditions()[0].name, &others).unwrap_or(&words);
        if judge.predict(seg) == new {
            emotion_flips += 1;
        }
        judged.push(JudgedSentence {
            tokens: words,
            targets: active.iter().map(|c| (c.name.clone(), c.emotion)).collect(),
        });
    }
    Probes {
        memorization: hit as f64 / total as f64,
        name_swaps,
        emotion_flips,
        emotion_accuracy: emotion_accuracy(judge, &judged).unwrap(),
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn grams(s: &[String], n: usize) -> Vec<&[String]> {
    (0..(s.len() + 1).saturating_sub(n)).map(|i| &s[i..i + n]).collect()
}

fn brute_bleu(c: &[Vec<String>], r: &[Vec<String>], n: usize) -> f64 {
    let cl: usize = c.iter().map(Vec::len).sum();
    let rl: usize = r.iter().map(Vec::len).sum();
    if cl == 0 {
        return 0.0;
    }
    let mut prod = 1.0;
    for k in 1..=n {
        let (mut matched, mut total) = (0, 0);
        for (cs, rs) in c.iter().zip(r) {
            let cg = grams(cs, k);
            let mut pool = grams(rs, k);
            total += cg.len();
            for g in cg {
                if let Some(pos) = pool.iter().position(|x| *x == g) {
                    pool.swap_remove(pos);
                    matched += 1;
                }
            }
        }
        prod *= if matched == 0 { 1.0 / (total as f64 + 1.0) } else { matched as f64 / total as f64 };
    }
    let bp = if cl > rl { 1.0 } else { (1.0 - rl as f64 / cl as f64).exp() };
    100.0 * bp * prod.powf(1.0 / n as f64)
}

fn brute_distinct(c: &[Vec<String>], n: usize) -> f64 {
    let all: Vec<&[String]> = c.iter().flat_map(|s| grams(s, n)).collect();
    let mut unique: Vec<&[String]> = Vec::new();
    for g in &all {
        if !unique.contains(g) {
            unique.push(g);
        }
    }
    if all.is_empty() {
        0.0
    } else {
        unique.len() as f64 / all.len() as f64
    }
}

fn metric_oracles() -> (usize, usize, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let words = ["a", "b", "c", "d", "e"];
    let corpus = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<String>> {
        (0..n)
            .map(|_| (0..rng.gen_range(0..9)).map(|_| words[rng.gen_range(0..5)].to_string()).collect())
            .collect()
    };
    let mut exact = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let c = corpus(&mut rng, n);
        let r = corpus(&mut rng, n);
        let ok = (1..=4).all(|k| {
            (bleu_n(&c, &r, k).unwrap() - brute_bleu(&c, &r, k)).abs() < 1e-9
                && (distinct_n(&c, k).unwrap() - brute_distinct(&c, k)).abs() < 1e-9
        });
        if ok {
            exact += 1;
        }
    }
    let d1 = distinct_n(&[toks("the cat the cat")], 1).unwrap();
    let same = vec![toks("tom wanted to catch the thief .")];
    let b1 = bleu_n(&same, &same, 1).unwrap();
    (exact, 100, d1, b1)
}

fn perplexity_consistency(d: &Desk, model: &Model) -> f64 {
    let data = &d.data[..40];
    let (mut nll, mut tokens) = (0.0, 0usize);
    for ex in data {
        let enc = model.encode_input(ex.input.clone()).unwrap();
        for (row, &y) in model.teacher_forced(&enc, &ex.target).unwrap().iter().zip(&ex.target) {
            nll -= row[y].max(LOG_FLOOR).ln();
            tokens += 1;
        }
    }
    ((nll / tokens as f64).exp() - perplexity(model, data).unwrap()).abs()
}

fn checkpoint_resume(d: &Desk) -> (bool, bool) {
    let mut config = ModelConfig::new(d.vocab.len());
    config.d_model = 16;
    config.d_ff = 32;
    let tc = TrainConfig {
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let make = || Trainer::new(Model::new(config.clone(), 9).unwrap(), tc.clone(), d.alpha, d.vocab.hash()).unwrap();
    let data = &d.data[..24];
    let (mut straight, mut interrupted) = (make(), make());
    for _ in 0..5 {
        straight.train_next(data).unwrap();
        interrupted.train_next(data).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&interrupted.checkpoint(), &path).unwrap();
    drop(interrupted);
    let mut resumed = Trainer::resume(load_checkpoint(&path).unwrap(), tc.clone()).unwrap();
    let mut losses_equal = true;
    for _ in 0..9 {
        let a = straight.train_next(data).unwrap();
        let b = resumed.train_next(data).unwrap();
        losses_equal &= a.total.to_bits() == b.total.to_bits();
    }
    (losses_equal, straight.checkpoint().to_bytes() == resumed.checkpoint().to_bytes())
}

fn cond(name: &str, actions: &[&str], e: EmotionLabel) -> ChaeCondition {
    ChaeCondition::new(name, actions.iter().map(|a| a.to_string()).collect(), e)
}

fn service_invariants() -> (usize, usize) {
    let stories = synth_corpus(3, 10);
    let vocab = corpus_vocabulary(&stories, probe_names(), 1);
    let config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 16,
        ..ModelConfig::new(vocab.len())
    };
    let engine = Arc::new(Engine::new(Model::new(config, 5).unwrap(), vocab));
    let store = || SessionStore::new(Some(engine.clone()), StoreConfig::default()).unwrap();
    let specs = [
        vec![cond("People", &[], EmotionLabel::Fear), cond("Man", &["to catch the thief"], EmotionLabel::Anger)],
        vec![cond("People", &[], EmotionLabel::Fear), cond("Man", &[], EmotionLabel::Joy)],
        vec![cond("People", &[], EmotionLabel::Fear), cond("Tom", &["to catch the thief"], EmotionLabel::Anger)],
    ];
    let thief = "A polite thief was making robberies in the small town.";

    let shared = Arc::new(store());
    let short = DecodingConfig {
        max_len: 6,
        ..DecodingConfig::greedy()
    };
    let id = shared.create(thief, short).unwrap();
    let handles: Vec<_> = (0..16)
        .map(|t| {
            let (s, id, specs) = (shared.clone(), id.clone(), specs.clone());
            thread::spawn(move || {
                let mut bad = 0;
                for j in 0..4 {
                    s.step(&id, specs[(t + j) % 3].clone(), None).unwrap();
                    let snap = s.get(&id).unwrap();
                    if snap.context != snap.expected_context() {
                        bad += 1;
                    }
                }
                bad
            })
        })
        .collect();
    let mut corrupt: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    let t = shared.get(&id).unwrap();
    if t.history.len() != 64 || t.context != t.expected_context() || t.sentences.len() != 64 {
        corrupt += 1;
    }

    let config = |i: u64| DecodingConfig {
        strategy: if i % 2 == 0 { Strategy::Topk } else { Strategy::Greedy },
        max_len: 5,
        seed: i,
        ..DecodingConfig::default()
    };
    let beginning = |i: u64| format!("{} went to the park .", ["Tom", "Anna", "Ben", "Kate"][i as usize % 4]);
    let many = Arc::new(store());
    let ids: Vec<String> = (0..100).map(|i| many.create(&beginning(i), config(i)).unwrap()).collect();
    let workers: Vec<_> = (0..4)
        .map(|w| {
            let (s, ids, specs) = (many.clone(), ids.clone(), specs.clone());
            thread::spawn(move || {
                for round in 0..3 {
                    for (i, id) in ids.iter().enumerate().filter(|(i, _)| i % 4 == w) {
                        s.step(id, specs[(i + round) % 3].clone(), None).unwrap();
                    }
                }
            })
        })
        .collect();
    for h in workers {
        h.join().unwrap();
    }
    let mut independent = 0;
    for (i, id) in ids.iter().enumerate() {
        let alone = store();
        let solo = alone.create(&beginning(i as u64), config(i as u64)).unwrap();
        for round in 0..3 {
            alone.step(&solo, specs[(i + round) % 3].clone(), None).unwrap();
        }
        let (a, b) = (many.get(id).unwrap(), alone.get(&solo).unwrap());
        if a.sentences == b.sentences && a.context == b.context && a.context == a.expected_context() {
            independent += 1;
        }
    }
    (corrupt, independent)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };

    let (err, secs) = gradient_check();
    r.line(
        1,
        "gradient check",
        err < 1e-3 && secs < 60.0,
        format!("max rel err {err:.2e} (< 1e-3), {secs:.1}s (< 60s)"),
    );

    let (states, worst, voc, copy) = mixture_validity();
    r.line(
        2,
        "mixture validity",
        states >= 1000 && worst <= 1e-9 && voc == states && copy == states,
        format!("{states} states, max |sum-1| {worst:.1e} (<= 1e-9), p_gen=1 exact {voc}, p_gen=0 exact {copy}"),
    );

    let w = class_weights_from_counts(&[50, 25, 15, 10]).unwrap();
    let n = 100.0;
    let oracle = [n / (4.0 * 50.0), n / (4.0 * 25.0), n / (4.0 * 15.0), n / (4.0 * 10.0)];
    let ok = w.len() == 4
        && w.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12)
        && w[0] == 0.5
        && w[1] == 1.0
        && (w[2] - 1.6667).abs() < 1e-4
        && w[3] == 2.5;
    r.line(3, "class weights", ok, format!("{w:.4?} vs [0.5, 1.0, 1.6667, 2.5]"));

    let (inst, beam, beam1, top1) = decoding_oracle();
    r.line(
        4,
        "decoding oracle",
        inst >= 100 && beam == inst && beam1 == inst && top1 == inst,
        format!("{inst} tables: beam=exhaustive {beam}, beam1=greedy {beam1}, top1=greedy {top1}"),
    );

    let d = desk();
    let mut judge_config = JudgeConfig::default();
    judge_config.seed = 0;
    let judge = train_judge(&judge_examples(&synth_corpus(1, 40), DEFAULT_TAU), &judge_config).unwrap();
    let (full0, secs) = train_desk(&d, 0, true, true);
    let p0 = probe(&full0, &d, &judge);
    r.line(
        5,
        "overfit and control",
        secs < 600.0 && p0.memorization >= 0.95 && p0.name_swaps >= 90 && p0.emotion_flips >= 80,
        format!(
            "train {secs:.0}s (< 600s), memorization {:.3} (>= 0.95), name swap {}/100 (>= 90), emotion flip {}/100 (>= 80)",
            p0.memorization, p0.name_swaps, p0.emotion_flips
        ),
    );

    let (mut full, mut no_copy, mut no_emo) = (vec![p0], Vec::new(), Vec::new());
    for seed in 0..5u64 {
        if seed > 0 {
            full.push(probe(&train_desk(&d, seed, true, true).0, &d, &judge));
        }
        no_copy.push(probe(&train_desk(&d, seed, false, true).0, &d, &judge));
        no_emo.push(probe(&train_desk(&d, seed, true, false).0, &d, &judge));
        println!(
            "     seed {seed}: name swap full {} w/o copy {}, emotion accuracy full {:.3} w/o emo {:.3}",
            full[seed as usize].name_swaps,
            no_copy[seed as usize].name_swaps,
            full[seed as usize].emotion_accuracy,
            no_emo[seed as usize].emotion_accuracy
        );
    }
    let swaps = |v: &[Probes]| mean(&v.iter().map(|p| p.name_swaps as f64).collect::<Vec<_>>());
    let accs = |v: &[Probes]| mean(&v.iter().map(|p| p.emotion_accuracy).collect::<Vec<_>>());
    let (sf, sc, af, ae) = (swaps(&full), swaps(&no_copy), accs(&full), accs(&no_emo));
    r.line(
        6,
        "ablation direction",
        sf > sc && af > ae,
        format!("mean name swap full {sf:.1} > w/o copy {sc:.1}, mean emotion accuracy full {af:.3} > w/o emo {ae:.3}"),
    );

    let (exact, total, d1, b1) = metric_oracles();
    r.line(
        7,
        "metric oracles",
        exact == total && d1 == 0.5 && (b1 - 100.0).abs() < 1e-9,
        format!("{exact}/{total} corpora match brute force, D-1 {d1} (0.5), B-1 {b1} (100)"),
    );

    let gap = perplexity_consistency(&d, &full0);
    r.line(8, "perplexity consistency", gap <= 1e-9, format!("|exp(mean nll) - ppl| {gap:.1e} (<= 1e-9)"));

    let (losses, bytes) = checkpoint_resume(&d);
    r.line(
        9,
        "checkpoint resume",
        losses && bytes,
        format!("losses bit-identical {losses}, final state bit-identical {bytes}"),
    );

    let (corrupt, independent) = service_invariants();
    r.line(
        10,
        "service invariants",
        corrupt == 0 && independent == 100,
        format!("16 steppers: {corrupt} context violations (0), independent sessions {independent}/100"),
    );

    println!("{} of 10 criteria failed", r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
