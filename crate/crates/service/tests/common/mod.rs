#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use chae::codec::{ChaeCondition, EmotionLabel};
use chae::corpus::{corpus_vocabulary, probe_names, synth_corpus, training_names};
use chae::model::{Model, ModelConfig};
use chae::training::{encode_all, example_class_weights, make_sentence_pairs, TrainConfig, Trainer};
use chae_service::Engine;

/// Untrained and small; fast enough for stress tests.
pub fn tiny_engine() -> Arc<Engine> {
    static E: OnceLock<Arc<Engine>> = OnceLock::new();
    E.get_or_init(|| {
        let stories = synth_corpus(3, 10);
        let vocab = corpus_vocabulary(&stories, probe_names(), 1);
        let mut c = ModelConfig::new(vocab.len());
        c.d_model = 8;
        c.n_heads = 2;
        c.n_enc_layers = 1;
        c.n_dec_layers = 1;
        c.d_ff = 16;
        Arc::new(Engine::new(Model::new(c, 5).unwrap(), vocab))
    })
    .clone()
}

/// Trained at desk scale with every synthetic name in the vocabulary.
pub fn trained_engine() -> Arc<Engine> {
    static E: OnceLock<Arc<Engine>> = OnceLock::new();
    E.get_or_init(|| {
        let stories = synth_corpus(7, 50);
        let extra: Vec<&str> = probe_names().iter().chain(training_names()).copied().collect();
        let vocab = corpus_vocabulary(&stories, &extra, 1);
        let pairs: Vec<_> = stories.iter().flat_map(|s| make_sentence_pairs(s, 2, 0.5)).collect();
        let c = ModelConfig::new(vocab.len());
        let data = encode_all(&pairs, &vocab, c.max_len).unwrap();
        let tc = TrainConfig {
            lr: 1e-3,
            weight_decay: 0.3,
            epochs: 80,
            ..TrainConfig::default()
        };
        let alpha = example_class_weights(&pairs).unwrap();
        let mut trainer = Trainer::new(Model::new(c, 0).unwrap(), tc, alpha, vocab.hash()).unwrap();
        for _ in 0..80 {
            trainer.train_epoch(&data).unwrap();
        }
        Arc::new(Engine::new(trainer.into_model(), vocab))
    })
    .clone()
}

pub const THIEF: &str = "A polite thief was making robberies in the small town.";

pub fn cond(name: &str, actions: &[&str], emotion: EmotionLabel) -> ChaeCondition {
    ChaeCondition::new(name, actions.iter().map(|a| a.to_string()).collect(), emotion)
}

pub fn chae1() -> Vec<ChaeCondition> {
    vec![
        cond("People", &[], EmotionLabel::Fear),
        cond("Man", &["to catch the thief"], EmotionLabel::Anger),
    ]
}

pub fn chae2() -> Vec<ChaeCondition> {
    vec![cond("People", &[], EmotionLabel::Fear), cond("Man", &[], EmotionLabel::Joy)]
}

pub fn chae3() -> Vec<ChaeCondition> {
    vec![
        cond("People", &[], EmotionLabel::Fear),
        cond("Tom", &["to catch the thief"], EmotionLabel::Anger),
    ]
}
