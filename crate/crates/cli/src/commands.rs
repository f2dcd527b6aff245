use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chae::codec::{EmotionLabel, Vocabulary};
use chae::corpus::{corpus_vocabulary, load_corpus, split_pairs, stats, synth_corpus, write_corpus, AnnotatedStory};
use chae::decoding::{generate_story, StorySpec};
use chae::eval::{evaluate, judge_examples, train_judge, EmotionJudge, JudgeConfig};
use chae::model::Model;
use chae::training::{
    encode_all, example_class_weights, load_checkpoint, save_checkpoint, train_loop, TrainError, Trainer,
};
use chae_service::{Engine, SessionStore, StoreConfig};

use crate::config::{CliConfig, Stage};
use crate::{Cli, CliError, Command, DecodeArgs, EvalArgs, GenerateArgs, ModelArgs, ServeArgs, SplitName, StatsArgs,
    SynthArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    config.set_seed(seed);
    match cli.command {
        Command::Train(a) => train(config, a),
        Command::Generate(a) => generate(config, a),
        Command::Eval(a) => eval(config, a),
        Command::Stats(a) => corpus_stats(config, a),
        Command::Synth(a) => synth(config, a),
        Command::Serve(a) => serve(config, a),
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: impl std::fmt::Display) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("vocab")
}

fn apply_decoding(config: &mut CliConfig, d: &DecodeArgs) -> Result<()> {
    let c = &mut config.decoding;
    if let Some(s) = d.strategy {
        c.strategy = s;
    }
    if let Some(b) = d.beam {
        c.beam_size = b;
    }
    if let Some(k) = d.top_k {
        c.top_k = k;
    }
    if let Some(t) = d.temperature {
        c.temperature = t;
    }
    if let Some(m) = d.max_len {
        c.max_len = m;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn load_model(args: &ModelArgs) -> Result<(Model, Vocabulary)> {
    let ckpt_path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Runtime("missing checkpoint: pass --checkpoint PATH".into()))?;
    if !ckpt_path.exists() {
        return Err(CliError::Runtime(format!("checkpoint {} does not exist", ckpt_path.display())));
    }
    let ckpt = load_checkpoint(ckpt_path)?;
    let vpath = args.vocab.clone().unwrap_or_else(|| vocab_path(ckpt_path));
    let vocab = Vocabulary::load(&vpath).map_err(|e| CliError::Runtime(format!("{}: {e}", vpath.display())))?;
    ckpt.check_vocab(&vocab)?;
    Ok((Model::with_params(ckpt.config, ckpt.params)?, vocab))
}

fn load_stories(path: &Path) -> Result<Vec<AnnotatedStory>> {
    load_corpus(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn train(mut config: CliConfig, a: TrainArgs) -> Result<()> {
    let m = &mut config.model;
    let t = &mut config.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.lambda {
        m.lambda = v;
    }
    if let Some(v) = a.k {
        m.k = v;
    }
    if let Some(v) = a.d_model {
        m.d_model = v;
    }
    if let Some(v) = a.d_ff {
        m.d_ff = v;
    }
    if let Some(v) = a.heads {
        m.n_heads = v;
    }
    if let Some(v) = a.layers {
        m.n_enc_layers = v;
        m.n_dec_layers = v;
    }
    m.enable_copy &= !a.no_copy;
    m.enable_emotion_loss &= !a.no_emotion_loss;
    t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(corpus) = a.corpus {
        config.stages = vec![Stage {
            name: None,
            corpus,
            emotion_loss: true,
            epochs: None,
            lr: None,
        }];
    }
    if config.stages.is_empty() {
        return Err(CliError::Usage("train needs --corpus or [[stages]] in the config".into()));
    }
    eprintln!("settings: {}", config.summary());

    let corpora = config
        .stages
        .iter()
        .map(|s| load_stories(&s.corpus))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<AnnotatedStory> = corpora.iter().flatten().cloned().collect();
    let extra: Vec<&str> = config.vocab_extra.iter().map(String::as_str).collect();
    let vocab = corpus_vocabulary(&all, &extra, config.min_count);
    let model_config = config.model.build(vocab.len());
    let mut model = Model::new(model_config.clone(), config.seed())?;
    eprintln!("vocabulary {} tokens, model d={} k={}", vocab.len(), model_config.d_model, model_config.k);

    let mut metrics = match &a.metrics {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut best = None;
    for (i, (stage, stories)) in config.stages.iter().zip(&corpora).enumerate() {
        let name = stage.name.clone().unwrap_or_else(|| format!("stage {}", i + 1));
        let splits = split_pairs(stories, config.split, config.seed(), model_config.k, config.tau)?;
        let train_data = encode_all(&splits.train, &vocab, model_config.max_len)?;
        let val_data = encode_all(&splits.val, &vocab, model_config.max_len)?;
        let mut tc = config.train.clone();
        if let Some(e) = stage.epochs {
            tc.epochs = e;
        }
        if let Some(lr) = stage.lr {
            tc.lr = lr;
        }
        let alpha = match example_class_weights(&splits.train) {
            Ok(a) => a,
            Err(TrainError::NoLabels) => [1.0; EmotionLabel::COUNT],
            Err(e) => return Err(e.into()),
        };
        model.set_ablation(model_config.enable_copy, model_config.enable_emotion_loss && stage.emotion_loss);
        eprintln!(
            "{name}: {} train / {} val pairs, {} epochs, lr {:e}",
            train_data.len(),
            val_data.len(),
            tc.epochs,
            tc.lr
        );
        let mut trainer = Trainer::new(model, tc, alpha, vocab.hash())?;
        let mut io_error = None;
        let outcome = train_loop(&mut trainer, &train_data, &val_data, |r| {
            eprintln!(
                "  epoch {:>3}  loss {:.4}  nll {:.4}  emo {:.4}  val_nll {:.4}",
                r.epoch, r.train.total, r.train.nll, r.train.emo, r.val_nll
            );
            if let Some(f) = metrics.as_mut() {
                let line = serde_json::json!({"stage": name, "record": r});
                if let Err(e) = writeln!(f, "{line}") {
                    io_error.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = io_error {
            return Err(e.into());
        }
        eprintln!("{name}: best val_nll {:.4}", outcome.best_val_nll);
        model = Model::with_params(outcome.best.config.clone(), outcome.best.params.clone())?;
        best = Some(outcome.best);
    }
    let mut ckpt = best.expect("at least one stage");
    ckpt.config.enable_copy = model_config.enable_copy;
    ckpt.config.enable_emotion_loss = model_config.enable_emotion_loss;
    save_checkpoint(&ckpt, &a.out)?;
    vocab.save(&vocab_path(&a.out))?;
    emit(format!("wrote {} and {}", a.out.display(), vocab_path(&a.out).display()))?;
    Ok(())
}

fn generate(mut config: CliConfig, a: GenerateArgs) -> Result<()> {
    apply_decoding(&mut config, &a.decode)?;
    let (model, vocab) = load_model(&a.model)?;
    let spec = StorySpec::load(&a.spec)?;
    eprintln!("settings: {}", config.summary());
    let specs = spec.specs(model.config().k)?;
    let story = generate_story(&model, &vocab, &spec.beginning, &specs, &config.decoding)?;
    if a.json {
        emit(serde_json::to_string_pretty(&story).expect("story serializes"))?;
    } else {
        emit(&story.beginning)?;
        for s in &story.sentences {
            emit(s)?;
        }
    }
    Ok(())
}

fn eval(mut config: CliConfig, a: EvalArgs) -> Result<()> {
    apply_decoding(&mut config, &a.decode)?;
    let (model, vocab) = load_model(&a.model)?;
    eprintln!("settings: {}", config.summary());
    let stories = load_stories(&a.corpus)?;
    let k = model.config().k;
    let splits = split_pairs(&stories, config.split, config.seed(), k, config.tau)?;
    let judge = match &a.judge {
        Some(p) => EmotionJudge::from_json(&std::fs::read_to_string(p)?)?,
        None => {
            let train_ids: HashSet<&String> = splits.story_ids[0].iter().collect();
            let train_stories: Vec<AnnotatedStory> =
                stories.iter().filter(|s| train_ids.contains(&s.id)).cloned().collect();
            let judge_config = JudgeConfig {
                seed: config.seed(),
                ..JudgeConfig::default()
            };
            train_judge(&judge_examples(&train_stories, config.tau), &judge_config)?
        }
    };
    if let Some(p) = &a.save_judge {
        std::fs::write(p, judge.to_json())?;
    }
    let test = match a.split {
        SplitName::Train => splits.train,
        SplitName::Val => splits.val,
        SplitName::Test => splits.test,
        SplitName::All => [splits.train, splits.val, splits.test].concat(),
    };
    let report = evaluate(&model, &vocab, &judge, &test, &config.decoding)?;
    if a.json {
        emit(report.to_json())?;
    } else {
        emit(report)?;
    }
    Ok(())
}

fn corpus_stats(config: CliConfig, a: StatsArgs) -> Result<()> {
    let stories = load_stories(&a.corpus)?;
    let k = a.k.unwrap_or(config.model.k);
    let mut st = stats(&stories, k, config.tau)?;
    if a.splits {
        st = st.with_splits(&split_pairs(&stories, config.split, config.seed(), k, config.tau)?);
    }
    if a.json {
        emit(st.to_json())?;
    } else {
        emit(st.to_string().trim_end())?;
    }
    Ok(())
}

fn synth(config: CliConfig, a: SynthArgs) -> Result<()> {
    let stories = synth_corpus(config.seed(), a.n);
    write_corpus(&stories, &a.out)?;
    emit(format!("wrote {} stories to {}", stories.len(), a.out.display()))?;
    Ok(())
}

fn serve(mut config: CliConfig, a: ServeArgs) -> Result<()> {
    let (model, vocab) = load_model(&a.model)?;
    config.model.k = model.config().k;
    eprintln!("settings: {}", config.summary());
    let store = SessionStore::new(
        Some(Arc::new(Engine::new(model, vocab))),
        StoreConfig {
            ttl: Duration::from_secs(a.ttl),
            log_path: a.log,
        },
    )?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(chae_service::serve(Arc::new(store), a.addr, a.cors_origin))?;
    Ok(())
}
