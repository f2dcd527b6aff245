use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chae::codec::{
    pad_conditions, parse_chae, serialize_chae, serialize_condition, tokenize, tokenize_with_specials, ChaeCondition,
    ChaeSpec, CodecError, Vocabulary,
};
use chae::decoding::{generate_sentence, DecodingConfig};
use chae::model::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::{outcome, HistoryEntry, Session, StepOutcome, Transcript};

/// A loaded model and its vocabulary, shared read-only by all sessions.
#[derive(Debug)]
pub struct Engine {
    pub model: Model,
    pub vocab: Vocabulary,
}

impl Engine {
    pub fn new(model: Model, vocab: Vocabulary) -> Self {
        Self { model, vocab }
    }

    pub fn k(&self) -> usize {
        self.model.config().k
    }
}

#[derive(Clone, Debug)]
pub struct StoreConfig {
    /// Sessions idle for longer than this are dropped.
    pub ttl: Duration,
    /// Append-only JSON-lines event log, replayed on open.
    pub log_path: Option<PathBuf>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(3600),
            log_path: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Create {
        id: String,
        at: u64,
        beginning: Vec<String>,
        config: DecodingConfig,
    },
    Step {
        id: String,
        at: u64,
        entry: HistoryEntry,
    },
    Undo {
        id: String,
        at: u64,
    },
    Delete {
        id: String,
        at: u64,
    },
}

type Shared = Arc<Mutex<Session>>;

/// In-memory sessions. Steps on one session are serialized by its lock;
/// different sessions step in parallel.
#[derive(Debug)]
pub struct SessionStore {
    engine: Option<Arc<Engine>>,
    sessions: RwLock<HashMap<String, Shared>>,
    ttl: Duration,
    log: Option<Mutex<File>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

impl SessionStore {
    pub fn new(engine: Option<Arc<Engine>>, config: StoreConfig) -> Result<Self> {
        let mut store = Self {
            engine,
            sessions: RwLock::new(HashMap::new()),
            ttl: config.ttl,
            log: None,
        };
        if let Some(path) = &config.log_path {
            if path.exists() {
                store.replay(path)?;
            }
            let file = OpenOptions::new().create(true).append(true).open(path).map_err(internal)?;
            store.log = Some(Mutex::new(file));
        }
        Ok(store)
    }

    pub fn engine(&self) -> Option<&Arc<Engine>> {
        self.engine.as_ref()
    }

    fn require_engine(&self) -> Result<&Arc<Engine>> {
        self.engine.as_ref().ok_or(ServiceError::Unavailable)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn replay(&mut self, path: &Path) -> Result<()> {
        let file = File::open(path).map_err(internal)?;
        let map = self.sessions.get_mut().expect("store lock");
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(internal)?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event =
                serde_json::from_str(&line).map_err(|e| internal(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match event {
                Event::Create {
                    id,
                    at,
                    beginning,
                    config,
                } => {
                    map.insert(id.clone(), Arc::new(Mutex::new(Session::new(id, beginning, config, at))));
                }
                Event::Step { id, at, entry } => {
                    if let Some(s) = map.get(&id) {
                        let mut s = s.lock().expect("session lock");
                        s.push(entry);
                        s.last_used_at_ms = at;
                    }
                }
                Event::Undo { id, at } => {
                    if let Some(s) = map.get(&id) {
                        let mut s = s.lock().expect("session lock");
                        s.pop();
                        s.last_used_at_ms = at;
                    }
                }
                Event::Delete { id, .. } => {
                    map.remove(&id);
                }
            }
        }
        log::info!("replayed {} sessions from {}", map.len(), path.display());
        Ok(())
    }

    fn record(&self, event: &Event) -> Result<()> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(event).map_err(internal)?;
            line.push('\n');
            log.lock().expect("log lock").write_all(line.as_bytes()).map_err(internal)?;
        }
        Ok(())
    }

    fn lookup(&self, id: &str) -> Result<Shared> {
        let found = self.sessions.read().expect("store lock").get(id).cloned();
        let shared = found.ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        let idle = now_ms().saturating_sub(shared.lock().expect("session lock").last_used_at_ms);
        if idle > self.ttl.as_millis() as u64 {
            self.remove(id);
            return Err(ServiceError::NotFound(id.to_string()));
        }
        Ok(shared)
    }

    fn remove(&self, id: &str) -> Option<Shared> {
        let s = { self.sessions.write().expect("store lock").remove(id)? };
        s.lock().expect("session lock").closed = true;
        Some(s)
    }

    pub fn create(&self, beginning: &str, config: DecodingConfig) -> Result<String> {
        self.require_engine()?;
        let tokens = tokenize(beginning);
        if tokens.is_empty() {
            return Err(ServiceError::bad("beginning is empty"));
        }
        config.validate().map_err(|e| ServiceError::bad(e.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at = now_ms();
        self.record(&Event::Create {
            id: id.clone(),
            at,
            beginning: tokens.clone(),
            config: config.clone(),
        })?;
        let session = Session::new(id.clone(), tokens, config, at);
        self.sessions.write().expect("store lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    /// Generates the next sentence. `overrides` is a partial decoding
    /// config laid over the session's own for this step only.
    pub fn step(
        &self,
        id: &str,
        chae: Vec<ChaeCondition>,
        overrides: Option<&serde_json::Value>,
    ) -> Result<StepOutcome> {
        let engine = self.require_engine()?;
        let spec = self.chae_spec(chae)?;
        let shared = self.lookup(id)?;
        let mut s = shared.lock().expect("session lock");
        if s.closed {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let config = merge(&s.config, overrides)?;
        // Seeded by history position so undo + redo reproduces a sample.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s.history.len() as u64);
        let result = generate_sentence(&engine.model, &engine.vocab, &s.context, &spec, &config, &mut rng)
            .map_err(internal)?;
        let entry = HistoryEntry {
            chae: spec,
            tokens: engine.vocab.decode(result.sentence()),
            result,
        };
        s.last_used_at_ms = now_ms();
        self.record(&Event::Step {
            id: id.to_string(),
            at: s.last_used_at_ms,
            entry: entry.clone(),
        })?;
        let out = outcome(s.history.len(), &entry);
        s.push(entry);
        Ok(out)
    }

    pub fn undo(&self, id: &str) -> Result<Transcript> {
        let shared = self.lookup(id)?;
        let mut s = shared.lock().expect("session lock");
        if s.closed {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        if s.history.is_empty() {
            return Err(ServiceError::Conflict("nothing to undo".into()));
        }
        s.last_used_at_ms = now_ms();
        self.record(&Event::Undo {
            id: id.to_string(),
            at: s.last_used_at_ms,
        })?;
        s.pop();
        Ok(s.transcript())
    }

    pub fn get(&self, id: &str) -> Result<Transcript> {
        let shared = self.lookup(id)?;
        let s = shared.lock().expect("session lock");
        if s.closed {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        Ok(s.transcript())
    }

    pub fn delete(&self, id: &str) -> Result<()> {
        self.lookup(id)?;
        self.record(&Event::Delete {
            id: id.to_string(),
            at: now_ms(),
        })?;
        self.remove(id).map(|_| ()).ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Drops every session idle for longer than the TTL.
    pub fn sweep(&self) -> usize {
        let now = now_ms();
        let ttl = self.ttl.as_millis() as u64;
        let expired: Vec<String> = self
            .sessions
            .read()
            .expect("store lock")
            .iter()
            .filter(|(_, s)| s.try_lock().map_or(false, |s| now.saturating_sub(s.last_used_at_ms) > ttl))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            self.remove(id);
            log::info!("session {id} expired");
        }
        expired.len()
    }

    /// Validates conditions and pads them to the model's `k`. Errors carry
    /// the index of the offending condition.
    pub fn chae_spec(&self, chae: Vec<ChaeCondition>) -> Result<ChaeSpec> {
        let k = self.require_engine()?.k();
        for (i, c) in chae.iter().enumerate() {
            serialize_condition(c).map_err(|e| ServiceError::bad_at(e.to_string(), i))?;
        }
        pad_conditions(chae, k).map_err(|e| match e {
            CodecError::TooManyConditions { k, .. } => ServiceError::bad_at(e.to_string(), k),
            e => ServiceError::bad_at(e.to_string(), 0),
        })
    }

    /// The exact token sequence the model sees for `chae`.
    pub fn serialize(&self, chae: Vec<ChaeCondition>) -> Result<Vec<String>> {
        serialize_chae(&self.chae_spec(chae)?).map_err(|e| ServiceError::bad(e.to_string()))
    }
}

/// Parses serialized Chae text into its active conditions; errors carry
/// the token position.
pub fn parse_chae_text(text: &str) -> Result<Vec<ChaeCondition>> {
    let spec = parse_chae(&tokenize_with_specials(text)).map_err(|e| match e {
        CodecError::Parse { position, message } => ServiceError::bad_at(message, position),
        e => ServiceError::bad(e.to_string()),
    })?;
    Ok(spec.active_conditions().map(|(_, c)| c.clone()).collect())
}

fn merge(base: &DecodingConfig, overrides: Option<&serde_json::Value>) -> Result<DecodingConfig> {
    let Some(over) = overrides else {
        return Ok(base.clone());
    };
    let serde_json::Value::Object(over) = over else {
        return Err(ServiceError::bad("overrides must be an object"));
    };
    let mut value = serde_json::to_value(base).map_err(internal)?;
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in over {
        obj.insert(k.clone(), v.clone());
    }
    let config: DecodingConfig =
        serde_json::from_value(value).map_err(|e| ServiceError::bad(format!("overrides: {e}")))?;
    config.validate().map_err(|e| ServiceError::bad(e.to_string()))?;
    Ok(config)
}
