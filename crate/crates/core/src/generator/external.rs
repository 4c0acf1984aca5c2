//! Adapter for an external scoring process speaking line-delimited JSON over
//! standard streams.
//!
//! On spawn the engine sends the vocabulary once. Each session announces
//! itself with a `start` message carrying the input text and a vocabulary
//! fingerprint; every `step` message carries the full emitted token list and
//! is answered by one `scores` line of vocabulary length. Because steps are
//! self-contained, interleaved sessions (e.g. beam hypotheses) just re-send
//! `start` before their next step.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::vocab::{TokenId, Vocab};

use super::{Generator, GeneratorError, GeneratorSession};

/// Hyperparameter defaults recorded for driving an external neural
/// generator. The in-process n-gram does not consume them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalTrainingDefaults {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
}

impl Default for ExternalTrainingDefaults {
    fn default() -> Self {
        ExternalTrainingDefaults {
            learning_rate: 1e-5,
            batch_size: 16,
            steps_per_epoch: 1000,
            epochs: 30,
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request<'a> {
    Vocab { tokens: &'a [String] },
    Start { input: &'a str, vocab_hash: &'a str },
    Step { emitted: &'a [u32] },
    End,
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

struct AdapterProc {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    /// Session that last sent `start`; 0 means none.
    active_session: u64,
}

impl AdapterProc {
    fn send(&mut self, request: &Request<'_>) -> Result<(), GeneratorError> {
        let line = serde_json::to_string(request)
            .map_err(|e| GeneratorError::Protocol(e.to_string()))?;
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn read_scores(&mut self) -> Result<Vec<f64>, GeneratorError> {
        let mut line = String::new();
        let n = self.stdout.read_line(&mut line)?;
        if n == 0 {
            return Err(GeneratorError::Protocol(
                "adapter closed its output stream".into(),
            ));
        }
        let reply: ScoreReply = serde_json::from_str(line.trim_end())
            .map_err(|e| GeneratorError::Protocol(format!("bad scores line: {e}")))?;
        Ok(reply.scores)
    }
}

impl Drop for AdapterProc {
    fn drop(&mut self) {
        let _ = self.send(&Request::End);
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Generator backed by a scoring subprocess.
pub struct ExternalGenerator {
    vocab: Arc<Vocab>,
    vocab_hash: String,
    proc: Arc<Mutex<AdapterProc>>,
    next_session: AtomicU64,
}

impl ExternalGenerator {
    pub fn spawn(program: &str, args: &[String], vocab: Vocab) -> Result<Self, GeneratorError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| GeneratorError::Protocol("adapter stdin unavailable".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| GeneratorError::Protocol("adapter stdout unavailable".into()))?;
        let mut proc = AdapterProc {
            child,
            stdin,
            stdout: BufReader::new(stdout),
            active_session: 0,
        };
        proc.send(&Request::Vocab {
            tokens: vocab.tokens(),
        })?;
        Ok(ExternalGenerator {
            vocab_hash: vocab.hash(),
            vocab: Arc::new(vocab),
            proc: Arc::new(Mutex::new(proc)),
            next_session: AtomicU64::new(1),
        })
    }
}

impl Generator for ExternalGenerator {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn open(&self, input_text: &str) -> Result<Box<dyn GeneratorSession>, GeneratorError> {
        Ok(Box::new(ExternalSession {
            vocab: Arc::clone(&self.vocab),
            vocab_hash: self.vocab_hash.clone(),
            proc: Arc::clone(&self.proc),
            session_id: self.next_session.fetch_add(1, Ordering::Relaxed),
            input: input_text.to_string(),
            emitted: Vec::new(),
            next_id_source: Arc::new(AtomicU64::new(1 << 32)),
        }))
    }
}

struct ExternalSession {
    vocab: Arc<Vocab>,
    vocab_hash: String,
    proc: Arc<Mutex<AdapterProc>>,
    session_id: u64,
    input: String,
    emitted: Vec<u32>,
    /// Distinct id pool for forks so they re-announce themselves.
    next_id_source: Arc<AtomicU64>,
}

impl GeneratorSession for ExternalSession {
    fn score_next(&mut self) -> Result<Vec<f64>, GeneratorError> {
        let mut proc = self
            .proc
            .lock()
            .map_err(|_| GeneratorError::Protocol("adapter lock poisoned".into()))?;
        if proc.active_session != self.session_id {
            proc.send(&Request::Start {
                input: &self.input,
                vocab_hash: &self.vocab_hash,
            })?;
            proc.active_session = self.session_id;
        }
        proc.send(&Request::Step {
            emitted: &self.emitted,
        })?;
        let scores = proc.read_scores()?;
        if scores.len() != self.vocab.len() {
            return Err(GeneratorError::Protocol(format!(
                "expected {} scores, got {}",
                self.vocab.len(),
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(GeneratorError::Protocol(format!(
                "non-finite score from adapter: {bad}"
            )));
        }
        Ok(scores)
    }

    fn push(&mut self, token: TokenId) -> Result<(), GeneratorError> {
        self.emitted.push(token.0);
        Ok(())
    }

    fn fork(&self) -> Box<dyn GeneratorSession> {
        Box::new(ExternalSession {
            vocab: Arc::clone(&self.vocab),
            vocab_hash: self.vocab_hash.clone(),
            proc: Arc::clone(&self.proc),
            session_id: self.next_id_source.fetch_add(1, Ordering::Relaxed),
            input: self.input.clone(),
            emitted: self.emitted.clone(),
            next_id_source: Arc::clone(&self.next_id_source),
        })
    }
}
