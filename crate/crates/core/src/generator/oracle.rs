//! Gold-replay oracle.
//!
//! Replays a known answer with certainty: the next gold token scores 0, all
//! others a large negative constant, and the terminator once the answer is
//! exhausted. The replay position advances only when the pushed token
//! matches the expected one, so forced scaffold tokens that diverge from the
//! gold text (e.g. on the none-answer path) do not derail it.

use std::collections::HashMap;
use std::sync::Arc;

use crate::rng::{fnv1a, unit_hash};
use crate::vocab::{TokenId, Vocab};

use super::{Generator, GeneratorError, GeneratorSession, NEG_SCORE};

#[derive(Clone, Copy, Debug)]
struct Noise {
    eps: f64,
    seed: u64,
}

/// Test-double generator that replays gold answers keyed by the exact input
/// text, with an optional fallback answer for unknown inputs.
pub struct OracleGenerator {
    answers: HashMap<String, String>,
    fallback: Option<String>,
    vocab: Arc<Vocab>,
    noise: Option<Noise>,
}

impl OracleGenerator {
    /// Replay one fixed answer for every session.
    pub fn single(gold: impl Into<String>, vocab: Vocab) -> Self {
        OracleGenerator {
            answers: HashMap::new(),
            fallback: Some(gold.into()),
            vocab: Arc::new(vocab),
            noise: None,
        }
    }

    /// Replay per-input answers from (input, answer) pairs.
    pub fn from_examples(
        examples: impl IntoIterator<Item = (String, String)>,
        fallback: Option<String>,
        vocab: Vocab,
    ) -> Self {
        OracleGenerator {
            answers: examples.into_iter().collect(),
            fallback,
            vocab: Arc::new(vocab),
            noise: None,
        }
    }

    /// Perturb every score by up to `eps`, deterministically under `seed`.
    pub fn with_noise(mut self, eps: f64, seed: u64) -> Self {
        self.noise = Some(Noise { eps, seed });
        self
    }
}

impl Generator for OracleGenerator {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn open(&self, input_text: &str) -> Result<Box<dyn GeneratorSession>, GeneratorError> {
        let answer = self
            .answers
            .get(input_text)
            .or(self.fallback.as_ref())
            .ok_or_else(|| GeneratorError::MissingGoldAnswer(input_text.to_string()))?;
        let gold = self
            .vocab
            .tokenize_strict(answer)
            .map_err(|e| GeneratorError::UntokenizableGold(e.to_string()))?;
        Ok(Box::new(OracleSession {
            vocab: Arc::clone(&self.vocab),
            gold,
            pos: 0,
            state_hash: fnv1a(input_text.as_bytes()),
            noise: self.noise,
        }))
    }
}

#[derive(Clone)]
struct OracleSession {
    vocab: Arc<Vocab>,
    gold: Vec<TokenId>,
    pos: usize,
    state_hash: u64,
    noise: Option<Noise>,
}

impl GeneratorSession for OracleSession {
    fn score_next(&mut self) -> Result<Vec<f64>, GeneratorError> {
        let mut scores = vec![NEG_SCORE; self.vocab.len()];
        let target = if self.pos < self.gold.len() {
            self.gold[self.pos]
        } else {
            self.vocab.terminator()
        };
        scores[target.idx()] = 0.0;
        if let Some(noise) = self.noise {
            for (i, s) in scores.iter_mut().enumerate() {
                *s += noise.eps * unit_hash(noise.seed, self.state_hash, i as u64);
            }
        }
        Ok(scores)
    }

    fn push(&mut self, token: TokenId) -> Result<(), GeneratorError> {
        if self.pos < self.gold.len() && self.gold[self.pos] == token {
            self.pos += 1;
        }
        self.state_hash = self
            .state_hash
            .wrapping_mul(0x100000001b3)
            .wrapping_add(u64::from(token.0) + 1);
        Ok(())
    }

    fn fork(&self) -> Box<dyn GeneratorSession> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenizeMode;

    fn vocab(texts: &[&str]) -> Vocab {
        Vocab::build(
            TokenizeMode::Character,
            &["[PATIENT]", ", "],
            "[EOS]",
            texts.iter().copied(),
        )
    }

    #[test]
    fn argmax_follows_gold_sequence() {
        let v = vocab(&["abc"]);
        let oracle = OracleGenerator::single("abc", v.clone());
        let mut session = oracle.open("whatever").unwrap();
        for expected in ["a", "b", "c", "[EOS]"] {
            let scores = session.score_next().unwrap();
            let best = (0..v.len())
                .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                .unwrap();
            assert_eq!(v.token_str(TokenId(best as u32)), expected);
            session.push(TokenId(best as u32)).unwrap();
        }
    }

    #[test]
    fn greedy_replay_reproduces_gold_exactly() {
        let gold = "[PATIENT] I have headache";
        let v = vocab(&[gold]);
        let oracle = OracleGenerator::single(gold, v.clone());
        let mut session = oracle.open("input").unwrap();
        let mut out = String::new();
        loop {
            let scores = session.score_next().unwrap();
            let best = TokenId(
                (0..v.len())
                    .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                    .unwrap() as u32,
            );
            if best == v.terminator() {
                break;
            }
            out.push_str(v.token_str(best));
            session.push(best).unwrap();
        }
        assert_eq!(out, gold);
    }

    #[test]
    fn untokenizable_gold_is_rejected() {
        let v = vocab(&["abc"]);
        let oracle = OracleGenerator::single("xyz", v);
        assert!(matches!(
            oracle.open("input"),
            Err(GeneratorError::UntokenizableGold(_))
        ));
    }

    #[test]
    fn missing_answer_without_fallback_is_rejected() {
        let v = vocab(&["abc"]);
        let oracle = OracleGenerator::from_examples(vec![("q".to_string(), "a".to_string())], None, v);
        assert!(matches!(
            oracle.open("unseen"),
            Err(GeneratorError::MissingGoldAnswer(_))
        ));
    }

    #[test]
    fn noise_is_deterministic_under_seed() {
        let v = vocab(&["abc"]);
        let run = |seed: u64| {
            let oracle = OracleGenerator::single("abc", v.clone()).with_noise(0.1, seed);
            let mut s = oracle.open("input").unwrap();
            let first = s.score_next().unwrap();
            s.push(v.lookup("a").unwrap()).unwrap();
            let second = s.score_next().unwrap();
            (first, second)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).0, run(6).0);
    }
}
