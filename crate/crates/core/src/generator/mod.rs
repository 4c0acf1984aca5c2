//! The autoregressive scoring contract and its implementations.
//!
//! A generator opens one session per query; the session is fed the emitted
//! tokens one by one and asked for a log-score over the whole vocabulary at
//! each step. Decoding never samples: search picks among the scores that the
//! validity constraints let through.

mod external;
mod ngram;
mod oracle;

pub use external::{ExternalGenerator, ExternalTrainingDefaults};
pub use ngram::{train_ngram, NGramGenerator, NGramModel, TrainStage};
pub use oracle::OracleGenerator;

use thiserror::Error;

use crate::corpus::Dialogue;
use crate::schema::{Role, SchemaDef};
use crate::vocab::{TokenId, TokenizeMode, Vocab};

/// Log-score surrogate for "impossible".
pub const NEG_SCORE: f64 = -1e9;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("session is closed")]
    SessionClosed,
    #[error("gold answer does not tokenize: {0}")]
    UntokenizableGold(String),
    #[error("no gold answer for input: {0:?}")]
    MissingGoldAnswer(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("fine-tuning requires a base model")]
    MissingBaseModel,
    #[error("external adapter protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A scoring model. Implementations are immutable and shareable; every
/// decode owns a private session.
pub trait Generator: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Start a session whose context is the given input text.
    fn open(&self, input_text: &str) -> Result<Box<dyn GeneratorSession>, GeneratorError>;
}

/// One decode's view of the model: the input text plus every token emitted
/// so far. Scores are deterministic given identical context.
pub trait GeneratorSession: Send {
    /// Log-score for every vocabulary token at the next position.
    fn score_next(&mut self) -> Result<Vec<f64>, GeneratorError>;

    /// Append an emitted token to the context.
    fn push(&mut self, token: TokenId) -> Result<(), GeneratorError>;

    /// An independent continuation of this session (for beam search).
    fn fork(&self) -> Box<dyn GeneratorSession>;
}

/// Build the task vocabulary: role markers, separator, and terminator are
/// atomic; every schema string and corpus utterance contributes tokens.
pub fn build_vocab(schema: &SchemaDef, dialogues: &[Dialogue], mode: TokenizeMode) -> Vocab {
    let pattern = &schema.answer_pattern;
    let atoms = [
        Role::Patient.token(),
        Role::Doctor.token(),
        pattern.separator.as_str(),
    ];
    let mut texts: Vec<&str> = vec![
        "\n",
        pattern.role_prefix.as_str(),
        pattern.answer_prefix.as_str(),
        pattern.child_prefix.as_str(),
        pattern.none_form.as_str(),
        schema.intent_question.patient.as_str(),
        schema.intent_question.doctor.as_str(),
    ];
    for role in [Role::Patient, Role::Doctor] {
        texts.push(role.prefix());
        for intent in schema.intents.get(role) {
            texts.push(intent);
        }
    }
    for field in &schema.fields {
        texts.push(&field.name);
        for slot in &field.slots {
            texts.push(&slot.name);
            texts.push(&slot.question_template);
            for c in &slot.candidates {
                texts.push(c);
            }
        }
    }
    for d in dialogues {
        for turn in &d.turns {
            texts.push(&turn.text);
        }
    }
    Vocab::build(mode, &atoms, &pattern.terminator, texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn task_vocab_covers_scaffold_and_utterances() {
        let schema = synth::latin_schema();
        let d = Dialogue::new(
            "v",
            vec![crate::corpus::Utterance::new(
                Role::Patient,
                "my head really does ache",
            )],
        );
        let vocab = build_vocab(&schema, &[d], TokenizeMode::Whitespace);
        for needed in ["[PATIENT]", "[DOCTOR]", ", ", "[EOS]", "head", "ache", "nothing"] {
            assert!(vocab.lookup(needed).is_some(), "missing {needed:?}");
        }
        assert!(vocab
            .tokenize_strict("[PATIENT] I have head ache[EOS]")
            .is_ok());
    }
}
