//! Dialogue-style query construction and answer scaffolding.
//!
//! Each tracking step is phrased as a doctor question ("[DOCTOR] What
//! symptoms do you have?") whose answer is a patient utterance in a fixed
//! scaffold ("[PATIENT] I have a, b, c" + terminator). Labeled dialogues are
//! transformed into (input, answer) pairs in exactly this shape for
//! fine-tuning, and raw dialogues into response-generation pairs for
//! pretraining.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{render_history, Dialogue};
use crate::schema::{Role, SchemaDef};

/// The fixed answer scaffold wrapped around decoded values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerPattern {
    /// Answerer marker, e.g. `"[PATIENT] "`.
    pub role_prefix: String,
    /// Lead-in for key-level answers, e.g. `"I have "`.
    pub answer_prefix: String,
    /// Lead-in for child-slot answers, e.g. `"I feel "`.
    pub child_prefix: String,
    /// Joins multiple values, e.g. `", "`.
    pub separator: String,
    /// Marks the end of every answer.
    pub terminator: String,
    /// Complete answer meaning "no value", e.g. `"nothing"`.
    pub none_form: String,
}

impl AnswerPattern {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.separator.is_empty() {
            v.push("answer_pattern: separator must be nonempty".into());
        }
        if self.terminator.is_empty() {
            v.push("answer_pattern: terminator must be nonempty".into());
        }
        if self.separator == self.terminator {
            v.push("answer_pattern: separator must differ from terminator".into());
        }
        if self.none_form.is_empty() {
            v.push("answer_pattern: none_form must be nonempty".into());
        }
        if self.none_form.contains(&self.separator) {
            v.push("answer_pattern: none_form must not contain the separator".into());
        }
        if self.role_prefix.is_empty() {
            v.push("answer_pattern: role_prefix must be nonempty".into());
        }
        for (label, s) in [
            ("role_prefix", &self.role_prefix),
            ("answer_prefix", &self.answer_prefix),
            ("child_prefix", &self.child_prefix),
            ("none_form", &self.none_form),
        ] {
            if s.contains(&self.terminator) {
                v.push(format!("answer_pattern: {label} must not contain the terminator"));
            }
        }
        // The decoder branches between the none path and the prefix path on
        // their first tokens, so those must differ up front.
        for (label, s) in [
            ("answer_prefix", &self.answer_prefix),
            ("child_prefix", &self.child_prefix),
        ] {
            if s.is_empty() {
                v.push(format!("answer_pattern: {label} must be nonempty"));
            } else if s.chars().next() == self.none_form.chars().next() {
                v.push(format!(
                    "answer_pattern: {label} and none_form must start differently"
                ));
            }
        }
        v
    }

    pub fn prefix_for(&self, kind: AnswerKind) -> &str {
        match kind {
            AnswerKind::Keys => &self.answer_prefix,
            AnswerKind::Child => &self.child_prefix,
        }
    }
}

/// Which lead-in an answer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Keys,
    Child,
}

/// What a query asks about.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueryTarget {
    /// The speaker's intents for the turn.
    Intent(Role),
    /// All key values of one field mentioned in the turn.
    FieldKeys(String),
    /// One child slot of one extracted instance.
    ChildSlot {
        field: String,
        key_value: String,
        slot: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    /// Bare slot/field name.
    TypeName,
    /// The filled question template.
    Question,
    /// Doctor-prefixed question, phrased as a dialogue turn.
    DialogueStyle,
}

/// A constructed query ready to append to the dialogue history.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub target: QueryTarget,
    pub text: String,
    pub strategy: QueryStrategy,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown query target: {0}")]
    UnknownTarget(String),
    #[error("value contains scaffold text: {0:?}")]
    ValueContainsScaffold(String),
    #[error("dialogue {0} has no annotations")]
    AnnotationMissing(String),
    #[error("turn index {index} out of range for dialogue of {len} turns")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Build the query text for `target` under `strategy`.
pub fn build_query(
    schema: &SchemaDef,
    target: &QueryTarget,
    strategy: QueryStrategy,
) -> Result<Query, PromptError> {
    let (bare, template) = match target {
        QueryTarget::Intent(role) => (
            "intent".to_string(),
            schema.intent_question.get(*role).clone(),
        ),
        QueryTarget::FieldKeys(field) => {
            let f = schema
                .field(field)
                .ok_or_else(|| PromptError::UnknownTarget(format!("field {field}")))?;
            (field.clone(), f.key_slot().question_template.clone())
        }
        QueryTarget::ChildSlot {
            field,
            key_value,
            slot,
        } => {
            let f = schema
                .field(field)
                .ok_or_else(|| PromptError::UnknownTarget(format!("field {field}")))?;
            let s = f
                .slot(slot)
                .filter(|s| !s.is_key)
                .ok_or_else(|| PromptError::UnknownTarget(format!("slot {field}.{slot}")))?;
            (
                slot.clone(),
                s.question_template.replace("{value}", key_value),
            )
        }
    };
    let text = match strategy {
        QueryStrategy::TypeName => bare,
        QueryStrategy::Question => template,
        QueryStrategy::DialogueStyle => format!("{}{}", Role::Doctor.prefix(), template),
    };
    Ok(Query {
        target: target.clone(),
        text,
        strategy,
    })
}

/// Render values into the answer scaffold. An empty list renders the
/// none-form answer.
pub fn render_answer(
    values: &[String],
    pattern: &AnswerPattern,
    kind: AnswerKind,
) -> Result<String, PromptError> {
    for v in values {
        if v.contains(&pattern.separator) || v.contains(&pattern.terminator) {
            return Err(PromptError::ValueContainsScaffold(v.clone()));
        }
    }
    let body = if values.is_empty() {
        pattern.none_form.clone()
    } else {
        format!("{}{}", pattern.prefix_for(kind), values.join(&pattern.separator))
    };
    Ok(format!(
        "{}{}{}",
        pattern.role_prefix, body, pattern.terminator
    ))
}

/// The query sequence for one annotated turn, in traversal order, paired
/// with its gold answers. This is both the fine-tuning data layout and the
/// query plan the tracker follows.
pub fn build_finetune_examples(
    dialogue: &Dialogue,
    schema: &SchemaDef,
    strategy: QueryStrategy,
) -> Result<Vec<(String, String)>, PromptError> {
    if dialogue.annotations.is_empty() {
        return Err(PromptError::AnnotationMissing(dialogue.id.clone()));
    }
    let pattern = &schema.answer_pattern;
    let mut out = Vec::new();
    for (&t, annotation) in &dialogue.annotations {
        let role = dialogue.turns[t].role;
        if role != Role::Patient {
            continue;
        }
        let history = render_history(dialogue, t).expect("annotation index validated");
        let with_query = |q: &Query| format!("{}\n{}", history.text, q.text);

        let intent_query = build_query(schema, &QueryTarget::Intent(role), strategy)?;
        let intent_values: Vec<String> = schema
            .intents
            .get(role)
            .iter()
            .filter(|i| annotation.intents.contains(*i))
            .cloned()
            .collect();
        out.push((
            with_query(&intent_query),
            render_answer(&intent_values, pattern, AnswerKind::Keys)?,
        ));

        for field in &schema.fields {
            let keys_query =
                build_query(schema, &QueryTarget::FieldKeys(field.name.clone()), strategy)?;
            let instances = annotation
                .state
                .get(&field.name)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let keys: Vec<String> = instances.iter().map(|i| i.key.clone()).collect();
            out.push((
                with_query(&keys_query),
                render_answer(&keys, pattern, AnswerKind::Keys)?,
            ));
            for inst in instances {
                for slot in field.non_key_slots() {
                    let child_query = build_query(
                        schema,
                        &QueryTarget::ChildSlot {
                            field: field.name.clone(),
                            key_value: inst.key.clone(),
                            slot: slot.name.clone(),
                        },
                        strategy,
                    )?;
                    let values: Vec<String> = inst
                        .children
                        .get(&slot.name)
                        .map(|v| vec![v.clone()])
                        .unwrap_or_default();
                    out.push((
                        with_query(&child_query),
                        render_answer(&values, pattern, AnswerKind::Child)?,
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// A response-generation pair: history up to turn `t - 1` as input, turn `t`
/// rendered as the answer.
pub fn build_pretrain_example(
    dialogue: &Dialogue,
    t: usize,
    pattern: &AnswerPattern,
) -> Result<(String, String), PromptError> {
    if t == 0 || t >= dialogue.turns.len() {
        return Err(PromptError::IndexOutOfRange {
            index: t,
            len: dialogue.turns.len(),
        });
    }
    let history = render_history(dialogue, t - 1).expect("index checked above");
    let turn = &dialogue.turns[t];
    let answer = format!(
        "{}{}{}",
        turn.role.prefix(),
        turn.text,
        pattern.terminator
    );
    Ok((history.text, answer))
}
