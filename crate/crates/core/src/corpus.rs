//! Dialogue corpora: JSONL ingestion, role-token history rendering, and
//! deterministic train/dev/test splitting.
//!
//! Annotations store per-turn deltas (the values first appearing in that
//! turn); cumulative state is reconstructed by the tracker. Corpora are
//! immutable after load.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::schema::{validate_state, DialogueState, Role, SchemaDef, ValueInstance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

impl Utterance {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Utterance {
            role,
            text: text.into(),
        }
    }
}

/// Gold labels for one turn: intent set plus the state delta introduced by
/// that turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnAnnotation {
    #[serde(default)]
    pub intents: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub state: BTreeMap<String, Vec<ValueInstance>>,
}

impl TurnAnnotation {
    /// The delta as a full state value (intents included).
    pub fn delta(&self) -> DialogueState {
        DialogueState {
            intents: self.intents.clone(),
            fields: self.state.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<usize, TurnAnnotation>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<Utterance>) -> Self {
        Dialogue {
            id: id.into(),
            turns,
            annotations: BTreeMap::new(),
        }
    }

    pub fn patient_turn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, u)| u.role == Role::Patient)
            .map(|(t, _)| t)
    }
}

/// A rendered dialogue prefix: all turns up to and including the latest one,
/// each preceded by its role token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    pub text: String,
    pub latest_utterance: Utterance,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed JSONL at line {line}: {source}")]
    MalformedLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("invalid annotation in dialogue {dialogue} turn {turn}: {}", violations.join("; "))]
    AnnotationInvalid {
        dialogue: String,
        turn: usize,
        violations: Vec<String>,
    },
    #[error("empty utterance in dialogue {dialogue} turn {turn}")]
    EmptyUtterance { dialogue: String, turn: usize },
    #[error("duplicate dialogue id: {0}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("turn index {index} out of range for dialogue of {len} turns")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Parse a JSONL corpus and validate annotations against the schema. A
/// leading `{"header": ...}` line written by the tools is skipped.
pub fn load_corpus(bytes: &[u8], schema: &SchemaDef) -> Result<Vec<Dialogue>, CorpusError> {
    let text = String::from_utf8_lossy(bytes);
    let mut dialogues = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if is_header_line(line) {
            continue;
        }
        let dialogue: Dialogue =
            serde_json::from_str(line).map_err(|source| CorpusError::MalformedLine {
                line: line_no,
                source,
            })?;
        if !ids.insert(dialogue.id.clone()) {
            return Err(CorpusError::DuplicateId(dialogue.id));
        }
        for (t, turn) in dialogue.turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(CorpusError::EmptyUtterance {
                    dialogue: dialogue.id.clone(),
                    turn: t,
                });
            }
        }
        for (&t, annotation) in &dialogue.annotations {
            if t >= dialogue.turns.len() {
                return Err(CorpusError::AnnotationInvalid {
                    dialogue: dialogue.id.clone(),
                    turn: t,
                    violations: vec![format!(
                        "turn index {t} out of range for {} turns",
                        dialogue.turns.len()
                    )],
                });
            }
            let violations =
                validate_state(&annotation.delta(), schema, dialogue.turns[t].role);
            if !violations.is_empty() {
                return Err(CorpusError::AnnotationInvalid {
                    dialogue: dialogue.id.clone(),
                    turn: t,
                    violations,
                });
            }
        }
        dialogues.push(dialogue);
    }
    Ok(dialogues)
}

fn is_header_line(line: &str) -> bool {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(map)) => map.len() == 1 && map.contains_key("header"),
        _ => false,
    }
}

/// Serialize a corpus as JSONL, optionally with a seed-echoing header line.
pub fn write_corpus(dialogues: &[Dialogue], seed: Option<u64>) -> String {
    let mut out = String::new();
    if let Some(seed) = seed {
        out.push_str(&format!(
            "{}\n",
            serde_json::json!({"header": {"tool": "dstforge", "seed": seed}})
        ));
    }
    for d in dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

/// Render the dialogue prefix ending at turn `t`: each utterance prefixed by
/// its role token, joined by single newlines.
pub fn render_history(dialogue: &Dialogue, t: usize) -> Result<History, CorpusError> {
    if t >= dialogue.turns.len() {
        return Err(CorpusError::IndexOutOfRange {
            index: t,
            len: dialogue.turns.len(),
        });
    }
    let text = dialogue.turns[..=t]
        .iter()
        .map(|u| format!("{}{}", u.role.prefix(), u.text))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(History {
        text,
        latest_utterance: dialogue.turns[t].clone(),
    })
}

/// Largest-remainder apportionment of `total` items over integer ratios.
/// Ties on the remainder go to the earlier ratio position.
pub fn apportion(total: usize, ratios: &[u32]) -> Vec<usize> {
    let denom: u64 = ratios.iter().map(|&r| u64::from(r)).sum();
    assert!(denom > 0, "ratios must not all be zero");
    let mut shares: Vec<usize> = Vec::with_capacity(ratios.len());
    let mut remainders: Vec<(u64, usize)> = Vec::with_capacity(ratios.len());
    let mut assigned = 0usize;
    for (i, &r) in ratios.iter().enumerate() {
        let num = total as u64 * u64::from(r);
        let floor = (num / denom) as usize;
        shares.push(floor);
        remainders.push((num % denom, i));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total - assigned) {
        shares[i] += 1;
    }
    shares
}

/// Deterministically shuffle and partition a corpus into train/dev/test by
/// largest-remainder apportionment of the given ratios.
pub fn split_corpus(
    mut dialogues: Vec<Dialogue>,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<(Vec<Dialogue>, Vec<Dialogue>, Vec<Dialogue>), CorpusError> {
    if dialogues.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    use rand::seq::SliceRandom;
    let mut rng = stream(seed, "split");
    dialogues.shuffle(&mut rng);
    let sizes = apportion(dialogues.len(), &[ratios.0, ratios.1, ratios.2]);
    let mut rest = dialogues.split_off(sizes[0]);
    let test = rest.split_off(sizes[1]);
    Ok((dialogues, rest, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn schema() -> SchemaDef {
        synth::latin_schema()
    }

    fn table_dialogue_json() -> String {
        serde_json::json!({
            "id": "t1",
            "turns": [
                {"role": "patient", "text": "I feel uncomfortable."},
                {"role": "doctor", "text": "What's wrong with you?"},
                {"role": "patient", "text": "My head sometimes feels painful."}
            ],
            "annotations": {
                "2": {
                    "intents": ["describe"],
                    "state": {
                        "symptom": [{
                            "key": "head feels painful",
                            "children": {"extent": "sometimes", "if_exists": "true"}
                        }]
                    }
                }
            }
        })
        .to_string()
    }

    #[test]
    fn loads_two_line_corpus() {
        let jsonl = format!(
            "{}\n{}\n",
            serde_json::json!({"id": "a", "turns": [{"role": "patient", "text": "hi"}]}),
            serde_json::json!({"id": "b", "turns": [{"role": "doctor", "text": "hello"}]}),
        );
        let corpus = load_corpus(jsonl.as_bytes(), &schema()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].id, "a");
    }

    #[test]
    fn rejects_out_of_range_annotation() {
        let line = serde_json::json!({
            "id": "bad",
            "turns": [
                {"role": "patient", "text": "a"}, {"role": "doctor", "text": "b"},
                {"role": "patient", "text": "c"}, {"role": "doctor", "text": "d"}
            ],
            "annotations": {"9": {"intents": []}}
        })
        .to_string();
        assert!(matches!(
            load_corpus(line.as_bytes(), &schema()),
            Err(CorpusError::AnnotationInvalid { turn: 9, .. })
        ));
    }

    #[test]
    fn loads_annotated_consultation() {
        let corpus = load_corpus(table_dialogue_json().as_bytes(), &schema()).unwrap();
        let ann = &corpus[0].annotations[&2];
        assert!(ann.intents.contains("describe"));
        let inst = &ann.state["symptom"][0];
        assert_eq!(inst.key, "head feels painful");
        assert_eq!(inst.children["extent"], "sometimes");
        assert_eq!(inst.children["if_exists"], "true");
    }

    #[test]
    fn rejects_malformed_line_with_number() {
        let jsonl = format!("{}\nnot json\n", table_dialogue_json());
        assert!(matches!(
            load_corpus(jsonl.as_bytes(), &schema()),
            Err(CorpusError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn renders_full_history_with_role_tokens() {
        let corpus = load_corpus(table_dialogue_json().as_bytes(), &schema()).unwrap();
        let history = render_history(&corpus[0], 2).unwrap();
        assert_eq!(
            history.text,
            "[PATIENT] I feel uncomfortable.\n[DOCTOR] What's wrong with you?\n\
             [PATIENT] My head sometimes feels painful."
        );
        assert_eq!(history.latest_utterance.text, "My head sometimes feels painful.");
    }

    #[test]
    fn renders_single_turn_history() {
        let d = Dialogue::new("x", vec![Utterance::new(Role::Patient, "hello")]);
        assert_eq!(render_history(&d, 0).unwrap().text, "[PATIENT] hello");
    }

    #[test]
    fn rejects_history_index_out_of_range() {
        let d = Dialogue::new("x", vec![Utterance::new(Role::Patient, "hello")]);
        assert!(matches!(
            render_history(&d, 1),
            Err(CorpusError::IndexOutOfRange { .. })
        ));
    }

    fn dialogues(n: usize) -> Vec<Dialogue> {
        (0..n)
            .map(|i| {
                Dialogue::new(
                    format!("d{i}"),
                    vec![Utterance::new(Role::Patient, format!("utterance {i}"))],
                )
            })
            .collect()
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let (train, dev, test) = split_corpus(dialogues(10), (8, 1, 1), 7).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn split_single_dialogue_goes_to_train() {
        let (train, dev, test) = split_corpus(dialogues(1), (8, 1, 1), 7).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (1, 0, 0));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_corpus(dialogues(20), (8, 1, 1), 99).unwrap();
        let b = split_corpus(dialogues(20), (8, 1, 1), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_empty_corpus() {
        assert!(matches!(
            split_corpus(Vec::new(), (8, 1, 1), 1),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn apportion_hand_cases() {
        assert_eq!(apportion(89, &[8, 1, 1]), vec![71, 9, 9]);
        assert_eq!(apportion(1000, &[8, 1, 1]), vec![800, 100, 100]);
        assert_eq!(apportion(3, &[4, 1]), vec![2, 1]);
        assert_eq!(apportion(1003, &[4, 1]), vec![802, 201]);
    }

    #[test]
    fn corpus_round_trips() {
        let corpus = load_corpus(table_dialogue_json().as_bytes(), &schema()).unwrap();
        let written = write_corpus(&corpus, Some(42));
        let reloaded = load_corpus(written.as_bytes(), &schema()).unwrap();
        assert_eq!(corpus, reloaded);
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_without_loss(n in 1usize..60, seed in 0u64..1000) {
            let (train, dev, test) = split_corpus(dialogues(n), (8, 1, 1), seed).unwrap();
            let mut ids: Vec<String> = train.iter().chain(&dev).chain(&test).map(|d| d.id.clone()).collect();
            ids.sort();
            let mut expected: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            expected.sort();
            proptest::prop_assert_eq!(ids, expected);
            // Each share is within one of exact proportionality.
            let exact = [n as f64 * 0.8, n as f64 * 0.1, n as f64 * 0.1];
            for (len, want) in [train.len(), dev.len(), test.len()].iter().zip(exact) {
                proptest::prop_assert!((*len as f64 - want).abs() < 1.0);
            }
        }

        #[test]
        fn history_has_one_role_token_per_turn(t in 0usize..6) {
            let turns: Vec<Utterance> = (0..=t)
                .map(|i| {
                    let role = if i % 2 == 0 { Role::Patient } else { Role::Doctor };
                    Utterance::new(role, format!("turn {i}"))
                })
                .collect();
            let d = Dialogue::new("h", turns);
            let history = render_history(&d, t).unwrap();
            let tokens = history.text.matches("[PATIENT]").count()
                + history.text.matches("[DOCTOR]").count();
            proptest::prop_assert_eq!(tokens, t + 1);
        }
    }
}
