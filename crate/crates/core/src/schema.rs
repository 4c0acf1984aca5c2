//! State schema, hierarchical dialogue states, and flattening.
//!
//! A schema names the intents available to each speaker role and a two-level
//! slot structure: top-level fields (symptom, disease, ...) each carrying an
//! ordered list of slots, exactly one of which is the key slot that
//! identifies a value instance. States are flattened to 2- and 4-tuples for
//! exact-match scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::AnswerPattern;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
}

impl Role {
    /// The special marker placed in front of each utterance of this role.
    pub fn token(self) -> &'static str {
        match self {
            Role::Patient => "[PATIENT]",
            Role::Doctor => "[DOCTOR]",
        }
    }

    /// Marker plus the single space that separates it from the text.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Patient => "[PATIENT] ",
            Role::Doctor => "[DOCTOR] ",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Patient => write!(f, "patient"),
            Role::Doctor => write!(f, "doctor"),
        }
    }
}

/// A pair of values keyed by speaker role.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerRole<T> {
    pub patient: T,
    pub doctor: T,
}

impl<T> PerRole<T> {
    pub fn get(&self, role: Role) -> &T {
        match role {
            Role::Patient => &self.patient,
            Role::Doctor => &self.doctor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    /// Value is composed of tokens drawn from the input utterance.
    Extractive,
    /// Value is one of a closed candidate set.
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    #[serde(rename = "slot")]
    pub name: String,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub is_key: bool,
    #[serde(rename = "question")]
    pub question_template: String,
    #[serde(default)]
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDef {
    pub name: String,
    pub slots: Vec<SlotDef>,
}

impl FieldDef {
    pub fn key_slot(&self) -> &SlotDef {
        self.slots
            .iter()
            .find(|s| s.is_key)
            .expect("validated field has a key slot")
    }

    pub fn non_key_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| !s.is_key)
    }

    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// A validated schema: intents per role, ordered fields, question templates,
/// and the answer scaffold pattern. Immutable after loading.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaDef {
    pub intents: PerRole<Vec<String>>,
    pub intent_question: PerRole<String>,
    pub fields: Vec<FieldDef>,
    pub answer_pattern: AnswerPattern,
}

impl SchemaDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema JSON: {0}")]
    MalformedJson(#[from] serde_json::Error),
    #[error("invalid schema: {}", .0.join("; "))]
    SchemaInvalid(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    intents: PerRole<Vec<String>>,
    intent_question: PerRole<String>,
    fields: IndexMap<String, Vec<SlotDef>>,
    answer_pattern: AnswerPattern,
}

/// Parse and validate a UTF-8 JSON schema document.
pub fn load_schema(bytes: &[u8]) -> Result<SchemaDef, SchemaError> {
    let raw: RawSchema = serde_json::from_slice(bytes)?;
    let schema = SchemaDef {
        intents: raw.intents,
        intent_question: raw.intent_question,
        fields: raw
            .fields
            .into_iter()
            .map(|(name, slots)| FieldDef { name, slots })
            .collect(),
        answer_pattern: raw.answer_pattern,
    };
    let violations = validate_schema(&schema);
    if violations.is_empty() {
        Ok(schema)
    } else {
        Err(SchemaError::SchemaInvalid(violations))
    }
}

/// Serialize a schema back to its JSON document form.
pub fn render_schema(schema: &SchemaDef) -> String {
    let raw = RawSchema {
        intents: schema.intents.clone(),
        intent_question: schema.intent_question.clone(),
        fields: schema
            .fields
            .iter()
            .map(|f| (f.name.clone(), f.slots.clone()))
            .collect(),
        answer_pattern: schema.answer_pattern.clone(),
    };
    serde_json::to_string_pretty(&raw).expect("schema serializes")
}

fn validate_schema(schema: &SchemaDef) -> Vec<String> {
    let mut v = Vec::new();
    for role in [Role::Patient, Role::Doctor] {
        let names = schema.intents.get(role);
        let mut seen = BTreeSet::new();
        for n in names {
            if !seen.insert(n) {
                v.push(format!("duplicate {role} intent: {n}"));
            }
        }
    }
    let mut field_names = BTreeSet::new();
    for field in &schema.fields {
        if !field_names.insert(&field.name) {
            v.push(format!("duplicate field name: {}", field.name));
        }
        let mut slot_names = BTreeSet::new();
        let mut key_count = 0usize;
        for slot in &field.slots {
            if !slot_names.insert(&slot.name) {
                v.push(format!(
                    "field {} has duplicate slot name: {}",
                    field.name, slot.name
                ));
            }
            match slot.kind {
                SlotKind::Categorical => {
                    if slot.candidates.len() < 2 {
                        v.push(format!(
                            "field {} slot {}: categorical slot needs at least 2 candidates",
                            field.name, slot.name
                        ));
                    }
                    let mut cands = BTreeSet::new();
                    for c in &slot.candidates {
                        if !cands.insert(c) {
                            v.push(format!(
                                "field {} slot {}: duplicate candidate {c:?}",
                                field.name, slot.name
                            ));
                        }
                        if c.contains(&schema.answer_pattern.separator)
                            || c.contains(&schema.answer_pattern.terminator)
                        {
                            v.push(format!(
                                "field {} slot {}: candidate {c:?} contains scaffold text",
                                field.name, slot.name
                            ));
                        }
                    }
                }
                SlotKind::Extractive => {
                    if !slot.candidates.is_empty() {
                        v.push(format!(
                            "field {} slot {}: extractive slot must not list candidates",
                            field.name, slot.name
                        ));
                    }
                }
            }
            if slot.is_key {
                key_count += 1;
                if slot.kind != SlotKind::Extractive {
                    v.push(format!(
                        "field {} key slot {} must be extractive",
                        field.name, slot.name
                    ));
                }
                if !slot.required {
                    v.push(format!(
                        "field {} key slot {} must be required",
                        field.name, slot.name
                    ));
                }
                if slot.question_template.contains("{value}") {
                    v.push(format!(
                        "field {} key slot {}: question must not contain {{value}}",
                        field.name, slot.name
                    ));
                }
            } else if !slot.question_template.contains("{value}") {
                v.push(format!(
                    "field {} slot {}: question must contain {{value}}",
                    field.name, slot.name
                ));
            }
        }
        if key_count == 0 {
            v.push(format!("field {} has no key slot", field.name));
        } else if key_count > 1 {
            v.push(format!("field {} has more than one key slot", field.name));
        }
    }
    v.extend(schema.answer_pattern.validate());
    v
}

/// One extracted instance of a field: the key value plus child assignments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueInstance {
    pub key: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub children: BTreeMap<String, String>,
}

impl ValueInstance {
    pub fn new(key: impl Into<String>) -> Self {
        ValueInstance {
            key: key.into(),
            children: BTreeMap::new(),
        }
    }

    pub fn with_child(mut self, slot: impl Into<String>, value: impl Into<String>) -> Self {
        self.children.insert(slot.into(), value.into());
        self
    }
}

/// Per-turn structured output: intent labels plus value instances per field.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub intents: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, Vec<ValueInstance>>,
}

impl DialogueState {
    pub fn new() -> Self {
        DialogueState::default()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty() && self.fields.values().all(|v| v.is_empty())
    }

    /// Insert an instance, merging on duplicate key: later children win.
    pub fn upsert(&mut self, field: &str, instance: ValueInstance) {
        let list = self.fields.entry(field.to_string()).or_default();
        if let Some(existing) = list.iter_mut().find(|i| i.key == instance.key) {
            existing.children.extend(instance.children);
        } else {
            list.push(instance);
        }
    }

    /// Merge another state's field content into this one (intents untouched).
    pub fn merge_fields(&mut self, other: &DialogueState) {
        for (field, instances) in &other.fields {
            for inst in instances {
                self.upsert(field, inst.clone());
            }
        }
    }
}

/// A flattened state record: `(field, key)` or `(field, key, slot, value)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlatTuple(Vec<String>);

impl FlatTuple {
    pub fn pair(field: impl Into<String>, key: impl Into<String>) -> Self {
        FlatTuple(vec![field.into(), key.into()])
    }

    pub fn quad(
        field: impl Into<String>,
        key: impl Into<String>,
        slot: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        FlatTuple(vec![field.into(), key.into(), slot.into(), value.into()])
    }

    pub fn elems(&self) -> &[String] {
        &self.0
    }

    pub fn field(&self) -> &str {
        &self.0[0]
    }
}

impl fmt::Display for FlatTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e:?}")?;
        }
        write!(f, ")")
    }
}

/// Flatten a state into exact-match tuples. One 2-tuple per instance, one
/// 4-tuple per child assignment; intents are scored separately and excluded.
pub fn flatten(state: &DialogueState) -> BTreeSet<FlatTuple> {
    let mut out = BTreeSet::new();
    for (field, instances) in &state.fields {
        for inst in instances {
            out.insert(FlatTuple::pair(field.clone(), inst.key.clone()));
            for (slot, value) in &inst.children {
                out.insert(FlatTuple::quad(
                    field.clone(),
                    inst.key.clone(),
                    slot.clone(),
                    value.clone(),
                ));
            }
        }
    }
    out
}

/// Check a state against the schema for the given speaker role. Returns all
/// violations; an empty list means the state is valid.
pub fn validate_state(state: &DialogueState, schema: &SchemaDef, role: Role) -> Vec<String> {
    let mut v = Vec::new();
    let known = schema.intents.get(role);
    for intent in &state.intents {
        if !known.contains(intent) {
            v.push(format!("unknown intent: {intent}"));
        }
    }
    for (field_name, instances) in &state.fields {
        let Some(field) = schema.field(field_name) else {
            v.push(format!("unknown field: {field_name}"));
            continue;
        };
        let mut keys = BTreeSet::new();
        for inst in instances {
            if inst.key.is_empty() {
                v.push(format!("field {field_name}: empty key value"));
            }
            if !keys.insert(&inst.key) {
                v.push(format!("field {field_name}: duplicate key {:?}", inst.key));
            }
            for (slot_name, value) in &inst.children {
                match field.slot(slot_name) {
                    None => v.push(format!(
                        "field {field_name} instance {:?}: unknown slot {slot_name}",
                        inst.key
                    )),
                    Some(slot) if slot.is_key => v.push(format!(
                        "field {field_name} instance {:?}: {slot_name} is the key slot",
                        inst.key
                    )),
                    Some(slot) => {
                        if slot.kind == SlotKind::Categorical && !slot.candidates.contains(value) {
                            v.push(format!(
                                "field {field_name} instance {:?}: slot {slot_name} \
                                 value not in candidates: {value:?}",
                                inst.key
                            ));
                        }
                    }
                }
            }
            for slot in field.non_key_slots() {
                if slot.required && !inst.children.contains_key(&slot.name) {
                    v.push(format!(
                        "field {field_name} instance {:?}: missing required slot {}",
                        inst.key, slot.name
                    ));
                }
            }
        }
    }
    v
}
