//! Shared vocabulary: speaker roles, turns, conversations, cases and catalogs.
//!
//! Everything here is a plain value type. No I/O happens in this module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Who produced a dialogue turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    Patient,
    Assistant,
    System,
}

impl SpeakerRole {
    pub const ALL: [SpeakerRole; 3] = [SpeakerRole::Patient, SpeakerRole::Assistant, SpeakerRole::System];

    /// The bracketed tag used when rendering turns into prompts and training text.
    pub fn canonical_tag(self) -> &'static str {
        match self {
            SpeakerRole::Patient => "[Patient]",
            SpeakerRole::Assistant => "[Assistant]",
            SpeakerRole::System => "[System]",
        }
    }

    /// Inverse of [`SpeakerRole::canonical_tag`]. Matching ignores ASCII case.
    pub fn from_tag(tag: &str) -> Option<SpeakerRole> {
        SpeakerRole::ALL
            .into_iter()
            .find(|role| role.canonical_tag().eq_ignore_ascii_case(tag.trim()))
    }
}

/// Free-function form of [`SpeakerRole::canonical_tag`].
pub fn canonical_tag(role: SpeakerRole) -> &'static str {
    role.canonical_tag()
}

impl fmt::Display for SpeakerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: SpeakerRole,
    pub text: String,
    #[serde(default, skip_serializing)]
    pub index: usize,
}

impl DialogueTurn {
    pub fn new(role: SpeakerRole, text: impl Into<String>, index: usize) -> Self {
        Self { role, text: text.into(), index }
    }

    /// `<RoleTag> text`
    pub fn render_tagged(&self) -> String {
        format!("{} {}", self.role.canonical_tag(), self.text)
    }
}

/// Removes one leading role tag (any case) from `text`, if present.
pub fn strip_role_tag(text: &str) -> &str {
    let t = text.trim();
    if let Some((tag, rest)) = t.strip_prefix('[').and_then(|r| r.split_once(']')) {
        if SpeakerRole::from_tag(&format!("[{tag}]")).is_some() {
            return rest.trim();
        }
    }
    t
}

/// Department label. Equality and hashing use the lowercased canonical form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Department(String);

impl Department {
    pub fn new(name: impl Into<String>) -> Self {
        let name: String = name.into();
        Department(name.trim().to_string())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn canonical(&self) -> String {
        self.0.to_lowercase()
    }
}

impl PartialEq for Department {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for Department {}

impl std::hash::Hash for Department {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical().hash(state);
    }
}

impl PartialOrd for Department {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Department {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical().cmp(&other.canonical())
    }
}

impl fmt::Display for Department {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Department {
    fn from(s: &str) -> Self {
        Department::new(s)
    }
}

/// The closed set of departments a deployment recommends between.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepartmentSet {
    members: Vec<Department>,
}

impl DepartmentSet {
    pub fn new<I, D>(items: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: Into<Department>,
    {
        let mut members: Vec<Department> = items.into_iter().map(Into::into).collect();
        members.sort();
        members.dedup();
        Self { members }
    }

    pub fn contains(&self, dept: &Department) -> bool {
        self.members.binary_search(dept).is_ok()
    }

    /// Returns the configured spelling of `dept`, if it is a member.
    pub fn resolve(&self, dept: &Department) -> Option<&Department> {
        self.members.binary_search(dept).ok().map(|i| &self.members[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Department> {
        self.members.iter()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl From<Department> for String {
    fn from(d: Department) -> String {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationSource {
    Raw,
    Artificial,
    LlmRewritten,
    /// Recorded from a live triage session.
    Live,
}

impl FromStr for ConversationSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Self::Raw),
            "artificial" => Ok(Self::Artificial),
            "llm_rewritten" | "rewrite" | "gpt" => Ok(Self::LlmRewritten),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown conversation source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub source: ConversationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<Department>,
    pub turns: Vec<DialogueTurn>,
}

impl Conversation {
    /// Builds a conversation from `(role, text)` pairs, assigning contiguous indices.
    pub fn from_pairs<I, S>(id: impl Into<String>, source: ConversationSource, turns: I) -> Self
    where
        I: IntoIterator<Item = (SpeakerRole, S)>,
        S: Into<String>,
    {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(i, (role, text))| DialogueTurn::new(role, text, i))
            .collect();
        Self { id: id.into(), source, department: None, turns }
    }

    pub fn with_department(mut self, dept: Department) -> Self {
        self.department = Some(dept);
        self
    }

    /// Re-numbers turn indices from 0.
    pub fn reindex(&mut self) {
        for (i, turn) in self.turns.iter_mut().enumerate() {
            turn.index = i;
        }
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.turns.iter().filter(|t| t.role == SpeakerRole::Assistant)
    }
}

/// Which conversation invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationRule {
    NonEmpty,
    EmptyText,
    IndexContiguity,
    FirstRole,
    Alternation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: Option<usize>,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "turn {i}: {:?}", self.rule),
            None => write!(f, "{:?}", self.rule),
        }
    }
}

/// Lists every broken conversation invariant. An empty result means the
/// conversation is well formed.
pub fn validate_conversation(conv: &Conversation) -> Vec<Violation> {
    validate_turns(&conv.turns)
}

pub fn validate_turns(turns: &[DialogueTurn]) -> Vec<Violation> {
    let mut out = Vec::new();
    if turns.is_empty() {
        out.push(Violation { index: None, rule: ViolationRule::NonEmpty });
        return out;
    }
    if turns[0].role == SpeakerRole::Patient {
        out.push(Violation { index: Some(0), rule: ViolationRule::FirstRole });
    }
    for (pos, turn) in turns.iter().enumerate() {
        if turn.text.trim().is_empty() {
            out.push(Violation { index: Some(pos), rule: ViolationRule::EmptyText });
        }
        if turn.index != pos {
            out.push(Violation { index: Some(pos), rule: ViolationRule::IndexContiguity });
        }
        if pos > 0 && turns[pos - 1].role == turn.role {
            out.push(Violation { index: Some(pos), rule: ViolationRule::Alternation });
        }
    }
    out
}

/// Sex as recorded in the case release (`M`/`F`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Sex::M),
            "F" | "f" => Ok(Sex::F),
            other => Err(format!("invalid sex `{other}`")),
        }
    }
}

/// One evidence entry of a case: a code, optionally with a value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceValue {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub age: u32,
    pub sex: Sex,
    pub pathology: String,
    pub evidences: Vec<EvidenceValue>,
    pub initial_evidence: String,
}

impl PatientCase {
    /// Evidence codes in first-appearance order, initial evidence first,
    /// with the values of repeated (multi-choice) codes grouped.
    pub fn grouped_evidences(&self) -> Vec<(&str, Vec<&str>)> {
        let initial = self.initial_evidence.as_str();
        let ordered = self
            .evidences
            .iter()
            .filter(|e| e.code == initial)
            .chain(self.evidences.iter().filter(|e| e.code != initial));
        let mut order: Vec<(&str, Vec<&str>)> = Vec::new();
        for ev in ordered {
            let slot = match order.iter().position(|(c, _)| *c == ev.code) {
                Some(i) => i,
                None => {
                    order.push((ev.code.as_str(), Vec::new()));
                    order.len() - 1
                }
            };
            if let Some(v) = ev.value.as_deref() {
                order[slot].1.push(v);
            }
        }
        order
    }
}

/// True when `code` has the `E_<digits>` shape.
pub fn is_evidence_code(code: &str) -> bool {
    code.strip_prefix("E_")
        .is_some_and(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvidenceDataType {
    #[serde(rename = "B")]
    Binary,
    #[serde(rename = "C")]
    Categorical,
    #[serde(rename = "M")]
    MultiChoice,
}

impl FromStr for EvidenceDataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "B" => Ok(Self::Binary),
            "C" => Ok(Self::Categorical),
            "M" => Ok(Self::MultiChoice),
            other => Err(format!("invalid data_type `{other}` (expected B, C or M)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpec {
    pub question_text: String,
    pub data_type: EvidenceDataType,
    pub possible_values: Vec<String>,
    pub default_value: Option<String>,
}

impl EvidenceSpec {
    /// Integer severity scale: a categorical question whose values are all
    /// integers in `0..=10`.
    pub fn is_numeric_scale(&self) -> bool {
        self.data_type == EvidenceDataType::Categorical
            && self.possible_values.len() >= 2
            && self
                .possible_values
                .iter()
                .all(|v| v.parse::<u8>().is_ok_and(|n| n <= 10))
    }

    pub fn accepts(&self, value: Option<&str>) -> bool {
        match (self.data_type, value) {
            (EvidenceDataType::Binary, None) => true,
            (EvidenceDataType::Binary, Some(_)) => false,
            (_, None) => false,
            (_, Some(v)) => self.possible_values.iter().any(|p| p == v),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceCatalog {
    pub entries: BTreeMap<String, EvidenceSpec>,
}

impl EvidenceCatalog {
    pub fn get(&self, code: &str) -> Option<&EvidenceSpec> {
        self.entries.get(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub context: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrSummary {
    pub chief_complaint: String,
    pub symptoms: Vec<String>,
    pub history_notes: String,
    pub recommended_department: Department,
    pub free_text: String,
}
