use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backend::{ChatBackend, ChatMessage, ChatOptions};
use crate::domain::Conversation;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aspect {
    #[serde(rename = "SPE")]
    Specificity,
    #[serde(rename = "FLE")]
    Flexibility,
    #[serde(rename = "UND")]
    Understandability,
    #[serde(rename = "INF")]
    Informativeness,
    #[serde(rename = "PAT")]
    Patience,
    #[serde(rename = "ACC")]
    Accuracy,
}

impl Aspect {
    pub const ALL: [Aspect; 6] = [
        Aspect::Specificity,
        Aspect::Flexibility,
        Aspect::Understandability,
        Aspect::Informativeness,
        Aspect::Patience,
        Aspect::Accuracy,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Aspect::Specificity => "SPE",
            Aspect::Flexibility => "FLE",
            Aspect::Understandability => "UND",
            Aspect::Informativeness => "INF",
            Aspect::Patience => "PAT",
            Aspect::Accuracy => "ACC",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Aspect::Specificity => {
                "Are the responses of the Conversational Patient Navigator specific enough to the context rather than generic?"
            }
            Aspect::Flexibility => {
                "Is the Conversational Patient Navigator flexible and adaptive to individual patient interests and responses?"
            }
            Aspect::Understandability => {
                "Does the Conversational Patient Navigator clearly communicate information in a way easily understood by patients?"
            }
            Aspect::Informativeness => {
                "Do the Conversational Patient Navigator's questions effectively gather sufficient information to provide accurate recommendations?"
            }
            Aspect::Patience => {
                "Do the questions from the Conversational Patient Navigator potentially lead to patient impatience?"
            }
            Aspect::Accuracy => {
                "Is the specialist recommended by the Conversational Patient Navigator accurately aligned with the patient's needs?"
            }
        }
    }

    /// PAT asks about a failure, so lower scores are better.
    pub fn lower_is_better(self) -> bool {
        self == Aspect::Patience
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Aspect {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EvalError::UnknownAspect(s.to_string()))
    }
}

/// Builds the judging prompt for one conversation.
pub fn judge_messages(conv: &Conversation, aspect: Aspect) -> Vec<ChatMessage> {
    let transcript = conv.turns.iter().map(|t| t.render_tagged()).collect::<Vec<_>>().join("\n");
    vec![
        ChatMessage::system(
            "You evaluate conversations between a patient and a Conversational Patient Navigator. Answer with Yes or No.",
        ),
        ChatMessage::user(format!("Conversation:\n{transcript}\n\nQuestion: {}\nAnswer:", aspect.definition())),
    ]
}

/// The first standalone "yes" or "no" in the reply, ignoring case.
pub fn parse_judgment(reply: &str) -> Option<bool> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|w| match w.to_ascii_lowercase().as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectScore {
    pub aspect: Aspect,
    /// Percentage of "yes" judgments, rounded to 2 decimals.
    pub score: f64,
    pub n_evaluated: usize,
    pub n_yes: usize,
    /// Conversations whose reply held no yes/no judgment.
    pub excluded: Vec<String>,
}

impl AspectScore {
    /// `100 * yes / n` in hundredths, rounded half up.
    pub fn hundredths(n_yes: usize, n: usize) -> u64 {
        if n == 0 {
            return 0;
        }
        let (y, n) = (n_yes as u128, n as u128);
        ((y * 10_000 * 2 + n) / (2 * n)) as u64
    }

    pub fn from_counts(aspect: Aspect, n_yes: usize, n_evaluated: usize, excluded: Vec<String>) -> Self {
        let score = Self::hundredths(n_yes, n_evaluated) as f64 / 100.0;
        Self { aspect, score, n_evaluated, n_yes, excluded }
    }

    /// The score with exactly two decimals.
    pub fn formatted(&self) -> String {
        format!("{:.2}", self.score)
    }
}

/// Asks `backend` the aspect question for every conversation, at most `cap`
/// requests at a time. A backend error aborts the run.
pub fn gptscore_evaluate(
    convs: &[Conversation],
    aspect: Aspect,
    backend: &dyn ChatBackend,
    cap: usize,
    exec: Execution,
) -> Result<AspectScore, EvalError> {
    if convs.is_empty() {
        return Err(EvalError::EmptyInput("conversations"));
    }
    let opts = ChatOptions { temperature: Some(0.0) };
    let replies = exec.map_capped(convs, cap, |conv| backend.chat(&judge_messages(conv, aspect), &opts));
    let mut n_yes = 0;
    let mut n = 0;
    let mut excluded = Vec::new();
    for (conv, reply) in convs.iter().zip(replies) {
        match parse_judgment(&reply?) {
            Some(yes) => {
                n += 1;
                n_yes += usize::from(yes);
            }
            None => {
                tracing::warn!(id = %conv.id, %aspect, "unparseable judgment");
                excluded.push(conv.id.clone());
            }
        }
    }
    Ok(AspectScore::from_counts(aspect, n_yes, n, excluded))
}
