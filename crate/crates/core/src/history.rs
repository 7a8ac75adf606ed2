//! Token-budgeted conversation context.
//!
//! A prompt is built from a system preamble, an optional `[System]` summary of
//! turns that no longer fit, the most recent turns rendered as
//! `<RoleTag> text`, and a trailing `[Assistant]` cue. Lines are joined with
//! `\n`. All budget arithmetic goes through a [`TokenCounter`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatOptions};
use crate::domain::{DialogueTurn, SpeakerRole};

pub const DEFAULT_N_RECENT: usize = 12;
pub const DEFAULT_SUMMARY_CAP: usize = 128;

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-delimited words plus standalone punctuation marks.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokens;

impl TokenCounter for ApproxTokens {
    fn count(&self, text: &str) -> usize {
        approx_tokens(text)
    }
}

/// Counts tokens without a model tokenizer.
///
/// Each whitespace-separated chunk contributes one token per leading or
/// trailing punctuation character and one token for its alphanumeric core, if
/// any. `"I have a headache."` is 5 tokens; `"don't"` is 1.
pub fn approx_tokens(text: &str) -> usize {
    text.split_whitespace().map(chunk_tokens).sum()
}

fn chunk_tokens(chunk: &str) -> usize {
    let chars: Vec<char> = chunk.chars().collect();
    let first = chars.iter().position(|c| c.is_alphanumeric());
    match first {
        None => chars.len(),
        Some(start) => {
            let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap_or(start);
            start + (chars.len() - 1 - end) + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
    pub reserve_for_reply: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { max_tokens: 1024, reserve_for_reply: 256 }
    }
}

impl TokenBudget {
    pub fn new(max_tokens: usize, reserve_for_reply: usize) -> Result<Self, HistoryError> {
        let b = Self { max_tokens, reserve_for_reply };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), HistoryError> {
        if self.reserve_for_reply == 0 || self.reserve_for_reply >= self.max_tokens {
            return Err(HistoryError::InvalidBudget(*self));
        }
        Ok(())
    }

    /// Tokens the prompt itself may use.
    pub fn prompt_limit(&self) -> usize {
        self.max_tokens - self.reserve_for_reply
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("prompt needs {needed} tokens but only {limit} are available")]
    BudgetImpossible { needed: usize, limit: usize },
    #[error("invalid budget {0:?}: need 0 < reserve_for_reply < max_tokens")]
    InvalidBudget(TokenBudget),
    #[error("window must keep at least 2 turns, got {0}")]
    WindowTooSmall(usize),
    #[error("history is empty")]
    EmptyHistory,
    #[error("summarizer returned no usable text")]
    EmptySummary,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedContext {
    pub summary_turn: Option<DialogueTurn>,
    pub retained_turns: Vec<DialogueTurn>,
    pub dropped_count: usize,
    pub budget: TokenBudget,
}

const CUE: SpeakerRole = SpeakerRole::Assistant;

fn turn_cost(counter: &dyn TokenCounter, turn: &DialogueTurn) -> usize {
    counter.count(&turn.render_tagged())
}

/// Keeps the last `n_recent` turns, then drops the oldest retained turns until
/// the rendered turns plus `overhead` tokens fit the prompt limit.
fn prune_with(
    counter: &dyn TokenCounter,
    history: &[DialogueTurn],
    budget: TokenBudget,
    n_recent: usize,
    overhead: usize,
) -> Result<PrunedContext, HistoryError> {
    budget.validate()?;
    if n_recent < 2 {
        return Err(HistoryError::WindowTooSmall(n_recent));
    }
    let Some(last) = history.last() else {
        return Err(HistoryError::EmptyHistory);
    };
    let limit = budget.prompt_limit();
    let fixed = overhead + counter.count(CUE.canonical_tag());
    let last_needed = fixed + turn_cost(counter, last);
    if last_needed > limit {
        return Err(HistoryError::BudgetImpossible { needed: last_needed, limit });
    }

    let window = n_recent.min(history.len());
    let mut start = history.len() - window;
    let mut used: usize = fixed + history[start..].iter().map(|t| turn_cost(counter, t)).sum::<usize>();
    while used > limit {
        used -= turn_cost(counter, &history[start]);
        start += 1;
    }
    Ok(PrunedContext {
        summary_turn: None,
        retained_turns: history[start..].to_vec(),
        dropped_count: start,
        budget,
    })
}

/// Window pruning with the approximate counter and no preamble.
pub fn prune_window(history: &[DialogueTurn], budget: TokenBudget, n_recent: usize) -> Result<PrunedContext, HistoryError> {
    prune_with(&ApproxTokens, history, budget, n_recent, 0)
}

fn prompt_lines(preamble: &str, ctx: &PrunedContext) -> Vec<String> {
    let mut lines = Vec::with_capacity(ctx.retained_turns.len() + 3);
    if !preamble.trim().is_empty() {
        lines.push(preamble.trim().to_string());
    }
    if let Some(summary) = &ctx.summary_turn {
        lines.push(summary.render_tagged());
    }
    lines.extend(ctx.retained_turns.iter().map(DialogueTurn::render_tagged));
    lines.push(CUE.canonical_tag().to_string());
    lines
}

fn assemble_with(counter: &dyn TokenCounter, preamble: &str, ctx: &PrunedContext) -> Result<String, HistoryError> {
    let prompt = prompt_lines(preamble, ctx).join("\n");
    let needed = counter.count(&prompt);
    let limit = ctx.budget.prompt_limit();
    if needed > limit {
        return Err(HistoryError::BudgetImpossible { needed, limit });
    }
    Ok(prompt)
}

/// Renders the prompt text and rechecks the budget with the preamble included.
pub fn assemble_prompt(system_preamble: &str, ctx: &PrunedContext) -> Result<String, HistoryError> {
    assemble_with(&ApproxTokens, system_preamble, ctx)
}

/// Cuts `text` at the last sentence end (`.`, `!`, `?`) that keeps it within
/// `cap` tokens. Without any such boundary, whole words are kept up to the cap.
pub fn truncate_to_sentence(counter: &dyn TokenCounter, text: &str, cap: usize) -> String {
    let text = text.trim();
    if counter.count(text) <= cap {
        return text.to_string();
    }
    let mut best: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            let at_boundary = text[end..].chars().next().is_none_or(char::is_whitespace);
            if at_boundary {
                if counter.count(&text[..end]) <= cap {
                    best = Some(end);
                } else {
                    break;
                }
            }
        }
    }
    if let Some(end) = best {
        return text[..end].trim().to_string();
    }
    let mut out = String::new();
    for word in text.split_whitespace() {
        let candidate = if out.is_empty() { word.to_string() } else { format!("{out} {word}") };
        if counter.count(&candidate) > cap {
            break;
        }
        out = candidate;
    }
    out
}

const SUMMARY_INSTRUCTION: &str = "Summarize the earlier part of this patient conversation in a few plain sentences. \
Keep every symptom, duration and answer the patient gave. Do not add advice or a diagnosis.";

fn transcript(turns: &[DialogueTurn]) -> String {
    turns.iter().map(DialogueTurn::render_tagged).collect::<Vec<_>>().join("\n")
}

fn summarize_with(
    counter: &dyn TokenCounter,
    history_prefix: &[DialogueTurn],
    backend: &dyn ChatBackend,
    cap: usize,
    input_limit: usize,
) -> Result<DialogueTurn, HistoryError> {
    if history_prefix.is_empty() {
        return Err(HistoryError::EmptyHistory);
    }
    // Oldest dropped turns go first when the summarizer prompt itself would overflow.
    let mut used = counter.count(SUMMARY_INSTRUCTION);
    let mut start = history_prefix.len();
    while start > 0 {
        let cost = turn_cost(counter, &history_prefix[start - 1]);
        if used + cost > input_limit {
            break;
        }
        used += cost;
        start -= 1;
    }
    if start == history_prefix.len() {
        return Err(HistoryError::BudgetImpossible { needed: used + turn_cost(counter, &history_prefix[start - 1]), limit: input_limit });
    }
    let messages = [ChatMessage::system(SUMMARY_INSTRUCTION), ChatMessage::user(transcript(&history_prefix[start..]))];
    let reply = backend.chat(&messages, &ChatOptions::default())?;
    let text = truncate_to_sentence(counter, &reply, cap);
    if text.is_empty() {
        return Err(HistoryError::EmptySummary);
    }
    Ok(DialogueTurn::new(SpeakerRole::System, text, 0))
}

/// Condenses dropped turns into one `[System]` turn of at most `cap` tokens.
pub fn summarize_dropped(
    history_prefix: &[DialogueTurn],
    backend: &dyn ChatBackend,
    cap: usize,
) -> Result<DialogueTurn, HistoryError> {
    summarize_with(&ApproxTokens, history_prefix, backend, cap, usize::MAX)
}

/// A prompt ready to send, in both its text and chat-message forms.
#[derive(Debug, Clone)]
pub struct BuiltPrompt {
    pub text: String,
    pub context: PrunedContext,
    pub messages: Vec<ChatMessage>,
    pub tokens: usize,
}

/// Budget policy for live prompts.
#[derive(Clone)]
pub struct HistoryManager {
    pub budget: TokenBudget,
    pub n_recent: usize,
    pub summary_cap: usize,
    pub summarize: bool,
    counter: Arc<dyn TokenCounter>,
}

impl std::fmt::Debug for HistoryManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HistoryManager")
            .field("budget", &self.budget)
            .field("n_recent", &self.n_recent)
            .field("summary_cap", &self.summary_cap)
            .field("summarize", &self.summarize)
            .finish()
    }
}

impl Default for HistoryManager {
    fn default() -> Self {
        Self::new(TokenBudget::default())
    }
}

impl HistoryManager {
    pub fn new(budget: TokenBudget) -> Self {
        Self {
            budget,
            n_recent: DEFAULT_N_RECENT,
            summary_cap: DEFAULT_SUMMARY_CAP,
            summarize: true,
            counter: Arc::new(ApproxTokens),
        }
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn counter(&self) -> &dyn TokenCounter {
        self.counter.as_ref()
    }

    pub fn prune(&self, history: &[DialogueTurn], overhead: usize) -> Result<PrunedContext, HistoryError> {
        prune_with(self.counter.as_ref(), history, self.budget, self.n_recent, overhead)
    }

    /// Prunes `history`, summarizes what fell out of the window when enabled,
    /// and assembles the prompt.
    pub fn build(
        &self,
        preamble: &str,
        history: &[DialogueTurn],
        backend: Option<&dyn ChatBackend>,
    ) -> Result<BuiltPrompt, HistoryError> {
        let counter = self.counter.as_ref();
        let preamble_cost = if preamble.trim().is_empty() { 0 } else { counter.count(preamble.trim()) };
        let mut ctx = self.prune(history, preamble_cost)?;

        if let (true, true, Some(backend)) = (self.summarize, ctx.dropped_count > 0, backend) {
            let tag_cost = counter.count(SpeakerRole::System.canonical_tag());
            let reserved = self.prune(history, preamble_cost + self.summary_cap + tag_cost);
            // When the worst-case summary leaves no room, fall back to the plain window.
            if let Ok(mut with_room) = reserved {
                let limit = self.budget.prompt_limit();
                match summarize_with(counter, &history[..with_room.dropped_count], backend, self.summary_cap, limit) {
                    Ok(summary) => {
                        with_room.summary_turn = Some(summary);
                        ctx = with_room;
                    }
                    Err(HistoryError::BudgetImpossible { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        let text = assemble_with(counter, preamble, &ctx)?;
        let tokens = counter.count(&text);
        let mut messages = Vec::with_capacity(ctx.retained_turns.len() + 2);
        if !preamble.trim().is_empty() {
            messages.push(ChatMessage::system(preamble.trim()));
        }
        if let Some(summary) = &ctx.summary_turn {
            messages.push(ChatMessage::system(summary.render_tagged()));
        }
        messages.extend(ctx.retained_turns.iter().map(|t| ChatMessage::new(t.role, t.render_tagged())));
        Ok(BuiltPrompt { text, context: ctx, messages, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted_mock;
    use proptest::prelude::*;

    fn turns(texts: &[&str]) -> Vec<DialogueTurn> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let role = if i % 2 == 0 { SpeakerRole::Assistant } else { SpeakerRole::Patient };
                DialogueTurn::new(role, *t, i)
            })
            .collect()
    }

    /// Turn whose tagged rendering costs exactly `n` approx tokens (tag = 3).
    fn sized_turn(i: usize, n: usize) -> DialogueTurn {
        let role = if i % 2 == 0 { SpeakerRole::Assistant } else { SpeakerRole::Patient };
        DialogueTurn::new(role, vec!["w"; n - 3].join(" "), i)
    }

    #[test]
    fn approx_token_examples() {
        assert_eq!(approx_tokens(""), 0);
        assert_eq!(approx_tokens("I have a headache."), 5);
        assert_eq!(approx_tokens("[Patient]"), 3);
        assert_eq!(approx_tokens("don't"), 1);
        assert_eq!(approx_tokens("..."), 3);
        assert_eq!(approx_tokens("(fever), cough!"), 6);
    }

    #[test]
    fn window_rule_alone() {
        let h = turns(&["a"; 10]);
        let ctx = prune_window(&h, TokenBudget::default(), 6).unwrap();
        assert_eq!(ctx.retained_turns, h[4..].to_vec());
        assert_eq!(ctx.dropped_count, 4);
    }

    #[test]
    fn budget_admits_only_last_three() {
        // Each turn costs 10, the cue 3. Limit 40 - 7 = 33 admits 3 turns (33).
        let h: Vec<_> = (0..10).map(|i| sized_turn(i, 10)).collect();
        let budget = TokenBudget::new(40, 7).unwrap();
        let ctx = prune_window(&h, budget, 12).unwrap();
        assert_eq!(ctx.retained_turns.len(), 3);
        assert_eq!(ctx.dropped_count, 7);
        assert_eq!(ctx.retained_turns[0].index, 7);
        let prompt = assemble_prompt("", &ctx).unwrap();
        assert_eq!(approx_tokens(&prompt), 33);
    }

    #[test]
    fn oversized_final_turn_is_impossible() {
        let h = vec![sized_turn(0, 300)];
        let err = prune_window(&h, TokenBudget::new(256, 64).unwrap(), 4).unwrap_err();
        assert!(matches!(err, HistoryError::BudgetImpossible { needed: 303, limit: 192 }));
    }

    #[test]
    fn invalid_inputs() {
        assert!(TokenBudget::new(100, 100).is_err());
        assert!(TokenBudget::new(100, 0).is_err());
        assert_eq!(prune_window(&turns(&["a"]), TokenBudget::default(), 1).unwrap_err(), HistoryError::WindowTooSmall(1));
        assert_eq!(prune_window(&[], TokenBudget::default(), 4).unwrap_err(), HistoryError::EmptyHistory);
    }

    #[test]
    fn golden_prompt_two_turns() {
        let h = turns(&["Hello, what brings you in today?", "I have a cough."]);
        let ctx = prune_window(&h, TokenBudget::default(), 12).unwrap();
        let prompt = assemble_prompt("You are a triage assistant.", &ctx).unwrap();
        assert_eq!(
            prompt,
            "You are a triage assistant.\n[Assistant] Hello, what brings you in today?\n[Patient] I have a cough.\n[Assistant]"
        );
        assert_eq!(prompt.lines().count(), 4);
    }

    #[test]
    fn summary_rendered_before_turns() {
        let h = turns(&["q", "a"]);
        let mut ctx = prune_window(&h, TokenBudget::default(), 12).unwrap();
        ctx.summary_turn = Some(DialogueTurn::new(SpeakerRole::System, "Cough for 3 days.", 0));
        let prompt = assemble_prompt("P", &ctx).unwrap();
        let lines: Vec<_> = prompt.lines().collect();
        assert_eq!(lines, vec!["P", "[System] Cough for 3 days.", "[Assistant] q", "[Patient] a", "[Assistant]"]);
    }

    #[test]
    fn preamble_recheck_fails_when_too_long() {
        let h: Vec<_> = (0..2).map(|i| sized_turn(i, 10)).collect();
        let ctx = prune_window(&h, TokenBudget::new(30, 5).unwrap(), 4).unwrap();
        let long = vec!["word"; 20].join(" ");
        assert!(matches!(assemble_prompt(&long, &ctx), Err(HistoryError::BudgetImpossible { .. })));
    }

    #[test]
    fn summarize_returns_system_turn() {
        let backend = scripted_mock([("", "Patient reports cough for 3 days.")]);
        let turn = summarize_dropped(&turns(&["q", "a"]), &backend, 128).unwrap();
        assert_eq!(turn.role, SpeakerRole::System);
        assert_eq!(turn.text, "Patient reports cough for 3 days.");
    }

    #[test]
    fn long_summary_truncated_at_sentence() {
        // 50 sentences of "Word word word word word word word word word." = 10 tokens each.
        let sentence = "Word word word word word word word word word.";
        let long = vec![sentence; 50].join(" ");
        assert_eq!(approx_tokens(&long), 500);
        let backend = scripted_mock([("", long.as_str())]);
        let turn = summarize_dropped(&turns(&["q", "a"]), &backend, 128).unwrap();
        assert_eq!(approx_tokens(&turn.text), 120);
        assert!(turn.text.ends_with('.'));
    }

    #[test]
    fn truncation_without_boundary_keeps_words() {
        let text = vec!["alpha"; 20].join(" ");
        assert_eq!(truncate_to_sentence(&ApproxTokens, &text, 5), vec!["alpha"; 5].join(" "));
    }

    #[test]
    fn empty_prefix_rejected() {
        let backend = scripted_mock([("", "x")]);
        assert_eq!(summarize_dropped(&[], &backend, 128).unwrap_err(), HistoryError::EmptyHistory);
    }

    #[test]
    fn manager_summarizes_dropped_turns() {
        let h: Vec<_> = (0..20).map(|i| sized_turn(i, 20)).collect();
        let backend = scripted_mock([("", "Earlier: mild cough. No fever.")]);
        let mut mgr = HistoryManager::new(TokenBudget::new(256, 64).unwrap());
        mgr.n_recent = 12;
        let built = mgr.build("Be kind.", &h, Some(&backend)).unwrap();
        assert!(built.context.dropped_count > 0);
        assert!(built.context.summary_turn.is_some());
        assert!(built.tokens <= 192);
        assert!(built.text.contains("[System] Earlier: mild cough. No fever."));
        assert_eq!(built.messages.len(), built.context.retained_turns.len() + 2);

        mgr.summarize = false;
        let plain = mgr.build("Be kind.", &h, Some(&backend)).unwrap();
        assert!(plain.context.summary_turn.is_none());
        assert!(plain.context.retained_turns.len() >= built.context.retained_turns.len());
    }

    fn arb_history() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(4usize..200, 1..40)
    }

    proptest! {
        #[test]
        fn budget_suffix_and_monotonicity(sizes in arb_history(), max in 64usize..2048, reserve_frac in 0.05f64..0.9, n_recent in 2usize..30) {
            let h: Vec<_> = sizes.iter().enumerate().map(|(i, n)| sized_turn(i, *n)).collect();
            let reserve = ((max as f64 * reserve_frac) as usize).clamp(1, max - 1);
            let budget = TokenBudget::new(max, reserve).unwrap();
            match prune_window(&h, budget, n_recent) {
                Ok(ctx) => {
                    let prompt = assemble_prompt("", &ctx).unwrap();
                    prop_assert!(approx_tokens(&prompt) <= budget.prompt_limit());
                    prop_assert_eq!(&ctx.retained_turns[..], &h[ctx.dropped_count..]);
                    prop_assert!(!ctx.retained_turns.is_empty());
                    let bigger = TokenBudget::new(max + 100, reserve).unwrap();
                    let ctx2 = prune_window(&h, bigger, n_recent).unwrap();
                    prop_assert!(ctx2.retained_turns.len() >= ctx.retained_turns.len());
                }
                Err(HistoryError::BudgetImpossible { .. }) => {
                    prop_assert!(sizes.last().unwrap() + 3 > budget.prompt_limit());
                }
                Err(e) => prop_assert!(false, "unexpected {e:?}"),
            }
        }

        #[test]
        fn approx_tokens_is_additive(a in "[a-z .,!?']{0,40}", b in "[a-z .,!?']{0,40}") {
            let joined = format!("{a} {b}");
            prop_assert_eq!(approx_tokens(&joined), approx_tokens(&a) + approx_tokens(&b));
        }
    }
}
