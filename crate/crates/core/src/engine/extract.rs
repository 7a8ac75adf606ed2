use crate::domain::{Department, DepartmentSet};

/// Phrases that mark a reply as a referral rather than a question that
/// happens to name a department.
const REFERRAL_CUES: [&str; 7] = ["recommend", "suggest", "advise", "refer", "should visit", "should see", "should go"];

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

fn occurrences(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if needle.is_empty() {
        return out;
    }
    let bytes = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0 || !is_word_byte(bytes[start - 1]);
        let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
        if left_ok && right_ok {
            out.push((start, end));
        }
        from = start + needle.len().max(1);
        while !haystack.is_char_boundary(from) {
            from += 1;
        }
    }
    out
}

/// Finds the department a reply names. Matching is case-insensitive on whole
/// words; a name nested inside a longer matched name does not count; when
/// several departments are named the last mention wins.
pub fn extract_department(reply_text: &str, departments: &DepartmentSet) -> Option<Department> {
    let text = reply_text.to_lowercase();
    let mut spans: Vec<(usize, usize, &Department)> = departments
        .iter()
        .flat_map(|d| occurrences(&text, &d.canonical()).into_iter().map(move |(s, e)| (s, e, d)))
        .collect();
    let all = spans.clone();
    spans.retain(|&(s, e, _)| !all.iter().any(|&(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s)));
    spans.into_iter().max_by_key(|&(s, e, _)| (s, e)).map(|(_, _, d)| d.clone())
}

/// A department plus a referral cue. Used to decide that the assistant has
/// issued its recommendation.
pub fn detect_recommendation(reply_text: &str, departments: &DepartmentSet) -> Option<Department> {
    let lower = reply_text.to_lowercase();
    if !REFERRAL_CUES.iter().any(|c| lower.contains(c)) {
        return None;
    }
    extract_department(reply_text, departments)
}
