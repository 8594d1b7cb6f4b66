//! Word-level tokenizer shared by the stub text and query embedders.

/// Lowercases `text` and splits it on anything that is not alphanumeric.
/// Tokens found in `stop_words` (compared lowercase) are dropped.
pub fn tokenize(text: &str, stop_words: &[String]) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stop_words.iter().any(|s| s.eq_ignore_ascii_case(t)))
        .collect()
}
