use super::special;

/// Lowercases, splits on whitespace and emits every punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        split_chunk(&chunk.to_lowercase(), &mut out);
    }
    out
}

/// Like [`tokenize`], but whitespace-delimited control tokens (`<SEP>`,
/// `<soc>`, ...) pass through untouched. Used for user-supplied Chae text.
pub fn tokenize_with_specials(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        match special::canonical(chunk) {
            Some(tok) => out.push(tok.to_string()),
            None => split_chunk(&chunk.to_lowercase(), &mut out),
        }
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut word = String::new();
    for ch in chunk.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
}

/// Joins tokens with single spaces; no attempt is made to re-attach punctuation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}
