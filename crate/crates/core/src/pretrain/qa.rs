use similar::{capture_diff_slices, Algorithm, DiffOp};

use super::objectives::QaTarget;
use crate::error::Result;
use crate::tokenize::{encode_tokens, tokenize_text, TokenSequence, Vocabulary};

/// Removes `//` and `/* */` comments, leaving string and char literals
/// intact. Newlines inside block comments survive so line numbers are
/// preserved.
pub fn strip_comments(code: &str) -> String {
    #[derive(PartialEq)]
    enum State {
        Code,
        Line,
        Block,
        Quoted(char),
    }
    let mut out = String::with_capacity(code.len());
    let mut state = State::Code;
    let mut chars = code.chars().peekable();
    while let Some(c) = chars.next() {
        match state {
            State::Code => match (c, chars.peek()) {
                ('/', Some('/')) => {
                    chars.next();
                    state = State::Line;
                }
                ('/', Some('*')) => {
                    chars.next();
                    state = State::Block;
                }
                ('"' | '\'', _) => {
                    out.push(c);
                    state = State::Quoted(c);
                }
                _ => out.push(c),
            },
            State::Line => {
                if c == '\n' {
                    out.push(c);
                    state = State::Code;
                }
            }
            State::Block => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    state = State::Code;
                } else if c == '\n' {
                    out.push(c);
                }
            }
            State::Quoted(q) => {
                out.push(c);
                if c == '\\' {
                    if let Some(next) = chars.next() {
                        out.push(next);
                    }
                } else if c == q || c == '\n' {
                    state = State::Code;
                }
            }
        }
    }
    out
}

/// Pre-fix line range of the first changed hunk. A pure insertion maps to
/// the pre line just above it (or below, at the top of the file).
fn first_hunk(pre: &[&str], post: &[&str]) -> Option<std::ops::Range<usize>> {
    let ops = capture_diff_slices(Algorithm::Myers, pre, post);
    let op = ops.iter().find(|op| !matches!(op, DiffOp::Equal { .. }))?;
    let range = op.old_range();
    if !range.is_empty() {
        return Some(range);
    }
    if pre.is_empty() {
        return None;
    }
    let anchor = range.start.saturating_sub(1).min(pre.len() - 1);
    Some(anchor..anchor + 1)
}

/// Builds a QA example: the bug text is the question, the comment-free
/// pre-fix file the context, and the first diff hunk the answer. `None`
/// when the versions agree, or the answer has no tokens inside the encoded
/// window.
pub fn qa_targets(
    bug_text: &str,
    pre_code: &str,
    post_code: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Option<(TokenSequence, QaTarget)>> {
    let pre = strip_comments(pre_code);
    let post = strip_comments(post_code);
    let pre_lines: Vec<&str> = pre.lines().collect();
    let post_lines: Vec<&str> = post.lines().collect();
    let Some(hunk) = first_hunk(&pre_lines, &post_lines) else {
        return Ok(None);
    };

    let mut code_tokens = Vec::new();
    let mut answer = (0, 0);
    for (i, line) in pre_lines.iter().enumerate() {
        if i == hunk.start {
            answer.0 = code_tokens.len();
        }
        code_tokens.extend(tokenize_text(line));
        if i + 1 == hunk.end {
            answer.1 = code_tokens.len();
        }
    }
    let seq = encode_tokens(&tokenize_text(bug_text), &code_tokens, vocab, max_len)?;
    let kept = seq.code_range().len();
    let end = answer.1.min(kept);
    if answer.0 >= end {
        return Ok(None);
    }
    let base = seq.sep_index + 1;
    let target = QaTarget {
        start: base + answer.0,
        end: base + end - 1,
    };
    Ok(Some((seq, target)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::train_vocabulary;

    fn vocab() -> Vocabulary {
        train_vocabulary(&["a b c X ; fix null pointer int x = 1 return"], 64).unwrap()
    }

    #[test]
    fn comments_are_removed_outside_literals() {
        let src = "a; // gone\nb = \"// kept\"; /* gone\n too */ c;\nd = '/';";
        assert_eq!(strip_comments(src), "a; \nb = \"// kept\"; \n c;\nd = '/';");
        assert_eq!(strip_comments("s = \"a\\\"/*x*/\";"), "s = \"a\\\"/*x*/\";");
    }

    #[test]
    fn changed_line_is_the_answer() {
        let (seq, t) = qa_targets("fix", "a;\nb;\nc;", "a;\nX;\nc;", &vocab(), 32)
            .unwrap()
            .unwrap();
        let v = vocab();
        // code tokens: a ; b ; c ;  -> answer is "b ;"
        assert_eq!(t.start, seq.sep_index + 3);
        assert_eq!(t.end, seq.sep_index + 4);
        assert_eq!(seq.ids[t.start], v.id("b"));
        assert_eq!(seq.ids[t.end], v.id(";"));
    }

    #[test]
    fn identical_versions_have_no_answer() {
        assert!(qa_targets("fix", "a;\nb;", "a;\nb;", &vocab(), 32).unwrap().is_none());
        // a comment-only edit is no change once comments are stripped
        assert!(qa_targets("fix", "a; // x", "a; // y", &vocab(), 32).unwrap().is_none());
    }

    #[test]
    fn answer_past_truncation_is_absent() {
        let pre: String = (0..40).map(|_| "a;\n").collect::<String>() + "b;\n";
        let post: String = (0..40).map(|_| "a;\n").collect::<String>() + "c;\n";
        assert!(qa_targets("fix", &pre, &post, &vocab(), 16).unwrap().is_none());
        let (_, t) = qa_targets("fix", &pre, &post, &vocab(), 128).unwrap().unwrap();
        assert_eq!(t.end - t.start, 1);
    }

    #[test]
    fn insertion_anchors_to_preceding_line() {
        let (seq, t) = qa_targets("fix", "a;\nc;", "a;\nb;\nc;", &vocab(), 32)
            .unwrap()
            .unwrap();
        assert_eq!(t.start, seq.sep_index + 1);
        assert_eq!(t.end, seq.sep_index + 2);
    }
}
