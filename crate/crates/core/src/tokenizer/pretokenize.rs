//! GPT-2 pre-tokenization as a hand-written scanner.
//!
//! Reproduces the split of the reference pattern
//! `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`
//! with leftmost-first alternation.

use unicode_general_category::{get_general_category, GeneralCategory as Gc};

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Number,
    Space,
    Other,
}

fn class_of(c: char) -> Class {
    if c.is_whitespace() {
        return Class::Space;
    }
    match get_general_category(c) {
        Gc::UppercaseLetter | Gc::LowercaseLetter | Gc::TitlecaseLetter | Gc::ModifierLetter | Gc::OtherLetter => {
            Class::Letter
        }
        Gc::DecimalNumber | Gc::LetterNumber | Gc::OtherNumber => Class::Number,
        _ => Class::Other,
    }
}

/// Splits `text` into pre-tokens, returned as byte ranges that tile the input.
pub fn pre_tokenize(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char, Class)> = text.char_indices().map(|(i, c)| (i, c, class_of(c))).collect();
    let byte_at = |k: usize| chars.get(k).map_or(text.len(), |&(b, _, _)| b);

    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let end = scan_one(text, &chars, i);
        spans.push((byte_at(i), byte_at(end)));
        i = end;
    }
    spans
}

/// Returns the char index one past the pre-token starting at `i`.
fn scan_one(text: &str, chars: &[(usize, char, Class)], i: usize) -> usize {
    let (start_byte, first, _) = chars[i];
    if first == '\'' {
        let rest = &text[start_byte..];
        if let Some(c) = CONTRACTIONS.iter().find(|c| rest.starts_with(**c)) {
            return i + c.chars().count();
        }
    }

    // ` ?\p{L}+`, ` ?\p{N}+`, ` ?[^\s\p{L}\p{N}]+`
    let body = if first == ' ' { i + 1 } else { i };
    if let Some(&(_, _, class)) = chars.get(body) {
        if class != Class::Space {
            let mut j = body + 1;
            while j < chars.len() && chars[j].2 == class {
                j += 1;
            }
            return j;
        }
    }

    // `\s+(?!\S)` then `\s+`
    let mut j = i;
    while j < chars.len() && chars[j].2 == Class::Space {
        j += 1;
    }
    let run = j - i;
    if j == chars.len() || run == 1 {
        j
    } else {
        j - 1
    }
}
