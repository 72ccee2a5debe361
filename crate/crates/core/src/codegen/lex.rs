//! Token scanner shared by the suffixer, the pruner and the interpreter.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Ident,
    Number,
    Punct,
    Space,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token<'a> {
    pub kind: Kind,
    pub text: &'a str,
}

const PUNCT2: &[&str] = &["<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/="];

fn number_len(b: &[u8]) -> usize {
    let mut i = 0;
    if b.len() > 1 && b[0] == b'0' && (b[1] == b'x' || b[1] == b'X') {
        i = 2;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'.') {
            i += 1;
        }
        return i;
    }
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if j < b.len() && b[j].is_ascii_digit() {
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    while i < b.len() && matches!(b[i], b'f' | b'F' | b'l' | b'L' | b'u' | b'U') {
        i += 1;
    }
    i
}

pub(crate) fn tokens(text: &str) -> Vec<Token<'_>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let (kind, len) = if c.is_ascii_whitespace() {
            (Kind::Space, b[i..].iter().take_while(|c| c.is_ascii_whitespace()).count())
        } else if c.is_ascii_alphabetic() || c == b'_' {
            (Kind::Ident, b[i..].iter().take_while(|c| c.is_ascii_alphanumeric() || **c == b'_').count())
        } else if c.is_ascii_digit() || (c == b'.' && b.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            (Kind::Number, number_len(&b[i..]))
        } else if PUNCT2.iter().any(|p| b[i..].starts_with(p.as_bytes())) {
            (Kind::Punct, 2)
        } else {
            // Whole UTF-8 scalar, so slicing stays on char boundaries.
            (Kind::Punct, text[i..].chars().next().map_or(1, char::len_utf8))
        };
        out.push(Token { kind, text: &text[i..i + len] });
        i += len;
    }
    out
}

/// Number literal classification.
pub(crate) struct Literal<'a> {
    pub body: &'a str,
    pub suffix: &'a str,
    pub hex: bool,
}

impl<'a> Literal<'a> {
    pub fn parse(text: &'a str) -> Self {
        if text.len() > 1 && (text.starts_with("0x") || text.starts_with("0X")) {
            return Literal { body: text, suffix: "", hex: true };
        }
        let cut = text.trim_end_matches(['f', 'F', 'l', 'L', 'u', 'U']).len();
        Literal { body: &text[..cut], suffix: &text[cut..], hex: false }
    }

    pub fn is_float(&self) -> bool {
        !self.hex && self.body.contains(['.', 'e', 'E'])
    }
}

/// Removes `//` and `/* */` comments.
pub(crate) fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        let line = rest.find("//");
        let block = rest.find("/*");
        match (line, block) {
            (Some(l), b) if b.is_none_or(|b| l < b) => {
                out.push_str(&rest[..l]);
                match rest[l..].find('\n') {
                    Some(n) => rest = &rest[l + n..],
                    None => return out,
                }
            }
            (_, Some(b)) => {
                out.push_str(&rest[..b]);
                match rest[b + 2..].find("*/") {
                    Some(e) => {
                        out.push(' ');
                        rest = &rest[b + 2 + e + 2..];
                    }
                    None => return out,
                }
            }
            _ => {
                out.push_str(rest);
                return out;
            }
        }
    }
}
