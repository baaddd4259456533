use super::CuclError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Float(f32),
    Str(String),
    Punct(&'static str),
    /// `#pragma <rest of line>`
    Pragma(String),
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCTS: &[&str] = &[
    "->", "++", "--", "+=", "-=", "*=", "/=", "%=", "==", "!=", "<=", ">=", "&&", "||", "+", "-", "*", "/", "%",
    "<", ">", "=", "!", "?", ":", ";", ",", ".", "(", ")", "[", "]", "{", "}",
];

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, CuclError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut line_start) = (0usize, 1usize, 0usize);
    let mut at_line_start = true;
    while i < bytes.len() {
        let c = bytes[i];
        let col = i - line_start + 1;
        if c == b'\n' {
            i += 1;
            line += 1;
            line_start = i;
            at_line_start = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let end = src[i + 2..]
                .find("*/")
                .ok_or(CuclError::Parse { line, col, expected: "end of comment".into() })?;
            for &b in &bytes[i..i + 2 + end + 2] {
                if b == b'\n' {
                    line += 1;
                }
            }
            i += 2 + end + 2;
            if let Some(nl) = src[..i].rfind('\n') {
                line_start = nl + 1;
            }
            continue;
        }
        if c == b'#' {
            if !at_line_start {
                return Err(CuclError::Unsupported { token: "#".into(), line, col });
            }
            let end = src[i..].find('\n').map_or(bytes.len(), |e| i + e);
            let text = src[i + 1..end].trim();
            match text.strip_prefix("pragma") {
                Some(rest) => out.push(Token { tok: Tok::Pragma(rest.trim().to_string()), line, col }),
                None => return Err(CuclError::Unsupported { token: format!("#{text}"), line, col }),
            }
            i = end;
            continue;
        }
        at_line_start = false;
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), line, col });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                is_float = true;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text = &src[start..i];
            if i < bytes.len() && (bytes[i] == b'f' || bytes[i] == b'F') {
                is_float = true;
                i += 1;
            }
            let bad = || CuclError::Parse { line, col, expected: format!("number, found `{text}`") };
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| bad())?)
            } else {
                Tok::Int(text.parse().map_err(|_| bad())?)
            };
            if i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                return Err(CuclError::Unsupported { token: src[start..=i].to_string(), line, col });
            }
            out.push(Token { tok, line, col });
            continue;
        }
        if c == b'"' {
            let end = src[i + 1..]
                .find('"')
                .ok_or(CuclError::Parse { line, col, expected: "closing quote".into() })?;
            out.push(Token { tok: Tok::Str(src[i + 1..i + 1 + end].to_string()), line, col });
            i += end + 2;
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                out.push(Token { tok: Tok::Punct(p), line, col });
                i += p.len();
            }
            None => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(CuclError::Unsupported { token: ch.to_string(), line, col });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col: i - line_start + 1 });
    Ok(out)
}
