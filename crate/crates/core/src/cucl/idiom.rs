//! Platform idioms and their OpenCL / CUDA spellings.

use std::fmt;

use super::CuclError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dialect {
    OpenCl,
    Cuda,
}

impl Dialect {
    pub const ALL: [Dialect; 2] = [Dialect::OpenCl, Dialect::Cuda];

    pub fn tag(self) -> &'static str {
        match self {
            Dialect::OpenCl => "opencl",
            Dialect::Cuda => "cuda",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `(idiom, OpenCL text, CUDA text)`.
pub const IDIOM_TABLE: &[(&str, &str, &str)] = &[
    ("LOCAL_ID_1D", "get_local_id(0)", "threadIdx.x"),
    ("GROUP_ID_1D", "get_group_id(0)", "blockIdx.x"),
    ("LOCAL_SZ_1D", "get_local_size(0)", "blockDim.x"),
    ("GLOBAL_ID_1D", "get_global_id(0)", "(blockIdx.x*blockDim.x+threadIdx.x)"),
    ("BARRIER_SYNC", "barrier(CLK_LOCAL_MEM_FENCE)", "__syncthreads()"),
    ("LOCAL_MEM", "__local", "__shared__"),
    ("KERNEL_QUAL", "__kernel", "extern \"C\" __global__"),
    ("GLOBAL_MEM", "__global", ""),
];

/// Upper-case identifiers that are plain C in both dialects.
const PASSTHROUGH: &[&str] = &["INFINITY"];

pub fn idiom_text(idiom: &str, dialect: Dialect) -> Option<&'static str> {
    IDIOM_TABLE.iter().find(|e| e.0 == idiom).map(|e| match dialect {
        Dialect::OpenCl => e.1,
        Dialect::Cuda => e.2,
    })
}

fn looks_like_idiom(word: &str) -> bool {
    word.len() > 1
        && word.starts_with(|c: char| c.is_ascii_uppercase())
        && word.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
        && !PASSTHROUGH.contains(&word)
}

/// Replaces every idiom token with its spelling in `dialect`.
///
/// Comments pass through untouched except for raw regions written as
/// `/*@opencl ... */` or `/*@cuda ... */`: the region for `dialect` is
/// unwrapped into plain text, the other is dropped.
pub fn render_dialect(src: &str, dialect: Dialect) -> Result<String, CuclError> {
    let mut out = String::with_capacity(src.len() + src.len() / 8);
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let rest = &src[i..];
        if rest.starts_with("/*") {
            let end = rest.find("*/").map_or(src.len(), |e| i + e + 2);
            let comment = &src[i..end];
            let raw = ["opencl", "cuda"]
                .into_iter()
                .find_map(|tag| comment.strip_prefix(&format!("/*@{tag}")).map(|body| (tag, body)));
            match raw {
                Some((tag, body)) => {
                    if tag == dialect.tag() {
                        out.push_str(body.strip_suffix("*/").unwrap_or(body));
                    }
                }
                None => out.push_str(comment),
            }
            i = end;
            continue;
        }
        if rest.starts_with("//") {
            let end = rest.find('\n').map_or(src.len(), |e| i + e);
            out.push_str(&src[i..end]);
            i = end;
            continue;
        }
        if let Some(tail) = rest.strip_prefix('"') {
            let end = tail.find('"').map_or(src.len(), |e| i + e + 2);
            out.push_str(&src[i..end]);
            i = end;
            continue;
        }
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            match idiom_text(word, dialect) {
                Some(t) => out.push_str(t),
                None if looks_like_idiom(word) => return Err(CuclError::UnknownIdiom(word.to_string())),
                None => out.push_str(word),
            }
            continue;
        }
        if c.is_ascii_digit() {
            // keep numeric literals (and suffixes like 1e5f) whole
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.') {
                i += 1;
            }
            out.push_str(&src[start..i]);
            continue;
        }
        let ch = rest.chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// Line-level comparison of the two renderings of one kernel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DialectDiff {
    /// Lines that differ only in idiom spellings.
    pub idiom_lines: usize,
    /// 1-based lines that differ in anything else (or are unpaired).
    pub other_lines: Vec<usize>,
}

/// Compares an OpenCL and a CUDA rendering line by line.
pub fn dialect_diff(opencl: &str, cuda: &str) -> DialectDiff {
    let norm = |s: &str, d: Dialect| {
        let u = unrender_dialect(s, d);
        u.replace("GLOBAL_MEM", " ").split_whitespace().collect::<Vec<_>>().join(" ")
    };
    let (a, b): (Vec<&str>, Vec<&str>) = (opencl.lines().collect(), cuda.lines().collect());
    let mut d = DialectDiff::default();
    for i in 0..a.len().max(b.len()) {
        match (a.get(i), b.get(i)) {
            (Some(x), Some(y)) if x == y => {}
            (Some(x), Some(y)) if norm(x, Dialect::OpenCl) == norm(y, Dialect::Cuda) => d.idiom_lines += 1,
            _ => d.other_lines.push(i + 1),
        }
    }
    d
}

/// Maps dialect spellings back to idioms. `GLOBAL_MEM` has no CUDA
/// spelling, so CUDA text comes back without it; the kernel parser treats
/// it as optional.
pub fn unrender_dialect(src: &str, dialect: Dialect) -> String {
    let mut pairs: Vec<(&str, &str)> = IDIOM_TABLE
        .iter()
        .map(|e| (e.0, if dialect == Dialect::OpenCl { e.1 } else { e.2 }))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    pairs.sort_by_key(|(_, t)| std::cmp::Reverse(t.len()));
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let bytes = src.as_bytes();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    'outer: while i < bytes.len() {
        let boundary_before = i == 0 || !is_word(bytes[i - 1]);
        if boundary_before {
            for (idiom, text) in &pairs {
                if src[i..].starts_with(text) {
                    let end = i + text.len();
                    let last = text.as_bytes()[text.len() - 1];
                    if !is_word(last) || end == bytes.len() || !is_word(bytes[end]) {
                        out.push_str(idiom);
                        i = end;
                        continue 'outer;
                    }
                }
            }
        }
        let ch = src[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}
