//! Just enough C++ lexing to find macro call sites and function definitions
//! without being fooled by comments or literals.

/// Copy of `code` with comments, string and character literals blanked to
/// spaces. Newlines and byte offsets are preserved.
pub fn mask(code: &str) -> String {
    let b = code.as_bytes();
    let mut out = b.to_vec();
    let mut i = 0;
    let blank = |out: &mut Vec<u8>, from: usize, to: usize| {
        for c in &mut out[from..to] {
            if *c != b'\n' {
                *c = b' ';
            }
        }
    };
    while i < b.len() {
        match b[i] {
            b'/' if b.get(i + 1) == Some(&b'/') => {
                let end = code[i..].find('\n').map_or(b.len(), |n| i + n);
                blank(&mut out, i, end);
                i = end;
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let end = code[i + 2..].find("*/").map_or(b.len(), |n| i + 2 + n + 2);
                blank(&mut out, i, end);
                i = end;
            }
            q @ (b'"' | b'\'') => {
                let mut j = i + 1;
                while j < b.len() && b[j] != q && b[j] != b'\n' {
                    j += if b[j] == b'\\' { 2 } else { 1 };
                }
                let end = (j + 1).min(b.len());
                // keep the quotes so literals stay visible as tokens
                blank(&mut out, i + 1, end.saturating_sub(1).max(i + 1));
                i = end;
            }
            _ => i += 1,
        }
    }
    String::from_utf8(out).expect("only ASCII bytes were replaced")
}

fn is_ident(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// Offset just past the parenthesis matching the one at `open`.
pub fn matching_paren(masked: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, &c) in masked.iter().enumerate().skip(open) {
        match c {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// A `NAME(...)` call site in the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub name: String,
    pub start: usize,
    /// One past the closing parenthesis.
    pub end: usize,
    /// Argument text between the parentheses.
    pub args: String,
}

/// Every call of an identifier in `names`, in text order.
pub fn call_sites(code: &str, names: &[&str]) -> Vec<Site> {
    let masked = mask(code);
    let m = masked.as_bytes();
    let mut sites = Vec::new();
    let mut i = 0;
    while i < m.len() {
        if !is_ident(m[i]) || (i > 0 && is_ident(m[i - 1])) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < m.len() && is_ident(m[j]) {
            j += 1;
        }
        let word = &masked[i..j];
        let mut k = j;
        while k < m.len() && m[k].is_ascii_whitespace() {
            k += 1;
        }
        if names.contains(&word) && m.get(k) == Some(&b'(') {
            if let Some(end) = matching_paren(m, k) {
                sites.push(Site {
                    name: word.to_string(),
                    start: i,
                    end,
                    args: code[k + 1..end - 1].to_string(),
                });
                i = end;
                continue;
            }
        }
        i = j;
    }
    sites
}

const NOT_FUNCTIONS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "return", "sizeof", "alignof", "decltype", "new",
    "delete", "throw", "case", "do", "else", "static_assert", "typeid", "noexcept",
];

const TYPE_END: &[u8] = b"*&>:";

/// 1-based line of the first thing that looks like a function definition:
/// a type, a name, a parameter list and a brace.
pub fn find_function_definition(code: &str) -> Option<usize> {
    let masked = mask(code);
    let m = masked.as_bytes();
    let mut i = 0;
    while i < m.len() {
        if m[i] != b'(' {
            i += 1;
            continue;
        }
        // name directly before the paren
        let mut e = i;
        while e > 0 && m[e - 1].is_ascii_whitespace() {
            e -= 1;
        }
        let mut s = e;
        while s > 0 && is_ident(m[s - 1]) {
            s -= 1;
        }
        let name = &masked[s..e];
        let close = matching_paren(m, i)?;
        let before_name = masked[..s].trim_end();
        let typed = before_name
            .as_bytes()
            .last()
            .is_some_and(|&c| is_ident(c) || TYPE_END.contains(&c));
        let prev_word: String = before_name
            .bytes()
            .rev()
            .take_while(|&c| is_ident(c))
            .map(char::from)
            .collect::<String>()
            .chars()
            .rev()
            .collect();
        let is_candidate = !name.is_empty()
            && !name.as_bytes()[0].is_ascii_digit()
            && !NOT_FUNCTIONS.contains(&name)
            && typed
            && !matches!(prev_word.as_str(), "return" | "else" | "new" | "throw" | "case");
        if is_candidate {
            let rest = masked[close..].trim_start();
            let rest = strip_qualifiers(rest);
            if rest.starts_with('{') {
                return Some(code[..s].matches('\n').count() + 1);
            }
        }
        i += 1;
    }
    None
}

fn strip_qualifiers(mut rest: &str) -> &str {
    loop {
        let before = rest;
        for q in ["const", "noexcept", "override", "final", "volatile"] {
            if let Some(r) = rest.strip_prefix(q) {
                if !r.as_bytes().first().copied().is_some_and(is_ident) {
                    rest = r.trim_start();
                }
            }
        }
        if rest == before {
            return rest;
        }
    }
}

/// C++ string literal for arbitrary bytes: `std::string("...", n)`.
pub fn string_literal(bytes: &[u8]) -> String {
    let mut s = String::from("std::string(\"");
    let mut prev_hex = false;
    for &c in bytes {
        let esc = match c {
            b'"' => Some("\\\"".to_string()),
            b'\\' => Some("\\\\".to_string()),
            b'\n' => Some("\\n".to_string()),
            b'\t' => Some("\\t".to_string()),
            b'?' => Some("\\?".to_string()),
            0x20..=0x7e => None,
            _ => Some(format!("\\x{c:02x}")),
        };
        match esc {
            Some(e) => {
                prev_hex = e.starts_with("\\x");
                s.push_str(&e);
            }
            None => {
                // a hex escape swallows following hex digits
                if prev_hex && c.is_ascii_hexdigit() {
                    s.push_str("\"\"");
                }
                prev_hex = false;
                s.push(c as char);
            }
        }
    }
    s.push_str(&format!("\", {})", bytes.len()));
    s
}

/// Brace initializer for raw bytes.
pub fn byte_array(bytes: &[u8]) -> String {
    let body: Vec<String> = bytes.iter().map(|b| format!("0x{b:02x}")).collect();
    format!("{{{}}}", body.join(", "))
}
