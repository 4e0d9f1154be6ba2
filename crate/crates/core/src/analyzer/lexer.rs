//! Lexer for R source. Honors the lexical rules that matter for call
//! extraction: `#` comments to end-of-line, single/double-quoted strings with
//! escapes (strings may span newlines), backquoted names, and atomic
//! `::` / `:::` / `<-` / `%...%` operators.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    String,
    Number,
    Operator,
    Comment,
    BackquotedName,
    /// User-defined `%...%` operators.
    Special,
}

#[derive(Debug, Clone, Serialize)]
pub struct Token {
    pub kind: TokenKind,
    /// Verbatim source text, quotes and escapes included.
    pub text: String,
    /// 1-based line of the first character.
    pub line: u32,
    /// 1-based column of the first character.
    pub column: u32,
    /// Byte offset of the first character; with the inter-token whitespace
    /// this makes source reconstruction testable.
    pub offset: usize,
}

/// A recoverable lexing problem. Lexing continues past every issue.
#[derive(Debug, Clone, Serialize)]
pub struct LexIssue {
    pub kind: LexIssueKind,
    pub line: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LexIssueKind {
    UnterminatedString,
}

#[derive(Debug, Clone)]
pub struct Tokenized {
    pub tokens: Vec<Token>,
    pub issues: Vec<LexIssue>,
}

/// Decode raw bytes to UTF-8, replacing invalid sequences. The returned flag
/// is true when replacement occurred, marking the file `encoding_suspect`.
pub fn decode_source(bytes: &[u8]) -> (String, bool) {
    match std::str::from_utf8(bytes) {
        Ok(s) => (s.to_string(), false),
        Err(_) => (String::from_utf8_lossy(bytes).into_owned(), true),
    }
}

struct Cursor<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    column: u32,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s)
    }
}

/// Tokenize R source. Unterminated strings are reported as issues; the
/// string token ends at the end of its opening line and lexing resumes on
/// the next line.
pub fn tokenize(source: &str) -> Tokenized {
    let mut cur = Cursor::new(source);
    let mut tokens = Vec::new();
    let mut issues = Vec::new();

    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let start = (cur.pos, cur.line, cur.column);
        match c {
            '#' => {
                while let Some(ch) = cur.peek() {
                    if ch == '\n' {
                        break;
                    }
                    cur.bump();
                }
                push(&mut tokens, TokenKind::Comment, &cur, start);
            }
            '"' | '\'' => {
                lex_string(&mut cur, &mut tokens, &mut issues, start, c);
            }
            '`' => {
                cur.bump();
                let mut closed = false;
                while let Some(ch) = cur.peek() {
                    if ch == '`' {
                        cur.bump();
                        closed = true;
                        break;
                    }
                    if ch == '\n' {
                        break;
                    }
                    cur.bump();
                }
                if !closed {
                    issues.push(LexIssue {
                        kind: LexIssueKind::UnterminatedString,
                        line: start.1,
                    });
                }
                push(&mut tokens, TokenKind::BackquotedName, &cur, start);
            }
            '%' => {
                // %...% special operator; must close on the same line.
                let rest = &cur.src[cur.pos + 1..];
                let line_end = rest.find('\n').unwrap_or(rest.len());
                if let Some(close) = rest[..line_end].find('%') {
                    for _ in 0..close + 2 {
                        cur.bump();
                    }
                    push(&mut tokens, TokenKind::Special, &cur, start);
                } else {
                    cur.bump();
                    push(&mut tokens, TokenKind::Operator, &cur, start);
                }
            }
            _ if c.is_ascii_digit() => {
                lex_number(&mut cur);
                push(&mut tokens, TokenKind::Number, &cur, start);
            }
            '.' => {
                // `.5` is a number; `.name` is an identifier; bare `.` too.
                if cur.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
                    lex_number(&mut cur);
                    push(&mut tokens, TokenKind::Number, &cur, start);
                } else {
                    lex_identifier(&mut cur);
                    push(&mut tokens, TokenKind::Identifier, &mut cur, start);
                }
            }
            _ if c.is_alphabetic() => {
                lex_identifier(&mut cur);
                push(&mut tokens, TokenKind::Identifier, &cur, start);
            }
            _ => {
                lex_operator(&mut cur);
                push(&mut tokens, TokenKind::Operator, &cur, start);
            }
        }
        // Guard against a stall on an unexpected byte.
        if cur.pos == start.0 {
            cur.bump();
        }
    }

    Tokenized { tokens, issues }
}

fn push(tokens: &mut Vec<Token>, kind: TokenKind, cur: &Cursor, start: (usize, u32, u32)) {
    tokens.push(Token {
        kind,
        text: cur.src[start.0..cur.pos].to_string(),
        line: start.1,
        column: start.2,
        offset: start.0,
    });
}

fn lex_string(
    cur: &mut Cursor,
    tokens: &mut Vec<Token>,
    issues: &mut Vec<LexIssue>,
    start: (usize, u32, u32),
    quote: char,
) {
    cur.bump();
    loop {
        match cur.peek() {
            Some('\\') => {
                cur.bump();
                cur.bump();
            }
            Some(ch) if ch == quote => {
                cur.bump();
                break;
            }
            Some(_) => {
                cur.bump();
            }
            None => {
                // No closing quote anywhere: report on the opening line,
                // truncate the token at that line's end and resume after it.
                issues.push(LexIssue {
                    kind: LexIssueKind::UnterminatedString,
                    line: start.1,
                });
                let opening_line_end = cur.bytes[start.0..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map(|i| start.0 + i)
                    .unwrap_or(cur.src.len());
                tokens.push(Token {
                    kind: TokenKind::String,
                    text: cur.src[start.0..opening_line_end].to_string(),
                    line: start.1,
                    column: start.2,
                    offset: start.0,
                });
                // Rewind to just after the opening line.
                let resume = (opening_line_end + 1).min(cur.src.len());
                *cur = Cursor::new(cur.src);
                while cur.pos < resume {
                    cur.bump();
                }
                return;
            }
        }
    }
    push(tokens, TokenKind::String, cur, start);
}

fn lex_number(cur: &mut Cursor) {
    if cur.starts_with("0x") || cur.starts_with("0X") {
        cur.bump();
        cur.bump();
        while cur.peek().is_some_and(|c| c.is_ascii_hexdigit()) {
            cur.bump();
        }
    } else {
        let mut seen_exp = false;
        while let Some(c) = cur.peek() {
            if c.is_ascii_digit() || c == '.' {
                cur.bump();
            } else if (c == 'e' || c == 'E') && !seen_exp {
                seen_exp = true;
                cur.bump();
                if cur.peek() == Some('+') || cur.peek() == Some('-') {
                    cur.bump();
                }
            } else {
                break;
            }
        }
    }
    // Integer / complex suffix.
    if cur.peek() == Some('L') || cur.peek() == Some('i') {
        cur.bump();
    }
}

fn lex_identifier(cur: &mut Cursor) {
    while let Some(c) = cur.peek() {
        if c.is_alphanumeric() || c == '.' || c == '_' {
            cur.bump();
        } else {
            break;
        }
    }
}

fn lex_operator(cur: &mut Cursor) {
    const THREE: [&str; 3] = ["<<-", "->>", ":::"];
    const TWO: [&str; 8] = ["<-", "->", "::", "==", "!=", "<=", ">=", "&&"];
    const TWO_B: [&str; 1] = ["||"];
    for op in THREE {
        if cur.starts_with(op) {
            for _ in 0..3 {
                cur.bump();
            }
            return;
        }
    }
    for op in TWO.iter().chain(TWO_B.iter()) {
        if cur.starts_with(op) {
            cur.bump();
            cur.bump();
            return;
        }
    }
    cur.bump();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .tokens
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn library_call_with_comment() {
        let toks = kinds("library(dplyr) # load");
        assert_eq!(
            toks,
            vec![
                (TokenKind::Identifier, "library".into()),
                (TokenKind::Operator, "(".into()),
                (TokenKind::Identifier, "dplyr".into()),
                (TokenKind::Operator, ")".into()),
                (TokenKind::Comment, "# load".into()),
            ]
        );
    }

    #[test]
    fn scoped_call_tokens() {
        let toks = kinds("knitr::opts_chunk$set(echo=TRUE)");
        assert_eq!(toks[0], (TokenKind::Identifier, "knitr".into()));
        assert_eq!(toks[1], (TokenKind::Operator, "::".into()));
        assert_eq!(toks[2], (TokenKind::Identifier, "opts_chunk".into()));
        assert_eq!(toks[3], (TokenKind::Operator, "$".into()));
        assert_eq!(toks[4], (TokenKind::Identifier, "set".into()));
    }

    #[test]
    fn string_shields_comment_char() {
        let toks = kinds(r##"x <- "a # not a comment""##);
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[2].0, TokenKind::String);
        assert!(toks[2].1.contains('#'));
    }

    #[test]
    fn triple_colon_and_arrows_atomic() {
        let toks = kinds("a:::b; x <<- 1; y ->> z");
        let ops: Vec<&str> = toks
            .iter()
            .filter(|(k, _)| *k == TokenKind::Operator)
            .map(|(_, t)| t.as_str())
            .collect();
        assert!(ops.contains(&":::"));
        assert!(ops.contains(&"<<-"));
        assert!(ops.contains(&"->>"));
    }

    #[test]
    fn special_operator_atomic() {
        let toks = kinds("a %in% b %>% c");
        let specials: Vec<&str> = toks
            .iter()
            .filter(|(k, _)| *k == TokenKind::Special)
            .map(|(_, t)| t.as_str())
            .collect();
        assert_eq!(specials, vec!["%in%", "%>%"]);
    }

    #[test]
    fn multiline_string_single_token() {
        let toks = kinds("x <- \"line one\nline two\"");
        assert_eq!(toks[2].0, TokenKind::String);
        assert!(toks[2].1.contains('\n'));
    }

    #[test]
    fn unterminated_string_reported_and_resumes_next_line() {
        let out = tokenize("x <- \"oops\nlibrary(dplyr)\n");
        assert_eq!(out.issues.len(), 1);
        assert_eq!(out.issues[0].line, 1);
        let texts: Vec<&str> = out.tokens.iter().map(|t| t.text.as_str()).collect();
        assert!(texts.contains(&"library"));
        assert!(texts.contains(&"dplyr"));
    }

    #[test]
    fn backquoted_name() {
        let toks = kinds("`my var` <- 1");
        assert_eq!(toks[0], (TokenKind::BackquotedName, "`my var`".into()));
    }

    #[test]
    fn numbers_and_suffixes() {
        let toks = kinds("1.5e-3 10L 0xFF .5 3i");
        assert!(toks.iter().all(|(k, _)| *k == TokenKind::Number));
        assert_eq!(toks.len(), 5);
    }

    #[test]
    fn decode_flags_invalid_utf8() {
        let (s, suspect) = decode_source(b"library(a\xFFb)");
        assert!(suspect);
        assert!(s.contains('\u{FFFD}'));
        let (_, ok) = decode_source("library(dplyr)".as_bytes());
        assert!(!ok);
    }

    #[test]
    fn reconstruction_round_trip() {
        let src = "pkgs <- c(\"a\", 'b')\nlapply(pkgs, library) # note\nx %in% y\n`q z`(1L)";
        let out = tokenize(src);
        let mut rebuilt = String::new();
        let mut prev_end = 0;
        for t in &out.tokens {
            let gap = &src[prev_end..t.offset];
            assert!(gap.chars().all(char::is_whitespace), "gap {gap:?}");
            rebuilt.push_str(gap);
            rebuilt.push_str(&t.text);
            prev_end = t.offset + t.text.len();
        }
        rebuilt.push_str(&src[prev_end..]);
        assert_eq!(rebuilt, src);
    }
}
