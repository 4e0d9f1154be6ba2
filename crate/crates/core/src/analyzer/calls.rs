//! Call-expression recognition over the token stream, plus a single-pass,
//! file-local propagation of literal string vectors into identifier
//! arguments. Dynamic loading through computed values stays opaque and is
//! surfaced downstream as a documented miss rather than guessed at.

use super::lexer::{Token, TokenKind};
use serde::Serialize;
use std::collections::BTreeMap;

/// The shallowly-parsed value of one call argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArgValue {
    /// A quoted literal, unescaped.
    StringLiteral { text: String },
    /// A bare name.
    Identifier { text: String },
    /// Produced only by [`resolve_string_vectors`].
    StringVector { values: Vec<String> },
    /// Anything more complex; carries no text.
    Opaque,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallArg {
    pub name: Option<String>,
    pub value: ArgValue,
}

/// One syntactic function application, possibly qualified
/// (`pkg::fn`, `obj$method`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallSite {
    pub callee: String,
    pub args: Vec<CallArg>,
    pub line: u32,
}

/// Control constructs whose `(` is not a function application.
const NON_CALL_KEYWORDS: [&str; 6] = ["if", "for", "while", "repeat", "function", "else"];

/// Recognize every `f(...)`, `pkg::f(...)`, `pkg:::f(...)` and
/// `obj$method(...)` application. Nested calls each yield their own
/// [`CallSite`] in the flattened output. Malformed regions (unbalanced
/// parentheses at end of input) are skipped with a debug log.
pub fn extract_calls(tokens: &[Token]) -> Vec<CallSite> {
    let significant: Vec<&Token> = tokens
        .iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect();
    let mut out = Vec::new();

    for (i, tok) in significant.iter().enumerate() {
        if !(tok.kind == TokenKind::Operator && tok.text == "(") || i == 0 {
            continue;
        }
        let Some((callee, line)) = callee_chain(&significant, i) else {
            continue;
        };
        let head = callee.split(&[':', '$', '@'][..]).next().unwrap_or("");
        if NON_CALL_KEYWORDS.contains(&head) {
            continue;
        }
        match parse_args(&significant, i) {
            Some(args) => out.push(CallSite { callee, args, line }),
            None => {
                log::debug!("skipping unbalanced call at line {}", tok.line);
            }
        }
    }
    out
}

/// Walk backwards from the open paren collecting a name chain joined by
/// `::`, `:::`, `$`, `@`. Returns the callee text and its starting line.
fn callee_chain(tokens: &[&Token], open_paren: usize) -> Option<(String, u32)> {
    let mut idx = open_paren.checked_sub(1)?;
    if !is_name(tokens[idx]) {
        return None;
    }
    let mut segments = vec![name_text(tokens[idx])];
    let mut line = tokens[idx].line;
    while idx >= 2 {
        let sep = tokens[idx - 1];
        let prev = tokens[idx - 2];
        let is_sep = sep.kind == TokenKind::Operator
            && matches!(sep.text.as_str(), "::" | ":::" | "$" | "@");
        if is_sep && is_name(prev) {
            segments.push(sep.text.clone());
            segments.push(name_text(prev));
            line = prev.line;
            idx -= 2;
        } else {
            break;
        }
    }
    segments.reverse();
    Some((segments.concat(), line))
}

fn is_name(tok: &Token) -> bool {
    matches!(tok.kind, TokenKind::Identifier | TokenKind::BackquotedName)
}

fn name_text(tok: &Token) -> String {
    match tok.kind {
        TokenKind::BackquotedName => tok.text.trim_matches('`').to_string(),
        _ => tok.text.clone(),
    }
}

/// Parse the argument region starting at `open_paren`. Returns `None` when
/// the parentheses never balance (truncated source).
fn parse_args(tokens: &[&Token], open_paren: usize) -> Option<Vec<CallArg>> {
    let mut depth = 1u32;
    let mut idx = open_paren + 1;
    let mut current: Vec<&Token> = Vec::new();
    let mut args = Vec::new();

    while idx < tokens.len() {
        let tok = tokens[idx];
        if tok.kind == TokenKind::Operator {
            match tok.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        if !current.is_empty() {
                            args.push(parse_one_arg(&current));
                        }
                        return Some(args);
                    }
                }
                "," if depth == 1 => {
                    if !current.is_empty() {
                        args.push(parse_one_arg(&current));
                    }
                    current = Vec::new();
                    idx += 1;
                    continue;
                }
                _ => {}
            }
        }
        current.push(tok);
        idx += 1;
    }
    None
}

fn parse_one_arg(tokens: &[&Token]) -> CallArg {
    let (name, value_tokens) = if tokens.len() >= 2
        && tokens[1].kind == TokenKind::Operator
        && tokens[1].text == "="
        && (is_name(tokens[0]) || tokens[0].kind == TokenKind::String)
    {
        let raw = if tokens[0].kind == TokenKind::String {
            unquote(&tokens[0].text)
        } else {
            name_text(tokens[0])
        };
        (Some(raw), &tokens[2..])
    } else {
        (None, tokens)
    };

    let value = match value_tokens {
        [single] => match single.kind {
            TokenKind::String => ArgValue::StringLiteral {
                text: unquote(&single.text),
            },
            TokenKind::Identifier | TokenKind::BackquotedName => ArgValue::Identifier {
                text: name_text(single),
            },
            _ => ArgValue::Opaque,
        },
        _ => ArgValue::Opaque,
    };
    CallArg { name, value }
}

/// Strip quotes and process the escape sequences R accepts in names.
fn unquote(text: &str) -> String {
    let inner = if text.len() >= 2 {
        let bytes = text.as_bytes();
        let first = bytes[0] as char;
        let last = bytes[text.len() - 1] as char;
        if (first == '"' || first == '\'') && last == first {
            &text[1..text.len() - 1]
        } else if first == '"' || first == '\'' {
            &text[1..]
        } else {
            text
        }
    } else {
        text
    };
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('0') => {}
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Single-assignment literal string vectors, keyed by variable name.
///
/// Eligible right-hand sides are `c("a", "b", ...)` with only string
/// elements, or a bare string literal (one-element vector). Any second
/// assignment poisons the name; computed vectors never qualify.
fn literal_bindings(tokens: &[Token]) -> BTreeMap<String, Vec<String>> {
    let significant: Vec<&Token> = tokens
        .iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect();
    let mut bindings: BTreeMap<String, Vec<Option<Vec<String>>>> = BTreeMap::new();
    let mut depth = 0i32;

    for i in 0..significant.len() {
        let tok = significant[i];
        if tok.kind == TokenKind::Operator {
            match tok.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                _ => {}
            }
        }
        if !is_name(tok) || i + 1 >= significant.len() {
            continue;
        }
        let op = significant[i + 1];
        let is_assign = op.kind == TokenKind::Operator
            && (op.text == "<-" || op.text == "<<-" || (op.text == "=" && depth == 0));
        if !is_assign {
            continue;
        }
        let value = parse_literal_vector(&significant[i + 2..]);
        bindings.entry(name_text(tok)).or_default().push(value);
    }

    bindings
        .into_iter()
        .filter_map(|(name, assigns)| match assigns.as_slice() {
            [Some(values)] => Some((name, values.clone())),
            _ => None,
        })
        .collect()
}

/// Parse `c("a", "b", ...)` or a lone string literal at the start of a
/// right-hand side. Anything else is non-literal.
fn parse_literal_vector(tokens: &[&Token]) -> Option<Vec<String>> {
    match tokens.first() {
        Some(t) if t.kind == TokenKind::String => {
            // A bare string: reject when an operator continues the
            // expression on the same line (e.g. `x <- "a" %+% y`).
            match tokens.get(1) {
                Some(next)
                    if next.line == t.line
                        && matches!(next.kind, TokenKind::Operator | TokenKind::Special)
                        && next.text != ";"
                        && next.text != ")"
                        && next.text != "}" =>
                {
                    None
                }
                _ => Some(vec![unquote(&t.text)]),
            }
        }
        Some(t) if t.kind == TokenKind::Identifier && t.text == "c" => {
            if tokens.get(1).map(|t| t.text.as_str()) != Some("(") {
                return None;
            }
            let mut values = Vec::new();
            let mut expect_value = true;
            for tok in &tokens[2..] {
                match (tok.kind, tok.text.as_str()) {
                    (TokenKind::String, _) if expect_value => {
                        values.push(unquote(&tok.text));
                        expect_value = false;
                    }
                    (TokenKind::Operator, ",") if !expect_value => expect_value = true,
                    (TokenKind::Operator, ")") if !expect_value && !values.is_empty() => {
                        return Some(values);
                    }
                    _ => return None,
                }
            }
            None
        }
        _ => None,
    }
}

/// Replace identifier arguments that name a single-assignment literal
/// string vector with the vector's values. Reassigned or computed vectors
/// remain opaque identifiers (best-effort, documented miss downstream).
pub fn resolve_string_vectors(calls: &[CallSite], tokens: &[Token]) -> Vec<CallSite> {
    let bindings = literal_bindings(tokens);
    if bindings.is_empty() {
        return calls.to_vec();
    }
    calls
        .iter()
        .map(|call| {
            let args = call
                .args
                .iter()
                .map(|arg| match &arg.value {
                    ArgValue::Identifier { text } if bindings.contains_key(text) => CallArg {
                        name: arg.name.clone(),
                        value: ArgValue::StringVector {
                            values: bindings[text].clone(),
                        },
                    },
                    _ => arg.clone(),
                })
                .collect();
            CallSite {
                callee: call.callee.clone(),
                args,
                line: call.line,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::lexer::tokenize;

    fn calls_of(src: &str) -> Vec<CallSite> {
        extract_calls(&tokenize(src).tokens)
    }

    fn resolved(src: &str) -> Vec<CallSite> {
        let toks = tokenize(src).tokens;
        let calls = extract_calls(&toks);
        resolve_string_vectors(&calls, &toks)
    }

    #[test]
    fn direct_require_string() {
        let calls = calls_of(r#"require("MASS")"#);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].callee, "require");
        assert_eq!(
            calls[0].args[0].value,
            ArgValue::StringLiteral {
                text: "MASS".into()
            }
        );
    }

    #[test]
    fn qualified_callee_with_bare_args() {
        let calls = calls_of("pacman::p_load(dplyr, tidyr)");
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].callee, "pacman::p_load");
        assert_eq!(
            calls[0].args,
            vec![
                CallArg {
                    name: None,
                    value: ArgValue::Identifier {
                        text: "dplyr".into()
                    }
                },
                CallArg {
                    name: None,
                    value: ArgValue::Identifier {
                        text: "tidyr".into()
                    }
                },
            ]
        );
    }

    #[test]
    fn nested_calls_flattened_with_opaque_args() {
        let calls = calls_of("f(g(1))");
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].callee, "f");
        assert_eq!(calls[0].args, vec![CallArg { name: None, value: ArgValue::Opaque }]);
        assert_eq!(calls[1].callee, "g");
        assert_eq!(calls[1].args, vec![CallArg { name: None, value: ArgValue::Opaque }]);
    }

    #[test]
    fn dollar_chain_callee() {
        let calls = calls_of("knitr::opts_chunk$set(echo = TRUE)");
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].callee, "knitr::opts_chunk$set");
        assert_eq!(calls[0].args[0].name.as_deref(), Some("echo"));
        assert_eq!(
            calls[0].args[0].value,
            ArgValue::Identifier { text: "TRUE".into() }
        );
    }

    #[test]
    fn control_keywords_are_not_calls() {
        let calls = calls_of("if (x) { f(1) } else { while (y) g() }");
        let names: Vec<&str> = calls.iter().map(|c| c.callee.as_str()).collect();
        assert_eq!(names, vec!["f", "g"]);
    }

    #[test]
    fn call_inside_string_is_invisible() {
        let calls = calls_of(r#"x <- "library(fakepkg)""#);
        assert!(calls.is_empty());
    }

    #[test]
    fn call_inside_comment_is_invisible() {
        let calls = calls_of("# library(fakepkg)\nlibrary(real)");
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].callee, "library");
    }

    #[test]
    fn vector_propagates_into_lapply() {
        let calls = resolved("pkgs <- c(\"a1\",\"b2\")\nlapply(pkgs, library)");
        let lapply = calls.iter().find(|c| c.callee == "lapply").unwrap();
        assert_eq!(
            lapply.args[0].value,
            ArgValue::StringVector {
                values: vec!["a1".into(), "b2".into()]
            }
        );
    }

    #[test]
    fn reassignment_stays_opaque() {
        let calls = resolved("pkgs <- c(\"a1\")\npkgs <- c(\"b2\")\nlapply(pkgs, library)");
        let lapply = calls.iter().find(|c| c.callee == "lapply").unwrap();
        assert_eq!(
            lapply.args[0].value,
            ArgValue::Identifier { text: "pkgs".into() }
        );
    }

    #[test]
    fn computed_vector_stays_opaque() {
        let calls = resolved("pkgs <- paste0(\"p\", 1:3)\nlapply(pkgs, library)");
        let lapply = calls.iter().find(|c| c.callee == "lapply").unwrap();
        assert_eq!(
            lapply.args[0].value,
            ArgValue::Identifier { text: "pkgs".into() }
        );
    }

    #[test]
    fn no_assignments_identity() {
        let toks = tokenize("library(x)").tokens;
        let calls = extract_calls(&toks);
        assert_eq!(resolve_string_vectors(&calls, &toks), calls);
    }

    #[test]
    fn single_string_binding_resolves() {
        let calls = resolved("pkg <- \"dplyr\"\nlibrary(pkg, character.only = TRUE)");
        let lib = calls.iter().find(|c| c.callee == "library").unwrap();
        assert_eq!(
            lib.args[0].value,
            ArgValue::StringVector {
                values: vec!["dplyr".into()]
            }
        );
    }

    #[test]
    fn named_args_keep_names() {
        let calls = calls_of(r#"read.csv(file = "data.csv", header = TRUE)"#);
        assert_eq!(calls[0].args[0].name.as_deref(), Some("file"));
        assert_eq!(
            calls[0].args[0].value,
            ArgValue::StringLiteral {
                text: "data.csv".into()
            }
        );
    }

    #[test]
    fn unbalanced_call_skipped() {
        let calls = calls_of("f(1, 2");
        assert!(calls.is_empty());
    }

    #[test]
    fn args_preserve_source_order() {
        let calls = calls_of(r#"install_pkgs("z", "a", "m")"#);
        let texts: Vec<String> = calls[0]
            .args
            .iter()
            .map(|a| match &a.value {
                ArgValue::StringLiteral { text } => text.clone(),
                _ => String::new(),
            })
            .collect();
        assert_eq!(texts, vec!["z", "a", "m"]);
    }
}
