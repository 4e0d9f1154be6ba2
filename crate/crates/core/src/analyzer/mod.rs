//! Static analysis substrate for R source: a lexer and a call-expression
//! recognizer. No full R grammar — dependency detection only needs load-call
//! shapes, and over-extraction is the real hazard, so the recognizer stays
//! deliberately shallow.

mod calls;
mod lexer;

pub use calls::{extract_calls, resolve_string_vectors, ArgValue, CallArg, CallSite};
pub use lexer::{decode_source, tokenize, LexIssue, Token, TokenKind, Tokenized};

use serde::Serialize;

/// Analysis of one R script: tokens, call sites (after constant
/// propagation), and lexer diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct ScriptAnalysis {
    pub tokens: Vec<Token>,
    pub calls: Vec<CallSite>,
    pub issues: Vec<LexIssue>,
    pub encoding_suspect: bool,
}

/// Run the full analysis over raw script bytes: decode (flagging suspect
/// encodings), tokenize, extract calls, then propagate literal string
/// vectors into identifier arguments.
pub fn analyze_source(bytes: &[u8]) -> ScriptAnalysis {
    let (source, encoding_suspect) = decode_source(bytes);
    let tokenized = tokenize(&source);
    let raw_calls = extract_calls(&tokenized.tokens);
    let calls = resolve_string_vectors(&raw_calls, &tokenized.tokens);
    ScriptAnalysis {
        tokens: tokenized.tokens,
        calls,
        issues: tokenized.issues,
        encoding_suspect,
    }
}
