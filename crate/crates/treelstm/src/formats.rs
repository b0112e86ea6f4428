//! The canonical bracketed tree text format.
//!
//! Grammar: `tree := '(' label tree* ')' | token`. Labels and tokens are
//! runs of non-whitespace characters; literal parentheses and backslashes
//! are escaped as `\(`, `\)` and `\\`. Leaves serialize as bare tokens,
//! internal nodes as `(label children...)`.

use thiserror::Error;
use treelstm_core::tree::{Tree, TreeBuilder, TreeError};

/// Sentinel token marking a pruned node in target trees.
pub const NULL_TOKEN: &str = "_NULL_";

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("empty tree text")]
    EmptyTree,
    #[error("bad escape sequence at byte {0}")]
    EscapeError(usize),
    #[error("trailing content at byte {0}")]
    TrailingContent(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Word(String),
}

fn lex(text: &str) -> Result<Vec<(usize, Token)>, FormatError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                tokens.push((i, Token::Open));
                i += 1;
            }
            b')' => {
                tokens.push((i, Token::Close));
                i += 1;
            }
            _ => {
                let start = i;
                let mut word = String::new();
                while i < bytes.len() {
                    match bytes[i] {
                        b' ' | b'\t' | b'\n' | b'\r' | b'(' | b')' => break,
                        b'\\' => {
                            match bytes.get(i + 1) {
                                Some(b'(') => word.push('('),
                                Some(b')') => word.push(')'),
                                Some(b'\\') => word.push('\\'),
                                _ => return Err(FormatError::EscapeError(i)),
                            }
                            i += 2;
                        }
                        _ => {
                            // consume one UTF-8 scalar
                            let s = &text[i..];
                            let ch = s.chars().next().expect("in bounds");
                            word.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                tokens.push((start, Token::Word(word)));
            }
        }
    }
    Ok(tokens)
}

/// Parses one bracketed tree. `max_outdegree` bounds validation; pass
/// `usize::MAX` to accept any arity.
pub fn parse_bracketed(text: &str, max_outdegree: usize) -> Result<Tree<String>, FormatError> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(FormatError::EmptyTree);
    }
    let mut builder = TreeBuilder::new();
    // stack of open internal nodes (raw builder indices)
    let mut stack: Vec<usize> = Vec::new();
    let mut root_done = false;
    let mut pos = 0;
    while pos < tokens.len() {
        let (at, tok) = &tokens[pos];
        if root_done {
            return Err(FormatError::TrailingContent(*at));
        }
        match tok {
            Token::Open => {
                let Some((_, Token::Word(label))) = tokens.get(pos + 1) else {
                    // '(' not followed by a label can never close into a tree
                    return Err(FormatError::UnbalancedParens(*at));
                };
                let node = builder.add_node(label.clone());
                if let Some(&parent) = stack.last() {
                    builder.add_edge(parent, node)?;
                }
                stack.push(node);
                pos += 2;
            }
            Token::Close => {
                if stack.pop().is_none() {
                    return Err(FormatError::UnbalancedParens(*at));
                }
                if stack.is_empty() {
                    root_done = true;
                }
                pos += 1;
            }
            Token::Word(w) => {
                let node = builder.add_node(w.clone());
                match stack.last() {
                    Some(&parent) => builder.add_edge(parent, node)?,
                    None => root_done = true, // bare-token tree
                }
                pos += 1;
            }
        }
    }
    if !stack.is_empty() {
        return Err(FormatError::UnbalancedParens(text.len()));
    }
    Ok(builder.validate(max_outdegree)?)
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for ch in token.chars() {
        match ch {
            '(' => out.push_str("\\("),
            ')' => out.push_str("\\)"),
            '\\' => out.push_str("\\\\"),
            _ => out.push(ch),
        }
    }
    out
}

fn write_node(tree: &Tree<String>, u: treelstm_core::tree::NodeId, out: &mut String) {
    if tree.is_leaf(u) {
        out.push_str(&escape(tree.label(u)));
    } else {
        out.push('(');
        out.push_str(&escape(tree.label(u)));
        for &c in tree.children(u) {
            out.push(' ');
            write_node(tree, c, out);
        }
        out.push(')');
    }
}

/// Canonical single-line form; inverse of [`parse_bracketed`] on canonical
/// text.
pub fn serialize_tree(tree: &Tree<String>) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out
}
