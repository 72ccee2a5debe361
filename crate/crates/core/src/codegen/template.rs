//! Body templates.
//!
//! A body is a list of lines. Two line forms control expansion:
//!
//! ```text
//! % for i in nvars        (or ndims, or an integer literal)
//! ...
//! % endfor
//! ```
//!
//! Other lines are statements in which `${...}` placeholders are replaced:
//!
//! * `${i}` a loop index;
//! * `${ndims}`, `${nvars}`, `${fpdtype}`;
//! * `${name}` a context expression; a list expression is indexed by the
//!   innermost loop index;
//! * `${name[i]}` or `${name[2]}` an element of a list expression.
//!
//! An empty expression expands to `0`.

use std::collections::HashSet;

use super::lex::{self, Kind, Literal};
use super::spec::{Expr, KernelSpec, Param, Precision};
use super::CodegenError;

enum Node<'a> {
    Line(&'a str),
    For { var: &'a str, count: usize, body: Vec<Node<'a>> },
}

fn parse<'a>(spec: &KernelSpec, lines: &mut impl Iterator<Item = (usize, &'a String)>, nested: bool) -> Result<Vec<Node<'a>>, CodegenError> {
    let mut out = Vec::new();
    while let Some((no, line)) = lines.next() {
        let t = line.trim();
        if let Some(directive) = t.strip_prefix('%') {
            let words: Vec<&str> = directive.split_whitespace().collect();
            match words.as_slice() {
                ["endfor"] if nested => return Ok(out),
                ["for", var, "in", range] => {
                    let count = match *range {
                        "nvars" => spec.context.nvars,
                        "ndims" => spec.context.ndims,
                        n => n.parse().map_err(|_| CodegenError::Template {
                            line: no + 1,
                            message: format!("loop range {n:?} is not nvars, ndims or an integer"),
                        })?,
                    };
                    out.push(Node::For { var, count, body: parse(spec, lines, true)? });
                }
                _ => {
                    return Err(CodegenError::Template { line: no + 1, message: format!("bad directive {t:?}") })
                }
            }
        } else if !t.is_empty() {
            out.push(Node::Line(t));
        }
    }
    if nested {
        return Err(CodegenError::Template { line: spec.body.len(), message: "missing % endfor".into() });
    }
    Ok(out)
}

fn nonempty(e: &str) -> String {
    if e.trim().is_empty() { "0".into() } else { e.to_string() }
}

fn resolve(spec: &KernelSpec, loops: &[(&str, usize)], key: &str) -> Result<String, CodegenError> {
    let key = key.trim();
    let unresolved = || CodegenError::UnresolvedPlaceholder(key.to_string());
    let lookup_index = |ix: &str| -> Result<usize, CodegenError> {
        let ix = ix.trim();
        loops
            .iter()
            .rev()
            .find(|(v, _)| *v == ix)
            .map(|&(_, i)| i)
            .or_else(|| ix.parse().ok())
            .ok_or_else(unresolved)
    };
    if let Some(open) = key.find('[') {
        let name = &key[..open];
        let ix = key[open + 1..].strip_suffix(']').ok_or_else(unresolved)?;
        let i = lookup_index(ix)?;
        return match spec.context.exprs.get(name) {
            Some(Expr::List(v)) => v.get(i).map(|e| nonempty(e)).ok_or_else(unresolved),
            Some(Expr::One(e)) if i == 0 => Ok(nonempty(e)),
            _ => Err(unresolved()),
        };
    }
    if let Some(&(_, i)) = loops.iter().rev().find(|(v, _)| *v == key) {
        return Ok(i.to_string());
    }
    match key {
        "ndims" => return Ok(spec.context.ndims.to_string()),
        "nvars" => return Ok(spec.context.nvars.to_string()),
        "fpdtype" => return Ok("fpdtype_t".into()),
        _ => {}
    }
    match spec.context.exprs.get(key) {
        Some(Expr::One(e)) => Ok(nonempty(e)),
        Some(Expr::List(v)) => {
            let &(_, i) = loops.last().ok_or_else(unresolved)?;
            v.get(i).map(|e| nonempty(e)).ok_or_else(unresolved)
        }
        None => Err(unresolved()),
    }
}

fn substitute(spec: &KernelSpec, loops: &[(&str, usize)], line: &str) -> Result<String, CodegenError> {
    let mut out = String::new();
    let mut rest = line;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').ok_or_else(|| CodegenError::Template {
            line: 0,
            message: format!("unterminated placeholder in {line:?}"),
        })?;
        out.push_str(&resolve(spec, loops, &rest[start + 2..start + end])?);
        rest = &rest[start + end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn walk<'a>(spec: &KernelSpec, nodes: &[Node<'a>], loops: &mut Vec<(&'a str, usize)>, out: &mut Vec<String>) -> Result<(), CodegenError> {
    for n in nodes {
        match n {
            Node::Line(l) => out.push(substitute(spec, loops, l)?),
            Node::For { var, count, body } => {
                for i in 0..*count {
                    loops.push((var, i));
                    walk(spec, body, loops, out)?;
                    loops.pop();
                }
            }
        }
    }
    Ok(())
}

/// Unrolls loops and resolves placeholders, giving straight-line
/// statements for one point.
pub fn expand_body(spec: &KernelSpec) -> Result<Vec<String>, CodegenError> {
    spec.validate()?;
    let nodes = parse(spec, &mut spec.body.iter().enumerate(), false)?;
    let mut out = Vec::new();
    walk(spec, &nodes, &mut Vec::new(), &mut out)?;
    Ok(out)
}

/// Identifiers used by `statements`, ignoring comments.
pub(crate) fn identifiers(statements: &[String]) -> HashSet<String> {
    let mut set = HashSet::new();
    for s in statements {
        let clean = lex::strip_comments(s);
        for t in lex::tokens(&clean) {
            if t.kind == Kind::Ident {
                set.insert(t.text.to_string());
            }
        }
    }
    set
}

/// Parameters referenced by the expanded body, in declaration order.
pub fn prune_unused_args(spec: &KernelSpec, expanded: &[String]) -> Vec<Param> {
    let used = identifiers(expanded);
    spec.params.iter().filter(|p| used.contains(&p.name)).cloned().collect()
}

/// Replaces every identifier token `from` in `text` with `to`.
pub(crate) fn rename_identifier(text: &str, from: &str, to: &str) -> String {
    lex::tokens(text)
        .iter()
        .map(|t| if t.kind == Kind::Ident && t.text == from { to } else { t.text })
        .collect()
}

/// Appends `f` to floating literals when `precision` is `F32`. Integer and
/// hexadecimal literals, and literals already suffixed, are left alone.
pub fn suffix_float_constants(text: &str, precision: Precision) -> String {
    if precision == Precision::F64 {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len() + 8);
    for t in lex::tokens(text) {
        out.push_str(t.text);
        if t.kind == Kind::Number {
            let lit = Literal::parse(t.text);
            if lit.is_float() && lit.suffix.is_empty() {
                out.push('f');
            }
        }
    }
    out
}
