//! Parser and static checks for the model DSL.
//!
//! ```text
//! program := "model" name "{" stmt* "}"
//! stmt    := "data" id ":" ("vector" | "real" | "int") "[" size "]" ("from" column)?
//!          | "param" id ("[" size "]")? "~" Dist "(" args ")"
//!          | id "=" expr
//!          | id "~" Dist "(" args ")"
//! ```
//!
//! Statements are separated by newlines or `;`. Every vector has the length
//! of the dataset; size symbols only name that length, and mixing two
//! different symbols in one expression is a shape error.

use std::collections::HashMap;

use super::ast::{
    DataDecl, DeterministicDecl, DistributionSpec, ElemType, Family, Likelihood, ModelProgram, ParamDecl, Shape, Stmt,
};
use super::ModelError;
use crate::expr::{Expr, Pos, TokenKind, TokenStream};

/// Functions callable inside expressions, with their arity.
pub(crate) const FUNCTIONS: [(&str, usize); 8] = [
    ("exp", 1),
    ("log", 1),
    ("sqrt", 1),
    ("logistic", 1),
    ("inv_logit", 1),
    ("tanh", 1),
    ("softplus", 1),
    ("pow", 2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SymbolKind {
    Data,
    Param,
    Deterministic,
}

pub fn parse_model(src: &str) -> Result<ModelProgram, ModelError> {
    let mut ts = TokenStream::new(src)?;
    ts.skip_newlines();
    ts.expect_keyword("model")?;
    let (name, _) = ts.expect_ident()?;
    ts.skip_newlines();
    ts.expect_punct('{')?;
    ts.skip_newlines();
    let mut stmts = Vec::new();
    while !ts.at_punct('}') {
        if ts.peek_kind() == &TokenKind::Eof {
            return Err(crate::expr::SyntaxError::new(ts.peek().pos, "missing closing `}`").into());
        }
        stmts.push(parse_stmt(&mut ts)?);
        ts.expect_end_of_statement()?;
    }
    ts.next();
    ts.skip_newlines();
    if ts.peek_kind() != &TokenKind::Eof {
        let t = ts.peek();
        return Err(crate::expr::SyntaxError::new(
            t.pos,
            format!("unexpected {} after model body", crate::expr::describe(&t.kind)),
        )
        .into());
    }
    let mut program = ModelProgram { name, stmts, source: src.to_string() };
    check(&mut program)?;
    Ok(program)
}

fn parse_stmt(ts: &mut TokenStream) -> Result<Stmt, ModelError> {
    let head = ts.peek().clone();
    let TokenKind::Ident(word) = &head.kind else {
        return Err(crate::expr::SyntaxError::new(
            head.pos,
            format!("expected statement, found {}", crate::expr::describe(&head.kind)),
        )
        .into());
    };
    // `data`/`param` are keywords only when followed by another identifier.
    let keyword_form = matches!(ts.peek_nth(1), TokenKind::Ident(_));
    if word == "data" && keyword_form {
        ts.next();
        let (name, pos) = ts.expect_ident()?;
        ts.expect_punct(':')?;
        let (ty, ty_pos) = ts.expect_ident()?;
        let elem = match ty.as_str() {
            "vector" | "real" => ElemType::Real,
            "int" => ElemType::Int,
            other => {
                return Err(crate::expr::SyntaxError::new(
                    ty_pos,
                    format!("unknown data type `{other}` (expected vector, real or int)"),
                )
                .into())
            }
        };
        ts.expect_punct('[')?;
        let (size, _) = ts.expect_ident()?;
        ts.expect_punct(']')?;
        let column = if matches!(ts.peek_kind(), TokenKind::Ident(s) if s == "from") {
            ts.next();
            ts.expect_ident()?.0
        } else {
            name.clone()
        };
        return Ok(Stmt::Data(DataDecl { name, elem, size, column, pos }));
    }
    if word == "param" && keyword_form {
        ts.next();
        let (name, pos) = ts.expect_ident()?;
        let shape = if ts.eat_punct('[') {
            let (size, _) = ts.expect_ident()?;
            ts.expect_punct(']')?;
            Shape::Vector(size)
        } else {
            Shape::Scalar
        };
        ts.expect_punct('~')?;
        let prior = parse_dist(ts)?;
        return Ok(Stmt::Param(ParamDecl { name, shape, prior, pos }));
    }
    let (name, pos) = ts.expect_ident()?;
    if ts.eat_punct('=') {
        let expr = ts.parse_expr()?;
        return Ok(Stmt::Deterministic(DeterministicDecl { name, expr, shape: Shape::Scalar, pos }));
    }
    if ts.eat_punct('~') {
        let dist = parse_dist(ts)?;
        return Ok(Stmt::Likelihood(Likelihood { observed: name, dist, pos }));
    }
    let t = ts.peek();
    Err(crate::expr::SyntaxError::new(t.pos, format!("expected `=` or `~`, found {}", crate::expr::describe(&t.kind)))
        .into())
}

fn parse_dist(ts: &mut TokenStream) -> Result<DistributionSpec, ModelError> {
    let e = ts.parse_expr()?;
    match e {
        Expr::Call(name, args, pos) => {
            let family = Family::from_name(&name).ok_or(ModelError::UnknownDistribution { name, pos })?;
            if args.len() != family.arity() {
                return Err(ModelError::Invalid {
                    pos,
                    message: format!(
                        "{family} takes {} argument(s) ({}), got {}",
                        family.arity(),
                        family.arg_names().join(", "),
                        args.len()
                    ),
                });
            }
            Ok(DistributionSpec { family, args, pos })
        }
        other => Err(ModelError::Invalid {
            pos: other.position().unwrap_or_default(),
            message: format!("expected a distribution such as Normal(0, 1), found `{other}`"),
        }),
    }
}

/// Resolves names, fills deterministic shapes and validates the program.
fn check(p: &mut ModelProgram) -> Result<(), ModelError> {
    let mut symbols: HashMap<String, (SymbolKind, Shape)> = HashMap::new();
    let mut sizes: Vec<String> = Vec::new();
    let mut observed: Vec<String> = Vec::new();
    let mut seen_likelihood = false;
    let redefined = |name: &str, pos: Pos| ModelError::Invalid { pos, message: format!("`{name}` is already defined") };
    for stmt in p.stmts.iter_mut() {
        match stmt {
            Stmt::Data(d) => {
                if symbols.contains_key(&d.name) || sizes.contains(&d.name) {
                    return Err(redefined(&d.name, d.pos));
                }
                if !sizes.contains(&d.size) {
                    sizes.push(d.size.clone());
                }
                symbols.insert(d.name.clone(), (SymbolKind::Data, Shape::Vector(d.size.clone())));
            }
            Stmt::Param(d) => {
                if seen_likelihood {
                    return Err(ModelError::Invalid {
                        pos: d.pos,
                        message: "parameters must be declared before likelihood statements".into(),
                    });
                }
                if symbols.contains_key(&d.name) || sizes.contains(&d.name) {
                    return Err(redefined(&d.name, d.pos));
                }
                if let Shape::Vector(s) = &d.shape {
                    if !sizes.contains(s) {
                        return Err(ModelError::Undefined { name: s.clone(), pos: d.pos });
                    }
                }
                if d.prior.family.support() == super::ast::Support::Discrete {
                    return Err(ModelError::Invalid {
                        pos: d.prior.pos,
                        message: format!("discrete prior {} is not supported for parameters", d.prior.family),
                    });
                }
                for a in &d.prior.args {
                    let s = shape_of(a, &symbols, true)?;
                    compatible(&d.shape, &s, a)?;
                }
                symbols.insert(d.name.clone(), (SymbolKind::Param, d.shape.clone()));
            }
            Stmt::Deterministic(d) => {
                if symbols.contains_key(&d.name) || sizes.contains(&d.name) {
                    return Err(redefined(&d.name, d.pos));
                }
                d.shape = shape_of(&d.expr, &symbols, false)?;
                symbols.insert(d.name.clone(), (SymbolKind::Deterministic, d.shape.clone()));
            }
            Stmt::Likelihood(l) => {
                seen_likelihood = true;
                let Some((kind, shape)) = symbols.get(&l.observed).cloned() else {
                    return Err(ModelError::Undefined { name: l.observed.clone(), pos: l.pos });
                };
                if kind != SymbolKind::Data {
                    return Err(ModelError::Invalid {
                        pos: l.pos,
                        message: format!("observed name `{}` must be a data column", l.observed),
                    });
                }
                if observed.contains(&l.observed) {
                    return Err(ModelError::Invalid {
                        pos: l.pos,
                        message: format!("`{}` is observed twice", l.observed),
                    });
                }
                observed.push(l.observed.clone());
                for a in &l.dist.args {
                    let s = shape_of(a, &symbols, false)?;
                    compatible(&shape, &s, a)?;
                }
            }
        }
    }
    if observed.is_empty() {
        return Err(ModelError::Invalid {
            pos: Pos { line: 1, col: 1 },
            message: "a model needs at least one likelihood statement".into(),
        });
    }
    Ok(())
}

fn compatible(target: &Shape, arg: &Shape, e: &Expr) -> Result<(), ModelError> {
    match (target, arg) {
        (_, Shape::Scalar) => Ok(()),
        (Shape::Vector(a), Shape::Vector(b)) if a == b => Ok(()),
        _ => Err(ModelError::ShapeMismatch {
            pos: e.position().unwrap_or_default(),
            message: format!("argument `{e}` has shape {arg}, expected {target} or scalar"),
        }),
    }
}

/// Static shape of an expression; `prior_context` forbids data references
/// (prior hyperparameters may only use constants and earlier parameters).
fn shape_of(e: &Expr, symbols: &HashMap<String, (SymbolKind, Shape)>, prior_context: bool) -> Result<Shape, ModelError> {
    match e {
        Expr::Num(_) => Ok(Shape::Scalar),
        Expr::Ident(name, pos) => {
            let (kind, shape) = symbols.get(name).ok_or(ModelError::Undefined { name: name.clone(), pos: *pos })?;
            if prior_context && *kind == SymbolKind::Data {
                return Err(ModelError::Invalid {
                    pos: *pos,
                    message: format!("prior arguments may not reference data (`{name}`)"),
                });
            }
            Ok(shape.clone())
        }
        Expr::Index(name, i, pos) => {
            let (kind, shape) = symbols.get(name).ok_or(ModelError::Undefined { name: name.clone(), pos: *pos })?;
            if prior_context && *kind == SymbolKind::Data {
                return Err(ModelError::Invalid {
                    pos: *pos,
                    message: format!("prior arguments may not reference data (`{name}`)"),
                });
            }
            if *shape == Shape::Scalar {
                return Err(ModelError::ShapeMismatch { pos: *pos, message: format!("`{name}` is a scalar and cannot be indexed") });
            }
            if *i == 0 {
                return Err(ModelError::Invalid { pos: *pos, message: "indices start at 1".into() });
            }
            Ok(Shape::Scalar)
        }
        Expr::Call(name, args, pos) => {
            let Some(&(_, arity)) = FUNCTIONS.iter().find(|(n, _)| n == name) else {
                if Family::from_name(name).is_some() {
                    return Err(ModelError::Invalid {
                        pos: *pos,
                        message: format!("distribution `{name}` used inside an expression"),
                    });
                }
                return Err(ModelError::Undefined { name: name.clone(), pos: *pos });
            };
            if args.len() != arity {
                return Err(ModelError::Invalid {
                    pos: *pos,
                    message: format!("`{name}` takes {arity} argument(s), got {}", args.len()),
                });
            }
            let mut out = Shape::Scalar;
            for a in args {
                out = join(out, shape_of(a, symbols, prior_context)?, a)?;
            }
            Ok(out)
        }
        Expr::Neg(a) => shape_of(a, symbols, prior_context),
        Expr::Binary(_, a, b) => {
            let sa = shape_of(a, symbols, prior_context)?;
            let sb = shape_of(b, symbols, prior_context)?;
            join(sa, sb, e)
        }
    }
}

fn join(a: Shape, b: Shape, e: &Expr) -> Result<Shape, ModelError> {
    match (a, b) {
        (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
        (Shape::Vector(x), Shape::Vector(y)) if x == y => Ok(Shape::Vector(x)),
        (Shape::Vector(x), Shape::Vector(y)) => Err(ModelError::ShapeMismatch {
            pos: e.position().unwrap_or_default(),
            message: format!("cannot combine vector[{x}] with vector[{y}] in `{e}`"),
        }),
    }
}
