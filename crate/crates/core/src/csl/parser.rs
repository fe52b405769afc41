use crate::model::{BinaryOp, Expr, Model, ParseError, ParseErrorKind, Parser, Scope, Tok, Type, UnaryOp};

use super::{Comparator, CslQuery, PathFormula, ProbOperator, QueryMode, StateFormula};

/// Maximum nesting of probability operators, counting the outer query.
const MAX_DEPTH: usize = 2;

/// Intermediate state formula before P-free subtrees are folded into
/// single atomic predicates.
enum Raw {
    Atom(Expr),
    Not(Box<Raw>),
    And(Box<Raw>, Box<Raw>),
    Or(Box<Raw>, Box<Raw>),
    Prob(ProbOperator),
}

impl Raw {
    fn has_prob(&self) -> bool {
        match self {
            Raw::Atom(_) => false,
            Raw::Prob(_) => true,
            Raw::Not(a) => a.has_prob(),
            Raw::And(a, b) | Raw::Or(a, b) => a.has_prob() || b.has_prob(),
        }
    }

    fn into_expr(self) -> Expr {
        match self {
            Raw::Atom(e) => e,
            Raw::Not(a) => Expr::Unary(UnaryOp::Not, Box::new(a.into_expr())),
            Raw::And(a, b) => Expr::binary(BinaryOp::And, a.into_expr(), b.into_expr()),
            Raw::Or(a, b) => Expr::binary(BinaryOp::Or, a.into_expr(), b.into_expr()),
            Raw::Prob(_) => unreachable!("probability operator in predicate"),
        }
    }

    fn lower(self) -> StateFormula {
        if !self.has_prob() {
            return StateFormula::Atomic(self.into_expr());
        }
        match self {
            Raw::Prob(op) => StateFormula::Prob(op),
            Raw::Not(a) => StateFormula::Not(Box::new(a.lower())),
            Raw::And(a, b) => StateFormula::And(Box::new(a.lower()), Box::new(b.lower())),
            Raw::Or(a, b) => StateFormula::Or(Box::new(a.lower()), Box::new(b.lower())),
            Raw::Atom(_) => unreachable!(),
        }
    }
}

struct CslParser<'t> {
    p: Parser<'t>,
    next_id: usize,
}

pub fn parse_property(source: &str, model: &Model) -> Result<CslQuery, ParseError> {
    let toks = crate::model::tokenize(source)?;
    let mut cp = CslParser {
        p: Parser::new(&toks, Scope::for_model(model)),
        next_id: 0,
    };
    let q = cp.query()?;
    if *cp.p.peek() != Tok::Eof {
        return Err(cp.p.unexpected("end of property"));
    }
    Ok(q)
}

fn unsupported(p: &Parser<'_>, what: &str) -> ParseError {
    p.error(ParseErrorKind::UnsupportedOperator, format!("{what} is not supported"))
}

impl CslParser<'_> {
    fn query(&mut self) -> Result<CslQuery, ParseError> {
        let p = &mut self.p;
        match p.peek().clone() {
            Tok::Ident(s) if s == "P" => {}
            Tok::Ident(s) if s == "S" => return Err(unsupported(p, "steady-state operator `S`")),
            Tok::Ident(s) if s == "R" => return Err(unsupported(p, "reward operator `R`")),
            Tok::Ident(s) if s == "E" || s == "A" => return Err(unsupported(p, "path quantifier")),
            _ => return Err(p.unexpected("`P`")),
        }
        p.bump();
        let mode = if *p.peek() == Tok::Eq && *p.peek_at(1) == Tok::Query {
            p.bump();
            p.bump();
            QueryMode::Exact
        } else {
            let (comparator, target) = self.threshold()?;
            QueryMode::Threshold { comparator, target }
        };
        let path = self.bracketed_path(1)?;
        Ok(CslQuery { mode, path })
    }

    fn threshold(&mut self) -> Result<(Comparator, f64), ParseError> {
        let p = &mut self.p;
        let comparator = match p.peek() {
            Tok::Lt => Comparator::Lt,
            Tok::Le => Comparator::Le,
            Tok::Gt => Comparator::Gt,
            Tok::Ge => Comparator::Ge,
            Tok::Eq if *p.peek_at(1) == Tok::Query => {
                return Err(p.error(ParseErrorKind::Syntax, "nested `P=?` is not allowed; use a threshold"))
            }
            _ => return Err(p.unexpected("`=?` or one of `<`, `<=`, `>`, `>=`")),
        };
        p.bump();
        let (line, col) = p.here();
        let target = number(p)?;
        if !(0.0..=1.0).contains(&target) {
            return Err(ParseError::new(
                ParseErrorKind::Syntax,
                line,
                col,
                format!("probability bound {target} is outside [0,1]"),
            ));
        }
        Ok((comparator, target))
    }

    fn bracketed_path(&mut self, depth: usize) -> Result<PathFormula, ParseError> {
        self.p.expect(&Tok::LBracket, "`[`")?;
        let path = self.path(depth)?;
        self.p.expect(&Tok::RBracket, "`]`")?;
        Ok(path)
    }

    fn path(&mut self, depth: usize) -> Result<PathFormula, ParseError> {
        if let Tok::Ident(s) = self.p.peek().clone() {
            if matches!(s.as_str(), "X" | "F" | "G" | "W" | "R") && !self.p.scope.resolves(&s) {
                let what = if s == "X" { "next operator `X`".to_string() } else { format!("path operator `{s}`") };
                return Err(unsupported(&self.p, &what));
            }
        }
        let left = self.state_formula(depth)?;
        let p = &mut self.p;
        if !p.eat_keyword("U") {
            return Err(p.unexpected("`U`"));
        }
        let time_bound = match p.peek() {
            Tok::Le => {
                p.bump();
                let (line, col) = p.here();
                let t = number(p)?;
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ParseError::new(
                        ParseErrorKind::Syntax,
                        line,
                        col,
                        format!("time bound must be positive and finite, found {t}"),
                    ));
                }
                t
            }
            Tok::LBracket => return Err(unsupported(p, "interval-bounded until `U[t1,t2]`")),
            Tok::Lt | Tok::Gt | Tok::Ge => return Err(unsupported(p, "until bound other than `U<=t`")),
            _ => return Err(unsupported(p, "unbounded until")),
        };
        let right = self.state_formula(depth)?;
        Ok(PathFormula {
            left,
            right,
            time_bound,
        })
    }

    fn state_formula(&mut self, depth: usize) -> Result<StateFormula, ParseError> {
        Ok(self.sf_or(depth)?.lower())
    }

    fn sf_or(&mut self, depth: usize) -> Result<Raw, ParseError> {
        let mut lhs = self.sf_and(depth)?;
        while self.p.eat(&Tok::Or) {
            let rhs = self.sf_and(depth)?;
            lhs = Raw::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn sf_and(&mut self, depth: usize) -> Result<Raw, ParseError> {
        let mut lhs = self.sf_not(depth)?;
        while self.p.eat(&Tok::And) {
            let rhs = self.sf_not(depth)?;
            lhs = Raw::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn sf_not(&mut self, depth: usize) -> Result<Raw, ParseError> {
        if self.p.eat(&Tok::Not) {
            return Ok(Raw::Not(Box::new(self.sf_not(depth)?)));
        }
        self.sf_atom(depth)
    }

    fn sf_atom(&mut self, depth: usize) -> Result<Raw, ParseError> {
        if matches!(self.p.peek(), Tok::Ident(s) if s == "P")
            && matches!(self.p.peek_at(1), Tok::Eq | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge)
        {
            return self.nested(depth);
        }
        let mut first_err = None;
        if *self.p.peek() == Tok::LParen {
            // either a parenthesised state formula or the start of an arithmetic term
            let start = self.p.pos();
            let saved_id = self.next_id;
            self.p.bump();
            match self.sf_or(depth) {
                Ok(inner) if *self.p.peek() == Tok::RParen => {
                    self.p.bump();
                    let continues_term = matches!(
                        self.p.peek(),
                        Tok::Eq | Tok::Neq | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::Plus
                            | Tok::Minus | Tok::Star | Tok::Slash
                    );
                    if !continues_term {
                        return Ok(inner);
                    }
                }
                Ok(_) => {}
                Err(e) if matches!(e.kind, ParseErrorKind::UnsupportedOperator | ParseErrorKind::NestingTooDeep) => {
                    return Err(e)
                }
                Err(e) => first_err = Some(e),
            }
            self.p.reset(start);
            self.next_id = saved_id;
        }
        let (line, col) = self.p.here();
        let atom = self.p.equality().and_then(|e| {
            self.p.check_type(&e, Type::Bool, "state formula", line, col)?;
            Ok(e)
        });
        match (atom, first_err) {
            (Ok(e), _) => Ok(Raw::Atom(e)),
            (Err(e2), Some(e1)) if (e1.line, e1.col) > (e2.line, e2.col) => Err(e1),
            (Err(e2), _) => Err(e2),
        }
    }

    fn nested(&mut self, depth: usize) -> Result<Raw, ParseError> {
        if depth >= MAX_DEPTH {
            return Err(self.p.error(
                ParseErrorKind::NestingTooDeep,
                format!("probability operators may be nested at most {MAX_DEPTH} deep"),
            ));
        }
        self.p.bump();
        let (comparator, threshold) = self.threshold()?;
        let id = self.next_id;
        self.next_id += 1;
        let path = self.bracketed_path(depth + 1)?;
        Ok(Raw::Prob(ProbOperator {
            id,
            comparator,
            threshold,
            path: Box::new(path),
        }))
    }
}

fn number(p: &mut Parser<'_>) -> Result<f64, ParseError> {
    match p.peek().clone() {
        Tok::Int(v) => {
            p.bump();
            Ok(v as f64)
        }
        Tok::Double(v) => {
            p.bump();
            Ok(v)
        }
        _ => Err(p.unexpected("number")),
    }
}
