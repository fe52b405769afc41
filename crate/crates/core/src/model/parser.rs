//! Recursive-descent parser for the guarded-command model language.
//!
//! The expression layer is shared with the property parser, which drives a
//! [`Parser`] over its own token stream with the model's symbols in scope.

use std::collections::HashMap;

use super::expr::{BinaryOp, Expr, Type, UnaryOp, Value};
use super::lexer::{tokenize, Tok, Token};
use super::{Alternative, Command, Constant, Label, Model, ParseError, ParseErrorKind, VariableDecl};

/// Identifier resolution for expressions.
#[derive(Debug, Default, Clone)]
pub struct Scope {
    vars: HashMap<String, usize>,
    consts: HashMap<String, usize>,
    const_values: Vec<Value>,
    labels: HashMap<String, Expr>,
}

impl Scope {
    pub fn for_model(model: &Model) -> Scope {
        let mut scope = Scope::default();
        for (i, v) in model.variables.iter().enumerate() {
            scope.vars.insert(v.name.clone(), i);
        }
        for (i, c) in model.constants.iter().enumerate() {
            scope.consts.insert(c.name.clone(), i);
            scope.const_values.push(c.value);
        }
        for l in &model.labels {
            scope.labels.insert(l.name.clone(), l.expr.clone());
        }
        scope
    }

    pub fn resolves(&self, name: &str) -> bool {
        self.vars.contains_key(name) || self.consts.contains_key(name) || self.labels.contains_key(name)
    }
}

pub struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    pub scope: Scope,
}

impl<'t> Parser<'t> {
    pub fn new(toks: &'t [Token], scope: Scope) -> Self {
        Parser { toks, pos: 0, scope }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn reset(&mut self, pos: usize) {
        self.pos = pos;
    }

    pub fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    pub fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn error(&self, kind: ParseErrorKind, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::new(kind, line, col, msg)
    }

    pub fn unexpected(&self, wanted: &str) -> ParseError {
        self.error(
            ParseErrorKind::Syntax,
            format!("expected {wanted}, found {}", self.peek()),
        )
    }

    pub fn expect(&mut self, tok: &Tok, wanted: &str) -> Result<(), ParseError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    pub fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    /// Parses a full expression and checks it against `want`.
    pub fn typed_expr(&mut self, want: Type, what: &str) -> Result<Expr, ParseError> {
        let (line, col) = self.here();
        let e = self.expr()?;
        self.check_type(&e, want, what, line, col)?;
        Ok(e)
    }

    pub fn check_type(
        &self,
        e: &Expr,
        want: Type,
        what: &str,
        line: usize,
        col: usize,
    ) -> Result<(), ParseError> {
        let mismatch = |msg: String| ParseError::new(ParseErrorKind::TypeMismatch, line, col, msg);
        let t = e.type_of(&self.scope.const_values).map_err(mismatch)?;
        let ok = match want {
            Type::Double => t.is_numeric(),
            other => t == other,
        };
        if ok {
            Ok(())
        } else {
            Err(mismatch(format!("{what} must be {want}, found {t}")))
        }
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.eat(&Tok::Or) {
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.equality()?;
        while self.eat(&Tok::And) {
            let rhs = self.equality()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    /// Equality level and below: the entry point for atomic predicates.
    pub fn equality(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.relational()?;
        loop {
            let op = match self.peek() {
                Tok::Eq => BinaryOp::Eq,
                Tok::Neq => BinaryOp::Neq,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.relational()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn relational(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Lt => BinaryOp::Lt,
                Tok::Le => BinaryOp::Le,
                Tok::Gt => BinaryOp::Gt,
                Tok::Ge => BinaryOp::Ge,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.additive()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    pub fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat(&Tok::Not) {
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Lit(Value::Int(v)))
            }
            Tok::Double(v) => {
                self.bump();
                Ok(Expr::Lit(Value::Double(v)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Str(name) => {
                let label = self.scope.labels.get(&name).cloned();
                match label {
                    Some(e) => {
                        self.bump();
                        Ok(e)
                    }
                    None => Err(self.error(
                        ParseErrorKind::UnknownIdentifier,
                        format!("unknown label \"{name}\""),
                    )),
                }
            }
            Tok::Ident(name) => {
                let resolved = match name.as_str() {
                    "true" => Some(Expr::Lit(Value::Bool(true))),
                    "false" => Some(Expr::Lit(Value::Bool(false))),
                    _ => self
                        .scope
                        .vars
                        .get(&name)
                        .map(|&i| Expr::Var(i))
                        .or_else(|| self.scope.consts.get(&name).map(|&i| Expr::Const(i)))
                        .or_else(|| self.scope.labels.get(&name).cloned()),
                };
                match resolved {
                    Some(e) => {
                        self.bump();
                        Ok(e)
                    }
                    None => Err(self.error(
                        ParseErrorKind::UnknownIdentifier,
                        format!("unknown identifier `{name}`"),
                    )),
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

const NON_CTMC: &[&str] = &["dtmc", "mdp", "pta", "probabilistic", "nondeterministic", "stochastic", "smg", "pomdp"];

const RESERVED: &[&str] = &[
    "ctmc", "const", "int", "double", "module", "endmodule", "init", "label", "true", "false",
];

/// Parses a model, replacing the declared value of each named constant in
/// `overrides` with the given literal text.
pub fn parse_model_with(source: &str, overrides: &[(String, String)]) -> Result<Model, ParseError> {
    let toks = tokenize(source)?;
    let mut p = Parser::new(&toks, Scope::default());

    if let Tok::Ident(kw) = p.peek() {
        if NON_CTMC.contains(&kw.as_str()) {
            return Err(p.error(
                ParseErrorKind::NonCtmc,
                format!("model type `{kw}` is not supported, only `ctmc`"),
            ));
        }
    }
    p.expect_keyword("ctmc")?;

    let mut constants: Vec<Constant> = Vec::new();
    let mut used_overrides = vec![false; overrides.len()];
    while p.eat_keyword("const") {
        let ty = if p.eat_keyword("int") {
            Type::Int
        } else if p.eat_keyword("double") {
            Type::Double
        } else {
            return Err(p.unexpected("`int` or `double`"));
        };
        let (line, col) = p.here();
        let name = p.ident()?;
        check_fresh(&p, &name, line, col)?;
        p.expect(&Tok::Eq, "`=`")?;
        let (eline, ecol) = p.here();
        let e = p.expr()?;
        p.check_type(&e, ty, &format!("constant `{name}`"), eline, ecol)?;
        p.expect(&Tok::Semi, "`;`")?;

        let value = match overrides.iter().position(|(n, _)| *n == name) {
            Some(i) => {
                used_overrides[i] = true;
                parse_override(&overrides[i].1, ty).map_err(|msg| {
                    ParseError::new(ParseErrorKind::TypeMismatch, line, col, format!("override for `{name}`: {msg}"))
                })?
            }
            None => {
                let v = e
                    .eval(&[], &p.scope.const_values)
                    .map_err(|err| ParseError::new(ParseErrorKind::TypeMismatch, eline, ecol, err.to_string()))?;
                coerce(v, ty)
            }
        };
        p.scope.consts.insert(name.clone(), constants.len());
        p.scope.const_values.push(value);
        constants.push(Constant { name, ty, value });
    }
    if let Some(i) = used_overrides.iter().position(|u| !u) {
        return Err(ParseError::new(
            ParseErrorKind::UnknownIdentifier,
            1,
            1,
            format!("override for undeclared constant `{}`", overrides[i].0),
        ));
    }

    p.expect_keyword("module")?;
    let name = p.ident()?;

    let mut variables: Vec<VariableDecl> = Vec::new();
    while matches!(p.peek(), Tok::Ident(s) if s != "endmodule") && *p.peek_at(1) == Tok::Colon {
        let (line, col) = p.here();
        let vname = p.ident()?;
        if p.scope.vars.contains_key(&vname) {
            return Err(ParseError::new(
                ParseErrorKind::DuplicateVariable,
                line,
                col,
                format!("duplicate variable `{vname}`"),
            ));
        }
        check_fresh(&p, &vname, line, col)?;
        p.expect(&Tok::Colon, "`:`")?;
        p.expect(&Tok::LBracket, "`[`")?;
        let lower = if *p.peek() == Tok::DotDot {
            None
        } else {
            Some(const_int(&mut p)?)
        };
        p.expect(&Tok::DotDot, "`..`")?;
        let upper = if *p.peek() == Tok::RBracket {
            None
        } else {
            Some(const_int(&mut p)?)
        };
        p.expect(&Tok::RBracket, "`]`")?;
        p.expect_keyword("init")?;
        let (iline, icol) = p.here();
        let init = const_int(&mut p)?;
        p.expect(&Tok::Semi, "`;`")?;

        if let (Some(lo), Some(hi)) = (lower, upper) {
            if lo > hi {
                return Err(ParseError::new(
                    ParseErrorKind::Bounds,
                    line,
                    col,
                    format!("empty range [{lo}..{hi}] for `{vname}`"),
                ));
            }
        }
        if lower.is_some_and(|lo| init < lo) {
            return Err(ParseError::new(ParseErrorKind::Bounds, iline, icol, "init below lower bound"));
        }
        if upper.is_some_and(|hi| init > hi) {
            return Err(ParseError::new(ParseErrorKind::Bounds, iline, icol, "init above upper bound"));
        }
        p.scope.vars.insert(vname.clone(), variables.len());
        variables.push(VariableDecl {
            name: vname,
            lower,
            upper,
            init,
        });
    }

    let mut commands = Vec::new();
    while *p.peek() == Tok::LBracket {
        commands.push(command(&mut p)?);
    }
    p.expect_keyword("endmodule")?;

    let mut labels: Vec<Label> = Vec::new();
    while p.eat_keyword("label") {
        let (line, col) = p.here();
        let lname = match p.bump() {
            Tok::Str(s) => s,
            _ => return Err(ParseError::new(ParseErrorKind::Syntax, line, col, "expected label name in quotes")),
        };
        if p.scope.labels.contains_key(&lname) {
            return Err(ParseError::new(
                ParseErrorKind::DuplicateVariable,
                line,
                col,
                format!("duplicate label \"{lname}\""),
            ));
        }
        check_fresh(&p, &lname, line, col)?;
        p.expect(&Tok::Eq, "`=`")?;
        let e = p.typed_expr(Type::Bool, "label")?;
        p.expect(&Tok::Semi, "`;`")?;
        p.scope.labels.insert(lname.clone(), e.clone());
        labels.push(Label { name: lname, expr: e });
    }

    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("end of model"));
    }

    Ok(Model {
        name,
        constants,
        variables,
        commands,
        labels,
    })
}

fn check_fresh(p: &Parser<'_>, name: &str, line: usize, col: usize) -> Result<(), ParseError> {
    let s = &p.scope;
    if RESERVED.contains(&name) {
        return Err(ParseError::new(ParseErrorKind::Syntax, line, col, format!("`{name}` is a keyword")));
    }
    if s.vars.contains_key(name) || s.consts.contains_key(name) || s.labels.contains_key(name) {
        return Err(ParseError::new(
            ParseErrorKind::DuplicateVariable,
            line,
            col,
            format!("`{name}` is already declared"),
        ));
    }
    Ok(())
}

fn coerce(v: Value, ty: Type) -> Value {
    match (v, ty) {
        (Value::Int(i), Type::Double) => Value::Double(i as f64),
        _ => v,
    }
}

fn parse_override(text: &str, ty: Type) -> Result<Value, String> {
    let text = text.trim();
    match ty {
        Type::Int => text.parse::<i64>().map(Value::Int).map_err(|e| e.to_string()),
        _ => text.parse::<f64>().map(Value::Double).map_err(|e| e.to_string()),
    }
}

/// Integer expression over constants only (variable bounds and inits).
fn const_int(p: &mut Parser<'_>) -> Result<i64, ParseError> {
    let (line, col) = p.here();
    // additive level: a comparison cannot appear here, and `..` must not be eaten
    let e = p.additive()?;
    p.check_type(&e, Type::Int, "bound", line, col)?;
    let vars_free = !mentions_var(&e);
    if !vars_free {
        return Err(ParseError::new(
            ParseErrorKind::TypeMismatch,
            line,
            col,
            "bounds and initial values must be constant",
        ));
    }
    e.eval_int(&[], &p.scope.const_values)
        .map_err(|err| ParseError::new(ParseErrorKind::TypeMismatch, line, col, err.to_string()))
}

fn mentions_var(e: &Expr) -> bool {
    match e {
        Expr::Var(_) => true,
        Expr::Lit(_) | Expr::Const(_) => false,
        Expr::Unary(_, x) => mentions_var(x),
        Expr::Binary(_, a, b) => mentions_var(a) || mentions_var(b),
    }
}

fn command(p: &mut Parser<'_>) -> Result<Command, ParseError> {
    p.expect(&Tok::LBracket, "`[`")?;
    if let Tok::Ident(a) = p.peek() {
        return Err(p.error(
            ParseErrorKind::Syntax,
            format!("synchronisation label `{a}` is not supported; use `[]`"),
        ));
    }
    p.expect(&Tok::RBracket, "`]`")?;
    let guard = p.typed_expr(Type::Bool, "guard")?;
    p.expect(&Tok::Arrow, "`->`")?;

    let mut alternatives = Vec::new();
    loop {
        let rate = p.typed_expr(Type::Double, "rate")?;
        p.expect(&Tok::Colon, "`:`")?;
        let mut updates: Vec<(usize, Expr)> = Vec::new();
        loop {
            p.expect(&Tok::LParen, "`(`")?;
            let (line, col) = p.here();
            let name = p.ident()?;
            let var = *p.scope.vars.get(&name).ok_or_else(|| {
                ParseError::new(
                    ParseErrorKind::UnknownIdentifier,
                    line,
                    col,
                    format!("unknown variable `{name}` in update"),
                )
            })?;
            if updates.iter().any(|(v, _)| *v == var) {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    line,
                    col,
                    format!("variable `{name}` updated twice"),
                ));
            }
            p.expect(&Tok::Prime, "`'`")?;
            p.expect(&Tok::Eq, "`=`")?;
            let e = p.typed_expr(Type::Int, &format!("update of `{name}`"))?;
            p.expect(&Tok::RParen, "`)`")?;
            updates.push((var, e));
            if !p.eat(&Tok::And) {
                break;
            }
        }
        alternatives.push(Alternative { rate, updates });
        if !p.eat(&Tok::Plus) {
            break;
        }
    }
    p.expect(&Tok::Semi, "`;`")?;
    Ok(Command { guard, alternatives })
}
