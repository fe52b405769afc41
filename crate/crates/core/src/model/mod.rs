//! Guarded-command CTMC models: parsing, states and the implicit transition
//! kernel.

mod expr;
mod lexer;
mod parser;

use std::fmt;

use thiserror::Error;

pub use expr::{BinaryOp, Expr, Names, Type, UnaryOp, Value};
pub(crate) use lexer::{tokenize, Tok};
pub(crate) use parser::{Parser, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
    UnknownIdentifier,
    TypeMismatch,
    DuplicateVariable,
    NonCtmc,
    Bounds,
    UnsupportedOperator,
    NestingTooDeep,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Lexical => "lexical error",
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::UnknownIdentifier => "unknown identifier",
            ParseErrorKind::TypeMismatch => "type mismatch",
            ParseErrorKind::DuplicateVariable => "duplicate declaration",
            ParseErrorKind::NonCtmc => "non-CTMC model",
            ParseErrorKind::Bounds => "bound violation",
            ParseErrorKind::UnsupportedOperator => "unsupported-operator",
            ParseErrorKind::NestingTooDeep => "nesting too deep",
        })
    }
}

/// A diagnostic for model or property text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            kind,
            line,
            col,
            message: message.into(),
        }
    }

    pub(crate) fn lexical(line: usize, col: usize, message: impl Into<String>) -> Self {
        Self::new(ParseErrorKind::Lexical, line, col, message)
    }
}

/// Errors raised while evaluating the model on a concrete state.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("integer overflow")]
    Overflow,
    #[error("division by zero")]
    DivisionByZero,
    #[error("type error: {0}")]
    Type(String),
    #[error("command {command}: update sets `{var}` to {value}, outside its bounds, in state {state}")]
    OutOfBounds {
        command: usize,
        var: String,
        value: i64,
        state: State,
    },
    #[error("command {command}: rate {rate} is not positive in state {state}")]
    NonPositiveRate { command: usize, rate: f64, state: State },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub name: String,
    pub ty: Type,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDecl {
    pub name: String,
    /// `None` means unbounded.
    pub lower: Option<i64>,
    pub upper: Option<i64>,
    pub init: i64,
}

impl VariableDecl {
    pub fn contains(&self, v: i64) -> bool {
        self.lower.is_none_or(|lo| v >= lo) && self.upper.is_none_or(|hi| v <= hi)
    }
}

/// One `rate : updates` branch of a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    pub rate: Expr,
    pub updates: Vec<(usize, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub guard: Expr,
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub name: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub constants: Vec<Constant>,
    pub variables: Vec<VariableDecl>,
    pub commands: Vec<Command>,
    pub labels: Vec<Label>,
}

/// A valuation of the model variables in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(pub Vec<i64>);

impl State {
    pub fn values(&self) -> &[i64] {
        &self.0
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

/// An outgoing transition of some source state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub target: State,
    pub rate: f64,
}

pub fn parse_model(source: &str) -> Result<Model, ParseError> {
    parser::parse_model_with(source, &[])
}

/// Like [`parse_model`], overriding the values of declared constants.
pub fn parse_model_with_constants(source: &str, overrides: &[(String, String)]) -> Result<Model, ParseError> {
    parser::parse_model_with(source, overrides)
}

/// Sum of the rates, 0 for a deadlock state.
pub fn exit_rate(ts: &[Transition]) -> f64 {
    ts.iter().map(|t| t.rate).sum()
}

impl Model {
    pub fn initial_state(&self) -> State {
        State(self.variables.iter().map(|v| v.init).collect())
    }

    pub fn const_values(&self) -> Vec<Value> {
        self.constants.iter().map(|c| c.value).collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Outgoing transitions of `s`: self-loops dropped, duplicate targets merged
    /// in order of first appearance.
    pub fn successors(&self, s: &State) -> Result<Vec<Transition>, ModelError> {
        let consts = self.const_values();
        self.successors_with(s, &consts)
    }

    pub(crate) fn successors_with(&self, s: &State, consts: &[Value]) -> Result<Vec<Transition>, ModelError> {
        let mut out: Vec<Transition> = Vec::new();
        let vars = s.values();
        for (ci, cmd) in self.commands.iter().enumerate() {
            if !cmd.guard.eval_bool(vars, consts)? {
                continue;
            }
            for alt in &cmd.alternatives {
                let rate = alt.rate.eval_f64(vars, consts)?;
                if rate.is_nan() || rate <= 0.0 || rate.is_infinite() {
                    return Err(ModelError::NonPositiveRate {
                        command: ci,
                        rate,
                        state: s.clone(),
                    });
                }
                let mut next = vars.to_vec();
                for (var, e) in &alt.updates {
                    let v = e.eval_int(vars, consts)?;
                    if !self.variables[*var].contains(v) {
                        return Err(ModelError::OutOfBounds {
                            command: ci,
                            var: self.variables[*var].name.clone(),
                            value: v,
                            state: s.clone(),
                        });
                    }
                    next[*var] = v;
                }
                if next == vars {
                    continue;
                }
                match out.iter_mut().find(|t| t.target.0 == next) {
                    Some(t) => t.rate += rate,
                    None => out.push(Transition {
                        target: State(next),
                        rate,
                    }),
                }
            }
        }
        Ok(out)
    }

    pub fn eval_predicate(&self, s: &State, expr: &Expr) -> Result<bool, ModelError> {
        expr.eval_bool(s.values(), &self.const_values())
    }

    /// Parses a boolean expression over the model's variables, constants and labels.
    pub fn parse_predicate(&self, text: &str) -> Result<Expr, ParseError> {
        let toks = tokenize(text)?;
        let mut p = Parser::new(&toks, Scope::for_model(self));
        let e = p.typed_expr(Type::Bool, "predicate")?;
        if *p.peek() != Tok::Eof {
            return Err(p.unexpected("end of predicate"));
        }
        Ok(e)
    }
}

impl Names for Model {
    fn var_name(&self, idx: usize) -> &str {
        &self.variables[idx].name
    }

    fn const_name(&self, idx: usize) -> &str {
        &self.constants[idx].name
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ctmc")?;
        if !self.constants.is_empty() {
            writeln!(f)?;
        }
        for c in &self.constants {
            writeln!(f, "const {} {} = {};", c.ty, c.name, c.value)?;
        }
        writeln!(f, "\nmodule {}", self.name)?;
        for v in &self.variables {
            let bound = |b: Option<i64>| b.map(|x| x.to_string()).unwrap_or_default();
            writeln!(f, "  {} : [{}..{}] init {};", v.name, bound(v.lower), bound(v.upper), v.init)?;
        }
        for c in &self.commands {
            write!(f, "  [] {} ->", c.guard.display(self))?;
            for (ai, alt) in c.alternatives.iter().enumerate() {
                if ai > 0 {
                    f.write_str(" +")?;
                }
                write!(f, " {} :", alt.rate.display(self))?;
                for (ui, (var, e)) in alt.updates.iter().enumerate() {
                    if ui > 0 {
                        f.write_str(" &")?;
                    }
                    write!(f, " ({}' = {})", self.variables[*var].name, e.display(self))?;
                }
            }
            writeln!(f, ";")?;
        }
        writeln!(f, "endmodule")?;
        for l in &self.labels {
            writeln!(f, "\nlabel \"{}\" = {};", l.name, l.expr.display(self))?;
        }
        Ok(())
    }
}
