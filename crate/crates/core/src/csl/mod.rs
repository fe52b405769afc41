//! CSL queries over time-bounded until.
//!
//! Supported: `P=? [ phi U<=t psi ]` and `P~p [ phi U<=t psi ]` where the
//! state formulas may contain one further level of thresholded `P`
//! operators. Everything else in CSL is rejected with an
//! [`ParseErrorKind::UnsupportedOperator`](crate::model::ParseErrorKind) error.

mod parser;

use std::collections::HashMap;
use std::fmt;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::model::{Expr, Model, ModelError, Names, State, Value};

pub use parser::parse_property;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryMode {
    Exact,
    Threshold { comparator: Comparator, target: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CslQuery {
    pub mode: QueryMode,
    pub path: PathFormula,
}

/// `left U<=time_bound right`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFormula {
    pub left: StateFormula,
    pub right: StateFormula,
    pub time_bound: f64,
}

/// A thresholded probability operator nested inside a state formula.
/// `id` numbers the operators of one query in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbOperator {
    pub id: usize,
    pub comparator: Comparator,
    pub threshold: f64,
    pub path: Box<PathFormula>,
}

/// P-free subformulas are always folded into a single `Atomic` predicate,
/// so the boolean connectives only appear above a nested operator.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    Atomic(Expr),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Or(Box<StateFormula>, Box<StateFormula>),
    Prob(ProbOperator),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UntilClass {
    NonNestedUntil,
    NestedUntil,
}

impl StateFormula {
    pub fn truth(b: bool) -> StateFormula {
        StateFormula::Atomic(Expr::Lit(Value::Bool(b)))
    }

    pub fn has_nested(&self) -> bool {
        match self {
            StateFormula::Atomic(_) => false,
            StateFormula::Prob(_) => true,
            StateFormula::Not(a) => a.has_nested(),
            StateFormula::And(a, b) | StateFormula::Or(a, b) => a.has_nested() || b.has_nested(),
        }
    }

    /// Nested operators directly contained in this formula, outermost first.
    pub fn nested_operators(&self) -> Vec<&ProbOperator> {
        let mut out = Vec::new();
        self.collect_nested(&mut out);
        out
    }

    fn collect_nested<'a>(&'a self, out: &mut Vec<&'a ProbOperator>) {
        match self {
            StateFormula::Atomic(_) => {}
            StateFormula::Prob(op) => out.push(op),
            StateFormula::Not(a) => a.collect_nested(out),
            StateFormula::And(a, b) | StateFormula::Or(a, b) => {
                a.collect_nested(out);
                b.collect_nested(out);
            }
        }
    }

    pub fn display<'a>(&'a self, model: &'a Model) -> FormulaDisplay<'a> {
        FormulaDisplay { f: self, model }
    }
}

pub fn classify(q: &CslQuery) -> UntilClass {
    if q.path.left.has_nested() || q.path.right.has_nested() {
        UntilClass::NestedUntil
    } else {
        UntilClass::NonNestedUntil
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SatError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no inner probability table for nested operator #{0}")]
    MissingInner(usize),
}

/// Per-state probabilities of nested operators, keyed by operator id.
#[derive(Debug, Clone, Default)]
pub struct InnerTable {
    values: HashMap<usize, FxHashMap<State, f64>>,
}

impl InnerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, op: usize, s: State, p: f64) {
        self.values.entry(op).or_default().insert(s, p);
    }

    pub fn get(&self, op: usize, s: &State) -> Option<f64> {
        self.values.get(&op)?.get(s).copied()
    }
}

/// Satisfaction of `f` in `s`. Nested operators compare the probability
/// found in `inner` against their threshold.
pub fn sat(model: &Model, s: &State, f: &StateFormula, inner: Option<&InnerTable>) -> Result<bool, SatError> {
    let consts = model.const_values();
    sat_with(s, f, &consts, inner)
}

pub(crate) fn sat_with(
    s: &State,
    f: &StateFormula,
    consts: &[Value],
    inner: Option<&InnerTable>,
) -> Result<bool, SatError> {
    Ok(match f {
        StateFormula::Atomic(e) => e.eval_bool(s.values(), consts)?,
        StateFormula::Not(a) => !sat_with(s, a, consts, inner)?,
        StateFormula::And(a, b) => sat_with(s, a, consts, inner)? && sat_with(s, b, consts, inner)?,
        StateFormula::Or(a, b) => sat_with(s, a, consts, inner)? || sat_with(s, b, consts, inner)?,
        StateFormula::Prob(op) => {
            let p = inner
                .and_then(|t| t.get(op.id, s))
                .ok_or(SatError::MissingInner(op.id))?;
            op.comparator.holds(p, op.threshold)
        }
    })
}

/// Non-empty, non-comment lines of a property file.
pub fn property_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split("//").next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub struct FormulaDisplay<'a> {
    f: &'a StateFormula,
    model: &'a Model,
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.model;
        match self.f {
            StateFormula::Atomic(e) => write!(f, "{}", e.display(m as &dyn Names)),
            StateFormula::Not(a) => write!(f, "!({})", a.display(m)),
            StateFormula::And(a, b) => write!(f, "({} & {})", a.display(m), b.display(m)),
            StateFormula::Or(a, b) => write!(f, "({} | {})", a.display(m), b.display(m)),
            StateFormula::Prob(op) => write!(
                f,
                "(P{}{:?} [ {} ])",
                op.comparator.symbol(),
                op.threshold,
                PathDisplay { p: &op.path, model: m }
            ),
        }
    }
}

struct PathDisplay<'a> {
    p: &'a PathFormula,
    model: &'a Model,
}

impl fmt::Display for PathDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} U<={:?} {}",
            self.p.left.display(self.model),
            self.p.time_bound,
            self.p.right.display(self.model)
        )
    }
}

impl CslQuery {
    pub fn display<'a>(&'a self, model: &'a Model) -> QueryDisplay<'a> {
        QueryDisplay { q: self, model }
    }
}

pub struct QueryDisplay<'a> {
    q: &'a CslQuery,
    model: &'a Model,
}

impl fmt::Display for QueryDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.q.mode {
            QueryMode::Exact => f.write_str("P=?")?,
            QueryMode::Threshold { comparator, target } => write!(f, "P{}{:?}", comparator.symbol(), target)?,
        }
        write!(f, " [ {} ]", PathDisplay { p: &self.q.path, model: self.model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, ParseErrorKind};

    fn toggle() -> Model {
        parse_model("ctmc module t lacI:[0..] init 60; tetR:[0..] init 0; endmodule").unwrap()
    }

    fn robot() -> Model {
        parse_model(
            "ctmc module r x:[0..9] init 0; c:[0..1] init 0;
             [] x<9 -> 1:(x'=x+1); [] c=0 -> 2:(c'=1); [] c=1 -> 2:(c'=0); endmodule
             label \"communicate\" = c=1; label \"goal\" = x=9;",
        )
        .unwrap()
    }

    #[test]
    fn toggle_property() {
        let m = toggle();
        let q = parse_property("P=? [ true U<=2100 (tetR>40 & lacI<20) ]", &m).unwrap();
        assert_eq!(q.mode, QueryMode::Exact);
        assert_eq!(q.path.time_bound, 2100.0);
        assert_eq!(q.path.left, StateFormula::truth(true));
        assert_eq!(classify(&q), UntilClass::NonNestedUntil);
    }

    #[test]
    fn label_predicate() {
        let m = parse_model(
            "ctmc module p s:[1..3] init 1; a:[0..1] init 0; endmodule label \"station1_polled\" = s=1&a=1;",
        )
        .unwrap();
        let q = parse_property("P=? [ true U<=10 station1_polled ]", &m).unwrap();
        assert_eq!(q.mode, QueryMode::Exact);
        let quoted = parse_property("P=? [ true U<=10 \"station1_polled\" ]", &m).unwrap();
        assert_eq!(q, quoted);
    }

    #[test]
    fn unsupported_operators() {
        let m = parse_model("ctmc module m x:[0..] init 0; y:[0..] init 0; endmodule").unwrap();
        for src in [
            "P=? [ true U (x>1) ]",
            "P=? [ true U[1,2] (x>1) ]",
            "P=? [ X (x>1) ]",
            "S=? [ x>1 ]",
            "P=? [ F<=3 x>1 ]",
        ] {
            let e = parse_property(src, &m).unwrap_err();
            assert_eq!(e.kind, ParseErrorKind::UnsupportedOperator, "{src}: {e}");
        }
    }

    #[test]
    fn nested_robot_property() {
        let m = robot();
        let q = parse_property("P=? [ (P>=0.5 [ true U<=7 communicate ]) U<=100 goal ]", &m).unwrap();
        assert_eq!(classify(&q), UntilClass::NestedUntil);
        let ops = q.path.left.nested_operators();
        assert_eq!(ops.len(), 1);
        assert_eq!((ops[0].comparator, ops[0].threshold), (Comparator::Ge, 0.5));
        assert_eq!(ops[0].path.time_bound, 7.0);

        let too_deep = "P=? [ (P>=0.5 [ (P>0.1 [ true U<=1 goal ]) U<=7 communicate ]) U<=100 goal ]";
        assert_eq!(parse_property(too_deep, &m).unwrap_err().kind, ParseErrorKind::NestingTooDeep);
    }

    #[test]
    fn simple_classification() {
        let m = parse_model("ctmc module m x:[0..] init 0; y:[0..] init 0; endmodule").unwrap();
        let q = parse_property("P=? [ (x>0) U<=5 (y>0) ]", &m).unwrap();
        assert_eq!(classify(&q), UntilClass::NonNestedUntil);
        let q = parse_property("P>=0.9 [ (x+1)>1 U<=5 y>0 ]", &m).unwrap();
        assert!(matches!(q.mode, QueryMode::Threshold { comparator: Comparator::Ge, .. }));
    }

    #[test]
    fn satisfaction() {
        let m = toggle();
        let f = parse_property("P=? [ true U<=1 tetR>40 & lacI<20 ]", &m).unwrap().path.right;
        assert!(sat(&m, &State(vec![10, 50]), &f, None).unwrap());
        let not_true = parse_property("P=? [ true U<=1 !true ]", &m).unwrap().path.right;
        assert!(!sat(&m, &State(vec![10, 50]), &not_true, None).unwrap());

        let r = robot();
        let q = parse_property("P=? [ (P>=0.5 [ true U<=7 communicate ]) U<=100 goal ]", &r).unwrap();
        let s = State(vec![3, 0]);
        assert_eq!(sat(&r, &s, &q.path.left, None), Err(SatError::MissingInner(0)));
        let mut table = InnerTable::new();
        table.insert(0, s.clone(), 0.73);
        assert!(sat(&r, &s, &q.path.left, Some(&table)).unwrap());
        table.insert(0, s.clone(), 0.2);
        assert!(!sat(&r, &s, &q.path.left, Some(&table)).unwrap());
    }

    #[test]
    fn print_then_parse() {
        let r = robot();
        for src in [
            "P=? [ (P>=0.5 [ true U<=7 communicate ]) U<=100 goal ]",
            "P<0.25 [ !(x>3 | c=1) U<=2.5 (x+c)*2>=7 ]",
            "P=? [ goal & (P>0.1 [ x>1 U<=1e-3 c=0 ]) U<=4 !(P<=0.5 [ true U<=1 goal ]) ]",
        ] {
            let q = parse_property(src, &r).unwrap();
            let printed = q.display(&r).to_string();
            assert_eq!(parse_property(&printed, &r).unwrap(), q, "{printed}");
        }
    }

    #[test]
    fn property_file_lines() {
        let text = "// header\nP=? [ true U<=1 x>0 ]  // trailing\n\n  P>0.5 [ true U<=2 x>1 ]\n";
        assert_eq!(property_lines(text), vec!["P=? [ true U<=1 x>0 ]", "P>0.5 [ true U<=2 x>1 ]"]);
    }
}
