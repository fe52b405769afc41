use std::fmt;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Int,
    Double,
    Bool,
}

impl Type {
    pub fn is_numeric(self) -> bool {
        matches!(self, Type::Int | Type::Double)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Int => "int",
            Type::Double => "double",
            Type::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Double(f64),
    Bool(bool),
}

impl Value {
    pub fn ty(self) -> Type {
        match self {
            Value::Int(_) => Type::Int,
            Value::Double(_) => Type::Double,
            Value::Bool(_) => Type::Bool,
        }
    }

    pub fn as_f64(self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(v as f64),
            Value::Double(v) => Some(v),
            Value::Bool(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            // Debug keeps a `.` or exponent so the literal re-lexes as a double.
            Value::Double(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Eq => "=",
            BinaryOp::Neq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::And => "&",
            BinaryOp::Or => "|",
        }
    }
}

/// A resolved expression. Variables and constants are referenced by their
/// index in the owning model, labels are inlined at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Var(usize),
    Const(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Name tables needed to print an expression back to source form.
pub trait Names {
    fn var_name(&self, idx: usize) -> &str;
    fn const_name(&self, idx: usize) -> &str;
}

pub struct Display<'a, N: Names + ?Sized> {
    expr: &'a Expr,
    names: &'a N,
}

impl Expr {
    pub fn display<'a, N: Names + ?Sized>(&'a self, names: &'a N) -> Display<'a, N> {
        Display { expr: self, names }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn eval(&self, vars: &[i64], consts: &[Value]) -> Result<Value, ModelError> {
        match self {
            Expr::Lit(v) => Ok(*v),
            Expr::Var(i) => Ok(Value::Int(vars[*i])),
            Expr::Const(i) => Ok(consts[*i]),
            Expr::Unary(op, e) => {
                let v = e.eval(vars, consts)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::Int(x)) => x
                        .checked_neg()
                        .map(Value::Int)
                        .ok_or(ModelError::Overflow),
                    (UnaryOp::Neg, Value::Double(x)) => Ok(Value::Double(-x)),
                    (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    _ => Err(ModelError::Type(format!("bad operand for unary operator: {v}"))),
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                // short-circuit boolean connectives
                if matches!(op, BinaryOp::And | BinaryOp::Or) {
                    let l = lhs.eval_bool(vars, consts)?;
                    return match (op, l) {
                        (BinaryOp::And, false) => Ok(Value::Bool(false)),
                        (BinaryOp::Or, true) => Ok(Value::Bool(true)),
                        _ => Ok(Value::Bool(rhs.eval_bool(vars, consts)?)),
                    };
                }
                let l = lhs.eval(vars, consts)?;
                let r = rhs.eval(vars, consts)?;
                eval_binary(*op, l, r)
            }
        }
    }

    pub fn eval_bool(&self, vars: &[i64], consts: &[Value]) -> Result<bool, ModelError> {
        match self.eval(vars, consts)? {
            Value::Bool(b) => Ok(b),
            v => Err(ModelError::Type(format!("expected boolean, found {v}"))),
        }
    }

    pub fn eval_f64(&self, vars: &[i64], consts: &[Value]) -> Result<f64, ModelError> {
        let v = self.eval(vars, consts)?;
        v.as_f64()
            .ok_or_else(|| ModelError::Type(format!("expected number, found {v}")))
    }

    pub fn eval_int(&self, vars: &[i64], consts: &[Value]) -> Result<i64, ModelError> {
        match self.eval(vars, consts)? {
            Value::Int(v) => Ok(v),
            v => Err(ModelError::Type(format!("expected integer, found {v}"))),
        }
    }

    /// Static type of the expression given the constant types.
    pub fn type_of(&self, consts: &[Value]) -> Result<Type, String> {
        match self {
            Expr::Lit(v) => Ok(v.ty()),
            Expr::Var(_) => Ok(Type::Int),
            Expr::Const(i) => Ok(consts[*i].ty()),
            Expr::Unary(UnaryOp::Neg, e) => {
                let t = e.type_of(consts)?;
                if t.is_numeric() {
                    Ok(t)
                } else {
                    Err(format!("cannot negate a {t}"))
                }
            }
            Expr::Unary(UnaryOp::Not, e) => match e.type_of(consts)? {
                Type::Bool => Ok(Type::Bool),
                t => Err(format!("`!` expects bool, found {t}")),
            },
            Expr::Binary(op, l, r) => {
                let (lt, rt) = (l.type_of(consts)?, r.type_of(consts)?);
                use BinaryOp::*;
                match op {
                    Add | Sub | Mul | Div => {
                        if !lt.is_numeric() || !rt.is_numeric() {
                            return Err(format!(
                                "`{}` expects numbers, found {lt} and {rt}",
                                op.symbol()
                            ));
                        }
                        if *op == Div || lt == Type::Double || rt == Type::Double {
                            Ok(Type::Double)
                        } else {
                            Ok(Type::Int)
                        }
                    }
                    Lt | Le | Gt | Ge => {
                        if lt.is_numeric() && rt.is_numeric() {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("`{}` expects numbers, found {lt} and {rt}", op.symbol()))
                        }
                    }
                    Eq | Neq => {
                        if (lt.is_numeric() && rt.is_numeric()) || (lt == Type::Bool && rt == Type::Bool) {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("cannot compare {lt} with {rt}"))
                        }
                    }
                    And | Or => {
                        if lt == Type::Bool && rt == Type::Bool {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("`{}` expects bool, found {lt} and {rt}", op.symbol()))
                        }
                    }
                }
            }
        }
    }
}

fn eval_binary(op: BinaryOp, l: Value, r: Value) -> Result<Value, ModelError> {
    use BinaryOp::*;
    let type_err = || ModelError::Type(format!("bad operands for `{}`: {l}, {r}", op.symbol()));
    match op {
        Add | Sub | Mul => match (l, r) {
            (Value::Int(a), Value::Int(b)) => {
                let v = match op {
                    Add => a.checked_add(b),
                    Sub => a.checked_sub(b),
                    _ => a.checked_mul(b),
                };
                v.map(Value::Int).ok_or(ModelError::Overflow)
            }
            _ => {
                let (a, b) = (l.as_f64().ok_or_else(type_err)?, r.as_f64().ok_or_else(type_err)?);
                Ok(Value::Double(match op {
                    Add => a + b,
                    Sub => a - b,
                    _ => a * b,
                }))
            }
        },
        Div => {
            let (a, b) = (l.as_f64().ok_or_else(type_err)?, r.as_f64().ok_or_else(type_err)?);
            if b == 0.0 {
                return Err(ModelError::DivisionByZero);
            }
            Ok(Value::Double(a / b))
        }
        Lt | Le | Gt | Ge => {
            let res = match (l, r) {
                (Value::Int(a), Value::Int(b)) => match op {
                    Lt => a < b,
                    Le => a <= b,
                    Gt => a > b,
                    _ => a >= b,
                },
                _ => {
                    let (a, b) = (l.as_f64().ok_or_else(type_err)?, r.as_f64().ok_or_else(type_err)?);
                    match op {
                        Lt => a < b,
                        Le => a <= b,
                        Gt => a > b,
                        _ => a >= b,
                    }
                }
            };
            Ok(Value::Bool(res))
        }
        Eq | Neq => {
            let equal = match (l, r) {
                (Value::Bool(a), Value::Bool(b)) => a == b,
                (Value::Int(a), Value::Int(b)) => a == b,
                (Value::Bool(_), _) | (_, Value::Bool(_)) => return Err(type_err()),
                _ => l.as_f64() == r.as_f64(),
            };
            Ok(Value::Bool(if op == Eq { equal } else { !equal }))
        }
        And | Or => match (l, r) {
            (Value::Bool(a), Value::Bool(b)) => Ok(Value::Bool(if op == And { a && b } else { a || b })),
            _ => Err(type_err()),
        },
    }
}

impl<N: Names + ?Sized> fmt::Display for Display<'_, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(i) => f.write_str(self.names.var_name(*i)),
            Expr::Const(i) => f.write_str(self.names.const_name(*i)),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "-({})", e.display(self.names)),
            Expr::Unary(UnaryOp::Not, e) => write!(f, "!({})", e.display(self.names)),
            Expr::Binary(op, l, r) => write!(
                f,
                "({} {} {})",
                l.display(self.names),
                op.symbol(),
                r.display(self.names)
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_overflow_is_detected() {
        let e = Expr::binary(BinaryOp::Add, Expr::Lit(Value::Int(i64::MAX)), Expr::Var(0));
        assert!(matches!(e.eval(&[1], &[]), Err(ModelError::Overflow)));
    }

    #[test]
    fn division_yields_double() {
        let e = Expr::binary(BinaryOp::Div, Expr::Lit(Value::Int(1)), Expr::Lit(Value::Int(4)));
        assert_eq!(e.eval(&[], &[]).unwrap(), Value::Double(0.25));
        assert_eq!(e.type_of(&[]).unwrap(), Type::Double);
    }

    #[test]
    fn mixed_comparison() {
        let e = Expr::binary(BinaryOp::Eq, Expr::Lit(Value::Int(2)), Expr::Lit(Value::Double(2.0)));
        assert_eq!(e.eval(&[], &[]).unwrap(), Value::Bool(true));
    }
}
