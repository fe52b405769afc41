//! Brute-force reference results for finite models.
//!
//! Shares only the model layer with the engine: the state space is built
//! without truncation, products are scattered along outgoing edges instead
//! of gathered, the uniformization rate is the plain maximum exit rate and
//! Poisson terms come straight from their log-space formula starting at 0.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::csl::{PathFormula, StateFormula};
use crate::model::{Model, ModelError, State, Value};

pub const DEFAULT_ORACLE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("state space exceeds cap of {cap} states")]
    Cap { cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("formula nests probability operators more than once")]
    TooDeep,
}

/// The complete reachable state space with outgoing rates; index 0 is the
/// initial state.
#[derive(Debug, Clone)]
pub struct FullGraph {
    states: Vec<State>,
    index: HashMap<State, usize>,
    rates: Vec<Vec<(usize, f64)>>,
}

impl FullGraph {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn index_of(&self, s: &State) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn rates(&self, i: usize) -> &[(usize, f64)] {
        &self.rates[i]
    }
}

/// Breadth-first enumeration without truncation.
pub fn enumerate_full(model: &Model, cap: usize) -> Result<FullGraph, OracleError> {
    let init = model.initial_state();
    let mut g = FullGraph {
        states: vec![init.clone()],
        index: HashMap::from([(init, 0)]),
        rates: vec![Vec::new()],
    };
    if cap < 1 {
        return Err(OracleError::Cap { cap });
    }
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let succ = model.successors(&g.states[i])?;
        let mut row = Vec::new();
        for t in succ {
            let j = match g.index.get(&t.target) {
                Some(&j) => j,
                None => {
                    if g.states.len() >= cap {
                        return Err(OracleError::Cap { cap });
                    }
                    let j = g.states.len();
                    g.index.insert(t.target.clone(), j);
                    g.states.push(t.target);
                    g.rates.push(Vec::new());
                    queue.push_back(j);
                    j
                }
            };
            row.push((j, t.rate));
        }
        g.rates[i] = row;
    }
    Ok(g)
}

/// Poisson(lambda) probabilities from k = 0 until the remaining tail is below `eps`.
fn poisson_terms(lambda: f64, eps: f64) -> Vec<f64> {
    let mut terms = Vec::new();
    let mut ln_fact = 0.0;
    let mut k = 0usize;
    loop {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let p = (-lambda + k as f64 * lambda.ln() - ln_fact).exp();
        terms.push(p);
        let kf = k as f64;
        if kf + 1.0 > lambda && p * lambda / (kf + 1.0 - lambda) < eps {
            return terms;
        }
        k += 1;
    }
}

fn max_exit(g: &FullGraph, absorbing: &[bool]) -> f64 {
    (0..g.len())
        .filter(|&i| !absorbing[i])
        .map(|i| g.rates[i].iter().map(|e| e.1).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `sum_k Poisson(q t; k) * init P^k` with the states in `absorbing` held fixed.
fn forward(g: &FullGraph, init: &[f64], absorbing: &[bool], t: f64, tol: f64) -> Vec<f64> {
    let q = max_exit(g, absorbing);
    if t == 0.0 || q == 0.0 {
        return init.to_vec();
    }
    let terms = poisson_terms(q * t, tol / 100.0);
    let n = g.len();
    let mut v = init.to_vec();
    let mut result = vec![0.0; n];
    for (k, &w) in terms.iter().enumerate() {
        for i in 0..n {
            result[i] += w * v[i];
        }
        if k + 1 == terms.len() {
            break;
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            if v[i] == 0.0 {
                continue;
            }
            if absorbing[i] {
                next[i] += v[i];
                continue;
            }
            let mut exit = 0.0;
            for &(j, r) in &g.rates[i] {
                next[j] += v[i] * r / q;
                exit += r;
            }
            next[i] += v[i] * (1.0 - exit / q);
        }
        v = next;
    }
    result
}

/// `sum_k Poisson(q t; k) * P^k f`.
fn backward(g: &FullGraph, f: &[f64], absorbing: &[bool], t: f64, tol: f64) -> Vec<f64> {
    let q = max_exit(g, absorbing);
    if q == 0.0 {
        return f.to_vec();
    }
    let terms = poisson_terms(q * t, tol / 100.0);
    let n = g.len();
    let mut v = f.to_vec();
    let mut result = vec![0.0; n];
    for (k, &w) in terms.iter().enumerate() {
        for i in 0..n {
            result[i] += w * v[i];
        }
        if k + 1 == terms.len() {
            break;
        }
        v = (0..n)
            .map(|i| {
                if absorbing[i] {
                    return v[i];
                }
                let mut exit = 0.0;
                let mut acc = 0.0;
                for &(j, r) in &g.rates[i] {
                    acc += r / q * v[j];
                    exit += r;
                }
                acc + (1.0 - exit / q) * v[i]
            })
            .collect();
    }
    result
}

/// Distribution at time `t` from the initial state.
pub fn exact_transient(g: &FullGraph, t: f64, tol: f64) -> Vec<f64> {
    let mut init = vec![0.0; g.len()];
    init[g.initial()] = 1.0;
    forward(g, &init, &vec![false; g.len()], t, tol)
}

/// Distribution at time `t` from an arbitrary initial vector.
pub fn exact_transient_from(g: &FullGraph, init: &[f64], t: f64, tol: f64) -> Vec<f64> {
    forward(g, init, &vec![false; g.len()], t, tol)
}

fn eval(model: &Model, g: &FullGraph, f: &StateFormula, consts: &[Value], tol: f64) -> Result<Vec<bool>, OracleError> {
    Ok(match f {
        StateFormula::Atomic(e) => g
            .states
            .iter()
            .map(|s| e.eval_bool(s.values(), consts))
            .collect::<Result<_, _>>()?,
        StateFormula::Not(a) => eval(model, g, a, consts, tol)?.into_iter().map(|b| !b).collect(),
        StateFormula::And(a, b) => {
            let (x, y) = (eval(model, g, a, consts, tol)?, eval(model, g, b, consts, tol)?);
            x.iter().zip(&y).map(|(p, q)| *p && *q).collect()
        }
        StateFormula::Or(a, b) => {
            let (x, y) = (eval(model, g, a, consts, tol)?, eval(model, g, b, consts, tol)?);
            x.iter().zip(&y).map(|(p, q)| *p || *q).collect()
        }
        StateFormula::Prob(op) => {
            if op.path.left.has_nested() || op.path.right.has_nested() {
                return Err(OracleError::TooDeep);
            }
            exact_until_all(model, g, &op.path, tol)?
                .into_iter()
                .map(|p| op.comparator.holds(p, op.threshold))
                .collect()
        }
    })
}

fn transformed(model: &Model, g: &FullGraph, path: &PathFormula, tol: f64) -> Result<(Vec<bool>, Vec<bool>), OracleError> {
    let consts = model.const_values();
    let phi = eval(model, g, &path.left, &consts, tol)?;
    let psi = eval(model, g, &path.right, &consts, tol)?;
    let absorbing = phi.iter().zip(&psi).map(|(f, p)| *p || !*f).collect();
    Ok((absorbing, psi))
}

/// `P[phi U<=t psi]` from the initial state.
pub fn exact_until(model: &Model, g: &FullGraph, path: &PathFormula, tol: f64) -> Result<f64, OracleError> {
    let (absorbing, psi) = transformed(model, g, path, tol)?;
    if psi[g.initial()] {
        return Ok(1.0);
    }
    let mut init = vec![0.0; g.len()];
    init[g.initial()] = 1.0;
    let pi = forward(g, &init, &absorbing, path.time_bound, tol);
    Ok((0..g.len()).filter(|&i| psi[i]).map(|i| pi[i]).sum())
}

/// `P[phi U<=t psi]` from every state.
pub fn exact_until_all(model: &Model, g: &FullGraph, path: &PathFormula, tol: f64) -> Result<Vec<f64>, OracleError> {
    let (absorbing, psi) = transformed(model, g, path, tol)?;
    let f: Vec<f64> = psi.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(backward(g, &f, &absorbing, path.time_bound, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csl::parse_property;
    use crate::model::parse_model;

    const TANDEM7: &str = "ctmc
        const int c = 7;
        module tandem
          sc : [0..c] init 0;
          ph : [1..2] init 1;
          sm : [0..c] init 0;
          [] sc<c -> 4*c : (sc'=sc+1);
          [] sc>0 & ph=1 & sm<c -> 1.8 : (sc'=sc-1) & (sm'=sm+1);
          [] sc>0 & ph=1 -> 0.2 : (ph'=2);
          [] sc>0 & ph=2 & sm<c -> 2 : (ph'=1) & (sc'=sc-1) & (sm'=sm+1);
          [] sm>0 -> 4 : (sm'=sm-1);
        endmodule";

    #[test]
    fn bounded_grid() {
        let m = parse_model(
            "ctmc module m x : [0..3] init 0; y : [0..3] init 0;
             [] x<3 -> 1 : (x'=x+1); [] y<3 -> 2 : (y'=y+1); [] x>0 & y>0 -> 1 : (x'=x-1) & (y'=y-1); endmodule",
        )
        .unwrap();
        assert!(enumerate_full(&m, 1000).unwrap().len() <= 16);
    }

    #[test]
    fn pure_birth_exceeds_cap() {
        let m = parse_model("ctmc module m x : [0..] init 0; [] true -> 1 : (x'=x+1); endmodule").unwrap();
        assert_eq!(enumerate_full(&m, 1000).unwrap_err(), OracleError::Cap { cap: 1000 });
    }

    #[test]
    fn tandem_state_count() {
        let m = parse_model(TANDEM7).unwrap();
        let g = enumerate_full(&m, 1000).unwrap();
        // sc = 0 pins ph = 1 (phase changes only while a customer is served)
        let mut hand = 0;
        for sc in 0..=7 {
            for ph in 1..=2 {
                for _sm in 0..=7 {
                    if sc > 0 || ph == 1 {
                        hand += 1;
                    }
                }
            }
        }
        assert_eq!(g.len(), hand);
    }

    #[test]
    fn single_exponential() {
        let m = parse_model("ctmc module m x : [0..1] init 0; [] x=0 -> 1 : (x'=1); endmodule").unwrap();
        let g = enumerate_full(&m, 10).unwrap();
        let pi = exact_transient(&g, 1.0, 1e-10);
        assert!((pi[1] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(exact_transient(&g, 0.0, 1e-10), vec![1.0, 0.0]);
    }

    #[test]
    fn symmetric_cycle() {
        let m = parse_model("ctmc module m x : [0..1] init 0; [] true -> 3 : (x'=1-x); endmodule").unwrap();
        let g = enumerate_full(&m, 10).unwrap();
        let pi = exact_transient(&g, 50.0, 1e-10);
        assert!((pi[0] - 0.5).abs() < 1e-9 && (pi[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn until_values() {
        let m = parse_model("ctmc module m x : [0..3] init 0; [] x<2 -> 1 : (x'=x+1); endmodule").unwrap();
        let g = enumerate_full(&m, 10).unwrap();
        let until = |p: &str| exact_until(&m, &g, &parse_property(p, &m).unwrap().path, 1e-12).unwrap();
        assert_eq!(until("P=? [ true U<=1 x=0 ]"), 1.0);
        assert_eq!(until("P=? [ true U<=1 x=3 ]"), 0.0);
        assert!((until("P=? [ true U<=1 x=2 ]") - (1.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-10);
        let all = exact_until_all(&m, &g, &parse_property("P=? [ true U<=1 x=2 ]", &m).unwrap().path, 1e-12).unwrap();
        assert!((all[1] - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn forward_and_backward_agree() {
        let m = parse_model(TANDEM7).unwrap();
        let g = enumerate_full(&m, 1000).unwrap();
        let path = parse_property("P=? [ sm<7 U<=0.5 sc=7 ]", &m).unwrap().path;
        let fwd = exact_until(&m, &g, &path, 1e-10).unwrap();
        let bwd = exact_until_all(&m, &g, &path, 1e-10).unwrap()[0];
        assert!((fwd - bwd).abs() < 1e-11);
    }
}
