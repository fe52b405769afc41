//! Probability bounds for time-bounded until on truncated graphs, and the
//! refinement loop that tightens them.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::csl::{classify, sat_with, Comparator, CslQuery, InnerTable, PathFormula, QueryMode, SatError, StateFormula, UntilClass};
use crate::explorer::{ExploreError, Explorer, TruncatedGraph, DEFAULT_STATE_CAP};
use crate::model::{Model, Value};
use crate::numerics::{kahan_sum, Distribution, NumericsError, SparseKernel};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sat(#[from] SatError),
    #[error("invalid parameter: {0}")]
    Params(String),
    #[error("nested probability operator #{0} contains another probability operator")]
    NestingTooDeep(usize),
}

/// `[pmin, pmax]` for one query on one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub pmin: f64,
    pub pmax: f64,
    /// Transient mass in the absorbing state; equals `pmax - pmin`.
    pub absorbing_mass: f64,
    pub states: usize,
    pub transitions: usize,
}

impl Bound {
    pub fn gap(&self) -> f64 {
        self.pmax - self.pmin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Holds,
    Fails,
    Unknown,
}

/// Whether all, none or part of `[pmin, pmax]` satisfies `~ p`.
pub fn compare_bound(b: &Bound, comparator: Comparator, p: f64) -> Comparison {
    match (comparator.holds(b.pmin, p), comparator.holds(b.pmax, p)) {
        (true, true) => Comparison::Holds,
        (false, false) => Comparison::Fails,
        _ => Comparison::Unknown,
    }
}

fn sat_vector(
    graph: &TruncatedGraph,
    f: &StateFormula,
    consts: &[Value],
    inner: Option<&InnerTable>,
) -> Result<Vec<bool>, SatError> {
    graph.states().map(|s| sat_with(s, f, consts, inner)).collect()
}

/// Absorbing mask and success indicator of the until-transformed chain:
/// psi states and `!phi & !psi` states become absorbing, as does `x_abs`.
fn until_chain(
    graph: &TruncatedGraph,
    path: &PathFormula,
    consts: &[Value],
    inner: Option<&InnerTable>,
) -> Result<(Vec<bool>, Vec<bool>), CheckError> {
    let psi = sat_vector(graph, &path.right, consts, inner)?;
    let phi = sat_vector(graph, &path.left, consts, inner)?;
    let mut absorbing: Vec<bool> = psi.iter().zip(&phi).map(|(&p, &f)| p || !f).collect();
    absorbing.push(true);
    Ok((absorbing, psi))
}

fn require_finalized(graph: &TruncatedGraph) -> Result<usize, CheckError> {
    graph
        .absorbing_index()
        .ok_or(CheckError::Numerics(NumericsError::NotFinalized))
}

/// Bounds on `P[phi U<=t psi]` from the initial state of `graph`.
///
/// Mass in psi states at time `t` is the lower bound; adding the mass in
/// the absorbing state gives the upper bound.
pub fn check_bounded_until(
    model: &Model,
    graph: &TruncatedGraph,
    path: &PathFormula,
    inner: Option<&InnerTable>,
    tol: f64,
) -> Result<Bound, CheckError> {
    let abs = require_finalized(graph)?;
    let consts = model.const_values();
    let states = graph.dimension();
    let transitions = graph.transition_count();
    if sat_with(graph.state(0), &path.right, &consts, inner)? {
        return Ok(Bound {
            pmin: 1.0,
            pmax: 1.0,
            absorbing_mass: 0.0,
            states,
            transitions,
        });
    }
    let (absorbing, psi) = until_chain(graph, path, &consts, inner)?;
    let kernel = SparseKernel::from_graph(graph, Some(&absorbing))?;
    let pi = kernel.transient(&Distribution::point(states, 0), path.time_bound, tol)?;
    let hits: Vec<f64> = psi.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| pi[i]).collect();
    let pmin = kahan_sum(&hits).min(1.0);
    let absorbing_mass = pi[abs];
    Ok(Bound {
        pmin,
        pmax: (pmin + absorbing_mass).min(1.0),
        absorbing_mass,
        states,
        transitions,
    })
}

/// Probabilities of every nested operator in `f`, for every explored state.
///
/// Each operator takes one backward pass over the until-transformed chain.
/// Mass reaching the absorbing state counts as failure, so the stored value
/// is the lower bound. States missing from the table (the absorbing state)
/// never satisfy a nested operator.
pub fn resolve_nested(
    model: &Model,
    graph: &TruncatedGraph,
    f: &StateFormula,
    tol: f64,
    table: &mut InnerTable,
) -> Result<(), CheckError> {
    require_finalized(graph)?;
    let consts = model.const_values();
    for op in f.nested_operators() {
        if op.path.left.has_nested() || op.path.right.has_nested() {
            return Err(CheckError::NestingTooDeep(op.id));
        }
        let (absorbing, psi) = until_chain(graph, &op.path, &consts, None)?;
        let kernel = SparseKernel::from_graph(graph, Some(&absorbing))?;
        let mut values: Vec<f64> = psi.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        values.push(0.0);
        let probs = kernel.backward_transient(&values, op.path.time_bound, tol)?;
        for (i, s) in graph.states().enumerate() {
            table.insert(op.id, s.clone(), probs[i].clamp(0.0, 1.0));
        }
    }
    Ok(())
}

/// Bounds for a full query: nested operators are resolved first.
pub fn check_query(model: &Model, graph: &TruncatedGraph, query: &CslQuery, tol: f64) -> Result<Bound, CheckError> {
    let path = &query.path;
    if classify(query) == UntilClass::NonNestedUntil {
        return check_bounded_until(model, graph, path, None, tol);
    }
    let mut table = InnerTable::new();
    resolve_nested(model, graph, &path.left, tol, &mut table)?;
    resolve_nested(model, graph, &path.right, tol, &mut table)?;
    check_bounded_until(model, graph, path, Some(&table), tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionMode {
    Guided,
    Agnostic,
}

impl ExpansionMode {
    pub fn name(self) -> &'static str {
        match self {
            ExpansionMode::Guided => "guided",
            ExpansionMode::Agnostic => "agnostic",
        }
    }
}

/// Which expansion later iterations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionPolicy {
    /// Guided for non-nested untils, agnostic otherwise.
    Auto,
    AgnosticOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub kappa0: f64,
    pub reduction_factor: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub state_cap: usize,
    pub tol: f64,
    pub policy: ExpansionPolicy,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            kappa0: 1e-3,
            reduction_factor: 1000.0,
            epsilon: 1e-3,
            max_iterations: 10,
            state_cap: DEFAULT_STATE_CAP,
            tol: DEFAULT_TOL,
            policy: ExpansionPolicy::Auto,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), CheckError> {
        let bad = |m: String| Err(CheckError::Params(m));
        if !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return bad(format!("kappa must be in (0,1], found {}", self.kappa0));
        }
        if !(self.reduction_factor > 1.0 && self.reduction_factor.is_finite()) {
            return bad(format!("reduction factor must be > 1, found {}", self.reduction_factor));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, found {}", self.epsilon));
        }
        if self.max_iterations < 1 {
            return bad("max iterations must be at least 1".into());
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return bad(format!("transient tolerance must be in (0, 1e-3], found {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    /// Starts at 1.
    pub r: usize,
    pub kappa: f64,
    pub bound: Bound,
    pub build_time: Duration,
    pub analyze_time: Duration,
    pub expansion_mode: ExpansionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    ExactWithinEpsilon,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::ExactWithinEpsilon => "exact-within-epsilon",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub iterations: Vec<Iteration>,
    pub verdict: Verdict,
    pub final_bound: Bound,
}

/// Explores, checks and lowers `kappa` by the reduction factor until the
/// verdict is decided, the gap drops below epsilon, or the iteration budget
/// runs out.
pub fn refine(model: &Model, query: &CslQuery, params: &RefineParams) -> Result<RunReport, CheckError> {
    refine_with(model, query, params, |_| {}).map(|(report, _)| report)
}

/// [`refine`] with a callback invoked after every iteration. Also returns
/// the last finalized graph.
pub fn refine_with(
    model: &Model,
    query: &CslQuery,
    params: &RefineParams,
    mut observe: impl FnMut(&Iteration),
) -> Result<(RunReport, TruncatedGraph), CheckError> {
    params.validate()?;
    let guided = params.policy == ExpansionPolicy::Auto && classify(query) == UntilClass::NonNestedUntil;
    let mut explorer = Explorer::new(model).with_state_cap(params.state_cap);
    let mut iterations = Vec::new();
    let mut graph: Option<TruncatedGraph> = None;
    let mut kappa = params.kappa0;

    loop {
        let r = iterations.len() + 1;
        let mode = if r > 1 && guided { ExpansionMode::Guided } else { ExpansionMode::Agnostic };
        let started = Instant::now();
        let g = match (mode, graph.take()) {
            (ExpansionMode::Guided, Some(prior)) => {
                explorer.expand_property_guided(prior, kappa, &query.path.left, &query.path.right)?
            }
            (_, prior) => explorer.approximate(kappa, prior)?,
        };
        let g = explorer.finalize(g)?;
        let build_time = started.elapsed();
        let started = Instant::now();
        let bound = check_query(model, &g, query, params.tol)?;
        let analyze_time = started.elapsed();

        let it = Iteration {
            r,
            kappa,
            bound,
            build_time,
            analyze_time,
            expansion_mode: mode,
        };
        observe(&it);
        iterations.push(it);

        let verdict = match query.mode {
            QueryMode::Threshold { comparator, target } => match compare_bound(&bound, comparator, target) {
                Comparison::Holds => Some(Verdict::Holds),
                Comparison::Fails => Some(Verdict::Fails),
                Comparison::Unknown => None,
            },
            QueryMode::Exact => None,
        };
        let verdict = verdict.or_else(|| {
            if bound.gap() < params.epsilon {
                Some(match query.mode {
                    QueryMode::Exact => Verdict::ExactWithinEpsilon,
                    QueryMode::Threshold { .. } => Verdict::Inconclusive,
                })
            } else if r >= params.max_iterations {
                Some(Verdict::Inconclusive)
            } else {
                None
            }
        });
        if let Some(verdict) = verdict {
            let report = RunReport {
                iterations,
                verdict,
                final_bound: bound,
            };
            return Ok((report, g));
        }
        graph = Some(g);
        kappa /= params.reduction_factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csl::parse_property;
    use crate::explorer::{approximate, finalize};
    use crate::model::parse_model;

    fn full(m: &Model) -> TruncatedGraph {
        finalize(approximate(m, 1e-12, None).unwrap(), m).unwrap()
    }

    fn bound(b: (f64, f64)) -> Bound {
        Bound {
            pmin: b.0,
            pmax: b.1,
            absorbing_mass: b.1 - b.0,
            states: 0,
            transitions: 0,
        }
    }

    const SINGLE: &str = "ctmc module m x : [0..1] init 0; [] x=0 -> 1 : (x'=1); endmodule";
    const WALK: &str = "ctmc module m x : [0..] init 0; [] true -> 1 : (x'=x+1); [] x>0 -> 1 : (x'=x-1); endmodule";

    #[test]
    fn initial_state_in_psi() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P=? [ true U<=1 true ]", &m).unwrap();
        let b = check_query(&m, &full(&m), &q, 1e-10).unwrap();
        assert_eq!((b.pmin, b.pmax), (1.0, 1.0));
    }

    #[test]
    fn single_exponential_bound() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P=? [ true U<=1 x=1 ]", &m).unwrap();
        let b = check_query(&m, &full(&m), &q, 1e-10).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((b.pmin - exact).abs() < 1e-8 && (b.pmax - exact).abs() < 1e-8);
    }

    #[test]
    fn unsatisfiable_psi_gives_absorbing_mass() {
        let m = parse_model(WALK).unwrap();
        let g = finalize(approximate(&m, 0.1, None).unwrap(), &m).unwrap();
        let q = parse_property("P=? [ true U<=3 false ]", &m).unwrap();
        let b = check_query(&m, &g, &q, 1e-10).unwrap();
        assert_eq!(b.pmin, 0.0);
        assert!(b.pmax > 0.0);
        assert!((b.gap() - b.absorbing_mass).abs() < 1e-12);
    }

    #[test]
    fn failure_states_absorb() {
        // x=1 violates phi, so nothing reaches x=2
        let m = parse_model("ctmc module m x : [0..2] init 0; [] x<2 -> 1 : (x'=x+1); endmodule").unwrap();
        let q = parse_property("P=? [ x!=1 U<=5 x=2 ]", &m).unwrap();
        let b = check_query(&m, &full(&m), &q, 1e-10).unwrap();
        assert_eq!((b.pmin, b.pmax), (0.0, 0.0));
    }

    #[test]
    fn comparisons() {
        assert_eq!(compare_bound(&bound((0.97, 0.99)), Comparator::Ge, 0.5), Comparison::Holds);
        assert_eq!(compare_bound(&bound((0.0, 0.99)), Comparator::Ge, 0.5), Comparison::Unknown);
        assert_eq!(compare_bound(&bound((0.0, 0.3)), Comparator::Ge, 0.5), Comparison::Fails);
        assert_eq!(compare_bound(&bound((0.0, 0.3)), Comparator::Lt, 0.5), Comparison::Holds);
        assert_eq!(compare_bound(&bound((0.5, 0.5)), Comparator::Gt, 0.5), Comparison::Fails);
    }

    const RACE: &str = "ctmc
        module m
          x : [0..2] init 0;
          [] x=0 -> 9 : (x'=1);
          [] x=0 -> 1 : (x'=2);
        endmodule
        label \"a\" = x=1;";

    #[test]
    fn nested_table() {
        let m = parse_model(RACE).unwrap();
        let g = full(&m);
        let q = parse_property("P=? [ P>=0.5 [ true U<=7 a ] U<=1 a ]", &m).unwrap();
        let mut table = InnerTable::new();
        resolve_nested(&m, &g, &q.path.left, 1e-10, &mut table).unwrap();
        let consts = m.const_values();
        let s0 = m.initial_state();
        let p0 = table.get(0, &s0).unwrap();
        let exact = 0.9 * (1.0 - (-70.0f64).exp());
        assert!((p0 - exact).abs() < 1e-9);
        assert!(sat_with(&s0, &q.path.left, &consts, Some(&table)).unwrap());
        let s1 = crate::model::State(vec![1]);
        assert!((table.get(0, &s1).unwrap() - 1.0).abs() < 1e-12);
        let s2 = crate::model::State(vec![2]);
        assert!(!sat_with(&s2, &q.path.left, &consts, Some(&table)).unwrap());
        assert_eq!(table.get(0, &crate::model::State(vec![7])), None);
    }

    #[test]
    fn exact_query_single_iteration() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P=? [ true U<=1 x=1 ]", &m).unwrap();
        let rep = refine(&m, &q, &RefineParams::default()).unwrap();
        assert_eq!(rep.iterations.len(), 1);
        assert_eq!(rep.verdict, Verdict::ExactWithinEpsilon);
    }

    #[test]
    fn threshold_single_iteration() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P>=0.9 [ true U<=4 x=1 ]", &m).unwrap();
        let rep = refine(&m, &q, &RefineParams::default()).unwrap();
        assert_eq!(rep.iterations.len(), 1);
        assert_eq!(rep.verdict, Verdict::Holds);
        let q = parse_property("P<0.5 [ true U<=4 x=1 ]", &m).unwrap();
        assert_eq!(refine(&m, &q, &RefineParams::default()).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn kappa_schedule() {
        let m = parse_model(WALK).unwrap();
        let q = parse_property("P=? [ true U<=20 false ]", &m).unwrap();
        let params = RefineParams {
            epsilon: 1e-300,
            max_iterations: 3,
            ..RefineParams::default()
        };
        let rep = refine(&m, &q, &params).unwrap();
        let kappas: Vec<f64> = rep.iterations.iter().map(|i| i.kappa).collect();
        assert_eq!(kappas, vec![1e-3, 1e-3 / 1000.0, 1e-3 / 1000.0 / 1000.0]);
        assert_eq!(rep.verdict, Verdict::Inconclusive);
        let modes: Vec<ExpansionMode> = rep.iterations.iter().map(|i| i.expansion_mode).collect();
        assert_eq!(modes, vec![ExpansionMode::Agnostic, ExpansionMode::Guided, ExpansionMode::Guided]);
        for w in rep.iterations.windows(2) {
            let (a, b) = (w[0].bound, w[1].bound);
            assert!(b.pmin >= a.pmin - 1e-9 && b.pmax <= a.pmax + 1e-9);
        }
    }

    #[test]
    fn params_are_validated() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P=? [ true U<=1 x=1 ]", &m).unwrap();
        for p in [
            RefineParams { kappa0: 0.0, ..Default::default() },
            RefineParams { reduction_factor: 1.0, ..Default::default() },
            RefineParams { epsilon: 0.0, ..Default::default() },
            RefineParams { max_iterations: 0, ..Default::default() },
        ] {
            assert!(matches!(refine(&m, &q, &p), Err(CheckError::Params(_))));
        }
    }

    #[test]
    fn unfinalized_graph_is_rejected() {
        let m = parse_model(SINGLE).unwrap();
        let q = parse_property("P=? [ true U<=1 x=1 ]", &m).unwrap();
        let g = approximate(&m, 0.5, None).unwrap();
        assert!(check_query(&m, &g, &q, 1e-10).is_err());
    }
}
