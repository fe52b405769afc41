//! Truncated state-space construction.
//!
//! Every explored state carries a reachability value `pi_hat`: the
//! probability mass, propagated along jump-chain probabilities, that has
//! arrived at the state but not yet been pushed further. Exploration starts
//! with all mass on the initial state and expands states in BFS order while
//! their value is at least the threshold `kappa`. States left with less
//! stay terminal. [`finalize`] then routes the outflow of terminal states
//! that leaves the explored set into a single absorbing state.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use rustc_hash::FxBuildHasher;
use thiserror::Error;

use crate::csl::{sat_with, SatError, StateFormula};
use crate::model::{Model, ModelError, State, Value};

pub const DEFAULT_STATE_CAP: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state space exceeds the cap of {cap} states")]
    StateCap { cap: usize },
    #[error("property-guided expansion needs non-nested state formulas: {0}")]
    Formula(#[from] SatError),
    #[error("invalid threshold {0}: kappa must be in (0,1]")]
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateStatus {
    /// Not expanded; its unexplored outflow goes to the absorbing state.
    Terminal,
    Expanded,
    /// Terminal because it decides the until formula (satisfies `!phi | psi`).
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphStats {
    /// Includes the absorbing state once finalized.
    pub states: usize,
    pub transitions: usize,
    pub terminal: usize,
    /// Reachability mass still sitting on terminal states.
    pub absorbed_mass_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct TruncatedGraph {
    states: IndexSet<State, FxBuildHasher>,
    /// Outgoing `(target, rate)` per state; one extra row for the absorbing
    /// state once finalized.
    transitions: Vec<Vec<(usize, f64)>>,
    pi_hat: Vec<f64>,
    status: Vec<StateStatus>,
    kappa: f64,
    absorbing: Option<usize>,
}

impl TruncatedGraph {
    /// The unexplored graph: just the initial state, holding all mass.
    pub fn new(model: &Model) -> Self {
        let mut states = IndexSet::with_hasher(FxBuildHasher);
        states.insert(model.initial_state());
        TruncatedGraph {
            states,
            transitions: vec![Vec::new()],
            pi_hat: vec![1.0],
            status: vec![StateStatus::Terminal],
            kappa: 1.0,
            absorbing: None,
        }
    }

    /// Number of model states (the absorbing state is not counted).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of rows of the transition structure, including the absorbing state.
    pub fn dimension(&self) -> usize {
        self.transitions.len()
    }

    pub fn state(&self, i: usize) -> &State {
        &self.states[i]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &State> {
        self.states.iter()
    }

    pub fn index_of(&self, s: &State) -> Option<usize> {
        self.states.get_index_of(s)
    }

    pub fn transitions(&self, i: usize) -> &[(usize, f64)] {
        &self.transitions[i]
    }

    pub fn pi_hat(&self) -> &[f64] {
        &self.pi_hat
    }

    pub fn status(&self, i: usize) -> StateStatus {
        self.status[i]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn absorbing_index(&self) -> Option<usize> {
        self.absorbing
    }

    pub fn is_finalized(&self) -> bool {
        self.absorbing.is_some()
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.transitions[i].iter().map(|&(_, r)| r).sum()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    /// Compensated sum of all reachability values.
    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.pi_hat.iter().copied())
    }

    pub fn stats(&self) -> GraphStats {
        let terminal = (0..self.len()).filter(|&i| self.status[i] != StateStatus::Expanded);
        let (count, mass) = terminal.fold((0, 0.0), |(c, m), i| (c + 1, m + self.pi_hat[i]));
        GraphStats {
            states: self.dimension(),
            transitions: self.transition_count(),
            terminal: count,
            absorbed_mass_estimate: mass,
        }
    }

    /// Drops the absorbing state and every edge that only finalization added.
    fn unfinalize(&mut self) {
        if self.absorbing.take().is_some() {
            self.transitions.pop();
            for (row, st) in self.transitions.iter_mut().zip(&self.status) {
                if *st != StateStatus::Expanded {
                    row.clear();
                }
            }
        }
    }

    fn intern(&mut self, s: State) -> (usize, bool) {
        let (idx, fresh) = self.states.insert_full(s);
        if fresh {
            self.transitions.push(Vec::new());
            self.pi_hat.push(0.0);
            self.status.push(StateStatus::Terminal);
        }
        (idx, fresh)
    }
}

pub fn graph_stats(graph: &TruncatedGraph) -> GraphStats {
    graph.stats()
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Which states may be expanded during a pass.
enum Expansion<'f> {
    Agnostic,
    Guided {
        phi: &'f StateFormula,
        psi: &'f StateFormula,
    },
}

type StepHook<'h> = Box<dyn FnMut(&TruncatedGraph) + 'h>;

/// Exploration driver with a configurable state cap and an optional hook
/// that observes the graph after every single expansion step.
pub struct Explorer<'m> {
    model: &'m Model,
    consts: Vec<Value>,
    state_cap: usize,
    hook: Option<StepHook<'m>>,
}

impl<'m> Explorer<'m> {
    pub fn new(model: &'m Model) -> Self {
        Explorer {
            model,
            consts: model.const_values(),
            state_cap: DEFAULT_STATE_CAP,
            hook: None,
        }
    }

    pub fn with_state_cap(mut self, cap: usize) -> Self {
        self.state_cap = cap;
        self
    }

    pub fn on_step(mut self, hook: impl FnMut(&TruncatedGraph) + 'm) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    /// Property-agnostic exploration at `kappa`, from scratch or continuing
    /// from the terminal states of `prior`.
    pub fn approximate(&mut self, kappa: f64, prior: Option<TruncatedGraph>) -> Result<TruncatedGraph, ExploreError> {
        let mut g = prior.unwrap_or_else(|| TruncatedGraph::new(self.model));
        for st in g.status.iter_mut() {
            if *st == StateStatus::Frozen {
                *st = StateStatus::Terminal;
            }
        }
        self.explore(&mut g, kappa, Expansion::Agnostic)?;
        Ok(g)
    }

    /// Exploration that never expands states deciding `phi U psi`, i.e.
    /// states satisfying `!phi | psi`; only states with `pi_hat > kappa`
    /// are expanded.
    pub fn expand_property_guided(
        &mut self,
        graph: TruncatedGraph,
        kappa: f64,
        phi: &StateFormula,
        psi: &StateFormula,
    ) -> Result<TruncatedGraph, ExploreError> {
        let mut g = graph;
        self.explore(&mut g, kappa, Expansion::Guided { phi, psi })?;
        Ok(g)
    }

    fn decided(&self, s: &State, phi: &StateFormula, psi: &StateFormula) -> Result<bool, ExploreError> {
        Ok(sat_with(s, psi, &self.consts, None)? || !sat_with(s, phi, &self.consts, None)?)
    }

    fn explore(&mut self, g: &mut TruncatedGraph, kappa: f64, mode: Expansion<'_>) -> Result<(), ExploreError> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(ExploreError::Kappa(kappa));
        }
        g.unfinalize();
        g.kappa = kappa;
        let eligible = |m: f64| match mode {
            Expansion::Agnostic => m >= kappa,
            Expansion::Guided { .. } => m > kappa,
        };

        let mut frontier: VecDeque<usize> = VecDeque::new();
        let mut queued: Vec<bool> = vec![false; g.len()];
        for (i, q) in queued.iter_mut().enumerate() {
            if g.status[i] != StateStatus::Terminal {
                continue;
            }
            if let Expansion::Guided { phi, psi } = mode {
                if self.decided(&g.states[i], phi, psi)? {
                    g.status[i] = StateStatus::Frozen;
                    continue;
                }
            }
            if eligible(g.pi_hat[i]) {
                frontier.push_back(i);
                *q = true;
            }
        }

        while let Some(s) = frontier.pop_front() {
            queued[s] = false;
            if g.status[s] != StateStatus::Terminal {
                continue;
            }
            let succ = self.model.successors_with(&g.states[s], &self.consts)?;
            g.status[s] = StateStatus::Expanded;
            if succ.is_empty() {
                // deadlock: mass stays put
                self.step(g);
                continue;
            }

            let exit: f64 = kahan_sum(succ.iter().map(|t| t.rate));
            let mass = g.pi_hat[s];
            let mut pushed = 0.0;
            let mut row = Vec::with_capacity(succ.len());
            let last = succ.len() - 1;
            for (k, t) in succ.into_iter().enumerate() {
                let (idx, fresh) = g.intern(t.target);
                if fresh {
                    queued.push(false);
                    if let Expansion::Guided { phi, psi } = mode {
                        if self.decided(&g.states[idx], phi, psi)? {
                            g.status[idx] = StateStatus::Frozen;
                        }
                    }
                }
                // the last successor takes the remainder so no mass is created or lost
                let share = if k == last { mass - pushed } else { mass * (t.rate / exit) };
                pushed += share;
                g.pi_hat[idx] += share;
                row.push((idx, t.rate));
                if g.status[idx] == StateStatus::Terminal && !queued[idx] && eligible(g.pi_hat[idx]) {
                    frontier.push_back(idx);
                    queued[idx] = true;
                }
            }
            g.pi_hat[s] = 0.0;
            g.transitions[s] = row;
            if g.len() > self.state_cap {
                return Err(ExploreError::StateCap { cap: self.state_cap });
            }
            self.step(g);
        }
        Ok(())
    }

    fn step(&mut self, g: &TruncatedGraph) {
        if let Some(hook) = self.hook.as_mut() {
            hook(g);
        }
    }

    /// Adds the absorbing state. Terminal states keep their edges into the
    /// explored set; the summed rate of all other successors becomes one
    /// edge to the absorbing state. Frozen states get no outgoing edges.
    pub fn finalize(&self, graph: TruncatedGraph) -> Result<TruncatedGraph, ExploreError> {
        let mut g = graph;
        g.unfinalize();
        let abs = g.len();
        for i in 0..abs {
            if g.status[i] != StateStatus::Terminal {
                continue;
            }
            let succ = self.model.successors_with(&g.states[i], &self.consts)?;
            let mut row = Vec::with_capacity(succ.len());
            let mut leaving = Vec::new();
            for t in succ {
                match g.states.get_index_of(&t.target) {
                    Some(j) => row.push((j, t.rate)),
                    None => leaving.push(t.rate),
                }
            }
            if !leaving.is_empty() {
                row.push((abs, kahan_sum(leaving.into_iter())));
            }
            g.transitions[i] = row;
        }
        g.transitions.push(Vec::new());
        g.absorbing = Some(abs);
        Ok(g)
    }
}

pub fn approximate(model: &Model, kappa: f64, prior: Option<TruncatedGraph>) -> Result<TruncatedGraph, ExploreError> {
    Explorer::new(model).approximate(kappa, prior)
}

pub fn expand_property_guided(
    graph: TruncatedGraph,
    model: &Model,
    kappa: f64,
    phi: &StateFormula,
    psi: &StateFormula,
) -> Result<TruncatedGraph, ExploreError> {
    Explorer::new(model).expand_property_guided(graph, kappa, phi, psi)
}

pub fn finalize(graph: TruncatedGraph, model: &Model) -> Result<TruncatedGraph, ExploreError> {
    Explorer::new(model).finalize(graph)
}

/// Writes `index TAB valuation TAB pi_hat TAB flags` per state to `path` and
/// `src TAB dst TAB rate` per transition to the sibling `.tra` file.
pub fn export(graph: &TruncatedGraph, path: &Path) -> io::Result<PathBuf> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, s) in graph.states.iter().enumerate() {
        let valuation: Vec<String> = s.values().iter().map(i64::to_string).collect();
        let flag = match graph.status[i] {
            StateStatus::Expanded => "E",
            StateStatus::Terminal | StateStatus::Frozen => "T",
        };
        writeln!(out, "{i}\t{}\t{:e}\t{flag}", valuation.join(","), graph.pi_hat[i])?;
    }
    if let Some(a) = graph.absorbing {
        writeln!(out, "{a}\t\t0e0\tA")?;
    }
    out.flush()?;

    let tra = path.with_extension("tra");
    let mut out = BufWriter::new(File::create(&tra)?);
    for (i, row) in graph.transitions.iter().enumerate() {
        for &(j, r) in row {
            writeln!(out, "{i}\t{j}\t{r:e}")?;
        }
    }
    out.flush()?;
    Ok(tra)
}
