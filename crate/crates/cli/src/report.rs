use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use truncheck_core::checker::{RefineParams, RunReport};

/// Rounds to 12 significant digits so every output format carries the same value.
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// The textual form shared by the text, CSV and JSON outputs.
pub fn num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| x.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub kappa0: f64,
    pub reduction_factor: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub state_cap: usize,
    pub tol: f64,
}

impl From<&RefineParams> for Params {
    fn from(p: &RefineParams) -> Self {
        Params {
            kappa0: p.kappa0,
            reduction_factor: p.reduction_factor,
            epsilon: p.epsilon,
            max_iterations: p.max_iterations,
            state_cap: p.state_cap,
            tol: p.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub r: usize,
    pub kappa: f64,
    pub states: usize,
    pub transitions: usize,
    pub build_s: f64,
    pub analyze_s: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub expansion_mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalBound {
    pub pmin: f64,
    pub pmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub property: String,
    pub params: Params,
    pub iterations: Vec<IterationRow>,
    pub verdict: String,
    #[serde(rename = "final")]
    pub final_bound: FinalBound,
    /// Exact value from full enumeration, when requested and available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
}

impl Report {
    pub fn new(model: &str, property: &str, params: &RefineParams, run: &RunReport) -> Self {
        let iterations = run
            .iterations
            .iter()
            .map(|it| IterationRow {
                r: it.r,
                kappa: sig12(it.kappa),
                states: it.bound.states,
                transitions: it.bound.transitions,
                build_s: sig12(it.build_time.as_secs_f64()),
                analyze_s: sig12(it.analyze_time.as_secs_f64()),
                pmin: sig12(it.bound.pmin),
                pmax: sig12(it.bound.pmax),
                expansion_mode: it.expansion_mode.name().to_string(),
            })
            .collect();
        Report {
            model: model.to_string(),
            property: property.to_string(),
            params: params.into(),
            iterations,
            verdict: run.verdict.name().to_string(),
            final_bound: FinalBound {
                pmin: sig12(run.final_bound.pmin),
                pmax: sig12(run.final_bound.pmax),
            },
            oracle: None,
        }
    }

    /// The same report with all timings set to zero.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for it in &mut r.iterations {
            it.build_s = 0.0;
            it.analyze_s = 0.0;
        }
        r
    }
}

/// A corpus entry that could not be checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Report(Report),
    Failure(Failure),
}

pub const CSV_HEADER: [&str; 11] = [
    "model",
    "property",
    "r",
    "kappa",
    "states",
    "transitions",
    "build_s",
    "analyze_s",
    "pmin",
    "pmax",
    "verdict",
];

pub fn write_csv(out: &mut dyn Write, entries: &[Entry]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for e in entries {
        match e {
            Entry::Report(rep) => {
                for it in &rep.iterations {
                    w.write_record([
                        rep.model.clone(),
                        rep.property.clone(),
                        it.r.to_string(),
                        num(it.kappa),
                        it.states.to_string(),
                        it.transitions.to_string(),
                        num(it.build_s),
                        num(it.analyze_s),
                        num(it.pmin),
                        num(it.pmax),
                        rep.verdict.clone(),
                    ])?;
                }
            }
            Entry::Failure(f) => {
                let mut row = vec![String::new(); CSV_HEADER.len()];
                row[0] = f.model.clone();
                row[1] = f.property.clone().unwrap_or_default();
                row[10] = format!("error: {}", f.error);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()
}

pub fn write_text(out: &mut dyn Write, entries: &[Entry]) -> io::Result<()> {
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        match e {
            Entry::Report(rep) => {
                writeln!(out, "model     {}", rep.model)?;
                writeln!(out, "property  {}", rep.property)?;
                writeln!(
                    out,
                    "{:>3}  {:>10}  {:>10}  {:>12}  {:>10}  {:>10}  {:>16}  {:>16}  mode",
                    "r", "kappa", "states", "transitions", "build_s", "analyze_s", "pmin", "pmax"
                )?;
                for it in &rep.iterations {
                    writeln!(
                        out,
                        "{:>3}  {:>10}  {:>10}  {:>12}  {:>10}  {:>10}  {:>16}  {:>16}  {}",
                        it.r,
                        num(it.kappa),
                        it.states,
                        it.transitions,
                        num(it.build_s),
                        num(it.analyze_s),
                        num(it.pmin),
                        num(it.pmax),
                        it.expansion_mode
                    )?;
                }
                writeln!(out, "verdict   {}", rep.verdict)?;
                writeln!(out, "bound     [{}, {}]", num(rep.final_bound.pmin), num(rep.final_bound.pmax))?;
                if let Some(x) = rep.oracle {
                    writeln!(out, "oracle    {}", num(x))?;
                }
            }
            Entry::Failure(f) => {
                writeln!(out, "model     {}", f.model)?;
                if let Some(p) = &f.property {
                    writeln!(out, "property  {p}")?;
                }
                writeln!(out, "error     {}", f.error)?;
            }
        }
    }
    Ok(())
}
