//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr
//! (bypassing output capture) and fails when its criterion is not met.

use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truncheck::{run_corpus, CliConfig, Entry, Format};
use truncheck_core::checker::{check_query, refine, ExpansionPolicy, RefineParams, Verdict};
use truncheck_core::csl::{parse_property, property_lines, CslQuery};
use truncheck_core::explorer::{expand_property_guided, finalize, Explorer, TruncatedGraph};
use truncheck_core::model::{parse_model, parse_model_with_constants, Model};
use truncheck_core::numerics::{transient, Distribution};
use truncheck_core::oracle::{enumerate_full, exact_transient, exact_until};

fn report(n: u8, name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {n} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn load_corpus(name: &str, constants: &[(String, String)]) -> (Model, CslQuery) {
    let src = fs::read_to_string(corpus().join(format!("{name}.sm"))).unwrap();
    let m = parse_model_with_constants(&src, constants).unwrap();
    let props = fs::read_to_string(corpus().join(format!("{name}.csl"))).unwrap();
    let q = parse_property(&property_lines(&props)[0], &m).unwrap();
    (m, q)
}

/// A random finite model (at most 200 states, rates in [0.1, 10]) and a
/// random bounded-until property over it.
fn random_instance(rng: &mut ChaCha8Rng) -> (String, String) {
    let two = rng.gen_bool(0.6);
    let (a, b) = if two {
        let a = rng.gen_range(1..=19);
        let b = rng.gen_range(1..=(200 / (a + 1) - 1).max(1));
        (a, b)
    } else {
        (rng.gen_range(1..=199), 0)
    };
    let rate = |rng: &mut ChaCha8Rng| rng.gen_range(0.1..10.0f64);
    let mut cmds = vec![
        format!("[] x<{a} -> {:.6} : (x'=x+1);", rate(rng)),
        format!("[] x>0 -> {:.6} : (x'=x-1);", rate(rng)),
    ];
    if rng.gen_bool(0.4) {
        let k = rng.gen_range(0..=a);
        cmds.push(format!("[] x>={k} -> {:.6} : (x'=0);", rate(rng)));
    }
    if two {
        cmds.push(format!(
            "[] y<{b} & x>0 -> {:.6} : (y'=y+1) & (x'=x-1) + {:.6} : (y'=y+1);",
            rate(rng),
            rate(rng)
        ));
        cmds.push(format!("[] y>0 -> {:.6} : (y'=y-1);", rate(rng)));
        if rng.gen_bool(0.5) {
            cmds.push(format!("[] y=0 & x<{a} -> {:.6} : (x'=x+1);", rate(rng)));
        }
    }
    let y_decl = if two { format!("y : [0..{b}] init 0;") } else { String::new() };
    let src = format!(
        "ctmc\nmodule random\n  x : [0..{a}] init 0;\n  {y_decl}\n  {}\nendmodule\n",
        cmds.join("\n  ")
    );
    let phi = match rng.gen_range(0..3) {
        0 => "true".to_string(),
        1 => format!("x!={}", rng.gen_range(0..=a)),
        _ => format!("x<={}", rng.gen_range(a / 2..=a)),
    };
    let psi = if two && rng.gen_bool(0.5) {
        format!("x>={} & y>={}", rng.gen_range(0..=a), rng.gen_range(1..=b))
    } else {
        format!("x>={}", rng.gen_range(1..=a))
    };
    let t = rng.gen_range(0.1..20.0f64);
    (src, format!("P=? [ {phi} U<={t:.4} {psi} ]"))
}

fn instances() -> Vec<(Model, CslQuery)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    (0..50)
        .map(|_| {
            let (src, prop) = random_instance(&mut rng);
            let m = parse_model(&src).unwrap();
            let q = parse_property(&prop, &m).unwrap();
            (m, q)
        })
        .collect()
}

#[test]
fn criterion_1_oracle_equivalence() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_until = 0.0f64;
    let mut complete = true;
    for (m, q) in instances() {
        let full = enumerate_full(&m, 1000).unwrap();
        assert!(full.len() <= 200);
        let g = finalize(Explorer::new(&m).approximate(f64::MIN_POSITIVE, None).unwrap(), &m).unwrap();
        complete &= g.len() == full.len();
        let t = q.path.time_bound;
        let engine = transient(&g, t, &Distribution::point(g.dimension(), 0), 1e-10).unwrap();
        let exact = exact_transient(&full, t, 1e-10);
        for (i, s) in full.states().iter().enumerate() {
            let j = g.index_of(s).expect("state missing from complete exploration");
            worst = worst.max((engine[j] - exact[i]).abs());
        }
        worst = worst.max(engine[g.absorbing_index().unwrap()]);
        let b = check_query(&m, &g, &q, 1e-10).unwrap();
        let e = exact_until(&m, &full, &q.path, 1e-10).unwrap();
        worst_until = worst_until.max((b.pmin - e).abs()).max((b.pmax - e).abs());
    }
    let elapsed = started.elapsed();
    let pass = complete && worst <= 1e-8 && worst_until <= 1e-8 && elapsed < Duration::from_secs(60);
    report(
        1,
        "oracle equivalence",
        pass,
        format!("50 models, transient max-norm {worst:.2e}, until {worst_until:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_bound_soundness() {
    let mut violations = 0;
    let mut worst_gap_identity = 0.0f64;
    let mut runs = 0;
    for (m, q) in instances() {
        let full = enumerate_full(&m, 1000).unwrap();
        let exact = exact_until(&m, &full, &q.path, 1e-10).unwrap();
        for kappa in [1e-1, 1e-3, 1e-6] {
            let agnostic = finalize(Explorer::new(&m).approximate(kappa, None).unwrap(), &m).unwrap();
            let guided = expand_property_guided(TruncatedGraph::new(&m), &m, kappa, &q.path.left, &q.path.right).unwrap();
            let guided = finalize(guided, &m).unwrap();
            for g in [agnostic, guided] {
                let b = check_query(&m, &g, &q, 1e-10).unwrap();
                runs += 1;
                if exact < b.pmin - 1e-9 || exact > b.pmax + 1e-9 {
                    violations += 1;
                }
                worst_gap_identity = worst_gap_identity.max((b.gap() - b.absorbing_mass).abs());
            }
        }
    }
    report(
        2,
        "bound soundness",
        violations == 0 && worst_gap_identity <= 1e-12,
        format!("{runs} runs, {violations} violations, gap identity error {worst_gap_identity:.2e}"),
    );
}

#[test]
fn criterion_3_mass_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut steps = 0usize;
    let mut worst = 0.0f64;
    for trace in 0..1000 {
        let src = if trace % 2 == 0 {
            random_instance(&mut rng).0
        } else {
            // unbounded variables, so truncation actually happens
            format!(
                "ctmc module walk x : [0..] init 0; y : [0..] init 0;
                 [] true -> {:.4} : (x'=x+1);
                 [] x>0 -> {:.4} : (x'=x-1) + {:.4} : (x'=x-1) & (y'=y+1);
                 [] y>0 -> {:.4} : (y'=y-1);
                 endmodule",
                rng.gen_range(0.1..10.0f64),
                rng.gen_range(0.1..10.0f64),
                rng.gen_range(0.1..10.0f64),
                rng.gen_range(0.1..10.0f64)
            )
        };
        let m = parse_model(&src).unwrap();
        let kappa = 10f64.powf(rng.gen_range(-3.0..-0.3));
        let err = Rc::new(Cell::new(0.0f64));
        let count = Rc::new(Cell::new(0usize));
        let (e, c) = (err.clone(), count.clone());
        let mut ex = Explorer::new(&m).on_step(move |g| {
            e.set(e.get().max((g.total_mass() - 1.0).abs()));
            c.set(c.get() + 1);
        });
        let g = ex.approximate(kappa, None).unwrap();
        if rng.gen_bool(0.5) {
            ex.approximate(kappa / 10.0, Some(g)).unwrap();
        }
        steps += count.get();
        worst = worst.max(err.get());
    }
    report(
        3,
        "mass conservation",
        worst <= 1e-12,
        format!("1000 traces, {steps} expansion steps, max |sum - 1| = {worst:.2e}"),
    );
}

#[test]
fn criterion_4_refinement_loop() {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["jackson", "polling", "pure_birth", "tandem", "toggle"] {
        let (m, q) = load_corpus(name, &[]);
        let started = Instant::now();
        let rep = refine(&m, &q, &RefineParams::default()).unwrap();
        let elapsed = started.elapsed();
        let nested = rep.iterations.windows(2).all(|w| {
            let (a, b) = (w[0].bound, w[1].bound);
            b.pmin >= a.pmin - 1e-9 && b.pmax <= a.pmax + 1e-9
        });
        let decided = matches!(rep.verdict, Verdict::ExactWithinEpsilon | Verdict::Holds | Verdict::Fails);
        pass &= nested && decided && rep.iterations.len() < 10 && elapsed < Duration::from_secs(60);
        let trail: Vec<String> = rep
            .iterations
            .iter()
            .map(|it| format!("[{:.6}, {:.6}]", it.bound.pmin, it.bound.pmax))
            .collect();
        details.push(format!("{name} r={} {}", rep.iterations.len(), trail.join(" > ")));
    }
    report(4, "refinement loop", pass, details.join("; "));
}

#[test]
fn criterion_5_property_guided_reduction() {
    let (m, q) = load_corpus("toggle", &[]);
    let guided = refine(&m, &q, &RefineParams::default()).unwrap();
    let agnostic = refine(
        &m,
        &q,
        &RefineParams {
            policy: ExpansionPolicy::AgnosticOnly,
            ..RefineParams::default()
        },
    )
    .unwrap();
    let reference = refine(
        &m,
        &q,
        &RefineParams {
            epsilon: 1e-8,
            max_iterations: 5,
            policy: ExpansionPolicy::AgnosticOnly,
            ..RefineParams::default()
        },
    )
    .unwrap()
    .final_bound;
    let same_kappas = guided.iterations.len() == agnostic.iterations.len()
        && guided.iterations.iter().zip(&agnostic.iterations).all(|(g, a)| g.kappa == a.kappa);
    let never_larger = guided
        .iterations
        .iter()
        .zip(&agnostic.iterations)
        .all(|(g, a)| g.bound.states <= a.bound.states);
    let (gs, as_) = (guided.final_bound.states, agnostic.final_bound.states);
    let reduction = 100.0 * (as_ as f64 - gs as f64) / as_ as f64;
    let contains = |b: &truncheck_core::checker::Bound| {
        b.pmin <= reference.pmax + 1e-9 && reference.pmin <= b.pmax + 1e-9
    };
    let pass = same_kappas && never_larger && gs < as_ && contains(&guided.final_bound) && contains(&agnostic.final_bound);
    report(
        5,
        "property-guided reduction",
        pass,
        format!(
            "guided {gs} vs agnostic {as_} states at kappa {:.0e}, reduction {reduction:.1}%, converged [{:.9}, {:.9}]",
            guided.iterations.last().unwrap().kappa,
            reference.pmin,
            reference.pmax
        ),
    );
}

#[test]
fn criterion_6_tandem_capacity_255() {
    let started = Instant::now();
    let (m, q) = load_corpus("tandem", &[("c".into(), "255".into())]);
    let rep = refine(&m, &q, &RefineParams::default()).unwrap();
    let b = rep.final_bound;
    let full = enumerate_full(&m, 200_000).unwrap();
    let exact = exact_until(&m, &full, &q.path, 1e-10).unwrap();
    let elapsed = started.elapsed();
    let eps = 1e-3;
    let pass = rep.verdict == Verdict::ExactWithinEpsilon
        && exact >= b.pmin - eps
        && exact <= b.pmax + eps
        && ((b.pmin + b.pmax) / 2.0 - exact).abs() <= eps
        && elapsed < Duration::from_secs(120);
    report(
        6,
        "tandem c=255",
        pass,
        format!(
            "bound [{:.6}, {:.6}] with {} states, oracle {exact:.6} over {} states, {elapsed:.2?}",
            b.pmin,
            b.pmax,
            b.states,
            full.len()
        ),
    );
}

#[test]
fn criterion_7_closed_forms() {
    let single = parse_model("ctmc module m x : [0..1] init 0; [] x=0 -> 1 : (x'=1); endmodule").unwrap();
    let erlang = parse_model("ctmc module m x : [0..2] init 0; [] x<2 -> 1 : (x'=x+1); endmodule").unwrap();
    let value = |m: &Model, target: usize| {
        let g = finalize(Explorer::new(m).approximate(1e-12, None).unwrap(), m).unwrap();
        transient(&g, 1.0, &Distribution::point(g.dimension(), 0), 1e-10).unwrap()[target]
    };
    let e1 = (-1.0f64).exp();
    let d1 = (value(&single, 1) - (1.0 - e1)).abs();
    let d2 = (value(&erlang, 2) - (1.0 - 2.0 * e1)).abs();
    report(
        7,
        "closed forms",
        d1 <= 1e-9 && d2 <= 1e-9,
        format!("single exponential error {d1:.2e}, Erlang-2 error {d2:.2e}"),
    );
}

fn corpus_json() -> (i32, String) {
    let mut config = CliConfig::new(PathBuf::new(), String::new());
    config.format = Format::Json;
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_corpus(&corpus(), &config, &mut out, &mut err);
    let entries = truncheck::parse_corpus_json(&String::from_utf8(out).unwrap()).unwrap();
    let stripped: Vec<Entry> = entries
        .into_iter()
        .map(|e| match e {
            Entry::Report(r) => Entry::Report(r.without_timings()),
            other => other,
        })
        .collect();
    (code, serde_json::to_string_pretty(&stripped).unwrap())
}

#[test]
fn criterion_8_determinism() {
    let (c1, a) = corpus_json();
    let (c2, b) = corpus_json();
    report(
        8,
        "determinism",
        c1 == 0 && c2 == 0 && a == b,
        format!("two corpus runs, {} bytes of JSON each, identical: {}", a.len(), a == b),
    );
}
