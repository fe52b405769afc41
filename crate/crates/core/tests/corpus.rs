use std::fs;
use std::path::PathBuf;

use truncheck_core::checker::{check_query, refine, RefineParams, Verdict};
use truncheck_core::csl::{parse_property, property_lines, CslQuery};
use truncheck_core::explorer::{approximate, finalize};
use truncheck_core::model::{parse_model, Model};
use truncheck_core::oracle::{enumerate_full, exact_until};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn load(name: &str) -> (Model, CslQuery) {
    let dir = corpus_dir();
    let model = parse_model(&fs::read_to_string(dir.join(format!("{name}.sm"))).unwrap()).unwrap();
    let text = fs::read_to_string(dir.join(format!("{name}.csl"))).unwrap();
    let query = parse_property(&property_lines(&text)[0], &model).unwrap();
    (model, query)
}

const NAMES: [&str; 5] = ["jackson", "polling", "pure_birth", "tandem", "toggle"];

#[test]
fn every_corpus_model_parses_and_converges() {
    for name in NAMES {
        let (m, q) = load(name);
        let rep = refine(&m, &q, &RefineParams::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::ExactWithinEpsilon, "{name}");
        assert!(rep.iterations.len() < 10, "{name}");
        for w in rep.iterations.windows(2) {
            let (a, b) = (w[0].bound, w[1].bound);
            assert!(b.pmin >= a.pmin - 1e-9 && b.pmax <= a.pmax + 1e-9, "{name}: {a:?} then {b:?}");
        }
    }
}

#[test]
fn smaller_kappa_explores_a_superset() {
    for name in NAMES {
        let (m, _) = load(name);
        let coarse = approximate(&m, 1e-2, None).unwrap();
        let fine = approximate(&m, 1e-4, None).unwrap();
        assert!(coarse.states().all(|s| fine.index_of(s).is_some()), "{name}");
        let continued = approximate(&m, 1e-4, Some(coarse.clone())).unwrap();
        assert!(coarse.states().all(|s| continued.index_of(s).is_some()), "{name}");
        assert!((continued.total_mass() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn finite_corpus_models_bracket_the_oracle() {
    for name in ["polling", "tandem"] {
        let (m, q) = load(name);
        let full = enumerate_full(&m, 100_000).unwrap();
        let exact = exact_until(&m, &full, &q.path, 1e-10).unwrap();
        for kappa in [1e-1, 1e-3, 1e-6] {
            let g = finalize(approximate(&m, kappa, None).unwrap(), &m).unwrap();
            let b = check_query(&m, &g, &q, 1e-10).unwrap();
            assert!(b.pmin - 1e-9 <= exact && exact <= b.pmax + 1e-9, "{name} at {kappa}: {exact} vs {b:?}");
        }
    }
}

#[test]
fn complete_exploration_closes_the_gap() {
    let (m, q) = load("polling");
    let full = enumerate_full(&m, 100_000).unwrap();
    let g = finalize(approximate(&m, f64::MIN_POSITIVE, None).unwrap(), &m).unwrap();
    assert_eq!(g.len(), full.len());
    let b = check_query(&m, &g, &q, 1e-10).unwrap();
    assert!(b.gap() <= 1e-10);
}
