use std::path::PathBuf;

use maxweight_ld::oracle::*;
use maxweight_ld::ratefn::{it_exact, Method};
use maxweight_ld::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Record {
    lambda: f64,
    b: [f64; 2],
    t: usize,
    delta: f64,
    oracle: f64,
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn compute() -> Vec<Record> {
    let r = RateRegion::unit_simplex(2);
    let mut out = Vec::new();
    for lambda in [0.1, 0.3] {
        let m = SourceModel::identical(QueueSource::compound_poisson(lambda, 0.01).unwrap(), 2).unwrap();
        for b in [[0.0, 0.0], [1.0, 1.0], [4.0, 2.0], [3.0, 1.0]] {
            for t in [1, 2] {
                let cfg = OracleConfig::for_target(0.05, &b, t, &[1.0, 1.0]).unwrap();
                let oracle = brute_force_it(&m, &r, &b, t, &cfg).unwrap();
                out.push(Record { lambda, b, t, delta: 0.05, oracle });
            }
        }
    }
    out
}

/// Regenerate with `UPDATE_GOLDEN=1 cargo test --test oracle`.
#[test]
fn oracle_values_match_golden_file() {
    let path = golden_path("oracle_i2.json");
    let got = compute();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).expect("golden file missing; run with UPDATE_GOLDEN=1");
    let want: Vec<Record> = serde_json::from_str(&text).unwrap();
    assert_eq!(want.len(), got.len());
    for (w, g) in want.iter().zip(&got) {
        assert_eq!((w.lambda, w.b, w.t), (g.lambda, g.b, g.t));
        assert!((w.oracle - g.oracle).abs() <= 1e-12 * (1.0 + w.oracle.abs()), "{w:?} vs {g:?}");
    }
}

#[test]
fn oracle_agrees_with_the_engine_on_a_coarse_grid() {
    let r = RateRegion::unit_simplex(2);
    for rec in compute() {
        let m = SourceModel::identical(QueueSource::compound_poisson(rec.lambda, 0.01).unwrap(), 2).unwrap();
        let cfg = OracleConfig::for_target(rec.delta, &rec.b, rec.t, &[1.0, 1.0]).unwrap();
        let exact = it_exact(&m, &r, &rec.b, rec.t, Method::BranchConvex).unwrap().value;
        assert!((exact - rec.oracle).abs() <= lipschitz_slack(&m, &cfg, rec.t), "{rec:?} vs {exact}");
    }
}

#[test]
fn three_slot_oracle_bounds_the_engine() {
    let m = SourceModel::identical(QueueSource::compound_poisson(0.3, 0.01).unwrap(), 2).unwrap();
    let r = RateRegion::unit_simplex(2);
    let b = [2.0, 1.0];
    let cfg = OracleConfig::for_target(0.1, &b, 3, &[1.0, 1.0]).unwrap();
    let o = brute_force_it(&m, &r, &b, 3, &cfg).unwrap();
    let exact = it_exact(&m, &r, &b, 3, Method::BranchConvex).unwrap().value;
    assert!((o - exact).abs() <= lipschitz_slack(&m, &cfg, 3), "{o} vs {exact}");
}

#[test]
fn projection_oracle_matches_region_projection() {
    let r = RateRegion::simplex(vec![1.0, 2.0]).unwrap();
    for w in [[0.9, 0.5], [0.2, 1.9], [0.1, 0.1], [0.95, 1.95]] {
        let g = brute_force_projection(&r, &w, 0.002).unwrap();
        let p = r.project(&w).unwrap();
        assert!((g[0] - p[0]).abs() < 4e-3 && (g[1] - p[1]).abs() < 4e-3, "{w:?}: {g:?} vs {p:?}");
    }
}
