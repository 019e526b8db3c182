use maxweight_ld::mc::*;
use maxweight_ld::ratefn::{it_exact, Method};
use maxweight_ld::*;

fn single() -> (SourceModel, RateRegion) {
    (
        SourceModel::identical(QueueSource::exp_increment(2.0).unwrap(), 1).unwrap(),
        RateRegion::unit_simplex(1),
    )
}

#[test]
fn same_seed_gives_identical_estimates() {
    let m = SourceModel::identical(QueueSource::compound_poisson(0.3, 0.01).unwrap(), 2).unwrap();
    let r = RateRegion::unit_simplex(2);
    let p = Policy::work_conserving();
    let a = decay_sweep(&m, &p, &r, &[5, 10], 3, &[0.5, 0.5], 5000, 11).unwrap();
    let b = decay_sweep(&m, &p, &r, &[5, 10], 3, &[0.5, 0.5], 5000, 11).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = decay_sweep(&m, &p, &r, &[5, 10], 3, &[0.5, 0.5], 5000, 12).unwrap();
    assert_ne!(a, c);
}

#[test]
fn estimates_are_consistent() {
    let (m, r) = single();
    let e = estimate_overflow(&m, &Policy::work_conserving(), &r, 10, 4, &[0.6], 20_000, 5).unwrap();
    assert!(e.ci95.0 <= e.p_hat && e.p_hat <= e.ci95.1);
    assert!(e.p_hat > 0.0 && e.p_hat < 1.0);
    assert!((e.decay + e.p_hat.ln() / 10.0).abs() < 1e-15);
}

#[test]
fn decay_moves_towards_the_rate_function() {
    let (m, r) = single();
    let reference = it_exact(&m, &r, &[0.65], 4, Method::BranchConvex).unwrap().value;
    let est = decay_sweep(&m, &Policy::work_conserving(), &r, &[10, 20, 40], 4, &[0.65], 100_000, 99).unwrap();
    assert!(est.iter().all(|e| e.decay > reference));
    let trend = trend_toward(&est, reference).unwrap();
    assert!(trend.converging, "{trend:?}");
}

#[test]
fn two_queue_overflow_is_rarer_than_either_queue() {
    let m = SourceModel::identical(QueueSource::compound_poisson(0.3, 0.01).unwrap(), 2).unwrap();
    let r = RateRegion::unit_simplex(2);
    let levels = vec![vec![0.8, 0.8], vec![0.8, 0.0], vec![0.0, 0.8]];
    let e = estimate_overflow_levels(&m, &Policy::work_conserving(), &r, 4, 3, &levels, 20_000, 3).unwrap();
    assert!(e[0].successes <= e[1].successes && e[0].successes <= e[2].successes);
}
