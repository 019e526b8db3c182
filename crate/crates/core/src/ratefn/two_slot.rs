//! `I_2` for two queues by direct decomposition of the two-slot feasible
//! set into three convex pieces, each reduced to one-dimensional convex
//! searches. Independent of the branch enumeration in `branch`.

use crate::dynamics::ArrivalPath;
use crate::error::{Error, Result};
use crate::numeric::golden_min;
use crate::region::RateRegion;
use crate::source::SourceModel;

use super::{check_target, Method, RateFnOutcome, Scaled};

const XTOL: f64 = 1e-11;

struct Candidate {
    value: f64,
    /// Normalised `(a_2, a_1)`.
    older: [f64; 2],
    newer: [f64; 2],
    service: [f64; 2],
}

/// `I_2(b)` for two queues on a simplex with equal capacities.
pub fn exact_i2(model: &SourceModel, region: &RateRegion, b: &[f64]) -> Result<RateFnOutcome> {
    check_target(b, region.dim())?;
    if region.dim() != 2 {
        return Err(Error::Unsupported("the two-slot decomposition is for two queues".into()));
    }
    let s = Scaled::new(model, region)?;
    let bt = [b[0] / s.cap, b[1] / s.cap];
    let one = s.slot(&bt);
    let mut best: Option<Candidate> = None;
    let mut consider = |c: Option<Candidate>| {
        if let Some(c) = c {
            let bar = best.as_ref().map(|x| x.value).unwrap_or(one);
            if c.value.is_finite() && c.value < bar - 1e-12 * (1.0 + bar.abs()) {
                best = Some(c);
            }
        }
    };
    consider(serve_one(&s, bt, 0));
    consider(serve_one(&s, bt, 1));
    consider(project(&s, bt));
    match best {
        None => super::one_slot_outcome(model, b, Method::ClosedFormI2),
        Some(c) => {
            let phys = |v: [f64; 2]| vec![v[0] * s.cap, v[1] * s.cap];
            Ok(RateFnOutcome {
                value: c.value,
                timescale: 2,
                optimal_path: ArrivalPath::from_chronological(vec![phys(c.older), phys(c.newer)])?,
                branch_sequence: vec![phys(c.service)],
                method: Method::ClosedFormI2,
                truncated: false,
            })
        }
    }
}

/// Serving queue `q` at the intermediate workload: `a_2^q >= a_2^o`,
/// `a_2^q >= 1` and `a_2 + a_1 = b + e_q`.
fn serve_one(s: &Scaled, b: [f64; 2], q: usize) -> Option<Candidate> {
    let o = 1 - q;
    let fq = |x: f64| s.f(q, x);
    let fo = |x: f64| s.f(o, x);
    // p = a_2^q on [1, b^q + 1], r = a_2^o on [0, b^o].
    let g1 = |p: f64| fq(p) + fq(b[q] + 1.0 - p);
    let g2 = |r: f64| fo(r) + fo(b[o] - r);
    let (p, vp) = golden_min(g1, 1.0, b[q] + 1.0, XTOL);
    let (r, vr) = golden_min(g2, 0.0, b[o], XTOL);
    let (p, r, value) = if p >= r {
        (p, r, vp + vr)
    } else {
        // The coupling p >= r is active.
        let hi = (b[q] + 1.0).min(b[o]);
        if hi < 1.0 {
            return None;
        }
        let (z, v) = golden_min(|z| g1(z) + g2(z), 1.0, hi, XTOL);
        (z, z, v)
    };
    let mut older = [0.0; 2];
    let mut newer = [0.0; 2];
    older[q] = p;
    older[o] = r;
    newer[q] = (b[q] + 1.0 - p).max(0.0);
    newer[o] = (b[o] - r).max(0.0);
    let mut service = [0.0; 2];
    service[q] = 1.0;
    Some(Candidate { value, older, newer, service })
}

/// Projection at the intermediate workload: `a_2` in `[0,1]^2` with
/// `a_2^1 + a_2^2 = s >= 1`, leaving `d (1, 1)` with `d = (s - 1) / 2`.
fn project(sc: &Scaled, b: [f64; 2]) -> Option<Candidate> {
    let hi = 2.0f64.min(1.0 + 2.0 * b[0].min(b[1]));
    if hi < 1.0 {
        return None;
    }
    let inner = |s: f64| golden_min(|p| sc.f(0, p) + sc.f(1, s - p), s - 1.0, 1.0, XTOL);
    let outer = |s: f64| {
        let d = 0.5 * (s - 1.0);
        inner(s).1 + sc.f(0, b[0] - d) + sc.f(1, b[1] - d)
    };
    let (s, value) = golden_min(outer, 1.0, hi, XTOL);
    let (p, _) = inner(s);
    let d = 0.5 * (s - 1.0);
    let older = [p, s - p];
    Some(Candidate {
        value,
        older,
        newer: [(b[0] - d).max(0.0), (b[1] - d).max(0.0)],
        service: [(older[0] - d).max(0.0), (older[1] - d).max(0.0)],
    })
}
