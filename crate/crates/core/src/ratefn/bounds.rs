//! Lower and upper bounds on `I_t` for two identical queues.
//!
//! Every path in the feasible set of length `u` has total arrivals on the
//! segment `X(u, b) = { b + v : v >= 0, v^1 + v^2 = u - 1 }`. By convexity
//! and Schur-convexity the cheapest conceivable path runs at constant
//! speed towards the point of that segment nearest the equal line, which
//! for two queues is the Euclidean projection of the origin. The upper
//! bound runs at constant speed towards `b + (u - 1) H(b)`, a path that is
//! feasible whenever `b` is outside `[0,1)^2`.

use crate::error::{Error, Result};
use crate::region::RateRegion;
use crate::source::SourceModel;

use super::{check_target, BoundPair, Scaled};

fn check(model: &SourceModel, region: &RateRegion, b: &[f64]) -> Result<()> {
    check_target(b, region.dim())?;
    if region.dim() != 2 {
        return Err(Error::Unsupported("bounds are for two queues".into()));
    }
    if !model.is_identical() {
        return Err(Error::Unsupported("bounds need identical queues".into()));
    }
    Ok(())
}

fn constant_speed(s: &Scaled, total: [f64; 2], u: usize) -> f64 {
    let uf = u as f64;
    uf * s.slot(&[total[0] / uf, total[1] / uf])
}

/// Projection of the origin onto `X(u, b)` (normalised units).
pub(crate) fn segment_projection(b: [f64; 2], u: usize) -> [f64; 2] {
    let m = (u - 1) as f64;
    let v1 = (0.5 * (m + b[1] - b[0])).clamp(0.0, m);
    [b[0] + v1, b[1] + m - v1]
}

/// The `u` term of the lower bound.
pub fn lower_bound_term(model: &SourceModel, region: &RateRegion, b: &[f64], u: usize) -> Result<f64> {
    check(model, region, b)?;
    let s = Scaled::new(model, region)?;
    let bt = [b[0] / s.cap, b[1] / s.cap];
    Ok(constant_speed(&s, segment_projection(bt, u.max(1)), u.max(1)))
}

/// The `u` term of the upper bound; undefined for `b` in `[0,1)^2`.
pub fn upper_bound_term(model: &SourceModel, region: &RateRegion, b: &[f64], u: usize) -> Result<f64> {
    check(model, region, b)?;
    let s = Scaled::new(model, region)?;
    let bt = [b[0] / s.cap, b[1] / s.cap];
    if bt[0] < 1.0 && bt[1] < 1.0 {
        return Err(Error::UpperBoundUndefined);
    }
    let m = (u.max(1) - 1) as f64;
    let total = if bt[0] >= bt[1] { [bt[0] + m, bt[1]] } else { [bt[0], bt[1] + m] };
    Ok(constant_speed(&s, total, u.max(1)))
}

/// Both bounds minimised over `u = 1..=t`. The upper bound is `+inf` (with
/// timescale 0) when `b` is in `[0,1)^2`.
pub fn it_bounds(model: &SourceModel, region: &RateRegion, b: &[f64], t: usize) -> Result<BoundPair> {
    if t < 1 {
        return Err(Error::Domain("horizon t must be at least 1".into()));
    }
    check(model, region, b)?;
    let mut out = BoundPair { lower: f64::INFINITY, upper: f64::INFINITY, lower_timescale: 0, upper_timescale: 0 };
    for u in 1..=t {
        let lo = lower_bound_term(model, region, b, u)?;
        if lo < out.lower {
            out.lower = lo;
            out.lower_timescale = u;
        }
        match upper_bound_term(model, region, b, u) {
            Ok(up) if up < out.upper => {
                out.upper = up;
                out.upper_timescale = u;
            }
            Ok(_) | Err(Error::UpperBoundUndefined) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
