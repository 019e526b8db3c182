//! Rate regions: the set of service-rate vectors the server may use in one
//! slot.
//!
//! Two shapes are supported. The *simplex* region
//! `{ r >= 0 : sum_k r^k / C^k <= 1 }` is the one for which the
//! infinite-horizon results hold. A *vertex polytope* is the
//! coordinate-convex hull (down-closure) of a finite vertex list; it is
//! used for finite-horizon experiments with general regions.

use serde::{Deserialize, Serialize};
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{dot, project_probability_simplex};
use crate::{RateVector, TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Simplex,
    VertexPolytope,
}

/// A compact, convex, coordinate-convex rate region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRegion {
    kind: RegionKind,
    capacities: Vec<f64>,
    vertices: Vec<Vec<f64>>,
}

const POLY_MAX_ITERS: usize = 50_000;
const POLY_OBJ_TOL: f64 = 1e-8;

impl RateRegion {
    /// Simplex region with per-queue maximum rates `capacities`.
    pub fn simplex(capacities: Vec<f64>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::InvalidRegion("at least one queue required".into()));
        }
        if capacities.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidRegion("capacities must be positive and finite".into()));
        }
        Ok(Self { kind: RegionKind::Simplex, capacities, vertices: Vec::new() })
    }

    /// Unit simplex in `k` dimensions (all capacities 1).
    pub fn unit_simplex(k: usize) -> Self {
        Self::simplex(vec![1.0; k]).expect("k > 0")
    }

    /// Down-closure of the convex hull of `vertices`.
    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let k = vertices.first().map(Vec::len).unwrap_or(0);
        if k == 0 {
            return Err(Error::InvalidRegion("vertex list is empty".into()));
        }
        for v in &vertices {
            check_dim(k, v.len())?;
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidRegion("vertices must be nonnegative".into()));
            }
        }
        let capacities: Vec<f64> = (0..k)
            .map(|j| vertices.iter().map(|v| v[j]).fold(0.0, f64::max))
            .collect();
        if capacities.iter().any(|c| *c <= 0.0) {
            return Err(Error::InvalidRegion("every queue needs a positive maximum rate".into()));
        }
        Ok(Self { kind: RegionKind::VertexPolytope, capacities, vertices })
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.capacities.len()
    }

    /// Per-queue maximum rates `C^k`.
    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn is_simplex(&self) -> bool {
        self.kind == RegionKind::Simplex
    }

    /// True when the simplex has unit capacities.
    pub fn is_unit_simplex(&self) -> bool {
        self.is_simplex() && self.capacities.iter().all(|&c| c == 1.0)
    }

    /// Extreme points of the region that can maximise a strictly positive
    /// weight: `C^k e_k` for the simplex, the vertex list otherwise.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self.kind {
            RegionKind::Simplex => (0..self.dim())
                .map(|k| {
                    let mut v = vec![0.0; self.dim()];
                    v[k] = self.capacities[k];
                    v
                })
                .collect(),
            RegionKind::VertexPolytope => self.vertices.clone(),
        }
    }

    pub fn contains(&self, r: &[f64]) -> Result<bool> {
        check_dim(self.dim(), r.len())?;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("rate vector must be finite".into()));
        }
        if r.iter().any(|&x| x < -TOL) {
            return Ok(false);
        }
        match self.kind {
            RegionKind::Simplex => Ok(self.hat(r) <= 1.0 + TOL),
            RegionKind::VertexPolytope => {
                let level = 0.5 * (TOL * self.scale()).powi(2);
                let (_, dist2) = self.polytope_projection(r, Some(level));
                Ok(dist2.sqrt() <= TOL * self.scale())
            }
        }
    }

    /// Normalised sum `sum_k x^k / C^k`.
    pub fn normalized_sum(&self, x: &[f64]) -> Result<f64> {
        if !self.is_simplex() {
            return Err(Error::UnsupportedRegion);
        }
        check_dim(self.dim(), x.len())?;
        Ok(self.hat(x))
    }

    pub(crate) fn hat(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.capacities).map(|(a, c)| a / c).sum()
    }

    /// Whether `w` lies in the half-open box `prod_k [0, C^k)`.
    pub fn in_box(&self, w: &[f64]) -> bool {
        w.iter().zip(&self.capacities).all(|(x, c)| *x < *c)
    }

    /// Euclidean projection of `w >= 0` onto the region.
    pub fn project(&self, w: &[f64]) -> Result<RateVector> {
        check_dim(self.dim(), w.len())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("workload must be finite".into()));
        }
        match self.kind {
            RegionKind::Simplex => Ok(self.simplex_projection(w)),
            RegionKind::VertexPolytope => Ok(self.polytope_projection(w, None).0),
        }
    }

    fn simplex_projection(&self, w: &[f64]) -> RateVector {
        let w: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
        if self.hat(&w) <= 1.0 {
            return w;
        }
        // Minimise |r - w|^2 over {r >= 0, sum r_k / C_k = 1}:
        // r_k = max(w_k - tau / C_k, 0) with breakpoints tau_k = w_k C_k.
        let caps = &self.capacities;
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&i, &j| (w[j] * caps[j]).partial_cmp(&(w[i] * caps[i])).unwrap());
        let mut sum_u = 0.0;
        let mut sum_c = 0.0;
        let mut tau = 0.0;
        for (pos, &k) in order.iter().enumerate() {
            sum_u += w[k] / caps[k];
            sum_c += 1.0 / (caps[k] * caps[k]);
            let candidate = (sum_u - 1.0) / sum_c;
            let next_break = order.get(pos + 1).map(|&j| w[j] * caps[j]).unwrap_or(f64::NEG_INFINITY);
            if candidate >= next_break {
                tau = candidate;
                break;
            }
        }
        w.iter().zip(caps).map(|(x, c)| (x - tau / c).max(0.0)).collect()
    }

    fn scale(&self) -> f64 {
        self.capacities.iter().fold(1.0, |a: f64, b| a.max(*b))
    }

    /// Projection onto the down-closure of `conv(V)`:
    /// `min_{lambda in simplex} 1/2 |max(w - V lambda, 0)|^2`, then
    /// `y = min(w, V lambda)`. Accelerated projected gradient with restart,
    /// stopped by the Frank-Wolfe duality gap.
    ///
    /// With `member_level = Some(f)` the loop also stops as soon as the
    /// objective is certified below or above `f`.
    fn polytope_projection(&self, w: &[f64], member_level: Option<f64>) -> (RateVector, f64) {
        let w: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
        let verts = &self.vertices;
        let m = verts.len();
        let k = w.len();
        let combo = |lam: &[f64]| -> Vec<f64> {
            (0..k).map(|j| (0..m).map(|i| lam[i] * verts[i][j]).sum()).collect()
        };
        let objective = |lam: &[f64]| -> (f64, Vec<f64>) {
            let c = combo(lam);
            let resid: Vec<f64> = w.iter().zip(&c).map(|(a, b)| (a - b).max(0.0)).collect();
            let val = 0.5 * dot(&resid, &resid);
            let grad = (0..m).map(|i| -dot(&verts[i], &resid)).collect();
            (val, grad)
        };
        let lip: f64 = verts.iter().map(|v| dot(v, v)).sum::<f64>().max(1e-12);
        let step = 1.0 / lip;
        let gap_tol = POLY_OBJ_TOL * POLY_OBJ_TOL * self.scale().powi(2);

        let mut lam = vec![1.0 / m as f64; m];
        let mut y = lam.clone();
        let mut t: f64 = 1.0;
        let (mut best_val, mut best_grad) = objective(&lam);
        let mut best_lam = lam.clone();
        let mut iter = 0usize;
        for _ in 0..POLY_MAX_ITERS {
            let gap = dot(&best_grad, &best_lam) - best_grad.iter().cloned().fold(f64::INFINITY, f64::min);
            if best_val <= 0.0 || gap <= gap_tol + 1e-14 * best_val {
                break;
            }
            if let Some(level) = member_level {
                if best_val <= level || best_val - gap > level {
                    break;
                }
            }
            iter += 1;
            if iter.is_multiple_of(64) && best_val > 0.0 {
                if let Some(lam_exact) = self.polish(&w, &best_lam) {
                    let (val, grad) = objective(&lam_exact);
                    let gap = dot(&grad, &lam_exact) - grad.iter().cloned().fold(f64::INFINITY, f64::min);
                    if val <= best_val + 1e-15 * self.scale().powi(2) && gap <= 1e-13 * self.scale().powi(2) {
                        best_lam = lam_exact;
                        break;
                    }
                }
            }
            let (_, g) = objective(&y);
            let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let next = project_probability_simplex(&trial);
            let (val_next, grad_next) = objective(&next);
            if val_next > best_val {
                // adaptive restart from the best iterate
                y = best_lam.clone();
                lam = best_lam.clone();
                t = 1.0;
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = next.iter().zip(&lam).map(|(n, l)| n + (t - 1.0) / t_next * (n - l)).collect();
            lam = next;
            t = t_next;
            best_val = val_next;
            best_grad = grad_next;
            best_lam = lam.clone();
        }
        let c = combo(&best_lam);
        let y: Vec<f64> = w.iter().zip(&c).map(|(a, b)| a.min(*b).max(0.0)).collect();
        let dist2 = w.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        (y, dist2)
    }

    /// Exact solve on the active set guessed from `lam`: the residual
    /// coordinates `S` and the support of `lam` fix an equality-constrained
    /// least-squares problem.
    fn polish(&self, w: &[f64], lam: &[f64]) -> Option<Vec<f64>> {
        let verts = &self.vertices;
        let k = w.len();
        let c: Vec<f64> = (0..k).map(|j| verts.iter().zip(lam).map(|(v, l)| l * v[j]).sum()).collect();
        let res_tol = 1e-7 * self.scale();
        let rows: Vec<usize> = (0..k).filter(|&j| w[j] - c[j] > res_tol).collect();
        let cols: Vec<usize> = (0..lam.len()).filter(|&i| lam[i] > 1e-9).collect();
        if rows.is_empty() || cols.is_empty() {
            return None;
        }
        let n = cols.len();
        let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (a, &i) in cols.iter().enumerate() {
            for (b, &l) in cols.iter().enumerate() {
                kkt[(a, b)] = rows.iter().map(|&j| verts[i][j] * verts[l][j]).sum();
            }
            kkt[(a, n)] = 1.0;
            kkt[(n, a)] = 1.0;
            rhs[a] = rows.iter().map(|&j| verts[i][j] * w[j]).sum();
        }
        rhs[n] = 1.0;
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
        let mut out = vec![0.0; lam.len()];
        for (a, &i) in cols.iter().enumerate() {
            if sol[a] < -1e-12 {
                return None;
            }
            out[i] = sol[a].max(0.0);
        }
        let total: f64 = out.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(out.into_iter().map(|x| x / total).collect())
    }

    /// All extreme points of `argmax_{R in region} <R, w>`.
    ///
    /// For `w = 0` the whole region is optimal and every vertex (including
    /// the origin, listed last) is returned.
    pub fn max_weight_set(&self, w: &[f64]) -> Result<Vec<RateVector>> {
        check_dim(self.dim(), w.len())?;
        let verts = self.vertices();
        let scores: Vec<f64> = verts.iter().map(|v| dot(v, w)).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let zero_coords: Vec<usize> = (0..w.len()).filter(|&j| w[j] <= 0.0).collect();
        let mut out: Vec<RateVector> = Vec::new();
        let push = |v: RateVector, out: &mut Vec<RateVector>| {
            if !out.iter().any(|u| u == &v) {
                out.push(v);
            }
        };
        for (v, s) in verts.iter().zip(&scores) {
            if best - s <= TOL * best.abs() {
                push(v.clone(), &mut out);
            }
        }
        // Lowering coordinates with zero weight keeps the inner product.
        let maximisers = out.clone();
        for v in &maximisers {
            let active: Vec<usize> = zero_coords.iter().copied().filter(|&j| v[j] > 0.0).collect();
            for mask in 1..(1usize << active.len()) {
                let mut u = v.clone();
                for (bit, &j) in active.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        u[j] = 0.0;
                    }
                }
                push(u, &mut out);
            }
        }
        Ok(out)
    }
}
