//! Arrival models: per-slot cumulants, their convex conjugates and samplers
//! for the many-sources process (the average of `L` i.i.d. copies).

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::dynamics::ArrivalPath;
use crate::error::{check_dim, Error, Result};
use crate::numeric::golden_min;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Sampler = Arc<dyn Fn(u64, &mut ChaCha8Rng) -> f64 + Send + Sync>;

/// A user-supplied model: conjugate, its zero, and optionally a sampler for
/// the `L`-averaged slot increment.
#[derive(Clone)]
pub struct CustomSource {
    pub name: String,
    pub conjugate: ScalarFn,
    pub mean: f64,
    pub process_mean: f64,
    pub sampler: Option<Sampler>,
}

impl fmt::Debug for CustomSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSource").field("name", &self.name).field("mean", &self.mean).finish()
    }
}

#[derive(Debug, Clone)]
pub enum QueueSource {
    /// Compound Poisson arrivals (rate `lambda` per slot) with exponential
    /// work per packet (mean `1 / mu`), using the conjugate
    /// `mu (sqrt(x) - sqrt(lambda))^2`, which vanishes at `x = lambda`.
    CompoundPoissonExp { lambda: f64, mu: f64 },
    /// Exponential increments with rate `nu` (mean `1 / nu`).
    ExpIncrement { nu: f64 },
    /// Constant increment `m` every slot.
    Deterministic { m: f64 },
    Custom(CustomSource),
}

impl QueueSource {
    pub fn compound_poisson(lambda: f64, mu: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        check_positive("mu", mu)?;
        Ok(Self::CompoundPoissonExp { lambda, mu })
    }

    pub fn exp_increment(nu: f64) -> Result<Self> {
        check_positive("nu", nu)?;
        Ok(Self::ExpIncrement { nu })
    }

    pub fn deterministic(m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidSource(format!("m must be nonnegative and finite, got {m}")));
        }
        Ok(Self::Deterministic { m })
    }

    /// The conjugate of the compound-Poisson-exponential cumulant
    /// `lambda theta / (mu - theta)`, i.e. `(sqrt(mu x) - sqrt(lambda))^2`,
    /// which vanishes at the process mean `lambda / mu`.
    pub fn compound_poisson_derived(lambda: f64, mu: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        check_positive("mu", mu)?;
        Ok(Self::Custom(CustomSource {
            name: "compound_poisson_derived".into(),
            conjugate: Arc::new(move |x| {
                let d = (mu * x).sqrt() - lambda.sqrt();
                d * d
            }),
            mean: lambda / mu,
            process_mean: lambda / mu,
            sampler: Some(Arc::new(move |l, rng| sample_compound_poisson(lambda, mu, l, rng))),
        }))
    }

    pub fn custom(name: &str, conjugate: ScalarFn, mean: f64, sampler: Option<Sampler>) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::InvalidSource(format!("mean must be nonnegative and finite, got {mean}")));
        }
        Ok(Self::Custom(CustomSource { name: name.into(), conjugate, mean, process_mean: mean, sampler }))
    }

    /// `Lambda*(x)`; `+inf` outside the effective domain.
    pub fn conjugate(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::Domain(format!("rate function evaluated at {x}")));
        }
        Ok(self.conjugate_unchecked(x))
    }

    pub(crate) fn conjugate_unchecked(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Self::CompoundPoissonExp { lambda, mu } => {
                let d = x.sqrt() - lambda.sqrt();
                mu * d * d
            }
            Self::ExpIncrement { nu } => {
                if x <= 0.0 {
                    f64::INFINITY
                } else {
                    nu * x - 1.0 - (nu * x).ln()
                }
            }
            Self::Deterministic { m } => {
                if x == *m {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Custom(c) => (c.conjugate)(x),
        }
    }

    /// First and second derivatives of the conjugate at `x > 0`.
    pub fn conjugate_derivatives(&self, x: f64) -> (f64, f64) {
        match self {
            Self::CompoundPoissonExp { lambda, mu } => {
                let s = x.sqrt();
                (mu * (1.0 - lambda.sqrt() / s), 0.5 * mu * lambda.sqrt() / (x * s))
            }
            Self::ExpIncrement { nu } => (nu - 1.0 / x, 1.0 / (x * x)),
            Self::Deterministic { .. } => (f64::NAN, f64::NAN),
            Self::Custom(c) => {
                let h = 1e-5 * (1.0 + x.abs());
                let h = h.min(0.5 * x.max(f64::MIN_POSITIVE));
                let f = |y: f64| (c.conjugate)(y);
                let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
                ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
            }
        }
    }

    /// Whether the conjugate is finite and twice differentiable on `(0, inf)`.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::Deterministic { .. })
    }

    /// The zero of the conjugate.
    pub fn mean(&self) -> f64 {
        match self {
            Self::CompoundPoissonExp { lambda, .. } => *lambda,
            Self::ExpIncrement { nu } => 1.0 / nu,
            Self::Deterministic { m } => *m,
            Self::Custom(c) => c.mean,
        }
    }

    /// Expected value of one sampled slot.
    pub fn process_mean(&self) -> f64 {
        match self {
            Self::CompoundPoissonExp { lambda, mu } => lambda / mu,
            Self::Custom(c) => c.process_mean,
            _ => self.mean(),
        }
    }

    /// Per-slot cumulant `Lambda(theta)` where a closed form is known.
    pub fn cumulant(&self, theta: f64) -> Option<f64> {
        match self {
            Self::CompoundPoissonExp { lambda, mu } => {
                Some(if theta < *mu { lambda * theta / (mu - theta) } else { f64::INFINITY })
            }
            Self::ExpIncrement { nu } => Some(if theta < *nu { -(1.0 - theta / nu).ln() } else { f64::INFINITY }),
            Self::Deterministic { m } => Some(m * theta),
            Self::Custom(_) => None,
        }
    }

    /// One slot of the average of `l` independent copies.
    pub fn sample(&self, l: u64, rng: &mut ChaCha8Rng) -> Result<f64> {
        if l == 0 {
            return Err(Error::Domain("L must be at least 1".into()));
        }
        match self {
            Self::CompoundPoissonExp { lambda, mu } => Ok(sample_compound_poisson(*lambda, *mu, l, rng)),
            Self::ExpIncrement { nu } => {
                let g = Gamma::new(l as f64, 1.0 / (l as f64 * nu)).expect("positive gamma parameters");
                Ok(g.sample(rng))
            }
            Self::Deterministic { m } => Ok(*m),
            Self::Custom(c) => match &c.sampler {
                Some(s) => Ok(s(l, rng)),
                None => Err(Error::Unsupported(format!("source {} has no sampler", c.name))),
            },
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSource(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `N ~ Poisson(L lambda)` packets with total work `Gamma(N, rate mu)`,
/// divided by `L`.
fn sample_compound_poisson(lambda: f64, mu: f64, l: u64, rng: &mut ChaCha8Rng) -> f64 {
    let mean_count = l as f64 * lambda;
    let n: f64 = Poisson::new(mean_count).expect("positive Poisson mean").sample(rng);
    if n < 0.5 {
        return 0.0;
    }
    let total: f64 = Gamma::new(n, 1.0 / mu).expect("positive gamma parameters").sample(rng);
    total / l as f64
}

/// Counter-based seeding: every `(replicate, slot, queue)` triple owns an
/// independent generator, so draws do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// A child stream, e.g. one per swept parameter value.
    pub fn derive(&self, tag: u64) -> Self {
        Self { key: splitmix(self.key ^ splitmix(tag.wrapping_add(0x5bd1_e995))) }
    }

    pub fn rng(&self, replicate: u64, slot: u64, queue: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let words = [
            splitmix(self.key),
            splitmix(self.key ^ replicate.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            splitmix(slot ^ 0xd1b5_4a32_d192_ed03),
            splitmix(queue ^ 0x8cb9_2ba7_2f3d_8dd7),
        ];
        for (chunk, w) in seed.chunks_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(replicate);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mutually independent queues.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub queues: Vec<QueueSource>,
}

impl SourceModel {
    pub fn new(queues: Vec<QueueSource>) -> Result<Self> {
        if queues.is_empty() {
            return Err(Error::InvalidSource("at least one queue is required".into()));
        }
        Ok(Self { queues })
    }

    /// `k` copies of the same source.
    pub fn identical(source: QueueSource, k: usize) -> Result<Self> {
        Self::new(vec![source; k])
    }

    pub fn dim(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, k: usize) -> &QueueSource {
        &self.queues[k]
    }

    pub fn mean(&self) -> Vec<f64> {
        self.queues.iter().map(QueueSource::mean).collect()
    }

    pub fn process_mean(&self) -> Vec<f64> {
        self.queues.iter().map(QueueSource::process_mean).collect()
    }

    pub fn rate_fn_point(&self, k: usize, x: f64) -> Result<f64> {
        if k >= self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: k + 1 });
        }
        self.queues[k].conjugate(x)
    }

    /// `sum_k Lambda*_k(x^k)`.
    pub fn slot_cost(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut total = 0.0;
        for (q, &v) in self.queues.iter().zip(x) {
            total += q.conjugate(v)?;
        }
        Ok(total)
    }

    /// Additive cost of a path; `+inf` if any entry is outside the domain.
    pub fn path_cost(&self, path: &ArrivalPath) -> f64 {
        if path.horizon() > 0 && path.dim() != self.dim() {
            return f64::INFINITY;
        }
        path.slots()
            .iter()
            .map(|s| s.iter().zip(&self.queues).map(|(&x, q)| q.conjugate_unchecked(x)).sum::<f64>())
            .sum()
    }

    /// Whether every queue shares the same conjugate (checked on a grid for
    /// custom models).
    pub fn is_identical(&self) -> bool {
        let first = &self.queues[0];
        self.queues.iter().all(|q| match (first, q) {
            (QueueSource::CompoundPoissonExp { lambda: a, mu: b }, QueueSource::CompoundPoissonExp { lambda: c, mu: d }) => {
                a == c && b == d
            }
            (QueueSource::ExpIncrement { nu: a }, QueueSource::ExpIncrement { nu: b }) => a == b,
            (QueueSource::Deterministic { m: a }, QueueSource::Deterministic { m: b }) => a == b,
            (QueueSource::Custom(a), QueueSource::Custom(b)) => {
                a.mean == b.mean
                    && (0..=64).all(|i| {
                        let x = 0.125 * i as f64 * (1.0 + a.mean);
                        (a.conjugate)(x) == (b.conjugate)(x)
                    })
            }
            _ => false,
        })
    }

    pub fn sample_slot(&self, k: usize, l: u64, stream: &SeedStream, replicate: u64, slot: u64) -> Result<f64> {
        if k >= self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: k + 1 });
        }
        let mut rng = stream.rng(replicate, slot, k as u64);
        self.queues[k].sample(l, &mut rng)
    }
}

/// `sup_theta { theta x - Lambda(theta) }` over `bracket`, by golden-section
/// search on the concave objective.
///
/// Returns [`Error::Bracket`] when the maximiser sits on an end of the
/// bracket, since the supremum may then lie outside it.
pub fn fenchel_legendre<F: Fn(f64) -> f64>(cumulant: F, x: f64, bracket: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Bracket { lo, hi });
    }
    let (theta, neg) = golden_min(|th| cumulant(th) - th * x, lo, hi, 1e-13);
    let edge = 1e-9 * (hi - lo);
    if theta - lo <= edge || hi - theta <= edge {
        return Err(Error::Bracket { lo, hi });
    }
    Ok(-neg)
}

/// Checks nonnegativity and midpoint convexity of a conjugate on a grid of
/// `points` values over `[lo, hi]`; returns the worst violation found.
pub fn audit_convexity(source: &QueueSource, lo: f64, hi: f64, points: usize) -> f64 {
    let n = points.max(3);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| source.conjugate_unchecked(x)).collect();
    let mut worst: f64 = 0.0;
    for (i, v) in vals.iter().enumerate() {
        if v.is_finite() {
            worst = worst.max(-v);
        }
        if i > 0 && i + 1 < n && vals[i - 1].is_finite() && vals[i + 1].is_finite() {
            worst = worst.max(v - 0.5 * (vals[i - 1] + vals[i + 1]));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cpe() -> QueueSource {
        QueueSource::compound_poisson(0.1, 0.01).unwrap()
    }

    #[test]
    fn compound_poisson_closed_form() {
        let m = SourceModel::identical(cpe(), 2).unwrap();
        assert_eq!(m.rate_fn_point(0, 0.1).unwrap(), 0.0);
        assert_abs_diff_eq!(m.rate_fn_point(0, 0.4).unwrap(), 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(m.rate_fn_point(1, 0.0).unwrap(), 0.01 * 0.1, epsilon = 1e-18);
        assert!(matches!(m.rate_fn_point(0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn path_cost_examples() {
        let m = SourceModel::identical(cpe(), 2).unwrap();
        let at_mean = ArrivalPath::constant(&[0.1, 0.1], 3).unwrap();
        assert_eq!(m.path_cost(&at_mean), 0.0);
        let p = ArrivalPath::constant(&[0.4, 0.4], 2).unwrap();
        assert_abs_diff_eq!(m.path_cost(&p), 0.004, epsilon = 1e-15);
        let q = ArrivalPath::constant(&[0.3, 0.2], 1).unwrap();
        let concat = p.concat(&q).unwrap();
        assert_abs_diff_eq!(m.path_cost(&concat), m.path_cost(&p) + m.path_cost(&q), epsilon = 1e-15);
        let det = SourceModel::identical(QueueSource::deterministic(0.5).unwrap(), 2).unwrap();
        assert_eq!(det.path_cost(&p), f64::INFINITY);
    }

    #[test]
    fn conjugate_zero_at_mean_and_convex() {
        let sources = vec![
            cpe(),
            QueueSource::compound_poisson_derived(0.1, 0.01).unwrap(),
            QueueSource::exp_increment(2.0).unwrap(),
            QueueSource::deterministic(0.3).unwrap(),
        ];
        for s in &sources {
            assert!(s.conjugate(s.mean()).unwrap().abs() <= 1e-9, "{s:?}");
            let hi = 4.0 * s.mean().max(0.1);
            assert!(audit_convexity(s, 0.0, hi, 100) <= 1e-12, "{s:?}");
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        for s in [cpe(), QueueSource::exp_increment(2.0).unwrap()] {
            for x in [0.05, 0.3, 1.7] {
                let (d1, d2) = s.conjugate_derivatives(x);
                let h = 1e-5;
                let f = |y| s.conjugate(y).unwrap();
                assert_abs_diff_eq!(d1, (f(x + h) - f(x - h)) / (2.0 * h), epsilon = 1e-6);
                assert!((d2 - (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)).abs() <= 1e-3 * (1.0 + d2));
            }
        }
    }

    #[test]
    fn fenchel_legendre_examples() {
        let gauss = |t: f64| 0.5 * t * t;
        assert_abs_diff_eq!(fenchel_legendre(gauss, 1.0, (-10.0, 10.0)).unwrap(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(fenchel_legendre(gauss, 0.0, (-10.0, 10.0)).unwrap(), 0.0, epsilon = 1e-9);
        assert!(matches!(fenchel_legendre(gauss, 1.0, (-10.0, 0.5)), Err(Error::Bracket { .. })));
        let (lambda, mu) = (0.1, 0.01);
        let cum = |t: f64| if t < mu { lambda * t / (mu - t) } else { f64::INFINITY };
        let at_mean = fenchel_legendre(cum, lambda / mu, (-1.0, mu)).unwrap();
        assert!(at_mean.abs() <= 1e-9);
    }

    #[test]
    fn derived_conjugate_matches_numerical_transform_not_closed_form() {
        let (lambda, mu) = (0.1, 0.01);
        let cum = |t: f64| if t < mu { lambda * t / (mu - t) } else { f64::INFINITY };
        let derived = QueueSource::compound_poisson_derived(lambda, mu).unwrap();
        for x in [2.0, 10.0, 30.0] {
            let numeric = fenchel_legendre(cum, x, (-5.0, mu)).unwrap();
            assert_abs_diff_eq!(numeric, derived.conjugate(x).unwrap(), epsilon = 1e-8);
        }
        // `compound_poisson` vanishes at lambda instead of the mean.
        assert!(cpe().conjugate(10.0).unwrap() > 0.0);
        assert_eq!(derived.conjugate(10.0).unwrap(), 0.0);
    }

    #[test]
    fn exp_increment_matches_numerical_transform() {
        let nu = 2.0;
        let s = QueueSource::exp_increment(nu).unwrap();
        for x in [0.2, 0.5, 0.9, 2.0] {
            let numeric = fenchel_legendre(|t| s.cumulant(t).unwrap(), x, (-50.0, nu)).unwrap();
            assert_abs_diff_eq!(numeric, s.conjugate(x).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn sampler_determinism_and_moments() {
        let m = SourceModel::identical(cpe(), 2).unwrap();
        let stream = SeedStream::new(7);
        let a = m.sample_slot(0, 50, &stream, 3, 4).unwrap();
        let b = m.sample_slot(0, 50, &stream, 3, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.sample_slot(1, 50, &stream, 3, 4).unwrap());

        let n = 100_000u64;
        let xs: Vec<f64> = (0..n).map(|r| m.sample_slot(0, 1, &stream, r, 1).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        // Var of compound Poisson with Exp(mu) marks: 2 lambda / mu^2.
        let se = (2.0 * 0.1 / (0.01f64 * 0.01) / n as f64).sqrt();
        assert!((mean - 10.0).abs() <= 3.0 * se, "mean {mean} se {se}");

        let det = QueueSource::deterministic(0.25).unwrap();
        assert_eq!(det.sample(17, &mut stream.rng(0, 0, 0)).unwrap(), 0.25);
    }

    #[test]
    fn exp_average_moments() {
        let s = QueueSource::exp_increment(2.0).unwrap();
        let stream = SeedStream::new(11);
        let n = 50_000u64;
        let l = 8;
        let xs: Vec<f64> = (0..n).map(|r| s.sample(l, &mut stream.rng(r, 0, 0)).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() <= 3.0 * (0.25 / l as f64 / n as f64).sqrt());
        assert!((var - 0.25 / l as f64).abs() <= 0.05 * 0.25 / l as f64);
    }

    #[test]
    fn streams_are_distinct() {
        let s = SeedStream::new(1);
        let mut a = s.rng(0, 0, 0);
        let mut b = s.rng(0, 0, 1);
        let mut c = s.derive(1).rng(0, 0, 0);
        let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert!(x != y && x != z && y != z);
    }
}
