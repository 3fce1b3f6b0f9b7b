//! Entropies, divergences, the average-entropy function and channel
//! capacity. All logarithms are base 2.

use std::ops::Deref;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::{xlog2x, Real};

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("not a probability vector: {0}")]
    InvalidDistribution(String),
    #[error("capacity iteration stopped after {iterations} steps with gap {gap:e} bits (best {best} bits)")]
    NonConvergence {
        best: f64,
        gap: f64,
        iterations: usize,
        input_law: Vec<f64>,
    },
}

/// A point of the simplex over the source alphabet.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Belief<T = f64>(Vec<T>);

impl<T: Real> Belief<T> {
    /// Validates to `1e-12` (type-scaled) and renormalizes.
    pub fn new(mut p: Vec<T>) -> Result<Self, InfoError> {
        if p.is_empty() {
            return Err(InfoError::InvalidDistribution("empty".into()));
        }
        let mut sum = T::zero();
        for (i, &x) in p.iter().enumerate() {
            if !x.is_finite() || x < T::zero() {
                return Err(InfoError::InvalidDistribution(format!("entry {i} = {x}")));
            }
            sum += x;
        }
        if (sum - T::one()).abs() > T::prob_tol() {
            return Err(InfoError::InvalidDistribution(format!("sums to {sum}")));
        }
        for x in p.iter_mut() {
            *x = *x / sum;
        }
        Ok(Self(p))
    }

    /// Wraps a vector already known to lie on the simplex.
    pub(crate) fn new_unchecked(p: Vec<T>) -> Self {
        Self(p)
    }

    /// `(1 - q, q)`: the belief parameter is the probability of symbol 1.
    pub fn binary(q: T) -> Self {
        Self(vec![T::one() - q, q])
    }

    pub fn point_mass(size: usize, at: usize) -> Self {
        let mut p = vec![T::zero(); size];
        p[at] = T::one();
        Self(p)
    }

    pub fn uniform(size: usize) -> Self {
        let w = T::one() / T::from_usize(size).expect("size");
        Self(vec![w; size])
    }

    /// `t * self + (1 - t) * other`.
    pub fn mix(&self, other: &Self, t: T) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| t * a + (T::one() - t) * b)
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for Belief<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityResult<T = f64> {
    /// Bits per channel use.
    pub capacity: T,
    pub input_law: Vec<T>,
    /// Certified upper bound minus reported capacity.
    pub gap: T,
    pub iterations: usize,
}

pub const DEFAULT_CAPACITY_TOL: f64 = 1e-9;
pub const DEFAULT_CAPACITY_MAX_ITER: usize = 10_000;

fn check_unit<T: Real>(what: &'static str, p: T) -> Result<T, InfoError> {
    let tol = T::prob_tol();
    if !(p >= -tol && p <= T::one() + tol) {
        return Err(InfoError::Domain {
            what,
            value: p.to_f64_lossy(),
            domain: "[0, 1]",
        });
    }
    Ok(p.max(T::zero()).min(T::one()))
}

/// Shannon entropy of a probability vector.
pub fn entropy<T: Real>(p: &[T]) -> T {
    -p.iter().map(|&x| xlog2x(x)).sum::<T>()
}

pub fn binary_entropy<T: Real>(p: T) -> Result<T, InfoError> {
    let p = check_unit("p", p)?;
    Ok(hb(p))
}

#[inline]
pub(crate) fn hb<T: Real>(p: T) -> T {
    -xlog2x(p) - xlog2x(T::one() - p)
}

/// `q * delta := (1 - q) delta + q (1 - delta)`, the output bias of a BSC.
#[inline]
pub fn star<T: Real>(q: T, delta: T) -> T {
    (T::one() - q) * delta + q * (T::one() - delta)
}

/// `D(p || q)` in bits; `+inf` when `p` charges a symbol `q` does not.
pub fn kl_divergence<T: Real>(p: &[T], q: &[T]) -> T {
    let mut d = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        if a <= T::zero() {
            continue;
        }
        if b <= T::zero() {
            return T::infinity();
        }
        d += a * (a / b).log2();
    }
    d.max(T::zero())
}

/// Conditional entropy `H(U|Z)` of the joint law `p(u) P(z|u)`.
pub fn average_entropy<T: Real>(p: &[T], p_z_given_u: &[Vec<T>]) -> T {
    let z_size = p_z_given_u.first().map_or(0, Vec::len);
    let mut mixed = vec![T::zero(); z_size];
    let mut cond = T::zero();
    for (&pu, row) in p.iter().zip(p_z_given_u) {
        if pu <= T::zero() {
            continue;
        }
        cond += pu * entropy(row);
        for (m, &pz) in mixed.iter_mut().zip(row) {
            *m += pu * pz;
        }
    }
    (entropy(p) + cond - entropy(&mixed)).max(T::zero())
}

/// Average entropy of the symmetric binary source at interim belief `q`:
/// `H_b(delta) + H_b(q) - H_b(q * delta)`.
pub fn dsbs_entropy<T: Real>(q: T, delta: T) -> Result<T, InfoError> {
    let q = check_unit("q", q)?;
    let delta = check_unit("delta", delta)?;
    Ok((hb(delta) + hb(q) - hb(star(q, delta))).max(T::zero()))
}

/// Derivative of [`dsbs_entropy`] in `q`; diverges at the endpoints.
pub fn dsbs_entropy_derivative<T: Real>(q: T, delta: T) -> Result<T, InfoError> {
    if !(q > T::zero() && q < T::one()) {
        return Err(InfoError::Domain {
            what: "q",
            value: q.to_f64_lossy(),
            domain: "(0, 1)",
        });
    }
    let delta = check_unit("delta", delta)?;
    let s = star(q, delta);
    Ok(((T::one() - q) / q).log2()
        - (T::one() - T::two() * delta) * ((T::one() - s) / s).log2())
}

/// `I(X;Y)` for input law `p_x` through `channel[x][y]`.
pub fn mutual_information<T: Real>(p_x: &[T], channel: &[Vec<T>]) -> T {
    let y_size = channel.first().map_or(0, Vec::len);
    let mut q_y = vec![T::zero(); y_size];
    for (&px, row) in p_x.iter().zip(channel) {
        for (q, &t) in q_y.iter_mut().zip(row) {
            *q += px * t;
        }
    }
    let cond: T = p_x
        .iter()
        .zip(channel)
        .map(|(&px, row)| px * entropy(row))
        .sum();
    (entropy(&q_y) - cond).max(T::zero())
}

/// Capacity by alternating maximization over the input law.
///
/// Stops once `max_x D(T(.|x) || q_Y) - I(p; T)` is at most `tol`; the
/// first term upper-bounds the capacity so the returned value is within
/// `tol` of it.
pub fn channel_capacity<T: Real>(
    channel: &[Vec<T>],
    tol: T,
    max_iter: usize,
) -> Result<CapacityResult<T>, InfoError> {
    channel_capacity_traced(channel, tol, max_iter, |_| {})
}

/// [`channel_capacity`], reporting the mutual information of every iterate.
pub fn channel_capacity_traced<T: Real>(
    channel: &[Vec<T>],
    tol: T,
    max_iter: usize,
    mut observe: impl FnMut(T),
) -> Result<CapacityResult<T>, InfoError> {
    if !(tol > T::zero()) {
        return Err(InfoError::Domain {
            what: "tol",
            value: tol.to_f64_lossy(),
            domain: "(0, inf)",
        });
    }
    let x_size = channel.len();
    let y_size = channel.first().map_or(0, Vec::len);
    if x_size == 0 || y_size == 0 {
        return Err(InfoError::InvalidDistribution("empty channel".into()));
    }
    let mut p = vec![T::one() / T::from_usize(x_size).expect("size"); x_size];
    let mut divergence = vec![T::zero(); x_size];
    let mut q_y = vec![T::zero(); y_size];
    let mut best = T::zero();
    let mut gap = T::infinity();
    for iteration in 0..max_iter.max(1) {
        q_y.iter_mut().for_each(|q| *q = T::zero());
        for (&px, row) in p.iter().zip(channel) {
            for (q, &t) in q_y.iter_mut().zip(row) {
                *q += px * t;
            }
        }
        for (d, row) in divergence.iter_mut().zip(channel) {
            *d = kl_divergence(row, &q_y);
        }
        let info: T = p.iter().zip(&divergence).map(|(&px, &d)| px * d).sum();
        let upper = divergence.iter().copied().fold(T::zero(), T::max);
        observe(info);
        best = info;
        gap = (upper - info).max(T::zero());
        if gap <= tol {
            return Ok(CapacityResult {
                capacity: info,
                input_law: p,
                gap,
                iterations: iteration + 1,
            });
        }
        let mut norm = T::zero();
        for (px, &d) in p.iter_mut().zip(&divergence) {
            *px = *px * d.exp2();
            norm += *px;
        }
        p.iter_mut().for_each(|px| *px = *px / norm);
    }
    Err(InfoError::NonConvergence {
        best: best.to_f64_lossy(),
        gap: gap.to_f64_lossy(),
        iterations: max_iter,
        input_law: p.iter().map(|x| x.to_f64_lossy()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn binary_entropy_values() {
        close(binary_entropy(0.5).unwrap(), 1.0, 1e-15);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // -0.3 log2 0.3 - 0.7 log2 0.7 evaluated with mpmath at 30 digits
        close(binary_entropy(0.3).unwrap(), 0.881_290_899_230_692_7, 1e-15);
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn kl_divergence_values() {
        let u = [0.5, 0.5];
        assert_eq!(kl_divergence(&u, &u), 0.0);
        close(kl_divergence(&[1.0, 0.0], &u), 1.0, 1e-15);
        assert!(kl_divergence(&u, &[1.0, 0.0]).is_infinite());
    }

    #[test]
    fn average_entropy_symmetric_dsbs() {
        let pzu = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
        // H(U,Z) - H(Z) for the joint [[0.35, 0.15], [0.15, 0.35]]
        let joint = [0.35, 0.15, 0.15, 0.35];
        let brute = entropy(&joint) - entropy(&[0.5, 0.5]);
        close(average_entropy(&[0.5, 0.5], &pzu), brute, 1e-14);
        close(brute, 0.881_290_899_230_692_7, 1e-14);
    }

    #[test]
    fn average_entropy_limits() {
        let same = vec![vec![0.2, 0.8], vec![0.2, 0.8]];
        let p = [0.3, 0.7];
        close(average_entropy(&p, &same), entropy(&p), 1e-15);
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        close(average_entropy(&p, &perfect), 0.0, 1e-15);
    }

    #[test]
    fn dsbs_entropy_values() {
        close(dsbs_entropy(0.0, 0.3).unwrap(), 0.0, 1e-15);
        close(dsbs_entropy(0.5, 0.3).unwrap(), 0.881_290_899_230_692_7, 1e-15);
        let pzu = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
        for &q in &[0.05, 0.2, 0.41, 0.77] {
            let general = average_entropy(&[1.0 - q, q], &pzu);
            close(dsbs_entropy(q, 0.3).unwrap(), general, 1e-12);
        }
        // h(0.1212) = H(U|Z) - 0.4 for the symmetric example at C = 0.4
        close(dsbs_entropy(0.121_161_084_304_312_56, 0.3).unwrap(), 0.881_290_899_230_692_7 - 0.4, 1e-9);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        assert_eq!(dsbs_entropy_derivative(0.5, 0.3).unwrap(), 0.0);
        for &q in &[0.1, 0.25, 0.6] {
            let step = 1e-5;
            let fd = (dsbs_entropy(q + step, 0.3).unwrap() - dsbs_entropy(q - step, 0.3).unwrap())
                / (2.0 * step);
            close(dsbs_entropy_derivative(q, 0.3).unwrap(), fd, 1e-6);
        }
        let a = dsbs_entropy_derivative(1e-3, 0.3).unwrap();
        let b = dsbs_entropy_derivative(1e-4, 0.3).unwrap();
        assert!(b > a && a > 0.0);
        assert!(dsbs_entropy_derivative(0.0, 0.3).is_err());
        assert!(dsbs_entropy_derivative(1.0, 0.3).is_err());
    }

    #[test]
    fn capacity_closed_forms() {
        let bsc = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let r = channel_capacity(&bsc, 1e-9, 10_000).unwrap();
        close(r.capacity, 1.0 - binary_entropy(0.1).unwrap(), 1e-9);
        close(r.capacity, 0.531_004_406_410_718_6, 1e-9);

        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        close(channel_capacity(&id, 1e-9, 10).unwrap().capacity, 1.0, 1e-12);

        let useless = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
        close(channel_capacity(&useless, 1e-9, 10).unwrap().capacity, 0.0, 1e-12);
    }

    #[test]
    fn capacity_iterates_are_monotone() {
        // Z channel: the optimum is not uniform, so several iterations happen.
        let z = vec![vec![1.0, 0.0], vec![0.4, 0.6]];
        let mut trace = Vec::new();
        let r = channel_capacity_traced(&z, 1e-12, 10_000, |i| trace.push(i)).unwrap();
        assert!(trace.len() > 3);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        assert!(r.gap <= 1e-12);
    }

    #[test]
    fn capacity_reports_non_convergence() {
        let z = vec![vec![1.0, 0.0], vec![0.4, 0.6]];
        match channel_capacity(&z, 1e-15, 2) {
            Err(InfoError::NonConvergence { iterations, gap, .. }) => {
                assert_eq!(iterations, 2);
                assert!(gap > 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.5]).is_ok());
        assert!(Belief::new(vec![0.5, 0.4]).is_err());
        assert!(Belief::new(vec![1.5, -0.5]).is_err());
        let b = Belief::binary(0.25);
        assert_eq!(&*b, &[0.75, 0.25]);
    }
}
