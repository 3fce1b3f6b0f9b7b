//! Binary source with binary side information: closed-form solution of the
//! symmetric case and a three-posterior search for general parameters.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::best_reply::belief_thresholds;
use crate::info_measures::{dsbs_entropy, dsbs_entropy_derivative, hb};
use crate::problem_model::{DsbsParams, ProblemError};
use crate::scalar::Real;

pub const DEFAULT_BISECTION_TOL: f64 = 1e-12;
pub const DEFAULT_SEARCH_TOL: f64 = 1e-9;
/// Points per axis of the coarse triple search.
const COARSE_POINTS: usize = 200;

#[derive(Debug, Error)]
pub enum DsbsError {
    #[error("{what}: {msg}")]
    Domain { what: &'static str, msg: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn domain(what: &'static str, msg: impl Into<String>) -> DsbsError {
    DsbsError::Domain { what, msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    ThreePosterior,
    TwoPosterior,
    ZeroDistortion,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::ThreePosterior => "three-posterior",
            Regime::TwoPosterior => "two-posterior",
            Regime::ZeroDistortion => "zero-distortion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DsbsSolution<T = f64> {
    pub regime: Regime,
    /// Tangency belief separating the first two regimes (symmetric case).
    pub q_star: Option<T>,
    pub value: T,
    pub posteriors: [T; 3],
    pub weights: [T; 3],
    /// `P(w_k | u0)`.
    pub alpha: [T; 3],
    /// `P(w_k | u1)`.
    pub beta: [T; 3],
    /// Capacity at which the three-posterior regime ends.
    pub c_threshold: Option<T>,
    pub capacity: T,
    /// `H(U|Z)` in bits.
    pub entropy_u_given_z: T,
}

fn strategy_tables<T: Real>(p0: T, q: &[T; 3], lambda: &[T; 3]) -> ([T; 3], [T; 3]) {
    let one = T::one();
    let alpha = std::array::from_fn(|k| {
        if p0 < one {
            lambda[k] * (one - q[k]) / (one - p0)
        } else {
            lambda[k]
        }
    });
    let beta = std::array::from_fn(|k| {
        if p0 > T::zero() {
            lambda[k] * q[k] / p0
        } else {
            lambda[k]
        }
    });
    (alpha, beta)
}

/// `H(U|Z)` at interim belief `q` for general crossover probabilities.
fn avg_entropy<T: Real>(q: T, d0: T, d1: T) -> T {
    let one = T::one();
    // joint of (u, z): (1-q)(1-d0), (1-q)d0, q d1, q(1-d1)
    let pz1 = (one - q) * d0 + q * (one - d1);
    let h_u = hb(q);
    let h_z_given_u = (one - q) * hb(d0) + q * hb(d1);
    (h_u + h_z_given_u - hb(pz1)).max(T::zero())
}

/// Encoder distortion at interim belief `q` for fixed decoder replies
/// after `z0` and `z1` (`false` = `v0`, `true` = `v1`).
fn psi_branch<T: Real>(q: T, d0: T, d1: T, r0: bool, r1: bool) -> T {
    let one = T::one();
    let after_z0 = if r0 { (one - q) * (one - d0) } else { q * d1 };
    let after_z1 = if r1 { (one - q) * d0 } else { q * (one - d1) };
    after_z0 + after_z1
}

/// Average encoder distortion of the binary example, worst-for-encoder at
/// ties: the decoder answers `v1` after `z0` iff `q > nu0`, after `z1` iff
/// `q > nu1`.
pub fn dsbs_average_distortion<T: Real>(q: T, params: &DsbsParams<T>) -> T {
    let t = belief_thresholds(params);
    psi_branch(q, params.delta0, params.delta1, q > t.nu0, q > t.nu1)
}

/// Lower semicontinuous hull of [`dsbs_average_distortion`]: at a threshold
/// either reply is allowed and the smaller distortion is taken. This is the
/// value approached by posteriors converging from the favorable side.
pub fn dsbs_average_distortion_lsc<T: Real>(q: T, params: &DsbsParams<T>) -> T {
    let t = belief_thresholds(params);
    let near = |nu: T| (q - nu).abs() <= T::lit(1e-12);
    let opts = |above: bool, at: bool| -> &'static [bool] {
        match (at, above) {
            (true, _) => &[false, true],
            (false, true) => &[true],
            (false, false) => &[false],
        }
    };
    let mut best = T::infinity();
    for &r0 in opts(q > t.nu0, near(t.nu0)) {
        for &r1 in opts(q > t.nu1, near(t.nu1)) {
            best = best.min(psi_branch(q, params.delta0, params.delta1, r0, r1));
        }
    }
    best
}

/// Root of `k(q) = H(U|Z) - h(q) - h'(q) (delta - q)` in `(0, delta]`.
pub fn solve_q_star<T: Real>(delta: T, tol: T) -> Result<T, DsbsError> {
    if !(delta > T::zero() && delta < T::half()) {
        return Err(domain("delta", format!("{delta} is outside (0, 1/2)")));
    }
    if !(tol > T::zero()) {
        return Err(domain("tol", "must be positive"));
    }
    let big_h = hb(delta);
    let k = |q: T| -> T {
        let h = dsbs_entropy(q, delta).expect("q in range");
        let dh = dsbs_entropy_derivative(q, delta).expect("q interior");
        big_h - h - dh * (delta - q)
    };
    let mut lo = T::lit(1e-300).max(T::min_positive_value());
    let mut hi = delta;
    // k(0+) is -inf and k(delta) > 0; k is increasing in between.
    for _ in 0..2000 {
        let mid = T::half() * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = k(mid);
        if v.abs() <= tol && hi - lo <= tol {
            return Ok(mid);
        }
        if v < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(T::half() * (lo + hi))
}

/// The `q` in `[0, 1/2]` with `h(q) = target`.
pub fn h_inverse<T: Real>(target: T, delta: T, tol: T) -> Result<T, DsbsError> {
    let top = hb(delta);
    let slack = T::lit(1e-12);
    if !(target >= -slack && target <= top + slack) {
        return Err(domain("target", format!("{target} is outside [0, H(U|Z) = {top}]")));
    }
    if target <= T::zero() {
        return Ok(T::zero());
    }
    if target >= top {
        return Ok(T::half());
    }
    let h = |q: T| dsbs_entropy(q, delta).expect("q in range");
    let (mut lo, mut hi) = (T::zero(), T::half());
    for _ in 0..2000 {
        let mid = T::half() * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid) - target;
        if v.abs() <= tol && hi - lo <= tol {
            return Ok(mid);
        }
        if v < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(T::half() * (lo + hi))
}

/// Whether the symmetric splitting `(q1, 1/2, 1 - q1)` admits weights in
/// `[0, 1]` meeting the information constraint with equality.
pub fn feasibility_bound<T: Real>(q1: T, delta: T, capacity: T) -> bool {
    let Ok(h1) = dsbs_entropy(q1, delta) else {
        return false;
    };
    h1 <= hb(delta) - capacity + T::lit(1e-10) && capacity >= T::zero()
}

fn check_symmetric<T: Real>(params: &DsbsParams<T>) -> Result<T, DsbsError> {
    params.validate()?;
    if (params.p0 - T::half()).abs() > T::lit(1e-12) {
        return Err(domain("p0", format!("{} must be 1/2 for the closed form", params.p0)));
    }
    if params.delta0 != params.delta1 {
        return Err(domain("delta", "delta0 and delta1 must coincide"));
    }
    if params.kappa != T::zero() {
        return Err(domain("kappa", "must be 0 for the closed form"));
    }
    let delta = params.delta0;
    if !(delta > T::zero() && delta < T::half()) {
        return Err(domain("delta", format!("{delta} is outside (0, 1/2)")));
    }
    Ok(delta)
}

/// Closed-form optimum of the symmetric source with Hamming distortions.
pub fn dsbs_solve<T: Real>(params: &DsbsParams<T>) -> Result<DsbsSolution<T>, DsbsError> {
    let delta = check_symmetric(params)?;
    let tol = T::lit(DEFAULT_BISECTION_TOL);
    let (half, one) = (T::half(), T::one());
    let big_h = hb(delta);
    let c = params.capacity;
    let q_star = solve_q_star(delta, tol)?;
    let h_star = dsbs_entropy(q_star, delta).expect("q* in range");
    let c_threshold = big_h - h_star;

    let (regime, value, posteriors, weights) = if c <= c_threshold {
        let l1 = half * c / (big_h - h_star);
        let value = delta - c * (delta - q_star) / (big_h - h_star);
        (
            Regime::ThreePosterior,
            value,
            [q_star, half, one - q_star],
            [l1, one - T::two() * l1, l1],
        )
    } else if c <= big_h {
        let q1 = h_inverse(big_h - c, delta, tol)?;
        (Regime::TwoPosterior, q1, [q1, half, one - q1], [half, T::zero(), half])
    } else {
        (
            Regime::ZeroDistortion,
            T::zero(),
            [T::zero(), half, one],
            [half, T::zero(), half],
        )
    };
    let (alpha, beta) = strategy_tables(params.p0, &posteriors, &weights);
    Ok(DsbsSolution {
        regime,
        q_star: Some(q_star),
        value,
        posteriors,
        weights,
        alpha,
        beta,
        c_threshold: Some(c_threshold),
        capacity: c,
        entropy_u_given_z: big_h,
    })
}

/// Weights of a three-point splitting meeting the prior and the
/// information constraint with equality; `None` unless all lie in `[0, 1]`.
fn triple_weights<T: Real>(q: [T; 3], h: [T; 3], p0: T, theta: T) -> Option<[T; 3]> {
    let one = T::one();
    // Cramer's rule on [1 1 1; q; h] lambda = [1; p0; theta].
    let det3 = |c0: [T; 3], c1: [T; 3], c2: [T; 3]| -> T {
        c0[0] * (c1[1] * c2[2] - c1[2] * c2[1]) - c1[0] * (c0[1] * c2[2] - c0[2] * c2[1])
            + c2[0] * (c0[1] * c1[2] - c0[2] * c1[1])
    };
    let col = |i: usize| [one, q[i], h[i]];
    let rhs = [one, p0, theta];
    let det = det3(col(0), col(1), col(2));
    if det.abs() < T::lit(1e-14) {
        return None;
    }
    let l0 = det3(rhs, col(1), col(2)) / det;
    let l1 = det3(col(0), rhs, col(2)) / det;
    let l2 = det3(col(0), col(1), rhs) / det;
    let tol = T::lit(1e-12);
    let ok = |l: T| l >= -tol && l <= one + tol;
    (ok(l0) && ok(l1) && ok(l2)).then(|| {
        [l0, l1, l2].map(|l| l.max(T::zero()).min(one))
    })
}

struct Objective<'a, T: Real> {
    params: &'a DsbsParams<T>,
    theta: T,
}

impl<T: Real> Objective<'_, T> {
    fn h(&self, q: T) -> T {
        avg_entropy(q, self.params.delta0, self.params.delta1)
    }

    fn psi(&self, q: T) -> T {
        dsbs_average_distortion_lsc(q, self.params)
    }

    fn triple(&self, q: [T; 3]) -> Option<(T, [T; 3])> {
        if !(q[0] < q[1] && q[1] < q[2] && q[0] >= T::zero() && q[2] <= T::one()) {
            return None;
        }
        let lambda = triple_weights(q, q.map(|x| self.h(x)), self.params.p0, self.theta)?;
        let value = (0..3).map(|i| lambda[i] * self.psi(q[i])).sum();
        Some((value, lambda))
    }

    /// Two posteriors `q1 < p0 < q3` with the constraint tight: solves for
    /// `q1` given `q3`. Several roots are possible; the best is returned.
    fn pair(&self, q3: T, axis: &[T]) -> Option<(T, T, [T; 3])> {
        let p0 = self.params.p0;
        if !(q3 > p0) {
            return None;
        }
        let g = |q1: T| {
            let l1 = (q3 - p0) / (q3 - q1);
            l1 * self.h(q1) + (T::one() - l1) * self.h(q3) - self.theta
        };
        let eval = |q1: T| {
            let l1 = (q3 - p0) / (q3 - q1);
            let l3 = T::one() - l1;
            (l1 * self.psi(q1) + l3 * self.psi(q3), [l1, T::zero(), l3])
        };
        let mut best: Option<(T, T, [T; 3])> = None;
        let pts: Vec<T> = axis.iter().copied().filter(|&x| x < p0).chain([p0]).collect();
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ga, gb) = (g(a), g(b));
            let root = if ga == T::zero() {
                Some(a)
            } else if (ga < T::zero()) != (gb < T::zero()) {
                let (mut lo, mut hi, glo) = (a, b, ga);
                for _ in 0..200 {
                    let mid = T::half() * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (g(mid) < T::zero()) == (glo < T::zero()) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(T::half() * (lo + hi))
            } else {
                None
            };
            if let Some(q1) = root {
                if q1 >= p0 {
                    continue;
                }
                let (v, l) = eval(q1);
                if best.map_or(true, |b| v < b.0) {
                    best = Some((v, q1, l));
                }
            }
        }
        best
    }
}

/// Best two-posterior splitting for each `q3` on the given axis, as
/// `(q3, q1, value)`. Useful for inspecting where the optimum leaves the
/// two-posterior family.
pub fn two_posterior_candidates<T: Real>(
    params: &DsbsParams<T>,
    q3s: &[T],
) -> Result<Vec<(T, T, T)>, DsbsError> {
    params.validate()?;
    let theta = avg_entropy(params.p0, params.delta0, params.delta1) - params.capacity;
    let obj = Objective { params, theta };
    let axis = search_axis(params);
    Ok(q3s
        .iter()
        .filter_map(|&q3| obj.pair(q3, &axis).map(|(v, q1, _)| (q3, q1, v)))
        .collect())
}

/// Coarse axis: uniform points plus the thresholds and the prior.
fn search_axis<T: Real>(params: &DsbsParams<T>) -> Vec<T> {
    let t = belief_thresholds(params);
    let n = T::from_usize(COARSE_POINTS).expect("count");
    let mut axis: Vec<T> = (0..=COARSE_POINTS)
        .map(|i| T::from_usize(i).expect("index") / n)
        .chain([t.nu0, t.nu1, params.p0])
        .filter(|x| *x >= T::zero() && *x <= T::one())
        .collect();
    axis.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    axis.dedup();
    axis
}

/// Minimizes `sum lambda_i Psi_e(q_i)` over posteriors `q1 < q2 < q3` whose
/// weights meet the prior and the information constraint with equality.
///
/// Coarse search over a `200`-point axis (plus thresholds and prior), then
/// coordinate refinement with halving steps down to `search_tol`. Values at
/// the decoder's thresholds use the lower semicontinuous hull, so the
/// result is the infimum approached from the favorable side.
pub fn three_posterior_optimize<T: Real>(
    params: &DsbsParams<T>,
    search_tol: T,
) -> Result<DsbsSolution<T>, DsbsError> {
    params.validate()?;
    if !(search_tol > T::zero()) {
        return Err(domain("search_tol", "must be positive"));
    }
    let (p0, one, zero) = (params.p0, T::one(), T::zero());
    let big_h = avg_entropy(p0, params.delta0, params.delta1);
    let c = params.capacity;
    let finish = |regime, value, q: [T; 3], l: [T; 3]| {
        let (alpha, beta) = strategy_tables(p0, &q, &l);
        DsbsSolution {
            regime,
            q_star: None,
            value,
            posteriors: q,
            weights: l,
            alpha,
            beta,
            c_threshold: None,
            capacity: c,
            entropy_u_given_z: big_h,
        }
    };
    if c > big_h || p0 == zero || p0 == one {
        // Every splitting is feasible; revealing the source is optimal for
        // Hamming encoder distortion.
        let q = [zero, p0, one];
        let l = [one - p0, zero, p0];
        let value = (one - p0) * dsbs_average_distortion_lsc(zero, params)
            + p0 * dsbs_average_distortion_lsc(one, params);
        return Ok(finish(Regime::ZeroDistortion, value, q, l));
    }

    let theta = big_h - c;
    let obj = Objective { params, theta };
    let axis = search_axis(params);
    let hs: Vec<T> = axis.iter().map(|&q| obj.h(q)).collect();
    let psis: Vec<T> = axis.iter().map(|&q| obj.psi(q)).collect();

    // The prior alone: feasible for every C >= 0, used as a floor.
    let mut best_value = dsbs_average_distortion_lsc(p0, params);
    let mut best_q = [zero, p0, one];
    let mut best_l = [zero, one, zero];

    let n = axis.len();
    for i in 0..n {
        if axis[i] > p0 {
            break;
        }
        for k in (i + 1..n).rev() {
            if axis[k] < p0 {
                break;
            }
            for j in i + 1..k {
                let q = [axis[i], axis[j], axis[k]];
                let Some(l) = triple_weights(q, [hs[i], hs[j], hs[k]], p0, theta) else {
                    continue;
                };
                let v = l[0] * psis[i] + l[1] * psis[j] + l[2] * psis[k];
                if v < best_value {
                    best_value = v;
                    best_q = q;
                    best_l = l;
                }
            }
        }
    }

    // Two-posterior family (middle weight zero).
    let mut pair_best: Option<(T, [T; 3], [T; 3])> = None;
    for &q3 in axis.iter().filter(|&&x| x > p0) {
        if let Some((v, q1, l)) = obj.pair(q3, &axis) {
            if pair_best.map_or(true, |b| v < b.0) {
                pair_best = Some((v, [q1, p0, q3], l));
            }
        }
    }

    // Refine the triple.
    let t = belief_thresholds(params);
    let snaps = [t.nu0, t.nu1, p0];
    let mut step = one / T::from_usize(COARSE_POINTS).expect("count");
    while step >= search_tol {
        let mut improved = false;
        for i in 0..3 {
            let mut candidates = vec![best_q[i] - step, best_q[i] + step];
            candidates.extend(snaps.iter().copied().filter(|&s| (s - best_q[i]).abs() <= step));
            for x in candidates {
                let mut q = best_q;
                q[i] = x;
                if let Some((v, l)) = obj.triple(q) {
                    if v < best_value - T::lit(1e-15) {
                        best_value = v;
                        best_q = q;
                        best_l = l;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step = step * T::half();
        }
    }

    // Refine the pair along q3.
    if let Some((mut pv, mut pq, mut pl)) = pair_best {
        let mut step = one / T::from_usize(COARSE_POINTS).expect("count");
        while step >= search_tol {
            let mut improved = false;
            let mut candidates = vec![pq[2] - step, pq[2] + step];
            candidates.extend(snaps.iter().copied().filter(|&s| (s - pq[2]).abs() <= step));
            for q3 in candidates {
                if q3 > one {
                    continue;
                }
                if let Some((v, q1, l)) = obj.pair(q3, &axis) {
                    if v < pv - T::lit(1e-15) {
                        pv = v;
                        pq = [q1, p0, q3];
                        pl = l;
                        improved = true;
                    }
                }
            }
            if !improved {
                step = step * T::half();
            }
        }
        if pv < best_value {
            best_value = pv;
            best_q = pq;
            best_l = pl;
        }
    }

    let regime = if best_l[1] <= T::lit(1e-9) {
        Regime::TwoPosterior
    } else {
        Regime::ThreePosterior
    };
    Ok(finish(regime, best_value, best_q, best_l))
}

/// Symmetric Hamming instances use the closed form; others the search.
pub fn solve_any<T: Real>(params: &DsbsParams<T>) -> Result<DsbsSolution<T>, DsbsError> {
    if params.is_symmetric_hamming()
        && (params.p0 - T::half()).abs() <= T::lit(1e-12)
        && params.delta0 > T::zero()
    {
        dsbs_solve(params)
    } else {
        three_posterior_optimize(params, T::lit(DEFAULT_SEARCH_TOL))
    }
}

pub const CURVE_HEADER: [&str; 10] = [
    "capacity", "value", "regime", "q_star", "q1", "q2", "q3", "lambda1", "lambda2", "lambda3",
];

/// Writes one CSV row per solution, columns as in [`CURVE_HEADER`].
pub fn write_curve_csv<W: Write, T: Real>(
    out: W,
    rows: &[DsbsSolution<T>],
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for s in rows {
        let num = |x: T| format!("{}", x.to_f64_lossy());
        let mut rec = vec![num(s.capacity), num(s.value), s.regime.label().to_string()];
        rec.push(s.q_star.map_or_else(String::new, num));
        rec.extend(s.posteriors.iter().map(|&x| num(x)));
        rec.extend(s.weights.iter().map(|&x| num(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
