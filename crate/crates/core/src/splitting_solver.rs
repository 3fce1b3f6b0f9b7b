//! Optimal encoder distortion as a linear program over a discretized belief
//! simplex.
//!
//! The encoder splits the prior `P_U` into posteriors `p_w` with weights
//! `lambda_w`. Its distortion is `sum lambda_w Psi_e(p_w)`, and the channel
//! can carry the splitting when `sum lambda_w h(p_w) >= H(U|Z) - C`. The
//! solver restricts posteriors to a lattice plus probe points placed just
//! on either side of every best-reply switching boundary, so values that
//! are only approached across a discontinuity are still reached to within
//! the probe offset.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::best_reply::{average_distortion_with, reply_profile, TieBreak, DEFAULT_TIE_TOL};
use crate::info_measures::{average_entropy, Belief};
use crate::problem_model::ProblemSpec;
use crate::scalar::Real;
use crate::simplex::{self, LpError};

pub const DEFAULT_TIE_PROBE_EPS: f64 = 1e-7;
pub const DEFAULT_MAX_LP_ITER: usize = 200_000;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid {what}: {msg}")]
    InvalidArgument { what: &'static str, msg: String },
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
    #[error("invalid splitting: {0}")]
    InvalidSplitting(String),
    #[error("source symbol u{u} has zero prior probability but posterior mass {mass}")]
    ZeroPrior { u: usize, mass: f64 },
}

fn invalid(what: &'static str, msg: impl Into<String>) -> SolveError {
    SolveError::InvalidArgument { what, msg: msg.into() }
}

/// Lattice step used when none is given: fine in one dimension, coarser as
/// the simplex grows.
pub fn default_grid_step(u_size: usize) -> f64 {
    match u_size {
        0..=2 => 1e-3,
        3 => 2e-2,
        _ => 0.05,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub grid_step: f64,
    pub tie_probe_eps: f64,
    pub tie_tol: f64,
    pub tie_break: TieBreak,
    pub max_lp_iter: usize,
}

impl GridConfig {
    pub fn for_problem<T: Real>(problem: &ProblemSpec<T>) -> Self {
        Self::with_step(default_grid_step(problem.support().len()))
    }

    pub fn with_step(grid_step: f64) -> Self {
        Self {
            grid_step,
            tie_probe_eps: DEFAULT_TIE_PROBE_EPS,
            tie_tol: DEFAULT_TIE_TOL,
            tie_break: TieBreak::WorstForEncoder,
            max_lp_iter: DEFAULT_MAX_LP_ITER,
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return Err(invalid("grid_step", format!("{} is outside (0, 0.5]", self.grid_step)));
        }
        if !(self.tie_probe_eps >= 0.0 && self.tie_probe_eps < self.grid_step) {
            return Err(invalid(
                "tie_probe_eps",
                format!("{} must lie in [0, grid_step)", self.tie_probe_eps),
            ));
        }
        if !(self.tie_tol >= 0.0) {
            return Err(invalid("tie_tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Atom<T = f64> {
    pub weight: T,
    pub posterior: Belief<T>,
}

/// Weighted posteriors whose barycenter is the prior.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Splitting<T = f64> {
    atoms: Vec<Atom<T>>,
}

impl<T: Real> Splitting<T> {
    /// Checks weights are non-negative and sum to one within `1e-10`.
    pub fn new(atoms: Vec<Atom<T>>) -> Result<Self, SolveError> {
        if atoms.is_empty() {
            return Err(SolveError::InvalidSplitting("no atoms".into()));
        }
        let len = atoms[0].posterior.len();
        let mut total = T::zero();
        for (i, a) in atoms.iter().enumerate() {
            if !(a.weight >= T::zero()) {
                return Err(SolveError::InvalidSplitting(format!("weight {i} is {}", a.weight)));
            }
            if a.posterior.len() != len {
                return Err(SolveError::InvalidSplitting(format!(
                    "posterior {i} has {} entries, expected {len}",
                    a.posterior.len()
                )));
            }
            total += a.weight;
        }
        if (total - T::one()).abs() > T::lit(1e-10).max(T::prob_tol()) {
            return Err(SolveError::InvalidSplitting(format!("weights sum to {total}")));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn barycenter(&self) -> Vec<T> {
        let mut bary = vec![T::zero(); self.atoms[0].posterior.len()];
        for a in &self.atoms {
            for (b, &p) in bary.iter_mut().zip(a.posterior.iter()) {
                *b += a.weight * p;
            }
        }
        bary
    }

    /// Largest coordinate gap between the barycenter and `prior`.
    pub fn barycenter_error(&self, prior: &[T]) -> T {
        self.barycenter()
            .iter()
            .zip(prior)
            .map(|(&b, &p)| (b - p).abs())
            .fold(T::zero(), T::max)
    }

    /// `sum lambda_w Psi_e(p_w)`.
    pub fn distortion(&self, problem: &ProblemSpec<T>, tie_tol: T, tie_break: TieBreak) -> T {
        self.atoms
            .iter()
            .map(|a| a.weight * average_distortion_with(&a.posterior, problem, tie_tol, tie_break))
            .sum()
    }

    /// `sum lambda_w h(p_w)`, the conditional entropy `H(U|W,Z)` in bits.
    pub fn information(&self, problem: &ProblemSpec<T>) -> T {
        self.atoms
            .iter()
            .map(|a| a.weight * average_entropy(&a.posterior, problem.p_z_given_u()))
            .sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult<T = f64> {
    /// Optimal encoder distortion.
    pub value: T,
    pub splitting: Splitting<T>,
    /// `sum lambda_w h(p_w) - threshold_bits`.
    pub slack_bits: T,
    /// `H(U|Z) - C`.
    pub threshold_bits: T,
    pub capacity: T,
    pub grid_step: f64,
    /// Set when the optimum uses a probe point next to a best-reply
    /// boundary: the value is then an infimum that is approached but not
    /// attained.
    pub infimum_flag: bool,
    pub grid_size: usize,
    pub lp_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PointKind {
    Lattice,
    Prior,
    Boundary,
    Probe,
}

/// Grid of candidate posteriors with `Psi_e` and `h` precomputed; reusable
/// across capacities.
pub struct SplittingSolver<'a, T: Real> {
    problem: &'a ProblemSpec<T>,
    config: GridConfig,
    points: Vec<Vec<T>>,
    kinds: Vec<PointKind>,
    psi: Vec<T>,
    h: Vec<T>,
    /// Support of the prior; the remaining coordinates stay zero.
    support: Vec<usize>,
    entropy_u_given_z: T,
}

impl<'a, T: Real> SplittingSolver<'a, T> {
    pub fn new(problem: &'a ProblemSpec<T>, config: GridConfig) -> Result<Self, SolveError> {
        config.validate()?;
        let support = problem.support();
        let (points, kinds) = build_grid(problem, &support, &config);
        let tie_tol = T::lit(config.tie_tol);
        let (psi, h): (Vec<T>, Vec<T>) = points
            .par_iter()
            .map(|p| {
                (
                    average_distortion_with(p, problem, tie_tol, config.tie_break),
                    average_entropy(p, problem.p_z_given_u()),
                )
            })
            .unzip();
        let entropy_u_given_z = average_entropy(problem.p_u(), problem.p_z_given_u());
        Ok(Self {
            problem,
            config,
            points,
            kinds,
            psi,
            h,
            support,
            entropy_u_given_z,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.points.len()
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    /// `H(U|Z)` in bits.
    pub fn entropy_u_given_z(&self) -> T {
        self.entropy_u_given_z
    }

    /// Rows: total weight, barycenter on all but one support symbol.
    fn barycenter_rows(&self) -> (Vec<Vec<T>>, Vec<T>) {
        let mut rows = vec![vec![T::one(); self.points.len()]];
        let mut rhs = vec![T::one()];
        let prior = self.problem.p_u();
        for &u in &self.support[..self.support.len() - 1] {
            rows.push(self.points.iter().map(|p| p[u]).collect());
            rhs.push(prior[u]);
        }
        (rows, rhs)
    }

    pub fn solve(&self, capacity: T) -> Result<SolveResult<T>, SolveError> {
        if !(capacity.is_finite() && capacity >= T::zero()) {
            return Err(invalid("capacity", format!("{capacity} must be finite and >= 0")));
        }
        let threshold = self.entropy_u_given_z - capacity;
        let (mut rows, mut rhs) = self.barycenter_rows();
        for row in rows.iter_mut() {
            row.push(T::zero());
        }
        let mut info_row = self.h.clone();
        info_row.push(-T::one());
        rows.push(info_row);
        rhs.push(threshold);
        let mut cost = self.psi.clone();
        cost.push(T::zero());

        let lp = simplex::solve(&cost, &rows, &rhs, self.config.max_lp_iter)?;
        let n = self.points.len();
        let mut atoms = Vec::new();
        let mut infimum_flag = false;
        for (g, &w) in lp.x[..n].iter().enumerate() {
            if w > T::zero() {
                infimum_flag |= self.kinds[g] == PointKind::Probe;
                atoms.push((g, w));
            }
        }
        let splitting = self.to_splitting(&atoms)?;
        let splitting = merge_by_reply_profile(splitting, self.problem, &self.config);
        let value = splitting.distortion(
            self.problem,
            T::lit(self.config.tie_tol),
            self.config.tie_break,
        );
        let slack_bits = splitting.information(self.problem) - threshold;
        Ok(SolveResult {
            value,
            splitting,
            slack_bits,
            threshold_bits: threshold,
            capacity,
            grid_step: self.config.grid_step,
            infimum_flag,
            grid_size: n,
            lp_iterations: lp.iterations,
        })
    }

    fn to_splitting(&self, atoms: &[(usize, T)]) -> Result<Splitting<T>, SolveError> {
        let total: T = atoms.iter().map(|&(_, w)| w).sum();
        Splitting::new(
            atoms
                .iter()
                .map(|&(g, w)| Atom {
                    weight: w / total,
                    posterior: Belief::new_unchecked(self.points[g].clone()),
                })
                .collect(),
        )
    }

    /// `vex[Psi_e - t h](P_U) + t (H(U|Z) - C)` on this grid.
    pub fn dual_function(&self, capacity: T, t: T) -> Result<T, SolveError> {
        let (rows, rhs) = self.barycenter_rows();
        let cost: Vec<T> = self.psi.iter().zip(&self.h).map(|(&p, &h)| p - t * h).collect();
        let lp = simplex::solve(&cost, &rows, &rhs, self.config.max_lp_iter)?;
        Ok(lp.objective + t * (self.entropy_u_given_z - capacity))
    }

    /// Maximizes [`Self::dual_function`] over `t >= 0`.
    ///
    /// The dual function is concave in `t`, so after scanning `t_grid` the
    /// bracket around the best grid value is extended while the function
    /// still increases at its right end and then narrowed by golden-section
    /// search.
    pub fn lagrangian(&self, capacity: T, t_grid: &[T]) -> Result<LagrangianResult<T>, SolveError> {
        if t_grid.is_empty() || t_grid.iter().any(|&t| !(t >= T::zero() && t.is_finite())) {
            return Err(invalid("t_grid", "must be non-empty, finite and non-negative"));
        }
        let mut ts: Vec<T> = t_grid.to_vec();
        ts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        ts.dedup();
        let mut values = ts
            .iter()
            .map(|&t| self.dual_function(capacity, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut evaluations = ts.len();

        let argmax = |values: &[T]| {
            (0..values.len())
                .max_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite"))
                .expect("non-empty")
        };
        let mut best = argmax(&values);
        // Extend to the right while the maximum sits on the last point.
        let mut doublings = 0;
        while best == ts.len() - 1 && doublings < 40 {
            let last = ts[best];
            let next = if last > T::zero() { last * T::two() } else { T::one() };
            let v = self.dual_function(capacity, next)?;
            evaluations += 1;
            ts.push(next);
            values.push(v);
            best = argmax(&values);
            doublings += 1;
        }
        let mut lo = if best > 0 { ts[best - 1] } else { ts[best] };
        let mut hi = if best + 1 < ts.len() { ts[best + 1] } else { ts[best] };
        let mut best_t = ts[best];
        let mut best_value = values[best];

        let ratio = T::lit(0.618_033_988_749_894_9);
        let mut a = hi - ratio * (hi - lo);
        let mut b = lo + ratio * (hi - lo);
        let mut fa = self.dual_function(capacity, a)?;
        let mut fb = self.dual_function(capacity, b)?;
        evaluations += 2;
        for _ in 0..80 {
            if hi - lo <= T::lit(1e-10) * (T::one() + hi) {
                break;
            }
            if fa < fb {
                lo = a;
                a = b;
                fa = fb;
                b = lo + ratio * (hi - lo);
                fb = self.dual_function(capacity, b)?;
            } else {
                hi = b;
                b = a;
                fb = fa;
                a = hi - ratio * (hi - lo);
                fa = self.dual_function(capacity, a)?;
            }
            evaluations += 1;
        }
        for (t, v) in [(a, fa), (b, fb)] {
            if v > best_value {
                best_value = v;
                best_t = t;
            }
        }
        Ok(LagrangianResult {
            value: best_value,
            best_t,
            evaluations,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LagrangianResult<T = f64> {
    pub value: T,
    pub best_t: T,
    pub evaluations: usize,
}

/// `t = 0, 0.25, ..., 10`.
pub fn default_t_grid<T: Real>() -> Vec<T> {
    (0..=40).map(|i| T::lit(f64::from(i) * 0.25)).collect()
}

/// Candidate posteriors: lattice points, the prior, and points at and
/// `tie_probe_eps` around each crossing of a best-reply boundary with a
/// lattice edge.
fn build_grid<T: Real>(
    problem: &ProblemSpec<T>,
    support: &[usize],
    config: &GridConfig,
) -> (Vec<Vec<T>>, Vec<PointKind>) {
    let u_size = problem.u_size();
    let d = support.len();
    let steps = (1.0 / config.grid_step).ceil() as usize;
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    let mut kinds = Vec::new();
    let mut push = |p: Vec<T>, kind: PointKind, points: &mut Vec<Vec<T>>, kinds: &mut Vec<PointKind>| {
        let key: Vec<i64> = p.iter().map(|&x| (x.to_f64_lossy() * 1e13).round() as i64).collect();
        if seen.insert(key) {
            points.push(p);
            kinds.push(kind);
        }
    };

    let embed = |counts: &[usize]| -> Vec<T> {
        let mut p = vec![T::zero(); u_size];
        let total = T::from_usize(steps).expect("steps");
        for (&u, &c) in support.iter().zip(counts) {
            p[u] = T::from_usize(c).expect("count") / total;
        }
        p
    };

    let mut lattice = Vec::new();
    let mut counts = vec![0usize; d];
    compositions(steps, 0, &mut counts, &mut lattice);
    push(problem.p_u().to_vec(), PointKind::Prior, &mut points, &mut kinds);
    for c in &lattice {
        push(embed(c), PointKind::Lattice, &mut points, &mut kinds);
    }
    if d < 2 {
        return (points, kinds);
    }

    // Linear forms whose sign decides between two decoder symbols.
    let pzu = problem.p_z_given_u();
    let d_d = problem.d_d();
    let mut forms: Vec<Vec<T>> = Vec::new();
    for z in 0..problem.z_size() {
        for v in 0..problem.v_size() {
            for w in v + 1..problem.v_size() {
                let f: Vec<T> = (0..u_size)
                    .map(|u| pzu[u][z] * (d_d.get(u, z, v) - d_d.get(u, z, w)))
                    .collect();
                if f.iter().any(|&c| c != T::zero()) {
                    forms.push(f);
                }
            }
        }
    }
    let eval = |f: &[T], p: &[T]| -> T { f.iter().zip(p).map(|(&a, &b)| a * b).sum() };
    let eps = T::lit(config.tie_probe_eps);
    let scale = T::one() / T::from_usize(steps).expect("steps");
    for c in &lattice {
        let a = embed(c);
        for i in 0..d {
            if c[i] == 0 {
                continue;
            }
            for j in 0..d {
                if j == i {
                    continue;
                }
                // Edge a -> a + (e_j - e_i) / steps. Each edge is seen from
                // both ends; duplicates are dropped by `push`.
                let mut b = a.clone();
                b[support[i]] -= scale;
                b[support[j]] += scale;
                for f in &forms {
                    let fa = eval(f, &a);
                    let fb = eval(f, &b);
                    let crosses = fa == T::zero() || (fa < T::zero()) != (fb < T::zero()) && fb != T::zero();
                    if !crosses {
                        continue;
                    }
                    let t = if fa == T::zero() { T::zero() } else { fa / (fa - fb) };
                    let at = |s: T| -> Option<Vec<T>> {
                        let mut p = a.clone();
                        p[support[i]] -= s;
                        p[support[j]] += s;
                        p.iter().all(|&x| x >= T::zero()).then_some(p)
                    };
                    let s0 = t * scale;
                    if let Some(p) = at(s0) {
                        push(p, PointKind::Boundary, &mut points, &mut kinds);
                    }
                    for s in [s0 - eps, s0 + eps] {
                        if let Some(p) = at(s) {
                            push(p, PointKind::Probe, &mut points, &mut kinds);
                        }
                    }
                }
            }
        }
    }
    (points, kinds)
}

fn compositions(remaining: usize, index: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if index == counts.len() - 1 {
        counts[index] = remaining;
        out.push(counts.clone());
        return;
    }
    for c in 0..=remaining {
        counts[index] = c;
        compositions(remaining - c, index + 1, counts, out);
    }
}

/// Merges atoms with identical decoder reply profiles when the support
/// exceeds `|V|^|Z|`. Along a fixed profile `Psi_e` is linear and `h` is
/// concave, so merging keeps the constraint; the merge is kept only if the
/// value does not increase (ties at the merged point may change replies).
fn merge_by_reply_profile<T: Real>(
    splitting: Splitting<T>,
    problem: &ProblemSpec<T>,
    config: &GridConfig,
) -> Splitting<T> {
    let bound = (problem.v_size() as f64).powi(problem.z_size() as i32);
    if (splitting.len() as f64) <= bound {
        return splitting;
    }
    let tie_tol = T::lit(config.tie_tol);
    let mut groups: Vec<(Vec<Option<usize>>, T, Vec<T>)> = Vec::new();
    for a in splitting.atoms() {
        let profile = reply_profile(&a.posterior, problem, tie_tol, config.tie_break);
        match groups.iter_mut().find(|g| g.0 == profile) {
            Some(g) => {
                g.1 += a.weight;
                for (s, &p) in g.2.iter_mut().zip(a.posterior.iter()) {
                    *s += a.weight * p;
                }
            }
            None => groups.push((
                profile,
                a.weight,
                a.posterior.iter().map(|&p| a.weight * p).collect(),
            )),
        }
    }
    let merged = Splitting {
        atoms: groups
            .into_iter()
            .map(|(_, w, s)| Atom {
                weight: w,
                posterior: Belief::new_unchecked(s.into_iter().map(|x| x / w).collect()),
            })
            .collect(),
    };
    let before = splitting.distortion(problem, tie_tol, config.tie_break);
    let after = merged.distortion(problem, tie_tol, config.tie_break);
    if after <= before + T::lit(1e-12) {
        merged
    } else {
        splitting
    }
}

/// Optimal encoder distortion at the given capacity.
pub fn solve_splitting<T: Real>(
    problem: &ProblemSpec<T>,
    capacity: T,
    config: &GridConfig,
) -> Result<SolveResult<T>, SolveError> {
    SplittingSolver::new(problem, *config)?.solve(capacity)
}

/// Encoder distortion without communication: the decoder replies to the
/// side information alone.
pub fn zero_capacity_value<T: Real>(problem: &ProblemSpec<T>) -> T {
    crate::best_reply::average_distortion(problem.p_u(), problem)
}

pub fn lagrangian_value<T: Real>(
    problem: &ProblemSpec<T>,
    capacity: T,
    t_grid: &[T],
    config: &GridConfig,
) -> Result<LagrangianResult<T>, SolveError> {
    SplittingSolver::new(problem, *config)?.lagrangian(capacity, t_grid)
}

/// `(C, D_e*)` for each capacity, on a single shared grid.
pub fn tradeoff_curve<T: Real>(
    problem: &ProblemSpec<T>,
    capacities: &[T],
    config: &GridConfig,
) -> Result<Vec<(T, T)>, SolveError> {
    if capacities.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("capacities", "must be sorted ascending"));
    }
    let solver = SplittingSolver::new(problem, *config)?;
    capacities
        .iter()
        .map(|&c| solver.solve(c).map(|r| (c, r.value)))
        .collect()
}

/// Encoding strategy `Q(w|u) = lambda_w p_w(u) / P(u)`, indexed `[u][w]`.
/// Rows of zero-prior symbols carry the weights themselves.
pub fn strategy_from_splitting<T: Real>(
    splitting: &Splitting<T>,
    prior: &[T],
) -> Result<Vec<Vec<T>>, SolveError> {
    let mut table = Vec::with_capacity(prior.len());
    for (u, &pu) in prior.iter().enumerate() {
        if pu > T::zero() {
            table.push(
                splitting
                    .atoms()
                    .iter()
                    .map(|a| a.weight * a.posterior[u] / pu)
                    .collect(),
            );
        } else {
            let mass: T = splitting.atoms().iter().map(|a| a.weight * a.posterior[u]).sum();
            if mass > T::prob_tol() {
                return Err(SolveError::ZeroPrior { u, mass: mass.to_f64_lossy() });
            }
            table.push(splitting.atoms().iter().map(|a| a.weight).collect());
        }
    }
    Ok(table)
}

/// Splitting induced by `Q(w|u)` (indexed `[u][w]`) at `prior`; unused
/// codewords are dropped and identical posteriors merged.
pub fn splitting_from_strategy<T: Real>(
    q_w_given_u: &[Vec<T>],
    prior: &[T],
) -> Result<Splitting<T>, SolveError> {
    if q_w_given_u.len() != prior.len() {
        return Err(invalid("strategy", "needs one row per source symbol"));
    }
    let w_size = q_w_given_u.first().map_or(0, Vec::len);
    let mut atoms: Vec<Atom<T>> = Vec::new();
    for w in 0..w_size {
        let joint: Vec<T> = prior
            .iter()
            .zip(q_w_given_u)
            .map(|(&pu, row)| pu * row[w])
            .collect();
        let weight: T = joint.iter().copied().sum();
        if !(weight > T::zero()) {
            continue;
        }
        let posterior: Vec<T> = joint.iter().map(|&j| j / weight).collect();
        let same = atoms.iter_mut().find(|a| {
            a.posterior
                .iter()
                .zip(&posterior)
                .all(|(&x, &y)| (x - y).abs() <= T::lit(1e-12))
        });
        match same {
            Some(a) => a.weight += weight,
            None => atoms.push(Atom {
                weight,
                posterior: Belief::new_unchecked(posterior),
            }),
        }
    }
    Splitting::new(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_model::{dsbs_to_problem, DistortionTable, DsbsParams};

    fn dsbs(delta: f64, kappa: f64) -> ProblemSpec<f64> {
        dsbs_to_problem(&DsbsParams::<f64>::symmetric(0.5, delta, kappa, 0.0).unwrap(), None).unwrap()
    }

    #[test]
    fn symmetric_example_at_c_04() {
        let problem = dsbs(0.3, 0.0);
        let r = solve_splitting(&problem, 0.4, &GridConfig::with_step(1e-3)).unwrap();
        assert!((r.value - 0.121_161_084).abs() < 2e-3, "{}", r.value);
        assert!(r.splitting.len() <= 3);
        assert!(r.slack_bits >= -1e-9);
        assert!(r.splitting.barycenter_error(problem.p_u()) < 1e-8);
    }

    #[test]
    fn zero_and_large_capacity() {
        let problem = dsbs(0.3, 0.0);
        let solver = SplittingSolver::new(&problem, GridConfig::with_step(1e-2)).unwrap();
        assert!((solver.solve(0.0).unwrap().value - 0.3).abs() < 1e-9);
        assert!(solver.solve(1.0).unwrap().value.abs() < 1e-12);
        assert!((zero_capacity_value(&problem) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_capacity_examples() {
        let d = DistortionTable::hamming(2, 2);
        let perfect = ProblemSpec::new(
            vec![vec![0.4, 0.0], vec![0.0, 0.6]],
            None,
            d.clone(),
            d,
        )
        .unwrap();
        assert_eq!(zero_capacity_value(&perfect), 0.0);

        let indep = dsbs_to_problem(&DsbsParams::<f64>::symmetric(0.5, 0.5, 0.75, 0.0).unwrap(), None).unwrap();
        assert!((zero_capacity_value(&indep) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_distortion_gives_flat_curve() {
        let d_e = DistortionTable::from_rows(2, 2, vec![vec![0.7, 0.7]; 4]).unwrap();
        let d_d = DistortionTable::hamming(2, 2);
        let problem = ProblemSpec::new(vec![vec![0.2f64, 0.3], vec![0.1, 0.4]], None, d_e, d_d).unwrap();
        let curve = tradeoff_curve(&problem, &[0.0, 0.3, 2.0], &GridConfig::with_step(0.05)).unwrap();
        for (_, v) in curve {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn unsorted_capacities_rejected() {
        let problem = dsbs(0.3, 0.0);
        assert!(tradeoff_curve(&problem, &[0.2, 0.1], &GridConfig::with_step(0.1)).is_err());
    }

    #[test]
    fn bad_grid_step_rejected() {
        let problem = dsbs(0.3, 0.0);
        assert!(solve_splitting(&problem, 0.1, &GridConfig::with_step(0.0)).is_err());
        assert!(solve_splitting(&problem, 0.1, &GridConfig::with_step(0.7)).is_err());
        assert!(solve_splitting(&problem, -0.1, &GridConfig::with_step(0.1)).is_err());
    }

    #[test]
    fn lagrangian_matches_primal() {
        let problem = dsbs(0.3, 0.0);
        let config = GridConfig::with_step(1e-3);
        let solver = SplittingSolver::new(&problem, config).unwrap();
        let primal = solver.solve(0.4).unwrap().value;
        let dual = solver.lagrangian(0.4, &default_t_grid()).unwrap();
        assert!((primal - dual.value).abs() < 1e-3, "{primal} vs {dual:?}");
        assert!(dual.value <= primal + 1e-9);
    }

    #[test]
    fn lagrangian_at_zero_multiplier_is_convex_closure() {
        let problem = dsbs(0.3, 0.0);
        let config = GridConfig::with_step(1e-2);
        let r = lagrangian_value(&problem, 1.0, &[0.0], &config).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert_eq!(r.best_t, 0.0);
    }

    #[test]
    fn strategy_examples() {
        let prior = [0.5, 0.5];
        let single = Splitting::new(vec![Atom { weight: 1.0, posterior: Belief::binary(0.5) }]).unwrap();
        assert_eq!(strategy_from_splitting(&single, &prior).unwrap(), vec![vec![1.0], vec![1.0]]);

        let reveal = Splitting::new(vec![
            Atom { weight: 0.5, posterior: Belief::binary(0.0) },
            Atom { weight: 0.5, posterior: Belief::binary(1.0) },
        ])
        .unwrap();
        assert_eq!(
            strategy_from_splitting(&reveal, &prior).unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
    }

    #[test]
    fn zero_prior_with_mass_is_an_error() {
        let s = Splitting::new(vec![Atom { weight: 1.0, posterior: Belief::binary(0.5) }]).unwrap();
        assert!(matches!(
            strategy_from_splitting(&s, &[1.0, 0.0]),
            Err(SolveError::ZeroPrior { u: 1, .. })
        ));
    }

    #[test]
    fn strategy_round_trip_merges_duplicates() {
        let q: Vec<Vec<f64>> = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let s = splitting_from_strategy(&q, &[0.3, 0.7]).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.atoms()[0].weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn probes_reach_the_discontinuity() {
        let problem = dsbs_to_problem(&DsbsParams::<f64>::new(0.5, 0.05, 0.5, 0.75, 0.2).unwrap(), None).unwrap();
        let r = solve_splitting(&problem, 0.2, &GridConfig::with_step(1e-3)).unwrap();
        assert!((r.value - 0.172_058_5).abs() < 2e-4, "{}", r.value);
        assert!(r.infimum_flag);
    }

    #[test]
    fn splitting_serializes_as_list() {
        let s = Splitting::new(vec![Atom { weight: 1.0, posterior: Belief::binary(0.25) }]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"[{"weight":1.0,"posterior":[0.75,0.25]}]"#);
    }
}
