//! Bayes updates and the decoder's best reply with the worst-for-encoder
//! tie-break.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::info_measures::Belief;
use crate::problem_model::{DistortionTable, DsbsParams, ProblemSpec};
use crate::scalar::Real;

/// Membership tolerance for the decoder's set of minimizers.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BestReplyError {
    #[error("side information z{z} has probability zero under the interim belief")]
    UnreachableEvidence { z: usize },
}

/// Which minimizer the decoder picks when several are optimal for it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// The minimizer with the largest encoder distortion.
    #[default]
    WorstForEncoder,
    /// The minimizer with the smallest encoder distortion.
    BestForEncoder,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestReplySet<T = f64> {
    /// Symbols within the tie tolerance of the decoder's minimum.
    pub minimizers: Vec<usize>,
    pub selected: usize,
    pub decoder_value: T,
    pub encoder_value: T,
}

/// Posterior `p(u | z)` from interim belief `q` (before observing `z`).
pub fn bayes_interim_to_posterior<T: Real>(
    q: &[T],
    z: usize,
    p_z_given_u: &[Vec<T>],
) -> Result<Belief<T>, BestReplyError> {
    let joint: Vec<T> = q
        .iter()
        .zip(p_z_given_u)
        .map(|(&qu, row)| qu * row[z])
        .collect();
    let evidence: T = joint.iter().copied().sum();
    if !(evidence > T::zero()) {
        return Err(BestReplyError::UnreachableEvidence { z });
    }
    Ok(Belief::new_unchecked(
        joint.into_iter().map(|j| j / evidence).collect(),
    ))
}

fn expected<T: Real>(p: &[T], table: &DistortionTable<T>, z: usize, v: usize) -> T {
    p.iter()
        .enumerate()
        .map(|(u, &pu)| pu * table.get(u, z, v))
        .sum()
}

/// Worst-for-encoder best reply at side information `z` and belief `p`.
pub fn best_reply<T: Real>(
    z: usize,
    p: &[T],
    d_e: &DistortionTable<T>,
    d_d: &DistortionTable<T>,
    tie_tol: T,
) -> BestReplySet<T> {
    best_reply_with(z, p, d_e, d_d, tie_tol, TieBreak::WorstForEncoder)
}

/// [`best_reply`] with an explicit tie-break rule. Remaining ties between
/// equally ranked minimizers go to the lowest symbol index.
pub fn best_reply_with<T: Real>(
    z: usize,
    p: &[T],
    d_e: &DistortionTable<T>,
    d_d: &DistortionTable<T>,
    tie_tol: T,
    tie_break: TieBreak,
) -> BestReplySet<T> {
    let v_size = d_d.v_size();
    let decoder: Vec<T> = (0..v_size).map(|v| expected(p, d_d, z, v)).collect();
    let best = decoder.iter().copied().fold(T::infinity(), T::min);
    let minimizers: Vec<usize> = (0..v_size)
        .filter(|&v| decoder[v] <= best + tie_tol)
        .collect();
    let mut selected = minimizers[0];
    let mut encoder_value = expected(p, d_e, z, selected);
    for &v in &minimizers[1..] {
        let e = expected(p, d_e, z, v);
        let better = match tie_break {
            TieBreak::WorstForEncoder => e > encoder_value,
            TieBreak::BestForEncoder => e < encoder_value,
        };
        if better {
            selected = v;
            encoder_value = e;
        }
    }
    BestReplySet {
        minimizers,
        selected,
        decoder_value: decoder[selected],
        encoder_value,
    }
}

/// Encoder's expected distortion at the worst-for-encoder best reply.
pub fn robust_distortion<T: Real>(
    z: usize,
    p: &[T],
    d_e: &DistortionTable<T>,
    d_d: &DistortionTable<T>,
) -> T {
    best_reply(z, p, d_e, d_d, T::lit(DEFAULT_TIE_TOL)).encoder_value
}

/// Decoder's reply for every side-information symbol at interim belief
/// `q`; `None` where that symbol has probability zero.
pub fn reply_profile<T: Real>(
    q: &[T],
    problem: &ProblemSpec<T>,
    tie_tol: T,
    tie_break: TieBreak,
) -> Vec<Option<usize>> {
    (0..problem.z_size())
        .map(|z| {
            bayes_interim_to_posterior(q, z, problem.p_z_given_u())
                .ok()
                .map(|post| {
                    best_reply_with(z, &post, problem.d_e(), problem.d_d(), tie_tol, tie_break)
                        .selected
                })
        })
        .collect()
}

/// Encoder distortion averaged over side information at interim belief `q`.
pub fn average_distortion<T: Real>(q: &[T], problem: &ProblemSpec<T>) -> T {
    average_distortion_with(q, problem, T::lit(DEFAULT_TIE_TOL), TieBreak::WorstForEncoder)
}

pub fn average_distortion_with<T: Real>(
    q: &[T],
    problem: &ProblemSpec<T>,
    tie_tol: T,
    tie_break: TieBreak,
) -> T {
    let pzu = problem.p_z_given_u();
    let mut total = T::zero();
    for z in 0..problem.z_size() {
        let Ok(post) = bayes_interim_to_posterior(q, z, pzu) else {
            continue;
        };
        let v = best_reply_with(z, &post, problem.d_e(), problem.d_d(), tie_tol, tie_break)
            .selected;
        for (u, &qu) in q.iter().enumerate() {
            total += qu * pzu[u][z] * problem.d_e().get(u, z, v);
        }
    }
    total
}

/// Interim-belief thresholds of the binary example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds<T = f64> {
    /// Above it the decoder answers `v1` after seeing `z0`.
    pub nu0: T,
    /// Above it the decoder answers `v1` after seeing `z1`.
    pub nu1: T,
    /// Posterior threshold `(1 + kappa) / 2`.
    pub gamma: T,
}

pub fn belief_thresholds<T: Real>(params: &DsbsParams<T>) -> Thresholds<T> {
    let one = T::one();
    let gamma = (one + params.kappa) / T::two();
    let (d0, d1) = (params.delta0, params.delta1);
    let nu0 = gamma * (one - d0) / (d1 * (one - gamma) + gamma * (one - d0));
    let nu1 = gamma * d0 / ((one - d1) * (one - gamma) + gamma * d0);
    Thresholds { nu0, nu1, gamma }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_model::dsbs_to_problem;

    fn kappa_table(kappa: f64) -> DistortionTable<f64> {
        DistortionTable::independent_of_z(1, &[vec![0.0, 1.0 + kappa], vec![1.0, kappa]]).unwrap()
    }

    #[test]
    fn bayes_update_examples() {
        let pzu: Vec<Vec<f64>> = vec![vec![0.95, 0.05], vec![0.5, 0.5]];
        let p = bayes_interim_to_posterior(&[0.5, 0.5], 0, &pzu).unwrap();
        assert!((p[1] - 0.25 / 0.725).abs() < 1e-15);
        assert!((p[1] - 0.344_828).abs() < 1e-6);

        let p = bayes_interim_to_posterior(&[1.0, 0.0], 1, &pzu).unwrap();
        assert_eq!(p[1], 0.0);

        let sym: Vec<Vec<f64>> = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
        let p = bayes_interim_to_posterior(&[0.5, 0.5], 0, &sym).unwrap();
        assert!((p[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bayes_update_rejects_impossible_evidence() {
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            bayes_interim_to_posterior(&[1.0, 0.0], 1, &perfect),
            Err(BestReplyError::UnreachableEvidence { z: 1 })
        ));
    }

    #[test]
    fn threshold_reply_with_kappa() {
        let d_e = DistortionTable::hamming(2, 1);
        let d_d = kappa_table(0.75);
        let r = best_reply(0, &[0.1, 0.9], &d_e, &d_d, 1e-9);
        assert_eq!(r.minimizers, vec![1]);
        assert_eq!(r.selected, 1);
        assert!((r.encoder_value - 0.1).abs() < 1e-15);

        let r = best_reply(0, &[0.125, 0.875], &d_e, &d_d, 1e-9);
        assert_eq!(r.minimizers, vec![0, 1]);
        assert_eq!(r.selected, 0);
        assert_eq!(r.encoder_value, 0.875);

        let best = best_reply_with(0, &[0.125, 0.875], &d_e, &d_d, 1e-9, TieBreak::BestForEncoder);
        assert_eq!(best.selected, 1);
    }

    #[test]
    fn point_mass_gets_matching_symbol() {
        let d = DistortionTable::hamming(2, 1);
        let r = best_reply(0, &[1.0, 0.0], &d, &d, 1e-9);
        assert_eq!(r.selected, 0);
        assert_eq!(r.encoder_value, 0.0);
        assert_eq!(robust_distortion(0, &[1.0, 0.0], &d, &d), 0.0);
    }

    #[test]
    fn robust_distortion_examples() {
        let d_e = DistortionTable::hamming(2, 1);
        let d_d = kappa_table(0.75);
        assert!((robust_distortion(0, &[0.1, 0.9], &d_e, &d_d) - 0.1).abs() < 1e-15);
        assert_eq!(robust_distortion(0, &[0.125, 0.875], &d_e, &d_d), 0.875);
    }

    #[test]
    fn average_distortion_dsbs() {
        let params = DsbsParams::<f64>::symmetric(0.5, 0.3, 0.0, 0.0).unwrap();
        let problem = dsbs_to_problem(&params, None).unwrap();
        assert!((average_distortion(&[0.5, 0.5], &problem) - 0.3).abs() < 1e-15);
        assert!((average_distortion(&[0.9, 0.1], &problem) - 0.1).abs() < 1e-15);
        assert_eq!(average_distortion(&[1.0, 0.0], &problem), 0.0);
    }

    #[test]
    fn thresholds() {
        let t = belief_thresholds(&DsbsParams::<f64>::new(0.5, 0.05, 0.5, 0.75, 0.2).unwrap());
        assert_eq!(t.gamma, 0.875);
        assert!((t.nu1 - 0.04375 / 0.10625).abs() < 1e-15);
        assert!((t.nu0 - 0.83125 / 0.89375).abs() < 1e-15);

        let t = belief_thresholds(&DsbsParams::<f64>::symmetric(0.5, 0.3, 0.0, 0.0).unwrap());
        assert!((t.nu1 - 0.3).abs() < 1e-15 && (t.nu0 - 0.7).abs() < 1e-15);

        let t = belief_thresholds(&DsbsParams::<f64>::new(0.5, 0.2, 0.8, 0.4, 0.0).unwrap());
        assert!((t.nu0 - t.nu1).abs() < 1e-15);
    }

    #[test]
    fn reply_profile_skips_impossible_side_information() {
        let d = DistortionTable::hamming(2, 2);
        let problem = ProblemSpec::new(
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            None,
            d.clone(),
            d,
        )
        .unwrap();
        let profile = reply_profile(&[1.0, 0.0], &problem, 1e-9, TieBreak::WorstForEncoder);
        assert_eq!(profile, vec![Some(0), None]);
    }
}
