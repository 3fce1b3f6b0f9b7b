use proptest::prelude::*;

use stratcomm::best_reply::{average_distortion, robust_distortion};
use stratcomm::coding_simulator::{
    exact_posterior, generate_codebook, CodingConfig, DecodingLaws, EncoderTable, DEFAULT_MAX_CODEWORDS,
};
use stratcomm::dsbs_analytic::{dsbs_average_distortion, dsbs_solve};
use stratcomm::info_measures::{binary_entropy, channel_capacity, kl_divergence, mutual_information, Belief, InfoError};
use stratcomm::problem_model::{dsbs_to_problem, Channel, DistortionTable, DsbsParams, ProblemSpec};
use stratcomm::splitting_solver::{zero_capacity_value, GridConfig, SplittingSolver};

fn simplex(size: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, size).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn problem(u: usize, z: usize, v: usize) -> impl Strategy<Value = ProblemSpec<f64>> {
    (
        simplex(u * z),
        prop::collection::vec(0.0f64..1.0, u * z * v),
        prop::collection::vec(0.0f64..1.0, u * z * v),
    )
        .prop_map(move |(joint, de, dd)| {
            let p_uz = joint.chunks(z).map(<[f64]>::to_vec).collect();
            let table = |d: Vec<f64>| DistortionTable::from_rows(u, z, d.chunks(v).map(<[f64]>::to_vec).collect()).unwrap();
            ProblemSpec::new(p_uz, None, table(de), table(dd)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beliefs_stay_on_the_simplex(p in simplex(4), q in simplex(4), t in 0.0f64..1.0) {
        let a = Belief::new(p).unwrap();
        let b = Belief::new(q).unwrap();
        let m = a.mix(&b, t);
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn entropy_and_divergence_bounds(p in 0.0f64..=1.0, a in simplex(3), b in simplex(3)) {
        let h = binary_entropy(p).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(kl_divergence(&a, &b) >= -1e-15);
        prop_assert!(kl_divergence(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn capacity_dominates_any_input(rows in prop::collection::vec(simplex(3), 2..4), input in simplex(3)) {
        // Nearly useless channels converge slowly; the reported gap still
        // bounds the capacity from above.
        let (lower, upper) = match channel_capacity(&rows, 1e-10, 100_000) {
            Ok(cap) => (cap.capacity, cap.capacity + 1e-10),
            Err(InfoError::NonConvergence { best, gap, .. }) => (best, best + gap),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let input = &input[..rows.len()];
        let s: f64 = input.iter().sum();
        let input: Vec<f64> = input.iter().map(|x| x / s).collect();
        prop_assert!(upper >= mutual_information(&input, &rows) - 1e-9);
        prop_assert!(lower <= (rows.len().min(3) as f64).log2() + 1e-12);
    }

    #[test]
    fn robust_distortion_within_table_range(p in problem(3, 2, 3), q in simplex(3), z in 0usize..2) {
        let r = robust_distortion(z, &q, p.d_e(), p.d_d());
        prop_assert!(r >= p.d_e().min_value() - 1e-12 && r <= p.d_e().max_value() + 1e-12);
    }

    #[test]
    fn binary_closed_form_matches_generic_reply(
        p0 in 0.05f64..0.95, d0 in 0.01f64..0.49, d1 in 0.01f64..0.99, kappa in 0.0f64..0.9, q in 0.0f64..=1.0,
    ) {
        let params = DsbsParams::new(p0, d0, d1, kappa, 0.0).unwrap();
        let problem = dsbs_to_problem(&params, None).unwrap();
        let closed = dsbs_average_distortion(q, &params);
        let generic = average_distortion(&[1.0 - q, q], &problem);
        prop_assert!((closed - generic).abs() < 1e-9, "q = {q}: {closed} vs {generic}");
    }

    #[test]
    fn problem_text_round_trip(p in problem(2, 3, 2)) {
        // Loading renormalizes the joint law, so entries may move by an ulp.
        let back = ProblemSpec::<f64>::from_text(&p.to_text()).unwrap();
        for (a, b) in back.p_uz().iter().flatten().zip(p.p_uz().iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        prop_assert_eq!(back.d_e(), p.d_e());
        prop_assert_eq!(back.d_d(), p.d_d());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_value_is_monotone_and_bounded(p in problem(2, 2, 2), c1 in 0.0f64..1.0, c2 in 0.0f64..1.0) {
        let solver = SplittingSolver::new(&p, GridConfig::with_step(1e-2)).unwrap();
        let h = solver.entropy_u_given_z();
        let (lo, hi) = if c1 < c2 { (c1 * h, c2 * h) } else { (c2 * h, c1 * h) };
        let a = solver.solve(lo).unwrap();
        let b = solver.solve(hi).unwrap();
        prop_assert!(b.value <= a.value + 1e-9);
        prop_assert!(a.value <= zero_capacity_value(&p) + 1e-9);
        prop_assert!(a.splitting.barycenter_error(p.p_u()) < 1e-9);
        prop_assert!(a.slack_bits >= -1e-9);
    }

    #[test]
    fn symmetric_curve_is_monotone(delta in 0.05f64..0.45, c1 in 0.0f64..1.0, c2 in 0.0f64..1.0) {
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        let a = dsbs_solve(&DsbsParams::symmetric(0.5, delta, 0.0, lo).unwrap()).unwrap();
        let b = dsbs_solve(&DsbsParams::symmetric(0.5, delta, 0.0, hi).unwrap()).unwrap();
        prop_assert!(b.value <= a.value + 1e-12);
        prop_assert!(a.value <= delta + 1e-12 && b.value >= 0.0);
    }

    #[test]
    fn posteriors_are_normalized_and_marginally_consistent(seed in 0u64..1000, eps in 0.0f64..0.3, p0 in 0.2f64..0.8) {
        let n = 3;
        let params = DsbsParams::new(p0, 0.2, 0.3, 0.0, 0.0).unwrap();
        let channel = Channel::bsc(eps).unwrap();
        let problem = dsbs_to_problem(&params, Some(channel.clone())).unwrap();
        let config = CodingConfig {
            n,
            rate: 2.0 / 3.0,
            rate_l: 1.0 / 3.0,
            eta: 0.0,
            delta_typ: 0.7,
            delta_joint: 0.7,
            alpha: 0.3,
            q_w_given_u: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            p_w: vec![0.5, 0.5],
            p_x: vec![0.5, 0.5],
            capacity: 1.0,
            seed,
            trials: 1,
            n_max: 16,
            max_codewords: DEFAULT_MAX_CODEWORDS,
        };
        let codebook = generate_codebook(&config, seed).unwrap();
        let laws = DecodingLaws::new(&problem, &channel, &config);
        let encoder = EncoderTable::build(&codebook, &laws, n, config.delta_typ);
        let seq = |k: usize| -> Vec<u8> { (0..n).map(|t| ((k >> (n - 1 - t)) & 1) as u8).collect() };
        // P(y^n, z^n) by direct summation over source sequences.
        let mut marginal = vec![vec![0.0; 2]; n];
        for yi in 0..8 {
            for zi in 0..8 {
                let (y, z) = (seq(yi), seq(zi));
                let mut p_yz = 0.0;
                for ui in 0..8 {
                    let u = seq(ui);
                    let x = &codebook.x[encoder.get(&u).m];
                    let mut w = 1.0;
                    for t in 0..n {
                        w *= problem.p_uz()[u[t] as usize][z[t] as usize] * channel.prob(x[t] as usize, y[t] as usize);
                    }
                    p_yz += w;
                }
                if p_yz == 0.0 {
                    continue;
                }
                let post = exact_posterior(&y, &z, &codebook, &problem, &channel, &encoder);
                for t in 0..n {
                    prop_assert!((post[t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for u in 0..2 {
                        marginal[t][u] += p_yz * post[t][u];
                    }
                }
            }
        }
        for row in &marginal {
            prop_assert!((row[0] - problem.p_u()[0]).abs() < 1e-9);
            prop_assert!((row[1] - problem.p_u()[1]).abs() < 1e-9);
        }
    }
}
