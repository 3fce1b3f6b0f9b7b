use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stratcomm::coding_simulator::{
    generate_codebook, load_target, run_trials, transmit_and_decode, wz_reconstruct, CodingConfig, DecodingLaws,
    DEFAULT_MAX_CODEWORDS,
};
use stratcomm::problem_model::{load_problem, Channel, ProblemSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn recipe(n: usize, trials: usize) -> (ProblemSpec<f64>, CodingConfig) {
    let problem = load_problem(data("dsbs_noiseless.txt")).unwrap();
    let target = load_target(data("target_regime2.txt")).unwrap();
    let mut c = CodingConfig::new(&problem, target, n, 0.05, Some(0.0)).unwrap();
    c.delta_typ = 0.4;
    c.delta_joint = 1.0;
    c.trials = trials;
    c.seed = 2024;
    (problem, c)
}

#[test]
fn distortion_band_at_n14() {
    // Optimal asymptotic distortion 0.1212; the finite-n band comes from
    // pilot runs of this recipe.
    let (p, c) = recipe(14, 500);
    let (stats, records) = run_trials(&c, &p).unwrap();
    assert!(stats.d_e >= 0.1212 - 0.05 && stats.d_e <= 0.1212 + 0.15, "d_e = {}", stats.d_e);
    for r in &records {
        assert!(r.post_dd_br <= r.post_dd_wz + 1e-9, "trial {}", r.trial);
    }
    let clean: Vec<_> = records.iter().filter(|r| !r.e_delta).collect();
    assert!(!clean.is_empty());
    let agree = clean.iter().map(|r| r.agreement).sum::<f64>() / clean.len() as f64;
    let random = clean.iter().map(|r| r.random_agreement).sum::<f64>() / clean.len() as f64;
    assert!(agree >= random, "{agree} < {random}");
    for rate in [stats.error_rate, stats.encoding_failure_rate, stats.index_error_rate, stats.agreement] {
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn near_useless_channel_decodes_like_a_random_pick() {
    let problem = load_problem(data("dsbs_noiseless.txt")).unwrap();
    let channel = Channel::bsc(0.49).unwrap();
    let config = CodingConfig {
        n: 8,
        rate: 0.5,
        rate_l: 0.0,
        eta: 0.05,
        delta_typ: 0.4,
        delta_joint: 0.4,
        alpha: 0.3,
        q_w_given_u: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        p_w: vec![0.5, 0.5],
        p_x: vec![0.5, 0.5],
        capacity: 0.0,
        seed: 0,
        trials: 1,
        n_max: 16,
        max_codewords: DEFAULT_MAX_CODEWORDS,
    };
    let laws = DecodingLaws::new(&problem, &channel, &config);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 2000;
    let mut errors = 0;
    for i in 0..draws {
        let codebook = generate_codebook(&config, i).unwrap();
        let m = rng.gen_range(0..codebook.m_size);
        let t = transmit_and_decode(m, &codebook, &channel, &[0; 8], &laws, config.delta_typ, i + 10_000);
        errors += usize::from(t.m_hat != m);
    }
    let rate = errors as f64 / draws as f64;
    assert!((rate - (1.0 - 1.0 / 16.0)).abs() < 0.05, "error rate {rate}");
}

#[test]
fn reconstruction_uses_threshold_rule() {
    let (p, c) = recipe(6, 1);
    let laws = DecodingLaws::new(&p, p.channel().unwrap(), &c);
    // Posteriors q and 1 - q with q = 0.1212 stay on the side of w
    // whatever z says, so the reply repeats w.
    let w = [0u8, 0, 1, 1, 0, 1];
    let z = [0u8, 1, 0, 1, 1, 0];
    assert_eq!(wz_reconstruct(&w, &z, &laws.posterior, &p), vec![0, 0, 1, 1, 0, 1]);
}
