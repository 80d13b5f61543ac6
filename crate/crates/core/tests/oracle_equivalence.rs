use lsnn_oracle::{compare_classification, compare_linear, OracleConfig, RandomCase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backward_matches_scalar_tape_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut spiking = 0;
    for case_id in 0..120 {
        let case = RandomCase::sample(&mut rng, 16, 64);
        let cfg = OracleConfig { gamma: rng.gen_range(0.1..1.0), reset_grad: case_id % 5 != 0 };
        let c = compare_linear(&case, cfg, &mut rng);
        assert!(c.rasters_match, "case {case_id}: spike trains differ");
        assert!(c.forward_err < 1e-12, "case {case_id}: voltage error {}", c.forward_err);
        assert!(c.max_rel <= 1e-10, "case {case_id}: relative error {}", c.max_rel);
        if c.spikes > 0 {
            spiking += 1;
        }
    }
    assert!(spiking >= 100, "only {spiking} cases produced spikes");
}

#[test]
fn classification_loss_matches_scalar_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case_id in 0..40 {
        let case = RandomCase::sample(&mut rng, 12, 48);
        if case.params.n_out() < 2 {
            continue;
        }
        let label = rng.gen_range(0..case.params.n_out());
        let window = rng.gen_range(1..=case.inputs.rows());
        let c = compare_classification(&case, OracleConfig { gamma: 0.3, reset_grad: true }, label, window, 0.5);
        assert!(c.rasters_match, "case {case_id}");
        assert!(c.max_rel <= 1e-10, "case {case_id}: relative error {}", c.max_rel);
    }
}
