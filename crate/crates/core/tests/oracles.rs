use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use risnoma_core::channel::rayleigh;
use risnoma_core::env::{ActionId, Env, SceneConfig};
use risnoma_core::precoding::{
    interference_columns, orthogonal_projection, ph_noma_precoder, transmit_powers, zf_precoder, SinrTargets,
};
use risnoma_core::ComplexMatrix;

fn zf_residual(seed: u64, m: usize, l: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rayleigh(l, m, &mut rng);
    let w = zf_precoder(&rows).unwrap();
    rows.matmul(w.matrix()).unwrap().sub(&ComplexMatrix::identity(l)).unwrap().frobenius_norm()
}

/// Largest of ‖P − Pᴴ‖, ‖P² − P‖ and ‖PĤ‖.
fn projection_error(seed: u64, m: usize, c: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rayleigh(m, c, &mut rng);
    let p = orthogonal_projection(&h, m).unwrap();
    let herm = p.sub(&p.adjoint()).unwrap().frobenius_norm();
    let idem = p.matmul(&p).unwrap().sub(&p).unwrap().frobenius_norm();
    let null = p.matmul(&h).unwrap().frobenius_norm();
    herm.max(idem).max(null)
}

/// Relative errors of (γ_a, γ_b, P_a, P_b) for one random cluster.
fn closed_loop_errors(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<ComplexMatrix> = (0..4).map(|_| rayleigh(6, 1, &mut rng)).collect();
    let p = orthogonal_projection(&interference_columns(&channels, 0, 1).unwrap(), 6).unwrap();
    let t = SinrTargets::new(rng.random_range(0.1..20.0), rng.random_range(0.1..20.0)).unwrap();
    let noise = 10f64.powf(rng.random_range(-14.0..0.0));
    let beams = ph_noma_precoder(&channels[0], &channels[1], &p, t, noise).unwrap();
    let g_a = p.matmul(&channels[0]).unwrap();
    let g_b = p.matmul(&channels[1]).unwrap();
    let sig_a = g_a.inner_product(&beams.w_a).unwrap().norm_sqr();
    let sig_b = g_b.inner_product(&beams.w_b).unwrap().norm_sqr();
    let int_b = g_b.inner_product(&beams.w_a).unwrap().norm_sqr();
    let (pa, pb) = transmit_powers(&beams, t, noise);
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
    [
        rel(sig_a / noise, t.gamma_a),
        rel(sig_b / (int_b + noise), t.gamma_b),
        rel(pa, beams.w_a.norm_sqr()),
        rel(pb, beams.w_b.norm_sqr()),
    ]
}

#[test]
fn zf_residual_over_a_thousand_instances() {
    let start = std::time::Instant::now();
    let worst = (0..1000).map(|s| zf_residual(s, 6, 3)).fold(0.0, f64::max);
    assert!(worst < 1e-8, "worst residual {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn projection_identities_over_a_thousand_instances() {
    let worst = (0..1000).map(|s| projection_error(s, 8, 1 + (s as usize % 7))).fold(0.0, f64::max);
    assert!(worst < 1e-10, "worst error {worst:e}");
}

#[test]
fn ph_closed_loop_over_a_thousand_instances() {
    for s in 0..1000 {
        let [ga, gb, pa, pb] = closed_loop_errors(s);
        assert!(ga < 1e-6 && gb < 1e-6, "seed {s}: SINR errors {ga:e} {gb:e}");
        assert!(pa < 1e-8 && pb < 1e-8, "seed {s}: power errors {pa:e} {pb:e}");
    }
}

#[test]
fn rewards_telescope_over_a_trajectory() {
    for seed in 0..5 {
        let mut env = Env::new(SceneConfig::desk(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = env.ee();
        let mut sum = 0.0;
        for _ in 0..200 {
            sum += env.step(ActionId(rng.random_range(0..env.action_count()))).unwrap().reward;
        }
        assert!((sum - (env.ee() - start)).abs() < 1e-12, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zf_nulls_other_clusters(seed in any::<u64>(), m in 2usize..9, l in 1usize..5) {
        prop_assume!(l <= m);
        prop_assert!(zf_residual(seed, m, l) < 1e-8);
    }

    #[test]
    fn projection_is_an_orthogonal_projector(seed in any::<u64>(), m in 2usize..10, c in 1usize..9) {
        prop_assume!(c < m);
        prop_assert!(projection_error(seed, m, c) < 1e-10);
    }

    #[test]
    fn ph_beams_meet_their_targets(seed in any::<u64>()) {
        let [ga, gb, pa, pb] = closed_loop_errors(seed);
        prop_assert!(ga < 1e-6 && gb < 1e-6 && pa < 1e-8 && pb < 1e-8);
    }
}
