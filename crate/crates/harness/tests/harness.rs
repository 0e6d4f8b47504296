use std::path::{Path, PathBuf};

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use risnoma_core::channel::rayleigh;
use risnoma_core::metrics::mos;
use risnoma_core::noma::{achievable_rate, DecodingOrder};
use risnoma_core::units::dbm_to_watts;
use risnoma_harness::config;
use risnoma_harness::eval::{slot_budget, Scheme};
use risnoma_harness::experiment::{
    compute_experiment, run_experiment, ExperimentSpec, ResultTable, SweepVariable, Variant, RESULT_HEADER,
    SUMMARY_HEADER,
};
use risnoma_harness::presets::{self, Preset};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("risnoma-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn small(out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        name: "small".into(),
        grid: vec![6.0, 14.0],
        seeds: vec![0, 1, 2],
        baselines: vec![Variant::Oma],
        realizations: 2,
        slots: 2,
        ..presets::fig4(out)
    }
}

#[test]
fn one_row_per_point_seed_and_variant() {
    let out = scratch("rows");
    let t = run_experiment(&small(&out)).unwrap();
    assert_eq!(t.rows.len(), 2 * 3 * 2);
    let text = std::fs::read_to_string(out.join("small.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULT_HEADER.join(","));
    assert_eq!(text.lines().count(), 13);
    let summary = std::fs::read_to_string(out.join("small_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    assert_eq!(ResultTable::read_csv(text.as_bytes()).unwrap(), t);
}

#[test]
fn summary_rows_are_seed_means() {
    let t = compute_experiment(&small(Path::new("unused"))).unwrap();
    for s in t.summary() {
        let ee: Vec<f64> = t
            .rows
            .iter()
            .filter(|r| r.variant == s.variant && r.grid_value == s.grid_value)
            .map(|r| r.mean_ee)
            .collect();
        assert_eq!(s.seeds, 3);
        assert_eq!(s.mean_ee, ee.iter().sum::<f64>() / 3.0);
    }
}

#[test]
fn no_ris_drops_the_element_power() {
    let spec = ExperimentSpec {
        sweep: SweepVariable::None,
        grid: vec![10.0],
        tx_power: dbm_to_watts(10.0),
        baselines: vec![Variant::NoRis],
        seeds: vec![4],
        ..small(Path::new("unused"))
    };
    let t = compute_experiment(&spec).unwrap();
    let row = t.rows.iter().find(|r| r.variant == "no_ris").unwrap();
    let pm = spec.scene.power;
    let without = spec.tx_power + pm.p_bs + spec.scene.users as f64 * pm.p_mu;
    assert_relative_eq!(row.mean_power, without, max_relative = 1e-6);
    let with = t.rows.iter().find(|r| r.variant == "noma_ph").unwrap();
    assert_relative_eq!(with.mean_power - row.mean_power, spec.scene.elements as f64 * pm.p_n, max_relative = 1e-6);
}

#[test]
fn oma_users_see_only_noise() {
    let scene = presets::figure_scene();
    let scene = risnoma_core::env::SceneConfig { users: 2, rate_floors: vec![1e5; 2], ..scene };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<_> = (0..2).map(|_| rayleigh(1, scene.antennas, &mut rng).scale_real(1e-5)).collect();
    let order = DecodingOrder::from_pairs(&[(0, 1)]);
    let p = 0.05;
    let (sum_mos, _) = slot_budget(&scene, Scheme::Oma, &rows, &order, p).unwrap();
    let noise = scene.noise_power();
    let expect: f64 = rows
        .iter()
        .map(|h| mos(0.5 * achievable_rate(h.norm_sqr() * p / noise, scene.bandwidth), &scene.mos))
        .sum();
    assert_relative_eq!(sum_mos, expect, max_relative = 1e-9);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    run_experiment(&small(&a)).unwrap();
    run_experiment(&small(&b)).unwrap();
    for f in ["small.csv", "small_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let blocker = scratch("blocker");
    std::fs::write(&blocker, b"a file, not a directory").unwrap();
    let err = run_experiment(&small(&blocker.join("sub"))).unwrap_err();
    assert!(err.chain().any(|e| e.downcast_ref::<std::io::Error>().is_some()), "{err:#}");
    let _ = std::fs::remove_file(&blocker);
}

#[test]
fn config_files_match_the_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = Path::new("results");
    for name in presets::NAMES {
        let loaded = config::load(&root.join(format!("{name}.ini")), out).unwrap();
        assert_eq!(loaded, presets::by_name(name, out).unwrap(), "{name}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let out = Path::new("unused");
    assert!(ExperimentSpec { seeds: vec![], ..small(out) }.validate().is_err());
    assert!(ExperimentSpec { grid: vec![6.0, 2.0], ..small(out) }.validate().is_err());
    assert!(ExperimentSpec { sweep: SweepVariable::Elements, grid: vec![2.5], ..small(out) }.validate().is_err());
    let Preset::Sweep(s) = config::load_str("[experiment]\nkind = sweep\nseeds = 0..2\n", out).unwrap() else {
        panic!("expected a sweep");
    };
    assert_eq!(s.seeds, vec![0, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn summary_means_lie_within_seed_range(values in prop::collection::vec(0.0f64..10.0, 1..8)) {
        let t = ResultTable {
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &v)| risnoma_harness::experiment::ResultRow {
                    variant: "noma_ph".into(),
                    grid_value: 1.0,
                    seed: i as u64,
                    mean_ee: v,
                    mean_mos: v,
                    mean_power: 1.0,
                })
                .collect(),
        };
        let s = &t.summary()[0];
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean_ee >= lo - 1e-12 && s.mean_ee <= hi + 1e-12);
        prop_assert_eq!(s.seeds, values.len());
    }
}
