use conceptlab::data::*;
use conceptlab::sim::{self, SystemState};
use proptest::prelude::*;

fn small_concepts(count: usize) -> ConceptSetConfig {
    ConceptSetConfig {
        count,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn concept_sets_are_pure_functions_of_seed(seed in any::<u64>()) {
        let cfg = small_concepts(20);
        let a = gen_concept_set(&cfg, seed).unwrap();
        let b = gen_concept_set(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        // Each window is the simulation under its stored parameters.
        for (w, c) in a.windows.iter().zip(&a.concepts).take(3) {
            let x0 = SystemState::from_array(cfg.x0);
            let traj = sim::simulate(x0, &cfg.params_for(*c), cfg.dt, cfg.seq_len - 1).unwrap();
            prop_assert_eq!(w, &Window::from_trajectory(&traj));
        }
    }

    #[test]
    fn fill_answers_invert_inflow(seed in any::<u64>()) {
        let cfg = small_concepts(6);
        let qa = QaConfig::default();
        let set = gen_qa_set(&cfg, &qa, seed).unwrap();
        for (a, c) in set.answers.iter().zip(&set.base.concepts) {
            prop_assert!((a[0] * c[0] - cfg.c * qa.h_max).abs() <= 1e-9 * cfg.c * qa.h_max);
            prop_assert!((a[1] * c[1] - cfg.c * qa.h_max).abs() <= 1e-9 * cfg.c * qa.h_max);
            prop_assert!(a[2] > 0.0 && a[3] > 0.0);
        }
    }

    #[test]
    fn lifted_rows_have_constant_leading_column(seed in any::<u64>()) {
        let cfg = SindySetConfig { num_ic: 3, ..Default::default() };
        let set = gen_sindy_set(&cfg, seed).unwrap();
        let lifted = lift_set(&set, sim::DEFAULT_H_MAX).unwrap();
        for r in 0..lifted.len() {
            prop_assert_eq!(lifted.x.get(r, 0), 1.0);
            prop_assert_eq!(lifted.xdot.get(r, 0), 0.0);
        }
    }

    #[test]
    fn lift_derivative_matches_finite_difference(h1 in 5.0f64..95.0, h2 in 5.0f64..95.0, h3 in 5.0f64..95.0,
                                                 d1 in -1.0f64..1.0, d2 in -1.0f64..1.0, d3 in -1.0f64..1.0) {
        let z = [h1 / 100.0, h2 / 100.0, h3 / 100.0];
        let zd = [d1, d2, d3];
        let eps = 1e-6;
        let up = poly_lift(&[z[0] + eps * zd[0], z[1] + eps * zd[1], z[2] + eps * zd[2]]);
        let down = poly_lift(&[z[0] - eps * zd[0], z[1] - eps * zd[1], z[2] - eps * zd[2]]);
        let exact = lift_derivative(&z, &zd);
        for k in 0..exact.len() {
            let fd = (up[k] - down[k]) / (2.0 * eps);
            prop_assert!((fd - exact[k]).abs() < 1e-7, "{k}: {fd} vs {}", exact[k]);
        }
    }
}

#[test]
fn lifted_states_span_more_than_three_dimensions() {
    let cfg = SindySetConfig {
        num_ic: 20,
        ..Default::default()
    };
    let set = gen_sindy_set(&cfg, 1).unwrap();
    let lifted = lift_set(&set, sim::DEFAULT_H_MAX).unwrap();
    let m = nalgebra::DMatrix::from_row_slice(lifted.len(), LIFT_DIM, lifted.x.data());
    assert!(m.rank(1e-9) > 3);
}

#[test]
fn state_labels_partition_the_stream() {
    let cfg = StateSetConfig {
        cycles: 3,
        windows: 200,
        test_cycles: 1,
        ..Default::default()
    };
    let set = gen_state_set(&cfg, 2).unwrap();
    assert_eq!(set.stream.len(), 3 * cfg.cycle_len());
    assert_eq!(cfg.cycle_len(), 1450);
    let counts = Phase::ALL.map(|p| set.stream.phases.iter().filter(|&&q| q == p).count());
    assert_eq!(counts.iter().sum::<usize>(), set.stream.len());
    assert_eq!(counts, [3 * 3 * 150, 3 * 3 * 100, 3 * 3 * 150, 3 * 250]);
    for k in 0..set.window_starts.len() {
        let end = set.window_starts[k] + cfg.window_len - 1;
        assert_eq!(set.window_label(k), set.stream.phases[end]);
    }
    assert_eq!(set, gen_state_set(&cfg, 2).unwrap());
}

#[test]
fn scaler_roundtrips() {
    let set = gen_concept_set(&small_concepts(10), 0).unwrap();
    let w = &set.windows[3].values;
    let back = set.scaler.inverse(&set.scaler.transform(w));
    for (a, b) in back.data().iter().zip(w.data()) {
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
