use hpl_core::model::predict_observables;
use hpl_core::oracle::{click_pattern_probabilities, oracle_observables, TruncationSpec};
use hpl_core::sim::{DetectionEvent, Detector, EventLog, LogMetadata};
use hpl_core::stats::{accumulate_counts, analyze, AnalysisOptions};
use hpl_core::ExperimentParams;
use proptest::prelude::*;

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300),
        (None, None) => true,
        _ => false,
    }
}

fn noisy(chi: f64, k1: f64, k2: f64, v1: f64, v2: f64, beta: f64) -> ExperimentParams {
    ExperimentParams {
        kappa1: k1,
        kappa2: k2,
        v1b_sq: v1,
        v2b_sq: v2,
        ..ExperimentParams::reference(chi).with_beta(beta).with_eta(beta.max(0.2))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_ratios_do_not_depend_on_detection_efficiency(
        chi in 0.001f64..0.4, k1 in 0.0f64..2.0, k2 in 0.0f64..2.0,
        v1 in 0.0f64..0.05, v2 in 0.0f64..0.05, c in 0.1f64..5.0,
    ) {
        let a = predict_observables(&noisy(chi, k1, k2, v1, v2, 0.01));
        let b = predict_observables(&noisy(chi, k1, k2, v1, v2, 0.01 * c));
        prop_assert!(close(a.g11, b.g11, 1e-12));
        prop_assert!(close(a.g22, b.g22, 1e-12));
        prop_assert!(close(a.g12, b.g12, 1e-12));
        prop_assert!(close(a.r, b.r, 1e-12));
        prop_assert!(close(a.w, b.w, 1e-12));
        prop_assert!((b.p1 / a.p1 - c).abs() < 1e-12 * c);
    }

    #[test]
    fn swapping_field_labels_swaps_observables(
        chi in 0.001f64..0.3, k1 in 0.0f64..2.0, k2 in 0.0f64..2.0,
        v1 in 0.0f64..0.05, v2 in 0.0f64..0.05,
    ) {
        let p = noisy(chi, k1, k2, v1, v2, 0.05);
        let a = predict_observables(&p);
        let b = predict_observables(&p.swapped());
        prop_assert!(close(Some(a.p1), Some(b.p2), 1e-12));
        prop_assert!(close(a.g11, b.g22, 1e-12));
        prop_assert!(close(a.g12, b.g12, 1e-12));
        prop_assert!(close(a.r, b.r, 1e-12));
        let oa = oracle_observables(&click_pattern_probabilities(&p, Default::default()).unwrap());
        let ob = oracle_observables(&click_pattern_probabilities(&p.swapped(), Default::default()).unwrap());
        prop_assert!(close(oa.g11, ob.g22, 1e-10));
        prop_assert!(close(oa.g12, ob.g12, 1e-10));
    }

    #[test]
    fn classical_light_obeys_both_inequalities(
        mu1 in 1e-3f64..0.3, mu2 in 1e-3f64..0.3, beta in 0.01f64..1.0,
    ) {
        let p = ExperimentParams {
            kappa1: 0.0,
            kappa2: 0.0,
            v1b_sq: mu1,
            v2b_sq: mu2,
            ..ExperimentParams::reference(0.0).with_beta(beta).with_eta(1.0)
        };
        // Coincidence probabilities here go down to ~1e-10, far below the
        // default absolute tail tolerance.
        let tight = TruncationSpec { n_max: 2, tail_tol: 1e-30 };
        let o = oracle_observables(&click_pattern_probabilities(&p, tight).unwrap());
        prop_assert!(o.r.unwrap() <= 1.0 + 1e-9);
        prop_assert!(o.w.unwrap() >= 1.0 - 1e-9);
    }

    #[test]
    fn pair_source_is_nonclassical_at_moderate_flux(chi in 1e-3f64..0.3) {
        let p = ExperimentParams::reference(chi);
        let lin = predict_observables(&p);
        let exact = oracle_observables(&click_pattern_probabilities(&p, Default::default()).unwrap());
        for o in [lin, exact] {
            prop_assert!(o.r.unwrap() > 1.0);
            prop_assert!(o.w.unwrap() < 1.0);
        }
    }

    #[test]
    fn counting_is_idempotent_and_ignores_duplicate_events(
        raw in proptest::collection::vec((0u64..200, 0usize..4, 0u64..=100), 0..300),
    ) {
        let params = ExperimentParams::reference(0.1);
        let events: Vec<DetectionEvent> = raw
            .iter()
            .map(|&(j, d, slot)| {
                let detector = Detector::ALL[d];
                let start = j * params.rep_period_ns + if detector.field() == 2 { params.dt_ns } else { 0 };
                DetectionEvent { trial_index: j, detector, t_ns: start + 2 * slot }
            })
            .collect();
        let mut sorted = events.clone();
        sorted.sort_by_key(|e| (e.trial_index, e.t_ns, e.detector));
        let meta = LogMetadata { params, seed: None, n_trials: 200 };
        let log = EventLog { meta, events: sorted.clone() };
        let once = accumulate_counts(&log, &[1, 2]).unwrap();
        prop_assert_eq!(&once, &accumulate_counts(&log, &[1, 2]).unwrap());

        let mut doubled = sorted.clone();
        doubled.extend(sorted.iter().copied());
        doubled.sort_by_key(|e| (e.trial_index, e.t_ns, e.detector));
        let twice = accumulate_counts(&EventLog { meta, events: doubled }, &[1, 2]).unwrap();
        prop_assert_eq!(&once, &twice);

        let report = analyze(&log, &AnalysisOptions::default()).unwrap();
        prop_assert_eq!(report.m_tot, 200);
        if let Some(p1) = report.p1.value {
            prop_assert!((0.0..=2.0).contains(&p1));
        }
    }
}
