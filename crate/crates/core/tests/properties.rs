use longimix_core::panel::{apply_transforms, read_csv, split, Column, PanelDataset, SplitSpec, TransformSpec};
use longimix_core::synth::{simulate_panel, SynthConfig};
use proptest::prelude::*;

/// A panel with between two and `rows` visits per subject.
fn panel(subjects: usize, rows: usize, keep: &[bool], seed: u64) -> PanelDataset {
    let cfg = SynthConfig { n_subjects: subjects, rows_per_subject: rows, time_span: 150.0, seed, ..Default::default() };
    let full = simulate_panel(&cfg, |r| 25.0 + 3.0 * r.get(Column::Hnr)).data;
    let kept: Vec<_> = full
        .rows()
        .iter()
        .enumerate()
        .filter(|(i, _)| i % rows < 2 || keep[i % keep.len()])
        .map(|(_, r)| {
            let mut r = r.clone();
            r.total_updrs = r.total_updrs.abs() + 1.0;
            r
        })
        .collect();
    PanelDataset::from_rows(kept, "proptest").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn last_row_split_holds_out_each_subjects_final_visit(
        subjects in 2usize..12, rows in 2usize..9, keep in proptest::collection::vec(any::<bool>(), 1..20), seed in 0u64..1000
    ) {
        let data = panel(subjects, rows, &keep, seed);
        let (train, test) = split(&data, &SplitSpec::last_row()).unwrap();
        prop_assert_eq!(test.len(), subjects);
        prop_assert_eq!(train.len() + test.len(), data.len());
        for t in test.rows() {
            let latest = data.rows().iter().filter(|r| r.subject == t.subject).map(|r| r.test_time).fold(f64::MIN, f64::max);
            prop_assert_eq!(t.test_time, latest);
            prop_assert!(train.rows().iter().filter(|r| r.subject == t.subject).all(|r| r.test_time <= t.test_time));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(subjects in 1usize..6, rows in 2usize..6, seed in 0u64..1000) {
        let data = panel(subjects, rows, &[true], seed);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.rows(), data.rows());
    }

    #[test]
    fn transforms_use_training_statistics_and_invert(
        subjects in 3usize..8, rows in 2usize..6, seed in 0u64..1000, y in 0.5f64..200.0
    ) {
        let data = panel(subjects, rows, &[true], seed);
        let (train, test) = split(&data, &SplitSpec::last_row()).unwrap();
        let (train_t, test_t, fitted) = apply_transforms(&train, &test, &TransformSpec::new(true, true)).unwrap();
        let ages = train_t.column(Column::Age);
        let mean = ages.iter().sum::<f64>() / ages.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        let stats = fitted.stats_for(Column::Age).unwrap();
        for (raw, t) in test.rows().iter().zip(test_t.rows()) {
            prop_assert!((t.age - (raw.age - stats.mean) / stats.sd).abs() < 1e-12);
            prop_assert!((t.total_updrs - raw.total_updrs.ln()).abs() < 1e-12);
            prop_assert_eq!(t.test_time, (raw.test_time - fitted.stats_for(Column::TestTime).unwrap().mean) / fitted.stats_for(Column::TestTime).unwrap().sd);
        }
        prop_assert!((fitted.inverse_response(fitted.forward_response(y)) - y).abs() < 1e-12 * y);
    }
}
