use std::fmt;

use crate::error::{Error, Result};
use crate::panel::dataset::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Hold out each subject's final visit.
    LastRow,
    /// Hold out the final `ceil(fraction * n_i)` visits of each subject.
    LastFraction { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Not used by the deterministic modes; kept for provenance.
    pub seed: u64,
}

impl SplitSpec {
    pub fn last_row() -> Self {
        Self {
            mode: SplitMode::LastRow,
            seed: 0,
        }
    }

    pub fn last_fraction(fraction: f64) -> Self {
        Self {
            mode: SplitMode::LastFraction { fraction },
            seed: 0,
        }
    }

    fn holdout(&self, n: usize) -> usize {
        match self.mode {
            SplitMode::LastRow => 1,
            SplitMode::LastFraction { fraction } => (fraction * n as f64).ceil() as usize,
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            SplitMode::LastRow => write!(f, "last_row(seed={})", self.seed),
            SplitMode::LastFraction { fraction } => {
                write!(f, "last_fraction({fraction},seed={})", self.seed)
            }
        }
    }
}

/// Splits every subject's visits into a training prefix and a test suffix.
pub fn split(data: &PanelDataset, spec: &SplitSpec) -> Result<(PanelDataset, PanelDataset)> {
    if let SplitMode::LastFraction { fraction } = spec.mode {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "holdout fraction must lie in (0, 1), got {fraction}"
            )));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (subject, range) in data.subjects().iter().zip(data.groups()) {
        let n = range.len();
        let hold = spec.holdout(n);
        if n < hold + 1 {
            return Err(Error::TooFewRows {
                subject: *subject,
                needed: hold + 1,
                found: n,
            });
        }
        let rows = &data.rows()[range.clone()];
        train.extend_from_slice(&rows[..n - hold]);
        test.extend_from_slice(&rows[n - hold..]);
    }
    let mut train = data.with_rows(train);
    let mut test = data.with_rows(test);
    train.provenance.split = Some(format!("{spec}:train"));
    test.provenance.split = Some(format!("{spec}:test"));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::columns::Column;
    use crate::panel::dataset::ObservationRow;

    fn row(subject: u32, t: f64) -> ObservationRow {
        ObservationRow {
            subject,
            age: 60.0,
            sex: 0.0,
            test_time: t,
            motor_updrs: 10.0,
            total_updrs: 20.0 + t,
            voice: [0.5; 16],
        }
    }

    #[test]
    fn single_subject_last_row() {
        let ds = PanelDataset::from_rows(vec![row(7, 2.0), row(7, 3.0), row(7, 1.0)], "t").unwrap();
        let (train, test) = split(&ds, &SplitSpec::last_row()).unwrap();
        assert_eq!(test.column(Column::TestTime), vec![3.0]);
        assert_eq!(train.column(Column::TestTime), vec![1.0, 2.0]);
    }

    #[test]
    fn tie_at_the_end_takes_final_file_row() {
        let mut a = row(1, 5.0);
        a.total_updrs = 1.0;
        let mut b = row(1, 5.0);
        b.total_updrs = 2.0;
        let ds = PanelDataset::from_rows(vec![row(1, 0.0), a, b], "t").unwrap();
        let (_, test) = split(&ds, &SplitSpec::last_row()).unwrap();
        assert_eq!(test.rows()[0].total_updrs, 2.0);
    }

    #[test]
    fn fraction_mode_counts_and_errors() {
        let rows: Vec<_> = (0..10).map(|t| row(1, t as f64)).chain((0..4).map(|t| row(2, t as f64))).collect();
        let ds = PanelDataset::from_rows(rows, "t").unwrap();
        let (train, test) = split(&ds, &SplitSpec::last_fraction(0.25)).unwrap();
        // ceil(2.5) = 3 and ceil(1.0) = 1
        assert_eq!(test.len(), 4);
        assert_eq!(train.len(), 10);
        assert_eq!(test.subject_rows(1).unwrap().len(), 3);

        let short = PanelDataset::from_rows(vec![row(4, 0.0)], "t").unwrap();
        match split(&short, &SplitSpec::last_row()) {
            Err(Error::TooFewRows { subject, .. }) => assert_eq!(subject, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(split(&ds, &SplitSpec::last_fraction(1.5)).is_err());
    }
}
