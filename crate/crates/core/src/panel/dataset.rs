use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::columns::{Column, VOICE_DIM};

/// One visit of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub subject: u32,
    pub age: f64,
    /// 0 male, 1 female.
    pub sex: f64,
    /// Days since recruitment.
    pub test_time: f64,
    pub motor_updrs: f64,
    pub total_updrs: f64,
    /// Jitter (5), shimmer (6), NHR, HNR, RPDE, DFA, PPE.
    pub voice: [f64; VOICE_DIM],
}

impl ObservationRow {
    pub fn get(&self, column: Column) -> f64 {
        match column {
            Column::Subject => self.subject as f64,
            Column::Age => self.age,
            Column::Sex => self.sex,
            Column::TestTime => self.test_time,
            Column::MotorUpdrs => self.motor_updrs,
            Column::TotalUpdrs => self.total_updrs,
            other => self.voice[other.voice_index().expect("voice column")],
        }
    }

    pub fn set(&mut self, column: Column, value: f64) {
        match column {
            Column::Subject => self.subject = value as u32,
            Column::Age => self.age = value,
            Column::Sex => self.sex = value,
            Column::TestTime => self.test_time = value,
            Column::MotorUpdrs => self.motor_updrs = value,
            Column::TotalUpdrs => self.total_updrs = value,
            other => self.voice[other.voice_index().expect("voice column")] = value,
        }
    }
}

/// Where a dataset came from and what was done to it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub transforms: Vec<String>,
    pub split: Option<String>,
}

impl Provenance {
    pub fn to_key_values(&self) -> String {
        let mut out = format!("source={}\n", self.source);
        out.push_str(&format!("transforms={}\n", self.transforms.join(";")));
        out.push_str(&format!("split={}\n", self.split.as_deref().unwrap_or("none")));
        out
    }
}

/// Subject-indexed longitudinal table. Rows are grouped by subject
/// (ascending id) and sorted by `test_time` within subject; ties keep
/// their original file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    subjects: Vec<u32>,
    rows: Vec<ObservationRow>,
    groups: Vec<Range<usize>>,
    pub provenance: Provenance,
}

impl PanelDataset {
    /// Sorts and groups `rows`. The sort is stable, so tied visit times
    /// keep the order in which they were supplied.
    pub fn from_rows(mut rows: Vec<ObservationRow>, source: impl Into<String>) -> Result<Self> {
        for (k, row) in rows.iter().enumerate() {
            validate_finite(row, k + 2)?;
        }
        rows.sort_by(|a, b| {
            a.subject
                .cmp(&b.subject)
                .then(a.test_time.total_cmp(&b.test_time))
        });
        Ok(Self::from_sorted(
            rows,
            Provenance {
                source: source.into(),
                ..Provenance::default()
            },
        ))
    }

    pub(crate) fn from_sorted(rows: Vec<ObservationRow>, provenance: Provenance) -> Self {
        let mut subjects = Vec::new();
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=rows.len() {
            if k == rows.len() || rows[k].subject != rows[start].subject {
                subjects.push(rows[start].subject);
                groups.push(start..k);
                start = k;
            }
        }
        Self {
            subjects,
            rows,
            groups,
            provenance,
        }
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_names() -> Vec<&'static str> {
        Column::ALL.iter().map(|c| c.header()).collect()
    }

    /// Row ranges, one per subject, aligned with `subjects()`.
    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn subject_rows(&self, subject: u32) -> Option<&[ObservationRow]> {
        let k = self.subjects.binary_search(&subject).ok()?;
        Some(&self.rows[self.groups[k].clone()])
    }

    pub fn column(&self, column: Column) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(column)).collect()
    }

    pub(crate) fn map_rows(&self, f: impl Fn(&mut ObservationRow)) -> Vec<ObservationRow> {
        self.rows
            .iter()
            .cloned()
            .map(|mut r| {
                f(&mut r);
                r
            })
            .collect()
    }

    pub(crate) fn with_rows(&self, rows: Vec<ObservationRow>) -> Self {
        Self::from_sorted(rows, self.provenance.clone())
    }

    /// Writes the table in the public file's format. Values are printed
    /// with the shortest representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Column::ALL.iter().map(|c| c.header()))?;
        for row in &self.rows {
            w.write_record(Column::ALL.iter().map(|&c| match c {
                Column::Subject => row.subject.to_string(),
                _ => format!("{}", row.get(c)),
            }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Plain-text `key=value` provenance next to a written CSV.
    pub fn save_provenance(&self, path: &Path) -> Result<()> {
        let mut body = self.provenance.to_key_values();
        body.push_str(&format!("rows={}\nsubjects={}\n", self.len(), self.subjects.len()));
        std::fs::write(path, body)?;
        Ok(())
    }
}

fn validate_finite(row: &ObservationRow, line: usize) -> Result<()> {
    for c in Column::ALL {
        if !row.get(c).is_finite() {
            return Err(Error::InvalidValue {
                line,
                column: c.header().to_string(),
                message: "value is not finite".into(),
            });
        }
    }
    Ok(())
}

/// Reads the telemonitoring CSV. Line numbers in errors count the header
/// as line 1.
pub fn load_csv(path: &Path) -> Result<PanelDataset> {
    let file = File::open(path)?;
    let mut ds = read_csv(file)?;
    ds.provenance.source = path.display().to_string();
    Ok(ds)
}

pub fn read_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != Column::ALL.len() {
        return Err(Error::Schema(format!(
            "expected {} columns, found {}",
            Column::ALL.len(),
            header.len()
        )));
    }
    for (got, want) in header.iter().zip(Column::ALL) {
        if got != want.header() {
            return Err(Error::Schema(format!(
                "expected column `{}`, found `{}`",
                want.header(),
                got
            )));
        }
    }

    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record?;
        if record.len() != Column::ALL.len() {
            return Err(Error::Schema(format!(
                "line {line}: expected {} fields, found {}",
                Column::ALL.len(),
                record.len()
            )));
        }
        let mut values = [0.0; 22];
        for (slot, (field, column)) in values.iter_mut().zip(record.iter().zip(Column::ALL)) {
            if field.is_empty() {
                return Err(Error::InvalidValue {
                    line,
                    column: column.header().into(),
                    message: "missing value".into(),
                });
            }
            *slot = field.parse::<f64>().map_err(|_| Error::InvalidValue {
                line,
                column: column.header().into(),
                message: format!("`{field}` is not numeric"),
            })?;
        }
        let mut row = ObservationRow {
            subject: 0,
            age: 0.0,
            sex: 0.0,
            test_time: 0.0,
            motor_updrs: 0.0,
            total_updrs: 0.0,
            voice: [0.0; VOICE_DIM],
        };
        for (value, column) in values.iter().zip(Column::ALL) {
            row.set(column, *value);
        }
        let subject = values[0];
        if subject < 0.0 || subject.fract() != 0.0 {
            return Err(Error::InvalidValue {
                line,
                column: Column::Subject.header().into(),
                message: format!("subject id `{subject}` is not a non-negative integer"),
            });
        }
        validate_finite(&row, line)?;
        if row.total_updrs <= 0.0 {
            return Err(Error::InvalidValue {
                line,
                column: Column::TotalUpdrs.header().into(),
                message: format!("total_UPDRS must be positive, found {}", row.total_updrs),
            });
        }
        rows.push(row);
    }
    PanelDataset::from_rows(rows, "<reader>")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn header() -> String {
        Column::ALL
            .iter()
            .map(|c| c.header())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn line(subject: u32, time: f64, total: f64) -> String {
        let mut fields = vec![
            subject.to_string(),
            "70".into(),
            "0".into(),
            time.to_string(),
            "20".into(),
            total.to_string(),
        ];
        fields.extend((0..16).map(|k| format!("0.{}", k + 1)));
        fields.join(",")
    }

    #[test]
    fn empty_file_with_header() {
        let ds = read_csv(format!("{}\n", header()).as_bytes()).unwrap();
        assert_eq!(ds.len(), 0);
        assert!(ds.subjects().is_empty());
    }

    #[test]
    fn one_row_per_subject() {
        let body = format!(
            "{}\n{}\n{}\n{}\n",
            header(),
            line(3, 1.0, 30.0),
            line(1, 2.0, 31.0),
            line(2, 3.0, 32.0)
        );
        let ds = read_csv(body.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.subjects(), &[1, 2, 3]);
        assert!(ds.groups().iter().all(|g| g.len() == 1));
    }

    #[test]
    fn rows_sorted_by_time_with_stable_ties() {
        let mut a = line(1, 5.0, 10.0);
        let b = line(1, 1.0, 11.0);
        let c = line(1, 5.0, 12.0);
        a.push('\n');
        let body = format!("{}\n{a}{b}\n{c}\n", header());
        let ds = read_csv(body.as_bytes()).unwrap();
        let totals: Vec<f64> = ds.column(Column::TotalUpdrs);
        assert_eq!(totals, vec![11.0, 10.0, 12.0]);
    }

    #[test]
    fn rejects_bad_inputs_with_line_numbers() {
        let wrong_header = "subject#,age\n1,2\n";
        assert!(matches!(read_csv(wrong_header.as_bytes()), Err(Error::Schema(_))));

        let renamed = header().replace("HNR", "HNR2");
        assert!(matches!(
            read_csv(format!("{renamed}\n").as_bytes()),
            Err(Error::Schema(_))
        ));

        let body = format!("{}\n{}\n{}\n", header(), line(1, 0.0, 10.0), line(1, 1.0, 0.0));
        match read_csv(body.as_bytes()) {
            Err(Error::InvalidValue { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "total_UPDRS");
            }
            other => panic!("unexpected {other:?}"),
        }

        let body = format!("{}\n{}\n", header(), line(1, 0.0, 10.0).replace("0.5,", "abc,"));
        assert!(matches!(read_csv(body.as_bytes()), Err(Error::InvalidValue { line: 2, .. })));

        let body = format!("{}\n{}\n", header(), line(1, 0.0, 10.0).replace("0.5,", ","));
        match read_csv(body.as_bytes()) {
            Err(Error::InvalidValue { message, .. }) => assert!(message.contains("missing")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
