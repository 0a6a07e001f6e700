use std::fmt;

use crate::error::{Error, Result};

/// The 22 columns of the telemonitoring table, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Subject,
    Age,
    Sex,
    TestTime,
    MotorUpdrs,
    TotalUpdrs,
    JitterPct,
    JitterAbs,
    JitterRap,
    JitterPpq5,
    JitterDdp,
    Shimmer,
    ShimmerDb,
    ShimmerApq3,
    ShimmerApq5,
    ShimmerApq11,
    ShimmerDda,
    Nhr,
    Hnr,
    Rpde,
    Dfa,
    Ppe,
}

/// Number of acoustic features per observation.
pub const VOICE_DIM: usize = 16;

impl Column {
    pub const ALL: [Column; 22] = [
        Column::Subject,
        Column::Age,
        Column::Sex,
        Column::TestTime,
        Column::MotorUpdrs,
        Column::TotalUpdrs,
        Column::JitterPct,
        Column::JitterAbs,
        Column::JitterRap,
        Column::JitterPpq5,
        Column::JitterDdp,
        Column::Shimmer,
        Column::ShimmerDb,
        Column::ShimmerApq3,
        Column::ShimmerApq5,
        Column::ShimmerApq11,
        Column::ShimmerDda,
        Column::Nhr,
        Column::Hnr,
        Column::Rpde,
        Column::Dfa,
        Column::Ppe,
    ];

    pub const VOICE: [Column; VOICE_DIM] = [
        Column::JitterPct,
        Column::JitterAbs,
        Column::JitterRap,
        Column::JitterPpq5,
        Column::JitterDdp,
        Column::Shimmer,
        Column::ShimmerDb,
        Column::ShimmerApq3,
        Column::ShimmerApq5,
        Column::ShimmerApq11,
        Column::ShimmerDda,
        Column::Nhr,
        Column::Hnr,
        Column::Rpde,
        Column::Dfa,
        Column::Ppe,
    ];

    /// Columns rescaled when feature standardization is on.
    pub const STANDARDIZED: [Column; 18] = [
        Column::Age,
        Column::TestTime,
        Column::JitterPct,
        Column::JitterAbs,
        Column::JitterRap,
        Column::JitterPpq5,
        Column::JitterDdp,
        Column::Shimmer,
        Column::ShimmerDb,
        Column::ShimmerApq3,
        Column::ShimmerApq5,
        Column::ShimmerApq11,
        Column::ShimmerDda,
        Column::Nhr,
        Column::Hnr,
        Column::Rpde,
        Column::Dfa,
        Column::Ppe,
    ];

    /// Header text exactly as it appears in the public file.
    pub fn header(self) -> &'static str {
        match self {
            Column::Subject => "subject#",
            Column::Age => "age",
            Column::Sex => "sex",
            Column::TestTime => "test_time",
            Column::MotorUpdrs => "motor_UPDRS",
            Column::TotalUpdrs => "total_UPDRS",
            Column::JitterPct => "Jitter(%)",
            Column::JitterAbs => "Jitter(Abs)",
            Column::JitterRap => "Jitter:RAP",
            Column::JitterPpq5 => "Jitter:PPQ5",
            Column::JitterDdp => "Jitter:DDP",
            Column::Shimmer => "Shimmer",
            Column::ShimmerDb => "Shimmer(dB)",
            Column::ShimmerApq3 => "Shimmer:APQ3",
            Column::ShimmerApq5 => "Shimmer:APQ5",
            Column::ShimmerApq11 => "Shimmer:APQ11",
            Column::ShimmerDda => "Shimmer:DDA",
            Column::Nhr => "NHR",
            Column::Hnr => "HNR",
            Column::Rpde => "RPDE",
            Column::Dfa => "DFA",
            Column::Ppe => "PPE",
        }
    }

    /// Normalized snake_case identifier.
    pub fn id(self) -> &'static str {
        match self {
            Column::Subject => "subject",
            Column::Age => "age",
            Column::Sex => "sex",
            Column::TestTime => "test_time",
            Column::MotorUpdrs => "motor_updrs",
            Column::TotalUpdrs => "total_updrs",
            Column::JitterPct => "jitter_pct",
            Column::JitterAbs => "jitter_abs",
            Column::JitterRap => "jitter_rap",
            Column::JitterPpq5 => "jitter_ppq5",
            Column::JitterDdp => "jitter_ddp",
            Column::Shimmer => "shimmer",
            Column::ShimmerDb => "shimmer_db",
            Column::ShimmerApq3 => "shimmer_apq3",
            Column::ShimmerApq5 => "shimmer_apq5",
            Column::ShimmerApq11 => "shimmer_apq11",
            Column::ShimmerDda => "shimmer_dda",
            Column::Nhr => "nhr",
            Column::Hnr => "hnr",
            Column::Rpde => "rpde",
            Column::Dfa => "dfa",
            Column::Ppe => "ppe",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position inside the voice vector, if this is an acoustic feature.
    pub fn voice_index(self) -> Option<usize> {
        let i = self as usize;
        (6..22).contains(&i).then(|| i - 6)
    }

    /// Accepts the file header, the snake_case id (any case), or the
    /// underscore spelling used in reports (`Jitter_PPQ5`).
    pub fn parse(name: &str) -> Result<Column> {
        let trimmed = name.trim();
        Column::ALL
            .iter()
            .copied()
            .find(|c| {
                c.header() == trimmed
                    || c.id().eq_ignore_ascii_case(trimmed)
                    || c.header().replace(':', "_").eq_ignore_ascii_case(trimmed)
            })
            .ok_or_else(|| Error::UnknownTerm(trimmed.to_string()))
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_accepts_all_spellings() {
        assert_eq!(Column::parse("Jitter:PPQ5").unwrap(), Column::JitterPpq5);
        assert_eq!(Column::parse("Jitter_PPQ5").unwrap(), Column::JitterPpq5);
        assert_eq!(Column::parse("jitter_ppq5").unwrap(), Column::JitterPpq5);
        assert_eq!(Column::parse("HNR").unwrap(), Column::Hnr);
        assert_eq!(Column::parse("subject#").unwrap(), Column::Subject);
        assert!(Column::parse("loudness").is_err());
    }

    #[test]
    fn voice_indices_are_contiguous() {
        for (k, c) in Column::VOICE.iter().enumerate() {
            assert_eq!(c.voice_index(), Some(k));
        }
        assert_eq!(Column::TestTime.voice_index(), None);
        assert_eq!(Column::ALL.len(), 22);
    }
}
