use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::error::{Error, Result};

pub const MONTHS: usize = 12;
pub const YEAR_DAYS: usize = 366;

/// Calendar position of one sample, used to look up the learnable time tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TemporalIndex {
    pub slot_of_day: usize,
    pub month: usize,
    /// Zero-based ordinal; Feb 29 is 59 and later days shift by one in leap years.
    pub day_of_year: usize,
}

impl TemporalIndex {
    pub fn as_array(self) -> [usize; 3] {
        [self.slot_of_day, self.month, self.day_of_year]
    }
}

/// Number of samples per day at the given cadence.
pub fn slots_per_day(cadence_secs: i64) -> Result<usize> {
    if cadence_secs <= 0 || 86_400 % cadence_secs != 0 {
        return Err(Error::Data(format!(
            "cadence of {cadence_secs} s does not divide a day"
        )));
    }
    Ok((86_400 / cadence_secs) as usize)
}

pub fn temporal_index(ts: NaiveDateTime, cadence_secs: i64) -> Result<TemporalIndex> {
    slots_per_day(cadence_secs)?;
    let secs = ts.num_seconds_from_midnight() as i64;
    if secs % cadence_secs != 0 || ts.nanosecond() != 0 {
        return Err(Error::Data(format!(
            "timestamp {ts} is not aligned to the {cadence_secs} s cadence"
        )));
    }
    Ok(TemporalIndex {
        slot_of_day: (secs / cadence_secs) as usize,
        month: ts.month0() as usize,
        day_of_year: ts.ordinal0() as usize,
    })
}

pub fn temporal_indices(timestamps: &[NaiveDateTime], cadence_secs: i64) -> Result<Vec<TemporalIndex>> {
    timestamps
        .iter()
        .map(|&ts| temporal_index(ts, cadence_secs))
        .collect()
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, min, 0).unwrap()
    }

    #[test]
    fn ten_minute_slots() {
        assert_eq!(slots_per_day(600).unwrap(), 144);
        assert_eq!(temporal_index(at(2021, 5, 3, 0, 0), 600).unwrap().slot_of_day, 0);
        assert_eq!(temporal_index(at(2021, 5, 3, 23, 50), 600).unwrap().slot_of_day, 143);
    }

    #[test]
    fn calendar_origin() {
        let idx = temporal_index(at(2021, 1, 1, 0, 0), 600).unwrap();
        assert_eq!((idx.month, idx.day_of_year), (0, 0));
        let idx = temporal_index(at(2021, 12, 31, 12, 0), 600).unwrap();
        assert_eq!((idx.month, idx.day_of_year), (11, 364));
    }

    #[test]
    fn leap_day_handling() {
        assert_eq!(temporal_index(at(2020, 2, 29, 0, 0), 600).unwrap().day_of_year, 59);
        assert_eq!(temporal_index(at(2020, 3, 1, 0, 0), 600).unwrap().day_of_year, 60);
        assert_eq!(temporal_index(at(2021, 3, 1, 0, 0), 600).unwrap().day_of_year, 59);
        assert_eq!(temporal_index(at(2020, 12, 31, 0, 0), 600).unwrap().day_of_year, 365);
    }

    #[test]
    fn misaligned_timestamp_rejected() {
        assert!(temporal_index(at(2021, 1, 1, 0, 5), 600).is_err());
        assert!(slots_per_day(7 * 60).is_err());
    }
}
