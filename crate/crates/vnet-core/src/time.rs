use alloc::format;
use core::fmt;

use crate::error::{Error, Result};

/// A calendar hour, `YYYY-MM-DDTHH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HourStamp {
    year: u16,
    month: u8,
    day: u8,
    hour: u8,
}

/// Calendar date part of an [`HourStamp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date {
    pub year: u16,
    pub month: u8,
    pub day: u8,
}

pub fn is_leap_year(year: u16) -> bool {
    (year.is_multiple_of(4) && !year.is_multiple_of(100)) || year.is_multiple_of(400)
}

pub fn days_in_month(year: u16, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => 0,
    }
}

impl HourStamp {
    pub fn new(year: u16, month: u8, day: u8, hour: u8) -> Result<Self> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) || hour > 23 {
            return Err(Error::InvalidTimestamp(format!(
                "{year:04}-{month:02}-{day:02}T{hour:02}"
            )));
        }
        Ok(HourStamp {
            year,
            month,
            day,
            hour,
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTimestamp(s.into());
        let b = s.as_bytes();
        if b.len() != 13 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' {
            return Err(bad());
        }
        let num = |r: core::ops::Range<usize>| -> Result<u16> {
            let part = &s[r];
            if !part.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            part.parse::<u16>().map_err(|_| bad())
        };
        let year = num(0..4)?;
        let month = num(5..7)? as u8;
        let day = num(8..10)? as u8;
        let hour = num(11..13)? as u8;
        HourStamp::new(year, month, day, hour).map_err(|_| bad())
    }

    pub fn year(&self) -> u16 {
        self.year
    }

    pub fn month(&self) -> u8 {
        self.month
    }

    pub fn day(&self) -> u8 {
        self.day
    }

    pub fn hour(&self) -> u8 {
        self.hour
    }

    pub fn date(&self) -> Date {
        Date {
            year: self.year,
            month: self.month,
            day: self.day,
        }
    }

    /// Day of year starting at 0.
    pub fn ordinal(&self) -> u16 {
        let before: u16 = (1..self.month)
            .map(|m| u16::from(days_in_month(self.year, m)))
            .sum();
        before + u16::from(self.day) - 1
    }

    /// Inverse of [`HourStamp::ordinal`] combined with an hour.
    pub fn from_ordinal(year: u16, ordinal: u16, hour: u8) -> Result<Self> {
        let mut remaining = ordinal;
        for month in 1..=12u8 {
            let len = u16::from(days_in_month(year, month));
            if remaining < len {
                return HourStamp::new(year, month, remaining as u8 + 1, hour);
            }
            remaining -= len;
        }
        Err(Error::InvalidTimestamp(format!(
            "day {ordinal} of year {year}"
        )))
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:04}-{:02}-{:02}T{:02}",
            self.year, self.month, self.day, self.hour
        )
    }
}
