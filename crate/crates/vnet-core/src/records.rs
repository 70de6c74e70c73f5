//! Validated input records.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::time::HourStamp;

/// Hourly antenna-to-antenna traffic between two sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub hour: HourStamp,
    pub from_site: String,
    pub to_site: String,
    pub calls: u64,
    pub texts: u64,
}

impl FlowRecord {
    /// Communication volume carried by the record.
    pub fn volume(&self) -> u64 {
        self.calls + self.texts
    }
}

/// Tolerance on `MPI ≈ (H/100)·(A/100)` for published, rounded tables.
pub const MPI_CONSISTENCY_TOLERANCE: f64 = 0.01;

/// Regional multidimensional poverty figures.
#[derive(Debug, Clone, PartialEq)]
pub struct PovertyRecord {
    pub region: String,
    pub name: String,
    /// Headcount ratio, percent.
    pub h: f64,
    /// Average intensity across the poor, percent.
    pub a: f64,
    /// Index as a fraction in `[0, 1]`.
    pub mpi: f64,
}

impl PovertyRecord {
    pub fn new(region: String, name: String, h: f64, a: f64, mpi: f64) -> Result<Self> {
        range_check("H", h, 0.0, 100.0)?;
        range_check("A", a, 0.0, 100.0)?;
        range_check("MPI", mpi, 0.0, 1.0)?;
        Ok(PovertyRecord {
            region,
            name,
            h,
            a,
            mpi,
        })
    }

    /// Absolute gap between MPI and `(H/100)·(A/100)`.
    pub fn consistency_gap(&self) -> f64 {
        libm::fabs(self.mpi - (self.h / 100.0) * (self.a / 100.0))
    }

    pub fn is_consistent(&self) -> bool {
        self.consistency_gap() <= MPI_CONSISTENCY_TOLERANCE
    }
}

fn range_check(field: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            field,
            value,
            min,
            max,
        })
    }
}

/// One call by a user, located at arrondissement resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCallEvent {
    pub user: String,
    pub hour: HourStamp,
    pub arrondissement: String,
}

/// Monthly behavioral indicator row for one user; values follow
/// [`INDICATOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRecord {
    pub user: String,
    pub month: u8,
    pub indicators: Vec<f64>,
}

impl BehaviorRecord {
    pub fn new(user: String, month: u8, indicators: Vec<f64>) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::OutOfRange {
                field: "month",
                value: f64::from(month),
                min: 1.0,
                max: 12.0,
            });
        }
        if indicators.len() != INDICATOR_COUNT {
            return Err(Error::IndicatorArity {
                expected: INDICATOR_COUNT,
                found: indicators.len(),
            });
        }
        let pic = indicators[PIC_INDEX];
        range_check(INDICATOR_NAMES[PIC_INDEX], pic, 0.0, 1.0)?;
        Ok(BehaviorRecord {
            user,
            month,
            indicators,
        })
    }
}

pub const INDICATOR_COUNT: usize = 33;

/// Canonical behavioral indicator columns: calling/texting (14), mobility (6)
/// and social behavior (13).
pub const INDICATOR_NAMES: [&str; INDICATOR_COUNT] = [
    // calling and texting
    "call_count",
    "text_count",
    "call_duration_mean",
    "call_duration_median",
    "pct_night_calls",
    "pct_night_texts",
    "pct_weekend_calls",
    "interevent_time_mean",
    "interevent_time_sd",
    "calls_per_active_day",
    "texts_per_active_day",
    "active_days",
    "text_response_rate",
    "text_response_delay_median",
    // mobility
    "radius_of_gyration",
    "distinct_antennas",
    "distinct_arrondissements",
    "antenna_entropy",
    "pct_time_at_home",
    "travel_distance_mean",
    // social
    "contact_count",
    "contact_entropy",
    "contact_balance",
    "pct_initiated_conversation",
    "pct_initiated_calls",
    "pct_initiated_texts",
    "interactions_per_contact_mean",
    "interactions_per_contact_sd",
    "pct_interactions_top_contact",
    "reciprocal_contact_fraction",
    "new_contacts_per_month",
    "contacts_called_and_texted",
    "network_clustering",
];

/// Column of the percentage-initiated-conversation indicator (a fraction).
pub const PIC_INDEX: usize = 23;

pub fn indicator_index(name: &str) -> Option<usize> {
    INDICATOR_NAMES.iter().position(|n| *n == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn poverty_examples() {
        let r = PovertyRecord::new("R01".into(), "Dakar".into(), 10.0, 40.0, 0.04).unwrap();
        assert!(r.is_consistent());
        let r = PovertyRecord::new("R02".into(), "X".into(), 47.0, 58.0, 0.273).unwrap();
        assert!(r.is_consistent());
        assert!((r.consistency_gap() - 0.0004).abs() < 1e-12);
        let err = PovertyRecord::new("R03".into(), "Y".into(), 120.0, 50.0, 0.6).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { field: "H", .. }));
        assert!(PovertyRecord::new("R".into(), "".into(), 10.0, 10.0, 1.5).is_err());
    }

    #[test]
    fn indicator_catalogue() {
        assert_eq!(INDICATOR_NAMES.len(), 33);
        assert_eq!(INDICATOR_NAMES[PIC_INDEX], "pct_initiated_conversation");
        let mut sorted = INDICATOR_NAMES.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 33);
    }

    #[test]
    fn behavior_arity() {
        let err = BehaviorRecord::new("U1".into(), 1, vec![0.5; 32]).unwrap_err();
        assert_eq!(
            err,
            Error::IndicatorArity {
                expected: 33,
                found: 32
            }
        );
        assert!(BehaviorRecord::new("U1".into(), 13, vec![0.5; 33]).is_err());
        assert!(BehaviorRecord::new("U1".into(), 12, vec![0.5; 33]).is_ok());
    }
}
