//! Home localization from night-time calls and aggregation of monthly
//! behavioral indicators to users and spatial units.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{Measure, NodeScoreVector};
use crate::numeric::median;
use crate::records::{BehaviorRecord, PovertyRecord, UserCallEvent, INDICATOR_COUNT, INDICATOR_NAMES};
use crate::spatial::{Level, SpatialHierarchy};
use crate::stats::{loo_influence, pearson, CorrelationResult};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationParams {
    /// Hours of day (0–23) counted as night calls.
    pub night_hours: Vec<u8>,
    pub year_days: u16,
    /// Users need `d` strictly above this.
    pub min_day_fraction: f64,
    /// Users need `c` strictly above this.
    pub min_concentration: f64,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        LocalizationParams {
            night_hours: alloc::vec![20, 21, 22, 23],
            year_days: 365,
            min_day_fraction: 0.5,
            min_concentration: 0.95,
        }
    }
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.year_days, 365 | 366) {
            return Err(Error::InvalidParameter {
                name: "year_days",
                reason: alloc::format!("{} is not 365 or 366", self.year_days),
            });
        }
        if let Some(h) = self.night_hours.iter().find(|&&h| h > 23) {
            return Err(Error::InvalidParameter {
                name: "night_hours",
                reason: alloc::format!("hour {h} is not in 0..=23"),
            });
        }
        for (name, v) in [
            ("min_day_fraction", self.min_day_fraction),
            ("min_concentration", self.min_concentration),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: alloc::format!("{v} is not in [0, 1]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomeAssignment {
    pub user: String,
    /// Fraction of the year's days with at least one night call.
    pub d: f64,
    /// Arrondissement with the most night calls.
    pub a: Option<String>,
    /// Fraction of night calls placed from `a`.
    pub c: f64,
    pub home_region: Option<String>,
    pub retained: bool,
    pub night_calls: u64,
}

#[derive(Default)]
struct NightTally {
    dates: BTreeSet<(u16, u16)>,
    by_arrondissement: BTreeMap<usize, u64>,
    total: u64,
}

/// Assign each user a home arrondissement from their night-window calls.
///
/// Ties for the modal arrondissement go to the smallest id. Users without
/// night calls get `d = 0` and are not retained.
pub fn localize_users<'a>(
    events: impl IntoIterator<Item = &'a UserCallEvent>,
    h: &SpatialHierarchy,
    params: &LocalizationParams,
) -> Result<Vec<HomeAssignment>> {
    params.validate()?;
    let mut night = [false; 24];
    for &hour in &params.night_hours {
        night[hour as usize] = true;
    }
    let mut users: BTreeMap<&str, NightTally> = BTreeMap::new();
    for e in events {
        let arr = h.index_of(Level::Arrondissement, &e.arrondissement)?;
        let tally = users.entry(e.user.as_str()).or_default();
        if night[e.hour.hour() as usize] {
            tally.dates.insert((e.hour.year(), e.hour.ordinal()));
            *tally.by_arrondissement.entry(arr).or_insert(0) += 1;
            tally.total += 1;
        }
    }
    let year_days = f64::from(params.year_days);
    users
        .into_iter()
        .map(|(user, tally)| {
            if tally.dates.len() > usize::from(params.year_days) {
                return Err(Error::OutOfRange {
                    field: "night-call days",
                    value: tally.dates.len() as f64,
                    min: 0.0,
                    max: year_days,
                });
            }
            let d = tally.dates.len() as f64 / year_days;
            // BTreeMap iterates ids in ascending order; keep the first maximum.
            let modal = tally
                .by_arrondissement
                .iter()
                .fold(None, |best: Option<(usize, u64)>, (&arr, &n)| match best {
                    Some((_, m)) if m >= n => best,
                    _ => Some((arr, n)),
                });
            let (a, home_region, c) = match modal {
                Some((arr, n)) => {
                    let region = h.ancestor_index(Level::Arrondissement, arr, Level::Region)?;
                    (
                        Some(h.unit_at(Level::Arrondissement, arr).id.clone()),
                        Some(h.unit_at(Level::Region, region).id.clone()),
                        n as f64 / tally.total as f64,
                    )
                }
                None => (None, None, 0.0),
            };
            Ok(HomeAssignment {
                user: user.to_string(),
                d,
                retained: a.is_some() && d > params.min_day_fraction && c > params.min_concentration,
                a,
                c,
                home_region,
                night_calls: tally.total,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub region: String,
    pub retained_users: usize,
    pub user_share: f64,
    pub site_share: f64,
    pub population_share: Option<f64>,
}

/// Per-region share of retained users next to the share of sites and,
/// optionally, of population (normalized over the regions given).
pub fn sample_share_report(
    assignments: &[HomeAssignment],
    h: &SpatialHierarchy,
    population: Option<&BTreeMap<String, f64>>,
) -> Result<Vec<ShareRow>> {
    let mut users = alloc::vec![0usize; h.len(Level::Region)];
    for a in assignments.iter().filter(|a| a.retained) {
        let region = a.home_region.as_deref().expect("retained users have a home");
        users[h.index_of(Level::Region, region)?] += 1;
    }
    let retained: usize = users.iter().sum();
    if retained == 0 {
        return Err(Error::EmptySample);
    }
    let sites = h.len(Level::Site) as f64;
    let pop_total: Option<f64> = population.map(|p| p.values().sum());
    Ok(h.units(Level::Region)
        .iter()
        .enumerate()
        .map(|(i, unit)| ShareRow {
            region: unit.id.clone(),
            retained_users: users[i],
            user_share: users[i] as f64 / retained as f64,
            site_share: h.site_count(Level::Region, i) as f64 / sites,
            population_share: population.and_then(|p| {
                let total = pop_total.expect("set with population");
                (total > 0.0).then(|| p.get(&unit.id).copied().unwrap_or(0.0) / total)
            }),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserIndicatorProfile {
    pub user: String,
    pub months: usize,
    /// Median over available months, in indicator order.
    pub medians: Vec<f64>,
}

/// Per user and indicator, the median over the months present.
pub fn aggregate_user_medians(records: &[BehaviorRecord]) -> Vec<UserIndicatorProfile> {
    let mut by_user: BTreeMap<&str, Vec<&BehaviorRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(&r.user).or_default().push(r);
    }
    by_user
        .into_iter()
        .map(|(user, rows)| {
            let mut column = Vec::with_capacity(rows.len());
            let medians = (0..INDICATOR_COUNT)
                .map(|k| {
                    column.clear();
                    column.extend(rows.iter().map(|r| r.indicators[k]));
                    median(&column).expect("at least one row")
                })
                .collect();
            UserIndicatorProfile {
                user: user.to_string(),
                months: rows.len(),
                medians,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRow {
    pub unit_id: String,
    pub user_count: usize,
    pub values: Vec<f64>,
}

/// Median-of-user-medians per unit; units without users are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub level: Level,
    pub rows: Vec<IndicatorRow>,
}

impl IndicatorTable {
    pub fn column(&self, indicator: usize) -> NodeScoreVector {
        NodeScoreVector::new(
            self.level,
            Measure::Indicator(INDICATOR_NAMES[indicator].to_string()),
            self.rows.iter().map(|r| r.unit_id.clone()).collect(),
            self.rows.iter().map(|r| r.values[indicator]).collect(),
        )
    }
}

/// Aggregate retained users' profiles to their home units at `level`
/// (region or arrondissement).
pub fn unit_indicator_medians(
    profiles: &[UserIndicatorProfile],
    assignments: &[HomeAssignment],
    h: &SpatialHierarchy,
    level: Level,
) -> Result<IndicatorTable> {
    if level == Level::Site {
        return Err(Error::InvalidParameter {
            name: "level",
            reason: "homes are assigned at arrondissement resolution".into(),
        });
    }
    let homes: BTreeMap<&str, &HomeAssignment> = assignments
        .iter()
        .filter(|a| a.retained)
        .map(|a| (a.user.as_str(), a))
        .collect();
    let mut members: BTreeMap<usize, Vec<&UserIndicatorProfile>> = BTreeMap::new();
    for p in profiles {
        let Some(home) = homes.get(p.user.as_str()) else {
            continue;
        };
        let unit = match level {
            Level::Region => home.home_region.as_deref(),
            _ => home.a.as_deref(),
        }
        .expect("retained users have a home");
        members.entry(h.index_of(level, unit)?).or_default().push(p);
    }
    let rows = members
        .into_iter()
        .map(|(i, users)| {
            let mut column = Vec::with_capacity(users.len());
            let values = (0..INDICATOR_COUNT)
                .map(|k| {
                    column.clear();
                    column.extend(users.iter().map(|u| u.medians[k]));
                    median(&column).expect("nonempty unit")
                })
                .collect();
            IndicatorRow {
                unit_id: h.unit_at(level, i).id.clone(),
                user_count: users.len(),
                values,
            }
        })
        .collect();
    Ok(IndicatorTable { level, rows })
}

/// Region-level table, the input to indicator ranking.
pub fn region_indicator_medians(
    profiles: &[UserIndicatorProfile],
    assignments: &[HomeAssignment],
    h: &SpatialHierarchy,
) -> Result<IndicatorTable> {
    unit_indicator_medians(profiles, assignments, h, Level::Region)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRank {
    pub indicator: String,
    /// `None` when the indicator is constant across the joined regions.
    pub correlation: Option<CorrelationResult>,
    /// Largest leave-one-region-out change in r.
    pub loo_max_delta: Option<f64>,
    pub flagged: bool,
}

/// Correlate every indicator with MPI across regions, strongest first.
pub fn rank_indicators(
    table: &IndicatorTable,
    poverty: &[PovertyRecord],
    loo_threshold: f64,
) -> Result<Vec<IndicatorRank>> {
    let mpi: BTreeMap<&str, f64> = poverty.iter().map(|p| (p.region.as_str(), p.mpi)).collect();
    let joined: Vec<(&IndicatorRow, f64)> = table
        .rows
        .iter()
        .filter_map(|r| mpi.get(r.unit_id.as_str()).map(|&m| (r, m)))
        .collect();
    if joined.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: joined.len(),
        });
    }
    let y: Vec<f64> = joined.iter().map(|(_, m)| *m).collect();
    let labels: Vec<String> = joined.iter().map(|(r, _)| r.unit_id.clone()).collect();
    let mut ranks: Vec<IndicatorRank> = (0..INDICATOR_COUNT)
        .map(|k| {
            let x: Vec<f64> = joined.iter().map(|(r, _)| r.values[k]).collect();
            let correlation = pearson(&x, &y).ok();
            let loo_max_delta = correlation
                .filter(|_| x.len() >= 4)
                .and_then(|_| loo_influence(&x, &y, &labels, loo_threshold).ok())
                .and_then(|rep| rep.max_abs_delta());
            IndicatorRank {
                indicator: INDICATOR_NAMES[k].to_string(),
                correlation,
                loo_max_delta,
                flagged: loo_max_delta.is_some_and(|d| d > loo_threshold),
            }
        })
        .collect();
    ranks.sort_by(|a, b| {
        let key = |r: &IndicatorRank| r.correlation.map(|c| libm::fabs(c.r));
        match (key(a), key(b)) {
            (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.indicator.cmp(&b.indicator)),
            (Some(_), None) => core::cmp::Ordering::Less,
            (None, Some(_)) => core::cmp::Ordering::Greater,
            (None, None) => a.indicator.cmp(&b.indicator),
        }
    });
    Ok(ranks)
}
