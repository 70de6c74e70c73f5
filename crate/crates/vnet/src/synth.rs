//! Deterministic synthetic worlds with planted structure: hierarchy, hourly
//! flows drawn from a gravity law, poverty tied to a latent attractiveness,
//! users with planted homes, and behavioral indicators linked to poverty.
//!
//! Every entity draws from its own ChaCha stream keyed by `(seed, domain,
//! index)`, so output does not depend on generation order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};
use vnet_core::records::{indicator_index, INDICATOR_COUNT, PIC_INDEX};
use vnet_core::spatial::SiteRow;
use vnet_core::time::days_in_month;
use vnet_core::{BehaviorRecord, HourStamp, LatLon, Level, PovertyRecord, SpatialHierarchy, UserCallEvent};

use crate::error::{Error, Result};
use crate::geojson::{rectangle, Feature, FeatureCollection};
use crate::ingest;

/// Bounding box of generated worlds: `(south, west, north, east)`.
pub const BOUNDING_BOX: (f64, f64, f64, f64) = (12.3, -17.6, 16.7, -11.3);

const DOMAIN_WORLD: u64 = 1;
const DOMAIN_FLOWS: u64 = 2;
const DOMAIN_POVERTY: u64 = 3;
const DOMAIN_USERS: u64 = 4;
const DOMAIN_BEHAVIOR: u64 = 5;

fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Affine link `slope·x + intercept` plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub slope: f64,
    pub intercept: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PovertyLink {
    /// H in percent as a function of region attractiveness.
    pub h: Link,
    /// A in percent as a function of region attractiveness.
    pub a: Link,
}

impl Default for PovertyLink {
    fn default() -> Self {
        PovertyLink {
            h: Link {
                slope: -25.0,
                intercept: 50.0,
                noise_sd: 3.0,
            },
            a: Link {
                slope: -10.0,
                intercept: 45.0,
                noise_sd: 1.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserSpec {
    pub count: usize,
    /// Users calling nightly from home; all of them pass localization.
    pub resident_fraction: f64,
    /// Users with night calls on too few days.
    pub sparse_fraction: f64,
    /// Daytime calls per user, ignored by localization.
    pub day_calls: usize,
}

impl Default for UserSpec {
    fn default() -> Self {
        UserSpec {
            count: 2000,
            resident_fraction: 0.8,
            sparse_fraction: 0.1,
            day_calls: 40,
        }
    }
}

/// Indicator value = `base·(1 + noise_sd·N) + slope·(H/100 − 0.5)` per user,
/// with `H` the user's home-region headcount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorLink {
    pub slopes: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

impl Default for BehaviorLink {
    fn default() -> Self {
        BehaviorLink {
            slopes: BTreeMap::from([("pct_initiated_conversation".to_string(), -0.4)]),
            noise_sd: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub regions: usize,
    /// Inclusive range.
    pub arrondissements_per_region: [usize; 2],
    /// Inclusive range.
    pub sites_per_arrondissement: [usize; 2],
    /// Planted region attractiveness; drawn from N(0, attractiveness_sd)
    /// when absent.
    pub attractiveness: Option<Vec<f64>>,
    pub attractiveness_sd: f64,
    /// Spread of arrondissement attractiveness around its region's.
    pub arrondissement_sd: f64,
    /// Gravity constant; derived from `target_volume` when absent.
    pub kappa: Option<f64>,
    pub target_volume: f64,
    /// Within-arrondissement mean relative to a 1 km pair of the same size.
    pub introversion: f64,
    /// Mean calls+texts per flow record.
    pub record_volume: f64,
    pub text_share: f64,
    pub year: u16,
    pub poverty: PovertyLink,
    pub users: UserSpec,
    pub behavior: BehaviorLink,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 1,
            regions: 14,
            arrondissements_per_region: [7, 11],
            sites_per_arrondissement: [9, 18],
            attractiveness: None,
            attractiveness_sd: 0.5,
            arrondissement_sd: 0.1,
            kappa: None,
            target_volume: 15e6,
            introversion: 0.05,
            record_volume: 3.0,
            text_share: 0.3,
            year: 2013,
            poverty: PovertyLink::default(),
            users: UserSpec::default(),
            behavior: BehaviorLink::default(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.regions == 0 {
            return bad("regions must be at least 1".into());
        }
        for (name, [lo, hi]) in [
            ("arrondissements_per_region", self.arrondissements_per_region),
            ("sites_per_arrondissement", self.sites_per_arrondissement),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} must be a range [min, max] with 1 <= min <= max"));
            }
        }
        if let Some(a) = &self.attractiveness {
            if a.len() != self.regions || a.iter().any(|v| !v.is_finite()) {
                return bad(format!("attractiveness needs {} finite values", self.regions));
            }
        }
        let nonneg = [
            ("attractiveness_sd", self.attractiveness_sd),
            ("arrondissement_sd", self.arrondissement_sd),
            ("kappa", self.kappa.unwrap_or(0.0)),
            ("target_volume", self.target_volume),
            ("introversion", self.introversion),
            ("poverty.h.noise_sd", self.poverty.h.noise_sd),
            ("poverty.a.noise_sd", self.poverty.a.noise_sd),
            ("behavior.noise_sd", self.behavior.noise_sd),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.record_volume >= 1.0 && self.record_volume.is_finite()) {
            return bad("record_volume must be at least 1".into());
        }
        for (name, v) in [
            ("text_share", self.text_share),
            ("users.resident_fraction", self.users.resident_fraction),
            ("users.sparse_fraction", self.users.sparse_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        if self.users.resident_fraction + self.users.sparse_fraction > 1.0 {
            return bad("users.resident_fraction + users.sparse_fraction exceeds 1".into());
        }
        if let Some(name) = self.behavior.slopes.keys().find(|k| indicator_index(k).is_none()) {
            return bad(format!("behavior.slopes names unknown indicator `{name}`"));
        }
        if HourStamp::new(self.year, 1, 1, 0).is_err() {
            return bad(format!("year {} is not supported", self.year));
        }
        Ok(())
    }

    fn year_days(&self) -> u16 {
        (1..=12).map(|m| u16::from(days_in_month(self.year, m))).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl Rect {
    fn at(&self, fy: f64, fx: f64) -> LatLon {
        LatLon {
            lat: self.south + (self.north - self.south) * fy,
            lon: self.west + (self.east - self.west) * fx,
        }
    }

    /// Sub-rectangle `k` of a `rows × cols` grid, row-major from the north-west.
    fn cell(&self, rows: usize, cols: usize, k: usize) -> Rect {
        let (r, c) = ((k / cols) as f64, (k % cols) as f64);
        let dy = (self.north - self.south) / rows as f64;
        let dx = (self.east - self.west) / cols as f64;
        Rect {
            north: self.north - r * dy,
            south: self.north - (r + 1.0) * dy,
            west: self.west + c * dx,
            east: self.west + (c + 1.0) * dx,
        }
    }
}

fn grid_shape(k: usize) -> (usize, usize) {
    let cols = (k as f64).sqrt().ceil() as usize;
    (k.div_ceil(cols), cols)
}

/// A generated world: hierarchy plus the planted latents behind it.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub hierarchy: SpatialHierarchy,
    /// By region index.
    pub region_attractiveness: Vec<f64>,
    /// By arrondissement index.
    pub arrondissement_attractiveness: Vec<f64>,
    pub region_rects: Vec<Rect>,
    pub arrondissement_rects: Vec<Rect>,
    /// Contiguous site-index range of each arrondissement.
    pub arrondissement_sites: Vec<std::ops::Range<usize>>,
}

fn width(default: usize, count: usize) -> usize {
    default.max(count.to_string().len())
}

/// Lay out regions on a jittered grid over the bounding box, arrondissements
/// on a sub-grid of their region, and sites uniformly inside each
/// arrondissement.
pub fn gen_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (south, west, north, east) = BOUNDING_BOX;
    let bbox = Rect {
        south,
        west,
        north,
        east,
    };
    let (rows, cols) = grid_shape(spec.regions);

    struct Region {
        rect: Rect,
        s: f64,
        arrs: Vec<(Rect, f64, Vec<LatLon>)>,
    }
    let regions: Vec<Region> = (0..spec.regions)
        .map(|r| {
            let mut rng = stream(spec.seed, DOMAIN_WORLD, r as u64);
            let cell = bbox.cell(rows, cols, r);
            let mut jitter = || rng.random_range(0.0..0.12);
            let (dy, dx) = (cell.north - cell.south, cell.east - cell.west);
            let rect = Rect {
                south: cell.south + jitter() * dy,
                north: cell.north - jitter() * dy,
                west: cell.west + jitter() * dx,
                east: cell.east - jitter() * dx,
            };
            let s = match &spec.attractiveness {
                Some(a) => a[r],
                None => spec.attractiveness_sd * normal(&mut rng),
            };
            let [lo, hi] = spec.arrondissements_per_region;
            let k = rng.random_range(lo..=hi);
            let (ar, ac) = grid_shape(k);
            let arrs = (0..k)
                .map(|a| {
                    let arect = rect.cell(ar, ac, a);
                    let sa = s + spec.arrondissement_sd * normal(&mut rng);
                    let [lo, hi] = spec.sites_per_arrondissement;
                    let n = rng.random_range(lo..=hi);
                    let sites = (0..n)
                        .map(|_| arect.at(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)))
                        .collect();
                    (arect, sa, sites)
                })
                .collect();
            Region { rect, s, arrs }
        })
        .collect();

    let n_arr: usize = regions.iter().map(|r| r.arrs.len()).sum();
    let n_site: usize = regions.iter().flat_map(|r| &r.arrs).map(|a| a.2.len()).sum();
    let (wr, wa, ws) = (width(2, spec.regions), width(3, n_arr), width(4, n_site));
    let mut rows_out = Vec::with_capacity(n_site);
    let mut world_arrs = Vec::with_capacity(n_arr);
    let mut ranges = Vec::with_capacity(n_arr);
    for (r, region) in regions.iter().enumerate() {
        for (arect, sa, sites) in &region.arrs {
            let a = world_arrs.len();
            let start = rows_out.len();
            for &position in sites {
                rows_out.push(SiteRow {
                    site: format!("S{:0ws$}", rows_out.len() + 1),
                    arrondissement: format!("A{:0wa$}", a + 1),
                    region: format!("R{:0wr$}", r + 1),
                    position,
                });
            }
            ranges.push(start..rows_out.len());
            world_arrs.push((*arect, *sa));
        }
    }
    let hierarchy = SpatialHierarchy::from_sites(rows_out)?;
    Ok(World {
        spec: spec.clone(),
        hierarchy,
        region_attractiveness: regions.iter().map(|r| r.s).collect(),
        arrondissement_attractiveness: world_arrs.iter().map(|a| a.1).collect(),
        region_rects: regions.iter().map(|r| r.rect).collect(),
        arrondissement_rects: world_arrs.iter().map(|a| a.0).collect(),
        arrondissement_sites: ranges,
    })
}

impl World {
    /// Expected calls+texts for every ordered arrondissement pair, row-major,
    /// with the gravity constant used.
    pub fn expected_volumes(&self) -> Result<(f64, Vec<f64>)> {
        let h = &self.hierarchy;
        let n = h.len(Level::Arrondissement);
        let d = h.pairwise_distance_matrix(Level::Arrondissement)?;
        let sites = h.site_counts(Level::Arrondissement);
        let s = &self.arrondissement_attractiveness;
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let size = (sites[i] * sites[j]) as f64 * (s[i] + s[j]).exp();
                base[i * n + j] = if i == j {
                    self.spec.introversion * size
                } else {
                    size / d.get(i, j).max(1.0)
                };
            }
        }
        let total: f64 = base.iter().sum();
        let kappa = match self.spec.kappa {
            Some(k) => k,
            None if total > 0.0 => self.spec.target_volume / total,
            None => 0.0,
        };
        base.iter_mut().for_each(|v| *v *= kappa);
        Ok((kappa, base))
    }

    pub fn hierarchy_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        ingest::write_hierarchy(&mut out, &self.hierarchy).expect("in-memory write");
        out
    }

    /// Region and arrondissement rectangles with `unit_id` and `level`.
    pub fn boundaries(&self) -> FeatureCollection {
        let h = &self.hierarchy;
        let mut fc = FeatureCollection::default();
        for (level, rects) in [
            (Level::Region, &self.region_rects),
            (Level::Arrondissement, &self.arrondissement_rects),
        ] {
            for (unit, r) in h.units(level).iter().zip(rects) {
                let mut props = Map::new();
                props.insert("unit_id".into(), json!(unit.id));
                props.insert("level".into(), json!(level.as_str()));
                fc.features.push(Feature {
                    geometry: Some(rectangle(r.south, r.west, r.north, r.east)),
                    properties: props,
                });
            }
        }
        fc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowSummary {
    pub records: u64,
    pub volume: u64,
}

/// Draw every pair's volume from its Poisson mean and split it into hourly
/// site-to-site records written in pair order.
pub fn gen_flows<W: Write>(world: &World, out: &mut W) -> Result<FlowSummary> {
    let (_, means) = world.expected_volumes()?;
    let n = world.hierarchy.len(Level::Arrondissement);
    let spec = &world.spec;
    let days = spec.year_days();
    let prefixes: Vec<String> = (0..days)
        .map(|d| {
            let s = HourStamp::from_ordinal(spec.year, d, 0).expect("valid ordinal").to_string();
            s[..s.len() - 2].to_string()
        })
        .collect();
    let site_ids: Vec<&str> = world.hierarchy.ids(Level::Site).collect();
    let extra = (spec.record_volume > 1.0).then(|| Poisson::new(spec.record_volume - 1.0).expect("positive mean"));
    let io_err = |e: io::Error| Error::io("flows", e);

    ingest::write_flow_header(out).map_err(io_err)?;
    let mut summary = FlowSummary::default();
    for i in 0..n {
        for j in 0..n {
            let mu = means[i * n + j];
            if mu <= 0.0 {
                continue;
            }
            let mut rng = stream(spec.seed, DOMAIN_FLOWS, (i * n + j) as u64);
            let mut remaining = Poisson::new(mu).expect("positive mean").sample(&mut rng) as u64;
            summary.volume += remaining;
            let (from, to) = (&world.arrondissement_sites[i], &world.arrondissement_sites[j]);
            while remaining > 0 {
                let size = 1 + extra.map_or(0, |p| p.sample(&mut rng) as u64);
                let b = size.min(remaining);
                remaining -= b;
                let calls = Binomial::new(b, 1.0 - spec.text_share)
                    .expect("valid probability")
                    .sample(&mut rng);
                let a = rng.random_range(from.clone());
                let z = rng.random_range(to.clone());
                let day = rng.random_range(0..days) as usize;
                let hour = rng.random_range(0..24u8);
                writeln!(
                    out,
                    "{}{hour:02},{},{},{calls},{}",
                    prefixes[day],
                    site_ids[a],
                    site_ids[z],
                    b - calls
                )
                .map_err(io_err)?;
                summary.records += 1;
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    /// Night calls on most days, nearly all from home.
    Resident,
    /// Too few nights to pass the day-fraction threshold.
    Sparse,
    /// Night calls split between two arrondissements.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUser {
    pub id: String,
    pub home: String,
    pub class: UserClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub poverty: Vec<PovertyRecord>,
    pub users: Vec<PlantedUser>,
    pub events: Vec<UserCallEvent>,
    pub behavior: Vec<BehaviorRecord>,
}

fn linked(link: &Link, x: f64, rng: &mut ChaCha8Rng) -> f64 {
    let noise = if link.noise_sd > 0.0 { link.noise_sd * normal(rng) } else { 0.0 };
    (link.slope * x + link.intercept + noise).clamp(0.0, 100.0)
}

/// Base level of each indicator before the poverty link.
fn indicator_base(k: usize) -> f64 {
    if k == PIC_INDEX {
        0.55
    } else {
        1.0 + 0.5 * k as f64
    }
}

pub fn gen_ground_truth(world: &World) -> Result<GroundTruth> {
    let spec = &world.spec;
    let h = &world.hierarchy;
    let poverty = h
        .units(Level::Region)
        .iter()
        .enumerate()
        .map(|(r, unit)| {
            let mut rng = stream(spec.seed, DOMAIN_POVERTY, r as u64);
            let s = world.region_attractiveness[r];
            let hh = linked(&spec.poverty.h, s, &mut rng);
            let aa = linked(&spec.poverty.a, s, &mut rng);
            let name = format!("Region{}", &unit.id[1..]);
            PovertyRecord::new(unit.id.clone(), name, hh, aa, (hh / 100.0) * (aa / 100.0))
        })
        .collect::<vnet_core::Result<Vec<_>>>()?;

    let n_arr = h.len(Level::Arrondissement);
    let n_site = h.len(Level::Site);
    let days = spec.year_days();
    let arr_ids: Vec<&str> = h.ids(Level::Arrondissement).collect();
    let site_arr = h.projection(Level::Site, Level::Arrondissement)?;
    let arr_region = h.projection(Level::Arrondissement, Level::Region)?;
    let mut slopes = [0.0; INDICATOR_COUNT];
    for (name, &v) in &spec.behavior.slopes {
        slopes[indicator_index(name).expect("validated")] = v;
    }
    let stamp = |day: u16, hour: u8| HourStamp::from_ordinal(spec.year, day, hour).expect("valid ordinal");

    let mut users = Vec::with_capacity(spec.users.count);
    let mut events = Vec::new();
    let mut behavior = Vec::with_capacity(spec.users.count * 12);
    let wu = width(5, spec.users.count);
    for u in 0..spec.users.count {
        let mut rng = stream(spec.seed, DOMAIN_USERS, u as u64);
        let id = format!("U{:0wu$}", u + 1);
        let home = site_arr[rng.random_range(0..n_site)];
        let other = |rng: &mut ChaCha8Rng| {
            if n_arr == 1 {
                home
            } else {
                (home + rng.random_range(1..n_arr)) % n_arr
            }
        };
        let roll: f64 = rng.random();
        let class = if roll < spec.users.resident_fraction {
            UserClass::Resident
        } else if roll < spec.users.resident_fraction + spec.users.sparse_fraction || n_arr == 1 {
            UserClass::Sparse
        } else {
            UserClass::Ambiguous
        };
        let (lo, hi) = match class {
            UserClass::Sparse => (10, days * 2 / 5),
            _ => (days * 11 / 20, days * 9 / 10),
        };
        let nights = rng.random_range(lo..=hi) as usize;
        let mut days_used: Vec<usize> = sample(&mut rng, days as usize, nights).into_vec();
        days_used.sort_unstable();
        let second = other(&mut rng);
        let mut calls: Vec<(HourStamp, usize)> = Vec::new();
        for &day in &days_used {
            let n = 1 + usize::from(rng.random::<f64>() < 0.3);
            for _ in 0..n {
                let arr = match class {
                    UserClass::Ambiguous if rng.random::<f64>() >= 0.7 => second,
                    _ => home,
                };
                calls.push((stamp(day as u16, rng.random_range(20..24)), arr));
            }
        }
        if class == UserClass::Resident && n_arr > 1 {
            // A few night calls away from home, keeping concentration near 0.98.
            for _ in 0..calls.len() / 50 {
                let day = days_used[rng.random_range(0..days_used.len())];
                let arr = other(&mut rng);
                calls.push((stamp(day as u16, rng.random_range(20..24)), arr));
            }
        }
        for _ in 0..spec.users.day_calls {
            let arr = if rng.random::<f64>() < 0.5 { home } else { other(&mut rng) };
            calls.push((stamp(rng.random_range(0..days), rng.random_range(8..20)), arr));
        }
        calls.sort_by_key(|&(t, a)| (t.ordinal(), t.hour(), a));
        events.extend(calls.into_iter().map(|(hour, a)| UserCallEvent {
            user: id.clone(),
            hour,
            arrondissement: arr_ids[a].to_string(),
        }));

        let mut brng = stream(spec.seed, DOMAIN_BEHAVIOR, u as u64);
        let home_h = poverty[arr_region[home]].h;
        let base: Vec<f64> = (0..INDICATOR_COUNT)
            .map(|k| {
                let v = indicator_base(k) * (1.0 + spec.behavior.noise_sd * normal(&mut brng))
                    + slopes[k] * (home_h / 100.0 - 0.5);
                if k == PIC_INDEX {
                    v.clamp(0.0, 1.0)
                } else {
                    v
                }
            })
            .collect();
        for month in 1..=12u8 {
            let values = base
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let e = normal(&mut brng);
                    if k == PIC_INDEX {
                        (v + 0.02 * e).clamp(0.0, 1.0)
                    } else {
                        v * (1.0 + 0.05 * e)
                    }
                })
                .collect();
            behavior.push(BehaviorRecord::new(id.clone(), month, values)?);
        }
        users.push(PlantedUser {
            id,
            home: arr_ids[home].to_string(),
            class,
        });
    }
    Ok(GroundTruth {
        poverty,
        users,
        events,
        behavior,
    })
}

/// Planted parameters and answers, for assertions against pipeline output.
pub fn truth_json(world: &World, truth: &GroundTruth, kappa: f64) -> serde_json::Value {
    let h = &world.hierarchy;
    let regions: Vec<_> = h
        .units(Level::Region)
        .iter()
        .enumerate()
        .map(|(r, u)| {
            let p = &truth.poverty[r];
            json!({
                "id": u.id,
                "attractiveness": world.region_attractiveness[r],
                "H": p.h,
                "A": p.a,
                "MPI": p.mpi,
            })
        })
        .collect();
    let arrs: Vec<_> = h
        .units(Level::Arrondissement)
        .iter()
        .enumerate()
        .map(|(a, u)| {
            json!({
                "id": u.id,
                "region": u.parent,
                "attractiveness": world.arrondissement_attractiveness[a],
                "sites": h.site_count(Level::Arrondissement, a),
            })
        })
        .collect();
    json!({
        "spec": world.spec,
        "kappa": kappa,
        "regions": regions,
        "arrondissements": arrs,
        "users": truth.users,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub regions: usize,
    pub arrondissements: usize,
    pub sites: usize,
    pub flows: FlowSummary,
    pub users: usize,
}

pub const SYNTH_FILES: [&str; 7] = [
    "hierarchy.csv",
    "flows.csv",
    "poverty.csv",
    "userlog.csv",
    "behavior.csv",
    "boundaries.geojson",
    "truth.json",
];

/// Generate a world and write all of [`SYNTH_FILES`] into `dir`.
pub fn write_world(spec: &WorldSpec, dir: &Path) -> Result<SynthSummary> {
    let world = gen_world(spec)?;
    let truth = gen_ground_truth(&world)?;
    let (kappa, _) = world.expected_volumes()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<BufWriter<fs::File>> {
        let path = dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::with_capacity(1 << 20, f))
    };
    let finish = |name: &str, mut w: BufWriter<fs::File>| w.flush().map_err(|e| Error::io(dir.join(name), e));
    let written = |name: &str, r: io::Result<()>| r.map_err(|e| Error::io(dir.join(name), e));

    let mut w = create("hierarchy.csv")?;
    written("hierarchy.csv", ingest::write_hierarchy(&mut w, &world.hierarchy))?;
    finish("hierarchy.csv", w)?;

    let mut w = create("flows.csv")?;
    let flows = gen_flows(&world, &mut w)?;
    finish("flows.csv", w)?;

    let mut w = create("poverty.csv")?;
    written("poverty.csv", ingest::write_poverty(&mut w, &truth.poverty))?;
    finish("poverty.csv", w)?;

    let mut w = create("userlog.csv")?;
    written("userlog.csv", ingest::write_user_log(&mut w, &truth.events))?;
    finish("userlog.csv", w)?;

    let mut w = create("behavior.csv")?;
    written("behavior.csv", ingest::write_behavior(&mut w, &truth.behavior))?;
    finish("behavior.csv", w)?;

    let mut w = create("boundaries.geojson")?;
    written("boundaries.geojson", w.write_all(world.boundaries().to_string_pretty().as_bytes()))?;
    finish("boundaries.geojson", w)?;

    let mut w = create("truth.json")?;
    let text = serde_json::to_string_pretty(&truth_json(&world, &truth, kappa)).expect("values serialize");
    written("truth.json", writeln!(w, "{text}"))?;
    finish("truth.json", w)?;

    let h = &world.hierarchy;
    Ok(SynthSummary {
        regions: h.len(Level::Region),
        arrondissements: h.len(Level::Arrondissement),
        sites: h.len(Level::Site),
        flows,
        users: truth.users.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use vnet_core::stats::pearson;

    fn small(seed: u64) -> WorldSpec {
        WorldSpec {
            seed,
            regions: 4,
            arrondissements_per_region: [2, 3],
            sites_per_arrondissement: [2, 4],
            target_volume: 20_000.0,
            users: UserSpec {
                count: 40,
                ..UserSpec::default()
            },
            ..WorldSpec::default()
        }
    }

    #[test]
    fn single_unit_world() {
        let spec = WorldSpec {
            regions: 1,
            arrondissements_per_region: [1, 1],
            sites_per_arrondissement: [1, 1],
            ..WorldSpec::default()
        };
        let w = gen_world(&spec).unwrap();
        let csv = String::from_utf8(w.hierarchy_csv()).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("S0001,A001,R01,"));
    }

    #[test]
    fn zero_counts_rejected() {
        for spec in [
            WorldSpec {
                regions: 0,
                ..WorldSpec::default()
            },
            WorldSpec {
                sites_per_arrondissement: [0, 3],
                ..WorldSpec::default()
            },
        ] {
            assert!(matches!(gen_world(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = gen_world(&small(9)).unwrap();
        let b = gen_world(&small(9)).unwrap();
        assert_eq!(a.hierarchy_csv(), b.hierarchy_csv());
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        gen_flows(&a, &mut fa).unwrap();
        gen_flows(&b, &mut fb).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(gen_ground_truth(&a).unwrap(), gen_ground_truth(&b).unwrap());
        assert_ne!(gen_world(&small(10)).unwrap().hierarchy_csv(), a.hierarchy_csv());
    }

    #[test]
    fn full_scale_counts_parse_back() {
        let w = gen_world(&WorldSpec::default()).unwrap();
        let h = ingest::parse_hierarchy(w.hierarchy_csv().as_slice()).unwrap();
        assert_eq!(h.len(Level::Region), 14);
        assert!((98..=154).contains(&h.len(Level::Arrondissement)));
        assert_eq!(h.len(Level::Site), w.hierarchy.len(Level::Site));
        assert_eq!(h.site_counts(Level::Arrondissement), w.hierarchy.site_counts(Level::Arrondissement));
        let (s, wst, n, e) = BOUNDING_BOX;
        for unit in h.units(Level::Site) {
            let p = unit.centroid.unwrap();
            assert!(p.lat > s && p.lat < n && p.lon > wst && p.lon < e);
        }
    }

    #[test]
    fn zero_kappa_gives_empty_flows() {
        let spec = WorldSpec {
            kappa: Some(0.0),
            ..small(3)
        };
        let w = gen_world(&spec).unwrap();
        let mut out = Vec::new();
        let summary = gen_flows(&w, &mut out).unwrap();
        assert_eq!(summary.records, 0);
        assert_eq!(String::from_utf8(out).unwrap(), "hour,from_site,to_site,calls,texts\n");
    }

    #[test]
    fn flows_parse_and_sum_to_volume() {
        let w = gen_world(&small(4)).unwrap();
        let mut out = Vec::new();
        let summary = gen_flows(&w, &mut out).unwrap();
        let records = ingest::parse_flows(out.as_slice()).unwrap();
        assert_eq!(records.len() as u64, summary.records);
        assert_eq!(records.iter().map(|r| r.volume()).sum::<u64>(), summary.volume);
        let m = vnet_core::flow::build_site_matrix(&records, &w.hierarchy).unwrap();
        assert_eq!(m.total_count(), Some(u128::from(summary.volume)));
    }

    #[test]
    fn flat_world_has_symmetric_means() {
        let spec = WorldSpec {
            attractiveness: Some(vec![0.0; 4]),
            arrondissement_sd: 0.0,
            ..small(5)
        };
        let w = gen_world(&spec).unwrap();
        let (kappa, mu) = w.expected_volumes().unwrap();
        let n = w.hierarchy.len(Level::Arrondissement);
        let d = w.hierarchy.pairwise_distance_matrix(Level::Arrondissement).unwrap();
        let sites = w.hierarchy.site_counts(Level::Arrondissement);
        for i in 0..n {
            for j in 0..n {
                assert!((mu[i * n + j] - mu[j * n + i]).abs() <= 1e-9 * mu[i * n + j]);
                if i != j {
                    // Gravity-normalizing the expectation leaves only the constant.
                    let flat = mu[i * n + j] * d.get(i, j).max(1.0) / (sites[i] * sites[j]) as f64;
                    assert!((flat / kappa - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn poverty_is_exact_without_noise() {
        let mut spec = small(6);
        spec.poverty.h.noise_sd = 0.0;
        spec.poverty.a.noise_sd = 0.0;
        spec.attractiveness = Some(vec![-0.6, 0.1, 0.4, 0.9]);
        let w = gen_world(&spec).unwrap();
        let t = gen_ground_truth(&w).unwrap();
        let hs: Vec<f64> = t.poverty.iter().map(|p| p.h).collect();
        let r = pearson(&w.region_attractiveness, &hs).unwrap().r;
        assert!((r + 1.0).abs() < 1e-12, "{r}");
        for p in &t.poverty {
            assert_eq!(p.mpi, (p.h / 100.0) * (p.a / 100.0));
        }
    }

    /// Off-diagonal volume leaving arrondissement 0, averaged over seeds.
    fn mean_outflow(world: &World, seeds: u64) -> f64 {
        let site_arr = world.hierarchy.projection(Level::Site, Level::Arrondissement).unwrap();
        let mut total = 0.0;
        for seed in 0..seeds {
            let mut w = world.clone();
            w.spec.seed = 500 + seed;
            let mut out = Vec::new();
            gen_flows(&w, &mut out).unwrap();
            for r in ingest::parse_flows(out.as_slice()).unwrap() {
                let i = site_arr[w.hierarchy.index_of(Level::Site, &r.from_site).unwrap()];
                let j = site_arr[w.hierarchy.index_of(Level::Site, &r.to_site).unwrap()];
                if i == 0 && j != 0 {
                    total += r.volume() as f64;
                }
            }
        }
        total / seeds as f64
    }

    #[test]
    fn doubling_sites_doubles_outflow() {
        let spec = WorldSpec {
            kappa: Some(500.0),
            ..small(7)
        };
        let world = gen_world(&spec).unwrap();
        // Duplicate every site of A001 in place: same positions, twice the count.
        let h = &world.hierarchy;
        let k = world.arrondissement_sites[0].len();
        let mut rows = Vec::new();
        for (i, unit) in h.units(Level::Site).iter().enumerate() {
            let a = h.parent_index(Level::Site, i).unwrap();
            let row = |site: String| SiteRow {
                site,
                arrondissement: h.unit_at(Level::Arrondissement, a).id.clone(),
                region: h.unit_at(Level::Region, h.parent_index(Level::Arrondissement, a).unwrap()).id.clone(),
                position: unit.centroid.unwrap(),
            };
            rows.push(row(unit.id.clone()));
            if a == 0 {
                rows.push(row(format!("{}b", unit.id)));
            }
        }
        let mut doubled = world.clone();
        doubled.hierarchy = SpatialHierarchy::from_sites(rows).unwrap();
        doubled.arrondissement_sites = world
            .arrondissement_sites
            .iter()
            .enumerate()
            .map(|(a, r)| if a == 0 { 0..2 * k } else { r.start + k..r.end + k })
            .collect();
        assert_eq!(doubled.hierarchy.site_count(Level::Arrondissement, 0), 2 * k);

        let ratio = mean_outflow(&doubled, 20) / mean_outflow(&world, 20);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn empirical_pair_means_match_poisson_means() {
        let base = small(11);
        let world = gen_world(&base).unwrap();
        let (_, mu) = world.expected_volumes().unwrap();
        let n = world.hierarchy.len(Level::Arrondissement);
        let seeds = 20;
        let mut totals = vec![0.0; n * n];
        for seed in 0..seeds {
            let mut w = world.clone();
            w.spec.seed = 1000 + seed;
            let mut out = Vec::new();
            gen_flows(&w, &mut out).unwrap();
            let records = ingest::parse_flows(out.as_slice()).unwrap();
            let site_arr = w.hierarchy.projection(Level::Site, Level::Arrondissement).unwrap();
            for r in &records {
                let i = site_arr[w.hierarchy.index_of(Level::Site, &r.from_site).unwrap()];
                let j = site_arr[w.hierarchy.index_of(Level::Site, &r.to_site).unwrap()];
                totals[i * n + j] += r.volume() as f64;
            }
        }
        for k in 0..n * n {
            let empirical = totals[k] / seeds as f64;
            // Over 20 seeds, 5% exceeds four standard errors once mu > 320.
            if mu[k] > 320.0 {
                assert!((empirical / mu[k] - 1.0).abs() < 0.05, "pair {k}: {empirical} vs {}", mu[k]);
            }
        }
        let total: f64 = totals.iter().sum::<f64>() / seeds as f64;
        let expected: f64 = mu.iter().sum();
        assert!((total / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn planted_users_behave_as_classed() {
        let w = gen_world(&small(8)).unwrap();
        let t = gen_ground_truth(&w).unwrap();
        let homes = vnet_core::behavior::localize_users(&t.events, &w.hierarchy, &Default::default()).unwrap();
        for (u, a) in t.users.iter().zip(&homes) {
            assert_eq!(u.id, a.user);
            assert_eq!(a.retained, u.class == UserClass::Resident, "{u:?} {a:?}");
            if a.retained {
                assert_eq!(a.a.as_deref(), Some(u.home.as_str()));
            }
        }
        assert_eq!(t.behavior.len(), 12 * t.users.len());
    }
}
