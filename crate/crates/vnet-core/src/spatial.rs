//! Spatial units, the site → arrondissement → region containment hierarchy,
//! centroids and great-circle distances.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Spatial resolution, ordered from finest to coarsest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Site,
    Arrondissement,
    Region,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Site, Level::Arrondissement, Level::Region];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Site => "site",
            Level::Arrondissement => "arrondissement",
            Level::Region => "region",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s {
            "site" => Some(Level::Site),
            "arrondissement" => Some(Level::Arrondissement),
            "region" => Some(Level::Region),
            _ => None,
        }
    }

    /// The next coarser level, if any.
    pub fn parent(self) -> Option<Level> {
        match self {
            Level::Site => Some(Level::Arrondissement),
            Level::Arrondissement => Some(Level::Region),
            Level::Region => None,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A point in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = LatLon { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = libm::sin(dlat / 2.0);
    let s_lon = libm::sin(dlon / 2.0);
    let h = s_lat * s_lat + libm::cos(lat1) * libm::cos(lat2) * s_lon * s_lon;
    Ok(2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h.min(1.0))))
}

/// Area centroid of polygons given as `[exterior, hole, hole, ...]` rings in
/// planar lon/lat. Holes are subtracted regardless of ring orientation.
pub fn polygon_centroid(polygons: &[Vec<Vec<LatLon>>]) -> Option<LatLon> {
    let mut area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for polygon in polygons {
        for (k, ring) in polygon.iter().enumerate() {
            let (a, x, y) = ring_moments(ring);
            let sign = if k == 0 { 1.0 } else { -1.0 };
            // Normalize orientation so each ring contributes |area| with its sign.
            let flip = if a < 0.0 { -1.0 } else { 1.0 };
            area += sign * flip * a;
            cx += sign * flip * x;
            cy += sign * flip * y;
        }
    }
    if area.abs() < 1e-15 {
        return None;
    }
    Some(LatLon {
        lat: cy / (6.0 * area),
        lon: cx / (6.0 * area),
    })
}

// Signed shoelace area and first moments of a ring (x = lon, y = lat).
fn ring_moments(ring: &[LatLon]) -> (f64, f64, f64) {
    let n = ring.len();
    if n < 3 {
        return (0.0, 0.0, 0.0);
    }
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        let cross = p.lon * q.lat - q.lon * p.lat;
        a += cross;
        cx += (p.lon + q.lon) * cross;
        cy += (p.lat + q.lat) * cross;
    }
    (a / 2.0, cx, cy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialUnit {
    pub id: String,
    pub level: Level,
    /// Containing unit at the next coarser level; `None` for regions.
    pub parent: Option<String>,
    /// `None` only for coarse units without sites.
    pub centroid: Option<LatLon>,
    pub population: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteRow {
    pub site: String,
    pub arrondissement: String,
    pub region: String,
    pub position: LatLon,
}

#[derive(Debug, Clone, Default)]
struct LevelTable {
    units: Vec<SpatialUnit>,
    site_count: Vec<usize>,
    parent_index: Vec<Option<usize>>,
    index: BTreeMap<String, usize>,
}

/// Containment hierarchy with deterministic per-level indices.
///
/// Units at each level are indexed `0..N` in lexicographic order of their id,
/// and that order defines the rows and columns of every flow matrix.
#[derive(Debug, Clone, Default)]
pub struct SpatialHierarchy {
    levels: [LevelTable; 3],
}

impl SpatialHierarchy {
    pub fn builder() -> HierarchyBuilder {
        HierarchyBuilder::default()
    }

    pub fn from_sites(rows: impl IntoIterator<Item = SiteRow>) -> Result<Self> {
        let mut b = HierarchyBuilder::default();
        for row in rows {
            b.add_site(row)?;
        }
        b.build()
    }

    pub fn len(&self, level: Level) -> usize {
        self.levels[level.slot()].units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len(Level::Site) == 0
    }

    pub fn units(&self, level: Level) -> &[SpatialUnit] {
        &self.levels[level.slot()].units
    }

    pub fn ids(&self, level: Level) -> impl Iterator<Item = &str> + '_ {
        self.units(level).iter().map(|u| u.id.as_str())
    }

    pub fn index_of(&self, level: Level, id: &str) -> Result<usize> {
        self.levels[level.slot()]
            .index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownUnit {
                level,
                id: id.to_string(),
            })
    }

    pub fn unit(&self, level: Level, id: &str) -> Result<&SpatialUnit> {
        let i = self.index_of(level, id)?;
        Ok(&self.levels[level.slot()].units[i])
    }

    pub fn unit_at(&self, level: Level, index: usize) -> &SpatialUnit {
        &self.levels[level.slot()].units[index]
    }

    /// Number of sites contained in the unit (`1` for a site).
    pub fn site_count(&self, level: Level, index: usize) -> usize {
        self.levels[level.slot()].site_count[index]
    }

    pub fn site_counts(&self, level: Level) -> &[usize] {
        &self.levels[level.slot()].site_count
    }

    /// Index of the unit's parent at the next coarser level.
    pub fn parent_index(&self, level: Level, index: usize) -> Option<usize> {
        self.levels[level.slot()].parent_index[index]
    }

    /// Index of the containing unit at any coarser (or equal) level.
    pub fn ancestor_index(&self, level: Level, index: usize, target: Level) -> Result<usize> {
        if target < level {
            return Err(Error::LevelOrder {
                from: level,
                to: target,
            });
        }
        let mut current = level;
        let mut i = index;
        while current != target {
            i = self
                .parent_index(current, i)
                .expect("every non-region unit has a parent");
            current = current.parent().expect("target is coarser");
        }
        Ok(i)
    }

    /// Map from each unit index at `level` to its ancestor index at `target`.
    pub fn projection(&self, level: Level, target: Level) -> Result<Vec<usize>> {
        (0..self.len(level))
            .map(|i| self.ancestor_index(level, i, target))
            .collect()
    }

    pub fn unit_centroid(&self, level: Level, id: &str) -> Result<LatLon> {
        let i = self.index_of(level, id)?;
        self.centroid_at(level, i)
    }

    pub fn centroid_at(&self, level: Level, index: usize) -> Result<LatLon> {
        let table = &self.levels[level.slot()];
        let unit = &table.units[index];
        match unit.centroid {
            Some(c) if table.site_count[index] > 0 => Ok(c),
            _ => Err(Error::EmptyUnit {
                level,
                id: unit.id.clone(),
            }),
        }
    }

    /// Replace the site-mean centroid, e.g. with a boundary polygon centroid.
    pub fn set_centroid(&mut self, level: Level, id: &str, centroid: LatLon) -> Result<()> {
        centroid.validate()?;
        let i = self.index_of(level, id)?;
        self.levels[level.slot()].units[i].centroid = Some(centroid);
        Ok(())
    }

    pub fn set_population(&mut self, level: Level, id: &str, population: f64) -> Result<()> {
        if !(population.is_finite() && population >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "population",
                reason: alloc::format!("{population} is not a nonnegative count"),
            });
        }
        let i = self.index_of(level, id)?;
        self.levels[level.slot()].units[i].population = Some(population);
        Ok(())
    }

    /// Symmetric matrix of centroid distances in km, row-major.
    pub fn pairwise_distance_matrix(&self, level: Level) -> Result<DistanceMatrix> {
        let n = self.len(level);
        let centroids = (0..n)
            .map(|i| self.centroid_at(level, i))
            .collect::<Result<Vec<_>>>()?;
        let mut km = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine_km(centroids[i], centroids[j])?;
                km[i * n + j] = d;
                km[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, km })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    km: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.km[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.km
    }
}

/// Accumulates sites (and optionally site-less coarse units) and validates
/// the containment structure.
#[derive(Debug, Default)]
pub struct HierarchyBuilder {
    sites: BTreeMap<String, SiteRow>,
    arr_parent: BTreeMap<String, String>,
    empty_arrondissements: BTreeMap<String, String>,
    empty_regions: Vec<String>,
}

impl HierarchyBuilder {
    pub fn add_site(&mut self, row: SiteRow) -> Result<&mut Self> {
        row.position.validate()?;
        if self.sites.contains_key(&row.site) {
            return Err(Error::DuplicateSite(row.site));
        }
        self.link_arrondissement(&row.arrondissement, &row.region)?;
        self.sites.insert(row.site.clone(), row);
        Ok(self)
    }

    /// Declare an arrondissement that has no sites (it gets no centroid).
    pub fn add_empty_arrondissement(&mut self, id: &str, region: &str) -> Result<&mut Self> {
        self.link_arrondissement(id, region)?;
        self.empty_arrondissements
            .insert(id.to_string(), region.to_string());
        Ok(self)
    }

    /// Declare a region that has no arrondissements.
    pub fn add_empty_region(&mut self, id: &str) -> &mut Self {
        self.empty_regions.push(id.to_string());
        self
    }

    fn link_arrondissement(&mut self, arr: &str, region: &str) -> Result<()> {
        match self.arr_parent.get(arr) {
            Some(existing) if existing != region => Err(Error::ConflictingParent {
                level: Level::Arrondissement,
                id: arr.to_string(),
                first: existing.clone(),
                second: region.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.arr_parent.insert(arr.to_string(), region.to_string());
                Ok(())
            }
        }
    }

    pub fn build(self) -> Result<SpatialHierarchy> {
        let mut regions: BTreeMap<String, ()> = BTreeMap::new();
        for r in self.arr_parent.values() {
            regions.insert(r.clone(), ());
        }
        for r in &self.empty_regions {
            regions.insert(r.clone(), ());
        }

        let mut h = SpatialHierarchy::default();

        // Region table.
        let region_ids: Vec<String> = regions.into_keys().collect();
        h.levels[Level::Region.slot()] = table(Level::Region, &region_ids, |_| None);

        // Arrondissement table.
        let arr_ids: Vec<String> = self.arr_parent.keys().cloned().collect();
        h.levels[Level::Arrondissement.slot()] = table(Level::Arrondissement, &arr_ids, |id| {
            Some(self.arr_parent[id].clone())
        });

        // Site table.
        let site_ids: Vec<String> = self.sites.keys().cloned().collect();
        h.levels[Level::Site.slot()] = table(Level::Site, &site_ids, |id| {
            Some(self.sites[id].arrondissement.clone())
        });

        for level in [Level::Site, Level::Arrondissement] {
            let parent_level = level.parent().expect("not region");
            let parents: Vec<Option<usize>> = h
                .units(level)
                .iter()
                .map(|u| {
                    let p = u.parent.as_deref().expect("parent set");
                    h.index_of(parent_level, p).map(Some)
                })
                .collect::<Result<_>>()?;
            h.levels[level.slot()].parent_index = parents;
        }

        // Sites: own coordinates and a count of one.
        {
            let t = &mut h.levels[Level::Site.slot()];
            t.site_count = alloc::vec![1; t.units.len()];
            for unit in &mut t.units {
                unit.centroid = Some(self.sites[&unit.id].position);
            }
        }

        // Coarse units: site counts and the running mean of site coordinates.
        // The incremental mean is exact when all contained sites coincide.
        for level in [Level::Arrondissement, Level::Region] {
            let n = h.len(level);
            let mut counts = alloc::vec![0usize; n];
            let mut means = alloc::vec![(0.0f64, 0.0f64); n];
            for s in 0..h.len(Level::Site) {
                let a = h.ancestor_index(Level::Site, s, level)?;
                let p = h.levels[Level::Site.slot()].units[s]
                    .centroid
                    .expect("site centroid");
                counts[a] += 1;
                let k = counts[a] as f64;
                let (lat, lon) = &mut means[a];
                *lat += (p.lat - *lat) / k;
                *lon += (p.lon - *lon) / k;
            }
            let t = &mut h.levels[level.slot()];
            for (i, unit) in t.units.iter_mut().enumerate() {
                if counts[i] > 0 {
                    unit.centroid = Some(LatLon {
                        lat: means[i].0,
                        lon: means[i].1,
                    });
                }
            }
            t.site_count = counts;
        }

        Ok(h)
    }
}

fn table(level: Level, ids: &[String], parent: impl Fn(&str) -> Option<String>) -> LevelTable {
    let units: Vec<SpatialUnit> = ids
        .iter()
        .map(|id| SpatialUnit {
            id: id.clone(),
            level,
            parent: parent(id),
            centroid: None,
            population: None,
        })
        .collect();
    let index = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    LevelTable {
        parent_index: alloc::vec![None; units.len()],
        site_count: alloc::vec![0; units.len()],
        units,
        index,
    }
}
