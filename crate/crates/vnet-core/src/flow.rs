//! Origin–destination flow matrices: site-level accumulation, coarsening up
//! the hierarchy and gravity normalization.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use hashbrown::HashMap;

use crate::error::{Error, Result};
use crate::records::FlowRecord;
use crate::spatial::{Level, SpatialHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    /// Call + text counts.
    Raw,
    /// Gravity residuals `m_ij · d_ij^α / (n_i n_j)`.
    Normalized,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Raw => "raw",
            MatrixKind::Normalized => "normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(MatrixKind::Raw),
            "normalized" => Some(MatrixKind::Normalized),
            _ => None,
        }
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    SparseCounts(HashMap<(u32, u32), u64>),
    DenseCounts(Vec<u64>),
    Real(Vec<f64>),
}

/// Square nonnegative matrix, rows are origins and columns destinations,
/// indexed by the hierarchy's unit order at `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    level: Level,
    ids: Vec<String>,
    kind: MatrixKind,
    values: Values,
    alpha: Option<f64>,
}

/// Compressed sparse rows of a matrix, columns ascending within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }
}

impl FlowMatrix {
    /// Raw count matrix from `(origin, destination, count)` triplets;
    /// repeated pairs accumulate.
    pub fn raw_from_triplets(
        level: Level,
        ids: Vec<String>,
        triplets: impl IntoIterator<Item = (usize, usize, u64)>,
        sparse: bool,
    ) -> Result<Self> {
        let n = ids.len();
        let values = if sparse {
            let mut map = HashMap::new();
            for (i, j, c) in triplets {
                check_index(i, j, n)?;
                if c > 0 {
                    *map.entry((i as u32, j as u32)).or_insert(0) += c;
                }
            }
            Values::SparseCounts(map)
        } else {
            let mut dense = alloc::vec![0u64; n * n];
            for (i, j, c) in triplets {
                check_index(i, j, n)?;
                dense[i * n + j] += c;
            }
            Values::DenseCounts(dense)
        };
        Ok(FlowMatrix {
            level,
            ids,
            kind: MatrixKind::Raw,
            values,
            alpha: None,
        })
    }

    /// Normalized matrix from triplets. Entries must be finite and
    /// nonnegative and the diagonal must be zero.
    pub fn normalized_from_triplets(
        level: Level,
        ids: Vec<String>,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        alpha: f64,
    ) -> Result<Self> {
        let n = ids.len();
        let mut dense = alloc::vec![0.0f64; n * n];
        for (i, j, v) in triplets {
            check_index(i, j, n)?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange {
                    field: "matrix entry",
                    value: v,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
            if i == j && v != 0.0 {
                return Err(Error::InvalidParameter {
                    name: "diagonal",
                    reason: alloc::format!("normalized entry ({i}, {i}) is {v}, expected 0"),
                });
            }
            dense[i * n + j] += v;
        }
        Ok(FlowMatrix {
            level,
            ids,
            kind: MatrixKind::Normalized,
            values: Values::Real(dense),
            alpha: Some(alpha),
        })
    }

    /// Real-valued matrix of either kind from a dense row-major buffer; no
    /// integrality check is made for `Raw`, which is then stored as reals.
    pub fn from_dense(level: Level, ids: Vec<String>, kind: MatrixKind, data: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if data.len() != n * n {
            return Err(Error::LengthMismatch {
                left: n * n,
                right: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::OutOfRange {
                field: "matrix entry",
                value: v,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(FlowMatrix {
            level,
            ids,
            kind,
            values: Values::Real(data),
            alpha: None,
        })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Distance exponent used for a normalized matrix.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.values, Values::SparseCounts(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.n();
        match &self.values {
            Values::SparseCounts(map) => map.get(&(i as u32, j as u32)).copied().unwrap_or(0) as f64,
            Values::DenseCounts(d) => d[i * n + j] as f64,
            Values::Real(d) => d[i * n + j],
        }
    }

    /// Exact integer entry of a count matrix.
    pub fn count(&self, i: usize, j: usize) -> Option<u64> {
        let n = self.n();
        match &self.values {
            Values::SparseCounts(map) => Some(map.get(&(i as u32, j as u32)).copied().unwrap_or(0)),
            Values::DenseCounts(d) => Some(d[i * n + j]),
            Values::Real(_) => None,
        }
    }

    /// Exact total of a count matrix.
    pub fn total_count(&self) -> Option<u128> {
        match &self.values {
            Values::SparseCounts(map) => Some(map.values().map(|&c| u128::from(c)).sum()),
            Values::DenseCounts(d) => Some(d.iter().map(|&c| u128::from(c)).sum()),
            Values::Real(_) => None,
        }
    }

    /// Nonzero entries sorted by (row, column).
    pub fn nonzeros(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out: Vec<(usize, usize, f64)> = match &self.values {
            Values::SparseCounts(map) => map
                .iter()
                .map(|(&(i, j), &c)| (i as usize, j as usize, c as f64))
                .collect(),
            Values::DenseCounts(d) => d
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0)
                .map(|(k, &c)| (k / n, k % n, c as f64))
                .collect(),
            Values::Real(d) => d
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (k / n, k % n, v))
                .collect(),
        };
        if self.is_sparse() {
            out.sort_unstable_by_key(|&(i, j, _)| (i, j));
        }
        out
    }

    /// Nonzero count entries sorted by (row, column); `None` for real matrices.
    pub fn nonzero_counts(&self) -> Option<Vec<(usize, usize, u64)>> {
        let n = self.n();
        match &self.values {
            Values::SparseCounts(map) => {
                let mut out: Vec<_> = map.iter().map(|(&(i, j), &c)| (i as usize, j as usize, c)).collect();
                out.sort_unstable_by_key(|&(i, j, _)| (i, j));
                Some(out)
            }
            Values::DenseCounts(d) => Some(
                d.iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0)
                    .map(|(k, &c)| (k / n, k % n, c))
                    .collect(),
            ),
            Values::Real(_) => None,
        }
    }

    pub fn csr(&self) -> Csr {
        let n = self.n();
        let nz = self.nonzeros();
        let mut row_ptr = alloc::vec![0usize; n + 1];
        for &(i, _, _) in &nz {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = nz.iter().map(|&(_, j, _)| j).collect();
        let vals = nz.iter().map(|&(_, _, v)| v).collect();
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = alloc::vec![0.0; n * n];
        for (i, j, v) in self.nonzeros() {
            out[i * n + j] = v;
        }
        out
    }

    fn expect_kind(&self, expected: MatrixKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::MatrixKind {
                expected,
                found: self.kind,
            })
        }
    }

    pub(crate) fn require_kind(&self, expected: MatrixKind) -> Result<()> {
        self.expect_kind(expected)
    }

    fn check_against(&self, h: &SpatialHierarchy) -> Result<()> {
        let expected = h.len(self.level);
        if expected != self.n() || !h.ids(self.level).eq(self.ids.iter().map(String::as_str)) {
            return Err(Error::ShapeMismatch {
                level: self.level,
                expected,
                found: self.n(),
            });
        }
        Ok(())
    }
}

fn check_index(i: usize, j: usize, n: usize) -> Result<()> {
    if i < n && j < n {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: n,
            right: i.max(j) + 1,
        })
    }
}

/// Streaming accumulator for the site-level raw matrix.
///
/// Disjoint shards of the input can be accumulated by separate builders and
/// combined with [`SiteMatrixBuilder::merge`]; entry-wise addition makes the
/// result independent of shard order.
#[derive(Debug, Clone)]
pub struct SiteMatrixBuilder<'h> {
    hierarchy: &'h SpatialHierarchy,
    lookup: HashMap<&'h str, u32>,
    counts: HashMap<(u32, u32), u64>,
}

impl<'h> SiteMatrixBuilder<'h> {
    pub fn new(hierarchy: &'h SpatialHierarchy) -> Self {
        let lookup = hierarchy
            .ids(Level::Site)
            .enumerate()
            .map(|(i, id)| (id, i as u32))
            .collect();
        SiteMatrixBuilder {
            hierarchy,
            lookup,
            counts: HashMap::new(),
        }
    }

    fn site(&self, id: &str) -> Result<u32> {
        self.lookup.get(id).copied().ok_or_else(|| Error::UnknownUnit {
            level: Level::Site,
            id: id.into(),
        })
    }

    pub fn add(&mut self, record: &FlowRecord) -> Result<()> {
        let i = self.site(&record.from_site)?;
        let j = self.site(&record.to_site)?;
        let v = record.volume();
        if v > 0 {
            *self.counts.entry((i, j)).or_insert(0) += v;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: SiteMatrixBuilder<'_>) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
    }

    pub fn finish(self) -> FlowMatrix {
        FlowMatrix {
            level: Level::Site,
            ids: self.hierarchy.ids(Level::Site).map(String::from).collect(),
            kind: MatrixKind::Raw,
            values: Values::SparseCounts(self.counts),
            alpha: None,
        }
    }
}

/// `M[i][j]` = total calls + texts from site `i` to site `j`.
pub fn build_site_matrix<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    h: &SpatialHierarchy,
) -> Result<FlowMatrix> {
    let mut b = SiteMatrixBuilder::new(h);
    for r in flows {
        b.add(r)?;
    }
    Ok(b.finish())
}

/// Sum a raw matrix into blocks of a coarser level. Totals are preserved
/// exactly.
pub fn coarsen(m: &FlowMatrix, h: &SpatialHierarchy, target: Level) -> Result<FlowMatrix> {
    m.expect_kind(MatrixKind::Raw)?;
    if target <= m.level {
        return Err(Error::LevelOrder {
            from: m.level,
            to: target,
        });
    }
    m.check_against(h)?;
    let proj = h.projection(m.level, target)?;
    let n = h.len(target);
    let mut dense = alloc::vec![0u64; n * n];
    match &m.values {
        Values::SparseCounts(map) => {
            for (&(i, j), &c) in map {
                dense[proj[i as usize] * n + proj[j as usize]] += c;
            }
        }
        Values::DenseCounts(d) => {
            let src = m.n();
            for (k, &c) in d.iter().enumerate() {
                if c != 0 {
                    dense[proj[k / src] * n + proj[k % src]] += c;
                }
            }
        }
        Values::Real(_) => {
            return Err(Error::InvalidParameter {
                name: "matrix",
                reason: "raw matrix is not integer-valued".into(),
            })
        }
    }
    Ok(FlowMatrix {
        level: target,
        ids: h.ids(target).map(String::from).collect(),
        kind: MatrixKind::Raw,
        values: Values::DenseCounts(dense),
        alpha: None,
    })
}

/// Gravity normalization: `M̂[i][j] = m[i][j] · d_ij^α / (n_i · n_j)` for
/// `i ≠ j`, with an exactly-zero diagonal since `d_ii = 0`.
pub fn normalize_gravity(m: &FlowMatrix, h: &SpatialHierarchy, alpha: f64) -> Result<FlowMatrix> {
    m.expect_kind(MatrixKind::Raw)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: alloc::format!("{alpha} is not a positive finite exponent"),
        });
    }
    m.check_against(h)?;
    let level = m.level;
    let counts = h.site_counts(level);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroSiteCount {
            level,
            id: h.unit_at(level, i).id.clone(),
        });
    }
    let dist = h.pairwise_distance_matrix(level)?;
    let n = m.n();
    let mut out = alloc::vec![0.0f64; n * n];
    for (i, j, v) in m.nonzeros() {
        if i == j {
            continue;
        }
        let d = dist.get(i, j);
        let scaled = if alpha == 1.0 { d } else { libm::pow(d, alpha) };
        out[i * n + j] = v * scaled / (counts[i] as f64 * counts[j] as f64);
    }
    Ok(FlowMatrix {
        level,
        ids: m.ids.clone(),
        kind: MatrixKind::Normalized,
        values: Values::Real(out),
        alpha: Some(alpha),
    })
}
