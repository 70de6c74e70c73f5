//! Artifact files written by the pipeline stages, and readers for the ones
//! a later stage consumes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use vnet_core::behavior::{HomeAssignment, IndicatorRank, IndicatorTable, ShareRow};
use vnet_core::metrics::{Direction, Measure};
use vnet_core::model::{ClampPolicy, ConsistencyReport, PovertyModelPair, PovertyPrediction};
use vnet_core::records::INDICATOR_NAMES;
use vnet_core::stats::{CorrelationResult, InfluenceReport, LinearModel};
use vnet_core::{FlowMatrix, Level, MatrixKind, NodeScoreVector, SpatialHierarchy};

use crate::error::ParseError;
use crate::ingest::CsvRows;

pub const MATRIX_HEADER: [&str; 3] = ["from_id", "to_id", "value"];
pub const SCORES_HEADER: [&str; 4] = ["unit_id", "measure", "direction", "score"];
pub const CORRELATIONS_HEADER: [&str; 5] = ["measure", "target", "r", "p_value", "n"];
pub const INFLUENCE_HEADER: [&str; 6] = ["excluded_unit", "target", "r_with", "r_without", "delta", "flagged"];
pub const PREDICTIONS_HEADER: [&str; 10] = [
    "unit_id",
    "level",
    "feature",
    "feature_value",
    "H_raw",
    "A_raw",
    "H",
    "A",
    "MPI",
    "clamped",
];

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Sidecar metadata of a matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub level: String,
    pub kind: String,
    pub alpha: Option<f64>,
    pub source: String,
}

impl MatrixMeta {
    pub fn of(m: &FlowMatrix, source: impl Into<String>) -> Self {
        MatrixMeta {
            level: m.level().as_str().into(),
            kind: m.kind().as_str().into(),
            alpha: m.alpha(),
            source: source.into(),
        }
    }
}

/// Nonzero entries sorted by `(from_id, to_id)`; counts are written as
/// integers.
pub fn write_matrix<W: Write>(w: &mut W, m: &FlowMatrix) -> io::Result<()> {
    writeln!(w, "{}", MATRIX_HEADER.join(","))?;
    let ids = m.ids();
    match m.nonzero_counts() {
        Some(counts) => {
            for (i, j, c) in counts {
                writeln!(w, "{},{},{c}", ids[i], ids[j])?;
            }
        }
        None => {
            for (i, j, v) in m.nonzeros() {
                writeln!(w, "{},{},{v}", ids[i], ids[j])?;
            }
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(input: R, meta: &MatrixMeta, h: &SpatialHierarchy) -> Result<FlowMatrix, ParseError> {
    let bad_meta = |field: &str, value: &str| ParseError::new(0, field, format!("unknown {field} `{value}`"));
    let level = Level::parse(&meta.level).ok_or_else(|| bad_meta("level", &meta.level))?;
    let kind = MatrixKind::parse(&meta.kind).ok_or_else(|| bad_meta("kind", &meta.kind))?;
    let ids: Vec<String> = h.ids(level).map(String::from).collect();
    let mut rows = CsvRows::new(input, &MATRIX_HEADER)?;
    let mut counts = Vec::new();
    let mut reals = Vec::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        let index = |k| {
            let id = row.id(k)?;
            h.index_of(level, id).map_err(|e| row.error(k, e.to_string()))
        };
        let (i, j) = (index(0)?, index(1)?);
        match kind {
            MatrixKind::Raw => counts.push((i, j, row.u64(2)?)),
            MatrixKind::Normalized => reals.push((i, j, row.f64(2)?)),
        }
    }
    let built = match kind {
        MatrixKind::Raw => FlowMatrix::raw_from_triplets(level, ids, counts, level == Level::Site),
        MatrixKind::Normalized => FlowMatrix::normalized_from_triplets(level, ids, reals, meta.alpha.unwrap_or(1.0)),
    };
    built.map_err(|e| ParseError::new(0, "value", e.to_string()))
}

/// Scores of several measures, rows sorted by unit id then by the order
/// the vectors are given in.
pub fn write_scores<W: Write>(w: &mut W, vectors: &[NodeScoreVector]) -> io::Result<()> {
    writeln!(w, "{}", SCORES_HEADER.join(","))?;
    let mut rows: Vec<(&str, usize, f64)> = Vec::new();
    for (k, v) in vectors.iter().enumerate() {
        rows.extend(v.iter().map(|(id, s)| (id, k, s)));
    }
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
    for (id, k, s) in rows {
        let v = &vectors[k];
        writeln!(w, "{id},{},{},{s}", v.measure, opt(v.direction))?;
    }
    Ok(())
}

/// Score vectors in first-appearance order of their labels.
pub fn read_scores<R: Read>(input: R, level: Level) -> Result<Vec<NodeScoreVector>, ParseError> {
    let mut rows = CsvRows::new(input, &SCORES_HEADER)?;
    let mut order: Vec<(Measure, Option<Direction>)> = Vec::new();
    let mut columns: BTreeMap<String, (Vec<String>, Vec<f64>)> = BTreeMap::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        let measure = Measure::parse(row.id(1)?);
        let direction = match row.str(2)? {
            "" => None,
            d => Some(Direction::parse(d).ok_or_else(|| row.error(2, format!("unknown direction `{d}`")))?),
        };
        let mut probe = NodeScoreVector::new(level, measure.clone(), vec![], vec![]);
        probe.direction = direction;
        let label = probe.label();
        let entry = columns.entry(label).or_insert_with(|| {
            order.push((measure, direction));
            (Vec::new(), Vec::new())
        });
        entry.0.push(row.id(0)?.to_string());
        entry.1.push(row.f64(3)?);
    }
    Ok(order
        .into_iter()
        .map(|(measure, direction)| {
            let mut v = NodeScoreVector::new(level, measure, vec![], vec![]);
            v.direction = direction;
            let (ids, scores) = columns.remove(&v.label()).expect("label recorded");
            v.ids = ids;
            v.scores = scores;
            v
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub measure: String,
    pub target: String,
    pub result: Option<CorrelationResult>,
    pub n: usize,
}

pub fn write_correlations<W: Write>(w: &mut W, rows: &[CorrelationRow]) -> io::Result<()> {
    writeln!(w, "{}", CORRELATIONS_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.measure,
            r.target,
            opt(r.result.map(|c| c.r)),
            opt(r.result.map(|c| c.p_value)),
            r.n
        )?;
    }
    Ok(())
}

pub fn write_influence<'a, W: Write>(
    w: &mut W,
    reports: impl IntoIterator<Item = (&'a str, &'a InfluenceReport)>,
) -> io::Result<()> {
    writeln!(w, "{}", INFLUENCE_HEADER.join(","))?;
    for (target, report) in reports {
        for row in &report.rows {
            writeln!(
                w,
                "{},{target},{},{},{},{}",
                row.label,
                report.r_with,
                opt(row.r_without),
                opt(row.delta),
                row.flagged
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFile {
    pub slope: f64,
    pub intercept: f64,
    /// Absent for stored coefficient models.
    pub r2: Option<f64>,
    pub n: usize,
}

/// On-disk form of a poverty model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub feature: String,
    pub fit_level: String,
    pub h: LinearModelFile,
    pub a: LinearModelFile,
    pub clamp: String,
    /// Units scored at the fit level; defaults to the H sample size.
    #[serde(default)]
    pub fit_units: Option<usize>,
}

impl From<&PovertyModelPair> for ModelFile {
    fn from(m: &PovertyModelPair) -> Self {
        let part = |l: &LinearModel| LinearModelFile {
            slope: l.slope,
            intercept: l.intercept,
            r2: finite(l.r_squared),
            n: l.n,
        };
        ModelFile {
            feature: m.feature.clone(),
            fit_level: m.fit_level.as_str().into(),
            h: part(&m.h),
            a: part(&m.a),
            clamp: m.clamp.as_str().into(),
            fit_units: Some(m.fit_units),
        }
    }
}

impl ModelFile {
    pub fn into_models(self) -> Result<PovertyModelPair, String> {
        let fit_level = Level::parse(&self.fit_level).ok_or_else(|| format!("unknown fit_level `{}`", self.fit_level))?;
        let clamp = ClampPolicy::parse(&self.clamp).ok_or_else(|| format!("unknown clamp policy `{}`", self.clamp))?;
        let part = |l: LinearModelFile| LinearModel {
            slope: l.slope,
            intercept: l.intercept,
            r_squared: l.r2.unwrap_or(f64::NAN),
            n: l.n,
        };
        for (name, l) in [("h", self.h), ("a", self.a)] {
            if !(l.slope.is_finite() && l.intercept.is_finite()) {
                return Err(format!("model `{name}` has non-finite coefficients"));
            }
        }
        Ok(PovertyModelPair {
            feature: self.feature,
            fit_level,
            fit_units: self.fit_units.unwrap_or(self.h.n),
            h: part(self.h),
            a: part(self.a),
            clamp,
        })
    }
}

pub fn write_model<W: Write>(w: &mut W, m: &PovertyModelPair) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, &ModelFile::from(m))?;
    writeln!(w)
}

pub fn read_model<R: Read>(input: R) -> Result<PovertyModelPair, String> {
    let file: ModelFile = serde_json::from_reader(input).map_err(|e| e.to_string())?;
    file.into_models()
}

pub fn write_predictions<W: Write>(w: &mut W, preds: &[PovertyPrediction]) -> io::Result<()> {
    writeln!(w, "{}", PREDICTIONS_HEADER.join(","))?;
    for p in preds {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            p.unit_id, p.level, p.feature, p.feature_value, p.h_raw, p.a_raw, p.h, p.a, p.mpi, p.clamped
        )?;
    }
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PovertyPrediction>, ParseError> {
    let mut rows = CsvRows::new(input, &PREDICTIONS_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row() {
        let row = row?;
        let level = row.str(1)?;
        let clamped = row.str(9)?;
        out.push(PovertyPrediction {
            unit_id: row.id(0)?.to_string(),
            level: Level::parse(level).ok_or_else(|| row.error(1, format!("unknown level `{level}`")))?,
            feature: row.id(2)?.to_string(),
            feature_value: row.f64(3)?,
            h_raw: row.f64(4)?,
            a_raw: row.f64(5)?,
            h: row.f64(6)?,
            a: row.f64(7)?,
            mpi: row.f64(8)?,
            clamped: clamped
                .parse()
                .map_err(|_| row.error(9, format!("`{clamped}` is not a boolean")))?,
        });
    }
    Ok(out)
}

pub fn write_consistency<W: Write>(w: &mut W, report: &ConsistencyReport) -> io::Result<()> {
    writeln!(w, "region_id,region_MPI,arrondissement_MPI,arrondissements,relative_diff")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.region,
            r.region_mpi,
            r.arrondissement_mpi,
            r.arrondissements,
            opt(r.relative_diff)
        )?;
    }
    Ok(())
}

pub fn write_homes<W: Write>(w: &mut W, homes: &[HomeAssignment]) -> io::Result<()> {
    writeln!(w, "user_id,d,a,c,home_region,retained")?;
    for h in homes {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            h.user,
            h.d,
            h.a.as_deref().unwrap_or(""),
            h.c,
            h.home_region.as_deref().unwrap_or(""),
            h.retained
        )?;
    }
    Ok(())
}

pub fn write_indicator_table<W: Write>(w: &mut W, table: &IndicatorTable) -> io::Result<()> {
    let id = match table.level {
        Level::Region => "region_id",
        Level::Arrondissement => "arrondissement_id",
        Level::Site => "site_id",
    };
    writeln!(w, "{id},user_count,{}", INDICATOR_NAMES.join(","))?;
    for r in &table.rows {
        write!(w, "{},{}", r.unit_id, r.user_count)?;
        for v in &r.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_indicator_ranking<W: Write>(w: &mut W, ranks: &[IndicatorRank]) -> io::Result<()> {
    writeln!(w, "indicator,r,p_value,n,loo_max_delta,flagged")?;
    for r in ranks {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.indicator,
            opt(r.correlation.map(|c| c.r)),
            opt(r.correlation.map(|c| c.p_value)),
            opt(r.correlation.map(|c| c.n)),
            opt(r.loo_max_delta),
            r.flagged
        )?;
    }
    Ok(())
}

pub fn write_sample_shares<W: Write>(w: &mut W, rows: &[ShareRow]) -> io::Result<()> {
    writeln!(w, "region_id,retained_users,user_share,site_share,population_share")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.region,
            r.retained_users,
            r.user_share,
            r.site_share,
            opt(r.population_share)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vnet_core::flow::{coarsen, normalize_gravity};
    use vnet_core::model::predict;

    fn hierarchy() -> SpatialHierarchy {
        crate::ingest::parse_hierarchy(
            "site_id,arrondissement_id,region_id,lat,lon
S1,A1,R1,14.0,-17.0
S2,A1,R1,14.1,-17.1
S3,A2,R2,15.0,-16.0
S4,A3,R2,15.5,-15.0
"
            .as_bytes(),
        )
        .unwrap()
    }

    fn site_matrix(h: &SpatialHierarchy) -> FlowMatrix {
        let ids = h.ids(Level::Site).map(String::from).collect();
        FlowMatrix::raw_from_triplets(Level::Site, ids, [(0, 1, 5), (1, 0, 2), (2, 3, 9), (3, 0, 1), (2, 2, 4)], true)
            .unwrap()
    }

    #[test]
    fn matrix_round_trip() {
        let h = hierarchy();
        let site = site_matrix(&h);
        let arr = coarsen(&site, &h, Level::Arrondissement).unwrap();
        let norm = normalize_gravity(&arr, &h, 1.0).unwrap();
        for m in [&site, &arr, &norm] {
            let mut buf = Vec::new();
            write_matrix(&mut buf, m).unwrap();
            let meta = MatrixMeta::of(m, "test");
            let back = read_matrix(buf.as_slice(), &meta, &h).unwrap();
            assert_eq!(back.kind(), m.kind());
            assert_eq!(back.to_dense(), m.to_dense());
        }
        let mut buf = Vec::new();
        write_matrix(&mut buf, &arr).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "from_id,to_id,value\nA1,A1,7\nA2,A2,4\nA2,A3,9\nA3,A1,1\n"
        );
    }

    #[test]
    fn scores_round_trip() {
        let h = hierarchy();
        let arr = coarsen(&site_matrix(&h), &h, Level::Arrondissement).unwrap();
        let vectors: Vec<NodeScoreVector> = Direction::ALL
            .iter()
            .map(|&d| vnet_core::metrics::activity(&arr, d))
            .collect();
        let mut buf = Vec::new();
        write_scores(&mut buf, &vectors).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit_id,measure,direction,score\nA1,activity_raw,outgoing,0\n"), "{text}");
        assert_eq!(read_scores(buf.as_slice(), Level::Arrondissement).unwrap(), vectors);
    }

    #[test]
    fn model_and_predictions_round_trip() {
        let m = PovertyModelPair::from_coefficients("pagerank", Level::Region, 14, (-708.32, 131.94), (-346.66, 84.58));
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.h.slope, m.h.slope);
        assert!(back.h.r_squared.is_nan());
        assert_eq!((back.fit_units, back.clamp), (14, ClampPolicy::Clamp));

        let scores = NodeScoreVector::new(
            Level::Region,
            Measure::PageRank,
            vec!["R1".into(), "R2".into()],
            vec![0.05, 0.25],
        );
        let preds = predict(&m, &scores, false).unwrap();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
        assert!(preds[1].clamped);
    }
}
