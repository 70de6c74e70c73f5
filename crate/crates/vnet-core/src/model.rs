//! Linear poverty models: `H̃ = slope·f + intercept`, `Ã` likewise, and the
//! composed index `MPI = (H̃/100)·(Ã/100)`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::NodeScoreVector;
use crate::records::PovertyRecord;
use crate::spatial::{Level, SpatialHierarchy};
use crate::stats::{ols_fit, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClampPolicy {
    /// Clamp H and A to `[0, 100]` before composing MPI.
    #[default]
    Clamp,
    /// Keep raw linear predictions; MPI may then leave `[0, 1]`.
    None,
}

impl ClampPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ClampPolicy::Clamp => "clamp",
            ClampPolicy::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clamp" => Some(ClampPolicy::Clamp),
            "none" => Some(ClampPolicy::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PovertyModelPair {
    pub feature: String,
    pub fit_level: Level,
    /// Headcount model, percent per unit of feature.
    pub h: LinearModel,
    /// Intensity model, percent per unit of feature.
    pub a: LinearModel,
    pub clamp: ClampPolicy,
    /// Number of units scored at the fit level (the rescale reference).
    pub fit_units: usize,
}

impl PovertyModelPair {
    /// A stored model given by its coefficients rather than fitted.
    pub fn from_coefficients(
        feature: &str,
        fit_level: Level,
        fit_units: usize,
        h: (f64, f64),
        a: (f64, f64),
    ) -> Self {
        let model = |(slope, intercept)| LinearModel {
            slope,
            intercept,
            r_squared: f64::NAN,
            n: fit_units,
        };
        PovertyModelPair {
            feature: feature.to_string(),
            fit_level,
            h: model(h),
            a: model(a),
            clamp: ClampPolicy::Clamp,
            fit_units,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub models: PovertyModelPair,
    pub joined: usize,
    /// Scored units without a poverty record.
    pub unmatched_scores: Vec<String>,
    /// Poverty records without a score.
    pub unmatched_poverty: Vec<String>,
}

/// Fit H and A against a feature, inner-joining units by id.
pub fn fit_poverty_models(scores: &NodeScoreVector, poverty: &[PovertyRecord]) -> Result<FitOutcome> {
    let by_region: BTreeMap<&str, &PovertyRecord> =
        poverty.iter().map(|p| (p.region.as_str(), p)).collect();
    let mut f = Vec::new();
    let mut h = Vec::new();
    let mut a = Vec::new();
    let mut unmatched_scores = Vec::new();
    for (id, value) in scores.iter() {
        match by_region.get(id) {
            Some(p) => {
                f.push(value);
                h.push(p.h);
                a.push(p.a);
            }
            None => unmatched_scores.push(id.to_string()),
        }
    }
    let unmatched_poverty = poverty
        .iter()
        .filter(|p| scores.get(&p.region).is_none())
        .map(|p| p.region.clone())
        .collect();
    if f.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: f.len(),
        });
    }
    let models = PovertyModelPair {
        feature: scores.label(),
        fit_level: scores.level,
        h: ols_fit(&f, &h)?,
        a: ols_fit(&f, &a)?,
        clamp: ClampPolicy::Clamp,
        fit_units: scores.len(),
    };
    Ok(FitOutcome {
        models,
        joined: f.len(),
        unmatched_scores,
        unmatched_poverty,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PovertyPrediction {
    pub unit_id: String,
    pub level: Level,
    pub feature: String,
    /// Feature value after any rescaling, as fed to the models.
    pub feature_value: f64,
    pub h_raw: f64,
    pub a_raw: f64,
    pub h: f64,
    pub a: f64,
    pub mpi: f64,
    /// Whether H or A was clamped.
    pub clamped: bool,
}

/// Apply a model pair to a single feature value.
pub fn predict_value(models: &PovertyModelPair, value: f64) -> (f64, f64, f64, f64, f64, bool) {
    let h_raw = models.h.predict(value);
    let a_raw = models.a.predict(value);
    let (h, a) = match models.clamp {
        ClampPolicy::Clamp => (h_raw.clamp(0.0, 100.0), a_raw.clamp(0.0, 100.0)),
        ClampPolicy::None => (h_raw, a_raw),
    };
    let clamped = h != h_raw || a != a_raw;
    let mpi = (h / 100.0) * (a / 100.0);
    (h_raw, a_raw, h, a, mpi, clamped)
}

/// Predict H, A and MPI for every scored unit.
///
/// With `rescale`, scores are multiplied by `N_scores / N_fit` first so a
/// finer level whose scores sum to one (PageRank) matches the fit level's
/// mean.
pub fn predict(models: &PovertyModelPair, scores: &NodeScoreVector, rescale: bool) -> Result<Vec<PovertyPrediction>> {
    let label = scores.label();
    if label != models.feature {
        return Err(Error::FeatureMismatch {
            model: models.feature.clone(),
            scores: label,
        });
    }
    let factor = if rescale {
        if models.fit_units == 0 {
            return Err(Error::InvalidParameter {
                name: "fit_units",
                reason: "rescaling needs the fit-level unit count".into(),
            });
        }
        scores.len() as f64 / models.fit_units as f64
    } else {
        1.0
    };
    Ok(scores
        .iter()
        .map(|(id, raw)| {
            let value = raw * factor;
            let (h_raw, a_raw, h, a, mpi, clamped) = predict_value(models, value);
            PovertyPrediction {
                unit_id: id.to_string(),
                level: scores.level,
                feature: models.feature.clone(),
                feature_value: value,
                h_raw,
                a_raw,
                h,
                a,
                mpi,
                clamped,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub region: String,
    pub region_mpi: f64,
    /// Site-count-weighted mean of the region's arrondissement MPIs.
    pub arrondissement_mpi: f64,
    pub arrondissements: usize,
    /// `(arrondissement_mpi − region_mpi) / region_mpi`; `None` when the
    /// region prediction is zero.
    pub relative_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    /// Regions predicted at region level with no predicted arrondissement.
    pub omitted: Vec<String>,
}

impl ConsistencyReport {
    pub fn median_abs_relative_diff(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.relative_diff)
            .map(libm::fabs)
            .collect();
        crate::numeric::median(&v)
    }
}

/// Compare each region's own prediction with the aggregate of its
/// arrondissements' predictions.
pub fn level_consistency_report(
    region_preds: &[PovertyPrediction],
    arr_preds: &[PovertyPrediction],
    h: &SpatialHierarchy,
) -> Result<ConsistencyReport> {
    let mut sums: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for p in arr_preds {
        let ai = h.index_of(Level::Arrondissement, &p.unit_id)?;
        let ri = h.ancestor_index(Level::Arrondissement, ai, Level::Region)?;
        let w = h.site_count(Level::Arrondissement, ai) as f64;
        let e = sums.entry(ri).or_insert((0.0, 0.0, 0));
        e.0 += w * p.mpi;
        e.1 += w;
        e.2 += 1;
    }
    let mut report = ConsistencyReport::default();
    for p in region_preds {
        let ri = h.index_of(Level::Region, &p.unit_id)?;
        match sums.get(&ri) {
            Some(&(weighted, weight, count)) if weight > 0.0 => {
                let mean = weighted / weight;
                report.rows.push(ConsistencyRow {
                    region: p.unit_id.clone(),
                    region_mpi: p.mpi,
                    arrondissement_mpi: mean,
                    arrondissements: count,
                    relative_diff: (p.mpi != 0.0).then(|| (mean - p.mpi) / p.mpi),
                });
            }
            _ => report.omitted.push(p.unit_id.clone()),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Measure;
    use crate::spatial::{LatLon, SiteRow};
    use alloc::format;
    use alloc::vec;

    fn pagerank_reference() -> PovertyModelPair {
        PovertyModelPair::from_coefficients("pagerank", Level::Region, 14, (-708.32, 131.94), (-346.66, 84.58))
    }

    fn pic_reference() -> PovertyModelPair {
        PovertyModelPair::from_coefficients(
            "pct_initiated_conversation",
            Level::Region,
            14,
            (-302.65, 119.35),
            (-151.53, 78.84),
        )
    }

    #[test]
    fn predict_reference_pagerank() {
        let (h_raw, a_raw, _, _, mpi, clamped) = predict_value(&pagerank_reference(), 0.05);
        assert!((h_raw - 96.524).abs() < 1e-9);
        assert!((a_raw - 67.247).abs() < 1e-9);
        // 0.96524 · 0.67247 = 0.6490949428
        assert!((mpi - 0.6490949428).abs() < 1e-9);
        assert!(!clamped);
    }

    #[test]
    fn predict_zero_crossing_and_clamp() {
        let m = pagerank_reference();
        let (h_raw, _, _, _, mpi, _) = predict_value(&m, 131.94 / 708.32);
        assert!(h_raw.abs() < 1e-12);
        assert!(mpi.abs() < 1e-12);

        let (h_raw, _, h, _, mpi, clamped) = predict_value(&m, 0.25);
        assert!((h_raw + 45.14).abs() < 1e-9);
        assert_eq!(h, 0.0);
        assert_eq!(mpi, 0.0);
        assert!(clamped);

        let mut open = m.clone();
        open.clamp = ClampPolicy::None;
        let (_, _, h, _, _, clamped) = predict_value(&open, 0.25);
        assert!((h + 45.14).abs() < 1e-9);
        assert!(!clamped);
    }

    #[test]
    fn predict_reference_pic() {
        let (h_raw, a_raw, _, _, mpi, _) = predict_value(&pic_reference(), 0.2);
        assert!((h_raw - 58.82).abs() < 1e-9);
        assert!((a_raw - 48.534).abs() < 1e-9);
        // 0.5882 · 0.48534 = 0.285476988
        assert!((mpi - 0.285476988).abs() < 1e-9);
    }

    fn scores(level: Level, values: &[f64]) -> NodeScoreVector {
        let ids = (0..values.len()).map(|i| format!("R{i:02}")).collect();
        NodeScoreVector::new(level, Measure::PageRank, ids, values.to_vec())
    }

    fn poverty_from(f: &[f64], hs: impl Fn(f64) -> f64, as_: impl Fn(f64) -> f64) -> Vec<PovertyRecord> {
        f.iter()
            .enumerate()
            .map(|(i, &x)| {
                let (h, a) = (hs(x), as_(x));
                PovertyRecord::new(format!("R{i:02}"), format!("n{i}"), h, a, h * a / 1e4).unwrap()
            })
            .collect()
    }

    #[test]
    fn fit_recovers_planted_coefficients() {
        let f = [0.05, 0.1, 0.15, 0.2, 0.3, 0.12, 0.08];
        let poverty = poverty_from(&f, |x| -100.0 * x + 90.0, |x| -50.0 * x + 70.0);
        let out = fit_poverty_models(&scores(Level::Region, &f), &poverty).unwrap();
        assert!((out.models.h.slope + 100.0).abs() < 1e-6);
        assert!((out.models.h.intercept - 90.0).abs() < 1e-6);
        assert!((out.models.a.slope + 50.0).abs() < 1e-6);
        assert!((out.models.a.intercept - 70.0).abs() < 1e-6);
        assert_eq!(out.joined, 7);
        assert_eq!(out.models.feature, "pagerank");
    }

    #[test]
    fn fit_reports_join_and_rejects_disjoint() {
        let f = [0.05, 0.1, 0.15, 0.2];
        let mut poverty = poverty_from(&f, |x| -100.0 * x + 90.0, |x| -50.0 * x + 70.0);
        poverty[0].region = "ZZ".into();
        let out = fit_poverty_models(&scores(Level::Region, &f), &poverty).unwrap();
        assert_eq!(out.joined, 3);
        assert_eq!(out.unmatched_scores, vec!["R00".to_string()]);
        assert_eq!(out.unmatched_poverty, vec!["ZZ".to_string()]);

        for p in &mut poverty {
            p.region = format!("X{}", p.region);
        }
        assert_eq!(
            fit_poverty_models(&scores(Level::Region, &f), &poverty).unwrap_err(),
            Error::InsufficientData { needed: 3, got: 0 }
        );
    }

    #[test]
    fn predict_checks_feature_and_rescales() {
        let m = pagerank_reference();
        let mut eig = scores(Level::Arrondissement, &[0.01; 28]);
        eig.measure = Measure::Eigenvector;
        assert!(matches!(predict(&m, &eig, false), Err(Error::FeatureMismatch { .. })));

        let fine = scores(Level::Arrondissement, &[0.01; 28]);
        let plain = predict(&m, &fine, false).unwrap();
        let rescaled = predict(&m, &fine, true).unwrap();
        assert_eq!(plain[0].feature_value, 0.01);
        assert!((rescaled[0].feature_value - 0.02).abs() < 1e-15);
    }

    fn two_region_world() -> SpatialHierarchy {
        let mut rows = vec![];
        let layout = [("A1", "R1", 1), ("A2", "R1", 3), ("A3", "R2", 2)];
        let mut k = 0;
        for (a, r, sites) in layout {
            for _ in 0..sites {
                rows.push(SiteRow {
                    site: format!("S{k}"),
                    arrondissement: a.into(),
                    region: r.into(),
                    position: LatLon::new(14.0, -15.0).unwrap(),
                });
                k += 1;
            }
        }
        SpatialHierarchy::from_sites(rows).unwrap()
    }

    fn pred(id: &str, level: Level, mpi: f64) -> PovertyPrediction {
        PovertyPrediction {
            unit_id: id.into(),
            level,
            feature: "pagerank".into(),
            feature_value: 0.0,
            h_raw: 0.0,
            a_raw: 0.0,
            h: 0.0,
            a: 0.0,
            mpi,
            clamped: false,
        }
    }

    #[test]
    fn consistency_weighted_by_site_count() {
        let h = two_region_world();
        let regions = [pred("R1", Level::Region, 0.4), pred("R2", Level::Region, 0.5)];
        let arrs = [
            pred("A1", Level::Arrondissement, 0.2),
            pred("A2", Level::Arrondissement, 0.6),
            pred("A3", Level::Arrondissement, 0.5),
        ];
        let rep = level_consistency_report(&regions, &arrs, &h).unwrap();
        // R1: (1·0.2 + 3·0.6)/4 = 0.5, relative (0.5 − 0.4)/0.4 = 0.25
        assert!((rep.rows[0].arrondissement_mpi - 0.5).abs() < 1e-12);
        assert!((rep.rows[0].relative_diff.unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(rep.rows[1].relative_diff, Some(0.0));
        assert_eq!(rep.rows[0].arrondissements, 2);

        let rep = level_consistency_report(&regions, &arrs[2..], &h).unwrap();
        assert_eq!(rep.omitted, vec!["R1".to_string()]);
        assert_eq!(rep.rows.len(), 1);
    }
}
