//! Pipeline configuration: one JSON document whose fields can each be
//! overridden by dotted name (`pagerank.damping=0.9`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use vnet_core::behavior::LocalizationParams;
use vnet_core::metrics::Convergence;
use vnet_core::model::ClampPolicy;
use vnet_core::Level;

use crate::error::{Error, Result};
use crate::svg::ChoroplethSpec;
use crate::synth::WorldSpec;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub flows: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub poverty: Option<PathBuf>,
    pub userlog: Option<PathBuf>,
    pub behavior: Option<PathBuf>,
    /// GeoJSON polygons with `unit_id` (and optionally `level`) properties.
    pub boundaries: Option<PathBuf>,
}

impl Inputs {
    pub fn get(&self, name: &str) -> Option<&PathBuf> {
        match name {
            "flows" => self.flows.as_ref(),
            "hierarchy" => self.hierarchy.as_ref(),
            "poverty" => self.poverty.as_ref(),
            "userlog" => self.userlog.as_ref(),
            "behavior" => self.behavior.as_ref(),
            "boundaries" => self.boundaries.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        let c = Convergence::default();
        PageRankConfig {
            damping: vnet_core::metrics::DEFAULT_DAMPING,
            tol: c.tol,
            max_iter: c.max_iter,
        }
    }
}

impl PageRankConfig {
    pub fn convergence(&self) -> Convergence {
        Convergence {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub night_hours: Vec<u8>,
    pub year_days: u16,
    pub min_day_fraction: f64,
    pub min_concentration: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        let p = LocalizationParams::default();
        LocalizationConfig {
            night_hours: p.night_hours,
            year_days: p.year_days,
            min_day_fraction: p.min_day_fraction,
            min_concentration: p.min_concentration,
        }
    }
}

impl LocalizationConfig {
    pub fn params(&self) -> LocalizationParams {
        LocalizationParams {
            night_hours: self.night_hours.clone(),
            year_days: self.year_days,
            min_day_fraction: self.min_day_fraction,
            min_concentration: self.min_concentration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    /// Distance exponent of the gravity normalization.
    pub alpha: f64,
    pub pagerank: PageRankConfig,
    pub localization: LocalizationConfig,
    /// `clamp` or `none`.
    pub clamp: String,
    /// Multiply finer-level scores by `N_fine / N_fit` before predicting.
    pub rescale: bool,
    /// Score label the poverty model is fitted on.
    pub feature: String,
    pub fit_level: String,
    /// Stored model used instead of fitting.
    pub model: Option<PathBuf>,
    /// Stored indicator model used instead of fitting in the behavior run.
    pub behavior_model: Option<PathBuf>,
    pub influence_threshold: f64,
    pub output: PathBuf,
    pub write_site_matrix: bool,
    pub synth: WorldSpec,
    pub map: ChoroplethSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Inputs::default(),
            alpha: 1.0,
            pagerank: PageRankConfig::default(),
            localization: LocalizationConfig::default(),
            clamp: ClampPolicy::Clamp.as_str().into(),
            rescale: false,
            feature: "pagerank".into(),
            fit_level: "region".into(),
            model: None,
            behavior_model: None,
            influence_threshold: vnet_core::stats::DEFAULT_INFLUENCE_THRESHOLD,
            output: PathBuf::from("out"),
            write_site_matrix: false,
            synth: WorldSpec::default(),
            map: ChoroplethSpec::default(),
        }
    }
}

const PATH_FIELDS: [&str; 9] = [
    "inputs.flows",
    "inputs.hierarchy",
    "inputs.poverty",
    "inputs.userlog",
    "inputs.behavior",
    "inputs.boundaries",
    "model",
    "behavior_model",
    "output",
];

/// Parse `key=value`; the value is read as JSON when it parses, else as a
/// string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Set a dotted path inside a JSON object, creating objects on the way.
pub fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty segment in key `{key}`")));
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Object(Map::new()));
    }
    Ok(())
}

fn get_dotted<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(root, |v, part| v.get_mut(part))
}

impl PipelineConfig {
    /// Load from an optional file, resolve relative paths in the file
    /// against its directory, then apply overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let mut v: Value =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(Error::Config(format!("{}: not a JSON object", p.display())));
                }
                let base = p.parent().unwrap_or(Path::new(""));
                for field in PATH_FIELDS {
                    if let Some(Value::String(s)) = get_dotted(&mut v, field) {
                        let rel = PathBuf::from(&*s);
                        if rel.is_relative() {
                            *s = base.join(rel).to_string_lossy().into_owned();
                        }
                    }
                }
                v
            }
            None => Value::Object(Map::new()),
        };
        for (k, v) in overrides {
            set_dotted(&mut value, k, v.clone())?;
        }
        let config: PipelineConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        let pr = &self.pagerank;
        if !(pr.damping > 0.0 && pr.damping < 1.0) {
            return bad(format!("pagerank.damping {} is not in (0, 1)", pr.damping));
        }
        if !(pr.tol > 0.0 && pr.tol.is_finite()) || pr.max_iter == 0 {
            return bad("pagerank.tol must be positive and pagerank.max_iter at least 1".into());
        }
        self.localization
            .params()
            .validate()
            .map_err(|e| Error::Config(format!("localization: {e}")))?;
        if !(0.0..=1.0).contains(&self.influence_threshold) {
            return bad("influence_threshold must be in [0, 1]".into());
        }
        self.clamp_policy()?;
        self.fit_level()?;
        if self.feature.is_empty() {
            return bad("feature must be named".into());
        }
        if self.map.classes == 0 || !(self.map.width > 0.0) {
            return bad("map.classes and map.width must be positive".into());
        }
        self.synth.validate()
    }

    pub fn clamp_policy(&self) -> Result<ClampPolicy> {
        ClampPolicy::parse(&self.clamp).ok_or_else(|| Error::Config(format!("unknown clamp policy `{}`", self.clamp)))
    }

    pub fn fit_level(&self) -> Result<Level> {
        Level::parse(&self.fit_level).ok_or_else(|| Error::Config(format!("unknown fit_level `{}`", self.fit_level)))
    }

    /// Paths of the named inputs, failing when any is unset or missing.
    pub fn require_inputs(&self, names: &[&str]) -> Result<Vec<PathBuf>> {
        names
            .iter()
            .map(|name| {
                let p = self
                    .inputs
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("inputs.{name} is not set")))?;
                if !p.is_file() {
                    return Err(Error::Config(format!("inputs.{name}: {} does not exist", p.display())));
                }
                Ok(p.clone())
            })
            .collect()
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.pagerank.damping, 0.85);
        assert_eq!(c.localization.night_hours, vec![20, 21, 22, 23]);
    }

    #[test]
    fn dotted_overrides() {
        let o = [
            parse_override("pagerank.damping=0.9").unwrap(),
            parse_override("inputs.flows=data/flows.csv").unwrap(),
            parse_override("synth.users.count=10").unwrap(),
            parse_override("rescale=true").unwrap(),
        ];
        let c = PipelineConfig::load(None, &o).unwrap();
        assert_eq!(c.pagerank.damping, 0.9);
        assert_eq!(c.inputs.flows, Some(PathBuf::from("data/flows.csv")));
        assert_eq!(c.synth.users.count, 10);
        assert!(c.rescale);
    }

    #[test]
    fn rejects_bad_values() {
        for o in ["pagerank.damping=1.5", "localization.min_day_fraction=1.5", "clamp=sometimes", "nonsense=1"] {
            let err = PipelineConfig::load(None, &[parse_override(o).unwrap()]).unwrap_err();
            assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG, "{o}");
        }
    }

    #[test]
    fn file_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"inputs": {"flows": "flows.csv"}, "alpha": 2}"#).unwrap();
        let c = PipelineConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(c.inputs.flows, Some(dir.path().join("flows.csv")));
        assert_eq!(c.alpha, 2.0);
        assert!(matches!(c.require_inputs(&["flows"]), Err(Error::Config(_))));
        assert!(matches!(c.require_inputs(&["hierarchy"]), Err(Error::Config(_))));
    }
}
