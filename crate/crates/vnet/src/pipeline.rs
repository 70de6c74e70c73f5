//! Command implementations. Every command writes into a staging directory
//! under the output directory and moves files into place only on success,
//! together with a `manifest.json` of config, input and output hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vnet_core::behavior::{
    aggregate_user_medians, localize_users, rank_indicators, sample_share_report, unit_indicator_medians,
    HomeAssignment, IndicatorRank,
};
use vnet_core::flow::{coarsen, normalize_gravity, SiteMatrixBuilder};
use vnet_core::metrics::{activity, eigenvector_centrality, gravity_residual, introversion, pagerank, Direction};
use vnet_core::model::{
    fit_poverty_models, level_consistency_report, predict, ConsistencyReport, PovertyModelPair, PovertyPrediction,
};
use vnet_core::records::{INDICATOR_NAMES, PIC_INDEX};
use vnet_core::stats::{loo_influence, pearson, InfluenceReport};
use vnet_core::{FlowMatrix, Level, MatrixKind, NodeScoreVector, PovertyRecord, SpatialHierarchy};

use crate::config::{PageRankConfig, PipelineConfig};
use crate::error::{Error, Result, StageExt};
use crate::geojson::{apply_boundary_centroids, flow_lines, write_geojson, FeatureCollection};
use crate::ingest::{self, FlowReader};
use crate::io::{self as files, CorrelationRow, MatrixMeta};
use crate::svg::write_svg_choropleth;

const LOCK_FILE: &str = ".vnet.lock";
const STAGING_DIR: &str = ".vnet-staging";

/// Levels the poverty model is applied at.
pub const MAP_LEVELS: [Level; 2] = [Level::Region, Level::Arrondissement];

/// Output directory transaction: lockfile, staged writes, atomic commit.
pub struct OutputDir {
    root: PathBuf,
    staging: PathBuf,
    lock: PathBuf,
    outputs: BTreeMap<String, String>,
    committed: bool,
}

impl OutputDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(Error::Config(format!(
                    "{} is in use by another run (remove {} if it is stale)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let staging = root.join(STAGING_DIR);
        let out = OutputDir {
            root: root.to_path_buf(),
            staging,
            lock,
            outputs: BTreeMap::new(),
            committed: false,
        };
        if out.staging.exists() {
            fs::remove_dir_all(&out.staging).map_err(|e| Error::io(&out.staging, e))?;
        }
        fs::create_dir(&out.staging).map_err(|e| Error::io(&out.staging, e))?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    /// Render into a buffer with an in-memory writer, then stage it.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(self.staging.join(name), e))?;
        self.write(name, &buf)
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    /// Move staged files into the output directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for name in self.outputs.keys() {
            let (from, to) = (self.staging.join(name), self.root.join(name));
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            written.push(to);
        }
        self.committed = true;
        self.cleanup();
        Ok(written)
    }

    fn cleanup(&self) {
        let _ = fs::remove_dir_all(&self.staging);
        let _ = fs::remove_file(&self.lock);
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            self.cleanup();
        }
    }
}

/// Reader that hashes what passes through it.
struct HashRead<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashRead<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

/// One command invocation: config, output transaction and input hashes.
pub struct Run<'c> {
    pub config: &'c PipelineConfig,
    pub out: OutputDir,
    command: &'static str,
    inputs: BTreeMap<String, Value>,
}

impl<'c> Run<'c> {
    pub fn begin(config: &'c PipelineConfig, command: &'static str) -> Result<Self> {
        Ok(Run {
            config,
            out: OutputDir::open(&config.output)?,
            command,
            inputs: BTreeMap::new(),
        })
    }

    /// Open an input file; the caller must read it to the end and pass the
    /// reader back to [`Run::record`].
    fn open(&self, path: &Path) -> Result<HashRead<BufReader<File>>> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(HashRead {
            inner: BufReader::with_capacity(1 << 20, f),
            hasher: Sha256::new(),
        })
    }

    fn record<R: Read>(&mut self, name: &str, path: &Path, mut reader: HashRead<R>) -> Result<()> {
        io::copy(&mut reader, &mut io::sink()).map_err(|e| Error::io(path, e))?;
        let sha = hex::encode(reader.hasher.finalize());
        self.inputs
            .insert(name.to_string(), json!({ "path": path.to_string_lossy(), "sha256": sha }));
        Ok(())
    }

    /// Parse a whole input with `parse`, recording its hash.
    fn input<T, E: Into<ParseFailure>>(
        &mut self,
        name: &str,
        path: &Path,
        parse: impl FnOnce(&mut HashRead<BufReader<File>>) -> std::result::Result<T, E>,
    ) -> Result<T> {
        let mut reader = self.open(path)?;
        let value = parse(&mut reader).map_err(|e| e.into().at(path))?;
        self.record(name, path, reader)?;
        Ok(value)
    }

    /// An artifact of an earlier command in the output directory.
    fn artifact(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.out.root().join(name);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "{} not found; run the command that produces it first",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Write the manifest and commit.
    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        let config_value = serde_json::to_value(self.config).expect("config serializes");
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.config.sha256(),
            "config": config_value,
            "inputs": self.inputs,
            "outputs": self.out.outputs(),
        });
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        self.out.write("manifest.json", text.as_bytes())?;
        self.out.commit()
    }
}

/// A parse failure before the file path is known.
pub enum ParseFailure {
    Line(crate::ParseError),
    Message(String),
}

impl ParseFailure {
    fn at(self, path: &Path) -> Error {
        match self {
            ParseFailure::Line(source) => Error::Parse {
                path: path.to_path_buf(),
                source,
            },
            ParseFailure::Message(m) => Error::format(path, m),
        }
    }
}

impl From<crate::ParseError> for ParseFailure {
    fn from(e: crate::ParseError) -> Self {
        ParseFailure::Line(e)
    }
}

impl From<String> for ParseFailure {
    fn from(e: String) -> Self {
        ParseFailure::Message(e)
    }
}

fn load_hierarchy(run: &mut Run) -> Result<(SpatialHierarchy, Option<FeatureCollection>)> {
    let [path] = run.config.require_inputs(&["hierarchy"])?.try_into().expect("one path");
    let mut h = run.input("hierarchy", &path, |r| ingest::parse_hierarchy(r))?;
    let boundaries = match run.config.inputs.boundaries.clone() {
        Some(path) => {
            let b = run.input("boundaries", &path, |r| {
                let mut text = String::new();
                r.read_to_string(&mut text).map_err(|e| e.to_string())?;
                FeatureCollection::parse(&text)
            })?;
            let n = apply_boundary_centroids(&mut h, &b)?;
            info!("{n} unit centroids taken from boundary polygons");
            Some(b)
        }
        None => None,
    };
    Ok((h, boundaries))
}

fn load_poverty(run: &mut Run) -> Result<Vec<PovertyRecord>> {
    let [path] = run.config.require_inputs(&["poverty"])?.try_into().expect("one path");
    run.input("poverty", &path, |r| ingest::parse_poverty(r))
}

/// Stream flow records into the sparse site matrix.
fn load_site_matrix(run: &mut Run, h: &SpatialHierarchy) -> Result<FlowMatrix> {
    let [path] = run.config.require_inputs(&["flows"])?.try_into().expect("one path");
    let mut reader = run.open(&path)?;
    let mut builder = SiteMatrixBuilder::new(h);
    let mut records = 0u64;
    {
        let mut flows = FlowReader::new(&mut reader).map_err(|e| ParseFailure::from(e).at(&path))?;
        while let Some(r) = flows.next() {
            let r = r.map_err(|e| ParseFailure::from(e).at(&path))?;
            builder
                .add(&r)
                .map_err(|e| Error::format(&path, format!("line {}: {e}", flows.line())))?;
            records += 1;
        }
    }
    run.record("flows", &path, reader)?;
    info!("{records} flow records aggregated");
    Ok(builder.finish())
}

fn write_matrix(run: &mut Run, m: &FlowMatrix, source: &str) -> Result<()> {
    let stem = format!("matrix_{}_{}", m.level(), m.kind());
    run.out.write_with(&format!("{stem}.csv"), |w| files::write_matrix(w, m))?;
    let meta = serde_json::to_string_pretty(&MatrixMeta::of(m, source)).expect("meta serializes") + "\n";
    run.out.write(&format!("{stem}.meta.json"), meta.as_bytes())
}

fn read_matrix(run: &mut Run, level: Level, kind: MatrixKind, h: &SpatialHierarchy) -> Result<FlowMatrix> {
    let stem = format!("matrix_{level}_{kind}");
    let meta_path = run.artifact(&format!("{stem}.meta.json"))?;
    let meta: MatrixMeta = run.input(&format!("{stem}.meta.json"), &meta_path, |r| {
        serde_json::from_reader(r).map_err(|e| e.to_string())
    })?;
    let path = run.artifact(&format!("{stem}.csv"))?;
    run.input(&format!("{stem}.csv"), &path, |r| files::read_matrix(r, &meta, h))
}

/// All measures on one level, optionally restricted to one measure name.
pub fn level_scores(
    raw: &FlowMatrix,
    norm: &FlowMatrix,
    pr: &PageRankConfig,
    only: Option<&str>,
) -> Result<Vec<NodeScoreVector>> {
    let want = |m: &str| only.is_none_or(|o| o == m);
    let conv = pr.convergence();
    let mut v = Vec::new();
    if want("activity_raw") {
        v.extend(Direction::ALL.iter().map(|&d| activity(raw, d)));
        let out = activity(raw, Direction::Outgoing);
        let within = activity(raw, Direction::Within);
        for (k, id) in out.ids.iter().enumerate() {
            if out.scores[k] + within.scores[k] == 0.0 {
                warn!("{} `{id}` originates no flows; its activity is 0", raw.level());
            }
        }
    }
    if want("activity_normalized") {
        v.extend(Direction::ALL.iter().map(|&d| activity(norm, d)));
    }
    if want("eigenvector") {
        v.push(eigenvector_centrality(norm, conv)?);
    }
    if want("pagerank") {
        v.push(pagerank(norm, pr.damping, conv)?);
    }
    if want("gravity_residual") {
        v.push(gravity_residual(norm)?);
    }
    if want("introversion") {
        let (scores, empty) = introversion(raw)?;
        for id in empty {
            warn!("{} `{id}` has no outgoing volume; introversion set to 0", raw.level());
        }
        v.push(scores);
    }
    if v.is_empty() {
        return Err(Error::Config(format!("unknown measure `{}`", only.unwrap_or(""))));
    }
    Ok(v)
}

/// Units of `v` that have a poverty record, with the feature and each target.
struct Joined {
    labels: Vec<String>,
    x: Vec<f64>,
    targets: [(&'static str, Vec<f64>); 3],
}

fn join(v: &NodeScoreVector, poverty: &[PovertyRecord]) -> Joined {
    let by_region: BTreeMap<&str, &PovertyRecord> = poverty.iter().map(|p| (p.region.as_str(), p)).collect();
    let mut j = Joined {
        labels: Vec::new(),
        x: Vec::new(),
        targets: [("H", Vec::new()), ("A", Vec::new()), ("MPI", Vec::new())],
    };
    for (id, s) in v.iter() {
        if let Some(p) = by_region.get(id) {
            j.labels.push(id.to_string());
            j.x.push(s);
            j.targets[0].1.push(p.h);
            j.targets[1].1.push(p.a);
            j.targets[2].1.push(p.mpi);
        }
    }
    j
}

/// Pearson r of every score vector against H, A and MPI.
pub fn correlation_rows(vectors: &[NodeScoreVector], poverty: &[PovertyRecord]) -> Vec<CorrelationRow> {
    let mut rows = Vec::new();
    for v in vectors {
        let j = join(v, poverty);
        for (target, y) in &j.targets {
            rows.push(CorrelationRow {
                measure: v.label(),
                target: target.to_string(),
                result: pearson(&j.x, y).ok(),
                n: j.x.len(),
            });
        }
    }
    rows
}

/// Leave-one-out influence of each unit on r(feature, target).
pub fn influence_reports(
    feature: &NodeScoreVector,
    poverty: &[PovertyRecord],
    threshold: f64,
) -> Result<Vec<(&'static str, InfluenceReport)>> {
    let j = join(feature, poverty);
    j.targets
        .iter()
        .map(|(target, y)| Ok((*target, loo_influence(&j.x, y, &j.labels, threshold)?)))
        .collect()
}

fn find_feature<'a>(vectors: &'a [NodeScoreVector], feature: &str, level: Level) -> Result<&'a NodeScoreVector> {
    vectors
        .iter()
        .find(|v| v.label() == feature)
        .ok_or_else(|| Error::Config(format!("feature `{feature}` is not among the {level} scores")))
}

fn obtain_model(run: &mut Run, path: Option<PathBuf>, fit: impl FnOnce() -> Result<PovertyModelPair>) -> Result<PovertyModelPair> {
    let mut models = match path {
        Some(path) => run.input("model", &path, |r| files::read_model(r))?,
        None => fit()?,
    };
    models.clamp = run.config.clamp_policy()?;
    Ok(models)
}

fn fit_from(scores: &NodeScoreVector, poverty: &[PovertyRecord]) -> Result<PovertyModelPair> {
    let outcome = fit_poverty_models(scores, poverty)?;
    if !outcome.unmatched_scores.is_empty() || !outcome.unmatched_poverty.is_empty() {
        warn!(
            "model fit dropped units: unscored {:?}, without poverty {:?}",
            outcome.unmatched_poverty, outcome.unmatched_scores
        );
    }
    info!(
        "fitted on {} units: H = {} f + {}, A = {} f + {}",
        outcome.joined, outcome.models.h.slope, outcome.models.h.intercept, outcome.models.a.slope, outcome.models.a.intercept
    );
    Ok(outcome.models)
}

fn write_predictions(run: &mut Run, stem: &str, preds: &[PovertyPrediction], level: Level) -> Result<()> {
    let clamped = preds.iter().filter(|p| p.clamped).count();
    if clamped > 0 {
        warn!("{clamped} {level} prediction(s) clamped to [0, 100]");
    }
    run.out
        .write_with(&format!("{stem}_{level}.csv"), |w| files::write_predictions(w, preds))
}

fn write_consistency(run: &mut Run, report: &ConsistencyReport) -> Result<()> {
    for r in &report.omitted {
        warn!("region `{r}` has no predicted arrondissement; omitted from consistency report");
    }
    run.out.write_with("consistency.csv", |w| files::write_consistency(w, report))
}

fn write_maps(
    run: &mut Run,
    stem: &str,
    preds: &[PovertyPrediction],
    h: &SpatialHierarchy,
    level: Level,
    boundaries: Option<&FeatureCollection>,
) -> Result<()> {
    let fc = write_geojson(preds, h, level, boundaries)?;
    run.out
        .write(&format!("{stem}_{level}.geojson"), fc.to_string_pretty().as_bytes())?;
    let svg = write_svg_choropleth(&fc, &run.config.map);
    run.out.write(&format!("{stem}_{level}.svg"), svg.as_bytes())
}

fn write_flow_lines(run: &mut Run, m: &FlowMatrix, h: &SpatialHierarchy) -> Result<()> {
    let fc = flow_lines(m, h)?;
    run.out
        .write(&format!("flows_{}.geojson", m.level()), fc.to_string_pretty().as_bytes())
}

/// Headline numbers of a full run.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub correlations: Vec<CorrelationRow>,
    pub models: PovertyModelPair,
    pub region_predictions: Vec<PovertyPrediction>,
    pub arrondissement_predictions: Vec<PovertyPrediction>,
    pub consistency: ConsistencyReport,
    pub behavior: Option<BehaviorReport>,
    pub written: Vec<PathBuf>,
}

impl PipelineReport {
    pub fn correlation(&self, measure: &str, target: &str) -> Option<f64> {
        self.correlations
            .iter()
            .find(|r| r.measure == measure && r.target == target)
            .and_then(|r| r.result.map(|c| c.r))
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorReport {
    pub users: usize,
    pub retained: usize,
    pub homes: Vec<HomeAssignment>,
    pub ranking: Vec<IndicatorRank>,
    pub models: PovertyModelPair,
    pub arrondissement_predictions: Vec<PovertyPrediction>,
}

/// Ingest, matrices, measures, correlations, model, predictions, consistency
/// and maps; the behavioral run is appended when its inputs are configured.
pub fn cmd_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.require_inputs(&["hierarchy", "flows", "poverty"])?;
    if let Some(b) = &config.inputs.boundaries {
        config.require_inputs(&["boundaries"]).map_err(|_| Error::Config(format!("inputs.boundaries: {} does not exist", b.display())))?;
    }
    let with_behavior = config.inputs.userlog.is_some() || config.inputs.behavior.is_some();
    if with_behavior {
        config.require_inputs(&["userlog", "behavior"])?;
    }
    let fit_level = config.fit_level()?;
    let mut run = Run::begin(config, "pipeline")?;

    let (h, boundaries) = load_hierarchy(&mut run).stage("ingest")?;
    let poverty = load_poverty(&mut run).stage("ingest")?;
    let site = load_site_matrix(&mut run, &h).stage("ingest")?;

    let arr = coarsen(&site, &h, Level::Arrondissement).stage("matrices")?;
    let region = coarsen(&arr, &h, Level::Region).stage("matrices")?;
    if config.write_site_matrix {
        write_matrix(&mut run, &site, "flows").stage("matrices")?;
    }
    write_matrix(&mut run, &arr, "matrix_site_raw").stage("matrices")?;
    write_matrix(&mut run, &region, "matrix_arrondissement_raw").stage("matrices")?;
    drop(site);

    let mut scores = BTreeMap::new();
    for raw in [&arr, &region] {
        let level = raw.level();
        let norm = normalize_gravity(raw, &h, config.alpha).stage("normalize")?;
        write_matrix(&mut run, &norm, &format!("matrix_{level}_raw")).stage("normalize")?;
        let v = level_scores(raw, &norm, &config.pagerank, None).stage("metrics")?;
        run.out
            .write_with(&format!("scores_{level}.csv"), |w| files::write_scores(w, &v))
            .stage("metrics")?;
        scores.insert(level, v);
    }

    let correlations = correlation_rows(&scores[&Level::Region], &poverty);
    run.out
        .write_with("correlations.csv", |w| files::write_correlations(w, &correlations))
        .stage("correlate")?;
    let feature = find_feature(&scores[&Level::Region], &config.feature, Level::Region).stage("correlate")?;
    let reports = influence_reports(feature, &poverty, config.influence_threshold).stage("correlate")?;
    for (target, report) in &reports {
        for row in report.flagged() {
            warn!(
                "dropping `{}` moves r({}, {target}) by {:+.3}",
                row.label,
                config.feature,
                row.delta.unwrap_or(f64::NAN)
            );
        }
    }
    run.out
        .write_with("influence.csv", |w| {
            files::write_influence(w, reports.iter().map(|(t, r)| (*t, r)))
        })
        .stage("correlate")?;

    let fit_scores = find_feature(
        scores.get(&fit_level).ok_or_else(|| Error::Config(format!("fit_level must be one of {MAP_LEVELS:?}")))?,
        &config.feature,
        fit_level,
    )
    .stage("fit")?
    .clone();
    let models = obtain_model(&mut run, config.model.clone(), || fit_from(&fit_scores, &poverty)).stage("fit")?;
    run.out.write_with("model.json", |w| files::write_model(w, &models)).stage("fit")?;

    let mut preds = BTreeMap::new();
    for level in MAP_LEVELS {
        let v = find_feature(&scores[&level], &models.feature, level).stage("predict")?;
        let p = predict(&models, v, config.rescale && level != models.fit_level).stage("predict")?;
        write_predictions(&mut run, "predictions", &p, level).stage("predict")?;
        preds.insert(level, p);
    }
    let consistency =
        level_consistency_report(&preds[&Level::Region], &preds[&Level::Arrondissement], &h).stage("consistency")?;
    write_consistency(&mut run, &consistency).stage("consistency")?;

    for level in MAP_LEVELS {
        write_maps(&mut run, "map", &preds[&level], &h, level, boundaries.as_ref()).stage("maps")?;
    }
    write_flow_lines(&mut run, &region, &h).stage("maps")?;

    let behavior = if with_behavior {
        Some(behavior_stages(&mut run, &h, &poverty, boundaries.as_ref())?)
    } else {
        None
    };

    let written = run.finish().stage("manifest")?;
    Ok(PipelineReport {
        correlations,
        models,
        region_predictions: preds.remove(&Level::Region).expect("predicted"),
        arrondissement_predictions: preds.remove(&Level::Arrondissement).expect("predicted"),
        consistency,
        behavior,
        written,
    })
}

fn behavior_stages(
    run: &mut Run,
    h: &SpatialHierarchy,
    poverty: &[PovertyRecord],
    boundaries: Option<&FeatureCollection>,
) -> Result<BehaviorReport> {
    let config = run.config;
    let paths = config.require_inputs(&["userlog", "behavior"])?;
    let events = run.input("userlog", &paths[0], |r| ingest::parse_user_log(r)).stage("localize")?;
    let homes = localize_users(&events, h, &config.localization.params()).stage("localize")?;
    drop(events);
    let retained = homes.iter().filter(|a| a.retained).count();
    info!("{retained} of {} users retained", homes.len());
    run.out.write_with("homes.csv", |w| files::write_homes(w, &homes)).stage("localize")?;
    let shares = sample_share_report(&homes, h, None).stage("localize")?;
    run.out
        .write_with("sample_shares.csv", |w| files::write_sample_shares(w, &shares))
        .stage("localize")?;

    let records = run.input("behavior", &paths[1], |r| ingest::parse_behavior(r)).stage("aggregate")?;
    let profiles = aggregate_user_medians(&records);
    drop(records);
    let region_table = unit_indicator_medians(&profiles, &homes, h, Level::Region).stage("aggregate")?;
    let arr_table = unit_indicator_medians(&profiles, &homes, h, Level::Arrondissement).stage("aggregate")?;
    run.out
        .write_with("region_indicators.csv", |w| files::write_indicator_table(w, &region_table))
        .stage("aggregate")?;
    run.out
        .write_with("arrondissement_indicators.csv", |w| files::write_indicator_table(w, &arr_table))
        .stage("aggregate")?;

    let ranking = rank_indicators(&region_table, poverty, config.influence_threshold).stage("rank")?;
    run.out
        .write_with("indicator_ranking.csv", |w| files::write_indicator_ranking(w, &ranking))
        .stage("rank")?;
    if let Some(top) = ranking.first() {
        info!("strongest indicator: {} (r = {:?})", top.indicator, top.correlation.map(|c| c.r));
    }

    let pic = region_table.column(PIC_INDEX);
    let models = obtain_model(run, config.behavior_model.clone(), || fit_from(&pic, poverty)).stage("fit")?;
    if models.feature != INDICATOR_NAMES[PIC_INDEX] {
        return Err(Error::Config(format!(
            "behavior model feature `{}` is not {}",
            models.feature, INDICATOR_NAMES[PIC_INDEX]
        )));
    }
    run.out
        .write_with("model_pic.json", |w| files::write_model(w, &models))
        .stage("fit")?;
    let arr_preds = predict(&models, &arr_table.column(PIC_INDEX), false).stage("predict")?;
    write_predictions(run, "predictions_pic", &arr_preds, Level::Arrondissement).stage("predict")?;
    write_maps(run, "map_pic", &arr_preds, h, Level::Arrondissement, boundaries).stage("maps")?;
    Ok(BehaviorReport {
        users: homes.len(),
        retained,
        homes,
        ranking,
        models,
        arrondissement_predictions: arr_preds,
    })
}

/// Localization, indicator aggregation and ranking, PIC model, and the
/// arrondissement map.
pub fn cmd_behavior(config: &PipelineConfig) -> Result<BehaviorReport> {
    config.require_inputs(&["hierarchy", "poverty", "userlog", "behavior"])?;
    let mut run = Run::begin(config, "behavior")?;
    let (h, boundaries) = load_hierarchy(&mut run).stage("ingest")?;
    let poverty = load_poverty(&mut run).stage("ingest")?;
    let report = behavior_stages(&mut run, &h, &poverty, boundaries.as_ref())?;
    run.finish().stage("manifest")?;
    Ok(report)
}

/// Raw matrices at every level from the flow records.
pub fn cmd_build_matrices(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    config.require_inputs(&["hierarchy", "flows"])?;
    let mut run = Run::begin(config, "build-matrices")?;
    let (h, _) = load_hierarchy(&mut run).stage("ingest")?;
    let site = load_site_matrix(&mut run, &h).stage("ingest")?;
    let arr = coarsen(&site, &h, Level::Arrondissement).stage("matrices")?;
    let region = coarsen(&arr, &h, Level::Region).stage("matrices")?;
    write_matrix(&mut run, &site, "flows").stage("matrices")?;
    write_matrix(&mut run, &arr, "matrix_site_raw").stage("matrices")?;
    write_matrix(&mut run, &region, "matrix_arrondissement_raw").stage("matrices")?;
    run.finish()
}

fn levels(level: Option<Level>) -> Vec<Level> {
    level.map_or_else(|| MAP_LEVELS.to_vec(), |l| vec![l])
}

pub fn cmd_normalize(config: &PipelineConfig, level: Option<Level>) -> Result<Vec<PathBuf>> {
    config.require_inputs(&["hierarchy"])?;
    let mut run = Run::begin(config, "normalize")?;
    let (h, _) = load_hierarchy(&mut run).stage("ingest")?;
    for level in levels(level) {
        let raw = read_matrix(&mut run, level, MatrixKind::Raw, &h).stage("normalize")?;
        let norm = normalize_gravity(&raw, &h, config.alpha).stage("normalize")?;
        write_matrix(&mut run, &norm, &format!("matrix_{level}_raw")).stage("normalize")?;
    }
    run.finish()
}

pub fn cmd_metrics(config: &PipelineConfig, level: Option<Level>, measure: Option<&str>) -> Result<Vec<PathBuf>> {
    config.require_inputs(&["hierarchy"])?;
    let mut run = Run::begin(config, "metrics")?;
    let (h, _) = load_hierarchy(&mut run).stage("ingest")?;
    for level in levels(level) {
        let raw = read_matrix(&mut run, level, MatrixKind::Raw, &h).stage("metrics")?;
        let norm = read_matrix(&mut run, level, MatrixKind::Normalized, &h).stage("metrics")?;
        let v = level_scores(&raw, &norm, &config.pagerank, measure).stage("metrics")?;
        run.out
            .write_with(&format!("scores_{level}.csv"), |w| files::write_scores(w, &v))
            .stage("metrics")?;
    }
    run.finish()
}

fn read_scores(run: &mut Run, level: Level) -> Result<Vec<NodeScoreVector>> {
    let name = format!("scores_{level}.csv");
    let path = run.artifact(&name)?;
    run.input(&name, &path, |r| files::read_scores(r, level))
}

pub fn cmd_correlate(config: &PipelineConfig, measure: Option<&str>) -> Result<Vec<PathBuf>> {
    config.require_inputs(&["poverty"])?;
    let mut run = Run::begin(config, "correlate")?;
    let poverty = load_poverty(&mut run).stage("ingest")?;
    let scores = read_scores(&mut run, Level::Region).stage("correlate")?;
    let rows = correlation_rows(&scores, &poverty);
    run.out
        .write_with("correlations.csv", |w| files::write_correlations(w, &rows))
        .stage("correlate")?;
    let feature = find_feature(&scores, measure.unwrap_or(&config.feature), Level::Region).stage("correlate")?;
    let reports = influence_reports(feature, &poverty, config.influence_threshold).stage("correlate")?;
    run.out
        .write_with("influence.csv", |w| {
            files::write_influence(w, reports.iter().map(|(t, r)| (*t, r)))
        })
        .stage("correlate")?;
    run.finish()
}

pub fn cmd_fit(config: &PipelineConfig, measure: Option<&str>) -> Result<PovertyModelPair> {
    config.require_inputs(&["poverty"])?;
    let level = config.fit_level()?;
    let mut run = Run::begin(config, "fit")?;
    let poverty = load_poverty(&mut run).stage("ingest")?;
    let scores = read_scores(&mut run, level).stage("fit")?;
    let feature = find_feature(&scores, measure.unwrap_or(&config.feature), level).stage("fit")?;
    let mut models = fit_from(feature, &poverty).stage("fit")?;
    models.clamp = config.clamp_policy()?;
    run.out.write_with("model.json", |w| files::write_model(w, &models)).stage("fit")?;
    run.finish()?;
    Ok(models)
}

pub fn cmd_predict(config: &PipelineConfig, level: Option<Level>) -> Result<Vec<PathBuf>> {
    let mut run = Run::begin(config, "predict")?;
    let model_path = match &config.model {
        Some(p) => p.clone(),
        None => run.artifact("model.json")?,
    };
    let models = obtain_model(&mut run, Some(model_path), || unreachable!("model path given")).stage("predict")?;
    let mut preds = BTreeMap::new();
    for level in levels(level) {
        let scores = read_scores(&mut run, level).stage("predict")?;
        let v = find_feature(&scores, &models.feature, level).stage("predict")?;
        let p = predict(&models, v, config.rescale && level != models.fit_level).stage("predict")?;
        write_predictions(&mut run, "predictions", &p, level).stage("predict")?;
        preds.insert(level, p);
    }
    if let (Some(r), Some(a)) = (preds.get(&Level::Region), preds.get(&Level::Arrondissement)) {
        config.require_inputs(&["hierarchy"])?;
        let (h, _) = load_hierarchy(&mut run).stage("ingest")?;
        let report = level_consistency_report(r, a, &h).stage("consistency")?;
        write_consistency(&mut run, &report).stage("consistency")?;
    }
    run.finish()
}

pub fn cmd_map(config: &PipelineConfig, level: Option<Level>) -> Result<Vec<PathBuf>> {
    config.require_inputs(&["hierarchy"])?;
    let mut run = Run::begin(config, "map")?;
    let (h, boundaries) = load_hierarchy(&mut run).stage("ingest")?;
    for level in levels(level) {
        let name = format!("predictions_{level}.csv");
        let path = run.artifact(&name)?;
        let preds = run.input(&name, &path, |r| files::read_predictions(r)).stage("maps")?;
        write_maps(&mut run, "map", &preds, &h, level, boundaries.as_ref()).stage("maps")?;
    }
    if run.out.root().join("matrix_region_raw.csv").is_file() {
        let m = read_matrix(&mut run, Level::Region, MatrixKind::Raw, &h).stage("maps")?;
        write_flow_lines(&mut run, &m, &h).stage("maps")?;
    }
    run.finish()
}

/// Generate a synthetic world into the output directory.
pub fn cmd_synth(config: &PipelineConfig) -> Result<crate::synth::SynthSummary> {
    let out = OutputDir::open(&config.output)?;
    let summary = crate::synth::write_world(&config.synth, &out.staging).stage("synth")?;
    // Register staged files so commit moves them.
    let mut out = out;
    for name in crate::synth::SYNTH_FILES {
        let path = out.staging.join(name);
        let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut hasher = Sha256::new();
        io::copy(&mut f, &mut hasher).map_err(|e| Error::io(&path, e))?;
        out.outputs.insert(name.to_string(), hex::encode(hasher.finalize()));
    }
    out.commit()?;
    Ok(summary)
}
