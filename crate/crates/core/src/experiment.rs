//! Config files, Monte Carlo replications and report files.
//!
//! A config is a flat INI file with four sections:
//!
//! ```text
//! [method]
//! preset = setting1        # optional: setting1 | setting2 | wood2d
//! name = see_ood           # see_ood | wood; required unless a preset is given
//!
//! [train]
//! iterations = 2000
//! lr_d = 0.0001
//!
//! [data]
//! source = builtin         # or a dataset CSV path
//! ood_subsample = 2        # or `none` to keep every OoD training point
//!
//! [eval]
//! tnr_targets = 0.95, 0.99
//! replications = 3
//! ```
//!
//! [`CONFIG_KEYS`] lists every key with its meaning. Keys left out take the
//! preset's value, or when no preset is named, `setting1` for `see_ood` and
//! `wood2d` for `wood`.
//!
//! [`run_experiment`] writes into the output directory:
//!
//! ```text
//! config.ini   report.csv   summary.txt
//! rep_<r>/history.csv  rep_<r>/discriminator.txt  rep_<r>/generator.txt
//! rep_<r>/heatmap.csv  rep_<r>/heatmap.pgm
//! ```
//!
//! `generator.txt` exists only for `see_ood`, and heatmaps only for 2D data.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{make_simulation_dataset, subsample_ood, Dataset, Point};
use crate::detection::{
    classification_accuracy, mad, mean, rejection_region_area, score_heatmap, tpr_at_tnr, GridSpec,
    Heatmap, Threshold,
};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::Rng;
use crate::training::{train_with_cost, Method, TrainConfig, TrainHistory};
use crate::wasserstein::{score_batch, CostMatrix};

/// `(section, key, description)` for every recognised config key.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    (
        "method",
        "preset",
        "setting1 | setting2 | wood2d; seeds every other key",
    ),
    ("method", "name", "see_ood | wood"),
    (
        "train",
        "beta_ood",
        "weight on the observed-OoD score term (>= 0)",
    ),
    (
        "train",
        "beta_z",
        "weight on the generated-sample score term (>= 0)",
    ),
    ("train", "n_d", "discriminator steps per iteration"),
    ("train", "n_g", "generator steps per iteration"),
    ("train", "lr_d", "discriminator Adam learning rate"),
    ("train", "lr_g", "generator Adam learning rate"),
    ("train", "batch_ind", "InD minibatch size"),
    (
        "train",
        "batch_ood",
        "OoD minibatch size, capped at the OoD pool size",
    ),
    ("train", "batch_gen", "generated minibatch size"),
    ("train", "noise_dim", "generator noise dimension"),
    ("train", "iterations", "outer iterations"),
    ("train", "seed", "base seed; replication r uses seed + r"),
    (
        "train",
        "discriminator_arch",
        "comma-separated layer sizes, e.g. 2,128,3",
    ),
    (
        "train",
        "generator_arch",
        "comma-separated layer sizes, e.g. 2,128,2",
    ),
    ("train", "adam_beta1", "Adam first-moment decay"),
    ("train", "adam_beta2", "Adam second-moment decay"),
    ("train", "adam_epsilon", "Adam denominator offset"),
    ("data", "source", "builtin, or the path of a dataset CSV"),
    (
        "data",
        "ood_subsample",
        "OoD training points kept per replication, or none",
    ),
    (
        "data",
        "cost_matrix",
        "optional K x K cost-matrix CSV; default binary",
    ),
    (
        "eval",
        "tnr_targets",
        "comma-separated TNR levels in (0, 1]",
    ),
    ("eval", "replications", "Monte Carlo replications (>= 1)"),
    ("eval", "grid_x_min", "heatmap grid lower x bound"),
    ("eval", "grid_x_max", "heatmap grid upper x bound"),
    ("eval", "grid_y_min", "heatmap grid lower y bound"),
    ("eval", "grid_y_max", "heatmap grid upper y bound"),
    ("eval", "grid_resolution", "heatmap cells per axis"),
    ("eval", "output_dir", "directory for all outputs"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Setting1,
    Setting2,
    Wood2d,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Setting1, Preset::Setting2, Preset::Wood2d];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Setting1 => "setting1",
            Preset::Setting2 => "setting2",
            Preset::Wood2d => "wood2d",
        }
    }

    pub fn method(self) -> Method {
        match self {
            Preset::Wood2d => Method::Wood,
            _ => Method::SeeOod,
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Setting1 => TrainConfig::setting1(),
            Preset::Setting2 => TrainConfig::setting2(),
            Preset::Wood2d => TrainConfig::wood2d(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// The three-cluster 2D benchmark, regenerated from each replication seed.
    Builtin,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub train: TrainConfig,
    pub data: DataSource,
    pub ood_subsample: Option<usize>,
    pub cost_matrix: Option<PathBuf>,
    pub tnr_targets: Vec<f64>,
    pub replications: usize,
    pub grid: GridSpec,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            method: preset.method(),
            train: preset.train_config(),
            data: DataSource::Builtin,
            ood_subsample: Some(2),
            cost_matrix: None,
            tnr_targets: vec![0.95, 0.99],
            replications: 3,
            grid: GridSpec::default(),
            output_dir: PathBuf::from("results"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate(self.method)?;
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.tnr_targets.is_empty() {
            return Err(Error::domain("at least one TNR target is required"));
        }
        for &t in &self.tnr_targets {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::domain(format!("TNR target {t} outside (0, 1]")));
            }
        }
        self.grid.validate()
    }

    /// INI text that [`parse_config`] maps back to `self`.
    pub fn to_ini(&self) -> String {
        let t = &self.train;
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "[method]\nname = {}\n", self.method.as_str());
        let _ = writeln!(out, "[train]");
        let _ = writeln!(out, "beta_ood = {}", t.beta_ood);
        let _ = writeln!(out, "beta_z = {}", t.beta_z);
        let _ = writeln!(out, "n_d = {}", t.n_d);
        let _ = writeln!(out, "n_g = {}", t.n_g);
        let _ = writeln!(out, "lr_d = {}", t.lr_d);
        let _ = writeln!(out, "lr_g = {}", t.lr_g);
        let _ = writeln!(out, "batch_ind = {}", t.batch_ind);
        let _ = writeln!(out, "batch_ood = {}", t.batch_ood);
        let _ = writeln!(out, "batch_gen = {}", t.batch_gen);
        let _ = writeln!(out, "noise_dim = {}", t.noise_dim);
        let _ = writeln!(out, "iterations = {}", t.iterations);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "discriminator_arch = {}", list(&t.discriminator_arch));
        let _ = writeln!(out, "generator_arch = {}", list(&t.generator_arch));
        let _ = writeln!(out, "adam_beta1 = {}", t.adam_beta1);
        let _ = writeln!(out, "adam_beta2 = {}", t.adam_beta2);
        let _ = writeln!(out, "adam_epsilon = {}\n", t.adam_epsilon);
        let _ = writeln!(out, "[data]");
        match &self.data {
            DataSource::Builtin => {
                let _ = writeln!(out, "source = builtin");
            }
            DataSource::Csv(p) => {
                let _ = writeln!(out, "source = {}", p.display());
            }
        }
        match self.ood_subsample {
            Some(n) => {
                let _ = writeln!(out, "ood_subsample = {n}");
            }
            None => {
                let _ = writeln!(out, "ood_subsample = none");
            }
        }
        if let Some(p) = &self.cost_matrix {
            let _ = writeln!(out, "cost_matrix = {}", p.display());
        }
        let targets: Vec<String> = self.tnr_targets.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "\n[eval]");
        let _ = writeln!(out, "tnr_targets = {}", targets.join(","));
        let _ = writeln!(out, "replications = {}", self.replications);
        let _ = writeln!(out, "grid_x_min = {}", self.grid.x_min);
        let _ = writeln!(out, "grid_x_max = {}", self.grid.x_max);
        let _ = writeln!(out, "grid_y_min = {}", self.grid.y_min);
        let _ = writeln!(out, "grid_y_max = {}", self.grid.y_max);
        let _ = writeln!(out, "grid_resolution = {}", self.grid.resolution);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }

    /// The cost matrix used for training and scoring.
    pub fn cost(&self, num_classes: usize) -> Result<CostMatrix> {
        let cost = match &self.cost_matrix {
            Some(path) => CostMatrix::load_csv(path)?,
            None => CostMatrix::binary(num_classes)?,
        };
        if cost.k() != num_classes {
            return Err(Error::shape(format!(
                "cost matrix is {k}x{k}, data has K = {num_classes}",
                k = cost.k()
            )));
        }
        Ok(cost)
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Parse and validate an INI config, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw
            .split_once(['#', ';'])
            .map_or(raw, |(before, _)| before)
            .trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, format!("malformed section header {content:?}")))?
                .trim();
            if !["method", "train", "data", "eval"].contains(&name) {
                return Err(Error::parse(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected key = value, got {content:?}")))?;
        let key = key.trim();
        let sec = section
            .clone()
            .ok_or_else(|| Error::parse(line, format!("key `{key}` appears before any section")))?;
        if !CONFIG_KEYS.iter().any(|(s, k, _)| *s == sec && *k == key) {
            return Err(Error::parse(line, format!("unknown key `{sec}.{key}`")));
        }
        let value = value.trim().to_string();
        if let Some(prev) = entries.insert((sec.clone(), key.to_string()), Entry { line, value }) {
            return Err(Error::parse(
                line,
                format!(
                    "duplicate key `{sec}.{key}` (first set on line {})",
                    prev.line
                ),
            ));
        }
    }

    let get = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string()));
    let preset = get("method", "preset")
        .map(|e| field(e, "method.preset", |v| v.parse::<Preset>()))
        .transpose()?;
    let method = match (get("method", "name"), preset) {
        (Some(e), _) => field(e, "method.name", |v| v.parse::<Method>())?,
        (None, Some(p)) => p.method(),
        (None, None) => {
            return Err(Error::parse(
                0,
                "missing required key `method.name` (or `method.preset`)",
            ))
        }
    };
    let preset = preset.unwrap_or(match method {
        Method::SeeOod => Preset::Setting1,
        Method::Wood => Preset::Wood2d,
    });
    let mut config = ExperimentConfig::from_preset(preset);
    config.method = method;

    for ((sec, key), e) in &entries {
        let name = format!("{sec}.{key}");
        let t = &mut config.train;
        match (sec.as_str(), key.as_str()) {
            ("method", _) => {}
            ("train", "beta_ood") => t.beta_ood = field(e, &name, nonneg)?,
            ("train", "beta_z") => t.beta_z = field(e, &name, nonneg)?,
            ("train", "n_d") => t.n_d = field(e, &name, positive_int)?,
            ("train", "n_g") => t.n_g = field(e, &name, |v| v.parse::<usize>())?,
            ("train", "lr_d") => t.lr_d = field(e, &name, positive)?,
            ("train", "lr_g") => t.lr_g = field(e, &name, positive)?,
            ("train", "batch_ind") => t.batch_ind = field(e, &name, positive_int)?,
            ("train", "batch_ood") => t.batch_ood = field(e, &name, positive_int)?,
            ("train", "batch_gen") => t.batch_gen = field(e, &name, positive_int)?,
            ("train", "noise_dim") => t.noise_dim = field(e, &name, positive_int)?,
            ("train", "iterations") => t.iterations = field(e, &name, positive_int)?,
            ("train", "seed") => {
                t.seed = field(e, &name, |v| v.parse::<u64>().map_err(|e| e.to_string()))?
            }
            ("train", "discriminator_arch") => t.discriminator_arch = field(e, &name, arch)?,
            ("train", "generator_arch") => t.generator_arch = field(e, &name, arch)?,
            ("train", "adam_beta1") => t.adam_beta1 = field(e, &name, unit_interval)?,
            ("train", "adam_beta2") => t.adam_beta2 = field(e, &name, unit_interval)?,
            ("train", "adam_epsilon") => t.adam_epsilon = field(e, &name, positive)?,
            ("data", "source") => {
                config.data = match e.value.as_str() {
                    "" => return Err(Error::parse(e.line, format!("`{name}` is empty"))),
                    "builtin" => DataSource::Builtin,
                    path => DataSource::Csv(PathBuf::from(path)),
                }
            }
            ("data", "ood_subsample") => {
                config.ood_subsample = match e.value.as_str() {
                    "none" => None,
                    _ => Some(field(e, &name, positive_int)?),
                }
            }
            ("data", "cost_matrix") => {
                if e.value.is_empty() {
                    return Err(Error::parse(e.line, format!("`{name}` is empty")));
                }
                config.cost_matrix = Some(PathBuf::from(&e.value));
            }
            ("eval", "tnr_targets") => config.tnr_targets = field(e, &name, tnr_list)?,
            ("eval", "replications") => config.replications = field(e, &name, positive_int)?,
            ("eval", "grid_x_min") => config.grid.x_min = field(e, &name, finite)?,
            ("eval", "grid_x_max") => config.grid.x_max = field(e, &name, finite)?,
            ("eval", "grid_y_min") => config.grid.y_min = field(e, &name, finite)?,
            ("eval", "grid_y_max") => config.grid.y_max = field(e, &name, finite)?,
            ("eval", "grid_resolution") => config.grid.resolution = field(e, &name, positive_int)?,
            ("eval", "output_dir") => {
                if e.value.is_empty() {
                    return Err(Error::parse(e.line, format!("`{name}` is empty")));
                }
                config.output_dir = PathBuf::from(&e.value);
            }
            _ => unreachable!("keys are checked against CONFIG_KEYS"),
        }
    }
    config.validate()?;
    Ok(config)
}

fn field<T, E: ToString>(
    entry: &Entry,
    name: &str,
    parse: impl FnOnce(&str) -> std::result::Result<T, E>,
) -> Result<T> {
    parse(&entry.value).map_err(|e| {
        Error::parse(
            entry.line,
            format!(
                "invalid value {:?} for `{name}`: {}",
                entry.value,
                e.to_string()
            ),
        )
    })
}

fn finite(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err("must be finite".into())
    }
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = finite(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err("must be positive".into())
    }
}

fn nonneg(v: &str) -> std::result::Result<f64, String> {
    let x = finite(v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err("must be nonnegative".into())
    }
}

fn unit_interval(v: &str) -> std::result::Result<f64, String> {
    let x = finite(v)?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err("must lie in [0, 1)".into())
    }
}

fn positive_int(v: &str) -> std::result::Result<usize, String> {
    match v.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn arch(v: &str) -> std::result::Result<Vec<usize>, String> {
    let sizes = v
        .split(',')
        .map(|s| positive_int(s.trim()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if sizes.len() < 2 {
        return Err("need at least input and output sizes".into());
    }
    Ok(sizes)
}

fn tnr_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(|s| {
            let x = finite(s.trim())?;
            if x > 0.0 && x <= 1.0 {
                Ok(x)
            } else {
                Err(format!("{x} outside (0, 1]"))
            }
        })
        .collect()
}

/// Dataset for one replication, with the OoD subsample applied. The returned
/// generator continues the same stream and is meant for training.
pub fn replication_dataset(
    config: &ExperimentConfig,
    base: Option<&Dataset>,
    seed: u64,
) -> Result<(Dataset, Rng)> {
    let mut rng = Rng::new(seed);
    let full = match base {
        Some(d) => d.clone(),
        None => match &config.data {
            DataSource::Builtin => make_simulation_dataset(&mut rng),
            DataSource::Csv(path) => Dataset::load_csv(path)?,
        },
    };
    let data = match config.ood_subsample {
        Some(n) => subsample_ood(&full, n, &mut rng)?,
        None => full,
    };
    Ok((data, rng))
}

/// Test-set metrics of one trained discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// One entry per TNR target, in config order.
    pub tpr: Vec<f64>,
    pub thresholds: Vec<Threshold>,
    pub accuracy: f64,
    pub mean_ind_score: f64,
    pub mean_ood_score: f64,
}

pub fn evaluate_discriminator(
    disc: &Mlp,
    data: &Dataset,
    tnr_targets: &[f64],
    cost: &CostMatrix,
) -> Result<Evaluation> {
    let ind_x: Vec<Point> = data.ind_test.iter().map(|p| p.x.clone()).collect();
    let ind = score_batch(disc, &ind_x, cost)?;
    let ood = score_batch(disc, &data.ood_test, cost)?;
    let mut tpr = Vec::with_capacity(tnr_targets.len());
    let mut thresholds = Vec::with_capacity(tnr_targets.len());
    for &target in tnr_targets {
        let (rate, threshold) = tpr_at_tnr(&ind, &ood, target)?;
        tpr.push(rate);
        thresholds.push(threshold);
    }
    Ok(Evaluation {
        tpr,
        thresholds,
        accuracy: classification_accuracy(disc, &data.ind_test)?,
        mean_ind_score: mean(&ind)?,
        mean_ood_score: mean(&ood)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub evaluation: Evaluation,
    /// `None` when the data is not two-dimensional.
    pub heatmap: Option<Heatmap>,
}

impl ReplicationResult {
    fn metrics(&self, targets: &[f64]) -> Vec<(String, f64)> {
        let e = &self.evaluation;
        let mut out = vec![
            ("accuracy".to_string(), e.accuracy),
            ("mean_ind_score".to_string(), e.mean_ind_score),
            ("mean_ood_score".to_string(), e.mean_ood_score),
        ];
        for (i, t) in targets.iter().enumerate() {
            out.push((format!("tpr@{t}"), e.tpr[i]));
            out.push((format!("eta@{t}"), e.thresholds[i].eta));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub method: Method,
    pub tnr_targets: Vec<f64>,
    pub grid: GridSpec,
    pub replications: Vec<ReplicationResult>,
    /// Mean and MAD of every per-replication metric, in column order.
    pub aggregate: Vec<MetricSummary>,
    /// Written files, relative to the output directory.
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    fn new(
        method: Method,
        tnr_targets: Vec<f64>,
        grid: GridSpec,
        replications: Vec<ReplicationResult>,
    ) -> Result<Self> {
        let columns: Vec<Vec<(String, f64)>> = replications
            .iter()
            .map(|r| r.metrics(&tnr_targets))
            .collect();
        let mut aggregate = Vec::new();
        if let Some(first) = columns.first() {
            for (j, (name, _)) in first.iter().enumerate() {
                let values: Vec<f64> = columns.iter().map(|c| c[j].1).collect();
                aggregate.push(MetricSummary {
                    name: name.clone(),
                    mean: mean(&values)?,
                    mad: mad(&values)?,
                });
            }
        }
        Ok(Self {
            method,
            tnr_targets,
            grid,
            replications,
            aggregate,
            files: Vec::new(),
        })
    }

    pub fn aggregate_of(&self, name: &str) -> Option<&MetricSummary> {
        self.aggregate.iter().find(|m| m.name == name)
    }

    /// `replication,seed,<metrics>` per replication, then `mean` and `mad` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replication,seed");
        for m in &self.aggregate {
            out.push(',');
            out.push_str(&m.name);
        }
        out.push('\n');
        for r in &self.replications {
            let _ = write!(out, "{},{}", r.index, r.seed);
            for (_, v) in r.metrics(&self.tnr_targets) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out.push_str("mean,");
        for m in &self.aggregate {
            let _ = write!(out, ",{}", m.mean);
        }
        out.push_str("\nmad,");
        for m in &self.aggregate {
            let _ = write!(out, ",{}", m.mad);
        }
        out.push('\n');
        out
    }

    /// Read a report back from an output directory written by
    /// [`run_experiment`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join("config.ini"))?;
        let path = dir.join("report.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty report"))?
            .1
            .split(',')
            .collect();
        let expected = 2 + 3 + 2 * config.tnr_targets.len();
        if header.len() != expected || header[0] != "replication" {
            return Err(Error::parse(1, "report header does not match config.ini"));
        }
        let mut replications = Vec::new();
        for (idx, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells[0] == "mean" || cells[0] == "mad" {
                continue;
            }
            if cells.len() != expected {
                return Err(Error::parse(idx + 1, "wrong number of columns"));
            }
            let num = |i: usize| {
                cells[i]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(idx + 1, format!("column {}: {e}", header[i])))
            };
            let index: usize = cells[0]
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad replication index"))?;
            let seed: u64 = cells[1]
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad seed"))?;
            let mut tpr = Vec::new();
            let mut thresholds = Vec::new();
            for (i, &target) in config.tnr_targets.iter().enumerate() {
                tpr.push(num(5 + 2 * i)?);
                thresholds.push(Threshold {
                    eta: num(6 + 2 * i)?,
                    target_tnr: target,
                });
            }
            let heatmap_path = dir.join(format!("rep_{index}")).join("heatmap.csv");
            let heatmap = if heatmap_path.exists() {
                let text =
                    fs::read_to_string(&heatmap_path).map_err(|e| Error::io(&heatmap_path, e))?;
                Some(Heatmap::from_csv(&text, config.grid)?)
            } else {
                None
            };
            replications.push(ReplicationResult {
                index,
                seed,
                evaluation: Evaluation {
                    tpr,
                    thresholds,
                    accuracy: num(2)?,
                    mean_ind_score: num(3)?,
                    mean_ood_score: num(4)?,
                },
                heatmap,
            });
        }
        Self::new(config.method, config.tnr_targets, config.grid, replications)
    }

    pub fn summary(&self, config: &ExperimentConfig) -> String {
        let t = &config.train;
        let mut out = String::new();
        let _ = writeln!(out, "method: {}", self.method.as_str());
        let _ = writeln!(
            out,
            "hyperparameters (beta_ood, beta_z, n_d, n_g, lr_d, lr_g): ({}, {}, {}, {}, {}, {})",
            t.beta_ood, t.beta_z, t.n_d, t.n_g, t.lr_d, t.lr_g
        );
        let _ = writeln!(
            out,
            "iterations: {}  batches (ind, ood, gen): ({}, {}, {})  noise_dim: {}",
            t.iterations, t.batch_ind, t.batch_ood, t.batch_gen, t.noise_dim
        );
        let _ = writeln!(
            out,
            "architectures: D {:?}, G {:?}",
            t.discriminator_arch, t.generator_arch
        );
        let source = match &config.data {
            DataSource::Builtin => "builtin".to_string(),
            DataSource::Csv(p) => p.display().to_string(),
        };
        let subsample = config
            .ood_subsample
            .map_or("none".to_string(), |n| n.to_string());
        let _ = writeln!(out, "data: {source}  ood_subsample: {subsample}");
        let _ = writeln!(
            out,
            "heatmap grid: x [{}, {}], y [{}, {}], {} cells per axis",
            self.grid.x_min,
            self.grid.x_max,
            self.grid.y_min,
            self.grid.y_max,
            self.grid.resolution
        );
        let _ = writeln!(
            out,
            "replications: {} (seed {} + r)\n",
            self.replications.len(),
            t.seed
        );

        for r in &self.replications {
            let e = &r.evaluation;
            let _ = write!(
                out,
                "rep {} seed {}: accuracy {:.4}, mean score InD {:.4} / OoD {:.4}",
                r.index, r.seed, e.accuracy, e.mean_ind_score, e.mean_ood_score
            );
            for (i, target) in self.tnr_targets.iter().enumerate() {
                let _ = write!(out, ", TPR@{target} {:.4}", e.tpr[i]);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\naggregate (mean +/- MAD):");
        for m in &self.aggregate {
            let _ = writeln!(out, "  {:<16} {:.6} +/- {:.6}", m.name, m.mean, m.mad);
        }
        let _ = writeln!(out, "\npresets (beta_ood, beta_z, n_d, n_g, lr_d, lr_g):");
        for p in Preset::ALL {
            let c = p.train_config();
            let _ = writeln!(
                out,
                "  {:<9} {:<7} ({}, {}, {}, {}, {}, {})",
                p.as_str(),
                p.method().as_str(),
                c.beta_ood,
                c.beta_z,
                c.n_d,
                c.n_g,
                c.lr_d,
                c.lr_g
            );
        }
        out
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `history.csv`, `discriminator.txt` and, for SEE-OoD,
/// `generator.txt` into `dir`. Returns the file names.
pub fn write_training_outputs(dir: &Path, history: &TrainHistory) -> Result<Vec<String>> {
    create_dir(dir)?;
    write_file(dir, "history.csv", &history.to_csv())?;
    write_file(dir, "discriminator.txt", &history.discriminator.to_text())?;
    let mut names = vec!["history.csv".to_string(), "discriminator.txt".to_string()];
    if let Some(gen) = &history.generator {
        write_file(dir, "generator.txt", &gen.to_text())?;
        names.push("generator.txt".to_string());
    }
    Ok(names)
}

/// Write `heatmap.csv` and `heatmap.pgm` into `dir`. The PGM maps
/// `[0, uniform score]` onto the gray range.
pub fn write_heatmap(dir: &Path, heatmap: &Heatmap, cost: &CostMatrix) -> Result<Vec<String>> {
    create_dir(dir)?;
    write_file(dir, "heatmap.csv", &heatmap.to_csv())?;
    write_file(dir, "heatmap.pgm", &heatmap.to_pgm(cost.uniform_score()))?;
    Ok(vec!["heatmap.csv".to_string(), "heatmap.pgm".to_string()])
}

fn run_replication(
    config: &ExperimentConfig,
    base: Option<&Dataset>,
    index: usize,
) -> Result<(ReplicationResult, Vec<PathBuf>)> {
    let seed = config.train.seed.wrapping_add(index as u64);
    let (data, mut rng) = replication_dataset(config, base, seed)?;
    let cost = config.cost(data.num_classes)?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let history = train_with_cost(config.method, &train_config, &data, &cost, &mut rng)?;
    let evaluation =
        evaluate_discriminator(&history.discriminator, &data, &config.tnr_targets, &cost)?;

    let rel = PathBuf::from(format!("rep_{index}"));
    let dir = config.output_dir.join(&rel);
    let mut names = write_training_outputs(&dir, &history)?;
    let heatmap = if data.dim == 2 {
        let heatmap = score_heatmap(&history.discriminator, &config.grid, &cost)?;
        names.extend(write_heatmap(&dir, &heatmap, &cost)?);
        Some(heatmap)
    } else {
        None
    };
    let files = names.into_iter().map(|n| rel.join(n)).collect();
    Ok((
        ReplicationResult {
            index,
            seed,
            evaluation,
            heatmap,
        },
        files,
    ))
}

/// Run every replication (concurrently), then write `config.ini`,
/// `report.csv` and `summary.txt`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    create_dir(&config.output_dir)?;
    let base = match &config.data {
        DataSource::Builtin => None,
        DataSource::Csv(path) => Some(Dataset::load_csv(path)?),
    };
    let outcomes: Vec<Result<(ReplicationResult, Vec<PathBuf>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.replications)
            .map(|r| {
                let base = base.as_ref();
                s.spawn(move || run_replication(config, base, r))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replication thread panicked"))
            .collect()
    });

    let mut replications = Vec::with_capacity(outcomes.len());
    let mut files = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        let (result, written) = outcome.map_err(|e| Error::Replication {
            index,
            source: Box::new(e),
        })?;
        replications.push(result);
        files.extend(written);
    }

    let mut report = ExperimentReport::new(
        config.method,
        config.tnr_targets.clone(),
        config.grid,
        replications,
    )?;
    write_file(&config.output_dir, "config.ini", &config.to_ini())?;
    write_file(&config.output_dir, "report.csv", &report.to_csv())?;
    write_file(&config.output_dir, "summary.txt", &report.summary(config))?;
    let mut manifest: Vec<PathBuf> = ["config.ini", "report.csv", "summary.txt"]
        .iter()
        .map(PathBuf::from)
        .collect();
    manifest.extend(files);
    report.files = manifest;
    Ok(report)
}

/// Per-replication rejection-region areas of two reports at one TNR level.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionComparison {
    pub tnr: f64,
    pub areas_a: Vec<f64>,
    pub areas_b: Vec<f64>,
    /// `areas_a[r] − areas_b[r]`.
    pub differences: Vec<f64>,
    pub mean_difference: f64,
    /// Replications where `a` rejects strictly more of the grid.
    pub a_larger: usize,
}

impl RegionComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replication,tnr,area_a,area_b,difference\n");
        for (r, d) in self.differences.iter().enumerate() {
            let _ = writeln!(
                out,
                "{r},{},{},{},{d}",
                self.tnr, self.areas_a[r], self.areas_b[r]
            );
        }
        out
    }
}

/// Compare rejection regions replication by replication, each at its own
/// calibrated threshold for `tnr`.
pub fn compare_rejection_regions(
    a: &ExperimentReport,
    b: &ExperimentReport,
    tnr: f64,
) -> Result<RegionComparison> {
    if a.grid != b.grid {
        return Err(Error::domain(format!(
            "heatmap grids differ: {:?} vs {:?}",
            a.grid, b.grid
        )));
    }
    if a.replications.len() != b.replications.len() {
        return Err(Error::domain(format!(
            "replication counts differ: {} vs {}",
            a.replications.len(),
            b.replications.len()
        )));
    }
    let areas = |report: &ExperimentReport| -> Result<Vec<f64>> {
        let slot = report
            .tnr_targets
            .iter()
            .position(|&t| t == tnr)
            .ok_or_else(|| Error::domain(format!("TNR {tnr} was not evaluated")))?;
        report
            .replications
            .iter()
            .map(|r| {
                let heatmap = r.heatmap.as_ref().ok_or_else(|| {
                    Error::domain(format!("replication {} has no heatmap", r.index))
                })?;
                if heatmap.grid != report.grid {
                    return Err(Error::domain("heatmap grid does not match its report"));
                }
                Ok(rejection_region_area(
                    heatmap,
                    &r.evaluation.thresholds[slot],
                ))
            })
            .collect()
    };
    let areas_a = areas(a)?;
    let areas_b = areas(b)?;
    let differences: Vec<f64> = areas_a.iter().zip(&areas_b).map(|(x, y)| x - y).collect();
    Ok(RegionComparison {
        tnr,
        mean_difference: mean(&differences)?,
        a_larger: differences.iter().filter(|&&d| d > 0.0).count(),
        areas_a,
        areas_b,
        differences,
    })
}

/// Lines of `history.csv` back as `(column name → values)`; empty cells are
/// skipped.
pub fn read_history_columns(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty history"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut columns: HashMap<String, Vec<f64>> =
        header.iter().map(|h| (h.clone(), Vec::new())).collect();
    for (idx, line) in lines.enumerate() {
        for (name, cell) in header.iter().zip(line.split(',')) {
            if cell.is_empty() {
                continue;
            }
            let v = cell
                .parse::<f64>()
                .map_err(|e| Error::parse(idx + 2, format!("{name}: {e}")))?;
            columns.get_mut(name).expect("header column").push(v);
        }
    }
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_train_section_uses_defaults() {
        let c = parse_config("[method]\nname = see_ood\n[train]\n").unwrap();
        assert_eq!(c.train, TrainConfig::setting1());
        assert_eq!(c.train.iterations, 2000);
        assert_eq!(c.tnr_targets, vec![0.95, 0.99]);
        assert_eq!(c.replications, 3);
        assert_eq!(c.ood_subsample, Some(2));
        assert_eq!(c.grid, GridSpec::default());
        assert_eq!(c.data, DataSource::Builtin);
    }

    #[test]
    fn wood_defaults_come_from_wood2d() {
        let c = parse_config("[method]\nname = wood\n").unwrap();
        assert_eq!(c.method, Method::Wood);
        assert_eq!(c.train, TrainConfig::wood2d());
    }

    #[test]
    fn preset_sets_method_and_values_can_override() {
        let c = parse_config("[train]\nlr_g = 0.5\n[method]\npreset = setting2\n").unwrap();
        assert_eq!(c.method, Method::SeeOod);
        assert_eq!(c.train.beta_z, 100.0);
        assert_eq!(c.train.lr_g, 0.5);
    }

    #[test]
    fn zero_replications_is_a_parse_error() {
        let err = parse_config("[method]\nname = wood\n[eval]\nreplications = 0\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("eval.replications"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err =
            parse_config("[method]\nname = wood\n\n[train]\nlearning_rate = 1\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("train.learning_rate"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_method_is_an_error() {
        let err = parse_config("[train]\niterations = 5\n").unwrap_err();
        assert!(err.to_string().contains("method.name"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        for text in [
            "name = wood\n",
            "[method\nname = wood\n",
            "[bogus]\n",
            "[method]\nname wood\n",
            "[method]\nname = wood\nname = wood\n",
            "[method]\nname = gan\n",
            "[method]\nname = wood\n[train]\nlr_d = -1\n",
            "[method]\nname = wood\n[train]\ndiscriminator_arch = 2\n",
            "[method]\nname = wood\n[eval]\ntnr_targets = 0.9, 1.5\n",
            "[method]\nname = wood\n[train]\nadam_beta2 = 1\n",
        ] {
            assert!(parse_config(text).is_err(), "{text:?} parsed");
        }
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let text = "# header\n[method] ; inline\n  name =  see_ood  # trailing\n\n[eval]\ntnr_targets = 0.9 , 1\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.tnr_targets, vec![0.9, 1.0]);
    }

    #[test]
    fn setting1_round_trips() {
        let mut c = ExperimentConfig::from_preset(Preset::Setting1);
        c.train.seed = 41;
        c.cost_matrix = Some(PathBuf::from("m.csv"));
        c.ood_subsample = None;
        c.data = DataSource::Csv(PathBuf::from("data/points.csv"));
        assert_eq!(parse_config(&c.to_ini()).unwrap(), c);
        for p in Preset::ALL {
            let c = ExperimentConfig::from_preset(p);
            assert_eq!(parse_config(&c.to_ini()).unwrap(), c);
        }
    }

    fn tiny_config(dir: &Path, method: Method, replications: usize) -> ExperimentConfig {
        let preset = match method {
            Method::SeeOod => Preset::Setting1,
            Method::Wood => Preset::Wood2d,
        };
        let mut c = ExperimentConfig::from_preset(preset);
        c.train.iterations = 10;
        c.train.discriminator_arch = vec![2, 8, 3];
        c.train.generator_arch = vec![2, 8, 2];
        c.train.batch_ind = 8;
        c.train.batch_gen = 8;
        c.replications = replications;
        c.grid.resolution = 12;
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn single_replication_has_zero_mad() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&tiny_config(dir.path(), Method::Wood, 1)).unwrap();
        assert!(report.aggregate.iter().all(|m| m.mad == 0.0));
        assert_eq!(report.replications.len(), 1);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), Method::SeeOod, 3);
        let report = run_experiment(&config).unwrap();
        let tpr: Vec<f64> = report
            .replications
            .iter()
            .map(|r| r.evaluation.tpr[0])
            .collect();
        let m = report.aggregate_of("tpr@0.95").unwrap();
        assert!((m.mean - mean(&tpr).unwrap()).abs() < 1e-12);
        assert!((m.mad - mad(&tpr).unwrap()).abs() < 1e-12);
        for f in &report.files {
            assert!(dir.path().join(f).is_file(), "{f:?} missing");
        }
        assert!(report.files.contains(&PathBuf::from("rep_2/generator.txt")));
        assert_eq!(report.replications[2].seed, config.train.seed + 2);
    }

    #[test]
    fn report_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), Method::SeeOod, 2);
        let mut report = run_experiment(&config).unwrap();
        let loaded = ExperimentReport::load(dir.path()).unwrap();
        report.files.clear();
        assert_eq!(loaded, report);
    }

    #[test]
    fn report_compared_with_itself_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&tiny_config(dir.path(), Method::Wood, 2)).unwrap();
        let cmp = compare_rejection_regions(&report, &report, 0.95).unwrap();
        assert!(cmp.differences.iter().all(|&d| d == 0.0));
        assert_eq!(cmp.mean_difference, 0.0);
        assert_eq!(cmp.a_larger, 0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&tiny_config(&dir.path().join("a"), Method::Wood, 1)).unwrap();
        let mut cb = tiny_config(&dir.path().join("b"), Method::Wood, 1);
        cb.grid.resolution = 10;
        let b = run_experiment(&cb).unwrap();
        assert!(matches!(
            compare_rejection_regions(&a, &b, 0.95),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            compare_rejection_regions(&a, &a, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn replication_failures_carry_the_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(dir.path(), Method::Wood, 2);
        c.ood_subsample = Some(5000);
        match run_experiment(&c).unwrap_err() {
            Error::Replication { index, .. } => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_columns_parse() {
        let cols =
            read_history_columns("iteration,loss,gen_score_mean\n0,1.5,\n1,0.5,2\n").unwrap();
        assert_eq!(cols["loss"], vec![1.5, 0.5]);
        assert_eq!(cols["gen_score_mean"], vec![2.0]);
    }
}
