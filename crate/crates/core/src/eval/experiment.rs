//! Repeated-trial experiments: every (mechanism, workload, ε) combination is
//! built once per seed and scored by RMSE against the exact answers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::eval::identity::{identity_view, DEFAULT_DENSE_LIMIT};
use crate::eval::synth::SyntheticSpec;
use crate::eval::workload::{exact_answers, rmse_against, Workload, WorkloadSpec};
use crate::mechanisms::RandomStream;
use crate::partition::{build_view, BisectionOptions, Hyperparams};
use crate::schema::Schema;
use crate::tensor::{CountTensor, LoadOptions};
use crate::view::PView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Bisection,
    Identity,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Bisection => "bisection",
            Mechanism::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub clamp: bool,
}

fn default_delimiter() -> char {
    ','
}

/// Exactly one of `csv` and `synthetic` must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub ratio: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let d = Hyperparams::default();
        Self {
            ratio: d.ratio,
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
        }
    }
}

impl HyperConfig {
    fn at(&self, epsilon_b: f64) -> Hyperparams {
        Hyperparams {
            epsilon_b,
            ratio: self.ratio,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    pub workloads: Vec<WorkloadSpec>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed for sampled workloads; shared by all trials so that
    /// mechanisms are compared on identical queries.
    #[serde(default)]
    pub workload_seed: u64,
    #[serde(default)]
    pub hyperparams: HyperConfig,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: u64,
    /// JSON-lines report destination.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_mechanisms() -> Vec<Mechanism> {
    vec![Mechanism::Bisection, Mechanism::Identity]
}

fn default_dense_limit() -> u64 {
    DEFAULT_DENSE_LIMIT
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(csv) = config.dataset.csv.as_mut() {
            rebase(&mut csv.path);
            rebase(&mut csv.schema);
        }
        if let Some(out) = config.output.as_mut() {
            rebase(out);
        }
        Ok(config)
    }

    fn check(&self) -> Result<()> {
        let d = &self.dataset;
        if d.csv.is_some() == d.synthetic.is_some() {
            return Err(Error::Config("dataset needs exactly one of `csv` and `synthetic`".into()));
        }
        if self.mechanisms.is_empty() || self.workloads.is_empty() || self.epsilons.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("mechanisms, workloads, epsilons and seeds must be non-empty".into()));
        }
        if let Some(&e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::Config(format!("epsilon must be positive, got {e}")));
        }
        for &e in &self.epsilons {
            self.hyperparams.at(e).validate()?;
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<CountTensor> {
        let d = &self.dataset;
        match (&d.csv, &d.synthetic) {
            (Some(csv), None) => {
                let schema = Schema::from_path(&csv.schema)?;
                let delimiter = u8::try_from(csv.delimiter)
                    .map_err(|_| Error::Config(format!("delimiter {:?} is not a single byte", csv.delimiter)))?;
                CountTensor::load_csv_path(
                    &csv.path,
                    schema,
                    &LoadOptions {
                        delimiter,
                        clamp: csv.clamp,
                    },
                )
            }
            (None, Some(spec)) => spec.generate(&mut RandomStream::new(d.seed)),
            _ => Err(Error::Config("dataset needs exactly one of `csv` and `synthetic`".into())),
        }
    }

    fn dataset_name(&self) -> String {
        if let Some(n) = &self.dataset.name {
            return n.clone();
        }
        match (&self.dataset.csv, &self.dataset.synthetic) {
            (Some(csv), _) => csv.path.display().to_string(),
            (_, Some(spec)) => match spec {
                SyntheticSpec::Uniform { .. } => "uniform".into(),
                SyntheticSpec::Clustered { .. } => "clustered".into(),
                SyntheticSpec::Concentrated { .. } => "concentrated".into(),
            },
            _ => "dataset".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub mechanism: Mechanism,
    pub workload: String,
    pub queries: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    /// Per-seed RMSE in the order of `seeds`.
    pub rmse: Vec<f64>,
    pub rmse_mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub rmse_std: f64,
    /// `rmse_mean` divided by the bisection mechanism's `rmse_mean` on the
    /// same workload and ε.
    pub relative_rmse: Option<f64>,
    pub blocks_mean: f64,
    pub bytes_mean: f64,
    pub build_ms_mean: f64,
    pub query_ms_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:<22} {:>8} {:>12} {:>12} {:>9} {:>10} {:>12} {:>10}",
            "dataset", "mechanism", "workload", "epsilon", "rmse_mean", "rmse_std", "relative", "blocks", "bytes", "build_ms"
        );
        for r in &self.rows {
            let rel = r.relative_rmse.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:<22} {:>8} {:>12.4} {:>12.4} {:>9} {:>10.1} {:>12.0} {:>10.1}",
                r.dataset,
                r.mechanism.name(),
                r.workload,
                r.epsilon,
                r.rmse_mean,
                r.rmse_std,
                rel,
                r.blocks_mean,
                r.bytes_mean,
                r.build_ms_mean
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

struct Trial {
    blocks: usize,
    bytes: usize,
    build_ms: f64,
    /// Per workload: (rmse, query_ms).
    scores: Vec<(f64, f64)>,
}

fn run_trial(
    mechanism: Mechanism,
    tensor: &CountTensor,
    hp: &Hyperparams,
    seed: u64,
    dense_limit: u64,
    workloads: &[(Workload, Vec<f64>)],
) -> Result<Trial> {
    let start = Instant::now();
    let view: PView = match mechanism {
        Mechanism::Bisection => build_view(tensor, hp, seed, &BisectionOptions::default())?.view,
        Mechanism::Identity => identity_view(tensor, hp.epsilon_b, &RandomStream::new(seed), false, dense_limit)?,
    };
    let build_ms = start.elapsed().as_secs_f64() * 1e3;
    let bytes = codec::serialize(&view).len();
    let scores = workloads
        .iter()
        .map(|(w, exact)| {
            let t = Instant::now();
            let r = rmse_against(w, exact, &view)?;
            Ok((r, t.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trial {
        blocks: view.block_count(),
        bytes,
        build_ms,
        scores,
    })
}

/// Runs the experiment on an already loaded dataset. Raw data is only read
/// through exact query answers and view construction.
pub fn run_on(config: &ExperimentConfig, tensor: &CountTensor) -> Result<Report> {
    config.check()?;
    let schema = tensor.schema();
    let dataset = config.dataset_name();
    let mut report = Report::default();

    let mut workloads = Vec::new();
    for (i, spec) in config.workloads.iter().enumerate() {
        let mut rng = RandomStream::new(config.workload_seed).child(i as u64);
        let w = spec.generate(schema, &mut rng)?;
        let exact = exact_answers(&w, tensor)?;
        workloads.push((w, exact));
    }
    if config.workloads.iter().any(|w| matches!(w, WorkloadSpec::RandomRange { .. })) {
        report
            .notes
            .push("random-kD workloads draw a uniform attribute subset per query".into());
    }
    if config.workloads.iter().any(|w| {
        matches!(w, WorkloadSpec::KwayRange { .. } | WorkloadSpec::Marginal { cap: Some(_), .. } | WorkloadSpec::Prefix { cap: Some(_), .. })
    }) {
        report.notes.push(format!(
            "capped workloads are subsampled uniformly with workload seed {}",
            config.workload_seed
        ));
    }

    let mut rows: Vec<ReportRow> = Vec::new();
    for &epsilon in &config.epsilons {
        let hp = config.hyperparams.at(epsilon);
        for &mechanism in &config.mechanisms {
            let trials: Vec<Result<Trial>> = config
                .seeds
                .par_iter()
                .map(|&seed| run_trial(mechanism, tensor, &hp, seed, config.dense_limit, &workloads))
                .collect();
            let trials = match trials.into_iter().collect::<Result<Vec<_>>>() {
                Ok(t) => t,
                Err(e @ Error::DomainTooLarge { .. }) if mechanism == Mechanism::Identity => {
                    report.notes.push(format!("identity skipped at epsilon {epsilon}: {e}"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let n = trials.len() as f64;
            let blocks_mean = trials.iter().map(|t| t.blocks as f64).sum::<f64>() / n;
            let bytes_mean = trials.iter().map(|t| t.bytes as f64).sum::<f64>() / n;
            let build_ms_mean = trials.iter().map(|t| t.build_ms).sum::<f64>() / n;
            for (wi, (w, _)) in workloads.iter().enumerate() {
                let rmse: Vec<f64> = trials.iter().map(|t| t.scores[wi].0).collect();
                let query_ms: Vec<f64> = trials.iter().map(|t| t.scores[wi].1).collect();
                rows.push(ReportRow {
                    dataset: dataset.clone(),
                    mechanism,
                    workload: w.name.clone(),
                    queries: w.queries.len(),
                    epsilon,
                    seeds: config.seeds.clone(),
                    rmse_mean: mean(&rmse),
                    rmse_std: sample_std(&rmse),
                    rmse,
                    relative_rmse: None,
                    blocks_mean,
                    bytes_mean,
                    build_ms_mean,
                    query_ms_mean: mean(&query_ms),
                });
            }
        }
    }

    let reference: Vec<(String, f64, f64)> = rows
        .iter()
        .filter(|r| r.mechanism == Mechanism::Bisection)
        .map(|r| (r.workload.clone(), r.epsilon, r.rmse_mean))
        .collect();
    for row in &mut rows {
        row.relative_rmse = reference
            .iter()
            .find(|(w, e, _)| *w == row.workload && *e == row.epsilon)
            .map(|&(_, _, base)| row.rmse_mean / base);
    }
    report.rows = rows;
    Ok(report)
}

/// Loads the dataset, runs every trial and writes the JSON-lines report
/// when the config names an output path.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let tensor = config.load_dataset()?;
    let report = run_on(config, &tensor)?;
    if let Some(path) = &config.output {
        std::fs::write(path, report.to_json_lines())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seeds: Vec<u64>, mechanisms: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "dataset": {{"synthetic": {{"kind": "clustered", "domains": [16, 16], "records": 2000, "clusters": 2, "spread": 0.05}}, "seed": 1}},
                "mechanisms": {mechanisms},
                "workloads": [{{"kind": "random_range", "k": 1, "count": 50}}],
                "epsilons": [1.0],
                "seeds": {seeds:?}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_seed_single_row() {
        let report = run_experiment(&config(vec![3], r#"["bisection"]"#)).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.rmse_std, 0.0);
        assert_eq!(row.relative_rmse, Some(1.0));
        assert!(row.blocks_mean >= 1.0);
    }

    #[test]
    fn mean_is_arithmetic_mean_of_seeds() {
        let report = run_experiment(&config((0..10).collect(), r#"["bisection", "identity"]"#)).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            let m = row.rmse.iter().sum::<f64>() / 10.0;
            assert!((row.rmse_mean - m).abs() <= 1e-12);
        }
        let identity = report.rows.iter().find(|r| r.mechanism == Mechanism::Identity).unwrap();
        let bisection = report.rows.iter().find(|r| r.mechanism == Mechanism::Bisection).unwrap();
        assert_eq!(identity.relative_rmse, Some(identity.rmse_mean / bisection.rmse_mean));
        assert_eq!(identity.blocks_mean, 256.0);
        let table = report.render_table();
        assert!(table.contains("identity") && table.contains("random-1D"));
        assert_eq!(report.to_json_lines().lines().count(), 2);
    }

    #[test]
    fn trials_are_reproducible() {
        let c = config(vec![5, 6], r#"["bisection"]"#);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.rows[0].rmse, b.rows[0].rmse);
    }

    #[test]
    fn invalid_keys_are_rejected() {
        let bad = r#"{"dataset": {"synthetic": {"kind": "uniform", "domains": [4], "records": 1}},
            "workloads": [{"kind": "prefix", "k": 1}], "epsilons": [1.0], "seeds": [0], "trails": 3}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
        let both_missing = r#"{"dataset": {}, "workloads": [{"kind": "prefix", "k": 1}], "epsilons": [1.0], "seeds": [0]}"#;
        assert!(ExperimentConfig::from_json(both_missing).is_err());
    }

    #[test]
    fn std_matches_definition() {
        assert_eq!(sample_std(&[1.0]), 0.0);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
