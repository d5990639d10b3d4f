//! Replication engine for the deterministic, fixed-sample and superpopulation
//! designs.
//!
//! Every random quantity of replication `r` is drawn from a substream keyed by
//! `(master_seed, r, purpose)`; records are therefore identical for any
//! worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    coupling_discrepancies, limiting_variance_mc, limiting_variance_quadrature, mean_var,
    normality_report, summarize_coupling, CouplingDiagnostics, CouplingDraw, CouplingInputs,
    HistogramBin, NormalityReport, VarianceEstimate, DEFAULT_HISTOGRAM_BINS,
};
use crate::cutnorm::CutNormMethod;
use crate::error::{Error, Result};
use crate::estimation::{sample_treatments, EstimateRecord, Experiment};
use crate::graphs::{half_graph, sample_graphon_graph, sparsify, ExposureGraph, Permutation};
use crate::kernels::{Kernel, ScaleSequence};
use crate::outcomes::{OutcomeProfile, OutcomeVector};
use crate::rng::{substream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentDesign {
    /// Half graph with `ℓ(i/n)`; sparsified once per run when `ρₙ < 1`.
    Deterministic,
    /// Latents, graph and outcomes drawn once and held fixed.
    FixedSample,
    /// Latents, graph and outcomes redrawn for every replication.
    Superpopulation,
}

impl ExperimentDesign {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentDesign::Deterministic => "deterministic",
            ExperimentDesign::FixedSample => "fixed_sample",
            ExperimentDesign::Superpopulation => "superpopulation",
        }
    }
}

/// How the reference values `σ²` in the summary are computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSettings {
    pub enabled: bool,
    pub mc_samples: usize,
    pub quadrature_points: usize,
    pub u_points: usize,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            mc_samples: 100_000,
            quadrature_points: 512,
            u_points: 2048,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

fn default_design() -> ExperimentDesign {
    ExperimentDesign::Deterministic
}

fn default_scale() -> ScaleSequence {
    ScaleSequence::Dense
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub pi: f64,
    #[serde(default = "default_scale")]
    pub scale: ScaleSequence,
    pub kernel: Kernel,
    pub profile: OutcomeProfile,
    #[serde(default = "default_design")]
    pub design: ExperimentDesign,
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub variance: VarianceSettings,
}

pub const PRESETS: [&str; 2] = ["paper_sec4_dense", "paper_sec4_sparse"];

impl ExperimentConfig {
    /// Half graph, `n = 1000`, `π = 0.5`, 10⁴ replications; the sparse variant
    /// uses `ρₙ = n^(-0.3)`.
    pub fn preset(name: &str) -> Result<Self> {
        let scale = match name {
            "paper_sec4_dense" => ScaleSequence::Dense,
            "paper_sec4_sparse" => ScaleSequence::PowerLaw { exponent: 0.3 },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            n: 1000,
            pi: 0.5,
            scale,
            kernel: Kernel::HalfGraphIndicator,
            profile: OutcomeProfile::reference(),
            design: ExperimentDesign::Deterministic,
            replications: 10_000,
            master_seed: 20_240_601,
            parallelism: default_parallelism(),
            bins: DEFAULT_HISTOGRAM_BINS,
            variance: VarianceSettings::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return fail(format!("pi = {} is outside (0, 1)", self.pi));
        }
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        if self.bins == 0 {
            return fail("bins must be at least 1".into());
        }
        if let ScaleSequence::PowerLaw { exponent } = self.scale {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return fail(format!(
                    "scale exponent {exponent} must be finite and nonnegative"
                ));
            }
        }
        if self.design == ExperimentDesign::Deterministic
            && self.kernel != Kernel::HalfGraphIndicator
        {
            return fail(
                "the deterministic design is defined for the half_graph kernel only".into(),
            );
        }
        let v = &self.variance;
        if v.enabled && (v.mc_samples < 2 || v.quadrature_points == 0 || v.u_points == 0) {
            return fail(
                "variance settings need mc_samples >= 2 and positive quadrature sizes".into(),
            );
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.scale.rho(self.n)
    }
}

fn uniform_latents(n: usize, master: u64, index: u64) -> Vec<f64> {
    let mut rng = substream(master, index, Purpose::Latents);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Half graph (sparsified once from the `Sparsify` substream when `ρₙ < 1`)
/// with outcomes `ℓ(i/n)`.
pub fn deterministic_experiment(
    config: &ExperimentConfig,
) -> Result<(ExposureGraph, OutcomeVector)> {
    let rho = config.rho();
    let mut graph = half_graph(config.n);
    if rho < 1.0 {
        graph = sparsify(
            &graph,
            rho,
            &mut substream(config.master_seed, 0, Purpose::Sparsify),
        )?;
    }
    Ok((graph, config.profile.discretize(config.n)))
}

/// Latents, `G(n, L, ρₙ)` and `ℓ(Uᵢ)` from the substreams at `index`.
pub fn sampled_experiment(
    config: &ExperimentConfig,
    index: u64,
) -> Result<(Vec<f64>, ExposureGraph, OutcomeVector)> {
    let latents = uniform_latents(config.n, config.master_seed, index);
    let mut rng = substream(config.master_seed, index, Purpose::Graph);
    let graph = sample_graphon_graph(config.n, &config.kernel, config.rho(), &latents, &mut rng)?;
    let outcomes = config.profile.sample(&latents)?;
    Ok((latents, graph, outcomes))
}

/// The experiment used by replication `index` (fixed designs ignore it).
pub fn build_experiment(config: &ExperimentConfig, index: u64) -> Result<Experiment> {
    let (graph, outcomes) = match config.design {
        ExperimentDesign::Deterministic => deterministic_experiment(config)?,
        ExperimentDesign::FixedSample => {
            let (_, g, v) = sampled_experiment(config, 0)?;
            (g, v)
        }
        ExperimentDesign::Superpopulation => {
            let (_, g, v) = sampled_experiment(config, index)?;
            (g, v)
        }
    };
    Experiment::new(graph, outcomes, config.pi)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `f` over `0..count` on `threads` workers and returns results in index
/// order; the lowest failing index wins.
fn run_indexed<T: Send>(
    threads: usize,
    count: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> =
        pool(threads)?.install(|| (0..count).into_par_iter().map(&f).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Replication {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub rho: f64,
    pub records: Vec<EstimateRecord>,
    /// Normality diagnostics of the `stat` column.
    pub report: Option<NormalityReport>,
    pub report_error: Option<String>,
    pub sigma2_theory: Option<f64>,
    pub sigma2_mc: Option<VarianceEstimate>,
    pub wall_time: Duration,
}

pub fn run_replications(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let fixed = match config.design {
        ExperimentDesign::Superpopulation => None,
        _ => Some(build_experiment(config, 0)?),
    };
    let records = run_indexed(config.parallelism, config.replications, |r| {
        let owned;
        let experiment = match &fixed {
            Some(e) => e,
            None => {
                owned = build_experiment(config, r as u64)?;
                &owned
            }
        };
        let mut rng = substream(config.master_seed, r as u64, Purpose::Treatment);
        let w = sample_treatments(config.n, config.pi, &mut rng)?;
        experiment.record(&w)
    })?;

    let stats: Vec<f64> = records.iter().map(|r| r.stat).collect();
    let (report, report_error) = match normality_report(&stats, config.bins) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let (sigma2_theory, sigma2_mc) = if config.variance.enabled {
        let v = &config.variance;
        let theory = limiting_variance_quadrature(
            &config.kernel,
            &config.profile,
            config.pi,
            v.u_points,
            v.quadrature_points,
        )?;
        let mut rng = substream(config.master_seed, 0, Purpose::MonteCarlo);
        let mc = pool(config.parallelism)?.install(|| {
            limiting_variance_mc(
                &config.kernel,
                &config.profile,
                config.pi,
                v.mc_samples,
                v.quadrature_points,
                &mut rng,
            )
        })?;
        (Some(theory), Some(mc))
    } else {
        (None, None)
    };

    Ok(RunResult {
        config: config.clone(),
        rho: config.rho(),
        records,
        report,
        report_error,
        sigma2_theory,
        sigma2_mc,
        wall_time: start.elapsed(),
    })
}

/// The summary JSON written next to the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub pi: f64,
    pub rho: f64,
    pub design: ExperimentDesign,
    pub replications: usize,
    pub master_seed: u64,
    pub sample_mean: Option<f64>,
    pub sample_var: Option<f64>,
    pub qq_r2: Option<f64>,
    pub sigma2_theory: Option<f64>,
    pub sigma2_mc: Option<f64>,
    pub sigma2_mc_se: Option<f64>,
    pub mean_tau_hat: f64,
    pub mean_tau_bar: f64,
    pub histogram: Vec<HistogramBin>,
    pub report_error: Option<String>,
}

impl RunResult {
    pub fn summary(&self) -> Summary {
        let col = |f: fn(&EstimateRecord) -> f64| {
            mean_var(&self.records.iter().map(f).collect::<Vec<_>>()).0
        };
        Summary {
            n: self.config.n,
            pi: self.config.pi,
            rho: self.rho,
            design: self.config.design,
            replications: self.config.replications,
            master_seed: self.config.master_seed,
            sample_mean: self.report.as_ref().map(|r| r.sample_mean),
            sample_var: self.report.as_ref().map(|r| r.sample_var),
            qq_r2: self.report.as_ref().map(|r| r.qq_r2),
            sigma2_theory: self.sigma2_theory,
            sigma2_mc: self.sigma2_mc.as_ref().map(|v| v.sigma2),
            sigma2_mc_se: self.sigma2_mc.as_ref().map(|v| v.mc_standard_error),
            mean_tau_hat: col(|r| r.tau_hat),
            mean_tau_bar: col(|r| r.tau_bar),
            histogram: self
                .report
                .as_ref()
                .map(|r| r.histogram.clone())
                .unwrap_or_default(),
            report_error: self.report_error.clone(),
        }
    }

    pub fn records_csv(&self) -> String {
        records_csv(&self.records)
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join("results.csv");
        let json = dir.join("summary.json");
        fs::write(&csv, self.records_csv())?;
        fs::write(&json, to_json(&self.summary())?)?;
        Ok((csv, json))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    rep: usize,
    tau_hat: f64,
    tau_bar: f64,
    stat: f64,
    main_term: f64,
    remainder: f64,
}

#[derive(Serialize)]
struct DrawRow {
    draw: usize,
    d1: f64,
    d2: f64,
    l1_outcome_gap: f64,
    l1_derivative_gap: f64,
    cut_gap: Option<f64>,
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Columns `rep, tau_hat, tau_bar, stat, main_term, remainder`.
pub fn records_csv(records: &[EstimateRecord]) -> String {
    write_csv(records.iter().enumerate().map(|(rep, r)| RecordRow {
        rep,
        tau_hat: r.tau_hat,
        tau_bar: r.tau_bar,
        stat: r.stat,
        main_term: r.main_term,
        remainder: r.remainder,
    }))
}

pub fn parse_records_csv(text: &str) -> Result<Vec<EstimateRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?;
    if header
        != vec![
            "rep",
            "tau_hat",
            "tau_bar",
            "stat",
            "main_term",
            "remainder",
        ]
    {
        return Err(Error::InvalidInput(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    reader
        .deserialize::<RecordRow>()
        .map(|row| {
            let r = row.map_err(csv_error)?;
            Ok(EstimateRecord {
                tau_hat: r.tau_hat,
                tau_bar: r.tau_bar,
                stat: r.stat,
                main_term: r.main_term,
                remainder: r.remainder,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CouplingRun {
    pub draws: Vec<CouplingDraw>,
    pub diagnostics: CouplingDiagnostics,
}

impl CouplingRun {
    /// Columns `draw, d1, d2, l1_outcome_gap, l1_derivative_gap, cut_gap`.
    pub fn draws_csv(&self) -> String {
        write_csv(self.draws.iter().enumerate().map(|(draw, d)| DrawRow {
            draw,
            d1: d.d1,
            d2: d.d2,
            l1_outcome_gap: d.l1_outcome_gap,
            l1_derivative_gap: d.l1_derivative_gap,
            cut_gap: d.cut_gap,
        }))
    }

    /// Writes `coupling.csv` and `coupling_summary.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join("coupling.csv");
        let json = dir.join("coupling_summary.json");
        fs::write(&csv, self.draws_csv())?;
        fs::write(&json, to_json(&self.diagnostics)?)?;
        Ok((csv, json))
    }
}

/// Couples the deterministic half-graph experiment with `draws` independent
/// kernel-sampled experiments; draw `r` uses the latent, graph and treatment
/// substreams at index `r`.
pub fn run_coupling(
    config: &ExperimentConfig,
    draws: usize,
    cut_method: Option<&CutNormMethod>,
) -> Result<CouplingRun> {
    let det_config = ExperimentConfig {
        design: ExperimentDesign::Deterministic,
        ..config.clone()
    };
    det_config.validate()?;
    if draws < 2 {
        return Err(Error::Config("coupling needs at least two draws".into()));
    }
    let (det_graph, det_outcomes) = deterministic_experiment(&det_config)?;
    let identity = Permutation::identity(config.n);
    let rho = config.rho();
    let results = run_indexed(config.parallelism, draws, |r| {
        let (latents, graph, outcomes) = sampled_experiment(config, r as u64)?;
        let w = sample_treatments(
            config.n,
            config.pi,
            &mut substream(config.master_seed, r as u64, Purpose::Treatment),
        )?;
        let inputs = CouplingInputs {
            det_graph: &det_graph,
            det_outcomes: &det_outcomes,
            det_perm: &identity,
            sampled_graph: &graph,
            sampled_outcomes: &outcomes,
            latents: &latents,
            rho,
        };
        coupling_discrepancies(&inputs, &w, cut_method)
    })?;
    let diagnostics = summarize_coupling(config.n, &results)?;
    Ok(CouplingRun {
        draws: results,
        diagnostics,
    })
}
