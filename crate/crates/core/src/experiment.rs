//! Simulation sweeps: per-replication pipeline, result rows, CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, derive_seed, fmt_real, Dataset, Shard, SimDesign};
use crate::debias::{self, aggregate, default_lambda0, nodewise, ShardEstimate};
use crate::error::{PlmError, Result};
use crate::kernel::{self, KernelSpec};
use crate::lasso::LassoOptions;
use crate::metrics::{self, ErrorMetrics};
use crate::profiled_lasso::{PenaltyConfig, ProfiledSystem};
use crate::tuning::{self, CvPlan, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "sweep_p")]
    SweepP,
    #[serde(rename = "sweep_m")]
    SweepM,
    #[serde(rename = "sweep_N")]
    SweepN,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SweepP => "sweep_p",
            Scenario::SweepM => "sweep_m",
            Scenario::SweepN => "sweep_N",
        }
    }
}

impl FromStr for Scenario {
    type Err = PlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep_p" => Ok(Scenario::SweepP),
            "sweep_m" => Ok(Scenario::SweepM),
            "sweep_N" | "sweep_n" => Ok(Scenario::SweepN),
            other => Err(PlmError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = PlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(PlmError::Config(format!("unknown profile {other:?}"))),
        }
    }
}

pub const DESK_MAX_P: usize = 200;
pub const DESK_MAX_REPLICATIONS: usize = 50;

/// Nodewise multiplier used by the shipped presets. The library default of
/// 1.0 leaves a remainder of order `lambda0 / tau^2` times the Lasso shrinkage
/// in every debiased estimate, which averaging over machines cannot remove.
pub const PRESET_LAMBDA0_MULTIPLIER: f64 = 0.25;

/// A flat TOML experiment description. Only the swept variable's fixed
/// counterpart is ignored; e.g. `p` is unused by `sweep_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub values: Vec<usize>,
    #[serde(rename = "N")]
    pub total_n: usize,
    pub p: usize,
    pub m: usize,
    /// Rows per machine, used by `sweep_N`.
    #[serde(rename = "n")]
    pub local_n: usize,
    pub replications: usize,
    pub rho: f64,
    pub noise_var: f64,
    /// Leading coefficients of `beta*`; the rest are zero.
    pub beta_star: Vec<f64>,
    pub kernel: KernelSpec,
    #[serde(flatten)]
    pub grid: GridSpec,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub include_centralized: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::SweepP,
            values: vec![100, 200],
            total_n: 2000,
            p: 200,
            m: 10,
            local_n: 200,
            replications: 50,
            rho: 0.3,
            noise_var: 4.0,
            beta_star: datagen::DEFAULT_SIGNAL.to_vec(),
            kernel: KernelSpec::sobolev3(),
            grid: GridSpec::default(),
            seed: 2024,
            out: PathBuf::from("results"),
            workers: 1,
            include_centralized: true,
        }
    }
}

impl ExperimentConfig {
    /// The shipped presets for each scenario.
    pub fn preset(profile: Profile, scenario: Scenario) -> Self {
        let base = ExperimentConfig {
            scenario,
            grid: GridSpec {
                lambda0_multiplier: PRESET_LAMBDA0_MULTIPLIER,
                ..GridSpec::default()
            },
            ..ExperimentConfig::default()
        };
        match (profile, scenario) {
            (Profile::Paper, Scenario::SweepP) => ExperimentConfig {
                values: vec![100, 200, 400, 800, 1600],
                replications: 200,
                ..base
            },
            (Profile::Paper, Scenario::SweepM) => ExperimentConfig {
                values: vec![1, 5, 10, 20, 25],
                p: 1000,
                replications: 200,
                ..base
            },
            (Profile::Paper, Scenario::SweepN) => ExperimentConfig {
                values: vec![2000, 4000, 6000, 8000, 10000],
                p: 1000,
                replications: 200,
                ..base
            },
            (Profile::Desk, Scenario::SweepP) => base,
            (Profile::Desk, Scenario::SweepM) => ExperimentConfig {
                values: vec![1, 5, 10, 20],
                ..base
            },
            (Profile::Desk, Scenario::SweepN) => ExperimentConfig {
                values: vec![2000, 4000, 6000],
                include_centralized: false,
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| PlmError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PlmError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Caps sizes at desk scale.
    pub fn clamp_to_desk(&mut self) {
        self.replications = self.replications.min(DESK_MAX_REPLICATIONS);
        self.p = self.p.min(DESK_MAX_P);
        if self.scenario == Scenario::SweepP {
            self.values.retain(|&v| v <= DESK_MAX_P);
        }
    }

    /// `(N, p, m)` at one swept value.
    pub fn sizes_at(&self, value: usize) -> (usize, usize, usize) {
        match self.scenario {
            Scenario::SweepP => (self.total_n, value, self.m),
            Scenario::SweepM => (self.total_n, self.p, value),
            Scenario::SweepN => (value, self.p, value / self.local_n.max(1)),
        }
    }

    pub fn design_at(&self, value: usize, replication: usize) -> SimDesign {
        let (total_n, p, m) = self.sizes_at(value);
        let mut beta_star = vec![0.0; p];
        for (b, s) in beta_star.iter_mut().zip(&self.beta_star) {
            *b = *s;
        }
        SimDesign {
            total_n,
            p,
            m,
            rho: self.rho,
            noise_var: self.noise_var,
            beta_star,
            seed: derive_seed(self.seed, &[value as u64, replication as u64]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PlmError::Config(msg));
        if self.values.is_empty() {
            return bad("values must not be empty".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if self.scenario == Scenario::SweepN && self.local_n == 0 {
            return bad("sweep_N needs n > 0".into());
        }
        if self.beta_star.iter().any(|b| !b.is_finite()) {
            return bad("beta_star must be finite".into());
        }
        self.kernel.validate().map_err(|e| PlmError::Config(e.to_string()))?;
        for &value in &self.values {
            let (total_n, p, m) = self.sizes_at(value);
            if self.scenario == Scenario::SweepN && value % self.local_n != 0 {
                return bad(format!("N={value} is not a multiple of n={}", self.local_n));
            }
            if self.beta_star.len() > p {
                return bad(format!("beta_star has {} entries but p={p}", self.beta_star.len()));
            }
            let mut design = self.design_at(value, 0);
            design.beta_star.resize(p, 0.0);
            design
                .validate()
                .map_err(|e| PlmError::Config(format!("at value {value}: {e}")))?;
            if total_n / m < 2 * self.grid.folds {
                return bad(format!(
                    "at value {value}: {} rows per machine is too few for {}-fold CV",
                    total_n / m,
                    self.grid.folds
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Estimator {
    Cen,
    Nai,
    Abc,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Cen => "CEN",
            Estimator::Nai => "NAI",
            Estimator::Abc => "ABC",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub value: usize,
    pub replication: usize,
    pub estimator: Estimator,
    /// `Err(code)` for a failed estimate.
    pub errors: std::result::Result<ErrorMetrics, &'static str>,
    pub wall_time_ms: f64,
    /// Mean over machines for NAI/ABC.
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda0: Option<f64>,
    pub mean_gap: Option<f64>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.errors.is_err()
    }
}

/// CV-tune, fit, nodewise and debias one machine.
pub fn estimate_shard(
    shard: &Shard,
    spec: &KernelSpec,
    grid: &GridSpec,
    total_n: usize,
    seed: u64,
) -> Result<ShardEstimate> {
    let gram = kernel::gram_matrix(spec, &shard.t)?;
    let system = ProfiledSystem::new(shard, gram.as_ref())?;
    let plan = CvPlan::for_shard(&system, total_n, grid, seed)?;
    let config = tuning::cv_select_with_gram(shard, gram.as_ref(), &plan)?.config;
    let fit = system.fit(config, None, &LassoOptions::default())?;
    let design = system.weighted_design(shard, config.lambda2)?;
    let base = default_lambda0(shard.p(), shard.n());
    let mult = tuning::cv_lambda0(design.as_ref(), base, &plan.lambda0_multipliers, plan.k, seed)?;
    let nw = nodewise(design.as_ref(), mult * base)?;
    let score = system.score(config.lambda2, &fit.beta_hat);
    let beta_check = debias::debias_with_score(&fit.beta_hat, &score, nw.theta_hat.as_ref())?;
    Ok(ShardEstimate {
        shard_id: shard.machine_id,
        beta_hat: fit.beta_hat,
        beta_check,
        gap: nw.gap,
        config,
        lambda0: nw.lambda0,
    })
}

/// CV-tuned profiled Lasso on a whole dataset.
pub fn centralized_tuned(
    data: &Dataset,
    spec: &KernelSpec,
    grid: &GridSpec,
    seed: u64,
) -> Result<(Vec<f64>, PenaltyConfig)> {
    let shard = data.as_shard();
    let gram = kernel::gram_matrix(spec, &shard.t)?;
    let system = ProfiledSystem::new(&shard, gram.as_ref())?;
    let plan = CvPlan::for_shard(&system, data.len(), grid, seed)?;
    let config = tuning::cv_select_with_gram(&shard, gram.as_ref(), &plan)?.config;
    let fit = system.fit(config, None, &LassoOptions::default())?;
    Ok((fit.beta_hat, config))
}

fn shard_seed(task_seed: u64, machine: usize) -> u64 {
    derive_seed(task_seed, &[2, machine as u64])
}

/// One (value, replication) cell: CEN (optional), NAI and ABC rows.
pub fn run_replication(cfg: &ExperimentConfig, value: usize, replication: usize) -> Vec<ResultRow> {
    let design = cfg.design_at(value, replication);
    let row = |estimator, errors, wall_time_ms| ResultRow {
        scenario: cfg.scenario,
        value,
        replication,
        estimator,
        errors,
        wall_time_ms,
        lambda1: None,
        lambda2: None,
        lambda0: None,
        mean_gap: None,
    };
    let data = match datagen::sample_dataset(&design) {
        Ok(d) => d,
        Err(e) => {
            let mut rows = vec![row(Estimator::Nai, Err(e.code()), 0.0), row(Estimator::Abc, Err(e.code()), 0.0)];
            if cfg.include_centralized {
                rows.insert(0, row(Estimator::Cen, Err(e.code()), 0.0));
            }
            return rows;
        }
    };

    let started = Instant::now();
    let distributed = datagen::partition(&data, design.m, design.seed).and_then(|shards| {
        let estimates = shards
            .par_iter()
            .map(|s| estimate_shard(s, &cfg.kernel, &cfg.grid, design.total_n, shard_seed(design.seed, s.machine_id)))
            .collect::<Result<Vec<_>>>()?;
        aggregate(estimates)
    });
    let dist_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(3);
    if cfg.include_centralized {
        let started = Instant::now();
        let cen = match (&distributed, design.m) {
            // With one machine the centralized fit is the same computation.
            (Ok(agg), 1) => Ok((agg.beta_naive.clone(), agg.per_shard[0].config)),
            _ => centralized_tuned(&data, &cfg.kernel, &cfg.grid, shard_seed(design.seed, 0)),
        };
        let ms = started.elapsed().as_secs_f64() * 1e3;
        let mut r = row(Estimator::Cen, Err("argument"), ms);
        match cen.and_then(|(b, c)| Ok((ErrorMetrics::between(&b, &design.beta_star)?, c))) {
            Ok((err, c)) => {
                r.errors = Ok(err);
                r.lambda1 = Some(c.lambda1);
                r.lambda2 = Some(c.lambda2);
            }
            Err(e) => {
                log::warn!("CEN failed at value {value}, replication {replication}: {e}");
                r.errors = Err(e.code());
            }
        }
        rows.push(r);
    }

    match distributed.and_then(|agg| Ok((agg.errors(&design.beta_star)?, agg))) {
        Ok((errs, agg)) => {
            let m = agg.per_shard.len() as f64;
            let mean_of = |f: fn(&ShardEstimate) -> f64| agg.per_shard.iter().map(f).sum::<f64>() / m;
            for (est, err) in [(Estimator::Nai, errs.nai), (Estimator::Abc, errs.abc)] {
                let mut r = row(est, Ok(err), dist_ms);
                r.lambda1 = Some(mean_of(|s| s.config.lambda1));
                r.lambda2 = Some(mean_of(|s| s.config.lambda2));
                r.lambda0 = Some(mean_of(|s| s.lambda0));
                r.mean_gap = Some(agg.mean_gap());
                rows.push(r);
            }
        }
        Err(e) => {
            log::warn!("distributed fit failed at value {value}, replication {replication}: {e}");
            rows.push(row(Estimator::Nai, Err(e.code()), dist_ms));
            rows.push(row(Estimator::Abc, Err(e.code()), dist_ms));
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub failed_fraction: f64,
}

/// Fraction of failed rows above which the CLI exits nonzero.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

/// Runs every (value, replication) task on a pool of `cfg.workers` threads.
/// Rows come back in task order whatever the schedule.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = cfg
        .values
        .iter()
        .flat_map(|&v| (0..cfg.replications).map(move |r| (v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| PlmError::Config(format!("cannot build worker pool: {e}")))?;
    let rows: Vec<ResultRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(v, r)| run_replication(cfg, v, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let failed = rows.iter().filter(|r| r.failed()).count();
    let failed_fraction = failed as f64 / rows.len().max(1) as f64;
    Ok(ExperimentOutput { rows, failed_fraction })
}

pub const RESULTS_HEADER: &str =
    "scenario,value,replication,estimator,status,linf_error,l1_error,l2_error,lambda1,lambda2,lambda0,mean_gap";

fn opt_real(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Result rows without timing, so reruns compare byte for byte.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let (status, e) = match &r.errors {
            Ok(e) => ("ok", Some(*e)),
            Err(code) => (*code, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario.name(),
            r.value,
            r.replication,
            r.estimator.name(),
            status,
            opt_real(e.map(|e| e.linf)),
            opt_real(e.map(|e| e.l1)),
            opt_real(e.map(|e| e.l2)),
            opt_real(r.lambda1),
            opt_real(r.lambda2),
            opt_real(r.lambda0),
            opt_real(r.mean_gap),
        );
    }
    out
}

pub fn timings_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("scenario,value,replication,estimator,wall_time_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scenario.name(),
            r.value,
            r.replication,
            r.estimator.name(),
            fmt_real(r.wall_time_ms)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub scenario: Scenario,
    pub value: usize,
    pub estimator: Estimator,
    pub metric: &'static str,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
}

/// Mean, standard error and median per (value, estimator, metric), over successful rows.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryCell> {
    let mut cells: BTreeMap<(usize, Estimator), (Scenario, [Vec<f64>; 3])> = BTreeMap::new();
    for r in rows {
        if let Ok(e) = &r.errors {
            let entry = cells
                .entry((r.value, r.estimator))
                .or_insert_with(|| (r.scenario, [Vec::new(), Vec::new(), Vec::new()]));
            entry.1[0].push(e.linf);
            entry.1[1].push(e.l1);
            entry.1[2].push(e.l2);
        }
    }
    let mut out = Vec::new();
    for ((value, estimator), (scenario, series)) in cells {
        for (metric, xs) in ["linf_error", "l1_error", "l2_error"].into_iter().zip(series.iter()) {
            out.push(SummaryCell {
                scenario,
                value,
                estimator,
                metric,
                count: xs.len(),
                mean: metrics::mean(xs),
                std_error: metrics::std_error(xs),
                median: metrics::median(xs),
            });
        }
    }
    out
}

pub fn summary_csv(cells: &[SummaryCell]) -> String {
    let mut out = String::from("scenario,value,estimator,metric,count,mean,std_error,median\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.scenario.name(),
            c.value,
            c.estimator.name(),
            c.metric,
            c.count,
            fmt_real(c.mean),
            fmt_real(c.std_error),
            fmt_real(c.median)
        );
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| PlmError::io(path, e))
}

pub fn emit_summary(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(PlmError::Argument("no rows to summarize".into()));
    }
    write_file(path, &summary_csv(&summarize(rows)))
}

/// Writes `results.csv`, `timings.csv` and `summary.csv` into `dir`.
pub fn write_outputs(rows: &[ResultRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PlmError::io(dir, e))?;
    write_file(&dir.join("results.csv"), &results_csv(rows))?;
    write_file(&dir.join("timings.csv"), &timings_csv(rows))?;
    if !rows.is_empty() {
        emit_summary(rows, &dir.join("summary.csv"))?;
    }
    Ok(())
}

/// Critical-radius diagnostics for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusDiagnostic {
    pub n: usize,
    pub nu: f64,
    pub q_at_nu: f64,
    pub flag: Option<kernel::RadiusFlag>,
    pub gamma: f64,
}

pub fn radius_diagnostics(eigs: &kernel::EigenSequence, n_grid: &[usize], p: usize) -> Result<Vec<RadiusDiagnostic>> {
    n_grid
        .iter()
        .map(|&n| {
            let cr = kernel::critical_radius(eigs, n)?;
            let q_at_nu = if cr.nu > 0.0 { kernel::q_n(eigs, n, cr.nu)? } else { 0.0 };
            Ok(RadiusDiagnostic {
                n,
                nu: cr.nu,
                q_at_nu,
                flag: cr.flag,
                gamma: kernel::gamma_n(cr.nu, n, p)?,
            })
        })
        .collect()
}

pub fn diagnostics_csv(rows: &[RadiusDiagnostic], alpha: Option<f64>) -> String {
    let (derived, stated) = alpha.map(kernel::radius_exponents).unzip();
    let mut out = String::from("n,alpha,nu_n,q_n_at_nu,flag,gamma_n,derived_exponent,stated_exponent\n");
    for d in rows {
        let flag = match d.flag {
            None => "",
            Some(kernel::RadiusFlag::Degenerate) => "degenerate",
            Some(kernel::RadiusFlag::NoCrossing) => "no_crossing",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.n,
            opt_real(alpha),
            fmt_real(d.nu),
            fmt_real(d.q_at_nu),
            flag,
            fmt_real(d.gamma),
            opt_real(derived),
            opt_real(stated)
        );
    }
    out
}
