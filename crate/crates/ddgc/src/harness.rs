//! Experiment runner: parses a declarative run description, executes the
//! configured algorithm across seeds, computes exact or empirical metrics,
//! and writes comma-separated tables plus a machine-readable manifest.
//!
//! All output files are fully determined by the config and seeds; wall-clock
//! timings are reported on stderr only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::{
    cell_center, evaluate_cont_mixture, run_ddgc_continuous, run_ddgc_discrete,
    run_exact_ddgc_traced, DdgcConfig, DhatSnapshot, Exploration, IterationTrace,
};
use crate::baselines::{
    q_learning_count_bonus, random_policy_eval, smm_mixture, QCountConfig, SmmConfig,
};
use crate::envs::{
    default_three_disc_env, make_discounting_conflict_mdp, make_dynamics_conflict_mdp,
    make_figure1_mdp, make_point_mass_env, sample_cont_batch, ContMixture, Disc, PointMassEnv,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_d, estimate_d_cells, EstimatorConvention};
use crate::exact::{exact_d_mixture, goal_metrics, StateDistribution};
use crate::mdp::{DiscreteMdp, PolicyMixture};
use crate::sampling::{derive_seed, sample_batch};

/// Version of the metrics file schema; bump when any column layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &str =
    "seed,iteration,objective_f,return_jgamma,partial_entropy,modified_partial_gini";
pub const DISTRIBUTION_HEADER: &str = "state,is_goal,exact_d,empirical_d";
pub const CELLS_HEADER: &str = "cell_x,cell_y,d_hat";
pub const SUMMARY_HEADER: &str = "environment,algorithm,metric,value,normalized";
pub const AGGREGATE_HEADER: &str = "iteration,objective_f_mean,objective_f_std,return_jgamma_mean,return_jgamma_std,partial_entropy_mean,partial_entropy_std,modified_partial_gini_mean,modified_partial_gini_std";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Ddgc,
    DdgcExact,
    DdgcContinuous,
    QCount,
    Random,
    Smm,
}

impl AlgorithmName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::Ddgc => "ddgc",
            AlgorithmName::DdgcExact => "ddgc_exact",
            AlgorithmName::DdgcContinuous => "ddgc_continuous",
            AlgorithmName::QCount => "q_count",
            AlgorithmName::Random => "random",
            AlgorithmName::Smm => "smm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Builtin,
    MdpFile,
    PointMass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMassSpec {
    /// Discs as [center_x, center_y, radius] rows.
    pub discs: Vec<[f64; 3]>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_start")]
    pub start: [f64; 2],
}

fn default_dt() -> f64 {
    0.1
}
fn default_noise() -> f64 {
    0.01
}
fn default_start() -> [f64; 2] {
    [0.1, 0.1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    /// Built-in name: figure1 | discounting_conflict | dynamics_conflict |
    /// point_mass_3disc.
    #[serde(default)]
    pub name: Option<String>,
    /// MDP definition file, for kind = mdp_file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Overrides the environment's default discount.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub point_mass: Option<PointMassSpec>,
}

/// Algorithm hyper-parameters; unused fields are ignored by each algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoParams {
    pub mixture_size: usize,
    pub num_trajectories: usize,
    pub horizon: usize,
    pub fqi_iterations: usize,
    pub exploration: Exploration,
    pub exploration_batch_size: Option<usize>,
    pub discretization_precision: f64,
    pub estimator_convention: EstimatorConvention,
    pub rbf_per_axis: usize,
    /// Online steps (q_count).
    pub steps: usize,
    /// Learning rate (q_count).
    pub alpha: f64,
    /// Exploration bonus scale (q_count).
    pub bonus_scale: f64,
    /// Visitation floor before logs (smm).
    pub d_floor: f64,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            mixture_size: 8,
            num_trajectories: 200,
            horizon: 30,
            fqi_iterations: 50,
            exploration: Exploration::None,
            exploration_batch_size: None,
            discretization_precision: 100.0,
            estimator_convention: EstimatorConvention::NextState,
            rbf_per_axis: 5,
            steps: 50_000,
            alpha: 0.1,
            bonus_scale: 1.0,
            d_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub num_trajectories: usize,
    pub horizon: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            num_trajectories: 200,
            horizon: 40,
        }
    }
}

/// Declarative run description. See the repository README for the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmName,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub params: AlgoParams,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ConfigParse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        match self.environment.kind {
            EnvKind::Builtin => {
                if self.environment.name.is_none() {
                    return Err(Error::InvalidConfig(
                        "builtin environment needs a name".into(),
                    ));
                }
            }
            EnvKind::MdpFile => match &self.environment.path {
                None => {
                    return Err(Error::InvalidConfig("mdp_file environment needs a path".into()))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::InvalidConfig(format!(
                        "mdp file {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            },
            EnvKind::PointMass => {}
        }
        Ok(())
    }

    /// Environment label used in summary tables.
    pub fn environment_label(&self) -> String {
        match self.environment.kind {
            EnvKind::Builtin => self.environment.name.clone().unwrap_or_default(),
            EnvKind::MdpFile => self
                .environment
                .path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            EnvKind::PointMass => "point_mass".into(),
        }
    }
}

/// A resolved environment.
#[derive(Debug, Clone)]
pub enum ResolvedEnv {
    Discrete(DiscreteMdp),
    Continuous(PointMassEnv),
}

pub fn resolve_environment(spec: &EnvironmentSpec) -> Result<ResolvedEnv> {
    let env = match spec.kind {
        EnvKind::Builtin => match spec.name.as_deref() {
            Some("figure1") => ResolvedEnv::Discrete(make_figure1_mdp()),
            Some("discounting_conflict") => ResolvedEnv::Discrete(make_discounting_conflict_mdp()),
            Some("dynamics_conflict") => ResolvedEnv::Discrete(make_dynamics_conflict_mdp()),
            Some("point_mass_3disc") => ResolvedEnv::Continuous(default_three_disc_env()),
            Some(other) => {
                return Err(Error::EnvironmentLoad(format!(
                    "unknown builtin environment '{other}'"
                )))
            }
            None => return Err(Error::EnvironmentLoad("builtin environment needs a name".into())),
        },
        EnvKind::MdpFile => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::EnvironmentLoad("mdp_file needs a path".into()))?;
            ResolvedEnv::Discrete(DiscreteMdp::load_toml(path).map_err(|e| {
                Error::EnvironmentLoad(format!("{}: {e}", path.display()))
            })?)
        }
        EnvKind::PointMass => {
            let pm = spec.point_mass.clone();
            let env = match pm {
                None => default_three_disc_env(),
                Some(pm) => make_point_mass_env(
                    pm.discs
                        .iter()
                        .map(|d| Disc { center: [d[0], d[1]], radius: d[2] })
                        .collect(),
                    pm.dt,
                    pm.noise_sigma,
                )
                .with_start(pm.start),
            };
            ResolvedEnv::Continuous(env)
        }
    };
    Ok(match (env, spec.gamma) {
        (ResolvedEnv::Discrete(mdp), Some(g)) => ResolvedEnv::Discrete(
            mdp.with_gamma(g)
                .map_err(|e| Error::EnvironmentLoad(e.to_string()))?,
        ),
        (ResolvedEnv::Continuous(env), Some(g)) => ResolvedEnv::Continuous(env.with_gamma(g)),
        (env, None) => env,
    })
}

/// One metrics row of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRow {
    pub iteration: usize,
    pub objective_f: f64,
    pub return_jgamma: f64,
    pub partial_entropy: f64,
    pub modified_partial_gini: f64,
}

/// Per-seed result of a run.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub seed: u64,
    pub rows: Vec<IterRow>,
    /// Exact final distribution over states (discrete environments).
    pub final_exact_d: Option<Vec<f64>>,
    /// Empirical final distribution: per state, or per cell for continuous
    /// environments.
    pub final_empirical_d: DhatSnapshot,
    /// Wall time of this seed's run; never written to output files.
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub environment_label: String,
}

const EVAL_SEED_SALT: u64 = 0xe7a1_0000_0000_0001;

/// Runs the configured algorithm for every seed (in parallel worker slots;
/// records are ordered by the seed list).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let env = resolve_environment(&config.environment)?;
    let records: Vec<MetricsRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| run_single_seed(config, &env, seed))
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput {
        records,
        environment_label: config.environment_label(),
    })
}

fn run_single_seed(
    config: &ExperimentConfig,
    env: &ResolvedEnv,
    seed: u64,
) -> Result<MetricsRecord> {
    let started = std::time::Instant::now();
    let params = &config.params;
    match (config.algorithm, env) {
        (AlgorithmName::Ddgc, ResolvedEnv::Discrete(mdp)) => {
            let cfg = ddgc_config(params, mdp.gamma(), seed);
            let (mixture, traces) = run_ddgc_discrete(mdp, &cfg)?;
            discrete_record(config, mdp, &mixture, &traces, seed, started)
        }
        (AlgorithmName::DdgcExact, ResolvedEnv::Discrete(mdp)) => {
            let (mixture, _, traces) = run_exact_ddgc_traced(mdp, params.mixture_size)?;
            discrete_record(config, mdp, &mixture, &traces, seed, started)
        }
        (AlgorithmName::Smm, ResolvedEnv::Discrete(mdp)) => {
            let cfg = SmmConfig {
                mixture_size: params.mixture_size,
                num_trajectories: params.num_trajectories,
                horizon: params.horizon,
                fqi_iterations: params.fqi_iterations,
                gamma: mdp.gamma(),
                seed,
                d_floor: params.d_floor,
            };
            let (mixture, traces) = smm_mixture(mdp, &cfg)?;
            discrete_record(config, mdp, &mixture, &traces, seed, started)
        }
        (AlgorithmName::QCount, ResolvedEnv::Discrete(mdp)) => {
            let cfg = QCountConfig {
                episode_horizon: params.horizon,
                ..QCountConfig::new(params.steps, params.alpha, params.bonus_scale, mdp.gamma())
            };
            let (policy, _) = q_learning_count_bonus(mdp, &cfg, seed);
            let mixture = PolicyMixture::single(policy);
            let row = exact_row(mdp, &mixture, 0)?;
            finish_discrete(config, mdp, &mixture, vec![row], seed, started)
        }
        (AlgorithmName::Random, ResolvedEnv::Discrete(mdp)) => {
            let (policy, _) = random_policy_eval(mdp)?;
            let mixture = PolicyMixture::single(policy);
            let row = exact_row(mdp, &mixture, 0)?;
            finish_discrete(config, mdp, &mixture, vec![row], seed, started)
        }
        (AlgorithmName::DdgcContinuous, ResolvedEnv::Continuous(env)) => {
            let mut cfg = ddgc_config(params, env.gamma(), seed);
            cfg.exploration = params.exploration;
            let (mixture, traces) = run_ddgc_continuous(env, &cfg)?;
            continuous_record(config, env, &mixture, &traces, seed, started)
        }
        (algo, _) => Err(Error::InvalidConfig(format!(
            "algorithm {} does not match the environment kind",
            algo.as_str()
        ))),
    }
}

fn ddgc_config(params: &AlgoParams, gamma: f64, seed: u64) -> DdgcConfig {
    DdgcConfig {
        mixture_size: params.mixture_size,
        num_trajectories: params.num_trajectories,
        horizon: params.horizon,
        fqi_iterations: params.fqi_iterations,
        gamma,
        seed,
        exploration: params.exploration,
        exploration_batch_size: params.exploration_batch_size,
        discretization_precision: params.discretization_precision,
        estimator_convention: params.estimator_convention,
        rbf_per_axis: params.rbf_per_axis,
    }
}

fn exact_row(mdp: &DiscreteMdp, mixture: &PolicyMixture, iteration: usize) -> Result<IterRow> {
    let d = exact_d_mixture(mdp, mixture)?;
    Ok(row_from_distribution(mdp, &d, iteration))
}

fn row_from_distribution(mdp: &DiscreteMdp, d: &StateDistribution, iteration: usize) -> IterRow {
    let m = goal_metrics(d, mdp.goal_mask());
    IterRow {
        iteration,
        objective_f: m.return_jgamma + 0.5 * m.modified_partial_gini,
        return_jgamma: m.return_jgamma,
        partial_entropy: m.partial_entropy,
        modified_partial_gini: m.modified_partial_gini,
    }
}

fn discrete_record(
    config: &ExperimentConfig,
    mdp: &DiscreteMdp,
    mixture: &PolicyMixture,
    traces: &[IterationTrace],
    seed: u64,
    started: std::time::Instant,
) -> Result<MetricsRecord> {
    let rows: Vec<IterRow> = traces
        .iter()
        .map(|t| {
            let d = StateDistribution::exact(t.exact_d.clone().expect("discrete trace"));
            row_from_distribution(mdp, &d, t.iteration)
        })
        .collect();
    finish_discrete(config, mdp, mixture, rows, seed, started)
}

fn finish_discrete(
    config: &ExperimentConfig,
    mdp: &DiscreteMdp,
    mixture: &PolicyMixture,
    rows: Vec<IterRow>,
    seed: u64,
    started: std::time::Instant,
) -> Result<MetricsRecord> {
    let exact = exact_d_mixture(mdp, mixture)?;
    let eval_batch = sample_batch(
        mdp,
        mixture,
        config.eval.num_trajectories,
        config.eval.horizon,
        derive_seed(seed, EVAL_SEED_SALT),
    )?;
    let empirical = estimate_d(&eval_batch, mdp.gamma(), config.params.estimator_convention)?;
    Ok(MetricsRecord {
        seed,
        rows,
        final_exact_d: Some(exact.probs().to_vec()),
        final_empirical_d: DhatSnapshot::States(empirical.d_hat().to_vec()),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn continuous_record(
    config: &ExperimentConfig,
    env: &PointMassEnv,
    mixture: &ContMixture,
    traces: &[IterationTrace],
    seed: u64,
    started: std::time::Instant,
) -> Result<MetricsRecord> {
    let precision = config.params.discretization_precision;
    let rows: Vec<IterRow> = traces
        .iter()
        .map(|t| {
            let DhatSnapshot::Cells(cells) = &t.d_hat else {
                panic!("continuous trace carries cell snapshots")
            };
            cell_row(env, cells, precision, t.iteration)
        })
        .collect();
    // Final empirical evaluation from fresh rollouts of the mixture.
    let eval_batch = sample_cont_batch(
        env,
        mixture,
        config.eval.num_trajectories,
        config.eval.horizon,
        derive_seed(seed, EVAL_SEED_SALT),
    );
    let d_eval = estimate_d_cells(
        eval_batch.episodes.iter().map(|ep| ep.as_slice()),
        eval_batch.num_trajectories(),
        config.eval.horizon,
        env.gamma(),
        precision,
        config.params.estimator_convention,
    )?;
    let (mean_return, discs) = evaluate_cont_mixture(
        env,
        mixture,
        config.eval.num_trajectories,
        config.eval.horizon,
        derive_seed(seed, EVAL_SEED_SALT.wrapping_add(1)),
    );
    eprintln!(
        "seed {seed}: eval mean discounted return {mean_return:.4}, {discs} goal disc(s) entered"
    );
    Ok(MetricsRecord {
        seed,
        rows,
        final_exact_d: None,
        final_empirical_d: DhatSnapshot::Cells(d_eval.cells().map(|(c, d)| (*c, *d)).collect()),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn cell_row(
    env: &PointMassEnv,
    cells: &[((i64, i64), f64)],
    precision: f64,
    iteration: usize,
) -> IterRow {
    let mut entropy = 0.0;
    let mut gini = 0.0;
    let mut ret = 0.0;
    for (cell, d) in cells {
        if !env.is_goal(cell_center(*cell, precision)) {
            continue;
        }
        if *d > 0.0 {
            entropy -= d * d.ln();
        }
        gini -= d * d;
        ret += d;
    }
    IterRow {
        iteration,
        objective_f: ret + 0.5 * gini,
        return_jgamma: ret,
        partial_entropy: entropy,
        modified_partial_gini: gini,
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Writes metrics.csv, aggregate.csv, per-seed and mean distribution tables,
/// and manifest.json into `dir`. Returns the written paths.
pub fn write_outputs(
    config: &ExperimentConfig,
    output: &ExperimentOutput,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    for record in &output.records {
        for row in &record.rows {
            metrics.push_str(&format!(
                "{},{},{},{},{},{}\n",
                record.seed,
                row.iteration,
                fmt(row.objective_f),
                fmt(row.return_jgamma),
                fmt(row.partial_entropy),
                fmt(row.modified_partial_gini)
            ));
        }
    }
    files.push(write_file(dir, "metrics.csv", &metrics)?);
    files.push(write_file(dir, "aggregate.csv", &aggregate_csv(&output.records))?);

    match resolve_environment(&config.environment)? {
        ResolvedEnv::Discrete(mdp) => {
            for record in &output.records {
                let name = format!("distribution_seed{}.csv", record.seed);
                files.push(write_file(
                    dir,
                    &name,
                    &distribution_table(&mdp, record)?,
                )?);
            }
            files.push(write_file(
                dir,
                "distribution.csv",
                &mean_distribution_table(&mdp, &output.records)?,
            )?);
        }
        ResolvedEnv::Continuous(_) => {
            for record in &output.records {
                let name = format!("cells_seed{}.csv", record.seed);
                files.push(write_file(dir, &name, &cells_table(record))?);
            }
        }
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        algorithm: config.algorithm.as_str().to_string(),
        environment: output.environment_label.clone(),
        seeds: config.seeds.clone(),
        files: files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        config: config.clone(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::ConfigParse(e.to_string()))?;
    files.push(write_file(dir, "manifest.json", &manifest_text)?);
    Ok(files)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct Manifest {
    schema_version: u32,
    algorithm: String,
    environment: String,
    seeds: Vec<u64>,
    files: Vec<String>,
    config: ExperimentConfig,
}

fn aggregate_csv(records: &[MetricsRecord]) -> String {
    let mut by_iter: BTreeMap<usize, Vec<&IterRow>> = BTreeMap::new();
    for record in records {
        for row in &record.rows {
            by_iter.entry(row.iteration).or_default().push(row);
        }
    }
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for (iteration, rows) in by_iter {
        let stats = |f: &dyn Fn(&IterRow) -> f64| -> (f64, f64) {
            let values: Vec<f64> = rows.iter().map(|r| f(r)).collect();
            mean_std(&values)
        };
        let (f_m, f_s) = stats(&|r| r.objective_f);
        let (j_m, j_s) = stats(&|r| r.return_jgamma);
        let (e_m, e_s) = stats(&|r| r.partial_entropy);
        let (g_m, g_s) = stats(&|r| r.modified_partial_gini);
        out.push_str(&format!(
            "{iteration},{},{},{},{},{},{},{},{}\n",
            fmt(f_m),
            fmt(f_s),
            fmt(j_m),
            fmt(j_s),
            fmt(e_m),
            fmt(e_s),
            fmt(g_m),
            fmt(g_s)
        ));
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-state table of one record: state id, goal flag, exact d, empirical d.
pub fn emit_distribution_table(
    mdp: &DiscreteMdp,
    record: &MetricsRecord,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, distribution_table(mdp, record)?)?;
    Ok(())
}

fn distribution_table(mdp: &DiscreteMdp, record: &MetricsRecord) -> Result<String> {
    let exact = record
        .final_exact_d
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("record has no exact distribution".into()))?;
    let DhatSnapshot::States(empirical) = &record.final_empirical_d else {
        return Err(Error::InvalidConfig(
            "record has no per-state empirical distribution".into(),
        ));
    };
    let mut out = String::from(DISTRIBUTION_HEADER);
    out.push('\n');
    for s in 0..mdp.num_states() {
        out.push_str(&format!(
            "{s},{},{},{}\n",
            mdp.is_goal(s) as u8,
            fmt(exact[s]),
            fmt(empirical[s])
        ));
    }
    Ok(out)
}

fn mean_distribution_table(mdp: &DiscreteMdp, records: &[MetricsRecord]) -> Result<String> {
    let n = records.len() as f64;
    let mut exact = vec![0.0; mdp.num_states()];
    let mut empirical = vec![0.0; mdp.num_states()];
    for record in records {
        let e = record
            .final_exact_d
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("record has no exact distribution".into()))?;
        let DhatSnapshot::States(emp) = &record.final_empirical_d else {
            return Err(Error::InvalidConfig("record is not per-state".into()));
        };
        for s in 0..mdp.num_states() {
            exact[s] += e[s] / n;
            empirical[s] += emp[s] / n;
        }
    }
    let mut out = String::from(DISTRIBUTION_HEADER);
    out.push('\n');
    for s in 0..mdp.num_states() {
        out.push_str(&format!(
            "{s},{},{},{}\n",
            mdp.is_goal(s) as u8,
            fmt(exact[s]),
            fmt(empirical[s])
        ));
    }
    Ok(out)
}

fn cells_table(record: &MetricsRecord) -> String {
    let DhatSnapshot::Cells(cells) = &record.final_empirical_d else {
        return format!("{CELLS_HEADER}\n");
    };
    let mut out = String::from(CELLS_HEADER);
    out.push('\n');
    for ((x, y), d) in cells {
        out.push_str(&format!("{x},{y},{}\n", fmt(*d)));
    }
    out
}

/// One normalized comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub environment: String,
    pub algorithm: String,
    pub metric: String,
    pub value: f64,
    pub normalized: f64,
}

const COMPARE_METRICS: [&str; 4] = [
    "objective_f",
    "return_jgamma",
    "partial_entropy",
    "modified_partial_gini",
];

/// Runs every config and emits one row per (algorithm, metric) with values
/// normalized by the per-environment maximum, so the best algorithm per
/// metric reads 1.0.
pub fn compare_algorithms(configs: &[ExperimentConfig]) -> Result<Vec<SummaryRow>> {
    let mut raw: Vec<(String, String, [f64; 4])> = Vec::new();
    for config in configs {
        let output = run_experiment(config)?;
        let finals: Vec<&IterRow> = output
            .records
            .iter()
            .map(|r| r.rows.last().expect("run produced no rows"))
            .collect();
        let n = finals.len() as f64;
        let means = [
            finals.iter().map(|r| r.objective_f).sum::<f64>() / n,
            finals.iter().map(|r| r.return_jgamma).sum::<f64>() / n,
            finals.iter().map(|r| r.partial_entropy).sum::<f64>() / n,
            finals.iter().map(|r| r.modified_partial_gini).sum::<f64>() / n,
        ];
        raw.push((
            output.environment_label.clone(),
            config.algorithm.as_str().to_string(),
            means,
        ));
    }
    let mut rows = Vec::new();
    for (m_idx, metric) in COMPARE_METRICS.iter().enumerate() {
        // Per-environment maximum.
        let mut max_by_env: BTreeMap<&str, f64> = BTreeMap::new();
        for (env, _, means) in &raw {
            let entry = max_by_env.entry(env.as_str()).or_insert(f64::NEG_INFINITY);
            *entry = entry.max(means[m_idx]);
        }
        for (env, algo, means) in &raw {
            let max = max_by_env[env.as_str()];
            let normalized = if means[m_idx] == max {
                1.0
            } else if max == 0.0 {
                0.0
            } else {
                means[m_idx] / max
            };
            rows.push(SummaryRow {
                environment: env.clone(),
                algorithm: algo.clone(),
                metric: metric.to_string(),
                value: means[m_idx],
                normalized,
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.environment,
            row.algorithm,
            row.metric,
            fmt(row.value),
            fmt(row.normalized)
        ));
    }
    out
}
