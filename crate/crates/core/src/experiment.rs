//! Experiment orchestration: sweeps over filters, output dimensions, release
//! chains, noise levels and trials, with evaluation by freshly trained
//! attack and analyst classifiers.
//!
//! Seeds are derived from the master seed and cell indices only, so every
//! cell is reproducible on its own and cells can run in any order. Within a
//! trial all filters share one train/test split.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_pca, fit_ppls, fit_rand, DEFAULT_PPLS_LAMBDA};
use crate::closed_form::{build_scatters, privacy_lds};
use crate::dataset::{split_per_subject, Dataset};
use crate::dp::{default_bound_scale, perturb_raw, BoundKind, NoiseConfig};
use crate::error::{Error, Result};
use crate::filters::{pretrain_autoencoder, FilterState, PretrainConfig, DEFAULT_HIDDEN};
use crate::heads::{accuracy, fit_softmax, one_hot, softmax_risk, SoftmaxHead, DEFAULT_LAMBDA};
use crate::minimax::{train_minimax, FittedHead, LabelSource, Task, TradeoffConfig, TrainReport, SCHEMA_VERSION};
use crate::optim::SolverOptions;
use crate::rng::{derive_seed, derived_rng};

pub const DEFAULT_EPSILON_INVERSE: [f64; 6] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterSpec {
    /// Identity filter on the raw features.
    Raw,
    Rand,
    Pca,
    /// PPLS-style covariance contrast.
    Ppls,
    MinimaxLinear,
    MinimaxMlp,
    /// Linear minimax initialised from the discriminant generalized eigenproblem.
    LdsInit,
}

impl FilterSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Rand => "rand",
            Self::Pca => "pca",
            Self::Ppls => "ppls",
            Self::MinimaxLinear => "minimax-linear",
            Self::MinimaxMlp => "minimax-mlp",
            Self::LdsInit => "lds-init",
        }
    }
}

impl std::str::FromStr for FilterSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raw" => Self::Raw,
            "rand" => Self::Rand,
            "pca" => Self::Pca,
            "ppls" => Self::Ppls,
            "minimax-linear" => Self::MinimaxLinear,
            "minimax-mlp" => Self::MinimaxMlp,
            "lds-init" => Self::LdsInit,
            other => return Err(Error::Parse(format!("unknown filter '{other}'"))),
        })
    }
}

/// Where noise enters the signal chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chain {
    /// `g(x)`, no bounding or noise.
    Clean,
    /// `b(g(x)) + xi`.
    Pre,
    /// `g(b(x) + xi)`, with the filter trained on perturbed training data.
    Post,
}

impl std::str::FromStr for Chain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean" => Self::Clean,
            "pre" => Self::Pre,
            "post" => Self::Post,
            other => return Err(Error::Parse(format!("unknown chain '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub filters: Vec<FilterSpec>,
    pub dims: Vec<usize>,
    pub chains: Vec<Chain>,
    pub epsilon_inverse: Vec<f64>,
    pub bound: BoundKind,
    /// Bound scale; derived from the training outputs when absent.
    pub bound_scale: Option<f64>,
    pub trials: usize,
    pub train_fraction: f64,
    pub master_seed: u64,
    pub rho: f64,
    pub reg_lambda: f64,
    pub max_iter: usize,
    pub convergence_tol: f64,
    pub ppls_lambda: f64,
    pub hidden_dims: Vec<usize>,
    pub pretrain: PretrainConfig,
    /// Inner solver for the minimax head fits.
    pub inner: SolverOptions,
    /// Solver for the evaluation classifiers.
    pub eval_solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            filters: vec![FilterSpec::Rand, FilterSpec::Pca, FilterSpec::Ppls, FilterSpec::MinimaxLinear],
            dims: vec![10, 20, 50, 100],
            chains: vec![Chain::Clean],
            epsilon_inverse: DEFAULT_EPSILON_INVERSE.to_vec(),
            bound: BoundKind::Clip,
            bound_scale: None,
            trials: 10,
            train_fraction: 0.8,
            master_seed: 0,
            rho: 10.0,
            reg_lambda: DEFAULT_LAMBDA,
            max_iter: 200,
            convergence_tol: 1e-6,
            ppls_lambda: DEFAULT_PPLS_LAMBDA,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            pretrain: PretrainConfig::default(),
            inner: SolverOptions::default(),
            eval_solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train fraction must be in (0, 1)".into()));
        }
        if self.filters.is_empty() || self.dims.is_empty() || self.chains.is_empty() {
            return Err(Error::InvalidArgument("filters, dims and chains must be non-empty".into()));
        }
        if self.chains.iter().any(|c| *c != Chain::Clean) && self.epsilon_inverse.is_empty() {
            return Err(Error::InvalidArgument("noisy chains need epsilon-inverse values".into()));
        }
        if self.epsilon_inverse.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidArgument("epsilon-inverse values must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Tradeoff used by the minimax filters: softmax adversary against a
    /// softmax analyst, or against reconstruction when the data carry no
    /// target labels.
    pub fn tradeoff(&self, has_target: bool) -> TradeoffConfig {
        let utility = if has_target { Task::Softmax { labels: LabelSource::Target } } else { Task::Reconstruction };
        let mut cfg = TradeoffConfig::single(Task::Softmax { labels: LabelSource::Private }, utility, self.rho, self.reg_lambda)
            .with_max_iter(self.max_iter);
        cfg.convergence_tol = self.convergence_tol;
        cfg.inner = self.inner;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub filter: FilterSpec,
    pub chain: Chain,
    pub dim: usize,
    pub epsilon_inverse: f64,
    pub trial: usize,
    pub target_accuracy: Option<f64>,
    pub private_accuracy: Option<f64>,
    pub target_chance: Option<f64>,
    pub private_chance: f64,
    /// Target accuracy minus private accuracy.
    pub tradeoff: Option<f64>,
    pub train_iterations: Option<usize>,
    pub final_phi: Option<f64>,
    /// Largest `Phi_{t+1} - Phi_t` over the training trace.
    pub max_phi_increase: Option<f64>,
    /// Hash of the fitted filter and evaluation head parameters.
    pub model_fingerprint: u64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl CellResult {
    /// Equality of everything but the timing.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |c: &Self| CellResult { wall_time_s: 0.0, ..c.clone() };
        let (a, b) = (strip(self), strip(other));
        serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok()
            && a.target_accuracy.map(f64::to_bits) == b.target_accuracy.map(f64::to_bits)
            && a.private_accuracy.map(f64::to_bits) == b.private_accuracy.map(f64::to_bits)
            && a.final_phi.map(f64::to_bits) == b.final_phi.map(f64::to_bits)
            && a.max_phi_increase.map(f64::to_bits) == b.max_phi_increase.map(f64::to_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub filter: FilterSpec,
    pub chain: Chain,
    pub dim: usize,
    pub epsilon_inverse: f64,
    pub trials: usize,
    pub failures: usize,
    pub target_mean: Option<f64>,
    pub target_std: Option<f64>,
    pub private_mean: f64,
    pub private_std: f64,
    pub tradeoff_mean: Option<f64>,
    pub target_chance: Option<f64>,
    pub private_chance: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    /// Bitwise equality of all results, ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.cells.len() == other.cells.len() && self.cells.iter().zip(&other.cells).all(|(a, b)| a.same_outcome(b))
    }

    /// One row per `(filter, chain, dim, epsilon_inverse)`, over successful trials.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(FilterSpec, Chain, usize, u64), Vec<&CellResult>> = BTreeMap::new();
        for c in &self.cells {
            groups.entry((c.filter, c.chain, c.dim, c.epsilon_inverse.to_bits())).or_default().push(c);
        }
        let mut rows: Vec<SummaryRow> = groups
            .into_values()
            .map(|cells| {
                let first = cells[0];
                let ok: Vec<&&CellResult> = cells.iter().filter(|c| c.error.is_none()).collect();
                let private: Vec<f64> = ok.iter().filter_map(|c| c.private_accuracy).collect();
                let target: Vec<f64> = ok.iter().filter_map(|c| c.target_accuracy).collect();
                let tradeoff: Vec<f64> = ok.iter().filter_map(|c| c.tradeoff).collect();
                let (private_mean, private_std) = if private.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&private) };
                let target_stats = (!target.is_empty()).then(|| mean_std(&target));
                SummaryRow {
                    filter: first.filter,
                    chain: first.chain,
                    dim: first.dim,
                    epsilon_inverse: first.epsilon_inverse,
                    trials: cells.len(),
                    failures: cells.len() - ok.len(),
                    target_mean: target_stats.map(|s| s.0),
                    target_std: target_stats.map(|s| s.1),
                    private_mean,
                    private_std,
                    tradeoff_mean: (!tradeoff.is_empty()).then(|| mean_std(&tradeoff).0),
                    target_chance: first.target_chance,
                    private_chance: first.private_chance,
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            (a.filter, a.chain, a.dim)
                .cmp(&(b.filter, b.chain, b.dim))
                .then(a.epsilon_inverse.total_cmp(&b.epsilon_inverse))
        });
        rows
    }

    /// Summary row for one grid point.
    pub fn find(&self, filter: FilterSpec, chain: Chain, dim: usize, epsilon_inverse: f64) -> Option<SummaryRow> {
        self.summary().into_iter().find(|r| {
            r.filter == filter && r.chain == chain && r.dim == dim && r.epsilon_inverse == epsilon_inverse
        })
    }
}

/// A fitted filter, with the training report for minimax filters.
#[derive(Debug, Clone)]
pub struct FittedFilter {
    pub filter: FilterState,
    pub report: Option<TrainReport>,
}

/// Fits one filter on training data only.
pub fn fit_filter(spec: FilterSpec, train: &Dataset, d: usize, cfg: &ExperimentConfig, seed: u64) -> Result<FittedFilter> {
    let x = &train.features;
    let dim = train.dim();
    let plain = |filter| Ok(FittedFilter { filter, report: None });
    let minimax = |init: FilterState| -> Result<FittedFilter> {
        let report = train_minimax(&init, train, &cfg.tradeoff(train.target_labels.is_some()))?;
        Ok(FittedFilter { filter: report.filter.clone(), report: Some(report) })
    };
    match spec {
        FilterSpec::Raw => plain(FilterState::identity(dim)),
        FilterSpec::Rand => plain(fit_rand(dim, d, seed)?),
        FilterSpec::Pca => plain(fit_pca(x, d)?),
        FilterSpec::Ppls => {
            let y = one_hot(&train.private_labels, train.num_private_classes);
            let z = match &train.target_labels {
                Some(z) => one_hot(z, train.num_target_classes),
                None => x.clone(),
            };
            plain(fit_ppls(x, &y, &z, cfg.ppls_lambda, d)?)
        }
        FilterSpec::MinimaxLinear => minimax(FilterState::random_linear(dim, d, 1.0 / (dim as f64).sqrt(), seed)?),
        FilterSpec::LdsInit => {
            let z = train.target()?;
            let scatters = build_scatters(x, &train.private_labels, z, None)?;
            minimax(privacy_lds(&scatters, d)?.filter()?)
        }
        FilterSpec::MinimaxMlp => {
            let pre = PretrainConfig { seed, ..cfg.pretrain.clone() };
            minimax(pretrain_autoencoder(x, &cfg.hidden_dims, d, &pre)?)
        }
    }
}

fn fingerprint(filter: &FilterState, heads: &[&SoftmaxHead]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    filter.params().iter().for_each(|p| p.to_bits().hash(&mut h));
    for head in heads {
        head.params().iter().for_each(|p| p.to_bits().hash(&mut h));
    }
    h.finish()
}

/// Largest increase between consecutive recorded objective values.
pub fn max_increase(report: &TrainReport) -> f64 {
    report.phi_trace().windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

struct Released {
    train: DMatrix<f64>,
    test: DMatrix<f64>,
}

fn score(
    released: &Released,
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<(Option<f64>, f64, Vec<SoftmaxHead>)> {
    let (private_head, _) = fit_softmax(
        &released.train,
        &train.private_labels,
        train.num_private_classes,
        cfg.reg_lambda,
        cfg.eval_solver,
        None,
    )?;
    let private_acc = accuracy(&private_head, &released.test, &test.private_labels);
    let mut heads = vec![private_head];
    let target_acc = match (&train.target_labels, &test.target_labels) {
        (Some(ztr), Some(zte)) => {
            let (head, _) = fit_softmax(&released.train, ztr, train.num_target_classes, cfg.reg_lambda, cfg.eval_solver, None)?;
            let acc = accuracy(&head, &released.test, zte);
            heads.push(head);
            Some(acc)
        }
        _ => None,
    };
    Ok((target_acc, private_acc, heads))
}

fn noise_for(cfg: &ExperimentConfig, eps_inv: f64, outputs: &DMatrix<f64>) -> Result<NoiseConfig> {
    let scale = cfg.bound_scale.unwrap_or_else(|| default_bound_scale(cfg.bound, outputs));
    NoiseConfig::new(eps_inv, cfg.bound, scale, 0)
}

#[derive(Clone, Copy)]
struct Unit {
    filter_idx: usize,
    filter: FilterSpec,
    dim_idx: usize,
    dim: usize,
    chain_idx: usize,
    chain: Chain,
    trial: usize,
}

fn run_unit(unit: Unit, cfg: &ExperimentConfig, data: &Dataset) -> Vec<CellResult> {
    let eps_list: Vec<f64> = if unit.chain == Chain::Clean { vec![0.0] } else { cfg.epsilon_inverse.clone() };
    let target_chance = (data.num_target_classes > 0).then(|| 1.0 / data.num_target_classes as f64);
    let private_chance = 1.0 / data.num_private_classes.max(1) as f64;
    let blank = |eps: f64| CellResult {
        filter: unit.filter,
        chain: unit.chain,
        dim: unit.dim,
        epsilon_inverse: eps,
        trial: unit.trial,
        target_accuracy: None,
        private_accuracy: None,
        target_chance,
        private_chance,
        tradeoff: None,
        train_iterations: None,
        final_phi: None,
        max_phi_increase: None,
        model_fingerprint: 0,
        wall_time_s: 0.0,
        error: None,
    };
    let fail = |eps: f64, e: &Error, start: Instant| CellResult {
        error: Some(e.to_string()),
        wall_time_s: start.elapsed().as_secs_f64(),
        ..blank(eps)
    };

    let start = Instant::now();
    let split = split_per_subject(data, cfg.train_fraction, derive_seed(cfg.master_seed, &[0, unit.trial as u64]));
    let (train, test) = match split {
        Ok(s) => s,
        Err(e) => return eps_list.iter().map(|&eps| fail(eps, &e, start)).collect(),
    };
    let init_seed = derive_seed(cfg.master_seed, &[1, unit.filter_idx as u64, unit.dim_idx as u64, unit.trial as u64]);
    let noise_path = |eps_idx: usize| {
        [2, unit.filter_idx as u64, unit.dim_idx as u64, unit.chain_idx as u64, eps_idx as u64, unit.trial as u64]
    };

    let finish = |eps: f64, fitted: &FittedFilter, released: Released, start: Instant| -> CellResult {
        match score(&released, &train, &test, cfg) {
            Ok((target, private, heads)) => CellResult {
                target_accuracy: target,
                private_accuracy: Some(private),
                tradeoff: target.map(|t| t - private),
                train_iterations: fitted.report.as_ref().map(TrainReport::iterations),
                final_phi: fitted.report.as_ref().map(TrainReport::final_phi),
                max_phi_increase: fitted.report.as_ref().map(max_increase),
                model_fingerprint: fingerprint(&fitted.filter, &heads.iter().collect::<Vec<_>>()),
                wall_time_s: start.elapsed().as_secs_f64(),
                ..blank(eps)
            },
            Err(e) => fail(eps, &e, start),
        }
    };

    match unit.chain {
        Chain::Clean | Chain::Pre => {
            let fitted = match fit_filter(unit.filter, &train, unit.dim, cfg, init_seed) {
                Ok(f) => f,
                Err(e) => return eps_list.iter().map(|&eps| fail(eps, &e, start)).collect(),
            };
            let outputs = fitted.filter.apply(&train.features).and_then(|gtr| Ok((gtr, fitted.filter.apply(&test.features)?)));
            let (g_train, g_test) = match outputs {
                Ok(o) => o,
                Err(e) => return eps_list.iter().map(|&eps| fail(eps, &e, start)).collect(),
            };
            let fit_time = start.elapsed();
            eps_list
                .iter()
                .enumerate()
                .map(|(k, &eps)| {
                    let cell_start = Instant::now() - fit_time;
                    if unit.chain == Chain::Clean {
                        let released = Released { train: g_train.clone(), test: g_test.clone() };
                        return finish(eps, &fitted, released, cell_start);
                    }
                    let noise = match noise_for(cfg, eps, &g_train) {
                        Ok(n) => n,
                        Err(e) => return fail(eps, &e, cell_start),
                    };
                    let mut rng = derived_rng(cfg.master_seed, &noise_path(k));
                    let released = perturb_raw(&g_train, &noise, &mut rng)
                        .and_then(|train| Ok(Released { train, test: perturb_raw(&g_test, &noise, &mut rng)? }));
                    match released {
                        Ok(r) => finish(eps, &fitted, r, cell_start),
                        Err(e) => fail(eps, &e, cell_start),
                    }
                })
                .collect()
        }
        Chain::Post => eps_list
            .iter()
            .enumerate()
            .map(|(k, &eps)| {
                let cell_start = Instant::now();
                let run = || -> Result<CellResult> {
                    let noise = noise_for(cfg, eps, &train.features)?;
                    let mut rng = derived_rng(cfg.master_seed, &noise_path(k));
                    let noisy_train = train.with_features(perturb_raw(&train.features, &noise, &mut rng)?);
                    let noisy_test = perturb_raw(&test.features, &noise, &mut rng)?;
                    let fitted = fit_filter(unit.filter, &noisy_train, unit.dim, cfg, init_seed)?;
                    let released = Released {
                        train: fitted.filter.apply(&noisy_train.features)?,
                        test: fitted.filter.apply(&noisy_test)?,
                    };
                    Ok(finish(eps, &fitted, released, cell_start))
                };
                run().unwrap_or_else(|e| fail(eps, &e, cell_start))
            })
            .collect(),
    }
}

/// Runs the full grid. Failures are recorded per cell and do not stop the run.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<EvalReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("experiment dataset is empty".into()));
    }
    let mut units = Vec::new();
    for (filter_idx, &filter) in cfg.filters.iter().enumerate() {
        for (dim_idx, &dim) in cfg.dims.iter().enumerate() {
            if filter == FilterSpec::Raw && dim_idx > 0 {
                continue;
            }
            let dim = if filter == FilterSpec::Raw { data.dim() } else { dim };
            for (chain_idx, &chain) in cfg.chains.iter().enumerate() {
                for trial in 0..cfg.trials {
                    units.push(Unit { filter_idx, filter, dim_idx, dim, chain_idx, chain, trial });
                }
            }
        }
    }
    let cells = units.par_iter().map(|&u| run_unit(u, cfg, data)).collect::<Vec<_>>().concat();
    Ok(EvalReport { schema_version: SCHEMA_VERSION, cells })
}

/// Writes `cells.jsonl` (one record per cell) and `summary.csv` into `dir`.
pub fn export_results(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    if report.cells.is_empty() {
        return Err(Error::EmptyData("report has no cells".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(dir.join("cells.jsonl"))?);
    for cell in &report.cells {
        let mut value = serde_json::to_value(cell)?;
        value["schema_version"] = report.schema_version.into();
        writeln!(jsonl, "{value}")?;
    }
    jsonl.flush()?;

    let mut csv = csv::Writer::from_path(dir.join("summary.csv"))?;
    csv.write_record([
        "schema_version",
        "filter",
        "chain",
        "dim",
        "epsilon_inverse",
        "trials",
        "failures",
        "target_mean",
        "target_std",
        "private_mean",
        "private_std",
        "tradeoff_mean",
        "target_chance",
        "private_chance",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in report.summary() {
        csv.write_record([
            report.schema_version.to_string(),
            r.filter.name().to_string(),
            format!("{:?}", r.chain).to_lowercase(),
            r.dim.to_string(),
            format!("{:?}", r.epsilon_inverse),
            r.trials.to_string(),
            r.failures.to_string(),
            opt(r.target_mean),
            opt(r.target_std),
            format!("{:?}", r.private_mean),
            format!("{:?}", r.private_std),
            opt(r.tradeoff_mean),
            opt(r.target_chance),
            format!("{:?}", r.private_chance),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads back `cells.jsonl`.
pub fn load_cells(path: impl AsRef<Path>) -> Result<EvalReport> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut cells = Vec::new();
    let mut version = SCHEMA_VERSION;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        if let Some(v) = value.get("schema_version").and_then(|v| v.as_u64()) {
            version = v as u32;
        }
        cells.push(serde_json::from_value(value)?);
    }
    Ok(EvalReport { schema_version: version, cells })
}

/// Mean per-sample joint loss `-sum_i kappa_i l_priv^i + rho sum_j rho_j l_util^j`
/// (unregularized) on the training and a held-out set, using the filter and
/// heads from a finished training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLossGap {
    pub train_loss: f64,
    pub test_loss: f64,
}

impl JointLossGap {
    pub fn gap(&self) -> f64 {
        (self.test_loss - self.train_loss).abs()
    }
}

pub fn joint_loss_gap(report: &TrainReport, cfg: &TradeoffConfig, train: &Dataset, test: &Dataset) -> Result<JointLossGap> {
    let loss = |data: &Dataset| -> Result<f64> {
        let g = report.filter.apply(&data.features)?;
        let n_priv = cfg.private_tasks.len();
        let mut total = 0.0;
        for (i, (task, head)) in cfg.private_tasks.iter().chain(&cfg.utility_tasks).zip(&report.final_objective.heads).enumerate() {
            let FittedHead::Softmax(h) = head else {
                return Err(Error::InvalidArgument("joint loss gap needs softmax tasks".into()));
            };
            let labels = match task.task {
                Task::Softmax { labels: LabelSource::Private } => &data.private_labels,
                Task::Softmax { labels: LabelSource::Target } => data.target()?,
                _ => return Err(Error::InvalidArgument("joint loss gap needs softmax tasks".into())),
            };
            let plain = SoftmaxHead { reg_lambda: 0.0, ..h.clone() };
            let risk = softmax_risk(&plain, &g, labels)?.risk;
            total += if i < n_priv { -task.weight * risk } else { cfg.rho * task.weight * risk };
        }
        Ok(total)
    };
    Ok(JointLossGap { train_loss: loss(train)?, test_loss: loss(test)? })
}
