//! The min-diff-max objective `Phi(u) = Phi_priv(u) - rho * Phi_util(u)` and
//! the alternating optimizer that descends it.
//!
//! For every evaluation point the task heads are refit to optimality, so
//! `Phi_priv(u) = sum_i kappa_i * (-min_v f_priv^i(u, v))` and
//! `Phi_util(u) = sum_j rho_j * (-min_w f_util^j(u, w))`. With unique inner
//! minimizers the chained head gradients give `-grad Phi(u)` exactly.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::filters::FilterState;
use crate::heads::{
    fit_reconstruction, fit_softmax, one_hot, reconstruction_risk, softmax_risk, ReconstructionHead, SoftmaxHead,
    DEFAULT_LAMBDA,
};
use crate::optim::SolverOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Private,
    Target,
}

/// Loss family and supervision of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "kebab-case")]
pub enum Task {
    /// Multinomial logistic regression on a label column.
    Softmax { labels: LabelSource },
    /// Least-squares regression onto one-hot labels, no intercept.
    LeastSquares { labels: LabelSource },
    /// Affine least-squares reconstruction of the raw features.
    Reconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedTask {
    pub task: Task,
    pub weight: f64,
    pub reg_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub armijo: f64,
    /// Start each search at twice the previously accepted step instead of
    /// `initial_step`.
    pub grow: bool,
    pub max_step: f64,
    /// Caps the trial step so that `step * ||q|| <= max_relative_step * ||u||`;
    /// zero disables the cap.
    pub max_relative_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, initial_step: 1.0, max_backtracks: 30, armijo: 1e-4, grow: true, max_step: 1e6, max_relative_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub rho: f64,
    pub private_tasks: Vec<WeightedTask>,
    pub utility_tasks: Vec<WeightedTask>,
    pub max_iter: usize,
    pub line_search: LineSearch,
    /// Stop after `patience` consecutive iterations improving `Phi` by less
    /// than this.
    pub convergence_tol: f64,
    pub patience: usize,
    /// Stop when the descent direction norm is at most this.
    pub grad_tol: f64,
    pub inner: SolverOptions,
}

impl TradeoffConfig {
    /// One private and one utility task with unit weights.
    pub fn single(private: Task, utility: Task, rho: f64, reg_lambda: f64) -> Self {
        Self::multi(
            vec![(private, 1.0)],
            vec![(utility, 1.0)],
            reg_lambda,
        )
        .with_rho(rho)
    }

    /// Weighted task lists; the overall tradeoff `rho` is 1 so the per-task
    /// weights carry the balance.
    pub fn multi(private: Vec<(Task, f64)>, utility: Vec<(Task, f64)>, reg_lambda: f64) -> Self {
        let wrap = |v: Vec<(Task, f64)>| {
            v.into_iter().map(|(task, weight)| WeightedTask { task, weight, reg_lambda }).collect()
        };
        Self {
            rho: 1.0,
            private_tasks: wrap(private),
            utility_tasks: wrap(utility),
            max_iter: 200,
            line_search: LineSearch::default(),
            convergence_tol: 1e-6,
            patience: 3,
            grad_tol: 1e-9,
            inner: SolverOptions::default(),
        }
    }

    /// Softmax adversary on the private labels against a softmax analyst on
    /// the target labels.
    pub fn classification(rho: f64) -> Self {
        Self::single(
            Task::Softmax { labels: LabelSource::Private },
            Task::Softmax { labels: LabelSource::Target },
            rho,
            DEFAULT_LAMBDA,
        )
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument("rho must be positive".into()));
        }
        if self.private_tasks.is_empty() {
            return Err(Error::InvalidArgument("at least one private task is required".into()));
        }
        for t in self.private_tasks.iter().chain(&self.utility_tasks) {
            if !(t.weight > 0.0) || !(t.reg_lambda >= 0.0) {
                return Err(Error::InvalidArgument("task weights must be positive and lambdas non-negative".into()));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) || !(ls.initial_step > 0.0) {
            return Err(Error::InvalidArgument("line search needs shrink in (0,1) and a positive step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedHead {
    Softmax(SoftmaxHead),
    Regression(ReconstructionHead),
}

/// `Phi` and its parts at one filter, with the heads that realise it.
/// `heads` lists private tasks first, then utility tasks.
#[derive(Debug, Clone)]
pub struct Objective {
    pub phi: f64,
    pub phi_priv: f64,
    pub phi_util: f64,
    pub task_risks: Vec<f64>,
    pub heads: Vec<FittedHead>,
    pub inner_iterations: usize,
}

enum Supervision<'a> {
    Classes(&'a [usize], usize),
    Matrix(DMatrix<f64>),
}

struct PreparedTask<'a> {
    spec: WeightedTask,
    supervision: Supervision<'a>,
}

fn labels_of(data: &Dataset, src: LabelSource) -> Result<(&[usize], usize)> {
    match src {
        LabelSource::Private => Ok((&data.private_labels, data.num_private_classes)),
        LabelSource::Target => Ok((data.target()?, data.num_target_classes)),
    }
}

fn prepare<'a>(data: &'a Dataset, cfg: &TradeoffConfig) -> Result<Vec<PreparedTask<'a>>> {
    cfg.private_tasks
        .iter()
        .chain(&cfg.utility_tasks)
        .map(|&spec| {
            let supervision = match spec.task {
                Task::Softmax { labels } => {
                    let (l, k) = labels_of(data, labels)?;
                    Supervision::Classes(l, k)
                }
                Task::LeastSquares { labels } => {
                    let (l, k) = labels_of(data, labels)?;
                    Supervision::Matrix(one_hot(l, k))
                }
                Task::Reconstruction => Supervision::Matrix(data.features.clone()),
            };
            Ok(PreparedTask { spec, supervision })
        })
        .collect()
}

fn fit_task(
    task: &PreparedTask<'_>,
    g: &DMatrix<f64>,
    inner: SolverOptions,
    warm: Option<&FittedHead>,
) -> Result<(FittedHead, f64, usize)> {
    match (&task.supervision, task.spec.task) {
        (Supervision::Classes(labels, k), _) => {
            let warm = match warm {
                Some(FittedHead::Softmax(h)) => Some(h),
                _ => None,
            };
            let (head, stats) = fit_softmax(g, labels, *k, task.spec.reg_lambda, inner, warm)?;
            Ok((FittedHead::Softmax(head), stats.risk, stats.iterations))
        }
        (Supervision::Matrix(targets), kind) => {
            let intercept = matches!(kind, Task::Reconstruction);
            let head = fit_reconstruction(g, targets, task.spec.reg_lambda, intercept)?;
            let risk = reconstruction_risk(&head, g, targets)?.risk;
            Ok((FittedHead::Regression(head), risk, 0))
        }
    }
}

fn evaluate(
    u: &FilterState,
    data: &Dataset,
    tasks: &[PreparedTask<'_>],
    cfg: &TradeoffConfig,
    warm: Option<&[FittedHead]>,
) -> Result<Objective> {
    let g = u.apply(&data.features)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("filter output is non-finite".into()));
    }
    let fits: Vec<Result<(FittedHead, f64, usize)>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| fit_task(t, &g, cfg.inner, warm.and_then(|w| w.get(i))))
        .collect();
    let mut heads = Vec::with_capacity(tasks.len());
    let mut task_risks = Vec::with_capacity(tasks.len());
    let mut inner_iterations = 0;
    for fit in fits {
        let (head, risk, iters) = fit?;
        heads.push(head);
        task_risks.push(risk);
        inner_iterations += iters;
    }
    let n_priv = cfg.private_tasks.len();
    let phi_priv: f64 = tasks[..n_priv].iter().zip(&task_risks).map(|(t, r)| t.spec.weight * -r).sum();
    let phi_util: f64 = tasks[n_priv..].iter().zip(&task_risks[n_priv..]).map(|(t, r)| t.spec.weight * -r).sum();
    let phi = phi_priv - cfg.rho * phi_util;
    Ok(Objective { phi, phi_priv, phi_util, task_risks, heads, inner_iterations })
}

/// Fits every task head on `g(X; u)` from a cold start and returns `Phi`.
pub fn joint_objective(u: &FilterState, data: &Dataset, cfg: &TradeoffConfig) -> Result<Objective> {
    cfg.validate()?;
    let tasks = prepare(data, cfg)?;
    evaluate(u, data, &tasks, cfg, None)
}

/// Like [`joint_objective`] but warm-starts iterative head fits.
pub fn joint_objective_warm(
    u: &FilterState,
    data: &Dataset,
    cfg: &TradeoffConfig,
    warm: &[FittedHead],
) -> Result<Objective> {
    cfg.validate()?;
    let tasks = prepare(data, cfg)?;
    evaluate(u, data, &tasks, cfg, Some(warm))
}

fn direction(
    u: &FilterState,
    heads: &[FittedHead],
    data: &Dataset,
    tasks: &[PreparedTask<'_>],
    cfg: &TradeoffConfig,
) -> Result<Vec<f64>> {
    if heads.len() != tasks.len() {
        return Err(Error::Shape(format!("{} heads for {} tasks", heads.len(), tasks.len())));
    }
    let g = u.apply(&data.features)?;
    let n_priv = cfg.private_tasks.len();
    let mut upstream = DMatrix::zeros(g.nrows(), g.ncols());
    for (i, (task, head)) in tasks.iter().zip(heads).enumerate() {
        let grad = match (head, &task.supervision) {
            (FittedHead::Softmax(h), Supervision::Classes(labels, _)) => softmax_risk(h, &g, labels)?.grad_features,
            (FittedHead::Regression(h), Supervision::Matrix(t)) => reconstruction_risk(h, &g, t)?.grad_features,
            _ => return Err(Error::Shape(format!("head {i} does not match its task"))),
        };
        let coeff = if i < n_priv { task.spec.weight } else { -cfg.rho * task.spec.weight };
        upstream += grad * coeff;
    }
    u.param_grad(&data.features, &upstream)
}

/// `q = sum_i kappa_i grad_u f_priv^i - rho sum_j rho_j grad_u f_util^j`
/// evaluated at the given heads.
pub fn descent_direction(
    u: &FilterState,
    heads: &[FittedHead],
    data: &Dataset,
    cfg: &TradeoffConfig,
) -> Result<Vec<f64>> {
    let tasks = prepare(data, cfg)?;
    direction(u, heads, data, &tasks, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Objective at the start of the iteration.
    pub phi: f64,
    pub phi_priv: f64,
    pub phi_util: f64,
    /// Accepted step, zero when no step was taken.
    pub step: f64,
    pub backtracks: usize,
    pub inner_iterations: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    SlowProgress,
    Stationary,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub filter: FilterState,
    pub final_objective: Objective,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn final_phi(&self) -> f64 {
        self.final_objective.phi
    }

    /// `Phi` at every iterate, including the final one.
    pub fn phi_trace(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.phi).collect();
        v.push(self.final_phi());
        v
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            let mut value = serde_json::to_value(r)?;
            value["schema_version"] = SCHEMA_VERSION.into();
            writeln!(out, "{value}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Alternating minimax descent: refit heads, step along the chained head
/// gradient with Armijo backtracking, repeat until `max_iter`, stationarity,
/// or `patience` consecutive iterations of negligible progress. Line-search
/// failure ends the run unconverged with the current state.
pub fn train_minimax(init: &FilterState, data: &Dataset, cfg: &TradeoffConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if init.input_dim() != data.dim() {
        return Err(Error::Shape(format!("filter input dim {} vs data dim {}", init.input_dim(), data.dim())));
    }
    let tasks = prepare(data, cfg)?;
    let ls = cfg.line_search;
    let mut u = init.clone();
    let mut current = evaluate(&u, data, &tasks, cfg, None)?;
    let mut records = Vec::new();
    let mut slow = 0;
    let mut last_step = ls.initial_step;
    let mut stop_reason = StopReason::MaxIterations;
    let mut converged = false;

    for iter in 1..=cfg.max_iter {
        let q = direction(&u, &current.heads, data, &tasks, cfg)?;
        let q_sq: f64 = q.iter().map(|v| v * v).sum();
        let mut record = IterationRecord {
            iter,
            phi: current.phi,
            phi_priv: current.phi_priv,
            phi_util: current.phi_util,
            step: 0.0,
            backtracks: 0,
            inner_iterations: current.inner_iterations,
            grad_norm: q_sq.sqrt(),
        };
        if record.grad_norm <= cfg.grad_tol {
            records.push(record);
            stop_reason = StopReason::Stationary;
            converged = true;
            break;
        }

        let mut step = if ls.grow && iter > 1 { (last_step / ls.shrink).min(ls.max_step) } else { ls.initial_step };
        if ls.max_relative_step > 0.0 {
            let u_norm = u.params().iter().map(|v| v * v).sum::<f64>().sqrt();
            if u_norm > 0.0 {
                step = step.min(ls.max_relative_step * u_norm / record.grad_norm);
            }
        }
        let mut accepted = None;
        for backtrack in 0..=ls.max_backtracks {
            let candidate = u.stepped(&q, step)?;
            if let Ok(obj) = evaluate(&candidate, data, &tasks, cfg, Some(&current.heads)) {
                if obj.phi.is_finite() && obj.phi < current.phi - ls.armijo * step * q_sq {
                    record.backtracks = backtrack;
                    accepted = Some((candidate, obj));
                    break;
                }
            }
            step *= ls.shrink;
        }
        let Some((next_u, next)) = accepted else {
            record.backtracks = ls.max_backtracks;
            records.push(record);
            stop_reason = StopReason::LineSearchFailed;
            break;
        };
        record.step = step;
        last_step = step;
        records.push(record);
        let decrease = current.phi - next.phi;
        u = next_u;
        current = next;
        if decrease < cfg.convergence_tol {
            slow += 1;
            if slow >= cfg.patience {
                stop_reason = StopReason::SlowProgress;
                converged = true;
                break;
            }
        } else {
            slow = 0;
        }
    }

    Ok(TrainReport { records, filter: u, final_objective: current, converged, stop_reason })
}
