use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Method, SimConfig};
use super::dump::write_frame_dump;
use super::metrics::{nmse_ratio, ratio_to_db, symbol_errors};
use crate::baselines::{genie_detect, kf_track, lmmse_receiver};
use crate::block::{run_block, run_block_from};
use crate::channel::{generate_frame, ChannelFrame};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, CMatrix};
use crate::online::{run_frame_interleaved, OnlineOutput};

/// Aggregated result of one method at one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub snr_db: f64,
    pub ser: f64,
    /// Binomial standard error of `ser`.
    pub ser_stderr: f64,
    pub nmse_db: f64,
    /// Final correlation estimate averaged over users and trials; NaN for
    /// receivers that do not estimate it.
    pub eta_mean: f64,
    /// Trial- and user-averaged `|⟨ν⟩(1 − ⟨η⟩²) − 1|`; NaN unless the
    /// receiver estimates `ν`.
    pub nu_consistency: f64,
    pub trials: usize,
    /// Zero unless timing was requested, so results stay reproducible.
    pub wall_time_s: f64,
}

/// Per-user and per-trial breakdown behind a [`MetricsRow`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointDetail {
    pub method: String,
    pub snr_db: f64,
    /// Trial-averaged final correlation estimate of each user.
    pub eta_per_user: Option<Vec<f64>>,
    /// Trial-averaged `|⟨ν⟩(1 − ⟨η⟩²) − 1|` of each user.
    pub nu_consistency_per_user: Option<Vec<f64>>,
    /// Symbol errors of each trial, in trial order.
    pub trial_errors: Vec<usize>,
    /// Data symbols per trial.
    pub symbols_per_trial: usize,
    /// NMSE ratio of each trial.
    pub trial_nmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub details: Vec<PointDetail>,
}

impl ExperimentReport {
    pub fn row(&self, method: &str, snr_db: f64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.snr_db == snr_db)
    }

    pub fn detail(&self, method: &str, snr_db: f64) -> Option<&PointDetail> {
        self.details.iter().find(|d| d.method == method && d.snr_db == snr_db)
    }
}

/// How trials are scheduled. Results are identical in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    /// Trials spread over the rayon pool; falls back to sequential when the
    /// `parallel` feature is off.
    Parallel,
    Sequential,
}

impl Default for ExecutionMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecutionMode::Parallel
        } else {
            ExecutionMode::Sequential
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub mode: ExecutionMode,
    /// Record per-method wall time.
    pub timing: bool,
    /// Write every generated frame here.
    pub dump_dir: Option<PathBuf>,
}

struct MethodTrial {
    errors: usize,
    count: usize,
    nmse: f64,
    eta: Option<Vec<f64>>,
    nu_consistency: Option<Vec<f64>>,
    elapsed: f64,
}

/// Runs every method of `cfg` on `cfg.trials` paired frames per SNR point.
pub fn run_experiment(cfg: &SimConfig) -> Result<Vec<MetricsRow>> {
    run_experiment_with(cfg, &RunOptions::default()).map(|r| r.rows)
}

/// [`run_experiment`] with scheduling, timing and dump options, returning
/// the per-user breakdown as well.
pub fn run_experiment_with(cfg: &SimConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut per_point: Vec<(f64, Vec<Vec<MethodTrial>>)> = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let trials = map_trials(cfg.trials, opts.mode, |trial| run_trial(cfg, snr, trial, opts))?;
        per_point.push((snr, trials));
    }

    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        for (snr, trials) in &per_point {
            let label = cfg.label(method);
            let results: Vec<&MethodTrial> = trials.iter().map(|t| &t[mi]).collect();
            let (row, detail) = aggregate(&label, *snr, &results, opts.timing);
            rows.push(row);
            details.push(detail);
        }
    }
    Ok(ExperimentReport { rows, details })
}

fn map_trials<T, F>(trials: usize, mode: ExecutionMode, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecutionMode::Parallel => {
            use rayon::prelude::*;
            (0..trials).into_par_iter().map(f).collect()
        }
        _ => (0..trials).map(f).collect(),
    }
}

fn run_trial(cfg: &SimConfig, snr: f64, trial: usize, opts: &RunOptions) -> Result<Vec<MethodTrial>> {
    let seed = derive_seed(cfg.seed, &[trial as u64]);
    run_trial_inner(cfg, snr, trial, seed, opts).map_err(|e| Error::Trial {
        trial,
        seed,
        source: Box::new(e),
    })
}

fn run_trial_inner(cfg: &SimConfig, snr: f64, trial: usize, seed: u64, opts: &RunOptions) -> Result<Vec<MethodTrial>> {
    let mut frames: BTreeMap<usize, ChannelFrame> = BTreeMap::new();
    for &m in &cfg.methods {
        let sections = m.sections();
        if frames.contains_key(&sections) {
            continue;
        }
        let frame = generate_frame(seed, &cfg.frame_config(sections, snr)?)?;
        if let Some(dir) = &opts.dump_dir {
            let name = format!("snr{snr}_trial{trial:05}_l{sections}.bin");
            write_frame_dump(&dir.join(name), &frame)?;
        }
        frames.insert(sections, frame);
    }

    let r = cfg.frame_config(1, snr)?.covariances()?;
    let constellation = cfg.modulation.constellation();
    let online_cfg = cfg.online_config();
    let block_cfg = cfg.block_config();
    let reuse_warm = block_cfg.warm_start_iterations == online_cfg.iterations;
    let mut warm: Option<(OnlineOutput, f64)> = None;

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let frame = &frames[&method.sections()];
        let obs = &frame.obs;
        let start = Instant::now();
        let mut extra_time = 0.0;
        let (decisions, channel, eta, nu_consistency): (Vec<Vec<usize>>, Vec<CMatrix>, _, _) = match method {
            Method::VbOnline | Method::VbOnlineInterleaved(_) => {
                let layout = cfg.layout(method.sections())?;
                let res = run_frame_interleaved(obs, &layout, &r, frame.n0, &constellation, &online_cfg)?;
                let eta = res.final_eta().iter().map(|e| e.mean).collect();
                let out = (res.decisions(), res.channel(), Some(eta), None);
                if method == Method::VbOnline && reuse_warm {
                    warm = Some((res, start.elapsed().as_secs_f64()));
                }
                out
            }
            Method::VbBlock => {
                let res = match warm.take() {
                    Some((w, t)) => {
                        extra_time = t;
                        run_block_from(obs, &r, &constellation, &block_cfg, w)?
                    }
                    None => run_block(obs, &r, frame.n0, &constellation, &block_cfg)?,
                };
                let post = &res.posterior;
                let eta: Vec<f64> = post.eta.iter().map(|e| e.mean).collect();
                let cons = post
                    .nu
                    .iter()
                    .zip(&eta)
                    .map(|(nu, e)| (nu.mean() * (1.0 - e * e) - 1.0).abs())
                    .collect();
                let channel = res.channel();
                (res.decisions, channel, Some(eta), Some(cons))
            }
            Method::Lmmse => {
                let res = lmmse_receiver(obs, &r, frame.n0, &constellation)?;
                (res.decisions, res.channel, None, None)
            }
            Method::Kf => {
                let res = kf_track(obs, &cfg.nominal_eta(), &r, frame.n0, &constellation)?;
                (res.decisions, res.channel, None, None)
            }
            Method::Genie => {
                let decisions = genie_detect(obs, &frame.h, frame.n0, &constellation)?;
                (decisions, frame.h.clone(), None, None)
            }
        };
        out.push(finish(frame, decisions, &channel, eta, nu_consistency, start, extra_time)?);
    }
    Ok(out)
}

fn finish(
    frame: &ChannelFrame,
    decisions: Vec<Vec<usize>>,
    channel: &[CMatrix],
    eta: Option<Vec<f64>>,
    nu_consistency: Option<Vec<f64>>,
    start: Instant,
    extra_time: f64,
) -> Result<MethodTrial> {
    let elapsed = start.elapsed().as_secs_f64() + extra_time;
    let (errors, count) = symbol_errors(&decisions, &frame.symbol_idx, frame.pilot_mask())?;
    Ok(MethodTrial {
        errors,
        count,
        nmse: nmse_ratio(&frame.h, channel)?,
        eta,
        nu_consistency,
        elapsed,
    })
}

fn user_average(per_trial: Vec<&Vec<f64>>) -> Option<Vec<f64>> {
    let n = per_trial.len();
    let first = per_trial.first()?;
    let mut acc = vec![0.0; first.len()];
    for v in &per_trial {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    Some(acc.into_iter().map(|a| a / n as f64).collect())
}

fn mean_or_nan(values: Option<&Vec<f64>>) -> f64 {
    match values {
        Some(v) if !v.is_empty() => v.iter().sum::<f64>() / v.len() as f64,
        _ => f64::NAN,
    }
}

fn aggregate(label: &str, snr: f64, trials: &[&MethodTrial], timing: bool) -> (MetricsRow, PointDetail) {
    let errors: usize = trials.iter().map(|t| t.errors).sum();
    let count: usize = trials.iter().map(|t| t.count).sum();
    let ser = if count == 0 { 0.0 } else { errors as f64 / count as f64 };
    let ser_stderr = if count == 0 {
        0.0
    } else {
        (ser * (1.0 - ser) / count as f64).sqrt()
    };
    let mean_ratio = trials.iter().map(|t| t.nmse).sum::<f64>() / trials.len() as f64;
    let eta_per_user = trials
        .iter()
        .map(|t| t.eta.as_ref())
        .collect::<Option<Vec<_>>>()
        .and_then(user_average);
    let nu_per_user = trials
        .iter()
        .map(|t| t.nu_consistency.as_ref())
        .collect::<Option<Vec<_>>>()
        .and_then(user_average);
    let wall_time_s = if timing {
        trials.iter().map(|t| t.elapsed).sum()
    } else {
        0.0
    };
    let row = MetricsRow {
        method: label.to_string(),
        snr_db: snr,
        ser,
        ser_stderr,
        nmse_db: ratio_to_db(mean_ratio),
        eta_mean: mean_or_nan(eta_per_user.as_ref()),
        nu_consistency: mean_or_nan(nu_per_user.as_ref()),
        trials: trials.len(),
        wall_time_s,
    };
    let detail = PointDetail {
        method: label.to_string(),
        snr_db: snr,
        eta_per_user,
        nu_consistency_per_user: nu_per_user,
        trial_errors: trials.iter().map(|t| t.errors).collect(),
        symbols_per_trial: trials.first().map_or(0, |t| t.count),
        trial_nmse: trials.iter().map(|t| t.nmse).collect(),
    };
    (row, detail)
}
