//! Training loop with validation, checkpointing and resume.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, ResultExt};
use crate::graph::{bind_params, forward_eval, forward_on_tape, init_weights, GraphSpec, NetworkConfig, Weights};
use crate::imaging::metrics::{psnr, psnr_mu};
use crate::imaging::radiometry::{DEFAULT_GAMMA, DEFAULT_MU};
use crate::imaging::ExposureStack;
use crate::synth::{crop_patches, Augment};
use crate::tensor::Tensor;
use crate::train::adam::Adam;
use crate::train::checkpoint::TrainState;
use crate::train::loss::{l1_tonemapped_loss, l1_tonemapped_value};
use crate::train::schedule::ScheduleSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetworkConfig,
    /// Epoch count is `schedule.total_epochs()`.
    pub schedule: ScheduleSpec,
    pub batch: usize,
    /// Square training crop size; 0 trains on whole stacks.
    pub patch: usize,
    /// Stop after this many optimiser steps, even mid-epoch.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub mu: f32,
    pub gamma: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetworkConfig::tiny(),
            schedule: ScheduleSpec::default(),
            batch: 4,
            patch: 0,
            max_steps: None,
            seed: 0,
            mu: DEFAULT_MU,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    /// Linear-domain PSNR with the ground-truth maximum as peak.
    pub psnr: f64,
    pub psnr_mu: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub params: u64,
    pub train_samples: usize,
    pub val_stacks: usize,
    /// `(global step, loss)` for every step run in this invocation.
    pub step_losses: Vec<(u64, f64)>,
    /// Validation metrics before the first step of this invocation.
    pub initial_val: Option<ValMetrics>,
    pub epochs: Vec<EpochRecord>,
    pub best_psnr_mu: Option<f64>,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub total_steps: u64,
    pub seconds: f64,
}

#[derive(Default)]
pub struct FitOptions<'a> {
    /// `best.ckpt`, `last.ckpt` and `report.json` are written here.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<TrainState>,
    /// Evaluate the loss over the whole training set before and after.
    pub eval_train: bool,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

pub struct FitOutcome {
    pub report: TrainReport,
    pub state: TrainState,
}

/// Network inputs and target for one training sample.
struct Sample {
    inputs: [Tensor; 3],
    gt: Tensor,
}

fn to_sample(stack: &ExposureStack, gamma: f32) -> Result<Sample> {
    let gt = stack
        .gt
        .clone()
        .ok_or_else(|| Error::Dataset("training stack has no ground truth".into()))?;
    Ok(Sample {
        inputs: stack.network_inputs(gamma)?,
        gt,
    })
}

fn build_pool(cfg: &TrainConfig, train: &[ExposureStack]) -> Result<Vec<Sample>> {
    let mut pool = Vec::new();
    for (i, s) in train.iter().enumerate() {
        let parts = if cfg.patch == 0 {
            vec![s.clone()]
        } else {
            crop_patches(s, cfg.patch, cfg.patch).context_with(|| format!("training stack {i}"))?
        };
        for p in &parts {
            pool.push(to_sample(p, cfg.gamma)?);
        }
    }
    if pool.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    Ok(pool)
}

/// Sample order and augmentations for one epoch, split into batches.
fn epoch_plan(
    rng: &mut ChaCha8Rng,
    pool: &[Sample],
    fraction: f64,
    batch: usize,
) -> Vec<Vec<(usize, Augment)>> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    let k = ((pool.len() as f64 * fraction).round() as usize).clamp(1, pool.len());
    idx.truncate(k);
    let picks: Vec<(usize, Augment)> = idx
        .into_iter()
        .map(|i| {
            let s = pool[i].gt.shape();
            let choices = if s.h == s.w { 4 } else { 3 };
            (i, Augment::ALL[rng.gen_range(0..choices)])
        })
        .collect();
    picks.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

fn assemble(pool: &[Sample], batch: &[(usize, Augment)]) -> Result<([Tensor; 3], Tensor)> {
    let mut ins: [Vec<Tensor>; 3] = Default::default();
    let mut gts = Vec::with_capacity(batch.len());
    for &(i, a) in batch {
        for (k, slot) in ins.iter_mut().enumerate() {
            slot.push(a.apply_tensor(&pool[i].inputs[k])?);
        }
        gts.push(a.apply_tensor(&pool[i].gt)?);
    }
    let stack = |v: &Vec<Tensor>| Tensor::stack_batch(&v.iter().collect::<Vec<_>>());
    Ok(([stack(&ins[0])?, stack(&ins[1])?, stack(&ins[2])?], stack(&gts)?))
}

/// One forward/backward pass; returns the loss and the gradient of every weight.
pub fn loss_and_grads(
    graph: &GraphSpec,
    weights: &Weights,
    inputs: &[Tensor; 3],
    gt: &Tensor,
    mu: f32,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let wv = bind_params(&mut tape, weights);
    let iv: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward_on_tape(&mut tape, graph, &wv, &iv)?;
    let (loss, _) = l1_tonemapped_loss(&mut tape, out, gt, mu)?;
    let value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (k, v) in wv {
        if let Some(g) = tape.take_grad(v)? {
            grads.insert(k, g);
        }
    }
    Ok((value, grads))
}

/// Mean metrics over `stacks` with full-size inference.
pub fn validate(graph: &GraphSpec, weights: &Weights, stacks: &[ExposureStack], mu: f32, gamma: f32) -> Result<Option<ValMetrics>> {
    if stacks.is_empty() {
        return Ok(None);
    }
    let mut acc = [0.0f64; 3];
    for (i, s) in stacks.iter().enumerate() {
        let sample = to_sample(s, gamma).context_with(|| format!("validation stack {i}"))?;
        let pred = forward_eval(graph, weights, &sample.inputs)?;
        acc[0] += psnr(&pred, &sample.gt, sample.gt.max_value())?;
        acc[1] += psnr_mu(&pred, &sample.gt, mu)?;
        acc[2] += l1_tonemapped_value(&pred, &sample.gt, mu)?;
    }
    let n = stacks.len() as f64;
    Ok(Some(ValMetrics {
        psnr: acc[0] / n,
        psnr_mu: acc[1] / n,
        loss: acc[2] / n,
    }))
}

fn pool_loss(graph: &GraphSpec, weights: &Weights, pool: &[Sample], mu: f32) -> Result<f64> {
    let mut total = 0.0;
    for s in pool {
        let pred = forward_eval(graph, weights, &s.inputs)?;
        total += l1_tonemapped_value(&pred, &s.gt, mu)?;
    }
    Ok(total / pool.len() as f64)
}

pub fn fresh_state(cfg: &TrainConfig, graph: &GraphSpec) -> TrainState {
    TrainState {
        weights: init_weights(graph, cfg.net.leaky_slope, cfg.seed),
        adam: Adam::default(),
        step: 0,
        epoch: 0,
        step_in_epoch: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        best_psnr_mu: f64::NEG_INFINITY,
    }
}

fn save_report(dir: &Path, report: &TrainReport) -> Result<()> {
    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&path, e))
}

pub fn fit(cfg: &TrainConfig, train: &[ExposureStack], val: &[ExposureStack], opts: FitOptions) -> Result<FitOutcome> {
    let FitOptions {
        out_dir,
        resume,
        eval_train,
        mut on_epoch,
    } = opts;
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let started = Instant::now();
    let graph = cfg.net.build();
    let pool = build_pool(cfg, train)?;
    let mut state = match resume {
        Some(s) => {
            crate::graph::check_weights(&graph, &s.weights).context_with(|| "resumed checkpoint".to_string())?;
            s
        }
        None => fresh_state(cfg, &graph),
    };
    let mut report = TrainReport {
        config: cfg.clone(),
        params: crate::graph::count_weight_values(&state.weights),
        train_samples: pool.len(),
        val_stacks: val.len(),
        step_losses: Vec::new(),
        initial_val: validate(&graph, &state.weights, val, cfg.mu, cfg.gamma)?,
        epochs: Vec::new(),
        best_psnr_mu: state.best_psnr_mu.is_finite().then_some(state.best_psnr_mu),
        initial_train_loss: None,
        final_train_loss: None,
        total_steps: state.step,
        seconds: 0.0,
    };
    if eval_train {
        report.initial_train_loss = Some(pool_loss(&graph, &state.weights, &pool, cfg.mu)?);
    }

    let total = cfg.schedule.total_epochs();
    let limit_hit = |state: &TrainState| cfg.max_steps.is_some_and(|m| state.step >= m);
    while (state.epoch as usize) < total && !limit_hit(&state) {
        let epoch = state.epoch as usize;
        let lr = cfg.schedule.lr_at(epoch)?;
        let mut rng = state.rng.clone();
        let plan = epoch_plan(&mut rng, &pool, cfg.schedule.data_fraction(epoch)?, cfg.batch);
        let mut losses = Vec::new();
        for b in plan.iter().skip(state.step_in_epoch as usize) {
            if limit_hit(&state) {
                break;
            }
            let (inputs, gt) = assemble(&pool, b)?;
            let (loss, grads) = loss_and_grads(&graph, &state.weights, &inputs, &gt, cfg.mu)
                .context_with(|| format!("step {}", state.step))?;
            state.adam.step(&mut state.weights, &grads, lr)?;
            state.step += 1;
            state.step_in_epoch += 1;
            report.step_losses.push((state.step, loss));
            losses.push(loss);
        }
        if (state.step_in_epoch as usize) < plan.len() {
            // stopped mid-epoch
            break;
        }
        state.rng = rng;
        state.epoch += 1;
        state.step_in_epoch = 0;
        let metrics = validate(&graph, &state.weights, val, cfg.mu, cfg.gamma)?;
        let record = EpochRecord {
            epoch,
            phase: cfg.schedule.phase(epoch)?,
            lr,
            steps: losses.len(),
            mean_loss: if losses.is_empty() {
                f64::NAN
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            },
            val: metrics,
        };
        if let Some(m) = metrics {
            if m.psnr_mu > state.best_psnr_mu {
                state.best_psnr_mu = m.psnr_mu;
                report.best_psnr_mu = Some(m.psnr_mu);
                if let Some(dir) = &out_dir {
                    state.save(&dir.join("best.ckpt"))?;
                }
            }
        }
        if let Some(f) = on_epoch.as_mut() {
            f(&record);
        }
        report.epochs.push(record);
        if let Some(dir) = &out_dir {
            state.save(&dir.join("last.ckpt"))?;
        }
    }

    if let Some(dir) = &out_dir {
        state.save(&dir.join("last.ckpt"))?;
    }
    if eval_train {
        report.final_train_loss = Some(pool_loss(&graph, &state.weights, &pool, cfg.mu)?);
    }
    report.total_steps = state.step;
    report.seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = &out_dir {
        save_report(dir, &report)?;
    }
    Ok(FitOutcome { report, state })
}
