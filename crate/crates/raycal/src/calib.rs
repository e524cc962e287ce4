//! Calibration: loss, measurement-scale tracking, the training loop and
//! the evaluation metrics. The loss compares RMS delay spread and total
//! channel gain between measured and ray-traced impulse responses; both
//! are robust to the global time offset of real measurements.
//!
//! Tap indexing convention: CIR taps are in natural delay order
//! l = 0..N-1 (the IDFT is periodic; negative delays are non-physical
//! after alignment). Evaluation reports state this convention.

use crate::ad::{AdError, CVar, Tape, Var};
use crate::field::{
    cir_apply_kernels, path_coefficient, path_kernels, WaveformConfig,
};
use crate::geom::{v3, Vec3};
use crate::params::{ParamGroup, ParamModel, Realized};
use crate::tracer::PathSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::{Barrier, Mutex};
use thiserror::Error;

// ---------------------------------------------------------------------
// Dataset records

/// One measurement: transmitter position, receive-antenna index and the
/// measured CIR in natural tap order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: usize,
    pub tx: [f64; 3],
    pub rx: usize,
    pub cir: Vec<[f64; 2]>,
}

impl DatasetRecord {
    pub fn tx_pos(&self) -> Vec3 {
        v3(self.tx[0], self.tx[1], self.tx[2])
    }

    pub fn validate(&self, n_sub: usize) -> Result<(), String> {
        if self.cir.len() != n_sub {
            return Err(format!(
                "record {}: CIR has {} taps, waveform expects {}",
                self.id,
                self.cir.len(),
                n_sub
            ));
        }
        if self
            .cir
            .iter()
            .any(|t| !t[0].is_finite() || !t[1].is_finite())
            || self.tx.iter().any(|x| !x.is_finite())
        {
            return Err(format!("record {}: non-finite values", self.id));
        }
        Ok(())
    }
}

/// Cyclically shifts a measured CIR so the first tap whose magnitude
/// exceeds 1/100 of the peak lands on l = 0.
pub fn align_cir(taps: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mags: Vec<f64> = taps.iter().map(|t| t[0].hypot(t[1])).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return taps.to_vec();
    }
    let first = mags.iter().position(|&m| m >= peak / 100.0).unwrap_or(0);
    (0..taps.len())
        .map(|l| taps[(l + first) % taps.len()])
        .collect()
}

// ---------------------------------------------------------------------
// Loss building blocks (f64 and on-tape versions)

/// Total channel gain P = sum |h[l]|^2.
pub fn channel_gain(taps: &[[f64; 2]]) -> f64 {
    taps.iter().map(|t| t[0] * t[0] + t[1] * t[1]).sum()
}

pub fn channel_gain_var<'t>(tape: &'t Tape, taps: &[CVar<'t>]) -> Var<'t> {
    let mut p = tape.var(0.0);
    for t in taps {
        p = p + t.abs_sq();
    }
    p
}

/// RMS delay spread in seconds: second central moment of the normalized
/// power-delay profile with natural tap indices, divided by bandwidth.
pub fn rms_delay_spread(taps: &[[f64; 2]], bandwidth_hz: f64) -> f64 {
    let p: Vec<f64> = taps.iter().map(|t| t[0] * t[0] + t[1] * t[1]).collect();
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        eprintln!("warning: zero-power CIR, delay spread defined as 0");
        return 0.0;
    }
    let mean: f64 = p.iter().enumerate().map(|(l, q)| l as f64 * q).sum::<f64>() / total;
    let m2: f64 = p
        .iter()
        .enumerate()
        .map(|(l, q)| (l as f64) * (l as f64) * q)
        .sum::<f64>()
        / total;
    (m2 - mean * mean).max(0.0).sqrt() / bandwidth_hz
}

pub fn rms_delay_spread_var<'t>(
    tape: &'t Tape,
    taps: &[CVar<'t>],
    bandwidth_hz: f64,
) -> Var<'t> {
    let total = channel_gain_var(tape, taps);
    if total.value() <= 0.0 {
        return tape.var(0.0);
    }
    let mut mean = tape.var(0.0);
    let mut m2 = tape.var(0.0);
    for (l, t) in taps.iter().enumerate() {
        let q = t.abs_sq();
        mean = mean + q * l as f64;
        m2 = m2 + q * (l as f64 * l as f64);
    }
    mean = mean / total;
    m2 = m2 / total;
    (m2 - mean * mean).sqrt_guarded() / bandwidth_hz
}

/// Symmetric mean absolute percentage error |x-y|/(x+y) in [0,1].
pub fn smape(x: f64, y: f64) -> f64 {
    assert!(x >= 0.0 && y >= 0.0);
    if x + y == 0.0 {
        return 0.0;
    }
    (x - y).abs() / (x + y)
}

/// SMAPE with a constant reference; differentiable w.r.t. x.
pub fn smape_var<'t>(tape: &'t Tape, x: Var<'t>, y: f64) -> Var<'t> {
    if x.value() + y == 0.0 {
        return tape.var(0.0);
    }
    (x - y).abs() / (x + y)
}

/// Per-example loss: delay-spread SMAPE plus power SMAPE against a
/// measured CIR pre-scaled by alpha. Returns (total, delay, power).
pub fn example_loss<'t>(
    tape: &'t Tape,
    predicted: &[CVar<'t>],
    measured: &[[f64; 2]],
    bandwidth_hz: f64,
    alpha: f64,
) -> (Var<'t>, Var<'t>, Var<'t>) {
    assert_eq!(predicted.len(), measured.len());
    let tau_meas = rms_delay_spread(measured, bandwidth_hz);
    let p_meas = channel_gain(measured) * alpha;
    let tau_hat = rms_delay_spread_var(tape, predicted, bandwidth_hz);
    let p_hat = channel_gain_var(tape, predicted);
    let delay = smape_var(tape, tau_hat, tau_meas);
    let power = smape_var(tape, p_hat, p_meas);
    (delay + power, delay, power)
}

// ---------------------------------------------------------------------
// Measurement scale

/// Closed-form least-squares scale: argmin_a sum (a P_b - Phat_b)^2.
pub fn estimate_scale_batch(p_meas: &[f64], p_pred: &[f64]) -> Result<f64, String> {
    assert_eq!(p_meas.len(), p_pred.len());
    let num: f64 = p_meas.iter().zip(p_pred).map(|(p, q)| p * q).sum();
    let den: f64 = p_meas.iter().map(|p| p * p).sum();
    if den <= 0.0 {
        return Err("all measured powers are zero".into());
    }
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ScalingState {
    pub alpha: Option<f64>,
    pub iteration: usize,
}

impl ScalingState {
    /// EMA update; the first estimate initializes the average.
    pub fn update(&mut self, alpha_hat: f64, decay: f64) -> f64 {
        assert!(alpha_hat > 0.0);
        let next = match self.alpha {
            None => alpha_hat,
            Some(a) => decay * a + (1.0 - decay) * alpha_hat,
        };
        self.alpha = Some(next);
        self.iteration += 1;
        next
    }

    pub fn current(&self) -> f64 {
        self.alpha.unwrap_or(1.0)
    }
}

// ---------------------------------------------------------------------
// Optimizer

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One update; masked-out entries keep their moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], mask: &[bool]) {
        assert!(params.len() == grads.len() && grads.len() == mask.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

// ---------------------------------------------------------------------
// Training configuration and loop

fn default_threads() -> usize {
    0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// EMA decay delta for the measurement scale.
    pub ema_decay: f64,
    pub iterations: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Validate every this many iterations; early-stop patience counts
    /// validations without improvement.
    pub val_interval: usize,
    pub patience: usize,
    /// Synthetic mode: alpha fixed to 1, no scale estimation.
    pub synthetic: bool,
    /// Resample random diffuse phases chi each iteration.
    pub random_phases: bool,
    /// 0 = use all available cores.
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub train_materials: bool,
    pub train_antenna: bool,
    pub train_scattering: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            learning_rate: 0.01,
            ema_decay: 0.9,
            iterations: 5000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            val_interval: 50,
            patience: 20,
            synthetic: true,
            random_phases: false,
            threads: 0,
            train_materials: true,
            train_antenna: true,
            train_scattering: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return Err("learning rate must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err("ema decay must be in [0, 1)".into());
        }
        Ok(())
    }

    fn worker_count(&self, jobs: usize) -> usize {
        let hw = if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        };
        hw.max(1).min(jobs.max(1))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LossRow {
    pub iteration: usize,
    pub loss: f64,
    pub delay_term: f64,
    pub power_term: f64,
    pub alpha: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iteration} (example {example}): {source}")]
    NonFinite {
        iteration: usize,
        example: usize,
        source: AdError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
}

pub struct TrainResult {
    pub history: Vec<LossRow>,
    pub val_history: Vec<(usize, f64)>,
    pub best_val: f64,
    pub iterations_run: usize,
    pub final_alpha: f64,
}

/// Precomputed per-record tracing products: the paths and the
/// geometry-only CIR kernels.
pub struct TracedRecord {
    pub paths: PathSet,
    pub kernels: Vec<Vec<(f64, f64)>>,
    pub delays: Vec<f64>,
}

pub fn prepare_traced(paths: PathSet, wf: &WaveformConfig) -> TracedRecord {
    let delays: Vec<f64> = paths.paths.iter().map(|p| p.delay()).collect();
    let kernels = path_kernels(&delays, wf);
    TracedRecord {
        paths,
        kernels,
        delays,
    }
}

/// Forward model: predicted natural-order CIR taps for one record.
pub fn predict_taps<'t>(
    tape: &'t Tape,
    realized: &Realized<'t>,
    traced: &TracedRecord,
    wf: &WaveformConfig,
    chi: &[(f64, f64)],
) -> Vec<CVar<'t>> {
    let lambda = wf.wavelength();
    let coeffs: Vec<CVar<'t>> = traced
        .paths
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            path_coefficient(
                tape,
                p,
                &realized.antenna,
                &realized.antenna,
                realized,
                lambda,
                chi[i],
            )
        })
        .collect();
    cir_apply_kernels(tape, &coeffs, &traced.kernels, wf.subcarriers)
}

fn chi_for(cfg: &TrainingConfig, iteration: usize, record_id: usize, n: usize) -> Vec<(f64, f64)> {
    if !cfg.random_phases {
        return vec![(0.0, 0.0); n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (iteration as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ record_id as u64,
    );
    (0..n)
        .map(|_| {
            (
                rng.gen::<f64>() * std::f64::consts::TAU,
                rng.gen::<f64>() * std::f64::consts::TAU,
            )
        })
        .collect()
}

struct ExampleOutcome {
    grads: Vec<f64>,
    loss: f64,
    delay: f64,
    power: f64,
}

/// One parallel pass over a set of examples. Workers first run the
/// forward model (publishing predicted powers), synchronize so the
/// batch scale estimate can be formed, then build the loss and run
/// backward. Gradients are reduced in example order so results are
/// independent of thread count.
#[allow(clippy::too_many_arguments)]
fn run_batch(
    model: &ParamModel,
    wf: &WaveformConfig,
    records: &[&DatasetRecord],
    traced: &[&TracedRecord],
    cfg: &TrainingConfig,
    iteration: usize,
    scaling: &Mutex<ScalingState>,
    with_grads: bool,
) -> Result<(Vec<ExampleOutcome>, f64), TrainError> {
    let n = records.len();
    let workers = cfg.worker_count(n);
    let barrier = Barrier::new(workers);
    let powers: Mutex<Vec<f64>> = Mutex::new(vec![0.0; n]);
    let alpha_cell: Mutex<Option<f64>> = Mutex::new(None);
    let results: Mutex<Vec<Option<Result<ExampleOutcome, (usize, AdError)>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let bandwidth = wf.bandwidth();

    std::thread::scope(|s| {
        for w in 0..workers {
            let barrier = &barrier;
            let powers = &powers;
            let alpha_cell = &alpha_cell;
            let results = &results;
            s.spawn(move || {
                let mine: Vec<usize> = (w..n).step_by(workers).collect();
                let tapes: Vec<Tape> = mine.iter().map(|_| Tape::new()).collect();
                let mut partial = Vec::with_capacity(mine.len());
                for (k, &idx) in mine.iter().enumerate() {
                    let realized = model.realize(&tapes[k]);
                    let chi = chi_for(cfg, iteration, records[idx].id, traced[idx].paths.paths.len());
                    let taps = predict_taps(&tapes[k], &realized, traced[idx], wf, &chi);
                    powers.lock().unwrap()[idx] = channel_gain_var(&tapes[k], &taps).value();
                    partial.push((realized, taps));
                }
                barrier.wait();
                if w == 0 {
                    let alpha = if cfg.synthetic {
                        1.0
                    } else {
                        let p_meas: Vec<f64> =
                            records.iter().map(|r| channel_gain(&r.cir)).collect();
                        let p_pred = powers.lock().unwrap().clone();
                        match estimate_scale_batch(&p_meas, &p_pred) {
                            Ok(a_hat) if a_hat > 0.0 => {
                                scaling.lock().unwrap().update(a_hat, cfg.ema_decay)
                            }
                            _ => scaling.lock().unwrap().current(),
                        }
                    };
                    *alpha_cell.lock().unwrap() = Some(alpha);
                }
                barrier.wait();
                let alpha = alpha_cell.lock().unwrap().unwrap();
                for (k, &idx) in mine.iter().enumerate() {
                    let (realized, taps) = &partial[k];
                    let (loss, delay, power) =
                        example_loss(&tapes[k], taps, &records[idx].cir, bandwidth, alpha);
                    let outcome = if with_grads {
                        match tapes[k].backward(loss) {
                            Ok(grads) => Ok(ExampleOutcome {
                                grads: realized.leased.iter().map(|v| grads.wrt(*v)).collect(),
                                loss: loss.value(),
                                delay: delay.value(),
                                power: power.value(),
                            }),
                            Err(e) => Err((idx, e)),
                        }
                    } else if loss.value().is_finite() {
                        Ok(ExampleOutcome {
                            grads: Vec::new(),
                            loss: loss.value(),
                            delay: delay.value(),
                            power: power.value(),
                        })
                    } else {
                        // backward on a non-finite loss reports the node
                        match tapes[k].backward(loss) {
                            Err(e) => Err((idx, e)),
                            Ok(_) => unreachable!("non-finite loss passed backward"),
                        }
                    };
                    results.lock().unwrap()[idx] = Some(outcome);
                }
            });
        }
    });

    let alpha = alpha_cell.lock().unwrap().unwrap_or(1.0);
    let collected = results.into_inner().unwrap();
    let mut out = Vec::with_capacity(n);
    for slot in collected {
        match slot.expect("worker missed an example") {
            Ok(o) => out.push(o),
            Err((example, source)) => {
                return Err(TrainError::NonFinite {
                    iteration,
                    example,
                    source,
                })
            }
        }
    }
    Ok((out, alpha))
}

/// Algorithm: epoch-shuffled minibatch gradient descent with an
/// Adam-style optimizer, EMA scale tracking and early stopping on a
/// validation split. Deterministic for a fixed (seed, config, dataset).
pub fn train(
    model: &mut ParamModel,
    wf: &WaveformConfig,
    train_records: &[DatasetRecord],
    train_traced: &[TracedRecord],
    val_records: &[DatasetRecord],
    val_traced: &[TracedRecord],
    cfg: &TrainingConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if train_records.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    if train_records.len() != train_traced.len() || val_records.len() != val_traced.len() {
        return Err(TrainError::Data("records/trace length mismatch".into()));
    }
    for r in train_records.iter().chain(val_records) {
        r.validate(wf.subcarriers).map_err(TrainError::Data)?;
    }

    let mask: Vec<bool> = (0..model.store.len())
        .map(|i| match crate::params::param_group(model.store.name(i)) {
            ParamGroup::Materials => cfg.train_materials,
            ParamGroup::Antenna => cfg.train_antenna,
            ParamGroup::Scattering => cfg.train_scattering,
        })
        .collect();

    let mut adam = Adam::new(
        model.store.len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let scaling = Mutex::new(ScalingState::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_records.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_store = model.store.clone();
    let mut stale_validations = 0usize;
    let mut iterations_run = 0usize;

    for iteration in 0..cfg.iterations {
        // draw a batch without replacement within the epoch
        let mut batch_idx = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(train_records.len()) {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }
        let records: Vec<&DatasetRecord> = batch_idx.iter().map(|&i| &train_records[i]).collect();
        let traced: Vec<&TracedRecord> = batch_idx.iter().map(|&i| &train_traced[i]).collect();

        let (outcomes, alpha) =
            run_batch(model, wf, &records, &traced, cfg, iteration, &scaling, true)?;

        let b = outcomes.len() as f64;
        let mut grad = vec![0.0; model.store.len()];
        let (mut loss, mut delay, mut power) = (0.0, 0.0, 0.0);
        for o in &outcomes {
            for (g, go) in grad.iter_mut().zip(&o.grads) {
                *g += go / b;
            }
            loss += o.loss / b;
            delay += o.delay / b;
            power += o.power / b;
        }
        adam.step(model.store.values_mut(), &grad, &mask);
        iterations_run = iteration + 1;
        history.push(LossRow {
            iteration,
            loss,
            delay_term: delay,
            power_term: power,
            alpha,
        });

        if !val_records.is_empty()
            && cfg.val_interval > 0
            && (iteration + 1) % cfg.val_interval == 0
        {
            let vrecs: Vec<&DatasetRecord> = val_records.iter().collect();
            let vtr: Vec<&TracedRecord> = val_traced.iter().collect();
            let (vout, _) = run_batch(model, wf, &vrecs, &vtr, cfg, iteration, &scaling, false)?;
            let vloss = vout.iter().map(|o| o.loss).sum::<f64>() / vout.len() as f64;
            val_history.push((iteration, vloss));
            if vloss < best_val - 1e-12 {
                best_val = vloss;
                best_store = model.store.clone();
                stale_validations = 0;
            } else {
                stale_validations += 1;
                if stale_validations >= cfg.patience {
                    break;
                }
            }
        }
    }

    if best_val.is_finite() {
        model.store = best_store;
    }
    let final_alpha = scaling.lock().unwrap().current();
    Ok(TrainResult {
        history,
        val_history,
        best_val,
        iterations_run,
        final_alpha,
    })
}

pub fn write_training_log(path: &std::path::Path, rows: &[LossRow]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,loss,delay_term,power_term,alpha")?;
    for r in rows {
        writeln!(
            f,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iteration, r.loss, r.delay_term, r.power_term, r.alpha
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Evaluation metrics

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositionMetrics {
    pub id: usize,
    pub ale_db: f64,
    pub rae: f64,
    pub power_db: f64,
    pub predicted_power_db: f64,
    pub delay_spread_s: f64,
    pub predicted_delay_spread_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_ale_db: f64,
    pub std_ale_db: f64,
    pub mean_rae: f64,
    pub std_rae: f64,
    /// Sorted per-position values (empirical CDF samples).
    pub ale_cdf: Vec<f64>,
    pub rae_cdf: Vec<f64>,
    pub per_position: Vec<PositionMetrics>,
    /// Convention note: delay-spread tap index l runs 0..N-1.
    pub tap_indexing: String,
}

pub fn evaluate(
    model: &ParamModel,
    wf: &WaveformConfig,
    records: &[DatasetRecord],
    traced: &[TracedRecord],
    alpha: f64,
) -> MetricsReport {
    assert_eq!(records.len(), traced.len());
    let bandwidth = wf.bandwidth();
    let mut per_position = Vec::with_capacity(records.len());
    for (r, t) in records.iter().zip(traced) {
        let tape = Tape::new();
        let realized = model.realize(&tape);
        let chi = vec![(0.0, 0.0); t.paths.paths.len()];
        let taps = predict_taps(&tape, &realized, t, wf, &chi);
        let taps_val: Vec<[f64; 2]> = taps
            .iter()
            .map(|c| {
                let (re, im) = c.value();
                [re, im]
            })
            .collect();
        let p_meas = channel_gain(&r.cir) * alpha;
        let p_pred = channel_gain(&taps_val);
        let tau_meas = rms_delay_spread(&r.cir, bandwidth);
        let tau_pred = rms_delay_spread(&taps_val, bandwidth);
        let db = |p: f64| 10.0 * p.max(1e-300).log10();
        let ale = (db(p_meas) - db(p_pred)).abs();
        let rae = if tau_meas > 0.0 {
            (tau_meas - tau_pred).abs() / tau_meas
        } else if tau_pred == 0.0 {
            0.0
        } else {
            1.0
        };
        per_position.push(PositionMetrics {
            id: r.id,
            ale_db: ale,
            rae,
            power_db: db(p_meas),
            predicted_power_db: db(p_pred),
            delay_spread_s: tau_meas,
            predicted_delay_spread_s: tau_pred,
        });
    }
    let stats = |xs: &[f64]| {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let ales: Vec<f64> = per_position.iter().map(|p| p.ale_db).collect();
    let raes: Vec<f64> = per_position.iter().map(|p| p.rae).collect();
    let (mean_ale_db, std_ale_db) = stats(&ales);
    let (mean_rae, std_rae) = stats(&raes);
    let mut ale_cdf = ales;
    ale_cdf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rae_cdf = raes;
    rae_cdf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    MetricsReport {
        mean_ale_db,
        std_ale_db,
        mean_rae,
        std_rae,
        ale_cdf,
        rae_cdf,
        per_position,
        tap_indexing: "natural order l = 0..N-1 (IDFT index; negative delays alias upward)"
            .to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::finite_diff_check;
    use crate::geom::{MaterialSpec, Scene};
    use crate::params::{MaterialModelKind, ModelConfig};
    use crate::tracer::{trace_all, TraceConfig};

    const WF: WaveformConfig = WaveformConfig {
        carrier_hz: 3.438e9,
        subcarriers: 64,
        spacing_hz: 50e6 / 64.0,
    };

    #[test]
    fn channel_gain_cases() {
        assert_eq!(channel_gain(&[[1.0, 0.0], [0.0, 1.0]]), 2.0);
        assert_eq!(channel_gain(&[[0.0, 0.0]; 4]), 0.0);
        let h = [[0.3, -0.2], [0.1, 0.9]];
        let scaled: Vec<[f64; 2]> = h.iter().map(|t| [2.0 * t[0], 2.0 * t[1]]).collect();
        assert!((channel_gain(&scaled) - 4.0 * channel_gain(&h)).abs() < 1e-15);
    }

    #[test]
    fn rms_delay_spread_cases() {
        let w = 50e6;
        let mut h = vec![[0.0, 0.0]; 8];
        h[3] = [0.7, 0.1];
        assert_eq!(rms_delay_spread(&h, w), 0.0);
        let mut h = vec![[0.0, 0.0]; 8];
        h[0] = [1.0, 0.0];
        h[2] = [0.0, 1.0];
        assert!((rms_delay_spread(&h, w) - 1.0 / w).abs() < 1e-18);
        // scale invariance
        let h2: Vec<[f64; 2]> = h.iter().map(|t| [5.0 * t[0], 5.0 * t[1]]).collect();
        assert_eq!(rms_delay_spread(&h, w), rms_delay_spread(&h2, w));
        // zero CIR defined as 0
        assert_eq!(rms_delay_spread(&[[0.0, 0.0]; 4], w), 0.0);
    }

    #[test]
    fn smape_cases() {
        assert_eq!(smape(3.0, 3.0), 0.0);
        assert_eq!(smape(2.0, 0.0), 1.0);
        assert_eq!(smape(1.0, 3.0), 0.5);
        assert_eq!(smape(0.0, 0.0), 0.0);
    }

    #[test]
    fn example_loss_cases_and_bounds() {
        let tape = Tape::new();
        let meas: Vec<[f64; 2]> = (0..8)
            .map(|i| [0.1 * i as f64, 0.05 * (8 - i) as f64])
            .collect();
        let pred: Vec<CVar> = meas
            .iter()
            .map(|t| CVar::constant(&tape, t[0], t[1]))
            .collect();
        let (l, d, p) = example_loss(&tape, &pred, &meas, WF.bandwidth(), 1.0);
        assert!(l.value().abs() < 1e-12 && d.value().abs() < 1e-12 && p.value().abs() < 1e-12);
        // 2x amplitude: delay term 0, power smape(4P, P) = 3/5
        let pred2: Vec<CVar> = meas
            .iter()
            .map(|t| CVar::constant(&tape, 2.0 * t[0], 2.0 * t[1]))
            .collect();
        let (l, d, p) = example_loss(&tape, &pred2, &meas, WF.bandwidth(), 1.0);
        assert!(d.value().abs() < 1e-12);
        assert!((p.value() - 0.6).abs() < 1e-12);
        assert!((l.value() - 0.6).abs() < 1e-12);
        assert!(l.value() >= 0.0 && l.value() <= 2.0);
    }

    #[test]
    fn example_loss_gradcheck() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let meas: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5])
            .collect();
        let point: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let meas2 = meas.clone();
        let report = finite_diff_check(
            move |tape, xs| {
                let taps: Vec<CVar> = (0..n).map(|i| CVar::new(xs[2 * i], xs[2 * i + 1])).collect();
                let (l, _, _) = example_loss(tape, &taps, &meas2, 50e6, 1.0);
                l
            },
            &point,
            1e-6,
        );
        assert!(report.max_rel_err <= 1e-4, "{}", report.max_rel_err);
    }

    #[test]
    fn scale_estimator_closed_form_and_oracle() {
        use rand::Rng;
        assert_eq!(estimate_scale_batch(&[2.0], &[4.0]).unwrap(), 2.0);
        let p: Vec<f64> = vec![1.0, 2.0, 3.0];
        let pc: Vec<f64> = p.iter().map(|x| 2.5 * x).collect();
        assert!((estimate_scale_batch(&p, &pc).unwrap() - 2.5).abs() < 1e-15);
        assert!(estimate_scale_batch(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        // golden-section oracle on random batches
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() + 0.1).collect();
            let q: Vec<f64> = (0..16).map(|_| 3.0 * rng.gen::<f64>()).collect();
            let closed = estimate_scale_batch(&p, &q).unwrap();
            // bisection on the (monotone) derivative of the objective
            let dobj = |a: f64| -> f64 {
                p.iter().zip(&q).map(|(x, y)| 2.0 * x * (a * x - y)).sum()
            };
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dobj(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let brute = 0.5 * (lo + hi);
            assert!(
                (closed - brute).abs() <= 1e-9,
                "closed {closed} brute {brute}"
            );
        }
    }

    #[test]
    fn scale_ema_updates_and_fixed_point() {
        let mut st = ScalingState::default();
        assert_eq!(st.update(2.0, 0.9), 2.0);
        assert!((st.update(4.0, 0.9) - 2.2).abs() < 1e-15);
        // delta = 0: no smoothing
        let mut st0 = ScalingState::default();
        st0.update(1.0, 0.0);
        assert_eq!(st0.update(7.0, 0.0), 7.0);
        // geometric convergence to a constant estimate with ratio delta
        let mut st = ScalingState::default();
        let (target, delta) = (3.0, 0.9);
        st.update(1.0, delta);
        let mut prev_err = (st.current() - target).abs();
        for _ in 0..100 {
            st.update(target, delta);
            let err = (st.current() - target).abs();
            if prev_err > 1e-14 {
                assert!((err / prev_err - delta).abs() < 1e-9, "ratio {}", err / prev_err);
            }
            prev_err = err;
        }
        assert!(prev_err < 1e-4);
    }

    #[test]
    fn adam_on_convex_quadratic_is_monotone_after_warmup() {
        let target = [3.0, -1.5, 0.25, 8.0];
        let mut x = vec![0.0; 4];
        let mut adam = Adam::new(4, 0.05, 0.9, 0.999, 1e-8);
        let mask = vec![true; 4];
        let loss =
            |x: &[f64]| -> f64 { x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut prev = f64::INFINITY;
        for it in 0..600 {
            let grads: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.step(&mut x, &grads, &mask);
            let l = loss(&x);
            if it >= 50 {
                assert!(l <= prev + 1e-12, "iteration {it}: {l} > {prev}");
            }
            prev = l;
        }
        assert!(prev < 1e-2, "final loss {prev}");
    }

    #[test]
    fn align_cir_shifts_first_significant_tap() {
        let mut h = vec![[0.0, 0.0]; 8];
        h[3] = [1.0, 0.0];
        h[5] = [0.5, 0.0];
        let a = align_cir(&h);
        assert_eq!(a[0], [1.0, 0.0]);
        assert_eq!(a[2], [0.5, 0.0]);
        // below-threshold leading taps are skipped
        let mut h = vec![[0.0, 0.0]; 8];
        h[1] = [1e-5, 0.0];
        h[4] = [1.0, 0.0];
        let a = align_cir(&h);
        assert_eq!(a[0], [1.0, 0.0]);
        assert_eq!(align_cir(&[[0.0, 0.0]; 4]), vec![[0.0, 0.0]; 4]);
    }

    // -- end-to-end training smoke tests on a two-ray scene --

    fn ground_scene() -> Scene {
        let half = 60.0;
        Scene::new(
            vec![
                v3(-half, -half, 0.0),
                v3(half, -half, 0.0),
                v3(half, half, 0.0),
                v3(-half, half, 0.0),
            ],
            vec![([0, 1, 2], 0), ([0, 2, 3], 0)],
            vec![MaterialSpec::Fixed {
                name: "ground".into(),
                eps_r: 4.0,
                sigma: 0.05,
                scattering: 0.3,
                xpd: 0.2,
            }],
        )
        .unwrap()
    }

    fn make_dataset(scene: &Scene, n: usize) -> (Vec<DatasetRecord>, Vec<TracedRecord>) {
        let truth_cfg = ModelConfig {
            materials: MaterialModelKind::Scene,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth = ParamModel::init(scene, &truth_cfg, &mut rng);
        let rx = v3(25.0, 0.0, 1.5);
        let tcfg = TraceConfig {
            max_order: 1,
            sbr_rays: 2000,
            diffuse_samples: 8,
            seed: 3,
            exhaustive: true,
        };
        let mut records = Vec::new();
        let mut traced = Vec::new();
        for id in 0..n {
            use rand::Rng;
            let tx = v3(
                2.0 + 15.0 * (id as f64 / n as f64) + rng.gen::<f64>(),
                rng.gen::<f64>() * 2.0 - 1.0,
                1.0 + rng.gen::<f64>(),
            );
            let t = prepare_traced(trace_all(scene, tx, rx, &tcfg), &WF);
            let tape = Tape::new();
            let realized = truth.realize(&tape);
            let chi = vec![(0.0, 0.0); t.paths.paths.len()];
            let taps = predict_taps(&tape, &realized, &t, &WF, &chi);
            let cir: Vec<[f64; 2]> = taps
                .iter()
                .map(|c| {
                    let (re, im) = c.value();
                    [re, im]
                })
                .collect();
            records.push(DatasetRecord {
                id,
                tx: [tx.x, tx.y, tx.z],
                rx: 0,
                cir,
            });
            traced.push(t);
        }
        (records, traced)
    }

    fn embedding_model(scene: &Scene, seed: u64) -> ParamModel {
        let cfg = ModelConfig {
            materials: MaterialModelKind::Embedding { dim: 8 },
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamModel::init(scene, &cfg, &mut rng)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let scene = ground_scene();
        let (records, traced) = make_dataset(&scene, 4);
        let mut model = embedding_model(&scene, 1);
        let before = model.store.values().to_vec();
        // full batch so every iteration sees the same examples
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            iterations: 5,
            batch_size: 4,
            val_interval: 0,
            ..TrainingConfig::default()
        };
        let res = train(&mut model, &WF, &records, &traced, &[], &[], &cfg).unwrap();
        assert_eq!(model.store.values(), &before[..]);
        let first = res.history[0].loss;
        for row in &res.history {
            assert!((row.loss - first).abs() < 1e-12, "loss drifted");
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let scene = ground_scene();
        let (records, traced) = make_dataset(&scene, 6);
        let cfg = TrainingConfig {
            iterations: 60,
            batch_size: 3,
            val_interval: 0,
            learning_rate: 0.02,
            ..TrainingConfig::default()
        };
        let mut m1 = embedding_model(&scene, 1);
        let r1 = train(&mut m1, &WF, &records, &traced, &[], &[], &cfg).unwrap();
        let early: f64 = r1.history[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let late: f64 =
            r1.history[50..].iter().map(|r| r.loss).sum::<f64>() / (r1.history.len() - 50) as f64;
        assert!(late < 0.5 * early, "early {early} late {late}");

        let mut m2 = embedding_model(&scene, 1);
        let r2 = train(&mut m2, &WF, &records, &traced, &[], &[], &cfg).unwrap();
        assert_eq!(m1.store.values(), m2.store.values(), "non-deterministic");
        for (a, b) in r1.history.iter().zip(&r2.history) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        // thread count must not affect results
        let cfg1 = TrainingConfig {
            threads: 1,
            ..cfg.clone()
        };
        let mut m3 = embedding_model(&scene, 1);
        let r3 = train(&mut m3, &WF, &records, &traced, &[], &[], &cfg1).unwrap();
        assert_eq!(m1.store.values(), m3.store.values());
        for (a, b) in r1.history.iter().zip(&r3.history) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn self_consistent_model_has_near_zero_loss() {
        let scene = ground_scene();
        let (records, traced) = make_dataset(&scene, 3);
        let truth_cfg = ModelConfig {
            materials: MaterialModelKind::Scene,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut truth = ParamModel::init(&scene, &truth_cfg, &mut rng);
        let cfg = TrainingConfig {
            iterations: 1,
            batch_size: 3,
            val_interval: 0,
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        let res = train(&mut truth, &WF, &records, &traced, &[], &[], &cfg).unwrap();
        assert!(res.history[0].loss <= 1e-9, "loss {}", res.history[0].loss);
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let scene = ground_scene();
        let (records, traced) = make_dataset(&scene, 3);
        let truth_cfg = ModelConfig {
            materials: MaterialModelKind::Scene,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth = ParamModel::init(&scene, &truth_cfg, &mut rng);
        let report = evaluate(&truth, &WF, &records, &traced, 1.0);
        assert!(report.mean_ale_db < 1e-9);
        assert!(report.mean_rae < 1e-9);
        assert_eq!(report.ale_cdf.len(), 3);
        assert!(report.tap_indexing.contains("0..N-1"));
    }
}
