//! Training loop: batches from a [`Task`], masked loss, backprop, Adam.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SamplePair, Task};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{dice_metric, loss, LossKind};
use crate::net::{Bimonn, InitScheme, ParamRole};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub p_fixed: f64,
    /// Raw bias at initialization; the effective bias is `f⁺(bias_init_raw)`.
    pub bias_init_raw: f64,
    pub init: InitScheme,
    pub adam: AdamConfig,
    /// Keep every scale `p` at `p_fixed`.
    pub freeze_p: bool,
    /// Evaluate DICE and activation every this many iterations.
    pub eval_every: usize,
    /// Stop once the held-out DICE error is below this value and every
    /// neuron is activated.
    pub stop_dice_error: Option<f64>,
    /// Also stop after this many consecutive evaluations below
    /// `stop_dice_error`, activated or not.
    pub stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Dice,
            learning_rate: 0.01,
            iterations: 30_000,
            batch_size: 32,
            seed: 0,
            p_fixed: 4.0,
            bias_init_raw: 2.0,
            init: InitScheme::KaimingUniform,
            adam: AdamConfig::default(),
            freeze_p: true,
            eval_every: 100,
            stop_dice_error: Some(1e-3),
            stop_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} is not usable", self.learning_rate)));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("iterations, batch_size and eval_every must be positive".into()));
        }
        if !self.p_fixed.is_finite() || !self.bias_init_raw.is_finite() {
            return Err(Error::Config("p_fixed and bias_init_raw must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Initializes `net` per `cfg` with a generator seeded from `cfg.seed`.
pub fn init_network<T: Scalar>(net: &mut Bimonn<T>, cfg: &TrainConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    net.init(cfg.init, T::lit(cfg.bias_init_raw), T::lit(cfg.p_fixed), &mut rng);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub dice_error: Option<f64>,
    /// One flag per neuron, in layer order.
    pub activated: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub iterations_run: usize,
    pub stopped_early: bool,
    /// First evaluation with DICE error below `stop_dice_error`.
    pub first_below_threshold: Option<usize>,
    /// First evaluation at which every neuron was activated.
    pub first_activated: Option<usize>,
}

impl TrainLog {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn dice_curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.dice_error.map(|d| (r.iteration, d)))
            .collect()
    }

    pub fn last_dice_error(&self) -> Option<f64> {
        self.dice_curve().last().map(|&(_, d)| d)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss", "dice_error", "activated"])?;
        for r in &self.records {
            let flags = r
                .activated
                .as_ref()
                .map(|f| f.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            w.write_record([
                r.iteration.to_string(),
                format!("{:.9}", r.loss),
                r.dice_error.map(|d| format!("{d:.6}")).unwrap_or_default(),
                flags,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Mean DICE error of the thresholded network over `pairs`, on unmasked
/// pixels.
pub fn evaluate<T: Scalar>(net: &Bimonn<T>, pairs: &[SamplePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mask = net.loss_mask();
    let mut total = 0.0;
    for pair in pairs {
        let pred = net.predict_binary(&[pair.input.to_real()])?;
        total += dice_metric(&pred[0], &pair.target, &mask)?;
    }
    Ok(1.0 - total / pairs.len() as f64)
}

/// Mean masked loss and its flat parameter gradient over a batch.
pub fn batch_gradient<T: Scalar>(net: &Bimonn<T>, batch: &[SamplePair], kind: LossKind) -> Result<(T, Vec<T>)> {
    let mask = net.loss_mask();
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut total = T::zero();
    let mut grads: Vec<T> = Vec::new();
    for pair in batch {
        let (out, cache) = net.forward(&[pair.input.to_real()])?;
        let (l, g) = loss(kind, &out[0], &pair.target, &mask)?;
        total = total + l;
        let g: Grid<T> = g.map(|v| v * scale);
        let pg = net.backward(&[g], &cache)?;
        if grads.is_empty() {
            grads = pg;
        } else {
            grads.iter_mut().zip(pg).for_each(|(a, b)| *a = *a + b);
        }
    }
    Ok((total * scale, grads))
}

/// Index stream: sequential for infinite sources, reshuffled every epoch
/// for finite ones.
struct Sampler {
    order: Vec<u64>,
    len: Option<usize>,
    epoch: u64,
    pos: usize,
    next: u64,
    seed: u64,
}

impl Sampler {
    fn new(len: Option<usize>, seed: u64) -> Self {
        let mut s = Self {
            order: Vec::new(),
            len,
            epoch: 0,
            pos: 0,
            next: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        if let Some(n) = self.len {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(self.epoch);
            self.order = (0..n as u64).collect();
            self.order.shuffle(&mut rng);
        }
    }

    fn next_index(&mut self) -> u64 {
        match self.len {
            None => {
                self.next += 1;
                self.next - 1
            }
            Some(n) => {
                if self.pos == n {
                    self.epoch += 1;
                    self.pos = 0;
                    self.shuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            }
        }
    }
}

/// Trains `net` in place on `task`, evaluating on `eval`.
pub fn train<T: Scalar>(net: &mut Bimonn<T>, task: &Task, eval: &[SamplePair], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    net.loss_mask().check(task.source.shape())?;
    let frozen: Vec<bool> = net
        .roles()
        .iter()
        .map(|&r| cfg.freeze_p && r == ParamRole::Scale)
        .collect();
    let mut params = net.parameters();
    let mut state = AdamState::new(params.len());
    let lr = T::lit(cfg.learning_rate);
    let mut sampler = Sampler::new(task.source.len(), cfg.seed);
    let mut log = TrainLog::default();
    let mut below_streak = 0usize;

    for it in 0..cfg.iterations {
        let batch: Vec<SamplePair> = (0..cfg.batch_size).map(|_| task.pair(sampler.next_index())).collect();
        let (batch_loss, grads) = batch_gradient(net, &batch, cfg.loss)?;
        let loss_value = batch_loss.to_f64_lossy();
        if !loss_value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        adam_step(&mut params, &grads, &mut state, lr, &cfg.adam, Some(&frozen))?;
        net.set_parameters(&params)?;
        log.iterations_run = it + 1;

        let mut record = LogRecord {
            iteration: it + 1,
            loss: loss_value,
            dice_error: None,
            activated: None,
        };
        if (it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            let dice_error = evaluate(net, eval)?;
            let statuses = net.find_activation();
            let flags: Vec<bool> = statuses.iter().flat_map(|s| s.flags()).collect();
            let all = statuses.iter().all(|s| s.is_activated());
            record.dice_error = Some(dice_error);
            record.activated = Some(flags);
            if all && log.first_activated.is_none() {
                log.first_activated = Some(it + 1);
            }
            if let Some(threshold) = cfg.stop_dice_error {
                if dice_error < threshold {
                    below_streak += 1;
                    log.first_below_threshold.get_or_insert(it + 1);
                } else {
                    below_streak = 0;
                }
                if below_streak > 0 && (all || below_streak >= cfg.stop_patience) {
                    log.records.push(record);
                    log.stopped_early = it + 1 < cfg.iterations;
                    return Ok(log);
                }
            }
        }
        log.records.push(record);
    }
    Ok(log)
}
