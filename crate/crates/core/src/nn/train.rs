//! Training loop for [`DistNet`]: `L = R_y + lambda_q * R_q` with additive
//! uniform noise on the compressor latent, Adam, and plateau learning-rate
//! decay driven by a validation set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::graph::Graph;
use super::model::{DistNet, QMode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::support::PmfBank;

/// One training image: its histogram bank and latent elements per channel.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub p: Tensor,
    pub pixels: f64,
}

impl TrainExample {
    pub fn from_bank(bank: &PmfBank, pixels_per_channel: usize) -> Self {
        let b = bank.spec().num_bins();
        let p = Tensor::from_vec(bank.channels(), b, bank.to_flat()).expect("bank is rectangular");
        Self { p, pixels: pixels_per_channel as f64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_q: f64,
    pub max_steps: u64,
    /// Validation evaluations without improvement before the rate decays.
    pub plateau_patience: u32,
    /// Steps between validation evaluations.
    pub eval_every: u64,
    pub lr_decay: f64,
    /// Training stops at the first plateau after this many decays.
    pub max_decays: u32,
    /// Relative validation improvement that resets the plateau counter.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            seed: 0,
            lambda_q: 1.0,
            max_steps: 20_000,
            plateau_patience: 10,
            eval_every: 100,
            lr_decay: 0.1,
            max_decays: 2,
            min_improvement: 1e-4,
        }
    }
}

/// Batch-mean loss terms in bits per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub rate_y: f64,
    pub rate_q: f64,
    pub total: f64,
}

/// Outcome of feeding one validation loss to the plateau schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plateau {
    Improved,
    Waiting,
    Decayed,
    Stop,
}

/// Progress record passed to the `run` callback.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub train: LossComponents,
    pub validation: Option<LossComponents>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_validation: f64,
    pub final_lr: f64,
    pub decays: u32,
}

/// `lambda_q = (H_train * W_train) / (H_target * W_target)`: the rate of
/// `q` is charged once per image while `R_y` grows with resolution.
pub fn lambda_q(train_h: usize, train_w: usize, target_h: usize, target_w: usize) -> Result<f64> {
    if train_h == 0 || train_w == 0 || target_h == 0 || target_w == 0 {
        return Err(Error::BadShape(format!(
            "resolutions must be positive: {train_h}x{train_w} and {target_h}x{target_w}"
        )));
    }
    Ok((train_h * train_w) as f64 / (target_h * target_w) as f64)
}

/// Training surrogate for rounding: i.i.d. `U(-0.5, 0.5)` per element.
pub fn uniform_noise(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-0.5..0.5)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

pub struct Trainer {
    net: DistNet,
    adam: Adam,
    config: TrainConfig,
    lr: f64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    steps: u64,
    best: f64,
    stale: u32,
    decays: u32,
}

impl Trainer {
    pub fn new(net: DistNet, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 || config.eval_every == 0 {
            return Err(Error::InvalidArgument("batch size and eval interval must be positive".into()));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) || config.lambda_q < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lr {} and lambda_q {} out of range",
                config.lr, config.lambda_q
            )));
        }
        let adam = Adam::new(net.params());
        Ok(Self {
            adam,
            lr: config.lr,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e),
            order: Vec::new(),
            cursor: 0,
            steps: 0,
            best: f64::INFINITY,
            stale: 0,
            decays: 0,
            net,
            config,
        })
    }

    pub fn net(&self) -> &DistNet {
        &self.net
    }

    pub fn into_net(self) -> DistNet {
        self.net
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Loss and parameter gradients of one example under `mode`.
    fn example_grads(net: &DistNet, ex: &TrainExample, mode: QMode<'_>, lambda_q: f64) -> Result<(LossComponents, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars = net.bind(&mut g);
        let p = g.leaf(ex.p.clone());
        let out = net.forward(&mut g, &vars, p, mode, ex.pixels, lambda_q)?;
        let loss = LossComponents {
            rate_y: g.value(out.rate_y).item(),
            rate_q: g.value(out.rate_q).item(),
            total: g.value(out.loss).item(),
        };
        let grads = g.backward(out.loss);
        Ok((loss, vars.iter().map(|&v| grads.get_or_zeros(v, &g)).collect()))
    }

    /// One Adam step on the mean loss of `batch`.
    pub fn train_batch(&mut self, batch: &[&TrainExample]) -> Result<LossComponents> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let m = self.net.config().m_q;
        let l = self.net.config().latent_len();
        let mut sum = LossComponents { rate_y: 0.0, rate_q: 0.0, total: 0.0 };
        let mut acc: Option<Vec<Tensor>> = None;
        for ex in batch {
            let noise = uniform_noise(m, l, &mut self.rng);
            let (loss, grads) = Self::example_grads(&self.net, ex, QMode::Noise(&noise), self.config.lambda_q)?;
            sum.rate_y += loss.rate_y;
            sum.rate_q += loss.rate_q;
            sum.total += loss.total;
            match &mut acc {
                Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                None => acc = Some(grads),
            }
        }
        self.steps += 1;
        let n = batch.len() as f64;
        let mean = LossComponents { rate_y: sum.rate_y / n, rate_q: sum.rate_q / n, total: sum.total / n };
        if !mean.total.is_finite() {
            return Err(Error::Diverged { step: self.steps, loss: mean.total });
        }
        let mut grads = acc.expect("non-empty batch");
        for t in &mut grads {
            *t = t.map(|v| v / n);
        }
        if grads.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { step: self.steps, loss: mean.total });
        }
        self.adam.step(self.net.params_mut(), &grads, self.lr);
        Ok(mean)
    }

    /// Samples the next batch (reshuffling per epoch) and steps on it.
    pub fn step(&mut self, data: &[TrainExample]) -> Result<LossComponents> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training examples".into()));
        }
        let k = self.config.batch_size.min(data.len());
        let mut idx = Vec::with_capacity(k);
        while idx.len() < k {
            if self.cursor >= self.order.len() {
                self.order = (0..data.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let batch: Vec<&TrainExample> = idx.iter().map(|&i| &data[i]).collect();
        self.train_batch(&batch)
    }

    /// Deterministic loss with the latent rounded instead of perturbed.
    pub fn evaluate(net: &DistNet, data: &[TrainExample], lambda_q: f64) -> Result<LossComponents> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no evaluation examples".into()));
        }
        let mut sum = LossComponents { rate_y: 0.0, rate_q: 0.0, total: 0.0 };
        for ex in data {
            let mut g = Graph::new();
            let vars = net.bind(&mut g);
            let p = g.leaf(ex.p.clone());
            let out = net.forward(&mut g, &vars, p, QMode::Round, ex.pixels, lambda_q)?;
            sum.rate_y += g.value(out.rate_y).item();
            sum.rate_q += g.value(out.rate_q).item();
            sum.total += g.value(out.loss).item();
        }
        let n = data.len() as f64;
        Ok(LossComponents { rate_y: sum.rate_y / n, rate_q: sum.rate_q / n, total: sum.total / n })
    }

    /// Updates the plateau schedule with a new validation loss.
    pub fn observe_validation(&mut self, loss: f64) -> Plateau {
        if loss < self.best * (1.0 - self.config.min_improvement) {
            self.best = loss;
            self.stale = 0;
            return Plateau::Improved;
        }
        self.best = self.best.min(loss);
        self.stale += 1;
        if self.stale < self.config.plateau_patience {
            return Plateau::Waiting;
        }
        self.stale = 0;
        if self.decays >= self.config.max_decays {
            return Plateau::Stop;
        }
        self.decays += 1;
        self.lr *= self.config.lr_decay;
        Plateau::Decayed
    }

    /// Trains until `max_steps` or the plateau schedule stops, keeping the
    /// parameters with the best validation loss.
    pub fn run(&mut self, train: &[TrainExample], validation: &[TrainExample], mut log: impl FnMut(&StepLog)) -> Result<TrainSummary> {
        let mut best_net = self.net.clone();
        let mut best_val = Self::evaluate(&self.net, validation, self.config.lambda_q)?.total;
        self.observe_validation(best_val);
        while self.steps < self.config.max_steps {
            let loss = self.step(train)?;
            let mut val = None;
            let mut stop = false;
            if self.steps % self.config.eval_every == 0 {
                let v = Self::evaluate(&self.net, validation, self.config.lambda_q)?;
                if v.total < best_val {
                    best_val = v.total;
                    best_net = self.net.clone();
                }
                stop = self.observe_validation(v.total) == Plateau::Stop;
                val = Some(v);
            }
            log(&StepLog { step: self.steps, lr: self.lr, train: loss, validation: val });
            if stop {
                break;
            }
        }
        self.net = best_net;
        Ok(TrainSummary { steps: self.steps, best_validation: best_val, final_lr: self.lr, decays: self.decays })
    }
}
