use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, MtlLoss, PainNet};
use crate::error::{Error, Result};
use crate::nn::{adamw_step, AdamWConfig, CosineSchedule, EmaState, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: AdamWConfig,
    pub use_ema: bool,
    pub ema_decay: f64,
    /// Ramp the EMA decay as `min(decay, (1 + t) / (10 + t))`.
    pub ema_warmup: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            warmup_epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: AdamWConfig::default(),
            use_ema: true,
            ema_decay: 0.999,
            ema_warmup: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        CosineSchedule::new(self.learning_rate, self.warmup_epochs, self.epochs)?;
        if self.use_ema && !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return Err(Error::Config("invalid AdamW hyper-parameters".into()));
        }
        Ok(())
    }
}

/// Owns a network plus its optimizer, schedule and EMA state. Minibatch
/// order is drawn from a seeded stream, so two trainers with equal seeds
/// and data visit samples identically.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: PainNet,
    cfg: TrainConfig,
    schedule: CosineSchedule,
    opt: OptimizerState,
    ema: Option<EmaState>,
    rng: ChaCha8Rng,
    epoch: usize,
}

/// Owned copy of a subset of rows, so a minibatch can be borrowed as a
/// [`Batch`].
struct Gathered {
    x: Array2<f64>,
    pain: Vec<usize>,
    age: Option<Vec<usize>>,
    gender: Option<Vec<usize>>,
}

impl Gathered {
    fn new(data: &Batch, idx: &[usize]) -> Self {
        let pick = |l: &[usize]| idx.iter().map(|&i| l[i]).collect::<Vec<_>>();
        Self {
            x: data.inputs.select(Axis(0), idx),
            pain: pick(data.pain),
            age: data.age.map(pick),
            gender: data.gender.map(pick),
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch {
            inputs: self.x.view(),
            pain: &self.pain,
            age: self.age.as_deref(),
            gender: self.gender.as_deref(),
        }
    }
}

impl Trainer {
    pub fn new(net: PainNet, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let schedule = CosineSchedule::new(cfg.learning_rate, cfg.warmup_epochs, cfg.epochs)?;
        let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        let ema = if cfg.use_ema {
            Some(EmaState::new(&net.tensors(), cfg.ema_decay)?.with_warmup(cfg.ema_warmup))
        } else {
            None
        };
        Ok(Self {
            net,
            cfg,
            schedule,
            opt: OptimizerState::new(&sizes),
            ema,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    pub fn network(&self) -> &PainNet {
        &self.net
    }

    pub fn ema(&self) -> Option<&EmaState> {
        self.ema.as_ref()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer_step(&self) -> u64 {
        self.opt.step
    }

    /// One forward/backward/AdamW/EMA step at learning rate `lr`.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<MtlLoss> {
        let (loss, grads) = self.net.loss_and_grad(batch)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {}", self.opt.step)));
        }
        let decay = self.net.decay_mask();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adamw_step(
            &mut self.net.tensors_mut(),
            &grad_refs,
            &decay,
            &mut self.opt,
            &self.cfg.optimizer,
            lr,
        )?;
        let names = self.net.tensor_names();
        for (name, t) in names.iter().zip(self.net.tensors()) {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "parameter {name} became non-finite at step {}",
                    self.opt.step
                )));
            }
        }
        if let Some(ema) = &mut self.ema {
            ema.update(&self.net.tensors())?;
        }
        Ok(loss)
    }

    /// Shuffles the data and runs one epoch; returns the mean batch loss.
    pub fn run_epoch(&mut self, data: &Batch) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let lr = self.schedule.lr_at(self.epoch)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.cfg.batch_size) {
            let g = Gathered::new(data, idx);
            total += self.step(&g.batch(), lr)?.total;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    /// Trains for the remaining epochs; returns the per-epoch mean loss.
    pub fn fit(&mut self, data: &Batch) -> Result<Vec<f64>> {
        let mut history = Vec::with_capacity(self.cfg.epochs - self.epoch);
        while self.epoch < self.cfg.epochs {
            history.push(self.run_epoch(data)?);
        }
        Ok(history)
    }

    /// Copy of the network carrying the EMA weights (or the live weights
    /// when EMA is disabled), for evaluation.
    pub fn eval_network(&self) -> Result<PainNet> {
        let mut net = self.net.clone();
        if let Some(ema) = &self.ema {
            let mut shadow = ema.clone();
            shadow.swap(&mut net.tensors_mut())?;
        }
        Ok(net)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.eval_network()?.predict(x)
    }

    pub fn into_parts(self) -> (PainNet, Option<EmaState>, u64) {
        (self.net, self.ema, self.opt.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{NetworkConfig, TaskSet};
    use rand::Rng;

    fn tiny(tasks: TaskSet) -> NetworkConfig {
        NetworkConfig {
            encoder_widths: vec![16, 16],
            head_hidden: 8,
            age_classes: 4,
            tasks,
            ..NetworkConfig::st_nn(6, 2)
        }
    }

    #[test]
    fn learns_a_separable_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 120;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 6), |(i, j)| {
            let shift = if labels[i] == 1 { 1.5 } else { -1.5 };
            (if j == 0 { shift } else { 0.0 }) + rng.random_range(-1.0..1.0)
        });
        let net = PainNet::new(tiny(TaskSet::PAIN_ONLY), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            warmup_epochs: 3,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut t = Trainer::new(net, cfg, 7).unwrap();
        let data = Batch::new(x.view(), &labels);
        let hist = t.fit(&data).unwrap();
        assert!(hist.last().unwrap() < &hist[1]);
        let pred = t.predict(x.view()).unwrap();
        let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!(acc > 0.9, "accuracy {acc}");
    }

    #[test]
    fn eval_network_uses_shadow() {
        let net = PainNet::new(tiny(TaskSet::PAIN_ONLY), 1).unwrap();
        let mut t = Trainer::new(net, TrainConfig { epochs: 2, warmup_epochs: 0, ..Default::default() }, 0).unwrap();
        let x = Array2::from_elem((4, 6), 0.3);
        t.run_epoch(&Batch::new(x.view(), &[0, 1, 0, 1])).unwrap();
        let eval = t.eval_network().unwrap();
        let shadow = &t.ema().unwrap().shadow;
        for (a, b) in eval.tensors().iter().zip(shadow) {
            assert_eq!(*a, b.as_slice());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let net = PainNet::new(tiny(TaskSet::PAIN_ONLY), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(Trainer::new(net, cfg, 0).is_err());
    }
}
