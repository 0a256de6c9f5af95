//! ST-NN and MT-NN networks: a shared ReLU encoder feeding a pain
//! classifier and optional age and gender classifiers, trained with an
//! uncertainty-weighted sum of label-smoothed cross-entropies.

mod checkpoint;
mod gradcheck;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hrv::BASE_FEATURES;
use crate::nn::{relu_backward_inplace, relu_inplace, smoothed_cross_entropy_batch, DenseLayer};

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use gradcheck::{
    check_gradients, gradcheck_suite, GradCheckEntry, GradCheckOptions, GradCheckReport,
};
pub use train::{TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pain,
    Age,
    Gender,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pain, Task::Age, Task::Gender];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Pain => "pain",
            Task::Age => "age",
            Task::Gender => "gender",
        }
    }
}

/// Active tasks. Pain is always present; age and gender are optional
/// auxiliary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    pub age: bool,
    pub gender: bool,
}

impl TaskSet {
    pub const PAIN_ONLY: TaskSet = TaskSet {
        age: false,
        gender: false,
    };

    pub fn from_tasks(tasks: &[Task]) -> Result<Self> {
        if !tasks.contains(&Task::Pain) {
            return Err(Error::Config("task set must include pain".into()));
        }
        Ok(Self {
            age: tasks.contains(&Task::Age),
            gender: tasks.contains(&Task::Gender),
        })
    }

    pub fn contains(self, task: Task) -> bool {
        match task {
            Task::Pain => true,
            Task::Age => self.age,
            Task::Gender => self.gender,
        }
    }

    pub fn tasks(self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.contains(*t)).collect()
    }

    pub fn is_single_task(self) -> bool {
        !self.age && !self.gender
    }

    /// Short label: `ST`, `T(G)`, `T(A)` or `T(GA)`.
    pub fn tag(self) -> &'static str {
        match (self.gender, self.age) {
            (false, false) => "ST",
            (true, false) => "T(G)",
            (false, true) => "T(A)",
            (true, true) => "T(GA)",
        }
    }
}

impl FromStr for TaskSet {
    type Err = Error;

    /// Comma-separated task names, e.g. `pain,gender`.
    fn from_str(s: &str) -> Result<Self> {
        let tasks = s
            .split(',')
            .map(|t| match t.trim().to_ascii_lowercase().as_str() {
                "pain" => Ok(Task::Pain),
                "age" => Ok(Task::Age),
                "gender" => Ok(Task::Gender),
                other => Err(Error::Config(format!("unknown task `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tasks(&tasks)
    }
}

/// How the learned per-task scalar `w` enters the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `c * (exp(w) * L + w)`. Its infimum over `w` is at minus infinity.
    PaperLiteral,
    /// `c * (exp(-w) * L + w)`, minimised at `w = ln L`.
    #[default]
    KendallCorrected,
}

impl FromStr for LossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(LossForm::PaperLiteral),
            "kendall-corrected" => Ok(LossForm::KendallCorrected),
            _ => Err(Error::Config(format!(
                "unknown loss form `{s}` (expected paper-literal or kendall-corrected)"
            ))),
        }
    }
}

impl fmt::Display for LossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossForm::PaperLiteral => "paper-literal",
            LossForm::KendallCorrected => "kendall-corrected",
        })
    }
}

/// Learned scalars `w` and fixed coefficients `c`, indexed pain, age, gender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlLossParams {
    pub w: [f64; 3],
    pub c: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlLoss {
    pub total: f64,
    pub contributions: [f64; 3],
    /// Raw per-task cross-entropies (0 for tasks that were not evaluated).
    pub task_losses: [f64; 3],
}

/// Combines task losses. Tasks with `c = 0` are not evaluated at all, so a
/// non-finite loss for an inactive task cannot leak into the total.
pub fn mtl_loss(losses: [f64; 3], params: &MtlLossParams, form: LossForm) -> Result<MtlLoss> {
    let mut contributions = [0.0; 3];
    for t in 0..3 {
        let (l, w, c) = (losses[t], params.w[t], params.c[t]);
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("coefficient c{} = {c} must be finite and >= 0", t + 1)));
        }
        if c == 0.0 {
            continue;
        }
        if !l.is_finite() || !w.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite {} loss term (L = {l}, w = {w})",
                Task::ALL[t].name()
            )));
        }
        let scale = match form {
            LossForm::PaperLiteral => w.exp(),
            LossForm::KendallCorrected => (-w).exp(),
        };
        contributions[t] = (scale * l + w) * c;
    }
    Ok(MtlLoss {
        total: contributions.iter().sum(),
        contributions,
        task_losses: losses,
    })
}

/// Partial derivatives of the combined loss: `(d/dL_t, d/dw_t)`.
pub fn mtl_loss_grad(losses: [f64; 3], params: &MtlLossParams, form: LossForm) -> ([f64; 3], [f64; 3]) {
    let mut d_l = [0.0; 3];
    let mut d_w = [0.0; 3];
    for t in 0..3 {
        let (l, w, c) = (losses[t], params.w[t], params.c[t]);
        if c == 0.0 {
            continue;
        }
        match form {
            LossForm::PaperLiteral => {
                d_l[t] = c * w.exp();
                d_w[t] = c * (w.exp() * l + 1.0);
            }
            LossForm::KendallCorrected => {
                d_l[t] = c * (-w).exp();
                d_w[t] = c * (1.0 - (-w).exp() * l);
            }
        }
    }
    (d_l, d_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub form: LossForm,
    /// `c1, c2, c3` for pain, age, gender.
    pub coefficients: [f64; 3],
    pub label_smoothing: f64,
    /// When false the `w` scalars stay at their initial value.
    pub learn_task_weights: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            form: LossForm::KendallCorrected,
            coefficients: [1.0, 0.2, 0.2],
            label_smoothing: 0.1,
            learn_task_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub pain_classes: usize,
    pub encoder_widths: Vec<usize>,
    /// Width of the first layer of every classifier head.
    pub head_hidden: usize,
    pub age_classes: usize,
    pub gender_classes: usize,
    pub tasks: TaskSet,
    pub loss: LossConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: BASE_FEATURES,
            pain_classes: 2,
            encoder_widths: vec![256, 512, 1024, 1024],
            head_hidden: 1024,
            age_classes: 36,
            gender_classes: 2,
            tasks: TaskSet::PAIN_ONLY,
            loss: LossConfig::default(),
        }
    }
}

impl NetworkConfig {
    pub fn st_nn(input_dim: usize, pain_classes: usize) -> Self {
        Self {
            input_dim,
            pain_classes,
            ..Default::default()
        }
    }

    pub fn mt_nn(input_dim: usize, pain_classes: usize, tasks: TaskSet) -> Self {
        Self {
            tasks,
            ..Self::st_nn(input_dim, pain_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(BASE_FEATURES..=BASE_FEATURES + 2).contains(&self.input_dim) {
            return Err(Error::Config(format!(
                "input_dim must be {}..={}, got {}",
                BASE_FEATURES,
                BASE_FEATURES + 2,
                self.input_dim
            )));
        }
        if !matches!(self.pain_classes, 2 | 5) {
            return Err(Error::Config(format!(
                "pain_classes must be 2 or 5, got {}",
                self.pain_classes
            )));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) || self.head_hidden == 0 {
            return Err(Error::Config("layer widths must be positive and the encoder nonempty".into()));
        }
        if self.age_classes < 2 || self.gender_classes < 2 {
            return Err(Error::Config("auxiliary heads need at least two classes".into()));
        }
        let eps = self.loss.label_smoothing;
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Config(format!("label_smoothing must lie in [0, 1), got {eps}")));
        }
        for (i, c) in self.loss.coefficients.iter().enumerate() {
            if !(*c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("coefficient c{} must be finite and >= 0", i + 1)));
            }
        }
        Ok(())
    }

    pub fn classes(&self, task: Task) -> usize {
        match task {
            Task::Pain => self.pain_classes,
            Task::Age => self.age_classes,
            Task::Gender => self.gender_classes,
        }
    }

    /// Coefficients with absent tasks forced to zero.
    pub fn effective_coefficients(&self) -> [f64; 3] {
        let mut c = self.loss.coefficients;
        for t in Task::ALL {
            if !self.tasks.contains(t) {
                c[t.index()] = 0.0;
            }
        }
        c
    }

    /// Trainable parameter count, including the three task scalars.
    pub fn param_count(&self) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        let mut n = 0;
        let mut prev = self.input_dim;
        for &w in &self.encoder_widths {
            n += dense(prev, w);
            prev = w;
        }
        for t in self.tasks.tasks() {
            n += dense(prev, self.head_hidden) + dense(self.head_hidden, self.classes(t));
        }
        n + 3
    }
}

/// Classifier head: two dense layers with no nonlinearity between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub task: Task,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PainNet {
    config: NetworkConfig,
    pub encoder: Vec<DenseLayer>,
    /// Pain head first, then age and gender when present.
    pub heads: Vec<Head>,
    /// `w1, w2, w3`; entries of absent tasks stay inert.
    pub task_weights: Array1<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Encoder input followed by each post-ReLU encoder activation.
    pub activations: Vec<Array2<f64>>,
    pub head_hidden: Vec<Array2<f64>>,
    pub logits: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Sign pattern of every encoder unit, for detecting ReLU kinks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.activations[1..]
            .iter()
            .flat_map(|a| a.iter().map(|x| *x > 0.0))
            .collect()
    }
}

/// Inputs and labels for one forward/backward pass. Rows are samples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub pain: &'a [usize],
    pub age: Option<&'a [usize]>,
    pub gender: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: ArrayView2<'a, f64>, pain: &'a [usize]) -> Self {
        Self {
            inputs,
            pain,
            age: None,
            gender: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn labels(&self, task: Task) -> Option<&'a [usize]> {
        match task {
            Task::Pain => Some(self.pain),
            Task::Age => self.age,
            Task::Gender => self.gender,
        }
    }
}

fn layer_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a so each layer's stream depends on its name, not its position
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

fn init_layer(seed: u64, name: &str, n_in: usize, n_out: usize) -> DenseLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, name));
    DenseLayer::he_uniform(n_in, n_out, &mut rng)
}

pub fn build_st_nn(input_dim: usize, pain_classes: usize, seed: u64) -> Result<PainNet> {
    PainNet::new(NetworkConfig::st_nn(input_dim, pain_classes), seed)
}

pub fn build_mt_nn(config: NetworkConfig, seed: u64) -> Result<PainNet> {
    PainNet::new(config, seed)
}

impl PainNet {
    /// Each layer draws its initial weights from a stream keyed by the seed
    /// and the layer name, so the encoder and pain head start identically
    /// whatever auxiliary heads are attached.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut encoder = Vec::with_capacity(config.encoder_widths.len());
        let mut prev = config.input_dim;
        for (k, &w) in config.encoder_widths.iter().enumerate() {
            encoder.push(init_layer(seed, &format!("encoder.{k}"), prev, w));
            prev = w;
        }
        let heads = config
            .tasks
            .tasks()
            .into_iter()
            .map(|task| Head {
                task,
                hidden: init_layer(seed, &format!("{}.hidden", task.name()), prev, config.head_hidden),
                output: init_layer(
                    seed,
                    &format!("{}.output", task.name()),
                    config.head_hidden,
                    config.classes(task),
                ),
            })
            .collect();
        Ok(Self {
            config,
            encoder,
            heads,
            task_weights: Array1::zeros(3),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn loss_params(&self) -> MtlLossParams {
        MtlLossParams {
            w: [self.task_weights[0], self.task_weights[1], self.task_weights[2]],
            c: self.config.effective_coefficients(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.encoder.len() {
            names.push(format!("encoder.{k}.weight"));
            names.push(format!("encoder.{k}.bias"));
        }
        for h in &self.heads {
            for part in ["hidden.weight", "hidden.bias", "output.weight", "output.bias"] {
                names.push(format!("{}.{part}", h.task.name()));
            }
        }
        names.push("task_weights".into());
        names
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let layers = self
            .encoder
            .iter()
            .chain(self.heads.iter().flat_map(|h| [&h.hidden, &h.output]));
        for l in layers {
            shapes.push(l.weight.shape().to_vec());
            shapes.push(l.bias.shape().to_vec());
        }
        shapes.push(vec![3]);
        shapes
    }

    /// Flat views of every parameter tensor, in `tensor_names` order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let layers = self
            .encoder
            .iter()
            .chain(self.heads.iter().flat_map(|h| [&h.hidden, &h.output]));
        let mut out: Vec<&[f64]> = Vec::new();
        for l in layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.task_weights.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let PainNet {
            encoder,
            heads,
            task_weights,
            ..
        } = self;
        let layers = encoder
            .iter_mut()
            .chain(heads.iter_mut().flat_map(|h| [&mut h.hidden, &mut h.output]));
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in layers {
            let DenseLayer { weight, bias } = l;
            out.push(weight.as_slice_mut().expect("standard layout"));
            out.push(bias.as_slice_mut().expect("standard layout"));
        }
        out.push(task_weights.as_slice_mut().expect("standard layout"));
        out
    }

    /// Weight decay applies to every tensor except the task scalars.
    pub fn decay_mask(&self) -> Vec<bool> {
        let n = self.tensors().len();
        (0..n).map(|i| i + 1 < n).collect()
    }

    fn check_inputs(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn encode(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for layer in &self.encoder {
            let mut z = layer.forward_batch(acts.last().expect("nonempty").view());
            relu_inplace(&mut z);
            acts.push(z);
        }
        acts
    }

    /// Full forward pass through the encoder and every head.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_inputs(&x)?;
        let activations = self.encode(x);
        let top = activations.last().expect("nonempty").view();
        let mut head_hidden = Vec::with_capacity(self.heads.len());
        let mut logits = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let hid = h.hidden.forward_batch(top);
            let out = h.output.forward_batch(hid.view());
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite {} logits in forward pass",
                    h.task.name()
                )));
            }
            head_hidden.push(hid);
            logits.push(out);
        }
        Ok(ForwardCache {
            activations,
            head_hidden,
            logits,
        })
    }

    /// Pain logits only; auxiliary heads are skipped.
    pub fn pain_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&x)?;
        let acts = self.encode(x);
        let top = acts.last().expect("nonempty").view();
        let h = &self.heads[0];
        let out = h.output.forward_batch(h.hidden.forward_batch(top).view());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite pain logits".into()));
        }
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.pain_logits(x)?;
        Ok(logits
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    fn active_labels<'a>(&self, batch: &Batch<'a>) -> Result<Vec<Option<&'a [usize]>>> {
        let c = self.config.effective_coefficients();
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        self.heads
            .iter()
            .map(|h| {
                if c[h.task.index()] == 0.0 {
                    return Ok(None);
                }
                match batch.labels(h.task) {
                    None => Err(Error::MissingLabel {
                        task: h.task.name(),
                        index: 0,
                    }),
                    Some(l) if l.len() != batch.len() => Err(Error::MissingLabel {
                        task: h.task.name(),
                        index: l.len().min(batch.len()),
                    }),
                    Some(l) => Ok(Some(l)),
                }
            })
            .collect()
    }

    /// Per-head loss and logit gradient for active heads.
    fn head_losses(
        &self,
        cache: &ForwardCache,
        batch: &Batch,
    ) -> Result<([f64; 3], Vec<Option<Array2<f64>>>)> {
        let labels = self.active_labels(batch)?;
        let eps = self.config.loss.label_smoothing;
        let mut losses = [0.0; 3];
        let mut grads = Vec::with_capacity(self.heads.len());
        for ((h, logits), l) in self.heads.iter().zip(&cache.logits).zip(labels) {
            match l {
                None => grads.push(None),
                Some(l) => {
                    let (loss, g) = smoothed_cross_entropy_batch(logits.view(), l, eps)?;
                    losses[h.task.index()] = loss;
                    grads.push(Some(g));
                }
            }
        }
        Ok((losses, grads))
    }

    /// Combined loss for a batch, forward only.
    pub fn mt_forward_loss(&self, batch: &Batch) -> Result<MtlLoss> {
        let cache = self.forward(batch.inputs)?;
        self.loss_from_cache(&cache, batch)
    }

    pub fn loss_from_cache(&self, cache: &ForwardCache, batch: &Batch) -> Result<MtlLoss> {
        let (losses, _) = self.head_losses(cache, batch)?;
        mtl_loss(losses, &self.loss_params(), self.config.loss.form)
    }

    /// Combined loss and gradients for every tensor, in `tensors` order.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(MtlLoss, Vec<Vec<f64>>)> {
        let cache = self.forward(batch.inputs)?;
        self.backward(&cache, batch)
    }

    pub fn backward(&self, cache: &ForwardCache, batch: &Batch) -> Result<(MtlLoss, Vec<Vec<f64>>)> {
        let (losses, logit_grads) = self.head_losses(cache, batch)?;
        let params = self.loss_params();
        let form = self.config.loss.form;
        let loss = mtl_loss(losses, &params, form)?;
        let (d_l, d_w) = mtl_loss_grad(losses, &params, form);

        let flat = |a: Array2<f64>| {
            if a.is_standard_layout() {
                let n = a.len();
                let (v, offset) = a.into_raw_vec_and_offset();
                debug_assert!(offset == Some(0) && v.len() == n);
                v
            } else {
                a.iter().copied().collect::<Vec<f64>>()
            }
        };
        let top = cache.activations.last().expect("nonempty");
        let mut grad_top: Array2<f64> = Array2::zeros(top.raw_dim());
        let mut head_grads = Vec::with_capacity(self.heads.len() * 4);
        for (k, h) in self.heads.iter().enumerate() {
            match &logit_grads[k] {
                None => {
                    for l in [&h.hidden, &h.output] {
                        head_grads.push(vec![0.0; l.weight.len()]);
                        head_grads.push(vec![0.0; l.bias.len()]);
                    }
                }
                Some(g) => {
                    let g = g * d_l[h.task.index()];
                    let (og, g_hidden) = h.output.backward_batch(cache.head_hidden[k].view(), g.view());
                    let (hg, g_top) = h.hidden.backward_batch(top.view(), g_hidden.view());
                    grad_top += &g_top;
                    head_grads.push(flat(hg.weight));
                    head_grads.push(hg.bias.to_vec());
                    head_grads.push(flat(og.weight));
                    head_grads.push(og.bias.to_vec());
                }
            }
        }

        let mut enc_grads = Vec::with_capacity(self.encoder.len() * 2);
        let mut g = grad_top;
        for (k, layer) in self.encoder.iter().enumerate().rev() {
            relu_backward_inplace(&mut g, &cache.activations[k + 1]);
            let input = cache.activations[k].view();
            if k == 0 {
                let pg = layer.param_grads(input, g.view());
                enc_grads.push((flat(pg.weight), pg.bias.to_vec()));
                break;
            }
            let (pg, g_in) = layer.backward_batch(input, g.view());
            enc_grads.push((flat(pg.weight), pg.bias.to_vec()));
            g = g_in;
        }

        let mut grads = Vec::with_capacity(enc_grads.len() * 2 + head_grads.len() + 1);
        for (w, b) in enc_grads.into_iter().rev() {
            grads.push(w);
            grads.push(b);
        }
        grads.extend(head_grads);
        grads.push(if self.config.loss.learn_task_weights {
            d_w.to_vec()
        } else {
            vec![0.0; 3]
        });
        Ok((loss, grads))
    }
}
