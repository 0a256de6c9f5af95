use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Batch, LossForm, NetworkConfig, PainNet, TaskSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Minimum number of parameters compared.
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that gradients at the
    /// level of rounding noise are not blown up into large ratios.
    pub floor: f64,
    pub seed: u64,
    /// Test hook: multiplies every analytic gradient by this factor.
    pub corrupt: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 120,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    /// Draws discarded because the perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.max_rel_error <= self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn loss_and_pattern(net: &PainNet, batch: &Batch) -> Result<(f64, Vec<bool>)> {
    let cache = net.forward(batch.inputs)?;
    let pattern = cache.relu_pattern();
    Ok((net.loss_from_cache(&cache, batch)?.total, pattern))
}

/// Compares analytic gradients against central finite differences.
///
/// Every task scalar whose coefficient is nonzero is always checked; the
/// remaining draws are spread round-robin over the tensors. A draw whose
/// perturbation changes the sign of any encoder pre-activation is
/// discarded, since the loss is not differentiable across that kink.
pub fn check_gradients(
    net: &mut PainNet,
    batch: &Batch,
    label: &str,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, mut analytic) = net.loss_and_grad(batch)?;
    if let Some(f) = opts.corrupt {
        for g in &mut analytic {
            g.iter_mut().for_each(|v| *v *= f);
        }
    }
    let names = net.tensor_names();
    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let w_tensor = sizes.len() - 1;
    let (_, base_pattern) = loss_and_pattern(net, batch)?;

    let mut picks: Vec<(usize, usize)> = Vec::new();
    if net.config().loss.learn_task_weights {
        let c = net.config().effective_coefficients();
        picks.extend((0..3).filter(|t| c[*t] > 0.0).map(|t| (w_tensor, t)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    let mut skipped = 0;
    let mut cursor = 0;
    let max_draws = opts.samples * 20 + picks.len();
    let mut draws = 0;
    while entries.len() < opts.samples.max(picks.len()) {
        if draws >= max_draws {
            return Err(Error::Numerical(format!(
                "gradient check could not find {} kink-free parameters",
                opts.samples
            )));
        }
        draws += 1;
        let (k, i) = if let Some(p) = picks.get(entries.len() + skipped) {
            *p
        } else {
            // task scalars were handled above
            let k = cursor % w_tensor;
            cursor += 1;
            (k, rng.random_range(0..sizes[k]))
        };

        let orig = net.tensors()[k][i];
        net.tensors_mut()[k][i] = orig + opts.step;
        let (lp, pp) = loss_and_pattern(net, batch)?;
        net.tensors_mut()[k][i] = orig - opts.step;
        let (lm, pm) = loss_and_pattern(net, batch)?;
        net.tensors_mut()[k][i] = orig;

        if pp != base_pattern || pm != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * opts.step);
        let a = analytic[k][i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel_error = (a - numeric).abs() / denom;
        if !rel_error.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at {}[{i}]", names[k])));
        }
        entries.push(GradCheckEntry {
            tensor: names[k].clone(),
            index: i,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        label: label.to_string(),
        entries,
        max_rel_error,
        skipped_kinks: skipped,
        tolerance: opts.tolerance,
    })
}

/// Full-size ST-NN (binary and 5-class) and MT-NN T(GA) under both loss
/// forms, each on a small random batch.
pub fn gradcheck_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let all = TaskSet {
        age: true,
        gender: true,
    };
    let cases = [
        ("ST-NN binary", NetworkConfig::st_nn(6, 2)),
        ("ST-NN 5-class", NetworkConfig::st_nn(6, 5)),
        ("MT-NN T(GA) kendall-corrected", NetworkConfig::mt_nn(8, 5, all)),
        ("MT-NN T(GA) paper-literal", {
            let mut c = NetworkConfig::mt_nn(8, 5, all);
            c.loss.form = LossForm::PaperLiteral;
            c
        }),
    ];
    let batch_size = 6;
    let mut reports = Vec::with_capacity(cases.len());
    for (case, (label, config)) in cases.into_iter().enumerate() {
        let seed = opts.seed.wrapping_add(case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = config.input_dim;
        let x = Array2::from_shape_simple_fn((batch_size, dim), || rng.random_range(-2.0..2.0));
        let pain: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..config.pain_classes)).collect();
        let age: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..config.age_classes)).collect();
        let gender: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..2)).collect();
        let mut net = PainNet::new(config, seed)?;
        // move the task scalars off zero so both exp(w) and exp(-w) matter
        for (t, w) in net.task_weights.iter_mut().enumerate() {
            *w = [0.3, -0.4, 0.2][t];
        }
        let batch = Batch {
            inputs: x.view(),
            pain: &pain,
            age: Some(&age),
            gender: Some(&gender),
        };
        let case_opts = GradCheckOptions { seed, ..*opts };
        reports.push(check_gradients(&mut net, &batch, label, &case_opts)?);
    }
    Ok(reports)
}
