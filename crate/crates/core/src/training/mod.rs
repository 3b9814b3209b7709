//! Joint regression/reconstruction loss, Adam, the training loop,
//! section-wide prediction, trace metrics and checkpoints.

mod checkpoint;
mod metrics;
mod optim;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{extract_patch, hflip, Dataset, GridKind, Norm, SectionGrid, TrainingSample};
use crate::models::{build_model, model_forward, ModelConfig, ModelParams};
use crate::tensor::{Float, Graph, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, read_history_csv, save_checkpoint, write_history_csv, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use metrics::{evaluate_columns, evaluate_section, pcc, r2, Metrics, TraceMetrics};
pub use optim::{adam_step, AdamHyper, AdamState};

/// Random streams derived from [`TrainConfig::seed`].
pub const INIT_STREAM: u64 = 11;
pub const SHUFFLE_STREAM: u64 = 12;
pub const FLIP_STREAM: u64 = 13;
pub const DROPOUT_STREAM: u64 = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight of the regression term.
    pub alpha: f64,
    /// Weight of the reconstruction term.
    pub beta: f64,
    /// Probability of mirroring a training patch left to right.
    pub flip_prob: f64,
    pub seed: u64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 14,
            lr: 1e-3,
            weight_decay: 1e-4,
            alpha: 1.0,
            beta: 0.5,
            flip_prob: 0.5,
            seed: 1337,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !positive(self.lr) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        for (field, v) in [
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !non_negative(v) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::config("alpha", "alpha and beta cannot both be zero"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(
                "flip_prob",
                format!("must lie in [0, 1], got {}", self.flip_prob),
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("betas", format!("must lie in [0, 1), got {:?}", self.betas)));
        }
        if !positive(self.eps) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Freshly initialized parameters for `model`, drawn from the init stream of
/// `train.seed`.
pub fn init_model(model: &ModelConfig, train: &TrainConfig) -> Result<ModelParams<f32>> {
    build_model(model, &mut train.rng(INIT_STREAM))
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub y: Var,
    pub x: Option<Var>,
}

/// `alpha * mse(y_hat, y) + beta * mse(x_hat, x)`; the reconstruction term
/// is dropped when `recon` is `None`.
pub fn total_loss<T: Float>(
    g: &mut Graph<T>,
    y_hat: Var,
    y: Var,
    recon: Option<(Var, Var)>,
    alpha: f64,
    beta: f64,
) -> Result<LossTerms> {
    let ly = g.mse(y_hat, y)?;
    let mut total = g.scale(ly, T::from_f64_lossy(alpha))?;
    let mut x = None;
    if let Some((x_hat, x_true)) = recon {
        let lx = g.mse(x_hat, x_true)?;
        let weighted = g.scale(lx, T::from_f64_lossy(beta))?;
        total = g.add(total, weighted)?;
        x = Some(lx);
    }
    Ok(LossTerms { total, y: ly, x })
}

/// Per-epoch means over all samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub loss_y: f64,
    pub loss_x: f64,
}

/// Stacks samples into `[B, 1, d, m]` patches and `[B, d]` targets.
pub fn stack_batch(samples: &[TrainingSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples.first().ok_or(Error::EmptyInput("stack_batch"))?;
    let (d, m) = (first.patch.shape()[1], first.patch.shape()[2]);
    let mut x = Vec::with_capacity(samples.len() * d * m);
    let mut y = Vec::with_capacity(samples.len() * d);
    for s in samples {
        if s.patch.shape() != first.patch.shape() || s.target.len() != d {
            return Err(Error::shape("stack_batch", s.patch.shape(), first.patch.shape()));
        }
        x.extend_from_slice(s.patch.data());
        y.extend_from_slice(&s.target);
    }
    Ok((
        Tensor::new([samples.len(), 1, d, m], x)?,
        Tensor::new([samples.len(), d], y)?,
    ))
}

/// Loss values of one batch and the gradient of the total loss with respect
/// to every parameter (in [`ModelParams::named_params`] order).
pub struct BatchGradients {
    pub loss: f64,
    pub loss_y: f64,
    pub loss_x: f64,
    pub grads: Vec<Tensor<f32>>,
}

#[allow(clippy::too_many_arguments)]
pub fn batch_gradients<R: Rng + ?Sized>(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    patches: Tensor<f32>,
    targets: Tensor<f32>,
    alpha: f64,
    beta: f64,
    training: bool,
    rng: &mut R,
) -> Result<BatchGradients> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let x = g.constant(patches);
    let y = g.constant(targets);
    let out = vars.forward(&mut g, model, x, training, rng)?;
    let recon = out.x_hat.zip(out.x_target);
    let terms = total_loss(&mut g, out.y_hat, y, recon, alpha, beta)?;
    let scalar = |g: &Graph<f32>, v: Var| g.value(v).data()[0] as f64;
    let (loss, loss_y) = (scalar(&g, terms.total), scalar(&g, terms.y));
    let loss_x = terms.x.map_or(0.0, |v| scalar(&g, v));
    g.backward(terms.total)?;
    let grads = vars
        .vars()
        .into_iter()
        .zip(params.named_params())
        .map(|(v, (_, t))| {
            g.take_grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    Ok(BatchGradients {
        loss,
        loss_y,
        loss_x,
        grads,
    })
}

pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub adam: AdamState<f32>,
}

/// Trains `params` in place on every sample of `data`.
///
/// Each epoch shuffles the samples, cuts them into batches of
/// `batch_size` (the last one may be short), mirrors each patch with
/// probability `flip_prob` and takes one Adam step per batch. Shuffling,
/// flip draws and dropout use separate streams of `config.seed`, so the
/// history is reproducible bit for bit.
pub fn train(
    params: &mut ModelParams<f32>,
    model: &ModelConfig,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyInput("train (empty dataset)"));
    }
    let mut shuffle_rng = config.rng(SHUFFLE_STREAM);
    let mut flip_rng = config.rng(FLIP_STREAM);
    let mut dropout_rng = config.rng(DROPOUT_STREAM);
    let hyper = config.adam();
    let mut adam = AdamState::new(params.named_params().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut sum_y, mut sum_x) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingSample> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.samples[i];
                    if flip_rng.random::<f64>() < config.flip_prob {
                        hflip(s)
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let (x, y) = stack_batch(&batch)?;
            let step = batch_gradients(
                params,
                model,
                x,
                y,
                config.alpha,
                config.beta,
                true,
                &mut dropout_rng,
            )?;
            if !step.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam_step(&mut params.params_mut(), &step.grads, &mut adam, &hyper)?;
            let b = chunk.len() as f64;
            sum += step.loss * b;
            sum_y += step.loss_y * b;
            sum_x += step.loss_x * b;
        }
        let n = data.samples.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: sum / n,
            loss_y: sum_y / n,
            loss_x: sum_x / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { history, adam })
}

/// Everything needed to run a trained network on new seismic.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub params: ModelParams<f32>,
    pub seismic_norm: Norm,
    pub impedance_norm: Norm,
}

/// Columns pushed through the network at once by [`predict_section`].
pub const PREDICT_BATCH: usize = 32;

/// Estimated impedance for every column of `seismic`, in physical units.
pub fn predict_section(trained: &TrainedModel, seismic: &SectionGrid) -> Result<SectionGrid> {
    let (d, n) = (seismic.depth(), seismic.width());
    if let Some(depth) = trained.model.depth {
        if depth != d {
            return Err(Error::shape("predict_section depth", &[d, n], &[depth, n]));
        }
    }
    let m = trained.model.patch_width;
    // dropout is off, so this stream is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut values = vec![0f32; d * n];
    let cols: Vec<usize> = (0..n).collect();
    for chunk in cols.chunks(PREDICT_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * d * m);
        for &c in chunk {
            let patch = extract_patch(seismic, c, m)?;
            data.extend(patch.data().iter().map(|&v| trained.seismic_norm.apply(v)));
        }
        let x = Tensor::new([chunk.len(), 1, d, m], data)?;
        let (y, _) = model_forward(&trained.params, &trained.model, &x, false, &mut rng)?;
        for (b, &c) in chunk.iter().enumerate() {
            for z in 0..d {
                values[z * n + c] = trained.impedance_norm.inverse(y.data()[b * d + z]);
            }
        }
    }
    let mut grid = SectionGrid::new(d, n, values, seismic.dz, seismic.dx, GridKind::Impedance)?;
    grid.axis = seismic.axis;
    Ok(grid)
}

#[cfg(test)]
mod tests;
