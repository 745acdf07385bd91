//! Objective, optimizer, learning-rate schedule, and the training loop.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numeric::{central_difference, max_relative_error, Matrix, OpKind, Real, Tape};

/// Windows per independently recorded tape inside a batch. Gradients of the
/// chunks are reduced in chunk order, so results do not depend on threads.
const CHUNK: usize = 8;

pub fn mse_loss<T: Real>(y: &Matrix<T>, y_hat: &Matrix<T>) -> Result<T> {
    let d = y.sub(y_hat).map_err(|_| Error::Shape {
        op: "mse_loss",
        left: y.shape(),
        right: y_hat.shape(),
    })?;
    let mut acc = T::zero();
    for &v in d.as_slice() {
        acc += v * v;
    }
    Ok(acc / T::from_count(d.len().max(1)))
}

pub fn mae_metric<T: Real>(y: &Matrix<T>, y_hat: &Matrix<T>) -> Result<T> {
    let d = y.sub(y_hat).map_err(|_| Error::Shape {
        op: "mae_metric",
        left: y.shape(),
        right: y_hat.shape(),
    })?;
    let mut acc = T::zero();
    for &v in d.as_slice() {
        acc += v.abs();
    }
    Ok(acc / T::from_count(d.len().max(1)))
}

/// `base · ½(1 + cos(π · step / total))`, clamped at zero.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let frac = (step as f64 / total).min(1.0);
    (base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 10,
            patience: 3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be a nonnegative number, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("batch_size and patience must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("adam_eps must be positive and weight_decay nonnegative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ModelParams<Matrix<T>>,
    pub v: ModelParams<Matrix<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ModelParams<Matrix<T>>, hp: &TrainConfig) -> Self {
        let zeros = params.map(&mut |_, m| Matrix::zeros(m.rows(), m.cols()));
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.adam_eps,
            weight_decay: hp.weight_decay,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step<T: Real>(
    params: &mut ModelParams<Matrix<T>>,
    grads: &ModelParams<Matrix<T>>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::config(format!("learning rate must be nonnegative, got {lr}")));
    }
    let names = params.names();
    let grads = grads.tensors();
    for (name, g) in names.iter().zip(&grads) {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("gradient of {name} is not finite")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * state.weight_decay;
    let eps = state.eps;
    let tensors = params.tensors_mut().into_iter().zip(grads);
    for ((p, g), (m, v)) in tensors.zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut())) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        let it = p.as_mut_slice().iter_mut().zip(g.as_slice());
        for ((pi, &gi), (mi, vi)) in it.zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice())) {
            let gf = gi.as_f64();
            let mf = b1 * mi.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vi.as_f64() + (1.0 - b2) * gf * gf;
            *mi = T::from_f64_lossy(mf);
            *vi = T::from_f64_lossy(vf);
            let m_hat = mf / c1;
            let v_hat = vf / c2;
            let next = pi.as_f64() * decay - lr * m_hat / (v_hat.sqrt() + eps);
            *pi = T::from_f64_lossy(next);
        }
    }
    Ok(())
}

/// Target rows in the model's series order: window-major, channel-minor.
fn stack_targets<T: Real>(samples: &[&Sample<T>]) -> Matrix<T> {
    let channels = samples.first().map_or(0, |s| s.target.cols());
    let horizon = samples.first().map_or(0, |s| s.target.rows());
    let mut out = Matrix::zeros(samples.len() * channels, horizon);
    for (b, s) in samples.iter().enumerate() {
        for m in 0..channels {
            let row = out.row_mut(b * channels + m);
            for (t, slot) in row.iter_mut().enumerate() {
                *slot = s.target.get(t, m);
            }
        }
    }
    out
}

/// Mean-squared-error loss of `samples` and its gradient for every tensor.
pub fn loss_and_grad<T: Real>(
    model: &Model<T>,
    samples: &[&Sample<T>],
    fault: Option<OpKind>,
) -> Result<(f64, ModelParams<Matrix<T>>)> {
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.corrupt_backward(kind);
    }
    let vars = model.params.to_tape(&mut tape);
    let windows: Vec<&Matrix<T>> = samples.iter().map(|s| &s.input).collect();
    let batch = model.prepare(&windows)?;
    let pred = model.forward_tape(&mut tape, &vars, &batch)?;
    let target = tape.leaf(stack_targets(samples));
    let loss = tape.mse(pred, target)?;
    let value = tape.value(loss).get(0, 0).as_f64();
    let mut grads = tape.backward(loss)?;
    let g = vars.map(&mut |_, v| grads.take(*v));
    Ok((value, g))
}

/// Batch loss and gradient, computed over fixed chunks possibly in parallel
/// and combined in chunk order.
fn batch_loss_and_grad<T: Real>(model: &Model<T>, batch: &[&Sample<T>]) -> Result<(f64, ModelParams<Matrix<T>>)> {
    let chunks: Vec<&[&Sample<T>]> = batch.chunks(CHUNK).collect();
    let parts: Vec<Result<(f64, ModelParams<Matrix<T>>)>> =
        chunks.par_iter().map(|c| loss_and_grad(model, c, None)).collect();
    let total = batch.len() as f64;
    let mut loss = 0.0;
    let mut acc: Option<ModelParams<Matrix<T>>> = None;
    for (part, chunk) in parts.into_iter().zip(&chunks) {
        let (l, g) = part?;
        let w = chunk.len() as f64 / total;
        loss += l * w;
        let wt = T::from_f64_lossy(w);
        let scaled = g.map(&mut |_, m| m.scale(wt));
        acc = Some(match acc {
            None => scaled,
            Some(mut a) => {
                for (x, y) in a.tensors_mut().into_iter().zip(scaled.tensors()) {
                    x.accumulate(y)?;
                }
                a
            }
        });
    }
    let grads = acc.ok_or_else(|| Error::data("empty batch"))?;
    Ok((loss, grads))
}

fn clip_gradients<T: Real>(grads: &mut ModelParams<Matrix<T>>, max_norm: f64) {
    let mut sq = 0.0;
    for g in grads.tensors() {
        for v in g.as_slice() {
            sq += v.as_f64() * v.as_f64();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.tensors_mut() {
            *g = g.scale(s);
        }
    }
}

/// Aggregate error metrics over a set of windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub samples: usize,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mse={:.6} mae={:.6}", self.mse, self.mae)
    }
}

/// Accumulates squared and absolute errors in 64-bit.
#[derive(Debug, Default, Clone, Copy)]
pub struct MetricSum {
    sq: f64,
    abs: f64,
    count: usize,
    samples: usize,
}

impl MetricSum {
    pub fn add<T: Real>(&mut self, target: &Matrix<T>, pred: &Matrix<T>) -> Result<()> {
        if target.shape() != pred.shape() {
            return Err(Error::Shape {
                op: "metrics",
                left: target.shape(),
                right: pred.shape(),
            });
        }
        for (a, b) in target.as_slice().iter().zip(pred.as_slice()) {
            let d = a.as_f64() - b.as_f64();
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += target.len();
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mse: self.sq / n,
            mae: self.abs / n,
            samples: self.samples,
        }
    }
}

/// Forecasts every sample with `model` and returns MSE and MAE.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[Sample<T>], batch_size: usize) -> Result<Metrics> {
    let parts: Vec<Result<MetricSum>> = samples
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let windows: Vec<&Matrix<T>> = chunk.iter().map(|s| &s.input).collect();
            let preds = model.forward(&windows)?;
            let mut sum = MetricSum::default();
            for (s, p) in chunk.iter().zip(&preds) {
                sum.add(&s.target, p)?;
            }
            Ok(sum)
        })
        .collect();
    let mut total = MetricSum::default();
    for p in parts {
        let p = p?;
        total.sq += p.sq;
        total.abs += p.abs;
        total.count += p.count;
        total.samples += p.samples;
    }
    Ok(total.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The epoch budget ran out.
    Completed,
    EarlyStopped,
    NoEpochs,
}

/// One line of the training log. Epoch 0 evaluates the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_mse={:.9} val_mse={:.9} lr={:.9e} seconds={:.3}",
            self.epoch, self.train_mse, self.val_mse, self.lr, self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// The log without wall-clock times, for reproducibility checks.
    pub fn loss_trace(&self) -> Vec<(usize, f64, f64, f64)> {
        self.epochs.iter().map(|e| (e.epoch, e.train_mse, e.val_mse, e.lr)).collect()
    }
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. With no validation windows, the train loss selects instead.
/// `on_epoch` receives every log line as it is produced.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    hp: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    hp.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("training set has no windows"));
    }
    for s in train_set.iter().chain(val_set) {
        if s.input.rows() != model.config.input_len || s.target.rows() != model.config.horizon {
            return Err(Error::Shape {
                op: "training window",
                left: (s.input.rows(), s.target.rows()),
                right: (model.config.input_len, model.config.horizon),
            });
        }
    }
    let eval_bs = hp.batch_size.max(CHUNK);
    let select = |model: &Model<T>, train_mse: f64| -> Result<f64> {
        if val_set.is_empty() {
            Ok(train_mse)
        } else {
            Ok(evaluate(model, val_set, eval_bs)?.mse)
        }
    };

    let started = Instant::now();
    let initial_train = evaluate(model, train_set, eval_bs)?.mse;
    let initial_val = select(model, initial_train)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_mse: initial_train,
        val_mse: initial_val,
        lr: hp.lr,
        seconds: started.elapsed().as_secs_f64(),
    }];
    on_epoch(&log[0]);

    let mut best = (0usize, initial_val, model.params.clone());
    let batches_per_epoch = train_set.len().div_ceil(hp.batch_size);
    let total_steps = batches_per_epoch * hp.epochs;
    let mut opt = OptimizerState::new(&model.params, hp);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut stale = 0usize;
    let mut stop = if hp.epochs == 0 {
        StopReason::NoEpochs
    } else {
        StopReason::Completed
    };

    for epoch in 1..=hp.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = hp.lr;
        for idx in order.chunks(hp.batch_size) {
            let batch: Vec<&Sample<T>> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_loss_and_grad(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} at epoch {epoch}, step {step}"
                )));
            }
            if let Some(c) = hp.clip_norm {
                clip_gradients(&mut grads, c);
            }
            lr = cosine_lr(step, total_steps, hp.lr);
            adamw_step(&mut model.params, &grads, &mut opt, lr).map_err(|e| match e {
                Error::Numeric(msg) => Error::Divergence(format!("{msg} at epoch {epoch}, step {step}")),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        model.params.check_finite().map_err(|e| Error::Divergence(e.to_string()))?;
        let train_mse = loss_sum / train_set.len() as f64;
        let val_mse = select(model, train_mse)?;
        if !val_mse.is_finite() {
            return Err(Error::Divergence(format!("validation loss became {val_mse} at epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_mse,
            val_mse,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if val_mse < best.1 {
            best = (epoch, val_mse, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }
    let (best_epoch, best_val_mse, params) = best;
    model.params = params;
    Ok(TrainReport {
        epochs: log,
        best_epoch,
        best_val_mse,
        stop_reason: stop,
    })
}

/// Worst relative gradient error of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the full-loss gradient of every tensor against central
/// differences. `fault` corrupts one backward rule to test the check itself.
pub fn gradient_check(
    model: &Model<f64>,
    samples: &[Sample<f64>],
    h: f64,
    fault: Option<OpKind>,
) -> Result<Vec<GroupError>> {
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let (_, grads) = loss_and_grad(model, &refs, fault)?;
    let analytic = grads.flatten();
    let theta = model.params.flatten();
    let mut probe = model.clone();
    let numeric = central_difference(
        |p| {
            probe.params = model.params.unflatten_like(p)?;
            let windows: Vec<&Matrix<f64>> = samples.iter().map(|s| &s.input).collect();
            let batch = probe.prepare(&windows)?;
            let pred = probe.predict_series(&batch)?;
            mse_loss(&stack_targets(&refs), &pred)
        },
        &theta,
        h,
    )?;
    let mut out = Vec::new();
    let mut offset = 0;
    model.params.visit(&mut |name, m| {
        let range = offset..offset + m.len();
        let (err, idx) = max_relative_error(&analytic[range.clone()], &numeric[range]);
        out.push(GroupError {
            group: name.to_string(),
            max_rel_error: err,
            worst_index: idx,
        });
        offset += m.len();
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numeric::Precision;
    use approx::assert_relative_eq;

    #[test]
    fn loss_examples() {
        let z = Matrix::<f64>::zeros(1, 2);
        let o = Matrix::filled(1, 2, 1.0);
        assert_eq!(mse_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(mse_loss(&z, &o).unwrap(), 1.0);
        let a = Matrix::row_vector(vec![3.0]);
        assert_eq!(mse_loss(&a, &Matrix::zeros(1, 1)).unwrap(), 9.0);
        let d = Matrix::row_vector(vec![1.0, -3.0]);
        assert_eq!(mae_metric(&d, &z).unwrap(), 2.0);
        assert!(mse_loss(&z, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 10, 1e-4), 1e-4);
        assert_relative_eq!(cosine_lr(5, 10, 1e-4), 5e-5, epsilon = 1e-18);
        assert!(cosine_lr(10, 10, 1e-4).abs() < 1e-20);
        let lrs: Vec<f64> = (0..=37).map(|s| cosine_lr(s, 37, 0.3)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn tiny_model() -> Model<f64> {
        let c = ModelConfig {
            input_len: 32,
            horizon: 8,
            patch_len: 8,
            stride: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            precision: Precision::F64,
            ..ModelConfig::default()
        };
        Model::init(&c, 5).unwrap()
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut m = tiny_model();
        let before = m.params.clone();
        let zeros = m.params.map(&mut |_, t| Matrix::zeros(t.rows(), t.cols()));
        let mut opt = OptimizerState::new(&m.params, &TrainConfig::default());
        adamw_step(&mut m.params, &zeros, &mut opt, 1e-3).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut m = tiny_model();
        let before = m.params.clone();
        let grads = m.params.map(&mut |_, t| {
            Matrix::from_vec(t.rows(), t.cols(), (0..t.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect())
                .unwrap()
        });
        let mut opt = OptimizerState::new(&m.params, &TrainConfig::default());
        adamw_step(&mut m.params, &grads, &mut opt, 1e-2).unwrap();
        for (a, b) in m.params.flatten().iter().zip(before.flatten()).zip(grads.flatten()).map(|((a, b), g)| (a - b, g)) {
            assert_relative_eq!(a, -1e-2 * b.signum(), max_relative = 1e-5);
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut m = tiny_model();
        let mut grads = m.params.map(&mut |_, t| Matrix::zeros(t.rows(), t.cols()));
        grads.head_bias.set(0, 0, f64::NAN);
        let mut opt = OptimizerState::new(&m.params, &TrainConfig::default());
        let e = adamw_step(&mut m.params, &grads, &mut opt, 1e-3).unwrap_err();
        assert!(e.to_string().contains("head.bias"), "{e}");
    }

    fn samples(n: usize) -> Vec<Sample<f64>> {
        (0..n)
            .map(|i| {
                let f = |t: usize| ((t + i) as f64 * 0.3).sin();
                Sample {
                    input: Matrix::from_vec(32, 1, (0..32).map(f).collect()).unwrap(),
                    target: Matrix::from_vec(8, 1, (32..40).map(f).collect()).unwrap(),
                    origin: 32 + i,
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = tiny_model();
        let before = m.params.clone();
        let hp = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &samples(4), &samples(2), &hp, |_| {}).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(r.stop_reason, StopReason::NoEpochs);
        assert_eq!(r.epochs.len(), 1);
    }

    #[test]
    fn chunked_gradient_matches_single_tape() {
        let m = Model::init_randomized(&tiny_model().config, 9).unwrap();
        let s = samples(19);
        let refs: Vec<&Sample<f64>> = s.iter().collect();
        let (l1, g1) = loss_and_grad(&m, &refs, None).unwrap();
        let (l2, g2) = batch_loss_and_grad(&m, &refs).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn log_line_format() {
        let e = EpochLog {
            epoch: 2,
            train_mse: 0.5,
            val_mse: 0.25,
            lr: 1e-4,
            seconds: 1.5,
        };
        let line = e.to_string();
        assert!(line.starts_with("epoch=2 train_mse=0.5"));
        assert!(line.contains(" val_mse=0.25") && line.contains(" lr=") && line.ends_with("seconds=1.500"));
    }
}
