//! Training loop: Adam with a per-step cosine-annealed learning rate,
//! seeded shuffling and flip augmentation, per-epoch held-out evaluation,
//! and checkpointing.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{augment_flip, batch_tensors, Sample};
use crate::error::{Result, SanetError};
use crate::init::{mix_seed, rng_from_seed};
use crate::layers::{ParamEntry, ParamKind};
use crate::loss::{soft_iou_loss, SOFT_IOU_EPS};
use crate::metrics::{binarize, evaluate_pair, AggregateMetrics, MetricReport};
use crate::network::SANet;
use crate::scalar::Scalar;
use crate::tape::Tape;

/// Salt decorrelating the augmentation stream from the shuffle stream.
const FLIP_SALT: u64 = 0x666c_6970;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch: usize,
    pub eta_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Fraction of the training set held out for per-epoch metrics when no
    /// explicit validation set is given; 0 disables the split.
    pub holdout_frac: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    pub threshold: f64,
    pub match_radius: f64,
    /// Write a checkpoint every N epochs into `ckpt_dir`; 0 disables.
    pub ckpt_every: usize,
    #[serde(skip)]
    pub ckpt_dir: Option<PathBuf>,
    /// Evaluate the held-out split every N epochs (the last epoch always
    /// evaluates).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            epochs: 50,
            batch: 8,
            eta_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            holdout_frac: 0.2,
            grad_clip: 0.0,
            threshold: 0.5,
            match_radius: 3.0,
            ckpt_every: 0,
            ckpt_dir: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 < 0.0 {
            return Err(SanetError::InvalidArg("lr0 must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(SanetError::InvalidArg(
                "epochs and batch must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(SanetError::InvalidArg(
                "holdout_frac must lie in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine annealing: `eta_min + 0.5*(lr0 - eta_min)*(1 + cos(pi*t/total))`.
/// Steps past the schedule clamp to `eta_min` with a warning.
pub fn cosine_lr(t: u64, total: u64, lr0: f64, eta_min: f64) -> f64 {
    if t > total {
        eprintln!("warning: cosine_lr step {t} beyond schedule {total}; clamping to eta_min");
        return eta_min;
    }
    let frac = if total == 0 { 1.0 } else { t as f64 / total as f64 };
    eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Per-parameter Adam moments, laid out in registry order over the trainable
/// entries.
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[ParamEntry<T>]) -> Self {
        let trainable: Vec<usize> = params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.numel())
            .collect();
        AdamState {
            m: trainable.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: trainable.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One Adam update over every trainable parameter. Parameters with no
/// gradient (no loss path) are treated as zero-gradient. A non-finite
/// gradient aborts the step, naming the parameter.
pub fn adam_step<T: Scalar>(
    params: &[ParamEntry<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.adam_eps);

    let mut slot = 0;
    for p in params {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let grad = p.tensor.grad();
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        slot += 1;
        let Some(grad) = grad else { continue };
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(SanetError::NonFinite(format!(
                "gradient of parameter '{}' at index {} is {}",
                p.name, i, grad[i]
            )));
        }
        let mut data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Learning rate used by the first optimizer step of the epoch.
    pub lr: f64,
    /// Mean soft-IoU loss over the epoch's batches.
    pub loss: f64,
    /// Held-out metrics, when an evaluation ran this epoch.
    pub metrics: Option<AggregateMetrics>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// `epoch,lr,loss,iou,niou,pd,fa` with empty metric cells on epochs that
    /// did not evaluate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,iou,niou,pd,fa\n");
        for e in &self.epochs {
            match &e.metrics {
                Some(m) => out.push_str(&format!(
                    "{},{:.8e},{:.8e},{:.6},{:.6},{},{:.8}\n",
                    e.epoch,
                    e.lr,
                    e.loss,
                    m.iou,
                    m.niou,
                    m.pd.map_or("nan".to_string(), |v| format!("{v:.6}")),
                    m.fa
                )),
                None => out.push_str(&format!("{},{:.8e},{:.8e},,,,\n", e.epoch, e.lr, e.loss)),
            }
        }
        out
    }
}

fn fisher_yates(indices: &mut [usize], rng: &mut crate::init::SeedRng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Trains in place. When `val_set` is `None` and `holdout_frac > 0`, the last
/// fraction of a seed-shuffled copy of `train_set` becomes the held-out
/// split. Fully reproducible for a given seed.
pub fn train(
    model: &SANet<f32>,
    train_set: &[Sample],
    val_set: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(SanetError::Dataset("training set is empty".into()));
    }

    // Resolve the train/holdout split.
    let (train_idx, holdout): (Vec<usize>, Vec<&Sample>) = match val_set {
        Some(v) => ((0..train_set.len()).collect(), v.iter().collect()),
        None if cfg.holdout_frac > 0.0 => {
            let mut idx: Vec<usize> = (0..train_set.len()).collect();
            let mut rng = rng_from_seed(mix_seed(cfg.seed, 0xdeadbeef));
            fisher_yates(&mut idx, &mut rng);
            let n_hold = ((train_set.len() as f64) * cfg.holdout_frac).floor() as usize;
            let split = train_set.len() - n_hold;
            let hold = idx[split..].iter().map(|&i| &train_set[i]).collect();
            (idx[..split].to_vec(), hold)
        }
        None => ((0..train_set.len()).collect(), Vec::new()),
    };
    if train_idx.is_empty() {
        return Err(SanetError::Dataset(
            "holdout split leaves no training samples".into(),
        ));
    }

    let params = model.params();
    let mut adam = AdamState::new(&params);
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch) as u64;
    let total_steps = cfg.epochs as u64 * steps_per_epoch;

    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        let mut shuffle_rng = rng_from_seed(mix_seed(cfg.seed, epoch as u64));
        fisher_yates(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0u32;
        let mut first_lr = None;
        for (batch_no, chunk) in order.chunks(cfg.batch).enumerate() {
            // Per-item augmentation seeds: independent of batch assembly.
            let augmented: Vec<Sample> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let item = (batch_no * cfg.batch + k) as u64;
                    let mut rng = rng_from_seed(mix_seed(
                        mix_seed(cfg.seed ^ FLIP_SALT, epoch as u64),
                        item,
                    ));
                    augment_flip(&train_set[i], &mut rng)
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (x, y) = batch_tensors(&refs)?;

            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &x, true)?;
            let loss = soft_iou_loss(&mut tape, &pred, &y, SOFT_IOU_EPS)?;
            let loss_val = loss.item() as f64;
            if !loss_val.is_finite() {
                let ids: Vec<&str> = augmented.iter().map(|s| s.id.as_str()).collect();
                return Err(SanetError::Training(format!(
                    "loss became {loss_val} at epoch {epoch}; last batch: {}",
                    ids.join(", ")
                )));
            }
            model.zero_grads();
            tape.backward(&loss)?;

            if cfg.grad_clip > 0.0 {
                clip_global_norm(&params, cfg.grad_clip);
            }
            let lr = cosine_lr(adam.step, total_steps, cfg.lr0, cfg.eta_min);
            first_lr.get_or_insert(lr);
            adam_step(&params, &mut adam, lr, cfg)?;

            epoch_loss += loss_val;
            batches += 1;
        }

        let evaluate_now = !holdout.is_empty()
            && (epoch % cfg.eval_every.max(1) == 0 || epoch == cfg.epochs);
        let metrics = if evaluate_now {
            let report = evaluate_refs(model, &holdout, cfg.threshold, cfg.match_radius)?;
            Some(report.aggregate)
        } else {
            None
        };

        history.epochs.push(EpochStats {
            epoch,
            lr: first_lr.unwrap_or(cfg.eta_min),
            loss: epoch_loss / batches as f64,
            metrics,
        });

        if cfg.ckpt_every > 0 && epoch % cfg.ckpt_every == 0 {
            if let Some(dir) = &cfg.ckpt_dir {
                std::fs::create_dir_all(dir)?;
                checkpoint::save(&dir.join(format!("epoch_{epoch:04}.ckpt")), model, adam.step)?;
            }
        }
    }
    Ok(history)
}

fn clip_global_norm(params: &[ParamEntry<f32>], clip: f64) {
    let mut sq = 0.0f64;
    for p in params {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        if let Some(g) = p.tensor.grad() {
            for v in g {
                sq += (v as f64) * (v as f64);
            }
        }
    }
    let norm = sq.sqrt();
    if norm <= clip {
        return;
    }
    let scale = (clip / norm) as f32;
    for p in params {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let numel = p.tensor.numel();
        if let Some(g) = p.tensor.grad() {
            p.tensor.clear_grad();
            let scaled: Vec<f32> = g.iter().map(|&v| v * scale).collect();
            debug_assert_eq!(scaled.len(), numel);
            p.tensor.accumulate_grad(&scaled);
        }
    }
}

/// Runs the model over a dataset and assembles the full metric report.
/// Images are processed in dataset order; batching does not affect results
/// because every op treats batch items independently in inference mode.
pub fn evaluate(
    model: &SANet<f32>,
    samples: &[Sample],
    threshold: f64,
    match_radius: f64,
) -> Result<MetricReport> {
    let refs: Vec<&Sample> = samples.iter().collect();
    evaluate_refs(model, &refs, threshold, match_radius)
}

fn evaluate_refs(
    model: &SANet<f32>,
    samples: &[&Sample],
    threshold: f64,
    match_radius: f64,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(SanetError::Dataset("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let (x, _) = batch_tensors(chunk)?;
        let pred = model.forward(&mut Tape::no_grad(), &x, false)?;
        let masks = binarize(&pred, threshold)?;
        for (s, m) in chunk.iter().zip(masks) {
            rows.push(evaluate_pair(&s.id, &m, &s.mask, match_radius)?);
        }
    }
    Ok(MetricReport::from_images(rows, threshold, match_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthParams};
    use crate::network::{build, SANetConfig};
    use crate::tensor::Tensor;

    fn tiny_model(seed: u64) -> SANet<f32> {
        let cfg = SANetConfig {
            base_channels: 4,
            stages: 2,
            ..SANetConfig::default()
        };
        build(&cfg, seed).unwrap()
    }

    fn tiny_data(n: usize) -> Vec<Sample> {
        let params = SynthParams {
            height: 16,
            width: 16,
            ..SynthParams::default()
        };
        synth_dataset(&params, 0, n).unwrap()
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 0.0), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 0.0) - 0.0).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 0.0) - 5e-4).abs() < 1e-12);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-12);
        // Past the schedule: clamped.
        assert_eq!(cosine_lr(101, 100, 1e-3, 1e-5), 1e-5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With g = 1 at t = 1 the bias-corrected update is
        // lr * 1/(1 + eps') ~ lr.
        let p = Tensor::<f32>::scalar(0.0).requires_grad();
        p.accumulate_grad(&[1.0]);
        let entry = ParamEntry::trainable("p".into(), &p);
        let params = vec![entry];
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&params, &mut state, 0.1, &cfg).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-6, "{}", p.item());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_alone() {
        let p = Tensor::<f32>::new(&[2], vec![0.5, -0.25]).unwrap().requires_grad();
        p.accumulate_grad(&[0.0, 0.0]);
        let params = vec![ParamEntry::trainable("p".into(), &p)];
        let mut state = AdamState::new(&params);
        adam_step(&params, &mut state, 0.1, &TrainConfig::default()).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, -0.25]);
    }

    #[test]
    fn adam_matches_hand_stepped_scalar_transcript() {
        // Three steps of f(x) = x^2 from x = 1, lr = 0.1: gradients 2x.
        let cfg = TrainConfig::default();
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.adam_eps);
        let mut x_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut transcript = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            x_ref -= 0.1 * m_hat / (v_hat.sqrt() + eps);
            transcript.push(x_ref);
        }

        let p = Tensor::<f64>::scalar(1.0).requires_grad();
        let params = vec![ParamEntry::trainable("x".into(), &p)];
        let mut state = AdamState::new(&params);
        for (t, want) in transcript.iter().enumerate() {
            p.clear_grad();
            p.accumulate_grad(&[2.0 * p.item()]);
            adam_step(&params, &mut state, 0.1, &cfg).unwrap();
            assert!(
                (p.item() - want).abs() < 1e-12,
                "step {}: {} vs {}",
                t + 1,
                p.item(),
                want
            );
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_parameter_name() {
        let p = Tensor::<f32>::scalar(0.0).requires_grad();
        p.accumulate_grad(&[f32::NAN]);
        let params = vec![ParamEntry::trainable("enc1.dsm.a0.w".into(), &p)];
        let mut state = AdamState::new(&params);
        let err = adam_step(&params, &mut state, 0.1, &TrainConfig::default())
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("enc1.dsm.a0.w"), "{err}");
    }

    #[test]
    fn zero_lr_epoch_leaves_trainable_params_bitwise_identical() {
        let model = tiny_model(5);
        let data = tiny_data(4);
        let before: Vec<(String, Vec<u64>)> = model
            .params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| {
                (
                    p.name.clone(),
                    p.tensor.data().iter().map(|v| v.to_bits() as u64).collect(),
                )
            })
            .collect();
        let cfg = TrainConfig {
            lr0: 0.0,
            epochs: 1,
            batch: 4,
            holdout_frac: 0.0,
            eval_every: 0,
            ..TrainConfig::default()
        };
        train(&model, &data, None, &cfg).unwrap();
        for (p, (name, bits)) in model
            .params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .zip(&before)
        {
            assert_eq!(&p.name, name);
            let now: Vec<u64> = p.tensor.data().iter().map(|v| v.to_bits() as u64).collect();
            assert_eq!(&now, bits, "{name} changed under lr=0");
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let data = tiny_data(6);
        let cfg = TrainConfig {
            epochs: 2,
            batch: 3,
            holdout_frac: 0.0,
            ..TrainConfig::default()
        };
        let run = || {
            let model = tiny_model(9);
            train(&model, &data, None, &cfg).unwrap().to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lambda_moves_off_zero_after_first_step() {
        let model = tiny_model(3);
        let data = tiny_data(4);
        let cfg = TrainConfig {
            epochs: 1,
            batch: 4,
            holdout_frac: 0.0,
            ..TrainConfig::default()
        };
        train(&model, &data, None, &cfg).unwrap();
        let lambdas = model.lambdas();
        assert!(
            lambdas.iter().any(|l| l.item() != 0.0),
            "no residual weight received a gradient"
        );
    }

    #[test]
    fn oracle_predictions_score_perfectly() {
        // Feed each ground-truth mask through the metric path directly.
        let data = tiny_data(5);
        let rows: Vec<_> = data
            .iter()
            .map(|s| evaluate_pair(&s.id, &s.mask, &s.mask, 3.0).unwrap())
            .collect();
        let report = MetricReport::from_images(rows, 0.5, 3.0);
        assert_eq!(report.aggregate.iou, 1.0);
        assert_eq!(report.aggregate.niou, 1.0);
        assert_eq!(report.aggregate.pd, Some(1.0));
        assert_eq!(report.aggregate.fa, 0.0);
    }

    #[test]
    fn threshold_above_one_gives_empty_predictions() {
        let model = tiny_model(2);
        let data = tiny_data(3);
        let report = evaluate(&model, &data, 1.01, 3.0).unwrap();
        assert_eq!(report.aggregate.pd, Some(0.0));
        assert_eq!(report.aggregate.fa, 0.0);
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        let model = tiny_model(2);
        assert!(evaluate(&model, &[], 0.5, 3.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_evaluation() {
        let dir = std::env::temp_dir().join("sanet-trainer-ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");
        let model = tiny_model(8);
        let data = tiny_data(4);
        let cfg = TrainConfig {
            epochs: 2,
            batch: 2,
            holdout_frac: 0.0,
            ..TrainConfig::default()
        };
        train(&model, &data, None, &cfg).unwrap();
        let before = evaluate(&model, &data, 0.5, 3.0).unwrap().to_json();
        checkpoint::save(&path, &model, 4).unwrap();
        let (loaded, _) = checkpoint::load::<f32>(&path).unwrap();
        let after = evaluate(&loaded, &data, 0.5, 3.0).unwrap().to_json();
        assert_eq!(before, after);
    }
}
