//! Mini-batch training loop and the k-fold protocol.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backward::{backward_gradients, GradSample};
use super::kfold::assign_folds;
use super::loss::KdConfig;
use super::optim::{adam_update, lr_plateau_schedule, OptimizerState};
use super::teacher::TeacherLogits;
use crate::data::{Normalizer, Sample};
use crate::error::{Error, Result};
use crate::nn::layers::relu_in_place;
use crate::nn::model::run_range;
use crate::nn::{
    argmax, conv2d_forward, model_forward, LayerKind, LayerParams, ModelParams, ModelSpec,
};
use crate::par::{self, ExecMode};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Training stops once the scheduled rate falls below this.
    pub min_learning_rate: f64,
    /// Frames used to re-estimate batchnorm statistics each epoch.
    pub bn_calibration_samples: usize,
    /// `None` trains on hard labels only.
    pub kd: Option<KdConfig>,
    #[serde(skip)]
    pub mode: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            learning_rate: 1e-3,
            min_learning_rate: 1e-6,
            bn_calibration_samples: 256,
            kd: None,
            mode: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch budget must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.min_learning_rate >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if let Some(kd) = &self.kd {
            kd.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Sets every batchnorm's mean and variance to the statistics of its input
/// over `frames`, one layer at a time so that each layer sees already
/// calibrated upstream layers.
pub fn calibrate_batchnorm(
    spec: &ModelSpec,
    params: &mut ModelParams,
    frames: &[&Tensor],
    mode: ExecMode,
) -> Result<()> {
    if frames.is_empty() {
        return Ok(());
    }
    if let Some(f) = frames.iter().find(|f| f.shape() != spec.input) {
        return Err(Error::Config(format!(
            "input shape {} does not match model input {}",
            f.shape(),
            spec.input
        )));
    }
    // activations entering layer `next` for every frame
    let mut acts: Vec<Tensor> = frames.iter().map(|f| (*f).clone()).collect();
    let mut next = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        let LayerKind::Conv(c) = &layer.kind else {
            continue;
        };
        if !c.batchnorm {
            continue;
        }
        let snapshot = &*params;
        let LayerParams::Conv { conv, .. } = &snapshot.layers[i] else {
            return Err(Error::Config(format!(
                "layer {}: parameters are not a conv",
                layer.name
            )));
        };
        let pre_bn: Vec<Tensor> = par::map_indexed(mode, &acts, |_, x| {
            conv2d_forward(&run_range(spec, snapshot, x.clone(), next..i, None)?, conv)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let channels = c.out_channels;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for t in &pre_bn {
            for ch in 0..channels {
                for &v in t.channel(ch) {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (pre_bn[0].shape().plane() * frames.len()) as f64;
        let LayerParams::Conv { bn: Some(bn), .. } = &mut params.layers[i] else {
            return Err(Error::Config(format!(
                "layer {}: missing batchnorm",
                layer.name
            )));
        };
        for ch in 0..channels {
            let mean = sum[ch] / count;
            bn.mean[ch] = mean;
            bn.var[ch] = (sq[ch] / count - mean * mean).max(0.0);
        }
        let bn = &*bn;
        acts = pre_bn
            .into_iter()
            .map(|mut y| {
                bn.apply(&mut y)?;
                if c.relu {
                    relu_in_place(&mut y);
                }
                Ok(y)
            })
            .collect::<Result<_>>()?;
        next = i + 1;
    }
    Ok(())
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(
    spec: &ModelSpec,
    params: &ModelParams,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits = par::map_indexed(mode, samples, |_, s| {
        model_forward(spec, params, &s.frame).map(|l| argmax(&l) == s.label)
    });
    let mut correct = 0;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn has_batchnorm(spec: &ModelSpec) -> bool {
    spec.layers
        .iter()
        .any(|l| matches!(&l.kind, LayerKind::Conv(c) if c.batchnorm))
}

/// Trains `params` on already standardized `samples`. With `cfg.kd` set,
/// every sample needs a teacher entry.
pub fn train_model(
    spec: &ModelSpec,
    mut params: ModelParams,
    samples: &[Sample],
    teacher: Option<&TeacherLogits>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate(spec)?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let teacher_rows: Vec<Option<&[f64]>> = match (&cfg.kd, teacher) {
        (None, _) => vec![None; samples.len()],
        (Some(_), None) => return Err(Error::Config("distillation needs teacher logits".into())),
        (Some(_), Some(t)) => samples
            .iter()
            .map(|s| {
                t.get(&s.id).map(Some).ok_or_else(|| {
                    Error::Ingestion(format!("no teacher logits for sample {}", s.id))
                })
            })
            .collect::<Result<_>>()?,
    };
    let bn = has_batchnorm(spec);
    let mut state = OptimizerState::new(&params, cfg.learning_rate);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng::substream(seed, "shuffle", epoch as u64));
        if bn {
            let frames: Vec<_> = order
                .iter()
                .take(cfg.bn_calibration_samples)
                .map(|&i| &samples[i].frame)
                .collect();
            calibrate_batchnorm(spec, &mut params, &frames, cfg.mode)?;
        }
        let lr = state.learning_rate;
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<GradSample<'_>> = chunk
                .iter()
                .map(|&i| GradSample {
                    id: &samples[i].id,
                    frame: &samples[i].frame,
                    label: samples[i].label,
                    teacher: teacher_rows[i],
                })
                .collect();
            let (loss, grads) =
                backward_gradients(spec, &params, &batch, cfg.kd.as_ref(), cfg.mode)?;
            adam_update(&mut params, &grads, &mut state);
            total += loss * chunk.len() as f64;
        }
        let loss = total / samples.len() as f64;
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            learning_rate: lr,
        });
        lr_plateau_schedule(&mut state, loss);
        if state.learning_rate < cfg.min_learning_rate {
            break;
        }
    }
    if bn {
        let frames: Vec<_> = order
            .iter()
            .take(cfg.bn_calibration_samples)
            .map(|&i| &samples[i].frame)
            .collect();
        calibrate_batchnorm(spec, &mut params, &frames, cfg.mode)?;
    }
    Ok(TrainOutcome { params, history })
}

/// One trained fold.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub params: ModelParams,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub normalizer: Normalizer,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub k: usize,
    pub seed: u64,
    /// Fold index per sample, in dataset order.
    pub fold_assignment: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub mean_val_accuracy: f64,
    pub mean_test_accuracy: Option<f64>,
}

/// Stratified k-fold training on `dataset1`; every fold model is also
/// scored on `dataset2` when given. Standardization is fit on each fold's
/// training part only.
pub fn kfold_train(
    dataset1: &[Sample],
    dataset2: Option<&[Sample]>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    teacher: Option<&TeacherLogits>,
    k: usize,
    seed: u64,
) -> Result<(KFoldReport, Vec<FoldModel>)> {
    let labels: Vec<usize> = dataset1.iter().map(|s| s.label).collect();
    let assignment = assign_folds(&labels, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for fold in 0..k {
        let pick = |want: bool| -> Vec<&Sample> {
            dataset1
                .iter()
                .zip(&assignment)
                .filter(|(_, f)| (**f == fold) == want)
                .map(|(s, _)| s)
                .collect()
        };
        let (val, train) = (pick(true), pick(false));
        let normalizer = Normalizer::fit(train.iter().map(|s| &s.frame));
        let norm = |xs: &[&Sample]| {
            xs.iter()
                .map(|s| Sample {
                    frame: normalizer.apply(&s.frame),
                    ..(*s).clone()
                })
                .collect::<Vec<_>>()
        };
        let train_n = norm(&train);
        let val_n = norm(&val);
        let init = ModelParams::init(spec, &mut rng::substream(seed, "init", fold as u64))?;
        let outcome = train_model(
            spec,
            init,
            &train_n,
            teacher,
            cfg,
            rng::substream(seed, "fold-seed", fold as u64).gen(),
        )?;
        let val_accuracy = accuracy(spec, &outcome.params, &val_n, cfg.mode)?;
        let test_accuracy = dataset2
            .map(|d2| accuracy(spec, &outcome.params, &normalizer.apply_all(d2), cfg.mode))
            .transpose()?;
        folds.push(FoldResult {
            fold,
            train_size: train.len(),
            val_size: val.len(),
            val_accuracy,
            test_accuracy,
            normalizer,
            history: outcome.history,
        });
        models.push(FoldModel {
            params: outcome.params,
            normalizer,
        });
    }
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_val_accuracy = mean(folds.iter().map(|f| f.val_accuracy).collect());
    let mean_test_accuracy =
        dataset2.map(|_| mean(folds.iter().filter_map(|f| f.test_accuracy).collect()));
    Ok((
        KFoldReport {
            k,
            seed,
            fold_assignment: assignment,
            folds,
            mean_val_accuracy,
            mean_test_accuracy,
        },
        models,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;
    use crate::tensor::Shape;
    use rand_distr::{Distribution, Normal};

    /// Class c lights up column block c; trivially separable.
    fn toy(n_per_class: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng::stream(seed, "toy");
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut out = Vec::new();
        for c in 0..3 {
            for i in 0..n_per_class {
                let mut f = Tensor::zeros(Shape::new(1, 8, 6));
                for row in 0..8 {
                    for col in 0..6 {
                        let on = if col / 2 == c { 1.0 } else { 0.0 };
                        f.set(0, row, col, on + noise.sample(&mut r));
                    }
                }
                out.push(Sample {
                    id: format!("{c}-{i}"),
                    label: c,
                    frame: f,
                });
            }
        }
        out
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let spec = ModelSpec::reduced(8, 6);
        let samples = toy(10, 1);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 200,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let init = ModelParams::init(&spec, &mut rng::stream(1, "init")).unwrap();
        let mut reached = None;
        let mut params = init;
        for epoch in 1..=200 {
            let one = TrainConfig {
                max_epochs: 1,
                ..cfg.clone()
            };
            params = train_model(&spec, params, &samples, None, &one, epoch)
                .unwrap()
                .params;
            if accuracy(&spec, &params, &samples, ExecMode::Sequential).unwrap() == 1.0 {
                reached = Some(epoch);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn calibration_matches_batch_statistics() {
        let spec = ModelSpec::reduced(8, 6);
        let mut params = ModelParams::init(&spec, &mut rng::stream(4, "init")).unwrap();
        let samples = toy(3, 2);
        let frames: Vec<&Tensor> = samples.iter().map(|s| &s.frame).collect();
        calibrate_batchnorm(&spec, &mut params, &frames, ExecMode::Sequential).unwrap();
        // conv1 sees raw frames, so its normalized output is exactly centred
        let LayerParams::Conv { bn: Some(bn), .. } = &params.layers[0] else {
            panic!()
        };
        let plain = spec.clone().with_relu(false);
        let outs: Vec<Tensor> = frames
            .iter()
            .map(|f| crate::nn::layer_output(&plain, &params, f, "conv1").unwrap())
            .collect();
        for ch in 0..bn.channels() {
            let vals: Vec<f64> = outs.iter().flat_map(|t| t.channel(ch).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9, "mean {m}");
            assert!(
                (v * (bn.var[ch] + bn.eps) / bn.var[ch].max(1e-300) - 1.0).abs() < 1e-6
                    || bn.var[ch] == 0.0
            );
        }
    }

    #[test]
    fn kfold_is_deterministic_and_reports_folds() {
        let spec = ModelSpec::reduced(8, 6);
        let d1 = toy(4, 3);
        let d2 = toy(2, 4);
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let (a, _) = kfold_train(&d1, Some(&d2), &spec, &cfg, None, 2, 5).unwrap();
        let (b, _) = kfold_train(&d1, Some(&d2), &spec, &cfg, None, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.folds.len(), 2);
        assert_eq!(a.folds.iter().map(|f| f.val_size).sum::<usize>(), 12);
        assert!(a.mean_test_accuracy.is_some());
    }

    #[test]
    fn distillation_requires_teacher_rows() {
        let spec = ModelSpec::reduced(8, 6);
        let samples = toy(1, 3);
        let cfg = TrainConfig {
            kd: Some(KdConfig::default()),
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let init = ModelParams::init(&spec, &mut rng::stream(1, "init")).unwrap();
        assert!(train_model(&spec, init.clone(), &samples, None, &cfg, 0).is_err());
        let mut t = TeacherLogits::default();
        t.logits.insert("0-0".into(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            train_model(&spec, init, &samples, Some(&t), &cfg, 0),
            Err(Error::Ingestion(_))
        ));
    }
}
