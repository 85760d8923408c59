use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use rand::Rng;
use serde::Serialize;
use shiftadd_core::data::{Normalizer, Sample};
use shiftadd_core::nn::{forward_batch, ModelParams, ModelSpec};
use shiftadd_core::par::ExecMode;
use shiftadd_core::rng;
use shiftadd_core::train::{
    accuracy, kfold_train, teacher_logits_load, train_model, EpochRecord, FoldModel, KFoldReport,
    KdConfig, TeacherLogits, TrainConfig,
};
use shiftadd_core::Error;

use super::normalized;
use crate::artifacts::{load_dataset, save_float, write_file, write_result};
use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Training dataset (k-fold protocol runs on it).
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Held-out dataset scored by every trained model.
    #[arg(long, value_name = "PATH")]
    test: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    /// Train one model on the whole dataset instead of k folds.
    #[arg(long)]
    full: bool,
    /// Where the trained model goes; defaults to `<out>/<command>.sacw`.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.folds {
            t.folds = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.min_lr {
            t.min_learning_rate = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Also write the saved model's logits for every `--data` sample, for
    /// use as a distillation teacher.
    #[arg(long, value_name = "FILE")]
    emit_logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// `id,logit0,logit1,...` per training sample.
    #[arg(long, value_name = "FILE")]
    teacher_logits: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Scale the KL term by T^2.
    #[arg(long)]
    t2_scaling: bool,
    /// Sweep alpha x temperature with k-fold and keep the best mean
    /// validation accuracy.
    #[arg(long)]
    grid: bool,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
    )]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    temperatures: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct FullRun {
    train_size: usize,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    normalizer: Normalizer,
    history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize)]
struct TrainResult {
    kfold: Option<KFoldReport>,
    full: Option<FullRun>,
    model: PathBuf,
    /// Fold whose model was saved (best validation accuracy).
    saved_fold: Option<usize>,
    teacher_logits: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct GridPoint {
    alpha: f64,
    temperature: f64,
    mean_val_accuracy: f64,
    mean_test_accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DistillResult {
    kd: KdConfig,
    grid: Vec<GridPoint>,
    #[serde(flatten)]
    run: TrainResult,
}

struct Inputs {
    spec: ModelSpec,
    train: Vec<Sample>,
    test: Option<Vec<Sample>>,
}

fn inputs(flags: &TrainFlags, cfg: &RunConfig) -> Result<Inputs> {
    let spec = cfg.spec()?;
    let train = load_dataset(&flags.data, spec.input)?.samples;
    let test = flags
        .test
        .as_deref()
        .map(|p| load_dataset(p, spec.input))
        .transpose()?
        .map(|d| d.samples);
    Ok(Inputs { spec, train, test })
}

fn full_fit(
    inp: &Inputs,
    tc: &TrainConfig,
    teacher: Option<&TeacherLogits>,
    seed: u64,
) -> Result<(FullRun, ModelParams)> {
    let normalizer = Normalizer::fit(inp.train.iter().map(|s| &s.frame));
    let train = normalized(&inp.train, &normalizer);
    let init = ModelParams::init(&inp.spec, &mut rng::stream(seed, "init"))?;
    let out = train_model(
        &inp.spec,
        init,
        &train,
        teacher,
        tc,
        rng::stream(seed, "full-seed").gen(),
    )?;
    let train_accuracy = accuracy(&inp.spec, &out.params, &train, tc.mode)?;
    let test_accuracy = inp
        .test
        .as_ref()
        .map(|t| accuracy(&inp.spec, &out.params, &normalized(t, &normalizer), tc.mode))
        .transpose()?;
    let run = FullRun {
        train_size: train.len(),
        train_accuracy,
        test_accuracy,
        normalizer,
        history: out.history,
    };
    Ok((run, out.params))
}

/// Index of the best validation accuracy, first on ties.
fn best_fold(report: &KFoldReport) -> usize {
    let mut best = 0;
    for (i, f) in report.folds.iter().enumerate() {
        if f.val_accuracy > report.folds[best].val_accuracy {
            best = i;
        }
    }
    best
}

fn run_training(
    flags: &TrainFlags,
    inp: &Inputs,
    cfg: &RunConfig,
    tc: &TrainConfig,
    teacher: Option<&TeacherLogits>,
    command: &str,
) -> Result<(TrainResult, ModelParams, Normalizer)> {
    let model = flags
        .model
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("{command}.sacw")));
    if flags.full {
        let (run, params) = full_fit(inp, tc, teacher, cfg.seed)?;
        let norm = run.normalizer;
        println!("train accuracy {:.4}", run.train_accuracy);
        if let Some(t) = run.test_accuracy {
            println!("test accuracy {t:.4}");
        }
        let res = TrainResult {
            kfold: None,
            full: Some(run),
            model,
            saved_fold: None,
            teacher_logits: None,
        };
        return Ok((res, params, norm));
    }
    let (report, models) = kfold_train(
        &inp.train,
        inp.test.as_deref(),
        &inp.spec,
        tc,
        teacher,
        cfg.train.folds,
        cfg.seed,
    )?;
    for f in &report.folds {
        match f.test_accuracy {
            Some(t) => println!("fold {} val {:.4} test {:.4}", f.fold, f.val_accuracy, t),
            None => println!("fold {} val {:.4}", f.fold, f.val_accuracy),
        }
    }
    println!("mean val accuracy {:.4}", report.mean_val_accuracy);
    if let Some(t) = report.mean_test_accuracy {
        println!("mean test accuracy {t:.4}");
    }
    let best = best_fold(&report);
    let FoldModel { params, normalizer } = models.into_iter().nth(best).expect("fold exists");
    let res = TrainResult {
        kfold: Some(report),
        full: None,
        model,
        saved_fold: Some(best),
        teacher_logits: None,
    };
    Ok((res, params, normalizer))
}

fn emit_logits(
    path: &Path,
    spec: &ModelSpec,
    params: &ModelParams,
    norm: &Normalizer,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<()> {
    let frames: Vec<_> = samples.iter().map(|s| norm.apply(&s.frame)).collect();
    let logits = forward_batch(spec, params, &frames, mode)?;
    let table = TeacherLogits {
        logits: samples.iter().map(|s| s.id.clone()).zip(logits).collect(),
    };
    write_file(path, table.to_text().as_bytes())
}

pub fn train(a: &TrainArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    a.flags.apply(cfg);
    let inp = inputs(&a.flags, cfg)?;
    let tc = TrainConfig {
        mode,
        ..cfg.train_config(None)
    };
    let (mut res, params, norm) = run_training(&a.flags, &inp, cfg, &tc, None, "train")?;
    save_float(&res.model, &inp.spec, &params, norm)?;
    if let Some(p) = &a.emit_logits {
        emit_logits(p, &inp.spec, &params, &norm, &inp.train, mode)?;
        res.teacher_logits = Some(p.clone());
    }
    println!("model {}", res.model.display());
    write_result(cfg, "train", &res)?;
    Ok(())
}

pub fn distill(a: &DistillArgs, cfg: &mut RunConfig, mode: ExecMode) -> Result<()> {
    a.flags.apply(cfg);
    if let Some(v) = a.alpha {
        cfg.kd.alpha = v;
    }
    if let Some(v) = a.temperature {
        cfg.kd.temperature = v;
    }
    cfg.kd.t2_scaling |= a.t2_scaling;
    let inp = inputs(&a.flags, cfg)?;
    let teacher = teacher_logits_load(
        &a.teacher_logits,
        inp.spec.class_count,
        inp.train.iter().map(|s| s.id.as_str()),
    )?;
    let mut grid = Vec::new();
    if a.grid {
        if a.flags.full {
            return Err(Error::Config(format!(
                "--grid selects by validation accuracy and needs the k-fold protocol, not --full"
            ))
            .into());
        }
        let mut best: Option<(f64, KdConfig)> = None;
        for &alpha in &a.alphas {
            for &temperature in &a.temperatures {
                let kd = KdConfig {
                    alpha,
                    temperature,
                    t2_scaling: cfg.kd.t2_scaling,
                };
                let tc = TrainConfig {
                    mode,
                    ..cfg.train_config(Some(kd))
                };
                let (report, _) = kfold_train(
                    &inp.train,
                    inp.test.as_deref(),
                    &inp.spec,
                    &tc,
                    Some(&teacher),
                    cfg.train.folds,
                    cfg.seed,
                )?;
                println!(
                    "alpha {alpha} T {temperature}: mean val {:.4}",
                    report.mean_val_accuracy
                );
                if best.map_or(true, |(v, _)| report.mean_val_accuracy > v) {
                    best = Some((report.mean_val_accuracy, kd));
                }
                grid.push(GridPoint {
                    alpha,
                    temperature,
                    mean_val_accuracy: report.mean_val_accuracy,
                    mean_test_accuracy: report.mean_test_accuracy,
                });
            }
        }
        let Some((_, kd)) = best else {
            return Err(Error::Config(format!(
                "--grid needs at least one alpha and one temperature"
            ))
            .into());
        };
        println!("best alpha {} T {}", kd.alpha, kd.temperature);
        cfg.kd = kd;
    }
    let tc = TrainConfig {
        mode,
        ..cfg.train_config(Some(cfg.kd))
    };
    let (run, params, norm) = run_training(&a.flags, &inp, cfg, &tc, Some(&teacher), "distill")?;
    save_float(&run.model, &inp.spec, &params, norm)?;
    println!("model {}", run.model.display());
    write_result(
        cfg,
        "distill",
        &DistillResult {
            kd: cfg.kd,
            grid,
            run,
        },
    )?;
    Ok(())
}
