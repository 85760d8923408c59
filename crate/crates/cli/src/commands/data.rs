use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use shiftadd_core::data::{
    export_features, synth_dataset_generate, write_dataset, SynthConfig, FRAME_COLS, FRAME_ROWS,
};
use shiftadd_core::par::ExecMode;
use shiftadd_core::tensor::Shape;

use super::float_view;
use crate::artifacts::{load_dataset, load_model, write_file, write_result};
use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Frames per class in each variant.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Target directory; `base/` and `shifted/` are created inside.
    #[arg(long, value_name = "DIR")]
    dir: Option<PathBuf>,
    #[arg(long, default_value_t = FRAME_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = FRAME_COLS)]
    cols: usize,
}

#[derive(Serialize)]
struct GeneratedSet {
    name: String,
    path: PathBuf,
    counts: Vec<usize>,
}

pub fn gen_data(a: &GenDataArgs, cfg: &RunConfig) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| cfg.out_dir.join("data"));
    let synth = SynthConfig {
        per_class: a.per_class,
        rows: a.rows,
        cols: a.cols,
    };
    let manifests = synth_dataset_generate(&dir, cfg.seed, &synth)?;
    let sets: Vec<GeneratedSet> = manifests
        .iter()
        .map(|m| GeneratedSet {
            name: m.name.clone(),
            path: dir.join(&m.name),
            counts: m.counts.clone(),
        })
        .collect();
    for s in &sets {
        println!("{}: {} ({:?})", s.name, s.path.display(), s.counts);
    }
    write_result(cfg, "gen-data", &sets)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// CSV file, DVSF file or dataset directory.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    output: PathBuf,
    /// Dataset name recorded in the manifest; defaults to the input stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = FRAME_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = FRAME_COLS)]
    cols: usize,
}

#[derive(Serialize)]
struct Converted {
    output: PathBuf,
    samples: usize,
    counts: Vec<usize>,
}

pub fn convert(a: &ConvertArgs, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&a.input, Shape::new(1, a.rows, a.cols))?;
    let name = match &a.name {
        Some(n) => n.clone(),
        None => a
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    };
    let manifest = write_dataset(&a.output, &name, &ds.samples)
        .with_context(|| format!("writing dataset {}", a.output.display()))?;
    println!(
        "{}: {} samples {:?}",
        a.output.display(),
        ds.samples.len(),
        manifest.counts
    );
    write_result(
        cfg,
        "convert",
        &Converted {
            output: a.output.clone(),
            samples: ds.samples.len(),
            counts: manifest.counts,
        },
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Layer whose output is exported.
    #[arg(long, default_value = "flatten")]
    layer: String,
    /// CSV destination; defaults to `<out>/features-<layer>.csv`.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Exported {
    output: PathBuf,
    layer: String,
    rows: usize,
}

pub fn export(a: &ExportArgs, cfg: &RunConfig, mode: ExecMode) -> Result<()> {
    let m = load_model(&a.model)?;
    let (spec, params) = float_view(&m)?;
    let ds = load_dataset(&a.data, spec.input)?;
    let table = export_features(
        &spec,
        &params,
        &ds.samples,
        &m.meta.normalizer,
        &a.layer,
        mode,
    )?;
    let output = a
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("features-{}.csv", a.layer)));
    write_file(&output, table.as_bytes())?;
    println!(
        "{}: {} rows from {}",
        output.display(),
        ds.samples.len(),
        a.layer
    );
    write_result(
        cfg,
        "export-features",
        &Exported {
            output,
            layer: a.layer.clone(),
            rows: ds.samples.len(),
        },
    )?;
    Ok(())
}
