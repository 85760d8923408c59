use crate::data::{Normalizer, Sample};
use crate::error::Result;
use crate::nn::{layer_output, ModelParams, ModelSpec};
use crate::par::{self, ExecMode};

/// One CSV row per sample: `id,label,f0,f1,...` with the flattened output
/// of `layer` as features. Frames are standardized with `norm` first.
pub fn export_features(
    spec: &ModelSpec,
    params: &ModelParams,
    samples: &[Sample],
    norm: &Normalizer,
    layer: &str,
    mode: ExecMode,
) -> Result<String> {
    let rows = par::map_indexed(mode, samples, |_, s| {
        layer_output(spec, params, &norm.apply(&s.frame), layer)
    });
    let mut out = String::new();
    for (s, r) in samples.iter().zip(rows) {
        let t = r?;
        out.push_str(&s.id);
        out.push(',');
        out.push_str(&s.label.to_string());
        for v in t.data() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FRAME_SHAPE;
    use crate::tensor::Tensor;
    use crate::Error;

    fn two() -> Vec<Sample> {
        (0..2)
            .map(|i| Sample {
                id: format!("s{i}"),
                label: i,
                frame: Tensor::filled(FRAME_SHAPE, i as f64 + 0.5),
            })
            .collect()
    }

    #[test]
    fn flatten_rows_and_zero_model() {
        let spec = ModelSpec::student();
        let params = ModelParams::zeros(&spec).unwrap();
        let text = export_features(
            &spec,
            &params,
            &two(),
            &Normalizer::default(),
            "flatten",
            ExecMode::Parallel,
        )
        .unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 2 + 2048);
            assert!(f[2..].iter().all(|v| *v == "0"));
        }
        let again = export_features(
            &spec,
            &params,
            &two(),
            &Normalizer::default(),
            "flatten",
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn unknown_tag() {
        let spec = ModelSpec::student();
        let params = ModelParams::zeros(&spec).unwrap();
        let r = export_features(
            &spec,
            &params,
            &two(),
            &Normalizer::default(),
            "conv9",
            ExecMode::Sequential,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
