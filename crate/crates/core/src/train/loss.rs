use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::nn::{log_softmax_temperature, softmax_temperature};

/// Weighting and temperature of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub alpha: f64,
    pub temperature: f64,
    /// Multiply the KL term by `T^2` (classic recipe). Off by default.
    #[serde(default)]
    pub t2_scaling: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            temperature: 5.0,
            t2_scaling: false,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn kl_weight(&self) -> f64 {
        let w = 1.0 - self.alpha;
        if self.t2_scaling {
            w * self.temperature * self.temperature
        } else {
            w
        }
    }
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

/// `-log softmax(logits)[label]` in log-sum-exp form.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_label(logits, label)?;
    Ok(-log_softmax_temperature(logits, 1.0)?[label])
}

/// `KL(p || q) = sum p (log p - log q)` with `q` given in log space.
/// Terms with `p = 0` contribute nothing.
fn kl_divergence(p: &[f64], log_p: &[f64], log_q: &[f64]) -> f64 {
    p.iter()
        .zip(log_p)
        .zip(log_q)
        .filter(|((p, _), _)| **p > 0.0)
        .map(|((p, lp), lq)| p * (lp - lq))
        .sum()
}

/// `alpha * CE(student, label) + (1 - alpha) * KL(softmax(teacher/T) || softmax(student/T))`.
pub fn kd_loss(student: &[f64], teacher: &[f64], label: usize, cfg: &KdConfig) -> Result<f64> {
    cfg.validate()?;
    if student.len() != teacher.len() {
        return config(format!(
            "student has {} logits, teacher {}",
            student.len(),
            teacher.len()
        ));
    }
    let ce = cross_entropy(student, label)?;
    if cfg.alpha == 1.0 {
        return Ok(ce);
    }
    let p_t = softmax_temperature(teacher, cfg.temperature)?;
    let log_p_t = log_softmax_temperature(teacher, cfg.temperature)?;
    let log_q = log_softmax_temperature(student, cfg.temperature)?;
    let kl = kl_divergence(&p_t, &log_p_t, &log_q).max(0.0);
    Ok(cfg.alpha * ce + cfg.kl_weight() * kl)
}

/// Loss and its gradient with respect to the student logits. Without a
/// teacher this is plain cross-entropy.
pub fn loss_and_logit_grad(
    student: &[f64],
    teacher: Option<&[f64]>,
    label: usize,
    cfg: Option<&KdConfig>,
) -> Result<(f64, Vec<f64>)> {
    check_label(student, label)?;
    let p = softmax_temperature(student, 1.0)?;
    let mut ce_grad = p;
    ce_grad[label] -= 1.0;
    match (teacher, cfg) {
        (Some(teacher), Some(cfg)) => {
            let loss = kd_loss(student, teacher, label, cfg)?;
            let q = softmax_temperature(student, cfg.temperature)?;
            let p_t = softmax_temperature(teacher, cfg.temperature)?;
            let kl_scale = cfg.kl_weight() / cfg.temperature;
            let grad = ce_grad
                .iter()
                .zip(q.iter().zip(&p_t))
                .map(|(g, (q, pt))| cfg.alpha * g + kl_scale * (q - pt))
                .collect();
            Ok((loss, grad))
        }
        _ => Ok((cross_entropy(student, label)?, ce_grad)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0, 0.0, 0.0], 2).unwrap() - 3f64.ln()).abs() < 1e-15);
        let near_zero = cross_entropy(&[10.0, -10.0, -10.0], 0).unwrap();
        // log(1 + 2e-20) ~ 4.1e-9
        assert!((near_zero - 4.122_307_2e-9).abs() < 1e-15, "{near_zero}");
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kd_degenerate_forms() {
        let cfg = KdConfig {
            alpha: 1.0,
            temperature: 3.0,
            t2_scaling: false,
        };
        let s = [0.3, -1.2, 2.0];
        assert_eq!(
            kd_loss(&s, &[5.0, 1.0, 0.0], 1, &cfg).unwrap(),
            cross_entropy(&s, 1).unwrap()
        );
        let cfg0 = KdConfig { alpha: 0.0, ..cfg };
        assert_eq!(kd_loss(&s, &s, 1, &cfg0).unwrap(), 0.0);
        assert!(kd_loss(&s, &[1.0, 2.0], 0, &cfg0).is_err());
        let d = KdConfig::default();
        assert_eq!((d.alpha, d.temperature), (0.1, 5.0));
        d.validate().unwrap();
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let cfg = KdConfig {
            alpha: 0.3,
            temperature: 4.0,
            t2_scaling: true,
        };
        let s = [0.5, -0.25, 1.5];
        let t = [2.0, 0.0, -1.0];
        let (_, g) = loss_and_logit_grad(&s, Some(&t), 2, Some(&cfg)).unwrap();
        for i in 0..3 {
            let h = 1e-5;
            let mut a = s;
            let mut b = s;
            a[i] += h;
            b[i] -= h;
            let fd =
                (kd_loss(&a, &t, 2, &cfg).unwrap() - kd_loss(&b, &t, 2, &cfg).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn kd_loss_nonnegative_and_alpha_one_is_ce(
            s in proptest::collection::vec(-20.0f64..20.0, 3),
            t in proptest::collection::vec(-20.0f64..20.0, 3),
            label in 0usize..3,
            alpha in 0.0f64..=1.0,
            temp in 0.1f64..20.0,
        ) {
            let cfg = KdConfig { alpha, temperature: temp, t2_scaling: false };
            prop_assert!(kd_loss(&s, &t, label, &cfg).unwrap() >= 0.0);
            let one = KdConfig { alpha: 1.0, ..cfg };
            prop_assert_eq!(kd_loss(&s, &t, label, &one).unwrap().to_bits(), cross_entropy(&s, label).unwrap().to_bits());
            prop_assert!(cross_entropy(&s, label).unwrap() >= 0.0);
        }
    }
}
