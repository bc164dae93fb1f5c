//! Temperature softmax, focal task loss, KL distillation loss, and
//! their β-weighted combination — as plain-array evaluations and as
//! graph nodes for training.

use ndarray::{Array2, ArrayD};

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 1.0, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.gamma < 0.0 {
            return Err(Error::Domain(format!(
                "focal parameters must be nonnegative, got alpha={} gamma={}",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KDConfig {
    pub beta: f64,
    pub temperature: f64,
}

impl Default for KDConfig {
    fn default() -> Self {
        KDConfig { beta: 0.0, temperature: 1.0 }
    }
}

impl KDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// σ(z/Γ), computed with the log-sum-exp shift.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// −α(1−p_b⋆)^γ ln(p_b⋆) with p = softmax(logits), natural log,
/// probability floored at 1e−12 inside the logarithm.
pub fn focal_loss(logits: &[f64], label: usize, cfg: &FocalConfig) -> Result<f64> {
    cfg.validate()?;
    if label >= logits.len() {
        return Err(Error::Usage(format!(
            "label {label} outside the {}-class logit vector",
            logits.len()
        )));
    }
    let p = softmax_temperature(logits, 1.0)?;
    let p_star = p[label];
    Ok(-cfg.alpha * (1.0 - p_star).powf(cfg.gamma) * p_star.max(PROB_FLOOR).ln())
}

/// Sum of per-slot focal losses; `logits` is C×(J+1) with one column
/// per slot.
pub fn task_loss(logits: &Array2<f64>, labels: &[usize], cfg: &FocalConfig) -> Result<f64> {
    let (_, slots) = logits.dim();
    if labels.len() != slots {
        return Err(Error::Usage(format!(
            "{} labels for {} slots",
            labels.len(),
            slots
        )));
    }
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let column: Vec<f64> = logits.column(j).to_vec();
        total += focal_loss(&column, label, cfg)?;
    }
    Ok(total)
}

/// Σ_τ KL(softmax(z_T/Γ) ‖ softmax(z_S/Γ)) · Γ² over the C×(J+1)
/// logit matrices.
pub fn distill_loss(
    teacher_logits: &Array2<f64>,
    student_logits: &Array2<f64>,
    temperature: f64,
) -> Result<f64> {
    if teacher_logits.dim() != student_logits.dim() {
        return Err(Error::Usage(format!(
            "teacher logits {:?} vs student logits {:?}",
            teacher_logits.dim(),
            student_logits.dim()
        )));
    }
    let (_, slots) = teacher_logits.dim();
    let mut total = 0.0;
    for j in 0..slots {
        let t = softmax_temperature(&teacher_logits.column(j).to_vec(), temperature)?;
        let s = softmax_temperature(&student_logits.column(j).to_vec(), temperature)?;
        let kl: f64 = t
            .iter()
            .zip(&s)
            .map(|(&ti, &si)| {
                if ti <= 0.0 {
                    0.0
                } else {
                    ti * (ti.max(PROB_FLOOR).ln() - si.max(PROB_FLOOR).ln())
                }
            })
            .sum();
        total += kl;
    }
    Ok(total * temperature * temperature)
}

/// (1−β)·task + β·distill.
pub fn overall_loss(task: f64, distill: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta must lie in [0,1], got {beta}")));
    }
    Ok((1.0 - beta) * task + beta * distill)
}

// ----------------------------------------------------------------------
// Graph-side batch losses
// ----------------------------------------------------------------------

/// Focal loss summed over a `[rows, C]` logit node (one row per
/// (sample, slot) pair) and divided by `divisor` — pass B·(J+1) for
/// the batch-mean convention.
pub fn batch_task_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    cfg: &FocalConfig,
    divisor: f64,
) -> Var {
    assert_eq!(g.value(logits).shape()[0], labels.len(), "one label per logit row");
    let logp = g.log_softmax_rows(logits);
    let logp_star = g.pick(logp, labels);
    let p_star = g.exp(logp_star);
    let neg_p = g.scale(p_star, -1.0);
    let one_minus_p = g.add_scalar(neg_p, 1.0);
    let weight = g.pow_const(one_minus_p, cfg.gamma);
    let weighted = g.mul(weight, logp_star);
    let total = g.sum_all(weighted);
    g.scale(total, -cfg.alpha / divisor)
}

/// Γ²-scaled KL divergence from detached teacher logit values to a
/// student logit node, summed over rows and divided by `divisor`.
pub fn batch_distill_loss(
    g: &mut Graph,
    teacher_logits: &ArrayD<f64>,
    student_logits: Var,
    temperature: f64,
    divisor: f64,
) -> Var {
    assert_eq!(
        teacher_logits.shape(),
        g.value(student_logits).shape(),
        "teacher/student logit shapes must agree"
    );
    let rows = teacher_logits.shape()[0];
    let cols = teacher_logits.shape()[1];
    // teacher side: smoothed probabilities and their entropy term,
    // both plain constants
    let mut t_probs = Array2::<f64>::zeros((rows, cols));
    let mut t_entropy_term = 0.0;
    for i in 0..rows {
        let row: Vec<f64> = (0..cols).map(|c| teacher_logits[[i, c]]).collect();
        let p = softmax_temperature(&row, temperature).expect("temperature checked by caller");
        for (c, &pc) in p.iter().enumerate() {
            t_probs[(i, c)] = pc;
            if pc > 0.0 {
                t_entropy_term += pc * pc.max(PROB_FLOOR).ln();
            }
        }
    }
    let scaled = g.scale(student_logits, 1.0 / temperature);
    let log_s = g.log_softmax_rows(scaled);
    let t_const = g.constant(t_probs.into_dyn());
    let cross = g.mul(t_const, log_s);
    let cross_sum = g.sum_all(cross);
    let neg_cross = g.scale(cross_sum, -1.0);
    let kl_total = g.add_scalar(neg_cross, t_entropy_term);
    g.scale(kl_total, temperature * temperature / divisor)
}

/// Graph-side (1−β)·task + β·distill.
pub fn combine_losses(g: &mut Graph, task: Var, distill: Option<Var>, beta: f64) -> Var {
    match distill {
        None => {
            assert_eq!(beta, 0.0, "beta > 0 requires a distillation term");
            task
        }
        Some(d) => {
            let t = g.scale(task, 1.0 - beta);
            let ds = g.scale(d, beta);
            g.add(t, ds)
        }
    }
}

/// Convert slot-major `[T*B, C]` row logits for one sample `b` into
/// the C×(J+1) per-sample matrix the array-side losses consume.
pub fn sample_logit_matrix(
    rows: &ArrayD<f64>,
    batch: usize,
    slots: usize,
    b: usize,
) -> Array2<f64> {
    let cols = rows.shape()[1];
    let mut out = Array2::<f64>::zeros((cols, slots));
    for j in 0..slots {
        for c in 0..cols {
            out[(c, j)] = rows[[j * batch + b, c]];
        }
    }
    out
}
