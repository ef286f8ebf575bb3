//! Focal loss for overlap-mask supervision, with its analytic gradient.

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Focusing parameter.
    pub gamma: f64,
    /// Balancing parameter.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(
                "focal gamma must be finite and non-negative",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("focal alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Probability assigned to the true label, per element.
    pub p_t: Vec<f64>,
    /// dL/dp per element.
    pub gradient: Vec<f64>,
}

fn check(p: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if p.len() != mask.len() {
        return Err(Error::dims(format!(
            "{} probabilities but {} mask entries",
            p.len(),
            mask.len()
        )));
    }
    if p.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("overlap probabilities".into()));
    }
    Ok(())
}

fn p_t(p: f64, m: bool) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if m {
        p
    } else {
        1.0 - p
    }
}

fn element_loss(pt: f64, cfg: &LossConfig) -> f64 {
    -cfg.alpha * (1.0 - pt).powf(cfg.gamma) * pt.ln()
}

/// d/dp_t of the per-element loss.
fn element_slope(pt: f64, cfg: &LossConfig) -> f64 {
    let q = 1.0 - pt;
    let focus = if cfg.gamma == 0.0 {
        0.0
    } else {
        cfg.gamma * q.powf(cfg.gamma - 1.0) * pt.ln()
    };
    cfg.alpha * (focus - q.powf(cfg.gamma) / pt)
}

/// Mean focal loss over all elements.
pub fn focal_mask_loss(p: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<LossReport> {
    check(p, mask, cfg)?;
    let p_t: Vec<f64> = p.iter().zip(mask).map(|(&p, &m)| p_t(p, m)).collect();
    let loss = if p.is_empty() {
        0.0
    } else {
        p_t.iter().map(|&pt| element_loss(pt, cfg)).sum::<f64>() / p.len() as f64
    };
    let gradient = focal_loss_gradient(p, mask, cfg)?;
    Ok(LossReport {
        loss,
        p_t,
        gradient,
    })
}

/// dL/dp for the mean focal loss. Zero where the clamp is active.
pub fn focal_loss_gradient(p: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<Vec<f64>> {
    check(p, mask, cfg)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(mask)
        .map(|(&p, &m)| {
            if !(EPS..=1.0 - EPS).contains(&p) {
                return 0.0;
            }
            let g = element_slope(p_t(p, m), cfg) / n;
            if m {
                g
            } else {
                -g
            }
        })
        .collect())
}

/// Sum of the mask loss and any externally computed matching losses.
pub fn total_loss(mask_loss: f64, coarse_loss: Option<f64>, fine_loss: Option<f64>) -> f64 {
    mask_loss + coarse_loss.unwrap_or(0.0) + fine_loss.unwrap_or(0.0)
}
