use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary focal loss over logits and its gradient with respect to each
/// logit.
///
/// Per sample: `-α_t (1 - p_t)^γ ln p_t` with `p = σ(z)`, `p_t = p` and
/// `α_t = α` for positives, `p_t = 1 - p` and `α_t = 1 - α` for negatives.
pub fn focal_loss(logits: &[f64], labels: &[bool], gamma: f64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("focal loss over zero samples".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if !(gamma >= 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "focal loss needs gamma >= 0 and alpha in (0,1), got {gamma}, {alpha}"
        )));
    }
    let m = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("logit {z}")));
        }
        let p = sigmoid(z);
        let q = sigmoid(-z);
        let (loss, g) = if y {
            let log_p = -softplus(-z);
            let w = q.powf(gamma);
            (
                -alpha * w * log_p,
                alpha * (gamma * p * w * log_p - w * q),
            )
        } else {
            let log_q = -softplus(z);
            let w = p.powf(gamma);
            (
                -(1.0 - alpha) * w * log_q,
                (1.0 - alpha) * (w * p - gamma * w * q * log_q),
            )
        };
        total += loss;
        grad.push(g / m);
    }
    Ok((total / m, grad))
}
