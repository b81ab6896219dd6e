use crate::tensorcore::sigmoid;

const LOG_FLOOR: f64 = 1e-12;

/// Mean binary cross-entropy with log arguments clamped at 1e-12.
pub fn bce_loss(p: &[f64], y: &[u8]) -> f64 {
    weighted_bce(p, y, [1.0, 1.0])
}

/// BCE with a per-class weight on each term.
pub fn weighted_bce(p: &[f64], y: &[u8], class_weights: [f64; 2]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let w = class_weights[usize::from(t)];
            if t == 1 {
                -w * p.max(LOG_FLOOR).ln()
            } else {
                -w * (1.0 - p).max(LOG_FLOOR).ln()
            }
        })
        .sum();
    total / p.len().max(1) as f64
}

/// Inverse-frequency weights `n / (2·n_class)`; they average to 1 over the
/// samples. A missing class gets weight 1.
pub fn class_weights(y: &[u8]) -> [f64; 2] {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&t| t == 1).count() as f64;
    let neg = n - pos;
    let w = |c: f64| if c > 0.0 { n / (2.0 * c) } else { 1.0 };
    [w(neg), w(pos)]
}

/// Loss and `∂loss/∂logit` for mean (weighted) BCE over sigmoid outputs.
pub fn bce_with_logits(logits: &[f64], y: &[u8], class_weights: [f64; 2]) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let p: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = weighted_bce(&p, y, class_weights);
    let grad = p
        .iter()
        .zip(y)
        .map(|(&p, &t)| class_weights[usize::from(t)] * (p - f64::from(t)) / n)
        .collect();
    (loss, grad)
}
