use std::f64::consts::PI;

/// Learning rate for update `step` (1-based) of a stage: linear warmup from
/// 0 to `peak` over `warmup` updates, then cosine decay to 0 at `total`.
pub fn learning_rate(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step == 0 {
        return 0.0;
    }
    if step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    0.5 * peak * (1.0 + (PI * progress).cos())
}
