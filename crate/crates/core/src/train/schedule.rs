/// Linear warmup over the first `ceil(0.1 * total_steps)` steps, then
/// cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, lr_peak: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = warmup_steps(total_steps);
    let step = step.min(total_steps);
    if step <= warmup {
        return lr_peak * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn warmup_steps(total_steps: usize) -> usize {
    // integer ceil(total / 10), avoiding float rounding at multiples of ten
    total_steps.div_ceil(10)
}
