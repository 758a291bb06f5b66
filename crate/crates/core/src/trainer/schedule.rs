//! Learning-rate schedule: linear warmup then cosine decay to zero.

/// Learning rate at `step` (0-based optimizer steps).
///
/// Steps `0..=warmup_steps` interpolate linearly from `lr_start` to
/// `lr_peak`; the remaining steps follow `lr_peak * 0.5 * (1 + cos(pi * p))`
/// with `p` the post-warmup progress, reaching exactly 0 at `total_steps`.
/// Both segments equal `lr_peak` at the boundary.
pub fn lr_at(step: usize, warmup_steps: usize, total_steps: usize, lr_start: f64, lr_peak: f64) -> f64 {
    assert!(step <= total_steps, "step {step} past total {total_steps}");
    assert!(warmup_steps < total_steps);
    if step <= warmup_steps {
        if warmup_steps == 0 {
            return lr_peak;
        }
        return lr_start + (lr_peak - lr_start) * step as f64 / warmup_steps as f64;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
