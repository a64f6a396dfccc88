use crate::train::TrainConfig;

/// `lr_initial * decay_factor ^ floor(epoch / decay_every)`, epochs 0-based.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let windows = epoch / config.lr_decay_every.max(1);
    // powf rather than powi: repeated multiplication drifts several ulps by epoch 600
    config.lr_initial * config.lr_decay_factor.powf(windows as f64)
}
