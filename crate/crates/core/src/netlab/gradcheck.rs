use rand::seq::index;

use super::{loss, Mode, Network};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::seeding;

pub const FD_STEP: f64 = 1e-5;
pub const MIN_COORDINATES: usize = 200;
pub const MAX_PARAMETERS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation moved an activation across a kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_relative_error < self.tolerance
    }
}

fn train_loss(net: &Network, x: &Matrix, targets: &Matrix) -> Result<f64> {
    loss(net.config().loss, &net.logits(x, Mode::Train)?, targets)
}

/// Central differences on a random subset of at least 200 parameters (all
/// of them for smaller nets), against the analytic gradient. Batch
/// statistics are recomputed per evaluation; running moments are left
/// alone.
pub fn gradient_check(net: &Network, x: &Matrix, targets: &Matrix, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let total = net.parameter_count();
    if total > MAX_PARAMETERS {
        return Err(Error::InvalidConfig(format!(
            "{total} parameters is too many for finite differences (limit {MAX_PARAMETERS})"
        )));
    }
    let (_, grads, _) = net.loss_and_gradients(x, targets)?;
    let flat: Vec<f64> = grads.0.concat();
    let base_pattern = net.activation_pattern(x)?;

    let picks: Vec<usize> = if total <= MIN_COORDINATES {
        (0..total).collect()
    } else {
        let mut v = index::sample(&mut seeding::rng(seed), total, MIN_COORDINATES).into_vec();
        v.sort_unstable();
        v
    };

    let mut offsets = Vec::new();
    let mut acc = 0;
    for (_, p) in net.parameters() {
        offsets.push(acc);
        acc += p.len();
    }
    let locate = |flat_idx: usize| {
        let t = offsets.partition_point(|&o| o <= flat_idx) - 1;
        (t, flat_idx - offsets[t])
    };

    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for &k in &picks {
        let (t, i) = locate(k);
        let original = probe.parameters_mut()[t][i];
        probe.parameters_mut()[t][i] = original + FD_STEP;
        let plus = train_loss(&probe, x, targets)?;
        let crossed_plus = probe.activation_pattern(x)? != base_pattern;
        probe.parameters_mut()[t][i] = original - FD_STEP;
        let minus = train_loss(&probe, x, targets)?;
        let crossed_minus = probe.activation_pattern(x)? != base_pattern;
        probe.parameters_mut()[t][i] = original;
        if crossed_plus || crossed_minus {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = flat[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        checked,
        skipped,
        tolerance,
    })
}
