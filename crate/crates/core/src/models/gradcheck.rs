//! Central-difference check of the analytic parameter gradient.

use crate::error::Result;
use crate::losses::Loss;

use super::EnhancerModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where both gradients were below `floor` and were skipped.
    pub skipped: usize,
}

/// Total loss of all outputs against `targets`.
pub fn total_loss(model: &EnhancerModel, y: &[f64], targets: &[Vec<f64>], loss: &Loss) -> Result<f64> {
    let outs = model.forward(y)?;
    outs.iter().zip(targets).map(|(o, t)| loss.eval(o, t).map(|v| v.scalar)).sum()
}

/// Compares analytic and central-difference derivatives on `coords`.
pub fn gradient_check(
    model: &EnhancerModel,
    y: &[f64],
    targets: &[Vec<f64>],
    loss: &Loss,
    coords: &[usize],
    step: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (outs, trace) = model.forward_traced(y)?;
    let grads: Vec<Vec<f64>> =
        outs.iter().zip(targets).map(|(o, t)| loss.eval_with_grad(o, t).map(|r| r.1)).collect::<Result<_>>()?;
    let analytic = model.backward_traced(&trace, &grads)?;
    let mut probe = model.clone();
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for &i in coords {
        let p0 = model.params()[i];
        probe.params_mut()[i] = p0 + step;
        let up = total_loss(&probe, y, targets, loss)?;
        probe.params_mut()[i] = p0 - step;
        let dn = total_loss(&probe, y, targets, loss)?;
        probe.params_mut()[i] = p0;
        let fd = (up - dn) / (2.0 * step);
        let scale = fd.abs().max(analytic[i].abs());
        if scale < floor {
            out.skipped += 1;
            continue;
        }
        out.checked += 1;
        out.max_rel_error = out.max_rel_error.max((fd - analytic[i]).abs() / scale);
    }
    Ok(out)
}
