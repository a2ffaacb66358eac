use crate::error::{Error, Result};
use crate::numerics::CMatrix;

/// Reported NMSE for an exact estimate.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `(errors, count)` over the data slots; `decisions` and `truth` are
/// indexed `[slot][user]`.
pub fn symbol_errors(decisions: &[Vec<usize>], truth: &[Vec<usize>], pilot_mask: &[bool]) -> Result<(usize, usize)> {
    if decisions.len() != truth.len() || truth.len() != pilot_mask.len() {
        return Err(Error::DimMismatch(format!(
            "{} decision slots, {} truth slots, {} mask entries",
            decisions.len(),
            truth.len(),
            pilot_mask.len()
        )));
    }
    let mut errors = 0;
    let mut count = 0;
    for ((d, x), &pilot) in decisions.iter().zip(truth).zip(pilot_mask) {
        if pilot {
            continue;
        }
        if d.len() != x.len() {
            return Err(Error::DimMismatch(format!("{} decisions vs {} users", d.len(), x.len())));
        }
        errors += d.iter().zip(x).filter(|(a, b)| a != b).count();
        count += x.len();
    }
    Ok((errors, count))
}

/// Fraction of wrong symbols over all (user, data slot) pairs; zero when the
/// frame has no data slots.
pub fn compute_ser(decisions: &[Vec<usize>], truth: &[Vec<usize>], pilot_mask: &[bool]) -> Result<f64> {
    let (errors, count) = symbol_errors(decisions, truth, pilot_mask)?;
    Ok(if count == 0 { 0.0 } else { errors as f64 / count as f64 })
}

/// `‖H − Ĥ‖²_F / ‖H‖²_F` over the stacked frame.
pub fn nmse_ratio(truth: &[CMatrix], estimate: &[CMatrix]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimMismatch(format!("{} true vs {} estimated slots", truth.len(), estimate.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (h, e) in truth.iter().zip(estimate) {
        if h.shape() != e.shape() {
            return Err(Error::DimMismatch(format!("slot shapes {:?} vs {:?}", h.shape(), e.shape())));
        }
        num += (h - e).norm_squared();
        den += h.norm_squared();
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateTruth);
    }
    Ok(num / den)
}

/// Converts an NMSE ratio to dB, floored at [`NMSE_FLOOR_DB`].
pub(crate) fn ratio_to_db(ratio: f64) -> f64 {
    (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
}

pub fn compute_nmse_db(truth: &[CMatrix], estimate: &[CMatrix]) -> Result<f64> {
    nmse_ratio(truth, estimate).map(ratio_to_db)
}
