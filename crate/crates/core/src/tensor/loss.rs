use super::Real;
use crate::error::{Error, Result};

const CLAMP: Real = 1e-7;

/// Binary cross entropy `-t·ln p − (1−t)·ln(1−p)` on `p` clamped to
/// `[1e-7, 1 − 1e-7]`. Returns the loss and `dL/dp` evaluated at the
/// clamped probability.
pub fn bce_loss(p: Real, target: Real) -> Result<(Real, Real)> {
    if target != 0.0 && target != 1.0 {
        return Err(Error::invalid("bce_loss", format!("target {target} is not 0 or 1")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("bce_loss", format!("probability {p} outside [0, 1]")));
    }
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    let loss = -target * p.ln() - (1.0 - target) * (1.0 - p).ln();
    let d_p = -target / p + (1.0 - target) / (1.0 - p);
    Ok((loss, d_p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let (l, _) = bce_loss(1.0, 1.0).unwrap();
        assert!((0.0..=1.2e-7).contains(&l));
        let (l, d) = bce_loss(0.5, 1.0).unwrap();
        assert!((l - std::f64::consts::LN_2 as Real).abs() < 1e-12);
        assert!((d + 2.0).abs() < 1e-12);
        let (l, _) = bce_loss(0.0, 0.0).unwrap();
        assert!(l < 1.2e-7);
    }

    #[test]
    fn rejects_non_binary_target() {
        assert!(bce_loss(0.5, 0.3).is_err());
    }
}
