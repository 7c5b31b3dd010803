//! Closed-form kinetic-optimal fluxes.
//!
//! All families share the form `j(x, z) = [ṗ(x) π(z) - ṗ(z) π(x)]_+` for a pmf `π`
//! derived from the current `p`. Since `Σπ = 1` and `Σṗ = 0`, any such flux has
//! `div(j) = -ṗ`, and it is safe exactly when `π` vanishes wherever `p` does.

use super::laplacian::WeightSpec;
use super::Flux;
use crate::pmf::{argmax, Pmf};
use crate::{Error, Result};

/// `[ṗ(x) π(z) - ṗ(z) π(x)]_+` for a given `π`.
pub fn flux_with_pi(pi: &[f64], dp: &[f64]) -> Flux {
    Flux::from_fn(pi.len(), |x, z| (dp[x] * pi[z] - dp[z] * pi[x]).max(0.0))
}

fn check_len(p: &Pmf, dp: &[f64]) -> Result<()> {
    if p.len() != dp.len() {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            found: dp.len(),
        });
    }
    Ok(())
}

/// `j(x, z) = [p(z) ṗ(x) - ṗ(z) p(x)]_+`, with columns of zero-probability states
/// set to exact zeros.
pub fn flux_stable(p: &Pmf, dp: &[f64]) -> Result<Flux> {
    check_len(p, dp)?;
    let pi = p.as_slice();
    Ok(Flux::from_fn(p.len(), |x, z| {
        if pi[z] == 0.0 {
            0.0
        } else {
            (pi[z] * dp[x] - dp[z] * pi[x]).max(0.0)
        }
    }))
}

/// `j(x, z) = [ṗ(x) - ṗ(z)]_+ / K`, the `τ ≡ 1` flux over the whole alphabet.
///
/// This is not safe when `p` has zeros; [`super::velocity_from_flux`] reports it.
pub fn flux_indicator(p: &Pmf, dp: &[f64]) -> Result<Flux> {
    check_len(p, dp)?;
    let k = p.len() as f64;
    Ok(Flux::from_fn(p.len(), |x, z| (dp[x] - dp[z]).max(0.0) / k))
}

/// `π = p^α / Σ p^α` for `α ≥ 1`, evaluated in the log domain.
pub fn flux_power(p: &Pmf, dp: &[f64], alpha: f64) -> Result<Flux> {
    check_len(p, dp)?;
    let pi = WeightSpec::TauPower(alpha).normalized_tau(p)?;
    Ok(flux_with_pi(&pi, dp))
}

/// The `α → ∞` limit: `π = δ_{argmax p}`, ties to the lowest index.
pub fn flux_power_inf(p: &Pmf, dp: &[f64]) -> Result<Flux> {
    check_len(p, dp)?;
    let mut pi = vec![0.0; p.len()];
    pi[argmax(p.as_slice())] = 1.0;
    Ok(flux_with_pi(&pi, dp))
}

/// Flux of a general `τ` weight, `π = τ / Στ`.
///
/// With [`WeightSpec::TauIndicator`] this is the indicator flux restricted to the
/// support of `p`, which stays safe on paths with zeros.
pub fn flux_from_weight(p: &Pmf, dp: &[f64], weight: &WeightSpec) -> Result<Flux> {
    check_len(p, dp)?;
    let pi = weight.normalized_tau(p)?;
    Ok(flux_with_pi(&pi, dp))
}
