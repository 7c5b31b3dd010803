//! Kinetic energy of a flux and of a whole path.

use super::laplacian::WeightSpec;
use super::Flux;
use crate::pmf::Pmf;
use crate::Result;

/// `Σ_{x≠z} w(x, z) j(x, z)² / p(z)` with `w = p(z) / (τ(x) τ(z))`, i.e.
/// `Σ j² / (τ(x) τ(z))`.
///
/// A zero flux across an infinite weight contributes 0; a positive one makes the
/// energy infinite.
pub fn kinetic_energy_rate(p: &Pmf, j: &Flux, weight: &WeightSpec) -> Result<f64> {
    let tau = weight.tau(p)?;
    let k = p.len();
    let mut e = 0.0;
    for x in 0..k {
        for z in (0..k).filter(|&z| z != x) {
            let v = j.get(x, z);
            if v == 0.0 {
                continue;
            }
            let rho = tau[x] * tau[z];
            if rho == 0.0 {
                return Ok(f64::INFINITY);
            }
            e += v * v / rho;
        }
    }
    Ok(e)
}

/// Trapezoid integral over `[0, 1]` of `rate(t)` on `n` uniformly spaced points.
pub fn path_energy(n: usize, mut rate: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    assert!(n >= 2, "need at least two grid points");
    let h = 1.0 / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        total += w * rate(i as f64 * h)?;
    }
    Ok(total * h)
}
