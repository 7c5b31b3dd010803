//! The Laplacian relaxation `Σ_z ρ(x, z) (f(x) - f(z)) = ṗ(x)` and corrector fluxes.
//!
//! For `τ`-form weights `w(x, z) = p(z) / (τ(x) τ(z))` the conductance is
//! `ρ(x, z) = p(z) / w(x, z) = τ(x) τ(z)`, which is symmetric. The closed-form
//! potential is `f(x) = ṗ(x) / (τ(x) Σ τ)`; the general dense solver fixes the
//! gauge with `Σ f = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Flux;
use crate::pmf::{argmax, Pmf};
use crate::{Error, Result};

/// Tolerance on `Σ ṗ` accepted as a consistent right-hand side.
pub const RHS_TOLERANCE: f64 = 1e-10;

type TauFn = dyn Fn(&Pmf) -> Vec<f64> + Send + Sync;

/// Choice of `τ`, which defines the kinetic-energy weight `w = p(z) / (τ(x) τ(z))`.
#[derive(Clone)]
pub enum WeightSpec {
    /// `τ = 1[p > 0]`.
    TauIndicator,
    /// `τ = p^α`; `α = 1` is the stable weight `w = 1 / p(x)`.
    TauPower(f64),
    /// `τ = δ_{argmax p}`, ties to the lowest index.
    TauPowerInf,
    CustomTau(Arc<TauFn>),
}

impl fmt::Debug for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TauIndicator => write!(f, "TauIndicator"),
            Self::TauPower(a) => write!(f, "TauPower({a})"),
            Self::TauPowerInf => write!(f, "TauPowerInf"),
            Self::CustomTau(_) => write!(f, "CustomTau(..)"),
        }
    }
}

impl WeightSpec {
    pub fn stable() -> Self {
        Self::TauPower(1.0)
    }

    /// `τ(p)`, checked against the safe-weight condition `p = 0 ⇒ τ = 0`.
    pub fn tau(&self, p: &Pmf) -> Result<Vec<f64>> {
        let ps = p.as_slice();
        let tau = match self {
            Self::TauIndicator => ps.iter().map(|&x| f64::from(u8::from(x > 0.0))).collect(),
            Self::TauPower(alpha) => {
                check_alpha(*alpha)?;
                ps.iter().map(|&x| x.powf(*alpha)).collect()
            }
            Self::TauPowerInf => {
                let mut tau = vec![0.0; ps.len()];
                tau[argmax(ps)] = 1.0;
                tau
            }
            Self::CustomTau(f) => f(p),
        };
        if tau.len() != ps.len() {
            return Err(Error::SizeMismatch {
                expected: ps.len(),
                found: tau.len(),
            });
        }
        for (index, (&t, &px)) in tau.iter().zip(ps).enumerate() {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::NegativeWeight { index, value: t });
            }
            if px == 0.0 && t != 0.0 {
                return Err(Error::UnsafeWeight { index, tau: t });
            }
        }
        Ok(tau)
    }

    /// `π = τ / Σ τ`, computed in the log domain for powers.
    pub fn normalized_tau(&self, p: &Pmf) -> Result<Vec<f64>> {
        match self {
            Self::TauPower(alpha) if *alpha != 1.0 => {
                check_alpha(*alpha)?;
                let logs: Vec<f64> = p.as_slice().iter().map(|&x| alpha * x.ln()).collect();
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                Ok(e.into_iter().map(|x| x / z).collect())
            }
            _ => {
                let tau = self.tau(p)?;
                let z: f64 = tau.iter().sum();
                if z <= 0.0 {
                    return Err(Error::AllZero);
                }
                Ok(tau.into_iter().map(|x| x / z).collect())
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0) {
        return Err(Error::AlphaOutOfRange { alpha });
    }
    Ok(())
}

fn check_rhs(p: &Pmf, dp: &[f64]) -> Result<()> {
    if p.len() != dp.len() {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            found: dp.len(),
        });
    }
    let sum: f64 = dp.iter().sum();
    if sum.abs() > RHS_TOLERANCE {
        return Err(Error::InconsistentRhs { sum });
    }
    Ok(())
}

/// Solves `Σ_z τ(x) τ(z) (f(x) - f(z)) = ṗ(x)` with a dense Cholesky factorization.
///
/// The graph Laplacian `L` is singular along the constant vector; the solver works
/// with `L + c 11ᵀ / K` (positive definite for a connected graph) and then removes
/// the mean of `f`. One step of iterative refinement is applied.
pub fn laplacian_solve(p: &Pmf, dp: &[f64], w: &WeightSpec) -> Result<Vec<f64>> {
    check_rhs(p, dp)?;
    if let Some(x) = p.as_slice().iter().position(|&v| v <= 0.0) {
        return Err(Error::SingularSystem(format!("p({x}) = 0")));
    }
    let tau = w.tau(p)?;
    if let Some(x) = tau.iter().position(|&v| v <= 0.0) {
        return Err(Error::SingularSystem(format!("tau({x}) = 0 disconnects the graph")));
    }
    let k = p.len();
    let mut lap = DMatrix::<f64>::zeros(k, k);
    for x in 0..k {
        for z in 0..k {
            if x != z {
                let rho = tau[x] * tau[z];
                lap[(x, z)] = -rho;
                lap[(x, x)] += rho;
            }
        }
    }
    let shift = lap.diagonal().mean();
    let mut sys = lap.clone();
    sys.add_scalar_mut(shift / k as f64);
    let chol = sys
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("Cholesky factorization failed".into()))?;
    let rhs = DVector::from_column_slice(dp);
    let mut f = chol.solve(&rhs);
    let resid = &rhs - &sys * &f;
    f += chol.solve(&resid);
    let mean = f.mean();
    Ok(f.iter().map(|v| v - mean).collect())
}

/// `f(x) = ṗ(x) / (τ(x) Σ τ)`; rows with `p(x) = 0` (hence `τ(x) = 0`) get `f = 0`.
pub fn closed_form_potential(p: &Pmf, dp: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    if p.len() != dp.len() || p.len() != tau.len() {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            found: if dp.len() != p.len() { dp.len() } else { tau.len() },
        });
    }
    let total: f64 = tau.iter().sum();
    (0..p.len())
        .map(|x| {
            if tau[x] > 0.0 {
                if p[x] == 0.0 {
                    return Err(Error::UnsafeWeight { index: x, tau: tau[x] });
                }
                Ok(dp[x] / (tau[x] * total))
            } else if p[x] > 0.0 {
                Err(Error::DivideByZeroTau { index: x })
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// `j⊥(x, z) = ρ(x, z) |f(x) - f(z)|` with `ρ = τ(x) τ(z)`; symmetric by construction.
pub fn corrector_flux(p: &Pmf, f: &[f64], w: &WeightSpec) -> Result<Flux> {
    let tau = w.tau(p)?;
    let k = tau.len();
    if f.len() != k {
        return Err(Error::SizeMismatch {
            expected: k,
            found: f.len(),
        });
    }
    let rho: Vec<f64> = (0..k * k).map(|i| tau[i / k] * tau[i % k]).collect();
    corrector_flux_with_conductance(f, &rho)
}

/// Corrector flux for an explicit row-major conductance `ρ(x, z) = p(z) / w(x, z)`.
pub fn corrector_flux_with_conductance(f: &[f64], rho: &[f64]) -> Result<Flux> {
    let k = f.len();
    if rho.len() != k * k {
        return Err(Error::SizeMismatch {
            expected: k * k,
            found: rho.len(),
        });
    }
    for x in 0..k {
        for z in 0..x {
            let (a, b) = (rho[x * k + z], rho[z * k + x]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                return Err(Error::AsymmetricWeight { x, z });
            }
        }
    }
    let mut j = Flux::zeros(k);
    for x in 0..k {
        for z in 0..x {
            let v = rho[x * k + z] * (f[x] - f[z]).abs();
            j.data[x * k + z] = v;
            j.data[z * k + x] = v;
        }
    }
    Ok(j)
}
