//! Fluxes, rate matrices and the velocities built from them.
//!
//! Both [`Flux`] and [`RateMatrix`] are dense `K×K` arrays indexed `(x, z)`:
//! entry `(x, z)` describes movement from `z` into `x`, so a column holds
//! everything leaving `z`. A rate matrix satisfies the rate conditions: off-diagonal
//! entries are non-negative and each column sums to zero.

mod conditional;
mod energy;
mod flux;
mod laplacian;
mod marginal;

use serde::Serialize;

use crate::pmf::Pmf;
use crate::{Error, Result};

pub use conditional::{
    velocity_metric_conditional, velocity_mixture_conditional, ConditionalVelocity, FluxChoice,
    PathVelocity,
};
pub use energy::{kinetic_energy_rate, path_energy};
pub use flux::{
    flux_from_weight, flux_indicator, flux_power, flux_power_inf, flux_stable, flux_with_pi,
};
pub use laplacian::{
    closed_form_potential, corrector_flux, corrector_flux_with_conductance, laplacian_solve,
    WeightSpec,
};
pub use marginal::{
    marginal_velocity, marginal_velocity_mixture, MarginalVelocity, MixtureMarginal,
    PosteriorMarginal, ZeroVelocity,
};

/// Mass per unit time moving `z → x`, stored at `(x, z)`. The diagonal is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct Flux {
    k: usize,
    data: Vec<f64>,
}

/// Transition rates `u(x, z)` of a CTMC, column `z` leaving state `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct RateMatrix {
    k: usize,
    data: Vec<f64>,
}

fn rows(k: usize, data: &[f64]) -> Vec<Vec<f64>> {
    data.chunks(k).map(<[f64]>::to_vec).collect()
}

impl From<Flux> for Vec<Vec<f64>> {
    fn from(j: Flux) -> Self {
        rows(j.k, &j.data)
    }
}

impl From<RateMatrix> for Vec<Vec<f64>> {
    fn from(u: RateMatrix) -> Self {
        rows(u.k, &u.data)
    }
}

impl Flux {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; k * k],
        }
    }

    /// Off-diagonal entries from `f(x, z)`; the diagonal is left at zero.
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut j = Self::zeros(k);
        for x in 0..k {
            for z in 0..k {
                if x != z {
                    j.data[x * k + z] = f(x, z);
                }
            }
        }
        j
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, x: usize, z: usize) -> f64 {
        self.data[x * self.k + z]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|x| (0..x).all(|z| self.get(x, z) == self.get(z, x)))
    }

    /// No mass leaves a state with zero probability.
    pub fn is_safe(&self, p: &Pmf) -> bool {
        (0..self.k).all(|z| p[z] > 0.0 || (0..self.k).all(|x| self.get(x, z) == 0.0))
    }
}

/// `div_x(j) = Σ_{z≠x} j(z, x) - Σ_{z≠x} j(x, z)`: outgoing minus incoming mass.
///
/// Each pair is differenced before summing, so a symmetric flux yields exact zeros.
pub fn divergence(j: &Flux) -> Vec<f64> {
    let k = j.k;
    (0..k)
        .map(|x| {
            (0..k)
                .filter(|&z| z != x)
                .map(|z| j.get(z, x) - j.get(x, z))
                .sum()
        })
        .collect()
}

/// `u(x, z) = j(x, z) / p(z)`, with zero columns where `p(z) = 0`.
pub fn velocity_from_flux(j: &Flux, p: &Pmf) -> Result<RateMatrix> {
    let k = j.k;
    if p.len() != k {
        return Err(Error::SizeMismatch {
            expected: k,
            found: p.len(),
        });
    }
    let mut u = RateMatrix::zeros(k);
    for z in 0..k {
        for x in (0..k).filter(|&x| x != z) {
            let jxz = j.get(x, z);
            if p[z] == 0.0 {
                if jxz > 0.0 {
                    return Err(Error::UnsafeFlux {
                        from: z,
                        to: x,
                        value: jxz,
                    });
                }
            } else {
                u.data[x * k + z] = jxz / p[z];
            }
        }
    }
    u.fill_diagonal();
    Ok(u)
}

impl RateMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; k * k],
        }
    }

    /// Builds a rate matrix from its columns, resetting each diagonal to minus the
    /// off-diagonal column sum.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let k = columns.len();
        let mut u = Self::zeros(k);
        for (z, col) in columns.iter().enumerate() {
            for (x, &v) in col.iter().enumerate() {
                u.data[x * k + z] = v;
            }
        }
        u.fill_diagonal();
        u
    }

    fn fill_diagonal(&mut self) {
        let k = self.k;
        for z in 0..k {
            let out: f64 = (0..k).filter(|&x| x != z).map(|x| self.data[x * k + z]).sum();
            self.data[z * k + z] = -out;
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, x: usize, z: usize) -> f64 {
        self.data[x * self.k + z]
    }

    pub fn column(&self, z: usize) -> Vec<f64> {
        (0..self.k).map(|x| self.get(x, z)).collect()
    }

    /// Smallest off-diagonal entry and largest absolute column sum.
    pub fn rate_condition_residuals(&self) -> (f64, f64) {
        let k = self.k;
        let mut min_off = f64::INFINITY;
        let mut max_sum: f64 = 0.0;
        for z in 0..k {
            let mut s = 0.0;
            for x in 0..k {
                let v = self.get(x, z);
                s += v;
                if x != z {
                    min_off = min_off.min(v);
                }
            }
            max_sum = max_sum.max(s.abs());
        }
        (min_off, max_sum)
    }

    pub fn satisfies_rate_conditions(&self, tol: f64) -> bool {
        let (min_off, max_sum) = self.rate_condition_residuals();
        min_off >= 0.0 && max_sum <= tol
    }

    /// `Σ_z u(x, z) p(z)` for every `x`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|x| (0..self.k).map(|z| self.get(x, z) * p[z]).sum())
            .collect()
    }
}

/// Checks a single rate column: non-negative off-diagonal, zero sum.
pub fn column_satisfies_rate_conditions(column: &[f64], z: usize, tol: f64) -> bool {
    let off_ok = column
        .iter()
        .enumerate()
        .all(|(x, &v)| x == z || v >= 0.0);
    off_ok && column.iter().sum::<f64>().abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn divergence_examples() {
        let mut j = Flux::zeros(2);
        j.data[2] = 1.0; // j(1, 0)
        assert_eq!(divergence(&j), vec![1.0, -1.0]);
        assert_eq!(divergence(&Flux::zeros(3)), vec![0.0; 3]);
        let sym = Flux::from_fn(4, |x, z| 0.1 + 0.3 * (x + z) as f64);
        assert!(divergence(&sym).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn velocity_from_flux_examples() {
        let p = Pmf::new(vec![0.7, 0.3]).unwrap();
        let zero = velocity_from_flux(&Flux::zeros(2), &p).unwrap();
        assert_eq!(zero, RateMatrix::zeros(2));
        let j = Flux::from_fn(2, |x, _| if x == 1 { 1.0 } else { 0.0 });
        let u = velocity_from_flux(&j, &p).unwrap();
        assert_abs_diff_eq!(u.get(1, 0), 1.0 / 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(u.get(0, 0), -1.0 / 0.7, epsilon = 1e-12);
        assert_eq!(u.column(1), vec![0.0, 0.0]);
        let q = Pmf::new(vec![1.0, 0.0]).unwrap();
        let leak = Flux::from_fn(2, |x, _| if x == 0 { 0.5 } else { 0.0 });
        assert!(matches!(
            velocity_from_flux(&leak, &q),
            Err(Error::UnsafeFlux { from: 1, to: 0, .. })
        ));
    }

    #[test]
    fn rate_matrix_serializes_row_major() {
        let u = RateMatrix::from_columns(&[vec![0.0, 2.0], vec![1.0, 0.0]]);
        assert_eq!(
            serde_json::to_string(&u).unwrap(),
            "[[-2.0,1.0],[2.0,-1.0]]"
        );
    }
}
