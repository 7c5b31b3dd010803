//! Marginal velocities `u^i_t(·, z) = Σ_{x1} u^i_t(·, z^i | x1) p^i_{1|t}(x1 | z)`.

use super::conditional::ConditionalVelocity;
use crate::paths::Scheduler;
use crate::posterior::PosteriorModel;
use crate::Result;

/// Per-coordinate rate columns of a factorized joint velocity.
pub trait MarginalVelocity: Send + Sync {
    fn k(&self) -> usize;

    /// Rates of coordinate `i` leaving `z^i`, given the full joint state `z`.
    fn column(&self, t: f64, z: &[usize], i: usize) -> Result<Vec<f64>>;
}

/// Generic marginalization over the posterior; `O(K²)` per coordinate.
pub fn marginal_velocity(
    posterior: &dyn PosteriorModel,
    cond: &dyn ConditionalVelocity,
    z: &[usize],
    i: usize,
    t: f64,
) -> Result<Vec<f64>> {
    let post = posterior.posterior(t, z, i)?;
    let k = cond.k();
    let mut col = vec![0.0; k];
    for x1 in post.support() {
        let c = cond.column(t, z[i], x1)?;
        for (acc, v) in col.iter_mut().zip(c) {
            *acc += post[x1] * v;
        }
    }
    Ok(col)
}

/// Mixture-path closed form, `O(K)` per coordinate:
/// `λ(x) p_{1|t}(x | z) - δ_{z^i}(x) Σ_y λ(y) p_{1|t}(y | z)`.
pub fn marginal_velocity_mixture(
    posterior: &dyn PosteriorModel,
    sched: &Scheduler,
    z: &[usize],
    i: usize,
    t: f64,
) -> Result<Vec<f64>> {
    let post = posterior.posterior(t, z, i)?;
    let mut col = vec![0.0; post.len()];
    let mut total = 0.0;
    for y in post.support() {
        let v = sched.rate(t, y)? * post[y];
        col[y] = v;
        total += v;
    }
    col[z[i]] -= total;
    Ok(col)
}

/// [`marginal_velocity`] packaged as a [`MarginalVelocity`].
pub struct PosteriorMarginal<'a> {
    pub posterior: &'a dyn PosteriorModel,
    pub velocity: &'a dyn ConditionalVelocity,
}

impl MarginalVelocity for PosteriorMarginal<'_> {
    fn k(&self) -> usize {
        self.velocity.k()
    }

    fn column(&self, t: f64, z: &[usize], i: usize) -> Result<Vec<f64>> {
        marginal_velocity(self.posterior, self.velocity, z, i, t)
    }
}

/// [`marginal_velocity_mixture`] packaged as a [`MarginalVelocity`].
pub struct MixtureMarginal<'a> {
    pub posterior: &'a dyn PosteriorModel,
    pub scheduler: Scheduler,
}

impl MarginalVelocity for MixtureMarginal<'_> {
    fn k(&self) -> usize {
        self.posterior.k()
    }

    fn column(&self, t: f64, z: &[usize], i: usize) -> Result<Vec<f64>> {
        marginal_velocity_mixture(self.posterior, &self.scheduler, z, i, t)
    }
}

/// The frozen chain.
pub struct ZeroVelocity {
    pub k: usize,
}

impl MarginalVelocity for ZeroVelocity {
    fn k(&self) -> usize {
        self.k
    }

    fn column(&self, _t: f64, _z: &[usize], _i: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.k])
    }
}
