//! Conditional velocities `u_t(·, z | x1)` for a conditional path.

use super::flux::flux_with_pi;
use super::laplacian::{closed_form_potential, WeightSpec};
use super::{velocity_from_flux, RateMatrix};
use crate::paths::{ConditionalPath, Scheduler};
use crate::pmf::Pmf;
use crate::{Error, Result};

/// Rate columns of a velocity that drives `p_t(· | x1)`.
pub trait ConditionalVelocity: Send + Sync {
    fn k(&self) -> usize;

    /// Column `z` of `u_t(·, · | x1)`: rates of leaving `z`, diagonal included.
    fn column(&self, t: f64, z: usize, x1: usize) -> Result<Vec<f64>>;

    fn matrix(&self, t: f64, x1: usize) -> Result<RateMatrix> {
        let cols = (0..self.k())
            .map(|z| self.column(t, z, x1))
            .collect::<Result<Vec<_>>>()?;
        Ok(RateMatrix::from_columns(&cols))
    }
}

/// `u(x, z | x1) = λ (δ_{x1}(x) - δ_z(x))` for `z ≠ x1`, `λ = κ̇ / (1 - κ)`.
pub fn velocity_mixture_conditional(
    sched: &Scheduler,
    t: f64,
    x1: usize,
    k: usize,
) -> Result<RateMatrix> {
    let cols = (0..k)
        .map(|z| mixture_column(sched, t, z, x1, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateMatrix::from_columns(&cols))
}

fn mixture_column(sched: &Scheduler, t: f64, z: usize, x1: usize, k: usize) -> Result<Vec<f64>> {
    let mut col = vec![0.0; k];
    if z != x1 {
        let lam = sched.rate(t, x1)?;
        col[x1] = lam;
        col[z] = -lam;
    }
    Ok(col)
}

/// `u(x, z | x1) = p_t(x | x1) β̇_t [d(z, x1) - d(x, x1)]_+`: jumps only move closer to `x1`.
pub fn velocity_metric_conditional(path: &ConditionalPath, t: f64, x1: usize) -> Result<RateMatrix> {
    let cols = (0..path.k())
        .map(|z| metric_column(path, t, z, x1))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateMatrix::from_columns(&cols))
}

fn metric_column(path: &ConditionalPath, t: f64, z: usize, x1: usize) -> Result<Vec<f64>> {
    let ConditionalPath::Metric { metric, beta } = path else {
        return Err(Error::Config(format!(
            "metric velocity requested for a {} path",
            path.family()
        )));
    };
    let k = metric.k();
    let p = path.eval(t, x1)?;
    let bd = if t < 1.0 { beta.beta_dot(t) } else { 0.0 };
    let dz = metric.dist(z, x1);
    let mut col: Vec<f64> = (0..k)
        .map(|x| {
            if x == z {
                0.0
            } else {
                p[x] * bd * (dz - metric.dist(x, x1)).max(0.0)
            }
        })
        .collect();
    col[z] = -col.iter().sum::<f64>();
    Ok(col)
}

/// How a [`PathVelocity`] turns `(p_t, ṗ_t)` into rates.
#[derive(Debug, Clone)]
pub enum FluxChoice {
    /// Closed forms: the mixture jump rate `λ` or the metric-path velocity.
    ClosedForm,
    /// The stable flux `[p(z) ṗ(x) - ṗ(z) p(x)]_+`.
    Stable,
    /// `[ṗ(x) - ṗ(z)]_+ / K` over the full alphabet; unsafe where `p_t` has zeros.
    Indicator,
    /// `[ṗ(x) π(z) - ṗ(z) π(x)]_+` with `π = τ / Στ`.
    Weighted(WeightSpec),
}

impl FluxChoice {
    pub fn name(&self) -> String {
        match self {
            Self::ClosedForm => "closed_form".into(),
            Self::Stable => "stable".into(),
            Self::Indicator => "indicator".into(),
            Self::Weighted(WeightSpec::TauIndicator) => "tau_indicator".into(),
            Self::Weighted(WeightSpec::TauPower(a)) => format!("power_{a}"),
            Self::Weighted(WeightSpec::TauPowerInf) => "power_inf".into(),
            Self::Weighted(WeightSpec::CustomTau(_)) => "custom_tau".into(),
        }
    }
}

/// A conditional velocity generating a [`ConditionalPath`].
#[derive(Debug, Clone)]
pub struct PathVelocity {
    pub path: ConditionalPath,
    pub flux: FluxChoice,
    /// Weight whose conductance `τ(x) τ(z)` and potential define the corrector.
    pub corrector_weight: WeightSpec,
}

impl PathVelocity {
    pub fn new(path: ConditionalPath, flux: FluxChoice) -> Self {
        Self {
            path,
            flux,
            corrector_weight: WeightSpec::stable(),
        }
    }

    pub fn closed_form(path: ConditionalPath) -> Self {
        Self::new(path, FluxChoice::ClosedForm)
    }

    fn pi(&self, p: &Pmf) -> Result<Vec<f64>> {
        match &self.flux {
            FluxChoice::Indicator => Ok(vec![1.0 / p.len() as f64; p.len()]),
            FluxChoice::Weighted(w) => w.normalized_tau(p),
            _ => Ok(p.as_slice().to_vec()),
        }
    }

    /// Column `z` of the divergence-free corrector `u⊥ = j⊥ / p_t(z)` built from the
    /// closed-form potential `f = ṗ / (τ Στ)`.
    pub fn corrector_column(&self, t: f64, z: usize, x1: usize) -> Result<Vec<f64>> {
        let (p, dp) = self.path.eval_with_derivative(t, x1)?;
        let k = p.len();
        let mut col = vec![0.0; k];
        if p[z] == 0.0 {
            return Ok(col);
        }
        let tau = self.corrector_weight.tau(&p)?;
        let f = closed_form_potential(&p, &dp, &tau)?;
        for x in (0..k).filter(|&x| x != z) {
            col[x] = tau[x] * tau[z] * (f[x] - f[z]).abs() / p[z];
        }
        col[z] = -col.iter().sum::<f64>();
        Ok(col)
    }
}

impl ConditionalVelocity for PathVelocity {
    fn k(&self) -> usize {
        self.path.k()
    }

    fn column(&self, t: f64, z: usize, x1: usize) -> Result<Vec<f64>> {
        let k = self.path.k();
        if z >= k {
            return Err(Error::OutOfAlphabet { token: z, k });
        }
        if let FluxChoice::ClosedForm = self.flux {
            return match self.path.mixture_scheduler() {
                Some(sched) => mixture_column(&sched, t, z, x1, k),
                None => metric_column(&self.path, t, z, x1),
            };
        }
        let (p, dp) = self.path.eval_with_derivative(t, x1)?;
        let pi = self.pi(&p)?;
        let mut col = vec![0.0; k];
        for x in (0..k).filter(|&x| x != z) {
            let j = (dp[x] * pi[z] - dp[z] * pi[x]).max(0.0);
            if p[z] == 0.0 {
                if j > 0.0 {
                    return Err(Error::UnsafeFlux {
                        from: z,
                        to: x,
                        value: j,
                    });
                }
            } else {
                col[x] = j / p[z];
            }
        }
        col[z] = -col.iter().sum::<f64>();
        Ok(col)
    }

    fn matrix(&self, t: f64, x1: usize) -> Result<RateMatrix> {
        if let FluxChoice::ClosedForm = self.flux {
            return match self.path.mixture_scheduler() {
                Some(sched) => velocity_mixture_conditional(&sched, t, x1, self.k()),
                None => velocity_metric_conditional(&self.path, t, x1),
            };
        }
        let (p, dp) = self.path.eval_with_derivative(t, x1)?;
        velocity_from_flux(&flux_with_pi(&self.pi(&p)?, &dp), &p)
    }
}
