//! Continuous-time ELBO for CTMC models and an exact-likelihood oracle.
//!
//! The general integrand compares marginal and conditional rates coordinate-wise;
//! for mixture paths the marginal rate has a closed form and the integrand costs
//! `O(D K)`. Time integrals are truncated at `t_cutoff` (default `1 - 1e-3`)
//! where the mixture jump rate diverges; the omitted interval is reported.
//!
//! The oracle integrates the Kolmogorov forward equation over the full joint space
//! with the factorized marginal velocity, then applies a final posterior-denoise
//! transition at `t_cutoff`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::paths::{ConditionalPath, KoScheduler, Scheduler};
use crate::pmf::{decode, encode, Pmf};
use crate::posterior::PosteriorModel;
use crate::rng::{cumulative, sample_cdf, stream_rng};
use crate::velocity::{
    ConditionalVelocity, MarginalVelocity, MixtureMarginal, PathVelocity, PosteriorMarginal,
};
use crate::{Error, Result};

/// Largest joint space the likelihood oracle integrates over.
pub const MAX_ORACLE_CELLS: usize = 10_000;

/// `Σ_i [u^i(x_t^i, x_t) - u^i(x_t^i, x_t^i | x1^i)
///       + Σ_{y≠x_t^i} u^i(y, x_t^i | x1^i) log(u^i(y, x_t) / u^i(y, x_t^i | x1^i))]`.
///
/// Terms with zero conditional rate contribute nothing; a positive conditional rate
/// against a zero marginal rate is [`Error::RateSupportMismatch`].
pub fn elbo_integrand_general(
    x1: &[usize],
    xt: &[usize],
    t: f64,
    marginal: &dyn MarginalVelocity,
    cond: &dyn ConditionalVelocity,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..xt.len() {
        let z = xt[i];
        let um = marginal.column(t, xt, i)?;
        let uc = cond.column(t, z, x1[i])?;
        total += um[z] - uc[z];
        for y in (0..uc.len()).filter(|&y| y != z) {
            if uc[y] > 0.0 {
                if um[y] <= 0.0 {
                    return Err(Error::RateSupportMismatch { from: z, to: y });
                }
                total += uc[y] * (um[y] / uc[y]).ln();
            }
        }
    }
    Ok(total)
}

/// Mixture-path integrand in terms of the posterior and `λ(y) = κ̇_t(y) / (1 - κ_t(y))`:
/// `Σ_i [λ(x_t^i) p(x_t^i | x_t) - Σ_y λ(y) p(y | x_t)
///       + 1[x_t^i ≠ x1^i] λ(x1^i) (1 + log p(x1^i | x_t))]`.
///
/// Returns `-∞` when the posterior gives zero mass to a required `x1^i`.
pub fn elbo_integrand_mixture(
    x1: &[usize],
    xt: &[usize],
    t: f64,
    posterior: &dyn PosteriorModel,
    sched: &Scheduler,
) -> Result<f64> {
    let posts = posterior.posterior_all(t, xt)?;
    let mut total = 0.0;
    for (i, post) in posts.iter().enumerate() {
        let z = xt[i];
        let mut mean_rate = 0.0;
        for y in post.support() {
            mean_rate += sched.rate(t, y)? * post[y];
        }
        if post[z] > 0.0 {
            total += sched.rate(t, z)? * post[z];
        }
        total -= mean_rate;
        if z != x1[i] {
            let lam = sched.rate(t, x1[i])?;
            if lam > 0.0 {
                total += lam * (1.0 + post[x1[i]].ln());
            }
        }
    }
    Ok(total)
}

/// Masked-path integrand, valid when the model is a delta on unmasked coordinates:
/// `Σ_i 1[x_t^i = m] [-Σ_y λ(y) p(y | x_t) + λ(x1^i) (1 + log p(x1^i | x_t))]`.
pub fn elbo_integrand_masked(
    x1: &[usize],
    xt: &[usize],
    t: f64,
    posterior: &dyn PosteriorModel,
    sched: &Scheduler,
    mask: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for i in (0..xt.len()).filter(|&i| xt[i] == mask) {
        let post = posterior.posterior(t, xt, i)?;
        for y in post.support() {
            total -= sched.rate(t, y)? * post[y];
        }
        let lam = sched.rate(t, x1[i])?;
        if lam > 0.0 {
            total += lam * (1.0 + post[x1[i]].ln());
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboEstimator {
    /// `t ∼ U[0, t_cutoff]`.
    PlainTime,
    /// Stratified grid in `κ`, `κ_j = (j + ε) κ_max / N`, with a shared `ε ∼ U(0, 1]`.
    KappaStratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    /// Estimated lower bound on `log p_1(x1)` in nats, integrated over `[0, t_cutoff]`.
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub t_cutoff: f64,
    pub estimator: ElboEstimator,
    /// Time interval left out of the integral.
    pub omitted_tail: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElboConfig {
    pub n_samples: usize,
    pub t_cutoff: f64,
    pub use_kappa_cov: bool,
    pub seed: u64,
}

impl Default for ElboConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            t_cutoff: 1.0 - 1e-3,
            use_kappa_cov: false,
            seed: 0,
        }
    }
}

/// Reference scheduler for the `κ` change of variables: returns `κ(t)`, `κ̇(t)`
/// and the inverse `t(κ)`.
enum KappaReference {
    Linear,
    Cubic,
    Ko(KoScheduler),
    Custom(Scheduler),
}

impl KappaReference {
    fn for_scheduler(s: &Scheduler, k: usize) -> Result<Self> {
        Ok(match s {
            Scheduler::Linear => Self::Linear,
            Scheduler::Cubic => Self::Cubic,
            Scheduler::KineticOptimal(ko) => {
                if s.is_token_independent() {
                    Self::Ko(ko.clone())
                } else {
                    Self::Ko(KoScheduler::with_constant_omega(k, FRAC_PI_4))
                }
            }
            Scheduler::Custom(c) => {
                if !c.is_token_independent() {
                    return Err(Error::KappaCovUnavailable);
                }
                Self::Custom(s.clone())
            }
        })
    }

    fn kappa(&self, t: f64) -> f64 {
        match self {
            Self::Linear => t,
            Self::Cubic => t * t * t,
            Self::Ko(ko) => ko.kappa(t, 0),
            Self::Custom(s) => s.kappa(t, 0),
        }
    }

    fn kappa_dot(&self, t: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Cubic => 3.0 * t * t,
            Self::Ko(ko) => ko.kappa_dot(t, 0),
            Self::Custom(s) => s.kappa_dot(t, 0),
        }
    }

    fn inverse(&self, kappa: f64, t_max: f64) -> f64 {
        match self {
            Self::Linear => kappa,
            Self::Cubic => kappa.cbrt(),
            Self::Ko(ko) => ko.inverse_kappa(kappa).expect("constant-angle reference"),
            Self::Custom(s) => {
                let (mut lo, mut hi) = (0.0, t_max);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if s.kappa(mid, 0) < kappa {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

fn sample_noisy<R: Rng + ?Sized>(rng: &mut R, path: &ConditionalPath, t: f64, x1: &[usize]) -> Result<Vec<usize>> {
    x1.iter()
        .map(|&y| Ok(sample_cdf(rng, &cumulative(path.eval(t, y)?.as_slice()))))
        .collect()
}

/// Evaluates the ELBO integrand appropriate for `path`: the mixture closed form when
/// available, the general form with the closed-form conditional velocity otherwise.
pub fn elbo_integrand(
    x1: &[usize],
    xt: &[usize],
    t: f64,
    path: &ConditionalPath,
    posterior: &dyn PosteriorModel,
) -> Result<f64> {
    match path.mixture_scheduler() {
        Some(s) => elbo_integrand_mixture(x1, xt, t, posterior, &s),
        None => {
            let cond = PathVelocity::closed_form(path.clone());
            let marginal = PosteriorMarginal {
                posterior,
                velocity: &cond,
            };
            elbo_integrand_general(x1, xt, t, &marginal, &cond)
        }
    }
}

/// Monte-Carlo ELBO of `x1`. Sample `j` uses RNG stream `j + 1`; stream 0 holds the
/// shared stratification offset.
pub fn elbo_estimate(
    x1: &[usize],
    path: &ConditionalPath,
    posterior: &dyn PosteriorModel,
    cfg: &ElboConfig,
) -> Result<ElboEstimate> {
    let tc = cfg.t_cutoff;
    if !(tc > 0.0 && tc < 1.0) {
        return Err(Error::Config(format!("t_cutoff = {tc} outside (0, 1)")));
    }
    if cfg.n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    if x1.len() != posterior.dims() {
        return Err(Error::SizeMismatch {
            expected: posterior.dims(),
            found: x1.len(),
        });
    }
    let n = cfg.n_samples;
    let (estimator, reference) = if cfg.use_kappa_cov {
        let sched = path.mixture_scheduler().ok_or(Error::KappaCovUnavailable)?;
        (
            ElboEstimator::KappaStratified,
            Some(KappaReference::for_scheduler(&sched, path.k())?),
        )
    } else {
        (ElboEstimator::PlainTime, None)
    };
    let eps = 1.0 - stream_rng(cfg.seed, 0).random::<f64>();
    let kappa_max = reference.as_ref().map(|r| r.kappa(tc));

    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(cfg.seed, j as u64 + 1);
            let (t, weight) = match (&reference, kappa_max) {
                (Some(r), Some(km)) => {
                    let kappa = (j as f64 + eps) * km / n as f64;
                    let t = r.inverse(kappa, tc).min(tc);
                    (t, km / r.kappa_dot(t))
                }
                _ => (rng.random::<f64>() * tc, tc),
            };
            let xt = sample_noisy(&mut rng, path, t, x1)?;
            Ok(weight * elbo_integrand(x1, &xt, t, path, posterior)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (value, std_error) = mean_and_stderr(&values);
    Ok(ElboEstimate {
        value,
        std_error,
        n_samples: n,
        t_cutoff: tc,
        estimator,
        omitted_tail: [tc, 1.0],
    })
}

pub(crate) fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Largest `h λ_max` taken in one RK4 stage; longer steps are subdivided.
pub const RK4_STIFFNESS_LIMIT: f64 = 0.5;

/// `dp/dt(x) = Σ_i Σ_y u^i(x^i, x[i←y]) p(x[i←y])` for the factorized velocity,
/// together with the largest total exit rate among states with mass.
fn kolmogorov_rhs(
    p: &[f64],
    t: f64,
    k: usize,
    dims: usize,
    velocity: &dyn MarginalVelocity,
) -> Result<(Vec<f64>, f64)> {
    let mut dp = vec![0.0; p.len()];
    let mut max_exit: f64 = 0.0;
    for (idx, &pz) in p.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let z = decode(idx, k, dims);
        let mut exit = 0.0;
        for i in 0..dims {
            let col = velocity.column(t, &z, i)?;
            let stride = k.pow(i as u32);
            let base = idx - z[i] * stride;
            exit -= col[z[i]];
            for (y, &u) in col.iter().enumerate() {
                if u != 0.0 {
                    dp[base + y * stride] += u * pz;
                }
            }
        }
        max_exit = max_exit.max(exit);
    }
    Ok((dp, max_exit))
}

/// Classical RK4 on the full joint space from `t0` to `t1` in `steps` uniform steps.
///
/// A step whose `h λ_max` exceeds [`RK4_STIFFNESS_LIMIT`] is split into equal
/// substeps; near `t = 1` the jump rates of most paths diverge and a uniform grid
/// alone is unstable.
pub fn kolmogorov_forward(
    p0: &[f64],
    k: usize,
    dims: usize,
    velocity: &dyn MarginalVelocity,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let n = crate::pmf::joint_size(k, dims)?;
    if n > MAX_ORACLE_CELLS {
        return Err(Error::SizeGuard {
            what: "Kolmogorov oracle state",
            size: n as u128,
            limit: MAX_ORACLE_CELLS as u128,
        });
    }
    if p0.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: p0.len(),
        });
    }
    let h = (t1 - t0) / steps as f64;
    let mut p = p0.to_vec();
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let (d1, lam) = kolmogorov_rhs(&p, t, k, dims, velocity)?;
        let sub = ((h.abs() * lam / RK4_STIFFNESS_LIMIT).ceil() as usize).max(1);
        let hs = h / sub as f64;
        let mut first = Some(d1);
        for j in 0..sub {
            let tj = t + j as f64 * hs;
            let k1 = match first.take() {
                Some(d) => d,
                None => kolmogorov_rhs(&p, tj, k, dims, velocity)?.0,
            };
            p = rk4_step(&p, k1, tj, hs, k, dims, velocity)?;
        }
    }
    Ok(p)
}

fn rk4_step(
    p: &[f64],
    k1: Vec<f64>,
    t: f64,
    h: f64,
    k: usize,
    dims: usize,
    velocity: &dyn MarginalVelocity,
) -> Result<Vec<f64>> {
    let axpy = |d: &[f64], a: f64| -> Vec<f64> { p.iter().zip(d).map(|(x, y)| x + a * y).collect() };
    let k2 = kolmogorov_rhs(&axpy(&k1, 0.5 * h), t + 0.5 * h, k, dims, velocity)?.0;
    let k3 = kolmogorov_rhs(&axpy(&k2, 0.5 * h), t + 0.5 * h, k, dims, velocity)?.0;
    let k4 = kolmogorov_rhs(&axpy(&k3, h), t + h, k, dims, velocity)?.0;
    Ok((0..p.len())
        .map(|j| p[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect())
}

/// Model distribution `p_1` obtained by integrating to `t_cutoff` and denoising each
/// coordinate with the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodOracle {
    k: usize,
    dims: usize,
    p_cutoff: Vec<f64>,
    p1: Vec<f64>,
}

impl LikelihoodOracle {
    pub fn new(
        path: &ConditionalPath,
        posterior: &dyn PosteriorModel,
        t_cutoff: f64,
        ode_steps: usize,
    ) -> Result<Self> {
        let (k, dims) = (posterior.k(), posterior.dims());
        let n = crate::pmf::joint_size(k, dims)?;
        if n > MAX_ORACLE_CELLS {
            return Err(Error::SizeGuard {
                what: "Kolmogorov oracle state",
                size: n as u128,
                limit: MAX_ORACLE_CELLS as u128,
            });
        }
        let source = path.source();
        let p0: Vec<f64> = (0..n)
            .map(|idx| decode(idx, k, dims).iter().map(|&x| source[x]).product())
            .collect();
        let p_cutoff = match path.mixture_scheduler() {
            Some(scheduler) => {
                let v = MixtureMarginal {
                    posterior,
                    scheduler,
                };
                kolmogorov_forward(&p0, k, dims, &v, 0.0, t_cutoff, ode_steps)?
            }
            None => {
                let cond = PathVelocity::closed_form(path.clone());
                let v = PosteriorMarginal {
                    posterior,
                    velocity: &cond,
                };
                kolmogorov_forward(&p0, k, dims, &v, 0.0, t_cutoff, ode_steps)?
            }
        };
        let p1 = denoise(&p_cutoff, k, dims, posterior, t_cutoff)?;
        Ok(Self {
            k,
            dims,
            p_cutoff,
            p1,
        })
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn p_cutoff(&self) -> &[f64] {
        &self.p_cutoff
    }

    pub fn log_prob(&self, x1: &[usize]) -> f64 {
        self.p1[encode(x1, self.k)].ln()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

/// `p_1(x) = Σ_z p(z) Π_i p^i_{1|t}(x^i | z)`.
pub fn denoise(
    p: &[f64],
    k: usize,
    dims: usize,
    posterior: &dyn PosteriorModel,
    t: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; p.len()];
    for (idx, &pz) in p.iter().enumerate() {
        if pz <= 0.0 {
            continue;
        }
        let z = decode(idx, k, dims);
        let posts: Vec<Pmf> = posterior.posterior_all(t, &z)?;
        for (jdx, o) in out.iter_mut().enumerate() {
            let x = decode(jdx, k, dims);
            let w: f64 = x.iter().zip(&posts).map(|(&xi, pi)| pi[xi]).product();
            *o += pz * w;
        }
    }
    Ok(out)
}

/// `log p_1(x1)` of the model defined by `posterior` on `path` (RK4, `ode_steps`).
pub fn exact_loglik_oracle(
    path: &ConditionalPath,
    posterior: &dyn PosteriorModel,
    x1: &[usize],
    t_cutoff: f64,
    ode_steps: usize,
) -> Result<f64> {
    Ok(LikelihoodOracle::new(path, posterior, t_cutoff, ode_steps)?.log_prob(x1))
}
