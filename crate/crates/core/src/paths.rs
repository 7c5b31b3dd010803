//! Schedulers, source distributions and conditional probability paths.
//!
//! A conditional path `p_t(x | x1)` interpolates a source pmf at `t = 0` and the
//! delta at `x1` at `t = 1`. Three families are provided:
//!
//! - mixture paths `(1 - κ_t(x1)) p(x) + κ_t(x1) δ_{x1}(x)` for any scheduler `κ`;
//! - metric-induced paths `softmax(-β_t d(x, x1))`;
//! - kinetic-optimal paths, the great-circle arc between `√p` and `δ_{x1}` on the
//!   unit sphere, squared entrywise.
//!
//! Every family exposes the exact time derivative `ṗ_t(x | x1)`.

use std::fmt;
use std::sync::Arc;

use crate::pmf::{Metric, Pmf};
use crate::{Error, Result};

/// Below this angle the kinetic-optimal scheduler switches to its Taylor limit.
pub const KO_TAYLOR_OMEGA: f64 = 1e-4;

/// Metric paths are only evaluated up to `1 - METRIC_T_MARGIN`; `t = 1` is the exact delta.
pub const METRIC_T_MARGIN: f64 = 1e-6;

/// A token-wise interpolation weight `κ_t(x1)` with `κ_0 = 0` and `κ_1 = 1`.
pub trait Schedule: Send + Sync + fmt::Debug {
    fn kappa(&self, t: f64, x1: usize) -> f64;

    fn kappa_dot(&self, t: f64, x1: usize) -> f64;

    /// Jump intensity `κ̇ / (1 - κ)` of the mixture velocity.
    fn rate(&self, t: f64, x1: usize) -> Result<f64> {
        let rest = 1.0 - self.kappa(t, x1);
        if rest <= 0.0 {
            return Err(Error::SchedulerSingularity { t });
        }
        Ok(self.kappa_dot(t, x1) / rest)
    }

    /// Whether `κ_t(x1)` is the same for every token.
    fn is_token_independent(&self) -> bool;
}

/// Scheduler of the kinetic-optimal mixture path.
///
/// `κ_t(x1) = 1 - sin²((1-t)Ω) / sin²Ω` with `Ω = arccos √p(x1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoScheduler {
    omega: Vec<f64>,
}

impl KoScheduler {
    pub fn new(source: &Pmf) -> Self {
        let omega = source
            .as_slice()
            .iter()
            .map(|&p| p.sqrt().min(1.0).acos())
            .collect();
        Self { omega }
    }

    /// Uses the same angle for every token.
    pub fn with_constant_omega(k: usize, omega: f64) -> Self {
        Self {
            omega: vec![omega; k],
        }
    }

    pub fn omega(&self, x1: usize) -> f64 {
        self.omega[x1]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    pub fn kappa(&self, t: f64, x1: usize) -> f64 {
        let om = self.omega[x1];
        if om < KO_TAYLOR_OMEGA {
            let s = 1.0 - t;
            return 1.0 - s * s;
        }
        let r = ((1.0 - t) * om).sin() / om.sin();
        1.0 - r * r
    }

    pub fn kappa_dot(&self, t: f64, x1: usize) -> f64 {
        let om = self.omega[x1];
        if om < KO_TAYLOR_OMEGA {
            return 2.0 * (1.0 - t);
        }
        let s = om.sin();
        om * (2.0 * (1.0 - t) * om).sin() / (s * s)
    }

    /// `κ̇/(1-κ) = 2Ω / tan((1-t)Ω)`.
    pub fn rate(&self, t: f64, x1: usize) -> Result<f64> {
        if t >= 1.0 {
            return Err(Error::SchedulerSingularity { t });
        }
        let om = self.omega[x1];
        if om < KO_TAYLOR_OMEGA {
            return Ok(2.0 / (1.0 - t));
        }
        Ok(2.0 * om / ((1.0 - t) * om).tan())
    }

    /// Inverse of `κ_t` when all angles coincide; `None` otherwise.
    pub fn inverse_kappa(&self, kappa: f64) -> Option<f64> {
        let om = self.omega[0];
        if self.omega.iter().any(|&o| o != om) {
            return None;
        }
        let kappa = kappa.clamp(0.0, 1.0);
        if om < KO_TAYLOR_OMEGA {
            return Some(1.0 - (1.0 - kappa).sqrt());
        }
        // sin((1-t)Ω) = sinΩ √(1-κ), with (1-t)Ω ∈ [0, Ω] and Ω ≤ π/2
        let arg = (om.sin() * (1.0 - kappa).sqrt()).min(1.0);
        Some(1.0 - arg.asin() / om)
    }
}

/// Interpolation scheduler of a mixture path.
#[derive(Debug, Clone)]
pub enum Scheduler {
    /// `κ_t = t`.
    Linear,
    /// `κ_t = t³`.
    Cubic,
    KineticOptimal(KoScheduler),
    Custom(Arc<dyn Schedule>),
}

impl Scheduler {
    pub fn kinetic_optimal(source: &Pmf) -> Self {
        Self::KineticOptimal(KoScheduler::new(source))
    }

    pub fn kappa(&self, t: f64, x1: usize) -> f64 {
        match self {
            Self::Linear => t,
            Self::Cubic => t * t * t,
            Self::KineticOptimal(ko) => ko.kappa(t, x1),
            Self::Custom(s) => s.kappa(t, x1),
        }
    }

    pub fn kappa_dot(&self, t: f64, x1: usize) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Cubic => 3.0 * t * t,
            Self::KineticOptimal(ko) => ko.kappa_dot(t, x1),
            Self::Custom(s) => s.kappa_dot(t, x1),
        }
    }

    /// `λ_t(x1) = κ̇_t(x1) / (1 - κ_t(x1))`; errors once `κ` reaches 1.
    pub fn rate(&self, t: f64, x1: usize) -> Result<f64> {
        match self {
            Self::Linear => {
                if t >= 1.0 {
                    return Err(Error::SchedulerSingularity { t });
                }
                Ok(1.0 / (1.0 - t))
            }
            Self::Cubic => {
                if t >= 1.0 {
                    return Err(Error::SchedulerSingularity { t });
                }
                Ok(3.0 * t * t / (1.0 - t * t * t))
            }
            Self::KineticOptimal(ko) => ko.rate(t, x1),
            Self::Custom(s) => s.rate(t, x1),
        }
    }

    pub fn is_token_independent(&self) -> bool {
        match self {
            Self::Linear | Self::Cubic => true,
            Self::KineticOptimal(ko) => ko.omega.iter().all(|&o| o == ko.omega[0]),
            Self::Custom(s) => s.is_token_independent(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cubic => "cubic",
            Self::KineticOptimal(_) => "kinetic_optimal",
            Self::Custom(_) => "custom",
        }
    }
}

/// `β_t = c (t / (1 - t))^a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule {
    pub c: f64,
    pub a: f64,
}

impl BetaSchedule {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        if !(c > 0.0 && a > 0.0 && c.is_finite() && a.is_finite()) {
            return Err(Error::Config(format!("beta schedule needs c, a > 0 (c = {c}, a = {a})")));
        }
        Ok(Self { c, a })
    }

    pub fn beta(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.c * (t / (1.0 - t)).powf(self.a)
    }

    /// `β̇_t = c a t^{a-1} / (1-t)^{a+1}`.
    pub fn beta_dot(&self, t: f64) -> f64 {
        self.c * self.a * t.powf(self.a - 1.0) / (1.0 - t).powf(self.a + 1.0)
    }
}

/// Angle between `√p` and `√q` on the unit sphere, computed from the chord
/// length so that identical inputs give exactly zero.
fn sphere_angle(sp: &[f64], sq: &[f64]) -> f64 {
    let chord: f64 = sp.iter().zip(sq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// Great-circle path `p_t = a_t²` between two pmfs.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    sqrt_p: Vec<f64>,
    sqrt_q: Vec<f64>,
    omega: f64,
}

impl GeodesicPath {
    pub fn new(p: &Pmf, q: &Pmf) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::SizeMismatch {
                expected: p.len(),
                found: q.len(),
            });
        }
        let sqrt_p: Vec<f64> = p.as_slice().iter().map(|x| x.sqrt()).collect();
        let sqrt_q: Vec<f64> = q.as_slice().iter().map(|x| x.sqrt()).collect();
        let omega = sphere_angle(&sqrt_p, &sqrt_q);
        if omega < 1e-10 {
            return Err(Error::DegeneratePath);
        }
        Ok(Self {
            sqrt_p,
            sqrt_q,
            omega,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Point `a_t` on the sphere.
    pub fn amplitude(&self, t: f64) -> Vec<f64> {
        let s = self.omega.sin();
        let c0 = ((1.0 - t) * self.omega).sin() / s;
        let c1 = (t * self.omega).sin() / s;
        self.sqrt_p
            .iter()
            .zip(&self.sqrt_q)
            .map(|(a, b)| c0 * a + c1 * b)
            .collect()
    }

    pub fn amplitude_dot(&self, t: f64) -> Vec<f64> {
        let s = self.omega.sin();
        let c0 = -self.omega * ((1.0 - t) * self.omega).cos() / s;
        let c1 = self.omega * (t * self.omega).cos() / s;
        self.sqrt_p
            .iter()
            .zip(&self.sqrt_q)
            .map(|(a, b)| c0 * a + c1 * b)
            .collect()
    }

    pub fn eval(&self, t: f64) -> Result<Pmf> {
        Pmf::new(self.amplitude(t).iter().map(|a| a * a).collect::<Vec<_>>())
    }

    /// `ṗ_t = 2 a_t ȧ_t`.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        self.amplitude(t)
            .iter()
            .zip(self.amplitude_dot(t))
            .map(|(a, ad)| 2.0 * a * ad)
            .collect()
    }
}

/// `softmax(-β0 log p_stats)`: `β0 = 0` is uniform, `β0 = -1` returns the statistics.
pub fn tempered_source(token_stats: &Pmf, beta0: f64) -> Result<Pmf> {
    if let Some(index) = token_stats.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroStatistic { index });
    }
    let logits: Vec<f64> = token_stats
        .as_slice()
        .iter()
        .map(|p| -beta0 * p.ln())
        .collect();
    Pmf::new(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// A conditional probability path `p_t(· | x1)`.
#[derive(Debug, Clone)]
pub enum ConditionalPath {
    Mixture { source: Pmf, scheduler: Scheduler },
    Metric { metric: Metric, beta: BetaSchedule },
    /// Geodesic from `√p` to `δ_{x1}`; a mixture path under [`KoScheduler`].
    KineticOptimal { source: Pmf, scheduler: KoScheduler },
}

impl ConditionalPath {
    pub fn mixture(source: Pmf, scheduler: Scheduler) -> Result<Self> {
        if let Scheduler::KineticOptimal(ko) = &scheduler {
            if ko.omegas().len() != source.len() {
                return Err(Error::SizeMismatch {
                    expected: source.len(),
                    found: ko.omegas().len(),
                });
            }
        }
        Ok(Self::Mixture { source, scheduler })
    }

    pub fn metric(metric: Metric, beta: BetaSchedule) -> Self {
        Self::Metric { metric, beta }
    }

    pub fn kinetic_optimal(source: Pmf) -> Self {
        let scheduler = KoScheduler::new(&source);
        Self::KineticOptimal { source, scheduler }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Mixture { source, .. } | Self::KineticOptimal { source, .. } => source.len(),
            Self::Metric { metric, .. } => metric.k(),
        }
    }

    /// The `t = 0` distribution (shared by every `x1`).
    pub fn source(&self) -> Pmf {
        match self {
            Self::Mixture { source, .. } | Self::KineticOptimal { source, .. } => source.clone(),
            Self::Metric { metric, .. } => Pmf::uniform(metric.k()),
        }
    }

    /// The scheduler when the path is a mixture path.
    pub fn mixture_scheduler(&self) -> Option<Scheduler> {
        match self {
            Self::Mixture { scheduler, .. } => Some(scheduler.clone()),
            Self::KineticOptimal { scheduler, .. } => Some(Scheduler::KineticOptimal(scheduler.clone())),
            Self::Metric { .. } => None,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Mixture { .. } => "mixture",
            Self::Metric { .. } => "metric",
            Self::KineticOptimal { .. } => "ko",
        }
    }

    fn check(&self, t: f64, x1: usize) -> Result<()> {
        let k = self.k();
        if x1 >= k {
            return Err(Error::OutOfAlphabet { token: x1, k });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
        }
        Ok(())
    }

    fn metric_beta(beta: &BetaSchedule, metric: &Metric, t: f64) -> Result<f64> {
        if t > 1.0 - METRIC_T_MARGIN {
            return Err(Error::BetaOverflow { t });
        }
        let b = beta.beta(t);
        if !(b * metric.max_dist()).is_finite() {
            return Err(Error::BetaOverflow { t });
        }
        Ok(b)
    }

    fn ko_coeffs(om: f64, t: f64) -> (f64, f64) {
        let s = om.sin();
        (((1.0 - t) * om).sin() / s, (t * om).sin() / s)
    }

    pub fn eval(&self, t: f64, x1: usize) -> Result<Pmf> {
        self.check(t, x1)?;
        let k = self.k();
        match self {
            Self::Mixture { source, scheduler } => {
                let kappa = scheduler.kappa(t, x1);
                let mut p: Vec<f64> = source.as_slice().iter().map(|s| (1.0 - kappa) * s).collect();
                p[x1] += kappa;
                Pmf::new(p)
            }
            Self::Metric { metric, beta } => {
                if t == 1.0 {
                    return Ok(Pmf::delta(k, x1));
                }
                let b = Self::metric_beta(beta, metric, t)?;
                let logits: Vec<f64> = (0..k).map(|x| -b * metric.dist(x, x1)).collect();
                Pmf::new(softmax(&logits))
            }
            Self::KineticOptimal { source, scheduler } => {
                let om = scheduler.omega(x1);
                if om < 1e-10 {
                    return Ok(Pmf::delta(k, x1));
                }
                let (c0, c1) = Self::ko_coeffs(om, t);
                let p = source
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(x, s)| {
                        let a = c0 * s.sqrt() + if x == x1 { c1 } else { 0.0 };
                        a * a
                    })
                    .collect::<Vec<_>>();
                Pmf::new(p)
            }
        }
    }

    /// Exact `ṗ_t(· | x1)`.
    pub fn derivative(&self, t: f64, x1: usize) -> Result<Vec<f64>> {
        self.eval_with_derivative(t, x1).map(|(_, d)| d)
    }

    pub fn eval_with_derivative(&self, t: f64, x1: usize) -> Result<(Pmf, Vec<f64>)> {
        let p = self.eval(t, x1)?;
        let k = self.k();
        let dp = match self {
            Self::Mixture { source, scheduler } => {
                let kd = scheduler.kappa_dot(t, x1);
                (0..k)
                    .map(|x| kd * (f64::from(u8::from(x == x1)) - source[x]))
                    .collect()
            }
            Self::Metric { metric, beta } => {
                if t == 1.0 {
                    vec![0.0; k]
                } else {
                    let bd = beta.beta_dot(t);
                    let mean: f64 = (0..k).map(|y| p[y] * metric.dist(y, x1)).sum();
                    (0..k)
                        .map(|x| p[x] * bd * (mean - metric.dist(x, x1)))
                        .collect()
                }
            }
            Self::KineticOptimal { source, scheduler } => {
                let om = scheduler.omega(x1);
                if om < 1e-10 {
                    vec![0.0; k]
                } else {
                    let (c0, c1) = Self::ko_coeffs(om, t);
                    let s = om.sin();
                    let d0 = -om * ((1.0 - t) * om).cos() / s;
                    let d1 = om * (t * om).cos() / s;
                    (0..k)
                        .map(|x| {
                            let sp = source[x].sqrt();
                            let on = f64::from(u8::from(x == x1));
                            2.0 * (c0 * sp + c1 * on) * (d0 * sp + d1 * on)
                        })
                        .collect()
                }
            }
        };
        Ok((p, dp))
    }

    /// `log p_t(· | x1)`, accurate for metric paths where the pmf underflows.
    pub fn log_eval(&self, t: f64, x1: usize) -> Result<Vec<f64>> {
        match self {
            Self::Metric { metric, beta } if t < 1.0 => {
                self.check(t, x1)?;
                let b = Self::metric_beta(beta, metric, t)?;
                let k = metric.k();
                let logits: Vec<f64> = (0..k).map(|x| -b * metric.dist(x, x1)).collect();
                let lse = log_sum_exp(&logits);
                Ok(logits.into_iter().map(|l| l - lse).collect())
            }
            _ => Ok(self.eval(t, x1)?.as_slice().iter().map(|p| p.ln()).collect()),
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
