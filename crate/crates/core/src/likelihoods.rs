//! Factorized observation models driven by two latent functions.
//!
//! Every likelihood is written directly in terms of the latent values
//! `(f, g)`; the [`Transformation`] pair reports how those map onto the
//! family's natural parameters. Variational expectations, predictive
//! densities and predictive moments are provided methods on [`Likelihood`],
//! so a new family only has to supply its log-density and latent
//! derivatives.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::quadrature::Integrator;
use crate::special::{digamma, ln_gamma, logistic, log_sum_exp_weighted, softplus, trigamma, LN_2PI};

/// Beta observations are clamped into [ε, 1 − ε].
pub const BETA_EPS: f64 = 1e-9;

static BETA_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of Beta log-density evaluations whose observation was clamped.
pub fn beta_clamp_count() -> u64 {
    BETA_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    Identity,
    Exp,
}

impl Transformation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transformation::Identity => x,
            Transformation::Exp => x.exp(),
        }
    }

    pub fn d1(self, x: f64) -> f64 {
        match self {
            Transformation::Identity => 1.0,
            Transformation::Exp => x.exp(),
        }
    }

    pub fn d2(self, x: f64) -> f64 {
        match self {
            Transformation::Identity => 0.0,
            Transformation::Exp => x.exp(),
        }
    }
}

/// First and second partial derivatives of log p(y | f, g).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatentGrads {
    pub df: f64,
    pub dg: f64,
    pub d2f: f64,
    pub d2g: f64,
}

/// E_{q(f)q(g)}[log p(y | f, g)] and its partials with respect to the
/// marginal means and variances (and the likelihood's global parameters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarExpectation {
    pub value: f64,
    pub dm_f: f64,
    pub dv_f: f64,
    pub dm_g: f64,
    pub dv_g: f64,
    pub d_globals: Vec<f64>,
}

/// Predictive mean and variance; `None` where the moment does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

/// Support of the observation, used for quantile bracketing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    UnitInterval,
    Positive,
    Counts,
}

pub trait Likelihood {
    fn name(&self) -> &'static str;

    fn support(&self) -> Support;

    fn transforms(&self) -> [Transformation; 2];

    /// Whether observations carry a censoring indicator.
    fn uses_censoring(&self) -> bool {
        false
    }

    /// Checks a single observation against the family's data domain.
    fn check_datum(&self, y: f64, censored: bool) -> std::result::Result<(), String> {
        if !y.is_finite() {
            return Err(format!("observation {y} is not finite"));
        }
        if censored && !self.uses_censoring() {
            return Err(format!("{} does not accept censored observations", self.name()));
        }
        Ok(())
    }

    fn log_density(&self, y: f64, censored: bool, f: f64, g: f64) -> f64;

    fn log_density_grads(&self, y: f64, censored: bool, f: f64, g: f64) -> LatentGrads;

    /// Non-chained parameters, in natural space.
    fn globals(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_globals(&mut self, _values: &[f64]) {}

    fn global_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// ∂ log p / ∂ globals at a point.
    fn log_density_global_grads(&self, _y: f64, _censored: bool, _f: f64, _g: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Closed-form variational expectation, when one exists.
    fn analytic_expectation(
        &self,
        _y: f64,
        _censored: bool,
        _f: (f64, f64),
        _g: (f64, f64),
    ) -> Option<VarExpectation> {
        None
    }

    /// Mean and variance of y given the latents.
    fn conditional_moments(&self, f: f64, g: f64) -> Moments;

    /// P(Y ≤ y | f, g).
    fn conditional_cdf(&self, y: f64, f: f64, g: f64) -> f64;

    /// Validated log-density: domain violations become [`Error::Domain`].
    fn checked_log_density(&self, index: usize, y: f64, censored: bool, f: f64, g: f64) -> Result<f64> {
        self.check_datum(y, censored)
            .map_err(|reason| Error::Domain { index, reason })?;
        Ok(self.log_density(y, censored, f, g))
    }

    /// E_{q(f)q(g)}[log p(y | f, g)] with gradients.
    ///
    /// Mean gradients are E[∂ log p]. Variance gradients are the exact
    /// derivative of the discrete rule, E[∂ log p · ε] / (2√v), which equals
    /// ½ E[∂² log p] for the true integral; at v = 0 the second-derivative
    /// form is used. `stream` selects the Monte Carlo stream and is ignored
    /// by quadrature.
    fn variational_expectation(
        &self,
        y: f64,
        censored: bool,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        integrator: &Integrator,
        stream: u64,
    ) -> Result<VarExpectation> {
        check_marginal(v_f, v_g)?;
        if let Some(ve) = self.analytic_expectation(y, censored, (m_f, v_f), (m_g, v_g)) {
            return Ok(ve);
        }
        let n_globals = self.globals().len();
        if v_f == 0.0 && v_g == 0.0 {
            let d = self.log_density_grads(y, censored, m_f, m_g);
            return Ok(VarExpectation {
                value: self.log_density(y, censored, m_f, m_g),
                dm_f: d.df,
                dv_f: 0.5 * d.d2f,
                dm_g: d.dg,
                dv_g: 0.5 * d.d2g,
                d_globals: self.log_density_global_grads(y, censored, m_f, m_g),
            });
        }
        let (sf, sg) = (v_f.sqrt(), v_g.sqrt());
        let mut out = VarExpectation {
            d_globals: vec![0.0; n_globals],
            ..Default::default()
        };
        for [ef, eg, w] in integrator.points(stream).iter() {
            let (f, g) = (m_f + sf * ef, m_g + sg * eg);
            let d = self.log_density_grads(y, censored, f, g);
            out.value += w * self.log_density(y, censored, f, g);
            out.dm_f += w * d.df;
            out.dv_f += w * if sf > 0.0 { d.df * ef / sf } else { d.d2f };
            out.dm_g += w * d.dg;
            out.dv_g += w * if sg > 0.0 { d.dg * eg / sg } else { d.d2g };
            if n_globals > 0 {
                for (acc, v) in out.d_globals.iter_mut().zip(self.log_density_global_grads(y, censored, f, g)) {
                    *acc += w * v;
                }
            }
        }
        out.dv_f *= 0.5;
        out.dv_g *= 0.5;
        if !out.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "variational expectation of {} at y={y}",
                self.name()
            )));
        }
        Ok(out)
    }

    /// log ∫ p(y | f, g) q(f) q(g) df dg.
    fn predictive_log_density(
        &self,
        y: f64,
        censored: bool,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        integrator: &Integrator,
        stream: u64,
    ) -> Result<f64> {
        check_marginal(v_f, v_g)?;
        if v_f == 0.0 && v_g == 0.0 {
            return Ok(self.log_density(y, censored, m_f, m_g));
        }
        let (sf, sg) = (v_f.sqrt(), v_g.sqrt());
        let value = log_sum_exp_weighted(
            integrator
                .points(stream)
                .iter()
                .map(|[ef, eg, w]| (*w, self.log_density(y, censored, m_f + sf * ef, m_g + sg * eg))),
        );
        if value.is_nan() {
            return Err(Error::NonFinite(format!("predictive density of {} at y={y}", self.name())));
        }
        Ok(value)
    }

    /// Mean and variance of y under the predictive mixture.
    fn predictive_moments(
        &self,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        integrator: &Integrator,
        stream: u64,
    ) -> Result<Moments> {
        check_marginal(v_f, v_g)?;
        let (sf, sg) = (v_f.sqrt(), v_g.sqrt());
        let (mut mean, mut second, mut within) = (Some(0.0), Some(0.0), Some(0.0));
        for [ef, eg, w] in integrator.points(stream).iter() {
            let m = self.conditional_moments(m_f + sf * ef, m_g + sg * eg);
            match m.mean {
                Some(mu) if mu.is_finite() => {
                    mean = mean.map(|a| a + w * mu);
                    second = second.map(|a| a + w * mu * mu);
                }
                _ => {
                    mean = None;
                    second = None;
                }
            }
            within = match (within, m.variance) {
                (Some(a), Some(v)) if v.is_finite() => Some(a + w * v),
                _ => None,
            };
        }
        let variance = match (mean, second, within) {
            (Some(mu), Some(s), Some(wv)) => Some((wv + s - mu * mu).max(0.0)),
            _ => None,
        };
        Ok(Moments { mean, variance })
    }

    /// Predictive CDF P(Y ≤ y) under the quadrature mixture.
    fn predictive_cdf(
        &self,
        y: f64,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        integrator: &Integrator,
        stream: u64,
    ) -> f64 {
        let (sf, sg) = (v_f.max(0.0).sqrt(), v_g.max(0.0).sqrt());
        integrator
            .points(stream)
            .iter()
            .map(|[ef, eg, w]| w * self.conditional_cdf(y, m_f + sf * ef, m_g + sg * eg))
            .sum()
    }

    /// Predictive quantile by bisection on [`predictive_cdf`](Self::predictive_cdf).
    /// For count data this is the smallest integer whose CDF reaches `p`.
    fn predictive_quantile(
        &self,
        p: f64,
        f: (f64, f64),
        g: (f64, f64),
        integrator: &Integrator,
        stream: u64,
    ) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid("probability", p, "must lie in (0, 1)"));
        }
        check_marginal(f.1, g.1)?;
        let cdf = |y: f64| self.predictive_cdf(y, f, g, integrator, stream);
        let q = match self.support() {
            Support::UnitInterval => bisect(&cdf, p, 0.0, 1.0, |a, b| 0.5 * (a + b)),
            Support::Positive => {
                // bisect in log space
                let (mut lo, mut hi): (f64, f64) = (-1.0, 1.0);
                while cdf(lo.exp()) > p && lo > -700.0 {
                    lo *= 2.0;
                }
                while cdf(hi.exp()) < p && hi < 700.0 {
                    hi *= 2.0;
                }
                bisect(&|t: f64| cdf(t.exp()), p, lo, hi, |a, b| 0.5 * (a + b)).exp()
            }
            Support::Real => {
                let (mut lo, mut hi) = (f.0 - 1.0, f.0 + 1.0);
                let mut width = 1.0;
                while cdf(lo) > p && width < 1e300 {
                    width *= 2.0;
                    lo = f.0 - width;
                }
                width = 1.0;
                while cdf(hi) < p && width < 1e300 {
                    width *= 2.0;
                    hi = f.0 + width;
                }
                bisect(&cdf, p, lo, hi, |a, b| 0.5 * (a + b))
            }
            Support::Counts => {
                let mut hi = 1.0;
                while cdf(hi) < p && hi < 1e15 {
                    hi *= 2.0;
                }
                let (mut lo, mut hi) = (-1.0, hi);
                // invariant: cdf(lo) < p ≤ cdf(hi), both integers
                while hi - lo > 1.0 {
                    let mid = ((lo + hi) * 0.5).floor();
                    if cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        };
        Ok(q)
    }
}

fn bisect(cdf: &dyn Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64, mid: impl Fn(f64, f64) -> f64) -> f64 {
    for _ in 0..200 {
        let m = mid(lo, hi);
        if m <= lo || m >= hi {
            break;
        }
        if cdf(m) < p {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

fn check_marginal(v_f: f64, v_g: f64) -> Result<()> {
    for v in [v_f, v_g] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid("marginal variance", v, "must be non-negative and finite"));
        }
    }
    Ok(())
}

/// The shipped likelihood families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LikelihoodFamily {
    /// y ~ N(f, e^g)
    HetGaussian,
    /// y ~ St(μ = f, σ² = e^g, ν)
    HetStudentT {
        #[serde(default = "default_nu")]
        nu: f64,
        #[serde(default = "yes")]
        nu_trainable: bool,
    },
    /// y ~ Beta(α = e^f, β = e^g)
    Beta,
    /// Log-logistic time-to-event with α = e^f (median), β = e^g (shape);
    /// censored observations contribute the survival function.
    LogLogisticSurvival,
    /// y ~ Poisson(e^f + e^g)
    AdditivePoisson,
    /// y ~ Poisson(e^f · e^g)
    MultiplicativePoisson,
}

fn yes() -> bool {
    true
}

fn default_nu() -> f64 {
    DEFAULT_NU
}

pub const DEFAULT_NU: f64 = 4.0;

impl LikelihoodFamily {
    pub fn student_t() -> Self {
        LikelihoodFamily::HetStudentT {
            nu: DEFAULT_NU,
            nu_trainable: true,
        }
    }

    /// Parses the configuration name of a family.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "het_gaussian" => LikelihoodFamily::HetGaussian,
            "het_student_t" => LikelihoodFamily::student_t(),
            "beta" => LikelihoodFamily::Beta,
            "log_logistic_survival" => LikelihoodFamily::LogLogisticSurvival,
            "additive_poisson" => LikelihoodFamily::AdditivePoisson,
            "multiplicative_poisson" => LikelihoodFamily::MultiplicativePoisson,
            other => return Err(Error::Config(format!("unknown likelihood family `{other}`"))),
        })
    }

    pub fn all_names() -> [&'static str; 6] {
        [
            "het_gaussian",
            "het_student_t",
            "beta",
            "log_logistic_survival",
            "additive_poisson",
            "multiplicative_poisson",
        ]
    }

    /// Number of chained latent functions.
    pub fn arity(&self) -> usize {
        2
    }
}

fn student_t_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

fn ln_factorial(y: f64) -> f64 {
    ln_gamma(y + 1.0)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn poisson_cdf(y: f64, lambda: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if lambda <= 0.0 {
        return 1.0;
    }
    gamma_ur(y.floor() + 1.0, lambda)
}

impl Likelihood for LikelihoodFamily {
    fn name(&self) -> &'static str {
        match self {
            LikelihoodFamily::HetGaussian => "het_gaussian",
            LikelihoodFamily::HetStudentT { .. } => "het_student_t",
            LikelihoodFamily::Beta => "beta",
            LikelihoodFamily::LogLogisticSurvival => "log_logistic_survival",
            LikelihoodFamily::AdditivePoisson => "additive_poisson",
            LikelihoodFamily::MultiplicativePoisson => "multiplicative_poisson",
        }
    }

    fn support(&self) -> Support {
        match self {
            LikelihoodFamily::HetGaussian | LikelihoodFamily::HetStudentT { .. } => Support::Real,
            LikelihoodFamily::Beta => Support::UnitInterval,
            LikelihoodFamily::LogLogisticSurvival => Support::Positive,
            LikelihoodFamily::AdditivePoisson | LikelihoodFamily::MultiplicativePoisson => Support::Counts,
        }
    }

    fn transforms(&self) -> [Transformation; 2] {
        match self {
            LikelihoodFamily::HetGaussian | LikelihoodFamily::HetStudentT { .. } => {
                [Transformation::Identity, Transformation::Exp]
            }
            _ => [Transformation::Exp, Transformation::Exp],
        }
    }

    fn uses_censoring(&self) -> bool {
        matches!(self, LikelihoodFamily::LogLogisticSurvival)
    }

    fn check_datum(&self, y: f64, censored: bool) -> std::result::Result<(), String> {
        if !y.is_finite() {
            return Err(format!("observation {y} is not finite"));
        }
        if censored && !self.uses_censoring() {
            return Err(format!("{} does not accept censored observations", self.name()));
        }
        match self {
            LikelihoodFamily::Beta if !(y > 0.0 && y < 1.0) => {
                Err(format!("beta observation {y} outside (0, 1)"))
            }
            LikelihoodFamily::LogLogisticSurvival if y <= 0.0 => {
                Err(format!("survival time {y} must be positive"))
            }
            LikelihoodFamily::AdditivePoisson | LikelihoodFamily::MultiplicativePoisson
                if y < 0.0 || y.fract() != 0.0 =>
            {
                Err(format!("count {y} must be a non-negative integer"))
            }
            _ => Ok(()),
        }
    }

    fn log_density(&self, y: f64, censored: bool, f: f64, g: f64) -> f64 {
        match self {
            LikelihoodFamily::HetGaussian => {
                let r = y - f;
                -0.5 * LN_2PI - 0.5 * g - 0.5 * r * r * (-g).exp()
            }
            LikelihoodFamily::HetStudentT { nu, .. } => {
                let z = (y - f) * (y - f) * (-g).exp() / nu;
                student_t_norm(*nu) - 0.5 * g - 0.5 * (nu + 1.0) * z.ln_1p()
            }
            LikelihoodFamily::Beta => {
                let yc = clamp_unit(y);
                let (a, b) = (f.exp(), g.exp());
                ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * yc.ln() + (b - 1.0) * (-yc).ln_1p()
            }
            LikelihoodFamily::LogLogisticSurvival => {
                let u = g.exp() * (y.ln() - f);
                if censored {
                    -softplus(u)
                } else {
                    g - y.ln() + u - 2.0 * softplus(u)
                }
            }
            LikelihoodFamily::AdditivePoisson => {
                let log_rate = log_add_exp(f, g);
                y * log_rate - log_rate.exp() - ln_factorial(y)
            }
            LikelihoodFamily::MultiplicativePoisson => y * (f + g) - (f + g).exp() - ln_factorial(y),
        }
    }

    fn log_density_grads(&self, y: f64, censored: bool, f: f64, g: f64) -> LatentGrads {
        match self {
            LikelihoodFamily::HetGaussian => {
                let r = y - f;
                let w = (-g).exp();
                LatentGrads {
                    df: r * w,
                    d2f: -w,
                    dg: -0.5 + 0.5 * r * r * w,
                    d2g: -0.5 * r * r * w,
                }
            }
            LikelihoodFamily::HetStudentT { nu, .. } => {
                let r = y - f;
                let w = (-g).exp();
                let z = r * r * w / nu;
                let d = 1.0 + z;
                let c = (nu + 1.0) / nu;
                LatentGrads {
                    df: c * r * w / d,
                    d2f: c * w * (z - 1.0) / (d * d),
                    dg: -0.5 + 0.5 * (nu + 1.0) * z / d,
                    d2g: -0.5 * (nu + 1.0) * z / (d * d),
                }
            }
            LikelihoodFamily::Beta => {
                let yc = clamp_unit_silent(y);
                let (a, b) = (f.exp(), g.exp());
                let psi_ab = digamma(a + b);
                let tri_ab = trigamma(a + b);
                let df = a * (psi_ab - digamma(a) + yc.ln());
                let dg = b * (psi_ab - digamma(b) + (-yc).ln_1p());
                LatentGrads {
                    df,
                    d2f: df + a * a * (tri_ab - trigamma(a)),
                    dg,
                    d2g: dg + b * b * (tri_ab - trigamma(b)),
                }
            }
            LikelihoodFamily::LogLogisticSurvival => {
                let beta = g.exp();
                let u = beta * (y.ln() - f);
                let s = logistic(u);
                let curv = s * (1.0 - s);
                if censored {
                    LatentGrads {
                        df: s * beta,
                        d2f: -curv * beta * beta,
                        dg: -s * u,
                        d2g: -curv * u * u - s * u,
                    }
                } else {
                    let slope = 1.0 - 2.0 * s;
                    LatentGrads {
                        df: -slope * beta,
                        d2f: -2.0 * curv * beta * beta,
                        dg: 1.0 + slope * u,
                        d2g: -2.0 * curv * u * u + slope * u,
                    }
                }
            }
            LikelihoodFamily::AdditivePoisson => {
                // share of the rate carried by each component
                let rf = logistic(f - g);
                let rg = 1.0 - rf;
                let (ef, eg) = (f.exp(), g.exp());
                LatentGrads {
                    df: y * rf - ef,
                    d2f: y * rf * rg - ef,
                    dg: y * rg - eg,
                    d2g: y * rf * rg - eg,
                }
            }
            LikelihoodFamily::MultiplicativePoisson => {
                let rate = (f + g).exp();
                LatentGrads {
                    df: y - rate,
                    d2f: -rate,
                    dg: y - rate,
                    d2g: -rate,
                }
            }
        }
    }

    fn globals(&self) -> Vec<f64> {
        match self {
            LikelihoodFamily::HetStudentT { nu, nu_trainable: true } => vec![*nu],
            _ => Vec::new(),
        }
    }

    fn set_globals(&mut self, values: &[f64]) {
        if let LikelihoodFamily::HetStudentT { nu, nu_trainable: true } = self {
            *nu = values[0];
        }
    }

    fn global_names(&self) -> Vec<String> {
        match self {
            LikelihoodFamily::HetStudentT { nu_trainable: true, .. } => vec!["nu".into()],
            _ => Vec::new(),
        }
    }

    fn log_density_global_grads(&self, y: f64, _censored: bool, f: f64, g: f64) -> Vec<f64> {
        match self {
            LikelihoodFamily::HetStudentT { nu, nu_trainable: true } => {
                let z = (y - f) * (y - f) * (-g).exp() / nu;
                vec![
                    0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu - 0.5 * z.ln_1p()
                        + 0.5 * (nu + 1.0) * z / (nu * (1.0 + z)),
                ]
            }
            _ => Vec::new(),
        }
    }

    fn analytic_expectation(
        &self,
        y: f64,
        _censored: bool,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
    ) -> Option<VarExpectation> {
        match self {
            LikelihoodFamily::HetGaussian => {
                // E[e^{-g}] = e^{-m_g + v_g/2}
                let inv_noise = (-m_g + 0.5 * v_g).exp();
                let r = y - m_f;
                let spread = r * r + v_f;
                Some(VarExpectation {
                    value: -0.5 * LN_2PI - 0.5 * m_g - 0.5 * spread * inv_noise,
                    dm_f: r * inv_noise,
                    dv_f: -0.5 * inv_noise,
                    dm_g: -0.5 + 0.5 * spread * inv_noise,
                    dv_g: -0.25 * spread * inv_noise,
                    d_globals: Vec::new(),
                })
            }
            _ => None,
        }
    }

    fn conditional_moments(&self, f: f64, g: f64) -> Moments {
        match self {
            LikelihoodFamily::HetGaussian => Moments {
                mean: Some(f),
                variance: Some(g.exp()),
            },
            LikelihoodFamily::HetStudentT { nu, .. } => Moments {
                mean: (*nu > 1.0).then_some(f),
                variance: (*nu > 2.0).then(|| g.exp() * nu / (nu - 2.0)),
            },
            LikelihoodFamily::Beta => {
                let (a, b) = (f.exp(), g.exp());
                let s = a + b;
                Moments {
                    mean: Some(a / s),
                    variance: Some(a * b / (s * s * (s + 1.0))),
                }
            }
            LikelihoodFamily::LogLogisticSurvival => {
                let (alpha, beta) = (f.exp(), g.exp());
                let pb = std::f64::consts::PI / beta;
                Moments {
                    mean: (beta > 1.0).then(|| alpha * pb / pb.sin()),
                    variance: (beta > 2.0).then(|| {
                        alpha * alpha * (2.0 * pb / (2.0 * pb).sin() - (pb / pb.sin()).powi(2))
                    }),
                }
            }
            LikelihoodFamily::AdditivePoisson => {
                let rate = f.exp() + g.exp();
                Moments {
                    mean: Some(rate),
                    variance: Some(rate),
                }
            }
            LikelihoodFamily::MultiplicativePoisson => {
                let rate = (f + g).exp();
                Moments {
                    mean: Some(rate),
                    variance: Some(rate),
                }
            }
        }
    }

    fn conditional_cdf(&self, y: f64, f: f64, g: f64) -> f64 {
        match self {
            LikelihoodFamily::HetGaussian => normal_cdf((y - f) * (-0.5 * g).exp()),
            LikelihoodFamily::HetStudentT { nu, .. } => match StudentsT::new(f, (0.5 * g).exp(), *nu) {
                Ok(d) => d.cdf(y),
                Err(_) => f64::NAN,
            },
            LikelihoodFamily::Beta => {
                if y <= 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    beta_reg(f.exp(), g.exp(), y)
                }
            }
            LikelihoodFamily::LogLogisticSurvival => {
                if y <= 0.0 {
                    0.0
                } else {
                    logistic(g.exp() * (y.ln() - f))
                }
            }
            LikelihoodFamily::AdditivePoisson => poisson_cdf(y, f.exp() + g.exp()),
            LikelihoodFamily::MultiplicativePoisson => poisson_cdf(y, (f + g).exp()),
        }
    }
}

fn clamp_unit(y: f64) -> f64 {
    let c = clamp_unit_silent(y);
    if c != y {
        BETA_CLAMPS.fetch_add(1, Ordering::Relaxed);
    }
    c
}

fn clamp_unit_silent(y: f64) -> f64 {
    y.clamp(BETA_EPS, 1.0 - BETA_EPS)
}
