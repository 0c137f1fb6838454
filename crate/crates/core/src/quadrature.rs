//! Gaussian expectations by Gauss-Hermite quadrature and Monte Carlo.
//!
//! Rules use the normalized probabilists' convention: nodes are those of the
//! Hermite polynomials He_h and weights sum to one, so
//! `E[φ(x)] ≈ Σ_k w_k φ(m + √v · x_k)` for `x ~ N(m, v)` with no extra
//! constant.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 200;
pub const DEFAULT_ORDER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// Builds the `h`-point rule (1 ≤ h ≤ 200).
    ///
    /// Nodes come from the eigenvalues of the symmetric Jacobi matrix of the
    /// He recurrence, then are polished by Newton steps on the normalized
    /// Hermite recurrence, which also yields the weights.
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 || h > MAX_ORDER {
            return Err(Error::invalid("order", h as f64, "must be in 1..=200"));
        }
        let jacobi = DMatrix::from_fn(h, h, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut weights = Vec::with_capacity(h);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (p, p_prev) = normalized_hermite(h, *x);
                let dp = (h as f64).sqrt() * p_prev;
                if dp != 0.0 {
                    *x -= p / dp;
                }
            }
            let (_, p_prev) = normalized_hermite(h, *x);
            weights.push(1.0 / (h as f64 * p_prev * p_prev));
        }

        // Enforce exact symmetry about zero.
        for k in 0..h / 2 {
            let x = 0.5 * (nodes[h - 1 - k] - nodes[k]);
            let w = 0.5 * (weights[h - 1 - k] + weights[k]);
            nodes[k] = -x;
            nodes[h - 1 - k] = x;
            weights[k] = w;
            weights[h - 1 - k] = w;
        }
        if h % 2 == 1 {
            nodes[h / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[φ(x)] for x ~ N(m, v).
    pub fn expect_1d(&self, m: f64, v: f64, phi: impl Fn(f64) -> f64) -> Result<f64> {
        check_variance(v)?;
        let s = v.sqrt();
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * phi(m + s * x);
        }
        finite(acc, "expect_1d")
    }

    /// E[φ(f, g)] for independent f ~ N(m_f, v_f), g ~ N(m_g, v_g), using
    /// this rule on the f axis and `rule_g` on the g axis.
    pub fn expect_2d(
        &self,
        rule_g: &GaussHermiteRule,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        phi: impl Fn(f64, f64) -> f64,
    ) -> Result<f64> {
        check_variance(v_f)?;
        check_variance(v_g)?;
        let (sf, sg) = (v_f.sqrt(), v_g.sqrt());
        let mut acc = 0.0;
        for (xf, wf) in self.nodes.iter().zip(&self.weights) {
            let f = m_f + sf * xf;
            let mut inner = 0.0;
            for (xg, wg) in rule_g.nodes.iter().zip(&rule_g.weights) {
                inner += wg * phi(f, m_g + sg * xg);
            }
            acc += wf * inner;
        }
        finite(acc, "expect_2d")
    }
}

/// Normalized Hermite values (p_h(x), p_{h-1}(x)) with p_k = He_k / √(k!).
fn normalized_hermite(h: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..h {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Monte Carlo settings: sample count and base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McRule {
    pub samples: usize,
    pub seed: u64,
}

impl McRule {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("samples", 0.0, "must be at least 1"));
        }
        Ok(Self { samples, seed })
    }

    /// Generator for the `stream`-th independent call under this seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Standard-normal pairs (ε_f, ε_g) for the given stream.
    pub fn standard_pairs(&self, stream: u64) -> Vec<(f64, f64)> {
        let mut rng = self.rng(stream);
        (0..self.samples)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (a, b)
            })
            .collect()
    }

    /// Centered-reparameterization estimate of E[φ(f, g)] and its standard error.
    pub fn expect_2d(
        &self,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        phi: impl Fn(f64, f64) -> f64,
    ) -> Result<(f64, f64)> {
        self.expect_2d_stream(0, (m_f, v_f), (m_g, v_g), phi)
    }

    pub fn expect_2d_stream(
        &self,
        stream: u64,
        (m_f, v_f): (f64, f64),
        (m_g, v_g): (f64, f64),
        phi: impl Fn(f64, f64) -> f64,
    ) -> Result<(f64, f64)> {
        check_variance(v_f)?;
        check_variance(v_g)?;
        let (sf, sg) = (v_f.sqrt(), v_g.sqrt());
        let mut rng = self.rng(stream);
        // Welford accumulation.
        let (mut mean, mut m2) = (0.0, 0.0);
        for k in 0..self.samples {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let val = phi(m_f + sf * e1, m_g + sg * e2);
            let delta = val - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (val - mean);
        }
        let s = self.samples as f64;
        let se = if self.samples > 1 {
            (m2 / (s - 1.0) / s).sqrt()
        } else {
            0.0
        };
        Ok((finite(mean, "mc_expect_2d")?, se))
    }
}

/// Integration scheme for the per-datum two-latent expectations.
///
/// Both variants reduce to weighted standard-normal points `(ε_f, ε_g, w)`
/// mapped through f = m_f + √v_f ε_f, g = m_g + √v_g ε_g.
#[derive(Debug, Clone, PartialEq)]
pub enum Integrator {
    GaussHermite {
        rule: GaussHermiteRule,
        grid: Vec<[f64; 3]>,
    },
    MonteCarlo(McRule),
}

impl Integrator {
    /// Tensor-product Gauss-Hermite rule with `h` points per latent.
    pub fn gauss_hermite(h: usize) -> Result<Self> {
        let rule = GaussHermiteRule::new(h)?;
        let mut grid = Vec::with_capacity(h * h);
        for (xf, wf) in rule.nodes().iter().zip(rule.weights()) {
            for (xg, wg) in rule.nodes().iter().zip(rule.weights()) {
                grid.push([*xf, *xg, wf * wg]);
            }
        }
        Ok(Integrator::GaussHermite { rule, grid })
    }

    pub fn monte_carlo(rule: McRule) -> Self {
        Integrator::MonteCarlo(rule)
    }

    /// Weighted points for the `stream`-th call. Quadrature ignores `stream`.
    pub fn points(&self, stream: u64) -> std::borrow::Cow<'_, [[f64; 3]]> {
        match self {
            Integrator::GaussHermite { grid, .. } => std::borrow::Cow::Borrowed(grid),
            Integrator::MonteCarlo(mc) => {
                let w = 1.0 / mc.samples as f64;
                std::borrow::Cow::Owned(
                    mc.standard_pairs(stream).into_iter().map(|(a, b)| [a, b, w]).collect(),
                )
            }
        }
    }
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::gauss_hermite(DEFAULT_ORDER).expect("default order is valid")
    }
}

fn check_variance(v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("variance", v, "must be non-negative and finite"))
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} produced {v}")))
    }
}

/// One evaluation position of the bias study: the observed value and the
/// Gaussian marginals of the two latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPosition {
    pub label: String,
    pub y: f64,
    pub m_f: f64,
    pub v_f: f64,
    pub m_g: f64,
    pub v_g: f64,
}

impl StudyPosition {
    pub fn new(label: &str, y: f64, m_f: f64, v_f: f64, m_g: f64, v_g: f64) -> Self {
        Self {
            label: label.to_string(),
            y,
            m_f,
            v_f,
            m_g,
            v_g,
        }
    }

    /// Mode, shoulder and far tail of a heteroscedastic Student-t with
    /// latents f ~ N(0, 0.5), g ~ N(0, 0.5): the observation sits at the
    /// centre, at 2.5 and at 10 scale units.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("mode", 0.0, 0.0, 0.5, 0.0, 0.5),
            Self::new("shoulder", 2.5, 0.0, 0.5, 0.0, 0.5),
            Self::new("far_tail", 10.0, 0.0, 0.5, 0.0, 0.5),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMethod {
    Quadrature,
    MonteCarlo,
}

impl StudyMethod {
    pub fn label(self) -> &'static str {
        match self {
            StudyMethod::Quadrature => "gauss_hermite",
            StudyMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// One row of the bias study. For quadrature `errors` has one entry; for
/// Monte Carlo it holds the absolute error of every rerun and
/// [`abs_error`](Self::abs_error) reports their median.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub position: String,
    pub method: StudyMethod,
    pub order_or_samples: usize,
    pub errors: Vec<f64>,
}

impl StudyRow {
    pub fn abs_error(&self) -> f64 {
        median(&self.errors)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const REFERENCE_ORDER: usize = 100;

/// Compares nested quadrature of each order in `orders` and Monte Carlo with
/// each sample count in `sample_counts` (over `reruns` seeds) against a
/// 100-point quadrature reference of E[log St(y | f, e^g, ν)].
pub fn bias_study(
    positions: &[StudyPosition],
    orders: &[usize],
    sample_counts: &[usize],
    reruns: usize,
    nu: f64,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    let reference_rule = GaussHermiteRule::new(REFERENCE_ORDER)?;
    let mut rows = Vec::with_capacity(positions.len() * (orders.len() + sample_counts.len()));
    for (p_idx, p) in positions.iter().enumerate() {
        let norm = student_t_norm(nu);
        let integrand = |f: f64, g: f64| student_t_log_density(p.y, f, g, nu, norm);
        let reference =
            reference_rule.expect_2d(&reference_rule, (p.m_f, p.v_f), (p.m_g, p.v_g), integrand)?;
        for &h in orders {
            let rule = GaussHermiteRule::new(h)?;
            let est = rule.expect_2d(&rule, (p.m_f, p.v_f), (p.m_g, p.v_g), integrand)?;
            rows.push(StudyRow {
                position: p.label.clone(),
                method: StudyMethod::Quadrature,
                order_or_samples: h,
                errors: vec![(est - reference).abs()],
            });
        }
        for (s_idx, &s) in sample_counts.iter().enumerate() {
            let mc = McRule::new(s, seed)?;
            let mut errors = Vec::with_capacity(reruns);
            for r in 0..reruns {
                let stream = ((p_idx * sample_counts.len() + s_idx) * reruns + r) as u64;
                let (est, _) =
                    mc.expect_2d_stream(stream, (p.m_f, p.v_f), (p.m_g, p.v_g), integrand)?;
                errors.push((est - reference).abs());
            }
            rows.push(StudyRow {
                position: p.label.clone(),
                method: StudyMethod::MonteCarlo,
                order_or_samples: s,
                errors,
            });
        }
    }
    Ok(rows)
}

// Local copy so the study depends only on the integrand it documents.
fn student_t_norm(nu: f64) -> f64 {
    use crate::special::ln_gamma;
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

fn student_t_log_density(y: f64, f: f64, g: f64, nu: f64, norm: f64) -> f64 {
    let z = (y - f) * (y - f) * (-g).exp() / nu;
    norm - 0.5 * g - 0.5 * (nu + 1.0) * z.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// E[x^d] under N(0,1): (d−1)!! for even d, 0 for odd d.
    fn gaussian_moment(d: u32) -> f64 {
        if d % 2 == 1 {
            return 0.0;
        }
        (1..d).step_by(2).map(|k| k as f64).product()
    }

    /// E[|x|^d] under N(0,1), the scale of the cancellation in odd moments.
    fn abs_moment(d: u32) -> f64 {
        if d % 2 == 0 {
            return gaussian_moment(d);
        }
        // (d−1)!! · √(2/π) for odd d
        (2..d).step_by(2).map(|k| k as f64).product::<f64>() * (2.0 / std::f64::consts::PI).sqrt()
    }

    #[test]
    fn order_one_and_two() {
        let r1 = GaussHermiteRule::new(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        assert_eq!(r1.weights(), &[1.0]);
        let r2 = GaussHermiteRule::new(2).unwrap();
        assert!((r2.nodes()[0] + 1.0).abs() < 1e-15 && (r2.nodes()[1] - 1.0).abs() < 1e-15);
        assert!((r2.weights()[0] - 0.5).abs() < 1e-15);
        let second = r2.expect_1d(0.0, 1.0, |x| x * x).unwrap();
        assert!((second - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sixth_moment_at_order_twenty() {
        let r = GaussHermiteRule::new(20).unwrap();
        assert!((r.expect_1d(0.0, 1.0, |x| x.powi(6)).unwrap() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn rule_invariants_across_orders() {
        for h in [1, 2, 3, 7, 20, 50, 100, 200] {
            let r = GaussHermiteRule::new(h).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "h={h}");
            assert!(r.weights().iter().all(|&w| w > 0.0), "h={h}");
            for k in 0..h {
                assert!((r.nodes()[k] + r.nodes()[h - 1 - k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polynomial_exactness() {
        for h in 1..=30 {
            let r = GaussHermiteRule::new(h).unwrap();
            for d in 0..(2 * h as u32) {
                let est = r.expect_1d(0.0, 1.0, |x| x.powi(d as i32)).unwrap();
                let exact = gaussian_moment(d);
                let scale = abs_moment(d).max(1.0);
                assert!((est - exact).abs() <= 1e-9 * scale, "h={h} d={d}: {est} vs {exact}");
            }
        }
    }

    #[test]
    fn order_out_of_range() {
        assert!(GaussHermiteRule::new(0).is_err());
        assert!(GaussHermiteRule::new(201).is_err());
    }

    #[test]
    fn expect_1d_basic_identities() {
        let r = GaussHermiteRule::new(5).unwrap();
        assert!((r.expect_1d(1.3, 7.0, |_| 4.2).unwrap() - 4.2).abs() < 1e-14);
        assert!((r.expect_1d(3.0, 5.0, |x| x).unwrap() - 3.0).abs() < 1e-13);
        assert!((r.expect_1d(0.0, 2.0, |x| x * x).unwrap() - 2.0).abs() < 1e-13);
        assert!(r.expect_1d(0.0, -1.0, |x| x).is_err());
        assert!(matches!(r.expect_1d(0.0, 1.0, |_| f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn expect_2d_identities_and_swap() {
        let rf = GaussHermiteRule::new(6).unwrap();
        let rg = GaussHermiteRule::new(9).unwrap();
        let sum = rf.expect_2d(&rg, (1.5, 0.3), (-2.0, 1.1), |f, g| f + g).unwrap();
        assert!((sum + 0.5).abs() < 1e-13);
        let prod = rf.expect_2d(&rg, (1.5, 0.3), (-2.0, 1.1), |f, g| f * g).unwrap();
        assert!((prod + 3.0).abs() < 1e-13);
        let phi = |f: f64, g: f64| (f - 0.3 * g).sin() * (0.2 * g).exp();
        let a = rf.expect_2d(&rg, (0.4, 0.7), (1.0, 2.0), phi).unwrap();
        let b = rg.expect_2d(&rf, (1.0, 2.0), (0.4, 0.7), |g, f| phi(f, g)).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn mc_constant_and_determinism() {
        let mc = McRule::new(1000, 42).unwrap();
        let (est, se) = mc.expect_2d((0.0, 1.0), (0.0, 1.0), |_, _| 3.5).unwrap();
        assert_eq!((est, se), (3.5, 0.0));
        let phi = |f: f64, g: f64| f * f + g.exp();
        let a = mc.expect_2d((0.1, 0.5), (0.2, 0.3), phi).unwrap();
        let b = mc.expect_2d((0.1, 0.5), (0.2, 0.3), phi).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert!(McRule::new(0, 1).is_err());
    }

    #[test]
    fn mc_is_unbiased_over_seeds() {
        let phi = |f: f64, g: f64| (0.5 * f).cos() + f * g + 0.1 * g * g;
        let (mf, vf, mg, vg) = (0.3, 0.8, -0.4, 0.5);
        let gh = GaussHermiteRule::new(100).unwrap();
        let reference = gh.expect_2d(&gh, (mf, vf), (mg, vg), phi).unwrap();
        let estimates: Vec<f64> = (0..1000)
            .map(|s| McRule::new(200, s).unwrap().expect_2d((mf, vf), (mg, vg), phi).unwrap().0)
            .collect();
        let mean = estimates.iter().sum::<f64>() / 1000.0;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 999.0;
        let sem = (var / 1000.0).sqrt();
        assert!((mean - reference).abs() < 4.0 * sem, "{mean} vs {reference} (sem {sem})");
    }

    #[test]
    fn mc_consistent_with_quadrature_on_student_t() {
        let (y, mf, vf, mg, vg, nu) = (1.0, 0.2, 0.6, -0.3, 0.4, 4.0);
        let norm = student_t_norm(nu);
        let phi = |f: f64, g: f64| student_t_log_density(y, f, g, nu, norm);
        let gh = GaussHermiteRule::new(50).unwrap();
        let reference = gh.expect_2d(&gh, (mf, vf), (mg, vg), phi).unwrap();
        let reruns = 1000;
        let mc = McRule::new(100_000, 9).unwrap();
        let within = (0..reruns)
            .filter(|&r| {
                let (est, se) = mc.expect_2d_stream(r, (mf, vf), (mg, vg), phi).unwrap();
                (est - reference).abs() < 3.0 * se
            })
            .count();
        assert!(within as f64 >= 0.99 * reruns as f64, "{within}/{reruns}");
    }

    #[test]
    fn bias_study_shape_and_self_reference() {
        let positions = StudyPosition::defaults();
        let rows = bias_study(&positions, &[5, 100], &[10, 100], 20, 4.0, 3).unwrap();
        assert_eq!(rows.len(), positions.len() * 4);
        for r in rows.iter().filter(|r| r.order_or_samples == 100 && r.method == StudyMethod::Quadrature) {
            assert_eq!(r.abs_error(), 0.0);
        }
        assert!(rows
            .iter()
            .filter(|r| r.method == StudyMethod::MonteCarlo)
            .all(|r| r.errors.len() == 20));
    }
}
