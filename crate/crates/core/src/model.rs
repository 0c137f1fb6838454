//! The chained model: two sparse GP latents sharing inducing inputs, pushed
//! jointly into a likelihood.
//!
//! The bound is
//!
//! ```text
//! L = (n / |B|) Σ_{i∈B} E_{q(fᵢ)q(gᵢ)}[log p(yᵢ | fᵢ, gᵢ)] − KL(q(u_f)‖p(u_f)) − KL(q(u_g)‖p(u_g))
//! ```
//!
//! Only the data term is rescaled by the batch fraction.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, LikelihoodFamily, Moments, VarExpectation};
use crate::quadrature::Integrator;
use crate::svgp::{LatentGP, LatentGrad, LatentMarginals};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainedModel<L = LikelihoodFamily> {
    /// One latent per likelihood argument, in (f, g) order.
    pub latents: Vec<LatentGP>,
    /// Inducing inputs shared by every latent (m × q).
    pub z: DMatrix<f64>,
    pub likelihood: L,
    pub integrator: Integrator,
}

/// Gradient of the bound with respect to every model parameter, in natural
/// (constrained) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub latents: Vec<LatentGrad>,
    pub globals: Vec<f64>,
}

impl ModelGrad {
    /// Inducing-input gradient summed over latents.
    pub fn z(&self) -> DMatrix<f64> {
        let mut out = self.latents[0].z.clone();
        for l in &self.latents[1..] {
            out += &l.z;
        }
        out
    }
}

/// Posterior marginals of both latents at one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPrediction {
    pub m_f: f64,
    pub v_f: f64,
    pub m_g: f64,
    pub v_g: f64,
}

impl LatentPrediction {
    pub fn f(&self) -> (f64, f64) {
        (self.m_f, self.v_f)
    }

    pub fn g(&self) -> (f64, f64) {
        (self.m_g, self.v_g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    QMu(usize),
    QChol(usize),
    Kernel(usize),
    PriorMean(usize),
    Inducing,
    Globals,
}

impl Block {
    pub fn label(&self) -> String {
        match self {
            Block::QMu(b) => format!("q_mu[{b}]"),
            Block::QChol(b) => format!("q_chol[{b}]"),
            Block::Kernel(b) => format!("kernel[{b}]"),
            Block::PriorMean(b) => format!("prior_mean[{b}]"),
            Block::Inducing => "z".into(),
            Block::Globals => "globals".into(),
        }
    }
}

/// Positions of each parameter block in the flat unconstrained vector.
///
/// Per latent: μ_u, the lower triangle of L_u by rows (diagonal as log),
/// log kernel hyperparameters, prior mean. Then Z by rows, then log globals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<(Block, Range<usize>)>,
    pub len: usize,
}

impl ParamLayout {
    pub fn range(&self, block: Block) -> Option<Range<usize>> {
        self.blocks.iter().find(|(b, _)| *b == block).map(|(_, r)| r.clone())
    }
}

/// Finite-difference comparison for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: Block,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl BlockCheck {
    /// max |a − n| / max(|a|, |n|, `floor`)
    pub fn max_rel_error(&self, floor: f64) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

fn lower_len(m: usize) -> usize {
    m * (m + 1) / 2
}

impl<L: Likelihood + Sync> ChainedModel<L> {
    pub fn new(latents: Vec<LatentGP>, z: DMatrix<f64>, likelihood: L, integrator: Integrator) -> Result<Self> {
        let model = Self {
            latents,
            z,
            likelihood,
            integrator,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents.len() != 2 {
            return Err(Error::Dimension(format!(
                "{} takes 2 latents, got {}",
                self.likelihood.name(),
                self.latents.len()
            )));
        }
        if self.z.nrows() == 0 {
            return Err(Error::invalid("inducing count", 0.0, "must be at least 1"));
        }
        for l in &self.latents {
            l.validate(&self.z)?;
        }
        Ok(())
    }

    pub fn num_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.z.ncols()
    }

    fn check_batch(&self, data: &Dataset, batch: &[usize]) -> Result<()> {
        if data.input_dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "data has {} input columns, model expects {}",
                data.input_dim(),
                self.input_dim()
            )));
        }
        if batch.is_empty() {
            return Err(Error::invalid("batch size", 0.0, "must be at least 1"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Dimension(format!("batch index {i} out of range for {} rows", data.len())));
        }
        Ok(())
    }

    fn latent_marginals(&self, x: &DMatrix<f64>) -> Result<(LatentMarginals, LatentMarginals)> {
        Ok((
            self.latents[0].marginals(&self.z, x)?,
            self.latents[1].marginals(&self.z, x)?,
        ))
    }

    /// Per-datum variational expectations over `batch`, in batch order.
    /// The Monte Carlo stream of datum i is `stream_offset + i`.
    fn expectations(
        &self,
        data: &Dataset,
        batch: &[usize],
        stream_offset: u64,
    ) -> Result<(DMatrix<f64>, Vec<VarExpectation>)> {
        self.check_batch(data, batch)?;
        let x = data.x.select_rows(batch);
        let (mf, mg) = self.latent_marginals(&x)?;
        let terms: Vec<Result<VarExpectation>> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let (y, c) = (data.y[i], data.is_censored(i));
                self.likelihood
                    .check_datum(y, c)
                    .map_err(|reason| Error::Domain { index: i, reason })?;
                self.likelihood
                    .variational_expectation(
                        y,
                        c,
                        (mf.mean[k], mf.var[k]),
                        (mg.mean[k], mg.var[k]),
                        &self.integrator,
                        stream_offset.wrapping_add(i as u64),
                    )
                    .map_err(|e| match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!("datum {i}: {msg}")),
                        other => other,
                    })
            })
            .collect();
        Ok((x, terms.into_iter().collect::<Result<_>>()?))
    }

    pub fn kl(&self) -> Result<f64> {
        self.latents.iter().map(|l| l.kl_to_prior(&self.z)).sum()
    }

    /// Minibatch estimate of the bound.
    pub fn elbo(&self, data: &Dataset, batch: &[usize]) -> Result<f64> {
        self.elbo_with_stream(data, batch, 0)
    }

    pub fn elbo_with_stream(&self, data: &Dataset, batch: &[usize], stream_offset: u64) -> Result<f64> {
        let (_, terms) = self.expectations(data, batch, stream_offset)?;
        let scale = data.len() as f64 / batch.len() as f64;
        let value = scale * terms.iter().map(|t| t.value).sum::<f64>() - self.kl()?;
        Ok(value)
    }

    /// Bound over every row.
    pub fn full_elbo(&self, data: &Dataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.elbo(data, &all)
    }

    pub fn elbo_grads(&self, data: &Dataset, batch: &[usize]) -> Result<(f64, ModelGrad)> {
        self.elbo_grads_with_stream(data, batch, 0)
    }

    pub fn elbo_grads_with_stream(
        &self,
        data: &Dataset,
        batch: &[usize],
        stream_offset: u64,
    ) -> Result<(f64, ModelGrad)> {
        let (x, terms) = self.expectations(data, batch, stream_offset)?;
        let scale = data.len() as f64 / batch.len() as f64;
        let nb = batch.len();
        let a_mf = nalgebra::DVector::from_fn(nb, |k, _| scale * terms[k].dm_f);
        let a_vf = nalgebra::DVector::from_fn(nb, |k, _| scale * terms[k].dv_f);
        let a_mg = nalgebra::DVector::from_fn(nb, |k, _| scale * terms[k].dm_g);
        let a_vg = nalgebra::DVector::from_fn(nb, |k, _| scale * terms[k].dv_g);

        let mut latents = Vec::with_capacity(2);
        let mut kl = 0.0;
        for (l, (a_m, a_v)) in self.latents.iter().zip([(&a_mf, &a_vf), (&a_mg, &a_vg)]) {
            let mut g = l.marginal_grads(&self.z, &x, a_m, a_v)?;
            g.axpy(-1.0, &l.kl_grads(&self.z)?);
            kl += l.kl_to_prior(&self.z)?;
            latents.push(g);
        }
        let mut globals = vec![0.0; self.likelihood.globals().len()];
        for t in &terms {
            for (acc, d) in globals.iter_mut().zip(&t.d_globals) {
                *acc += scale * d;
            }
        }
        let value = scale * terms.iter().map(|t| t.value).sum::<f64>() - kl;
        Ok((value, ModelGrad { latents, globals }))
    }

    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<Vec<LatentPrediction>> {
        if x_star.ncols() != self.input_dim() && x_star.nrows() > 0 {
            return Err(Error::Dimension(format!(
                "prediction inputs have {} columns, model expects {}",
                x_star.ncols(),
                self.input_dim()
            )));
        }
        let (f, g) = self.latent_marginals(x_star)?;
        Ok((0..x_star.nrows())
            .map(|i| LatentPrediction {
                m_f: f.mean[i],
                v_f: f.var[i],
                m_g: g.mean[i],
                v_g: g.var[i],
            })
            .collect())
    }

    /// log p(y*ᵢ | data) for every row of `test`.
    pub fn log_predictive(&self, test: &Dataset) -> Result<Vec<f64>> {
        test.validate_for(&self.likelihood)?;
        let pred = self.predict(&test.x)?;
        pred.par_iter()
            .enumerate()
            .map(|(i, p)| {
                self.likelihood.predictive_log_density(
                    test.y[i],
                    test.is_censored(i),
                    p.f(),
                    p.g(),
                    &self.integrator,
                    i as u64,
                )
            })
            .collect()
    }

    pub fn predictive_moments(&self, x_star: &DMatrix<f64>) -> Result<Vec<Moments>> {
        let pred = self.predict(x_star)?;
        pred.par_iter()
            .enumerate()
            .map(|(i, p)| self.likelihood.predictive_moments(p.f(), p.g(), &self.integrator, i as u64))
            .collect()
    }

    /// Predictive quantiles at each input, one row per input, one column per probability.
    pub fn predictive_quantiles(&self, x_star: &DMatrix<f64>, probs: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pred = self.predict(x_star)?;
        pred.par_iter()
            .enumerate()
            .map(|(i, p)| {
                probs
                    .iter()
                    .map(|&pr| {
                        self.likelihood
                            .predictive_quantile(pr, p.f(), p.g(), &self.integrator, i as u64)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn layout(&self) -> ParamLayout {
        let (m, q) = (self.z.nrows(), self.z.ncols());
        let mut blocks = Vec::new();
        let mut at = 0;
        let mut push = |b: Block, len: usize, blocks: &mut Vec<(Block, Range<usize>)>| {
            blocks.push((b, at..at + len));
            at += len;
        };
        for (b, l) in self.latents.iter().enumerate() {
            push(Block::QMu(b), m, &mut blocks);
            push(Block::QChol(b), lower_len(m), &mut blocks);
            push(Block::Kernel(b), l.kernel.n_params(), &mut blocks);
            push(Block::PriorMean(b), 1, &mut blocks);
        }
        push(Block::Inducing, m * q, &mut blocks);
        push(Block::Globals, self.likelihood.globals().len(), &mut blocks);
        ParamLayout { blocks, len: at }
    }

    /// Flat unconstrained parameter vector (positive quantities as logs).
    pub fn pack(&self) -> Vec<f64> {
        let (m, q) = (self.z.nrows(), self.z.ncols());
        let mut out = Vec::with_capacity(self.layout().len);
        for l in &self.latents {
            out.extend(l.q_mu.iter());
            for i in 0..m {
                for j in 0..=i {
                    let v = l.q_chol[(i, j)];
                    out.push(if i == j { v.ln() } else { v });
                }
            }
            out.extend(l.kernel.params().iter().map(|p| p.ln()));
            out.push(l.prior_mean);
        }
        for i in 0..m {
            for d in 0..q {
                out.push(self.z[(i, d)]);
            }
        }
        out.extend(self.likelihood.globals().iter().map(|g| g.ln()));
        out
    }

    pub fn unpack(&mut self, theta: &[f64]) -> Result<()> {
        let layout = self.layout();
        if theta.len() != layout.len {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} for a model with {}",
                theta.len(),
                layout.len
            )));
        }
        let (m, q) = (self.z.nrows(), self.z.ncols());
        let mut it = theta.iter().copied();
        let mut next = || it.next().expect("length checked");
        for l in self.latents.iter_mut() {
            for i in 0..m {
                l.q_mu[i] = next();
            }
            for i in 0..m {
                for j in 0..=i {
                    let v = next();
                    l.q_chol[(i, j)] = if i == j { v.exp() } else { v };
                }
            }
            let hyper: Vec<f64> = (0..l.kernel.n_params()).map(|_| next().exp()).collect();
            l.kernel.set_params(&hyper)?;
            l.prior_mean = next();
        }
        for i in 0..m {
            for d in 0..q {
                self.z[(i, d)] = next();
            }
        }
        let globals: Vec<f64> = (0..self.likelihood.globals().len()).map(|_| next().exp()).collect();
        if !globals.is_empty() {
            self.likelihood.set_globals(&globals);
        }
        Ok(())
    }

    /// Chain rule from natural-space gradients onto the [`pack`](Self::pack) coordinates.
    pub fn pack_grad(&self, grad: &ModelGrad) -> Vec<f64> {
        let (m, q) = (self.z.nrows(), self.z.ncols());
        let mut out = Vec::with_capacity(self.layout().len);
        for (l, g) in self.latents.iter().zip(&grad.latents) {
            out.extend(g.q_mu.iter());
            for i in 0..m {
                for j in 0..=i {
                    let d = g.q_chol[(i, j)];
                    out.push(if i == j { d * l.q_chol[(i, i)] } else { d });
                }
            }
            out.extend(l.kernel.params().iter().zip(&g.kernel).map(|(p, d)| p * d));
            out.push(g.prior_mean);
        }
        let gz = grad.z();
        for i in 0..m {
            for d in 0..q {
                out.push(gz[(i, d)]);
            }
        }
        out.extend(self.likelihood.globals().iter().zip(&grad.globals).map(|(p, d)| p * d));
        out
    }

    /// Central finite differences of the bound over the packed coordinates,
    /// grouped by block, against the analytic gradient.
    pub fn gradcheck(&self, data: &Dataset, batch: &[usize], step: f64) -> Result<Vec<BlockCheck>>
    where
        L: Clone,
    {
        let (_, grad) = self.elbo_grads(data, batch)?;
        let analytic = self.pack_grad(&grad);
        let theta = self.pack();
        let numeric: Vec<f64> = (0..theta.len())
            .into_par_iter()
            .map(|k| {
                let eval = |delta: f64| -> Result<f64> {
                    let mut probe = self.clone();
                    let mut t = theta.clone();
                    t[k] += delta;
                    probe.unpack(&t)?;
                    probe.elbo(data, batch)
                };
                Ok((eval(step)? - eval(-step)?) / (2.0 * step))
            })
            .collect::<Result<_>>()?;
        Ok(self
            .layout()
            .blocks
            .into_iter()
            .filter(|(_, r)| !r.is_empty())
            .map(|(block, r)| BlockCheck {
                block,
                analytic: analytic[r.clone()].to_vec(),
                numeric: numeric[r].to_vec(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::likelihoods::{LatentGrads, Support, Transformation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(rng: &mut ChaCha8Rng, n: usize, m: usize, q: usize, family: LikelihoodFamily) -> (ChainedModel, Dataset) {
        let x = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
        let z = DMatrix::from_fn(m, q, |_, _| rng.random_range(-1.0..1.0));
        let mut latents = Vec::new();
        for b in 0..2 {
            let ls: Vec<f64> = (0..q).map(|_| rng.random_range(0.6..1.5)).collect();
            let k = KernelSpec::sum(vec![
                (KernelSpec::ard_rbf(rng.random_range(0.5..1.5), ls), (0..q).collect()),
                (KernelSpec::bias(0.3), (0..q).collect()),
            ]);
            let mut l = LatentGP::with_identity_covariance(k, m, 0.3, 0.1 * b as f64);
            for i in 0..m {
                l.q_mu[i] = rng.random_range(-0.5..0.5);
                for j in 0..i {
                    l.q_chol[(i, j)] = rng.random_range(-0.1..0.1);
                }
            }
            latents.push(l);
        }
        let y: Vec<f64> = (0..n)
            .map(|_| match family {
                LikelihoodFamily::Beta => rng.random_range(0.05..0.95),
                LikelihoodFamily::LogLogisticSurvival => rng.random_range(0.2..3.0),
                LikelihoodFamily::AdditivePoisson | LikelihoodFamily::MultiplicativePoisson => {
                    rng.random_range(0..5) as f64
                }
                _ => rng.random_range(-2.0..2.0),
            })
            .collect();
        let censored =
            (family == LikelihoodFamily::LogLogisticSurvival).then(|| (0..n).map(|i| i % 3 == 0).collect());
        let data = Dataset::new(x, y, censored).unwrap();
        let model = ChainedModel::new(latents, z, family, Integrator::gauss_hermite(20).unwrap()).unwrap();
        (model, data)
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut model, data) = toy(&mut rng, 8, 4, 1, LikelihoodFamily::HetGaussian);
        for l in model.latents.iter_mut() {
            *l = LatentGP::at_prior(l.kernel.clone(), &model.z, l.prior_mean).unwrap();
        }
        assert!(model.kl().unwrap().abs() < 1e-10);
        let (x, terms) = model.expectations(&data, &(0..8).collect::<Vec<_>>(), 0).unwrap();
        assert_eq!(x.nrows(), 8);
        let sum: f64 = terms.iter().map(|t| t.value).sum();
        assert!((model.full_elbo(&data).unwrap() - sum).abs() < 1e-9);
    }

    #[test]
    fn disjoint_batches_average_to_full_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (model, data) = toy(&mut rng, 20, 5, 2, LikelihoodFamily::student_t());
        let full = model.full_elbo(&data).unwrap();
        let mean: f64 = (0..4)
            .map(|b| model.elbo(&data, &(5 * b..5 * b + 5).collect::<Vec<_>>()).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((mean - full).abs() < 1e-8);
    }

    #[test]
    fn batch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (model, mut data) = toy(&mut rng, 5, 3, 1, LikelihoodFamily::Beta);
        assert!(model.elbo(&data, &[]).is_err());
        assert!(model.elbo(&data, &[5]).is_err());
        data.y[3] = 1.0;
        match model.elbo(&data, &[0, 3]) {
            Err(Error::Domain { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let families = [
            LikelihoodFamily::HetGaussian,
            LikelihoodFamily::student_t(),
            LikelihoodFamily::Beta,
            LikelihoodFamily::LogLogisticSurvival,
            LikelihoodFamily::AdditivePoisson,
            LikelihoodFamily::MultiplicativePoisson,
        ];
        for (s, fam) in families.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + s as u64);
            let (model, data) = toy(&mut rng, 10, 3, 2, fam.clone());
            let batch: Vec<usize> = (0..10).collect();
            for check in model.gradcheck(&data, &batch, 1e-5).unwrap() {
                let err = check.max_rel_error(1e-3);
                assert!(err < 1e-4, "{} {}: {err}", fam.name(), check.block.label());
            }
        }
    }

    #[test]
    fn minibatch_gradient_scales_data_term_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (model, data) = toy(&mut rng, 12, 3, 1, LikelihoodFamily::HetGaussian);
        let mean_grad: Vec<f64> = {
            let mut acc = vec![0.0; model.layout().len];
            for b in 0..3 {
                let batch: Vec<usize> = (4 * b..4 * b + 4).collect();
                let (_, g) = model.elbo_grads(&data, &batch).unwrap();
                for (a, v) in acc.iter_mut().zip(model.pack_grad(&g)) {
                    *a += v / 3.0;
                }
            }
            acc
        };
        let (_, full) = model.elbo_grads(&data, &(0..12).collect::<Vec<_>>()).unwrap();
        for (a, b) in mean_grad.iter().zip(model.pack_grad(&full)) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }

    /// log p(y | f, g) = const, so every adjoint vanishes.
    #[derive(Clone)]
    struct Flat;

    impl Likelihood for Flat {
        fn name(&self) -> &'static str {
            "flat"
        }
        fn support(&self) -> Support {
            Support::Real
        }
        fn transforms(&self) -> [Transformation; 2] {
            [Transformation::Identity; 2]
        }
        fn log_density(&self, _: f64, _: bool, _: f64, _: f64) -> f64 {
            -1.5
        }
        fn log_density_grads(&self, _: f64, _: bool, _: f64, _: f64) -> LatentGrads {
            LatentGrads::default()
        }
        fn conditional_moments(&self, _: f64, _: f64) -> Moments {
            Moments {
                mean: None,
                variance: None,
            }
        }
        fn conditional_cdf(&self, _: f64, _: f64, _: f64) -> f64 {
            0.5
        }
    }

    #[test]
    fn flat_likelihood_at_prior_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (base, data) = toy(&mut rng, 6, 3, 2, LikelihoodFamily::HetGaussian);
        let latents = base
            .latents
            .iter()
            .map(|l| LatentGP::at_prior(l.kernel.clone(), &base.z, 0.0).unwrap())
            .collect();
        let model = ChainedModel::new(latents, base.z.clone(), Flat, Integrator::gauss_hermite(5).unwrap()).unwrap();
        let (value, g) = model.elbo_grads(&data, &(0..6).collect::<Vec<_>>()).unwrap();
        assert!((value + 1.5 * 6.0).abs() < 1e-9);
        let flat = model.pack_grad(&g);
        let worst = flat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn pack_roundtrip_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (model, _) = toy(&mut rng, 4, 5, 2, LikelihoodFamily::student_t());
        let theta = model.pack();
        let layout = model.layout();
        let hypers: usize = model.latents.iter().map(|l| l.kernel.n_params() + 1).sum::<usize>() + 1;
        assert_eq!(theta.len(), 2 * (5 * 6 / 2 + 5) + 5 * 2 + hypers);
        assert_eq!(layout.len, theta.len());
        let mut other = model.clone();
        other.unpack(&theta).unwrap();
        for (a, b) in other.pack().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(other.unpack(&theta[1..]).is_err());
    }

    #[test]
    fn prediction_shapes_and_jensen() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (model, data) = toy(&mut rng, 6, 3, 1, LikelihoodFamily::HetGaussian);
        assert!(model.predict(&DMatrix::zeros(0, 1)).unwrap().is_empty());
        let lp = model.log_predictive(&data).unwrap();
        let (_, terms) = model.expectations(&data, &(0..6).collect::<Vec<_>>(), 0).unwrap();
        for (p, t) in lp.iter().zip(&terms) {
            assert!(*p >= t.value - 1e-12);
        }
        let q = model.predictive_quantiles(&data.x, &[0.05, 0.5, 0.95]).unwrap();
        for row in q {
            assert!(row[0] <= row[1] && row[1] <= row[2]);
        }
    }
}
