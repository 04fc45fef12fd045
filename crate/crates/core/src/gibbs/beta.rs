use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::GibbsModel;
use crate::error::{Error, Result};
use crate::model::{exposures_for, BetaPrior, ChainState};
use crate::rng::RandomStream;

static FALLBACK_WARNED: AtomicBool = AtomicBool::new(false);

/// Metropolis kernel for the regression coefficients. Proposals are a
/// two-scale Gaussian mixture whose precision is the negative Hessian of the
/// log conditional at the current point.
#[derive(Clone, Debug)]
pub struct BetaKernel {
    mean: DVector<f64>,
    prior_precision: DMatrix<f64>,
    prior_chol: Cholesky<f64, Dyn>,
    fallback_precision: DMatrix<f64>,
}

impl BetaKernel {
    pub fn new(prior: &BetaPrior) -> Result<Self> {
        let cov = prior.cov_matrix();
        let prior_chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("beta prior covariance is not positive definite".into()))?;
        let p = prior.dim();
        Ok(BetaKernel {
            mean: DVector::from_column_slice(&prior.mean),
            prior_precision: prior_chol.inverse(),
            prior_chol,
            fallback_precision: DMatrix::from_fn(p, p, |r, c| if r == c { 1.0 / cov[(r, r)] } else { 0.0 }),
        })
    }

    /// `ln f(beta | U, y)` up to a constant.
    pub fn log_target(&self, model: &GibbsModel<'_>, state: &ChainState, beta: &[f64]) -> f64 {
        let d = DVector::from_column_slice(beta) - &self.mean;
        let prior = -0.5 * d.dot(&self.prior_chol.solve(&d));
        let data = model.data;
        let p = data.n_covariates();
        let x = data.covariates().unwrap_or(&[]);
        let mut lik = 0.0;
        for (k, xi) in x.chunks_exact(p).enumerate() {
            let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            lik += data.counts()[k] as f64 * eta - state.u[k] * data.offsets()[k] * eta.exp();
        }
        prior + lik
    }

    /// Negative Hessian `Sigma0^-1 + sum U offset exp(x'beta) x x'`.
    pub fn precision(&self, model: &GibbsModel<'_>, state: &ChainState, beta: &[f64]) -> DMatrix<f64> {
        let data = model.data;
        let p = data.n_covariates();
        let mut h = self.prior_precision.clone();
        let x = data.covariates().unwrap_or(&[]);
        for (k, xi) in x.chunks_exact(p).enumerate() {
            let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            let w = state.u[k] * data.offsets()[k] * eta.exp();
            for r in 0..p {
                for c in 0..=r {
                    h[(r, c)] += w * xi[r] * xi[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
        h
    }

    fn factor(&self, h: DMatrix<f64>) -> Cholesky<f64, Dyn> {
        match h.cholesky() {
            Some(ch) if ch.l().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) => ch,
            _ => {
                if !FALLBACK_WARNED.swap(true, Ordering::Relaxed) {
                    warn!("beta proposal precision is not positive definite; using the prior variances instead");
                }
                self.fallback_precision.clone().cholesky().expect("diagonal positive matrix")
            }
        }
    }

    /// Log density of the mixture proposal at offset `d` from its center,
    /// with precision factor `chol`.
    fn ln_proposal(chol: &Cholesky<f64, Dyn>, d: &DVector<f64>, mix_p: f64, wide: f64) -> f64 {
        let p = d.len() as f64;
        // d' H d with H = L L'
        let q = (chol.l().transpose() * d).norm_squared();
        let half_log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        let narrow = mix_p.ln() - 0.5 * q;
        let broad = (1.0 - mix_p).ln() - 0.5 * q / wide - 0.5 * p * wide.ln();
        half_log_det + crate::dist::special::log_add_exp(narrow, broad)
    }

    /// One Metropolis-Hastings update of `state.beta`; returns acceptance.
    pub fn step(&self, model: &GibbsModel<'_>, state: &mut ChainState, rng: &mut RandomStream, mix_p: f64, wide: f64) -> Result<bool> {
        let p = state.beta.len();
        let here = state.beta.clone();
        let chol_here = self.factor(self.precision(model, state, &here));
        let scale = if rng.uniform_open() < mix_p { 1.0 } else { wide.sqrt() };
        let z = DVector::from_fn(p, |_, _| standard_normal(rng));
        // solve L' d = z so that d ~ N(0, H^-1)
        let step = chol_here
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric {
                factor: "beta proposal".into(),
                detail: "singular Cholesky factor".into(),
            })?
            * scale;
        let proposal: Vec<f64> = here.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let chol_there = self.factor(self.precision(model, state, &proposal));
        let log_ratio = self.log_target(model, state, &proposal) - self.log_target(model, state, &here)
            + Self::ln_proposal(&chol_there, &(-&step), mix_p, wide)
            - Self::ln_proposal(&chol_here, &step, mix_p, wide);
        if log_ratio.is_nan() {
            return Err(Error::Numeric {
                factor: "beta acceptance ratio".into(),
                detail: "NaN".into(),
            });
        }
        if log_ratio >= 0.0 || rng.uniform_open().ln() < log_ratio {
            let exposure = exposures_for(&proposal, model.data);
            state.set_beta_with_exposure(proposal, exposure);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

fn standard_normal(rng: &mut RandomStream) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}
