use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GibbsModel;
use crate::error::{Error, Result};
use crate::model::ChainState;
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub n_burn: usize,
    /// Post-burn-in iterations; every `thin`-th one is kept.
    pub n_keep_iterations: usize,
    pub thin: usize,
    pub metropolis_mix_p: f64,
    pub wide_scale: f64,
    pub n_chains: usize,
    pub seed: u64,
    /// Keep the full per-draw log-likelihood matrix, not just its running summaries.
    pub store_loglik: bool,
    /// Keep the per-draw fitted means `U * exposure`.
    pub store_fitted: bool,
    /// Keep every kept draw of the whole frailty field.
    pub store_frailty: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            n_burn: 1000,
            n_keep_iterations: 1000,
            thin: 1,
            metropolis_mix_p: 0.95,
            wide_scale: 100.0,
            n_chains: 1,
            seed: 1,
            store_loglik: true,
            store_fitted: true,
            store_frailty: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_keep_iterations == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Config("n_keep_iterations, thin and n_chains must be positive".into()));
        }
        if self.n_keep_iterations % self.thin != 0 {
            return Err(Error::Config(format!(
                "thin = {} does not divide n_keep_iterations = {}",
                self.thin, self.n_keep_iterations
            )));
        }
        if !(self.metropolis_mix_p > 0.0 && self.metropolis_mix_p < 1.0) {
            return Err(Error::Config("metropolis_mix_p must lie in (0, 1)".into()));
        }
        if !(self.wide_scale > 1.0 && self.wide_scale.is_finite()) {
            return Err(Error::Config("wide_scale must exceed 1".into()));
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.n_keep_iterations / self.thin
    }
}

/// Running per-cell summaries over kept draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAccumulator {
    pub n: usize,
    pub fitted_sum: Vec<f64>,
    pub frailty_sum: Vec<f64>,
    pub loglik_mean: Vec<f64>,
    /// Welford sum of squared deviations of the log-likelihood.
    pub loglik_m2: Vec<f64>,
    /// `ln sum_draws exp(loglik)`, kept as a running maximum plus scaled sum.
    pub loglik_max: Vec<f64>,
    pub loglik_scaled_sum: Vec<f64>,
    /// Sum over draws of the total log-likelihood.
    pub total_loglik_sum: f64,
}

impl CellAccumulator {
    pub fn new(cells: usize) -> Self {
        CellAccumulator {
            n: 0,
            fitted_sum: vec![0.0; cells],
            frailty_sum: vec![0.0; cells],
            loglik_mean: vec![0.0; cells],
            loglik_m2: vec![0.0; cells],
            loglik_max: vec![f64::NEG_INFINITY; cells],
            loglik_scaled_sum: vec![0.0; cells],
            total_loglik_sum: 0.0,
        }
    }

    pub fn push(&mut self, fitted: &[f64], frailty: &[f64], loglik: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let mut total = 0.0;
        for k in 0..loglik.len() {
            self.fitted_sum[k] += fitted[k];
            self.frailty_sum[k] += frailty[k];
            let l = loglik[k];
            total += l;
            let delta = l - self.loglik_mean[k];
            self.loglik_mean[k] += delta / n;
            self.loglik_m2[k] += delta * (l - self.loglik_mean[k]);
            if l > self.loglik_max[k] {
                self.loglik_scaled_sum[k] = self.loglik_scaled_sum[k] * (self.loglik_max[k] - l).exp() + 1.0;
                self.loglik_max[k] = l;
            } else {
                self.loglik_scaled_sum[k] += (l - self.loglik_max[k]).exp();
            }
        }
        self.total_loglik_sum += total;
    }

    /// Pools another accumulator over the same cells into this one.
    pub fn merge(&mut self, other: &CellAccumulator) {
        if other.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for k in 0..self.fitted_sum.len() {
            self.fitted_sum[k] += other.fitted_sum[k];
            self.frailty_sum[k] += other.frailty_sum[k];
            let delta = other.loglik_mean[k] - self.loglik_mean[k];
            self.loglik_m2[k] += other.loglik_m2[k] + delta * delta * na * nb / n;
            self.loglik_mean[k] += delta * nb / n;
            let top = self.loglik_max[k].max(other.loglik_max[k]);
            let scaled = |max: f64, sum: f64| if sum == 0.0 { 0.0 } else { sum * (max - top).exp() };
            self.loglik_scaled_sum[k] = scaled(self.loglik_max[k], self.loglik_scaled_sum[k]) + scaled(other.loglik_max[k], other.loglik_scaled_sum[k]);
            self.loglik_max[k] = top;
        }
        self.total_loglik_sum += other.total_loglik_sum;
        self.n += other.n;
    }

    /// `ln sum_draws exp(loglik_k)`.
    pub fn log_sum_exp(&self, k: usize) -> f64 {
        self.loglik_max[k] + self.loglik_scaled_sum[k].ln()
    }

    pub fn fitted_mean(&self) -> Vec<f64> {
        self.fitted_sum.iter().map(|s| s / self.n as f64).collect()
    }

    pub fn frailty_mean(&self) -> Vec<f64> {
        self.frailty_sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// Sample variance (denominator `n - 1`) of the per-cell log-likelihood.
    pub fn loglik_variance(&self, k: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.loglik_m2[k] / (self.n - 1) as f64
        }
    }
}

/// Kept draws of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorChain {
    pub chain_index: usize,
    pub n_times: usize,
    pub n_locations: usize,
    pub c: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    /// Last-period frailties `U^T` of every kept draw.
    pub u_last: Vec<Vec<f64>>,
    /// Whole frailty fields, when requested.
    pub u_full: Option<Vec<Vec<f64>>>,
    /// Per-draw per-cell log-likelihood, when requested.
    pub loglik: Option<Vec<Vec<f64>>>,
    /// Per-draw per-cell fitted means, when requested.
    pub fitted: Option<Vec<Vec<f64>>>,
    pub cells: CellAccumulator,
    pub beta_accepted: usize,
    pub iterations: usize,
    pub final_state: ChainState,
}

impl PosteriorChain {
    pub fn n_draws(&self) -> usize {
        self.c.len()
    }

    pub fn beta_acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.beta_accepted as f64 / self.iterations as f64
        }
    }
}

/// Runs one chain on `rng` from the model's initial state.
pub fn run_chain(model: &GibbsModel<'_>, settings: &McmcSettings, mut rng: RandomStream, chain_index: usize) -> Result<PosteriorChain> {
    settings.validate()?;
    let mut state = model.initial_state()?;
    let (m, t_len) = (model.n_locations(), model.n_times());
    let cells = m * t_len;
    let n_draws = settings.n_draws();
    let with_beta = model.active.beta;

    let mut out = PosteriorChain {
        chain_index,
        n_times: t_len,
        n_locations: m,
        c: Vec::with_capacity(n_draws),
        kappa: Vec::with_capacity(n_draws),
        rho: Vec::with_capacity(n_draws),
        beta: Vec::with_capacity(if with_beta { n_draws } else { 0 }),
        u_last: Vec::with_capacity(n_draws),
        u_full: settings.store_frailty.then(|| Vec::with_capacity(n_draws)),
        loglik: settings.store_loglik.then(|| Vec::with_capacity(n_draws)),
        fitted: settings.store_fitted.then(|| Vec::with_capacity(n_draws)),
        cells: CellAccumulator::new(cells),
        beta_accepted: 0,
        iterations: 0,
        final_state: state.clone(),
    };

    let mut loglik = vec![0.0; cells];
    let mut fitted = vec![0.0; cells];
    let total = settings.n_burn + settings.n_keep_iterations;
    for it in 0..total {
        if model.sweep(&mut state, &mut rng, settings, it + 1)? {
            out.beta_accepted += 1;
        }
        out.iterations += 1;
        if it < settings.n_burn || (it - settings.n_burn + 1) % settings.thin != 0 {
            continue;
        }
        for t in 0..t_len {
            for i in 0..m {
                let k = t * m + i;
                fitted[k] = state.cell_mean(t, i);
                loglik[k] = model.cell_loglik(&state, t, i);
            }
        }
        out.cells.push(&fitted, &state.u, &loglik);
        out.c.push(state.c);
        out.kappa.push(state.kappa);
        out.rho.push(state.rho);
        if with_beta {
            out.beta.push(state.beta.clone());
        }
        out.u_last.push(state.u[(t_len - 1) * m..].to_vec());
        if let Some(v) = out.u_full.as_mut() {
            v.push(state.u.clone());
        }
        if let Some(v) = out.loglik.as_mut() {
            v.push(loglik.clone());
        }
        if let Some(v) = out.fitted.as_mut() {
            v.push(fitted.clone());
        }
    }
    out.final_state = state;
    Ok(out)
}

/// Runs `settings.n_chains` chains in parallel, chain `k` on stream `fork(k)` of the seed.
pub fn run_chains(model: &GibbsModel<'_>, settings: &McmcSettings) -> Result<Vec<PosteriorChain>> {
    settings.validate()?;
    let root = RandomStream::new(settings.seed);
    (0..settings.n_chains)
        .into_par_iter()
        .map(|k| run_chain(model, settings, root.fork(k as u64), k))
        .collect()
}
