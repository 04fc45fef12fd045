//! Conjugate Gibbs sampler with Bessel latent updates and a Metropolis step for `beta`.

mod beta;
mod chain;

pub use beta::BetaKernel;
pub use chain::{run_chain, run_chains, CellAccumulator, McmcSettings, PosteriorChain};

use crate::dist::special::ln_gamma;
use crate::dist::{bessel_draw, gamma_draw, sample_truncated_gamma, TruncGammaParams};
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::model::{validate_stationarity, ActiveParams, ChainState, CountDataset, ModelSpec};
use crate::rng::RandomStream;

/// Shape and scale of an inverse-gamma law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

/// Shape and rate of a gamma law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// A fitted model: specification, graph and data, plus what the sampler
/// precomputes from them.
pub struct GibbsModel<'a> {
    pub spec: &'a ModelSpec,
    pub graph: &'a NeighborGraph,
    pub data: &'a CountDataset,
    pub active: ActiveParams,
    ln_fact: Vec<f64>,
    beta: Option<BetaKernel>,
}

impl<'a> GibbsModel<'a> {
    pub fn new(spec: &'a ModelSpec, graph: &'a NeighborGraph, data: &'a CountDataset) -> Result<Self> {
        spec.validate()?;
        data.check_compatible(spec, graph)?;
        let active = ActiveParams::new(spec, graph, data.n_times());
        let ln_fact = data.counts().iter().map(|&y| ln_gamma(y as f64 + 1.0)).collect();
        let beta = match &spec.beta_prior {
            Some(b) => Some(BetaKernel::new(b)?),
            None => None,
        };
        Ok(GibbsModel {
            spec,
            graph,
            data,
            active,
            ln_fact,
            beta,
        })
    }

    /// Initial state, checked against the stationarity conditions.
    pub fn initial_state(&self) -> Result<ChainState> {
        let state = ChainState::initial(self.spec, self.graph, self.data)?;
        if self.active.rho || self.active.kappa {
            validate_stationarity(self.graph, state.rho, state.kappa, self.spec.autoreg()).into_result()?;
        }
        Ok(state)
    }

    pub fn n_times(&self) -> usize {
        self.data.n_times()
    }

    pub fn n_locations(&self) -> usize {
        self.data.n_locations()
    }

    /// `ln Pois(y_ti | U_ti * exposure_ti)`.
    #[inline]
    pub fn cell_loglik(&self, state: &ChainState, t: usize, i: usize) -> f64 {
        let k = t * self.n_locations() + i;
        let y = self.data.counts()[k];
        let mu = state.u[k] * state.exposures()[k];
        if y == 0 {
            -mu
        } else {
            y as f64 * mu.ln() - mu - self.ln_fact[k]
        }
    }

    /// `sum_{t < T-1} sum_i U^t_i` and `sum_{t < T-1} sum_i revw(i) U^t_i`.
    fn transition_sums(&self, state: &ChainState) -> (f64, f64) {
        let m = self.n_locations();
        let mut own = 0.0;
        let mut nb = 0.0;
        for t in 0..self.n_times().saturating_sub(1) {
            let row = &state.u[t * m..(t + 1) * m];
            for (i, &u) in row.iter().enumerate() {
                own += u;
                nb += self.graph.reverse_weight(i) * u;
            }
        }
        (own, nb)
    }

    /// Totals of the self-slot and neighbor-slot latent counts.
    fn latent_totals(&self, state: &ChainState) -> (u64, u64) {
        let layout = state.layout();
        let total: u64 = state.z.iter().map(|&z| z as u64).sum();
        if !layout.has_self_slot() {
            return (0, total);
        }
        let mut own = 0u64;
        for t in 0..layout.n_slices() {
            for i in 0..self.n_locations() {
                own += state.z[layout.self_index(t, i).unwrap()] as u64;
            }
        }
        (own, total - own)
    }

    pub fn full_conditional_c(&self, state: &ChainState) -> InvGammaParams {
        let (m, t_len) = (self.n_locations() as f64, self.n_times() as f64);
        let (z_self, z_nb) = self.latent_totals(state);
        let (own, nb) = self.transition_sums(state);
        let all_u: f64 = state.u.iter().sum();
        let rho = if state.layout().has_self_slot() { state.rho } else { 0.0 };
        InvGammaParams {
            shape: self.spec.prior_c.shape + t_len * m * self.spec.alpha + 2.0 * (z_self + z_nb) as f64,
            scale: self.spec.prior_c.scale + all_u + rho * own + state.kappa * nb,
        }
    }

    pub fn full_conditional_u(&self, state: &ChainState, t: usize, i: usize) -> GammaParams {
        let t_len = self.n_times();
        let layout = state.layout();
        let mut shape = self.data.y(t, i) as f64 + self.spec.alpha;
        let mut slope = 1.0;
        if t > 0 {
            shape += state.z_row(t - 1, i).iter().map(|&z| z as f64).sum::<f64>();
        }
        if t + 1 < t_len {
            if let Some(k) = layout.self_index(t, i) {
                shape += state.z[k] as f64;
                slope += state.rho;
            }
            for &(l, k) in self.graph.reverse(i) {
                shape += state.z[layout.neighbor(t, l, k)] as f64;
            }
            slope += state.kappa * self.graph.reverse_weight(i);
        }
        GammaParams {
            shape,
            rate: state.exposure(t, i) + slope / state.c,
        }
    }

    pub fn full_conditional_rho(&self, state: &ChainState) -> Result<TruncGammaParams> {
        let prior = match self.spec.prior_rho {
            Some(p) if self.n_times() > 1 => p,
            _ => return Err(Error::Usage("rho".into())),
        };
        let (z_self, _) = self.latent_totals(state);
        let (own, _) = self.transition_sums(state);
        let hi = if self.active.kappa { 1.0 - state.kappa } else { 1.0 };
        TruncGammaParams::new(prior.shape + z_self as f64, prior.rate + own / state.c, 0.0, hi)
    }

    pub fn full_conditional_kappa(&self, state: &ChainState) -> Result<TruncGammaParams> {
        if !self.active.kappa {
            return Err(Error::Usage("kappa".into()));
        }
        let prior = self.spec.prior_kappa;
        let (_, z_nb) = self.latent_totals(state);
        let (_, nb) = self.transition_sums(state);
        let hi = if self.active.rho { 1.0 - state.rho } else { 1.0 };
        TruncGammaParams::new(prior.shape + z_nb as f64, prior.rate + nb / state.c, 0.0, hi)
    }

    /// Bessel argument for slot `slot` of row `(t, i)`: slot 0 is the self
    /// slot when present, then the neighbors in order.
    pub fn z_bessel_argument(&self, state: &ChainState, t: usize, i: usize, slot: usize) -> f64 {
        let next = state.u_at(t + 1, i);
        let weight_u = if state.layout().has_self_slot() && slot == 0 {
            state.rho * state.u_at(t, i)
        } else {
            let k = slot - state.layout().has_self_slot() as usize;
            state.kappa * self.graph.weights(i)[k] * state.u_at(t, self.graph.neighbors(i)[k])
        };
        2.0 / state.c * (weight_u * next).sqrt()
    }

    /// Redraws `Z^t_{i,.}` one entry at a time from its Bessel conditional.
    pub fn update_z_row(&self, state: &mut ChainState, rng: &mut RandomStream, t: usize, i: usize) {
        let range = state.layout().row(t, i);
        if range.is_empty() {
            return;
        }
        let alpha = self.spec.alpha;
        let inv_c2 = 2.0 / state.c;
        let next = state.u_at(t + 1, i);
        let self_slot = state.layout().has_self_slot();
        let m = self.n_locations();
        let prev = &state.u[t * m..(t + 1) * m];
        let mut args = [0.0f64; 64];
        let width = range.len();
        let mut heap;
        let args: &mut [f64] = if width <= args.len() {
            &mut args[..width]
        } else {
            heap = vec![0.0; width];
            &mut heap
        };
        let offset = self_slot as usize;
        if self_slot {
            args[0] = inv_c2 * (state.rho * prev[i] * next).sqrt();
        }
        for (k, (&j, w)) in self.graph.neighbors(i).iter().zip(self.graph.weights(i)).enumerate() {
            args[offset + k] = inv_c2 * (state.kappa * w * prev[j] * next).sqrt();
        }
        let row = &mut state.z[range];
        let mut sum: u64 = row.iter().map(|&z| z as u64).sum();
        for (z, &a) in row.iter_mut().zip(args.iter()) {
            sum -= *z as u64;
            let nu = alpha + sum as f64 - 1.0;
            debug_assert!(nu > -1.0);
            let draw = if a > 0.0 { bessel_draw(nu, a, rng) } else { 0 };
            *z = draw as u32;
            sum += draw;
        }
    }

    /// Redraws a single latent count from its Bessel conditional.
    pub fn update_z_slot(&self, state: &mut ChainState, rng: &mut RandomStream, t: usize, i: usize, slot: usize) {
        let range = state.layout().row(t, i);
        assert!(slot < range.len(), "slot {slot} out of range");
        let a = self.z_bessel_argument(state, t, i, slot);
        let k = range.start + slot;
        let others: u64 = state.z[range].iter().map(|&z| z as u64).sum::<u64>() - state.z[k] as u64;
        let nu = self.spec.alpha + others as f64 - 1.0;
        state.z[k] = if a > 0.0 { bessel_draw(nu, a, rng) as u32 } else { 0 };
    }

    pub fn update_c(&self, state: &mut ChainState, rng: &mut RandomStream) -> Result<()> {
        let post = self.full_conditional_c(state);
        let c = 1.0 / gamma_draw(post.shape, post.scale, rng);
        if !(c > 0.0 && c.is_finite()) {
            return Err(non_finite(0, "c"));
        }
        state.c = c;
        Ok(())
    }

    pub fn update_u(&self, state: &mut ChainState, rng: &mut RandomStream, t: usize, i: usize) -> Result<()> {
        let g = self.full_conditional_u(state, t, i);
        let u = gamma_draw(g.shape, g.rate, rng);
        if !(u > 0.0 && u.is_finite()) {
            return Err(non_finite(0, &format!("U[t={}, location={}]", t + 1, i + 1)));
        }
        state.u[t * self.n_locations() + i] = u;
        Ok(())
    }

    pub fn update_rho(&self, state: &mut ChainState, rng: &mut RandomStream) -> Result<()> {
        let p = self.full_conditional_rho(state)?;
        state.rho = sample_truncated_gamma(&p, rng)?;
        Ok(())
    }

    pub fn update_kappa(&self, state: &mut ChainState, rng: &mut RandomStream) -> Result<()> {
        let p = self.full_conditional_kappa(state)?;
        state.kappa = sample_truncated_gamma(&p, rng)?;
        Ok(())
    }

    pub fn beta_kernel(&self) -> Option<&BetaKernel> {
        self.beta.as_ref()
    }

    /// One full sweep: `c`, all `U`, `rho`, `kappa`, all `Z` rows, then `beta`.
    /// Returns whether a `beta` proposal was accepted.
    pub fn sweep(&self, state: &mut ChainState, rng: &mut RandomStream, settings: &McmcSettings, iteration: usize) -> Result<bool> {
        let (m, t_len) = (self.n_locations(), self.n_times());

        self.update_c(state, rng).map_err(|_| non_finite(iteration, "c"))?;
        for t in 0..t_len {
            for i in 0..m {
                self.update_u(state, rng, t, i)
                    .map_err(|_| non_finite(iteration, &format!("U[t={}, location={}]", t + 1, i + 1)))?;
            }
        }
        if self.active.rho {
            self.update_rho(state, rng)?;
        }
        if self.active.kappa {
            self.update_kappa(state, rng)?;
        }

        for t in 0..t_len.saturating_sub(1) {
            for i in 0..m {
                self.update_z_row(state, rng, t, i);
            }
        }

        let mut accepted = false;
        if let Some(kernel) = &self.beta {
            accepted = kernel.step(self, state, rng, settings.metropolis_mix_p, settings.wide_scale)?;
            if state.beta.iter().any(|b| !b.is_finite()) {
                return Err(non_finite(iteration, "beta"));
            }
        }
        Ok(accepted)
    }
}

fn non_finite(iteration: usize, variable: &str) -> Error {
    Error::NonFiniteState {
        iteration,
        variable: variable.to_string(),
    }
}
