//! Model specification, chain state, datasets, and closed-form model quantities.
//!
//! Time and location indices are 0-based. The latent count `Z^t_{ij}` stored
//! in slice `t` links `U^t` to `U^{t+1}`, so there are `T - 1` slices.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::special::{ln_gamma, ln_gamma_pdf, ln_poisson_pmf};
use crate::dist::TruncGammaParams;
use crate::error::{Error, Result};
use crate::graph::{GraphVariant, NeighborGraph};

pub const DEFAULT_ALPHA: f64 = 1.0001;
const ROW_SUM_TOL: f64 = 1e-12;
const TINY_RATE_SUM: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl BetaPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |r, c| self.cov[r][c])
    }
}

/// The four named hyperparameter presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypara {
    Hypara1,
    Hypara2,
    Hypara3,
    Hypara4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub prior_c: InvGammaPrior,
    pub prior_kappa: GammaPrior,
    /// `None` fixes `rho = 0`.
    #[serde(default)]
    pub prior_rho: Option<GammaPrior>,
    /// `None` means no covariates: the exposure is the offset alone.
    #[serde(default)]
    pub beta_prior: Option<BetaPrior>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl ModelSpec {
    pub fn preset(h: Hypara) -> Self {
        let (c, kappa, rho) = match h {
            Hypara::Hypara1 => ((2.0, 10.0), (0.55, 1.0), Some((0.4, 1.0))),
            Hypara::Hypara2 => ((2.0, 50.0), (0.4, 1.0), Some((0.55, 1.0))),
            Hypara::Hypara3 => ((2.0, 10.0), (0.9, 1.0), None),
            Hypara::Hypara4 => ((2.0, 50.0), (0.4, 1.0), None),
        };
        ModelSpec {
            alpha: DEFAULT_ALPHA,
            prior_c: InvGammaPrior { shape: c.0, scale: c.1 },
            prior_kappa: GammaPrior { shape: kappa.0, rate: kappa.1 },
            prior_rho: rho.map(|(shape, rate)| GammaPrior { shape, rate }),
            beta_prior: None,
        }
    }

    pub fn autoreg(&self) -> bool {
        self.prior_rho.is_some()
    }

    pub fn has_covariates(&self) -> bool {
        self.beta_prior.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidModel(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !pos(self.prior_c.shape) || !pos(self.prior_c.scale) {
            return Err(Error::InvalidModel("prior on c needs positive shape and scale".into()));
        }
        if !pos(self.prior_kappa.shape) || !pos(self.prior_kappa.rate) {
            return Err(Error::InvalidModel("prior on kappa needs positive shape and rate".into()));
        }
        if let Some(r) = self.prior_rho {
            if !pos(r.shape) || !pos(r.rate) {
                return Err(Error::InvalidModel("prior on rho needs positive shape and rate".into()));
            }
        }
        if let Some(b) = &self.beta_prior {
            let p = b.dim();
            if p == 0 {
                return Err(Error::InvalidModel("beta prior has dimension 0".into()));
            }
            if b.cov.len() != p || b.cov.iter().any(|r| r.len() != p) {
                return Err(Error::InvalidModel(format!("beta prior covariance must be {p}x{p}")));
            }
            if b.mean.iter().chain(b.cov.iter().flatten()).any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("beta prior has non-finite entries".into()));
            }
            let s = b.cov_matrix();
            if (0..p).any(|r| (0..p).any(|c| (s[(r, c)] - s[(c, r)]).abs() > 1e-12 * (1.0 + s[(r, c)].abs()))) {
                return Err(Error::InvalidModel("beta prior covariance is not symmetric".into()));
            }
            if s.cholesky().is_none() {
                return Err(Error::InvalidModel("beta prior covariance is not positive definite".into()));
            }
        }
        Ok(())
    }
}

/// Which of `rho`, `kappa`, `beta` are sampled for a given model, graph and horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveParams {
    pub rho: bool,
    pub kappa: bool,
    pub beta: bool,
}

impl ActiveParams {
    pub fn new(spec: &ModelSpec, graph: &NeighborGraph, n_times: usize) -> Self {
        ActiveParams {
            rho: spec.autoreg() && n_times > 1,
            kappa: n_times > 1 && graph.edge_count() > 0,
            beta: spec.has_covariates(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountDataset {
    n_times: usize,
    n_locations: usize,
    y: Vec<u64>,
    offset: Vec<f64>,
    n_covariates: usize,
    x: Vec<f64>,
}

impl CountDataset {
    /// `y`, `offset` are time-major (`t * m + i`); `x` is `(t * m + i) * p + k`.
    pub fn new(n_times: usize, n_locations: usize, y: Vec<u64>, offset: Option<Vec<f64>>, x: Option<(usize, Vec<f64>)>) -> Result<Self> {
        let cells = n_times * n_locations;
        if cells == 0 {
            return Err(Error::InvalidData("dataset needs T >= 1 and m >= 1".into()));
        }
        if y.len() != cells {
            return Err(Error::InvalidData(format!("{} counts for T*m = {cells} cells", y.len())));
        }
        let offset = offset.unwrap_or_else(|| vec![1.0; cells]);
        if offset.len() != cells {
            return Err(Error::InvalidData(format!("{} offsets for {cells} cells", offset.len())));
        }
        if offset.iter().any(|o| !(*o > 0.0 && o.is_finite())) {
            return Err(Error::InvalidData("offsets must be positive and finite".into()));
        }
        let (n_covariates, x) = x.unwrap_or((0, Vec::new()));
        if x.len() != cells * n_covariates {
            return Err(Error::InvalidData(format!("{} covariate values for {cells} cells of dimension {n_covariates}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        Ok(CountDataset {
            n_times,
            n_locations,
            y,
            offset,
            n_covariates,
            x,
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_cells(&self) -> usize {
        self.n_times * self.n_locations
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    #[inline]
    pub fn y(&self, t: usize, i: usize) -> u64 {
        self.y[t * self.n_locations + i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.y
    }

    #[inline]
    pub fn offset(&self, t: usize, i: usize) -> f64 {
        self.offset[t * self.n_locations + i]
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offset
    }

    #[inline]
    pub fn x(&self, t: usize, i: usize) -> &[f64] {
        let p = self.n_covariates;
        let at = (t * self.n_locations + i) * p;
        &self.x[at..at + p]
    }

    pub fn covariates(&self) -> Option<&[f64]> {
        (self.n_covariates > 0).then_some(self.x.as_slice())
    }

    /// Checks the dataset against a model and graph.
    pub fn check_compatible(&self, spec: &ModelSpec, graph: &NeighborGraph) -> Result<()> {
        if graph.len() != self.n_locations {
            return Err(Error::InvalidData(format!("graph has {} locations, data has {}", graph.len(), self.n_locations)));
        }
        let p = spec.beta_prior.as_ref().map_or(0, BetaPrior::dim);
        if p != self.n_covariates {
            return Err(Error::InvalidData(format!("model expects {p} covariates, data has {}", self.n_covariates)));
        }
        Ok(())
    }
}

/// Offsets of the latent count rows within one time slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZLayout {
    self_slot: bool,
    row_start: Vec<usize>,
    n_slices: usize,
}

impl ZLayout {
    pub fn new(graph: &NeighborGraph, autoreg: bool, n_times: usize) -> Self {
        let mut row_start = Vec::with_capacity(graph.len() + 1);
        let mut at = 0;
        for i in 0..graph.len() {
            row_start.push(at);
            at += autoreg as usize + graph.neighbors(i).len();
        }
        row_start.push(at);
        ZLayout {
            self_slot: autoreg,
            row_start,
            n_slices: n_times.saturating_sub(1),
        }
    }

    pub fn has_self_slot(&self) -> bool {
        self.self_slot
    }

    pub fn per_slice(&self) -> usize {
        *self.row_start.last().unwrap()
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn len(&self) -> usize {
        self.per_slice() * self.n_slices
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of row `(t, i)`: the self slot first when present, then neighbors.
    #[inline]
    pub fn row(&self, t: usize, i: usize) -> std::ops::Range<usize> {
        let base = t * self.per_slice();
        base + self.row_start[i]..base + self.row_start[i + 1]
    }

    /// Index of `Z^t_{i,k}` for neighbor position `k` (0-based).
    #[inline]
    pub fn neighbor(&self, t: usize, i: usize, k: usize) -> usize {
        t * self.per_slice() + self.row_start[i] + self.self_slot as usize + k
    }

    #[inline]
    pub fn self_index(&self, t: usize, i: usize) -> Option<usize> {
        self.self_slot.then(|| t * self.per_slice() + self.row_start[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub c: f64,
    pub kappa: f64,
    pub rho: f64,
    pub beta: Vec<f64>,
    /// `U^t_i` at `t * m + i`.
    pub u: Vec<f64>,
    pub z: Vec<u32>,
    layout: ZLayout,
    n_times: usize,
    n_locations: usize,
    exposure: Vec<f64>,
}

impl ChainState {
    /// Starting point: `c` at its prior mean (or `theta_c` when that is infinite),
    /// `rho`, `kappa` at their truncated prior means scaled to sum to at most
    /// 0.9, `U = max(y, 0.5) / offset`, `Z = 0`, `beta` at its prior mean.
    pub fn initial(spec: &ModelSpec, graph: &NeighborGraph, data: &CountDataset) -> Result<Self> {
        spec.validate()?;
        data.check_compatible(spec, graph)?;
        let active = ActiveParams::new(spec, graph, data.n_times());
        let c = if spec.prior_c.shape > 1.0 {
            spec.prior_c.scale / (spec.prior_c.shape - 1.0)
        } else {
            spec.prior_c.scale
        };
        let unit_mean = |g: GammaPrior| TruncGammaParams::new(g.shape, g.rate, 0.0, 1.0).map(|p| p.mean());
        let mut rho = match spec.prior_rho {
            Some(g) if active.rho => unit_mean(g)?,
            _ => 0.0,
        };
        let mut kappa = if active.kappa { unit_mean(spec.prior_kappa)? } else { 0.0 };
        let total = rho + kappa;
        if total > 0.9 {
            rho *= 0.9 / total;
            kappa *= 0.9 / total;
        }
        let (m, t_len) = (data.n_locations(), data.n_times());
        let mut u = Vec::with_capacity(m * t_len);
        for t in 0..t_len {
            for i in 0..m {
                u.push((data.y(t, i) as f64).max(0.5) / data.offset(t, i));
            }
        }
        let layout = ZLayout::new(graph, spec.autoreg(), t_len);
        let beta = spec.beta_prior.as_ref().map(|b| b.mean.clone()).unwrap_or_default();
        let mut state = ChainState {
            c,
            kappa,
            rho,
            beta,
            u,
            z: vec![0; layout.len()],
            layout,
            n_times: t_len,
            n_locations: m,
            exposure: Vec::new(),
        };
        state.refresh_exposure(data);
        Ok(state)
    }

    pub fn layout(&self) -> &ZLayout {
        &self.layout
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    #[inline]
    pub fn u_at(&self, t: usize, i: usize) -> f64 {
        self.u[t * self.n_locations + i]
    }

    /// `offset * exp(x' beta)` per cell, cached for the current `beta`.
    #[inline]
    pub fn exposure(&self, t: usize, i: usize) -> f64 {
        self.exposure[t * self.n_locations + i]
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposure
    }

    /// Recomputes the cached exposures; call after changing `beta` directly.
    pub fn refresh_exposure(&mut self, data: &CountDataset) {
        self.exposure = exposures_for(&self.beta, data);
    }

    pub(crate) fn set_beta_with_exposure(&mut self, beta: Vec<f64>, exposure: Vec<f64>) {
        self.beta = beta;
        self.exposure = exposure;
    }

    /// Poisson mean `U * exposure` of cell `(t, i)`.
    #[inline]
    pub fn cell_mean(&self, t: usize, i: usize) -> f64 {
        let k = t * self.n_locations + i;
        self.u[k] * self.exposure[k]
    }

    pub fn z_row(&self, t: usize, i: usize) -> &[u32] {
        &self.z[self.layout.row(t, i)]
    }

    /// Checks the state invariants.
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("invalid chain state: {what}")));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be positive");
        }
        if !(self.rho >= 0.0 && self.kappa >= 0.0) || self.rho + self.kappa > 1.0 + ROW_SUM_TOL {
            return bad("need rho, kappa >= 0 and rho + kappa <= 1");
        }
        if self.u.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
            return bad("frailties must be positive and finite");
        }
        Ok(())
    }
}

pub(crate) fn exposures_for(beta: &[f64], data: &CountDataset) -> Vec<f64> {
    if data.n_covariates() == 0 {
        return data.offsets().to_vec();
    }
    let p = data.n_covariates();
    let x = data.covariates().unwrap();
    data.offsets()
        .iter()
        .zip(x.chunks_exact(p))
        .map(|(o, xi)| o * xi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect()
}

/// `lambda_{i,t} = (kappa/c) sum_j w_ij U^{t-1}_{N(i)[j]} + (rho/c) U^{t-1}_i`, for `t >= 1`.
pub fn rate_lambda(state: &ChainState, graph: &NeighborGraph, i: usize, t: usize) -> f64 {
    assert!(t >= 1 && t < state.n_times, "rate_lambda needs 1 <= t < T");
    let prev = &state.u[(t - 1) * state.n_locations..t * state.n_locations];
    lambda_from(prev, graph, i, state.rho, state.kappa, state.c)
}

#[inline]
pub(crate) fn lambda_from(prev: &[f64], graph: &NeighborGraph, i: usize, rho: f64, kappa: f64, c: f64) -> f64 {
    let nb: f64 = graph.neighbors(i).iter().zip(graph.weights(i)).map(|(&j, w)| w * prev[j]).sum();
    (kappa * nb + rho * prev[i]) / c
}

/// Mean and variance of `U^t` given `U^{t-1}`, for `t >= 1`.
pub fn conditional_moments(state: &ChainState, spec: &ModelSpec, graph: &NeighborGraph, t: usize) -> (Vec<f64>, Vec<f64>) {
    let prev = &state.u[(t - 1) * state.n_locations..t * state.n_locations];
    moments_given_previous(prev, spec.alpha, state.rho, state.kappa, state.c, graph)
}

/// Moments `alpha c + V u` and `alpha c^2 + 2 c V u` of the transition from `prev`.
pub fn moments_given_previous(prev: &[f64], alpha: f64, rho: f64, kappa: f64, c: f64, graph: &NeighborGraph) -> (Vec<f64>, Vec<f64>) {
    (0..graph.len())
        .map(|i| {
            let vu = c * lambda_from(prev, graph, i, rho, kappa, c);
            (alpha * c + vu, alpha * c * c + 2.0 * c * vu)
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stationarity {
    Stationary,
    Violated(String),
}

impl Stationarity {
    pub fn is_stationary(&self) -> bool {
        matches!(self, Stationarity::Stationary)
    }

    pub fn into_result(self) -> Result<()> {
        match self {
            Stationarity::Stationary => Ok(()),
            Stationarity::Violated(why) => Err(Error::NonStationary(why)),
        }
    }
}

/// Row- and column-sum check of the weight matrix implied by `graph`,
/// `rho` (diagonal, when `with_rho`) and `kappa`.
pub fn validate_stationarity(graph: &NeighborGraph, rho: f64, kappa: f64, with_rho: bool) -> Stationarity {
    let rho = if with_rho { rho } else { 0.0 };
    if !(rho >= 0.0 && kappa >= 0.0 && rho.is_finite() && kappa.is_finite()) {
        return Stationarity::Violated(format!("rho = {rho} and kappa = {kappa} must be nonnegative"));
    }
    if !(rho + kappa > 0.0) {
        return Stationarity::Violated("rho + kappa must be positive".into());
    }
    if rho + kappa < TINY_RATE_SUM {
        warn!("rho + kappa = {:e} is nearly zero; the frailties are close to independent", rho + kappa);
    }
    let rows = graph.row_sums(rho, kappa, true);
    let directed = graph.variant() == GraphVariant::DirectedOrdered;
    let cols: Vec<f64> = (0..graph.len()).map(|j| rho + kappa * graph.reverse_weight(j)).collect();
    check_sums(&rows, &cols, directed)
}

fn check_sums(rows: &[f64], cols: &[f64], directed: bool) -> Stationarity {
    for (i, &r) in rows.iter().enumerate() {
        let zero_ok = directed && i == 0;
        if r < 0.0 || (r == 0.0 && !zero_ok) || (zero_ok && r != 0.0) {
            let what = if zero_ok { "must be zero" } else { "must be positive" };
            return Stationarity::Violated(format!("row {} sums to {r}; it {what}", i + 1));
        }
    }
    let worst_row = rows.iter().cloned().fold(0.0, f64::max);
    if worst_row <= 1.0 + ROW_SUM_TOL {
        return Stationarity::Stationary;
    }
    let worst_col = cols.iter().cloned().fold(0.0, f64::max);
    if worst_col <= 1.0 + ROW_SUM_TOL {
        return Stationarity::Stationary;
    }
    Stationarity::Violated(format!(
        "largest row sum {worst_row} and largest column sum {worst_col} both exceed 1"
    ))
}

/// Same check on an explicit nonnegative matrix. With `zero_first_row`, the
/// first row must vanish, as for directed graphs.
pub fn validate_stationarity_dense(v: &DMatrix<f64>, zero_first_row: bool) -> Stationarity {
    if v.nrows() != v.ncols() || v.nrows() == 0 {
        return Stationarity::Violated("weight matrix must be square and nonempty".into());
    }
    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Stationarity::Violated("weight matrix has negative or non-finite entries".into());
    }
    let rows: Vec<f64> = v.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = v.column_iter().map(|c| c.sum()).collect();
    check_sums(&rows, &cols, zero_first_row)
}

/// Dense weight matrix: `rho` on the diagonal plus `kappa w_ij` on the graph edges.
pub fn dense_v(graph: &NeighborGraph, rho: f64, kappa: f64, with_rho: bool) -> DMatrix<f64> {
    let m = graph.len();
    let mut v = DMatrix::zeros(m, m);
    for i in 0..m {
        if with_rho {
            v[(i, i)] += rho;
        }
        for (&j, w) in graph.neighbors(i).iter().zip(graph.weights(i)) {
            v[(i, j)] += kappa * w;
        }
    }
    v
}

/// `h`-fold composition of `a(x) = V' K(x)` with `K_i(x) = x_i / (c x_i + 1)`.
pub fn contraction_iterate(v: &DMatrix<f64>, c: f64, x0: &DVector<f64>, h: usize) -> DVector<f64> {
    let vt = v.transpose();
    let mut x = x0.clone();
    for _ in 0..h {
        let k = x.map(|xi| xi / (c * xi + 1.0));
        x = &vt * k;
    }
    x
}

fn finite(value: f64, factor: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric {
            factor: factor.to_string(),
            detail: format!("log density is {value}"),
        })
    }
}

/// `ln IG(x | shape, scale)`.
pub fn ln_inverse_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// `ln N(x | mean, cov)`.
pub fn ln_mvn_pdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let d = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
    let sol = chol.solve(&d);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (d.dot(&sol) + log_det + x.len() as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Log of the unnormalized joint density of data, latents and parameters.
pub fn log_joint(state: &ChainState, spec: &ModelSpec, graph: &NeighborGraph, data: &CountDataset) -> Result<f64> {
    let (m, t_len) = (data.n_locations(), data.n_times());
    let active = ActiveParams::new(spec, graph, t_len);
    let layout = state.layout();
    let c = state.c;

    let mut lik = 0.0;
    for t in 0..t_len {
        for i in 0..m {
            lik += ln_poisson_pmf(data.y(t, i), state.cell_mean(t, i));
        }
    }
    let mut total = finite(lik, "Poisson likelihood")?;

    let mut frailty = 0.0;
    for t in 0..t_len {
        for i in 0..m {
            let shape_extra: u64 = if t == 0 { 0 } else { state.z_row(t - 1, i).iter().map(|&z| z as u64).sum() };
            frailty += ln_gamma_pdf(state.u_at(t, i), spec.alpha + shape_extra as f64, 1.0 / c);
        }
    }
    total += finite(frailty, "frailty gamma densities")?;

    let mut latent = 0.0;
    for t in 0..layout.n_slices() {
        for i in 0..m {
            if let Some(k) = layout.self_index(t, i) {
                latent += ln_poisson_pmf(state.z[k] as u64, state.rho * state.u_at(t, i) / c);
            }
            for (k, (&j, w)) in graph.neighbors(i).iter().zip(graph.weights(i)).enumerate() {
                let z = state.z[layout.neighbor(t, i, k)];
                latent += ln_poisson_pmf(z as u64, state.kappa * w * state.u_at(t, j) / c);
            }
        }
    }
    total += finite(latent, "latent Poisson counts")?;

    total += finite(ln_inverse_gamma_pdf(c, spec.prior_c.shape, spec.prior_c.scale), "prior on c")?;
    if active.rho || active.kappa {
        if state.rho + state.kappa > 1.0 {
            return Err(Error::Numeric {
                factor: "prior on (rho, kappa)".into(),
                detail: format!("rho + kappa = {} exceeds 1", state.rho + state.kappa),
            });
        }
    }
    if active.rho {
        let g = spec.prior_rho.unwrap();
        total += finite(ln_gamma_pdf(state.rho, g.shape, g.rate), "prior on rho")?;
    }
    if active.kappa {
        let g = spec.prior_kappa;
        total += finite(ln_gamma_pdf(state.kappa, g.shape, g.rate), "prior on kappa")?;
    }
    if let Some(b) = &spec.beta_prior {
        let lp = ln_mvn_pdf(&state.beta, &b.mean, &b.cov_matrix()).unwrap_or(f64::NAN);
        total += finite(lp, "prior on beta")?;
    }
    Ok(total)
}

/// Per-cell Poisson log-likelihood `ln Pois(y | mu)`.
#[inline]
pub fn cell_loglik(y: u64, mu: f64) -> f64 {
    ln_poisson_pmf(y, mu)
}
