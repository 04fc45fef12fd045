//! Posterior predictive draws by composition sampling: future periods at the
//! training locations, and every period at new locations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{gamma_draw, noncentral_gamma_draw, poisson_draw};
use crate::error::{Error, Result};
use crate::gibbs::PosteriorChain;
use crate::graph::{NeighborGraph, WeightScheme};
use crate::model::lambda_from;
use crate::rng::RandomStream;

/// One kept posterior draw, as much of it as prediction needs.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraw {
    pub c: f64,
    pub kappa: f64,
    pub rho: f64,
    pub beta: Option<Vec<f64>>,
    /// `U^T` at the training locations.
    pub u_last: Vec<f64>,
    /// `U^{1:T}`, time-major; needed for new locations.
    pub u_full: Option<Vec<f64>>,
}

impl PosteriorDraw {
    pub fn from_chain(chain: &PosteriorChain, k: usize) -> Self {
        PosteriorDraw {
            c: chain.c[k],
            kappa: chain.kappa[k],
            rho: chain.rho[k],
            beta: chain.beta.get(k).cloned(),
            u_last: chain.u_last[k].clone(),
            u_full: chain.u_full.as_ref().map(|u| u[k].clone()),
        }
    }

    /// All kept draws of a chain.
    pub fn all(chain: &PosteriorChain) -> Vec<Self> {
        (0..chain.n_draws()).map(|k| Self::from_chain(chain, k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRequest {
    /// Future periods after the last training period.
    #[serde(default)]
    pub q: usize,
    #[serde(default)]
    pub new_locations: Vec<Vec<f64>>,
    /// Neighbor count for new locations; the training graph's when absent.
    #[serde(default)]
    pub h_s: Option<usize>,
    #[serde(default)]
    pub inverse_distance: bool,
    /// How many posterior draws to use, spread evenly over the chain; all when absent.
    #[serde(default)]
    pub n_draws: Option<usize>,
    /// Offsets for the `q*m` future training cells, time-major; ones when absent.
    #[serde(default)]
    pub future_offsets: Option<Vec<f64>>,
    /// Covariates for the future training cells, `p` values per cell.
    #[serde(default)]
    pub future_covariates: Option<Vec<f64>>,
    /// Offsets for the `(T+q)*r` new-location cells, time-major; ones when absent.
    #[serde(default)]
    pub new_offsets: Option<Vec<f64>>,
    #[serde(default)]
    pub new_covariates: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl PredictionRequest {
    pub fn future_only(q: usize, seed: u64) -> Self {
        PredictionRequest {
            q,
            new_locations: Vec::new(),
            h_s: None,
            inverse_distance: false,
            n_draws: None,
            future_offsets: None,
            future_covariates: None,
            new_offsets: None,
            new_covariates: None,
            seed,
        }
    }
}

/// Position of one predicted cell; `location` is 1-based and new locations
/// follow the training ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredCell {
    pub t: usize,
    pub location: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredDraw {
    pub draw_id: usize,
    pub u: Vec<f64>,
    pub y: Vec<u64>,
}

/// Predicted frailties and counts per posterior draw. Cells are the future
/// training cells (time-major) followed by the new-location cells (time-major).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDraws {
    pub n_times: usize,
    pub n_locations: usize,
    pub q: usize,
    pub n_new: usize,
    pub cells: Vec<PredCell>,
    pub draws: Vec<PredDraw>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub t: usize,
    pub location: usize,
    pub u_mean: f64,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Quantile by linear interpolation between order statistics (`R` type 7).
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PredictiveDraws {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn summarize(&self) -> Vec<CellSummary> {
        let n = self.draws.len() as f64;
        (0..self.n_cells())
            .map(|k| {
                let mut ys: Vec<f64> = self.draws.iter().map(|d| d.y[k] as f64).collect();
                ys.sort_by(f64::total_cmp);
                CellSummary {
                    t: self.cells[k].t,
                    location: self.cells[k].location,
                    u_mean: self.draws.iter().map(|d| d.u[k]).sum::<f64>() / n,
                    mean: ys.iter().sum::<f64>() / n,
                    median: quantile_sorted(&ys, 0.5),
                    q05: quantile_sorted(&ys, 0.05),
                    q95: quantile_sorted(&ys, 0.95),
                }
            })
            .collect()
    }
}

/// `q` forward steps of the frailty field from `U^T`, time-major.
pub fn forward_frailty_training(draw: &PosteriorDraw, graph: &NeighborGraph, alpha: f64, q: usize, rng: &mut RandomStream) -> Vec<f64> {
    let m = graph.len();
    let mut out = Vec::with_capacity(q * m);
    let mut prev = draw.u_last.clone();
    for _ in 0..q {
        let next: Vec<f64> = (0..m)
            .map(|i| {
                let lambda = lambda_from(&prev, graph, i, draw.rho, draw.kappa, draw.c);
                noncentral_gamma_draw(alpha, draw.c, lambda, rng)
            })
            .collect();
        out.extend_from_slice(&next);
        prev = next;
    }
    out
}

/// Neighbors of one new location among the training locations.
#[derive(Clone, Debug, PartialEq)]
pub struct NewSite {
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// `U^{1:n_periods}(s)` for each new site, time-major over `(t, site)`.
/// `training` holds the training frailties of periods `1..n_periods-1`, time-major.
pub fn frailty_new_locations(
    draw: &PosteriorDraw,
    training: &[f64],
    m: usize,
    sites: &[NewSite],
    alpha: f64,
    n_periods: usize,
    rng: &mut RandomStream,
) -> Vec<f64> {
    let r = sites.len();
    let rate = 1.0 / draw.c;
    let mut out = vec![0.0; n_periods * r];
    for (j, site) in sites.iter().enumerate() {
        if n_periods == 0 {
            break;
        }
        out[j] = gamma_draw(alpha, rate, rng);
        for t in 1..n_periods {
            let prev = &training[(t - 1) * m..t * m];
            let nb: f64 = site.neighbors.iter().zip(&site.weights).map(|(&l, w)| w * prev[l]).sum();
            let lambda = (draw.kappa * nb + draw.rho * out[(t - 1) * r + j]) / draw.c;
            out[t * r + j] = noncentral_gamma_draw(alpha, draw.c, lambda, rng);
        }
    }
    out
}

fn check_len(what: &str, v: &Option<Vec<f64>>, expected: usize) -> Result<()> {
    match v {
        Some(v) if v.len() != expected => Err(Error::Request(format!("{what} holds {} values, expected {expected}", v.len()))),
        _ => Ok(()),
    }
}

/// Scale of cell `k`: `offset * exp(x'beta)`.
fn scale_of(k: usize, offsets: &Option<Vec<f64>>, x: &Option<Vec<f64>>, beta: &Option<Vec<f64>>) -> f64 {
    let o = offsets.as_ref().map_or(1.0, |o| o[k]);
    match (x, beta) {
        (Some(x), Some(b)) => {
            let p = b.len();
            o * x[k * p..(k + 1) * p].iter().zip(b).map(|(a, c)| a * c).sum::<f64>().exp()
        }
        _ => o,
    }
}

/// Composition-sampling posterior predictive. Draw `d` uses stream `fork(d)` of the request seed.
pub fn predict(draws: &[PosteriorDraw], graph: &NeighborGraph, alpha: f64, n_times: usize, request: &PredictionRequest) -> Result<PredictiveDraws> {
    let (m, q, r) = (graph.len(), request.q, request.new_locations.len());
    if q + r == 0 {
        return Err(Error::Request("nothing to predict: q = 0 and no new locations".into()));
    }
    if draws.is_empty() {
        return Err(Error::Request("the chain holds no draws".into()));
    }
    let n_use = request.n_draws.unwrap_or(draws.len());
    if n_use == 0 || n_use > draws.len() {
        return Err(Error::Request(format!("n_draws must lie in 1..={}", draws.len())));
    }
    if draws.iter().any(|d| d.u_last.len() != m) {
        return Err(Error::Request(format!("chain has a different number of locations than the graph ({m})")));
    }
    let n_periods = n_times + q;
    if r > 0 && n_periods > 1 && draws.iter().any(|d| d.u_full.as_ref().is_none_or(|u| u.len() != n_times * m)) {
        return Err(Error::Request("new locations need the full stored frailty field of every draw".into()));
    }
    check_len("future_offsets", &request.future_offsets, q * m)?;
    check_len("new_offsets", &request.new_offsets, n_periods * r)?;
    for o in [&request.future_offsets, &request.new_offsets].into_iter().flatten() {
        if let Some(k) = o.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Request(format!("offset {k} is not a positive finite number")));
        }
    }
    if let Some(p) = draws[0].beta.as_ref().map(Vec::len) {
        for (what, v, n) in [("future", &request.future_covariates, q * m), ("new-location", &request.new_covariates, n_periods * r)] {
            if n == 0 {
                continue;
            }
            match v {
                None => {
                    let cell = if what == "future" { (n_times + 1, 1) } else { (1, m + 1) };
                    return Err(Error::Request(format!(
                        "missing {what} covariates, first needed at t = {}, location {}",
                        cell.0, cell.1
                    )));
                }
                Some(x) if x.len() != n * p => {
                    let have = x.len() / p;
                    let (t, loc) = if what == "future" {
                        (n_times + 1 + have / m, have % m + 1)
                    } else {
                        (1 + have / r, m + 1 + have % r)
                    };
                    return Err(Error::Request(format!(
                        "{what} covariates hold {} values, expected {}; first missing cell is t = {t}, location {loc}",
                        x.len(),
                        n * p
                    )));
                }
                _ => {}
            }
        }
    }

    let h_s = request.h_s.unwrap_or(graph.h_s());
    let scheme = if request.inverse_distance { WeightScheme::InverseDistance } else { WeightScheme::Uniform };
    let sites = request
        .new_locations
        .iter()
        .map(|c| graph.knn_for_new_location(c, h_s, &scheme).map(|(neighbors, weights)| NewSite { neighbors, weights }))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(q * m + n_periods * r);
    for t in 0..q {
        for i in 0..m {
            cells.push(PredCell { t: n_times + t + 1, location: i + 1 });
        }
    }
    for t in 0..n_periods {
        for j in 0..r {
            cells.push(PredCell { t: t + 1, location: m + j + 1 });
        }
    }

    let picks: Vec<usize> = (0..n_use).map(|d| d * draws.len() / n_use).collect();
    let root = RandomStream::new(request.seed);
    let out: Vec<PredDraw> = picks
        .par_iter()
        .enumerate()
        .map(|(d, &k)| {
            let draw = &draws[k];
            let mut rng = root.fork(d as u64);
            let future = forward_frailty_training(draw, graph, alpha, q, &mut rng);
            let mut u = future.clone();
            if r > 0 {
                let mut training = draw.u_full.clone().unwrap_or_else(|| draw.u_last.clone());
                training.truncate(n_times * m);
                training.extend_from_slice(&future);
                u.extend(frailty_new_locations(draw, &training, m, &sites, alpha, n_periods, &mut rng));
            }
            let y = u
                .iter()
                .enumerate()
                .map(|(k, &ui)| {
                    let scale = if k < q * m {
                        scale_of(k, &request.future_offsets, &request.future_covariates, &draw.beta)
                    } else {
                        scale_of(k - q * m, &request.new_offsets, &request.new_covariates, &draw.beta)
                    };
                    poisson_draw(ui * scale, &mut rng)
                })
                .collect();
            PredDraw { draw_id: k, u, y }
        })
        .collect();
    Ok(PredictiveDraws {
        n_times,
        n_locations: m,
        q,
        n_new: r,
        cells,
        draws: out,
    })
}
