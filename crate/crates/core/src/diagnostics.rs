//! Fit and prediction metrics: absolute errors, effective sample size,
//! DIC and WAIC, and posterior summaries.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{CellAccumulator, PosteriorChain};
use crate::model::{cell_loglik, CountDataset};
use crate::predict::quantile_sorted;

fn same_len(y: usize, y_hat: usize) -> Result<()> {
    if y != y_hat {
        return Err(Error::InvalidData(format!("{y} observations but {y_hat} predictions")));
    }
    Ok(())
}

pub fn absolute_errors(y: &[u64], y_hat: &[f64]) -> Result<Vec<f64>> {
    same_len(y.len(), y_hat.len())?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (*a as f64 - b).abs()).collect())
}

/// Mean absolute error.
pub fn mae(y: &[u64], y_hat: &[f64]) -> Result<f64> {
    let e = absolute_errors(y, y_hat)?;
    if e.is_empty() {
        return Err(Error::UndefinedMetric("MAE of an empty cell set".into()));
    }
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Mean absolute percentage error over the cells with a positive count, in percent.
pub fn mape(y: &[u64], y_hat: &[f64]) -> Result<f64> {
    same_len(y.len(), y_hat.len())?;
    let (sum, n) = y
        .iter()
        .zip(y_hat)
        .filter(|(a, _)| **a > 0)
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + (*a as f64 - b).abs() / *a as f64, n + 1));
    if n == 0 {
        return Err(Error::UndefinedMetric("MAPE needs at least one positive count".into()));
    }
    Ok(100.0 * sum / n as f64)
}

/// Median of a sample; even lengths average the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, 0.5))
}

/// Median absolute error.
pub fn medae(y: &[u64], y_hat: &[f64]) -> Result<f64> {
    median(&absolute_errors(y, y_hat)?)
}

/// Effective sample size `n / (1 + 2 sum rho_k)`, truncating the
/// autocorrelation sum at the first non-positive pair sum
/// `rho_{2j} + rho_{2j+1}`. Capped at `n`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InvalidData(format!("ESS needs at least 10 values, got {n}")));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let autocov = |k: usize| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / nf;
    let g0 = autocov(0);
    if !(g0 > 0.0) {
        warn!("constant series; ESS taken as the series length");
        return Ok(nf);
    }
    // tau = -gamma_0 + 2 sum_j Gamma_j, Gamma_j = gamma_{2j} + gamma_{2j+1}
    let mut tau = -g0;
    let mut j = 0;
    while 2 * j + 1 < n {
        let pair = if j == 0 { g0 } else { autocov(2 * j) } + autocov(2 * j + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        j += 1;
    }
    Ok((nf * g0 / tau).min(nf))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoCriteria {
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_w: f64,
}

fn plug_in_loglik(y: &[u64], fitted_mean: &[f64]) -> f64 {
    y.iter().zip(fitted_mean).map(|(a, m)| cell_loglik(*a, *m)).sum()
}

/// DIC and WAIC from a draws-by-cells log-likelihood matrix. The DIC plug-in
/// is the Poisson log-likelihood at the posterior-mean cell rates.
pub fn dic_waic(loglik: &[Vec<f64>], y: &[u64], fitted_mean: &[f64]) -> Result<InfoCriteria> {
    let s = loglik.len();
    if s == 0 {
        return Err(Error::UndefinedMetric("no draws".into()));
    }
    let cells = y.len();
    same_len(cells, fitted_mean.len())?;
    if let Some(bad) = loglik.iter().position(|r| r.len() != cells || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidData(format!("log-likelihood row {bad} is malformed or not finite")));
    }
    let sf = s as f64;
    let mut d_bar = 0.0;
    let (mut lppd, mut p_w) = (0.0, 0.0);
    for k in 0..cells {
        let col = loglik.iter().map(|r| r[k]);
        let mean = col.clone().sum::<f64>() / sf;
        d_bar += -2.0 * mean;
        let mx = col.clone().fold(f64::NEG_INFINITY, f64::max);
        lppd += mx + (col.clone().map(|v| (v - mx).exp()).sum::<f64>() / sf).ln();
        if s > 1 {
            p_w += col.map(|v| (v - mean).powi(2)).sum::<f64>() / (sf - 1.0);
        }
    }
    let d_hat = -2.0 * plug_in_loglik(y, fitted_mean);
    let p_d = d_bar - d_hat;
    Ok(InfoCriteria {
        dic: d_bar + p_d,
        p_d,
        waic: -2.0 * (lppd - p_w),
        p_w,
    })
}

/// The same criteria from running per-cell summaries.
pub fn dic_waic_from_accumulator(acc: &CellAccumulator, y: &[u64]) -> Result<InfoCriteria> {
    if acc.n == 0 {
        return Err(Error::UndefinedMetric("no draws".into()));
    }
    same_len(y.len(), acc.loglik_mean.len())?;
    let n = acc.n as f64;
    let d_bar = -2.0 * acc.loglik_mean.iter().sum::<f64>();
    let lppd: f64 = (0..y.len()).map(|k| acc.log_sum_exp(k) - n.ln()).sum();
    let p_w: f64 = (0..y.len()).map(|k| acc.loglik_variance(k)).sum();
    let d_hat = -2.0 * plug_in_loglik(y, &acc.fitted_mean());
    let p_d = d_bar - d_hat;
    Ok(InfoCriteria {
        dic: d_bar + p_d,
        p_d,
        waic: -2.0 * (lppd - p_w),
        p_w,
    })
}

/// Min, quartiles, mean and max of one scalar parameter's draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl ParamSummary {
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::UndefinedMetric("summary of no draws".into()));
        }
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(ParamSummary {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    /// Time-major, one value per cell.
    pub per_cell: Vec<f64>,
    pub mean: f64,
}

impl EssSummary {
    /// ESS of each column of a draws-by-cells matrix.
    pub fn from_matrix(draws: &[Vec<f64>]) -> Result<Self> {
        let cells = draws.first().map_or(0, Vec::len);
        let per_cell = (0..cells)
            .map(|k| ess(&draws.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let mean = per_cell.iter().sum::<f64>() / cells.max(1) as f64;
        Ok(EssSummary { per_cell, mean })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_draws: usize,
    pub mae: f64,
    /// Absent when every count is zero.
    pub mape: Option<f64>,
    pub medae: f64,
    #[serde(flatten)]
    pub criteria: InfoCriteria,
    /// Only when the per-draw fitted values were kept.
    pub ess: Option<EssSummary>,
    pub parameters: BTreeMap<String, ParamSummary>,
    pub beta_acceptance: Option<f64>,
}

/// Everything the fit summary is computed from, pooled over chains in chain order.
#[derive(Clone, Debug, PartialEq)]
pub struct FitArtifacts {
    pub chain_lengths: Vec<usize>,
    pub c: Vec<f64>,
    pub kappa: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub with_rho: bool,
    pub with_kappa: bool,
    pub cells: CellAccumulator,
    pub loglik: Option<Vec<Vec<f64>>>,
    pub fitted: Option<Vec<Vec<f64>>>,
    pub iterations: usize,
    pub beta_accepted: usize,
}

impl FitArtifacts {
    pub fn from_chains(chains: &[PosteriorChain], with_rho: bool, with_kappa: bool) -> Result<Self> {
        let first = chains.first().ok_or_else(|| Error::UndefinedMetric("no chains".into()))?;
        let mut cells = first.cells.clone();
        for ch in &chains[1..] {
            cells.merge(&ch.cells);
        }
        let stack = |f: fn(&PosteriorChain) -> Option<&Vec<Vec<f64>>>| {
            chains
                .iter()
                .map(f)
                .collect::<Option<Vec<_>>>()
                .map(|m| m.into_iter().flatten().cloned().collect::<Vec<_>>())
        };
        Ok(FitArtifacts {
            chain_lengths: chains.iter().map(PosteriorChain::n_draws).collect(),
            c: chains.iter().flat_map(|c| c.c.iter().copied()).collect(),
            kappa: chains.iter().flat_map(|c| c.kappa.iter().copied()).collect(),
            rho: chains.iter().flat_map(|c| c.rho.iter().copied()).collect(),
            beta: chains.iter().flat_map(|c| c.beta.iter().cloned()).collect(),
            with_rho,
            with_kappa,
            cells,
            loglik: stack(|c| c.loglik.as_ref()),
            fitted: stack(|c| c.fitted.as_ref()),
            iterations: chains.iter().map(|c| c.iterations).sum(),
            beta_accepted: chains.iter().map(|c| c.beta_accepted).sum(),
        })
    }
}

impl FitSummary {
    /// Metrics with fitted values the posterior means of `U * exposure`.
    /// ESS is summed over chains.
    pub fn compute(art: &FitArtifacts, y: &[u64]) -> Result<Self> {
        let fitted = art.cells.fitted_mean();
        let criteria = match &art.loglik {
            Some(ll) => dic_waic(ll, y, &fitted)?,
            None => dic_waic_from_accumulator(&art.cells, y)?,
        };
        let ess = match &art.fitted {
            Some(f) if art.chain_lengths.iter().all(|n| *n >= 10) => {
                let mut start = 0;
                let mut per_cell = vec![0.0; y.len()];
                for n in &art.chain_lengths {
                    let e = EssSummary::from_matrix(&f[start..start + n])?;
                    per_cell.iter_mut().zip(&e.per_cell).for_each(|(a, b)| *a += b);
                    start += n;
                }
                let mean = per_cell.iter().sum::<f64>() / per_cell.len().max(1) as f64;
                Some(EssSummary { per_cell, mean })
            }
            _ => None,
        };
        let mut parameters = BTreeMap::new();
        parameters.insert("c".to_string(), ParamSummary::from_draws(&art.c)?);
        if art.with_kappa {
            parameters.insert("kappa".to_string(), ParamSummary::from_draws(&art.kappa)?);
        }
        if art.with_rho {
            parameters.insert("rho".to_string(), ParamSummary::from_draws(&art.rho)?);
        }
        let p = art.beta.first().map_or(0, Vec::len);
        for j in 0..p {
            let d: Vec<f64> = art.beta.iter().map(|b| b[j]).collect();
            parameters.insert(format!("beta_{}", j + 1), ParamSummary::from_draws(&d)?);
        }
        Ok(FitSummary {
            n_draws: art.cells.n,
            mae: mae(y, &fitted)?,
            mape: match mape(y, &fitted) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            },
            medae: medae(y, &fitted)?,
            criteria,
            ess,
            parameters,
            beta_acceptance: (p > 0 && art.iterations > 0).then(|| art.beta_accepted as f64 / art.iterations as f64),
        })
    }

    pub fn from_chains(chains: &[PosteriorChain], data: &CountDataset, with_rho: bool, with_kappa: bool) -> Result<Self> {
        Self::compute(&FitArtifacts::from_chains(chains, with_rho, with_kappa)?, data.counts())
    }

    /// Plain-text table of the metrics and parameter summaries.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("draws  {}\n", self.n_draws));
        s.push_str(&format!("MAE    {:.6}\n", self.mae));
        match self.mape {
            Some(v) => s.push_str(&format!("MAPE   {v:.4}%\n")),
            None => s.push_str("MAPE   undefined\n"),
        }
        s.push_str(&format!("MedAE  {:.6}\n", self.medae));
        let c = &self.criteria;
        s.push_str(&format!("DIC    {:.3}  (p.d {:.3})\n", c.dic, c.p_d));
        s.push_str(&format!("WAIC   {:.3}  (p.w {:.3})\n", c.waic, c.p_w));
        if let Some(e) = &self.ess {
            s.push_str(&format!("mean ESS of fitted counts  {:.1}\n", e.mean));
        }
        if let Some(a) = self.beta_acceptance {
            s.push_str(&format!("beta acceptance  {a:.3}\n"));
        }
        s.push_str(&format!("\n{:<8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n", "param", "min", "q1", "median", "mean", "q3", "max"));
        for (name, p) in &self.parameters {
            s.push_str(&format!(
                "{:<8} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>12.5}\n",
                name, p.min, p.q1, p.median, p.mean, p.q3, p.max
            ));
        }
        s
    }
}
