//! The four file-to-file stages behind the command line.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{FitConfig, RunConfig};
use crate::diagnostics::{absolute_errors, mae, mape, medae, FitArtifacts, FitSummary};
use crate::error::{Error, Result};
use crate::gibbs::{run_chains, CellAccumulator, GibbsModel, McmcSettings};
use crate::graph::{GraphVariant, Location, NeighborGraph, WeightScheme};
use crate::io;
use crate::model::{ActiveParams, CountDataset, ModelSpec};
use crate::predict::{predict, PosteriorDraw, PredictionRequest, PredictiveDraws};
use crate::rng::RandomStream;
use crate::simulate::{holdout_test_coordinates, simulate_dataset, SimTruth};

pub const DATA_CSV: &str = "data.csv";
pub const LOCATIONS_CSV: &str = "locations.csv";
pub const TRUTH_JSON: &str = "truth.json";
pub const TRUE_FRAILTY_CSV: &str = "true_frailty.csv";
pub const TEST_LOCATIONS_CSV: &str = "test_locations.csv";
pub const HOLDOUT_CSV: &str = "holdout.csv";
pub const MODEL_JSON: &str = "model.json";
pub const GRAPH_JSON: &str = "graph.json";
pub const CHAIN_CSV: &str = "chain.csv";
pub const FRAILTY_CSV: &str = "frailty.csv";
pub const U_LAST_BIN: &str = "u_last.bin";
pub const U_FULL_BIN: &str = "u_full.bin";
pub const LOGLIK_BIN: &str = "loglik.bin";
pub const FITTED_BIN: &str = "fitted.bin";
pub const ACCUMULATOR_JSON: &str = "accumulator.json";
pub const FIT_SUMMARY_JSON: &str = "fit_summary.json";
pub const FIT_SUMMARY_TXT: &str = "fit_summary.txt";
pub const PRED_DRAWS_CSV: &str = "pred_draws.csv";
pub const PRED_SUMMARY_CSV: &str = "pred_summary.csv";
pub const REQUEST_JSON: &str = "request.json";
pub const ABS_ERRORS_CSV: &str = "abs_errors.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const HOLDOUT_METRICS_JSON: &str = "holdout_metrics.json";

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::Config(format!("the configuration has no {name:?} section")))
}

/// Truth sidecar of a simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub truth: SimTruth,
    #[serde(default)]
    pub holdout: Option<HoldoutInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutInfo {
    pub n_train_times: usize,
    pub n_train_locations: usize,
    pub n_test_locations: usize,
    /// Original ids of the training locations, in training order.
    pub train_ids: Vec<usize>,
    /// Original ids of the test locations, in prediction order.
    pub test_ids: Vec<usize>,
}

/// Simulates per the `simulate` section into `<out>/simulate`.
pub fn cli_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    let s = section(&cfg.simulate, "simulate")?;
    let dir = cfg.stage_dir("simulate");
    make_dir(&dir)?;
    let seed = cfg.seed.or(s.seed).unwrap_or(1);
    let mut rng = RandomStream::new(seed);
    let sim = simulate_dataset(&s.design, &mut rng).map_err(|e| match e {
        Error::NonStationary(_) | Error::Config(_) => Error::Config(e.to_string()),
        other => other,
    })?;
    let m = sim.graph.len();
    let t_all = s.design.n_times;

    let mut true_rows = Vec::with_capacity(m * t_all);
    for t in 0..t_all {
        for i in 0..m {
            true_rows.push((t + 1, i + 1, sim.u[t * m + i]));
        }
    }
    io::write_with(&dir.join(TRUE_FRAILTY_CSV), |w, o| write_true_frailty(w, o, &true_rows))?;

    let with_offset = s.design.offset.is_some();
    let holdout = match &s.holdout {
        None => {
            io::write_dataset_file(&dir.join(DATA_CSV), &sim.data, with_offset)?;
            io::write_locations_file(&dir.join(LOCATIONS_CSV), &sim.locations)?;
            None
        }
        Some(h) => {
            let coords: Vec<Vec<f64>> = h
                .test_coordinates
                .clone()
                .unwrap_or_else(|| holdout_test_coordinates().into_iter().map(|(a, b)| vec![a as f64, b as f64]).collect());
            let test: Vec<usize> = coords
                .iter()
                .map(|c| {
                    sim.locations
                        .iter()
                        .position(|l| &l.coords == c)
                        .ok_or_else(|| Error::Config(format!("test coordinate {c:?} is not a simulated location")))
                })
                .collect::<Result<_>>()?;
            let train: Vec<usize> = (0..m).filter(|i| !test.contains(i)).collect();
            let t_train = t_all - h.future_periods;
            let train_cells: Vec<usize> = (0..t_train).flat_map(|t| train.iter().map(move |&i| t * m + i)).collect();
            let y: Vec<u64> = train_cells.iter().map(|&k| sim.data.counts()[k]).collect();
            let offset = with_offset.then(|| train_cells.iter().map(|&k| sim.data.offsets()[k]).collect());
            let data = CountDataset::new(t_train, train.len(), y, offset, None)?;
            io::write_dataset_file(&dir.join(DATA_CSV), &data, with_offset)?;
            let relabel = |rows: &[usize]| -> Vec<Location> {
                rows.iter()
                    .enumerate()
                    .map(|(k, &i)| Location { id: k + 1, coords: sim.locations[i].coords.clone() })
                    .collect()
            };
            io::write_locations_file(&dir.join(LOCATIONS_CSV), &relabel(&train))?;
            io::write_locations_file(&dir.join(TEST_LOCATIONS_CSV), &relabel(&test))?;
            let mut rows = Vec::new();
            for t in t_train..t_all {
                for (j, &i) in train.iter().enumerate() {
                    rows.push((t + 1, j + 1, sim.data.counts()[t * m + i]));
                }
            }
            for t in 0..t_all {
                for (r, &i) in test.iter().enumerate() {
                    rows.push((t + 1, train.len() + r + 1, sim.data.counts()[t * m + i]));
                }
            }
            io::write_with(&dir.join(HOLDOUT_CSV), |w, o| io::write_holdout(w, o, &rows))?;
            Some(HoldoutInfo {
                n_train_times: t_train,
                n_train_locations: train.len(),
                n_test_locations: test.len(),
                train_ids: train.iter().map(|i| i + 1).collect(),
                test_ids: test.iter().map(|i| i + 1).collect(),
            })
        }
    };
    let mut truth = sim.truth.clone();
    truth.seed = seed;
    io::write_json_file(&dir.join(TRUTH_JSON), &TruthFile { truth, holdout })?;
    info!("simulated {} x {} cells into {}", t_all, m, dir.display());
    Ok(dir)
}

fn write_true_frailty<W: std::io::Write>(w: W, origin: &str, rows: &[(usize, usize, f64)]) -> Result<()> {
    let mut text = String::from("t,location_id,U\n");
    for (t, i, u) in rows {
        text.push_str(&format!("{t},{i},{}\n", io::fmt_real(*u)));
    }
    let mut w = w;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(origin, e))?;
    w.flush().map_err(|e| Error::io(origin, e))
}

/// What a fit directory records about the model it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMeta {
    pub spec: ModelSpec,
    pub settings: McmcSettings,
    pub data_path: PathBuf,
    pub n_times: usize,
    pub n_locations: usize,
    pub n_covariates: usize,
    pub with_rho: bool,
    pub with_kappa: bool,
    pub chain_lengths: Vec<usize>,
    pub iterations: usize,
    pub beta_accepted: usize,
}

fn load_graph(f: &FitConfig, default_locations: PathBuf) -> Result<NeighborGraph> {
    if let Some(g) = &f.graph {
        let text = std::fs::read_to_string(g).map_err(|e| Error::io(g, e))?;
        return io::graph_from_json_str(&text, &g.display().to_string());
    }
    let path = f.locations.clone().unwrap_or(default_locations);
    let locs = io::read_locations_file(&path)?;
    let scheme = if f.inverse_distance { WeightScheme::InverseDistance } else { WeightScheme::Uniform };
    NeighborGraph::build_knn(&locs, f.h_s, &scheme, f.variant)
}

/// Fits per the `fit` section into `<out>/fit`.
pub fn cli_fit(cfg: &RunConfig) -> Result<FitSummary> {
    let f = section(&cfg.fit, "fit")?;
    let sim_dir = cfg.stage_dir("simulate");
    let data_path = f.data.clone().unwrap_or_else(|| sim_dir.join(DATA_CSV));
    let data = io::read_dataset_file(&data_path)?;
    let graph = load_graph(f, sim_dir.join(LOCATIONS_CSV))?;
    let spec = f.model_spec();
    if graph.len() != data.n_locations() {
        return Err(Error::Config(format!(
            "the graph has {} locations but the data has {}",
            graph.len(),
            data.n_locations()
        )));
    }
    if spec.autoreg() && graph.variant() == GraphVariant::UndirectedInSet {
        log::warn!("an autoregressive term on a graph that already contains each location");
    }
    let mut settings = f.mcmc.clone();
    if let Some(seed) = cfg.seed {
        settings.seed = seed;
    }
    let model = GibbsModel::new(&spec, &graph, &data).map_err(|e| match e {
        Error::InvalidModel(_) | Error::InvalidData(_) | Error::InvalidGraph(_) => Error::Config(e.to_string()),
        other => other,
    })?;
    // stationarity of the starting point is checked before any sampling
    model.initial_state().map_err(|e| match e {
        Error::NonStationary(_) => Error::Config(e.to_string()),
        other => other,
    })?;
    let chains = run_chains(&model, &settings)?;
    let active = ActiveParams::new(&spec, &graph, data.n_times());
    let art = FitArtifacts::from_chains(&chains, active.rho, active.kappa)?;
    let summary = FitSummary::compute(&art, data.counts())?;

    let dir = cfg.stage_dir("fit");
    make_dir(&dir)?;
    let (m, t_len) = (data.n_locations(), data.n_times());
    let meta = FitMeta {
        spec,
        settings: settings.clone(),
        data_path,
        n_times: t_len,
        n_locations: m,
        n_covariates: data.n_covariates(),
        with_rho: active.rho,
        with_kappa: active.kappa,
        chain_lengths: art.chain_lengths.clone(),
        iterations: art.iterations,
        beta_accepted: art.beta_accepted,
    };
    io::write_json_file(&dir.join(MODEL_JSON), &meta)?;
    io::write_json_file(&dir.join(GRAPH_JSON), &graph.to_json())?;
    let table = io::ChainTable {
        chain: chains.iter().flat_map(|c| std::iter::repeat_n(c.chain_index, c.n_draws())).collect(),
        c: art.c.clone(),
        kappa: art.kappa.clone(),
        rho: art.rho.clone(),
        beta: art.beta.clone(),
    };
    io::write_with(&dir.join(CHAIN_CSV), |w, o| io::write_chain(w, o, &table))?;
    let u_last: Vec<Vec<f64>> = chains.iter().flat_map(|c| c.u_last.iter().cloned()).collect();
    io::write_cell_matrix_file(&dir.join(U_LAST_BIN), &u_last, m)?;
    if settings.store_frailty {
        let full: Vec<Vec<f64>> = chains.iter().flat_map(|c| c.u_full.iter().flatten().cloned()).collect();
        io::write_cell_matrix_file(&dir.join(U_FULL_BIN), &full, m * t_len)?;
    }
    if let Some(ll) = &art.loglik {
        io::write_cell_matrix_file(&dir.join(LOGLIK_BIN), ll, m * t_len)?;
    }
    if let Some(fd) = &art.fitted {
        io::write_cell_matrix_file(&dir.join(FITTED_BIN), fd, m * t_len)?;
    }
    io::write_json_file(&dir.join(ACCUMULATOR_JSON), &art.cells)?;
    let frailty = io::FrailtyTable {
        n_times: t_len,
        n_locations: m,
        frailty_mean: art.cells.frailty_mean(),
        fitted_mean: art.cells.fitted_mean(),
    };
    io::write_with(&dir.join(FRAILTY_CSV), |w, o| io::write_frailty(w, o, &frailty))?;
    io::write_json_file(&dir.join(FIT_SUMMARY_JSON), &summary)?;
    std::fs::write(dir.join(FIT_SUMMARY_TXT), summary.table()).map_err(|e| Error::io(dir.join(FIT_SUMMARY_TXT), e))?;
    info!("fit written to {}", dir.display());
    Ok(summary)
}

/// A fit directory read back for prediction.
pub struct LoadedFit {
    pub meta: FitMeta,
    pub graph: NeighborGraph,
    pub chain: io::ChainTable,
    pub draws: Vec<PosteriorDraw>,
}

pub fn load_fit(dir: &Path) -> Result<LoadedFit> {
    let meta: FitMeta = io::read_json_file(&dir.join(MODEL_JSON))?;
    let text = std::fs::read_to_string(dir.join(GRAPH_JSON)).map_err(|e| Error::io(dir.join(GRAPH_JSON), e))?;
    let graph = io::graph_from_json_str(&text, GRAPH_JSON)?;
    let chain = io::read_with(&dir.join(CHAIN_CSV), io::read_chain)?;
    let u_last = io::read_cell_matrix_file(&dir.join(U_LAST_BIN))?;
    let full_path = dir.join(U_FULL_BIN);
    let u_full = if full_path.exists() { Some(io::read_cell_matrix_file(&full_path)?) } else { None };
    let m = graph.len();
    if meta.n_locations != m || u_last.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!(
            "chain and graph disagree on the number of locations ({} vs {m})",
            u_last.first().map_or(meta.n_locations, Vec::len)
        )));
    }
    if u_last.len() != chain.len() || u_full.as_ref().is_some_and(|u| u.len() != chain.len()) {
        return Err(Error::Config("stored frailties and chain.csv hold different numbers of draws".into()));
    }
    let draws = (0..chain.len())
        .map(|k| PosteriorDraw {
            c: chain.c[k],
            kappa: chain.kappa[k],
            rho: chain.rho[k],
            beta: (meta.n_covariates > 0).then(|| chain.beta[k].clone()),
            u_last: u_last[k].clone(),
            u_full: u_full.as_ref().map(|u| u[k].clone()),
        })
        .collect();
    Ok(LoadedFit { meta, graph, chain, draws })
}

/// Predicts per the `predict` section into `<out>/predict`.
pub fn cli_predict(cfg: &RunConfig) -> Result<PredictiveDraws> {
    let p = section(&cfg.predict, "predict")?;
    let fit_dir = p.fit_dir.clone().unwrap_or_else(|| cfg.stage_dir("fit"));
    let fit = load_fit(&fit_dir)?;
    let mut request: PredictionRequest = p.request.clone();
    if let Some(path) = &p.new_locations_csv {
        request.new_locations.extend(io::read_locations_file(path)?.into_iter().map(|l| l.coords));
    }
    if let Some(seed) = cfg.seed {
        request.seed = seed;
    }
    let pred = predict(&fit.draws, &fit.graph, fit.meta.spec.alpha, fit.meta.n_times, &request)?;
    let dir = cfg.stage_dir("predict");
    make_dir(&dir)?;
    io::write_json_file(&dir.join(REQUEST_JSON), &request)?;
    io::write_with(&dir.join(PRED_DRAWS_CSV), |w, o| io::write_pred_draws(w, o, &pred))?;
    let summary = pred.summarize();
    io::write_with(&dir.join(PRED_SUMMARY_CSV), |w, o| io::write_pred_summary(w, o, &summary))?;
    info!("{} predictive draws of {} cells written to {}", pred.draws.len(), pred.n_cells(), dir.display());
    Ok(pred)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutMetrics {
    pub n_cells: usize,
    pub mae: f64,
    pub mape: Option<f64>,
    pub medae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseReport {
    pub summary: FitSummary,
    pub holdout: Option<HoldoutMetrics>,
    pub abs_errors: Vec<(String, usize, usize, f64)>,
}

/// Recomputes the fit summary from a fit directory and, with predictions and
/// withheld counts, the out-of-sample errors. Writes to `<out>/diagnose`.
pub fn cli_diagnose(cfg: &RunConfig) -> Result<DiagnoseReport> {
    let d = section(&cfg.diagnose, "diagnose")?;
    let fit_dir = d.fit_dir.clone().unwrap_or_else(|| cfg.stage_dir("fit"));
    let meta: FitMeta = io::read_json_file(&fit_dir.join(MODEL_JSON))?;
    let data = io::read_dataset_file(d.data.as_ref().unwrap_or(&meta.data_path))?;
    if data.n_locations() != meta.n_locations || data.n_times() != meta.n_times {
        return Err(Error::Config("the data do not match the fitted panel".into()));
    }
    let chain = io::read_with(&fit_dir.join(CHAIN_CSV), io::read_chain)?;
    let cells: CellAccumulator = io::read_json_file(&fit_dir.join(ACCUMULATOR_JSON))?;
    let optional = |name: &str| -> Result<Option<Vec<Vec<f64>>>> {
        let path = fit_dir.join(name);
        if path.exists() { io::read_cell_matrix_file(&path).map(Some) } else { Ok(None) }
    };
    let art = FitArtifacts {
        chain_lengths: meta.chain_lengths.clone(),
        c: chain.c.clone(),
        kappa: chain.kappa.clone(),
        rho: chain.rho.clone(),
        beta: chain.beta.clone(),
        with_rho: meta.with_rho,
        with_kappa: meta.with_kappa,
        cells,
        loglik: optional(LOGLIK_BIN)?,
        fitted: optional(FITTED_BIN)?,
        iterations: meta.iterations,
        beta_accepted: meta.beta_accepted,
    };
    let summary = FitSummary::compute(&art, data.counts())?;
    let m = data.n_locations();
    let fitted = art.cells.fitted_mean();
    let mut abs_errors: Vec<(String, usize, usize, f64)> = absolute_errors(data.counts(), &fitted)?
        .into_iter()
        .enumerate()
        .map(|(k, e)| (format!("{}-fit", d.label), k / m + 1, k % m + 1, e))
        .collect();

    let holdout = match (&d.pred_dir, &d.holdout) {
        (Some(pred_dir), Some(holdout)) => {
            let pred = io::read_with(&pred_dir.join(PRED_SUMMARY_CSV), io::read_pred_summary)?;
            if pred.is_empty() {
                return Err(Error::InvalidData(format!("{} holds no predictions", pred_dir.display())));
            }
            let truth = io::read_with(holdout, io::read_holdout)?;
            let lookup: std::collections::HashMap<(usize, usize), f64> = pred.iter().map(|r| ((r.t, r.location), r.mean)).collect();
            let mut y = Vec::with_capacity(truth.len());
            let mut y_hat = Vec::with_capacity(truth.len());
            for (t, loc, count) in &truth {
                let p = lookup
                    .get(&(*t, *loc))
                    .ok_or_else(|| Error::InvalidData(format!("no prediction for t = {t}, location {loc}")))?;
                y.push(*count);
                y_hat.push(*p);
            }
            for ((t, loc, _), e) in truth.iter().zip(absolute_errors(&y, &y_hat)?) {
                abs_errors.push((format!("{}-holdout", d.label), *t, *loc, e));
            }
            Some(HoldoutMetrics {
                n_cells: y.len(),
                mae: mae(&y, &y_hat)?,
                mape: mape(&y, &y_hat).ok(),
                medae: medae(&y, &y_hat)?,
            })
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::Config("out-of-sample errors need both pred_dir and holdout".into()));
        }
        (None, None) => None,
    };

    let dir = cfg.stage_dir("diagnose");
    make_dir(&dir)?;
    io::write_json_file(&dir.join(FIT_SUMMARY_JSON), &summary)?;
    std::fs::write(dir.join(FIT_SUMMARY_TXT), summary.table()).map_err(|e| Error::io(dir.join(FIT_SUMMARY_TXT), e))?;
    io::write_with(&dir.join(ABS_ERRORS_CSV), |w, o| io::write_abs_errors(w, o, &abs_errors))?;
    io::write_with(&dir.join(TRACE_CSV), |w, o| io::write_trace(w, o, &chain, d.trace_stride))?;
    if let Some(h) = &holdout {
        io::write_json_file(&dir.join(HOLDOUT_METRICS_JSON), h)?;
    }
    Ok(DiagnoseReport { summary, holdout, abs_errors })
}

/// Runs every stage that has a section, in pipeline order.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    if cfg.simulate.is_some() {
        cli_simulate(cfg)?;
    }
    if cfg.fit.is_some() {
        cli_fit(cfg)?;
    }
    if cfg.predict.is_some() {
        cli_predict(cfg)?;
    }
    if cfg.diagnose.is_some() {
        cli_diagnose(cfg)?;
    }
    Ok(())
}
