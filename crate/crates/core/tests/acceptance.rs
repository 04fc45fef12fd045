//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Set `ACCEPTANCE_ONLY=4,5` to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use stgamma::config::RunConfig;
use stgamma::diagnostics::ess;
use stgamma::dist::{bessel_pmf, sample_bessel, sample_noncentral_gamma, sample_truncated_gamma, BesselParams, TruncGammaParams};
use stgamma::gibbs::{run_chain, GibbsModel, McmcSettings};
use stgamma::graph::{GraphVariant, Location, NeighborGraph, WeightScheme};
use stgamma::model::{contraction_iterate, dense_v, log_joint, validate_stationarity, validate_stationarity_dense, BetaPrior, ChainState, CountDataset, Hypara, ModelSpec};
use stgamma::pipeline::{cli_diagnose, cli_fit, cli_predict, cli_simulate, run_all};
use stgamma::predict::{forward_frailty_training, predict, PosteriorDraw, PredictionRequest};
use stgamma::simulate::{simulate_dataset, SimDesign, SimGroup};
use stgamma::RandomStream;

const LEVEL: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------- statistics written here, independent of the library ----------

/// Chi-square goodness of fit; `probs` covers `0..probs.len()` and the rest of
/// the mass is lumped into the last bin. Bins are pooled to expected counts >= 5.
fn chi_square(samples: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let n = samples.len() as f64;
    let k = probs.len();
    let mut observed = vec![0u64; k];
    for &s in samples {
        observed[(s as usize).min(k - 1)] += 1;
    }
    let mut expected: Vec<f64> = probs.to_vec();
    let listed: f64 = probs[..k - 1].iter().sum();
    expected[k - 1] = (1.0 - listed).max(0.0);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (ob, ex) in observed.iter().zip(&expected) {
        o += *ob as f64;
        e += ex * n;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = bins.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}

/// Asymptotic Kolmogorov p-value with the usual small-sample correction.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Tabulated CDF from log-density values on a sorted grid, by the trapezoid rule.
struct GridCdf {
    x: Vec<f64>,
    f: Vec<f64>,
}

impl GridCdf {
    fn new(x: Vec<f64>, mut log_density: impl FnMut(f64) -> f64) -> Self {
        let ld: Vec<f64> = x.iter().map(|&v| log_density(v)).collect();
        let top = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = ld.iter().map(|l| (l - top).exp()).collect();
        let mut f = vec![0.0; x.len()];
        for k in 1..x.len() {
            f[k] = f[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (x[k] - x[k - 1]);
        }
        let total = *f.last().unwrap();
        f.iter_mut().for_each(|v| *v /= total);
        GridCdf { x, f }
    }

    fn cdf(&self, v: f64) -> f64 {
        if v <= self.x[0] {
            return 0.0;
        }
        if v >= *self.x.last().unwrap() {
            return 1.0;
        }
        let k = self.x.partition_point(|&g| g <= v);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        self.f[k - 1] + (self.f[k] - self.f[k - 1]) * (v - x0) / (x1 - x0)
    }

    fn ks(&self, samples: &mut [f64]) -> (f64, f64) {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        let mut d: f64 = 0.0;
        for (k, &s) in samples.iter().enumerate() {
            let f = self.cdf(s);
            d = d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
        }
        (d, kolmogorov_p(d, samples.len()))
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

// ---------- criteria 1-3 ----------

struct Recovery {
    c: f64,
    kappa: f64,
    rho: f64,
    mae: f64,
    seconds: f64,
}

fn recover(group: SimGroup, rho: f64, kappa: f64, c: f64, hypara: Hypara, sim_seed: u64, chain_seed: u64) -> stgamma::Result<Recovery> {
    let design = SimDesign::grid_design(group, 100, rho, kappa, c);
    let sim = simulate_dataset(&design, &mut RandomStream::new(sim_seed))?;
    let spec = ModelSpec::preset(hypara);
    let model = GibbsModel::new(&spec, &sim.graph, &sim.data)?;
    let settings = McmcSettings {
        n_burn: 5000,
        n_keep_iterations: 5000,
        store_loglik: false,
        store_fitted: false,
        ..McmcSettings::default()
    };
    let start = Instant::now();
    let chain = run_chain(&model, &settings, RandomStream::new(chain_seed), 0)?;
    let seconds = start.elapsed().as_secs_f64();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fitted = chain.cells.fitted_mean();
    let mae = sim.data.counts().iter().zip(&fitted).map(|(y, f)| (*y as f64 - f).abs()).sum::<f64>() / fitted.len() as f64;
    Ok(Recovery {
        c: mean(&chain.c),
        kappa: mean(&chain.kappa),
        rho: mean(&chain.rho),
        mae,
        seconds,
    })
}

fn criterion_1() -> Outcome {
    let r = recover(SimGroup::Group1, 0.4, 0.4, 5.0, Hypara::Hypara1, 2024, 7).map_err(|e| e.to_string())?;
    let ok = (4.7..=5.3).contains(&r.c)
        && (0.37..=0.43).contains(&r.kappa)
        && (0.37..=0.43).contains(&r.rho)
        && r.mae <= 1.45
        && r.seconds <= 600.0;
    check(
        ok,
        format!("c {:.4} kappa {:.4} rho {:.4} MAE {:.4} fit {:.0}s", r.c, r.kappa, r.rho, r.mae, r.seconds),
    )
}

fn criterion_2() -> Outcome {
    let r = recover(SimGroup::Group1, 0.4, 0.4, 500.0, Hypara::Hypara1, 2024, 7).map_err(|e| e.to_string())?;
    let ok = (r.c / 500.0 - 1.0).abs() <= 0.03 && (r.kappa - 0.4).abs() <= 0.03 && (r.rho - 0.4).abs() <= 0.03;
    check(ok, format!("c {:.3} kappa {:.4} rho {:.4} MAE {:.3}", r.c, r.kappa, r.rho, r.mae))
}

fn criterion_3() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, group) in [("group 2", SimGroup::Group2), ("group 3", SimGroup::Group3)] {
        let r = recover(group, 0.0, 0.7, 10.0, Hypara::Hypara3, 2024, 7).map_err(|e| e.to_string())?;
        ok &= (r.kappa - 0.7).abs() <= 0.03 && (r.c / 10.0 - 1.0).abs() <= 0.05;
        lines.push(format!("{name}: kappa {:.4} c {:.3}", r.kappa, r.c));
    }
    check(ok, lines.join("; "))
}

// ---------- criterion 4 ----------

fn bessel_gof() -> Outcome {
    let mut rng = RandomStream::new(41);
    let mut worst = (1.0, 0.0, 0.0);
    let mut fails = Vec::new();
    for nu in [0.0001, 1.0, 3.0] {
        for a in [0.5, 5.0, 50.0] {
            let p = BesselParams::new(nu, a).unwrap();
            let mut probs = Vec::new();
            let mut cum = 0.0;
            let mut n = 0u64;
            while cum < 1.0 - 1e-12 || (n as f64) < a {
                let q = bessel_pmf(n, &p);
                probs.push(q);
                cum += q;
                n += 1;
            }
            probs.push(0.0);
            let draws: Vec<u64> = (0..100_000).map(|_| sample_bessel(&p, &mut rng)).collect();
            let (_, _, pv) = chi_square(&draws, &probs);
            if pv < worst.0 {
                worst = (pv, nu, a);
            }
            if pv < LEVEL {
                fails.push(format!("({nu},{a}) p={pv:.4}"));
            }
        }
    }
    check(
        fails.is_empty(),
        format!("Bessel min p {:.3} at ({},{}){}", worst.0, worst.1, worst.2, if fails.is_empty() { String::new() } else { format!(" failing {}", fails.join(" ")) }),
    )
}

/// Mean of Ga(shape, rate) truncated to [lo, hi] by composite Simpson quadrature.
fn truncated_mean_quadrature(shape: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    let n = 400_000;
    if shape < 1.0 && lo == 0.0 {
        // x = v^(1/shape) removes the singularity at zero
        let top = hi.powf(shape);
        let g = |v: f64| (-rate * v.powf(1.0 / shape)).exp();
        let (num, den) = simpson(0.0, top, n, |v| (v.powf(1.0 / shape) * g(v), g(v)));
        return num / den;
    }
    let ln_f = |x: f64| if x <= 0.0 { f64::NEG_INFINITY } else { (shape - 1.0) * x.ln() - rate * x };
    let peak = lin_grid(lo, hi, 2001).into_iter().map(ln_f).fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = simpson(lo, hi, n, |x| {
        let w = (ln_f(x) - peak).exp();
        (x * w, w)
    });
    num / den
}

fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let h = (hi - lo) / n as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for k in 0..=n {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let (u, v) = f(lo + h * k as f64);
        a += w * u;
        b += w * v;
    }
    (a * h / 3.0, b * h / 3.0)
}

fn truncated_gamma_suite() -> Outcome {
    let mut rng = RandomStream::new(42);
    let cases = [
        (0.55, 1.0, 0.0, 1.0),
        (3.0, 2.0, 0.0, 0.6),
        (2.0, 0.01, 0.2, 0.9),
        (400.0, 500.0, 0.0, 1.0),
        (0.3, 50.0, 0.0, 1.0),
        (50.0, 10.0, 0.0, 1.0),
        (1200.0, 800.0, 0.0, 0.7),
    ];
    let mut worst: f64 = 0.0;
    let mut out_of_bounds = 0usize;
    for (shape, rate, lo, hi) in cases {
        let p = TruncGammaParams::new(shape, rate, lo, hi).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_truncated_gamma(&p, &mut rng).unwrap();
            if !(x >= lo && x <= hi) {
                out_of_bounds += 1;
            }
            sum += x;
        }
        let exact = truncated_mean_quadrature(shape, rate, lo, hi);
        worst = worst.max((sum / n as f64 / exact - 1.0).abs());
    }
    check(
        out_of_bounds == 0 && worst <= 0.005,
        format!("truncated gamma worst mean error {:.3}%, {out_of_bounds} out of bounds", 100.0 * worst),
    )
}

fn noncentral_suite() -> Outcome {
    let mut rng = RandomStream::new(43);
    let mut worst: f64 = 0.0;
    for (alpha, c, lambda) in [(1.0001, 5.0, 3.0), (1.5, 0.2, 40.0), (2.0, 10.0, 0.01), (1.0001, 500.0, 0.7)] {
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_noncentral_gamma(alpha, c, lambda, &mut rng).unwrap()).collect();
        let (m, v) = mean_var(&draws);
        let m4 = draws.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let mean_exact = c * (alpha + lambda);
        let var_exact = c * c * (alpha + 2.0 * lambda);
        let se_mean = (var_exact / n as f64).sqrt();
        let se_var = ((m4 - v * v) / n as f64).sqrt();
        worst = worst.max(((m - mean_exact) / se_mean).abs()).max(((v - var_exact) / se_var).abs());
    }
    check(worst <= 4.0, format!("non-central gamma worst deviation {worst:.2} SE"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let parts = [bessel_gof(), truncated_gamma_suite(), noncentral_suite()];
    let secs = start.elapsed().as_secs_f64();
    let ok = parts.iter().all(|p| p.is_ok()) && secs < 60.0;
    let text: Vec<String> = parts.into_iter().map(|p| p.unwrap_or_else(|e| e)).collect();
    check(ok, format!("{}; {secs:.1}s", text.join("; ")))
}

// ---------- criterion 5 ----------

fn conjugacy_instance() -> (ModelSpec, NeighborGraph, CountDataset) {
    let locs: Vec<Location> = [(0.0, 0.0), (1.0, 0.0), (2.5, 0.5)]
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| Location { id: k + 1, coords: vec![x, y] })
        .collect();
    let graph = NeighborGraph::build_knn(&locs, 2, &WeightScheme::InverseDistance, GraphVariant::UndirectedSelf).unwrap();
    let data = CountDataset::new(3, 3, vec![3, 1, 4, 1, 5, 9, 2, 6, 5], None, None).unwrap();
    (ModelSpec::preset(Hypara::Hypara1), graph, data)
}

fn conjugacy_state(spec: &ModelSpec, graph: &NeighborGraph, data: &CountDataset) -> ChainState {
    let mut s = ChainState::initial(spec, graph, data).unwrap();
    s.c = 2.0;
    s.rho = 0.3;
    s.kappa = 0.4;
    s.u = vec![2.5, 0.8, 3.1, 1.4, 4.2, 7.5, 2.2, 5.1, 4.4];
    for (k, z) in s.z.iter_mut().enumerate() {
        *z = 1 + (k % 3) as u32;
    }
    s
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (spec, graph, data) = conjugacy_instance();
    let model = GibbsModel::new(&spec, &graph, &data).unwrap();
    let base = conjugacy_state(&spec, &graph, &data);
    let n = 100_000;
    let mut rng = RandomStream::new(58);
    let lj = |s: &ChainState| log_joint(s, &spec, &graph, &data).unwrap_or(f64::NEG_INFINITY);
    let mut results: BTreeMap<&str, f64> = BTreeMap::new();

    // c
    let mut s = base.clone();
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            model.update_c(&mut s, &mut rng).unwrap();
            s.c
        })
        .collect();
    let (lo, hi) = draws.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let mut probe = base.clone();
    let cdf = GridCdf::new(log_grid(lo / 10.0, hi * 10.0, 40_001), |x| {
        probe.c = x;
        lj(&probe)
    });
    results.insert("c", cdf.ks(&mut draws).1);

    // U at t = 2, location 2
    let (t, i) = (1, 1);
    let mut s = base.clone();
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            model.update_u(&mut s, &mut rng, t, i).unwrap();
            s.u_at(t, i)
        })
        .collect();
    let (lo, hi) = draws.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let mut probe = base.clone();
    let cdf = GridCdf::new(log_grid(lo / 10.0, hi * 10.0, 40_001), |x| {
        probe.u[t * 3 + i] = x;
        lj(&probe)
    });
    results.insert("U", cdf.ks(&mut draws).1);

    // rho on (0, 1 - kappa)
    let mut s = base.clone();
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            model.update_rho(&mut s, &mut rng).unwrap();
            s.rho
        })
        .collect();
    let mut probe = base.clone();
    let top = 1.0 - base.kappa;
    let cdf = GridCdf::new(lin_grid(1e-12, top * (1.0 - 1e-12), 40_001), |x| {
        probe.rho = x;
        lj(&probe)
    });
    results.insert("rho", cdf.ks(&mut draws).1);

    // kappa on (0, 1 - rho)
    let mut s = base.clone();
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            model.update_kappa(&mut s, &mut rng).unwrap();
            s.kappa
        })
        .collect();
    let mut probe = base.clone();
    let top = 1.0 - base.rho;
    let cdf = GridCdf::new(lin_grid(1e-12, top * (1.0 - 1e-12), 40_001), |x| {
        probe.kappa = x;
        lj(&probe)
    });
    results.insert("kappa", cdf.ks(&mut draws).1);

    // one neighbor slot of Z at t = 1, location 2
    let (t, i, slot) = (0, 1, 1);
    let k = base.layout().row(t, i).start + slot;
    let mut s = base.clone();
    let draws: Vec<u64> = (0..n)
        .map(|_| {
            model.update_z_slot(&mut s, &mut rng, t, i, slot);
            s.z[k] as u64
        })
        .collect();
    let mut probe = base.clone();
    let logs: Vec<f64> = (0..200u32)
        .map(|z| {
            probe.z[k] = z;
            lj(&probe)
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
    results.insert("Z", chi_square(&draws, &probs).2);

    let secs = start.elapsed().as_secs_f64();
    let ok = results.values().all(|&p| p >= LEVEL) && secs <= 180.0;
    let text: Vec<String> = results.iter().map(|(k, p)| format!("{k} p={p:.3}")).collect();
    check(ok, format!("{}; {secs:.1}s", text.join(" ")))
}

// ---------- criterion 6 ----------

fn random_weights(rng: &mut RandomStream, m: usize, by_column: bool) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if rng.uniform_open() < 0.3 {
                v[(i, j)] = rng.uniform_open();
            }
        }
        if v.row(i).sum() == 0.0 {
            let j = (rng.uniform_open() * m as f64) as usize % m;
            v[(i, j)] = rng.uniform_open();
        }
    }
    if by_column {
        for j in 0..m {
            let s = v.column(j).sum();
            if s > 0.0 {
                let target = 0.5 + 0.5 * rng.uniform_open();
                v.column_mut(j).scale_mut(target / s);
            }
        }
    } else {
        for i in 0..m {
            let s = v.row(i).sum();
            let target = 0.5 + 0.5 * rng.uniform_open();
            v.row_mut(i).scale_mut(target / s);
        }
    }
    v
}

/// Stationary iff rows are positive (the first may vanish for directed
/// graphs) and either every row or every column sums to at most one.
fn dense_oracle(v: &DMatrix<f64>, directed: bool) -> bool {
    let rows: Vec<f64> = v.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = v.column_iter().map(|c| c.sum()).collect();
    let rows_ok = rows.iter().enumerate().all(|(i, &r)| if directed && i == 0 { r == 0.0 } else { r > 0.0 });
    let tol = 1.0 + 1e-12;
    rows_ok && (rows.iter().all(|&r| r <= tol) || cols.iter().all(|&c| c <= tol))
}

fn criterion_6() -> Outcome {
    let mut rng = RandomStream::new(66);
    let mut bound_violations = 0usize;
    let mut checked_steps = 0usize;
    for case in 0..20 {
        let m = 2 + (rng.uniform_open() * 29.0) as usize;
        let by_column = case % 2 == 0;
        let v = random_weights(&mut rng, m, by_column);
        if !validate_stationarity_dense(&v, false).is_stationary() {
            return Err(format!("generated matrix {case} was judged non-stationary"));
        }
        let c = 0.2 + 10.0 * rng.uniform_open();
        let x0 = DVector::from_fn(m, |_, _| 5.0 * rng.uniform_open());
        // the max bound for column-substochastic V, the mean bound for row-substochastic V
        let stat = |a: &DVector<f64>| if by_column { a.max() } else { a.mean() };
        let a1 = contraction_iterate(&v, c, &x0, 1);
        let s1 = stat(&a1);
        let mut a = a1.clone();
        for h in 1..=200usize {
            if h > 1 {
                a = contraction_iterate(&v, c, &a, 1);
            }
            if h % 50 == 0 && (contraction_iterate(&v, c, &x0, h) - &a).amax() > 1e-12 * (1.0 + a.amax()) {
                return Err(format!("contraction_iterate is not a composition at h = {h}"));
            }
            let bound = s1 / (c * s1 * (h - 1) as f64 + 1.0);
            if stat(&a) > bound * (1.0 + 1e-12) + 1e-300 {
                bound_violations += 1;
            }
            checked_steps += 1;
        }
    }

    let mut disagreements = 0usize;
    let mut n_graphs = 0usize;
    for case in 0..60 {
        let m = 3 + (rng.uniform_open() * 20.0) as usize;
        let locs: Vec<Location> = (0..m)
            .map(|k| Location { id: k + 1, coords: vec![10.0 * rng.uniform_open(), 10.0 * rng.uniform_open()] })
            .collect();
        let variant = [GraphVariant::UndirectedSelf, GraphVariant::UndirectedInSet, GraphVariant::DirectedOrdered][case % 3];
        let scheme = if case % 2 == 0 { WeightScheme::Uniform } else { WeightScheme::InverseDistance };
        let h = 1 + (rng.uniform_open() * 6.0) as usize;
        let Ok(g) = NeighborGraph::build_knn(&locs, h.min(m - 1).max(1), &scheme, variant) else { continue };
        let with_rho = variant == GraphVariant::UndirectedSelf;
        let directed = variant == GraphVariant::DirectedOrdered;
        for _ in 0..10 {
            let rho = if with_rho { 0.8 * rng.uniform_open() } else { 0.0 };
            let kappa = 1e-3 + 1.2 * rng.uniform_open();
            let dense = dense_v(&g, rho, kappa, with_rho);
            let expected = dense_oracle(&dense, directed);
            let from_graph = validate_stationarity(&g, rho, kappa, with_rho).is_stationary();
            let from_dense = validate_stationarity_dense(&dense, directed).is_stationary();
            if from_graph != expected || from_dense != expected {
                disagreements += 1;
            }
            n_graphs += 1;
        }
    }

    let bad = DMatrix::from_row_slice(3, 3, &[0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4]);
    let rejected = !validate_stationarity_dense(&bad, false).is_stationary();
    check(
        bound_violations == 0 && disagreements == 0 && rejected,
        format!(
            "{bound_violations} bound violations in {checked_steps} steps; {disagreements} of {n_graphs} validator disagreements; row sum 1.2 rejected: {rejected}"
        ),
    )
}

// ---------- criterion 7 ----------

fn beta_toy(y_zero: bool) -> (ModelSpec, NeighborGraph, CountDataset) {
    let (m, t) = (4, 5);
    let locs: Vec<Location> = (0..m).map(|k| Location { id: k + 1, coords: vec![k as f64, 0.0] }).collect();
    let graph = NeighborGraph::build_knn(&locs, 2, &WeightScheme::Uniform, GraphVariant::UndirectedSelf).unwrap();
    let mut rng = RandomStream::new(77);
    let x: Vec<f64> = (0..m * t * 3).map(|k| if k % 3 == 0 { 1.0 } else { 2.0 * rng.uniform_open() - 1.0 }).collect();
    let y: Vec<u64> = (0..m * t).map(|k| if y_zero { 0 } else { (k * 7 % 6) as u64 }).collect();
    let data = CountDataset::new(t, m, y, None, Some((3, x))).unwrap();
    let mut spec = ModelSpec::preset(Hypara::Hypara1);
    spec.beta_prior = Some(BetaPrior {
        mean: vec![0.2, -0.1, 0.3],
        cov: vec![vec![1.0, 0.3, 0.0], vec![0.3, 2.0, 0.1], vec![0.0, 0.1, 0.5]],
    });
    (spec, graph, data)
}

fn criterion_7() -> Outcome {
    let (spec, graph, data) = beta_toy(false);
    let model = GibbsModel::new(&spec, &graph, &data).unwrap();
    let kernel = model.beta_kernel().unwrap();
    let mut state = model.initial_state().unwrap();
    for (k, u) in state.u.iter_mut().enumerate() {
        *u = 0.5 + (k % 5) as f64 * 0.7;
    }
    let f = |b: &[f64]| kernel.log_target(&model, &state, b);
    let fd = |b: &[f64], h: f64| {
        DMatrix::from_fn(3, 3, |r, c| {
            let at = |dr: f64, dc: f64| {
                let mut v = b.to_vec();
                v[r] += dr * h;
                v[c] += dc * h;
                f(&v)
            };
            -(at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
        })
    };
    let mut worst: f64 = 0.0;
    for b in [[0.2, -0.1, 0.3], [1.0, 0.5, -0.7], [-0.4, 1.2, 0.1]] {
        let analytic = kernel.precision(&model, &state, &b);
        let (h1, h2) = (1e-2, 5e-3);
        let richardson = (fd(&b, h2) * 4.0 - fd(&b, h1)) / 3.0;
        let scale = analytic.amax();
        for (a, n) in analytic.iter().zip(richardson.iter()) {
            worst = worst.max((a - n).abs() / a.abs().max(1e-3 * scale));
        }
    }

    let (spec0, graph0, data0) = beta_toy(true);
    let model0 = GibbsModel::new(&spec0, &graph0, &data0).unwrap();
    let kernel0 = model0.beta_kernel().unwrap();
    let mut s = model0.initial_state().unwrap();
    s.u.iter_mut().for_each(|u| *u = 0.0);
    let mut rng = RandomStream::new(78);
    for _ in 0..1000 {
        kernel0.step(&model0, &mut s, &mut rng, 0.95, 100.0).unwrap();
    }
    let n = 100_000;
    let mut trace = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        kernel0.step(&model0, &mut s, &mut rng, 0.95, 100.0).unwrap();
        for (j, b) in s.beta.iter().enumerate() {
            trace[j].push(*b);
        }
    }
    let prior = spec0.beta_prior.as_ref().unwrap();
    let mut worst_z: f64 = 0.0;
    for (j, tr) in trace.iter().enumerate() {
        let (m, v) = mean_var(tr);
        let n_eff = ess(tr).map_err(|e| e.to_string())?;
        worst_z = worst_z.max((m - prior.mean[j]).abs() / (v / n_eff).sqrt());
    }
    check(
        worst <= 1e-5 && worst_z <= 4.0,
        format!("Hessian worst relative error {worst:.2e}; prior-only mean worst deviation {worst_z:.2} SE"),
    )
}

// ---------- criterion 8 ----------

fn grid_graph(n: usize) -> NeighborGraph {
    NeighborGraph::build_knn(&stgamma::graph::grid_locations(n, n), 4, &WeightScheme::Uniform, GraphVariant::UndirectedSelf).unwrap()
}

fn ppd_matches_negative_binomial() -> Outcome {
    let graph = grid_graph(3);
    let (alpha, c, n_times) = (1.0001, 3.0, 3);
    let draw = PosteriorDraw {
        c,
        kappa: 0.0,
        rho: 0.0,
        beta: None,
        u_last: vec![2.0; 9],
        u_full: Some(vec![2.0; 9 * n_times]),
    };
    let draws = vec![draw; 20_000];
    let mut req = PredictionRequest::future_only(0, 88);
    req.new_locations = vec![vec![1.5, 1.5]];
    let pred = predict(&draws, &graph, alpha, n_times, &req).map_err(|e| e.to_string())?;
    let col = pred.cells.iter().position(|cell| cell.t == n_times && cell.location == 10).unwrap();
    let ys: Vec<u64> = pred.draws.iter().map(|d| d.y[col]).collect();
    let p = 1.0 / (1.0 + c);
    // NB(size alpha, prob p): P(k) = Gamma(k + alpha) / (Gamma(alpha) k!) p^alpha (1 - p)^k
    let probs: Vec<f64> = (0..400u64)
        .map(|k| {
            let kf = k as f64;
            (ln_gamma(kf + alpha) - ln_gamma(alpha) - ln_gamma(kf + 1.0) + alpha * p.ln() + kf * (1.0 - p).ln()).exp()
        })
        .collect();
    let (_, df, pv) = chi_square(&ys, &probs);
    check(pv >= LEVEL, format!("new-cell PPD vs negative binomial p={pv:.3} (df {df})"))
}

fn forwarded_means() -> Outcome {
    let graph = grid_graph(3);
    let (alpha, c, rho, kappa, q) = (1.0001, 2.0, 0.3, 0.5, 4);
    let u_last: Vec<f64> = (0..9).map(|k| 0.5 + k as f64).collect();
    let draw = PosteriorDraw { c, kappa, rho, beta: None, u_last: u_last.clone(), u_full: None };
    let reps = 20_000;
    let root = RandomStream::new(89);
    let paths: Vec<Vec<f64>> = (0..reps).map(|r| forward_frailty_training(&draw, &graph, alpha, q, &mut root.fork(r as u64))).collect();
    let v = dense_v(&graph, rho, kappa, true);
    let mut mu = DVector::from_vec(u_last);
    let mut worst: f64 = 0.0;
    for h in 0..q {
        mu = DVector::from_element(9, alpha * c) + &v * &mu;
        for i in 0..9 {
            let col: Vec<f64> = paths.iter().map(|p| p[h * 9 + i]).collect();
            let (m, var) = mean_var(&col);
            worst = worst.max((m - mu[i]).abs() / (var / reps as f64).sqrt());
        }
    }
    check(worst <= 4.0, format!("forwarded means worst deviation {worst:.2} SE over {} cells", q * 9))
}

fn json_path(p: &Path) -> String {
    serde_json::to_string(&p.display().to_string()).unwrap()
}

fn holdout_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let text = format!(
        r#"{{
          "seed": 808,
          "out": {out},
          "simulate": {{
            "design": {{"group": "group1", "grid": [39, 39], "n_times": 50, "rho": 0.4, "kappa": 0.4, "c": 5}},
            "holdout": {{"future_periods": 2}}
          }},
          "fit": {{"hypara": "hypara1",
                   "mcmc": {{"n_burn": 300, "n_keep_iterations": 300, "thin": 3,
                            "store_loglik": false, "store_fitted": false, "store_frailty": true}}}},
          "predict": {{"request": {{"q": 2}}, "new_locations_csv": {test_locs}}},
          "diagnose": {{"pred_dir": {pred}, "holdout": {holdout}, "label": "group1"}}
        }}"#,
        out = json_path(&out),
        test_locs = json_path(&out.join("simulate/test_locations.csv")),
        pred = json_path(&out.join("predict")),
        holdout = json_path(&out.join("simulate/holdout.csv")),
    );
    let cfg = RunConfig::from_json_str(&text, "acceptance").map_err(|e| e.to_string())?;
    let start = Instant::now();
    cli_simulate(&cfg).map_err(|e| e.to_string())?;
    cli_fit(&cfg).map_err(|e| e.to_string())?;
    let pred = cli_predict(&cfg).map_err(|e| e.to_string())?;
    let report = cli_diagnose(&cfg).map_err(|e| e.to_string())?;
    let metrics = report.holdout.ok_or("no hold-out metrics")?;
    let secs = start.elapsed().as_secs_f64();
    check(
        pred.n_new == 21 && pred.n_cells() == 4050 && metrics.n_cells == 4050,
        format!(
            "39x39 hold-out: {} new locations, {} predicted cells, out-of-sample MAE {:.4} MedAE {:.4}, {secs:.0}s",
            pred.n_new,
            pred.n_cells(),
            metrics.mae,
            metrics.medae
        ),
    )
}

fn criterion_8() -> Outcome {
    let parts = [ppd_matches_negative_binomial(), forwarded_means(), holdout_pipeline()];
    let ok = parts.iter().all(|p| p.is_ok());
    let text: Vec<String> = parts.into_iter().map(|p| p.unwrap_or_else(|e| e)).collect();
    check(ok, text.join("; "))
}

// ---------- criterion 9 ----------

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let text = format!(
        r#"{{
          "seed": 909,
          "out": {out},
          "simulate": {{
            "design": {{"group": "group1", "grid": [5, 5], "n_times": 12, "h_s": 6, "rho": 0.3, "kappa": 0.5, "c": 3}},
            "holdout": {{"future_periods": 2, "test_coordinates": [[2, 2], [4, 3]]}}
          }},
          "fit": {{"h_s": 6, "hypara": "hypara1",
                   "mcmc": {{"n_burn": 200, "n_keep_iterations": 300, "n_chains": 3, "store_frailty": true}}}},
          "predict": {{"request": {{"q": 2, "n_draws": 120}}, "new_locations_csv": {test_locs}}},
          "diagnose": {{"pred_dir": {pred}, "holdout": {holdout}, "trace_stride": 7}}
        }}"#,
        out = json_path(&out),
        test_locs = json_path(&out.join("simulate/test_locations.csv")),
        pred = json_path(&out.join("predict")),
        holdout = json_path(&out.join("simulate/holdout.csv")),
    );
    let cfg = RunConfig::from_json_str(&text, "acceptance").map_err(|e| e.to_string())?;
    run_all(&cfg).map_err(|e| e.to_string())?;
    let first = snapshot(&out);
    std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    run_all(&cfg).map_err(|e| e.to_string())?;
    let second = snapshot(&out);
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.display().to_string())
        .collect();
    check(
        first.len() == second.len() && differing.is_empty(),
        format!("{} files compared, {} differ {:?}", first.len(), differing.len(), differing),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "parameter recovery, group 1, c = 5", criterion_1),
        (2, "parameter recovery, group 1, c = 500", criterion_2),
        (3, "parameter recovery, groups 2 and 3", criterion_3),
        (4, "distributional correctness", criterion_4),
        (5, "single-variable conditionals vs joint density", criterion_5),
        (6, "stationarity machinery", criterion_6),
        (7, "Metropolis step for beta", criterion_7),
        (8, "prediction", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {k} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {k} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
