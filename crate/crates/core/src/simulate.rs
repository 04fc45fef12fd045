//! Synthetic data from the generative model, in the three grid designs used
//! for recovery studies.

use serde::{Deserialize, Serialize};

use crate::dist::{gamma_draw, poisson_draw};
use crate::error::{Error, Result};
use crate::graph::{grid_locations, spiral_grid_locations, GraphVariant, Location, NeighborGraph, WeightScheme};
use crate::model::{lambda_from, moments_given_previous, validate_stationarity, CountDataset, Stationarity, ZLayout, DEFAULT_ALPHA};
use crate::rng::RandomStream;

/// Which of the three designs to simulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimGroup {
    /// Nearest other locations plus an autoregressive self term.
    Group1,
    /// The location itself inside its neighbor set, no separate self term.
    Group2,
    /// Locations ordered as a clockwise spiral from the center; each looks
    /// back at its nearest predecessors only.
    Group3,
}

impl SimGroup {
    pub fn variant(self) -> GraphVariant {
        match self {
            SimGroup::Group1 => GraphVariant::UndirectedSelf,
            SimGroup::Group2 => GraphVariant::UndirectedInSet,
            SimGroup::Group3 => GraphVariant::DirectedOrdered,
        }
    }

    pub fn autoreg(self) -> bool {
        self == SimGroup::Group1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub group: SimGroup,
    /// Grid size `(n1, n2)`; ignored when `locations` is given.
    #[serde(default = "default_grid")]
    pub grid: (usize, usize),
    #[serde(default)]
    pub locations: Option<Vec<Location>>,
    pub n_times: usize,
    #[serde(default = "default_h_s")]
    pub h_s: usize,
    #[serde(default)]
    pub rho: f64,
    pub kappa: f64,
    pub c: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub inverse_distance: bool,
    /// Time-major offsets, one per cell; all ones when absent.
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

fn default_grid() -> (usize, usize) {
    (11, 11)
}

fn default_h_s() -> usize {
    12
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl SimDesign {
    /// Design on the default 11x11 grid with `h_s = 12`.
    pub fn grid_design(group: SimGroup, n_times: usize, rho: f64, kappa: f64, c: f64) -> Self {
        SimDesign {
            group,
            grid: default_grid(),
            locations: None,
            n_times,
            h_s: default_h_s(),
            rho: if group.autoreg() { rho } else { 0.0 },
            kappa,
            c,
            alpha: DEFAULT_ALPHA,
            inverse_distance: false,
            offset: None,
        }
    }

    pub fn build_locations(&self) -> Vec<Location> {
        match (&self.locations, self.group) {
            (Some(l), _) => l.clone(),
            (None, SimGroup::Group3) => spiral_grid_locations(self.grid.0, self.grid.1),
            (None, _) => grid_locations(self.grid.0, self.grid.1),
        }
    }

    pub fn build_graph(&self) -> Result<NeighborGraph> {
        let scheme = if self.inverse_distance { WeightScheme::InverseDistance } else { WeightScheme::Uniform };
        NeighborGraph::build_knn(&self.build_locations(), self.h_s, &scheme, self.group.variant())
    }

    pub fn validate(&self, graph: &NeighborGraph) -> Result<()> {
        if self.n_times == 0 {
            return Err(Error::Config("simulation needs at least one period".into()));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if !self.group.autoreg() && self.rho != 0.0 {
            return Err(Error::Config("rho applies to group 1 only".into()));
        }
        if let Some(o) = &self.offset {
            if o.len() != self.n_times * graph.len() || o.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Config("offset must hold one positive value per cell".into()));
            }
        }
        // rho = kappa = 0 is the independent design and is allowed here
        if self.rho == 0.0 && self.kappa == 0.0 {
            return Ok(());
        }
        match validate_stationarity(graph, self.rho, self.kappa, self.group.autoreg()) {
            Stationarity::Stationary => Ok(()),
            Stationarity::Violated(why) => Err(Error::NonStationary(why)),
        }
    }
}

/// True parameters and provenance of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub group: SimGroup,
    pub rho: f64,
    pub kappa: f64,
    pub c: f64,
    pub alpha: f64,
    pub h_s: usize,
    pub n_times: usize,
    pub n_locations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub data: CountDataset,
    pub graph: NeighborGraph,
    pub locations: Vec<Location>,
    /// True frailties, time-major.
    pub u: Vec<f64>,
    /// True latent counts in the model's latent layout.
    pub z: Vec<u32>,
    pub layout: ZLayout,
    pub truth: SimTruth,
}

pub fn simulate_dataset(design: &SimDesign, rng: &mut RandomStream) -> Result<SimOutput> {
    let graph = design.build_graph()?;
    design.validate(&graph)?;
    let locations = design.build_locations();
    let (m, t_len) = (graph.len(), design.n_times);
    let layout = ZLayout::new(&graph, design.group.autoreg(), t_len);
    let rate = 1.0 / design.c;
    let mut u = vec![0.0; m * t_len];
    let mut z = vec![0u32; layout.len()];

    for slot in u.iter_mut().take(m) {
        *slot = gamma_draw(design.alpha, rate, rng);
    }
    for t in 1..t_len {
        for i in 0..m {
            let mut total = 0u64;
            if let Some(k) = layout.self_index(t - 1, i) {
                let draw = poisson_draw(design.rho * u[(t - 1) * m + i] / design.c, rng);
                z[k] = draw as u32;
                total += draw;
            }
            for (k, (&j, w)) in graph.neighbors(i).iter().zip(graph.weights(i)).enumerate() {
                let draw = poisson_draw(design.kappa * w * u[(t - 1) * m + j] / design.c, rng);
                z[layout.neighbor(t - 1, i, k)] = draw as u32;
                total += draw;
            }
            u[t * m + i] = gamma_draw(design.alpha + total as f64, rate, rng);
        }
    }

    let offsets = design.offset.clone().unwrap_or_else(|| vec![1.0; m * t_len]);
    let y: Vec<u64> = u.iter().zip(&offsets).map(|(ui, o)| poisson_draw(ui * o, rng)).collect();
    let data = CountDataset::new(t_len, m, y, design.offset.clone(), None)?;
    let truth = SimTruth {
        group: design.group,
        rho: design.rho,
        kappa: design.kappa,
        c: design.c,
        alpha: design.alpha,
        h_s: design.h_s,
        n_times: t_len,
        n_locations: m,
        seed: rng.seed(),
    };
    Ok(SimOutput {
        data,
        graph,
        locations,
        u,
        z,
        layout,
        truth,
    })
}

/// Monte-Carlo against closed-form transition moments at one location.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionCheck {
    pub location: usize,
    pub mean_closed: f64,
    pub var_closed: f64,
    pub mean_mc: f64,
    pub var_mc: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

impl TransitionCheck {
    /// Both moments inside `k` standard errors.
    pub fn within(&self, k: f64) -> bool {
        (self.mean_mc - self.mean_closed).abs() <= k * self.se_mean && (self.var_mc - self.var_closed).abs() <= k * self.se_var
    }
}

/// Simulates the design once, then redraws the last transition `n_draws`
/// times from the second-to-last frailty field.
pub fn empirical_transition_check(design: &SimDesign, n_draws: usize, rng: &mut RandomStream) -> Result<Vec<TransitionCheck>> {
    if design.n_times < 2 || n_draws < 2 {
        return Err(Error::Config("transition check needs T >= 2 and at least two draws".into()));
    }
    let sim = simulate_dataset(design, rng)?;
    let m = sim.graph.len();
    let prev = &sim.u[(design.n_times - 2) * m..(design.n_times - 1) * m];
    let (mean, var) = moments_given_previous(prev, design.alpha, design.rho, design.kappa, design.c, &sim.graph);
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let lambda = lambda_from(prev, &sim.graph, i, design.rho, design.kappa, design.c);
        let draws: Vec<f64> = (0..n_draws)
            .map(|_| {
                let z = poisson_draw(lambda, rng);
                gamma_draw(design.alpha + z as f64, 1.0 / design.c, rng)
            })
            .collect();
        let n = n_draws as f64;
        let mm = draws.iter().sum::<f64>() / n;
        let v = draws.iter().map(|x| (x - mm).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = draws.iter().map(|x| (x - mm).powi(4)).sum::<f64>() / n;
        out.push(TransitionCheck {
            location: i + 1,
            mean_closed: mean[i],
            var_closed: var[i],
            mean_mc: mm,
            var_mc: v,
            se_mean: (var[i] / n).sqrt(),
            se_var: ((m4 - v * v).max(0.0) / n).sqrt(),
        });
    }
    Ok(out)
}

/// The 21 held-out coordinates on the 39x39 grid.
pub fn holdout_test_coordinates() -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(21);
    for &a in &[10, 20, 30] {
        for &b in &[10, 20, 30] {
            out.push((a, b));
        }
    }
    for &a in &[5, 15, 25, 35] {
        for &b in &[15, 25] {
            out.push((a, b));
        }
    }
    for &a in &[15, 25] {
        for &b in &[5, 35] {
            out.push((a, b));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn independent_design_has_no_serial_correlation() {
        let d = SimDesign::grid_design(SimGroup::Group1, 200, 0.0, 0.0, 5.0);
        let s = simulate_dataset(&d, &mut RandomStream::new(1)).unwrap();
        let m = 121;
        let a: Vec<f64> = s.u[..m * 199].to_vec();
        let b: Vec<f64> = s.u[m..].to_vec();
        assert!(lag1_corr(&a, &b).abs() < 0.02);
        assert!(s.z.iter().all(|&z| z == 0));
        let mean = s.u.iter().sum::<f64>() / s.u.len() as f64;
        assert!((mean - 5.0005).abs() < 0.15);
    }

    #[test]
    fn group_one_count_summary() {
        let d = SimDesign::grid_design(SimGroup::Group1, 100, 0.4, 0.4, 5.0);
        let s = simulate_dataset(&d, &mut RandomStream::new(2)).unwrap();
        let mut y: Vec<u64> = s.data.counts().to_vec();
        y.sort();
        let median = y[y.len() / 2];
        assert!((15..=28).contains(&median), "median {median}");
        assert!(*y.last().unwrap() >= 60 && *y.last().unwrap() < 1000);
        assert_eq!(y.len(), 12100);
    }

    #[test]
    fn latent_totals_match_their_poisson_means() {
        let d = SimDesign::grid_design(SimGroup::Group1, 60, 0.3, 0.5, 4.0);
        let s = simulate_dataset(&d, &mut RandomStream::new(3)).unwrap();
        let m = s.graph.len();
        let (mut own, mut own_mean, mut nb, mut nb_mean) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..59 {
            let prev = &s.u[t * m..(t + 1) * m];
            for i in 0..m {
                own += s.z[s.layout.self_index(t, i).unwrap()] as f64;
                own_mean += d.rho * prev[i] / d.c;
                for (k, (&j, w)) in s.graph.neighbors(i).iter().zip(s.graph.weights(i)).enumerate() {
                    nb += s.z[s.layout.neighbor(t, i, k)] as f64;
                    nb_mean += d.kappa * w * prev[j] / d.c;
                }
            }
        }
        assert!((own - own_mean).abs() < 4.0 * own_mean.sqrt(), "{own} vs {own_mean}");
        assert!((nb - nb_mean).abs() < 4.0 * nb_mean.sqrt(), "{nb} vs {nb_mean}");
    }

    #[test]
    fn directed_root_is_iid() {
        let mut d = SimDesign::grid_design(SimGroup::Group3, 4000, 0.0, 0.7, 3.0);
        d.grid = (5, 1);
        d.h_s = 12;
        let s = simulate_dataset(&d, &mut RandomStream::new(4)).unwrap();
        let root: Vec<f64> = (0..4000).map(|t| s.u[t * 5]).collect();
        assert!(lag1_corr(&root[..3999], &root[1..]).abs() < 0.05);
        let checks = empirical_transition_check(&d, 200_000, &mut RandomStream::new(5)).unwrap();
        assert!(checks.iter().all(|c| c.within(4.0)), "{checks:?}");
        assert!((checks[0].mean_closed - d.alpha * d.c).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_stationary_design() {
        let d = SimDesign::grid_design(SimGroup::Group1, 5, 0.6, 0.5, 5.0);
        assert!(matches!(simulate_dataset(&d, &mut RandomStream::new(1)), Err(Error::NonStationary(_))));
    }

    #[test]
    fn holdout_geometry() {
        let c = holdout_test_coordinates();
        assert_eq!(c.len(), 21);
        let mut d = c.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 21);
    }
}
