//! Sparse nearest-neighbor graphs and their reverse adjacency.
//!
//! Location indices are 0-based in memory and 1-based in every file format.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COINCIDENT_DISTANCE: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const IMPORT_WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphVariant {
    /// `h_s` nearest other locations; the location itself enters through `rho`.
    UndirectedSelf,
    /// The location itself first, then its `h_s - 1` nearest others.
    UndirectedInSet,
    /// Neighbors drawn only from earlier locations in the given order.
    DirectedOrdered,
}

impl GraphVariant {
    pub fn allows_self(self) -> bool {
        matches!(self, GraphVariant::UndirectedInSet)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightScheme {
    Uniform,
    InverseDistance,
    /// Per-location raw weights aligned with the neighbor lists; normalized on use.
    Custom(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    /// 1-based identifier.
    pub id: usize,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    variant: GraphVariant,
    h_s: usize,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
    reverse: Vec<Vec<(usize, usize)>>,
    reverse_weight: Vec<f64>,
    coords: Option<Vec<Vec<f64>>>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_locations(locations: &[Location]) -> Result<usize> {
    let first = locations
        .first()
        .ok_or_else(|| Error::InvalidGraph("no locations".into()))?;
    let dim = first.coords.len();
    if dim == 0 {
        return Err(Error::InvalidGraph("locations need at least one coordinate".into()));
    }
    for (i, loc) in locations.iter().enumerate() {
        if loc.id != i + 1 {
            return Err(Error::InvalidGraph(format!(
                "location ids must be 1..m in order, found {} at position {}",
                loc.id,
                i + 1
            )));
        }
        if loc.coords.len() != dim {
            return Err(Error::InvalidGraph(format!("location {} has {} coordinates, expected {dim}", loc.id, loc.coords.len())));
        }
        if loc.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGraph(format!("location {} has a non-finite coordinate", loc.id)));
        }
    }
    Ok(dim)
}

/// The `k` candidates nearest to `target`, ties to the lower index.
fn nearest(target: &[f64], coords: &[Vec<f64>], candidates: impl Iterator<Item = usize>, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = candidates.map(|j| (j, euclidean(target, &coords[j]))).collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

fn scheme_weights(dists: &[f64], scheme: &WeightScheme, custom: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = dists.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let raw: Vec<f64> = match scheme {
        WeightScheme::Uniform => vec![1.0; n],
        WeightScheme::InverseDistance => dists.iter().map(|d| 1.0 / d.max(COINCIDENT_DISTANCE)).collect(),
        WeightScheme::Custom(_) => {
            let w = custom.ok_or_else(|| Error::InvalidGraph("missing custom weights".into()))?;
            if w.len() != n {
                return Err(Error::InvalidGraph(format!("custom weight row has {} entries for {n} neighbors", w.len())));
            }
            if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidGraph("custom weights must be positive and finite".into()));
            }
            w.to_vec()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|x| x / total).collect())
}

impl NeighborGraph {
    /// Brute-force k-nearest-neighbor graph under the Euclidean metric.
    pub fn build_knn(locations: &[Location], h_s: usize, scheme: &WeightScheme, variant: GraphVariant) -> Result<Self> {
        check_locations(locations)?;
        if h_s == 0 {
            return Err(Error::InvalidGraph("h_s must be at least 1".into()));
        }
        let m = locations.len();
        if let WeightScheme::Custom(rows) = scheme {
            if rows.len() != m {
                return Err(Error::InvalidGraph(format!("{} custom weight rows for {m} locations", rows.len())));
            }
        }
        let coords: Vec<Vec<f64>> = locations.iter().map(|l| l.coords.clone()).collect();
        let mut neighbors = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            let picked: Vec<(usize, f64)> = match variant {
                GraphVariant::UndirectedSelf => nearest(&coords[i], &coords, (0..m).filter(|&j| j != i), h_s.min(m - 1)),
                GraphVariant::UndirectedInSet => {
                    let mut v = vec![(i, 0.0)];
                    v.extend(nearest(&coords[i], &coords, (0..m).filter(|&j| j != i), (h_s - 1).min(m - 1)));
                    v
                }
                GraphVariant::DirectedOrdered => nearest(&coords[i], &coords, 0..i, h_s.min(i)),
            };
            let dists: Vec<f64> = picked.iter().map(|p| p.1).collect();
            let custom = match scheme {
                WeightScheme::Custom(rows) => Some(rows[i].as_slice()),
                _ => None,
            };
            weights.push(scheme_weights(&dists, scheme, custom)?);
            neighbors.push(picked.into_iter().map(|p| p.0).collect());
        }
        Self::assemble(variant, h_s, neighbors, weights, Some(coords), WEIGHT_SUM_TOL)
    }

    /// Graph from explicit 0-based neighbor lists, e.g. correlation-selected neighbors.
    pub fn from_lists(
        variant: GraphVariant,
        h_s: usize,
        neighbors: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        coords: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        Self::assemble(variant, h_s, neighbors, weights, coords, IMPORT_WEIGHT_SUM_TOL)
    }

    fn assemble(
        variant: GraphVariant,
        h_s: usize,
        neighbors: Vec<Vec<usize>>,
        mut weights: Vec<Vec<f64>>,
        coords: Option<Vec<Vec<f64>>>,
        tol: f64,
    ) -> Result<Self> {
        let m = neighbors.len();
        if m == 0 {
            return Err(Error::InvalidGraph("graph has no locations".into()));
        }
        if h_s == 0 {
            return Err(Error::InvalidGraph("h_s must be at least 1".into()));
        }
        if weights.len() != m {
            return Err(Error::InvalidGraph(format!("{} weight rows for {m} locations", weights.len())));
        }
        if let Some(c) = &coords {
            if c.len() != m {
                return Err(Error::InvalidGraph(format!("{} coordinate rows for {m} locations", c.len())));
            }
            let dim = c[0].len();
            if dim == 0 || c.iter().any(|r| r.len() != dim || r.iter().any(|x| !x.is_finite())) {
                return Err(Error::InvalidGraph("coordinates must be finite with a common positive dimension".into()));
            }
        }
        for (i, (nb, w)) in neighbors.iter().zip(weights.iter_mut()).enumerate() {
            let loc = i + 1;
            if nb.len() != w.len() {
                return Err(Error::InvalidGraph(format!("location {loc}: {} neighbors but {} weights", nb.len(), w.len())));
            }
            if nb.len() > h_s {
                return Err(Error::InvalidGraph(format!("location {loc} has {} neighbors, more than h_s = {h_s}", nb.len())));
            }
            for (k, &j) in nb.iter().enumerate() {
                if j >= m {
                    return Err(Error::InvalidGraph(format!("location {loc} lists neighbor {} outside 1..{m}", j + 1)));
                }
                if nb[..k].contains(&j) {
                    return Err(Error::InvalidGraph(format!("location {loc} lists neighbor {} twice", j + 1)));
                }
                if j == i && !variant.allows_self() {
                    return Err(Error::InvalidGraph(format!("location {loc} is its own neighbor")));
                }
                if variant == GraphVariant::DirectedOrdered && j > i {
                    return Err(Error::InvalidGraph(format!("directed location {loc} lists later location {}", j + 1)));
                }
            }
            if w.iter().any(|x| !(*x > 0.0 && *x <= 1.0 + tol)) {
                return Err(Error::InvalidGraph(format!("location {loc} has a weight outside (0, 1]")));
            }
            if !w.is_empty() {
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > tol {
                    return Err(Error::InvalidGraph(format!("location {loc} weights sum to {total}")));
                }
                if total != 1.0 {
                    w.iter_mut().for_each(|x| *x = (*x / total).min(1.0));
                }
            }
        }
        let mut reverse = vec![Vec::new(); m];
        let mut reverse_weight = vec![0.0; m];
        for (l, nb) in neighbors.iter().enumerate() {
            for (k, &i) in nb.iter().enumerate() {
                reverse[i].push((l, k));
                reverse_weight[i] += weights[l][k];
            }
        }
        Ok(NeighborGraph {
            variant,
            h_s,
            neighbors,
            weights,
            reverse,
            reverse_weight,
            coords,
        })
    }

    pub fn variant(&self) -> GraphVariant {
        self.variant
    }

    pub fn h_s(&self) -> usize {
        self.h_s
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// Pairs `(l, k)` with `neighbors(l)[k] == i`.
    pub fn reverse(&self, i: usize) -> &[(usize, usize)] {
        &self.reverse[i]
    }

    /// `sum over reverse(i)` of `weights(l)[k]`.
    pub fn reverse_weight(&self, i: usize) -> f64 {
        self.reverse_weight[i]
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Row sums of the implied weight matrix: `rho` on the diagonal (only when
    /// `with_rho`) plus `kappa` spread over the neighbor weights.
    pub fn row_sums(&self, rho: f64, kappa: f64, with_rho: bool) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let nb: f64 = if w.is_empty() { 0.0 } else { kappa * w.iter().sum::<f64>() };
                nb + if with_rho { rho } else { 0.0 }
            })
            .collect()
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            variant: self.variant,
            h_s: self.h_s,
            neighbors: self.neighbors.iter().map(|nb| nb.iter().map(|j| j + 1).collect()).collect(),
            weights: self.weights.clone(),
            coords: self.coords.clone(),
        }
    }

    pub fn from_json(json: GraphJson) -> Result<Self> {
        let mut neighbors = Vec::with_capacity(json.neighbors.len());
        for (i, nb) in json.neighbors.into_iter().enumerate() {
            if nb.contains(&0) {
                return Err(Error::InvalidGraph(format!("location {} lists neighbor 0; ids are 1-based", i + 1)));
            }
            neighbors.push(nb.into_iter().map(|j| j - 1).collect());
        }
        Self::from_lists(json.variant, json.h_s, neighbors, json.weights, json.coords)
    }

    /// Neighbors of an out-of-sample point among the training locations.
    pub fn knn_for_new_location(&self, coords: &[f64], h_s: usize, scheme: &WeightScheme) -> Result<(Vec<usize>, Vec<f64>)> {
        let train = self
            .coords
            .as_ref()
            .ok_or_else(|| Error::Request("training graph carries no coordinates".into()))?;
        if coords.len() != train[0].len() || coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Request(format!("new location needs {} finite coordinates", train[0].len())));
        }
        if h_s == 0 {
            return Err(Error::Request("h_s must be at least 1".into()));
        }
        if matches!(scheme, WeightScheme::Custom(_)) {
            return Err(Error::Request("custom weights cannot be derived for a new location".into()));
        }
        let picked = nearest(coords, train, 0..train.len(), h_s.min(train.len()));
        let dists: Vec<f64> = picked.iter().map(|p| p.1).collect();
        let w = scheme_weights(&dists, scheme, None)?;
        Ok((picked.into_iter().map(|p| p.0).collect(), w))
    }
}

/// On-disk form of a graph; neighbor ids are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub variant: GraphVariant,
    pub h_s: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Vec<f64>>>,
}

/// Locations `(i1, i2)` on `{1..n1} x {1..n2}`, with `i1` varying fastest.
pub fn grid_locations(n1: usize, n2: usize) -> Vec<Location> {
    let mut out = Vec::with_capacity(n1 * n2);
    for i2 in 1..=n2 {
        for i1 in 1..=n1 {
            out.push(Location {
                id: out.len() + 1,
                coords: vec![i1 as f64, i2 as f64],
            });
        }
    }
    out
}

/// Grid locations relabelled from the central cell outward, turning clockwise
/// (right, down, left, up with the second coordinate pointing up).
pub fn spiral_grid_locations(n1: usize, n2: usize) -> Vec<Location> {
    let total = n1 * n2;
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let (mut x, mut y) = (((n1 + 1) / 2) as i64, ((n2 + 1) / 2) as i64);
    let dirs = [(1i64, 0i64), (0, -1), (-1, 0), (0, 1)];
    let inside = |x: i64, y: i64| x >= 1 && y >= 1 && x <= n1 as i64 && y <= n2 as i64;
    let push = |x: i64, y: i64, out: &mut Vec<Location>| {
        if inside(x, y) {
            out.push(Location {
                id: out.len() + 1,
                coords: vec![x as f64, y as f64],
            });
        }
    };
    push(x, y, &mut out);
    let mut run = 1;
    let mut d = 0;
    while out.len() < total {
        for _ in 0..2 {
            let (dx, dy) = dirs[d % 4];
            for _ in 0..run {
                x += dx;
                y += dy;
                push(x, y, &mut out);
            }
            d += 1;
        }
        run += 1;
    }
    out
}
