use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug)]
pub struct GofResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl GofResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

impl std::fmt::Display for GofResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "chi2 = {:.2} on {} df, p = {:.4}", self.statistic, self.df, self.p_value)
    }
}

/// Pearson chi-square test of integer draws against `pmf`, pooling cells so
/// every expected count is at least 5.
pub fn chi_square_gof(draws: &[u64], pmf: impl Fn(u64) -> f64) -> GofResult {
    let n = draws.len() as f64;
    let max = *draws.iter().max().unwrap_or(&0);
    let mut observed = vec![0f64; max as usize + 1];
    for &d in draws {
        observed[d as usize] += 1.0;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    let mut covered = 0.0;
    for k in 0..=max {
        let p = pmf(k);
        covered += p;
        o += observed[k as usize];
        e += n * p;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    // whatever is left, including the tail beyond the largest draw
    e += n * (1.0 - covered).max(0.0);
    if let Some(last) = bins.last_mut() {
        last.0 += o;
        last.1 += e;
    } else {
        bins.push((o, e));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = bins.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(df as f64).unwrap().sf(statistic);
    GofResult { statistic, df, p_value }
}
