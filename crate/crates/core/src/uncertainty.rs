//! Wind scenario ingestion and the statistical objects the formulations
//! consume: support polytope, moment statistics, Gaussian fit, multimodal
//! partition, and the bus-placement matrix F.

use crate::case_model::GridCase;
use crate::linalg::DMat;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("scenario file is empty")]
    EmptyFile,
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("non-numeric cell at row {row}, column {col}: `{value}`")]
    NonNumericCell { row: usize, col: usize, value: String },
    #[error("coordinate {0} has zero spread and zero margin; support would be degenerate")]
    DegenerateCoordinate(usize),
    #[error("k-means produced an empty cluster after {0} restarts")]
    EmptyCluster(usize),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Set of uncertainty samples, one row per scenario, K columns.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioSet {
    pub dim: usize,
    pub samples: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, UncertaintyError> {
        if samples.is_empty() {
            return Err(UncertaintyError::EmptyFile);
        }
        let dim = samples[0].len();
        if dim == 0 {
            return Err(UncertaintyError::Invalid("zero-dimensional samples".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.len() != dim {
                return Err(UncertaintyError::RaggedRows { row: i, got: s.len(), expected: dim });
            }
            if let Some((j, v)) = s.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(UncertaintyError::NonNumericCell {
                    row: i,
                    col: j,
                    value: v.to_string(),
                });
            }
        }
        Ok(ScenarioSet { dim, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Load scenarios from CSV with header `xi_1..xi_K`, one row per sample.
pub fn load_scenarios<R: std::io::Read>(reader: R) -> Result<ScenarioSet, UncertaintyError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| UncertaintyError::Invalid(e.to_string()))?
        .clone();
    let dim = headers.len();
    if dim == 0 {
        return Err(UncertaintyError::EmptyFile);
    }
    let mut samples = vec![];
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => UncertaintyError::RaggedRows {
                row: i,
                got: *len as usize,
                expected: dim,
            },
            _ => UncertaintyError::Invalid(e.to_string()),
        })?;
        if record.len() != dim {
            return Err(UncertaintyError::RaggedRows { row: i, got: record.len(), expected: dim });
        }
        let mut row = Vec::with_capacity(dim);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| UncertaintyError::NonNumericCell {
                row: i,
                col: j,
                value: cell.to_string(),
            })?;
            row.push(v);
        }
        samples.push(row);
    }
    if samples.is_empty() {
        return Err(UncertaintyError::EmptyFile);
    }
    ScenarioSet::new(samples)
}

pub fn scenarios_to_csv(s: &ScenarioSet) -> String {
    let mut out = (1..=s.dim).map(|k| format!("xi_{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in &s.samples {
        out.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Bounded full-dimensional support polytope { xi : U xi <= t }.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Polytope {
    pub u: DMatSerde,
    pub t: Vec<f64>,
}

/// Serializable wrapper around the dense matrix used for U.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DMatSerde {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<DMat> for DMatSerde {
    fn from(m: DMat) -> Self {
        DMatSerde { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl DMatSerde {
    pub fn as_mat(&self) -> DMat {
        DMat { rows: self.rows, cols: self.cols, data: self.data.clone() }
    }
}

impl Polytope {
    pub fn num_rows(&self) -> usize {
        self.t.len()
    }

    pub fn dim(&self) -> usize {
        self.u.cols
    }

    pub fn contains(&self, xi: &[f64], tol: f64) -> bool {
        let u = self.u.as_mat();
        u.mul_vec(xi).iter().zip(&self.t).all(|(lhs, &rhs)| *lhs <= rhs + tol)
    }

    /// Axis-aligned box polytope with U = [I; -I], t = [upper; -lower].
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Polytope {
        let k = lower.len();
        assert_eq!(upper.len(), k);
        let mut u = DMat::zeros(2 * k, k);
        let mut t = vec![0.0; 2 * k];
        for i in 0..k {
            u[(i, i)] = 1.0;
            t[i] = upper[i];
            u[(k + i, i)] = -1.0;
            t[k + i] = -lower[i];
        }
        Polytope { u: u.into(), t }
    }

    /// If the polytope is an axis box in the `from_box` layout, return (lower, upper).
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let k = self.dim();
        if self.num_rows() != 2 * k {
            return None;
        }
        let u = self.u.as_mat();
        let mut upper = vec![0.0; k];
        let mut lower = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                let expect_hi = if i == j { 1.0 } else { 0.0 };
                if u[(i, j)] != expect_hi || u[(k + i, j)] != -expect_hi {
                    return None;
                }
            }
            upper[i] = self.t[i];
            lower[i] = -self.t[k + i];
        }
        Some((lower, upper))
    }

    /// Enumerate the vertices of a box polytope (2^K points).
    pub fn box_vertices(&self) -> Option<Vec<Vec<f64>>> {
        let (lower, upper) = self.as_box()?;
        let k = lower.len();
        let mut out = Vec::with_capacity(1 << k);
        for mask in 0u32..(1 << k) {
            out.push(
                (0..k)
                    .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                    .collect(),
            );
        }
        Some(out)
    }
}

/// Axis-aligned box support around the samples with a relative margin:
/// coordinate k spans [min - margin*range, max + margin*range].
pub fn box_support(s: &ScenarioSet, margin: f64) -> Result<Polytope, UncertaintyError> {
    if margin < 0.0 {
        return Err(UncertaintyError::Invalid("margin must be nonnegative".into()));
    }
    let k = s.dim;
    let mut lower = vec![f64::INFINITY; k];
    let mut upper = vec![f64::NEG_INFINITY; k];
    for row in &s.samples {
        for (i, &v) in row.iter().enumerate() {
            lower[i] = lower[i].min(v);
            upper[i] = upper[i].max(v);
        }
    }
    for i in 0..k {
        let range = upper[i] - lower[i];
        if range <= 0.0 && margin == 0.0 {
            return Err(UncertaintyError::DegenerateCoordinate(i));
        }
        // zero-spread coordinates get an absolute margin so the box stays full-dimensional
        let pad = if range > 0.0 { margin * range } else { margin.max(1e-6) };
        lower[i] -= pad;
        upper[i] += pad;
    }
    Ok(Polytope::from_box(&lower, &upper))
}

/// Componentwise sample mean and mean absolute deviation.
pub fn moment_stats(s: &ScenarioSet) -> (Vec<f64>, Vec<f64>) {
    let k = s.dim;
    let count = s.len() as f64;
    let mut mu = vec![0.0; k];
    for row in &s.samples {
        for (i, &v) in row.iter().enumerate() {
            mu[i] += v;
        }
    }
    for m in &mut mu {
        *m /= count;
    }
    let mut sigma = vec![0.0; k];
    for row in &s.samples {
        for (i, &v) in row.iter().enumerate() {
            sigma[i] += (v - mu[i]).abs();
        }
    }
    for d in &mut sigma {
        *d /= count;
    }
    (mu, sigma)
}

/// Sample mean and unbiased sample covariance, regularized to stay PSD with
/// a usable square root when the data is degenerate.
pub fn fit_gaussian(s: &ScenarioSet) -> (Vec<f64>, DMat) {
    let k = s.dim;
    let count = s.len() as f64;
    let (mu, _) = moment_stats(s);
    let mut cov = DMat::zeros(k, k);
    if s.len() > 1 {
        for row in &s.samples {
            for i in 0..k {
                let di = row[i] - mu[i];
                for j in 0..k {
                    cov[(i, j)] += di * (row[j] - mu[j]);
                }
            }
        }
        for v in &mut cov.data {
            *v /= count - 1.0;
        }
    }
    // regularize when the smallest eigenvalue is (near) zero
    let trace: f64 = (0..k).map(|i| cov[(i, i)]).sum();
    if smallest_eigenvalue(&cov) < 1e-10 {
        let bump = if trace > 0.0 { 1e-8 * trace / k as f64 } else { 1e-8 };
        for i in 0..k {
            cov[(i, i)] += bump.max(1e-12);
        }
    }
    (mu, cov)
}

/// Smallest eigenvalue of a small symmetric matrix by inverse iteration on a
/// shifted Jacobi sweep; good enough for the regularization decision.
fn smallest_eigenvalue(m: &DMat) -> f64 {
    let n = m.rows;
    if n == 0 {
        return 0.0;
    }
    // Jacobi eigenvalue iteration (matrices here are tiny)
    let mut a = m.clone();
    for _ in 0..64 {
        // find largest off-diagonal
        let (mut p, mut q, mut max) = (0, 1, 0.0_f64);
        for i in 0..n {
            for j in i + 1..n {
                if a[(i, j)].abs() > max {
                    max = a[(i, j)].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if n < 2 || max < 1e-14 {
            break;
        }
        let app = a[(p, p)];
        let aqq = a[(q, q)];
        let apq = a[(p, q)];
        let phi = 0.5 * (2.0 * apq).atan2(aqq - app);
        let (c, s) = (phi.cos(), phi.sin());
        for i in 0..n {
            let aip = a[(i, p)];
            let aiq = a[(i, q)];
            a[(i, p)] = c * aip - s * aiq;
            a[(i, q)] = s * aip + c * aiq;
        }
        for j in 0..n {
            let apj = a[(p, j)];
            let aqj = a[(q, j)];
            a[(p, j)] = c * apj - s * aqj;
            a[(q, j)] = s * apj + c * aqj;
        }
    }
    (0..n).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min)
}

/// One mode of a multimodal mean-MAD description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mode {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub mad: Vec<f64>,
    pub support: Polytope,
}

/// Ambiguity set description consumed by the model builders.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmbiguitySpec {
    Empirical { scenarios: ScenarioSet },
    Gaussian { mean: Vec<f64>, covariance: DMatSerde },
    MeanMad { mean: Vec<f64>, mad: Vec<f64>, support: Polytope },
    Wasserstein { radius: f64, scenarios: ScenarioSet, support: Polytope },
    MultiMad { modes: Vec<Mode> },
}

impl AmbiguitySpec {
    /// Nominal mean used for the expected recourse cost term.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            AmbiguitySpec::Empirical { scenarios } | AmbiguitySpec::Wasserstein { scenarios, .. } => {
                moment_stats(scenarios).0
            }
            AmbiguitySpec::Gaussian { mean, .. } | AmbiguitySpec::MeanMad { mean, .. } => mean.clone(),
            AmbiguitySpec::MultiMad { modes } => {
                let k = modes[0].mean.len();
                let mut mu = vec![0.0; k];
                for m in modes {
                    for (i, &v) in m.mean.iter().enumerate() {
                        mu[i] += m.weight * v;
                    }
                }
                mu
            }
        }
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        match self {
            AmbiguitySpec::Empirical { .. } => Ok(()),
            AmbiguitySpec::Gaussian { mean, covariance } => {
                if covariance.rows != mean.len() || covariance.cols != mean.len() {
                    return Err(UncertaintyError::Invalid("covariance shape".into()));
                }
                let m = covariance.as_mat();
                for i in 0..m.rows {
                    for j in 0..m.cols {
                        if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                            return Err(UncertaintyError::Invalid("covariance not symmetric".into()));
                        }
                    }
                }
                if smallest_eigenvalue(&m) < -1e-9 {
                    return Err(UncertaintyError::Invalid("covariance not PSD".into()));
                }
                Ok(())
            }
            AmbiguitySpec::MeanMad { mean, mad, support } => {
                if mad.iter().any(|&s| s < 0.0) {
                    return Err(UncertaintyError::Invalid("mad must be nonnegative".into()));
                }
                if !mean_strictly_inside(mean, support) {
                    return Err(UncertaintyError::Invalid(
                        "mean must lie strictly inside the support".into(),
                    ));
                }
                Ok(())
            }
            AmbiguitySpec::Wasserstein { radius, .. } => {
                if *radius < 0.0 {
                    return Err(UncertaintyError::Invalid("radius must be nonnegative".into()));
                }
                Ok(())
            }
            AmbiguitySpec::MultiMad { modes } => {
                if modes.is_empty() {
                    return Err(UncertaintyError::Invalid("no modes".into()));
                }
                let total: f64 = modes.iter().map(|m| m.weight).sum();
                if (total - 1.0).abs() > 1e-9 || modes.iter().any(|m| m.weight <= 0.0) {
                    return Err(UncertaintyError::Invalid("mode weights must be positive and sum to 1".into()));
                }
                for m in modes {
                    if !mean_strictly_inside(&m.mean, &m.support) {
                        return Err(UncertaintyError::Invalid(
                            "mode mean must lie strictly inside its support".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn mean_strictly_inside(mean: &[f64], support: &Polytope) -> bool {
    let u = support.u.as_mat();
    u.mul_vec(mean)
        .iter()
        .zip(&support.t)
        .all(|(lhs, &rhs)| *lhs < rhs - 1e-12)
}

/// K-means style partition of the samples into `m` modes, each summarized by
/// its weight, moment statistics and per-cluster box support.
pub fn partition_modes(
    s: &ScenarioSet,
    m: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<Mode>, UncertaintyError> {
    if m == 0 {
        return Err(UncertaintyError::Invalid("mode count must be >= 1".into()));
    }
    if s.len() < m {
        return Err(UncertaintyError::Invalid(format!(
            "need at least {m} samples for {m} modes, got {}",
            s.len()
        )));
    }
    let assignment = if m == 1 {
        vec![0; s.len()]
    } else {
        kmeans_assign(s, m, seed)?
    };
    let mut modes = Vec::with_capacity(m);
    for c in 0..m {
        let members: Vec<Vec<f64>> = s
            .samples
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == c)
            .map(|(row, _)| row.clone())
            .collect();
        let weight = members.len() as f64 / s.len() as f64;
        let cluster = ScenarioSet::new(members).expect("non-empty cluster");
        let (mean, mad) = moment_stats(&cluster);
        // singleton / zero-spread clusters still need a full-dimensional box
        let support = box_support(&cluster, margin.max(1e-6))?;
        modes.push(Mode { weight, mean, mad, support });
    }
    Ok(modes)
}

const KMEANS_RESTART_LIMIT: usize = 16;

fn kmeans_assign(s: &ScenarioSet, m: usize, seed: u64) -> Result<Vec<usize>, UncertaintyError> {
    for attempt in 0..KMEANS_RESTART_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        // distinct initial centers drawn from the samples
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut rng);
        let mut centers: Vec<Vec<f64>> = idx[..m].iter().map(|&i| s.samples[i].clone()).collect();
        let mut assignment = vec![0usize; s.len()];
        for _ in 0..100 {
            let mut changed = false;
            for (i, row) in s.samples.iter().enumerate() {
                let best = (0..m)
                    .min_by(|&a, &b| {
                        sqdist(row, &centers[a]).partial_cmp(&sqdist(row, &centers[b])).unwrap()
                    })
                    .unwrap();
                if assignment[i] != best {
                    assignment[i] = best;
                    changed = true;
                }
            }
            let mut counts = vec![0usize; m];
            let mut sums = vec![vec![0.0; s.dim]; m];
            for (row, &a) in s.samples.iter().zip(&assignment) {
                counts[a] += 1;
                for (j, &v) in row.iter().enumerate() {
                    sums[a][j] += v;
                }
            }
            if counts.iter().any(|&c| c == 0) {
                // reseed an empty cluster with a random sample
                let victim = rng.gen_range(0..s.len());
                let empty = counts.iter().position(|&c| c == 0).unwrap();
                centers[empty] = s.samples[victim].clone();
                continue;
            }
            for c in 0..m {
                for j in 0..s.dim {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
            if !changed {
                let mut counts_final = vec![0usize; m];
                for &a in &assignment {
                    counts_final[a] += 1;
                }
                if counts_final.iter().all(|&c| c > 0) {
                    return Ok(assignment);
                }
                break;
            }
        }
        // converged assignment collected above, or fell through to restart
        let mut counts = vec![0usize; m];
        for &a in &assignment {
            counts[a] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            return Ok(assignment);
        }
    }
    Err(UncertaintyError::EmptyCluster(KMEANS_RESTART_LIMIT))
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Placement matrix F (N x K): column k is the basis vector of the bus
/// hosting uncertainty source k.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlacementMatrix {
    pub matrix: DMatSerde,
    pub buses: Vec<usize>,
}

pub fn placement_matrix(case: &GridCase, wind_buses: &[usize]) -> Result<PlacementMatrix, UncertaintyError> {
    let n = case.num_buses();
    let mut f = DMat::zeros(n, wind_buses.len());
    for (k, &bus) in wind_buses.iter().enumerate() {
        let i = case
            .bus_position(bus)
            .ok_or_else(|| UncertaintyError::Invalid(format!("wind bus {bus} not in case")))?;
        f[(i, k)] = 1.0;
    }
    Ok(PlacementMatrix { matrix: f.into(), buses: wind_buses.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(samples: &[&[f64]]) -> ScenarioSet {
        ScenarioSet::new(samples.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    #[test]
    fn csv_shape() {
        let csv = "xi_1,xi_2\n0.5,1.0\n-0.5,2.0\n";
        let s = load_scenarios(csv.as_bytes()).unwrap();
        assert_eq!((s.dim, s.len()), (2, 2));
    }

    #[test]
    fn csv_blank_cell_rejected() {
        let csv = "xi_1,xi_2\n0.5,\n";
        assert!(matches!(
            load_scenarios(csv.as_bytes()),
            Err(UncertaintyError::NonNumericCell { .. })
        ));
    }

    #[test]
    fn csv_ragged_rejected() {
        let csv = "xi_1,xi_2\n0.5,1.0,7.0\n";
        assert!(matches!(load_scenarios(csv.as_bytes()), Err(UncertaintyError::RaggedRows { .. })));
    }

    #[test]
    fn csv_empty_rejected() {
        assert!(matches!(load_scenarios("xi_1\n".as_bytes()), Err(UncertaintyError::EmptyFile)));
    }

    #[test]
    fn box_support_min_max() {
        let s = set(&[&[0.0, 0.0], &[1.0, 2.0]]);
        let p = box_support(&s, 0.0).unwrap();
        assert_eq!(p.num_rows(), 4);
        let (lo, hi) = p.as_box().unwrap();
        assert_eq!(lo, vec![0.0, 0.0]);
        assert_eq!(hi, vec![1.0, 2.0]);
    }

    #[test]
    fn box_support_margin() {
        let s = set(&[&[0.0, 0.0], &[1.0, 2.0]]);
        let (lo, hi) = box_support(&s, 0.1).unwrap().as_box().unwrap();
        assert_abs_diff_eq!(lo[0], -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(hi[0], 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(lo[1], -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(hi[1], 2.2, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_coordinate_rejected() {
        let s = set(&[&[1.0], &[1.0]]);
        assert!(matches!(box_support(&s, 0.0), Err(UncertaintyError::DegenerateCoordinate(0))));
    }

    #[test]
    fn moment_stats_examples() {
        let s = set(&[&[-1.0], &[1.0]]);
        let (mu, sigma) = moment_stats(&s);
        assert_abs_diff_eq!(mu[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[0], 1.0, epsilon = 1e-12);

        let s = set(&[&[0.0], &[0.0], &[3.0]]);
        let (mu, sigma) = moment_stats(&s);
        assert_abs_diff_eq!(mu[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[0], 4.0 / 3.0, epsilon = 1e-12);

        let s = set(&[&[2.5], &[2.5], &[2.5]]);
        let (mu, sigma) = moment_stats(&s);
        assert_abs_diff_eq!(mu[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fit_unbiased() {
        let s = set(&[&[-1.0], &[1.0]]);
        let (mu, cov) = fit_gaussian(&s);
        assert_abs_diff_eq!(mu[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fit_degenerate_regularized() {
        let s = set(&[&[3.0], &[3.0], &[3.0]]);
        let (_, cov) = fit_gaussian(&s);
        assert!(cov[(0, 0)] > 0.0);
    }

    #[test]
    fn gaussian_fit_monte_carlo() {
        // i.i.d. standard normal via Box-Muller with a fixed seed
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut samples = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            samples.push(vec![
                r * (2.0 * std::f64::consts::PI * u2).cos(),
                r * (2.0 * std::f64::consts::PI * u2).sin(),
            ]);
        }
        let s = ScenarioSet::new(samples).unwrap();
        let (_, cov) = fit_gaussian(&s);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - expect).abs() < 0.1);
            }
        }
    }

    #[test]
    fn partition_two_separated_modes() {
        let mut samples = vec![];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            samples.push(vec![rng.gen_range(-0.5..0.5)]);
            samples.push(vec![10.0 + rng.gen_range(-0.5..0.5)]);
        }
        let s = ScenarioSet::new(samples).unwrap();
        let mut modes = partition_modes(&s, 2, 0.0, 42).unwrap();
        modes.sort_by(|a, b| a.mean[0].partial_cmp(&b.mean[0]).unwrap());
        assert_abs_diff_eq!(modes[0].weight, 0.5, epsilon = 1e-9);
        assert!(modes[0].mean[0].abs() < 1.0);
        assert!((modes[1].mean[0] - 10.0).abs() < 1.0);
    }

    #[test]
    fn single_mode_matches_moment_stats() {
        let s = set(&[&[0.0], &[1.0], &[5.0]]);
        let modes = partition_modes(&s, 1, 0.1, 1).unwrap();
        let (mu, sigma) = moment_stats(&s);
        assert_eq!(modes.len(), 1);
        assert_abs_diff_eq!(modes[0].weight, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(modes[0].mean[0], mu[0], epsilon = 1e-12);
        assert_abs_diff_eq!(modes[0].mad[0], sigma[0], epsilon = 1e-12);
    }

    #[test]
    fn singleton_clusters() {
        let s = set(&[&[0.0], &[10.0], &[20.0]]);
        let modes = partition_modes(&s, 3, 0.0, 5).unwrap();
        for m in &modes {
            assert_abs_diff_eq!(m.weight, 1.0 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.mad[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_inside_box_support() {
        let s = set(&[&[0.0, -2.0], &[1.0, 2.0], &[0.3, 0.5]]);
        for margin in [0.0, 0.05, 0.5] {
            let p = box_support(&s, margin).unwrap();
            let (mu, _) = moment_stats(&s);
            assert!(p.contains(&mu, 1e-12));
        }
    }

    #[test]
    fn mixture_mean_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(0.0..7.0)]).collect();
        let s = ScenarioSet::new(samples).unwrap();
        let modes = partition_modes(&s, 3, 0.1, 9).unwrap();
        let (mu, _) = moment_stats(&s);
        for k in 0..2 {
            let mixture: f64 = modes.iter().map(|m| m.weight * m.mean[k]).sum();
            assert_abs_diff_eq!(mixture, mu[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn placement_matrix_columns() {
        let case = crate::fixtures::ieee14_case();
        let f = placement_matrix(&case, &[3, 6, 13]).unwrap();
        let m = f.matrix.as_mat();
        for k in 0..3 {
            let col_sum: f64 = (0..m.rows).map(|i| m[(i, k)]).sum();
            assert_eq!(col_sum, 1.0);
        }
        assert_eq!(m[(2, 0)], 1.0); // bus 3 is the third bus
    }
}
