//! Exact t-SNE and projection export.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gender, Status};
use crate::viz::{scatter, write_image, VizError, PALETTE};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("{0}")]
    Input(String),
    #[error("perplexity search stopped at entropy {achieved} (target {target}) after {iterations} iterations")]
    NoConvergence { achieved: f64, target: f64, iterations: usize },
    #[error("non-finite gradient at iteration {0}")]
    NonFinite(usize),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Viz(#[from] VizError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub gender: Gender,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<PointLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    pub final_kl: f64,
    /// KL(P‖Q) right after early exaggeration ends.
    pub kl_after_exaggeration: f64,
    /// (iteration, KL) every 50 iterations.
    pub kl_trace: Vec<(usize, f64)>,
    pub seed: u64,
}

/// Conditional distribution for one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RowAffinity {
    pub probs: Vec<f64>,
    pub beta: f64,
    /// Shannon entropy in bits.
    pub entropy: f64,
}

impl RowAffinity {
    /// Gaussian bandwidth matching `beta = 1 / (2σ²)`.
    pub fn sigma(&self) -> f64 {
        (0.5 / self.beta).sqrt()
    }
}

fn gaussian_row(dist: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = dist.iter().map(|d| (-beta * (d - dmin)).exp()).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.into_iter().map(|v| v / z).collect();
    let h = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>();
    (p, h)
}

/// Bisection on the precision `β` so the row's entropy is
/// `log2(perplexity)` within 1e-5. Rows whose distances are all equal
/// give the uniform distribution for any target.
pub fn perplexity_search(dist: &[f64], perplexity: f64) -> Result<RowAffinity, ProjectError> {
    if dist.is_empty() || dist.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(ProjectError::Input("distance row must be non-empty, finite and non-negative".into()));
    }
    if !(perplexity >= 1.0) {
        return Err(ProjectError::Input(format!("perplexity must be ≥ 1, got {perplexity}")));
    }
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if dist.len() == 1 || dmax == dmin {
        let n = dist.len() as f64;
        return Ok(RowAffinity {
            probs: vec![1.0 / n; dist.len()],
            beta: 0.0,
            entropy: n.log2(),
        });
    }
    let target = perplexity.log2();
    let spread = dist.iter().map(|d| d - dmin).sum::<f64>() / dist.len() as f64;
    let mut beta = 1.0 / spread;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let (mut probs, mut entropy) = gaussian_row(dist, beta);
    for _ in 0..MAX_BISECTIONS {
        if (entropy - target).abs() < ENTROPY_TOL {
            return Ok(RowAffinity { probs, beta, entropy });
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (probs, entropy) = gaussian_row(dist, beta);
    }
    if (entropy - target).abs() < ENTROPY_TOL {
        return Ok(RowAffinity { probs, beta, entropy });
    }
    Err(ProjectError::NoConvergence {
        achieved: entropy,
        target,
        iterations: MAX_BISECTIONS,
    })
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.par_iter()
        .map(|a| x.iter().map(|b| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()).collect())
        .collect()
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`, row-major.
pub fn joint_affinities(vectors: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>, ProjectError> {
    let n = vectors.len();
    let d = squared_distances(vectors);
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).collect();
            perplexity_search(&others, perplexity).map(|r| r.probs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cond = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = row[k];
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Student-t kernel values `(1 + |yi − yj|²)⁻¹` (zero diagonal) and their sum.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                z += v;
            }
        }
    }
    (num, z)
}

pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_kernel(y);
    p.iter()
        .zip(&num)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &k)| pv * (pv / (k / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// `∂KL/∂y_i = 4 Σ_j (s·p_ij − q_ij)(y_i − y_j)(1 + |y_i − y_j|²)⁻¹`
/// where `s` is the exaggeration factor.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, z) = student_kernel(y);
    (0..n)
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = num[i * n + j];
                let m = 4.0 * (exaggeration * p[i * n + j] - k / z) * k;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

pub fn tsne(set: &EmbeddingSet, config: &TsneConfig) -> Result<Projection, ProjectError> {
    let n = set.vectors.len();
    if n < 5 {
        return Err(ProjectError::Input(format!("need at least 5 points, got {n}")));
    }
    if config.perplexity * 3.0 >= n as f64 {
        return Err(ProjectError::Input(format!(
            "perplexity {} must be below N/3 = {:.2}",
            config.perplexity,
            n as f64 / 3.0
        )));
    }
    if config.iterations < 250 {
        return Err(ProjectError::Input(format!("need at least 250 iterations, got {}", config.iterations)));
    }
    if set.vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ProjectError::Input("embedding contains non-finite values".into()));
    }
    let p = joint_affinities(&set.vectors, config.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("positive std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::new();
    let mut kl_after_exaggeration = f64::NAN;

    for it in 0..config.iterations {
        let exaggerating = it < config.exaggeration_iterations;
        let s = if exaggerating { config.exaggeration } else { 1.0 };
        let momentum = if exaggerating { config.initial_momentum } else { config.final_momentum };
        let grad = kl_gradient(&p, &y, s);
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(ProjectError::NonFinite(it));
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(0.01);
                velocity[i][k] = momentum * velocity[i][k] - config.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        let mean = [0, 1].map(|k| y.iter().map(|p| p[k]).sum::<f64>() / n as f64);
        for pt in &mut y {
            pt[0] -= mean[0];
            pt[1] -= mean[1];
        }
        if it + 1 == config.exaggeration_iterations {
            kl_after_exaggeration = kl_divergence(&p, &y);
        }
        if (it + 1) % 50 == 0 {
            let kl = kl_divergence(&p, &y);
            log::debug!("t-SNE iteration {} KL {kl:.5}", it + 1);
            kl_trace.push((it + 1, kl));
        }
    }
    Ok(Projection {
        final_kl: kl_divergence(&p, &y),
        points: y,
        kl_after_exaggeration,
        kl_trace,
        seed: config.seed,
    })
}

/// Share of points whose nearest 2-D neighbor has the same label.
pub fn neighbor_purity<L: PartialEq>(points: &[[f64; 2]], labels: &[L]) -> f64 {
    let n = points.len();
    let hits = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| dist2(points[i], points[a]).total_cmp(&dist2(points[i], points[b])));
            nearest.is_some_and(|j| labels[j] == labels[i])
        })
        .count();
    hits as f64 / n as f64
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ProjectError + '_ {
    move |e| ProjectError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `id,x,y,gender,status` to `path` and two scatter plots beside it:
/// `<stem>_gender.png` and `<stem>_status.png`.
pub fn export_projection(projection: &Projection, set: &EmbeddingSet, path: &Path) -> Result<[PathBuf; 2], ProjectError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["id", "x", "y", "gender", "status"]).map_err(csv_err(path))?;
    for ((id, p), l) in set.ids.iter().zip(&projection.points).zip(&set.labels) {
        w.write_record([
            id.clone(),
            format!("{}", p[0]),
            format!("{}", p[1]),
            l.gender.to_string(),
            l.status.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| ProjectError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("projection");
    let genders = [Gender::Male, Gender::Female];
    let statuses = [Status::Healthy, Status::Organic, Status::Inorganic];
    let by_gender: Vec<[u8; 3]> = set
        .labels
        .iter()
        .map(|l| PALETTE[genders.iter().position(|g| *g == l.gender).expect("two genders")])
        .collect();
    let by_status: Vec<[u8; 3]> = set
        .labels
        .iter()
        .map(|l| PALETTE[2 + statuses.iter().position(|s| *s == l.status).expect("three statuses")])
        .collect();
    let gender_legend: Vec<(String, [u8; 3])> = genders.iter().enumerate().map(|(k, g)| (g.to_string(), PALETTE[k])).collect();
    let status_legend: Vec<(String, [u8; 3])> =
        statuses.iter().enumerate().map(|(k, s)| (s.to_string(), PALETTE[2 + k])).collect();
    let out = [
        path.with_file_name(format!("{stem}_gender.png")),
        path.with_file_name(format!("{stem}_status.png")),
    ];
    write_image(&scatter(&projection.points, &by_gender, &gender_legend, 256), &out[0])?;
    write_image(&scatter(&projection.points, &by_status, &status_legend, 256), &out[1])?;
    Ok(out)
}

/// `id,gender,status,v0,…` with one row per point.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<(), ProjectError> {
    let dim = set.vectors.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["id".to_string(), "gender".into(), "status".into()];
    header.extend((0..dim).map(|k| format!("v{k}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for ((id, v), l) in set.ids.iter().zip(&set.vectors).zip(&set.labels) {
        let mut row = vec![id.clone(), l.gender.code().to_string(), l.status.to_string()];
        row.extend(v.iter().map(|x| format!("{x}")));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| ProjectError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, ProjectError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut set = EmbeddingSet {
        ids: Vec::new(),
        vectors: Vec::new(),
        labels: Vec::new(),
    };
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let bad = |m: String| ProjectError::Io {
            path: path.to_path_buf(),
            message: format!("row {}: {m}", line + 2),
        };
        let gender = row.get(1).unwrap_or_default().parse().map_err(bad)?;
        let status = row.get(2).unwrap_or_default().parse().map_err(bad)?;
        let vector = row
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        set.ids.push(row.get(0).unwrap_or_default().to_string());
        set.vectors.push(vector);
        set.labels.push(PointLabel { gender, status });
    }
    Ok(set)
}
