use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(Error::dim(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (dot(u, u), dot(v, v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Invalid("cosine of a zero vector".into()));
    }
    Ok((nu, nv))
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok((dot(u, v) / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// `(u·v)² / (‖u‖²‖v‖²)`.
pub fn cosine_sq(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok((dot(u, v).powi(2) / (nu * nv)).clamp(0.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| out[k] = r);
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of the ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid(
            "Spearman needs two equal-length series of at least 2".into(),
        ));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Invalid("Spearman of a constant series".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Points in the plane of the two leading principal axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub class_names: Vec<String>,
    /// `(class index, x, y)` in input order.
    pub points: Vec<(usize, f64, f64)>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Leading two axes, each of the input dimension.
    pub axes: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// Project every class's vectors onto the top-2 eigenvectors of the pooled
/// covariance. Each class needs at least 10 vectors.
pub fn pca_project_styles(classes: &[(String, Vec<Vec<f64>>)]) -> Result<Projection> {
    let dim = classes
        .first()
        .and_then(|(_, v)| v.first())
        .map(Vec::len)
        .unwrap_or(0);
    if dim < 2 {
        return Err(Error::Invalid(
            "projection needs vectors of dimension ≥ 2".into(),
        ));
    }
    for (name, v) in classes {
        if v.len() < 10 {
            return Err(Error::Invalid(format!(
                "class {name} has {} vectors, need at least 10",
                v.len()
            )));
        }
        if v.iter().any(|s| s.len() != dim) {
            return Err(Error::dim(format!("class {name} mixes vector lengths")));
        }
    }
    let all: Vec<&Vec<f64>> = classes.iter().flat_map(|(_, v)| v).collect();
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| all.iter().map(|s| s[j]).sum::<f64>() / n)
        .collect();
    let centred = DMatrix::from_fn(all.len(), dim, |i, j| all[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        // sign fixed so the largest-magnitude component is positive
        let big = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sgn = if big < 0.0 { -1.0 } else { 1.0 };
        col.iter().map(|v| v * sgn).collect()
    };
    let axes = [axis(0), axis(1)];
    let mut points = Vec::with_capacity(all.len());
    for (c, (_, vecs)) in classes.iter().enumerate() {
        for s in vecs {
            let d: Vec<f64> = s.iter().zip(&mean).map(|(a, m)| a - m).collect();
            points.push((c, dot(&d, &axes[0]), dot(&d, &axes[1])));
        }
    }
    Ok(Projection {
        class_names: classes.iter().map(|(n, _)| n.clone()).collect(),
        points,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        axes,
        mean,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub name: String,
    pub count: usize,
    pub centroid: Vec<f64>,
    /// Mean cosine similarity over distinct pairs within the class.
    pub within_cos: f64,
}

/// Separation statistics in the original style space.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub classes: Vec<ClassStats>,
    /// Cosine similarity between centroids, `[i][j]`.
    pub centroid_cos: Vec<Vec<f64>>,
    /// Euclidean distance between centroids, `[i][j]`.
    pub centroid_dist: Vec<Vec<f64>>,
}

pub fn class_report(classes: &[(String, Vec<Vec<f64>>)]) -> Result<SeparationReport> {
    let mut stats = Vec::with_capacity(classes.len());
    for (name, v) in classes {
        if v.len() < 2 {
            return Err(Error::Invalid(format!(
                "class {name} needs at least 2 vectors"
            )));
        }
        let dim = v[0].len();
        let centroid: Vec<f64> = (0..dim)
            .map(|j| v.iter().map(|s| s[j]).sum::<f64>() / v.len() as f64)
            .collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                total += cosine(&v[i], &v[j])?;
                pairs += 1;
            }
        }
        stats.push(ClassStats {
            name: name.clone(),
            count: v.len(),
            centroid,
            within_cos: total / pairs as f64,
        });
    }
    let k = stats.len();
    let mut centroid_cos = vec![vec![1.0; k]; k];
    let mut centroid_dist = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                centroid_cos[i][j] = cosine(&stats[i].centroid, &stats[j].centroid)?;
                centroid_dist[i][j] = stats[i]
                    .centroid
                    .iter()
                    .zip(&stats[j].centroid)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
        }
    }
    Ok(SeparationReport {
        classes: stats,
        centroid_cos,
        centroid_dist,
    })
}

/// Index of the class centroid closest (Euclidean) to class `of`, among
/// the classes listed in `among`.
pub fn nearest_centroid(report: &SeparationReport, of: usize, among: &[usize]) -> Option<usize> {
    among
        .iter()
        .copied()
        .filter(|&j| j != of)
        .min_by(|&a, &b| report.centroid_dist[of][a].total_cmp(&report.centroid_dist[of][b]))
}

impl SeparationReport {
    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            s.push_str(&format!(
                "class {} n={} within_cos={:.4}\n",
                c.name, c.count, c.within_cos
            ));
        }
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                s.push_str(&format!(
                    "centroids {}~{} cos={:.4} dist={:.4}\n",
                    self.classes[i].name,
                    self.classes[j].name,
                    self.centroid_cos[i][j],
                    self.centroid_dist[i][j]
                ));
            }
        }
        s
    }
}
