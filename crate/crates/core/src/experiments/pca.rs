//! Two-component PCA for embedding plots.
//!
//! The top eigenpairs come from orthogonal iteration on whichever of the
//! covariance (`d×d`) or Gram (`n×n`) matrix is smaller, followed by a 2×2
//! Rayleigh–Ritz solve to order them. Each component's sign is fixed so its
//! largest-magnitude entry is positive.

use std::io::Write;
use std::path::Path;

use log::warn;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::IntentModel;

use super::evaluate::transferred_embeddings;

const MAX_ITERS: usize = 5000;
const TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Unit principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Projected coordinates of each input row.
    pub points: Vec<[f64; 2]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric matrix-vector product for a row-major `n×n` matrix.
fn matvec(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// Gram–Schmidt on two vectors; returns `None` if the pair is degenerate.
fn orthonormalize(a: &mut [f64], b: &mut [f64]) -> bool {
    let na = norm(a);
    if na < 1e-300 {
        return false;
    }
    a.iter_mut().for_each(|x| *x /= na);
    let p = dot(a, b);
    b.iter_mut().zip(a.iter()).for_each(|(y, x)| *y -= p * x);
    let nb = norm(b);
    if nb < 1e-300 {
        return false;
    }
    b.iter_mut().for_each(|y| *y /= nb);
    true
}

/// Top two eigenpairs of a symmetric positive semidefinite `n×n` matrix.
fn top_two(m: &[f64], n: usize) -> ([f64; 2], [Vec<f64>; 2]) {
    // Deterministic, generic starting block.
    let mut q0: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 * 0.77).sin()).collect();
    let mut q1: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 1.37).cos()).collect();
    orthonormalize(&mut q0, &mut q1);
    let mut prev = [f64::NAN; 2];
    for _ in 0..MAX_ITERS {
        let mut a = matvec(m, n, &q0);
        let mut b = matvec(m, n, &q1);
        if !orthonormalize(&mut a, &mut b) {
            break;
        }
        let change = (1.0 - dot(&a, &q0).abs()) + (1.0 - dot(&b, &q1).abs());
        q0 = a;
        q1 = b;
        let rq = [dot(&q0, &matvec(m, n, &q0)), dot(&q1, &matvec(m, n, &q1))];
        if change < TOL && (rq[0] - prev[0]).abs() < TOL * rq[0].abs().max(1.0) {
            break;
        }
        prev = rq;
    }
    // Rayleigh–Ritz on span{q0, q1}.
    let mq0 = matvec(m, n, &q0);
    let mq1 = matvec(m, n, &q1);
    let (a, b, c) = (dot(&q0, &mq0), dot(&q0, &mq1), dot(&q1, &mq1));
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l0, l1) = (mid + rad, mid - rad);
    // Eigenvector of [[a,b],[b,c]] for l0.
    let (x, y) = if b.abs() > 1e-300 {
        let (x, y) = (b, l0 - a);
        let r = (x * x + y * y).sqrt();
        (x / r, y / r)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let v0: Vec<f64> = q0.iter().zip(&q1).map(|(p, q)| x * p + y * q).collect();
    let v1: Vec<f64> = q0.iter().zip(&q1).map(|(p, q)| -y * p + x * q).collect();
    ([l0, l1], [v0, v1])
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Projection> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Contract(format!("PCA needs at least 2 points, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("PCA rows must share a positive width".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    if centered.iter().all(|r| r.iter().all(|&x| x == 0.0)) {
        warn!("all {n} points are identical; projection is zero");
        let mut e0 = vec![0.0; d];
        e0[0] = 1.0;
        let mut e1 = vec![0.0; d];
        if d > 1 {
            e1[1] = 1.0;
        }
        return Ok(Projection {
            mean,
            components: [e0, e1],
            eigenvalues: [0.0, 0.0],
            points: vec![[0.0, 0.0]; n],
        });
    }

    let scale = 1.0 / (n as f64 - 1.0);
    let mut components = if d <= n {
        let mut cov = vec![0.0; d * d];
        for r in &centered {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += r[i] * r[j] * scale;
                }
            }
        }
        top_two(&cov, d).1
    } else {
        // Eigenvectors u of X·Xᵀ map to Xᵀu for the covariance.
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = dot(&centered[i], &centered[j]) * scale;
            }
        }
        let (_, us) = top_two(&gram, n);
        let [mut v0, mut v1] = us.map(|u| {
            let mut v = vec![0.0; d];
            for (r, ui) in centered.iter().zip(&u) {
                v.iter_mut().zip(r).for_each(|(vj, x)| *vj += ui * x);
            }
            v
        });
        // Xᵀu0 and Xᵀu1 are orthogonal only as far as u converged.
        if !orthonormalize(&mut v0, &mut v1) {
            let nv = norm(&v0);
            if nv > 0.0 {
                v0.iter_mut().for_each(|x| *x /= nv);
            }
        }
        [v0, v1]
    };
    for c in &mut components {
        fix_sign(c);
    }
    let points: Vec<[f64; 2]> = centered
        .iter()
        .map(|r| [dot(r, &components[0]), dot(r, &components[1])])
        .collect();
    let eigenvalues = [0, 1].map(|k| points.iter().map(|p| p[k] * p[k]).sum::<f64>() * scale);
    Ok(Projection {
        mean,
        components,
        eigenvalues,
        points,
    })
}

/// Writes `x,y,intent,language,source` rows for E_TE and E_lang of every
/// test example, projected onto one shared pair of components.
pub fn export_projection(model: &dyn IntentModel, dataset: &Dataset, path: &Path) -> Result<Projection> {
    let te = transferred_embeddings(model, dataset)?;
    let mut rows: Vec<Vec<f64>> = te.iter().map(|t| t.data().to_vec()).collect();
    rows.extend(dataset.examples().iter().map(|e| e.teacher.data().to_vec()));
    let proj = pca_2d(&rows)?;

    let mut out = String::from("x,y,intent,language,source\n");
    let n = dataset.len();
    for (i, p) in proj.points.iter().enumerate() {
        let ex = &dataset.examples()[i % n];
        let source = if i < n { "E_TE" } else { "E_lang" };
        out.push_str(&format!("{},{},{},{},{source}\n", p[0], p[1], ex.intent, ex.language));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(proj)
}
