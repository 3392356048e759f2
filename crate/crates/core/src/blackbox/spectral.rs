//! Symmetric eigendecomposition by the cyclic Jacobi method and the
//! normalized-Laplacian embedding built on it.
//!
//! Jacobi is slow for large matrices but the graphs here have at most a few
//! dozen nodes, and it yields orthonormal eigenvectors to full precision.
//! Sweeps stop once the off-diagonal norm falls to machine precision relative
//! to the matrix norm; if it is still above [`CONVERGENCE_TOL`] (relative)
//! after [`MAX_SWEEPS`] the solve fails.

use super::{BlackboxError, Result};

pub const MAX_SWEEPS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-10;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn new(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "dense matrix shape");
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                s += 2.0 * self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }
}

/// Eigenvalues in ascending order, with the matching unit eigenvectors
/// stored as columns of `vectors`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Dense,
}

pub fn symmetric_eigen(a: &Dense) -> Result<Eigen> {
    let n = a.n;
    let mut m = a.clone();
    let mut v = Dense::identity(n);
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    while m.off_diagonal_norm() > f64::EPSILON * scale {
        if sweeps == MAX_SWEEPS {
            let off = m.off_diagonal_norm() / scale;
            if off > CONVERGENCE_TOL {
                return Err(BlackboxError::NotConverged { sweeps, off });
            }
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Dense::new(n, vec![0.0; n * n]);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, col, v.get(k, src));
        }
    }
    Ok(Eigen { values, vectors })
}

/// `L = I - D^{-1/2} W D^{-1/2}`. A node with zero degree gets an identity
/// row and column.
pub fn normalized_laplacian(w: &Dense) -> Dense {
    let n = w.n;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Dense::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = l.get(i, j) - inv_sqrt[i] * w.get(i, j) * inv_sqrt[j];
            l.set(i, j, v);
        }
    }
    l
}

/// Node embeddings: row `j` holds node `j`'s coordinates on the eigenvectors
/// of `L` with eigenvalue strictly below `cutoff` (at least `min_dims`, in
/// ascending eigenvalue order).
pub fn spectral_embedding(w: &Dense, cutoff: f64, min_dims: usize) -> Result<Vec<Vec<f64>>> {
    let eig = symmetric_eigen(&normalized_laplacian(w))?;
    let below = eig.values.iter().filter(|&&v| v < cutoff).count();
    let k = below.max(min_dims).min(w.n);
    Ok((0..w.n)
        .map(|j| (0..k).map(|c| eig.vectors.get(j, c)).collect())
        .collect())
}

/// `-‖v_i - v̄‖₂` for every node.
pub fn centroid_scores(embedding: &[Vec<f64>]) -> Vec<f64> {
    let n = embedding.len();
    let k = embedding.first().map_or(0, Vec::len);
    let mut centroid = vec![0.0; k];
    for row in embedding {
        for (c, x) in centroid.iter_mut().zip(row) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    embedding
        .iter()
        .map(|row| {
            -row.iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}
