//! Spectral decomposition of correlation matrices and principal component
//! analysis of correlation vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corrwin::{CorrelationMatrix, CorrelationVector, CorrelationWindowSeries, MeanCorrelationSeries};
use crate::error::{Error, Result};
use crate::stats;

/// Eigenvalues in descending order with unit-norm eigenvectors. Each
/// eigenvector is oriented so that its largest-magnitude component is
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl SpectralDecomposition {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `sum_a lambda_a u_a u_a^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let k = self.eigenvectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; k * k];
        for (lambda, u) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for i in 0..k {
                for j in 0..k {
                    out[i * k + j] += lambda * u[i] * u[j];
                }
            }
        }
        out
    }
}

pub fn spectral_decompose(c: &CorrelationMatrix) -> SpectralDecomposition {
    let k = c.dim();
    let m = DMatrix::from_row_slice(k, k, c.as_slice());
    let (eigenvalues, eigenvectors) = sorted_eigen(m);
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Eigen-decomposes any symmetric row-major matrix; rejects asymmetric input.
pub fn spectral_decompose_symmetric(k: usize, data: &[f64]) -> Result<SpectralDecomposition> {
    if data.len() != k * k {
        return Err(Error::Dimension {
            expected: k * k,
            got: data.len(),
        });
    }
    for i in 0..k {
        for j in i + 1..k {
            if (data[i * k + j] - data[j * k + i]).abs() > 1e-12 {
                return Err(Error::validation(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    let (eigenvalues, eigenvectors) = sorted_eigen(DMatrix::from_row_slice(k, k, data));
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            orient(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Largest eigenvalue of every window of the series.
pub fn lambda_max_series(cw: &CorrelationWindowSeries) -> Vec<f64> {
    (0..cw.len())
        .map(|t| spectral_decompose(&cw.matrix(t)).lambda_max())
        .collect()
}

/// Relation between the largest eigenvalue and the mean correlation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KappaEstimate {
    /// Least-squares slope of `lambda_max` on `cbar` through the origin.
    pub ratio: f64,
    /// Pearson correlation of the two series.
    pub correlation: f64,
}

/// Regresses `lambda_max(t)` on `cbar(t)` through the origin.
///
/// The returned slope is of order `K` for a market-mode dominated panel.
/// It is the reciprocal of the factor `cbar / lambda_max`, not the average
/// of the outer product of the top eigenvector, which is far smaller.
pub fn kappa_estimate(lambdas: &[f64], cbar: &MeanCorrelationSeries) -> Result<KappaEstimate> {
    if lambdas.len() != cbar.len() {
        return Err(Error::Dimension {
            expected: cbar.len(),
            got: lambdas.len(),
        });
    }
    if lambdas.len() < 2 {
        return Err(Error::InsufficientData {
            what: "kappa estimate",
            needed: 2,
            got: lambdas.len(),
        });
    }
    let c = &cbar.values;
    let correlation = stats::pearson(lambdas, c).ok_or(Error::UndefinedCorrelation(
        "lambda_max or mean correlation series",
    ))?;
    let ratio = stats::dot(lambdas, c) / stats::dot(c, c);
    Ok(KappaEstimate { ratio, correlation })
}

/// Options for [`pca`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    /// Number of leading components to materialize; `None` keeps all
    /// components with nonzero variance.
    pub components: Option<usize>,
    /// Subtract the sample mean before forming the covariance. When false
    /// the raw data matrix is used as is.
    pub centered: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            components: None,
            centered: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Unit-norm principal directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component (sum of squares over N).
    pub variances: Vec<f64>,
    /// Total variance of the data, i.e. the trace of the covariance.
    pub total_variance: f64,
    /// Sample mean that was subtracted, if centered.
    pub mean: Option<Vec<f64>>,
    /// `projections[k][t]` = <c(t), v_k> on the raw (uncentered) vectors.
    pub projections: Vec<Vec<f64>>,
}

// Dense eigensolver cutoff; above it only the leading block is iterated.
const DENSE_LIMIT: usize = 600;

/// Principal components of a set of equal-length vectors.
///
/// With N samples in d dimensions the eigenproblem is solved on the N x N
/// Gram matrix when N <= d and mapped back, so the d x d covariance is never
/// formed for wide data.
pub fn pca(vectors: &[CorrelationVector], opts: PcaOptions) -> Result<PcaResult> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    pca_rows(&rows, opts)
}

pub fn pca_rows(rows: &[&[f64]], opts: PcaOptions) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "PCA samples",
            needed: 2,
            got: n,
        });
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    if d == 0 {
        return Err(Error::validation("zero-dimensional data"));
    }

    let mean = opts.centered.then(|| {
        let mut m = vec![0.0; d];
        for r in rows {
            m.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    });
    let x = DMatrix::from_fn(n, d, |t, j| rows[t][j] - mean.as_ref().map_or(0.0, |m| m[j]));
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let use_gram = n <= d;
    let scatter = if use_gram { &x * x.transpose() } else { x.transpose() * &x };
    let p = scatter.nrows();
    let wanted = opts.components.unwrap_or(p).clamp(1, p);

    let (eigvals, eigvecs) = if p <= DENSE_LIMIT || wanted * 4 > p {
        let (vals, vecs) = sorted_eigen(scatter);
        (vals[..wanted].to_vec(), vecs[..wanted].to_vec())
    } else {
        top_eigenpairs(&scatter, wanted)
    };

    let top = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let mut components = Vec::new();
    let mut variances = Vec::new();
    for (mu, u) in eigvals.iter().zip(eigvecs) {
        if *mu <= top * 1e-12 * p as f64 || *mu <= 0.0 {
            break;
        }
        let mut v: Vec<f64> = if use_gram {
            let u = nalgebra::DVector::from_vec(u);
            x.tr_mul(&u).iter().copied().collect()
        } else {
            u
        };
        let norm = stats::dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        orient(&mut v);
        components.push(v);
        variances.push(mu / n as f64);
    }
    if components.is_empty() {
        // All samples coincide; report the first coordinate axis with zero variance.
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        components.push(e);
        variances.push(0.0);
    }
    let projections = components
        .iter()
        .map(|v| rows.iter().map(|r| stats::dot(r, v)).collect())
        .collect();
    Ok(PcaResult {
        components,
        variances,
        total_variance,
        mean,
        projections,
    })
}

/// Leading `m` eigenpairs of a symmetric PSD matrix by block subspace
/// iteration with Rayleigh–Ritz extraction.
fn top_eigenpairs(a: &DMatrix<f64>, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = a.nrows();
    let block = (m + 10).min(p);
    let mut rng = ChaCha20Rng::seed_from_u64(0x5ca1_ab1e);
    let mut q = DMatrix::from_fn(p, block, |_, _| StandardNormal.sample(&mut rng));
    q = q.qr().q();
    let scale = a.diagonal().iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut ritz_values = vec![0.0; block];
    for iter in 0..2000 {
        let z = a * &q;
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let u = DMatrix::from_fn(block, block, |r, c| eig.eigenvectors[(r, order[c])]);
        ritz_values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let ritz_vectors = &q * &u;
        let az = &z * &u;
        let converged = (0..m).all(|c| {
            let r = az.column(c) - ritz_vectors.column(c) * ritz_values[c];
            r.norm() <= 1e-11 * scale
        });
        if converged {
            log::debug!("subspace iteration converged after {iter} iterations");
            q = ritz_vectors;
            break;
        }
        if iter == 1999 {
            log::warn!("subspace iteration stopped at the iteration cap");
            q = ritz_vectors;
            break;
        }
        q = az.qr().q();
    }
    let vectors = (0..m).map(|c| q.column(c).iter().copied().collect()).collect();
    (ritz_values[..m].to_vec(), vectors)
}

/// The unit vector `(1, ..., 1) / sqrt(d)`.
pub fn uniform_direction(d: usize) -> Vec<f64> {
    vec![1.0 / (d as f64).sqrt(); d]
}

/// Scalar product of a correlation vector with a unit-norm direction.
pub fn project(v: &CorrelationVector, component: &[f64]) -> Result<f64> {
    if v.dim() != component.len() {
        return Err(Error::Dimension {
            expected: v.dim(),
            got: component.len(),
        });
    }
    let norm = stats::dot(component, component).sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::validation(format!("component norm {norm} is not 1")));
    }
    Ok(stats::dot(&v.values, component))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrwin::{flatten, CorrelationMatrix};

    fn equicorrelated(k: usize, rho: f64) -> CorrelationMatrix {
        let mut data = vec![rho; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        CorrelationMatrix::new(k, data).unwrap()
    }

    fn vec_of(values: Vec<f64>) -> CorrelationVector {
        CorrelationVector { date: String::new(), values }
    }

    #[test]
    fn identity_spectrum() {
        let s = spectral_decompose(&CorrelationMatrix::identity(5));
        assert!(s.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn equicorrelated_spectrum() {
        let c = equicorrelated(10, 0.3);
        let s = spectral_decompose(&c);
        assert!((s.lambda_max() - 3.7).abs() < 1e-12);
        for x in &s.eigenvectors[0] {
            assert!((x - 1.0 / 10f64.sqrt()).abs() < 1e-12);
        }
        assert!((s.eigenvalues.iter().sum::<f64>() - 10.0).abs() < 1e-10);
        let rec = s.reconstruct();
        for (a, b) in rec.iter().zip(c.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn orientation_rule() {
        let s = spectral_decompose(&CorrelationMatrix::new(2, vec![1.0, -0.5, -0.5, 1.0]).unwrap());
        for v in &s.eigenvectors {
            let (imax, _) = v.iter().enumerate().fold((0, 0.0_f64), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            assert!(v[imax] > 0.0);
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(spectral_decompose_symmetric(2, &[1.0, 0.2, 0.3, 1.0]).is_err());
    }

    #[test]
    fn kappa_identity_and_errors() {
        let c = MeanCorrelationSeries::from_values(vec![0.1, 0.3, 0.2, 0.5]);
        let k = kappa_estimate(&c.values, &c).unwrap();
        assert!((k.ratio - 1.0).abs() < 1e-15);
        assert!((k.correlation - 1.0).abs() < 1e-15);
        let flat = MeanCorrelationSeries::from_values(vec![0.2; 4]);
        assert!(matches!(
            kappa_estimate(&[1.0, 2.0, 3.0, 4.0], &flat),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(kappa_estimate(&[1.0], &MeanCorrelationSeries::from_values(vec![1.0])).is_err());
    }

    #[test]
    fn pca_on_a_line() {
        let e = [0.6, 0.0, 0.8];
        let vs: Vec<_> = [-2.0, -0.5, 1.0, 3.0, 4.5]
            .iter()
            .map(|s| vec_of(e.iter().map(|x| x * s + 0.1).collect()))
            .collect();
        let r = pca(&vs, PcaOptions::default()).unwrap();
        for (a, b) in r.components[0].iter().zip(&e) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(r.variances.get(1).is_none_or(|v| v.abs() < 1e-12));
        assert!((r.variances.iter().sum::<f64>() - r.total_variance).abs() < 1e-10);
    }

    #[test]
    fn pca_requires_two_samples() {
        assert!(matches!(
            pca(&[vec_of(vec![1.0, 2.0])], PcaOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        // Tall data (N > d) goes through the covariance; the transposed
        // problem through the Gram matrix must give the same spectrum.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..30).map(|j| (j as f64 * 0.1) * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r = pca_rows(&refs, PcaOptions { components: None, centered: false }).unwrap();
        // Direct covariance eigenproblem as the oracle.
        let x = DMatrix::from_fn(12, 30, |i, j| rows[i][j]);
        let cov = x.transpose() * &x / 12.0;
        let (vals, _) = sorted_eigen(cov);
        for (a, b) in r.variances.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-10 * vals[0]);
        }
        assert_eq!(r.variances.len(), 12);
        assert!((r.variances.iter().sum::<f64>() - r.total_variance).abs() < 1e-8 * r.total_variance);
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 700;
        let b = DMatrix::from_fn(n, 40, |_, _| StandardNormal.sample(&mut rng));
        let scales = DMatrix::from_fn(40, 40, |i, j| if i == j { 1.0 / (1.0 + i as f64) } else { 0.0 });
        let g = &b * &scales * b.transpose();
        let (dense_vals, dense_vecs) = sorted_eigen(g.clone());
        let (vals, vecs) = top_eigenpairs(&g, 5);
        for i in 0..5 {
            assert!((vals[i] - dense_vals[i]).abs() < 1e-8 * dense_vals[0]);
            let overlap = stats::dot(&vecs[i], &dense_vecs[i]).abs();
            assert!((overlap - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let dir = vec![0.6, 0.8];
        let v = vec_of(vec![1.8, 2.4]);
        assert!((project(&v, &dir).unwrap() - 3.0).abs() < 1e-15);
        let o = vec_of(vec![-0.8, 0.6]);
        assert!(project(&o, &dir).unwrap().abs() < 1e-15);
        assert!(project(&o, &[1.0]).is_err());
        assert!(project(&o, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_projection_is_scaled_mean() {
        let c = equicorrelated(6, 0.25);
        let v = flatten(&c, "t");
        let d = v.dim();
        let p = project(&v, &uniform_direction(d)).unwrap();
        assert!((p / (d as f64).sqrt() - 0.25).abs() < 1e-12);
    }
}
