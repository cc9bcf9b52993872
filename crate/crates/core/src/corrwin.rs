//! Rolling Pearson correlation matrices, their flattened correlation
//! vectors, the mean correlation coefficient and the normalized distance
//! between correlation vectors.
//!
//! Vectorization order is the strictly upper triangle, row-major:
//! `(0,1), (0,2), ..., (0,K-1), (1,2), ..., (K-2,K-1)`.

use crate::error::{Error, Result};
use crate::ingest::NormalizedReturns;

/// Symmetry tolerance applied when validating correlation matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Number of independent coefficients of a `k x k` correlation matrix.
pub fn vector_len(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Recovers `k` from `d = (k^2 - k) / 2`.
pub fn matrix_dim(d: usize) -> Option<usize> {
    let k = ((1.0 + (1.0 + 8.0 * d as f64).sqrt()) / 2.0).round() as usize;
    (vector_len(k) == d).then_some(k)
}

/// Dense symmetric correlation matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    k: usize,
    data: Vec<f64>,
}

impl CorrelationMatrix {
    /// Validates symmetry, unit diagonal and the `[-1, 1]` range.
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::Dimension {
                expected: k * k,
                got: data.len(),
            });
        }
        for i in 0..k {
            if (data[i * k + i] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::validation(format!("diagonal entry ({i},{i}) is not 1")));
            }
            for j in i + 1..k {
                let (a, b) = (data[i * k + j], data[j * k + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::validation(format!("asymmetric at ({i},{j}): {a} vs {b}")));
                }
                if !(-1.0 - SYMMETRY_TOLERANCE..=1.0 + SYMMETRY_TOLERANCE).contains(&a) {
                    return Err(Error::validation(format!("entry ({i},{j}) = {a} outside [-1, 1]")));
                }
            }
        }
        Ok(Self { k, data })
    }

    pub fn identity(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self { k, data }
    }

    /// Rebuilds the matrix from its upper-triangle vector.
    pub fn from_upper(values: &[f64]) -> Result<Self> {
        let k = matrix_dim(values.len()).ok_or_else(|| {
            Error::validation(format!("{} is not a triangular number", values.len()))
        })?;
        let mut m = Self::identity(k);
        let mut idx = 0;
        for i in 0..k {
            for j in i + 1..k {
                m.data[i * k + j] = values[idx];
                m.data[j * k + i] = values[idx];
                idx += 1;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn upper(&self) -> Vec<f64> {
        let k = self.k;
        let mut out = Vec::with_capacity(vector_len(k));
        for i in 0..k {
            out.extend_from_slice(&self.data[i * k + i + 1..(i + 1) * k]);
        }
        out
    }
}

/// The independent coefficients of one correlation matrix as a point in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVector {
    pub date: String,
    pub values: Vec<f64>,
}

impl CorrelationVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Arithmetic mean of the coefficients, i.e. the mean correlation.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_matrix(&self) -> Result<CorrelationMatrix> {
        CorrelationMatrix::from_upper(&self.values)
    }
}

/// Flattens a validated matrix in upper-triangle row-major order.
pub fn flatten(c: &CorrelationMatrix, date: impl Into<String>) -> CorrelationVector {
    CorrelationVector {
        date: date.into(),
        values: c.upper(),
    }
}

/// Flattens raw row-major data after checking symmetry and unit diagonal.
pub fn flatten_checked(k: usize, data: Vec<f64>, date: impl Into<String>) -> Result<CorrelationVector> {
    Ok(flatten(&CorrelationMatrix::new(k, data)?, date))
}

/// Euclidean distance normalized by `sqrt(d)`.
pub fn distance(a: &CorrelationVector, b: &CorrelationVector) -> Result<f64> {
    normalized_distance(&a.values, &b.values)
}

pub fn normalized_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(normalized_distance_unchecked(a, b))
}

pub(crate) fn normalized_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Correlation matrices over a window of `window` days, evaluated every
/// `step` days. Matrices are stored as their correlation vectors; use
/// [`CorrelationWindowSeries::matrix`] for the dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationWindowSeries {
    pub window: usize,
    pub step: usize,
    pub k: usize,
    pub vectors: Vec<CorrelationVector>,
    /// `(window index, instrument)` pairs with zero variance inside the window.
    pub degenerate: Vec<(usize, usize)>,
}

impl CorrelationWindowSeries {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn d(&self) -> usize {
        vector_len(self.k)
    }

    pub fn dates(&self) -> Vec<String> {
        self.vectors.iter().map(|v| v.date.clone()).collect()
    }

    pub fn matrix(&self, t: usize) -> CorrelationMatrix {
        CorrelationMatrix::from_upper(&self.vectors[t].values).expect("stored vectors have triangular length")
    }
}

/// Pearson correlation matrices over trailing windows of `window` columns.
///
/// The window ending at column `e` covers `e + 1 - window ..= e`; the first
/// window ends at `window - 1` and subsequent ones advance by `step`, giving
/// `floor((M - window) / step) + 1` matrices. Each matrix is dated by the last
/// day of its window. An instrument with zero variance inside a window gets
/// zero correlation with every other instrument.
pub fn rolling_correlations(nr: &NormalizedReturns, window: usize, step: usize) -> Result<CorrelationWindowSeries> {
    if window < 2 {
        return Err(Error::validation("correlation window must be at least 2"));
    }
    if step == 0 {
        return Err(Error::validation("step must be positive"));
    }
    let m = nr.len();
    if m < window {
        return Err(Error::InsufficientData {
            what: "correlation window",
            needed: window,
            got: m,
        });
    }
    let k = nr.n_instruments();
    if k < 2 {
        return Err(Error::InsufficientData {
            what: "correlation matrix instruments",
            needed: 2,
            got: k,
        });
    }
    let count = (m - window) / step + 1;
    let mut vectors = Vec::with_capacity(count);
    let mut degenerate = Vec::new();
    // Unit-norm centred rows; their dot products are the Pearson coefficients.
    let mut z = vec![0.0; k * window];
    let mut live = vec![false; k];
    for w in 0..count {
        let start = w * step;
        for i in 0..k {
            let xs = &nr.values[i][start..start + window];
            let mean = xs.iter().sum::<f64>() / window as f64;
            let row = &mut z[i * window..(i + 1) * window];
            let mut ss = 0.0;
            for (dst, x) in row.iter_mut().zip(xs) {
                *dst = x - mean;
                ss += *dst * *dst;
            }
            let scale = xs.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            let norm = ss.sqrt();
            live[i] = norm > 1e-12 * scale * (window as f64).sqrt() && norm > 0.0;
            if live[i] {
                row.iter_mut().for_each(|v| *v /= norm);
            } else {
                degenerate.push((w, i));
            }
        }
        let mut values = Vec::with_capacity(vector_len(k));
        for i in 0..k {
            let zi = &z[i * window..(i + 1) * window];
            for j in i + 1..k {
                if live[i] && live[j] {
                    let zj = &z[j * window..(j + 1) * window];
                    let c: f64 = zi.iter().zip(zj).map(|(a, b)| a * b).sum();
                    values.push(c.clamp(-1.0, 1.0));
                } else {
                    values.push(0.0);
                }
            }
        }
        vectors.push(CorrelationVector {
            date: nr.dates[start + window - 1].clone(),
            values,
        });
    }
    Ok(CorrelationWindowSeries {
        window,
        step,
        k,
        vectors,
        degenerate,
    })
}

/// Time series of the mean correlation coefficient (or any scalar series
/// that the drift/diffusion estimators consume).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCorrelationSeries {
    pub dates: Vec<String>,
    pub values: Vec<f64>,
}

impl MeanCorrelationSeries {
    pub fn new(dates: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Dimension {
                expected: dates.len(),
                got: values.len(),
            });
        }
        Ok(Self { dates, values })
    }

    /// Series labelled by integer step index.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            dates: (0..values.len()).map(|t| t.to_string()).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn mean_correlation(cw: &CorrelationWindowSeries) -> Result<MeanCorrelationSeries> {
    if cw.is_empty() {
        return Err(Error::InsufficientData {
            what: "mean correlation",
            needed: 1,
            got: 0,
        });
    }
    Ok(MeanCorrelationSeries {
        dates: cw.dates(),
        values: cw.vectors.iter().map(CorrelationVector::mean).collect(),
    })
}

/// Mean of the off-diagonal coefficients of a single matrix.
pub fn matrix_mean_correlation(c: &CorrelationMatrix) -> f64 {
    flatten(c, "").mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nr(values: Vec<Vec<f64>>) -> NormalizedReturns {
        let n = values[0].len();
        NormalizedReturns {
            dates: (0..n).map(|t| t.to_string()).collect(),
            tickers: (0..values.len()).map(|i| i.to_string()).collect(),
            values,
            window: 13,
            degenerate: vec![],
        }
    }

    fn equicorrelated(k: usize, rho: f64) -> CorrelationMatrix {
        let mut data = vec![rho; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        CorrelationMatrix::new(k, data).unwrap()
    }

    /// Direct Pearson from population moments.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n - mx * my;
        let sx = (x.iter().map(|a| a * a).sum::<f64>() / n - mx * mx).sqrt();
        let sy = (y.iter().map(|a| a * a).sum::<f64>() / n - my * my).sqrt();
        sxy / (sx * sy)
    }

    fn wave(n: usize, f: f64, p: f64) -> Vec<f64> {
        (0..n).map(|t| (f * t as f64 + p).sin() + 0.3 * (2.7 * f * t as f64).cos()).collect()
    }

    #[test]
    fn identical_and_negated_series() {
        let a = wave(50, 0.3, 0.1);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let cw = rolling_correlations(&nr(vec![a.clone(), a.clone(), neg]), 10, 1).unwrap();
        for v in &cw.vectors {
            assert!((v.values[0] - 1.0).abs() < 1e-12);
            assert!((v.values[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_count_and_dates() {
        let data = vec![wave(100, 0.3, 0.0), wave(100, 0.7, 1.0)];
        let cw = rolling_correlations(&nr(data.clone()), 42, 1).unwrap();
        assert_eq!(cw.len(), 59);
        assert_eq!(cw.vectors[0].date, "41");
        let cw = rolling_correlations(&nr(data), 42, 5).unwrap();
        assert_eq!(cw.len(), (100 - 42) / 5 + 1);
        assert_eq!(cw.vectors[1].date, "46");
    }

    #[test]
    fn matches_direct_pearson() {
        let data = vec![wave(80, 0.3, 0.0), wave(80, 0.71, 1.0), wave(80, 0.13, 2.0)];
        let cw = rolling_correlations(&nr(data.clone()), 20, 3).unwrap();
        for (w, v) in cw.vectors.iter().enumerate() {
            let s = w * 3;
            let m = cw.matrix(w);
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == j { 1.0 } else { pearson_oracle(&data[i][s..s + 20], &data[j][s..s + 20]) };
                    assert!((m.get(i, j) - expected).abs() < 1e-10);
                }
            }
            assert_eq!(v.dim(), 3);
        }
    }

    #[test]
    fn zero_variance_instrument_is_flagged() {
        let data = vec![wave(30, 0.3, 0.0), vec![0.5; 30], wave(30, 0.9, 0.4)];
        let cw = rolling_correlations(&nr(data), 10, 1).unwrap();
        assert_eq!(cw.degenerate.len(), cw.len());
        let m = cw.matrix(0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!(m.get(1, 1), 1.0);
    }

    #[test]
    fn short_input_is_an_error() {
        let data = vec![wave(10, 0.3, 0.0), wave(10, 0.5, 0.0)];
        assert!(matches!(
            rolling_correlations(&nr(data.clone()), 42, 1),
            Err(Error::InsufficientData { .. })
        ));
        assert!(rolling_correlations(&nr(data), 5, 0).is_err());
    }

    #[test]
    fn mean_correlation_examples() {
        let c = CorrelationMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(matrix_mean_correlation(&c), 0.5);
        assert_eq!(matrix_mean_correlation(&CorrelationMatrix::identity(7)), 0.0);
        assert!((matrix_mean_correlation(&equicorrelated(10, 0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn flatten_examples() {
        let c = CorrelationMatrix::new(3, vec![1.0, 0.1, 0.2, 0.1, 1.0, 0.3, 0.2, 0.3, 1.0]).unwrap();
        let v = flatten(&c, "x");
        assert_eq!(v.values, vec![0.1, 0.2, 0.3]);
        assert_eq!(v.to_matrix().unwrap(), c);
        assert_eq!(flatten(&CorrelationMatrix::identity(4), "").values, vec![0.0; 6]);
    }

    #[test]
    fn flatten_rejects_asymmetric() {
        let err = flatten_checked(2, vec![1.0, 0.5, 0.4, 1.0], "x").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn distance_examples() {
        let a = CorrelationVector { date: "a".into(), values: vec![0.0; 4] };
        let b = CorrelationVector { date: "b".into(), values: vec![1.0; 4] };
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
        assert_eq!(distance(&a, &b).unwrap(), 1.0);
        let c = CorrelationVector { date: "c".into(), values: vec![1.0; 3] };
        assert!(matches!(distance(&a, &c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matrix_dim_roundtrip() {
        for k in 2..50 {
            assert_eq!(matrix_dim(vector_len(k)), Some(k));
        }
        assert_eq!(vector_len(307), 46971);
        assert_eq!(matrix_dim(5), None);
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(-1.0f64..1.0, 6),
            b in prop::collection::vec(-1.0f64..1.0, 6),
            c in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let dab = normalized_distance(&a, &b).unwrap();
            let dac = normalized_distance(&a, &c).unwrap();
            let dcb = normalized_distance(&c, &b).unwrap();
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert_eq!(dab, normalized_distance(&b, &a).unwrap());
        }

        #[test]
        fn windows_are_valid_correlation_matrices(seed in 0u64..1000) {
            let data: Vec<Vec<f64>> = (0..5)
                .map(|i| wave(60, 0.1 + 0.37 * i as f64 + seed as f64 * 1e-3, seed as f64))
                .collect();
            let cw = rolling_correlations(&nr(data), 12, 1).unwrap();
            for v in &cw.vectors {
                let m = v.to_matrix().unwrap();
                prop_assert!(v.values.iter().all(|c| (-1.0..=1.0).contains(c)));
                prop_assert!((v.mean() - matrix_mean_correlation(&m)).abs() < 1e-14);
            }
        }
    }
}
