//! Principal component analysis over zone-distribution vectors and 1-D
//! Gaussian kernel density estimation.

use serde::Serialize;
use thiserror::Error;

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop, relative to the
/// matrix norm when that exceeds one.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

pub const DEFAULT_DOMINANCE_RATIO: f64 = 2.0;
pub const KDE_GRID_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("need at least {needed} inputs, have {have}")]
    TooFew { needed: usize, have: usize },
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("data has no spread")]
    DegenerateData,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }

    fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sample covariance with the 1/n convention, and the column means.
    pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, SymMatrix) {
        let n = rows.len() as f64;
        let k = rows[0].len();
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = SymMatrix::zeros(k);
        for r in rows {
            for i in 0..k {
                let di = r[i] - mean[i];
                for j in i..k {
                    cov.data[i * k + j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..k {
            for j in i..k {
                let v = cov.get(i, j) / n;
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
        (mean, cov)
    }
}

/// Eigenvalues and eigenvectors (as columns of `vectors`, row-major) of a
/// symmetric matrix by cyclic Jacobi rotations.
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn jacobi_eigen(matrix: &SymMatrix, tolerance: f64) -> Eigen {
    let n = matrix.dim();
    let mut a = matrix.clone();
    let mut v = SymMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let threshold = tolerance * matrix.frobenius_norm().max(1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if a.off_diagonal_norm() < threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J on rows/columns p and q
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Eigen {
        values: (0..n).map(|i| a.get(i, i)).collect(),
        vectors: (0..n).map(|j| (0..n).map(|i| v.get(i, j)).collect()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// PCA by eigendecomposition of the 1/n sample covariance.
pub fn fit_pca(vectors: &[Vec<f64>]) -> Result<PcaModel, NumericsError> {
    if vectors.len() < 2 {
        return Err(NumericsError::TooFew {
            needed: 2,
            have: vectors.len(),
        });
    }
    let k = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != k) {
        return Err(NumericsError::DimensionMismatch {
            expected: k,
            found: bad.len(),
        });
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(NumericsError::DegenerateData);
    }
    let (mean, cov) = SymMatrix::covariance(vectors);
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(NumericsError::DegenerateData);
    }
    let eig = jacobi_eigen(&cov, JACOBI_TOLERANCE);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));
    let explained_variance: Vec<f64> = order.iter().map(|&i| eig.values[i].max(0.0)).collect();
    let components = order
        .iter()
        .map(|&i| {
            let mut c = eig.vectors[i].clone();
            canonical_sign(&mut c);
            c
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_ratio: explained_variance.iter().map(|v| v / trace).collect(),
        explained_variance,
    })
}

impl PcaModel {
    /// Coordinates of `vector` on the first `dims` components.
    pub fn project(&self, vector: &[f64], dims: usize) -> Result<Vec<f64>, NumericsError> {
        if vector.len() != self.mean.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.mean.len(),
                found: vector.len(),
            });
        }
        if dims > self.components.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.components.len(),
                found: dims,
            });
        }
        let centered: Vec<f64> = vector.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.components[..dims].iter().map(|c| dot(&centered, c)).collect())
    }

    /// Maps component coordinates back into the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, comp) in coords.iter().zip(&self.components) {
            for (o, x) in out.iter_mut().zip(comp) {
                *o += c * x;
            }
        }
        out
    }
}

/// The coordinate with the largest |loading| when it is at least
/// `dominance_ratio` times the runner-up.
pub fn dominant_coordinate(component: &[f64], dominance_ratio: f64) -> Option<(usize, f64)> {
    let mut first: Option<usize> = None;
    let mut second = 0.0f64;
    for (i, x) in component.iter().enumerate() {
        match first {
            Some(f) if x.abs() <= component[f].abs() => second = second.max(x.abs()),
            Some(f) => {
                second = second.max(component[f].abs());
                first = Some(i);
            }
            None => first = Some(i),
        }
    }
    let f = first?;
    let top = component[f].abs();
    (top > 0.0 && top >= dominance_ratio * second).then_some((f, component[f]))
}

/// Linear-interpolation quantile (the "type 7" definition) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, with
/// the n-1 standard deviation. Falls back to whichever spread is non-zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, NumericsError> {
    if samples.len() < 2 {
        return Err(NumericsError::TooFew {
            needed: 2,
            have: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return Err(NumericsError::DegenerateData),
    };
    Ok(0.9 * spread * n.powf(-0.2))
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(samples: Vec<f64>, bandwidth: f64) -> Result<Self, NumericsError> {
        if samples.is_empty() {
            return Err(NumericsError::TooFew { needed: 1, have: 0 });
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(NumericsError::BadBandwidth(bandwidth));
        }
        Ok(KdeModel { samples, bandwidth })
    }

    /// Uses the Silverman bandwidth.
    pub fn with_silverman(samples: Vec<f64>) -> Result<Self, NumericsError> {
        let h = silverman_bandwidth(&samples)?;
        KdeModel::new(samples, h)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self.samples.iter().map(|s| std_normal_pdf((x - s) / h)).sum();
        s / (self.samples.len() as f64 * h)
    }

    /// `points` evenly spaced evaluations from `min - 3h` to `max + 3h`.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64)> {
        let lo = self.samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * self.bandwidth;
        let hi = self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * self.bandwidth;
        let step = (hi - lo) / (points.max(2) - 1) as f64;
        (0..points)
            .map(|i| {
                let x = lo + step * i as f64;
                (x, self.evaluate(x))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn variance_on_one_axis() {
        let m = fit_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.components[0], vec![1.0, 0.0]);
        assert!(close(m.explained_ratio[0], 1.0, 1e-15) && close(m.explained_ratio[1], 0.0, 1e-15));
    }

    #[test]
    fn diagonal_covariance_ratios() {
        // covariance diag(0.5, 0.125): eigenvalues 0.5, 0.125; ratios 0.8, 0.2
        let m = fit_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.5], vec![0.0, -0.5]]).unwrap();
        assert!(close(m.explained_variance[0], 0.5, 1e-15));
        assert!(close(m.explained_variance[1], 0.125, 1e-15));
        assert!(close(m.explained_ratio[0], 0.8, 1e-15));
        assert!(close(m.explained_ratio[1], 0.2, 1e-15));
        assert_eq!(m.components, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            fit_pca(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(NumericsError::DegenerateData)
        );
        assert!(matches!(fit_pca(&[vec![1.0]]), Err(NumericsError::TooFew { .. })));
        assert!(matches!(
            fit_pca(&[vec![1.0], vec![1.0, 2.0]]),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection() {
        let m = fit_pca(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.5], vec![0.0, -0.5]]).unwrap();
        assert_eq!(m.project(&m.mean, 2).unwrap(), vec![0.0, 0.0]);
        let v: Vec<f64> = m.mean.iter().zip(&m.components[0]).map(|(a, b)| a + b).collect();
        assert_eq!(m.project(&v, 2).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            m.project(&[0.0, 0.0, 0.0], 2),
            Err(NumericsError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.project(&[0.0, 0.0], 3),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dominance() {
        let mut c = vec![0.95, 0.2, 0.1];
        c.extend([0.0; 6]);
        assert_eq!(dominant_coordinate(&c, 2.0), Some((0, 0.95)));
        assert_eq!(dominant_coordinate(&[0.7, 0.7, 0.0], 2.0), None);
        assert_eq!(dominant_coordinate(&[0.0, 0.0, 1.0], 2.0), Some((2, 1.0)));
        assert_eq!(dominant_coordinate(&[0.1, -0.9, 0.3], 2.0), Some((1, -0.9)));
        assert_eq!(dominant_coordinate(&[0.0, 0.0], 2.0), None);
    }

    #[test]
    fn silverman_two_points() {
        // 0.9 * min(sqrt(1/2), 0.5/1.34) * 2^(-1/5), evaluated with 30-digit arithmetic
        let h = silverman_bandwidth(&[0.0, 1.0]).unwrap();
        assert!(close(h, 0.292_349_069_763_623_8, 1e-15), "{h}");
        assert_eq!(
            silverman_bandwidth(&[3.0, 3.0, 3.0]),
            Err(NumericsError::DegenerateData)
        );
    }

    #[test]
    fn silverman_is_homogeneous() {
        let xs = [0.3, 1.7, 2.2, 5.0, 5.1, 9.4];
        let h = silverman_bandwidth(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * 4.0).collect();
        assert!(close(silverman_bandwidth(&scaled).unwrap(), 4.0 * h, 1e-12));
    }

    #[test]
    fn kde_spot_values() {
        let k = KdeModel::new(vec![0.0], 1.0).unwrap();
        assert!(close(k.evaluate(0.0), 0.398_942_280_401_432_7, 1e-15));
        assert!(close(k.evaluate(1.0), 0.241_970_724_519_143_3, 1e-15));
        let k2 = KdeModel::new(vec![-1.0, 1.0], 1.0).unwrap();
        // direct sum: (phi(1) + phi(-1)) / 2
        assert!(close(k2.evaluate(0.0), 0.241_970_724_519_143_3, 1e-15));
        assert!(KdeModel::new(vec![], 1.0).is_err());
        assert!(KdeModel::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn kde_curve_grid() {
        let k = KdeModel::new(vec![0.0, 2.0], 0.5).unwrap();
        let c = k.curve(KDE_GRID_POINTS);
        assert_eq!(c.len(), 256);
        assert!(close(c[0].0, -1.5, 1e-12) && close(c[255].0, 3.5, 1e-12));
    }

    fn dataset() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 3..40)
    }

    proptest! {
        #[test]
        fn pca_invariants(data in dataset(), shift in prop::collection::vec(-100.0f64..100.0, 4)) {
            let Ok(m) = fit_pca(&data) else { return Ok(()) };
            let (_, cov) = SymMatrix::covariance(&data);
            prop_assert!((m.explained_variance.iter().sum::<f64>() - cov.trace()).abs() < 1e-9);
            for w in m.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            for (i, a) in m.components.iter().enumerate() {
                for (j, b) in m.components.iter().enumerate() {
                    let d = dot(a, b);
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((d - want).abs() < 1e-9);
                }
            }
            for v in &data {
                let r = m.reconstruct(&m.project(v, 4).unwrap());
                for (a, b) in r.iter().zip(v) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
            let moved: Vec<Vec<f64>> = data.iter().map(|v| v.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let m2 = fit_pca(&moved).unwrap();
            for (a, b) in m.explained_ratio.iter().zip(&m2.explained_ratio) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // components are compared only where the spectrum is well separated
            for i in 0..4 {
                let gap = (0..4).filter(|&j| j != i)
                    .map(|j| (m.explained_variance[i] - m.explained_variance[j]).abs())
                    .fold(f64::INFINITY, f64::min);
                if gap > 1e-3 {
                    for (a, b) in m.components[i].iter().zip(&m2.components[i]) {
                        prop_assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }

        #[test]
        fn kde_is_a_density(samples in prop::collection::vec(-50.0f64..50.0, 2..30)) {
            let Ok(k) = KdeModel::with_silverman(samples.clone()) else { return Ok(()) };
            let h = k.bandwidth();
            // every kernel integrated over its own mean +/- 8h
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * h;
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * h;
            let step = h / 50.0;
            let n = ((hi - lo) / step).ceil() as usize;
            let mut area = 0.0;
            let mut prev = k.evaluate(lo);
            for i in 1..=n {
                let y = k.evaluate(lo + step * i as f64);
                prop_assert!(y >= 0.0);
                area += 0.5 * (prev + y) * step;
                prev = y;
            }
            prop_assert!((area - 1.0).abs() < 1e-3);
        }
    }
}
