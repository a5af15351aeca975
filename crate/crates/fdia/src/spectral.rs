//! Normalized graph Laplacian, spectral scaling, and the K-localized
//! Chebyshev filter, plus a dense spectral-domain reference used as a test
//! oracle.

use crate::grid::WeightedGraph;
use crate::sparse::CsrReal;
use crate::{FdiaError, Result};
use std::sync::atomic::{AtomicU64, Ordering};

/// L = I - D^{-1/2} W D^{-1/2}; symmetric, eigenvalues in [0, 2].
#[derive(Debug, Clone)]
pub struct NormalizedLaplacian {
    pub n: usize,
    pub matrix: CsrReal,
}

/// L~ = 2L/lambda_max - I; eigenvalues in [-1, 1] when lambda_max is exact.
/// Matvecs through [`ScaledLaplacian::matvec`] are counted, so tests can
/// assert the filter recursion does exactly the advertised amount of work.
#[derive(Debug)]
pub struct ScaledLaplacian {
    pub n: usize,
    pub matrix: CsrReal,
    pub lambda_max: f64,
    matvecs: AtomicU64,
}

impl Clone for ScaledLaplacian {
    fn clone(&self) -> Self {
        ScaledLaplacian {
            n: self.n,
            matrix: self.matrix.clone(),
            lambda_max: self.lambda_max,
            matvecs: AtomicU64::new(0),
        }
    }
}

impl ScaledLaplacian {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        self.matrix.matvec(x, y);
    }

    pub fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    pub fn reset_matvec_count(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }
}

/// Chebyshev coefficient vector; the filter order K is its length.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoeffs(pub Vec<f64>);

impl ChebCoeffs {
    pub fn order(&self) -> usize {
        self.0.len()
    }
}

pub fn normalized_laplacian(graph: &WeightedGraph) -> Result<NormalizedLaplacian> {
    let n = graph.n;
    for (i, &d) in graph.degrees.iter().enumerate() {
        if d <= 0.0 {
            return Err(FdiaError::Validation(format!(
                "vertex {i} has zero degree, D^(-1/2) undefined"
            )));
        }
    }
    let mut triplets = Vec::with_capacity(graph.weights.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, 1.0));
        for (j, w) in graph.weights.row(i) {
            if w != 0.0 {
                triplets.push((i, j, -w / (graph.degrees[i] * graph.degrees[j]).sqrt()));
            }
        }
    }
    Ok(NormalizedLaplacian {
        n,
        matrix: CsrReal::from_triplets(n, n, triplets),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LambdaMaxEstimate {
    pub value: f64,
    /// True when power iteration did not converge and the analytic bound 2.0
    /// was used instead.
    pub fallback: bool,
}

/// Dominant eigenvalue of the (positive semi-definite) normalized Laplacian
/// by power iteration from a deterministic start vector. Stops when the
/// eigen-residual drops below `tol` relative to the current estimate, which
/// for a symmetric matrix bounds the eigenvalue error by the same amount.
pub fn estimate_lambda_max(l: &NormalizedLaplacian, tol: f64) -> LambdaMaxEstimate {
    use rand::{Rng, SeedableRng};
    let n = l.n;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xFD1A_10A7);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let max_iter = 200_000;
    for _ in 0..max_iter {
        l.matrix.matvec(&x, &mut y);
        let lambda: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let residual: f64 = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - lambda * xi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda.max(1e-12) {
            return LambdaMaxEstimate {
                value: lambda.min(2.0 + tol),
                fallback: false,
            };
        }
        std::mem::swap(&mut x, &mut y);
        normalize(&mut x);
    }
    LambdaMaxEstimate {
        value: 2.0,
        fallback: true,
    }
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

pub fn scale_laplacian(l: &NormalizedLaplacian, lambda_max: f64) -> Result<ScaledLaplacian> {
    if lambda_max <= 0.0 {
        return Err(FdiaError::Validation(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    let n = l.n;
    let mut triplets = Vec::with_capacity(l.matrix.nnz() + n);
    for i in 0..n {
        for (j, v) in l.matrix.row(i) {
            triplets.push((i, j, 2.0 * v / lambda_max));
        }
        triplets.push((i, i, -1.0));
    }
    Ok(ScaledLaplacian {
        n,
        matrix: CsrReal::from_triplets(n, n, triplets),
        lambda_max,
        matvecs: AtomicU64::new(0),
    })
}

/// Chebyshev polynomial of the first kind by the three-term recursion.
pub fn cheb_eval_scalar(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for _ in 2..=k {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// y = sum_k theta_k xbar_k with xbar_0 = x, xbar_1 = L~ x, and
/// xbar_k = 2 L~ xbar_{k-1} - xbar_{k-2}. Exactly K-1 matvecs.
pub fn cheb_filter_apply(
    lap: &ScaledLaplacian,
    theta: &ChebCoeffs,
    x: &[f64],
) -> Result<Vec<f64>> {
    let k = theta.order();
    if k < 1 {
        return Err(FdiaError::Config("filter order K must be at least 1".into()));
    }
    if x.len() != lap.n {
        return Err(FdiaError::Dimension(format!(
            "signal length {} vs graph size {}",
            x.len(),
            lap.n
        )));
    }
    let n = lap.n;
    let mut y: Vec<f64> = x.iter().map(|&v| theta.0[0] * v).collect();
    if k == 1 {
        return Ok(y);
    }
    let mut prev = x.to_vec();
    let mut cur = vec![0.0; n];
    lap.matvec(x, &mut cur);
    for (yi, &ci) in y.iter_mut().zip(&cur) {
        *yi += theta.0[1] * ci;
    }
    let mut next = vec![0.0; n];
    for order in 2..k {
        lap.matvec(&cur, &mut next);
        for i in 0..n {
            next[i] = 2.0 * next[i] - prev[i];
            y[i] += theta.0[order] * next[i];
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(y)
}

/// Cap on the dense test-only paths below, to keep them oracles rather than
/// a tempting production shortcut.
pub const DENSE_ORACLE_CAP: usize = 256;

/// Eigenvalues of the normalized Laplacian via a dense symmetric
/// eigendecomposition. Test oracle; refuses n > 256.
pub fn dense_spectrum(l: &NormalizedLaplacian) -> Result<Vec<f64>> {
    let eig = dense_eigen(l)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(vals)
}

fn dense_eigen(l: &NormalizedLaplacian) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    if l.n > DENSE_ORACLE_CAP {
        return Err(FdiaError::Config(format!(
            "dense spectral oracle capped at n={DENSE_ORACLE_CAP}, got n={}",
            l.n
        )));
    }
    let mut m = nalgebra::DMatrix::<f64>::zeros(l.n, l.n);
    for i in 0..l.n {
        for (j, v) in l.matrix.row(i) {
            m[(i, j)] = v;
        }
    }
    Ok(nalgebra::SymmetricEigen::new(m))
}

/// Spectral-domain reference filter: y = U g(Lambda) U^T x with
/// g(lambda) = sum_k theta_k T_k(2 lambda / lambda_max - 1), lambda_max taken
/// exactly from the dense decomposition. Test oracle; refuses n > 256.
pub fn spectral_filter_reference(
    l: &NormalizedLaplacian,
    theta: &ChebCoeffs,
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != l.n {
        return Err(FdiaError::Dimension(format!(
            "signal length {} vs graph size {}",
            x.len(),
            l.n
        )));
    }
    let eig = dense_eigen(l)?;
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
    spectral_filter_with(&eig, lambda_max, theta, x)
}

/// Same reference filter but with an explicit lambda_max, so tests can use
/// the same scaling on both the recursion path and the spectral path.
pub fn spectral_filter_reference_at(
    l: &NormalizedLaplacian,
    lambda_max: f64,
    theta: &ChebCoeffs,
    x: &[f64],
) -> Result<Vec<f64>> {
    let eig = dense_eigen(l)?;
    spectral_filter_with(&eig, lambda_max, theta, x)
}

fn spectral_filter_with(
    eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
    lambda_max: f64,
    theta: &ChebCoeffs,
    x: &[f64],
) -> Result<Vec<f64>> {
    let n = x.len();
    let xv = nalgebra::DVector::from_column_slice(x);
    let xt = eig.eigenvectors.transpose() * &xv;
    let mut yt = nalgebra::DVector::zeros(n);
    for i in 0..n {
        let scaled = 2.0 * eig.eigenvalues[i] / lambda_max - 1.0;
        let g: f64 = theta
            .0
            .iter()
            .enumerate()
            .map(|(k, &t)| t * cheb_eval_scalar(k, scaled))
            .sum();
        yt[i] = g * xt[i];
    }
    let y = &eig.eigenvectors * yt;
    Ok(y.iter().copied().collect())
}

/// Exact dominant eigenvalue from the dense oracle (n <= 256).
pub fn exact_lambda_max(l: &NormalizedLaplacian) -> Result<f64> {
    Ok(dense_spectrum(l)?.last().copied().unwrap_or(0.0))
}
