//! Small least-squares solver that drops collinear columns instead of failing.

/// Result of a rank-revealing least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    /// One coefficient per input column; dropped columns get 0.
    pub coefficients: Vec<f64>,
    pub kept: Vec<bool>,
    pub rss: f64,
}

impl LinearSolution {
    pub fn rank(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

const RELATIVE_TOLERANCE: f64 = 1e-9;

/// Fit `y ~ X b` by modified Gram-Schmidt. Columns are tried in the given
/// order; a column whose orthogonalised norm falls below a relative
/// tolerance of its original norm is dropped.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> LinearSolution {
    let n = y.len();
    let p = columns.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut r = vec![vec![0.0; p]; p];
    let mut kept = vec![false; p];
    let mut order = Vec::with_capacity(p);
    for (j, col) in columns.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let norm0 = norm(col);
        if norm0 == 0.0 || q.len() == n {
            continue;
        }
        let mut v = col.clone();
        let mut coeffs = Vec::with_capacity(q.len());
        for qk in &q {
            let c = dot(qk, &v);
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= c * qi;
            }
            coeffs.push(c);
        }
        let nv = norm(&v);
        if nv <= RELATIVE_TOLERANCE * norm0 {
            continue;
        }
        for vi in &mut v {
            *vi /= nv;
        }
        let k = q.len();
        for (i, c) in coeffs.into_iter().enumerate() {
            r[i][k] = c;
        }
        r[k][k] = nv;
        q.push(v);
        kept[j] = true;
        order.push(j);
    }

    let mut resid = y.to_vec();
    let mut qty = Vec::with_capacity(q.len());
    for qk in &q {
        let c = dot(qk, &resid);
        for (ri, qi) in resid.iter_mut().zip(qk) {
            *ri -= c * qi;
        }
        qty.push(c);
    }
    let m = q.len();
    let mut beta = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|k| r[i][k] * beta[k]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }
    let mut coefficients = vec![0.0; p];
    for (i, &j) in order.iter().enumerate() {
        coefficients[j] = beta[i];
    }
    LinearSolution {
        coefficients,
        kept,
        rss: resid.iter().map(|e| e * e).sum(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
