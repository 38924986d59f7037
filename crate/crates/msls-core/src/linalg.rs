//! Dense linear-algebra primitives for the small problems this crate solves:
//! least squares over a handful of selected atoms and eigendecomposition of
//! Gram matrices up to a few hundred rows. Hand-rolled on `Vec<f64>` to keep
//! the dependency surface minimal.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `min_w ||y - B w||` where `B` has the given columns, via modified
/// Gram-Schmidt QR with one reorthogonalization pass. Columns are expected to
/// be linearly independent (the caller never selects the same atom twice);
/// a numerically dependent column gets a zero coefficient instead of blowing
/// up.
pub fn least_squares(columns: &[&[f64]], y: &[f64]) -> Vec<f64> {
    let m = columns.len();
    if m == 0 {
        return Vec::new();
    }
    let n = y.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];

    for (j, col) in columns.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let mut v = col.to_vec();
        for pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                if pass == 0 {
                    r[i][j] = c;
                } else {
                    r[i][j] += c;
                }
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= c * qk;
                }
            }
        }
        let nv = norm(&v);
        r[j][j] = nv;
        if nv > 0.0 {
            for vk in v.iter_mut() {
                *vk /= nv;
            }
        }
        q.push(v);
    }

    // w = R^{-1} Q^T y by back substitution.
    let qty: Vec<f64> = q.iter().map(|qi| dot(qi, y)).collect();
    let mut w = vec![0.0; m];
    for i in (0..m).rev() {
        if r[i][i] == 0.0 {
            w[i] = 0.0;
            continue;
        }
        let mut s = qty[i];
        for j in (i + 1)..m {
            s -= r[i][j] * w[j];
        }
        w[i] = s / r[i][i];
    }
    w
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// `eigenvectors[i]` is the unit eigenvector for `eigenvalues[i]`.
pub fn symmetric_eigen(mat: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    if n <= 1 {
        let vals = if n == 1 { vec![a[0][0]] } else { vec![] };
        return (vals, v);
    }

    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|x| x.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = 1e-14 * scale;

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[i][j].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[p][p];
                let aqq = a[q][q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    (values, vectors)
}
