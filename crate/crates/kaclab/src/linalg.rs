//! Dense kernels for the small matrices this crate works with.
//!
//! Dimensions here are tiny (n is rarely above 10, and the N×N Gram
//! matrices top out around a few dozen rows), so simple O(n³) algorithms
//! with good numerical behaviour beat an external LAPACK binding: cyclic
//! Jacobi for symmetric eigenvalues, one-sided Jacobi for singular values
//! (accurate even for tiny σ, which the rank tests need), Householder QR,
//! LU with partial pivoting, and a Newton iteration for the orthogonal
//! polar factor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Frobenius norm.
pub fn fro_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ‖AᵀA − I‖_F, the orthogonality defect.
pub fn orthogonality_defect(a: ArrayView2<f64>) -> f64 {
    let g = a.t().dot(&a);
    let n = g.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = g[[i, j]] - if i == j { 1.0 } else { 0.0 };
            s += d * d;
        }
    }
    s.sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi, ascending.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigenvalues needs a square matrix");
    let mut m = a.to_owned();
    let scale = fro_norm(m.view()).max(1.0);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    eig
}

/// Singular values by one-sided Jacobi, ascending.
///
/// Orthogonalizes the columns of the (possibly rectangular) input by plane
/// rotations; the singular values are the final column norms. Small singular
/// values come out with high relative accuracy, unlike the eigenvalues of
/// AᵀA.
pub fn singular_values(a: ArrayView2<f64>) -> Vec<f64> {
    let work = if a.nrows() >= a.ncols() {
        a.to_owned()
    } else {
        a.t().to_owned()
    };
    let mut m = work;
    let k = m.ncols();
    if k == 0 {
        return Vec::new();
    }
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..m.nrows() {
                    let x = m[[r, p]];
                    let y = m[[r, q]];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= 1e-16 * (app * aqq).sqrt() + 1e-300 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..m.nrows() {
                    let x = m[[r, p]];
                    let y = m[[r, q]];
                    m[[r, p]] = c * x - s * y;
                    m[[r, q]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..k)
        .map(|j| {
            (0..m.nrows())
                .map(|r| m[[r, j]] * m[[r, j]])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    sv.sort_by(|x, y| x.partial_cmp(y).expect("finite singular values"));
    sv
}

/// LU decomposition with partial pivoting. Returns (LU, pivots, sign).
fn lu_factor(a: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>, f64) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lu_factor needs a square matrix");
    let mut lu = a.to_owned();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu[[col, col]].abs();
        for r in (col + 1)..n {
            let v = lu[[r, col]].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                let tmp = lu[[col, c]];
                lu[[col, c]] = lu[[pivot, c]];
                lu[[pivot, c]] = tmp;
            }
            piv.swap(col, pivot);
            sign = -sign;
        }
        let d = lu[[col, col]];
        if d == 0.0 {
            continue;
        }
        for r in (col + 1)..n {
            let f = lu[[r, col]] / d;
            lu[[r, col]] = f;
            for c in (col + 1)..n {
                lu[[r, c]] -= f * lu[[col, c]];
            }
        }
    }
    (lu, piv, sign)
}

/// Determinant via LU.
pub fn determinant(a: ArrayView2<f64>) -> f64 {
    let (lu, _, sign) = lu_factor(a);
    let mut det = sign;
    for i in 0..lu.nrows() {
        det *= lu[[i, i]];
    }
    det
}

/// Log-absolute determinant and sign via LU; robust when the determinant
/// under- or overflows f64.
pub fn log_abs_determinant(a: ArrayView2<f64>) -> (f64, f64) {
    let (lu, _, sign) = lu_factor(a);
    let mut log_abs = 0.0;
    let mut sgn = sign;
    for i in 0..lu.nrows() {
        let d = lu[[i, i]];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        log_abs += d.abs().ln();
        sgn *= d.signum();
    }
    (log_abs, sgn)
}

/// Solve A x = b via LU. `None` when a pivot vanishes.
pub fn solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let (lu, piv, _) = lu_factor(a);
    for i in 0..n {
        if lu[[i, i]] == 0.0 {
            return None;
        }
    }
    let mut x = Array1::zeros(n);
    for i in 0..n {
        x[i] = b[piv[i]];
    }
    for i in 0..n {
        for j in 0..i {
            let xj = x[j];
            x[i] -= lu[[i, j]] * xj;
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            let xj = x[j];
            x[i] -= lu[[i, j]] * xj;
        }
        x[i] /= lu[[i, i]];
    }
    Some(x)
}

/// Inverse via LU column solves. `None` when singular.
pub fn inverse(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::zeros(n);
        e[j] = 1.0;
        let col = solve(a, e.view())?;
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    Some(out)
}

/// Householder QR of a square matrix. Returns (Q, R) with Q orthogonal.
pub fn qr_square(a: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr_square needs a square matrix");
    let mut r = a.to_owned();
    let mut q = Array2::eye(n);
    for col in 0..n.saturating_sub(1) {
        let mut norm = 0.0;
        for i in col..n {
            norm += r[[i, col]] * r[[i, col]];
        }
        let norm = norm.sqrt();
        if norm <= 1e-300 {
            continue;
        }
        let alpha = if r[[col, col]] >= 0.0 { -norm } else { norm };
        let mut v = Array1::zeros(n);
        for i in col..n {
            v[i] = r[[i, col]];
        }
        v[col] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 <= 1e-300 {
            continue;
        }
        // r <- (I - 2vvᵀ/‖v‖²) r ;  q <- q (I - 2vvᵀ/‖v‖²)
        for c in 0..n {
            let mut dot = 0.0;
            for i in col..n {
                dot += v[i] * r[[i, c]];
            }
            let f = 2.0 * dot / vnorm2;
            for i in col..n {
                r[[i, c]] -= f * v[i];
            }
        }
        for rr in 0..n {
            let mut dot = 0.0;
            for i in col..n {
                dot += q[[rr, i]] * v[i];
            }
            let f = 2.0 * dot / vnorm2;
            for i in col..n {
                q[[rr, i]] -= f * v[i];
            }
        }
    }
    (q, r)
}

/// Orthogonal polar factor by Newton iteration X ← (X + X⁻ᵀ)/2.
///
/// Converges quadratically to the nearest orthogonal matrix when the input
/// is nonsingular and not too far from orthogonal. `None` when an iterate
/// becomes singular or the iteration fails to settle.
pub fn polar_orthogonal(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let mut x = a.to_owned();
    for _ in 0..40 {
        let defect = orthogonality_defect(x.view());
        if defect < 1e-15 {
            return Some(x);
        }
        let inv_t = inverse(x.t())?;
        x = (&x + &inv_t) * 0.5;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    if orthogonality_defect(x.view()) < 1e-13 {
        Some(x)
    } else {
        None
    }
}
