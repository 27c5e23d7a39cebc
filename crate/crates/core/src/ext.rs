//! Small dense linear algebra in double-double arithmetic.
//!
//! Only what the certificate and determinant checks need: determinants by
//! partially pivoted elimination and linear solves with complete pivoting.
//! Matrices are row-major `Vec<Vec<Quad>>` and tiny (at most a few dozen rows).

use qd::Quad;

/// Unit roundoff of double-double arithmetic (about 106 significant bits).
pub const DD_EPS: f64 = 1.232_595_164_407_831e-32; // 2^-106

pub fn qabs(x: Quad) -> Quad {
    if x.0 < 0.0 {
        -x
    } else {
        x
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut a: Vec<Vec<Quad>>) -> Quad {
    let n = a.len();
    let mut det = Quad::ONE;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| qabs(a[i][k]).0.total_cmp(&qabs(a[j][k]).0))
            .expect("non-empty range");
        if a[p][k].0 == 0.0 {
            return Quad::ZERO;
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        let pivot = a[k][k];
        det *= pivot;
        for i in k + 1..n {
            let f = a[i][k] / pivot;
            if f.0 == 0.0 {
                continue;
            }
            for j in k + 1..n {
                let v = a[k][j];
                a[i][j] -= f * v;
            }
        }
    }
    det
}

/// Hadamard bound `Π_i ‖row_i‖₂ ≥ |det A|`, in `f64`.
pub fn hadamard_bound(a: &[Vec<Quad>]) -> f64 {
    a.iter()
        .map(|row| row.iter().map(|x| x.0 * x.0).sum::<f64>().sqrt())
        .product()
}

/// Solves `A x = b` with complete pivoting. Returns `None` for an exactly
/// singular pivot.
pub fn solve(mut a: Vec<Vec<Quad>>, mut b: Vec<Quad>) -> Option<Vec<Quad>> {
    let n = a.len();
    let mut col_perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pi, mut pj, mut best) = (k, k, -1.0);
        for (i, row) in a.iter().enumerate().skip(k) {
            for (j, v) in row.iter().enumerate().skip(k) {
                let m = v.0.abs();
                if m > best {
                    best = m;
                    pi = i;
                    pj = j;
                }
            }
        }
        if best <= 0.0 {
            return None;
        }
        a.swap(k, pi);
        b.swap(k, pi);
        if pj != k {
            for row in a.iter_mut() {
                row.swap(k, pj);
            }
            col_perm.swap(k, pj);
        }
        let pivot = a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / pivot;
            if f.0 == 0.0 {
                continue;
            }
            for j in k..n {
                let v = a[k][j];
                a[i][j] -= f * v;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut y = vec![Quad::ZERO; n];
    for k in (0..n).rev() {
        let mut acc = b[k];
        for j in k + 1..n {
            acc -= a[k][j] * y[j];
        }
        y[k] = acc / a[k][k];
    }
    let mut x = vec![Quad::ZERO; n];
    for (k, &c) in col_perm.iter().enumerate() {
        x[c] = y[k];
    }
    Some(x)
}

pub fn to_quad(a: &[Vec<f64>]) -> Vec<Vec<Quad>> {
    a.iter().map(|r| r.iter().map(|&x| Quad::from(x)).collect()).collect()
}
